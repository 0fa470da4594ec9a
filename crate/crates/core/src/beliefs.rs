//! Posterior expected donor quality under the three information regimes.
//!
//! Under social learning a patient conditions on the event that every earlier
//! provisional-yes patient rejected. The likelihood of that event under each
//! quality is accumulated by a forward recursion, one rejecter at a time, with
//! each rejecter's own belief computed from the history before them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{log_add_exp, log_logistic_cdf, logistic_cdf, ModelParams, Signal};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("both history likelihoods underflowed; use the log-space posterior")]
    Underflow,
    #[error("operation is not defined under the {0} regime")]
    RegimeMisuse(InfoRegime),
    #[error("oracle refuses prefixes longer than {max} rejecters (got {got})")]
    OracleTooLong { max: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InfoRegime {
    SocialLearning,
    NoSocialLearning,
    InformationSharing,
}

impl InfoRegime {
    pub const ALL: [InfoRegime; 3] = [
        InfoRegime::SocialLearning,
        InfoRegime::NoSocialLearning,
        InfoRegime::InformationSharing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InfoRegime::SocialLearning => "social-learning",
            InfoRegime::NoSocialLearning => "no-social-learning",
            InfoRegime::InformationSharing => "info-sharing",
        }
    }
}

impl fmt::Display for InfoRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InfoRegime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "social-learning" | "sl" => Ok(InfoRegime::SocialLearning),
            "no-social-learning" | "no-sl" => Ok(InfoRegime::NoSocialLearning),
            "info-sharing" | "information-sharing" => Ok(InfoRegime::InformationSharing),
            other => Err(format!(
                "unknown regime `{other}` (expected social-learning | no-social-learning | info-sharing)"
            )),
        }
    }
}

/// Log-likelihood of the observed rejection history under each quality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeliefState {
    pub log_high: f64,
    pub log_low: f64,
    pub n_processed: usize,
}

impl Default for BeliefState {
    fn default() -> Self {
        BeliefState::empty()
    }
}

impl BeliefState {
    pub fn empty() -> BeliefState {
        BeliefState {
            log_high: 0.0,
            log_low: 0.0,
            n_processed: 0,
        }
    }

    pub fn like_high(&self) -> f64 {
        self.log_high.exp()
    }

    pub fn like_low(&self) -> f64 {
        self.log_low.exp()
    }
}

fn signal_log_odds(alpha: f64, signal: Signal) -> f64 {
    signal.value() * (alpha / (1.0 - alpha)).ln()
}

fn prior_log_odds(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `2q - 1` from the log-odds of high quality.
fn expected_quality(log_odds: f64) -> f64 {
    (0.5 * log_odds).tanh()
}

/// Linear-space Bayes update. Fails when both history likelihoods underflow.
pub fn posterior_from_signal(
    p: f64,
    alpha: f64,
    signal: Signal,
    state: &BeliefState,
) -> Result<f64, BeliefError> {
    let a = if signal == Signal::High {
        alpha
    } else {
        1.0 - alpha
    };
    let num = p * a * state.like_high();
    let den = num + (1.0 - p) * (1.0 - a) * state.like_low();
    if den == 0.0 || !den.is_finite() {
        return Err(BeliefError::Underflow);
    }
    Ok(2.0 * num / den - 1.0)
}

/// Same posterior computed from log-odds; never underflows.
pub fn posterior_log(p: f64, alpha: f64, signal: Signal, state: &BeliefState) -> f64 {
    expected_quality(
        prior_log_odds(p) + signal_log_odds(alpha, signal) + state.log_high - state.log_low,
    )
}

/// Posterior when every earlier provisional-yes signal is public.
pub fn posterior_shared(p: f64, alpha: f64, own_signal: Signal, earlier_signals: &[Signal]) -> f64 {
    let net: f64 = earlier_signals.iter().map(|s| s.value()).sum::<f64>() + own_signal.value();
    expected_quality(prior_log_odds(p) + net * (alpha / (1.0 - alpha)).ln())
}

/// Decision probabilities of one provisional-yes patient conditional on quality,
/// with the signal integrated out. All four values are logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionLogProbs {
    pub reject_high: f64,
    pub reject_low: f64,
    pub accept_high: f64,
    pub accept_low: f64,
}

/// `ln(w1 * F(x1) + w2 * F(x2))`, switching to log space only when the
/// linear sum is too small to represent accurately.
fn log_mix(w1: f64, x1: f64, w2: f64, x2: f64) -> f64 {
    let lin = w1 * logistic_cdf(x1) + w2 * logistic_cdf(x2);
    if lin > 1e-280 {
        lin.ln()
    } else {
        log_add_exp(
            w1.ln() + log_logistic_cdf(x1),
            w2.ln() + log_logistic_cdf(x2),
        )
    }
}

/// Thresholds `v(+1), v(-1)` for a patient with utility index `index` whose
/// belief is built on `state`.
pub fn thresholds(index: f64, params: &ModelParams, state: &BeliefState) -> (f64, f64) {
    let base = prior_log_odds(params.p) + state.log_high - state.log_low;
    let s = (params.alpha / (1.0 - params.alpha)).ln();
    (
        index + params.gamma * expected_quality(base + s),
        index + params.gamma * expected_quality(base - s),
    )
}

pub fn decision_log_probs(
    index: f64,
    params: &ModelParams,
    state: &BeliefState,
) -> DecisionLogProbs {
    let (v_hi, v_lo) = thresholds(index, params, state);
    let a = params.alpha;
    let b = 1.0 - a;
    DecisionLogProbs {
        reject_high: log_mix(a, -v_hi, b, -v_lo),
        reject_low: log_mix(b, -v_hi, a, -v_lo),
        accept_high: log_mix(a, v_hi, b, v_lo),
        accept_low: log_mix(b, v_hi, a, v_lo),
    }
}

/// Folds one provisional-yes rejection into the history likelihoods.
pub fn advance_history(
    state: &BeliefState,
    rejecter_index: f64,
    params: &ModelParams,
    regime: InfoRegime,
) -> Result<BeliefState, BeliefError> {
    match regime {
        InfoRegime::SocialLearning => {
            let d = decision_log_probs(rejecter_index, params, state);
            Ok(BeliefState {
                log_high: state.log_high + d.reject_high,
                log_low: state.log_low + d.reject_low,
                n_processed: state.n_processed + 1,
            })
        }
        InfoRegime::NoSocialLearning => Ok(*state),
        InfoRegime::InformationSharing => Err(BeliefError::RegimeMisuse(regime)),
    }
}

pub mod oracle {
    //! Exhaustive enumeration over signal vectors, for tests only.

    use super::*;
    use crate::model::Quality;

    pub const MAX_ORACLE_LEN: usize = 12;

    fn quality_prob(signal: Signal, quality: Quality, alpha: f64) -> f64 {
        signal.likelihood(quality, alpha)
    }

    fn signal_of(bits: usize, k: usize) -> Signal {
        if bits >> k & 1 == 1 {
            Signal::High
        } else {
            Signal::Low
        }
    }

    /// Belief of a patient with signal `own` whose public history is the
    /// rejection of everyone in `rejecters` (linear-space Bayes).
    pub fn enumerated_belief(rejecters: &[f64], own: Signal, params: &ModelParams) -> f64 {
        let beliefs = prefix_beliefs(rejecters, params);
        beliefs[rejecters.len()][signal_slot(own)]
    }

    fn signal_slot(s: Signal) -> usize {
        match s {
            Signal::High => 0,
            Signal::Low => 1,
        }
    }

    fn bayes(lh: f64, ll: f64, own: Signal, params: &ModelParams) -> f64 {
        let a = own.likelihood(Quality::High, params.alpha);
        let num = params.p * a * lh;
        let den = num + (1.0 - params.p) * (1.0 - a) * ll;
        2.0 * num / den - 1.0
    }

    /// Beliefs after each prefix `rejecters[..k]`, `k = 0..=n`, for both
    /// signals. Each prefix likelihood is a full sum over its signal vectors.
    fn prefix_beliefs(rejecters: &[f64], params: &ModelParams) -> Vec<[f64; 2]> {
        let mut beliefs: Vec<[f64; 2]> = Vec::with_capacity(rejecters.len() + 1);
        for k in 0..=rejecters.len() {
            let lh = enumerate(&rejecters[..k], &beliefs, Quality::High, params);
            let ll = enumerate(&rejecters[..k], &beliefs, Quality::Low, params);
            beliefs.push([
                bayes(lh, ll, Signal::High, params),
                bayes(lh, ll, Signal::Low, params),
            ]);
        }
        beliefs
    }

    fn enumerate(
        rejecters: &[f64],
        beliefs: &[[f64; 2]],
        quality: Quality,
        params: &ModelParams,
    ) -> f64 {
        let n = rejecters.len();
        let mut total = 0.0;
        for bits in 0..(1usize << n) {
            let mut prob = 1.0;
            for (k, &index) in rejecters.iter().enumerate() {
                let omega = signal_of(bits, k);
                let v = index + params.gamma * beliefs[k][signal_slot(omega)];
                prob *= quality_prob(omega, quality, params.alpha) * logistic_cdf(-v);
            }
            total += prob;
        }
        total
    }

    /// P[all of `rejecters` reject | quality], summing over every signal vector.
    pub fn history_likelihood(rejecters: &[f64], quality: Quality, params: &ModelParams) -> f64 {
        let beliefs = prefix_beliefs(rejecters, params);
        enumerate(rejecters, &beliefs, quality, params)
    }

    /// `(like_high, like_low)` for a prefix of provisional-yes rejecters.
    pub fn oracle_history_likelihood(
        rejecter_indices: &[f64],
        params: &ModelParams,
        regime: InfoRegime,
    ) -> Result<(f64, f64), BeliefError> {
        if rejecter_indices.len() > MAX_ORACLE_LEN {
            return Err(BeliefError::OracleTooLong {
                max: MAX_ORACLE_LEN,
                got: rejecter_indices.len(),
            });
        }
        match regime {
            InfoRegime::SocialLearning => Ok((
                history_likelihood(rejecter_indices, Quality::High, params),
                history_likelihood(rejecter_indices, Quality::Low, params),
            )),
            InfoRegime::NoSocialLearning => Ok((1.0, 1.0)),
            InfoRegime::InformationSharing => Err(BeliefError::RegimeMisuse(regime)),
        }
    }
}
