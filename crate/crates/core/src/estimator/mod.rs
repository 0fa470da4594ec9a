//! Two-step maximum likelihood: the provisional-yes rate by counting, then
//! `(alpha, p, gamma, beta)` by Nelder–Mead on the marginal likelihood of the
//! observed final decisions, with BHHH standard errors.

pub mod bhhh;
pub mod nelder_mead;
mod transform;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::beliefs::{advance_history, decision_log_probs, BeliefError, BeliefState, InfoRegime};
use crate::data_io::DonorRun;
use crate::econometrics::{logit_irls, IrlsOptions};
use crate::model::{
    covariate_row, log_add_exp, ModelError, ModelParams, COVARIATE_NAMES, N_COVARIATES,
};
use crate::simulator::FinalDecision;

pub use bhhh::{bhhh_std_errors, donor_scores, BhhhResult};
pub use nelder_mead::{minimize, NelderMeadOptions, NelderMeadResult};
pub use transform::ParamTransform;

/// Number of structurally estimated parameters: alpha, p, gamma and beta.
pub const N_FREE: usize = 3 + N_COVARIATES;

pub fn free_param_names() -> Vec<String> {
    ["alpha", "p", "gamma"]
        .iter()
        .map(|s| s.to_string())
        .chain(COVARIATE_NAMES.iter().map(|n| format!("beta.{n}")))
        .collect()
}

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("dataset has no offers")]
    NoOffers,
    #[error("dataset has no donors")]
    NoDonors,
    #[error("donor {donor}, sequence {sequence}: non-finite covariate `{column}`")]
    NonFinite {
        donor: u32,
        sequence: u32,
        column: &'static str,
    },
    #[error("parameter vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("parameter file: {0}")]
    ParamFile(String),
}

/// Covariate rows of the provisional-yes patients who made a final
/// decision, up to and including the first accepter.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRun {
    pub rows: Vec<[f64; N_COVARIATES]>,
    pub accepted: bool,
}

impl PreparedRun {
    /// Offers after the first acceptance are ignored.
    pub fn from_run(run: &DonorRun) -> Result<PreparedRun, EstimatorError> {
        let mut rows = Vec::new();
        let mut accepted = false;
        for o in &run.offers {
            if !o.provisional_yes {
                continue;
            }
            let row = covariate_row(&run.donor, &o.patient, &o.pair);
            if let Some(k) = row.iter().position(|x| !x.is_finite()) {
                return Err(EstimatorError::NonFinite {
                    donor: run.donor.id.0,
                    sequence: o.sequence_number,
                    column: COVARIATE_NAMES[k],
                });
            }
            rows.push(row);
            if o.final_decision == Some(FinalDecision::Accept) {
                accepted = true;
                break;
            }
        }
        Ok(PreparedRun { rows, accepted })
    }

    fn rejecters(&self) -> &[[f64; N_COVARIATES]] {
        if self.accepted {
            &self.rows[..self.rows.len() - 1]
        } else {
            &self.rows
        }
    }
}

pub fn prepare(runs: &[DonorRun]) -> Result<Vec<PreparedRun>, EstimatorError> {
    runs.iter().map(PreparedRun::from_run).collect()
}

/// Share of offers that received a provisional yes.
pub fn estimate_mu(runs: &[DonorRun]) -> Result<f64, EstimatorError> {
    let (yes, total) = runs
        .iter()
        .flat_map(|r| &r.offers)
        .fold((0usize, 0usize), |(y, t), o| {
            (y + o.provisional_yes as usize, t + 1)
        });
    if total == 0 {
        return Err(EstimatorError::NoOffers);
    }
    Ok(yes as f64 / total as f64)
}

fn index_of(row: &[f64; N_COVARIATES], beta: &[f64]) -> f64 {
    row.iter().zip(beta).map(|(x, b)| x * b).sum()
}

/// Log-likelihood of one prepared run: quality and every private signal are
/// integrated out, beliefs follow the social-learning recursion.
pub fn prepared_log_likelihood(
    run: &PreparedRun,
    params: &ModelParams,
) -> Result<f64, EstimatorError> {
    let mut state = BeliefState::empty();
    for row in run.rejecters() {
        state = advance_history(
            &state,
            index_of(row, &params.beta),
            params,
            InfoRegime::SocialLearning,
        )?;
    }
    let lp = params.p.ln();
    let lq = (-params.p).ln_1p();
    if run.accepted {
        let last = run.rows.last().expect("accepted run has an accepter");
        let d = decision_log_probs(index_of(last, &params.beta), params, &state);
        Ok(log_add_exp(
            lp + state.log_high + d.accept_high,
            lq + state.log_low + d.accept_low,
        ))
    } else {
        Ok(log_add_exp(lp + state.log_high, lq + state.log_low))
    }
}

pub fn donor_log_likelihood(run: &DonorRun, params: &ModelParams) -> Result<f64, EstimatorError> {
    params.validate()?;
    prepared_log_likelihood(&PreparedRun::from_run(run)?, params)
}

/// Sum with a fixed binary-tree association, independent of thread count.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

pub fn per_donor_log_likelihood(
    runs: &[PreparedRun],
    params: &ModelParams,
) -> Result<Vec<f64>, EstimatorError> {
    runs.par_iter()
        .map(|r| prepared_log_likelihood(r, params))
        .collect()
}

pub fn total_log_likelihood(
    runs: &[PreparedRun],
    params: &ModelParams,
) -> Result<f64, EstimatorError> {
    params.validate()?;
    Ok(pairwise_sum(&per_donor_log_likelihood(runs, params)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub nelder_mead: NelderMeadOptions,
    /// Additional simplex restarts from the best point.
    pub restarts: usize,
    /// Starting values; `None` means the logit warm start.
    pub init: Option<ModelParams>,
    pub std_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            nelder_mead: NelderMeadOptions::default(),
            restarts: 2,
            init: None,
            std_errors: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub params: ModelParams,
    pub mu_std_error: f64,
    pub log_likelihood: f64,
    /// Aligned with [`free_param_names`]; NaN where undefined.
    pub std_errors: Vec<f64>,
    pub singular: Vec<bool>,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// Boundary proximity warnings for the constrained parameters.
    pub boundary_flags: Vec<String>,
}

impl EstimationResult {
    pub fn free_values(&self) -> Vec<f64> {
        let p = &self.params;
        [p.alpha, p.p, p.gamma]
            .into_iter()
            .chain(p.beta.iter().copied())
            .collect()
    }

    /// `(name, estimate, std_error)` rows, starting with mu.
    pub fn rows(&self) -> Vec<(String, f64, f64)> {
        let mut out = vec![("mu".to_string(), self.params.mu, self.mu_std_error)];
        for ((name, v), se) in free_param_names()
            .into_iter()
            .zip(self.free_values())
            .zip(&self.std_errors)
        {
            out.push((name, v, *se));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EstimatorError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["parameter", "estimate", "std_error"])?;
        for (name, v, se) in self.rows() {
            let se = if se.is_finite() {
                se.to_string()
            } else {
                "NA".to_string()
            };
            w.write_record([name, v.to_string(), se])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Plain-text table, with truth and deltas when known.
    pub fn report(&self, truth: Option<&ModelParams>) -> String {
        let mut s = String::new();
        s.push_str(&format!("log_likelihood = {:.6}\n", self.log_likelihood));
        s.push_str(&format!(
            "converged = {}  iterations = {}  evaluations = {}\n",
            self.converged, self.iterations, self.evaluations
        ));
        for f in &self.boundary_flags {
            s.push_str(&format!("warning: {f}\n"));
        }
        let truth_vals: Option<Vec<f64>> = truth.map(|t| {
            std::iter::once(t.mu)
                .chain([t.alpha, t.p, t.gamma])
                .chain(t.beta.iter().copied())
                .collect()
        });
        s.push_str(&format!(
            "{:<28}{:>14}{:>14}",
            "parameter", "estimate", "std_error"
        ));
        if truth_vals.is_some() {
            s.push_str(&format!("{:>14}{:>14}", "truth", "delta"));
        }
        s.push('\n');
        for (k, (name, v, se)) in self.rows().into_iter().enumerate() {
            let se = if se.is_finite() {
                format!("{se:.6}")
            } else {
                "NA".into()
            };
            s.push_str(&format!("{name:<28}{v:>14.6}{se:>14}"));
            if let Some(t) = &truth_vals {
                s.push_str(&format!("{:>14.6}{:>14.6}", t[k], v - t[k]));
            }
            s.push('\n');
        }
        s
    }
}

/// Reads a table written by [`EstimationResult::write_csv`] back into
/// parameters. Every parameter must appear exactly once.
pub fn read_params_csv<R: std::io::Read>(input: R) -> Result<ModelParams, EstimatorError> {
    let mut names = vec!["mu".to_string()];
    names.extend(free_param_names());
    let mut values: Vec<Option<f64>> = vec![None; names.len()];
    let mut r = csv::Reader::from_reader(input);
    for rec in r.records() {
        let rec = rec?;
        let name = rec.get(0).unwrap_or_default();
        let k = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| EstimatorError::ParamFile(format!("unknown parameter `{name}`")))?;
        let v: f64 =
            rec.get(1).unwrap_or_default().parse().map_err(|_| {
                EstimatorError::ParamFile(format!("`{name}` has no numeric estimate"))
            })?;
        if values[k].replace(v).is_some() {
            return Err(EstimatorError::ParamFile(format!("`{name}` listed twice")));
        }
    }
    let v: Vec<f64> = values
        .into_iter()
        .zip(&names)
        .map(|(v, n)| v.ok_or_else(|| EstimatorError::ParamFile(format!("missing `{n}`"))))
        .collect::<Result<_, _>>()?;
    let params = ModelParams {
        mu: v[0],
        alpha: v[1],
        p: v[2],
        gamma: v[3],
        beta: v[4..].to_vec(),
    };
    params.validate()?;
    Ok(params)
}

/// Starting point: a plain logit of final decisions (the quality term
/// dropped), then fixed values for the belief parameters.
pub fn initial_params(runs: &[PreparedRun], mu: f64) -> ModelParams {
    let rows: Vec<(&[f64; N_COVARIATES], f64)> = runs
        .iter()
        .flat_map(|r| {
            let n = r.rows.len();
            r.rows
                .iter()
                .enumerate()
                .map(move |(k, row)| (row, (r.accepted && k + 1 == n) as u8 as f64))
        })
        .collect();
    let mut beta = vec![0.0; N_COVARIATES];
    if !rows.is_empty() {
        let x = DMatrix::from_fn(rows.len(), N_COVARIATES, |i, j| rows[i].0[j]);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        match logit_irls(&x, &y, &IrlsOptions::default()) {
            Ok(fit) => beta = fit.coefficients.iter().copied().collect(),
            Err(e) => {
                log::warn!("logit warm start failed ({e}); starting from the intercept only");
                let share = y.mean().clamp(1e-3, 1.0 - 1e-3);
                beta[0] = (share / (1.0 - share)).ln();
            }
        }
    }
    ModelParams {
        mu: mu.clamp(f64::MIN_POSITIVE, 1.0),
        alpha: 0.75,
        p: 0.5,
        gamma: 1.0,
        beta,
    }
}

fn boundary_flags(params: &ModelParams) -> Vec<String> {
    let mut flags = Vec::new();
    if params.alpha < 0.5 + 1e-3 {
        flags.push(format!(
            "alpha = {} is at the uninformative bound 0.5",
            params.alpha
        ));
    }
    if params.alpha > 1.0 - 1e-4 {
        flags.push(format!("alpha = {} is at the bound 1", params.alpha));
    }
    if params.p < 1e-4 || params.p > 1.0 - 1e-4 {
        flags.push(format!("p = {} is at a bound", params.p));
    }
    flags
}

/// Full two-step fit.
pub fn fit(runs: &[DonorRun], options: &FitOptions) -> Result<EstimationResult, EstimatorError> {
    if runs.is_empty() {
        return Err(EstimatorError::NoDonors);
    }
    let mu = estimate_mu(runs)?;
    let n_offers: usize = runs.iter().map(|r| r.offers.len()).sum();
    let prepared = prepare(runs)?;
    let accepted = prepared.iter().filter(|r| r.accepted).count();
    if accepted == 0 || accepted == prepared.len() {
        log::warn!(
            "dataset lacks either accepted or rejected donors; estimates will sit on a boundary"
        );
    }

    let mut start = match &options.init {
        Some(p) => p.clone(),
        None => initial_params(&prepared, mu),
    };
    start.mu = mu;
    start.validate()?;
    let transform = ParamTransform::from_prepared(&prepared);
    let objective = |u: &[f64]| -> f64 {
        let params = transform.to_natural(u, mu);
        if params.validate().is_err() {
            return f64::INFINITY;
        }
        match total_log_likelihood(&prepared, &params) {
            Ok(ll) if ll.is_finite() => -ll,
            _ => f64::INFINITY,
        }
    };

    let mut u = transform.to_unconstrained(&start);
    let mut step = vec![0.3; N_FREE];
    step[0] = 0.5;
    step[1] = 0.5;
    step[2] = 1.0;
    let mut iterations = 0;
    let mut evaluations = 0;
    let mut best = objective(&u);
    let mut converged = false;
    for round in 0..=options.restarts {
        let r = minimize(objective, &u, &step, &options.nelder_mead);
        iterations += r.iterations;
        evaluations += r.evaluations;
        let gain = best - r.fx;
        if r.fx <= best {
            u = r.x;
            best = r.fx;
        }
        converged = r.converged;
        log::info!(
            "simplex round {round}: -loglik {best:.6}, {} iterations, converged {}",
            r.iterations,
            r.converged
        );
        if round > 0 && r.converged && gain.abs() < 1e-6 {
            break;
        }
        step.iter_mut().for_each(|s| *s *= 0.5);
    }

    let params = transform.to_natural(&u, mu);
    let log_likelihood = total_log_likelihood(&prepared, &params)?;
    let (std_errors, singular) = if options.std_errors {
        let b = bhhh::bhhh_from_prepared(&prepared, &params)?;
        (b.std_errors, b.singular)
    } else {
        (vec![f64::NAN; N_FREE], vec![false; N_FREE])
    };
    Ok(EstimationResult {
        mu_std_error: (mu * (1.0 - mu) / n_offers as f64).sqrt(),
        boundary_flags: boundary_flags(&params),
        params,
        log_likelihood,
        std_errors,
        singular,
        converged,
        iterations,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beliefs::oracle::enumerated_belief;
    use crate::data_io::{generate_dataset, GeneratorConfig, OfferObservation};
    use crate::model::{logistic_cdf, Quality, Signal};
    use crate::policies::PriorityPolicy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_runs(seed: u64, donors: usize) -> Vec<DonorRun> {
        let cfg = GeneratorConfig {
            n_donors: donors,
            n_patients: 600,
            seed,
            ..Default::default()
        };
        generate_dataset(&cfg, PriorityPolicy::Optn, InfoRegime::SocialLearning)
            .unwrap()
            .donor_runs()
            .unwrap()
    }

    /// Direct enumeration over quality and every signal vector.
    fn enumerated_log_likelihood(indices: &[f64], accepted: bool, params: &ModelParams) -> f64 {
        let n = indices.len();
        let mut total = 0.0;
        for quality in [Quality::High, Quality::Low] {
            let prior = if quality == Quality::High {
                params.p
            } else {
                1.0 - params.p
            };
            let mut sum = 0.0;
            for bits in 0..(1usize << n) {
                let mut prob = 1.0;
                for k in 0..n {
                    let omega = if bits >> k & 1 == 1 {
                        Signal::High
                    } else {
                        Signal::Low
                    };
                    let belief = enumerated_belief(&indices[..k], omega, params);
                    let a = logistic_cdf(indices[k] + params.gamma * belief);
                    let decides_yes = accepted && k + 1 == n;
                    prob *= omega.likelihood(quality, params.alpha)
                        * if decides_yes { a } else { 1.0 - a };
                }
                sum += prob;
            }
            total += prior * sum;
        }
        total.ln()
    }

    fn synthetic_prepared(rng: &mut ChaCha8Rng, len: usize, accepted: bool) -> PreparedRun {
        let rows = (0..len)
            .map(|_| {
                let mut r = [0.0; N_COVARIATES];
                r[0] = 1.0;
                for x in r.iter_mut().skip(1) {
                    *x = rng.random_range(-1.0..1.0);
                }
                r
            })
            .collect();
        PreparedRun { rows, accepted }
    }

    fn test_params() -> ModelParams {
        let mut p = ModelParams::reference();
        p.beta = (0..N_COVARIATES)
            .map(|k| if k == 0 { -0.5 } else { 0.3 / k as f64 })
            .collect();
        p
    }

    #[test]
    fn mu_is_a_share() {
        let mut runs = small_runs(1, 10);
        assert!(estimate_mu(&runs).unwrap() > 0.9);
        for r in &mut runs {
            r.offers.truncate(4);
            for (k, o) in r.offers.iter_mut().enumerate() {
                o.provisional_yes = k != 0;
            }
        }
        assert_eq!(estimate_mu(&runs[..1]).unwrap(), 0.75);
        runs.iter_mut().for_each(|r| r.offers.clear());
        assert!(matches!(estimate_mu(&runs), Err(EstimatorError::NoOffers)));
    }

    #[test]
    fn empty_rejected_run_has_zero_log_likelihood() {
        let run = PreparedRun {
            rows: vec![],
            accepted: false,
        };
        assert_eq!(prepared_log_likelihood(&run, &test_params()).unwrap(), 0.0);
    }

    #[test]
    fn gamma_zero_single_accepter_is_plain_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let run = synthetic_prepared(&mut rng, 1, true);
        let mut p = test_params();
        p.gamma = 0.0;
        let idx = index_of(&run.rows[0], &p.beta);
        let ll = prepared_log_likelihood(&run, &p).unwrap();
        assert!((ll - logistic_cdf(idx).ln()).abs() < 1e-14);
    }

    #[test]
    fn matches_enumeration_on_short_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = test_params();
        for len in 1..=4 {
            for accepted in [true, false] {
                let run = synthetic_prepared(&mut rng, len, accepted);
                let idx: Vec<f64> = run.rows.iter().map(|r| index_of(r, &params.beta)).collect();
                let got = prepared_log_likelihood(&run, &params).unwrap();
                let want = enumerated_log_likelihood(&idx, accepted, &params);
                assert!((got - want).abs() < 1e-10, "len {len}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn post_acceptance_offers_are_ignored() {
        let runs = small_runs(4, 40);
        let params = ModelParams::reference();
        let run = runs
            .iter()
            .find(|r| r.accepted())
            .expect("some accepted donor");
        let base = donor_log_likelihood(run, &params).unwrap();
        let mut extended = run.clone();
        let last = *extended.offers.last().unwrap();
        for k in 1..=3 {
            extended.offers.push(OfferObservation {
                sequence_number: last.sequence_number + k,
                final_decision: Some(FinalDecision::Reject),
                ..last
            });
        }
        assert_eq!(donor_log_likelihood(&extended, &params).unwrap(), base);
    }

    #[test]
    fn likelihood_is_permutation_invariant_and_deterministic() {
        let prepared = prepare(&small_runs(5, 60)).unwrap();
        let params = ModelParams::reference();
        let a = total_log_likelihood(&prepared, &params).unwrap();
        let mut rev = prepared.clone();
        rev.reverse();
        let b = total_log_likelihood(&rev, &params).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs());
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let c = pool.install(|| total_log_likelihood(&prepared, &params).unwrap());
        assert_eq!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn non_finite_covariates_are_reported() {
        let mut runs = small_runs(6, 5);
        let run = runs
            .iter_mut()
            .find(|r| r.offers.iter().any(|o| o.provisional_yes))
            .unwrap();
        let k = run.offers.iter().position(|o| o.provisional_yes).unwrap();
        run.offers[k].patient.las = f64::NAN;
        assert!(matches!(
            donor_log_likelihood(run, &ModelParams::reference()),
            Err(EstimatorError::NonFinite { column: "las", .. })
        ));
    }

    #[test]
    fn iteration_cap_gives_unconverged_result() {
        let runs = small_runs(7, 30);
        let opts = FitOptions {
            nelder_mead: NelderMeadOptions {
                max_iters: Some(1),
                ..Default::default()
            },
            restarts: 0,
            std_errors: false,
            ..Default::default()
        };
        let r = fit(&runs, &opts).unwrap();
        assert!(!r.converged);
        assert!(r.log_likelihood.is_finite());
    }

    #[test]
    fn report_lists_every_parameter() {
        let runs = small_runs(8, 30);
        let opts = FitOptions {
            nelder_mead: NelderMeadOptions {
                max_iters: Some(50),
                ..Default::default()
            },
            restarts: 0,
            ..Default::default()
        };
        let r = fit(&runs, &opts).unwrap();
        let text = r.report(Some(&ModelParams::reference()));
        assert!(text.contains("beta.las") && text.contains("delta"));
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let csv = String::from_utf8(buf).unwrap();
        assert_eq!(csv.lines().count(), 2 + N_FREE);
        assert!(csv.starts_with("parameter,estimate,std_error\nmu,"));
    }

    #[test]
    fn params_csv_round_trip() {
        let runs = small_runs(9, 20);
        let opts = FitOptions {
            nelder_mead: NelderMeadOptions {
                max_iters: Some(20),
                ..Default::default()
            },
            restarts: 0,
            std_errors: false,
            ..Default::default()
        };
        let r = fit(&runs, &opts).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(read_params_csv(buf.as_slice()).unwrap(), r.params);
        let text = String::from_utf8(buf).unwrap();
        let missing: String = text
            .lines()
            .filter(|l| !l.starts_with("gamma"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(
            read_params_csv(missing.as_bytes()),
            Err(EstimatorError::ParamFile(_))
        ));
    }
}
