//! Match-run execution under a (policy, regime) cell and the aggregate
//! efficiency and welfare metrics.

pub mod curve;
pub mod orderings;
pub mod rng;

use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use thiserror::Error;

use crate::beliefs::{
    advance_history, posterior_log, posterior_shared, BeliefError, BeliefState, InfoRegime,
};
use crate::model::{
    covariate_row, exante_accept_utility, BloodType, DonorId, DonorProfile, ModelError,
    ModelParams, PatientId, PatientProfile, Quality, Signal,
};
use crate::policies::{rank, Candidate, PriorityPolicy, RankedMatchRun};

pub use curve::{
    conditional_accept_curve, cumulative_accept_prob, curve_pairs, write_curve_csv, CurvePoint,
};
pub use orderings::{grid_violations, policy_violations, regime_violations, OrderingViolation};
pub use rng::{draw_quality, PatientDraw, RngStream};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("population has no donors")]
    EmptyPopulation,
    #[error("replications must be at least 1")]
    NoReplications,
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

/// Donors and the waitlist they are matched against.
#[derive(Debug, Clone)]
pub struct Population {
    pub donors: Vec<DonorProfile>,
    pub patients: Vec<PatientProfile>,
    pools: [Vec<usize>; 4],
}

fn blood_slot(b: BloodType) -> usize {
    match b {
        BloodType::O => 0,
        BloodType::A => 1,
        BloodType::B => 2,
        BloodType::AB => 3,
    }
}

impl Population {
    pub fn new(donors: Vec<DonorProfile>, patients: Vec<PatientProfile>) -> Population {
        let pools = BloodType::ALL.map(|donor_type| {
            patients
                .iter()
                .enumerate()
                .filter(|(_, p)| donor_type.can_donate_to(p.blood_type))
                .map(|(k, _)| k)
                .collect()
        });
        Population {
            donors,
            patients,
            pools,
        }
    }

    /// Positions in `patients` of everyone compatible with a donor of this type.
    pub fn compatible(&self, donor_type: BloodType) -> &[usize] {
        &self.pools[blood_slot(donor_type)]
    }

    /// Draws the donor's candidate set; the flag is set when the compatible
    /// pool was smaller than the requested run size.
    pub fn sample_candidates(
        &self,
        donor: &DonorProfile,
        stream: &RngStream,
    ) -> (Vec<Candidate>, bool) {
        let pool = self.compatible(donor.blood_type);
        let wanted = donor.run_size as usize;
        let shrunk = wanted > pool.len();
        let amount = wanted.min(pool.len());
        let picks = index::sample(&mut stream.sampling_rng(), pool.len(), amount);
        let candidates = picks
            .iter()
            .map(|k| Candidate::new(donor, self.patients[pool[k]]))
            .collect();
        (candidates, shrunk)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalDecision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionRecord {
    pub patient: PatientId,
    pub sequence_number: u32,
    pub provisional: bool,
    pub signal: Signal,
    /// `None` for provisional-no patients and for positions never reached.
    pub decision: Option<FinalDecision>,
}

/// The winning patient of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acceptance {
    pub sequence_number: u32,
    pub patient: PatientId,
    /// Ex-ante maximum expected utility at the realized quality.
    pub utility: f64,
    pub las: f64,
    pub waiting_time: f64,
    pub blood_match: f64,
    pub distance_nm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchRunOutcome {
    pub donor: DonorId,
    pub quality: Quality,
    pub acceptance: Option<Acceptance>,
    pub records: Vec<PositionRecord>,
}

impl MatchRunOutcome {
    pub fn accepted(&self) -> bool {
        self.acceptance.is_some()
    }

    pub fn accepted_sequence(&self) -> Option<u32> {
        self.acceptance.map(|a| a.sequence_number)
    }

    pub fn accepter_utility(&self) -> Option<f64> {
        self.acceptance.map(|a| a.utility)
    }

    /// Number of provisional-yes patients whose final rejection was observed.
    pub fn informative_rejections(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.decision == Some(FinalDecision::Reject))
            .count()
    }
}

/// Runs one match with pre-drawn quality and per-position draws.
///
/// Under social learning the run stops at the first acceptance. Under the
/// other regimes every provisional-yes patient decides and the smallest
/// sequence number among the accepters wins.
pub fn run_match_with_draws(
    ranked: &RankedMatchRun,
    params: &ModelParams,
    regime: InfoRegime,
    quality: Quality,
    draws: &[PatientDraw],
) -> Result<MatchRunOutcome, SimError> {
    params.validate()?;
    debug_assert_eq!(draws.len(), ranked.entries.len());
    let mut state = BeliefState::empty();
    let mut public_signals: Vec<Signal> = Vec::new();
    let mut acceptance: Option<Acceptance> = None;
    let mut records = Vec::with_capacity(ranked.entries.len());

    for (entry, draw) in ranked.entries.iter().zip(draws) {
        let provisional = draw.provisional(params.mu);
        let signal = draw.signal(quality, params.alpha);
        let decides = provisional && (regime != InfoRegime::SocialLearning || acceptance.is_none());
        let mut decision = None;
        if decides {
            let row = covariate_row(&ranked.donor, &entry.patient, &entry.pair);
            let index: f64 = row.iter().zip(&params.beta).map(|(x, b)| x * b).sum();
            let belief = match regime {
                InfoRegime::SocialLearning => posterior_log(params.p, params.alpha, signal, &state),
                InfoRegime::NoSocialLearning => {
                    posterior_log(params.p, params.alpha, signal, &BeliefState::empty())
                }
                InfoRegime::InformationSharing => {
                    posterior_shared(params.p, params.alpha, signal, &public_signals)
                }
            };
            let accepts = draw.shock >= -(index + params.gamma * belief);
            if accepts {
                decision = Some(FinalDecision::Accept);
                if acceptance.is_none() {
                    acceptance = Some(Acceptance {
                        sequence_number: entry.sequence_number,
                        patient: entry.patient.id,
                        utility: exante_accept_utility(index, quality, params.gamma),
                        las: entry.patient.las,
                        waiting_time: entry.patient.waiting_time,
                        blood_match: entry.pair.blood_match.0 as f64,
                        distance_nm: entry.pair.distance_nm,
                    });
                }
            } else {
                decision = Some(FinalDecision::Reject);
                if regime == InfoRegime::SocialLearning {
                    state = advance_history(&state, index, params, regime)?;
                }
            }
            if regime == InfoRegime::InformationSharing {
                public_signals.push(signal);
            }
        }
        records.push(PositionRecord {
            patient: entry.patient.id,
            sequence_number: entry.sequence_number,
            provisional,
            signal,
            decision,
        });
    }

    Ok(MatchRunOutcome {
        donor: ranked.donor.id,
        quality,
        acceptance,
        records,
    })
}

/// Draws quality and per-patient shocks from `stream`, then runs the match.
pub fn run_match(
    ranked: &RankedMatchRun,
    params: &ModelParams,
    regime: InfoRegime,
    stream: &RngStream,
) -> Result<MatchRunOutcome, SimError> {
    let quality = draw_quality(&mut stream.quality_rng(), params.p);
    let draws: Vec<PatientDraw> = ranked
        .entries
        .iter()
        .map(|e| stream.patient_draw(e.patient.id))
        .collect();
    run_match_with_draws(ranked, params, regime, quality, &draws)
}

/// Everything produced for one donor-replication.
#[derive(Debug, Clone)]
pub struct DonorSimulation {
    pub ranked: RankedMatchRun,
    pub outcome: MatchRunOutcome,
    pub shrunk: bool,
}

pub fn simulate_donor(
    population: &Population,
    donor: &DonorProfile,
    params: &ModelParams,
    policy: PriorityPolicy,
    regime: InfoRegime,
    stream: &RngStream,
) -> Result<DonorSimulation, SimError> {
    let (candidates, shrunk) = population.sample_candidates(donor, stream);
    let ranked = rank(policy, donor, &candidates, &params.beta)?;
    let outcome = run_match(&ranked, params, regime, stream)?;
    Ok(DonorSimulation {
        ranked,
        outcome,
        shrunk,
    })
}

#[derive(Debug, Clone)]
pub struct SimulationBatch {
    pub outcomes: Vec<MatchRunOutcome>,
    pub shrunk_runs: usize,
}

/// Simulates every donor `replications` times. Output order is donor-major
/// and independent of the thread schedule.
pub fn simulate_outcomes(
    population: &Population,
    params: &ModelParams,
    policy: PriorityPolicy,
    regime: InfoRegime,
    replications: u32,
    seed: u64,
) -> Result<SimulationBatch, SimError> {
    if population.donors.is_empty() {
        return Err(SimError::EmptyPopulation);
    }
    if replications == 0 {
        return Err(SimError::NoReplications);
    }
    params.validate()?;
    let jobs: Vec<(usize, u32)> = (0..population.donors.len())
        .flat_map(|d| (0..replications).map(move |r| (d, r)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(d, r)| {
            let donor = &population.donors[d];
            let stream = RngStream::new(seed, donor.id, r);
            simulate_donor(population, donor, params, policy, regime, &stream)
                .map(|sim| (sim.outcome, sim.shrunk))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let shrunk_runs = results.iter().filter(|(_, s)| *s).count();
    if shrunk_runs > 0 {
        log::warn!(
            "{shrunk_runs} runs requested more candidates than the compatible pool; shrunk to pool size"
        );
    }
    Ok(SimulationBatch {
        outcomes: results.into_iter().map(|(o, _)| o).collect(),
        shrunk_runs,
    })
}

/// One (policy, regime) cell of a counterfactual table.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub policy: PriorityPolicy,
    pub regime: InfoRegime,
    pub replications: u32,
    pub seed: u64,
    pub runs: usize,
    pub acceptances: usize,
    pub allocation_rate: f64,
    pub mean_accepted_sequence: f64,
    pub mean_acceptance_utility: f64,
    pub total_acceptance_utility: f64,
    /// Share of all runs whose donor is high quality and allocated.
    pub accept_rate_high_quality: f64,
    /// Share of all runs whose donor is low quality and unallocated.
    pub reject_rate_low_quality: f64,
    pub high_quality_share: f64,
    pub accepted_las: f64,
    pub accepted_waiting_time: f64,
    pub accepted_blood_match: f64,
    pub accepted_distance: f64,
    pub shrunk_runs: usize,
}

pub const REPORT_HEADER: [&str; 16] = [
    "Policy",
    "Information Treatment",
    "Replications",
    "Seed",
    "Runs",
    "Acceptances",
    "Allocation Rate (%)",
    "Accepted Sequence Number",
    "Acceptance Utility",
    "Total Acceptance Utility",
    "Acceptance Rate of High Quality (%)",
    "Rejection Rate of Low Quality (%)",
    "LAS",
    "Waiting Time (Month)",
    "Primary blood type match",
    "Distance (NM)",
];

impl ExperimentReport {
    pub fn summarize(
        outcomes: &[MatchRunOutcome],
        policy: PriorityPolicy,
        regime: InfoRegime,
        replications: u32,
        seed: u64,
        shrunk_runs: usize,
    ) -> ExperimentReport {
        let runs = outcomes.len();
        let mut acceptances = 0usize;
        let (mut seq, mut util, mut las, mut wait, mut blood, mut dist) =
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut high_acc, mut low_rej, mut high) = (0usize, 0usize, 0usize);
        for o in outcomes {
            if o.quality == Quality::High {
                high += 1;
            }
            match &o.acceptance {
                Some(a) => {
                    acceptances += 1;
                    seq += a.sequence_number as f64;
                    util += a.utility;
                    las += a.las;
                    wait += a.waiting_time;
                    blood += a.blood_match;
                    dist += a.distance_nm;
                    if o.quality == Quality::High {
                        high_acc += 1;
                    }
                }
                None => {
                    if o.quality == Quality::Low {
                        low_rej += 1;
                    }
                }
            }
        }
        let per_run = |k: usize| {
            if runs == 0 {
                f64::NAN
            } else {
                k as f64 / runs as f64
            }
        };
        let per_acc = |s: f64| {
            if acceptances == 0 {
                f64::NAN
            } else {
                s / acceptances as f64
            }
        };
        ExperimentReport {
            policy,
            regime,
            replications,
            seed,
            runs,
            acceptances,
            allocation_rate: per_run(acceptances),
            mean_accepted_sequence: per_acc(seq),
            mean_acceptance_utility: per_acc(util),
            total_acceptance_utility: util,
            accept_rate_high_quality: per_run(high_acc),
            reject_rate_low_quality: per_run(low_rej),
            high_quality_share: per_run(high),
            accepted_las: per_acc(las),
            accepted_waiting_time: per_acc(wait),
            accepted_blood_match: per_acc(blood),
            accepted_distance: per_acc(dist),
            shrunk_runs,
        }
    }

    pub fn csv_record(&self) -> Vec<String> {
        let f = |x: f64| format!("{x:.4}");
        vec![
            self.policy.to_string(),
            self.regime.to_string(),
            self.replications.to_string(),
            self.seed.to_string(),
            self.runs.to_string(),
            self.acceptances.to_string(),
            f(100.0 * self.allocation_rate),
            f(self.mean_accepted_sequence),
            f(self.mean_acceptance_utility),
            f(self.total_acceptance_utility),
            f(100.0 * self.accept_rate_high_quality),
            f(100.0 * self.reject_rate_low_quality),
            f(self.accepted_las),
            f(self.accepted_waiting_time),
            f(self.accepted_blood_match),
            f(self.accepted_distance),
        ]
    }
}

pub fn write_reports_csv<W: Write>(out: W, reports: &[ExperimentReport]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in reports {
        w.write_record(r.csv_record())?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn run_experiment(
    population: &Population,
    params: &ModelParams,
    policy: PriorityPolicy,
    regime: InfoRegime,
    replications: u32,
    seed: u64,
) -> Result<ExperimentReport, SimError> {
    let batch = simulate_outcomes(population, params, policy, regime, replications, seed)?;
    Ok(ExperimentReport::summarize(
        &batch.outcomes,
        policy,
        regime,
        replications,
        seed,
        batch.shrunk_runs,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{logistic_cdf, BloodMatch, Location, PairCovariates, Zone, N_COVARIATES};
    use crate::policies::RankedEntry;

    fn donor() -> DonorProfile {
        DonorProfile {
            id: DonorId(1),
            age: 38.0,
            weight: 79.0,
            height: 169.5,
            pf_ratio: 419.0,
            heavy_alcohol: false,
            iv_drug: false,
            increased_risk: false,
            blood_type: BloodType::O,
            location: Location::default(),
            run_size: 5,
        }
    }

    fn entry(id: u32, seq: u32, las: f64) -> RankedEntry {
        RankedEntry {
            patient: PatientProfile {
                id: PatientId(id),
                las,
                waiting_time: 2.0,
                bmi: 25.0,
                female: false,
                diabetic: false,
                prev_transplant: false,
                blood_type: BloodType::O,
                age: 55.0,
                height: 170.0,
                weight: 72.0,
                location: Location::default(),
            },
            pair: PairCovariates {
                blood_match: BloodMatch(2),
                distance_nm: 50.0,
                zone: Zone::A,
                age_diff: -17.0,
                height_diff: -0.5,
                weight_diff: 7.0,
            },
            sequence_number: seq,
        }
    }

    fn run_of(n: u32) -> RankedMatchRun {
        RankedMatchRun {
            donor: donor(),
            entries: (1..=n)
                .map(|k| entry(100 + k, k, 30.0 + k as f64))
                .collect(),
        }
    }

    /// Beta with the LAS slot as the only nonzero coefficient besides the intercept.
    fn las_beta(intercept: f64, las: f64) -> Vec<f64> {
        let mut b = vec![0.0; N_COVARIATES];
        b[0] = intercept;
        b[crate::model::IDX_LAS] = las;
        b
    }

    fn params(gamma: f64, beta: Vec<f64>) -> ModelParams {
        ModelParams {
            mu: 0.958,
            alpha: 0.85,
            p: 0.383,
            gamma,
            beta,
        }
    }

    #[test]
    fn all_provisional_no_means_no_informative_rejections() {
        let run = run_of(6);
        let prm = params(4.934, las_beta(0.0, 0.05));
        let draws = vec![
            PatientDraw {
                provisional_u: 0.99,
                signal_u: 0.1,
                shock: 5.0
            };
            6
        ];
        for regime in InfoRegime::ALL {
            let o = run_match_with_draws(&run, &prm, regime, Quality::High, &draws).unwrap();
            assert!(!o.accepted());
            assert_eq!(o.informative_rejections(), 0);
            assert!(o
                .records
                .iter()
                .all(|r| !r.provisional && r.decision.is_none()));
        }
    }

    #[test]
    fn zero_gamma_makes_learning_regimes_identical() {
        let prm = params(0.0, las_beta(-3.0, 0.01));
        for seed in 0..200 {
            let run = run_of(12);
            let stream = RngStream::new(seed, DonorId(1), 0);
            let a = run_match(&run, &prm, InfoRegime::SocialLearning, &stream).unwrap();
            let b = run_match(&run, &prm, InfoRegime::NoSocialLearning, &stream).unwrap();
            assert_eq!(a.acceptance, b.acceptance);
            assert_eq!(a.quality, b.quality);
        }
    }

    #[test]
    fn social_learning_stops_at_first_acceptance() {
        let run = run_of(4);
        let prm = params(4.934, las_beta(0.0, 0.0));
        let draws = vec![
            PatientDraw {
                provisional_u: 0.1,
                signal_u: 0.1,
                shock: 30.0
            };
            4
        ];
        let sl = run_match_with_draws(
            &run,
            &prm,
            InfoRegime::SocialLearning,
            Quality::High,
            &draws,
        )
        .unwrap();
        assert_eq!(sl.accepted_sequence(), Some(1));
        assert_eq!(
            sl.records.iter().filter(|r| r.decision.is_some()).count(),
            1
        );
        let ns = run_match_with_draws(
            &run,
            &prm,
            InfoRegime::NoSocialLearning,
            Quality::High,
            &draws,
        )
        .unwrap();
        assert_eq!(ns.accepted_sequence(), Some(1));
        assert_eq!(
            ns.records
                .iter()
                .filter(|r| r.decision == Some(FinalDecision::Accept))
                .count(),
            4
        );
    }

    #[test]
    fn later_accepter_wins_only_when_earlier_ones_reject() {
        let run = run_of(3);
        let prm = params(4.934, las_beta(0.0, 0.0));
        let mut draws = vec![
            PatientDraw {
                provisional_u: 0.1,
                signal_u: 0.1,
                shock: -30.0
            };
            3
        ];
        draws[2].shock = 30.0;
        for regime in InfoRegime::ALL {
            let o = run_match_with_draws(&run, &prm, regime, Quality::Low, &draws).unwrap();
            assert_eq!(o.accepted_sequence(), Some(3), "{regime}");
            let u = o.accepter_utility().unwrap();
            assert!((u - exante_accept_utility(0.0, Quality::Low, 4.934)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_patient_acceptance_matches_two_branch_formula() {
        // Index chosen so that v(signal = +1) = 0.
        let prm0 = params(4.934, las_beta(0.0, 0.0));
        let e_hi = posterior_log(prm0.p, prm0.alpha, Signal::High, &BeliefState::empty());
        let e_lo = posterior_log(prm0.p, prm0.alpha, Signal::Low, &BeliefState::empty());
        let index = -prm0.gamma * e_hi;
        let prm = params(4.934, las_beta(index, 0.0));
        let mut run = run_of(1);
        run.entries[0].patient.las = 0.0;
        let p_hi_signal = prm.p * prm.alpha + (1.0 - prm.p) * (1.0 - prm.alpha);
        let analytic = prm.mu
            * (p_hi_signal * 0.5 + (1.0 - p_hi_signal) * logistic_cdf(prm.gamma * (e_lo - e_hi)));
        let n = 1_000_000u64;
        let mut hits = 0u64;
        for r in 0..n {
            let stream = RngStream::new(99, DonorId(1), r as u32);
            if run_match(&run, &prm, InfoRegime::SocialLearning, &stream)
                .unwrap()
                .accepted()
            {
                hits += 1;
            }
        }
        let phat = hits as f64 / n as f64;
        let se = (analytic * (1.0 - analytic) / n as f64).sqrt();
        assert!((phat - analytic).abs() < 3.0 * se, "{phat} vs {analytic}");
    }

    #[test]
    fn summary_identities() {
        let run = run_of(8);
        let prm = params(4.934, las_beta(-2.0, 0.02));
        let outcomes: Vec<MatchRunOutcome> = (0..500)
            .map(|r| {
                run_match(
                    &run,
                    &prm,
                    InfoRegime::SocialLearning,
                    &RngStream::new(3, DonorId(1), r),
                )
                .unwrap()
            })
            .collect();
        let rep = ExperimentReport::summarize(
            &outcomes,
            PriorityPolicy::Optn,
            InfoRegime::SocialLearning,
            500,
            3,
            0,
        );
        assert_eq!(rep.runs, 500);
        let rejected = outcomes.iter().filter(|o| !o.accepted()).count();
        assert_eq!(rep.acceptances + rejected, rep.runs);
        assert!(
            (rep.total_acceptance_utility - rep.mean_acceptance_utility * rep.acceptances as f64)
                .abs()
                < 1e-9
        );
        let implied = rep.accept_rate_high_quality + (1.0 - rep.high_quality_share)
            - rep.reject_rate_low_quality;
        assert!((implied - rep.allocation_rate).abs() < 1e-12);
        for r in [
            rep.allocation_rate,
            rep.accept_rate_high_quality,
            rep.reject_rate_low_quality,
        ] {
            assert!((0.0..=1.0).contains(&r));
        }
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, &[rep]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("Policy,Information Treatment,"));
        assert_eq!(text.lines().count(), 2);
    }
}
