//! Priority rules that turn a donor's candidate set into a match run.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{covariate_row, dot, DonorProfile, ModelError, PairCovariates, PatientProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PriorityPolicy {
    Optn,
    Greedy,
    ReverseGreedy,
}

impl PriorityPolicy {
    pub const ALL: [PriorityPolicy; 3] = [
        PriorityPolicy::Optn,
        PriorityPolicy::Greedy,
        PriorityPolicy::ReverseGreedy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PriorityPolicy::Optn => "optn",
            PriorityPolicy::Greedy => "greedy",
            PriorityPolicy::ReverseGreedy => "reverse-greedy",
        }
    }
}

impl fmt::Display for PriorityPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PriorityPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "optn" => Ok(PriorityPolicy::Optn),
            "greedy" => Ok(PriorityPolicy::Greedy),
            "reverse-greedy" => Ok(PriorityPolicy::ReverseGreedy),
            other => Err(format!(
                "unknown policy `{other}` (expected optn | greedy | reverse-greedy)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub patient: PatientProfile,
    pub pair: PairCovariates,
}

impl Candidate {
    pub fn new(donor: &DonorProfile, patient: PatientProfile) -> Candidate {
        Candidate {
            pair: PairCovariates::between(donor, &patient),
            patient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedEntry {
    pub patient: PatientProfile,
    pub pair: PairCovariates,
    /// 1-based position in the run.
    pub sequence_number: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedMatchRun {
    pub donor: DonorProfile,
    pub entries: Vec<RankedEntry>,
}

impl RankedMatchRun {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn from_sorted(donor: &DonorProfile, sorted: Vec<Candidate>) -> RankedMatchRun {
        RankedMatchRun {
            donor: *donor,
            entries: sorted
                .into_iter()
                .enumerate()
                .map(|(k, c)| RankedEntry {
                    patient: c.patient,
                    pair: c.pair,
                    sequence_number: k as u32 + 1,
                })
                .collect(),
        }
    }
}

fn optn_key(a: &Candidate, b: &Candidate) -> Ordering {
    a.pair
        .zone
        .cmp(&b.pair.zone)
        .then(b.pair.blood_match.cmp(&a.pair.blood_match))
        .then(b.patient.las.total_cmp(&a.patient.las))
        .then(b.patient.waiting_time.total_cmp(&a.patient.waiting_time))
        .then(a.patient.id.cmp(&b.patient.id))
}

/// Zone, then blood-match level, then LAS, then waiting time, then patient id.
pub fn rank_optn(donor: &DonorProfile, candidates: &[Candidate]) -> RankedMatchRun {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(optn_key);
    RankedMatchRun::from_sorted(donor, sorted)
}

fn rank_by_index(
    donor: &DonorProfile,
    candidates: &[Candidate],
    beta: &[f64],
    descending: bool,
) -> Result<RankedMatchRun, ModelError> {
    let mut keyed = candidates
        .iter()
        .map(|c| Ok((dot(&covariate_row(donor, &c.patient, &c.pair), beta)?, *c)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    keyed.sort_by(|(ia, a), (ib, b)| {
        let primary = if descending {
            ib.total_cmp(ia)
        } else {
            ia.total_cmp(ib)
        };
        primary.then(a.patient.id.cmp(&b.patient.id))
    });
    Ok(RankedMatchRun::from_sorted(
        donor,
        keyed.into_iter().map(|(_, c)| c).collect(),
    ))
}

/// Descending utility index; ties broken by patient id.
pub fn rank_greedy(
    donor: &DonorProfile,
    candidates: &[Candidate],
    beta: &[f64],
) -> Result<RankedMatchRun, ModelError> {
    rank_by_index(donor, candidates, beta, true)
}

/// Ascending utility index; ties broken by patient id.
pub fn rank_reverse_greedy(
    donor: &DonorProfile,
    candidates: &[Candidate],
    beta: &[f64],
) -> Result<RankedMatchRun, ModelError> {
    rank_by_index(donor, candidates, beta, false)
}

pub fn rank(
    policy: PriorityPolicy,
    donor: &DonorProfile,
    candidates: &[Candidate],
    beta: &[f64],
) -> Result<RankedMatchRun, ModelError> {
    match policy {
        PriorityPolicy::Optn => Ok(rank_optn(donor, candidates)),
        PriorityPolicy::Greedy => rank_greedy(donor, candidates, beta),
        PriorityPolicy::ReverseGreedy => rank_reverse_greedy(donor, candidates, beta),
    }
}
