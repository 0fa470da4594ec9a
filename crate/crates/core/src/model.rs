//! Domain records, the shared covariate layout, and the logistic algebra used
//! by every other module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Euler–Mascheroni constant to double precision.
pub const EULER_GAMMA: f64 = 0.577215664901532;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("covariate layout mismatch: expected {expected} coefficients, got {got}")]
    Layout { expected: usize, got: usize },
    #[error("invalid parameter {name} = {value}: {reason}")]
    Param {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("unknown blood type `{0}`")]
    BloodType(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DonorId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatientId(pub u32);

impl fmt::Display for DonorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BloodType {
    O,
    A,
    B,
    AB,
}

impl BloodType {
    pub const ALL: [BloodType; 4] = [BloodType::O, BloodType::A, BloodType::B, BloodType::AB];

    /// ABO compatibility of a donor organ with a recipient.
    pub fn can_donate_to(self, recipient: BloodType) -> bool {
        match self {
            BloodType::O => true,
            BloodType::A => matches!(recipient, BloodType::A | BloodType::AB),
            BloodType::B => matches!(recipient, BloodType::B | BloodType::AB),
            BloodType::AB => recipient == BloodType::AB,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BloodType::O => "O",
            BloodType::A => "A",
            BloodType::B => "B",
            BloodType::AB => "AB",
        }
    }
}

impl fmt::Display for BloodType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BloodType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "O" => Ok(BloodType::O),
            "A" => Ok(BloodType::A),
            "B" => Ok(BloodType::B),
            "AB" => Ok(BloodType::AB),
            other => Err(ModelError::BloodType(other.to_string())),
        }
    }
}

/// Planar location in nautical miles.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn distance_to(&self, other: &Location) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DonorProfile {
    pub id: DonorId,
    pub age: f64,
    pub weight: f64,
    pub height: f64,
    pub pf_ratio: f64,
    pub heavy_alcohol: bool,
    pub iv_drug: bool,
    pub increased_risk: bool,
    pub blood_type: BloodType,
    pub location: Location,
    /// Number of compatible patients the organ is offered to.
    pub run_size: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub id: PatientId,
    pub las: f64,
    pub waiting_time: f64,
    pub bmi: f64,
    pub female: bool,
    pub diabetic: bool,
    pub prev_transplant: bool,
    pub blood_type: BloodType,
    pub age: f64,
    pub height: f64,
    pub weight: f64,
    pub location: Location,
}

/// Distance band used by the priority rule and the reduced-form dummies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Zone {
    A,
    B,
    C,
    D,
    E,
}

impl Zone {
    /// A: [0,250), B: [250,500), C: [500,1000), D: [1000,1500), E: [1500, ..).
    pub fn from_distance(nm: f64) -> Zone {
        if nm < 250.0 {
            Zone::A
        } else if nm < 500.0 {
            Zone::B
        } else if nm < 1000.0 {
            Zone::C
        } else if nm < 1500.0 {
            Zone::D
        } else {
            Zone::E
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Zone::A => "A",
            Zone::B => "B",
            Zone::C => "C",
            Zone::D => "D",
            Zone::E => "E",
        }
    }
}

impl FromStr for Zone {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" => Ok(Zone::A),
            "B" => Ok(Zone::B),
            "C" => Ok(Zone::C),
            "D" => Ok(Zone::D),
            "E" => Ok(Zone::E),
            other => Err(format!("unknown zone `{other}`")),
        }
    }
}

/// Blood-type match level: 0 incompatible, 1 compatible, 2 identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BloodMatch(pub u8);

impl BloodMatch {
    pub fn between(donor: BloodType, patient: BloodType) -> BloodMatch {
        if donor == patient {
            BloodMatch(2)
        } else if donor.can_donate_to(patient) {
            BloodMatch(1)
        } else {
            BloodMatch(0)
        }
    }

    pub fn is_compatible(self) -> bool {
        self.0 >= 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCovariates {
    pub blood_match: BloodMatch,
    pub distance_nm: f64,
    pub zone: Zone,
    pub age_diff: f64,
    pub height_diff: f64,
    pub weight_diff: f64,
}

impl PairCovariates {
    /// Differences are donor minus patient.
    pub fn between(donor: &DonorProfile, patient: &PatientProfile) -> PairCovariates {
        let distance_nm = donor.location.distance_to(&patient.location);
        PairCovariates {
            blood_match: BloodMatch::between(donor.blood_type, patient.blood_type),
            distance_nm,
            zone: Zone::from_distance(distance_nm),
            age_diff: donor.age - patient.age,
            height_diff: donor.height - patient.height,
            weight_diff: donor.weight - patient.weight,
        }
    }
}

/// Number of entries in a covariate row (and in the utility coefficient vector).
pub const N_COVARIATES: usize = 19;

/// Canonical covariate order: intercept, donor block, patient block, pair block.
pub const COVARIATE_NAMES: [&str; N_COVARIATES] = [
    "intercept",
    "donor_pf_ratio",
    "donor_age",
    "donor_weight",
    "donor_height",
    "donor_iv_drug",
    "donor_heavy_alcohol",
    "donor_increased_risk",
    "las",
    "waiting_time",
    "bmi",
    "female",
    "diabetic",
    "prev_transplant",
    "primary_blood_match",
    "distance_nm",
    "age_diff",
    "height_diff",
    "weight_diff",
];

pub const IDX_INTERCEPT: usize = 0;
pub const IDX_LAS: usize = 8;
pub const IDX_WAITING: usize = 9;
pub const IDX_BLOOD_MATCH: usize = 14;
pub const IDX_DISTANCE: usize = 15;

pub fn covariate_index(name: &str) -> Option<usize> {
    COVARIATE_NAMES.iter().position(|n| *n == name)
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Assembles `(1, donor, patient, pair)` in the canonical order.
pub fn covariate_row(
    donor: &DonorProfile,
    patient: &PatientProfile,
    pair: &PairCovariates,
) -> [f64; N_COVARIATES] {
    [
        1.0,
        donor.pf_ratio,
        donor.age,
        donor.weight,
        donor.height,
        flag(donor.iv_drug),
        flag(donor.heavy_alcohol),
        flag(donor.increased_risk),
        patient.las,
        patient.waiting_time,
        patient.bmi,
        flag(patient.female),
        flag(patient.diabetic),
        flag(patient.prev_transplant),
        pair.blood_match.0 as f64,
        pair.distance_nm,
        pair.age_diff,
        pair.height_diff,
        pair.weight_diff,
    ]
}

pub fn dot(row: &[f64], beta: &[f64]) -> Result<f64, ModelError> {
    if row.len() != beta.len() {
        return Err(ModelError::Layout {
            expected: row.len(),
            got: beta.len(),
        });
    }
    Ok(row.iter().zip(beta).map(|(x, b)| x * b).sum())
}

/// Deterministic part of the acceptance utility, excluding the quality term.
pub fn utility_index(
    donor: &DonorProfile,
    patient: &PatientProfile,
    pair: &PairCovariates,
    beta: &[f64],
) -> Result<f64, ModelError> {
    dot(&covariate_row(donor, patient, pair), beta)
}

/// Unobserved common donor quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quality {
    Low = -1,
    High = 1,
}

impl Quality {
    pub fn value(self) -> f64 {
        self as i8 as f64
    }
}

/// Private binary signal about donor quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Signal {
    Low = -1,
    High = 1,
}

impl Signal {
    pub fn value(self) -> f64 {
        self as i8 as f64
    }

    /// P[signal | quality] for precision `alpha`.
    pub fn likelihood(self, quality: Quality, alpha: f64) -> f64 {
        if self as i8 == quality as i8 {
            alpha
        } else {
            1.0 - alpha
        }
    }
}

/// Parameters of the structural model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Provisional-yes probability.
    pub mu: f64,
    /// Signal precision.
    pub alpha: f64,
    /// Prior probability of high quality.
    pub p: f64,
    /// Utility weight on quality.
    pub gamma: f64,
    /// Utility coefficients in [`COVARIATE_NAMES`] order.
    pub beta: Vec<f64>,
}

/// Utility coefficients of the published full estimates, in canonical order.
/// The intercept slot has no published counterpart. Its value was calibrated
/// on default synthetic populations so the simulated conditional acceptance
/// curve sits near 21% and 8% at positions 1 and 2 and accumulates to about
/// 57% by position 50.
pub const REFERENCE_BETA: [f64; N_COVARIATES] = [
    -15.8,  // intercept (calibrated)
    0.001,  // P/F ratio
    0.005,  // donor age
    -0.070, // donor weight
    0.071,  // donor height
    -0.014, // IV drug use
    -0.034, // heavy alcohol
    -0.149, // increased risk
    0.033,  // LAS
    -0.024, // waiting time
    0.145,  // BMI
    -0.053, // female
    0.130,  // diabetic
    0.439,  // previous transplant
    0.775,  // primary blood type match
    -0.003, // distance (per NM)
    0.027,  // age difference
    0.076,  // height difference
    -0.064, // weight difference
];

impl ModelParams {
    pub fn reference() -> ModelParams {
        ModelParams {
            mu: 0.958,
            alpha: 0.850,
            p: 0.383,
            gamma: 4.934,
            beta: REFERENCE_BETA.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let open = |name, v: f64, lo: f64, hi: f64, reason| {
            if v > lo && v < hi {
                Ok(())
            } else {
                Err(ModelError::Param {
                    name,
                    value: v,
                    reason,
                })
            }
        };
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(ModelError::Param {
                name: "mu",
                value: self.mu,
                reason: "must lie in (0, 1]",
            });
        }
        open("alpha", self.alpha, 0.5, 1.0, "must lie in (0.5, 1)")?;
        open("p", self.p, 0.0, 1.0, "must lie in (0, 1)")?;
        if !self.gamma.is_finite() {
            return Err(ModelError::Param {
                name: "gamma",
                value: self.gamma,
                reason: "must be finite",
            });
        }
        if self.beta.len() != N_COVARIATES {
            return Err(ModelError::Layout {
                expected: N_COVARIATES,
                got: self.beta.len(),
            });
        }
        if let Some(b) = self.beta.iter().find(|b| !b.is_finite()) {
            return Err(ModelError::Param {
                name: "beta",
                value: *b,
                reason: "must be finite",
            });
        }
        Ok(())
    }
}

/// Standard logistic CDF, stable over the whole real line.
pub fn logistic_cdf(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln F(x)` without cancellation in either tail.
pub fn log_logistic_cdf(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `ln(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(1 + exp(x))` for any finite `x`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Probability that `delta >= -(index + gamma * expected_quality)`.
pub fn accept_probability(index: f64, expected_quality: f64, gamma: f64) -> f64 {
    logistic_cdf(index + gamma * expected_quality)
}

/// Expected maximum of accept/reject before the shocks are drawn.
pub fn exante_accept_utility(index: f64, quality: Quality, gamma: f64) -> f64 {
    EULER_GAMMA + softplus(index + gamma * quality.value())
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn logistic_is_monotone(mut xs in proptest::collection::vec(-50.0f64..50.0, 2..40)) {
            xs.sort_by(f64::total_cmp);
            for w in xs.windows(2) {
                prop_assert!(logistic_cdf(w[0]) <= logistic_cdf(w[1]));
            }
        }

        #[test]
        fn threshold_paths_agree(index in -20.0f64..20.0, eq in -1.0f64..1.0, gamma in -8.0f64..8.0) {
            let v = index + gamma * eq;
            prop_assert!((accept_probability(index, eq, gamma) - logistic_cdf(v)).abs() < 1e-12);
        }

        #[test]
        fn exante_slope_one_asymptote(a in 40.0f64..200.0, b in 40.0f64..200.0) {
            let da = exante_accept_utility(a, Quality::High, 0.0) - exante_accept_utility(b, Quality::High, 0.0);
            prop_assert!((da - (a - b)).abs() < 1e-6);
        }

        #[test]
        fn index_matches_elementwise_oracle(row in proptest::collection::vec(-100.0f64..100.0, N_COVARIATES),
                                             beta in proptest::collection::vec(-3.0f64..3.0, N_COVARIATES)) {
            let mut oracle = 0.0;
            for k in 0..N_COVARIATES {
                oracle += row[k] * beta[k];
            }
            prop_assert!((dot(&row, &beta).unwrap() - oracle).abs() < 1e-12 * (1.0 + oracle.abs()) * 100.0);
        }

        #[test]
        fn index_is_linear_in_rows(r1 in proptest::collection::vec(-10.0f64..10.0, N_COVARIATES),
                                   r2 in proptest::collection::vec(-10.0f64..10.0, N_COVARIATES),
                                   beta in proptest::collection::vec(-3.0f64..3.0, N_COVARIATES)) {
            let mut a = r1.clone();
            let mut b = r2.clone();
            a[0] = 1.0;
            b[0] = 1.0;
            // Summing two rows doubles the constant slot; subtract one intercept back out.
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = dot(&sum, &beta).unwrap();
            let rhs = dot(&a, &beta).unwrap() + dot(&b, &beta).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
            let mut single = sum.clone();
            single[0] = 1.0;
            prop_assert!((dot(&single, &beta).unwrap() - (rhs - beta[0])).abs() < 1e-9);
        }
    }
}
