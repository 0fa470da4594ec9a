//! Synthetic donors and patients drawn from marginal summary moments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::truncnorm::{Moments, TruncatedNormal};
use super::ConfigError;
use crate::model::{
    BloodType, DonorId, DonorProfile, Location, ModelParams, PatientId, PatientProfile,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatientMoments {
    pub las: Moments,
    pub waiting_time: Moments,
    pub bmi: Moments,
    pub age: Moments,
    /// Not reported in the summary table; weight follows from BMI and height.
    pub height: Moments,
    pub female: f64,
    pub diabetic: f64,
    pub prev_transplant: f64,
}

impl Default for PatientMoments {
    fn default() -> Self {
        PatientMoments {
            las: Moments::new(43.3, 14.3, 5.9, 95.4),
            waiting_time: Moments::new(3.4, 7.5, 0.0, 87.1),
            bmi: Moments::new(25.5, 4.5, 15.0, 37.0),
            age: Moments::new(55.9, 13.5, 12.0, 79.0),
            height: Moments::new(170.0, 9.5, 140.0, 200.0),
            female: 0.517,
            diabetic: 0.168,
            prev_transplant: 0.036,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DonorMoments {
    pub age: Moments,
    pub weight: Moments,
    pub height: Moments,
    pub pf_ratio: Moments,
    pub heavy_alcohol: f64,
    pub iv_drug: f64,
    pub increased_risk: f64,
}

impl Default for DonorMoments {
    fn default() -> Self {
        DonorMoments {
            age: Moments::new(38.2, 14.1, 7.0, 75.0),
            weight: Moments::new(79.0, 20.8, 23.5, 170.7),
            height: Moments::new(169.5, 10.8, 119.0, 198.5),
            pf_ratio: Moments::new(419.3, 102.3, 80.0, 1400.0),
            heavy_alcohol: 0.177,
            iv_drug: 0.060,
            increased_risk: 0.212,
        }
    }
}

/// ABO frequencies; US population shares by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BloodFrequencies {
    pub o: f64,
    pub a: f64,
    pub b: f64,
    pub ab: f64,
}

impl Default for BloodFrequencies {
    fn default() -> Self {
        BloodFrequencies {
            o: 0.45,
            a: 0.40,
            b: 0.11,
            ab: 0.04,
        }
    }
}

impl BloodFrequencies {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> BloodType {
        let total = self.o + self.a + self.b + self.ab;
        let u = rng.random::<f64>() * total;
        if u < self.o {
            BloodType::O
        } else if u < self.o + self.a {
            BloodType::A
        } else if u < self.o + self.a + self.b {
            BloodType::B
        } else {
            BloodType::AB
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_donors: usize,
    pub n_patients: usize,
    /// Overrides the mean of `run_size`.
    pub mean_run_size: f64,
    pub run_size: Moments,
    pub patient: PatientMoments,
    pub donor: DonorMoments,
    pub blood_type: BloodFrequencies,
    /// Radius of the disk on which donors and patients are placed. A uniform
    /// disk of radius R has mean pairwise distance 128R/(45 pi), so 274 NM
    /// gives about 248 NM.
    pub region_radius_nm: f64,
    pub truth: ModelParams,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_donors: 548,
            n_patients: 1348,
            mean_run_size: 59.8,
            run_size: Moments::new(59.8, 48.4, 1.0, 222.0),
            patient: PatientMoments::default(),
            donor: DonorMoments::default(),
            blood_type: BloodFrequencies::default(),
            region_radius_nm: 274.0,
            truth: ModelParams::reference(),
            seed: 0,
        }
    }
}

fn check_share(field: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::Invalid {
            field: field.to_string(),
            reason: format!("{v} is not a probability"),
        })
    }
}

/// Fitted samplers for every continuous field.
struct Samplers {
    las: TruncatedNormal,
    waiting_time: TruncatedNormal,
    bmi: TruncatedNormal,
    patient_age: TruncatedNormal,
    patient_height: TruncatedNormal,
    donor_age: TruncatedNormal,
    donor_weight: TruncatedNormal,
    donor_height: TruncatedNormal,
    pf_ratio: TruncatedNormal,
    run_size: TruncatedNormal,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, reason: &str| ConfigError::Invalid {
            field: field.to_string(),
            reason: reason.to_string(),
        };
        if self.n_donors == 0 {
            return Err(invalid("n_donors", "must be at least 1"));
        }
        if self.n_patients == 0 {
            return Err(invalid("n_patients", "must be at least 1"));
        }
        if !(self.mean_run_size.is_finite() && self.mean_run_size > 0.0) {
            return Err(invalid("mean_run_size", "must be positive"));
        }
        if !(self.region_radius_nm.is_finite() && self.region_radius_nm >= 0.0) {
            return Err(invalid("region_radius_nm", "must be nonnegative"));
        }
        let p = &self.patient;
        check_share("patient.female", p.female)?;
        check_share("patient.diabetic", p.diabetic)?;
        check_share("patient.prev_transplant", p.prev_transplant)?;
        let d = &self.donor;
        check_share("donor.heavy_alcohol", d.heavy_alcohol)?;
        check_share("donor.iv_drug", d.iv_drug)?;
        check_share("donor.increased_risk", d.increased_risk)?;
        let b = &self.blood_type;
        for (name, v) in [("o", b.o), ("a", b.a), ("b", b.b), ("ab", b.ab)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(
                    &format!("blood_type.{name}"),
                    "must be nonnegative",
                ));
            }
        }
        if b.o + b.a + b.b + b.ab <= 0.0 {
            return Err(invalid("blood_type", "frequencies sum to zero"));
        }
        self.truth.validate().map_err(|e| ConfigError::Invalid {
            field: "truth".to_string(),
            reason: e.to_string(),
        })?;
        self.samplers().map(|_| ())
    }

    fn samplers(&self) -> Result<Samplers, ConfigError> {
        let p = &self.patient;
        let d = &self.donor;
        let run = Moments {
            mean: self.mean_run_size,
            ..self.run_size
        };
        Ok(Samplers {
            las: TruncatedNormal::fit("patient.las", &p.las)?,
            waiting_time: TruncatedNormal::fit("patient.waiting_time", &p.waiting_time)?,
            bmi: TruncatedNormal::fit("patient.bmi", &p.bmi)?,
            patient_age: TruncatedNormal::fit("patient.age", &p.age)?,
            patient_height: TruncatedNormal::fit("patient.height", &p.height)?,
            donor_age: TruncatedNormal::fit("donor.age", &d.age)?,
            donor_weight: TruncatedNormal::fit("donor.weight", &d.weight)?,
            donor_height: TruncatedNormal::fit("donor.height", &d.height)?,
            pf_ratio: TruncatedNormal::fit("donor.pf_ratio", &d.pf_ratio)?,
            run_size: TruncatedNormal::fit("run_size", &run)?,
        })
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

fn point_in_disk<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Location {
    let r = radius * rng.random::<f64>().sqrt();
    let t = 2.0 * std::f64::consts::PI * rng.random::<f64>();
    Location {
        x: r * t.cos(),
        y: r * t.sin(),
    }
}

/// Donors and patients only; ids start at 1. All draws come from one
/// sequential generator seeded by `config.seed`.
pub fn generate_profiles(
    config: &GeneratorConfig,
) -> Result<(Vec<DonorProfile>, Vec<PatientProfile>), ConfigError> {
    config.validate()?;
    let s = config.samplers()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bern = |rng: &mut ChaCha8Rng, q: f64| rng.random::<f64>() < q;

    let mut patients = Vec::with_capacity(config.n_patients);
    for k in 0..config.n_patients {
        let las = s.las.sample(&mut rng);
        let waiting_time = s.waiting_time.sample(&mut rng);
        let bmi = s.bmi.sample(&mut rng);
        let age = s.patient_age.sample(&mut rng);
        let height = s.patient_height.sample(&mut rng);
        let m = height / 100.0;
        patients.push(PatientProfile {
            id: PatientId(k as u32 + 1),
            las,
            waiting_time,
            bmi,
            female: bern(&mut rng, config.patient.female),
            diabetic: bern(&mut rng, config.patient.diabetic),
            prev_transplant: bern(&mut rng, config.patient.prev_transplant),
            blood_type: config.blood_type.draw(&mut rng),
            age,
            height,
            weight: bmi * m * m,
            location: point_in_disk(&mut rng, config.region_radius_nm),
        });
    }

    let mut donors = Vec::with_capacity(config.n_donors);
    for k in 0..config.n_donors {
        let age = s.donor_age.sample(&mut rng);
        let weight = s.donor_weight.sample(&mut rng);
        let height = s.donor_height.sample(&mut rng);
        let pf_ratio = s.pf_ratio.sample(&mut rng);
        let run_size = s.run_size.sample(&mut rng).round().max(1.0) as u32;
        donors.push(DonorProfile {
            id: DonorId(k as u32 + 1),
            age,
            weight,
            height,
            pf_ratio,
            heavy_alcohol: bern(&mut rng, config.donor.heavy_alcohol),
            iv_drug: bern(&mut rng, config.donor.iv_drug),
            increased_risk: bern(&mut rng, config.donor.increased_risk),
            blood_type: config.blood_type.draw(&mut rng),
            location: point_in_disk(&mut rng, config.region_radius_nm),
            run_size,
        });
    }
    Ok((donors, patients))
}
