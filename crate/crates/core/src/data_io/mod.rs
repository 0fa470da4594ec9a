//! Synthetic populations, offer datasets, and their CSV persistence.

mod bundle_csv;
pub mod generator;
pub mod truncnorm;

use std::collections::HashMap;
use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

use crate::beliefs::InfoRegime;
use crate::model::{
    DonorId, DonorProfile, ModelParams, PairCovariates, PatientId, PatientProfile, COVARIATE_NAMES,
};
use crate::policies::PriorityPolicy;
use crate::simulator::{simulate_donor, FinalDecision, Population, RngStream, SimError};

pub use bundle_csv::{load_bundle, manifest_hash, render_bundle, save_bundle, RenderedBundle};
pub use generator::{
    generate_profiles, BloodFrequencies, DonorMoments, GeneratorConfig, PatientMoments,
};
pub use truncnorm::{Moments, TruncatedNormal};

pub const SCHEMA_VERSION: u32 = 1;
pub const DONORS_FILE: &str = "donors.csv";
pub const PATIENTS_FILE: &str = "patients.csv";
pub const OFFERS_FILE: &str = "offers.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("infeasible moments for `{field}`: {reason}")]
    Moments { field: String, reason: String },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{file} line {line}: bad value `{value}` in column `{column}`: {reason}")]
    Parse {
        file: String,
        line: u64,
        column: String,
        value: String,
        reason: String,
    },
    #[error("{file} line {line}: duplicate id {id}")]
    DuplicateId { file: String, line: u64, id: u32 },
    #[error("offers.csv line {line}: unknown donor id {id}")]
    UnknownDonor { line: u64, id: u32 },
    #[error("offers.csv line {line}: unknown patient id {id}")]
    UnknownPatient { line: u64, id: u32 },
    #[error("offers.csv line {line}: donor {donor}: {reason}")]
    Sequence {
        line: u64,
        donor: u32,
        reason: String,
    },
    #[error("manifest.txt line {line}: {reason}")]
    Manifest { line: u64, reason: String },
    #[error("unsupported schema version {found}")]
    SchemaVersion { found: String },
    #[error("{file} does not match its recorded checksum")]
    Checksum { file: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One donor-patient offer as stored in `offers.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Offer {
    pub donor_id: DonorId,
    pub patient_id: PatientId,
    pub sequence_number: u32,
    pub provisional_yes: bool,
    /// `None` for provisional-no offers.
    pub final_decision: Option<FinalDecision>,
    pub pair: PairCovariates,
}

/// Ordered `key=value` metadata. Keys keep insertion order on disk.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Manifest {
        let mut m = Manifest::default();
        m.set("schema_version", SCHEMA_VERSION.to_string());
        m
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        self.get("seed").and_then(|s| s.parse().ok())
    }

    pub fn set_truth(&mut self, truth: &ModelParams) {
        self.set("truth.mu", truth.mu.to_string());
        self.set("truth.alpha", truth.alpha.to_string());
        self.set("truth.p", truth.p.to_string());
        self.set("truth.gamma", truth.gamma.to_string());
        for (name, b) in COVARIATE_NAMES.iter().zip(&truth.beta) {
            self.set(&format!("truth.beta.{name}"), b.to_string());
        }
    }

    /// Truth parameters when the bundle is synthetic.
    pub fn truth(&self) -> Result<Option<ModelParams>, DataError> {
        if self.get("truth.mu").is_none() {
            return Ok(None);
        }
        let read = |key: String| -> Result<f64, DataError> {
            let line = self
                .entries
                .iter()
                .position(|(k, _)| *k == key)
                .map(|k| k as u64 + 1)
                .unwrap_or(0);
            let raw = self.get(&key).ok_or_else(|| DataError::Manifest {
                line,
                reason: format!("missing `{key}`"),
            })?;
            raw.parse().map_err(|_| DataError::Manifest {
                line,
                reason: format!("`{key}` is not a number"),
            })
        };
        let beta = COVARIATE_NAMES
            .iter()
            .map(|n| read(format!("truth.beta.{n}")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Some(ModelParams {
            mu: read("truth.mu".into())?,
            alpha: read("truth.alpha".into())?,
            p: read("truth.p".into())?,
            gamma: read("truth.gamma".into())?,
            beta,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetBundle {
    pub donors: Vec<DonorProfile>,
    pub patients: Vec<PatientProfile>,
    pub offers: Vec<Offer>,
    pub manifest: Manifest,
}

/// A patient's offer joined with their profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfferObservation {
    pub patient: PatientProfile,
    pub pair: PairCovariates,
    pub sequence_number: u32,
    pub provisional_yes: bool,
    pub final_decision: Option<FinalDecision>,
}

/// All offers of one donor in sequence order.
#[derive(Debug, Clone, PartialEq)]
pub struct DonorRun {
    pub donor: DonorProfile,
    pub offers: Vec<OfferObservation>,
}

impl DonorRun {
    pub fn accepted(&self) -> bool {
        self.offers
            .last()
            .is_some_and(|o| o.final_decision == Some(FinalDecision::Accept))
    }
}

/// File line of the offer at `index` (the header is line 1).
fn offer_line(index: usize) -> u64 {
    index as u64 + 2
}

impl DatasetBundle {
    /// Checks ids, references, sequence numbering and decision structure.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut donor_ids = HashMap::new();
        for (k, d) in self.donors.iter().enumerate() {
            if donor_ids.insert(d.id, k).is_some() {
                return Err(DataError::DuplicateId {
                    file: DONORS_FILE.into(),
                    line: offer_line(k),
                    id: d.id.0,
                });
            }
        }
        let mut patient_ids = HashMap::new();
        for (k, p) in self.patients.iter().enumerate() {
            if patient_ids.insert(p.id, k).is_some() {
                return Err(DataError::DuplicateId {
                    file: PATIENTS_FILE.into(),
                    line: offer_line(k),
                    id: p.id.0,
                });
            }
        }

        let mut finished: HashMap<DonorId, ()> = HashMap::new();
        let mut current: Option<(DonorId, u32, bool)> = None;
        for (k, o) in self.offers.iter().enumerate() {
            let line = offer_line(k);
            if !donor_ids.contains_key(&o.donor_id) {
                return Err(DataError::UnknownDonor {
                    line,
                    id: o.donor_id.0,
                });
            }
            if !patient_ids.contains_key(&o.patient_id) {
                return Err(DataError::UnknownPatient {
                    line,
                    id: o.patient_id.0,
                });
            }
            let seq_err = |reason: &str| DataError::Sequence {
                line,
                donor: o.donor_id.0,
                reason: reason.to_string(),
            };
            match o.final_decision {
                Some(_) if !o.provisional_yes => {
                    return Err(seq_err("final decision on a provisional-no offer"))
                }
                None if o.provisional_yes => {
                    return Err(seq_err("provisional-yes offer without a final decision"))
                }
                _ => {}
            }
            let expected = match current {
                Some((d, seq, accepted)) if d == o.donor_id => {
                    if accepted {
                        return Err(seq_err("offer after the final acceptance"));
                    }
                    seq + 1
                }
                Some((d, _, _)) => {
                    finished.insert(d, ());
                    if finished.contains_key(&o.donor_id) {
                        return Err(seq_err("offers of this donor are not contiguous"));
                    }
                    1
                }
                None => 1,
            };
            if o.sequence_number != expected {
                return Err(seq_err(&format!(
                    "expected sequence number {expected}, found {}",
                    o.sequence_number
                )));
            }
            current = Some((
                o.donor_id,
                o.sequence_number,
                o.final_decision == Some(FinalDecision::Accept),
            ));
        }
        Ok(())
    }

    /// Validates, then joins offers with profiles. Every donor appears in
    /// file order, including donors without offers.
    pub fn donor_runs(&self) -> Result<Vec<DonorRun>, DataError> {
        self.validate()?;
        let patients: HashMap<PatientId, &PatientProfile> =
            self.patients.iter().map(|p| (p.id, p)).collect();
        let mut by_donor: HashMap<DonorId, Vec<OfferObservation>> = HashMap::new();
        for o in &self.offers {
            by_donor
                .entry(o.donor_id)
                .or_default()
                .push(OfferObservation {
                    patient: *patients[&o.patient_id],
                    pair: o.pair,
                    sequence_number: o.sequence_number,
                    provisional_yes: o.provisional_yes,
                    final_decision: o.final_decision,
                });
        }
        Ok(self
            .donors
            .iter()
            .map(|d| DonorRun {
                donor: *d,
                offers: by_donor.remove(&d.id).unwrap_or_default(),
            })
            .collect())
    }
}

/// Profiles only, with the generating configuration recorded in the manifest.
pub fn generate_population(config: &GeneratorConfig) -> Result<DatasetBundle, DataError> {
    let (donors, patients) = generate_profiles(config)?;
    let mut manifest = Manifest::new();
    manifest.set("seed", config.seed.to_string());
    manifest.set("config_hash", config.hash());
    manifest.set("n_donors", donors.len().to_string());
    manifest.set("n_patients", patients.len().to_string());
    Ok(DatasetBundle {
        donors,
        patients,
        offers: Vec::new(),
        manifest,
    })
}

/// Simulates one match run per donor (replication 0 of `seed`) and stores
/// the offers, cutting accepted runs at the acceptance row.
pub fn generate_decisions(
    bundle: &DatasetBundle,
    truth: &ModelParams,
    policy: PriorityPolicy,
    regime: InfoRegime,
    seed: u64,
) -> Result<DatasetBundle, DataError> {
    truth.validate().map_err(SimError::from)?;
    let population = Population::new(bundle.donors.clone(), bundle.patients.clone());
    let runs = population
        .donors
        .par_iter()
        .map(|donor| -> Result<(Vec<Offer>, bool), SimError> {
            let stream = RngStream::new(seed, donor.id, 0);
            let sim = simulate_donor(&population, donor, truth, policy, regime, &stream)?;
            let stop = sim.outcome.accepted_sequence().unwrap_or(u32::MAX);
            let offers = sim
                .ranked
                .entries
                .iter()
                .zip(&sim.outcome.records)
                .take_while(|(e, _)| e.sequence_number <= stop)
                .map(|(e, r)| Offer {
                    donor_id: donor.id,
                    patient_id: e.patient.id,
                    sequence_number: e.sequence_number,
                    provisional_yes: r.provisional,
                    final_decision: r.decision,
                    pair: e.pair,
                })
                .collect();
            Ok((offers, sim.shrunk))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let shrunk = runs.iter().filter(|(_, s)| *s).count();
    if shrunk > 0 {
        log::warn!("{shrunk} donors had fewer compatible patients than their run size");
    }

    let mut manifest = bundle.manifest.clone();
    manifest.set("decision_seed", seed.to_string());
    manifest.set("policy", policy.to_string());
    manifest.set("regime", regime.to_string());
    manifest.set_truth(truth);
    let out = DatasetBundle {
        donors: bundle.donors.clone(),
        patients: bundle.patients.clone(),
        offers: runs.into_iter().flat_map(|(o, _)| o).collect(),
        manifest,
    };
    out.validate()?;
    Ok(out)
}

/// Population plus decisions under the configured truth, policy and regime.
pub fn generate_dataset(
    config: &GeneratorConfig,
    policy: PriorityPolicy,
    regime: InfoRegime,
) -> Result<DatasetBundle, DataError> {
    let population = generate_population(config)?;
    generate_decisions(&population, &config.truth, policy, regime, config.seed)
}
