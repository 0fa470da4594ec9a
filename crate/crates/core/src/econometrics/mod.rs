//! Reduced-form regressions on offer data: OLS of the sequence number and
//! logits of provisional and final acceptance, with robust standard errors.

mod numerics;

use std::collections::HashSet;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::data_io::DonorRun;
use crate::model::{covariate_row, Zone, COVARIATE_NAMES};
use crate::simulator::FinalDecision;

pub use numerics::{collinear_columns, logit_irls, ols, IrlsOptions, LinearFit, LogitFit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EconError {
    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("perfect separation: coefficient diverged to {coefficient}")]
    Separation { coefficient: f64 },
    #[error("IRLS did not converge in {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("{rows} rows but {outcomes} outcomes")]
    Dimension { rows: usize, outcomes: usize },
    #[error("{rows} observations cannot identify {columns} coefficients")]
    TooFewObservations { rows: usize, columns: usize },
    #[error("non-finite value in the design")]
    NonFinite,
    #[error("logit outcome must be 0 or 1")]
    NonBinary,
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{0}` listed twice")]
    DuplicateVariable(String),
    #[error("csv output failed: {0}")]
    Csv(String),
}

pub const SEQUENCE: &str = "sequence_number";
pub const PROVISIONAL_YES: &str = "provisional_yes";
pub const FINAL_YES: &str = "final_yes";
pub const ZONE_DUMMIES: [&str; 4] = ["zone_b", "zone_c", "zone_d", "zone_e"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Linear,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFilter {
    AllOffers,
    /// Provisional-yes offers with an observed final decision; the sequence
    /// number is replaced by the rank among these offers within the run.
    ProvisionalYesReordered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSpec {
    pub outcome: String,
    /// An intercept is always added in front.
    pub regressors: Vec<String>,
    pub family: Family,
    pub filter: SampleFilter,
}

/// Sequence number, every non-intercept covariate, and the zone dummies.
pub fn full_controls() -> Vec<String> {
    std::iter::once(SEQUENCE)
        .chain(COVARIATE_NAMES[1..].iter().copied())
        .chain(ZONE_DUMMIES)
        .map(String::from)
        .collect()
}

impl RegressionSpec {
    pub fn sequence_ols() -> RegressionSpec {
        RegressionSpec {
            outcome: SEQUENCE.into(),
            regressors: full_controls().into_iter().skip(1).collect(),
            family: Family::Linear,
            filter: SampleFilter::AllOffers,
        }
    }

    pub fn provisional_logit() -> RegressionSpec {
        RegressionSpec {
            outcome: PROVISIONAL_YES.into(),
            regressors: full_controls(),
            family: Family::Logit,
            filter: SampleFilter::AllOffers,
        }
    }

    pub fn final_logit() -> RegressionSpec {
        RegressionSpec {
            outcome: FINAL_YES.into(),
            regressors: full_controls(),
            family: Family::Logit,
            filter: SampleFilter::ProvisionalYesReordered,
        }
    }

    fn validate(&self) -> Result<(), EconError> {
        let known: HashSet<String> = full_controls()
            .into_iter()
            .chain([PROVISIONAL_YES.to_string(), FINAL_YES.to_string()])
            .collect();
        let mut seen = HashSet::new();
        for v in std::iter::once(&self.outcome).chain(&self.regressors) {
            if !known.contains(v) {
                return Err(EconError::UnknownVariable(v.clone()));
            }
        }
        for v in &self.regressors {
            if !seen.insert(v) || *v == self.outcome {
                return Err(EconError::DuplicateVariable(v.clone()));
            }
        }
        Ok(())
    }
}

/// Named columns for the selected sample.
struct Frame {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Frame {
    fn column(&self, name: &str) -> &[f64] {
        let k = self
            .names
            .iter()
            .position(|n| n == name)
            .expect("validated name");
        &self.columns[k]
    }
}

fn build_frame(runs: &[DonorRun], filter: SampleFilter) -> Frame {
    let mut names: Vec<String> = vec![SEQUENCE.into(), PROVISIONAL_YES.into(), FINAL_YES.into()];
    names.extend(COVARIATE_NAMES[1..].iter().map(|s| s.to_string()));
    names.extend(ZONE_DUMMIES.iter().map(|s| s.to_string()));
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for run in runs {
        let mut rank = 0u32;
        for o in &run.offers {
            let seq = match filter {
                SampleFilter::AllOffers => o.sequence_number,
                SampleFilter::ProvisionalYesReordered => {
                    if !o.provisional_yes || o.final_decision.is_none() {
                        continue;
                    }
                    rank += 1;
                    rank
                }
            };
            let row = covariate_row(&run.donor, &o.patient, &o.pair);
            let mut values = vec![
                seq as f64,
                o.provisional_yes as u8 as f64,
                (o.final_decision == Some(FinalDecision::Accept)) as u8 as f64,
            ];
            values.extend_from_slice(&row[1..]);
            for z in [Zone::B, Zone::C, Zone::D, Zone::E] {
                values.push((o.pair.zone == z) as u8 as f64);
            }
            for (c, v) in columns.iter_mut().zip(values) {
                c.push(v);
            }
        }
    }
    Frame { names, columns }
}

/// One fitted column of a regression table.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    pub outcome: String,
    pub family: Family,
    /// Intercept first, then the regressors in the order listed.
    pub names: Vec<String>,
    /// NaN for regressors dropped before fitting.
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// R² for linear fits, McFadden pseudo-R² for logits.
    pub fit_statistic: f64,
    pub n_obs: usize,
    /// Dropped regressors with the reason.
    pub dropped: Vec<(String, String)>,
}

impl CoefficientTable {
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        let k = self.names.iter().position(|n| n == name)?;
        Some((self.estimates[k], self.std_errors[k]))
    }

    pub fn t_stat(&self, name: &str) -> Option<f64> {
        self.get(name).map(|(b, se)| b / se)
    }
}

struct Design {
    x: DMatrix<f64>,
    y: DVector<f64>,
    kept: Vec<String>,
    dropped: Vec<(String, String)>,
}

/// Assembles the design, dropping dummy columns that are identically zero
/// and, for logits, zone dummies whose rows all share one outcome (those
/// rows are dropped as well, since they carry no information).
fn design(spec: &RegressionSpec, runs: &[DonorRun]) -> Result<Design, EconError> {
    spec.validate()?;
    let frame = build_frame(runs, spec.filter);
    let y_all = frame.column(&spec.outcome).to_vec();
    let mut keep_row = vec![true; y_all.len()];
    let mut dropped = Vec::new();
    let mut kept = Vec::new();
    for name in &spec.regressors {
        let col = frame.column(name);
        let is_zone = ZONE_DUMMIES.contains(&name.as_str());
        if is_zone && col.iter().all(|v| *v == 0.0) {
            dropped.push((name.clone(), "no observations".into()));
            continue;
        }
        if is_zone && spec.family == Family::Logit {
            let ys: Vec<f64> = col
                .iter()
                .zip(&y_all)
                .filter(|(d, _)| **d == 1.0)
                .map(|(_, y)| *y)
                .collect();
            if ys.iter().all(|y| *y == ys[0]) {
                for (k, d) in col.iter().enumerate() {
                    if *d == 1.0 {
                        keep_row[k] = false;
                    }
                }
                dropped.push((
                    name.clone(),
                    format!("predicts outcome {} perfectly", ys[0]),
                ));
                continue;
            }
        }
        kept.push(name.clone());
    }
    let rows: Vec<usize> = (0..y_all.len()).filter(|k| keep_row[*k]).collect();
    let cols: Vec<&[f64]> = kept.iter().map(|n| frame.column(n)).collect();
    let x = DMatrix::from_fn(rows.len(), kept.len() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            cols[j - 1][rows[i]]
        }
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|k| y_all[*k]));
    let mut names = vec!["intercept".to_string()];
    names.extend(kept.iter().cloned());
    let dependent = collinear_columns(&x);
    if !dependent.is_empty() {
        return Err(EconError::RankDeficient {
            columns: dependent.into_iter().map(|j| names[j].clone()).collect(),
        });
    }
    Ok(Design {
        x,
        y,
        kept: names,
        dropped,
    })
}

fn assemble(
    spec: &RegressionSpec,
    d: Design,
    coef: &DVector<f64>,
    se: &DVector<f64>,
    fit_statistic: f64,
) -> CoefficientTable {
    let mut names = vec!["intercept".to_string()];
    names.extend(spec.regressors.iter().cloned());
    let mut estimates = vec![f64::NAN; names.len()];
    let mut std_errors = vec![f64::NAN; names.len()];
    for (j, name) in d.kept.iter().enumerate() {
        let k = names.iter().position(|n| n == name).expect("kept name");
        estimates[k] = coef[j];
        std_errors[k] = se[j];
    }
    CoefficientTable {
        outcome: spec.outcome.clone(),
        family: spec.family,
        names,
        estimates,
        std_errors,
        fit_statistic,
        n_obs: d.y.len(),
        dropped: d.dropped,
    }
}

pub fn fit_linear(spec: &RegressionSpec, runs: &[DonorRun]) -> Result<CoefficientTable, EconError> {
    let d = design(spec, runs)?;
    let f = ols(&d.x, &d.y, &d.kept)?;
    let se = f.std_errors();
    Ok(assemble(spec, d, &f.coefficients, &se, f.r_squared))
}

pub fn fit_logit(spec: &RegressionSpec, runs: &[DonorRun]) -> Result<CoefficientTable, EconError> {
    let d = design(spec, runs)?;
    let f = logit_irls(&d.x, &d.y, &IrlsOptions::default())?;
    let se = f.std_errors();
    Ok(assemble(
        spec,
        d,
        &f.coefficients,
        &se,
        f.pseudo_r_squared(),
    ))
}

pub fn fit_spec(spec: &RegressionSpec, runs: &[DonorRun]) -> Result<CoefficientTable, EconError> {
    match spec.family {
        Family::Linear => fit_linear(spec, runs),
        Family::Logit => fit_logit(spec, runs),
    }
}

/// The three reduced-form columns: sequence number (OLS), provisional yes
/// (logit), final yes among provisional-yes offers (logit).
pub fn reduced_form(runs: &[DonorRun]) -> Result<[CoefficientTable; 3], EconError> {
    Ok([
        fit_linear(&RegressionSpec::sequence_ols(), runs)?,
        fit_logit(&RegressionSpec::provisional_logit(), runs)?,
        fit_logit(&RegressionSpec::final_logit(), runs)?,
    ])
}

fn stars(b: f64, se: f64) -> &'static str {
    let t = (b / se).abs();
    if t > 2.576 {
        "***"
    } else if t > 1.960 {
        "**"
    } else if t > 1.645 {
        "*"
    } else {
        ""
    }
}

/// Row layout: each variable gets an estimate row and a standard-error row.
/// Variables absent from a column, or dropped from it, show "-".
pub fn write_reduced_form_csv<W: Write>(
    out: W,
    tables: &[CoefficientTable],
) -> Result<(), EconError> {
    let csv_err = |e: csv::Error| EconError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["Variable".to_string()];
    header.extend(
        tables
            .iter()
            .enumerate()
            .map(|(k, t)| format!("({}) {}", k + 1, t.outcome)),
    );
    w.write_record(&header).map_err(csv_err)?;
    let mut order: Vec<String> = vec![SEQUENCE.to_string()];
    for t in tables {
        for n in &t.names {
            if !order.contains(n) && n != "intercept" {
                order.push(n.clone());
            }
        }
    }
    order.push("intercept".into());
    for name in &order {
        let mut est = vec![name.clone()];
        let mut se = vec![String::new()];
        for t in tables {
            match t.get(name) {
                Some((b, s)) if b.is_finite() => {
                    est.push(format!("{b:.4}{}", stars(b, s)));
                    se.push(format!("({s:.4})"));
                }
                _ => {
                    est.push("-".into());
                    se.push(String::new());
                }
            }
        }
        w.write_record(&est).map_err(csv_err)?;
        w.write_record(&se).map_err(csv_err)?;
    }
    let mut n = vec!["Observations".to_string()];
    let mut r2 = vec!["R2 / pseudo-R2".to_string()];
    for t in tables {
        n.push(t.n_obs.to_string());
        r2.push(format!("{:.4}", t.fit_statistic));
    }
    w.write_record(&n).map_err(csv_err)?;
    w.write_record(&r2).map_err(csv_err)?;
    w.flush().map_err(|e| EconError::Csv(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beliefs::InfoRegime;
    use crate::data_io::{generate_dataset, GeneratorConfig};
    use crate::policies::PriorityPolicy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn runs(regime: InfoRegime, seed: u64) -> Vec<DonorRun> {
        let cfg = GeneratorConfig {
            seed,
            ..Default::default()
        };
        generate_dataset(&cfg, PriorityPolicy::Optn, regime)
            .unwrap()
            .donor_runs()
            .unwrap()
    }

    #[test]
    fn spec_validation() {
        let mut s = RegressionSpec::final_logit();
        s.regressors.push("nope".into());
        assert_eq!(s.validate(), Err(EconError::UnknownVariable("nope".into())));
        let mut d = RegressionSpec::final_logit();
        d.regressors.push("las".into());
        assert_eq!(
            d.validate(),
            Err(EconError::DuplicateVariable("las".into()))
        );
    }

    #[test]
    fn optn_ranking_signs_in_sequence_regression() {
        let t = fit_linear(
            &RegressionSpec::sequence_ols(),
            &runs(InfoRegime::SocialLearning, 1),
        )
        .unwrap();
        assert!(t.get("las").unwrap().0 < 0.0);
        assert!(t.get("primary_blood_match").unwrap().0 < 0.0);
        assert!(t.fit_statistic > 0.0 && t.fit_statistic <= 1.0);
    }

    #[test]
    fn reordering_counts_provisional_yes_only() {
        let r = runs(InfoRegime::SocialLearning, 2);
        let frame = build_frame(&r, SampleFilter::ProvisionalYesReordered);
        let seq = frame.column(SEQUENCE);
        assert_eq!(seq[0], 1.0);
        let n: usize = r
            .iter()
            .flat_map(|d| &d.offers)
            .filter(|o| o.provisional_yes)
            .count();
        assert_eq!(seq.len(), n);
        assert!(frame.column(PROVISIONAL_YES).iter().all(|v| *v == 1.0));
    }

    #[test]
    fn final_yes_sequence_effect_is_negative_under_social_learning() {
        let t = fit_logit(
            &RegressionSpec::final_logit(),
            &runs(InfoRegime::SocialLearning, 3),
        )
        .unwrap();
        let (b, se) = t.get(SEQUENCE).unwrap();
        assert!(b < 0.0 && b / se < -2.0, "{b} {se}");
    }

    #[test]
    fn irrelevant_regressor_leaves_others_stable() {
        let r = runs(InfoRegime::SocialLearning, 4);
        let spec = RegressionSpec::sequence_ols();
        let base = fit_linear(&spec, &r).unwrap();
        // append pure noise through a design built by hand
        let d = design(&spec, &r).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = d.x.nrows();
        let k = d.x.ncols();
        let noise = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
        let x = DMatrix::from_fn(
            n,
            k + 1,
            |i, j| if j < k { d.x[(i, j)] } else { noise[(i, 0)] },
        );
        let mut names = d.kept.clone();
        names.push("noise".into());
        let f = ols(&x, &d.y, &names).unwrap();
        for (j, name) in d.kept.iter().enumerate() {
            let (b, se) = base.get(name).unwrap();
            assert!((f.coefficients[j] - b).abs() < 3.0 * se, "{name}");
        }
    }

    #[test]
    fn csv_layout() {
        let r = runs(InfoRegime::SocialLearning, 5);
        let tables = reduced_form(&r).unwrap();
        let mut buf = Vec::new();
        write_reduced_form_csv(&mut buf, &tables).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(first[0], SEQUENCE);
        assert_eq!(first[1], "-");
        assert!(text.contains("Observations"));
        assert!(text.lines().next().unwrap().contains("(3) final_yes"));
    }
}
