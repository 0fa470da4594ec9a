//! Outer-product-of-gradients (BHHH) standard errors from finite-difference
//! per-donor scores.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::transform::ParamTransform;
use super::{
    per_donor_log_likelihood, prepare, prepared_log_likelihood, EstimatorError, PreparedRun, N_FREE,
};
use crate::data_io::DonorRun;
use crate::model::ModelParams;

pub const REL_STEP: f64 = 1e-5;
pub const ABS_STEP: f64 = 1e-7;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BhhhResult {
    /// Natural-unit standard errors; NaN for singular coordinates.
    pub std_errors: Vec<f64>,
    pub singular: Vec<bool>,
    /// Sum of per-donor scores in the unconstrained coordinates.
    pub score_sum: Vec<f64>,
}

fn step_for(x: f64, rel: f64, floor: f64) -> f64 {
    (rel * x.abs()).max(floor)
}

/// Central-difference scores of every donor, one row per donor, with respect
/// to the unconstrained coordinates of `transform`.
pub fn score_matrix(
    runs: &[PreparedRun],
    params: &ModelParams,
    transform: &ParamTransform,
    rel: f64,
    floor: f64,
) -> Result<DMatrix<f64>, EstimatorError> {
    let u = transform.to_unconstrained(params);
    let mut scores = DMatrix::zeros(runs.len(), N_FREE);
    for k in 0..N_FREE {
        let h = step_for(u[k], rel, floor);
        let mut up = u.clone();
        let mut dn = u.clone();
        up[k] += h;
        dn[k] -= h;
        let a = per_donor_log_likelihood(runs, &transform.to_natural(&up, params.mu))?;
        let b = per_donor_log_likelihood(runs, &transform.to_natural(&dn, params.mu))?;
        for i in 0..runs.len() {
            scores[(i, k)] = (a[i] - b[i]) / (2.0 * h);
        }
    }
    Ok(scores)
}

/// Score vector of a single donor at the given step sizes.
pub fn donor_scores(
    run: &DonorRun,
    params: &ModelParams,
    rel: f64,
    floor: f64,
) -> Result<Vec<f64>, EstimatorError> {
    let prepared = super::PreparedRun::from_run(run)?;
    let t = ParamTransform::plain();
    let u = t.to_unconstrained(params);
    (0..N_FREE)
        .map(|k| {
            let h = step_for(u[k], rel, floor);
            let mut up = u.clone();
            let mut dn = u.clone();
            up[k] += h;
            dn[k] -= h;
            let a = prepared_log_likelihood(&prepared, &t.to_natural(&up, params.mu))?;
            let b = prepared_log_likelihood(&prepared, &t.to_natural(&dn, params.mu))?;
            Ok((a - b) / (2.0 * h))
        })
        .collect()
}

/// Inverse of a symmetric PSD matrix, or a pseudo-inverse with the
/// coordinates touching its null space flagged.
fn invert_psd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<bool>) {
    let n = a.nrows();
    if let Some(ch) = a.clone().cholesky() {
        let inv = ch.inverse();
        if inv.iter().all(|x| x.is_finite()) && (0..n).all(|k| inv[(k, k)] > 0.0) {
            return (inv, vec![false; n]);
        }
    }
    let eig = SymmetricEigen::new(a.clone());
    let top = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let mut inv = DMatrix::zeros(n, n);
    let mut singular = vec![false; n];
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let v: DVector<f64> = eig.eigenvectors.column(j).into();
        if top <= 0.0 || lambda <= RANK_TOL * top {
            for k in 0..n {
                if v[k].abs() > 1e-3 {
                    singular[k] = true;
                }
            }
        } else {
            inv += &v * v.transpose() / lambda;
        }
    }
    (inv, singular)
}

pub fn bhhh_from_prepared(
    runs: &[PreparedRun],
    params: &ModelParams,
) -> Result<BhhhResult, EstimatorError> {
    params.validate()?;
    let t = ParamTransform::plain();
    let scores = score_matrix(runs, params, &t, REL_STEP, ABS_STEP)?;
    let opg = scores.transpose() * &scores;
    let (cov_u, singular) = invert_psd(&opg);
    let j = t.jacobian(&t.to_unconstrained(params));
    let cov = &j * cov_u * j.transpose();
    let std_errors = (0..N_FREE)
        .map(|k| {
            if singular[k] {
                f64::NAN
            } else {
                cov[(k, k)].max(0.0).sqrt()
            }
        })
        .collect();
    let score_sum = (0..N_FREE).map(|k| scores.column(k).sum()).collect();
    Ok(BhhhResult {
        std_errors,
        singular,
        score_sum,
    })
}

pub fn bhhh_std_errors(
    runs: &[DonorRun],
    params: &ModelParams,
) -> Result<BhhhResult, EstimatorError> {
    bhhh_from_prepared(&prepare(runs)?, params)
}
