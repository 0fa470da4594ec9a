//! Least squares and logistic regression on a dense design matrix.
//!
//! Both fits work on internally standardized columns (non-constant columns
//! centered and scaled, constant columns left as is) and map the results
//! back, which keeps the normal equations well conditioned when covariates
//! differ in scale by orders of magnitude.

use nalgebra::{DMatrix, DVector};

use super::EconError;
use crate::model::{log_logistic_cdf, logistic_cdf};

/// Affine column standardization `x_k = m_k + s_k * z_k`.
struct Standardizer {
    means: Vec<f64>,
    scales: Vec<f64>,
    /// Column that absorbs the centering (the first constant nonzero column).
    constant: Option<usize>,
}

impl Standardizer {
    fn new(x: &DMatrix<f64>) -> Standardizer {
        let (n, k) = x.shape();
        let mut means = vec![0.0; k];
        let mut scales = vec![1.0; k];
        let constant = (0..k).find(|&j| {
            let c = x[(0, j)];
            c != 0.0 && x.column(j).iter().all(|v| *v == c)
        });
        if constant.is_some() && n > 1 {
            for j in 0..k {
                if Some(j) == constant {
                    continue;
                }
                let m = x.column(j).mean();
                let sd =
                    (x.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
                if sd > 0.0 {
                    means[j] = m;
                    scales[j] = sd;
                }
            }
        }
        Standardizer {
            means,
            scales,
            constant,
        }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x.clone();
        for j in 0..x.ncols() {
            if self.means[j] != 0.0 || self.scales[j] != 1.0 {
                for v in z.column_mut(j).iter_mut() {
                    *v = (*v - self.means[j]) / self.scales[j];
                }
            }
        }
        z
    }

    /// Matrix `A` with `beta = A * beta_z`.
    fn back_map(&self, k: usize, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(k, k);
        for j in 0..k {
            a[(j, j)] = 1.0 / self.scales[j];
        }
        if let Some(c) = self.constant {
            let level = x[(0, c)];
            for j in 0..k {
                if j != c {
                    a[(c, j)] -= self.means[j] / self.scales[j] / level;
                }
            }
        }
        a
    }
}

/// Indices of columns that are linear combinations of earlier columns
/// (modified Gram-Schmidt on unit-norm columns).
pub fn collinear_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let k = x.ncols();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..k {
        let col: DVector<f64> = x.column(j).into();
        let norm = col.norm();
        if norm == 0.0 {
            dependent.push(j);
            continue;
        }
        let mut v = col / norm;
        for q in &basis {
            let d = q.dot(&v);
            v -= q * d;
        }
        let r = v.norm();
        if r < 1e-9 {
            dependent.push(j);
        } else {
            basis.push(v / r);
        }
    }
    dependent
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coefficients: DVector<f64>,
    /// HC1 heteroskedasticity-robust covariance.
    pub covariance: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub r_squared: f64,
}

impl LinearFit {
    pub fn std_errors(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

fn rank_error(cols: Vec<usize>, names: &[String]) -> EconError {
    EconError::RankDeficient {
        columns: cols
            .into_iter()
            .map(|j| {
                names
                    .get(j)
                    .cloned()
                    .unwrap_or_else(|| format!("column {j}"))
            })
            .collect(),
    }
}

fn check_shapes(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(), EconError> {
    if x.nrows() != y.len() {
        return Err(EconError::Dimension {
            rows: x.nrows(),
            outcomes: y.len(),
        });
    }
    if x.nrows() == 0 || x.nrows() < x.ncols() {
        return Err(EconError::TooFewObservations {
            rows: x.nrows(),
            columns: x.ncols(),
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(EconError::NonFinite);
    }
    Ok(())
}

/// Ordinary least squares via QR with HC1 standard errors.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<LinearFit, EconError> {
    check_shapes(x, y)?;
    let st = Standardizer::new(x);
    let z = st.apply(x);
    let dependent = collinear_columns(&z);
    if !dependent.is_empty() {
        return Err(rank_error(dependent, names));
    }
    let (n, k) = z.shape();
    let qr = z.clone().qr();
    let qty = qr.q().transpose() * y;
    let r = qr.r();
    let bz = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| rank_error(vec![k - 1], names))?;
    let residuals = y - &z * &bz;

    let xtx_inv = (z.transpose() * &z)
        .try_inverse()
        .ok_or_else(|| rank_error(collinear_columns(&z), names))?;
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let row = z.row(i);
        meat += row.transpose() * row * residuals[i].powi(2);
    }
    let dof = if n > k {
        n as f64 / (n - k) as f64
    } else {
        1.0
    };
    let cov_z = &xtx_inv * meat * &xtx_inv * dof;

    let a = st.back_map(k, x);
    let coefficients = &a * bz;
    let covariance = &a * cov_z * a.transpose();
    let ybar = y.mean();
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let rss = residuals.norm_squared();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    Ok(LinearFit {
        coefficients,
        covariance,
        residuals,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    /// Convergence threshold on the largest coefficient change.
    pub tol: f64,
    pub max_iter: usize,
    /// Coefficients on standardized regressors beyond this signal separation.
    pub separation_bound: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            tol: 1e-10,
            max_iter: 100,
            separation_bound: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitFit {
    pub coefficients: DVector<f64>,
    /// Sandwich covariance `H^-1 (sum s s') H^-1`.
    pub covariance: DMatrix<f64>,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    pub iterations: usize,
    /// Euclidean norm of the score at the returned coefficients.
    pub score_norm: f64,
}

impl LogitFit {
    pub fn std_errors(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }

    /// McFadden pseudo-R².
    pub fn pseudo_r_squared(&self) -> f64 {
        if self.null_log_likelihood == 0.0 {
            0.0
        } else {
            1.0 - self.log_likelihood / self.null_log_likelihood
        }
    }
}

fn logit_log_likelihood(z: &DMatrix<f64>, y: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let eta = z * b;
    eta.iter()
        .zip(y.iter())
        .map(|(e, yi)| yi * log_logistic_cdf(*e) + (1.0 - yi) * log_logistic_cdf(-*e))
        .sum()
}

/// Binary logit by iteratively reweighted least squares.
pub fn logit_irls(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    opts: &IrlsOptions,
) -> Result<LogitFit, EconError> {
    check_shapes(x, y)?;
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(EconError::NonBinary);
    }
    let st = Standardizer::new(x);
    let z = st.apply(x);
    let dependent = collinear_columns(&z);
    if !dependent.is_empty() {
        let names: Vec<String> = (0..x.ncols()).map(|j| format!("column {j}")).collect();
        return Err(rank_error(dependent, &names));
    }
    let (n, k) = z.shape();
    let mut b = DVector::zeros(k);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let eta = &z * &b;
        let p = eta.map(logistic_cdf);
        let w = p.map(|q| (q * (1.0 - q)).max(1e-300));
        let mut h = DMatrix::zeros(k, k);
        for i in 0..n {
            let row = z.row(i);
            h += row.transpose() * row * w[i];
        }
        let grad = z.transpose() * (y - &p);
        let step = match h.cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                return Err(EconError::Separation {
                    coefficient: f64::INFINITY,
                })
            }
        };
        b += &step;
        if let Some(big) = b.iter().find(|v| v.abs() > opts.separation_bound) {
            return Err(EconError::Separation { coefficient: *big });
        }
        if step.amax() < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(EconError::NotConverged { iterations });
    }

    let p = (&z * &b).map(logistic_cdf);
    let mut h = DMatrix::zeros(k, k);
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let row = z.row(i);
        let outer = row.transpose() * row;
        h += &outer * (p[i] * (1.0 - p[i]));
        meat += outer * (y[i] - p[i]).powi(2);
    }
    let h_inv = h.try_inverse().ok_or(EconError::Separation {
        coefficient: f64::INFINITY,
    })?;
    let cov_z = &h_inv * meat * &h_inv;
    let a = st.back_map(k, x);
    let coefficients = &a * &b;
    let covariance = &a * cov_z * a.transpose();

    let score = x.transpose() * (y - (x * &coefficients).map(logistic_cdf));
    let ybar = y.mean();
    let null_log_likelihood = if ybar > 0.0 && ybar < 1.0 {
        n as f64 * (ybar * ybar.ln() + (1.0 - ybar) * (1.0 - ybar).ln())
    } else {
        0.0
    };
    Ok(LogitFit {
        log_likelihood: logit_log_likelihood(&z, y, &b),
        coefficients,
        covariance,
        null_log_likelihood,
        iterations,
        score_norm: score.norm(),
    })
}
