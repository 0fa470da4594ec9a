//! Map between natural parameters and the unconstrained search space.
//!
//! `alpha = 0.5 + 0.5 * logistic(u0)`, `p = logistic(u1)`, `gamma = u2`.
//! Utility coefficients are searched on standardized covariates: the slope on
//! covariate k is `z_k = beta_k * sd_k`, and the intercept is evaluated at the
//! covariate means. The map is affine in beta, so it only changes the
//! conditioning of the simplex search.

use nalgebra::DMatrix;

use super::{PreparedRun, N_FREE};
use crate::model::{logistic_cdf, ModelParams, N_COVARIATES};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTransform {
    pub means: [f64; N_COVARIATES],
    pub scales: [f64; N_COVARIATES],
}

fn logit(q: f64) -> f64 {
    (q / (1.0 - q)).ln()
}

impl ParamTransform {
    /// No standardization.
    pub fn plain() -> ParamTransform {
        ParamTransform {
            means: [0.0; N_COVARIATES],
            scales: [1.0; N_COVARIATES],
        }
    }

    /// Means and standard deviations over every decision row.
    pub fn from_prepared(runs: &[PreparedRun]) -> ParamTransform {
        let rows: Vec<&[f64; N_COVARIATES]> = runs.iter().flat_map(|r| &r.rows).collect();
        let mut t = ParamTransform::plain();
        if rows.len() < 2 {
            return t;
        }
        let n = rows.len() as f64;
        for k in 1..N_COVARIATES {
            let m = rows.iter().map(|r| r[k]).sum::<f64>() / n;
            let v = rows.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
            if v > 0.0 && v.is_finite() {
                t.means[k] = m;
                t.scales[k] = v.sqrt();
            }
        }
        t
    }

    pub fn to_unconstrained(&self, params: &ModelParams) -> Vec<f64> {
        let mut u = Vec::with_capacity(N_FREE);
        u.push(logit(2.0 * params.alpha - 1.0));
        u.push(logit(params.p));
        u.push(params.gamma);
        let b = &params.beta;
        let centered: f64 = (1..N_COVARIATES).map(|k| b[k] * self.means[k]).sum();
        u.push(b[0] + centered);
        u.extend((1..N_COVARIATES).map(|k| b[k] * self.scales[k]));
        u
    }

    pub fn to_natural(&self, u: &[f64], mu: f64) -> ModelParams {
        debug_assert_eq!(u.len(), N_FREE);
        let z = &u[3..];
        let mut beta = vec![0.0; N_COVARIATES];
        for k in 1..N_COVARIATES {
            beta[k] = z[k] / self.scales[k];
        }
        beta[0] = z[0]
            - (1..N_COVARIATES)
                .map(|k| beta[k] * self.means[k])
                .sum::<f64>();
        ModelParams {
            mu,
            alpha: 0.5 + 0.5 * logistic_cdf(u[0]),
            p: logistic_cdf(u[1]),
            gamma: u[2],
            beta,
        }
    }

    /// Jacobian of `(alpha, p, gamma, beta)` with respect to `u`.
    pub fn jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(N_FREE, N_FREE);
        let s0 = logistic_cdf(u[0]);
        let s1 = logistic_cdf(u[1]);
        j[(0, 0)] = 0.5 * s0 * (1.0 - s0);
        j[(1, 1)] = s1 * (1.0 - s1);
        j[(2, 2)] = 1.0;
        j[(3, 3)] = 1.0;
        for k in 1..N_COVARIATES {
            j[(3 + k, 3 + k)] = 1.0 / self.scales[k];
            j[(3, 3 + k)] = -self.means[k] / self.scales[k];
        }
        j
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_transform() -> ParamTransform {
        let mut t = ParamTransform::plain();
        for k in 1..N_COVARIATES {
            t.means[k] = 10.0 * k as f64 - 50.0;
            t.scales[k] = 0.5 + k as f64;
        }
        t
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            alpha in 0.501f64..0.999,
            p in 0.001f64..0.999,
            gamma in -10.0f64..10.0,
            beta in proptest::collection::vec(-5.0f64..5.0, N_COVARIATES),
        ) {
            for t in [ParamTransform::plain(), sample_transform()] {
                let params = ModelParams { mu: 0.9, alpha, p, gamma, beta: beta.clone() };
                let back = t.to_natural(&t.to_unconstrained(&params), 0.9);
                prop_assert!((back.alpha - alpha).abs() < 1e-12);
                prop_assert!((back.p - p).abs() < 1e-12);
                prop_assert!((back.gamma - gamma).abs() < 1e-12);
                for (a, b) in back.beta.iter().zip(&beta) {
                    prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let t = sample_transform();
        let u: Vec<f64> = (0..N_FREE).map(|k| 0.1 * k as f64 - 0.7).collect();
        let j = t.jacobian(&u);
        let flat = |p: &ModelParams| -> Vec<f64> {
            [p.alpha, p.p, p.gamma]
                .into_iter()
                .chain(p.beta.iter().copied())
                .collect()
        };
        for c in 0..N_FREE {
            let h = 1e-6;
            let mut up = u.clone();
            let mut dn = u.clone();
            up[c] += h;
            dn[c] -= h;
            let (a, b) = (flat(&t.to_natural(&up, 0.9)), flat(&t.to_natural(&dn, 0.9)));
            for r in 0..N_FREE {
                let fd = (a[r] - b[r]) / (2.0 * h);
                assert!(
                    (fd - j[(r, c)]).abs() < 1e-7,
                    "({r},{c}) {fd} vs {}",
                    j[(r, c)]
                );
            }
        }
    }
}
