//! Truncated-normal sampling whose first two moments match a target table row.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{PI, SQRT_2};

use super::ConfigError;

/// Smallest retained mass allowed when fitting; keeps the inverse-CDF
/// sampler away from the far tail where it loses precision.
const MIN_MASS: f64 = 1e-3;

/// Target mean, standard deviation and support of one covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Moments {
    pub const fn new(mean: f64, sd: f64, min: f64, max: f64) -> Moments {
        Moments { mean, sd, min, max }
    }
}

fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn quantile(u: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * u)
}

/// Mass of the standard normal on `[a, b]`, accurate in both tails.
fn mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        cdf(-a) - cdf(-b)
    } else {
        cdf(b) - cdf(a)
    }
}

/// Mean, sd and retained mass of `N(loc, scale^2)` restricted to `[lo, hi]`.
fn truncated_moments(loc: f64, scale: f64, lo: f64, hi: f64) -> (f64, f64, f64) {
    let a = (lo - loc) / scale;
    let b = (hi - loc) / scale;
    let z = mass(a, b);
    if z <= 0.0 {
        let edge = if loc < lo { lo } else { hi };
        return (edge, 0.0, 0.0);
    }
    let (pa, pb) = (pdf(a), pdf(b));
    let r = (pa - pb) / z;
    let ta = if a.is_finite() { a * pa } else { 0.0 };
    let tb = if b.is_finite() { b * pb } else { 0.0 };
    let var = scale * scale * (1.0 + (ta - tb) / z - r * r);
    (loc + scale * r, var.max(0.0).sqrt(), z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    pub loc: f64,
    pub scale: f64,
    pub lo: f64,
    pub hi: f64,
    /// Standard deviation actually achieved; may fall short of the target
    /// for strongly skewed rows a truncated normal cannot express.
    pub achieved_sd: f64,
}

impl TruncatedNormal {
    /// Chooses `(loc, scale)` so the truncated mean equals the target exactly
    /// and the truncated sd is as close to the target as the family allows.
    pub fn fit(field: &str, m: &Moments) -> Result<TruncatedNormal, ConfigError> {
        let bad = |reason: &str| ConfigError::Moments {
            field: field.to_string(),
            reason: reason.to_string(),
        };
        if ![m.mean, m.sd, m.min, m.max].iter().all(|v| v.is_finite()) {
            return Err(bad("non-finite moment"));
        }
        if m.min > m.max {
            return Err(bad("min exceeds max"));
        }
        if m.sd < 0.0 {
            return Err(bad("negative standard deviation"));
        }
        if m.mean < m.min || m.mean > m.max {
            return Err(bad("mean outside [min, max]"));
        }
        if m.sd == 0.0 || m.min == m.max {
            return Ok(TruncatedNormal {
                loc: m.mean,
                scale: 0.0,
                lo: m.min,
                hi: m.max,
                achieved_sd: 0.0,
            });
        }
        if m.mean == m.min || m.mean == m.max {
            return Err(bad("positive sd with the mean on a bound"));
        }

        let loc_for = |scale: f64| -> f64 {
            let (mut a, mut b) = (m.min - 40.0 * scale, m.max + 40.0 * scale);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if truncated_moments(mid, scale, m.min, m.max).0 < m.mean {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            0.5 * (a + b)
        };
        let score = |scale: f64| -> (f64, f64, f64) {
            let loc = loc_for(scale);
            let (_, sd, z) = truncated_moments(loc, scale, m.min, m.max);
            let penalty = if z < MIN_MASS {
                1e6 * (MIN_MASS - z)
            } else {
                0.0
            };
            ((sd - m.sd).abs() + penalty, loc, sd)
        };

        // Coarse log grid, then golden-section refinement around the best point.
        let grid: Vec<f64> = (0..=160)
            .map(|k| m.sd * 0.05 * (400f64).powf(k as f64 / 160.0))
            .collect();
        let best = grid
            .iter()
            .enumerate()
            .min_by(|(_, x), (_, y)| score(**x).0.total_cmp(&score(**y).0))
            .map(|(k, _)| k)
            .unwrap_or(0);
        let (mut a, mut b) = (
            grid[best.saturating_sub(1)],
            grid[(best + 1).min(grid.len() - 1)],
        );
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..80 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if score(c).0 < score(d).0 {
                b = d;
            } else {
                a = c;
            }
        }
        let scale = 0.5 * (a + b);
        let (_, loc, sd) = score(scale);
        Ok(TruncatedNormal {
            loc,
            scale,
            lo: m.min,
            hi: m.max,
            achieved_sd: sd,
        })
    }

    /// Inverse-CDF draw, mirrored when the support lies in the upper tail.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.scale == 0.0 {
            return self.loc.clamp(self.lo, self.hi);
        }
        let a = (self.lo - self.loc) / self.scale;
        let b = (self.hi - self.loc) / self.scale;
        let u: f64 = rng.random();
        let z = if a > 0.0 {
            let (pa, pb) = (cdf(-b), cdf(-a));
            -quantile(pa + u * (pb - pa))
        } else {
            let (pa, pb) = (cdf(a), cdf(b));
            quantile(pa + u * (pb - pa))
        };
        (self.loc + self.scale * z).clamp(self.lo, self.hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_moments(tn: &TruncatedNormal, n: usize) -> (f64, f64, f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..n).map(|_| tn.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (mean, var.sqrt(), lo, hi)
    }

    #[test]
    fn analytic_moments_match_untruncated_limit() {
        let (m, s, z) = truncated_moments(2.0, 3.0, -1e9, 1e9);
        assert!((m - 2.0).abs() < 1e-9 && (s - 3.0).abs() < 1e-9 && (z - 1.0).abs() < 1e-12);
        // half-normal: mean sqrt(2/pi), sd sqrt(1 - 2/pi)
        let (m, s, _) = truncated_moments(0.0, 1.0, 0.0, f64::INFINITY);
        assert!((m - (2.0 / PI).sqrt()).abs() < 1e-12);
        assert!((s - (1.0 - 2.0 / PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_row_matches_both_moments() {
        let m = Moments::new(43.3, 14.3, 5.9, 95.4);
        let tn = TruncatedNormal::fit("las", &m).unwrap();
        let (mu, sd, _) = truncated_moments(tn.loc, tn.scale, tn.lo, tn.hi);
        assert!((mu - 43.3).abs() < 1e-6);
        assert!((sd - 14.3).abs() < 1e-3);
        let (smean, ssd, lo, hi) = sample_moments(&tn, 50_000);
        assert!((smean - 43.3).abs() < 0.3 && (ssd - 14.3).abs() < 0.3);
        assert!(lo >= 5.9 && hi <= 95.4);
    }

    #[test]
    fn skewed_row_keeps_the_mean() {
        let m = Moments::new(3.4, 7.5, 0.0, 87.1);
        let tn = TruncatedNormal::fit("waiting_time", &m).unwrap();
        let (smean, _, lo, _) = sample_moments(&tn, 50_000);
        assert!((smean - 3.4).abs() < 0.1, "{smean}");
        assert!(lo >= 0.0);
        assert!(tn.achieved_sd > 0.0 && tn.achieved_sd <= 7.5);
    }

    #[test]
    fn degenerate_sd_gives_constant() {
        let tn = TruncatedNormal::fit("x", &Moments::new(5.0, 0.0, 0.0, 10.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..10).all(|_| tn.sample(&mut rng) == 5.0));
    }

    #[test]
    fn infeasible_rows_are_rejected() {
        assert!(TruncatedNormal::fit("x", &Moments::new(5.0, 1.0, 10.0, 0.0)).is_err());
        assert!(TruncatedNormal::fit("x", &Moments::new(50.0, 1.0, 0.0, 10.0)).is_err());
        assert!(TruncatedNormal::fit("x", &Moments::new(5.0, -1.0, 0.0, 10.0)).is_err());
        assert!(TruncatedNormal::fit("x", &Moments::new(0.0, 1.0, 0.0, 10.0)).is_err());
    }
}
