//! Symmetric mark distributions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{invalid, Result};
use crate::rng::{self, SimRng};

/// Upper quantile used to clamp tail scans.
pub const TAIL_CLAMP: f64 = 1.0 - 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MarkDistribution {
    Gaussian { sigma: f64 },
    /// Uniform on `[-a, a]`.
    Uniform { a: f64 },
    Laplace { b: f64 },
    Rademacher,
    /// Point mass at zero. Only useful to exercise error paths.
    Degenerate,
}

/// Result of [`MarkDistribution::evaluate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub pdf: Option<f64>,
    pub survival: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBoundRow {
    pub x: f64,
    pub survival: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailBoundReport {
    pub mills_ratio: f64,
    pub rows: Vec<TailBoundRow>,
    pub holds: bool,
}

impl MarkDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MarkDistribution::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(invalid("mark.sigma", "must be positive and finite"))
            }
            MarkDistribution::Uniform { a } if !(a > 0.0 && a.is_finite()) => {
                Err(invalid("mark.a", "must be positive and finite"))
            }
            MarkDistribution::Laplace { b } if !(b > 0.0 && b.is_finite()) => {
                Err(invalid("mark.b", "must be positive and finite"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MarkDistribution::Gaussian { .. } => "gaussian",
            MarkDistribution::Uniform { .. } => "uniform",
            MarkDistribution::Laplace { .. } => "laplace",
            MarkDistribution::Rademacher => "rademacher",
            MarkDistribution::Degenerate => "degenerate",
        }
    }

    /// Stretched-exponential tail exponent; `f64::INFINITY` for compact support.
    pub fn beta_tail(&self) -> f64 {
        match self {
            MarkDistribution::Gaussian { .. } => 2.0,
            MarkDistribution::Laplace { .. } => 1.0,
            _ => f64::INFINITY,
        }
    }

    pub fn has_density(&self) -> bool {
        !matches!(
            self,
            MarkDistribution::Rademacher | MarkDistribution::Degenerate
        )
    }

    pub fn log_concave(&self) -> bool {
        self.has_density()
    }

    pub fn pdf(&self, x: f64) -> Option<f64> {
        match *self {
            MarkDistribution::Gaussian { sigma } => {
                let z = x / sigma;
                Some((-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt()))
            }
            MarkDistribution::Uniform { a } => Some(if x.abs() <= a { 0.5 / a } else { 0.0 }),
            MarkDistribution::Laplace { b } => Some(0.5 / b * (-x.abs() / b).exp()),
            MarkDistribution::Rademacher | MarkDistribution::Degenerate => None,
        }
    }

    /// P(Y > x). For the atomic laws this is the right-continuous version
    /// `P(Y > x)`, so `survival(x) + cdf(x) = 1`.
    pub fn survival(&self, x: f64) -> f64 {
        match *self {
            MarkDistribution::Gaussian { sigma } => 0.5 * libm::erfc(x / sigma * FRAC_1_SQRT_2),
            MarkDistribution::Uniform { a } => ((a - x) / (2.0 * a)).clamp(0.0, 1.0),
            MarkDistribution::Laplace { b } => {
                if x >= 0.0 {
                    0.5 * (-x / b).exp()
                } else {
                    1.0 - 0.5 * (x / b).exp()
                }
            }
            MarkDistribution::Rademacher => {
                if x < -1.0 {
                    1.0
                } else if x < 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
            MarkDistribution::Degenerate => {
                if x < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            // Evaluate the lower tail directly to keep relative accuracy.
            MarkDistribution::Gaussian { .. } | MarkDistribution::Laplace { .. } if x < 0.0 => {
                self.survival(-x)
            }
            _ => 1.0 - self.survival(x),
        }
    }

    pub fn evaluate(&self, x: f64) -> Evaluation {
        Evaluation {
            pdf: self.pdf(x),
            survival: self.survival(x),
        }
    }

    /// Quantile function (generalized inverse of the CDF) for `p` in (0,1).
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            MarkDistribution::Uniform { a } => a * (2.0 * p - 1.0),
            MarkDistribution::Laplace { b } => {
                if p < 0.5 {
                    b * (2.0 * p).ln()
                } else {
                    -b * (2.0 * (1.0 - p)).ln()
                }
            }
            MarkDistribution::Rademacher => {
                if p <= 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
            MarkDistribution::Degenerate => 0.0,
            MarkDistribution::Gaussian { sigma } => {
                // Bisection on the CDF; only used off the hot path.
                let (mut lo, mut hi) = (-40.0 * sigma, 40.0 * sigma);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) < p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * sigma.max(mid.abs()) {
                        break;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            MarkDistribution::Gaussian { sigma } => sigma * rng.sample::<f64, _>(StandardNormal),
            _ => self.from_uniforms(rng::open01(rng), rng::open01(rng)),
        }
    }

    /// Deterministic transform of two independent uniforms in (0,1) into one
    /// draw. Used by counter-based lattice sampling.
    pub fn from_uniforms(&self, u1: f64, u2: f64) -> f64 {
        match *self {
            MarkDistribution::Gaussian { sigma } => {
                sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
            }
            _ => self.quantile(u1),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            MarkDistribution::Gaussian { sigma } => sigma * sigma,
            MarkDistribution::Uniform { a } => a * a / 3.0,
            MarkDistribution::Laplace { b } => 2.0 * b * b,
            MarkDistribution::Rademacher => 1.0,
            MarkDistribution::Degenerate => 0.0,
        }
    }

    /// E|Y|.
    pub fn abs_mean(&self) -> f64 {
        match *self {
            MarkDistribution::Gaussian { sigma } => sigma * (2.0 / PI).sqrt(),
            MarkDistribution::Uniform { a } => a / 2.0,
            MarkDistribution::Laplace { b } => b,
            MarkDistribution::Rademacher => 1.0,
            MarkDistribution::Degenerate => 0.0,
        }
    }

    /// E[cos(sY)], the (real) characteristic function of the symmetric law.
    pub fn char_fn(&self, s: f64) -> f64 {
        match *self {
            MarkDistribution::Gaussian { sigma } => (-0.5 * sigma * sigma * s * s).exp(),
            MarkDistribution::Uniform { a } => {
                let z = a * s;
                if z.abs() < 1e-4 {
                    1.0 - z * z / 6.0 + z.powi(4) / 120.0
                } else {
                    z.sin() / z
                }
            }
            MarkDistribution::Laplace { b } => 1.0 / (1.0 + b * b * s * s),
            MarkDistribution::Rademacher => s.cos(),
            MarkDistribution::Degenerate => 1.0,
        }
    }

    /// Right end of the support, or infinity.
    pub fn support_bound(&self) -> f64 {
        match *self {
            MarkDistribution::Uniform { a } => a,
            MarkDistribution::Rademacher => 1.0,
            MarkDistribution::Degenerate => 0.0,
            _ => f64::INFINITY,
        }
    }

    /// esssup over x ≥ 0 of F̄(x)/pdf(x), with 1/0 = ∞ and 0/0 = 0.
    ///
    /// The three densities have a non-increasing ratio on x ≥ 0 (log-concave
    /// and symmetric), so the supremum is the value at 0:
    /// Gaussian σ√(π/2), Laplace b, Uniform a.
    pub fn mills_ratio(&self) -> f64 {
        match *self {
            MarkDistribution::Gaussian { sigma } => sigma * (PI / 2.0).sqrt(),
            MarkDistribution::Uniform { a } => a,
            MarkDistribution::Laplace { b } => b,
            MarkDistribution::Rademacher | MarkDistribution::Degenerate => f64::INFINITY,
        }
    }

    /// F̄(x)/pdf(x) with the conventions above.
    pub fn mills_pointwise(&self, x: f64) -> f64 {
        let s = self.survival(x);
        match self.pdf(x) {
            None => f64::INFINITY,
            Some(p) if p > 0.0 => s / p,
            Some(_) if s > 0.0 => f64::INFINITY,
            Some(_) => 0.0,
        }
    }

    /// Numerical esssup of the Mills ratio: coarse log-spaced scan, then a
    /// golden-section refinement around the best grid point.
    pub fn mills_ratio_search(&self) -> f64 {
        if !self.has_density() {
            return f64::INFINITY;
        }
        let top = self.quantile(TAIL_CLAMP);
        let mut grid = vec![0.0];
        let n = 400;
        let lo = (top * 1e-6).ln();
        for i in 0..=n {
            grid.push((lo + (top.ln() - lo) * i as f64 / n as f64).exp());
        }
        let f = |x: f64| self.mills_pointwise(x);
        let (best_i, _) = grid
            .iter()
            .enumerate()
            .map(|(i, &x)| (i, f(x)))
            .fold((0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
        let a = if best_i == 0 { 0.0 } else { grid[best_i - 1] };
        let b = grid[(best_i + 1).min(grid.len() - 1)];
        let best = golden_max(f, a, b, 1e-12);
        best.max(f(grid[best_i])).max(f(0.0))
    }

    /// Quantile-clamped scan grid `[0, q(1 − 1e−8)]` with `n` points.
    pub fn tail_grid(&self, n: usize) -> Vec<f64> {
        let top = self.quantile(TAIL_CLAMP).max(0.0);
        (0..n)
            .map(|i| top * i as f64 / (n.max(2) - 1) as f64)
            .collect()
    }

    /// Check F̄(x) ≤ F(0)·exp(−x/c_Mills) at each `x`.
    pub fn tail_bound_check(&self, xs: &[f64]) -> Result<TailBoundReport> {
        let c = self.mills_ratio();
        if !c.is_finite() {
            return Err(invalid(
                "mark",
                "tail bound requires a finite Mills ratio (distribution has no density)",
            ));
        }
        if let Some(x) = xs.iter().find(|x| !(**x >= 0.0)) {
            return Err(invalid("xs", format!("tail bound points must be >= 0, got {x}")));
        }
        let f0 = self.cdf(0.0);
        let rows: Vec<TailBoundRow> = xs
            .iter()
            .map(|&x| {
                let survival = self.survival(x);
                let bound = f0 * (-x / c).exp();
                TailBoundRow {
                    x,
                    survival,
                    bound,
                    holds: survival <= bound + 1e-12,
                }
            })
            .collect();
        let holds = rows.iter().all(|r| r.holds);
        Ok(TailBoundReport {
            mills_ratio: c,
            rows,
            holds,
        })
    }
}

/// `n` i.i.d. marks from a seeded stream.
pub fn sample_marks(dist: &MarkDistribution, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, &[rng::tag::MARKS]);
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs() + b.abs()) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd).max(f(a)).max(f(b))
}
