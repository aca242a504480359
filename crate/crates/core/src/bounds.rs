//! Concentration bounds for shot noise fields with stretched-exponential
//! marks, and their comparison with simulated sup-norm tails.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::experiments::{sup_norm_samples, FieldConfig};
use crate::kernels::{kernel_norms, log_weight, Kernel, NormTarget, Norms, TruncationMode};
use crate::marks::MarkDistribution;
use crate::quadrature::integrate_pieces;
use crate::stats::binomial_half_width;

/// Tail parameters of a mark law after rescaling: `Y = scale·Y'` with
/// `P(|Y'| > u) ≤ c2·exp(−u^β)`, or `Y'` supported on `[−1, 1]` when `β = ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFit {
    pub beta: f64,
    pub scale: f64,
    pub c2: f64,
}

/// Smallest `c2` over a quantile grid, with the scale fixed per family so
/// that the tail matches `exp(−u^β)`.
pub fn tail_fit(dist: &MarkDistribution) -> Result<TailFit> {
    dist.validate()?;
    let beta = dist.beta_tail();
    let scale = match *dist {
        MarkDistribution::Gaussian { sigma } => sigma * 2f64.sqrt(),
        MarkDistribution::Laplace { b } => b,
        MarkDistribution::Uniform { a } => a,
        MarkDistribution::Rademacher | MarkDistribution::Degenerate => 1.0,
    };
    if beta.is_infinite() {
        return Ok(TailFit { beta, scale, c2: 0.0 });
    }
    // P(|Y'| > u) for the symmetric law.
    let tail = |u: f64| (2.0 * dist.survival(scale * u)).min(1.0);
    let mut c2: f64 = 1.0;
    for k in 0..=2000 {
        let q = 1.0 - 10f64.powf(-12.0 * k as f64 / 2000.0);
        let u = dist.quantile(0.5 + 0.5 * q) / scale;
        if u.is_finite() && u > 0.0 {
            c2 = c2.max(tail(u) * u.powf(beta).exp());
        }
    }
    Ok(TailFit { beta, scale, c2 })
}

/// `∫_{R^d} exp(−[x]^β/2) dx`.
pub fn kappa_integral(beta: f64, d: usize) -> Result<f64> {
    if d == 0 {
        return Err(invalid("d", "dimension must be positive"));
    }
    let dd = d as f64;
    let sphere = 2.0 * PI.powf(0.5 * dd) / libm::tgamma(0.5 * dd);
    let q = integrate_pieces(
        |rho| sphere * rho.powf(dd - 1.0) * (-0.5 * log_weight(rho, beta).powf(beta)).exp(),
        &[0.0, 1.0, std::f64::consts::E],
        true,
        1e-12,
        0.0,
    )?;
    if !q.value.is_finite() {
        return Err(Error::Numeric("kappa integral diverged".into()));
    }
    Ok(q.value)
}

/// `κ = 2 + c2·∫exp(−[x]^β/2)dx`, and 2 when `β = ∞`.
pub fn kappa(dist: &MarkDistribution, d: usize) -> Result<f64> {
    let fit = tail_fit(dist)?;
    if fit.beta.is_infinite() {
        return Ok(2.0);
    }
    Ok(2.0 + fit.c2 * kappa_integral(fit.beta, d)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundVariant {
    /// `‖f‖_{sQ,∞}` through the majorant `ĝ`.
    Sup,
    /// `|f(0)|`, symmetric marks.
    Point,
    /// `‖f‖_{sQ,∞}` through `g̃` and `∇g`, symmetric marks.
    Grad,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInputs {
    pub kernel: Kernel,
    pub dist: MarkDistribution,
    pub s: f64,
    pub t: f64,
    pub variant: BoundVariant,
    pub d: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundResult {
    pub variant: BoundVariant,
    pub s: f64,
    pub t: f64,
    pub threshold: f64,
    /// Right-hand side as displayed; may exceed 1.
    pub tail_probability: f64,
    pub kappa: f64,
}

fn scaled(n: Norms, c: f64) -> Norms {
    Norms {
        l1: n.l1 * c,
        l2: n.l2 * c,
        linf: n.linf * c,
    }
}

pub fn concentration_threshold(inp: &BoundInputs) -> Result<BoundResult> {
    if !(inp.t >= 1.0) {
        return Err(invalid("t", format!("must be at least 1, got {}", inp.t)));
    }
    threshold_any_t(inp)
}

fn threshold_any_t(inp: &BoundInputs) -> Result<BoundResult> {
    if !(inp.s >= 1.0) {
        return Err(invalid("s", format!("must be at least 1, got {}", inp.s)));
    }
    if inp.d != 2 {
        return Err(invalid("d", "kernel norms are planar; thresholds need d = 2"));
    }
    let fit = tail_fit(&inp.dist)?;
    let kap = kappa(&inp.dist, inp.d)?;
    let t = inp.t;
    let tb = if fit.beta.is_infinite() { 1.0 } else { t.powf(1.0 / fit.beta) };
    let norms = |target| kernel_norms(&inp.kernel, target, fit.beta).map(|n| scaled(n, fit.scale));
    let dd = inp.d as f64;
    let area = (inp.s + 1.0).powi(2);
    let (threshold, tail) = match inp.variant {
        BoundVariant::Sup => {
            let h = norms(NormTarget::HatG)?;
            (
                tb * (h.l1 + (2.0 * t).sqrt() * h.l2 + t / 3.0 * h.linf),
                area * kap * (-0.5 * t).exp(),
            )
        }
        BoundVariant::Point => {
            let w = norms(NormTarget::TildeG)?;
            (tb * ((2.0 * t).sqrt() * w.l2 + t / 3.0 * w.linf), kap * (-0.5 * t).exp())
        }
        BoundVariant::Grad => {
            let w = norms(NormTarget::TildeG)?;
            let h = norms(NormTarget::HatGradG)?;
            (
                dd * tb
                    * ((2.0 * t).sqrt() * w.l2
                        + t / 3.0 * w.linf
                        + h.l1
                        + (2.0 * t).sqrt() * h.l2
                        + t / 3.0 * h.linf),
                area * (dd + 1.0) * kap * (-0.5 * t).exp(),
            )
        }
    };
    if !threshold.is_finite() {
        return Err(Error::Numeric("kernel norms are infinite".into()));
    }
    Ok(BoundResult {
        variant: inp.variant,
        s: inp.s,
        t,
        threshold,
        tail_probability: tail,
        kappa: kap,
    })
}

/// The bound for the residual field `f^r` at `t = (log r)²`: the sup variant
/// for general marks, the gradient variant for symmetric ones.
pub fn truncated_bound(
    kernel: &Kernel,
    dist: &MarkDistribution,
    r: f64,
    s: f64,
    symmetric: bool,
) -> Result<BoundResult> {
    if !(r >= 2.0) {
        return Err(invalid("r", format!("must be at least 2, got {r}")));
    }
    threshold_any_t(&BoundInputs {
        kernel: kernel.base().truncate(r, TruncationMode::Residual),
        dist: *dist,
        s,
        t: r.ln().powi(2),
        variant: if symmetric { BoundVariant::Grad } else { BoundVariant::Sup },
        d: 2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalRow {
    pub t: f64,
    pub threshold: f64,
    pub tail_probability: f64,
    pub empirical: f64,
    pub exceedances: usize,
    pub n: usize,
    pub half_width: f64,
    pub holds: bool,
}

/// Simulated `P(‖f‖_{sQ,∞} ≥ threshold(t))` against the sup bound. The sup
/// is taken over grid points of `sQ` at the configured spacing.
pub fn empirical_vs_bound(cfg: &FieldConfig, s: f64, ts: &[f64], n: usize) -> Result<Vec<EmpiricalRow>> {
    if n < 1000 {
        return Err(invalid("trials", "need at least 1000 samples"));
    }
    let bounds = ts
        .iter()
        .map(|&t| {
            concentration_threshold(&BoundInputs {
                kernel: cfg.kernel,
                dist: cfg.marks,
                s,
                t,
                variant: BoundVariant::Sup,
                d: 2,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sups = sup_norm_samples(cfg, s, cfg.grid_spacing, n)?;
    Ok(bounds
        .iter()
        .map(|b| {
            let k = sups.iter().filter(|v| **v >= b.threshold).count();
            let p = k as f64 / n as f64;
            let hw = binomial_half_width(p, n);
            EmpiricalRow {
                t: b.t,
                threshold: b.threshold,
                tail_probability: b.tail_probability,
                empirical: p,
                exceedances: k,
                n,
                half_width: hw,
                holds: p <= b.tail_probability.min(1.0) + hw,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::linear_fit;

    const G1: MarkDistribution = MarkDistribution::Gaussian { sigma: 1.0 };

    fn inputs(dist: MarkDistribution, s: f64, t: f64, variant: BoundVariant) -> BoundInputs {
        BoundInputs {
            kernel: Kernel::power_law(3.5),
            dist,
            s,
            t,
            variant,
            d: 2,
        }
    }

    #[test]
    fn tail_fits() {
        let g = tail_fit(&G1).unwrap();
        assert_eq!(g.beta, 2.0);
        assert!((g.scale - 2f64.sqrt()).abs() < 1e-15);
        assert!((g.c2 - 1.0).abs() < 1e-9, "{}", g.c2);
        let l = tail_fit(&MarkDistribution::Laplace { b: 0.7 }).unwrap();
        assert!((l.c2 - 1.0).abs() < 1e-9 && l.scale == 0.7);
        assert!(tail_fit(&MarkDistribution::Uniform { a: 2.0 }).unwrap().beta.is_infinite());
    }

    #[test]
    fn kappa_values() {
        assert_eq!(kappa(&MarkDistribution::Uniform { a: 3.0 }, 2).unwrap(), 2.0);
        assert_eq!(kappa(&MarkDistribution::Rademacher, 2).unwrap(), 2.0);
        // d = 2: π e^{−1/2} + 2π √(2π) Φ(1).
        let phi1 = 0.841_344_746_068_542_9;
        let exact = PI * (-0.5f64).exp() + 2.0 * PI * (2.0 * PI).sqrt() * phi1;
        let q = kappa_integral(2.0, 2).unwrap();
        assert!((q - exact).abs() < 1e-9 * exact, "{q} vs {exact}");
        assert!(kappa(&G1, 2).unwrap() >= 2.0);
        // Independent Riemann sum in u = log ρ on the outer part.
        let du = 1e-4;
        let outer: f64 = (0..400_000)
            .map(|k| {
                let u = (k as f64 + 0.5) * du;
                2.0 * PI * (2.0 * u).exp() * (-0.5 * (1.0 + u).powi(2)).exp() * du
            })
            .sum();
        let riemann = PI * (-0.5f64).exp() + outer;
        assert!((q - riemann).abs() < 1e-4 * q);
        assert!(kappa_integral(2.0, 3).unwrap() > 0.0);
    }

    #[test]
    fn kappa_integral_does_not_grow_with_beta() {
        // [x]^β = (1 + log⁺|x|)² for every finite β.
        let vals: Vec<f64> = [0.5, 1.0, 2.0, 4.0].iter().map(|&b| kappa_integral(b, 2).unwrap()).collect();
        for w in vals.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-10));
        }
    }

    #[test]
    fn sup_tail_arithmetic() {
        let u = MarkDistribution::Uniform { a: 1.0 };
        let a = concentration_threshold(&inputs(u, 1.0, 1.0, BoundVariant::Sup)).unwrap();
        assert!((a.tail_probability - 8.0 * (-0.5f64).exp()).abs() < 1e-12);
        assert!((a.tail_probability - 4.8522).abs() < 1e-4);
        let b = concentration_threshold(&inputs(u, 1.0, 20.0, BoundVariant::Sup)).unwrap();
        assert!((b.tail_probability - 8.0 * (-10f64).exp()).abs() < 1e-15);
        assert!(concentration_threshold(&inputs(u, 1.0, 0.5, BoundVariant::Sup)).is_err());
        assert!(concentration_threshold(&inputs(u, 0.5, 2.0, BoundVariant::Sup)).is_err());
    }

    #[test]
    fn thresholds_increase_in_t() {
        for variant in [BoundVariant::Sup, BoundVariant::Point, BoundVariant::Grad] {
            let mut prev = 0.0;
            for k in 0..20 {
                let t = 1.0 + 0.5 * k as f64;
                let b = concentration_threshold(&inputs(G1, 2.0, t, variant)).unwrap();
                assert!(b.threshold > prev, "{variant:?} at t = {t}");
                prev = b.threshold;
            }
        }
    }

    #[test]
    fn truncated_rates() {
        let u = MarkDistribution::Uniform { a: 1.0 };
        let k = Kernel::power_law(3.5);
        let rs = [8.0f64, 16.0, 32.0, 64.0];
        for (symmetric, rate) in [(false, 2.0 - 3.5), (true, f64::max(2.0 - 1.0 - 3.5, 1.0 - 3.5))] {
            let th: Vec<f64> = rs
                .iter()
                .map(|&r| truncated_bound(&k, &u, r, 2.0, symmetric).unwrap().threshold)
                .collect();
            for w in th.windows(2) {
                assert!(w[1] <= w[0]);
            }
            let (slope, _) = linear_fit(
                &rs.iter().map(|r| r.ln()).collect::<Vec<_>>(),
                &th.iter().map(|v| v.ln()).collect::<Vec<_>>(),
            );
            assert!((slope - rate).abs() <= 0.3, "symmetric {symmetric}: slope {slope} vs {rate}");
        }
        let r = 4f64.exp();
        let b = truncated_bound(&k, &G1, r, 1.0, false).unwrap();
        assert!((b.tail_probability - 4.0 * b.kappa * (-8f64).exp()).abs() < 1e-12);
        assert!(truncated_bound(&k, &G1, 1.5, 1.0, false).is_err());
    }
}
