//! Isotropic kernels, the smooth cutoff χ, and kernel norms.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::quadrature::{integrate, integrate_pieces};

/// Relative tolerance of all kernel-norm quadratures.
pub const NORM_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelFamily {
    /// g(x) = (1 + |x|)^(−α)
    PowerLaw { alpha: f64 },
    /// g(x) = exp(−(1 + |x|²)^(β/2))
    #[serde(rename = "stretchedexp")]
    StretchedExp { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationMode {
    /// g_r = g·χ(|x|/r), supported in B(r/2).
    Truncated,
    /// g^r = g·(1 − χ(|x|/r)), vanishing on B(r/4).
    Residual,
}

/// A radial kernel `h(ρ) = g(ρ)·χ(ρ/r_keep)·(1 − χ(ρ/r_remove))`, where either
/// cutoff factor may be absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    pub keep_within: Option<f64>,
    pub remove_within: Option<f64>,
}

/// The fixed cutoff χ.
///
/// With ψ(t) = e^(−1/t) for t > 0 (0 otherwise) and the smooth step
/// S(t) = ψ(t)/(ψ(t) + ψ(1−t)) = 1/(1 + exp(1/t − 1/(1−t))) on (0,1),
/// χ(x) = S(2 − 4x). Hence χ = 1 on [0, 1/4], χ = 0 on [1/2, ∞), χ is C^∞
/// and non-increasing. Derivatives: S'(t) = S(1−S)(1/t² + 1/(1−t)²) and
/// χ'(x) = −4 S'(2 − 4x).
pub fn chi(x: f64) -> f64 {
    smooth_step(2.0 - 4.0 * x)
}

pub fn chi_derivative(x: f64) -> f64 {
    -4.0 * smooth_step_derivative(2.0 - 4.0 * x)
}

fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        1.0 / (1.0 + (1.0 / t - 1.0 / (1.0 - t)).exp())
    }
}

fn smooth_step_derivative(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        let s = smooth_step(t);
        s * (1.0 - s) * (1.0 / (t * t) + 1.0 / ((1.0 - t) * (1.0 - t)))
    }
}

impl KernelFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelFamily::PowerLaw { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(invalid("kernel.alpha", "must be positive and finite"))
            }
            KernelFamily::StretchedExp { beta } if !(beta > 0.0 && beta < 1.0) => Err(invalid(
                "kernel.beta",
                "stretched-exponential exponent must lie strictly inside (0, 1)",
            )),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn value(&self, rho: f64) -> f64 {
        match *self {
            KernelFamily::PowerLaw { alpha } => (1.0 + rho).powf(-alpha),
            KernelFamily::StretchedExp { beta } => (-(1.0 + rho * rho).powf(0.5 * beta)).exp(),
        }
    }

    #[inline]
    pub fn derivative(&self, rho: f64) -> f64 {
        match *self {
            KernelFamily::PowerLaw { alpha } => -alpha * (1.0 + rho).powf(-alpha - 1.0),
            KernelFamily::StretchedExp { beta } => {
                let q = 1.0 + rho * rho;
                -self.value(rho) * beta * rho * q.powf(0.5 * beta - 1.0)
            }
        }
    }

    /// Power-law exponent, or infinity for faster-than-polynomial decay.
    pub fn decay_exponent(&self) -> f64 {
        match *self {
            KernelFamily::PowerLaw { alpha } => alpha,
            KernelFamily::StretchedExp { .. } => f64::INFINITY,
        }
    }
}

impl Kernel {
    pub fn new(family: KernelFamily) -> Self {
        Kernel {
            family,
            keep_within: None,
            remove_within: None,
        }
    }

    pub fn power_law(alpha: f64) -> Self {
        Self::new(KernelFamily::PowerLaw { alpha })
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        for (name, r) in [("truncation radius", self.keep_within), ("residual radius", self.remove_within)] {
            if let Some(r) = r {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(invalid("kernel", format!("{name} must be positive, got {r}")));
                }
            }
        }
        Ok(())
    }

    /// Check the decay exponent required by a given use of the kernel.
    pub fn require_alpha_above(&self, min: f64, purpose: &str) -> Result<()> {
        match self.family {
            KernelFamily::PowerLaw { alpha } if alpha <= min => Err(invalid(
                "kernel.alpha",
                format!("alpha must exceed {min} for {purpose} (got {alpha})"),
            )),
            _ => Ok(()),
        }
    }

    /// Multiply by χ(|x|/r) (truncated) or 1 − χ(|x|/r) (residual). Applying
    /// a second cutoff of the same mode keeps the more restrictive one.
    pub fn truncate(&self, r: f64, mode: TruncationMode) -> Kernel {
        let mut k = *self;
        match mode {
            TruncationMode::Truncated => {
                k.keep_within = Some(k.keep_within.map_or(r, |old| old.min(r)));
            }
            TruncationMode::Residual => {
                k.remove_within = Some(k.remove_within.map_or(r, |old| old.max(r)));
            }
        }
        k
    }

    /// The untruncated kernel.
    pub fn base(&self) -> Kernel {
        Kernel::new(self.family)
    }

    /// Radius beyond which the kernel vanishes identically.
    pub fn support_radius(&self) -> f64 {
        self.keep_within.map_or(f64::INFINITY, |r| 0.5 * r)
    }

    /// Radius inside which the kernel vanishes identically.
    pub fn hole_radius(&self) -> f64 {
        self.remove_within.map_or(0.0, |r| 0.25 * r)
    }

    fn weight(&self, rho: f64) -> f64 {
        let mut w = 1.0;
        if let Some(r) = self.keep_within {
            w *= chi(rho / r);
        }
        if let Some(r) = self.remove_within {
            w *= 1.0 - chi(rho / r);
        }
        w
    }

    fn weight_derivative(&self, rho: f64) -> f64 {
        let keep = self.keep_within.map_or((1.0, 0.0), |r| (chi(rho / r), chi_derivative(rho / r) / r));
        let rem = self
            .remove_within
            .map_or((1.0, 0.0), |r| (1.0 - chi(rho / r), -chi_derivative(rho / r) / r));
        keep.1 * rem.0 + keep.0 * rem.1
    }

    /// Radial profile h(ρ).
    #[inline]
    pub fn profile(&self, rho: f64) -> f64 {
        if self.keep_within.is_none() && self.remove_within.is_none() {
            return self.family.value(rho);
        }
        if rho >= self.support_radius() || rho <= self.hole_radius() && self.remove_within.is_some() {
            return 0.0;
        }
        self.family.value(rho) * self.weight(rho)
    }

    /// Radial derivative h'(ρ). At ρ = 0 this is the one-sided limit.
    #[inline]
    pub fn profile_derivative(&self, rho: f64) -> f64 {
        if self.keep_within.is_none() && self.remove_within.is_none() {
            return self.family.derivative(rho);
        }
        if rho >= self.support_radius() || rho <= self.hole_radius() && self.remove_within.is_some() {
            return 0.0;
        }
        self.family.derivative(rho) * self.weight(rho) + self.family.value(rho) * self.weight_derivative(rho)
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        self.profile(x[0].hypot(x[1]))
    }

    /// Analytic gradient; (0, 0) at the origin by isotropy.
    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let rho = x[0].hypot(x[1]);
        if rho == 0.0 {
            return [0.0, 0.0];
        }
        let d = self.profile_derivative(rho) / rho;
        [d * x[0], d * x[1]]
    }

    /// Radii at which the profile is not analytic or changes regime.
    fn breakpoints(&self) -> Vec<f64> {
        let mut b = vec![1.0];
        for r in [self.keep_within, self.remove_within].into_iter().flatten() {
            b.push(0.25 * r);
            b.push(0.5 * r);
        }
        b
    }
}

/// Which function's norms to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormTarget {
    G,
    GradG,
    TildeG,
    HatG,
    HatGradG,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

/// The logarithmic weight [x] = (1 + max(0, log|x|))^(2/β); 1 when β = ∞.
pub fn log_weight(rho: f64, beta: f64) -> f64 {
    if beta.is_infinite() || rho <= 1.0 {
        1.0
    } else {
        (1.0 + rho.ln()).powf(2.0 / beta)
    }
}

/// A radial profile together with the locations of its local maxima, so that
/// its maximum over any radius interval is exact.
struct Profile<'a> {
    f: Box<dyn Fn(f64) -> f64 + 'a>,
    maxima: Vec<(f64, f64)>,
}

impl<'a> Profile<'a> {
    fn new(f: Box<dyn Fn(f64) -> f64 + 'a>, extent: f64, breaks: &[f64]) -> Self {
        let mut grid: Vec<f64> = vec![0.0];
        let top = extent.max(4.0);
        let n = 6000;
        let lo = 1e-6f64.ln();
        for i in 0..=n {
            grid.push((lo + (top.ln() - lo) * i as f64 / n as f64).exp());
        }
        for &b in breaks {
            if b < top {
                grid.push(b);
            }
        }
        grid.sort_by(|a, b| a.total_cmp(b));
        grid.dedup();
        let vals: Vec<f64> = grid.iter().map(|&r| f(r)).collect();
        let mut maxima = Vec::new();
        for i in 1..grid.len() - 1 {
            if vals[i] > 0.0 && vals[i] >= vals[i - 1] && vals[i] >= vals[i + 1] {
                let (a, b) = (grid[i - 1], grid[i + 1]);
                let loc = golden_argmax(&f, a, b);
                let v = f(loc).max(vals[i]);
                let loc = if f(loc) >= vals[i] { loc } else { grid[i] };
                maxima.push((loc, v));
            }
        }
        if vals[0] >= vals[1] {
            maxima.push((0.0, vals[0]));
        }
        Profile { f, maxima }
    }

    fn eval(&self, r: f64) -> f64 {
        (self.f)(r)
    }

    fn max_on(&self, a: f64, b: f64) -> f64 {
        let mut m = self.eval(a).max(self.eval(b));
        for &(loc, v) in &self.maxima {
            if loc >= a && loc <= b {
                m = m.max(v);
            }
        }
        m
    }

    fn global_max(&self) -> f64 {
        self.maxima.iter().map(|m| m.1).fold(self.eval(0.0), f64::max)
    }
}

fn golden_argmax(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..100 {
        if f(c) >= f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
        if b - a < 1e-14 * (1.0 + b) {
            break;
        }
    }
    0.5 * (a + b)
}

/// Distance range {|x + y| : y ∈ Q}, Q = [−1/2, 1/2]².
fn square_radii(x: [f64; 2]) -> (f64, f64) {
    let dx = (x[0].abs() - 0.5).max(0.0);
    let dy = (x[1].abs() - 0.5).max(0.0);
    (dx.hypot(dy), (x[0].abs() + 0.5).hypot(x[1].abs() + 0.5))
}

fn check_integrable(k: &Kernel, target: NormTarget, power: f64) -> Result<()> {
    if k.keep_within.is_some() {
        return Ok(());
    }
    if let KernelFamily::PowerLaw { alpha } = k.family {
        let decay = match target {
            NormTarget::G | NormTarget::TildeG | NormTarget::HatG => alpha,
            _ => alpha + 1.0,
        };
        if decay * power <= 2.0 {
            return Err(invalid(
                "kernel.alpha",
                format!("L{power} norm of {target:?} diverges for alpha = {alpha}"),
            ));
        }
    }
    Ok(())
}

/// L¹, L² and L∞ norms over R² of g, |∇g|, g̃ = [x]g, ĝ or the hat of [x]|∇g|.
pub fn kernel_norms(k: &Kernel, target: NormTarget, beta_tail: f64) -> Result<Norms> {
    k.validate()?;
    check_integrable(k, target, 1.0)?;
    check_integrable(k, target, 2.0)?;
    let gradient = matches!(target, NormTarget::GradG | NormTarget::HatGradG);
    let weighted = !matches!(target, NormTarget::G | NormTarget::GradG);
    let radial = move |r: f64| {
        let base = if gradient { k.profile_derivative(r).abs() } else { k.profile(r).abs() };
        if weighted {
            base * log_weight(r, beta_tail)
        } else {
            base
        }
    };
    let support = k.support_radius();
    let mut breaks = k.breakpoints();
    let extent = if support.is_finite() { support } else { 64.0 * breaks.iter().cloned().fold(1.0, f64::max) };
    let profile = Profile::new(Box::new(radial), extent, &breaks);
    breaks.extend(profile.maxima.iter().map(|m| m.0));

    match target {
        NormTarget::HatG | NormTarget::HatGradG => hat_norms(&profile, &breaks, support),
        _ => {
            let mut pts: Vec<f64> = vec![0.0];
            pts.extend(breaks.iter().copied().filter(|b| *b > 0.0 && *b < support));
            if support.is_finite() {
                pts.push(support);
            }
            pts.sort_by(|a, b| a.total_cmp(b));
            pts.dedup();
            let inf = !support.is_finite();
            let m = profile.global_max();
            let l1 = integrate_pieces(|r| 2.0 * PI * r * profile.eval(r), &pts, inf, NORM_REL_TOL, 1e-16 * m)?;
            let l2 = integrate_pieces(
                |r| {
                    let v = profile.eval(r);
                    2.0 * PI * r * v * v
                },
                &pts,
                inf,
                NORM_REL_TOL,
                1e-16 * m * m,
            )?;
            Ok(Norms {
                l1: l1.value,
                l2: l2.value.sqrt(),
                linf: profile.global_max(),
            })
        }
    }
}

fn hat_norms(profile: &Profile, breaks: &[f64], support: f64) -> Result<Norms> {
    let hat = |x: [f64; 2]| {
        let (a, b) = square_radii(x);
        if a >= support {
            0.0
        } else {
            profile.max_on(a, b.min(support))
        }
    };
    // Radii along the ray at angle θ where the square's radius range hits a
    // breakpoint of the profile, so the inner integrand is smooth per piece.
    let ray_breaks = |theta: f64| -> Vec<f64> {
        let (c, s) = (theta.cos(), theta.sin());
        let mut pts = vec![0.0, 0.5 / c];
        for &t in breaks.iter().chain(std::iter::once(&support)) {
            if !t.is_finite() {
                continue;
            }
            for which in 0..2 {
                // Both radius bounds are non-decreasing along the ray.
                let g = |rho: f64| {
                    let r = square_radii([rho * c, rho * s]);
                    if which == 0 {
                        r.0 - t
                    } else {
                        r.1 - t
                    }
                };
                let (mut lo, mut hi) = (0.0, t + 2.0);
                if g(lo) > 0.0 || g(hi) < 0.0 {
                    continue;
                }
                for _ in 0..80 {
                    let m = 0.5 * (lo + hi);
                    if g(m) < 0.0 {
                        lo = m;
                    } else {
                        hi = m;
                    }
                }
                pts.push(0.5 * (lo + hi));
            }
        }
        let end = if support.is_finite() { support + 1.0 } else { f64::INFINITY };
        pts.retain(|p| *p < end);
        if end.is_finite() {
            pts.push(end);
        }
        pts.sort_by(|a, b| a.total_cmp(b));
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        pts
    };
    let ray = |theta: f64, power: i32| -> Result<f64> {
        let (c, s) = (theta.cos(), theta.sin());
        let pts = ray_breaks(theta);
        let q = integrate_pieces(
            |rho| rho * hat([rho * c, rho * s]).powi(power),
            &pts,
            !support.is_finite(),
            NORM_REL_TOL * 0.1,
            // Pieces where the cutoff makes the profile negligible.
            1e-16 * profile.global_max().powi(power),
        )?;
        Ok(q.value)
    };
    let mut err = None;
    let mut outer = |power: i32| -> f64 {
        let q = integrate(
            |theta| match ray(theta, power) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    f64::NAN
                }
            },
            0.0,
            PI / 4.0,
            NORM_REL_TOL,
            0.0,
        );
        match q {
            Ok(q) => 8.0 * q.value,
            Err(e) => {
                err = Some(e);
                f64::NAN
            }
        }
    };
    let l1 = outer(1);
    let l2 = outer(2).sqrt();
    if let Some(e) = err {
        return Err(e);
    }
    if !(l1.is_finite() && l2.is_finite()) {
        return Err(Error::Numeric("hat-majorant norm is not finite".into()));
    }
    Ok(Norms {
        l1,
        l2,
        linf: profile.global_max(),
    })
}

/// Standard deviation of a single-point field value, √(E[Y²])·‖g‖_{L²}.
pub fn field_sd(k: &Kernel, second_moment: f64) -> Result<f64> {
    Ok(second_moment.sqrt() * kernel_norms(k, NormTarget::G, f64::INFINITY)?.l2)
}
