//! Characteristic function of `(f(0), ∇f(0))` and Fourier inversion to the
//! density of `f(0)`.
//!
//! For a radial kernel `g(x) = h(|x|)` and symmetric marks,
//! `log φ(u, v) = ∫ (φ_μ(u h(ρ) + |v| h'(ρ) cos θ) − 1) ρ dρ dθ`
//! with `φ_μ` the (real) characteristic function of the marks.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::experiments::{point_samples, FieldConfig};
use crate::kernels::{field_sd, Kernel};
use crate::marks::MarkDistribution;
use crate::quadrature::{integrate, integrate_to_infinity};
use crate::stats::ks_one_sample;

/// Tag separating density samples from other uses of [`point_samples`].
const SAMPLE_TAG: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharFnSpec {
    pub kernel: Kernel,
    pub marks: MarkDistribution,
    /// Relative tolerance of the spatial quadrature.
    pub tol: f64,
}

impl CharFnSpec {
    pub fn new(kernel: Kernel, marks: MarkDistribution) -> Self {
        CharFnSpec { kernel, marks, tol: 1e-10 }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.kernel.require_alpha_above(2.0, "the characteristic function")?;
        self.marks.validate()?;
        if !(self.tol > 0.0 && self.tol < 1e-2) {
            return Err(invalid("tol", "must lie in (0, 0.01)"));
        }
        Ok(())
    }

    pub fn sd(&self) -> Result<f64> {
        field_sd(&self.kernel, self.marks.second_moment())
    }
}

/// `∫_0^{2π} (φ_μ(a + b cos θ) − 1) dθ`
fn angular(marks: &MarkDistribution, a: f64, b: f64, tol: f64) -> Result<f64> {
    if b == 0.0 {
        return Ok(2.0 * PI * (marks.char_fn(a) - 1.0));
    }
    if let MarkDistribution::Rademacher = marks {
        // The sine part averages out: mean of cos(a + b cos θ) is cos(a) J₀(b).
        return Ok(2.0 * PI * (a.cos() * libm::j0(b) - 1.0));
    }
    let pieces = ((b.abs() / PI).ceil() as usize).clamp(1, 2000);
    let mut total = 0.0;
    for k in 0..pieces {
        let lo = PI * k as f64 / pieces as f64;
        let hi = PI * (k + 1) as f64 / pieces as f64;
        total += integrate(|t| marks.char_fn(a + b * t.cos()) - 1.0, lo, hi, tol, 1e-300)?.value;
    }
    Ok(2.0 * total)
}

/// `φ(u, v)`. Symmetric marks make it real; the imaginary part is zero.
pub fn char_fn(spec: &CharFnSpec, u: f64, v: [f64; 2]) -> Result<Complex64> {
    spec.validate()?;
    Ok(Complex64::new(log_char_fn(spec, u, v)?.exp(), 0.0))
}

/// `log φ(u, v)`.
pub fn log_char_fn(spec: &CharFnSpec, u: f64, v: [f64; 2]) -> Result<f64> {
    let vn = v[0].hypot(v[1]);
    if u == 0.0 && vn == 0.0 {
        return Ok(0.0);
    }
    let k = &spec.kernel;
    let phase = |rho: f64| u.abs() * k.profile(rho).abs() + vn * k.profile_derivative(rho).abs();
    // Split where the phase crosses multiples of π so each piece holds at
    // most about one oscillation, up to where the phase is small.
    let mut breaks = vec![0.0];
    let mut rho = 1e-6;
    let mut last = (phase(0.0) / PI).floor();
    let far = k.support_radius().min(1e7);
    while rho < far {
        let w = phase(rho);
        let level = (w / PI).floor();
        if level != last {
            breaks.push(rho);
            last = level;
        }
        if w < 1e-3 && rho > 1.0 {
            break;
        }
        rho *= 1.002;
    }
    let tail_start = rho.min(far);
    if *breaks.last().unwrap() < tail_start {
        breaks.push(tail_start);
    }
    let integrand = |r: f64| -> f64 {
        let a = u * k.profile(r);
        let b = vn * k.profile_derivative(r);
        match angular(&spec.marks, a, b, spec.tol) {
            Ok(x) => r * x,
            Err(_) => f64::NAN,
        }
    };
    let mut total = 0.0;
    for w in breaks.windows(2) {
        total += integrate(integrand, w[0], w[1], spec.tol, 1e-300)?.value;
    }
    if far.is_infinite() || tail_start < far {
        let tail = if far.is_infinite() {
            integrate_to_infinity(integrand, tail_start, spec.tol, 1e-300)?
        } else {
            integrate(integrand, tail_start, far, spec.tol, 1e-300)?
        };
        total += tail.value;
    }
    if !total.is_finite() {
        return Err(Error::Numeric(format!("characteristic function quadrature failed at u = {u}")));
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Density {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    /// Frequency cutoff and step of the trapezoidal rule.
    pub u_max: f64,
    pub du: f64,
    /// Trapezoidal integral of the density over `xs`.
    pub integral: f64,
    pub variance: f64,
    /// Most negative value, if any lobe falls below −1e−6.
    pub negative_lobe: Option<f64>,
}

impl Density {
    /// CDF by cumulative trapezoid over `xs`, linearly interpolated.
    pub fn cdf(&self) -> impl Fn(f64) -> f64 + '_ {
        let mut acc = vec![0.0; self.xs.len()];
        for i in 1..self.xs.len() {
            acc[i] = acc[i - 1] + 0.5 * (self.values[i] + self.values[i - 1]) * (self.xs[i] - self.xs[i - 1]);
        }
        move |x: f64| {
            let n = self.xs.len();
            if x <= self.xs[0] {
                return 0.0;
            }
            if x >= self.xs[n - 1] {
                return acc[n - 1];
            }
            let i = self.xs.partition_point(|v| *v <= x) - 1;
            let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
            // Exact integral of the linear interpolant up to x.
            let slope = (self.values[i + 1] - self.values[i]) / (self.xs[i + 1] - self.xs[i]);
            let dx = t * (self.xs[i + 1] - self.xs[i]);
            acc[i] + self.values[i] * dx + 0.5 * slope * dx * dx
        }
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().cloned().fold(f64::MIN, f64::max)
    }
}

/// Symmetric grid of `2m + 1` points on `±8 sd`.
pub fn default_grid(spec: &CharFnSpec, m: usize) -> Result<Vec<f64>> {
    let half = 8.0 * spec.sd()?;
    Ok((0..=2 * m).map(|i| -half + half * i as f64 / m as f64).collect())
}

/// Density of `f(0)` on `xs` by the trapezoidal rule
/// `(1/π) ∫_0^{u_max} φ(u) cos(ux) du`. `refine` divides the default step.
pub fn invert_density(spec: &CharFnSpec, xs: &[f64], refine: f64) -> Result<Density> {
    spec.validate()?;
    if matches!(spec.marks, MarkDistribution::Degenerate) {
        return Err(invalid("marks", "a point mass at zero gives f ≡ 0, which has no density"));
    }
    if !(refine >= 1.0) {
        return Err(invalid("refine", "must be at least 1"));
    }
    let sd = spec.sd()?;
    // Extend until |φ| < 1e−10.
    let mut u_max = 1.0 / sd;
    loop {
        if log_char_fn(spec, u_max, [0.0, 0.0])? < (1e-10f64).ln() {
            break;
        }
        u_max *= 1.5;
        if u_max > 1e7 / sd {
            return Err(Error::Numeric(
                "characteristic function does not decay; the field may lack a bounded density".into(),
            ));
        }
    }
    // Replicas of the density sit 2π/du apart; keep them beyond ±16 sd.
    let du = PI / (16.0 * sd) / refine;
    let n = (u_max / du).ceil() as usize;
    let du = u_max / n as f64;
    let phis: Vec<f64> = (0..=n)
        .into_par_iter()
        .map(|k| log_char_fn(spec, k as f64 * du, [0.0, 0.0]).map(f64::exp))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = xs
        .par_iter()
        .map(|&x| {
            let mut s = 0.5 * (phis[0] + phis[n] * (n as f64 * du * x).cos());
            for (k, p) in phis.iter().enumerate().take(n).skip(1) {
                s += p * (k as f64 * du * x).cos();
            }
            s * du / PI
        })
        .collect();
    let mut integral = 0.0;
    let mut second = 0.0;
    for i in 1..xs.len() {
        let h = xs[i] - xs[i - 1];
        integral += 0.5 * h * (values[i] + values[i - 1]);
        second += 0.5 * h * (values[i] * xs[i] * xs[i] + values[i - 1] * xs[i - 1] * xs[i - 1]);
    }
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    Ok(Density {
        xs: xs.to_vec(),
        values,
        u_max,
        du,
        integral,
        variance: second,
        negative_lobe: (min < -1e-6).then_some(min),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityComparison {
    pub ks: f64,
    pub n: usize,
    pub density: Density,
}

/// KS distance between the inverted CDF and `n` simulated values of `f(0)`.
pub fn empirical_density_compare(cfg: &FieldConfig, n: usize) -> Result<DensityComparison> {
    if n < 10_000 {
        return Err(invalid("trials", "need at least 10^4 samples"));
    }
    let spec = CharFnSpec::new(cfg.kernel, cfg.marks);
    let density = invert_density(&spec, &default_grid(&spec, 2000)?, 1.0)?;
    let samples = point_samples(cfg, n, SAMPLE_TAG)?;
    let ks = ks_one_sample(&samples, density.cdf());
    Ok(DensityComparison { ks, n, density })
}

/// `|φ(u, v)|` along rays `v = |v|·e₁`, as rows `(u, |v|, re, im)`.
pub fn phi_scan(spec: &CharFnSpec, us: &[f64], vs: &[f64]) -> Result<Vec<[f64; 4]>> {
    spec.validate()?;
    let pairs: Vec<(f64, f64)> = us.iter().flat_map(|&u| vs.iter().map(move |&v| (u, v))).collect();
    pairs
        .par_iter()
        .map(|&(u, v)| char_fn(spec, u, [v, 0.0]).map(|c| [u, v, c.re, c.im]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(alpha: f64, marks: MarkDistribution) -> CharFnSpec {
        CharFnSpec::new(Kernel::power_law(alpha), marks)
    }

    const G1: MarkDistribution = MarkDistribution::Gaussian { sigma: 1.0 };

    #[test]
    fn origin_and_bounds() {
        let s = spec(3.5, G1);
        assert_eq!(char_fn(&s, 0.0, [0.0, 0.0]).unwrap(), Complex64::new(1.0, 0.0));
        for row in phi_scan(&s, &[0.0, 0.5, 2.0, 8.0], &[0.0, 1.0, 4.0]).unwrap() {
            assert!(row[2].abs() <= 1.0 && row[3].abs() <= 1e-10, "{row:?}");
        }
    }

    #[test]
    fn small_u_expansion() {
        // −log φ(u, 0) ≈ u² E[Y²] ‖g‖²/2 with ‖g‖² = π/21 for α = 4.
        let s = spec(4.0, G1);
        let v = -log_char_fn(&s, 0.1, [0.0, 0.0]).unwrap();
        let approx = 0.01 * (PI / 21.0) / 2.0;
        assert!((v / approx - 1.0).abs() < 0.05, "{v} vs {approx}");
    }

    #[test]
    fn rademacher_bessel_path_matches_quadrature() {
        let (a, b) = (0.7, 2.3);
        let direct = integrate(|t| (a + b * f64::cos(t)).cos() - 1.0, 0.0, 2.0 * PI, 1e-12, 0.0)
            .unwrap()
            .value;
        let fast = angular(&MarkDistribution::Rademacher, a, b, 1e-12).unwrap();
        assert!((direct - fast).abs() < 1e-9);
    }

    #[test]
    fn gradient_direction_decays() {
        let s = spec(3.5, G1);
        let mut prev = 1.0;
        for v in [0.5, 1.0, 2.0, 4.0] {
            let p = char_fn(&s, 0.0, [v, 0.0]).unwrap().re;
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn inverted_density_gaussian_alpha4() {
        let s = spec(4.0, G1);
        let xs = default_grid(&s, 400).unwrap();
        let d = invert_density(&s, &xs, 1.0).unwrap();
        assert!((d.integral - 1.0).abs() < 1e-3, "{}", d.integral);
        assert!((d.variance / (PI / 21.0) - 1.0).abs() < 0.02, "{}", d.variance);
        for i in 0..xs.len() {
            assert!((d.values[i] - d.values[xs.len() - 1 - i]).abs() < 1e-10);
        }
        assert!(d.negative_lobe.is_none());
        let fine = invert_density(&s, &xs, 2.0).unwrap();
        assert!((fine.sup() / d.sup() - 1.0).abs() < 0.01);
    }

    #[test]
    fn degenerate_rejected() {
        let s = spec(3.5, MarkDistribution::Degenerate);
        assert!(invert_density(&s, &[0.0, 1.0], 1.0).is_err());
        assert!(spec(2.0, G1).validate().is_err());
    }
}
