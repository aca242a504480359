//! Point clouds and field synthesis on raster grids.
//!
//! A field `Σ m_i h(x − p_i)` is evaluated on cell centers. The kernel `h` is
//! split as `h·w + h·(1 − w)` with a taper `w` supported in `ρ < r_near`. The first part, which
//! carries the cusp of the power law at the origin, is stamped exactly
//! (through a finely sampled radial table). The second part is smooth; it is
//! computed by depositing the marks on a node grid with quintic weights and convolving
//! with the sampled kernel through an FFT. `Method::Direct` evaluates the sum
//! literally and serves as the reference.
//!
//! Untruncated kernels are simulated as `g·χ(ρ/r_sim)` with `r_sim` the
//! smallest radius such that `‖g^{r_sim}‖_{L²} ≤ tol·‖g‖_{L²}`, i.e. the
//! neglected part of the field has standard deviation at most `tol·sd(f)`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::fft2::{fast_len, Fft2};
use crate::kernels::{kernel_norms, Kernel, NormTarget, TruncationMode};
use crate::marks::MarkDistribution;
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Rect {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Rect { lo, hi }
    }

    /// `[x, x + w] × [y, y + h]`.
    pub fn at(x: f64, y: f64, w: f64, h: f64) -> Self {
        Rect::new([x, y], [x + w, y + h])
    }

    pub fn width(&self) -> f64 {
        self.hi[0] - self.lo[0]
    }

    pub fn height(&self) -> f64 {
        self.hi[1] - self.lo[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn dilate(&self, r: f64) -> Rect {
        Rect::new([self.lo[0] - r, self.lo[1] - r], [self.hi[0] + r, self.hi[1] + r])
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.lo[0] && p[0] <= self.hi[0] && p[1] >= self.lo[1] && p[1] <= self.hi[1]
    }

    /// Euclidean distance from `p` to the rectangle (0 inside).
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let dx = (self.lo[0] - p[0]).max(p[0] - self.hi[0]).max(0.0);
        let dy = (self.lo[1] - p[1]).max(p[1] - self.hi[1]).max(0.0);
        dx.hypot(dy)
    }
}

/// Cell `(i, j)` has center `origin + (i, j)·spacing`; values are row-major
/// with `j` the row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Cells tiling `rect`; the sides must be multiples of `spacing`.
    pub fn covering(rect: Rect, spacing: f64) -> Result<GridSpec> {
        if !(spacing > 0.0) {
            return Err(invalid("grid_spacing", "must be positive"));
        }
        let fx = rect.width() / spacing;
        let fy = rect.height() / spacing;
        let (nx, ny) = (fx.round(), fy.round());
        if nx < 1.0 || ny < 1.0 || (fx - nx).abs() > 1e-6 || (fy - ny).abs() > 1e-6 {
            return Err(invalid(
                "grid_spacing",
                format!(
                    "window {}x{} is not a positive multiple of the spacing {spacing}",
                    rect.width(),
                    rect.height()
                ),
            ));
        }
        Ok(GridSpec {
            origin: [rect.lo[0] + 0.5 * spacing, rect.lo[1] + 0.5 * spacing],
            spacing,
            nx: nx as usize,
            ny: ny as usize,
        })
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + i as f64 * self.spacing,
            self.origin[1] + j as f64 * self.spacing,
        ]
    }

    pub fn window(&self) -> Rect {
        let h = 0.5 * self.spacing;
        Rect::new(
            [self.origin[0] - h, self.origin[1] - h],
            [
                self.origin[0] + (self.nx as f64 - 0.5) * self.spacing,
                self.origin[1] + (self.ny as f64 - 0.5) * self.spacing,
            ],
        )
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index range `[lo, hi)` of cells whose centers fall in `[a, b]` along an axis.
    pub fn index_range(&self, axis: usize, a: f64, b: f64) -> (usize, usize) {
        let n = if axis == 0 { self.nx } else { self.ny };
        let o = self.origin[axis];
        let eps = 1e-9 * self.spacing;
        let lo = ((a - o - eps) / self.spacing).ceil().max(0.0) as usize;
        let hi = (((b - o + eps) / self.spacing).floor() + 1.0).clamp(0.0, n as f64) as usize;
        (lo.min(n), hi.max(lo.min(n)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CloudSource {
    /// Poisson process of the given intensity on a rectangle.
    Poisson { intensity: f64, window: Rect },
    /// Poisson process on a disc (used for single-point samples).
    PoissonDisc { intensity: f64, center: [f64; 2], radius: f64 },
    /// Sites of εZ² in the window, each kept with probability ε².
    Lattice { eps: f64, window: Rect },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 2]>,
    pub marks: Vec<f64>,
    pub aux: Vec<f64>,
    pub source: CloudSource,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// A cloud with explicitly given points and marks (aux uniforms 1/2).
    pub fn from_parts(points: Vec<[f64; 2]>, marks: Vec<f64>, window: Rect) -> Self {
        let aux = vec![0.5; points.len()];
        PointCloud {
            points,
            marks,
            aux,
            source: CloudSource::Poisson {
                intensity: f64::NAN,
                window,
            },
        }
    }
}

/// Draw a cloud. All randomness comes from `key`: a ChaCha stream for the
/// Poisson sources, per-site hashes for the lattice.
pub fn sample_cloud(source: &CloudSource, dist: &MarkDistribution, key: u64) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut marks = Vec::new();
    let mut aux = Vec::new();
    match *source {
        CloudSource::Poisson { intensity, window } => {
            if !(intensity >= 0.0) || !(window.width() > 0.0 && window.height() > 0.0) {
                return Err(invalid("window", "Poisson window must be non-degenerate"));
            }
            let mut rng = rng::stream(key, &[tag::CLOUD]);
            let n = poisson_count(intensity * window.area(), &mut rng);
            for _ in 0..n {
                let x = window.lo[0] + window.width() * rng.random::<f64>();
                let y = window.lo[1] + window.height() * rng.random::<f64>();
                points.push([x, y]);
                marks.push(dist.sample(&mut rng));
                aux.push(rng::open01(&mut rng));
            }
        }
        CloudSource::PoissonDisc {
            intensity,
            center,
            radius,
        } => {
            if !(intensity >= 0.0 && radius > 0.0) {
                return Err(invalid("window", "Poisson disc must be non-degenerate"));
            }
            let mut rng = rng::stream(key, &[tag::CLOUD]);
            let n = poisson_count(intensity * std::f64::consts::PI * radius * radius, &mut rng);
            for _ in 0..n {
                let r = radius * rng.random::<f64>().sqrt();
                let t = 2.0 * std::f64::consts::PI * rng.random::<f64>();
                points.push([center[0] + r * t.cos(), center[1] + r * t.sin()]);
                marks.push(dist.sample(&mut rng));
                aux.push(rng::open01(&mut rng));
            }
        }
        CloudSource::Lattice { eps, window } => {
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(invalid("eps", "lattice spacing must lie in (0, 1]"));
            }
            let keep = eps * eps;
            let i0 = (window.lo[0] / eps).ceil() as i64;
            let i1 = (window.hi[0] / eps).floor() as i64;
            let j0 = (window.lo[1] / eps).ceil() as i64;
            let j1 = (window.hi[1] / eps).floor() as i64;
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let k = rng::derive_seed(key, &[tag::LATTICE, i as u64, j as u64]);
                    if rng::hashed_uniform(k) >= keep {
                        continue;
                    }
                    points.push([i as f64 * eps, j as f64 * eps]);
                    marks.push(dist.from_uniforms(
                        rng::hashed_uniform(k.wrapping_add(1)),
                        rng::hashed_uniform(k.wrapping_add(2)),
                    ));
                    aux.push(rng::hashed_uniform(k.wrapping_add(3)));
                }
            }
        }
    }
    Ok(PointCloud {
        points,
        marks,
        aux,
        source: *source,
    })
}

fn poisson_count(mean: f64, rng: &mut rng::SimRng) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0)
}

/// How the effective mark `m_i` is formed from `(Y_i, U_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum MarkRule {
    Plain,
    /// `Y_i + h`
    Shift(f64),
    /// `|Y_i|·1{U_i ≤ 1/2 + η} − |Y_i|·1{U_i ≥ 1/2 + η}`
    Intensity(f64),
}

impl MarkRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MarkRule::Intensity(eta) if !(-0.5..=0.5).contains(&eta) => {
                Err(invalid("eta", format!("eta must lie in [-1/2, 1/2], got {eta}")))
            }
            MarkRule::Shift(h) if !h.is_finite() => Err(invalid("h", "mark shift must be finite")),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn apply(&self, y: f64, u: f64) -> f64 {
        match *self {
            MarkRule::Plain => y,
            MarkRule::Shift(h) => y + h,
            MarkRule::Intensity(eta) => {
                let t = 0.5 + eta;
                let pos = if u <= t { 1.0 } else { 0.0 };
                let neg = if u >= t { 1.0 } else { 0.0 };
                y.abs() * (pos - neg)
            }
        }
    }

    pub fn marks(&self, cloud: &PointCloud) -> Vec<f64> {
        cloud
            .marks
            .iter()
            .zip(&cloud.aux)
            .map(|(&y, &u)| self.apply(y, u))
            .collect()
    }
}

/// Field variant: optional kernel truncation `g_r` plus the mark rule. The
/// lattice variant is a property of the cloud source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Variant {
    pub truncation: Option<f64>,
    pub marks: MarkRule,
}

impl Variant {
    pub const PLAIN: Variant = Variant {
        truncation: None,
        marks: MarkRule::Plain,
    };

    pub fn kernel(&self, base: &Kernel) -> Kernel {
        match self.truncation {
            Some(r) => base.truncate(r, TruncationMode::Truncated),
            None => *base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Exact near-field stamping plus FFT far field.
    Split,
    /// Literal summation over all points and cells in range.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    /// Relative L² size of the kernel tail dropped from untruncated kernels.
    pub residual_tolerance: f64,
    /// Radius of the exactly stamped part of the kernel.
    pub near_radius: f64,
    /// Far-field node spacing in units of the grid spacing.
    pub far_stride: usize,
    pub method: Method,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            residual_tolerance: 1e-3,
            near_radius: 3.5,
            far_stride: 1,
            method: Method::Split,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tolerance > 0.0 && self.residual_tolerance < 1.0) {
            return Err(invalid("sim.residual_tolerance", "must lie in (0, 1)"));
        }
        if !(self.near_radius > 0.0) {
            return Err(invalid("sim.near_radius", "must be positive"));
        }
        if self.far_stride == 0 {
            return Err(invalid("sim.far_stride", "must be at least 1"));
        }
        Ok(())
    }
}

/// Smallest `r` with `‖g^r‖_{L²} ≤ tol·‖g‖_{L²}`, or `None` if `k` is already
/// compactly supported.
pub fn simulation_cutoff(k: &Kernel, tol: f64) -> Result<Option<f64>> {
    if k.keep_within.is_some() {
        return Ok(None);
    }
    let full = kernel_norms(k, NormTarget::G, f64::INFINITY)?.l2;
    let resid = |r: f64| -> Result<f64> {
        Ok(kernel_norms(&k.truncate(r, TruncationMode::Residual), NormTarget::G, f64::INFINITY)?.l2)
    };
    let mut hi = 4.0;
    while resid(hi)? > tol * full {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Numeric("kernel tail too heavy to truncate".into()));
        }
    }
    let mut lo = hi / 2.0;
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if resid(mid)? > tol * full {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Round up so that the cutoff is a tidy number.
    Ok(Some((hi * 4.0).ceil() / 4.0))
}

/// Kernel actually simulated for `k` under `opts`.
pub fn simulation_kernel(k: &Kernel, opts: &SimOptions) -> Result<Kernel> {
    Ok(match simulation_cutoff(k, opts.residual_tolerance)? {
        Some(r) => k.truncate(r, TruncationMode::Truncated),
        None => *k,
    })
}

/// Near/far partition `w(ρ) = exp(−(ρ/s)⁶)`, cut to 0 at the radius where
/// it falls below 1e−12. It is flat at the origin, so the far part
/// `h·(1 − w)` is smooth there despite the cusp of `h`, and it is entire, so
/// the far part interpolates well on the node grid.
#[derive(Debug, Clone, Copy)]
struct Taper {
    radius: f64,
    inv_s: f64,
}

impl Taper {
    fn new(radius: f64) -> Self {
        let s = radius / (1e12f64).ln().powf(1.0 / 6.0);
        Taper { radius, inv_s: 1.0 / s }
    }

    #[inline]
    fn value(&self, r: f64) -> f64 {
        if r >= self.radius {
            0.0
        } else {
            (-(r * self.inv_s).powi(6)).exp()
        }
    }

    #[inline]
    fn derivative(&self, r: f64) -> f64 {
        if r >= self.radius {
            0.0
        } else {
            let u = r * self.inv_s;
            -6.0 * u.powi(5) * self.inv_s * (-u.powi(6)).exp()
        }
    }
}

const TABLE_SIZE: usize = 1 << 14;

#[derive(Debug)]
struct NearTable {
    radius: f64,
    inv_step: f64,
    value: Vec<f64>,
    deriv: Vec<f64>,
}

impl NearTable {
    fn new(radius: f64, value: impl Fn(f64) -> f64, deriv: impl Fn(f64) -> f64) -> Self {
        let step = radius / TABLE_SIZE as f64;
        let xs = (0..=TABLE_SIZE + 1).map(|k| k as f64 * step);
        NearTable {
            radius,
            inv_step: 1.0 / step,
            value: xs.clone().map(&value).collect(),
            deriv: xs.map(&deriv).collect(),
        }
    }

    #[inline]
    fn lookup(table: &[f64], t: f64) -> f64 {
        let k = t as usize;
        let f = t - k as f64;
        let a = table[k];
        a + f * (table[k + 1] - a)
    }
}

#[derive(Debug)]
struct FarPlan {
    h: f64,
    fft: Fft2,
    node0: [f64; 2],
    /// Node index of output cell (0, 0) when stride is 1.
    offset: [usize; 2],
    stride: usize,
    value_spec: Vec<Complex64>,
    grad_spec: [Vec<Complex64>; 2],
}

/// Precomputed synthesis machinery for one kernel and one grid.
#[derive(Debug)]
pub struct Synthesizer {
    kernel: Kernel,
    spec: GridSpec,
    reach: f64,
    method: Method,
    near: Option<NearTable>,
    far: Option<FarPlan>,
}

/// Raw synthesis output: values and optionally the two gradient components.
pub struct Synthesis {
    pub values: Vec<f64>,
    pub gradient: Option<[Vec<f64>; 2]>,
}

impl Synthesizer {
    /// `kernel` is the kernel to simulate (with any truncation already
    /// applied); an untruncated kernel gets the simulation cutoff.
    pub fn new(kernel: &Kernel, spec: GridSpec, opts: &SimOptions) -> Result<Self> {
        kernel.validate()?;
        opts.validate()?;
        let eff = simulation_kernel(kernel, opts)?;
        let reach = eff.support_radius();
        let mut s = Synthesizer {
            kernel: eff,
            spec,
            reach,
            method: opts.method,
            near: None,
            far: None,
        };
        if opts.method == Method::Direct {
            return Ok(s);
        }
        let rn = opts.near_radius;
        if reach <= rn {
            s.near = Some(NearTable::new(reach, |r| eff.profile(r), |r| eff.profile_derivative(r)));
            return Ok(s);
        }
        let taper = Taper::new(rn);
        if eff.hole_radius() < rn {
            s.near = Some(NearTable::new(
                rn,
                move |r| eff.profile(r) * taper.value(r),
                move |r| eff.profile_derivative(r) * taper.value(r) + eff.profile(r) * taper.derivative(r),
            ));
        }
        let far_value = move |r: f64| eff.profile(r) * (1.0 - taper.value(r));
        let far_deriv =
            move |r: f64| eff.profile_derivative(r) * (1.0 - taper.value(r)) - eff.profile(r) * taper.derivative(r);
        s.far = Some(FarPlan::new(spec, reach, opts.far_stride, far_value, far_deriv));
        Ok(s)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Points farther than this from the window do not contribute.
    pub fn reach(&self) -> f64 {
        self.reach
    }

    /// Region in which points must be generated.
    pub fn cloud_window(&self) -> Rect {
        self.spec.window().dilate(self.reach)
    }

    pub fn run(&self, points: &[[f64; 2]], marks: &[f64], gradient: bool) -> Synthesis {
        let n = self.spec.len();
        let mut values = vec![0.0; n];
        let mut grad = if gradient {
            Some([vec![0.0; n], vec![0.0; n]])
        } else {
            None
        };
        match self.method {
            Method::Direct => self.direct(points, marks, &mut values, grad.as_mut()),
            Method::Split => {
                if let Some(t) = &self.near {
                    self.stamp(t, points, marks, &mut values, grad.as_mut());
                }
                if let Some(f) = &self.far {
                    f.apply(&self.spec, points, marks, &mut values, grad.as_mut());
                }
            }
        }
        Synthesis {
            values,
            gradient: grad,
        }
    }

    /// Synthesize a field sample for a cloud under a mark rule.
    pub fn synthesize(&self, cloud: &PointCloud, rule: MarkRule, gradient: bool) -> Result<Synthesis> {
        rule.validate()?;
        let marks = rule.marks(cloud);
        Ok(self.run(&cloud.points, &marks, gradient))
    }

    fn cell_box(&self, p: [f64; 2], radius: f64) -> Option<(usize, usize, usize, usize)> {
        let s = &self.spec;
        let (i0, i1) = s.index_range(0, p[0] - radius, p[0] + radius);
        let (j0, j1) = s.index_range(1, p[1] - radius, p[1] + radius);
        if i0 >= i1 || j0 >= j1 {
            None
        } else {
            Some((i0, i1, j0, j1))
        }
    }

    fn stamp(
        &self,
        t: &NearTable,
        points: &[[f64; 2]],
        marks: &[f64],
        out: &mut [f64],
        mut grad: Option<&mut [Vec<f64>; 2]>,
    ) {
        let s = &self.spec;
        let r2max = t.radius * t.radius;
        let mut us = vec![0.0; s.nx];
        for (p, &m) in points.iter().zip(marks) {
            if m == 0.0 {
                continue;
            }
            let Some((i0, i1, j0, j1)) = self.cell_box(*p, t.radius) else {
                continue;
            };
            for j in j0..j1 {
                let dy = s.origin[1] + j as f64 * s.spacing - p[1];
                let dy2 = dy * dy;
                let rem = r2max - dy2;
                if rem <= 0.0 {
                    continue;
                }
                let half = rem.sqrt();
                let (a, b) = s.index_range(0, p[0] - half, p[0] + half);
                let (a, b) = (a.max(i0), b.min(i1));
                if a >= b {
                    continue;
                }
                let row = j * s.nx;
                let dx0 = s.origin[0] + a as f64 * s.spacing - p[0];
                let cells = &mut out[row + a..row + b];
                // Radii first (a vectorizable loop), then table lookups.
                let us = &mut us[..b - a];
                for (q, u) in us.iter_mut().enumerate() {
                    let dx = dx0 + q as f64 * s.spacing;
                    *u = (dx * dx + dy2).sqrt() * t.inv_step;
                }
                for (cell, &u) in cells.iter_mut().zip(us.iter()) {
                    *cell += m * NearTable::lookup(&t.value, u);
                }
                if let Some(g) = grad.as_deref_mut() {
                    let [gx, gy] = g;
                    for q in 0..b - a {
                        let dx = dx0 + q as f64 * s.spacing;
                        let rho = (dx * dx + dy * dy).sqrt();
                        if rho > 0.0 {
                            let d = m * NearTable::lookup(&t.deriv, rho * t.inv_step) / rho;
                            gx[row + a + q] += d * dx;
                            gy[row + a + q] += d * dy;
                        }
                    }
                }
            }
        }
    }

    fn direct(&self, points: &[[f64; 2]], marks: &[f64], out: &mut [f64], mut grad: Option<&mut [Vec<f64>; 2]>) {
        let s = &self.spec;
        let k = &self.kernel;
        for (p, &m) in points.iter().zip(marks) {
            if m == 0.0 {
                continue;
            }
            let Some((i0, i1, j0, j1)) = self.cell_box(*p, self.reach) else {
                continue;
            };
            for j in j0..j1 {
                for i in i0..i1 {
                    let c = s.center(i, j);
                    let x = [c[0] - p[0], c[1] - p[1]];
                    out[j * s.nx + i] += m * k.value(x);
                    if let Some(g) = grad.as_deref_mut() {
                        let d = k.gradient(x);
                        g[0][j * s.nx + i] += m * d[0];
                        g[1][j * s.nx + i] += m * d[1];
                    }
                }
            }
        }
    }
}

impl FarPlan {
    fn new(
        spec: GridSpec,
        reach: f64,
        stride: usize,
        value: impl Fn(f64) -> f64,
        deriv: impl Fn(f64) -> f64,
    ) -> FarPlan {
        let h = spec.spacing * stride as f64;
        let pad = (reach / h).ceil() as usize + 3;
        // Nodes spanning the cell centers; the padding also leaves room for
        // the interpolation stencil when stride > 1.
        let core = |n: usize| -> usize {
            if stride == 1 {
                n
            } else {
                (((n - 1) as f64 * spec.spacing) / h).ceil() as usize + 1
            }
        };
        let nx_nodes = core(spec.nx) + 2 * pad;
        let ny_nodes = core(spec.ny) + 2 * pad;
        let nx = fast_len(nx_nodes + 1);
        let ny = fast_len(ny_nodes + 1);
        let node0 = [spec.origin[0] - pad as f64 * h, spec.origin[1] - pad as f64 * h];
        let fft = Fft2::new(nx, ny);
        let norm = 1.0 / (nx * ny) as f64;
        let kr = (reach / h).ceil() as i64 + 1;
        let mut kv = vec![0.0; nx * ny];
        let mut kgx = vec![0.0; nx * ny];
        let mut kgy = vec![0.0; nx * ny];
        for dy in -kr..=kr {
            for dx in -kr..=kr {
                let (x, y) = (dx as f64 * h, dy as f64 * h);
                let rho = x.hypot(y);
                if rho >= reach {
                    continue;
                }
                let idx = (dy.rem_euclid(ny as i64) as usize) * nx + dx.rem_euclid(nx as i64) as usize;
                kv[idx] = value(rho) * norm;
                if rho > 0.0 {
                    let d = deriv(rho) / rho * norm;
                    kgx[idx] = d * x;
                    kgy[idx] = d * y;
                }
            }
        }
        FarPlan {
            h,
            value_spec: fft.forward(kv),
            grad_spec: [fft.forward(kgx), fft.forward(kgy)],
            fft,
            node0,
            offset: [pad, pad],
            stride,
        }
    }

    fn apply(
        &self,
        spec: &GridSpec,
        points: &[[f64; 2]],
        marks: &[f64],
        out: &mut [f64],
        grad: Option<&mut [Vec<f64>; 2]>,
    ) {
        let (nx, ny) = (self.fft.nx, self.fft.ny);
        let mut buf = vec![0.0; nx * ny];
        let inv_h = 1.0 / self.h;
        for (p, &m) in points.iter().zip(marks) {
            if m == 0.0 {
                continue;
            }
            let fx = (p[0] - self.node0[0]) * inv_h;
            let fy = (p[1] - self.node0[1]) * inv_h;
            let (ix, iy) = (fx.floor(), fy.floor());
            if ix < 2.0 || iy < 2.0 || ix as usize + 3 >= nx || iy as usize + 3 >= ny {
                continue;
            }
            let wx = lagrange6(fx - ix);
            let wy = lagrange6(fy - iy);
            let base = (iy as usize - 2) * nx + ix as usize - 2;
            for (b, wyb) in wy.iter().enumerate() {
                let row = base + b * nx;
                for (a, wxa) in wx.iter().enumerate() {
                    buf[row + a] += m * wyb * wxa;
                }
            }
        }
        let spectrum = self.fft.forward(buf);
        let convolve = |k: &[Complex64]| -> Vec<f64> {
            self.fft
                .inverse(spectrum.iter().zip(k).map(|(a, b)| a * b).collect())
        };
        if let Some(g) = grad {
            for (dst, k) in g.iter_mut().zip(&self.grad_spec) {
                self.extract(spec, &convolve(k), dst);
            }
        }
        self.extract(spec, &convolve(&self.value_spec), out);
    }

    fn extract(&self, spec: &GridSpec, res: &[f64], out: &mut [f64]) {
        let nx = self.fft.nx;
        if self.stride == 1 {
            for j in 0..spec.ny {
                let row = (j + self.offset[1]) * nx + self.offset[0];
                for i in 0..spec.nx {
                    out[j * spec.nx + i] += res[row + i];
                }
            }
            return;
        }
        // Quintic Lagrange interpolation from the coarse node grid.
        let inv_h = 1.0 / self.h;
        let w = lagrange6;
        for j in 0..spec.ny {
            let fy = (spec.origin[1] + j as f64 * spec.spacing - self.node0[1]) * inv_h;
            let iy = fy.floor();
            let wy = w(fy - iy);
            let iy = iy as usize;
            for i in 0..spec.nx {
                let fx = (spec.origin[0] + i as f64 * spec.spacing - self.node0[0]) * inv_h;
                let ix = fx.floor();
                let wx = w(fx - ix);
                let ix = ix as usize;
                let mut v = 0.0;
                for (b, wyb) in wy.iter().enumerate() {
                    let row = (iy + b - 2) * nx;
                    for (a, wxa) in wx.iter().enumerate() {
                        v += wyb * wxa * res[row + ix + a - 2];
                    }
                }
                out[j * spec.nx + i] += v;
            }
        }
    }
}

/// Quintic Lagrange weights for nodes −2..=3 at offset `t ∈ [0, 1)`.
/// Depositing with these weights makes the far field exact for kernels that
/// are locally quintic, with error O(H⁶) otherwise.
#[inline]
fn lagrange6(t: f64) -> [f64; 6] {
    let d = [t + 2.0, t + 1.0, t, t - 1.0, t - 2.0, t - 3.0];
    // Denominators Π_{k≠j} (j − k) for nodes −2..=3.
    const DEN: [f64; 6] = [-120.0, 24.0, -12.0, 12.0, -24.0, 120.0];
    let mut w = [0.0; 6];
    for j in 0..6 {
        let mut p = 1.0;
        for (k, dk) in d.iter().enumerate() {
            if k != j {
                p *= dk;
            }
        }
        w[j] = p / DEN[j];
    }
    w
}

/// A synthesized field on a grid.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub gradient: Option<[Vec<f64>; 2]>,
    pub variant: Variant,
    /// Lattice spacing ε when the cloud came from εZ².
    pub lattice: Option<f64>,
    pub master_seed: u64,
    pub cloud: Option<Arc<PointCloud>>,
}

impl FieldSample {
    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Self {
        FieldSample {
            spec,
            values,
            gradient: None,
            variant: Variant::PLAIN,
            lattice: None,
            master_seed: 0,
            cloud: None,
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.spec.nx + i]
    }

    /// Flat binary raster: u64 width, u64 height, f64 spacing, f64 origin x,
    /// f64 origin y (all little-endian), then row-major f64 values.
    pub fn raster_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(40 + 8 * self.values.len());
        b.extend_from_slice(&(self.spec.nx as u64).to_le_bytes());
        b.extend_from_slice(&(self.spec.ny as u64).to_le_bytes());
        b.extend_from_slice(&self.spec.spacing.to_le_bytes());
        b.extend_from_slice(&self.spec.origin[0].to_le_bytes());
        b.extend_from_slice(&self.spec.origin[1].to_le_bytes());
        for v in &self.values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }
}

/// One-shot synthesis (builds a [`Synthesizer`]; reuse one for many clouds).
pub fn synthesize(
    cloud: &PointCloud,
    kernel: &Kernel,
    spec: GridSpec,
    variant: Variant,
    opts: &SimOptions,
    gradient: bool,
) -> Result<FieldSample> {
    variant.marks.validate()?;
    let synth = Synthesizer::new(&variant.kernel(kernel), spec, opts)?;
    let out = synth.synthesize(cloud, variant.marks, gradient)?;
    Ok(FieldSample {
        spec,
        values: out.values,
        gradient: out.gradient,
        variant,
        lattice: match cloud.source {
            CloudSource::Lattice { eps, .. } => Some(eps),
            _ => None,
        },
        master_seed: 0,
        cloud: Some(Arc::new(cloud.clone())),
    })
}

/// The coupled family `f^η` for several η on one cloud.
pub fn intensity_family(
    cloud: &PointCloud,
    synth: &Synthesizer,
    etas: &[f64],
) -> Result<Vec<Vec<f64>>> {
    etas.iter()
        .map(|&eta| Ok(synth.synthesize(cloud, MarkRule::Intensity(eta), false)?.values))
        .collect()
}

/// Cells over which a sup-distance is taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    All,
    Rect(Rect),
    Disc { center: [f64; 2], radius: f64 },
}

impl Region {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match *self {
            Region::All => true,
            Region::Rect(r) => r.contains(p),
            Region::Disc { center, radius } => (p[0] - center[0]).hypot(p[1] - center[1]) <= radius,
        }
    }
}

/// max over region cells of |a − b|.
pub fn sup_distance(a: &FieldSample, b: &FieldSample, region: Region) -> Result<f64> {
    if a.spec != b.spec {
        return Err(Error::Geometry("sup_distance needs identical grids".into()));
    }
    Ok(sup_abs(&a.spec, region, |k| a.values[k] - b.values[k]))
}

/// max over region cells of |v(k)|.
pub fn sup_abs(spec: &GridSpec, region: Region, v: impl Fn(usize) -> f64) -> f64 {
    let mut m: f64 = 0.0;
    for j in 0..spec.ny {
        for i in 0..spec.nx {
            if region.contains(spec.center(i, j)) {
                m = m.max(v(j * spec.nx + i).abs());
            }
        }
    }
    m
}

/// Field value at a single point, by direct summation.
pub fn point_value(kernel: &Kernel, points: &[[f64; 2]], marks: &[f64], x: [f64; 2]) -> f64 {
    points
        .iter()
        .zip(marks)
        .map(|(p, m)| m * kernel.value([x[0] - p[0], x[1] - p[1]]))
        .sum()
}
