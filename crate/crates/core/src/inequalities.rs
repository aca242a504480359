//! Resampling influences, the line-exploration algorithm and its revealments,
//! and numerical checks of the OSSS and Russo-type inequalities on small
//! lattice instances.
//!
//! Influences follow the usual convention: `I_i` is the probability that
//! resampling `Z_i` changes the indicator, i.e. `2·P(A, not A after resampling)`.

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::experiments::run_trials;
use crate::kernels::{Kernel, TruncationMode};
use crate::marks::MarkDistribution;
use crate::percolation::connects;
use crate::rng::{self, derive_seed, tag, SimRng};

/// Largest instance handled (number of lattice sites).
pub const MAX_SITES: usize = 200;

/// Independent coordinates and an event that is a function of them.
pub trait ProductEvent: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// A fresh draw of coordinate `i`.
    fn draw(&self, i: usize, rng: &mut SimRng) -> f64;
    fn occurs(&self, z: &[f64]) -> bool;
    /// The event with `z_i` replaced by `zi`.
    fn occurs_with(&self, z: &[f64], i: usize, zi: f64) -> bool {
        let mut w = z.to_vec();
        w[i] = zi;
        self.occurs(&w)
    }
    /// `occurs_with(z, i, fresh[i])` for every `i`.
    fn occurs_resampled(&self, z: &[f64], fresh: &[f64]) -> Vec<bool> {
        (0..z.len()).map(|i| self.occurs_with(z, i, fresh[i])).collect()
    }
}

/// A randomized algorithm that determines a [`ProductEvent`].
pub trait Algorithm: ProductEvent {
    /// Output of the algorithm and which coordinates it revealed.
    fn run_algorithm(&self, z: &[f64], rng: &mut SimRng) -> (bool, Vec<bool>);
}

/// `{Z_i ≥ θ}` for one coordinate of a product of `len` coordinates, all
/// distributed as `Y + shift`.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdEvent {
    pub dist: MarkDistribution,
    pub shift: f64,
    pub theta: f64,
    pub site: usize,
    pub len: usize,
}

impl ThresholdEvent {
    /// `P(Y + shift ≥ θ)`.
    pub fn probability(&self) -> f64 {
        self.dist.survival(self.theta - self.shift)
    }
}

impl ProductEvent for ThresholdEvent {
    fn len(&self) -> usize {
        self.len
    }
    fn draw(&self, _i: usize, rng: &mut SimRng) -> f64 {
        self.dist.sample(rng) + self.shift
    }
    fn occurs(&self, z: &[f64]) -> bool {
        z[self.site] >= self.theta
    }
}

impl Algorithm for ThresholdEvent {
    fn run_algorithm(&self, z: &[f64], _rng: &mut SimRng) -> (bool, Vec<bool>) {
        let mut revealed = vec![false; self.len];
        revealed[self.site] = true;
        (z[self.site] >= self.theta, revealed)
    }
}

/// How the coordinates `Z_i` are formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Version {
    /// `Z_i = Ber_i·(Y_i + h)`
    Level { h: f64 },
    /// `Z_i = Ber_i·(|Y_i|·1{U_i ≤ 1/2 + η} − |Y_i|·1{U_i ≥ 1/2 + η})`
    Intensity { eta: f64 },
}

/// Raw randomness behind one coordinate, shared by coupled versions.
#[derive(Debug, Clone, Copy)]
pub struct RawSite {
    pub kept: bool,
    pub y: f64,
    pub u: f64,
}

impl Version {
    #[inline]
    pub fn z(&self, s: &RawSite) -> f64 {
        if !s.kept {
            return 0.0;
        }
        match *self {
            Version::Level { h } => s.y + h,
            Version::Intensity { eta } => {
                let t = 0.5 + eta;
                let a = s.y.abs();
                a * ((s.u <= t) as u8 as f64 - (s.u >= t) as u8 as f64)
            }
        }
    }
}

/// Parameters of a crossing instance on the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstanceParams {
    pub marks: MarkDistribution,
    pub kernel: Kernel,
    pub eps: f64,
    /// Truncation radius: the kernel `g_r` is supported in `B(r/2)`.
    pub r: f64,
    /// The event is `Cross_ℓ(2R, R)` on `[0, 2R] × [0, R]`.
    pub big_r: f64,
    pub level: f64,
    pub version: Version,
    pub grid_spacing: f64,
}

/// `Cross_ℓ(2R, R)` for `f = Σ_{i∈Λ} Z_i g_r(· − i)`, with `Λ` the sites of
/// εZ² within distance r/2 of the rectangle.
#[derive(Debug, Clone)]
pub struct DiscreteInstance {
    pub params: InstanceParams,
    pub sites: Vec<[f64; 2]>,
    nx: usize,
    ny: usize,
    /// Cells (and kernel weights) within r/2 of each site.
    stamps: Vec<Vec<(u32, f64)>>,
    /// Sites within r of each cell center.
    near_sites: Vec<Vec<u16>>,
}

impl DiscreteInstance {
    pub fn new(params: InstanceParams) -> Result<Self> {
        let p = &params;
        p.marks.validate()?;
        p.kernel.validate()?;
        if !(p.eps > 0.0 && p.eps <= 1.0) {
            return Err(invalid("eps", "must lie in (0, 1]"));
        }
        if !(p.r > 0.0 && p.big_r > 0.0) {
            return Err(invalid("r", "r and R must be positive"));
        }
        if !(p.grid_spacing > 0.0 && p.grid_spacing <= 0.5 * p.r) {
            return Err(invalid("grid_spacing", "must lie in (0, r/2]"));
        }
        if let Version::Intensity { eta } = p.version {
            if !(-0.5..=0.5).contains(&eta) {
                return Err(invalid("eta", format!("eta must lie in [-1/2, 1/2], got {eta}")));
            }
        }
        let (w, h) = (2.0 * p.big_r, p.big_r);
        let nx = (w / p.grid_spacing).round() as usize;
        let ny = (h / p.grid_spacing).round() as usize;
        if (nx as f64 * p.grid_spacing - w).abs() > 1e-9 || (ny as f64 * p.grid_spacing - h).abs() > 1e-9 {
            return Err(invalid("grid_spacing", "R must be a multiple of the grid spacing"));
        }
        let half = 0.5 * p.r;
        let rect = crate::field::Rect::new([0.0, 0.0], [w, h]);
        let mut sites = Vec::new();
        let (a0, a1) = ((-half / p.eps).floor() as i64, ((w + half) / p.eps).ceil() as i64);
        let (b0, b1) = ((-half / p.eps).floor() as i64, ((h + half) / p.eps).ceil() as i64);
        for b in b0..=b1 {
            for a in a0..=a1 {
                let s = [a as f64 * p.eps, b as f64 * p.eps];
                if rect.distance(s) < half {
                    sites.push(s);
                }
            }
        }
        if sites.len() > MAX_SITES {
            return Err(invalid(
                "instance",
                format!("{} sites exceed the limit of {MAX_SITES}", sites.len()),
            ));
        }
        let k = p.kernel.truncate(p.r, TruncationMode::Truncated);
        let center = |c: usize| {
            [
                (c % nx) as f64 * p.grid_spacing + 0.5 * p.grid_spacing,
                (c / nx) as f64 * p.grid_spacing + 0.5 * p.grid_spacing,
            ]
        };
        let dist = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
        let stamps = sites
            .iter()
            .map(|s| {
                (0..nx * ny)
                    .filter_map(|c| {
                        let x = center(c);
                        let v = k.value([x[0] - s[0], x[1] - s[1]]);
                        (dist(x, *s) < half && v > 0.0).then_some((c as u32, v))
                    })
                    .collect()
            })
            .collect();
        let near_sites = (0..nx * ny)
            .map(|c| {
                (0..sites.len())
                    .filter(|&i| dist(center(c), sites[i]) <= p.r)
                    .map(|i| i as u16)
                    .collect()
            })
            .collect();
        Ok(DiscreteInstance {
            params,
            sites,
            nx,
            ny,
            stamps,
            near_sites,
        })
    }

    pub fn with_version(&self, version: Version) -> Self {
        let mut c = self.clone();
        c.params.version = version;
        c
    }

    pub fn raw_site(&self, rng: &mut SimRng) -> RawSite {
        let eps2 = self.params.eps * self.params.eps;
        RawSite {
            kept: eps2 >= 1.0 || rng::open01(rng) < eps2,
            y: self.params.marks.sample(rng),
            u: rng::open01(rng),
        }
    }

    pub fn field(&self, z: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.nx * self.ny];
        for (zi, st) in z.iter().zip(&self.stamps) {
            if *zi != 0.0 {
                for &(c, w) in st {
                    f[c as usize] += zi * w;
                }
            }
        }
        f
    }

    fn crosses(&self, f: &[f64]) -> bool {
        let (nx, ny, l) = (self.nx, self.ny, self.params.level);
        connects(nx, ny, true, |i, j| f[j * nx + i] + l >= 0.0, |i, _| i == 0, |i, _| i + 1 == nx)
    }

    /// Whether the coordinate can affect the event at all.
    pub fn touches_rectangle(&self, i: usize) -> bool {
        !self.stamps[i].is_empty()
    }

    /// The line-exploration algorithm for a given line height `u ∈ [0, R]`.
    pub fn explore(&self, z: &[f64], u: f64) -> (bool, Vec<bool>) {
        let p = &self.params;
        let (nx, ny, d) = (self.nx, self.ny, p.grid_spacing);
        let f = self.field(z);
        let dual = |c: usize| f[c] + p.level < 0.0;
        let mut revealed = vec![false; self.sites.len()];
        // Unrevealed sites influencing each cell; a cell is known at 0.
        let mut pending = vec![0u32; nx * ny];
        for st in &self.stamps {
            for &(c, _) in st {
                pending[c as usize] += 1;
            }
        }
        let reveal = |i: usize, revealed: &mut Vec<bool>, pending: &mut Vec<u32>| {
            if !revealed[i] {
                revealed[i] = true;
                for &(c, _) in &self.stamps[i] {
                    pending[c as usize] -= 1;
                }
            }
        };
        for (i, s) in self.sites.iter().enumerate() {
            if (s[1] - u).abs() <= p.r {
                reveal(i, &mut revealed, &mut pending);
            }
        }
        let line_rows: Vec<usize> = (0..ny)
            .filter(|&j| ((j as f64 + 0.5) * d - u).abs() <= 0.5 * d + 1e-12)
            .collect();
        let mut explored = vec![false; nx * ny];
        loop {
            // Grow the explored dual components from the line through cells
            // whose value is already determined.
            let mut stack: Vec<usize> = (0..nx * ny).filter(|&c| explored[c]).collect();
            for &j in &line_rows {
                for c in j * nx..(j + 1) * nx {
                    if !explored[c] && pending[c] == 0 && dual(c) {
                        explored[c] = true;
                        stack.push(c);
                    }
                }
            }
            while let Some(c) = stack.pop() {
                let (i, j) = (c % nx, c / nx);
                let nb = [
                    (i > 0).then(|| c - 1),
                    (i + 1 < nx).then(|| c + 1),
                    (j > 0).then(|| c - nx),
                    (j + 1 < ny).then(|| c + nx),
                ];
                for q in nb.into_iter().flatten() {
                    if !explored[q] && pending[q] == 0 && dual(q) {
                        explored[q] = true;
                        stack.push(q);
                    }
                }
            }
            // Reveal every site within r of the explored cells. Once nothing
            // new is revealed the components are closed: each explored cell's
            // neighbours are known.
            let mut grew = false;
            for (c, sites) in self.near_sites.iter().enumerate() {
                if explored[c] {
                    for &i in sites {
                        if !revealed[i as usize] {
                            reveal(i as usize, &mut revealed, &mut pending);
                            grew = true;
                        }
                    }
                }
            }
            if !grew {
                break;
            }
        }
        // A dual top-bottom crossing meets every row, so it is explored iff
        // it exists.
        let dual_cross = connects(
            nx,
            ny,
            false,
            |i, j| explored[j * nx + i],
            |_, j| j == 0,
            |_, j| j + 1 == ny,
        );
        (!dual_cross, revealed)
    }
}

impl ProductEvent for DiscreteInstance {
    fn len(&self) -> usize {
        self.sites.len()
    }

    fn draw(&self, _i: usize, rng: &mut SimRng) -> f64 {
        self.params.version.z(&self.raw_site(rng))
    }

    fn occurs(&self, z: &[f64]) -> bool {
        self.crosses(&self.field(z))
    }

    fn occurs_with(&self, z: &[f64], i: usize, zi: f64) -> bool {
        let mut f = self.field(z);
        let dz = zi - z[i];
        for &(c, w) in &self.stamps[i] {
            f[c as usize] += dz * w;
        }
        self.crosses(&f)
    }

    fn occurs_resampled(&self, z: &[f64], fresh: &[f64]) -> Vec<bool> {
        let base = self.field(z);
        let base_hit = self.crosses(&base);
        let mut f = base.clone();
        (0..z.len())
            .map(|i| {
                // The kernel is non-negative, so the crossing is increasing in
                // every coordinate and a non-decreasing resample keeps it.
                let dz = fresh[i] - z[i];
                if self.stamps[i].is_empty() || (dz >= 0.0 && base_hit) {
                    return base_hit;
                }
                for &(c, w) in &self.stamps[i] {
                    f[c as usize] += dz * w;
                }
                let hit = self.crosses(&f);
                for &(c, _) in &self.stamps[i] {
                    f[c as usize] = base[c as usize];
                }
                hit
            })
            .collect()
    }
}

impl Algorithm for DiscreteInstance {
    fn run_algorithm(&self, z: &[f64], rng: &mut SimRng) -> (bool, Vec<bool>) {
        let u = self.params.big_r * rng.random::<f64>();
        self.explore(z, u)
    }
}

const BATCHES: usize = 20;

fn batch_of(t: u64, n: usize) -> usize {
    (t as usize * BATCHES / n.max(1)).min(BATCHES - 1)
}

fn half_width_of_batches(xs: &[f64]) -> f64 {
    let k = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / k;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0);
    1.96 * (v / k).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceEstimate {
    /// Per-site influence `I_i`.
    pub influence: Vec<f64>,
    /// Probability of the event.
    pub p: f64,
    pub n: usize,
    /// Per-batch influences, for interval estimates of derived sums.
    #[serde(skip)]
    pub batches: Vec<Vec<f64>>,
    #[serde(skip)]
    pub batch_p: Vec<f64>,
}

/// `I_i = 2·freq(A holds and fails after resampling Z_i)` over `n` trials.
pub fn influences<E: ProductEvent>(event: &E, n: usize, seed: u64) -> Result<InfluenceEstimate> {
    if n < BATCHES {
        return Err(invalid("trials", format!("need at least {BATCHES} trials")));
    }
    let m = event.len();
    let per_trial = run_trials(n, |t| {
        let mut rng = rng::stream(seed, &[tag::RESAMPLE, t]);
        let z: Vec<f64> = (0..m).map(|i| event.draw(i, &mut rng)).collect();
        let fresh: Vec<f64> = (0..m).map(|i| event.draw(i, &mut rng)).collect();
        let a = event.occurs(&z);
        let flips = if a {
            event.occurs_resampled(&z, &fresh).into_iter().map(|b| !b).collect()
        } else {
            vec![false; m]
        };
        Ok((a, flips))
    })?;
    let mut batches = vec![vec![0.0; m]; BATCHES];
    let mut batch_p = vec![0.0; BATCHES];
    let mut counts = [0usize; BATCHES];
    let mut total = vec![0.0; m];
    let mut hits = 0usize;
    for (t, (a, flips)) in per_trial.iter().enumerate() {
        let b = batch_of(t as u64, n);
        counts[b] += 1;
        batch_p[b] += *a as u8 as f64;
        hits += *a as usize;
        for (i, f) in flips.iter().enumerate() {
            if *f {
                batches[b][i] += 2.0;
                total[i] += 2.0;
            }
        }
    }
    for b in 0..BATCHES {
        let c = counts[b] as f64;
        batch_p[b] /= c;
        batches[b].iter_mut().for_each(|x| *x /= c);
    }
    Ok(InfluenceEstimate {
        influence: total.iter().map(|x| x / n as f64).collect(),
        p: hits as f64 / n as f64,
        n,
        batches,
        batch_p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RevealmentEstimate {
    pub revealment: Vec<f64>,
    pub n: usize,
    #[serde(skip)]
    pub batches: Vec<Vec<f64>>,
}

/// Revealment frequencies of the algorithm. Every run's output is compared
/// with the event itself; a mismatch is an error.
pub fn revealments<E: Algorithm>(event: &E, n: usize, seed: u64) -> Result<RevealmentEstimate> {
    if n < BATCHES {
        return Err(invalid("trials", format!("need at least {BATCHES} trials")));
    }
    let m = event.len();
    let per_trial = run_trials(n, |t| {
        let mut rng = rng::stream(seed, &[tag::REVEAL, t]);
        let z: Vec<f64> = (0..m).map(|i| event.draw(i, &mut rng)).collect();
        let (out, revealed) = event.run_algorithm(&z, &mut rng);
        if out != event.occurs(&z) {
            return Err(Error::Numeric(format!(
                "exploration algorithm disagrees with direct detection on trial {t}"
            )));
        }
        Ok(revealed)
    })?;
    let mut batches = vec![vec![0.0; m]; BATCHES];
    let mut counts = [0usize; BATCHES];
    let mut total = vec![0.0; m];
    for (t, rev) in per_trial.iter().enumerate() {
        let b = batch_of(t as u64, n);
        counts[b] += 1;
        for (i, r) in rev.iter().enumerate() {
            if *r {
                batches[b][i] += 1.0;
                total[i] += 1.0;
            }
        }
    }
    for b in 0..BATCHES {
        let c = counts[b] as f64;
        batches[b].iter_mut().for_each(|x| *x /= c);
    }
    Ok(RevealmentEstimate {
        revealment: total.iter().map(|x| x / n as f64).collect(),
        n,
        batches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OsssReport {
    pub p: f64,
    pub variance: f64,
    /// `½ Σ δ_i I_i`
    pub bound: f64,
    /// 95% half-width of `variance − bound`.
    pub ci: f64,
    pub holds: bool,
    pub influence: Vec<f64>,
    pub revealment: Vec<f64>,
}

/// `Var[1_A] ≤ ½ Σ δ_i I_i`, accepted up to three half-widths.
pub fn osss_check<E: Algorithm>(event: &E, n: usize, seed: u64) -> Result<OsssReport> {
    let inf = influences(event, n, derive_seed(seed, &[1]))?;
    let rev = revealments(event, n, derive_seed(seed, &[2]))?;
    Ok(osss_from(&inf, &rev))
}

pub fn osss_from(inf: &InfluenceEstimate, rev: &RevealmentEstimate) -> OsssReport {
    let bound_of = |i: &[f64], d: &[f64]| 0.5 * i.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
    let diffs: Vec<f64> = (0..BATCHES)
        .map(|b| {
            let p = inf.batch_p[b];
            p * (1.0 - p) - bound_of(&inf.batches[b], &rev.batches[b])
        })
        .collect();
    let variance = inf.p * (1.0 - inf.p);
    let bound = bound_of(&inf.influence, &rev.revealment);
    let ci = half_width_of_batches(&diffs);
    OsssReport {
        p: inf.p,
        variance,
        bound,
        ci,
        holds: variance <= bound + 3.0 * ci,
        influence: inf.influence.clone(),
        revealment: rev.revealment.clone(),
    }
}

/// Largest `h₀` with `P(Y ≤ h₀) ≤ 2 P(Y ≥ h₀)`, by bisection.
pub fn h0(dist: &MarkDistribution) -> Result<f64> {
    let g = |h: f64| dist.cdf(h) - 2.0 * dist.survival(h);
    if g(0.0) > 0.0 {
        return Err(invalid("marks", "P(Y ≤ 0) > 2 P(Y ≥ 0); no admissible h₀"));
    }
    let mut hi = dist.quantile(1.0 - 1e-12);
    if g(hi) <= 0.0 {
        return Ok(hi);
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RussoReport {
    /// Value of `h` (level version) or `η` (intensity version).
    pub at: f64,
    pub p: f64,
    /// Forward differences with steps `Δ` and `Δ/2`.
    pub derivative_coarse: f64,
    pub derivative_fine: f64,
    /// `2·D(Δ/2) − D(Δ)`
    pub richardson: f64,
    pub influence_sum: f64,
    /// `Σ I_i / (4 c_Mills)` or `½ Σ I_i`
    pub lower_bound: f64,
    /// 95% half-width of `derivative_fine − lower_bound`.
    pub ci: f64,
    pub holds: bool,
}

/// Forward-difference derivative of `P(Cross)` in `h` (or `η`) with common
/// random numbers, against the Russo-type lower bound. `step` is the coarse
/// step `Δ`.
pub fn russo_check(inst: &DiscreteInstance, step: f64, n: usize, seed: u64) -> Result<RussoReport> {
    let (at, shifted, constant) = match inst.params.version {
        Version::Level { h } => {
            let marks = inst.params.marks;
            if !marks.log_concave() || !marks.mills_ratio().is_finite() {
                return Err(invalid(
                    "marks",
                    "the level version needs a symmetric log-concave law with finite Mills ratio",
                ));
            }
            let h0 = h0(&marks)?;
            if !(0.0..=h0).contains(&h) {
                return Err(invalid("h", format!("h = {h} lies outside [0, h0 = {h0:.6}]")));
            }
            let c = 1.0 / (4.0 * marks.mills_ratio());
            (h, (|d: f64, v: f64| Version::Level { h: v + d }) as fn(f64, f64) -> Version, c)
        }
        Version::Intensity { eta } => {
            if eta + step > 0.5 {
                return Err(invalid("eta", "eta + step must not exceed 1/2"));
            }
            (eta, (|d: f64, v: f64| Version::Intensity { eta: v + d }) as fn(f64, f64) -> Version, 0.5)
        }
    };
    if !(step > 0.0) {
        return Err(invalid("step", "must be positive"));
    }
    let inf = influences(inst, n, derive_seed(seed, &[1]))?;
    let versions = [shifted(0.0, at), shifted(0.5 * step, at), shifted(step, at)];
    let m = inst.len();
    let per_trial = run_trials(n, |t| {
        let mut rng = rng::stream(derive_seed(seed, &[2]), &[tag::RESAMPLE, t]);
        let raw: Vec<RawSite> = (0..m).map(|_| inst.raw_site(&mut rng)).collect();
        let hits: Vec<bool> = versions
            .iter()
            .map(|v| inst.crosses(&inst.field(&raw.iter().map(|s| v.z(s)).collect::<Vec<f64>>())))
            .collect();
        if hits.windows(2).any(|w| w[0] && !w[1]) {
            return Err(Error::Numeric("coupled crossing indicator decreased with the parameter".into()));
        }
        Ok(hits)
    })?;
    let freq = |k: usize, range: std::ops::Range<usize>| {
        per_trial[range.clone()].iter().filter(|h| h[k]).count() as f64 / range.len() as f64
    };
    let d_coarse = (freq(2, 0..n) - freq(0, 0..n)) / step;
    let d_fine = (freq(1, 0..n) - freq(0, 0..n)) / (0.5 * step);
    let influence_sum: f64 = inf.influence.iter().sum();
    let lower_bound = constant * influence_sum;
    let diffs: Vec<f64> = (0..BATCHES)
        .map(|b| {
            let lo = b * n / BATCHES;
            let hi = ((b + 1) * n / BATCHES).max(lo + 1);
            let d = (freq(1, lo..hi) - freq(0, lo..hi)) / (0.5 * step);
            d - constant * inf.batches[b].iter().sum::<f64>()
        })
        .collect();
    let ci = half_width_of_batches(&diffs);
    Ok(RussoReport {
        at,
        p: freq(0, 0..n),
        derivative_coarse: d_coarse,
        derivative_fine: d_fine,
        richardson: 2.0 * d_fine - d_coarse,
        influence_sum,
        lower_bound,
        ci,
        holds: d_fine >= lower_bound - 3.0 * ci,
    })
}

/// Reproducible small instances of the level version: `R` cycles through
/// `scales`, the level is uniform on `[−level_range, level_range]` and `h`
/// uniform on `[0, h₀]`.
#[allow(clippy::too_many_arguments)]
pub fn random_instances(
    marks: MarkDistribution,
    kernel: Kernel,
    count: usize,
    scales: &[f64],
    r: f64,
    eps: f64,
    grid_spacing: f64,
    level_range: f64,
    seed: u64,
) -> Result<Vec<DiscreteInstance>> {
    if scales.is_empty() {
        return Err(invalid("scales", "must not be empty"));
    }
    let top = h0(&marks)?;
    (0..count)
        .map(|k| {
            let mut rng = rng::stream(seed, &[tag::INSTANCES, k as u64]);
            let level = level_range * (2.0 * rng.random::<f64>() - 1.0);
            let h = top * rng.random::<f64>();
            DiscreteInstance::new(InstanceParams {
                marks,
                kernel,
                eps,
                r,
                big_r: scales[k % scales.len()],
                level,
                version: Version::Level { h },
                grid_spacing,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleParams {
    pub gamma: f64,
    pub c_arm: f64,
    pub xi: f64,
    pub zeta: f64,
    pub big_r: f64,
    /// `R^γ`
    pub r: f64,
    /// `R^ζ`
    pub r_bar: f64,
    /// `R^{−ξ}`
    pub h: f64,
}

impl ScheduleParams {
    /// `|1 − ζ − (ζ − γ)·c_Arm|`
    pub fn identity_residual(&self) -> f64 {
        (1.0 - self.zeta - (self.zeta - self.gamma) * self.c_arm).abs()
    }
}

/// Scales `r = R^γ`, `r̄ = R^ζ`, `h = R^{−ξ}` with `ζ = (γ c_Arm + 1)/(c_Arm + 1)`.
/// With `alpha` given, also enforces `γ < 2/(α − 2)` of the intensity version.
pub fn scale_schedule(gamma: f64, c_arm: f64, xi: f64, big_r: f64, alpha: Option<f64>) -> Result<ScheduleParams> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid("gamma", "must lie in (0, 1)"));
    }
    if !(c_arm > 0.0) {
        return Err(invalid("c_arm", "must be positive"));
    }
    if let Some(a) = alpha {
        if a > 2.0 && gamma >= 2.0 / (a - 2.0) {
            return Err(invalid("gamma", format!("must be below 2/(alpha - 2) = {}", 2.0 / (a - 2.0))));
        }
    }
    let zeta = (gamma * c_arm + 1.0) / (c_arm + 1.0);
    if !(xi > 0.0 && xi < 1.0 - zeta) {
        return Err(invalid("xi", format!("must lie in (0, 1 - zeta) = (0, {})", 1.0 - zeta)));
    }
    if !(big_r > 0.0) {
        return Err(invalid("R", "must be positive"));
    }
    Ok(ScheduleParams {
        gamma,
        c_arm,
        xi,
        zeta,
        big_r,
        r: big_r.powf(gamma),
        r_bar: big_r.powf(zeta),
        h: big_r.powf(-xi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const G1: MarkDistribution = MarkDistribution::Gaussian { sigma: 1.0 };

    fn small(big_r: f64, level: f64, version: Version) -> DiscreteInstance {
        DiscreteInstance::new(InstanceParams {
            marks: G1,
            kernel: Kernel::power_law(3.5),
            eps: 1.0,
            r: 3.0,
            big_r,
            level,
            version,
            grid_spacing: 0.25,
        })
        .unwrap()
    }

    #[test]
    fn site_set_and_guard() {
        let inst = small(6.0, 0.0, Version::Level { h: 0.0 });
        assert!(inst.len() <= MAX_SITES);
        assert!(inst.sites.iter().all(|s| s[0] >= -1.5 && s[0] <= 13.5 && s[1] >= -1.5 && s[1] <= 7.5));
        let big = DiscreteInstance::new(InstanceParams {
            big_r: 20.0,
            ..inst.params
        });
        assert!(big.is_err());
    }

    #[test]
    fn single_site_influence_and_osss_equality() {
        let ev = ThresholdEvent {
            dist: G1,
            shift: 0.0,
            theta: 0.3,
            site: 0,
            len: 3,
        };
        let q = ev.probability();
        let inf = influences(&ev, 40_000, 7).unwrap();
        assert!((inf.influence[0] - 2.0 * q * (1.0 - q)).abs() < 0.015, "{:?}", inf.influence);
        assert_eq!(inf.influence[1], 0.0);
        let rep = osss_check(&ev, 40_000, 8).unwrap();
        assert!((rep.revealment[0] - 1.0).abs() < 1e-15);
        // Var = q(1−q) = ½·1·2q(1−q)
        assert!((rep.variance - rep.bound).abs() < 3.0 * rep.ci + 0.01);
        assert!(rep.holds);
    }

    #[test]
    fn single_site_russo_closed_form() {
        // P(h) = S(θ − h), ∂P/∂h = μ(θ − h), I = 2q(1−q).
        let c = G1.mills_ratio();
        let h0 = h0(&G1).unwrap();
        for &theta in &[-1.0, 0.0, 0.5, 1.5] {
            for k in 0..=4 {
                let h = h0 * k as f64 / 4.0;
                let q = G1.survival(theta - h);
                let d = G1.pdf(theta - h).unwrap();
                assert!(d >= 2.0 * q * (1.0 - q) / (4.0 * c), "theta {theta} h {h}");
            }
        }
    }

    #[test]
    fn h0_gaussian_is_two_thirds_quantile() {
        let h = h0(&G1).unwrap();
        assert!((G1.cdf(h) - 2.0 / 3.0).abs() < 1e-10);
        let l = h0(&MarkDistribution::Laplace { b: 1.0 }).unwrap();
        assert!((l - 1.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn unreachable_site_has_zero_influence() {
        let inst = small(3.0, 0.0, Version::Level { h: 0.0 });
        let inf = influences(&inst, 200, 3).unwrap();
        for i in 0..inst.len() {
            if !inst.touches_rectangle(i) {
                assert_eq!(inf.influence[i], 0.0);
            }
        }
        assert!(inf.influence.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn positive_marks_sure_event() {
        let inst = small(3.0, 0.0, Version::Intensity { eta: 0.5 });
        let inf = influences(&inst, 200, 4).unwrap();
        assert_eq!(inf.p, 1.0);
        assert!(inf.influence.iter().all(|x| *x == 0.0));
        let rep = osss_check(&inst, 200, 5).unwrap();
        assert_eq!(rep.variance, 0.0);
        assert_eq!(rep.bound, 0.0);
    }

    #[test]
    fn first_wave_revealment_band() {
        // With all marks positive nothing is dual, so only the first wave runs
        // and δ_i = |[y_i − r, y_i + r] ∩ [0, R]| / R.
        let inst = small(4.0, 0.0, Version::Intensity { eta: 0.5 });
        let n = 4000;
        let rev = revealments(&inst, n, 9).unwrap();
        let (r, big) = (inst.params.r, inst.params.big_r);
        for (i, s) in inst.sites.iter().enumerate() {
            let exact = ((s[1] + r).min(big) - (s[1] - r).max(0.0)).max(0.0) / big;
            let hw = 4.0 * (exact * (1.0 - exact) / n as f64).sqrt() + 1e-12;
            assert!((rev.revealment[i] - exact).abs() <= hw, "site {s:?}: {} vs {exact}", rev.revealment[i]);
        }
    }

    #[test]
    fn wide_strip_reveals_everything() {
        let mut p = small(2.0, 0.0, Version::Level { h: 0.0 }).params;
        p.r = 6.0;
        let inst = DiscreteInstance::new(p).unwrap();
        let rev = revealments(&inst, 100, 1).unwrap();
        assert!(rev.revealment.iter().all(|d| *d == 1.0));
    }

    #[test]
    fn algorithm_matches_detection_and_osss_holds() {
        for (k, level) in [-0.2, 0.0, 0.15].into_iter().enumerate() {
            let inst = small(3.0 + k as f64, level, Version::Level { h: 0.1 });
            let rep = osss_check(&inst, 800, 10 + k as u64).unwrap();
            assert!(rep.holds, "{rep:?}");
            assert!(rep.revealment.iter().all(|d| (0.0..=1.0).contains(d)));
        }
    }

    #[test]
    fn russo_rejects_large_h() {
        let h0 = h0(&G1).unwrap();
        let inst = small(3.0, 0.0, Version::Level { h: h0 + 0.1 });
        assert!(russo_check(&inst, 0.05, 100, 1).is_err());
    }

    #[test]
    fn schedule_examples() {
        let s = scale_schedule(0.5, 1.0, 0.1, 100.0, None).unwrap();
        assert!((s.zeta - 0.75).abs() < 1e-15);
        assert!(s.identity_residual() < 1e-12);
        assert!((s.r - 10.0).abs() < 1e-12);
        assert!((s.r_bar - 31.622_776_601_683_793).abs() < 1e-9);
        assert!((s.h - 0.630_957_344_480_193).abs() < 1e-12);
        assert!(scale_schedule(0.5, 1.0, 0.25, 100.0, None).is_err());
        assert!(scale_schedule(0.9, 1.0, 0.01, 100.0, Some(4.5)).is_err());
    }

    proptest! {
        #[test]
        fn schedule_identity(gamma in 0.01f64..0.99, c in 0.01f64..10.0, frac in 0.01f64..0.99) {
            let zeta = (gamma * c + 1.0) / (c + 1.0);
            let s = scale_schedule(gamma, c, frac * (1.0 - zeta), 50.0, None).unwrap();
            prop_assert!(s.identity_residual() < 1e-12);
        }
    }
}
