//! Monte Carlo estimators for crossing, arm and truncation statistics.
//!
//! Every trial draws its cloud from `derive_seed(offset, [trial])`, where the
//! offset depends only on the master seed, the experiment and the table cell.
//! Trials run in parallel and are collected in index order, so results do not
//! depend on the thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::field::{
    sample_cloud, sup_abs, CloudSource, GridSpec, MarkRule, PointCloud, Rect, Region, SimOptions, Synthesizer,
    Variant,
};
use crate::kernels::{field_sd, Kernel, TruncationMode};
use crate::marks::MarkDistribution;
use crate::percolation::{detect, excursion_values, CrossingSpec, EventKind};
use crate::rng::derive_seed;
use crate::stats::{binomial_half_width, linear_fit, quantile};

/// Experiment identifiers mixed into seeds.
pub mod stream {
    pub const CROSSING: u64 = 101;
    pub const LEVEL_SWEEP: u64 = 102;
    pub const ETA_SWEEP: u64 = 103;
    pub const ARM: u64 = 104;
    pub const TRUNCATION: u64 = 105;
    pub const QUASI_INDEPENDENCE: u64 = 106;
    pub const SUP_NORM: u64 = 107;
    pub const POINT_VALUES: u64 = 108;
    pub const INEQUALITIES: u64 = 109;
    pub const ASSOCIATION: u64 = 110;
}

/// Everything needed to draw a field: marks, kernel, grid resolution and the
/// point source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldConfig {
    pub marks: MarkDistribution,
    pub kernel: Kernel,
    pub grid_spacing: f64,
    /// Draw clouds from the thinned lattice εZ² instead of a Poisson process.
    pub lattice: Option<f64>,
    pub sim: SimOptions,
    pub master_seed: u64,
}

impl FieldConfig {
    pub fn new(marks: MarkDistribution, kernel: Kernel) -> Self {
        FieldConfig {
            marks,
            kernel,
            grid_spacing: 0.25,
            lattice: None,
            sim: SimOptions::default(),
            master_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.marks.validate()?;
        self.kernel.validate()?;
        self.sim.validate()?;
        if !(self.grid_spacing > 0.0) {
            return Err(invalid("grid_spacing", "must be positive"));
        }
        if let Some(eps) = self.lattice {
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(invalid("lattice", "eps must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    /// Analytic standard deviation √(E[Y²])·‖g‖_{L²}.
    pub fn sd(&self) -> Result<f64> {
        field_sd(&self.kernel, self.marks.second_moment())
    }

    pub fn source(&self, window: Rect) -> CloudSource {
        match self.lattice {
            Some(eps) => CloudSource::Lattice { eps, window },
            None => CloudSource::Poisson { intensity: 1.0, window },
        }
    }

    fn offset(&self, path: &[u64]) -> u64 {
        derive_seed(self.master_seed, path)
    }
}

/// Run `n` independent trials in parallel, returning results in trial order.
pub fn run_trials<T: Send>(n: usize, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n as u64).into_par_iter().map(f).collect()
}

/// A synthesizer bound to one grid, plus the cloud source around it.
#[derive(Debug)]
pub struct FieldRunner {
    pub cfg: FieldConfig,
    pub synth: Synthesizer,
}

impl FieldRunner {
    pub fn new(cfg: &FieldConfig, spec: GridSpec, truncation: Option<f64>) -> Result<Self> {
        cfg.validate()?;
        let variant = Variant {
            truncation,
            marks: MarkRule::Plain,
        };
        Ok(FieldRunner {
            cfg: *cfg,
            synth: Synthesizer::new(&variant.kernel(&cfg.kernel), spec, &cfg.sim)?,
        })
    }

    /// Runner whose grid tiles the rectangle `[lo, hi]`.
    pub fn covering(cfg: &FieldConfig, lo: [f64; 2], hi: [f64; 2], truncation: Option<f64>) -> Result<Self> {
        let spec = GridSpec::covering(Rect::new(lo, hi), cfg.grid_spacing)?;
        Self::new(cfg, spec, truncation)
    }

    pub fn spec(&self) -> &GridSpec {
        self.synth.spec()
    }

    pub fn cloud(&self, key: u64) -> Result<PointCloud> {
        sample_cloud(&self.cfg.source(self.synth.cloud_window()), &self.cfg.marks, key)
    }

    pub fn values(&self, cloud: &PointCloud, rule: MarkRule) -> Result<Vec<f64>> {
        Ok(self.synth.synthesize(cloud, rule, false)?.values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub p_hat: f64,
    pub successes: usize,
    pub n: usize,
    pub half_width: f64,
    pub master_seed: u64,
    pub seed_offset: u64,
}

impl Estimate {
    pub fn from_counts(successes: usize, n: usize, master_seed: u64, seed_offset: u64) -> Self {
        let p_hat = if n == 0 { f64::NAN } else { successes as f64 / n as f64 };
        Estimate {
            p_hat,
            successes,
            n,
            half_width: binomial_half_width(p_hat, n),
            master_seed,
            seed_offset,
        }
    }

    pub fn from_indicators(hits: impl Iterator<Item = bool>, master_seed: u64, seed_offset: u64) -> Self {
        let (mut s, mut n) = (0, 0);
        for h in hits {
            n += 1;
            s += h as usize;
        }
        Self::from_counts(s, n, master_seed, seed_offset)
    }

    /// `self` exceeds `other` by more than both half-widths combined.
    pub fn clearly_above(&self, other: &Estimate) -> bool {
        self.p_hat - self.half_width > other.p_hat + other.half_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// Scale parameter R.
    pub scale: f64,
    /// Level ℓ or intensity tilt η.
    pub param: f64,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub scale_label: &'static str,
    pub param_label: &'static str,
    pub rows: Vec<SweepRow>,
    /// Fitted decay exponent (arm sweeps only).
    pub exponent: Option<f64>,
}

impl SweepTable {
    pub fn get(&self, scale: f64, param: f64) -> Option<&Estimate> {
        self.rows
            .iter()
            .find(|r| r.scale == scale && r.param == param)
            .map(|r| &r.estimate)
    }

    /// Estimates at fixed scale, in parameter order.
    pub fn column(&self, scale: f64) -> Vec<&Estimate> {
        self.rows.iter().filter(|r| r.scale == scale).map(|r| &r.estimate).collect()
    }
}

fn check_sorted(name: &'static str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(invalid(name, "must not be empty"));
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid(name, "must be strictly increasing"));
    }
    Ok(())
}

/// Probability of a crossing or arm event under a field variant.
pub fn estimate_crossing(cfg: &FieldConfig, spec: &CrossingSpec, variant: Variant, n: usize) -> Result<Estimate> {
    spec.validate()?;
    variant.marks.validate()?;
    if n == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let (lo, hi) = spec.bounds();
    let runner = FieldRunner::covering(cfg, lo, hi, variant.truncation)?;
    let offset = cfg.offset(&[stream::CROSSING]);
    let hits = run_trials(n, |t| {
        let cloud = runner.cloud(derive_seed(offset, &[t]))?;
        let values = runner.values(&cloud, variant.marks)?;
        detect(&excursion_values(runner.spec(), &values, spec.level), spec)
    })?;
    Ok(Estimate::from_indicators(hits.into_iter(), cfg.master_seed, offset))
}

/// `Cross_ℓ(a·R, b·R)` for every level and scale. Levels share each trial's
/// field, and the indicators are checked to be non-decreasing in ℓ.
pub fn level_sweep(cfg: &FieldConfig, levels: &[f64], scales: &[f64], shape: [f64; 2], n: usize) -> Result<SweepTable> {
    check_sorted("levels", levels)?;
    check_sorted("scales", scales)?;
    let mut rows = Vec::new();
    for (a, &r) in scales.iter().enumerate() {
        let spec = CrossingSpec::rect(shape[0] * r, shape[1] * r, 0.0, EventKind::Cross);
        let (lo, hi) = spec.bounds();
        let runner = FieldRunner::covering(cfg, lo, hi, None)?;
        let offset = cfg.offset(&[stream::LEVEL_SWEEP, a as u64]);
        let trials = run_trials(n, |t| {
            let cloud = runner.cloud(derive_seed(offset, &[t]))?;
            let values = runner.values(&cloud, MarkRule::Plain)?;
            let hits = levels
                .iter()
                .map(|&l| detect(&excursion_values(runner.spec(), &values, l), &spec.with_level(l)))
                .collect::<Result<Vec<bool>>>()?;
            monotone_or_err(&hits, "level")?;
            Ok(hits)
        })?;
        for (b, &l) in levels.iter().enumerate() {
            rows.push(SweepRow {
                scale: r,
                param: l,
                estimate: Estimate::from_indicators(trials.iter().map(|h| h[b]), cfg.master_seed, offset),
            });
        }
    }
    Ok(SweepTable {
        scale_label: "R",
        param_label: "level",
        rows,
        exponent: None,
    })
}

fn monotone_or_err(hits: &[bool], axis: &str) -> Result<()> {
    if hits.windows(2).any(|w| w[0] && !w[1]) {
        return Err(Error::Numeric(format!("crossing indicator decreased along {axis} within a trial")));
    }
    Ok(())
}

/// `Cross_ℓ(a·R, b·R)` for the coupled family `f^η`.
pub fn intensity_sweep(
    cfg: &FieldConfig,
    etas: &[f64],
    scales: &[f64],
    shape: [f64; 2],
    level: f64,
    n: usize,
) -> Result<SweepTable> {
    check_sorted("etas", etas)?;
    check_sorted("scales", scales)?;
    for &eta in etas {
        MarkRule::Intensity(eta).validate()?;
    }
    let mut rows = Vec::new();
    for (a, &r) in scales.iter().enumerate() {
        let spec = CrossingSpec::rect(shape[0] * r, shape[1] * r, level, EventKind::Cross);
        let (lo, hi) = spec.bounds();
        let runner = FieldRunner::covering(cfg, lo, hi, None)?;
        let offset = cfg.offset(&[stream::ETA_SWEEP, a as u64]);
        let trials = run_trials(n, |t| {
            let cloud = runner.cloud(derive_seed(offset, &[t]))?;
            let hits = etas
                .iter()
                .map(|&eta| {
                    let v = runner.values(&cloud, MarkRule::Intensity(eta))?;
                    detect(&excursion_values(runner.spec(), &v, level), &spec)
                })
                .collect::<Result<Vec<bool>>>()?;
            monotone_or_err(&hits, "eta")?;
            Ok(hits)
        })?;
        for (b, &eta) in etas.iter().enumerate() {
            rows.push(SweepRow {
                scale: r,
                param: eta,
                estimate: Estimate::from_indicators(trials.iter().map(|h| h[b]), cfg.master_seed, offset),
            });
        }
    }
    Ok(SweepTable {
        scale_label: "R",
        param_label: "eta",
        rows,
        exponent: None,
    })
}

/// `Arm_0(r, R)` for each R on one field per trial, with the slope of
/// `log p̂` against `log(r/R)`. The fit is skipped when some estimate is 0
/// or all are 1.
pub fn arm_decay(cfg: &FieldConfig, inner: f64, scales: &[f64], rule: MarkRule, level: f64, n: usize) -> Result<SweepTable> {
    check_sorted("scales", scales)?;
    rule.validate()?;
    if !(inner > 0.0 && inner < scales[0]) {
        return Err(crate::error::Error::Geometry(format!(
            "inner radius {inner} must be positive and below the smallest R {}",
            scales[0]
        )));
    }
    let big = *scales.last().unwrap();
    let runner = FieldRunner::covering(cfg, [-big, -big], [big, big], None)?;
    let offset = cfg.offset(&[stream::ARM]);
    let specs: Vec<CrossingSpec> = scales.iter().map(|&r| CrossingSpec::arm(inner, r, level)).collect();
    let trials = run_trials(n, |t| {
        let cloud = runner.cloud(derive_seed(offset, &[t]))?;
        let v = runner.values(&cloud, rule)?;
        let bg = excursion_values(runner.spec(), &v, level);
        let hits = specs.iter().map(|s| detect(&bg, s)).collect::<Result<Vec<bool>>>()?;
        // Reaching a larger square implies reaching every smaller one.
        if hits.windows(2).any(|w| !w[0] && w[1]) {
            return Err(Error::Numeric("arm indicator increased with R within a trial".into()));
        }
        Ok(hits)
    })?;
    let rows: Vec<SweepRow> = scales
        .iter()
        .enumerate()
        .map(|(b, &r)| SweepRow {
            scale: r,
            param: inner,
            estimate: Estimate::from_indicators(trials.iter().map(|h| h[b]), cfg.master_seed, offset),
        })
        .collect();
    let ps: Vec<f64> = rows.iter().map(|r| r.estimate.p_hat).collect();
    let exponent = if ps.iter().all(|p| *p > 0.0) && ps.iter().any(|p| *p < 1.0) {
        let x: Vec<f64> = scales.iter().map(|r| (inner / r).ln()).collect();
        let y: Vec<f64> = ps.iter().map(|p| p.ln()).collect();
        Some(linear_fit(&x, &y).0)
    } else {
        None
    };
    Ok(SweepTable {
        scale_label: "R",
        param_label: "r",
        rows,
        exponent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationRow {
    pub r: f64,
    pub median: f64,
    pub p95: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftRow {
    pub h: f64,
    /// sup_B |f^h − f| / h
    pub ratio: f64,
    /// sup_B |f^h − f − h·Σ g(· − p_i)|
    pub identity_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationReport {
    pub rows: Vec<TruncationRow>,
    /// Slope of log median against log r.
    pub slope: f64,
    pub shift_rows: Vec<ShiftRow>,
    /// max over h of |ratio(h) / ratio(h₀) − 1|
    pub shift_ratio_spread: f64,
    /// Radius beyond which the kernel is dropped when forming f − f_r.
    pub outer_cutoff: f64,
}

/// Median and 95th percentile of `sup_{B(radius)} |f − f_r|` for each r.
///
/// `f − f_r` is the field of the residual kernel `g·(1 − χ(ρ/r))`, itself
/// truncated at `outer_cutoff` (which must be well above every r). Its far
/// field is smooth at scale r, so the node spacing grows with r.
pub fn truncation_study(
    cfg: &FieldConfig,
    rs: &[f64],
    radius: f64,
    outer_cutoff: f64,
    hs: &[f64],
    n: usize,
) -> Result<TruncationReport> {
    check_sorted("rs", rs)?;
    if !(outer_cutoff >= 4.0 * rs[rs.len() - 1]) {
        return Err(invalid("outer_cutoff", "must be at least four times the largest r"));
    }
    let spec = GridSpec::covering(Rect::new([-radius, -radius], [radius, radius]), cfg.grid_spacing)?;
    let disc = Region::Disc {
        center: [0.0, 0.0],
        radius,
    };
    let synths = rs
        .iter()
        .map(|&r| {
            let k = cfg
                .kernel
                .truncate(outer_cutoff, TruncationMode::Truncated)
                .truncate(r, TruncationMode::Residual);
            let stride = ((r / 16.0) / cfg.grid_spacing).floor().max(1.0) as usize;
            let opts = SimOptions {
                far_stride: stride,
                ..cfg.sim
            };
            Synthesizer::new(&k, spec, &opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let window = spec.window().dilate(0.5 * outer_cutoff);
    let offset = cfg.offset(&[stream::TRUNCATION]);
    let sups = run_trials(n, |t| {
        let cloud = sample_cloud(&cfg.source(window), &cfg.marks, derive_seed(offset, &[t]))?;
        Ok(synths
            .iter()
            .map(|s| {
                let v = s.run(&cloud.points, &cloud.marks, false).values;
                sup_abs(&spec, disc, |k| v[k])
            })
            .collect::<Vec<f64>>())
    })?;
    let rows: Vec<TruncationRow> = rs
        .iter()
        .enumerate()
        .map(|(a, &r)| {
            let col: Vec<f64> = sups.iter().map(|s| s[a]).collect();
            TruncationRow {
                r,
                median: quantile(&col, 0.5),
                p95: quantile(&col, 0.95),
                n,
            }
        })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| r.r.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.median.ln()).collect();
    let slope = if rows.len() >= 2 { linear_fit(&x, &y).0 } else { f64::NAN };

    // The f^h identity on one cloud with the simulated kernel.
    let runner = FieldRunner::new(cfg, spec, None)?;
    let cloud = runner.cloud(derive_seed(offset, &[u64::MAX]))?;
    let plain = runner.values(&cloud, MarkRule::Plain)?;
    let ones = vec![1.0; cloud.len()];
    let sum_g = runner.synth.run(&cloud.points, &ones, false).values;
    let shift_rows = hs
        .iter()
        .map(|&h| {
            let shifted = runner.values(&cloud, MarkRule::Shift(h))?;
            Ok(ShiftRow {
                h,
                ratio: sup_abs(&spec, disc, |k| shifted[k] - plain[k]) / h,
                identity_error: sup_abs(&spec, disc, |k| shifted[k] - plain[k] - h * sum_g[k]),
            })
        })
        .collect::<Result<Vec<ShiftRow>>>()?;
    let shift_ratio_spread = shift_rows
        .iter()
        .map(|s| (s.ratio / shift_rows[0].ratio - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(TruncationReport {
        rows,
        slope,
        shift_rows,
        shift_ratio_spread,
        outer_cutoff,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceRow {
    /// Center-to-center distance of the two boxes (0 = the same box).
    pub separation: f64,
    pub p1: f64,
    pub p2: f64,
    pub p12: f64,
    pub covariance: f64,
    pub half_width: f64,
    pub n: usize,
}

/// Covariance of square crossings `Cross_ℓ(R, R)` on two boxes whose centers
/// are `separation` apart horizontally. Separation 0 uses the same box for
/// both events.
pub fn quasi_independence(cfg: &FieldConfig, r: f64, separations: &[f64], level: f64, n: usize) -> Result<Vec<CovarianceRow>> {
    if separations.iter().any(|&d| d != 0.0 && d < r) {
        return Err(Error::Geometry(format!(
            "boxes of side {r} overlap at separations below {r} (0 means identical events)"
        )));
    }
    let mut out = Vec::new();
    for (a, &d) in separations.iter().enumerate() {
        let r1 = FieldRunner::covering(cfg, [0.0, 0.0], [r, r], None)?;
        let r2 = FieldRunner::covering(cfg, [d, 0.0], [d + r, r], None)?;
        let w1 = r1.synth.cloud_window();
        let w2 = r2.synth.cloud_window();
        let disjoint = w1.hi[0] <= w2.lo[0];
        let offset = cfg.offset(&[stream::QUASI_INDEPENDENCE, a as u64]);
        let s1 = CrossingSpec::rect(r, r, level, EventKind::Cross);
        let s2 = s1.at([d, 0.0]);
        let pairs = run_trials(n, |t| {
            let key = derive_seed(offset, &[t]);
            let (c1, c2) = if disjoint {
                // Independent Poisson clouds on disjoint windows have the law
                // of one cloud on their union.
                let c1 = sample_cloud(&cfg.source(w1), &cfg.marks, derive_seed(key, &[1]))?;
                let c2 = sample_cloud(&cfg.source(w2), &cfg.marks, derive_seed(key, &[2]))?;
                (c1, c2)
            } else {
                let c = sample_cloud(&cfg.source(Rect::new(w1.lo, w2.hi)), &cfg.marks, key)?;
                (c.clone(), c)
            };
            let e1 = detect(&excursion_values(r1.spec(), &r1.values(&c1, MarkRule::Plain)?, level), &s1)?;
            let e2 = if d == 0.0 {
                e1
            } else {
                detect(&excursion_values(r2.spec(), &r2.values(&c2, MarkRule::Plain)?, level), &s2)?
            };
            Ok((e1, e2))
        })?;
        out.push(covariance_row(d, &pairs));
    }
    Ok(out)
}

/// Covariance of the nested crossings `Cross_ℓ(R, R)` of `[0, R]²` and
/// `Cross_ℓ(2R, R)` of `[0, 2R] × [0, R]` on one field. Both events are
/// increasing, so the covariance should not be clearly negative.
pub fn positive_association(cfg: &FieldConfig, r: f64, level: f64, n: usize) -> Result<CovarianceRow> {
    let small = CrossingSpec::rect(r, r, level, EventKind::Cross);
    let wide = CrossingSpec::rect(2.0 * r, r, level, EventKind::Cross);
    let (lo, hi) = wide.bounds();
    let runner = FieldRunner::covering(cfg, lo, hi, None)?;
    let offset = cfg.offset(&[stream::ASSOCIATION]);
    let pairs = run_trials(n, |t| {
        let cloud = runner.cloud(derive_seed(offset, &[t]))?;
        let bg = excursion_values(runner.spec(), &runner.values(&cloud, MarkRule::Plain)?, level);
        Ok((detect(&bg, &small)?, detect(&bg, &wide)?))
    })?;
    Ok(covariance_row(0.0, &pairs))
}

/// Plug-in covariance of two indicators with a delta-method 95% interval.
pub fn covariance_row(separation: f64, pairs: &[(bool, bool)]) -> CovarianceRow {
    let n = pairs.len();
    let nf = n as f64;
    let p1 = pairs.iter().filter(|p| p.0).count() as f64 / nf;
    let p2 = pairs.iter().filter(|p| p.1).count() as f64 / nf;
    let p12 = pairs.iter().filter(|p| p.0 && p.1).count() as f64 / nf;
    let prods: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| (a as u8 as f64 - p1) * (b as u8 as f64 - p2))
        .collect();
    let cov = p12 - p1 * p2;
    let var = prods.iter().map(|x| (x - cov).powi(2)).sum::<f64>() / (nf - 1.0).max(1.0);
    CovarianceRow {
        separation,
        p1,
        p2,
        p12,
        covariance: cov,
        half_width: 1.96 * (var / nf).sqrt(),
        n,
    }
}

/// Samples of `sup_{sQ} |f|` with `Q = [−1/2, 1/2]²`, on a grid of the
/// given spacing.
pub fn sup_norm_samples(cfg: &FieldConfig, s: f64, spacing: f64, n: usize) -> Result<Vec<f64>> {
    let spec = GridSpec::covering(Rect::new([-0.5 * s, -0.5 * s], [0.5 * s, 0.5 * s]), spacing)?;
    let runner = FieldRunner::new(cfg, spec, None)?;
    let offset = cfg.offset(&[stream::SUP_NORM]);
    run_trials(n, |t| {
        let cloud = runner.cloud(derive_seed(offset, &[t]))?;
        let v = runner.values(&cloud, MarkRule::Plain)?;
        Ok(v.iter().fold(0.0, |m: f64, x| m.max(x.abs())))
    })
}

/// Samples of `f(0)` by direct summation of the simulated kernel over a
/// Poisson disc (or the thinned lattice when configured).
pub fn point_samples(cfg: &FieldConfig, n: usize, tag: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let k = crate::field::simulation_kernel(&cfg.kernel, &cfg.sim)?;
    let reach = k.support_radius();
    let offset = cfg.offset(&[stream::POINT_VALUES, tag]);
    run_trials(n, |t| {
        let key = derive_seed(offset, &[t]);
        let source = match cfg.lattice {
            Some(eps) => CloudSource::Lattice {
                eps,
                window: Rect::new([-reach, -reach], [reach, reach]),
            },
            None => CloudSource::PoissonDisc {
                intensity: 1.0,
                center: [0.0, 0.0],
                radius: reach,
            },
        };
        let c = sample_cloud(&source, &cfg.marks, key)?;
        Ok(crate::field::point_value(&k, &c.points, &c.marks, [0.0, 0.0]))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> FieldConfig {
        FieldConfig::new(MarkDistribution::Gaussian { sigma: 1.0 }, Kernel::power_law(3.5))
    }

    #[test]
    fn estimate_bookkeeping() {
        let e = Estimate::from_counts(30, 100, 1, 2);
        assert_eq!(e.p_hat, 0.3);
        assert!((e.half_width - 1.96 * (0.21f64 / 100.0).sqrt()).abs() < 1e-15);
        assert_eq!((e.p_hat * e.n as f64).round() as usize, e.successes);
    }

    #[test]
    fn positive_field_always_crosses() {
        let spec = CrossingSpec::rect(8.0, 4.0, 0.0, EventKind::Cross);
        let v = Variant {
            truncation: None,
            marks: MarkRule::Intensity(0.5),
        };
        let e = estimate_crossing(&cfg(), &spec, v, 20).unwrap();
        assert_eq!(e.p_hat, 1.0);
        let arm = arm_decay(&cfg(), 2.0, &[4.0, 8.0], MarkRule::Intensity(0.5), 0.0, 10).unwrap();
        assert!(arm.rows.iter().all(|r| r.estimate.p_hat == 1.0));
        assert_eq!(arm.exponent, None);
    }

    #[test]
    fn deep_excursion_crosses() {
        let c = cfg();
        let sd = c.sd().unwrap();
        let spec = CrossingSpec::rect(1.0, 1.0, 10.0 * sd, EventKind::Cross);
        let e = estimate_crossing(&c, &spec, Variant::PLAIN, 200).unwrap();
        assert!(e.p_hat >= 0.99);
    }

    #[test]
    fn results_independent_of_thread_count() {
        let c = cfg();
        let spec = CrossingSpec::rect(6.0, 6.0, 0.0, EventKind::Cross);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| level_sweep(&c, &[-0.1, 0.0, 0.1], &[3.0], [2.0, 1.0], 40).unwrap());
        let b = three.install(|| level_sweep(&c, &[-0.1, 0.0, 0.1], &[3.0], [2.0, 1.0], 40).unwrap());
        assert_eq!(a, b);
        let x = one.install(|| estimate_crossing(&c, &spec, Variant::PLAIN, 30).unwrap());
        let y = three.install(|| estimate_crossing(&c, &spec, Variant::PLAIN, 30).unwrap());
        assert_eq!(x, y);
    }

    #[test]
    fn sweep_inputs_validated() {
        let c = cfg();
        assert!(level_sweep(&c, &[0.1, 0.0], &[4.0], [2.0, 1.0], 1).is_err());
        assert!(intensity_sweep(&c, &[0.0, 0.7], &[4.0], [2.0, 1.0], 0.0, 1).is_err());
        assert!(arm_decay(&c, 8.0, &[4.0, 8.0], MarkRule::Plain, 0.0, 1).is_err());
        assert!(quasi_independence(&c, 8.0, &[4.0], 0.0, 1).is_err());
    }

    #[test]
    fn nested_crossings_positively_associated() {
        let row = positive_association(&cfg(), 6.0, 0.0, 400).unwrap();
        assert!(row.covariance >= -3.0 * row.half_width, "{row:?}");
        assert!(row.p2 <= row.p1, "the wider box is harder to cross");
    }

    #[test]
    fn identical_events_have_variance_covariance() {
        let pairs: Vec<(bool, bool)> = (0..1000).map(|k| (k % 2 == 0, k % 2 == 0)).collect();
        let row = covariance_row(0.0, &pairs);
        assert!((row.covariance - 0.25).abs() < 1e-12);
        let indep: Vec<(bool, bool)> = (0..1000).map(|k| (k % 2 == 0, (k / 2) % 2 == 0)).collect();
        assert!(covariance_row(1.0, &indep).covariance.abs() < 1e-12);
    }
}
