//! Subcommand bodies. Each returns the files to write, named checks, and
//! lines for stdout; persistence happens in `main`.

use serde_json::{json, Value};
use shotnoise::bounds::{concentration_threshold, empirical_vs_bound, BoundInputs, BoundVariant};
use shotnoise::density::{default_grid, empirical_density_compare, invert_density, phi_scan, CharFnSpec};
use shotnoise::experiments::{
    arm_decay, estimate_crossing, intensity_sweep, level_sweep, positive_association, quasi_independence, truncation_study, Estimate,
    SweepTable,
};
use shotnoise::field::{MarkRule, Variant};
use shotnoise::inequalities::{osss_check, random_instances, russo_check, DiscreteInstance, ProductEvent, Version};
use shotnoise::percolation::{CrossingSpec, EventKind};
use shotnoise::rng::derive_seed;
use shotnoise::Kernel;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Selfdual,
    LevelSweep,
    EtaSweep,
    ArmDecay,
    TruncStudy,
    QuasiIndep,
    Osss,
    Russo,
    Bounds,
    Density,
    Mills,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Selfdual => "selfdual",
            Subcommand::LevelSweep => "level-sweep",
            Subcommand::EtaSweep => "eta-sweep",
            Subcommand::ArmDecay => "arm-decay",
            Subcommand::TruncStudy => "trunc-study",
            Subcommand::QuasiIndep => "quasi-indep",
            Subcommand::Osss => "osss",
            Subcommand::Russo => "russo",
            Subcommand::Bounds => "bounds",
            Subcommand::Density => "density",
            Subcommand::Mills => "mills",
        }
    }
}

/// A CSV table before serialization.
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&'static str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

#[derive(Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub summary: Value,
    pub checks: Vec<(String, bool)>,
    pub stdout: Vec<String>,
}

pub enum Failure {
    Config(String),
    Numeric(String),
}

impl From<shotnoise::Error> for Failure {
    fn from(e: shotnoise::Error) -> Self {
        match e {
            shotnoise::Error::Numeric(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

/// Shortest round-trip representation, so outputs are byte-stable.
fn f(x: f64) -> String {
    format!("{x}")
}

fn estimate_cols(e: &Estimate) -> Vec<String> {
    vec![
        f(e.p_hat),
        e.successes.to_string(),
        e.n.to_string(),
        f(e.half_width),
        e.seed_offset.to_string(),
    ]
}

const EST: [&str; 5] = ["p_hat", "successes", "n", "half_width", "seed_offset"];

fn sweep_table(name: &str, t: &SweepTable, extra: impl Fn(f64) -> Vec<String>, extra_cols: &[&'static str]) -> Table {
    let mut header = vec![t.scale_label, t.param_label];
    header.extend_from_slice(extra_cols);
    header.extend_from_slice(&EST);
    let mut table = Table::new(name, &header);
    for row in &t.rows {
        let mut cols = vec![f(row.scale), f(row.param)];
        cols.extend(extra(row.param));
        cols.extend(estimate_cols(&row.estimate));
        table.push(cols);
    }
    table
}

pub fn run(cmd: Subcommand, cfg: &RunConfig) -> Result<Outcome, Failure> {
    let field = cfg.field();
    let seed = |tag: u64| derive_seed(cfg.master_seed, &[0x636c69, tag]);
    let mut out = Outcome::default();
    match cmd {
        Subcommand::Selfdual => {
            let s = &cfg.selfdual;
            let n = cfg.trials_or(s.trials);
            let mut t = Table::new("selfdual", &[&["R", "grid_spacing", "level"][..], &EST[..]].concat());
            let mut rows = Vec::new();
            for &d in &s.spacings {
                let mut fc = field;
                fc.grid_spacing = d;
                for &r in &s.scales {
                    let spec = CrossingSpec::rect(r, r, s.level, EventKind::Cross);
                    let e = estimate_crossing(&fc, &spec, Variant::PLAIN, n)?;
                    let mut cols = vec![f(r), f(d), f(s.level)];
                    cols.extend(estimate_cols(&e));
                    t.push(cols);
                    rows.push(json!({"R": r, "grid_spacing": d, "estimate": e}));
                }
            }
            out.tables.push(t);
            out.summary = json!({ "rows": rows });
        }
        Subcommand::LevelSweep => {
            field.kernel.require_alpha_above(3.0, "level experiments")?;
            let s = &cfg.level_sweep;
            let sd = field.sd()?;
            let levels: Vec<f64> = s.levels_sd.iter().map(|l| l * sd).collect();
            let table = level_sweep(&field, &levels, &s.scales, s.shape, cfg.trials_or(s.trials))?;
            out.tables.push(sweep_table("level_sweep", &table, |l| vec![f(l / sd)], &["level_sd"]));
            out.summary = json!({ "sd": sd, "table": table });
        }
        Subcommand::EtaSweep => {
            let s = &cfg.eta_sweep;
            let table = intensity_sweep(&field, &s.etas, &s.scales, s.shape, s.level, cfg.trials_or(s.trials))?;
            out.tables.push(sweep_table("eta_sweep", &table, |_| vec![], &[]));
            out.summary = json!({ "level": s.level, "table": table });
        }
        Subcommand::ArmDecay => {
            let s = &cfg.arm_decay;
            let rule = if s.eta == 0.0 { MarkRule::Plain } else { MarkRule::Intensity(s.eta) };
            let table = arm_decay(&field, s.inner, &s.scales, rule, s.level, cfg.trials_or(s.trials))?;
            out.tables.push(sweep_table("arm_decay", &table, |_| vec![], &[]));
            out.stdout.push(match table.exponent {
                Some(e) => format!("fitted exponent = {e:.6}"),
                None => "fitted exponent: not defined".to_string(),
            });
            out.summary = json!({ "inner": s.inner, "table": table });
        }
        Subcommand::TruncStudy => {
            let s = &cfg.trunc_study;
            let rep = truncation_study(&field, &s.rs, s.radius, s.outer_cutoff, &s.hs, cfg.trials_or(s.trials))?;
            let mut t = Table::new("trunc_study", &["r", "median", "p95", "n"]);
            for r in &rep.rows {
                t.push(vec![f(r.r), f(r.median), f(r.p95), r.n.to_string()]);
            }
            let mut h = Table::new("trunc_shift", &["h", "ratio", "identity_error"]);
            for r in &rep.shift_rows {
                h.push(vec![f(r.h), f(r.ratio), f(r.identity_error)]);
            }
            out.tables.extend([t, h]);
            out.stdout.push(format!("log-log slope of the median = {:.6}", rep.slope));
            out.summary = serde_json::to_value(&rep).expect("report serializes");
        }
        Subcommand::QuasiIndep => {
            let s = &cfg.quasi_indep;
            let rows = quasi_independence(&field, s.scale, &s.separations, s.level, cfg.trials_or(s.trials))?;
            let mut t = Table::new(
                "quasi_indep",
                &["separation", "p1", "p2", "p12", "covariance", "half_width", "n"],
            );
            for r in &rows {
                t.push(vec![
                    f(r.separation),
                    f(r.p1),
                    f(r.p2),
                    f(r.p12),
                    f(r.covariance),
                    f(r.half_width),
                    r.n.to_string(),
                ]);
            }
            out.tables.push(t);
            // Soft check: reported, never fails the run.
            let assoc = positive_association(&field, s.scale, s.level, cfg.trials_or(s.trials))?;
            out.stdout.push(format!(
                "nested crossings: covariance {:.6} (half-width {:.6}), positive association {}",
                assoc.covariance,
                assoc.half_width,
                if assoc.covariance >= -3.0 * assoc.half_width { "consistent" } else { "violated" }
            ));
            out.summary = json!({ "scale": s.scale, "rows": rows, "association": assoc });
        }
        Subcommand::Osss | Subcommand::Russo => {
            let s = &cfg.instances;
            let n = cfg.trials_or(s.trials);
            let insts = random_instances(
                cfg.marks,
                Kernel::new(cfg.kernel),
                s.count,
                &s.scales,
                s.r,
                s.eps,
                cfg.grid_spacing,
                s.level_range,
                seed(1),
            )?;
            let params = |i: &DiscreteInstance| {
                let h = match i.params.version {
                    Version::Level { h } => h,
                    Version::Intensity { eta } => eta,
                };
                vec![f(i.params.big_r), f(i.params.level), f(h), i.len().to_string()]
            };
            if cmd == Subcommand::Osss {
                let mut t = Table::new(
                    "osss",
                    &["instance", "R", "level", "h", "sites", "p", "variance", "bound", "ci", "holds"],
                );
                let mut reports = Vec::new();
                for (k, inst) in insts.iter().enumerate() {
                    let r = osss_check(inst, n, derive_seed(seed(2), &[k as u64]))?;
                    let mut cols = vec![k.to_string()];
                    cols.extend(params(inst));
                    cols.extend([f(r.p), f(r.variance), f(r.bound), f(r.ci), r.holds.to_string()]);
                    t.push(cols);
                    out.checks.push((format!("osss instance {k}"), r.holds));
                    reports.push(json!({"params": inst.params, "report": r}));
                }
                out.tables.push(t);
                out.summary = json!({ "instances": reports });
            } else {
                let mut t = Table::new(
                    "russo",
                    &[
                        "instance",
                        "R",
                        "level",
                        "h",
                        "sites",
                        "p",
                        "derivative_coarse",
                        "derivative_fine",
                        "richardson",
                        "influence_sum",
                        "lower_bound",
                        "ci",
                        "holds",
                    ],
                );
                let mut reports = Vec::new();
                for (k, inst) in insts.iter().enumerate() {
                    let r = russo_check(inst, s.step, n, derive_seed(seed(3), &[k as u64]))?;
                    let mut cols = vec![k.to_string()];
                    cols.extend(params(inst));
                    cols.extend([
                        f(r.p),
                        f(r.derivative_coarse),
                        f(r.derivative_fine),
                        f(r.richardson),
                        f(r.influence_sum),
                        f(r.lower_bound),
                        f(r.ci),
                        r.holds.to_string(),
                    ]);
                    t.push(cols);
                    out.checks.push((format!("russo instance {k}"), r.holds));
                    reports.push(json!({"params": inst.params, "report": r}));
                }
                out.tables.push(t);
                out.summary = json!({ "instances": reports });
            }
        }
        Subcommand::Bounds => {
            let s = &cfg.bounds;
            let mut t = Table::new("bounds", &["variant", "s", "t", "threshold", "tail_probability"]);
            for (variant, name) in [
                (BoundVariant::Sup, "sup"),
                (BoundVariant::Point, "point"),
                (BoundVariant::Grad, "grad"),
            ] {
                for &tt in &s.ts {
                    let b = concentration_threshold(&BoundInputs {
                        kernel: field.kernel,
                        dist: cfg.marks,
                        s: s.s,
                        t: tt,
                        variant,
                        d: 2,
                    })?;
                    t.push(vec![name.into(), f(b.s), f(b.t), f(b.threshold), f(b.tail_probability)]);
                }
            }
            out.tables.push(t);
            let n = cfg.trials_or(s.trials);
            let mut rows = Vec::new();
            if n > 0 {
                rows = empirical_vs_bound(&field, s.s, &s.ts, n)?;
                let mut e = Table::new(
                    "bounds_empirical",
                    &["t", "threshold", "tail_probability", "empirical", "exceedances", "n", "half_width", "holds"],
                );
                for r in &rows {
                    e.push(vec![
                        f(r.t),
                        f(r.threshold),
                        f(r.tail_probability),
                        f(r.empirical),
                        r.exceedances.to_string(),
                        r.n.to_string(),
                        f(r.half_width),
                        r.holds.to_string(),
                    ]);
                    out.checks.push((format!("sup bound at t = {}", r.t), r.holds));
                }
                out.tables.push(e);
            }
            out.summary = json!({ "empirical": rows });
        }
        Subcommand::Density => {
            let s = &cfg.density;
            let spec = CharFnSpec::new(field.kernel, cfg.marks);
            let xs = default_grid(&spec, s.half_points)?;
            let d = invert_density(&spec, &xs, s.refine)?;
            let mut t = Table::new("density", &["x", "density"]);
            for (x, v) in d.xs.iter().zip(&d.values) {
                t.push(vec![f(*x), f(*v)]);
            }
            let scan = phi_scan(&spec, &s.scan_us, &s.scan_vs)?;
            let mut p = Table::new("phi_scan", &["u", "v_norm", "re", "im"]);
            for r in &scan {
                p.push(r.iter().map(|x| f(*x)).collect());
            }
            let sd = spec.sd()?;
            out.checks.push(("density integrates to 1".into(), (d.integral - 1.0).abs() <= 1e-3));
            out.checks.push((
                "|phi| <= 1 on the scan".into(),
                scan.iter().all(|r| r[2].hypot(r[3]) <= 1.0 + 1e-12),
            ));
            out.checks.push((
                "variance within 2% of E[Y^2]·|g|_2^2".into(),
                (d.variance / (sd * sd) - 1.0).abs() <= 0.02,
            ));
            let mut ks = None;
            if s.samples > 0 {
                let c = empirical_density_compare(&field, s.samples)?;
                out.stdout.push(format!("KS distance = {:.6}", c.ks));
                out.checks.push(("KS distance <= 0.01".into(), c.ks <= 0.01));
                ks = Some(c.ks);
            }
            out.stdout.push(format!(
                "integral = {:.6}, variance = {:.6} (analytic {:.6})",
                d.integral,
                d.variance,
                sd * sd
            ));
            out.tables.extend([t, p]);
            out.summary = json!({
                "integral": d.integral,
                "variance": d.variance,
                "analytic_variance": sd * sd,
                "u_max": d.u_max,
                "du": d.du,
                "negative_lobe": d.negative_lobe,
                "sup": d.sup(),
                "ks": ks,
                "samples": s.samples,
            });
        }
        Subcommand::Mills => {
            let m = cfg.marks;
            let c = m.mills_ratio();
            out.stdout.push(format!("mills_ratio = {c:.6}"));
            let rep = m.tail_bound_check(&m.tail_grid(cfg.mills.points))?;
            let mut t = Table::new("mills", &["x", "survival", "bound", "holds"]);
            for r in &rep.rows {
                t.push(vec![f(r.x), f(r.survival), f(r.bound), r.holds.to_string()]);
            }
            out.checks.push(("tail bound".into(), rep.holds));
            out.tables.push(t);
            out.summary = json!({
                "mills_ratio": c,
                "mills_ratio_search": m.mills_ratio_search(),
                "tail_bound_holds": rep.holds,
            });
        }
    }
    Ok(out)
}
