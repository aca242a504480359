//! Run configuration: a TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shotnoise::experiments::FieldConfig;
use shotnoise::field::{MarkRule, SimOptions};
use shotnoise::{Kernel, KernelFamily, MarkDistribution};

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Parse(String),
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(m) => write!(f, "cannot read config: {m}"),
            ConfigError::Parse(m) => write!(f, "cannot parse config: {m}"),
            ConfigError::Invalid(m) => write!(f, "invalid config: {m}"),
        }
    }
}

fn invalid(key: &str, reason: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(format!("`{key}`: {reason}"))
}

macro_rules! defaults {
    ($($name:ident: $ty:ty = $val:expr;)*) => {
        $(fn $name() -> $ty { $val })*
    };
}

defaults! {
    d_grid: f64 = 0.25;
    d_trials: usize = 1000;
    d_out: PathBuf = PathBuf::from("out");
    d_selfdual_scales: Vec<f64> = vec![48.0];
    d_selfdual_spacings: Vec<f64> = vec![0.25];
    d_levels_sd: Vec<f64> = vec![-0.5, 0.0, 0.5];
    d_level_scales: Vec<f64> = vec![16.0, 32.0, 64.0];
    d_rect: [f64; 2] = [2.0, 1.0];
    d_square: [f64; 2] = [1.0, 1.0];
    d_etas: Vec<f64> = vec![-0.1, 0.0, 0.1];
    d_eta_scales: Vec<f64> = vec![32.0];
    d_inner: f64 = 4.0;
    d_arm_scales: Vec<f64> = vec![8.0, 16.0, 32.0, 64.0];
    d_rs: Vec<f64> = vec![8.0, 16.0, 32.0, 64.0];
    d_radius: f64 = 10.0;
    d_outer: f64 = 512.0;
    d_hs: Vec<f64> = vec![0.1, 0.2, 0.4];
    d_qi_scale: f64 = 16.0;
    d_separations: Vec<f64> = vec![0.0, 32.0, 80.0, 320.0];
    d_instances: usize = 10;
    d_inst_scales: Vec<f64> = vec![3.0, 4.0, 5.0, 6.0];
    d_inst_r: f64 = 3.0;
    d_inst_eps: f64 = 1.0;
    d_level_range: f64 = 0.3;
    d_step: f64 = 0.05;
    d_s: f64 = 1.0;
    d_ts: Vec<f64> = vec![4.0, 10.0, 20.0];
    d_samples: usize = 100_000;
    d_half_points: usize = 1000;
    d_refine: f64 = 1.0;
    d_scan_us: Vec<f64> = vec![0.0, 1.0, 4.0, 16.0, 64.0];
    d_scan_vs: Vec<f64> = vec![0.0, 1.0, 4.0, 16.0];
    d_mills_points: usize = 1000;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfDual {
    #[serde(default = "d_selfdual_scales")]
    pub scales: Vec<f64>,
    /// Grid spacings to compare; each is run at every scale.
    #[serde(default = "d_selfdual_spacings")]
    pub spacings: Vec<f64>,
    #[serde(default)]
    pub level: f64,
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSweep {
    /// Levels in units of sd(f).
    #[serde(default = "d_levels_sd")]
    pub levels_sd: Vec<f64>,
    #[serde(default = "d_level_scales")]
    pub scales: Vec<f64>,
    /// Rectangle sides per unit scale.
    #[serde(default = "d_rect")]
    pub shape: [f64; 2],
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaSweep {
    #[serde(default = "d_etas")]
    pub etas: Vec<f64>,
    #[serde(default = "d_eta_scales")]
    pub scales: Vec<f64>,
    #[serde(default = "d_square")]
    pub shape: [f64; 2],
    #[serde(default)]
    pub level: f64,
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmDecay {
    #[serde(default = "d_inner")]
    pub inner: f64,
    #[serde(default = "d_arm_scales")]
    pub scales: Vec<f64>,
    #[serde(default)]
    pub level: f64,
    /// Intensity tilt of the marks; 0 is the plain field.
    #[serde(default)]
    pub eta: f64,
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncStudy {
    #[serde(default = "d_rs")]
    pub rs: Vec<f64>,
    /// Radius of the ball over which sup-distances are taken.
    #[serde(default = "d_radius")]
    pub radius: f64,
    /// Residual fields are truncated at this radius.
    #[serde(default = "d_outer")]
    pub outer_cutoff: f64,
    #[serde(default = "d_hs")]
    pub hs: Vec<f64>,
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasiIndep {
    #[serde(default = "d_qi_scale")]
    pub scale: f64,
    /// Center-to-center distances; 0 compares an event with itself.
    #[serde(default = "d_separations")]
    pub separations: Vec<f64>,
    #[serde(default)]
    pub level: f64,
    pub trials: Option<usize>,
}

/// Small lattice instances shared by `osss` and `russo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instances {
    #[serde(default = "d_instances")]
    pub count: usize,
    #[serde(default = "d_inst_scales")]
    pub scales: Vec<f64>,
    #[serde(default = "d_inst_r")]
    pub r: f64,
    #[serde(default = "d_inst_eps")]
    pub eps: f64,
    /// Levels are drawn uniformly from `[−level_range, level_range]`.
    #[serde(default = "d_level_range")]
    pub level_range: f64,
    /// Coarse forward-difference step for `russo`.
    #[serde(default = "d_step")]
    pub step: f64,
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    #[serde(default = "d_s")]
    pub s: f64,
    #[serde(default = "d_ts")]
    pub ts: Vec<f64>,
    /// Simulated sup-norm samples; 0 skips the empirical comparison.
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Density {
    /// Simulated values of f(0); 0 skips the comparison.
    #[serde(default = "d_samples")]
    pub samples: usize,
    /// The density grid has `2·half_points + 1` points on ±8 sd.
    #[serde(default = "d_half_points")]
    pub half_points: usize,
    #[serde(default = "d_refine")]
    pub refine: f64,
    #[serde(default = "d_scan_us")]
    pub scan_us: Vec<f64>,
    #[serde(default = "d_scan_vs")]
    pub scan_vs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mills {
    #[serde(default = "d_mills_points")]
    pub points: usize,
}

macro_rules! default_from_serde {
    ($($t:ty),*) => {
        $(impl Default for $t {
            fn default() -> Self {
                toml::from_str("").expect("every field has a default")
            }
        })*
    };
}

default_from_serde!(SelfDual, LevelSweep, EtaSweep, ArmDecay, TruncStudy, QuasiIndep, Instances, Bounds, Density, Mills);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub marks: MarkDistribution,
    pub kernel: KernelFamily,
    #[serde(default = "d_grid")]
    pub grid_spacing: f64,
    /// Use the thinned lattice εZ² instead of a Poisson cloud.
    pub lattice: Option<f64>,
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Worker threads; not part of the config digest.
    pub threads: Option<usize>,
    /// Not part of the config digest.
    #[serde(default = "d_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub sim: SimOptions,
    #[serde(default)]
    pub selfdual: SelfDual,
    #[serde(default)]
    pub level_sweep: LevelSweep,
    #[serde(default)]
    pub eta_sweep: EtaSweep,
    #[serde(default)]
    pub arm_decay: ArmDecay,
    #[serde(default)]
    pub trunc_study: TruncStudy,
    #[serde(default)]
    pub quasi_indep: QuasiIndep,
    #[serde(default)]
    pub instances: Instances,
    #[serde(default)]
    pub bounds: Bounds,
    #[serde(default)]
    pub density: Density,
    #[serde(default)]
    pub mills: Mills,
}

/// Parse `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Apply `a.b.c=value`, creating intermediate tables.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (path, value) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("override `{assignment}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Parse(format!("override key `{path}` is malformed")));
    }
    let mut table = root;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Parse(format!("override key `{path}`: `{k}` is not a table")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io(format!("{}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    // Parameterless mark kinds would otherwise ignore stray keys.
    if let Some(m) = root.get("marks").and_then(|v| v.as_table()) {
        let kind = m.get("kind").and_then(|k| k.as_str()).unwrap_or("");
        if matches!(kind, "rademacher" | "degenerate") {
            if let Some(k) = m.keys().find(|k| *k != "kind") {
                return Err(ConfigError::Parse(format!("unknown field `{k}` for marks of kind `{kind}`")));
            }
        }
    }
    let cfg: RunConfig = toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn sorted(key: &str, xs: &[f64]) -> Result<(), ConfigError> {
    if xs.is_empty() {
        return Err(invalid(key, "must not be empty"));
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid(key, "must be strictly increasing"));
    }
    Ok(())
}

fn positive(key: &str, x: f64) -> Result<(), ConfigError> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(invalid(key, format!("must be positive, got {x}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn field(&self) -> FieldConfig {
        FieldConfig {
            marks: self.marks,
            kernel: Kernel::new(self.kernel),
            grid_spacing: self.grid_spacing,
            lattice: self.lattice,
            sim: self.sim,
            master_seed: self.master_seed,
        }
    }

    pub fn trials_or(&self, t: Option<usize>) -> usize {
        t.unwrap_or(self.trials)
    }

    /// Parameter checks common to all subcommands.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let lib = |e: shotnoise::Error| ConfigError::Invalid(e.to_string());
        self.field().validate().map_err(lib)?;
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be at least 1"));
        }
        let s = &self.selfdual;
        sorted("selfdual.scales", &s.scales)?;
        for &d in &s.spacings {
            positive("selfdual.spacings", d)?;
        }
        let l = &self.level_sweep;
        sorted("level_sweep.levels_sd", &l.levels_sd)?;
        sorted("level_sweep.scales", &l.scales)?;
        l.shape.iter().try_for_each(|&x| positive("level_sweep.shape", x))?;
        let e = &self.eta_sweep;
        sorted("eta_sweep.etas", &e.etas)?;
        for &eta in &e.etas {
            if !(-0.5..=0.5).contains(&eta) {
                return Err(invalid("eta_sweep.etas", format!("eta must lie in [-1/2, 1/2], got {eta}")));
            }
        }
        sorted("eta_sweep.scales", &e.scales)?;
        e.shape.iter().try_for_each(|&x| positive("eta_sweep.shape", x))?;
        let a = &self.arm_decay;
        sorted("arm_decay.scales", &a.scales)?;
        positive("arm_decay.inner", a.inner)?;
        if a.inner >= a.scales[0] {
            return Err(invalid("arm_decay.inner", "must be below the smallest scale"));
        }
        MarkRule::Intensity(a.eta)
            .validate()
            .map_err(|_| invalid("arm_decay.eta", format!("eta must lie in [-1/2, 1/2], got {}", a.eta)))?;
        let t = &self.trunc_study;
        sorted("trunc_study.rs", &t.rs)?;
        sorted("trunc_study.hs", &t.hs)?;
        positive("trunc_study.radius", t.radius)?;
        let q = &self.quasi_indep;
        positive("quasi_indep.scale", q.scale)?;
        sorted("quasi_indep.separations", &q.separations)?;
        let i = &self.instances;
        if i.count == 0 {
            return Err(invalid("instances.count", "must be at least 1"));
        }
        i.scales.iter().try_for_each(|&x| positive("instances.scales", x))?;
        positive("instances.r", i.r)?;
        positive("instances.step", i.step)?;
        let b = &self.bounds;
        if !(b.s >= 1.0) {
            return Err(invalid("bounds.s", "must be at least 1"));
        }
        sorted("bounds.ts", &b.ts)?;
        if b.ts[0] < 1.0 {
            return Err(invalid("bounds.ts", "every t must be at least 1"));
        }
        let d = &self.density;
        if d.half_points < 2 {
            return Err(invalid("density.half_points", "must be at least 2"));
        }
        Ok(())
    }

    /// Stable digest of everything that determines the results.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Sorted-key JSON of the config without the thread count and output
    /// directory.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("config is an object");
        obj.remove("threads");
        obj.remove("output_dir");
        // serde_json's default map is ordered by key.
        serde_json::to_string(&v).expect("value serializes")
    }
}
