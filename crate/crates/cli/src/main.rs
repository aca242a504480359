//! `shotnoise` command line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure,
//! 4 a built-in check failed.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::json;
use sha2::{Digest, Sha256};

use commands::{Failure, Outcome, Subcommand, Table};
use config::{parse_config, RunConfig};

/// Environment variable for the worker thread count.
const THREADS_ENV: &str = "SHOTNOISE_THREADS";

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "shotnoise", version, about = "Percolation experiments for planar shot noise fields")]
struct Cli {
    #[arg(value_enum)]
    command: Subcommand,
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set level_sweep.scales=[16.0,32.0]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (default: the environment variable, the config, then
    /// all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (overrides `output_dir`).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn csv_bytes(digest: &str, t: &Table) -> std::io::Result<Vec<u8>> {
    let mut buf = format!("# config_digest={digest}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&t.header)?;
        for r in &t.rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

fn write_outputs(dir: &Path, cmd: Subcommand, cfg: &RunConfig, out: &Outcome, wall: f64) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let digest = cfg.digest();
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for t in &out.tables {
        files.push((format!("{}.csv", t.name), csv_bytes(&digest, t)?));
    }
    let config: serde_json::Value = serde_json::from_str(&cfg.canonical_json()).expect("canonical JSON parses");
    let result = json!({
        "subcommand": cmd.name(),
        "config_digest": digest,
        "config": config,
        "checks": out.checks.iter().map(|(n, ok)| json!({"name": n, "passed": ok})).collect::<Vec<_>>(),
        "summary": out.summary,
    });
    let mut text = serde_json::to_vec_pretty(&result).expect("result serializes");
    text.push(b'\n');
    files.push(("result.json".into(), text));
    let mut artifacts = Vec::new();
    for (name, bytes) in &files {
        std::fs::write(dir.join(name), bytes)?;
        artifacts.push(json!({"file": name, "sha256": hex::encode(Sha256::digest(bytes)), "bytes": bytes.len()}));
    }
    let manifest = json!({
        "schema_version": SCHEMA_VERSION,
        "subcommand": cmd.name(),
        "config_digest": digest,
        "master_seed": cfg.master_seed,
        "wall_time_seconds": wall,
        "artifacts": artifacts,
    });
    let mut text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    text.push(b'\n');
    std::fs::write(dir.join("manifest.json"), text)
}

fn thread_count(cli: Option<usize>, cfg: Option<usize>) -> Result<Option<usize>, String> {
    if let Some(n) = cli {
        return Ok(Some(n));
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        return v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| format!("{THREADS_ENV} must be a positive integer, got `{v}`"));
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match parse_config(cli.config.as_deref(), &cli.set) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match thread_count(cli.threads, cfg.threads) {
        Ok(Some(0)) | Err(_) => {
            eprintln!("error: thread count must be a positive integer");
            return ExitCode::from(2);
        }
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("error: cannot start thread pool: {e}");
                return ExitCode::from(3);
            }
        }
        Ok(None) => {}
    }
    let start = Instant::now();
    let out = match commands::run(cli.command, &cfg) {
        Ok(o) => o,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            return ExitCode::from(2);
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("error: {m}");
            return ExitCode::from(3);
        }
    };
    let wall = start.elapsed().as_secs_f64();
    let dir = cli.out.unwrap_or_else(|| cfg.output_dir.clone()).join(cli.command.name());
    if let Err(e) = write_outputs(&dir, cli.command, &cfg, &out, wall) {
        eprintln!("error: writing {}: {e}", dir.display());
        return ExitCode::from(3);
    }
    let mut stdout = std::io::stdout().lock();
    for line in &out.stdout {
        let _ = writeln!(stdout, "{line}");
    }
    let failed: Vec<&str> = out.checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
    let _ = writeln!(stdout, "wrote {}", dir.display());
    if !failed.is_empty() {
        eprintln!("check failed: {}", failed.join(", "));
        return ExitCode::from(4);
    }
    ExitCode::SUCCESS
}
