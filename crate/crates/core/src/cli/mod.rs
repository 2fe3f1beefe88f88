//! Command-line front end: `run`, `eval`, `oracle` and `bench`.

pub mod oracle;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nets::{read_checkpoint, write_checkpoint, Network};
use crate::trainer::{train, Evaluator, MetricsRow, Mode, TrainConfig, TrainOutcome};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "ACFLOW_OUT";

#[derive(Debug, Parser)]
#[command(name = "acflow", version, about = "Actor-critic solver for stochastic optimal control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write metrics, summary and checkpoint.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preset used when no config file is given.
        #[arg(long)]
        problem: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute errors and cost for a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run self-check suites: gradients, td, pde, pg or all.
    Oracle {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Train a preset across seeds and report median final metrics.
    Bench {
        #[arg(long)]
        problem: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    /// SHA-256 of the canonical config JSON.
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub started_ms: u64,
    pub finished_ms: u64,
}

/// Final metrics of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub final_metrics: MetricsRow,
    pub elapsed_ms: u64,
    pub config: TrainConfig,
}

pub fn config_hash(cfg: &TrainConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Reads a config file, or a preset when no file is given, and applies flag
/// overrides.
pub fn load_config(
    path: Option<&Path>,
    problem: Option<&str>,
    seed: Option<u64>,
    mode: Option<&str>,
) -> Result<TrainConfig> {
    let mut cfg = match (path, problem) {
        (Some(p), _) => TrainConfig::from_json_str(&fs::read_to_string(p)?)?,
        (None, Some(name)) => TrainConfig::preset(name)?,
        (None, None) => TrainConfig::preset("lq1d")?,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.mode = m.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::ActorCritic => "ac",
        Mode::Vanilla => "vanilla",
        Mode::Supervised => "supervised",
    }
}

fn default_dir(explicit: Option<&Path>, leaf: String) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(leaf),
    }
}

fn run_name(cfg: &TrainConfig) -> String {
    format!("{}{}-{}-seed{}", cfg.problem, cfg.dim, mode_name(cfg.mode), cfg.seed)
}

/// Writes `metrics.csv`, `summary.json`, `config.json` and
/// `checkpoint.acfc` into `dir`.
pub fn write_outputs(outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("metrics.csv"))?);
    outcome.log.write_csv(&mut w)?;
    w.flush()?;
    let last = *outcome
        .log
        .last()
        .ok_or_else(|| Error::Config("run produced no metrics".into()))?;
    let summary = Summary {
        final_metrics: last,
        elapsed_ms: outcome.log.elapsed_ms,
        config: outcome.config.clone(),
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    fs::write(dir.join("config.json"), outcome.config.to_json_string())?;
    let f = BufWriter::new(File::create(dir.join("checkpoint.acfc"))?);
    write_checkpoint(f, &outcome.checkpoint())?;
    Ok(())
}

/// Trains and writes all outputs of one run, returning its manifest.
pub fn run_and_write(cfg: &TrainConfig, dir: &Path) -> Result<(TrainOutcome, RunManifest)> {
    let started_ms = now_ms();
    let outcome = train(cfg)?;
    write_outputs(&outcome, dir)?;
    let manifest = RunManifest {
        config: cfg.clone(),
        config_hash: config_hash(cfg),
        seeds: vec![cfg.seed],
        output_dir: dir.to_path_buf(),
        started_ms,
        finished_ms: now_ms(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok((outcome, manifest))
}

fn fmt_pct(v: f64) -> String {
    if v.is_nan() {
        "-".into()
    } else {
        format!("{:.2}%", 100.0 * v)
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-seed final rows of a bench and their medians.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub finals: Vec<MetricsRow>,
    pub median_err_v0: f64,
    pub median_err_g: f64,
    pub median_err_u: f64,
    pub median_cost: f64,
}

pub fn bench(base: &TrainConfig, seeds: u64, dir: &Path) -> Result<BenchReport> {
    let mut finals = Vec::new();
    let seed_list: Vec<u64> = (0..seeds).collect();
    for &s in &seed_list {
        let cfg = TrainConfig {
            seed: s,
            ..base.clone()
        };
        let (outcome, _) = run_and_write(&cfg, &dir.join(format!("seed{s}")))?;
        finals.push(*outcome.log.last().expect("run has metrics"));
    }
    let col = |f: fn(&MetricsRow) -> f64| median(&mut finals.iter().map(f).collect::<Vec<_>>());
    let report = BenchReport {
        config: base.clone(),
        seeds: seed_list,
        median_err_v0: col(|r| r.err_v0),
        median_err_g: col(|r| r.err_g),
        median_err_u: col(|r| r.err_u),
        median_cost: col(|r| r.cost_mean),
        finals,
    };
    fs::write(dir.join("bench.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

fn print_bench(report: &BenchReport) {
    println!("seed  err_v0    err_g     err_u     cost");
    for (s, r) in report.seeds.iter().zip(&report.finals) {
        println!(
            "{s:<5} {:<9} {:<9} {:<9} {:.5}",
            fmt_pct(r.err_v0),
            fmt_pct(r.err_g),
            fmt_pct(r.err_u),
            r.cost_mean
        );
    }
    println!(
        "median {:<8} {:<9} {:<9} {:.5}",
        fmt_pct(report.median_err_v0),
        fmt_pct(report.median_err_g),
        fmt_pct(report.median_err_u),
        report.median_cost
    );
}

fn eval_checkpoint(path: &Path, out: Option<&Path>) -> Result<()> {
    let ckpt = read_checkpoint(BufReader::new(File::open(path).map_err(|e| {
        Error::Checkpoint(format!("cannot open {}: {e}", path.display()))
    })?))?;
    let cfg: TrainConfig = serde_json::from_value(ckpt.meta.clone())
        .map_err(|e| Error::Checkpoint(format!("checkpoint config: {e}")))?;
    let prob = cfg.build_problem()?;
    let evaluator = Evaluator::new(prob, cfg.eval_samples, cfg.num_steps(), cfg.seed)?;
    let get = |name: &str| -> Result<(Network, Vec<f64>)> {
        let e = ckpt
            .network(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing network `{name}`")))?;
        Ok((Network::new(e.arch.clone())?, e.params.0.clone()))
    };
    let (nv, pv) = get("v0")?;
    let (ng, pg) = get("g")?;
    let (nu, pu) = get("policy")?;
    let (fv, fg, fu) = (nv.bind(&pv), ng.bind(&pg), nu.bind(&pu));
    let errs = if cfg.mode == Mode::Vanilla {
        evaluator.errors(None, None, Some(&fu))?
    } else {
        evaluator.errors(Some(&fv), Some(&fg), Some(&fu))?
    };
    let (cost_mean, cost_stderr) = evaluator.cost(&fu)?;
    println!(
        "err_v0 {}  err_g {}  err_u {}  cost {cost_mean:.6} ± {cost_stderr:.6}",
        fmt_pct(errs.v0),
        fmt_pct(errs.g),
        fmt_pct(errs.u)
    );
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let value = serde_json::json!({
            "iteration": ckpt.iteration,
            "errors": errs,
            "cost_mean": cost_mean,
            "cost_stderr": cost_stderr,
        });
        fs::write(dir.join("eval.json"), serde_json::to_string_pretty(&value)?)?;
    }
    Ok(())
}

/// Executes a parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            problem,
            seed,
            mode,
            out,
        } => {
            let cfg = load_config(config.as_deref(), problem.as_deref(), seed, mode.as_deref())?;
            let dir = default_dir(out.as_deref(), run_name(&cfg));
            let (outcome, _) = run_and_write(&cfg, &dir)?;
            let r = outcome.log.last().expect("run has metrics");
            println!(
                "{}: err_v0 {}  err_g {}  err_u {}  cost {:.6}",
                dir.display(),
                fmt_pct(r.err_v0),
                fmt_pct(r.err_g),
                fmt_pct(r.err_u),
                r.cost_mean
            );
        }
        Command::Eval { checkpoint, out } => eval_checkpoint(&checkpoint, out.as_deref())?,
        Command::Oracle { suite } => {
            let checks = oracle::run_suite(&suite)?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if failed > 0 {
                return Err(Error::Config(format!("{failed} oracle check(s) failed")));
            }
        }
        Command::Bench {
            problem,
            config,
            seeds,
            mode,
            out,
        } => {
            let cfg = load_config(config.as_deref(), problem.as_deref(), None, mode.as_deref())?;
            let leaf = format!("bench-{}{}-{}", cfg.problem, cfg.dim, mode_name(cfg.mode));
            let dir = default_dir(out.as_deref(), leaf);
            let report = bench(&cfg, seeds, &dir)?;
            print_bench(&report);
        }
    }
    Ok(())
}

/// Entry point returning a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
