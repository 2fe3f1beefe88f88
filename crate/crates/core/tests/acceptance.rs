//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! The full run trains every benchmark and takes hours on one core.
//! `ACFLOW_ACCEPT=1,5,7` restricts it to the listed criteria.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use acflow::cli::oracle::{fit_line, run_suite, Check};
use acflow::cli::{median, write_outputs};
use acflow::func::{BatchFunction, Times};
use acflow::nets::Network;
use acflow::trainer::{train, MetricsRow, Mode, TrainConfig, TrainOutcome};

struct Verdict {
    passed: bool,
    detail: String,
}

struct Runner {
    only: Option<Vec<u32>>,
    verdicts: BTreeMap<u32, Verdict>,
}

impl Runner {
    fn wants(&self, ids: &[u32]) -> bool {
        match &self.only {
            None => true,
            Some(list) => ids.iter().any(|i| list.contains(i)),
        }
    }

    fn record(&mut self, id: u32, title: &str, passed: bool, detail: String) {
        if !self.wants(&[id]) {
            return;
        }
        let line = format!("{} criterion {id} ({title}): {detail}", if passed { "PASS" } else { "FAIL" });
        println!("{line}");
        self.verdicts.insert(id, Verdict { passed, detail: format!("({title}) {detail}") });
    }
}

fn preset(name: &str, f: impl FnOnce(&mut TrainConfig)) -> TrainConfig {
    let mut c = TrainConfig::preset(name).expect("preset");
    f(&mut c);
    c
}

fn run(cfg: &TrainConfig) -> Result<(TrainOutcome, Duration), String> {
    let start = Instant::now();
    let out = train(cfg).map_err(|e| format!("{} seed {}: {e}", cfg.problem, cfg.seed))?;
    let took = start.elapsed();
    let last = out.log.last().expect("metrics");
    eprintln!(
        "  {}{} {:?} seed {}: err_v0 {:.4} err_g {:.4} err_u {:.4} cost {:.6} ({:.0?})",
        cfg.problem, cfg.dim, cfg.mode, cfg.seed, last.err_v0, last.err_g, last.err_u, last.cost_mean, took
    );
    Ok((out, took))
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn medians(finals: &[MetricsRow]) -> [f64; 4] {
    let col = |f: fn(&MetricsRow) -> f64| median(&mut finals.iter().map(f).collect::<Vec<_>>());
    [col(|r| r.err_v0), col(|r| r.err_g), col(|r| r.err_u), col(|r| r.cost_mean)]
}

fn suite_verdict(checks: &[Check]) -> (bool, String) {
    let passed = checks.iter().all(|c| c.passed);
    let detail = checks
        .iter()
        .map(|c| format!("{}{}: {}", if c.passed { "" } else { "[failed] " }, c.name, c.detail))
        .collect::<Vec<_>>()
        .join("; ");
    (passed, detail)
}

fn suite(name: &str) -> Result<(Vec<Check>, Duration), String> {
    let start = Instant::now();
    let checks = run_suite(name).map_err(|e| format!("suite {name}: {e}"))?;
    Ok((checks, start.elapsed()))
}

fn oracle_criteria(r: &mut Runner) {
    if r.wants(&[5]) {
        match suite("gradients") {
            Ok((checks, took)) => {
                let (ok, detail) = suite_verdict(&checks);
                let fast = took < Duration::from_secs(60);
                r.record(5, "gradient checks", ok && fast, format!("{} checks in {took:.1?}; {detail}", checks.len()));
            }
            Err(e) => r.record(5, "gradient checks", false, e),
        }
    }
    if r.wants(&[6, 7]) {
        match suite("td") {
            Ok((checks, _)) => {
                let (decomp, td): (Vec<Check>, Vec<Check>) =
                    checks.into_iter().partition(|c| c.name.contains("decomposition"));
                let (ok, detail) = suite_verdict(&td);
                r.record(6, "TD correctness", ok && td.len() == 3, detail);
                let (ok, detail) = suite_verdict(&decomp);
                r.record(7, "loss decomposition", ok && decomp.len() == 1, detail);
            }
            Err(e) => {
                r.record(6, "TD correctness", false, e.clone());
                r.record(7, "loss decomposition", false, e);
            }
        }
    }
    if r.wants(&[8]) {
        match suite("pg") {
            Ok((checks, _)) => {
                let (ok, detail) = suite_verdict(&checks);
                r.record(8, "policy-gradient oracle", ok && checks.len() == 3, detail);
            }
            Err(e) => r.record(8, "policy-gradient oracle", false, e),
        }
    }
}

const LQ1D_SEEDS: u64 = 5;
const PAPER_LQ1D: [f64; 3] = [0.0225, 0.0280, 0.0465];

fn lq1d_criteria(r: &mut Runner) {
    if !r.wants(&[1, 9, 10]) {
        return;
    }
    let mut outcomes = Vec::new();
    let mut times = Vec::new();
    for seed in 0..LQ1D_SEEDS {
        match run(&preset("lq1d", |c| c.seed = seed)) {
            Ok((o, t)) => {
                outcomes.push(o);
                times.push(t.as_secs_f64());
            }
            Err(e) => {
                for (id, title) in [(1, "1d LQ reproduction"), (9, "linear convergence"), (10, "determinism")] {
                    r.record(id, title, false, e.clone());
                }
                return;
            }
        }
    }

    let finals: Vec<MetricsRow> = outcomes.iter().map(|o| *o.log.last().unwrap()).collect();
    let m = medians(&finals);
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, name) in ["v0", "g", "u"].iter().enumerate() {
        let (lo, hi) = (0.5 * PAPER_LQ1D[k], 2.5 * PAPER_LQ1D[k]);
        let inside = (lo..=hi).contains(&m[k]);
        ok &= inside;
        parts.push(format!("{name} {} in [{}, {}]{}", pct(m[k]), pct(lo), pct(hi), if inside { "" } else { " (outside)" }));
    }
    let run_time = median(&mut times);
    ok &= run_time < 300.0;
    r.record(
        1,
        "1d LQ reproduction",
        ok,
        format!("median of {LQ1D_SEEDS} seeds: {}; median run time {run_time:.0}s (< 300s)", parts.join(", ")),
    );

    let mut slopes = Vec::new();
    let mut r2s = Vec::new();
    for o in &outcomes {
        let third = o.config.iterations as f64 / 3.0;
        let pts: Vec<(f64, f64)> = o
            .log
            .rows
            .iter()
            .filter(|row| row.iter as f64 <= third)
            .map(|row| (row.iter as f64, row.err_u.ln()))
            .collect();
        let (slope, _, r2) = fit_line(&pts);
        slopes.push(slope);
        r2s.push(r2);
    }
    let per_seed = slopes
        .iter()
        .zip(&r2s)
        .map(|(s, q)| format!("({s:.4}, {q:.2})"))
        .collect::<Vec<_>>()
        .join(" ");
    let (ms, mr) = (median(&mut slopes.clone()), median(&mut r2s.clone()));
    r.record(
        9,
        "linear convergence",
        ms < 0.0 && mr >= 0.8,
        format!("median slope {ms:.4} per iteration, median R² {mr:.3} (≥ 0.8); per seed (slope, R²) {per_seed}"),
    );

    if r.wants(&[10]) {
        let cfg = outcomes[0].config.clone();
        let verdict = (|| -> Result<(bool, String), String> {
            let (again, _) = run(&cfg)?;
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let (a, b) = (dir.path().join("a"), dir.path().join("b"));
            write_outputs(&outcomes[0], &a).map_err(|e| e.to_string())?;
            write_outputs(&again, &b).map_err(|e| e.to_string())?;
            let fa = std::fs::read(a.join("metrics.csv")).map_err(|e| e.to_string())?;
            let fb = std::fs::read(b.join("metrics.csv")).map_err(|e| e.to_string())?;
            Ok((fa == fb, format!("metrics.csv {} bytes, identical: {}", fa.len(), fa == fb)))
        })();
        match verdict {
            Ok((ok, detail)) => r.record(10, "determinism", ok, detail),
            Err(e) => r.record(10, "determinism", false, e),
        }
    }
}

const AIYAGARI_SEEDS: u64 = 3;
const PAPER_AIYAGARI: [f64; 3] = [0.0054, 0.0141, 0.0156];

/// Relative L² distance of the learned consumption from 1 on a grid over
/// `[0, 2]²` at `t = 0`.
fn consumption_gap(o: &TrainOutcome) -> f64 {
    let np = o.networks.iter().find(|n| n.name == "policy").expect("policy");
    let net = Network::new(np.arch.clone()).expect("arch");
    let k = 41;
    let mut xs = Vec::with_capacity(2 * k * k);
    for i in 0..k {
        for j in 0..k {
            xs.push(2.0 * i as f64 / (k - 1) as f64);
            xs.push(2.0 * j as f64 / (k - 1) as f64);
        }
    }
    let mut c = vec![0.0; k * k];
    net.bind(&np.params).eval(Times::Const(0.0), &xs, &mut c).expect("policy eval");
    (c.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / c.len() as f64).sqrt()
}

fn aiyagari_criterion(r: &mut Runner) {
    if !r.wants(&[4]) {
        return;
    }
    let mut finals = Vec::new();
    let mut gaps = Vec::new();
    for seed in 0..AIYAGARI_SEEDS {
        match run(&preset("aiyagari", |c| {
            c.seed = seed;
            c.eval_every = 50;
        })) {
            Ok((o, _)) => {
                let gap = consumption_gap(&o);
                eprintln!("    ‖c − 1‖_rel at t = 0: {}", pct(gap));
                gaps.push(gap);
                finals.push(*o.log.last().unwrap());
            }
            Err(e) => return r.record(4, "Aiyagari", false, e),
        }
    }
    let m = medians(&finals);
    let gap = median(&mut gaps);
    let mut ok = gap < 0.05;
    let mut parts = vec![format!("‖c − 1‖_rel {} (< 5%)", pct(gap))];
    for (k, name) in ["v0", "g", "u"].iter().enumerate() {
        let bound = 3.0 * PAPER_AIYAGARI[k];
        ok &= m[k] < bound;
        parts.push(format!("{name} {} (< {})", pct(m[k]), pct(bound)));
    }
    r.record(4, "Aiyagari", ok, format!("median of {AIYAGARI_SEEDS} seeds: {}", parts.join(", ")));
}

const LQ10D_SEEDS: u64 = 3;

fn lq10d_criteria(r: &mut Runner) {
    if !r.wants(&[2, 3]) {
        return;
    }
    let desk = |seed: u64, mode: Mode| {
        preset("lq10d", |c| {
            c.iterations = 500;
            c.batch_size = 1000;
            c.eval_every = 50;
            c.seed = seed;
            c.mode = mode;
        })
    };
    let mut ac = Vec::new();
    let mut vanilla = Vec::new();
    for seed in 0..LQ10D_SEEDS {
        for (mode, sink) in [(Mode::ActorCritic, &mut ac), (Mode::Vanilla, &mut vanilla)] {
            if mode == Mode::Vanilla && !r.wants(&[3]) {
                continue;
            }
            match run(&desk(seed, mode)) {
                Ok((o, _)) => sink.push(*o.log.last().unwrap()),
                Err(e) => {
                    r.record(2, "10d LQ", false, e.clone());
                    r.record(3, "actor-critic vs vanilla", false, e);
                    return;
                }
            }
        }
    }
    let m = medians(&ac);
    let ok = m[..3].iter().all(|&e| e < 0.15);
    r.record(
        2,
        "10d LQ",
        ok,
        format!(
            "median of {LQ10D_SEEDS} seeds at 500 iterations, batch 1000: v0 {}, g {}, u {} (each < 15%)",
            pct(m[0]),
            pct(m[1]),
            pct(m[2])
        ),
    );
    if r.wants(&[3]) {
        let mv = medians(&vanilla);
        r.record(
            3,
            "actor-critic vs vanilla",
            m[3] <= mv[3],
            format!("median final cost: actor-critic {:.5} vs vanilla {:.5}", m[3], mv[3]),
        );
    }
}

fn main() -> ExitCode {
    let only = std::env::var("ACFLOW_ACCEPT").ok().map(|s| {
        s.split(',')
            .filter_map(|t| t.trim().parse::<u32>().ok())
            .collect::<Vec<_>>()
    });
    let mut r = Runner {
        only,
        verdicts: BTreeMap::new(),
    };
    let start = Instant::now();
    oracle_criteria(&mut r);
    lq1d_criteria(&mut r);
    aiyagari_criterion(&mut r);
    lq10d_criteria(&mut r);

    println!("\nacceptance summary ({:.0?}):", start.elapsed());
    let mut failed = 0;
    for (id, v) in &r.verdicts {
        println!("{} criterion {id} {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
