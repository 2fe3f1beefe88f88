//! Self-check suites run by `acflow oracle`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::actor::{actor_loss_and_grad, actor_targets, vanilla_cost_grad};
use crate::critic::{compute_td, compute_td_rl, critic_loss_and_grad, loss_decomposition, TdVariant};
use crate::error::Result;
use crate::eval::{hjb_residual, pg_fd_oracle, BoundaryCondition, PdeGrid, PgOracleConfig};
use crate::func::{Pointwise, Times};
use crate::nets::{NetFn, Network};
use crate::problems::{
    AiyagariParams, AiyagariProblem, ControlProblem, LqParams, LqProblem,
    SolutionFn, SolutionPart,
};
use crate::sde::sample_trajectories;
use crate::trainer::TrainConfig;

pub const SUITES: [&str; 4] = ["gradients", "td", "pde", "pg"];

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn run_suite(name: &str) -> Result<Vec<Check>> {
    match name {
        "gradients" => gradient_suite(),
        "td" => td_suite(),
        "pde" => pde_suite(),
        "pg" => pg_suite(),
        "all" => {
            let mut all = Vec::new();
            for s in SUITES {
                all.extend(run_suite(s)?);
            }
            Ok(all)
        }
        other => Err(crate::Error::Config(format!("unknown suite `{other}`"))),
    }
}

const PROBES: usize = 20;
const FD_EPS: f64 = 1e-4;
/// Unrolled trajectories evaluate the policy at many points, so a ReLU kink
/// inside `±ε` is common at the default step.
const FD_EPS_UNROLLED: f64 = 1e-6;

fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-300 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let v = normal_vec(rng, len);
    let norm = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn shifted(base: &[f64], dir: &[f64], eps: f64) -> Vec<f64> {
    base.iter().zip(dir).map(|(a, d)| a + eps * d).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst relative error of directional derivatives over random probes.
fn probe_directions(
    rng: &mut ChaCha8Rng,
    eps: f64,
    dim: usize,
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    base: &[f64],
) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..PROBES {
        let v = unit_vec(rng, dim);
        let fd = (f(&shifted(base, &v, eps))? - f(&shifted(base, &v, -eps))?) / (2.0 * eps);
        worst = worst.max(rel_diff(dot(analytic, &v), fd));
    }
    Ok(worst)
}

fn problems() -> Result<Vec<(&'static str, TrainConfig, Arc<dyn ControlProblem>)>> {
    let mut out = Vec::new();
    for name in ["lq1d", "lq10d", "aiyagari"] {
        let cfg = TrainConfig::preset(name)?;
        let prob = cfg.build_problem()?;
        out.push((name, cfg, prob));
    }
    Ok(out)
}

fn gradient_suite() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for (name, cfg, prob) in problems()? {
        let archs = cfg.architectures(&*prob);
        let nets: Vec<Network> = archs.into_iter().map(Network::new).collect::<Result<_>>()?;
        let n = prob.state_dim();
        for (k, net) in nets.iter().enumerate() {
            let params = net.init_params(k as u64 + 1);
            let rows = 3;
            let (low, high) = prob.domain().init_bounds(n);
            let xs: Vec<f64> = (0..rows * n).map(|i| rng.gen_range(low[i % n]..high[i % n])).collect();
            let ts: Vec<f64> = (0..rows).map(|_| rng.gen_range(0.0..prob.horizon())).collect();
            let cot = normal_vec(&mut rng, rows * net.output_dim());
            let (gp, gx) = net.vjp(&params, Times::PerRow(&ts), &xs, &cot)?;
            let eval = |p: &[f64], x: &[f64]| -> Result<f64> {
                Ok(dot(&cot, &net.forward(p, Times::PerRow(&ts), x)?))
            };
            let wp = probe_directions(&mut rng, FD_EPS, params.len(), &gp, |p| eval(p, &xs), &params)?;
            let wx = probe_directions(&mut rng, FD_EPS, xs.len(), &gx, |x| eval(&params, x), &xs)?;
            checks.push(Check::new(
                format!("vjp {name} {}", ["v0", "g", "policy"][k]),
                wp < 1e-5 && wx < 1e-5,
                format!("params {wp:.2e}, inputs {wx:.2e}"),
            ));
        }
        if name == "lq10d" {
            continue;
        }
        let p = [0, 1, 2].map(|k| nets[k].init_params(10 + k as u64));
        let policy = nets[2].bind(&p[2]);
        let batch = sample_trajectories(&*prob, &policy, 6, 8, 5)?;
        let cg = critic_loss_and_grad(&*prob, nets[0].bind(&p[0]), nets[1].bind(&p[1]), &batch, TdVariant::Modified)?;
        let loss_with = |v0: &[f64], g: &[f64]| -> Result<f64> {
            Ok(compute_td(&*prob, &nets[0].bind(v0), &nets[1].bind(g), &batch)?.loss())
        };
        let w0 = probe_directions(&mut rng, FD_EPS, p[0].len(), &cg.grad_v0, |q| loss_with(q, &p[1]), &p[0])?;
        let wg = probe_directions(&mut rng, FD_EPS, p[1].len(), &cg.grad_g, |q| loss_with(&p[0], q), &p[1])?;
        checks.push(Check::new(
            format!("critic loss {name}"),
            w0 < 1e-5 && wg < 1e-5,
            format!("v0 {w0:.2e}, g {wg:.2e}"),
        ));

        let mut targets = actor_targets(&*prob, &policy, &nets[1].bind(&p[1]), &batch, cfg.lr_actor, cfg.dtau)?;
        let (_, ga) = actor_loss_and_grad(policy, &targets)?;
        targets.policy_fingerprint = None;
        let wa = probe_directions(
            &mut rng,
            FD_EPS,
            p[2].len(),
            &ga,
            |q| Ok(actor_loss_and_grad(NetFn { net: &nets[2], params: q }, &targets)?.0),
            &p[2],
        )?;
        checks.push(Check::new(format!("actor loss {name}"), wa < 1e-5, format!("{wa:.2e}")));

        let (_, gv) = vanilla_cost_grad(&*prob, policy, 8, 10, 3)?;
        let wv = probe_directions(
            &mut rng,
            FD_EPS_UNROLLED,
            p[2].len(),
            &gv,
            |q| Ok(vanilla_cost_grad(&*prob, nets[2].bind(q), 8, 10, 3)?.0.mean),
            &p[2],
        )?;
        checks.push(Check::new(format!("vanilla cost {name}"), wv < 1e-4, format!("{wv:.2e}")));
    }
    Ok(checks)
}

/// `b ≡ 0`, `σ ≡ 0`, `r ≡ 1`, `g ≡ 0` on the circle; `V(t, x) = T − t`.
struct UnitCost {
    domain: crate::problems::Domain,
}

impl ControlProblem for UnitCost {
    fn name(&self) -> &str {
        "unit-cost"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> f64 {
        1.0
    }
    fn domain(&self) -> &crate::problems::Domain {
        &self.domain
    }
    fn drift(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn running_cost(&self, _x: &[f64], _u: &[f64]) -> Result<f64> {
        Ok(1.0)
    }
    fn terminal_cost(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn grad_u_drift(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn grad_u_running_cost(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }
    fn grad_x_drift(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn grad_x_diffusion_apply(&self, _x: &[f64], _xi: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn grad_x_running_cost(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }
    fn grad_x_terminal_cost(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn maximize_hamiltonian(&self, _x: &[f64], _p: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }
}

fn constant(value: f64, out_dim: usize) -> Pointwise<impl Fn(f64, &[f64], &mut [f64]) + Sync> {
    Pointwise::new(1, out_dim, move |_t, _x: &[f64], o: &mut [f64]| o.fill(value))
}

fn td_suite() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let unit = UnitCost {
        domain: crate::problems::Domain::Torus { period: 2.0 * PI },
    };
    let batch = sample_trajectories(&unit, &constant(0.7, 1), 64, 100, 1)?;
    let td = compute_td(&unit, &constant(1.0, 1), &constant(3.0, 1), &batch)?;
    let worst = td.td.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    checks.push(Check::new("exact critic, deterministic problem", worst == 0.0, format!("max |TD| {worst:.1e}")));

    let prob = LqProblem::new(LqParams::with_dim(1))?;
    let u = SolutionFn::new(&prob, SolutionPart::Control)?;
    let v = SolutionFn::new(&prob, SolutionPart::Value)?;
    let g = SolutionFn::new(&prob, SolutionPart::Gradient)?;
    let mut pts = Vec::new();
    for steps in [50, 100, 200, 400] {
        let batch = sample_trajectories(&prob, &u, 10_000, steps, 2)?;
        let td = compute_td(&prob, &v, &g, &batch)?;
        pts.push(((1.0 / steps as f64).ln(), td.loss().ln()));
        if steps == 100 {
            let rl = compute_td_rl(&prob, &v, &batch)?;
            let ratio = rl.variance() / td.variance();
            checks.push(Check::new("variance reduction at h = 0.01", ratio >= 5.0, format!("Var ratio {ratio:.1}")));
        }
    }
    let slope = fit_line(&pts).0;
    checks.push(Check::new(
        "E[TD²] under step halving",
        (0.7..=1.3).contains(&slope),
        format!("log-log slope {slope:.3}"),
    ));

    let v_pert = Pointwise::new(1, 1, |t, x: &[f64], o: &mut [f64]| {
        o[0] = 0.5 * (1.0 - t) + 0.5 * x[0].sin() + 0.2 * x[0].cos();
    });
    let g_pert = Pointwise::new(1, 1, |_t, x: &[f64], o: &mut [f64]| {
        o[0] = 0.5 * x[0].cos() + 0.3 * x[0].sin();
    });
    let batch = sample_trajectories(&prob, &u, 100_000, 200, 3)?;
    let d = loss_decomposition(&prob, &v_pert, &g_pert, &v, &g, &batch)?;
    let gap = (d.half_td_sq.mean - d.total.mean).abs();
    checks.push(Check::new(
        "loss decomposition",
        gap < 3.0 * d.combined_stderr(),
        format!("½E[TD²] {:.5}, L0+L1 {:.5}, 3se {:.5}", d.half_td_sq.mean, d.total.mean, 3.0 * d.combined_stderr()),
    ));
    Ok(checks)
}

/// Least-squares line `y = a x + b`; returns `(a, b, R²)`.
pub fn fit_line(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let a = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (a, my - a * mx, r2)
}

fn pde_suite() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let prob: Arc<dyn ControlProblem> = Arc::new(LqProblem::new(LqParams::with_dim(1))?);
    let sol = prob.analytic().expect("LQ has a closed form");
    let mut errs = Vec::new();
    for cells in [50, 100, 200] {
        let grid = PdeGrid {
            x_min: 0.0,
            x_max: 2.0 * PI,
            num_cells: cells,
            num_steps: cells,
            horizon: 1.0,
            boundary: BoundaryCondition::Periodic,
        };
        let p = prob.clone();
        let ustar: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync> = Arc::new(move |t, x| {
            let mut o = [0.0];
            p.analytic().expect("closed form").control(t, &[x], &mut o);
            o[0]
        });
        let table = crate::eval::linear_pde_reference(prob.clone(), ustar, &grid)?;
        let mut worst = 0.0f64;
        for n in 0..=cells {
            let t = table.time(n);
            for i in 0..table.num_nodes() {
                let x = table.node(i);
                worst = worst.max((table.row(n)[i] - sol.value(t, &[x])).abs());
            }
        }
        errs.push(worst);
    }
    let ratio = errs[1] / errs[2];
    checks.push(Check::new(
        "Crank–Nicolson self-convergence",
        (3.0..=5.5).contains(&ratio) && errs[2] < 1e-3,
        format!("errors {:.2e} {:.2e} {:.2e}, ratio {ratio:.2}", errs[0], errs[1], errs[2]),
    ));

    let aiy = AiyagariProblem::new(AiyagariParams::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let times: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..0.95)).collect();
    let xs: Vec<f64> = (0..400).map(|_| rng.gen_range(0.0..2.0)).collect();
    let res = hjb_residual(&aiy, aiy.solution(), &times, &xs)?;
    let worst = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    checks.push(Check::new("Aiyagari reference HJB residual", worst < 1e-2, format!("max |residual| {worst:.2e}")));
    Ok(checks)
}

fn pg_suite() -> Result<Vec<Check>> {
    let prob: Arc<dyn ControlProblem> = Arc::new(LqProblem::new(LqParams::with_dim(1))?);
    let base: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync> = Arc::new(|_t, x: f64| -0.5 * x.cos() + 0.3 * x.sin());
    let cfg = PgOracleConfig {
        num_traj: 100_000,
        num_steps: 200,
        fd_seed: 1,
        formula_seed: 2,
        grid: PdeGrid {
            x_min: 0.0,
            x_max: 2.0 * PI,
            num_cells: 400,
            num_steps: 400,
            horizon: 1.0,
            boundary: BoundaryCondition::Periodic,
        },
        chunk: 20_000,
    };
    let perturbations: [(&str, Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>); 3] = [
        ("sin x", Arc::new(|_t, x: f64| x.sin())),
        ("cos 2x", Arc::new(|_t, x: f64| (2.0 * x).cos())),
        ("t + sin x cos x", Arc::new(|t, x: f64| t + x.sin() * x.cos())),
    ];
    let mut checks = Vec::new();
    for (name, phi) in perturbations {
        let r = pg_fd_oracle(prob.clone(), base.clone(), phi, 1e-2, &cfg)?;
        checks.push(Check::new(
            format!("policy gradient, φ = {name}"),
            r.z_score() < 3.0,
            format!("fd {:.5}, formula {:.5}, se {:.5}", r.fd.mean, r.formula.mean, r.combined_stderr),
        ));
    }
    Ok(checks)
}
