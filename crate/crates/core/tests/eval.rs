mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use acflow::eval::pde::{BoundaryCondition, PdeGrid};
use acflow::eval::pg_oracle::{pg_fd_oracle, PgOracleConfig};
use acflow::eval::{estimate_cost, l2_rel_error, DomainSampler, TimeSampling};
use acflow::func::Pointwise;
use acflow::problems::{ControlProblem, LqParams, LqProblem, SolutionFn, SolutionPart};
use common::{constant, Toy};
use proptest::prelude::*;

#[test]
fn constant_running_cost_is_integrated_exactly() {
    let mut toy = Toy::new(2);
    toy.sigma = 0.8;
    toy.drift_gain = 1.0;
    toy.r_const = 0.35;
    toy.horizon = 2.0;
    let e = estimate_cost(&toy, &constant(2, vec![0.0, 0.0]), 50, 80, 1).unwrap();
    assert!((e.mean - 0.7).abs() < 1e-12);
    assert!(e.stderr < 1e-12);

    let mut toy = Toy::new(1);
    toy.sigma = 1.0;
    toy.g_const = -1.25;
    let e = estimate_cost(&toy, &constant(1, vec![0.0]), 20, 10, 2).unwrap();
    assert_eq!(e.mean, -1.25);
    assert_eq!(e.stderr, 0.0);
}

#[test]
fn optimal_lq_cost_matches_the_torus_average_of_the_value() {
    // the sine terms of V*(0, ·) average to zero over the torus
    let prob = LqProblem::new(LqParams::with_dim(1)).unwrap();
    let u = SolutionFn::new(&prob, SolutionPart::Control).unwrap();
    let e = estimate_cost(&prob, &u, 20_000, 100, 3).unwrap();
    let exact = prob.params().beta[0] * prob.horizon();
    assert!((e.mean - exact).abs() < 4.0 * e.stderr, "{} ± {} vs {exact}", e.mean, e.stderr);
}

#[test]
fn cost_stderr_halves_when_the_sample_quadruples() {
    let prob = LqProblem::new(LqParams::with_dim(1)).unwrap();
    let u = constant(1, vec![0.2]);
    let a = estimate_cost(&prob, &u, 2000, 50, 4).unwrap();
    let b = estimate_cost(&prob, &u, 8000, 50, 5).unwrap();
    let ratio = a.stderr / b.stderr;
    assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
}

#[test]
fn perturbed_reference_errors() {
    let sampler = DomainSampler {
        low: vec![0.0, 0.0],
        high: vec![2.0 * PI, 2.0 * PI],
        time: TimeSampling::Uniform { horizon: 1.0 },
    };
    let prob = LqProblem::new(LqParams::with_dim(2)).unwrap();
    let g = SolutionFn::new(&prob, SolutionPart::Gradient).unwrap();
    assert_eq!(l2_rel_error(&g, &g, &sampler, 500, 1).unwrap(), 0.0);
    let scaled = Pointwise::new(2, 2, |t, x: &[f64], o: &mut [f64]| {
        acflow::problems::AnalyticSolution::grad_value(prob.solution(), t, x, o);
        o.iter_mut().for_each(|v| *v *= 1.1);
    });
    let e = l2_rel_error(&scaled, &g, &sampler, 500, 1).unwrap();
    assert!((e - 0.1).abs() < 1e-12);
}

fn oracle_config() -> PgOracleConfig {
    PgOracleConfig {
        num_traj: 20_000,
        num_steps: 100,
        fd_seed: 1,
        formula_seed: 2,
        grid: PdeGrid {
            x_min: 0.0,
            x_max: 2.0 * PI,
            num_cells: 200,
            num_steps: 200,
            horizon: 1.0,
            boundary: BoundaryCondition::Periodic,
        },
        chunk: 5000,
    }
}

#[test]
fn zero_perturbation_gives_zero_derivatives() {
    let prob: Arc<dyn ControlProblem> = Arc::new(LqProblem::new(LqParams::with_dim(1)).unwrap());
    let mut cfg = oracle_config();
    cfg.num_traj = 200;
    let r = pg_fd_oracle(prob, Arc::new(|_t, x: f64| x.cos()), Arc::new(|_t, _x| 0.0), 1e-2, &cfg).unwrap();
    assert_eq!(r.fd.mean, 0.0);
    assert_eq!(r.formula.mean, 0.0);
    assert_eq!(r.z_score(), 0.0);
}

#[test]
fn optimal_control_is_stationary() {
    let lq = LqProblem::new(LqParams::with_dim(1)).unwrap();
    let b1 = lq.params().beta[1];
    let prob: Arc<dyn ControlProblem> = Arc::new(lq);
    let r = pg_fd_oracle(
        prob,
        Arc::new(move |_t, x: f64| -b1 * x.cos()),
        Arc::new(|_t, x: f64| x.sin()),
        1e-2,
        &oracle_config(),
    )
    .unwrap();
    // ∇ᵤG vanishes only up to the accuracy of the PDE solve
    assert!(r.formula.mean.abs() < 1e-3, "formula {}", r.formula.mean);
    assert!(r.fd.mean.abs() < 4.0 * r.fd.stderr, "fd {} ± {}", r.fd.mean, r.fd.stderr);
}

#[test]
fn out_of_range_eps_is_rejected() {
    let prob: Arc<dyn ControlProblem> = Arc::new(LqProblem::new(LqParams::with_dim(1)).unwrap());
    let cfg = oracle_config();
    for eps in [1e-5, 0.5] {
        assert!(pg_fd_oracle(prob.clone(), Arc::new(|_t, _x| 0.0), Arc::new(|_t, _x| 1.0), eps, &cfg).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn uniform_scaling_error_is_the_scale(s in 0.1f64..3.0, seed in 0u64..100) {
        let sampler = DomainSampler {
            low: vec![0.0],
            high: vec![2.0 * PI],
            time: TimeSampling::Fixed(0.0),
        };
        let prob = LqProblem::new(LqParams::with_dim(1)).unwrap();
        let v = SolutionFn::new(&prob, SolutionPart::Value).unwrap();
        let sol = prob.solution();
        let scaled = Pointwise::new(1, 1, move |t, x: &[f64], o: &mut [f64]| {
            o[0] = s * acflow::problems::AnalyticSolution::value(sol, t, x);
        });
        let e = l2_rel_error(&scaled, &v, &sampler, 64, seed).unwrap();
        prop_assert!((e - (s - 1.0).abs()).abs() < 1e-12);
    }
}
