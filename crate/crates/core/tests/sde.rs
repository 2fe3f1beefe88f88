mod common;

use std::f64::consts::PI;

use acflow::problems::{ControlProblem, Domain, LqParams, LqProblem, SolutionFn, SolutionPart};
use acflow::sde::{sample_trajectories, sample_trajectory_range, wrap_periodic, wrap_scalar};
use acflow::Error;
use common::{constant, Toy};
use proptest::prelude::*;

fn torus_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

#[test]
fn increments_have_the_step_covariance() {
    let mut toy = Toy::new(2);
    toy.sigma = 1.0;
    let b = sample_trajectories(&toy, &constant(2, vec![0.0, 0.0]), 500, 200, 7).unwrap();
    let count = b.increments.len() as f64;
    let mean = b.increments.iter().sum::<f64>() / count;
    let var = b.increments.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    assert!(mean.abs() < 4.0 * (b.h / count).sqrt(), "mean {mean}");
    assert!((var / b.h - 1.0).abs() < 0.05, "variance {var}");
    assert_eq!(b.times[b.num_steps], 1.0);
    assert!(b.states.iter().all(|x| (0.0..2.0 * PI).contains(x)));
}

#[test]
fn frozen_dynamics_keep_the_initial_state() {
    let toy = Toy::new(3);
    let b = sample_trajectories(&toy, &constant(3, vec![0.3, 0.1, 0.2]), 20, 15, 1).unwrap();
    for j in 0..=b.num_steps {
        assert_eq!(b.states_at(j), b.initial_states());
    }
}

#[test]
fn unit_drift_translates_around_the_torus() {
    let mut toy = Toy::new(1);
    toy.drift_gain = 1.0;
    toy.horizon = 5.0;
    let b = sample_trajectories(&toy, &constant(1, vec![1.0]), 30, 500, 2).unwrap();
    for i in 0..30 {
        let want = wrap_scalar(b.state(0, i)[0] + 5.0, 2.0 * PI);
        assert!(torus_gap(b.state(500, i)[0], want) < 1e-12);
    }
}

#[test]
fn replaying_stored_increments_reproduces_the_states() {
    let prob = LqProblem::new(LqParams::with_dim(2)).unwrap();
    let u = SolutionFn::new(&prob, SolutionPart::Control).unwrap();
    let b = sample_trajectories(&prob, &u, 50, 40, 3).unwrap();
    let beta = prob.params().beta.clone();
    for i in 0..50 {
        let mut x = b.state(0, i).to_vec();
        for j in 0..40 {
            let xi = b.increment(j, i);
            for d in 0..2 {
                x[d] += -beta[d + 1] * x[d].cos() * b.h + xi[d];
            }
        }
        for d in 0..2 {
            assert!(torus_gap(x[d], b.state(40, i)[d]) < 1e-12);
        }
    }
}

#[test]
fn euler_scheme_converges_strongly_under_step_halving() {
    // coarse paths reuse the fine Brownian increments summed pairwise
    let prob = LqProblem::new(LqParams::with_dim(1)).unwrap();
    let u = SolutionFn::new(&prob, SolutionPart::Control).unwrap();
    let b1 = prob.params().beta[1];
    let fine = sample_trajectories(&prob, &u, 2000, 400, 5).unwrap();
    let run = |stride: usize| -> Vec<f64> {
        let h = fine.h * stride as f64;
        (0..fine.num_traj)
            .map(|i| {
                let mut x = fine.state(0, i)[0];
                for j in (0..fine.num_steps).step_by(stride) {
                    let xi: f64 = (j..j + stride).map(|k| fine.increment(k, i)[0]).sum();
                    x += -b1 * x.cos() * h + xi;
                }
                x
            })
            .collect()
    };
    let paths: Vec<Vec<f64>> = [1, 2, 4, 8].iter().map(|&s| run(s)).collect();
    let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| torus_gap(*x, *y)).sum::<f64>() / a.len() as f64;
    let e: Vec<f64> = (0..3).map(|k| gap(&paths[k + 1], &paths[k])).collect();
    for k in 0..2 {
        let order = (e[k + 1] / e[k]).log2();
        assert!((0.5..=1.1).contains(&order), "errors {e:?}");
    }
    let library = fine.terminal_states();
    assert!(gap(library, &paths[0]) < 1e-12);
}

#[test]
fn overflowing_state_is_reported() {
    let mut toy = Toy::new(1);
    toy.drift_gain = 1e300;
    toy.domain = Domain::Euclidean {
        init_low: vec![0.0],
        init_high: vec![1.0],
    };
    match sample_trajectories(&toy, &constant(1, vec![1e300]), 4, 3, 1) {
        Err(Error::NonFiniteState { trajectory, step }) => assert_eq!((trajectory, step), (0, 1)),
        other => panic!("unexpected {other:?}"),
    }
    assert!(toy.domain().period().is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn leading_trajectories_do_not_depend_on_the_batch_size(
        seed in any::<u64>(),
        small in 1usize..20,
        extra in 1usize..20,
    ) {
        let prob = LqProblem::new(LqParams::with_dim(2)).unwrap();
        let u = constant(2, vec![0.2, -0.4]);
        let a = sample_trajectories(&prob, &u, small, 8, seed).unwrap();
        let b = sample_trajectories(&prob, &u, small + extra, 8, seed).unwrap();
        for j in 0..=8 {
            for i in 0..small {
                prop_assert_eq!(a.state(j, i), b.state(j, i));
            }
        }
        let tail = sample_trajectory_range(&prob, &u, small, extra, 8, seed).unwrap();
        for j in 0..=8 {
            for i in 0..extra {
                prop_assert_eq!(tail.state(j, i), b.state(j, small + i));
            }
        }
        prop_assert_eq!(a, sample_trajectories(&prob, &u, small, 8, seed).unwrap());
    }

    #[test]
    fn wrapping_lands_in_range_and_is_idempotent(
        xs in proptest::collection::vec(-1e6f64..1e6, 1..8),
        period in 0.1f64..10.0,
    ) {
        let mut w = xs.clone();
        wrap_periodic(&mut w, period);
        for (v, x) in w.iter().zip(&xs) {
            prop_assert!((0.0..period).contains(v));
            let k = ((x - v) / period).round();
            prop_assert!((x - v - k * period).abs() <= 1e-9 * x.abs().max(1.0));
        }
        let mut again = w.clone();
        wrap_periodic(&mut again, period);
        prop_assert_eq!(again, w);
    }
}
