mod common;

use std::f64::consts::PI;

use acflow::actor::{actor_loss_and_grad, actor_targets, vanilla_cost_grad};
use acflow::nets::{InputKind, Network, NetworkArch, OutputTransform};
use acflow::problems::{LqParams, LqProblem, SolutionFn, SolutionPart};
use acflow::sde::sample_trajectories;
use acflow::Error;
use common::{constant, dot, shifted, unit_direction, Toy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn torus_net(n: usize, width: usize, blocks: usize) -> Network {
    Network::new(NetworkArch {
        input: InputKind::Torus {
            period: 2.0 * PI,
            num_freq: 2,
        },
        state_dim: n,
        include_time: true,
        horizon: 1.0,
        hidden_width: width,
        num_blocks: blocks,
        output_dim: n,
        output_transform: OutputTransform::Identity,
    })
    .unwrap()
}

/// `u(x) = (x w1 + b1) w2 + b2` on the line, parameters `[w1, b1, w2, b2]`.
fn scalar_linear() -> Network {
    Network::new(NetworkArch {
        input: InputKind::Euclidean,
        state_dim: 1,
        include_time: false,
        horizon: 1.0,
        hidden_width: 1,
        num_blocks: 0,
        output_dim: 1,
        output_transform: OutputTransform::Identity,
    })
    .unwrap()
}

#[test]
fn zero_actor_rate_keeps_targets_at_the_policy() {
    let prob = LqProblem::new(LqParams::with_dim(2)).unwrap();
    let net = torus_net(2, 8, 1);
    let p = net.init_params(5);
    let policy = net.bind(&p);
    let batch = sample_trajectories(&prob, &policy, 20, 10, 3).unwrap();
    let g = constant(2, vec![1.5, -0.7]);
    let t = actor_targets(&prob, &policy, &g, &batch, 0.0, 0.5).unwrap();
    assert_eq!(t.target, t.current);
    assert_eq!(t.num_points(), 200);
    let (loss, grad) = actor_loss_and_grad(policy, &t).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|v| *v == 0.0));
}

#[test]
fn target_offsets_equal_the_hamiltonian_gradient_step() {
    let prob = LqProblem::new(LqParams::with_dim(1)).unwrap();
    let net = torus_net(1, 8, 2);
    let p = net.init_params(6);
    let policy = net.bind(&p);
    let batch = sample_trajectories(&prob, &policy, 10, 20, 4).unwrap();
    let g = constant(1, vec![0.5]);
    let step = 0.05 * 0.5;
    let t = actor_targets(&prob, &policy, &g, &batch, 0.05, 0.5).unwrap();
    // ∇ᵤG(x, u, −𝒢) = −𝒢 − u for the LQ problem
    for (tv, u) in t.target.iter().zip(&t.current) {
        assert!((tv - (u + step * (-0.5 - u))).abs() < 1e-15);
    }
    let net_values = net.forward(&p, acflow::func::Times::Const(batch.times[3]), batch.states_at(3)).unwrap();
    assert_eq!(&t.current[30..40], &net_values[..]);
}

#[test]
fn scalar_linear_policy_loss_by_hand() {
    let net = scalar_linear();
    let theta = 1.7;
    let p = vec![theta, 0.0, 1.0, 0.0];
    let policy = net.bind(&p);
    let mut toy = Toy::new(1);
    toy.domain = acflow::problems::Domain::Euclidean {
        init_low: vec![0.8],
        init_high: vec![0.8],
    };
    let batch = sample_trajectories(&toy, &policy, 1, 1, 1).unwrap();
    let mut t = actor_targets(&toy, &policy, &constant(1, vec![0.0]), &batch, 0.0, 1.0).unwrap();
    let (x, y) = (0.8, 2.0);
    t.target[0] = y;
    let (loss, grad) = actor_loss_and_grad(policy, &t).unwrap();
    assert!((loss - (theta * x - y).powi(2)).abs() < 1e-14);
    assert!((grad[0] - 2.0 * x * (theta * x - y)).abs() < 1e-14);
}

#[test]
fn actor_gradient_matches_central_differences() {
    let prob = LqProblem::new(LqParams::with_dim(2)).unwrap();
    let net = torus_net(2, 16, 2);
    let p = net.init_params(7);
    let policy = net.bind(&p);
    let batch = sample_trajectories(&prob, &policy, 30, 10, 5).unwrap();
    let g = SolutionFn::new(&prob, SolutionPart::Gradient).unwrap();
    let t = actor_targets(&prob, &policy, &g, &batch, 0.5, 0.5).unwrap();
    let (_, grad) = actor_loss_and_grad(policy, &t).unwrap();
    let loss_at = |q: &[f64]| {
        let mut u = vec![0.0; t.target.len()];
        for (j, &tj) in t.slice_times.iter().enumerate() {
            let w = t.slice_len * 2;
            let y = net
                .forward(q, acflow::func::Times::Const(tj), &t.points[j * w..(j + 1) * w])
                .unwrap();
            u[j * w..(j + 1) * w].copy_from_slice(&y);
        }
        u.iter().zip(&t.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eps = 1e-6;
    for _ in 0..10 {
        let v = unit_direction(&mut rng, p.len());
        let fd = (loss_at(&shifted(&p, &v, eps)) - loss_at(&shifted(&p, &v, -eps))) / (2.0 * eps);
        let an = dot(&grad, &v);
        assert!((fd - an).abs() / an.abs() < 1e-5, "fd {fd} analytic {an}");
    }
}

#[test]
fn stale_targets_are_rejected() {
    let prob = LqProblem::new(LqParams::with_dim(1)).unwrap();
    let net = torus_net(1, 4, 1);
    let p = net.init_params(1);
    let batch = sample_trajectories(&prob, &net.bind(&p), 5, 5, 1).unwrap();
    let t = actor_targets(&prob, &net.bind(&p), &constant(1, vec![0.1]), &batch, 0.1, 0.5).unwrap();
    let mut q = p.clone();
    q[0] += 1e-3;
    assert!(matches!(actor_loss_and_grad(net.bind(&q), &t), Err(Error::StaleTargets)));
}

#[test]
fn constant_policy_on_quadratic_toy() {
    // σ = 0, b = 0, r = ½u², g = 0 and u ≡ θ: cost ½θ²T, gradient θT
    let mut toy = Toy::new(1);
    toy.r_quad = 1.0;
    toy.horizon = 2.0;
    let net = scalar_linear();
    let (b1, w2, b2) = (0.5, 1.2, -0.4);
    let theta = b1 * w2 + b2;
    let p = vec![0.0, b1, w2, b2];
    let (cost, grad) = vanilla_cost_grad(&toy, net.bind(&p), 8, 40, 3).unwrap();
    assert!((cost.mean - 0.5 * theta * theta * 2.0).abs() < 1e-13);
    assert!(cost.stderr.abs() < 1e-13);
    let dj = theta * 2.0;
    assert!((grad[3] - dj).abs() < 1e-12);
    assert!((grad[2] - dj * b1).abs() < 1e-12);
    assert!((grad[1] - dj * w2).abs() < 1e-12);
}

#[test]
fn pathwise_gradient_matches_common_noise_differences() {
    let prob = LqProblem::new(LqParams::with_dim(2)).unwrap();
    let net = torus_net(2, 16, 2);
    let p = net.init_params(9);
    let (n, steps, seed) = (40, 25, 11);
    let (_, grad) = vanilla_cost_grad(&prob, net.bind(&p), n, steps, seed).unwrap();
    let cost = |q: &[f64]| vanilla_cost_grad(&prob, net.bind(q), n, steps, seed).unwrap().0.mean;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let eps = 1e-6;
    for _ in 0..10 {
        let v = unit_direction(&mut rng, p.len());
        let fd = (cost(&shifted(&p, &v, eps)) - cost(&shifted(&p, &v, -eps))) / (2.0 * eps);
        let an = dot(&grad, &v);
        assert!((fd - an).abs() / an.abs() < 1e-4, "fd {fd} analytic {an}");
    }
}

#[test]
fn pathwise_gradient_at_the_optimum_shrinks_with_the_batch() {
    let prob = LqProblem::new(LqParams::with_dim(1)).unwrap();
    let beta1 = prob.params().beta[1];
    // features (sin x, cos x, sin 2x, cos 2x, t); u = −β₁ cos x exactly
    let net = Network::new(NetworkArch {
        input: InputKind::Torus {
            period: 2.0 * PI,
            num_freq: 2,
        },
        state_dim: 1,
        include_time: true,
        horizon: 1.0,
        hidden_width: 1,
        num_blocks: 0,
        output_dim: 1,
        output_transform: OutputTransform::Identity,
    })
    .unwrap();
    let optimal = vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -beta1, 0.0];
    let mut off = optimal.clone();
    off[6] = 0.0;
    let norm = |q: &[f64], n: usize, seed: u64| {
        let (_, g) = vanilla_cost_grad(&prob, net.bind(q), n, 50, seed).unwrap();
        dot(&g, &g).sqrt()
    };
    let small: f64 = (0..4).map(|s| norm(&optimal, 250, s)).sum::<f64>() / 4.0;
    let large: f64 = (0..4).map(|s| norm(&optimal, 4000, 10 + s)).sum::<f64>() / 4.0;
    let away = norm(&off, 4000, 20);
    assert!(large < 0.5 * small, "{large} vs {small}");
    assert!(large < 0.2 * away, "{large} vs {away}");
}
