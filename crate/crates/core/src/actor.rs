//! Policy-gradient targets, the least-squares actor loss, and the pathwise
//! gradient of the discretized cost used by the vanilla baseline.

use crate::critic::Estimate;
use crate::error::{Error, Result};
use crate::func::{BatchFunction, Times};
use crate::nets::{NetFn, ParamVector};
use crate::problems::{grad_u_hamiltonian, ControlProblem};
use crate::sde::{sample_trajectories, TrajectoryBatch};

/// Regression targets `u + Δτ·α_a·∇ᵤG(t, x, u, −𝒢(t, x))` on the sample
/// points of a batch.
///
/// Points are grouped in time slices: slice `j` holds the `N` states at
/// `t_j`, for `j = 0..N_T−1`. Terminal states are not included.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorTargets {
    pub state_dim: usize,
    pub control_dim: usize,
    pub slice_len: usize,
    pub slice_times: Vec<f64>,
    /// `num_points × n`.
    pub points: Vec<f64>,
    /// Policy values the targets were built from, `num_points × n'`.
    pub current: Vec<f64>,
    pub target: Vec<f64>,
    /// Fingerprint of the policy parameters behind `current`.
    pub policy_fingerprint: Option<u64>,
}

impl ActorTargets {
    pub fn num_points(&self) -> usize {
        self.slice_len * self.slice_times.len()
    }

    fn slice_points(&self, j: usize) -> &[f64] {
        let w = self.slice_len * self.state_dim;
        &self.points[j * w..(j + 1) * w]
    }
}

/// Builds targets with `𝒢` evaluated on the batch.
pub fn actor_targets(
    prob: &dyn ControlProblem,
    policy: &dyn BatchFunction,
    g: &dyn BatchFunction,
    batch: &TrajectoryBatch,
    alpha_a: f64,
    dtau: f64,
) -> Result<ActorTargets> {
    let n = prob.state_dim();
    if g.input_dim() != n || g.output_dim() != n {
        return Err(Error::dims("gradient network must map R^n -> R^n"));
    }
    let w = batch.num_traj * n;
    let mut values = vec![0.0; batch.num_steps * w];
    for j in 0..batch.num_steps {
        g.eval(
            Times::Const(batch.times[j]),
            batch.states_at(j),
            &mut values[j * w..(j + 1) * w],
        )?;
    }
    actor_targets_from_estimates(prob, policy, batch, &values, alpha_a, dtau)
}

/// Builds targets from `𝒢` values already computed on the batch
/// (time-major, `N_T × N × n`).
pub fn actor_targets_from_estimates(
    prob: &dyn ControlProblem,
    policy: &dyn BatchFunction,
    batch: &TrajectoryBatch,
    g_values: &[f64],
    alpha_a: f64,
    dtau: f64,
) -> Result<ActorTargets> {
    let (n, nc) = (prob.state_dim(), prob.control_dim());
    if batch.state_dim != n || batch.control_dim != nc {
        return Err(Error::dims("batch does not belong to this problem"));
    }
    if policy.input_dim() != n || policy.output_dim() != nc {
        return Err(Error::dims("policy shape does not match the problem"));
    }
    let num_points = batch.num_steps * batch.num_traj;
    if g_values.len() != num_points * n {
        return Err(Error::dims("gradient estimates do not cover the batch"));
    }
    let step = alpha_a * dtau;
    let current = batch.controls.clone();
    let mut target = current.clone();
    let mut p = vec![0.0; n];
    let mut grad = vec![0.0; nc];
    for k in 0..num_points {
        let x = &batch.states[k * n..(k + 1) * n];
        let u = &current[k * nc..(k + 1) * nc];
        for (pd, gv) in p.iter_mut().zip(&g_values[k * n..(k + 1) * n]) {
            *pd = -gv;
        }
        grad_u_hamiltonian(prob, x, u, &p, &mut grad)?;
        for (t, gu) in target[k * nc..(k + 1) * nc].iter_mut().zip(&grad) {
            *t += step * gu;
        }
    }
    Ok(ActorTargets {
        state_dim: n,
        control_dim: nc,
        slice_len: batch.num_traj,
        slice_times: batch.times[..batch.num_steps].to_vec(),
        points: batch.states[..num_points * n].to_vec(),
        current,
        target,
        policy_fingerprint: policy.fingerprint(),
    })
}

/// `Σ |u(t, x; θ) − target|²` over all target points and its gradient in `θ`.
///
/// The targets must have been built from the same parameters.
pub fn actor_loss_and_grad(policy: NetFn<'_>, targets: &ActorTargets) -> Result<(f64, ParamVector)> {
    if let Some(fp) = targets.policy_fingerprint {
        if policy.fingerprint() != Some(fp) {
            return Err(Error::StaleTargets);
        }
    }
    if policy.input_dim() != targets.state_dim || policy.output_dim() != targets.control_dim {
        return Err(Error::dims("policy shape does not match the targets"));
    }
    let nc = targets.control_dim;
    let w = targets.slice_len * nc;
    let mut loss = 0.0;
    let mut grad = ParamVector::zeros(policy.net.num_params());
    let mut cot = vec![0.0; w];
    for (j, &t) in targets.slice_times.iter().enumerate() {
        let cache = policy
            .net
            .forward_cached(policy.params, Times::Const(t), targets.slice_points(j))?;
        let tgt = &targets.target[j * w..(j + 1) * w];
        for ((c, u), y) in cot.iter_mut().zip(&cache.output).zip(tgt) {
            let r = u - y;
            loss += r * r;
            *c = 2.0 * r;
        }
        policy
            .net
            .backward(policy.params, &cache, &cot, &mut grad, None)?;
    }
    Ok((loss, grad))
}

/// Monte Carlo estimate of the discretized cost
/// `Ĵ = (1/N) Σ_i [Σ_j r(x_j, u_j) h + g(x_T)]` and its exact gradient with
/// respect to the policy parameters, obtained by differentiating through
/// every Euler–Maruyama step with the noise held fixed.
pub fn vanilla_cost_grad(
    prob: &dyn ControlProblem,
    policy: NetFn<'_>,
    num_traj: usize,
    num_steps: usize,
    seed: u64,
) -> Result<(Estimate, ParamVector)> {
    let batch = sample_trajectories(prob, &policy, num_traj, num_steps, seed)?;
    let (n, nc) = (prob.state_dim(), prob.control_dim());
    let (nt, h) = (batch.num_traj, batch.h);
    let inv_n = 1.0 / nt as f64;

    let mut costs = vec![0.0; nt];
    let mut lambda = vec![0.0; nt * n];
    for i in 0..nt {
        let x = batch.state(num_steps, i);
        costs[i] = prob.terminal_cost(x);
        let l = &mut lambda[i * n..(i + 1) * n];
        prob.grad_x_terminal_cost(x, l);
        l.iter_mut().for_each(|v| *v *= inv_n);
    }

    let mut grad = ParamVector::zeros(policy.net.num_params());
    let mut cot_u = vec![0.0; nt * nc];
    let mut dx_u = vec![0.0; nt * n];
    let mut ju = vec![0.0; n * nc];
    let mut jx = vec![0.0; n * n];
    let mut tmp_u = vec![0.0; nc];
    let mut tmp_x = vec![0.0; n];
    for j in (0..num_steps).rev() {
        for i in 0..nt {
            let (x, u) = (batch.state(j, i), batch.control(j, i));
            let l = &lambda[i * n..(i + 1) * n];
            costs[i] += prob.running_cost(x, u)? * h;
            prob.grad_u_running_cost(x, u, &mut tmp_u)?;
            prob.grad_u_drift(x, u, &mut ju);
            let c = &mut cot_u[i * nc..(i + 1) * nc];
            for k in 0..nc {
                let bt_l: f64 = (0..n).map(|d| ju[d * nc + k] * l[d]).sum();
                c[k] = h * (tmp_u[k] * inv_n + bt_l);
            }
        }
        let cache = policy
            .net
            .forward_cached(policy.params, Times::Const(batch.times[j]), batch.states_at(j))?;
        policy
            .net
            .backward(policy.params, &cache, &cot_u, &mut grad, Some(&mut dx_u))
            .map_err(|e| match e {
                Error::NonFiniteGradient { .. } => Error::NonFiniteGradient { step: Some(j) },
                e => e,
            })?;
        for i in 0..nt {
            let (x, u, xi) = (batch.state(j, i), batch.control(j, i), batch.increment(j, i));
            let l = &mut lambda[i * n..(i + 1) * n];
            let old = l.to_vec();
            prob.grad_x_running_cost(x, u, &mut tmp_x)?;
            prob.grad_x_drift(x, u, &mut jx);
            let mut js = vec![0.0; n * n];
            prob.grad_x_diffusion_apply(x, xi, &mut js);
            for k in 0..n {
                let mut acc = h * tmp_x[k] * inv_n + old[k] + dx_u[i * n + k];
                for d in 0..n {
                    acc += (h * jx[d * n + k] + js[d * n + k]) * old[d];
                }
                l[k] = acc;
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { step: Some(j) });
            }
        }
    }
    Ok((Estimate::from_samples(&costs), grad))
}
