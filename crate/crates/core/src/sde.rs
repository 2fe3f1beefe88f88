//! Euler–Maruyama sampling of controlled trajectories.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::func::{BatchFunction, Times};
use crate::problems::ControlProblem;
use crate::rng::trajectory_rng;

/// Maps every coordinate into `[0, period)`.
pub fn wrap_periodic(x: &mut [f64], period: f64) {
    for v in x {
        *v = wrap_scalar(*v, period);
    }
}

#[inline]
pub fn wrap_scalar(v: f64, period: f64) -> f64 {
    let r = v.rem_euclid(period);
    // rem_euclid rounds tiny negative inputs up to `period`
    if r >= period {
        0.0
    } else {
        r
    }
}

/// `N` sampled paths on the grid `0, h, …, N_T·h = T`.
///
/// Arrays are stored time-major: `states` is `(N_T+1) × N × n`, `increments`
/// is `N_T × N × m` and `controls` is `N_T × N × n'`, so a time slice is a
/// contiguous batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub h: f64,
    pub num_steps: usize,
    pub num_traj: usize,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub control_dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub increments: Vec<f64>,
    /// Control applied at each `(j, i)`, recorded during sampling.
    pub controls: Vec<f64>,
    pub seed: u64,
}

impl TrajectoryBatch {
    /// All `N` states at step `j`.
    pub fn states_at(&self, j: usize) -> &[f64] {
        let w = self.num_traj * self.state_dim;
        &self.states[j * w..(j + 1) * w]
    }

    pub fn state(&self, j: usize, i: usize) -> &[f64] {
        let n = self.state_dim;
        let o = (j * self.num_traj + i) * n;
        &self.states[o..o + n]
    }

    pub fn increments_at(&self, j: usize) -> &[f64] {
        let w = self.num_traj * self.noise_dim;
        &self.increments[j * w..(j + 1) * w]
    }

    pub fn increment(&self, j: usize, i: usize) -> &[f64] {
        let m = self.noise_dim;
        let o = (j * self.num_traj + i) * m;
        &self.increments[o..o + m]
    }

    pub fn controls_at(&self, j: usize) -> &[f64] {
        let w = self.num_traj * self.control_dim;
        &self.controls[j * w..(j + 1) * w]
    }

    pub fn control(&self, j: usize, i: usize) -> &[f64] {
        let c = self.control_dim;
        let o = (j * self.num_traj + i) * c;
        &self.controls[o..o + c]
    }

    pub fn initial_states(&self) -> &[f64] {
        self.states_at(0)
    }

    pub fn terminal_states(&self) -> &[f64] {
        self.states_at(self.num_steps)
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.num_steps]
    }
}

/// The time grid `jT/N_T`, with the last node pinned to `T`.
pub fn time_grid(horizon: f64, num_steps: usize) -> Vec<f64> {
    let h = horizon / num_steps as f64;
    let mut times: Vec<f64> = (0..=num_steps).map(|j| j as f64 * h).collect();
    times[num_steps] = horizon;
    times
}

/// Simulates `x_{t+h} = x_t + b(x_t, u(t, x_t)) h + σ(x_t) ξ_t`, `ξ_t ~ N(0, h I)`,
/// from `x₀` uniform on the domain's initial region.
///
/// Trajectory `i` draws from its own stream keyed by `(seed, i)`, so adding
/// trajectories never changes existing ones.
pub fn sample_trajectories(
    prob: &dyn ControlProblem,
    policy: &dyn BatchFunction,
    num_traj: usize,
    num_steps: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    sample_trajectory_range(prob, policy, 0, num_traj, num_steps, seed)
}

/// Trajectories `first..first + num_traj` of the family keyed by `seed`.
/// Concatenating consecutive ranges reproduces one large batch.
pub fn sample_trajectory_range(
    prob: &dyn ControlProblem,
    policy: &dyn BatchFunction,
    first: usize,
    num_traj: usize,
    num_steps: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    if num_traj == 0 || num_steps == 0 {
        return Err(Error::param(
            "batch",
            "need at least one trajectory and one step",
        ));
    }
    let (n, m, nc) = (prob.state_dim(), prob.noise_dim(), prob.control_dim());
    if policy.input_dim() != n || policy.output_dim() != nc {
        return Err(Error::dims(format!(
            "policy maps R^{} -> R^{}, problem needs R^{} -> R^{}",
            policy.input_dim(),
            policy.output_dim(),
            n,
            nc
        )));
    }
    let horizon = prob.horizon();
    let times = time_grid(horizon, num_steps);
    let h = horizon / num_steps as f64;
    let sqrt_h = h.sqrt();
    let period = prob.domain().period();

    let mut rngs: Vec<_> = (0..num_traj)
        .map(|i| trajectory_rng(seed, (first + i) as u64))
        .collect();
    let mut states = vec![0.0; (num_steps + 1) * num_traj * n];
    let mut increments = vec![0.0; num_steps * num_traj * m];
    let mut controls = vec![0.0; num_steps * num_traj * nc];

    let (low, high) = prob.domain().init_bounds(n);
    for (i, rng) in rngs.iter_mut().enumerate() {
        for k in 0..n {
            let v = low[k] + (high[k] - low[k]) * rng.gen::<f64>();
            states[i * n + k] = match period {
                Some(p) => wrap_scalar(v, p),
                None => v,
            };
        }
    }

    let mut drift = vec![0.0; n];
    let mut kick = vec![0.0; n];
    for j in 0..num_steps {
        let (done, rest) = states.split_at_mut((j + 1) * num_traj * n);
        let cur = &done[j * num_traj * n..];
        let next = &mut rest[..num_traj * n];
        let ctrl = &mut controls[j * num_traj * nc..(j + 1) * num_traj * nc];
        policy.eval(Times::Const(times[j]), cur, ctrl)?;
        let incs = &mut increments[j * num_traj * m..(j + 1) * num_traj * m];
        for (i, rng) in rngs.iter_mut().enumerate() {
            let x = &cur[i * n..(i + 1) * n];
            let u = &ctrl[i * nc..(i + 1) * nc];
            let xi = &mut incs[i * m..(i + 1) * m];
            for v in xi.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = sqrt_h * z;
            }
            prob.drift(x, u, &mut drift);
            prob.diffusion_apply(x, xi, &mut kick);
            let out = &mut next[i * n..(i + 1) * n];
            for k in 0..n {
                out[k] = x[k] + drift[k] * h + kick[k];
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState {
                    trajectory: first + i,
                    step: j + 1,
                });
            }
            if let Some(p) = period {
                wrap_periodic(out, p);
            }
        }
    }

    Ok(TrajectoryBatch {
        h,
        num_steps,
        num_traj,
        state_dim: n,
        noise_dim: m,
        control_dim: nc,
        times,
        states,
        increments,
        controls,
        seed,
    })
}
