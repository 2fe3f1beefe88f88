//! Reference oracles and error metrics.

pub mod hjb;
pub mod pde;
pub mod pg_oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::critic::Estimate;
use crate::error::{Error, Result};
use crate::func::{BatchFunction, Times};
use crate::problems::ControlProblem;
use crate::sde::sample_trajectories;

pub use hjb::{hjb_residual, SmoothValue};
pub use pde::{
    linear_pde_reference, BoundaryCondition, LinearPde1d, PdeGrid, PdeSolution,
};
pub use pg_oracle::{pg_fd_oracle, PgOracleConfig, PgOracleResult};

/// How evaluation times are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeSampling {
    Fixed(f64),
    /// Uniform on `[0, horizon)`.
    Uniform { horizon: f64 },
}

/// Uniform sampler on a box of states, with fixed or uniform times.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSampler {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub time: TimeSampling,
}

impl DomainSampler {
    /// The problem's initial region (the torus itself for periodic domains).
    pub fn for_problem(prob: &dyn ControlProblem, time: TimeSampling) -> Self {
        let (low, high) = prob.domain().init_bounds(prob.state_dim());
        Self { low, high, time }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    /// Returns `(times, states)` for `num` points.
    pub fn sample(&self, num: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.dim();
        let mut times = Vec::with_capacity(num);
        let mut xs = Vec::with_capacity(num * n);
        for _ in 0..num {
            times.push(match self.time {
                TimeSampling::Fixed(t) => t,
                TimeSampling::Uniform { horizon } => rng.gen_range(0.0..horizon),
            });
            for k in 0..n {
                xs.push(self.low[k] + (self.high[k] - self.low[k]) * rng.gen::<f64>());
            }
        }
        (times, xs)
    }
}

/// `‖approx − reference‖ / ‖reference‖` over sampled points.
pub fn l2_rel_error(
    approx: &dyn BatchFunction,
    reference: &dyn BatchFunction,
    sampler: &DomainSampler,
    num_samples: usize,
    seed: u64,
) -> Result<f64> {
    if num_samples == 0 {
        return Err(Error::param("num_samples", "must be at least 1"));
    }
    if approx.input_dim() != reference.input_dim()
        || approx.output_dim() != reference.output_dim()
        || approx.input_dim() != sampler.dim()
    {
        return Err(Error::dims("approximation and reference shapes differ"));
    }
    let (times, xs) = sampler.sample(num_samples, seed);
    let d = reference.output_dim();
    let mut a = vec![0.0; num_samples * d];
    let mut r = vec![0.0; num_samples * d];
    approx.eval(Times::PerRow(&times), &xs, &mut a)?;
    reference.eval(Times::PerRow(&times), &xs, &mut r)?;
    rel_error(&a, &r)
}

/// `‖a − r‖ / ‖r‖` for two equally long vectors.
pub fn rel_error(a: &[f64], r: &[f64]) -> Result<f64> {
    let num: f64 = a.iter().zip(r).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = r.iter().map(|y| y * y).sum();
    if den == 0.0 {
        return Err(Error::ZeroReferenceNorm);
    }
    Ok((num / den).sqrt())
}

/// Mean and standard error of `Σ_j r h + g(x_T)` over fresh trajectories.
pub fn estimate_cost(
    prob: &dyn ControlProblem,
    policy: &dyn BatchFunction,
    num_traj: usize,
    num_steps: usize,
    seed: u64,
) -> Result<Estimate> {
    if num_traj < 2 {
        return Err(Error::param("num_traj", "need at least two trajectories"));
    }
    let batch = sample_trajectories(prob, policy, num_traj, num_steps, seed)?;
    trajectory_costs(prob, &batch).map(|c| Estimate::from_samples(&c))
}

/// Realized cost of every trajectory in a batch.
pub fn trajectory_costs(
    prob: &dyn ControlProblem,
    batch: &crate::sde::TrajectoryBatch,
) -> Result<Vec<f64>> {
    let mut costs = vec![0.0; batch.num_traj];
    for j in 0..batch.num_steps {
        for (i, c) in costs.iter_mut().enumerate() {
            *c += prob.running_cost(batch.state(j, i), batch.control(j, i))?;
        }
    }
    for (i, c) in costs.iter_mut().enumerate() {
        *c = *c * batch.h + prob.terminal_cost(batch.state(batch.num_steps, i));
    }
    Ok(costs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::func::Pointwise;

    #[test]
    fn relative_error_examples() {
        let sampler = DomainSampler {
            low: vec![0.0],
            high: vec![1.0],
            time: TimeSampling::Uniform { horizon: 1.0 },
        };
        let r = Pointwise::new(1, 1, |t, x: &[f64], o: &mut [f64]| o[0] = 1.0 + t + x[0]);
        let a = Pointwise::new(1, 1, |t, x: &[f64], o: &mut [f64]| o[0] = 1.1 * (1.0 + t + x[0]));
        assert_eq!(l2_rel_error(&r, &r, &sampler, 100, 1).unwrap(), 0.0);
        let e = l2_rel_error(&a, &r, &sampler, 100, 1).unwrap();
        assert!((e - 0.1).abs() < 1e-12);
        let c = Pointwise::new(1, 1, |_t, _x: &[f64], o: &mut [f64]| o[0] = 2.0);
        let cc = Pointwise::new(1, 1, |_t, _x: &[f64], o: &mut [f64]| o[0] = 2.5);
        let e = l2_rel_error(&cc, &c, &sampler, 10, 1).unwrap();
        assert!((e - 0.25).abs() < 1e-12);
        let z = Pointwise::new(1, 1, |_t, _x: &[f64], o: &mut [f64]| o[0] = 0.0);
        assert!(matches!(
            l2_rel_error(&a, &z, &sampler, 10, 1),
            Err(Error::ZeroReferenceNorm)
        ));
    }
}
