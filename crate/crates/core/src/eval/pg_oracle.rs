//! Finite-difference check of the functional derivative of the cost.
//!
//! For a perturbation `φ` of a control `u`,
//! `d/dε J[u + εφ] = −E ∫ ⟨∇ᵤG(t, x_t, u, −∇ₓV_u(t, x_t)), φ(t, x_t)⟩ dt`
//! with `x_t` driven by `u`. Both sides are estimated by Monte Carlo.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::pde::{linear_pde_reference, PdeGrid};
use super::trajectory_costs;
use crate::critic::Estimate;
use crate::error::{Error, Result};
use crate::func::Pointwise;
use crate::problems::{grad_u_hamiltonian, ControlProblem};
use crate::sde::sample_trajectory_range;

/// A scalar feedback law `(t, x) ↦ u` for one-dimensional problems.
pub type Control1d = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub struct PgOracleConfig {
    pub num_traj: usize,
    pub num_steps: usize,
    /// Seed of the common random numbers for the two perturbed costs.
    pub fd_seed: u64,
    /// Independent seed for the formula estimate.
    pub formula_seed: u64,
    /// Grid for the `V_u` reference solve.
    pub grid: PdeGrid,
    /// Trajectories simulated at once.
    pub chunk: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgOracleResult {
    pub fd: Estimate,
    pub formula: Estimate,
    pub combined_stderr: f64,
}

impl PgOracleResult {
    /// `|fd − formula| / combined_stderr`, or 0 when both sides are
    /// identical.
    pub fn z_score(&self) -> f64 {
        let d = (self.fd.mean - self.formula.mean).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.combined_stderr
        }
    }
}

fn as_policy(f: Control1d) -> Pointwise<impl Fn(f64, &[f64], &mut [f64]) + Sync> {
    Pointwise::new(1, 1, move |t, x: &[f64], o: &mut [f64]| o[0] = f(t, x[0]))
}

pub fn pg_fd_oracle(
    prob: Arc<dyn ControlProblem>,
    base: Control1d,
    perturbation: Control1d,
    eps: f64,
    cfg: &PgOracleConfig,
) -> Result<PgOracleResult> {
    if !(1e-4..=1e-1).contains(&eps) {
        return Err(Error::param("eps", "must lie in [1e-4, 1e-1]"));
    }
    if prob.state_dim() != 1 || prob.control_dim() != 1 {
        return Err(Error::dims("the policy-gradient oracle needs a 1d problem"));
    }
    if cfg.num_traj < 2 || cfg.chunk == 0 {
        return Err(Error::param("num_traj", "need at least two trajectories"));
    }
    let vu = linear_pde_reference(prob.clone(), base.clone(), &cfg.grid)?;

    let plus = {
        let (b, p) = (base.clone(), perturbation.clone());
        as_policy(Arc::new(move |t, x| b(t, x) + eps * p(t, x)))
    };
    let minus = {
        let (b, p) = (base.clone(), perturbation.clone());
        as_policy(Arc::new(move |t, x| b(t, x) - eps * p(t, x)))
    };
    let base_policy = as_policy(base);

    let mut fd = Vec::with_capacity(cfg.num_traj);
    let mut formula = Vec::with_capacity(cfg.num_traj);
    let mut start = 0;
    while start < cfg.num_traj {
        let count = cfg.chunk.min(cfg.num_traj - start);
        let bp = sample_trajectory_range(&*prob, &plus, start, count, cfg.num_steps, cfg.fd_seed)?;
        let bm = sample_trajectory_range(&*prob, &minus, start, count, cfg.num_steps, cfg.fd_seed)?;
        let cp = trajectory_costs(&*prob, &bp)?;
        let cm = trajectory_costs(&*prob, &bm)?;
        drop((bp, bm));
        fd.extend(cp.iter().zip(&cm).map(|(a, b)| (a - b) / (2.0 * eps)));

        let batch = sample_trajectory_range(
            &*prob,
            &base_policy,
            start,
            count,
            cfg.num_steps,
            cfg.formula_seed,
        )?;
        let mut acc = vec![0.0; count];
        let mut grad = [0.0];
        for j in 0..batch.num_steps {
            let t = batch.times[j];
            for (i, a) in acc.iter_mut().enumerate() {
                let x = batch.state(j, i);
                let p = [-vu.gradient(t, x[0])];
                grad_u_hamiltonian(&*prob, x, batch.control(j, i), &p, &mut grad)?;
                *a -= grad[0] * perturbation(t, x[0]) * batch.h;
            }
        }
        formula.extend(acc);
        start += count;
    }
    let fd = Estimate::from_samples(&fd);
    let formula = Estimate::from_samples(&formula);
    Ok(PgOracleResult {
        fd,
        formula,
        combined_stderr: fd.stderr.hypot(formula.stderr),
    })
}
