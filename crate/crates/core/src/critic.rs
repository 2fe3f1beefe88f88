//! Temporal differences with the Itô martingale correction and the
//! least-squares critic loss.
//!
//! For trajectory `i` of a batch,
//!
//! `TD_i = Σ_j r(x_j, u_j) h + g(x_T) − 𝒱₀(x₀) − Σ_j 𝒢(t_j, x_j)ᵀ σ(x_j) ξ_j`
//!
//! and the critic loss is `(1/N) Σ_i TD_i²`. Dropping the last sum gives the
//! plain reinforcement-learning TD.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func::{BatchFunction, Times};
use crate::nets::{NetFn, ParamVector};
use crate::problems::ControlProblem;
use crate::sde::TrajectoryBatch;

/// Which temporal difference drives the critic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdVariant {
    /// With the martingale term `Σ 𝒢ᵀσξ`.
    #[default]
    Modified,
    /// Without it. `𝒢` then receives no training signal.
    Rl,
}

/// Per-trajectory temporal differences and their parts.
#[derive(Debug, Clone, PartialEq)]
pub struct TdBatch {
    pub td: Vec<f64>,
    pub running: Vec<f64>,
    pub terminal: Vec<f64>,
    pub v0: Vec<f64>,
    pub martingale: Vec<f64>,
}

impl TdBatch {
    pub fn len(&self) -> usize {
        self.td.len()
    }

    pub fn is_empty(&self) -> bool {
        self.td.is_empty()
    }

    /// `(1/N) Σ TD_i²`.
    pub fn loss(&self) -> f64 {
        self.td.iter().map(|d| d * d).sum::<f64>() / self.td.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.td.iter().sum::<f64>() / self.td.len() as f64
    }

    /// Unbiased sample variance of the TD.
    pub fn variance(&self) -> f64 {
        let n = self.td.len() as f64;
        let m = self.mean();
        self.td.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (n - 1.0)
    }
}

fn check_shapes(
    prob: &dyn ControlProblem,
    v0: &dyn BatchFunction,
    g: Option<&dyn BatchFunction>,
    batch: &TrajectoryBatch,
) -> Result<()> {
    let n = prob.state_dim();
    if batch.state_dim != n
        || batch.noise_dim != prob.noise_dim()
        || batch.control_dim != prob.control_dim()
    {
        return Err(Error::dims("batch does not belong to this problem"));
    }
    if v0.input_dim() != n || v0.output_dim() != 1 {
        return Err(Error::dims("value network must map R^n -> R"));
    }
    if let Some(g) = g {
        if g.input_dim() != n || g.output_dim() != n {
            return Err(Error::dims("gradient network must map R^n -> R^n"));
        }
    }
    Ok(())
}

/// `σ(x_j)ξ_j` for every `(j, i)`, laid out like the batch states.
pub fn noise_kicks(prob: &dyn ControlProblem, batch: &TrajectoryBatch) -> Vec<f64> {
    let n = batch.state_dim;
    let mut out = vec![0.0; batch.num_steps * batch.num_traj * n];
    for j in 0..batch.num_steps {
        for i in 0..batch.num_traj {
            let o = (j * batch.num_traj + i) * n;
            prob.diffusion_apply(batch.state(j, i), batch.increment(j, i), &mut out[o..o + n]);
        }
    }
    out
}

/// Cost realization `Σ_j r h + g(x_T)` split into its two parts.
fn cost_parts(prob: &dyn ControlProblem, batch: &TrajectoryBatch) -> Result<(Vec<f64>, Vec<f64>)> {
    let nt = batch.num_traj;
    let mut running = vec![0.0; nt];
    for j in 0..batch.num_steps {
        for (i, acc) in running.iter_mut().enumerate() {
            *acc += prob.running_cost(batch.state(j, i), batch.control(j, i))?;
        }
    }
    running.iter_mut().for_each(|v| *v *= batch.h);
    let terminal = (0..nt)
        .map(|i| prob.terminal_cost(batch.state(batch.num_steps, i)))
        .collect();
    Ok((running, terminal))
}

fn assemble(
    running: Vec<f64>,
    terminal: Vec<f64>,
    v0: Vec<f64>,
    martingale: Vec<f64>,
) -> TdBatch {
    let td = (0..running.len())
        .map(|i| running[i] + terminal[i] - v0[i] - martingale[i])
        .collect();
    TdBatch {
        td,
        running,
        terminal,
        v0,
        martingale,
    }
}

/// Evaluates `𝒢` on every non-terminal time slice and accumulates the
/// martingale sums. Returns `(martingale, 𝒢 values)`.
fn martingale_sums(
    g: &dyn BatchFunction,
    batch: &TrajectoryBatch,
    kicks: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (nt, n) = (batch.num_traj, batch.state_dim);
    let mut values = vec![0.0; batch.num_steps * nt * n];
    let mut mart = vec![0.0; nt];
    for j in 0..batch.num_steps {
        let w = nt * n;
        let slice = &mut values[j * w..(j + 1) * w];
        g.eval(Times::Const(batch.times[j]), batch.states_at(j), slice)?;
        let k = &kicks[j * w..(j + 1) * w];
        for (i, m) in mart.iter_mut().enumerate() {
            *m += slice[i * n..(i + 1) * n]
                .iter()
                .zip(&k[i * n..(i + 1) * n])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
    }
    Ok((mart, values))
}

/// Modified temporal differences. The controls recorded in the batch are
/// used, so the batch must have been sampled under the policy being
/// evaluated.
pub fn compute_td(
    prob: &dyn ControlProblem,
    v0: &dyn BatchFunction,
    g: &dyn BatchFunction,
    batch: &TrajectoryBatch,
) -> Result<TdBatch> {
    check_shapes(prob, v0, Some(g), batch)?;
    let (running, terminal) = cost_parts(prob, batch)?;
    let mut v = vec![0.0; batch.num_traj];
    v0.eval(Times::Const(0.0), batch.initial_states(), &mut v)?;
    let kicks = noise_kicks(prob, batch);
    let (mart, _) = martingale_sums(g, batch, &kicks)?;
    Ok(assemble(running, terminal, v, mart))
}

/// Temporal differences without the martingale correction.
pub fn compute_td_rl(
    prob: &dyn ControlProblem,
    v0: &dyn BatchFunction,
    batch: &TrajectoryBatch,
) -> Result<TdBatch> {
    check_shapes(prob, v0, None, batch)?;
    let (running, terminal) = cost_parts(prob, batch)?;
    let mut v = vec![0.0; batch.num_traj];
    v0.eval(Times::Const(0.0), batch.initial_states(), &mut v)?;
    let zeros = vec![0.0; batch.num_traj];
    Ok(assemble(running, terminal, v, zeros))
}

/// Critic loss, its parameter gradients, and the `𝒢` values on the batch
/// (time-major, `N_T × N × n`) for reuse by the actor.
#[derive(Debug, Clone)]
pub struct CriticLossGrad {
    pub loss: f64,
    pub td: TdBatch,
    pub grad_v0: ParamVector,
    pub grad_g: ParamVector,
    pub g_values: Vec<f64>,
}

/// Forward caches for `𝒢` are kept between the two passes up to this size.
const CACHE_BUDGET_BYTES: usize = 768 << 20;

pub fn critic_loss_and_grad(
    prob: &dyn ControlProblem,
    v0: NetFn<'_>,
    g: NetFn<'_>,
    batch: &TrajectoryBatch,
    variant: TdVariant,
) -> Result<CriticLossGrad> {
    check_shapes(prob, &v0, Some(&g), batch)?;
    let (nt, n) = (batch.num_traj, batch.state_dim);
    let (running, terminal) = cost_parts(prob, batch)?;
    let v0_cache = v0
        .net
        .forward_cached(v0.params, Times::Const(0.0), batch.initial_states())?;
    let kicks = noise_kicks(prob, batch);
    let w = nt * n;
    let keep = variant == TdVariant::Modified
        && g.net.cache_bytes(nt) * batch.num_steps <= CACHE_BUDGET_BYTES;
    let mut caches = Vec::with_capacity(if keep { batch.num_steps } else { 0 });
    let mut g_values = vec![0.0; batch.num_steps * w];
    let mut mart = vec![0.0; nt];
    for j in 0..batch.num_steps {
        let cache = g
            .net
            .forward_cached(g.params, Times::Const(batch.times[j]), batch.states_at(j))?;
        let k = &kicks[j * w..(j + 1) * w];
        for (i, m) in mart.iter_mut().enumerate() {
            let out = &cache.output[i * n..(i + 1) * n];
            *m += out.iter().zip(&k[i * n..(i + 1) * n]).map(|(a, b)| a * b).sum::<f64>();
        }
        g_values[j * w..(j + 1) * w].copy_from_slice(&cache.output);
        if keep {
            caches.push(cache);
        }
    }
    let td = match variant {
        TdVariant::Modified => assemble(running, terminal, v0_cache.output.clone(), mart),
        TdVariant::Rl => assemble(running, terminal, v0_cache.output.clone(), vec![0.0; nt]),
    };
    let loss = td.loss();
    let scale = -2.0 / nt as f64;

    let mut grad_v0 = ParamVector::zeros(v0.net.num_params());
    let cot: Vec<f64> = td.td.iter().map(|d| scale * d).collect();
    v0.net.backward(v0.params, &v0_cache, &cot, &mut grad_v0, None)?;

    let mut grad_g = ParamVector::zeros(g.net.num_params());
    if variant == TdVariant::Modified {
        let mut cot = vec![0.0; w];
        let mut stored = caches.into_iter();
        for j in 0..batch.num_steps {
            let k = &kicks[j * w..(j + 1) * w];
            for i in 0..nt {
                let c = scale * td.td[i];
                for d in 0..n {
                    cot[i * n + d] = c * k[i * n + d];
                }
            }
            let cache = match stored.next() {
                Some(c) => c,
                None => g.net.forward_cached(
                    g.params,
                    Times::Const(batch.times[j]),
                    batch.states_at(j),
                )?,
            };
            g.net
                .backward(g.params, &cache, &cot, &mut grad_g, None)
                .map_err(|e| match e {
                    Error::NonFiniteGradient { .. } => Error::NonFiniteGradient { step: Some(j) },
                    e => e,
                })?;
        }
    }
    Ok(CriticLossGrad {
        loss,
        td,
        grad_v0,
        grad_g,
        g_values,
    })
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Self { mean, stderr: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            stderr: (var / n).sqrt(),
        }
    }
}

/// Both sides of the Itô-isometry split of the critic loss, estimated
/// trajectory by trajectory on one batch:
/// `½E[TD²]` against `L₀ + L₁` with
/// `L₀ = ½(𝒱₀ − V_u(0,·))²(x₀)` and `L₁ = ½Σ_j |σᵀ(𝒢 − ∇ₓV_u)(t_j, x_j)|² h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossDecomposition {
    pub half_td_sq: Estimate,
    pub l0: Estimate,
    pub l1: Estimate,
    pub total: Estimate,
}

impl LossDecomposition {
    /// `√(se₁² + se₂²)` for the two sides.
    pub fn combined_stderr(&self) -> f64 {
        self.half_td_sq.stderr.hypot(self.total.stderr)
    }
}

pub fn loss_decomposition(
    prob: &dyn ControlProblem,
    v0: &dyn BatchFunction,
    g: &dyn BatchFunction,
    value_ref: &dyn BatchFunction,
    grad_ref: &dyn BatchFunction,
    batch: &TrajectoryBatch,
) -> Result<LossDecomposition> {
    check_shapes(prob, value_ref, Some(grad_ref), batch)?;
    let td = compute_td(prob, v0, g, batch)?;
    let (nt, n, m) = (batch.num_traj, batch.state_dim, batch.noise_dim);
    let mut vref = vec![0.0; nt];
    value_ref.eval(Times::Const(0.0), batch.initial_states(), &mut vref)?;
    let l0: Vec<f64> = (0..nt).map(|i| 0.5 * (td.v0[i] - vref[i]).powi(2)).collect();

    let mut l1 = vec![0.0; nt];
    let mut gv = vec![0.0; nt * n];
    let mut gr = vec![0.0; nt * n];
    let mut sigma = vec![0.0; n * m];
    for j in 0..batch.num_steps {
        let t = Times::Const(batch.times[j]);
        g.eval(t, batch.states_at(j), &mut gv)?;
        grad_ref.eval(t, batch.states_at(j), &mut gr)?;
        for (i, acc) in l1.iter_mut().enumerate() {
            prob.diffusion(batch.state(j, i), &mut sigma);
            let mut s = 0.0;
            for k in 0..m {
                let proj: f64 = (0..n)
                    .map(|d| sigma[d * m + k] * (gv[i * n + d] - gr[i * n + d]))
                    .sum();
                s += proj * proj;
            }
            *acc += 0.5 * s * batch.h;
        }
    }
    let half: Vec<f64> = td.td.iter().map(|d| 0.5 * d * d).collect();
    let total: Vec<f64> = l0.iter().zip(&l1).map(|(a, b)| a + b).collect();
    Ok(LossDecomposition {
        half_td_sq: Estimate::from_samples(&half),
        l0: Estimate::from_samples(&l0),
        l1: Estimate::from_samples(&l1),
        total: Estimate::from_samples(&total),
    })
}
