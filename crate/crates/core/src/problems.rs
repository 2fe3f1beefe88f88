//! Control problems: the abstract interface plus the LQ-on-torus and
//! Aiyagari benchmark families.
//!
//! A problem supplies drift `b(x,u)`, diffusion `σ(x)` (`n × m`, row-major),
//! running cost `r(x,u)` and terminal cost `g(x)` together with the
//! derivatives the actor and the pathwise baseline need.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func::{check_batch, BatchFunction, Times};
use crate::eval::pde::{BoundaryCondition, LinearPde1d, PdeGrid, PdeSolution};

/// State space of a problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// `[0, period)^n` with periodic boundary.
    Torus { period: f64 },
    /// `R^n`; initial states are drawn uniformly from the box.
    Euclidean { init_low: Vec<f64>, init_high: Vec<f64> },
}

impl Domain {
    pub fn period(&self) -> Option<f64> {
        match self {
            Domain::Torus { period } => Some(*period),
            Domain::Euclidean { .. } => None,
        }
    }

    /// Per-axis `[low, high)` of the initial-state distribution.
    pub fn init_bounds(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Torus { period } => (vec![0.0; n], vec![*period; n]),
            Domain::Euclidean {
                init_low,
                init_high,
            } => (init_low.clone(), init_high.clone()),
        }
    }
}

/// Known optimal solution `(V*, ∇ₓV*, u*)` of a problem.
pub trait AnalyticSolution: Send + Sync {
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn grad_value(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn control(&self, t: f64, x: &[f64], out: &mut [f64]);
}

/// Which part of an [`AnalyticSolution`] a [`SolutionFn`] exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolutionPart {
    /// `V(t, x)`, one output.
    Value,
    /// `∇ₓV(t, x)`, `n` outputs.
    Gradient,
    /// `u*(t, x)`, `n'` outputs.
    Control,
}

/// An analytic solution component viewed as a [`BatchFunction`].
pub struct SolutionFn<'a> {
    pub solution: &'a dyn AnalyticSolution,
    pub part: SolutionPart,
    pub state_dim: usize,
    pub control_dim: usize,
}

impl<'a> SolutionFn<'a> {
    pub fn new(prob: &'a dyn ControlProblem, part: SolutionPart) -> Result<Self> {
        let solution = prob
            .analytic()
            .ok_or_else(|| Error::MissingReference(prob.name().to_string()))?;
        Ok(Self {
            solution,
            part,
            state_dim: prob.state_dim(),
            control_dim: prob.control_dim(),
        })
    }
}

impl BatchFunction for SolutionFn<'_> {
    fn input_dim(&self) -> usize {
        self.state_dim
    }

    fn output_dim(&self) -> usize {
        match self.part {
            SolutionPart::Value => 1,
            SolutionPart::Gradient => self.state_dim,
            SolutionPart::Control => self.control_dim,
        }
    }

    fn eval(&self, times: Times<'_>, xs: &[f64], out: &mut [f64]) -> Result<()> {
        let (n, d) = (self.state_dim, self.output_dim());
        let rows = check_batch(n, d, xs, out)?;
        times.check_rows(rows)?;
        for r in 0..rows {
            let x = &xs[r * n..(r + 1) * n];
            let o = &mut out[r * d..(r + 1) * d];
            let t = times.at(r);
            match self.part {
                SolutionPart::Value => o[0] = self.solution.value(t, x),
                SolutionPart::Gradient => self.solution.grad_value(t, x, o),
                SolutionPart::Control => self.solution.control(t, x, o),
            }
        }
        Ok(())
    }
}

/// A finite-horizon stochastic control problem with control-independent noise.
pub trait ControlProblem: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn horizon(&self) -> f64;
    fn domain(&self) -> &Domain;

    fn drift(&self, x: &[f64], u: &[f64], out: &mut [f64]);
    /// `σ(x)` as an `n × m` row-major matrix.
    fn diffusion(&self, x: &[f64], out: &mut [f64]);
    fn running_cost(&self, x: &[f64], u: &[f64]) -> Result<f64>;
    fn terminal_cost(&self, x: &[f64]) -> f64;

    /// `∇ᵤb` as an `n × n'` row-major matrix.
    fn grad_u_drift(&self, x: &[f64], u: &[f64], out: &mut [f64]);
    fn grad_u_running_cost(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()>;

    /// `∇ₓb` as an `n × n` row-major matrix, entry `(i, k) = ∂bᵢ/∂xₖ`.
    fn grad_x_drift(&self, x: &[f64], u: &[f64], out: &mut [f64]);
    /// Jacobian in `x` of `σ(x)ξ` for a fixed increment `ξ`, `n × n` row-major.
    fn grad_x_diffusion_apply(&self, x: &[f64], xi: &[f64], out: &mut [f64]);
    fn grad_x_running_cost(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()>;
    fn grad_x_terminal_cost(&self, x: &[f64], out: &mut [f64]);

    /// `argmax_u ⟨p, b(x,u)⟩ − r(x,u)`, used for HJB residuals.
    fn maximize_hamiltonian(&self, x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()>;

    fn analytic(&self) -> Option<&dyn AnalyticSolution> {
        None
    }

    /// `σ(x)ξ`.
    fn diffusion_apply(&self, x: &[f64], xi: &[f64], out: &mut [f64]) {
        let (n, m) = (self.state_dim(), self.noise_dim());
        let mut sigma = vec![0.0; n * m];
        self.diffusion(x, &mut sigma);
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = (0..m).map(|k| sigma[i * m + k] * xi[k]).sum();
        }
    }
}

/// Generalized Hamiltonian `½Tr(Pσσᵀ) + ⟨p, b⟩ − r`. `hessian_term` is the
/// `n × n` matrix `P`; pass `None` when it is zero.
pub fn hamiltonian(
    prob: &dyn ControlProblem,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    hessian_term: Option<&[f64]>,
) -> Result<f64> {
    let (n, m) = (prob.state_dim(), prob.noise_dim());
    let mut b = vec![0.0; n];
    prob.drift(x, u, &mut b);
    let mut value = dot(p, &b) - prob.running_cost(x, u)?;
    if let Some(pm) = hessian_term {
        let mut sigma = vec![0.0; n * m];
        prob.diffusion(x, &mut sigma);
        // Tr(P σσᵀ) = Σ_{i,j} P_ij (σσᵀ)_ji
        let mut trace = 0.0;
        for i in 0..n {
            for j in 0..n {
                let ss: f64 = (0..m).map(|k| sigma[j * m + k] * sigma[i * m + k]).sum();
                trace += pm[i * n + j] * ss;
            }
        }
        value += 0.5 * trace;
    }
    Ok(value)
}

/// `∇ᵤG(x, u, p) = ∇ᵤb(x,u)ᵀ p − ∇ᵤr(x,u)`. The second-order argument of
/// the Hamiltonian drops out because the diffusion ignores the control.
pub fn grad_u_hamiltonian(
    prob: &dyn ControlProblem,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let (n, nc) = (prob.state_dim(), prob.control_dim());
    if x.len() != n || p.len() != n || u.len() != nc || out.len() != nc {
        return Err(Error::dims("grad_u_hamiltonian argument shapes"));
    }
    let mut jac = vec![0.0; n * nc];
    prob.grad_u_drift(x, u, &mut jac);
    prob.grad_u_running_cost(x, u, out)?;
    for (k, o) in out.iter_mut().enumerate() {
        let bt_p: f64 = (0..n).map(|i| jac[i * nc + k] * p[i]).sum();
        *o = bt_p - *o;
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// LQ on the torus [0, 2π)^n

/// Parameters of the LQ benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqParams {
    pub n: usize,
    /// `(β₀, β₁, …, βₙ)`.
    pub beta: Vec<f64>,
    pub sigma_bar: f64,
    pub horizon: f64,
}

impl LqParams {
    /// Default coefficients: `σ̄ = 1`, `β₀ = 0.5`, `βᵢ = 0.4/√n`, `T = 1`.
    pub fn with_dim(n: usize) -> Self {
        let bi = 0.4 / (n as f64).sqrt();
        let mut beta = vec![bi; n + 1];
        beta[0] = 0.5;
        Self {
            n,
            beta,
            sigma_bar: 1.0,
            horizon: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        if self.beta.len() != self.n + 1 {
            return Err(Error::param(
                "beta",
                format!("expected {} entries, got {}", self.n + 1, self.beta.len()),
            ));
        }
        if !(self.sigma_bar > 0.0) {
            return Err(Error::param("sigma_bar", "must be positive"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::param("horizon", "must be positive"));
        }
        Ok(())
    }
}

/// `b(x,u) = u`, `σ = σ̄I`, `r = ½|u|² + r̃(x)`, `g(x) = Σβᵢ sin xᵢ`.
#[derive(Debug, Clone)]
pub struct LqProblem {
    params: LqParams,
    domain: Domain,
    solution: LqSolution,
}

/// Closed-form solution `V*(t,x) = β₀(T−t) + Σβᵢ sin xᵢ`, `u* = −∇ₓV*`.
#[derive(Debug, Clone)]
pub struct LqSolution {
    beta: Vec<f64>,
    horizon: f64,
}

impl LqSolution {
    pub fn time_derivative(&self, _t: f64, _x: &[f64]) -> f64 {
        -self.beta[0]
    }

    /// Diagonal of the Hessian; off-diagonal entries vanish.
    pub fn hessian_diag(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = -self.beta[i + 1] * x[i].sin();
        }
    }
}

impl AnalyticSolution for LqSolution {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.beta[0] * (self.horizon - t)
            + x.iter()
                .zip(&self.beta[1..])
                .map(|(xi, b)| b * xi.sin())
                .sum::<f64>()
    }

    fn grad_value(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.beta[i + 1] * x[i].cos();
        }
    }

    fn control(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.grad_value(t, x, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }
}

impl LqProblem {
    pub fn new(params: LqParams) -> Result<Self> {
        params.validate()?;
        let solution = LqSolution {
            beta: params.beta.clone(),
            horizon: params.horizon,
        };
        Ok(Self {
            params,
            domain: Domain::Torus { period: 2.0 * PI },
            solution,
        })
    }

    pub fn params(&self) -> &LqParams {
        &self.params
    }

    pub fn solution(&self) -> &LqSolution {
        &self.solution
    }

    /// `r̃(x) = β₀ + ½Σ(σ̄²βᵢ sin xᵢ + βᵢ² cos² xᵢ)`.
    pub fn state_cost(&self, x: &[f64]) -> f64 {
        let s2 = self.params.sigma_bar * self.params.sigma_bar;
        let b = &self.params.beta;
        b[0] + 0.5
            * x.iter()
                .zip(&b[1..])
                .map(|(xi, bi)| {
                    let c = xi.cos();
                    s2 * bi * xi.sin() + bi * bi * c * c
                })
                .sum::<f64>()
    }
}

impl ControlProblem for LqProblem {
    fn name(&self) -> &str {
        "lq"
    }
    fn state_dim(&self) -> usize {
        self.params.n
    }
    fn control_dim(&self) -> usize {
        self.params.n
    }
    fn noise_dim(&self) -> usize {
        self.params.n
    }
    fn horizon(&self) -> f64 {
        self.params.horizon
    }
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn drift(&self, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(u);
    }

    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        let n = self.params.n;
        out.fill(0.0);
        for i in 0..n {
            out[i * n + i] = self.params.sigma_bar;
        }
    }

    fn diffusion_apply(&self, _x: &[f64], xi: &[f64], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(xi) {
            *o = self.params.sigma_bar * w;
        }
    }

    fn running_cost(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        Ok(0.5 * dot(u, u) + self.state_cost(x))
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.params.beta[1..])
            .map(|(xi, b)| b * xi.sin())
            .sum()
    }

    fn grad_u_drift(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        let n = self.params.n;
        out.fill(0.0);
        for i in 0..n {
            out[i * n + i] = 1.0;
        }
    }

    fn grad_u_running_cost(&self, _x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(u);
        Ok(())
    }

    fn grad_x_drift(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn grad_x_diffusion_apply(&self, _x: &[f64], _xi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn grad_x_running_cost(&self, x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<()> {
        let s2 = self.params.sigma_bar * self.params.sigma_bar;
        for (i, o) in out.iter_mut().enumerate() {
            let b = self.params.beta[i + 1];
            let (s, c) = x[i].sin_cos();
            *o = 0.5 * s2 * b * c - b * b * c * s;
        }
        Ok(())
    }

    fn grad_x_terminal_cost(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.params.beta[i + 1] * x[i].cos();
        }
    }

    fn maximize_hamiltonian(&self, _x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(p);
        Ok(())
    }

    fn analytic(&self) -> Option<&dyn AnalyticSolution> {
        Some(&self.solution)
    }
}

// ---------------------------------------------------------------------------
// Aiyagari growth model in (z, a)

/// `scale · exp(rate · z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tiredness {
    pub scale: f64,
    pub rate: f64,
}

impl Tiredness {
    pub fn value(&self, z: f64) -> f64 {
        self.scale * (self.rate * z).exp()
    }

    pub fn derivative(&self, z: f64) -> f64 {
        self.scale * self.rate * (self.rate * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AiyagariParams {
    /// Tax rate.
    pub alpha: f64,
    /// Capital depreciation rate.
    pub delta: f64,
    pub sigma_z: f64,
    pub sigma_a: f64,
    pub tiredness_r: Tiredness,
    pub tiredness_g: Tiredness,
    pub horizon: f64,
    pub init_low: [f64; 2],
    pub init_high: [f64; 2],
}

impl Default for AiyagariParams {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            delta: 0.05,
            sigma_z: 1.0,
            sigma_a: 0.1,
            tiredness_r: Tiredness {
                scale: 0.1,
                rate: 0.1,
            },
            tiredness_g: Tiredness {
                scale: 0.2,
                rate: 0.2,
            },
            horizon: 1.0,
            init_low: [0.0, 0.0],
            init_high: [2.0, 2.0],
        }
    }
}

impl AiyagariParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_z > 0.0) {
            return Err(Error::param("sigma_z", "must be positive"));
        }
        if !(self.sigma_a >= 0.0) {
            return Err(Error::param("sigma_a", "must be non-negative"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::param("horizon", "must be positive"));
        }
        if !(self.alpha.is_finite() && self.delta.is_finite()) {
            return Err(Error::param("alpha/delta", "must be finite"));
        }
        for k in 0..2 {
            if !(self.init_high[k] > self.init_low[k]) {
                return Err(Error::param("init box", "high must exceed low"));
            }
        }
        Ok(())
    }

    /// `e^{(α−δ)(T−t)}`, the marginal value of one unit of assets at time `t`.
    pub fn asset_weight(&self, t: f64) -> f64 {
        ((self.alpha - self.delta) * (self.horizon - t)).exp()
    }
}

/// Grid used for the reduced reference PDE in `z`.
#[derive(Debug, Clone, Copy)]
pub struct AiyagariReferenceGrid {
    pub z_min: f64,
    pub z_max: f64,
    pub num_cells: usize,
    pub num_steps: usize,
}

impl Default for AiyagariReferenceGrid {
    fn default() -> Self {
        Self {
            z_min: -2.0,
            z_max: 4.0,
            num_cells: 600,
            num_steps: 400,
        }
    }
}

/// Optimal solution built from the ansatz `V = φ(t,z) − a·k(t)` with
/// `k(t) = e^{(α−δ)(T−t)}`: the optimal consumption is `c* = 1/k(t)` and `φ`
/// solves a linear parabolic PDE in `z`, integrated by Crank–Nicolson.
#[derive(Debug, Clone)]
pub struct AiyagariSolution {
    params: AiyagariParams,
    phi: PdeSolution,
}

impl AiyagariSolution {
    pub fn solve(params: &AiyagariParams, grid: AiyagariReferenceGrid) -> Result<Self> {
        let pde = aiyagari_reduced_pde(params);
        let pgrid = PdeGrid {
            x_min: grid.z_min,
            x_max: grid.z_max,
            num_cells: grid.num_cells,
            num_steps: grid.num_steps,
            horizon: params.horizon,
            boundary: BoundaryCondition::ZeroFlux,
        };
        let phi = pde.solve(&pgrid)?;
        Ok(Self {
            params: params.clone(),
            phi,
        })
    }

    /// `dk/dt = −(α−δ)k` for the asset weight `k(t)`.
    pub fn asset_weight_derivative(&self, t: f64) -> f64 {
        -(self.params.alpha - self.params.delta) * self.params.asset_weight(t)
    }

    /// The reduced value `φ(t, ·)` table.
    pub fn phi(&self) -> &PdeSolution {
        &self.phi
    }
}

impl AnalyticSolution for AiyagariSolution {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.phi.value(t, x[0]) - x[1] * self.params.asset_weight(t)
    }

    fn grad_value(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = self.phi.gradient(t, x[0]);
        out[1] = -self.params.asset_weight(t);
    }

    fn control(&self, t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0 / self.params.asset_weight(t);
    }
}

/// The linear PDE for `φ`:
/// `φ_t + ½σ_z² φ_zz − (z−1) φ_z + [1 + ln k − (1−α) z k + r(z)] = 0`,
/// `φ(T, z) = g(z)`.
pub fn aiyagari_reduced_pde(params: &AiyagariParams) -> LinearPde1d {
    let p = params.clone();
    let tr = params.tiredness_r;
    let tg = params.tiredness_g;
    let s2 = params.sigma_z * params.sigma_z;
    LinearPde1d {
        drift: Arc::new(|_t, z| -(z - 1.0)),
        diffusion_sq: Arc::new(move |_z| s2),
        source: Arc::new(move |t, z| {
            let k = p.asset_weight(t);
            1.0 + k.ln() - (1.0 - p.alpha) * z * k + tr.value(z)
        }),
        terminal: Arc::new(move |z| tg.value(z)),
    }
}

/// State `(z, a)`, control consumption `c > 0`.
#[derive(Debug, Clone)]
pub struct AiyagariProblem {
    params: AiyagariParams,
    domain: Domain,
    solution: AiyagariSolution,
}

impl AiyagariProblem {
    pub fn new(params: AiyagariParams) -> Result<Self> {
        Self::with_reference_grid(params, AiyagariReferenceGrid::default())
    }

    pub fn with_reference_grid(params: AiyagariParams, grid: AiyagariReferenceGrid) -> Result<Self> {
        params.validate()?;
        let solution = AiyagariSolution::solve(&params, grid)?;
        Ok(Self {
            domain: Domain::Euclidean {
                init_low: params.init_low.to_vec(),
                init_high: params.init_high.to_vec(),
            },
            params,
            solution,
        })
    }

    pub fn params(&self) -> &AiyagariParams {
        &self.params
    }

    pub fn solution(&self) -> &AiyagariSolution {
        &self.solution
    }
}

fn positive_control(c: f64) -> Result<f64> {
    if c > 0.0 {
        Ok(c)
    } else {
        Err(Error::ControlDomain(format!(
            "consumption must be positive, got {c}"
        )))
    }
}

impl ControlProblem for AiyagariProblem {
    fn name(&self) -> &str {
        "aiyagari"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn horizon(&self) -> f64 {
        self.params.horizon
    }
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn drift(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let p = &self.params;
        out[0] = -(x[0] - 1.0);
        out[1] = (1.0 - p.alpha) * x[0] + (p.alpha - p.delta) * x[1] - u[0];
    }

    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.params.sigma_z;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = self.params.sigma_a * x[1];
    }

    fn diffusion_apply(&self, x: &[f64], xi: &[f64], out: &mut [f64]) {
        out[0] = self.params.sigma_z * xi[0];
        out[1] = self.params.sigma_a * x[1] * xi[1];
    }

    fn running_cost(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        let c = positive_control(u[0])?;
        Ok(-c.ln() + self.params.tiredness_r.value(x[0]))
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        self.params.tiredness_g.value(x[0]) - x[1]
    }

    fn grad_u_drift(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = -1.0;
    }

    fn grad_u_running_cost(&self, _x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = -1.0 / positive_control(u[0])?;
        Ok(())
    }

    fn grad_x_drift(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        let p = &self.params;
        out.copy_from_slice(&[-1.0, 0.0, 1.0 - p.alpha, p.alpha - p.delta]);
    }

    fn grad_x_diffusion_apply(&self, _x: &[f64], xi: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[0.0, 0.0, 0.0, self.params.sigma_a * xi[1]]);
    }

    fn grad_x_running_cost(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        positive_control(u[0])?;
        out[0] = self.params.tiredness_r.derivative(x[0]);
        out[1] = 0.0;
        Ok(())
    }

    fn grad_x_terminal_cost(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.params.tiredness_g.derivative(x[0]);
        out[1] = -1.0;
    }

    fn maximize_hamiltonian(&self, _x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        // c ↦ −p_a c + ln c is bounded above only when p_a > 0.
        if p[1] > 0.0 {
            out[0] = 1.0 / p[1];
            Ok(())
        } else {
            Err(Error::ControlDomain(format!(
                "Hamiltonian unbounded in c for costate p_a = {}",
                p[1]
            )))
        }
    }

    fn analytic(&self) -> Option<&dyn AnalyticSolution> {
        Some(&self.solution)
    }
}

/// Builds the LQ benchmark.
pub fn lq_problem(params: LqParams) -> Result<LqProblem> {
    LqProblem::new(params)
}

/// Builds the Aiyagari benchmark, including its PDE-based reference.
pub fn aiyagari_problem(params: AiyagariParams) -> Result<AiyagariProblem> {
    AiyagariProblem::new(params)
}
