//! Crank–Nicolson solver for one-dimensional linear parabolic equations
//! integrated backward from a terminal condition:
//!
//! `V_t + ½σ²(x) V_xx + β(t,x) V_x + f(t,x) = 0`, `V(T, x) = g(x)`.
//!
//! This is the Hamilton–Jacobi equation of a fixed control in one dimension,
//! and the reduced equation behind the Aiyagari reference.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::ControlProblem;

pub type Coef1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type Coef2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// Period `x_max − x_min`.
    Periodic,
    /// Reflecting boundary, `V_x = 0` at both ends.
    ZeroFlux,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub num_cells: usize,
    pub num_steps: usize,
    pub horizon: f64,
    pub boundary: BoundaryCondition,
}

impl PdeGrid {
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.num_cells as f64
    }

    pub fn num_nodes(&self) -> usize {
        match self.boundary {
            BoundaryCondition::Periodic => self.num_cells,
            BoundaryCondition::ZeroFlux => self.num_cells + 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.x_max > self.x_min) {
            return Err(Error::param("grid", "x_max must exceed x_min"));
        }
        if self.num_cells < 3 || self.num_steps < 1 {
            return Err(Error::param("grid", "need at least 3 cells and 1 step"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::param("grid", "horizon must be positive"));
        }
        Ok(())
    }
}

/// Coefficients of the linear PDE.
#[derive(Clone)]
pub struct LinearPde1d {
    pub drift: Coef2,
    pub diffusion_sq: Coef1,
    pub source: Coef2,
    pub terminal: Coef1,
}

impl fmt::Debug for LinearPde1d {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("LinearPde1d { .. }")
    }
}

impl LinearPde1d {
    /// The Hamilton–Jacobi equation of a one-dimensional problem under the
    /// feedback control `control(t, x)`.
    pub fn for_control(
        prob: Arc<dyn ControlProblem>,
        control: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    ) -> Result<Self> {
        if prob.state_dim() != 1 || prob.control_dim() != 1 || prob.noise_dim() != 1 {
            return Err(Error::dims("linear PDE reference needs a 1d problem"));
        }
        let (p1, p2, p3, p4) = (prob.clone(), prob.clone(), prob.clone(), prob);
        let (c1, c2) = (control.clone(), control);
        Ok(Self {
            drift: Arc::new(move |t, x| {
                let mut b = [0.0];
                p1.drift(&[x], &[c1(t, x)], &mut b);
                b[0]
            }),
            diffusion_sq: Arc::new(move |x| {
                let mut s = [0.0];
                p2.diffusion(&[x], &mut s);
                s[0] * s[0]
            }),
            source: Arc::new(move |t, x| p3.running_cost(&[x], &[c2(t, x)]).unwrap_or(f64::NAN)),
            terminal: Arc::new(move |x| p4.terminal_cost(&[x])),
        })
    }

    pub fn solve(&self, grid: &PdeGrid) -> Result<PdeSolution> {
        grid.validate()?;
        let k = grid.num_nodes();
        let dx = grid.dx();
        let dt = grid.horizon / grid.num_steps as f64;
        let xs: Vec<f64> = (0..k).map(|i| grid.x_min + i as f64 * dx).collect();
        let periodic = grid.boundary == BoundaryCondition::Periodic;

        let s2: Vec<f64> = xs.iter().map(|&x| (self.diffusion_sq)(x)).collect();
        self.check_resolution(grid, &xs, &s2);

        let mut values = vec![0.0; (grid.num_steps + 1) * k];
        let last = grid.num_steps;
        for (i, &x) in xs.iter().enumerate() {
            values[last * k + i] = (self.terminal)(x);
        }

        let mut rhs = vec![0.0; k];
        let t_at = |n: usize| if n == last { grid.horizon } else { n as f64 * dt };
        let mut stencil_next = Stencil::new(k);
        let mut stencil = Stencil::new(k);
        self.operator(t_at(last), &xs, &s2, dx, periodic, &mut stencil_next);

        for n in (0..last).rev() {
            let (t, t_next) = (t_at(n), t_at(n + 1));
            self.operator(t, &xs, &s2, dx, periodic, &mut stencil);
            let (done, rest) = values.split_at_mut((n + 1) * k);
            let next = &rest[..k];
            let cur = &mut done[n * k..];
            for i in 0..k {
                let (im, ip) = neighbours(i, k, periodic);
                let sn = &stencil_next;
                let l_next = sn.lo[i] * next[im] + sn.di[i] * next[i] + sn.up[i] * next[ip];
                rhs[i] = next[i]
                    + 0.5 * dt * l_next
                    + 0.5 * dt * ((self.source)(t, xs[i]) + (self.source)(t_next, xs[i]));
            }
            // (I − ½Δt L) V^n = rhs, assembled into (sub, diag, super)
            let a: Vec<f64> = stencil.lo.iter().map(|v| -0.5 * dt * v).collect();
            let b: Vec<f64> = stencil.di.iter().map(|v| 1.0 - 0.5 * dt * v).collect();
            let c: Vec<f64> = stencil.up.iter().map(|v| -0.5 * dt * v).collect();
            let sol = if periodic {
                solve_cyclic(&a, &b, &c, &rhs)
            } else {
                solve_tridiagonal(&a, &b, &c, &rhs)
            };
            if let Some(bad) = sol.iter().position(|v| !v.is_finite()) {
                return Err(Error::param(
                    "pde",
                    format!("non-finite value at t = {t}, x = {}", xs[bad]),
                ));
            }
            cur[..k].copy_from_slice(&sol);
            std::mem::swap(&mut stencil, &mut stencil_next);
        }

        Ok(PdeSolution::new(*grid, values))
    }

    /// Central-difference stencil of `½σ² ∂ₓₓ + β ∂ₓ` at time `t`. For zero-flux
    /// boundaries the reflected ghost node is folded into the interior neighbour.
    fn operator(&self, t: f64, xs: &[f64], s2: &[f64], dx: f64, periodic: bool, st: &mut Stencil) {
        let k = xs.len();
        for i in 0..k {
            let a = 0.5 * s2[i] / (dx * dx);
            let c = (self.drift)(t, xs[i]) / (2.0 * dx);
            st.lo[i] = a - c;
            st.di[i] = -2.0 * a;
            st.up[i] = a + c;
        }
        if !periodic {
            // ghost V_{-1} = V_1 and V_{K+1} = V_{K-1}
            st.up[0] += st.lo[0];
            st.lo[0] = 0.0;
            st.lo[k - 1] += st.up[k - 1];
            st.up[k - 1] = 0.0;
        }
    }

    fn check_resolution(&self, grid: &PdeGrid, xs: &[f64], s2: &[f64]) {
        let dx = grid.dx();
        let mut worst: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            for t in [0.0, 0.5 * grid.horizon, grid.horizon] {
                let beta = (self.drift)(t, x).abs();
                let peclet = if beta == 0.0 {
                    0.0
                } else if s2[i] == 0.0 {
                    f64::INFINITY
                } else {
                    beta * dx / (0.5 * s2[i])
                };
                worst = worst.max(peclet);
            }
        }
        if worst > 2.0 {
            log::warn!(
                "PDE grid too coarse: cell Péclet number {worst:.2} > 2 (dx = {dx:.3e}); \
                 central differences may oscillate"
            );
        }
    }
}

/// Sub-, main- and super-diagonal weights of the spatial operator.
struct Stencil {
    lo: Vec<f64>,
    di: Vec<f64>,
    up: Vec<f64>,
}

impl Stencil {
    fn new(k: usize) -> Self {
        Self {
            lo: vec![0.0; k],
            di: vec![0.0; k],
            up: vec![0.0; k],
        }
    }
}

#[inline]
fn neighbours(i: usize, k: usize, periodic: bool) -> (usize, usize) {
    if periodic {
        ((i + k - 1) % k, (i + 1) % k)
    } else {
        // boundary rows carry zero weight on the missing side
        (i.saturating_sub(1), (i + 1).min(k - 1))
    }
}

/// Thomas algorithm; `a[0]` and `c[n-1]` are ignored.
fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], r: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut denom = b[0];
    cp[0] = c[0] / denom;
    x[0] = r[0] / denom;
    for i in 1..n {
        denom = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / denom;
        x[i] = (r[i] - a[i] * x[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        x[i] -= cp[i] * x[i + 1];
    }
    x
}

/// Cyclic tridiagonal solve (Sherman–Morrison); `a[0]` couples row 0 to the
/// last unknown and `c[n-1]` couples the last row to unknown 0.
fn solve_cyclic(a: &[f64], b: &[f64], c: &[f64], r: &[f64]) -> Vec<f64> {
    let n = b.len();
    let alpha = c[n - 1];
    let beta = a[0];
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] = b[0] - gamma;
    bb[n - 1] = b[n - 1] - alpha * beta / gamma;
    let x = solve_tridiagonal(a, &bb, c, r);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(a, &bb, c, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

/// Dense table `V(tₙ, xₖ)` with interpolating accessors.
#[derive(Debug, Clone)]
pub struct PdeSolution {
    grid: PdeGrid,
    values: Vec<f64>,
    gradients: Vec<f64>,
    second: Vec<f64>,
}

impl PdeSolution {
    fn new(grid: PdeGrid, values: Vec<f64>) -> Self {
        let k = grid.num_nodes();
        let dx = grid.dx();
        let periodic = grid.boundary == BoundaryCondition::Periodic;
        let mut gradients = vec![0.0; values.len()];
        let mut second = vec![0.0; values.len()];
        for n in 0..=grid.num_steps {
            let row = &values[n * k..(n + 1) * k];
            for i in 0..k {
                let (vm, vp) = if periodic {
                    (row[(i + k - 1) % k], row[(i + 1) % k])
                } else if i == 0 {
                    (row[1], row[1])
                } else if i == k - 1 {
                    (row[k - 2], row[k - 2])
                } else {
                    (row[i - 1], row[i + 1])
                };
                gradients[n * k + i] = (vp - vm) / (2.0 * dx);
                second[n * k + i] = (vp - 2.0 * row[i] + vm) / (dx * dx);
            }
        }
        Self {
            grid,
            values,
            gradients,
            second,
        }
    }

    pub fn grid(&self) -> &PdeGrid {
        &self.grid
    }

    pub fn num_nodes(&self) -> usize {
        self.grid.num_nodes()
    }

    pub fn node(&self, i: usize) -> f64 {
        self.grid.x_min + i as f64 * self.grid.dx()
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.grid.num_steps {
            self.grid.horizon
        } else {
            n as f64 * self.grid.horizon / self.grid.num_steps as f64
        }
    }

    /// Row `n` of the table (time `tₙ`).
    pub fn row(&self, n: usize) -> &[f64] {
        let k = self.num_nodes();
        &self.values[n * k..(n + 1) * k]
    }

    /// Cubic Hermite interpolation in space through the nodal values and
    /// slopes, linear in time.
    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.hermite(t, x).0
    }

    /// Exact `x`-derivative of [`PdeSolution::value`].
    pub fn gradient(&self, t: f64, x: f64) -> f64 {
        self.hermite(t, x).1
    }

    pub fn second_derivative(&self, t: f64, x: f64) -> f64 {
        self.interpolate(&self.second, t, x)
    }

    /// Backward difference in time between the two table rows around `t`.
    pub fn time_derivative(&self, t: f64, x: f64) -> f64 {
        let (n, _) = self.time_index(t);
        let dt = self.time(n + 1) - self.time(n);
        let k = self.num_nodes();
        let (i, w) = self.space_index(x);
        let ip = self.next_node(i);
        let at = |row: usize| {
            let r = &self.values[row * k..(row + 1) * k];
            (1.0 - w) * r[i] + w * r[ip]
        };
        (at(n + 1) - at(n)) / dt
    }

    fn time_index(&self, t: f64) -> (usize, f64) {
        let steps = self.grid.num_steps;
        let s = (t / self.grid.horizon * steps as f64).clamp(0.0, steps as f64);
        let n = (s.floor() as usize).min(steps - 1);
        (n, s - n as f64)
    }

    fn space_index(&self, x: f64) -> (usize, f64) {
        let dx = self.grid.dx();
        let k = self.num_nodes();
        match self.grid.boundary {
            BoundaryCondition::Periodic => {
                let period = self.grid.x_max - self.grid.x_min;
                let y = (x - self.grid.x_min).rem_euclid(period) / dx;
                let i = (y.floor() as usize).min(k - 1);
                (i, (y - i as f64).clamp(0.0, 1.0))
            }
            BoundaryCondition::ZeroFlux => {
                let y = ((x - self.grid.x_min) / dx).clamp(0.0, (k - 1) as f64);
                let i = (y.floor() as usize).min(k - 2);
                (i, y - i as f64)
            }
        }
    }

    fn next_node(&self, i: usize) -> usize {
        let k = self.num_nodes();
        match self.grid.boundary {
            BoundaryCondition::Periodic => (i + 1) % k,
            BoundaryCondition::ZeroFlux => (i + 1).min(k - 1),
        }
    }

    fn hermite(&self, t: f64, x: f64) -> (f64, f64) {
        let k = self.num_nodes();
        let dx = self.grid.dx();
        let (n, wt) = self.time_index(t);
        let (i, s) = self.space_index(x);
        let ip = self.next_node(i);
        let (s2, s3) = (s * s, s * s * s);
        let w = [2.0 * s3 - 3.0 * s2 + 1.0, s3 - 2.0 * s2 + s, -2.0 * s3 + 3.0 * s2, s3 - s2];
        let dw = [6.0 * s2 - 6.0 * s, 3.0 * s2 - 4.0 * s + 1.0, -6.0 * s2 + 6.0 * s, 3.0 * s2 - 2.0 * s];
        let at = |row: usize| {
            let (v, g) = (&self.values[row * k..], &self.gradients[row * k..]);
            let c = [v[i], dx * g[i], v[ip], dx * g[ip]];
            let val: f64 = w.iter().zip(&c).map(|(a, b)| a * b).sum();
            let der: f64 = dw.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / dx;
            (val, der)
        };
        let (a, b) = (at(n), at(n + 1));
        ((1.0 - wt) * a.0 + wt * b.0, (1.0 - wt) * a.1 + wt * b.1)
    }

    fn interpolate(&self, table: &[f64], t: f64, x: f64) -> f64 {
        let k = self.num_nodes();
        let (n, wt) = self.time_index(t);
        let (i, wx) = self.space_index(x);
        let ip = self.next_node(i);
        let at = |row: usize| {
            let r = &table[row * k..(row + 1) * k];
            (1.0 - wx) * r[i] + wx * r[ip]
        };
        (1.0 - wt) * at(n) + wt * at(n + 1)
    }

    /// Writes `t,x,value` rows for every table entry.
    pub fn write_csv<W: Write>(&self, mut w: W, x_label: &str, value_label: &str) -> Result<()> {
        writeln!(w, "t,{x_label},{value_label}")?;
        let k = self.num_nodes();
        for n in 0..=self.grid.num_steps {
            let t = self.time(n);
            for i in 0..k {
                writeln!(w, "{},{},{}", t, self.node(i), self.values[n * k + i])?;
            }
        }
        Ok(())
    }
}

/// Solves the Hamilton–Jacobi equation of a one-dimensional problem under a
/// fixed feedback control.
pub fn linear_pde_reference(
    prob: Arc<dyn ControlProblem>,
    control: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    grid: &PdeGrid,
) -> Result<PdeSolution> {
    LinearPde1d::for_control(prob, control)?.solve(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{lq_problem, AnalyticSolution, LqParams};
    use std::f64::consts::PI;

    fn lq_grid(cells: usize, steps: usize) -> PdeGrid {
        PdeGrid {
            x_min: 0.0,
            x_max: 2.0 * PI,
            num_cells: cells,
            num_steps: steps,
            horizon: 1.0,
            boundary: BoundaryCondition::Periodic,
        }
    }

    fn lq_max_error(cells: usize, steps: usize) -> f64 {
        let prob = Arc::new(lq_problem(LqParams::with_dim(1)).unwrap());
        let sol = prob.solution().clone();
        let s2 = sol.clone();
        let control = Arc::new(move |t: f64, x: f64| {
            let mut u = [0.0];
            s2.control(t, &[x], &mut u);
            u[0]
        });
        let table = linear_pde_reference(prob, control, &lq_grid(cells, steps)).unwrap();
        let mut worst: f64 = 0.0;
        for n in 0..=steps {
            let t = table.time(n);
            for (i, v) in table.row(n).iter().enumerate() {
                worst = worst.max((v - sol.value(t, &[table.node(i)])).abs());
            }
        }
        worst
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let pde = LinearPde1d {
            drift: Arc::new(|_, x| x.sin()),
            diffusion_sq: Arc::new(|_| 0.5),
            source: Arc::new(|_, _| 0.0),
            terminal: Arc::new(|_| 0.0),
        };
        let s = pde.solve(&lq_grid(50, 20)).unwrap();
        assert!(s.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pure_source_integrates_in_time() {
        let pde = LinearPde1d {
            drift: Arc::new(|_, _| 0.0),
            diffusion_sq: Arc::new(|_| 0.0),
            source: Arc::new(|_, x| 1.0 + x.cos()),
            terminal: Arc::new(|_| 0.0),
        };
        let s = pde.solve(&lq_grid(64, 10)).unwrap();
        for n in 0..=10 {
            let t = s.time(n);
            for (i, v) in s.row(n).iter().enumerate() {
                let want = (1.0 - t) * (1.0 + s.node(i).cos());
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lq_optimal_value_matches_closed_form() {
        let err = lq_max_error(400, 400);
        assert!(err < 1e-4, "max error {err}");
    }

    #[test]
    fn second_order_self_convergence() {
        let coarse = lq_max_error(50, 50);
        let fine = lq_max_error(100, 100);
        let ratio = coarse / fine;
        assert!((3.0..5.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn tridiagonal_solvers_agree_with_dense_products() {
        let n = 7;
        let a: Vec<f64> = (0..n).map(|i| 0.3 + 0.01 * i as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| 2.5 + 0.1 * i as f64).collect();
        let c: Vec<f64> = (0..n).map(|i| -0.4 + 0.02 * i as f64).collect();
        let r: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = solve_cyclic(&a, &b, &c, &r);
        for i in 0..n {
            let lhs = a[i] * x[(i + n - 1) % n] + b[i] * x[i] + c[i] * x[(i + 1) % n];
            assert!((lhs - r[i]).abs() < 1e-12);
        }
        let x = solve_tridiagonal(&a, &b, &c, &r);
        for i in 0..n {
            let mut lhs = b[i] * x[i];
            if i > 0 {
                lhs += a[i] * x[i - 1];
            }
            if i + 1 < n {
                lhs += c[i] * x[i + 1];
            }
            assert!((lhs - r[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let pde = LinearPde1d {
            drift: Arc::new(|_, _| 0.0),
            diffusion_sq: Arc::new(|_| 1.0),
            source: Arc::new(|_, _| 0.0),
            terminal: Arc::new(|x| x),
        };
        let grid = PdeGrid {
            x_min: 0.0,
            x_max: 1.0,
            num_cells: 4,
            num_steps: 2,
            horizon: 1.0,
            boundary: BoundaryCondition::ZeroFlux,
        };
        let s = pde.solve(&grid).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf, "z", "phi").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,z,phi\n"));
        assert_eq!(text.lines().count(), 1 + 3 * 5);
    }
}
