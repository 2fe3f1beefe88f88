//! Residual of the Hamilton–Jacobi–Bellman equation
//! `−∂ₜV + sup_u G(t, x, u, −∇ₓV, −∇ₓ²V) = 0`.

use crate::error::{Error, Result};
use crate::problems::{hamiltonian, AiyagariSolution, AnalyticSolution, ControlProblem, LqSolution};

const FD_STEP: f64 = 1e-4;

/// A value function with the derivatives the residual needs. Defaults use
/// central finite differences.
pub trait SmoothValue {
    fn value(&self, t: f64, x: &[f64]) -> f64;

    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        (self.value(t + FD_STEP, x) - self.value(t - FD_STEP, x)) / (2.0 * FD_STEP)
    }

    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let mut y = x.to_vec();
        for (k, o) in out.iter_mut().enumerate() {
            y[k] = x[k] + FD_STEP;
            let up = self.value(t, &y);
            y[k] = x[k] - FD_STEP;
            let down = self.value(t, &y);
            y[k] = x[k];
            *o = (up - down) / (2.0 * FD_STEP);
        }
    }

    /// Full `n × n` Hessian, row-major.
    fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let h = FD_STEP;
        let mut y = x.to_vec();
        let f0 = self.value(t, x);
        for i in 0..n {
            for j in i..n {
                let v = if i == j {
                    y[i] = x[i] + h;
                    let up = self.value(t, &y);
                    y[i] = x[i] - h;
                    let down = self.value(t, &y);
                    y[i] = x[i];
                    (up - 2.0 * f0 + down) / (h * h)
                } else {
                    let mut corner = |si: f64, sj: f64| {
                        y[i] = x[i] + si * h;
                        y[j] = x[j] + sj * h;
                        let v = self.value(t, &y);
                        y[i] = x[i];
                        y[j] = x[j];
                        v
                    };
                    (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0)
                        + corner(-1.0, -1.0))
                        / (4.0 * h * h)
                };
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
    }
}

impl SmoothValue for LqSolution {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        AnalyticSolution::value(self, t, x)
    }

    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        LqSolution::time_derivative(self, t, x)
    }

    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.grad_value(t, x, out);
    }

    fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let mut d = vec![0.0; n];
        self.hessian_diag(t, x, &mut d);
        out.fill(0.0);
        for i in 0..n {
            out[i * n + i] = d[i];
        }
    }
}

/// `V = φ(t, z) − a·k(t)`; `φ` derivatives come from the reference table.
impl SmoothValue for AiyagariSolution {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        AnalyticSolution::value(self, t, x)
    }

    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        self.phi().time_derivative(t, x[0]) - x[1] * self.asset_weight_derivative(t)
    }

    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.grad_value(t, x, out);
    }

    fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[0] = self.phi().second_derivative(t, x[0]);
    }
}

/// HJB residual at each `(t_k, x_k)`, with the supremum attained at the
/// problem's closed-form maximizer.
pub fn hjb_residual(
    prob: &dyn ControlProblem,
    value: &dyn SmoothValue,
    times: &[f64],
    xs: &[f64],
) -> Result<Vec<f64>> {
    let (n, nc) = (prob.state_dim(), prob.control_dim());
    if xs.len() != times.len() * n {
        return Err(Error::dims("one time per state is required"));
    }
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    let mut u = vec![0.0; nc];
    let mut out = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let x = &xs[k * n..(k + 1) * n];
        value.gradient(t, x, &mut grad);
        value.hessian(t, x, &mut hess);
        grad.iter_mut().for_each(|v| *v = -*v);
        hess.iter_mut().for_each(|v| *v = -*v);
        prob.maximize_hamiltonian(x, &grad, &mut u)?;
        let g = hamiltonian(prob, x, &u, &grad, Some(&hess))?;
        out.push(-value.time_derivative(t, x) + g);
    }
    Ok(out)
}
