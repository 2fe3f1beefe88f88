#![allow(dead_code)]

use std::f64::consts::PI;

use acflow::func::Pointwise;
use acflow::problems::{ControlProblem, Domain};
use acflow::Result;

/// `b = k·u`, `σ = s·I`, `r = c + ½q|u|²`, `g ≡ g0` on the `n`-torus of
/// period 2π, with `n' = m = n`.
pub struct Toy {
    pub n: usize,
    pub sigma: f64,
    pub drift_gain: f64,
    pub r_const: f64,
    pub r_quad: f64,
    pub g_const: f64,
    pub horizon: f64,
    pub domain: Domain,
}

impl Toy {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            sigma: 0.0,
            drift_gain: 0.0,
            r_const: 0.0,
            r_quad: 0.0,
            g_const: 0.0,
            horizon: 1.0,
            domain: Domain::Torus { period: 2.0 * PI },
        }
    }
}

impl ControlProblem for Toy {
    fn name(&self) -> &str {
        "toy"
    }
    fn state_dim(&self) -> usize {
        self.n
    }
    fn control_dim(&self) -> usize {
        self.n
    }
    fn noise_dim(&self) -> usize {
        self.n
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn domain(&self) -> &Domain {
        &self.domain
    }
    fn drift(&self, _x: &[f64], u: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(u) {
            *o = self.drift_gain * v;
        }
    }
    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.n {
            out[i * self.n + i] = self.sigma;
        }
    }
    fn running_cost(&self, _x: &[f64], u: &[f64]) -> Result<f64> {
        Ok(self.r_const + 0.5 * self.r_quad * u.iter().map(|v| v * v).sum::<f64>())
    }
    fn terminal_cost(&self, _x: &[f64]) -> f64 {
        self.g_const
    }
    fn grad_u_drift(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.n {
            out[i * self.n + i] = self.drift_gain;
        }
    }
    fn grad_u_running_cost(&self, _x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, v) in out.iter_mut().zip(u) {
            *o = self.r_quad * v;
        }
        Ok(())
    }
    fn grad_x_drift(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn grad_x_diffusion_apply(&self, _x: &[f64], _xi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn grad_x_running_cost(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
    fn grad_x_terminal_cost(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn maximize_hamiltonian(&self, _x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, v) in out.iter_mut().zip(p) {
            *o = if self.r_quad > 0.0 {
                self.drift_gain * v / self.r_quad
            } else {
                0.0
            };
        }
        Ok(())
    }
}

pub fn constant(n: usize, value: Vec<f64>) -> Pointwise<impl Fn(f64, &[f64], &mut [f64]) + Sync> {
    let d = value.len();
    Pointwise::new(n, d, move |_t, _x: &[f64], o: &mut [f64]| o.copy_from_slice(&value))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn unit_direction(rng: &mut impl rand::Rng, len: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

pub fn shifted(p: &[f64], v: &[f64], eps: f64) -> Vec<f64> {
    p.iter().zip(v).map(|(a, b)| a + eps * b).collect()
}
