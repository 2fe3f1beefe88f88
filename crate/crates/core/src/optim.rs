//! Adam update directions and plain gradient steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Moment accumulators for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zero moments with the usual coefficients (0.9, 0.999, 1e-8).
    pub fn new(len: usize) -> Self {
        Self::with_coefficients(len, 0.9, 0.999, 1e-8)
    }

    pub fn with_coefficients(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step_count: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Updates the moments with `grad` and writes `m̂ / (√v̂ + eps)` into
    /// `direction`.
    pub fn direction_into(&mut self, grad: &[f64], direction: &mut [f64]) -> Result<()> {
        if grad.len() != self.m.len() || direction.len() != self.m.len() {
            return Err(Error::dims(format!(
                "gradient of length {} for optimizer state of length {}",
                grad.len(),
                self.m.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { step: None });
        }
        self.step_count += 1;
        let k = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(k);
        let c2 = 1.0 - self.beta2.powi(k);
        for i in 0..grad.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let denom = (self.v[i] / c2).sqrt() + self.eps;
            direction[i] = if denom > 0.0 { m_hat / denom } else { 0.0 };
        }
        Ok(())
    }

    /// Applies `params ← params − lr·Adam(grad)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        let mut dir = vec![0.0; grad.len()];
        self.direction_into(grad, &mut dir)?;
        if params.len() != dir.len() {
            return Err(Error::dims("parameter and gradient lengths differ"));
        }
        for (p, d) in params.iter_mut().zip(&dir) {
            *p -= lr * d;
        }
        Ok(())
    }
}

/// Returns the Adam direction and the updated state.
pub fn adam_direction(state: &AdamState, grad: &[f64]) -> Result<(Vec<f64>, AdamState)> {
    let mut next = state.clone();
    let mut dir = vec![0.0; grad.len()];
    next.direction_into(grad, &mut dir)?;
    Ok((dir, next))
}

/// `params ← params − lr·grad`.
pub fn gd_step(params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if params.len() != grad.len() {
        return Err(Error::dims("parameter and gradient lengths differ"));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { step: None });
    }
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_sign_without_eps() {
        let s = AdamState::with_coefficients(4, 0.9, 0.999, 0.0);
        let (d, s2) = adam_direction(&s, &[3.0, -0.01, 1e-7, -50.0]).unwrap();
        for (a, b) in d.iter().zip(&[1.0, -1.0, 1.0, -1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(s2.step_count, 1);
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn zero_gradient_gives_zero_direction() {
        let s = AdamState::with_coefficients(3, 0.9, 0.999, 0.0);
        let (d, _) = adam_direction(&s, &[0.0; 3]).unwrap();
        assert_eq!(d, vec![0.0; 3]);
        let (d, _) = adam_direction(&AdamState::new(3), &[0.0; 3]).unwrap();
        assert_eq!(d, vec![0.0; 3]);
    }

    #[test]
    fn rejects_bad_gradients() {
        let s = AdamState::new(2);
        assert!(adam_direction(&s, &[1.0]).is_err());
        assert!(adam_direction(&s, &[1.0, f64::NAN]).is_err());
        assert!(gd_step(&mut [0.0], &[f64::INFINITY], 0.1).is_err());
    }

    #[test]
    fn step_moves_against_gradient() {
        let mut s = AdamState::new(2);
        let mut p = vec![1.0, 1.0];
        s.step(&mut p, &[2.0, -2.0], 0.1).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] - 1.1).abs() < 1e-6);
        let mut q = vec![1.0];
        gd_step(&mut q, &[2.0], 0.25).unwrap();
        assert_eq!(q, vec![0.5]);
    }
}
