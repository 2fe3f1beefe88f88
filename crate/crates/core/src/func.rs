//! Batched function evaluation shared by policies, critics and references.

use crate::error::{Error, Result};

/// Time coordinate for a batch of states: either one time for every row or
/// one time per row.
#[derive(Debug, Clone, Copy)]
pub enum Times<'a> {
    Const(f64),
    PerRow(&'a [f64]),
}

impl Times<'_> {
    #[inline]
    pub fn at(&self, row: usize) -> f64 {
        match self {
            Times::Const(t) => *t,
            Times::PerRow(ts) => ts[row],
        }
    }

    pub(crate) fn check_rows(&self, rows: usize) -> Result<()> {
        match self {
            Times::PerRow(ts) if ts.len() != rows => Err(Error::dims(format!(
                "{} times for {} rows",
                ts.len(),
                rows
            ))),
            _ => Ok(()),
        }
    }
}

/// A vector field `(t, x) -> R^d` evaluated over a batch of row-major states.
///
/// Policies, critic networks and analytic references all implement this so
/// the sampler, the TD machinery and the metrics can treat them uniformly.
pub trait BatchFunction: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Writes `rows × output_dim` values into `out`, where `rows = xs.len() / input_dim`.
    fn eval(&self, times: Times<'_>, xs: &[f64], out: &mut [f64]) -> Result<()>;

    /// Identifies the parameters behind the function, when it has any.
    fn fingerprint(&self) -> Option<u64> {
        None
    }

    fn eval_point(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.eval(Times::Const(t), x, &mut out)?;
        Ok(out)
    }
}

/// Adapts a pointwise closure `(t, x, out)` into a [`BatchFunction`].
pub struct Pointwise<F> {
    input_dim: usize,
    output_dim: usize,
    f: F,
}

impl<F> Pointwise<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    pub fn new(input_dim: usize, output_dim: usize, f: F) -> Self {
        Self {
            input_dim,
            output_dim,
            f,
        }
    }
}

impl<F> BatchFunction for Pointwise<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn eval(&self, times: Times<'_>, xs: &[f64], out: &mut [f64]) -> Result<()> {
        let rows = check_batch(self.input_dim, self.output_dim, xs, out)?;
        times.check_rows(rows)?;
        for r in 0..rows {
            let x = &xs[r * self.input_dim..(r + 1) * self.input_dim];
            let o = &mut out[r * self.output_dim..(r + 1) * self.output_dim];
            (self.f)(times.at(r), x, o);
        }
        Ok(())
    }
}

/// The function that is identically zero.
pub struct Zero {
    pub input_dim: usize,
    pub output_dim: usize,
}

impl BatchFunction for Zero {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn eval(&self, _times: Times<'_>, xs: &[f64], out: &mut [f64]) -> Result<()> {
        check_batch(self.input_dim, self.output_dim, xs, out)?;
        out.fill(0.0);
        Ok(())
    }
}

/// Validates batch shapes and returns the number of rows.
pub(crate) fn check_batch(
    input_dim: usize,
    output_dim: usize,
    xs: &[f64],
    out: &[f64],
) -> Result<usize> {
    if input_dim == 0 || xs.len() % input_dim != 0 {
        return Err(Error::dims(format!(
            "input length {} is not a multiple of {}",
            xs.len(),
            input_dim
        )));
    }
    let rows = xs.len() / input_dim;
    if out.len() != rows * output_dim {
        return Err(Error::dims(format!(
            "output length {} != {} rows × {}",
            out.len(),
            rows,
            output_dim
        )));
    }
    Ok(rows)
}
