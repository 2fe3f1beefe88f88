//! Function approximators for the critic pair `(𝒱₀, 𝒢)` and the policy.
//!
//! Inputs `(t, x)` are mapped to features (trigonometric on the torus, raw
//! coordinates otherwise, plus `t/T` when time is an input), passed through an
//! affine layer, a stack of residual blocks
//! `y ← y + W₂·relu(W₁y + b₁) + b₂`, and an affine head. Gradients are exact
//! reverse-mode derivatives computed over whole batches.

mod checkpoint;
mod linalg;

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut, Range};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func::{check_batch, BatchFunction, Times};
use linalg::{add_column_sums, broadcast_rows, gemm};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, NamedParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputKind {
    /// Trigonometric features with `num_freq` harmonics per coordinate.
    Torus { period: f64, num_freq: usize },
    Euclidean,
}

/// Map applied to the head output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputTransform {
    #[default]
    Identity,
    /// `ln(1 + eᶻ)`, keeps outputs strictly positive.
    Softplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub input: InputKind,
    pub state_dim: usize,
    pub include_time: bool,
    /// Time inputs are scaled to `t / horizon`.
    pub horizon: f64,
    pub hidden_width: usize,
    pub num_blocks: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub output_transform: OutputTransform,
}

impl NetworkArch {
    pub fn feature_dim(&self) -> usize {
        let base = match self.input {
            InputKind::Torus { num_freq, .. } => 2 * num_freq * self.state_dim,
            InputKind::Euclidean => self.state_dim,
        };
        base + usize::from(self.include_time)
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.output_dim == 0 || self.hidden_width == 0 {
            return Err(Error::param("arch", "dimensions must be positive"));
        }
        if let InputKind::Torus { period, num_freq } = self.input {
            if num_freq == 0 {
                return Err(Error::param("num_freq", "must be at least 1"));
            }
            if !(period > 0.0) {
                return Err(Error::param("period", "must be positive"));
            }
        }
        if self.include_time && !(self.horizon > 0.0) {
            return Err(Error::param("horizon", "must be positive"));
        }
        Ok(())
    }
}

/// Flat parameter storage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self ← self + alpha·other`.
    pub fn axpy(&mut self, alpha: f64, other: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += alpha * b;
        }
    }

    /// Hash of the exact bit patterns.
    pub fn fingerprint(&self) -> u64 {
        fingerprint(&self.0)
    }
}

pub(crate) fn fingerprint(values: &[f64]) -> u64 {
    // FNV-1a over the little-endian bytes
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Location of one affine layer inside a [`ParamVector`]. Weights are stored
/// row-major as `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlot {
    pub name: String,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// Sine/cosine features: for each coordinate `i` and harmonic `k = 1..=M`,
/// the pair `(sin(2πk xᵢ/P), cos(2πk xᵢ/P))`.
pub fn trig_features(x: &[f64], num_freq: usize, period: f64) -> Vec<f64> {
    let mut out = vec![0.0; 2 * num_freq * x.len()];
    write_trig_features(x, num_freq, period, &mut out);
    out
}

fn write_trig_features(x: &[f64], num_freq: usize, period: f64, out: &mut [f64]) {
    let base = 2.0 * PI / period;
    for (i, &xi) in x.iter().enumerate() {
        let (s1, c1) = (base * xi).sin_cos();
        let (mut s, mut c) = (s1, c1);
        let o = &mut out[2 * num_freq * i..2 * num_freq * (i + 1)];
        for k in 0..num_freq {
            o[2 * k] = s;
            o[2 * k + 1] = c;
            // angle addition for the next harmonic
            let sn = s * c1 + c * s1;
            c = c * c1 - s * s1;
            s = sn;
        }
    }
}

/// Activations retained by a forward pass for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    rows: usize,
    states: Vec<f64>,
    features: Vec<f64>,
    block_inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    last_hidden: Vec<f64>,
    raw_output: Vec<f64>,
    /// `rows × output_dim` network output.
    pub output: Vec<f64>,
}

impl ForwardCache {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// A network of a fixed architecture; parameters are passed separately.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: NetworkArch,
    layers: Vec<LayerSlot>,
    num_params: usize,
}

impl Network {
    pub fn new(arch: NetworkArch) -> Result<Self> {
        arch.validate()?;
        let w = arch.hidden_width;
        let mut dims = vec![("input".to_string(), arch.feature_dim(), w)];
        for b in 0..arch.num_blocks {
            dims.push((format!("block{b}.inner"), w, w));
            dims.push((format!("block{b}.outer"), w, w));
        }
        dims.push(("head".to_string(), w, arch.output_dim));
        let mut offset = 0;
        let layers = dims
            .into_iter()
            .map(|(name, fan_in, fan_out)| {
                let weight = offset..offset + fan_in * fan_out;
                let bias = weight.end..weight.end + fan_out;
                offset = bias.end;
                LayerSlot {
                    name,
                    weight,
                    bias,
                    fan_in,
                    fan_out,
                }
            })
            .collect();
        Ok(Self {
            arch,
            layers,
            num_params: offset,
        })
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerSlot] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn input_dim(&self) -> usize {
        self.arch.state_dim
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    /// Uniform initialization on `±1/√fan_in` for every weight and bias.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.num_params];
        for l in &self.layers {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            for v in &mut p[l.weight.start..l.bias.end] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        ParamVector(p)
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params {
            return Err(Error::dims(format!(
                "{} parameters for a network with {}",
                params.len(),
                self.num_params
            )));
        }
        Ok(())
    }

    /// Feature rows for a batch.
    pub fn features(&self, times: Times<'_>, xs: &[f64]) -> Result<Vec<f64>> {
        let n = self.arch.state_dim;
        let rows = check_batch(n, 0, xs, &[])?;
        times.check_rows(rows)?;
        let fd = self.arch.feature_dim();
        let mut f = vec![0.0; rows * fd];
        for r in 0..rows {
            let x = &xs[r * n..(r + 1) * n];
            let row = &mut f[r * fd..(r + 1) * fd];
            match self.arch.input {
                InputKind::Torus { period, num_freq } => {
                    write_trig_features(x, num_freq, period, row)
                }
                InputKind::Euclidean => row[..n].copy_from_slice(x),
            }
            if self.arch.include_time {
                row[fd - 1] = times.at(r) / self.arch.horizon;
            }
        }
        Ok(f)
    }

    pub fn forward(&self, params: &[f64], times: Times<'_>, xs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(params, times, xs)?.output)
    }

    /// Approximate heap size of a [`ForwardCache`] over `rows` inputs.
    pub fn cache_bytes(&self, rows: usize) -> usize {
        let a = &self.arch;
        let per_row = a.state_dim
            + a.feature_dim()
            + a.hidden_width * (2 * a.num_blocks + 1)
            + 2 * a.output_dim;
        per_row * rows * std::mem::size_of::<f64>()
    }

    pub fn forward_cached(
        &self,
        params: &[f64],
        times: Times<'_>,
        xs: &[f64],
    ) -> Result<ForwardCache> {
        self.check_params(params)?;
        let features = self.features(times, xs)?;
        let rows = xs.len() / self.arch.state_dim;
        let w = self.arch.hidden_width;
        let fd = self.arch.feature_dim();

        let input = &self.layers[0];
        let mut y = vec![0.0; rows * w];
        broadcast_rows(&params[input.bias.clone()], rows, &mut y);
        gemm(rows, fd, w, &features, false, &params[input.weight.clone()], false, 1.0, &mut y);

        let mut block_inputs = Vec::with_capacity(self.arch.num_blocks);
        let mut pre_activations = Vec::with_capacity(self.arch.num_blocks);
        let mut act = vec![0.0; rows * w];
        for b in 0..self.arch.num_blocks {
            let (inner, outer) = (&self.layers[1 + 2 * b], &self.layers[2 + 2 * b]);
            let mut z = vec![0.0; rows * w];
            broadcast_rows(&params[inner.bias.clone()], rows, &mut z);
            gemm(rows, w, w, &y, false, &params[inner.weight.clone()], false, 1.0, &mut z);
            for (a, zv) in act.iter_mut().zip(&z) {
                *a = zv.max(0.0);
            }
            let mut next = y.clone();
            let b2 = &params[outer.bias.clone()];
            for r in next.chunks_exact_mut(w) {
                for (v, bb) in r.iter_mut().zip(b2) {
                    *v += bb;
                }
            }
            gemm(rows, w, w, &act, false, &params[outer.weight.clone()], false, 1.0, &mut next);
            block_inputs.push(std::mem::replace(&mut y, next));
            pre_activations.push(z);
        }

        let head = self.layers.last().expect("head layer");
        let od = self.arch.output_dim;
        let mut raw = vec![0.0; rows * od];
        broadcast_rows(&params[head.bias.clone()], rows, &mut raw);
        gemm(rows, w, od, &y, false, &params[head.weight.clone()], false, 1.0, &mut raw);
        let output = match self.arch.output_transform {
            OutputTransform::Identity => raw.clone(),
            OutputTransform::Softplus => raw.iter().map(|&v| softplus(v)).collect(),
        };

        let cache = ForwardCache {
            rows,
            states: xs.to_vec(),
            features,
            block_inputs,
            pre_activations,
            last_hidden: y,
            raw_output: raw,
            output,
        };
        if cache.output.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutput {
                layer: cache.first_bad_layer(),
            });
        }
        Ok(cache)
    }

    /// Reverse pass for `⟨cotangent, output⟩`: accumulates parameter
    /// gradients into `param_grad` and, when requested, writes the gradient
    /// with respect to the state coordinates `x` (the time input is not
    /// differentiated).
    pub fn backward(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        cotangent: &[f64],
        param_grad: &mut [f64],
        input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        self.check_params(params)?;
        self.check_params(param_grad)?;
        let rows = cache.rows;
        let od = self.arch.output_dim;
        let w = self.arch.hidden_width;
        let fd = self.arch.feature_dim();
        if cotangent.len() != rows * od {
            return Err(Error::dims("cotangent shape"));
        }

        let mut d_raw = cotangent.to_vec();
        if self.arch.output_transform == OutputTransform::Softplus {
            for (d, &z) in d_raw.iter_mut().zip(&cache.raw_output) {
                *d *= sigmoid(z);
            }
        }

        let head = self.layers.last().expect("head layer");
        gemm(w, rows, od, &cache.last_hidden, true, &d_raw, false, 1.0, &mut param_grad[head.weight.clone()]);
        add_column_sums(&d_raw, od, &mut param_grad[head.bias.clone()]);
        let mut dy = vec![0.0; rows * w];
        gemm(rows, od, w, &d_raw, false, &params[head.weight.clone()], true, 0.0, &mut dy);

        let mut act = vec![0.0; rows * w];
        let mut dz = vec![0.0; rows * w];
        for b in (0..self.arch.num_blocks).rev() {
            let (inner, outer) = (&self.layers[1 + 2 * b], &self.layers[2 + 2 * b]);
            let z = &cache.pre_activations[b];
            for (a, zv) in act.iter_mut().zip(z) {
                *a = zv.max(0.0);
            }
            gemm(w, rows, w, &act, true, &dy, false, 1.0, &mut param_grad[outer.weight.clone()]);
            add_column_sums(&dy, w, &mut param_grad[outer.bias.clone()]);
            gemm(rows, w, w, &dy, false, &params[outer.weight.clone()], true, 0.0, &mut dz);
            for (d, zv) in dz.iter_mut().zip(z) {
                if *zv <= 0.0 {
                    *d = 0.0;
                }
            }
            let y_in = &cache.block_inputs[b];
            gemm(w, rows, w, y_in, true, &dz, false, 1.0, &mut param_grad[inner.weight.clone()]);
            add_column_sums(&dz, w, &mut param_grad[inner.bias.clone()]);
            gemm(rows, w, w, &dz, false, &params[inner.weight.clone()], true, 1.0, &mut dy);
        }

        let input = &self.layers[0];
        gemm(fd, rows, w, &cache.features, true, &dy, false, 1.0, &mut param_grad[input.weight.clone()]);
        add_column_sums(&dy, w, &mut param_grad[input.bias.clone()]);

        if let Some(gx) = input_grad {
            let n = self.arch.state_dim;
            if gx.len() != rows * n {
                return Err(Error::dims("input gradient shape"));
            }
            let mut df = vec![0.0; rows * fd];
            gemm(rows, w, fd, &dy, false, &params[input.weight.clone()], true, 0.0, &mut df);
            for r in 0..rows {
                let f = &cache.features[r * fd..(r + 1) * fd];
                let d = &df[r * fd..(r + 1) * fd];
                let g = &mut gx[r * n..(r + 1) * n];
                match self.arch.input {
                    InputKind::Torus { period, num_freq } => {
                        let base = 2.0 * PI / period;
                        for (i, gi) in g.iter_mut().enumerate() {
                            let mut acc = 0.0;
                            for k in 0..num_freq {
                                let o = 2 * (i * num_freq + k);
                                let omega = base * (k + 1) as f64;
                                acc += omega * (d[o] * f[o + 1] - d[o + 1] * f[o]);
                            }
                            *gi = acc;
                        }
                    }
                    InputKind::Euclidean => g.copy_from_slice(&d[..n]),
                }
            }
        }
        if param_grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { step: None });
        }
        Ok(())
    }

    /// Vector–Jacobian product: gradients of `⟨cotangent, forward(x)⟩` with
    /// respect to the parameters and to `x`.
    pub fn vjp(
        &self,
        params: &[f64],
        times: Times<'_>,
        xs: &[f64],
        cotangent: &[f64],
    ) -> Result<(ParamVector, Vec<f64>)> {
        let cache = self.forward_cached(params, times, xs)?;
        let mut grad = ParamVector::zeros(self.num_params);
        let mut gx = vec![0.0; xs.len()];
        self.backward(params, &cache, cotangent, &mut grad, Some(&mut gx))?;
        Ok((grad, gx))
    }

    /// Binds parameters, producing a [`BatchFunction`].
    pub fn bind<'a>(&'a self, params: &'a [f64]) -> NetFn<'a> {
        NetFn { net: self, params }
    }
}

impl ForwardCache {
    fn first_bad_layer(&self) -> usize {
        let bad = |v: &[f64]| v.iter().any(|x| !x.is_finite());
        if bad(&self.features) {
            return 0;
        }
        let mut layer = 0;
        for (b, y) in self.block_inputs.iter().enumerate() {
            if bad(y) {
                return layer;
            }
            if bad(&self.pre_activations[b]) {
                return layer + 1;
            }
            layer += 2;
        }
        if bad(&self.last_hidden) {
            return layer;
        }
        layer + 1
    }

    /// The states the pass was evaluated at.
    pub fn states(&self) -> &[f64] {
        &self.states
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// A network with bound parameters.
#[derive(Clone, Copy)]
pub struct NetFn<'a> {
    pub net: &'a Network,
    pub params: &'a [f64],
}

impl BatchFunction for NetFn<'_> {
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn eval(&self, times: Times<'_>, xs: &[f64], out: &mut [f64]) -> Result<()> {
        check_batch(self.input_dim(), self.output_dim(), xs, out)?;
        let y = self.net.forward(self.params, times, xs)?;
        out.copy_from_slice(&y);
        Ok(())
    }

    fn fingerprint(&self) -> Option<u64> {
        Some(fingerprint(self.params))
    }
}
