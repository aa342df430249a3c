//! A small fully connected noise predictor with hand-written backprop.
//!
//! The network maps `concat(x, embed(t))` through GELU hidden layers to a
//! vector the size of `x`. The activation is the tanh form of GELU:
//!
//! ```text
//! gelu(x)  = ½·x·(1 + tanh(u)),      u = √(2/π)·(x + 0.044715·x³)
//! gelu'(x) = ½·(1 + tanh(u)) + ½·x·(1 − tanh²(u))·√(2/π)·(1 + 3·0.044715·x²)
//! ```
//!
//! Parameters are kept as a flat list `[W₀, b₀, W₁, b₁, …]` of
//! [`ParamTensor`]s so optimizers can consume them directly. `Wₗ` has shape
//! `[fan_out, fan_in]`, row-major.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::ParamTensor;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub const CHECKPOINT_MAGIC: &str = "POINCARE-OPT-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[inline]
pub fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Sinusoidal time features: `embed_dim / 2` sines followed by as many cosines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeEmbedding {
    embed_dim: usize,
    max_period: f64,
}

impl TimeEmbedding {
    pub fn new(embed_dim: usize, max_period: f64) -> Result<Self> {
        if !embed_dim.is_multiple_of(2) {
            return Err(Error::usage(format!("embed_dim {embed_dim} must be even")));
        }
        if !(max_period > 0.0 && max_period.is_finite()) {
            return Err(Error::usage(format!(
                "max_period {max_period} must be positive"
            )));
        }
        Ok(Self {
            embed_dim,
            max_period,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn max_period(&self) -> f64 {
        self.max_period
    }

    /// Geometric frequencies from 1 down to `1 / max_period`.
    pub fn frequencies(&self) -> Vec<f64> {
        let half = self.embed_dim / 2;
        if half == 1 {
            return vec![1.0];
        }
        let log_p = self.max_period.ln();
        (0..half)
            .map(|k| (-log_p * k as f64 / (half - 1) as f64).exp())
            .collect()
    }

    pub fn embed_into(&self, t: f64, out: &mut [f64]) {
        let half = self.embed_dim / 2;
        for (k, w) in self.frequencies().into_iter().enumerate() {
            let (s, c) = (t * w).sin_cos();
            out[k] = s;
            out[half + k] = c;
        }
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.embed_dim];
        self.embed_into(t, &mut out);
        out
    }
}

/// Free-function form of [`TimeEmbedding::embed`] that validates `t`.
pub fn time_embedding(t: f64, cfg: &TimeEmbedding) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::usage(format!("timestep {t} must be non-negative")));
    }
    Ok(cfg.embed(t))
}

/// Anything the diffusion trainer can drive: a noise predictor with
/// gradients for its parameter list.
pub trait NoiseModel {
    type Tape;

    fn data_dim(&self) -> usize;

    fn params(&self) -> &[ParamTensor];

    fn params_mut(&mut self) -> &mut [ParamTensor];

    /// Predictions for a row-major `batch × data_dim` input, plus whatever
    /// the backward pass needs.
    fn forward_tape(&self, x: &[f64], t: &[f64]) -> Result<(Vec<f64>, Self::Tape)>;

    /// Parameter gradients for `Σ upstream · output`, aligned with [`params`](Self::params).
    fn backward_tape(&self, tape: &Self::Tape, upstream: &[f64]) -> Result<Vec<ParamTensor>>;

    fn predict(&self, x: &[f64], t: &[f64]) -> Result<Vec<f64>> {
        self.forward_tape(x, t).map(|(y, _)| y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    data_dim: usize,
    hidden: Vec<usize>,
    embedding: TimeEmbedding,
    params: Vec<ParamTensor>,
}

/// Activations saved by [`Denoiser::forward_tape`].
#[derive(Debug, Clone)]
pub struct DenoiserTape {
    batch: usize,
    /// Input to each layer, `batch × fan_in`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer, `batch × fan_out`.
    pre: Vec<Vec<f64>>,
}

impl Denoiser {
    /// Fan-in scaled uniform init `U(−1/√fan_in, 1/√fan_in)` for weights,
    /// zero biases.
    pub fn new(data_dim: usize, hidden: &[usize], embedding: TimeEmbedding, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(data_dim, hidden, embedding)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..model.num_layers() {
            let (fan_out, fan_in) = model.layer_dims(l);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = &mut model.params[2 * l];
            for x in w.data.iter_mut().take(fan_out * fan_in) {
                *x = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn zeros(data_dim: usize, hidden: &[usize], embedding: TimeEmbedding) -> Result<Self> {
        if data_dim == 0 {
            return Err(Error::usage("data_dim must be positive"));
        }
        if hidden.contains(&0) {
            return Err(Error::usage("hidden widths must be positive"));
        }
        let mut widths = vec![data_dim + embedding.embed_dim()];
        widths.extend_from_slice(hidden);
        widths.push(data_dim);
        let params = widths
            .windows(2)
            .flat_map(|w| {
                [
                    ParamTensor::zeros(&[w[1], w[0]]),
                    ParamTensor::zeros(&[w[1]]),
                ]
            })
            .collect();
        Ok(Self {
            data_dim,
            hidden: hidden.to_vec(),
            embedding,
            params,
        })
    }

    pub fn embedding(&self) -> &TimeEmbedding {
        &self.embedding
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    /// `[input, hidden…, output]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.data_dim + self.embedding.embed_dim()];
        w.extend_from_slice(&self.hidden);
        w.push(self.data_dim);
        w
    }

    pub fn num_layers(&self) -> usize {
        self.params.len() / 2
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(ParamTensor::len).sum()
    }

    fn layer_dims(&self, l: usize) -> (usize, usize) {
        let s = self.params[2 * l].shape();
        (s[0], s[1])
    }

    fn check_batch(&self, x: &[f64], t: &[f64]) -> Result<usize> {
        if !x.len().is_multiple_of(self.data_dim) {
            return Err(Error::usage(format!(
                "input length {} is not a multiple of data_dim {}",
                x.len(),
                self.data_dim
            )));
        }
        let batch = x.len() / self.data_dim;
        if t.len() != batch {
            return Err(Error::usage(format!(
                "{batch} samples but {} timesteps",
                t.len()
            )));
        }
        Ok(batch)
    }

    pub fn forward(&self, x: &[f64], t: &[f64]) -> Result<Vec<f64>> {
        self.forward_tape(x, t).map(|(y, _)| y)
    }

    /// Gradients of `Σ upstream · forward(x, t)` with respect to every
    /// parameter (sum over the batch).
    pub fn backward(&self, x: &[f64], t: &[f64], upstream: &[f64]) -> Result<Vec<ParamTensor>> {
        let (_, tape) = self.forward_tape(x, t)?;
        self.backward_tape(&tape, upstream)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }

    /// Text checkpoint:
    ///
    /// ```text
    /// POINCARE-OPT-CKPT 1
    /// data_dim 2
    /// hidden 128 128
    /// embed_dim 32
    /// max_period 10000
    /// activation gelu_tanh
    /// tensors 6
    /// tensor 0 128 34
    /// <space separated values, shortest round-trip form>
    /// …
    /// ```
    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::new();
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        let _ = writeln!(s, "data_dim {}", self.data_dim);
        let _ = writeln!(s, "hidden {}", hidden.join(" "));
        let _ = writeln!(s, "embed_dim {}", self.embedding.embed_dim());
        let _ = writeln!(s, "max_period {:e}", self.embedding.max_period());
        let _ = writeln!(s, "activation gelu_tanh");
        let _ = writeln!(s, "tensors {}", self.params.len());
        for (i, p) in self.params.iter().enumerate() {
            let dims: Vec<String> = p.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(s, "tensor {i} {}", dims.join(" "));
            let vals: Vec<String> = p.data.iter().map(|x| format!("{x:e}")).collect();
            let _ = writeln!(s, "{}", vals.join(" "));
        }
        s
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("checkpoint: {m}"));
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(&format!("missing {what}")));

        let header = next("header")?;
        let mut h = header.split_whitespace();
        if h.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("bad magic header"));
        }
        let version: u32 = h
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("bad version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }

        fn field<'a>(line: &'a str, key: &str) -> std::result::Result<Vec<&'a str>, Error> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(Error::Parse(format!("checkpoint: expected `{key}` line")));
            }
            Ok(it.collect())
        }
        fn num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, Error> {
            s.parse()
                .map_err(|_| Error::Parse(format!("checkpoint: bad number `{s}`")))
        }

        let data_dim: usize = num(field(next("data_dim")?, "data_dim")?.first().copied().unwrap_or(""))?;
        let hidden = field(next("hidden")?, "hidden")?
            .into_iter()
            .map(num)
            .collect::<Result<Vec<usize>>>()?;
        let embed_dim: usize = num(field(next("embed_dim")?, "embed_dim")?.first().copied().unwrap_or(""))?;
        let max_period: f64 = num(field(next("max_period")?, "max_period")?.first().copied().unwrap_or(""))?;
        let act = field(next("activation")?, "activation")?;
        if act != ["gelu_tanh"] {
            return Err(bad("unsupported activation"));
        }
        let count: usize = num(field(next("tensors")?, "tensors")?.first().copied().unwrap_or(""))?;

        let mut model = Self::zeros(data_dim, &hidden, TimeEmbedding::new(embed_dim, max_period)?)?;
        if count != model.params.len() {
            return Err(bad("tensor count does not match the architecture"));
        }
        for i in 0..count {
            let spec = field(next("tensor header")?, "tensor")?;
            let dims = spec
                .iter()
                .skip(1)
                .map(|d| num::<usize>(d))
                .collect::<Result<Vec<_>>>()?;
            if spec.first().map(|s| num::<usize>(s)).transpose()? != Some(i) || dims != model.params[i].shape() {
                return Err(bad(&format!("tensor {i} header mismatch")));
            }
            let values = next("tensor values")?
                .split_whitespace()
                .map(num::<f64>)
                .collect::<Result<Vec<_>>>()?;
            if values.len() != model.params[i].len() {
                return Err(bad(&format!("tensor {i} has the wrong number of values")));
            }
            model.params[i].data = values;
        }
        Ok(model)
    }
}

impl NoiseModel for Denoiser {
    type Tape = DenoiserTape;

    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn params(&self) -> &[ParamTensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.params
    }

    fn forward_tape(&self, x: &[f64], t: &[f64]) -> Result<(Vec<f64>, DenoiserTape)> {
        let batch = self.check_batch(x, t)?;
        let d = self.data_dim;
        let e = self.embedding.embed_dim();
        let in_w = d + e;

        let mut input = vec![0.0; batch * in_w];
        for (b, row) in input.chunks_mut(in_w).enumerate() {
            row[..d].copy_from_slice(&x[b * d..(b + 1) * d]);
            self.embedding.embed_into(t[b], &mut row[d..]);
        }

        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers.saturating_sub(1));
        let mut act = input;
        for l in 0..layers {
            let (fan_out, fan_in) = self.layer_dims(l);
            let w = &self.params[2 * l].data;
            let bias = &self.params[2 * l + 1].data;
            let mut z = vec![0.0; batch * fan_out];
            for (a_row, z_row) in act.chunks(fan_in).zip(z.chunks_mut(fan_out)) {
                for (o, zo) in z_row.iter_mut().enumerate() {
                    let w_row = &w[o * fan_in..(o + 1) * fan_in];
                    *zo = bias[o] + w_row.iter().zip(a_row).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            inputs.push(act);
            if l + 1 == layers {
                act = z;
            } else {
                act = z.iter().map(|v| gelu(*v)).collect();
                pre.push(z);
            }
        }
        Ok((act, DenoiserTape { batch, inputs, pre }))
    }

    fn backward_tape(&self, tape: &DenoiserTape, upstream: &[f64]) -> Result<Vec<ParamTensor>> {
        if upstream.len() != tape.batch * self.data_dim {
            return Err(Error::usage(format!(
                "upstream gradient has {} elements, expected {}",
                upstream.len(),
                tape.batch * self.data_dim
            )));
        }
        let mut grads: Vec<ParamTensor> = self.params.iter().map(ParamTensor::zeros_like).collect();
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (fan_out, fan_in) = self.layer_dims(l);
            let a = &tape.inputs[l];
            {
                let (gw, gb) = grads.split_at_mut(2 * l + 1);
                let gw = &mut gw[2 * l].data;
                let gb = &mut gb[0].data;
                for (d_row, a_row) in delta.chunks(fan_out).zip(a.chunks(fan_in)) {
                    for (o, dv) in d_row.iter().enumerate() {
                        if *dv == 0.0 {
                            continue;
                        }
                        gb[o] += dv;
                        for (g, av) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(a_row) {
                            *g += dv * av;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[2 * l].data;
            let z_prev = &tape.pre[l - 1];
            let mut next = vec![0.0; tape.batch * fan_in];
            for ((d_row, n_row), z_row) in delta
                .chunks(fan_out)
                .zip(next.chunks_mut(fan_in))
                .zip(z_prev.chunks(fan_in))
            {
                for (o, dv) in d_row.iter().enumerate() {
                    for (n, wv) in n_row.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *n += dv * wv;
                    }
                }
                for (n, z) in n_row.iter_mut().zip(z_row) {
                    *n *= gelu_grad(*z);
                }
            }
            delta = next;
        }
        Ok(grads)
    }
}
