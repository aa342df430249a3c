//! Toy 2-D DDPM: datasets, forward noising, training, ancestral sampling and
//! an energy-distance quality metric.
//!
//! Training draws, for every sample, an index uniformly over the sampler's
//! timestep sequence, so the unit-hyperbola sampler changes the distribution
//! of training timesteps as well as the reverse-loop grid.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ParamTensor;
use crate::losses::{mse_loss, poincare_loss_with_policy, DomainPolicy, DEFAULT_LOSS_DELTA};
use crate::nn::{Denoiser, NoiseModel, TimeEmbedding};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use crate::records::RunRecord;
use crate::schedule::{DiffusionSchedule, SamplerKind};

pub const DATA_DIM: usize = 2;
/// Upper bound on each coordinate's mean square after normalization.
pub const COORD_MSQ_BOUND: f64 = 0.5;
/// Rows per parallel work unit. Fixed so reductions do not depend on the
/// thread count.
const CHUNK: usize = 32;

// rng stream ids under one run seed
const STREAM_DATA: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_EVAL: u64 = 3;
// seed of the metric's reverse-process noise, relative to the run seed
const SAMPLE_SEED_MASK: u64 = 0x9e37_79b9_7f4a_7c15;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    GaussianMixture,
    TwoMoons,
    SwissRoll2d,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::GaussianMixture => "gaussian_mixture",
            DatasetKind::TwoMoons => "two_moons",
            DatasetKind::SwissRoll2d => "swiss_roll_2d",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_mixture" => Ok(DatasetKind::GaussianMixture),
            "two_moons" => Ok(DatasetKind::TwoMoons),
            "swiss_roll_2d" => Ok(DatasetKind::SwissRoll2d),
            other => Err(Error::usage(format!(
                "unknown dataset `{other}` (expected gaussian_mixture, two_moons, swiss_roll_2d)"
            ))),
        }
    }
}

/// Row-major `n × 2` point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    name: String,
    points: Vec<f64>,
    seed: u64,
}

impl ToyDataset {
    /// Draw `n` points and normalize: center each coordinate, then scale it
    /// to mean square just under [`COORD_MSQ_BOUND`].
    pub fn generate(kind: DatasetKind, n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::usage("a toy dataset needs at least 2 points"));
        }
        let mut rng = rng_for(seed, STREAM_DATA);
        let mut pts = Vec::with_capacity(2 * n);
        let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
        for i in 0..n {
            let (x, y) = match kind {
                DatasetKind::GaussianMixture => {
                    let k = rng.random_range(0..8) as f64;
                    let a = k * std::f64::consts::TAU / 8.0;
                    (a.cos() + 0.1 * normal(&mut rng), a.sin() + 0.1 * normal(&mut rng))
                }
                DatasetKind::TwoMoons => {
                    let a = rng.random_range(0.0..std::f64::consts::PI);
                    let (x, y) = if i % 2 == 0 {
                        (a.cos(), a.sin())
                    } else {
                        (1.0 - a.cos(), 0.5 - a.sin())
                    };
                    (x + 0.05 * normal(&mut rng), y + 0.05 * normal(&mut rng))
                }
                DatasetKind::SwissRoll2d => {
                    let u: f64 = rng.random();
                    let a = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * u);
                    (
                        a * a.cos() + 0.3 * normal(&mut rng),
                        a * a.sin() + 0.3 * normal(&mut rng),
                    )
                }
            };
            pts.push(x);
            pts.push(y);
        }
        for c in 0..DATA_DIM {
            let mean = pts.iter().skip(c).step_by(DATA_DIM).sum::<f64>() / n as f64;
            pts.iter_mut().skip(c).step_by(DATA_DIM).for_each(|v| *v -= mean);
            let msq = pts.iter().skip(c).step_by(DATA_DIM).map(|v| v * v).sum::<f64>() / n as f64;
            let scale = (COORD_MSQ_BOUND / msq).sqrt() * (1.0 - 1e-9);
            pts.iter_mut().skip(c).step_by(DATA_DIM).for_each(|v| *v *= scale);
        }
        Self::from_points(kind.as_str(), pts, seed)
    }

    /// Wrap existing points, checking finiteness and the mean-square bound.
    pub fn from_points(name: &str, points: Vec<f64>, seed: u64) -> Result<Self> {
        if points.is_empty() || !points.len().is_multiple_of(DATA_DIM) {
            return Err(Error::usage("points must be a non-empty n × 2 array"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("dataset contains non-finite values"));
        }
        let n = (points.len() / DATA_DIM) as f64;
        for c in 0..DATA_DIM {
            let msq = points.iter().skip(c).step_by(DATA_DIM).map(|v| v * v).sum::<f64>() / n;
            if msq > COORD_MSQ_BOUND {
                return Err(Error::domain(format!(
                    "coordinate {c} has mean square {msq} above {COORD_MSQ_BOUND}"
                )));
            }
        }
        Ok(Self {
            name: name.to_string(),
            points,
            seed,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.points.len() / DATA_DIM
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `x_t = √ᾱ_t · x₀ + √(1 − ᾱ_t) · noise`, row by row.
pub fn add_noise(x0: &[f64], t: &[f64], schedule: &DiffusionSchedule, noise: &[f64]) -> Result<Vec<f64>> {
    if x0.len() != noise.len() {
        return Err(Error::usage("x0 and noise differ in length"));
    }
    if t.is_empty() {
        return if x0.is_empty() {
            Ok(Vec::new())
        } else {
            Err(Error::usage("no timesteps for a non-empty batch"))
        };
    }
    if !x0.len().is_multiple_of(t.len()) {
        return Err(Error::usage(format!(
            "{} values do not split into {} rows",
            x0.len(),
            t.len()
        )));
    }
    let width = x0.len() / t.len();
    let mut out = Vec::with_capacity(x0.len());
    for (i, ti) in t.iter().enumerate() {
        let ab = schedule.alpha_bar_at(*ti)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for j in i * width..(i + 1) * width {
            out.push(a * x0[j] + b * noise[j]);
        }
    }
    Ok(out)
}

/// Energy distance `2·E‖x−y‖ − E‖x−x′‖ − E‖y−y′‖` between two row-major
/// point clouds (V-statistic, so it is exactly zero for identical inputs).
///
/// The result does not depend on argument order, bit for bit.
pub fn energy_distance(a: &[f64], b: &[f64], dim: usize) -> Result<f64> {
    if dim == 0 || !a.len().is_multiple_of(dim) || !b.len().is_multiple_of(dim) {
        return Err(Error::usage("point arrays must be n × dim"));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::usage("energy distance needs two non-empty samples"));
    }
    // canonical order makes the value symmetric under floating point too
    let (a, b) = match cmp_slices(a, b) {
        std::cmp::Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let cross = mean_pairwise(a, b, dim);
    let within = mean_pairwise(a, a, dim) + mean_pairwise(b, b, dim);
    Ok((2.0 * cross - within).max(0.0))
}

fn cmp_slices(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

fn mean_pairwise(a: &[f64], b: &[f64], dim: usize) -> f64 {
    let rows: Vec<f64> = a
        .par_chunks(dim)
        .map(|x| {
            b.chunks(dim)
                .map(|y| {
                    x.iter()
                        .zip(y)
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
        })
        .collect();
    rows.iter().sum::<f64>() / ((a.len() / dim) as f64 * (b.len() / dim) as f64)
}

/// Ancestral DDPM sampling over a strided descending timestep grid.
///
/// For consecutive grid points `t > t'` the step uses the effective
/// `α = ᾱ_t / ᾱ_t'`, so non-unit strides and real-valued timesteps are
/// handled uniformly. The last step returns the posterior mean.
pub fn generate_samples<M>(
    model: &M,
    schedule: &DiffusionSchedule,
    n: usize,
    inference_steps: usize,
    seed: u64,
) -> Result<Vec<f64>>
where
    M: NoiseModel + Sync,
{
    let grid = schedule.inference_timesteps(inference_steps)?;
    let d = model.data_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    if n == 0 {
        return Ok(x);
    }
    for (k, &t) in grid.iter().enumerate() {
        let ab_t = schedule.alpha_bar_at(t)?;
        let last = k + 1 == grid.len();
        let ab_prev = if last { 1.0 } else { schedule.alpha_bar_at(grid[k + 1])? };
        let alpha = ab_t / ab_prev;
        let beta = 1.0 - alpha;
        let coef_x0 = ab_prev.sqrt() * beta / (1.0 - ab_t);
        let coef_xt = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
        let (sa, sb) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());

        let eps = predict_chunked(model, &x, t)?;
        for (xi, ei) in x.iter_mut().zip(&eps) {
            let x0 = (*xi - sb * ei) / sa;
            *xi = coef_x0 * x0 + coef_xt * *xi;
        }
        if !last {
            let sigma = ((1.0 - ab_prev) / (1.0 - ab_t) * beta).max(0.0).sqrt();
            for xi in x.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *xi += sigma * z;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample { step: k });
        }
    }
    Ok(x)
}

fn predict_chunked<M: NoiseModel + Sync>(model: &M, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let d = model.data_dim();
    let parts = x
        .par_chunks(CHUNK * d)
        .map(|c| model.predict(c, &vec![t; c.len() / d]))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Mse,
    Poincare,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Poincare => "poincare",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "poincare" => Ok(LossKind::Poincare),
            other => Err(Error::usage(format!(
                "unknown loss `{other}` (expected mse or poincare)"
            ))),
        }
    }
}

/// Everything one toy-diffusion training run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRunConfig {
    pub label: String,
    pub optimizer: OptimizerKind,
    pub t_sampler: SamplerKind,
    pub loss: LossKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_timesteps: usize,
    pub inference_steps: usize,
    pub seed: u64,
    pub dataset: DatasetKind,
    pub n_points: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub max_period: f64,
    /// Evaluate the metric every this many epochs (0 = only first and last).
    pub metric_every: usize,
    pub metric_samples: usize,
    pub loss_delta: f64,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            label: "AdamW+LinearT".into(),
            optimizer: OptimizerKind::AdamW,
            t_sampler: SamplerKind::Linear,
            loss: LossKind::Mse,
            lr: 2e-4,
            weight_decay: 0.0,
            epochs: 300,
            batch_size: 128,
            train_timesteps: 200,
            inference_steps: 200,
            seed: 0,
            dataset: DatasetKind::GaussianMixture,
            n_points: 1000,
            hidden: vec![128, 128],
            embed_dim: 32,
            max_period: 1e4,
            metric_every: 25,
            metric_samples: 512,
            loss_delta: DEFAULT_LOSS_DELTA,
        }
    }
}

pub const GROUP1_LR: f64 = 0.002;
pub const GROUP2_LR: f64 = 0.0002;
pub const GROUP1_EPOCHS: usize = 500;
pub const GROUP2_EPOCHS: usize = 350;

/// Preset labels of the two comparison groups.
pub const GROUP1_LABELS: [&str; 3] = ["SGD+LinearT", "HyperSGD+LinearT", "HyperSGD+HyperT"];
pub const GROUP2_LABELS: [&str; 3] = [
    "AdamW+LinearT",
    "HyperAdamW+HyperT",
    "HyperAdamW+HyperT+HyperLoss",
];

impl TrainRunConfig {
    /// Configuration for a named preset, or `None` for an unknown label.
    pub fn preset(label: &str) -> Option<Self> {
        use LossKind::*;
        use OptimizerKind::*;
        use SamplerKind::*;
        let (optimizer, t_sampler, loss, lr, epochs) = match label {
            "SGD+LinearT" => (Sgd, Linear, Mse, GROUP1_LR, GROUP1_EPOCHS),
            "HyperSGD+LinearT" => (HyperSgd, Linear, Mse, GROUP1_LR, GROUP1_EPOCHS),
            "HyperSGD+HyperT" => (HyperSgd, UnitHyperbola, Mse, GROUP1_LR, GROUP1_EPOCHS),
            "AdamW+LinearT" => (AdamW, Linear, Mse, GROUP2_LR, GROUP2_EPOCHS),
            "HyperAdamW+HyperT" => (HyperAdamW, UnitHyperbola, Mse, GROUP2_LR, GROUP2_EPOCHS),
            "HyperAdamW+HyperT+HyperLoss" => {
                (HyperAdamW, UnitHyperbola, Poincare, GROUP2_LR, GROUP2_EPOCHS)
            }
            _ => return None,
        };
        Some(Self {
            label: label.to_string(),
            optimizer,
            t_sampler,
            loss,
            lr,
            epochs,
            ..Self::default()
        })
    }

    /// The three presets of comparison group 1 or 2.
    pub fn group(group: u8) -> Result<Vec<Self>> {
        let labels: &[&str] = match group {
            1 => &GROUP1_LABELS,
            2 => &GROUP2_LABELS,
            g => return Err(Error::usage(format!("unknown group {g} (expected 1 or 2)"))),
        };
        Ok(labels
            .iter()
            .map(|l| Self::preset(l).expect("group labels are presets"))
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer_config().validate()?;
        if self.batch_size == 0 {
            return Err(Error::usage("batch_size must be positive"));
        }
        if self.train_timesteps == 0 {
            return Err(Error::usage("train_timesteps must be positive"));
        }
        if self.inference_steps > self.train_timesteps {
            return Err(Error::usage(format!(
                "inference_steps {} exceeds train_timesteps {}",
                self.inference_steps, self.train_timesteps
            )));
        }
        if self.n_points < 2 {
            return Err(Error::usage("n_points must be at least 2"));
        }
        if !self.embed_dim.is_multiple_of(2) {
            return Err(Error::usage("embed_dim must be even"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::usage("hidden widths must be positive"));
        }
        if self.loss_delta.is_nan() || self.loss_delta < 0.0 {
            return Err(Error::usage("loss_delta must be non-negative"));
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig::new(self.optimizer, self.lr).with_weight_decay(self.weight_decay)
    }
}

/// One optimizer pass over the shuffled dataset; returns the mean batch loss.
pub fn train_epoch<M, R>(
    model: &mut M,
    dataset: &ToyDataset,
    config: &TrainRunConfig,
    schedule: &DiffusionSchedule,
    optimizer: &mut Optimizer,
    rng: &mut R,
) -> Result<f64>
where
    M: NoiseModel + Sync,
    M::Tape: Send + Sync,
    R: Rng,
{
    let d = model.data_dim();
    if d != DATA_DIM {
        return Err(Error::usage("model and dataset dimensions differ"));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let ts = schedule.timesteps();
    let mut total = 0.0;
    let mut batches = 0usize;

    for (bi, idx) in order.chunks(config.batch_size).enumerate() {
        let m = idx.len();
        let t: Vec<f64> = (0..m).map(|_| ts[rng.random_range(0..ts.len())]).collect();
        let noise: Vec<f64> = (0..m * d).map(|_| rng.sample(StandardNormal)).collect();
        let x0: Vec<f64> = idx
            .iter()
            .flat_map(|&i| dataset.points()[i * d..(i + 1) * d].iter().copied())
            .collect();
        let xt = add_noise(&x0, &t, schedule, &noise)?;

        let (value, grads) = loss_and_grads(&*model, &xt, &t, &noise, config)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                batch: bi,
                kind: config.loss.to_string(),
            });
        }
        optimizer.step(model.params_mut(), &grads)?;
        total += value;
        batches += 1;
    }
    Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
}

/// Configured loss of `model` on one batch, with parameter gradients.
fn loss_and_grads<M>(
    model: &M,
    xt: &[f64],
    t: &[f64],
    target: &[f64],
    config: &TrainRunConfig,
) -> Result<(f64, Vec<ParamTensor>)>
where
    M: NoiseModel + Sync,
    M::Tape: Send + Sync,
{
    let d = model.data_dim();
    let rows = t.len();
    let chunks = xt
        .par_chunks(CHUNK * d)
        .zip(t.par_chunks(CHUNK))
        .map(|(x, tc)| model.forward_tape(x, tc))
        .collect::<Result<Vec<_>>>()?;
    let pred: Vec<f64> = chunks.iter().flat_map(|(y, _)| y.iter().copied()).collect();
    let out = match config.loss {
        LossKind::Mse => mse_loss(&pred, target)?,
        LossKind::Poincare => {
            poincare_loss_with_policy(&pred, target, rows, config.loss_delta, DomainPolicy::Clamp)?.0
        }
    };
    let upstream = &out.grad_wrt_pred;
    let parts = chunks
        .par_iter()
        .enumerate()
        .map(|(c, (_, tape))| {
            let start = c * CHUNK * d;
            let len = (rows * d - start).min(CHUNK * d);
            model.backward_tape(tape, &upstream[start..start + len])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads: Vec<ParamTensor> = model.params().iter().map(ParamTensor::zeros_like).collect();
    for part in parts {
        for (g, p) in grads.iter_mut().zip(part) {
            for (a, b) in g.data.iter_mut().zip(p.data) {
                *a += b;
            }
        }
    }
    Ok((out.value, grads))
}

/// A toy-diffusion training run: dataset, model, optimizer and RNG state.
pub struct DiffusionRun {
    config: TrainRunConfig,
    schedule: DiffusionSchedule,
    dataset: ToyDataset,
    model: Denoiser,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl DiffusionRun {
    pub fn new(config: TrainRunConfig) -> Result<Self> {
        config.validate()?;
        let schedule = DiffusionSchedule::new(config.train_timesteps, config.t_sampler)?;
        let dataset = ToyDataset::generate(config.dataset, config.n_points, config.seed)?;
        let embedding = TimeEmbedding::new(config.embed_dim, config.max_period)?;
        let mut model = Denoiser::new(DATA_DIM, &config.hidden, embedding, config.seed)?;
        let optimizer = Optimizer::new(config.optimizer_config())?;
        optimizer.register(model.params_mut());
        Ok(Self {
            rng: rng_for(config.seed, STREAM_TRAIN),
            config,
            schedule,
            dataset,
            model,
            optimizer,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainRunConfig {
        &self.config
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn dataset(&self) -> &ToyDataset {
        &self.dataset
    }

    pub fn model(&self) -> &Denoiser {
        &self.model
    }

    pub fn into_model(self) -> Denoiser {
        self.model
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn train_epoch(&mut self) -> Result<f64> {
        let loss = train_epoch(
            &mut self.model,
            &self.dataset,
            &self.config,
            &self.schedule,
            &mut self.optimizer,
            &mut self.rng,
        )?;
        self.epoch += 1;
        Ok(loss)
    }

    /// Loss of the current model over one pass of fresh draws, without updates.
    pub fn evaluate_loss(&self) -> Result<f64> {
        let mut rng = rng_for(self.config.seed, STREAM_EVAL);
        let d = DATA_DIM;
        let ts = self.schedule.timesteps();
        let mut total = 0.0;
        let mut batches = 0;
        for idx in (0..self.dataset.len()).collect::<Vec<_>>().chunks(self.config.batch_size) {
            let m = idx.len();
            let t: Vec<f64> = (0..m).map(|_| ts[rng.random_range(0..ts.len())]).collect();
            let noise: Vec<f64> = (0..m * d).map(|_| rng.sample(StandardNormal)).collect();
            let x0: Vec<f64> = idx
                .iter()
                .flat_map(|&i| self.dataset.points()[i * d..(i + 1) * d].iter().copied())
                .collect();
            let xt = add_noise(&x0, &t, &self.schedule, &noise)?;
            total += loss_and_grads(&self.model, &xt, &t, &noise, &self.config)?.0;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    /// Energy distance between freshly generated samples and the training set.
    /// Uses the same sampling seed on every call so successive epochs are
    /// compared on identical noise.
    pub fn energy_distance_to_data(&self) -> Result<f64> {
        let samples = generate_samples(
            &self.model,
            &self.schedule,
            self.config.metric_samples,
            self.config.inference_steps,
            self.config.seed ^ SAMPLE_SEED_MASK,
        )?;
        energy_distance(&samples, self.dataset.points(), DATA_DIM)
    }

    fn metric_due(&self, epoch: usize) -> bool {
        epoch == 0
            || epoch == self.config.epochs
            || (self.config.metric_every > 0 && epoch.is_multiple_of(self.config.metric_every))
    }

    /// Train for the configured number of epochs, emitting one record per
    /// epoch. Epoch 0 describes the untrained model.
    pub fn run(&mut self, run_id: &str) -> Result<Vec<RunRecord>> {
        self.run_with(run_id, |_, _| Ok(()))
    }

    /// [`run`](Self::run) with a hook called after every epoch.
    pub fn run_with<F>(&mut self, run_id: &str, mut after_epoch: F) -> Result<Vec<RunRecord>>
    where
        F: FnMut(&DiffusionRun, &RunRecord) -> Result<()>,
    {
        let start = Instant::now();
        let mut records = Vec::with_capacity(self.config.epochs + 1);
        let first = RunRecord {
            run_id: run_id.to_string(),
            config_label: self.config.label.clone(),
            epoch: 0,
            loss: self.evaluate_loss()?,
            metric: Some(self.energy_distance_to_data()?),
            wall_ms: start.elapsed().as_millis() as u64,
            seed: self.config.seed,
        };
        after_epoch(self, &first)?;
        records.push(first);
        for _ in 0..self.config.epochs {
            let loss = self.train_epoch()?;
            let metric = if self.metric_due(self.epoch) {
                Some(self.energy_distance_to_data()?)
            } else {
                None
            };
            let rec = RunRecord {
                run_id: run_id.to_string(),
                config_label: self.config.label.clone(),
                epoch: self.epoch as u64,
                loss,
                metric,
                wall_ms: start.elapsed().as_millis() as u64,
                seed: self.config.seed,
            };
            after_epoch(self, &rec)?;
            records.push(rec);
        }
        Ok(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datasets_are_normalized_and_deterministic() {
        for kind in [DatasetKind::GaussianMixture, DatasetKind::TwoMoons, DatasetKind::SwissRoll2d] {
            let a = ToyDataset::generate(kind, 500, 3).unwrap();
            let b = ToyDataset::generate(kind, 500, 3).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 500);
            for c in 0..2 {
                let msq = a.points().iter().skip(c).step_by(2).map(|v| v * v).sum::<f64>() / 500.0;
                assert!(msq <= COORD_MSQ_BOUND && msq > 0.49, "{kind}: {msq}");
            }
        }
        assert!(ToyDataset::from_points("x", vec![1.0, 1.0], 0).is_err());
        assert!(ToyDataset::from_points("x", vec![0.1, f64::NAN], 0).is_err());
    }

    #[test]
    fn add_noise_zero_noise() {
        let s = DiffusionSchedule::new(50, SamplerKind::Linear).unwrap();
        let x0 = [0.3, -0.4, 0.1, 0.2];
        let t = [10.0, 49.0];
        let out = add_noise(&x0, &t, &s, &[0.0; 4]).unwrap();
        let a0 = s.alpha_bars()[10].sqrt();
        let a1 = s.alpha_bars()[49].sqrt();
        assert_eq!(out, vec![a0 * 0.3, a0 * -0.4, a1 * 0.1, a1 * 0.2]);
        assert!(add_noise(&x0, &[51.0, 0.0], &s, &[0.0; 4]).is_err());
        assert!(add_noise(&x0, &[1.0], &s, &[0.0; 3]).is_err());
    }

    #[test]
    fn add_noise_near_zero_t() {
        let s = DiffusionSchedule::new(1000, SamplerKind::Linear).unwrap();
        let x0 = [0.5, -0.5];
        let noise = [1.0, 2.0];
        let out = add_noise(&x0, &[0.0], &s, &noise).unwrap();
        let bound = (1.0 - s.alpha_bars()[0]).sqrt() * 5f64.sqrt() + 1e-4;
        let diff = ((out[0] - x0[0]).powi(2) + (out[1] - x0[1]).powi(2)).sqrt();
        assert!(diff <= bound);
    }

    #[test]
    fn energy_distance_basics() {
        let a = [0.0, 0.0, 1.0, 0.5, -0.3, 0.2];
        assert_eq!(energy_distance(&a, &a, 2).unwrap(), 0.0);
        let b = [2.0, 1.0, 0.5, 0.5];
        assert_eq!(
            energy_distance(&a, &b, 2).unwrap(),
            energy_distance(&b, &a, 2).unwrap()
        );
        assert!(energy_distance(&a, &b, 2).unwrap() > 0.0);
        assert!(energy_distance(&[], &b, 2).is_err());
        assert!(energy_distance(&a, &[1.0], 2).is_err());
    }

    #[test]
    fn presets() {
        let g1 = TrainRunConfig::group(1).unwrap();
        assert!(g1.iter().all(|c| c.lr == 0.002));
        let g2 = TrainRunConfig::group(2).unwrap();
        assert!(g2.iter().all(|c| c.lr == 0.0002));
        assert_eq!(g2[2].loss, LossKind::Poincare);
        assert!(TrainRunConfig::group(3).is_err());
        assert!(TrainRunConfig::preset("Adam").is_none());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainRunConfig::default();
        assert!(c.validate().is_ok());
        c.inference_steps = 201;
        assert!(c.validate().is_err());
        c.inference_steps = 50;
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn generate_zero_and_repeat() {
        let s = DiffusionSchedule::new(20, SamplerKind::UnitHyperbola).unwrap();
        let m = Denoiser::new(2, &[8], TimeEmbedding::new(4, 1e4).unwrap(), 0).unwrap();
        assert!(generate_samples(&m, &s, 0, 10, 1).unwrap().is_empty());
        let a = generate_samples(&m, &s, 40, 10, 1).unwrap();
        let b = generate_samples(&m, &s, 40, 10, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
        assert!(generate_samples(&m, &s, 4, 21, 1).is_err());
    }
}
