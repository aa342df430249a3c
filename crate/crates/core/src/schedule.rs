//! Noise schedule and timestep samplers.
//!
//! Two samplers produce the ordered timestep sequence used for training
//! draws and for the reverse loop, both emitted in descending order:
//!
//! * `linear`: the integers `T−1, …, 0`;
//! * `unit_hyperbola`: `t = √(s² − 1)` for `T` evenly spaced `s` on
//!   `[1, √(T² + 1)]`, which runs from exactly `T` down to exactly `0`.
//!
//! Hyperbola timesteps are real-valued; [`DiffusionSchedule::alpha_bar_at`]
//! maps them onto the discrete `ᾱ` table by rounding to the nearest index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;
const REFERENCE_TIMESTEPS: f64 = 1000.0;
const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Linear,
    UnitHyperbola,
}

impl SamplerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Linear => "linear",
            SamplerKind::UnitHyperbola => "unit_hyperbola",
        }
    }

    pub fn timesteps(self, train_timesteps: usize) -> Result<Vec<f64>> {
        match self {
            SamplerKind::Linear => linear_timesteps(train_timesteps),
            SamplerKind::UnitHyperbola => hyperbola_timesteps(train_timesteps),
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(SamplerKind::Linear),
            "unit_hyperbola" => Ok(SamplerKind::UnitHyperbola),
            other => Err(Error::usage(format!(
                "unknown t_sampler `{other}` (expected linear or unit_hyperbola)"
            ))),
        }
    }
}

/// `[T−1, T−2, …, 0]`.
pub fn linear_timesteps(train_timesteps: usize) -> Result<Vec<f64>> {
    if train_timesteps == 0 {
        return Err(Error::usage("train_timesteps must be at least 1"));
    }
    Ok((0..train_timesteps).rev().map(|t| t as f64).collect())
}

/// Unit-hyperbola timesteps in descending order.
///
/// The top endpoint is evaluated as `√((T² + 1) − 1)` on the exact square
/// rather than through the rounded `√(T² + 1)`, so it comes out as `T`
/// exactly.
pub fn hyperbola_timesteps(train_timesteps: usize) -> Result<Vec<f64>> {
    if train_timesteps == 0 {
        return Err(Error::usage("train_timesteps must be at least 1"));
    }
    if train_timesteps == 1 {
        return Ok(vec![0.0]);
    }
    let n = train_timesteps;
    let t_max = n as f64;
    let end_sq = t_max * t_max + 1.0;
    let s_end = end_sq.sqrt();
    let step = (s_end - 1.0) / (n - 1) as f64;

    let mut ts = Vec::with_capacity(n);
    ts.push((end_sq - 1.0).sqrt());
    for i in (1..n - 1).rev() {
        let s = 1.0 + i as f64 * step;
        ts.push((s * s - 1.0).sqrt());
    }
    ts.push(0.0);
    Ok(ts)
}

/// Linear β schedule, its cumulative `ᾱ` table and the sampler sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    train_timesteps: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sampler: SamplerKind,
    timesteps: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear β schedule equivalent to `1e-4 → 0.02` over 1000 steps: both
    /// ends are multiplied by `1000 / T` (capped at 0.999) so shorter
    /// schedules still end close to pure noise.
    pub fn new(train_timesteps: usize, sampler: SamplerKind) -> Result<Self> {
        let scale = REFERENCE_TIMESTEPS / train_timesteps.max(1) as f64;
        Self::with_betas(
            train_timesteps,
            sampler,
            (BETA_START * scale).min(MAX_BETA),
            (BETA_END * scale).min(MAX_BETA),
        )
    }

    pub fn with_betas(
        train_timesteps: usize,
        sampler: SamplerKind,
        beta_start: f64,
        beta_end: f64,
    ) -> Result<Self> {
        if train_timesteps == 0 {
            return Err(Error::usage("train_timesteps must be at least 1"));
        }
        let in_range = |b: f64| b > 0.0 && b < 1.0;
        if !in_range(beta_start) || !in_range(beta_end) {
            return Err(Error::usage(format!(
                "betas must lie in (0, 1), got {beta_start}..{beta_end}"
            )));
        }
        let n = train_timesteps;
        let betas: Vec<f64> = if n == 1 {
            vec![beta_start]
        } else {
            (0..n)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (n - 1) as f64)
                .collect()
        };
        let alpha_bars = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            train_timesteps,
            betas,
            alpha_bars,
            sampler,
            timesteps: sampler.timesteps(n)?,
        })
    }

    pub fn train_timesteps(&self) -> usize {
        self.train_timesteps
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn sampler(&self) -> SamplerKind {
        self.sampler
    }

    /// The sampler's full descending sequence (length `T`).
    pub fn timesteps(&self) -> &[f64] {
        &self.timesteps
    }

    /// Index into the discrete tables for a real timestep.
    pub fn table_index(&self, t: f64) -> Result<usize> {
        let top = self.train_timesteps as f64;
        if !(0.0..=top).contains(&t) {
            return Err(Error::usage(format!("timestep {t} outside [0, {top}]")));
        }
        Ok((t.round() as usize).min(self.train_timesteps - 1))
    }

    /// `ᾱ` at the nearest table index, clamped to `[0, T−1]`.
    pub fn alpha_bar_at(&self, t: f64) -> Result<f64> {
        Ok(self.alpha_bars[self.table_index(t)?])
    }

    /// Descending subsequence of `inference_steps` timesteps taken at a
    /// uniform stride through the sampler sequence. Both ends are kept once
    /// two or more steps are requested.
    pub fn inference_timesteps(&self, inference_steps: usize) -> Result<Vec<f64>> {
        if inference_steps > self.train_timesteps {
            return Err(Error::usage(format!(
                "inference_steps {inference_steps} exceeds train_timesteps {}",
                self.train_timesteps
            )));
        }
        let last = self.train_timesteps - 1;
        let m = inference_steps;
        if m <= 1 {
            return Ok(self.timesteps[..m].to_vec());
        }
        Ok((0..m)
            .map(|k| self.timesteps[(k * last + (m - 1) / 2) / (m - 1)])
            .collect())
    }
}
