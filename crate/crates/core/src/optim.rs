//! SGD, AdamW and their Poincaré-ball counterparts.
//!
//! All four optimizers share one step signature over aligned lists of
//! parameter and gradient tensors. The hyperbolic variants rescale each
//! Euclidean gradient by the conformal factor of its own tensor and
//! retract the updated tensor into the ball:
//!
//! ```text
//! g_hyp = (1 − ‖θ‖²)² / 4 · g
//! θ     = Proj(θ − γ · update(g_hyp))
//! ```
//!
//! AdamW weight decay is decoupled: it shrinks θ directly and never enters
//! the moment estimates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{conformal_factor, project_in_place, ParamTensor, DEFAULT_PROJ_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    HyperSgd,
    AdamW,
    HyperAdamW,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Sgd,
        OptimizerKind::HyperSgd,
        OptimizerKind::AdamW,
        OptimizerKind::HyperAdamW,
    ];

    pub fn is_hyperbolic(self) -> bool {
        matches!(self, OptimizerKind::HyperSgd | OptimizerKind::HyperAdamW)
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, OptimizerKind::AdamW | OptimizerKind::HyperAdamW)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::HyperSgd => "hyper_sgd",
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::HyperAdamW => "hyper_adamw",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "hyper_sgd" => Ok(OptimizerKind::HyperSgd),
            "adamw" => Ok(OptimizerKind::AdamW),
            "hyper_adamw" => Ok(OptimizerKind::HyperAdamW),
            other => Err(Error::usage(format!(
                "unknown optimizer `{other}` (expected sgd, hyper_sgd, adamw, hyper_adamw)"
            ))),
        }
    }
}

/// Switches for the two Riemannian ingredients of the hyperbolic steps.
///
/// Both default to on. Turning both off reduces a hyperbolic optimizer to
/// its Euclidean counterpart, which is how the equivalence tests and the
/// ablation runs use it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiemannianSwitches {
    pub rescale: bool,
    pub project: bool,
}

impl Default for RiemannianSwitches {
    fn default() -> Self {
        Self {
            rescale: true,
            project: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub proj_eps: f64,
    pub switches: RiemannianSwitches,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            adam_eps: 1e-8,
            proj_eps: DEFAULT_PROJ_EPS,
            switches: RiemannianSwitches::default(),
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn with_adam_eps(mut self, adam_eps: f64) -> Self {
        self.adam_eps = adam_eps;
        self
    }

    pub fn with_switches(mut self, switches: RiemannianSwitches) -> Self {
        self.switches = switches;
        self
    }

    pub fn hyperbolic(&self) -> bool {
        self.kind.is_hyperbolic()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::usage(format!("lr {} must be positive", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::usage(format!("{name} {b} must lie in [0, 1)")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::usage(format!(
                "weight_decay {} must be non-negative",
                self.weight_decay
            )));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::usage(format!(
                "adam_eps {} must be positive",
                self.adam_eps
            )));
        }
        if !(self.proj_eps > 0.0 && self.proj_eps < 1.0) {
            return Err(Error::usage(format!(
                "proj_eps {} must lie in (0, 1)",
                self.proj_eps
            )));
        }
        Ok(())
    }
}

/// Per-tensor moment estimates and the step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step_count: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure_moments(&mut self, params: &[ParamTensor]) -> Result<()> {
        if self.m.is_empty() && self.v.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
            return Ok(());
        }
        let aligned = self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(p, (m, v))| m.len() == p.len() && v.len() == p.len());
        if !aligned {
            return Err(Error::usage(
                "optimizer state does not match the parameter list",
            ));
        }
        Ok(())
    }
}

fn check_inputs(params: &[ParamTensor], grads: &[ParamTensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::usage(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::usage(format!(
                "tensor {i}: parameter shape {:?} vs gradient shape {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { index: i });
        }
    }
    Ok(())
}

/// Conformal factor for θ, or 1 when rescaling is switched off. Tensors
/// sitting on or outside the sphere are retracted first when projection is on.
fn hyperbolic_factor(theta: &mut ParamTensor, config: &OptimizerConfig, index: usize) -> Result<f64> {
    if config.switches.project {
        project_in_place(theta, config.proj_eps)?;
    }
    if !config.switches.rescale {
        return Ok(1.0);
    }
    let n = theta.norm();
    if !(n < 1.0) {
        return Err(Error::domain(format!(
            "tensor {index} has norm {n} outside the unit ball"
        )));
    }
    Ok(conformal_factor(n * n))
}

fn retract(theta: &mut ParamTensor, config: &OptimizerConfig) -> Result<()> {
    if config.switches.project {
        project_in_place(theta, config.proj_eps)?;
    }
    Ok(())
}

/// `θ ← θ − γ g`.
pub fn sgd_step(
    params: &mut [ParamTensor],
    grads: &[ParamTensor],
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<()> {
    check_inputs(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (x, gx) in p.data.iter_mut().zip(&g.data) {
            *x -= config.lr * gx;
        }
    }
    state.step_count += 1;
    Ok(())
}

/// Riemannian SGD on the ball: `θ ← Proj(θ − γ · (1 − ‖θ‖²)²/4 · g)`.
pub fn hyper_sgd_step(
    params: &mut [ParamTensor],
    grads: &[ParamTensor],
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<()> {
    check_inputs(params, grads)?;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let factor = hyperbolic_factor(p, config, i)?;
        for (x, gx) in p.data.iter_mut().zip(&g.data) {
            *x -= config.lr * (factor * gx);
        }
        retract(p, config)?;
    }
    state.step_count += 1;
    Ok(())
}

/// Shared AdamW body. `factors[i]` scales tensor `i`'s gradient before it
/// enters the moments; `None` means the plain Euclidean gradient.
fn adamw_core(
    params: &mut [ParamTensor],
    grads: &[ParamTensor],
    factors: Option<&[f64]>,
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) {
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let (lr, wd) = (config.lr, config.weight_decay);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let factor = factors.map(|f| f[i]);
        for (j, x) in p.data.iter_mut().enumerate() {
            let gj = match factor {
                Some(f) => f * g.data[j],
                None => g.data[j],
            };
            *x -= lr * wd * *x;
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + config.adam_eps);
        }
    }
}

/// AdamW with bias correction and decoupled weight decay.
pub fn adamw_step(
    params: &mut [ParamTensor],
    grads: &[ParamTensor],
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<()> {
    check_inputs(params, grads)?;
    state.ensure_moments(params)?;
    adamw_core(params, grads, None, config, state);
    Ok(())
}

/// AdamW driven by the conformally rescaled gradient, with each updated
/// tensor retracted into the ball.
pub fn hyper_adamw_step(
    params: &mut [ParamTensor],
    grads: &[ParamTensor],
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<()> {
    check_inputs(params, grads)?;
    state.ensure_moments(params)?;
    let factors = params
        .iter_mut()
        .enumerate()
        .map(|(i, p)| hyperbolic_factor(p, config, i))
        .collect::<Result<Vec<_>>>()?;
    let factors = config.switches.rescale.then_some(factors.as_slice());
    adamw_core(params, grads, factors, config, state);
    for p in params.iter_mut() {
        retract(p, config)?;
    }
    Ok(())
}

/// Scale a tensor into the ball: divide by `max(1, ‖θ‖ / (1 − ε))`.
pub fn register_in_ball(params: &mut [ParamTensor], proj_eps: f64) {
    for p in params {
        let n = p.norm();
        let div = (n / (1.0 - proj_eps)).max(1.0);
        if div > 1.0 {
            for x in &mut p.data {
                *x /= div;
            }
        }
    }
}

/// An optimizer instance: configuration plus the state it owns.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: OptimizerState::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// Prepare parameters for this optimizer. Hyperbolic optimizers pull
    /// every tensor strictly inside the ball; Euclidean ones leave them alone.
    pub fn register(&self, params: &mut [ParamTensor]) {
        if self.config.hyperbolic() && self.config.switches.project {
            register_in_ball(params, self.config.proj_eps);
        }
    }

    pub fn step(&mut self, params: &mut [ParamTensor], grads: &[ParamTensor]) -> Result<()> {
        let step = match self.config.kind {
            OptimizerKind::Sgd => sgd_step,
            OptimizerKind::HyperSgd => hyper_sgd_step,
            OptimizerKind::AdamW => adamw_step,
            OptimizerKind::HyperAdamW => hyper_adamw_step,
        };
        step(params, grads, &self.config, &mut self.state)
    }
}
