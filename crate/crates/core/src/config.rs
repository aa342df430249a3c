//! Flat `key = value` run configuration files.
//!
//! One assignment per line; blank lines and lines starting with `#` are
//! ignored. Keys mirror [`TrainRunConfig`] plus `output`, `format` and
//! `replicates`. Unknown or repeated keys are rejected so a typo cannot
//! silently fall back to a default.
//!
//! ```text
//! # group-2 style run
//! optimizer = hyper_adamw
//! t_sampler = unit_hyperbola
//! lr = 0.0002
//! hidden = 128,128
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::diffusion::TrainRunConfig;
use crate::error::{Error, Result};
use crate::records::Format;

pub const KEYS: &[&str] = &[
    "label",
    "optimizer",
    "t_sampler",
    "loss",
    "lr",
    "weight_decay",
    "epochs",
    "batch_size",
    "train_timesteps",
    "inference_steps",
    "seed",
    "dataset",
    "n_points",
    "hidden",
    "embed_dim",
    "max_period",
    "metric_every",
    "metric_samples",
    "loss_delta",
    "output",
    "format",
    "replicates",
];

/// Parsed assignments, validated against [`KEYS`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

/// Settings outside the training configuration itself.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputSettings {
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub replicates: Option<usize>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", i + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::Parse(format!("line {}: unknown key `{key}`", i + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Parse(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Overwrite the fields present in the file.
    pub fn apply(&self, cfg: &mut TrainRunConfig) -> Result<OutputSettings> {
        fn set<T: FromStr>(file: &ConfigFile, key: &str, slot: &mut T) -> Result<()>
        where
            T::Err: std::fmt::Display,
        {
            if let Some(v) = file.get(key) {
                *slot = v
                    .parse()
                    .map_err(|e| Error::Parse(format!("key `{key}`: {e}")))?;
            }
            Ok(())
        }
        set(self, "label", &mut cfg.label)?;
        set(self, "optimizer", &mut cfg.optimizer)?;
        set(self, "t_sampler", &mut cfg.t_sampler)?;
        set(self, "loss", &mut cfg.loss)?;
        set(self, "lr", &mut cfg.lr)?;
        set(self, "weight_decay", &mut cfg.weight_decay)?;
        set(self, "epochs", &mut cfg.epochs)?;
        set(self, "batch_size", &mut cfg.batch_size)?;
        set(self, "train_timesteps", &mut cfg.train_timesteps)?;
        set(self, "inference_steps", &mut cfg.inference_steps)?;
        set(self, "seed", &mut cfg.seed)?;
        set(self, "dataset", &mut cfg.dataset)?;
        set(self, "n_points", &mut cfg.n_points)?;
        set(self, "embed_dim", &mut cfg.embed_dim)?;
        set(self, "max_period", &mut cfg.max_period)?;
        set(self, "metric_every", &mut cfg.metric_every)?;
        set(self, "metric_samples", &mut cfg.metric_samples)?;
        set(self, "loss_delta", &mut cfg.loss_delta)?;
        if let Some(v) = self.get("hidden") {
            cfg.hidden = parse_widths(v)?;
        }
        let mut out = OutputSettings::default();
        if let Some(v) = self.get("output") {
            out.output = Some(PathBuf::from(v));
        }
        if let Some(v) = self.get("format") {
            out.format = Some(v.parse()?);
        }
        if let Some(v) = self.get("replicates") {
            out.replicates = Some(
                v.parse()
                    .map_err(|e| Error::Parse(format!("key `replicates`: {e}")))?,
            );
        }
        Ok(out)
    }
}

/// Comma-separated layer widths; an empty string means no hidden layers.
pub fn parse_widths(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|w| {
            w.trim()
                .parse()
                .map_err(|e| Error::Parse(format!("hidden width `{w}`: {e}")))
        })
        .collect()
}
