//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Every key maps to a training, model or baseline setting; unknown keys are
//! rejected.

use std::str::FromStr;

use dssl_core::gae::GaeConfig;
use dssl_core::loss::{GlobalEstimator, LocalEstimator};
use dssl_core::model::{Activation, Combine};
use dssl_core::train::{PrototypeUpdate, TrainConfig, TrainError};
use serde::Serialize;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`: {msg}")]
    Value {
        line: usize,
        key: String,
        value: String,
        msg: String,
    },
    #[error("invalid `{key}`: {msg}")]
    Invalid { key: String, msg: String },
}

/// Everything a training run needs, for either method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub negative_samples_per_edge: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            negative_samples_per_edge: 1,
        }
    }
}

/// Every accepted key, in documentation order.
pub const KEYS: &[&str] = &[
    "hidden",
    "output",
    "projector_hidden",
    "head_hidden",
    "combine",
    "projector_activation",
    "learning_rate",
    "weight_decay",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "batch_size",
    "neighbors",
    "full_neighborhood",
    "epochs",
    "tau",
    "seed",
    "eval_every",
    "degenerate_reinit_threshold",
    "prototype_update",
    "k",
    "beta",
    "sigma1_sq",
    "sigma2_sq",
    "gamma",
    "entropy_weight",
    "local_weight",
    "global_weight",
    "uniform_posterior",
    "local_estimator",
    "global_estimator",
    "negative_samples_per_edge",
];

fn parse_enum<T>(value: &str, options: &[(&str, T)]) -> Result<T, String>
where
    T: Copy,
{
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            format!("expected one of {}", names.join(", "))
        })
}

fn num<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| e.to_string())
}

impl RunConfig {
    /// Applies one setting. Errors carry only the reason; callers add the
    /// location.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Option<String>> {
        let t = &mut self.train;
        let h = &mut t.hyper;
        let r: Result<(), String> = (|| {
            match key {
                "hidden" => t.hidden = num(value)?,
                "output" => t.output = num(value)?,
                "projector_hidden" => t.projector_hidden = num(value)?,
                "head_hidden" => t.head_hidden = num(value)?,
                "combine" => {
                    t.combine = parse_enum(value, &[("concat", Combine::Concat), ("product", Combine::Product)])?
                }
                "projector_activation" => {
                    t.projector_activation =
                        parse_enum(value, &[("relu", Activation::Relu), ("identity", Activation::Identity)])?
                }
                "learning_rate" => t.learning_rate = num(value)?,
                "weight_decay" => t.weight_decay = num(value)?,
                "adam_beta1" => t.adam_beta1 = num(value)?,
                "adam_beta2" => t.adam_beta2 = num(value)?,
                "adam_eps" => t.adam_eps = num(value)?,
                "batch_size" => t.batch_size = num(value)?,
                "neighbors" => t.neighbors = num(value)?,
                "full_neighborhood" => t.full_neighborhood = num(value)?,
                "epochs" => t.epochs = num(value)?,
                "tau" => t.tau = num(value)?,
                "seed" => t.seed = num(value)?,
                "eval_every" => t.eval_every = num(value)?,
                "degenerate_reinit_threshold" => t.degenerate_reinit_threshold = num(value)?,
                "prototype_update" => {
                    t.prototype_update = parse_enum(
                        value,
                        &[
                            ("cached", PrototypeUpdate::Cached),
                            ("full", PrototypeUpdate::Full),
                            ("off", PrototypeUpdate::Off),
                        ],
                    )?
                }
                "k" => h.k = num(value)?,
                "beta" => h.beta = num(value)?,
                "sigma1_sq" => h.sigma1_sq = num(value)?,
                "sigma2_sq" => h.sigma2_sq = num(value)?,
                "gamma" => h.gamma = num(value)?,
                "entropy_weight" => h.entropy_weight = num(value)?,
                "local_weight" => h.local_weight = num(value)?,
                "global_weight" => h.global_weight = num(value)?,
                "uniform_posterior" => h.uniform_posterior = num(value)?,
                "local_estimator" => {
                    h.local_estimator = parse_enum(
                        value,
                        &[
                            ("soft", LocalEstimator::Soft),
                            ("straight_through", LocalEstimator::StraightThrough),
                            ("exact", LocalEstimator::Exact),
                        ],
                    )?
                }
                "global_estimator" => {
                    h.global_estimator =
                        parse_enum(value, &[("exact", GlobalEstimator::Exact), ("gumbel", GlobalEstimator::Gumbel)])?
                }
                "negative_samples_per_edge" => self.negative_samples_per_edge = num(value)?,
                _ => return Err(String::new()),
            }
            Ok(())
        })();
        r.map_err(|m| if m.is_empty() { None } else { Some(m) })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: body.to_string(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    text: body.to_string(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
            cfg.set(key, value).map_err(|m| match m {
                None => ConfigError::UnknownKey { line, key: key.into() },
                Some(msg) => ConfigError::Value {
                    line,
                    key: key.into(),
                    value: value.into(),
                    msg,
                },
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| {
            let msg = match e {
                TrainError::Config(m) => m,
                other => other.to_string(),
            };
            let first = msg.split_whitespace().next().unwrap_or("");
            let key = KEYS.iter().find(|k| **k == first).copied().unwrap_or("config");
            ConfigError::Invalid { key: key.into(), msg }
        })?;
        if self.negative_samples_per_edge == 0 {
            return Err(ConfigError::Invalid {
                key: "negative_samples_per_edge".into(),
                msg: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Baseline settings shared with the DSSL encoder and optimizer.
    pub fn gae(&self) -> GaeConfig {
        GaeConfig {
            hidden: self.train.hidden,
            output: self.train.output,
            learning_rate: self.train.learning_rate,
            weight_decay: self.train.weight_decay,
            epochs: self.train.epochs,
            negative_samples_per_edge: self.negative_samples_per_edge,
            seed: self.train.seed,
        }
    }
}
