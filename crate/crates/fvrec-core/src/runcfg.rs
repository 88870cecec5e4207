//! Flat run configuration: `key = value` lines with `#` comments, every key
//! documented with a default, unknown keys rejected. CLI `--set key=value`
//! overrides file values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::objectives::LossWeights;
use crate::training::TrainConfig;

/// (key, default, doc). The single source of truth for the key set.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "42", "master seed; all randomness derives from it"),
    ("data.min_rating", "4", "movielens: ratings >= this become positives"),
    ("data.min_item_positives", "5", "movielens: drop items with fewer positives"),
    ("data.min_item_events", "110", "lastfm: drop artists with fewer listening events"),
    ("data.lastfm_value", "count", "lastfm third column: count | timestamp"),
    ("data.age_threshold", "35", "age >= threshold is the senior group"),
    ("data.frac_train", "0.8", "fraction of users in the training split"),
    ("data.frac_val", "0.1", "fraction of users in the validation split"),
    ("data.frac_test", "0.1", "fraction of users in the test split"),
    ("data.foldin_fraction", "0.8", "share of an evaluation user's items fed to the encoder"),
    ("data.dropout", "0.5", "input dropout rate during training"),
    ("model.variant", "vaerec", "vaerec | vaeadv | vaegan | vaeemp | slim"),
    ("model.latent", "auto", "latent dimension; auto = 64 for vaerec, 24 otherwise"),
    ("model.split_z", "auto", "dimension of z; auto = latent for unsplit variants, 16 for split"),
    ("model.hidden", "600", "encoder/decoder hidden widths, comma separated"),
    ("model.adv_hidden", "64,64", "adversary/discriminator hidden widths"),
    ("obj.beta", "auto", "prior KL weight; auto = 0.2 for vaerec, 1.0 otherwise"),
    ("obj.alpha", "10", "sensitive re-classification weight (split variants)"),
    ("obj.gamma", "5", "independence penalty weight (split variants)"),
    ("obj.lambda_adv", "1", "adversary fooling weight (vaeadv)"),
    ("train.epochs", "200", "epoch budget"),
    ("train.batch", "500", "minibatch size"),
    ("train.lr", "0.001", "optimizer learning rate"),
    ("train.patience", "20", "early stopping patience (epochs)"),
    ("train.adv_steps", "5", "adversary/discriminator updates per main update"),
    ("slim.l1", "1", "slim l1 penalty"),
    ("slim.l2", "1", "slim l2 penalty"),
    ("slim.max_iters", "100", "slim coordinate descent sweep cap"),
    ("slim.tol", "0.0001", "slim stopping tolerance on coordinate change"),
    ("eval.k", "10", "NDCG cutoff"),
    ("eval.list_k", "100", "list length for chi-square and Kendall-Tau"),
    ("eval.bootstrap", "1000", "bootstrap resamples for metric spreads"),
    ("eval.sampled", "false", "also evaluate with sampled latent states"),
    ("eval.probe_folds", "5", "cross-validation folds of the AUC probe"),
    ("eval.probe_l2", "1", "L2 strength of the AUC probe"),
    ("synth.users", "2000", "synthetic: number of users"),
    ("synth.items", "300", "synthetic: number of items"),
    ("synth.factors", "8", "synthetic: latent factor dimension"),
    ("synth.rho", "0.9", "synthetic: factor-attribute correlation in [0,1)"),
    ("synth.min_items", "20", "synthetic: minimum interactions per user"),
    ("synth.max_items", "60", "synthetic: maximum interactions per user"),
    ("synth.temp", "2", "synthetic: softmax temperature"),
];

/// What `model.variant` selects: a VAE variant or the SLIM baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Vae(Variant),
    Slim,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS
                .iter()
                .map(|(k, d, _)| (k.to_string(), d.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        for (i, raw) in content.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected 'key = value', got '{raw}'",
                    path.display(),
                    i + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one key, rejecting unknown names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.iter().any(|(k, _, _)| *k == key) {
            return Err(Error::Config(format!("unknown config key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override from the command line.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{spec}'")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("unknown config key '{key}' requested"))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)
            .parse()
            .map_err(|_| Error::Config(format!("{key} = '{}' is not a number", self.get(key))))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)
            .parse()
            .map_err(|_| Error::Config(format!("{key} = '{}' is not a count", self.get(key))))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.get(key)
            .parse()
            .map_err(|_| Error::Config(format!("{key} = '{}' is not an integer", self.get(key))))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(Error::Config(format!(
                "{key} = '{other}' must be true or false"
            ))),
        }
    }

    pub fn get_widths(&self, key: &str) -> Result<Vec<usize>> {
        self.get(key)
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: bad width '{s}'")))
            })
            .collect()
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        match self.get("model.variant") {
            "slim" => Ok(ModelKind::Slim),
            other => Ok(ModelKind::Vae(other.parse()?)),
        }
    }

    /// Resolves the `auto` architecture/weight defaults for a VAE variant.
    pub fn resolve_model(&self, variant: Variant, n_items: usize) -> Result<ModelConfig> {
        let latent = match self.get("model.latent") {
            "auto" => match variant {
                Variant::VaeRec => 64,
                _ => 24,
            },
            v => v
                .parse()
                .map_err(|_| Error::Config(format!("model.latent = '{v}' is not a count")))?,
        };
        let split = match self.get("model.split_z") {
            "auto" => {
                if variant.uses_split_latent() {
                    // z = 16 of 24 by default; scale proportionally otherwise
                    (latent * 2) / 3
                } else {
                    latent
                }
            }
            v => v
                .parse()
                .map_err(|_| Error::Config(format!("model.split_z = '{v}' is not a count")))?,
        };
        let cfg = ModelConfig {
            variant,
            n_items,
            hidden: self.get_widths("model.hidden")?,
            latent,
            split,
            adv_hidden: self.get_widths("model.adv_hidden")?,
            n_attrs: 2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_beta(&self, variant: Variant) -> Result<f64> {
        match self.get("obj.beta") {
            "auto" => Ok(match variant {
                Variant::VaeRec => 0.2,
                _ => 1.0,
            }),
            v => v
                .parse()
                .map_err(|_| Error::Config(format!("obj.beta = '{v}' is not a number"))),
        }
    }

    pub fn loss_weights(&self, variant: Variant) -> Result<LossWeights> {
        Ok(LossWeights {
            beta: self.resolve_beta(variant)?,
            alpha: self.get_f64("obj.alpha")?,
            gamma: self.get_f64("obj.gamma")?,
            lambda_adv: self.get_f64("obj.lambda_adv")?,
        })
    }

    pub fn train_config(&self, variant: Variant, quiet: bool) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.get_usize("train.epochs")?,
            batch_size: self.get_usize("train.batch")?,
            seed: self.get_u64("seed")?,
            adv_steps: self.get_usize("train.adv_steps")?,
            patience: self.get_usize("train.patience")?,
            lr: self.get_f64("train.lr")?,
            weights: self.loss_weights(variant)?,
            dropout: self.get_f64("data.dropout")?,
            foldin_fraction: self.get_f64("data.foldin_fraction")?,
            k: self.get_usize("eval.k")?,
            probe_folds: self.get_usize("eval.probe_folds")?,
            probe_l2: self.get_f64("eval.probe_l2")?,
            quiet,
        })
    }

    pub fn split_fractions(&self) -> Result<(f64, f64, f64)> {
        Ok((
            self.get_f64("data.frac_train")?,
            self.get_f64("data.frac_val")?,
            self.get_f64("data.frac_test")?,
        ))
    }

    /// Effective configuration, one sorted `key = value` line each.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// The documented key table for --help-style output.
    pub fn describe_keys() -> String {
        let mut out = String::new();
        for (k, d, doc) in KEYS {
            let _ = writeln!(out, "{k:24} default {d:10} {doc}");
        }
        out
    }
}
