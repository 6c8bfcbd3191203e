//! Flat `key = value` training configuration.
//!
//! ```text
//! # model
//! d = 64
//! enc_m = 32, 16, 8, 4, 2
//! gen_m = 2, 4, 8, 16, 32
//! lr = 1e-3
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors, as are
//! repeated keys.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use setvae::model::OutActivation;
use setvae::rng::GENERATOR_NAME;
use setvae::ModelConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of training after which the learning rate decays linearly to zero.
    pub lr_decay_start: f64,
    /// Stop after this many steps even if epochs remain.
    pub max_steps: Option<u64>,
    pub checkpoint_every: u64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 100,
            batch_size: 8,
            seed: 0,
            lr_decay_start: 0.5,
            max_steps: None,
            checkpoint_every: 500,
            clip_norm: 5.0,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CliError::Config(format!("line {}: {msg}", i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            cfg.set(key, value)
                .map_err(|e| err(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "d" => m.d = parse_num(key, v)?,
            "d_z" => m.d_z = parse_num(key, v)?,
            "heads" => m.heads = parse_num(key, v)?,
            "enc_m" => m.enc_m = parse_list(key, v)?,
            "gen_m" => m.gen_m = parse_list(key, v)?,
            "d0" => m.d0 = parse_num(key, v)?,
            "mixtures" => m.mixtures = parse_num(key, v)?,
            "out_dim" => m.out_dim = parse_num(key, v)?,
            "out_activation" => m.out_activation = OutActivation::parse(v)?,
            "ff_depth" => m.ff_depth = parse_num(key, v)?,
            "beta_max" => m.beta_max = parse_num(key, v)?,
            "anneal_steps" => m.anneal_steps = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "lr_decay_start" => self.lr_decay_start = parse_num(key, v)?,
            "max_steps" => self.max_steps = Some(parse_num(key, v)?),
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "clip_norm" => self.clip_norm = parse_num(key, v)?,
            "rng" => {
                if v != GENERATOR_NAME {
                    return Err(CliError::Config(format!(
                        "rng {v:?} unsupported, only {GENERATOR_NAME:?}"
                    )));
                }
            }
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let fail = |msg: &str| Err(CliError::Config(msg.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.checkpoint_every == 0 {
            return fail("epochs, batch_size and checkpoint_every must be positive");
        }
        if self.max_steps == Some(0) {
            return fail("max_steps must be positive");
        }
        if !(0.0..=1.0).contains(&self.lr_decay_start) {
            return fail("lr_decay_start must lie in [0, 1]");
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip_norm must be positive");
        }
        Ok(())
    }

    /// Steps in a run over `n_sets` training sets.
    pub fn total_steps(&self, n_sets: usize) -> u64 {
        let per_epoch = n_sets.div_ceil(self.batch_size) as u64;
        let by_epochs = self.epochs * per_epoch;
        self.max_steps.map_or(by_epochs, |m| m.min(by_epochs))
    }

    /// The configuration in the same format `parse` reads.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("d", m.d.to_string());
        kv("d_z", m.d_z.to_string());
        kv("heads", m.heads.to_string());
        kv("enc_m", join(&m.enc_m));
        kv("gen_m", join(&m.gen_m));
        kv("d0", m.d0.to_string());
        kv("mixtures", m.mixtures.to_string());
        kv("out_dim", m.out_dim.to_string());
        kv("out_activation", m.out_activation.as_str().to_string());
        kv("ff_depth", m.ff_depth.to_string());
        kv("beta_max", format!("{:?}", m.beta_max));
        kv("anneal_steps", m.anneal_steps.to_string());
        kv("lr", format!("{:?}", self.lr));
        kv("beta1", format!("{:?}", self.beta1));
        kv("beta2", format!("{:?}", self.beta2));
        kv("adam_eps", format!("{:?}", self.adam_eps));
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("lr_decay_start", format!("{:?}", self.lr_decay_start));
        if let Some(ms) = self.max_steps {
            kv("max_steps", ms.to_string());
        }
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("clip_norm", format!("{:?}", self.clip_norm));
        kv("rng", GENERATOR_NAME.to_string());
        s
    }
}
