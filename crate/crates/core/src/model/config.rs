use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutActivation {
    None,
    /// `(tanh(y) + 1) / 2`, mapping outputs into (0, 1).
    Tanh01,
}

impl OutActivation {
    pub fn as_str(self) -> &'static str {
        match self {
            OutActivation::None => "none",
            OutActivation::Tanh01 => "tanh01",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(OutActivation::None),
            "tanh01" => Ok(OutActivation::Tanh01),
            other => Err(Error::Config(format!("unknown out_activation {other:?}"))),
        }
    }
}

/// Architecture and objective hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Model width.
    pub d: usize,
    /// Latent channels per level.
    pub d_z: usize,
    pub heads: usize,
    /// Encoder inducing counts, bottom-up.
    pub enc_m: Vec<usize>,
    /// Generator latent cardinalities, top-down; nondecreasing.
    pub gen_m: Vec<usize>,
    /// Initial-set element dimension.
    pub d0: usize,
    /// Mixture components of the initial-set prior.
    pub mixtures: usize,
    /// Element dimension of data and outputs (2 or 3).
    pub out_dim: usize,
    pub out_activation: OutActivation,
    /// 1: single affine FF in every MAB; 2: two layers with ReLU.
    pub ff_depth: usize,
    pub beta_max: f64,
    pub anneal_steps: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            d_z: 16,
            heads: 4,
            enc_m: vec![32, 16, 8, 4, 2],
            gen_m: vec![2, 4, 8, 16, 32],
            d0: 32,
            mixtures: 4,
            out_dim: 2,
            out_activation: OutActivation::Tanh01,
            ff_depth: 1,
            beta_max: 0.01,
            anneal_steps: 500,
        }
    }
}

impl ModelConfig {
    pub fn levels(&self) -> usize {
        self.gen_m.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("d", self.d),
            ("d_z", self.d_z),
            ("heads", self.heads),
            ("d0", self.d0),
            ("mixtures", self.mixtures),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.d % self.heads != 0 {
            return fail(format!("d = {} is not divisible by heads = {}", self.d, self.heads));
        }
        if !(2..=3).contains(&self.out_dim) {
            return fail(format!("out_dim must be 2 or 3, got {}", self.out_dim));
        }
        if !(1..=2).contains(&self.ff_depth) {
            return fail(format!("ff_depth must be 1 or 2, got {}", self.ff_depth));
        }
        if self.gen_m.is_empty() || self.enc_m.is_empty() {
            return fail("enc_m and gen_m must be nonempty".into());
        }
        if self.gen_m.iter().chain(&self.enc_m).any(|&m| m == 0) {
            return fail("inducing counts must be positive".into());
        }
        if self.gen_m.windows(2).any(|w| w[0] > w[1]) {
            return fail(format!("gen_m must be nondecreasing, got {:?}", self.gen_m));
        }
        let reversed: Vec<usize> = self.enc_m.iter().rev().copied().collect();
        if reversed != self.gen_m {
            return fail(format!(
                "reversed enc_m {:?} must equal gen_m {:?}",
                reversed, self.gen_m
            ));
        }
        if !(self.beta_max >= 0.0 && self.beta_max.is_finite()) {
            return fail(format!("beta_max must be nonnegative, got {}", self.beta_max));
        }
        Ok(())
    }
}
