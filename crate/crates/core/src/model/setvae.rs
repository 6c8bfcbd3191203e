use crate::attention::{AttentionParams, Isab, ProjectionMode};
use crate::data::SetBatch;
use crate::metrics::PointSet;
use crate::params::{Graph, Linear, ParamId, ParamSet};
use crate::rng::SetRng;
use crate::tensor::{Tensor, Var};
use crate::{Error, Result};

use super::config::{ModelConfig, OutActivation};
use super::loss::{chamfer_on_graph, elbo_loss, ElboTerms};
use super::prior::MogPrior;

/// Every log-scale head is clamped to this range before exponentiation.
pub const LOG_SIGMA_CLAMP: f64 = 7.0;

/// Attentive bottleneck layer: `ABL_m(x) = MAB(x, FF(z))` where `z` is drawn
/// from a Gaussian parameterized by the projection `h = MAB(I, x)`.
///
/// The top level has no upstream projection; its prior is a learnable
/// unconditional Gaussian.
#[derive(Debug, Clone)]
pub struct Abl {
    pub m: usize,
    pub d_z: usize,
    pub projection: Option<(ParamId, AttentionParams)>,
    pub top_prior: Option<(ParamId, ParamId)>,
    pub broad: AttentionParams,
    pub ff_z: Linear,
    pub ff_prior: Option<Linear>,
    pub ff_post: Linear,
}

#[derive(Debug, Clone, Copy)]
pub enum AblMode {
    Generate { temperature: f64 },
    Infer { h_enc: Var },
}

#[derive(Debug, Clone)]
pub struct AblOutput {
    pub x_out: Var,
    pub z: Var,
    pub mu: Var,
    pub log_sigma: Var,
    /// Posterior corrections `(Δµ, log Δσ)` in inference mode.
    pub posterior: Option<(Var, Var)>,
    pub kl: Option<Var>,
    pub h: Option<Var>,
    /// Per-head `A'` of the projection (m×n); empty at the top level.
    pub proj_weights: Vec<Var>,
    /// Per-head weights of `x` attending to `FF(z)` (n×m).
    pub broad_weights: Vec<Var>,
}

fn split_head(g: &mut Graph, out: Var, d_z: usize) -> Result<(Var, Var)> {
    let mu = g.slice_cols(out, 0, d_z)?;
    let raw = g.slice_cols(out, d_z, 2 * d_z)?;
    let ls = g.clamp(raw, -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP);
    Ok((mu, ls))
}

impl Abl {
    #[allow(clippy::too_many_arguments)]
    fn new(
        ps: &mut ParamSet,
        prefix: &str,
        top: bool,
        m: usize,
        cfg: &ModelConfig,
        rng: &mut SetRng,
    ) -> Result<Self> {
        let (d, d_z) = (cfg.d, cfg.d_z);
        let projection = if top {
            None
        } else {
            let inducing = ps.add_normal(format!("{prefix}.inducing"), &[m, d], rng);
            let proj = AttentionParams::new(ps, &format!("{prefix}.proj"), d, cfg.heads, cfg.ff_depth, rng)?;
            Some((inducing, proj))
        };
        let top_prior = top.then(|| {
            (
                ps.add(format!("{prefix}.prior_mu"), Tensor::zeros(&[m, d_z])),
                ps.add(format!("{prefix}.prior_log_sigma"), Tensor::zeros(&[m, d_z])),
            )
        });
        let broad = AttentionParams::new(ps, &format!("{prefix}.broad"), d, cfg.heads, cfg.ff_depth, rng)?;
        let ff_z = Linear::new(ps, &format!("{prefix}.ff_z"), d_z, d, rng);
        let ff_prior = (!top).then(|| Linear::new(ps, &format!("{prefix}.ff_prior"), d, 2 * d_z, rng));
        let ff_post = Linear::new(ps, &format!("{prefix}.ff_post"), d, 2 * d_z, rng);
        Ok(Self {
            m,
            d_z,
            projection,
            top_prior,
            broad,
            ff_z,
            ff_prior,
            ff_post,
        })
    }

    /// One bottleneck step. `eps` holds m×d_z standard-normal draws.
    pub fn step(
        &self,
        g: &mut Graph,
        x_in: Var,
        x_mask: Option<&[bool]>,
        mode: AblMode,
        eps: &[f64],
    ) -> Result<AblOutput> {
        let (m, d_z) = (self.m, self.d_z);
        let (h, proj_weights) = match &self.projection {
            Some((inducing, proj)) => {
                let i = g.param(*inducing);
                let out = proj.mab(g, i, x_in, x_mask, ProjectionMode::Slot)?;
                (Some(out.out), out.weights)
            }
            None => (None, Vec::new()),
        };
        let (mu, log_sigma) = match (&self.top_prior, &self.ff_prior, h) {
            (Some((mu, ls)), _, _) => {
                let mu = g.param(*mu);
                let raw = g.param(*ls);
                (mu, g.clamp(raw, -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP))
            }
            (None, Some(ff), Some(h)) => {
                let out = ff.forward(g, h)?;
                split_head(g, out, d_z)?
            }
            _ => unreachable!("non-top levels carry a projection and prior head"),
        };
        let eps = g.constant(&[m, d_z], eps.to_vec())?;
        let (z, posterior, kl) = match mode {
            AblMode::Generate { temperature } => {
                let sigma = g.exp(log_sigma);
                let noise = g.mul(sigma, eps)?;
                let noise = g.scale(noise, temperature);
                (g.add(mu, noise)?, None, None)
            }
            AblMode::Infer { h_enc } => {
                let rows = g.shape(h_enc)[0];
                if rows != m {
                    return Err(Error::LevelMismatch { enc: rows, level: m });
                }
                let input = match h {
                    Some(h) => g.add(h, h_enc)?,
                    None => h_enc,
                };
                let out = self.ff_post.forward(g, input)?;
                let (dmu, dls) = split_head(g, out, d_z)?;
                let mu_q = g.add(mu, dmu)?;
                let ls_q = g.add(log_sigma, dls)?;
                let sigma_q = g.exp(ls_q);
                let noise = g.mul(sigma_q, eps)?;
                let z = g.add(mu_q, noise)?;
                let kl = residual_kl(g, dmu, dls, log_sigma)?;
                (z, Some((dmu, dls)), Some(kl))
            }
        };
        let fz = self.ff_z.forward(g, z)?;
        let out = self.broad.mab(g, x_in, fz, None, ProjectionMode::Plain)?;
        Ok(AblOutput {
            x_out: out.out,
            z,
            mu,
            log_sigma,
            posterior,
            kl,
            h,
            proj_weights,
            broad_weights: out.weights,
        })
    }
}

/// `KL(N(µ+Δµ, σ·Δσ) ‖ N(µ, σ))` summed over entries:
/// `Σ −log Δσ + (Δσ² + Δµ²/σ²)/2 − 1/2`.
fn residual_kl(g: &mut Graph, dmu: Var, dls: Var, log_sigma: Var) -> Result<Var> {
    let two_dls = g.scale(dls, 2.0);
    let ds2 = g.exp(two_dls);
    let dmu2 = g.mul(dmu, dmu)?;
    let neg2ls = g.scale(log_sigma, -2.0);
    let inv_s2 = g.exp(neg2ls);
    let ratio = g.mul(dmu2, inv_s2)?;
    let quad = g.add(ds2, ratio)?;
    let quad = g.scale(quad, 0.5);
    let t = g.sub(quad, dls)?;
    let t = g.add_scalar(t, -0.5);
    Ok(g.sum_all(t))
}

/// Latents of one set, top level first.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelLatents {
    pub h: Option<Tensor>,
    pub z: Tensor,
    pub mu: Tensor,
    pub sigma: Tensor,
    pub delta_mu: Option<Tensor>,
    pub delta_sigma: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentHierarchy {
    pub z0: Tensor,
    pub components: Vec<usize>,
    pub levels: Vec<LevelLatents>,
}

/// Encoder outputs on a graph: projected sets bottom-up and the per-head
/// projection weights of every level.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub hs: Vec<Var>,
    pub proj_weights: Vec<Vec<Var>>,
}

#[derive(Debug, Clone)]
pub struct DecoderTrace {
    pub x_hat: Var,
    pub levels: Vec<AblOutput>,
}

#[derive(Debug, Clone)]
pub struct InferTrace {
    pub encoder: EncoderTrace,
    pub decoder: DecoderTrace,
    pub z0: Var,
    pub components: Vec<usize>,
    pub kls: Vec<Var>,
}

/// Result of inference on one set.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub recon: Tensor,
    pub kl_per_level: Vec<f64>,
    pub latents: LatentHierarchy,
}

/// Scalar values of one batch objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub recon: f64,
    pub kl_sum: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionSide {
    Encoder,
    Generator,
}

#[derive(Debug, Clone)]
pub struct SetVae {
    config: ModelConfig,
    params: ParamSet,
    enc_in: Linear,
    encoder: Vec<Isab>,
    prior: MogPrior,
    gen_in: Linear,
    generator: Vec<Abl>,
    out: Linear,
}

impl SetVae {
    /// Build a freshly initialized model. Initialization is a pure function
    /// of `config` and `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SetRng::stream(seed, 0x1417);
        let mut ps = ParamSet::new();
        let cfg = &config;
        let enc_in = Linear::new(&mut ps, "enc.input", cfg.out_dim, cfg.d, &mut rng);
        let encoder = cfg
            .enc_m
            .iter()
            .enumerate()
            .map(|(l, &m)| Isab::new(&mut ps, &format!("enc.isab{l}"), m, cfg.d, cfg.heads, cfg.ff_depth, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let prior = MogPrior::new(&mut ps, "gen.mog", cfg.mixtures, cfg.d0, &mut rng);
        let gen_in = Linear::new(&mut ps, "gen.input", cfg.d0, cfg.d, &mut rng);
        let generator = cfg
            .gen_m
            .iter()
            .enumerate()
            .map(|(l, &m)| Abl::new(&mut ps, &format!("gen.abl{l}"), l == 0, m, cfg, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let out = Linear::new(&mut ps, "gen.output", cfg.d, cfg.out_dim, &mut rng);
        Ok(Self {
            config,
            params: ps,
            enc_in,
            encoder,
            prior,
            gen_in,
            generator,
            out,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn prior(&self) -> &MogPrior {
        &self.prior
    }

    pub fn generator_layers(&self) -> &[Abl] {
        &self.generator
    }

    pub fn encoder_layers(&self) -> &[Isab] {
        &self.encoder
    }

    /// Fresh level noise, one m_l×d_z block per generator level.
    pub fn draw_level_noise(&self, rng: &mut SetRng) -> Vec<Vec<f64>> {
        self.config
            .gen_m
            .iter()
            .map(|&m| rng.normals(m * self.config.d_z))
            .collect()
    }

    pub fn encode_on(&self, g: &mut Graph, x: Var, mask: Option<&[bool]>) -> Result<EncoderTrace> {
        let rows = g.shape(x)[0];
        if let Some(m) = mask {
            if m.len() != rows {
                return Err(Error::CardinalityMismatch(m.len(), rows));
            }
        }
        if rows == 0 || mask.is_some_and(|m| !m.iter().any(|&b| b)) {
            return Err(Error::Empty("cardinality 0 set"));
        }
        let mut h = self.enc_in.forward(g, x)?;
        let mut hs = Vec::with_capacity(self.encoder.len());
        let mut proj_weights = Vec::with_capacity(self.encoder.len());
        for isab in &self.encoder {
            let out = isab.forward(g, h, mask)?;
            hs.push(out.h);
            proj_weights.push(out.proj_weights);
            h = out.out;
        }
        Ok(EncoderTrace { hs, proj_weights })
    }

    /// Top-down pass from the initial set. With `h_enc` (bottom-up encoder
    /// outputs) the layers run in inference mode; otherwise they sample the
    /// prior at `temperature`.
    pub fn decode_on(
        &self,
        g: &mut Graph,
        z0: Var,
        h_enc: Option<&[Var]>,
        temperature: f64,
        level_noise: &[Vec<f64>],
    ) -> Result<DecoderTrace> {
        let levels = self.generator.len();
        if level_noise.len() != levels {
            return Err(Error::CardinalityMismatch(level_noise.len(), levels));
        }
        if let Some(hs) = h_enc {
            if hs.len() != levels {
                return Err(Error::Config(format!(
                    "encoder has {} levels, generator {}",
                    hs.len(),
                    levels
                )));
            }
        }
        let mut x = self.gen_in.forward(g, z0)?;
        let mut outs = Vec::with_capacity(levels);
        for (l, abl) in self.generator.iter().enumerate() {
            let mode = match h_enc {
                Some(hs) => AblMode::Infer {
                    h_enc: hs[levels - 1 - l],
                },
                None => AblMode::Generate { temperature },
            };
            let out = abl.step(g, x, None, mode, &level_noise[l])?;
            x = out.x_out;
            outs.push(out);
        }
        let y = self.out.forward(g, x)?;
        let x_hat = match self.config.out_activation {
            OutActivation::None => y,
            OutActivation::Tanh01 => {
                let t = g.tanh(y);
                let t = g.add_scalar(t, 1.0);
                g.scale(t, 0.5)
            }
        };
        Ok(DecoderTrace { x_hat, levels: outs })
    }

    /// Inference for one (possibly padded) set: encode, draw `z0` from the
    /// prior with the true cardinality, then decode in inference mode.
    pub fn infer_on(
        &self,
        g: &mut Graph,
        x: Var,
        mask: Option<&[bool]>,
        rng: &mut SetRng,
    ) -> Result<InferTrace> {
        let card = mask.map_or(g.shape(x)[0], |m| m.iter().filter(|&&b| b).count());
        let encoder = self.encode_on(g, x, mask)?;
        let (components, eps) = self.prior.draw(&self.params, card, rng);
        let noise = self.draw_level_noise(rng);
        let z0 = self.prior.realize(g, &components, &eps)?;
        let decoder = self.decode_on(g, z0, Some(&encoder.hs), 1.0, &noise)?;
        let kls = decoder.levels.iter().map(|o| o.kl.unwrap()).collect();
        Ok(InferTrace {
            encoder,
            decoder,
            z0,
            components,
            kls,
        })
    }

    /// Batch objective on a graph. Sets are processed in batch order on the
    /// padded element block with their masks.
    pub fn loss_on(&self, g: &mut Graph, batch: &SetBatch, beta: f64, rng: &mut SetRng) -> Result<ElboTerms> {
        let dim = batch.dim();
        if dim != self.config.out_dim {
            return Err(Error::DimMismatch(dim, self.config.out_dim));
        }
        let mut recon = Vec::with_capacity(batch.len());
        let mut kls = Vec::with_capacity(batch.len());
        for b in 0..batch.len() {
            let x = g.constant(&[batch.n_max(), dim], batch.padded(b).to_vec())?;
            let trace = self.infer_on(g, x, Some(batch.mask(b)), rng)?;
            let target = g.constant(&[batch.cards()[b], dim], batch.unpadded(b).to_vec())?;
            recon.push(chamfer_on_graph(g, target, trace.decoder.x_hat)?);
            kls.push(trace.kls);
        }
        elbo_loss(g, &recon, &kls, beta)
    }

    pub fn loss(&self, batch: &SetBatch, beta: f64, rng: &mut SetRng) -> Result<LossValues> {
        let mut g = Graph::new(&self.params);
        let terms = self.loss_on(&mut g, batch, beta, rng)?;
        Ok(terms.values(&g, beta))
    }

    pub fn loss_and_grads(
        &self,
        batch: &SetBatch,
        beta: f64,
        rng: &mut SetRng,
    ) -> Result<(LossValues, Vec<Vec<f64>>)> {
        let mut g = Graph::new(&self.params);
        let terms = self.loss_on(&mut g, batch, beta, rng)?;
        g.backward(terms.total)?;
        Ok((terms.values(&g, beta), g.param_grads()))
    }

    /// Projected sets `h` of every encoder level, per set in the batch.
    pub fn encode(&self, batch: &SetBatch) -> Result<Vec<Vec<Tensor>>> {
        (0..batch.len())
            .map(|b| {
                let mut g = Graph::new(&self.params);
                let x = g.constant(&[batch.n_max(), batch.dim()], batch.padded(b).to_vec())?;
                let trace = self.encode_on(&mut g, x, Some(batch.mask(b)))?;
                Ok(trace.hs.iter().map(|&h| g.to_tensor(h)).collect())
            })
            .collect()
    }

    pub fn infer(&self, batch: &SetBatch, rng: &mut SetRng) -> Result<Vec<Inference>> {
        (0..batch.len())
            .map(|b| {
                let mut g = Graph::new(&self.params);
                let x = g.constant(&[batch.n_max(), batch.dim()], batch.padded(b).to_vec())?;
                let trace = self.infer_on(&mut g, x, Some(batch.mask(b)), rng)?;
                Ok(Inference {
                    recon: g.to_tensor(trace.decoder.x_hat),
                    kl_per_level: trace.kls.iter().map(|&k| g.scalar(k)).collect(),
                    latents: collect_latents(&g, trace.z0, trace.components, &trace.decoder),
                })
            })
            .collect()
    }

    /// Sample a set of exactly `n` elements.
    pub fn generate(&self, n: usize, rng: &mut SetRng, temperature: f64) -> Result<(Tensor, LatentHierarchy)> {
        if n == 0 {
            return Err(Error::Empty("requested cardinality 0"));
        }
        let (components, eps) = self.prior.draw(&self.params, n, rng);
        let noise = self.draw_level_noise(rng);
        let mut g = Graph::new(&self.params);
        let z0 = self.prior.realize(&mut g, &components, &eps)?;
        let dec = self.decode_on(&mut g, z0, None, temperature, &noise)?;
        Ok((g.to_tensor(dec.x_hat), collect_latents(&g, z0, components, &dec)))
    }

    /// Deterministic generation from a given initial set and level noise.
    pub fn generate_from(
        &self,
        z0: &Tensor,
        level_noise: &[Vec<f64>],
        temperature: f64,
    ) -> Result<(Tensor, LatentHierarchy)> {
        if z0.rank() != 2 || z0.cols() != self.config.d0 {
            return Err(Error::DimMismatch(z0.cols(), self.config.d0));
        }
        let mut g = Graph::new(&self.params);
        let z = g.leaf(z0);
        let dec = self.decode_on(&mut g, z, None, temperature, level_noise)?;
        Ok((g.to_tensor(dec.x_hat), collect_latents(&g, z, Vec::new(), &dec)))
    }

    /// Argmax attention assignment of every point at 1-based `level`.
    ///
    /// Encoder side: input points, assigned to the inducing point with the
    /// largest slot weight `A'`. Generator side: points of the reconstruction,
    /// assigned to the latent element they attend to most. Ties go to the
    /// lowest id. Returns the coordinates alongside the assignments.
    pub fn attention_assignments(
        &self,
        set: &PointSet,
        side: AttentionSide,
        level: usize,
        head: usize,
        rng: &mut SetRng,
    ) -> Result<(PointSet, Vec<usize>)> {
        let levels = self.config.levels();
        if level == 0 || level > levels {
            return Err(Error::Config(format!("level {level} outside 1..={levels}")));
        }
        if head >= self.config.heads {
            return Err(Error::Config(format!("head {head} outside 0..{}", self.config.heads)));
        }
        if set.dim() != self.config.out_dim {
            return Err(Error::DimMismatch(set.dim(), self.config.out_dim));
        }
        let mut g = Graph::new(&self.params);
        let x = g.constant(&[set.len(), set.dim()], set.coords().to_vec())?;
        match side {
            AttentionSide::Encoder => {
                let enc = self.encode_on(&mut g, x, None)?;
                let w = enc.proj_weights[level - 1][head];
                let (m, n) = (g.shape(w)[0], g.shape(w)[1]);
                let vals = g.value(w);
                let ids = (0..n)
                    .map(|j| argmax((0..m).map(|i| vals[i * n + j])))
                    .collect();
                Ok((set.clone(), ids))
            }
            AttentionSide::Generator => {
                let trace = self.infer_on(&mut g, x, None, rng)?;
                let w = trace.decoder.levels[level - 1].broad_weights[head];
                let (n, m) = (g.shape(w)[0], g.shape(w)[1]);
                let vals = g.value(w);
                let ids = (0..n).map(|i| argmax(vals[i * m..(i + 1) * m].iter().copied())).collect();
                let pts = PointSet::new(self.config.out_dim, g.value(trace.decoder.x_hat).to_vec())?;
                Ok((pts, ids))
            }
        }
    }
}

fn argmax(vals: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in vals.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn collect_latents(g: &Graph, z0: Var, components: Vec<usize>, dec: &DecoderTrace) -> LatentHierarchy {
    let exp = |v: Var| {
        let t = g.to_tensor(v);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x.exp()).collect()).unwrap()
    };
    LatentHierarchy {
        z0: g.to_tensor(z0),
        components,
        levels: dec
            .levels
            .iter()
            .map(|o| LevelLatents {
                h: o.h.map(|h| g.to_tensor(h)),
                z: g.to_tensor(o.z),
                mu: g.to_tensor(o.mu),
                sigma: exp(o.log_sigma),
                delta_mu: o.posterior.map(|(dm, _)| g.to_tensor(dm)),
                delta_sigma: o.posterior.map(|(_, ds)| exp(ds)),
            })
            .collect(),
    }
}
