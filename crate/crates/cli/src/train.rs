//! Minibatch training with KL annealing and a linearly decaying learning rate.
//!
//! Every random draw is keyed by the seed and a counter: the shuffle of epoch
//! `e` comes from stream `(seed ^ SHUFFLE_STREAM, e)` and the noise of step `s`
//! from stream `(seed, s)`. Parameters and Adam moments live at f32
//! precision, so a checkpoint captures the full state and a resumed run
//! continues bit-for-bit.

use std::fs::{File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use setvae::data::batch_pad;
use setvae::tensor::{Adam, AdamConfig, AdamState, TensorError};
use setvae::{Dataset, SetRng, SetVae};

use crate::checkpoint::{same_architecture, TrainState};
use crate::config::TrainConfig;
use crate::error::{CliError, Result};
use crate::schedule::{beta_schedule, clip_global_norm, lr_schedule};

const SHUFFLE_STREAM: u64 = 0x5348_5546;

pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.svae";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub total: f64,
    pub recon: f64,
    pub kl_sum: f64,
    pub beta: f64,
    pub lr: f64,
}

pub fn checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join(format!("ckpt_{step:07}.svae"))
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn round_to_f32(model: &mut SetVae) {
    for t in model.params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

fn open_log(path: &Path, append: bool) -> Result<csv::Writer<BufWriter<File>>> {
    let exists = path.exists();
    let file = if append {
        OpenOptions::new().create(true).append(true).open(path)?
    } else {
        File::create(path)?
    };
    Ok(csv::WriterBuilder::new()
        .has_headers(!(append && exists))
        .from_writer(BufWriter::new(file)))
}

/// Train on `ds`, writing the log and checkpoints into `out`. Returns the
/// final state, which is also saved as `final.svae`.
pub fn train(
    cfg: &TrainConfig,
    ds: &Dataset,
    out: &Path,
    resume: Option<&Path>,
    mut progress: impl FnMut(&LogRow),
) -> Result<TrainState> {
    cfg.validate()?;
    if ds.dim() != cfg.model.out_dim {
        return Err(CliError::Config(format!(
            "dataset is {}-D but out_dim = {}",
            ds.dim(),
            cfg.model.out_dim
        )));
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.txt"), cfg.to_text())?;

    let adam_cfg = AdamConfig {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
        f32_storage: true,
    };
    let mut state = match resume {
        Some(path) => {
            let st = TrainState::load(path)?;
            if !same_architecture(st.model.config(), &cfg.model) {
                return Err(CliError::Config(format!(
                    "checkpoint {} has a different architecture than the config",
                    path.display()
                )));
            }
            st
        }
        None => {
            let mut model = SetVae::new(cfg.model.clone(), cfg.seed)?;
            round_to_f32(&mut model);
            let adam = AdamState::for_params(model.params().tensors());
            TrainState {
                model,
                adam,
                cards: ds.cardinality_histogram().clone(),
            }
        }
    };
    // The checkpointed config only records the architecture.
    let mut model_cfg = state.model.config().clone();
    model_cfg.beta_max = cfg.model.beta_max;
    model_cfg.anneal_steps = cfg.model.anneal_steps;

    let total = cfg.total_steps(ds.len());
    let start = state.step();
    if start > total {
        return Err(CliError::Config(format!(
            "checkpoint is at step {start}, past the end of training ({total})"
        )));
    }
    let mut adam = Adam {
        config: adam_cfg,
        state: std::mem::replace(&mut state.adam, AdamState { step: 0, m: vec![], v: vec![] }),
    };
    let mut log = open_log(&out.join(LOG_FILE), resume.is_some())?;
    let per_epoch = ds.len().div_ceil(cfg.batch_size) as u64;
    let mut order: Option<(u64, Vec<usize>)> = None;
    let names = state.model.params().names().to_vec();

    for step in start..total {
        let epoch = step / per_epoch;
        if order.as_ref().map_or(true, |(e, _)| *e != epoch) {
            let mut rng = SetRng::stream(cfg.seed ^ SHUFFLE_STREAM, epoch);
            order = Some((epoch, rng.permutation(ds.len())));
        }
        let perm = &order.as_ref().unwrap().1;
        let i = (step % per_epoch) as usize * cfg.batch_size;
        let idx = &perm[i..(i + cfg.batch_size).min(ds.len())];
        let sets: Vec<_> = idx.iter().map(|&k| ds.sets()[k].clone()).collect();
        let batch = batch_pad(&sets)?;

        let beta = beta_schedule(step, model_cfg.anneal_steps, model_cfg.beta_max);
        let lr = lr_schedule(step, total, cfg.lr, cfg.lr_decay_start);
        let mut rng = SetRng::stream(cfg.seed, step);
        let (values, mut grads) = state.model.loss_and_grads(&batch, beta, &mut rng)?;
        if !values.total.is_finite() {
            log.flush()?;
            return Err(CliError::NonFiniteLoss { step });
        }
        clip_global_norm(&mut grads, cfg.clip_norm);
        match adam.step(state.model.params_mut().tensors_mut(), &names, &grads, lr) {
            Err(TensorError::NanGradient(_)) => {
                log.flush()?;
                return Err(CliError::NonFiniteLoss { step });
            }
            other => other.map_err(setvae::Error::from)?,
        }
        let row = LogRow {
            step,
            total: values.total,
            recon: values.recon,
            kl_sum: values.kl_sum,
            beta,
            lr,
        };
        log.serialize(row)?;
        progress(&row);
        if (step + 1) % cfg.checkpoint_every == 0 {
            log.flush()?;
            state.adam = adam.state.clone();
            state.save(&checkpoint_path(out, step + 1))?;
        }
    }
    log.flush()?;
    state.adam = adam.state;
    state.save(&out.join(FINAL_CHECKPOINT))?;
    Ok(state)
}
