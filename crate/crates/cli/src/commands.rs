//! Subcommand bodies, callable without going through argument parsing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use setvae::data::{batch_pad, gen_synthetic, load_jsonl, save_jsonl, write_jsonl, SyntheticKind};
use setvae::metrics::{chamfer, evaluate, Distance, MetricReport};
use setvae::model::AttentionSide;
use setvae::{Dataset, PointSet, SetRng};

use crate::checkpoint::TrainState;
use crate::config::TrainConfig;
use crate::error::{CliError, Result};
use crate::train::{train, LogRow, FINAL_CHECKPOINT};

pub fn cmd_train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    resume: Option<&Path>,
    progress: impl FnMut(&LogRow),
) -> Result<PathBuf> {
    let mut cfg = match config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let ds = load_jsonl(data)?;
    train(&cfg, &ds, out, resume, progress)?;
    Ok(out.join(FINAL_CHECKPOINT))
}

pub struct SampleOptions {
    /// Cardinality of every sample; drawn from the training histogram if absent.
    pub n: Option<usize>,
    pub num_samples: usize,
    pub temperature: f64,
    /// Reuse one draw of the hierarchical latents' noise for every sample and
    /// resample only the initial set.
    pub fix_latents: bool,
    pub seed: u64,
}

pub fn sample_sets(state: &TrainState, opts: &SampleOptions) -> Result<Vec<PointSet>> {
    if opts.num_samples == 0 {
        return Err(CliError::Config("--num-samples must be positive".into()));
    }
    if !(opts.temperature >= 0.0 && opts.temperature.is_finite()) {
        return Err(CliError::Config("--temperature must be nonnegative".into()));
    }
    let model = &state.model;
    let dim = model.config().out_dim;
    let mut rng = SetRng::new(opts.seed);
    let fixed = opts.fix_latents.then(|| model.draw_level_noise(&mut rng));
    let mut out = Vec::with_capacity(opts.num_samples);
    for _ in 0..opts.num_samples {
        let n = opts.n.unwrap_or_else(|| state.cards.sample(&mut rng));
        let x = match &fixed {
            Some(noise) => {
                let (z0, _) = model.prior().sample(model.params(), n, &mut rng)?;
                model.generate_from(&z0, noise, opts.temperature)?.0
            }
            None => model.generate(n, &mut rng, opts.temperature)?.0,
        };
        out.push(PointSet::new(dim, x.into_data())?);
    }
    Ok(out)
}

pub fn cmd_sample(ckpt: &Path, opts: &SampleOptions, out: &Path) -> Result<()> {
    let state = TrainState::load(ckpt)?;
    let sets = sample_sets(&state, opts)?;
    let mut w = BufWriter::new(File::create(out)?);
    write_jsonl(&sets, &[], &mut w)?;
    w.flush()?;
    Ok(())
}

/// Metrics as stored, plus the conventionally scaled values for display.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub raw: MetricReport,
    pub display: Display,
}

#[derive(Debug, Clone, Serialize)]
pub struct Display {
    pub mmd: f64,
    pub mmd_scale: f64,
    pub cov_percent: f64,
    pub one_nna_percent: f64,
}

pub fn eval_report(gen: &Dataset, reference: &Dataset, distance: Distance) -> Result<EvalReport> {
    let raw = evaluate(gen.sets(), reference.sets(), distance)?;
    let scale = match distance {
        Distance::Cd => 1e3,
        Distance::Emd => 1e2,
    };
    Ok(EvalReport {
        raw,
        display: Display {
            mmd: raw.mmd * scale,
            mmd_scale: scale,
            cov_percent: raw.cov * 100.0,
            one_nna_percent: raw.one_nna * 100.0,
        },
    })
}

pub fn cmd_eval(gen: &Path, reference: &Path, distance: Distance) -> Result<String> {
    let report = eval_report(&load_jsonl(gen)?, &load_jsonl(reference)?, distance)?;
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub recon: PointSet,
    pub cd: f64,
    pub kl_per_level: Vec<f64>,
}

/// Reconstruct each set through the full inference path; set `i` uses noise
/// stream `(seed, i)`.
pub fn reconstruct_sets(state: &TrainState, ds: &Dataset, seed: u64) -> Result<Vec<Reconstruction>> {
    let dim = state.model.config().out_dim;
    ds.sets()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let batch = batch_pad(std::slice::from_ref(s))?;
            let mut rng = SetRng::stream(seed, i as u64);
            let inf = state.model.infer(&batch, &mut rng)?.remove(0);
            let recon = PointSet::new(dim, inf.recon.into_data())?;
            let cd = chamfer(s, &recon)?;
            Ok(Reconstruction {
                recon,
                cd,
                kl_per_level: inf.kl_per_level,
            })
        })
        .collect()
}

/// Writes reconstructions to `out` and per-set CD and KL to `sidecar`.
pub fn cmd_reconstruct(ckpt: &Path, data: &Path, out: &Path, sidecar: &Path, seed: u64) -> Result<()> {
    let state = TrainState::load(ckpt)?;
    let ds = load_jsonl(data)?;
    let recs = reconstruct_sets(&state, &ds, seed)?;
    let sets: Vec<PointSet> = recs.iter().map(|r| r.recon.clone()).collect();
    let mut w = BufWriter::new(File::create(out)?);
    write_jsonl(&sets, ds.labels(), &mut w)?;
    w.flush()?;

    let mut csv = csv::Writer::from_path(sidecar)?;
    let levels = state.model.config().levels();
    let mut header = vec!["set_id".to_string(), "n".into(), "cd".into()];
    header.extend((1..=levels).map(|l| format!("kl_{l}")));
    csv.write_record(&header)?;
    for (i, r) in recs.iter().enumerate() {
        let mut row = vec![i.to_string(), r.recon.len().to_string(), format!("{:?}", r.cd)];
        row.extend(r.kl_per_level.iter().map(|k| format!("{k:?}")));
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn parse_side(s: &str) -> Result<AttentionSide> {
    match s {
        "encoder" => Ok(AttentionSide::Encoder),
        "generator" => Ok(AttentionSide::Generator),
        other => Err(CliError::Config(format!("unknown side {other:?}, expected encoder or generator"))),
    }
}

pub struct AttnOptions {
    pub level: usize,
    pub side: AttentionSide,
    pub head: usize,
    pub seed: u64,
}

/// One `(set_id, point, assignment)` row per point.
pub fn attention_rows(state: &TrainState, ds: &Dataset, opts: &AttnOptions) -> Result<Vec<(usize, Vec<f64>, usize)>> {
    let mut rows = Vec::new();
    for (i, s) in ds.sets().iter().enumerate() {
        let mut rng = SetRng::stream(opts.seed, i as u64);
        let (pts, ids) = state
            .model
            .attention_assignments(s, opts.side, opts.level, opts.head, &mut rng)?;
        for (p, id) in pts.points().zip(ids) {
            rows.push((i, p.to_vec(), id));
        }
    }
    Ok(rows)
}

pub fn cmd_attn_export(ckpt: &Path, data: &Path, opts: &AttnOptions, out: &Path) -> Result<()> {
    let state = TrainState::load(ckpt)?;
    let ds = load_jsonl(data)?;
    let rows = attention_rows(&state, &ds, opts)?;
    let mut csv = csv::Writer::from_path(out)?;
    let mut header = vec!["set_id", "px", "py"];
    if ds.dim() == 3 {
        header.push("pz");
    }
    header.push("assignment");
    csv.write_record(&header)?;
    for (i, p, id) in rows {
        let mut rec = vec![i.to_string()];
        rec.extend(p.iter().map(|v| format!("{v:?}")));
        rec.push(id.to_string());
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

pub struct SynthOptions {
    pub kinds: Vec<SyntheticKind>,
    pub count: usize,
    pub n_range: (usize, usize),
    pub noise_sd: f64,
    pub seed: u64,
}

/// `count` sets of each kind, concatenated in the given order.
pub fn synth_dataset(opts: &SynthOptions) -> Result<Dataset> {
    let mut rng = SetRng::new(opts.seed);
    let mut ds: Option<Dataset> = None;
    for &kind in &opts.kinds {
        let part = gen_synthetic(kind, opts.count, opts.n_range, opts.noise_sd, &mut rng)?;
        ds = Some(match ds {
            None => part,
            Some(d) => d.concat(part)?,
        });
    }
    ds.ok_or_else(|| CliError::Config("no dataset kind given".into()))
}

pub fn cmd_synth(opts: &SynthOptions, out: &Path) -> Result<()> {
    save_jsonl(&synth_dataset(opts)?, out)?;
    Ok(())
}
