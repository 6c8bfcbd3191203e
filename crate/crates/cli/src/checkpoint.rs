//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SVAE"  u32 version  u32 count  tensor*count      model section
//!                      u32 count  tensor*count      optimizer section
//! u64 FNV-1a of every preceding byte
//!
//! tensor = u32 name_len, name (UTF-8), u32 rank, u32 dims[rank], f32 payload
//! ```
//!
//! The model section holds every parameter plus `meta.*` tensors describing
//! the architecture and the training cardinality histogram. The optimizer
//! section holds `adam.step` and one `adam.m.<name>` / `adam.v.<name>` pair
//! per parameter.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use setvae::model::OutActivation;
use setvae::tensor::AdamState;
use setvae::{CardinalityDist, ModelConfig, SetVae, Tensor};

use crate::error::{CliError, Result};

pub const MAGIC: [u8; 4] = *b"SVAE";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Vec<(String, Tensor)>,
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| CliError::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_section(out: &mut Vec<u8>, tensors: &[(String, Tensor)]) -> Result<()> {
    put_u32(out, tensors.len())?;
    for (name, t) in tensors {
        put_u32(out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(out, t.rank())?;
        for &d in t.shape() {
            put_u32(out, d)?;
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CliError::Checkpoint("unexpected end of payload".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn section(&mut self) -> Result<Vec<(String, Tensor)>> {
        let count = self.u32()?;
        let mut out = Vec::new();
        for _ in 0..count {
            let len = self.u32()?;
            let name = String::from_utf8(self.take(len)?.to_vec())
                .map_err(|_| CliError::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = self.u32()?;
            let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| CliError::Checkpoint(format!("{name}: shape overflows")))?;
            let payload = self.take(numel.checked_mul(4).unwrap_or(usize::MAX))?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| CliError::Checkpoint(format!("{name}: {e}")))?;
            out.push((name, t));
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_section(&mut out, &self.tensors)?;
        put_section(&mut out, &self.optimizer)?;
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let magic: [u8; 4] = bytes.get(..4).map_or([0; 4], |m| m.try_into().unwrap());
        if magic != MAGIC {
            return Err(CliError::BadMagic(magic));
        }
        if let Some(v) = bytes.get(4..8) {
            let found = u32::from_le_bytes(v.try_into().unwrap());
            if found != VERSION {
                return Err(CliError::BadVersion {
                    found,
                    expected: VERSION,
                });
            }
        }
        if bytes.len() < 16 {
            return Err(CliError::Checksum {
                stored: 0,
                computed: checksum(bytes),
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        let computed = checksum(body);
        if stored != computed {
            return Err(CliError::Checksum { stored, computed });
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let tensors = r.section()?;
        let optimizer = r.section()?;
        if r.pos != body.len() {
            return Err(CliError::Checkpoint("trailing bytes after optimizer section".into()));
        }
        Ok(Self { tensors, optimizer })
    }

    /// Write via a temporary file and rename, so an interrupted write never
    /// replaces a good checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Everything a run needs to continue or to serve sampling.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: SetVae,
    pub adam: AdamState,
    pub cards: CardinalityDist,
}

fn f32_exact(v: usize, what: &str) -> Result<f64> {
    if v >= 1 << 24 {
        return Err(CliError::Checkpoint(format!("{what} {v} is not representable")));
    }
    Ok(v as f64)
}

fn vector(vals: Vec<f64>) -> Tensor {
    let n = vals.len();
    Tensor::new(vec![n], vals).unwrap()
}

fn arch_tensor(cfg: &ModelConfig) -> Result<Vec<(String, Tensor)>> {
    let ints = [
        cfg.d,
        cfg.d_z,
        cfg.heads,
        cfg.d0,
        cfg.mixtures,
        cfg.out_dim,
        match cfg.out_activation {
            OutActivation::None => 0,
            OutActivation::Tanh01 => 1,
        },
        cfg.ff_depth,
    ];
    let enc = cfg.enc_m.iter().map(|&m| f32_exact(m, "enc_m")).collect::<Result<_>>()?;
    let gen = cfg.gen_m.iter().map(|&m| f32_exact(m, "gen_m")).collect::<Result<_>>()?;
    Ok(vec![
        (
            "meta.model".into(),
            vector(ints.iter().map(|&v| f32_exact(v, "model size")).collect::<Result<_>>()?),
        ),
        ("meta.enc_m".into(), vector(enc)),
        ("meta.gen_m".into(), vector(gen)),
    ])
}

fn as_usize(v: f64, what: &str) -> Result<usize> {
    if v < 0.0 || v.fract() != 0.0 {
        return Err(CliError::Checkpoint(format!("{what}: {v} is not a count")));
    }
    Ok(v as usize)
}

fn arch_from(get: &HashMap<&str, &Tensor>) -> Result<ModelConfig> {
    let need = |k: &str| {
        get.get(k)
            .copied()
            .ok_or_else(|| CliError::Checkpoint(format!("missing {k}")))
    };
    let m = need("meta.model")?.data();
    if m.len() != 8 {
        return Err(CliError::Checkpoint("meta.model has wrong length".into()));
    }
    let u = |i: usize| as_usize(m[i], "meta.model");
    let list = |k: &str| -> Result<Vec<usize>> { need(k)?.data().iter().map(|&v| as_usize(v, k)).collect() };
    let cfg = ModelConfig {
        d: u(0)?,
        d_z: u(1)?,
        heads: u(2)?,
        d0: u(3)?,
        mixtures: u(4)?,
        out_dim: u(5)?,
        out_activation: match u(6)? {
            0 => OutActivation::None,
            1 => OutActivation::Tanh01,
            c => return Err(CliError::Checkpoint(format!("unknown activation code {c}"))),
        },
        ff_depth: u(7)?,
        enc_m: list("meta.enc_m")?,
        gen_m: list("meta.gen_m")?,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// True when two configurations describe the same parameter layout.
pub fn same_architecture(a: &ModelConfig, b: &ModelConfig) -> bool {
    (a.d, a.d_z, a.heads, a.d0, a.mixtures, a.out_dim, a.out_activation, a.ff_depth, &a.enc_m, &a.gen_m)
        == (b.d, b.d_z, b.heads, b.d0, b.mixtures, b.out_dim, b.out_activation, b.ff_depth, &b.enc_m, &b.gen_m)
}

impl TrainState {
    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let ps = self.model.params();
        let mut tensors: Vec<(String, Tensor)> = ps
            .names()
            .iter()
            .cloned()
            .zip(ps.tensors().iter().map(|t| Tensor::new(t.shape().to_vec(), t.data().to_vec()).unwrap()))
            .collect();
        tensors.extend(arch_tensor(self.model.config())?);
        let mut rows = Vec::new();
        for (&n, &c) in self.cards.counts() {
            rows.push(f32_exact(n, "cardinality")?);
            rows.push(f32_exact(c as usize, "cardinality count")?);
        }
        let k = rows.len() / 2;
        tensors.push(("meta.cards".into(), Tensor::new(vec![k, 2], rows).unwrap()));

        let step = self.adam.step;
        if step >= 1 << 40 {
            return Err(CliError::Checkpoint(format!("step {step} is not representable")));
        }
        let mut optimizer = vec![(
            "adam.step".to_string(),
            vector(vec![(step >> 20) as f64, (step & 0xF_FFFF) as f64]),
        )];
        for (name, m) in ps.names().iter().zip(&self.adam.m) {
            optimizer.push((format!("adam.m.{name}"), m.clone()));
        }
        for (name, v) in ps.names().iter().zip(&self.adam.v) {
            optimizer.push((format!("adam.v.{name}"), v.clone()));
        }
        Ok(Checkpoint { tensors, optimizer })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut by_name: HashMap<&str, &Tensor> = HashMap::new();
        for (name, t) in ckpt.tensors.iter().chain(&ckpt.optimizer) {
            if by_name.insert(name, t).is_some() {
                return Err(CliError::Checkpoint(format!("duplicate tensor {name}")));
            }
        }
        let config = arch_from(&by_name)?;
        let mut model = SetVae::new(config, 0)?;
        let names = model.params().names().to_vec();
        let known: std::collections::HashSet<&str> = names.iter().map(String::as_str).collect();
        if let Some((extra, _)) = ckpt
            .tensors
            .iter()
            .find(|(n, _)| !n.starts_with("meta.") && !known.contains(n.as_str()))
        {
            return Err(CliError::Checkpoint(format!("unknown parameter {extra}")));
        }
        let fetch = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = by_name
                .get(name)
                .ok_or_else(|| CliError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(CliError::Checkpoint(format!(
                    "{name}: shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok((*t).clone())
        };
        let shapes: Vec<Vec<usize>> = model.params().tensors().iter().map(|t| t.shape().to_vec()).collect();
        for (name, shape) in names.iter().zip(&shapes) {
            let t = fetch(name, shape)?;
            model.params_mut().assign(name, t.data()).unwrap();
        }
        let step = fetch("adam.step", &[2])?;
        let (hi, lo) = (as_usize(step.data()[0], "adam.step")?, as_usize(step.data()[1], "adam.step")?);
        let mut adam = AdamState {
            step: ((hi as u64) << 20) | lo as u64,
            m: Vec::new(),
            v: Vec::new(),
        };
        for (name, shape) in names.iter().zip(&shapes) {
            adam.m.push(fetch(&format!("adam.m.{name}"), shape)?);
            adam.v.push(fetch(&format!("adam.v.{name}"), shape)?);
        }
        let cards_t = by_name
            .get("meta.cards")
            .ok_or_else(|| CliError::Checkpoint("missing meta.cards".into()))?;
        if cards_t.rank() != 2 || cards_t.cols() != 2 {
            return Err(CliError::Checkpoint("meta.cards must be k×2".into()));
        }
        let mut counts = BTreeMap::new();
        for row in cards_t.data().chunks(2) {
            counts.insert(as_usize(row[0], "meta.cards")?, as_usize(row[1], "meta.cards")? as u64);
        }
        let cards = CardinalityDist::from_counts(counts)?;
        Ok(Self { model, adam, cards })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
