//! Permutation-equivariant attention blocks.
//!
//! `MAB(Q, V) = LN(a + FF(a))` with `a = LN(Q + Multihead(Q, V, V))`, and the
//! induced block `ISAB(x) = MAB(x, h)` with `h = MAB(I, x)`. When a MAB
//! projects onto inducing points the attention is slot-normalized: softmax
//! over the query axis, then each query row renormalized over keys, so every
//! unmasked key contributes a total weight of exactly one.

use crate::params::{Graph, Linear, ParamId, ParamSet};
use crate::rng::SetRng;
use crate::tensor::Var;
use crate::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    /// Softmax over keys for each query.
    Plain,
    /// Softmax over queries for each key, then row renormalization.
    Slot,
}

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    fn new(ps: &mut ParamSet, prefix: &str, d: usize) -> Self {
        use crate::tensor::Tensor;
        Self {
            gain: ps.add(format!("{prefix}.gain"), Tensor::filled(&[d], 1.0)),
            bias: ps.add(format!("{prefix}.bias"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        Ok(g.layer_norm(x, gain, bias, LN_EPS)?)
    }
}

/// Row-wise feed-forward: one affine layer, or two with a ReLU between.
#[derive(Debug, Clone)]
pub struct FeedForward {
    layers: Vec<Linear>,
}

impl FeedForward {
    pub fn new(ps: &mut ParamSet, prefix: &str, d: usize, depth: usize, rng: &mut SetRng) -> Self {
        let layers = (0..depth.max(1))
            .map(|i| Linear::new(ps, &format!("{prefix}.{i}"), d, d, rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = g.relu(h);
            }
            h = layer.forward(g, h)?;
        }
        Ok(h)
    }
}

/// Weights of one multihead attention block and its MAB wrapper.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ff: FeedForward,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
    pub heads: usize,
    pub d: usize,
}

/// Result of a MAB: the output rows plus one weight matrix per head
/// (`n_q × n_v`; in slot mode the query-axis softmax before renormalization).
#[derive(Debug, Clone)]
pub struct MabOutput {
    pub out: Var,
    pub weights: Vec<Var>,
}

impl AttentionParams {
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        d: usize,
        heads: usize,
        ff_depth: usize,
        rng: &mut SetRng,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "width {d} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(ps, &format!("{prefix}.q"), d, d, rng),
            k: Linear::new(ps, &format!("{prefix}.k"), d, d, rng),
            v: Linear::new(ps, &format!("{prefix}.v"), d, d, rng),
            o: Linear::new(ps, &format!("{prefix}.o"), d, d, rng),
            ff: FeedForward::new(ps, &format!("{prefix}.ff"), d, ff_depth, rng),
            ln1: LayerNormParams::new(ps, &format!("{prefix}.ln1"), d),
            ln2: LayerNormParams::new(ps, &format!("{prefix}.ln2"), d),
            heads,
            d,
        })
    }

    /// Multihead attention of `q` over keys `k` and values `v`, followed by
    /// the output map. Masked keys receive weight exactly zero.
    pub fn multihead(
        &self,
        g: &mut Graph,
        q: Var,
        k: Var,
        v: Var,
        key_mask: Option<&[bool]>,
        mode: ProjectionMode,
    ) -> Result<MabOutput> {
        let d = self.d;
        for &x in &[q, k, v] {
            let s = g.shape(x);
            if s.len() != 2 || s[1] != d {
                return Err(Error::DimMismatch(s.last().copied().unwrap_or(0), d));
            }
        }
        if g.shape(k)[0] != g.shape(v)[0] {
            return Err(Error::CardinalityMismatch(g.shape(k)[0], g.shape(v)[0]));
        }
        let qp = self.q.forward(g, q)?;
        let kp = self.k.forward(g, k)?;
        let vp = self.v.forward(g, v)?;
        let dh = d / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (qp, kp, vp)
            } else {
                let (a, b) = (h * dh, (h + 1) * dh);
                (g.slice_cols(qp, a, b)?, g.slice_cols(kp, a, b)?, g.slice_cols(vp, a, b)?)
            };
            let w = match mode {
                ProjectionMode::Plain => {
                    let scores = scores(g, qh, kh)?;
                    let w = g.softmax(scores, 1, key_mask)?;
                    weights.push(w);
                    w
                }
                ProjectionMode::Slot => {
                    let sw = slot_attention_weights(g, qh, kh, key_mask)?;
                    weights.push(sw.column_softmax);
                    sw.weights
                }
            };
            outs.push(g.matmul(w, vh)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        let out = self.o.forward(g, cat)?;
        Ok(MabOutput { out, weights })
    }

    /// `MAB(Q, V) = LN(a + FF(a))`, `a = LN(Q + Multihead(Q, V, V))`.
    pub fn mab(
        &self,
        g: &mut Graph,
        q: Var,
        v: Var,
        key_mask: Option<&[bool]>,
        mode: ProjectionMode,
    ) -> Result<MabOutput> {
        let att = self.multihead(g, q, v, v, key_mask, mode)?;
        let res = g.add(q, att.out)?;
        let a = self.ln1.forward(g, res)?;
        let ff = self.ff.forward(g, a)?;
        let res2 = g.add(a, ff)?;
        let out = self.ln2.forward(g, res2)?;
        Ok(MabOutput {
            out,
            weights: att.weights,
        })
    }
}

fn scores(g: &mut Graph, q: Var, k: Var) -> Result<Var> {
    let dh = g.shape(q)[1];
    let kt = g.transpose(k)?;
    let a = g.matmul(q, kt)?;
    Ok(g.scale(a, 1.0 / (dh as f64).sqrt()))
}

#[derive(Debug, Clone, Copy)]
pub struct SlotWeights {
    /// `A'`: softmax of the scores over the query (inducing point) axis.
    pub column_softmax: Var,
    /// `W'`: `A'` with each row renormalized over the unmasked keys.
    pub weights: Var,
}

/// Slot-normalized attention weights for queries `q` (m×d_h) over keys
/// `k` (n×d_h). Masked key columns are zero in both matrices.
pub fn slot_attention_weights(
    g: &mut Graph,
    q: Var,
    k: Var,
    key_mask: Option<&[bool]>,
) -> Result<SlotWeights> {
    let n = g.shape(k)[0];
    let m = g.shape(q)[0];
    if let Some(mask) = key_mask {
        if mask.len() != n {
            return Err(Error::CardinalityMismatch(mask.len(), n));
        }
        if !mask.iter().any(|&b| b) {
            return Err(Error::NoKeys);
        }
    }
    let a = scores(g, q, k)?;
    let mut col = g.softmax(a, 0, None)?;
    if let Some(mask) = key_mask {
        if mask.iter().any(|&b| !b) {
            let keep: Vec<f64> = (0..m)
                .flat_map(|_| mask.iter().map(|&b| if b { 1.0 } else { 0.0 }))
                .collect();
            let keep = g.constant(&[m, n], keep)?;
            col = g.mul(col, keep)?;
        }
    }
    let weights = g.normalize(col, 1)?;
    Ok(SlotWeights {
        column_softmax: col,
        weights,
    })
}

/// Induced set attention block with `m` learnable inducing points.
#[derive(Debug, Clone)]
pub struct Isab {
    pub inducing: ParamId,
    pub proj: AttentionParams,
    pub broad: AttentionParams,
    pub m: usize,
}

#[derive(Debug, Clone)]
pub struct IsabOutput {
    pub out: Var,
    pub h: Var,
    /// Per-head `A'` (m×n) of the projection step.
    pub proj_weights: Vec<Var>,
}

impl Isab {
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        m: usize,
        d: usize,
        heads: usize,
        ff_depth: usize,
        rng: &mut SetRng,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("inducing point count must be at least 1".into()));
        }
        Ok(Self {
            inducing: ps.add_normal(format!("{prefix}.inducing"), &[m, d], rng),
            proj: AttentionParams::new(ps, &format!("{prefix}.proj"), d, heads, ff_depth, rng)?,
            broad: AttentionParams::new(ps, &format!("{prefix}.broad"), d, heads, ff_depth, rng)?,
            m,
        })
    }

    /// `h = MAB(I, x)` in slot mode, then `out = MAB(x, h)`.
    pub fn forward(&self, g: &mut Graph, x: Var, mask: Option<&[bool]>) -> Result<IsabOutput> {
        let i = g.param(self.inducing);
        let proj = self.proj.mab(g, i, x, mask, ProjectionMode::Slot)?;
        let out = self.broad.mab(g, x, proj.out, None, ProjectionMode::Plain)?;
        Ok(IsabOutput {
            out: out.out,
            h: proj.out,
            proj_weights: proj.weights,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn setup(d: usize, heads: usize) -> (ParamSet, AttentionParams) {
        let mut rng = SetRng::new(11);
        let mut ps = ParamSet::new();
        let p = AttentionParams::new(&mut ps, "mab", d, heads, 1, &mut rng).unwrap();
        (ps, p)
    }

    #[test]
    fn heads_must_divide_width() {
        let mut rng = SetRng::new(0);
        let mut ps = ParamSet::new();
        let err = AttentionParams::new(&mut ps, "x", 6, 4, 1, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn single_key_output_ignores_scores() {
        let (ps, p) = setup(4, 2);
        let mut rng = SetRng::new(3);
        let q = Tensor::new(vec![3, 4], rng.normals(12)).unwrap();
        let v = Tensor::new(vec![1, 4], rng.normals(4)).unwrap();
        let mut g = Graph::new(&ps);
        let qv = g.leaf(&q);
        let vv = g.leaf(&v);
        let out = p.multihead(&mut g, qv, vv, vv, None, ProjectionMode::Plain).unwrap();
        // Every query row equals o(v(value)).
        let vp = p.v.forward(&mut g, vv).unwrap();
        let expect = p.o.forward(&mut g, vp).unwrap();
        let e = g.value(expect).to_vec();
        for row in g.value(out.out).chunks(4) {
            for (a, b) in row.iter().zip(&e) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mab_shape_contract() {
        let (ps, p) = setup(8, 4);
        let mut rng = SetRng::new(5);
        for nv in [1, 3, 10] {
            let mut g = Graph::new(&ps);
            let q = g.constant(&[5, 8], rng.normals(40)).unwrap();
            let v = g.constant(&[nv, 8], rng.normals(nv * 8)).unwrap();
            let out = p.mab(&mut g, q, v, None, ProjectionMode::Plain).unwrap();
            assert_eq!(g.shape(out.out), &[5, 8]);
        }
    }

    #[test]
    fn single_slot_weights_are_uniform() {
        let ps = ParamSet::new();
        let mut rng = SetRng::new(9);
        let mut g = Graph::new(&ps);
        let q = g.constant(&[1, 4], rng.normals(4)).unwrap();
        let k = g.constant(&[5, 4], rng.normals(20)).unwrap();
        let mask = [true, true, false, true, true];
        let sw = slot_attention_weights(&mut g, q, k, Some(&mask)).unwrap();
        let w = g.value(sw.weights);
        for (j, &keep) in mask.iter().enumerate() {
            let expect = if keep { 0.25 } else { 0.0 };
            assert!((w[j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn slot_weights_with_all_keys_masked_error() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let q = g.constant(&[2, 2], vec![0.0; 4]).unwrap();
        let k = g.constant(&[2, 2], vec![0.0; 4]).unwrap();
        let err = slot_attention_weights(&mut g, q, k, Some(&[false, false])).unwrap_err();
        assert!(matches!(err, Error::NoKeys));
    }

    #[test]
    fn isab_smoke_with_identity_like_weights() {
        let mut rng = SetRng::new(2);
        let mut ps = ParamSet::new();
        let isab = Isab::new(&mut ps, "isab", 3, 4, 2, 1, &mut rng).unwrap();
        let ids: Vec<_> = ps.ids().collect();
        for id in ids {
            let name = ps.names()[id_index(&ps, id)].clone();
            if name.ends_with(".weight") {
                let t = ps.get_mut(id);
                let n = t.rows();
                let data: Vec<f64> = (0..n * n).map(|i| if i % (n + 1) == 0 { 1.0 } else { 0.0 }).collect();
                t.data_mut().copy_from_slice(&data);
            }
        }
        let inducing = ps.get(isab.inducing).clone();
        let mut g = Graph::new(&ps);
        let x = g.leaf(&Tensor::new(vec![3, 4], inducing.data().to_vec()).unwrap());
        let out = isab.forward(&mut g, x, None).unwrap();
        assert_eq!(g.shape(out.out), &[3, 4]);
        assert_eq!(g.shape(out.h), &[3, 4]);
        assert!(g.value(out.out).iter().all(|v| v.is_finite()));
    }

    fn id_index(ps: &ParamSet, id: ParamId) -> usize {
        ps.ids().position(|x| x == id).unwrap()
    }
}
