use crate::params::Graph;
use crate::tensor::Var;
use crate::Result;

use super::setvae::LossValues;

/// `Σ_i min_j ‖x_i − y_j‖² + Σ_j min_i ‖x_i − y_j‖²` on the graph.
pub fn chamfer_on_graph(g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    let d = g.sq_dist(x, y)?;
    let (to_y, _) = g.min(d, 1)?;
    let (to_x, _) = g.min(d, 0)?;
    let a = g.sum_all(to_y);
    let b = g.sum_all(to_x);
    Ok(g.add(a, b)?)
}

/// Components of the β-weighted objective.
#[derive(Debug, Clone)]
pub struct ElboTerms {
    pub total: Var,
    pub recon: Var,
    pub kl_sum: Var,
    /// Batch-mean KL of each generator level, top level first.
    pub kl_per_level: Vec<Var>,
}

impl ElboTerms {
    pub fn values(&self, g: &Graph, beta: f64) -> LossValues {
        LossValues {
            total: g.scalar(self.total),
            recon: g.scalar(self.recon),
            kl_sum: g.scalar(self.kl_sum),
            beta,
        }
    }
}

/// `total = recon + β·Σ_l kl_l` where `recon` is the batch mean of the per-set
/// Chamfer terms and `kl_l` the batch mean of level `l`'s set-level KL.
pub fn elbo_loss(g: &mut Graph, recon: &[Var], kls: &[Vec<Var>], beta: f64) -> Result<ElboTerms> {
    assert!(!recon.is_empty() && recon.len() == kls.len());
    assert!(beta >= 0.0, "beta must be nonnegative");
    let inv_b = 1.0 / recon.len() as f64;
    let mut acc = recon[0];
    for &r in &recon[1..] {
        acc = g.add(acc, r)?;
    }
    let recon_mean = g.scale(acc, inv_b);
    let levels = kls[0].len();
    let mut kl_per_level = Vec::with_capacity(levels);
    for l in 0..levels {
        let mut acc = kls[0][l];
        for set in &kls[1..] {
            acc = g.add(acc, set[l])?;
        }
        kl_per_level.push(g.scale(acc, inv_b));
    }
    let mut kl_sum = kl_per_level[0];
    for &k in &kl_per_level[1..] {
        kl_sum = g.add(kl_sum, k)?;
    }
    let weighted = g.scale(kl_sum, beta);
    let total = g.add(recon_mean, weighted)?;
    Ok(ElboTerms {
        total,
        recon: recon_mean,
        kl_sum,
        kl_per_level,
    })
}
