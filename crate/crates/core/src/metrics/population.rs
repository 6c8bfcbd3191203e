use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::distance::Distance;
use super::PointSet;
use crate::{Error, Result};

/// Population metrics between generated and reference sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub distance: Distance,
    pub mmd: f64,
    pub cov: f64,
    pub one_nna: f64,
}

/// `D[i][j] = dist(a_i, b_j)`, evaluated in parallel. Each entry is computed
/// independently, so the result does not depend on the thread count.
pub fn distance_matrix(a: &[PointSet], b: &[PointSet], dist: Distance) -> Result<Vec<Vec<f64>>> {
    a.par_iter()
        .map(|x| b.iter().map(|y| dist.eval(x, y)).collect::<Result<Vec<f64>>>())
        .collect()
}

fn nonempty(sg: &[PointSet], sr: &[PointSet]) -> Result<()> {
    if sg.is_empty() {
        return Err(Error::Empty("generated population"));
    }
    if sr.is_empty() {
        return Err(Error::Empty("reference population"));
    }
    Ok(())
}

/// Index of the smallest value, lowest index on ties.
fn argmin(vals: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in vals.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn mmd_from(d_gr: &[Vec<f64>], n_ref: usize) -> f64 {
    let total: f64 = (0..n_ref)
        .map(|j| d_gr.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
        .sum();
    total / n_ref as f64
}

fn cov_from(d_gr: &[Vec<f64>], n_ref: usize) -> f64 {
    let mut hit = vec![false; n_ref];
    for row in d_gr {
        hit[argmin(row.iter().copied())] = true;
    }
    hit.iter().filter(|&&h| h).count() as f64 / n_ref as f64
}

fn one_nna_from(d_gr: &[Vec<f64>], d_gg: &[Vec<f64>], d_rr: &[Vec<f64>]) -> f64 {
    let (ng, nr) = (d_gg.len(), d_rr.len());
    // Pooled indexing: generated sets first, then references.
    let mut correct = 0usize;
    for i in 0..ng {
        let dists = (0..ng)
            .map(|k| if k == i { f64::INFINITY } else { d_gg[i][k] })
            .chain((0..nr).map(|j| d_gr[i][j]));
        if argmin(dists) < ng {
            correct += 1;
        }
    }
    for j in 0..nr {
        let dists = (0..ng)
            .map(|i| d_gr[i][j])
            .chain((0..nr).map(|k| if k == j { f64::INFINITY } else { d_rr[j][k] }));
        if argmin(dists) >= ng {
            correct += 1;
        }
    }
    correct as f64 / (ng + nr) as f64
}

/// Mean over references of the distance to the closest generated set.
pub fn mmd(sg: &[PointSet], sr: &[PointSet], dist: Distance) -> Result<f64> {
    nonempty(sg, sr)?;
    Ok(mmd_from(&distance_matrix(sg, sr, dist)?, sr.len()))
}

/// Fraction of references that are the nearest neighbour of at least one
/// generated set.
pub fn cov(sg: &[PointSet], sr: &[PointSet], dist: Distance) -> Result<f64> {
    nonempty(sg, sr)?;
    Ok(cov_from(&distance_matrix(sg, sr, dist)?, sr.len()))
}

/// Leave-one-out 1-nearest-neighbour classification accuracy on the pooled
/// populations; 0.5 is ideal.
pub fn one_nna(sg: &[PointSet], sr: &[PointSet], dist: Distance) -> Result<f64> {
    nonempty(sg, sr)?;
    if sg.len() != sr.len() {
        return Err(Error::CardinalityMismatch(sg.len(), sr.len()));
    }
    let d_gr = distance_matrix(sg, sr, dist)?;
    let d_gg = distance_matrix(sg, sg, dist)?;
    let d_rr = distance_matrix(sr, sr, dist)?;
    Ok(one_nna_from(&d_gr, &d_gg, &d_rr))
}

/// All three metrics, sharing one generated-vs-reference distance matrix.
pub fn evaluate(sg: &[PointSet], sr: &[PointSet], dist: Distance) -> Result<MetricReport> {
    nonempty(sg, sr)?;
    if sg.len() != sr.len() {
        return Err(Error::CardinalityMismatch(sg.len(), sr.len()));
    }
    let d_gr = distance_matrix(sg, sr, dist)?;
    let d_gg = distance_matrix(sg, sg, dist)?;
    let d_rr = distance_matrix(sr, sr, dist)?;
    Ok(MetricReport {
        distance: dist,
        mmd: mmd_from(&d_gr, sr.len()),
        cov: cov_from(&d_gr, sr.len()),
        one_nna: one_nna_from(&d_gr, &d_gg, &d_rr),
    })
}
