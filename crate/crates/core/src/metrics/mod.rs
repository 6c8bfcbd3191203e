//! Set distances and population-level generative metrics.

mod distance;
mod hungarian;
mod population;

pub use distance::{chamfer, emd, emd_with_cap, optimal_matching_sq, Distance, DEFAULT_MATCHING_CAP};
pub use hungarian::{assignment_cost, hungarian};
pub use population::{cov, distance_matrix, evaluate, mmd, one_nna, MetricReport};

use crate::{Error, Result};

/// A finite, nonempty set of points stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.is_empty() {
            return Err(Error::Empty("point set"));
        }
        if coords.len() % dim != 0 {
            return Err(Error::DimMismatch(coords.len(), dim));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("point set has non-finite coordinates".into()));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimMismatch(p.len(), dim));
        }
        Self::new(dim, points.iter().flatten().copied().collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Rows reordered so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> PointSet {
        let coords = perm.iter().flat_map(|&i| self.point(i).iter().copied()).collect();
        PointSet {
            dim: self.dim,
            coords,
        }
    }
}
