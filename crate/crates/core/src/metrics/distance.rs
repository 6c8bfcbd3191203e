use serde::{Deserialize, Serialize};

use super::hungarian::hungarian;
use super::PointSet;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Largest cardinality accepted by the exact matching distances.
pub const DEFAULT_MATCHING_CAP: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Distance {
    Cd,
    Emd,
}

impl Distance {
    pub fn eval(self, x: &PointSet, y: &PointSet) -> Result<f64> {
        match self {
            Distance::Cd => chamfer(x, y),
            Distance::Emd => emd(x, y),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cd" => Ok(Distance::Cd),
            "emd" => Ok(Distance::Emd),
            other => Err(Error::Config(format!("unknown distance {other:?}"))),
        }
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn check_dims(x: &PointSet, y: &PointSet) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimMismatch(x.dim(), y.dim()));
    }
    Ok(())
}

/// Sum of squared nearest-neighbour distances in both directions.
pub fn chamfer(x: &PointSet, y: &PointSet) -> Result<f64> {
    check_dims(x, y)?;
    let mut to_y = vec![f64::INFINITY; x.len()];
    let mut to_x = vec![f64::INFINITY; y.len()];
    for (i, p) in x.points().enumerate() {
        for (j, q) in y.points().enumerate() {
            let d = sq(p, q);
            to_y[i] = to_y[i].min(d);
            to_x[j] = to_x[j].min(d);
        }
    }
    Ok(to_y.iter().sum::<f64>() + to_x.iter().sum::<f64>())
}

fn matching(x: &PointSet, y: &PointSet, cap: usize, cost: impl Fn(&[f64], &[f64]) -> f64) -> Result<f64> {
    check_dims(x, y)?;
    if x.len() != y.len() {
        return Err(Error::CardinalityMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n > cap {
        return Err(Error::MatchingCap { n, cap });
    }
    let data = x.points().flat_map(|p| y.points().map(|q| cost(p, q)).collect::<Vec<_>>()).collect();
    let cost = Tensor::new(vec![n, n], data)?;
    let perm = hungarian(&cost)?;
    // Sum in row order for a reproducible total.
    Ok(perm.iter().enumerate().map(|(i, &j)| cost.get2(i, j)).sum())
}

/// `min_π Σ_i ‖x_i − y_π(i)‖` for equal-size sets.
pub fn emd(x: &PointSet, y: &PointSet) -> Result<f64> {
    emd_with_cap(x, y, DEFAULT_MATCHING_CAP)
}

pub fn emd_with_cap(x: &PointSet, y: &PointSet, cap: usize) -> Result<f64> {
    matching(x, y, cap, |p, q| sq(p, q).sqrt())
}

/// `min_π Σ_i ‖x_i − y_π(i)‖²`, the squared-cost matching distance.
pub fn optimal_matching_sq(x: &PointSet, y: &PointSet) -> Result<f64> {
    matching(x, y, DEFAULT_MATCHING_CAP, sq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(points: &[[f64; 2]]) -> PointSet {
        PointSet::from_points(&points.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn chamfer_hand_values() {
        let x = ps(&[[0.0, 0.0], [1.0, 2.0]]);
        assert_eq!(chamfer(&x, &x).unwrap(), 0.0);
        assert_eq!(chamfer(&ps(&[[0.0, 0.0]]), &ps(&[[3.0, 4.0]])).unwrap(), 50.0);
    }

    #[test]
    fn emd_hand_values() {
        assert_eq!(emd(&ps(&[[0.0, 0.0]]), &ps(&[[3.0, 4.0]])).unwrap(), 5.0);
        assert_eq!(optimal_matching_sq(&ps(&[[0.0, 0.0]]), &ps(&[[3.0, 4.0]])).unwrap(), 25.0);
    }

    #[test]
    fn emd_of_permuted_copy_is_zero() {
        let x = ps(&[[0.1, 0.2], [0.5, -1.0], [2.0, 3.0], [0.0, 0.0]]);
        let y = x.permuted(&[2, 0, 3, 1]);
        assert_eq!(emd(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn emd_errors() {
        let a = ps(&[[0.0, 0.0], [1.0, 1.0]]);
        let b = ps(&[[0.0, 0.0]]);
        assert!(matches!(emd(&a, &b), Err(Error::CardinalityMismatch(2, 1))));
        let err = emd_with_cap(&a, &a, 1).unwrap_err();
        assert!(err.to_string().contains("cap 1"), "{err}");
        let c = PointSet::new(3, vec![0.0; 3]).unwrap();
        assert!(matches!(chamfer(&b, &c), Err(Error::DimMismatch(2, 3))));
    }
}
