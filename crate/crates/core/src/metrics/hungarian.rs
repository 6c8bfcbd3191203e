use crate::tensor::Tensor;
use crate::{Error, Result};

/// Minimum-cost perfect assignment on a square cost matrix in O(n³)
/// (shortest augmenting paths with row/column potentials).
///
/// Returns `perm` with row `i` assigned to column `perm[i]`.
pub fn hungarian(cost: &Tensor) -> Result<Vec<usize>> {
    if cost.rank() != 2 || cost.rows() != cost.cols() {
        let (rows, cols) = (cost.rows(), cost.cols());
        return Err(Error::NotSquare { rows, cols });
    }
    if !cost.is_finite() {
        return Err(Error::Config("cost matrix has non-finite entries".into()));
    }
    let n = cost.rows();
    let c = |i: usize, j: usize| cost.get2(i - 1, j - 1);
    // 1-based; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    Ok(perm)
}

pub fn assignment_cost(cost: &Tensor, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost.get2(i, j)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_zero_cost_is_identity() {
        let n = 5;
        let data = (0..n * n).map(|k| if k % (n + 1) == 0 { 0.0 } else { 1.0 }).collect();
        let cost = Tensor::new(vec![n, n], data).unwrap();
        let perm = hungarian(&cost).unwrap();
        assert_eq!(perm, (0..n).collect::<Vec<_>>());
        assert_eq!(assignment_cost(&cost, &perm), 0.0);
    }

    #[test]
    fn non_square_errors() {
        let cost = Tensor::zeros(&[2, 3]);
        assert!(matches!(hungarian(&cost), Err(Error::NotSquare { rows: 2, cols: 3 })));
    }

    #[test]
    fn single_entry() {
        let cost = Tensor::new(vec![1, 1], vec![4.5]).unwrap();
        assert_eq!(hungarian(&cost).unwrap(), vec![0]);
    }
}
