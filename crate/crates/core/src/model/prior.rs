//! Initial-set prior, empirical cardinality distribution and the closed-form
//! Gaussian KL.

use std::collections::BTreeMap;

use crate::params::{Graph, ParamId, ParamSet};
use crate::rng::SetRng;
use crate::tensor::{Tensor, Var};
use crate::{Error, Result};

/// Empirical distribution of set cardinalities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CardinalityDist {
    counts: BTreeMap<usize, u64>,
    total: u64,
}

impl CardinalityDist {
    pub fn from_counts(counts: BTreeMap<usize, u64>) -> Result<Self> {
        let counts: BTreeMap<usize, u64> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
        if counts.is_empty() {
            return Err(Error::Empty("cardinality histogram"));
        }
        if counts.contains_key(&0) {
            return Err(Error::Empty("cardinality 0 set"));
        }
        let total = counts.values().sum();
        Ok(Self { counts, total })
    }

    pub fn from_cardinalities(cards: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for n in cards {
            *counts.entry(n).or_insert(0) += 1;
        }
        Self::from_counts(counts)
    }

    pub fn counts(&self) -> &BTreeMap<usize, u64> {
        &self.counts
    }

    pub fn prob(&self, n: usize) -> f64 {
        self.counts.get(&n).map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    pub fn probabilities(&self) -> Vec<(usize, f64)> {
        self.counts.keys().map(|&n| (n, self.prob(n))).collect()
    }

    /// Draw `n` with its empirical frequency.
    pub fn sample(&self, rng: &mut SetRng) -> usize {
        let mut u = rng.below(self.total as usize) as u64;
        for (&n, &c) in &self.counts {
            if u < c {
                return n;
            }
            u -= c;
        }
        unreachable!("u < total")
    }

    /// `KL(q(z0|x) ‖ p(z0)) = −log p(|x|)`; a constant of the data, reported
    /// for diagnostics and never optimized.
    pub fn initial_set_kl_constant(&self, n: usize) -> Result<f64> {
        let p = self.prob(n);
        if p == 0.0 {
            return Err(Error::OutsideSupport(n));
        }
        Ok(-p.ln())
    }
}

/// Mixture of diagonal Gaussians over initial-set elements.
#[derive(Debug, Clone)]
pub struct MogPrior {
    pub logits: ParamId,
    pub means: ParamId,
    pub log_sigma: ParamId,
    pub k: usize,
    pub d0: usize,
}

impl MogPrior {
    pub fn new(ps: &mut ParamSet, prefix: &str, k: usize, d0: usize, rng: &mut SetRng) -> Self {
        Self {
            logits: ps.add(format!("{prefix}.logits"), Tensor::zeros(&[k])),
            means: ps.add_normal(format!("{prefix}.means"), &[k, d0], rng),
            log_sigma: ps.add(format!("{prefix}.log_sigma"), Tensor::zeros(&[k, d0])),
            k,
            d0,
        }
    }

    /// softmax(logits).
    pub fn weights(&self, ps: &ParamSet) -> Vec<f64> {
        let l = ps.get(self.logits).data();
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = l.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// Draw the component index and standard-normal noise for `n` elements.
    pub fn draw(&self, ps: &ParamSet, n: usize, rng: &mut SetRng) -> (Vec<usize>, Vec<f64>) {
        let w = self.weights(ps);
        let mut comps = Vec::with_capacity(n);
        let mut eps = Vec::with_capacity(n * self.d0);
        for _ in 0..n {
            comps.push(rng.categorical(&w));
            eps.extend(rng.normals(self.d0));
        }
        (comps, eps)
    }

    /// Reparameterized `z0 = µ_k + σ_k ⊙ ε` on the graph for fixed draws.
    pub fn realize(&self, g: &mut Graph, comps: &[usize], eps: &[f64]) -> Result<Var> {
        let n = comps.len();
        if n == 0 {
            return Err(Error::Empty("initial set"));
        }
        let mut onehot = vec![0.0; n * self.k];
        for (i, &c) in comps.iter().enumerate() {
            onehot[i * self.k + c] = 1.0;
        }
        let onehot = g.constant(&[n, self.k], onehot)?;
        let eps = g.constant(&[n, self.d0], eps.to_vec())?;
        let mu = g.param(self.means);
        let ls = g.param(self.log_sigma);
        let sigma = g.exp(ls);
        let mu_rows = g.matmul(onehot, mu)?;
        let sigma_rows = g.matmul(onehot, sigma)?;
        let noise = g.mul(sigma_rows, eps)?;
        Ok(g.add(mu_rows, noise)?)
    }

    /// Sample an initial set of `n` elements together with the mixture
    /// assignment of each element.
    pub fn sample(&self, ps: &ParamSet, n: usize, rng: &mut SetRng) -> Result<(Tensor, Vec<usize>)> {
        let (comps, eps) = self.draw(ps, n, rng);
        let mut g = Graph::new(ps);
        let z0 = self.realize(&mut g, &comps, &eps)?;
        Ok((g.to_tensor(z0), comps))
    }
}

/// `Σ log(σp/σq) + (σq² + (µq − µp)²)/(2σp²) − 1/2` over all entries.
pub fn gaussian_kl(mu_q: &[f64], sigma_q: &[f64], mu_p: &[f64], sigma_p: &[f64]) -> Result<f64> {
    let n = mu_q.len();
    if sigma_q.len() != n || mu_p.len() != n || sigma_p.len() != n {
        return Err(Error::DimMismatch(n, sigma_q.len().min(mu_p.len()).min(sigma_p.len())));
    }
    if sigma_q.iter().chain(sigma_p).any(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::Tensor(crate::tensor::TensorError::Domain {
            op: "gaussian_kl",
            detail: "nonpositive sigma".into(),
        }));
    }
    Ok((0..n)
        .map(|i| {
            let (sq, sp) = (sigma_q[i], sigma_p[i]);
            let dm = mu_q[i] - mu_p[i];
            (sp / sq).ln() + (sq * sq + dm * dm) / (2.0 * sp * sp) - 0.5
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_cardinality() {
        let d = CardinalityDist::from_cardinalities([5, 5, 5]).unwrap();
        let mut rng = SetRng::new(0);
        assert!((0..100).all(|_| d.sample(&mut rng) == 5));
        assert_eq!(d.initial_set_kl_constant(5).unwrap(), 0.0);
    }

    #[test]
    fn fitted_table_counts_exactly() {
        let d = CardinalityDist::from_cardinalities([3, 3, 5]).unwrap();
        assert_eq!(d.prob(3), 2.0 / 3.0);
        assert_eq!(d.prob(5), 1.0 / 3.0);
        assert!((d.initial_set_kl_constant(3).unwrap() - 0.405_465_108_108_164_4).abs() < 1e-12);
    }

    #[test]
    fn sampling_frequencies() {
        let d = CardinalityDist::from_counts(BTreeMap::from([(3, 2), (5, 1)])).unwrap();
        let mut rng = SetRng::new(42);
        let draws = 100_000;
        let threes = (0..draws).filter(|_| d.sample(&mut rng) == 3).count();
        assert!((threes as f64 / draws as f64 - 2.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn empty_histogram_and_outside_support() {
        assert!(matches!(
            CardinalityDist::from_counts(BTreeMap::new()),
            Err(Error::Empty(_))
        ));
        let d = CardinalityDist::from_cardinalities([4]).unwrap();
        assert!(matches!(d.initial_set_kl_constant(7), Err(Error::OutsideSupport(7))));
    }

    #[test]
    fn uniform_over_97() {
        let d = CardinalityDist::from_cardinalities(1..=97).unwrap();
        let v = d.initial_set_kl_constant(50).unwrap();
        assert!((v - 97f64.ln()).abs() < 1e-12);
        assert!((v - 4.5747).abs() < 1e-4);
    }

    #[test]
    fn kl_closed_form_values() {
        assert_eq!(gaussian_kl(&[0.3], &[1.7], &[0.3], &[1.7]).unwrap(), 0.0);
        assert!((gaussian_kl(&[1.0], &[1.0], &[0.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(gaussian_kl(&[0.0], &[0.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let (mq, sq, mp, sp) = (0.4, 0.7, -0.2, 1.3);
        let exact = gaussian_kl(&[mq], &[sq], &[mp], &[sp]).unwrap();
        let log_n = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln();
        let mut rng = SetRng::new(17);
        let n = 1_000_000;
        let est: f64 = (0..n)
            .map(|_| {
                let x = mq + sq * rng.normal();
                log_n(x, mq, sq) - log_n(x, mp, sp)
            })
            .sum::<f64>()
            / n as f64;
        assert!((est - exact).abs() < 0.01, "{est} vs {exact}");
    }

    fn prior(k: usize, d0: usize) -> (ParamSet, MogPrior) {
        let mut ps = ParamSet::new();
        let mut rng = SetRng::new(1);
        let p = MogPrior::new(&mut ps, "mog", k, d0, &mut rng);
        (ps, p)
    }

    #[test]
    fn standard_normal_component_mean() {
        let (mut ps, p) = prior(1, 1);
        ps.get_mut(p.means).data_mut()[0] = 0.0;
        let mut rng = SetRng::new(8);
        let (z, comps) = p.sample(&ps, 100_000, &mut rng).unwrap();
        assert!(comps.iter().all(|&c| c == 0));
        let mean = z.data().iter().sum::<f64>() / z.numel() as f64;
        assert!(mean.abs() < 0.02, "{mean}");
    }

    #[test]
    fn degenerate_mixture_uses_one_component() {
        let (mut ps, p) = prior(2, 3);
        ps.get_mut(p.logits).data_mut().copy_from_slice(&[0.0, f64::NEG_INFINITY]);
        let mut rng = SetRng::new(4);
        let (_, comps) = p.sample(&ps, 500, &mut rng).unwrap();
        assert!(comps.iter().all(|&c| c == 0));
    }

    #[test]
    fn vanishing_sigma_returns_means() {
        let (mut ps, p) = prior(3, 2);
        ps.get_mut(p.log_sigma).data_mut().fill(-20.0);
        let means = ps.get(p.means).clone();
        let mut rng = SetRng::new(6);
        let (z, comps) = p.sample(&ps, 1000, &mut rng).unwrap();
        for (i, &c) in comps.iter().enumerate() {
            for j in 0..2 {
                assert!((z.get2(i, j) - means.get2(c, j)).abs() < 1e-8);
            }
        }
    }
}
