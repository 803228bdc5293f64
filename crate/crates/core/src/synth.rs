//! Synthetic multilayer instances: planted-partition layers with independent
//! per-layer rewiring noise, bucket features with per-community bumps, and a
//! noisy-observer decision simulator for exercising the consensus merge.

use crate::consensus::DecisionTensor;
use crate::error::{MlcsError, Result};
use crate::graph::{fallback_features, LayerGraph, MultilayerGraph};
use crate::nn::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeSet;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub community_sizes: Vec<usize>,
    pub r_max: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Fraction of each layer's edges rewired to random non-edges.
    pub layer_noise: f64,
    pub feature_buckets: usize,
    /// Standard deviation of the per-community feature offset.
    pub bump_scale: f64,
}

impl SyntheticSpec {
    pub fn n(&self) -> usize {
        self.community_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.community_sizes.is_empty() || self.community_sizes.contains(&0) {
            return Err(MlcsError::Config("community sizes must be positive".into()));
        }
        if self.p_in.is_nan() || self.p_out.is_nan() || self.p_in <= self.p_out {
            return Err(MlcsError::Config(format!(
                "planted partition needs p_in > p_out, got {} <= {}",
                self.p_in, self.p_out
            )));
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return Err(MlcsError::Config("edge probabilities must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.layer_noise) {
            return Err(MlcsError::Config("layer noise must lie in [0, 1]".into()));
        }
        if self.r_max == 0 {
            return Err(MlcsError::Config("at least one layer required".into()));
        }
        if self.feature_buckets == 0 {
            return Err(MlcsError::Config("feature_buckets must be positive".into()));
        }
        Ok(())
    }
}

/// Planted communities covering [0, n) as consecutive blocks.
pub fn planted_communities(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut next = 0;
    for &size in sizes {
        out.push((next..next + size).collect());
        next += size;
    }
    out
}

fn rewire_edges(
    n: usize,
    edges: Vec<(usize, usize)>,
    fraction: f64,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    if fraction == 0.0 || edges.is_empty() {
        return edges;
    }
    let mut set: BTreeSet<(usize, usize)> = edges.into_iter().collect();
    let rewires = (set.len() as f64 * fraction).floor() as usize;
    for _ in 0..rewires {
        let victim_idx = rng.random_range(0..set.len());
        let victim = *set.iter().nth(victim_idx).expect("index in range");
        set.remove(&victim);
        loop {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if set.insert(key) {
                break;
            }
        }
    }
    set.into_iter().collect()
}

/// Per layer: within-community pairs connect with probability p_in, other
/// pairs with p_out, then a noise fraction of edges is rewired. Features are
/// log-degree one-hots plus a Gaussian per-community offset and small
/// per-node jitter (shared across layers so the community signal is the
/// layer-invariant part).
pub fn synthetic_multilayer(
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<(MultilayerGraph, Vec<Vec<usize>>)> {
    spec.validate()?;
    let n = spec.n();
    let communities = planted_communities(&spec.community_sizes);
    let mut community_of = vec![0usize; n];
    for (c, members) in communities.iter().enumerate() {
        for &v in members {
            community_of[v] = c;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(spec.r_max);
    for _ in 0..spec.r_max {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                let p = if community_of[u] == community_of[v] {
                    spec.p_in
                } else {
                    spec.p_out
                };
                if p > 0.0 && rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        let edges = rewire_edges(n, edges, spec.layer_noise, &mut rng);
        layers.push(LayerGraph::from_edges(n, edges)?);
    }

    let normal = Normal::new(0.0, 1.0).map_err(|e| MlcsError::Config(e.to_string()))?;
    let bumps: Vec<Vec<f64>> = (0..communities.len())
        .map(|_| {
            (0..spec.feature_buckets)
                .map(|_| normal.sample(&mut rng) * spec.bump_scale)
                .collect()
        })
        .collect();
    let jitter: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..spec.feature_buckets)
                .map(|_| normal.sample(&mut rng) * 0.05)
                .collect()
        })
        .collect();

    let base = fallback_features(&layers, n, spec.feature_buckets)?;
    let features: Vec<DenseMatrix> = base
        .into_iter()
        .map(|x| {
            DenseMatrix::from_fn(n, spec.feature_buckets, |v, j| {
                x.get(v, j) + bumps[community_of[v]][j] + jitter[v][j]
            })
        })
        .collect();

    let graph = MultilayerGraph::new(n, layers, features)?;
    Ok((graph, communities))
}

/// Layer r reports each node's true membership flipped independently with
/// probability flip_rates[r]. Rates at or above 1/2 make the observer
/// unidentifiable and are rejected.
pub fn synthetic_decisions(
    truth: &[usize],
    n: usize,
    flip_rates: &[f64],
    seed: u64,
) -> Result<DecisionTensor> {
    for &rate in flip_rates {
        if !(0.0..0.5).contains(&rate) {
            return Err(MlcsError::Config(format!(
                "flip rate must lie in [0, 0.5), got {rate}"
            )));
        }
    }
    let truth_set: BTreeSet<usize> = truth.iter().copied().collect();
    if let Some(&bad) = truth_set.iter().find(|&&v| v >= n) {
        return Err(MlcsError::NodeOutOfRange { id: bad, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = DecisionTensor::new(n, 2, flip_rates.len());
    for (r, &rate) in flip_rates.iter().enumerate() {
        for i in 0..n {
            let truly_in = truth_set.contains(&i);
            let flipped = rng.random::<f64>() < rate;
            let vote_in = truly_in != flipped;
            d.assign(i, usize::from(vote_in), r);
        }
    }
    Ok(d)
}

/// Realized confusion matrix of each simulated layer against the truth;
/// entry (j, l) is the fraction of truth-j nodes the layer reported as l.
pub fn empirical_confusion(d: &DecisionTensor, truth: &[usize]) -> Vec<DenseMatrix> {
    let truth_set: BTreeSet<usize> = truth.iter().copied().collect();
    (0..d.layers())
        .map(|r| {
            let mut counts = DenseMatrix::zeros(2, 2);
            let mut totals = [0.0f64; 2];
            for i in 0..d.n() {
                let j = usize::from(truth_set.contains(&i));
                let l = d.vote(i, r);
                counts.set(j, l, counts.get(j, l) + 1.0);
                totals[j] += 1.0;
            }
            for (j, &total) in totals.iter().enumerate() {
                if total > 0.0 {
                    for l in 0..2 {
                        counts.set(j, l, counts.get(j, l) / total);
                    }
                }
            }
            counts
        })
        .collect()
}
