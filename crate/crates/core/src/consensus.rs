//! EM consensus over per-layer community decisions. Each layer acts as a
//! noisy observer with its own confusion matrix; EM jointly estimates the
//! true memberships T, per-layer confusion matrices π, and category priors
//! η, in the classic noisy-observer formulation.

use crate::error::{MlcsError, Result};
use crate::nn::DenseMatrix;
use crate::par;
use serde::Serialize;

/// Per-node, per-category, per-layer binary decisions. Exactly one category
/// is set per (node, layer). The pipeline always uses two categories
/// (0 = out, 1 = in); the code keeps the count general.
#[derive(Debug, Clone)]
pub struct DecisionTensor {
    n: usize,
    categories: usize,
    layers: usize,
    data: Vec<u8>,
}

impl DecisionTensor {
    pub fn new(n: usize, categories: usize, layers: usize) -> Self {
        let mut data = vec![0u8; n * categories * layers];
        // default every (node, layer) to category 0
        for i in 0..n {
            for r in 0..layers {
                data[(i * categories) * layers + r] = 1;
            }
        }
        DecisionTensor {
            n,
            categories,
            layers,
            data,
        }
    }

    pub fn from_layer_memberships(n: usize, memberships: &[Vec<usize>]) -> Result<Self> {
        let mut d = DecisionTensor::new(n, 2, memberships.len());
        for (r, members) in memberships.iter().enumerate() {
            for &v in members {
                if v >= n {
                    return Err(MlcsError::NodeOutOfRange { id: v, n });
                }
                d.assign(v, 1, r);
            }
        }
        Ok(d)
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, r: usize) -> usize {
        (i * self.categories + j) * self.layers + r
    }

    /// Set category `j` for (node i, layer r), clearing the others.
    pub fn assign(&mut self, i: usize, j: usize, r: usize) {
        for l in 0..self.categories {
            let pos = self.offset(i, l, r);
            self.data[pos] = u8::from(l == j);
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, r: usize) -> u8 {
        self.data[self.offset(i, j, r)]
    }

    /// The category layer r voted for node i.
    pub fn vote(&self, i: usize, r: usize) -> usize {
        (0..self.categories)
            .find(|&j| self.get(i, j, r) == 1)
            .expect("one category set per (node, layer)")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            for r in 0..self.layers {
                let sum: u8 = (0..self.categories).map(|j| self.get(i, j, r)).sum();
                if sum != 1 {
                    return Err(MlcsError::Contract(format!(
                        "decision tensor has {sum} categories set for node {i}, layer {r}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn permute_layers(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..self.categories {
                for (r_new, &r_old) in perm.iter().enumerate() {
                    let pos = out.offset(i, j, r_new);
                    out.data[pos] = self.data[self.offset(i, j, r_old)];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EmConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub clamp_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            tolerance: 1e-5,
            max_iterations: 200,
            clamp_floor: 1e-10,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(MlcsError::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(MlcsError::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Converged (or iteration-capped) EM estimates. `t` is the reported
/// membership matrix after the final row softmax; `t_raw` the probabilities
/// before it. Membership argmax is identical either way since the softmax is
/// strictly monotone per row.
#[derive(Debug, Clone)]
pub struct ConsensusState {
    pub t: DenseMatrix,
    pub t_raw: DenseMatrix,
    pub pi: Vec<DenseMatrix>,
    pub eta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Observed-data log-likelihood after each M-step.
    pub log_likelihood: Vec<f64>,
}

/// T⁰: average the layer decisions per node. Rows sum to 1 exactly (the
/// last category takes the complement).
pub fn init_membership(d: &DecisionTensor) -> DenseMatrix {
    let j_count = d.categories();
    let r_max = d.layers() as f64;
    DenseMatrix::from_fn(d.n(), j_count, |i, j| {
        if j + 1 == j_count {
            let head: f64 = (0..j_count - 1)
                .map(|l| {
                    (0..d.layers()).map(|r| d.get(i, l, r) as f64).sum::<f64>() / r_max
                })
                .sum();
            1.0 - head
        } else {
            (0..d.layers()).map(|r| d.get(i, j, r) as f64).sum::<f64>() / r_max
        }
    })
}

fn clamp_normalize(row: &mut [f64], floor: f64) {
    for v in row.iter_mut() {
        *v = v.clamp(floor, 1.0);
    }
    let sum: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Maximum-likelihood confusion matrices and priors from soft memberships:
/// π_jl^(r) = Σ_i T_ij·D_ilr / Σ_l Σ_i T_ij·D_ilr, η_j = Σ_i T_ij / n.
/// All-zero rows fall back to uniform; entries are clamped away from 0 and
/// renormalized so later log products stay finite.
pub fn m_step(t: &DenseMatrix, d: &DecisionTensor, clamp_floor: f64) -> (Vec<DenseMatrix>, Vec<f64>) {
    let j_count = d.categories();
    let mut pi = Vec::with_capacity(d.layers());
    for r in 0..d.layers() {
        let mut counts = DenseMatrix::zeros(j_count, j_count);
        for i in 0..d.n() {
            let l = d.vote(i, r);
            for j in 0..j_count {
                let cur = counts.get(j, l);
                counts.set(j, l, cur + t.get(i, j));
            }
        }
        for j in 0..j_count {
            let row_sum: f64 = counts.row(j).iter().sum();
            if row_sum <= 0.0 {
                for l in 0..j_count {
                    counts.set(j, l, 1.0 / j_count as f64);
                }
            } else {
                for l in 0..j_count {
                    counts.set(j, l, counts.get(j, l) / row_sum);
                }
            }
            clamp_normalize(counts.row_mut(j), clamp_floor);
        }
        pi.push(counts);
    }
    let mut eta: Vec<f64> = (0..j_count)
        .map(|j| (0..d.n()).map(|i| t.get(i, j)).sum::<f64>() / d.n() as f64)
        .collect();
    clamp_normalize(&mut eta, clamp_floor);
    (pi, eta)
}

/// Per-node unnormalized log posteriors: s_ij = log η_j + Σ_r log π_{j,vote}.
fn log_scores(d: &DecisionTensor, pi: &[DenseMatrix], eta: &[f64]) -> DenseMatrix {
    let j_count = d.categories();
    let n = d.n();
    let log_eta: Vec<f64> = eta.iter().map(|&e| e.ln()).collect();
    let log_pi: Vec<DenseMatrix> = pi.iter().map(|m| m.map(f64::ln)).collect();
    let mut scores = DenseMatrix::zeros(n, j_count);
    par::for_each_row(scores.data_mut(), j_count, |i, row| {
        for (r, layer_log_pi) in log_pi.iter().enumerate() {
            let l = d.vote(i, r);
            for (j, slot) in row.iter_mut().enumerate() {
                *slot += layer_log_pi.get(j, l);
            }
        }
        for (j, slot) in row.iter_mut().enumerate() {
            *slot += log_eta[j];
        }
    });
    scores
}

/// Bayes update of memberships: T_ij ∝ η_j·Π_r Π_l (π_jl^(r))^{D_ilr},
/// normalized per row. Products run in log space with per-row max
/// subtraction; clamped probabilities keep every log finite.
pub fn e_step(d: &DecisionTensor, pi: &[DenseMatrix], eta: &[f64]) -> DenseMatrix {
    let mut t = log_scores(d, pi, eta);
    let cols = t.cols();
    par::for_each_row(t.data_mut(), cols, |_, row| {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        debug_assert!(sum > 0.0, "all-category posterior underflow");
        for v in row.iter_mut() {
            *v /= sum;
        }
    });
    t
}

/// Observed-data log-likelihood ℓ(θ) = Σ_i log Σ_j η_j·Π_r π_{j,vote}^(r).
/// This is the quantity EM drives uphill; it must be non-decreasing across
/// iterations up to numerical slack.
pub fn log_likelihood(d: &DecisionTensor, pi: &[DenseMatrix], eta: &[f64]) -> f64 {
    let scores = log_scores(d, pi, eta);
    par::sum_indexed(d.n(), |i| {
        let row = scores.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + row.iter().map(|&s| (s - max).exp()).sum::<f64>().ln()
    })
}

/// Initialization, then M-step / E-step rounds until the membership change
/// drops below tolerance. Hitting the iteration cap is flagged, not an
/// error. The returned `t` passes through a final row softmax.
pub fn run_em(d: &DecisionTensor, cfg: &EmConfig) -> Result<ConsensusState> {
    cfg.validate()?;
    d.validate()?;
    let mut t = init_membership(d);
    let mut pi = Vec::new();
    let mut eta = Vec::new();
    let mut ll_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for m in 1..=cfg.max_iterations {
        let (pi_next, eta_next) = m_step(&t, d, cfg.clamp_floor);
        let ll = log_likelihood(d, &pi_next, &eta_next);
        if cfg!(debug_assertions) {
            if let Some(&prev) = ll_trace.last() {
                debug_assert!(
                    ll >= prev - 1e-8,
                    "log-likelihood decreased at iteration {m}: {prev} -> {ll}"
                );
            }
        }
        ll_trace.push(ll);
        let t_next = e_step(d, &pi_next, &eta_next);
        let delta = t
            .data()
            .iter()
            .zip(t_next.data())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        t = t_next;
        pi = pi_next;
        eta = eta_next;
        iterations = m;
        if delta < cfg.tolerance {
            converged = true;
            break;
        }
    }

    let mut t_soft = t.clone();
    let cols = t_soft.cols();
    par::for_each_row(t_soft.data_mut(), cols, |_, row| {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    });

    Ok(ConsensusState {
        t: t_soft,
        t_raw: t,
        pi,
        eta,
        iterations,
        converged,
        log_likelihood: ll_trace,
    })
}

/// Row argmax with ties resolved to the lower category index.
pub fn argmax_category(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Consensus members by membership argmax, always unioned with the query.
pub fn extract_community(state: &ConsensusState, query: &[usize]) -> Vec<usize> {
    let mut members: Vec<usize> = (0..state.t.rows())
        .filter(|&i| argmax_category(state.t.row(i)) == 1)
        .collect();
    for &q in query {
        if let Err(pos) = members.binary_search(&q) {
            members.insert(pos, q);
        }
    }
    members
}

/// Baseline comparator: in the consensus iff strictly more than half of the
/// layers vote in; exact ties go out.
pub fn majority_vote(d: &DecisionTensor) -> Vec<bool> {
    (0..d.n())
        .map(|i| {
            let in_votes = (0..d.layers()).filter(|&r| d.vote(i, r) == 1).count();
            2 * in_votes > d.layers()
        })
        .collect()
}

/// JSON shape of one consensus result.
#[derive(Debug, Serialize)]
pub struct ConsensusJson {
    pub query: Vec<usize>,
    pub nodes: Vec<usize>,
    pub t_summary: MembershipSummary,
    pub pi: Vec<Vec<Vec<f64>>>,
    pub eta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Serialize)]
pub struct MembershipSummary {
    pub members: usize,
    pub mean_in_probability: f64,
    pub min_in_probability: f64,
    pub max_in_probability: f64,
}

pub fn consensus_json(state: &ConsensusState, query: &[usize], nodes: Vec<usize>) -> ConsensusJson {
    let probs: Vec<f64> = (0..state.t.rows()).map(|i| state.t.get(i, 1)).collect();
    let member_probs: Vec<f64> = nodes.iter().map(|&v| probs[v]).collect();
    let count = member_probs.len().max(1) as f64;
    ConsensusJson {
        query: query.to_vec(),
        nodes,
        t_summary: MembershipSummary {
            members: member_probs.len(),
            mean_in_probability: member_probs.iter().sum::<f64>() / count,
            min_in_probability: member_probs.iter().cloned().fold(f64::INFINITY, f64::min),
            max_in_probability: member_probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        },
        pi: state
            .pi
            .iter()
            .map(|m| (0..m.rows()).map(|j| m.row(j).to_vec()).collect())
            .collect(),
        eta: state.eta.clone(),
        iterations: state.iterations,
        converged: state.converged,
    }
}
