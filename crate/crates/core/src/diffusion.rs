//! Heat-kernel graph diffusion. Features are propagated through a truncated
//! series of powers of the symmetrically normalized augmented adjacency,
//! without ever materializing a matrix power.

use crate::error::{MlcsError, Result};
use crate::graph::SparseMatrix;
use crate::nn::DenseMatrix;

#[derive(Debug, Clone, Copy)]
pub struct HeatKernelConfig {
    /// Diffusion time.
    pub t: f64,
    /// Series truncation: keep terms while the coefficient stays at or above
    /// this cutoff (past the mode of the coefficient sequence).
    pub theta_threshold: f64,
}

impl Default for HeatKernelConfig {
    fn default() -> Self {
        HeatKernelConfig {
            t: 5.0,
            theta_threshold: 1e-4,
        }
    }
}

impl HeatKernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t.is_nan() || self.t <= 0.0 || !self.t.is_finite() {
            return Err(MlcsError::Config(format!(
                "diffusion time must be positive, got {}",
                self.t
            )));
        }
        if !(self.theta_threshold > 0.0 && self.theta_threshold < 1.0) {
            return Err(MlcsError::Config(format!(
                "theta threshold must lie in (0, 1), got {}",
                self.theta_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DiffusedFeatures {
    /// Propagated features, one row per node.
    pub h: DenseMatrix,
    /// Truncation depth actually used.
    pub k: usize,
}

/// Hop-feature stack [X̂, O·X̂, O²·X̂, …]; stack[0] is the input itself.
#[derive(Debug, Clone)]
pub struct HopFeatureStack {
    pub stack: Vec<DenseMatrix>,
}

impl HopFeatureStack {
    pub fn k_max(&self) -> usize {
        self.stack.len() - 1
    }
}

/// θ_k = e^{−t}·t^k/k! for k = 1…K, where K is the last index whose
/// coefficient still reaches the threshold. Computed by the multiplicative
/// recurrence θ_{k+1} = θ_k·t/(k+1); factorials would overflow past k≈170.
/// Coefficients before the mode are kept even when individually below the
/// threshold; the cutoff prunes the tail only.
pub fn heat_coefficients(cfg: &HeatKernelConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let t = cfg.t;
    let mut theta = (-t).exp() * t; // θ_1
    let mut all = vec![theta];
    let mut k = 1usize;
    // Past the mode (k > t) the sequence is strictly decreasing, so the
    // first sub-threshold coefficient there ends the series.
    while !(k as f64 > t && theta < cfg.theta_threshold) {
        k += 1;
        theta *= t / k as f64;
        all.push(theta);
        if k > 10_000 {
            return Err(MlcsError::Numeric(
                "heat kernel series failed to truncate".into(),
            ));
        }
    }
    // Trim trailing sub-threshold entries; K = last k with θ_k ≥ threshold.
    while all.len() > 1 && *all.last().unwrap() < cfg.theta_threshold {
        all.pop();
    }
    Ok(all)
}

/// O = Δ̂^{−1/2}·Â·Δ̂^{−1/2} with Δ̂ the row-sum degree of Â.
pub fn normalize_symmetric(a_hat: &SparseMatrix) -> Result<SparseMatrix> {
    let deg = a_hat.row_sums();
    if let Some(zero) = deg.iter().position(|&d| d <= 0.0) {
        return Err(MlcsError::Degenerate(format!(
            "node {zero} has zero augmented degree; use a positive self-loop weight"
        )));
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|&d| 1.0 / d.sqrt()).collect();
    let n = a_hat.n();
    let mut triplets = Vec::with_capacity(a_hat.nnz());
    for i in 0..n {
        let (cols, vals) = a_hat.row(i);
        for (&j, &v) in cols.iter().zip(vals.iter()) {
            triplets.push((i, j, v * inv_sqrt[i] * inv_sqrt[j]));
        }
    }
    Ok(SparseMatrix::from_triplets(n, triplets))
}

/// H = Δ̂^{−1}·(Σ_{k=1}^{K} θ_k·O^k)·X̂, accumulated as K sparse
/// matrix–feature products (memory O(n·f)). The k = 0 identity term is
/// excluded; self-information enters through the self-loop weight instead.
pub fn diffuse_features(
    o: &SparseMatrix,
    x: &DenseMatrix,
    degrees: &[f64],
    coeffs: &[f64],
) -> Result<DiffusedFeatures> {
    if !x.is_finite() {
        return Err(MlcsError::Numeric("non-finite feature input".into()));
    }
    if degrees.len() != o.n() || x.rows() != o.n() {
        return Err(MlcsError::Dimension(format!(
            "diffusion over {} nodes with {} degrees and {} feature rows",
            o.n(),
            degrees.len(),
            x.rows()
        )));
    }
    let mut acc = DenseMatrix::zeros(x.rows(), x.cols());
    let mut cur = x.clone();
    for &theta in coeffs {
        cur = o.mul_dense(&cur)?;
        acc.add_assign_scaled(&cur, theta)?;
    }
    for (i, &degree) in degrees.iter().enumerate() {
        let inv = 1.0 / degree;
        for v in acc.row_mut(i) {
            *v *= inv;
        }
    }
    if !acc.is_finite() {
        return Err(MlcsError::Numeric("diffusion produced non-finite values".into()));
    }
    Ok(DiffusedFeatures {
        h: acc,
        k: coeffs.len(),
    })
}

/// Diffusion outputs for every layer of a graph; computed once, before any
/// training epoch, since they are parameter-free.
#[derive(Debug, Clone)]
pub struct GraphDiffusion {
    pub diffused: Vec<DiffusedFeatures>,
    pub hop_stacks: Vec<HopFeatureStack>,
}

pub fn precompute(
    graph: &crate::graph::MultilayerGraph,
    heat: &HeatKernelConfig,
    omega_loop: f64,
    k_max: usize,
) -> Result<GraphDiffusion> {
    let coeffs = heat_coefficients(heat)?;
    let per_layer: Vec<Result<(DiffusedFeatures, HopFeatureStack)>> =
        crate::par::map_indexed(graph.r_max(), |r| {
            let a_hat = crate::graph::augment_adjacency(graph.layer(r).adjacency(), omega_loop)?;
            let o = normalize_symmetric(&a_hat)?;
            let deg = a_hat.row_sums();
            let x = graph.feature(r);
            let diffused = diffuse_features(&o, x, &deg, &coeffs)?;
            let hops = hop_features(&o, x, k_max)?;
            Ok((diffused, hops))
        });
    let mut diffused = Vec::with_capacity(graph.r_max());
    let mut hop_stacks = Vec::with_capacity(graph.r_max());
    for item in per_layer {
        let (d, h) = item?;
        diffused.push(d);
        hop_stacks.push(h);
    }
    Ok(GraphDiffusion {
        diffused,
        hop_stacks,
    })
}

/// stack[i] = O^i·X̂ for i = 0…k_max, computed incrementally.
pub fn hop_features(o: &SparseMatrix, x: &DenseMatrix, k_max: usize) -> Result<HopFeatureStack> {
    if k_max < 1 {
        return Err(MlcsError::Config("hop depth must be at least 1".into()));
    }
    let mut stack = Vec::with_capacity(k_max + 1);
    stack.push(x.clone());
    for i in 1..=k_max {
        let next = o.mul_dense(&stack[i - 1])?;
        stack.push(next);
    }
    Ok(HopFeatureStack { stack })
}
