//! Label-free training: an alignment loss pulling every layer-shared matrix
//! toward the common variable, a decorrelation loss separating shared from
//! specific representations, and a margin triplet loss tying nodes to their
//! neighborhood context. One full-graph gradient step per epoch.

use crate::diffusion::{self, HeatKernelConfig};
use crate::encoder::{EncoderConfig, EncoderParams, TapedEncoder};
use crate::error::{MlcsError, Result};
use crate::graph::MultilayerGraph;
use crate::nn::{Activation, AdamState, Tape, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Variance below this floor makes a correlation term degenerate; the term
/// is defined as 0 there instead of dividing by a vanishing deviation.
const VARIANCE_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub margin: f64,
    pub neg_samples_per_node: usize,
    pub epochs: usize,
    pub patience_window: usize,
    pub min_improvement: f64,
    pub lr_init: f64,
    pub lr_peak: f64,
    pub weight_decay: f64,
    /// Use every ordered pair (v, u), u ≠ v, instead of sampling; only
    /// sensible at small n and capped at 200 nodes.
    pub exact_pairs: bool,
    /// Keep the negated hinge exactly as printed in the source formulation
    /// (its minimization is degenerate; kept for comparison only).
    pub literal_negated_hinge: bool,
    /// Correlate column-by-column and average, instead of flattening each
    /// projected matrix into one vector.
    pub pearson_per_column: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.8,
            beta: 0.4,
            margin: 0.5,
            neg_samples_per_node: 5,
            epochs: 70,
            patience_window: 10,
            min_improvement: 1e-4,
            lr_init: 1e-4,
            lr_peak: 0.01,
            weight_decay: 1e-4,
            exact_pairs: false,
            literal_negated_hinge: false,
            pearson_per_column: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(MlcsError::Config(format!(
                "loss weights must lie in [0, 1], got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if self.margin.is_nan() || self.margin <= 0.0 {
            return Err(MlcsError::Config(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if self.epochs == 0 {
            return Err(MlcsError::Config("epochs must be at least 1".into()));
        }
        if self.patience_window == 0 {
            return Err(MlcsError::Config("patience window must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub heat: HeatKernelConfig,
    pub omega_loop: f64,
    pub hidden_dim: usize,
    pub k_max: usize,
    pub share_layer_ffns: bool,
    pub activation: Activation,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            heat: HeatKernelConfig::default(),
            omega_loop: 1.0,
            hidden_dim: 512,
            k_max: 3,
            share_layer_ffns: false,
            activation: Activation::Relu,
            loss: LossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_p: f64,
    pub l_inter: f64,
    pub l_intra: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub stopped_epoch: usize,
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l_p,l_inter,l_intra,total,lr\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch, e.l_p, e.l_inter, e.l_intra, e.total, e.lr
            ));
        }
        out
    }
}

/// (1/n)·Σ_r Σ_v ‖C^(r)_v − U_v‖².
pub fn inter_layer_loss(tape: &mut Tape, cs: &[TensorId], u: TensorId, n: usize) -> Result<TensorId> {
    let mut acc: Option<TensorId> = None;
    for &c in cs {
        let diff = tape.sub(c, u)?;
        let sq = tape.hadamard(diff, diff)?;
        let s = tape.sum_all(sq);
        acc = Some(match acc {
            Some(prev) => tape.add(prev, s)?,
            None => s,
        });
    }
    let total = acc.ok_or_else(|| MlcsError::Config("no layers for the alignment loss".into()))?;
    Ok(tape.scale(total, 1.0 / n as f64))
}

/// |Pearson correlation| between two equally shaped matrices read as flat
/// vectors. Returns None when either variance falls below the guard; the
/// layer then contributes 0 with no gradient.
pub fn correlation_term(tape: &mut Tape, x: TensorId, y: TensorId) -> Result<Option<TensorId>> {
    let count = {
        let v = tape.value(x);
        (v.rows() * v.cols()) as f64
    };
    let inv = 1.0 / count;
    let sx = tape.sum_all(x);
    let mean_x = tape.scale(sx, inv);
    let sy = tape.sum_all(y);
    let mean_y = tape.scale(sy, inv);
    let xy = tape.hadamard(x, y)?;
    let sxy = tape.sum_all(xy);
    let mean_xy = tape.scale(sxy, inv);
    let xx = tape.hadamard(x, x)?;
    let sxx = tape.sum_all(xx);
    let mean_xx = tape.scale(sxx, inv);
    let yy = tape.hadamard(y, y)?;
    let syy = tape.sum_all(yy);
    let mean_yy = tape.scale(syy, inv);

    let mxmy = tape.hadamard(mean_x, mean_y)?;
    let cov = tape.sub(mean_xy, mxmy)?;
    let mxmx = tape.hadamard(mean_x, mean_x)?;
    let var_x = tape.sub(mean_xx, mxmx)?;
    let mymy = tape.hadamard(mean_y, mean_y)?;
    let var_y = tape.sub(mean_yy, mymy)?;

    if tape.scalar(var_x) < VARIANCE_GUARD || tape.scalar(var_y) < VARIANCE_GUARD {
        return Ok(None);
    }
    let var_prod = tape.hadamard(var_x, var_y)?;
    let denom = tape.sqrt(var_prod);
    let abs_cov = tape.abs(cov);
    Ok(Some(tape.div(abs_cov, denom)?))
}

/// Σ_r |corr(φ(C^(r)), ψ(P^(r)))| over flattened projections (or averaged
/// per column behind the flag). Projections are built by the caller.
pub fn intra_layer_loss(
    tape: &mut Tape,
    projected: &[(TensorId, TensorId)],
    per_column: bool,
) -> Result<TensorId> {
    let mut acc: Option<TensorId> = None;
    for &(phi_c, psi_p) in projected {
        let term = if per_column {
            let cols = tape.value(phi_c).cols();
            let mut col_acc: Option<TensorId> = None;
            for j in 0..cols {
                let xj = tape.slice_cols(phi_c, j, j + 1)?;
                let yj = tape.slice_cols(psi_p, j, j + 1)?;
                if let Some(c) = correlation_term(tape, xj, yj)? {
                    col_acc = Some(match col_acc {
                        Some(prev) => tape.add(prev, c)?,
                        None => c,
                    });
                }
            }
            col_acc.map(|sum| tape.scale(sum, 1.0 / cols as f64))
        } else {
            correlation_term(tape, phi_c, psi_p)?
        };
        if let Some(term) = term {
            acc = Some(match acc {
                Some(prev) => tape.add(prev, term)?,
                None => term,
            });
        }
    }
    Ok(match acc {
        Some(id) => id,
        None => tape.constant(crate::nn::DenseMatrix::zeros(1, 1)),
    })
}

/// Margin triplet loss for one layer over the given (center, negative)
/// pairs: mean of max(σ(C_v·comZ_u) − σ(C_v·comZ_v) + ε, 0).
pub fn proximity_loss_layer(
    tape: &mut Tape,
    c: TensorId,
    com_z: TensorId,
    pairs: &[(usize, usize)],
    margin: f64,
    literal_negated: bool,
) -> Result<TensorId> {
    if pairs.is_empty() {
        return Err(MlcsError::Config("empty negative sample set".into()));
    }
    let pos = tape.row_dot(c, com_z)?;
    let sig_pos = tape.sigmoid(pos);
    let centers: Vec<usize> = pairs.iter().map(|&(v, _)| v).collect();
    let negs: Vec<usize> = pairs.iter().map(|&(_, u)| u).collect();
    let c_rep = tape.gather_rows(c, &centers)?;
    let z_neg = tape.gather_rows(com_z, &negs)?;
    let neg_dot = tape.row_dot(c_rep, z_neg)?;
    let sig_neg = tape.sigmoid(neg_dot);
    let sig_pos_rep = tape.gather_rows(sig_pos, &centers)?;
    let inv = 1.0 / pairs.len() as f64;
    if literal_negated {
        let gap = tape.sub(sig_pos_rep, sig_neg)?;
        let shifted = tape.add_const(gap, margin);
        let hinge = tape.relu(shifted);
        let sum = tape.sum_all(hinge);
        Ok(tape.scale(sum, -inv))
    } else {
        let gap = tape.sub(sig_neg, sig_pos_rep)?;
        let shifted = tape.add_const(gap, margin);
        let hinge = tape.relu(shifted);
        let sum = tape.sum_all(hinge);
        Ok(tape.scale(sum, inv))
    }
}

/// L = L_p + α·L_inter + β·L_intra.
pub fn total_loss(
    tape: &mut Tape,
    l_p: TensorId,
    l_inter: TensorId,
    l_intra: TensorId,
    alpha: f64,
    beta: f64,
) -> Result<TensorId> {
    let a = tape.scale(l_inter, alpha);
    let b = tape.scale(l_intra, beta);
    let ab = tape.add(a, b)?;
    tape.add(l_p, ab)
}

/// Distinct uniform negatives u ≠ v for every node, or every ordered pair
/// in exact mode.
pub fn sample_negative_pairs(
    n: usize,
    per_node: usize,
    exact: bool,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(MlcsError::Config(
            "negative sampling needs at least two nodes".into(),
        ));
    }
    if exact {
        if n > 200 {
            return Err(MlcsError::Config(format!(
                "exact pair mode is quadratic and capped at 200 nodes (n = {n})"
            )));
        }
        let mut pairs = Vec::with_capacity(n * (n - 1));
        for v in 0..n {
            for u in 0..n {
                if u != v {
                    pairs.push((v, u));
                }
            }
        }
        return Ok(pairs);
    }
    if per_node == 0 {
        return Err(MlcsError::Config("neg_samples_per_node must be positive".into()));
    }
    let m = per_node.min(n - 1);
    let mut pairs = Vec::with_capacity(n * m);
    let mut seen = vec![usize::MAX; n];
    for v in 0..n {
        let mut taken = 0;
        while taken < m {
            let u = rng.random_range(0..n);
            if u == v || seen[u] == v {
                continue;
            }
            seen[u] = v;
            pairs.push((v, u));
            taken += 1;
        }
    }
    Ok(pairs)
}

/// All loss heads of one forward pass.
pub struct Objective {
    pub l_p: TensorId,
    pub l_inter: TensorId,
    pub l_intra: TensorId,
    pub total: TensorId,
}

/// Forward the encoder over every layer and assemble the combined loss.
pub fn build_objective(
    tape: &mut Tape,
    encoder: &TapedEncoder,
    diffused: &[TensorId],
    hop_stacks: &[Vec<TensorId>],
    negatives: &[Vec<(usize, usize)>],
    cfg: &LossConfig,
) -> Result<Objective> {
    let r_max = diffused.len();
    let n = tape.value(diffused[0]).rows();
    let mut cs = Vec::with_capacity(r_max);
    let mut projections = Vec::with_capacity(r_max);
    let mut l_p: Option<TensorId> = None;
    for r in 0..r_max {
        let (c, p) = encoder.encode_layer(tape, r, diffused[r])?;
        let ctx = encoder.community_context(tape, c, &hop_stacks[r])?;
        let proj = encoder.projections(tape, r, c, p)?;
        let layer_lp = proximity_loss_layer(
            tape,
            c,
            ctx.com_z,
            &negatives[r],
            cfg.margin,
            cfg.literal_negated_hinge,
        )?;
        l_p = Some(match l_p {
            Some(prev) => tape.add(prev, layer_lp)?,
            None => layer_lp,
        });
        cs.push(c);
        projections.push(proj);
    }
    let u = encoder.combine_shared(tape, &cs)?;
    let l_inter = inter_layer_loss(tape, &cs, u, n)?;
    let l_intra = intra_layer_loss(tape, &projections, cfg.pearson_per_column)?;
    let l_p = l_p.expect("at least one layer");
    let total = total_loss(tape, l_p, l_inter, l_intra, cfg.alpha, cfg.beta)?;
    Ok(Objective {
        l_p,
        l_inter,
        l_intra,
        total,
    })
}

/// Warmup length: the first tenth of the run, at least one epoch.
pub fn warmup_epochs(cfg: &LossConfig) -> usize {
    (cfg.epochs / 10).max(1)
}

/// Linear warmup from lr_init to lr_peak over the first tenth of the run,
/// then linear decay back to lr_init. `epoch` is 1-based.
pub fn learning_rate(cfg: &LossConfig, epoch: usize) -> f64 {
    let warmup = warmup_epochs(cfg);
    if epoch <= warmup {
        if warmup == 1 {
            cfg.lr_peak
        } else {
            cfg.lr_init + (cfg.lr_peak - cfg.lr_init) * (epoch - 1) as f64 / (warmup - 1) as f64
        }
    } else {
        let span = (cfg.epochs - warmup) as f64;
        cfg.lr_peak + (cfg.lr_init - cfg.lr_peak) * (epoch - warmup) as f64 / span
    }
}

/// Train the encoder on one graph. Diffusion is precomputed once; each epoch
/// resamples negatives, rebuilds the tape, and takes one Adam step.
pub fn train(
    graph: &MultilayerGraph,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(EncoderParams, TrainReport)> {
    let graph_diffusion = diffusion::precompute(graph, &cfg.heat, cfg.omega_loop, cfg.k_max)?;
    train_with_diffusion(graph, &graph_diffusion, cfg, seed)
}

/// As `train`, reusing diffusion outputs the caller already computed.
pub fn train_with_diffusion(
    graph: &MultilayerGraph,
    graph_diffusion: &diffusion::GraphDiffusion,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(EncoderParams, TrainReport)> {
    cfg.loss.validate()?;
    let start = std::time::Instant::now();

    let mut enc_cfg = EncoderConfig::new(graph.feat_dim(), cfg.hidden_dim, graph.r_max(), cfg.k_max);
    enc_cfg.share_layer_ffns = cfg.share_layer_ffns;
    enc_cfg.activation = cfg.activation;
    let mut params = EncoderParams::init(enc_cfg, seed)?;

    let shapes: Vec<(usize, usize)> = params.param_shapes().iter().map(|(_, s)| *s).collect();
    let mut adam = AdamState::new(&shapes, cfg.loss.weight_decay);

    let mut stats = Vec::with_capacity(cfg.loss.epochs);
    let mut best = f64::INFINITY;
    let mut since_improvement = 0usize;
    let mut stopped_epoch = 0usize;

    for epoch in 1..=cfg.loss.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        let negatives: Vec<Vec<(usize, usize)>> = (0..graph.r_max())
            .map(|_| {
                sample_negative_pairs(
                    graph.n(),
                    cfg.loss.neg_samples_per_node,
                    cfg.loss.exact_pairs,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;

        let mut tape = Tape::new();
        let encoder = TapedEncoder::register(&mut tape, &params, true);
        let diffused_ids: Vec<TensorId> = graph_diffusion
            .diffused
            .iter()
            .map(|d| tape.constant(d.h.clone()))
            .collect();
        let stack_ids: Vec<Vec<TensorId>> = graph_diffusion
            .hop_stacks
            .iter()
            .map(|s| s.stack.iter().map(|m| tape.constant(m.clone())).collect())
            .collect();
        let objective = build_objective(
            &mut tape,
            &encoder,
            &diffused_ids,
            &stack_ids,
            &negatives,
            &cfg.loss,
        )?;

        let total = tape.scalar(objective.total);
        if !total.is_finite() {
            return Err(MlcsError::NonFiniteLoss { epoch });
        }
        let lr = learning_rate(&cfg.loss, epoch);
        stats.push(EpochStats {
            epoch,
            l_p: tape.scalar(objective.l_p),
            l_inter: tape.scalar(objective.l_inter),
            l_intra: tape.scalar(objective.l_intra),
            total,
            lr,
        });

        let store = tape.backward(objective.total)?;
        let grads: Vec<Option<crate::nn::DenseMatrix>> = encoder
            .param_ids()
            .iter()
            .map(|(_, id)| store.grad(*id).cloned())
            .collect();
        adam.begin_step();
        let mut update_err = None;
        let mut idx = 0usize;
        params.for_each_mut(|name, m| {
            if update_err.is_none() {
                if let Some(g) = grads[idx].as_ref() {
                    if let Err(e) = adam.update(idx, name, m, g, lr) {
                        update_err = Some(e);
                    }
                }
            }
            idx += 1;
        });
        if let Some(e) = update_err {
            return Err(e);
        }

        stopped_epoch = epoch;
        // The warmup phase distorts the trajectory by design; the patience
        // clock starts once the schedule has reached its peak.
        if epoch <= warmup_epochs(&cfg.loss) {
            continue;
        }
        if total < best - cfg.loss.min_improvement {
            best = total;
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= cfg.loss.patience_window {
                break;
            }
        }
    }

    Ok((
        params,
        TrainReport {
            epochs: stats,
            stopped_epoch,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}
