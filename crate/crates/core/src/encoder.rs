//! Encoder over diffused features: two unshared FFNs per layer produce the
//! layer-shared matrix C and layer-specific matrix P, a combiner FFN maps
//! the concatenated C's to the common variable U, and hop FFNs plus a
//! single-column attention head produce each layer's community context comZ.

use crate::diffusion::HopFeatureStack;
use crate::error::{MlcsError, Result};
use crate::nn::{Activation, DenseMatrix, Ffn, Linear, Tape, TensorId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct EncoderConfig {
    pub feat_dim: usize,
    pub hidden_dim: usize,
    pub layer_count: usize,
    pub k_max: usize,
    /// Reuse one FFN pair (and one projection pair) across layers instead of
    /// per-layer weights.
    pub share_layer_ffns: bool,
    pub activation: Activation,
}

impl EncoderConfig {
    pub fn new(feat_dim: usize, hidden_dim: usize, layer_count: usize, k_max: usize) -> Self {
        EncoderConfig {
            feat_dim,
            hidden_dim,
            layer_count,
            k_max,
            share_layer_ffns: false,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feat_dim == 0 || self.hidden_dim == 0 {
            return Err(MlcsError::Config("encoder dimensions must be positive".into()));
        }
        if self.layer_count == 0 {
            return Err(MlcsError::Config("encoder needs at least one layer".into()));
        }
        if self.k_max < 1 {
            return Err(MlcsError::Config("k_max must be at least 1".into()));
        }
        Ok(())
    }

    fn ffn_groups(&self) -> usize {
        if self.share_layer_ffns {
            1
        } else {
            self.layer_count
        }
    }
}

/// All trainable parameters. The visitation order of `for_each` is the
/// canonical parameter order used by Adam moments and checkpoints.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub shared: Vec<Ffn>,
    pub private: Vec<Ffn>,
    pub combiner: Ffn,
    pub hops: Vec<Ffn>,
    pub attention_w: DenseMatrix,
    pub proj_phi: Vec<Linear>,
    pub proj_psi: Vec<Linear>,
}

impl EncoderParams {
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, h) = (config.feat_dim, config.hidden_dim);
        let act = config.activation;
        let groups = config.ffn_groups();

        let mut shared = Vec::with_capacity(groups);
        let mut private = Vec::with_capacity(groups);
        let mut proj_phi = Vec::with_capacity(groups);
        let mut proj_psi = Vec::with_capacity(groups);
        for _ in 0..groups {
            shared.push(Ffn::glorot(&[f, h, h, h], act, &mut rng)?);
            private.push(Ffn::glorot(&[f, h, h, h], act, &mut rng)?);
            proj_phi.push(Linear::glorot(h, h, &mut rng));
            proj_psi.push(Linear::glorot(h, h, &mut rng));
        }
        let combiner = Ffn::glorot(&[config.layer_count * h, h, h, h], act, &mut rng)?;
        let mut hops = Vec::with_capacity(config.k_max);
        for i in 1..=config.k_max {
            hops.push(Ffn::glorot(&[(i + 1) * f, h, h, h], act, &mut rng)?);
        }
        let attention_w = crate::nn::glorot_from_rng(2 * h, 1, &mut rng);

        Ok(EncoderParams {
            config,
            shared,
            private,
            combiner,
            hops,
            attention_w,
            proj_phi,
            proj_psi,
        })
    }

    pub fn for_each(&self, mut f: impl FnMut(String, &DenseMatrix)) {
        let ffn = |name: &str, net: &Ffn, f: &mut dyn FnMut(String, &DenseMatrix)| {
            for (i, lin) in net.layers.iter().enumerate() {
                f(format!("{name}.{i}.w"), &lin.w);
                f(format!("{name}.{i}.b"), &lin.b);
            }
        };
        for g in 0..self.shared.len() {
            ffn(&format!("shared{g}"), &self.shared[g], &mut f);
            ffn(&format!("private{g}"), &self.private[g], &mut f);
            f(format!("phi{g}.w"), &self.proj_phi[g].w);
            f(format!("phi{g}.b"), &self.proj_phi[g].b);
            f(format!("psi{g}.w"), &self.proj_psi[g].w);
            f(format!("psi{g}.b"), &self.proj_psi[g].b);
        }
        ffn("combiner", &self.combiner, &mut f);
        for (k, net) in self.hops.iter().enumerate() {
            ffn(&format!("hop{}", k + 1), net, &mut f);
        }
        f("attention.w".into(), &self.attention_w);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut DenseMatrix)) {
        for g in 0..self.shared.len() {
            for (i, lin) in self.shared[g].layers.iter_mut().enumerate() {
                f(&format!("shared{g}.{i}.w"), &mut lin.w);
                f(&format!("shared{g}.{i}.b"), &mut lin.b);
            }
            for (i, lin) in self.private[g].layers.iter_mut().enumerate() {
                f(&format!("private{g}.{i}.w"), &mut lin.w);
                f(&format!("private{g}.{i}.b"), &mut lin.b);
            }
            f(&format!("phi{g}.w"), &mut self.proj_phi[g].w);
            f(&format!("phi{g}.b"), &mut self.proj_phi[g].b);
            f(&format!("psi{g}.w"), &mut self.proj_psi[g].w);
            f(&format!("psi{g}.b"), &mut self.proj_psi[g].b);
        }
        for (i, lin) in self.combiner.layers.iter_mut().enumerate() {
            f(&format!("combiner.{i}.w"), &mut lin.w);
            f(&format!("combiner.{i}.b"), &mut lin.b);
        }
        for k in 0..self.hops.len() {
            let name = format!("hop{}", k + 1);
            for (i, lin) in self.hops[k].layers.iter_mut().enumerate() {
                f(&format!("{name}.{i}.w"), &mut lin.w);
                f(&format!("{name}.{i}.b"), &mut lin.b);
            }
        }
        f("attention.w", &mut self.attention_w);
    }

    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        self.for_each(|name, m| out.push((name, m.shape())));
        out
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.for_each(|_, m| count += m.rows() * m.cols());
        count
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut entries = Vec::new();
        self.for_each(|name, m| entries.push((name, m.clone())));
        let refs: Vec<(String, &DenseMatrix)> =
            entries.iter().map(|(n, m)| (n.clone(), m)).collect();
        crate::nn::save_checkpoint(path, &refs)
    }

    pub fn load(config: EncoderConfig, path: &std::path::Path) -> Result<Self> {
        let skeleton = EncoderParams::init(config, 0)?;
        let expected = skeleton.param_shapes();
        let matrices = crate::nn::load_checkpoint(path, &expected)?;
        let mut loaded = skeleton;
        let mut iter = matrices.into_iter();
        loaded.for_each_mut(|_, m| *m = iter.next().expect("checkpoint length validated"));
        Ok(loaded)
    }
}

struct TapedLinear {
    w: TensorId,
    b: TensorId,
}

struct TapedFfn {
    layers: Vec<TapedLinear>,
    activation: Activation,
}

/// Per-layer context output: the attention-mixed neighborhood embedding and
/// the attention weights themselves (rows sum to 1).
pub struct CommunityContext {
    pub com_z: TensorId,
    pub attention: TensorId,
}

/// Encoder parameters registered on a tape. With `trainable = false` the
/// parameters enter as constants and the same forward code runs inference.
pub struct TapedEncoder {
    config: EncoderConfig,
    shared: Vec<TapedFfn>,
    private: Vec<TapedFfn>,
    combiner: TapedFfn,
    hops: Vec<TapedFfn>,
    attention_w: TensorId,
    proj_phi: Vec<TapedLinear>,
    proj_psi: Vec<TapedLinear>,
    order: Vec<(String, TensorId)>,
}

impl TapedEncoder {
    pub fn register(tape: &mut Tape, params: &EncoderParams, trainable: bool) -> Self {
        let mut order = Vec::new();
        let mut insert = |tape: &mut Tape, name: String, m: &DenseMatrix| -> TensorId {
            let id = if trainable {
                tape.parameter(m.clone())
            } else {
                tape.constant(m.clone())
            };
            order.push((name, id));
            id
        };
        let reg_ffn = |tape: &mut Tape,
                       name: &str,
                       net: &Ffn,
                       order: &mut dyn FnMut(&mut Tape, String, &DenseMatrix) -> TensorId|
         -> TapedFfn {
            TapedFfn {
                layers: net
                    .layers
                    .iter()
                    .enumerate()
                    .map(|(i, lin)| TapedLinear {
                        w: order(tape, format!("{name}.{i}.w"), &lin.w),
                        b: order(tape, format!("{name}.{i}.b"), &lin.b),
                    })
                    .collect(),
                activation: net.activation,
            }
        };

        let mut shared = Vec::new();
        let mut private = Vec::new();
        let mut proj_phi = Vec::new();
        let mut proj_psi = Vec::new();
        for g in 0..params.shared.len() {
            shared.push(reg_ffn(tape, &format!("shared{g}"), &params.shared[g], &mut insert));
            private.push(reg_ffn(tape, &format!("private{g}"), &params.private[g], &mut insert));
            proj_phi.push(TapedLinear {
                w: insert(tape, format!("phi{g}.w"), &params.proj_phi[g].w),
                b: insert(tape, format!("phi{g}.b"), &params.proj_phi[g].b),
            });
            proj_psi.push(TapedLinear {
                w: insert(tape, format!("psi{g}.w"), &params.proj_psi[g].w),
                b: insert(tape, format!("psi{g}.b"), &params.proj_psi[g].b),
            });
        }
        let combiner = reg_ffn(tape, "combiner", &params.combiner, &mut insert);
        let hops = params
            .hops
            .iter()
            .enumerate()
            .map(|(k, net)| reg_ffn(tape, &format!("hop{}", k + 1), net, &mut insert))
            .collect();
        let attention_w = insert(tape, "attention.w".into(), &params.attention_w);

        TapedEncoder {
            config: params.config,
            shared,
            private,
            combiner,
            hops,
            attention_w,
            proj_phi,
            proj_psi,
            order,
        }
    }

    /// Named parameter ids in canonical order; matches
    /// `EncoderParams::for_each` exactly.
    pub fn param_ids(&self) -> &[(String, TensorId)] {
        &self.order
    }

    fn group(&self, r: usize) -> usize {
        if self.config.share_layer_ffns {
            0
        } else {
            r
        }
    }

    fn ffn(&self, tape: &mut Tape, net: &TapedFfn, x: TensorId) -> Result<TensorId> {
        let last = net.layers.len() - 1;
        let mut cur = x;
        for (i, lin) in net.layers.iter().enumerate() {
            let mm = tape.matmul(cur, lin.w)?;
            cur = tape.add_row_broadcast(mm, lin.b)?;
            if i != last {
                cur = tape.activation(cur, net.activation);
            }
        }
        Ok(cur)
    }

    fn linear(&self, tape: &mut Tape, lin: &TapedLinear, x: TensorId) -> Result<TensorId> {
        let mm = tape.matmul(x, lin.w)?;
        tape.add_row_broadcast(mm, lin.b)
    }

    /// C and P for one layer: two FFNs sharing no parameters.
    pub fn encode_layer(&self, tape: &mut Tape, r: usize, h: TensorId) -> Result<(TensorId, TensorId)> {
        let g = self.group(r);
        let c = self.ffn(tape, &self.shared[g], h)?;
        let p = self.ffn(tape, &self.private[g], h)?;
        Ok((c, p))
    }

    /// U from the layer-shared matrices, concatenated in ascending layer
    /// order. The order is fixed by convention; layer-order independence is
    /// restored downstream by the consensus merge, not here.
    pub fn combine_shared(&self, tape: &mut Tape, cs: &[TensorId]) -> Result<TensorId> {
        if cs.len() != self.config.layer_count {
            return Err(MlcsError::Dimension(format!(
                "combiner expects {} layer matrices, got {}",
                self.config.layer_count,
                cs.len()
            )));
        }
        let cat = tape.concat_cols(cs)?;
        self.ffn(tape, &self.combiner, cat)
    }

    pub fn projections(&self, tape: &mut Tape, r: usize, c: TensorId, p: TensorId) -> Result<(TensorId, TensorId)> {
        let g = self.group(r);
        let phi = self.linear(tape, &self.proj_phi[g], c)?;
        let psi = self.linear(tape, &self.proj_psi[g], p)?;
        Ok((phi, psi))
    }

    /// comZ for one layer: hop embeddings ^kZ from prefixes of the hop
    /// stack, per-node attention over k, then the weighted mix.
    pub fn community_context(
        &self,
        tape: &mut Tape,
        c: TensorId,
        hop_stack: &[TensorId],
    ) -> Result<CommunityContext> {
        let k_max = self.config.k_max;
        if hop_stack.len() < k_max + 1 {
            return Err(MlcsError::Dimension(format!(
                "hop stack of length {} for k_max {}",
                hop_stack.len(),
                k_max
            )));
        }
        let mut z = Vec::with_capacity(k_max);
        for k in 1..=k_max {
            let cat = tape.concat_cols(&hop_stack[0..=k])?;
            z.push(self.ffn(tape, &self.hops[k - 1], cat)?);
        }
        let mut logit_cols = Vec::with_capacity(k_max);
        for &zk in &z {
            let pair = tape.concat_cols(&[c, zk])?;
            logit_cols.push(tape.matmul(pair, self.attention_w)?);
        }
        let logits = tape.concat_cols(&logit_cols)?;
        let attention = tape.softmax_rows(logits);
        let mut com_z: Option<TensorId> = None;
        for (k, &zk) in z.iter().enumerate() {
            let alpha_k = tape.slice_cols(attention, k, k + 1)?;
            let weighted = tape.col_broadcast_mul(alpha_k, zk)?;
            com_z = Some(match com_z {
                Some(acc) => tape.add(acc, weighted)?,
                None => weighted,
            });
        }
        Ok(CommunityContext {
            com_z: com_z.expect("k_max >= 1"),
            attention,
        })
    }
}

/// Inference outputs for the whole graph.
#[derive(Debug, Clone)]
pub struct LayerRepresentations {
    pub c: Vec<DenseMatrix>,
    pub p: Vec<DenseMatrix>,
    pub u: DenseMatrix,
    pub com_z: Vec<DenseMatrix>,
}

/// Full forward pass with frozen parameters.
pub fn encode_all(
    params: &EncoderParams,
    diffused: &[DenseMatrix],
    hop_stacks: &[HopFeatureStack],
) -> Result<LayerRepresentations> {
    let r_max = params.config.layer_count;
    if diffused.len() != r_max || hop_stacks.len() != r_max {
        return Err(MlcsError::Dimension(format!(
            "{} diffused matrices / {} hop stacks for {} layers",
            diffused.len(),
            hop_stacks.len(),
            r_max
        )));
    }
    let mut tape = Tape::new();
    let encoder = TapedEncoder::register(&mut tape, params, false);
    let mut c_ids = Vec::with_capacity(r_max);
    let mut p_ids = Vec::with_capacity(r_max);
    let mut z_ids = Vec::with_capacity(r_max);
    for r in 0..r_max {
        let h = tape.constant(diffused[r].clone());
        let (c, p) = encoder.encode_layer(&mut tape, r, h)?;
        let stack_ids: Vec<TensorId> = hop_stacks[r]
            .stack
            .iter()
            .map(|m| tape.constant(m.clone()))
            .collect();
        let ctx = encoder.community_context(&mut tape, c, &stack_ids)?;
        c_ids.push(c);
        p_ids.push(p);
        z_ids.push(ctx.com_z);
    }
    let u = encoder.combine_shared(&mut tape, &c_ids)?;
    Ok(LayerRepresentations {
        c: c_ids.iter().map(|&id| tape.value(id).clone()).collect(),
        p: p_ids.iter().map(|&id| tape.value(id).clone()).collect(),
        u: tape.value(u).clone(),
        com_z: z_ids.iter().map(|&id| tape.value(id).clone()).collect(),
    })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)] // permutation tests index several arrays in parallel
mod tests {
    use super::*;
    use crate::nn::glorot_init;
    use rand::Rng;

    fn small_config() -> EncoderConfig {
        EncoderConfig::new(4, 6, 2, 3)
    }

    fn random_inputs(n: usize, f: usize, seed: u64, r_max: usize, k_max: usize) -> (Vec<DenseMatrix>, Vec<HopFeatureStack>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let diffused = (0..r_max)
            .map(|_| DenseMatrix::from_fn(n, f, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let stacks = (0..r_max)
            .map(|_| HopFeatureStack {
                stack: (0..=k_max)
                    .map(|_| DenseMatrix::from_fn(n, f, |_, _| rng.random_range(-1.0..1.0)))
                    .collect(),
            })
            .collect();
        (diffused, stacks)
    }

    #[test]
    fn output_shapes_and_determinism() {
        let cfg = small_config();
        let params = EncoderParams::init(cfg, 9).unwrap();
        let (diffused, stacks) = random_inputs(5, 4, 1, 2, 3);
        let reps1 = encode_all(&params, &diffused, &stacks).unwrap();
        let reps2 = encode_all(&params, &diffused, &stacks).unwrap();
        assert_eq!(reps1.c[0].shape(), (5, 6));
        assert_eq!(reps1.p[1].shape(), (5, 6));
        assert_eq!(reps1.u.shape(), (5, 6));
        assert_eq!(reps1.com_z[0].shape(), (5, 6));
        assert_eq!(reps1.c, reps2.c);
        assert_eq!(reps1.u, reps2.u);
        assert_eq!(reps1.com_z, reps2.com_z);
    }

    #[test]
    fn taped_ffn_matches_value_forward() {
        let cfg = small_config();
        let params = EncoderParams::init(cfg, 4).unwrap();
        let x = glorot_init(7, 4, 5);
        let direct = params.shared[1].forward(&x).unwrap();
        let mut tape = Tape::new();
        let enc = TapedEncoder::register(&mut tape, &params, false);
        let xt = tape.constant(x);
        let (c, _) = enc.encode_layer(&mut tape, 1, xt).unwrap();
        assert_eq!(tape.value(c), &direct);
    }

    #[test]
    fn private_params_do_not_touch_c() {
        let cfg = small_config();
        let mut params = EncoderParams::init(cfg, 4).unwrap();
        let (diffused, stacks) = random_inputs(5, 4, 2, 2, 3);
        let before = encode_all(&params, &diffused, &stacks).unwrap();
        for lin in params.private[0].layers.iter_mut() {
            lin.w = lin.w.scale(-3.0);
        }
        let after = encode_all(&params, &diffused, &stacks).unwrap();
        assert_eq!(before.c, after.c);
        assert_eq!(before.u, after.u);
        assert_ne!(before.p, after.p);
    }

    #[test]
    fn zero_ffns_propagate_biases() {
        let cfg = small_config();
        let mut params = EncoderParams::init(cfg, 4).unwrap();
        params.for_each_mut(|name, m| {
            if !name.starts_with("attention") {
                *m = DenseMatrix::zeros(m.rows(), m.cols());
            }
        });
        let (diffused, stacks) = random_inputs(5, 4, 3, 2, 3);
        let reps = encode_all(&params, &diffused, &stacks).unwrap();
        assert_eq!(reps.c[0], DenseMatrix::zeros(5, 6));
        assert_eq!(reps.p[0], DenseMatrix::zeros(5, 6));
    }

    #[test]
    fn single_hop_attention_is_identity_mix() {
        let mut cfg = small_config();
        cfg.k_max = 1;
        let params = EncoderParams::init(cfg, 5).unwrap();
        let (diffused, stacks) = random_inputs(6, 4, 7, 2, 1);
        let mut tape = Tape::new();
        let enc = TapedEncoder::register(&mut tape, &params, false);
        let h = tape.constant(diffused[0].clone());
        let (c, _) = enc.encode_layer(&mut tape, 0, h).unwrap();
        let stack_ids: Vec<TensorId> = stacks[0]
            .stack
            .iter()
            .map(|m| tape.constant(m.clone()))
            .collect();
        let ctx = enc.community_context(&mut tape, c, &stack_ids).unwrap();
        // softmax over one logit is 1, so comZ = ^1Z
        let alpha = tape.value(ctx.attention);
        for i in 0..alpha.rows() {
            assert_eq!(alpha.get(i, 0), 1.0);
        }
        let cat = DenseMatrix::concat_cols(&[&stacks[0].stack[0], &stacks[0].stack[1]]).unwrap();
        let z1 = params.hops[0].forward(&cat).unwrap();
        assert_eq!(tape.value(ctx.com_z), &z1);
    }

    #[test]
    fn zero_attention_weights_mean_uniform_mix() {
        let cfg = small_config();
        let mut params = EncoderParams::init(cfg, 6).unwrap();
        params.attention_w = DenseMatrix::zeros(2 * 6, 1);
        let (diffused, stacks) = random_inputs(5, 4, 8, 2, 3);
        let mut tape = Tape::new();
        let enc = TapedEncoder::register(&mut tape, &params, false);
        let h = tape.constant(diffused[0].clone());
        let (c, _) = enc.encode_layer(&mut tape, 0, h).unwrap();
        let stack_ids: Vec<TensorId> = stacks[0]
            .stack
            .iter()
            .map(|m| tape.constant(m.clone()))
            .collect();
        let ctx = enc.community_context(&mut tape, c, &stack_ids).unwrap();
        let alpha = tape.value(ctx.attention);
        for i in 0..alpha.rows() {
            for k in 0..3 {
                assert!((alpha.get(i, k) - 1.0 / 3.0).abs() < 1e-12);
            }
            let sum: f64 = alpha.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        // comZ = mean of the three hop embeddings
        let mut expect = DenseMatrix::zeros(5, 6);
        for k in 1..=3 {
            let cat_parts: Vec<&DenseMatrix> = stacks[0].stack[0..=k].iter().collect();
            let cat = DenseMatrix::concat_cols(&cat_parts).unwrap();
            let z = params.hops[k - 1].forward(&cat).unwrap();
            expect.add_assign_scaled(&z, 1.0 / 3.0).unwrap();
        }
        for (a, b) in tape.value(ctx.com_z).data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let cfg = small_config();
        let params = EncoderParams::init(cfg, 11).unwrap();
        let (diffused, stacks) = random_inputs(9, 4, 12, 2, 3);
        let mut tape = Tape::new();
        let enc = TapedEncoder::register(&mut tape, &params, false);
        let h = tape.constant(diffused[1].clone());
        let (c, _) = enc.encode_layer(&mut tape, 1, h).unwrap();
        let stack_ids: Vec<TensorId> = stacks[1]
            .stack
            .iter()
            .map(|m| tape.constant(m.clone()))
            .collect();
        let ctx = enc.community_context(&mut tape, c, &stack_ids).unwrap();
        let alpha = tape.value(ctx.attention);
        for i in 0..alpha.rows() {
            let sum: f64 = alpha.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_rows_permutes_u() {
        let cfg = small_config();
        let params = EncoderParams::init(cfg, 13).unwrap();
        let (diffused, stacks) = random_inputs(6, 4, 14, 2, 3);
        let reps = encode_all(&params, &diffused, &stacks).unwrap();

        let perm = [3usize, 0, 5, 1, 4, 2];
        let permute = |m: &DenseMatrix| {
            DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(perm[i], j))
        };
        let diffused_p: Vec<DenseMatrix> = diffused.iter().map(&permute).collect();
        let stacks_p: Vec<HopFeatureStack> = stacks
            .iter()
            .map(|s| HopFeatureStack {
                stack: s.stack.iter().map(&permute).collect(),
            })
            .collect();
        let reps_p = encode_all(&params, &diffused_p, &stacks_p).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(reps_p.u.get(i, j), reps.u.get(perm[i], j));
                assert_eq!(reps_p.com_z[0].get(i, j), reps.com_z[0].get(perm[i], j));
            }
        }
    }

    #[test]
    fn swapping_layer_order_changes_u() {
        let cfg = small_config();
        let params = EncoderParams::init(cfg, 15).unwrap();
        let (diffused, stacks) = random_inputs(6, 4, 16, 2, 3);
        let reps = encode_all(&params, &diffused, &stacks).unwrap();
        let swapped_d = vec![diffused[1].clone(), diffused[0].clone()];
        let swapped_s = vec![stacks[1].clone(), stacks[0].clone()];
        let reps_sw = encode_all(&params, &swapped_d, &swapped_s).unwrap();
        assert_ne!(reps.u, reps_sw.u);
    }

    #[test]
    fn checkpoint_roundtrip_through_params() {
        let cfg = small_config();
        let params = EncoderParams::init(cfg, 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.json");
        params.save(&path).unwrap();
        let loaded = EncoderParams::load(cfg, &path).unwrap();
        assert_eq!(params.attention_w, loaded.attention_w);
        assert_eq!(params.shared[0].layers[0].w, loaded.shared[0].layers[0].w);
        assert_eq!(params.proj_psi[1].b, loaded.proj_psi[1].b);
        let (diffused, stacks) = random_inputs(4, 4, 18, 2, 3);
        let a = encode_all(&params, &diffused, &stacks).unwrap();
        let b = encode_all(&loaded, &diffused, &stacks).unwrap();
        assert_eq!(a.u, b.u);
    }

    #[test]
    fn shared_ffn_mode_uses_one_group() {
        let mut cfg = small_config();
        cfg.share_layer_ffns = true;
        let params = EncoderParams::init(cfg, 19).unwrap();
        assert_eq!(params.shared.len(), 1);
        let (diffused, _) = random_inputs(5, 4, 20, 2, 3);
        let mut tape = Tape::new();
        let enc = TapedEncoder::register(&mut tape, &params, false);
        let h = tape.constant(diffused[0].clone());
        let (c0, _) = enc.encode_layer(&mut tape, 0, h).unwrap();
        let h1 = tape.constant(diffused[0].clone());
        let (c1, _) = enc.encode_layer(&mut tape, 1, h1).unwrap();
        assert_eq!(tape.value(c0), tape.value(c1));
    }
}
