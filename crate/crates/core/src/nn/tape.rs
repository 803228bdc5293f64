//! Reverse-mode autodiff over a flat tape. Values are computed eagerly as
//! ops are recorded; `backward` walks the tape in reverse (parents always
//! precede children, so reverse id order is a topological order).

use crate::error::{MlcsError, Result};
use crate::nn::{Activation, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Scale(TensorId, f64),
    AddConst(TensorId),
    AddRowBroadcast(TensorId, TensorId),
    Hadamard(TensorId, TensorId),
    ColBroadcastMul(TensorId, TensorId),
    Relu(TensorId),
    Tanh(TensorId),
    Sigmoid(TensorId),
    Abs(TensorId),
    Sqrt(TensorId),
    Div(TensorId, TensorId),
    ConcatCols(Vec<TensorId>),
    SliceCols(TensorId, usize, usize),
    SumAll(TensorId),
    RowDot(TensorId, TensorId),
    GatherRows(TensorId, Vec<usize>),
    SoftmaxRows(TensorId),
}

struct Node {
    op: Op,
    value: DenseMatrix,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct GradStore {
    grads: Vec<Option<DenseMatrix>>,
}

impl GradStore {
    pub fn grad(&self, id: TensorId) -> Option<&DenseMatrix> {
        self.grads[id.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &DenseMatrix {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        self.nodes[id.0].value.scalar()
    }

    pub fn constant(&mut self, value: DenseMatrix) -> TensorId {
        self.push(Op::Leaf, value, false)
    }

    pub fn parameter(&mut self, value: DenseMatrix) -> TensorId {
        self.push(Op::Leaf, value, true)
    }

    fn push(&mut self, op: Op, value: DenseMatrix, needs_grad: bool) -> TensorId {
        debug_assert!(value.is_finite(), "non-finite tensor from {op:?}");
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value, self.needs(&[a, b])))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value, self.needs(&[a, b])))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value, self.needs(&[a, b])))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let value = self.value(a).scale(c);
        self.push(Op::Scale(a, c), value, self.needs(&[a]))
    }

    pub fn add_const(&mut self, a: TensorId, c: f64) -> TensorId {
        let value = self.value(a).map(|v| v + c);
        self.push(Op::AddConst(a), value, self.needs(&[a]))
    }

    /// a (n×m) + row (1×m), broadcast over rows.
    pub fn add_row_broadcast(&mut self, a: TensorId, row: TensorId) -> Result<TensorId> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(MlcsError::Dimension(format!(
                "row broadcast {}x{} onto {}x{}",
                rm.rows(),
                rm.cols(),
                am.rows(),
                am.cols()
            )));
        }
        let bias = rm.row(0).to_vec();
        let mut value = am.clone();
        for i in 0..value.rows() {
            for (o, &b) in value.row_mut(i).iter_mut().zip(bias.iter()) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddRowBroadcast(a, row), value, self.needs(&[a, row])))
    }

    pub fn hadamard(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), value, self.needs(&[a, b])))
    }

    /// col (n×1) scaling each row of a (n×m).
    pub fn col_broadcast_mul(&mut self, col: TensorId, a: TensorId) -> Result<TensorId> {
        let (cm, am) = (self.value(col), self.value(a));
        if cm.cols() != 1 || cm.rows() != am.rows() {
            return Err(MlcsError::Dimension(format!(
                "col broadcast {}x{} onto {}x{}",
                cm.rows(),
                cm.cols(),
                am.rows(),
                am.cols()
            )));
        }
        let value = DenseMatrix::from_fn(am.rows(), am.cols(), |i, j| cm.get(i, 0) * am.get(i, j));
        Ok(self.push(Op::ColBroadcastMul(col, a), value, self.needs(&[col, a])))
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), value, self.needs(&[a]))
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value, self.needs(&[a]))
    }

    pub fn activation(&mut self, a: TensorId, act: Activation) -> TensorId {
        match act {
            Activation::Relu => self.relu(a),
            Activation::Tanh => self.tanh(a),
        }
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let value = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(Op::Sigmoid(a), value, self.needs(&[a]))
    }

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        let value = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), value, self.needs(&[a]))
    }

    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        let value = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), value, self.needs(&[a]))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.push(Op::Div(a, b), value, self.needs(&[a, b])))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        let values: Vec<&DenseMatrix> = parts.iter().map(|&id| self.value(id)).collect();
        let value = DenseMatrix::concat_cols(&values)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value, self.needs(parts)))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let am = self.value(a);
        if start >= end || end > am.cols() {
            return Err(MlcsError::Dimension(format!(
                "column slice {}..{} of a {}-column matrix",
                start,
                end,
                am.cols()
            )));
        }
        let value = DenseMatrix::from_fn(am.rows(), end - start, |i, j| am.get(i, start + j));
        Ok(self.push(Op::SliceCols(a, start, end), value, self.needs(&[a])))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let value = DenseMatrix::from_vec(1, 1, vec![self.value(a).sum()]).unwrap();
        self.push(Op::SumAll(a), value, self.needs(&[a]))
    }

    /// Per-row dot product of two equally shaped matrices -> n×1.
    pub fn row_dot(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.shape() != bm.shape() {
            return Err(MlcsError::Dimension(format!(
                "row_dot {}x{} vs {}x{}",
                am.rows(),
                am.cols(),
                bm.rows(),
                bm.cols()
            )));
        }
        let value = DenseMatrix::from_fn(am.rows(), 1, |i, _| {
            am.row(i).iter().zip(bm.row(i)).map(|(&x, &y)| x * y).sum()
        });
        Ok(self.push(Op::RowDot(a, b), value, self.needs(&[a, b])))
    }

    pub fn gather_rows(&mut self, a: TensorId, indices: &[usize]) -> Result<TensorId> {
        let am = self.value(a);
        for &i in indices {
            if i >= am.rows() {
                return Err(MlcsError::Dimension(format!(
                    "gather row {} of a {}-row matrix",
                    i,
                    am.rows()
                )));
            }
        }
        let value = DenseMatrix::from_fn(indices.len(), am.cols(), |k, j| am.get(indices[k], j));
        Ok(self.push(Op::GatherRows(a, indices.to_vec()), value, self.needs(&[a])))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: TensorId) -> TensorId {
        let am = self.value(a);
        let mut value = am.clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(Op::SoftmaxRows(a), value, self.needs(&[a]))
    }

    /// Smallest |x| fed into any relu on this tape, or None when no relu was
    /// recorded. Finite-difference checks need clearance from the kink; a
    /// pre-activation within the probe step of zero invalidates them.
    pub fn min_abs_relu_input(&self) -> Option<f64> {
        let mut min: Option<f64> = None;
        for node in &self.nodes {
            if let Op::Relu(a) = &node.op {
                for &v in self.value(*a).data() {
                    let abs = v.abs();
                    min = Some(min.map_or(abs, |m: f64| m.min(abs)));
                }
            }
        }
        min
    }

    /// Gradients of a scalar loss with respect to every grad-tracked node.
    pub fn backward(&self, loss: TensorId) -> Result<GradStore> {
        if self.value(loss).shape() != (1, 1) {
            return Err(MlcsError::Contract(format!(
                "backward root must be a 1x1 scalar, got {}x{}",
                self.value(loss).rows(),
                self.value(loss).cols()
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap());

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let grad = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_parents(idx, &grad, &mut grads)?;
            grads[idx] = Some(grad);
        }
        Ok(GradStore { grads })
    }

    fn accumulate_parents(
        &self,
        idx: usize,
        grad: &DenseMatrix,
        grads: &mut [Option<DenseMatrix>],
    ) -> Result<()> {
        let node = &self.nodes[idx];
        let add_to = |id: TensorId, contribution: DenseMatrix, grads: &mut [Option<DenseMatrix>]| -> Result<()> {
            if !self.nodes[id.0].needs_grad {
                return Ok(());
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&contribution)?,
                slot @ None => *slot = Some(contribution),
            }
            Ok(())
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    let ga = grad.matmul(&self.value(*b).transpose())?;
                    add_to(*a, ga, grads)?;
                }
                if self.nodes[b.0].needs_grad {
                    let gb = self.value(*a).transpose().matmul(grad)?;
                    add_to(*b, gb, grads)?;
                }
            }
            Op::Add(a, b) => {
                add_to(*a, grad.clone(), grads)?;
                add_to(*b, grad.clone(), grads)?;
            }
            Op::Sub(a, b) => {
                add_to(*a, grad.clone(), grads)?;
                add_to(*b, grad.scale(-1.0), grads)?;
            }
            Op::Scale(a, c) => {
                add_to(*a, grad.scale(*c), grads)?;
            }
            Op::AddConst(a) => {
                add_to(*a, grad.clone(), grads)?;
            }
            Op::AddRowBroadcast(a, row) => {
                add_to(*a, grad.clone(), grads)?;
                if self.nodes[row.0].needs_grad {
                    let mut g_row = DenseMatrix::zeros(1, grad.cols());
                    for i in 0..grad.rows() {
                        for (o, &g) in g_row.row_mut(0).iter_mut().zip(grad.row(i)) {
                            *o += g;
                        }
                    }
                    add_to(*row, g_row, grads)?;
                }
            }
            Op::Hadamard(a, b) => {
                if self.nodes[a.0].needs_grad {
                    add_to(*a, grad.hadamard(self.value(*b))?, grads)?;
                }
                if self.nodes[b.0].needs_grad {
                    add_to(*b, grad.hadamard(self.value(*a))?, grads)?;
                }
            }
            Op::ColBroadcastMul(col, a) => {
                let (cm, am) = (self.value(*col), self.value(*a));
                if self.nodes[col.0].needs_grad {
                    let g_col = DenseMatrix::from_fn(cm.rows(), 1, |i, _| {
                        grad.row(i).iter().zip(am.row(i)).map(|(&g, &v)| g * v).sum()
                    });
                    add_to(*col, g_col, grads)?;
                }
                if self.nodes[a.0].needs_grad {
                    let g_a =
                        DenseMatrix::from_fn(am.rows(), am.cols(), |i, j| cm.get(i, 0) * grad.get(i, j));
                    add_to(*a, g_a, grads)?;
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let g = grad.zip_map(x, |g, v| if v > 0.0 { g } else { 0.0 })?;
                add_to(*a, g, grads)?;
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let g = grad.zip_map(y, |g, t| g * (1.0 - t * t))?;
                add_to(*a, g, grads)?;
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let g = grad.zip_map(y, |g, s| g * s * (1.0 - s))?;
                add_to(*a, g, grads)?;
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                let g = grad.zip_map(x, |g, v| {
                    if v > 0.0 {
                        g
                    } else if v < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                })?;
                add_to(*a, g, grads)?;
            }
            Op::Sqrt(a) => {
                let y = &node.value;
                let g = grad.zip_map(y, |g, s| g * 0.5 / s)?;
                add_to(*a, g, grads)?;
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    add_to(*a, grad.zip_map(bv, |g, y| g / y)?, grads)?;
                }
                if self.nodes[b.0].needs_grad {
                    let mut g_b = grad.hadamard(av)?;
                    g_b = g_b.zip_map(bv, |g, y| -g / (y * y))?;
                    add_to(*b, g_b, grads)?;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &part in parts {
                    let cols = self.value(part).cols();
                    if self.nodes[part.0].needs_grad {
                        let g = DenseMatrix::from_fn(grad.rows(), cols, |i, j| {
                            grad.get(i, offset + j)
                        });
                        add_to(part, g, grads)?;
                    }
                    offset += cols;
                }
            }
            Op::SliceCols(a, start, _end) => {
                let am = self.value(*a);
                let mut g = DenseMatrix::zeros(am.rows(), am.cols());
                for i in 0..grad.rows() {
                    for j in 0..grad.cols() {
                        g.set(i, start + j, grad.get(i, j));
                    }
                }
                add_to(*a, g, grads)?;
            }
            Op::SumAll(a) => {
                let am = self.value(*a);
                let g0 = grad.scalar();
                let g = DenseMatrix::from_fn(am.rows(), am.cols(), |_, _| g0);
                add_to(*a, g, grads)?;
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    let g = DenseMatrix::from_fn(av.rows(), av.cols(), |i, j| {
                        grad.get(i, 0) * bv.get(i, j)
                    });
                    add_to(*a, g, grads)?;
                }
                if self.nodes[b.0].needs_grad {
                    let g = DenseMatrix::from_fn(bv.rows(), bv.cols(), |i, j| {
                        grad.get(i, 0) * av.get(i, j)
                    });
                    add_to(*b, g, grads)?;
                }
            }
            Op::GatherRows(a, indices) => {
                let am = self.value(*a);
                let mut g = DenseMatrix::zeros(am.rows(), am.cols());
                for (k, &i) in indices.iter().enumerate() {
                    for (o, &gv) in g.row_mut(i).iter_mut().zip(grad.row(k)) {
                        *o += gv;
                    }
                }
                add_to(*a, g, grads)?;
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let g = DenseMatrix::from_fn(y.rows(), y.cols(), |i, j| {
                    let dot: f64 = grad.row(i).iter().zip(y.row(i)).map(|(&g, &v)| g * v).sum();
                    y.get(i, j) * (grad.get(i, j) - dot)
                });
                add_to(*a, g, grads)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::glorot_init;

    /// Central finite differences on a scalar-valued function of one matrix.
    fn finite_diff(
        build: impl Fn(&DenseMatrix) -> f64,
        at: &DenseMatrix,
        h: f64,
    ) -> DenseMatrix {
        let mut g = DenseMatrix::zeros(at.rows(), at.cols());
        for i in 0..at.rows() {
            for j in 0..at.cols() {
                let mut plus = at.clone();
                plus.set(i, j, at.get(i, j) + h);
                let mut minus = at.clone();
                minus.set(i, j, at.get(i, j) - h);
                g.set(i, j, (build(&plus) - build(&minus)) / (2.0 * h));
            }
        }
        g
    }

    fn rel_err(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        let norm = |m: &DenseMatrix| m.data().iter().map(|&x| x * x).sum::<f64>().sqrt();
        let diff: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        diff / (norm(a) + norm(b) + 1e-8)
    }

    #[test]
    fn constant_loss_has_no_gradients() {
        let mut tape = Tape::new();
        let p = tape.parameter(glorot_init(2, 3, 1));
        let c = tape.constant(DenseMatrix::from_vec(1, 1, vec![5.0]).unwrap());
        let grads = tape.backward(c).unwrap();
        assert!(grads.grad(p).is_none());
    }

    #[test]
    fn non_scalar_root_is_contract_error() {
        let mut tape = Tape::new();
        let p = tape.parameter(glorot_init(2, 3, 1));
        assert!(matches!(tape.backward(p), Err(MlcsError::Contract(_))));
    }

    #[test]
    fn sum_of_losses_sums_gradients() {
        let mut tape = Tape::new();
        let p = tape.parameter(glorot_init(3, 3, 7));
        let sq = tape.hadamard(p, p).unwrap();
        let l1 = tape.sum_all(sq);
        let sg = tape.sigmoid(p);
        let l2 = tape.sum_all(sg);
        let both = tape.add(l1, l2).unwrap();

        let g1 = tape.backward(l1).unwrap();
        let g2 = tape.backward(l2).unwrap();
        let g = tape.backward(both).unwrap();

        let summed = g1.grad(p).unwrap().add(g2.grad(p).unwrap()).unwrap();
        assert!(rel_err(g.grad(p).unwrap(), &summed) < 1e-12);
    }

    /// Every op composed into a scalar must match central differences.
    #[test]
    fn composite_graph_matches_finite_differences() {
        let x0 = glorot_init(4, 3, 11);
        let w0 = glorot_init(3, 5, 12);
        let build = |x: &DenseMatrix, w: &DenseMatrix| -> (Tape, TensorId, TensorId, TensorId) {
            let mut tape = Tape::new();
            let xt = tape.parameter(x.clone());
            let wt = tape.parameter(w.clone());
            let b = tape.constant(glorot_init(1, 5, 13));
            let mm = tape.matmul(xt, wt).unwrap();
            let lin0 = tape.add_row_broadcast(mm, b).unwrap();
            // Bias toward the active side so the relu mask is mixed rather
            // than all-dead on this small random instance.
            let lin = tape.add_const(lin0, 0.4);
            let act = tape.relu(lin);
            let sg = tape.sigmoid(act);
            let th = tape.tanh(sg);
            let sliced = tape.slice_cols(th, 1, 4).unwrap();
            let soft = tape.softmax_rows(sliced);
            let gathered = tape.gather_rows(soft, &[0, 2, 2, 3]).unwrap();
            let other = tape.gather_rows(th, &[1, 1, 0, 2]).unwrap();
            let other3 = tape.slice_cols(other, 0, 3).unwrap();
            let rd = tape.row_dot(gathered, other3).unwrap();
            let col = tape.col_broadcast_mul(rd, gathered).unwrap();
            let cat = tape.concat_cols(&[col, rd]).unwrap();
            let shifted = tape.add_const(cat, 0.3);
            let absd = tape.abs(shifted);
            let sq = tape.hadamard(absd, absd).unwrap();
            let scaled = tape.scale(sq, 0.25);
            let plus = tape.add(scaled, absd).unwrap();
            let minus = tape.sub(plus, scaled).unwrap();
            let sum = tape.sum_all(minus);
            let sum_pos = tape.add_const(sum, 4.0);
            let root = tape.sqrt(sum_pos);
            let denom = tape.add_const(root, 1.0);
            let loss = tape.div(sum_pos, denom).unwrap();
            (tape, loss, xt, wt)
        };

        let (tape, loss, xt, wt) = build(&x0, &w0);
        let grads = tape.backward(loss).unwrap();

        let fd_x = finite_diff(
            |x| {
                let (t, l, _, _) = build(x, &w0);
                t.scalar(l)
            },
            &x0,
            1e-6,
        );
        let fd_w = finite_diff(
            |w| {
                let (t, l, _, _) = build(&x0, w);
                t.scalar(l)
            },
            &w0,
            1e-6,
        );

        assert!(
            rel_err(grads.grad(xt).unwrap(), &fd_x) < 1e-6,
            "x grad err {}",
            rel_err(grads.grad(xt).unwrap(), &fd_x)
        );
        assert!(
            rel_err(grads.grad(wt).unwrap(), &fd_w) < 1e-6,
            "w grad err {}",
            rel_err(grads.grad(wt).unwrap(), &fd_w)
        );
    }
}
