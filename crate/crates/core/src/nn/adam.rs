use crate::error::{MlcsError, Result};
use crate::nn::DenseMatrix;

/// Adam with bias correction and coupled weight decay (decay added to the
/// gradient). One (m, v) pair per parameter, aligned by registration order.
#[derive(Debug, Clone)]
pub struct AdamState {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    moments: Vec<(DenseMatrix, DenseMatrix)>,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)], weight_decay: f64) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: shapes
                .iter()
                .map(|&(r, c)| (DenseMatrix::zeros(r, c), DenseMatrix::zeros(r, c)))
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Advance the step counter; follow with one `update` per parameter.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Update parameter `idx` in place. A visitor-friendly splitting of the
    /// classic update so callers iterating parameters by canonical order
    /// need not collect mutable references first.
    pub fn update(
        &mut self,
        idx: usize,
        name: &str,
        param: &mut DenseMatrix,
        grad: &DenseMatrix,
        lr: f64,
    ) -> Result<()> {
        let count = self.moments.len();
        let (m, v) = self.moments.get_mut(idx).ok_or_else(|| {
            MlcsError::Dimension(format!(
                "adam update index {idx} beyond {count} registered parameters"
            ))
        })?;
        if grad.shape() != param.shape() || m.shape() != param.shape() {
            return Err(MlcsError::Dimension(format!(
                "gradient shape {:?} for parameter '{}' of shape {:?}",
                grad.shape(),
                name,
                param.shape()
            )));
        }
        if !grad.is_finite() {
            return Err(MlcsError::Numeric(format!(
                "non-finite gradient for parameter '{name}'"
            )));
        }
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..param.data().len() {
            let g = grad.data()[i] + self.weight_decay * param.data()[i];
            let m_val = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
            let v_val = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
            m.data_mut()[i] = m_val;
            v.data_mut()[i] = v_val;
            let m_hat = m_val / bc1;
            let v_hat = v_val / bc2;
            param.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// One update over all parameters at once. A missing gradient leaves
    /// the parameter untouched (decay enters through the gradient, so
    /// no-grad parameters do not decay either).
    pub fn step(
        &mut self,
        params: &mut [(&str, &mut DenseMatrix)],
        grads: &[Option<&DenseMatrix>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.moments.len() || grads.len() != self.moments.len() {
            return Err(MlcsError::Dimension(format!(
                "adam over {} moment pairs given {} params / {} grads",
                self.moments.len(),
                params.len(),
                grads.len()
            )));
        }
        self.begin_step();
        for (idx, ((name, param), grad)) in params.iter_mut().zip(grads.iter()).enumerate() {
            let Some(grad) = grad else { continue };
            self.update(idx, name, param, grad, lr)?;
        }
        Ok(())
    }
}
