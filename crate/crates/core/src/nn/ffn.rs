use crate::error::{MlcsError, Result};
use crate::nn::{glorot_from_rng, DenseMatrix};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = MlcsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(MlcsError::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// One affine map: x (n×in) -> x·w + b, with w in×out and b 1×out.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: DenseMatrix,
    pub b: DenseMatrix,
}

impl Linear {
    pub fn glorot(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: glorot_from_rng(input, output, rng),
            b: DenseMatrix::zeros(1, output),
        }
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = x.matmul(&self.w)?;
        let bias = self.b.row(0);
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(bias.iter()) {
                *o += b;
            }
        }
        Ok(out)
    }
}

/// A feedforward network: a chain of affine maps with the hidden activation
/// between consecutive maps and identity on the output. The default shape is
/// three maps (input layer, one hidden layer, output layer).
#[derive(Debug, Clone, PartialEq)]
pub struct Ffn {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Ffn {
    /// Build from a dimension chain, e.g. `[f, f_h, f_h, f_h]` gives the
    /// default three-map network.
    pub fn glorot(dims: &[usize], activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(MlcsError::Config("an FFN needs at least one affine map".into()));
        }
        let layers = dims
            .windows(2)
            .map(|w| Linear::glorot(w[0], w[1], rng))
            .collect();
        Ok(Ffn { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.cols()
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.input_dim() {
            return Err(MlcsError::Dimension(format!(
                "FFN input dim {} fed with {} columns",
                self.input_dim(),
                x.cols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut cur = x.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            cur = layer.forward(&cur)?;
            if idx != last {
                cur = cur.map(|v| self.activation.apply(v));
            }
        }
        Ok(cur)
    }
}
