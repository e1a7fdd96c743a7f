//! Fully connected layer: `y = act(x W + b)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{glorot_uniform, Activation, Bound, Params};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Dense {
    w: usize,
    b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub act: Activation,
}

impl Dense {
    pub fn new<R: Rng>(
        params: &mut Params,
        rng: &mut R,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        act: Activation,
    ) -> Result<Self> {
        let w = params.add(
            &format!("{prefix}.w"),
            vec![in_dim, out_dim],
            glorot_uniform(rng, in_dim, out_dim, in_dim * out_dim),
        )?;
        let b = params.add(&format!("{prefix}.b"), vec![out_dim], vec![0.0; out_dim])?;
        Ok(Dense { w, b, in_dim, out_dim, act })
    }

    /// `x: [rows, in_dim] -> [rows, out_dim]`.
    pub fn forward(&self, bound: &Bound, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::DimensionMismatch {
                op: "dense",
                what: "input width",
                expected: self.in_dim,
                got: *shape.last().unwrap_or(&0),
            });
        }
        let z = x.matmul(bound.leaf(self.w))?.add_row_bias(bound.leaf(self.b))?;
        self.act.apply(&z)
    }
}
