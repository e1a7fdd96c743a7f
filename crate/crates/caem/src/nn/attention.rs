//! Step-weighting attention over a sequence of hidden states.
//!
//! Each step's state is scored through a small two-stage head, the scores
//! are softmax-normalized across steps, and the output is the weighted sum
//! of the states:
//!
//! ```text
//! m_s = tanh(y_s w_h + b_h)          [batch, attn_dim]
//! e_s = sigmoid(m_s w_a + b_a)       [batch, 1]
//! a   = softmax over steps of e      [batch, steps]
//! out = sum_s a[:, s] * y_s          [batch, hidden]
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{glorot_uniform, Bound, Params};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Attention {
    w_h: usize,
    b_h: usize,
    w_a: usize,
    b_a: usize,
    pub in_dim: usize,
    pub attn_dim: usize,
}

impl Attention {
    pub fn new<R: Rng>(params: &mut Params, rng: &mut R, prefix: &str, in_dim: usize, attn_dim: usize) -> Result<Self> {
        let w_h = params.add(
            &format!("{prefix}.w_h"),
            vec![in_dim, attn_dim],
            glorot_uniform(rng, in_dim, attn_dim, in_dim * attn_dim),
        )?;
        let b_h = params.add(&format!("{prefix}.b_h"), vec![attn_dim], vec![0.0; attn_dim])?;
        let w_a = params.add(
            &format!("{prefix}.w_a"),
            vec![attn_dim, 1],
            glorot_uniform(rng, attn_dim, 1, attn_dim),
        )?;
        let b_a = params.add(&format!("{prefix}.b_a"), vec![1], vec![0.0])?;
        Ok(Attention { w_h, b_h, w_a, b_a, in_dim, attn_dim })
    }

    /// Attention weights for each step: `[batch, steps]`, rows sum to 1.
    pub fn weights(&self, bound: &Bound, seq: &[Tensor]) -> Result<Tensor> {
        if seq.is_empty() {
            return Err(Error::TooFewSteps { needed: 1, got: 0 });
        }
        let mut scores = Vec::with_capacity(seq.len());
        for y in seq {
            let shape = y.shape();
            if shape.len() != 2 || shape[1] != self.in_dim {
                return Err(Error::DimensionMismatch {
                    op: "attention",
                    what: "state width",
                    expected: self.in_dim,
                    got: shape.get(1).copied().unwrap_or(0),
                });
            }
            let m = y.matmul(bound.leaf(self.w_h))?.add_row_bias(bound.leaf(self.b_h))?.tanh()?;
            let e = m.matmul(bound.leaf(self.w_a))?.add_row_bias(bound.leaf(self.b_a))?.sigmoid()?;
            scores.push(e);
        }
        Tensor::concat(&scores, 1)?.softmax(1)
    }

    /// Weighted sum of the steps: `[batch, in_dim]`.
    pub fn forward(&self, bound: &Bound, seq: &[Tensor]) -> Result<Tensor> {
        let a = self.weights(bound, seq)?;
        let mut out: Option<Tensor> = None;
        for (s, y) in seq.iter().enumerate() {
            let w = a.slice(1, s, 1)?;
            let term = y.scale_rows(&w)?;
            out = Some(match out {
                None => term,
                Some(acc) => acc.add(&term)?,
            });
        }
        Ok(out.expect("seq checked non-empty"))
    }
}
