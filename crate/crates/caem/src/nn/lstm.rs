//! LSTM with full-matrix cell feedback, and a sum-merged bidirectional
//! wrapper.
//!
//! The cell deviates from the textbook LSTM in two deliberate ways: the
//! previous cell state enters *every* gate through a full weight matrix
//! (`w_ci`, `w_cf`, `w_cc`, `w_co`), including the candidate, and the
//! output gate reads the *previous* cell state, not the updated one:
//!
//! ```text
//! i = sigmoid(x w_zi + h w_yi + c w_ci + b_i)
//! f = sigmoid(x w_zf + h w_yf + c w_cf + b_f)
//! g =    tanh(x w_zc + h w_yc + c w_cc + b_c)
//! c' = f * c + i * g
//! o = sigmoid(x w_zo + h w_yo + c w_co + b_o)
//! h' = o * tanh(c')
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{glorot_uniform, uniform_init, Bound, Params};
use crate::tensor::{Tape, Tensor};

const RECURRENT_LIMIT: f64 = 0.08;

#[derive(Debug, Clone)]
pub struct LstmCell {
    // Gate order within the arrays: input, forget, candidate, output.
    w_z: [usize; 4],
    w_y: [usize; 4],
    w_c: [usize; 4],
    b: [usize; 4],
    pub in_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(params: &mut Params, rng: &mut R, prefix: &str, in_dim: usize, hidden: usize) -> Result<Self> {
        let gates = ["i", "f", "c", "o"];
        let mut w_z = [0; 4];
        let mut w_y = [0; 4];
        let mut w_c = [0; 4];
        let mut b = [0; 4];
        for (k, g) in gates.iter().enumerate() {
            w_z[k] = params.add(
                &format!("{prefix}.w_z{g}"),
                vec![in_dim, hidden],
                glorot_uniform(rng, in_dim, hidden, in_dim * hidden),
            )?;
        }
        for (k, g) in gates.iter().enumerate() {
            w_y[k] = params.add(
                &format!("{prefix}.w_y{g}"),
                vec![hidden, hidden],
                uniform_init(rng, RECURRENT_LIMIT, hidden * hidden),
            )?;
        }
        for (k, g) in gates.iter().enumerate() {
            w_c[k] = params.add(
                &format!("{prefix}.w_c{g}"),
                vec![hidden, hidden],
                uniform_init(rng, RECURRENT_LIMIT, hidden * hidden),
            )?;
        }
        for (k, g) in gates.iter().enumerate() {
            // Forget gate starts open so early training does not erase state.
            let init = if *g == "f" { 1.0 } else { 0.0 };
            b[k] = params.add(&format!("{prefix}.b_{g}"), vec![hidden], vec![init; hidden])?;
        }
        Ok(LstmCell { w_z, w_y, w_c, b, in_dim, hidden })
    }

    fn gate_preact(&self, bound: &Bound, k: usize, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<Tensor> {
        x.matmul(bound.leaf(self.w_z[k]))?
            .add(&h.matmul(bound.leaf(self.w_y[k]))?)?
            .add(&c.matmul(bound.leaf(self.w_c[k]))?)?
            .add_row_bias(bound.leaf(self.b[k]))
    }

    /// One step. `x: [batch, in_dim]`, state `[batch, hidden]` each.
    pub fn step(&self, bound: &Bound, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let xs = x.shape();
        if xs.len() != 2 || xs[1] != self.in_dim {
            return Err(Error::DimensionMismatch {
                op: "lstm",
                what: "input width",
                expected: self.in_dim,
                got: xs.get(1).copied().unwrap_or(0),
            });
        }
        let want = vec![xs[0], self.hidden];
        if h.shape() != want || c.shape() != want {
            return Err(Error::StateMismatch {
                detail: format!("expected state {:?}, got h {:?}, c {:?}", want, h.shape(), c.shape()),
            });
        }
        let i = self.gate_preact(bound, 0, x, h, c)?.sigmoid()?;
        let f = self.gate_preact(bound, 1, x, h, c)?.sigmoid()?;
        let g = self.gate_preact(bound, 2, x, h, c)?.tanh()?;
        let c_next = f.mul(c)?.add(&i.mul(&g)?)?;
        let o = self.gate_preact(bound, 3, x, h, c)?.sigmoid()?;
        let h_next = o.mul(&c_next.tanh()?)?;
        Ok((h_next, c_next))
    }

    /// Run over a sequence from zero state; returns the hidden state after
    /// each step.
    pub fn scan(&self, tape: &Tape, bound: &Bound, seq: &[Tensor]) -> Result<Vec<Tensor>> {
        let first = seq.first().ok_or(Error::TooFewSteps { needed: 1, got: 0 })?;
        let batch = first.shape()[0];
        let mut h = tape.zeros(vec![batch, self.hidden])?;
        let mut c = tape.zeros(vec![batch, self.hidden])?;
        let mut out = Vec::with_capacity(seq.len());
        for x in seq {
            let (h2, c2) = self.step(bound, x, &h, &c)?;
            out.push(h2.clone());
            h = h2;
            c = c2;
        }
        Ok(out)
    }
}

/// Two cells over opposite directions, merged by element-wise sum per step.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new<R: Rng>(params: &mut Params, rng: &mut R, prefix: &str, in_dim: usize, hidden: usize) -> Result<Self> {
        let fwd = LstmCell::new(params, rng, &format!("{prefix}.fwd"), in_dim, hidden)?;
        let bwd = LstmCell::new(params, rng, &format!("{prefix}.bwd"), in_dim, hidden)?;
        Ok(BiLstm { fwd, bwd, hidden })
    }

    /// `seq` of `[batch, in_dim]` tensors -> per-step `[batch, hidden]`.
    pub fn forward(&self, tape: &Tape, bound: &Bound, seq: &[Tensor]) -> Result<Vec<Tensor>> {
        let hf = self.fwd.scan(tape, bound, seq)?;
        let rev: Vec<Tensor> = seq.iter().rev().cloned().collect();
        let mut hb = self.bwd.scan(tape, bound, &rev)?;
        hb.reverse();
        hf.iter().zip(&hb).map(|(a, b)| a.add(b)).collect()
    }
}
