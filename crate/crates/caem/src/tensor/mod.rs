//! Dense f64 tensors on a reverse-mode tape.
//!
//! Every operation appends one node to a shared arena. Node inputs always
//! have smaller indices than the node itself, so the arena order *is* a
//! topological order and the backward sweep is a single reverse pass over
//! the node vector, restricted to nodes reachable from the root.
//!
//! Design rules:
//! * all values are `f64`, stored row-major;
//! * every op validates shapes up front and checks its output for NaN/Inf,
//!   so a diverging computation fails at the op that produced it;
//! * reductions accumulate left to right in index order, which makes every
//!   forward (and backward) pass bit-for-bit reproducible;
//! * ties in `maxpool2x2` resolve to the first maximum in row-major scan
//!   order.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

pub mod check;

pub type NodeId = usize;

/// Number of elements a shape describes. The empty shape is a scalar.
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    Exp(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    MatMul(NodeId, NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SqSum(NodeId),
    RowSqSum(NodeId),
    AddRowBias(NodeId, NodeId),
    AddChannelBias(NodeId, NodeId),
    ScaleRows(NodeId, NodeId),
    Concat { axis: usize, inputs: Vec<NodeId> },
    Slice { input: NodeId, axis: usize, start: usize },
    Transpose { input: NodeId, a: usize, b: usize },
    Reshape(NodeId),
    Pad2d { input: NodeId, pad: [usize; 4] },
    Softmax { input: NodeId, axis: usize },
    Conv2d { input: NodeId, kernel: NodeId, stride: [usize; 2], pad: [usize; 2] },
    ConvTranspose2d { input: NodeId, kernel: NodeId, stride: [usize; 2], pad: [usize; 2] },
    MaxPool2x2 { input: NodeId, argmax: Vec<usize> },
    PairwiseSqDist(NodeId, NodeId),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::AddRowBias(a, b)
            | Op::AddChannelBias(a, b)
            | Op::ScaleRows(a, b)
            | Op::PairwiseSqDist(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::SqSum(a)
            | Op::RowSqSum(a)
            | Op::Reshape(a) => vec![*a],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Slice { input, .. }
            | Op::Transpose { input, .. }
            | Op::Pad2d { input, .. }
            | Op::Softmax { input, .. }
            | Op::MaxPool2x2 { input, .. } => vec![*input],
            Op::Conv2d { input, kernel, .. } | Op::ConvTranspose2d { input, kernel, .. } => {
                vec![*input, *kernel]
            }
        }
    }
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
}

/// Shared arena of computation nodes. Cloning a `Tape` clones the handle,
/// not the storage.
#[derive(Clone)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Rc::new(RefCell::new(Vec::new())) }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, op: Op, context: &'static str) -> Result<Tensor> {
        debug_assert_eq!(numel(&shape), data.len());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: context.to_string() });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, data, op });
        Ok(Tensor { tape: self.clone(), id: nodes.len() - 1 })
    }

    /// Record a constant/parameter value. Leaves are the only nodes
    /// gradients can be read for after [`Tensor::backward`].
    pub fn leaf(&self, data: Vec<f64>, shape: Vec<usize>) -> Result<Tensor> {
        if numel(&shape) != data.len() {
            return Err(shape_err(
                "leaf",
                format!("shape {:?} needs {} values, got {}", shape, numel(&shape), data.len()),
            ));
        }
        self.push(shape, data, Op::Leaf, "leaf")
    }

    pub fn zeros(&self, shape: Vec<usize>) -> Result<Tensor> {
        let n = numel(&shape);
        self.leaf(vec![0.0; n], shape)
    }

    pub fn scalar(&self, v: f64) -> Result<Tensor> {
        self.leaf(vec![v], vec![])
    }
}

/// Handle to one node of a [`Tape`].
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    id: NodeId,
}

/// Per-node gradients produced by [`Tensor::backward`]. Nodes the root does
/// not depend on have no entry.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `t`, if `t` influenced the root.
    pub fn wrt(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(t.id).and_then(|g| g.as_deref())
    }
}

macro_rules! get2 {
    ($nodes:expr, $a:expr, $b:expr) => {{
        let n = &$nodes;
        (&n[$a], &n[$b])
    }};
}

impl Tensor {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn data(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].data.clone()
    }

    /// Value of a single-element tensor.
    pub fn value(&self) -> Result<f64> {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        if node.data.len() != 1 {
            return Err(Error::NotScalar { shape: node.shape.clone() });
        }
        Ok(node.data[0])
    }

    fn check_mate(&self, other: &Tensor, _op: &'static str) -> Result<()> {
        if !self.tape.same_tape(&other.tape) {
            return Err(Error::DetachedRoot);
        }
        Ok(())
    }

    fn binary_same_shape(&self, other: &Tensor, op: &'static str) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
        self.check_mate(other, op)?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = get2!(nodes, self.id, other.id);
        if a.shape != b.shape {
            return Err(shape_err(op, format!("{:?} vs {:?}", a.shape, b.shape)));
        }
        Ok((a.shape.clone(), a.data.clone(), b.data.clone()))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, a, b) = self.binary_same_shape(other, "add")?;
        let data = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        self.tape.push(shape, data, Op::Add(self.id, other.id), "add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, a, b) = self.binary_same_shape(other, "sub")?;
        let data = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        self.tape.push(shape, data, Op::Sub(self.id, other.id), "sub")
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, a, b) = self.binary_same_shape(other, "mul")?;
        let data = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        self.tape.push(shape, data, Op::Mul(self.id, other.id), "mul")
    }

    pub fn neg(&self) -> Result<Tensor> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.data.iter().map(|x| -x).collect())
        };
        self.tape.push(shape, data, Op::Neg(self.id), "neg")
    }

    /// Multiply by a finite constant.
    pub fn scale(&self, c: f64) -> Result<Tensor> {
        if !c.is_finite() {
            return Err(Error::NonFinite { context: "scale constant".to_string() });
        }
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.data.iter().map(|x| c * x).collect())
        };
        self.tape.push(shape, data, Op::Scale(self.id, c), "scale")
    }

    pub fn exp(&self) -> Result<Tensor> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.data.iter().map(|x| x.exp()).collect())
        };
        self.tape.push(shape, data, Op::Exp(self.id), "exp")
    }

    pub fn tanh(&self) -> Result<Tensor> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.data.iter().map(|x| x.tanh()).collect())
        };
        self.tape.push(shape, data, Op::Tanh(self.id), "tanh")
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            // Two-branch form: never exponentiates a large positive argument.
            let data = n
                .data
                .iter()
                .map(|&x| {
                    if x >= 0.0 {
                        1.0 / (1.0 + (-x).exp())
                    } else {
                        let e = x.exp();
                        e / (1.0 + e)
                    }
                })
                .collect();
            (n.shape.clone(), data)
        };
        self.tape.push(shape, data, Op::Sigmoid(self.id), "sigmoid")
    }

    /// ReLU with subgradient 0 at the kink.
    pub fn relu(&self) -> Result<Tensor> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.data.iter().map(|x| x.max(0.0)).collect())
        };
        self.tape.push(shape, data, Op::Relu(self.id), "relu")
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_mate(other, "matmul")?;
        let (m, k, n, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = get2!(nodes, self.id, other.id);
            if a.shape.len() != 2 || b.shape.len() != 2 {
                return Err(shape_err("matmul", format!("need rank 2, got {:?} x {:?}", a.shape, b.shape)));
            }
            let (m, k) = (a.shape[0], a.shape[1]);
            let (k2, n) = (b.shape[0], b.shape[1]);
            if k != k2 {
                return Err(shape_err("matmul", format!("{:?} x {:?}", a.shape, b.shape)));
            }
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let av = a.data[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b.data[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += av * brow[j];
                    }
                }
            }
            (m, k, n, out)
        };
        let _ = (m, k);
        self.tape.push(vec![self.shape()[0], n], data, Op::MatMul(self.id, other.id), "matmul")
    }

    pub fn sum_all(&self) -> Result<Tensor> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].data.iter().sum::<f64>()
        };
        self.tape.push(vec![], vec![v], Op::SumAll(self.id), "sum_all")
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let (len, v) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            if n.data.is_empty() {
                return Err(Error::EmptyInput { what: "mean_all of empty tensor".to_string() });
            }
            (n.data.len(), n.data.iter().sum::<f64>())
        };
        self.tape.push(vec![], vec![v / len as f64], Op::MeanAll(self.id), "mean_all")
    }

    /// Sum of squares over every element, as a scalar.
    pub fn sq_sum(&self) -> Result<Tensor> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].data.iter().map(|x| x * x).sum::<f64>()
        };
        self.tape.push(vec![], vec![v], Op::SqSum(self.id), "sq_sum")
    }

    /// Per-row sum of squares: `[r,c] -> [r,1]`.
    pub fn row_sq_sum(&self) -> Result<Tensor> {
        let (r, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            if n.shape.len() != 2 {
                return Err(shape_err("row_sq_sum", format!("need rank 2, got {:?}", n.shape)));
            }
            let (r, c) = (n.shape[0], n.shape[1]);
            let mut out = vec![0.0; r];
            for i in 0..r {
                out[i] = n.data[i * c..(i + 1) * c].iter().map(|x| x * x).sum();
            }
            (r, out)
        };
        self.tape.push(vec![r, 1], data, Op::RowSqSum(self.id), "row_sq_sum")
    }

    /// `[r,c] + [c]`, broadcasting the bias over rows.
    pub fn add_row_bias(&self, bias: &Tensor) -> Result<Tensor> {
        self.check_mate(bias, "add_row_bias")?;
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = get2!(nodes, self.id, bias.id);
            if a.shape.len() != 2 || b.shape.len() != 1 || b.shape[0] != a.shape[1] {
                return Err(shape_err("add_row_bias", format!("{:?} + {:?}", a.shape, b.shape)));
            }
            let (r, c) = (a.shape[0], a.shape[1]);
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    out.push(a.data[i * c + j] + b.data[j]);
                }
            }
            (a.shape.clone(), out)
        };
        self.tape.push(shape, data, Op::AddRowBias(self.id, bias.id), "add_row_bias")
    }

    /// `[n,ch,h,w] + [ch]`, broadcasting the bias over batch and space.
    pub fn add_channel_bias(&self, bias: &Tensor) -> Result<Tensor> {
        self.check_mate(bias, "add_channel_bias")?;
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = get2!(nodes, self.id, bias.id);
            if a.shape.len() != 4 || b.shape.len() != 1 || b.shape[0] != a.shape[1] {
                return Err(shape_err("add_channel_bias", format!("{:?} + {:?}", a.shape, b.shape)));
            }
            let (n, ch) = (a.shape[0], a.shape[1]);
            let hw = a.shape[2] * a.shape[3];
            let mut out = a.data.clone();
            for bi in 0..n {
                for ci in 0..ch {
                    let base = (bi * ch + ci) * hw;
                    let bv = b.data[ci];
                    for v in &mut out[base..base + hw] {
                        *v += bv;
                    }
                }
            }
            (a.shape.clone(), out)
        };
        self.tape.push(shape, data, Op::AddChannelBias(self.id, bias.id), "add_channel_bias")
    }

    /// Multiply every row of `[r,c]` by the matching entry of `[r,1]`.
    pub fn scale_rows(&self, s: &Tensor) -> Result<Tensor> {
        self.check_mate(s, "scale_rows")?;
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = get2!(nodes, self.id, s.id);
            if a.shape.len() != 2 || b.shape != [a.shape[0], 1] {
                return Err(shape_err("scale_rows", format!("{:?} * {:?}", a.shape, b.shape)));
            }
            let (r, c) = (a.shape[0], a.shape[1]);
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                let sv = b.data[i];
                for j in 0..c {
                    out.push(a.data[i * c + j] * sv);
                }
            }
            (a.shape.clone(), out)
        };
        self.tape.push(shape, data, Op::ScaleRows(self.id, s.id), "scale_rows")
    }

    /// Concatenate tensors along `axis`. All other axes must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::EmptyInput { what: "concat of zero tensors".to_string() })?;
        for p in parts {
            first.check_mate(p, "concat")?;
        }
        let (shape, data) = {
            let nodes = first.tape.nodes.borrow();
            let base = nodes[first.id].shape.clone();
            if axis >= base.len() {
                return Err(shape_err("concat", format!("axis {} of {:?}", axis, base)));
            }
            let mut axis_total = 0;
            for p in parts {
                let s = &nodes[p.id].shape;
                if s.len() != base.len()
                    || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i])
                {
                    return Err(shape_err("concat", format!("{:?} with {:?} on axis {}", base, s, axis)));
                }
                axis_total += s[axis];
            }
            let mut shape = base.clone();
            shape[axis] = axis_total;
            let outer: usize = base[..axis].iter().product();
            let inner: usize = base[axis + 1..].iter().product();
            let mut data = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for p in parts {
                    let n = &nodes[p.id];
                    let block = n.shape[axis] * inner;
                    data.extend_from_slice(&n.data[o * block..(o + 1) * block]);
                }
            }
            (shape, data)
        };
        first.tape.push(
            shape,
            data,
            Op::Concat { axis, inputs: parts.iter().map(|p| p.id).collect() },
            "concat",
        )
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            if axis >= n.shape.len() || start + len > n.shape[axis] || len == 0 {
                return Err(shape_err(
                    "slice",
                    format!("[{start}, {start}+{len}) on axis {axis} of {:?}", n.shape),
                ));
            }
            let outer: usize = n.shape[..axis].iter().product();
            let inner: usize = n.shape[axis + 1..].iter().product();
            let full = n.shape[axis] * inner;
            let mut shape = n.shape.clone();
            shape[axis] = len;
            let mut data = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                let base = o * full + start * inner;
                data.extend_from_slice(&n.data[base..base + len * inner]);
            }
            (shape, data)
        };
        self.tape.push(shape, data, Op::Slice { input: self.id, axis, start }, "slice")
    }

    /// Swap two axes.
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            if a >= n.shape.len() || b >= n.shape.len() {
                return Err(shape_err("transpose", format!("axes {a},{b} of {:?}", n.shape)));
            }
            let mut shape = n.shape.clone();
            shape.swap(a, b);
            let in_str = strides(&n.shape);
            let out_str = strides(&shape);
            let mut data = vec![0.0; n.data.len()];
            let rank = shape.len();
            let mut idx = vec![0usize; rank];
            for (flat, slot) in data.iter_mut().enumerate() {
                let mut rem = flat;
                for d in 0..rank {
                    idx[d] = rem / out_str[d];
                    rem %= out_str[d];
                }
                idx.swap(a, b);
                let src: usize = idx.iter().zip(&in_str).map(|(i, s)| i * s).sum();
                *slot = n.data[src];
            }
            (shape, data)
        };
        self.tape.push(shape, data, Op::Transpose { input: self.id, a, b }, "transpose")
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let data = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            if numel(&shape) != n.data.len() {
                return Err(shape_err("reshape", format!("{:?} -> {:?}", n.shape, shape)));
            }
            n.data.clone()
        };
        self.tape.push(shape, data, Op::Reshape(self.id), "reshape")
    }

    /// Zero-pad the last two axes by `[top, bottom, left, right]`.
    pub fn pad2d(&self, pad: [usize; 4]) -> Result<Tensor> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            let rank = n.shape.len();
            if rank < 2 {
                return Err(shape_err("pad2d", format!("need rank >= 2, got {:?}", n.shape)));
            }
            let (h, w) = (n.shape[rank - 2], n.shape[rank - 1]);
            let (oh, ow) = (h + pad[0] + pad[1], w + pad[2] + pad[3]);
            let batch: usize = n.shape[..rank - 2].iter().product();
            let mut shape = n.shape.clone();
            shape[rank - 2] = oh;
            shape[rank - 1] = ow;
            let mut data = vec![0.0; batch * oh * ow];
            for bi in 0..batch {
                for y in 0..h {
                    let src = bi * h * w + y * w;
                    let dst = bi * oh * ow + (y + pad[0]) * ow + pad[2];
                    data[dst..dst + w].copy_from_slice(&n.data[src..src + w]);
                }
            }
            (shape, data)
        };
        self.tape.push(shape, data, Op::Pad2d { input: self.id, pad }, "pad2d")
    }

    /// Softmax along `axis`, max-shifted per lane for stability.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            if axis >= n.shape.len() {
                return Err(shape_err("softmax", format!("axis {} of {:?}", axis, n.shape)));
            }
            let outer: usize = n.shape[..axis].iter().product();
            let lane = n.shape[axis];
            let inner: usize = n.shape[axis + 1..].iter().product();
            let mut data = vec![0.0; n.data.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| o * lane * inner + k * inner + i;
                    let mut m = f64::NEG_INFINITY;
                    for k in 0..lane {
                        m = m.max(n.data[at(k)]);
                    }
                    let mut s = 0.0;
                    for k in 0..lane {
                        let e = (n.data[at(k)] - m).exp();
                        data[at(k)] = e;
                        s += e;
                    }
                    for k in 0..lane {
                        data[at(k)] /= s;
                    }
                }
            }
            (n.shape.clone(), data)
        };
        self.tape.push(shape, data, Op::Softmax { input: self.id, axis }, "softmax")
    }

    /// 2-D correlation: input `[n,ci,h,w]`, kernel `[co,ci,kh,kw]`, symmetric
    /// zero padding, output `[n,co,oh,ow]` with `oh = (h + 2p - kh)/s + 1`.
    pub fn conv2d(&self, kernel: &Tensor, stride: [usize; 2], pad: [usize; 2]) -> Result<Tensor> {
        self.check_mate(kernel, "conv2d")?;
        if stride[0] == 0 || stride[1] == 0 {
            return Err(shape_err("conv2d", "stride must be positive".to_string()));
        }
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (x, k) = get2!(nodes, self.id, kernel.id);
            if x.shape.len() != 4 || k.shape.len() != 4 || x.shape[1] != k.shape[1] {
                return Err(shape_err("conv2d", format!("input {:?}, kernel {:?}", x.shape, k.shape)));
            }
            let (nb, ci, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
            let (co, kh, kw) = (k.shape[0], k.shape[2], k.shape[3]);
            let (sh, sw) = (stride[0], stride[1]);
            let (ph, pw) = (pad[0], pad[1]);
            if h + 2 * ph < kh || w + 2 * pw < kw {
                return Err(shape_err("conv2d", format!("kernel {:?} larger than padded input {:?}", k.shape, x.shape)));
            }
            let oh = (h + 2 * ph - kh) / sh + 1;
            let ow = (w + 2 * pw - kw) / sw + 1;
            let mut out = vec![0.0; nb * co * oh * ow];
            for b in 0..nb {
                for c in 0..co {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for ic in 0..ci {
                                for ky in 0..kh {
                                    let iy = (oy * sh + ky) as isize - ph as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * sw + kx) as isize - pw as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        acc += x.data[((b * ci + ic) * h + iy as usize) * w + ix as usize]
                                            * k.data[((c * ci + ic) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                            out[((b * co + c) * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
            }
            (vec![nb, co, oh, ow], out)
        };
        self.tape.push(shape, data, Op::Conv2d { input: self.id, kernel: kernel.id, stride, pad }, "conv2d")
    }

    /// Transposed 2-D convolution (the exact adjoint of [`Tensor::conv2d`]
    /// with the same kernel buffer): input `[n,ci,h,w]`, kernel
    /// `[ci,co,kh,kw]`, output `[n,co,oh,ow]` with `oh = (h-1)s + kh - 2p`.
    pub fn conv_transpose2d(&self, kernel: &Tensor, stride: [usize; 2], pad: [usize; 2]) -> Result<Tensor> {
        self.check_mate(kernel, "conv_transpose2d")?;
        if stride[0] == 0 || stride[1] == 0 {
            return Err(shape_err("conv_transpose2d", "stride must be positive".to_string()));
        }
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (x, k) = get2!(nodes, self.id, kernel.id);
            if x.shape.len() != 4 || k.shape.len() != 4 || x.shape[1] != k.shape[0] {
                return Err(shape_err(
                    "conv_transpose2d",
                    format!("input {:?}, kernel {:?}", x.shape, k.shape),
                ));
            }
            let (nb, ci, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
            let (co, kh, kw) = (k.shape[1], k.shape[2], k.shape[3]);
            let (sh, sw) = (stride[0], stride[1]);
            let (ph, pw) = (pad[0], pad[1]);
            let oh = ((h - 1) * sh + kh).checked_sub(2 * ph);
            let ow = ((w - 1) * sw + kw).checked_sub(2 * pw);
            let (oh, ow) = match (oh, ow) {
                (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
                _ => {
                    return Err(shape_err(
                        "conv_transpose2d",
                        format!("padding {:?} swallows output of input {:?}", pad, x.shape),
                    ))
                }
            };
            let mut out = vec![0.0; nb * co * oh * ow];
            for b in 0..nb {
                for ic in 0..ci {
                    for iy in 0..h {
                        for ix in 0..w {
                            let v = x.data[((b * ci + ic) * h + iy) * w + ix];
                            if v == 0.0 {
                                continue;
                            }
                            for c in 0..co {
                                for ky in 0..kh {
                                    let oy = (iy * sh + ky) as isize - ph as isize;
                                    if oy < 0 || oy >= oh as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ox = (ix * sw + kx) as isize - pw as isize;
                                        if ox < 0 || ox >= ow as isize {
                                            continue;
                                        }
                                        out[((b * co + c) * oh + oy as usize) * ow + ox as usize] +=
                                            v * k.data[((ic * co + c) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            (vec![nb, co, oh, ow], out)
        };
        self.tape.push(
            shape,
            data,
            Op::ConvTranspose2d { input: self.id, kernel: kernel.id, stride, pad },
            "conv_transpose2d",
        )
    }

    /// 2x2 max pooling with stride 2 and floor semantics: a trailing odd row
    /// or column is dropped. Ties resolve to the first maximum in row-major
    /// order of the 2x2 patch.
    pub fn maxpool2x2(&self) -> Result<Tensor> {
        let (shape, data, argmax) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            if n.shape.len() != 4 {
                return Err(shape_err("maxpool2x2", format!("need rank 4, got {:?}", n.shape)));
            }
            let (nb, c, h, w) = (n.shape[0], n.shape[1], n.shape[2], n.shape[3]);
            if h < 2 || w < 2 {
                return Err(shape_err("maxpool2x2", format!("spatial dims too small: {:?}", n.shape)));
            }
            let (oh, ow) = (h / 2, w / 2);
            let mut data = vec![0.0; nb * c * oh * ow];
            let mut argmax = vec![0usize; data.len()];
            for b in 0..nb {
                for ch in 0..c {
                    let ibase = (b * c + ch) * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best_idx = ibase + (2 * oy) * w + 2 * ox;
                            let mut best = n.data[best_idx];
                            for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                                let idx = ibase + (2 * oy + dy) * w + 2 * ox + dx;
                                if n.data[idx] > best {
                                    best = n.data[idx];
                                    best_idx = idx;
                                }
                            }
                            let o = ((b * c + ch) * oh + oy) * ow + ox;
                            data[o] = best;
                            argmax[o] = best_idx;
                        }
                    }
                }
            }
            (vec![nb, c, oh, ow], data, argmax)
        };
        self.tape.push(shape, data, Op::MaxPool2x2 { input: self.id, argmax }, "maxpool2x2")
    }

    /// Squared Euclidean distances between rows: `[n,d] x [m,d] -> [n,m]`.
    pub fn pairwise_sqdist(&self, other: &Tensor) -> Result<Tensor> {
        self.check_mate(other, "pairwise_sqdist")?;
        let (n, m, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = get2!(nodes, self.id, other.id);
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[1] {
                return Err(shape_err("pairwise_sqdist", format!("{:?} vs {:?}", a.shape, b.shape)));
            }
            let (n, d) = (a.shape[0], a.shape[1]);
            let m = b.shape[0];
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                for j in 0..m {
                    let mut acc = 0.0;
                    for t in 0..d {
                        let diff = a.data[i * d + t] - b.data[j * d + t];
                        acc += diff * diff;
                    }
                    out[i * m + j] = acc;
                }
            }
            (n, m, out)
        };
        self.tape.push(vec![n, m], data, Op::PairwiseSqDist(self.id, other.id), "pairwise_sqdist")
    }

    /// Reverse sweep from a scalar root. Returns gradients for every node
    /// that the root depends on.
    pub fn backward(&self) -> Result<Gradients> {
        let nodes = self.tape.nodes.borrow();
        let root = &nodes[self.id];
        if root.data.len() != 1 {
            return Err(Error::NotScalar { shape: root.shape.clone() });
        }

        let mut reach = vec![false; nodes.len()];
        reach[self.id] = true;
        for i in (0..=self.id).rev() {
            if reach[i] {
                for inp in nodes[i].op.inputs() {
                    reach[inp] = true;
                }
            }
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[self.id] = Some(vec![1.0]);

        for i in (0..=self.id).rev() {
            if !reach[i] {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[i];

            // Lazily materialize the gradient buffer of input `j`.
            macro_rules! acc {
                ($j:expr) => {{
                    let j: NodeId = $j;
                    if grads[j].is_none() {
                        grads[j] = Some(vec![0.0; nodes[j].data.len()]);
                    }
                    grads[j].as_mut().unwrap()
                }};
            }

            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    {
                        let ga = acc!(*a);
                        for (x, y) in ga.iter_mut().zip(&g) {
                            *x += y;
                        }
                    }
                    let gb = acc!(*b);
                    for (x, y) in gb.iter_mut().zip(&g) {
                        *x += y;
                    }
                }
                Op::Sub(a, b) => {
                    {
                        let ga = acc!(*a);
                        for (x, y) in ga.iter_mut().zip(&g) {
                            *x += y;
                        }
                    }
                    let gb = acc!(*b);
                    for (x, y) in gb.iter_mut().zip(&g) {
                        *x -= y;
                    }
                }
                Op::Mul(a, b) => {
                    {
                        let bd = nodes[*b].data.clone();
                        let ga = acc!(*a);
                        for k in 0..g.len() {
                            ga[k] += g[k] * bd[k];
                        }
                    }
                    let ad = nodes[*a].data.clone();
                    let gb = acc!(*b);
                    for k in 0..g.len() {
                        gb[k] += g[k] * ad[k];
                    }
                }
                Op::Neg(a) => {
                    let ga = acc!(*a);
                    for (x, y) in ga.iter_mut().zip(&g) {
                        *x -= y;
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    let ga = acc!(*a);
                    for (x, y) in ga.iter_mut().zip(&g) {
                        *x += c * y;
                    }
                }
                Op::Exp(a) => {
                    let y = node.data.clone();
                    let ga = acc!(*a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k];
                    }
                }
                Op::Tanh(a) => {
                    let y = node.data.clone();
                    let ga = acc!(*a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.data.clone();
                    let ga = acc!(*a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
                Op::Relu(a) => {
                    let xd = nodes[*a].data.clone();
                    let ga = acc!(*a);
                    for k in 0..g.len() {
                        if xd[k] > 0.0 {
                            ga[k] += g[k];
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, kk) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                    let nn = nodes[*b].shape[1];
                    {
                        let bd = nodes[*b].data.clone();
                        let ga = acc!(*a);
                        for i in 0..m {
                            for j in 0..nn {
                                let gv = g[i * nn + j];
                                if gv == 0.0 {
                                    continue;
                                }
                                for p in 0..kk {
                                    ga[i * kk + p] += gv * bd[p * nn + j];
                                }
                            }
                        }
                    }
                    let ad = nodes[*a].data.clone();
                    let gb = acc!(*b);
                    for i in 0..m {
                        for p in 0..kk {
                            let av = ad[i * kk + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..nn {
                                gb[p * nn + j] += av * g[i * nn + j];
                            }
                        }
                    }
                }
                Op::SumAll(a) => {
                    let g0 = g[0];
                    let ga = acc!(*a);
                    for x in ga.iter_mut() {
                        *x += g0;
                    }
                }
                Op::MeanAll(a) => {
                    let g0 = g[0] / nodes[*a].data.len() as f64;
                    let ga = acc!(*a);
                    for x in ga.iter_mut() {
                        *x += g0;
                    }
                }
                Op::SqSum(a) => {
                    let g0 = g[0];
                    let xd = nodes[*a].data.clone();
                    let ga = acc!(*a);
                    for k in 0..ga.len() {
                        ga[k] += 2.0 * g0 * xd[k];
                    }
                }
                Op::RowSqSum(a) => {
                    let (r, c) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                    let xd = nodes[*a].data.clone();
                    let ga = acc!(*a);
                    for i in 0..r {
                        let gi = g[i];
                        for j in 0..c {
                            ga[i * c + j] += 2.0 * gi * xd[i * c + j];
                        }
                    }
                }
                Op::AddRowBias(a, b) => {
                    let (r, c) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                    {
                        let ga = acc!(*a);
                        for (x, y) in ga.iter_mut().zip(&g) {
                            *x += y;
                        }
                    }
                    let gb = acc!(*b);
                    for i in 0..r {
                        for j in 0..c {
                            gb[j] += g[i * c + j];
                        }
                    }
                }
                Op::AddChannelBias(a, b) => {
                    let (nb, ch) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                    let hw = nodes[*a].shape[2] * nodes[*a].shape[3];
                    {
                        let ga = acc!(*a);
                        for (x, y) in ga.iter_mut().zip(&g) {
                            *x += y;
                        }
                    }
                    let gb = acc!(*b);
                    for bi in 0..nb {
                        for ci in 0..ch {
                            let base = (bi * ch + ci) * hw;
                            let mut s = 0.0;
                            for k in 0..hw {
                                s += g[base + k];
                            }
                            gb[ci] += s;
                        }
                    }
                }
                Op::ScaleRows(a, b) => {
                    let (r, c) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                    {
                        let sd = nodes[*b].data.clone();
                        let ga = acc!(*a);
                        for i in 0..r {
                            for j in 0..c {
                                ga[i * c + j] += g[i * c + j] * sd[i];
                            }
                        }
                    }
                    let ad = nodes[*a].data.clone();
                    let gb = acc!(*b);
                    for i in 0..r {
                        let mut s = 0.0;
                        for j in 0..c {
                            s += g[i * c + j] * ad[i * c + j];
                        }
                        gb[i] += s;
                    }
                }
                Op::Concat { axis, inputs } => {
                    let axis = *axis;
                    let out_shape = node.shape.clone();
                    let outer: usize = out_shape[..axis].iter().product();
                    let inner: usize = out_shape[axis + 1..].iter().product();
                    let out_block = out_shape[axis] * inner;
                    let mut offset = 0;
                    for &inp in inputs {
                        let block = nodes[inp].shape[axis] * inner;
                        let gi = acc!(inp);
                        for o in 0..outer {
                            let src = o * out_block + offset;
                            let dst = o * block;
                            for k in 0..block {
                                gi[dst + k] += g[src + k];
                            }
                        }
                        offset += block;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let in_shape = nodes[*input].shape.clone();
                    let outer: usize = in_shape[..*axis].iter().product();
                    let inner: usize = in_shape[*axis + 1..].iter().product();
                    let full = in_shape[*axis] * inner;
                    let len = node.shape[*axis];
                    let gi = acc!(*input);
                    for o in 0..outer {
                        let dst = o * full + start * inner;
                        let src = o * len * inner;
                        for k in 0..len * inner {
                            gi[dst + k] += g[src + k];
                        }
                    }
                }
                Op::Transpose { input, a, b } => {
                    let out_shape = node.shape.clone();
                    let in_str = strides(&nodes[*input].shape);
                    let out_str = strides(&out_shape);
                    let rank = out_shape.len();
                    let gi = acc!(*input);
                    let mut idx = vec![0usize; rank];
                    for (flat, gv) in g.iter().enumerate() {
                        let mut rem = flat;
                        for d in 0..rank {
                            idx[d] = rem / out_str[d];
                            rem %= out_str[d];
                        }
                        idx.swap(*a, *b);
                        let src: usize = idx.iter().zip(&in_str).map(|(i, s)| i * s).sum();
                        gi[src] += gv;
                    }
                }
                Op::Reshape(a) => {
                    let ga = acc!(*a);
                    for (x, y) in ga.iter_mut().zip(&g) {
                        *x += y;
                    }
                }
                Op::Pad2d { input, pad } => {
                    let in_shape = nodes[*input].shape.clone();
                    let rank = in_shape.len();
                    let (h, w) = (in_shape[rank - 2], in_shape[rank - 1]);
                    let (oh, ow) = (h + pad[0] + pad[1], w + pad[2] + pad[3]);
                    let batch: usize = in_shape[..rank - 2].iter().product();
                    let gi = acc!(*input);
                    for bi in 0..batch {
                        for y in 0..h {
                            let dst = bi * h * w + y * w;
                            let src = bi * oh * ow + (y + pad[0]) * ow + pad[2];
                            for k in 0..w {
                                gi[dst + k] += g[src + k];
                            }
                        }
                    }
                }
                Op::Softmax { input, axis } => {
                    let y = node.data.clone();
                    let shape = node.shape.clone();
                    let outer: usize = shape[..*axis].iter().product();
                    let lane = shape[*axis];
                    let inner: usize = shape[*axis + 1..].iter().product();
                    let gi = acc!(*input);
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| o * lane * inner + k * inner + i;
                            let mut dot = 0.0;
                            for k in 0..lane {
                                dot += g[at(k)] * y[at(k)];
                            }
                            for k in 0..lane {
                                gi[at(k)] += y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                }
                Op::Conv2d { input, kernel, stride, pad } => {
                    let xs = nodes[*input].shape.clone();
                    let ks = nodes[*kernel].shape.clone();
                    let xd = nodes[*input].data.clone();
                    let kd = nodes[*kernel].data.clone();
                    let (nb, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let (co, kh, kw) = (ks[0], ks[2], ks[3]);
                    let (oh, ow) = (node.shape[2], node.shape[3]);
                    let (sh, sw) = (stride[0], stride[1]);
                    let (ph, pw) = (pad[0], pad[1]);
                    {
                        let gx = acc!(*input);
                        for b in 0..nb {
                            for c in 0..co {
                                for oy in 0..oh {
                                    for ox in 0..ow {
                                        let gv = g[((b * co + c) * oh + oy) * ow + ox];
                                        if gv == 0.0 {
                                            continue;
                                        }
                                        for ic in 0..ci {
                                            for ky in 0..kh {
                                                let iy = (oy * sh + ky) as isize - ph as isize;
                                                if iy < 0 || iy >= h as isize {
                                                    continue;
                                                }
                                                for kx in 0..kw {
                                                    let ix = (ox * sw + kx) as isize - pw as isize;
                                                    if ix < 0 || ix >= w as isize {
                                                        continue;
                                                    }
                                                    gx[((b * ci + ic) * h + iy as usize) * w + ix as usize] +=
                                                        gv * kd[((c * ci + ic) * kh + ky) * kw + kx];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    let gk = acc!(*kernel);
                    for b in 0..nb {
                        for c in 0..co {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let gv = g[((b * co + c) * oh + oy) * ow + ox];
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    for ic in 0..ci {
                                        for ky in 0..kh {
                                            let iy = (oy * sh + ky) as isize - ph as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            for kx in 0..kw {
                                                let ix = (ox * sw + kx) as isize - pw as isize;
                                                if ix < 0 || ix >= w as isize {
                                                    continue;
                                                }
                                                gk[((c * ci + ic) * kh + ky) * kw + kx] +=
                                                    gv * xd[((b * ci + ic) * h + iy as usize) * w + ix as usize];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::ConvTranspose2d { input, kernel, stride, pad } => {
                    let xs = nodes[*input].shape.clone();
                    let ks = nodes[*kernel].shape.clone();
                    let xd = nodes[*input].data.clone();
                    let kd = nodes[*kernel].data.clone();
                    let (nb, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let (co, kh, kw) = (ks[1], ks[2], ks[3]);
                    let (oh, ow) = (node.shape[2], node.shape[3]);
                    let (sh, sw) = (stride[0], stride[1]);
                    let (ph, pw) = (pad[0], pad[1]);
                    {
                        let gx = acc!(*input);
                        for b in 0..nb {
                            for ic in 0..ci {
                                for iy in 0..h {
                                    for ix in 0..w {
                                        let mut acc_v = 0.0;
                                        for c in 0..co {
                                            for ky in 0..kh {
                                                let oy = (iy * sh + ky) as isize - ph as isize;
                                                if oy < 0 || oy >= oh as isize {
                                                    continue;
                                                }
                                                for kx in 0..kw {
                                                    let ox = (ix * sw + kx) as isize - pw as isize;
                                                    if ox < 0 || ox >= ow as isize {
                                                        continue;
                                                    }
                                                    acc_v += g[((b * co + c) * oh + oy as usize) * ow + ox as usize]
                                                        * kd[((ic * co + c) * kh + ky) * kw + kx];
                                                }
                                            }
                                        }
                                        gx[((b * ci + ic) * h + iy) * w + ix] += acc_v;
                                    }
                                }
                            }
                        }
                    }
                    let gk = acc!(*kernel);
                    for b in 0..nb {
                        for ic in 0..ci {
                            for iy in 0..h {
                                for ix in 0..w {
                                    let v = xd[((b * ci + ic) * h + iy) * w + ix];
                                    if v == 0.0 {
                                        continue;
                                    }
                                    for c in 0..co {
                                        for ky in 0..kh {
                                            let oy = (iy * sh + ky) as isize - ph as isize;
                                            if oy < 0 || oy >= oh as isize {
                                                continue;
                                            }
                                            for kx in 0..kw {
                                                let ox = (ix * sw + kx) as isize - pw as isize;
                                                if ox < 0 || ox >= ow as isize {
                                                    continue;
                                                }
                                                gk[((ic * co + c) * kh + ky) * kw + kx] +=
                                                    v * g[((b * co + c) * oh + oy as usize) * ow + ox as usize];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::MaxPool2x2 { input, argmax } => {
                    let gi = acc!(*input);
                    for (o, &idx) in argmax.iter().enumerate() {
                        gi[idx] += g[o];
                    }
                }
                Op::PairwiseSqDist(a, b) => {
                    let d = nodes[*a].shape[1];
                    let (n, m) = (nodes[*a].shape[0], nodes[*b].shape[0]);
                    let ad = nodes[*a].data.clone();
                    let bd = nodes[*b].data.clone();
                    {
                        let ga = acc!(*a);
                        for i in 0..n {
                            for j in 0..m {
                                let gv = g[i * m + j];
                                if gv == 0.0 {
                                    continue;
                                }
                                for t in 0..d {
                                    ga[i * d + t] += 2.0 * gv * (ad[i * d + t] - bd[j * d + t]);
                                }
                            }
                        }
                    }
                    let gb = acc!(*b);
                    for i in 0..n {
                        for j in 0..m {
                            let gv = g[i * m + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for t in 0..d {
                                gb[j * d + t] -= 2.0 * gv * (ad[i * d + t] - bd[j * d + t]);
                            }
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients { grads })
    }
}
