//! Parameters and layers.
//!
//! Parameters live outside the tape in a flat, construction-ordered
//! [`Params`] container. Each forward pass binds every parameter onto a
//! fresh tape as a leaf ([`bind_all`]); after `backward`, the gradient of
//! parameter `i` is read from leaf `i`. Layers are thin wiring structs that
//! hold parameter *indices*, never the values, so a model is (config,
//! params) and nothing else.

pub mod attention;
pub mod conv;
pub mod dense;
pub mod lstm;
pub mod serialize;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{numel, Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Flat parameter store. Iteration order is construction order and is the
/// order used by the optimizer and the on-disk format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    items: Vec<Param>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn total_values(&self) -> usize {
        self.items.iter().map(|p| p.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.items.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.items.iter_mut()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<usize> {
        if numel(&shape) != data.len() {
            return Err(Error::ShapeMismatch {
                op: "param",
                detail: format!("{name}: shape {:?} vs {} values", shape, data.len()),
            });
        }
        if self.items.iter().any(|p| p.name == name) {
            return Err(Error::Config { detail: format!("duplicate parameter name {name:?}") });
        }
        self.items.push(Param { name: name.to_string(), shape, data });
        Ok(self.items.len() - 1)
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.items[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.items[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.items.iter().position(|p| p.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.items.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.items.iter_mut().find(|p| p.name == name)
    }

    /// Copy of all values, for checkpoint/restore during training.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.items.iter().map(|p| p.data.clone()).collect()
    }

    pub fn restore(&mut self, snap: &[Vec<f64>]) -> Result<()> {
        if snap.len() != self.items.len() {
            return Err(Error::LengthMismatch { left: snap.len(), right: self.items.len() });
        }
        for (p, s) in self.items.iter_mut().zip(snap) {
            if p.data.len() != s.len() {
                return Err(Error::LengthMismatch { left: p.data.len(), right: s.len() });
            }
            p.data.copy_from_slice(s);
        }
        Ok(())
    }
}

/// Per-pass leaf tensors, parallel to the parameter order.
pub struct Bound {
    pub leaves: Vec<Tensor>,
}

impl Bound {
    pub fn leaf(&self, idx: usize) -> &Tensor {
        &self.leaves[idx]
    }
}

/// Bind every parameter as a leaf on `tape`.
pub fn bind_all(tape: &Tape, params: &Params) -> Result<Bound> {
    let mut leaves = Vec::with_capacity(params.len());
    for p in params.iter() {
        leaves.push(tape.leaf(p.data.clone(), p.shape.clone())?);
    }
    Ok(Bound { leaves })
}

/// Uniform Glorot values: `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let l = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * l).collect()
}

/// Small uniform values `U(-limit, limit)`, used for recurrent and peephole
/// weights.
pub fn uniform_init<R: Rng>(rng: &mut R, limit: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit).collect()
}

/// Activation applied by a layer after its affine part.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Linear => Ok(x.clone()),
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn duplicate_names_are_rejected() {
        let mut p = Params::new();
        p.add("w", vec![2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(p.add("w", vec![1], vec![3.0]), Err(Error::Config { .. })));
    }

    #[test]
    fn glorot_respects_the_limit() {
        let mut rng = stream(1, Stream::Init, 0, 0);
        let v = glorot_uniform(&mut rng, 30, 30, 4096);
        let l = (6.0_f64 / 60.0).sqrt();
        assert!(v.iter().all(|x| x.abs() <= l));
        // Loose sanity: roughly centered.
        let mean: f64 = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn snapshot_restore_roundtrip() {
        let mut p = Params::new();
        p.add("a", vec![2], vec![1.0, 2.0]).unwrap();
        p.add("b", vec![1], vec![3.0]).unwrap();
        let snap = p.snapshot();
        p.get_mut(0).data[0] = 99.0;
        p.restore(&snap).unwrap();
        assert_eq!(p.get(0).data, vec![1.0, 2.0]);
    }

    #[test]
    fn bind_all_preserves_order_and_values() {
        let mut p = Params::new();
        p.add("a", vec![2], vec![1.0, 2.0]).unwrap();
        p.add("b", vec![1, 2], vec![3.0, 4.0]).unwrap();
        let tape = Tape::new();
        let bound = bind_all(&tape, &p).unwrap();
        assert_eq!(bound.leaves.len(), 2);
        assert_eq!(bound.leaf(1).data(), vec![3.0, 4.0]);
        assert_eq!(bound.leaf(1).shape(), vec![1, 2]);
    }
}
