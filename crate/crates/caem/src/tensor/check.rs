//! Finite-difference verification of tape gradients.
//!
//! Central differences with a caller-chosen step in `(0, 1e-2]`. Errors are
//! relative: `|g - fd| / max(|g|, |fd|, 1e-8)`, so tiny true gradients do
//! not blow the ratio up through round-off.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

fn validate_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::RatioOutOfRange { what: "finite-difference step".to_string(), value: step });
    }
    Ok(())
}

/// Relative error between an analytic and a numeric gradient entry.
pub fn rel_err(g: f64, fd: f64) -> f64 {
    (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8)
}

/// Largest relative error between two gradient vectors.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> Result<f64> {
    if analytic.len() != numeric.len() {
        return Err(Error::LengthMismatch { left: analytic.len(), right: numeric.len() });
    }
    Ok(analytic.iter().zip(numeric).map(|(&g, &fd)| rel_err(g, fd)).fold(0.0, f64::max))
}

/// Central-difference gradient of `f` at `x0`, one coordinate at a time.
/// `f` must be deterministic: it is evaluated `2 * x0.len()` times.
pub fn finite_difference<F>(mut f: F, x0: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    validate_step(step)?;
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(x0.len());
    for i in 0..x0.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x)?;
        x[i] = orig - step;
        let fm = f(&x)?;
        x[i] = orig;
        out.push((fp - fm) / (2.0 * step));
    }
    Ok(out)
}

/// Check the tape gradient of a scalar-valued builder `f` with respect to a
/// single leaf input. Returns the largest relative error over coordinates.
pub fn grad_check<F>(f: F, x0: &[f64], shape: &[usize], step: f64) -> Result<f64>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor>,
{
    validate_step(step)?;
    let tape = Tape::new();
    let x = tape.leaf(x0.to_vec(), shape.to_vec())?;
    let y = f(&tape, &x)?;
    let grads = y.backward()?;
    let analytic = grads.wrt(&x).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; x0.len()]);

    let shape = shape.to_vec();
    let numeric = finite_difference(
        |vals| {
            let tape = Tape::new();
            let x = tape.leaf(vals.to_vec(), shape.clone())?;
            f(&tape, &x)?.value()
        },
        x0,
        step,
    )?;
    max_rel_err(&analytic, &numeric)
}

/// Check precomputed analytic gradients against a plain evaluation closure.
/// Used for parameter gradients, where the forward pass is rebuilt by the
/// closure for every probe.
pub fn grad_check_values<F>(f: F, x0: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let numeric = finite_difference(f, x0, step)?;
    max_rel_err(analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-6;

    /// Deterministic pseudo-random values in [-1, 1], well away from ReLU
    /// kinks and pool ties for the sizes used here.
    fn vals(n: usize, salt: u64) -> Vec<f64> {
        let mut state = salt.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(0x243f6a8885a308d3);
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let u = ((state >> 11) as f64) / ((1u64 << 53) as f64);
                2.0 * u - 1.0
            })
            .collect()
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let r = grad_check(|_, x| x.sum_all(), &[1.0], &[1], 0.5);
        assert!(matches!(r, Err(crate::error::Error::RatioOutOfRange { .. })));
        let r = grad_check(|_, x| x.sum_all(), &[1.0], &[1], 0.0);
        assert!(matches!(r, Err(crate::error::Error::RatioOutOfRange { .. })));
    }

    #[test]
    fn elementwise_ops() {
        let x0 = vals(6, 1);
        for (name, f) in [
            ("add", (|t: &Tape, x: &Tensor| {
                let c = t.leaf(vals(6, 100), vec![2, 3])?;
                x.add(&c)?.sq_sum()
            }) as fn(&Tape, &Tensor) -> crate::error::Result<Tensor>),
            ("sub", |t, x| {
                let c = t.leaf(vals(6, 101), vec![2, 3])?;
                x.sub(&c)?.sq_sum()
            }),
            ("mul", |t, x| {
                let c = t.leaf(vals(6, 102), vec![2, 3])?;
                x.mul(&c)?.sq_sum()
            }),
            ("mul_self", |_, x| x.mul(x)?.sum_all()),
            ("neg", |_, x| x.neg()?.sq_sum()),
            ("scale", |_, x| x.scale(-1.7)?.sq_sum()),
            ("exp", |_, x| x.exp()?.sum_all()),
            ("tanh", |_, x| x.tanh()?.sq_sum()),
            ("sigmoid", |_, x| x.sigmoid()?.sq_sum()),
            ("mean", |_, x| x.mean_all()),
            ("sq_sum", |_, x| x.sq_sum()),
        ] {
            let err = grad_check(f, &x0, &[2, 3], STEP).unwrap();
            assert!(err < TOL, "{name}: max rel err {err}");
        }
    }

    #[test]
    fn relu_away_from_kink() {
        // Values at least 0.1 from zero: the subgradient convention never
        // meets the finite-difference probe.
        let x0: Vec<f64> = vals(8, 2).iter().map(|v| v + 0.2 * v.signum()).collect();
        let err = grad_check(|_, x| x.relu()?.sq_sum(), &x0, &[2, 4], STEP).unwrap();
        assert!(err < TOL, "relu: {err}");
    }

    #[test]
    fn matmul_both_sides() {
        let x0 = vals(6, 3);
        let err = grad_check(
            |t, x| {
                let b = t.leaf(vals(12, 30), vec![3, 4])?;
                x.matmul(&b)?.sq_sum()
            },
            &x0,
            &[2, 3],
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "matmul lhs: {err}");

        let k0 = vals(12, 31);
        let err = grad_check(
            |t, k| {
                let a = t.leaf(vals(6, 32), vec![2, 3])?;
                a.matmul(k)?.sq_sum()
            },
            &k0,
            &[3, 4],
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "matmul rhs: {err}");
    }

    #[test]
    fn row_ops_and_biases() {
        let x0 = vals(6, 4);
        let err = grad_check(|_, x| x.row_sq_sum()?.sum_all(), &x0, &[2, 3], STEP).unwrap();
        assert!(err < TOL, "row_sq_sum: {err}");

        let err = grad_check(
            |t, x| {
                let b = t.leaf(vals(3, 40), vec![3])?;
                x.add_row_bias(&b)?.sq_sum()
            },
            &x0,
            &[2, 3],
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "add_row_bias lhs: {err}");

        let err = grad_check(
            |t, b| {
                let a = t.leaf(vals(6, 41), vec![2, 3])?;
                a.add_row_bias(b)?.sq_sum()
            },
            &vals(3, 42),
            &[3],
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "add_row_bias rhs: {err}");

        let err = grad_check(
            |t, b| {
                let a = t.leaf(vals(2 * 3 * 2 * 2, 43), vec![2, 3, 2, 2])?;
                a.add_channel_bias(b)?.sq_sum()
            },
            &vals(3, 44),
            &[3],
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "add_channel_bias: {err}");

        let err = grad_check(
            |t, x| {
                let s = t.leaf(vals(2, 45), vec![2, 1])?;
                x.scale_rows(&s)?.sq_sum()
            },
            &x0,
            &[2, 3],
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "scale_rows lhs: {err}");

        let err = grad_check(
            |t, s| {
                let a = t.leaf(vals(6, 46), vec![2, 3])?;
                a.scale_rows(s)?.sq_sum()
            },
            &vals(2, 47),
            &[2, 1],
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "scale_rows rhs: {err}");
    }

    #[test]
    fn structural_ops() {
        let x0 = vals(12, 5);
        for (name, f) in [
            ("concat", (|t: &Tape, x: &Tensor| {
                let c = t.leaf(vals(8, 50), vec![4, 2])?;
                Tensor::concat(&[x.clone(), c], 1)?.sq_sum()
            }) as fn(&Tape, &Tensor) -> crate::error::Result<Tensor>),
            ("slice", |_, x| x.slice(0, 1, 2)?.sq_sum()),
            ("transpose", |_, x| x.transpose(0, 1)?.sq_sum()),
            ("reshape", |_, x| x.reshape(vec![2, 6])?.sq_sum()),
            ("softmax", |_, x| x.softmax(1)?.sq_sum()),
        ] {
            let err = grad_check(f, &x0, &[4, 3], STEP).unwrap();
            assert!(err < TOL, "{name}: {err}");
        }

        let err = grad_check(
            |_, x| x.pad2d([1, 0, 2, 1])?.sq_sum(),
            &vals(2 * 1 * 3 * 4, 51),
            &[2, 1, 3, 4],
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "pad2d: {err}");
    }

    #[test]
    fn conv_family() {
        // conv2d wrt input and kernel, with stride and padding exercised.
        let err = grad_check(
            |t, x| {
                let k = t.leaf(vals(2 * 2 * 2 * 3, 60), vec![2, 2, 2, 3])?;
                x.conv2d(&k, [2, 1], [1, 1])?.sq_sum()
            },
            &vals(1 * 2 * 5 * 4, 61),
            &[1, 2, 5, 4],
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "conv2d input: {err}");

        let err = grad_check(
            |t, k| {
                let x = t.leaf(vals(1 * 2 * 5 * 4, 62), vec![1, 2, 5, 4])?;
                x.conv2d(k, [1, 2], [0, 1])?.sq_sum()
            },
            &vals(2 * 2 * 2 * 3, 63),
            &[2, 2, 2, 3],
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "conv2d kernel: {err}");

        let err = grad_check(
            |t, x| {
                let k = t.leaf(vals(2 * 3 * 2 * 2, 64), vec![2, 3, 2, 2])?;
                x.conv_transpose2d(&k, [2, 2], [0, 0])?.sq_sum()
            },
            &vals(1 * 2 * 3 * 3, 65),
            &[1, 2, 3, 3],
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "conv_transpose2d input: {err}");

        let err = grad_check(
            |t, k| {
                let x = t.leaf(vals(1 * 2 * 3 * 3, 66), vec![1, 2, 3, 3])?;
                x.conv_transpose2d(k, [1, 2], [1, 0])?.sq_sum()
            },
            &vals(2 * 3 * 3 * 2, 67),
            &[2, 3, 3, 2],
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "conv_transpose2d kernel: {err}");

        // Maxpool: distinct values, margins far above the probe step.
        let x0: Vec<f64> = (0..16).map(|i| (i as f64) * 0.37 - 3.0).collect();
        let err = grad_check(|_, x| x.maxpool2x2()?.sq_sum(), &x0, &[1, 1, 4, 4], STEP).unwrap();
        assert!(err < TOL, "maxpool2x2: {err}");
    }

    #[test]
    fn pairwise_sqdist_both_sides_and_shared() {
        let err = grad_check(
            |t, x| {
                let y = t.leaf(vals(6, 70), vec![3, 2])?;
                x.pairwise_sqdist(&y)?.sq_sum()
            },
            &vals(8, 71),
            &[4, 2],
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "pairwise lhs: {err}");

        let err = grad_check(
            |t, y| {
                let x = t.leaf(vals(8, 72), vec![4, 2])?;
                x.pairwise_sqdist(y)?.sq_sum()
            },
            &vals(6, 73),
            &[3, 2],
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "pairwise rhs: {err}");

        // Same tensor on both sides: gradient must combine both roles.
        let err = grad_check(|_, x| x.pairwise_sqdist(x)?.mean_all(), &vals(8, 74), &[4, 2], STEP).unwrap();
        assert!(err < TOL, "pairwise shared: {err}");
    }

    #[test]
    fn composite_graph() {
        // A small network-shaped compound: conv -> relu -> pool -> flatten
        // -> matmul -> softmax -> weighted sum, checked end to end.
        let x0: Vec<f64> = vals(1 * 1 * 4 * 6, 80).iter().map(|v| v * 0.9 + 0.15 * v.signum()).collect();
        let err = grad_check(
            |t, x| {
                let k = t.leaf(vals(2 * 1 * 3 * 3, 81), vec![2, 1, 3, 3])?;
                let w = t.leaf(vals(12 * 4, 82), vec![12, 4])?;
                let h = x.pad2d([1, 1, 1, 1])?.conv2d(&k, [1, 1], [0, 0])?.relu()?.maxpool2x2()?;
                let flat = h.reshape(vec![1, 12])?;
                let s = flat.matmul(&w)?.softmax(1)?;
                let target = t.leaf(vec![0.1, 0.2, 0.3, 0.4], vec![1, 4])?;
                s.sub(&target)?.sq_sum()
            },
            &x0,
            &[1, 1, 4, 6],
            STEP,
        )
        .unwrap();
        assert!(err < 1e-5, "composite: {err}");
    }
}
