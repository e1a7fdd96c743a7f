//! Squared maximum mean discrepancy with a Gaussian kernel.
//!
//! `mmd_sq(x, y, sigma)` is the biased V-statistic
//!
//! ```text
//! (1/n^2) sum_ij k(x_i, x_j) + (1/m^2) sum_ij k(y_i, y_j)
//!                            - (2/nm) sum_ij k(x_i, y_j)
//! ```
//!
//! with `k(u, v) = exp(-|u - v|^2 / (2 sigma^2))`. Diagonal terms are
//! included, so the estimate is non-negative and *exactly* zero bit-for-bit
//! when both arguments hold the same rows in the same order.
//!
//! The bandwidth is a constant with respect to differentiation. When not
//! fixed by configuration it comes from [`median_sigma`]: the median of the
//! pairwise Euclidean distances of the pooled sample (upper median, zero
//! pairs included, falling back to 1.0 if the median degenerates to zero).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gram-mean of the Gaussian kernel between two row sets.
fn kernel_mean(a: &Tensor, b: &Tensor, sigma: f64) -> Result<Tensor> {
    a.pairwise_sqdist(b)?.scale(-1.0 / (2.0 * sigma * sigma))?.exp()?.mean_all()
}

/// Squared MMD between the rows of `x: [n, d]` and `y: [m, d]`.
pub fn mmd_sq(x: &Tensor, y: &Tensor, sigma: f64) -> Result<Tensor> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::RatioOutOfRange { what: "kernel bandwidth".to_string(), value: sigma });
    }
    let (xs, ys) = (x.shape(), y.shape());
    if xs.len() != 2 || ys.len() != 2 || xs[1] != ys[1] {
        return Err(Error::ShapeMismatch { op: "mmd_sq", detail: format!("{xs:?} vs {ys:?}") });
    }
    if xs[0] == 0 || ys[0] == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let kxx = kernel_mean(x, x, sigma)?;
    let kyy = kernel_mean(y, y, sigma)?;
    let kxy = kernel_mean(x, y, sigma)?;
    kxx.add(&kyy)?.sub(&kxy.scale(2.0)?)
}

/// Median-distance bandwidth of the pooled rows of `x: [n, d]` and
/// `y: [m, d]` (flat row-major buffers).
pub fn median_sigma(x: &[f64], y: &[f64], d: usize) -> Result<f64> {
    if d == 0 || x.len() % d != 0 || y.len() % d != 0 {
        return Err(Error::ShapeMismatch {
            op: "median_sigma",
            detail: format!("buffers of {} and {} values are not rows of width {d}", x.len(), y.len()),
        });
    }
    let n = x.len() / d + y.len() / d;
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let row = |i: usize| -> &[f64] {
        if i * d < x.len() {
            &x[i * d..(i + 1) * d]
        } else {
            let j = i - x.len() / d;
            &y[j * d..(j + 1) * d]
        }
    };
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (row(i), row(j));
            let sq: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
            dists.push(sq.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    let med = dists[dists.len() / 2];
    Ok(if med > 0.0 { med } else { 1.0 })
}

/// `n x d` standard normal draws, row-major.
pub fn gaussian_sample<R: Rng>(rng: &mut R, n: usize, d: usize) -> Vec<f64> {
    (0..n * d).map(|_| StandardNormal.sample(rng)).collect()
}
