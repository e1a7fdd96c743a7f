//! Adam optimizer over a parameter container.
//!
//! First and second moment estimates are kept per parameter tensor, in
//! container order. A parameter whose gradient is absent for a step (it was
//! unreachable from that batch's loss) is skipped entirely: its moments do
//! not decay and its value does not move.

use crate::error::{Error, Result};
use crate::nn::Params;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, params: &Params) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config { detail: format!("learning rate {lr} must be positive") });
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config { detail: format!("{name} = {b} must lie in [0, 1)") });
            }
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::Config { detail: format!("epsilon {eps} must be positive") });
        }
        let m = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Ok(Adam { lr, beta1, beta2, eps, t: 0, m, v })
    }

    /// One update over all parameters; `grads` is indexed like the
    /// container, `None` meaning the parameter took no part in the loss.
    pub fn step(&mut self, params: &mut Params, grads: &[Option<Vec<f64>>]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::LengthMismatch { left: grads.len(), right: self.m.len() });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = match &grads[i] {
                Some(g) => g,
                None => continue,
            };
            if g.len() != p.data.len() {
                return Err(Error::LengthMismatch { left: g.len(), right: p.data.len() });
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                if !g[j].is_finite() {
                    return Err(Error::NonFinite { context: format!("gradient of {}", p.name) });
                }
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p.data[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> usize {
        self.t as usize
    }
}

/// Scale every gradient so the global L2 norm does not exceed `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Vec<f64>>], max_norm: f64) -> Result<f64> {
    if !(max_norm.is_finite() && max_norm > 0.0) {
        return Err(Error::Config { detail: format!("clip norm {max_norm} must be positive") });
    }
    let mut sq = 0.0;
    for g in grads.iter().flatten() {
        for &x in g {
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(w0: f64) -> Params {
        let mut p = Params::new();
        p.add("w", vec![1], vec![w0]).unwrap();
        p
    }

    #[test]
    fn hyperparameters_are_validated() {
        let p = one_param(0.0);
        assert!(Adam::new(0.0, 0.9, 0.999, 1e-8, &p).is_err());
        assert!(Adam::new(1e-3, 1.0, 0.999, 1e-8, &p).is_err());
        assert!(Adam::new(1e-3, 0.9, -0.1, 1e-8, &p).is_err());
        assert!(Adam::new(1e-3, 0.9, 0.999, 0.0, &p).is_err());
        assert!(Adam::new(1e-3, 0.9, 0.999, 1e-8, &p).is_ok());
    }

    #[test]
    fn zero_gradient_moves_nothing() {
        let mut p = one_param(1.25);
        let mut opt = Adam::new(1e-2, 0.9, 0.999, 1e-8, &p).unwrap();
        for _ in 0..3 {
            opt.step(&mut p, &[Some(vec![0.0])]).unwrap();
        }
        assert_eq!(p.by_name("w").unwrap().data[0], 1.25);
        assert_eq!(opt.steps_taken(), 3);
    }

    #[test]
    fn absent_gradient_skips_the_parameter() {
        let mut p = one_param(1.25);
        let mut opt = Adam::new(1e-2, 0.9, 0.999, 1e-8, &p).unwrap();
        opt.step(&mut p, &[None]).unwrap();
        assert_eq!(p.by_name("w").unwrap().data[0], 1.25);
    }

    #[test]
    fn first_step_is_a_signed_learning_rate() {
        // With any constant gradient g, the bias-corrected moments give
        // m / (sqrt(v) + eps) = g / (|g| + eps), so the first update is
        // lr * sign(g) up to the epsilon.
        for g in [3.0, -0.07, 1e4] {
            let mut p = one_param(0.5);
            let mut opt = Adam::new(1e-3, 0.9, 0.999, 1e-8, &p).unwrap();
            opt.step(&mut p, &[Some(vec![g])]).unwrap();
            let moved = 0.5 - p.by_name("w").unwrap().data[0];
            assert!((moved - 1e-3 * g.signum()).abs() < 1e-9, "g = {g}, moved {moved}");
        }
    }

    #[test]
    fn quadratic_descends_below_tolerance() {
        let mut p = one_param(1.0);
        let mut opt = Adam::new(0.05, 0.9, 0.999, 1e-8, &p).unwrap();
        for _ in 0..500 {
            let w = p.by_name("w").unwrap().data[0];
            opt.step(&mut p, &[Some(vec![2.0 * w])]).unwrap();
        }
        let w = p.by_name("w").unwrap().data[0];
        assert!(w * w < 1e-3, "f(w) = {} after 500 steps", w * w);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = one_param(1.0);
        let mut opt = Adam::new(1e-3, 0.9, 0.999, 1e-8, &p).unwrap();
        let err = opt.step(&mut p, &[Some(vec![f64::NAN])]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn clip_rescales_only_above_the_bound() {
        let mut grads = vec![Some(vec![3.0, 4.0]), None, Some(vec![0.0])];
        let norm = clip_global_norm(&mut grads, 10.0).unwrap();
        assert_eq!(norm, 5.0);
        assert_eq!(grads[0].as_ref().unwrap(), &vec![3.0, 4.0]);

        let norm = clip_global_norm(&mut grads, 2.5).unwrap();
        assert_eq!(norm, 5.0);
        assert_eq!(grads[0].as_ref().unwrap(), &vec![1.5, 2.0]);

        assert!(clip_global_norm(&mut grads, 0.0).is_err());
    }
}
