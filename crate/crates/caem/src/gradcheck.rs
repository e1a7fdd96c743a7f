//! Finite-difference audit of the whole model at desk scale.
//!
//! One run builds a miniature model on a fixed batch and compares tape
//! gradients against central differences, reported three ways:
//!
//! * one row per layer (parameters grouped by name prefix), taken from the
//!   compound objective so each layer is checked in situ,
//! * one row per loss term, each term isolated and differentiated with
//!   respect to every parameter,
//! * one row for the full compound objective.
//!
//! Central differences resolve roughly `eps * |loss| / step` in absolute
//! terms, so entries far below a check's largest gradient carry only probe
//! round-off. Each error is therefore taken relative to
//! `max(|g|, |fd|, 1e-4 * gmax)` where `gmax` is the largest analytic
//! entry within the check; significant coordinates are unaffected and
//! negligible ones are measured against the check's own scale.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mmd::{gaussian_sample, mmd_sq};
use crate::model::{CaemModel, ModelConfig};
use crate::nn::Bound;
use crate::rng::{stream, Stream};
use crate::tensor::check::finite_difference;
use crate::tensor::{Tape, Tensor};

pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const TERM_TOLERANCE: f64 = 1e-4;
pub const COMPOUND_TOLERANCE: f64 = 1e-3;

const FD_STEP: f64 = 1e-4;
const FLOOR_RATIO: f64 = 1e-4;
const BATCH: usize = 2;
const MODEL_SEED: u64 = 23;
const DATA_SEED: u64 = 57;

/// One named check: passes when `max_rel_err < tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// The loss pieces a single check differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Term {
    Mse,
    Mmd,
    Np,
    Lp,
    Compound,
}

impl Term {
    fn name(self) -> &'static str {
        match self {
            Term::Mse => "mse",
            Term::Mmd => "mmd",
            Term::Np => "np",
            Term::Lp => "lp",
            Term::Compound => "compound",
        }
    }
}

struct Fixture {
    cfg: ModelConfig,
    windows: Vec<Vec<f64>>,
    /// MMD target rows, drawn once so every probe sees the same values.
    target: Vec<f64>,
}

impl Fixture {
    fn new() -> Result<Self> {
        let cfg = ModelConfig { mmd_bandwidth: Some(1.0), ..ModelConfig::miniature() };
        let mut rng = stream(DATA_SEED, Stream::Synth, 0, 0);
        use rand::Rng;
        let windows: Vec<Vec<f64>> = (0..BATCH)
            .map(|_| {
                (0..cfg.n_signals * cfg.window_len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
            })
            .collect();
        let rows = cfg.time_steps * BATCH;
        let mut trng = stream(DATA_SEED, Stream::MmdTarget, 0, 0);
        let target = gaussian_sample(&mut trng, rows, cfg.latent_dim);
        Ok(Fixture { cfg, windows, target })
    }

    fn model_with(&self, flat: &[f64]) -> Result<CaemModel> {
        let mut m = CaemModel::new(self.cfg.clone(), MODEL_SEED)?;
        let mut off = 0;
        for p in m.params.iter_mut() {
            let n = p.data.len();
            p.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(m)
    }

    /// Assemble one term (or the weighted compound) exactly as training does.
    fn loss(&self, model: &CaemModel, tape: &Tape, bound: &Bound, term: Term) -> Result<Tensor> {
        let refs: Vec<&[f64]> = self.windows.iter().map(|w| w.as_slice()).collect();
        if term == Term::Compound {
            let mut rng = stream(DATA_SEED, Stream::MmdTarget, 0, 0);
            let (total, _) = model.compound_loss(tape, bound, &refs, None, &mut rng)?;
            return Ok(total);
        }
        let out = model.forward_batch(tape, bound, &refs, None)?;
        let scale = 1.0 / BATCH as f64;
        match term {
            Term::Mse => out.mse_rows.expect("reconstruction on").sum_all()?.scale(scale),
            Term::Np => out.np_rows.expect("bilstm weight on").sum_all()?.scale(scale),
            Term::Lp => out.lp_rows.expect("ar weight on").sum_all()?.scale(scale),
            Term::Mmd => {
                let rows = self.cfg.time_steps * BATCH;
                let t = tape.leaf(self.target.clone(), vec![rows, self.cfg.latent_dim])?;
                mmd_sq(&out.latents, &t, self.cfg.mmd_bandwidth.expect("fixed"))
            }
            Term::Compound => unreachable!(),
        }
    }

    /// Analytic and central-difference gradients of `term` over every
    /// parameter, flattened in slot order (absent gradients read as zero).
    fn gradients(&self, term: Term) -> Result<(Vec<f64>, Vec<f64>)> {
        let flat = self.flat()?;
        let model = self.model_with(&flat)?;
        let tape = Tape::new();
        let bound = model.bind(&tape)?;
        let loss = self.loss(&model, &tape, &bound, term)?;
        let grads = loss.backward()?;
        let mut analytic = Vec::new();
        for (i, p) in model.params.iter().enumerate() {
            match grads.wrt(bound.leaf(i)) {
                Some(g) => analytic.extend_from_slice(g),
                None => analytic.extend(std::iter::repeat(0.0).take(p.data.len())),
            }
        }
        let numeric = finite_difference(
            |vals| {
                let m = self.model_with(vals)?;
                let tape = Tape::new();
                let bound = m.bind(&tape)?;
                self.loss(&m, &tape, &bound, term)?.value()
            },
            &flat,
            FD_STEP,
        )?;
        Ok((analytic, numeric))
    }

    fn flat(&self) -> Result<Vec<f64>> {
        let m = CaemModel::new(self.cfg.clone(), MODEL_SEED)?;
        Ok(m.params.iter().flat_map(|p| p.data.iter().copied()).collect())
    }
}

fn scaled_max_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let gmax = analytic.iter().fold(0.0f64, |a, &g| a.max(g.abs()));
    let floor = (FLOOR_RATIO * gmax).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&g, &fd)| (g - fd).abs() / g.abs().max(fd.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Run every check and return the rows in report order: layers first, then
/// loss terms, then the compound objective.
pub fn run_suite() -> Result<Vec<GradCheckRow>> {
    let fx = Fixture::new()?;
    let mut rows = Vec::new();

    // Layer rows come from the compound pass: slice its gradient vectors by
    // the parameter-name prefix (enc0.kernel and enc0.bias form "enc0").
    let (analytic, numeric) = fx.gradients(Term::Compound)?;
    let model = fx.model_with(&fx.flat()?)?;
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    let mut off = 0;
    for p in model.params.iter() {
        let prefix = p.name.split('.').next().expect("non-empty name").to_string();
        let idx: Vec<usize> = (off..off + p.data.len()).collect();
        off += p.data.len();
        match groups.last_mut() {
            Some((g, v)) if *g == prefix => v.extend(idx),
            _ => groups.push((prefix, idx)),
        }
    }
    for (name, idx) in &groups {
        let a: Vec<f64> = idx.iter().map(|&i| analytic[i]).collect();
        let n: Vec<f64> = idx.iter().map(|&i| numeric[i]).collect();
        rows.push(GradCheckRow { name: name.clone(), max_rel_err: scaled_max_err(&a, &n), tolerance: LAYER_TOLERANCE });
    }

    for term in [Term::Mse, Term::Mmd, Term::Np, Term::Lp] {
        let (a, n) = fx.gradients(term)?;
        rows.push(GradCheckRow { name: term.name().to_string(), max_rel_err: scaled_max_err(&a, &n), tolerance: TERM_TOLERANCE });
    }
    rows.push(GradCheckRow {
        name: Term::Compound.name().to_string(),
        max_rel_err: scaled_max_err(&analytic, &numeric),
        tolerance: COMPOUND_TOLERANCE,
    });
    Ok(rows)
}
