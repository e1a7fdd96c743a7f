//! End-to-end training loop: seeded shuffling, Adam, validation-based
//! early stopping, and a per-epoch trace.
//!
//! Reproducibility contract: two calls with the same model, data, config,
//! and seed produce bit-identical parameters and traces. All randomness is
//! drawn from purpose-keyed streams (shuffle, dropout, MMD targets), each
//! keyed further by epoch and batch, so no draw depends on how many draws
//! another component made.

pub mod adam;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CaemModel;
use crate::rng::{stream, Stream};
use crate::tensor::Tape;
use crate::train::adam::{clip_global_norm, Adam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without a validation improvement before stopping.
    pub patience: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config { detail: "batch_size must be at least 2".to_string() });
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config { detail: "max_epochs and patience must be positive".to_string() });
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config { detail: format!("grad_clip {c} must be positive") });
            }
        }
        Ok(())
    }
}

/// One row of the training trace; all loss terms are raw (unweighted)
/// per-batch means over the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mse: f64,
    pub mmd: f64,
    pub np: f64,
    pub lp: f64,
    pub total: f64,
    pub val_total: f64,
}

#[derive(Debug)]
pub struct FitResult {
    pub trace: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val: f64,
}

fn wrap_nonfinite(e: Error, epoch: usize, what: &str) -> Error {
    match e {
        Error::NonFinite { context } => {
            Error::NonFinite { context: format!("{context} (epoch {epoch}, {what})") }
        }
        other => other,
    }
}

/// Mean weighted validation loss, in fixed chunks of `batch_size`; a short
/// tail chunk is dropped unless it is all there is. No dropout is applied.
pub fn validation_loss(
    model: &CaemModel,
    val: &[&[f64]],
    batch_size: usize,
    mmd_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if val.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: val.len() });
    }
    let chunks: Vec<&[&[f64]]> = if val.len() < batch_size {
        vec![val]
    } else {
        val.chunks_exact(batch_size).collect()
    };
    let mut weighted = 0.0;
    let mut count = 0usize;
    for chunk in chunks {
        let tape = Tape::new();
        let bound = model.bind(&tape)?;
        let (_, bd) = model.compound_loss(&tape, &bound, chunk, None, mmd_rng)?;
        weighted += bd.total * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(weighted / count as f64)
}

/// Train `model` in place. Every epoch visits each training sample exactly
/// once in a seeded random order, stepping once per full batch (a trailing
/// short batch is dropped). The parameters left in the model are those of
/// the best-validation epoch.
pub fn fit(
    model: &mut CaemModel,
    train: &[&[f64]],
    val: &[&[f64]],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FitResult> {
    cfg.validate()?;
    if train.len() < cfg.batch_size {
        return Err(Error::TooFewSamples { needed: cfg.batch_size, got: train.len() });
    }
    if val.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: val.len() });
    }

    let mut opt = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, &model.params)?;
    let mut trace = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snap = model.params.snapshot();
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(seed, Stream::Shuffle, epoch as u64, 0));

        let mut sums = [0.0f64; 5];
        let mut batches = 0usize;
        for (b, idx) in order.chunks_exact(cfg.batch_size).enumerate() {
            let batch: Vec<&[f64]> = idx.iter().map(|&i| train[i]).collect();
            let mut dropout = stream(seed, Stream::Dropout, epoch as u64, b as u64);
            let mut mmd_rng = stream(seed, Stream::MmdTarget, epoch as u64, b as u64);
            let grads = {
                let tape = Tape::new();
                let bound = model.bind(&tape).map_err(|e| wrap_nonfinite(e, epoch, &format!("batch {b}")))?;
                let (total, bd) = model
                    .compound_loss(&tape, &bound, &batch, Some(&mut dropout), &mut mmd_rng)
                    .map_err(|e| wrap_nonfinite(e, epoch, &format!("batch {b}")))?;
                let g = total.backward().map_err(|e| wrap_nonfinite(e, epoch, &format!("batch {b}")))?;
                for (s, v) in sums.iter_mut().zip([bd.mse, bd.mmd, bd.np, bd.lp, bd.total]) {
                    *s += v;
                }
                (0..model.params.len())
                    .map(|i| g.wrt(bound.leaf(i)).map(|s| s.to_vec()))
                    .collect::<Vec<_>>()
            };
            let mut grads = grads;
            if let Some(c) = cfg.grad_clip {
                clip_global_norm(&mut grads, c)?;
            }
            opt.step(&mut model.params, &grads)
                .map_err(|e| wrap_nonfinite(e, epoch, &format!("batch {b}")))?;
            batches += 1;
        }

        let mut val_rng = stream(seed, Stream::MmdTargetVal, epoch as u64, 0);
        let val_total = validation_loss(model, val, cfg.batch_size, &mut val_rng)
            .map_err(|e| wrap_nonfinite(e, epoch, "validation"))?;

        let n = batches as f64;
        let stats = EpochStats {
            epoch,
            mse: sums[0] / n,
            mmd: sums[1] / n,
            np: sums[2] / n,
            lp: sums[3] / n,
            total: sums[4] / n,
            val_total,
        };
        log::debug!(
            "epoch {}: total {:.6} (mse {:.6} mmd {:.6} np {:.6} lp {:.6}) val {:.6}",
            stats.epoch, stats.total, stats.mse, stats.mmd, stats.np, stats.lp, stats.val_total
        );
        trace.push(stats);

        if val_total < best_val {
            best_val = val_total;
            best_epoch = epoch;
            best_snap = model.params.snapshot();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    for (p, s) in model.params.iter_mut().zip(&best_snap) {
        p.data.copy_from_slice(s);
    }
    Ok(FitResult { trace, best_epoch, best_val })
}

pub fn write_trace(path: &std::path::Path, trace: &[EpochStats]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &std::path::Path) -> Result<Vec<EpochStats>> {
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
