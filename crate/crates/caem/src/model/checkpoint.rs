//! Single-file model checkpoint.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic      8 bytes  "CAEMCKP\x01"
//! cfg_len    u32, then the model configuration as JSON (UTF-8)
//! n_signals  u32
//! per signal, in column order:
//!   name_len u32, name bytes (UTF-8)
//!   mean     f64, std f64   (z-scoring statistics)
//! has_thr    u8 (0 or 1)
//! if 1:      thr f64, mean f64, std f64, n_train u64
//! params     parameter container (see the nn serializer)
//! ```
//!
//! Loading rebuilds the model from the stored configuration and then
//! replaces every parameter, failing on any name or shape disagreement, so
//! a checkpoint can never be applied to the wrong architecture.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::NormStats;
use crate::detect::Threshold;
use crate::error::{Error, Result};
use crate::model::{CaemModel, ModelConfig};
use crate::nn::serialize::{read_params, write_params};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CAEMCKP\x01";

pub struct Checkpoint {
    pub model: CaemModel,
    /// Signal column names the model was trained on, in order.
    pub signals: Vec<String>,
    /// Per-signal z-scoring statistics from the training split.
    pub stats: NormStats,
    /// Absent until training has produced one.
    pub threshold: Option<Threshold>,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let cfg = &self.model.config();
        if self.signals.len() != cfg.n_signals
            || self.stats.mean.len() != cfg.n_signals
            || self.stats.std.len() != cfg.n_signals
        {
            return Err(Error::StateMismatch {
                detail: format!(
                    "{} signal names and {} stats for a {}-signal model",
                    self.signals.len(),
                    self.stats.mean.len(),
                    cfg.n_signals
                ),
            });
        }
        w.write_all(CHECKPOINT_MAGIC)?;
        let cfg_json = serde_json::to_vec(cfg).map_err(|e| Error::Format { detail: e.to_string() })?;
        w.write_all(&(cfg_json.len() as u32).to_le_bytes())?;
        w.write_all(&cfg_json)?;
        w.write_all(&(self.signals.len() as u32).to_le_bytes())?;
        for (i, name) in self.signals.iter().enumerate() {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&self.stats.mean[i].to_le_bytes())?;
            w.write_all(&self.stats.std[i].to_le_bytes())?;
        }
        match &self.threshold {
            None => w.write_all(&[0u8])?,
            Some(t) => {
                w.write_all(&[1u8])?;
                w.write_all(&t.thr.to_le_bytes())?;
                w.write_all(&t.mean.to_le_bytes())?;
                w.write_all(&t.std.to_le_bytes())?;
                w.write_all(&(t.n_train as u64).to_le_bytes())?;
            }
        }
        write_params(w, &self.model.params)
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Checkpoint> {
        let mut magic = [0u8; 8];
        read_bytes(r, &mut magic, "magic")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format { detail: "bad checkpoint magic".to_string() });
        }
        let cfg_len = read_u32(r, "config length")? as usize;
        let mut cfg_json = vec![0u8; cfg_len];
        read_bytes(r, &mut cfg_json, "config")?;
        let cfg: ModelConfig = serde_json::from_slice(&cfg_json)
            .map_err(|e| Error::Format { detail: format!("checkpoint config: {e}") })?;

        let n = read_u32(r, "signal count")? as usize;
        let mut signals = Vec::with_capacity(n);
        let mut stats = NormStats { mean: Vec::with_capacity(n), std: Vec::with_capacity(n) };
        for _ in 0..n {
            let len = read_u32(r, "signal name length")? as usize;
            let mut name = vec![0u8; len];
            read_bytes(r, &mut name, "signal name")?;
            signals.push(
                String::from_utf8(name)
                    .map_err(|_| Error::Format { detail: "signal name is not UTF-8".to_string() })?,
            );
            stats.mean.push(read_f64(r, "mean")?);
            stats.std.push(read_f64(r, "std")?);
        }
        if n != cfg.n_signals {
            return Err(Error::StateMismatch {
                detail: format!("checkpoint stores {n} signals for a {}-signal model", cfg.n_signals),
            });
        }

        let mut flag = [0u8];
        read_bytes(r, &mut flag, "threshold flag")?;
        let threshold = match flag[0] {
            0 => None,
            1 => Some(Threshold {
                thr: read_f64(r, "threshold")?,
                mean: read_f64(r, "threshold mean")?,
                std: read_f64(r, "threshold std")?,
                n_train: read_u64(r, "threshold count")? as usize,
            }),
            b => return Err(Error::Format { detail: format!("threshold flag must be 0 or 1, got {b}") }),
        };

        let stored = read_params(r)?;
        let mut model = CaemModel::new(cfg, 0)?;
        if stored.len() != model.params.len() {
            return Err(Error::StateMismatch {
                detail: format!(
                    "checkpoint holds {} parameters, the model has {}",
                    stored.len(),
                    model.params.len()
                ),
            });
        }
        for (dst, src) in model.params.iter_mut().zip(stored.iter()) {
            if dst.name != src.name || dst.shape != src.shape {
                return Err(Error::StateMismatch {
                    detail: format!(
                        "parameter {} {:?} does not match stored {} {:?}",
                        dst.name, dst.shape, src.name, src.shape
                    ),
                });
            }
            dst.data.copy_from_slice(&src.data);
        }
        Ok(Checkpoint { model, signals, stats, threshold })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        let mut f = std::io::BufWriter::new(file);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read(&mut std::io::BufReader::new(file))
    }
}

fn read_bytes<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format { detail: format!("truncated while reading {what}") })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_bytes(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_bytes(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_bytes(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}
