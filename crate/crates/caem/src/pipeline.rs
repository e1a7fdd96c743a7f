//! End-to-end commands behind the CLI, callable as a library.
//!
//! Every command writes into a run directory with fixed file names so tests
//! and scripts can address outputs without globbing:
//!
//! ```text
//! config.toml      effective configuration echo (all commands)
//! data.csv         generated dataset            (generate)
//! checkpoint.caem  model + stats + threshold    (train)
//! trace.csv        per-epoch loss trace         (train)
//! report.json      structured summary           (train, detect, evaluate)
//! scores.csv       per-window scores and labels (detect)
//! ablation.csv     one row per trained variant  (ablate)
//! ```
//!
//! Nothing written here contains a timestamp, so reruns with the same
//! config and seed are byte-identical; wall-clock chatter goes to the log.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SplitMode};
use crate::data::synth::generate_frame;
use crate::data::window::{make_step_windows, Window};
use crate::data::{apply_stats, compute_stats, fill_missing, load_csv, noise::inject_noise, save_csv, split, Frame};
use crate::detect::{classify, compute_threshold, evaluate, Metrics, Threshold};
use crate::error::{Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::model::{CaemModel, Variant};
use crate::train::{fit, write_trace};

pub const CONFIG_FILE: &str = "config.toml";
pub const DATA_FILE: &str = "data.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.caem";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    cfg.save(&out.join(CONFIG_FILE))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::file(path, e))
}

fn refs(windows: &[Window]) -> Vec<&[f64]> {
    windows.iter().map(|w| w.data.as_slice()).collect()
}

/// Cut model-shaped windows out of a raw frame: repair short NaN gaps,
/// then window at the configured stride (default: disjoint).
fn cut_windows(cfg: &RunConfig, frame: &Frame) -> Result<Vec<Window>> {
    let filled = fill_missing(frame, cfg.data.max_gap)?;
    let window_len = cfg.model.window_len();
    let stride = cfg.data.stride.unwrap_or(window_len);
    make_step_windows(&filled, window_len, cfg.model.time_steps, stride)
}

/// Permute a frame's signal columns into the checkpoint's training order.
fn align_frame(frame: &Frame, signals: &[String]) -> Result<Frame> {
    if frame.n_signals() != signals.len() {
        return Err(Error::SignalCountMismatch { expected: signals.len(), got: frame.n_signals() });
    }
    let mut columns = Vec::with_capacity(signals.len());
    for name in signals {
        let idx = frame
            .signals
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::MissingColumn { column: name.clone() })?;
        columns.push(frame.columns[idx].clone());
    }
    Ok(Frame {
        signals: signals.to_vec(),
        columns,
        labels: frame.labels.clone(),
        subjects: frame.subjects.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateReport {
    pub data: PathBuf,
    pub rows: usize,
    pub normal_windows: usize,
    pub anomalous_windows: usize,
}

/// Write a labeled synthetic dataset to `out/data.csv`.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<GenerateReport> {
    cfg.synth.validate()?;
    prepare_out(cfg, out)?;
    let frame = generate_frame(&cfg.synth, cfg.seed)?;
    let path = out.join(DATA_FILE);
    save_csv(&path, &frame)?;
    let report = GenerateReport {
        data: path,
        rows: frame.n_rows(),
        normal_windows: cfg.synth.n_normal,
        anomalous_windows: cfg.synth.n_anomalous,
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub windows: SplitCounts,
    pub noisy_windows: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val: f64,
    pub threshold: Threshold,
    /// Held-out metrics, present when the test split has both classes.
    pub test: Option<Metrics>,
}

/// Train a model end to end from a CSV: window, split, normalize, fit,
/// threshold on the training scores, and score the held-out split.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    prepare_out(cfg, out)?;
    let data_path = cfg.data.path.as_ref().ok_or_else(|| Error::Config {
        detail: "data.path is not set; generate a dataset or point it at a CSV".to_string(),
    })?;
    let frame = load_csv(data_path)?;
    if frame.n_signals() != cfg.model.n_signals {
        return Err(Error::SignalCountMismatch { expected: cfg.model.n_signals, got: frame.n_signals() });
    }
    let windows = cut_windows(cfg, &frame)?;
    let mut split = match cfg.data.split {
        SplitMode::Ratio => split::split_ratio(windows, cfg.seed)?,
        SplitMode::Loso => {
            let holdout = cfg.data.holdout.as_deref().expect("validated");
            split::split_loso(windows, holdout, cfg.seed)?
        }
    };
    log::info!(
        "windows: {} train / {} val / {} test",
        split.train.len(), split.val.len(), split.test.len()
    );

    let stats = compute_stats(&split.train, cfg.model.n_signals)?;
    apply_stats(&mut split.train, cfg.model.n_signals, &stats)?;
    apply_stats(&mut split.val, cfg.model.n_signals, &stats)?;
    apply_stats(&mut split.test, cfg.model.n_signals, &stats)?;
    let noisy = if cfg.data.noise_ratio > 0.0 {
        inject_noise(&mut split.train, cfg.data.noise_ratio, cfg.data.noise_sigma, cfg.seed)?.len()
    } else {
        0
    };

    let mut model = CaemModel::new(cfg.model.clone(), cfg.seed)?;
    let result = fit(&mut model, &refs(&split.train), &refs(&split.val), &cfg.train, cfg.seed)?;
    write_trace(&out.join(TRACE_FILE), &result.trace)?;

    let train_scores = model.sample_scores(&refs(&split.train))?;
    let threshold = compute_threshold(&train_scores)?;
    log::info!("threshold {:.6} (mean {:.6}, std {:.6})", threshold.thr, threshold.mean, threshold.std);

    let test = if split.test.is_empty() {
        None
    } else {
        let scores = model.sample_scores(&refs(&split.test))?;
        let pred = classify(&scores, threshold.thr);
        let truth: Vec<bool> = split.test.iter().map(|w| w.label).collect();
        if truth.iter().any(|&t| t) && truth.iter().any(|&t| !t) {
            Some(evaluate(&pred, &truth)?)
        } else {
            None
        }
    };

    let report = TrainReport {
        seed: cfg.seed,
        windows: SplitCounts { train: split.train.len(), val: split.val.len(), test: split.test.len() },
        noisy_windows: noisy,
        epochs_run: result.trace.len(),
        best_epoch: result.best_epoch,
        best_val: result.best_val,
        threshold,
        test,
    };
    let ckp = Checkpoint { model, signals: frame.signals.clone(), stats, threshold: Some(threshold) };
    ckp.save(&out.join(CHECKPOINT_FILE))?;
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReport {
    pub windows: usize,
    pub flagged: usize,
    pub threshold: Threshold,
    /// Present when the input carries a label column with both classes.
    pub metrics: Option<Metrics>,
}

/// Score a CSV against a trained checkpoint. Windows are cut at the
/// configured stride, normalized with the checkpoint's statistics, scored,
/// and classified against the stored threshold.
pub fn cmd_detect(cfg: &RunConfig, checkpoint: &Path, input: &Path, out: &Path) -> Result<DetectReport> {
    prepare_out(cfg, out)?;
    let ckp = Checkpoint::load(checkpoint)?;
    let threshold = ckp.threshold.ok_or_else(|| Error::StateMismatch {
        detail: "checkpoint carries no threshold; it was not produced by training".to_string(),
    })?;
    let frame = align_frame(&load_csv(input)?, &ckp.signals)?;
    let mcfg = ckp.model.config().clone();

    let filled = fill_missing(&frame, cfg.data.max_gap)?;
    let window_len = mcfg.window_len();
    let stride = cfg.data.stride.unwrap_or(window_len);
    let mut windows = make_step_windows(&filled, window_len, mcfg.time_steps, stride)?;
    apply_stats(&mut windows, mcfg.n_signals, &ckp.stats)?;

    let scores = ckp.model.sample_scores(&refs(&windows))?;
    let pred = classify(&scores, threshold.thr);
    let has_truth = frame.labels.is_some();

    let scores_path = out.join(SCORES_FILE);
    let file = std::fs::File::create(&scores_path).map_err(|e| Error::file(&scores_path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if has_truth {
        w.write_record(["index", "score", "label", "truth"])?;
    } else {
        w.write_record(["index", "score", "label"])?;
    }
    for (i, (s, &p)) in scores.iter().zip(&pred).enumerate() {
        let mut row = vec![i.to_string(), s.to_string(), (p as u8).to_string()];
        if has_truth {
            row.push((windows[i].label as u8).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let metrics = if has_truth {
        let truth: Vec<bool> = windows.iter().map(|w| w.label).collect();
        if truth.iter().any(|&t| t) && truth.iter().any(|&t| !t) {
            Some(evaluate(&pred, &truth)?)
        } else {
            None
        }
    } else {
        None
    };
    let report = DetectReport {
        windows: windows.len(),
        flagged: pred.iter().filter(|&&p| p).count(),
        threshold,
        metrics,
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Recompute metrics from a detect run's `scores.csv` (it must carry the
/// `truth` column).
pub fn cmd_evaluate(scores: &Path, out: &Path) -> Result<Metrics> {
    let file = std::fs::File::open(scores).map_err(|e| Error::file(scores, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn { column: name.to_string() })
    };
    let (label_idx, truth_idx) = (col("label")?, col("truth")?);
    let parse_flag = |row: usize, field: &str, column: &str| -> Result<bool> {
        match field.trim() {
            "0" | "false" => Ok(false),
            "1" | "true" => Ok(true),
            _ => Err(Error::NonNumericCell { row, column: column.to_string() }),
        }
    };
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        pred.push(parse_flag(i, &record[label_idx], "label")?);
        truth.push(parse_flag(i, &record[truth_idx], "truth")?);
    }
    let metrics = evaluate(&pred, &truth)?;
    std::fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    write_json(&out.join(REPORT_FILE), &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub best_epoch: usize,
    pub threshold: f64,
}

/// Train and evaluate each variant on the same data and seed, one run
/// directory per variant plus a comparison table at the root.
pub fn cmd_ablate(cfg: &RunConfig, variants: &[Variant], out: &Path) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::EmptyInput { what: "variant list".to_string() });
    }
    prepare_out(cfg, out)?;
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let mut vcfg = cfg.clone();
        vcfg.model = v.apply(&cfg.model);
        log::info!("ablation: training {v}");
        let report = cmd_train(&vcfg, &out.join(v.to_string()))?;
        let m = report.test.ok_or_else(|| Error::Config {
            detail: format!("variant {v}: test split lacks both classes, nothing to compare"),
        })?;
        rows.push(AblationRow {
            variant: v.to_string(),
            macro_f1: m.macro_f1,
            macro_precision: m.macro_precision,
            macro_recall: m.macro_recall,
            best_epoch: report.best_epoch,
            threshold: report.threshold.thr,
        });
    }
    let path = out.join(ABLATION_FILE);
    let file = std::fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(rows)
}

pub use crate::gradcheck::GradCheckRow;

/// Finite-difference audit of every layer and loss term at desk scale.
/// Returns one row per check; a row passes when `max_rel_err < tolerance`.
pub fn cmd_gradcheck() -> Result<Vec<GradCheckRow>> {
    crate::gradcheck::run_suite()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LABEL_COLUMN;

    fn mini_cfg(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::miniature();
        let gen = cmd_generate(&cfg, &dir.join("gen")).unwrap();
        cfg.data.path = Some(gen.data);
        cfg
    }

    #[test]
    fn generate_then_train_then_detect_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = mini_cfg(dir.path());

        let train_out = dir.path().join("train");
        let report = cmd_train(&cfg, &train_out).unwrap();
        assert!(train_out.join(CONFIG_FILE).exists());
        assert!(train_out.join(CHECKPOINT_FILE).exists());
        assert!(train_out.join(TRACE_FILE).exists());
        assert!(train_out.join(REPORT_FILE).exists());
        assert_eq!(report.windows.train, 40);
        assert_eq!(report.windows.val, 8);
        assert_eq!(report.windows.test, 52);
        assert!(report.test.is_some());

        let detect_out = dir.path().join("detect");
        let detection = cmd_detect(
            &cfg,
            &train_out.join(CHECKPOINT_FILE),
            cfg.data.path.as_ref().unwrap(),
            &detect_out,
        )
        .unwrap();
        assert_eq!(detection.windows, 100);
        assert!(detection.metrics.is_some());
        assert_eq!(detection.threshold, report.threshold);

        let metrics = cmd_evaluate(&detect_out.join(SCORES_FILE), &dir.path().join("eval")).unwrap();
        assert_eq!(Some(metrics), detection.metrics);
    }

    #[test]
    fn train_reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = mini_cfg(dir.path());
        cmd_train(&cfg, &dir.path().join("a")).unwrap();
        cmd_train(&cfg, &dir.path().join("b")).unwrap();
        for name in [CONFIG_FILE, CHECKPOINT_FILE, TRACE_FILE, REPORT_FILE] {
            let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
            let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between reruns");
        }
    }

    #[test]
    fn missing_data_path_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::miniature();
        let err = cmd_train(&cfg, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        let mut cfg = cfg;
        cfg.data.path = Some(dir.path().join("absent.csv"));
        let err = cmd_train(&cfg, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("absent.csv"), "{err}");
    }

    #[test]
    fn detect_rejects_wrong_signal_count() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = mini_cfg(dir.path());
        let train_out = dir.path().join("train");
        cmd_train(&cfg, &train_out).unwrap();

        // Drop one signal column from the data and re-offer it.
        let frame = load_csv(cfg.data.path.as_ref().unwrap()).unwrap();
        let narrower = Frame {
            signals: frame.signals[..2].to_vec(),
            columns: frame.columns[..2].to_vec(),
            labels: frame.labels.clone(),
            subjects: None,
        };
        let narrow_path = dir.path().join("narrow.csv");
        save_csv(&narrow_path, &narrower).unwrap();
        let err = cmd_detect(&cfg, &train_out.join(CHECKPOINT_FILE), &narrow_path, &dir.path().join("d"))
            .unwrap_err();
        assert!(matches!(err, Error::SignalCountMismatch { expected: 3, got: 2 }));
    }

    #[test]
    fn detect_reorders_columns_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = mini_cfg(dir.path());
        let train_out = dir.path().join("train");
        cmd_train(&cfg, &train_out).unwrap();

        let frame = load_csv(cfg.data.path.as_ref().unwrap()).unwrap();
        let shuffled = Frame {
            signals: vec![frame.signals[2].clone(), frame.signals[0].clone(), frame.signals[1].clone()],
            columns: vec![frame.columns[2].clone(), frame.columns[0].clone(), frame.columns[1].clone()],
            labels: frame.labels.clone(),
            subjects: None,
        };
        let shuffled_path = dir.path().join("shuffled.csv");
        save_csv(&shuffled_path, &shuffled).unwrap();

        let a = cmd_detect(&cfg, &train_out.join(CHECKPOINT_FILE), cfg.data.path.as_ref().unwrap(), &dir.path().join("d1")).unwrap();
        let b = cmd_detect(&cfg, &train_out.join(CHECKPOINT_FILE), &shuffled_path, &dir.path().join("d2")).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            std::fs::read(dir.path().join("d1").join(SCORES_FILE)).unwrap(),
            std::fs::read(dir.path().join("d2").join(SCORES_FILE)).unwrap()
        );
    }

    #[test]
    fn scores_file_matches_an_external_reclassification() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = mini_cfg(dir.path());
        let train_out = dir.path().join("train");
        let report = cmd_train(&cfg, &train_out).unwrap();
        let detect_out = dir.path().join("detect");
        cmd_detect(&cfg, &train_out.join(CHECKPOINT_FILE), cfg.data.path.as_ref().unwrap(), &detect_out)
            .unwrap();

        let text = std::fs::read_to_string(detect_out.join(SCORES_FILE)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("index,score,label,truth"));
        for line in lines {
            let parts: Vec<&str> = line.split(',').collect();
            let score: f64 = parts[1].parse().unwrap();
            let label: u8 = parts[2].parse().unwrap();
            assert_eq!(label == 1, score > report.threshold.thr, "{line}");
        }
    }

    #[test]
    fn ablate_writes_one_row_per_variant() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = mini_cfg(dir.path());
        cfg.train.max_epochs = 3;
        let out = dir.path().join("ablate");
        let rows = cmd_ablate(&cfg, &[Variant::Full, Variant::WoPre], &out).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].variant, "full");
        assert_eq!(rows[1].variant, "wo-pre");
        let text = std::fs::read_to_string(out.join(ABLATION_FILE)).unwrap();
        assert!(text.starts_with("variant,macro_f1,macro_precision,macro_recall,best_epoch,threshold\n"));
        assert_eq!(text.lines().count(), 3);
        assert!(out.join("full").join(CHECKPOINT_FILE).exists());
        assert!(out.join("wo-pre").join(CHECKPOINT_FILE).exists());
    }

    #[test]
    fn generated_csv_has_the_documented_columns() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::miniature();
        let gen = cmd_generate(&cfg, dir.path()).unwrap();
        let text = std::fs::read_to_string(&gen.data).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, format!("s0,s1,s2,{LABEL_COLUMN}"));
        assert_eq!(gen.rows, 100 * 24);
    }
}
