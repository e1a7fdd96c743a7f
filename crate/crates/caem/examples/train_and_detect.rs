//! End to end on the miniature preset: generate a labeled dataset, train,
//! then score a fresh CSV against the saved checkpoint, exactly as the
//! `caem` binary would.
//!
//! ```text
//! cargo run --example train_and_detect
//! ```

use caem::config::RunConfig;
use caem::pipeline::{cmd_detect, cmd_generate, cmd_train, CHECKPOINT_FILE};
use caem::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut cfg = RunConfig::miniature();

    let gen = cmd_generate(&cfg, &dir.path().join("data"))?;
    println!(
        "generated {} rows ({} normal / {} anomalous windows) -> {}",
        gen.rows,
        gen.normal_windows,
        gen.anomalous_windows,
        gen.data.display()
    );

    cfg.data.path = Some(gen.data.clone());
    let train_dir = dir.path().join("train");
    let report = cmd_train(&cfg, &train_dir)?;
    println!(
        "\ntrained {} epochs (best {} @ val {:.4}), split {}/{}/{}",
        report.epochs_run,
        report.best_epoch,
        report.best_val,
        report.windows.train,
        report.windows.val,
        report.windows.test
    );
    println!(
        "threshold = mean {:.4} + std {:.4} = {:.4}",
        report.threshold.mean, report.threshold.std, report.threshold.thr
    );
    if let Some(m) = &report.test {
        println!(
            "held-out macro F1 {:.4} (normal {:.4} / anomalous {:.4})",
            m.macro_f1, m.normal.f1, m.anomalous.f1
        );
    }

    // Detection re-reads everything it needs from the checkpoint: model
    // weights, signal order, normalization statistics, and the threshold.
    let det = cmd_detect(
        &cfg,
        &train_dir.join(CHECKPOINT_FILE),
        &gen.data,
        &dir.path().join("detect"),
    )?;
    println!(
        "\ndetect: {} of {} windows over the threshold, macro F1 {}",
        det.flagged,
        det.windows,
        det.metrics.map(|m| format!("{:.4}", m.macro_f1)).unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}
