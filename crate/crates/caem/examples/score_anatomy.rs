//! Where an anomaly score comes from: train the full benchmark preset
//! (about a minute), then split the scores into their reconstruction and
//! prediction parts, class by class. Amplitude anomalies blow up the
//! reconstruction term. Decoupling anomalies are built so every step lies
//! on the normal per-step manifold: reconstruction cannot see them at all,
//! and only the predictors, which carry memory across steps, push their
//! scores over the threshold.
//!
//! ```text
//! cargo run --example score_anatomy
//! ```

use caem::config::RunConfig;
use caem::data::apply_stats;
use caem::data::synth::generate_windows;
use caem::model::checkpoint::Checkpoint;
use caem::pipeline::{cmd_generate, cmd_train, CHECKPOINT_FILE};
use caem::tensor::Tape;
use caem::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut cfg = RunConfig::synthetic_benchmark();
    let gen = cmd_generate(&cfg, &dir.path().join("data"))?;
    cfg.data.path = Some(gen.data.clone());
    eprintln!("training the benchmark preset ({} epochs)...", cfg.train.max_epochs);
    let report = cmd_train(&cfg, &dir.path().join("train"))?;

    let ckpt = Checkpoint::load(&dir.path().join("train").join(CHECKPOINT_FILE))?;
    let model = &ckpt.model;
    let mcfg = model.config();

    // The same windows the CSV holds, but in generation order (normals,
    // then amplitude anomalies, then decoupling), z-scored with the
    // training statistics like any scoring pass.
    let mut windows = generate_windows(&cfg.synth, cfg.seed)?;
    apply_stats(&mut windows, mcfg.n_signals, &ckpt.stats)?;
    let amp0 = cfg.synth.n_normal;
    let dec0 = amp0 + cfg.synth.amplitude_count();
    let classes = [
        ("normal", 0, amp0),
        ("amplitude", amp0, dec0),
        ("decoupling", dec0, windows.len()),
    ];

    let thr = report.threshold.thr;
    println!("threshold {thr:.3}\n");
    println!(
        "{:<12} {:>10} {:>10} {:>10} {:>12} {:>9}",
        "class", "mean mse", "mean np", "mean lp", "mean score", "flagged"
    );
    for (name, lo, hi) in classes {
        let mut sums = [0.0f64; 4];
        let mut flagged = 0usize;
        for chunk in windows[lo..hi].chunks(50) {
            let tape = Tape::new();
            let bound = model.bind(&tape)?;
            let refs: Vec<&[f64]> = chunk.iter().map(|w| w.data.as_slice()).collect();
            let out = model.forward_batch(&tape, &bound, &refs, None)?;
            let mse = out.mse_rows.map(|t| t.data()).unwrap_or_default();
            let np = out.np_rows.map(|t| t.data()).unwrap_or_default();
            let lp = out.lp_rows.map(|t| t.data()).unwrap_or_default();
            for i in 0..chunk.len() {
                let parts = [mse[i], np[i], lp[i]];
                let score = parts[0]
                    + mcfg.lambda_pred_bilstm * parts[1]
                    + mcfg.lambda_pred_ar * parts[2];
                for (s, v) in sums.iter_mut().zip([parts[0], parts[1], parts[2], score]) {
                    *s += v;
                }
                flagged += (score > thr) as usize;
            }
        }
        let n = (hi - lo) as f64;
        println!(
            "{name:<12} {:>10.2} {:>10.2} {:>10.2} {:>12.2} {:>6}/{}",
            sums[0] / n,
            sums[1] / n,
            sums[2] / n,
            sums[3] / n,
            flagged,
            hi - lo
        );
    }
    Ok(())
}
