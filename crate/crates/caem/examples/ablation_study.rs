//! Train every model variant on one shared dataset and compare. Mirrors
//! `caem ablate`, on the miniature preset so it finishes in seconds.
//!
//! ```text
//! cargo run --example ablation_study
//! ```

use caem::config::RunConfig;
use caem::model::Variant;
use caem::pipeline::{cmd_ablate, cmd_generate};
use caem::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut cfg = RunConfig::miniature();
    let gen = cmd_generate(&cfg, &dir.path().join("data"))?;
    cfg.data.path = Some(gen.data);

    let rows = cmd_ablate(&cfg, &Variant::ALL, &dir.path().join("ablate"))?;

    println!(
        "{:<14} {:>9} {:>11} {:>8} {:>11} {:>10}",
        "variant", "macro F1", "precision", "recall", "best epoch", "threshold"
    );
    for r in &rows {
        println!(
            "{:<14} {:>9.4} {:>11.4} {:>8.4} {:>11} {:>10.4}",
            r.variant, r.macro_f1, r.macro_precision, r.macro_recall, r.best_epoch, r.threshold
        );
    }

    let full = rows.iter().find(|r| r.variant == "full").expect("full variant present");
    for r in &rows {
        if r.variant != "full" && r.macro_f1 < full.macro_f1 {
            println!("removing {} costs {:.4} macro F1", &r.variant[3..], full.macro_f1 - r.macro_f1);
        }
    }
    Ok(())
}
