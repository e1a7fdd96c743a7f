//! The decision layer on its own: mean-plus-sigma thresholding, strict
//! classification, and macro-averaged evaluation of a small score table.
//!
//! ```text
//! cargo run --example threshold_metrics
//! ```

use caem::detect::{classify, compute_threshold, evaluate};
use caem::Result;

fn main() -> Result<()> {
    // Pretend these came out of sample_scores on a trained model: the
    // training set is all normal, the eval set has two true anomalies.
    let train_scores = [0.9, 1.1, 1.0, 1.2, 0.8, 1.0, 1.05, 0.95];
    let eval_scores = [1.02, 0.97, 3.4, 1.1, 1.25, 2.8, 0.88];
    let truth = [false, false, true, false, false, true, false];

    let t = compute_threshold(&train_scores)?;
    println!(
        "threshold over {} training scores: mean {:.4} + std {:.4} = {:.4}",
        t.n_train, t.mean, t.std, t.thr
    );

    let pred = classify(&eval_scores, t.thr);
    println!("\n{:>7} {:>9} {:>7}", "score", "flagged", "truth");
    for ((s, p), tr) in eval_scores.iter().zip(&pred).zip(&truth) {
        println!("{s:>7.2} {p:>9} {tr:>7}");
    }

    let m = evaluate(&pred, &truth)?;
    println!("\nconfusion [truth][pred]: {:?}", m.confusion);
    println!(
        "normal    p {:.3} r {:.3} f1 {:.3} (n={})",
        m.normal.precision, m.normal.recall, m.normal.f1, m.normal.support
    );
    println!(
        "anomalous p {:.3} r {:.3} f1 {:.3} (n={})",
        m.anomalous.precision, m.anomalous.recall, m.anomalous.f1, m.anomalous.support
    );
    println!("macro     p {:.3} r {:.3} f1 {:.3}", m.macro_precision, m.macro_recall, m.macro_f1);
    Ok(())
}
