//! The numerical health gate: finite-difference verification of every
//! layer's gradient and every loss term, on a miniature model.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use caem::gradcheck::run_suite;
use caem::Result;

fn main() -> Result<()> {
    let rows = run_suite()?;
    let mut all_ok = true;
    for row in &rows {
        let ok = row.passed();
        all_ok &= ok;
        println!(
            "{:<10} max rel err {:>10.3e}  (tolerance {:.0e})  {}",
            row.name,
            row.max_rel_err,
            row.tolerance,
            if ok { "pass" } else { "FAIL" }
        );
    }
    println!("\n{}", if all_ok { "all checks passed" } else { "checks FAILED" });
    Ok(())
}
