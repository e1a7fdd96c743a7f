//! The reverse-mode tape from first principles: build a scalar expression,
//! run backward once, and compare every gradient with central finite
//! differences.
//!
//! ```text
//! cargo run --example autodiff_basics
//! ```

use caem::tensor::check::finite_difference;
use caem::tensor::{Tape, Tensor};
use caem::Result;

/// f(w, v) = sum(tanh(w v) * (w v)) for a 2x3 w and 3x1 v.
fn f(tape: &Tape, w_data: &[f64], v_data: &[f64]) -> Result<Tensor> {
    let w = tape.leaf(w_data.to_vec(), vec![2, 3])?;
    let v = tape.leaf(v_data.to_vec(), vec![3, 1])?;
    let wv = w.matmul(&v)?;
    wv.tanh()?.mul(&wv)?.sum_all()
}

fn main() -> Result<()> {
    let w0 = [0.4, -1.2, 0.7, 0.1, 0.9, -0.3];
    let v0 = [1.5, -0.6, 0.2];

    // Forward + one backward sweep. Leaves keep their gradients; querying
    // a tensor the root does not depend on would simply return None.
    let tape = Tape::new();
    let w = tape.leaf(w0.to_vec(), vec![2, 3])?;
    let v = tape.leaf(v0.to_vec(), vec![3, 1])?;
    let wv = w.matmul(&v)?;
    let y = wv.tanh()?.mul(&wv)?.sum_all()?;
    println!("f(w, v) = {:.6}  ({} nodes on the tape)", y.value()?, tape.len());

    let grads = y.backward()?;
    let gw = grads.wrt(&w).expect("w feeds the root").to_vec();
    let gv = grads.wrt(&v).expect("v feeds the root").to_vec();

    // The same gradients again, numerically, perturbing one coordinate at
    // a time.
    let fd_w = finite_difference(
        |vals| {
            let tape = Tape::new();
            f(&tape, vals, &v0)?.value()
        },
        &w0,
        1e-5,
    )?;
    let fd_v = finite_difference(
        |vals| {
            let tape = Tape::new();
            f(&tape, &w0, vals)?.value()
        },
        &v0,
        1e-5,
    )?;

    println!("\n{:>3} {:>12} {:>12} {:>10}", "i", "backward", "numeric", "abs diff");
    for (i, (g, fd)) in gw.iter().chain(&gv).zip(fd_w.iter().chain(&fd_v)).enumerate() {
        println!("{i:>3} {g:>12.8} {fd:>12.8} {:>10.2e}", (g - fd).abs());
    }
    Ok(())
}
