//! Decomposes one noisy synthetic tensor with random and SVD starts and
//! prints the objective and NSE per sweep.
//!
//! `cargo run --release --example decompose_tensor`

use anyhow::Result;
use cpals::dataset::{gen_synthetic, SyntheticConfig};
use cpals::eval::{decompose, RunConfig};
use cpals::init::InitMethod;

fn main() -> Result<()> {
    let ds = gen_synthetic(&SyntheticConfig::new(&[8, 7, 6], 3, 1, 25.0, 4))?;
    let y = &ds.solver_inputs()?[0];
    let truth = &ds.solver_truths()?[0];
    println!("tensor {:?}, rank 3, SNR 25 dB", y.dims());
    for method in [InitMethod::Random, InitMethod::Svd] {
        let (est, trace) = decompose(y, &RunConfig::new(3, 25, method, 1), 0, Some(truth))?;
        let nse = trace.nse.expect("truth given");
        println!("\n{method} start");
        for k in [0, 1, 2, 5, 10, 25] {
            println!("  sweep {k:>2}: objective {:>10.4e}  NSE {:.3e}", trace.objective[k], nse[k]);
        }
        let w: Vec<String> = est.normalize().weights.iter().map(|w| format!("{:.3}", w.norm())).collect();
        println!("  column norms after normalizing: {}", w.join(", "));
    }
    Ok(())
}
