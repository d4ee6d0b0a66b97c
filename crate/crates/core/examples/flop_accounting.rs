//! Complex-flop budgets of the three initializers for the channel tensor
//! shape, and how the cost splits into initialization and sweeps.
//!
//! `cargo run --release --example flop_accounting`

use anyhow::Result;
use cpals::flops::cost_profile;
use cpals::init::InitMethod;
use cpals::nn::MlpArch;

fn main() -> Result<()> {
    let dims = [32, 8, 4];
    let arch = MlpArch::new(&dims, 4, 512, 4, true);
    // iteration counts of the kind seen when each start is run to a fixed accuracy
    for (method, iters) in [(InitMethod::Random, 36), (InitMethod::Svd, 5), (InitMethod::Learned, 2)] {
        let r = cost_profile(&dims, 4, iters, method, Some(&arch))?;
        println!(
            "{:>6}: init {:>9.3}k + {iters:>2} x {:.3}k = {:>9.3}k cflops",
            method.to_string(),
            r.init_cflops as f64 / 1e3,
            r.per_iteration_cflops as f64 / 1e3,
            r.total_cflops as f64 / 1e3
        );
    }
    println!("\n{}", cost_profile(&dims, 4, 1, InitMethod::Svd, None)?);
    Ok(())
}
