//! mmWave MIMO-OFDM channel estimation: coarse least-squares estimate,
//! linear MMSE and CP-ALS refinement, followed by angle, delay and gain
//! recovery from the factors.
//!
//! `cargo run --release --example channel_estimation`

use anyhow::Result;
use cpals::channel::{self, Block, MmseEstimator};
use cpals::dataset::{gen_channel, ChannelConfig, SampleParams};
use cpals::eval::{evaluate, RunConfig};
use cpals::init::InitMethod;

fn main() -> Result<()> {
    let snrs = [0.0, 10.0, 20.0];
    let fit = gen_channel(&ChannelConfig::new(8, 16, 4, 4, 2000, &snrs, 21))?;
    let test = gen_channel(&ChannelConfig::new(8, 16, 4, 4, 150, &snrs, 22))?;
    println!("channel tensors {:?} (MS x BS x subcarriers), 4 paths", test.meta.dims);

    // the MMSE estimator needs a channel covariance, learned from training data
    let coarse: Vec<_> = fit.samples.iter().map(|s| s.noisy.clone()).collect();
    let vars: Vec<f64> = fit.samples.iter().map(|s| s.noise_var).collect();
    let mmse = MmseEstimator::fit(&coarse, &vars)?;

    let mut run = RunConfig::new(4, 50, InitMethod::Svd, 0);
    run.dist.complex = true;
    let als = evaluate(&test, &run)?;

    println!("\n{:>6} {:>12} {:>12} {:>12}", "SNR", "coarse NSE", "MMSE NSE", "CP-ALS NSE");
    for &snr in &snrs {
        let (mut c, mut m, mut a, mut n) = (0.0, 0.0, 0.0, 0.0);
        for (i, s) in test.samples.iter().enumerate().filter(|(_, s)| s.snr_db == snr) {
            let clean = s.clean.as_ref().expect("channel datasets keep the clean tensor");
            let nse = |e: &cpals::tensor::ComplexDenseTensor| e.sub(clean).unwrap().frob_norm_sq() / clean.frob_norm_sq();
            c += nse(&s.noisy);
            m += nse(&mmse.estimate_from_coarse(&s.noisy, s.noise_var)?);
            a += als.final_nse.get(i).copied().unwrap_or(f64::NAN);
            n += 1.0;
        }
        println!("{snr:>4} dB {:>12.3e} {:>12.3e} {:>12.3e}", c / n, m / n, a / n);
    }

    println!("\nparameter ANSE after 50 sweeps");
    for row in &als.params {
        let e = &row.errors;
        println!(
            "{:>4} dB: AoA {:.2e}  AoD {:.2e}  delay {:.2e}  gain {:.2e}",
            row.snr_db, e.aoa, e.aod, e.delay, e.gain
        );
    }

    // one sample in detail
    let s = &test.samples[test.len() - 1];
    if let Some(SampleParams::Channel { block_start, params }) = &s.params {
        let y = test.to_solver(&s.noisy)?;
        let (est, _) = cpals::eval::decompose(&y, &run, test.len() - 1, None)?;
        let block = Block { start: *block_start, len: 4 };
        let got = channel::extract_params(&test.from_solver(&est)?, block, &params.constants)?;
        let mut truth = params.delay_ns.clone();
        let mut found = got.delay_ns.clone();
        truth.sort_by(f64::total_cmp);
        found.sort_by(f64::total_cmp);
        println!("\nsample at {} dB, block starting at subcarrier {block_start}", s.snr_db);
        println!("  true delays (ns):      {truth:.2?}");
        println!("  estimated delays (ns): {found:.2?}");
    }
    Ok(())
}
