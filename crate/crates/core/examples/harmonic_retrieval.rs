//! Frequency recovery from noisy Vandermonde columns, the step that turns
//! CP factors into angles and delays.
//!
//! `cargo run --release --example harmonic_retrieval`

use anyhow::Result;
use cpals::channel::extract_generating_vector;
use cpals::cp::{vandermonde_vector, wrap_angle};
use cpals::rng;

fn main() -> Result<()> {
    let mut r = rng::stream(3, 0);
    println!("{:>4} {:>8} {:>12} {:>12}", "len", "SNR dB", "mean |err|", "max |err|");
    for len in [4, 8, 32] {
        for snr in [0.0, 10.0, 20.0, f64::INFINITY] {
            let var = if snr.is_finite() { 10f64.powf(-snr / 10.0) } else { 0.0 };
            let mut errs = Vec::new();
            for t in 0..500 {
                let z = -3.0 + 6.0 * (t as f64 + 0.5) / 500.0;
                let gain = rng::complex_normal(&mut r, 1.0);
                let col: Vec<_> = vandermonde_vector(z, len)
                    .into_iter()
                    .map(|v| gain * (v + rng::complex_normal(&mut r, var)))
                    .collect();
                errs.push(wrap_angle(extract_generating_vector(&col)? - z).abs());
            }
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            let max = errs.iter().cloned().fold(0.0, f64::max);
            println!("{len:>4} {snr:>8} {mean:>12.3e} {max:>12.3e}");
        }
    }
    Ok(())
}
