//! Checks reverse-mode gradients of the unrolled loss against central
//! differences and prints the per-layer agreement.
//!
//! `cargo run --release --example gradient_check [K]`

use anyhow::Result;
use cpals::nn::{unrolled_loss, MlpArch, MlpModel};
use cpals::rng;
use cpals::tensor::ComplexDenseTensor;

fn main() -> Result<()> {
    let k: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2);
    let dims = [4, 4, 4];
    let mut r = rng::stream(8, 0);
    let y = ComplexDenseTensor::from_fn(&dims, |_| rng::complex_normal(&mut r, 1.0))?;
    let model = MlpModel::new(MlpArch::new(&dims, 2, 8, 2, true), 1)?;
    let loss = |m: &MlpModel| -> Result<f64> { Ok(unrolled_loss(m, &y, 2, k, false, &mut rng::stream(0, 0))?.value()) };
    let grads = unrolled_loss(&model, &y, 2, k, false, &mut rng::stream(0, 0))?.param_grads()?;
    println!("unrolled loss through {k} sweeps: {:.6}", loss(&model)?);

    let h = 1e-6;
    for (l, g) in grads.layers.iter().enumerate() {
        let (mut diff, mut norm) = (0.0, 0.0);
        for i in 0..g.w.len() {
            let mut p = model.clone();
            p.layers_mut()[l].w[i] += h;
            let mut q = model.clone();
            q.layers_mut()[l].w[i] -= h;
            let num = (loss(&p)? - loss(&q)?) / (2.0 * h);
            diff += (num - g.w[i]).powi(2);
            norm += num * num;
        }
        println!(
            "layer {l} ({} -> {}): relative error {:.2e} over {} weights",
            g.inp,
            g.out,
            (diff / norm.max(1e-300)).sqrt(),
            g.w.len()
        );
    }
    Ok(())
}
