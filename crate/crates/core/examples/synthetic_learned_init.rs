//! Trains the initializer network through two unrolled sweeps on small
//! synthetic tensors, then compares learned and random starts on held-out
//! data.
//!
//! `cargo run --release --example synthetic_learned_init [epochs] [model-dir]`

use anyhow::Result;
use cpals::dataset::{gen_synthetic, SyntheticConfig};
use cpals::eval::{evaluate, RunConfig};
use cpals::init::InitMethod;
use cpals::nn::{train, MlpArch, MlpModel, TrainConfig};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(40);

    let train_set = gen_synthetic(&SyntheticConfig::new(&[6, 6, 6], 3, 2000, 15.0, 1))?;
    let test_set = gen_synthetic(&SyntheticConfig::new(&[6, 6, 6], 3, 500, 15.0, 2))?;
    let arch = MlpArch::new(&train_set.solver_dims(), 3, 64, 2, false);
    let mut cfg = TrainConfig::new(3);
    cfg.unroll_k = 2;
    cfg.epochs = epochs;
    cfg.batch_size = 128;
    cfg.lr = 1e-3;
    cfg.seed = 7;
    let out = train(MlpModel::new(arch, 7)?, &train_set.solver_inputs()?, &cfg)?;
    for r in out.history.iter().step_by((epochs / 8).max(1)) {
        println!("epoch {:>3}: mean unrolled loss {:.4}", r.epoch, r.mean_loss);
    }
    if let Some(dir) = args.get(2) {
        out.model.save(std::path::Path::new(dir))?;
    }

    println!("\n{:>6} {:>14} {:>14} {:>12} {:>12}", "sweep", "obj random", "obj learned", "ANSE random", "ANSE learned");
    let run = |m| evaluate(&test_set, &RunConfig::new(3, 10, m, 3).with_model(&out.model));
    let (r, l) = (run(InitMethod::Random)?, run(InitMethod::Learned)?);
    for k in 0..=10 {
        println!(
            "{k:>6} {:>14.4} {:>14.4} {:>12.3e} {:>12.3e}",
            r.mean_objective[k], l.mean_objective[k], r.anse[k], l.anse[k]
        );
    }
    Ok(())
}
