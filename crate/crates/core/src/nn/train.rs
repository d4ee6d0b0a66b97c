use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::MlpModel;
use super::tape::ParamGrads;
use super::unrolled::unrolled_loss;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::ComplexDenseTensor;

/// Adam moments for every parameter of a model, flattened layer by layer
/// (weights, then biases).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::dims(format!(
            "Adam state holds {} parameters, got {} params and {} grads",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        *p -= state.lr * (*m / c1) / ((*v / c2).sqrt() + state.eps);
    }
    Ok(())
}

fn adam_step_model(state: &mut AdamState, model: &mut MlpModel, grads: &ParamGrads) -> Result<()> {
    let mut flat: Vec<f64> = model.layers().iter().flat_map(|l| l.w.iter().chain(&l.b).copied()).collect();
    adam_step(state, &mut flat, &grads.flat())?;
    let mut it = flat.into_iter();
    for l in model.layers_mut() {
        l.w.iter_mut().chain(l.b.iter_mut()).for_each(|p| *p = it.next().expect("flat length"));
    }
    Ok(())
}

/// One phase of training with a fixed unroll depth and learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub k: usize,
    pub lr: f64,
    pub epochs: usize,
}

/// Parses `K:lr:epochs[,K:lr:epochs...]`.
pub fn parse_stages(s: &str) -> Result<Vec<Stage>> {
    s.split(',')
        .map(|part| {
            let f: Vec<&str> = part.trim().split(':').collect();
            let bad = || Error::invalid(format!("stage `{part}` is not K:lr:epochs"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(Stage {
                k: f[0].parse().map_err(|_| bad())?,
                lr: f[1].parse().map_err(|_| bad())?,
                epochs: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rank: usize,
    /// Unroll depth used when `stages` is empty.
    pub unroll_k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Overrides `(unroll_k, lr, epochs)` when nonempty.
    pub stages: Vec<Stage>,
}

impl TrainConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            unroll_k: 2,
            epochs: 10,
            batch_size: 32,
            lr: 1e-4,
            dropout: 0.0,
            seed: 0,
            stages: Vec::new(),
        }
    }

    pub fn schedule(&self) -> Vec<Stage> {
        if self.stages.is_empty() {
            vec![Stage {
                k: self.unroll_k,
                lr: self.lr,
                epochs: self.epochs,
            }]
        } else {
            self.stages.clone()
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.schedule().iter().map(|s| s.epochs).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.rank == 0 {
            return Err(Error::invalid("rank must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let sched = self.schedule();
        if sched.iter().all(|s| s.epochs == 0) {
            return Err(Error::invalid("training schedule has no epochs"));
        }
        if sched.iter().any(|s| !(s.lr >= 0.0 && s.lr.is_finite())) {
            return Err(Error::invalid("learning rates must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based, counted across stages.
    pub epoch: usize,
    pub stage: usize,
    pub k: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub failed: usize,
}

pub struct TrainOutcome {
    pub model: MlpModel,
    pub history: Vec<EpochRecord>,
}

const SHUFFLE_TAG: u64 = 0x5348_5546;
const DROPOUT_TAG: u64 = 0x4452_4f50;

/// Loss and parameter gradient of one sample. The dropout stream is keyed by
/// `(seed, epoch, batch)` and the sample index.
fn sample_grad(
    model: &MlpModel,
    y: &ComplexDenseTensor,
    rank: usize,
    k: usize,
    seed: u64,
    sample: usize,
) -> Result<(f64, ParamGrads)> {
    let mut r = rng::stream(seed, sample as u64);
    let ul = unrolled_loss(model, y, rank, k, true, &mut r)?;
    let loss = ul.value();
    if !loss.is_finite() {
        return Err(Error::Numerical("non-finite loss".into()));
    }
    let grads = ul.param_grads()?;
    if !grads.is_finite() {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    Ok((loss, grads))
}

/// Mini-batch training through the unrolled solver.
///
/// Samples of a batch are processed in parallel; their gradients are summed
/// in index order, so the result does not depend on the thread count.
pub fn train(mut model: MlpModel, data: &[ComplexDenseTensor], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let dims = model.arch().dims.clone();
    if let Some((i, y)) = data.iter().enumerate().find(|(_, y)| y.dims() != dims.as_slice()) {
        return Err(Error::dims(format!("sample {i} has shape {:?}, model expects {dims:?}", y.dims())));
    }
    if model.arch().rank != cfg.rank {
        return Err(Error::dims(format!(
            "model rank {} differs from configured rank {}",
            model.arch().rank,
            cfg.rank
        )));
    }
    model.set_dropout(cfg.dropout)?;

    let mut adam = AdamState::new(model.param_count(), cfg.lr);
    let mut history = Vec::with_capacity(cfg.total_epochs());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch = 0usize;

    for (si, stage) in cfg.schedule().iter().enumerate() {
        adam.lr = stage.lr;
        for _ in 0..stage.epochs {
            epoch += 1;
            order.shuffle(&mut rng::stream(rng::derive(cfg.seed, &[SHUFFLE_TAG, epoch as u64]), 0));
            let mut loss_sum = 0.0;
            let mut ok = 0usize;
            let mut failed = 0usize;
            for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
                let seed = rng::derive(cfg.seed, &[DROPOUT_TAG, epoch as u64, bi as u64]);
                let results: Vec<Result<(f64, ParamGrads)>> = batch
                    .par_iter()
                    .map(|&i| sample_grad(&model, &data[i], cfg.rank, stage.k, seed, i))
                    .collect();
                let mut sum = ParamGrads::zeros_like(&model);
                let mut batch_ok = 0usize;
                for (i, r) in batch.iter().zip(results) {
                    match r {
                        Ok((loss, g)) => {
                            loss_sum += loss;
                            sum.add_assign(&g);
                            batch_ok += 1;
                        }
                        Err(e) => {
                            log::warn!("epoch {epoch}: skipping sample {i}: {e}");
                            failed += 1;
                        }
                    }
                }
                ok += batch_ok;
                if batch_ok > 0 {
                    sum.scale(1.0 / batch_ok as f64);
                    adam_step_model(&mut adam, &mut model, &sum)?;
                }
            }
            if 2 * failed > data.len() {
                return Err(Error::Numerical(format!(
                    "epoch {epoch}: {failed} of {} samples failed",
                    data.len()
                )));
            }
            let mean_loss = loss_sum / ok as f64;
            log::info!("epoch {epoch} (stage {}, K={}): mean loss {mean_loss:.6e}", si + 1, stage.k);
            history.push(EpochRecord {
                epoch,
                stage: si + 1,
                k: stage.k,
                lr: stage.lr,
                mean_loss,
                failed,
            });
        }
    }
    Ok(TrainOutcome { model, history })
}
