//! Dataset-level decomposition runs: convergence curves, iteration counts to
//! reach ANSE targets, and channel parameter accuracy.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::{cpals_traced, AlsConfig, AlsTrace};
use crate::channel::{self, Block, ParamErrors};
use crate::cp::CpFactors;
use crate::dataset::{Dataset, SampleParams};
use crate::error::{Error, Result};
use crate::init::{initialize, InitMethod, UniformInit};
use crate::nn::MlpModel;
use crate::rng;
use crate::tensor::ComplexDenseTensor;

/// Initializer settings shared by every sample of a run.
#[derive(Clone, Debug)]
pub struct RunConfig<'m> {
    pub rank: usize,
    pub iterations: usize,
    pub method: InitMethod,
    pub dist: UniformInit,
    pub seed: u64,
    pub model: Option<&'m MlpModel>,
}

impl<'m> RunConfig<'m> {
    pub fn new(rank: usize, iterations: usize, method: InitMethod, seed: u64) -> Self {
        Self {
            rank,
            iterations,
            method,
            dist: UniformInit::default(),
            seed,
            model: None,
        }
    }

    pub fn with_model(mut self, model: &'m MlpModel) -> Self {
        self.model = Some(model);
        self
    }
}

/// Seed of the random start for sample `index`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    rng::derive(seed, &[index as u64])
}

/// Initializer followed by the solver on one tensor.
pub fn decompose(
    y: &ComplexDenseTensor,
    cfg: &RunConfig<'_>,
    index: usize,
    truth: Option<&ComplexDenseTensor>,
) -> Result<(CpFactors, AlsTrace)> {
    let init = initialize(cfg.method, y, cfg.rank, &cfg.dist, sample_seed(cfg.seed, index), cfg.model)?;
    cpals_traced(y, &init, &AlsConfig::new(cfg.rank, cfg.iterations), truth)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamRow {
    pub snr_db: f64,
    pub samples: usize,
    pub errors: ParamErrors,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub method: InitMethod,
    /// Mean objective per trace index (0 = after the initial mode-0 update).
    pub mean_objective: Vec<f64>,
    /// Mean NSE against the clean tensors per trace index.
    pub anse: Vec<f64>,
    /// Final NSE of each successful sample, in sample order.
    pub final_nse: Vec<f64>,
    /// Samples that failed numerically.
    pub failed: Vec<usize>,
    /// Channel parameter errors grouped by SNR, ascending.
    pub params: Vec<ParamRow>,
}

impl EvalReport {
    pub fn nse_cdf(&self) -> Vec<(f64, f64)> {
        channel::empirical_cdf(&self.final_nse)
    }

    /// First trace index whose ANSE is at or below `target`.
    pub fn iterations_to(&self, target: f64) -> Option<usize> {
        self.anse.iter().position(|&a| a <= target)
    }
}

struct SampleRun {
    trace: AlsTrace,
    params: Option<(f64, ParamErrors)>,
}

fn run_sample(ds: &Dataset, cfg: &RunConfig<'_>, index: usize, with_params: bool) -> Result<SampleRun> {
    let s = &ds.samples[index];
    let y = ds.to_solver(&s.noisy)?;
    let truth = s
        .clean
        .as_ref()
        .ok_or_else(|| Error::invalid("evaluation needs clean tensors"))
        .and_then(|c| ds.to_solver(c))?;
    let (est, trace) = decompose(&y, cfg, index, Some(&truth))?;
    let params = match (&s.params, with_params) {
        (Some(SampleParams::Channel { block_start, params }), true) => {
            let block = Block {
                start: *block_start,
                len: ds.meta.dims[2],
            };
            let est = ds.from_solver(&est)?;
            let extracted = channel::extract_params(&est, block, &params.constants)?;
            Some((s.snr_db, channel::param_errors(&extracted, params)?))
        }
        _ => None,
    };
    Ok(SampleRun { trace, params })
}

/// Runs the initializer and solver on every sample. Channel datasets also
/// get parameter errors after the last iteration.
pub fn evaluate(ds: &Dataset, cfg: &RunConfig<'_>) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if !ds.meta.has_clean {
        return Err(Error::invalid("dataset has no clean tensors for NSE metrics"));
    }
    if cfg.rank != ds.meta.rank {
        log::warn!("decomposing with rank {} on a rank-{} dataset", cfg.rank, ds.meta.rank);
    }
    let with_params = ds.meta.has_params && cfg.rank == ds.meta.rank;
    let results: Vec<Result<SampleRun>> = (0..ds.len())
        .into_par_iter()
        .map(|i| run_sample(ds, cfg, i, with_params))
        .collect();

    let len = cfg.iterations + 1;
    let mut obj = vec![0.0; len];
    let mut anse = vec![0.0; len];
    let mut final_nse = Vec::new();
    let mut failed = Vec::new();
    let mut groups: BTreeMap<u64, (f64, Vec<ParamErrors>)> = BTreeMap::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(run) => {
                let nse = run.trace.nse.as_ref().expect("truth was given");
                for k in 0..len {
                    obj[k] += run.trace.objective[k];
                    anse[k] += nse[k];
                }
                final_nse.push(nse[len - 1]);
                if let Some((snr, e)) = run.params {
                    groups.entry(snr.to_bits()).or_insert((snr, Vec::new())).1.push(e);
                }
            }
            Err(Error::Numerical(msg)) => {
                log::warn!("sample {i}: {msg}");
                failed.push(i);
            }
            Err(e) => return Err(e),
        }
    }
    let ok = final_nse.len();
    if ok == 0 {
        return Err(Error::Numerical("every sample failed".into()));
    }
    for v in obj.iter_mut().chain(anse.iter_mut()) {
        *v /= ok as f64;
    }
    let mut params = groups
        .into_values()
        .map(|(snr, errs)| {
            Ok(ParamRow {
                snr_db: snr,
                samples: errs.len(),
                errors: channel::mean_param_errors(&errs)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    params.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
    Ok(EvalReport {
        method: cfg.method,
        mean_objective: obj,
        anse,
        final_nse,
        failed,
        params,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: InitMethod,
    pub target: f64,
    /// First trace index reaching the target, `None` if never reached.
    pub iterations: Option<usize>,
}

/// Iteration counts to reach each ANSE target, per initializer.
pub fn bench(
    ds: &Dataset,
    rank: usize,
    targets: &[f64],
    max_iters: usize,
    methods: &[InitMethod],
    seed: u64,
    model: Option<&MlpModel>,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &method in methods {
        let mut cfg = RunConfig::new(rank, max_iters, method, seed);
        cfg.dist.complex = ds.meta.complex;
        cfg.model = model;
        let report = evaluate(ds, &cfg)?;
        for &t in targets {
            rows.push(BenchRow {
                method,
                target: t,
                iterations: report.iterations_to(t),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_channel, gen_synthetic, ChannelConfig, SyntheticConfig};

    #[test]
    fn curves_have_one_point_per_iteration() {
        let ds = gen_synthetic(&SyntheticConfig::new(&[4, 4, 4], 2, 6, 20.0, 1)).unwrap();
        let r = evaluate(&ds, &RunConfig::new(2, 5, InitMethod::Svd, 0)).unwrap();
        assert_eq!(r.anse.len(), 6);
        assert_eq!(r.final_nse.len(), 6);
        assert!(r.failed.is_empty());
        assert!(r.params.is_empty());
        assert_eq!(r.nse_cdf().last().unwrap().1, 1.0);
    }

    #[test]
    fn noise_free_channels_recover_parameters() {
        let mut cfg = ChannelConfig::new(8, 16, 4, 2, 4, &[20.0], 5);
        cfg.noise_free = true;
        let ds = gen_channel(&cfg).unwrap();
        let mut run = RunConfig::new(2, 2000, InitMethod::Svd, 0);
        run.dist.complex = true;
        let r = evaluate(&ds, &run).unwrap();
        assert!(*r.anse.last().unwrap() < 1e-9, "{:?}", r.final_nse);
        let e = &r.params[0].errors;
        assert!(e.aoa < 1e-8 && e.aod < 1e-8 && e.delay < 1e-8 && e.gain < 1e-8, "{e:?}");
    }

    #[test]
    fn bench_reports_first_crossing() {
        let ds = gen_synthetic(&SyntheticConfig::new(&[4, 4, 4], 2, 4, 30.0, 2)).unwrap();
        let rows = bench(&ds, 2, &[10.0, 1e-30], 5, &[InitMethod::Svd], 0, None).unwrap();
        assert_eq!(rows[0].iterations, Some(0));
        assert_eq!(rows[1].iterations, None);
        assert!(bench(&ds, 2, &[0.1], 5, &[InitMethod::Learned], 0, None).is_err());
    }
}
