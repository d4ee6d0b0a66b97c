//! On-disk datasets: `meta.json` plus a flat little-endian `data.bin`.
//!
//! Per sample, `data.bin` holds `[snr_db, noise_var]`, the noisy tensor,
//! the clean tensor (if `has_clean`) and a parameter block (if
//! `has_params`). Complex values are interleaved `re, im`, tensors are
//! column-major.
//!
//! Parameter blocks:
//! * channel: `block_start`, then per path `aoa, aod, delay_ns, gain_re, gain_im`;
//! * synthetic: `2R` weight values, then every factor in mode order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, Block, ChannelConstants, ChannelParams, PilotConfig};
use crate::cp::CpFactors;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{ComplexDenseTensor, ComplexMatrix};

pub const DATASET_FORMAT_VERSION: u32 = 1;

pub const SNR_DEFINITION: &str =
    "per-sample noise variance = ||clean||_F^2 / (numel * 10^(snr_db/10)); channel noise is CN(0, var) added before the combiner";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synthetic,
    Channel,
}

/// Settings of the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub dims: Vec<usize>,
    pub rank: usize,
    pub count: usize,
    pub snr_db: f64,
    /// Factor entries are `U(low, high)` real.
    pub low: f64,
    pub high: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(dims: &[usize], rank: usize, count: usize, snr_db: f64, seed: u64) -> Self {
        Self {
            dims: dims.to_vec(),
            rank,
            count,
            snr_db,
            low: 0.0,
            high: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::invalid(format!("invalid dims {:?}", self.dims)));
        }
        if self.rank == 0 {
            return Err(Error::invalid("rank must be at least 1"));
        }
        if self.count == 0 {
            return Err(Error::invalid("count must be at least 1"));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::invalid("SNR must be finite"));
        }
        if !(self.low < self.high) || !self.low.is_finite() || !self.high.is_finite() {
            return Err(Error::invalid(format!("invalid range U({}, {})", self.low, self.high)));
        }
        Ok(())
    }
}

/// Settings of the channel generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// MS antennas `I_1`.
    pub ms: usize,
    /// BS antennas `I_2`.
    pub bs: usize,
    /// Pilot block length `M`.
    pub block: usize,
    pub paths: usize,
    pub count: usize,
    pub snr_set: Vec<f64>,
    pub noise_free: bool,
    pub constants: ChannelConstants,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(ms: usize, bs: usize, block: usize, paths: usize, count: usize, snr_set: &[f64], seed: u64) -> Self {
        Self {
            ms,
            bs,
            block,
            paths,
            count,
            snr_set: snr_set.to_vec(),
            noise_free: false,
            constants: ChannelConstants::default(),
            seed,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.ms, self.bs, self.block]
    }

    /// Largest 1-based block start.
    pub fn max_start(&self) -> usize {
        self.constants.total_subcarriers + 1 - self.block
    }

    fn validate(&self) -> Result<()> {
        if self.ms == 0 || self.bs == 0 || self.block == 0 || self.paths == 0 {
            return Err(Error::invalid("antenna counts, block length and paths must be positive"));
        }
        if self.block > self.constants.total_subcarriers {
            return Err(Error::invalid(format!(
                "block of {} does not fit in {} subcarriers",
                self.block, self.constants.total_subcarriers
            )));
        }
        if self.count == 0 {
            return Err(Error::invalid("count must be at least 1"));
        }
        if self.snr_set.is_empty() || self.snr_set.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("SNR set must be a nonempty list of finite values"));
        }
        if !(self.constants.fs_hz > 0.0) || !(self.constants.max_delay_ns > 0.0) {
            return Err(Error::invalid("sampling rate and delay spread must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum GeneratorConfig {
    Synthetic(SyntheticConfig),
    Channel(ChannelConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub kind: DatasetKind,
    pub dims: Vec<usize>,
    pub rank: usize,
    pub count: usize,
    pub snr_set: Vec<f64>,
    pub seed: u64,
    pub complex: bool,
    pub has_clean: bool,
    pub has_params: bool,
    pub snr_definition: String,
    /// Mode order used by the solver and the network, e.g. `[1, 0, 2]` for
    /// channels, whose BS mode comes first.
    pub solver_order: Vec<usize>,
    pub generator: Option<GeneratorConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SampleParams {
    Channel { block_start: usize, params: ChannelParams },
    Synthetic(CpFactors),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub snr_db: f64,
    pub noise_var: f64,
    pub noisy: ComplexDenseTensor,
    pub clean: Option<ComplexDenseTensor>,
    pub params: Option<SampleParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
}

fn push_complex(out: &mut Vec<f64>, v: &[Complex64]) {
    for c in v {
        out.push(c.re);
        out.push(c.im);
    }
}

struct Reader<'a> {
    buf: &'a [f64],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[f64]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.path, "file is truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn complex(&mut self, n: usize) -> Result<Vec<Complex64>> {
        Ok(self.take(2 * n)?.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn numel(&self) -> usize {
        self.meta.dims.iter().product()
    }

    fn validate(&self) -> Result<()> {
        if self.samples.len() != self.meta.count {
            return Err(Error::invalid("sample count differs from metadata"));
        }
        for s in &self.samples {
            if s.noisy.dims() != self.meta.dims.as_slice() {
                return Err(Error::dims("sample shape differs from metadata"));
            }
            if s.clean.is_some() != self.meta.has_clean || s.params.is_some() != self.meta.has_params {
                return Err(Error::invalid("sample contents differ from metadata flags"));
            }
        }
        Ok(())
    }

    fn encode_sample(&self, s: &Sample, out: &mut Vec<f64>) -> Result<()> {
        out.push(s.snr_db);
        out.push(s.noise_var);
        push_complex(out, s.noisy.data());
        if let Some(c) = &s.clean {
            push_complex(out, c.data());
        }
        match &s.params {
            None => {}
            Some(SampleParams::Channel { block_start, params }) => {
                if params.paths() != self.meta.rank {
                    return Err(Error::invalid("parameter block has the wrong number of paths"));
                }
                out.push(*block_start as f64);
                for r in 0..params.paths() {
                    out.extend([
                        params.aoa[r],
                        params.aod[r],
                        params.delay_ns[r],
                        params.gain[r].re,
                        params.gain[r].im,
                    ]);
                }
            }
            Some(SampleParams::Synthetic(cp)) => {
                if cp.rank() != self.meta.rank || cp.dims() != self.meta.dims {
                    return Err(Error::invalid("factor block does not match metadata"));
                }
                push_complex(out, &cp.weights);
                for f in &cp.factors {
                    push_complex(out, f.data());
                }
            }
        }
        Ok(())
    }

    /// Writes `meta.json` and `data.bin` into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        let mut values = Vec::new();
        for s in &self.samples {
            self.encode_sample(s, &mut values)?;
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta_path = dir.join("meta.json");
        let json = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::format(&meta_path, e.to_string()))?;
        fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))?;
        let data_path = dir.join("data.bin");
        let file = fs::File::create(&data_path).map_err(|e| Error::io(&data_path, e))?;
        let mut w = BufWriter::new(file);
        for v in values {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&data_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&data_path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::format(&meta_path, e.to_string()))?;
        if meta.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::format(
                &meta_path,
                format!("unsupported format version {}", meta.format_version),
            ));
        }
        let data_path = dir.join("data.bin");
        let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::format(&data_path, "length is not a multiple of 8 bytes"));
        }
        let buf: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let mut rd = Reader {
            buf: &buf,
            pos: 0,
            path: &data_path,
        };
        let numel: usize = meta.dims.iter().product();
        let mut samples = Vec::with_capacity(meta.count);
        for _ in 0..meta.count {
            let head = rd.take(2)?;
            let (snr_db, noise_var) = (head[0], head[1]);
            let noisy = ComplexDenseTensor::new(meta.dims.clone(), rd.complex(numel)?)?;
            let clean = if meta.has_clean {
                Some(ComplexDenseTensor::new(meta.dims.clone(), rd.complex(numel)?)?)
            } else {
                None
            };
            let params = if !meta.has_params {
                None
            } else {
                Some(match meta.kind {
                    DatasetKind::Channel => {
                        let constants = match &meta.generator {
                            Some(GeneratorConfig::Channel(c)) => c.constants,
                            _ => ChannelConstants::default(),
                        };
                        let block_start = rd.take(1)?[0] as usize;
                        let vals = rd.take(5 * meta.rank)?;
                        let col = |k: usize| vals.chunks_exact(5).map(|p| p[k]).collect::<Vec<f64>>();
                        SampleParams::Channel {
                            block_start,
                            params: ChannelParams {
                                aoa: col(0),
                                aod: col(1),
                                delay_ns: col(2),
                                gain: vals.chunks_exact(5).map(|p| Complex64::new(p[3], p[4])).collect(),
                                constants,
                            },
                        }
                    }
                    DatasetKind::Synthetic => {
                        let weights = rd.complex(meta.rank)?;
                        let factors = meta
                            .dims
                            .iter()
                            .map(|&d| ComplexMatrix::new(d, meta.rank, rd.complex(d * meta.rank)?))
                            .collect::<Result<Vec<_>>>()?;
                        SampleParams::Synthetic(CpFactors::new(weights, factors)?)
                    }
                })
            };
            samples.push(Sample {
                snr_db,
                noise_var,
                noisy,
                clean,
                params,
            });
        }
        if rd.pos != buf.len() {
            return Err(Error::format(&data_path, "trailing data after the last sample"));
        }
        Ok(Self { meta, samples })
    }

    /// Noisy tensors reordered into the solver's mode order.
    pub fn solver_inputs(&self) -> Result<Vec<ComplexDenseTensor>> {
        self.samples.iter().map(|s| self.to_solver(&s.noisy)).collect()
    }

    /// Clean tensors in the solver's mode order.
    pub fn solver_truths(&self) -> Result<Vec<ComplexDenseTensor>> {
        self.samples
            .iter()
            .map(|s| {
                let c = s
                    .clean
                    .as_ref()
                    .ok_or_else(|| Error::invalid("dataset has no clean tensors"))?;
                self.to_solver(c)
            })
            .collect()
    }

    pub fn to_solver(&self, t: &ComplexDenseTensor) -> Result<ComplexDenseTensor> {
        if self.is_identity_order() {
            Ok(t.clone())
        } else {
            t.permute(&self.meta.solver_order)
        }
    }

    /// Maps factors from the solver order back to the stored mode order.
    pub fn from_solver(&self, f: &CpFactors) -> Result<CpFactors> {
        if self.is_identity_order() {
            return Ok(f.clone());
        }
        let mut inverse = vec![0; self.meta.solver_order.len()];
        for (k, &m) in self.meta.solver_order.iter().enumerate() {
            inverse[m] = k;
        }
        f.permute_modes(&inverse)
    }

    /// Solver-order dims.
    pub fn solver_dims(&self) -> Vec<usize> {
        self.meta.solver_order.iter().map(|&m| self.meta.dims[m]).collect()
    }

    fn is_identity_order(&self) -> bool {
        self.meta.solver_order.iter().enumerate().all(|(k, &m)| k == m)
    }

    /// Number of stored `f64` values, for size checks.
    pub fn value_count(&self) -> usize {
        let per_tensor = 2 * self.numel();
        self.samples.len() * (2 + per_tensor * (1 + self.meta.has_clean as usize))
    }
}

/// Writes factors as little-endian `f64`: `order, rank, dims…`, then the
/// interleaved weights and every factor column-major.
pub fn write_factors(path: &Path, f: &CpFactors) -> Result<()> {
    let mut v = vec![f.order() as f64, f.rank() as f64];
    v.extend(f.dims().iter().map(|&d| d as f64));
    push_complex(&mut v, &f.weights);
    for m in &f.factors {
        push_complex(&mut v, m.data());
    }
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_factors(path: &Path) -> Result<CpFactors> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::format(path, "length is not a multiple of 8 bytes"));
    }
    let buf: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    let mut rd = Reader { buf: &buf, pos: 0, path };
    let as_count = |x: f64| -> Result<usize> {
        if x >= 1.0 && x.fract() == 0.0 && x < 1e9 {
            Ok(x as usize)
        } else {
            Err(Error::format(path, format!("invalid header value {x}")))
        }
    };
    let head = rd.take(2)?;
    let (order, rank) = (as_count(head[0])?, as_count(head[1])?);
    let dims = rd.take(order)?.iter().map(|&x| as_count(x)).collect::<Result<Vec<_>>>()?;
    let weights = rd.complex(rank)?;
    let factors = dims
        .iter()
        .map(|&d| ComplexMatrix::new(d, rank, rd.complex(d * rank)?))
        .collect::<Result<Vec<_>>>()?;
    if rd.pos != buf.len() {
        return Err(Error::format(path, "trailing data after the factors"));
    }
    CpFactors::new(weights, factors)
}

fn gen_synthetic_sample(cfg: &SyntheticConfig, index: u64) -> Result<Sample> {
    let mut r = rng::stream(cfg.seed, index);
    let factors: Vec<ComplexMatrix> = cfg
        .dims
        .iter()
        .map(|&d| ComplexMatrix::from_fn(d, cfg.rank, |_, _| Complex64::new(r.random_range(cfg.low..cfg.high), 0.0)))
        .collect();
    let cp = CpFactors::unweighted(factors)?;
    let clean = cp.reconstruct()?;
    let noise_var = clean.frob_norm_sq() / (clean.len() as f64 * 10f64.powf(cfg.snr_db / 10.0));
    let sd = noise_var.sqrt();
    let noise = ComplexDenseTensor::from_fn(&cfg.dims, |_| Complex64::new(sd * rng::normal(&mut r), 0.0))?;
    Ok(Sample {
        snr_db: cfg.snr_db,
        noise_var,
        noisy: clean.add(&noise)?,
        clean: Some(clean),
        params: Some(SampleParams::Synthetic(cp)),
    })
}

/// Noisy real low-rank tensors with `U(low, high)` factors and real
/// Gaussian noise at the configured SNR.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let samples = (0..cfg.count as u64)
        .into_par_iter()
        .map(|i| gen_synthetic_sample(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        meta: DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            kind: DatasetKind::Synthetic,
            dims: cfg.dims.clone(),
            rank: cfg.rank,
            count: cfg.count,
            snr_set: vec![cfg.snr_db],
            seed: cfg.seed,
            complex: false,
            has_clean: true,
            has_params: true,
            snr_definition: SNR_DEFINITION.into(),
            solver_order: (0..cfg.dims.len()).collect(),
            generator: Some(GeneratorConfig::Synthetic(cfg.clone())),
        },
        samples,
    })
}

fn gen_channel_sample(cfg: &ChannelConfig, pilots: &PilotConfig, index: u64) -> Result<Sample> {
    let mut r = rng::stream(cfg.seed, index);
    let params = channel::gen_params(cfg.paths, &cfg.constants, &mut r);
    let start = r.random_range(1..=cfg.max_start());
    let snr_db = cfg.snr_set[r.random_range(0..cfg.snr_set.len())];
    let (h, _) = channel::build_block_channel(&params, cfg.ms, cfg.bs, Block { start, len: cfg.block })?;
    let noise_var = if cfg.noise_free {
        0.0
    } else {
        channel::noise_variance(&h, snr_db)?
    };
    let y = channel::received_signal(&h, pilots, noise_var, &mut r)?;
    Ok(Sample {
        snr_db,
        noise_var,
        noisy: channel::coarse_estimate(&y, pilots)?,
        clean: Some(h),
        params: Some(SampleParams::Channel {
            block_start: start,
            params,
        }),
    })
}

/// Coarse estimates of random geometric channels with ground truth. SNR per
/// sample is drawn uniformly from the set.
pub fn gen_channel(cfg: &ChannelConfig) -> Result<Dataset> {
    cfg.validate()?;
    let pilots = PilotConfig::dft(cfg.ms, cfg.bs, cfg.block);
    let samples = (0..cfg.count as u64)
        .into_par_iter()
        .map(|i| gen_channel_sample(cfg, &pilots, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        meta: DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            kind: DatasetKind::Channel,
            dims: cfg.dims().to_vec(),
            rank: cfg.paths,
            count: cfg.count,
            snr_set: cfg.snr_set.clone(),
            seed: cfg.seed,
            complex: true,
            has_clean: true,
            has_params: true,
            snr_definition: SNR_DEFINITION.into(),
            solver_order: vec![1, 0, 2],
            generator: Some(GeneratorConfig::Channel(cfg.clone())),
        },
        samples,
    })
}
