//! Command-line surface. Every command writing into `--out` also writes
//! `manifest.json`, which `rerun` replays and checks byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{self, ChannelConstants};
use crate::dataset::{self, ChannelConfig, Dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::eval::{self, RunConfig};
use crate::flops;
use crate::init::InitMethod;
use crate::nn::{self, parse_stages, MlpArch, MlpModel, TrainConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "CPALS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "cpals", version, about = "CP-ALS with learned initializations and a channel-estimation testbed")]
pub struct Cli {
    /// Worker threads; defaults to $CPALS_THREADS, else all cores.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Noisy low-rank tensors with U(low, high) real factors.
    GenSynthetic(GenSyntheticArgs),
    /// Coarse estimates of random geometric mmWave channels.
    GenChannel(GenChannelArgs),
    /// Trains the initializer network through the unrolled solver.
    Train(TrainArgs),
    /// Decomposes one sample of a dataset.
    Decompose(DecomposeArgs),
    /// Convergence curves, NSE CDF and channel parameter errors.
    Eval(EvalArgs),
    /// Iterations needed per initializer to reach ANSE targets.
    Bench(BenchArgs),
    /// Complex-flop accounting.
    Flops(FlopsArgs),
    /// Generating frequencies of the columns of one factor.
    Extract(ExtractArgs),
    /// Replays a manifest and compares the outputs with the recorded hashes.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenSyntheticArgs {
    #[arg(long, value_delimiter = ',', default_value = "6,6,6")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 15.0)]
    pub snr_db: f64,
    /// Factor distribution bounds `low,high`.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    pub dist: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenChannelArgs {
    #[arg(long, default_value_t = 32)]
    pub bs: usize,
    #[arg(long, default_value_t = 8)]
    pub ms: usize,
    /// Total subcarriers `M₀`.
    #[arg(long, default_value_t = 128)]
    pub subcarriers: usize,
    /// Pilot block length `M`.
    #[arg(long, default_value_t = 4)]
    pub block: usize,
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    #[arg(long)]
    pub count: usize,
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25")]
    pub snr_set: Vec<f64>,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 0.32e9)]
    pub fs: f64,
    #[arg(long)]
    pub noise_free: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub unroll_k: usize,
    /// `K:lr:epochs,...`; overrides --unroll-k, --lr and --epochs.
    #[arg(long)]
    pub stages: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 512)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DecomposeArgs {
    /// Dataset directory.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[arg(long, default_value = "svd")]
    pub init: InitMethod,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[arg(long, default_value = "svd")]
    pub init: InitMethod,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4")]
    pub anse_targets: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, value_delimiter = ',', default_value = "random,svd")]
    pub inits: Vec<InitMethod>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FlopsArgs {
    #[arg(long, value_delimiter = ',', default_value = "32,8,4")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    #[arg(long, default_value_t = 1)]
    pub iters: usize,
    #[arg(long, default_value = "svd")]
    pub init: InitMethod,
    /// Network `hidden,layers` for the learned initializer.
    #[arg(long, value_delimiter = ',', default_value = "512,4")]
    pub arch: Vec<usize>,
    /// Real-valued network.
    #[arg(long)]
    pub real: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExtractArgs {
    /// Factor file written by `decompose`.
    #[arg(long)]
    pub factors: PathBuf,
    #[arg(long)]
    pub mode: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub csv_schema_version: u32,
    pub tool_version: String,
    pub command: Command,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<OutputFile>,
    pub threads: usize,
    pub wall_clock_seconds: f64,
}

impl Command {
    fn out_dir(&self) -> Option<&Path> {
        match self {
            Command::GenSynthetic(a) => Some(&a.out),
            Command::GenChannel(a) => Some(&a.out),
            Command::Train(a) => Some(&a.out),
            Command::Decompose(a) => Some(&a.out),
            Command::Eval(a) => Some(&a.out),
            Command::Bench(a) => Some(&a.out),
            Command::Flops(a) => a.out.as_deref(),
            Command::Extract(a) => a.out.as_deref(),
            Command::Rerun(_) => None,
        }
    }

    fn set_out_dir(&mut self, dir: PathBuf) {
        match self {
            Command::GenSynthetic(a) => a.out = dir,
            Command::GenChannel(a) => a.out = dir,
            Command::Train(a) => a.out = dir,
            Command::Decompose(a) => a.out = dir,
            Command::Eval(a) => a.out = dir,
            Command::Bench(a) => a.out = dir,
            Command::Flops(a) => a.out = Some(dir),
            Command::Extract(a) => a.out = Some(dir),
            Command::Rerun(_) => {}
        }
    }

    fn seeds(&self) -> Vec<u64> {
        match self {
            Command::GenSynthetic(a) => vec![a.seed],
            Command::GenChannel(a) => vec![a.seed],
            Command::Train(a) => vec![a.seed],
            Command::Decompose(a) => vec![a.seed],
            Command::Eval(a) => vec![a.seed],
            Command::Bench(a) => vec![a.seed],
            _ => Vec::new(),
        }
    }

    fn inputs(&self) -> Vec<String> {
        let show = |p: &Path| p.display().to_string();
        match self {
            Command::Train(a) => vec![show(&a.data)],
            Command::Decompose(a) => [Some(&a.input), a.model.as_ref()].into_iter().flatten().map(|p| show(p)).collect(),
            Command::Eval(a) => [Some(&a.data), a.model.as_ref()].into_iter().flatten().map(|p| show(p)).collect(),
            Command::Bench(a) => [Some(&a.data), a.model.as_ref()].into_iter().flatten().map(|p| show(p)).collect(),
            Command::Extract(a) => vec![show(&a.factors)],
            _ => Vec::new(),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hashes of every file in `dir` except the manifest, sorted by name.
pub fn hash_outputs(dir: &Path) -> Result<Vec<OutputFile>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != MANIFEST_FILE)
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let p = dir.join(&name);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            Ok(OutputFile {
                path: name,
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            })
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_model(path: Option<&PathBuf>, method: InitMethod) -> Result<Option<MlpModel>> {
    match (path, method) {
        (Some(p), _) => MlpModel::load(p).map(Some),
        (None, InitMethod::Learned) => Err(Error::invalid("--model is required for --init dl")),
        (None, _) => Ok(None),
    }
}

fn run_config<'m>(ds: &Dataset, rank: Option<usize>, iters: usize, init: InitMethod, seed: u64, model: Option<&'m MlpModel>) -> RunConfig<'m> {
    let mut cfg = RunConfig::new(rank.unwrap_or(ds.meta.rank), iters, init, seed);
    cfg.dist.complex = ds.meta.complex;
    cfg.model = model;
    cfg
}

fn gen_synthetic(a: &GenSyntheticArgs) -> Result<()> {
    let &[low, high] = a.dist.as_slice() else {
        return Err(Error::invalid("--dist takes `low,high`"));
    };
    let mut cfg = SyntheticConfig::new(&a.dims, a.rank, a.count, a.snr_db, a.seed);
    cfg.low = low;
    cfg.high = high;
    dataset::gen_synthetic(&cfg)?.write(&a.out)
}

fn gen_channel(a: &GenChannelArgs) -> Result<()> {
    let mut cfg = ChannelConfig::new(a.ms, a.bs, a.block, a.rank, a.count, &a.snr_set, a.seed);
    cfg.noise_free = a.noise_free;
    cfg.constants = ChannelConstants {
        fs_hz: a.fs,
        total_subcarriers: a.subcarriers,
        ..ChannelConstants::default()
    };
    dataset::gen_channel(&cfg)?.write(&a.out)
}

fn train(a: &TrainArgs) -> Result<()> {
    let ds = Dataset::read(&a.data)?;
    let rank = a.rank.unwrap_or(ds.meta.rank);
    let arch = MlpArch::new(&ds.solver_dims(), rank, a.hidden, a.layers, ds.meta.complex).with_dropout(a.dropout);
    let model = MlpModel::new(arch, a.seed)?;
    let mut cfg = TrainConfig::new(rank);
    cfg.unroll_k = a.unroll_k;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    cfg.lr = a.lr;
    cfg.dropout = a.dropout;
    cfg.seed = a.seed;
    if let Some(s) = &a.stages {
        cfg.stages = parse_stages(s)?;
    }
    let out = nn::train(model, &ds.solver_inputs()?, &cfg)?;
    create_out(&a.out)?;
    out.model.save(&a.out)?;
    write_rows(
        &a.out.join("loss.csv"),
        &["epoch", "mean_loss"],
        out.history.iter().map(|r| vec![r.epoch.to_string(), r.mean_loss.to_string()]),
    )
}

fn decompose(a: &DecomposeArgs) -> Result<()> {
    let ds = Dataset::read(&a.input)?;
    if a.index >= ds.len() {
        return Err(Error::invalid(format!("index {} outside a dataset of {}", a.index, ds.len())));
    }
    let model = load_model(a.model.as_ref(), a.init)?;
    let cfg = run_config(&ds, a.rank, a.iters, a.init, a.seed, model.as_ref());
    let s = &ds.samples[a.index];
    let y = ds.to_solver(&s.noisy)?;
    let truth = s.clean.as_ref().map(|c| ds.to_solver(c)).transpose()?;
    let (est, trace) = eval::decompose(&y, &cfg, a.index, truth.as_ref())?;
    create_out(&a.out)?;
    dataset::write_factors(&a.out.join("factors.bin"), &ds.from_solver(&est)?)?;
    let (header, rows): (Vec<&str>, Vec<Vec<String>>) = match &trace.nse {
        Some(nse) => (
            vec!["iter", "objective", "nse"],
            trace
                .objective
                .iter()
                .zip(nse)
                .enumerate()
                .map(|(k, (o, n))| vec![k.to_string(), o.to_string(), n.to_string()])
                .collect(),
        ),
        None => (
            vec!["iter", "objective"],
            trace.objective.iter().enumerate().map(|(k, o)| vec![k.to_string(), o.to_string()]).collect(),
        ),
    };
    write_rows(&a.out.join("trace.csv"), &header, rows)
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let ds = Dataset::read(&a.data)?;
    let model = load_model(a.model.as_ref(), a.init)?;
    let cfg = run_config(&ds, a.rank, a.iters, a.init, a.seed, model.as_ref());
    let r = eval::evaluate(&ds, &cfg)?;
    create_out(&a.out)?;
    write_rows(
        &a.out.join("curve.csv"),
        &["iter", "mean_objective", "anse"],
        r.mean_objective
            .iter()
            .zip(&r.anse)
            .enumerate()
            .map(|(k, (o, e))| vec![k.to_string(), o.to_string(), e.to_string()]),
    )?;
    write_rows(
        &a.out.join("nse_cdf.csv"),
        &["nse", "cdf"],
        r.nse_cdf().into_iter().map(|(x, p)| vec![x.to_string(), p.to_string()]),
    )?;
    if !r.params.is_empty() {
        write_rows(
            &a.out.join("params.csv"),
            &["snr_db", "samples", "aoa_anse", "aod_anse", "delay_anse", "gain_anse"],
            r.params.iter().map(|p| {
                vec![
                    p.snr_db.to_string(),
                    p.samples.to_string(),
                    p.errors.aoa.to_string(),
                    p.errors.aod.to_string(),
                    p.errors.delay.to_string(),
                    p.errors.gain.to_string(),
                ]
            }),
        )?;
    }
    if !r.failed.is_empty() {
        log::warn!("{} samples failed numerically", r.failed.len());
    }
    Ok(())
}

fn bench_cmd(a: &BenchArgs) -> Result<()> {
    let ds = Dataset::read(&a.data)?;
    let needs_model = a.inits.contains(&InitMethod::Learned);
    let model = match (&a.model, needs_model) {
        (Some(p), _) => Some(MlpModel::load(p)?),
        (None, true) => return Err(Error::invalid("--model is required when --inits contains dl")),
        (None, false) => None,
    };
    let rows = eval::bench(
        &ds,
        a.rank.unwrap_or(ds.meta.rank),
        &a.anse_targets,
        a.max_iters,
        &a.inits,
        a.seed,
        model.as_ref(),
    )?;
    create_out(&a.out)?;
    write_rows(
        &a.out.join("bench.csv"),
        &["init", "anse_target", "iters_or_fail"],
        rows.iter().map(|r| {
            vec![
                r.method.to_string(),
                r.target.to_string(),
                r.iterations.map_or_else(|| "fail".to_string(), |k| k.to_string()),
            ]
        }),
    )
}

fn flops_cmd(a: &FlopsArgs) -> Result<()> {
    let arch = match (a.init, a.arch.as_slice()) {
        (InitMethod::Learned, &[hidden, layers]) => Some(MlpArch::new(&a.dims, a.rank, hidden, layers, !a.real)),
        (InitMethod::Learned, _) => return Err(Error::invalid("--arch takes `hidden,layers`")),
        _ => None,
    };
    let report = flops::cost_profile(&a.dims, a.rank, a.iters, a.init, arch.as_ref())?;
    println!("{report}");
    if let Some(dir) = &a.out {
        create_out(dir)?;
        let p = dir.join("flops.json");
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::format(&p, e.to_string()))?;
        fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn extract_cmd(a: &ExtractArgs) -> Result<()> {
    let f = dataset::read_factors(&a.factors)?;
    let m = f
        .factors
        .get(a.mode)
        .ok_or(Error::ModeOutOfRange {
            mode: a.mode,
            order: f.order(),
        })?;
    let z = (0..m.cols())
        .map(|c| channel::extract_generating_vector(m.col(c)))
        .collect::<Result<Vec<_>>>()?;
    let rows = z.iter().enumerate().map(|(c, z)| vec![c.to_string(), z.to_string()]);
    match &a.out {
        Some(dir) => {
            create_out(dir)?;
            write_rows(&dir.join("generators.csv"), &["column", "z"], rows)
        }
        None => {
            println!("column,z");
            for r in rows {
                println!("{}", r.join(","));
            }
            Ok(())
        }
    }
}

fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::GenChannel(a) => gen_channel(a),
        Command::Train(a) => train(a),
        Command::Decompose(a) => decompose(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Flops(a) => flops_cmd(a),
        Command::Extract(a) => extract_cmd(a),
        Command::Rerun(a) => rerun(a).map(|_| ()),
    }
}

/// Runs a command and, when it has an output directory, writes its manifest.
pub fn run_command(cmd: &Command) -> Result<Option<RunManifest>> {
    let start = Instant::now();
    execute(cmd)?;
    let Some(dir) = cmd.out_dir() else {
        return Ok(None);
    };
    if matches!(cmd, Command::Rerun(_)) {
        return Ok(None);
    }
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        csv_schema_version: CSV_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: cmd.clone(),
        seeds: cmd.seeds(),
        inputs: cmd.inputs(),
        outputs: hash_outputs(dir)?,
        threads: rayon::current_num_threads(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    let p = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(&p, e.to_string()))?;
    fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(Some(manifest))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if m.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::format(path, format!("unsupported manifest schema {}", m.schema_version)));
    }
    Ok(m)
}

/// Replays the recorded command and checks every output hash.
pub fn rerun(a: &RerunArgs) -> Result<RunManifest> {
    let recorded = read_manifest(&a.manifest)?;
    let mut cmd = recorded.command.clone();
    if let Some(dir) = &a.out {
        cmd.set_out_dir(dir.clone());
    }
    let fresh = run_command(&cmd)?.ok_or_else(|| Error::invalid("manifest command has no output directory"))?;
    if fresh.outputs != recorded.outputs {
        let differing: Vec<&str> = recorded
            .outputs
            .iter()
            .filter(|o| !fresh.outputs.contains(o))
            .map(|o| o.path.as_str())
            .collect();
        return Err(Error::Irreproducible(format!(
            "outputs differ: {differing:?} (recorded {} files, produced {})",
            recorded.outputs.len(),
            fresh.outputs.len()
        )));
    }
    Ok(fresh)
}

/// Configures the global thread pool.
pub fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}
