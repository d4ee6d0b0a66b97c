use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{DiffGraph, RealMatrix, Value, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{ComplexDenseTensor, ComplexMatrix};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Fully connected layer `y = W x + b`, `W` stored row-major (`out × inp`).
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inp: usize,
    pub out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Self {
            inp,
            out,
            w: vec![0.0; inp * out],
            b: vec![0.0; out],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inp, self.out)
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .chunks_exact(self.inp)
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

/// Shape of the initializer network and of the tensors it serves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub dims: Vec<usize>,
    pub rank: usize,
    /// Neurons per hidden layer (Q).
    pub hidden: usize,
    /// Number of hidden layers (D).
    pub layers: usize,
    pub dropout: f64,
    pub complex: bool,
    #[serde(default = "default_version")]
    pub format_version: u32,
}

fn default_version() -> u32 {
    MODEL_FORMAT_VERSION
}

impl MlpArch {
    pub fn new(dims: &[usize], rank: usize, hidden: usize, layers: usize, complex: bool) -> Self {
        Self {
            dims: dims.to_vec(),
            rank,
            hidden,
            layers,
            dropout: 0.0,
            complex,
            format_version: MODEL_FORMAT_VERSION,
        }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    fn width(&self) -> usize {
        if self.complex {
            2
        } else {
            1
        }
    }

    pub fn input_dim(&self) -> usize {
        self.width() * self.dims.iter().product::<usize>()
    }

    pub fn output_dim(&self) -> usize {
        self.width() * self.rank * self.dims.iter().skip(1).sum::<usize>()
    }

    /// `(inp, out)` of every layer, input layer first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.input_dim(), self.hidden)];
        shapes.extend((1..self.layers).map(|_| (self.hidden, self.hidden)));
        shapes.push((self.hidden, self.output_dim()));
        shapes
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::invalid(format!("bad tensor dims {:?}", self.dims)));
        }
        if self.rank == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::invalid("rank, hidden width and depth must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Closed-form number of trainable parameters.
///
/// Complex: `2QΠI + (D−1)Q² + 2QRΣI' + DQ + 2RΣI'` with `I'` the dims after
/// the first; the real case drops the factors of two.
pub fn param_count(arch: &MlpArch) -> usize {
    let w = arch.width();
    let (q, d, r) = (arch.hidden, arch.layers, arch.rank);
    let prod: usize = arch.dims.iter().product();
    let tail: usize = arch.dims.iter().skip(1).sum();
    w * q * prod + (d - 1) * q * q + w * q * r * tail + d * q + w * r * tail
}

/// Concatenated real then imaginary parts of the column-major tensor
/// (real parts only for `complex = false`).
pub fn pack_input(y: &ComplexDenseTensor, complex: bool) -> Vec<f64> {
    let mut v: Vec<f64> = y.data().iter().map(|z| z.re).collect();
    if complex {
        v.extend(y.data().iter().map(|z| z.im));
    }
    v
}

/// Inverse of [`pack_input`].
pub fn unpack_input(v: &[f64], dims: &[usize], complex: bool) -> Result<ComplexDenseTensor> {
    let n: usize = dims.iter().product();
    let need = if complex { 2 * n } else { n };
    if v.len() != need {
        return Err(Error::dims(format!("expected {need} values, got {}", v.len())));
    }
    let data = (0..n)
        .map(|k| Complex64::new(v[k], if complex { v[n + k] } else { 0.0 }))
        .collect();
    ComplexDenseTensor::new(dims.to_vec(), data)
}

/// Splits a network output into factors for modes 1..N: per mode, `I_n·R`
/// real parts then (complex case) `I_n·R` imaginary parts, column-major.
pub fn unpack_output(v: &[f64], dims: &[usize], rank: usize, complex: bool) -> Result<Vec<ComplexMatrix>> {
    let width = if complex { 2 } else { 1 };
    let need = width * rank * dims.iter().skip(1).sum::<usize>();
    if v.len() != need {
        return Err(Error::dims(format!("network output has {} values, layout needs {need}", v.len())));
    }
    let mut offset = 0;
    dims.iter()
        .skip(1)
        .map(|&rows| {
            let n = rows * rank;
            let data = (0..n)
                .map(|k| Complex64::new(v[offset + k], if complex { v[offset + n + k] } else { 0.0 }))
                .collect();
            offset += width * n;
            ComplexMatrix::new(rows, rank, data)
        })
        .collect()
}

/// Inverse of [`unpack_output`].
pub fn pack_output(factors: &[ComplexMatrix], complex: bool) -> Vec<f64> {
    let mut v = Vec::new();
    for f in factors {
        v.extend(f.data().iter().map(|z| z.re));
        if complex {
            v.extend(f.data().iter().map(|z| z.im));
        }
    }
    v
}

/// The initializer network.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    arch: MlpArch,
    layers: Vec<Layer>,
}

impl MlpModel {
    /// Uniform `±sqrt(6/(fan_in+fan_out))` weights, zero biases.
    pub fn new(arch: MlpArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut r = rng::stream(seed, 0);
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(inp, out)| {
                let bound = (6.0 / (inp + out) as f64).sqrt();
                let mut l = Layer::zeros(inp, out);
                for w in &mut l.w {
                    *w = r.random_range(-bound..bound);
                }
                l
            })
            .collect();
        Ok(Self { arch, layers })
    }

    pub fn zeroed(arch: MlpArch) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layer_shapes().into_iter().map(|(i, o)| Layer::zeros(i, o)).collect();
        Ok(Self { arch, layers })
    }

    pub fn from_layers(arch: MlpArch, layers: Vec<Layer>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if shapes.len() != layers.len()
            || shapes
                .iter()
                .zip(&layers)
                .any(|(&(i, o), l)| l.inp != i || l.out != o || l.w.len() != i * o || l.b.len() != o)
        {
            return Err(Error::dims("layer shapes do not match the architecture"));
        }
        Ok(Self { arch, layers })
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout {p} outside [0, 1)")));
        }
        self.arch.dropout = p;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Deterministic forward pass: no dropout mask, no scaling.
    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::dims(format!(
                "network expects {} inputs, got {}",
                self.arch.input_dim(),
                x.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (k, l) in self.layers.iter().enumerate() {
            h = l.apply(&h);
            if k == last {
                h.iter_mut().for_each(|v| *v = v.tanh());
            } else {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }

    /// Records the forward pass on `g`. With `train` and a positive dropout
    /// rate, each hidden activation is zeroed with probability `p` and
    /// survivors are scaled by `1/(1−p)`.
    pub fn forward_on<R: Rng + ?Sized>(&self, g: &mut DiffGraph<'_>, x: Var, train: bool, rng: &mut R) -> Result<Var> {
        let p = self.arch.dropout;
        let last = self.layers.len() - 1;
        let mut h = x;
        for k in 0..self.layers.len() {
            h = g.affine(k, h)?;
            if k == last {
                h = g.tanh(h);
            } else {
                h = g.relu(h);
                if train && p > 0.0 {
                    let keep = 1.0 / (1.0 - p);
                    let mask = (0..self.arch.hidden)
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                        .collect();
                    h = g.mask(h, mask)?;
                }
            }
        }
        Ok(h)
    }

    /// Writes `model.json` and `weights.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json_path = dir.join("model.json");
        let json = serde_json::to_string_pretty(&self.arch).map_err(|e| Error::format(&json_path, e.to_string()))?;
        fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
        let bin_path = dir.join("weights.bin");
        let file = fs::File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let mut w = BufWriter::new(file);
        for l in &self.layers {
            for v in l.w.iter().chain(&l.b) {
                w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&bin_path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&bin_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let json_path = dir.join("model.json");
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let arch: MlpArch = serde_json::from_str(&text).map_err(|e| Error::format(&json_path, e.to_string()))?;
        if arch.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::format(
                &json_path,
                format!("unsupported format version {}", arch.format_version),
            ));
        }
        arch.validate()?;
        let bin_path = dir.join("weights.bin");
        let file = fs::File::open(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(&bin_path, e))?;
        let expected = param_count(&arch) * 8;
        if bytes.len() != expected {
            return Err(Error::format(
                &bin_path,
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let mut vals = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(inp, out)| Layer {
                inp,
                out,
                w: vals.by_ref().take(inp * out).collect(),
                b: vals.by_ref().take(out).collect(),
            })
            .collect();
        Self::from_layers(arch, layers)
    }
}

/// Forward pass on a fresh graph; returns the output and the graph.
pub fn mlp_forward<'m, R: Rng + ?Sized>(
    model: &'m MlpModel,
    x: &[f64],
    train: bool,
    rng: &mut R,
) -> Result<(Vec<f64>, DiffGraph<'m>, Var)> {
    if x.len() != model.arch().input_dim() {
        return Err(Error::dims(format!(
            "network expects {} inputs, got {}",
            model.arch().input_dim(),
            x.len()
        )));
    }
    let mut g = DiffGraph::with_model(model);
    let xv = g.constant(Value::Real(RealMatrix::column(x.to_vec())));
    let out = model.forward_on(&mut g, xv, train, rng)?;
    Ok((g.real(out).data.clone(), g, out))
}
