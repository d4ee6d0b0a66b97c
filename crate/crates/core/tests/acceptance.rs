//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero when a criterion fails that is not listed in `KNOWN_RED`.
//!
//! `cargo test --release --test acceptance [-- 3 7]` runs a subset.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{anyhow, ensure, Result};
use num_complex::Complex64;
use rand::Rng;

use cpals::als::{als_step, cpals_traced, objective, AlsConfig};
use cpals::channel::{
    build_block_channel, coarse_estimate, extract_generating_vector, gen_params, received_signal, Block,
    ChannelConstants, PilotConfig,
};
use cpals::cp::{uniqueness_check, vandermonde, wrap_angle, CpFactors};
use cpals::dataset::{gen_channel, gen_synthetic, ChannelConfig, SyntheticConfig};
use cpals::eval::{bench, evaluate, RunConfig};
use cpals::flops::{cost_profile, mlp_flops};
use cpals::init::InitMethod;
use cpals::nn::{analytic_grad_step0, backward_jacobian_row};
use cpals::nn::{param_count, train, unrolled_loss, DiffGraph, MlpArch, MlpModel, TrainConfig, Value, Var};
use cpals::rng;
use cpals::tensor::{ComplexDenseTensor, ComplexMatrix};

/// Criteria that fail at desk scale; they still run and print FAIL.
const KNOWN_RED: &[u32] = &[3, 8];

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Result<Check> {
    Ok(Check {
        pass,
        detail: detail.into(),
    })
}

fn rand_c(rows: usize, cols: usize, r: &mut rng::StreamRng) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| rng::complex_normal(r, 1.0))
}

fn rand_tensor(dims: &[usize], r: &mut rng::StreamRng) -> ComplexDenseTensor {
    ComplexDenseTensor::from_fn(dims, |_| rng::complex_normal(r, 1.0)).unwrap()
}

fn rel(a: &ComplexDenseTensor, b: &ComplexDenseTensor) -> f64 {
    a.sub(b).unwrap().frob_norm() / b.frob_norm().max(1e-300)
}

fn rel_m(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.sub(b).unwrap().frob_norm() / b.frob_norm().max(1e-300)
}

// ---------------------------------------------------------------- 1

fn mode_product_oracle(y: &ComplexDenseTensor, m: &ComplexMatrix, n: usize) -> ComplexDenseTensor {
    let mut dims = y.dims().to_vec();
    dims[n] = m.rows();
    ComplexDenseTensor::from_fn(&dims, |idx| {
        let mut src = idx.to_vec();
        (0..y.dims()[n])
            .map(|k| {
                src[n] = k;
                m.get(idx[n], k) * y.get(&src)
            })
            .sum()
    })
    .unwrap()
}

fn cp_oracle(f: &CpFactors) -> ComplexDenseTensor {
    ComplexDenseTensor::from_fn(&f.dims(), |idx| {
        (0..f.rank())
            .map(|r| {
                idx.iter()
                    .enumerate()
                    .fold(f.weights[r], |acc, (n, &i)| acc * f.factors[n].get(i, r))
            })
            .sum()
    })
    .unwrap()
}

fn criterion_1() -> Result<Check> {
    let mut worst = 0.0f64;
    for t in 0..200u64 {
        let mut r = rng::stream(1, t);
        let order = r.random_range(2..=4);
        let dims: Vec<usize> = (0..order).map(|_| r.random_range(1..=5)).collect();
        let y = rand_tensor(&dims, &mut r);
        let n = r.random_range(0..order);

        let back = ComplexDenseTensor::fold(&y.matricize(n)?, n, &dims)?;
        worst = worst.max(rel(&back, &y));

        let m = rand_c(r.random_range(1..=5), dims[n], &mut r);
        let prod = y.mode_n_product(&m, n)?;
        worst = worst.max(rel(&prod, &mode_product_oracle(&y, &m, n)));
        worst = worst.max(rel_m(&prod.matricize(n)?, &m.matmul(&y.matricize(n)?)?));

        let rank = r.random_range(1..=4);
        let a = rand_c(r.random_range(1..=5), rank, &mut r);
        let b = rand_c(r.random_range(1..=5), rank, &mut r);
        let kr = a.khatri_rao(&b)?;
        let oracle = ComplexMatrix::from_fn(a.rows() * b.rows(), rank, |row, c| {
            a.get(row / b.rows(), c) * b.get(row % b.rows(), c)
        });
        worst = worst.max(rel_m(&kr, &oracle));

        let factors = dims.iter().map(|&d| rand_c(d, rank, &mut r)).collect();
        let weights = (0..rank).map(|_| rng::complex_normal(&mut r, 1.0)).collect();
        let cp = CpFactors::new(weights, factors)?;
        let direct = cp.reconstruct()?;
        worst = worst.max(rel(&direct, &cp_oracle(&cp)));
        for k in 0..order {
            worst = worst.max(rel(&cp.reconstruct_via_unfolding(k)?, &direct));
        }
    }
    check(worst < 1e-12, format!("worst relative error {worst:.2e} over 200 trials (< 1e-12)"))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Result<Check> {
    let mut violations = 0;
    let mut worst_rise = f64::NEG_INFINITY;
    for t in 0..100u64 {
        let mut r = rng::stream(2, t);
        let dims: Vec<usize> = (0..3).map(|_| r.random_range(3..=6)).collect();
        let rank = r.random_range(2..=3);
        let truth = CpFactors::unweighted(dims.iter().map(|&d| rand_c(d, rank, &mut r)).collect())?;
        let clean = truth.reconstruct()?;
        let noise = rand_tensor(&dims, &mut r).scale(Complex64::new(0.1, 0.0));
        let y = clean.add(&noise)?;
        let mut f = CpFactors::unweighted(dims.iter().map(|&d| rand_c(d, rank, &mut r)).collect())?;
        let mut prev = objective(&y, &f)?;
        for _ in 0..10 {
            for n in 0..3 {
                f.factors[n] = als_step(&y, &f, n)?.factor;
                let obj = objective(&y, &f)?;
                let rise = (obj - prev) / prev.max(1e-300);
                worst_rise = worst_rise.max(rise);
                if rise > 1e-9 {
                    violations += 1;
                }
                prev = obj;
            }
        }
    }

    let mut worst_nse = 0.0f64;
    let mut instances = 0;
    for t in 0..20u64 {
        let mut r = rng::stream(20, t);
        let dims: Vec<usize> = (0..3).map(|_| r.random_range(3..=6)).collect();
        let rank = r.random_range(1..=3);
        let truth = CpFactors::unweighted(dims.iter().map(|&d| rand_c(d, rank, &mut r)).collect())?;
        if !uniqueness_check(&truth)?.unique {
            continue;
        }
        instances += 1;
        let y = truth.reconstruct()?;
        let (_, trace) = cpals_traced(&y, &truth.factors[1..], &AlsConfig::new(rank, 5), Some(&y))?;
        worst_nse = worst_nse.max(trace.nse.expect("truth given")[5]);
    }
    ensure!(instances > 0, "no instance satisfied the uniqueness condition");
    check(
        violations == 0 && worst_nse < 1e-10,
        format!(
            "{violations} descent violations (largest relative rise {worst_rise:.1e}, slack 1e-9); \
             worst NSE at K=5 from truth {worst_nse:.1e} over {instances} unique instances (< 1e-10)"
        ),
    )
}

// ---------------------------------------------------------------- 3

const Z1: [f64; 2] = [0.36, 0.18];
const Z2: [f64; 2] = [1.10, -0.70];
const Z3: [f64; 2] = [-0.58, 0.89];
const Z2_START: [f64; 2] = [-0.46, -0.85];
const LOW_NSE: f64 = 1e-6;

fn swamp_nse(y: &ComplexDenseTensor, z3: [f64; 2], iters: usize) -> f64 {
    let init = [vandermonde(&Z2_START, 4), vandermonde(&z3, 4)];
    cpals_traced(y, &init, &AlsConfig::new(2, iters), Some(y))
        .ok()
        .and_then(|(_, t)| t.nse)
        .and_then(|n| n.last().copied())
        .unwrap_or(f64::INFINITY)
}

fn criterion_3() -> Result<Check> {
    let y = CpFactors::unweighted(vec![vandermonde(&Z1, 4), vandermonde(&Z2, 4), vandermonde(&Z3, 4)])?.reconstruct()?;
    let truth = swamp_nse(&y, Z3, 10);
    let permuted = swamp_nse(&y, [Z3[1], Z3[0]], 10);

    let n = 64;
    let h = PI / n as f64;
    let centre = |k: usize| -FRAC_PI_2 + (k as f64 + 0.5) * h;
    let cell = |z: f64| ((z + FRAC_PI_2) / h) as usize;
    let grid: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| swamp_nse(&y, [centre(i), centre(j)], 50)).collect())
        .collect();

    // 4-connected components of the low-NSE cells
    let mut label = vec![vec![usize::MAX; n]; n];
    let mut count = 0;
    for i in 0..n {
        for j in 0..n {
            if label[i][j] != usize::MAX || grid[i][j] >= LOW_NSE {
                continue;
            }
            let mut stack = vec![(i, j)];
            label[i][j] = count;
            while let Some((a, b)) = stack.pop() {
                for (x, y) in [(a.wrapping_sub(1), b), (a + 1, b), (a, b.wrapping_sub(1)), (a, b + 1)] {
                    if x < n && y < n && label[x][y] == usize::MAX && grid[x][y] < LOW_NSE {
                        label[x][y] = count;
                        stack.push((x, y));
                    }
                }
            }
            count += 1;
        }
    }
    let lt = label[cell(Z3[0])][cell(Z3[1])];
    let lp = label[cell(Z3[1])][cell(Z3[0])];
    let pair = lt != usize::MAX && lp != usize::MAX && lt != lp;
    check(
        truth < 1e-8 && permuted < 1e-8 && count >= 2 && pair,
        format!(
            "NSE after 10 iterations: truth start {truth:.2e}, permuted start {permuted:.2e} (< 1e-8); \
             {count} basins below {LOW_NSE:.0e} at K=50, truth and permuted cells in distinct basins: {pair}"
        ),
    )
}

// ---------------------------------------------------------------- 4

const H: f64 = 1e-6;

fn weighted_loss(g: &mut DiffGraph, out: Var) -> Var {
    match g.value(out).clone() {
        Value::Complex(m) => {
            let w = g.constant(Value::Complex(rand_c(m.rows(), m.cols(), &mut rng::stream(99, 0))));
            let h = g.hadamard(out, w).unwrap();
            g.frob_sq(h)
        }
        Value::Real(m) => {
            let mut r = rng::stream(99, 1);
            let w = (0..m.data.len()).map(|_| rng::normal(&mut r)).collect();
            let h = g.mask(out, w).unwrap();
            g.frob_sq(h)
        }
    }
}

/// Relative error of the reverse sweep against central differences over
/// every real coordinate of every input.
fn primitive_error(inputs: &[Value], build: &dyn Fn(&mut DiffGraph, &[Var]) -> Var) -> f64 {
    let eval = |vals: &[Value]| {
        let mut g = DiffGraph::new();
        let vars: Vec<Var> = vals.iter().map(|v| g.input(v.clone())).collect();
        let out = build(&mut g, &vars);
        let l = weighted_loss(&mut g, out);
        g.scalar(l)
    };
    let mut g = DiffGraph::new();
    let vars: Vec<Var> = inputs.iter().map(|v| g.input(v.clone())).collect();
    let out = build(&mut g, &vars);
    let l = weighted_loss(&mut g, out);
    let grads = g.backward(l, 1.0).unwrap();
    let (mut diff, mut scale) = (0.0, 0.0);
    for (k, v) in vars.iter().enumerate() {
        let ana = grads.wrt(*v).cloned().unwrap_or_else(|| g.zero_grad_like(*v));
        let coords: Vec<(usize, Complex64)> = match &inputs[k] {
            Value::Real(m) => (0..m.data.len()).map(|i| (i, Complex64::new(1.0, 0.0))).collect(),
            Value::Complex(m) => (0..m.data().len())
                .flat_map(|i| [(i, Complex64::new(1.0, 0.0)), (i, Complex64::new(0.0, 1.0))])
                .collect(),
        };
        for (i, dir) in coords {
            let shift = |s: f64| {
                let mut p = inputs.to_vec();
                match &mut p[k] {
                    Value::Real(m) => m.data[i] += s,
                    Value::Complex(m) => m.data_mut()[i] += dir * s,
                }
                eval(&p)
            };
            let num = (shift(H) - shift(-H)) / (2.0 * H);
            let a = match &ana {
                Value::Real(m) => m.data[i],
                Value::Complex(m) => {
                    let z = m.data()[i];
                    if dir.re == 1.0 {
                        z.re
                    } else {
                        z.im
                    }
                }
            };
            diff += (num - a).powi(2);
            scale += num * num;
        }
    }
    diff.sqrt() / scale.sqrt().max(1e-12)
}

fn criterion_4() -> Result<Check> {
    let mut r = rng::stream(4, 0);
    let mut c = |rows, cols| Value::Complex(rand_c(rows, cols, &mut r));
    type Build = Box<dyn Fn(&mut DiffGraph, &[Var]) -> Var>;
    let cases: Vec<(&str, Vec<Value>, Build)> = vec![
        ("conj+transpose", vec![c(3, 2)], Box::new(|g, v| {
            let x = g.conj(v[0]);
            g.transpose(x)
        })),
        ("matmul", vec![c(3, 4), c(4, 2)], Box::new(|g, v| g.matmul(v[0], v[1]).unwrap())),
        ("khatri-rao", vec![c(3, 2), c(4, 2)], Box::new(|g, v| g.khatri_rao(v[0], v[1]).unwrap())),
        ("hadamard", vec![c(3, 3), c(3, 3)], Box::new(|g, v| g.hadamard(v[0], v[1]).unwrap())),
        ("sub", vec![c(2, 3), c(2, 3)], Box::new(|g, v| g.sub(v[0], v[1]).unwrap())),
        ("right solve", vec![c(6, 3), c(5, 3)], Box::new(|g, v| {
            let at = g.transpose(v[0]);
            let ac = g.conj(v[0]);
            let gram = g.matmul(at, ac).unwrap();
            g.right_solve(v[1], gram).unwrap()
        })),
        ("frob_sq", vec![c(2, 3)], Box::new(|g, v| g.frob_sq(v[0]))),
        ("real inner", vec![c(2, 3)], Box::new(|g, v| {
            g.real_inner(v[0], rand_c(2, 3, &mut rng::stream(4, 1))).unwrap()
        })),
        ("relu+tanh+mask+unpack", vec![Value::Real(cpals::nn::RealMatrix::column(
            (0..12).map(|i| (i as f64 * 0.37).sin()).collect(),
        ))], Box::new(|g, v| {
            let a = g.relu(v[0]);
            let t = g.tanh(a);
            let m = g.mask(t, (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.5 }).collect()).unwrap();
            g.unpack(m, 2, 2, 2, true).unwrap()
        })),
    ];
    let mut prim_worst = 0.0f64;
    let mut worst_name = "";
    for (name, inputs, build) in &cases {
        let e = primitive_error(inputs, build.as_ref());
        if e > prim_worst {
            prim_worst = e;
            worst_name = name;
        }
    }

    // full unrolled loss with respect to every network parameter
    let dims = [4, 4, 4];
    let y = rand_tensor(&dims, &mut rng::stream(4, 2));
    let model = MlpModel::new(MlpArch::new(&dims, 2, 8, 1, true), 5)?;
    let loss = |m: &MlpModel| unrolled_loss(m, &y, 2, 1, false, &mut rng::stream(0, 0)).map(|u| u.value());
    let ana = unrolled_loss(&model, &y, 2, 1, false, &mut rng::stream(0, 0))?.param_grads()?.flat();
    let mut num = Vec::with_capacity(ana.len());
    for l in 0..model.layers().len() {
        for (is_bias, len) in [(false, model.layers()[l].w.len()), (true, model.layers()[l].b.len())] {
            for i in 0..len {
                let shifted = |s: f64| {
                    let mut m = model.clone();
                    let layer = &mut m.layers_mut()[l];
                    if is_bias {
                        layer.b[i] += s;
                    } else {
                        layer.w[i] += s;
                    }
                    loss(&m)
                };
                num.push((shifted(H)? - shifted(-H)?) / (2.0 * H));
            }
        }
    }
    let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let full = diff / num.iter().map(|a| a * a).sum::<f64>().sqrt();

    let mut oracle_worst = 0.0f64;
    for t in 0..10u64 {
        let mut r = rng::stream(40, t);
        let y = rand_tensor(&[4, 4, 4], &mut r);
        let a1 = rand_c(4, 2, &mut r);
        let a2 = rand_c(4, 2, &mut r);
        let j = analytic_grad_step0(&y, &a1, &a2)?;
        let c = rand_c(4, 2, &mut r);
        let row = backward_jacobian_row(&y, &a1, &a2, &c)?;
        let ch = ComplexMatrix::new(1, c.data().len(), c.data().iter().map(|v| v.conj()).collect())?;
        let want = ch.matmul(&j)?;
        let got = ComplexMatrix::new(1, row.len(), row)?;
        oracle_worst = oracle_worst.max(rel_m(&got, &want));
    }
    check(
        prim_worst < 1e-5 && full < 1e-5 && oracle_worst < 1e-8,
        format!(
            "primitives worst {prim_worst:.1e} ({worst_name}), unrolled loss {full:.1e} (< 1e-5); \
             closed-form vs reverse sweep worst {oracle_worst:.1e} over 10 instances (< 1e-8)"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Result<Check> {
    let a = param_count(&MlpArch::new(&[6, 6, 6], 3, 512, 4, false));
    let b = param_count(&MlpArch::new(&[32, 8, 4], 4, 512, 4, true));
    check(
        a == 917_540 && b == 1_886_304,
        format!("synthetic network {a} (want 917540), channel network {b} (want 1886304)"),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Result<Check> {
    let c = ChannelConstants::default();
    let mut coarse_worst = 0.0f64;
    for t in 0..100u64 {
        let mut r = rng::stream(6, t);
        let (i1, i2, m) = (8, 32, 4);
        let p = gen_params(4, &c, &mut r);
        let start = r.random_range(1..=c.total_subcarriers + 1 - m);
        let (h, _) = build_block_channel(&p, i1, i2, Block { start, len: m })?;
        let dft = PilotConfig::dft(i1, i2, m);
        let cfg = if t % 2 == 0 {
            dft
        } else {
            let x = (0..i2).map(|_| Complex64::from_polar(r.random_range(0.5..2.0), r.random_range(-PI..PI))).collect();
            PilotConfig::new(dft.combiner().clone(), dft.beamformer().clone(), x, m)?
        };
        let y = received_signal(&h, &cfg, 0.0, &mut r)?;
        coarse_worst = coarse_worst.max(rel(&coarse_estimate(&y, &cfg)?, &h));
    }

    let mut unique = 0;
    for t in 0..20u64 {
        let mut r = rng::stream(60, t);
        let p = gen_params(4, &c, &mut r);
        let start = r.random_range(1..=c.total_subcarriers - 3);
        let (_, cp) = build_block_channel(&p, 32, 8, Block { start, len: 4 })?;
        unique += usize::from(uniqueness_check(&cp)?.unique);
    }

    let mut extract_worst = 0.0f64;
    for t in 0..200u64 {
        let mut r = rng::stream(61, t);
        let z = r.random_range(-PI..PI);
        let len = [4, 8, 16, 32][t as usize % 4];
        let col = vandermonde(&[z], len);
        let scale = rng::complex_normal(&mut r, 1.0);
        for a in [col.clone(), col.scale(scale)] {
            let est = extract_generating_vector(a.data())?;
            extract_worst = extract_worst.max(wrap_angle(est - z).abs());
        }
    }
    check(
        coarse_worst < 1e-12 && unique == 20 && extract_worst < 1e-6,
        format!(
            "noise-free coarse estimate worst {coarse_worst:.1e} over 100 trials (< 1e-12); \
             {unique}/20 channel models pass the uniqueness test; generating-vector error {extract_worst:.1e} \
             including rescaled columns (< 1e-6)"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Result<Check> {
    let train_set = gen_synthetic(&SyntheticConfig::new(&[6, 6, 6], 3, 2000, 15.0, 1))?;
    let test_set = gen_synthetic(&SyntheticConfig::new(&[6, 6, 6], 3, 500, 15.0, 2))?;
    let model = MlpModel::new(MlpArch::new(&[6, 6, 6], 3, 64, 2, false), 7)?;
    let mut cfg = TrainConfig::new(3);
    cfg.unroll_k = 2;
    cfg.epochs = 100;
    cfg.batch_size = 128;
    cfg.lr = 1e-3;
    cfg.seed = 7;
    let out = train(model, &train_set.solver_inputs()?, &cfg)?;
    let losses: Vec<f64> = out.history.iter().map(|h| h.mean_loss).collect();
    let q = losses.len() / 4;
    let first = losses[..q].iter().sum::<f64>() / q as f64;
    let last = losses[losses.len() - q..].iter().sum::<f64>() / q as f64;

    let run = |method| {
        let cfg = RunConfig::new(3, 5, method, 3).with_model(&out.model);
        evaluate(&test_set, &cfg)
    };
    let dl = run(InitMethod::Learned)?;
    let random = run(InitMethod::Random)?;
    let (obj_dl, obj_rand) = (dl.mean_objective[2], random.mean_objective[2]);
    let (anse_dl, anse_rand) = (dl.anse[5], random.anse[5]);
    check(
        last < first && obj_dl < obj_rand && anse_dl < anse_rand,
        format!(
            "epoch loss first quartile {first:.4} -> last quartile {last:.4}; objective at K=2 learned {obj_dl:.4} \
             vs random {obj_rand:.4}; ANSE at K=5 learned {anse_dl:.3e} vs random {anse_rand:.3e}"
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Result<Check> {
    let train_set = gen_channel(&ChannelConfig::new(8, 16, 4, 4, 1000, &[20.0], 11))?;
    let test_set = gen_channel(&ChannelConfig::new(8, 16, 4, 4, 200, &[20.0], 12))?;
    let arch = MlpArch::new(&train_set.solver_dims(), 4, 128, 2, true).with_dropout(0.3);
    let mut cfg = TrainConfig::new(4);
    cfg.unroll_k = 2;
    cfg.epochs = 60;
    cfg.batch_size = 64;
    cfg.lr = 1e-3;
    cfg.dropout = 0.3;
    cfg.seed = 7;
    let model = train(MlpModel::new(arch, 7)?, &train_set.solver_inputs()?, &cfg)?.model;

    let targets = [1e-1, 3e-2, 1e-2, 5e-3, 2e-3, 1e-3];
    let methods = [InitMethod::Learned, InitMethod::Svd, InitMethod::Random];
    let rows = bench(&test_set, 4, &targets, 200, &methods, 3, Some(&model))?;
    let iters = |m: InitMethod, t: f64| {
        rows.iter()
            .find(|r| r.method == m && r.target == t)
            .and_then(|r| r.iterations)
    };
    let mut ok = true;
    let mut table = Vec::new();
    for &t in &targets {
        let [d, s, r] = methods.map(|m| iters(m, t));
        let reached = [d, s, r].iter().filter(|v| v.is_some()).count();
        let inf = |v: Option<usize>| v.unwrap_or(usize::MAX);
        let ordered = inf(d) <= inf(s) && inf(s) <= inf(r);
        if reached >= 2 && !ordered {
            ok = false;
        }
        let show = |v: Option<usize>| v.map_or("-".to_string(), |k| k.to_string());
        table.push(format!(
            "{t:.0e}: {}/{}/{}{}",
            show(d),
            show(s),
            show(r),
            if reached >= 2 && !ordered { "!" } else { "" }
        ));
    }
    check(ok, format!("iterations dl/svd/random per ANSE target ({}), ! marks an ordering violation", table.join(", ")))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Result<Check> {
    let svd = cost_profile(&[32, 8, 4], 4, 1, InitMethod::Svd, None)?;
    let arch = MlpArch::new(&[32, 8, 4], 4, 512, 4, true);
    let learned = cost_profile(&[32, 8, 4], 4, 1, InitMethod::Learned, Some(&arch))?;
    let mlp = mlp_flops(&arch);
    let per_iter = svd.per_iteration_cflops as f64 / 1e3;
    let init = svd.init_cflops as f64 / 1e3;
    let itemized = learned.breakdown.iter().any(|i| i.label.contains("network")) && !mlp.layers.is_empty();
    check(
        (30.0..=50.0).contains(&per_iter)
            && (12.0..=22.0).contains(&init)
            && mlp.weight_flops == 1_884_160
            && mlp.weight_flops + mlp.bias_flops == param_count(&arch) as u64
            && itemized,
        format!(
            "per iteration {per_iter:.3}k cflops in [30, 50]; SVD init {init:.3}k in [12, 22]; network {} weight flops \
             + {} bias flops itemized over {} layers",
            mlp.weight_flops,
            mlp.bias_flops,
            mlp.layers.len()
        ),
    )
}

// ---------------------------------------------------------------- 10

fn cpals(args: &[&str], threads: &str) -> Result<()> {
    let status = Command::new(env!("CARGO_BIN_EXE_cpals"))
        .args(["--threads", threads])
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()?;
    ensure!(status.success(), "`cpals {}` exited with {status}", args.join(" "));
    Ok(())
}

fn same_files(a: &Path, b: &Path) -> Result<bool> {
    let list = |d: &Path| -> Result<Vec<String>> {
        let mut v: Vec<String> = std::fs::read_dir(d)?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<std::io::Result<_>>()?;
        v.retain(|n| n != "manifest.json");
        v.sort();
        Ok(v)
    };
    let names = list(a)?;
    if names != list(b)? {
        return Ok(false);
    }
    for n in &names {
        if std::fs::read(a.join(n))? != std::fs::read(b.join(n))? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn criterion_10() -> Result<Check> {
    let tmp = tempfile::tempdir()?;
    let d = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("syn", format!("gen-synthetic --dims 4,4,4 --rank 2 --count 40 --snr-db 20 --seed 5 --out {}", d("syn"))),
        ("ch", format!("gen-channel --ms 4 --bs 8 --block 4 --rank 2 --count 30 --snr-set 10,20 --seed 6 --out {}", d("ch"))),
        ("m", format!("train --data {} --hidden 16 --layers 1 --epochs 3 --batch 8 --lr 1e-3 --dropout 0.2 --seed 1 --out {}", d("syn"), d("m"))),
        ("dec", format!("decompose --input {} --index 3 --iters 20 --init random --seed 2 --out {}", d("ch"), d("dec"))),
        ("ev", format!("eval --data {} --iters 15 --init svd --out {}", d("ch"), d("ev"))),
        ("b", format!("bench --data {} --model {} --inits dl,svd,random --max-iters 30 --anse-targets 1e-1,1e-2 --out {}", d("syn"), d("m"), d("b"))),
        ("f", format!("flops --dims 32,8,4 --rank 4 --init dl --out {}", d("f"))),
        ("x", format!("extract --factors {} --mode 0 --out {}", tmp.path().join("dec").join("factors.bin").display(), d("x"))),
    ]
    .into_iter()
    .map(|(n, s)| (n, s.split_whitespace().map(String::from).collect()))
    .collect();

    let mut failed = Vec::new();
    for (name, args) in &runs {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        cpals(&args, "4")?;
        let again = d(&format!("{name}_rerun"));
        let manifest = tmp.path().join(name).join("manifest.json");
        let replay = cpals(&["rerun", "--manifest", &manifest.to_string_lossy(), "--out", &again], "1");
        if replay.is_err() || !same_files(&tmp.path().join(name), Path::new(&again))? {
            failed.push(*name);
        }
    }
    check(
        failed.is_empty(),
        format!("{} commands replayed with --threads 1; byte mismatches: {failed:?}", runs.len()),
    )
}

// ----------------------------------------------------------------

type Criterion = fn() -> Result<Check>;

fn main() {
    let all: [(u32, &str, Criterion, u64); 10] = [
        (1, "algebra identities", criterion_1, 10),
        (2, "ALS descent and exactness", criterion_2, 30),
        (3, "swamp landscape", criterion_3, 120),
        (4, "gradient correctness", criterion_4, 60),
        (5, "parameter counts", criterion_5, 1),
        (6, "channel pipeline identities", criterion_6, 30),
        (7, "synthetic learning trend", criterion_7, 1200),
        (8, "initializer ordering", criterion_8, 1800),
        (9, "flop accounting", criterion_9, 1),
        (10, "determinism", criterion_10, 60),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = Vec::new();
    for (id, name, run, budget) in all {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = run().unwrap_or_else(|e| Check {
            pass: false,
            detail: format!("error: {e:#}"),
        });
        let took = t0.elapsed();
        let in_budget = took <= Duration::from_secs(budget);
        let pass = outcome.pass && in_budget;
        let budget_note = if in_budget { String::new() } else { format!(" over the {budget} s budget;") };
        let tag = match (pass, KNOWN_RED.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known red)",
            (false, false) => "FAIL",
        };
        println!("criterion {id:>2} {name}: {tag} [{:.1} s]{budget_note} {}", took.as_secs_f64(), outcome.detail);
        if !pass && !KNOWN_RED.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("{}", anyhow!("unexpected failures: {unexpected:?}"));
        std::process::exit(1);
    }
}
