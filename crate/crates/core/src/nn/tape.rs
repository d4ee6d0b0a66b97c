//! Reverse-mode differentiation over a small set of matrix primitives.
//!
//! Complex values are handled as pairs of real numbers: the gradient stored
//! for a complex entry `z = x + iy` is `∂L/∂x + i ∂L/∂y`, i.e. real and
//! imaginary parts are independent real variables and finite differences on
//! either part can be compared directly against the reverse sweep.
//!
//! Network parameters are not copied into the graph. Affine nodes refer to
//! layers of the [`MlpModel`](super::MlpModel) the graph was built against and
//! their gradients are accumulated into a [`ParamGrads`].

use num_complex::Complex64;

use super::mlp::{Layer, MlpModel};
use crate::error::{Error, Result};
use crate::tensor::{hermitian_solve, ComplexMatrix};

/// Handle to a node of a [`DiffGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Column-major real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RealMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn column(data: Vec<f64>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Real(RealMatrix),
    Complex(ComplexMatrix),
}

impl Value {
    pub fn as_real(&self) -> Option<&RealMatrix> {
        match self {
            Value::Real(m) => Some(m),
            Value::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Option<&ComplexMatrix> {
        match self {
            Value::Complex(m) => Some(m),
            Value::Real(_) => None,
        }
    }

    fn zeros_like(&self) -> Value {
        match self {
            Value::Real(m) => Value::Real(RealMatrix::zeros(m.rows, m.cols)),
            Value::Complex(m) => Value::Complex(ComplexMatrix::zeros(m.rows(), m.cols())),
        }
    }

    fn add_assign(&mut self, other: &Value) {
        match (self, other) {
            (Value::Real(a), Value::Real(b)) => a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y),
            (Value::Complex(a), Value::Complex(b)) => {
                a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y)
            }
            _ => unreachable!("gradient kind mismatch"),
        }
    }

    fn has_non_finite(&self) -> bool {
        match self {
            Value::Real(m) => m.data.iter().any(|v| !v.is_finite()),
            Value::Complex(m) => m.data().iter().any(|v| !v.re.is_finite() || !v.im.is_finite()),
        }
    }
}

/// Recorded primitive. Cached values needed by the reverse sweep live in
/// the node values themselves or in the op payload.
#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `W x + b` with `W`, `b` taken from network layer `layer`.
    Affine { layer: usize, x: Var },
    Relu(Var),
    Tanh(Var),
    /// Multiplies by a fixed mask (inverted dropout).
    Mask { x: Var, mask: Vec<f64> },
    /// Reinterprets a slice of a real column as a complex matrix; the
    /// imaginary block follows the real block when `complex` is set.
    Unpack {
        src: Var,
        offset: usize,
        complex: bool,
    },
    Conj(Var),
    Transpose(Var),
    MatMul(Var, Var),
    KhatriRao(Var, Var),
    Hadamard(Var, Var),
    Sub(Var, Var),
    /// `X = M (G + shift·I)⁻¹` for Hermitian `G`.
    RightSolve { m: Var, g: Var, shift: f64 },
    /// `Σ |x|²`, a 1×1 real value.
    FrobSq(Var),
    /// `Re Σ conj(c) x` against a fixed `c`, a 1×1 real value.
    RealInner { x: Var, c: ComplexMatrix },
}

struct Node {
    op: Op,
    value: Value,
    needs_grad: bool,
}

/// Tape of primitive operations recorded during a forward pass.
pub struct DiffGraph<'m> {
    nodes: Vec<Node>,
    model: Option<&'m MlpModel>,
    regularized_solves: usize,
}

/// Gradients of every network layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Layer>,
}

impl ParamGrads {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model.layers().iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w.iter_mut().zip(&b.w).for_each(|(x, y)| *x += y);
            a.b.iter_mut().zip(&b.b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|x| *x *= s);
            l.b.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(&l.b).copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Value>>,
    pub params: Option<ParamGrads>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Value> {
        self.grads[v.0].as_ref()
    }
}

fn real_of<'a>(nodes: &'a [Node], v: Var) -> &'a RealMatrix {
    nodes[v.0].value.as_real().expect("expected a real node")
}

fn cplx_of<'a>(nodes: &'a [Node], v: Var) -> &'a ComplexMatrix {
    nodes[v.0].value.as_complex().expect("expected a complex node")
}

impl<'m> DiffGraph<'m> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            model: None,
            regularized_solves: 0,
        }
    }

    /// Graph whose affine nodes read layers of `model`.
    pub fn with_model(model: &'m MlpModel) -> Self {
        Self {
            nodes: Vec::new(),
            model: Some(model),
            regularized_solves: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of Hermitian solves that used the regularized fallback.
    pub fn regularized_solves(&self) -> usize {
        self.regularized_solves
    }

    pub fn value(&self, v: Var) -> &Value {
        &self.nodes[v.0].value
    }

    pub fn complex(&self, v: Var) -> &ComplexMatrix {
        cplx_of(&self.nodes, v)
    }

    pub fn real(&self, v: Var) -> &RealMatrix {
        real_of(&self.nodes, v)
    }

    /// Scalar value of a 1×1 real node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.real(v).data[0]
    }

    fn push(&mut self, op: Op, value: Value, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input that gradients are tracked for.
    pub fn input(&mut self, value: Value) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Input excluded from differentiation.
    pub fn constant(&mut self, value: Value) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn affine(&mut self, layer: usize, x: Var) -> Result<Var> {
        let model = self
            .model
            .ok_or_else(|| Error::invalid("affine node on a graph without a model"))?;
        let l = model
            .layers()
            .get(layer)
            .ok_or_else(|| Error::invalid(format!("no layer {layer}")))?;
        let xv = real_of(&self.nodes, x);
        if xv.cols != 1 || xv.rows != l.inp {
            return Err(Error::dims(format!(
                "layer {layer} expects {} inputs, got {}x{}",
                l.inp, xv.rows, xv.cols
            )));
        }
        let out = l.apply(&xv.data);
        Ok(self.push(Op::Affine { layer, x }, Value::Real(RealMatrix::column(out)), true))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = real_of(&self.nodes, x);
        let data = xv.data.iter().map(|&v| v.max(0.0)).collect();
        let value = Value::Real(RealMatrix { data, ..*xv });
        let ng = self.ng(x);
        self.push(Op::Relu(x), value, ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let xv = real_of(&self.nodes, x);
        let data = xv.data.iter().map(|&v| v.tanh()).collect();
        let value = Value::Real(RealMatrix { data, ..*xv });
        let ng = self.ng(x);
        self.push(Op::Tanh(x), value, ng)
    }

    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xv = real_of(&self.nodes, x);
        if mask.len() != xv.data.len() {
            return Err(Error::dims("mask length differs from input"));
        }
        let data = xv.data.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Value::Real(RealMatrix { data, ..*xv });
        let ng = self.ng(x);
        Ok(self.push(Op::Mask { x, mask }, value, ng))
    }

    pub fn unpack(&mut self, src: Var, offset: usize, rows: usize, cols: usize, complex: bool) -> Result<Var> {
        let sv = real_of(&self.nodes, src);
        let n = rows * cols;
        let need = offset + if complex { 2 * n } else { n };
        if need > sv.data.len() {
            return Err(Error::dims(format!(
                "unpacking {need} values from a vector of {}",
                sv.data.len()
            )));
        }
        let data = (0..n)
            .map(|k| {
                let im = if complex { sv.data[offset + n + k] } else { 0.0 };
                Complex64::new(sv.data[offset + k], im)
            })
            .collect();
        let value = Value::Complex(ComplexMatrix::new(rows, cols, data)?);
        let ng = self.ng(src);
        Ok(self.push(Op::Unpack { src, offset, complex }, value, ng))
    }

    pub fn conj(&mut self, x: Var) -> Var {
        let value = Value::Complex(cplx_of(&self.nodes, x).conj());
        let ng = self.ng(x);
        self.push(Op::Conj(x), value, ng)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = Value::Complex(cplx_of(&self.nodes, x).transpose());
        let ng = self.ng(x);
        self.push(Op::Transpose(x), value, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Value::Complex(cplx_of(&self.nodes, a).matmul(cplx_of(&self.nodes, b))?);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MatMul(a, b), value, ng))
    }

    pub fn khatri_rao(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Value::Complex(cplx_of(&self.nodes, a).khatri_rao(cplx_of(&self.nodes, b))?);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::KhatriRao(a, b), value, ng))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Value::Complex(cplx_of(&self.nodes, a).hadamard(cplx_of(&self.nodes, b))?);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Hadamard(a, b), value, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Value::Complex(cplx_of(&self.nodes, a).sub(cplx_of(&self.nodes, b))?);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Sub(a, b), value, ng))
    }

    /// `M G⁻¹` through a Hermitian solve; uses the same Tikhonov fallback as
    /// the solver and differentiates through the shifted matrix.
    pub fn right_solve(&mut self, m: Var, g: Var) -> Result<Var> {
        let mv = cplx_of(&self.nodes, m);
        let gv = cplx_of(&self.nodes, g);
        if gv.rows() != mv.cols() {
            return Err(Error::dims(format!(
                "right solve: {}x{} by {}x{}",
                mv.rows(),
                mv.cols(),
                gv.rows(),
                gv.cols()
            )));
        }
        let s = hermitian_solve(gv, &mv.adjoint())?;
        if s.regularized {
            self.regularized_solves += 1;
        }
        let value = Value::Complex(s.solution.adjoint());
        let ng = self.ng(m) || self.ng(g);
        Ok(self.push(Op::RightSolve { m, g, shift: s.shift }, value, ng))
    }

    pub fn frob_sq(&mut self, x: Var) -> Var {
        let s = match &self.nodes[x.0].value {
            Value::Real(m) => m.data.iter().map(|v| v * v).sum(),
            Value::Complex(m) => m.data().iter().map(|v| v.norm_sqr()).sum(),
        };
        let ng = self.ng(x);
        self.push(Op::FrobSq(x), Value::Real(RealMatrix::column(vec![s])), ng)
    }

    pub fn real_inner(&mut self, x: Var, c: ComplexMatrix) -> Result<Var> {
        let xv = cplx_of(&self.nodes, x);
        if xv.shape() != c.shape() {
            return Err(Error::dims("inner product of differently shaped matrices"));
        }
        let s = xv.data().iter().zip(c.data()).map(|(a, b)| (b.conj() * a).re).sum();
        let ng = self.ng(x);
        Ok(self.push(Op::RealInner { x, c }, Value::Real(RealMatrix::column(vec![s])), ng))
    }

    /// Reverse sweep from a scalar node, seeded with `seed` (usually 1).
    pub fn backward(&self, output: Var, seed: f64) -> Result<Gradients> {
        let out = real_of(&self.nodes, output);
        if out.data.len() != 1 {
            return Err(Error::dims("backward needs a scalar output"));
        }
        let mut grads: Vec<Option<Value>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Value::Real(RealMatrix::column(vec![seed])));
        let mut params = self.model.map(ParamGrads::zeros_like);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads, params.as_mut())?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Value>], v: Var, g: Value) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Value, grads: &mut [Option<Value>], params: Option<&mut ParamGrads>) -> Result<()> {
        let nodes = &self.nodes;
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Affine { layer, x } => {
                let gy = &g.as_real().expect("real grad").data;
                let xv = &real_of(nodes, *x).data;
                let l = &self.model.expect("model").layers()[*layer];
                if let Some(p) = params {
                    let pg = &mut p.layers[*layer];
                    for (o, &go) in gy.iter().enumerate() {
                        if go == 0.0 {
                            continue;
                        }
                        let row = &mut pg.w[o * l.inp..(o + 1) * l.inp];
                        for (w, xi) in row.iter_mut().zip(xv) {
                            *w += go * xi;
                        }
                        pg.b[o] += go;
                    }
                }
                if self.nodes[x.0].needs_grad {
                    let mut gx = vec![0.0; l.inp];
                    for (o, &go) in gy.iter().enumerate() {
                        if go == 0.0 {
                            continue;
                        }
                        let row = &l.w[o * l.inp..(o + 1) * l.inp];
                        for (acc, w) in gx.iter_mut().zip(row) {
                            *acc += go * w;
                        }
                    }
                    self.accumulate(grads, *x, Value::Real(RealMatrix::column(gx)));
                }
            }
            Op::Relu(x) => {
                let gy = g.as_real().expect("real grad");
                let xv = real_of(nodes, *x);
                let data = gy.data.iter().zip(&xv.data).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *x, Value::Real(RealMatrix { data, ..*xv }));
            }
            Op::Tanh(x) => {
                let gy = g.as_real().expect("real grad");
                let yv = real_of(nodes, Var(idx));
                let data = gy.data.iter().zip(&yv.data).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.accumulate(grads, *x, Value::Real(RealMatrix { data, ..*yv }));
            }
            Op::Mask { x, mask } => {
                let gy = g.as_real().expect("real grad");
                let data = gy.data.iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *x, Value::Real(RealMatrix { data, ..*gy }));
            }
            Op::Unpack { src, offset, complex } => {
                let gy = g.as_complex().expect("complex grad");
                let sv = real_of(nodes, *src);
                let mut gx = RealMatrix::zeros(sv.rows, sv.cols);
                let n = gy.data().len();
                for (k, v) in gy.data().iter().enumerate() {
                    gx.data[offset + k] += v.re;
                    if *complex {
                        gx.data[offset + n + k] += v.im;
                    }
                }
                self.accumulate(grads, *src, Value::Real(gx));
            }
            Op::Conj(x) => {
                self.accumulate(grads, *x, Value::Complex(g.as_complex().expect("complex grad").conj()));
            }
            Op::Transpose(x) => {
                self.accumulate(grads, *x, Value::Complex(g.as_complex().expect("complex grad").transpose()));
            }
            Op::MatMul(a, b) => {
                let gc = g.as_complex().expect("complex grad");
                if self.ng(*a) {
                    let bv = cplx_of(nodes, *b);
                    self.accumulate(grads, *a, Value::Complex(gc.matmul(&bv.adjoint())?));
                }
                if self.ng(*b) {
                    let av = cplx_of(nodes, *a);
                    self.accumulate(grads, *b, Value::Complex(av.adjoint_matmul(gc)?));
                }
            }
            Op::KhatriRao(a, b) => {
                let gc = g.as_complex().expect("complex grad");
                let av = cplx_of(nodes, *a);
                let bv = cplx_of(nodes, *b);
                let (ma, mb) = (av.rows(), bv.rows());
                if self.ng(*a) {
                    let ga = ComplexMatrix::from_fn(ma, av.cols(), |i, r| {
                        (0..mb).map(|j| gc.get(i * mb + j, r) * bv.get(j, r).conj()).sum()
                    });
                    self.accumulate(grads, *a, Value::Complex(ga));
                }
                if self.ng(*b) {
                    let gb = ComplexMatrix::from_fn(mb, bv.cols(), |j, r| {
                        (0..ma).map(|i| gc.get(i * mb + j, r) * av.get(i, r).conj()).sum()
                    });
                    self.accumulate(grads, *b, Value::Complex(gb));
                }
            }
            Op::Hadamard(a, b) => {
                let gc = g.as_complex().expect("complex grad");
                if self.ng(*a) {
                    let bv = cplx_of(nodes, *b);
                    self.accumulate(grads, *a, Value::Complex(gc.hadamard(&bv.conj())?));
                }
                if self.ng(*b) {
                    let av = cplx_of(nodes, *a);
                    self.accumulate(grads, *b, Value::Complex(gc.hadamard(&av.conj())?));
                }
            }
            Op::Sub(a, b) => {
                let gc = g.as_complex().expect("complex grad");
                self.accumulate(grads, *a, Value::Complex(gc.clone()));
                self.accumulate(grads, *b, Value::Complex(gc.scale(Complex64::new(-1.0, 0.0))));
            }
            Op::RightSolve { m, g: gram, shift } => {
                // X = M H⁻¹, H = G + shift·I Hermitian:
                //   ḡ_M = ḡ_X H⁻¹,  ḡ_G = −Xᴴ ḡ_M
                let gx = g.as_complex().expect("complex grad");
                let mut h = cplx_of(nodes, *gram).clone();
                for i in 0..h.rows() {
                    let v = h.get(i, i);
                    h.set(i, i, v + shift);
                }
                let gm = match crate::tensor::cholesky(&h) {
                    Some(_) => hermitian_solve(&h, &gx.adjoint())?.solution.adjoint(),
                    None => return Err(Error::Numerical("shifted Gram lost definiteness in backward".into())),
                };
                if self.ng(*gram) {
                    let xv = cplx_of(nodes, Var(idx));
                    let gg = xv.adjoint_matmul(&gm)?.scale(Complex64::new(-1.0, 0.0));
                    self.accumulate(grads, *gram, Value::Complex(gg));
                }
                self.accumulate(grads, *m, Value::Complex(gm));
            }
            Op::FrobSq(x) => {
                let s = g.as_real().expect("real grad").data[0];
                let gx = match &nodes[x.0].value {
                    Value::Real(v) => Value::Real(RealMatrix {
                        data: v.data.iter().map(|a| 2.0 * s * a).collect(),
                        ..*v
                    }),
                    Value::Complex(v) => Value::Complex(v.scale(Complex64::new(2.0 * s, 0.0))),
                };
                self.accumulate(grads, *x, gx);
            }
            Op::RealInner { x, c } => {
                let s = g.as_real().expect("real grad").data[0];
                self.accumulate(grads, *x, Value::Complex(c.scale(Complex64::new(s, 0.0))));
            }
        }
        Ok(())
    }

    /// True when any node holds a NaN or infinity.
    pub fn has_non_finite(&self) -> bool {
        self.nodes.iter().any(|n| n.value.has_non_finite())
    }

    #[doc(hidden)]
    pub fn zero_grad_like(&self, v: Var) -> Value {
        self.nodes[v.0].value.zeros_like()
    }
}

impl Default for DiffGraph<'_> {
    fn default() -> Self {
        Self::new()
    }
}
