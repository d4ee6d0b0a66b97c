//! Differentiable replica of the ALS operator and the unrolled training loss.

use rand::Rng;

use super::mlp::{pack_input, MlpModel};
use super::tape::{DiffGraph, ParamGrads, RealMatrix, Value, Var};
use crate::error::{Error, Result};
use crate::tensor::ComplexDenseTensor;

struct FactorNodes {
    plain: Var,
    conj: Var,
    /// `Aᵀ A*`
    gram: Var,
}

fn factor_nodes(g: &mut DiffGraph<'_>, a: Var) -> Result<FactorNodes> {
    let conj = g.conj(a);
    let t = g.transpose(a);
    let gram = g.matmul(t, conj)?;
    Ok(FactorNodes { plain: a, conj, gram })
}

fn chain<'m>(g: &mut DiffGraph<'m>, vars: &[Var], op: fn(&mut DiffGraph<'m>, Var, Var) -> Result<Var>) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = op(g, acc, v)?;
    }
    Ok(acc)
}

/// One least-squares update of mode `n` recorded on the tape.
fn record_step<'m>(g: &mut DiffGraph<'m>, unfolding: Var, nodes: &[Option<FactorNodes>], n: usize) -> Result<Var> {
    let others: Vec<&FactorNodes> = nodes
        .iter()
        .enumerate()
        .rev()
        .filter(|(l, _)| *l != n)
        .map(|(l, f)| f.as_ref().ok_or_else(|| Error::invalid(format!("factor {l} is not set"))))
        .collect::<Result<_>>()?;
    let conj: Vec<Var> = others.iter().map(|f| f.conj).collect();
    let kr = chain(g, &conj, DiffGraph::khatri_rao)?;
    let m = g.matmul(unfolding, kr)?;
    let grams: Vec<Var> = others.iter().rev().map(|f| f.gram).collect();
    let gram = chain(g, &grams, DiffGraph::hadamard)?;
    g.right_solve(m, gram)
}

/// Result of recording the solver on a graph.
pub struct Replica {
    /// Factors of every mode after the last sweep.
    pub factors: Vec<Var>,
    /// `‖y − ⟦A_0..A_{N−1}⟧‖_F²`.
    pub loss: Var,
}

/// Records the initial mode-0 update followed by `k` full sweeps, starting
/// from `init` (modes 1..N), and the final squared residual.
pub fn record_cpals<'m>(g: &mut DiffGraph<'m>, y: &ComplexDenseTensor, init: &[Var], k: usize) -> Result<Replica> {
    let order = y.order();
    if order < 2 || init.len() + 1 != order {
        return Err(Error::dims(format!(
            "expected {} initial factors, got {}",
            order.saturating_sub(1),
            init.len()
        )));
    }
    for (n, v) in init.iter().enumerate() {
        let a = g.complex(*v);
        if a.rows() != y.dims()[n + 1] || a.cols() != g.complex(init[0]).cols() {
            return Err(Error::dims(format!("initial factor for mode {} has shape {:?}", n + 1, a.shape())));
        }
    }
    let mut unfoldings = Vec::with_capacity(order);
    for n in 0..order {
        unfoldings.push(g.constant(Value::Complex(y.matricize(n)?)));
    }

    let mut nodes: Vec<Option<FactorNodes>> = Vec::with_capacity(order);
    nodes.push(None);
    for &a in init {
        nodes.push(Some(factor_nodes(g, a)?));
    }
    let a0 = record_step(g, unfoldings[0], &nodes, 0)?;
    nodes[0] = Some(factor_nodes(g, a0)?);
    for _ in 0..k {
        for n in 0..order {
            let a = record_step(g, unfoldings[n], &nodes, n)?;
            nodes[n] = Some(factor_nodes(g, a)?);
        }
    }

    let plain: Vec<Var> = nodes.iter().map(|f| f.as_ref().expect("all modes set").plain).collect();
    let rest: Vec<Var> = plain[1..].iter().rev().copied().collect();
    let kr = chain(g, &rest, DiffGraph::khatri_rao)?;
    let krt = g.transpose(kr);
    let recon = g.matmul(plain[0], krt)?;
    let resid = g.sub(unfoldings[0], recon)?;
    let loss = g.frob_sq(resid);
    Ok(Replica { factors: plain, loss })
}

/// Recorded unrolled loss of one sample.
pub struct UnrolledLoss<'m> {
    pub graph: DiffGraph<'m>,
    pub loss: Var,
    /// Network-produced factors of modes 1..N.
    pub init: Vec<Var>,
    pub factors: Vec<Var>,
}

impl UnrolledLoss<'_> {
    pub fn value(&self) -> f64 {
        self.graph.scalar(self.loss)
    }

    /// Gradient of the loss with respect to every network parameter.
    pub fn param_grads(&self) -> Result<ParamGrads> {
        let grads = self.graph.backward(self.loss, 1.0)?;
        grads
            .params
            .ok_or_else(|| Error::invalid("graph was built without a model"))
    }
}

/// `‖y − ⟦1; Â_0ᴷ..Â_{N−1}ᴷ⟧‖_F²` where the ALS iterates start from the
/// network output for `y`.
pub fn unrolled_loss<'m, R: Rng + ?Sized>(
    model: &'m MlpModel,
    y: &ComplexDenseTensor,
    rank: usize,
    k: usize,
    train: bool,
    rng: &mut R,
) -> Result<UnrolledLoss<'m>> {
    let arch = model.arch();
    if arch.dims != y.dims() {
        return Err(Error::dims(format!(
            "model expects tensors of shape {:?}, got {:?}",
            arch.dims,
            y.dims()
        )));
    }
    if arch.rank != rank {
        return Err(Error::dims(format!("model rank {} differs from {rank}", arch.rank)));
    }
    let mut g = DiffGraph::with_model(model);
    let x = g.constant(Value::Real(RealMatrix::column(pack_input(y, arch.complex))));
    let out = model.forward_on(&mut g, x, train, rng)?;
    let width = if arch.complex { 2 } else { 1 };
    let mut offset = 0;
    let mut init = Vec::with_capacity(y.order() - 1);
    for &rows in &y.dims()[1..] {
        init.push(g.unpack(out, offset, rows, rank, arch.complex)?);
        offset += width * rows * rank;
    }
    let replica = record_cpals(&mut g, y, &init, k)?;
    if g.has_non_finite() {
        return Err(Error::Numerical("non-finite value in the unrolled forward pass".into()));
    }
    Ok(UnrolledLoss {
        graph: g,
        loss: replica.loss,
        init,
        factors: replica.factors,
    })
}
