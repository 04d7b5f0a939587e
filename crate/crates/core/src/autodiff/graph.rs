//! Append-only tape recording the forward pass.
//!
//! Nodes are pushed in evaluation order, so every op refers only to earlier
//! nodes and the reverse sweep in [`Graph::backward`] is a valid topological
//! order.

use num_complex::Complex64;
use rayon::prelude::*;

use super::batchnorm::{bn_backward, bn_forward, BnCache, BnMode, BnRunning};
use super::conv::{conv2d_backward, conv2d_forward_raw, Arithmetic};
use super::scalar::Real;
use super::tensor::{ComplexTensor, Shape};
use super::AutodiffError;
use crate::hermitian::{matrix_exp, matrix_func_vjp, HermitianMatrix2, MatrixFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { x: NodeId, w: NodeId, b: NodeId, arith: Arithmetic },
    Relu { x: NodeId },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, arith: Arithmetic, cache: Box<BnCache> },
    Add { a: NodeId, b: NodeId },
    HermitianExp { x: NodeId },
    Sse { pred: NodeId, target: NodeId, weight: f64 },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Conv { x, w, b, .. } => vec![*x, *w, *b],
            Op::Relu { x } | Op::HermitianExp { x } => vec![*x],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Add { a, b } => vec![*a, *b],
            Op::Sse { pred, target, .. } => vec![*pred, *target],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: ComplexTensor<T>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of leaf nodes after [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<ComplexTensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&ComplexTensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<ComplexTensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &ComplexTensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: ComplexTensor<T>, op: Op) -> NodeId {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf: an input (`requires_grad = false`) or a parameter.
    pub fn leaf(&mut self, value: ComplexTensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, arith: Arithmetic) -> Result<NodeId, AutodiffError> {
        let y = conv2d_forward_raw(self.value(x), self.value(w), self.value(b), arith)?;
        Ok(self.push(y, Op::Conv { x, w, b, arith }))
    }

    /// ReLU applied separately to the real and imaginary parts.
    pub fn crelu(&mut self, x: NodeId) -> NodeId {
        let v = crelu(self.value(x));
        self.push(v, Op::Relu { x })
    }

    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: &mut BnRunning<T>,
        mode: BnMode,
        arith: Arithmetic,
    ) -> Result<NodeId, AutodiffError> {
        let (y, cache) = bn_forward(self.value(x), self.value(gamma), self.value(beta), running, mode, arith)?;
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                arith,
                cache: Box::new(cache),
            },
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(AutodiffError::ShapeMismatch(format!("add {} + {}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Per-pixel matrix exponential of `(c11, c12, c22)` channel triples.
    pub fn hermitian_exp(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let y = hermitian_exp(self.value(x))?;
        Ok(self.push(y, Op::HermitianExp { x }))
    }

    /// `weight · Σ ½ |pred − target|²` over both components.
    pub fn sse_loss(&mut self, pred: NodeId, target: NodeId, weight: f64) -> Result<NodeId, AutodiffError> {
        let v = sse_loss(self.value(pred), self.value(target), weight)?;
        Ok(self.push(ComplexTensor::scalar(T::from_f64_lossy(v)), Op::Sse { pred, target, weight }))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, AutodiffError> {
        let n = self.nodes.len();
        if loss.0 >= n {
            return Err(AutodiffError::UnknownNode(loss.0));
        }
        if self.nodes[loss.0].value.shape() != Shape::SCALAR {
            return Err(AutodiffError::NotScalar(self.nodes[loss.0].value.shape()));
        }
        let mut grads: Vec<Option<ComplexTensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(ComplexTensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            for input in node.op.inputs() {
                if input.0 >= i {
                    return Err(AutodiffError::Cycle(i));
                }
            }
            let wants = |id: NodeId| self.nodes[id.0].requires_grad;
            let acc = |id: NodeId, t: ComplexTensor<T>, grads: &mut Vec<Option<ComplexTensor<T>>>| {
                if !wants(id) {
                    return;
                }
                match &mut grads[id.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };

            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv { x, w, b, arith } => {
                    let (dx, dw, db) =
                        conv2d_backward(self.value(*x), self.value(*w), *arith, &g, wants(*x));
                    if let Some(dx) = dx {
                        acc(*x, dx, &mut grads);
                    }
                    acc(*w, dw, &mut grads);
                    acc(*b, db, &mut grads);
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, v) in dx.re.iter_mut().zip(&xv.re) {
                        if *v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    for (d, v) in dx.im.iter_mut().zip(&xv.im) {
                        if *v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    acc(*x, dx, &mut grads);
                }
                Op::BatchNorm { x, gamma, beta, arith, cache } => {
                    let (dx, dg, db) = bn_backward(self.value(*x), self.value(*gamma), cache, *arith, &g)?;
                    acc(*x, dx, &mut grads);
                    acc(*gamma, dg, &mut grads);
                    acc(*beta, db, &mut grads);
                }
                Op::Add { a, b } => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::HermitianExp { x } => {
                    let dx = hermitian_exp_backward(self.value(*x), &g)?;
                    acc(*x, dx, &mut grads);
                }
                Op::Sse { pred, target, weight } => {
                    let (p, t) = (self.value(*pred), self.value(*target));
                    let scale = T::from_f64_lossy(*weight) * g.item();
                    let mut dp = ComplexTensor::zeros(p.shape());
                    for k in 0..p.len() {
                        dp.re[k] = scale * (p.re[k] - t.re[k]);
                        dp.im[k] = scale * (p.im[k] - t.im[k]);
                    }
                    if wants(*target) {
                        let mut dt = dp.clone();
                        dt.re.iter_mut().chain(dt.im.iter_mut()).for_each(|v| *v = -*v);
                        acc(*target, dt, &mut grads);
                    }
                    acc(*pred, dp, &mut grads);
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

pub fn crelu<T: Real>(x: &ComplexTensor<T>) -> ComplexTensor<T> {
    let mut y = x.clone();
    y.re.iter_mut().chain(y.im.iter_mut()).for_each(|v| {
        if *v < T::zero() {
            *v = T::zero();
        }
    });
    y
}

pub fn sse_loss<T: Real>(pred: &ComplexTensor<T>, target: &ComplexTensor<T>, weight: f64) -> Result<f64, AutodiffError> {
    if pred.shape() != target.shape() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "loss between {} and {}",
            pred.shape(),
            target.shape()
        )));
    }
    let mut acc = 0.0f64;
    for k in 0..pred.len() {
        let dr = pred.re[k].as_f64() - target.re[k].as_f64();
        let di = pred.im[k].as_f64() - target.im[k].as_f64();
        acc += dr * dr + di * di;
    }
    Ok(0.5 * weight * acc)
}

fn check_triplet(s: Shape) -> Result<(), AutodiffError> {
    if s.c != 3 {
        return Err(AutodiffError::ShapeMismatch(format!(
            "hermitian layer expects 3 complex channels (c11, c12, c22), got {s}"
        )));
    }
    Ok(())
}

fn pixel_matrix<T: Real>(x: &ComplexTensor<T>, n: usize, p: usize) -> HermitianMatrix2 {
    let s = x.shape();
    let hw = s.plane();
    let base = n * 3 * hw + p;
    HermitianMatrix2::new(
        x.re[base].as_f64(),
        x.re[base + 2 * hw].as_f64(),
        Complex64::new(x.re[base + hw].as_f64(), x.im[base + hw].as_f64()),
    )
}

/// Per-pixel `exp` of the Hermitian matrix encoded in `(c11, c12, c22)`.
/// Imaginary parts of the diagonal channels are ignored on input and
/// exactly zero on output.
pub fn hermitian_exp<T: Real>(x: &ComplexTensor<T>) -> Result<ComplexTensor<T>, AutodiffError> {
    let s = x.shape();
    check_triplet(s)?;
    let hw = s.plane();
    let mut y = ComplexTensor::zeros(s);
    let per_image: Vec<Vec<HermitianMatrix2>> = (0..s.n)
        .into_par_iter()
        .map(|n| (0..hw).map(|p| matrix_exp(&pixel_matrix(x, n, p))).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    for (n, mats) in per_image.into_iter().enumerate() {
        let base = n * 3 * hw;
        for (p, m) in mats.into_iter().enumerate() {
            y.re[base + p] = T::from_f64_lossy(m.c11);
            y.re[base + hw + p] = T::from_f64_lossy(m.c12.re);
            y.im[base + hw + p] = T::from_f64_lossy(m.c12.im);
            y.re[base + 2 * hw + p] = T::from_f64_lossy(m.c22);
        }
    }
    Ok(y)
}

fn hermitian_exp_backward<T: Real>(x: &ComplexTensor<T>, dy: &ComplexTensor<T>) -> Result<ComplexTensor<T>, AutodiffError> {
    let s = x.shape();
    let hw = s.plane();
    let mut dx = ComplexTensor::zeros(s);
    for n in 0..s.n {
        let base = n * 3 * hw;
        for p in 0..hw {
            // split-real gradient (g11, ga, gb, g22) -> full-matrix adjoint with G12 = (ga + i·gb)/2
            let up = HermitianMatrix2::new(
                dy.re[base + p].as_f64(),
                dy.re[base + 2 * hw + p].as_f64(),
                Complex64::new(dy.re[base + hw + p].as_f64(), dy.im[base + hw + p].as_f64()) * 0.5,
            );
            let g = matrix_func_vjp(&pixel_matrix(x, n, p), &up, MatrixFunction::Exp)?;
            dx.re[base + p] = T::from_f64_lossy(g.c11);
            dx.re[base + hw + p] = T::from_f64_lossy(2.0 * g.c12.re);
            dx.im[base + hw + p] = T::from_f64_lossy(2.0 * g.c12.im);
            dx.re[base + 2 * hw + p] = T::from_f64_lossy(g.c22);
        }
    }
    Ok(dx)
}
