use super::conv::{conv_backward, conv_forward};
use super::spectral_op::{apply_g, apply_g_inverse};
use super::Tensor;
use crate::error::{Error, Result};
use crate::field::OperatorKind;

/// The operation set shared by untracked evaluation ([`Eager`]) and the
/// recording tape ([`Graph`]). Model code is written once against this trait,
/// so tracked and untracked forward passes run the same kernels.
pub trait Ops {
    type V: Clone;

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor;
    /// A value that does not receive gradients.
    fn constant(&mut self, t: Tensor) -> Self::V;
    /// The `index`-th trainable parameter.
    fn param(&mut self, index: usize, t: &Tensor) -> Self::V;

    fn conv(&mut self, x: &Self::V, w: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn tanh(&mut self, x: &Self::V) -> Self::V;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn scale(&mut self, a: &Self::V, c: f64) -> Self::V;
    fn add_scalar(&mut self, a: &Self::V, c: f64) -> Self::V;
    fn recip(&mut self, a: &Self::V) -> Self::V;
    /// Mean of squares over all elements; a scalar.
    fn mean_sq(&mut self, a: &Self::V) -> Self::V;
    /// Exact `G^{-1}` on every spatial slice.
    fn g_inverse(&mut self, a: &Self::V, kind: OperatorKind) -> Result<Self::V>;
    /// `G` on every spatial slice.
    fn g_apply(&mut self, a: &Self::V, kind: OperatorKind) -> Result<Self::V>;
}

fn tanh_fwd(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

fn mean_sq_fwd(x: &Tensor) -> Tensor {
    let s: f64 = x.data().iter().map(|v| v * v).sum();
    Tensor::scalar(s / x.len() as f64)
}

/// Untracked evaluation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Ops for Eager {
    type V = Tensor;

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }
    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }
    fn param(&mut self, _index: usize, t: &Tensor) -> Tensor {
        t.clone()
    }
    fn conv(&mut self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        conv_forward(x, w, b)
    }
    fn tanh(&mut self, x: &Tensor) -> Tensor {
        tanh_fwd(x)
    }
    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.zip_map(b, "add", |x, y| x + y)
    }
    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.zip_map(b, "sub", |x, y| x - y)
    }
    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.zip_map(b, "mul", |x, y| x * y)
    }
    fn scale(&mut self, a: &Tensor, c: f64) -> Tensor {
        a.map(|x| c * x)
    }
    fn add_scalar(&mut self, a: &Tensor, c: f64) -> Tensor {
        a.map(|x| x + c)
    }
    fn recip(&mut self, a: &Tensor) -> Tensor {
        a.map(|x| 1.0 / x)
    }
    fn mean_sq(&mut self, a: &Tensor) -> Tensor {
        mean_sq_fwd(a)
    }
    fn g_inverse(&mut self, a: &Tensor, kind: OperatorKind) -> Result<Tensor> {
        apply_g_inverse(a, kind)
    }
    fn g_apply(&mut self, a: &Tensor, kind: OperatorKind) -> Result<Tensor> {
        apply_g(a, kind)
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Constant,
    Param(usize),
    Conv(usize, usize, usize),
    Tanh(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Recip(usize),
    MeanSq(usize),
    GInverse(usize, OperatorKind),
    GApply(usize, OperatorKind),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Define-by-run tape. Nodes are appended in evaluation order, so reverse
/// index order is a valid reverse topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are added
    /// (`+=`) into `params[index].grad`; the tape is consumed.
    pub fn backward(self, loss: Var, params: &mut [Parameter]) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, grad) in self.nodes.iter().zip(grads) {
            if let (Op::Param(i), Some(g)) = (node.op, grad) {
                let p = params
                    .get_mut(i)
                    .ok_or_else(|| Error::Model(format!("parameter index {i} out of range")))?;
                p.grad
                    .data_mut()
                    .iter_mut()
                    .zip(&g)
                    .for_each(|(acc, v)| *acc += v);
            }
        }
        Ok(())
    }

    /// Per-node gradients of `loss`; `None` where no path reaches the loss.
    fn gradients(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        let root = &self.nodes[loss.0].value;
        if root.len() != 1 {
            return Err(Error::NonScalarLoss(root.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |i: usize| &self.nodes[i].value;
            match node.op {
                Op::Constant | Op::Param(_) => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv(x, w, b) => {
                    let (gx, gw, gb) = conv_backward(val(x), val(w), val(b), &g)?;
                    accumulate(&mut grads, x, gx);
                    accumulate(&mut grads, w, gw);
                    accumulate(&mut grads, b, gb);
                }
                Op::Tanh(x) => {
                    let d = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(gi, y)| gi * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, x, d);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, b, g.iter().map(|v| -v).collect());
                    accumulate(&mut grads, a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.iter().zip(val(b).data()).map(|(gi, y)| gi * y).collect();
                    let gb = g.iter().zip(val(a).data()).map(|(gi, x)| gi * x).collect();
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads, a, g.iter().map(|v| c * v).collect()),
                Op::AddScalar(a) => accumulate(&mut grads, a, g),
                Op::Recip(a) => {
                    let d = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(gi, y)| -gi * y * y)
                        .collect();
                    accumulate(&mut grads, a, d);
                }
                Op::GInverse(a, kind) => {
                    let gt = Tensor::new(node.value.shape().to_vec(), g)?;
                    accumulate(&mut grads, a, apply_g_inverse(&gt, kind)?.into_data());
                }
                Op::GApply(a, kind) => {
                    let gt = Tensor::new(node.value.shape().to_vec(), g)?;
                    accumulate(&mut grads, a, apply_g(&gt, kind)?.into_data());
                }
                Op::MeanSq(a) => {
                    let x = val(a);
                    let s = 2.0 * g[0] / x.len() as f64;
                    accumulate(&mut grads, a, x.data().iter().map(|v| s * v).collect());
                }
            }
        }
        Ok(grads)
    }

    /// Gradient of `loss` with respect to an arbitrary node (for tests and
    /// gradient checks on inputs).
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Result<Vec<f64>> {
        let mut grads = self.gradients(loss)?;
        Ok(grads[wrt.0]
            .take()
            .unwrap_or_else(|| vec![0.0; self.nodes[wrt.0].value.len()]))
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, g: Vec<f64>) {
    match &mut grads[idx] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
        slot @ None => *slot = Some(g),
    }
}

impl Ops for Graph {
    type V = Var;

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }
    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }
    fn param(&mut self, index: usize, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Param(index))
    }
    fn conv(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let v = conv_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(v, Op::Conv(x.0, w.0, b.0)))
    }
    fn tanh(&mut self, x: &Var) -> Var {
        let v = tanh_fwd(self.value(x));
        self.push(v, Op::Tanh(x.0))
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a.0, b.0)))
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a.0, b.0)))
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a.0, b.0)))
    }
    fn scale(&mut self, a: &Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a.0, c))
    }
    fn add_scalar(&mut self, a: &Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a.0))
    }
    fn recip(&mut self, a: &Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push(v, Op::Recip(a.0))
    }
    fn mean_sq(&mut self, a: &Var) -> Var {
        let v = mean_sq_fwd(self.value(a));
        self.push(v, Op::MeanSq(a.0))
    }
    fn g_inverse(&mut self, a: &Var, kind: OperatorKind) -> Result<Var> {
        let v = apply_g_inverse(self.value(a), kind)?;
        Ok(self.push(v, Op::GInverse(a.0, kind)))
    }
    fn g_apply(&mut self, a: &Var, kind: OperatorKind) -> Result<Var> {
        let v = apply_g(self.value(a), kind)?;
        Ok(self.push(v, Op::GApply(a.0, kind)))
    }
}
