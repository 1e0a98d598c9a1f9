//! Reverse-mode automatic differentiation with higher-order support.
//!
//! Every backward rule is itself written with graph ops, so gradients taken
//! with `create_graph = true` can be differentiated again. The GAN
//! regularizers need this: the R1 penalty differentiates a gradient norm
//! with respect to discriminator weights, the path-length penalty
//! differentiates a Jacobian norm with respect to generator weights.

use std::cell::Cell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::scalar::{lit, Scalar};
use crate::tensor::{self, ConvGeom, Tensor};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let v = c.get();
        c.set(v + 1);
        v
    })
}

/// Runs `f` with graph recording disabled.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = NO_GRAD.with(|c| c.replace(true));
    let out = f();
    NO_GRAD.with(|c| c.set(prev));
    out
}

fn recording() -> bool {
    !NO_GRAD.with(|c| c.get())
}

enum Op<T: Scalar> {
    Leaf,
    Add(Var<T>, Var<T>),
    Sub(Var<T>, Var<T>),
    Mul(Var<T>, Var<T>),
    Div(Var<T>, Var<T>),
    Scale(Var<T>, T),
    AddScalar(Var<T>),
    Exp(Var<T>),
    Log(Var<T>),
    Sqrt(Var<T>),
    Sigmoid(Var<T>),
    Softplus(Var<T>),
    LeakyRelu(Var<T>, T),
    Abs(Var<T>),
    Square(Var<T>),
    MatMul(Var<T>, Var<T>, bool, bool),
    Reshape(Var<T>),
    SumAll(Var<T>),
    SumTo(Var<T>),
    BroadcastTo(Var<T>),
    Slice(Var<T>, usize, usize),
    Pad(Var<T>, usize, usize),
    Softmax(Var<T>, usize),
    Conv(Var<T>, Var<T>, ConvGeom),
    ConvInputGrad(Var<T>, Var<T>, ConvGeom),
    ConvWeightGrad(Var<T>, Var<T>, ConvGeom),
    Upsample(Var<T>),
    Concat(Vec<Var<T>>, usize),
    UpsampleAdjoint(Var<T>),
}

struct Node<T: Scalar> {
    id: u64,
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A node in the computation graph.
pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Op<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b, _, _) => vec![a, b],
            Conv(a, b, _) | ConvInputGrad(a, b, _) | ConvWeightGrad(a, b, _) => vec![a, b],
            Scale(a, _) | AddScalar(a) | Exp(a) | Log(a) | Sqrt(a) | Sigmoid(a) | Softplus(a) => {
                vec![a]
            }
            LeakyRelu(a, _) | Abs(a) | Square(a) | Reshape(a) | SumAll(a) | SumTo(a) => vec![a],
            BroadcastTo(a) | Slice(a, _, _) | Pad(a, _, _) | Softmax(a, _) => vec![a],
            Upsample(a) | UpsampleAdjoint(a) => vec![a],
            Concat(parts, _) => parts.iter().collect(),
        }
    }
}

impl<T: Scalar> Var<T> {
    fn from_op(value: Tensor<T>, op: Op<T>) -> Self {
        let requires_grad = recording() && op.parents().iter().any(|p| p.0.requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        Var(Rc::new(Node {
            id: next_id(),
            value,
            op,
            requires_grad,
        }))
    }

    /// A trainable leaf.
    pub fn leaf(value: Tensor<T>) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            op: Op::Leaf,
            requires_grad: true,
        }))
    }

    pub fn constant(value: Tensor<T>) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            op: Op::Leaf,
            requires_grad: false,
        }))
    }

    pub fn scalar_const(v: T) -> Self {
        Self::constant(Tensor::scalar(v))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn item(&self) -> T {
        self.0.value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    pub fn add(&self, o: &Var<T>) -> Self {
        Self::from_op(
            self.value().zip_bcast(o.value(), |a, b| a + b),
            Op::Add(self.clone(), o.clone()),
        )
    }

    pub fn sub(&self, o: &Var<T>) -> Self {
        Self::from_op(
            self.value().zip_bcast(o.value(), |a, b| a - b),
            Op::Sub(self.clone(), o.clone()),
        )
    }

    pub fn mul(&self, o: &Var<T>) -> Self {
        Self::from_op(
            self.value().zip_bcast(o.value(), |a, b| a * b),
            Op::Mul(self.clone(), o.clone()),
        )
    }

    pub fn div(&self, o: &Var<T>) -> Self {
        Self::from_op(
            self.value().zip_bcast(o.value(), |a, b| a / b),
            Op::Div(self.clone(), o.clone()),
        )
    }

    pub fn scale(&self, c: T) -> Self {
        Self::from_op(self.value().map(|a| a * c), Op::Scale(self.clone(), c))
    }

    pub fn neg(&self) -> Self {
        self.scale(-T::one())
    }

    pub fn add_scalar(&self, c: T) -> Self {
        Self::from_op(self.value().map(|a| a + c), Op::AddScalar(self.clone()))
    }

    pub fn exp(&self) -> Self {
        Self::from_op(self.value().map(|a| a.exp()), Op::Exp(self.clone()))
    }

    pub fn ln(&self) -> Self {
        Self::from_op(self.value().map(|a| a.ln()), Op::Log(self.clone()))
    }

    pub fn sqrt(&self) -> Self {
        Self::from_op(self.value().map(|a| a.sqrt()), Op::Sqrt(self.clone()))
    }

    pub fn sigmoid(&self) -> Self {
        Self::from_op(self.value().map(sigmoid), Op::Sigmoid(self.clone()))
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&self) -> Self {
        Self::from_op(self.value().map(softplus), Op::Softplus(self.clone()))
    }

    pub fn leaky_relu(&self, slope: T) -> Self {
        Self::from_op(
            self.value()
                .map(|a| if a > T::zero() { a } else { a * slope }),
            Op::LeakyRelu(self.clone(), slope),
        )
    }

    pub fn abs(&self) -> Self {
        Self::from_op(self.value().map(|a| a.abs()), Op::Abs(self.clone()))
    }

    pub fn square(&self) -> Self {
        Self::from_op(self.value().map(|a| a * a), Op::Square(self.clone()))
    }

    pub fn matmul(&self, o: &Var<T>) -> Self {
        self.matmul_t(o, false, false)
    }

    pub fn matmul_t(&self, o: &Var<T>, ta: bool, tb: bool) -> Self {
        Self::from_op(
            self.value().matmul(o.value(), ta, tb),
            Op::MatMul(self.clone(), o.clone(), ta, tb),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Self {
        if shape == self.shape() {
            return self.clone();
        }
        Self::from_op(
            self.value().clone().reshape(shape),
            Op::Reshape(self.clone()),
        )
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&self) -> Self {
        Self::from_op(Tensor::scalar(self.value().sum()), Op::SumAll(self.clone()))
    }

    pub fn mean(&self) -> Self {
        let n = self.value().numel();
        self.sum().scale(T::one() / lit(n as f64))
    }

    pub fn sum_to(&self, shape: &[usize]) -> Self {
        if shape == self.shape() {
            return self.clone();
        }
        Self::from_op(self.value().sum_to(shape), Op::SumTo(self.clone()))
    }

    /// Sums over `axis`, keeping it with size 1.
    pub fn sum_axis(&self, axis: usize) -> Self {
        let mut s = self.shape().to_vec();
        s[axis] = 1;
        self.sum_to(&s)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Self {
        if shape == self.shape() {
            return self.clone();
        }
        Self::from_op(
            self.value().broadcast_to(shape),
            Op::BroadcastTo(self.clone()),
        )
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Self {
        Self::from_op(
            self.value().slice_axis(axis, start, len),
            Op::Slice(self.clone(), axis, start),
        )
    }

    pub fn pad(&self, axis: usize, start: usize, total: usize) -> Self {
        Self::from_op(
            self.value().pad_axis(axis, start, total),
            Op::Pad(self.clone(), axis, start),
        )
    }

    pub fn concat(parts: &[Var<T>], axis: usize) -> Self {
        let values: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        Self::from_op(
            Tensor::concat(&values, axis),
            Op::Concat(parts.to_vec(), axis),
        )
    }

    pub fn softmax(&self, axis: usize) -> Self {
        Self::from_op(
            self.value().softmax_axis(axis),
            Op::Softmax(self.clone(), axis),
        )
    }

    /// Log-softmax over `axis`, with the max shift treated as a constant.
    pub fn log_softmax(&self, axis: usize) -> Self {
        let mut mshape = self.shape().to_vec();
        mshape[axis] = 1;
        let shift = {
            let v = self.value();
            let outer = tensor::numel(&v.shape()[..axis]);
            let dim = v.shape()[axis];
            let inner = tensor::numel(&v.shape()[axis + 1..]);
            let mut m = vec![T::neg_infinity(); outer * inner];
            for o in 0..outer {
                for k in 0..dim {
                    for i in 0..inner {
                        let x = v.data()[(o * dim + k) * inner + i];
                        let slot = &mut m[o * inner + i];
                        *slot = slot.max(x);
                    }
                }
            }
            Var::constant(Tensor::new(&mshape, m))
        };
        let z = self.sub(&shift);
        let lse = z.exp().sum_axis(axis).ln();
        z.sub(&lse)
    }

    pub fn conv2d(&self, w: &Var<T>, g: ConvGeom) -> Self {
        Self::from_op(
            tensor::conv2d(self.value(), w.value(), g),
            Op::Conv(self.clone(), w.clone(), g),
        )
    }

    fn conv_input_grad(gout: &Var<T>, w: &Var<T>, x_shape: &[usize], g: ConvGeom) -> Self {
        Self::from_op(
            tensor::conv2d_input_grad(gout.value(), w.value(), x_shape, g),
            Op::ConvInputGrad(gout.clone(), w.clone(), g),
        )
    }

    fn conv_weight_grad(x: &Var<T>, gout: &Var<T>, w_shape: &[usize], g: ConvGeom) -> Self {
        Self::from_op(
            tensor::conv2d_weight_grad(x.value(), gout.value(), w_shape, g),
            Op::ConvWeightGrad(x.clone(), gout.clone(), g),
        )
    }

    pub fn upsample(&self, oh: usize, ow: usize) -> Self {
        Self::from_op(
            tensor::upsample_bilinear(self.value(), oh, ow),
            Op::Upsample(self.clone()),
        )
    }

    fn upsample_adjoint(&self, h: usize, w: usize) -> Self {
        Self::from_op(
            tensor::upsample_bilinear_adjoint(self.value(), h, w),
            Op::UpsampleAdjoint(self.clone()),
        )
    }

    /// Vector-Jacobian products of this node's op for upstream gradient `g`.
    fn vjp(&self, g: &Var<T>) -> Vec<(Var<T>, Var<T>)> {
        use Op::*;
        let out = self;
        let mut v = Vec::new();
        let mut push = |p: &Var<T>, grad: Var<T>| {
            if p.0.requires_grad {
                v.push((p.clone(), grad));
            }
        };
        match &self.0.op {
            Leaf => {}
            Add(a, b) => {
                push(a, g.sum_to(a.shape()));
                push(b, g.sum_to(b.shape()));
            }
            Sub(a, b) => {
                push(a, g.sum_to(a.shape()));
                push(b, g.sum_to(b.shape()).neg());
            }
            Mul(a, b) => {
                if a.0.requires_grad {
                    push(a, g.mul(b).sum_to(a.shape()));
                }
                if b.0.requires_grad {
                    push(b, g.mul(a).sum_to(b.shape()));
                }
            }
            Div(a, b) => {
                if a.0.requires_grad {
                    push(a, g.div(b).sum_to(a.shape()));
                }
                if b.0.requires_grad {
                    push(b, g.mul(out).div(b).neg().sum_to(b.shape()));
                }
            }
            Scale(a, c) => push(a, g.scale(*c)),
            AddScalar(a) => push(a, g.clone()),
            Exp(a) => push(a, g.mul(out)),
            Log(a) => push(a, g.div(a)),
            Sqrt(a) => push(a, g.div(out).scale(lit(0.5))),
            Sigmoid(a) => {
                let d = out.mul(&out.neg().add_scalar(T::one()));
                push(a, g.mul(&d));
            }
            Softplus(a) => push(a, g.mul(&a.sigmoid())),
            LeakyRelu(a, slope) => {
                let s = *slope;
                let mask = a.value().map(|x| if x > T::zero() { T::one() } else { s });
                push(a, g.mul(&Var::constant(mask)));
            }
            Abs(a) => {
                let sign = a.value().map(|x| x.signum());
                push(a, g.mul(&Var::constant(sign)));
            }
            Square(a) => push(a, g.mul(a).scale(lit(2.0))),
            MatMul(a, b, ta, tb) => {
                let (ta, tb) = (*ta, *tb);
                if a.0.requires_grad {
                    let ga = if ta {
                        b.matmul_t(g, tb, true)
                    } else {
                        g.matmul_t(b, false, !tb)
                    };
                    push(a, ga);
                }
                if b.0.requires_grad {
                    let gb = if tb {
                        g.matmul_t(a, true, ta)
                    } else {
                        a.matmul_t(g, !ta, false)
                    };
                    push(b, gb);
                }
            }
            Reshape(a) => push(a, g.reshape(a.shape())),
            SumAll(a) => {
                let ones = vec![1; a.shape().len()];
                push(a, g.reshape(&ones).broadcast_to(a.shape()));
            }
            SumTo(a) => push(a, g.broadcast_to(a.shape())),
            BroadcastTo(a) => push(a, g.sum_to(a.shape())),
            Slice(a, axis, start) => push(a, g.pad(*axis, *start, a.shape()[*axis])),
            Concat(parts, axis) => {
                let mut off = 0;
                for p in parts {
                    let len = p.shape()[*axis];
                    push(p, g.slice(*axis, off, len));
                    off += len;
                }
            }
            Pad(a, axis, start) => push(a, g.slice(*axis, *start, a.shape()[*axis])),
            Softmax(a, axis) => {
                let gy = g.mul(out);
                let s = gy.sum_axis(*axis);
                push(a, gy.sub(&out.mul(&s)));
            }
            Conv(x, w, geom) => {
                if x.0.requires_grad {
                    push(x, Var::conv_input_grad(g, w, x.shape(), *geom));
                }
                if w.0.requires_grad {
                    push(w, Var::conv_weight_grad(x, g, w.shape(), *geom));
                }
            }
            ConvInputGrad(gout, w, geom) => {
                // out = A(gout, w), bilinear; adjoint w.r.t. each argument
                if gout.0.requires_grad {
                    push(gout, g.conv2d(w, *geom));
                }
                if w.0.requires_grad {
                    push(w, Var::conv_weight_grad(g, gout, w.shape(), *geom));
                }
            }
            ConvWeightGrad(x, gout, geom) => {
                if x.0.requires_grad {
                    push(x, Var::conv_input_grad(gout, g, x.shape(), *geom));
                }
                if gout.0.requires_grad {
                    push(gout, x.conv2d(g, *geom));
                }
            }
            Upsample(a) => {
                let s = a.shape();
                push(a, g.upsample_adjoint(s[2], s[3]));
            }
            UpsampleAdjoint(a) => {
                let s = a.shape();
                push(a, g.upsample(s[2], s[3]));
            }
        }
        v
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > lit(30.0) {
        x
    } else if x < lit(-30.0) {
        x.exp()
    } else {
        x.max(T::zero()) + (-x.abs()).exp().ln_1p()
    }
}

/// Gradients of a scalar `output` with respect to `inputs`.
///
/// With `create_graph`, the returned gradients are graph nodes that can be
/// differentiated again; otherwise they are constants. Inputs the output
/// does not depend on get `None`.
pub fn grad<T: Scalar>(
    output: &Var<T>,
    inputs: &[&Var<T>],
    create_graph: bool,
) -> Vec<Option<Var<T>>> {
    assert_eq!(output.value().numel(), 1, "grad() needs a scalar output");
    let seed = Var::constant(Tensor::new(output.shape(), vec![T::one()]));
    grad_with_seed(output, seed, inputs, create_graph)
}

pub fn grad_with_seed<T: Scalar>(
    output: &Var<T>,
    seed: Var<T>,
    inputs: &[&Var<T>],
    create_graph: bool,
) -> Vec<Option<Var<T>>> {
    let run = || {
        if !output.0.requires_grad {
            return vec![None; inputs.len()];
        }
        let mut nodes: Vec<Var<T>> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![output.clone()];
        while let Some(n) = stack.pop() {
            if !seen.insert(n.0.id) {
                continue;
            }
            for p in n.0.op.parents() {
                if p.0.requires_grad && !seen.contains(&p.0.id) {
                    stack.push(p.clone());
                }
            }
            nodes.push(n);
        }
        nodes.sort_by(|a, b| b.0.id.cmp(&a.0.id));
        let wanted: std::collections::HashSet<u64> = inputs.iter().map(|v| v.0.id).collect();
        let mut grads: HashMap<u64, Var<T>> = HashMap::new();
        grads.insert(output.0.id, seed.clone());
        let mut kept: HashMap<u64, Var<T>> = HashMap::new();
        for node in &nodes {
            let g = match grads.remove(&node.0.id) {
                Some(g) => g,
                None => continue,
            };
            if wanted.contains(&node.0.id) {
                kept.insert(node.0.id, g.clone());
            }
            for (p, pg) in node.vjp(&g) {
                let acc = match grads.remove(&p.0.id) {
                    Some(prev) => prev.add(&pg),
                    None => pg,
                };
                grads.insert(p.0.id, acc);
            }
        }
        inputs.iter().map(|v| kept.get(&v.0.id).cloned()).collect()
    };
    if create_graph {
        run()
    } else {
        no_grad(run)
    }
}

/// Largest relative error between the analytic directional derivative of
/// `f` at `x0` and a central finite difference, over `dirs` random unit-normal
/// directions. `f` receives one leaf per tensor in `x0`.
pub fn directional_grad_check(
    f: impl Fn(&[Var<f64>]) -> Var<f64>,
    x0: &[Tensor<f64>],
    dirs: usize,
    eps: f64,
    seed: u64,
) -> f64 {
    let leaves: Vec<Var<f64>> = x0.iter().map(|t| Var::leaf(t.clone())).collect();
    let refs: Vec<&Var<f64>> = leaves.iter().collect();
    let g = grad(&f(&leaves), &refs, false);
    let mut r = crate::rng::rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..dirs {
        let d: Vec<Tensor<f64>> = x0
            .iter()
            .map(|t| crate::nn::randn(t.shape(), 1.0, &mut r))
            .collect();
        let at = |s: f64| {
            let xs: Vec<Var<f64>> = x0
                .iter()
                .zip(&d)
                .map(|(t, d)| Var::constant(t.zip_bcast(d, |a, b| a + s * b)))
                .collect();
            f(&xs).item()
        };
        let num = (at(eps) - at(-eps)) / (2.0 * eps);
        let ana: f64 = g
            .iter()
            .zip(&d)
            .filter_map(|(g, d)| {
                g.as_ref().map(|g| {
                    g.value()
                        .data()
                        .iter()
                        .zip(d.data())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
            })
            .sum();
        let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    type V = Var<f64>;

    fn t(shape: &[usize], d: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, d)
    }

    fn fd_check(f: impl Fn(&V) -> V, x0: Tensor<f64>) {
        let x = V::leaf(x0.clone());
        let y = f(&x);
        let g = grad(&y, &[&x], false)[0].clone().unwrap();
        let eps = 1e-6;
        for i in 0..x0.numel() {
            let mut p = x0.clone();
            p.data_mut()[i] += eps;
            let mut m = x0.clone();
            m.data_mut()[i] -= eps;
            let fp = f(&V::constant(p)).item();
            let fm = f(&V::constant(m)).item();
            let num = (fp - fm) / (2.0 * eps);
            let ana = g.value().data()[i];
            assert!(
                (num - ana).abs() <= 1e-6 * (1.0 + num.abs()),
                "elem {i}: numeric {num} analytic {ana}"
            );
        }
    }

    #[test]
    fn elementwise_grads() {
        let x = t(&[2, 3], &[0.3, -0.7, 1.2, 0.9, -1.5, 0.1]);
        fd_check(|x| x.sigmoid().sum(), x.clone());
        fd_check(|x| x.softplus().mul(x).sum(), x.clone());
        fd_check(|x| x.square().add_scalar(1.0).sqrt().ln().sum(), x.clone());
        fd_check(
            |x| x.exp().div(&x.square().add_scalar(2.0)).sum(),
            x.clone(),
        );
        fd_check(|x| x.leaky_relu(0.2).square().sum(), x.clone());
        fd_check(|x| x.softmax(1).mul(x).sum(), x.clone());
        fd_check(|x| x.log_softmax(0).square().sum(), x.clone());
    }

    #[test]
    fn structural_grads() {
        let x = t(&[2, 3], &[0.3, -0.7, 1.2, 0.9, -1.5, 0.1]);
        let w = V::constant(t(&[3, 2], &[0.5, -1.0, 2.0, 0.25, -0.3, 0.8]));
        fd_check(|x| x.matmul(&w).square().sum(), x.clone());
        fd_check(|x| w.matmul_t(x, true, true).square().sum(), x.clone());
        fd_check(|x| x.slice(1, 1, 2).pad(1, 0, 4).square().sum(), x.clone());
        let b = V::constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        fd_check(|x| x.mul(&b).sum_axis(0).square().sum(), x.clone());
        fd_check(|x| b.mul(&x.sum_axis(0)).square().sum(), x.clone());
    }

    #[test]
    fn conv_and_upsample_second_order() {
        // d/dw of ||d conv(x,w)·c / dx||^2 through the input-grad op
        let x0 = Tensor::<f64>::new(
            &[1, 2, 5, 5],
            (0..50).map(|i| (i as f64 * 0.37).sin()).collect(),
        );
        let c = V::constant(Tensor::new(
            &[1, 3, 3, 3],
            (0..27).map(|i| (i as f64 * 0.91).cos()).collect(),
        ));
        let geom = ConvGeom { stride: 2, pad: 1 };
        let f = |w: &V| {
            let x = V::leaf(x0.clone());
            let y = x
                .conv2d(w, geom)
                .leaky_relu(0.2)
                .upsample(6, 6)
                .slice(2, 0, 3)
                .slice(3, 0, 3);
            let s = y.mul(&c).sum();
            let gx = grad(&s, &[&x], true)[0].clone().unwrap();
            gx.square().sum()
        };
        let w0 = Tensor::<f64>::new(
            &[3, 2, 3, 3],
            (0..54).map(|i| (i as f64 * 0.53).sin() * 0.5).collect(),
        );
        fd_check(f, w0);
    }

    #[test]
    fn weight_grad_op_second_order() {
        let x0 = Tensor::<f64>::new(
            &[2, 1, 4, 4],
            (0..32).map(|i| (i as f64 * 0.29).cos()).collect(),
        );
        let geom = ConvGeom { stride: 1, pad: 1 };
        let f = |x: &V| {
            let w = V::leaf(Tensor::new(
                &[2, 1, 3, 3],
                (0..18).map(|i| (i as f64 * 0.4).sin()).collect(),
            ));
            let s = x.conv2d(&w, geom).sigmoid().sum();
            let gw = grad(&s, &[&w], true)[0].clone().unwrap();
            gw.square().sum()
        };
        fd_check(f, x0);
    }

    #[test]
    fn constants_do_not_record() {
        let a = V::constant(t(&[2], &[1.0, 2.0]));
        let b = a.exp().sum();
        assert!(!b.requires_grad());
        let x = V::leaf(t(&[2], &[1.0, 2.0]));
        let y = no_grad(|| x.exp().sum());
        assert!(!y.requires_grad());
    }
}
