//! Reverse-mode automatic differentiation over [`Tensor`].
//!
//! Every backward rule is written with differentiable [`Var`] operations, so
//! gradients computed with `create_graph = true` can themselves be
//! differentiated (needed for input-gradient penalties).

use std::cell::Cell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::tensor::{self, ConvGeom, Tensor};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// A node in the computation graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

struct Node {
    id: u64,
    value: Rc<Tensor>,
    requires_grad: bool,
    op: Op,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f32),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Sigmoid(Var),
    Tanh(Var),
    /// Input and its sigmoid.
    Silu(Var, Rc<Tensor>),
    /// Per-group standardisation; keeps the reciprocal std of every group.
    GroupNorm(Var, usize, f32, Rc<Vec<f32>>),
    /// Multiplication by a constant tensor of the same shape.
    MaskMul(Var, Rc<Tensor>),
    SumTo(Var),
    BroadcastTo(Var),
    Reshape(Var),
    Transpose(Var),
    MatMul(Var, Var),
    Conv2d(Var, Var, ConvGeom),
    ConvTranspose2d(Var, Var, ConvGeom),
    Conv2dWeight(Var, Var, ConvGeom),
    Upsample2(Var),
    SumPool2(Var),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    PadNarrow(Var, usize, usize),
}

impl Op {
    fn parents(&self) -> Vec<&Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::Conv2d(a, b, _)
            | Op::ConvTranspose2d(a, b, _)
            | Op::Conv2dWeight(a, b, _) => vec![a, b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sqrt(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Silu(a, _)
            | Op::GroupNorm(a, _, _, _)
            | Op::MaskMul(a, _)
            | Op::SumTo(a)
            | Op::BroadcastTo(a)
            | Op::Reshape(a)
            | Op::Transpose(a)
            | Op::Upsample2(a)
            | Op::SumPool2(a)
            | Op::Narrow(a, _, _)
            | Op::PadNarrow(a, _, _) => vec![a],
            Op::Concat(parts, _) => parts.iter().collect(),
        }
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?}, grad={})", self.0.id, self.0.value, self.0.requires_grad)
    }
}

impl Var {
    fn make(value: Tensor, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| p.0.requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        Var(Rc::new(Node { id: next_id(), value: Rc::new(value), requires_grad, op }))
    }

    /// A constant: gradients never flow into it.
    pub fn constant(value: Tensor) -> Var {
        Var(Rc::new(Node { id: next_id(), value: Rc::new(value), requires_grad: false, op: Op::Leaf }))
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn param(value: Tensor) -> Var {
        Var(Rc::new(Node { id: next_id(), value: Rc::new(value), requires_grad: true, op: Op::Leaf }))
    }

    pub fn scalar(v: f32) -> Var {
        Var::constant(Tensor::scalar(v))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn item(&self) -> f32 {
        self.0.value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var(Rc::new(Node { id: next_id(), value: self.0.value.clone(), requires_grad: false, op: Op::Leaf }))
    }

    pub fn add(&self, o: &Var) -> Var {
        Var::make(self.value().zip_map(o.value(), |a, b| a + b), Op::Add(self.clone(), o.clone()))
    }

    pub fn sub(&self, o: &Var) -> Var {
        Var::make(self.value().zip_map(o.value(), |a, b| a - b), Op::Sub(self.clone(), o.clone()))
    }

    pub fn mul(&self, o: &Var) -> Var {
        Var::make(self.value().zip_map(o.value(), |a, b| a * b), Op::Mul(self.clone(), o.clone()))
    }

    pub fn div(&self, o: &Var) -> Var {
        Var::make(self.value().zip_map(o.value(), |a, b| a / b), Op::Div(self.clone(), o.clone()))
    }

    pub fn neg(&self) -> Var {
        Var::make(self.value().map(|a| -a), Op::Neg(self.clone()))
    }

    pub fn scale(&self, c: f32) -> Var {
        Var::make(self.value().map(|a| a * c), Op::Scale(self.clone(), c))
    }

    pub fn add_scalar(&self, c: f32) -> Var {
        Var::make(self.value().map(|a| a + c), Op::AddScalar(self.clone()))
    }

    pub fn exp(&self) -> Var {
        Var::make(self.value().map(f32::exp), Op::Exp(self.clone()))
    }

    pub fn log(&self) -> Var {
        Var::make(self.value().map(f32::ln), Op::Log(self.clone()))
    }

    pub fn sqrt(&self) -> Var {
        Var::make(self.value().map(f32::sqrt), Op::Sqrt(self.clone()))
    }

    pub fn sigmoid(&self) -> Var {
        Var::make(self.value().map(sigmoid), Op::Sigmoid(self.clone()))
    }

    pub fn tanh(&self) -> Var {
        Var::make(self.value().map(f32::tanh), Op::Tanh(self.clone()))
    }

    pub fn square(&self) -> Var {
        self.mul(self)
    }

    /// Elementwise product with a constant tensor of identical shape.
    pub fn mask_mul(&self, mask: Rc<Tensor>) -> Var {
        assert_eq!(self.shape(), mask.shape(), "mask_mul shape mismatch");
        let v = self.value().zip_map(&mask, |a, m| a * m);
        Var::make(v, Op::MaskMul(self.clone(), mask))
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f32) -> Var {
        let mask = self.value().map(|a| if a > 0.0 { 1.0 } else { slope });
        self.mask_mul(Rc::new(mask))
    }

    pub fn abs(&self) -> Var {
        let mask = self.value().map(|a| if a > 0.0 { 1.0 } else if a < 0.0 { -1.0 } else { 0.0 });
        self.mask_mul(Rc::new(mask))
    }

    /// `x * sigmoid(x)`
    pub fn silu(&self) -> Var {
        let sg = self.value().map(sigmoid);
        let y = self.value().zip_map(&sg, |a, s| a * s);
        Var::make(y, Op::Silu(self.clone(), Rc::new(sg)))
    }

    /// Standardises each of `groups` equal chunks of every batch item
    /// (no affine part).
    pub fn group_norm(&self, groups: usize, eps: f32) -> Var {
        let n = self.shape()[0];
        assert!(self.value().numel() % (n * groups) == 0, "{:?} not divisible into {groups} groups", self.shape());
        let (y, rstd) = tensor::group_norm(self.value(), groups, eps);
        Var::make(y, Op::GroupNorm(self.clone(), groups, eps, Rc::new(rstd)))
    }

    /// [`Var::group_norm`] assembled from primitive ops, used for higher-order gradients.
    fn group_norm_composed(&self, groups: usize, eps: f32) -> (Var, Var) {
        let s = self.shape().to_vec();
        let n = s[0];
        let per = self.value().numel() / (n * groups);
        let inv = 1.0 / per as f32;
        let g = self.reshape(&[n, groups, per]);
        let centered = g.sub(&g.sum_to(&[n, groups, 1]).scale(inv));
        let var = centered.square().sum_to(&[n, groups, 1]).scale(inv);
        let rstd = Var::scalar(1.0).div(&var.add_scalar(eps).sqrt());
        (centered.mul(&rstd), rstd)
    }

    /// `max(x, lo)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&self, lo: f32) -> Var {
        let mask = self.value().map(|a| if a >= lo { 1.0 } else { 0.0 });
        let fill = mask.map(|m| (1.0 - m) * lo);
        self.mask_mul(Rc::new(mask)).add(&Var::constant(fill))
    }

    pub fn sum_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        Var::make(self.value().sum_to(shape), Op::SumTo(self.clone()))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        Var::make(self.value().broadcast_to(shape), Op::BroadcastTo(self.clone()))
    }

    /// Sum of all elements, as a shape-`[]` scalar.
    pub fn sum(&self) -> Var {
        self.sum_to(&[])
    }

    pub fn mean(&self) -> Var {
        let n = self.value().numel() as f32;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        Var::make(self.value().reshape(shape.to_vec()), Op::Reshape(self.clone()))
    }

    pub fn transpose(&self) -> Var {
        Var::make(self.value().transpose2(), Op::Transpose(self.clone()))
    }

    pub fn matmul(&self, o: &Var) -> Var {
        Var::make(self.value().matmul(o.value()), Op::MatMul(self.clone(), o.clone()))
    }

    pub fn conv2d(&self, w: &Var, stride: usize, pad: usize) -> Var {
        let s = self.shape();
        let ws = w.shape();
        let geom = ConvGeom { kh: ws[2], kw: ws[3], stride, pad, in_h: s[2], in_w: s[3] };
        Var::make(tensor::conv2d(self.value(), w.value(), stride, pad), Op::Conv2d(self.clone(), w.clone(), geom))
    }

    fn conv_transpose(g: &Var, w: &Var, geom: ConvGeom) -> Var {
        Var::make(tensor::conv_transpose2d(g.value(), w.value(), &geom), Op::ConvTranspose2d(g.clone(), w.clone(), geom))
    }

    fn conv_weight(x: &Var, g: &Var, geom: ConvGeom) -> Var {
        Var::make(tensor::conv2d_weight(x.value(), g.value(), &geom), Op::Conv2dWeight(x.clone(), g.clone(), geom))
    }

    pub fn upsample2(&self) -> Var {
        Var::make(tensor::upsample2(self.value()), Op::Upsample2(self.clone()))
    }

    pub fn sumpool2(&self) -> Var {
        Var::make(tensor::sumpool2(self.value()), Op::SumPool2(self.clone()))
    }

    pub fn avgpool2(&self) -> Var {
        self.sumpool2().scale(0.25)
    }

    pub fn concat(parts: &[Var], axis: usize) -> Var {
        let vals: Vec<&Tensor> = parts.iter().map(|p| p.value()).collect();
        Var::make(tensor::concat(&vals, axis), Op::Concat(parts.to_vec(), axis))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var {
        Var::make(tensor::narrow(self.value(), axis, start, len), Op::Narrow(self.clone(), axis, start))
    }

    fn pad_narrow(&self, axis: usize, start: usize, total: usize) -> Var {
        Var::make(tensor::pad_narrow(self.value(), axis, start, total), Op::PadNarrow(self.clone(), axis, start))
    }

    /// Gradients flowing from this node into its parents, given the upstream gradient `g`.
    fn backward(&self, g: &Var, create_graph: bool) -> Vec<(Var, Var)> {
        let keep = |v: &Var| if create_graph { v.clone() } else { v.detach() };
        let out = || keep(self);
        let mut res = Vec::new();
        let mut push = |p: &Var, grad: Var| {
            if p.requires_grad() {
                res.push((p.clone(), grad));
            }
        };
        match &self.0.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                push(a, g.sum_to(a.shape()));
                push(b, g.sum_to(b.shape()));
            }
            Op::Sub(a, b) => {
                push(a, g.sum_to(a.shape()));
                if b.requires_grad() {
                    push(b, g.neg().sum_to(b.shape()));
                }
            }
            Op::Mul(a, b) => {
                if a.requires_grad() {
                    push(a, g.mul(&keep(b)).sum_to(a.shape()));
                }
                if b.requires_grad() {
                    push(b, g.mul(&keep(a)).sum_to(b.shape()));
                }
            }
            Op::Div(a, b) => {
                if a.requires_grad() {
                    push(a, g.div(&keep(b)).sum_to(a.shape()));
                }
                if b.requires_grad() {
                    push(b, g.mul(&out()).div(&keep(b)).neg().sum_to(b.shape()));
                }
            }
            Op::Neg(a) => push(a, g.neg()),
            Op::Scale(a, c) => push(a, g.scale(*c)),
            Op::AddScalar(a) => push(a, g.clone()),
            Op::Exp(a) => push(a, g.mul(&out())),
            Op::Log(a) => push(a, g.div(&keep(a))),
            Op::Sqrt(a) => push(a, g.div(&out()).scale(0.5)),
            Op::Sigmoid(a) => {
                let y = out();
                let one_minus = y.neg().add_scalar(1.0);
                push(a, g.mul(&y).mul(&one_minus));
            }
            Op::Tanh(a) => {
                let y = out();
                push(a, g.mul(&y.square().neg().add_scalar(1.0)));
            }
            Op::Silu(a, sg) => {
                if create_graph {
                    let x = a.clone();
                    let sg = x.sigmoid();
                    let d = sg.add(&x.mul(&sg).mul(&sg.neg().add_scalar(1.0)));
                    push(a, g.mul(&d));
                } else {
                    let d = a.value().zip_map(sg, |x, s| s + x * s * (1.0 - s));
                    push(a, Var::constant(g.value().zip_map(&d, |u, v| u * v)));
                }
            }
            Op::GroupNorm(a, groups, eps, rstd) => {
                if create_graph {
                    let s = a.shape().to_vec();
                    let n = s[0];
                    let per = a.value().numel() / (n * groups);
                    let inv = 1.0 / per as f32;
                    let (xhat, r) = a.group_norm_composed(*groups, *eps);
                    let gg = g.reshape(&[n, *groups, per]);
                    let mg = gg.sum_to(&[n, *groups, 1]).scale(inv);
                    let mgx = gg.mul(&xhat).sum_to(&[n, *groups, 1]).scale(inv);
                    push(a, gg.sub(&mg).sub(&xhat.mul(&mgx)).mul(&r).reshape(&s));
                } else {
                    push(a, Var::constant(tensor::group_norm_backward(self.value(), rstd, g.value())));
                }
            }
            Op::MaskMul(a, m) => push(a, g.mask_mul(m.clone())),
            Op::SumTo(a) => push(a, g.broadcast_to(a.shape())),
            Op::BroadcastTo(a) => push(a, g.sum_to(a.shape())),
            Op::Reshape(a) => push(a, g.reshape(a.shape())),
            Op::Transpose(a) => push(a, g.transpose()),
            Op::MatMul(a, b) => {
                if a.requires_grad() {
                    push(a, g.matmul(&keep(b).transpose()));
                }
                if b.requires_grad() {
                    push(b, keep(a).transpose().matmul(g));
                }
            }
            Op::Conv2d(x, w, geom) => {
                if x.requires_grad() {
                    push(x, Var::conv_transpose(g, &keep(w), *geom));
                }
                if w.requires_grad() {
                    push(w, Var::conv_weight(&keep(x), g, *geom));
                }
            }
            Op::ConvTranspose2d(g0, w, geom) => {
                if g0.requires_grad() {
                    push(g0, g.conv2d(&keep(w), geom.stride, geom.pad));
                }
                if w.requires_grad() {
                    push(w, Var::conv_weight(g, &keep(g0), *geom));
                }
            }
            Op::Conv2dWeight(x, g0, geom) => {
                if x.requires_grad() {
                    push(x, Var::conv_transpose(&keep(g0), g, *geom));
                }
                if g0.requires_grad() {
                    push(g0, keep(x).conv2d(g, geom.stride, geom.pad));
                }
            }
            Op::Upsample2(a) => push(a, g.sumpool2()),
            Op::SumPool2(a) => push(a, g.upsample2()),
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for p in parts {
                    let len = p.shape()[*axis];
                    if p.requires_grad() {
                        push(p, g.narrow(*axis, offset, len));
                    }
                    offset += len;
                }
            }
            Op::Narrow(a, axis, start) => push(a, g.pad_narrow(*axis, *start, a.shape()[*axis])),
            Op::PadNarrow(a, axis, start) => push(a, g.narrow(*axis, *start, a.shape()[*axis])),
        }
        res
    }
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients of the scalar `output` with respect to each of `wrt`.
///
/// Inputs that `output` does not depend on get zero gradients. With
/// `create_graph` the returned gradients are themselves part of the graph.
pub fn grad(output: &Var, wrt: &[&Var], create_graph: bool) -> Vec<Var> {
    assert_eq!(output.value().numel(), 1, "grad() needs a scalar output, got {:?}", output.shape());
    let mut nodes: HashMap<u64, Var> = HashMap::new();
    let mut stack = vec![output.clone()];
    while let Some(v) = stack.pop() {
        if !v.requires_grad() || nodes.contains_key(&v.0.id) {
            continue;
        }
        for p in v.0.op.parents() {
            stack.push(p.clone());
        }
        nodes.insert(v.0.id, v);
    }
    let mut order: Vec<Var> = nodes.into_values().collect();
    order.sort_by(|a, b| b.0.id.cmp(&a.0.id));

    let mut grads: HashMap<u64, Var> = HashMap::new();
    grads.insert(output.0.id, Var::constant(Tensor::ones(output.shape().to_vec())));
    for node in &order {
        let Some(g) = grads.get(&node.0.id).cloned() else { continue };
        for (parent, pg) in node.backward(&g, create_graph) {
            let acc = match grads.remove(&parent.0.id) {
                Some(prev) => prev.add(&pg),
                None => pg,
            };
            grads.insert(parent.0.id, acc);
        }
    }
    wrt.iter()
        .map(|w| grads.get(&w.0.id).cloned().unwrap_or_else(|| Var::constant(Tensor::zeros(w.shape().to_vec()))))
        .collect()
}
