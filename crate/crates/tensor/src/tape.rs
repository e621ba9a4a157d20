//! Define-by-run computation tape.
//!
//! Every differentiable operation appends a node holding its output value and
//! the handles of its inputs. Nodes are created in execution order, so the
//! tape is topologically sorted by construction and [`Tape::backward`] only has
//! to replay adjoints from the loss node down to the first node.

use crate::error::TensorError;
use crate::kernels;
use crate::params::{ParamId, ParamStore};
use crate::shape::{self, BroadcastPlan};
use crate::tensor::Tensor;
use crate::Result;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Sqrt,
    Relu,
    Gelu,
    Tanh,
    Sigmoid,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, shared_b: bool },
    Permute(Var, Vec<usize>),
    Reshape(Var),
    BroadcastTo(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, rstd: Vec<f64> },
    Sum(Var),
    SumAxis { x: Var, axis: usize },
    Rms(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward pass.
///
/// A tape is single-use: build it, call [`Tape::backward`] once on a scalar
/// loss, read gradients, drop it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Bind a stored parameter onto this tape. Repeated calls with the same id
    /// return the same handle, so every use accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let idx = id.index();
        if idx >= self.param_vars.len() {
            self.param_vars.resize(idx + 1, None);
        }
        if let Some(v) = self.param_vars[idx] {
            return v;
        }
        let v = self.leaf(store.get(id).clone(), true);
        self.param_vars[idx] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    // ---- elementwise -------------------------------------------------

    fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = shape::broadcast_shape(&sa, &sb).map_err(|_| {
            TensorError::dim(binary_name(op), &sa, &sb)
        })?;
        let plan = BroadcastPlan::new(&sa, &sb, &out_shape);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n: usize = out_shape.iter().product();
        let mut out = Vec::with_capacity(n);
        let f = match op {
            BinaryOp::Add => |x: f64, y: f64| x + y,
            BinaryOp::Sub => |x: f64, y: f64| x - y,
            BinaryOp::Mul => |x: f64, y: f64| x * y,
            BinaryOp::Div => |x: f64, y: f64| x / y,
        };
        match plan {
            BroadcastPlan::Same => out.extend(va.iter().zip(vb).map(|(&x, &y)| f(x, y))),
            _ => {
                for i in 0..n {
                    let (ia, ib) = plan.index(i);
                    out.push(f(va[ia], vb[ib]));
                }
            }
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let x = self.value(a);
        match op {
            UnaryOp::Log | UnaryOp::Sqrt => {
                if let Some(bad) = x.data().iter().find(|v| **v < 0.0) {
                    return Err(TensorError::Domain {
                        op: if op == UnaryOp::Log { "log" } else { "sqrt" },
                        detail: format!("negative input {bad}"),
                    });
                }
            }
            _ => {}
        }
        let y = match op {
            UnaryOp::Neg => x.map(|v| -v),
            UnaryOp::Exp => x.map(f64::exp),
            UnaryOp::Log => x.map(f64::ln),
            UnaryOp::Sqrt => x.map(f64::sqrt),
            UnaryOp::Relu => x.map(|v| v.max(0.0)),
            UnaryOp::Gelu => x.map(kernels::gelu),
            UnaryOp::Tanh => x.map(f64::tanh),
            UnaryOp::Sigmoid => x.map(kernels::sigmoid),
            UnaryOp::Square => x.map(|v| v * v),
        };
        let rg = self.needs(a);
        Ok(self.push(y, Op::Unary(op, a), rg))
    }

    /// Named entry point for every elementwise kind; binary kinds need `b`.
    pub fn elementwise(&mut self, kind: &str, a: Var, b: Option<Var>) -> Result<Var> {
        let binary = match kind {
            "add" => Some(BinaryOp::Add),
            "sub" => Some(BinaryOp::Sub),
            "mul" => Some(BinaryOp::Mul),
            "div" => Some(BinaryOp::Div),
            _ => None,
        };
        if let Some(op) = binary {
            let b = b.ok_or_else(|| TensorError::Contract(format!("{kind} needs two operands")))?;
            return self.binary(op, a, b);
        }
        let op = match kind {
            "neg" => UnaryOp::Neg,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            "relu" => UnaryOp::Relu,
            "gelu" => UnaryOp::Gelu,
            "tanh" => UnaryOp::Tanh,
            "sigmoid" => UnaryOp::Sigmoid,
            "square" => UnaryOp::Square,
            other => return Err(TensorError::Contract(format!("unknown op kind {other}"))),
        };
        self.unary(op, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, a)
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, a)
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sqrt, a)
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Gelu, a)
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, a)
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, a)
    }
    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, a)
    }

    /// `c·a`
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a).map(|v| v * c);
        let rg = self.needs(a);
        self.push(y, Op::Scale(a, c), rg)
    }

    /// `a + c`
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a).map(|v| v + c);
        let rg = self.needs(a);
        self.push(y, Op::Offset(a), rg)
    }

    // ---- linear algebra ----------------------------------------------

    /// Matrix product over the last two axes. Leading batch axes must match,
    /// or `b` may be a plain matrix shared by every batch entry.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(TensorError::dim("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        let shared_b = batch_b.is_empty();
        if k != k2 || !(shared_b || batch_a == batch_b) {
            return Err(TensorError::dim("matmul", &sa, &sb));
        }
        let batch: usize = batch_a.iter().product();
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; batch * m * n];
        if shared_b {
            kernels::matmul_acc(va, vb, &mut out, batch * m, k, n);
        } else {
            for bi in 0..batch {
                kernels::matmul_acc(
                    &va[bi * m * k..(bi + 1) * m * k],
                    &vb[bi * k * n..(bi + 1) * k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut out_shape = batch_a.to_vec();
        out_shape.extend([m, n]);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::MatMul { a, b, batch, m, k, n, shared_b },
            rg,
        ))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::Contract(format!(
                "invalid permutation {perm:?} for rank {}",
                s.len()
            )));
        }
        let gather = shape::permute_gather(&s, perm);
        let src = self.value(a).data();
        let data = gather.iter().map(|&g| src[g]).collect();
        let out_shape = perm.iter().map(|&p| s[p]).collect();
        let rg = self.needs(a);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Permute(a, perm.to_vec()), rg))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(TensorError::Axis { axis: 1, rank: r });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, new_shape: &[usize]) -> Result<Var> {
        let y = self.value(a).reshape(new_shape)?;
        let rg = self.needs(a);
        Ok(self.push(y, Op::Reshape(a), rg))
    }

    pub fn broadcast_to(&mut self, a: Var, target: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let out = shape::broadcast_shape(&s, target)?;
        if out != target {
            return Err(TensorError::dim("broadcast_to", &s, target));
        }
        let plan = BroadcastPlan::new(target, &s, target);
        let src = self.value(a).data();
        let n: usize = target.iter().product();
        let data = (0..n).map(|i| src[plan.index(i).1]).collect();
        let rg = self.needs(a);
        Ok(self.push(Tensor::from_parts(target.to_vec(), data), Op::BroadcastTo(a), rg))
    }

    // ---- normalization -----------------------------------------------

    fn check_axis(&self, a: Var, axis: usize) -> Result<()> {
        let rank = self.shape(a).len();
        if axis >= rank {
            return Err(TensorError::Axis { axis, rank });
        }
        Ok(())
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis)?;
        let s = self.shape(a).to_vec();
        let (outer, len, inner) = shape::split_at_axis(&s, axis);
        let y = kernels::softmax(self.value(a).data(), outer, len, inner);
        let rg = self.needs(a);
        Ok(self.push(Tensor::from_parts(s, y), Op::Softmax { x: a, axis }, rg))
    }

    /// Zero-mean, unit-variance normalization over the last axis (no affine).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(TensorError::Contract(format!("layer_norm eps {eps} must be > 0")));
        }
        let s = self.shape(a).to_vec();
        let d = *s.last().ok_or(TensorError::Axis { axis: 0, rank: 0 })?;
        let (y, rstd) = kernels::layer_norm(self.value(a).data(), d, eps);
        let rg = self.needs(a);
        Ok(self.push(Tensor::from_parts(s, y), Op::LayerNorm { x: a, rstd }, rg))
    }

    // ---- reductions --------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        let rg = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over one axis; the axis is kept with extent 1 when `keepdim`.
    pub fn sum_axis(&mut self, a: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.check_axis(a, axis)?;
        let s = self.shape(a).to_vec();
        let (outer, len, inner) = shape::split_at_axis(&s, axis);
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let base = (o * len + j) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x[base + i];
                }
            }
        }
        let mut kept = s.clone();
        kept[axis] = 1;
        let rg = self.needs(a);
        let summed = self.push(Tensor::from_parts(kept, out), Op::SumAxis { x: a, axis }, rg);
        if keepdim {
            Ok(summed)
        } else {
            let mut squeezed = s;
            squeezed.remove(axis);
            self.reshape(summed, &squeezed)
        }
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.check_axis(a, axis)?;
        let len = self.shape(a)[axis] as f64;
        let s = self.sum_axis(a, axis, keepdim)?;
        Ok(self.scale(s, 1.0 / len))
    }

    /// Root-mean-square over all elements. The adjoint at exactly zero is
    /// taken to be zero.
    pub fn rms(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let ms = x.data().iter().map(|v| v * v).sum::<f64>() / x.numel() as f64;
        let rg = self.needs(a);
        self.push(Tensor::scalar(ms.sqrt()), Op::Rms(a), rg)
    }

    // ---- slicing -----------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of nothing".into()))?;
        self.check_axis(first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::dim("concat", &base, s));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = shape::split_at_axis(&out_shape, axis);
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let chunk = len * inner;
                out.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Concat { parts: parts.to_vec(), axis },
            rg,
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis(a, axis)?;
        let s = self.shape(a).to_vec();
        if len == 0 || start + len > s[axis] {
            return Err(TensorError::Contract(format!(
                "narrow [{start}, {}) out of extent {} on axis {axis}",
                start + len,
                s[axis]
            )));
        }
        let (outer, extent, inner) = shape::split_at_axis(&s, axis);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * extent + start) * inner;
            out.extend_from_slice(&x[from..from + len * inner]);
        }
        let mut out_shape = s;
        out_shape[axis] = len;
        let rg = self.needs(a);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Narrow { x: a, axis, start }, rg))
    }

    // ---- reverse pass ------------------------------------------------

    /// Propagate adjoints from a scalar `loss` to every leaf that requires
    /// gradients. Gradients from repeated uses accumulate additively.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            for (input, contribution) in self.adjoint(i, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to a bound parameter, if it participated.
    pub fn param_grad(&self, id: ParamId) -> Option<&Tensor> {
        let v = (*self.param_vars.get(id.index())?)?;
        self.grad(v)
    }

    fn adjoint(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Binary(op, a, b) => self.binary_adjoint(*op, *a, *b, y.shape(), g),
            Op::Unary(op, a) => {
                let x = self.value(*a).data();
                let yd = y.data();
                let gd = g.data();
                let dx: Vec<f64> = match op {
                    UnaryOp::Neg => gd.iter().map(|v| -v).collect(),
                    UnaryOp::Exp => gd.iter().zip(yd).map(|(g, y)| g * y).collect(),
                    UnaryOp::Log => gd.iter().zip(x).map(|(g, x)| g / x).collect(),
                    UnaryOp::Sqrt => gd.iter().zip(yd).map(|(g, y)| g * 0.5 / y).collect(),
                    UnaryOp::Relu => gd
                        .iter()
                        .zip(x)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    UnaryOp::Gelu => gd.iter().zip(x).map(|(g, x)| g * kernels::gelu_grad(*x)).collect(),
                    UnaryOp::Tanh => gd.iter().zip(yd).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    UnaryOp::Sigmoid => gd.iter().zip(yd).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    UnaryOp::Square => gd.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect(),
                };
                vec![(*a, Tensor::from_parts(y.shape().to_vec(), dx))]
            }
            Op::Scale(a, c) => vec![(*a, g.map(|v| v * c))],
            Op::Offset(a) => vec![(*a, g.clone())],
            Op::MatMul { a, b, batch, m, k, n, shared_b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut out = Vec::with_capacity(2);
                if self.needs(*a) {
                    let mut da = vec![0.0; va.numel()];
                    if *shared_b {
                        kernels::matmul_grad_a(g.data(), vb.data(), &mut da, batch * m, *k, *n);
                    } else {
                        for bi in 0..*batch {
                            kernels::matmul_grad_a(
                                &g.data()[bi * m * n..(bi + 1) * m * n],
                                &vb.data()[bi * k * n..(bi + 1) * k * n],
                                &mut da[bi * m * k..(bi + 1) * m * k],
                                *m,
                                *k,
                                *n,
                            );
                        }
                    }
                    out.push((*a, Tensor::from_parts(va.shape().to_vec(), da)));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; vb.numel()];
                    if *shared_b {
                        kernels::matmul_grad_b(va.data(), g.data(), &mut db, batch * m, *k, *n);
                    } else {
                        for bi in 0..*batch {
                            kernels::matmul_grad_b(
                                &va.data()[bi * m * k..(bi + 1) * m * k],
                                &g.data()[bi * m * n..(bi + 1) * m * n],
                                &mut db[bi * k * n..(bi + 1) * k * n],
                                *m,
                                *k,
                                *n,
                            );
                        }
                    }
                    out.push((*b, Tensor::from_parts(vb.shape().to_vec(), db)));
                }
                out
            }
            Op::Permute(a, perm) => {
                let gather = shape::permute_gather(self.shape(*a), perm);
                let mut dx = vec![0.0; g.numel()];
                for (gv, &src) in g.data().iter().zip(&gather) {
                    dx[src] = *gv;
                }
                vec![(*a, Tensor::from_parts(self.shape(*a).to_vec(), dx))]
            }
            Op::Reshape(a) => vec![(*a, Tensor::from_parts(self.shape(*a).to_vec(), g.data().to_vec()))],
            Op::BroadcastTo(a) => {
                let src_shape = self.shape(*a);
                let plan = BroadcastPlan::new(y.shape(), src_shape, y.shape());
                let mut dx = vec![0.0; self.value(*a).numel()];
                for (i, gv) in g.data().iter().enumerate() {
                    dx[plan.index(i).1] += gv;
                }
                vec![(*a, Tensor::from_parts(src_shape.to_vec(), dx))]
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = shape::split_at_axis(y.shape(), *axis);
                let dx = kernels::softmax_grad(y.data(), g.data(), outer, len, inner);
                vec![(*x, Tensor::from_parts(y.shape().to_vec(), dx))]
            }
            Op::LayerNorm { x, rstd } => {
                let d = *y.shape().last().expect("layer_norm rank");
                let dx = kernels::layer_norm_grad(y.data(), rstd, g.data(), d);
                vec![(*x, Tensor::from_parts(y.shape().to_vec(), dx))]
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                vec![(*a, Tensor::full(self.shape(*a), gv))]
            }
            Op::SumAxis { x, axis } => {
                let s = self.shape(*x);
                let (outer, len, inner) = shape::split_at_axis(s, *axis);
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for j in 0..len {
                        let base = (o * len + j) * inner;
                        dx[base..base + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                vec![(*x, Tensor::from_parts(s.to_vec(), dx))]
            }
            Op::Rms(a) => {
                let r = y.data()[0];
                let x = self.value(*a);
                let coeff = if r == 0.0 { 0.0 } else { g.data()[0] / (x.numel() as f64 * r) };
                vec![(*a, x.map(|v| v * coeff))]
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = shape::split_at_axis(y.shape(), *axis);
                let mut out = Vec::with_capacity(parts.len());
                let mut offset = 0;
                let total = y.shape()[*axis];
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    let mut dx = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let from = (o * total + offset) * inner;
                        dx.extend_from_slice(&g.data()[from..from + len * inner]);
                    }
                    offset += len;
                    if self.needs(p) {
                        out.push((p, Tensor::from_parts(self.shape(p).to_vec(), dx)));
                    }
                }
                out
            }
            Op::Narrow { x, axis, start } => {
                let s = self.shape(*x);
                let (outer, extent, inner) = shape::split_at_axis(s, *axis);
                let len = y.shape()[*axis];
                let mut dx = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    let to = (o * extent + start) * inner;
                    dx[to..to + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(*x, Tensor::from_parts(s.to_vec(), dx))]
            }
        }
    }

    fn binary_adjoint(&self, op: BinaryOp, a: Var, b: Var, out_shape: &[usize], g: &Tensor) -> Vec<(Var, Tensor)> {
        let (ta, tb) = (self.value(a), self.value(b));
        let plan = BroadcastPlan::new(ta.shape(), tb.shape(), out_shape);
        let (va, vb, gd) = (ta.data(), tb.data(), g.data());
        let mut da = self.needs(a).then(|| vec![0.0; va.len()]);
        let mut db = self.needs(b).then(|| vec![0.0; vb.len()]);
        for (i, &gv) in gd.iter().enumerate() {
            let (ia, ib) = plan.index(i);
            let (x, y) = (va[ia], vb[ib]);
            let (pa, pb) = match op {
                BinaryOp::Add => (gv, gv),
                BinaryOp::Sub => (gv, -gv),
                BinaryOp::Mul => (gv * y, gv * x),
                BinaryOp::Div => (gv / y, -gv * x / (y * y)),
            };
            if let Some(da) = da.as_mut() {
                da[ia] += pa;
            }
            if let Some(db) = db.as_mut() {
                db[ib] += pb;
            }
        }
        let mut out = Vec::with_capacity(2);
        if let Some(da) = da {
            out.push((a, Tensor::from_parts(ta.shape().to_vec(), da)));
        }
        if let Some(db) = db {
            out.push((b, Tensor::from_parts(tb.shape().to_vec(), db)));
        }
        out
    }
}

fn binary_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
    }
}
