//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node in
//! creation order, so the node list is already topologically sorted and
//! [`Graph::backward`] simply walks it in reverse. Only the operators the
//! viewpoint network needs are provided.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use crate::tensor::{Tensor, TensorError};

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node recorded on a particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    index: usize,
}

impl Var {
    pub fn node_id(&self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        input: usize,
        // flat input index chosen for each output cell
        argmax: Vec<usize>,
    },
    Linear {
        input: usize,
        weight: usize,
        bias: Option<usize>,
    },
    Relu(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Concat(usize, usize),
    ScaleSum {
        columns: usize,
        weights: usize,
    },
    Reshape(usize),
    Sum(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    DotConst(usize, Vec<f64>),
    Pick(usize, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    // accumulated gradient, kept for leaves only
    grad: Option<Vec<f64>>,
}

/// Computation graph for one forward pass.
#[derive(Debug)]
pub struct Graph {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<(), TensorError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn mismatch(op: &'static str, detail: alloc::string::String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

/// Output extent of a sliding window, or `None` when the window does not fit.
pub fn window_output_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

// Range of output positions `o` with `0 <= o*stride + k - pad < len`.
fn valid_range(out_len: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let top = len + pad;
    let hi = if top > k {
        ((top - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    /// Drops every recorded node. Vars issued before the call must not be reused.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.id = NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize, TensorError> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::Detached("variable belongs to a different graph"));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        let grad = match op {
            Op::Leaf if requires_grad => Some(vec![0.0; value.len()]),
            _ => None,
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad,
        });
        Var {
            graph: self.id,
            index,
        }
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Constant input: participates in the forward pass but receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Result<Var, TensorError> {
        check_finite("input", t.data())?;
        Ok(self.push(t, Op::Leaf, false))
    }

    /// Differentiable leaf whose gradient accumulates across `backward` calls.
    pub fn param(&mut self, t: Tensor) -> Result<Var, TensorError> {
        check_finite("param", t.data())?;
        Ok(self.push(t, Op::Leaf, true))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let i = self.idx(v).expect("var from another graph");
        self.val(i)
    }

    /// Accumulated gradient of a differentiable leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        let i = self.idx(v).ok()?;
        self.nodes[i].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            if let Some(g) = n.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    /// Cross-correlation of a `[c_in, h, w]` input with a
    /// `[c_out, c_in, k, k]` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let (xi, ki) = (self.idx(input)?, self.idx(kernel)?);
        let bi = bias.map(|b| self.idx(b)).transpose()?;
        let xs = self.val(xi).shape();
        let ks = self.val(ki).shape();
        if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] || ks[2] != ks[3] {
            return Err(mismatch(
                "conv2d",
                format!("input {xs:?} incompatible with kernel {ks:?}"),
            ));
        }
        let (c_in, h, w) = (xs[0], xs[1], xs[2]);
        let (c_out, k) = (ks[0], ks[2]);
        if let Some(b) = bi {
            if self.val(b).shape() != [c_out] {
                return Err(mismatch(
                    "conv2d",
                    format!("bias {:?} for {c_out} output channels", self.val(b).shape()),
                ));
            }
        }
        let (oh, ow) = match (
            window_output_len(h, k, stride, pad),
            window_output_len(w, k, stride, pad),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(TensorError::InvalidArgument {
                    op: "conv2d",
                    detail: format!("kernel {k}, stride {stride}, pad {pad} on {h}x{w}"),
                })
            }
        };
        let x = self.val(xi).data();
        let kd = self.val(ki).data();
        let mut out = vec![0.0; c_out * oh * ow];
        for co in 0..c_out {
            let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
            if let Some(b) = bi {
                plane.fill(self.val(b).data()[co]);
            }
            for ci in 0..c_in {
                let xin = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..k {
                    let (oy0, oy1) = valid_range(oh, h, ky, stride, pad);
                    for kx in 0..k {
                        let wv = kd[((co * c_in + ci) * k + ky) * k + kx];
                        let (ox0, ox1) = valid_range(ow, w, kx, stride, pad);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let row_in = &xin[iy * w..(iy + 1) * w];
                            let row_out = &mut plane[oy * ow..(oy + 1) * ow];
                            if stride == 1 {
                                let off = kx as isize - pad as isize;
                                let src = &row_in[(ox0 as isize + off) as usize
                                    ..(ox1 as isize + off) as usize];
                                for (o, s) in row_out[ox0..ox1].iter_mut().zip(src) {
                                    *o += wv * s;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    row_out[ox] += wv * row_in[ox * stride + kx - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
        check_finite("conv2d", &out)?;
        let rg = self.rg(xi) || self.rg(ki) || bi.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::from_parts(vec![c_out, oh, ow], out),
            Op::Conv2d {
                input: xi,
                kernel: ki,
                bias: bi,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Max pooling over `k x k` windows of a `[c, h, w]` input.
    ///
    /// Ties route the gradient to the first maximal cell in row-major order.
    pub fn maxpool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var, TensorError> {
        let xi = self.idx(input)?;
        let xs = self.val(xi).shape();
        if xs.len() != 3 {
            return Err(mismatch("maxpool2d", format!("expected [c, h, w], got {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = match (
            window_output_len(h, k, stride, 0),
            window_output_len(w, k, stride, 0),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(TensorError::InvalidArgument {
                    op: "maxpool2d",
                    detail: format!("window {k} stride {stride} on {h}x{w}"),
                })
            }
        };
        let x = self.val(xi).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..k {
                        let row = base + (oy * stride + ky) * w + ox * stride;
                        for j in row..row + k {
                            if x[j] > x[best] {
                                best = j;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(xi);
        Ok(self.push(
            Tensor::from_parts(vec![c, oh, ow], out),
            Op::MaxPool2d { input: xi, argmax },
            rg,
        ))
    }

    /// `weight [m, n] · input [n] (+ bias [m])`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var, TensorError> {
        let (xi, wi) = (self.idx(input)?, self.idx(weight)?);
        let bi = bias.map(|b| self.idx(b)).transpose()?;
        let ws = self.val(wi).shape();
        let n = self.val(xi).len();
        if ws.len() != 2 || ws[1] != n {
            return Err(mismatch(
                "linear",
                format!("weight {ws:?} applied to input of length {n}"),
            ));
        }
        let m = ws[0];
        if let Some(b) = bi {
            if self.val(b).len() != m {
                return Err(mismatch(
                    "linear",
                    format!("bias of length {} for {m} outputs", self.val(b).len()),
                ));
            }
        }
        let x = self.val(xi).data();
        let wd = self.val(wi).data();
        let mut out: Vec<f64> = wd
            .chunks_exact(n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        if let Some(b) = bi {
            for (o, bv) in out.iter_mut().zip(self.val(b).data()) {
                *o += bv;
            }
        }
        check_finite("linear", &out)?;
        let rg = self.rg(xi) || self.rg(wi) || bi.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::from_parts(vec![m], out),
            Op::Linear {
                input: xi,
                weight: wi,
                bias: bi,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, TensorError> {
        let xi = self.idx(input)?;
        let t = self.val(xi);
        let out = Tensor::from_parts(
            t.shape().to_vec(),
            t.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        );
        let rg = self.rg(xi);
        Ok(self.push(out, Op::Relu(xi), rg))
    }

    /// Softmax over all elements, computed with max subtraction.
    pub fn softmax(&mut self, input: Var) -> Result<Var, TensorError> {
        let xi = self.idx(input)?;
        let t = self.val(xi);
        check_finite("softmax", t.data())?;
        let out = Tensor::from_parts(t.shape().to_vec(), softmax(t.data()));
        let rg = self.rg(xi);
        Ok(self.push(out, Op::Softmax(xi), rg))
    }

    pub fn log_softmax(&mut self, input: Var) -> Result<Var, TensorError> {
        let xi = self.idx(input)?;
        let t = self.val(xi);
        check_finite("log_softmax", t.data())?;
        let out = Tensor::from_parts(t.shape().to_vec(), log_softmax(t.data()));
        check_finite("log_softmax", out.data())?;
        let rg = self.rg(xi);
        Ok(self.push(out, Op::LogSoftmax(xi), rg))
    }

    /// Concatenates two tensors as flat vectors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let mut data = self.val(ai).data().to_vec();
        data.extend_from_slice(self.val(bi).data());
        let n = data.len();
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(Tensor::from_parts(vec![n], data), Op::Concat(ai, bi), rg))
    }

    /// `Σ_{i,j} weights[i, j] · columns[:, i, j]` for `columns [d, h, w]`
    /// and `weights [h, w]`.
    pub fn scale_sum(&mut self, columns: Var, weights: Var) -> Result<Var, TensorError> {
        let (ci, wi) = (self.idx(columns)?, self.idx(weights)?);
        let cs = self.val(ci).shape();
        let ws = self.val(wi).shape();
        if cs.len() != 3 || ws.len() != 2 || cs[1] != ws[0] || cs[2] != ws[1] {
            return Err(mismatch(
                "scale_sum",
                format!("columns {cs:?} with weights {ws:?}"),
            ));
        }
        let d = cs[0];
        let hw = cs[1] * cs[2];
        let col = self.val(ci).data();
        let wd = self.val(wi).data();
        let out: Vec<f64> = (0..d)
            .map(|c| {
                col[c * hw..(c + 1) * hw]
                    .iter()
                    .zip(wd)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        check_finite("scale_sum", &out)?;
        let rg = self.rg(ci) || self.rg(wi);
        Ok(self.push(
            Tensor::from_parts(vec![d], out),
            Op::ScaleSum {
                columns: ci,
                weights: wi,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let xi = self.idx(input)?;
        let out = self.val(xi).reshaped(shape)?;
        let rg = self.rg(xi);
        Ok(self.push(out, Op::Reshape(xi), rg))
    }

    pub fn flatten(&mut self, input: Var) -> Result<Var, TensorError> {
        let n = self.value(input).len();
        self.reshape(input, &[n])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var, TensorError> {
        let xi = self.idx(input)?;
        let s: f64 = self.val(xi).data().iter().sum();
        check_finite("sum", &[s])?;
        let rg = self.rg(xi);
        Ok(self.push(Tensor::scalar(s), Op::Sum(xi), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: fn(usize, usize) -> Op,
    ) -> Result<Var, TensorError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ai), self.val(bi));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        check_finite(op, &data)?;
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(out, make(ai, bi), rg))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var, TensorError> {
        let xi = self.idx(input)?;
        let t = self.val(xi);
        let data: Vec<f64> = t.data().iter().map(|v| v * factor).collect();
        check_finite("scale", &data)?;
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        let rg = self.rg(xi);
        Ok(self.push(out, Op::Scale(xi, factor), rg))
    }

    /// Scalar `Σ_i weights[i] · input[i]` against constant weights.
    pub fn dot_const(&mut self, input: Var, weights: Vec<f64>) -> Result<Var, TensorError> {
        let xi = self.idx(input)?;
        let x = self.val(xi).data();
        if weights.len() != x.len() {
            return Err(mismatch(
                "dot_const",
                format!("{} weights for {} values", weights.len(), x.len()),
            ));
        }
        let mut s = 0.0;
        for (w, v) in weights.iter().zip(x) {
            s += w * v;
        }
        check_finite("dot_const", &[s])?;
        let rg = self.rg(xi);
        Ok(self.push(Tensor::scalar(s), Op::DotConst(xi, weights), rg))
    }

    /// Selects one element as a scalar.
    pub fn pick(&mut self, input: Var, index: usize) -> Result<Var, TensorError> {
        let xi = self.idx(input)?;
        let t = self.val(xi);
        if index >= t.len() {
            return Err(TensorError::InvalidArgument {
                op: "pick",
                detail: format!("index {index} out of {}", t.len()),
            });
        }
        let v = t.data()[index];
        let rg = self.rg(xi);
        Ok(self.push(Tensor::scalar(v), Op::Pick(xi, index), rg))
    }

    /// Accumulates `dloss/dleaf` into every differentiable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let li = self.idx(loss)?;
        if !self.val(li).is_scalar() {
            return Err(TensorError::NonScalarLoss(self.val(li).shape().to_vec()));
        }
        if !self.rg(li) {
            return Err(TensorError::Detached("loss does not depend on any parameter"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; li + 1];
        grads[li] = Some(vec![1.0]);
        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            check_finite("backward", &g)?;
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            if let Some(acc) = self.nodes[i].grad.as_mut() {
                for (a, v) in acc.iter_mut().zip(&g) {
                    *a += v;
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let acc = |grads: &mut [Option<Vec<f64>>], j: usize, nodes: &[Node]| -> usize {
            if grads[j].is_none() {
                grads[j] = Some(vec![0.0; nodes[j].value.len()]);
            }
            j
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let (xi, ki, s, p) = (*input, *kernel, *stride, *pad);
                let xs = self.val(xi).shape();
                let (c_in, h, w) = (xs[0], xs[1], xs[2]);
                let ks = self.val(ki).shape();
                let (c_out, k) = (ks[0], ks[2]);
                let os = node.value.shape();
                let (oh, ow) = (os[1], os[2]);
                if let Some(b) = *bias {
                    if self.rg(b) {
                        acc(grads, b, &self.nodes);
                        let gb = grads[b].as_mut().unwrap();
                        for co in 0..c_out {
                            gb[co] += g[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
                        }
                    }
                }
                let x = self.val(xi).data();
                let kd = self.val(ki).data();
                if self.rg(ki) {
                    acc(grads, ki, &self.nodes);
                    let gk = grads[ki].as_mut().unwrap();
                    for co in 0..c_out {
                        let gplane = &g[co * oh * ow..(co + 1) * oh * ow];
                        for ci in 0..c_in {
                            let xin = &x[ci * h * w..(ci + 1) * h * w];
                            for ky in 0..k {
                                let (oy0, oy1) = valid_range(oh, h, ky, s, p);
                                for kx in 0..k {
                                    let (ox0, ox1) = valid_range(ow, w, kx, s, p);
                                    if ox0 >= ox1 {
                                        continue;
                                    }
                                    let mut total = 0.0;
                                    for oy in oy0..oy1 {
                                        let iy = oy * s + ky - p;
                                        let row_in = &xin[iy * w..(iy + 1) * w];
                                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                                        if s == 1 {
                                            let start = ox0 + kx - p;
                                            total += grow[ox0..ox1]
                                                .iter()
                                                .zip(&row_in[start..start + (ox1 - ox0)])
                                                .map(|(a, b)| a * b)
                                                .sum::<f64>();
                                        } else {
                                            for ox in ox0..ox1 {
                                                total += grow[ox] * row_in[ox * s + kx - p];
                                            }
                                        }
                                    }
                                    gk[((co * c_in + ci) * k + ky) * k + kx] += total;
                                }
                            }
                        }
                    }
                }
                if self.rg(xi) {
                    acc(grads, xi, &self.nodes);
                    let gx = grads[xi].as_mut().unwrap();
                    for co in 0..c_out {
                        let gplane = &g[co * oh * ow..(co + 1) * oh * ow];
                        for ci in 0..c_in {
                            let gin = &mut gx[ci * h * w..(ci + 1) * h * w];
                            for ky in 0..k {
                                let (oy0, oy1) = valid_range(oh, h, ky, s, p);
                                for kx in 0..k {
                                    let wv = kd[((co * c_in + ci) * k + ky) * k + kx];
                                    let (ox0, ox1) = valid_range(ow, w, kx, s, p);
                                    if ox0 >= ox1 {
                                        continue;
                                    }
                                    for oy in oy0..oy1 {
                                        let iy = oy * s + ky - p;
                                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                                        let row = &mut gin[iy * w..(iy + 1) * w];
                                        if s == 1 {
                                            let start = ox0 + kx - p;
                                            for (r, gv) in row[start..start + (ox1 - ox0)]
                                                .iter_mut()
                                                .zip(&grow[ox0..ox1])
                                            {
                                                *r += wv * gv;
                                            }
                                        } else {
                                            for ox in ox0..ox1 {
                                                row[ox * s + kx - p] += wv * grow[ox];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let j = acc(grads, *input, &self.nodes);
                let gx = grads[j].as_mut().unwrap();
                for (&src, gv) in argmax.iter().zip(g) {
                    gx[src] += gv;
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (xi, wi) = (*input, *weight);
                let x = self.val(xi).data();
                let wd = self.val(wi).data();
                let n = x.len();
                if let Some(b) = *bias {
                    if self.rg(b) {
                        acc(grads, b, &self.nodes);
                        for (a, v) in grads[b].as_mut().unwrap().iter_mut().zip(g) {
                            *a += v;
                        }
                    }
                }
                if self.rg(wi) {
                    acc(grads, wi, &self.nodes);
                    let gw = grads[wi].as_mut().unwrap();
                    for (row, gv) in gw.chunks_exact_mut(n).zip(g) {
                        if *gv != 0.0 {
                            for (r, xv) in row.iter_mut().zip(x) {
                                *r += gv * xv;
                            }
                        }
                    }
                }
                if self.rg(xi) {
                    acc(grads, xi, &self.nodes);
                    let gx = grads[xi].as_mut().unwrap();
                    for (row, gv) in wd.chunks_exact(n).zip(g) {
                        if *gv != 0.0 {
                            for (r, wv) in gx.iter_mut().zip(row) {
                                *r += gv * wv;
                            }
                        }
                    }
                }
            }
            Op::Relu(xi) => {
                let j = acc(grads, *xi, &self.nodes);
                let x = self.val(j).data();
                let gx = grads[j].as_mut().unwrap();
                for ((a, gv), xv) in gx.iter_mut().zip(g).zip(x) {
                    if *xv > 0.0 {
                        *a += gv;
                    }
                }
            }
            Op::Softmax(xi) => {
                let y = node.value.data();
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                let j = acc(grads, *xi, &self.nodes);
                for ((a, gv), yv) in grads[j].as_mut().unwrap().iter_mut().zip(g).zip(y) {
                    *a += yv * (gv - dot);
                }
            }
            Op::LogSoftmax(xi) => {
                let y = node.value.data();
                let total: f64 = g.iter().sum();
                let j = acc(grads, *xi, &self.nodes);
                for ((a, gv), yv) in grads[j].as_mut().unwrap().iter_mut().zip(g).zip(y) {
                    *a += gv - libm::exp(*yv) * total;
                }
            }
            Op::Concat(a, b) => {
                let na = self.val(*a).len();
                if self.rg(*a) {
                    acc(grads, *a, &self.nodes);
                    for (t, v) in grads[*a].as_mut().unwrap().iter_mut().zip(&g[..na]) {
                        *t += v;
                    }
                }
                if self.rg(*b) {
                    acc(grads, *b, &self.nodes);
                    for (t, v) in grads[*b].as_mut().unwrap().iter_mut().zip(&g[na..]) {
                        *t += v;
                    }
                }
            }
            Op::ScaleSum { columns, weights } => {
                let (ci, wi) = (*columns, *weights);
                let col = self.val(ci).data();
                let wd = self.val(wi).data();
                let hw = wd.len();
                if self.rg(ci) {
                    acc(grads, ci, &self.nodes);
                    let gc = grads[ci].as_mut().unwrap();
                    for (c, gv) in g.iter().enumerate() {
                        for (t, wv) in gc[c * hw..(c + 1) * hw].iter_mut().zip(wd) {
                            *t += gv * wv;
                        }
                    }
                }
                if self.rg(wi) {
                    acc(grads, wi, &self.nodes);
                    let gw = grads[wi].as_mut().unwrap();
                    for (c, gv) in g.iter().enumerate() {
                        for (t, cv) in gw.iter_mut().zip(&col[c * hw..(c + 1) * hw]) {
                            *t += gv * cv;
                        }
                    }
                }
            }
            Op::Reshape(xi) => {
                let j = acc(grads, *xi, &self.nodes);
                for (t, v) in grads[j].as_mut().unwrap().iter_mut().zip(g) {
                    *t += v;
                }
            }
            Op::Sum(xi) => {
                let j = acc(grads, *xi, &self.nodes);
                for t in grads[j].as_mut().unwrap().iter_mut() {
                    *t += g[0];
                }
            }
            Op::Add(a, b) => {
                for &j in &[*a, *b] {
                    if self.rg(j) {
                        acc(grads, j, &self.nodes);
                        for (t, v) in grads[j].as_mut().unwrap().iter_mut().zip(g) {
                            *t += v;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    acc(grads, a, &self.nodes);
                    let other = self.val(b).data();
                    for ((t, v), o) in grads[a].as_mut().unwrap().iter_mut().zip(g).zip(other) {
                        *t += v * o;
                    }
                }
                if self.rg(b) {
                    acc(grads, b, &self.nodes);
                    let other = self.val(a).data();
                    for ((t, v), o) in grads[b].as_mut().unwrap().iter_mut().zip(g).zip(other) {
                        *t += v * o;
                    }
                }
            }
            Op::Scale(xi, f) => {
                let j = acc(grads, *xi, &self.nodes);
                for (t, v) in grads[j].as_mut().unwrap().iter_mut().zip(g) {
                    *t += v * f;
                }
            }
            Op::DotConst(xi, w) => {
                let j = acc(grads, *xi, &self.nodes);
                for (t, wv) in grads[j].as_mut().unwrap().iter_mut().zip(w) {
                    *t += g[0] * wv;
                }
            }
            Op::Pick(xi, index) => {
                let j = acc(grads, *xi, &self.nodes);
                grads[j].as_mut().unwrap()[*index] += g[0];
            }
        }
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| libm::exp(v - m)).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = x.iter().map(|v| libm::exp(v - m)).sum();
    let lz = libm::log(z);
    x.iter().map(|v| v - m - lz).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn identity_conv_is_identity() {
        let mut g = Graph::new();
        let x = Tensor::from_fn(&[1, 3, 4], |i| i as f64 * 0.5 - 1.0);
        let xv = g.input(x.clone()).unwrap();
        let k = g.param(Tensor::filled(&[1, 1, 1, 1], 1.0)).unwrap();
        let b = g.param(Tensor::zeros(&[1])).unwrap();
        let y = g.conv2d(xv, k, Some(b), 1, 0).unwrap();
        assert_eq!(g.value(y).data(), x.data());
    }

    #[test]
    fn all_ones_conv_sums_window() {
        let mut g = Graph::new();
        let x = g.input(Tensor::filled(&[1, 2, 2], 1.0)).unwrap();
        let k = g.param(Tensor::filled(&[1, 1, 2, 2], 1.0)).unwrap();
        let y = g.conv2d(x, k, None, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1]);
        assert_eq!(g.value(y).data(), &[4.0]);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 3, 3])).unwrap();
        let k = g.param(Tensor::zeros(&[1, 1, 3, 3])).unwrap();
        assert!(matches!(
            g.conv2d(x, k, None, 1, 0),
            Err(TensorError::ShapeMismatch { .. })
        ));
        let k = g.param(Tensor::zeros(&[1, 2, 5, 5])).unwrap();
        assert!(g.conv2d(x, k, None, 1, 0).is_err());
        assert!(g.conv2d(x, k, None, 1, 1).is_ok());
    }

    #[test]
    fn maxpool_routes_to_single_max() {
        let mut g = Graph::new();
        let mut data = vec![0.0; 16];
        data[6] = 9.0;
        let x = g.param(Tensor::new(&[1, 4, 4], data).unwrap()).unwrap();
        let y = g.maxpool2d(x, 4, 4).unwrap();
        assert_eq!(g.value(y).data(), &[9.0]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        let mut expect = vec![0.0; 16];
        expect[6] = 1.0;
        assert_eq!(g.grad(x).unwrap(), &expect[..]);
    }

    #[test]
    fn maxpool_tie_goes_to_first_index() {
        let mut g = Graph::new();
        let x = g.param(Tensor::filled(&[1, 2, 2], 3.0)).unwrap();
        let y = g.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[3.0]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
        assert!(g.maxpool2d(x, 3, 1).is_err());
    }

    #[test]
    fn linear_identity_and_zero() {
        let mut g = Graph::new();
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let w = g.param(eye).unwrap();
        let x = g.input(Tensor::vector(vec![0.3, -2.0, 5.0])).unwrap();
        let y = g.linear(x, w, None).unwrap();
        assert_eq!(g.value(y).data(), &[0.3, -2.0, 5.0]);
        let z = g.input(Tensor::zeros(&[3])).unwrap();
        let y = g.linear(z, w, None).unwrap();
        assert_eq!(g.value(y).data(), &[0.0; 3]);
        let bad = g.input(Tensor::zeros(&[4])).unwrap();
        assert!(g.linear(bad, w, None).is_err());
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[5])).unwrap();
        let y = g.softmax(x).unwrap();
        assert!(approx(g.value(y).data(), &[0.2; 5], 1e-15));
    }

    #[test]
    fn scale_sum_one_hot_selects_column() {
        let mut g = Graph::new();
        let cols = Tensor::from_fn(&[3, 2, 2], |i| i as f64 + 1.0);
        let c = g.input(cols).unwrap();
        let mut w = vec![0.0; 4];
        w[2] = 1.0;
        let wv = g.input(Tensor::new(&[2, 2], w).unwrap()).unwrap();
        let y = g.scale_sum(c, wv).unwrap();
        // column (1, 0) of each channel
        assert_eq!(g.value(y).data(), &[3.0, 7.0, 11.0]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, -2.0, 3.0])).unwrap();
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
        // accumulates without reset
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
        g.zero_grad();
        assert_eq!(g.grad(x).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn backward_of_half_squared_norm_is_identity() {
        let mut g = Graph::new();
        let data = vec![0.5, -1.5, 2.0, 0.25];
        let x = g.param(Tensor::vector(data.clone())).unwrap();
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let l = g.scale(s, 0.5).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &data[..]);
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
        let c = g.input(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(g.backward(c), Err(TensorError::Detached(_))));
        let mut other = Graph::new();
        let y = other.param(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(g.backward(y), Err(TensorError::Detached(_))));
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        assert!(g.input(Tensor::vector(vec![f64::NAN])).is_err());
        let x = g.input(Tensor::vector(vec![1e308, 1e308])).unwrap();
        assert!(matches!(g.sum(x), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn output_shapes_follow_closed_form() {
        for h in 3..9 {
            for k in 1..=h {
                for stride in 1..4 {
                    for pad in 0..3 {
                        let mut g = Graph::new();
                        let x = g.input(Tensor::zeros(&[1, h, h + 1])).unwrap();
                        let kern = g.input(Tensor::zeros(&[1, 1, k, k])).unwrap();
                        let y = g.conv2d(x, kern, None, stride, pad).unwrap();
                        let eh = (h + 2 * pad - k) / stride + 1;
                        let ew = (h + 1 + 2 * pad - k) / stride + 1;
                        assert_eq!(g.value(y).shape(), &[1, eh, ew]);
                        let p = g.maxpool2d(x, k, stride).unwrap();
                        assert_eq!(
                            g.value(p).shape(),
                            &[1, (h - k) / stride + 1, (h + 1 - k) / stride + 1]
                        );
                    }
                }
            }
        }
    }
}
