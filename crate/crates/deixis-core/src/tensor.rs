//! Dense f64 tensors with reverse-mode differentiation.
//!
//! The engine is deliberately small: it records exactly the operations the
//! referencing models need (same-padded 2D convolution, temporal average
//! pooling, global average pooling, ReLU, sigmoid, concatenation, flatten,
//! dense, the angular-distance loss and binary cross-entropy) on a tape and
//! replays it backwards once. All computation is sequential with a fixed
//! summation order, so a fixed seed reproduces losses bit for bit.

use crate::math;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Cosine clamp used by the angular loss for gradient stability.
pub const MAD_COS_CLAMP: f64 = 1e-7;
/// Probability clamp used by binary cross-entropy.
pub const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    ShapeMismatch(String),
    /// A zero-norm row where a direction is required.
    DegenerateVector,
    /// API misuse, e.g. backward on an already-consumed tape.
    Usage(&'static str),
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch(s) => write!(f, "shape mismatch: {s}"),
            TensorError::DegenerateVector => write!(f, "degenerate (zero-norm) vector"),
            TensorError::Usage(s) => write!(f, "usage error: {s}"),
        }
    }
}

impl core::error::Error for TensorError {}

fn shape_err(msg: alloc::string::String) -> TensorError {
    TensorError::ShapeMismatch(msg)
}

/// Row-major dense tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "value count must match shape"
        );
        debug_assert!(values.iter().all(|v| v.is_finite()), "non-finite tensor");
        Tensor {
            shape: shape.to_vec(),
            values,
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_values(&[1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1);
        self.values[0]
    }

    fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Padding of a same-padded convolution axis: (before, after).
fn same_padding(k: usize) -> (usize, usize) {
    ((k - 1) / 2, k - 1 - (k - 1) / 2)
}

enum Op {
    Leaf,
    Conv2d {
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
    },
    /// Mean over pairs of rows (temporal axis); an odd trailing row passes
    /// through unchanged.
    AvgPoolRows {
        x: NodeId,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    Relu {
        x: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    Concat {
        xs: Vec<NodeId>,
        axis: usize,
    },
    Flatten {
        x: NodeId,
    },
    Dense {
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    MadLoss {
        pred: NodeId,
        target: Tensor,
        /// Per-row (cosine after clamping, clamped flag, ‖pred‖, ‖target‖).
        rows: Vec<(f64, bool, f64, f64)>,
    },
    BceLoss {
        p: NodeId,
        target: Tensor,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Per-node gradients produced by [`Graph::backward`], indexed by `NodeId`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of a parameter node; zero tensor if the node never received
    /// a contribution (e.g. dead ReLU paths).
    pub fn of(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

/// Operation tape. Create one per forward pass, record operations, call
/// [`Graph::backward`] once on the scalar loss node.
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf; no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, false, Op::Leaf)
    }

    /// Trainable leaf; gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Same-padded cross-correlation plus per-channel bias.
    /// `x: [b, h, w, c_in]`, `kernel: [kh, kw, c_in, c_out]`, `bias: [c_out]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, TensorError> {
        let (xs, ks, bs) = (
            self.value(x).shape().to_vec(),
            self.value(kernel).shape().to_vec(),
            self.value(bias).shape().to_vec(),
        );
        if xs.len() != 4 || ks.len() != 4 || bs.len() != 1 || xs[3] != ks[2] || bs[0] != ks[3] {
            return Err(shape_err(alloc::format!(
                "conv2d x{xs:?} kernel{ks:?} bias{bs:?}"
            )));
        }
        let (b, h, w, cin) = (xs[0], xs[1], xs[2], xs[3]);
        let (kh, kw, _, cout) = (ks[0], ks[1], ks[2], ks[3]);
        let (pt, _) = same_padding(kh);
        let (pl, _) = same_padding(kw);
        let xv = self.value(x).values();
        let kv = self.value(kernel).values();
        let bv = self.value(bias).values();
        let mut out = vec![0.0; b * h * w * cout];
        let mut acc = vec![0.0; cout];
        for bi in 0..b {
            for i in 0..h {
                for j in 0..w {
                    acc.copy_from_slice(bv);
                    for u in 0..kh {
                        let xi = (i + u) as isize - pt as isize;
                        if xi < 0 || xi >= h as isize {
                            continue;
                        }
                        for v in 0..kw {
                            let xj = (j + v) as isize - pl as isize;
                            if xj < 0 || xj >= w as isize {
                                continue;
                            }
                            let xbase = ((bi * h + xi as usize) * w + xj as usize) * cin;
                            let kbase = (u * kw + v) * cin * cout;
                            for c in 0..cin {
                                let xval = xv[xbase + c];
                                let krow = &kv[kbase + c * cout..kbase + (c + 1) * cout];
                                for (o, k) in krow.iter().enumerate() {
                                    acc[o] += xval * k;
                                }
                            }
                        }
                    }
                    let obase = ((bi * h + i) * w + j) * cout;
                    out[obase..obase + cout].copy_from_slice(&acc);
                }
            }
        }
        let req = self.requires(&[x, kernel, bias]);
        Ok(self.push(
            Tensor::from_values(&[b, h, w, cout], out),
            req,
            Op::Conv2d { x, kernel, bias },
        ))
    }

    /// 2x1 average pooling along the row (temporal) axis; odd trailing rows
    /// pass through.
    pub fn avg_pool_rows(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(shape_err(alloc::format!("avg_pool_rows x{xs:?}")));
        }
        let (b, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        let oh = h.div_ceil(2);
        let xv = self.value(x).values();
        let mut out = vec![0.0; b * oh * w * c];
        let row = w * c;
        for bi in 0..b {
            for p in 0..oh {
                let r0 = 2 * p;
                let obase = (bi * oh + p) * row;
                let ibase = (bi * h + r0) * row;
                if r0 + 1 < h {
                    for k in 0..row {
                        out[obase + k] = 0.5 * (xv[ibase + k] + xv[ibase + row + k]);
                    }
                } else {
                    out[obase..obase + row].copy_from_slice(&xv[ibase..ibase + row]);
                }
            }
        }
        let req = self.requires(&[x]);
        Ok(self.push(
            Tensor::from_values(&[b, oh, w, c], out),
            req,
            Op::AvgPoolRows { x },
        ))
    }

    /// Mean over the two spatial axes: `[b,h,w,c] -> [b,c]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(shape_err(alloc::format!("global_avg_pool x{xs:?}")));
        }
        let (b, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        let xv = self.value(x).values();
        let mut out = vec![0.0; b * c];
        for bi in 0..b {
            for i in 0..h {
                for j in 0..w {
                    let base = ((bi * h + i) * w + j) * c;
                    for k in 0..c {
                        out[bi * c + k] += xv[base + k];
                    }
                }
            }
        }
        let inv = 1.0 / (h * w) as f64;
        for v in out.iter_mut() {
            *v *= inv;
        }
        let req = self.requires(&[x]);
        Ok(self.push(
            Tensor::from_values(&[b, c], out),
            req,
            Op::GlobalAvgPool { x },
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self
            .value(x)
            .values()
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        let shape = self.value(x).shape().to_vec();
        let req = self.requires(&[x]);
        self.push(Tensor::from_values(&shape, out), req, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self
            .value(x)
            .values()
            .iter()
            .map(|&v| 1.0 / (1.0 + math::exp(-v)))
            .collect();
        let shape = self.value(x).shape().to_vec();
        let req = self.requires(&[x]);
        self.push(Tensor::from_values(&shape, out), req, Op::Sigmoid { x })
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId, TensorError> {
        if xs.is_empty() {
            return Err(shape_err("concat of zero tensors".into()));
        }
        let first = self.value(xs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(shape_err(alloc::format!(
                "concat axis {axis} out of rank {}",
                first.len()
            )));
        }
        let mut axis_total = 0;
        for &id in xs {
            let s = self.value(id).shape();
            if s.len() != first.len() {
                return Err(shape_err("concat rank mismatch".into()));
            }
            for (d, (&a, &b)) in s.iter().zip(first.iter()).enumerate() {
                if d != axis && a != b {
                    return Err(shape_err(alloc::format!(
                        "concat extent mismatch at axis {d}: {a} vs {b}"
                    )));
                }
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0; shape.iter().product()];
        let out_stride = axis_total * inner;
        let mut offset = 0;
        for &id in xs {
            let s = self.value(id).shape();
            let chunk = s[axis] * inner;
            let v = self.value(id).values();
            for oi in 0..outer {
                out[oi * out_stride + offset..oi * out_stride + offset + chunk]
                    .copy_from_slice(&v[oi * chunk..(oi + 1) * chunk]);
            }
            offset += chunk;
        }
        let req = self.requires(xs);
        Ok(self.push(
            Tensor::from_values(&shape, out),
            req,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        ))
    }

    /// `[b, ...] -> [b, prod(...)]`.
    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).shape().to_vec();
        let b = s[0];
        let rest: usize = s[1..].iter().product();
        let values = self.value(x).values().to_vec();
        let req = self.requires(&[x]);
        self.push(
            Tensor::from_values(&[b, rest], values),
            req,
            Op::Flatten { x },
        )
    }

    /// Fully connected layer: `x [b,n] * weight [n,m] + bias [m]`.
    pub fn dense(
        &mut self,
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, TensorError> {
        let (xs, ws, bs) = (
            self.value(x).shape().to_vec(),
            self.value(weight).shape().to_vec(),
            self.value(bias).shape().to_vec(),
        );
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(shape_err(alloc::format!(
                "dense x{xs:?} weight{ws:?} bias{bs:?}"
            )));
        }
        let (b, n, m) = (xs[0], xs[1], ws[1]);
        let xv = self.value(x).values();
        let wv = self.value(weight).values();
        let bv = self.value(bias).values();
        let mut out = vec![0.0; b * m];
        for bi in 0..b {
            let orow = &mut out[bi * m..(bi + 1) * m];
            orow.copy_from_slice(bv);
            for k in 0..n {
                let xval = xv[bi * n + k];
                let wrow = &wv[k * m..(k + 1) * m];
                for (o, w) in wrow.iter().enumerate() {
                    orow[o] += xval * w;
                }
            }
        }
        let req = self.requires(&[x, weight, bias]);
        Ok(self.push(
            Tensor::from_values(&[b, m], out),
            req,
            Op::Dense { x, weight, bias },
        ))
    }

    /// Mean angular distance (radians) between predicted and target rows of
    /// a `[b,3]` tensor. The cosine is clamped away from ±1 for gradient
    /// stability; a zero-norm prediction row is an error.
    pub fn mad_loss(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId, TensorError> {
        let ps = self.value(pred).shape().to_vec();
        if ps.len() != 2 || ps[1] != 3 || !self.value(pred).same_shape(target) {
            return Err(shape_err(alloc::format!(
                "mad_loss pred{ps:?} target{:?}",
                target.shape()
            )));
        }
        let b = ps[0];
        let pv = self.value(pred).values();
        let tv = target.values();
        let mut rows = Vec::with_capacity(b);
        let mut total = 0.0;
        for i in 0..b {
            let p = &pv[i * 3..(i + 1) * 3];
            let g = &tv[i * 3..(i + 1) * 3];
            let np = math::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
            let ng = math::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
            if np < 1e-12 || ng < 1e-12 {
                return Err(TensorError::DegenerateVector);
            }
            let c = (p[0] * g[0] + p[1] * g[1] + p[2] * g[2]) / (np * ng);
            let lo = -1.0 + MAD_COS_CLAMP;
            let hi = 1.0 - MAD_COS_CLAMP;
            let clamped = !(lo..=hi).contains(&c);
            let cc = math::clamp(c, lo, hi);
            total += math::acos(cc);
            rows.push((cc, clamped, np, ng));
        }
        let loss = total / b as f64;
        let req = self.requires(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            req,
            Op::MadLoss {
                pred,
                target: target.clone(),
                rows,
            },
        ))
    }

    /// Mean binary cross-entropy between probabilities `p [b,1]` and 0/1
    /// targets, with probabilities clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce_loss(&mut self, p: NodeId, target: &Tensor) -> Result<NodeId, TensorError> {
        let ps = self.value(p).shape().to_vec();
        if ps.len() != 2 || ps[1] != 1 || !self.value(p).same_shape(target) {
            return Err(shape_err(alloc::format!(
                "bce_loss p{ps:?} target{:?}",
                target.shape()
            )));
        }
        let b = ps[0];
        let pv = self.value(p).values();
        let tv = target.values();
        let mut total = 0.0;
        for i in 0..b {
            let pc = math::clamp(pv[i], BCE_EPS, 1.0 - BCE_EPS);
            total -= tv[i] * math::ln(pc) + (1.0 - tv[i]) * math::ln(1.0 - pc);
        }
        let loss = total / b as f64;
        let req = self.requires(&[p]);
        Ok(self.push(
            Tensor::scalar(loss),
            req,
            Op::BceLoss {
                p,
                target: target.clone(),
            },
        ))
    }

    /// Reverse accumulation from a scalar loss node. Each node is visited
    /// exactly once in reverse creation (topological) order. The tape is
    /// consumed; recording must be repeated before another backward pass.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::Usage("backward on a consumed tape"));
        }
        self.consumed = true;
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward expects a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let gy = grads[id].clone().expect("checked above");
            self.dispatch(id, &gy, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, contrib: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                for (a, b) in g.values_mut().iter_mut().zip(contrib.values()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn dispatch(&self, id: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Conv2d { x, kernel, bias } => {
                let xs = self.value(*x).shape();
                let ks = self.value(*kernel).shape();
                let (b, h, w, cin) = (xs[0], xs[1], xs[2], xs[3]);
                let (kh, kw, cout) = (ks[0], ks[1], ks[3]);
                let (pt, _) = same_padding(kh);
                let (pl, _) = same_padding(kw);
                let xv = self.value(*x).values();
                let kv = self.value(*kernel).values();
                let gyv = gy.values();
                let need_dx = self.nodes[x.0].requires_grad;
                let need_dk = self.nodes[kernel.0].requires_grad;
                let need_db = self.nodes[bias.0].requires_grad;
                let mut dx = if need_dx {
                    vec![0.0; xv.len()]
                } else {
                    Vec::new()
                };
                let mut dk = if need_dk {
                    vec![0.0; kv.len()]
                } else {
                    Vec::new()
                };
                let mut db = if need_db { vec![0.0; cout] } else { Vec::new() };
                for bi in 0..b {
                    for i in 0..h {
                        for j in 0..w {
                            let gbase = ((bi * h + i) * w + j) * cout;
                            let grow = &gyv[gbase..gbase + cout];
                            if need_db {
                                for (o, g) in grow.iter().enumerate() {
                                    db[o] += g;
                                }
                            }
                            for u in 0..kh {
                                let xi = (i + u) as isize - pt as isize;
                                if xi < 0 || xi >= h as isize {
                                    continue;
                                }
                                for v in 0..kw {
                                    let xj = (j + v) as isize - pl as isize;
                                    if xj < 0 || xj >= w as isize {
                                        continue;
                                    }
                                    let xbase = ((bi * h + xi as usize) * w + xj as usize) * cin;
                                    let kbase = (u * kw + v) * cin * cout;
                                    for c in 0..cin {
                                        let krow = &kv[kbase + c * cout..kbase + (c + 1) * cout];
                                        if need_dx {
                                            let mut acc = 0.0;
                                            for (o, k) in krow.iter().enumerate() {
                                                acc += grow[o] * k;
                                            }
                                            dx[xbase + c] += acc;
                                        }
                                        if need_dk {
                                            let xval = xv[xbase + c];
                                            let drow =
                                                &mut dk[kbase + c * cout..kbase + (c + 1) * cout];
                                            for (o, d) in drow.iter_mut().enumerate() {
                                                *d += xval * grow[o];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if need_dx {
                    self.accumulate(grads, *x, Tensor::from_values(xs, dx));
                }
                if need_dk {
                    self.accumulate(grads, *kernel, Tensor::from_values(ks, dk));
                }
                if need_db {
                    self.accumulate(grads, *bias, Tensor::from_values(&[cout], db));
                }
            }
            Op::AvgPoolRows { x } => {
                let xs = self.value(*x).shape();
                let (b, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
                let oh = h.div_ceil(2);
                let row = w * c;
                let gyv = gy.values();
                let mut dx = vec![0.0; b * h * w * c];
                for bi in 0..b {
                    for p in 0..oh {
                        let r0 = 2 * p;
                        let gbase = (bi * oh + p) * row;
                        let ibase = (bi * h + r0) * row;
                        if r0 + 1 < h {
                            for k in 0..row {
                                let g = 0.5 * gyv[gbase + k];
                                dx[ibase + k] += g;
                                dx[ibase + row + k] += g;
                            }
                        } else {
                            for k in 0..row {
                                dx[ibase + k] += gyv[gbase + k];
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_values(xs, dx));
            }
            Op::GlobalAvgPool { x } => {
                let xs = self.value(*x).shape();
                let (b, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
                let inv = 1.0 / (h * w) as f64;
                let gyv = gy.values();
                let mut dx = vec![0.0; b * h * w * c];
                for bi in 0..b {
                    for i in 0..h {
                        for j in 0..w {
                            let base = ((bi * h + i) * w + j) * c;
                            for k in 0..c {
                                dx[base + k] = gyv[bi * c + k] * inv;
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_values(xs, dx));
            }
            Op::Relu { x } => {
                let xv = self.value(*x).values();
                let dx: Vec<f64> = xv
                    .iter()
                    .zip(gy.values())
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_values(self.value(*x).shape(), dx));
            }
            Op::Sigmoid { x } => {
                let yv = self.nodes[id].value.values();
                let dx: Vec<f64> = yv
                    .iter()
                    .zip(gy.values())
                    .map(|(&s, &g)| g * s * (1.0 - s))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_values(self.value(*x).shape(), dx));
            }
            Op::Concat { xs, axis } => {
                let shape = self.nodes[id].value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let out_stride = shape[*axis] * inner;
                let gyv = gy.values();
                let mut offset = 0;
                for &xid in xs {
                    let s = self.value(xid).shape();
                    let chunk = s[*axis] * inner;
                    if self.nodes[xid.0].requires_grad {
                        let mut dx = vec![0.0; self.value(xid).len()];
                        for oi in 0..outer {
                            dx[oi * chunk..(oi + 1) * chunk].copy_from_slice(
                                &gyv[oi * out_stride + offset..oi * out_stride + offset + chunk],
                            );
                        }
                        self.accumulate(grads, xid, Tensor::from_values(s, dx));
                    }
                    offset += chunk;
                }
            }
            Op::Flatten { x } => {
                let dx = Tensor::from_values(self.value(*x).shape(), gy.values().to_vec());
                self.accumulate(grads, *x, dx);
            }
            Op::Dense { x, weight, bias } => {
                let xs = self.value(*x).shape();
                let ws = self.value(*weight).shape();
                let (b, n, m) = (xs[0], xs[1], ws[1]);
                let xv = self.value(*x).values();
                let wv = self.value(*weight).values();
                let gyv = gy.values();
                if self.nodes[x.0].requires_grad {
                    let mut dx = vec![0.0; b * n];
                    for bi in 0..b {
                        let grow = &gyv[bi * m..(bi + 1) * m];
                        for k in 0..n {
                            let wrow = &wv[k * m..(k + 1) * m];
                            let mut acc = 0.0;
                            for (o, w) in wrow.iter().enumerate() {
                                acc += grow[o] * w;
                            }
                            dx[bi * n + k] = acc;
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_values(xs, dx));
                }
                if self.nodes[weight.0].requires_grad {
                    let mut dw = vec![0.0; n * m];
                    for bi in 0..b {
                        let grow = &gyv[bi * m..(bi + 1) * m];
                        for k in 0..n {
                            let xval = xv[bi * n + k];
                            let drow = &mut dw[k * m..(k + 1) * m];
                            for (o, d) in drow.iter_mut().enumerate() {
                                *d += xval * grow[o];
                            }
                        }
                    }
                    self.accumulate(grads, *weight, Tensor::from_values(ws, dw));
                }
                if self.nodes[bias.0].requires_grad {
                    let mut db = vec![0.0; m];
                    for bi in 0..b {
                        for o in 0..m {
                            db[o] += gyv[bi * m + o];
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::from_values(&[m], db));
                }
            }
            Op::MadLoss { pred, target, rows } => {
                let b = rows.len();
                let pv = self.value(*pred).values();
                let tv = target.values();
                let g0 = gy.item() / b as f64;
                let mut dp = vec![0.0; b * 3];
                for (i, &(cc, clamped, np, ng)) in rows.iter().enumerate() {
                    if clamped {
                        continue;
                    }
                    let dacos = -1.0 / math::sqrt(1.0 - cc * cc);
                    let p = &pv[i * 3..(i + 1) * 3];
                    let g = &tv[i * 3..(i + 1) * 3];
                    for d in 0..3 {
                        let dc = g[d] / (np * ng) - cc * p[d] / (np * np);
                        dp[i * 3 + d] = g0 * dacos * dc;
                    }
                }
                self.accumulate(
                    grads,
                    *pred,
                    Tensor::from_values(self.value(*pred).shape(), dp),
                );
            }
            Op::BceLoss { p, target } => {
                let pv = self.value(*p).values();
                let tv = target.values();
                let b = pv.len();
                let g0 = gy.item() / b as f64;
                let dp: Vec<f64> = pv
                    .iter()
                    .zip(tv)
                    .map(|(&pi, &yi)| {
                        if !(BCE_EPS..=1.0 - BCE_EPS).contains(&pi) {
                            0.0
                        } else {
                            g0 * (-(yi / pi) + (1.0 - yi) / (1.0 - pi))
                        }
                    })
                    .collect();
                self.accumulate(grads, *p, Tensor::from_values(self.value(*p).shape(), dp));
            }
        }
    }
}

/// Adam optimizer state: first/second moment estimates per parameter tensor
/// plus the shared step counter.
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &[Tensor]) -> AdamState {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over a parameter list, in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - math::powf(ADAM_BETA1, t as f64);
    let bc2 = 1.0 - math::powf(ADAM_BETA2, t as f64);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        debug_assert_eq!(p.shape(), g.shape());
        for ((pv, gv), (mv, vv)) in p
            .values_mut()
            .iter_mut()
            .zip(g.values())
            .zip(m.values_mut().iter_mut().zip(v.values_mut().iter_mut()))
        {
            *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *pv -= lr * mhat / (math::sqrt(vhat) + ADAM_EPS);
        }
    }
}

/// Learning-rate schedule: halve on a validation-loss plateau.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    lr: f64,
    best: f64,
    since_improvement: u32,
    pub patience: u32,
    pub factor: f64,
    pub min_lr: f64,
}

impl PlateauSchedule {
    pub fn new(lr0: f64) -> PlateauSchedule {
        PlateauSchedule {
            lr: lr0,
            best: f64::INFINITY,
            since_improvement: 0,
            patience: 5,
            factor: 0.5,
            min_lr: 1e-5,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records an epoch's validation loss; returns the learning rate for the
    /// next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.since_improvement = 0;
            }
        }
        self.lr
    }
}
