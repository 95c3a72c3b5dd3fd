//! Reverse-mode autodiff over a flat tape.
//!
//! Operations append nodes to a [`Graph`]; node indices are creation-ordered,
//! so reverse creation order is a reverse topological order and `backward`
//! is a single descending sweep. Parameter gradients accumulate across
//! `backward` calls until [`Graph::zero_grads`].

use super::gemm::{col2im, im2col, matmul, matmul_at, matmul_bt, sum_slice};
use super::tensor::{Real, Tensor};
use super::EngineError;
use rand::Rng;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Dropout behaviour selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

enum Op<T> {
    Leaf,
    Conv {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    },
    MaxPool {
        input: NodeId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        input: NodeId,
    },
    Dense {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    },
    Relu {
        input: NodeId,
    },
    Dropout {
        input: NodeId,
        scale: Vec<T>,
    },
    MseLoss {
        pred: NodeId,
        target: NodeId,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Registers a value that does not need gradients (data, targets).
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, false, Op::Leaf)
    }

    /// Registers a trainable parameter.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a leaf parameter, if any backward pass reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Stride-1 "same" convolution: input `[N,C,spatial..]`, weights
    /// `[F,C,kernel..]` with odd kernel extents, bias `[F]`.
    pub fn conv(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId, EngineError> {
        let xsh = self.value(input).shape().to_vec();
        let wsh = self.value(weights).shape().to_vec();
        let bsh = self.value(bias).shape().to_vec();
        if xsh.len() != wsh.len() || !(4..=5).contains(&xsh.len()) {
            return Err(EngineError::ShapeMismatch(format!(
                "conv: input {xsh:?} vs weights {wsh:?}"
            )));
        }
        let (n, c) = (xsh[0], xsh[1]);
        let (f, wc) = (wsh[0], wsh[1]);
        let spatial = &xsh[2..];
        let kernel = &wsh[2..];
        if wc != c || bsh != [f] {
            return Err(EngineError::ShapeMismatch(format!(
                "conv: {c} input channels, weights {wsh:?}, bias {bsh:?}"
            )));
        }
        if kernel.iter().any(|k| k % 2 == 0 || *k == 0) {
            return Err(EngineError::ShapeMismatch(format!(
                "conv: kernel extents must be odd, got {kernel:?}"
            )));
        }
        let s: usize = spatial.iter().product();
        let ck: usize = c * kernel.iter().product::<usize>();

        let mut out_shape = vec![n, f];
        out_shape.extend_from_slice(spatial);
        let mut out = Tensor::zeros(out_shape);
        let mut col = vec![T::zero(); ck * s];
        {
            let x = self.value(input).data();
            let w = self.value(weights).data();
            let b = self.value(bias).data();
            let dst = out.data_mut();
            for i in 0..n {
                im2col(&x[i * c * s..(i + 1) * c * s], c, spatial, kernel, &mut col);
                let o = &mut dst[i * f * s..(i + 1) * f * s];
                for fi in 0..f {
                    o[fi * s..(fi + 1) * s].fill(b[fi]);
                }
                matmul(f, ck, s, w, &col, o, true);
            }
        }
        let rg = self.requires(input) || self.requires(weights) || self.requires(bias);
        Ok(self.push(out, rg, Op::Conv { input, weights, bias }))
    }

    /// Max pooling with window 2 and stride 2 per spatial axis; odd trailing
    /// elements are dropped, and an axis of extent 1 passes through unchanged.
    pub fn maxpool(&mut self, input: NodeId) -> Result<NodeId, EngineError> {
        let xsh = self.value(input).shape().to_vec();
        if !(4..=5).contains(&xsh.len()) {
            return Err(EngineError::ShapeMismatch(format!(
                "maxpool: expected [N,C,spatial..], got {xsh:?}"
            )));
        }
        let spatial = &xsh[2..];
        let out_sp: Vec<usize> = spatial.iter().map(|&e| if e == 1 { 1 } else { e / 2 }).collect();
        let win: Vec<usize> = spatial.iter().map(|&e| if e == 1 { 1 } else { 2 }).collect();
        let nc = xsh[0] * xsh[1];
        let s_in: usize = spatial.iter().product();
        let s_out: usize = out_sp.iter().product();

        let mut out = Tensor::zeros([&xsh[..2], &out_sp[..]].concat());
        let mut argmax = vec![0usize; nc * s_out];
        {
            let x = self.value(input).data();
            let o = out.data_mut();
            // Step 0 on an axis of extent 1 keeps the single plane in view.
            let step: Vec<usize> = spatial.iter().map(|&e| if e == 1 { 0 } else { 2 }).collect();
            match spatial.len() {
                2 => {
                    let w = spatial[1];
                    for b in 0..nc {
                        let base = b * s_in;
                        for oy in 0..out_sp[0] {
                            for ox in 0..out_sp[1] {
                                let origin = base + oy * step[0] * w + ox * step[1];
                                let mut best = T::neg_infinity();
                                let mut best_idx = 0usize;
                                for wy in 0..win[0] {
                                    for wx in 0..win[1] {
                                        let idx = origin + wy * w + wx;
                                        if x[idx] > best {
                                            best = x[idx];
                                            best_idx = idx;
                                        }
                                    }
                                }
                                let oidx = b * s_out + oy * out_sp[1] + ox;
                                o[oidx] = best;
                                argmax[oidx] = best_idx;
                            }
                        }
                    }
                }
                3 => {
                    let (h, w) = (spatial[1], spatial[2]);
                    for b in 0..nc {
                        let base = b * s_in;
                        for oz in 0..out_sp[0] {
                            for oy in 0..out_sp[1] {
                                for ox in 0..out_sp[2] {
                                    let origin = base
                                        + oz * step[0] * h * w
                                        + oy * step[1] * w
                                        + ox * step[2];
                                    let mut best = T::neg_infinity();
                                    let mut best_idx = 0usize;
                                    for wz in 0..win[0] {
                                        for wy in 0..win[1] {
                                            for wx in 0..win[2] {
                                                let idx = origin + wz * h * w + wy * w + wx;
                                                if x[idx] > best {
                                                    best = x[idx];
                                                    best_idx = idx;
                                                }
                                            }
                                        }
                                    }
                                    let oidx = b * s_out
                                        + oz * out_sp[1] * out_sp[2]
                                        + oy * out_sp[2]
                                        + ox;
                                    o[oidx] = best;
                                    argmax[oidx] = best_idx;
                                }
                            }
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
        let rg = self.requires(input);
        Ok(self.push(out, rg, Op::MaxPool { input, argmax }))
    }

    /// Mean over all spatial positions: `[N,C,spatial..] -> [N,C]`.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId, EngineError> {
        let xsh = self.value(input).shape().to_vec();
        if xsh.len() < 3 {
            return Err(EngineError::ShapeMismatch(format!(
                "global_avg_pool: expected [N,C,spatial..], got {xsh:?}"
            )));
        }
        let nc = xsh[0] * xsh[1];
        let s: usize = xsh[2..].iter().product();
        let inv = T::one() / T::from_f64(s as f64);
        let mut out = Tensor::zeros(vec![xsh[0], xsh[1]]);
        {
            let x = self.value(input).data();
            for (b, dst) in out.data_mut().iter_mut().enumerate().take(nc) {
                *dst = sum_slice(&x[b * s..(b + 1) * s]) * inv;
            }
        }
        let rg = self.requires(input);
        Ok(self.push(out, rg, Op::GlobalAvgPool { input }))
    }

    /// Affine layer: input `[N,D]`, weights `[D,U]`, bias `[U]`.
    pub fn dense(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId, EngineError> {
        let xsh = self.value(input).shape().to_vec();
        let wsh = self.value(weights).shape().to_vec();
        let bsh = self.value(bias).shape().to_vec();
        if xsh.len() != 2 || wsh.len() != 2 || xsh[1] != wsh[0] || bsh != [wsh[1]] {
            return Err(EngineError::ShapeMismatch(format!(
                "dense: input {xsh:?}, weights {wsh:?}, bias {bsh:?}"
            )));
        }
        let (n, d, u) = (xsh[0], xsh[1], wsh[1]);
        let mut out = Tensor::zeros(vec![n, u]);
        {
            let x = self.value(input).data();
            let w = self.value(weights).data();
            let b = self.value(bias).data();
            let o = out.data_mut();
            for i in 0..n {
                o[i * u..(i + 1) * u].copy_from_slice(b);
            }
            matmul(n, d, u, x, w, o, true);
        }
        let rg = self.requires(input) || self.requires(weights) || self.requires(bias);
        Ok(self.push(out, rg, Op::Dense { input, weights, bias }))
    }

    /// Elementwise `max(0, x)`; gradient is 0 at `x == 0`.
    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.requires(input);
        self.push(out, rg, Op::Relu { input })
    }

    /// Inverted dropout. `Infer` is the identity; in `Train`, each element is
    /// zeroed with probability `p` and survivors are scaled by `1/(1-p)`.
    pub fn dropout<R: Rng>(
        &mut self,
        input: NodeId,
        p: f64,
        phase: Phase,
        rng: &mut R,
    ) -> Result<NodeId, EngineError> {
        if !(0.0..1.0).contains(&p) {
            return Err(EngineError::BadProbability(p));
        }
        if phase == Phase::Infer || p == 0.0 {
            return Ok(input);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let scale: Vec<T> = (0..self.value(input).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let x = self.value(input);
        let data = x.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.requires(input);
        Ok(self.push(out, rg, Op::Dropout { input, scale }))
    }

    /// Mean squared error between equally shaped tensors; returns a scalar node.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, EngineError> {
        let p = self.value(pred);
        let t = self.value(target);
        if p.shape() != t.shape() {
            return Err(EngineError::ShapeMismatch(format!(
                "mse: pred {:?} vs target {:?}",
                p.shape(),
                t.shape()
            )));
        }
        if p.is_empty() {
            return Err(EngineError::EmptyBatch);
        }
        let n = T::from_f64(p.len() as f64);
        let sq: Vec<T> = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .collect();
        let out = Tensor::scalar(sum_slice(&sq) / n);
        let rg = self.requires(pred) || self.requires(target);
        Ok(self.push(out, rg, Op::MseLoss { pred, target }))
    }

    /// Reverse sweep from a scalar node produced by tracked operations.
    /// Gradients of `param` leaves accumulate across calls.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), EngineError> {
        if matches!(self.nodes[loss.0].op, Op::Leaf) {
            return Err(EngineError::NoGraph);
        }
        if self.value(loss).len() != 1 {
            return Err(EngineError::ShapeMismatch(format!(
                "backward: loss must be scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut scratch: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        scratch[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = scratch[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    if self.nodes[i].requires_grad {
                        // Accumulate into the persistent gradient; restore the
                        // scratch slot first so the final write below sees it.
                        scratch[i] = Some(g);
                    }
                    continue;
                }
                Op::Conv { input, weights, bias } => {
                    self.conv_backward(*input, *weights, *bias, i, &g, &mut scratch);
                }
                Op::MaxPool { input, argmax } => {
                    if self.requires(*input) {
                        let len = self.value(*input).len();
                        let dst = scratch[input.0].get_or_insert_with(|| vec![T::zero(); len]);
                        for (o, &idx) in argmax.iter().enumerate() {
                            dst[idx] += g[o];
                        }
                    }
                }
                Op::GlobalAvgPool { input } => {
                    if self.requires(*input) {
                        let xsh = self.value(*input).shape();
                        let s: usize = xsh[2..].iter().product();
                        let inv = T::one() / T::from_f64(s as f64);
                        let len = self.value(*input).len();
                        let dst = scratch[input.0].get_or_insert_with(|| vec![T::zero(); len]);
                        for (b, &gb) in g.iter().enumerate() {
                            let gs = gb * inv;
                            for v in &mut dst[b * s..(b + 1) * s] {
                                *v += gs;
                            }
                        }
                    }
                }
                Op::Dense { input, weights, bias } => {
                    let (input, weights, bias) = (*input, *weights, *bias);
                    let xsh = self.value(input).shape().to_vec();
                    let (n, d) = (xsh[0], xsh[1]);
                    let u = self.value(weights).shape()[1];
                    if self.requires(input) {
                        let w = self.value(weights).data();
                        let mut dx = vec![T::zero(); n * d];
                        matmul_bt(n, u, d, &g, w, &mut dx, false);
                        add_into(&mut scratch[input.0], &dx);
                    }
                    if self.requires(weights) {
                        let x = self.value(input).data();
                        let dst = scratch[weights.0].get_or_insert_with(|| vec![T::zero(); d * u]);
                        matmul_at(d, n, u, x, &g, dst, true);
                    }
                    if self.requires(bias) {
                        let dst = scratch[bias.0].get_or_insert_with(|| vec![T::zero(); u]);
                        for i in 0..n {
                            for (db, gv) in dst.iter_mut().zip(&g[i * u..(i + 1) * u]) {
                                *db += *gv;
                            }
                        }
                    }
                }
                Op::Relu { input } => {
                    if self.requires(*input) {
                        let x = self.value(*input).data();
                        let dst = scratch[input.0].get_or_insert_with(|| vec![T::zero(); x.len()]);
                        for ((d, &xv), &gv) in dst.iter_mut().zip(x).zip(&g) {
                            if xv > T::zero() {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Dropout { input, scale } => {
                    if self.requires(*input) {
                        let dst = scratch[input.0].get_or_insert_with(|| vec![T::zero(); scale.len()]);
                        for ((d, &s), &gv) in dst.iter_mut().zip(scale).zip(&g) {
                            *d += s * gv;
                        }
                    }
                }
                Op::MseLoss { pred, target } => {
                    let (pred, target) = (*pred, *target);
                    let n = self.value(pred).len();
                    let coef = g[0] * T::from_f64(2.0 / n as f64);
                    if self.requires(pred) {
                        let diff: Vec<T> = self
                            .value(pred)
                            .data()
                            .iter()
                            .zip(self.value(target).data())
                            .map(|(&a, &b)| coef * (a - b))
                            .collect();
                        add_into(&mut scratch[pred.0], &diff);
                    }
                    if self.requires(target) {
                        let diff: Vec<T> = self
                            .value(pred)
                            .data()
                            .iter()
                            .zip(self.value(target).data())
                            .map(|(&a, &b)| -coef * (a - b))
                            .collect();
                        add_into(&mut scratch[target.0], &diff);
                    }
                }
            }
        }

        // Fold scratch gradients of parameter leaves into persistent storage.
        for (i, slot) in scratch.into_iter().enumerate() {
            let Some(g) = slot else { continue };
            let node = &mut self.nodes[i];
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                match &mut node.grad {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += *b;
                        }
                    }
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn conv_backward(
        &self,
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
        _out: usize,
        g: &[T],
        scratch: &mut [Option<Vec<T>>],
    ) {
        let xsh = self.value(input).shape().to_vec();
        let wsh = self.value(weights).shape().to_vec();
        let (n, c) = (xsh[0], xsh[1]);
        let f = wsh[0];
        let spatial = &xsh[2..];
        let kernel = &wsh[2..];
        let s: usize = spatial.iter().product();
        let ck: usize = c * kernel.iter().product::<usize>();

        let need_x = self.requires(input);
        let need_w = self.requires(weights);
        let need_b = self.requires(bias);

        let x = self.value(input).data();
        let w = self.value(weights).data();

        let mut dx = if need_x { vec![T::zero(); n * c * s] } else { Vec::new() };
        let mut dw = if need_w { vec![T::zero(); f * ck] } else { Vec::new() };
        let mut db = if need_b { vec![T::zero(); f] } else { Vec::new() };
        let mut col = vec![T::zero(); ck * s];
        let mut dcol = if need_x { vec![T::zero(); ck * s] } else { Vec::new() };

        for i in 0..n {
            let go = &g[i * f * s..(i + 1) * f * s];
            if need_b {
                for fi in 0..f {
                    db[fi] += sum_slice(&go[fi * s..(fi + 1) * s]);
                }
            }
            if need_w {
                im2col(&x[i * c * s..(i + 1) * c * s], c, spatial, kernel, &mut col);
                matmul_bt(f, s, ck, go, &col, &mut dw, true);
            }
            if need_x {
                matmul_at(ck, f, s, w, go, &mut dcol, false);
                col2im(&dcol, c, spatial, kernel, &mut dx[i * c * s..(i + 1) * c * s]);
            }
        }
        if need_x {
            add_into(&mut scratch[input.0], &dx);
        }
        if need_w {
            add_into(&mut scratch[weights.0], &dw);
        }
        if need_b {
            add_into(&mut scratch[bias.0], &db);
        }
    }
}

fn add_into<T: Real>(slot: &mut Option<Vec<T>>, contribution: &[T]) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(contribution) {
                *a += *b;
            }
        }
        None => *slot = Some(contribution.to_vec()),
    }
}
