//! Define-by-run gradient tape.
//!
//! Forward calls append nodes holding the computed value plus whatever the
//! backward rule needs. Nodes are stored in execution order, so every node's
//! inputs precede it and a single reverse sweep implements the chain rule,
//! visiting each node exactly once.

use crate::error::{DgError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle into the active computation record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op<T> {
    /// Input or parameter; receives gradient but produces none.
    Leaf,
    /// y = W x + b, with x of rank 1 `[in]` or rank 2 `[batch, in]`.
    Dense { w: NodeId, b: NodeId, x: NodeId },
    /// 3x3 valid cross-correlation, stride 1. x rank 3 or 4, k `[co, ci, 3, 3]`.
    Conv2d { k: NodeId, x: NodeId },
    Relu { x: NodeId },
    /// Elementwise product of same-shape tensors.
    Mul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: T },
    Sum { x: NodeId },
    Mean { x: NodeId },
    /// 2x2 non-overlapping mean pool over the trailing two dims; odd trailing
    /// rows/columns are dropped.
    MeanPool2 { x: NodeId },
    Reshape { x: NodeId },
    /// Identity forward; multiplies the upstream gradient by `-lambda`.
    GradReverse { x: NodeId, lambda: T },
    /// Mean over rows of -log softmax(logits)[label]; saves the softmax.
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        softmax: Vec<T>,
    },
    /// Sum over rows of logits[row, label[row]]. Backward scatters into the
    /// selected entries only, which makes the gradient at an upstream feature
    /// node carry one row per sample.
    SelectSum { logits: NodeId, labels: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Ordered record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `node`; zero if the node does not reach
    /// the loss.
    pub fn wrt(&self, node: NodeId) -> Tensor<T> {
        let shape = self.shapes[node.0].clone();
        match &self.grads[node.0] {
            Some(g) => Tensor::from_vec(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn has(&self, node: NodeId) -> bool {
        self.grads[node.0].is_some()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value computed at `node`.
    pub fn value(&self, node: NodeId) -> &Tensor<T> {
        &self.nodes[node.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite forward value");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    /// Records an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// y = W x + b. `w` is `[out, in]`, `b` is `[out]`, `x` is `[in]` or
    /// `[batch, in]`.
    pub fn dense(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let (wt, bt, xt) = (self.value(w), self.value(b), self.value(x));
        if wt.rank() != 2 || bt.rank() != 1 {
            return Err(DgError::Dimension(format!(
                "dense expects W rank 2 and b rank 1, got {:?} and {:?}",
                wt.shape(),
                bt.shape()
            )));
        }
        let (out_w, in_w) = (wt.shape()[0], wt.shape()[1]);
        if bt.shape()[0] != out_w {
            return Err(DgError::Dimension(format!(
                "dense bias length {} != out width {}",
                bt.shape()[0],
                out_w
            )));
        }
        let (batch, in_x, batched) = match xt.rank() {
            1 => (1, xt.shape()[0], false),
            2 => (xt.shape()[0], xt.shape()[1], true),
            r => {
                return Err(DgError::Dimension(format!(
                    "dense input must be rank 1 or 2, got rank {r}"
                )))
            }
        };
        if in_x != in_w {
            return Err(DgError::Dimension(format!(
                "dense input width {in_x} != weight width {in_w}"
            )));
        }
        let (wd, bd, xd) = (wt.data(), bt.data(), xt.data());
        let mut out = vec![T::zero(); batch * out_w];
        for s in 0..batch {
            let xrow = &xd[s * in_w..(s + 1) * in_w];
            let orow = &mut out[s * out_w..(s + 1) * out_w];
            for o in 0..out_w {
                let wrow = &wd[o * in_w..(o + 1) * in_w];
                let mut acc = bd[o];
                for i in 0..in_w {
                    acc += wrow[i] * xrow[i];
                }
                orow[o] = acc;
            }
        }
        let shape = if batched { vec![batch, out_w] } else { vec![out_w] };
        Ok(self.push(
            Tensor::from_vec(shape, out)?,
            Op::Dense { w, b, x },
        ))
    }

    /// Valid 3x3 cross-correlation, stride 1. `k` is `[co, ci, 3, 3]`, `x` is
    /// `[ci, h, w]` or `[batch, ci, h, w]` with `h, w >= 3`.
    pub fn conv2d(&mut self, k: NodeId, x: NodeId) -> Result<NodeId> {
        let (kt, xt) = (self.value(k), self.value(x));
        if kt.rank() != 4 || kt.shape()[2] != 3 || kt.shape()[3] != 3 {
            return Err(DgError::Dimension(format!(
                "conv2d kernel must be [co, ci, 3, 3], got {:?}",
                kt.shape()
            )));
        }
        let (co, ci) = (kt.shape()[0], kt.shape()[1]);
        let (batch, xc, h, w, batched) = match xt.rank() {
            3 => (1, xt.shape()[0], xt.shape()[1], xt.shape()[2], false),
            4 => (
                xt.shape()[0],
                xt.shape()[1],
                xt.shape()[2],
                xt.shape()[3],
                true,
            ),
            r => {
                return Err(DgError::Dimension(format!(
                    "conv2d input must be rank 3 or 4, got rank {r}"
                )))
            }
        };
        if xc != ci {
            return Err(DgError::Dimension(format!(
                "conv2d input channels {xc} != kernel channels {ci}"
            )));
        }
        if h < 3 || w < 3 {
            return Err(DgError::Dimension(format!(
                "conv2d spatial extent {h}x{w} below kernel size 3"
            )));
        }
        let (oh, ow) = (h - 2, w - 2);
        let (kd, xd) = (kt.data(), xt.data());
        let mut out = vec![T::zero(); batch * co * oh * ow];
        for s in 0..batch {
            for oc in 0..co {
                for ic in 0..ci {
                    let kbase = (oc * ci + ic) * 9;
                    let xbase = (s * ci + ic) * h * w;
                    let obase = (s * co + oc) * oh * ow;
                    for oi in 0..oh {
                        for oj in 0..ow {
                            let mut acc = T::zero();
                            for u in 0..3 {
                                let xrow = xbase + (oi + u) * w + oj;
                                let krow = kbase + u * 3;
                                acc += kd[krow] * xd[xrow]
                                    + kd[krow + 1] * xd[xrow + 1]
                                    + kd[krow + 2] * xd[xrow + 2];
                            }
                            out[obase + oi * ow + oj] += acc;
                        }
                    }
                }
            }
        }
        let shape = if batched {
            vec![batch, co, oh, ow]
        } else {
            vec![co, oh, ow]
        };
        Ok(self.push(Tensor::from_vec(shape, out)?, Op::Conv2d { k, x }))
    }

    /// max(0, x) elementwise.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu { x })
    }

    /// Elementwise product; shapes must match.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(DgError::Dimension(format!(
                "mul shape mismatch: {:?} vs {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = at.shape().to_vec();
        Ok(self.push(Tensor::from_vec(shape, data)?, Op::Mul { a, b }))
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(DgError::Dimension(format!(
                "add shape mismatch: {:?} vs {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = at.shape().to_vec();
        Ok(self.push(Tensor::from_vec(shape, data)?, Op::Add { a, b }))
    }

    /// factor * x.
    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale { x, factor })
    }

    /// Full reduction to a rank-0 scalar.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).data().iter().copied().fold(T::zero(), |a, v| a + v);
        self.push(Tensor::scalar(total), Op::Sum { x })
    }

    /// Mean over all elements, as a rank-0 scalar.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len();
        let total = self.value(x).data().iter().copied().fold(T::zero(), |a, v| a + v);
        let value = total / T::from_f64_const(n as f64);
        self.push(Tensor::scalar(value), Op::Mean { x })
    }

    /// 2x2 non-overlapping mean pool over the trailing two dims of a rank-3
    /// or rank-4 tensor. Odd trailing rows/columns are dropped.
    pub fn mean_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xt = self.value(x);
        let rank = xt.rank();
        if rank != 3 && rank != 4 {
            return Err(DgError::Dimension(format!(
                "mean_pool2 input must be rank 3 or 4, got rank {rank}"
            )));
        }
        let (h, w) = (xt.shape()[rank - 2], xt.shape()[rank - 1]);
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(DgError::Dimension(format!(
                "mean_pool2 spatial extent {h}x{w} too small"
            )));
        }
        let planes: usize = xt.shape()[..rank - 2].iter().product();
        let xd = xt.data();
        let quarter = T::from_f64_const(0.25);
        let mut out = vec![T::zero(); planes * oh * ow];
        for p in 0..planes {
            let xbase = p * h * w;
            let obase = p * oh * ow;
            for oi in 0..oh {
                for oj in 0..ow {
                    let i0 = xbase + 2 * oi * w + 2 * oj;
                    let s = xd[i0] + xd[i0 + 1] + xd[i0 + w] + xd[i0 + w + 1];
                    out[obase + oi * ow + oj] = s * quarter;
                }
            }
        }
        let mut shape = xt.shape()[..rank - 2].to_vec();
        shape.push(oh);
        shape.push(ow);
        Ok(self.push(Tensor::from_vec(shape, out)?, Op::MeanPool2 { x }))
    }

    /// Same data, new shape of equal length.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    /// Gradient reversal: identity forward, upstream gradient scaled by
    /// `-lambda` on the way down.
    pub fn grad_reverse(&mut self, x: NodeId, lambda: T) -> NodeId {
        let value = self.value(x).clone();
        self.push(value, Op::GradReverse { x, lambda })
    }

    /// Mean softmax cross-entropy over a `[batch, classes]` logit matrix,
    /// computed with per-row max subtraction.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lt = self.value(logits);
        if lt.rank() != 2 {
            return Err(DgError::Dimension(format!(
                "cross_entropy expects [batch, classes] logits, got {:?}",
                lt.shape()
            )));
        }
        let (batch, classes) = (lt.shape()[0], lt.shape()[1]);
        if labels.len() != batch {
            return Err(DgError::Dimension(format!(
                "cross_entropy got {} labels for batch {}",
                labels.len(),
                batch
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DgError::Contract(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let ld = lt.data();
        let mut softmax = vec![T::zero(); batch * classes];
        let mut total = T::zero();
        for s in 0..batch {
            let row = &ld[s * classes..(s + 1) * classes];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for k in 0..classes {
                let e = (row[k] - max).exp();
                softmax[s * classes + k] = e;
                denom += e;
            }
            for k in 0..classes {
                softmax[s * classes + k] /= denom;
            }
            // -log p[label] = log(denom) - (logit - max)
            total += denom.ln() - (row[labels[s]] - max);
        }
        let loss = total / T::from_f64_const(batch as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                softmax,
            },
        ))
    }

    /// Sum of the label-indexed logit per row: `sum_b logits[b, labels[b]]`.
    pub fn select_sum(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lt = self.value(logits);
        if lt.rank() != 2 {
            return Err(DgError::Dimension(format!(
                "select_sum expects [batch, classes] logits, got {:?}",
                lt.shape()
            )));
        }
        let (batch, classes) = (lt.shape()[0], lt.shape()[1]);
        if labels.len() != batch {
            return Err(DgError::Dimension(format!(
                "select_sum got {} labels for batch {}",
                labels.len(),
                batch
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DgError::Contract(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let ld = lt.data();
        let mut total = T::zero();
        for (s, &l) in labels.iter().enumerate() {
            total += ld[s * classes + l];
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::SelectSum {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar `loss` node. Every recorded node receives
    /// `d loss / d node`; nodes that do not reach the loss stay at zero.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(DgError::Contract(format!(
                "backward requires a scalar loss node, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            self.accumulate(id, &dy, &mut grads);
            grads[id] = Some(dy);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn grad_buf<'a>(
        grads: &'a mut [Option<Vec<T>>],
        id: NodeId,
        len: usize,
    ) -> &'a mut Vec<T> {
        grads[id.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    /// Distributes the upstream gradient `dy` of node `id` into its inputs.
    fn accumulate(&self, id: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Dense { w, b, x } => {
                let wt = self.value(*w);
                let xt = self.value(*x);
                let (out_w, in_w) = (wt.shape()[0], wt.shape()[1]);
                let batch = if xt.rank() == 2 { xt.shape()[0] } else { 1 };
                let (wd, xd) = (wt.data(), xt.data());
                {
                    let dw = Self::grad_buf(grads, *w, out_w * in_w);
                    for s in 0..batch {
                        for o in 0..out_w {
                            let g = dy[s * out_w + o];
                            let xrow = &xd[s * in_w..(s + 1) * in_w];
                            let wrow = &mut dw[o * in_w..(o + 1) * in_w];
                            for i in 0..in_w {
                                wrow[i] += g * xrow[i];
                            }
                        }
                    }
                }
                {
                    let db = Self::grad_buf(grads, *b, out_w);
                    for s in 0..batch {
                        for o in 0..out_w {
                            db[o] += dy[s * out_w + o];
                        }
                    }
                }
                {
                    let dx = Self::grad_buf(grads, *x, batch * in_w);
                    for s in 0..batch {
                        for o in 0..out_w {
                            let g = dy[s * out_w + o];
                            let wrow = &wd[o * in_w..(o + 1) * in_w];
                            let xrow = &mut dx[s * in_w..(s + 1) * in_w];
                            for i in 0..in_w {
                                xrow[i] += g * wrow[i];
                            }
                        }
                    }
                }
            }
            Op::Conv2d { k, x } => {
                let kt = self.value(*k);
                let xt = self.value(*x);
                let (co, ci) = (kt.shape()[0], kt.shape()[1]);
                let rank = xt.rank();
                let (batch, h, w) = if rank == 4 {
                    (xt.shape()[0], xt.shape()[2], xt.shape()[3])
                } else {
                    (1, xt.shape()[1], xt.shape()[2])
                };
                let (oh, ow) = (h - 2, w - 2);
                let (kd, xd) = (kt.data(), xt.data());
                {
                    let dk = Self::grad_buf(grads, *k, co * ci * 9);
                    for s in 0..batch {
                        for oc in 0..co {
                            for ic in 0..ci {
                                let kbase = (oc * ci + ic) * 9;
                                let xbase = (s * ci + ic) * h * w;
                                let obase = (s * co + oc) * oh * ow;
                                for oi in 0..oh {
                                    for oj in 0..ow {
                                        let g = dy[obase + oi * ow + oj];
                                        for u in 0..3 {
                                            let xrow = xbase + (oi + u) * w + oj;
                                            let krow = kbase + u * 3;
                                            dk[krow] += g * xd[xrow];
                                            dk[krow + 1] += g * xd[xrow + 1];
                                            dk[krow + 2] += g * xd[xrow + 2];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                {
                    let dx = Self::grad_buf(grads, *x, batch * ci * h * w);
                    for s in 0..batch {
                        for oc in 0..co {
                            for ic in 0..ci {
                                let kbase = (oc * ci + ic) * 9;
                                let xbase = (s * ci + ic) * h * w;
                                let obase = (s * co + oc) * oh * ow;
                                for oi in 0..oh {
                                    for oj in 0..ow {
                                        let g = dy[obase + oi * ow + oj];
                                        for u in 0..3 {
                                            let xrow = xbase + (oi + u) * w + oj;
                                            let krow = kbase + u * 3;
                                            dx[xrow] += g * kd[krow];
                                            dx[xrow + 1] += g * kd[krow + 1];
                                            dx[xrow + 2] += g * kd[krow + 2];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                let dx = Self::grad_buf(grads, *x, xv.len());
                for i in 0..xv.len() {
                    // subgradient at the kink is 0
                    if xv[i] > T::zero() {
                        dx[i] += dy[i];
                    }
                }
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                {
                    let da = Self::grad_buf(grads, *a, av.len());
                    for i in 0..av.len() {
                        da[i] += dy[i] * bv[i];
                    }
                }
                {
                    let db = Self::grad_buf(grads, *b, bv.len());
                    for i in 0..bv.len() {
                        db[i] += dy[i] * av[i];
                    }
                }
            }
            Op::Add { a, b } => {
                let len = dy.len();
                {
                    let da = Self::grad_buf(grads, *a, len);
                    for i in 0..len {
                        da[i] += dy[i];
                    }
                }
                {
                    let db = Self::grad_buf(grads, *b, len);
                    for i in 0..len {
                        db[i] += dy[i];
                    }
                }
            }
            Op::Scale { x, factor } => {
                let dx = Self::grad_buf(grads, *x, dy.len());
                for i in 0..dy.len() {
                    dx[i] += dy[i] * *factor;
                }
            }
            Op::Sum { x } => {
                let len = self.value(*x).len();
                let dx = Self::grad_buf(grads, *x, len);
                for g in dx.iter_mut() {
                    *g += dy[0];
                }
            }
            Op::Mean { x } => {
                let len = self.value(*x).len();
                let scale = dy[0] / T::from_f64_const(len as f64);
                let dx = Self::grad_buf(grads, *x, len);
                for g in dx.iter_mut() {
                    *g += scale;
                }
            }
            Op::MeanPool2 { x } => {
                let xt = self.value(*x);
                let rank = xt.rank();
                let (h, w) = (xt.shape()[rank - 2], xt.shape()[rank - 1]);
                let (oh, ow) = (h / 2, w / 2);
                let planes: usize = xt.shape()[..rank - 2].iter().product();
                let quarter = T::from_f64_const(0.25);
                let dx = Self::grad_buf(grads, *x, planes * h * w);
                for p in 0..planes {
                    let xbase = p * h * w;
                    let obase = p * oh * ow;
                    for oi in 0..oh {
                        for oj in 0..ow {
                            let g = dy[obase + oi * ow + oj] * quarter;
                            let i0 = xbase + 2 * oi * w + 2 * oj;
                            dx[i0] += g;
                            dx[i0 + 1] += g;
                            dx[i0 + w] += g;
                            dx[i0 + w + 1] += g;
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                let dx = Self::grad_buf(grads, *x, dy.len());
                for i in 0..dy.len() {
                    dx[i] += dy[i];
                }
            }
            Op::GradReverse { x, lambda } => {
                let neg = -*lambda;
                let dx = Self::grad_buf(grads, *x, dy.len());
                for i in 0..dy.len() {
                    dx[i] += dy[i] * neg;
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                softmax,
            } => {
                let batch = labels.len();
                let classes = softmax.len() / batch;
                let inv_b = dy[0] / T::from_f64_const(batch as f64);
                let dl = Self::grad_buf(grads, *logits, softmax.len());
                for s in 0..batch {
                    for k in 0..classes {
                        let idx = s * classes + k;
                        let indicator = if labels[s] == k { T::one() } else { T::zero() };
                        dl[idx] += (softmax[idx] - indicator) * inv_b;
                    }
                }
            }
            Op::SelectSum { logits, labels } => {
                let classes = self.value(*logits).shape()[1];
                let len = self.value(*logits).len();
                let dl = Self::grad_buf(grads, *logits, len);
                for (s, &l) in labels.iter().enumerate() {
                    dl[s * classes + l] += dy[0];
                }
            }
        }
    }
}
