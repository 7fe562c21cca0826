//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends a node holding its output value and whatever it needs for
//! the backward pass. Nodes are only ever appended, so node order is a valid
//! topological order and the backward sweep is a single reverse scan.

use crate::error::{FstError, Result};
use crate::numerics::tensor::{matmul_at_raw, matmul_bt_raw, matmul_raw};
use crate::numerics::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    MaskedMeanRows {
        x: Var,
        mask: Vec<bool>,
    },
    MaskedMaxRows {
        x: Var,
        argmax: Vec<usize>,
    },
    Sum(Var),
    BceWithLogits {
        z: Var,
        label: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of the leaves that were marked `requires_grad`.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn check_2d<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(FstError::Shape(format!(
            "{what} expects a matrix, got shape {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = check_2d(self.value(a), "matmul")?;
        let (k2, n) = check_2d(self.value(b), "matmul")?;
        if k != k2 {
            return Err(FstError::Shape(format!(
                "matmul inner dimensions differ: {m}x{k} * {k2}x{n}"
            )));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        check_2d(self.value(x), "transpose")?;
        let out = self.value(x).transpose();
        let ng = self.ng(x);
        Ok(self.push(out, Op::Transpose(x), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(FstError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.value(bias).numel() != n {
            return Err(FstError::Shape(format!(
                "add_row: bias of {} elements for {} columns",
                self.value(bias).numel(),
                n
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(&b) {
                *o = *o + bv;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(out, Op::AddRow(x, bias), ng))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = *v * s);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, s), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    /// Softmax over the last dimension. Columns where `key_mask` is `false`
    /// get exactly zero weight, as if `-inf` had been added before the
    /// exponential.
    pub fn softmax_lastdim(&mut self, x: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let n = self.value(x).cols();
        if n == 0 {
            return Err(FstError::Contract("softmax over an empty dimension".into()));
        }
        if let Some(mask) = key_mask {
            if mask.len() != n {
                return Err(FstError::Shape(format!(
                    "softmax mask has {} entries for {} columns",
                    mask.len(),
                    n
                )));
            }
            if !mask.iter().any(|&m| m) {
                return Err(FstError::Contract("all keys are masked".into()));
            }
        }
        let keep = |j: usize| key_mask.is_none_or(|m| m[j]);
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row
                .iter()
                .enumerate()
                .filter(|(j, _)| keep(*j))
                .map(|(_, &v)| v)
                .fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for (j, v) in row.iter_mut().enumerate() {
                if keep(j) {
                    *v = (*v - max).exp();
                    total = total + *v;
                } else {
                    *v = T::zero();
                }
            }
            row.iter_mut().for_each(|v| *v = *v / total);
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::Softmax(x), ng))
    }

    /// Normalizes each row to zero mean and unit (biased) variance, then
    /// applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).cols();
        if d == 0 {
            return Err(FstError::Contract("layer_norm over an empty dimension".into()));
        }
        if eps <= 0.0 {
            return Err(FstError::Contract("layer_norm eps must be positive".into()));
        }
        if self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(FstError::Shape(format!(
                "layer_norm affine parameters must have {d} elements"
            )));
        }
        let eps = T::of(eps);
        let dn = T::of(d as f64);
        let xv = self.value(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xv.rows();
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.numel()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = check_2d(self.value(x), "slice_cols")?;
        if start + len > n {
            return Err(FstError::Shape(format!(
                "slice_cols [{start}, {}) out of {n} columns",
                start + len
            )));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![m, len], out)?, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(FstError::Contract("concat_cols of nothing".into()));
        };
        let m = check_2d(self.value(first), "concat_cols")?.0;
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = check_2d(self.value(p), "concat_cols")?;
            if pm != m {
                return Err(FstError::Shape(format!("concat_cols row mismatch: {pm} vs {m}")));
            }
            total += pn;
        }
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::new(vec![m, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    fn check_row_mask(&self, x: Var, mask: &[bool], what: &str) -> Result<(usize, usize)> {
        let (m, n) = check_2d(self.value(x), what)?;
        if mask.len() != m {
            return Err(FstError::Shape(format!(
                "{what}: mask of {} entries for {m} rows",
                mask.len()
            )));
        }
        if !mask.iter().any(|&b| b) {
            return Err(FstError::Contract(format!("{what}: empty mask")));
        }
        Ok((m, n))
    }

    /// Mean over the rows selected by `mask`, giving a `1 x n` matrix.
    pub fn masked_mean_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.check_row_mask(x, mask, "masked_mean_rows")?;
        let count = T::of(mask.iter().filter(|&&b| b).count() as f64);
        let xv = self.value(x);
        let mut out = vec![T::zero(); n];
        for r in (0..m).filter(|&r| mask[r]) {
            for (o, &v) in out.iter_mut().zip(xv.row(r)) {
                *o = *o + v;
            }
        }
        out.iter_mut().for_each(|v| *v = *v / count);
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(vec![1, n], out)?,
            Op::MaskedMeanRows {
                x,
                mask: mask.to_vec(),
            },
            ng,
        ))
    }

    /// Columnwise max over the rows selected by `mask`, giving `1 x n`.
    pub fn masked_max_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.check_row_mask(x, mask, "masked_max_rows")?;
        let xv = self.value(x);
        let mut out = vec![T::neg_infinity(); n];
        let mut argmax = vec![0; n];
        for r in (0..m).filter(|&r| mask[r]) {
            for (j, &v) in xv.row(r).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = r;
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![1, n], out)?, Op::MaskedMaxRows { x, argmax }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Binary cross-entropy on a raw logit, in the overflow-free form
    /// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits(&mut self, z: Var, label: u8) -> Result<Var> {
        if self.value(z).numel() != 1 {
            return Err(FstError::Shape("bce_with_logits expects a scalar logit".into()));
        }
        if label > 1 {
            return Err(FstError::Contract(format!("label must be 0 or 1, got {label}")));
        }
        let y = T::of(label as f64);
        let zv = self.value(z).data()[0];
        let loss = bce_with_logits(zv, y);
        let ng = self.ng(z);
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { z, label: y }, ng))
    }

    /// Runs the backward sweep from a scalar `loss` and clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(FstError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &dy, &mut grads);
        }

        let out = Gradients {
            grads: self
                .nodes
                .iter()
                .zip(grads)
                .map(|(node, g)| match (&node.op, node.needs_grad, g) {
                    (Op::Leaf, true, Some(g)) => {
                        Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
                    }
                    (Op::Leaf, true, None) => Some(Tensor::zeros(node.value.shape())),
                    _ => None,
                })
                .collect(),
        };
        self.clear();
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a = *a + b),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn backprop_node(&self, idx: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.ng(*a) {
                    self.accumulate(grads, *a, matmul_bt_raw(dy, bv.data(), m, n, k));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, matmul_at_raw(av.data(), dy, m, k, n));
                }
            }
            Op::Transpose(x) => {
                let dyt = Tensor::new(y.shape().to_vec(), dy.to_vec())
                    .expect("grad shape")
                    .transpose();
                self.accumulate(grads, *x, dyt.into_data());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.to_vec());
                self.accumulate(grads, *b, dy.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, dy.to_vec());
                self.accumulate(grads, *b, dy.iter().map(|&g| -g).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.ng(*a) {
                    self.accumulate(grads, *a, dy.iter().zip(bv).map(|(&g, &v)| g * v).collect());
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, dy.iter().zip(av).map(|(&g, &v)| g * v).collect());
                }
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, dy.to_vec());
                if self.ng(*bias) {
                    let n = y.cols();
                    let mut db = vec![T::zero(); n];
                    for row in dy.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(a, &g)| *a = *a + g);
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::Scale(x, s) => {
                self.accumulate(grads, *x, dy.iter().map(|&g| g * *s).collect());
            }
            Op::Sigmoid(x) => {
                let dx = dy
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &s)| g * s * (T::one() - s))
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Gelu(x) => {
                let dx = dy
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&g, &v)| g * gelu_grad(v))
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Softmax(x) => {
                let n = y.cols();
                let mut dx = vec![T::zero(); dy.len()];
                for ((dxr, dyr), yr) in dx.chunks_mut(n).zip(dy.chunks(n)).zip(y.data().chunks(n)) {
                    let dot: T = dyr.iter().zip(yr).map(|(&g, &s)| g * s).sum();
                    for j in 0..n {
                        dxr[j] = yr[j] * (dyr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = y.cols();
                let g = self.value(*gamma).data();
                let dn = T::of(d as f64);
                if self.ng(*beta) {
                    let mut db = vec![T::zero(); d];
                    for row in dy.chunks(d) {
                        db.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
                    }
                    self.accumulate(grads, *beta, db);
                }
                if self.ng(*gamma) {
                    let mut dg = vec![T::zero(); d];
                    for (row, hrow) in dy.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] = dg[j] + row[j] * hrow[j];
                        }
                    }
                    self.accumulate(grads, *gamma, dg);
                }
                if self.ng(*x) {
                    let mut dx = vec![T::zero(); dy.len()];
                    for (r, ((dxr, dyr), hr)) in
                        dx.chunks_mut(d).zip(dy.chunks(d)).zip(xhat.chunks(d)).enumerate()
                    {
                        let dh: Vec<T> = dyr.iter().zip(g).map(|(&a, &b)| a * b).collect();
                        let sum_dh: T = dh.iter().copied().sum();
                        let sum_dh_h: T = dh.iter().zip(hr).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            dxr[j] = inv_std[r] / dn * (dn * dh[j] - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let (m, n) = (xv.rows(), xv.cols());
                let len = y.cols();
                let mut dx = vec![T::zero(); m * n];
                for r in 0..m {
                    dx[r * n + start..r * n + start + len].copy_from_slice(&dy[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let total = y.cols();
                let m = y.rows();
                let mut offset = 0;
                for &p in parts {
                    let pn = self.value(p).cols();
                    if self.ng(p) {
                        let mut dp = Vec::with_capacity(m * pn);
                        for r in 0..m {
                            dp.extend_from_slice(&dy[r * total + offset..r * total + offset + pn]);
                        }
                        self.accumulate(grads, p, dp);
                    }
                    offset += pn;
                }
            }
            Op::MaskedMeanRows { x, mask } => {
                let n = y.cols();
                let count = T::of(mask.iter().filter(|&&b| b).count() as f64);
                let mut dx = vec![T::zero(); mask.len() * n];
                for (r, &keep) in mask.iter().enumerate() {
                    if keep {
                        for j in 0..n {
                            dx[r * n + j] = dy[j] / count;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::MaskedMaxRows { x, argmax } => {
                let xv = self.value(*x);
                let n = xv.cols();
                let mut dx = vec![T::zero(); xv.numel()];
                for (j, &r) in argmax.iter().enumerate() {
                    dx[r * n + j] = dy[j];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![dy[0]; n]);
            }
            Op::BceWithLogits { z, label } => {
                let zv = self.value(*z).data()[0];
                self.accumulate(grads, *z, vec![dy[0] * (sigmoid(zv) - *label)]);
            }
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn bce_with_logits<T: Real>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Real>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::of(3.0) * a * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}
