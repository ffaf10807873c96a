//! Reverse-mode autodiff tape.
//!
//! A `Tape` records every primitive executed during a forward pass
//! (define-by-run; a fresh tape is built per pass). `backward` replays the
//! record in reverse, accumulating vector-Jacobian products into the
//! gradients of parameter leaves. Gradients add when a value feeds several
//! consumers.
//!
//! All primitives the model needs live here: matmul (2-D and batched),
//! valid 1-D convolution, non-overlapping max pooling, layer and batch
//! normalization, relu/sigmoid/softmax, inverted dropout, and the three
//! batch-mean losses (binary cross-entropy, MSE, categorical
//! cross-entropy).

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::tensor::{Scalar, Tensor};
use crate::error::{Result, TsanError};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

/// Train/eval switch for mode-dependent primitives (dropout, batchnorm).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Gradients keyed by parameter path, in stable (sorted) order.
#[derive(Debug, Clone, Default)]
pub struct Gradients<F: Scalar> {
    by_path: BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, path: &str) -> Option<&Tensor<F>> {
        self.by_path.get(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.by_path.iter()
    }

    pub fn len(&self) -> usize {
        self.by_path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_path.is_empty()
    }

    pub fn insert(&mut self, path: String, grad: Tensor<F>) {
        self.by_path.insert(path, grad);
    }
}

/// Pending running-statistics update produced by a train-mode batchnorm.
/// The forward pass stays pure; the owner of the stats applies these.
#[derive(Debug, Clone)]
pub struct BnUpdate<F: Scalar> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

enum Op<F: Scalar> {
    Leaf,
    Param(String),
    Add,
    /// `b` broadcast over the leading axes of `a` (b.shape is a suffix of a.shape).
    AddBroadcast,
    Sub,
    Mul,
    Scale(F),
    Matmul,
    Bmm,
    TransposeLast2,
    Reshape,
    ConcatLast,
    MeanAxis1,
    Sum,
    Relu,
    Sigmoid,
    SoftmaxLast,
    LayerNorm {
        xhat: Vec<F>,
        istd: Vec<F>,
    },
    BatchNorm {
        xhat: Vec<F>,
        istd: Vec<F>,
        train: bool,
    },
    Conv1d,
    MaxPool1d {
        argmax: Vec<usize>,
    },
    Dropout {
        mask: Vec<F>,
    },
    BceLoss {
        eps: F,
    },
    MseLoss,
    CceLoss {
        eps: F,
    },
}

struct Node<F: Scalar> {
    op: Op<F>,
    inputs: Vec<usize>,
    value: Tensor<F>,
    requires_grad: bool,
}

/// Ordered record of executed primitives; replayed in reverse by `backward`.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.id].value
    }

    fn push(&mut self, op: Op<F>, inputs: Vec<usize>, value: Tensor<F>) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Var {
            id: self.nodes.len() - 1,
        }
    }

    /// Record a value that does not receive gradients (inputs, targets).
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(Op::Leaf, vec![], t)
    }

    /// Record a trainable leaf; `backward` reports its gradient under `path`.
    pub fn param(&mut self, path: &str, t: Tensor<F>) -> Var {
        self.push(Op::Param(path.to_string()), vec![], t)
    }

    // ── elementwise and linear algebra ──────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TsanError::shape(format!(
                "add: shapes {:?} and {:?} differ",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Add, vec![a.id, b.id], value))
    }

    /// `a + b` with `b.shape` a suffix of `a.shape`, tiled over the leading axes.
    /// Covers bias addition and the positional-table add.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() < tb.rank() || !ta.shape().ends_with(tb.shape()) {
            return Err(TsanError::shape(format!(
                "add_broadcast: {:?} is not a suffix of {:?}",
                tb.shape(),
                ta.shape()
            )));
        }
        let sb = tb.numel();
        let mut data = Vec::with_capacity(ta.numel());
        for chunk in ta.data().chunks(sb) {
            for (x, y) in chunk.iter().zip(tb.data()) {
                data.push(*x + *y);
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::AddBroadcast, vec![a.id, b.id], value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TsanError::shape(format!(
                "sub: shapes {:?} and {:?} differ",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Sub, vec![a.id, b.id], value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TsanError::shape(format!(
                "mul: shapes {:?} and {:?} differ",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul, vec![a.id, b.id], value))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x * c).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(Op::Scale(c), vec![a.id], value)
    }

    /// 2-D matrix product `a[m,k] x b[k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(TsanError::shape(format!(
                "matmul: incompatible shapes {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let data = matmul_kernel(ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::Matmul, vec![a.id, b.id], value))
    }

    /// Batched matrix product `a[B,m,k] x b[B,k,n] -> [B,m,n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 3
            || tb.rank() != 3
            || ta.shape()[0] != tb.shape()[0]
            || ta.shape()[2] != tb.shape()[1]
        {
            return Err(TsanError::shape(format!(
                "bmm: incompatible shapes {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (bsz, m, k, n) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], tb.shape()[2]);
        let mut data = Vec::with_capacity(bsz * m * n);
        for bi in 0..bsz {
            let sa = &ta.data()[bi * m * k..(bi + 1) * m * k];
            let sb = &tb.data()[bi * k * n..(bi + 1) * k * n];
            data.extend(matmul_kernel(sa, sb, m, k, n));
        }
        let value = Tensor::new(vec![bsz, m, n], data)?;
        Ok(self.push(Op::Bmm, vec![a.id, b.id], value))
    }

    /// Swap the last two axes of a rank-3 tensor.
    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 3 {
            return Err(TsanError::shape(format!(
                "transpose_last2: expected rank 3, got {:?}",
                ta.shape()
            )));
        }
        let (bsz, m, n) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let value = Tensor::new(vec![bsz, n, m], transpose_kernel(ta.data(), bsz, m, n))?;
        Ok(self.push(Op::TransposeLast2, vec![a.id], value))
    }

    /// View under a new shape; no data movement in the gradient either.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).reshaped(shape)?;
        Ok(self.push(Op::Reshape, vec![a.id], value))
    }

    /// Concatenate along the last axis; all leading dims must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TsanError::contract("concat_last: no inputs".to_string()));
        }
        let lead = self.value(parts[0]).shape()[..self.value(parts[0]).rank() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.shape()[..t.rank() - 1] != lead[..] {
                return Err(TsanError::shape(format!(
                    "concat_last: leading dims differ: {:?} vs {:?}",
                    t.shape(),
                    self.value(parts[0]).shape()
                )));
            }
            widths.push(*t.shape().last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total_w: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total_w);
        for r in 0..rows {
            for (idx, &p) in parts.iter().enumerate() {
                let w = widths[idx];
                let src = self.value(p);
                data.extend_from_slice(&src.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total_w);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(Op::ConcatLast, parts.iter().map(|v| v.id).collect(), value))
    }

    /// Mean over axis 1 of `[B,T,D] -> [B,D]` (global average pooling).
    pub fn mean_axis1(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 3 {
            return Err(TsanError::shape(format!(
                "mean_axis1: expected rank 3, got {:?}",
                ta.shape()
            )));
        }
        let (bsz, t, d) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let inv_t = F::from_f64(1.0 / t as f64);
        let mut data = vec![F::zero(); bsz * d];
        for bi in 0..bsz {
            for ti in 0..t {
                let row = &ta.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for (j, &v) in row.iter().enumerate() {
                    data[bi * d + j] = data[bi * d + j] + v;
                }
            }
            for j in 0..d {
                data[bi * d + j] = data[bi * d + j] * inv_t;
            }
        }
        let value = Tensor::new(vec![bsz, d], data)?;
        Ok(self.push(Op::MeanAxis1, vec![a.id], value))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self
            .value(a)
            .data()
            .iter()
            .fold(F::zero(), |acc, &v| acc + v);
        self.push(Op::Sum, vec![a.id], Tensor::scalar(total))
    }

    // ── activations ─────────────────────────────────────────────────────

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > F::zero() { x } else { F::zero() })
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape");
        self.push(Op::Relu, vec![a.id], value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| F::one() / (F::one() + (-x).exp()))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape");
        self.push(Op::Sigmoid, vec![a.id], value)
    }

    /// Softmax over the last axis with max-subtraction for stability.
    pub fn softmax_last(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() == 0 {
            return Err(TsanError::shape("softmax_last on rank-0 tensor".to_string()));
        }
        let d = *ta.shape().last().unwrap();
        let mut data = Vec::with_capacity(ta.numel());
        for row in ta.data().chunks(d) {
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let exps: Vec<F> = row.iter().map(|&v| (v - max).exp()).collect();
            let denom = exps.iter().fold(F::zero(), |acc, &v| acc + v);
            data.extend(exps.iter().map(|&e| e / denom));
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::SoftmaxLast, vec![a.id], value))
    }

    // ── normalization ───────────────────────────────────────────────────

    /// Layer normalization over the last axis:
    /// `(x - mean)/sqrt(var + eps) * gamma + beta` per slice.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = *tx.shape().last().unwrap();
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(TsanError::shape(format!(
                "layernorm: gamma {:?} / beta {:?} do not match last dim {} of {:?}",
                tg.shape(),
                tb.shape(),
                d,
                tx.shape()
            )));
        }
        if eps < F::zero() {
            return Err(TsanError::config("layernorm: eps must be >= 0".to_string()));
        }
        if d == 1 && eps == F::zero() {
            return Err(TsanError::config(
                "layernorm: last dim 1 with eps 0 divides by zero".to_string(),
            ));
        }
        let inv_d = F::from_f64(1.0 / d as f64);
        let slices = tx.numel() / d;
        let mut xhat = Vec::with_capacity(tx.numel());
        let mut istd = Vec::with_capacity(slices);
        let mut data = Vec::with_capacity(tx.numel());
        for row in tx.data().chunks(d) {
            let mean = row.iter().fold(F::zero(), |a, &v| a + v) * inv_d;
            let var = row
                .iter()
                .fold(F::zero(), |a, &v| a + (v - mean) * (v - mean))
                * inv_d;
            let is = F::one() / (var + eps).sqrt();
            istd.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                data.push(h * tg.data()[j] + tb.data()[j]);
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(
            Op::LayerNorm { xhat, istd },
            vec![x.id, gamma.id, beta.id],
            value,
        ))
    }

    /// Batch normalization over all axes but the last (channels-last).
    ///
    /// Train mode normalizes with batch statistics and returns the updated
    /// running statistics (EMA with weight `momentum` on the batch value);
    /// eval mode normalizes with the supplied running statistics and
    /// returns no update.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[F],
        running_var: &[F],
        mode: Mode,
        momentum: F,
        eps: F,
    ) -> Result<(Var, Option<BnUpdate<F>>)> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        if tx.rank() < 2 {
            return Err(TsanError::shape(format!(
                "batchnorm: expected rank >= 2, got {:?}",
                tx.shape()
            )));
        }
        let c = *tx.shape().last().unwrap();
        if tg.shape() != [c] || tb.shape() != [c] || running_mean.len() != c || running_var.len() != c
        {
            return Err(TsanError::shape(format!(
                "batchnorm: parameter lengths do not match channel count {} of {:?}",
                c,
                tx.shape()
            )));
        }
        let rows = tx.numel() / c;
        let (mean, var) = match mode {
            Mode::Train => {
                let inv_rows = F::from_f64(1.0 / rows as f64);
                let mut mean = vec![F::zero(); c];
                for row in tx.data().chunks(c) {
                    for (j, &v) in row.iter().enumerate() {
                        mean[j] = mean[j] + v;
                    }
                }
                for m in mean.iter_mut() {
                    *m = *m * inv_rows;
                }
                let mut var = vec![F::zero(); c];
                for row in tx.data().chunks(c) {
                    for (j, &v) in row.iter().enumerate() {
                        let d = v - mean[j];
                        var[j] = var[j] + d * d;
                    }
                }
                for v in var.iter_mut() {
                    *v = *v * inv_rows;
                }
                (mean, var)
            }
            Mode::Eval => (running_mean.to_vec(), running_var.to_vec()),
        };
        let istd: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(tx.numel());
        let mut data = Vec::with_capacity(tx.numel());
        for row in tx.data().chunks(c) {
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean[j]) * istd[j];
                xhat.push(h);
                data.push(h * tg.data()[j] + tb.data()[j]);
            }
        }
        let update = match mode {
            Mode::Train => {
                let keep = F::one() - momentum;
                Some(BnUpdate {
                    mean: running_mean
                        .iter()
                        .zip(&mean)
                        .map(|(&r, &b)| r * keep + b * momentum)
                        .collect(),
                    var: running_var
                        .iter()
                        .zip(&var)
                        .map(|(&r, &b)| r * keep + b * momentum)
                        .collect(),
                })
            }
            Mode::Eval => None,
        };
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let var_out = self.push(
            Op::BatchNorm {
                xhat,
                istd,
                train: mode == Mode::Train,
            },
            vec![x.id, gamma.id, beta.id],
            value,
        );
        Ok((var_out, update))
    }

    // ── convolution and pooling ─────────────────────────────────────────

    /// Valid (no padding) stride-1 1-D convolution.
    /// `x[B,L,c_in] * w[k,c_in,c_out] + b[c_out] -> [B,L-k+1,c_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.rank() != 3 || tw.rank() != 3 || tb.rank() != 1 {
            return Err(TsanError::shape(format!(
                "conv1d: expected x[B,L,c_in], w[k,c_in,c_out], b[c_out]; got {:?}, {:?}, {:?}",
                tx.shape(),
                tw.shape(),
                tb.shape()
            )));
        }
        let (bsz, l, cin) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (k, wcin, cout) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        if wcin != cin || tb.shape()[0] != cout {
            return Err(TsanError::shape(format!(
                "conv1d: channel mismatch between x {:?}, w {:?}, b {:?}",
                tx.shape(),
                tw.shape(),
                tb.shape()
            )));
        }
        if l < k {
            return Err(TsanError::shape(format!(
                "conv1d: input length {} shorter than kernel {}",
                l, k
            )));
        }
        let lout = l - k + 1;
        let mut data = vec![F::zero(); bsz * lout * cout];
        for bi in 0..bsz {
            for i in 0..lout {
                let out = &mut data[(bi * lout + i) * cout..(bi * lout + i + 1) * cout];
                out.copy_from_slice(tb.data());
                for m in 0..k {
                    for n in 0..cin {
                        let xv = tx.data()[(bi * l + i + m) * cin + n];
                        let wrow = &tw.data()[(m * cin + n) * cout..(m * cin + n + 1) * cout];
                        for (j, &wv) in wrow.iter().enumerate() {
                            out[j] = out[j] + xv * wv;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![bsz, lout, cout], data)?;
        Ok(self.push(Op::Conv1d, vec![x.id, w.id, b.id], value))
    }

    /// Non-overlapping max pooling over axis 1; trailing remainder dropped.
    /// Backward routes the gradient to the argmax (first occurrence on ties).
    pub fn maxpool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 3 {
            return Err(TsanError::shape(format!(
                "maxpool1d: expected x[B,L,c], got {:?}",
                tx.shape()
            )));
        }
        let (bsz, l, c) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        if window < 1 {
            return Err(TsanError::config("maxpool1d: window must be >= 1".to_string()));
        }
        if window > l {
            return Err(TsanError::shape(format!(
                "maxpool1d: window {} exceeds length {}",
                window, l
            )));
        }
        let lout = l / window;
        let mut data = Vec::with_capacity(bsz * lout * c);
        let mut argmax = Vec::with_capacity(bsz * lout * c);
        for bi in 0..bsz {
            for o in 0..lout {
                for ch in 0..c {
                    let mut best = F::neg_infinity();
                    let mut best_idx = 0usize;
                    for t in 0..window {
                        let idx = (bi * l + o * window + t) * c + ch;
                        let v = tx.data()[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                    data.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        let value = Tensor::new(vec![bsz, lout, c], data)?;
        Ok(self.push(Op::MaxPool1d { argmax }, vec![x.id], value))
    }

    // ── dropout ─────────────────────────────────────────────────────────

    /// Inverted dropout: zero with probability `rate`, scale survivors by
    /// `1/(1-rate)`. Identity in eval mode or at rate 0 (no node recorded).
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TsanError::config(format!(
                "dropout: rate must be in [0, 1), got {rate}"
            )));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = F::from_f64(1.0 / (1.0 - rate));
        let tx = self.value(x);
        let mask: Vec<F> = (0..tx.numel())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    F::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let data = tx
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(Op::Dropout { mask }, vec![x.id], value))
    }

    // ── losses (batch-mean scalars) ─────────────────────────────────────

    /// Binary cross-entropy between probabilities and {0,1} targets,
    /// averaged over all elements. Probabilities are clipped to
    /// `[eps, 1-eps]` inside the logs.
    pub fn bce_loss(&mut self, p: Var, y: Var) -> Result<Var> {
        let (tp, ty) = (self.value(p), self.value(y));
        if tp.shape() != ty.shape() {
            return Err(TsanError::contract(format!(
                "bce_loss: prediction shape {:?} != target shape {:?}",
                tp.shape(),
                ty.shape()
            )));
        }
        let eps = F::from_f64(CLIP_EPS);
        let inv_n = F::from_f64(1.0 / tp.numel() as f64);
        let mut total = F::zero();
        for (&pv, &yv) in tp.data().iter().zip(ty.data()) {
            let pc = clamp(pv, eps, F::one() - eps);
            total = total - (yv * pc.ln() + (F::one() - yv) * (F::one() - pc).ln());
        }
        let value = Tensor::scalar(total * inv_n);
        Ok(self.push(Op::BceLoss { eps }, vec![p.id, y.id], value))
    }

    /// Mean squared error over all elements.
    pub fn mse_loss(&mut self, p: Var, y: Var) -> Result<Var> {
        let (tp, ty) = (self.value(p), self.value(y));
        if tp.shape() != ty.shape() {
            return Err(TsanError::contract(format!(
                "mse_loss: prediction shape {:?} != target shape {:?}",
                tp.shape(),
                ty.shape()
            )));
        }
        let inv_n = F::from_f64(1.0 / tp.numel() as f64);
        let mut total = F::zero();
        for (&pv, &yv) in tp.data().iter().zip(ty.data()) {
            let d = pv - yv;
            total = total + d * d;
        }
        let value = Tensor::scalar(total * inv_n);
        Ok(self.push(Op::MseLoss, vec![p.id, y.id], value))
    }

    /// Categorical cross-entropy between a row-stochastic prediction and a
    /// one-hot target, `-sum(y log p)` per row, averaged over rows.
    pub fn cce_loss(&mut self, p: Var, y: Var) -> Result<Var> {
        let (tp, ty) = (self.value(p), self.value(y));
        if tp.shape() != ty.shape() || tp.rank() != 2 {
            return Err(TsanError::contract(format!(
                "cce_loss: expected matching rank-2 shapes, got {:?} and {:?}",
                tp.shape(),
                ty.shape()
            )));
        }
        let eps = F::from_f64(CLIP_EPS);
        let rows = tp.shape()[0];
        let inv_b = F::from_f64(1.0 / rows as f64);
        let mut total = F::zero();
        for (&pv, &yv) in tp.data().iter().zip(ty.data()) {
            let pc = clamp(pv, eps, F::one() - eps);
            total = total - yv * pc.ln();
        }
        let value = Tensor::scalar(total * inv_b);
        Ok(self.push(Op::CceLoss { eps }, vec![p.id, y.id], value))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Replay the tape in reverse from a scalar loss, accumulating
    /// gradients into every reachable parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let loss_node = &self.nodes[loss.id];
        if loss_node.value.numel() != 1 {
            return Err(TsanError::contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.id] = Some(vec![F::one()]);

        let mut out = Gradients::default();
        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let gy = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &node.op {
                Op::Param(path) => {
                    let t = Tensor::new(node.value.shape().to_vec(), gy)?;
                    match out.by_path.remove(path) {
                        // A parameter recorded twice accumulates additively.
                        Some(prev) => {
                            let sum: Vec<F> = prev
                                .data()
                                .iter()
                                .zip(t.data())
                                .map(|(&a, &b)| a + b)
                                .collect();
                            out.insert(path.clone(), Tensor::new(t.shape().to_vec(), sum)?);
                        }
                        None => out.insert(path.clone(), t),
                    }
                }
                Op::Leaf => {}
                _ => self.backprop_node(id, &gy, &mut grads),
            }
        }
        Ok(out)
    }

    /// Dispatch one node's vector-Jacobian product into its inputs.
    fn backprop_node(&self, id: usize, gy: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[id];
        let inputs = &node.inputs;
        let add_to = |target: usize, contrib: Vec<F>, grads: &mut [Option<Vec<F>>]| {
            if !self.nodes[target].requires_grad {
                return;
            }
            match &mut grads[target] {
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(&contrib) {
                        *a = *a + *c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => unreachable!("leaves handled by backward"),
            Op::Add => {
                add_to(inputs[0], gy.to_vec(), grads);
                add_to(inputs[1], gy.to_vec(), grads);
            }
            Op::AddBroadcast => {
                add_to(inputs[0], gy.to_vec(), grads);
                let sb = self.nodes[inputs[1]].value.numel();
                let mut gb = vec![F::zero(); sb];
                for chunk in gy.chunks(sb) {
                    for (g, &c) in gb.iter_mut().zip(chunk) {
                        *g = *g + c;
                    }
                }
                add_to(inputs[1], gb, grads);
            }
            Op::Sub => {
                add_to(inputs[0], gy.to_vec(), grads);
                add_to(inputs[1], gy.iter().map(|&g| -g).collect(), grads);
            }
            Op::Mul => {
                let (a, b) = (&self.nodes[inputs[0]].value, &self.nodes[inputs[1]].value);
                add_to(
                    inputs[0],
                    gy.iter().zip(b.data()).map(|(&g, &v)| g * v).collect(),
                    grads,
                );
                add_to(
                    inputs[1],
                    gy.iter().zip(a.data()).map(|(&g, &v)| g * v).collect(),
                    grads,
                );
            }
            Op::Scale(c) => {
                add_to(inputs[0], gy.iter().map(|&g| g * *c).collect(), grads);
            }
            Op::Matmul => {
                let (a, b) = (&self.nodes[inputs[0]].value, &self.nodes[inputs[1]].value);
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                // dA = dY * B^T ; dB = A^T * dY
                let bt = transpose_kernel(b.data(), 1, k, n);
                add_to(inputs[0], matmul_kernel(gy, &bt, m, n, k), grads);
                let at = transpose_kernel(a.data(), 1, m, k);
                add_to(inputs[1], matmul_kernel(&at, gy, k, m, n), grads);
            }
            Op::Bmm => {
                let (a, b) = (&self.nodes[inputs[0]].value, &self.nodes[inputs[1]].value);
                let (bsz, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
                let mut da = Vec::with_capacity(bsz * m * k);
                let mut db = Vec::with_capacity(bsz * k * n);
                for bi in 0..bsz {
                    let sa = &a.data()[bi * m * k..(bi + 1) * m * k];
                    let sb = &b.data()[bi * k * n..(bi + 1) * k * n];
                    let sg = &gy[bi * m * n..(bi + 1) * m * n];
                    let bt = transpose_kernel(sb, 1, k, n);
                    da.extend(matmul_kernel(sg, &bt, m, n, k));
                    let at = transpose_kernel(sa, 1, m, k);
                    db.extend(matmul_kernel(&at, sg, k, m, n));
                }
                add_to(inputs[0], da, grads);
                add_to(inputs[1], db, grads);
            }
            Op::TransposeLast2 => {
                let out = &node.value;
                let (bsz, m, n) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                add_to(inputs[0], transpose_kernel(gy, bsz, m, n), grads);
            }
            Op::Reshape => {
                add_to(inputs[0], gy.to_vec(), grads);
            }
            Op::ConcatLast => {
                let lead: usize = node.value.shape()[..node.value.rank() - 1]
                    .iter()
                    .product();
                let total_w = *node.value.shape().last().unwrap();
                let mut offset = 0usize;
                for &inp in inputs {
                    let w = *self.nodes[inp].value.shape().last().unwrap();
                    let mut gi = Vec::with_capacity(lead * w);
                    for r in 0..lead {
                        gi.extend_from_slice(&gy[r * total_w + offset..r * total_w + offset + w]);
                    }
                    add_to(inp, gi, grads);
                    offset += w;
                }
            }
            Op::MeanAxis1 => {
                let x = &self.nodes[inputs[0]].value;
                let (bsz, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let inv_t = F::from_f64(1.0 / t as f64);
                let mut gx = Vec::with_capacity(bsz * t * d);
                for bi in 0..bsz {
                    for _ in 0..t {
                        gx.extend(gy[bi * d..(bi + 1) * d].iter().map(|&g| g * inv_t));
                    }
                }
                add_to(inputs[0], gx, grads);
            }
            Op::Sum => {
                let n = self.nodes[inputs[0]].value.numel();
                add_to(inputs[0], vec![gy[0]; n], grads);
            }
            Op::Relu => {
                let x = &self.nodes[inputs[0]].value;
                add_to(
                    inputs[0],
                    gy.iter()
                        .zip(x.data())
                        .map(|(&g, &v)| if v > F::zero() { g } else { F::zero() })
                        .collect(),
                    grads,
                );
            }
            Op::Sigmoid => {
                let s = &node.value;
                add_to(
                    inputs[0],
                    gy.iter()
                        .zip(s.data())
                        .map(|(&g, &sv)| g * sv * (F::one() - sv))
                        .collect(),
                    grads,
                );
            }
            Op::SoftmaxLast => {
                let p = &node.value;
                let d = *p.shape().last().unwrap();
                let mut gx = Vec::with_capacity(p.numel());
                for (prow, grow) in p.data().chunks(d).zip(gy.chunks(d)) {
                    let dot = prow
                        .iter()
                        .zip(grow)
                        .fold(F::zero(), |acc, (&pv, &gv)| acc + pv * gv);
                    gx.extend(prow.iter().zip(grow).map(|(&pv, &gv)| pv * (gv - dot)));
                }
                add_to(inputs[0], gx, grads);
            }
            Op::LayerNorm { xhat, istd } => {
                let gamma = &self.nodes[inputs[1]].value;
                let d = gamma.numel();
                let inv_d = F::from_f64(1.0 / d as f64);
                let mut gx = Vec::with_capacity(xhat.len());
                let mut ggamma = vec![F::zero(); d];
                let mut gbeta = vec![F::zero(); d];
                for (s, (hrow, grow)) in xhat.chunks(d).zip(gy.chunks(d)).enumerate() {
                    let is = istd[s];
                    let mut sum_dxhat = F::zero();
                    let mut sum_dxhat_h = F::zero();
                    for j in 0..d {
                        let dxhat = grow[j] * gamma.data()[j];
                        sum_dxhat = sum_dxhat + dxhat;
                        sum_dxhat_h = sum_dxhat_h + dxhat * hrow[j];
                        ggamma[j] = ggamma[j] + grow[j] * hrow[j];
                        gbeta[j] = gbeta[j] + grow[j];
                    }
                    let mean_dxhat = sum_dxhat * inv_d;
                    let mean_dxhat_h = sum_dxhat_h * inv_d;
                    for j in 0..d {
                        let dxhat = grow[j] * gamma.data()[j];
                        gx.push(is * (dxhat - mean_dxhat - hrow[j] * mean_dxhat_h));
                    }
                }
                add_to(inputs[0], gx, grads);
                add_to(inputs[1], ggamma, grads);
                add_to(inputs[2], gbeta, grads);
            }
            Op::BatchNorm { xhat, istd, train } => {
                let gamma = &self.nodes[inputs[1]].value;
                let c = gamma.numel();
                let rows = xhat.len() / c;
                let mut ggamma = vec![F::zero(); c];
                let mut gbeta = vec![F::zero(); c];
                for (hrow, grow) in xhat.chunks(c).zip(gy.chunks(c)) {
                    for j in 0..c {
                        ggamma[j] = ggamma[j] + grow[j] * hrow[j];
                        gbeta[j] = gbeta[j] + grow[j];
                    }
                }
                let gx = if *train {
                    // Through the batch statistics.
                    let inv_rows = F::from_f64(1.0 / rows as f64);
                    let mut mean_dxhat = vec![F::zero(); c];
                    let mut mean_dxhat_h = vec![F::zero(); c];
                    for (hrow, grow) in xhat.chunks(c).zip(gy.chunks(c)) {
                        for j in 0..c {
                            let dxhat = grow[j] * gamma.data()[j];
                            mean_dxhat[j] = mean_dxhat[j] + dxhat;
                            mean_dxhat_h[j] = mean_dxhat_h[j] + dxhat * hrow[j];
                        }
                    }
                    for j in 0..c {
                        mean_dxhat[j] = mean_dxhat[j] * inv_rows;
                        mean_dxhat_h[j] = mean_dxhat_h[j] * inv_rows;
                    }
                    let mut gx = Vec::with_capacity(xhat.len());
                    for (hrow, grow) in xhat.chunks(c).zip(gy.chunks(c)) {
                        for j in 0..c {
                            let dxhat = grow[j] * gamma.data()[j];
                            gx.push(istd[j] * (dxhat - mean_dxhat[j] - hrow[j] * mean_dxhat_h[j]));
                        }
                    }
                    gx
                } else {
                    // Running statistics are constants.
                    gy.chunks(c)
                        .flat_map(|grow| {
                            grow.iter()
                                .enumerate()
                                .map(|(j, &g)| g * gamma.data()[j] * istd[j])
                                .collect::<Vec<_>>()
                        })
                        .collect()
                };
                add_to(inputs[0], gx, grads);
                add_to(inputs[1], ggamma, grads);
                add_to(inputs[2], gbeta, grads);
            }
            Op::Conv1d => {
                let (x, w) = (&self.nodes[inputs[0]].value, &self.nodes[inputs[1]].value);
                let (bsz, l, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (k, _, cout) = (w.shape()[0], w.shape()[1], w.shape()[2]);
                let lout = l - k + 1;
                let mut gx = vec![F::zero(); x.numel()];
                let mut gw = vec![F::zero(); w.numel()];
                let mut gb = vec![F::zero(); cout];
                for bi in 0..bsz {
                    for i in 0..lout {
                        let grow = &gy[(bi * lout + i) * cout..(bi * lout + i + 1) * cout];
                        for (j, &g) in grow.iter().enumerate() {
                            gb[j] = gb[j] + g;
                        }
                        for m in 0..k {
                            for n in 0..cin {
                                let xi = (bi * l + i + m) * cin + n;
                                let wrow = &w.data()[(m * cin + n) * cout..(m * cin + n + 1) * cout];
                                let mut acc = F::zero();
                                for (j, &g) in grow.iter().enumerate() {
                                    acc = acc + g * wrow[j];
                                    gw[(m * cin + n) * cout + j] =
                                        gw[(m * cin + n) * cout + j] + x.data()[xi] * g;
                                }
                                gx[xi] = gx[xi] + acc;
                            }
                        }
                    }
                }
                add_to(inputs[0], gx, grads);
                add_to(inputs[1], gw, grads);
                add_to(inputs[2], gb, grads);
            }
            Op::MaxPool1d { argmax } => {
                let x = &self.nodes[inputs[0]].value;
                let mut gx = vec![F::zero(); x.numel()];
                for (&src, &g) in argmax.iter().zip(gy) {
                    gx[src] = gx[src] + g;
                }
                add_to(inputs[0], gx, grads);
            }
            Op::Dropout { mask } => {
                add_to(
                    inputs[0],
                    gy.iter().zip(mask).map(|(&g, &m)| g * m).collect(),
                    grads,
                );
            }
            Op::BceLoss { eps } => {
                let (p, y) = (&self.nodes[inputs[0]].value, &self.nodes[inputs[1]].value);
                let inv_n = F::from_f64(1.0 / p.numel() as f64);
                let g0 = gy[0];
                let gp = p
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&pv, &yv)| {
                        if pv <= *eps || pv >= F::one() - *eps {
                            F::zero() // inside the clipped region the loss is flat
                        } else {
                            g0 * inv_n * ((F::one() - yv) / (F::one() - pv) - yv / pv)
                        }
                    })
                    .collect();
                add_to(inputs[0], gp, grads);
            }
            Op::MseLoss => {
                let (p, y) = (&self.nodes[inputs[0]].value, &self.nodes[inputs[1]].value);
                let two_inv_n = F::from_f64(2.0 / p.numel() as f64);
                let g0 = gy[0];
                let gp: Vec<F> = p
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&pv, &yv)| g0 * two_inv_n * (pv - yv))
                    .collect();
                if self.nodes[inputs[1]].requires_grad {
                    add_to(inputs[1], gp.iter().map(|&g| -g).collect(), grads);
                }
                add_to(inputs[0], gp, grads);
            }
            Op::CceLoss { eps } => {
                let (p, y) = (&self.nodes[inputs[0]].value, &self.nodes[inputs[1]].value);
                let inv_b = F::from_f64(1.0 / p.shape()[0] as f64);
                let g0 = gy[0];
                let gp = p
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&pv, &yv)| {
                        if pv <= *eps || pv >= F::one() - *eps {
                            F::zero()
                        } else {
                            -g0 * inv_b * yv / pv
                        }
                    })
                    .collect();
                add_to(inputs[0], gp, grads);
            }
        }
    }
}

/// Probability clip used inside the cross-entropy losses.
pub const CLIP_EPS: f64 = 1e-7;

fn clamp<F: Scalar>(v: F, lo: F, hi: F) -> F {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

fn matmul_kernel<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let aik = a[i * k + p];
            if aik == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + aik * bv;
            }
        }
    }
    c
}

fn transpose_kernel<F: Scalar>(a: &[F], bsz: usize, m: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); bsz * m * n];
    for bi in 0..bsz {
        for i in 0..m {
            for j in 0..n {
                out[bi * m * n + j * m + i] = a[bi * m * n + i * n + j];
            }
        }
    }
    out
}
