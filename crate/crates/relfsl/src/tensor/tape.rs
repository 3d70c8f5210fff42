//! Dynamic tape: applied primitives are recorded in topological order and
//! replayed in reverse to populate leaf gradients.
//!
//! A tape and its tracked tensors belong to one worker; tensors created
//! without gradient tracking are plain values and freely shareable.

use super::ops::{self, BnStats};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// One applied-primitive node: the produced value plus what is needed to
/// replay its backward rule (op identifier, input references, saved
/// intermediates).
struct Node<E: Scalar> {
    tensor: Tensor<E>,
    record: Record<E>,
}

enum Record<E: Scalar> {
    Leaf,
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddScalar { a: Var },
    MulScalar { a: Var, c: E },
    Relu { a: Var },
    Matmul { a: Var, b: Var },
    Bmm { a: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, stride: usize, padding: usize },
    MaxPool { x: Var },
    BnTrain { x: Var, gamma: Var, beta: Var, stats: BnStats<E> },
    BnEval {
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: Tensor<E>,
        running_var: Tensor<E>,
        eps: f64,
    },
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    SumAxis { x: Var, axis: usize },
    MeanAxis { x: Var, axis: usize },
    SumAll { x: Var },
    MeanAll { x: Var },
    L2Normalize { x: Var, axis: usize, denoms: Vec<E> },
    Concat { parts: Vec<Var>, axis: usize },
    Gather { x: Var, indices: Vec<usize> },
    PickPerRow { x: Var, cols: Vec<usize> },
    Reshape { x: Var },
    Permute { x: Var, axes: Vec<usize> },
    HadamardWindow { x: Var, window: usize },
}

/// Recording context for one forward/backward cycle.
pub struct Tape<E: Scalar> {
    nodes: Vec<Node<E>>,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input tensor. Its `requires_grad` flag decides whether
    /// `backward` populates a gradient for it.
    pub fn leaf(&mut self, tensor: Tensor<E>) -> Var {
        self.push_node(tensor, Record::Leaf)
    }

    /// Convenience: an untracked constant.
    pub fn constant(&mut self, tensor: Tensor<E>) -> Var {
        self.push_node(tensor.requires_grad(false), Record::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].tensor
    }

    /// Gradient of the most recent `backward` for this node, if tracked.
    pub fn grad(&self, v: Var) -> Option<&[E]> {
        self.nodes[v.0].tensor.grad.as_deref()
    }

    fn push_node(&mut self, tensor: Tensor<E>, record: Record<E>) -> Var {
        #[cfg(debug_assertions)]
        {
            if !matches!(record, Record::Leaf) {
                debug_assert!(
                    tensor.all_finite(),
                    "primitive produced a non-finite value on finite inputs"
                );
            }
        }
        self.nodes.push(Node { tensor, record });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, tensor: Tensor<E>, parents: &[Var], record: Record<E>) -> Var {
        let requires = parents.iter().any(|p| self.nodes[p.0].tensor.requires_grad);
        self.push_node(tensor.requires_grad(requires), record)
    }

    // ── forward-recording primitives ─────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = ops::add(self.value(a), self.value(b))?;
        Ok(self.push_op(t, &[a, b], Record::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = ops::sub(self.value(a), self.value(b))?;
        Ok(self.push_op(t, &[a, b], Record::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push_op(t, &[a, b], Record::Mul { a, b }))
    }

    pub fn add_scalar(&mut self, a: Var, c: E) -> Var {
        let t = ops::add_scalar(self.value(a), c);
        self.push_op(t, &[a], Record::AddScalar { a })
    }

    pub fn mul_scalar(&mut self, a: Var, c: E) -> Var {
        let t = ops::mul_scalar(self.value(a), c);
        self.push_op(t, &[a], Record::MulScalar { a, c })
    }

    /// Convex combination `lambda * a + (1 - lambda) * b`.
    pub fn lerp(&mut self, a: Var, b: Var, lambda: E) -> Result<Var> {
        let sa = self.mul_scalar(a, lambda);
        let sb = self.mul_scalar(b, E::one() - lambda);
        self.add(sa, sb)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = ops::relu(self.value(a));
        self.push_op(t, &[a], Record::Relu { a })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push_op(t, &[a, b], Record::Matmul { a, b }))
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = ops::bmm(self.value(a), self.value(b))?;
        Ok(self.push_op(t, &[a, b], Record::Bmm { a, b }))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let t = ops::conv2d(self.value(x), self.value(w), self.value(b), stride, padding)?;
        Ok(self.push_op(t, &[x, w, b], Record::Conv2d { x, w, b, stride, padding }))
    }

    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let t = ops::maxpool2x2(self.value(x))?;
        Ok(self.push_op(t, &[x], Record::MaxPool { x }))
    }

    /// Training-mode batchnorm. Returns the output together with the batch
    /// statistics so the caller can maintain running estimates.
    pub fn batchnorm2d_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BnStats<E>)> {
        let (t, stats) =
            ops::batchnorm2d_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let out = self.push_op(
            t,
            &[x, gamma, beta],
            Record::BnTrain { x, gamma, beta, stats: stats.clone() },
        );
        Ok((out, stats))
    }

    pub fn batchnorm2d_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<E>,
        running_var: &Tensor<E>,
        eps: f64,
    ) -> Result<Var> {
        let t = ops::batchnorm2d_eval(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            eps,
        )?;
        Ok(self.push_op(
            t,
            &[x, gamma, beta],
            Record::BnEval {
                x,
                gamma,
                beta,
                running_mean: running_mean.clone(),
                running_var: running_var.clone(),
                eps,
            },
        ))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = ops::softmax(self.value(x), axis)?;
        Ok(self.push_op(t, &[x], Record::Softmax { x, axis }))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = ops::log_softmax(self.value(x), axis)?;
        Ok(self.push_op(t, &[x], Record::LogSoftmax { x, axis }))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = ops::sum_axis(self.value(x), axis)?;
        Ok(self.push_op(t, &[x], Record::SumAxis { x, axis }))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = ops::mean_axis(self.value(x), axis)?;
        Ok(self.push_op(t, &[x], Record::MeanAxis { x, axis }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let t = ops::sum_all(self.value(x));
        self.push_op(t, &[x], Record::SumAll { x })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = ops::mean_all(self.value(x));
        self.push_op(t, &[x], Record::MeanAll { x })
    }

    pub fn l2_normalize(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let (t, denoms) = ops::l2_normalize(self.value(x), axis, eps)?;
        Ok(self.push_op(t, &[x], Record::L2Normalize { x, axis, denoms }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor<E>> = parts.iter().map(|v| self.value(*v)).collect();
        let t = ops::concat(&tensors, axis)?;
        Ok(self.push_op(t, parts, Record::Concat { parts: parts.to_vec(), axis }))
    }

    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = ops::gather_rows(self.value(x), indices)?;
        Ok(self.push_op(t, &[x], Record::Gather { x, indices: indices.to_vec() }))
    }

    pub fn pick_per_row(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let t = ops::pick_per_row(self.value(x), cols)?;
        Ok(self.push_op(t, &[x], Record::PickPerRow { x, cols: cols.to_vec() }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push_op(t, &[x], Record::Reshape { x }))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let t = ops::permute(self.value(x), axes)?;
        Ok(self.push_op(t, &[x], Record::Permute { x, axes: axes.to_vec() }))
    }

    pub fn hadamard_window(&mut self, x: Var, window: usize) -> Result<Var> {
        let t = ops::hadamard_window(self.value(x), window)?;
        Ok(self.push_op(t, &[x], Record::HadamardWindow { x, window }))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse replay from a scalar loss. Visits each recorded node exactly
    /// once; non-leaf gradients are dropped as soon as they are consumed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.nodes[loss.0].tensor.grad = Some(vec![E::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tensor.requires_grad {
                self.nodes[i].tensor.grad = None;
                continue;
            }
            let Some(gy) = self.nodes[i].tensor.grad.take() else {
                continue;
            };
            let record = std::mem::replace(&mut self.nodes[i].record, Record::Leaf);
            self.apply_backward(i, &record, &gy);
            match record {
                Record::Leaf => {
                    // restore: leaves keep their record and their gradient
                    self.nodes[i].record = Record::Leaf;
                    self.nodes[i].tensor.grad = Some(gy);
                }
                other => {
                    self.nodes[i].record = other;
                }
            }
        }
        Ok(())
    }

    fn apply_backward(&mut self, node: usize, record: &Record<E>, gy: &[E]) {
        match record {
            Record::Leaf => {}
            Record::Add { a, b } => {
                self.accumulate(*a, gy);
                self.accumulate(*b, gy);
            }
            Record::Sub { a, b } => {
                self.accumulate(*a, gy);
                let neg: Vec<E> = gy.iter().map(|&g| -g).collect();
                self.accumulate(*b, &neg);
            }
            Record::Mul { a, b } => {
                if self.requires(*a) {
                    let da: Vec<E> = gy
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&g, &bv)| g * bv)
                        .collect();
                    self.accumulate(*a, &da);
                }
                if self.requires(*b) {
                    let db: Vec<E> = gy
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&g, &av)| g * av)
                        .collect();
                    self.accumulate(*b, &db);
                }
            }
            Record::AddScalar { a } => self.accumulate(*a, gy),
            Record::MulScalar { a, c } => {
                let da: Vec<E> = gy.iter().map(|&g| g * *c).collect();
                self.accumulate(*a, &da);
            }
            Record::Relu { a } => {
                let da = ops::relu_backward(self.value(*a), gy);
                self.accumulate(*a, &da);
            }
            Record::Matmul { a, b } => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                if self.requires(*a) {
                    let mut da = vec![E::zero(); m * k];
                    ops::matmul_nt_raw(gy, self.value(*b).data(), &mut da, m, n, k);
                    self.accumulate(*a, &da);
                }
                if self.requires(*b) {
                    // dB = A^T @ dY with A: [m,k], dY: [m,n] -> [k,n]
                    let mut db = vec![E::zero(); k * n];
                    ops::matmul_tn_raw(self.value(*a).data(), gy, &mut db, k, m, n);
                    self.accumulate(*b, &db);
                }
            }
            Record::Bmm { a, b } => {
                let (p, m, k) = {
                    let s = self.value(*a).shape();
                    (s[0], s[1], s[2])
                };
                let n = self.value(*b).shape()[2];
                if self.requires(*a) {
                    let mut da = vec![E::zero(); p * m * k];
                    for i in 0..p {
                        ops::matmul_nt_raw(
                            &gy[i * m * n..(i + 1) * m * n],
                            &self.value(*b).data()[i * k * n..(i + 1) * k * n],
                            &mut da[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.accumulate(*a, &da);
                }
                if self.requires(*b) {
                    let mut db = vec![E::zero(); p * k * n];
                    for i in 0..p {
                        ops::matmul_tn_raw(
                            &self.value(*a).data()[i * m * k..(i + 1) * m * k],
                            &gy[i * m * n..(i + 1) * m * n],
                            &mut db[i * k * n..(i + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                    self.accumulate(*b, &db);
                }
            }
            Record::Conv2d { x, w, b, stride, padding } => {
                let (dx, dw, db) = ops::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    gy,
                    *stride,
                    *padding,
                );
                if self.requires(*x) {
                    self.accumulate(*x, &dx);
                }
                if self.requires(*w) {
                    self.accumulate(*w, &dw);
                }
                if self.requires(*b) {
                    self.accumulate(*b, &db);
                }
            }
            Record::MaxPool { x } => {
                let dx = ops::maxpool2x2_backward(self.value(*x), gy);
                self.accumulate(*x, &dx);
            }
            Record::BnTrain { x, gamma, beta, stats } => {
                let (dx, dgamma, dbeta) =
                    ops::batchnorm2d_train_backward(self.value(*x), self.value(*gamma), stats, gy);
                if self.requires(*x) {
                    self.accumulate(*x, &dx);
                }
                if self.requires(*gamma) {
                    self.accumulate(*gamma, &dgamma);
                }
                if self.requires(*beta) {
                    self.accumulate(*beta, &dbeta);
                }
            }
            Record::BnEval { x, gamma, beta, running_mean, running_var, eps } => {
                let (dx, dgamma, dbeta) = ops::batchnorm2d_eval_backward(
                    self.value(*x),
                    self.value(*gamma),
                    running_mean,
                    running_var,
                    *eps,
                    gy,
                );
                if self.requires(*x) {
                    self.accumulate(*x, &dx);
                }
                if self.requires(*gamma) {
                    self.accumulate(*gamma, &dgamma);
                }
                if self.requires(*beta) {
                    self.accumulate(*beta, &dbeta);
                }
            }
            Record::Softmax { x, axis } => {
                let dx = ops::softmax_backward(&self.nodes[node].tensor, gy, *axis);
                self.accumulate(*x, &dx);
            }
            Record::LogSoftmax { x, axis } => {
                let dx = ops::log_softmax_backward(&self.nodes[node].tensor, gy, *axis);
                self.accumulate(*x, &dx);
            }
            Record::SumAxis { x, axis } => {
                let dx =
                    ops::broadcast_axis_backward(self.value(*x).shape(), *axis, gy, E::one());
                self.accumulate(*x, &dx);
            }
            Record::MeanAxis { x, axis } => {
                let scale = E::from_f64(1.0 / self.value(*x).shape()[*axis] as f64);
                let dx = ops::broadcast_axis_backward(self.value(*x).shape(), *axis, gy, scale);
                self.accumulate(*x, &dx);
            }
            Record::SumAll { x } => {
                let dx = vec![gy[0]; self.value(*x).numel()];
                self.accumulate(*x, &dx);
            }
            Record::MeanAll { x } => {
                let scale = E::from_f64(1.0 / self.value(*x).numel() as f64);
                let dx = vec![gy[0] * scale; self.value(*x).numel()];
                self.accumulate(*x, &dx);
            }
            Record::L2Normalize { x, axis, denoms } => {
                let dx = ops::l2_normalize_backward(self.value(*x), denoms, gy, *axis);
                self.accumulate(*x, &dx);
            }
            Record::Concat { parts, axis } => {
                let out_shape = self.nodes[node].tensor.shape().to_vec();
                let (outer, total_len, inner) = super::axis_split(&out_shape, *axis);
                let mut start = 0;
                for p in parts {
                    let len = self.value(*p).shape()[*axis];
                    if self.requires(*p) {
                        let mut dp = vec![E::zero(); outer * len * inner];
                        for o in 0..outer {
                            let src = &gy[(o * total_len + start) * inner..][..len * inner];
                            dp[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
                        }
                        self.accumulate(*p, &dp);
                    }
                    start += len;
                }
            }
            Record::Gather { x, indices } => {
                let dx = ops::gather_rows_backward(self.value(*x).shape(), indices, gy);
                self.accumulate(*x, &dx);
            }
            Record::PickPerRow { x, cols } => {
                let width = self.value(*x).shape()[1];
                let mut dx = vec![E::zero(); self.value(*x).numel()];
                for (r, &c) in cols.iter().enumerate() {
                    dx[r * width + c] = dx[r * width + c] + gy[r];
                }
                self.accumulate(*x, &dx);
            }
            Record::Reshape { x } => self.accumulate(*x, gy),
            Record::Permute { x, axes } => {
                let out_shape = self.nodes[node].tensor.shape().to_vec();
                let gy_t = Tensor::new(out_shape, gy.to_vec()).expect("grad matches node shape");
                let dx = ops::permute(&gy_t, &ops::inverse_axes(axes)).expect("inverse permute");
                self.accumulate(*x, dx.data());
            }
            Record::HadamardWindow { x, window } => {
                let dx = ops::hadamard_window_backward(self.value(*x), *window, gy);
                self.accumulate(*x, &dx);
            }
        }
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad
    }

    fn accumulate(&mut self, v: Var, contribution: &[E]) {
        if !self.requires(v) {
            return;
        }
        let numel = self.nodes[v.0].tensor.numel();
        debug_assert_eq!(numel, contribution.len());
        let grad = self.nodes[v.0]
            .tensor
            .grad
            .get_or_insert_with(|| vec![E::zero(); numel]);
        for (g, &c) in grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(
            Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().requires_grad(true),
        );
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn dead_relu_gets_zero_grad() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![1], vec![-1.0]).unwrap().requires_grad(true));
        let y = tape.relu(x);
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().requires_grad(true));
        let y = tape.mul(x, x).unwrap();
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn grads_accumulate_over_reuse() {
        // loss = sum(x * x) + sum(x) -> grad = 2x + 1
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![3.0, -1.0]).unwrap().requires_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let a = tape.sum_all(sq);
        let b = tape.sum_all(x);
        let loss = tape.add(a, b).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[7.0, -1.0]);
    }

    #[test]
    fn untracked_leaf_gets_no_grad() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let y = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn lerp_endpoints_reproduce_inputs() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::new(vec![2], vec![2.0, 4.0]).unwrap());
        let b = tape.leaf(Tensor::new(vec![2], vec![-1.0, 7.0]).unwrap());
        let at1 = tape.lerp(a, b, 1.0).unwrap();
        let at0 = tape.lerp(a, b, 0.0).unwrap();
        let mid = tape.lerp(a, b, 0.5).unwrap();
        assert_eq!(tape.value(at1).data(), &[2.0, 4.0]);
        assert_eq!(tape.value(at0).data(), &[-1.0, 7.0]);
        assert_eq!(tape.value(mid).data(), &[0.5, 5.5]);
    }
}
