//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! A [`Graph`] is built fresh for each forward pass. Every op stores its
//! output value plus whatever its backward rule needs; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into every node that
//! requires one. A tensor consumed by several ops receives the sum of their
//! contributions.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::batchnorm::{batchnorm_backward, batchnorm_eval, batchnorm_train};
use crate::nn::{
    conv2d_backward, conv2d_forward, linear_backward, linear_forward, pixel_shuffle,
    pixel_unshuffle, Activation, BnMode, ConvSpec,
};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{BinaryOp, Real, ReduceAxes, ReduceKind, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How a batch-norm node normalizes.
pub enum BnStats<'a, T> {
    Batch,
    Running { mean: &'a [T], var: &'a [T] },
}

enum Op<T: Real> {
    Leaf,
    Param,
    Binary {
        op: BinaryOp,
        a: Var,
        b: Var,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        mode: BnMode,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    PixelShuffle {
        x: Var,
        r: usize,
    },
    PixelUnshuffle {
        x: Var,
        r: usize,
    },
    Gap {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Slice {
        x: Var,
        start: usize,
    },
    BranchSoftmax {
        x: Var,
        branches: usize,
    },
    SoftRecon {
        head: Var,
        image: Var,
    },
    L1 {
        pred: Var,
        target: Tensor<T>,
    },
    WeightedSum {
        x: Var,
        weights: Tensor<T>,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Constant or differentiable input.
    pub fn input(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Leaf holding a copy of a stored parameter. Repeated requests for the
    /// same parameter share one node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.param(id).value.clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let value = Tensor::elementwise(op, self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Binary { op, a, b }, rg))
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

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let value = conv2d_forward(
            self.value(x),
            &spec,
            self.value(w),
            b.map(|b| self.value(b)),
        )?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Conv { x, w, b, spec }, rg))
    }

    /// Batch normalization. In batch mode returns the batch mean and
    /// unbiased variance so the caller can update running statistics.
    #[allow(clippy::type_complexity)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: BnStats<'_, T>,
        eps: f64,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let (fwd, mode) = match stats {
            BnStats::Batch => (batchnorm_train(self.value(x), &g, &b, eps)?, BnMode::Train),
            BnStats::Running { mean, var } => (
                batchnorm_eval(self.value(x), &g, &b, mean, var, eps)?,
                BnMode::Eval,
            ),
        };
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            fwd.y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: fwd.xhat,
                inv_std: fwd.inv_std,
                mode,
            },
            rg,
        );
        Ok((v, fwd.batch_stats))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = kind.forward(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::Act { x, kind }, rg)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let value = linear_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let value = pixel_shuffle(self.value(x), r)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::PixelShuffle { x, r }, rg))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let value = pixel_unshuffle(self.value(x), r)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::PixelUnshuffle { x, r }, rg))
    }

    /// Global average pooling to `[N, C, 1, 1]`.
    pub fn gap(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).gap()?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Gap { x }, rg))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [n, ca, h, w] = ta.shape();
        if tb.n() != n || tb.h() != h || tb.w() != w {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: ta.shape(),
                rhs: tb.shape(),
            });
        }
        let cb = tb.c();
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for i in 0..n {
            for j in 0..ca {
                data.extend_from_slice(ta.plane(i, j));
            }
            for j in 0..cb {
                data.extend_from_slice(tb.plane(i, j));
            }
        }
        let value = Tensor::new([n, ca + cb, h, w], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    /// Channels `[start, start + len)`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        if start + len > c || len == 0 {
            return Err(Error::invalid(format!(
                "channel slice {start}..{} out of {c}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(n * len * h * w);
        for i in 0..n {
            for j in start..start + len {
                data.extend_from_slice(t.plane(i, j));
            }
        }
        let value = Tensor::new([n, len, h, w], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Slice { x, start }, rg))
    }

    /// Softmax across `branches` equal channel groups of a `[N, k C, 1, 1]`
    /// tensor, independently for each channel.
    pub fn branch_softmax(&mut self, x: Var, branches: usize) -> Result<Var> {
        let t = self.value(x);
        let [n, kc, h, w] = t.shape();
        if branches == 0 || kc % branches != 0 || h != 1 || w != 1 {
            return Err(Error::invalid(format!(
                "branch_softmax: {:?} cannot split into {branches} branches",
                t.shape()
            )));
        }
        let c = kc / branches;
        let src = t.data();
        let mut out = vec![T::zero(); src.len()];
        for i in 0..n {
            for j in 0..c {
                let idx = |k: usize| i * kc + k * c + j;
                let m = (0..branches)
                    .map(|k| src[idx(k)])
                    .fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for k in 0..branches {
                    let e = (src[idx(k)] - m).exp();
                    out[idx(k)] = e;
                    z = z + e;
                }
                for k in 0..branches {
                    out[idx(k)] = out[idx(k)] / z;
                }
            }
        }
        let value = Tensor::new(t.shape(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::BranchSoftmax { x, branches }, rg))
    }

    /// `head[:, 0:1] * image + head[:, 1:4]`, the gain broadcast over RGB.
    pub fn soft_reconstruction(&mut self, head: Var, image: Var) -> Result<Var> {
        let (th, ti) = (self.value(head), self.value(image));
        let [n, ch, h, w] = th.shape();
        if ch != 4 {
            return Err(Error::invalid(format!(
                "soft reconstruction needs a 4-channel head, got {ch}"
            )));
        }
        if ti.shape() != [n, 3, h, w] {
            return Err(Error::ShapeMismatch {
                op: "soft_reconstruction",
                lhs: [n, 3, h, w],
                rhs: ti.shape(),
            });
        }
        let mut data = Vec::with_capacity(ti.len());
        for i in 0..n {
            let k = th.plane(i, 0);
            for c in 0..3 {
                let b = th.plane(i, 1 + c);
                let img = ti.plane(i, c);
                data.extend(
                    k.iter()
                        .zip(img)
                        .zip(b)
                        .map(|((&kv, &iv), &bv)| kv * iv + bv),
                );
            }
        }
        let value = Tensor::new(ti.shape(), data)?;
        let rg = self.rg(head) || self.rg(image);
        Ok(self.push(value, Op::SoftRecon { head, image }, rg))
    }

    /// Mean absolute error as a `[1, 1, 1, 1]` scalar.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "l1_loss",
                lhs: p.shape(),
                rhs: target.shape(),
            });
        }
        if p.is_empty() {
            return Err(Error::Empty("l1_loss"));
        }
        let s: T = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        let value = Tensor::new([1, 1, 1, 1], vec![s / T::from_f64(p.len() as f64)])?;
        let rg = self.rg(pred);
        Ok(self.push(
            value,
            Op::L1 {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// `sum(x * weights)` as a `[1, 1, 1, 1]` scalar; used to probe
    /// gradients with a fixed random cotangent.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor<T>) -> Result<Var> {
        let t = self.value(x);
        if t.shape() != weights.shape() {
            return Err(Error::ShapeMismatch {
                op: "weighted_sum",
                lhs: t.shape(),
                rhs: weights.shape(),
            });
        }
        let s: T = t
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        let value = Tensor::new([1, 1, 1, 1], vec![s])?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::WeightedSum {
                x,
                weights: weights.clone(),
            },
            rg,
        ))
    }

    /// Back-propagate from `root`. `seed` is the cotangent of `root`
    /// (defaults to ones).
    pub fn backward(&self, root: Var, seed: Option<Tensor<T>>) -> Result<Gradients<T>> {
        let root_shape = self.value(root).shape();
        let seed = seed.unwrap_or_else(|| Tensor::ones(root_shape));
        if seed.shape() != root_shape {
            return Err(Error::ShapeMismatch {
                op: "backward seed",
                lhs: root_shape,
                rhs: seed.shape(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients { grads, params })
    }

    fn backward_node(
        &self,
        i: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let node = &self.nodes[i];
        let mut send = |v: Var, t: Tensor<T>| -> Result<()> {
            if !self.nodes[v.0].requires_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Binary { op, a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let broadcast = ta.shape() != tb.shape();
                let reduce_b = |t: Tensor<T>| -> Result<Tensor<T>> {
                    if !broadcast {
                        return Ok(t);
                    }
                    let axes = if tb.n() == 1 && ta.n() != 1 {
                        ReduceAxes::BatchSpatial
                    } else {
                        ReduceAxes::Spatial
                    };
                    t.reduce(ReduceKind::Sum, axes)
                };
                match op {
                    BinaryOp::Add => {
                        if self.rg(*a) {
                            send(*a, g.clone())?;
                        }
                        if self.rg(*b) {
                            send(*b, reduce_b(g.clone())?)?;
                        }
                    }
                    BinaryOp::Sub => {
                        if self.rg(*a) {
                            send(*a, g.clone())?;
                        }
                        if self.rg(*b) {
                            send(*b, reduce_b(g.map(|v| -v))?)?;
                        }
                    }
                    BinaryOp::Mul => {
                        if self.rg(*a) {
                            send(*a, g.mul(tb)?)?;
                        }
                        if self.rg(*b) {
                            send(*b, reduce_b(g.mul(ta)?)?)?;
                        }
                    }
                }
            }
            Op::Conv { x, w, b, spec } => {
                let gr = conv2d_backward(self.value(*x), spec, self.value(*w), g, self.rg(*x))?;
                if let Some(gx) = gr.grad_x {
                    send(*x, gx)?;
                }
                send(*w, gr.grad_w)?;
                if let (Some(b), Some(gb)) = (b, gr.grad_b) {
                    send(*b, gb)?;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let gam = self.value(*gamma).data().to_vec();
                let (dx, dg, db) = batchnorm_backward(g, xhat, inv_std, &gam, *mode)?;
                send(*x, dx)?;
                let shape = self.value(*gamma).shape();
                send(*gamma, Tensor::new(shape, dg)?)?;
                send(*beta, Tensor::new(shape, db)?)?;
            }
            Op::Act { x, kind } => {
                send(*x, kind.backward(self.value(*x), &node.value, g))?;
            }
            Op::Linear { x, w, b } => {
                let (gx, gw, gb) = linear_backward(self.value(*x), self.value(*w), g)?;
                send(*x, gx)?;
                send(*w, gw)?;
                if let Some(b) = b {
                    let shape = self.value(*b).shape();
                    send(*b, gb.reshape(shape)?)?;
                }
            }
            Op::PixelShuffle { x, r } => send(*x, pixel_unshuffle(g, *r)?)?,
            Op::PixelUnshuffle { x, r } => send(*x, pixel_shuffle(g, *r)?)?,
            Op::Gap { x } => {
                let shape = self.value(*x).shape();
                let inv = T::one() / T::from_f64((shape[2] * shape[3]) as f64);
                let gx = Tensor::from_fn(shape, |n, c, _, _| g.at(n, c, 0, 0) * inv);
                send(*x, gx)?;
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).c();
                let [n, c, h, w] = g.shape();
                let hw = h * w;
                let mut ga = Vec::with_capacity(n * ca * hw);
                let mut gb = Vec::with_capacity(n * (c - ca) * hw);
                for i in 0..n {
                    for j in 0..c {
                        if j < ca {
                            ga.extend_from_slice(g.plane(i, j));
                        } else {
                            gb.extend_from_slice(g.plane(i, j));
                        }
                    }
                }
                send(*a, Tensor::new(self.value(*a).shape(), ga)?)?;
                send(*b, Tensor::new(self.value(*b).shape(), gb)?)?;
            }
            Op::Slice { x, start } => {
                let shape = self.value(*x).shape();
                let len = g.c();
                let gx = Tensor::from_fn(shape, |n, c, y, xx| {
                    if c >= *start && c < start + len {
                        g.at(n, c - start, y, xx)
                    } else {
                        T::zero()
                    }
                });
                send(*x, gx)?;
            }
            Op::BranchSoftmax { x, branches } => {
                let s = &node.value;
                let [n, kc, _, _] = s.shape();
                let c = kc / branches;
                let mut gx = vec![T::zero(); s.len()];
                for i in 0..n {
                    for j in 0..c {
                        let idx = |k: usize| i * kc + k * c + j;
                        let dotp: T = (0..*branches)
                            .map(|k| s.data()[idx(k)] * g.data()[idx(k)])
                            .sum();
                        for k in 0..*branches {
                            gx[idx(k)] = s.data()[idx(k)] * (g.data()[idx(k)] - dotp);
                        }
                    }
                }
                send(*x, Tensor::new(s.shape(), gx)?)?;
            }
            Op::SoftRecon { head, image } => {
                let (th, ti) = (self.value(*head), self.value(*image));
                let [n, _, h, w] = th.shape();
                if self.rg(*head) {
                    let mut gh = Tensor::zeros(th.shape());
                    for i in 0..n {
                        for y in 0..h {
                            for xx in 0..w {
                                let mut gk = T::zero();
                                for c in 0..3 {
                                    let gv = g.at(i, c, y, xx);
                                    gk = gk + gv * ti.at(i, c, y, xx);
                                    gh.set(i, 1 + c, y, xx, gv);
                                }
                                gh.set(i, 0, y, xx, gk);
                            }
                        }
                    }
                    send(*head, gh)?;
                }
                if self.rg(*image) {
                    let gi = Tensor::from_fn(ti.shape(), |i, c, y, xx| {
                        th.at(i, 0, y, xx) * g.at(i, c, y, xx)
                    });
                    send(*image, gi)?;
                }
            }
            Op::L1 { pred, target } => {
                let p = self.value(*pred);
                let scale = g.data()[0] / T::from_f64(p.len() as f64);
                let data = p
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&a, &b)| {
                        if a > b {
                            scale
                        } else if a < b {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                send(*pred, Tensor::new(p.shape(), data)?)?;
            }
            Op::WeightedSum { x, weights } => {
                let s = g.data()[0];
                send(*x, weights.map(|w| w * s))?;
            }
        }
        Ok(())
    }
}

/// Result of a backward pass.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for every parameter that received one.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.get(v).map(|g| (id, g)))
    }

    /// Add every parameter gradient into the store's `grad` buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (id, g) in self.param_grads() {
            store.accumulate_grad(id, g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_consumers_sum_gradients() {
        // y = x * x + x  ->  dy/dx = 2x + 1
        let mut g = Graph::<f64>::new();
        let x = g.input(
            Tensor::new([1, 1, 1, 3], vec![1.0, -2.0, 0.5]).unwrap(),
            true,
        );
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        let grads = g.backward(y, None).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, -3.0, 2.0]);
    }

    #[test]
    fn constant_inputs_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::ones([1, 1, 2, 2]), false);
        let b = g.input(Tensor::ones([1, 1, 2, 2]), true);
        let y = g.mul(a, b).unwrap();
        let grads = g.backward(y, None).unwrap();
        assert!(grads.get(a).is_none());
        assert!(grads.get(b).is_some());
    }

    #[test]
    fn branch_softmax_equal_logits_split_evenly() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros([2, 6, 1, 1]), true);
        let s = g.branch_softmax(x, 2).unwrap();
        assert!(g.value(s).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn soft_reconstruction_rejects_wrong_channels() {
        let mut g = Graph::<f64>::new();
        let h = g.input(Tensor::zeros([1, 3, 2, 2]), true);
        let i = g.input(Tensor::zeros([1, 3, 2, 2]), false);
        assert!(g.soft_reconstruction(h, i).is_err());
    }

    #[test]
    fn l1_subgradient_zero_at_ties() {
        let mut g = Graph::<f64>::new();
        let p = g.input(
            Tensor::new([1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap(),
            true,
        );
        let t = Tensor::new([1, 1, 1, 3], vec![1.0, 1.0, 4.0]).unwrap();
        let l = g.l1_loss(p, &t).unwrap();
        assert!((g.value(l).data()[0] - 2.0 / 3.0).abs() < 1e-15);
        let grads = g.backward(l, None).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(grads.get(p).unwrap().data(), &[0.0, third, -third]);
    }
}
