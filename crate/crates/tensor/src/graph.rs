//! Reverse-mode autodiff tape.
//!
//! Ops are recorded in execution order; `backward` sweeps the tape once in
//! reverse, so each node's rule fires exactly once. Recording is
//! single-threaded; values are immutable snapshots, so closures capture them
//! cheaply by `Tensor` clone.

use std::cell::RefCell;

use crate::error::{Result, TensorError};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }
}

type BackwardRule<T> = Box<dyn Fn(&Tensor<T>) -> Vec<(usize, Tensor<T>)>>;

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    rule: Option<BackwardRule<T>>,
}

pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Tensor<T>>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    fn push(&self, value: Tensor<T>, requires_grad: bool, rule: Option<BackwardRule<T>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            rule,
        });
        Var {
            id: nodes.len() - 1,
        }
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, None)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, false, None)
    }

    pub fn constant_scalar(&self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    /// Record an externally computed op. `rule` maps the output gradient to
    /// `(parent id, gradient contribution)` pairs; pass `None` when no input
    /// requires gradients.
    pub fn custom(&self, value: Tensor<T>, parents: &[Var], rule: Option<BackwardRule<T>>) -> Var {
        let rg = self.any_grad(parents) && rule.is_some();
        self.push(value, rg, if rg { rule } else { None })
    }

    /// Run reverse-mode accumulation from a scalar loss. Gradients are stored
    /// on the graph and read back with [`Graph::grad`].
    pub fn backward(&self, loss: Var) -> Result<()> {
        let n = self.len();
        let loss_shape = self.shape(loss);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss { shape: loss_shape });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        grads[loss.id] = Some(Tensor::full(self.shape(loss), T::one()));
        let nodes = self.nodes.borrow();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].clone() else { continue };
            let Some(rule) = nodes[id].rule.as_ref() else { continue };
            for (pid, contrib) in rule(&g) {
                if !nodes[pid].requires_grad {
                    continue;
                }
                grads[pid] = Some(match grads[pid].take() {
                    None => contrib,
                    Some(acc) => ops::add(&acc, &contrib)?,
                });
            }
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.grads.borrow().get(v.id).and_then(|g| g.clone())
    }

    // ---- elementwise ----

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(&self.value(a), &self.value(b))?;
        let rule = self.any_grad(&[a, b]).then(|| {
            let (ai, bi) = (a.id, b.id);
            Box::new(move |g: &Tensor<T>| vec![(ai, g.clone()), (bi, g.clone())]) as BackwardRule<T>
        });
        Ok(self.custom(out, &[a, b], rule))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = ops::sub(&self.value(a), &self.value(b))?;
        let rule = self.any_grad(&[a, b]).then(|| {
            let (ai, bi) = (a.id, b.id);
            Box::new(move |g: &Tensor<T>| vec![(ai, g.clone()), (bi, ops::neg(g))])
                as BackwardRule<T>
        });
        Ok(self.custom(out, &[a, b], rule))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = ops::mul(&av, &bv)?;
        let rule = self.any_grad(&[a, b]).then(|| {
            let (ai, bi) = (a.id, b.id);
            Box::new(move |g: &Tensor<T>| {
                vec![
                    (ai, ops::mul(g, &bv).expect("shape checked")),
                    (bi, ops::mul(g, &av).expect("shape checked")),
                ]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[a, b], rule))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = ops::div(&av, &bv)?;
        let rule = self.any_grad(&[a, b]).then(|| {
            let (ai, bi) = (a.id, b.id);
            let (av, bv) = (av.clone(), bv.clone());
            Box::new(move |g: &Tensor<T>| {
                let da = ops::div(g, &bv).expect("shape checked");
                let b2 = ops::mul(&bv, &bv).expect("shape checked");
                let db = ops::neg(
                    &ops::div(&ops::mul(g, &av).expect("shape checked"), &b2)
                        .expect("shape checked"),
                );
                vec![(ai, da), (bi, db)]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[a, b], rule))
    }

    pub fn neg(&self, a: Var) -> Var {
        let out = ops::neg(&self.value(a));
        let rule = self
            .requires_grad(a)
            .then(|| Box::new(move |g: &Tensor<T>| vec![(a.id, ops::neg(g))]) as BackwardRule<T>);
        self.custom(out, &[a], rule)
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        let out = ops::scale(&self.value(a), c);
        let rule = self.requires_grad(a).then(|| {
            Box::new(move |g: &Tensor<T>| vec![(a.id, ops::scale(g, c))]) as BackwardRule<T>
        });
        self.custom(out, &[a], rule)
    }

    pub fn add_scalar(&self, a: Var, c: T) -> Var {
        let out = ops::add_scalar(&self.value(a), c);
        let rule = self
            .requires_grad(a)
            .then(|| Box::new(move |g: &Tensor<T>| vec![(a.id, g.clone())]) as BackwardRule<T>);
        self.custom(out, &[a], rule)
    }

    pub fn exp(&self, a: Var) -> Var {
        let out = ops::exp(&self.value(a));
        let rule = self.requires_grad(a).then(|| {
            let y = out.clone();
            Box::new(move |g: &Tensor<T>| vec![(a.id, ops::mul(g, &y).expect("shape checked"))])
                as BackwardRule<T>
        });
        self.custom(out, &[a], rule)
    }

    pub fn ln(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = ops::ln(&av);
        let rule = self.requires_grad(a).then(|| {
            Box::new(move |g: &Tensor<T>| vec![(a.id, ops::div(g, &av).expect("shape checked"))])
                as BackwardRule<T>
        });
        self.custom(out, &[a], rule)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let out = ops::sqrt(&self.value(a));
        let rule = self.requires_grad(a).then(|| {
            let y = out.clone();
            Box::new(move |g: &Tensor<T>| {
                let two = T::from_f64_lossy(2.0);
                let dy = ops::zip("sqrt_bwd", g, &y, |gv, yv| gv / (two * yv))
                    .expect("shape checked");
                vec![(a.id, dy)]
            }) as BackwardRule<T>
        });
        self.custom(out, &[a], rule)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = ops::sigmoid(&self.value(a));
        let rule = self.requires_grad(a).then(|| {
            let y = out.clone();
            Box::new(move |g: &Tensor<T>| {
                let dy = ops::zip("sigmoid_bwd", g, &y, |gv, yv| gv * yv * (T::one() - yv))
                    .expect("shape checked");
                vec![(a.id, dy)]
            }) as BackwardRule<T>
        });
        self.custom(out, &[a], rule)
    }

    pub fn silu(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = ops::silu(&av);
        let rule = self.requires_grad(a).then(|| {
            Box::new(move |g: &Tensor<T>| {
                let dy = ops::zip("silu_bwd", g, &av, |gv, x| {
                    let s = ops::sigmoid_val(x);
                    gv * s * (T::one() + x * (T::one() - s))
                })
                .expect("shape checked");
                vec![(a.id, dy)]
            }) as BackwardRule<T>
        });
        self.custom(out, &[a], rule)
    }

    // ---- broadcast helpers ----

    pub fn add_bias(&self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let out = ops::add_bias(&xv, &bv)?;
        let rule = self.any_grad(&[x, b]).then(|| {
            let blen = bv.len();
            let bshape = bv.shape().to_vec();
            let (xi, bi) = (x.id, b.id);
            Box::new(move |g: &Tensor<T>| {
                let mut db = vec![T::zero(); blen];
                for (i, &gv) in g.data().iter().enumerate() {
                    db[i % blen] += gv;
                }
                vec![
                    (xi, g.clone()),
                    (bi, Tensor::from_vec(bshape.clone(), db).expect("shape checked")),
                ]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[x, b], rule))
    }

    pub fn mul_last_bcast(&self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        let out = ops::mul_last_bcast(&xv, &sv)?;
        let rule = self.any_grad(&[x, s]).then(|| {
            let (xi, si) = (x.id, s.id);
            let (xv, sv) = (xv.clone(), sv.clone());
            Box::new(move |g: &Tensor<T>| {
                let d = *xv.shape().last().unwrap();
                let dx = ops::mul_last_bcast(g, &sv).expect("shape checked");
                let mut ds = vec![T::zero(); sv.len()];
                for (row, slot) in ds.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for j in 0..d {
                        acc += g.data()[row * d + j] * xv.data()[row * d + j];
                    }
                    *slot = acc;
                }
                vec![
                    (xi, dx),
                    (si, Tensor::from_vec(sv.shape().to_vec(), ds).expect("shape checked")),
                ]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[x, s], rule))
    }

    // ---- matmul family ----

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = ops::matmul(&av, &bv)?;
        let rule = self.any_grad(&[a, b]).then(|| {
            let (ai, bi) = (a.id, b.id);
            Box::new(move |g: &Tensor<T>| {
                vec![
                    (ai, ops::matmul_nt(g, &bv).expect("shape checked")),
                    (bi, ops::matmul_tn(&av, g).expect("shape checked")),
                ]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[a, b], rule))
    }

    /// `a @ b^T` with `a: [M,K]`, `b: [N,K]`.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = ops::matmul_nt(&av, &bv)?;
        let rule = self.any_grad(&[a, b]).then(|| {
            let (ai, bi) = (a.id, b.id);
            Box::new(move |g: &Tensor<T>| {
                vec![
                    (ai, ops::matmul(g, &bv).expect("shape checked")),
                    (bi, ops::matmul_tn(g, &av).expect("shape checked")),
                ]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[a, b], rule))
    }

    pub fn bmm(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = ops::bmm(&av, &bv)?;
        let rule = self.any_grad(&[a, b]).then(|| {
            let (ai, bi) = (a.id, b.id);
            Box::new(move |g: &Tensor<T>| {
                let da = ops::bmm_nt(g, &bv).expect("shape checked");
                let at = ops::permute(&av, &[0, 2, 1]).expect("shape checked");
                let db = ops::bmm(&at, g).expect("shape checked");
                vec![(ai, da), (bi, db)]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[a, b], rule))
    }

    pub fn bmm_nt(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = ops::bmm_nt(&av, &bv)?;
        let rule = self.any_grad(&[a, b]).then(|| {
            let (ai, bi) = (a.id, b.id);
            Box::new(move |g: &Tensor<T>| {
                let da = ops::bmm(g, &bv).expect("shape checked");
                let gt = ops::permute(g, &[0, 2, 1]).expect("shape checked");
                let db = ops::bmm(&gt, &av).expect("shape checked");
                vec![(ai, da), (bi, db)]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[a, b], rule))
    }

    // ---- shape ops ----

    pub fn reshape(&self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let av = self.value(a);
        let in_shape = av.shape().to_vec();
        let out = av.reshape(shape)?;
        let rule = self.requires_grad(a).then(|| {
            Box::new(move |g: &Tensor<T>| {
                vec![(a.id, g.reshape(in_shape.clone()).expect("numel preserved"))]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[a], rule))
    }

    pub fn permute(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = ops::permute(&self.value(a), axes)?;
        let rule = self.requires_grad(a).then(|| {
            let mut inverse = vec![0usize; axes.len()];
            for (i, &ax) in axes.iter().enumerate() {
                inverse[ax] = i;
            }
            Box::new(move |g: &Tensor<T>| {
                vec![(a.id, ops::permute(g, &inverse).expect("axes valid"))]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[a], rule))
    }

    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let in_shape = av.shape().to_vec();
        let out = ops::narrow(&av, axis, start, len)?;
        let rule = self.requires_grad(a).then(|| {
            Box::new(move |g: &Tensor<T>| {
                let outer: usize = in_shape[..axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let mut dx = vec![T::zero(); in_shape.iter().product()];
                for o in 0..outer {
                    let dst = o * in_shape[axis] * inner + start * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                vec![(a.id, Tensor::from_vec(in_shape.clone(), dx).expect("shape checked"))]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[a], rule))
    }

    pub fn concat(&self, axis: usize, parts: &[Var]) -> Result<Var> {
        let values: Vec<Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let refs: Vec<&Tensor<T>> = values.iter().collect();
        let out = ops::concat(axis, &refs)?;
        let rule = self.any_grad(parts).then(|| {
            let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
            let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
            Box::new(move |g: &Tensor<T>| {
                let mut outp = Vec::with_capacity(ids.len());
                let mut off = 0;
                for (i, &len) in lens.iter().enumerate() {
                    let part = ops::narrow(g, axis, off, len).expect("window valid");
                    outp.push((ids[i], part));
                    off += len;
                }
                outp
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, parts, rule))
    }

    // ---- gather / heads ----

    pub fn embedding(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let out = ops::embedding(&tv, ids)?;
        let rule = self.requires_grad(table).then(|| {
            let ids = ids.to_vec();
            let tshape = tv.shape().to_vec();
            Box::new(move |g: &Tensor<T>| {
                let d = tshape[1];
                let mut dt = vec![T::zero(); tshape[0] * d];
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g.data()[row * d + j];
                    }
                }
                vec![(
                    table.id,
                    Tensor::from_vec(tshape.clone(), dt).expect("shape checked"),
                )]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[table], rule))
    }

    pub fn repeat_heads(&self, a: Var, group: usize) -> Result<Var> {
        let av = self.value(a);
        let out = ops::repeat_heads(&av, group)?;
        let rule = self.requires_grad(a).then(|| {
            let in_shape = av.shape().to_vec();
            Box::new(move |g: &Tensor<T>| {
                let (t, h, d) = (in_shape[0], in_shape[1], in_shape[2]);
                let mut dx = vec![T::zero(); t * h * d];
                for ti in 0..t {
                    for hi in 0..h {
                        for gi in 0..group {
                            let src = ((ti * h + hi) * group + gi) * d;
                            let dst = (ti * h + hi) * d;
                            for j in 0..d {
                                dx[dst + j] += g.data()[src + j];
                            }
                        }
                    }
                }
                vec![(a.id, Tensor::from_vec(in_shape.clone(), dx).expect("shape checked"))]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[a], rule))
    }

    pub fn rope(&self, a: Var, start_pos: usize, base: f64) -> Result<Var> {
        let out = ops::rope(&self.value(a), start_pos, base)?;
        let rule = self.requires_grad(a).then(|| {
            Box::new(move |g: &Tensor<T>| {
                vec![(a.id, ops::rope_inverse(g, start_pos, base).expect("shape checked"))]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[a], rule))
    }

    // ---- normalization / softmax ----

    pub fn rms_norm(&self, x: Var, weight: Var, eps: T) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(weight));
        let out = ops::rms_norm(&xv, &wv, eps)?;
        let rule = self.any_grad(&[x, weight]).then(|| {
            let (xi, wi) = (x.id, weight.id);
            let (xv, wv) = (xv.clone(), wv.clone());
            Box::new(move |g: &Tensor<T>| {
                let d = *xv.shape().last().unwrap();
                let inv_d = T::one() / T::from_f64_lossy(d as f64);
                let rows = xv.len() / d;
                let mut dx = vec![T::zero(); xv.len()];
                let mut dw = vec![T::zero(); d];
                for row in 0..rows {
                    let xr = &xv.data()[row * d..(row + 1) * d];
                    let gr = &g.data()[row * d..(row + 1) * d];
                    let ms = xr.iter().map(|&v| v * v).sum::<T>() * inv_d;
                    let r = T::one() / (ms + eps).sqrt();
                    let mut dot = T::zero();
                    for j in 0..d {
                        dot += gr[j] * wv.data()[j] * xr[j];
                    }
                    let r3 = r * r * r;
                    for j in 0..d {
                        dx[row * d + j] = r * wv.data()[j] * gr[j] - r3 * inv_d * xr[j] * dot;
                        dw[j] += gr[j] * xr[j] * r;
                    }
                }
                vec![
                    (xi, Tensor::from_vec(xv.shape().to_vec(), dx).expect("shape checked")),
                    (wi, Tensor::from_vec(vec![d], dw).expect("shape checked")),
                ]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[x, weight], rule))
    }

    pub fn softmax_last(&self, a: Var) -> Var {
        let out = ops::softmax_last(&self.value(a));
        let rule = self.requires_grad(a).then(|| {
            let y = out.clone();
            Box::new(move |g: &Tensor<T>| {
                let d = *y.shape().last().unwrap_or(&1);
                let mut dx = vec![T::zero(); y.len()];
                for row in 0..y.len() / d.max(1) {
                    let yr = &y.data()[row * d..(row + 1) * d];
                    let gr = &g.data()[row * d..(row + 1) * d];
                    let dot: T = yr.iter().zip(gr.iter()).map(|(&yv, &gv)| yv * gv).sum();
                    for j in 0..d {
                        dx[row * d + j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(a.id, Tensor::from_vec(y.shape().to_vec(), dx).expect("shape checked"))]
            }) as BackwardRule<T>
        });
        self.custom(out, &[a], rule)
    }

    pub fn log_softmax_last(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = ops::log_softmax_last(&av);
        let rule = self.requires_grad(a).then(|| {
            let probs = ops::softmax_last(&av);
            Box::new(move |g: &Tensor<T>| {
                let d = *probs.shape().last().unwrap_or(&1);
                let mut dx = vec![T::zero(); probs.len()];
                for row in 0..probs.len() / d.max(1) {
                    let pr = &probs.data()[row * d..(row + 1) * d];
                    let gr = &g.data()[row * d..(row + 1) * d];
                    let gsum: T = gr.iter().cloned().sum();
                    for j in 0..d {
                        dx[row * d + j] = gr[j] - pr[j] * gsum;
                    }
                }
                vec![(
                    a.id,
                    Tensor::from_vec(probs.shape().to_vec(), dx).expect("shape checked"),
                )]
            }) as BackwardRule<T>
        });
        self.custom(out, &[a], rule)
    }

    pub fn l2_normalize_last(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = ops::l2_normalize_last(&av);
        let rule = self.requires_grad(a).then(|| {
            let xv = av.clone();
            let y = out.clone();
            Box::new(move |g: &Tensor<T>| {
                let d = *xv.shape().last().unwrap_or(&1);
                let mut dx = vec![T::zero(); xv.len()];
                for row in 0..xv.len() / d.max(1) {
                    let xr = &xv.data()[row * d..(row + 1) * d];
                    let yr = &y.data()[row * d..(row + 1) * d];
                    let gr = &g.data()[row * d..(row + 1) * d];
                    let norm = xr.iter().map(|&v| v * v).sum::<T>().sqrt();
                    if norm == T::zero() {
                        continue; // zero row passes through as zero; subgradient 0
                    }
                    let dot: T = yr.iter().zip(gr.iter()).map(|(&yv, &gv)| yv * gv).sum();
                    for j in 0..d {
                        dx[row * d + j] = (gr[j] - yr[j] * dot) / norm;
                    }
                }
                vec![(a.id, Tensor::from_vec(xv.shape().to_vec(), dx).expect("shape checked"))]
            }) as BackwardRule<T>
        });
        self.custom(out, &[a], rule)
    }

    // ---- reductions ----

    pub fn sum_all(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::scalar(ops::sum_all(&av));
        let rule = self.requires_grad(a).then(|| {
            let shape = av.shape().to_vec();
            Box::new(move |g: &Tensor<T>| {
                vec![(a.id, Tensor::full(shape.clone(), g.item()))]
            }) as BackwardRule<T>
        });
        self.custom(out, &[a], rule)
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::scalar(ops::mean_all(&av));
        let rule = self.requires_grad(a).then(|| {
            let shape = av.shape().to_vec();
            let inv_n = T::one() / T::from_f64_lossy(av.len().max(1) as f64);
            Box::new(move |g: &Tensor<T>| {
                vec![(a.id, Tensor::full(shape.clone(), g.item() * inv_n))]
            }) as BackwardRule<T>
        });
        self.custom(out, &[a], rule)
    }

    pub fn cumsum_last(&self, a: Var) -> Var {
        let out = ops::cumsum_last(&self.value(a));
        let rule = self.requires_grad(a).then(|| {
            Box::new(move |g: &Tensor<T>| {
                // reverse cumulative sum along the last axis
                let d = *g.shape().last().unwrap_or(&1);
                let mut dx = g.data().to_vec();
                for row in 0..g.len() / d.max(1) {
                    let r = &mut dx[row * d..(row + 1) * d];
                    for j in (0..d.saturating_sub(1)).rev() {
                        let nxt = r[j + 1];
                        r[j] += nxt;
                    }
                }
                vec![(a.id, Tensor::from_vec(g.shape().to_vec(), dx).expect("shape checked"))]
            }) as BackwardRule<T>
        });
        self.custom(out, &[a], rule)
    }

    // ---- losses ----

    /// Mean cross-entropy of `logits: [N,V]` against integer targets.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != targets.len() {
            return Err(TensorError::InvalidArgument {
                op: "cross_entropy",
                msg: format!("logits {:?} vs {} targets", lv.shape(), targets.len()),
            });
        }
        let v = lv.shape()[1];
        for &t in targets {
            if t >= v {
                return Err(TensorError::TokenOutOfRange { id: t, vocab: v });
            }
        }
        let logp = ops::log_softmax_last(&lv);
        let n = targets.len();
        let inv_n = T::one() / T::from_f64_lossy(n as f64);
        let mut loss = T::zero();
        for (row, &t) in targets.iter().enumerate() {
            loss -= logp.data()[row * v + t];
        }
        loss *= inv_n;
        let rule = self.requires_grad(logits).then(|| {
            let probs = ops::softmax_last(&lv);
            let targets = targets.to_vec();
            Box::new(move |g: &Tensor<T>| {
                let gs = g.item() * inv_n;
                let mut dl = probs.data().to_vec();
                for (row, &t) in targets.iter().enumerate() {
                    dl[row * v + t] -= T::one();
                }
                for d in dl.iter_mut() {
                    *d *= gs;
                }
                vec![(
                    logits.id,
                    Tensor::from_vec(probs.shape().to_vec(), dl).expect("shape checked"),
                )]
            }) as BackwardRule<T>
        });
        Ok(self.custom(Tensor::scalar(loss), &[logits], rule))
    }

    /// Mean KL(teacher ‖ student) per row from student logits and fixed teacher probabilities.
    pub fn kl_from_teacher(&self, student_logits: Var, teacher_probs: &Tensor<T>) -> Result<Var> {
        let sv = self.value(student_logits);
        if sv.shape() != teacher_probs.shape() || sv.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "kl_from_teacher",
                lhs: sv.shape().to_vec(),
                rhs: teacher_probs.shape().to_vec(),
            });
        }
        let (n, v) = (sv.shape()[0], sv.shape()[1]);
        let inv_n = T::one() / T::from_f64_lossy(n as f64);
        let logq = ops::log_softmax_last(&sv);
        let mut loss = T::zero();
        for i in 0..n * v {
            let p = teacher_probs.data()[i];
            if p > T::zero() {
                loss += p * (p.ln() - logq.data()[i]);
            }
        }
        loss *= inv_n;
        let rule = self.requires_grad(student_logits).then(|| {
            let q = ops::softmax_last(&sv);
            let p = teacher_probs.clone();
            Box::new(move |g: &Tensor<T>| {
                let gs = g.item() * inv_n;
                let dl: Vec<T> = q
                    .data()
                    .iter()
                    .zip(p.data().iter())
                    .map(|(&qv, &pv)| (qv - pv) * gs)
                    .collect();
                vec![(
                    student_logits.id,
                    Tensor::from_vec(q.shape().to_vec(), dl).expect("shape checked"),
                )]
            }) as BackwardRule<T>
        });
        Ok(self.custom(Tensor::scalar(loss), &[student_logits], rule))
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mse",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let n = av.len().max(1);
        let inv_n = T::one() / T::from_f64_lossy(n as f64);
        let mut loss = T::zero();
        for i in 0..av.len() {
            let d = av.data()[i] - bv.data()[i];
            loss += d * d;
        }
        loss *= inv_n;
        let rule = self.any_grad(&[a, b]).then(|| {
            let (ai, bi) = (a.id, b.id);
            let (av, bv) = (av.clone(), bv.clone());
            Box::new(move |g: &Tensor<T>| {
                let c = T::from_f64_lossy(2.0) * g.item() * inv_n;
                let da: Vec<T> = av
                    .data()
                    .iter()
                    .zip(bv.data().iter())
                    .map(|(&x, &y)| c * (x - y))
                    .collect();
                let db: Vec<T> = da.iter().map(|&v| -v).collect();
                vec![
                    (ai, Tensor::from_vec(av.shape().to_vec(), da).expect("shape checked")),
                    (bi, Tensor::from_vec(bv.shape().to_vec(), db).expect("shape checked")),
                ]
            }) as BackwardRule<T>
        });
        Ok(self.custom(Tensor::scalar(loss), &[a, b], rule))
    }

    // ---- convolutions ----

    /// Depthwise causal conv on `x: [T,D]` with weights `w: [D,K]`, zero left pad.
    pub fn causal_conv_depthwise(&self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let out = ops::causal_conv_depthwise(&xv, &wv, None)?;
        let rule = self.any_grad(&[x, w]).then(|| {
            let (xi, wi) = (x.id, w.id);
            let (xv, wv) = (xv.clone(), wv.clone());
            Box::new(move |g: &Tensor<T>| {
                let (t, d) = (xv.shape()[0], xv.shape()[1]);
                let k = wv.shape()[1];
                let mut dx = vec![T::zero(); t * d];
                let mut dw = vec![T::zero(); d * k];
                for ti in 0..t {
                    for c in 0..d {
                        let gv = g.data()[ti * d + c];
                        for i in 0..k {
                            let s = ti as isize - (k - 1 - i) as isize;
                            if s >= 0 {
                                let su = s as usize;
                                dx[su * d + c] += wv.data()[c * k + i] * gv;
                                dw[c * k + i] += xv.data()[su * d + c] * gv;
                            }
                        }
                    }
                }
                vec![
                    (xi, Tensor::from_vec(vec![t, d], dx).expect("shape checked")),
                    (wi, Tensor::from_vec(vec![d, k], dw).expect("shape checked")),
                ]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[x, w], rule))
    }

    /// Per-token dynamic causal conv; see `ops::dynamic_causal_conv`.
    pub fn dynamic_causal_conv(&self, v: Var, kernels: Var) -> Result<Var> {
        let (vv, kv) = (self.value(v), self.value(kernels));
        let out = ops::dynamic_causal_conv(&vv, &kv, None)?;
        let rule = self.any_grad(&[v, kernels]).then(|| {
            let (vi, ki) = (v.id, kernels.id);
            let (vv, kv) = (vv.clone(), kv.clone());
            Box::new(move |g: &Tensor<T>| {
                let (t, h, dv) = (vv.shape()[0], vv.shape()[1], vv.shape()[2]);
                let k = kv.shape()[2];
                let mut dvg = vec![T::zero(); t * h * dv];
                let mut dkg = vec![T::zero(); t * h * k];
                for ti in 0..t {
                    for hi in 0..h {
                        for i in 0..k {
                            let s = ti as isize - (k - 1 - i) as isize;
                            if s < 0 {
                                continue;
                            }
                            let su = s as usize;
                            let wv = kv.data()[(ti * h + hi) * k + i];
                            let mut acc = T::zero();
                            for c in 0..dv {
                                let gv = g.data()[(ti * h + hi) * dv + c];
                                dvg[(su * h + hi) * dv + c] += wv * gv;
                                acc += vv.data()[(su * h + hi) * dv + c] * gv;
                            }
                            dkg[(ti * h + hi) * k + i] += acc;
                        }
                    }
                }
                vec![
                    (vi, Tensor::from_vec(vec![t, h, dv], dvg).expect("shape checked")),
                    (ki, Tensor::from_vec(vec![t, h, k], dkg).expect("shape checked")),
                ]
            }) as BackwardRule<T>
        });
        Ok(self.custom(out, &[v, kernels], rule))
    }
}
