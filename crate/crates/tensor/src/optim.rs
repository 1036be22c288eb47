use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A named trainable (or frozen) tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub trainable: bool,
}

/// Ordered parameter collection keyed by dotted names (e.g. `blocks.3.mlp.gate`).
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.entries.insert(
            name.into(),
            Param {
                value,
                grad: None,
                trainable: true,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| TensorError::UnknownParameter { name: name.into() })
    }

    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParameter { name: name.into() })?;
        p.value = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Mark parameters matching `pred` as frozen (non-trainable).
    pub fn freeze_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, p) in self.entries.iter_mut() {
            if pred(name) {
                p.trainable = false;
            }
        }
    }

    pub fn unfreeze_all(&mut self) {
        for p in self.entries.values_mut() {
            p.trainable = true;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad = None;
        }
    }

    /// Add `grads` (name -> gradient) into the stored gradients.
    pub fn accumulate(&mut self, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for (name, g) in grads {
            let p = self
                .entries
                .get_mut(name)
                .ok_or_else(|| TensorError::UnknownParameter { name: name.clone() })?;
            p.grad = Some(match p.grad.take() {
                None => g.clone(),
                Some(acc) => crate::ops::add(&acc, g)?,
            });
        }
        Ok(())
    }
}

/// Per-graph bindings from parameter names to leaf vars, so gradients can be
/// routed back into a [`ParamStore`] after `backward`.
#[derive(Default)]
pub struct Bindings {
    list: Vec<(String, Var)>,
}

impl Bindings {
    pub fn new() -> Self {
        Bindings { list: Vec::new() }
    }

    /// Create (or reuse) a leaf for the named parameter.
    pub fn var<T: Scalar>(&mut self, g: &Graph<T>, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some((_, v)) = self.list.iter().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        let p = store
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter { name: name.into() })?;
        let v = g.leaf(p.value.clone(), p.trainable);
        self.list.push((name.to_string(), v));
        Ok(v)
    }

    /// Pull gradients off the graph into (name -> grad) form.
    pub fn collect_grads<T: Scalar>(&self, g: &Graph<T>) -> BTreeMap<String, Tensor<T>> {
        let mut out = BTreeMap::new();
        for (name, v) in &self.list {
            if let Some(grad) = g.grad(*v) {
                out.insert(name.clone(), grad);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer state: kind, hyperparameters, step counter, and per-parameter
/// moment buffers (Adam only).
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn sgd(lr: T) -> Self {
        OptimizerState {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: T::zero(),
            beta2: T::zero(),
            eps: T::zero(),
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Standard bias-corrected Adam with betas (0.9, 0.999) and eps 1e-8.
    pub fn adam(lr: T) -> Self {
        OptimizerState {
            kind: OptimizerKind::Adam,
            lr,
            beta1: T::from_f64_lossy(0.9),
            beta2: T::from_f64_lossy(0.999),
            eps: T::from_f64_lossy(1e-8),
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Apply one update from the gradients stored in `store`, then clear them.
    /// Rejects non-finite gradients, naming the offending parameter.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        self.step += 1;
        let t = self.step;
        let names: Vec<String> = store.names().cloned().collect();
        for name in names {
            let p = store.entries.get_mut(&name).expect("listed name exists");
            if !p.trainable {
                continue;
            }
            let Some(grad) = p.grad.take() else { continue };
            if grad.validate_finite(&name).is_err() {
                return Err(TensorError::NonFiniteGradient { name });
            }
            let mut next = p.value.data().to_vec();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (v, &g) in next.iter_mut().zip(grad.data()) {
                        *v = *v - self.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, vbuf) = self
                        .moments
                        .entry(name.clone())
                        .or_insert_with(|| (vec![T::zero(); next.len()], vec![T::zero(); next.len()]));
                    let b1 = self.beta1;
                    let b2 = self.beta2;
                    let bc1 = T::one() - b1.powi(t as i32);
                    let bc2 = T::one() - b2.powi(t as i32);
                    for i in 0..next.len() {
                        let g = grad.data()[i];
                        m[i] = b1 * m[i] + (T::one() - b1) * g;
                        vbuf[i] = b2 * vbuf[i] + (T::one() - b2) * g * g;
                        let mhat = m[i] / bc1;
                        let vhat = vbuf[i] / bc2;
                        next[i] = next[i] - self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
            p.value = Tensor::from_vec(p.value.shape().to_vec(), next)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_single_step() {
        let mut store = ParamStore::<f32>::new();
        store.insert("p", Tensor::scalar(1.0));
        store
            .accumulate(&BTreeMap::from([("p".to_string(), Tensor::scalar(2.0))]))
            .unwrap();
        let mut opt = OptimizerState::sgd(0.1);
        opt.step(&mut store).unwrap();
        assert!((store.value("p").unwrap().item() - 0.8).abs() < 1e-7);
    }

    #[test]
    fn adam_zero_grad_keeps_param() {
        let mut store = ParamStore::<f32>::new();
        store.insert("p", Tensor::scalar(3.5));
        store
            .accumulate(&BTreeMap::from([("p".to_string(), Tensor::scalar(0.0))]))
            .unwrap();
        let mut opt = OptimizerState::adam(0.01);
        opt.step(&mut store).unwrap();
        assert_eq!(store.value("p").unwrap().item(), 3.5);
    }

    #[test]
    fn adam_descends_quadratic() {
        // f(p) = (p-3)^2, df/dp = 2(p-3); 200 steps from p=0
        let mut store = ParamStore::<f32>::new();
        store.insert("p", Tensor::scalar(0.0));
        let mut opt = OptimizerState::adam(0.1);
        for _ in 0..200 {
            let p = store.value("p").unwrap().item();
            store
                .accumulate(&BTreeMap::from([(
                    "p".to_string(),
                    Tensor::scalar(2.0 * (p - 3.0)),
                )]))
                .unwrap();
            opt.step(&mut store).unwrap();
        }
        let p = store.value("p").unwrap().item();
        assert!((p - 3.0).abs() < 1e-2, "p = {p}");
    }

    #[test]
    fn nonfinite_gradient_names_parameter() {
        let mut store = ParamStore::<f32>::new();
        store.insert("w.bad", Tensor::scalar(1.0));
        store
            .accumulate(&BTreeMap::from([(
                "w.bad".to_string(),
                Tensor::scalar(f32::NAN),
            )]))
            .unwrap();
        let mut opt = OptimizerState::sgd(0.1);
        let err = opt.step(&mut store).unwrap_err();
        assert!(err.to_string().contains("w.bad"));
    }

    #[test]
    fn frozen_params_ignore_grads() {
        let mut store = ParamStore::<f32>::new();
        store.insert("frozen.w", Tensor::scalar(1.0));
        store.freeze_where(|n| n.starts_with("frozen."));
        store
            .accumulate(&BTreeMap::from([(
                "frozen.w".to_string(),
                Tensor::scalar(5.0),
            )]))
            .unwrap();
        let mut opt = OptimizerState::sgd(0.5);
        opt.step(&mut store).unwrap();
        assert_eq!(store.value("frozen.w").unwrap().item(), 1.0);
    }
}
