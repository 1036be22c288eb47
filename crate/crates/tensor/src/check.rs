//! Finite-difference oracles for gradient tests. Independent of the tape's
//! backward rules: they only call graph *forward* construction repeatedly.

use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Relative error with an absolute floor, so near-zero gradients compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central finite differences of a scalar-valued function w.r.t. one input
/// tensor: `d f / d x[i] ~ (f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff<T: Scalar>(
    x: &Tensor<T>,
    h: f64,
    mut f: impl FnMut(&Tensor<T>) -> T,
) -> Tensor<T> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        let mut minus = x.data().to_vec();
        plus[i] = plus[i] + T::from_f64_lossy(h);
        minus[i] = minus[i] - T::from_f64_lossy(h);
        let fp = f(&Tensor::from_vec(x.shape().to_vec(), plus).expect("same shape"));
        let fm = f(&Tensor::from_vec(x.shape().to_vec(), minus).expect("same shape"));
        out.push((fp - fm) / T::from_f64_lossy(2.0 * h));
    }
    Tensor::from_vec(x.shape().to_vec(), out).expect("same shape")
}

/// Compare the analytic gradient of `build` (a graph from leaf inputs to a
/// scalar loss) against central differences for the input at `index`.
/// Returns the worst relative error over all entries.
pub fn grad_vs_finite_diff<T: Scalar>(
    inputs: &[Tensor<T>],
    index: usize,
    h: f64,
    build: impl Fn(&Graph<T>, &[Var]) -> Var,
) -> f64 {
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&g, &vars);
    g.backward(loss).expect("scalar loss");
    let analytic = g
        .grad(vars[index])
        .unwrap_or_else(|| Tensor::zeros(inputs[index].shape().to_vec()));

    let numeric = finite_diff(&inputs[index], h, |x| {
        let g2 = Graph::new();
        let vars2: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| g2.leaf(if i == index { x.clone() } else { t.clone() }, false))
            .collect();
        let loss2 = build(&g2, &vars2);
        g2.value(loss2).item()
    });

    analytic
        .data()
        .iter()
        .zip(numeric.data().iter())
        .map(|(&a, &n)| rel_err(a.to_f64_lossy(), n.to_f64_lossy()))
        .fold(0.0, f64::max)
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!(
        (a - b).abs() <= tol,
        "{what}: {a} vs {b} (|diff| = {} > {tol})",
        (a - b).abs()
    );
}
