//! Finite-difference checks for the fused recurrence scan's hand-written
//! backward pass, across every block kind.

use postnas_core::linear_blocks::{retnet_gamma_schedule, scan_graph, LinearBlockKind};
use postnas_tensor::check::grad_vs_finite_diff;
use postnas_tensor::{ops, SeedRng, Tensor};

const TOL: f64 = 1e-2;
const H_STEP: f64 = 1e-4;

fn rand(shape: Vec<usize>, seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = SeedRng::new(seed);
    Tensor::rand_uniform(shape, lo, hi, &mut rng)
}

fn scan_inputs(kind: LinearBlockKind, t: usize, h: usize, dk: usize, dv: usize, seed: u64) -> Vec<Tensor<f64>> {
    let q = rand(vec![t, h, dk], seed, -1.0, 1.0);
    let k_raw = rand(vec![t, h, dk], seed + 1, -1.0, 1.0);
    // keys pre-normalized for delta kinds (normalization is a separate op
    // with its own FD coverage)
    let k = if kind.has_delta_rule() {
        ops::l2_normalize_last(&k_raw)
    } else {
        k_raw
    };
    let v = rand(vec![t, h, dv], seed + 2, -1.0, 1.0);
    let mut inputs = vec![q, k, v];
    match kind {
        LinearBlockKind::GlaDiagonalGate => inputs.push(rand(vec![t, h, dk], seed + 3, 0.2, 0.9)),
        LinearBlockKind::ScalarDataGate | LinearBlockKind::GatedDelta => {
            inputs.push(rand(vec![t, h], seed + 3, 0.2, 0.9))
        }
        _ => {}
    }
    if kind.has_delta_rule() {
        inputs.push(rand(vec![t, h], seed + 4, 0.2, 0.9));
    }
    inputs
}

fn check_kind(kind: LinearBlockKind) {
    for seed in 0..6u64 {
        let (t, h, dk, dv) = (5, 2, 3, 4);
        let inputs = scan_inputs(kind, t, h, dk, dv, seed * 31);
        let gammas = retnet_gamma_schedule::<f64>(h);
        let weights = rand(vec![t, h, dv], seed + 100, 0.1, 1.0);
        for i in 0..inputs.len() {
            let gammas = gammas.clone();
            let weights = weights.clone();
            let err = grad_vs_finite_diff(&inputs, i, H_STEP, move |g, vars| {
                let gate_a = match kind {
                    LinearBlockKind::GlaDiagonalGate
                    | LinearBlockKind::ScalarDataGate
                    | LinearBlockKind::GatedDelta => Some(vars[3]),
                    _ => None,
                };
                let gate_b = match kind {
                    LinearBlockKind::DeltaRule => Some(vars[3]),
                    LinearBlockKind::GatedDelta => Some(vars[4]),
                    _ => None,
                };
                let o = scan_graph(g, kind, gammas.clone(), vars[0], vars[1], vars[2], gate_a, gate_b)
                    .unwrap();
                let w = g.constant(weights.clone());
                let o = g.mul(o, w).unwrap();
                g.mean_all(o)
            });
            assert!(
                err < TOL,
                "{:?} input {i} seed {seed}: rel err {err}",
                kind
            );
        }
    }
}

#[test]
fn scan_backward_retnet() {
    check_kind(LinearBlockKind::RetNetDecay);
}

#[test]
fn scan_backward_gla() {
    check_kind(LinearBlockKind::GlaDiagonalGate);
}

#[test]
fn scan_backward_scalar_gate() {
    check_kind(LinearBlockKind::ScalarDataGate);
}

#[test]
fn scan_backward_delta_rule() {
    check_kind(LinearBlockKind::DeltaRule);
}

#[test]
fn scan_backward_gated_delta() {
    check_kind(LinearBlockKind::GatedDelta);
}

#[test]
fn scan_forward_matches_graph_value() {
    // the recorded scan output equals the pure sequential evaluation
    use postnas_core::linear_blocks::kernel::{head_output, head_update_delta};
    let (t, h, dk, dv) = (6, 2, 3, 3);
    let inputs = scan_inputs(LinearBlockKind::GatedDelta, t, h, dk, dv, 7);
    let g = postnas_tensor::Graph::<f64>::new();
    let vars: Vec<_> = inputs.iter().map(|x| g.leaf(x.clone(), false)).collect();
    let o = scan_graph(
        &g,
        LinearBlockKind::GatedDelta,
        retnet_gamma_schedule(h),
        vars[0],
        vars[1],
        vars[2],
        Some(vars[3]),
        Some(vars[4]),
    )
    .unwrap();
    let got = g.value(o);

    let mut expect = vec![0.0f64; t * h * dv];
    for hi in 0..h {
        let mut s = vec![0.0f64; dv * dk];
        for ti in 0..t {
            let kd = &inputs[1].data()[(ti * h + hi) * dk..(ti * h + hi + 1) * dk];
            let vd = &inputs[2].data()[(ti * h + hi) * dv..(ti * h + hi + 1) * dv];
            let alpha = inputs[3].data()[ti * h + hi];
            let beta = inputs[4].data()[ti * h + hi];
            head_update_delta(&mut s, kd, vd, alpha, beta, dk, dv);
            let qd = &inputs[0].data()[(ti * h + hi) * dk..(ti * h + hi + 1) * dk];
            head_output(&s, qd, dk, dv, &mut expect[(ti * h + hi) * dv..(ti * h + hi + 1) * dv]);
        }
    }
    let expect = Tensor::from_vec(vec![t, h, dv], expect).unwrap();
    assert!(got.bitwise_eq(&expect));
}
