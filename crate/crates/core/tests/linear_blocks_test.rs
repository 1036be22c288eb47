//! Oracle and property tests for the linear block zoo.

use postnas_core::linear_blocks::{
    forward_chunked, forward_sequential, retnet_gamma_schedule, step, ConvSpec, LinearBlockConfig,
    LinearBlockKind, LinearBlockParams, RecurrentState,
};
use postnas_tensor::{ops, SeedRng, Tensor};
use proptest::prelude::*;

fn params(
    kind: LinearBlockKind,
    d_model: usize,
    n_head: usize,
    d_k: usize,
    d_v: usize,
    conv: Option<ConvSpec>,
    seed: u64,
) -> LinearBlockParams<f64> {
    let mut cfg = LinearBlockConfig::new(d_model, n_head, d_k, d_v);
    cfg.conv = conv;
    LinearBlockParams::init(kind, cfg, &SeedRng::new(seed)).unwrap()
}

/// Literal dense oracle for the GatedDelta recurrence: materializes
/// S <- a * S (I - b k k^T) + b v k^T with explicit matrix products.
fn gated_delta_dense_oracle(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    alpha: &[f64],
    beta: &[f64],
    dk: usize,
    dv: usize,
) -> Vec<Vec<f64>> {
    let mut s = vec![vec![0.0; dk]; dv];
    let mut outs = Vec::new();
    for t in 0..q.len() {
        // M = I - b k k^T
        let mut m = vec![vec![0.0; dk]; dk];
        for i in 0..dk {
            for j in 0..dk {
                m[i][j] = if i == j { 1.0 } else { 0.0 } - beta[t] * k[t][i] * k[t][j];
            }
        }
        // S = a * S M + b v k^T
        let mut next = vec![vec![0.0; dk]; dv];
        for r in 0..dv {
            for c in 0..dk {
                let mut acc = 0.0;
                for x in 0..dk {
                    acc += s[r][x] * m[x][c];
                }
                next[r][c] = alpha[t] * acc + beta[t] * v[t][r] * k[t][c];
            }
        }
        s = next;
        let mut o = vec![0.0; dv];
        for r in 0..dv {
            for c in 0..dk {
                o[r] += s[r][c] * q[t][c];
            }
        }
        outs.push(o);
    }
    outs
}

/// Drive the per-head kernel through the public scan (via a 1-head block with
/// identity projections is awkward; instead compare the dense oracle against
/// the chunked path on raw per-head inputs reconstructed from projections).
#[test]
fn gated_delta_matches_dense_oracle() {
    // 1 head, d_k = d_v = 4, T = 8: run the full block sequentially and
    // reproduce its output through the dense oracle fed with the same
    // projected streams.
    let p = params(LinearBlockKind::GatedDelta, 6, 1, 4, 4, None, 11);
    let mut rng = SeedRng::new(99);
    let x = Tensor::<f64>::randn(vec![8, 6], 1.0, &mut rng);

    // reproduce projections exactly as the block computes them
    let q = ops::matmul(&x, &p.wq).unwrap();
    let k_raw = ops::matmul(&x, &p.wk).unwrap();
    let k = ops::l2_normalize_last(&k_raw.reshape(vec![8, 1, 4]).unwrap());
    let v = ops::matmul(&x, &p.wv).unwrap();
    let alpha = ops::sigmoid(
        &ops::add_bias(
            &ops::matmul(&x, p.gate_a_w.as_ref().unwrap()).unwrap(),
            p.gate_a_b.as_ref().unwrap(),
        )
        .unwrap(),
    );
    let beta = ops::sigmoid(
        &ops::add_bias(
            &ops::matmul(&x, p.gate_b_w.as_ref().unwrap()).unwrap(),
            p.gate_b_b.as_ref().unwrap(),
        )
        .unwrap(),
    );

    let rows = |t: &Tensor<f64>, d: usize| -> Vec<Vec<f64>> {
        t.data().chunks(d).map(|c| c.to_vec()).collect()
    };
    let o_heads = gated_delta_dense_oracle(
        &rows(&q, 4),
        &rows(&k, 4),
        &rows(&v, 4),
        alpha.data(),
        beta.data(),
        4,
        4,
    );
    let o_flat: Vec<f64> = o_heads.into_iter().flatten().collect();
    let o = Tensor::from_vec(vec![8, 4], o_flat).unwrap();
    let expected = ops::matmul(&o, &p.w_out).unwrap();

    let got = forward_sequential(&p, &x).unwrap();
    assert!(
        got.max_abs_diff(&expected) < 1e-10,
        "diff {}",
        got.max_abs_diff(&expected)
    );
}

#[test]
fn delta_rule_overwrite_with_unit_key() {
    // beta = 1, unit key e1: writing v1 then v2 under the same key leaves
    // exactly v2 readable at q = e1.
    let dk = 4;
    let dv = 3;
    let p = params(LinearBlockKind::DeltaRule, 4, 1, dk, dv, None, 5);
    let mut state = RecurrentState::new(&p);
    let e1: Vec<f64> = {
        let mut v = vec![0.0; dk];
        v[0] = 1.0;
        v
    };
    let v1 = vec![1.0, -2.0, 3.0];
    let v2 = vec![-7.0, 0.5, 2.0];
    // drive the head kernel directly (beta = 1 exactly)
    use postnas_core::linear_blocks::kernel::{head_output as head_output_pub, head_update_delta};
    head_update_delta(state.head_mut(0), &e1, &v1, 1.0, 1.0, dk, dv);
    head_update_delta(state.head_mut(0), &e1, &v2, 1.0, 1.0, dk, dv);
    let mut o = vec![0.0; dv];
    head_output_pub(state.head(0), &e1, dk, dv, &mut o);
    assert_eq!(o, v2);
}

#[test]
fn retnet_gamma_one_is_cumulative_sum() {
    // With gamma = 1 the recurrence reduces to o_T = sum_s v_s (k_s . q_T).
    let mut p = params(LinearBlockKind::RetNetDecay, 5, 2, 3, 4, None, 21);
    p.gammas = vec![1.0, 1.0];
    let mut rng = SeedRng::new(3);
    let t_len = 7;
    let x = Tensor::<f64>::randn(vec![t_len, 5], 1.0, &mut rng);
    let got = forward_sequential(&p, &x).unwrap();

    // independent reduction from the same projections
    let q = ops::matmul(&x, &p.wq).unwrap();
    let k = ops::matmul(&x, &p.wk).unwrap();
    let v = ops::matmul(&x, &p.wv).unwrap();
    let t_final = t_len - 1;
    let mut o = vec![0.0; 2 * 4];
    for h in 0..2 {
        for s in 0..=t_final {
            let mut dot = 0.0;
            for j in 0..3 {
                dot += k.data()[(s * 2 + h) * 3 + j] * q.data()[(t_final * 2 + h) * 3 + j];
            }
            for i in 0..4 {
                o[h * 4 + i] += v.data()[(s * 2 + h) * 4 + i] * dot;
            }
        }
    }
    let o = Tensor::from_vec(vec![1, 8], o).unwrap();
    let expected = ops::matmul(&o, &p.w_out).unwrap();
    let last = ops::narrow(&got, 0, t_final, 1).unwrap();
    assert!(last.max_abs_diff(&expected) < 1e-9);
}

#[test]
fn chunk_size_one_is_bitwise_equal_to_step_loop() {
    for kind in LinearBlockKind::ALL {
        let p = params(kind, 6, 2, 3, 4, Some(ConvSpec::all(4)), 31);
        let mut rng = SeedRng::new(8);
        let x = Tensor::<f64>::randn(vec![9, 6], 1.0, &mut rng);
        let seq = forward_sequential(&p, &x).unwrap();
        let chunked = forward_chunked(&p, &x, 1).unwrap();
        assert!(chunked.bitwise_eq(&seq), "kind {:?}", kind);
    }
}

#[test]
fn chunked_matches_sequential_within_tolerance() {
    for kind in LinearBlockKind::ALL {
        let p = params(kind, 6, 2, 4, 4, None, 41);
        let mut rng = SeedRng::new(12);
        let x = Tensor::<f64>::randn(vec![16, 6], 1.0, &mut rng);
        let seq = forward_sequential(&p, &x).unwrap();
        for chunk in [2usize, 3, 5, 16] {
            let ch = forward_chunked(&p, &x, chunk).unwrap();
            let diff = ch.max_abs_diff(&seq);
            assert!(diff < 1e-4, "kind {:?} chunk {}: diff {}", kind, chunk, diff);
        }
    }
}

#[test]
fn state_size_matches_grid_rows() {
    for (dk, dv, nh) in [(192usize, 384usize, 4usize), (96, 256, 12), (128, 576, 4)] {
        let cfg = LinearBlockConfig::new(8, nh, dk, dv);
        let p = LinearBlockParams::<f32>::init(LinearBlockKind::GatedDelta, cfg, &SeedRng::new(1))
            .unwrap();
        assert_eq!(p.state_size().recurrent_entries, 294_912);
        assert_eq!(p.state_size().conv_tail_entries, 0);
    }
    let cfg = LinearBlockConfig::new(2, 1, 1, 1);
    let p = LinearBlockParams::<f32>::init(LinearBlockKind::RetNetDecay, cfg, &SeedRng::new(1))
        .unwrap();
    assert_eq!(p.state_size().total(), 1);
}

#[test]
fn state_size_counts_conv_tails() {
    let cfg = LinearBlockConfig::new(8, 2, 3, 5).with_conv(ConvSpec::all(4));
    let p =
        LinearBlockParams::<f32>::init(LinearBlockKind::GatedDelta, cfg, &SeedRng::new(1)).unwrap();
    let ss = p.state_size();
    assert_eq!(ss.recurrent_entries, 2 * 3 * 5);
    // 3 tail rows for each of q,k (2*3 wide) and v (2*5 wide)
    assert_eq!(ss.conv_tail_entries, 3 * (6 + 6 + 10));
    assert_eq!(ss.bytes(2), (30 + 66) * 2);
}

#[test]
fn delta_erase_does_not_grow_key_component() {
    // For unit k and beta in (0,1], (S(I - b k k^T))k = (1-b) S k.
    let mut rng = SeedRng::new(77);
    for _ in 0..50 {
        let dk = 4;
        let dv = 3;
        let s = Tensor::<f64>::randn(vec![dv, dk], 1.0, &mut rng);
        let k_raw = Tensor::<f64>::randn(vec![1, dk], 1.0, &mut rng);
        let k = ops::l2_normalize_last(&k_raw);
        let beta = rng.uniform_f64();
        let sk_before: Vec<f64> = (0..dv)
            .map(|i| (0..dk).map(|j| s.data()[i * dk + j] * k.data()[j]).sum())
            .collect();
        // S (I - b k k^T) applied row-wise
        let mut after = vec![0.0; dv];
        for i in 0..dv {
            for j in 0..dk {
                let mut m = s.data()[i * dk + j];
                let mut erase = 0.0;
                for x in 0..dk {
                    erase += s.data()[i * dk + x] * k.data()[x];
                }
                m -= beta * erase * k.data()[j];
                after[i] += m * k.data()[j];
            }
        }
        let norm_before: f64 = sk_before.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_after: f64 = after.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm_after <= norm_before * (1.0 + 1e-9));
    }
}

#[test]
fn gate_off_reductions_are_bitwise() {
    // GatedDelta with alpha = 1 equals DeltaRule; with beta = 0 it equals
    // ScalarDataGate pure decay (zero write) from the same nonzero state.
    use postnas_core::linear_blocks::kernel::{
        head_output as head_output_pub, head_update_decay, head_update_delta,
    };
    let mut rng = SeedRng::new(13);
    let dk = 5;
    let dv = 4;
    for _ in 0..20 {
        let k_t = ops::l2_normalize_last(&Tensor::<f32>::randn(vec![1, dk], 1.0, &mut rng));
        let v_t = Tensor::<f32>::randn(vec![dv], 1.0, &mut rng);
        let s0 = Tensor::<f32>::randn(vec![dv, dk], 1.0, &mut rng);
        let beta: f32 = rng.uniform(0.05, 0.95);
        let alpha: f32 = rng.uniform(0.05, 0.95);

        // alpha = 1: gated == plain delta
        let mut s_gated = s0.data().to_vec();
        let mut s_delta = s0.data().to_vec();
        head_update_delta(&mut s_gated, k_t.data(), v_t.data(), 1.0, beta, dk, dv);
        head_update_delta(&mut s_delta, k_t.data(), v_t.data(), 1.0, beta, dk, dv);
        assert_eq!(
            s_gated.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            s_delta.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );

        // beta = 0: gated == scalar decay with a = alpha and zero write
        let mut s_g = s0.data().to_vec();
        let mut s_d = s0.data().to_vec();
        head_update_delta(&mut s_g, k_t.data(), v_t.data(), alpha, 0.0, dk, dv);
        head_update_decay(&mut s_d, k_t.data(), &vec![0.0f32; dv], alpha, dk, dv);
        assert_eq!(
            s_g.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            s_d.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );

        // outputs agree bitwise too
        let q = Tensor::<f32>::randn(vec![dk], 1.0, &mut rng);
        let mut o_g = vec![0.0f32; dv];
        let mut o_d = vec![0.0f32; dv];
        head_output_pub(&s_g, q.data(), dk, dv, &mut o_g);
        head_output_pub(&s_d, q.data(), dk, dv, &mut o_d);
        assert_eq!(
            o_g.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            o_d.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn gammas_follow_schedule_and_gates_stay_open() {
    let gammas: Vec<f64> = retnet_gamma_schedule(4);
    for (h, g) in gammas.iter().enumerate() {
        assert!((g - (1.0 - 2f64.powi(-(5 + h as i32)))).abs() < 1e-12);
        assert!(*g > 0.0 && *g < 1.0);
    }
}

#[test]
fn step_rejects_mismatched_state() {
    let p1 = params(LinearBlockKind::GatedDelta, 6, 2, 3, 4, None, 1);
    let p2 = params(LinearBlockKind::GatedDelta, 6, 2, 4, 4, None, 1);
    let mut state = RecurrentState::new(&p2);
    let x = Tensor::<f64>::zeros(vec![6]);
    assert!(step(&p1, &mut state, &x).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn chunked_equals_sequential_prop(
        kind_ix in 0usize..5,
        n_head in 1usize..=3,
        d_k in 1usize..=5,
        d_v in 1usize..=5,
        t_len in 1usize..=12,
        chunk in 1usize..=6,
        with_conv in proptest::bool::ANY,
        seed in 0u64..500,
    ) {
        let kind = LinearBlockKind::ALL[kind_ix];
        let conv = with_conv.then(|| ConvSpec::all(3));
        let p = params(kind, 5, n_head, d_k, d_v, conv, seed);
        let mut rng = SeedRng::new(seed + 1);
        let x = Tensor::<f64>::randn(vec![t_len, 5], 1.0, &mut rng);
        let seq = forward_sequential(&p, &x).unwrap();
        let ch = forward_chunked(&p, &x, chunk).unwrap();
        prop_assert!(ch.max_abs_diff(&seq) < 1e-4);
    }
}
