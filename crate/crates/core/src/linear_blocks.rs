//! Linear-attention block zoo: each block keeps a per-head `d_V x d_K` matrix
//! state `S`, updated once per token, with output `o = S q` per head.
//!
//! Canonical update forms (the shared convention across the whole crate):
//!
//! - `RetNetDecay`:      S <- gamma * S + v k^T          (gamma fixed per head)
//! - `GLADiagonalGate`:  S <- S diag(a) + v k^T          (a: per-channel gate)
//! - `ScalarDataGate`:   S <- a * S + v k^T              (a: scalar gate)
//! - `DeltaRule`:        S <- S (I - b k k^T) + b v k^T  (k unit-normalized)
//! - `GatedDelta`:       S <- a * S (I - b k k^T) + b v k^T
//!
//! The delta forms are evaluated as `S <- a*S + b*(v - a*S k) k^T`, which is
//! algebraically identical and keeps `DeltaRule` the exact `a = 1` special
//! case of `GatedDelta` (shared code path, bitwise).
//!
//! Three evaluation routes produce the same outputs: a per-token `step` for
//! decoding, a chunked parallel form for long sequences, and a fused scan op
//! recorded on the autodiff graph for training.

use postnas_tensor::graph::{Graph, Var};
use postnas_tensor::{ops, Bindings, ParamStore, Scalar, SeedRng, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearBlockKind {
    RetNetDecay,
    GlaDiagonalGate,
    ScalarDataGate,
    DeltaRule,
    GatedDelta,
}

impl LinearBlockKind {
    pub const ALL: [LinearBlockKind; 5] = [
        LinearBlockKind::RetNetDecay,
        LinearBlockKind::GlaDiagonalGate,
        LinearBlockKind::ScalarDataGate,
        LinearBlockKind::DeltaRule,
        LinearBlockKind::GatedDelta,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LinearBlockKind::RetNetDecay => "retnet_decay",
            LinearBlockKind::GlaDiagonalGate => "gla_diagonal_gate",
            LinearBlockKind::ScalarDataGate => "scalar_data_gate",
            LinearBlockKind::DeltaRule => "delta_rule",
            LinearBlockKind::GatedDelta => "gated_delta",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }

    /// Data-dependent decay gate on the state.
    pub fn has_data_gating(&self) -> bool {
        matches!(
            self,
            LinearBlockKind::GlaDiagonalGate
                | LinearBlockKind::ScalarDataGate
                | LinearBlockKind::GatedDelta
        )
    }

    /// Erase-before-write state update.
    pub fn has_delta_rule(&self) -> bool {
        matches!(self, LinearBlockKind::DeltaRule | LinearBlockKind::GatedDelta)
    }
}

/// Optional short static causal convolutions on the projected streams.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_size: usize,
    pub on_q: bool,
    pub on_k: bool,
    pub on_v: bool,
}

impl ConvSpec {
    pub fn all(kernel_size: usize) -> Self {
        ConvSpec {
            kernel_size,
            on_q: true,
            on_k: true,
            on_v: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearBlockConfig {
    pub d_model: usize,
    pub n_head: usize,
    pub d_k: usize,
    pub d_v: usize,
    #[serde(default)]
    pub conv: Option<ConvSpec>,
}

impl LinearBlockConfig {
    pub fn new(d_model: usize, n_head: usize, d_k: usize, d_v: usize) -> Self {
        LinearBlockConfig {
            d_model,
            n_head,
            d_k,
            d_v,
            conv: None,
        }
    }

    pub fn with_conv(mut self, conv: ConvSpec) -> Self {
        self.conv = Some(conv);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_head == 0 || self.d_k == 0 || self.d_v == 0 {
            return Err(CoreError::invalid(
                "linear_block",
                format!("dimensions must be positive: {:?}", self),
            ));
        }
        if let Some(c) = &self.conv {
            if c.kernel_size == 0 {
                return Err(CoreError::invalid("linear_block", "conv kernel_size must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Entry counts of the per-sequence recurrent state.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct StateSize {
    pub recurrent_entries: usize,
    pub conv_tail_entries: usize,
}

impl StateSize {
    pub fn total(&self) -> usize {
        self.recurrent_entries + self.conv_tail_entries
    }

    pub fn bytes(&self, dtype_width: usize) -> u64 {
        (self.total() as u64) * dtype_width as u64
    }
}

/// Fixed per-head decay schedule for `RetNetDecay`: gamma_h = 1 - 2^-(5+h).
pub fn retnet_gamma_schedule<T: Scalar>(n_head: usize) -> Vec<T> {
    (0..n_head)
        .map(|h| T::one() - T::from_f64_lossy(2f64.powi(-(5 + h as i32))))
        .collect()
}

/// Block weights. Gate projections exist only for the kinds that use them.
#[derive(Clone, Debug)]
pub struct LinearBlockParams<T> {
    pub kind: LinearBlockKind,
    pub config: LinearBlockConfig,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub w_out: Tensor<T>,
    pub gate_a_w: Option<Tensor<T>>,
    pub gate_a_b: Option<Tensor<T>>,
    pub gate_b_w: Option<Tensor<T>>,
    pub gate_b_b: Option<Tensor<T>>,
    pub conv_q: Option<Tensor<T>>,
    pub conv_k: Option<Tensor<T>>,
    pub conv_v: Option<Tensor<T>>,
    pub gammas: Vec<T>,
}

/// Gate-projection width for the decay gate, per kind.
fn gate_a_width(kind: LinearBlockKind, cfg: &LinearBlockConfig) -> Option<usize> {
    match kind {
        LinearBlockKind::GlaDiagonalGate => Some(cfg.n_head * cfg.d_k),
        LinearBlockKind::ScalarDataGate | LinearBlockKind::GatedDelta => Some(cfg.n_head),
        _ => None,
    }
}

fn gate_b_width(kind: LinearBlockKind, cfg: &LinearBlockConfig) -> Option<usize> {
    kind.has_delta_rule().then_some(cfg.n_head)
}

fn conv_weight_init<T: Scalar>(stream: usize, k: usize, rng: &mut SeedRng) -> Tensor<T> {
    // identity-at-last-tap plus small noise
    let mut data = vec![T::zero(); stream * k];
    for c in 0..stream {
        data[c * k + k - 1] = T::one();
    }
    for v in data.iter_mut() {
        *v += rng.normal::<T>(0.0, 0.02);
    }
    Tensor::from_vec(vec![stream, k], data).expect("sized")
}

impl<T: Scalar> LinearBlockParams<T> {
    pub fn init(kind: LinearBlockKind, config: LinearBlockConfig, rng: &SeedRng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let (h, dk, dv) = (config.n_head, config.d_k, config.d_v);
        let std_in = 1.0 / (d as f64).sqrt();
        let std_out = 1.0 / ((h * dv) as f64).sqrt();
        let mk = |label: &str, shape: Vec<usize>, std: f64| {
            Tensor::randn(shape, std, &mut rng.split(label))
        };
        let gate_a = gate_a_width(kind, &config).map(|w| {
            (
                mk("gate_a.w", vec![d, w], std_in),
                // bias +2 starts the decay gates near "keep history"
                Tensor::full(vec![w], T::from_f64_lossy(2.0)),
            )
        });
        let gate_b = gate_b_width(kind, &config)
            .map(|w| (mk("gate_b.w", vec![d, w], std_in), Tensor::zeros(vec![w])));
        let conv = config.conv;
        let conv_t = |on: bool, width: usize, label: &str| {
            conv.filter(|_| on)
                .map(|c| conv_weight_init(width, c.kernel_size, &mut rng.split(label)))
        };
        Ok(LinearBlockParams {
            kind,
            wq: mk("wq", vec![d, h * dk], std_in),
            wk: mk("wk", vec![d, h * dk], std_in),
            wv: mk("wv", vec![d, h * dv], std_in),
            w_out: mk("w_out", vec![h * dv, d], std_out),
            gate_a_w: gate_a.as_ref().map(|(w, _)| w.clone()),
            gate_a_b: gate_a.map(|(_, b)| b),
            gate_b_w: gate_b.as_ref().map(|(w, _)| w.clone()),
            gate_b_b: gate_b.map(|(_, b)| b),
            conv_q: conv_t(conv.map(|c| c.on_q).unwrap_or(false), h * dk, "conv_q"),
            conv_k: conv_t(conv.map(|c| c.on_k).unwrap_or(false), h * dk, "conv_k"),
            conv_v: conv_t(conv.map(|c| c.on_v).unwrap_or(false), h * dv, "conv_v"),
            gammas: retnet_gamma_schedule(h),
            config,
        })
    }

    /// Name/tensor pairs, for registering into a `ParamStore` under a prefix.
    pub fn entries(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut out: Vec<(&'static str, &Tensor<T>)> = vec![
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("w_out", &self.w_out),
        ];
        if let Some(t) = &self.gate_a_w {
            out.push(("gate_a.w", t));
        }
        if let Some(t) = &self.gate_a_b {
            out.push(("gate_a.b", t));
        }
        if let Some(t) = &self.gate_b_w {
            out.push(("gate_b.w", t));
        }
        if let Some(t) = &self.gate_b_b {
            out.push(("gate_b.b", t));
        }
        if let Some(t) = &self.conv_q {
            out.push(("conv_q", t));
        }
        if let Some(t) = &self.conv_k {
            out.push(("conv_k", t));
        }
        if let Some(t) = &self.conv_v {
            out.push(("conv_v", t));
        }
        out
    }

    pub fn insert_into(&self, store: &mut ParamStore<T>, prefix: &str) {
        for (suffix, tensor) in self.entries() {
            store.insert(format!("{prefix}.{suffix}"), tensor.clone());
        }
    }

    /// Rebuild a params view from store values (cheap Arc clones).
    pub fn from_store(
        kind: LinearBlockKind,
        config: LinearBlockConfig,
        store: &ParamStore<T>,
        prefix: &str,
    ) -> Result<Self> {
        let get = |suffix: &str| -> Result<Tensor<T>> {
            Ok(store.value(&format!("{prefix}.{suffix}"))?.clone())
        };
        let opt = |suffix: &str| -> Option<Tensor<T>> {
            store.get(&format!("{prefix}.{suffix}")).map(|p| p.value.clone())
        };
        Ok(LinearBlockParams {
            kind,
            wq: get("wq")?,
            wk: get("wk")?,
            wv: get("wv")?,
            w_out: get("w_out")?,
            gate_a_w: opt("gate_a.w"),
            gate_a_b: opt("gate_a.b"),
            gate_b_w: opt("gate_b.w"),
            gate_b_b: opt("gate_b.b"),
            conv_q: opt("conv_q"),
            conv_k: opt("conv_k"),
            conv_v: opt("conv_v"),
            gammas: retnet_gamma_schedule(config.n_head),
            config,
        })
    }

    pub fn param_count(&self) -> usize {
        self.entries().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn state_size(&self) -> StateSize {
        let cfg = &self.config;
        let recurrent = cfg.n_head * cfg.d_k * cfg.d_v;
        let mut tails = 0;
        if let Some(c) = &cfg.conv {
            let per = c.kernel_size - 1;
            if c.on_q {
                tails += per * cfg.n_head * cfg.d_k;
            }
            if c.on_k {
                tails += per * cfg.n_head * cfg.d_k;
            }
            if c.on_v {
                tails += per * cfg.n_head * cfg.d_v;
            }
        }
        StateSize {
            recurrent_entries: recurrent,
            conv_tail_entries: tails,
        }
    }
}

/// Per-sequence recurrent state: per-head `d_V x d_K` matrix plus the last
/// `kernel_size - 1` projected inputs for each convolved stream.
#[derive(Clone, Debug)]
pub struct RecurrentState<T> {
    pub n_head: usize,
    pub d_k: usize,
    pub d_v: usize,
    s: Vec<T>,
    pub q_tail: Option<Vec<T>>,
    pub k_tail: Option<Vec<T>>,
    pub v_tail: Option<Vec<T>>,
}

impl<T: Scalar> RecurrentState<T> {
    pub fn new(params: &LinearBlockParams<T>) -> Self {
        let cfg = &params.config;
        let tail = |enabled: Option<&Tensor<T>>, width: usize| {
            enabled.map(|w| vec![T::zero(); (w.shape()[1] - 1) * width])
        };
        RecurrentState {
            n_head: cfg.n_head,
            d_k: cfg.d_k,
            d_v: cfg.d_v,
            s: vec![T::zero(); cfg.n_head * cfg.d_k * cfg.d_v],
            q_tail: tail(params.conv_q.as_ref(), cfg.n_head * cfg.d_k),
            k_tail: tail(params.conv_k.as_ref(), cfg.n_head * cfg.d_k),
            v_tail: tail(params.conv_v.as_ref(), cfg.n_head * cfg.d_v),
        }
    }

    pub fn matches(&self, params: &LinearBlockParams<T>) -> Result<()> {
        let cfg = &params.config;
        if self.n_head != cfg.n_head || self.d_k != cfg.d_k || self.d_v != cfg.d_v {
            return Err(CoreError::StateMismatch {
                msg: format!(
                    "state ({},{},{}) vs params ({},{},{})",
                    self.n_head, self.d_k, self.d_v, cfg.n_head, cfg.d_k, cfg.d_v
                ),
            });
        }
        Ok(())
    }

    pub fn head(&self, h: usize) -> &[T] {
        let sz = self.d_k * self.d_v;
        &self.s[h * sz..(h + 1) * sz]
    }

    pub fn head_mut(&mut self, h: usize) -> &mut [T] {
        let sz = self.d_k * self.d_v;
        &mut self.s[h * sz..(h + 1) * sz]
    }

    /// Load an explicit state matrix (dv x dk, row-major) into head `h`.
    pub fn set_head(&mut self, h: usize, m: &[T]) {
        self.head_mut(h).copy_from_slice(m);
    }
}

// ---- per-token kernels ----

/// Resolved gate values for one (token, head) update.
#[derive(Clone, Copy)]
pub(crate) enum HeadGate<'a, T> {
    Decay(T),
    DecayVec(&'a [T]),
    Delta { alpha: T, beta: T },
}

/// One state update. All kinds funnel through here so the gate-off reductions
/// (GatedDelta at alpha=1 vs DeltaRule; beta=0 vs pure decay) hold bitwise.
pub(crate) fn apply_head_update<T: Scalar>(
    s: &mut [T],
    k: &[T],
    v: &[T],
    gate: HeadGate<'_, T>,
    dk: usize,
    dv: usize,
) {
    match gate {
        HeadGate::Decay(a) => {
            for i in 0..dv {
                let vi = v[i];
                let row = &mut s[i * dk..(i + 1) * dk];
                for j in 0..dk {
                    row[j] = a * row[j] + vi * k[j];
                }
            }
        }
        HeadGate::DecayVec(avec) => {
            for i in 0..dv {
                let vi = v[i];
                let row = &mut s[i * dk..(i + 1) * dk];
                for j in 0..dk {
                    row[j] = avec[j] * row[j] + vi * k[j];
                }
            }
        }
        HeadGate::Delta { alpha, beta } => {
            for i in 0..dv {
                let row = &mut s[i * dk..(i + 1) * dk];
                let mut u = T::zero();
                for j in 0..dk {
                    u += row[j] * k[j];
                }
                let w = v[i] - alpha * u;
                let bw = beta * w;
                for j in 0..dk {
                    row[j] = alpha * row[j] + bw * k[j];
                }
            }
        }
    }
}

pub(crate) fn head_output<T: Scalar>(s: &[T], q: &[T], dk: usize, dv: usize, out: &mut [T]) {
    for i in 0..dv {
        let row = &s[i * dk..(i + 1) * dk];
        let mut acc = T::zero();
        for j in 0..dk {
            acc += row[j] * q[j];
        }
        out[i] = acc;
    }
}

// ---- projections ----

/// Full-sequence projections: `q,k: [T,H,dk]`, `v: [T,H,dv]`, plus gate values.
pub(crate) struct Projected<T> {
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    pub gate_a: Option<Tensor<T>>, // [T,H] or [T,H,dk] for GLA
    pub gate_b: Option<Tensor<T>>, // [T,H]
}

pub(crate) fn project_sequence<T: Scalar>(
    params: &LinearBlockParams<T>,
    x: &Tensor<T>,
) -> Result<Projected<T>> {
    let cfg = &params.config;
    let t = x.shape()[0];
    let (h, dk, dv) = (cfg.n_head, cfg.d_k, cfg.d_v);
    let stream = |w: &Tensor<T>, conv: &Option<Tensor<T>>| -> Result<Tensor<T>> {
        let p = ops::matmul(x, w)?;
        Ok(match conv {
            Some(cw) => ops::causal_conv_depthwise(&p, cw, None)?,
            None => p,
        })
    };
    let q = stream(&params.wq, &params.conv_q)?.reshape(vec![t, h, dk])?;
    let mut k = stream(&params.wk, &params.conv_k)?.reshape(vec![t, h, dk])?;
    let v = stream(&params.wv, &params.conv_v)?.reshape(vec![t, h, dv])?;
    if params.kind.has_delta_rule() {
        k = ops::l2_normalize_last(&k);
    }
    let gate = |w: &Option<Tensor<T>>, b: &Option<Tensor<T>>| -> Result<Option<Tensor<T>>> {
        match (w, b) {
            (Some(w), Some(b)) => {
                let z = ops::add_bias(&ops::matmul(x, w)?, b)?;
                Ok(Some(ops::sigmoid(&z)))
            }
            _ => Ok(None),
        }
    };
    let gate_a = gate(&params.gate_a_w, &params.gate_a_b)?;
    let gate_b = gate(&params.gate_b_w, &params.gate_b_b)?;
    Ok(Projected {
        q,
        k,
        v,
        gate_a,
        gate_b,
    })
}

pub(crate) fn resolve_gate<'a, T: Scalar>(
    kind: LinearBlockKind,
    gammas: &[T],
    gate_a: Option<&'a Tensor<T>>,
    gate_b: Option<&'a Tensor<T>>,
    t: usize,
    h: usize,
    n_head: usize,
    dk: usize,
) -> HeadGate<'a, T> {
    match kind {
        LinearBlockKind::RetNetDecay => HeadGate::Decay(gammas[h]),
        LinearBlockKind::ScalarDataGate => {
            HeadGate::Decay(gate_a.expect("scalar gate").data()[t * n_head + h])
        }
        LinearBlockKind::GlaDiagonalGate => {
            let a = gate_a.expect("gla gate");
            HeadGate::DecayVec(&a.data()[(t * n_head + h) * dk..(t * n_head + h + 1) * dk])
        }
        LinearBlockKind::DeltaRule => HeadGate::Delta {
            alpha: T::one(),
            beta: gate_b.expect("delta gate").data()[t * n_head + h],
        },
        LinearBlockKind::GatedDelta => HeadGate::Delta {
            alpha: gate_a.expect("alpha gate").data()[t * n_head + h],
            beta: gate_b.expect("beta gate").data()[t * n_head + h],
        },
    }
}

// ---- step (decode path) ----

fn conv_tail_step<T: Scalar>(tail: &mut [T], w: &Tensor<T>, cur: &[T]) -> Vec<T> {
    let width = cur.len();
    let k = w.shape()[1];
    let mut out = vec![T::zero(); width];
    for c in 0..width {
        let mut acc = T::zero();
        for i in 0..k {
            let src = if i == k - 1 {
                cur[c]
            } else {
                tail[i * width + c]
            };
            acc += w.data()[c * k + i] * src;
        }
        out[c] = acc;
    }
    if k > 1 {
        tail.copy_within(width.., 0);
        tail[(k - 2) * width..].copy_from_slice(cur);
    }
    out
}

/// Process one token: update the recurrent state and return `y_t: [d_model]`.
pub fn step<T: Scalar>(
    params: &LinearBlockParams<T>,
    state: &mut RecurrentState<T>,
    x_t: &Tensor<T>,
) -> Result<Tensor<T>> {
    state.matches(params)?;
    let cfg = &params.config;
    let (h, dk, dv) = (cfg.n_head, cfg.d_k, cfg.d_v);
    if x_t.shape() != [cfg.d_model] {
        return Err(CoreError::invalid(
            "linear_block.step",
            format!("x_t shape {:?} vs d_model {}", x_t.shape(), cfg.d_model),
        ));
    }
    let x = x_t.reshape(vec![1, cfg.d_model])?;
    let stream = |w: &Tensor<T>,
                  conv: &Option<Tensor<T>>,
                  tail: &mut Option<Vec<T>>|
     -> Result<Tensor<T>> {
        let p = ops::matmul(&x, w)?;
        Ok(match (conv, tail) {
            (Some(cw), Some(tl)) => {
                let out = conv_tail_step(tl, cw, p.data());
                Tensor::from_vec(p.shape().to_vec(), out)?
            }
            _ => p,
        })
    };
    let q = stream(&params.wq, &params.conv_q, &mut state.q_tail)?.reshape(vec![1, h, dk])?;
    let mut k = stream(&params.wk, &params.conv_k, &mut state.k_tail)?.reshape(vec![1, h, dk])?;
    let v = stream(&params.wv, &params.conv_v, &mut state.v_tail)?.reshape(vec![1, h, dv])?;
    if params.kind.has_delta_rule() {
        k = ops::l2_normalize_last(&k);
    }
    let gate = |w: &Option<Tensor<T>>, b: &Option<Tensor<T>>| -> Result<Option<Tensor<T>>> {
        match (w, b) {
            (Some(w), Some(b)) => Ok(Some(ops::sigmoid(&ops::add_bias(&ops::matmul(&x, w)?, b)?))),
            _ => Ok(None),
        }
    };
    let gate_a = gate(&params.gate_a_w, &params.gate_a_b)?;
    let gate_b = gate(&params.gate_b_w, &params.gate_b_b)?;

    let mut o = vec![T::zero(); h * dv];
    for hi in 0..h {
        let g = resolve_gate(
            params.kind,
            &params.gammas,
            gate_a.as_ref(),
            gate_b.as_ref(),
            0,
            hi,
            h,
            dk,
        );
        let kh = &k.data()[hi * dk..(hi + 1) * dk];
        let vh = &v.data()[hi * dv..(hi + 1) * dv];
        apply_head_update(state.head_mut(hi), kh, vh, g, dk, dv);
        let qh = &q.data()[hi * dk..(hi + 1) * dk];
        head_output(state.head(hi), qh, dk, dv, &mut o[hi * dv..(hi + 1) * dv]);
    }
    let o = Tensor::from_vec(vec![1, h * dv], o)?;
    Ok(ops::matmul(&o, &params.w_out)?.reshape(vec![cfg.d_model])?)
}

/// Reference full-sequence forward: one `step` per token from a fresh state.
pub fn forward_sequential<T: Scalar>(
    params: &LinearBlockParams<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let t = x.shape()[0];
    let d = params.config.d_model;
    let mut state = RecurrentState::new(params);
    let mut out = Vec::with_capacity(t * d);
    for ti in 0..t {
        let x_t = ops::narrow(x, 0, ti, 1)?.reshape(vec![d])?;
        let y = step(params, &mut state, &x_t)?;
        out.extend_from_slice(y.data());
    }
    Ok(Tensor::from_vec(vec![t, d], out)?)
}

// ---- chunked parallel form ----

/// Log-space cumulative decay helper: returns cumulative log-decays `L[i]` for
/// a chunk, where the pairwise factor gamma_i/gamma_j = exp(L[i] - L[j]).
fn cumlog<T: Scalar>(decays: impl Iterator<Item = T>) -> Vec<T> {
    let mut acc = T::zero();
    decays
        .map(|a| {
            acc += a.ln();
            acc
        })
        .collect()
}

/// Chunked evaluation of one head for scalar-decay kinds.
/// `s`: dv*dk state (in/out); rows of q/k: dk, v: dv for tokens `0..c`.
#[allow(clippy::too_many_arguments)]
fn chunk_head_decay_scalar<T: Scalar>(
    s: &mut [T],
    q: &[T],
    k: &[T],
    v: &[T],
    decays: &[T],
    c: usize,
    dk: usize,
    dv: usize,
    out: &mut [T],
) {
    let logs = cumlog(decays.iter().copied());
    // P[i][j] = q_i . k_j
    let mut p = vec![T::zero(); c * c];
    for i in 0..c {
        for j in 0..=i {
            let mut acc = T::zero();
            for d in 0..dk {
                acc += q[i * dk + d] * k[j * dk + d];
            }
            p[i * c + j] = acc;
        }
    }
    for i in 0..c {
        let gi = logs[i].exp();
        // state contribution: gamma_i * (S_0 q_i)
        for row in 0..dv {
            let mut acc = T::zero();
            for d in 0..dk {
                acc += s[row * dk + d] * q[i * dk + d];
            }
            out[i * dv + row] = gi * acc;
        }
        // intra-chunk contributions
        for j in 0..=i {
            let coeff = (logs[i] - logs[j]).exp() * p[i * c + j];
            for row in 0..dv {
                out[i * dv + row] += coeff * v[j * dv + row];
            }
        }
    }
    // chunk-end state: gamma_C S_0 + sum_j (gamma_C/gamma_j) v_j k_j^T
    let gc = logs[c - 1];
    let gce = gc.exp();
    let mut next = vec![T::zero(); dv * dk];
    for row in 0..dv {
        for d in 0..dk {
            next[row * dk + d] = gce * s[row * dk + d];
        }
    }
    for j in 0..c {
        let cj = (gc - logs[j]).exp();
        for row in 0..dv {
            let coeff = cj * v[j * dv + row];
            for d in 0..dk {
                next[row * dk + d] += coeff * k[j * dk + d];
            }
        }
    }
    s.copy_from_slice(&next);
}

/// Chunked evaluation of one head for the per-channel (GLA) gate.
#[allow(clippy::too_many_arguments)]
fn chunk_head_decay_vector<T: Scalar>(
    s: &mut [T],
    q: &[T],
    k: &[T],
    v: &[T],
    gates: &[T], // c*dk
    c: usize,
    dk: usize,
    dv: usize,
    out: &mut [T],
) {
    // per-channel cumulative logs
    let mut logs = vec![T::zero(); c * dk];
    for d in 0..dk {
        let mut acc = T::zero();
        for i in 0..c {
            acc += gates[i * dk + d].ln();
            logs[i * dk + d] = acc;
        }
    }
    for i in 0..c {
        for row in 0..dv {
            let mut acc = T::zero();
            for d in 0..dk {
                acc += s[row * dk + d] * q[i * dk + d] * logs[i * dk + d].exp();
            }
            out[i * dv + row] = acc;
        }
        for j in 0..=i {
            let mut coeff = T::zero();
            for d in 0..dk {
                coeff += q[i * dk + d]
                    * k[j * dk + d]
                    * (logs[i * dk + d] - logs[j * dk + d]).exp();
            }
            for row in 0..dv {
                out[i * dv + row] += coeff * v[j * dv + row];
            }
        }
    }
    let mut next = vec![T::zero(); dv * dk];
    for row in 0..dv {
        for d in 0..dk {
            next[row * dk + d] = logs[(c - 1) * dk + d].exp() * s[row * dk + d];
        }
    }
    for j in 0..c {
        for d in 0..dk {
            let decay = (logs[(c - 1) * dk + d] - logs[j * dk + d]).exp() * k[j * dk + d];
            for row in 0..dv {
                next[row * dk + d] += decay * v[j * dv + row];
            }
        }
    }
    s.copy_from_slice(&next);
}

/// Chunked evaluation of one head for the delta kinds, via forward
/// substitution of the pseudo-value system.
#[allow(clippy::too_many_arguments)]
fn chunk_head_delta<T: Scalar>(
    s: &mut [T],
    q: &[T],
    k: &[T],
    v: &[T],
    alphas: Option<&[T]>, // None => DeltaRule (alpha = 1)
    betas: &[T],
    c: usize,
    dk: usize,
    dv: usize,
    out: &mut [T],
) {
    let logs: Vec<T> = match alphas {
        Some(a) => cumlog(a.iter().copied()),
        None => vec![T::zero(); c],
    };
    // A[i][j] = k_i . k_j ; G1[i] = S_0^T-projected rows: (S_0 k_i), Qs[i] = S_0 q_i
    let mut a_mat = vec![T::zero(); c * c];
    for i in 0..c {
        for j in 0..i {
            let mut acc = T::zero();
            for d in 0..dk {
                acc += k[i * dk + d] * k[j * dk + d];
            }
            a_mat[i * c + j] = acc;
        }
    }
    let mut p = vec![T::zero(); c * c];
    for i in 0..c {
        for j in 0..=i {
            let mut acc = T::zero();
            for d in 0..dk {
                acc += q[i * dk + d] * k[j * dk + d];
            }
            p[i * c + j] = acc;
        }
    }
    // u_i = beta_i (v_i - gamma_i S_0 k_i - sum_{j<i} (gamma_i/gamma_j) A_ij u_j)
    let mut u = vec![T::zero(); c * dv];
    for i in 0..c {
        let gi = logs[i];
        let mut row = vec![T::zero(); dv];
        for (rslot, item) in row.iter_mut().enumerate() {
            // S_0 k_i contribution with decay gamma_i
            let mut sk = T::zero();
            for d in 0..dk {
                sk += s[rslot * dk + d] * k[i * dk + d];
            }
            *item = v[i * dv + rslot] - gi.exp() * sk;
        }
        for j in 0..i {
            let coeff = (gi - logs[j]).exp() * a_mat[i * c + j];
            for r in 0..dv {
                row[r] -= coeff * u[j * dv + r];
            }
        }
        let b = betas[i];
        for r in 0..dv {
            u[i * dv + r] = b * row[r];
        }
    }
    // o_i = gamma_i S_0 q_i + sum_{j<=i} (gamma_i/gamma_j) P_ij u_j
    for i in 0..c {
        let gi = logs[i];
        for row in 0..dv {
            let mut acc = T::zero();
            for d in 0..dk {
                acc += s[row * dk + d] * q[i * dk + d];
            }
            out[i * dv + row] = gi.exp() * acc;
        }
        for j in 0..=i {
            let coeff = (gi - logs[j]).exp() * p[i * c + j];
            for row in 0..dv {
                out[i * dv + row] += coeff * u[j * dv + row];
            }
        }
    }
    // S_C = gamma_C S_0 + sum_j (gamma_C/gamma_j) u_j k_j^T
    let gc = logs[c - 1];
    let mut next = vec![T::zero(); dv * dk];
    let gce = gc.exp();
    for row in 0..dv {
        for d in 0..dk {
            next[row * dk + d] = gce * s[row * dk + d];
        }
    }
    for j in 0..c {
        let cj = (gc - logs[j]).exp();
        for row in 0..dv {
            let coeff = cj * u[j * dv + row];
            for d in 0..dk {
                next[row * dk + d] += coeff * k[j * dk + d];
            }
        }
    }
    s.copy_from_slice(&next);
}

/// Full-sequence forward processing `chunk_size` tokens at a time with the
/// parallel intra-chunk form, carrying state across chunks. Matches
/// `forward_sequential` within 1e-4 (bitwise at chunk_size 1, where the
/// per-token kernel is used directly).
pub fn forward_chunked<T: Scalar>(
    params: &LinearBlockParams<T>,
    x: &Tensor<T>,
    chunk_size: usize,
) -> Result<Tensor<T>> {
    if chunk_size == 0 {
        return Err(CoreError::invalid("forward_chunked", "chunk_size must be >= 1"));
    }
    let cfg = &params.config;
    let t_len = x.shape()[0];
    let (h, dk, dv) = (cfg.n_head, cfg.d_k, cfg.d_v);
    let proj = project_sequence(params, x)?;
    let mut state = RecurrentState::new(params);
    let mut o = vec![T::zero(); t_len * h * dv];

    let mut start = 0;
    while start < t_len {
        let c = chunk_size.min(t_len - start);
        for hi in 0..h {
            // gather per-head rows for this chunk
            let mut qh = vec![T::zero(); c * dk];
            let mut kh = vec![T::zero(); c * dk];
            let mut vh = vec![T::zero(); c * dv];
            for i in 0..c {
                let t = start + i;
                qh[i * dk..(i + 1) * dk]
                    .copy_from_slice(&proj.q.data()[(t * h + hi) * dk..(t * h + hi + 1) * dk]);
                kh[i * dk..(i + 1) * dk]
                    .copy_from_slice(&proj.k.data()[(t * h + hi) * dk..(t * h + hi + 1) * dk]);
                vh[i * dv..(i + 1) * dv]
                    .copy_from_slice(&proj.v.data()[(t * h + hi) * dv..(t * h + hi + 1) * dv]);
            }
            let mut oh = vec![T::zero(); c * dv];
            if c == 1 {
                let g = resolve_gate(
                    params.kind,
                    &params.gammas,
                    proj.gate_a.as_ref(),
                    proj.gate_b.as_ref(),
                    start,
                    hi,
                    h,
                    dk,
                );
                apply_head_update(state.head_mut(hi), &kh, &vh, g, dk, dv);
                head_output(state.head(hi), &qh, dk, dv, &mut oh);
            } else {
                match params.kind {
                    LinearBlockKind::RetNetDecay => {
                        let decays = vec![params.gammas[hi]; c];
                        chunk_head_decay_scalar(
                            state.head_mut(hi),
                            &qh,
                            &kh,
                            &vh,
                            &decays,
                            c,
                            dk,
                            dv,
                            &mut oh,
                        );
                    }
                    LinearBlockKind::ScalarDataGate => {
                        let ga = proj.gate_a.as_ref().expect("scalar gate");
                        let decays: Vec<T> =
                            (0..c).map(|i| ga.data()[(start + i) * h + hi]).collect();
                        chunk_head_decay_scalar(
                            state.head_mut(hi),
                            &qh,
                            &kh,
                            &vh,
                            &decays,
                            c,
                            dk,
                            dv,
                            &mut oh,
                        );
                    }
                    LinearBlockKind::GlaDiagonalGate => {
                        let ga = proj.gate_a.as_ref().expect("gla gate");
                        let mut gates = vec![T::zero(); c * dk];
                        for i in 0..c {
                            let t = start + i;
                            gates[i * dk..(i + 1) * dk].copy_from_slice(
                                &ga.data()[(t * h + hi) * dk..(t * h + hi + 1) * dk],
                            );
                        }
                        chunk_head_decay_vector(
                            state.head_mut(hi),
                            &qh,
                            &kh,
                            &vh,
                            &gates,
                            c,
                            dk,
                            dv,
                            &mut oh,
                        );
                    }
                    LinearBlockKind::DeltaRule | LinearBlockKind::GatedDelta => {
                        let gb = proj.gate_b.as_ref().expect("beta gate");
                        let betas: Vec<T> =
                            (0..c).map(|i| gb.data()[(start + i) * h + hi]).collect();
                        let alphas: Option<Vec<T>> =
                            if params.kind == LinearBlockKind::GatedDelta {
                                let ga = proj.gate_a.as_ref().expect("alpha gate");
                                Some((0..c).map(|i| ga.data()[(start + i) * h + hi]).collect())
                            } else {
                                None
                            };
                        chunk_head_delta(
                            state.head_mut(hi),
                            &qh,
                            &kh,
                            &vh,
                            alphas.as_deref(),
                            &betas,
                            c,
                            dk,
                            dv,
                            &mut oh,
                        );
                    }
                }
            }
            for i in 0..c {
                let t = start + i;
                o[(t * h + hi) * dv..(t * h + hi + 1) * dv]
                    .copy_from_slice(&oh[i * dv..(i + 1) * dv]);
            }
        }
        start += c;
    }
    let o = Tensor::from_vec(vec![t_len, h * dv], o)?;
    Ok(ops::matmul(&o, &params.w_out)?)
}

// ---- fused training scan ----

/// Run the scan and keep every state for the backward pass.
/// States layout: slot `t` holds S_{t-1} (slot 0 = zeros), `T+1` slots.
#[allow(clippy::type_complexity)]
fn scan_forward_with_states<T: Scalar>(
    kind: LinearBlockKind,
    gammas: &[T],
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    gate_a: Option<&Tensor<T>>,
    gate_b: Option<&Tensor<T>>,
) -> (Tensor<T>, Vec<T>) {
    let (t_len, h, dk) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let dv = v.shape()[2];
    let sdim = dv * dk;
    let mut states = vec![T::zero(); (t_len + 1) * h * sdim];
    let mut o = vec![T::zero(); t_len * h * dv];
    for hi in 0..h {
        let mut s = vec![T::zero(); sdim];
        for t in 0..t_len {
            let g = resolve_gate(kind, gammas, gate_a, gate_b, t, hi, h, dk);
            let kh = &k.data()[(t * h + hi) * dk..(t * h + hi + 1) * dk];
            let vh = &v.data()[(t * h + hi) * dv..(t * h + hi + 1) * dv];
            apply_head_update(&mut s, kh, vh, g, dk, dv);
            let qh = &q.data()[(t * h + hi) * dk..(t * h + hi + 1) * dk];
            head_output(&s, qh, dk, dv, &mut o[(t * h + hi) * dv..(t * h + hi + 1) * dv]);
            states[((t + 1) * h + hi) * sdim..((t + 1) * h + hi + 1) * sdim].copy_from_slice(&s);
        }
    }
    (
        Tensor::from_vec(vec![t_len, h, dv], o).expect("sized"),
        states,
    )
}

/// Record the recurrence on the graph as one fused op with a hand-derived
/// backward (BPTT through the scan).
#[allow(clippy::too_many_arguments)]
pub fn scan_graph<T: Scalar>(
    g: &Graph<T>,
    kind: LinearBlockKind,
    gammas: Vec<T>,
    q: Var,
    k: Var,
    v: Var,
    gate_a: Option<Var>,
    gate_b: Option<Var>,
) -> Result<Var> {
    let qv = g.value(q);
    let kv = g.value(k);
    let vv = g.value(v);
    let av = gate_a.map(|a| g.value(a));
    let bv = gate_b.map(|b| g.value(b));
    let (out, states) =
        scan_forward_with_states(kind, &gammas, &qv, &kv, &vv, av.as_ref(), bv.as_ref());

    let mut parents = vec![q, k, v];
    if let Some(a) = gate_a {
        parents.push(a);
    }
    if let Some(b) = gate_b {
        parents.push(b);
    }
    let any_grad = parents.iter().any(|&p| g.requires_grad(p));
    let rule = any_grad.then(|| {
        let (t_len, h, dk) = (qv.shape()[0], qv.shape()[1], qv.shape()[2]);
        let dv = vv.shape()[2];
        let sdim = dv * dk;
        let ids: Vec<usize> = parents.iter().map(|p| p.id()).collect();
        let qv = qv.clone();
        let kv = kv.clone();
        let vv = vv.clone();
        let av = av.clone();
        let bv = bv.clone();
        let gammas = gammas.clone();
        Box::new(move |go: &Tensor<T>| {
            let mut dq = vec![T::zero(); t_len * h * dk];
            let mut dk_g = vec![T::zero(); t_len * h * dk];
            let mut dv_g = vec![T::zero(); t_len * h * dv];
            let mut da = av.as_ref().map(|a| vec![T::zero(); a.len()]);
            let mut db = bv.as_ref().map(|b| vec![T::zero(); b.len()]);
            for hi in 0..h {
                let mut ds = vec![T::zero(); sdim];
                for t in (0..t_len).rev() {
                    let base = (t * h + hi) * dk;
                    let vbase = (t * h + hi) * dv;
                    let s_t = &states[((t + 1) * h + hi) * sdim..((t + 1) * h + hi + 1) * sdim];
                    let s_prev = &states[(t * h + hi) * sdim..(t * h + hi + 1) * sdim];
                    let go_t = &go.data()[vbase..vbase + dv];
                    let q_t = &qv.data()[base..base + dk];
                    let k_t = &kv.data()[base..base + dk];
                    let v_t = &vv.data()[vbase..vbase + dv];
                    // o_t = S_t q_t
                    for i in 0..dv {
                        let gi = go_t[i];
                        for j in 0..dk {
                            dq[base + j] += s_t[i * dk + j] * gi;
                            ds[i * dk + j] += gi * q_t[j];
                        }
                    }
                    match kind {
                        LinearBlockKind::RetNetDecay | LinearBlockKind::ScalarDataGate => {
                            let a = match kind {
                                LinearBlockKind::RetNetDecay => gammas[hi],
                                _ => av.as_ref().expect("gate").data()[t * h + hi],
                            };
                            if kind == LinearBlockKind::ScalarDataGate {
                                let slot = &mut da.as_mut().expect("gate")[t * h + hi];
                                for i in 0..sdim {
                                    *slot += ds[i] * s_prev[i];
                                }
                            }
                            for i in 0..dv {
                                let mut acc_v = T::zero();
                                for j in 0..dk {
                                    acc_v += ds[i * dk + j] * k_t[j];
                                    dk_g[base + j] += ds[i * dk + j] * v_t[i];
                                }
                                dv_g[vbase + i] += acc_v;
                            }
                            for d in ds.iter_mut() {
                                *d = a * *d;
                            }
                        }
                        LinearBlockKind::GlaDiagonalGate => {
                            let a = av.as_ref().expect("gate");
                            let arow = &a.data()[(t * h + hi) * dk..(t * h + hi + 1) * dk];
                            let da_buf = da.as_mut().expect("gate");
                            for i in 0..dv {
                                let mut acc_v = T::zero();
                                for j in 0..dk {
                                    let d = ds[i * dk + j];
                                    da_buf[(t * h + hi) * dk + j] += d * s_prev[i * dk + j];
                                    acc_v += d * k_t[j];
                                    dk_g[base + j] += d * v_t[i];
                                }
                                dv_g[vbase + i] += acc_v;
                            }
                            for i in 0..dv {
                                for j in 0..dk {
                                    ds[i * dk + j] = arow[j] * ds[i * dk + j];
                                }
                            }
                        }
                        LinearBlockKind::DeltaRule | LinearBlockKind::GatedDelta => {
                            let beta = bv.as_ref().expect("beta").data()[t * h + hi];
                            let alpha = match kind {
                                LinearBlockKind::GatedDelta => {
                                    av.as_ref().expect("alpha").data()[t * h + hi]
                                }
                                _ => T::one(),
                            };
                            // recompute u, w from the stored previous state
                            let mut u = vec![T::zero(); dv];
                            for i in 0..dv {
                                let mut acc = T::zero();
                                for j in 0..dk {
                                    acc += s_prev[i * dk + j] * k_t[j];
                                }
                                u[i] = acc;
                            }
                            let mut dsk = vec![T::zero(); dv]; // (dS k)_i
                            for i in 0..dv {
                                let mut acc = T::zero();
                                for j in 0..dk {
                                    acc += ds[i * dk + j] * k_t[j];
                                }
                                dsk[i] = acc;
                            }
                            let mut dbeta = T::zero();
                            let mut dalpha = T::zero();
                            let mut dw = vec![T::zero(); dv];
                            for i in 0..dv {
                                let w = v_t[i] - alpha * u[i];
                                dbeta += w * dsk[i];
                                dw[i] = beta * dsk[i];
                                dv_g[vbase + i] += dw[i];
                            }
                            if kind == LinearBlockKind::GatedDelta {
                                for i in 0..sdim {
                                    dalpha += ds[i] * s_prev[i];
                                }
                                for i in 0..dv {
                                    dalpha -= dw[i] * u[i];
                                }
                                da.as_mut().expect("alpha")[t * h + hi] += dalpha;
                            }
                            db.as_mut().expect("beta")[t * h + hi] += dbeta;
                            for j in 0..dk {
                                let mut acc1 = T::zero(); // sum_i dS[i,j] w_i
                                let mut acc2 = T::zero(); // sum_i dw_i S_prev[i,j]
                                for i in 0..dv {
                                    let w = v_t[i] - alpha * u[i];
                                    acc1 += ds[i * dk + j] * w;
                                    acc2 += dw[i] * s_prev[i * dk + j];
                                }
                                dk_g[base + j] += beta * acc1 - alpha * acc2;
                            }
                            for i in 0..dv {
                                for j in 0..dk {
                                    ds[i * dk + j] =
                                        alpha * ds[i * dk + j] - alpha * dw[i] * k_t[j];
                                }
                            }
                        }
                    }
                }
            }
            let mut grads = vec![
                (ids[0], Tensor::from_vec(vec![t_len, h, dk], dq).expect("sized")),
                (ids[1], Tensor::from_vec(vec![t_len, h, dk], dk_g).expect("sized")),
                (ids[2], Tensor::from_vec(vec![t_len, h, dv], dv_g).expect("sized")),
            ];
            let mut next = 3;
            if let (Some(da), Some(a)) = (da, av.as_ref()) {
                grads.push((
                    ids[next],
                    Tensor::from_vec(a.shape().to_vec(), da).expect("sized"),
                ));
                next += 1;
            }
            if let (Some(db), Some(b)) = (db, bv.as_ref()) {
                grads.push((
                    ids[next],
                    Tensor::from_vec(b.shape().to_vec(), db).expect("sized"),
                ));
            }
            grads
        }) as Box<dyn Fn(&Tensor<T>) -> Vec<(usize, Tensor<T>)>>
    });
    Ok(g.custom(out, &parents, rule))
}

/// Graph-recorded block forward for training. Weights are bound from `store`
/// under `prefix`; math mirrors the pure paths exactly.
#[allow(clippy::too_many_arguments)]
pub fn forward_graph<T: Scalar>(
    g: &Graph<T>,
    bindings: &mut Bindings,
    store: &ParamStore<T>,
    prefix: &str,
    kind: LinearBlockKind,
    config: &LinearBlockConfig,
    x: Var,
) -> Result<Var> {
    let t = g.shape(x)[0];
    let (h, dk, dv) = (config.n_head, config.d_k, config.d_v);
    let bind = |bindings: &mut Bindings, suffix: &str| -> Result<Var> {
        Ok(bindings.var(g, store, &format!("{prefix}.{suffix}"))?)
    };
    let has = |suffix: &str| store.contains(&format!("{prefix}.{suffix}"));

    let stream = |g: &Graph<T>, bindings: &mut Bindings, w: &str, conv: &str| -> Result<Var> {
        let wv = bind(bindings, w)?;
        let p = g.matmul(x, wv)?;
        if has(conv) {
            let cw = bind(bindings, conv)?;
            Ok(g.causal_conv_depthwise(p, cw)?)
        } else {
            Ok(p)
        }
    };
    let q = stream(g, bindings, "wq", "conv_q")?;
    let q = g.reshape(q, vec![t, h, dk])?;
    let k = stream(g, bindings, "wk", "conv_k")?;
    let mut k = g.reshape(k, vec![t, h, dk])?;
    let v = stream(g, bindings, "wv", "conv_v")?;
    let v = g.reshape(v, vec![t, h, dv])?;
    if kind.has_delta_rule() {
        k = g.l2_normalize_last(k);
    }
    let gate = |g: &Graph<T>, bindings: &mut Bindings, wn: &str, bn: &str, width: usize| -> Result<Option<Var>> {
        if !has(wn) {
            return Ok(None);
        }
        let w = bind(bindings, wn)?;
        let b = bind(bindings, bn)?;
        let z = g.add_bias(g.matmul(x, w)?, b)?;
        let s = g.sigmoid(z);
        Ok(Some(if width == dk * h && kind == LinearBlockKind::GlaDiagonalGate {
            g.reshape(s, vec![t, h, dk])?
        } else {
            g.reshape(s, vec![t, h])?
        }))
    };
    let ga_width = gate_a_width(kind, config).unwrap_or(0);
    let gate_a = gate(g, bindings, "gate_a.w", "gate_a.b", ga_width)?;
    let gate_b = gate(g, bindings, "gate_b.w", "gate_b.b", h)?;

    let o = scan_graph(g, kind, retnet_gamma_schedule(config.n_head), q, k, v, gate_a, gate_b)?;
    let o = g.reshape(o, vec![t, h * dv])?;
    let w_out = bind(bindings, "w_out")?;
    Ok(g.matmul(o, w_out)?)
}

/// Low-level per-head state kernels, shared by the step/scan paths and usable
/// directly in reduction tests and by the JetBlock.
pub mod kernel {
    use super::*;

    pub fn head_update_delta<T: Scalar>(
        s: &mut [T],
        k: &[T],
        v: &[T],
        alpha: T,
        beta: T,
        dk: usize,
        dv: usize,
    ) {
        apply_head_update(s, k, v, HeadGate::Delta { alpha, beta }, dk, dv);
    }

    pub fn head_update_decay<T: Scalar>(s: &mut [T], k: &[T], v: &[T], a: T, dk: usize, dv: usize) {
        apply_head_update(s, k, v, HeadGate::Decay(a), dk, dv);
    }

    pub fn head_update_decay_vec<T: Scalar>(
        s: &mut [T],
        k: &[T],
        v: &[T],
        a: &[T],
        dk: usize,
        dv: usize,
    ) {
        apply_head_update(s, k, v, HeadGate::DecayVec(a), dk, dv);
    }

    pub fn head_output<T: Scalar>(s: &[T], q: &[T], dk: usize, dv: usize, out: &mut [T]) {
        super::head_output(s, q, dk, dv, out);
    }
}
