//! Pre-norm transformer encoder layers with stochastic depth.
//!
//! `y = z + MSA(LN(z))`, `out = y + MLP(LN(y))`, where the MLP is two dense
//! layers separated by exact GeLU. During training each residual branch is
//! skipped with probability `drop_prob` and otherwise scaled by
//! `1/(1 − drop_prob)`.

use crate::numerics::{Rng, Scalar, Tensor, Var};
use crate::params::{init, Bound, Linear, Norm, ParamId, ParamStore};

/// Shape of one encoder stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StackConfig {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp: usize,
}

impl StackConfig {
    /// `⌊d/heads⌋`; heads are concatenated to `heads·head_dim` before the
    /// output projection back to `d`.
    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Scalar parameters in one layer.
    pub fn layer_param_count(&self) -> usize {
        let (d, dh, h, m) = (self.d, self.head_dim(), self.heads, self.mlp);
        let norms = 2 * 2 * d;
        let qkv = h * 3 * (d * dh + dh);
        let out = h * dh * d + d;
        let mlp = d * m + m + m * d + d;
        norms + qkv + out + mlp
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
}

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    pub wo: ParamId,
    pub bo: ParamId,
    pub head_dim: usize,
}

impl AttentionParams {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        d: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Self {
        let dh = d / heads;
        assert!(dh >= 1, "more heads ({heads}) than channels ({d})");
        let mut proj = |store: &mut ParamStore<S>, kind: &str, h: usize| {
            let w = store.add(
                format!("{prefix}.w{kind}.head{h}"),
                init::fan_in_uniform(rng, &[d, dh], d),
            );
            let b = store.add(format!("{prefix}.b{kind}.head{h}"), Tensor::zeros(&[dh]));
            (w, b)
        };
        let heads_p = (0..heads)
            .map(|h| {
                let (wq, bq) = proj(store, "q", h);
                let (wk, bk) = proj(store, "k", h);
                let (wv, bv) = proj(store, "v", h);
                HeadParams {
                    wq,
                    bq,
                    wk,
                    bk,
                    wv,
                    bv,
                }
            })
            .collect();
        let cat = heads * dh;
        let wo = store.add(
            format!("{prefix}.wo"),
            init::fan_in_uniform(rng, &[cat, d], cat),
        );
        let bo = store.add(format!("{prefix}.bo"), Tensor::zeros(&[d]));
        Self {
            heads: heads_p,
            wo,
            bo,
            head_dim: dh,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayerParams {
    pub ln1: Norm,
    pub attn: AttentionParams,
    pub ln2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub drop_prob: f64,
}

impl EncoderLayerParams {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        cfg: &StackConfig,
        drop_prob: f64,
        rng: &mut Rng,
    ) -> Self {
        assert!((0.0..1.0).contains(&drop_prob), "drop_prob {drop_prob} not in [0,1)");
        let ln1 = Norm::init(store, &format!("{prefix}.ln1"), cfg.d);
        let attn = AttentionParams::init(store, &format!("{prefix}.msa"), cfg.d, cfg.heads, rng);
        let ln2 = Norm::init(store, &format!("{prefix}.ln2"), cfg.d);
        let fc1 = Linear::init(store, &format!("{prefix}.mlp.fc1"), cfg.d, cfg.mlp, rng);
        let fc2 = Linear::init(store, &format!("{prefix}.mlp.fc2"), cfg.mlp, cfg.d, rng);
        Self {
            ln1,
            attn,
            ln2,
            fc1,
            fc2,
            drop_prob,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct EncoderStack {
    pub layers: Vec<EncoderLayerParams>,
}

impl EncoderStack {
    /// Builds `cfg.layers` layers named `{prefix}.layer{l}`.
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        cfg: &StackConfig,
        drop_probs: &[f64],
        rng: &mut Rng,
    ) -> Self {
        assert_eq!(drop_probs.len(), cfg.layers);
        Self {
            layers: drop_probs
                .iter()
                .enumerate()
                .map(|(l, &p)| EncoderLayerParams::init(store, &format!("{prefix}.layer{l}"), cfg, p, rng))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Drop probabilities rising linearly from 0 at the first layer to `max`
/// at the last. A single layer gets 0.
pub fn linear_drop_schedule(layers: usize, max: f64) -> Vec<f64> {
    match layers {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|l| max * l as f64 / (n - 1) as f64).collect(),
    }
}

/// Multi-head self-attention; also returns each head's `N × N` attention
/// matrix.
pub fn msa_with_weights<'t, S: Scalar>(
    p: &Bound<'t, S>,
    z: Var<'t, S>,
    a: &AttentionParams,
) -> (Var<'t, S>, Vec<Var<'t, S>>) {
    let scale = S::lit(1.0 / (a.head_dim as f64).sqrt());
    let mut outs = Vec::with_capacity(a.heads.len());
    let mut weights = Vec::with_capacity(a.heads.len());
    for h in &a.heads {
        let q = z.matmul(p.var(h.wq)).add_bias(p.var(h.bq));
        let k = z.matmul(p.var(h.wk)).add_bias(p.var(h.bk));
        let v = z.matmul(p.var(h.wv)).add_bias(p.var(h.bv));
        let attn = q.matmul(k.transpose()).scale(scale).softmax_last();
        outs.push(attn.matmul(v));
        weights.push(attn);
    }
    let cat = if outs.len() == 1 {
        outs[0]
    } else {
        Var::concat_cols(&outs)
    };
    let out = cat.matmul(p.var(a.wo)).add_bias(p.var(a.bo));
    (out, weights)
}

/// Per head `softmax(QKᵀ/√d_h)V`, heads concatenated, then `W^O`.
pub fn msa<'t, S: Scalar>(p: &Bound<'t, S>, z: Var<'t, S>, a: &AttentionParams) -> Var<'t, S> {
    msa_with_weights(p, z, a).0
}

fn mlp<'t, S: Scalar>(p: &Bound<'t, S>, x: Var<'t, S>, l: &EncoderLayerParams) -> Var<'t, S> {
    l.fc2.forward(p, l.fc1.forward(p, x).gelu())
}

/// Adds `branch(x)` to `x`, applying stochastic depth when training.
fn residual<'t, S: Scalar>(
    x: Var<'t, S>,
    drop_prob: f64,
    training: bool,
    rng: &mut Rng,
    branch: impl FnOnce(Var<'t, S>) -> Var<'t, S>,
) -> Var<'t, S> {
    if training && drop_prob > 0.0 {
        if rng.bernoulli(drop_prob) {
            return x;
        }
        return x.add(branch(x).scale(S::lit(1.0 / (1.0 - drop_prob))));
    }
    x.add(branch(x))
}

/// One pre-norm encoder layer.
pub fn encoder_layer<'t, S: Scalar>(
    p: &Bound<'t, S>,
    z: Var<'t, S>,
    layer: &EncoderLayerParams,
    rng: &mut Rng,
    training: bool,
) -> Var<'t, S> {
    let y = residual(z, layer.drop_prob, training, rng, |x| {
        msa(p, layer.ln1.forward(p, x), &layer.attn)
    });
    residual(y, layer.drop_prob, training, rng, |x| {
        mlp(p, layer.ln2.forward(p, x), layer)
    })
}

/// Applies every layer in order; layer `l` draws from `rng.derive(l)`.
pub fn run_stack<'t, S: Scalar>(
    p: &Bound<'t, S>,
    z: Var<'t, S>,
    stack: &EncoderStack,
    rng: &Rng,
    training: bool,
) -> Var<'t, S> {
    stack.layers.iter().enumerate().fold(z, |z, (l, layer)| {
        encoder_layer(p, z, layer, &mut rng.derive(l as u64), training)
    })
}
