//! Cross-view attention fusion (CVAF) and attention-based sequence pooling.
//!
//! CVAF updates view `i` (fewer tokens) from its neighbour `i+1` (more
//! tokens): with `y = z_{i+1}·W^proj`,
//!
//! ```text
//! z_i ← softmax((z_i·W^Q)(y·W^K)ᵀ / √d) · (y·W^V) + z_i
//! ```
//!
//! Sequence pooling collapses `N × d` tokens to one `1 × d` vector with
//! weights `softmax((z·W^S)ᵀ)`.

use crate::error::{Error, Result};
use crate::numerics::{Rng, Scalar, Var};
use crate::params::{init, Bound, ParamId, ParamStore};
use crate::tokenizer::TokenSequence;

#[derive(Clone, Copy, Debug)]
pub struct CvafParams {
    pub wproj: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    /// Width used in the `√d_k` scaling.
    pub d: usize,
}

impl CvafParams {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, d: usize, rng: &mut Rng) -> Self {
        let mut sq = |name: &str| {
            store.add(
                format!("{prefix}.{name}"),
                init::fan_in_uniform(rng, &[d, d], d),
            )
        };
        Self {
            wproj: sq("wproj"),
            wq: sq("wq"),
            wk: sq("wk"),
            wv: sq("wv"),
            d,
        }
    }

    pub const fn param_count(d: usize) -> usize {
        4 * d * d
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SeqPoolParams {
    pub ws: ParamId,
}

impl SeqPoolParams {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, d: usize, rng: &mut Rng) -> Self {
        Self {
            ws: store.add(format!("{prefix}.ws"), init::fan_in_uniform(rng, &[d, 1], d)),
        }
    }
}

/// Single-head cross-view attention with a residual connection.
pub fn cvaf<'t, S: Scalar>(
    p: &Bound<'t, S>,
    query_view: Var<'t, S>,
    kv_view: Var<'t, S>,
    params: &CvafParams,
) -> Result<Var<'t, S>> {
    let (qs, ks) = (query_view.shape(), kv_view.shape());
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] || qs[1] != params.d {
        return Err(Error::Config(format!(
            "cross-view fusion needs equal token widths (params {}): {qs:?} vs {ks:?}",
            params.d
        )));
    }
    let y = kv_view.matmul(p.var(params.wproj));
    let q = query_view.matmul(p.var(params.wq));
    let k = y.matmul(p.var(params.wk));
    let v = y.matmul(p.var(params.wv));
    let scale = S::lit(1.0 / (params.d as f64).sqrt());
    let attn = q.matmul(k.transpose()).scale(scale).softmax_last();
    Ok(attn.matmul(v).add(query_view))
}

/// One fusion round over views sorted ascending by token count.
///
/// View `i` is updated from the pre-round tokens of view `i+1`; the last
/// view passes through.
pub fn fuse_all<'t, S: Scalar>(
    p: &Bound<'t, S>,
    views: &[TokenSequence<'t, S>],
    params: &[CvafParams],
) -> Result<Vec<TokenSequence<'t, S>>> {
    if views.len() > 1 && params.len() != views.len() - 1 {
        return Err(Error::Config(format!(
            "{} views need {} fusion parameter sets, got {}",
            views.len(),
            views.len() - 1,
            params.len()
        )));
    }
    let mut out = Vec::with_capacity(views.len());
    for (i, view) in views.iter().enumerate() {
        match views.get(i + 1) {
            Some(next) => {
                if view.len() > next.len() {
                    return Err(Error::Config(format!(
                        "views must be ascending by token count: {} > {}",
                        view.len(),
                        next.len()
                    )));
                }
                let fused = cvaf(p, view.tokens, next.tokens, &params[i])?;
                out.push(view.with_tokens(fused));
            }
            None => out.push(*view),
        }
    }
    Ok(out)
}

/// Pooling weights `softmax((z·W^S)ᵀ)`, shape `1 × N`.
pub fn pool_weights<'t, S: Scalar>(p: &Bound<'t, S>, z: Var<'t, S>, params: &SeqPoolParams) -> Var<'t, S> {
    z.matmul(p.var(params.ws)).transpose().softmax_last()
}

/// Weighted sum of tokens, shape `1 × d`.
pub fn sequence_pool<'t, S: Scalar>(p: &Bound<'t, S>, z: Var<'t, S>, params: &SeqPoolParams) -> Var<'t, S> {
    pool_weights(p, z, params).matmul(z)
}
