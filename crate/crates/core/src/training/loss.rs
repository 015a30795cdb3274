use crate::error::{Error, Result};

/// `−Σ_c q_c · log softmax(logits)_c` with `q = (1−ε)·onehot(target) + ε/C`.
///
/// The tape op [`Var::smoothed_cross_entropy`](crate::numerics::Var::smoothed_cross_entropy)
/// computes the same quantity inside a forward pass.
pub fn smoothed_cross_entropy(logits: &[f64], target: usize, eps: f64) -> Result<f64> {
    let c = logits.len();
    if target >= c {
        return Err(Error::Index {
            what: "class target",
            index: target,
            len: c,
        });
    }
    if !(0.0..1.0).contains(&eps) && eps != 1.0 {
        return Err(Error::Config(format!("label smoothing {eps} not in [0,1]")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    let off = eps / c as f64;
    Ok(logits
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let q = if i == target { 1.0 - eps + off } else { off };
            -q * (x - lse)
        })
        .sum())
}
