//! Central finite differences, independent of the tape's backward rules.

use std::sync::Arc;

use super::{Rng, Tape, Tensor, Var};

/// Perturbation used by every finite-difference check in the crate.
pub const FD_STEP: f64 = 1e-5;

/// Pass threshold for the relative error at double precision.
pub const FD_TOLERANCE: f64 = 1e-4;

/// Denominator floor: below this magnitude differences are judged absolutely.
pub const ABS_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, ABS_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Largest elementwise [`relative_error`] between two equal-shape tensors.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of `f` with respect to every element of
/// every tensor in `inputs`.
///
/// Elements are evaluated independently (in parallel with the `parallel`
/// feature); each result lands in its own slot so the output does not
/// depend on scheduling.
pub fn numeric_gradient<F>(inputs: &[Tensor<f64>], f: F, h: f64) -> Vec<Tensor<f64>>
where
    F: Fn(&[Tensor<f64>]) -> f64 + Sync,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(t, x)| (0..x.len()).map(move |e| (t, e)))
        .collect();
    let eval = |&(t, e): &(usize, usize)| {
        let mut work = inputs.to_vec();
        let orig = work[t].data()[e];
        work[t].data_mut()[e] = orig + h;
        let plus = f(&work);
        work[t].data_mut()[e] = orig - h;
        let minus = f(&work);
        (plus - minus) / (2.0 * h)
    };
    #[cfg(feature = "parallel")]
    let flat: Vec<f64> = {
        use rayon::prelude::*;
        coords.par_iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let flat: Vec<f64> = coords.iter().map(eval).collect();

    let mut out = Vec::with_capacity(inputs.len());
    let mut offset = 0;
    for x in inputs {
        out.push(Tensor::from_vec(x.shape(), flat[offset..offset + x.len()].to_vec()).unwrap());
        offset += x.len();
    }
    out
}

/// Signature of an operation under test: inputs are differentiable leaves.
pub type OpCheck = for<'t> fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>;

/// Checks the tape gradient of `op` against finite differences.
///
/// The scalar objective is `Σ op(inputs) ⊙ R` for a fixed random `R` drawn
/// from `seed`. Returns the max relative error per input.
pub fn check_op(inputs: &[Tensor<f64>], op: OpCheck, seed: u64, h: f64) -> Vec<f64> {
    let probe_shape = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs
            .iter()
            .map(|x| tape.param(Arc::new(x.clone())))
            .collect();
        op(&tape, &vars).shape()
    };
    let weights: Tensor<f64> = Rng::new(seed ^ 0xA5A5).gaussian_tensor(&probe_shape, 0.0, 1.0);

    let objective = |xs: &[Tensor<f64>]| {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.param(Arc::new(x.clone()))).collect();
        let out = op(&tape, &vars);
        out.value().mul(&weights).unwrap().sum()
    };

    let tape = Tape::new();
    let vars: Vec<_> = inputs
        .iter()
        .map(|x| tape.param(Arc::new(x.clone())))
        .collect();
    let w = tape.constant(weights.clone());
    let loss = op(&tape, &vars).mul(w).sum();
    let grads = tape.backward(loss);
    let analytic: Vec<_> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let numeric = numeric_gradient(inputs, objective, h);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| max_relative_error(a, n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn numeric_gradient_of_cubic() {
        let x = Tensor::from_rows(&[&[0.5, -1.5]]);
        let g = numeric_gradient(&[x], |xs| xs[0].data().iter().map(|v| v * v * v).sum(), FD_STEP);
        assert!((g[0].data()[0] - 0.75).abs() < 1e-8);
        assert!((g[0].data()[1] - 6.75).abs() < 1e-8);
    }
}
