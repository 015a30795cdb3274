//! Raw slice kernels.
//!
//! With the `parallel` feature the row loops are split across the rayon
//! pool. Every output element is computed by exactly one closure invocation
//! with a fixed summation order, so results are bit-identical to the
//! sequential path regardless of thread count.

use super::Scalar;

/// Below this many multiply-adds the sequential loop is used even when
/// `parallel` is enabled.
pub const PAR_THRESHOLD: usize = 1 << 15;

#[inline]
fn matmul_row<S: Scalar>(a_row: &[S], b: &[S], out_row: &mut [S], n: usize) {
    for (p, &av) in a_row.iter().enumerate() {
        if av == S::zero() {
            continue;
        }
        let b_row = &b[p * n..(p + 1) * n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o = *o + av * bv;
        }
    }
}

/// `out = a · b` for row-major `a: m×k`, `b: k×n`; single-threaded.
pub fn matmul_into_seq<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    out.iter_mut().for_each(|x| *x = S::zero());
    for (a_row, out_row) in a.chunks(k).zip(out.chunks_mut(n)) {
        matmul_row(a_row, b, out_row, n);
    }
}

/// `out = a · b`, rows distributed over the rayon pool.
#[cfg(feature = "parallel")]
pub fn matmul_into_par<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    use rayon::prelude::*;
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    out.par_chunks_mut(n)
        .zip(a.par_chunks(k))
        .for_each(|(out_row, a_row)| {
            out_row.iter_mut().for_each(|x| *x = S::zero());
            matmul_row(a_row, b, out_row, n);
        });
}

/// Dispatches to the parallel kernel for large products when available.
pub fn matmul_into<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    #[cfg(feature = "parallel")]
    if m > 1 && m * k * n >= PAR_THRESHOLD {
        return matmul_into_par(a, b, out, m, k, n);
    }
    matmul_into_seq(a, b, out, m, k, n)
}

/// `out = aᵀ` for row-major `a: m×n`.
pub fn transpose_into<S: Scalar>(a: &[S], out: &mut [S], m: usize, n: usize) {
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
}

fn softmax_lane<S: Scalar>(data: &mut [S], base: usize, n: usize, stride: usize) {
    let mut max = S::neg_infinity();
    for j in 0..n {
        max = max.max(data[base + j * stride]);
    }
    let mut total = S::zero();
    for j in 0..n {
        let e = (data[base + j * stride] - max).exp();
        data[base + j * stride] = e;
        total = total + e;
    }
    let inv = total.recip();
    for j in 0..n {
        data[base + j * stride] = data[base + j * stride] * inv;
    }
}

/// In-place softmax over the middle extent of an `outer × n × inner` block.
pub fn softmax_strided<S: Scalar>(data: &mut [S], outer: usize, n: usize, inner: usize) {
    if inner == 1 {
        softmax_rows(data, n);
        return;
    }
    for o in 0..outer {
        for i in 0..inner {
            softmax_lane(data, o * n * inner + i, n, inner);
        }
    }
}

/// In-place softmax of each contiguous row of length `n`.
pub fn softmax_rows<S: Scalar>(data: &mut [S], n: usize) {
    #[cfg(feature = "parallel")]
    if data.len() >= PAR_THRESHOLD {
        use rayon::prelude::*;
        data.par_chunks_mut(n).for_each(|row| softmax_lane(row, 0, n, 1));
        return;
    }
    data.chunks_mut(n).for_each(|row| softmax_lane(row, 0, n, 1));
}

/// Normalises each row of length `d` to zero mean and unit variance.
///
/// Writes the normalised values into `out` and each row's `1/sqrt(var+eps)`
/// into `inv_std` (the backward pass needs both).
pub fn layer_norm_rows<S: Scalar>(x: &[S], out: &mut [S], inv_std: &mut [S], d: usize, eps: S) {
    let dn = S::lit(d as f64);
    for ((row, orow), is) in x.chunks(d).zip(out.chunks_mut(d)).zip(inv_std.iter_mut()) {
        let mean = row.iter().copied().sum::<S>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
        let r = (var + eps).sqrt().recip();
        *is = r;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - mean) * r;
        }
    }
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu<S: Scalar>(x: S) -> S {
    let v = x.as_f64();
    S::lit(v * normal_cdf(v))
}

/// d/dx of `x·Φ(x)` = `Φ(x) + x·φ(x)`.
#[inline]
pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let v = x.as_f64();
    let pdf = (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
    S::lit(normal_cdf(v) + v * pdf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seq_and_dispatch_agree_bitwise() {
        let (m, k, n) = (37, 53, 41);
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 7 % 13) as f32) * 0.37 - 2.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 5 % 11) as f32) * 0.21 - 1.0).collect();
        let mut s = vec![0.0; m * n];
        let mut p = vec![0.0; m * n];
        matmul_into_seq(&a, &b, &mut s, m, k, n);
        matmul_into(&a, &b, &mut p, m, k, n);
        assert_eq!(s, p);
        #[cfg(feature = "parallel")]
        {
            let mut q = vec![1.0; m * n];
            matmul_into_par(&a, &b, &mut q, m, k, n);
            assert_eq!(s, q);
        }
    }

    #[test]
    fn gelu_grad_matches_difference_quotient() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5f64] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
