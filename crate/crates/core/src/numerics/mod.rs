//! Dense tensors, compute kernels, a reverse-mode tape and a seedable PRNG.
//!
//! Precision is chosen per call site through the [`Scalar`] parameter:
//! training runs on `f32`, gradient checks on `f64`.

pub mod gradcheck;
pub mod kernels;
pub mod rng;
pub mod tape;

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use rng::Rng;
pub use tape::{Grads, Tape, Var};

/// Floating-point element type accepted by every kernel.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    fn lit(x: f64) -> Self;

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
}

/// Row-major dense tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Geometry(format!(
            "tensor extents must be positive, got {shape:?}"
        )));
    }
    Ok(shape.iter().product())
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::Dimension {
                op: "from_vec",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let len = check_shape(shape).expect("invalid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, S::one())
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    /// Builds a 2-D tensor from nested rows, mostly for tests and fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows
            .iter()
            .flat_map(|r| r.iter().map(|&x| S::lit(x)))
            .collect();
        Self::from_vec(&[rows.len(), cols], data).expect("invalid rows")
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let len = check_shape(shape).expect("invalid shape");
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Extent of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    /// Product of all extents but the last.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, index: &[usize]) -> S {
        assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (&i, &n) in index.iter().zip(&self.shape) {
            assert!(i < n, "index {index:?} out of bounds for {:?}", self.shape);
            off = off * n + i;
        }
        self.data[off]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: S) -> Self {
        self.map(|x| x * s)
    }

    /// In-place `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        assert_eq!(self.rank(), 2, "transpose expects a matrix");
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self {
            shape: vec![n, m],
            data: out,
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| T::lit(x.as_f64())).collect(),
        }
    }

    /// Largest elementwise absolute difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .fold(0.0, f64::max)
    }
}

/// Product `a · b` of two matrices.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![S::zero(); m * n];
    kernels::matmul_into(&a.data, &b.data, &mut out, m, k, n);
    Tensor::from_vec(&[m, n], out)
}

/// Numerically stable softmax along `axis`.
pub fn softmax<S: Scalar>(x: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    if axis >= x.rank() {
        return Err(Error::Index {
            what: "softmax axis",
            index: axis,
            len: x.rank(),
        });
    }
    if x.data.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric {
            op: "softmax",
            detail: "NaN input".into(),
        });
    }
    let mut out = x.data.clone();
    let (outer, n, inner) = axis_split(&x.shape, axis);
    kernels::softmax_strided(&mut out, outer, n, inner);
    Tensor::from_vec(&x.shape, out)
}

/// Layer normalisation over the last axis followed by `gamma ⊙ x + beta`.
pub fn layer_norm<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: S,
) -> Result<Tensor<S>> {
    let d = x.cols();
    if gamma.shape != [d] || beta.shape != [d] {
        return Err(Error::Dimension {
            op: "layer_norm",
            lhs: x.shape.clone(),
            rhs: gamma.shape.clone(),
        });
    }
    let mut out = vec![S::zero(); x.len()];
    let mut inv_std = vec![S::zero(); x.rows()];
    kernels::layer_norm_rows(&x.data, &mut out, &mut inv_std, d, eps);
    for row in out.chunks_mut(d) {
        for ((v, &g), &b) in row.iter_mut().zip(&gamma.data).zip(&beta.data) {
            *v = *v * g + b;
        }
    }
    Tensor::from_vec(&x.shape, out)
}

/// Exact GeLU, `x · Φ(x)`.
pub fn gelu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(kernels::gelu)
}

/// Splits `shape` around `axis` into (outer, extent, inner) counts.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_examples() {
        let a = Tensor::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
        assert_eq!(
            matmul(&a, &Tensor::zeros(&[2, 2])).unwrap(),
            Tensor::zeros(&[2, 2])
        );
        let b = Tensor::from_rows(&[&[5.0], &[6.0]]);
        assert_eq!(
            matmul(&a, &b).unwrap(),
            Tensor::from_rows(&[&[17.0], &[39.0]])
        );
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let c = Tensor::<f64>::from_rows(&[&[7.5, 7.5, 7.5]]);
        let s = softmax(&c, 1).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let s = softmax(&Tensor::<f64>::from_rows(&[&[0.0, 2f64.ln()]]), 1).unwrap();
        assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.data()[1] - 2.0 / 3.0).abs() < 1e-12);
        let s = softmax(&Tensor::<f64>::from_rows(&[&[1000.0, 0.0]]), 1).unwrap();
        assert_eq!(s.data()[0], 1.0);
        assert!(s.data()[1] < 1e-300 && s.all_finite());
    }

    #[test]
    fn softmax_rejects_nan_and_supports_inner_axis() {
        let x = Tensor::<f64>::from_rows(&[&[f64::NAN, 0.0]]);
        assert!(matches!(softmax(&x, 1), Err(Error::Numeric { .. })));
        let x = Tensor::<f64>::from_rows(&[&[1.0, 5.0], &[3.0, -2.0], &[0.5, 0.0]]);
        let s = softmax(&x, 0).unwrap();
        for j in 0..2 {
            let col: f64 = (0..3).map(|i| s.get(&[i, j])).sum();
            assert!((col - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let one = Tensor::<f64>::ones(&[2]);
        let zero = Tensor::<f64>::zeros(&[2]);
        let c = Tensor::from_rows(&[&[3.0, 3.0]]);
        assert_eq!(layer_norm(&c, &one, &zero, 1e-6).unwrap().max_abs(), 0.0);
        let x = Tensor::from_rows(&[&[1.0, -1.0]]);
        let y = layer_norm(&x, &one, &zero, 1e-6).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-6);
        let x = Tensor::from_rows(&[&[0.0, 2.0]]);
        let y = layer_norm(&x, &Tensor::full(&[2], 2.0), &one, 1e-6).unwrap();
        assert!(y.max_abs_diff(&Tensor::from_rows(&[&[-1.0, 3.0]])) < 1e-5);
    }

    #[test]
    fn gelu_examples() {
        let x = Tensor::<f64>::from_rows(&[&[0.0, 10.0, 1.0]]);
        let y = gelu(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 10.0).abs() < 1e-6);
        // 0.5 * (1 + erf(1/sqrt 2)) from a 40-term Taylor series of erf.
        let z = std::f64::consts::FRAC_1_SQRT_2;
        let mut erf = 0.0;
        let mut fact = 1.0;
        for n in 0..40 {
            if n > 0 {
                fact *= n as f64;
            }
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            erf += sign * z.powi(2 * n + 1) / (fact * (2 * n + 1) as f64);
        }
        erf *= 2.0 / std::f64::consts::PI.sqrt();
        let oracle = 0.5 * (1.0 + erf);
        assert!((y.data()[2] - oracle).abs() < 1e-12);
        assert!((y.data()[2] - 0.8413447).abs() < 1e-7);
    }

    #[test]
    fn tensor_rejects_zero_extent() {
        assert!(Tensor::<f32>::from_vec(&[0, 3], vec![]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![0.0; 3]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn matmul_is_associative(m in 1usize..6, k in 1usize..6, l in 1usize..6, n in 1usize..6, seed: u64) {
            let mut rng = Rng::new(seed);
            let a: Tensor<f64> = rng.gaussian_tensor(&[m, k], 0.0, 1.0);
            let b: Tensor<f64> = rng.gaussian_tensor(&[k, l], 0.0, 1.0);
            let c: Tensor<f64> = rng.gaussian_tensor(&[l, n], 0.0, 1.0);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            proptest::prop_assert!(left.max_abs_diff(&right) <= 1e-8);
        }

        #[test]
        fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..30, scale in 1e-3f64..1e3, seed: u64) {
            let x: Tensor<f64> = Rng::new(seed).gaussian_tensor(&[rows, cols], 0.0, scale);
            let s = softmax(&x, 1).unwrap();
            for r in 0..rows {
                let row = s.row(r);
                proptest::prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
                proptest::prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
            // Invariant to adding a constant per row.
            let shifted = softmax(&x.map(|v| v + 7.5), 1).unwrap();
            proptest::prop_assert!(s.max_abs_diff(&shifted) <= 1e-9);
        }
    }
}
