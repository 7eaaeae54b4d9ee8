//! Dense row-major tensors and the handful of kernels every layer needs.
//!
//! Everything is generic over [`Scalar`] so the same layer code runs in
//! 32-bit for training and in 64-bit for finite-difference checks.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating point type a model can be evaluated in.
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Raw strided GEMM: `C = alpha * A * B + beta * C`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing matrices of
    /// the stated sizes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(x: f64) -> f32 {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(x: f64) -> f64 {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Shorthand for converting literals.
#[inline]
pub fn lit<F: Scalar>(x: f64) -> F {
    F::from_f64(x)
}

/// Whether an operand of [`gemm`] is used as stored or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// `C[m×n] = alpha * op(A) * op(B) + beta * C` over row-major slices.
///
/// With `Trans::No`, `a` holds an `m×k` matrix; with `Trans::Yes` it holds
/// the `k×m` matrix whose transpose is used. Likewise for `b` (`k×n`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<F: Scalar>(
    ta: Trans,
    tb: Trans,
    m: usize,
    n: usize,
    k: usize,
    alpha: F,
    a: &[F],
    b: &[F],
    beta: F,
    c: &mut [F],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        // matrixmultiply handles k == 0, but be explicit about beta.
        for v in c.iter_mut() {
            *v = if beta == F::zero() { F::zero() } else { *v * beta };
        }
        return;
    }
    let (rsa, csa) = match ta {
        Trans::No => (k as isize, 1),
        Trans::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Trans::No => (n as isize, 1),
        Trans::Yes => (1, k as isize),
    };
    // SAFETY: lengths were checked above and `c` is uniquely borrowed.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Debug> Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, F::zero())
    }

    pub fn filled(shape: &[usize], value: F) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a matrix from nested rows. Panics on ragged rows; meant for tests
    /// and small literals.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend(r.iter().map(|&x| F::from_f64(x)));
        }
        Tensor {
            shape: vec![rows.len(), cols],
            data,
        }
    }

    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.iter().map(|&x| F::from_f64(x)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    /// Number of rows when viewed as a matrix (first axis).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Row width when viewed as a matrix (product of trailing axes).
    pub fn cols(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[F] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, value: F) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor<F>) {
        assert_eq!(self.data.len(), other.data.len(), "add_assign length");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: F) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn sum(&self) -> F {
        self.data.iter().fold(F::zero(), |acc, &v| acc + v)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.as_f64())).collect(),
        }
    }

    /// Stacks equal-width rows into a matrix.
    pub fn stack_rows(rows: &[&[F]], width: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.len() != width {
                return Err(Error::dim(format!("row of width {} != {}", r.len(), width)));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor {
            shape: vec![rows.len(), width],
            data,
        })
    }
}

#[inline]
pub(crate) fn debug_check_finite<F: Scalar>(what: &str, values: &[F]) {
    debug_assert!(
        values.iter().all(|v| v.is_finite()),
        "non-finite value produced by {what}"
    );
}

/// Standard matrix product of two 2-D tensors.
pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::dim("matmul expects 2-D operands"));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner dimensions {m}x{k} · {k2}x{n}"
        )));
    }
    let mut c = Tensor::zeros(&[m, n]);
    gemm(Trans::No, Trans::No, m, n, k, F::one(), &a.data, &b.data, F::zero(), &mut c.data);
    debug_check_finite("matmul", &c.data);
    Ok(c)
}

/// Gradients of `C = A·B` given `dC`: returns `(dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward<F: Scalar>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    dc: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    if dc.shape != [m, n] {
        return Err(Error::dim("matmul_backward: dC shape"));
    }
    let mut da = Tensor::zeros(&[m, k]);
    let mut db = Tensor::zeros(&[k, n]);
    gemm(Trans::No, Trans::Yes, m, k, n, F::one(), &dc.data, &b.data, F::zero(), &mut da.data);
    gemm(Trans::Yes, Trans::No, k, n, m, F::one(), &a.data, &dc.data, F::zero(), &mut db.data);
    Ok((da, db))
}

/// Numerically stable softmax of one row into `probs`; returns `-ln probs[gold]`.
pub(crate) fn softmax_xent_row<F: Scalar>(logits: &[F], gold: usize, probs: &mut [F]) -> F {
    let max = logits.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let mut total = F::zero();
    for (p, &l) in probs.iter_mut().zip(logits) {
        *p = (l - max).exp();
        total += *p;
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    // log-sum-exp form keeps precision when probs[gold] underflows
    total.ln() + max - logits[gold]
}

/// Softmax over a logit vector plus the negative log-likelihood of `gold`.
///
/// The gradient of the loss w.r.t. the logits is `probs - onehot(gold)`.
pub fn softmax_cross_entropy<F: Scalar>(logits: &Tensor<F>, gold: usize) -> Result<(F, Tensor<F>)> {
    let k = logits.len();
    if gold >= k {
        return Err(Error::Index { index: gold, size: k });
    }
    let mut probs = Tensor::zeros(&[k]);
    let loss = softmax_xent_row(&logits.data, gold, &mut probs.data);
    Ok((loss, probs))
}

/// Row-wise softmax of a matrix (used at inference).
pub fn softmax_rows<F: Scalar>(logits: &Tensor<F>) -> Tensor<F> {
    let cols = logits.cols();
    let mut out = Tensor::zeros(logits.shape());
    for (src, dst) in logits.data.chunks(cols).zip(out.data.chunks_mut(cols)) {
        softmax_xent_row(src, 0, dst);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        Tensor::from_vec(&[m, n], out).unwrap()
    }

    #[test]
    fn identity_times_column() {
        let i2 = Tensor::<f64>::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let x = Tensor::from_rows(&[&[3.0], &[4.0]]);
        assert_eq!(matmul(&i2, &x).unwrap(), x);
    }

    #[test]
    fn small_product_matches_loop() {
        let a = Tensor::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Tensor::from_rows(&[&[1.0], &[1.0]]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c, naive(&a, &b));
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn zero_lhs_gives_zero() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::filled(&[3, 5], 2.5);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 5]);
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inner_mismatch_is_dimension_error() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn transposed_gemm_variants() {
        let a = Tensor::<f64>::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = Tensor::from_rows(&[&[1.0, -1.0], &[0.5, 2.0], &[3.0, 0.0]]);
        let expect = naive(&a, &b);
        // Aᵀ stored, Bᵀ stored
        let at = Tensor::<f64>::from_rows(&[&[1.0, 4.0], &[2.0, 5.0], &[3.0, 6.0]]);
        let bt = Tensor::<f64>::from_rows(&[&[1.0, 0.5, 3.0], &[-1.0, 2.0, 0.0]]);
        let mut c = vec![0.0; 4];
        gemm(Trans::Yes, Trans::Yes, 2, 2, 3, 1.0, at.data(), bt.data(), 0.0, &mut c);
        assert_eq!(c, expect.data());
    }

    #[test]
    fn uniform_logits() {
        let (loss, probs) = softmax_cross_entropy(&Tensor::<f64>::vector(&[0.3; 4]), 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!(probs.data().iter().all(|&p| (p - 0.25).abs() < 1e-12));

        let (loss, probs) = softmax_cross_entropy(&Tensor::<f64>::vector(&[0.0, 0.0]), 0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        assert_eq!(probs.data(), &[0.5, 0.5]);
    }

    #[test]
    fn three_way_logits() {
        // -ln(e^2 / (e^2 + e + 1)) evaluated in extended precision
        let (loss, _) = softmax_cross_entropy(&Tensor::<f64>::vector(&[2.0, 1.0, 0.0]), 0).unwrap();
        assert!((loss - 0.407_605_964_444_380).abs() < 1e-12);
    }

    #[test]
    fn gold_out_of_range() {
        let err = softmax_cross_entropy(&Tensor::<f32>::vector(&[1.0, 2.0]), 2).unwrap_err();
        assert!(matches!(err, Error::Index { index: 2, size: 2 }));
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let (loss, probs) =
            softmax_cross_entropy(&Tensor::<f32>::vector(&[1000.0, -1000.0, 0.0]), 1).unwrap();
        assert!(loss.is_finite());
        assert!(probs.all_finite());
    }

    proptest::proptest! {
        #[test]
        fn softmax_is_a_distribution(logits in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let (_, probs) = softmax_cross_entropy(&Tensor::<f64>::vector(&logits), 0).unwrap();
            let total: f64 = probs.data().iter().sum();
            proptest::prop_assert!((total - 1.0).abs() < 1e-6);
            proptest::prop_assert!(probs.data().iter().all(|&p| p >= 0.0));
        }
    }
}
