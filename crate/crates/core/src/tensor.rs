//! Dense row-major tensors over `f32`/`f64`.

use std::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type tag, also used as the on-disk dtype code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

/// Scalar types a [`Tensor`] can hold.
pub trait Real: Float + Default + fmt::Debug + fmt::Display + Send + Sync + 'static {
    const DTYPE: DType;

    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a·b + beta * c` for strided row/column layouts.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n` buffers.
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
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    fn of_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

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
    ) {
        // SAFETY: forwarded caller contract.
        unsafe { matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    fn of_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

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
    ) {
        // SAFETY: forwarded caller contract.
        unsafe { matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
    }
}

/// Row-major matrix product on flat slices: `c = op(a)·op(b) + beta·c`.
///
/// `a` is stored as `m×k` (or `k×m` when `trans_a`), `b` as `k×n` (or `n×k`
/// when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: out length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above match the strides chosen.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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
        )
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .field("len", &self.data.len())
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.contains(&0) {
        return Err(Error::shape(format!("extents must be positive, got {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = check_shape(shape).expect("valid shape");
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn from_f64_slice(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| T::of_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        self.clone().into_reshape(shape)
    }

    pub fn into_reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64()).sum()
    }

    #[allow(clippy::eq_op)]
    pub fn is_finite(&self) -> bool {
        // x - x is NaN exactly for non-finite x; branch-free chunks vectorize
        self.data.chunks(64).all(|c| c.iter().fold(T::zero(), |acc, &x| acc + (x - x)) == T::zero())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of_f64(x.as_f64())).collect(),
        }
    }

    /// Matrix transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Ok(Tensor { shape: vec![c, r], data: out })
    }
}

/// Elementwise operations understood by [`elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Max,
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
}

impl ElemOp {
    pub fn is_binary(self) -> bool {
        matches!(self, ElemOp::Add | ElemOp::Sub | ElemOp::Mul | ElemOp::Max)
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn unary<T: Real>(op: ElemOp, x: T) -> T {
    match op {
        ElemOp::Relu => {
            if x > T::zero() {
                x
            } else {
                T::zero()
            }
        }
        ElemOp::Sigmoid => sigmoid(x),
        ElemOp::Tanh => x.tanh(),
        ElemOp::Exp => x.exp(),
        ElemOp::Log => x.ln(),
        _ => unreachable!("binary op in unary path"),
    }
}

fn binary<T: Real>(op: ElemOp, a: T, b: T) -> T {
    match op {
        ElemOp::Add => a + b,
        ElemOp::Sub => a - b,
        ElemOp::Mul => a * b,
        ElemOp::Max => a.max(b),
        _ => unreachable!("unary op in binary path"),
    }
}

/// Applies `op` elementwise.
///
/// Binary operations accept identical shapes, or shapes that differ only in a
/// trailing axis of extent 1 on either side (that axis is broadcast).
pub fn elementwise<T: Real>(op: ElemOp, a: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    if !op.is_binary() {
        if b.is_some() {
            return Err(Error::shape(format!("{op:?} is unary but got two operands")));
        }
        return Ok(a.map(|x| unary(op, x)));
    }
    let b = b.ok_or_else(|| Error::shape(format!("{op:?} needs two operands")))?;
    if a.shape == b.shape {
        return a.zip_map(b, |x, y| binary(op, x, y));
    }
    let (ra, rb) = (a.shape.len(), b.shape.len());
    let leading_equal = ra == rb && ra > 0 && a.shape[..ra - 1] == b.shape[..rb - 1];
    if !leading_equal {
        return Err(Error::shape(format!(
            "cannot broadcast {:?} with {:?}",
            a.shape, b.shape
        )));
    }
    let (la, lb) = (a.shape[ra - 1], b.shape[rb - 1]);
    let rows = a.len() / la;
    match (la, lb) {
        (_, 1) => {
            let mut out = Vec::with_capacity(a.len());
            for r in 0..rows {
                let y = b.data[r];
                out.extend(a.data[r * la..(r + 1) * la].iter().map(|&x| binary(op, x, y)));
            }
            Tensor::new(&a.shape, out)
        }
        (1, _) => {
            let mut out = Vec::with_capacity(b.len());
            for r in 0..rows {
                let x = a.data[r];
                out.extend(b.data[r * lb..(r + 1) * lb].iter().map(|&y| binary(op, x, y)));
            }
            Tensor::new(&b.shape, out)
        }
        _ => Err(Error::shape(format!(
            "cannot broadcast {:?} with {:?}",
            a.shape, b.shape
        ))),
    }
}

/// Matrix product of `m×k` and `k×n` tensors.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(format!("matmul inner dims {k} vs {k2}")));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(false, false, m, k, n, &a.data, &b.data, T::zero(), &mut out);
    Tensor::new(&[m, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64_slice(shape, v).unwrap()
    }

    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (m, k) = a.dims2().unwrap();
        let (_, n) = b.dims2().unwrap();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn elementwise_examples() {
        let a = t(&[3], &[1.0, 2.0, 3.0]);
        let b = t(&[3], &[4.0, 5.0, 6.0]);
        assert_eq!(elementwise(ElemOp::Mul, &a, Some(&b)).unwrap().data(), &[4.0, 10.0, 18.0]);
        let r = elementwise(ElemOp::Relu, &t(&[3], &[-1.0, 0.0, 2.0]), None).unwrap();
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
        let s = elementwise(ElemOp::Sigmoid, &t(&[1], &[0.0]), None).unwrap();
        assert_eq!(s.data(), &[0.5]);
    }

    #[test]
    fn elementwise_broadcasts_trailing_one() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let col = t(&[2, 1], &[10.0, 20.0]);
        let out = elementwise(ElemOp::Add, &a, Some(&col)).unwrap();
        assert_eq!(out.data(), &[11.0, 12.0, 13.0, 24.0, 25.0, 26.0]);
        let out = elementwise(ElemOp::Sub, &col, Some(&a)).unwrap();
        assert_eq!(out.data(), &[9.0, 8.0, 7.0, 16.0, 15.0, 14.0]);
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[3, 2], &[0.0; 6]);
        assert!(matches!(elementwise(ElemOp::Add, &a, Some(&b)), Err(Error::Shape(_))));
        assert!(matches!(elementwise(ElemOp::Add, &a, None), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_examples() {
        let i2 = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&i2, &m).unwrap(), m);
        let dot = matmul(&t(&[1, 2], &[1.0, 2.0]), &t(&[2, 1], &[3.0, 4.0])).unwrap();
        assert_eq!(dot.data(), &[11.0]);
        assert!(matches!(matmul(&m, &t(&[3, 1], &[0.0; 3])), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_matches_loop_oracle() {
        let mut rng = Rng::new(11);
        let a = rng.normal::<f64>(&[5, 7], 0.0, 1.0).unwrap();
        let b = rng.normal::<f64>(&[7, 3], 0.0, 1.0).unwrap();
        let got = matmul(&a, &b).unwrap();
        for (g, e) in got.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }

    #[test]
    fn transposed_gemm_variants() {
        let mut rng = Rng::new(3);
        let a = rng.normal::<f64>(&[4, 6], 0.0, 1.0).unwrap();
        let b = rng.normal::<f64>(&[6, 5], 0.0, 1.0).unwrap();
        let expect = naive_matmul(&a, &b);
        let at = a.transpose().unwrap();
        let bt = b.transpose().unwrap();
        let mut out = vec![0.0; 20];
        gemm(true, true, 4, 6, 5, at.data(), bt.data(), 0.0, &mut out);
        for (g, e) in out.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn matmul_oracle_random_shapes(m in 1usize..=16, k in 1usize..=16, n in 1usize..=16, seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let a = rng.normal::<f64>(&[m, k], 0.0, 1.0).unwrap();
            let b = rng.normal::<f64>(&[k, n], 0.0, 1.0).unwrap();
            let got = matmul(&a, &b).unwrap();
            for (g, e) in got.data().iter().zip(naive_matmul(&a, &b)) {
                let scale = e.abs().max(1e-300);
                prop_assert!((g - e).abs() / scale <= 1e-12 || (g - e).abs() <= 1e-13);
            }
        }

        #[test]
        fn reshape_round_trip(r in 1usize..8, c in 1usize..8, seed in 0u64..100) {
            let mut rng = Rng::new(seed);
            let x = rng.normal::<f64>(&[r, c], 0.0, 1.0).unwrap();
            let flat = x.reshape(&[r * c]).unwrap();
            let back = flat.reshape(&[r, c]).unwrap();
            prop_assert_eq!(back, x.clone());
            let other = x.reshape(&[c, 1, r]).unwrap();
            prop_assert_eq!(other.data(), x.data());
        }
    }
}
