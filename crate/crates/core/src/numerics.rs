//! Dense vector/matrix kernels.
//!
//! Storage is row-major and every reduction sums left to right, so results are
//! bit-reproducible for identical inputs. The public operations check shapes and
//! return [`Error::DimensionMismatch`]; the slice kernels at the bottom of the
//! file are the unchecked hot-path versions used by the recurrent model.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Vector<T> {
    elements: Vec<T>,
}

impl<T: Scalar> Vector<T> {
    pub fn new(elements: Vec<T>) -> Self {
        Self { elements }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            elements: vec![T::zero(); len],
        }
    }

    pub fn from_f64(values: &[f64]) -> Self {
        Self::new(values.iter().map(|&x| T::of(x)).collect())
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.elements
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.elements
    }

    pub fn into_inner(self) -> Vec<T> {
        self.elements
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.elements.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.elements.iter().all(|x| x.is_finite())
    }

    /// Sum of squares, accumulated left to right.
    pub fn norm_squared(&self) -> T {
        sum_squares(&self.elements)
    }

    pub fn scale(&mut self, factor: T) {
        for x in &mut self.elements {
            *x *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Vector<T>) -> Result<()> {
        check_len("add_assign", self.len(), other.len())?;
        axpy(T::one(), &other.elements, &mut self.elements);
        Ok(())
    }
}

impl<T> Index<usize> for Vector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.elements[i]
    }
}

impl<T> IndexMut<usize> for Vector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.elements[i]
    }
}

impl<T: Scalar> From<Vec<T>> for Vector<T> {
    fn from(elements: Vec<T>) -> Self {
        Self::new(elements)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    elements: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, elements: Vec<T>) -> Result<Self> {
        if rows * cols != elements.len() {
            return Err(Error::dims(
                "Matrix::new",
                format!("{rows}x{cols} = {} elements", rows * cols),
                elements.len(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            elements,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            elements: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.elements[i * n + i] = T::one();
        }
        m
    }

    /// Builds a matrix from nested `f64` rows; every row must have the same length.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut elements = Vec::with_capacity(rows.len() * cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::dims(
                    "Matrix::from_rows",
                    format!("{cols} columns"),
                    format!("{} in row {r}", row.len()),
                ));
            }
            elements.extend(row.iter().map(|&x| T::of(x)));
        }
        Self::new(rows.len(), cols, elements)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.elements[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.elements[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.elements[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.elements[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.elements
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.elements
    }

    pub fn norm_squared(&self) -> T {
        sum_squares(&self.elements)
    }

    pub fn scale(&mut self, factor: T) {
        for x in &mut self.elements {
            *x *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dims(
                "Matrix::add_assign",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        axpy(T::one(), &other.elements, &mut self.elements);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.elements.iter().all(|x| x.is_finite())
    }
}

pub fn matvec<T: Scalar>(m: &Matrix<T>, v: &Vector<T>) -> Result<Vector<T>> {
    if m.cols != v.len() {
        return Err(Error::dims(
            "matvec",
            format!("vector of length {} for a {}x{} matrix", m.cols, m.rows, m.cols),
            format!("length {}", v.len()),
        ));
    }
    let mut out = vec![T::zero(); m.rows];
    gemv_acc(m, v.as_slice(), &mut out);
    Ok(Vector::new(out))
}

pub fn dot<T: Scalar>(a: &Vector<T>, b: &Vector<T>) -> Result<T> {
    check_len("dot", a.len(), b.len())?;
    Ok(dot_slices(a.as_slice(), b.as_slice()))
}

/// Pointwise operation applied by [`elementwise`].
#[derive(Clone, Copy, Debug)]
pub enum Elementwise<'a, T> {
    Sigmoid,
    Tanh,
    Product(&'a Vector<T>),
    Sum(&'a Vector<T>),
}

pub fn elementwise<T: Scalar>(v: &Vector<T>, op: Elementwise<'_, T>) -> Result<Vector<T>> {
    let out = match op {
        Elementwise::Sigmoid => v.iter().map(|&x| sigmoid(x)).collect(),
        Elementwise::Tanh => v.iter().map(|&x| x.tanh()).collect(),
        Elementwise::Product(w) => {
            check_len("elementwise product", v.len(), w.len())?;
            v.iter().zip(w.iter()).map(|(&a, &b)| a * b).collect()
        }
        Elementwise::Sum(w) => {
            check_len("elementwise sum", v.len(), w.len())?;
            v.iter().zip(w.iter()).map(|(&a, &b)| a + b).collect()
        }
    };
    Ok(Vector::new(out))
}

/// Logistic function, evaluated on the branch that cannot overflow.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let z = x.exp();
        z / (T::one() + z)
    }
}

pub fn log_sum_exp<T: Scalar>(v: &Vector<T>) -> Result<T> {
    if v.is_empty() {
        return Err(Error::Empty("log_sum_exp"));
    }
    Ok(log_sum_exp_slice(v.as_slice()))
}

pub fn softmax<T: Scalar>(v: &Vector<T>) -> Result<Vector<T>> {
    if v.is_empty() {
        return Err(Error::Empty("softmax"));
    }
    let lse = log_sum_exp_slice(v.as_slice());
    Ok(Vector::new(v.iter().map(|&x| (x - lse).exp()).collect()))
}

pub fn log_softmax<T: Scalar>(v: &Vector<T>) -> Result<Vector<T>> {
    if v.is_empty() {
        return Err(Error::Empty("log_softmax"));
    }
    let lse = log_sum_exp_slice(v.as_slice());
    Ok(Vector::new(v.iter().map(|&x| x - lse).collect()))
}

fn check_len(op: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::dims(op, format!("length {expected}"), format!("length {actual}")));
    }
    Ok(())
}

// Unchecked kernels. Callers guarantee shapes.

pub(crate) fn log_sum_exp_slice<T: Scalar>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let mut acc = T::zero();
    for &x in v {
        acc += (x - max).exp();
    }
    max + acc.ln()
}

pub(crate) fn dot_slices<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub(crate) fn sum_squares<T: Scalar>(a: &[T]) -> T {
    let mut acc = T::zero();
    for &x in a {
        acc += x * x;
    }
    acc
}

/// `y += alpha * x`
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out += m * x`
pub(crate) fn gemv_acc<T: Scalar>(m: &Matrix<T>, x: &[T], out: &mut [T]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot_slices(m.row(r), x);
    }
}

/// `out += m^T * x`
pub(crate) fn gemv_t_acc<T: Scalar>(m: &Matrix<T>, x: &[T], out: &mut [T]) {
    for (r, &xr) in x.iter().enumerate() {
        if xr != T::zero() {
            axpy(xr, m.row(r), out);
        }
    }
}

/// `m += a * b^T`
pub(crate) fn outer_acc<T: Scalar>(m: &mut Matrix<T>, a: &[T], b: &[T]) {
    let cols = m.cols;
    for (r, &ar) in a.iter().enumerate() {
        if ar != T::zero() {
            axpy(ar, b, &mut m.elements[r * cols..(r + 1) * cols]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector<f64> {
        Vector::from_f64(x)
    }

    #[test]
    fn matvec_examples() {
        let id = Matrix::<f64>::identity(3);
        assert_eq!(matvec(&id, &v(&[1., 2., 3.])).unwrap(), v(&[1., 2., 3.]));
        let z = Matrix::<f64>::zeros(2, 2);
        assert_eq!(matvec(&z, &v(&[5., 7.])).unwrap(), v(&[0., 0.]));
        let m = Matrix::<f64>::from_rows(&[&[1., 2.], &[3., 4.]]).unwrap();
        assert_eq!(matvec(&m, &v(&[1., 1.])).unwrap(), v(&[3., 7.]));
    }

    #[test]
    fn matvec_rejects_mismatch_with_dimensions() {
        let m = Matrix::<f64>::zeros(2, 3);
        let err = matvec(&m, &v(&[1., 2.])).unwrap_err().to_string();
        assert!(err.contains("2x3"), "{err}");
        assert!(err.contains("length 2"), "{err}");
    }

    #[test]
    fn matrix_new_checks_element_count() {
        assert!(Matrix::<f64>::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Matrix::<f64>::from_rows(&[&[1.0], &[1.0, 2.0]]).is_err());
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&v(&[0., 0.]), &v(&[4., -9.])).unwrap(), 0.0);
        assert_eq!(dot(&v(&[3., 4.]), &v(&[3., 4.])).unwrap(), 25.0);
        assert!(dot(&v(&[1.]), &v(&[1., 2.])).is_err());
    }

    #[test]
    fn elementwise_examples() {
        let s = elementwise(&v(&[0., 0.]), Elementwise::Sigmoid).unwrap();
        assert_eq!(s, v(&[0.5, 0.5]));
        assert_eq!(elementwise(&v(&[0.]), Elementwise::Tanh).unwrap(), v(&[0.]));
        let s = elementwise(&v(&[3f64.ln()]), Elementwise::Sigmoid).unwrap();
        assert_abs_diff_eq!(s[0], 0.75, epsilon = 1e-15);
        let a = v(&[1., 2.]);
        let b = v(&[3., 4.]);
        assert_eq!(elementwise(&a, Elementwise::Product(&b)).unwrap(), v(&[3., 8.]));
        assert_eq!(elementwise(&a, Elementwise::Sum(&b)).unwrap(), v(&[4., 6.]));
        assert!(elementwise(&a, Elementwise::Sum(&v(&[1.]))).is_err());
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert!(sigmoid(-1000.0f32).is_finite());
    }

    #[test]
    fn log_sum_exp_examples() {
        assert_abs_diff_eq!(log_sum_exp(&v(&[0., 0.])).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(log_sum_exp(&v(&[-3.25])).unwrap(), -3.25);
        assert_abs_diff_eq!(
            log_sum_exp(&v(&[1000., 1000.])).unwrap(),
            1000.0 + 2f64.ln(),
            epsilon = 1e-12
        );
        assert!(matches!(log_sum_exp(&v(&[])), Err(Error::Empty(_))));
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&v(&[0., 0., 0.])).unwrap();
        for &p in s.iter() {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
        let s = softmax(&v(&[3f64.ln(), 0.])).unwrap();
        assert_abs_diff_eq!(s[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], 0.25, epsilon = 1e-15);
        assert!(softmax(&v(&[])).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let s = softmax(&Vector::<f32>::from_f64(&[3f64.ln(), 0.])).unwrap();
        assert!((s[0] - 0.75).abs() < 1e-6);
    }

    fn finite_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1000.0f64..1000.0, 1..max_len)
    }

    proptest! {
        #[test]
        fn softmax_normalizes(xs in finite_vec(40)) {
            let s = softmax(&v(&xs)).unwrap();
            let total: f64 = s.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(s.is_finite());
        }

        #[test]
        fn softmax_shift_invariant(xs in finite_vec(20), c in -500.0f64..500.0) {
            let a = softmax(&v(&xs)).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let b = softmax(&v(&shifted)).unwrap();
            for (p, q) in a.iter().zip(b.iter()) {
                prop_assert!((p - q).abs() <= 1e-10);
            }
        }

        #[test]
        fn log_sum_exp_shift_identity(xs in finite_vec(20), c in -500.0f64..500.0) {
            let a = log_sum_exp(&v(&xs)).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let b = log_sum_exp(&v(&shifted)).unwrap();
            prop_assert!((b - (a + c)).abs() <= 1e-10 * (1.0 + a.abs().max(b.abs())));
            prop_assert!(a.is_finite());
        }

        #[test]
        fn dot_symmetric(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..16)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert_eq!(dot(&v(&a), &v(&b)).unwrap(), dot(&v(&b), &v(&a)).unwrap());
        }

        #[test]
        fn matvec_linear(
            rows in 1usize..5,
            cols in 1usize..5,
            seed in prop::collection::vec(-1.0f64..1.0, 25 + 10),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
        ) {
            let m = Matrix::<f64>::new(rows, cols, seed[..rows * cols].to_vec()).unwrap();
            let u = v(&seed[25..25 + cols]);
            let w = v(&seed[30..30 + cols]);
            let combo: Vec<f64> = u.iter().zip(w.iter()).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = matvec(&m, &v(&combo)).unwrap();
            let mu = matvec(&m, &u).unwrap();
            let mw = matvec(&m, &w).unwrap();
            for r in 0..rows {
                prop_assert!((lhs[r] - (alpha * mu[r] + beta * mw[r])).abs() <= 1e-10);
            }
        }

        #[test]
        fn elementwise_stays_finite(xs in finite_vec(20)) {
            prop_assert!(elementwise(&v(&xs), Elementwise::Sigmoid).unwrap().is_finite());
            prop_assert!(elementwise(&v(&xs), Elementwise::Tanh).unwrap().is_finite());
        }
    }
}
