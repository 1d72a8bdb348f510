//! Dense real and complex matrices sized for phase spaces of a few dozen
//! states: products, LU factorization, solves, determinants and
//! Perron-Frobenius eigenpairs.

use std::fmt::Debug;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64;
use num_traits::NumAssign;

use crate::error::{Error, Result};
use crate::model::GeometricTail;

/// Pivots at or below this multiple of `‖m‖∞` make a solve fail.
pub const PIVOT_RELATIVE_THRESHOLD: f64 = 1e-13;
/// Iteration budget of the Perron solver.
pub const PERRON_MAX_ITERATIONS: usize = 100_000;
/// Default convergence tolerance of the Perron solver.
pub const PERRON_DEFAULT_TOL: f64 = 1e-13;

/// Entry type of a [`Matrix`]: `f64` or `Complex64`.
pub trait Scalar: Copy + Debug + PartialEq + NumAssign + Neg<Output = Self> + Send + Sync + 'static {
    fn modulus(self) -> f64;
    fn from_real(x: f64) -> Self;
    fn is_finite_value(self) -> bool;
}

impl Scalar for f64 {
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for Complex64 {
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn is_finite_value(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub type RealMatrix = Matrix<f64>;
pub type ComplexMatrix = Matrix<Complex64>;

impl<T: Scalar> Matrix<T> {
    /// Builds a matrix from row-major entries.
    ///
    /// # Panics
    /// If `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from nested rows; `None` if the rows are ragged or empty.
    pub fn from_rows(rows: &[Vec<T>]) -> Option<Self> {
        let r = rows.len();
        let c = rows.first()?.len();
        if c == 0 || rows.iter().any(|row| row.len() != c) {
            return None;
        }
        Some(Matrix {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    /// Diagonal matrix with the given entries.
    pub fn diagonal(entries: &[T]) -> Self {
        let n = entries.len();
        Self::from_fn(n, n, |i, j| if i == j { entries[i] } else { T::zero() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.modulus()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.modulus()).fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).modulus())
            .fold(0.0, f64::max)
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows)
            .map(|i| self.row(i).iter().fold(T::zero(), |acc, &x| acc + x))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite_value())
    }

    /// `self + s·I`.
    pub fn add_diagonal(&self, s: T) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            out[(i, i)] += s;
        }
        out
    }
}

impl RealMatrix {
    pub fn to_complex(&self) -> ComplexMatrix {
        self.map(|x| Complex64::new(x, 0.0))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&x| x >= 0.0)
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl ComplexMatrix {
    /// Entrywise real part.
    pub fn re(&self) -> RealMatrix {
        self.map(|z| z.re)
    }

    /// Largest modulus of an imaginary part.
    pub fn max_imag(&self) -> f64 {
        self.data.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Scalar> Mul for &Matrix<T> {
    type Output = Matrix<T>;
    fn mul(self, rhs: &Matrix<T>) -> Matrix<T> {
        self.matmul(rhs)
    }
}

impl<T: Scalar> Add for &Matrix<T> {
    type Output = Matrix<T>;
    fn add(self, rhs: &Matrix<T>) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<T: Scalar> Sub for &Matrix<T> {
    type Output = Matrix<T>;
    fn sub(self, rhs: &Matrix<T>) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}

/// Row vector times matrix.
pub fn vec_mat<T: Scalar>(x: &[T], m: &Matrix<T>) -> Vec<T> {
    assert_eq!(x.len(), m.rows, "vec_mat dimension mismatch");
    let mut out = vec![T::zero(); m.cols];
    for (i, &xi) in x.iter().enumerate() {
        if xi == T::zero() {
            continue;
        }
        for (o, &mij) in out.iter_mut().zip(m.row(i)) {
            *o += xi * mij;
        }
    }
    out
}

/// Matrix times column vector.
pub fn mat_vec<T: Scalar>(m: &Matrix<T>, v: &[T]) -> Vec<T> {
    assert_eq!(v.len(), m.cols, "mat_vec dimension mismatch");
    (0..m.rows).map(|i| dot(m.row(i), v)).collect()
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Column vector times row vector.
pub fn outer<T: Scalar>(col: &[T], row: &[T]) -> Matrix<T> {
    Matrix::from_fn(col.len(), row.len(), |i, j| col[i] * row[j])
}

/// `exp(2πi·num/den)`, exact at multiples of a quarter turn.
pub fn turn(num: i64, den: u64) -> Complex64 {
    let den_i = den as i64;
    let n = num.rem_euclid(den_i);
    if (4 * n) % den_i == 0 {
        return match 4 * n / den_i {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        };
    }
    let angle = 2.0 * std::f64::consts::PI * (n as f64) / (den as f64);
    Complex64::new(angle.cos(), angle.sin())
}

/// Partially pivoted LU factorization `P·m = L·U`.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    factors: Matrix<T>,
    perm: Vec<usize>,
    swaps: usize,
}

impl<T: Scalar> Lu<T> {
    /// Factors a square matrix. Zero pivots are kept; [`Lu::det`] then
    /// returns zero and solves should be guarded by [`Lu::smallest_pivot`].
    pub fn factor(m: &Matrix<T>) -> Self {
        assert!(m.is_square(), "LU needs a square matrix");
        let n = m.rows;
        let mut a = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;
        for k in 0..n {
            let (p, best) =
                (k..n)
                    .map(|i| (i, a[(i, k)].modulus()))
                    .fold((k, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                swaps += 1;
            }
            if best == 0.0 {
                continue;
            }
            let pivot = a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / pivot;
                a[(i, k)] = f;
                if f == T::zero() {
                    continue;
                }
                for j in k + 1..n {
                    let u = a[(k, j)];
                    a[(i, j)] -= f * u;
                }
            }
        }
        Lu {
            factors: a,
            perm,
            swaps,
        }
    }

    pub fn det(&self) -> T {
        let n = self.factors.rows;
        let mut d = T::one();
        for i in 0..n {
            d *= self.factors[(i, i)];
        }
        if self.swaps % 2 == 1 {
            -d
        } else {
            d
        }
    }

    /// Index and modulus of the smallest pivot.
    pub fn smallest_pivot(&self) -> (usize, f64) {
        (0..self.factors.rows)
            .map(|i| (i, self.factors[(i, i)].modulus()))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc })
    }

    /// Solves `m·X = rhs` without any singularity guard.
    pub fn solve(&self, rhs: &Matrix<T>) -> Matrix<T> {
        let n = self.factors.rows;
        assert_eq!(rhs.rows, n, "solve dimension mismatch");
        let mut x = Matrix::from_fn(n, rhs.cols, |i, j| rhs[(self.perm[i], j)]);
        for c in 0..rhs.cols {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.factors[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in i + 1..n {
                    s -= self.factors[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.factors[(i, i)];
            }
        }
        x
    }
}

fn guarded_lu<T: Scalar>(m: &Matrix<T>) -> Result<Lu<T>> {
    let lu = Lu::factor(m);
    let threshold = PIVOT_RELATIVE_THRESHOLD * m.norm_inf();
    let (idx, pivot) = lu.smallest_pivot();
    // written so that NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(pivot > threshold) {
        return Err(Error::SingularMatrix { pivot_index: idx });
    }
    Ok(lu)
}

/// Determinant of a square complex matrix by partially pivoted LU.
pub fn lu_det_complex(m: &ComplexMatrix) -> Complex64 {
    Lu::factor(m).det()
}

/// Solves `m·X = rhs` for complex matrices.
pub fn solve_complex(m: &ComplexMatrix, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
    solve(m, rhs)
}

/// Solves `m·X = rhs`; fails when a pivot drops below
/// `PIVOT_RELATIVE_THRESHOLD·‖m‖∞`.
pub fn solve<T: Scalar>(m: &Matrix<T>, rhs: &Matrix<T>) -> Result<Matrix<T>> {
    Ok(guarded_lu(m)?.solve(rhs))
}

pub fn inverse<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    solve(m, &Matrix::identity(m.rows))
}

/// Solves the row system `y·m = x`.
pub fn solve_left<T: Scalar>(x: &[T], m: &Matrix<T>) -> Result<Vec<T>> {
    let rhs = Matrix::from_vec(x.len(), 1, x.to_vec());
    Ok(solve(&m.transpose(), &rhs)?.data)
}

/// Stationary row vector of a stochastic matrix with a single recurrent
/// class, from the bordered system `g(I − P) = 0`, `g·e = 1`.
pub fn stationary_vector(p: &RealMatrix) -> Result<Vec<f64>> {
    let n = p.rows;
    let mut m = (&Matrix::identity(n)) - p;
    for i in 0..n {
        m[(i, n - 1)] = 1.0;
    }
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    solve_left(&rhs, &m)
}

/// Perron-Frobenius eigenvalue with its left and right eigenvectors,
/// normalized so that `left·e = 1` and `left·right = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerronPair {
    pub value: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Lower and upper Collatz-Wielandt bounds of `m` at a nonnegative `v`.
fn collatz_bounds(m: &RealMatrix, v: &[f64]) -> (f64, f64) {
    let mv = mat_vec(m, v);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for (&num, &den) in mv.iter().zip(v) {
        if den > 0.0 {
            let q = num / den;
            lo = lo.min(q);
            hi = hi.max(q);
        }
    }
    (lo, hi)
}

fn normalize_sum(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

/// Right Perron vector of a nonnegative matrix whose row sums are at most 1.
///
/// A few shifted power steps (`m + I`, which defeats periodicity) give a
/// positive start; inverse iteration at a shift just above the upper
/// Collatz-Wielandt bound then converges in a handful of steps. The shifted
/// matrix is a nonsingular M-matrix, so iterates stay nonnegative.
fn right_perron_vector(m: &RealMatrix, tol: f64) -> Result<(f64, Vec<f64>)> {
    let n = m.rows;
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..20 {
        let mut w = mat_vec(m, &v);
        w.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
        normalize_sum(&mut w);
        v = w;
    }
    let mut previous = f64::NAN;
    let mut stable = 0;
    for _ in 0..PERRON_MAX_ITERATIONS {
        let (lo, hi) = collatz_bounds(m, &v);
        let estimate: f64 = mat_vec(m, &v).iter().sum::<f64>() / v.iter().sum::<f64>();
        if hi - lo <= tol * hi {
            return Ok((estimate, v));
        }
        if (estimate - previous).abs() <= tol * estimate {
            stable += 1;
            if stable >= 2 {
                return Ok((estimate, v));
            }
        } else {
            stable = 0;
        }
        previous = estimate;
        let sigma = hi * (1.0 + 1e-10) + f64::MIN_POSITIVE;
        let shifted = m.scale(-1.0).add_diagonal(sigma);
        let lu = Lu::factor(&shifted);
        if lu.smallest_pivot().1 == 0.0 {
            return Err(Error::NoConvergence {
                what: "Perron iteration",
                iterations: 0,
            });
        }
        let y = lu.solve(&Matrix::from_vec(n, 1, v.clone()));
        let mut next: Vec<f64> = y.data.iter().map(|&x| x.max(0.0)).collect();
        if next.iter().all(|&x| x == 0.0) || next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NoConvergence {
                what: "Perron iteration",
                iterations: 0,
            });
        }
        normalize_sum(&mut next);
        v = next;
    }
    Err(Error::NoConvergence {
        what: "Perron iteration",
        iterations: PERRON_MAX_ITERATIONS,
    })
}

/// Spectral radius and normalized Perron vectors of a nonnegative
/// irreducible matrix.
pub fn perron_pair(m: &RealMatrix, tol: f64) -> Result<PerronPair> {
    assert!(m.is_square(), "Perron pair needs a square matrix");
    let n = m.rows;
    if n == 1 {
        return Ok(PerronPair {
            value: m[(0, 0)],
            left: vec![1.0],
            right: vec![1.0],
        });
    }
    let scale = m.norm_inf();
    if scale == 0.0 {
        return Err(Error::NoConvergence {
            what: "Perron iteration on a zero matrix",
            iterations: 0,
        });
    }
    let a = m.scale(1.0 / scale);
    let (_, right) = right_perron_vector(&a, tol)?;
    let (_, mut left) = right_perron_vector(&a.transpose(), tol)?;
    normalize_sum(&mut left);
    let lr = dot(&left, &right);
    let value = dot(&left, &mat_vec(m, &right)) / lr;
    let right = right.iter().map(|x| x / lr).collect();
    Ok(PerronPair { value, left, right })
}

/// `Σ_k z^k coeffs[k]`, plus `coeff·(ratio·z)^{K+1}/(1 − ratio·z)` for a
/// geometric tail starting after index `K`.
pub fn matrix_power_series(coeffs: &[RealMatrix], z: Complex64, tail: Option<&GeometricTail>) -> Result<ComplexMatrix> {
    let (rows, cols) = match (coeffs.first(), tail) {
        (Some(c), _) => (c.rows, c.cols),
        (None, Some(t)) => (t.coeff.rows, t.coeff.cols),
        (None, None) => panic!("power series needs at least one coefficient"),
    };
    let mut acc = ComplexMatrix::zeros(rows, cols);
    for c in coeffs.iter().rev() {
        acc = acc.scale(z);
        acc = &acc + &c.to_complex();
    }
    if let Some(t) = tail {
        let w = z * t.ratio;
        if w.norm() >= 1.0 {
            return Err(Error::OutsideRadius {
                modulus: z.norm(),
                radius: 1.0 / t.ratio,
            });
        }
        let factor = w.powu(t.start_index as u32 + 1) / (1.0 - w);
        acc = &acc + &t.coeff.to_complex().scale(factor);
    }
    Ok(acc)
}
