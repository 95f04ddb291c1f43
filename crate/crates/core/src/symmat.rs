//! Matrix and half-space foundations: points of the Siegel upper half space,
//! block splitting, the symplectic action and its cocycle, unimodular and
//! half-even matrix types, and numerical rank.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_rational::Ratio;
use num_traits::Zero;

use crate::{Error, Result};

pub type Rat = Ratio<i64>;
pub type RMat = DMatrix<f64>;
pub type IMat = DMatrix<i64>;
pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

const SYM_TOL: f64 = 1e-10;

/// Relative pivot threshold for the positive definiteness factorization.
pub const PD_PIVOT_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// rational matrices
// ---------------------------------------------------------------------------

/// Dense rational matrix, used wherever congruences and trace orderings must
/// be exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatMat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<Rat>,
}

impl RatMat {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> Rat) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        RatMat { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| Rat::zero())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| {
            if i == j {
                Rat::from_integer(1)
            } else {
                Rat::zero()
            }
        })
    }

    pub fn from_integer_matrix(m: &IMat) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| Rat::from_integer(m[(i, j)]))
    }

    pub fn get(&self, i: usize, j: usize) -> Rat {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Rat) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn mul(&self, other: &RatMat) -> Self {
        assert_eq!(self.cols, other.rows);
        Self::from_fn(self.rows, other.cols, |i, j| {
            (0..self.cols)
                .map(|k| self.get(i, k) * other.get(k, j))
                .sum()
        })
    }

    pub fn add(&self, other: &RatMat) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self::from_fn(self.rows, self.cols, |i, j| self.get(i, j) + other.get(i, j))
    }

    pub fn scale(&self, s: Rat) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self.get(i, j) * s)
    }

    pub fn trace(&self) -> Rat {
        assert_eq!(self.rows, self.cols);
        (0..self.rows).map(|i| self.get(i, i)).sum()
    }

    /// Trace of `self * other`.
    pub fn trace_mul(&self, other: &RatMat) -> Rat {
        assert_eq!(self.cols, other.rows);
        assert_eq!(self.rows, other.cols);
        let mut t = Rat::zero();
        for i in 0..self.rows {
            for k in 0..self.cols {
                t += self.get(i, k) * other.get(k, i);
            }
        }
        t
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Exact determinant by rational Gaussian elimination.
    pub fn det(&self) -> Rat {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut det = Rat::from_integer(1);
        for col in 0..n {
            let pivot = (col..n).find(|&r| !a.get(r, col).is_zero());
            let pivot = match pivot {
                Some(p) => p,
                None => return Rat::zero(),
            };
            if pivot != col {
                for j in 0..n {
                    let tmp = a.get(col, j);
                    a.set(col, j, a.get(pivot, j));
                    a.set(pivot, j, tmp);
                }
                det = -det;
            }
            let p = a.get(col, col);
            det *= p;
            for r in col + 1..n {
                let factor = a.get(r, col) / p;
                if factor.is_zero() {
                    continue;
                }
                for j in col..n {
                    let v = a.get(r, j) - factor * a.get(col, j);
                    a.set(r, j, v);
                }
            }
        }
        det
    }

    /// Exact inverse; panics on a singular matrix.
    pub fn inverse(&self) -> Self {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = RatMat::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .find(|&r| !a.get(r, col).is_zero())
                .expect("singular rational matrix");
            if pivot != col {
                for j in 0..n {
                    let tmp = a.get(col, j);
                    a.set(col, j, a.get(pivot, j));
                    a.set(pivot, j, tmp);
                    let tmp = inv.get(col, j);
                    inv.set(col, j, inv.get(pivot, j));
                    inv.set(pivot, j, tmp);
                }
            }
            let p = a.get(col, col);
            for j in 0..n {
                a.set(col, j, a.get(col, j) / p);
                inv.set(col, j, inv.get(col, j) / p);
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a.get(r, col);
                if factor.is_zero() {
                    continue;
                }
                for j in 0..n {
                    let v = a.get(r, j) - factor * a.get(col, j);
                    a.set(r, j, v);
                    let v = inv.get(r, j) - factor * inv.get(col, j);
                    inv.set(r, j, v);
                }
            }
        }
        inv
    }

    /// Exact positive definiteness via leading principal minors.
    pub fn is_positive_definite(&self) -> bool {
        if !self.is_symmetric() {
            return false;
        }
        for k in 1..=self.rows {
            let minor = Self::from_fn(k, k, |i, j| self.get(i, j));
            if minor.det() <= Rat::zero() {
                return false;
            }
        }
        true
    }

    pub fn to_f64(&self) -> RMat {
        RMat::from_fn(self.rows, self.cols, |i, j| rat_to_f64(self.get(i, j)))
    }

    pub fn is_integer(&self) -> bool {
        self.data.iter().all(|r| r.is_integer())
    }
}

pub fn rat_to_f64(r: Rat) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

// ---------------------------------------------------------------------------
// integer matrix helpers
// ---------------------------------------------------------------------------

/// Exact determinant of an integer matrix by cofactor expansion (small n).
pub fn int_det(m: &IMat) -> i64 {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    fn det_rec(m: &IMat, rows: &[usize], cols: &[usize]) -> i128 {
        if rows.len() == 1 {
            return m[(rows[0], cols[0])] as i128;
        }
        let mut acc: i128 = 0;
        let mut sign: i128 = 1;
        for (k, &c) in cols.iter().enumerate() {
            let a = m[(rows[0], c)] as i128;
            if a != 0 {
                let sub_cols: Vec<usize> = cols
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .map(|(_, &cc)| cc)
                    .collect();
                acc += sign * a * det_rec(m, &rows[1..], &sub_cols);
            }
            sign = -sign;
        }
        acc
    }
    let idx: Vec<usize> = (0..n).collect();
    let d = det_rec(m, &idx, &idx);
    i64::try_from(d).expect("determinant overflow")
}

/// Row Hermite normal form of an integer matrix (left-multiplication by a
/// unimodular matrix). Canonical: pivots positive, entries above a pivot
/// reduced into `[0, pivot)`.
pub fn row_hnf(m: &IMat) -> IMat {
    let mut a = m.clone_owned();
    let (rows, cols) = (a.nrows(), a.ncols());
    let mut pivot_row = 0;
    for col in 0..cols {
        if pivot_row >= rows {
            break;
        }
        // gcd elimination below the pivot row
        loop {
            let mut best: Option<(usize, i64)> = None;
            for r in pivot_row..rows {
                let v = a[(r, col)];
                if v != 0 && best.map_or(true, |(_, bv)| v.abs() < bv.abs()) {
                    best = Some((r, v));
                }
            }
            let (br, bv) = match best {
                Some(b) => b,
                None => break,
            };
            if br != pivot_row {
                a.swap_rows(br, pivot_row);
            }
            let mut done = true;
            for r in pivot_row + 1..rows {
                let q = a[(r, col)].div_euclid(bv);
                if q != 0 {
                    for j in 0..cols {
                        a[(r, j)] -= q * a[(pivot_row, j)];
                    }
                }
                if a[(r, col)] != 0 {
                    done = false;
                }
            }
            if done {
                break;
            }
        }
        if a[(pivot_row, col)] == 0 {
            continue;
        }
        if a[(pivot_row, col)] < 0 {
            for j in 0..cols {
                a[(pivot_row, j)] = -a[(pivot_row, j)];
            }
        }
        let p = a[(pivot_row, col)];
        for r in 0..pivot_row {
            let q = a[(r, col)].div_euclid(p);
            if q != 0 {
                for j in 0..cols {
                    a[(r, j)] -= q * a[(pivot_row, j)];
                }
            }
        }
        pivot_row += 1;
    }
    a
}

/// Completes a primitive integer vector to a unimodular matrix having it as
/// first column.
pub fn complete_to_unimodular(v: &[i64]) -> Result<UnimodularMatrix> {
    let n = v.len();
    // Row-reduce v to e1 with elementary integer operations, accumulating the
    // transformation; the inverse transformation has v as first column.
    let mut w: Vec<i64> = v.to_vec();
    let mut trans = IMat::identity(n, n);
    loop {
        let nonzero: Vec<usize> = (0..n).filter(|&i| w[i] != 0).collect();
        if nonzero.is_empty() {
            return Err(Error::Precondition("zero vector cannot be completed".into()));
        }
        if nonzero.len() == 1 {
            let i = nonzero[0];
            if w[i].abs() != 1 {
                return Err(Error::Precondition(format!(
                    "vector {:?} is not primitive",
                    v
                )));
            }
            if i != 0 {
                w.swap(0, i);
                trans.swap_rows(0, i);
            }
            if w[0] == -1 {
                w[0] = 1;
                for j in 0..n {
                    trans[(0, j)] = -trans[(0, j)];
                }
            }
            break;
        }
        // reduce the largest entry by the smallest nonzero one
        let &imin = nonzero
            .iter()
            .min_by_key(|&&i| w[i].abs())
            .expect("nonempty");
        for i in 0..n {
            if i == imin || w[i] == 0 {
                continue;
            }
            let q = w[i].div_euclid(w[imin]);
            w[i] -= q * w[imin];
            for j in 0..n {
                let t = q * trans[(imin, j)];
                trans[(i, j)] -= t;
            }
        }
    }
    // trans * v = e1, so trans^{-1} has first column v
    let u = UnimodularMatrix::new(trans)?;
    Ok(u.inverse())
}

// ---------------------------------------------------------------------------
// UpperHalfPoint
// ---------------------------------------------------------------------------

/// Point Z = X + iY of the Siegel upper half space: X, Y real symmetric and
/// Y positive definite.
#[derive(Debug, Clone)]
pub struct UpperHalfPoint {
    x: RMat,
    y: RMat,
}

impl UpperHalfPoint {
    pub fn new(x: RMat, y: RMat) -> Result<Self> {
        let n = x.nrows();
        if x.ncols() != n || y.nrows() != n || y.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "X is {}x{}, Y is {}x{}",
                x.nrows(),
                x.ncols(),
                y.nrows(),
                y.ncols()
            )));
        }
        check_symmetric(&x, "X")?;
        check_symmetric(&y, "Y")?;
        if !is_positive_definite(&y) {
            return Err(Error::NotPositiveDefinite("imaginary part Y".into()));
        }
        Ok(UpperHalfPoint { x, y })
    }

    pub fn from_complex(z: &CMat) -> Result<Self> {
        let x = RMat::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)].re);
        let y = RMat::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)].im);
        Self::new(x, y)
    }

    /// One-dimensional point.
    pub fn scalar(z: Complex64) -> Result<Self> {
        Self::new(
            RMat::from_element(1, 1, z.re),
            RMat::from_element(1, 1, z.im),
        )
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn x(&self) -> &RMat {
        &self.x
    }

    pub fn y(&self) -> &RMat {
        &self.y
    }

    pub fn z(&self) -> CMat {
        CMat::from_fn(self.dim(), self.dim(), |i, j| {
            Complex64::new(self.x[(i, j)], self.y[(i, j)])
        })
    }

    /// Leading (n-1)x(n-1) block.
    pub fn leading_block(&self) -> Result<UpperHalfPoint> {
        let n = self.dim();
        if n < 2 {
            return Err(Error::DimensionMismatch(
                "leading block needs dimension >= 2".into(),
            ));
        }
        UpperHalfPoint::new(
            self.x.view((0, 0), (n - 1, n - 1)).into_owned(),
            self.y.view((0, 0), (n - 1, n - 1)).into_owned(),
        )
    }

    /// Off-block column (the first n-1 entries of the last column).
    pub fn off_column(&self) -> CVec {
        let n = self.dim();
        CVec::from_fn(n - 1, |i, _| {
            Complex64::new(self.x[(i, n - 1)], self.y[(i, n - 1)])
        })
    }

    /// Corner entry z_nn.
    pub fn corner(&self) -> Complex64 {
        let n = self.dim();
        Complex64::new(self.x[(n - 1, n - 1)], self.y[(n - 1, n - 1)])
    }

    /// Assembles an n-dimensional point from its blocks.
    pub fn assemble(
        zhat: &UpperHalfPoint,
        zvec: &[Complex64],
        znn: Complex64,
    ) -> Result<UpperHalfPoint> {
        let d = zhat.dim();
        if zvec.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "off-column has length {}, expected {}",
                zvec.len(),
                d
            )));
        }
        let n = d + 1;
        let x = RMat::from_fn(n, n, |i, j| match (i == d, j == d) {
            (false, false) => zhat.x[(i, j)],
            (false, true) => zvec[i].re,
            (true, false) => zvec[j].re,
            (true, true) => znn.re,
        });
        let y = RMat::from_fn(n, n, |i, j| match (i == d, j == d) {
            (false, false) => zhat.y[(i, j)],
            (false, true) => zvec[i].im,
            (true, false) => zvec[j].im,
            (true, true) => znn.im,
        });
        UpperHalfPoint::new(x, y)
    }

    /// Smallest eigenvalue of Y.
    pub fn y_min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.y)
    }
}

fn check_symmetric(m: &RMat, name: &str) -> Result<()> {
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYM_TOL * scale {
                return Err(Error::NotSymmetric(format!(
                    "{name}[{i},{j}] = {} vs {name}[{j},{i}] = {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// Positive definiteness by symmetric (LDL^t) factorization with a relative
/// pivot threshold.
pub fn is_positive_definite(m: &RMat) -> bool {
    let n = m.nrows();
    if n == 0 {
        return false;
    }
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0f64, f64::max);
    if scale == 0.0 {
        return false;
    }
    let mut a = m.clone_owned();
    for k in 0..n {
        let pivot = a[(k, k)];
        if pivot <= PD_PIVOT_TOL * scale {
            return false;
        }
        for i in k + 1..n {
            let f = a[(i, k)] / pivot;
            for j in k + 1..n {
                a[(i, j)] -= f * a[(k, j)];
            }
        }
    }
    true
}

pub fn min_eigenvalue(m: &RMat) -> f64 {
    let sym = nalgebra::SymmetricEigen::new(m.clone_owned());
    sym.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(m: &RMat) -> f64 {
    let sym = nalgebra::SymmetricEigen::new(m.clone_owned());
    sym.eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

// ---------------------------------------------------------------------------
// HalfEvenMatrix
// ---------------------------------------------------------------------------

/// Symmetric positive definite matrix with positive integer diagonal and
/// half-integer off-diagonal entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HalfEvenMatrix {
    entries: RatMat,
}

impl HalfEvenMatrix {
    pub fn new(entries: RatMat) -> Result<Self> {
        if !entries.is_symmetric() {
            return Err(Error::BadHalfEven("not symmetric".into()));
        }
        let n = entries.rows;
        for i in 0..n {
            let d = entries.get(i, i);
            if !d.is_integer() || d <= Rat::zero() {
                return Err(Error::BadHalfEven(format!(
                    "diagonal entry T[{i},{i}] = {d} is not a positive integer"
                )));
            }
            for j in 0..i {
                let v = entries.get(i, j) * Rat::from_integer(2);
                if !v.is_integer() {
                    return Err(Error::BadHalfEven(format!(
                        "off-diagonal entry T[{i},{j}] = {} is not half-integer",
                        entries.get(i, j)
                    )));
                }
            }
        }
        if !entries.is_positive_definite() {
            return Err(Error::BadHalfEven("not positive definite".into()));
        }
        Ok(HalfEvenMatrix { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.rows
    }

    pub fn entries(&self) -> &RatMat {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> Rat {
        self.entries.get(i, j)
    }

    /// Leading (n-1)x(n-1) block.
    pub fn leading_block(&self) -> RatMat {
        let n = self.dim();
        RatMat::from_fn(n - 1, n - 1, |i, j| self.entries.get(i, j))
    }

    /// Corner entry T_nn.
    pub fn corner(&self) -> Rat {
        self.entries.get(self.dim() - 1, self.dim() - 1)
    }

    /// Entry T_{1n}.
    pub fn t1n(&self) -> Rat {
        self.entries.get(0, self.dim() - 1)
    }

    pub fn to_f64(&self) -> RMat {
        self.entries.to_f64()
    }
}

// ---------------------------------------------------------------------------
// UnimodularMatrix
// ---------------------------------------------------------------------------

/// Integer matrix with determinant +1 or -1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UnimodularMatrix {
    entries: IMat,
    det: i64,
}

impl UnimodularMatrix {
    pub fn new(entries: IMat) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch("unimodular matrix must be square".into()));
        }
        let det = int_det(&entries);
        if det != 1 && det != -1 {
            return Err(Error::NotUnimodular(det));
        }
        Ok(UnimodularMatrix { entries, det })
    }

    pub fn identity(n: usize) -> Self {
        UnimodularMatrix {
            entries: IMat::identity(n, n),
            det: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn det(&self) -> i64 {
        self.det
    }

    pub fn entries(&self) -> &IMat {
        &self.entries
    }

    pub fn mul(&self, other: &UnimodularMatrix) -> Self {
        UnimodularMatrix {
            entries: &self.entries * &other.entries,
            det: self.det * other.det,
        }
    }

    pub fn transpose(&self) -> Self {
        UnimodularMatrix {
            entries: self.entries.transpose(),
            det: self.det,
        }
    }

    /// Exact integer inverse via the adjugate.
    pub fn inverse(&self) -> Self {
        let n = self.dim();
        let mut adj = IMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                // cofactor C_{ji}
                let rows: Vec<usize> = (0..n).filter(|&r| r != j).collect();
                let cols: Vec<usize> = (0..n).filter(|&c| c != i).collect();
                let minor = if rows.is_empty() {
                    1
                } else {
                    let sub = IMat::from_fn(n - 1, n - 1, |r, c| self.entries[(rows[r], cols[c])]);
                    int_det(&sub)
                };
                let sign = if (i + j) % 2 == 0 { 1 } else { -1 };
                adj[(i, j)] = sign * minor * self.det; // det is its own inverse
            }
        }
        UnimodularMatrix {
            entries: adj,
            det: self.det,
        }
    }

    pub fn first_column(&self) -> Vec<i64> {
        (0..self.dim()).map(|i| self.entries[(i, 0)]).collect()
    }

    pub fn to_f64(&self) -> RMat {
        RMat::from_fn(self.dim(), self.dim(), |i, j| self.entries[(i, j)] as f64)
    }

    pub fn to_rational(&self) -> RatMat {
        RatMat::from_integer_matrix(&self.entries)
    }
}

// ---------------------------------------------------------------------------
// SymplecticElement
// ---------------------------------------------------------------------------

/// Element of Sp(n, Z) in (A, B; C, D) block form, validated exactly in
/// integer arithmetic.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SymplecticElement {
    a: IMat,
    b: IMat,
    c: IMat,
    d: IMat,
}

impl SymplecticElement {
    pub fn new(a: IMat, b: IMat, c: IMat, d: IMat) -> Result<Self> {
        let n = a.nrows();
        for (m, name) in [(&a, "A"), (&b, "B"), (&c, "C"), (&d, "D")] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch(format!("block {name} has wrong shape")));
            }
        }
        let atc = a.transpose() * &c;
        if atc != atc.transpose() {
            return Err(Error::NotSymplectic("A^t C is not symmetric".into()));
        }
        let btd = b.transpose() * &d;
        if btd != btd.transpose() {
            return Err(Error::NotSymplectic("B^t D is not symmetric".into()));
        }
        let rel = a.transpose() * &d - c.transpose() * &b;
        if rel != IMat::identity(n, n) {
            return Err(Error::NotSymplectic("A^t D - C^t B != I".into()));
        }
        Ok(SymplecticElement { a, b, c, d })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn blocks(&self) -> (&IMat, &IMat, &IMat, &IMat) {
        (&self.a, &self.b, &self.c, &self.d)
    }

    pub fn identity(n: usize) -> Self {
        SymplecticElement {
            a: IMat::identity(n, n),
            b: IMat::zeros(n, n),
            c: IMat::zeros(n, n),
            d: IMat::identity(n, n),
        }
    }

    /// The inversion generator (0, -I; I, 0).
    pub fn inversion(n: usize) -> Self {
        SymplecticElement {
            a: IMat::zeros(n, n),
            b: -IMat::identity(n, n),
            c: IMat::identity(n, n),
            d: IMat::zeros(n, n),
        }
    }

    /// Translation generator (I, S; 0, I) for symmetric integer S.
    pub fn translation(s: &IMat) -> Result<Self> {
        if s != &s.transpose() {
            return Err(Error::NotSymmetric("translation block S".into()));
        }
        let n = s.nrows();
        Ok(SymplecticElement {
            a: IMat::identity(n, n),
            b: s.clone_owned(),
            c: IMat::zeros(n, n),
            d: IMat::identity(n, n),
        })
    }

    /// Embedding (U, 0; 0, U^{-t}) of a unimodular matrix. Acts on Z by
    /// Z -> U Z U^t.
    pub fn gl_embed(u: &UnimodularMatrix) -> Self {
        let uinv = u.inverse();
        SymplecticElement {
            a: u.entries().clone_owned(),
            b: IMat::zeros(u.dim(), u.dim()),
            c: IMat::zeros(u.dim(), u.dim()),
            d: uinv.entries().transpose(),
        }
    }

    /// Embeds an element of Sp(n-1, Z) into Sp(n, Z) in the reduced block
    /// form fixing the last coordinate.
    pub fn embed_reduced(mhat: &SymplecticElement) -> Self {
        let d = mhat.dim();
        let n = d + 1;
        let pad = |m: &IMat, corner: i64| {
            IMat::from_fn(n, n, |i, j| match (i == d, j == d) {
                (false, false) => m[(i, j)],
                (true, true) => corner,
                _ => 0,
            })
        };
        SymplecticElement {
            a: pad(&mhat.a, 1),
            b: pad(&mhat.b, 0),
            c: pad(&mhat.c, 0),
            d: pad(&mhat.d, 1),
        }
    }

    pub fn mul(&self, other: &SymplecticElement) -> Self {
        SymplecticElement {
            a: &self.a * &other.a + &self.b * &other.c,
            b: &self.a * &other.b + &self.b * &other.d,
            c: &self.c * &other.a + &self.d * &other.c,
            d: &self.c * &other.b + &self.d * &other.d,
        }
    }

    /// True when all C_{in} vanish (membership in the subgroup fixing the
    /// last coordinate direction).
    pub fn fixes_last_coordinate(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| self.c[(i, n - 1)] == 0)
    }

    /// Extracts the reduced (n-1)-dimensional blocks. Requires the element to
    /// be in the reduced form produced by [`SymplecticElement::embed_reduced`].
    pub fn reduced_blocks(&self) -> Result<SymplecticElement> {
        let n = self.dim();
        if n < 2 {
            return Err(Error::DimensionMismatch("no reduced blocks in dimension 1".into()));
        }
        let take = |m: &IMat| m.view((0, 0), (n - 1, n - 1)).into_owned();
        SymplecticElement::new(take(&self.a), take(&self.b), take(&self.c), take(&self.d))
    }

    pub fn c_block(&self) -> &IMat {
        &self.c
    }

    pub fn d_block(&self) -> &IMat {
        &self.d
    }
}

/// CZ + D as a complex matrix.
pub fn cz_plus_d(m: &SymplecticElement, z: &UpperHalfPoint) -> CMat {
    let zc = z.z();
    let (_, _, c, d) = m.blocks();
    let cf = CMat::from_fn(m.dim(), m.dim(), |i, j| Complex64::new(c[(i, j)] as f64, 0.0));
    let df = CMat::from_fn(m.dim(), m.dim(), |i, j| Complex64::new(d[(i, j)] as f64, 0.0));
    &cf * &zc + df
}

/// The symplectic action M(Z) = (AZ + B)(CZ + D)^{-1}.
pub fn symplectic_action(m: &SymplecticElement, z: &UpperHalfPoint) -> Result<UpperHalfPoint> {
    let n = m.dim();
    if n != z.dim() {
        return Err(Error::DimensionMismatch(format!(
            "element acts on dimension {}, point has dimension {}",
            n,
            z.dim()
        )));
    }
    let zc = z.z();
    let (a, b, _, _) = m.blocks();
    let af = CMat::from_fn(n, n, |i, j| Complex64::new(a[(i, j)] as f64, 0.0));
    let bf = CMat::from_fn(n, n, |i, j| Complex64::new(b[(i, j)] as f64, 0.0));
    let num = &af * &zc + bf;
    let den = cz_plus_d(m, z);
    let den_inv = den
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::NotSymplectic("CZ + D is singular".into()))?;
    let w = num * den_inv;
    // symmetrize away roundoff
    let ws = CMat::from_fn(n, n, |i, j| (w[(i, j)] + w[(j, i)]) * 0.5);
    UpperHalfPoint::from_complex(&ws)
}

/// det(CZ + D).
pub fn cocycle_det(m: &SymplecticElement, z: &UpperHalfPoint) -> Complex64 {
    cz_plus_d(m, z).lu().determinant()
}

// ---------------------------------------------------------------------------
// numerical rank
// ---------------------------------------------------------------------------

/// Number of singular values exceeding `tol` times the largest singular
/// value; zero matrices have rank 0.
pub fn numerical_rank(a: &CMat, tol: f64) -> Result<usize> {
    if a.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if tol <= 0.0 {
        return Err(Error::Precondition("rank tolerance must be positive".into()));
    }
    let sv = singular_values(a);
    let largest = sv.first().copied().unwrap_or(0.0);
    if largest == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol * largest).count())
}

/// Singular values in descending order.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    let svd = a.clone_owned().svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().cloned().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).expect("finite singular values"));
    sv
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    fn rat(n: i64, d: i64) -> Rat {
        Rat::new(n, d)
    }

    fn point_2d() -> UpperHalfPoint {
        UpperHalfPoint::new(
            RMat::from_row_slice(2, 2, &[0.3, 0.1, 0.1, -0.2]),
            RMat::from_row_slice(2, 2, &[1.2, 0.05, 0.05, 1.7]),
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_pd_imaginary_part() {
        let r = UpperHalfPoint::new(
            RMat::zeros(2, 2),
            RMat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        );
        assert!(matches!(r, Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn block_split_roundtrip() {
        let z = UpperHalfPoint::new(
            RMat::from_row_slice(2, 2, &[0.1, 0.2, 0.2, 0.4]),
            RMat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]),
        )
        .unwrap();
        let zhat = z.leading_block().unwrap();
        let zvec: Vec<Complex64> = z.off_column().iter().cloned().collect();
        let znn = z.corner();
        let back = UpperHalfPoint::assemble(&zhat, &zvec, znn).unwrap();
        assert_eq!(back.z(), z.z());
    }

    #[test]
    fn half_even_validation() {
        let good = RatMat::from_fn(2, 2, |i, j| if i == j { rat(3, 1) } else { rat(1, 2) });
        assert!(HalfEvenMatrix::new(good).is_ok());
        let bad_diag = RatMat::from_fn(2, 2, |i, j| if i == j { rat(1, 2) } else { Rat::zero() });
        assert!(HalfEvenMatrix::new(bad_diag).is_err());
        let bad_off = RatMat::from_fn(2, 2, |i, j| if i == j { Rat::one() * 3 } else { rat(1, 3) });
        assert!(HalfEvenMatrix::new(bad_off).is_err());
        let not_pd = RatMat::from_fn(2, 2, |i, j| if i == j { Rat::one() } else { rat(3, 2) });
        assert!(HalfEvenMatrix::new(not_pd).is_err());
    }

    #[test]
    fn unimodular_inverse_is_exact() {
        let u = UnimodularMatrix::new(IMat::from_row_slice(3, 3, &[1, 2, 3, 0, 1, 4, 0, 0, -1]))
            .unwrap();
        let inv = u.inverse();
        assert_eq!(u.entries() * inv.entries(), IMat::identity(3, 3));
    }

    #[test]
    fn symplectic_action_identity_and_translation() {
        let z = point_2d();
        let id = SymplecticElement::identity(2);
        let w = symplectic_action(&id, &z).unwrap();
        assert!((w.z() - z.z()).map(|c| c.norm()).max() < 1e-12);

        let s = IMat::from_row_slice(2, 2, &[1, -2, -2, 0]);
        let t = SymplecticElement::translation(&s).unwrap();
        let w = symplectic_action(&t, &z).unwrap();
        let mut expect = z.z();
        for i in 0..2 {
            for j in 0..2 {
                expect[(i, j)] += Complex64::new(s[(i, j)] as f64, 0.0);
            }
        }
        assert!((w.z() - expect).map(|c| c.norm()).max() < 1e-12);
        assert!((cocycle_det(&t, &z) - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn inversion_fixes_i_in_dim_1() {
        let z = UpperHalfPoint::scalar(Complex64::new(0.0, 1.0)).unwrap();
        let j = SymplecticElement::inversion(1);
        let w = symplectic_action(&j, &z).unwrap();
        assert!((w.corner() - Complex64::new(0.0, 1.0)).norm() < 1e-12);
        let z2 = UpperHalfPoint::scalar(Complex64::new(0.0, 2.0)).unwrap();
        assert!((cocycle_det(&j, &z2) - Complex64::new(0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn numerical_rank_examples() {
        let zero = CMat::zeros(3, 3);
        assert_eq!(numerical_rank(&zero, 1e-8).unwrap(), 0);
        let id = CMat::identity(4, 4);
        assert_eq!(numerical_rank(&id, 1e-8).unwrap(), 4);
        // diag(1, 1e-14) padded to 2x3
        let mut a = CMat::zeros(2, 3);
        a[(0, 0)] = Complex64::new(1.0, 0.0);
        a[(1, 1)] = Complex64::new(1e-14, 0.0);
        assert_eq!(numerical_rank(&a, 1e-8).unwrap(), 1);
        let empty = CMat::zeros(0, 0);
        assert!(numerical_rank(&empty, 1e-8).is_err());
    }

    #[test]
    fn hnf_canonicalizes_left_gl_action() {
        let m = IMat::from_row_slice(2, 4, &[2, 1, 0, 3, 1, 1, 1, 0]);
        let u = IMat::from_row_slice(2, 2, &[1, 1, 2, 3]); // det 1
        let um = &u * &m;
        assert_eq!(row_hnf(&m), row_hnf(&um));
    }

    #[test]
    fn complete_primitive_vector() {
        for v in [vec![1, 0, 1], vec![3, 5, 7], vec![0, 1, 0], vec![-2, 3, 0]] {
            let u = complete_to_unimodular(&v).unwrap();
            assert_eq!(u.first_column(), v);
        }
        assert!(complete_to_unimodular(&[2, 4]).is_err());
    }

    #[test]
    fn rational_matrix_inverse_and_pd() {
        let m = RatMat::from_fn(2, 2, |i, j| if i == j { rat(2, 1) } else { rat(1, 2) });
        let inv = m.inverse();
        assert_eq!(m.mul(&inv), RatMat::identity(2));
        assert!(m.is_positive_definite());
        let not_pd = RatMat::from_fn(2, 2, |i, j| if i == j { rat(1, 1) } else { rat(2, 1) });
        assert!(!not_pd.is_positive_definite());
    }
}
