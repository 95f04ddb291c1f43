//! Unimodular matrix enumeration under trace bounds, the orbit sums psi(a,T),
//! the first z_nn-layer g_1 of the unimodular subseries and its theta
//! decomposition, and the T-family construction behind the rank probe.

use std::f64::consts::PI;

use num_complex::Complex64;
use num_integer::Integer;
use num_traits::Zero;

use crate::symmat::{
    complete_to_unimodular, min_eigenvalue, rat_to_f64, HalfEvenMatrix, IMat, Rat, RatMat, RMat,
    UnimodularMatrix, UpperHalfPoint,
};
use crate::theta::{theta_eval, KahanSum, ThetaChar, TruncationBudget};
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Default cap on candidate column tuples examined by the enumeration.
pub const ENUMERATION_CAP: usize = 10_000_000;

/// Complete list of unimodular matrices U with sigma(T U^t Y U) <= bound,
/// sorted lexicographically by entries (row-major).
#[derive(Debug, Clone)]
pub struct BoundedEnumeration {
    pub bound: f64,
    pub matrices: Vec<UnimodularMatrix>,
}

/// All integer vectors v with v^t Y v <= r2, sorted lexicographically.
fn integer_vectors_in_ellipsoid(y: &RMat, r2: f64) -> Vec<Vec<i64>> {
    let d = y.nrows();
    let mut out = Vec::new();
    crate::theta::for_each_ellipsoid_point(y, &vec![0.0; d], r2, &mut |u| {
        out.push(u.iter().map(|&x| x.round() as i64).collect());
    });
    out
}

pub fn enumerate_bounded(t: &RMat, y: &RMat, bound: f64) -> Result<BoundedEnumeration> {
    enumerate_bounded_with_cap(t, y, bound, ENUMERATION_CAP)
}

/// Enumerates by the per-column relaxation: since
/// sigma(T U^t Y U) >= lam_min(T) * sum_i u_i^t Y u_i, every column of a
/// qualifying U lies in the ellipsoid u^t Y u <= bound / lam_min(T).
pub fn enumerate_bounded_with_cap(
    t: &RMat,
    y: &RMat,
    bound: f64,
    cap: usize,
) -> Result<BoundedEnumeration> {
    let d = y.nrows();
    if t.nrows() != d {
        return Err(Error::DimensionMismatch(format!(
            "T is {}x{}, Y is {}x{}",
            t.nrows(),
            t.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    let lam_t = min_eigenvalue(t);
    if lam_t <= 0.0 || min_eigenvalue(y) <= 0.0 {
        return Err(Error::NotPositiveDefinite("enumeration weights".into()));
    }
    let mut matrices = Vec::new();
    if bound <= 0.0 {
        return Ok(BoundedEnumeration { bound, matrices });
    }
    let candidates = integer_vectors_in_ellipsoid(y, bound / lam_t);
    let tuples = candidates.len().checked_pow(d as u32);
    match tuples {
        Some(n) if n <= cap => {}
        _ => return Err(Error::EnumerationOverflow(cap)),
    }

    let mut idx = vec![0usize; d];
    let mut u = IMat::zeros(d, d);
    'outer: loop {
        for (col, &i) in idx.iter().enumerate() {
            for row in 0..d {
                u[(row, col)] = candidates[i][row];
            }
        }
        if let Ok(um) = UnimodularMatrix::new(u.clone_owned()) {
            if trace_t_gram(t, y, &um) <= bound + 1e-12 * bound.abs().max(1.0) {
                matrices.push(um);
            }
        }
        let mut c = d;
        loop {
            if c == 0 {
                break 'outer;
            }
            c -= 1;
            if idx[c] + 1 < candidates.len() {
                idx[c] += 1;
                for j in idx.iter_mut().skip(c + 1) {
                    *j = 0;
                }
                break;
            }
        }
    }
    matrices.sort_by(|a, b| entry_key(a).cmp(&entry_key(b)));
    Ok(BoundedEnumeration { bound, matrices })
}

fn entry_key(u: &UnimodularMatrix) -> Vec<i64> {
    let e = u.entries();
    let d = u.dim();
    let mut k = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            k.push(e[(i, j)]);
        }
    }
    k
}

/// sigma(T U^t Y U) in floating point.
pub fn trace_t_gram(t: &RMat, y: &RMat, u: &UnimodularMatrix) -> f64 {
    let uf = u.to_f64();
    let gram = uf.transpose() * y * uf;
    (t * gram).trace()
}

/// Minimal trace value, the unimodular stabilizer of Y, and sorted
/// representatives of the minimizing set modulo the left stabilizer action.
#[derive(Debug, Clone)]
pub struct MinimaAnalysis {
    pub minimum: f64,
    pub stabilizer: Vec<UnimodularMatrix>,
    pub representatives: Vec<UnimodularMatrix>,
}

pub fn minima_analysis(y: &RMat, that: &RMat) -> Result<MinimaAnalysis> {
    let d = y.nrows();
    let id_bound = (that * y).trace();
    let en = enumerate_bounded(that, y, id_bound + 1e-6)?;
    let minimum = en
        .matrices
        .iter()
        .map(|u| trace_t_gram(that, y, u))
        .fold(f64::INFINITY, f64::min);
    let minimizers: Vec<UnimodularMatrix> = en
        .matrices
        .iter()
        .filter(|u| trace_t_gram(that, y, u) <= minimum + 1e-9 * minimum.abs().max(1.0))
        .cloned()
        .collect();

    // stabilizer: U^t Y U = Y entrywise; such U have trace sigma(T Y)
    let stab_en = enumerate_bounded(&RMat::identity(d, d), y, y.trace() + 1e-6)?;
    let stabilizer: Vec<UnimodularMatrix> = stab_en
        .matrices
        .into_iter()
        .filter(|u| {
            let uf = u.to_f64();
            let g = uf.transpose() * y * uf;
            (g - y).amax() <= 1e-9
        })
        .collect();

    // orbit representatives under left multiplication by the stabilizer
    let mut representatives: Vec<UnimodularMatrix> = Vec::new();
    let mut seen: Vec<Vec<i64>> = Vec::new();
    for u in &minimizers {
        let key = entry_key(u);
        if seen.contains(&key) {
            continue;
        }
        let mut orbit: Vec<Vec<i64>> = stabilizer
            .iter()
            .map(|h| entry_key(&h.mul(u)))
            .collect();
        orbit.sort();
        let canonical = orbit.first().cloned().unwrap_or(key);
        seen.extend(orbit);
        let cm = IMat::from_fn(d, d, |i, j| canonical[i * d + j]);
        representatives.push(UnimodularMatrix::new(cm)?);
    }
    representatives.sort_by(|a, b| entry_key(a).cmp(&entry_key(b)));
    representatives.dedup_by(|a, b| entry_key(a) == entry_key(b));
    Ok(MinimaAnalysis {
        minimum,
        stabilizer,
        representatives,
    })
}

/// Complex value stored as e^{ln_scale} * value, so magnitudes far below the
/// floating-point range stay comparable.
#[derive(Debug, Clone, Copy)]
pub struct ScaledComplex {
    pub ln_scale: f64,
    pub value: Complex64,
}

impl ScaledComplex {
    pub fn to_complex(self) -> Complex64 {
        self.value * self.ln_scale.exp()
    }

    /// Natural log of the modulus; -inf for zero.
    pub fn ln_abs(self) -> f64 {
        self.ln_scale + self.value.norm().ln()
    }
}

/// Tail of sum over integer vectors x in Z^dim with |x|^2 > r2 of
/// e^{-alpha |x|^2}, bounded by sup-norm shells.
fn matrix_shell_tail(dim: usize, alpha: f64, r2: f64) -> f64 {
    let t0 = ((r2 / dim as f64).sqrt().floor() as i64).max(1);
    let mut tail = 0.0f64;
    let mut t = t0;
    loop {
        let count =
            (2.0 * t as f64 + 3.0).powi(dim as i32) - (2.0 * t as f64 - 1.0).max(0.0).powi(dim as i32);
        let term = count * (-alpha * (t * t) as f64).exp();
        tail += term;
        t += 1;
        if term < tail * 1e-8 || term < f64::MIN_POSITIVE || t > t0 + 10_000 {
            break;
        }
    }
    tail
}

/// True when the first column of U is congruent to 2a mod 2.
pub fn in_gl_class(u: &UnimodularMatrix, a: &ThetaChar) -> bool {
    let d = u.dim();
    if a.dim() != d {
        return false;
    }
    (0..d).all(|i| {
        let parity = u.entries()[(i, 0)].rem_euclid(2);
        let target = if a.a()[i] == Rat::new(1, 2) { 1 } else { 0 };
        parity == target
    })
}

struct GlSumSetup {
    members: Vec<UnimodularMatrix>,
}

/// Grows the trace bound until the certified shell tail drops below
/// `rel_tol` times the largest enumerated term magnitude
/// e^{-2 pi (s - t1n^2 q1)}, then returns the class members.
fn certified_gl_enumeration(
    that_f: &RMat,
    y: &RMat,
    t1n: f64,
    class: Option<&ThetaChar>,
    rel_tol: f64,
    max_radius: usize,
) -> Result<GlSumSetup> {
    let d = y.nrows();
    let lam_t = min_eigenvalue(that_f);
    let lam_y = min_eigenvalue(y);
    if lam_t <= t1n * t1n {
        return Err(Error::Precondition(format!(
            "smallest eigenvalue {lam_t:.6} of the leading block does not exceed T_1n^2 = {}",
            t1n * t1n
        )));
    }
    let c_decay = 1.0 - t1n * t1n / lam_t;
    let mut bound = (that_f * y).trace() * 1.2 + 1.0;
    loop {
        let radius = (bound / (lam_t * lam_y)).sqrt().ceil() as usize;
        if radius > max_radius {
            return Err(Error::TruncationFailure {
                needed: radius,
                cap: max_radius,
            });
        }
        let en = enumerate_bounded(that_f, y, bound)?;
        let members: Vec<UnimodularMatrix> = en
            .matrices
            .into_iter()
            .filter(|u| class.map_or(true, |a| in_gl_class(u, a)))
            .collect();
        if !members.is_empty() {
            let mag_dom = members
                .iter()
                .map(|u| {
                    let s = trace_t_gram(that_f, y, u);
                    let q1 = first_column_quad(y, u);
                    (-TWO_PI * (s - t1n * t1n * q1)).min(700.0)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let tail = matrix_shell_tail(d * d, TWO_PI * c_decay * lam_t * lam_y, bound / (lam_t * lam_y));
            if tail.ln() <= rel_tol.ln() + mag_dom {
                return Ok(GlSumSetup { members });
            }
        }
        bound *= 1.35;
    }
}

fn first_column_quad(y: &RMat, u: &UnimodularMatrix) -> f64 {
    let d = u.dim();
    let mut q = 0.0;
    for i in 0..d {
        for j in 0..d {
            q += u.entries()[(i, 0)] as f64 * y[(i, j)] * u.entries()[(j, 0)] as f64;
        }
    }
    q
}

fn check_psi_shape(t: &HalfEvenMatrix, d: usize) -> Result<(RatMat, Rat)> {
    if t.dim() != d + 1 {
        return Err(Error::DimensionMismatch(format!(
            "T has dimension {}, expected {}",
            t.dim(),
            d + 1
        )));
    }
    let t1n = t.t1n();
    if !(t1n.is_zero() || t1n == Rat::new(1, 2)) {
        return Err(Error::Precondition(format!(
            "corner entry T_1n = {t1n} must be 0 or 1/2"
        )));
    }
    for i in 1..d {
        if !t.get(i, d).is_zero() {
            return Err(Error::Precondition(format!(
                "entry T_{{{},n}} = {} must vanish",
                i + 1,
                t.get(i, d)
            )));
        }
    }
    Ok((t.leading_block(), t1n))
}

/// psi(a,T)(Zhat): for T_1n = 1/2 the sum over the class GL_a of
/// e^{2 pi i (sigma(U That U^t Zhat) - (1/2) pi i U_1^t Zhat U_1 / ...)}; for
/// T_1n = 0 the sum runs over the whole unimodular group. Returned in scaled
/// form since the dominant magnitude e^{-2 pi sigma(That U^t Yhat U)} can sit
/// far below the floating-point range.
pub fn psi_eval_scaled(
    a: &ThetaChar,
    t: &HalfEvenMatrix,
    zhat: &UpperHalfPoint,
    budget: &TruncationBudget,
) -> Result<ScaledComplex> {
    if a.m() != 1 {
        return Err(Error::Precondition("psi needs index m = 1".into()));
    }
    let d = zhat.dim();
    if a.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "characteristic length {}, point dimension {d}",
            a.dim()
        )));
    }
    let (that, t1n) = check_psi_shape(t, d)?;
    let class = if t1n.is_zero() {
        if !a.is_zero() {
            return Err(Error::Precondition(
                "for T_1n = 0 only the zero characteristic is defined".into(),
            ));
        }
        None
    } else {
        if a.is_zero() {
            // a unimodular first column is never all even
            return Err(Error::Precondition(
                "for T_1n = 1/2 the class of the zero characteristic is empty".into(),
            ));
        }
        Some(a)
    };
    let that_f = that.to_f64();
    let t1n_f = rat_to_f64(t1n);
    let setup = certified_gl_enumeration(
        &that_f,
        zhat.y(),
        t1n_f,
        class,
        budget.tol,
        budget.max_radius,
    )?;
    let zc = zhat.z();
    let exponents: Vec<Complex64> = setup
        .members
        .iter()
        .map(|u| {
            let uf = u.to_f64();
            let af = &uf * that.to_f64() * uf.transpose();
            let mut tr = Complex64::zero();
            for i in 0..d {
                for j in 0..d {
                    tr += zc[(i, j)] * af[(j, i)];
                }
            }
            let mut q1 = Complex64::zero();
            for i in 0..d {
                for j in 0..d {
                    q1 += zc[(i, j)] * (u.entries()[(i, 0)] * u.entries()[(j, 0)]) as f64;
                }
            }
            Complex64::i() * TWO_PI * (tr - q1 * (t1n_f * t1n_f))
        })
        .collect();
    let m0 = exponents
        .iter()
        .map(|w| w.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut acc = KahanSum::default();
    for w in &exponents {
        acc.add((w - Complex64::new(m0, 0.0)).exp());
    }
    Ok(ScaledComplex {
        ln_scale: m0,
        value: acc.value(),
    })
}

pub fn psi_eval(
    a: &ThetaChar,
    t: &HalfEvenMatrix,
    zhat: &UpperHalfPoint,
    budget: &TruncationBudget,
) -> Result<Complex64> {
    Ok(psi_eval_scaled(a, t, zhat, budget)?.to_complex())
}

/// Tail constant: sum over a shifted lattice u of e^{-2 pi (u^t Y u - 2 |u| v)},
/// bounded by sup-norm shells; finite for any positive definite Y.
fn shifted_gaussian_sum_bound(d: usize, lam_y: f64, vnorm: f64) -> f64 {
    let hump = (2.0 * (d as f64).sqrt() * vnorm / lam_y).ceil() as i64 + 1;
    let mut s = 0.0f64;
    let mut t: i64 = 0;
    loop {
        let count =
            (2.0 * t as f64 + 3.0).powi(d as i32) - (2.0 * t as f64 - 1.0).max(0.0).powi(d as i32);
        let e = -TWO_PI * (lam_y * (t * t) as f64 - 2.0 * (d as f64).sqrt() * t as f64 * vnorm);
        let term = count * e.min(700.0).exp();
        s += term;
        t += 1;
        if t > hump && (term < s * 1e-9 || term < f64::MIN_POSITIVE) {
            break;
        }
        if t > hump + 100_000 {
            break;
        }
    }
    s
}

/// First z_nn-layer of the unimodular subseries in its theta-decomposition
/// normalization:
///
///   g_1(T, Zhat, zhat) = sum over Uhat in GL(n-1,Z) and c in Z^{n-1} of
///     e^{2 pi i (sigma(That Uhat^t Zhat Uhat) + 2 T_1n c^t Zhat Uhat_1
///                + c^t Zhat c + 2 (c + T_1n Uhat_1)^t zhat)}
///
/// (one sign of the corner entry U_nn; the opposite sign reproduces the same
/// terms through U -> -U, so the full-group layer is exactly twice this).
pub fn g1_eval(
    t: &HalfEvenMatrix,
    zhat: &UpperHalfPoint,
    zvec: &[Complex64],
    budget: &TruncationBudget,
) -> Result<Complex64> {
    let d = zhat.dim();
    if zvec.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "vector length {}, point dimension {d}",
            zvec.len()
        )));
    }
    let (that, t1n) = check_psi_shape(t, d)?;
    if t.corner() != Rat::from_integer(1) {
        return Err(Error::Precondition(format!(
            "corner entry T_nn = {} must be 1",
            t.corner()
        )));
    }
    let that_f = that.to_f64();
    let lam_t = min_eigenvalue(&that_f);
    if lam_t < 3.0 - 1e-9 {
        return Err(Error::Precondition(format!(
            "leading block needs eigenvalues >= 3, smallest is {lam_t:.6}"
        )));
    }
    let t1n_f = rat_to_f64(t1n);
    let y = zhat.y();
    let lam_y = min_eigenvalue(y);
    let c_decay = 1.0 - t1n_f * t1n_f / lam_t;
    let vnorm: f64 = zvec.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
    let sv = shifted_gaussian_sum_bound(d, lam_y, vnorm);

    let mut bound = (&that_f * y).trace() * 1.2 + 1.0;
    let members = loop {
        let radius = (bound / (lam_t * lam_y)).sqrt().ceil() as usize;
        if radius > budget.max_radius {
            return Err(Error::TruncationFailure {
                needed: radius,
                cap: budget.max_radius,
            });
        }
        let tail = sv * matrix_shell_tail(d * d, TWO_PI * c_decay * lam_t * lam_y, bound / (lam_t * lam_y));
        if tail <= budget.tol * 0.5 {
            break enumerate_bounded(&that_f, y, bound)?.matrices;
        }
        bound *= 1.35;
    };

    let zc = zhat.z();
    let n_terms = members.len().max(1) as f64;
    let mut acc = KahanSum::default();
    for u in &members {
        let uf = u.to_f64();
        let af = &uf * that.to_f64() * uf.transpose();
        let mut tr = Complex64::zero();
        for i in 0..d {
            for j in 0..d {
                tr += zc[(i, j)] * af[(j, i)];
            }
        }
        let u1: Vec<f64> = (0..d).map(|i| u.entries()[(i, 0)] as f64).collect();
        let lin: Complex64 = (0..d).map(|i| zvec[i] * u1[i]).sum();
        let pref = (Complex64::i() * TWO_PI * (tr + lin * (2.0 * t1n_f))).exp();
        // inner theta argument w = T_1n * Zhat Uhat_1 + zhat
        let w: Vec<Complex64> = (0..d)
            .map(|i| {
                let zu: Complex64 = (0..d).map(|j| zc[(i, j)] * u1[j]).sum();
                zu * t1n_f + zvec[i]
            })
            .collect();
        let tol_inner = (budget.tol / (4.0 * n_terms * pref.norm().max(1e-100))).min(1e-3);
        let inner_budget = TruncationBudget::new(tol_inner, budget.max_radius)?;
        let inner = theta_eval(&ThetaChar::zero(1, d), zhat, &w, &inner_budget)?;
        acc.add(pref * inner);
    }
    Ok(acc.value())
}

/// G(T,Z): the sum over the full unimodular group of
/// e^{2 pi i sigma(T U^t Z U)}, with the certified relative tail of the
/// bounded enumeration.
pub fn gl_sum(t: &RatMat, z: &UpperHalfPoint, rel_tol: f64, max_radius: usize) -> Result<Complex64> {
    if !t.is_symmetric() || !t.is_positive_definite() {
        return Err(Error::NotPositiveDefinite("GL-sum coefficient matrix".into()));
    }
    let d = z.dim();
    if t.rows != d {
        return Err(Error::DimensionMismatch(format!(
            "T has dimension {}, point has dimension {d}",
            t.rows
        )));
    }
    let t_f = t.to_f64();
    let setup = certified_gl_enumeration(&t_f, z.y(), 0.0, None, rel_tol, max_radius)?;
    let zc = z.z();
    let mut acc = KahanSum::default();
    for u in &setup.members {
        let uf = u.to_f64();
        let af = &uf * &t_f * uf.transpose();
        let mut tr = Complex64::zero();
        for i in 0..d {
            for j in 0..d {
                tr += zc[(i, j)] * af[(j, i)];
            }
        }
        acc.add((Complex64::i() * TWO_PI * tr).exp());
    }
    Ok(acc.value())
}

/// The sum over GL(n-1,Z) of e^{2 pi i sigma(U That U^t Zhat)} with the
/// enumeration and coefficient matrices built once for a fixed imaginary
/// part; evaluations vary only the real part.
#[derive(Debug, Clone)]
pub struct GlSumKernel {
    y: RMat,
    coeffs: Vec<RMat>,
}

impl GlSumKernel {
    pub fn build(that: &RatMat, y: &RMat, rel_tol: f64, max_radius: usize) -> Result<Self> {
        if !that.is_symmetric() || !that.is_positive_definite() {
            return Err(Error::NotPositiveDefinite("GL-sum coefficient matrix".into()));
        }
        let that_f = that.to_f64();
        let setup = certified_gl_enumeration(&that_f, y, 0.0, None, rel_tol, max_radius)?;
        let coeffs = setup
            .members
            .iter()
            .map(|u| {
                let uf = u.to_f64();
                &uf * &that_f * uf.transpose()
            })
            .collect();
        Ok(GlSumKernel {
            y: y.clone_owned(),
            coeffs,
        })
    }

    pub fn term_count(&self) -> usize {
        self.coeffs.len()
    }

    pub fn eval(&self, zhat: &UpperHalfPoint) -> Result<Complex64> {
        if (zhat.y() - &self.y).amax() > 1e-12 {
            return Err(Error::Precondition(
                "kernel was built for a different imaginary part".into(),
            ));
        }
        let d = self.y.nrows();
        let zc = zhat.z();
        let mut acc = KahanSum::default();
        for a in &self.coeffs {
            let mut tr = Complex64::zero();
            for i in 0..d {
                for j in 0..d {
                    tr += zc[(i, j)] * a[(j, i)];
                }
            }
            acc.add((Complex64::i() * TWO_PI * tr).exp());
        }
        Ok(acc.value())
    }
}

/// Strategy for picking the pre-scaling matrix T-tilde.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TStrategy {
    /// Perturb the identity toward a strict trace ordering.
    Generic,
    /// Start from the inverse of Y (equal-determinant heuristic), then
    /// perturb the same way if ties remain.
    EqualDeterminant,
}

/// The 2^{n-1} matrices T(t) of the rank probe: one with T_1n = 0 built from
/// the base block, and one with T_1n = 1/2 per nonzero characteristic, built
/// from the conjugated blocks That_j = W_j^{-1} That W_j^{-t}.
#[derive(Debug, Clone)]
pub struct TFamily {
    pub t_tilde: RatMat,
    pub q0: i64,
    pub base: RatMat,
    pub rep1: UnimodularMatrix,
    pub conjugators: Vec<UnimodularMatrix>,
    pub members: Vec<(ThetaChar, HalfEvenMatrix)>,
}

impl TFamily {
    /// Member with the leading block scaled by q (q = 1 reproduces the stored
    /// member).
    pub fn member_scaled(&self, idx: usize, q: i64) -> Result<HalfEvenMatrix> {
        if q < 1 {
            return Err(Error::Precondition("scale q must be positive".into()));
        }
        let (_, t) = &self.members[idx];
        let n = t.dim();
        let scaled = RatMat::from_fn(n, n, |i, j| {
            if i < n - 1 && j < n - 1 {
                t.get(i, j) * Rat::from_integer(q)
            } else {
                t.get(i, j)
            }
        });
        HalfEvenMatrix::new(scaled)
    }

    pub fn characteristic(&self, idx: usize) -> &ThetaChar {
        &self.members[idx].0
    }
}

fn assemble_full(that: &RatMat, t1n: Rat) -> Result<HalfEvenMatrix> {
    let d = that.rows;
    let n = d + 1;
    let full = RatMat::from_fn(n, n, |i, j| match (i == d, j == d) {
        (false, false) => that.get(i, j),
        (true, true) => Rat::from_integer(1),
        (false, true) => {
            if i == 0 {
                t1n
            } else {
                Rat::zero()
            }
        }
        (true, false) => {
            if j == 0 {
                t1n
            } else {
                Rat::zero()
            }
        }
    });
    HalfEvenMatrix::new(full)
}

pub fn build_t_family(y: &RatMat, strategy: TStrategy) -> Result<TFamily> {
    let d = y.rows;
    if !y.is_symmetric() || !y.is_positive_definite() {
        return Err(Error::NotPositiveDefinite("Y for the T-family".into()));
    }
    let yf = y.to_f64();

    // exact minimizing set of sigma(U^t Y U) and its distinct Gram matrices
    let id_trace: Rat = (0..d).map(|i| y.get(i, i)).sum();
    let en = enumerate_bounded(&RMat::identity(d, d), &yf, rat_to_f64(id_trace) + 1e-6)?;
    let exact_trace = |u: &UnimodularMatrix| -> Rat {
        let ur = u.to_rational();
        ur.transpose().mul(y).mul(&ur).trace()
    };
    let min_trace = en
        .matrices
        .iter()
        .map(exact_trace)
        .min()
        .ok_or_else(|| Error::Precondition("empty enumeration".into()))?;
    let minimizers: Vec<&UnimodularMatrix> = en
        .matrices
        .iter()
        .filter(|u| exact_trace(u) == min_trace)
        .collect();
    let mut grams: Vec<RatMat> = Vec::new();
    let mut gram_rep: Vec<UnimodularMatrix> = Vec::new();
    for u in &minimizers {
        let ur = u.to_rational();
        let g = ur.transpose().mul(y).mul(&ur);
        if !grams.contains(&g) {
            grams.push(g);
            gram_rep.push((*u).clone());
        }
    }

    // pre-scaling matrix: strict ordering of sigma(T-tilde G) over the grams
    let base = match strategy {
        TStrategy::Generic => RatMat::identity(d),
        TStrategy::EqualDeterminant => y.inverse(),
    };
    let t_tilde = perturb_to_strict_ordering(&base, &grams)?;

    // integer scaling with eigenvalues >= 3
    let mut lcm: i64 = 1;
    for i in 0..d {
        for j in 0..d {
            lcm = lcm.lcm(t_tilde.get(i, j).denom());
        }
    }
    let mut q0 = lcm;
    while min_eigenvalue(&t_tilde.scale(Rat::from_integer(q0)).to_f64()) < 3.0 - 1e-12 {
        q0 += lcm;
    }
    let that = t_tilde.scale(Rat::from_integer(q0));
    debug_assert!(that.is_integer());

    // the representative with the smallest perturbed trace
    let rep1 = gram_rep
        .iter()
        .min_by_key(|u| {
            let ur = u.to_rational();
            t_tilde.trace_mul(&ur.transpose().mul(y).mul(&ur))
        })
        .cloned()
        .ok_or_else(|| Error::Precondition("no minimizing representative".into()))?;

    // conjugators: W_j with first column solving rep1 * w = 2a mod 2
    let rep1_inv = rep1.inverse();
    let chars = ThetaChar::half_integer_chars(d);
    let mut conjugators = Vec::new();
    let mut members = Vec::new();
    members.push((chars[0].clone(), assemble_full(&that, Rat::zero())?));
    for a in chars.iter().skip(1) {
        let target: Vec<i64> = a
            .a()
            .iter()
            .map(|&ai| if ai == Rat::new(1, 2) { 1 } else { 0 })
            .collect();
        let w0: Vec<i64> = (0..d)
            .map(|i| {
                let mut s: i64 = 0;
                for j in 0..d {
                    s += rep1_inv.entries()[(i, j)] * target[j];
                }
                s.rem_euclid(2)
            })
            .collect();
        let w = complete_to_unimodular(&w0)?;
        let winv = w.inverse().to_rational();
        let that_j = winv.mul(&that).mul(&winv.transpose());
        if !that_j.is_integer() || !that_j.is_positive_definite() {
            return Err(Error::Precondition(
                "conjugated block failed the integrality or definiteness check".into(),
            ));
        }
        // minimum-shift property, exact: conjugation cancels inside the trace
        let u1w = rep1.mul(&w).to_rational();
        let lhs = that_j.trace_mul(&u1w.transpose().mul(y).mul(&u1w));
        let u1r = rep1.to_rational();
        let rhs = that.trace_mul(&u1r.transpose().mul(y).mul(&u1r));
        if lhs != rhs {
            return Err(Error::Precondition(format!(
                "minimum-shift property violated: {lhs} != {rhs}"
            )));
        }
        members.push((a.clone(), assemble_full(&that_j, Rat::new(1, 2))?));
        conjugators.push(w);
    }

    Ok(TFamily {
        t_tilde,
        q0,
        base: that,
        rep1,
        conjugators,
        members,
    })
}

/// Searches symmetric elementary perturbations base + (p/N)(E_kl + E_lk) with
/// N doubling until sigma(T G) takes pairwise distinct values on the listed
/// Gram matrices.
fn perturb_to_strict_ordering(base: &RatMat, grams: &[RatMat]) -> Result<RatMat> {
    let d = base.rows;
    let distinct = |t: &RatMat| -> bool {
        let mut traces: Vec<Rat> = grams.iter().map(|g| t.trace_mul(g)).collect();
        traces.sort();
        traces.windows(2).all(|w| w[0] != w[1])
    };
    if base.is_positive_definite() && distinct(base) {
        return Ok(base.clone());
    }
    for exp in 2..=14u32 {
        let n = 1i64 << exp;
        for k in 0..d {
            for l in k..d {
                for p in 1..=3i64 {
                    let eps = Rat::new(p, n);
                    let cand = RatMat::from_fn(d, d, |i, j| {
                        let mut v = base.get(i, j);
                        if (i, j) == (k, l) {
                            v += eps;
                        }
                        if (i, j) == (l, k) && k != l {
                            v += eps;
                        }
                        v
                    });
                    if cand.is_positive_definite() && distinct(&cand) {
                        return Ok(cand);
                    }
                }
            }
        }
    }
    let mut witnesses = Vec::new();
    for (i, gi) in grams.iter().enumerate() {
        for (j, gj) in grams.iter().enumerate().skip(i + 1) {
            if base.trace_mul(gi) == base.trace_mul(gj) {
                witnesses.push(format!("grams {i} and {j}"));
            }
        }
    }
    Err(Error::PerturbationFailure(witnesses.join(", ")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn budget() -> TruncationBudget {
        TruncationBudget {
            tol: 1e-12,
            max_radius: 60,
        }
    }

    fn char1(half: bool) -> ThetaChar {
        ThetaChar::new(1, vec![if half { Rat::new(1, 2) } else { Rat::zero() }]).unwrap()
    }

    #[test]
    fn signed_permutations_at_the_minimum() {
        let i2 = RMat::identity(2, 2);
        let en = enumerate_bounded(&i2, &i2, 2.0).unwrap();
        assert_eq!(en.matrices.len(), 8);
        for u in &en.matrices {
            let uf = u.to_f64();
            assert!(((uf.transpose() * &uf) - RMat::identity(2, 2)).amax() < 1e-12);
        }
        let empty = enumerate_bounded(&i2, &i2, 1.9).unwrap();
        assert!(empty.matrices.is_empty());
    }

    #[test]
    fn dimension_one_units() {
        let t = RMat::from_element(1, 1, 3.0);
        let y = RMat::from_element(1, 1, 2.0);
        let en = enumerate_bounded(&t, &y, 6.0).unwrap();
        let entries: Vec<i64> = en.matrices.iter().map(|u| u.entries()[(0, 0)]).collect();
        assert_eq!(entries, vec![-1, 1]);
    }

    #[test]
    fn completeness_against_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let g = RMat::from_fn(2, 2, |_, _| rng.gen_range(-0.5..0.5));
            let y = &g * g.transpose() + RMat::identity(2, 2) * 2.0;
            let t = {
                let h = RMat::from_fn(2, 2, |_, _| rng.gen_range(-0.3..0.3));
                &h * h.transpose() + RMat::identity(2, 2)
            };
            let bound = (&t * &y).trace() + 2.0;
            let en = enumerate_bounded(&t, &y, bound).unwrap();
            let mut brute = Vec::new();
            for a in -3..=3i64 {
                for b in -3..=3i64 {
                    for c in -3..=3i64 {
                        for d in -3..=3i64 {
                            let m = IMat::from_row_slice(2, 2, &[a, b, c, d]);
                            if let Ok(u) = UnimodularMatrix::new(m) {
                                if trace_t_gram(&t, &y, &u) <= bound {
                                    brute.push(entry_key(&u));
                                }
                            }
                        }
                    }
                }
            }
            brute.sort();
            let got: Vec<Vec<i64>> = en.matrices.iter().map(entry_key).collect();
            assert_eq!(got, brute);
        }
    }

    #[test]
    fn overflow_reports_cap() {
        let i2 = RMat::identity(2, 2);
        match enumerate_bounded_with_cap(&i2, &i2, 50.0, 100) {
            Err(Error::EnumerationOverflow(cap)) => assert_eq!(cap, 100),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn minima_identity_case() {
        let i2 = RMat::identity(2, 2);
        let m = minima_analysis(&i2, &i2).unwrap();
        assert!((m.minimum - 2.0).abs() < 1e-12);
        assert_eq!(m.stabilizer.len(), 8);
        assert_eq!(m.representatives.len(), 1);
    }

    #[test]
    fn minima_skew_diagonal_case() {
        let y = RMat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 7.0]);
        let m = minima_analysis(&y, &RMat::identity(2, 2)).unwrap();
        assert!((m.minimum - 8.0).abs() < 1e-12);
        assert_eq!(m.stabilizer.len(), 4);
        for h in &m.stabilizer {
            assert_eq!(h.entries()[(0, 1)], 0);
            assert_eq!(h.entries()[(1, 0)], 0);
        }
    }

    #[test]
    fn minima_dimension_one() {
        let y = RMat::from_element(1, 1, 0.7);
        let t = RMat::from_element(1, 1, 2.0);
        let m = minima_analysis(&y, &t).unwrap();
        assert!((m.minimum - 1.4).abs() < 1e-12);
        assert_eq!(m.stabilizer.len(), 2);
    }

    fn half_even(entries: &[(usize, usize, Rat)], n: usize) -> HalfEvenMatrix {
        let mut m = RatMat::zeros(n, n);
        for &(i, j, v) in entries {
            m.set(i, j, v);
            m.set(j, i, v);
        }
        HalfEvenMatrix::new(m).unwrap()
    }

    fn t_n2(t: i64, half_corner: bool) -> HalfEvenMatrix {
        half_even(
            &[
                (0, 0, Rat::from_integer(t)),
                (1, 1, Rat::from_integer(1)),
                (0, 1, if half_corner { Rat::new(1, 2) } else { Rat::zero() }),
            ],
            2,
        )
    }

    #[test]
    fn psi_closed_forms_in_dimension_one() {
        let z11 = Complex64::new(0.27, 0.31);
        let zp = UpperHalfPoint::scalar(z11).unwrap();
        let t = 3i64;

        let v0 = psi_eval(&char1(false), &t_n2(t, false), &zp, &budget()).unwrap();
        let expect0 = (Complex64::i() * TWO_PI * t as f64 * z11).exp() * 2.0;
        assert!((v0 - expect0).norm() < 1e-12 * expect0.norm());

        let vh = psi_eval(&char1(true), &t_n2(t, true), &zp, &budget()).unwrap();
        let expecth =
            (Complex64::i() * (TWO_PI * t as f64 * z11 - 0.5 * PI * z11)).exp() * 2.0;
        assert!((vh - expecth).norm() < 1e-12 * expecth.norm());
    }

    #[test]
    fn psi_against_direct_enumeration_oracle() {
        // leading block [[2,1],[1,2]], full T with T_1n = 1/2
        let t = half_even(
            &[
                (0, 0, Rat::from_integer(2)),
                (1, 1, Rat::from_integer(2)),
                (0, 1, Rat::from_integer(1)),
                (2, 2, Rat::from_integer(1)),
                (0, 2, Rat::new(1, 2)),
            ],
            3,
        );
        let zp = UpperHalfPoint::new(RMat::zeros(2, 2), RMat::identity(2, 2)).unwrap();
        for a in ThetaChar::half_integer_chars(2).iter().skip(1) {
            let fast = psi_eval_scaled(a, &t, &zp, &budget()).unwrap();
            let mut oracle = Complex64::zero();
            let that = RMat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
            for e in 0..(13i64.pow(4)) {
                let vals: Vec<i64> = (0..4).map(|k| (e / 13i64.pow(k)) % 13 - 6).collect();
                let m = IMat::from_row_slice(2, 2, &vals);
                if let Ok(u) = UnimodularMatrix::new(m) {
                    if in_gl_class(&u, a) {
                        let uf = u.to_f64();
                        let af = &uf * &that * uf.transpose();
                        let s = af.trace();
                        let q1 = first_column_quad(&RMat::identity(2, 2), &u);
                        // at Zhat = i I the term is real: e^{-2 pi s + pi q1 / 2}
                        oracle += Complex64::new((-TWO_PI * s + 0.5 * PI * q1).exp(), 0.0);
                    }
                }
            }
            let fast_c = fast.to_complex();
            assert!(
                (fast_c - oracle).norm() <= 1e-10 * oracle.norm().max(1e-300),
                "char {:?}: fast {fast_c} oracle {oracle}",
                a.a()
            );
        }
    }

    #[test]
    fn class_partition_covers_the_group() {
        let i2 = RMat::identity(2, 2);
        let en = enumerate_bounded(&i2, &i2, 12.0).unwrap();
        let chars = ThetaChar::half_integer_chars(2);
        let mut total = 0usize;
        for a in &chars {
            total += en.matrices.iter().filter(|u| in_gl_class(u, a)).count();
        }
        assert_eq!(total, en.matrices.len());
        // the all-even class is empty
        assert_eq!(
            en.matrices.iter().filter(|u| in_gl_class(u, &chars[0])).count(),
            0
        );
    }

    #[test]
    fn g1_matches_the_closed_form_in_dimension_one() {
        let z11 = Complex64::new(0.21, 0.17);
        let zp = UpperHalfPoint::scalar(z11).unwrap();
        let zv = [Complex64::new(0.13, 0.08)];
        let t = t_n2(3, true);
        let g1 = g1_eval(&t, &zp, &zv, &budget()).unwrap();
        let psi = psi_eval(&char1(true), &t, &zp, &budget()).unwrap();
        let theta = theta_eval(&char1(true), &zp, &zv, &budget()).unwrap();
        assert!(
            (g1 - psi * theta).norm() <= 3e-12,
            "difference {}",
            (g1 - psi * theta).norm()
        );

        let t0 = t_n2(3, false);
        let g1 = g1_eval(&t0, &zp, &zv, &budget()).unwrap();
        let psi = psi_eval(&char1(false), &t0, &zp, &budget()).unwrap();
        let theta = theta_eval(&char1(false), &zp, &zv, &budget()).unwrap();
        assert!((g1 - psi * theta).norm() <= 3e-12);
    }

    #[test]
    fn g1_matches_the_full_layer_extraction() {
        // extract the e^{2 pi i z_22} layer of the full-group sum G(T,Z) by
        // quadrature in x_22; U and -U contribute identically, so the layer
        // is twice g1.
        let t = t_n2(3, true);
        let tf = t.to_f64();
        let y = RMat::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 2.0]);
        let x_base = RMat::from_row_slice(2, 2, &[0.11, 0.21, 0.21, 0.0]);
        let bound = (&tf * &y).trace() + 25.0;
        let en = enumerate_bounded(&tf, &y, bound).unwrap();
        let grid = 8usize;
        let mut layer = Complex64::zero();
        for p in 0..grid {
            let x22 = p as f64 / grid as f64;
            let mut x = x_base.clone_owned();
            x[(1, 1)] = x22;
            let z = UpperHalfPoint::new(x, y.clone_owned()).unwrap();
            let zc = z.z();
            let mut g = KahanSum::default();
            for u in &en.matrices {
                let uf = u.to_f64();
                let af = &uf * &tf * uf.transpose();
                let mut tr = Complex64::zero();
                for i in 0..2 {
                    for j in 0..2 {
                        tr += zc[(i, j)] * af[(j, i)];
                    }
                }
                g.add((Complex64::i() * TWO_PI * tr).exp());
            }
            layer += g.value() * (-Complex64::i() * TWO_PI * x22).exp();
        }
        layer /= grid as f64;
        layer *= (TWO_PI * y[(1, 1)]).exp(); // divide out e^{2 pi i z_22} at x_22 = 0

        let zhat = UpperHalfPoint::scalar(Complex64::new(0.11, 0.3)).unwrap();
        let zv = [Complex64::new(0.21, 0.05)];
        let g1 = g1_eval(&t, &zhat, &zv, &budget()).unwrap();
        assert!(
            (layer - g1 * 2.0).norm() <= 1e-8,
            "layer {layer}, 2 g1 {}",
            g1 * 2.0
        );
    }

    #[test]
    fn kernel_matches_psi_with_zero_corner() {
        let that = RatMat::from_fn(2, 2, |i, j| {
            if i == j {
                Rat::from_integer(1)
            } else {
                Rat::new(1, 2)
            }
        });
        let y = RMat::from_row_slice(2, 2, &[1.1, 0.2, 0.2, 1.4]);
        let kernel = GlSumKernel::build(&that, &y, 1e-10, 80).unwrap();
        let x = RMat::from_row_slice(2, 2, &[0.31, -0.12, -0.12, 0.44]);
        let z = UpperHalfPoint::new(x, y.clone_owned()).unwrap();
        let v = kernel.eval(&z).unwrap();
        // direct oracle with entries up to 6
        let that_f = that.to_f64();
        let mut oracle = Complex64::zero();
        let zc = z.z();
        for e in 0..(13i64.pow(4)) {
            let vals: Vec<i64> = (0..4).map(|k| (e / 13i64.pow(k)) % 13 - 6).collect();
            let m = IMat::from_row_slice(2, 2, &vals);
            if let Ok(u) = UnimodularMatrix::new(m) {
                let uf = u.to_f64();
                let af = &uf * &that_f * uf.transpose();
                let mut tr = Complex64::zero();
                for i in 0..2 {
                    for j in 0..2 {
                        tr += zc[(i, j)] * af[(j, i)];
                    }
                }
                oracle += (Complex64::i() * TWO_PI * tr).exp();
            }
        }
        assert!(
            (v - oracle).norm() <= 1e-9 * oracle.norm(),
            "kernel {v}, oracle {oracle}"
        );
    }

    #[test]
    fn t_family_dimension_one() {
        let y = RatMat::identity(1);
        let fam = build_t_family(&y, TStrategy::Generic).unwrap();
        assert_eq!(fam.members.len(), 2);
        assert_eq!(fam.conjugators.len(), 1);
        assert_eq!(fam.conjugators[0].entries()[(0, 0)].abs(), 1);
        assert!(fam.members[0].1.t1n().is_zero());
        assert_eq!(fam.members[1].1.t1n(), Rat::new(1, 2));
        assert!(rat_to_f64(fam.base.get(0, 0)) >= 3.0);
    }

    #[test]
    fn t_family_identity_in_dimension_two() {
        let y = RatMat::identity(2);
        for strategy in [TStrategy::Generic, TStrategy::EqualDeterminant] {
            let fam = build_t_family(&y, strategy).unwrap();
            assert_eq!(fam.members.len(), 4);
            assert_eq!(fam.conjugators.len(), 3);
            // first columns of rep1 * W_j realize the three nonzero parities
            let mut seen = Vec::new();
            for (a, w) in ThetaChar::half_integer_chars(2)
                .iter()
                .skip(1)
                .zip(&fam.conjugators)
            {
                let col = fam.rep1.mul(w).first_column();
                let parity: Vec<i64> = col.iter().map(|c| c.rem_euclid(2)).collect();
                let target: Vec<i64> = a
                    .a()
                    .iter()
                    .map(|&ai| if ai == Rat::new(1, 2) { 1 } else { 0 })
                    .collect();
                assert_eq!(parity, target);
                seen.push(parity);
            }
            seen.dedup();
            assert_eq!(seen.len(), 3);
            // the base block carries the eigenvalue floor; conjugated blocks
            // only keep the psi convergence guard and regain the floor after
            // q-scaling
            assert!(min_eigenvalue(&fam.members[0].1.leading_block().to_f64()) >= 3.0 - 1e-9);
            for (_, t) in fam.members.iter().skip(1) {
                assert!(min_eigenvalue(&t.leading_block().to_f64()) > 0.25);
            }
        }
    }

    #[test]
    fn equal_determinant_base_is_the_inverse() {
        let y = RatMat::identity(2);
        let fam = build_t_family(&y, TStrategy::EqualDeterminant).unwrap();
        assert_eq!(fam.t_tilde, RatMat::identity(2));
    }

    #[test]
    fn scaled_complex_roundtrip() {
        let s = ScaledComplex {
            ln_scale: -300.0,
            value: Complex64::new(0.5, -0.25),
        };
        assert!((s.ln_abs() - (-300.0 + 0.559016994f64.ln())).abs() < 1e-6);
        assert_eq!(s.to_complex(), Complex64::zero() * 1.0 + s.value * (-300.0f64).exp());
    }
}
