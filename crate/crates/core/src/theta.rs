//! Theta functions with characteristics, evaluated by truncated lattice sums
//! with certified tails, together with their translation, parity,
//! unimodular-pushforward, and transformation laws.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use num_traits::Zero;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::symmat::{
    max_eigenvalue, min_eigenvalue, rat_to_f64, singular_values, CMat, CVec, IMat, Rat,
    SymplecticElement, UnimodularMatrix, UpperHalfPoint,
};
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Theta characteristic: index m and a vector of rationals in [0,1) with
/// denominators dividing 2m.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThetaChar {
    m: u32,
    a: Vec<Rat>,
}

impl ThetaChar {
    pub fn new(m: u32, a: Vec<Rat>) -> Result<Self> {
        if m == 0 || m > 4 {
            return Err(Error::BadCharacteristic(format!(
                "index m = {m} outside the supported range 1..=4"
            )));
        }
        for (i, &ai) in a.iter().enumerate() {
            if ai < Rat::zero() || ai >= Rat::from_integer(1) {
                return Err(Error::BadCharacteristic(format!(
                    "entry a[{i}] = {ai} not reduced to [0,1)"
                )));
            }
            if !(ai * Rat::from_integer(2 * m as i64)).is_integer() {
                return Err(Error::BadCharacteristic(format!(
                    "entry a[{i}] = {ai} has denominator not dividing {}",
                    2 * m
                )));
            }
        }
        Ok(ThetaChar { m, a })
    }

    /// The zero characteristic of the given length.
    pub fn zero(m: u32, len: usize) -> Self {
        ThetaChar {
            m,
            a: vec![Rat::zero(); len],
        }
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[Rat] {
        &self.a
    }

    pub fn a_f64(&self) -> Vec<f64> {
        self.a.iter().map(|&r| rat_to_f64(r)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.a.iter().all(|r| r.is_zero())
    }

    /// All 2^d half-integer characteristics at m = 1, in the fixed order used
    /// for coefficient tables: index j maps bit i (most significant first) to
    /// entry j_i / 2.
    pub fn half_integer_chars(d: usize) -> Vec<ThetaChar> {
        (0..1usize << d)
            .map(|j| ThetaChar {
                m: 1,
                a: (0..d)
                    .map(|i| {
                        if (j >> (d - 1 - i)) & 1 == 1 {
                            Rat::new(1, 2)
                        } else {
                            Rat::zero()
                        }
                    })
                    .collect(),
            })
            .collect()
    }

    /// Index of a half-integer characteristic in the order produced by
    /// [`ThetaChar::half_integer_chars`].
    pub fn half_integer_index(&self) -> Option<usize> {
        let d = self.dim();
        let mut idx = 0usize;
        for (i, &ai) in self.a.iter().enumerate() {
            if ai == Rat::new(1, 2) {
                idx |= 1 << (d - 1 - i);
            } else if !ai.is_zero() {
                return None;
            }
        }
        Some(idx)
    }

    /// The image characteristic b = Ua mod Z of the pushforward law.
    pub fn pushforward(&self, u: &UnimodularMatrix) -> Result<ThetaChar> {
        let d = self.dim();
        if u.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "characteristic has length {d}, matrix is {}x{}",
                u.dim(),
                u.dim()
            )));
        }
        let e = u.entries();
        let b: Vec<Rat> = (0..d)
            .map(|i| {
                let mut s = Rat::zero();
                for j in 0..d {
                    s += Rat::from_integer(e[(i, j)]) * self.a[j];
                }
                reduce_mod_one(s)
            })
            .collect();
        ThetaChar::new(self.m, b)
    }

    /// Phase e^{2 pi i a^t S a} of the translation law for integer symmetric S.
    pub fn translation_phase(&self, s: &IMat) -> Complex64 {
        let d = self.dim();
        let mut q = Rat::zero();
        for i in 0..d {
            for j in 0..d {
                q += self.a[i] * Rat::from_integer(s[(i, j)]) * self.a[j];
            }
        }
        Complex64::from_polar(1.0, TWO_PI * rat_to_f64(q))
    }
}

pub fn reduce_mod_one(r: Rat) -> Rat {
    let f = r.floor();
    r - f
}

/// Absolute tail tolerance together with a cap on the enumeration radius.
#[derive(Debug, Clone, Copy)]
pub struct TruncationBudget {
    pub tol: f64,
    pub max_radius: usize,
}

impl TruncationBudget {
    pub fn new(tol: f64, max_radius: usize) -> Result<Self> {
        if !(tol > 0.0) || max_radius == 0 {
            return Err(Error::Precondition(
                "budget needs tol > 0 and max_radius >= 1".into(),
            ));
        }
        Ok(TruncationBudget { tol, max_radius })
    }
}

impl Default for TruncationBudget {
    fn default() -> Self {
        TruncationBudget {
            tol: 1e-12,
            max_radius: 40,
        }
    }
}

/// Compensated (Kahan) accumulator for complex terms; with a fixed term
/// order the result is bit-reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: Complex64,
    comp: Complex64,
}

impl KahanSum {
    pub fn add(&mut self, term: Complex64) {
        let y = term - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> Complex64 {
        self.sum
    }
}

/// Theta function with characteristic:
/// sum over k in Z^{n-1} of e^{2 pi i m (k+a)^t Zhat (k+a) + 4 pi i m (k+a)^t zhat},
/// truncated to the ellipsoid (k+a)^t Yhat (k+a) <= C with C grown until the
/// certified tail bound drops below `budget.tol`.
pub fn theta_eval(
    c: &ThetaChar,
    zhat: &UpperHalfPoint,
    zvec: &[Complex64],
    budget: &TruncationBudget,
) -> Result<Complex64> {
    let d = zhat.dim();
    if c.dim() != d || zvec.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "characteristic length {}, point dimension {d}, vector length {}",
            c.dim(),
            zvec.len()
        )));
    }
    let y = zhat.y();
    let lam_min = min_eigenvalue(y);
    let lam_max = max_eigenvalue(y);
    let m = c.m() as f64;
    let v_norm: f64 = zvec.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();

    // Below this cutoff the linear term cannot beat half the quadratic one.
    let c_floor = (16.0 * v_norm * v_norm * lam_max / (lam_min * lam_min)).max(lam_min);
    let mut cutoff = c_floor;
    loop {
        let needed = required_radius(y, cutoff);
        if needed > budget.max_radius {
            return Err(Error::TruncationFailure {
                needed,
                cap: budget.max_radius,
            });
        }
        if tail_bound(d, m, lam_min, lam_max, cutoff) <= budget.tol {
            break;
        }
        cutoff *= 1.4;
    }

    let a = c.a_f64();
    let zc = zhat.z();
    let mut acc = KahanSum::default();
    for_each_ellipsoid_point(y, &a, cutoff, &mut |u| {
        let uv = DVector::from_column_slice(u);
        let uc = uv.map(|x| Complex64::new(x, 0.0));
        let quad = (uc.transpose() * &zc * &uc)[(0, 0)];
        let lin: Complex64 = u
            .iter()
            .zip(zvec.iter())
            .map(|(&ui, &zi)| zi * ui)
            .sum();
        let phase = Complex64::i() * (TWO_PI * m * quad + 2.0 * TWO_PI * m * lin);
        acc.add(phase.exp());
    });
    Ok(acc.value())
}

/// Plain box summation over |k_i| <= radius with no tail logic; the reference
/// implementation cross-checks are measured against.
pub fn theta_eval_reference(
    c: &ThetaChar,
    zhat: &UpperHalfPoint,
    zvec: &[Complex64],
    radius: i64,
) -> Complex64 {
    let d = zhat.dim();
    assert_eq!(c.dim(), d);
    assert_eq!(zvec.len(), d);
    let a = c.a_f64();
    let m = c.m() as f64;
    let zc = zhat.z();
    let mut acc = KahanSum::default();
    let mut k = vec![-radius; d];
    loop {
        let u: Vec<f64> = (0..d).map(|i| k[i] as f64 + a[i]).collect();
        let uc = DVector::from_iterator(d, u.iter().map(|&x| Complex64::new(x, 0.0)));
        let quad = (uc.transpose() * &zc * &uc)[(0, 0)];
        let lin: Complex64 = u.iter().zip(zvec.iter()).map(|(&ui, &zi)| zi * ui).sum();
        let phase = Complex64::i() * (TWO_PI * m * quad + 2.0 * TWO_PI * m * lin);
        acc.add(phase.exp());
        // odometer increment, lexicographic order
        let mut i = d;
        loop {
            if i == 0 {
                return acc.value();
            }
            i -= 1;
            if k[i] < radius {
                k[i] += 1;
                for kj in k.iter_mut().skip(i + 1) {
                    *kj = -radius;
                }
                break;
            }
        }
    }
}

/// Upper bound on the modulus sum of all lattice terms outside the cutoff
/// ellipsoid, by sup-norm shells: a shell at distance t holds at most
/// (2t+3)^d - (2t-1)^d shifted lattice points, each of modulus at most
/// e^{-pi m lam_min t^2} once the cutoff dominates the linear term.
fn tail_bound(d: usize, m: f64, lam_min: f64, lam_max: f64, cutoff: f64) -> f64 {
    let t_start = ((cutoff / (d as f64 * lam_max)).sqrt().floor() as i64).max(1);
    let mut tail = 0.0f64;
    let mut t = t_start;
    loop {
        let count = (2 * t + 3).pow(d as u32) as f64 - (2 * t - 1).max(0).pow(d as u32) as f64;
        let term = count * (-PI * m * lam_min * (t * t) as f64).exp();
        tail += term;
        t += 1;
        if term < tail * 1e-8 || term < f64::MIN_POSITIVE || t > t_start + 10_000 {
            break;
        }
    }
    tail
}

/// Largest per-coordinate excursion of the cutoff ellipsoid, rounded up.
fn required_radius(y: &crate::symmat::RMat, cutoff: f64) -> usize {
    let yinv = y
        .clone_owned()
        .try_inverse()
        .expect("positive definite matrix is invertible");
    (0..y.nrows())
        .map(|i| (cutoff * yinv[(i, i)]).sqrt().ceil() as usize)
        .max()
        .unwrap_or(0)
}

/// Visits every shifted lattice point u = k + a with u^t Y u <= cutoff, in
/// lexicographic order of k.
pub fn for_each_ellipsoid_point(
    y: &crate::symmat::RMat,
    a: &[f64],
    cutoff: f64,
    visit: &mut dyn FnMut(&[f64]),
) {
    let d = y.nrows();
    let yinv = y
        .clone_owned()
        .try_inverse()
        .expect("positive definite matrix is invertible");
    let lo_hi: Vec<(i64, i64)> = (0..d)
        .map(|i| {
            let r = (cutoff * yinv[(i, i)]).sqrt();
            (((-r - a[i]).ceil()) as i64, ((r - a[i]).floor()) as i64)
        })
        .collect();
    if lo_hi.iter().any(|&(lo, hi)| lo > hi) {
        return;
    }
    let mut k: Vec<i64> = lo_hi.iter().map(|&(lo, _)| lo).collect();
    let mut u = vec![0.0f64; d];
    loop {
        for i in 0..d {
            u[i] = k[i] as f64 + a[i];
        }
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += u[i] * y[(i, j)] * u[j];
            }
        }
        if q <= cutoff {
            visit(&u);
        }
        let mut i = d;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if k[i] < lo_hi[i].1 {
                k[i] += 1;
                for j in i + 1..d {
                    k[j] = lo_hi[j].0;
                }
                break;
            }
        }
    }
}

/// Residual |Theta_a(Zhat + S, zhat) - e^{2 pi i a^t S a} Theta_a(Zhat, zhat)|
/// of the translation law.
pub fn theta_translation_check(
    c: &ThetaChar,
    zhat: &UpperHalfPoint,
    zvec: &[Complex64],
    s: &IMat,
    budget: &TruncationBudget,
) -> Result<f64> {
    if s != &s.transpose() {
        return Err(Error::NotSymmetric("translation matrix S".into()));
    }
    let d = zhat.dim();
    if s.nrows() != d {
        return Err(Error::DimensionMismatch(format!(
            "S is {}x{}, point dimension {d}",
            s.nrows(),
            s.ncols()
        )));
    }
    let shifted = UpperHalfPoint::new(
        zhat.x() + s.map(|v| v as f64),
        zhat.y().clone_owned(),
    )?;
    let lhs = theta_eval(c, &shifted, zvec, budget)?;
    let rhs = c.translation_phase(s) * theta_eval(c, zhat, zvec, budget)?;
    Ok((lhs - rhs).norm())
}

/// Residual of the pushforward law
/// Theta_{1,a}(U^t Zhat U, U^t zhat) = Theta_{1,b}(Zhat, zhat) with b = Ua mod Z.
pub fn theta_pushforward_check(
    c: &ThetaChar,
    u: &UnimodularMatrix,
    zhat: &UpperHalfPoint,
    zvec: &[Complex64],
    budget: &TruncationBudget,
) -> Result<f64> {
    if c.m() != 1 {
        return Err(Error::Precondition(
            "pushforward law is implemented for index m = 1".into(),
        ));
    }
    let d = zhat.dim();
    let uf = u.to_f64();
    // U^t Z U computed on the split parts to stay exactly symmetric
    let x = uf.transpose() * zhat.x() * &uf;
    let y = uf.transpose() * zhat.y() * &uf;
    let transformed = UpperHalfPoint::new(x, y)?;
    let tz: Vec<Complex64> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| zvec[j] * uf[(j, i)])
                .sum()
        })
        .collect();
    let b = c.pushforward(u)?;
    let lhs = theta_eval(c, &transformed, &tz, budget)?;
    let rhs = theta_eval(&b, zhat, zvec, budget)?;
    Ok((lhs - rhs).norm())
}

/// Square root of det(C Zhat_t + D) continued along the straight-line path
/// Zhat_t = (1-t) i I + t Zhat from the principal branch at the base point.
pub fn sqrt_det_continued(
    chat: &IMat,
    dhat: &IMat,
    zhat: &UpperHalfPoint,
) -> Complex64 {
    let d = zhat.dim();
    let zc = zhat.z();
    let steps = 256;
    let f = |t: f64| -> Complex64 {
        let zt = CMat::from_fn(d, d, |i, j| {
            let base = if i == j {
                Complex64::new(0.0, 1.0)
            } else {
                Complex64::zero()
            };
            base * (1.0 - t) + zc[(i, j)] * t
        });
        let cf = CMat::from_fn(d, d, |i, j| Complex64::new(chat[(i, j)] as f64, 0.0));
        let df = CMat::from_fn(d, d, |i, j| Complex64::new(dhat[(i, j)] as f64, 0.0));
        (cf * zt + df).lu().determinant()
    };
    let mut s = f(0.0).sqrt();
    for j in 1..=steps {
        let t = j as f64 / steps as f64;
        let r = f(t).sqrt();
        s = if (r - s).norm() <= (-r - s).norm() { r } else { -r };
    }
    s
}

/// Recovers the constant matrix U(M_p) of the theta transformation formula
///
///   Theta_a(Zhat_p, zhat_p)
///     = sqrt(det(C Zhat + D)) e^{2 pi i zhat^t (C Zhat + D)^{-1} C zhat}
///       * sum_b U_{ab} Theta_b(Zhat, zhat)
///
/// by solving a square linear system over 2^{n-1} generic zhat samples. The
/// square-root branch is fixed by path continuation from the identity; the
/// returned matrix carries whatever global sign that choice induces. The
/// result is checked against a second independent sample set.
pub fn theta_transformation_matrix(
    mp: &SymplecticElement,
    zhat: &UpperHalfPoint,
    budget: &TruncationBudget,
) -> Result<CMat> {
    let d = zhat.dim();
    let mhat = if mp.dim() == d {
        mp.clone()
    } else if mp.dim() == d + 1 {
        if !mp.fixes_last_coordinate() {
            return Err(Error::Precondition(
                "element does not lie in the reduced subgroup".into(),
            ));
        }
        mp.reduced_blocks()?
    } else {
        return Err(Error::DimensionMismatch(format!(
            "element dimension {} incompatible with point dimension {d}",
            mp.dim()
        )));
    };

    let (_, _, chat, dhat) = mhat.blocks();
    let chat = chat.clone_owned();
    let dhat = dhat.clone_owned();
    let zp = crate::symmat::symplectic_action(&mhat, zhat)?;
    let czd = crate::symmat::cz_plus_d(&mhat, zhat);
    let czd_inv = czd
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::NotSymplectic("C Zhat + D is singular".into()))?;
    let cf = CMat::from_fn(d, d, |i, j| Complex64::new(chat[(i, j)] as f64, 0.0));
    let kappa_mat = &czd_inv * &cf; // (C Zhat + D)^{-1} C
    let sd = sqrt_det_continued(&chat, &dhat, zhat);
    let chars = ThetaChar::half_integer_chars(d);
    let nchar = chars.len();

    let mut rng = ChaCha8Rng::seed_from_u64(0x7e7a);
    let max_attempts = 8;
    let mut last: Option<CMat> = None;
    for attempt in 0..max_attempts {
        let samples: Vec<Vec<Complex64>> = (0..nchar)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        Complex64::new(
                            rng.gen_range(-0.45..0.45),
                            rng.gen_range(-0.25..0.25),
                        )
                    })
                    .collect()
            })
            .collect();
        let u = solve_transformation_system(
            &chars, zhat, &zp, &czd_inv, &kappa_mat, sd, &samples, budget,
        )?;
        let u = match u {
            Some(u) => u,
            None => continue, // ill-conditioned sample matrix, draw again
        };
        if let Some(prev) = &last {
            let diff = (prev - &u).map(|c| c.norm()).max();
            if diff <= 1e-6 {
                return Ok(u);
            }
            last = Some(u);
        } else {
            last = Some(u);
        }
        let _ = attempt;
    }
    Err(Error::ResampleFailure(max_attempts))
}

#[allow(clippy::too_many_arguments)]
fn solve_transformation_system(
    chars: &[ThetaChar],
    zhat: &UpperHalfPoint,
    zp: &UpperHalfPoint,
    czd_inv: &CMat,
    kappa_mat: &CMat,
    sd: Complex64,
    samples: &[Vec<Complex64>],
    budget: &TruncationBudget,
) -> Result<Option<CMat>> {
    let nchar = chars.len();
    let d = zhat.dim();
    // sample matrix B[s][b] = Theta_b(Zhat, zhat_s)
    let mut bmat = CMat::zeros(nchar, nchar);
    for (s, zv) in samples.iter().enumerate() {
        for (b, cb) in chars.iter().enumerate() {
            bmat[(s, b)] = theta_eval(cb, zhat, zv, budget)?;
        }
    }
    let sv = singular_values(&bmat);
    if sv.last().copied().unwrap_or(0.0) < 1e-3 * sv.first().copied().unwrap_or(1.0) {
        return Ok(None);
    }
    let lu = bmat.lu();
    let mut umat = CMat::zeros(nchar, nchar);
    for (ai, ca) in chars.iter().enumerate() {
        let mut rhs = CVec::zeros(nchar);
        for (s, zv) in samples.iter().enumerate() {
            let zvv = CVec::from_column_slice(zv);
            let zp_vec_v = czd_inv.transpose() * &zvv;
            let zp_vec: Vec<Complex64> = zp_vec_v.iter().cloned().collect();
            let lhs = theta_eval(ca, zp, &zp_vec, budget)?;
            let quad = (zvv.transpose() * kappa_mat * &zvv)[(0, 0)];
            let prefactor = sd * (Complex64::i() * TWO_PI * quad).exp();
            rhs[s] = lhs / prefactor;
        }
        let row = lu
            .solve(&rhs)
            .ok_or_else(|| Error::ResampleFailure(1))?;
        for b in 0..nchar {
            umat[(ai, b)] = row[b];
        }
    }
    let _ = d;
    Ok(Some(umat))
}

/// Largest entry of |U U* - I|; zero for an exactly unitary matrix.
pub fn unitarity_defect(u: &CMat) -> f64 {
    let n = u.nrows();
    let prod = u * u.adjoint();
    let mut defect = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let expect = if i == j {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::zero()
            };
            defect = defect.max((prod[(i, j)] - expect).norm());
        }
    }
    defect
}
