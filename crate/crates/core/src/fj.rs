//! Fourier-Jacobi coefficient extraction by torus quadrature, the
//! theta-coefficient tables, the full-rank probe, and the stabilizer
//! rank-drop check.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::symmat::{numerical_rank, singular_values, CMat, UnimodularMatrix, UpperHalfPoint};
use crate::theta::{theta_eval, ThetaChar, TruncationBudget};
use crate::unimod::{psi_eval_scaled, ScaledComplex, TFamily};
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Default relative tolerance for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-8;

/// Black-box function on the upper half space, assumed 1-periodic in every
/// real coordinate.
pub struct PeriodicFunctionHandle {
    evaluator: Box<dyn Fn(&UpperHalfPoint) -> Result<Complex64> + Sync>,
}

impl PeriodicFunctionHandle {
    pub fn new(f: impl Fn(&UpperHalfPoint) -> Result<Complex64> + Sync + 'static) -> Self {
        PeriodicFunctionHandle {
            evaluator: Box::new(f),
        }
    }

    pub fn eval(&self, z: &UpperHalfPoint) -> Result<Complex64> {
        (self.evaluator)(z)
    }

    /// Largest residual |F(Z + E_ij) - F(Z)| over all coordinate directions
    /// at the given point.
    pub fn periodicity_residual(&self, z: &UpperHalfPoint) -> Result<f64> {
        let n = z.dim();
        let base = self.eval(z)?;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let mut x = z.x().clone_owned();
                x[(i, j)] += 1.0;
                if i != j {
                    x[(j, i)] += 1.0;
                }
                let shifted = UpperHalfPoint::new(x, z.y().clone_owned())?;
                worst = worst.max((self.eval(&shifted)? - base).norm());
            }
        }
        Ok(worst)
    }
}

/// Theta-coefficient value at a single characteristic, recovered from the
/// x-orthogonality integral
///
///   phi_{1,a}(F)(Zhat) e^{-2 pi y_nn} Theta_{1,a}(2 Zhat, 0)
///     = integral over the last-column x-torus of
///       F(Z) e^{-2 pi i x_nn} Theta_{1,a}(Zhat, -zhat)
///
/// evaluated by the equispaced product rule (spectrally accurate here). The
/// result is independent of the imaginary offsets yvec and of y_nn; y_nn
/// must sit above the configured floor so higher Fourier-Jacobi layers fall
/// below quadrature tolerance.
#[allow(clippy::too_many_arguments)]
pub fn extract_phi(
    f: &PeriodicFunctionHandle,
    a: &ThetaChar,
    zhat: &UpperHalfPoint,
    yvec: &[f64],
    ynn: f64,
    grid: usize,
    budget: &TruncationBudget,
) -> Result<Complex64> {
    let d = zhat.dim();
    if a.dim() != d || yvec.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "characteristic length {}, offsets length {}, point dimension {d}",
            a.dim(),
            yvec.len()
        )));
    }
    if grid < 2 || grid % 2 != 0 {
        return Err(Error::Precondition(format!(
            "grid {grid} must be an even integer >= 2"
        )));
    }
    if ynn < 1.0 {
        return Err(Error::Precondition(format!(
            "corner imaginary part {ynn} is below the suppression floor"
        )));
    }
    let tol = (budget.tol * 100.0).max(1e-10);
    let coarse = quadrature_pass(f, a, zhat, yvec, ynn, grid, budget)?;
    let mut prev = coarse;
    let mut p = grid * 2;
    for _ in 0..2 {
        let fine = quadrature_pass(f, a, zhat, yvec, ynn, p, budget)?;
        let change = (fine - prev).norm();
        if change <= tol {
            return Ok(fine);
        }
        prev = fine;
        p *= 2;
    }
    let final_change = (quadrature_pass(f, a, zhat, yvec, ynn, p, budget)? - prev).norm();
    if final_change <= tol {
        return Ok(prev);
    }
    Err(Error::RefinementFailure {
        change: final_change,
        tol,
    })
}

fn quadrature_pass(
    f: &PeriodicFunctionHandle,
    a: &ThetaChar,
    zhat: &UpperHalfPoint,
    yvec: &[f64],
    ynn: f64,
    grid: usize,
    budget: &TruncationBudget,
) -> Result<Complex64> {
    let d = zhat.dim();
    let nvars = d + 1;
    let mut acc = Complex64::new(0.0, 0.0);
    let mut idx = vec![0usize; nvars];
    loop {
        let zvec: Vec<Complex64> = (0..d)
            .map(|i| Complex64::new(idx[i] as f64 / grid as f64, yvec[i]))
            .collect();
        let xnn = idx[d] as f64 / grid as f64;
        let znn = Complex64::new(xnn, ynn);
        let z = UpperHalfPoint::assemble(zhat, &zvec, znn)?;
        let neg: Vec<Complex64> = zvec.iter().map(|&c| -c).collect();
        let weight = (-Complex64::i() * TWO_PI * xnn).exp()
            * theta_eval(a, zhat, &neg, budget)?;
        acc += f.eval(&z)? * weight;

        let mut i = nvars;
        loop {
            if i == 0 {
                let mean = acc / (grid.pow(nvars as u32) as f64);
                let doubled = UpperHalfPoint::new(zhat.x() * 2.0, zhat.y() * 2.0)?;
                let norm = (-TWO_PI * ynn).exp()
                    * theta_eval(a, &doubled, &vec![Complex64::new(0.0, 0.0); d], budget)?;
                return Ok(mean / norm);
            }
            i -= 1;
            if idx[i] + 1 < grid {
                idx[i] += 1;
                for j in idx.iter_mut().skip(i + 1) {
                    *j = 0;
                }
                break;
            }
        }
    }
}

/// Rectangular table of theta-coefficient values, characteristics by forms,
/// with each column normalized to its largest modulus so that singular
/// values stay meaningful across widely separated magnitude scales.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientTable {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    #[serde(skip)]
    pub values: CMat,
    pub rank_tol: f64,
}

impl CoefficientTable {
    /// Builds the table from scaled columns, normalizing each column by its
    /// largest log-magnitude entry.
    pub fn from_scaled_columns(
        rows: &[ThetaChar],
        col_labels: Vec<String>,
        columns: &[Vec<ScaledComplex>],
        rank_tol: f64,
    ) -> Result<Self> {
        let nrows = rows.len();
        if columns.iter().any(|c| c.len() != nrows) {
            return Err(Error::DimensionMismatch(
                "column length does not match the characteristic count".into(),
            ));
        }
        let mut values = CMat::zeros(nrows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            let max_ln = col
                .iter()
                .map(|s| s.ln_abs())
                .fold(f64::NEG_INFINITY, f64::max);
            for (i, s) in col.iter().enumerate() {
                values[(i, j)] = if max_ln.is_finite() {
                    s.value * (s.ln_scale - max_ln).exp()
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
        }
        let row_labels = rows
            .iter()
            .map(|c| {
                c.a()
                    .iter()
                    .map(|r| r.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        Ok(CoefficientTable {
            row_labels,
            col_labels,
            values,
            rank_tol,
        })
    }

    pub fn rank(&self) -> Result<usize> {
        numerical_rank(&self.values, self.rank_tol)
    }

    pub fn smallest_singular_value(&self) -> f64 {
        singular_values(&self.values).last().copied().unwrap_or(0.0)
    }
}

/// Outcome of the rank probe over the q sweep.
#[derive(Debug, Clone, Serialize)]
pub enum RankStatus {
    FullRank,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankProbeResult {
    pub table: CoefficientTable,
    pub rank: usize,
    pub best_q: i64,
    pub smallest_sv: f64,
    pub status: RankStatus,
    /// (q, smallest singular value) for every feasible q tried.
    pub profile: Vec<(i64, f64)>,
}

/// Guard that the sample point sits inside the truncated fundamental-domain
/// region: |det(C Zhat + D)| >= 1 for every representative up to the height
/// bound.
pub fn fundamental_domain_guard(zhat: &UpperHalfPoint, height: i64, depth: usize) -> Result<bool> {
    let trunc = crate::poincare::coset_truncation(zhat.dim(), height, depth)?;
    for m in &trunc.representatives {
        if crate::symmat::cocycle_det(m, zhat).norm() < 1.0 - 1e-9 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Builds the coefficient table phi_{1,a}(g_1(T(t)))(Zhat) column by column
/// from the psi-formulas (the identity coset of the series), sweeping the
/// block scale q and reporting the q that maximizes the smallest singular
/// value. The table is block diagonal: the T_1n = 0 member feeds only the
/// zero characteristic, the T_1n = 1/2 members feed only the nonzero ones.
pub fn rank_probe(
    zhat: &UpperHalfPoint,
    family: &TFamily,
    q_max: i64,
    budget: &TruncationBudget,
) -> Result<RankProbeResult> {
    let d = zhat.dim();
    let chars = ThetaChar::half_integer_chars(d);
    if family.members.len() != chars.len() {
        return Err(Error::DimensionMismatch(format!(
            "family has {} members, expected {}",
            family.members.len(),
            chars.len()
        )));
    }
    if !fundamental_domain_guard(zhat, 1, 4)? {
        return Err(Error::Precondition(
            "sample point fails the fundamental-domain guard".into(),
        ));
    }
    let zero = ScaledComplex {
        ln_scale: f64::NEG_INFINITY,
        value: Complex64::new(0.0, 0.0),
    };
    let mut best: Option<(i64, CoefficientTable, f64)> = None;
    let mut profile = Vec::new();
    for q in 1..=q_max {
        // convergence guard for every member at this scale
        let feasible = family.members.iter().enumerate().all(|(idx, (_, _))| {
            family
                .member_scaled(idx, q)
                .map(|t| {
                    let lam =
                        crate::symmat::min_eigenvalue(&t.leading_block().to_f64());
                    let t1n = crate::symmat::rat_to_f64(t.t1n());
                    lam > t1n * t1n + 1e-9
                })
                .unwrap_or(false)
        });
        if !feasible {
            continue;
        }
        let mut columns = Vec::with_capacity(family.members.len());
        for (idx, (member_char, _)) in family.members.iter().enumerate() {
            let t = family.member_scaled(idx, q)?;
            let col: Vec<ScaledComplex> = chars
                .iter()
                .map(|a| {
                    let defined = if t.t1n().numer() == &0 {
                        a.is_zero()
                    } else {
                        !a.is_zero()
                    };
                    if defined {
                        psi_eval_scaled(a, &t, zhat, budget)
                    } else {
                        Ok(zero)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let _ = member_char;
            columns.push(col);
        }
        let labels: Vec<String> = family
            .members
            .iter()
            .map(|(c, _)| format!("q{}_t1n{}_a{}", q, if c.is_zero() { "0" } else { "1/2" }, {
                c.a()
                    .iter()
                    .map(|r| r.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            }))
            .collect();
        let table = CoefficientTable::from_scaled_columns(&chars, labels, &columns, RANK_TOL)?;
        let sv = table.smallest_singular_value();
        profile.push((q, sv));
        if best.as_ref().map_or(true, |(_, _, b)| sv > *b) {
            best = Some((q, table, sv));
        }
    }
    let (best_q, table, smallest_sv) = best.ok_or_else(|| {
        Error::Precondition("no feasible scale q below the sweep bound".into())
    })?;
    let rank = table.rank()?;
    let status = if rank == chars.len() && smallest_sv >= 1e-6 {
        RankStatus::FullRank
    } else {
        RankStatus::Inconclusive
    };
    Ok(RankProbeResult {
        table,
        rank,
        best_q,
        smallest_sv,
        status,
        profile,
    })
}

/// Largest difference between the rows of the table at a and at b = Ua mod Z,
/// for a point stabilized by U; the agreement forces a rank drop.
pub fn stabilizer_rank_drop(
    zhat: &UpperHalfPoint,
    uhat: &UnimodularMatrix,
    table: &CoefficientTable,
    rows: &[ThetaChar],
) -> Result<f64> {
    let uf = uhat.to_f64();
    let residual_z = ((uf.transpose() * zhat.x() * &uf) - zhat.x()).amax()
        + ((uf.transpose() * zhat.y() * &uf) - zhat.y()).amax();
    if residual_z > 1e-12 {
        return Err(Error::NotAStabilizer(residual_z));
    }
    if rows.len() != table.values.nrows() {
        return Err(Error::DimensionMismatch(
            "row characteristics do not match the table".into(),
        ));
    }
    let mut worst = 0.0f64;
    for (i, a) in rows.iter().enumerate() {
        let b = a.pushforward(uhat)?;
        let j = rows
            .iter()
            .position(|c| c.a() == b.a())
            .ok_or_else(|| Error::Precondition("pushforward characteristic missing".into()))?;
        if i == j {
            continue;
        }
        for col in 0..table.values.ncols() {
            worst = worst.max((table.values[(i, col)] - table.values[(j, col)]).norm());
        }
    }
    Ok(worst)
}
