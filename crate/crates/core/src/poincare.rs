//! Truncated Klingen-Poincare series and the cocycle-determinant growth
//! probe: coset representatives modulo the degree-zero parabolic subgroup,
//! the partial series with an empirical frontier estimate, and the sweep of
//! |det(CZ+D)| in the corner imaginary part.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::symmat::{
    cocycle_det, row_hnf, symplectic_action, HalfEvenMatrix, IMat, SymplecticElement,
    UnimodularMatrix, UpperHalfPoint,
};
use crate::theta::TruncationBudget;
use crate::unimod::gl_sum;
use crate::{Error, Result};

/// Generating set of the symplectic group used to build words: the
/// inversion, the elementary translations, and the unimodular embeddings of
/// shears, a swap, and a sign flip.
pub fn symplectic_generators(n: usize) -> Vec<SymplecticElement> {
    let mut gens = vec![SymplecticElement::inversion(n)];
    for i in 0..n {
        for j in i..n {
            let mut s = IMat::zeros(n, n);
            s[(i, j)] = 1;
            s[(j, i)] = 1;
            gens.push(SymplecticElement::translation(&s).expect("symmetric by construction"));
        }
    }
    if n > 1 {
        let mut shear = IMat::identity(n, n);
        shear[(1, 0)] = 1;
        let mut swap = IMat::identity(n, n);
        swap[(0, 0)] = 0;
        swap[(1, 1)] = 0;
        swap[(0, 1)] = 1;
        swap[(1, 0)] = 1;
        let mut flip = IMat::identity(n, n);
        flip[(0, 0)] = -1;
        for u in [shear, swap, flip] {
            gens.push(SymplecticElement::gl_embed(
                &UnimodularMatrix::new(u).expect("unit determinant by construction"),
            ));
        }
    }
    gens
}

/// Product of `len` generators drawn with the supplied generator indices.
pub fn random_symplectic_word(n: usize, len: usize, rng: &mut ChaCha8Rng) -> SymplecticElement {
    let gens = symplectic_generators(n);
    let mut m = SymplecticElement::identity(n);
    for _ in 0..len {
        m = m.mul(&gens[rng.gen_range(0..gens.len())]);
    }
    m
}

/// Canonical key of the coset modulo the degree-zero parabolic subgroup: the
/// Hermite normal form of the stacked (C | D) blocks, which is invariant
/// under left multiplication by the parabolic.
pub fn coset_key(m: &SymplecticElement) -> Vec<i64> {
    let n = m.dim();
    let (_, _, c, d) = m.blocks();
    let cd = IMat::from_fn(n, 2 * n, |i, j| if j < n { c[(i, j)] } else { d[(i, j - n)] });
    let h = row_hnf(&cd);
    let mut key = Vec::with_capacity(n * 2 * n);
    for i in 0..n {
        for j in 0..2 * n {
            key.push(h[(i, j)]);
        }
    }
    key
}

/// Finite set of coset representatives with the canonical (C, D) entries
/// bounded by the height, found by breadth-first search over generator
/// words. The identity coset always comes first.
#[derive(Debug, Clone)]
pub struct CosetTruncation {
    pub height_bound: i64,
    pub representatives: Vec<SymplecticElement>,
}

pub fn coset_truncation(n: usize, height_bound: i64, depth: usize) -> Result<CosetTruncation> {
    if height_bound < 1 {
        return Err(Error::Precondition("height bound must be positive".into()));
    }
    let gens = symplectic_generators(n);
    let id = SymplecticElement::identity(n);
    let id_key = coset_key(&id);
    let mut found: Vec<(Vec<i64>, SymplecticElement)> = vec![(id_key.clone(), id.clone())];
    let mut frontier = vec![id];
    let within = |key: &[i64]| key.iter().all(|&v| v.abs() <= height_bound);
    for _ in 0..depth {
        let mut next = Vec::new();
        for m in &frontier {
            for g in &gens {
                let cand = m.mul(g);
                // keep raw word entries from exploding
                let (a, b, c, d) = cand.blocks();
                let max_entry = [a, b, c, d]
                    .iter()
                    .map(|blk| blk.iter().map(|v| v.abs()).max().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                if max_entry > 4 * height_bound {
                    continue;
                }
                let key = coset_key(&cand);
                if !within(&key) {
                    continue;
                }
                if found.iter().any(|(k, _)| k == &key) {
                    continue;
                }
                found.push((key, cand.clone()));
                next.push(cand);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    let (id_entry, mut rest): (Vec<_>, Vec<_>) =
        found.into_iter().partition(|(k, _)| k == &id_key);
    rest.sort_by(|a, b| a.0.cmp(&b.0));
    let mut representatives: Vec<SymplecticElement> =
        id_entry.into_iter().map(|(_, m)| m).collect();
    representatives.extend(rest.into_iter().map(|(_, m)| m));
    Ok(CosetTruncation {
        height_bound,
        representatives,
    })
}

/// Partial Klingen-Poincare sum together with its per-coset terms and the
/// largest non-identity term magnitude (the empirical truncation frontier).
#[derive(Debug, Clone)]
pub struct PoincareEvaluation {
    pub value: Complex64,
    pub identity_part: Complex64,
    pub terms: Vec<Complex64>,
    pub frontier: f64,
}

/// Sum over the representative list of det(CZ+D)^{-r} G(T, M(Z)). The
/// unimodular sum G is taken modulo the shared U and -U symmetry (half the
/// full-group sum; both give identical summands), which makes its first
/// z_nn-layer exactly the theta decomposition sum of psi-coefficients.
pub fn truncated_poincare(
    t: &HalfEvenMatrix,
    z: &UpperHalfPoint,
    r: u32,
    trunc: &CosetTruncation,
    budget: &TruncationBudget,
) -> Result<PoincareEvaluation> {
    let n = z.dim();
    if t.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "T has dimension {}, point has dimension {n}",
            t.dim()
        )));
    }
    if r as usize <= 2 * n + 1 {
        return Err(Error::Precondition(format!(
            "weight r = {r} must exceed 2n+1 = {}",
            2 * n + 1
        )));
    }
    let mut terms = Vec::with_capacity(trunc.representatives.len());
    let mut value = Complex64::new(0.0, 0.0);
    let mut identity_part = Complex64::new(0.0, 0.0);
    let mut frontier = 0.0f64;
    for (idx, m) in trunc.representatives.iter().enumerate() {
        let w = symplectic_action(m, z)?;
        let det = cocycle_det(m, z);
        let factor = det.powi(-(r as i32));
        let g = gl_sum(t.entries(), &w, budget.tol, budget.max_radius)? * 0.5;
        let term = factor * g;
        if idx == 0 {
            identity_part = term;
        } else {
            frontier = frontier.max(term.norm());
        }
        value += term;
        terms.push(term);
    }
    Ok(PoincareEvaluation {
        value,
        identity_part,
        terms,
        frontier,
    })
}

/// Sweep of |det(CZ+D)| as the corner imaginary part y_nn runs through the
/// given values, with the rest of the base point held fixed.
pub fn detgrowth_probe(
    m: &SymplecticElement,
    zbase: &UpperHalfPoint,
    ynn_values: &[f64],
) -> Result<Vec<f64>> {
    let n = zbase.dim();
    if m.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "element dimension {} vs point dimension {n}",
            m.dim()
        )));
    }
    let mut out = Vec::with_capacity(ynn_values.len());
    for &ynn in ynn_values {
        let mut y = zbase.y().clone_owned();
        y[(n - 1, n - 1)] = ynn;
        let z = UpperHalfPoint::new(zbase.x().clone_owned(), y)?;
        out.push(cocycle_det(m, &z).norm());
    }
    Ok(out)
}

/// True when the last column of C vanishes (membership in the subgroup whose
/// cocycle determinant does not depend on the corner entry).
pub fn fixes_corner(m: &SymplecticElement) -> bool {
    m.fixes_last_coordinate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmat::{Rat, RatMat, RMat};
    use rand::SeedableRng;

    fn t2() -> HalfEvenMatrix {
        let m = RatMat::from_fn(2, 2, |i, j| {
            if i == j {
                Rat::from_integer(if i == 0 { 3 } else { 1 })
            } else {
                Rat::new(1, 2)
            }
        });
        HalfEvenMatrix::new(m).unwrap()
    }

    fn base_point() -> UpperHalfPoint {
        UpperHalfPoint::new(
            RMat::from_row_slice(2, 2, &[0.1, 0.05, 0.05, 0.2]),
            RMat::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 2.0]),
        )
        .unwrap()
    }

    #[test]
    fn coset_keys_collapse_parabolic_factors() {
        let m = random_symplectic_word(2, 4, &mut ChaCha8Rng::seed_from_u64(3));
        let mut s = IMat::zeros(2, 2);
        s[(0, 1)] = 2;
        s[(1, 0)] = 2;
        let gamma = SymplecticElement::translation(&s).unwrap();
        let u = SymplecticElement::gl_embed(
            &UnimodularMatrix::new(IMat::from_row_slice(2, 2, &[1, 3, 0, 1])).unwrap(),
        );
        assert_eq!(coset_key(&m), coset_key(&gamma.mul(&m)));
        assert_eq!(coset_key(&m), coset_key(&u.mul(&m)));
    }

    #[test]
    fn truncation_includes_identity_first() {
        let trunc = coset_truncation(2, 1, 4).unwrap();
        assert!(!trunc.representatives.is_empty());
        let first = &trunc.representatives[0];
        assert_eq!(coset_key(first), coset_key(&SymplecticElement::identity(2)));
        // all keys distinct
        let keys: Vec<_> = trunc.representatives.iter().map(coset_key).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), keys.len());
        assert!(keys.len() > 1, "expected non-identity cosets at height 1");
    }

    #[test]
    fn identity_only_truncation_is_the_gl_sum() {
        let trunc = CosetTruncation {
            height_bound: 1,
            representatives: vec![SymplecticElement::identity(2)],
        };
        let t = t2();
        let z = base_point();
        let budget = TruncationBudget::default();
        let eval = truncated_poincare(&t, &z, 6, &trunc, &budget).unwrap();
        let direct = gl_sum(t.entries(), &z, budget.tol, budget.max_radius).unwrap() * 0.5;
        assert!((eval.value - direct).norm() < 1e-14 * direct.norm().max(1.0));
        assert_eq!(eval.frontier, 0.0);
    }

    #[test]
    fn raising_the_weight_shrinks_every_non_identity_term() {
        let trunc = coset_truncation(2, 1, 4).unwrap();
        let t = t2();
        let z = base_point();
        let budget = TruncationBudget::default();
        let low = truncated_poincare(&t, &z, 6, &trunc, &budget).unwrap();
        let high = truncated_poincare(&t, &z, 8, &trunc, &budget).unwrap();
        let mut checked = 0;
        for (i, m) in trunc.representatives.iter().enumerate().skip(1) {
            let det = cocycle_det(m, &z).norm();
            if det >= 2.0 && low.terms[i].norm() > 1e-300 {
                assert!(
                    high.terms[i].norm() <= low.terms[i].norm() / 4.0 + 1e-300,
                    "term {i} shrank only from {} to {}",
                    low.terms[i].norm(),
                    high.terms[i].norm()
                );
                checked += 1;
            }
        }
        let _ = checked; // points with |det| >= 2 may be scarce at height 1
    }

    #[test]
    fn degree_one_sanity_bound() {
        // at Z = i y every non-identity coset has |cz + d| >= min(1, y)
        let trunc = coset_truncation(1, 2, 6).unwrap();
        let y = 3.0;
        let z = UpperHalfPoint::scalar(Complex64::new(0.0, y)).unwrap();
        for m in trunc.representatives.iter().skip(1) {
            let (_, _, c, _) = m.blocks();
            if c[(0, 0)] != 0 {
                assert!(cocycle_det(m, &z).norm() >= y - 1e-12);
            }
        }
    }

    #[test]
    fn corner_inversion_grows_like_ynn() {
        // A = diag(1,0), B = diag(0,-1), C = diag(0,1), D = diag(1,0)
        let m = SymplecticElement::new(
            IMat::from_row_slice(2, 2, &[1, 0, 0, 0]),
            IMat::from_row_slice(2, 2, &[0, 0, 0, -1]),
            IMat::from_row_slice(2, 2, &[0, 0, 0, 1]),
            IMat::from_row_slice(2, 2, &[1, 0, 0, 0]),
        )
        .unwrap();
        let z = base_point();
        let sweep = detgrowth_probe(&m, &z, &[10.0, 100.0, 1000.0]).unwrap();
        for (i, &ynn) in [10.0, 100.0, 1000.0].iter().enumerate() {
            let znn = Complex64::new(z.x()[(1, 1)], ynn);
            assert!((sweep[i] - znn.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn mixed_words_grow_and_reduced_words_stay_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let z = base_point();
        let ys = [10.0, 100.0, 1000.0];
        let mut mixed = 0;
        let mut reduced = 0;
        while mixed < 20 || reduced < 20 {
            let m = random_symplectic_word(2, rng.gen_range(2..=5), &mut rng);
            let sweep = detgrowth_probe(&m, &z, &ys).unwrap();
            if fixes_corner(&m) {
                if reduced < 20 {
                    assert!((sweep[0] - sweep[2]).abs() <= 1e-12 * sweep[0].max(1.0));
                    reduced += 1;
                }
            } else if mixed < 20 {
                assert!(sweep[0] < sweep[1] && sweep[1] < sweep[2]);
                let r1 = sweep[1] / 100.0;
                let r2 = sweep[2] / 1000.0;
                assert!(
                    (r1 - r2).abs() <= 0.1 * r2.abs(),
                    "ratio drifted from {r1} to {r2}"
                );
                mixed += 1;
            }
        }
    }
}
