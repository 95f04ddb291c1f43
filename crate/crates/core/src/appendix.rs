//! The closing identities: numeric symmetry of the Delta_b building blocks
//! in their last two arguments, the exact mod-12 congruence matching that
//! underlies it, and the rational coefficient equality forced by the
//! matching.

use num_complex::Complex64;

use crate::n3::theta1;
use crate::symmat::Rat;
use crate::theta::TruncationBudget;
use crate::{Error, Result};

/// Which of the two congruence systems matched a class: the plain system or
/// the one with the unit shifts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Even,
    Odd,
}

/// Residue data of one term family in the double theta expansion. The
/// characteristic shift b is stored tripled so every congruence stays in
/// plain integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CongruenceClass {
    /// 3b, in {0, 1, 2}.
    pub b3: i64,
    /// j in {0, 1}.
    pub j: i64,
    /// l in {0, 1}.
    pub l: i64,
    /// k in {0, ..., 5}.
    pub k: i64,
}

/// A solving partner triple together with the branch that matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchedClass {
    pub j: i64,
    pub l: i64,
    pub k: i64,
    pub branch: Branch,
}

impl CongruenceClass {
    pub fn new(b3: i64, j: i64, l: i64, k: i64) -> Result<Self> {
        if !(0..3).contains(&b3) || !(0..2).contains(&j) || !(0..2).contains(&l) || !(0..6).contains(&k)
        {
            return Err(Error::Precondition(format!(
                "congruence indices out of range: 3b={b3}, j={j}, l={l}, k={k}"
            )));
        }
        Ok(CongruenceClass { b3, j, l, k })
    }

    /// The z_12 residue of the class, 6l + 3j + 3b + k mod 12.
    pub fn first_residue(&self) -> i64 {
        (6 * self.l + 3 * self.j + self.b3 + self.k).rem_euclid(12)
    }

    /// The z_13 residue of the class, 2k mod 12.
    pub fn second_residue(&self) -> i64 {
        (2 * self.k).rem_euclid(12)
    }
}

/// All 72 residue classes (3 shifts, 2 x 2 parities, 6 residues).
pub fn all_classes() -> Vec<CongruenceClass> {
    let mut out = Vec::with_capacity(72);
    for b3 in 0..3 {
        for j in 0..2 {
            for l in 0..2 {
                for k in 0..6 {
                    out.push(CongruenceClass { b3, j, l, k });
                }
            }
        }
    }
    out
}

fn solves(c: &CongruenceClass, m: &MatchedClass) -> bool {
    let lhs1 = 6 * c.l + 3 * c.j + c.b3 + c.k;
    let lhs2 = 6 * m.l + 3 * m.j + c.b3 + m.k;
    match m.branch {
        Branch::Even => (lhs1 - 2 * m.k).rem_euclid(12) == 0 && (lhs2 - 2 * c.k).rem_euclid(12) == 0,
        Branch::Odd => {
            (lhs1 - 2 * m.k - 1).rem_euclid(12) == 0 && (lhs2 + 2 - 2 * c.k).rem_euclid(12) == 0
        }
    }
}

/// Finds a partner triple whose swapped residues reproduce the class,
/// preferring the plain branch. Exhaustive over the 24 candidates per
/// branch; the matching argument guarantees a solution, so a miss is a
/// falsification event, reported as an error.
pub fn congruence_match(c: &CongruenceClass) -> Result<MatchedClass> {
    for branch in [Branch::Even, Branch::Odd] {
        for j in 0..2 {
            for l in 0..2 {
                for k in 0..6 {
                    let m = MatchedClass { j, l, k, branch };
                    if solves(c, &m) {
                        return Ok(m);
                    }
                }
            }
        }
    }
    Err(Error::Precondition(format!(
        "no matching triple for class {c:?}: falsification event"
    )))
}

/// Exact check that the matched congruences force equal z_11 coefficients:
/// with A = 2l + j + b and B the partner value, the substitution dictated by
/// the residues turns 3A^2 + k^2 and the partner expression into the same
/// rational number. Plain branch compares integer-shift terms on both
/// sides; the shifted branch compares an integer-shift term against a
/// half-shift term.
pub fn coefficient_equality_check(c: &CongruenceClass, m: &MatchedClass) -> bool {
    if !solves(c, m) {
        return false;
    }
    let k = Rat::from_integer(c.k);
    let kt = Rat::from_integer(m.k);
    let three = Rat::from_integer(3);
    let half = Rat::new(1, 2);
    match m.branch {
        Branch::Even => {
            let a = (Rat::from_integer(2) * kt - k) / three;
            let b = (Rat::from_integer(2) * k - kt) / three;
            three * a * a + k * k == three * b * b + kt * kt
        }
        Branch::Odd => {
            let a = (Rat::from_integer(2) * kt + Rat::from_integer(1) - k) / three;
            let b = (Rat::from_integer(2) * k - kt - Rat::from_integer(2)) / three;
            three * a * a + k * k == three * (b + half) * (b + half) + (kt + half) * (kt + half)
        }
    }
}

/// Delta_b(z_11, z_12, z_13) for b in {0, 1/3, 2/3}: the two-term product
/// of scaled thirds thetas with the plus-sign coupling in the last
/// argument.
pub fn delta_b_eval(
    b: Rat,
    z11: Complex64,
    z12: Complex64,
    z13: Complex64,
    budget: &TruncationBudget,
) -> Result<Complex64> {
    if b != Rat::from_integer(0) && b != Rat::new(1, 3) && b != Rat::new(2, 3) {
        return Err(Error::Precondition(format!("shift {b} not in {{0, 1/3, 2/3}}")));
    }
    delta_variant(b, 1.0, z11, z12, z13, budget)
}

/// The signed variant: the same product with z_13 +/- z_12 / 2 in the
/// second factor. The b = 1/3 and b = 2/3 blocks always appear summed in
/// the series, so their symmetry statements pair them; each single block is
/// exposed here for the reflection identity.
pub fn delta_variant(
    b: Rat,
    sign: f64,
    z11: Complex64,
    z12: Complex64,
    z13: Complex64,
    budget: &TruncationBudget,
) -> Result<Complex64> {
    let half = Rat::new(1, 2);
    let zero = Rat::from_integer(0);
    let coupled = z13 + sign * z12 / 2.0;
    let bp = {
        let s = b + half;
        if s >= Rat::from_integer(1) {
            s - Rat::from_integer(1)
        } else {
            s
        }
    };
    Ok(theta1(3, b, z11, z12 / 2.0, budget)? * theta1(1, zero, z11, coupled, budget)?
        + theta1(3, bp, z11, z12 / 2.0, budget)? * theta1(1, half, z11, coupled, budget)?)
}
