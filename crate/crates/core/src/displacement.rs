//! Displacement operators and LCU decompositions over the (Z_1, Z_{-1}) pair.
//!
//! The Stein displacement of M is M - A M B, the Sylvester displacement is
//! A M - M B. With A = Z_1 and B = Z_{-1} both displacements invert in closed
//! form, which turns any n x n matrix into a linear combination of at most
//! n^2 words of the form
//!
//! ```text
//!     Z_1^i . J^u . Z_{-1}^{n-1-k}        (u = 1 for Stein, 0 for Sylvester)
//! ```
//!
//! with a global prefactor 1/2 = 1/(1 - (1)(-1)). Every word is unitary and
//! acts on basis states as a shift plus sign plus optional index reversal, so
//! reconstruction never needs a dense product.
//!
//! For the structured families the generic double sum collapses: Toeplitz and
//! banded Toeplitz matrices need at most 2n-1 words drawn from {Z_1^j, Z_{-1}^j},
//! circulants exactly their nonzero first-column entries on {Z_1^j} with no
//! prefactor, and Hankel matrices the same counts on J-words.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structmat::{
    build_structured, f_circulant_from_vector, unit_f_circulant, Complex64, ComplexMatrix,
    ComplexVector, Family, StructuredMatrix, ONE,
};

/// Coefficients at or below this modulus are dropped from term lists.
pub const COEFF_DROP_TOL: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplacementKind {
    Stein,
    Sylvester,
}

/// One LCU term. The word is Z_1^i J^{uses_j} Z_{-1}^{n-1-k}; (i, k) are the
/// displacement-matrix coordinates the coefficient was read from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LcuTerm {
    pub i: usize,
    pub k: usize,
    pub uses_j: bool,
    pub coeff: Complex64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LcuDecomposition {
    pub kind: DisplacementKind,
    pub n: usize,
    /// Global scale in front of the coefficient sum (1/2 generic, 1 circulant).
    pub prefactor: f64,
    /// Canonically ordered by (i, k, uses_j); coefficients above COEFF_DROP_TOL.
    pub terms: Vec<LcuTerm>,
    /// Sum of |coeff| over the stored terms, before the prefactor.
    pub chi: f64,
}

impl LcuDecomposition {
    /// Block-encoding normalization: alpha = prefactor * chi.
    pub fn alpha(&self) -> f64 {
        self.prefactor * self.chi
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        reconstruct(self)
    }
}

/// alpha = prefactor * sum |coeff|. The subnormalization any encoding of this
/// decomposition carries.
pub fn chi_scaling(dec: &LcuDecomposition) -> f64 {
    dec.alpha()
}

/// Apply the word Z_1^i J^u Z_{-1}^{n-1-k} to basis index e.
/// Returns (target index, sign).
#[inline]
pub fn word_action(n: usize, i: usize, k: usize, uses_j: bool, e: usize) -> (usize, f64) {
    let m = n - 1 - k;
    // Z_{-1}^m picks up -1 exactly when the cyclic shift wraps.
    let sign = if e + m >= n { -1.0 } else { 1.0 };
    let mut x = (e + m) % n;
    if uses_j {
        x = n - 1 - x;
    }
    ((x + i) % n, sign)
}

/// Dense matrix of a single word; oracle-side helper.
pub fn word_matrix(n: usize, term: &LcuTerm) -> ComplexMatrix {
    let mut w = ComplexMatrix::zeros(n, n);
    for e in 0..n {
        let (t, sign) = word_action(n, term.i, term.k, term.uses_j, e);
        w.set(t, e, Complex64::new(sign, 0.0));
    }
    w
}

/// Stein or Sylvester displacement with arbitrary square operator matrices.
pub fn displacement(
    m: &ComplexMatrix,
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    kind: DisplacementKind,
) -> Result<ComplexMatrix> {
    let n = m.rows();
    if m.cols() != n || a.rows() != n || a.cols() != n || b.rows() != n || b.cols() != n {
        return Err(Error::Shape("displacement wants equal square shapes".into()));
    }
    Ok(match kind {
        DisplacementKind::Stein => m.sub(&a.mul(m).mul(b)),
        DisplacementKind::Sylvester => a.mul(m).sub(&m.mul(b)),
    })
}

// Displacement entries over the fixed (Z_1, Z_{-1}) pair, in closed form.
// g(k) flips the sign of the wrapped column exactly at k = n-1.
fn pair_displacement_entry(m: &ComplexMatrix, kind: DisplacementKind, i: usize, k: usize) -> Complex64 {
    let n = m.rows();
    let sign = if k == n - 1 { -1.0 } else { 1.0 };
    let im1 = (i + n - 1) % n;
    let kp1 = (k + 1) % n;
    match kind {
        DisplacementKind::Stein => m.get(i, k) - sign * m.get(im1, kp1),
        DisplacementKind::Sylvester => m.get(im1, k) - sign * m.get(i, kp1),
    }
}

/// Generic LCU decomposition of a dense matrix over the (Z_1, Z_{-1}) pair.
pub fn lcu_decompose(m: &ComplexMatrix, kind: DisplacementKind) -> Result<LcuDecomposition> {
    let n = m.rows();
    crate::structmat::log2_exact(n)?;
    if m.cols() != n {
        return Err(Error::Shape("decomposition wants a square matrix".into()));
    }
    let uses_j = kind == DisplacementKind::Stein;
    let mut terms = Vec::new();
    let mut chi = 0.0;
    for i in 0..n {
        for k in 0..n {
            let c = pair_displacement_entry(m, kind, i, k);
            if c.norm() > COEFF_DROP_TOL {
                chi += c.norm();
                terms.push(LcuTerm { i, k, uses_j, coeff: c });
            }
        }
    }
    Ok(LcuDecomposition { kind, n, prefactor: 0.5, terms, chi })
}

fn push_term(terms: &mut Vec<LcuTerm>, chi: &mut f64, i: usize, k: usize, uses_j: bool, c: Complex64) {
    if c.norm() > COEFF_DROP_TOL {
        *chi += c.norm();
        terms.push(LcuTerm { i, k, uses_j, coeff: c });
    }
}

/// Family-specialized decomposition. Agrees with `lcu_decompose` of the dense
/// build on the reconstructed matrix; for Toeplitz/Hankel/banded the term
/// lists coincide exactly, for circulants the prefactor is 1 instead of 1/2.
pub fn lcu_decompose_structured(s: &StructuredMatrix) -> Result<LcuDecomposition> {
    s.validate()?;
    let n = s.n;
    let mut terms = Vec::new();
    let mut chi = 0.0;
    match s.family {
        Family::Toeplitz | Family::BandedToeplitz => {
            // (1/2)[ 2 t_0 I + sum_j (t_j + t_{-(n-j)}) Z_1^j
            //                 + sum_j (t_j - t_{-(n-j)}) Z_{-1}^j ]
            for p in 1..n {
                let c = s.t(p as i64) - s.t(-((n - p) as i64));
                push_term(&mut terms, &mut chi, 0, n - 1 - p, false, c); // Z_{-1}^p
            }
            push_term(&mut terms, &mut chi, 0, n - 1, false, 2.0 * s.t(0));
            for j in 1..n {
                let c = s.t(j as i64) + s.t(-((n - j) as i64));
                push_term(&mut terms, &mut chi, j, n - 1, false, c); // Z_1^j
            }
            terms.sort_by_key(|t| (t.i, t.k));
            Ok(LcuDecomposition { kind: DisplacementKind::Sylvester, n, prefactor: 0.5, terms, chi })
        }
        Family::Circulant => {
            for (j, &c) in s.seq.iter().enumerate() {
                push_term(&mut terms, &mut chi, j, n - 1, false, c); // Z_1^j
            }
            Ok(LcuDecomposition { kind: DisplacementKind::Sylvester, n, prefactor: 1.0, terms, chi })
        }
        Family::Hankel => {
            // Toeplitz words right-multiplied by J, with t_m = h_{m+n-1};
            // Z_{-1}^p J is stored in canonical form -J Z_{-1}^{n-p}.
            let h = |m: usize| s.seq[m];
            for k in 0..n - 1 {
                // (0, k, J): coefficient h_k - h_{n+k}
                push_term(&mut terms, &mut chi, 0, k, true, h(k) - h(n + k));
            }
            push_term(&mut terms, &mut chi, 0, n - 1, true, 2.0 * h(n - 1));
            for j in 1..n {
                // (j, n-1, J): Z_1^j J with coefficient h_{n-1+j} + h_{j-1}
                push_term(&mut terms, &mut chi, j, n - 1, true, h(n - 1 + j) + h(j - 1));
            }
            Ok(LcuDecomposition { kind: DisplacementKind::Stein, n, prefactor: 0.5, terms, chi })
        }
        Family::ToeplitzLike => lcu_decompose(&build_structured(s)?, DisplacementKind::Sylvester),
        Family::HankelLike => lcu_decompose(&build_structured(s)?, DisplacementKind::Stein),
    }
}

/// Dense reconstruction prefactor * sum coeff * word, via basis actions.
pub fn reconstruct(dec: &LcuDecomposition) -> ComplexMatrix {
    let n = dec.n;
    let mut m = ComplexMatrix::zeros(n, n);
    for t in &dec.terms {
        let c = t.coeff * dec.prefactor;
        for e in 0..n {
            let (target, sign) = word_action(n, t.i, t.k, t.uses_j, e);
            m.add_to(target, e, c * sign);
        }
    }
    m
}

/// Per-row nonzero columns of the displacement matrix; feeds the sparse
/// support preparation for the -like families.
pub fn displacement_support(m: &ComplexMatrix, kind: DisplacementKind) -> Vec<Vec<usize>> {
    let n = m.rows();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&k| pair_displacement_entry(m, kind, i, k).norm() > COEFF_DROP_TOL)
                .collect()
        })
        .collect()
}

/// Per-row sparsity bound d of the displacement outside row 0: the submatrix
/// left after deleting the first row and last column is (d-1)-row-sparse, and
/// the last column contributes at most one more entry per row.
pub fn like_sparsity_bound(m: &ComplexMatrix, kind: DisplacementKind) -> usize {
    let n = m.rows();
    let support = displacement_support(m, kind);
    let mut d = 1usize;
    for row in support.iter().take(n).skip(1) {
        let inner = row.iter().filter(|&&k| k < n - 1).count();
        d = d.max(inner + 1);
    }
    d
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckIdentity {
    /// M = A^k M B^k + sum_{i<k} A^i Delta(M) B^i
    Induction,
    /// A^n = aI, B^n = bI, ab != 1:
    /// M = 1/(1-ab) sum_{i<n} A^i Delta(M) B^i
    APotent,
    /// A nonsingular: nabla_{A,B}[M] = A Delta_{A^{-1},B}[M]
    Switch,
    /// A = Z_e, B = Z_f: the rank-factored product expressions of M in both
    /// displacement conventions (ef != 1 for Stein, e != f for Sylvester).
    FCirculantProduct,
}

fn scalar_multiple_of_identity(m: &ComplexMatrix) -> Result<Complex64> {
    let n = m.rows();
    let a = m.get(0, 0);
    let dev = m.sub(&ComplexMatrix::identity(n).scale(a)).max_abs();
    if dev > 1e-10 {
        return Err(Error::BadOperator(format!(
            "matrix is not a scalar multiple of I (deviation {dev:.3e})"
        )));
    }
    Ok(a)
}

fn as_unit_f_circulant(m: &ComplexMatrix) -> Result<Complex64> {
    let n = m.rows();
    let f = m.get(0, n - 1);
    let dev = m.sub(&unit_f_circulant(n, f)?).max_abs();
    if dev > 1e-12 {
        return Err(Error::BadOperator(format!(
            "matrix is not a unit f-circulant (deviation {dev:.3e})"
        )));
    }
    Ok(f)
}

/// Verify one of the displacement-inversion identities numerically.
/// Returns the max-entry deviation between the two sides.
pub fn check_identity(
    which: CheckIdentity,
    m: &ComplexMatrix,
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    k: usize,
) -> Result<f64> {
    let n = m.rows();
    match which {
        CheckIdentity::Induction => {
            if k == 0 {
                return Err(Error::Invalid("induction identity wants k >= 1".into()));
            }
            let delta = displacement(m, a, b, DisplacementKind::Stein)?;
            let mut rhs = a.pow(k).mul(m).mul(&b.pow(k));
            for i in 0..k {
                rhs = rhs.add(&a.pow(i).mul(&delta).mul(&b.pow(i)));
            }
            Ok(m.sub(&rhs).max_abs())
        }
        CheckIdentity::APotent => {
            let ascale = scalar_multiple_of_identity(&a.pow(n))?;
            let bscale = scalar_multiple_of_identity(&b.pow(n))?;
            let denom = ONE - ascale * bscale;
            if denom.norm() < 1e-12 {
                return Err(Error::BadOperator("a-potent identity wants ab != 1".into()));
            }
            let delta = displacement(m, a, b, DisplacementKind::Stein)?;
            let mut rhs = ComplexMatrix::zeros(n, n);
            for i in 0..n {
                rhs = rhs.add(&a.pow(i).mul(&delta).mul(&b.pow(i)));
            }
            rhs = rhs.scale(ONE / denom);
            Ok(m.sub(&rhs).max_abs())
        }
        CheckIdentity::Switch => {
            let nabla = displacement(m, a, b, DisplacementKind::Sylvester)?;
            let a_inv = a.inverse()?;
            let rhs = a.mul(&displacement(m, &a_inv, b, DisplacementKind::Stein)?);
            Ok(nabla.sub(&rhs).max_abs())
        }
        CheckIdentity::FCirculantProduct => {
            let e = as_unit_f_circulant(a)?;
            let f = as_unit_f_circulant(b)?;
            let j_rev = {
                let mut j = ComplexMatrix::zeros(n, n);
                for i in 0..n {
                    j.set(i, n - 1 - i, ONE);
                }
                j
            };
            // Full-rank factorization L(M) = G I^T, columns of G as g_j.
            let mut worst: f64 = 0.0;
            if (ONE - e * f).norm() > 1e-12 {
                let g = displacement(m, a, b, DisplacementKind::Stein)?;
                let mut sum = ComplexMatrix::zeros(n, n);
                for j in 0..n {
                    let gj = g.column(j);
                    let mut hj = ComplexVector::zeros(n);
                    hj.data[n - 1 - j] = ONE; // J e_j
                    let zf = f_circulant_from_vector(&hj, f)?;
                    sum = sum.add(&f_circulant_from_vector(&gj, e)?.mul(&zf.transpose()).mul(&j_rev));
                }
                worst = worst.max(m.sub(&sum.scale(ONE / (ONE - e * f))).max_abs());
            }
            if (e - f).norm() > 1e-12 {
                let g = displacement(m, a, b, DisplacementKind::Sylvester)?;
                let mut sum = ComplexMatrix::zeros(n, n);
                for j in 0..n {
                    let gj = g.column(j);
                    let mut hj = ComplexVector::zeros(n);
                    hj.data[n - 1 - j] = ONE;
                    sum = sum.add(
                        &f_circulant_from_vector(&gj, e)?.mul(&f_circulant_from_vector(&hj, f)?),
                    );
                }
                worst = worst.max(m.sub(&sum.scale(ONE / (e - f))).max_abs());
            }
            Ok(worst)
        }
    }
}

// JSON shape: {"kind","n","prefactor","terms":[{"i","k","J","re","im"}],"chi"}
#[derive(Serialize, Deserialize)]
struct TermDto {
    i: usize,
    k: usize,
    #[serde(rename = "J")]
    j: bool,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct DecompositionDto {
    kind: DisplacementKind,
    n: usize,
    prefactor: f64,
    terms: Vec<TermDto>,
    chi: f64,
}

impl Serialize for LcuDecomposition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DecompositionDto {
            kind: self.kind,
            n: self.n,
            prefactor: self.prefactor,
            terms: self
                .terms
                .iter()
                .map(|t| TermDto { i: t.i, k: t.k, j: t.uses_j, re: t.coeff.re, im: t.coeff.im })
                .collect(),
            chi: self.chi,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LcuDecomposition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let dto = DecompositionDto::deserialize(d)?;
        Ok(LcuDecomposition {
            kind: dto.kind,
            n: dto.n,
            prefactor: dto.prefactor,
            terms: dto
                .terms
                .iter()
                .map(|t| LcuTerm {
                    i: t.i,
                    k: t.k,
                    uses_j: t.j,
                    coeff: Complex64::new(t.re, t.im),
                })
                .collect(),
            chi: dto.chi,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structmat::{Edit, ZERO};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                m.set(i, k, c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            }
        }
        m
    }

    #[test]
    fn sylvester_displacement_of_identity() {
        // nabla_{Z_1, Z_-1}[I_2] = Z_1 - Z_-1 = [[0,2],[0,0]]
        let id = ComplexMatrix::identity(2);
        let z1 = unit_f_circulant(2, ONE).unwrap();
        let zm = unit_f_circulant(2, -ONE).unwrap();
        let d = displacement(&id, &z1, &zm, DisplacementKind::Sylvester).unwrap();
        let expect = ComplexMatrix::from_real_rows(&[&[0.0, 2.0], &[0.0, 0.0]]);
        assert!(d.sub(&expect).max_abs() < 1e-15);
        // and the closed-form entries agree with the dense operator product
        for i in 0..2 {
            for k in 0..2 {
                assert_eq!(pair_displacement_entry(&id, DisplacementKind::Sylvester, i, k), d.get(i, k));
            }
        }
    }

    #[test]
    fn stein_of_zero_is_zero() {
        let z = ComplexMatrix::zeros(4, 4);
        let z1 = unit_f_circulant(4, ONE).unwrap();
        let zm = unit_f_circulant(4, -ONE).unwrap();
        let d = displacement(&z, &z1, &zm, DisplacementKind::Stein).unwrap();
        assert_eq!(d.max_abs(), 0.0);
        assert!(lcu_decompose(&z, DisplacementKind::Stein).unwrap().terms.is_empty());
    }

    #[test]
    fn identity_decomposes_to_single_term() {
        let dec = lcu_decompose(&ComplexMatrix::identity(2), DisplacementKind::Sylvester).unwrap();
        assert_eq!(dec.terms.len(), 1);
        let t = dec.terms[0];
        assert_eq!((t.i, t.k, t.uses_j), (0, 1, false));
        assert_eq!(t.coeff, c(2.0, 0.0));
        assert!(dec.reconstruct().sub(&ComplexMatrix::identity(2)).max_abs() < 1e-15);
    }

    #[test]
    fn closed_form_entries_match_dense_displacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for &n in &[2usize, 4, 8] {
            let m = random_matrix(&mut rng, n);
            let z1 = unit_f_circulant(n, ONE).unwrap();
            let zm = unit_f_circulant(n, -ONE).unwrap();
            for kind in [DisplacementKind::Stein, DisplacementKind::Sylvester] {
                let dense = displacement(&m, &z1, &zm, kind).unwrap();
                for i in 0..n {
                    for k in 0..n {
                        assert!(
                            (pair_displacement_entry(&m, kind, i, k) - dense.get(i, k)).norm() < 1e-13
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn decompose_reconstruct_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &n in &[2usize, 4, 8, 16] {
            for kind in [DisplacementKind::Stein, DisplacementKind::Sylvester] {
                let m = random_matrix(&mut rng, n);
                let dec = lcu_decompose(&m, kind).unwrap();
                let err = dec.reconstruct().sub(&m).max_abs();
                assert!(err < 1e-12, "n={n} kind={kind:?} err={err:.3e}");
            }
        }
    }

    #[test]
    fn word_matrices_are_unitary_signed_permutations() {
        let n = 8;
        for i in [0usize, 1, 5] {
            for k in [0usize, 3, 7] {
                for uses_j in [false, true] {
                    let t = LcuTerm { i, k, uses_j, coeff: ONE };
                    let w = word_matrix(n, &t);
                    let wtw = w.adjoint().mul(&w);
                    assert!(wtw.sub(&ComplexMatrix::identity(n)).max_abs() < 1e-14);
                }
            }
        }
        // and the word algebra matches dense products of the generators
        let z1 = unit_f_circulant(n, ONE).unwrap();
        let zm = unit_f_circulant(n, -ONE).unwrap();
        let mut j_rev = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            j_rev.set(i, n - 1 - i, ONE);
        }
        let t = LcuTerm { i: 3, k: 2, uses_j: true, coeff: ONE };
        let dense = z1.pow(3).mul(&j_rev).mul(&zm.pow(n - 1 - 2));
        assert!(word_matrix(n, &t).sub(&dense).max_abs() < 1e-14);
    }

    #[test]
    fn toeplitz_structured_matches_generic_term_list() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 8;
        let seq: Vec<Complex64> =
            (0..2 * n - 1).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let s = StructuredMatrix::new(Family::Toeplitz, n, seq);
        let a = lcu_decompose_structured(&s).unwrap();
        let b = lcu_decompose(&s.build().unwrap(), DisplacementKind::Sylvester).unwrap();
        assert_eq!(a.terms.len(), b.terms.len());
        for (x, y) in a.terms.iter().zip(b.terms.iter()) {
            assert_eq!((x.i, x.k, x.uses_j), (y.i, y.k, y.uses_j));
            assert!((x.coeff - y.coeff).norm() < 1e-12);
        }
        assert!(a.terms.len() < 2 * n);
        assert!((a.chi - b.chi).abs() < 1e-12);
    }

    #[test]
    fn hankel_structured_matches_generic_term_list() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 8;
        let seq: Vec<Complex64> =
            (0..2 * n - 1).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let s = StructuredMatrix::new(Family::Hankel, n, seq);
        let a = lcu_decompose_structured(&s).unwrap();
        let b = lcu_decompose(&s.build().unwrap(), DisplacementKind::Stein).unwrap();
        assert_eq!(a.terms.len(), b.terms.len());
        for (x, y) in a.terms.iter().zip(b.terms.iter()) {
            assert_eq!((x.i, x.k, x.uses_j), (y.i, y.k, y.uses_j));
            assert!((x.coeff - y.coeff).norm() < 1e-12);
        }
        assert!(a.reconstruct().sub(&s.build().unwrap()).max_abs() < 1e-12);
    }

    #[test]
    fn hankel_two_by_two_example() {
        // h = (0, 1, 2): H = [[0,1],[1,2]] = (1/2)[2J + 2 Z_1 J + 2 Z_-1 J]
        let s = StructuredMatrix::new(Family::Hankel, 2, vec![ZERO, ONE, c(2.0, 0.0)]);
        let dec = lcu_decompose_structured(&s).unwrap();
        let got: Vec<(usize, usize, bool, f64)> =
            dec.terms.iter().map(|t| (t.i, t.k, t.uses_j, t.coeff.re)).collect();
        assert_eq!(got, vec![(0, 0, true, -2.0), (0, 1, true, 2.0), (1, 1, true, 2.0)]);
        assert!((dec.chi - 6.0).abs() < 1e-15);
        assert!((dec.alpha() - 3.0).abs() < 1e-15);
        let h = s.build().unwrap();
        assert!(dec.reconstruct().sub(&h).max_abs() < 1e-15);
        assert!(dec.alpha() >= h.spectral_norm() - 1e-12);
    }

    #[test]
    fn circulant_has_unit_prefactor_and_n_terms() {
        let s = StructuredMatrix::new(
            Family::Circulant,
            4,
            vec![c(0.5, 0.0), c(0.5, 0.0), ZERO, ZERO],
        );
        let dec = lcu_decompose_structured(&s).unwrap();
        assert_eq!(dec.prefactor, 1.0);
        assert_eq!(dec.terms.len(), 2);
        assert!((dec.alpha() - 1.0).abs() < 1e-15);
        assert!(dec.reconstruct().sub(&s.build().unwrap()).max_abs() < 1e-15);
    }

    #[test]
    fn banded_tridiagonal_example() {
        // t_0 = 2, t_{+-1} = -1, n = 4:
        // (1/2)[4 I - Z_1 - Z_1^3 - Z_-1 + Z_-1^3], chi = 8, alpha = 4
        let mut seq = vec![ZERO; 7];
        seq[3] = c(2.0, 0.0);
        seq[4] = -ONE;
        seq[2] = -ONE;
        let s = StructuredMatrix::new(Family::BandedToeplitz, 4, seq).with_bandwidth(1);
        let dec = lcu_decompose_structured(&s).unwrap();
        let got: Vec<(usize, usize, f64)> = dec.terms.iter().map(|t| (t.i, t.k, t.coeff.re)).collect();
        assert_eq!(
            got,
            vec![(0, 0, 1.0), (0, 2, -1.0), (0, 3, 4.0), (1, 3, -1.0), (3, 3, -1.0)]
        );
        assert_eq!(dec.terms.len(), 5); // 4 rho + 1
        assert!((dec.chi - 8.0).abs() < 1e-15);
        assert!((dec.alpha() - 4.0).abs() < 1e-15);
        assert!(dec.reconstruct().sub(&s.build().unwrap()).max_abs() < 1e-15);
    }

    #[test]
    fn like_families_track_displacement_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 8;
        let seq: Vec<Complex64> =
            (0..2 * n - 1).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let s = StructuredMatrix::new(Family::ToeplitzLike, n, seq).with_edits(vec![
            Edit { i: 2, k: 5, value: c(3.0, 1.0) },
            Edit { i: 6, k: 1, value: c(-2.0, 0.5) },
        ]);
        let m = s.build().unwrap();
        let dec = lcu_decompose_structured(&s).unwrap();
        assert!(dec.reconstruct().sub(&m).max_abs() < 1e-12);
        let d = like_sparsity_bound(&m, DisplacementKind::Sylvester);
        assert!(dec.terms.len() <= n + (n - 1) * d);
        // support count equals term count by construction
        let nnz: usize = displacement_support(&m, DisplacementKind::Sylvester)
            .iter()
            .map(|r| r.len())
            .sum();
        assert_eq!(nnz, dec.terms.len());
    }

    #[test]
    fn pure_toeplitz_sparsity_bound_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 8;
        let seq: Vec<Complex64> =
            (0..2 * n - 1).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let m = StructuredMatrix::new(Family::Toeplitz, n, seq).build().unwrap();
        assert_eq!(like_sparsity_bound(&m, DisplacementKind::Sylvester), 1);
    }

    #[test]
    fn induction_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 4;
        let m = random_matrix(&mut rng, n);
        let a = random_matrix(&mut rng, n);
        let b = random_matrix(&mut rng, n);
        for k in 1..=4 {
            let dev = check_identity(CheckIdentity::Induction, &m, &a, &b, k).unwrap();
            assert!(dev < 1e-11, "k={k} dev={dev:.3e}");
        }
    }

    #[test]
    fn a_potent_identity_recovers_prefactor_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 8;
        let m = random_matrix(&mut rng, n);
        let z1 = unit_f_circulant(n, ONE).unwrap();
        let zm = unit_f_circulant(n, -ONE).unwrap();
        let dev = check_identity(CheckIdentity::APotent, &m, &z1, &zm, 0).unwrap();
        assert!(dev < 1e-11, "dev={dev:.3e}");
    }

    #[test]
    fn switch_identity_holds_for_nonsingular_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 4;
        let m = random_matrix(&mut rng, n);
        // random + diagonal boost keeps A comfortably nonsingular
        let mut a = random_matrix(&mut rng, n);
        for i in 0..n {
            a.add_to(i, i, c(3.0, 0.0));
        }
        let b = random_matrix(&mut rng, n);
        let dev = check_identity(CheckIdentity::Switch, &m, &a, &b, 0).unwrap();
        assert!(dev < 1e-11, "dev={dev:.3e}");
    }

    #[test]
    fn f_circulant_product_expressions_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 4;
        let m = random_matrix(&mut rng, n);
        for (e, f) in [
            (ONE, -ONE),
            (c(0.7, 0.2), c(-0.4, 0.3)),
            (c(2.0, 0.0), c(0.3, 0.0)),
        ] {
            let a = unit_f_circulant(n, e).unwrap();
            let b = unit_f_circulant(n, f).unwrap();
            let dev = check_identity(CheckIdentity::FCirculantProduct, &m, &a, &b, 0).unwrap();
            assert!(dev < 1e-10, "e={e} f={f} dev={dev:.3e}");
        }
    }

    #[test]
    fn check_identity_rejects_bad_operators() {
        let n = 4;
        let m = ComplexMatrix::identity(n);
        let z1 = unit_f_circulant(n, ONE).unwrap();
        // a-potent with ab = 1 is rejected
        let err = check_identity(CheckIdentity::APotent, &m, &z1, &z1, 0);
        assert!(matches!(err, Err(Error::BadOperator(_))));
        // f-circulant check wants actual unit f-circulants
        let err = check_identity(CheckIdentity::FCirculantProduct, &m, &m, &z1, 0);
        assert!(matches!(err, Err(Error::BadOperator(_))));
    }

    #[test]
    fn decomposition_json_round_trip() {
        let s = StructuredMatrix::new(Family::Hankel, 2, vec![ZERO, ONE, c(2.0, 0.0)]);
        let dec = lcu_decompose_structured(&s).unwrap();
        let text = serde_json::to_string(&dec).unwrap();
        assert!(text.contains("\"kind\":\"stein\""));
        assert!(text.contains("\"J\":true"));
        let back: LcuDecomposition = serde_json::from_str(&text).unwrap();
        assert_eq!(dec, back);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn prop_round_trip_and_alpha_dominates_norm(
            seed in 0u64..1u64 << 48,
            logn in 1usize..=3,
            stein in proptest::bool::ANY,
        ) {
            let n = 1usize << logn;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, n);
            let kind = if stein { DisplacementKind::Stein } else { DisplacementKind::Sylvester };
            let dec = lcu_decompose(&m, kind).unwrap();
            prop_assert!(dec.reconstruct().sub(&m).max_abs() < 1e-12);
            // a valid LCU of unitaries cannot undercut the spectral norm
            prop_assert!(dec.alpha() >= m.spectral_norm() - 1e-10);
            // canonical order is strictly increasing
            for w in dec.terms.windows(2) {
                prop_assert!((w[0].i, w[0].k) < (w[1].i, w[1].k));
            }
        }
    }
}
