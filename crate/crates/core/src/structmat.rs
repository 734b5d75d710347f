//! Dense complex matrices and the displacement-structured families.
//!
//! The dense type is the common currency of the classical oracles: every
//! circuit-level claim in this crate is ultimately checked against a dense
//! reconstruction at desk scale. Structured specs are kept as defining
//! sequences plus an optional edit list and only materialized on demand.
//!
//! A Toeplitz matrix is constant along diagonals (entry depends on i-k), a
//! Hankel matrix along anti-diagonals (entry depends on i+k), and a circulant
//! wraps the diagonals cyclically:
//!
//! ```text
//!   toeplitz            circulant           hankel
//!   [t0  t-1 t-2]       [c0  c2  c1 ]       [h0  h1  h2]
//!   [t1  t0  t-1]       [c1  c0  c2 ]       [h1  h2  h3]
//!   [t2  t1  t0 ]       [c2  c1  c0 ]       [h2  h3  h4]
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Complex64 = num_complex::Complex<f64>;

pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// log2 of a power of two >= 2, or an error.
pub fn log2_exact(n: usize) -> Result<usize> {
    if n >= 2 && n.is_power_of_two() {
        Ok(n.trailing_zeros() as usize)
    } else {
        Err(Error::NotPowerOfTwo(n))
    }
}

// ---------------------------------------------------------------------------
// dense vector
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVector {
    pub data: Vec<Complex64>,
}

impl ComplexVector {
    pub fn zeros(n: usize) -> Self {
        Self { data: vec![ZERO; n] }
    }

    pub fn from_real(v: &[f64]) -> Self {
        Self { data: v.iter().map(|&x| Complex64::new(x, 0.0)).collect() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn norm_l1(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// <self|other> with the left argument conjugated.
    pub fn dot(&self, other: &Self) -> Complex64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(Self { data: self.data.iter().map(|z| z / n).collect() })
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.len(), other.len());
        Self {
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// dense matrix, row-major
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, ONE);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (k, &z) in row.iter().enumerate() {
                m.set(i, k, z);
            }
        }
        m
    }

    /// Real entries given row by row; convenience for tests and oracles.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let converted: Vec<Vec<Complex64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| Complex64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&converted)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> Complex64 {
        self.data[i * self.cols + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, k: usize, v: Complex64) {
        self.data[i * self.cols + k] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, k: usize, v: Complex64) {
        self.data[i * self.cols + k] += v;
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self.get(i, j);
                if a == ZERO {
                    continue;
                }
                for k in 0..other.cols {
                    out.data[i * other.cols + k] += a * other.get(j, k);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &ComplexVector) -> ComplexVector {
        assert_eq!(self.cols, v.len());
        let mut out = ComplexVector::zeros(self.rows);
        for i in 0..self.rows {
            let mut acc = ZERO;
            for k in 0..self.cols {
                acc += self.get(i, k) * v.data[k];
            }
            out.data[i] = acc;
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for k in 0..self.cols {
                out.set(k, i, self.get(i, k));
            }
        }
        out
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn adjoint(&self) -> Self {
        self.transpose().conj()
    }

    pub fn pow(&self, mut e: usize) -> Self {
        assert_eq!(self.rows, self.cols);
        let mut base = self.clone();
        let mut acc = Self::identity(self.rows);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for k in 0..self.cols {
                if (self.get(i, k) - self.get(k, i).conj()).norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn column(&self, k: usize) -> ComplexVector {
        let mut v = ComplexVector::zeros(self.rows);
        for i in 0..self.rows {
            v.data[i] = self.get(i, k);
        }
        v
    }

    fn to_dmatrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.rows, self.cols, |i, k| self.get(i, k))
    }

    /// Largest singular value. Delegates to a dense SVD; this sits on the
    /// verification side only.
    pub fn spectral_norm(&self) -> f64 {
        if self.data.iter().all(|z| *z == ZERO) {
            return 0.0;
        }
        let svd = self.to_dmatrix().svd(false, false);
        svd.singular_values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn singular_values(&self) -> Vec<f64> {
        let svd = self.to_dmatrix().svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().cloned().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        sv
    }

    /// sigma_max / sigma_min.
    pub fn condition_number(&self) -> Result<f64> {
        let sv = self.singular_values();
        let smin = *sv.last().ok_or(Error::Shape("empty matrix".into()))?;
        if smin <= 0.0 {
            return Err(Error::BadOperator("singular matrix".into()));
        }
        Ok(sv[0] / smin)
    }

    /// Eigenvalues of a Hermitian matrix, ascending.
    pub fn hermitian_eigenvalues(&self, tol: f64) -> Result<Vec<f64>> {
        if !self.is_hermitian(tol) {
            let dev = self.sub(&self.adjoint()).max_abs();
            return Err(Error::NotHermitian(dev));
        }
        let eig = self.to_dmatrix().symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(ev)
    }

    pub fn inverse(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::Shape("inverse wants a square matrix".into()));
        }
        match self.to_dmatrix().try_inverse() {
            Some(inv) => {
                let mut out = Self::zeros(self.rows, self.cols);
                for i in 0..self.rows {
                    for k in 0..self.cols {
                        out.set(i, k, inv[(i, k)]);
                    }
                }
                Ok(out)
            }
            None => Err(Error::BadOperator("singular matrix".into())),
        }
    }

    /// LU solve of self * x = b.
    pub fn solve(&self, b: &ComplexVector) -> Result<ComplexVector> {
        if self.rows != self.cols || self.rows != b.len() {
            return Err(Error::Shape(format!(
                "solve wants square system, got {}x{} with rhs {}",
                self.rows,
                self.cols,
                b.len()
            )));
        }
        let lu = self.to_dmatrix().lu();
        let rhs = nalgebra::DVector::from_iterator(b.len(), b.data.iter().cloned());
        match lu.solve(&rhs) {
            Some(x) => Ok(ComplexVector { data: x.iter().cloned().collect() }),
            None => Err(Error::BadOperator("singular matrix".into())),
        }
    }
}

// JSON shape: {"rows","cols","re":[...],"im":[...]}
#[derive(Serialize, Deserialize)]
struct DenseDto {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Serialize for ComplexMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DenseDto {
            rows: self.rows,
            cols: self.cols,
            re: self.data.iter().map(|z| z.re).collect(),
            im: self.data.iter().map(|z| z.im).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let dto = DenseDto::deserialize(d)?;
        if dto.re.len() != dto.rows * dto.cols || dto.im.len() != dto.rows * dto.cols {
            return Err(serde::de::Error::custom("re/im length must equal rows*cols"));
        }
        Ok(ComplexMatrix {
            rows: dto.rows,
            cols: dto.cols,
            data: dto
                .re
                .iter()
                .zip(dto.im.iter())
                .map(|(&re, &im)| Complex64::new(re, im))
                .collect(),
        })
    }
}

// ---------------------------------------------------------------------------
// structured specs
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Toeplitz,
    Circulant,
    Hankel,
    ToeplitzLike,
    HankelLike,
    BandedToeplitz,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Toeplitz => "toeplitz",
            Family::Circulant => "circulant",
            Family::Hankel => "hankel",
            Family::ToeplitzLike => "toeplitz_like",
            Family::HankelLike => "hankel_like",
            Family::BandedToeplitz => "banded_toeplitz",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edit {
    pub i: usize,
    pub k: usize,
    pub value: Complex64,
}

/// A structured matrix kept in sequence form.
///
/// Sequence layout per family:
/// - toeplitz / banded_toeplitz / toeplitz_like: `seq[m] = t_{m-(n-1)}`,
///   length 2n-1, so the subdiagonal entries come first and `seq[n-1] = t_0`;
/// - circulant: `seq[j] = c_j`, length n (first column);
/// - hankel / hankel_like: `seq[m] = h_m`, length 2n-1 (first row then last
///   column, `M[i][k] = h_{i+k}`).
///
/// Edits are (row, col, replacement value) applied after the base build; they
/// are what makes a spec "-like". Later edits win on duplicate positions.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredMatrix {
    pub family: Family,
    pub n: usize,
    pub seq: Vec<Complex64>,
    pub edits: Vec<Edit>,
    pub bandwidth: Option<usize>,
}

impl StructuredMatrix {
    pub fn new(family: Family, n: usize, seq: Vec<Complex64>) -> Self {
        Self { family, n, seq, edits: Vec::new(), bandwidth: None }
    }

    pub fn with_edits(mut self, edits: Vec<Edit>) -> Self {
        self.edits = edits;
        self
    }

    pub fn with_bandwidth(mut self, rho: usize) -> Self {
        self.bandwidth = Some(rho);
        self
    }

    /// Toeplitz-layout accessor: t_j for j in -(n-1)..=(n-1).
    pub fn t(&self, j: i64) -> Complex64 {
        let idx = j + (self.n as i64 - 1);
        self.seq[idx as usize]
    }

    pub fn required_seq_len(family: Family, n: usize) -> usize {
        match family {
            Family::Circulant => n,
            _ => 2 * n - 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        log2_exact(self.n)?;
        let want = Self::required_seq_len(self.family, self.n);
        if self.seq.len() != want {
            return Err(Error::SequenceLength { want, got: self.seq.len() });
        }
        match self.family {
            Family::BandedToeplitz => {
                let rho = self.bandwidth.ok_or(Error::Bandwidth { rho: 0, n: self.n })?;
                if rho == 0 || 2 * rho >= self.n {
                    return Err(Error::Bandwidth { rho, n: self.n });
                }
                for j in -(self.n as i64 - 1)..=(self.n as i64 - 1) {
                    if j.unsigned_abs() as usize > rho && self.t(j) != ZERO {
                        return Err(Error::BandViolation { j, rho });
                    }
                }
            }
            Family::ToeplitzLike | Family::HankelLike => {}
            _ => {
                if !self.edits.is_empty() {
                    return Err(Error::Invalid(format!(
                        "edits are only meaningful for -like families, not {}",
                        self.family.name()
                    )));
                }
            }
        }
        if self.family != Family::BandedToeplitz && self.bandwidth.is_some() {
            return Err(Error::Invalid(
                "bandwidth is only meaningful for banded_toeplitz".into(),
            ));
        }
        for e in &self.edits {
            if e.i >= self.n || e.k >= self.n {
                return Err(Error::EditOutOfRange { i: e.i, k: e.k, n: self.n });
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<ComplexMatrix> {
        build_structured(self)
    }
}

/// Materialize the spec as a dense matrix. Edits are applied last.
pub fn build_structured(s: &StructuredMatrix) -> Result<ComplexMatrix> {
    s.validate()?;
    let n = s.n;
    let mut m = ComplexMatrix::zeros(n, n);
    match s.family {
        Family::Toeplitz | Family::BandedToeplitz | Family::ToeplitzLike => {
            for i in 0..n {
                for k in 0..n {
                    m.set(i, k, s.t(i as i64 - k as i64));
                }
            }
        }
        Family::Circulant => {
            for i in 0..n {
                for k in 0..n {
                    m.set(i, k, s.seq[(n + i - k) % n]);
                }
            }
        }
        Family::Hankel | Family::HankelLike => {
            for i in 0..n {
                for k in 0..n {
                    m.set(i, k, s.seq[i + k]);
                }
            }
        }
    }
    for e in &s.edits {
        m.set(e.i, e.k, e.value);
    }
    Ok(m)
}

/// Z_f: ones on the subdiagonal, f in the top-right corner.
///
/// Z_1 is the cyclic shift, Z_{-1} its sign-flipped cousin; Z_1^n = I and
/// Z_{-1}^n = -I, which is what the two-operator displacement pair leans on.
pub fn unit_f_circulant(n: usize, f: Complex64) -> Result<ComplexMatrix> {
    if n < 2 {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut m = ComplexMatrix::zeros(n, n);
    for i in 1..n {
        m.set(i, i - 1, ONE);
    }
    m.set(0, n - 1, f);
    Ok(m)
}

/// f-circulant generated by a vector: columns v, Z_f v, ..., Z_f^{n-1} v.
pub fn f_circulant_from_vector(v: &ComplexVector, f: Complex64) -> Result<ComplexMatrix> {
    let n = v.len();
    if n < 2 {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut m = ComplexMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let base = v.data[(n + r - c) % n];
            m.set(r, c, if r < c { f * base } else { base });
        }
    }
    Ok(m)
}

/// [[0, M], [M^dagger, 0]]: the Hermitian extension used when a solver
/// contract wants a Hermitian operator. Its eigenvalues are the plus/minus
/// singular values of M.
pub fn hermitian_extend(m: &ComplexMatrix) -> ComplexMatrix {
    let n = m.rows();
    assert_eq!(n, m.cols(), "hermitian_extend wants a square matrix");
    let mut out = ComplexMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for k in 0..n {
            out.set(i, n + k, m.get(i, k));
            out.set(n + i, k, m.get(k, i).conj());
        }
    }
    out
}

// JSON shape: {"family","n","seq":[[re,im],...],"edits":[[i,k,re,im],...],"bandwidth"}
#[derive(Serialize, Deserialize)]
struct StructuredDto {
    family: Family,
    n: usize,
    seq: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    edits: Vec<(usize, usize, f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bandwidth: Option<usize>,
}

impl Serialize for StructuredMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StructuredDto {
            family: self.family,
            n: self.n,
            seq: self.seq.iter().map(|z| (z.re, z.im)).collect(),
            edits: self.edits.iter().map(|e| (e.i, e.k, e.value.re, e.value.im)).collect(),
            bandwidth: self.bandwidth,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StructuredMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let dto = StructuredDto::deserialize(d)?;
        Ok(StructuredMatrix {
            family: dto.family,
            n: dto.n,
            seq: dto.seq.iter().map(|&(re, im)| Complex64::new(re, im)).collect(),
            edits: dto
                .edits
                .iter()
                .map(|&(i, k, re, im)| Edit { i, k, value: Complex64::new(re, im) })
                .collect(),
            bandwidth: dto.bandwidth,
        })
    }
}
