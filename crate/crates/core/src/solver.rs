//! Consumers of block encodings: postselected application, reference
//! inversion against the dense oracle, deviation budgeting, Wiener-class
//! and spectral-density diagnostics, and sampled inner-product estimation
//! for the linear-prediction pipeline.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::blockenc::{extract_block, BlockEncoding};
use crate::displacement::lcu_decompose_structured;
use crate::error::{Error, Result};
use crate::simcore::QState;
use crate::structmat::{
    log2_exact, Complex64, ComplexMatrix, ComplexVector, Family, StructuredMatrix, ZERO,
};

/// Near-singularity cap: inversion refuses blocks whose condition number
/// exceeds this (the budget contract assumes eigenvalues bounded away from
/// zero).
pub const KAPPA_CAP: f64 = 1e8;

// ---------------------------------------------------------------------------
// applying an encoding
// ---------------------------------------------------------------------------

/// Apply the encoded operator to a system state and postselect the
/// ancillas on zero: returns M|b> / ||M|b>|| and the postselection
/// probability ||(<0|^a (x) I) U |0>^a |b>||^2.
pub fn apply_and_postselect(enc: &BlockEncoding, b: &QState) -> Result<(QState, f64)> {
    let dim = 1usize << enc.system_qubits;
    if b.dim() != dim {
        return Err(Error::QubitMismatch(format!(
            "state has {} amplitudes, encoding system wants {dim}",
            b.dim()
        )));
    }
    let total = enc.circuit.qubits();
    // ancillas are the leading qubits, so |0...0>|b> occupies the first
    // 2^s amplitudes directly
    let mut full = vec![ZERO; 1 << total];
    full[..dim].copy_from_slice(&b.amps);
    let out = enc.circuit.apply(&QState::from_amplitudes(full)?)?;
    let kept = &out.amps[..dim];
    let prob: f64 = kept.iter().map(|z| z.norm_sqr()).sum();
    if prob <= 0.0 {
        return Err(Error::ZeroAmplitude);
    }
    let scale = prob.sqrt();
    let state = QState::from_amplitudes(kept.iter().map(|z| z / scale).collect())?;
    Ok((state, prob))
}

// ---------------------------------------------------------------------------
// reference inversion
// ---------------------------------------------------------------------------

/// Outcome of a reference solve through an encoding.
#[derive(Clone, Debug)]
pub struct SolveReport {
    /// Normalized solution of (extracted block) x = b.
    pub solution: ComplexVector,
    /// Condition number of the extracted block (singular-value ratio).
    pub kappa: f64,
    /// Postselection probability of re-applying the encoding to the
    /// solution state (the verification round trip).
    pub success_probability: f64,
    /// |<solution | reference solution>| against the dense oracle.
    pub fidelity: f64,
    /// Block deviation budget assumed: the encoding's claimed epsilon.
    pub delta: f64,
    pub queries: u64,
    pub gates: u64,
}

// JSON shape: {"solution":[[re,im],...],"kappa",...} — flat report row.
#[derive(Serialize, Deserialize)]
struct SolveReportDto {
    solution: Vec<(f64, f64)>,
    kappa: f64,
    success_probability: f64,
    fidelity: f64,
    delta: f64,
    queries: u64,
    gates: u64,
}

impl Serialize for SolveReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SolveReportDto {
            solution: self.solution.data.iter().map(|z| (z.re, z.im)).collect(),
            kappa: self.kappa,
            success_probability: self.success_probability,
            fidelity: self.fidelity,
            delta: self.delta,
            queries: self.queries,
            gates: self.gates,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SolveReport {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let dto = SolveReportDto::deserialize(d)?;
        Ok(SolveReport {
            solution: ComplexVector {
                data: dto.solution.iter().map(|&(re, im)| Complex64::new(re, im)).collect(),
            },
            kappa: dto.kappa,
            success_probability: dto.success_probability,
            fidelity: dto.fidelity,
            delta: dto.delta,
            queries: dto.queries,
            gates: dto.gates,
        })
    }
}

/// Solve (extracted block) x = b classically and report the solution with
/// diagnostics. This is the verification endpoint of the solver contract:
/// the block is read out of the circuit, inverted by the dense oracle, and
/// cross-checked against `reference` (the independently built matrix).
///
/// The extracted block must be Hermitian within twice the encoding's
/// deviation claim; wrap non-Hermitian encodings in `complement_to_hermitian`
/// first and extend the right-hand side with zeros.
pub fn solve_reference(
    enc: &BlockEncoding,
    b: &ComplexVector,
    reference: &ComplexMatrix,
) -> Result<SolveReport> {
    solve_reference_with_cap(enc, b, reference, KAPPA_CAP)
}

pub fn solve_reference_with_cap(
    enc: &BlockEncoding,
    b: &ComplexVector,
    reference: &ComplexMatrix,
    kappa_cap: f64,
) -> Result<SolveReport> {
    let dim = 1usize << enc.system_qubits;
    if b.len() != dim || reference.rows() != dim || reference.cols() != dim {
        return Err(Error::Shape(format!(
            "encoding block is {dim}x{dim}, rhs has {} entries, reference is {}x{}",
            b.len(),
            reference.rows(),
            reference.cols()
        )));
    }
    let block = extract_block(enc)?;
    let herm_dev = block.sub(&block.adjoint()).max_abs();
    // an eps-close encoding of a Hermitian matrix is Hermitian within 2 eps
    let herm_tol = 2.0 * enc.epsilon_claimed + 1e-8;
    if herm_dev > herm_tol {
        return Err(Error::NotHermitian(herm_dev));
    }
    let kappa = match block.condition_number() {
        Ok(k) => k,
        Err(Error::BadOperator(_)) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    if !kappa.is_finite() || kappa > kappa_cap {
        return Err(Error::KappaCap { kappa, cap: kappa_cap });
    }
    let solution = block.solve(b)?.normalized()?;
    let (_, success_probability) =
        apply_and_postselect(enc, &QState::from_amplitudes(solution.data.clone())?)?;
    let x_ref = reference.solve(b)?.normalized()?;
    let fidelity = solution.dot(&x_ref).norm();
    Ok(SolveReport {
        solution,
        kappa,
        success_probability,
        fidelity,
        delta: enc.epsilon_claimed,
        queries: enc.circuit.tally.oracle_queries,
        gates: enc.circuit.tally.elementary_gates,
    })
}

// ---------------------------------------------------------------------------
// budgets
// ---------------------------------------------------------------------------

/// Block-encoding precision an inversion needs for an eps-close solution:
/// delta = eps / (kappa^2 ln^3(kappa/eps)), the budget contract with the
/// order constant set to 1 and the natural logarithm.
pub fn error_budget(kappa: f64, eps: f64) -> Result<f64> {
    if kappa.is_nan() || kappa <= 2.0 {
        return Err(Error::KappaRange(format!(
            "budget contract wants kappa > 2, got {kappa}"
        )));
    }
    if kappa > KAPPA_CAP {
        return Err(Error::KappaCap { kappa, cap: KAPPA_CAP });
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InfeasibleBudget(format!(
            "eps must be in (0, 1), got {eps}"
        )));
    }
    let log = (kappa / eps).ln();
    Ok(eps / (kappa * kappa * log * log * log))
}

/// Split a block-deviation target eps across the two stochastic knobs so
/// each contributes at most eps/2: chi delta^2 = chi eps_prep = eps / 2.
pub fn encoding_budget(eps: f64, chi: f64) -> Result<(f64, f64)> {
    if eps.is_nan() || eps <= 0.0 || chi.is_nan() || chi <= 0.0 {
        return Err(Error::InfeasibleBudget(format!(
            "want eps > 0 and chi > 0, got eps={eps}, chi={chi}"
        )));
    }
    let delta = (eps / (2.0 * chi)).sqrt();
    if delta >= 1.0 {
        return Err(Error::InfeasibleBudget(format!(
            "eps={eps} asks for amplification miss delta={delta:.3} >= 1"
        )));
    }
    Ok((delta, eps / (2.0 * chi)))
}

// ---------------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WienerClassCheck {
    /// Absolute sum of the stored diagonals stays under the declared tail
    /// bound.
    pub in_class: bool,
    pub tail_sum: f64,
    /// l1 coefficient mass of the displacement decomposition.
    pub chi: f64,
    /// 2 rho; chi stays below this whenever the sequence is in class.
    pub chi_bound: f64,
    pub bound_holds: bool,
}

/// Absolute-summability check for Toeplitz sequences: in class iff
/// sum |t_j| < rho, in which case the decomposition mass chi is below
/// 2 rho.
pub fn wiener_class_check(spec: &StructuredMatrix, rho: f64) -> Result<WienerClassCheck> {
    match spec.family {
        Family::Toeplitz | Family::BandedToeplitz => {}
        f => {
            return Err(Error::Invalid(format!(
                "wiener-class check applies to toeplitz sequences, not {}",
                f.name()
            )))
        }
    }
    spec.validate()?;
    let tail_sum: f64 = spec.seq.iter().map(|z| z.norm()).sum();
    let chi = lcu_decompose_structured(spec)?.chi;
    let chi_bound = 2.0 * rho;
    Ok(WienerClassCheck {
        in_class: tail_sum < rho,
        tail_sum,
        chi,
        chi_bound,
        bound_holds: chi < chi_bound,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratingFnBounds {
    pub f_min: f64,
    pub f_max: f64,
    /// f_max / f_min; None flags an unbounded condition number
    /// (f_min <= 0).
    pub kappa_bound: Option<f64>,
}

/// Extrema of sampled generating-function values; the eigenvalues of the
/// Toeplitz matrix built from the same samples lie inside them.
pub fn generating_fn_bounds(samples: &[f64]) -> Result<GeneratingFnBounds> {
    if samples.is_empty() {
        return Err(Error::Invalid("generating function needs samples".into()));
    }
    let f_min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let f_max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kappa_bound = if f_min > 0.0 { Some(f_max / f_min) } else { None };
    Ok(GeneratingFnBounds { f_min, f_max, kappa_bound })
}

/// Hermitian Toeplitz matrix of a real generating function given on the
/// uniform grid lambda_m = 2 pi m / N: diagonals are the Riemann sums
/// t_j = (1/N) sum_m f(lambda_m) e^{-i j lambda_m}. With N >= n the
/// resulting matrix is exactly a grid-weighted average of rank-one
/// projectors, so its eigenvalues sit inside the sampled extrema.
pub fn toeplitz_from_samples(n: usize, samples: &[f64]) -> Result<StructuredMatrix> {
    log2_exact(n)?;
    let big_n = samples.len();
    if big_n < n {
        return Err(Error::Invalid(format!(
            "want at least {n} samples for order {n}, got {big_n}"
        )));
    }
    let mut seq = vec![ZERO; 2 * n - 1];
    for j in -(n as i64 - 1)..=(n as i64 - 1) {
        let mut t = ZERO;
        for (m, &f) in samples.iter().enumerate() {
            let ang = -(j as f64) * TAU * m as f64 / big_n as f64;
            t += f * Complex64::from_polar(1.0, ang);
        }
        seq[(j + n as i64 - 1) as usize] = t / big_n as f64;
    }
    Ok(StructuredMatrix::new(Family::Toeplitz, n, seq))
}

/// Minimum eigenvalue of a Hermitian positive definite matrix; errors if
/// the matrix misses either property.
pub fn positive_definite_min_eig(m: &ComplexMatrix, tol: f64) -> Result<f64> {
    let eigs = m.hermitian_eigenvalues(tol)?;
    let min = *eigs.first().ok_or_else(|| Error::Shape("empty matrix".into()))?;
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite(min));
    }
    Ok(min)
}

// ---------------------------------------------------------------------------
// linear prediction pieces
// ---------------------------------------------------------------------------

/// Autocovariances r(0..=lags) of a first-order autoregressive process
/// with coefficient a and innovation variance sigma2:
/// r(k) = sigma2 a^k / (1 - a^2).
pub fn ar1_autocovariances(a: f64, sigma2: f64, lags: usize) -> Result<Vec<f64>> {
    if a.is_nan() || a.abs() >= 1.0 {
        return Err(Error::Invalid(format!("ar(1) needs |a| < 1, got {a}")));
    }
    if sigma2.is_nan() || sigma2 <= 0.0 {
        return Err(Error::Invalid(format!("innovation variance must be positive, got {sigma2}")));
    }
    let base = sigma2 / (1.0 - a * a);
    Ok((0..=lags).map(|k| base * a.powi(k as i32)).collect())
}

/// Spectral density of the same process, sigma2 / |1 - a e^{i lambda}|^2;
/// its Fourier coefficients are the autocovariances above.
pub fn ar1_spectral_density(a: f64, sigma2: f64, lambda: f64) -> f64 {
    let denom = (1.0 - a * lambda.cos()).powi(2) + (a * lambda.sin()).powi(2);
    sigma2 / denom
}

/// One-step prediction normal equations from autocovariances r(0..=n):
/// the n x n Hermitian Toeplitz covariance R_{ik} = r(i-k) (as a spec, so
/// it can be encoded) and the right-hand side (r(1), ..., r(n)).
pub fn wiener_hopf_system(r: &[Complex64]) -> Result<(StructuredMatrix, ComplexVector)> {
    if r.len() < 2 {
        return Err(Error::Invalid(format!(
            "want autocovariances r(0..=n) with n >= 1, got {} values",
            r.len()
        )));
    }
    let n = r.len() - 1;
    log2_exact(n)?;
    if r[0].re.is_nan() || r[0].re <= 0.0 || r[0].im.abs() > 1e-12 * r[0].re.max(1.0) {
        return Err(Error::Invalid(format!("r(0) must be real and positive, got {}", r[0])));
    }
    let mut seq = vec![ZERO; 2 * n - 1];
    for (j, &rj) in r.iter().take(n).enumerate() {
        seq[n - 1 + j] = rj;
        seq[n - 1 - j] = rj.conj();
    }
    let rhs = ComplexVector { data: r[1..].to_vec() };
    Ok((StructuredMatrix::new(Family::Toeplitz, n, seq), rhs))
}

// ---------------------------------------------------------------------------
// sampled inner products
// ---------------------------------------------------------------------------

/// Two-register interference estimate of <u|w> from `shots` measurement
/// samples per quadrature: the plain circuit measures heads with
/// probability (1 + Re<u|w>)/2, the quarter-phase variant with
/// (1 - Im<u|w>)/2. Standard error is below 1/sqrt(shots) per component.
pub fn hadamard_test_inner(u: &QState, w: &QState, shots: u64, seed: u64) -> Result<Complex64> {
    if u.dim() != w.dim() {
        return Err(Error::QubitMismatch(format!(
            "inner product wants equal dimensions, got {} and {}",
            u.dim(),
            w.dim()
        )));
    }
    if shots == 0 {
        return Err(Error::Invalid("shots must be >= 1".into()));
    }
    let exact = u.inner(w);
    let p_re = ((1.0 + exact.re) / 2.0).clamp(0.0, 1.0);
    let p_im = ((1.0 - exact.im) / 2.0).clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |p: f64| -> f64 {
        let k = Binomial::new(shots, p).expect("clamped probability").sample(&mut rng);
        k as f64 / shots as f64
    };
    let est_re = 2.0 * draw(p_re) - 1.0;
    let est_im = 1.0 - 2.0 * draw(p_im);
    Ok(Complex64::new(est_re, est_im))
}
