//! Assembled block encodings of displacement-structured matrices.
//!
//! An encoding is the sandwich U = V'^dag (select-U) V on registers
//! [ancillas][system]: projecting the ancillas of U onto |0..0> leaves
//! M / alpha with alpha = prefactor * chi, chi the l1 mass of the slot
//! coefficients. V loads the principal square roots of the slot
//! coefficients, V' their conjugates, so each slot contributes
//! conj(sqrt(c))* . sqrt(c) = c exactly and the slot magnitudes cancel
//! against the normalization.
//!
//! Three coefficient-access models build V:
//! - black box: a rounded rotation oracle steered by fixed-point
//!   amplification. The flag-1 remainders of V and V' overlap, which costs
//!   at most delta^2 of block deviation on top of the 1 - P_L >= -delta^2
//!   amplitude deficit; rotation rounding adds the eps_prep share.
//! - qram: tree-walk preparations over stored subtree masses, optionally
//!   with truncated rotation angles.
//! - explicit: the full preparation unitary is tabulated (dense loader);
//!   only the short-list families (circulant, banded) support it.
//!
//! `resource_estimate` reproduces the exact tally of `encode` without
//! building any operator, so counts stay available far past the simulable
//! range; the two are pinned to each other by tests.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::displacement::LcuDecomposition;
use crate::error::{Error, Result};
use crate::simcore::{
    select_gate_charge, select_u_with_layout, slot_coefficients, CircuitUnitary, QState,
    RegisterLayout, SelectLayout,
};
use crate::stateprep::{
    dense_loader, exact_amplification_schedule, fixed_point_phase_schedule, qram_angle_bits,
    qram_build, qram_prep, qram_prep_gates, quantize_rotation, sqrt_amplitudes, steerable_prep,
    steerable_prep_sparse, SparseSupportMap, SteerableOptions,
};
use crate::structmat::{
    log2_exact, Complex64, ComplexMatrix, Family, StructuredMatrix, ONE, ZERO,
};

/// Planning headroom between the one-pass success probability and the floor
/// the amplification schedule is built for: a caller that knows p0 only up
/// to relative error 1/2 (the estimation accuracy used throughout) plans
/// for p0 / (1 + 1/2).
pub const SCHEDULE_HEADROOM: f64 = 1.5;

/// Deviation claimed by the exact-preparation paths: float assembly noise,
/// orders of magnitude above what the build actually leaves behind.
pub const EXACT_CLAIM: f64 = 1e-9;

// ---------------------------------------------------------------------------
// options
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessModel {
    BlackBox,
    Qram,
    Explicit,
}

impl AccessModel {
    pub fn name(&self) -> &'static str {
        match self {
            AccessModel::BlackBox => "blackbox",
            AccessModel::Qram => "qram",
            AccessModel::Explicit => "explicit",
        }
    }
}

impl std::str::FromStr for AccessModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blackbox" => Ok(AccessModel::BlackBox),
            "qram" => Ok(AccessModel::Qram),
            "explicit" => Ok(AccessModel::Explicit),
            other => Err(Error::Parse(format!(
                "unknown access model {other:?} (want blackbox, qram, or explicit)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncodeOptions {
    pub model: AccessModel,
    /// Load the preparation amplitudes exactly (reference mode) instead of
    /// through rounded rotation oracles / truncated tree angles.
    pub exact_prep: bool,
    /// Fixed-point amplification miss bound for stochastic black-box preps.
    pub delta: f64,
    /// Preparation truncation budget (rotation grids, tree angles).
    pub eps_prep: f64,
}

impl EncodeOptions {
    pub fn exact(model: AccessModel) -> Self {
        Self { model, exact_prep: true, delta: 0.1, eps_prep: 1e-3 }
    }

    pub fn stochastic(model: AccessModel, delta: f64, eps_prep: f64) -> Self {
        Self { model, exact_prep: false, delta, eps_prep }
    }
}

/// Access models that can encode a family.
pub fn supported_models(family: Family) -> &'static [AccessModel] {
    match family {
        Family::Circulant | Family::BandedToeplitz => {
            &[AccessModel::BlackBox, AccessModel::Qram, AccessModel::Explicit]
        }
        _ => &[AccessModel::BlackBox, AccessModel::Qram],
    }
}

// ---------------------------------------------------------------------------
// layouts and ancilla budgets
// ---------------------------------------------------------------------------

/// Word list of the compact banded layout, fixed by the bandwidth alone so
/// the index register width never depends on which band entries vanish:
/// Z_1^j for j in {0..rho} u {n-rho..n-1}, then Z_{-1}^p for
/// p in {1..rho} u {n-rho..n-1}; 4 rho + 1 words.
pub fn banded_word_list(n: usize, rho: usize) -> Vec<(usize, usize, bool)> {
    let mut words = Vec::with_capacity(4 * rho + 1);
    for j in (0..=rho).chain(n - rho..n) {
        words.push((j, n - 1, false));
    }
    for p in (1..=rho).chain(n - rho..n) {
        words.push((0, n - 1 - p, false));
    }
    words
}

/// Select layout per family. The -like families always take the full grid:
/// special edit patterns can collapse their term lists into narrower
/// layouts, which would let the ancilla register shape vary from instance
/// to instance of the same family.
fn family_layout(s: &StructuredMatrix, model: AccessModel) -> Result<SelectLayout> {
    let n = s.n;
    match (s.family, model) {
        (Family::Circulant, _) => Ok(SelectLayout::Circulant { n }),
        (Family::BandedToeplitz, AccessModel::Explicit) => {
            let rho = s.bandwidth.ok_or(Error::Bandwidth { rho: 0, n })?;
            Ok(SelectLayout::Compact { n, words: banded_word_list(n, rho) })
        }
        (Family::Toeplitz | Family::BandedToeplitz, _) => {
            Ok(SelectLayout::Pair { n, with_j: false })
        }
        (Family::Hankel, AccessModel::Explicit) => Err(Error::UnsupportedModel(
            "explicit tables cover the circulant and banded families, not hankel".into(),
        )),
        (Family::Hankel, _) => Ok(SelectLayout::Pair { n, with_j: true }),
        (Family::ToeplitzLike | Family::HankelLike, AccessModel::Explicit) => {
            Err(Error::UnsupportedModel(format!(
                "explicit tables cover the circulant and banded families, not {}",
                s.family.name()
            )))
        }
        (Family::ToeplitzLike, _) => Ok(SelectLayout::Grid { n, stein: false }),
        (Family::HankelLike, _) => Ok(SelectLayout::Grid { n, stein: true }),
    }
}

/// Ancilla budget of `encode` per family and model.
pub fn expected_ancillas(
    family: Family,
    model: AccessModel,
    n: usize,
    bandwidth: Option<usize>,
) -> Result<usize> {
    let s = log2_exact(n)?;
    match (family, model) {
        (Family::Circulant, AccessModel::BlackBox) => Ok(s + 1),
        (Family::Circulant, _) => Ok(s),
        (Family::BandedToeplitz, AccessModel::Explicit) => {
            let rho = bandwidth.ok_or(Error::Bandwidth { rho: 0, n })?;
            let words = 4 * rho + 1;
            Ok(usize::max(1, words.next_power_of_two().trailing_zeros() as usize))
        }
        (Family::Toeplitz | Family::Hankel | Family::BandedToeplitz, AccessModel::BlackBox) => {
            Ok(s + 2)
        }
        (Family::Toeplitz | Family::Hankel | Family::BandedToeplitz, AccessModel::Qram) => {
            Ok(s + 1)
        }
        (Family::ToeplitzLike | Family::HankelLike, AccessModel::BlackBox) => Ok(2 * s + 2),
        (Family::ToeplitzLike | Family::HankelLike, AccessModel::Qram) => Ok(2 * s),
        (f, AccessModel::Explicit) => Err(Error::UnsupportedModel(format!(
            "explicit tables cover the circulant and banded families, not {}",
            f.name()
        ))),
    }
}

// ---------------------------------------------------------------------------
// encodings
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct BlockEncoding {
    pub family: Family,
    pub model: AccessModel,
    /// Block dimension (a power of two).
    pub n: usize,
    /// Scale of the encoded block: the matrix sits in the ancilla-zero
    /// corner divided by alpha.
    pub alpha: f64,
    /// l1 mass of the slot coefficients; alpha = prefactor * chi.
    pub chi: f64,
    pub ancillas: usize,
    pub system_qubits: usize,
    pub layout: RegisterLayout,
    pub circuit: CircuitUnitary,
    /// Deviation bound the construction stands behind.
    pub epsilon_claimed: f64,
    /// Fixed-point amplification rounds per preparation (0 when exact).
    pub amplification_rounds: usize,
    /// Classical values a qram/explicit realization must store.
    pub memory_entries: usize,
}

/// Report row for serialization; `deviation` is filled by verification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EncodeReport {
    pub family: String,
    pub model: String,
    pub n: usize,
    pub alpha: f64,
    pub ancillas: usize,
    pub epsilon_claimed: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviation: Option<f64>,
    pub queries: u64,
    pub gates: u64,
    pub memory_entries: usize,
}

impl BlockEncoding {
    pub fn report(&self, deviation: Option<f64>) -> EncodeReport {
        EncodeReport {
            family: self.family.name().to_string(),
            model: self.model.name().to_string(),
            n: self.n,
            alpha: self.alpha,
            ancillas: self.ancillas,
            epsilon_claimed: self.epsilon_claimed,
            deviation,
            queries: self.circuit.tally.oracle_queries,
            gates: self.circuit.tally.elementary_gates,
            memory_entries: self.memory_entries,
        }
    }
}

/// V on the ancillas, select-U on (index, system), V'^dag on the ancillas.
fn assemble_circuit(
    anc: usize,
    sbits: usize,
    v: &CircuitUnitary,
    v_conj: &CircuitUnitary,
    sel: &CircuitUnitary,
    sel_anc_qubits: &[usize],
) -> CircuitUnitary {
    let total = anc + sbits;
    let mut circ = CircuitUnitary::identity(total);
    let anc_map: Vec<usize> = (0..anc).collect();
    circ.compose_lifted(v, &anc_map);
    let mut sel_map: Vec<usize> = sel_anc_qubits.to_vec();
    sel_map.extend(anc..total);
    circ.compose_lifted(sel, &sel_map);
    circ.compose_lifted(&v_conj.adjoint(), &anc_map);
    circ
}

/// Support columns per row of the grid decomposition, last column always
/// included (the canonical words put every Z_1 power there).
fn grid_support(dec: &LcuDecomposition) -> (Vec<Vec<usize>>, usize) {
    let n = dec.n;
    let mut support: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, row) in support.iter_mut().enumerate().skip(1) {
        let mut cols: BTreeSet<usize> =
            dec.terms.iter().filter(|t| t.i == i).map(|t| t.k).collect();
        cols.insert(n - 1);
        *row = cols.into_iter().collect();
    }
    let d_raw = support.iter().skip(1).map(|r| r.len()).max().unwrap_or(1).max(1);
    (support, d_raw)
}

/// Rounding grid of the rotation oracle: chosen so the quantization share
/// of the block deviation stays under chi * eps_prep.
fn rotation_step(eps_prep: f64, p0_raw: f64, slot_count: f64) -> f64 {
    eps_prep * (p0_raw / SCHEDULE_HEADROOM).sqrt() / slot_count.sqrt()
}

fn stochastic_claim(alpha: f64, chi: f64, delta: f64, eps_prep: f64) -> f64 {
    2.0 * alpha * delta * delta + chi * eps_prep
}

/// Build a block encoding of the structured spec under the given access
/// model. See the module docs for the register layouts per family.
pub fn encode(s: &StructuredMatrix, opt: &EncodeOptions) -> Result<BlockEncoding> {
    s.validate()?;
    let n = s.n;
    let sbits = log2_exact(n)?;
    let dec = crate::displacement::lcu_decompose_structured(s)?;
    let layout = family_layout(s, opt.model)?;
    let slots = slot_coefficients(&dec, &layout)?;
    let chi: f64 = slots.iter().map(|z| z.norm()).sum();
    if chi <= 0.0 {
        return Err(Error::ZeroVector);
    }
    let alpha = dec.prefactor * chi;
    let sel = select_u_with_layout(n, &layout)?;
    let ib = layout.index_bits();
    let amps = sqrt_amplitudes(&slots, false);
    let amps_conj = sqrt_amplitudes(&slots, true);

    let enc = match opt.model {
        AccessModel::BlackBox => match &layout {
            SelectLayout::Grid { .. } => {
                let anc = 2 * sbits + 2;
                let (support, d_raw) = grid_support(&dec);
                let map = SparseSupportMap::from_support(n, &support, d_raw)?;
                let (v, v_conj, claim, rounds) = if opt.exact_prep {
                    let mut tgt = vec![ZERO; 1 << anc];
                    let mut tgt_c = vec![ZERO; 1 << anc];
                    for i in 0..n {
                        for k in 0..n {
                            let a = amps[i * n + k];
                            if a != ZERO {
                                let b = usize::from(i >= 1);
                                let idx = (b << (2 * sbits + 1)) | (i << (sbits + 1)) | (k << 1);
                                tgt[idx] = a;
                                tgt_c[idx] = amps_conj[i * n + k];
                            }
                        }
                    }
                    (dense_loader(&tgt)?, dense_loader(&tgt_c)?, EXACT_CLAIM, 0)
                } else {
                    let cells = (n + (n - 1) * map.d) as f64;
                    let max2 = amps.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
                    let p0_raw = chi / (cells * max2);
                    let step = rotation_step(opt.eps_prep, p0_raw, cells);
                    let sopt = SteerableOptions {
                        delta: opt.delta,
                        rounding: Some(step),
                        headroom: SCHEDULE_HEADROOM,
                    };
                    let p = steerable_prep_sparse(&map, &amps, &sopt)?;
                    let pc = steerable_prep_sparse(&map, &amps_conj, &sopt)?;
                    debug_assert_eq!(p.schedule.l, pc.schedule.l);
                    let claim = stochastic_claim(alpha, chi, opt.delta, opt.eps_prep);
                    (p.circuit, pc.circuit, claim, p.schedule.l)
                };
                let regs = RegisterLayout::new(&[
                    ("branch", 1),
                    ("row", sbits),
                    ("col", sbits),
                    ("flag", 1),
                    ("system", sbits),
                ]);
                let sel_anc: Vec<usize> = (1..=2 * sbits).collect();
                let circuit = assemble_circuit(anc, sbits, &v, &v_conj, &sel, &sel_anc);
                BlockEncoding {
                    family: s.family,
                    model: opt.model,
                    n,
                    alpha,
                    chi,
                    ancillas: anc,
                    system_qubits: sbits,
                    layout: regs,
                    circuit,
                    epsilon_claimed: claim,
                    amplification_rounds: rounds,
                    memory_entries: 0,
                }
            }
            _ => {
                let anc = ib + 1;
                let (v, v_conj, claim, rounds) = if opt.exact_prep {
                    let mut tgt = vec![ZERO; 1 << anc];
                    let mut tgt_c = vec![ZERO; 1 << anc];
                    for j in 0..slots.len() {
                        tgt[j << 1] = amps[j];
                        tgt_c[j << 1] = amps_conj[j];
                    }
                    (dense_loader(&tgt)?, dense_loader(&tgt_c)?, EXACT_CLAIM, 0)
                } else {
                    let slot_count = slots.len() as f64;
                    let max2 = amps.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
                    let p0_raw = chi / (slot_count * max2);
                    let step = rotation_step(opt.eps_prep, p0_raw, slot_count);
                    let sopt = SteerableOptions {
                        delta: opt.delta,
                        rounding: Some(step),
                        headroom: SCHEDULE_HEADROOM,
                    };
                    let p = steerable_prep(&amps, &sopt)?;
                    let pc = steerable_prep(&amps_conj, &sopt)?;
                    debug_assert_eq!(p.schedule.l, pc.schedule.l);
                    let claim = stochastic_claim(alpha, chi, opt.delta, opt.eps_prep);
                    (p.circuit, pc.circuit, claim, p.schedule.l)
                };
                let regs = RegisterLayout::new(&[
                    ("index", ib),
                    ("flag", 1),
                    ("system", sbits),
                ]);
                let sel_anc: Vec<usize> = (0..ib).collect();
                let circuit = assemble_circuit(anc, sbits, &v, &v_conj, &sel, &sel_anc);
                BlockEncoding {
                    family: s.family,
                    model: opt.model,
                    n,
                    alpha,
                    chi,
                    ancillas: anc,
                    system_qubits: sbits,
                    layout: regs,
                    circuit,
                    epsilon_claimed: claim,
                    amplification_rounds: rounds,
                    memory_entries: 0,
                }
            }
        },
        AccessModel::Qram => match &layout {
            SelectLayout::Grid { .. } => {
                let anc = 2 * sbits;
                let (_, d_raw) = grid_support(&dec);
                let d = d_raw.next_power_of_two();
                // level budget: one row tree plus one column tree per row,
                // each contributing (sbits + 1) quantized angles
                let step = if opt.exact_prep {
                    None
                } else {
                    Some(opt.eps_prep / (2.0 * (2 * sbits + 2) as f64))
                };
                let v = like_qram_prep(n, sbits, &slots, false, step)?;
                let v_conj = like_qram_prep(n, sbits, &slots, true, step)?;
                let claim = if opt.exact_prep {
                    EXACT_CLAIM
                } else {
                    alpha * opt.eps_prep * (1.0 + opt.eps_prep)
                };
                let regs = RegisterLayout::new(&[
                    ("row", sbits),
                    ("col", sbits),
                    ("system", sbits),
                ]);
                let sel_anc: Vec<usize> = (0..2 * sbits).collect();
                let circuit = assemble_circuit(anc, sbits, &v, &v_conj, &sel, &sel_anc);
                BlockEncoding {
                    family: s.family,
                    model: opt.model,
                    n,
                    alpha,
                    chi,
                    ancillas: anc,
                    system_qubits: sbits,
                    layout: regs,
                    circuit,
                    epsilon_claimed: claim,
                    amplification_rounds: 0,
                    memory_entries: (2 * n - 1) + n * d * (sbits + 1),
                }
            }
            _ => {
                let anc = ib;
                let tree = qram_build(&slots)?;
                let step = if opt.exact_prep {
                    None
                } else {
                    Some(opt.eps_prep / (2.0 * (ib + 1) as f64))
                };
                let v = qram_prep(&tree, false, step)?;
                let v_conj = qram_prep(&tree, true, step)?;
                let claim = if opt.exact_prep {
                    EXACT_CLAIM
                } else {
                    alpha * opt.eps_prep * (1.0 + opt.eps_prep)
                };
                let regs = RegisterLayout::new(&[("index", ib), ("system", sbits)]);
                let sel_anc: Vec<usize> = (0..ib).collect();
                let circuit = assemble_circuit(anc, sbits, &v, &v_conj, &sel, &sel_anc);
                BlockEncoding {
                    family: s.family,
                    model: opt.model,
                    n,
                    alpha,
                    chi,
                    ancillas: anc,
                    system_qubits: sbits,
                    layout: regs,
                    circuit,
                    epsilon_claimed: claim,
                    amplification_rounds: 0,
                    memory_entries: tree.memory_entries(),
                }
            }
        },
        AccessModel::Explicit => {
            let anc = ib;
            let mut tgt = vec![ZERO; 1 << ib];
            let mut tgt_c = vec![ZERO; 1 << ib];
            tgt[..slots.len()].copy_from_slice(&amps);
            tgt_c[..slots.len()].copy_from_slice(&amps_conj);
            let v = dense_loader(&tgt)?;
            let v_conj = dense_loader(&tgt_c)?;
            let memory = match &layout {
                SelectLayout::Compact { words, .. } => words.len(),
                _ => layout.slots(),
            };
            let regs = RegisterLayout::new(&[("index", ib), ("system", sbits)]);
            let sel_anc: Vec<usize> = (0..ib).collect();
            let circuit = assemble_circuit(anc, sbits, &v, &v_conj, &sel, &sel_anc);
            BlockEncoding {
                family: s.family,
                model: opt.model,
                n,
                alpha,
                chi,
                ancillas: anc,
                system_qubits: sbits,
                layout: regs,
                circuit,
                epsilon_claimed: EXACT_CLAIM,
                amplification_rounds: 0,
                memory_entries: memory,
            }
        }
    };
    let expected = expected_ancillas(s.family, opt.model, n, s.bandwidth)?;
    debug_assert_eq!(enc.ancillas, expected);
    Ok(enc)
}

/// Tree-walk preparation for the grid slots: a row-mass tree on the row
/// register, then per-row column trees as one block-diagonal unit.
fn like_qram_prep(
    n: usize,
    sbits: usize,
    slots: &[Complex64],
    conjugate: bool,
    step: Option<f64>,
) -> Result<CircuitUnitary> {
    let masses: Vec<Complex64> = (0..n)
        .map(|i| {
            let w: f64 = slots[i * n..(i + 1) * n].iter().map(|z| z.norm()).sum();
            Complex64::new(w, 0.0)
        })
        .collect();
    let row_tree = qram_build(&masses)?;
    let mut c = CircuitUnitary::identity(2 * sbits);
    let q = qram_prep(&row_tree, conjugate, step)?;
    c.compose_lifted(&q, &(0..sbits).collect::<Vec<_>>());
    let dim = n * n;
    let mut mat = vec![ZERO; dim * dim];
    for i in 0..n {
        let row = &slots[i * n..(i + 1) * n];
        let mass: f64 = row.iter().map(|z| z.norm()).sum();
        if mass <= 0.0 {
            for r in 0..n {
                mat[(i * n + r) * dim + (i * n + r)] = ONE;
            }
        } else {
            let col_tree = qram_build(row)?;
            let block = qram_prep(&col_tree, conjugate, step)?.materialize()?;
            for r in 0..n {
                for cc in 0..n {
                    mat[(i * n + r) * dim + (i * n + cc)] = block.get(r, cc);
                }
            }
        }
    }
    c.push_small(&(0..2 * sbits).collect::<Vec<_>>(), mat);
    c.charge_gates(n as u64 * qram_prep_gates(sbits, qram_angle_bits(step)));
    Ok(c)
}

// ---------------------------------------------------------------------------
// extraction and verification
// ---------------------------------------------------------------------------

/// The encoded block, rescaled by alpha: rows and columns of
/// alpha <0_anc, t| U |0_anc, e>.
pub fn extract_block(enc: &BlockEncoding) -> Result<ComplexMatrix> {
    let dim = 1usize << enc.system_qubits;
    let total = enc.circuit.qubits();
    let mut b = ComplexMatrix::zeros(dim, dim);
    for e in 0..dim {
        let out = enc.circuit.apply(&QState::basis(total, e))?;
        for t in 0..dim {
            b.set(t, e, enc.alpha * out.amps[t]);
        }
    }
    Ok(b)
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    /// Spectral norm of (reference - alpha * encoded block).
    pub deviation: f64,
    pub spectral_norm: f64,
    pub alpha: f64,
    /// alpha must dominate the spectral norm for the block to be a
    /// contraction of the right scale.
    pub alpha_dominates: bool,
    pub epsilon_claimed: f64,
    pub within_claim: bool,
}

pub fn verify_block_encoding(enc: &BlockEncoding, reference: &ComplexMatrix) -> Result<VerifyReport> {
    let dim = 1usize << enc.system_qubits;
    if reference.rows() != dim || reference.cols() != dim {
        return Err(Error::Shape(format!(
            "reference is {}x{}, encoding block is {dim}x{dim}",
            reference.rows(),
            reference.cols()
        )));
    }
    let block = extract_block(enc)?;
    let deviation = reference.sub(&block).spectral_norm();
    let spectral_norm = reference.spectral_norm();
    Ok(VerifyReport {
        deviation,
        spectral_norm,
        alpha: enc.alpha,
        alpha_dominates: enc.alpha + 1e-9 >= spectral_norm,
        epsilon_claimed: enc.epsilon_claimed,
        within_claim: deviation <= enc.epsilon_claimed + 1e-12,
    })
}

/// Embed the encoding into one of the Hermitian doubling
/// [[0, M], [M^dag, 0]]: a mirror qubit is prepended to the system register
/// and W = (|0><0| (x) U + |1><1| (x) U^dag) . X_mirror encodes the doubled
/// matrix with the same alpha, ancillas, and deviation bound.
pub fn complement_to_hermitian(enc: &BlockEncoding) -> Result<BlockEncoding> {
    let total = enc.circuit.qubits();
    let a = enc.ancillas;
    let mut circ = CircuitUnitary::identity(total + 1);
    circ.push_x(a);
    let map: Vec<usize> = (0..total).map(|q| if q < a { q } else { q + 1 }).collect();
    let mut lifted = CircuitUnitary::identity(total + 1);
    lifted.compose_lifted(&enc.circuit, &map);
    circ.compose(&lifted.controlled(a, 0));
    circ.compose(&lifted.adjoint().controlled(a, 1));

    let mut regs: Vec<(String, usize)> = Vec::new();
    for name in enc.layout.names() {
        if name == "system" {
            regs.push(("mirror".to_string(), 1));
        }
        regs.push((name.to_string(), enc.layout.range(name).len()));
    }
    let reg_refs: Vec<(&str, usize)> = regs.iter().map(|(s, l)| (s.as_str(), *l)).collect();
    Ok(BlockEncoding {
        family: enc.family,
        model: enc.model,
        n: 2 * enc.n,
        alpha: enc.alpha,
        chi: enc.chi,
        ancillas: a,
        system_qubits: enc.system_qubits + 1,
        layout: RegisterLayout::new(&reg_refs),
        circuit: circ,
        epsilon_claimed: enc.epsilon_claimed,
        amplification_rounds: enc.amplification_rounds,
        memory_entries: enc.memory_entries,
    })
}

// ---------------------------------------------------------------------------
// count-only resource estimates
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub family: String,
    pub model: String,
    pub n: usize,
    pub alpha: f64,
    pub chi: f64,
    pub ancillas: usize,
    pub epsilon_claimed: f64,
    pub amplification_rounds: usize,
    pub queries: u64,
    pub gates: u64,
    pub memory_entries: usize,
}

/// (queries, gates) of the fixed-point wrapper around a base pass.
fn wrap_rounds(
    base: (u64, u64),
    qubits: usize,
    good_targets: usize,
    rounds: usize,
) -> (u64, u64) {
    let passes = 1 + 2 * rounds as u64;
    let per_round = (2 * good_targets as u64 + 2) + (2 * qubits as u64 + 2);
    (passes * base.0, passes * base.1 + rounds as u64 * per_round)
}

fn quantized_cells(amps: &[Complex64], step: f64) -> Vec<Complex64> {
    let xmax = amps.iter().map(|z| z.norm()).fold(0.0, f64::max);
    amps.iter().map(|&z| quantize_rotation(z / xmax, step)).collect()
}

/// Tally of `encode` computed in closed form, without building operators;
/// usable far past the simulable range. Matches the built circuit's counts
/// exactly (pinned by tests).
pub fn resource_estimate(s: &StructuredMatrix, opt: &EncodeOptions) -> Result<ResourceEstimate> {
    s.validate()?;
    let n = s.n;
    let sbits = log2_exact(n)?;
    let dec = crate::displacement::lcu_decompose_structured(s)?;
    let layout = family_layout(s, opt.model)?;
    let slots = slot_coefficients(&dec, &layout)?;
    let chi: f64 = slots.iter().map(|z| z.norm()).sum();
    if chi <= 0.0 {
        return Err(Error::ZeroVector);
    }
    let alpha = dec.prefactor * chi;
    let sel_gates = select_gate_charge(n, &layout);
    let ib = layout.index_bits();
    let amps = sqrt_amplitudes(&slots, false);
    let ancillas = expected_ancillas(s.family, opt.model, n, s.bandwidth)?;

    let (claim, rounds, queries, gates, memory) = match opt.model {
        AccessModel::BlackBox => match &layout {
            SelectLayout::Grid { .. } => {
                let (support, d_raw) = grid_support(&dec);
                let map = SparseSupportMap::from_support(n, &support, d_raw)?;
                let q = 2 * sbits + 2;
                if opt.exact_prep {
                    let loader = 2u64 * (1u64 << q);
                    (EXACT_CLAIM, 0, 0, 2 * loader + sel_gates, 0)
                } else {
                    let cells = (n + (n - 1) * map.d) as f64;
                    let max2 = amps.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
                    let p0_raw = chi / (cells * max2);
                    let step = rotation_step(opt.eps_prep, p0_raw, cells);
                    let quant = quantized_cells(&amps, step);
                    let mut p0 = 0.0;
                    for q in quant.iter().take(n) {
                        p0 += q.norm_sqr() / cells;
                    }
                    for i in 1..n {
                        for k in 0..map.d {
                            p0 += quant[i * n + map.rows[i][k]].norm_sqr() / cells;
                        }
                    }
                    let schedule = fixed_point_phase_schedule(p0 / SCHEDULE_HEADROOM, opt.delta)?;
                    // mirror of the sparse initializer tally
                    let ld = map.d.trailing_zeros() as u64;
                    let raw_gates =
                        1 + sbits as u64 + (sbits as u64 + ld) + (2 * sbits as u64 + 2)
                            + u64::from(map.d > 1);
                    let raw = (1u64, raw_gates);
                    let p1 = (map.d as f64 + 1.0) / (2.0 * map.d as f64);
                    let j1 = exact_amplification_schedule(p1.sqrt().min(1.0).asin()).0;
                    let stage1 = wrap_rounds(raw, q, 1, j1);
                    let p2 = (n as f64 + (n as f64 - 1.0) * map.d as f64)
                        / (n as f64 * (map.d as f64 + 1.0));
                    let j2 = exact_amplification_schedule(p2.sqrt().min(1.0).asin()).0;
                    let stage2 = wrap_rounds(stage1, q, 1 + sbits, j2);
                    let u_a = (stage2.0 + 2, stage2.1 + (2 * sbits as u64 + 1) + 2);
                    let v = wrap_rounds(u_a, q, 1, schedule.l);
                    let claim = stochastic_claim(alpha, chi, opt.delta, opt.eps_prep);
                    (claim, schedule.l, 2 * v.0, 2 * v.1 + sel_gates, 0)
                }
            }
            _ => {
                let q = ib + 1;
                if opt.exact_prep {
                    let loader = 2u64 * (1u64 << q);
                    (EXACT_CLAIM, 0, 0, 2 * loader + sel_gates, 0)
                } else {
                    let slot_count = slots.len() as f64;
                    let max2 = amps.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
                    let p0_raw = chi / (slot_count * max2);
                    let step = rotation_step(opt.eps_prep, p0_raw, slot_count);
                    let quant = quantized_cells(&amps, step);
                    let p0 = quant.iter().map(|z| z.norm_sqr()).sum::<f64>() / slot_count;
                    let schedule = fixed_point_phase_schedule(p0 / SCHEDULE_HEADROOM, opt.delta)?;
                    let u_a = (2u64, 2 * ib as u64 + 2);
                    let v = wrap_rounds(u_a, q, 1, schedule.l);
                    let claim = stochastic_claim(alpha, chi, opt.delta, opt.eps_prep);
                    (claim, schedule.l, 2 * v.0, 2 * v.1 + sel_gates, 0)
                }
            }
        },
        AccessModel::Qram => match &layout {
            SelectLayout::Grid { .. } => {
                let (_, d_raw) = grid_support(&dec);
                let d = d_raw.next_power_of_two();
                let step = if opt.exact_prep {
                    None
                } else {
                    Some(opt.eps_prep / (2.0 * (2 * sbits + 2) as f64))
                };
                let bits = qram_angle_bits(step);
                let per_prep = qram_prep_gates(sbits, bits) * (1 + n as u64);
                let claim = if opt.exact_prep {
                    EXACT_CLAIM
                } else {
                    alpha * opt.eps_prep * (1.0 + opt.eps_prep)
                };
                let memory = (2 * n - 1) + n * d * (sbits + 1);
                (claim, 0, 0, 2 * per_prep + sel_gates, memory)
            }
            _ => {
                let step = if opt.exact_prep {
                    None
                } else {
                    Some(opt.eps_prep / (2.0 * (ib + 1) as f64))
                };
                let bits = qram_angle_bits(step);
                let per_prep = qram_prep_gates(ib, bits);
                let claim = if opt.exact_prep {
                    EXACT_CLAIM
                } else {
                    alpha * opt.eps_prep * (1.0 + opt.eps_prep)
                };
                (claim, 0, 0, 2 * per_prep + sel_gates, 2 * slots.len() - 1)
            }
        },
        AccessModel::Explicit => {
            let loader = 2u64 * (1u64 << ib);
            let memory = match &layout {
                SelectLayout::Compact { words, .. } => words.len(),
                _ => layout.slots(),
            };
            (EXACT_CLAIM, 0, 0, 2 * loader + sel_gates, memory)
        }
    };
    Ok(ResourceEstimate {
        family: s.family.name().to_string(),
        model: opt.model.name().to_string(),
        n,
        alpha,
        chi,
        ancillas,
        epsilon_claimed: claim,
        amplification_rounds: rounds,
        queries,
        gates,
        memory_entries: memory,
    })
}
