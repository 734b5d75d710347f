//! Command-line driver wiring the library end to end: displacement
//! decompositions, block-encoding construction and verification, reference
//! solves, the one-step linear-prediction pipeline, and closed-form
//! resource scaling tables.
//!
//! Exit codes: 0 pass, 2 verification failure (or unusable input),
//! 3 infeasible parameters.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use dispenc::blockenc::{
    encode, resource_estimate, verify_block_encoding, AccessModel, EncodeOptions, ResourceEstimate,
};
use dispenc::displacement::{
    lcu_decompose, lcu_decompose_structured, DisplacementKind, LcuDecomposition, LcuTerm,
};
use dispenc::error::Error as LibError;
use dispenc::simcore::QState;
use dispenc::solver::{
    ar1_autocovariances, ar1_spectral_density, encoding_budget, error_budget, hadamard_test_inner,
    positive_definite_min_eig, solve_reference, toeplitz_from_samples, wiener_class_check,
    wiener_hopf_system, WienerClassCheck,
};
use dispenc::structmat::{build_structured, ComplexMatrix, ComplexVector, Family, StructuredMatrix};

/// Build, check, and cost block encodings of displacement-structured
/// matrices, and run the linear-prediction pipeline on top of them.
#[derive(Parser)]
#[command(name = "dispenc", version, arg_required_else_help = true)]
struct Cli {
    /// RNG seed for sampled estimates; reports carry it.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decompose a structured spec or dense matrix into shift-word terms
    Decompose {
        /// Spec JSON {"family","n","seq",..} or dense JSON {"rows","cols","re","im"}
        input: PathBuf,
        /// Displacement kind for dense inputs (structured specs pick their own)
        #[arg(long, value_parser = parse_kind)]
        kind: Option<DisplacementKind>,
        /// Write the decomposition as JSON here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a block encoding and report its parameters and costs
    Encode {
        spec: PathBuf,
        #[command(flatten)]
        opts: ModelOpts,
        /// Closed-form counts only; never builds operators
        #[arg(long)]
        resources_only: bool,
        /// Write the report as JSON here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encode, extract the block, and check it against the dense oracle
    Verify {
        spec: PathBuf,
        #[command(flatten)]
        opts: ModelOpts,
        /// Write the report (with measured deviation) as JSON here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Invert the encoded block and cross-check the dense solve
    Solve {
        spec: PathBuf,
        /// Right-hand side JSON [[re,im],..]; defaults to the first basis vector
        #[arg(long)]
        rhs: Option<PathBuf>,
        /// Solution error target; picks delta / eps-prep through the budget
        /// split (overrides --delta / --eps-prep)
        #[arg(long)]
        eps: Option<f64>,
        #[command(flatten)]
        opts: ModelOpts,
        /// Write the solve report as JSON here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-step linear prediction from an autocovariance task file
    Predict {
        task: PathBuf,
        /// Encoding deviation target for the quantum route (same budget
        /// split as solve)
        #[arg(long)]
        eps: Option<f64>,
        #[command(flatten)]
        opts: ModelOpts,
        /// Write the prediction report as JSON here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form resource scaling table over a range of sizes
    Estimate {
        spec: PathBuf,
        #[command(flatten)]
        opts: ModelOpts,
        /// Smallest size (power of two); defaults to max(spec n, 16)
        #[arg(long)]
        n_min: Option<usize>,
        /// Largest size (power of two); defaults to 2^20 (2^10 for -like)
        #[arg(long)]
        n_max: Option<usize>,
        /// Write the CSV here as well
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Copy)]
struct ModelOpts {
    /// Data access model: blackbox, qram, or explicit
    #[arg(long, default_value = "blackbox", value_parser = parse_model)]
    model: AccessModel,
    /// Amplification miss bound; giving this (or --eps-prep) selects
    /// stochastic preparation (0.1 if only --eps-prep is set)
    #[arg(long)]
    delta: Option<f64>,
    /// Preparation rounding budget; giving this (or --delta) selects
    /// stochastic preparation (1e-3 if only --delta is set)
    #[arg(long)]
    eps_prep: Option<f64>,
}

impl ModelOpts {
    fn encode_options(&self) -> EncodeOptions {
        match (self.delta, self.eps_prep) {
            (None, None) => EncodeOptions::exact(self.model),
            (d, e) => EncodeOptions::stochastic(self.model, d.unwrap_or(0.1), e.unwrap_or(1e-3)),
        }
    }
}

fn parse_model(s: &str) -> Result<AccessModel, String> {
    s.parse().map_err(|e: LibError| e.to_string())
}

fn parse_kind(s: &str) -> Result<DisplacementKind, String> {
    match s {
        "stein" => Ok(DisplacementKind::Stein),
        "sylvester" => Ok(DisplacementKind::Sylvester),
        other => Err(format!("unknown displacement kind {other:?} (want stein or sylvester)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = cli.seed;
    let result = match cli.cmd {
        Cmd::Decompose { input, kind, out } => cmd_decompose(&input, kind, out.as_deref()),
        Cmd::Encode { spec, opts, resources_only, out } => {
            cmd_encode(&spec, &opts, resources_only, out.as_deref())
        }
        Cmd::Verify { spec, opts, out } => cmd_verify(&spec, &opts, out.as_deref()),
        Cmd::Solve { spec, rhs, eps, opts, out } => {
            cmd_solve(&spec, rhs.as_deref(), eps, &opts, out.as_deref())
        }
        Cmd::Predict { task, eps, opts, out } => {
            cmd_predict(&task, eps, &opts, seed, out.as_deref())
        }
        Cmd::Estimate { spec, opts, n_min, n_max, out } => {
            cmd_estimate(&spec, &opts, n_min, n_max, out.as_deref())
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// 3 for parameter infeasibility, 2 for everything else that stops a run.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<LibError>() {
        Some(
            LibError::UnsupportedModel(_)
            | LibError::InfeasibleBudget(_)
            | LibError::KappaCap { .. }
            | LibError::KappaRange(_)
            | LibError::NotPositiveDefinite(_)
            | LibError::ExplicitCap { .. },
        ) => 3,
        _ => 2,
    }
}

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> anyhow::Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T, what: &str) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {what} {}", path.display()))?;
    println!("wrote {what} to {}", path.display());
    Ok(())
}

fn fmt_c(z: Complex64) -> String {
    format!("{:+.6}{:+.6}i", z.re, z.im)
}

fn pairs_to_vector(pairs: &[(f64, f64)]) -> ComplexVector {
    ComplexVector { data: pairs.iter().map(|&(re, im)| Complex64::new(re, im)).collect() }
}

/// Banded specs also get the per-diagonal view of the scale: alpha counts
/// the decomposition mass, while discussions of bandwidth-rho matrices
/// usually quote sum_j |t_j| over the band (alpha < 2 * that sum).
fn banded_mass_line(spec: &StructuredMatrix) -> Option<String> {
    if spec.family != Family::BandedToeplitz {
        return None;
    }
    let mass: f64 = spec.seq.iter().map(|z| z.norm()).sum();
    Some(format!("band l1 mass sum_j |t_j| = {mass:.6}"))
}

fn mode_line(opt: &EncodeOptions) -> String {
    if opt.exact_prep {
        "exact preparation".to_string()
    } else {
        format!(
            "stochastic preparation (delta {:.3e}, eps_prep {:.3e})",
            opt.delta, opt.eps_prep
        )
    }
}

/// Stochastic knobs for an overall deviation target: split eps across the
/// amplification and rounding shares using twice the decomposition alpha as
/// the mass, which keeps the claimed bound at or under eps for every family.
fn budget_options(
    spec: &StructuredMatrix,
    model: AccessModel,
    eps: f64,
) -> anyhow::Result<EncodeOptions> {
    let dec = lcu_decompose_structured(spec)?;
    let (delta, eps_prep) = encoding_budget(eps, 2.0 * dec.alpha())?;
    Ok(EncodeOptions::stochastic(model, delta, eps_prep))
}

// ---------------------------------------------------------------------------
// decompose
// ---------------------------------------------------------------------------

enum MatrixInput {
    Spec(StructuredMatrix),
    Dense(ComplexMatrix),
}

fn read_matrix_input(path: &Path) -> anyhow::Result<MatrixInput> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading matrix {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing matrix {}", path.display()))?;
    if value.get("family").is_some() {
        Ok(MatrixInput::Spec(serde_json::from_value(value).with_context(|| {
            format!("parsing structured spec {}", path.display())
        })?))
    } else if value.get("rows").is_some() {
        Ok(MatrixInput::Dense(serde_json::from_value(value).with_context(|| {
            format!("parsing dense matrix {}", path.display())
        })?))
    } else {
        bail!(
            "{} is neither a structured spec (family/n/seq) nor a dense matrix (rows/cols/re/im)",
            path.display()
        );
    }
}

fn kind_name(kind: DisplacementKind) -> &'static str {
    match kind {
        DisplacementKind::Stein => "stein",
        DisplacementKind::Sylvester => "sylvester",
    }
}

fn word_label(n: usize, t: &LcuTerm) -> String {
    let m = n - 1 - t.k;
    let mut parts: Vec<String> = Vec::new();
    if t.i > 0 {
        parts.push(format!("Z1^{}", t.i));
    }
    if t.uses_j {
        parts.push("J".to_string());
    }
    if m > 0 {
        parts.push(format!("Z-1^{m}"));
    }
    if parts.is_empty() {
        "I".to_string()
    } else {
        parts.join(" ")
    }
}

#[derive(Serialize)]
struct TermDto {
    i: usize,
    k: usize,
    uses_j: bool,
    word: String,
    coeff: (f64, f64),
}

#[derive(Serialize)]
struct DecompositionDto {
    kind: String,
    n: usize,
    prefactor: f64,
    term_count: usize,
    chi: f64,
    alpha: f64,
    terms: Vec<TermDto>,
}

fn decomposition_dto(dec: &LcuDecomposition) -> DecompositionDto {
    DecompositionDto {
        kind: kind_name(dec.kind).to_string(),
        n: dec.n,
        prefactor: dec.prefactor,
        term_count: dec.terms.len(),
        chi: dec.chi,
        alpha: dec.alpha(),
        terms: dec
            .terms
            .iter()
            .map(|t| TermDto {
                i: t.i,
                k: t.k,
                uses_j: t.uses_j,
                word: word_label(dec.n, t),
                coeff: (t.coeff.re, t.coeff.im),
            })
            .collect(),
    }
}

fn cmd_decompose(
    input: &Path,
    kind: Option<DisplacementKind>,
    out: Option<&Path>,
) -> anyhow::Result<u8> {
    let (dec, label, dense) = match read_matrix_input(input)? {
        MatrixInput::Spec(spec) => {
            let dec = lcu_decompose_structured(&spec)?;
            let dense = if spec.n <= 64 { Some(build_structured(&spec)?) } else { None };
            (dec, format!("{} spec", spec.family.name()), dense)
        }
        MatrixInput::Dense(m) => {
            let kind = kind.unwrap_or(DisplacementKind::Stein);
            let dec = lcu_decompose(&m, kind)?;
            (dec, "dense matrix".to_string(), Some(m))
        }
    };
    println!("{label}, n = {}", dec.n);
    println!("displacement: {}, prefactor {}", kind_name(dec.kind), dec.prefactor);
    println!(
        "terms: {}   chi (l1 mass): {:.6}   alpha: {:.6}",
        dec.terms.len(),
        dec.chi,
        dec.alpha()
    );
    let shown = if dec.terms.len() > 80 { 64 } else { dec.terms.len() };
    for (idx, t) in dec.terms.iter().take(shown).enumerate() {
        println!("  {idx:>4}  {:<20} {}", word_label(dec.n, t), fmt_c(t.coeff));
    }
    if shown < dec.terms.len() {
        println!("  ... ({} more terms)", dec.terms.len() - shown);
    }
    let mut code = 0u8;
    if let Some(m) = &dense {
        let dev = m.sub(&dec.reconstruct()).max_abs();
        let ok = dev <= 1e-10;
        println!(
            "reconstruction check: max |M - sum| = {dev:.3e} -> {}",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            code = 2;
        }
    }
    if let Some(path) = out {
        write_json(path, &decomposition_dto(&dec), "decomposition")?;
    }
    Ok(code)
}

// ---------------------------------------------------------------------------
// encode / verify
// ---------------------------------------------------------------------------

fn print_estimate(est: &ResourceEstimate) {
    println!("resource estimate: {} n = {}, model {}", est.family, est.n, est.model);
    println!(
        "alpha = {:.6}, chi = {:.6}, deviation claim = {:.3e}",
        est.alpha, est.chi, est.epsilon_claimed
    );
    println!(
        "ancillas = {}, amplification rounds = {}",
        est.ancillas, est.amplification_rounds
    );
    println!(
        "queries = {}, gates = {}, memory entries = {}",
        est.queries, est.gates, est.memory_entries
    );
}

fn cmd_encode(
    spec_path: &Path,
    opts: &ModelOpts,
    resources_only: bool,
    out: Option<&Path>,
) -> anyhow::Result<u8> {
    let spec: StructuredMatrix = read_json(spec_path, "spec")?;
    let eopt = opts.encode_options();
    if resources_only {
        let est = resource_estimate(&spec, &eopt)?;
        print_estimate(&est);
        if let Some(line) = banded_mass_line(&spec) {
            println!("{line}");
        }
        println!("{}", mode_line(&eopt));
        if let Some(path) = out {
            write_json(path, &est, "resource estimate")?;
        }
        return Ok(0);
    }
    let enc = encode(&spec, &eopt)?;
    let report = enc.report(None);
    println!(
        "block encoding: {} n = {}, model {}",
        report.family, report.n, report.model
    );
    println!(
        "alpha = {:.6}, chi = {:.6}, deviation claim = {:.3e}",
        report.alpha, enc.chi, report.epsilon_claimed
    );
    if let Some(line) = banded_mass_line(&spec) {
        println!("{line}");
    }
    println!(
        "ancillas = {}, system qubits = {}, total = {}",
        report.ancillas,
        enc.system_qubits,
        report.ancillas + enc.system_qubits
    );
    println!("{}", mode_line(&eopt));
    println!(
        "amplification rounds = {}, queries = {}, gates = {}, memory entries = {}",
        enc.amplification_rounds, report.queries, report.gates, report.memory_entries
    );
    if let Some(path) = out {
        write_json(path, &report, "encode report")?;
    }
    Ok(0)
}

fn cmd_verify(spec_path: &Path, opts: &ModelOpts, out: Option<&Path>) -> anyhow::Result<u8> {
    let spec: StructuredMatrix = read_json(spec_path, "spec")?;
    let reference = build_structured(&spec)?;
    let eopt = opts.encode_options();
    let enc = encode(&spec, &eopt)?;
    let v = verify_block_encoding(&enc, &reference)?;
    println!(
        "block encoding: {} n = {}, model {}, {}",
        spec.family.name(),
        enc.n,
        enc.model.name(),
        mode_line(&eopt)
    );
    println!("alpha = {:.6}, ancillas = {}", enc.alpha, enc.ancillas);
    if let Some(line) = banded_mass_line(&spec) {
        println!("{line}");
    }
    println!(
        "deviation = {:.3e} vs claim {:.3e} -> {}",
        v.deviation,
        v.epsilon_claimed,
        if v.within_claim { "PASS" } else { "FAIL" }
    );
    println!(
        "spectral norm = {:.6}, alpha dominates: {}",
        v.spectral_norm, v.alpha_dominates
    );
    if let Some(path) = out {
        write_json(path, &enc.report(Some(v.deviation)), "verification report")?;
    }
    Ok(if v.within_claim { 0 } else { 2 })
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

fn cmd_solve(
    spec_path: &Path,
    rhs_path: Option<&Path>,
    eps: Option<f64>,
    opts: &ModelOpts,
    out: Option<&Path>,
) -> anyhow::Result<u8> {
    let spec: StructuredMatrix = read_json(spec_path, "spec")?;
    let reference = build_structured(&spec)?;
    let b = match rhs_path {
        Some(path) => {
            let pairs: Vec<(f64, f64)> = read_json(path, "right-hand side")?;
            if pairs.len() != spec.n {
                bail!("right-hand side has {} entries, system is {}", pairs.len(), spec.n);
            }
            pairs_to_vector(&pairs)
        }
        None => {
            let mut data = vec![Complex64::new(0.0, 0.0); spec.n];
            data[0] = Complex64::new(1.0, 0.0);
            ComplexVector { data }
        }
    };
    let eps_target = eps.unwrap_or(1e-3);
    let eopt = match eps {
        Some(eps) => {
            let kappa = reference.condition_number()?;
            let target = error_budget(kappa, eps)?;
            println!(
                "budget: kappa {kappa:.4}, eps {eps:.1e} -> encoding deviation target {target:.3e}"
            );
            budget_options(&spec, opts.model, target)?
        }
        None => opts.encode_options(),
    };
    let enc = encode(&spec, &eopt)?;
    let report = solve_reference(&enc, &b, &reference)?;
    println!(
        "solve: {} n = {}, model {}, {}",
        spec.family.name(),
        spec.n,
        enc.model.name(),
        mode_line(&eopt)
    );
    if let Some(line) = banded_mass_line(&spec) {
        println!("{line}");
    }
    println!(
        "kappa = {:.6}, success probability = {:.6}, deviation claim = {:.3e}",
        report.kappa, report.success_probability, report.delta
    );
    let fid_target = 1.0 - eps_target;
    let pass = report.fidelity >= fid_target;
    println!(
        "fidelity vs dense solve = {:.8} (target {:.8}) -> {}",
        report.fidelity,
        fid_target,
        if pass { "PASS" } else { "FAIL" }
    );
    println!("queries = {}, gates = {}", report.queries, report.gates);
    let shown = report.solution.len().min(8);
    let taps: Vec<String> = report.solution.data.iter().take(shown).map(|&z| fmt_c(z)).collect();
    println!(
        "solution (normalized){}: {}",
        if shown < report.solution.len() { ", first 8" } else { "" },
        taps.join("  ")
    );
    if let Some(path) = out {
        write_json(path, &report, "solve report")?;
    }
    Ok(if pass { 0 } else { 2 })
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

/// Where the autocovariances come from: a first-order autoregressive model
/// or an explicit list r(0..=n) as [[re,im],..].
#[derive(Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum AutocovSource {
    Ar1 { a: f64, sigma2: f64 },
    Explicit { r: Vec<(f64, f64)> },
}

#[derive(Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionTask {
    autocovariance: AutocovSource,
    /// Filter order n (power of two).
    order: usize,
    /// Past samples u(i-1), ..., u(i-n).
    past: Vec<(f64, f64)>,
    /// Measurement samples per quadrature of the inner-product estimate.
    shots: u64,
    /// Declared tail bound rho for the summability diagnostic; defaults to
    /// one above the realized tail sum (a pure report unless set).
    #[serde(default)]
    tail_bound: Option<f64>,
}

#[derive(Serialize)]
struct PredictReport {
    order: usize,
    source: AutocovSource,
    shots: u64,
    seed: u64,
    model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon_target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_prep: Option<f64>,
    kappa: f64,
    min_eigenvalue: f64,
    wiener: WienerClassCheck,
    #[serde(skip_serializing_if = "Option::is_none")]
    spectral_self_check: Option<f64>,
    /// Classical filter taps w (solution of R w = r).
    filter: Vec<(f64, f64)>,
    /// Quantum-route filter direction (normalized), absent for the
    /// zero-filter short circuit.
    #[serde(skip_serializing_if = "Option::is_none")]
    filter_direction: Option<Vec<(f64, f64)>>,
    route_fidelity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    success_probability: Option<f64>,
    prediction_exact: (f64, f64),
    prediction_estimate: (f64, f64),
    estimate_error: f64,
    shot_bound: f64,
    queries: u64,
    gates: u64,
}

fn cmd_predict(
    task_path: &Path,
    eps: Option<f64>,
    opts: &ModelOpts,
    seed: u64,
    out: Option<&Path>,
) -> anyhow::Result<u8> {
    let task: PredictionTask = read_json(task_path, "prediction task")?;
    if task.past.len() != task.order {
        bail!(
            "task wants {} past samples for order {}, got {}",
            task.order,
            task.order,
            task.past.len()
        );
    }
    if task.shots == 0 {
        bail!("task wants shots >= 1");
    }
    let (r, spectral_self_check, source_label) = match &task.autocovariance {
        AutocovSource::Ar1 { a, sigma2 } => {
            let r = ar1_autocovariances(*a, *sigma2, task.order)?;
            // closed form vs the spectral-density route, as a self-test
            let grid = 1024.max(4 * task.order);
            let samples: Vec<f64> = (0..grid)
                .map(|m| ar1_spectral_density(*a, *sigma2, TAU * m as f64 / grid as f64))
                .collect();
            // twice the order so every lag 0..=order has a slot in the sampled matrix
            let sampled = toeplitz_from_samples(2 * task.order, &samples)?;
            let dev = r
                .iter()
                .enumerate()
                .map(|(j, &rj)| (sampled.t(j as i64) - Complex64::new(rj, 0.0)).norm())
                .fold(0.0, f64::max);
            if dev > 1e-6 {
                bail!("autocovariance self-check failed: closed form vs spectral route {dev:.3e}");
            }
            let r: Vec<Complex64> = r.into_iter().map(|x| Complex64::new(x, 0.0)).collect();
            (r, Some(dev), format!("ar1(a = {a}, sigma2 = {sigma2})"))
        }
        AutocovSource::Explicit { r } => {
            if r.len() != task.order + 1 {
                bail!(
                    "explicit autocovariances want r(0..={}), got {} values",
                    task.order,
                    r.len()
                );
            }
            (pairs_to_vector(r).data, None, "explicit autocovariances".to_string())
        }
    };
    let (spec, rhs) = wiener_hopf_system(&r)?;
    let cov = build_structured(&spec)?;
    let min_eigenvalue = positive_definite_min_eig(&cov, 1e-8)?;
    let kappa = cov.condition_number()?;
    let tail_sum: f64 = spec.seq.iter().map(|z| z.norm()).sum();
    let rho = task.tail_bound.unwrap_or(tail_sum + 1.0);
    let wiener = wiener_class_check(&spec, rho)?;
    if !wiener.in_class {
        eprintln!(
            "warning: autocovariance tail sum {:.4} is not under the declared bound {rho:.4}; \
             the decomposition mass may grow with the order",
            wiener.tail_sum
        );
    }

    println!("linear prediction, order {}, {source_label}", task.order);
    if let Some(dev) = spectral_self_check {
        println!("autocovariance self-check (spectral route): {dev:.3e}");
    }
    println!("covariance: kappa = {kappa:.6}, min eigenvalue = {min_eigenvalue:.6}");
    println!(
        "wiener class: tail sum {:.4} vs bound {:.4} -> {}; chi {:.4} vs {:.4} -> {}",
        wiener.tail_sum,
        rho,
        if wiener.in_class { "in class" } else { "OUT OF CLASS" },
        wiener.chi,
        wiener.chi_bound,
        if wiener.bound_holds { "holds" } else { "exceeded" }
    );

    let u = pairs_to_vector(&task.past);

    // white noise (or any zero r vector): the best one-step predictor is 0
    if rhs.norm() < 1e-14 {
        println!("zero autocovariance vector: the one-step predictor is w = 0, u_hat = 0");
        let report = PredictReport {
            order: task.order,
            source: task.autocovariance.clone(),
            shots: task.shots,
            seed,
            model: opts.model.name().to_string(),
            epsilon_target: eps,
            delta: None,
            eps_prep: None,
            kappa,
            min_eigenvalue,
            wiener,
            spectral_self_check,
            filter: vec![(0.0, 0.0); task.order],
            filter_direction: None,
            route_fidelity: 1.0,
            success_probability: None,
            prediction_exact: (0.0, 0.0),
            prediction_estimate: (0.0, 0.0),
            estimate_error: 0.0,
            shot_bound: 0.0,
            queries: 0,
            gates: 0,
        };
        if let Some(path) = out {
            write_json(path, &report, "prediction report")?;
        }
        return Ok(0);
    }

    let w_classical = cov.solve(&rhs)?;
    let eps_target = eps.unwrap_or(1e-3);
    let eopt = match eps {
        Some(eps) => {
            let target = error_budget(kappa, eps)?;
            println!(
                "budget: kappa {kappa:.4}, eps {eps:.1e} -> encoding deviation target {target:.3e}"
            );
            budget_options(&spec, opts.model, target)?
        }
        None => opts.encode_options(),
    };
    let enc = encode(&spec, &eopt)?;
    let solve_rep = solve_reference(&enc, &rhs, &cov)?;
    let fid_target = 1.0 - eps_target;
    let fid_pass = solve_rep.fidelity >= fid_target;
    println!(
        "quantum route: model {}, {}; route fidelity {:.8} (target {:.8}) -> {}",
        enc.model.name(),
        mode_line(&eopt),
        solve_rep.fidelity,
        fid_target,
        if fid_pass { "PASS" } else { "FAIL" }
    );
    println!("postselection success probability: {:.6}", solve_rep.success_probability);
    let shown = task.order.min(8);
    let taps: Vec<String> = w_classical.data.iter().take(shown).map(|&z| fmt_c(z)).collect();
    println!(
        "classical taps{}: {}",
        if shown < task.order { " (first 8)" } else { "" },
        taps.join("  ")
    );

    // u_hat(i) = sum_k w_k^* u(i-k); the sampled route estimates the
    // normalized inner product and rescales by the two vector norms
    let u_hat_exact = w_classical.dot(&u);
    let scale = w_classical.norm() * u.norm();
    let (u_hat_est, shot_bound) = if u.norm() == 0.0 {
        (Complex64::new(0.0, 0.0), 0.0)
    } else {
        let w_state = QState::from_amplitudes(w_classical.data.clone())?;
        let u_state = QState::from_amplitudes(u.data.clone())?;
        let unit = hadamard_test_inner(&w_state, &u_state, task.shots, seed)?;
        (unit * scale, 5.0 * scale / (task.shots as f64).sqrt())
    };
    let estimate_error = (u_hat_est - u_hat_exact).norm();
    let shot_pass = estimate_error <= shot_bound;
    println!(
        "prediction u_hat: exact {}, sampled {} ({} shots, seed {seed})",
        fmt_c(u_hat_exact),
        fmt_c(u_hat_est),
        task.shots
    );
    println!(
        "                  |error| {estimate_error:.3e} vs 5*scale/sqrt(shots) = {shot_bound:.3e} -> {}",
        if shot_pass { "PASS" } else { "FAIL" }
    );

    let report = PredictReport {
        order: task.order,
        source: task.autocovariance.clone(),
        shots: task.shots,
        seed,
        model: enc.model.name().to_string(),
        epsilon_target: eps,
        delta: (!eopt.exact_prep).then_some(eopt.delta),
        eps_prep: (!eopt.exact_prep).then_some(eopt.eps_prep),
        kappa,
        min_eigenvalue,
        wiener,
        spectral_self_check,
        filter: w_classical.data.iter().map(|z| (z.re, z.im)).collect(),
        filter_direction: Some(solve_rep.solution.data.iter().map(|z| (z.re, z.im)).collect()),
        route_fidelity: solve_rep.fidelity,
        success_probability: Some(solve_rep.success_probability),
        prediction_exact: (u_hat_exact.re, u_hat_exact.im),
        prediction_estimate: (u_hat_est.re, u_hat_est.im),
        estimate_error,
        shot_bound,
        queries: solve_rep.queries,
        gates: solve_rep.gates,
    };
    if let Some(path) = out {
        write_json(path, &report, "prediction report")?;
    }
    Ok(if fid_pass && shot_pass { 0 } else { 2 })
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

/// Rebuild the spec at size n with the same diagonals (zero-padded or
/// truncated), preserving bandwidth and any in-range edits. This keeps the
/// decomposition mass essentially fixed, so the scaling table isolates the
/// size dependence.
fn scale_spec(base: &StructuredMatrix, n: usize) -> dispenc::error::Result<StructuredMatrix> {
    if n == base.n {
        return Ok(base.clone());
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut scaled = match base.family {
        Family::Circulant => {
            let mut seq = vec![zero; n];
            for (j, &c) in base.seq.iter().take(n).enumerate() {
                seq[j] = c;
            }
            StructuredMatrix::new(base.family, n, seq)
        }
        Family::Toeplitz | Family::BandedToeplitz | Family::ToeplitzLike => {
            let mut seq = vec![zero; 2 * n - 1];
            let reach = (base.n - 1).min(n - 1) as i64;
            for j in -reach..=reach {
                seq[(n as i64 - 1 + j) as usize] = base.t(j);
            }
            let mut s = StructuredMatrix::new(base.family, n, seq);
            s.bandwidth = base.bandwidth;
            s
        }
        Family::Hankel | Family::HankelLike => {
            let mut seq = vec![zero; 2 * n - 1];
            for (m, &h) in base.seq.iter().take(2 * n - 1).enumerate() {
                seq[m] = h;
            }
            StructuredMatrix::new(base.family, n, seq)
        }
    };
    scaled.edits = base.edits.iter().filter(|e| e.i < n && e.k < n).copied().collect();
    scaled.validate()?;
    Ok(scaled)
}

fn fit_exponent(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> =
        points.iter().filter(|&&(_, y)| y > 0.0).map(|&(x, y)| (x.ln(), y.ln())).collect();
    if logs.len() < 2 {
        return None;
    }
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / logs.len() as f64;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / logs.len() as f64;
    let num: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (den > 0.0).then(|| num / den)
}

fn cmd_estimate(
    spec_path: &Path,
    opts: &ModelOpts,
    n_min: Option<usize>,
    n_max: Option<usize>,
    out: Option<&Path>,
) -> anyhow::Result<u8> {
    let spec: StructuredMatrix = read_json(spec_path, "spec")?;
    spec.validate()?;
    let grid_family = matches!(spec.family, Family::ToeplitzLike | Family::HankelLike);
    let n_min = n_min.unwrap_or_else(|| spec.n.max(16));
    let n_max = n_max.unwrap_or(if grid_family { 1 << 10 } else { 1 << 20 });
    if !n_min.is_power_of_two() || !n_max.is_power_of_two() || n_min < 2 || n_max < n_min {
        bail!("size range wants powers of two with 2 <= n_min <= n_max, got {n_min}..{n_max}");
    }
    let eopt = opts.encode_options();
    let mut rows: Vec<ResourceEstimate> = Vec::new();
    let mut n = n_min;
    while n <= n_max {
        rows.push(resource_estimate(&scale_spec(&spec, n)?, &eopt)?);
        if n > n_max / 2 {
            break;
        }
        n *= 2;
    }
    let mut csv = String::from(
        "n,queries,gates,memory_entries,dense_entries,alpha,chi,amplification_rounds,epsilon_claimed\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{:.12},{:.12},{},{:.6e}\n",
            r.n,
            r.queries,
            r.gates,
            r.memory_entries,
            (r.n as u64) * (r.n as u64),
            r.alpha,
            r.chi,
            r.amplification_rounds,
            r.epsilon_claimed
        ));
    }
    print!("{csv}");
    println!(
        "# {} under model {}, {}",
        spec.family.name(),
        eopt.model.name(),
        mode_line(&eopt)
    );
    println!("# scaling fits over n = {n_min} .. {n_max} (log-log least squares)");
    type Series = Box<dyn Fn(&ResourceEstimate) -> f64>;
    let series: [(&str, Series); 4] = [
        ("queries", Box::new(|r| r.queries as f64)),
        ("gates", Box::new(|r| r.gates as f64)),
        ("memory", Box::new(|r| r.memory_entries as f64)),
        ("memory/dense", Box::new(|r| r.memory_entries as f64 / (r.n as f64 * r.n as f64))),
    ];
    for (name, get) in &series {
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, get(r))).collect();
        match fit_exponent(&points) {
            Some(e) => println!("# {name} ~ n^{e:.3}"),
            None => println!("# {name}: zero at every size under this model"),
        }
    }
    if let Some(path) = out {
        fs::write(path, &csv).with_context(|| format!("writing CSV {}", path.display()))?;
        println!("# wrote CSV to {}", path.display());
    }
    Ok(0)
}
