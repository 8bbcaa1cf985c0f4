//! Subcommand execution and artifact emission.
//!
//! Every subcommand writes into the output directory: JSON for results and
//! certificates, CSV for traces. Nothing time- or host-dependent is written,
//! so identical inputs give identical bytes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use rumax_core::arbitrage::{check_na, find_emm, ArbitrageError, NaStatus};
use rumax_core::lattice::{Claim, LatticeError, Measure, ScenarioLattice};
use rumax_core::solver::biconj::biconjugate_check;
use rumax_core::solver::TraceRow;
use rumax_core::solver::entropic::entropic_value;
use rumax_core::solver::{gap_with, solve, DualCertificate, Problem, Solution, SolverError, Tolerances};
use rumax_core::transport::{wasserstein_p, MetricParams, TransportError};
use rumax_core::utility::{Conjugate, UtilityError};

use crate::generate::{generate_instance, GenerateError, Shape};
use crate::json;
use crate::problem::{read_problem_file, MeasureEntry, NodeEntry, ProblemError, ProblemFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_BREACH: i32 = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Arbitrage(#[from] ArbitrageError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Solver(SolverError::NotConverged { .. }) => EXIT_NOT_CONVERGED,
            RunError::Solver(SolverError::WeakDualityBreach { .. } | SolverError::BoundBreach { .. }) => EXIT_BREACH,
            _ => EXIT_ERROR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Dual,
    Gap,
    Entropic,
    NaCheck,
    Wasserstein,
    Conjugate,
    Gen,
    Biconj,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    /// Problem files; `wasserstein` takes transport files instead. Several
    /// inputs run as a batch with one output subdirectory each.
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub quiet: bool,
    /// Flips the primal sign before the weak-duality assertion.
    pub fault_inject: bool,
    /// `gen` only.
    pub shape: Option<Shape>,
    /// `gen` only: instances for seeds `seed..seed + count`.
    pub count: usize,
}

impl RunConfig {
    pub fn new(command: Command, inputs: Vec<PathBuf>, out: PathBuf) -> Self {
        RunConfig {
            command,
            inputs,
            out,
            seed: 0,
            tol: None,
            max_iters: None,
            quiet: true,
            fault_inject: false,
            shape: None,
            count: 1,
        }
    }
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub artifacts: Vec<PathBuf>,
    /// One line per instance, errors included.
    pub lines: Vec<String>,
}

struct Done {
    code: i32,
    artifacts: Vec<PathBuf>,
    line: String,
}

fn write(path: &Path, contents: &str) -> Result<PathBuf, RunError> {
    fs::write(path, contents).map_err(|source| RunError::Write { path: path.display().to_string(), source })?;
    Ok(path.to_path_buf())
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, RunError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| RunError::Write { path: path.display().to_string(), source: e.into_error() })?;
    fs::write(path, bytes).map_err(|source| RunError::Write { path: path.display().to_string(), source })?;
    Ok(path.to_path_buf())
}

fn ensure_dir(dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|source| RunError::Write { path: dir.display().to_string(), source })
}

/// Threads for batch fan-out: `RUMAX_THREADS` when set and positive.
pub fn batch_threads() -> Option<usize> {
    std::env::var("RUMAX_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

pub fn run_report(cfg: &RunConfig) -> Outcome {
    if let Err(e) = ensure_dir(&cfg.out) {
        return Outcome { code: EXIT_ERROR, artifacts: vec![], lines: vec![format!("error: {e}")] };
    }
    let jobs: Vec<(Option<PathBuf>, PathBuf)> = match cfg.command {
        Command::Gen => vec![(None, cfg.out.clone())],
        _ if cfg.inputs.is_empty() => {
            return Outcome { code: EXIT_ERROR, artifacts: vec![], lines: vec!["error: no input file".into()] }
        }
        _ if cfg.inputs.len() == 1 => vec![(Some(cfg.inputs[0].clone()), cfg.out.clone())],
        _ => cfg
            .inputs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let stem = p.file_stem().map_or_else(|| format!("input{i}"), |s| s.to_string_lossy().into_owned());
                (Some(p.clone()), cfg.out.join(format!("{i:03}_{stem}")))
            })
            .collect(),
    };
    let run_one = |(input, dir): &(Option<PathBuf>, PathBuf)| -> Done {
        let label = input.as_ref().map_or_else(|| "gen".to_string(), |p| p.display().to_string());
        match ensure_dir(dir).and_then(|_| dispatch(cfg, input.as_deref(), dir)) {
            Ok(mut d) => {
                d.line = format!("{label}: {}", d.line);
                d
            }
            Err(e) => Done { code: e.exit_code(), artifacts: vec![], line: format!("{label}: error: {e}") },
        }
    };
    let done: Vec<Done> = if jobs.len() > 1 {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(batch_threads().unwrap_or(0)).build();
        match pool {
            Ok(pool) => pool.install(|| jobs.par_iter().map(run_one).collect()),
            Err(_) => jobs.iter().map(run_one).collect(),
        }
    } else {
        jobs.iter().map(run_one).collect()
    };
    Outcome {
        code: done.iter().map(|d| d.code).max().unwrap_or(EXIT_OK),
        artifacts: done.iter().flat_map(|d| d.artifacts.clone()).collect(),
        lines: done.into_iter().map(|d| d.line).collect(),
    }
}

fn dispatch(cfg: &RunConfig, input: Option<&Path>, dir: &Path) -> Result<Done, RunError> {
    if cfg.command == Command::Gen {
        return run_gen(cfg, dir);
    }
    let input = input.ok_or_else(|| RunError::Usage("no input file".into()))?;
    if cfg.command == Command::Wasserstein {
        return run_wasserstein(input, dir);
    }
    let file = read_problem_file(input)?;
    let prob = load(cfg, &file)?;
    match cfg.command {
        Command::Solve => run_solve(&prob, dir),
        Command::Dual => run_dual(&prob, dir),
        Command::Gap => run_gap(&prob, dir, cfg.fault_inject),
        Command::Entropic => run_entropic(&prob, dir),
        Command::NaCheck => run_na_check(&prob, dir),
        Command::Conjugate => run_conjugate(&prob, dir),
        Command::Biconj => run_biconj(&prob, dir, cfg.seed),
        Command::Gen | Command::Wasserstein => unreachable!(),
    }
}

/// Builds the problem, with command-line tolerance overrides applied.
pub fn load(cfg: &RunConfig, file: &ProblemFile) -> Result<Problem, RunError> {
    let prob = file.to_problem()?;
    let mut tol: Tolerances = prob.tolerances();
    if let Some(t) = cfg.tol {
        tol.primal_tol = t;
        tol.dual_tol = t;
    }
    if let Some(n) = cfg.max_iters {
        tol.max_iters = n;
    }
    Ok(prob.with_tolerances(tol)?)
}

// ---- serialized shapes -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateJson {
    /// Leaf ids, in the order of the weight vectors.
    pub leaves: Vec<u64>,
    pub q: f64,
    pub martingale: Vec<f64>,
    pub reference: Vec<f64>,
    pub alpha: f64,
    pub value: f64,
}

impl CertificateJson {
    pub fn new(lat: &ScenarioLattice, c: &DualCertificate) -> Self {
        CertificateJson {
            leaves: lat.leaf_labels(),
            q: c.q,
            martingale: c.martingale.weights().to_vec(),
            reference: c.reference.weights().to_vec(),
            alpha: c.alpha,
            value: c.value,
        }
    }

    /// Rebuilds the certificate on `prob` and re-runs its validation.
    pub fn reload(&self, prob: &Problem) -> Result<DualCertificate, RunError> {
        let lat = prob.lattice();
        if self.leaves != lat.leaf_labels() {
            return Err(RunError::Usage("certificate leaves do not match the problem lattice".into()));
        }
        let cert = DualCertificate {
            q: self.q,
            martingale: Measure::new(lat, self.martingale.clone())?,
            reference: Measure::new(lat, self.reference.clone())?,
            alpha: self.alpha,
            value: self.value,
        };
        cert.validate(prob)?;
        Ok(cert)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Holding {
    pub node: u64,
    pub t: usize,
    pub holding: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionJson {
    pub value: f64,
    pub upper: f64,
    pub gap: f64,
    pub converged: bool,
    pub iterations: usize,
    pub box_radius: f64,
    pub box_active: bool,
    pub strategy: Vec<Holding>,
    pub worst_case: Vec<f64>,
    pub worst_alpha: f64,
    pub q_zero_value: Option<f64>,
    pub certificate: CertificateJson,
}

impl SolutionJson {
    pub fn new(prob: &Problem, s: &Solution) -> Self {
        let lat = prob.lattice();
        let strategy = lat
            .non_terminal()
            .iter()
            .zip(s.strategy.holdings())
            .map(|(&i, &h)| Holding { node: lat.node(i).label, t: lat.node(i).t, holding: h })
            .collect();
        SolutionJson {
            value: s.value,
            upper: s.upper(),
            gap: s.gap(),
            converged: s.converged,
            iterations: s.iterations,
            box_radius: s.box_radius,
            box_active: s.box_active,
            strategy,
            worst_case: s.worst_case.weights().to_vec(),
            worst_alpha: s.worst_alpha,
            q_zero_value: s.q_zero_value,
            certificate: CertificateJson::new(lat, &s.certificate),
        }
    }
}

fn trace_rows(trace: &[TraceRow]) -> Vec<Vec<String>> {
    trace
        .iter()
        .map(|r| {
            vec![
                r.iteration.to_string(),
                json::float(r.lower),
                json::float(r.upper),
                json::float(r.master),
                r.columns.to_string(),
            ]
        })
        .collect()
}

fn gap_rows(trace: &[TraceRow]) -> Vec<Vec<String>> {
    trace
        .iter()
        .map(|r| {
            let gap = r.upper - r.lower;
            vec![r.iteration.to_string(), json::float(gap), json::float(gap / (1.0 + r.lower.abs()))]
        })
        .collect()
}

fn write_traces(dir: &Path, trace: &[TraceRow]) -> Result<Vec<PathBuf>, RunError> {
    Ok(vec![
        write_csv(&dir.join("trace.csv"), &["iteration", "lower", "upper", "master", "columns"], &trace_rows(trace))?,
        write_csv(&dir.join("gap.csv"), &["iteration", "gap", "relative_gap"], &gap_rows(trace))?,
    ])
}

fn converged_code(converged: bool) -> i32 {
    if converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    }
}

// ---- subcommands -------------------------------------------------------------

fn run_solve(prob: &Problem, dir: &Path) -> Result<Done, RunError> {
    let s = solve(prob)?;
    let mut artifacts = vec![write(&dir.join("solution.json"), &json::to_string(&SolutionJson::new(prob, &s)))?];
    artifacts.extend(write_traces(dir, &s.trace)?);
    Ok(Done {
        code: converged_code(s.converged),
        artifacts,
        line: format!("U = {:.10} (upper {:.10}, converged {})", s.value, s.upper(), s.converged),
    })
}

fn run_dual(prob: &Problem, dir: &Path) -> Result<Done, RunError> {
    let s = solve(prob)?;
    let cert = CertificateJson::new(prob.lattice(), &s.certificate);
    let mut artifacts = vec![write(&dir.join("certificate.json"), &json::to_string(&cert))?];
    artifacts.extend(write_traces(dir, &s.trace)?);
    Ok(Done {
        code: converged_code(s.converged),
        artifacts,
        line: format!("D = {:.10} (q {:.10}, primal {:.10})", s.upper(), s.certificate.q, s.value),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapJson {
    pub primal: f64,
    pub dual: f64,
    pub absolute: f64,
    pub relative: f64,
    pub converged: bool,
    pub q_zero_value: Option<f64>,
    pub certificate: CertificateJson,
}

fn run_gap(prob: &Problem, dir: &Path, fault_inject: bool) -> Result<Done, RunError> {
    let (g, s) = gap_with(prob, fault_inject)?;
    let out = GapJson {
        primal: g.primal,
        dual: g.dual,
        absolute: g.absolute,
        relative: g.relative,
        converged: g.converged,
        q_zero_value: s.q_zero_value,
        certificate: CertificateJson::new(prob.lattice(), &s.certificate),
    };
    let mut artifacts = vec![write(&dir.join("gap.json"), &json::to_string(&out))?];
    artifacts.extend(write_traces(dir, &s.trace)?);
    Ok(Done {
        code: converged_code(g.converged),
        artifacts,
        line: format!("gap = {:.3e} (primal {:.10}, dual {:.10})", g.absolute, g.primal, g.dual),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropicJson {
    pub lambda: f64,
    pub value: f64,
    pub lower: f64,
    pub from_primal: f64,
    pub consistency: f64,
    pub entropy: f64,
    pub converged: bool,
    pub leaves: Vec<u64>,
    pub martingale: Vec<f64>,
    pub reference: Vec<f64>,
    pub primal: SolutionJson,
}

fn run_entropic(prob: &Problem, dir: &Path) -> Result<Done, RunError> {
    let r = entropic_value(prob)?;
    let out = EntropicJson {
        lambda: r.lambda,
        value: r.value,
        lower: r.lower,
        from_primal: r.from_primal,
        consistency: r.consistency(),
        entropy: r.entropy,
        converged: r.converged,
        leaves: prob.lattice().leaf_labels(),
        martingale: r.martingale.weights().to_vec(),
        reference: r.reference.weights().to_vec(),
        primal: SolutionJson::new(prob, &r.primal),
    };
    let mut artifacts = vec![write(&dir.join("entropic.json"), &json::to_string(&out))?];
    artifacts.extend(write_traces(dir, &r.trace)?);
    Ok(Done {
        code: converged_code(r.converged),
        artifacts,
        line: format!("W = {:.10} (from primal {:.10})", r.value, r.from_primal),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessJson {
    pub epsilon: Option<f64>,
    /// The enlarged lattice, when the witness needed one.
    pub nodes: Option<Vec<NodeEntry>>,
    pub leaves: Vec<u64>,
    pub weights: Vec<f64>,
}

fn node_entries(lat: &ScenarioLattice) -> Vec<NodeEntry> {
    lat.nodes()
        .iter()
        .map(|n| NodeEntry { id: n.label, parent: n.parent.map(|p| lat.node(p).label), t: n.t, m: n.m, s: n.s })
        .collect()
}

fn run_na_check(prob: &Problem, dir: &Path) -> Result<Done, RunError> {
    let report = check_na(prob.ambiguity())?;
    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    for (k, e) in report.entries.iter().enumerate() {
        let witness_file = match &e.witness {
            Some(w) => {
                let lat = e.lattice.as_deref().unwrap_or(prob.lattice());
                let out = WitnessJson {
                    epsilon: e.epsilon,
                    nodes: e.lattice.as_deref().map(node_entries),
                    leaves: lat.leaf_labels(),
                    weights: w.weights().to_vec(),
                };
                let name = format!("witness_{k}.json");
                artifacts.push(write(&dir.join(&name), &json::to_string(&out))?);
                name
            }
            None => String::new(),
        };
        let status = match e.status {
            NaStatus::Holds => "holds",
            NaStatus::Fails => "fails",
            NaStatus::Undetermined => "undetermined",
        };
        rows.push(vec![
            e.label.clone(),
            status.to_string(),
            e.epsilon.map_or_else(String::new, json::float),
            witness_file,
            e.detail.clone(),
        ]);
    }
    artifacts.insert(0, write_csv(&dir.join("na_check.csv"), &["generator", "status", "epsilon", "witness", "detail"], &rows)?);
    let verdict = match report.verdict() {
        Some(true) => "NA holds",
        Some(false) => "NA fails",
        None => "NA undetermined",
    };
    Ok(Done { code: EXIT_OK, artifacts, line: format!("{verdict} ({} entries)", report.entries.len()) })
}

/// Input of the `wasserstein` subcommand: two measures on one lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportFile {
    pub horizon: usize,
    pub nodes: Vec<NodeEntry>,
    pub first: MeasureEntry,
    pub second: MeasureEntry,
    pub rho: f64,
    pub kappa: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WassersteinJson {
    pub value: f64,
    pub cost: f64,
    pub leaves: Vec<u64>,
}

fn run_wasserstein(input: &Path, dir: &Path) -> Result<Done, RunError> {
    let text = fs::read_to_string(input)
        .map_err(|source| ProblemError::Io { path: input.display().to_string(), source })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let tf: TransportFile = serde_path_to_error::deserialize(de).map_err(|e| ProblemError::Schema {
        pointer: crate::problem::pointer(e.path()),
        message: e.into_inner().to_string(),
    })?;
    let skeleton = ProblemFile {
        horizon: tf.horizon,
        nodes: tf.nodes.clone(),
        claim: None,
        utility: serde_json::from_str(r#"{"type": "exponential", "lambda": 1.0}"#).expect("static utility"),
        ambiguity: serde_json::from_str(r#"{"type": "finite_hull", "generators": []}"#).expect("static ambiguity"),
        tolerances: None,
    };
    let lat = skeleton.lattice()?;
    let a = tf.first.to_measure(&lat, "/first")?;
    let b = tf.second.to_measure(&lat, "/second")?;
    let params = MetricParams::new(tf.rho, tf.kappa, tf.p)?;
    let res = wasserstein_p(&lat, params, &a, &b)?;
    let labels = lat.leaf_labels();
    let rows: Vec<Vec<String>> = res
        .plan
        .entries
        .iter()
        .map(|&(i, j, m)| vec![labels[i].to_string(), labels[j].to_string(), json::float(m)])
        .collect();
    let out = WassersteinJson { value: res.value, cost: res.cost, leaves: labels.clone() };
    let artifacts = vec![
        write(&dir.join("wasserstein.json"), &json::to_string(&out))?,
        write_csv(&dir.join("plan.csv"), &["from", "to", "mass"], &rows)?,
    ];
    Ok(Done { code: EXIT_OK, artifacts, line: format!("W_p = {:.10}", res.value) })
}

/// `y` grid of the `conjugate` table: zero and 25 log-spaced points in `[1e-3, 1e3]`.
pub fn conjugate_grid() -> Vec<f64> {
    let mut ys = vec![0.0];
    ys.extend((0..25).map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / 24.0)));
    ys
}

fn run_conjugate(prob: &Problem, dir: &Path) -> Result<Done, RunError> {
    let conj = Conjugate::new(prob.utility().clone());
    let labels = prob.lattice().leaf_labels();
    let mut rows = Vec::new();
    for (l, label) in labels.iter().enumerate() {
        for y in conjugate_grid() {
            let v = conj.value(l, y)?;
            let arg = conj.argmax(l, y).map_or_else(String::new, json::float);
            rows.push(vec![label.to_string(), json::float(y), json::float(v), arg]);
        }
    }
    let artifacts = vec![write_csv(&dir.join("conjugate.csv"), &["leaf", "y", "v", "argmax"], &rows)?];
    Ok(Done { code: EXIT_OK, artifacts, line: format!("{} rows", rows.len()) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenEntry {
    pub file: String,
    pub seed: u64,
    pub degenerate: bool,
}

fn run_gen(cfg: &RunConfig, dir: &Path) -> Result<Done, RunError> {
    let shape = cfg.shape.ok_or_else(|| RunError::Usage("gen needs a shape".into()))?;
    let mut artifacts = Vec::new();
    let mut degenerate = false;
    for k in 0..cfg.count as u64 {
        let seed = cfg.seed.wrapping_add(k);
        let g = generate_instance(seed, shape)?;
        degenerate |= g.degenerate;
        artifacts.push(write(&dir.join(format!("instance_{seed}.json")), &g.to_json())?);
    }
    let note = if degenerate { " (degenerate: constant price)" } else { "" };
    Ok(Done { code: EXIT_OK, artifacts, line: format!("{} instances{note}", cfg.count) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckJson {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiconjJson {
    pub passed: bool,
    pub failures: usize,
    pub checks: Vec<CheckJson>,
    /// `[c, phi_lower, phi_upper]` for constant claims.
    pub constants: Vec<[f64; 3]>,
    /// `[phi_lower, phi_upper, <X, mu> - phi*(mu)]` for each sampled claim.
    pub tightest: Vec<[f64; 3]>,
}

/// Sampled claims for `biconj`: the problem's claim and three seeded perturbations.
pub fn biconj_claims(prob: &Problem, seed: u64) -> Result<Vec<Claim>, RunError> {
    let lat = prob.lattice();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = prob.claim().values().to_vec();
    let mut out = vec![prob.claim().clone()];
    for _ in 0..3 {
        let v = base.iter().map(|x| x + rng.gen_range(-0.5..0.5)).collect();
        out.push(Claim::new(lat, v)?);
    }
    Ok(out)
}

/// Dual-cone points for `biconj`: a few scalings of one martingale measure.
pub fn biconj_duals(prob: &Problem) -> Result<Vec<(f64, Measure)>, RunError> {
    let lat = prob.lattice();
    Ok(match find_emm(lat, &Measure::uniform(lat))? {
        Some(q) => [0.5, 1.0, 2.0].into_iter().map(|s| (s, q.clone())).collect(),
        None => Vec::new(),
    })
}

fn run_biconj(prob: &Problem, dir: &Path, seed: u64) -> Result<Done, RunError> {
    let claims = biconj_claims(prob, seed)?;
    let duals = biconj_duals(prob)?;
    let report = biconjugate_check(prob, &claims, &duals, &[-1.0, -0.5, 0.0, 0.5, 1.0])?;
    let out = BiconjJson {
        passed: report.passed(),
        failures: report.failures(),
        checks: report
            .checks
            .iter()
            .map(|c| CheckJson { name: c.name.clone(), passed: c.passed, margin: c.margin })
            .collect(),
        constants: report.constants.iter().map(|&(c, lo, hi)| [c, lo, hi]).collect(),
        tightest: report.tightest.iter().map(|&(lo, hi, pair)| [lo, hi, pair]).collect(),
    };
    let artifacts = vec![write(&dir.join("biconj.json"), &json::to_string(&out))?];
    let code = if report.passed() { EXIT_OK } else { EXIT_BREACH };
    Ok(Done { code, artifacts, line: format!("{} checks, {} failed", report.checks.len(), report.failures()) })
}

/// Reads a certificate written by `dual`, `solve` or `gap` and validates it on `prob`.
pub fn load_certificate(path: &Path, prob: &Problem) -> Result<DualCertificate, RunError> {
    let text = fs::read_to_string(path)
        .map_err(|source| ProblemError::Io { path: path.display().to_string(), source })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| RunError::Usage(format!("{}: {e}", path.display())))?;
    let cert = value.get("certificate").cloned().unwrap_or(value);
    let cert: CertificateJson =
        serde_json::from_value(cert).map_err(|e| RunError::Usage(format!("{}: {e}", path.display())))?;
    cert.reload(prob)
}
