//! Robust utility maximization: the primal saddle solve, dual certificates
//! over scaled martingale measures, and the duality gap between them.

pub mod biconj;
mod engine;
pub mod entropic;

use std::sync::Arc;

use thiserror::Error;

use crate::ambiguity::{AmbiguityError, AmbiguitySpec, InnerResult};
use crate::lattice::{Claim, LatticeError, Measure, ScenarioLattice, Strategy};
use crate::lp::LpError;
use crate::utility::{
    check_conditions, divergence_dv, ConditionGrid, Conjugate, PerspectiveFn, UtilityError, UtilityKind, UtilitySpec,
};

use engine::{LeafUtility, SaddleProblem, UpperPoint};
pub use engine::TraceRow;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("problem components live on different lattices")]
    LatticeMismatch,
    #[error("invalid tolerance: {0}")]
    InvalidTolerance(String),
    #[error("utility is tied to {got} leaves, lattice has {expected}")]
    UtilityLength { expected: usize, got: usize },
    #[error("utility fails the standing conditions: {0}")]
    Conditions(String),
    #[error("not converged: bounds [{lower}, {upper}]")]
    NotConverged { lower: f64, upper: f64 },
    #[error("the ambiguity set is empty")]
    InfeasibleAmbiguity,
    #[error("dual objective is unbounded below")]
    UnboundedBelow,
    #[error("entropic value needs exponential utility without per-path scaling")]
    NotExponential,
    #[error("entropic value needs an ambiguity set without penalty")]
    PenaltyNotSupported,
    #[error("weak duality violated: primal {primal} > dual {dual}")]
    WeakDualityBreach { primal: f64, dual: f64 },
    #[error("bound check failed on iterate {iterate}: {detail}")]
    BoundBreach { iterate: usize, detail: String },
    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),
    #[error(transparent)]
    Ambiguity(AmbiguityError),
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("LP failure: {0}")]
    Lp(#[from] LpError),
}

impl From<AmbiguityError> for SolverError {
    fn from(e: AmbiguityError) -> Self {
        match e {
            AmbiguityError::InfeasibleSet => SolverError::InfeasibleAmbiguity,
            AmbiguityError::LpFailure(LpError::Unbounded) => SolverError::UnboundedBelow,
            e => SolverError::Ambiguity(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub max_iters: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { primal_tol: 1e-6, dual_tol: 1e-6, max_iters: 200 }
    }
}

impl Tolerances {
    fn validate(&self) -> Result<(), SolverError> {
        for (name, v) in [("primal_tol", self.primal_tol), ("dual_tol", self.dual_tol)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SolverError::InvalidTolerance(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(SolverError::InvalidTolerance("max_iters must be > 0".into()));
        }
        Ok(())
    }

    fn gap(&self) -> f64 {
        self.primal_tol.min(self.dual_tol)
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    lattice: Arc<ScenarioLattice>,
    claim: Claim,
    utility: Arc<UtilitySpec>,
    ambiguity: Arc<AmbiguitySpec>,
    tol: Tolerances,
}

impl Problem {
    pub fn new(
        lattice: Arc<ScenarioLattice>,
        claim: Claim,
        utility: Arc<UtilitySpec>,
        ambiguity: Arc<AmbiguitySpec>,
        tol: Tolerances,
    ) -> Result<Self, SolverError> {
        let fp = lattice.fingerprint();
        if claim.fingerprint() != fp || ambiguity.lattice().fingerprint() != fp {
            return Err(SolverError::LatticeMismatch);
        }
        if let Some(got) = utility.leaf_count() {
            if got != lattice.num_leaves() {
                return Err(SolverError::UtilityLength { expected: lattice.num_leaves(), got });
            }
        }
        tol.validate()?;
        Ok(Problem { lattice, claim, utility, ambiguity, tol })
    }

    pub fn lattice(&self) -> &Arc<ScenarioLattice> {
        &self.lattice
    }

    pub fn claim(&self) -> &Claim {
        &self.claim
    }

    pub fn utility(&self) -> &Arc<UtilitySpec> {
        &self.utility
    }

    pub fn ambiguity(&self) -> &Arc<AmbiguitySpec> {
        &self.ambiguity
    }

    pub fn tolerances(&self) -> Tolerances {
        self.tol
    }

    /// Same market, utility and ambiguity with another claim.
    pub fn with_claim(&self, claim: Claim) -> Result<Self, SolverError> {
        if claim.fingerprint() != self.lattice.fingerprint() {
            return Err(SolverError::LatticeMismatch);
        }
        Ok(Problem { claim, ..self.clone() })
    }

    pub fn with_tolerances(&self, tol: Tolerances) -> Result<Self, SolverError> {
        tol.validate()?;
        Ok(Problem { tol, ..self.clone() })
    }
}

/// Engine view of a [`UtilitySpec`].
pub(crate) struct SpecUtility {
    spec: Arc<UtilitySpec>,
    conj: Conjugate,
}

impl SpecUtility {
    pub(crate) fn new(spec: Arc<UtilitySpec>) -> Self {
        let conj = Conjugate::new(spec.clone());
        SpecUtility { spec, conj }
    }

    fn a(&self, leaf: usize) -> f64 {
        self.spec.scale().map_or(1.0, |a| a[leaf])
    }
}

const EXP_LOW: f64 = -10.0;
const EXP_HIGH: f64 = 30.0;
const SEED_OFFSETS: [f64; 7] = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];

impl LeafUtility for SpecUtility {
    fn u(&self, leaf: usize, x: f64) -> f64 {
        self.spec.eval_u(leaf, x)
    }

    fn du(&self, leaf: usize, x: f64) -> f64 {
        self.spec.derivative(leaf, x)
    }

    fn d2u(&self, leaf: usize, x: f64) -> Option<f64> {
        match self.spec.kind() {
            UtilityKind::Exponential { lambda } => Some(-self.a(leaf) * lambda * self.spec.derivative(leaf, x)),
            _ => None,
        }
    }

    fn v(&self, leaf: usize, y: f64) -> f64 {
        self.conj.value_unchecked(leaf, y)
    }

    fn clamp(&self, leaf: usize, x: f64) -> f64 {
        match self.spec.kind() {
            UtilityKind::Exponential { lambda } => {
                let k = lambda * self.a(leaf);
                x.clamp(EXP_LOW / k, EXP_HIGH / k)
            }
            _ => x,
        }
    }

    fn seed_slopes(&self, leaf: usize, base: f64) -> Vec<f64> {
        let a = self.a(leaf);
        let mut out = vec![0.0];
        match self.spec.kind() {
            UtilityKind::Exponential { lambda } => {
                for k in SEED_OFFSETS {
                    out.push(self.du(leaf, self.clamp(leaf, base + k / (lambda * a))));
                }
            }
            UtilityKind::Tabulated(t) => out.extend(tabulated_seeds(t, a)),
            UtilityKind::TabulatedPerPath(ts) => out.extend(tabulated_seeds(&ts[leaf], a)),
        }
        out
    }
}

fn tabulated_seeds(t: &crate::utility::Tabulated, a: f64) -> Vec<f64> {
    let mut out: Vec<f64> = t.slopes().into_iter().map(|s| a * s).collect();
    if let crate::utility::LeftTail::Quadratic { kappa } = t.left_tail() {
        for d in [0.5, 1.0, 2.0, 4.0, 8.0] {
            out.push(a * (t.left_slope() + 2.0 * kappa * d));
        }
    }
    out
}

/// `D = q E^Q X + D_v(qQ || P) + alpha(P)`, evaluated exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    pub q: f64,
    /// The martingale measure `Q`; carries no information when `q = 0`.
    pub martingale: Measure,
    /// The measure `P` of the ambiguity set used for the divergence.
    pub reference: Measure,
    pub alpha: f64,
    pub value: f64,
}

/// Martingale residual tolerance for certificates.
pub const MARTINGALE_TOL: f64 = 1e-9;

impl DualCertificate {
    pub fn evaluate(prob: &Problem, q: f64, martingale: Measure, reference: Measure) -> Result<Self, SolverError> {
        let conj = Conjugate::new(prob.utility.clone());
        let ex = if q > 0.0 { q * martingale.expectation(&prob.claim)? } else { 0.0 };
        let div = divergence_dv(&conj, q, &martingale, &reference)?;
        let alpha = prob.ambiguity.alpha(&reference)?;
        Ok(DualCertificate { q, martingale, reference, alpha, value: ex + div + alpha })
    }

    pub fn validate(&self, prob: &Problem) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::InvalidCertificate(m));
        if !(self.q.is_finite() && self.q >= 0.0) {
            return bad(format!("q = {} is not a nonnegative number", self.q));
        }
        if !self.martingale.is_on(&prob.lattice) || !self.reference.is_on(&prob.lattice) {
            return Err(SolverError::LatticeMismatch);
        }
        if self.q > 0.0 {
            let res = prob.lattice.martingale_residuals(self.martingale.weights());
            let worst = res.iter().map(|r| r.abs()).fold(0.0, f64::max);
            if worst > MARTINGALE_TOL {
                return bad(format!("martingale residual {worst:e}"));
            }
        }
        let fresh = DualCertificate::evaluate(prob, self.q, self.martingale.clone(), self.reference.clone())?;
        if !fresh.value.is_finite() {
            return bad("certificate value is not finite".into());
        }
        if (fresh.value - self.value).abs() > 1e-8 {
            return bad(format!("stored value {} differs from {}", self.value, fresh.value));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// `F(theta*)`: the robust utility attained by `strategy`, a lower bound on `U(X)`.
    pub value: f64,
    pub strategy: Strategy,
    pub worst_case: Measure,
    pub worst_alpha: f64,
    /// Best dual certificate, an upper bound on `U(X)`.
    pub certificate: DualCertificate,
    /// `inf_P {E^P v(0) + alpha(P)}` when finite.
    pub q_zero_value: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    pub box_radius: f64,
    /// The strategy box was binding when the solve stopped.
    pub box_active: bool,
}

impl Solution {
    pub fn upper(&self) -> f64 {
        self.certificate.value
    }

    pub fn gap(&self) -> f64 {
        self.certificate.value - self.value
    }
}

/// Gain columns `G`: one per non-terminal node, `(leaf, Delta S)`.
pub(crate) fn gain_columns(lat: &ScenarioLattice) -> Vec<Vec<(usize, f64)>> {
    let mut cols = vec![Vec::new(); lat.num_non_terminal()];
    for l in 0..lat.num_leaves() {
        for &(k, d) in lat.increments(l) {
            if d != 0.0 {
                cols[k].push((l, d));
            }
        }
    }
    cols
}

pub(crate) fn box_radius(lat: &ScenarioLattice, claim: &Claim) -> f64 {
    let xinf = claim.values().iter().map(|x| x.abs()).fold(0.0, f64::max);
    lat.smallest_increment().map_or(1.0, |d| 10.0 * (xinf + 1.0) / d)
}

/// `F(theta) = inf_P {E^P u(X + wealth(theta)) + alpha(P)}` with its minimizer.
pub fn evaluate_strategy(prob: &Problem, strategy: &Strategy) -> Result<InnerResult, SolverError> {
    let lat = &prob.lattice;
    let x = lat.wealth_vector(strategy)?;
    let cost: Vec<f64> =
        (0..lat.num_leaves()).map(|l| prob.utility.eval_u(l, prob.claim.values()[l] + x[l])).collect();
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(SolverError::UnboundedBelow);
    }
    Ok(prob.ambiguity.inner_min(&cost)?)
}

fn check_standing_conditions(prob: &Problem) -> Result<(), SolverError> {
    let report = check_conditions(&prob.utility, prob.lattice.num_leaves(), &ConditionGrid::default());
    for (name, status) in [("U1", &report.u1), ("U2", &report.u2), ("U3", &report.u3)] {
        if !status.passed {
            return Err(SolverError::Conditions(format!("{name}: {}", status.detail)));
        }
    }
    Ok(())
}

const Q_GRID_POINTS: usize = 33;

/// Minimizes `q -> q E^Q X + D_v(qQ || P)` for fixed `Q` and `P`.
fn polish_q(prob: &Problem, conj: &Conjugate, big_q: &Measure, p: &Measure, q0: f64) -> Result<f64, SolverError> {
    let ex = big_q.expectation(&prob.claim)?;
    let phi = |q: f64| -> f64 {
        let d = divergence_dv(conj, q, big_q, p).unwrap_or(f64::INFINITY);
        q * ex + d
    };
    if let Some(lambda) = prob.utility.plain_exponential() {
        // stationarity of q a + (q / lambda)(ln(q / lambda) - 1 + H(Q||P))
        let mut h = 0.0;
        for (&ql, &pl) in big_q.weights().iter().zip(p.weights()) {
            if ql > 0.0 {
                if pl <= 0.0 {
                    return Ok(q0);
                }
                h += ql * (ql / pl).ln();
            }
        }
        let q = lambda * (-lambda * ex - h).exp();
        return Ok(if q.is_finite() && phi(q) < phi(q0) { q } else { q0 });
    }
    let mut grid: Vec<f64> = vec![0.0];
    grid.extend((0..Q_GRID_POINTS).map(|i| 10f64.powf(-4.0 + 8.0 * i as f64 / (Q_GRID_POINTS - 1) as f64)));
    grid.push(q0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let vals: Vec<f64> = grid.iter().map(|&q| phi(q)).collect();
    let i = (0..grid.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let (mut lo, mut hi) = (grid[i.saturating_sub(1)], grid[(i + 1).min(grid.len() - 1)]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut fa, mut fb) = (phi(a), phi(b));
    for _ in 0..100 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = phi(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = phi(b);
        }
    }
    let mut best = (vals[i], grid[i]);
    for (q, v) in [(a, fa), (b, fb), (q0, phi(q0))] {
        if v < best.0 {
            best = (v, q);
        }
    }
    Ok(best.1)
}

fn certificate_from_upper(prob: &Problem, up: &UpperPoint) -> Result<Option<DualCertificate>, SolverError> {
    let lat = &prob.lattice;
    let q: f64 = up.r.iter().sum();
    let reference = Measure::normalized(lat, up.p.clone())?;
    let martingale = if q > 0.0 {
        Measure::normalized(lat, up.r.iter().map(|r| r / q).collect())?
    } else {
        reference.clone()
    };
    let cert = DualCertificate::evaluate(prob, q.max(0.0), martingale, reference)?;
    Ok(cert.value.is_finite().then_some(cert))
}

/// Improves a certificate by re-optimizing `q`, then `P` for the fixed `qQ`, then `q`.
fn polish(prob: &Problem, cert: DualCertificate, move_p: bool) -> Result<DualCertificate, SolverError> {
    if cert.q <= 0.0 {
        return Ok(cert);
    }
    let conj = Conjugate::new(prob.utility.clone());
    let mut best = cert;
    let q = polish_q(prob, &conj, &best.martingale, &best.reference, best.q)?;
    let cand = DualCertificate::evaluate(prob, q, best.martingale.clone(), best.reference.clone())?;
    if cand.value < best.value {
        best = cand;
    }
    if move_p {
        let r: Vec<f64> = best.martingale.weights().iter().map(|w| best.q * w).collect();
        let inner = match prob.ambiguity.convex_inner_min_bounds(&PerspectiveFn { conj: &conj, r: &r }) {
            Ok(inner) => inner,
            // polishing is optional; keep the certificate we have
            Err(AmbiguityError::NoConvergence { .. }) => return Ok(best),
            Err(e) => return Err(e.into()),
        };
        if inner.value.is_finite() {
            let q = polish_q(prob, &conj, &best.martingale, &inner.measure, best.q)?;
            let cand = DualCertificate::evaluate(prob, q, best.martingale.clone(), inner.measure)?;
            if cand.value < best.value {
                best = cand;
            }
        }
    }
    Ok(best)
}

/// The `q = 0` element of the dual cone: `inf_P {E^P v(0) + alpha(P)}`.
pub fn q_zero_branch(prob: &Problem) -> Result<Option<DualCertificate>, SolverError> {
    let conj = Conjugate::new(prob.utility.clone());
    let n = prob.lattice.num_leaves();
    let cost: Vec<f64> = (0..n).map(|l| conj.value_unchecked(l, 0.0)).collect();
    if cost.iter().any(|c| !c.is_finite()) {
        return Ok(None);
    }
    let inner = prob.ambiguity.inner_min(&cost)?;
    let cert = DualCertificate::evaluate(prob, 0.0, inner.measure.clone(), inner.measure)?;
    Ok(Some(cert))
}

/// Checks `q E^Q Y^- <= q E^Q X^+ - E^P u(X + Y) + E^P v(q dQ/dP) + c` along the iterates.
fn check_iterate_bounds(prob: &Problem, cert: &DualCertificate, iterates: &[Vec<f64>]) -> Result<(), SolverError> {
    let lat = &prob.lattice;
    let n = lat.num_leaves();
    let conj = Conjugate::new(prob.utility.clone());
    let div = divergence_dv(&conj, cert.q, &cert.martingale, &cert.reference)?;
    if !div.is_finite() {
        return Ok(());
    }
    let c = (0..n).map(|l| prob.utility.upside(l)).fold(0.0, f64::max);
    let x = prob.claim.values();
    let (qw, pw) = (cert.martingale.weights(), cert.reference.weights());
    let x_plus: f64 = (0..n).map(|l| qw[l] * x[l].max(0.0)).sum::<f64>() * cert.q;
    for (k, z) in iterates.iter().enumerate() {
        let y = lat.gains(z);
        let lhs = cert.q * (0..n).map(|l| qw[l] * (-y[l]).max(0.0)).sum::<f64>();
        let eu: f64 = (0..n).filter(|&l| pw[l] > 0.0).map(|l| pw[l] * prob.utility.eval_u(l, x[l] + y[l])).sum();
        let rhs = x_plus - eu + div + c;
        if lhs > rhs + 1e-9 * (1.0 + lhs.abs() + rhs.abs()) {
            return Err(SolverError::BoundBreach { iterate: k, detail: format!("{lhs} > {rhs}") });
        }
    }
    Ok(())
}

/// Solves the saddle problem and returns both sides with the best certificate.
/// Non-convergence is reported through [`Solution::converged`].
pub fn solve(prob: &Problem) -> Result<Solution, SolverError> {
    check_standing_conditions(prob)?;
    let lat = &prob.lattice;
    let util = SpecUtility::new(prob.utility.clone());
    let bcols = gain_columns(lat);
    let nt = bcols.len();
    let radius = box_radius(lat, &prob.claim);
    let sp = SaddleProblem {
        amb: &prob.ambiguity,
        util: &util,
        b: prob.claim.values(),
        bcols,
        c: vec![0.0; nt],
        radius: vec![radius; nt],
        tol: prob.tol.gap(),
        max_iters: prob.tol.max_iters,
    };
    let run = sp.run()?;
    let mut z = run.z.clone();
    for (j, col) in sp.bcols.iter().enumerate() {
        if col.is_empty() {
            z[j] = 0.0;
        }
    }

    let mut candidates = Vec::new();
    if let Some(up) = &run.upper {
        if let Some(cert) = certificate_from_upper(prob, up)? {
            let refine = cert.value - run.lower > prob.tol.gap();
            candidates.push(polish(prob, cert, refine)?);
        }
    }
    let q_zero = q_zero_branch(prob)?;
    if let Some(c) = &q_zero {
        candidates.push(c.clone());
    }
    let valid: Vec<DualCertificate> = candidates.into_iter().filter(|c| c.value.is_finite()).collect();
    let certificate = valid
        .into_iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or(SolverError::NotConverged { lower: run.lower, upper: f64::INFINITY })?;
    if run.lower > certificate.value + 1e-9 {
        return Err(SolverError::WeakDualityBreach { primal: run.lower, dual: certificate.value });
    }
    check_iterate_bounds(prob, &certificate, &run.iterates)?;
    let converged = certificate.value - run.lower <= prob.tol.gap();
    Ok(Solution {
        value: run.lower,
        strategy: Strategy::new(lat, z)?,
        worst_case: run.worst.measure.clone(),
        worst_alpha: run.worst.alpha,
        certificate,
        q_zero_value: q_zero.map(|c| c.value),
        converged,
        iterations: run.trace.len(),
        trace: run.trace,
        box_radius: radius,
        box_active: run.box_active,
    })
}

/// `U(X)` with the attaining strategy and worst-case measure.
pub fn solve_primal(prob: &Problem) -> Result<Solution, SolverError> {
    let sol = solve(prob)?;
    if !sol.converged {
        return Err(SolverError::NotConverged { lower: sol.value, upper: sol.upper() });
    }
    Ok(sol)
}

/// The minimizing element of the dual cone.
pub fn solve_dual(prob: &Problem) -> Result<DualCertificate, SolverError> {
    Ok(solve_primal(prob)?.certificate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub primal: f64,
    pub dual: f64,
    pub absolute: f64,
    pub relative: f64,
    pub converged: bool,
}

/// Weak duality margin used by [`duality_gap`].
pub const WEAK_DUALITY_SLACK: f64 = 1e-9;

pub fn duality_gap(prob: &Problem) -> Result<(GapReport, Solution), SolverError> {
    gap_with(prob, false)
}

/// [`duality_gap`] with the primal value's sign flipped; exercises the breach path.
#[doc(hidden)]
pub fn gap_with(prob: &Problem, flip_primal: bool) -> Result<(GapReport, Solution), SolverError> {
    let sol = solve(prob)?;
    let primal = if flip_primal { -sol.value } else { sol.value };
    let dual = sol.upper();
    if primal > dual + WEAK_DUALITY_SLACK {
        return Err(SolverError::WeakDualityBreach { primal, dual });
    }
    let absolute = dual - primal;
    let report = GapReport {
        primal,
        dual,
        absolute,
        relative: absolute.abs() / (1.0 + primal.abs()),
        converged: sol.converged,
    };
    Ok((report, sol))
}
