//! Python bindings: lattices, problems, the saddle solver and the arbitrage and
//! transport helpers. Measures cross the boundary as lists of leaf weights in
//! canonical leaf order.

use std::fmt::Display;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rumax_cli::generate::{generate_instance, Shape};
use rumax_cli::problem::{parse_problem, parse_problem_str, AmbiguityType};
use rumax_core::ambiguity::{AmbiguityKind, AmbiguitySpec};
use rumax_core::arbitrage::{self, NaStatus};
use rumax_core::lattice::{multiplicative_tree, Claim, Measure, NodeSpec, ScenarioLattice};
use rumax_core::solver::{self, entropic, Tolerances};
use rumax_core::transport::{self, MetricParams};
use rumax_core::utility::{self, UtilitySpec};

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn py_bool(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

/// Scenario tree of `(money account, price)` pairs.
#[pyclass(frozen, module = "rumax")]
struct Lattice {
    inner: Arc<ScenarioLattice>,
}

#[pymethods]
impl Lattice {
    /// `nodes` holds `(id, parent, t, m, s)` tuples, parent `None` for the root.
    #[new]
    fn new(horizon: usize, nodes: Vec<(u64, Option<u64>, usize, f64, f64)>) -> PyResult<Self> {
        let specs: Vec<NodeSpec> =
            nodes.into_iter().map(|(id, parent, t, m, s)| NodeSpec { id, parent, t, m, s }).collect();
        let lat = ScenarioLattice::build(horizon, &specs).map_err(value_err)?;
        Ok(Lattice { inner: Arc::new(lat) })
    }

    /// Recombining-free tree where every node has one child per factor.
    #[staticmethod]
    fn multiplicative(horizon: usize, s0: f64, factors: Vec<f64>) -> PyResult<Self> {
        let lat = multiplicative_tree(horizon, s0, &factors).map_err(value_err)?;
        Ok(Lattice { inner: Arc::new(lat) })
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn num_leaves(&self) -> usize {
        self.inner.num_leaves()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    fn leaf_labels(&self) -> Vec<u64> {
        self.inner.leaf_labels()
    }

    fn path_prices(&self, leaf: usize) -> PyResult<Vec<f64>> {
        self.check_leaf(leaf)?;
        Ok(self.inner.path_prices(leaf))
    }

    /// Terminal gains of a strategy given as one holding per non-terminal node.
    fn wealth(&self, holdings: Vec<f64>) -> PyResult<Vec<f64>> {
        let th = rumax_core::lattice::Strategy::new(&self.inner, holdings).map_err(value_err)?;
        self.inner.wealth_vector(&th).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Lattice(horizon={}, nodes={}, leaves={})",
            self.inner.horizon(),
            self.inner.num_nodes(),
            self.inner.num_leaves()
        )
    }
}

impl Lattice {
    fn check_leaf(&self, leaf: usize) -> PyResult<()> {
        if leaf >= self.inner.num_leaves() {
            return Err(PyValueError::new_err(format!("leaf {leaf} out of range")));
        }
        Ok(())
    }

    fn measure(&self, weights: Vec<f64>) -> PyResult<Measure> {
        Measure::new(&self.inner, weights).map_err(value_err)
    }
}

#[pyclass(frozen, get_all, module = "rumax")]
struct Solution {
    /// Robust utility of the returned strategy (lower bound).
    value: f64,
    /// Value of the dual certificate (upper bound).
    upper: f64,
    gap: f64,
    converged: bool,
    iterations: usize,
    strategy: Vec<f64>,
    worst_case: Vec<f64>,
    q: f64,
    martingale: Vec<f64>,
    reference: Vec<f64>,
    q_zero_value: Option<f64>,
}

#[pymethods]
impl Solution {
    fn __repr__(&self) -> String {
        format!(
            "Solution(value={:.9}, upper={:.9}, converged={}, iterations={})",
            self.value,
            self.upper,
            py_bool(self.converged),
            self.iterations
        )
    }
}

#[pyclass(frozen, get_all, module = "rumax")]
struct Entropic {
    value: f64,
    lower: f64,
    lambda_: f64,
    entropy: f64,
    martingale: Vec<f64>,
    reference: Vec<f64>,
    converged: bool,
}

#[pymethods]
impl Entropic {
    fn __repr__(&self) -> String {
        format!("Entropic(value={:.9}, lower={:.9}, converged={})", self.value, self.lower, py_bool(self.converged))
    }
}

/// Claim, utility and ambiguity set on a lattice.
#[pyclass(frozen, module = "rumax")]
struct Problem {
    inner: solver::Problem,
}

#[pymethods]
impl Problem {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Problem { inner: parse_problem_str(text).map_err(value_err)? })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Problem { inner: parse_problem(&path).map_err(value_err)? })
    }

    /// Exponential utility with the convex hull of `generators` as ambiguity set.
    #[staticmethod]
    #[pyo3(signature = (lattice, claim, lam, generators))]
    fn exponential_hull(lattice: &Lattice, claim: Vec<f64>, lam: f64, generators: Vec<Vec<f64>>) -> PyResult<Self> {
        let lat = lattice.inner.clone();
        let generators = generators.into_iter().map(|w| lattice.measure(w)).collect::<PyResult<Vec<_>>>()?;
        let amb = AmbiguitySpec::new(lat.clone(), AmbiguityKind::FiniteHull { generators }).map_err(value_err)?;
        let claim = Claim::new(&lat, claim).map_err(value_err)?;
        let u = UtilitySpec::exponential(lam).map_err(value_err)?;
        let inner = solver::Problem::new(lat, claim, Arc::new(u), Arc::new(amb), Tolerances::default())
            .map_err(value_err)?;
        Ok(Problem { inner })
    }

    #[getter]
    fn lattice(&self) -> Lattice {
        Lattice { inner: self.inner.lattice().clone() }
    }

    #[pyo3(signature = (max_iters = None, tol = None))]
    fn solve(&self, py: Python<'_>, max_iters: Option<usize>, tol: Option<f64>) -> PyResult<Solution> {
        let mut t = self.inner.tolerances();
        if let Some(m) = max_iters {
            t.max_iters = m;
        }
        if let Some(x) = tol {
            t.primal_tol = x;
            t.dual_tol = x;
        }
        let prob = self.inner.with_tolerances(t).map_err(value_err)?;
        let sol = py.detach(|| solver::solve(&prob)).map_err(runtime_err)?;
        Ok(Solution {
            value: sol.value,
            upper: sol.upper(),
            gap: sol.gap(),
            converged: sol.converged,
            iterations: sol.iterations,
            strategy: sol.strategy.holdings().to_vec(),
            worst_case: sol.worst_case.weights().to_vec(),
            q: sol.certificate.q,
            martingale: sol.certificate.martingale.weights().to_vec(),
            reference: sol.certificate.reference.weights().to_vec(),
            q_zero_value: sol.q_zero_value,
        })
    }

    /// Dual objective at `(q, Q, P)`; an upper bound on the robust value.
    fn dual_value(&self, q: f64, martingale: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
        let lat = self.inner.lattice();
        let mq = Measure::new(lat, martingale).map_err(value_err)?;
        let mp = Measure::new(lat, reference).map_err(value_err)?;
        let cert = solver::DualCertificate::evaluate(&self.inner, q, mq, mp).map_err(value_err)?;
        Ok(cert.value)
    }

    fn entropic(&self, py: Python<'_>) -> PyResult<Entropic> {
        let rep = py.detach(|| entropic::entropic_value(&self.inner)).map_err(runtime_err)?;
        Ok(Entropic {
            value: rep.value,
            lower: rep.lower,
            lambda_: rep.lambda,
            entropy: rep.entropy,
            martingale: rep.martingale.weights().to_vec(),
            reference: rep.reference.weights().to_vec(),
            converged: rep.converged,
        })
    }

    /// `True`, `False`, or `None` when undetermined, per the ambiguity set.
    fn no_arbitrage(&self) -> PyResult<Option<bool>> {
        let rep = arbitrage::check_na(self.inner.ambiguity()).map_err(runtime_err)?;
        Ok(rep.verdict())
    }

    /// `(label, status)` per checked member.
    fn na_report(&self) -> PyResult<Vec<(String, String)>> {
        let rep = arbitrage::check_na(self.inner.ambiguity()).map_err(runtime_err)?;
        Ok(rep
            .entries
            .into_iter()
            .map(|e| {
                let status = match e.status {
                    NaStatus::Holds => "holds",
                    NaStatus::Fails => "fails",
                    NaStatus::Undetermined => "undetermined",
                };
                (e.label, status.to_string())
            })
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Problem(leaves={})", self.inner.lattice().num_leaves())
    }
}

/// `(arbitrage, witness holdings or None)` for a measure on `lattice`.
#[pyfunction]
fn admits_arbitrage(lattice: &Lattice, weights: Vec<f64>) -> PyResult<(bool, Option<Vec<f64>>)> {
    let p = lattice.measure(weights)?;
    let check = arbitrage::admits_arbitrage(&lattice.inner, &p).map_err(runtime_err)?;
    Ok((check.arbitrage, check.witness.map(|s| s.holdings().to_vec())))
}

/// An equivalent martingale measure, or `None` when the measure admits arbitrage.
#[pyfunction]
fn find_emm(lattice: &Lattice, weights: Vec<f64>) -> PyResult<Option<Vec<f64>>> {
    let p = lattice.measure(weights)?;
    let q = arbitrage::find_emm(&lattice.inner, &p).map_err(runtime_err)?;
    Ok(q.map(|m| m.weights().to_vec()))
}

#[pyfunction]
#[pyo3(signature = (lattice, first, second, rho = 1.0, kappa = 1.0, p = 2.0))]
fn wasserstein(lattice: &Lattice, first: Vec<f64>, second: Vec<f64>, rho: f64, kappa: f64, p: f64) -> PyResult<f64> {
    let params = MetricParams::new(rho, kappa, p).map_err(value_err)?;
    let a = lattice.measure(first)?;
    let b = lattice.measure(second)?;
    Ok(transport::wasserstein_p(&lattice.inner, params, &a, &b).map_err(runtime_err)?.value)
}

#[pyfunction]
#[pyo3(signature = (lattice, a, b, rho = 1.0, kappa = 1.0, p = 2.0))]
fn path_distance(lattice: &Lattice, a: usize, b: usize, rho: f64, kappa: f64, p: f64) -> PyResult<f64> {
    lattice.check_leaf(a)?;
    lattice.check_leaf(b)?;
    let params = MetricParams::new(rho, kappa, p).map_err(value_err)?;
    transport::path_distance(&params, &lattice.inner.path_point(a), &lattice.inner.path_point(b)).map_err(value_err)
}

/// Conjugate of `-exp(-lam x)` at `y`.
#[pyfunction]
fn exp_conjugate(lam: f64, y: f64) -> f64 {
    utility::exp_conjugate(lam, y)
}

/// Seeded random problem as a JSON document.
#[pyfunction]
fn generate(seed: u64, horizon: usize, branching: usize, kind: &str) -> PyResult<String> {
    let kind = match kind {
        "finite-hull" => AmbiguityType::FiniteHull,
        "moment-set" => AmbiguityType::MomentSet,
        "wasserstein-ball" => AmbiguityType::WassersteinBall,
        "wasserstein-penalty" => AmbiguityType::WassersteinPenalty,
        other => return Err(PyValueError::new_err(format!("unknown kind {other:?}"))),
    };
    let g = generate_instance(seed, Shape { horizon, branching, kind }).map_err(value_err)?;
    Ok(g.to_json())
}

#[pymodule]
fn rumax(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Lattice>()?;
    m.add_class::<Problem>()?;
    m.add_class::<Solution>()?;
    m.add_class::<Entropic>()?;
    m.add_function(wrap_pyfunction!(admits_arbitrage, m)?)?;
    m.add_function(wrap_pyfunction!(find_emm, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein, m)?)?;
    m.add_function(wrap_pyfunction!(path_distance, m)?)?;
    m.add_function(wrap_pyfunction!(exp_conjugate, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    Ok(())
}
