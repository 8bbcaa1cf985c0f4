//! Entropic specialization for exponential utility:
//! `W(X) = inf_{Q martingale} {E^Q X + (1/lambda) inf_P H(Q || P)}`.

use crate::ambiguity::AmbiguityKind;
use crate::lattice::Measure;
use crate::utility::LeafConvex;

use super::engine::{LeafUtility, SaddleProblem, TraceRow};
use super::{box_radius, gain_columns, solve, Problem, Solution, SolverError};

/// `-(1/lambda) exp(-lambda x - 1)`, whose conjugate is `(1/lambda) y ln y`.
struct EntropicUtility {
    lambda: f64,
}

impl LeafUtility for EntropicUtility {
    fn u(&self, _: usize, x: f64) -> f64 {
        -(-self.lambda * x - 1.0).exp() / self.lambda
    }

    fn du(&self, _: usize, x: f64) -> f64 {
        (-self.lambda * x - 1.0).exp()
    }

    fn d2u(&self, leaf: usize, x: f64) -> Option<f64> {
        Some(-self.lambda * self.du(leaf, x))
    }

    fn v(&self, _: usize, y: f64) -> f64 {
        if y > 0.0 {
            y * y.ln() / self.lambda
        } else {
            0.0
        }
    }

    fn clamp(&self, _: usize, x: f64) -> f64 {
        x.clamp((super::EXP_LOW - 1.0) / self.lambda, (super::EXP_HIGH - 1.0) / self.lambda)
    }

    fn seed_slopes(&self, leaf: usize, base: f64) -> Vec<f64> {
        let mut out = vec![0.0];
        for k in super::SEED_OFFSETS {
            out.push(self.du(leaf, self.clamp(leaf, base + k / self.lambda)));
        }
        out
    }
}

/// `q_l ln(q_l / p)`, the relative-entropy summand as a function of `p`.
struct EntropyFn<'a> {
    q: &'a [f64],
}

impl LeafConvex for EntropyFn<'_> {
    fn value(&self, leaf: usize, p: f64) -> f64 {
        let q = self.q[leaf];
        if q <= 0.0 {
            0.0
        } else if p <= 0.0 {
            f64::INFINITY
        } else {
            q * (q / p).ln()
        }
    }

    fn cut(&self, leaf: usize, p: f64) -> (f64, f64) {
        let q = self.q[leaf];
        if q <= 0.0 {
            return (0.0, 0.0);
        }
        let slope = -q / p;
        (slope, self.value(leaf, p) - slope * p)
    }
}

/// `H(Q || P)`, `+inf` unless `Q << P`.
pub fn relative_entropy(q: &Measure, p: &Measure) -> f64 {
    let f = EntropyFn { q: q.weights() };
    (0..q.weights().len()).map(|l| f.value(l, p.weights()[l])).sum()
}

#[derive(Debug, Clone)]
pub struct EntropicReport {
    pub lambda: f64,
    /// `E^Q X + H(Q || P)/lambda` at the returned pair: an upper bound on `W(X)`.
    pub value: f64,
    /// Lower bound on `W(X)` from the cash-augmented primal.
    pub lower: f64,
    pub martingale: Measure,
    pub reference: Measure,
    pub entropy: f64,
    /// The primal solve of the same problem.
    pub primal: Solution,
    /// `-(1/lambda) ln(-U)` from the primal lower bound.
    pub from_primal: f64,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

impl EntropicReport {
    /// `|W_primal - W_dual| / (1 + |W_dual|)`.
    pub fn consistency(&self) -> f64 {
        (self.from_primal - self.value).abs() / (1.0 + self.value.abs())
    }
}

pub fn entropic_value(prob: &Problem) -> Result<EntropicReport, SolverError> {
    let lambda = prob.utility().plain_exponential().ok_or(SolverError::NotExponential)?;
    if matches!(prob.ambiguity().kind(), AmbiguityKind::WassersteinPenalty { .. }) {
        return Err(SolverError::PenaltyNotSupported);
    }
    let lat = prob.lattice();
    let n = lat.num_leaves();
    let mut bcols = gain_columns(lat);
    let nt = bcols.len();
    bcols.push((0..n).map(|l| (l, 1.0)).collect());
    let mut c = vec![0.0; nt];
    c.push(1.0);
    let r = box_radius(lat, prob.claim());
    let mut radius = vec![r; nt];
    radius.push(10.0 * (r + 1.0) * (1.0 + 1.0 / lambda));
    let util = EntropicUtility { lambda };
    let tol = prob.tolerances();
    let sp = SaddleProblem {
        amb: prob.ambiguity(),
        util: &util,
        b: prob.claim().values(),
        bcols,
        c,
        radius,
        tol: tol.primal_tol.min(tol.dual_tol),
        max_iters: tol.max_iters,
    };
    let run = sp.run()?;
    let up = run.upper.as_ref().ok_or(SolverError::NotConverged { lower: run.lower, upper: f64::INFINITY })?;
    let martingale = Measure::normalized(lat, up.r.clone())?;
    let mut reference = Measure::normalized(lat, up.p.clone())?;
    let mut entropy = relative_entropy(&martingale, &reference);
    let ex = martingale.expectation(prob.claim())?;
    if ex + entropy / lambda - run.lower > sp.tol {
        let inner = prob.ambiguity().convex_inner_min_bounds(&EntropyFn { q: martingale.weights() })?;
        let h = relative_entropy(&martingale, &inner.measure);
        if h < entropy {
            entropy = h;
            reference = inner.measure;
        }
    }
    let value = ex + entropy / lambda;
    let primal = solve(prob)?;
    let from_primal = -(-primal.value).ln() / lambda;
    let converged = value - run.lower <= sp.tol && primal.converged;
    Ok(EntropicReport {
        lambda,
        value,
        lower: run.lower,
        martingale,
        reference,
        entropy,
        primal,
        from_primal,
        converged,
        trace: run.trace,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::ambiguity::AmbiguitySpec;
    use crate::lattice::{multiplicative_tree, Claim};
    use crate::solver::Tolerances;
    use crate::utility::UtilitySpec;

    fn problem(factors: &[f64], p: Vec<f64>, x: f64) -> Problem {
        let lat = Arc::new(multiplicative_tree(1, 1.0, factors).unwrap());
        let p = Measure::new(&lat, p).unwrap();
        let amb = AmbiguitySpec::new(lat.clone(), AmbiguityKind::FiniteHull { generators: vec![p] }).unwrap();
        let claim = Claim::constant(&lat, x).unwrap();
        let u = Arc::new(UtilitySpec::exponential(1.0).unwrap());
        Problem::new(lat, claim, u, Arc::new(amb), Tolerances::default()).unwrap()
    }

    #[test]
    fn binomial_entropy() {
        let rep = entropic_value(&problem(&[2.0, 0.5], vec![0.5, 0.5], 0.0)).unwrap();
        let want = (1.0f64 / 3.0) * (2.0f64 / 3.0).ln() + (2.0f64 / 3.0) * (4.0f64 / 3.0).ln();
        assert!((rep.value - want).abs() < 1e-6, "{} vs {want}", rep.value);
        assert!((rep.martingale.weights()[0] - 1.0 / 3.0).abs() < 1e-6);
        assert!(rep.consistency() < 1e-6);
    }

    #[test]
    fn martingale_reference_has_zero_entropy() {
        let rep = entropic_value(&problem(&[2.0, 0.5], vec![1.0 / 3.0, 2.0 / 3.0], 0.0)).unwrap();
        assert!(rep.value.abs() < 1e-9);
        let shifted = entropic_value(&problem(&[2.0, 0.5], vec![0.5, 0.5], 1.5)).unwrap();
        let base = entropic_value(&problem(&[2.0, 0.5], vec![0.5, 0.5], 0.0)).unwrap();
        assert!((shifted.value - base.value - 1.5).abs() < 1e-6);
    }
}
