//! Checks on `phi(X) = -U(-X)`: monotonicity, convexity and the Fenchel
//! inequality against `phi*(mu) = D^alpha_v(mu)` for `mu = qQ` in the dual cone.

use crate::lattice::{Claim, Measure};
use crate::utility::{Conjugate, PerspectiveFn};

use super::{evaluate_strategy, solve, Problem, Solution, SolverError};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Signed margin; negative means violated by that much.
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct BiconjReport {
    pub checks: Vec<Check>,
    /// `(c, lower, upper)` bounds on `phi(c 1)`.
    pub constants: Vec<(f64, f64, f64)>,
    /// `phi(X)` bounds against `<X, mu*> - phi*(mu*)` for the certificate `mu*`
    /// of each sampled claim: `(phi_lower, phi_upper, pairing)`.
    pub tightest: Vec<(f64, f64, f64)>,
}

impl BiconjReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

/// Slack for monotonicity and convexity assertions.
pub const SHAPE_SLACK: f64 = 1e-9;
/// Slack for the Fenchel inequality.
pub const FENCHEL_SLACK: f64 = 1e-7;

fn negate(prob: &Problem, x: &Claim) -> Result<Problem, SolverError> {
    let neg = Claim::new(prob.lattice(), x.values().iter().map(|v| -v).collect())?;
    prob.with_claim(neg)
}

fn check(name: impl Into<String>, margin: f64, slack: f64) -> Check {
    Check { name: name.into(), passed: margin >= -slack, margin }
}

/// `phi*(qQ) = D^alpha_v(qQ)`: an upper estimate from the convex inner solver.
pub fn conjugate_at(prob: &Problem, q: f64, martingale: &Measure) -> Result<f64, SolverError> {
    let conj = Conjugate::new(prob.utility().clone());
    let r: Vec<f64> = martingale.weights().iter().map(|w| q * w).collect();
    Ok(prob.ambiguity().convex_inner_min_bounds(&PerspectiveFn { conj: &conj, r: &r })?.value)
}

/// Runs the checks on `claims` (pairs are consecutive claims), on the given
/// dual-cone points `(q, Q)`, and on the constant claims `constants`.
pub fn biconjugate_check(
    prob: &Problem,
    claims: &[Claim],
    duals: &[(f64, Measure)],
    constants: &[f64],
) -> Result<BiconjReport, SolverError> {
    let lat = prob.lattice();
    let mut checks = Vec::new();
    // phi(X) = -U(-X): solve at -X
    let solved: Vec<(Problem, Solution)> = claims
        .iter()
        .map(|x| {
            let p = negate(prob, x)?;
            let s = solve(&p)?;
            Ok((p, s))
        })
        .collect::<Result<_, SolverError>>()?;

    for (i, pair) in solved.windows(2).enumerate() {
        let (pa, sa) = &pair[0];
        let (pb, sb) = &pair[1];
        let (xa, xb) = (claims[i].values(), claims[i + 1].values());
        // X v X' dominates X, so phi(X v X') >= phi(X): U(-(X v X')) <= U(-X)
        let hi: Vec<f64> = xa.iter().zip(xb).map(|(a, b)| -a.max(*b)).collect();
        let ph = prob.with_claim(Claim::new(lat, hi)?)?;
        let f_hi = evaluate_strategy(&ph, &sa.strategy)?.value;
        let f_a = evaluate_strategy(pa, &sa.strategy)?.value;
        checks.push(check(format!("monotone strategy pair {i}"), f_a - f_hi, SHAPE_SLACK));
        let sh = solve(&ph)?;
        checks.push(check(format!("monotone bounds pair {i}"), sa.upper() - sh.value, SHAPE_SLACK));
        // concavity of U at the midpoint with the averaged strategy
        let mid: Vec<f64> = xa.iter().zip(xb).map(|(a, b)| -0.5 * (a + b)).collect();
        let pm = prob.with_claim(Claim::new(lat, mid)?)?;
        let theta: Vec<f64> =
            sa.strategy.holdings().iter().zip(sb.strategy.holdings()).map(|(a, b)| 0.5 * (a + b)).collect();
        let f_mid = evaluate_strategy(&pm, &crate::lattice::Strategy::new(lat, theta)?)?.value;
        let f_b = evaluate_strategy(pb, &sb.strategy)?.value;
        checks.push(check(format!("convex strategy pair {i}"), f_mid - 0.5 * (f_a + f_b), SHAPE_SLACK));
    }

    let mut tightest = Vec::new();
    for (i, (_, s)) in solved.iter().enumerate() {
        let x = claims[i].values();
        let phi_lower = -s.upper();
        let phi_upper = -s.value;
        for (j, (q, big_q)) in duals.iter().enumerate() {
            let pairing: f64 = big_q.weights().iter().zip(x).map(|(w, x)| q * w * x).sum();
            let conj = conjugate_at(prob, *q, big_q)?;
            // phi(X) >= <X, mu> - phi*(mu); phi*(mu) is estimated from above
            checks.push(check(format!("fenchel claim {i} dual {j}"), phi_upper - (pairing - conj), FENCHEL_SLACK));
        }
        let c = &s.certificate;
        let pairing: f64 = c.martingale.weights().iter().zip(x).map(|(w, x)| c.q * w * x).sum();
        let conj = conjugate_at(prob, c.q, &c.martingale)?;
        tightest.push((phi_lower, phi_upper, pairing - conj));
    }

    let mut bounds = Vec::new();
    for &k in constants {
        let p = prob.with_claim(Claim::constant(lat, -k)?)?;
        let s = solve(&p)?;
        bounds.push((k, -s.upper(), -s.value));
    }
    for (i, w) in bounds.windows(2).enumerate() {
        checks.push(check(format!("constants increasing {i}"), w[1].2 - w[0].1, SHAPE_SLACK));
    }
    for (i, w) in bounds.windows(3).enumerate() {
        let (c0, c1, c2) = (w[0].0, w[1].0, w[2].0);
        let t = (c1 - c0) / (c2 - c0);
        // phi(c1) <= (1 - t) phi(c0) + t phi(c2)
        let margin = (1.0 - t) * w[0].2 + t * w[2].2 - w[1].1;
        checks.push(check(format!("constants convex {i}"), margin, SHAPE_SLACK));
    }
    Ok(BiconjReport { checks, constants: bounds, tightest })
}
