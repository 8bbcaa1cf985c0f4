//! Ambiguity sets of probability measures and their penalty functions.
//!
//! Every variant is a polytope of leaf measures, possibly lifted to transport
//! plans. [`PolytopeRep`] exposes that lifting so that solvers can embed the
//! set in their own linear programs; the oracles here cover the linear inner
//! problem `inf_P {E^P c + alpha(P)}` and its separable convex counterpart.

use std::sync::Arc;

use thiserror::Error;

use crate::lattice::{LatticeError, Measure, ScenarioLattice};
use crate::lp::{Basis, ColKey, LinearProgram, LpError, Relation};
use crate::transport::{self, CostMatrix, MetricParams, TransportError};
use crate::utility::{LeafConvex, UtilitySpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmbiguityError {
    #[error("invalid ambiguity specification: {0}")]
    InvalidSpec(String),
    #[error("measure or claim lives on a different lattice")]
    LatticeMismatch,
    #[error("the ambiguity set is empty")]
    InfeasibleSet,
    #[error("cost vector has {got} entries for {expected} leaves")]
    CostLength { expected: usize, got: usize },
    #[error("cost is not finite on leaf {0}")]
    NonFiniteCost(usize),
    #[error("LP failure: {0}")]
    LpFailure(#[from] LpError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("cutting planes stopped with bounds [{lower}, {upper}]")]
    NoConvergence { lower: f64, upper: f64 },
}

/// Moment bounds `E[S_t^c] <= C_t` (negative exponents) and `E[S_t^d] <= D_t`
/// (positive exponents) for t = 1..T.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSpec {
    pub negative_exponents: Vec<f64>,
    /// `negative_bounds[i][t - 1]`.
    pub negative_bounds: Vec<Vec<f64>>,
    pub positive_exponents: Vec<f64>,
    pub positive_bounds: Vec<Vec<f64>>,
    /// Apply the bounds to `M_t S_t` instead of `S_t`.
    pub undiscounted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AmbiguityKind {
    FiniteHull { generators: Vec<Measure> },
    MomentSet(MomentSpec),
    WassersteinBall { reference: Measure, radius: f64, metric: MetricParams },
    WassersteinPenalty { reference: Measure, weight: f64, metric: MetricParams },
}

/// Linear description of the set: variables `w >= 0` with cost `cost` (the
/// penalty, when linear in the lifting), rows, and the leaf map `P = M w`.
#[derive(Debug, Clone)]
pub struct PolytopeRep {
    pub n_vars: usize,
    pub cost: Vec<f64>,
    pub leaf_map: Vec<Vec<(usize, f64)>>,
    pub rows: Vec<(Vec<(usize, f64)>, Relation, f64)>,
}

impl PolytopeRep {
    /// Adds the variables and rows to `lp`; returns the index of the first variable.
    pub fn install(&self, lp: &mut LinearProgram, extra_cost: impl Fn(usize) -> f64) -> usize {
        let offset = lp.num_vars();
        for j in 0..self.n_vars {
            lp.add_var(self.cost[j] + extra_cost(j));
        }
        for (coeffs, rel, rhs) in &self.rows {
            let shifted: Vec<_> = coeffs.iter().map(|&(j, v)| (j + offset, v)).collect();
            lp.add_row(&shifted, *rel, *rhs);
        }
        offset
    }

    /// Linear objective coefficients on `w` induced by a per-leaf cost.
    pub fn pullback(&self, leaf_cost: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_vars];
        for (l, entries) in self.leaf_map.iter().enumerate() {
            for &(j, v) in entries {
                out[j] += leaf_cost[l] * v;
            }
        }
        out
    }

    pub fn leaf_weights(&self, w: &[f64]) -> Vec<f64> {
        self.leaf_map
            .iter()
            .map(|entries| entries.iter().map(|&(j, v)| v * w[j]).sum::<f64>().max(0.0))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    /// `inf_P {E^P c + alpha(P)}`.
    pub value: f64,
    pub measure: Measure,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct ConvexInnerResult {
    /// Best value found (an upper bound on the infimum).
    pub value: f64,
    /// Certified lower bound.
    pub lower: f64,
    pub measure: Measure,
    pub alpha: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Witness {
    /// Mixture weights over hull generators reproducing the measure.
    Mixture(Vec<f64>),
    /// Name and excess of the most violated constraint.
    Violation { constraint: String, excess: f64 },
    /// Moment constraints all satisfied; largest slack ratio used.
    Satisfied { max_ratio: f64 },
    /// Wasserstein distance to the reference.
    Distance(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub inside: bool,
    pub witness: Witness,
}

#[derive(Debug, Clone)]
pub struct AmbiguitySpec {
    lattice: Arc<ScenarioLattice>,
    kind: AmbiguityKind,
    costs: Option<Arc<CostMatrix>>,
    rep: PolytopeRep,
}

const KELLEY_MAX_ITERS: usize = 500;
const KELLEY_GAP: f64 = 1e-8;

impl AmbiguitySpec {
    pub fn new(lattice: Arc<ScenarioLattice>, kind: AmbiguityKind) -> Result<Self, AmbiguityError> {
        let fp = lattice.fingerprint();
        let on_lattice = |m: &Measure| {
            if m.fingerprint() == fp {
                Ok(())
            } else {
                Err(AmbiguityError::LatticeMismatch)
            }
        };
        let horizon = lattice.horizon();
        let costs = match &kind {
            AmbiguityKind::FiniteHull { generators } => {
                if generators.is_empty() {
                    return Err(AmbiguityError::InvalidSpec("finite hull needs at least one generator".into()));
                }
                generators.iter().try_for_each(on_lattice)?;
                None
            }
            AmbiguityKind::MomentSet(ms) => {
                validate_moments(ms, horizon)?;
                None
            }
            AmbiguityKind::WassersteinBall { reference, radius, metric } => {
                on_lattice(reference)?;
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(AmbiguityError::InvalidSpec(format!("radius must be > 0, got {radius}")));
                }
                Some(Arc::new(CostMatrix::new(&lattice, *metric)))
            }
            AmbiguityKind::WassersteinPenalty { reference, weight, metric } => {
                on_lattice(reference)?;
                if !(weight.is_finite() && *weight > 0.0) {
                    return Err(AmbiguityError::InvalidSpec(format!("weight must be > 0, got {weight}")));
                }
                Some(Arc::new(CostMatrix::new(&lattice, *metric)))
            }
        };
        let rep = build_rep(&lattice, &kind, costs.as_deref());
        let spec = AmbiguitySpec { lattice, kind, costs, rep };
        if matches!(spec.kind, AmbiguityKind::MomentSet(_)) {
            // phase-one feasibility check
            let mut lp = LinearProgram::new();
            spec.rep.install(&mut lp, |_| 0.0);
            match lp.solve() {
                Ok(_) => {}
                Err(LpError::Infeasible(_)) => return Err(AmbiguityError::InfeasibleSet),
                Err(e) => return Err(e.into()),
            }
        }
        Ok(spec)
    }

    pub fn lattice(&self) -> &Arc<ScenarioLattice> {
        &self.lattice
    }

    pub fn kind(&self) -> &AmbiguityKind {
        &self.kind
    }

    pub fn rep(&self) -> &PolytopeRep {
        &self.rep
    }

    pub fn cost_matrix(&self) -> Option<&CostMatrix> {
        self.costs.as_deref()
    }

    /// True when `alpha` vanishes identically on the set.
    pub fn has_zero_penalty(&self) -> bool {
        !matches!(self.kind, AmbiguityKind::WassersteinPenalty { .. })
    }

    fn check_cost(&self, cost: &[f64]) -> Result<(), AmbiguityError> {
        let n = self.lattice.num_leaves();
        if cost.len() != n {
            return Err(AmbiguityError::CostLength { expected: n, got: cost.len() });
        }
        if let Some(l) = cost.iter().position(|c| !c.is_finite()) {
            return Err(AmbiguityError::NonFiniteCost(l));
        }
        Ok(())
    }

    /// `inf_{P in set} {E^P cost + alpha(P)}` and an attaining measure.
    pub fn inner_min(&self, cost: &[f64]) -> Result<InnerResult, AmbiguityError> {
        self.check_cost(cost)?;
        let lat = &self.lattice;
        match &self.kind {
            AmbiguityKind::FiniteHull { generators } => {
                let mut best: Option<(f64, usize)> = None;
                for (k, g) in generators.iter().enumerate() {
                    let v: f64 = g.weights().iter().zip(cost).map(|(w, c)| w * c).sum();
                    if best.is_none_or(|(b, _)| v < b) {
                        best = Some((v, k));
                    }
                }
                let (value, k) = best.unwrap();
                Ok(InnerResult { value, measure: generators[k].clone(), alpha: 0.0 })
            }
            AmbiguityKind::WassersteinPenalty { reference, weight, .. } => {
                let costs = self.costs.as_ref().unwrap();
                let n = lat.num_leaves();
                let mut weights = vec![0.0; n];
                let (mut value, mut transport_cost) = (0.0, 0.0);
                for j in reference.support() {
                    let mut best = (f64::INFINITY, 0);
                    for (l, c) in cost.iter().enumerate() {
                        let v = c + weight * costs.cost(l, j);
                        if v < best.0 {
                            best = (v, l);
                        }
                    }
                    let pj = reference.weights()[j];
                    weights[best.1] += pj;
                    value += pj * best.0;
                    transport_cost += pj * costs.cost(best.1, j);
                }
                let measure = Measure::normalized(lat, weights)?;
                Ok(InnerResult { value, measure, alpha: weight * transport_cost })
            }
            _ => {
                let mut lp = LinearProgram::new();
                let pulled = self.rep.pullback(cost);
                self.rep.install(&mut lp, |j| pulled[j]);
                let sol = lp.solve().map_err(|e| match e {
                    LpError::Infeasible(_) => AmbiguityError::InfeasibleSet,
                    e => e.into(),
                })?;
                let measure = Measure::normalized(lat, self.rep.leaf_weights(&sol.x))?;
                Ok(InnerResult { value: sol.objective, measure, alpha: 0.0 })
            }
        }
    }

    /// Penalty of a measure: zero or `+inf` for indicator-type sets,
    /// `eta W_p(P, P*)^p` for the Wasserstein penalty.
    pub fn alpha(&self, p: &Measure) -> Result<f64, AmbiguityError> {
        if p.fingerprint() != self.lattice.fingerprint() {
            return Err(AmbiguityError::LatticeMismatch);
        }
        match &self.kind {
            AmbiguityKind::WassersteinPenalty { reference, weight, .. } => {
                let w = transport::wasserstein_with_costs(self.costs.as_ref().unwrap(), p, reference)?;
                Ok(weight * w.cost)
            }
            _ => Ok(if self.contains(p, 1e-9)?.inside { 0.0 } else { f64::INFINITY }),
        }
    }

    pub fn contains(&self, p: &Measure, tol: f64) -> Result<Membership, AmbiguityError> {
        if p.fingerprint() != self.lattice.fingerprint() {
            return Err(AmbiguityError::LatticeMismatch);
        }
        let lat = &self.lattice;
        match &self.kind {
            AmbiguityKind::FiniteHull { generators } => {
                if let Some(k) = generators.iter().position(|g| g.weights() == p.weights()) {
                    let mut mix = vec![0.0; generators.len()];
                    mix[k] = 1.0;
                    return Ok(Membership { inside: true, witness: Witness::Mixture(mix) });
                }
                // min L1 residual of sum_k lambda_k P_k - P
                let n = lat.num_leaves();
                let mut lp = LinearProgram::new();
                let lam: Vec<usize> = generators.iter().map(|_| lp.add_var(0.0)).collect();
                let plus: Vec<usize> = (0..n).map(|_| lp.add_var(1.0)).collect();
                let minus: Vec<usize> = (0..n).map(|_| lp.add_var(1.0)).collect();
                for l in 0..n {
                    let mut coeffs: Vec<_> =
                        generators.iter().enumerate().map(|(k, g)| (lam[k], g.weights()[l])).collect();
                    coeffs.push((plus[l], 1.0));
                    coeffs.push((minus[l], -1.0));
                    lp.add_row(&coeffs, Relation::Eq, p.weights()[l]);
                }
                let ones: Vec<_> = lam.iter().map(|&v| (v, 1.0)).collect();
                lp.add_row(&ones, Relation::Eq, 1.0);
                let sol = lp.solve()?;
                let mix: Vec<f64> = lam.iter().map(|&v| sol.x[v]).collect();
                if sol.objective <= tol {
                    Ok(Membership { inside: true, witness: Witness::Mixture(mix) })
                } else {
                    Ok(Membership {
                        inside: false,
                        witness: Witness::Violation {
                            constraint: "distance to the hull (L1)".into(),
                            excess: sol.objective,
                        },
                    })
                }
            }
            AmbiguityKind::MomentSet(ms) => {
                let mut worst: Option<(String, f64)> = None;
                let mut max_ratio = 0.0f64;
                let groups = [
                    (&ms.negative_exponents, &ms.negative_bounds),
                    (&ms.positive_exponents, &ms.positive_bounds),
                ];
                for (exps, bounds) in groups {
                    for (i, &e) in exps.iter().enumerate() {
                        for t in 1..=lat.horizon() {
                            let m = moment(lat, p.weights(), t, e, ms.undiscounted);
                            let bound = bounds[i][t - 1];
                            max_ratio = max_ratio.max(m / bound);
                            let excess = m - bound;
                            if excess > tol && worst.as_ref().is_none_or(|w| excess > w.1) {
                                worst = Some((format!("E[S_{t}^{e}] <= {bound}"), excess));
                            }
                        }
                    }
                }
                Ok(match worst {
                    Some((constraint, excess)) => {
                        Membership { inside: false, witness: Witness::Violation { constraint, excess } }
                    }
                    None => Membership { inside: true, witness: Witness::Satisfied { max_ratio } },
                })
            }
            AmbiguityKind::WassersteinBall { reference, radius, .. } => {
                let w = transport::wasserstein_with_costs(self.costs.as_ref().unwrap(), p, reference)?;
                Ok(Membership { inside: w.value <= radius + tol, witness: Witness::Distance(w.value) })
            }
            AmbiguityKind::WassersteinPenalty { reference, .. } => {
                let w = transport::wasserstein_with_costs(self.costs.as_ref().unwrap(), p, reference)?;
                Ok(Membership { inside: true, witness: Witness::Distance(w.value) })
            }
        }
    }

    /// A member of the set whose support contains the support of every member.
    pub fn max_support_member(&self) -> Result<Measure, AmbiguityError> {
        let lat = &self.lattice;
        let n = lat.num_leaves();
        match &self.kind {
            AmbiguityKind::FiniteHull { generators } => {
                let mut w = vec![0.0; n];
                for g in generators {
                    for (a, b) in w.iter_mut().zip(g.weights()) {
                        *a += b / generators.len() as f64;
                    }
                }
                Ok(Measure::normalized(lat, w)?)
            }
            AmbiguityKind::MomentSet(_) => {
                // average of the per-leaf maximizers of P(leaf)
                let mut acc = vec![0.0; n];
                for l in 0..n {
                    let mut cost = vec![0.0; n];
                    cost[l] = -1.0;
                    let r = self.inner_min(&cost)?;
                    for (a, b) in acc.iter_mut().zip(r.measure.weights()) {
                        *a += b / n as f64;
                    }
                }
                Ok(Measure::normalized(lat, acc)?)
            }
            AmbiguityKind::WassersteinBall { reference, radius, metric } => {
                let uniform = Measure::uniform(lat);
                let w = transport::wasserstein_with_costs(self.costs.as_ref().unwrap(), &uniform, reference)?;
                let tau = if w.cost > 0.0 { (0.5 * radius.powf(metric.p) / w.cost).min(0.5) } else { 0.5 };
                let mix = reference
                    .weights()
                    .iter()
                    .zip(uniform.weights())
                    .map(|(a, b)| (1.0 - tau) * a + tau * b)
                    .collect();
                Ok(Measure::normalized(lat, mix)?)
            }
            AmbiguityKind::WassersteinPenalty { .. } => Ok(Measure::uniform(lat)),
        }
    }

    /// `inf_P {sum_l f_l(P_l) + alpha(P)}`; fails with `NoConvergence` when the
    /// cutting-plane loop stops before the gap closes.
    pub fn convex_inner_min(&self, f: &dyn LeafConvex) -> Result<ConvexInnerResult, AmbiguityError> {
        let res = self.convex_inner_min_bounds(f)?;
        if res.converged {
            Ok(res)
        } else {
            Err(AmbiguityError::NoConvergence { lower: res.lower, upper: res.value })
        }
    }

    /// Like [`Self::convex_inner_min`] but returns the bound pair even without convergence.
    pub fn convex_inner_min_bounds(&self, f: &dyn LeafConvex) -> Result<ConvexInnerResult, AmbiguityError> {
        let lat = &self.lattice;
        let n = lat.num_leaves();
        let eval = |weights: &[f64]| -> f64 { (0..n).map(|l| f.value(l, weights[l])).sum() };

        if let AmbiguityKind::FiniteHull { generators } = &self.kind {
            if generators.len() == 1 {
                let value = eval(generators[0].weights());
                return Ok(ConvexInnerResult {
                    value,
                    lower: value,
                    measure: generators[0].clone(),
                    alpha: 0.0,
                    iterations: 0,
                    converged: true,
                });
            }
        }

        let start = self.max_support_member()?;
        for l in 0..n {
            if start.weights()[l] == 0.0 && f.value(l, 0.0) == f64::INFINITY {
                // every member vanishes on this leaf
                return Ok(ConvexInnerResult {
                    value: f64::INFINITY,
                    lower: f64::INFINITY,
                    measure: start,
                    alpha: 0.0,
                    iterations: 0,
                    converged: true,
                });
            }
        }

        // t_l = tau_l + floor_l with tau_l >= 0, floor_l a lower bound of f_l on [0, 1]
        let mut cuts: Vec<KelleyCut> = Vec::new();
        let mut eps = vec![1e-3; n];
        let mut floors = vec![0.0; n];
        for l in 0..n {
            let p = start.weights()[l];
            let p = if p > 0.0 || f.value(l, 0.0).is_finite() { p } else { eps[l] };
            let (a, b) = f.cut(l, p);
            floors[l] = b.min(a + b);
            cuts.push(KelleyCut { leaf: l, slope: a, intercept: b, idle: 0 });
        }

        // vertices can miss leaves the objective needs; the max-support member
        // and mixtures with it keep a finite incumbent
        let penalized = matches!(self.kind, AmbiguityKind::WassersteinPenalty { .. });
        let start_alpha = if penalized { self.alpha(&start)? } else { 0.0 };
        let start_total = eval(start.weights()) + start_alpha;
        let mut best: Option<(f64, Vec<f64>, f64)> =
            start_total.is_finite().then(|| (start_total, start.weights().to_vec(), start_alpha));
        let mut lower = f64::NEG_INFINITY;
        let mut basis: Option<Basis> = None;
        let mut prev_rows: Vec<Option<usize>> = Vec::new();
        let mut iterations = 0;
        let mut converged = false;
        while iterations < KELLEY_MAX_ITERS {
            iterations += 1;
            let mut lp = LinearProgram::new();
            self.rep.install(&mut lp, |_| 0.0);
            let rep_rows = lp.num_rows();
            let tau: Vec<usize> = (0..n).map(|_| lp.add_var(1.0)).collect();
            let mut cut_rows = Vec::with_capacity(cuts.len());
            for cut in &cuts {
                let mut coeffs = vec![(tau[cut.leaf], 1.0)];
                coeffs.extend(self.rep.leaf_map[cut.leaf].iter().map(|&(j, v)| (j, -cut.slope * v)));
                cut_rows.push(lp.add_row(&coeffs, Relation::Ge, cut.intercept - floors[cut.leaf]));
            }
            let hint = basis.take().map(|b| remap_basis(b, rep_rows, &prev_rows));
            let sol = match lp.solve_warm(hint.as_ref()) {
                Ok(s) => s,
                Err(LpError::Infeasible(_)) => return Err(AmbiguityError::InfeasibleSet),
                Err(e) => return Err(e.into()),
            };
            let floor_sum: f64 = floors.iter().sum();
            lower = lower.max(sol.objective + floor_sum);
            let w = &sol.x[..self.rep.n_vars];
            let weights = self.rep.leaf_weights(w);
            let lin: f64 = self.rep.cost.iter().zip(w).map(|(c, x)| c * x).sum();
            let values: Vec<f64> = (0..n).map(|l| f.value(l, weights[l])).collect();
            let total = values.iter().sum::<f64>() + lin;
            if total.is_finite() && best.as_ref().is_none_or(|b| total < b.0) {
                best = Some((total, weights.clone(), lin));
            } else if !total.is_finite() {
                // alpha is convex, so the averaged linear cost bounds it from above
                let mix: Vec<f64> = weights.iter().zip(start.weights()).map(|(a, b)| 0.5 * (a + b)).collect();
                let mix_lin = 0.5 * (lin + start_alpha);
                let mix_total = eval(&mix) + mix_lin;
                if mix_total.is_finite() && best.as_ref().is_none_or(|b| mix_total < b.0) {
                    best = Some((mix_total, mix, mix_lin));
                }
            }
            let upper = best.as_ref().map_or(f64::INFINITY, |b| b.0);
            if upper - lower <= KELLEY_GAP * (1.0 + upper.abs()) {
                converged = true;
                break;
            }

            // age the pool, then add violated cuts
            for (cut, &row) in cuts.iter_mut().zip(&cut_rows) {
                let tight = sol.basis.0.iter().all(|k| *k != ColKey::Slack(row));
                cut.idle = if tight { 0 } else { cut.idle + 1 };
            }
            let mut added = false;
            let mut new_cuts = Vec::new();
            for l in 0..n {
                let model = sol.x[tau[l]] + floors[l];
                if values[l] <= model + 1e-12 * (1.0 + values[l].abs()) {
                    continue;
                }
                // cuts taken at round-off dust near an infinite f(0) are too steep
                // for the LP; step the linearization point down gradually
                let p = if weights[l] >= eps[l] || f.value(l, 0.0).is_finite() {
                    weights[l]
                } else {
                    eps[l] *= 0.1;
                    eps[l] * 10.0
                };
                let (a, b) = f.cut(l, p);
                new_cuts.push(KelleyCut { leaf: l, slope: a, intercept: b, idle: 0 });
                added = true;
            }
            if !added {
                // the model is exact at the iterate; the LP bound is then tight
                lower = lower.max(upper.min(total));
                converged = upper - lower <= KELLEY_GAP * (1.0 + upper.abs());
                if converged {
                    break;
                }
            }
            // drop cuts that have been slack for a while, keeping a few per leaf
            let mut per_leaf = vec![0usize; n];
            for c in &cuts {
                per_leaf[c.leaf] += 1;
            }
            prev_rows = Vec::with_capacity(cuts.len());
            let mut kept = Vec::with_capacity(cuts.len() + new_cuts.len());
            let mut next_row = rep_rows;
            for (cut, &row) in cuts.into_iter().zip(&cut_rows) {
                let slack_basic = sol.basis.0.contains(&ColKey::Slack(row));
                if cut.idle >= 8 && slack_basic && per_leaf[cut.leaf] > 3 {
                    per_leaf[cut.leaf] -= 1;
                    prev_rows.push(None);
                } else {
                    prev_rows.push(Some(next_row));
                    next_row += 1;
                    kept.push(cut);
                }
            }
            kept.extend(new_cuts);
            cuts = kept;
            basis = Some(sol.basis);
        }

        let (value, weights, alpha) = match best {
            Some(b) => b,
            None => return Err(AmbiguityError::NoConvergence { lower, upper: f64::INFINITY }),
        };
        let measure = Measure::normalized(lat, weights)?;
        let alpha = match &self.kind {
            AmbiguityKind::WassersteinPenalty { .. } => self.alpha(&measure)?.min(alpha),
            _ => 0.0,
        };
        Ok(ConvexInnerResult { value, lower: lower.min(value), measure, alpha, iterations, converged })
    }

    /// Numerical companion of the growth condition used for the Wasserstein
    /// penalty: for each sampled measure, the constant
    /// `c = -E^P u(-beta(Z)) / (1 + W_p(P, P*)^((p+q)/2))` with `beta(x) = x^((p+q)/(2q))`.
    pub fn growth_report(
        &self,
        utility: &UtilitySpec,
        q: f64,
        samples: &[Measure],
    ) -> Result<GrowthReport, AmbiguityError> {
        let (reference, metric) = match &self.kind {
            AmbiguityKind::WassersteinPenalty { reference, metric, .. }
            | AmbiguityKind::WassersteinBall { reference, metric, .. } => (reference, metric),
            _ => return Err(AmbiguityError::InvalidSpec("growth report needs a Wasserstein variant".into())),
        };
        if !(q > 0.0 && q < metric.p) {
            return Err(AmbiguityError::InvalidSpec(format!("q must lie in (0, p), got {q}")));
        }
        let lat = &self.lattice;
        let z = lat
            .z_weight(crate::lattice::ZVariant::TransportAnchored { rho: metric.rho, kappa: metric.kappa })?;
        let exponent = (metric.p + q) / (2.0 * q);
        let costs = self.costs.as_ref().unwrap();
        let mut constants = Vec::with_capacity(samples.len());
        for p in samples {
            let eu: f64 = p
                .weights()
                .iter()
                .enumerate()
                .map(|(l, w)| if *w > 0.0 { w * utility.eval_u(l, -z.values()[l].powf(exponent)) } else { 0.0 })
                .sum();
            let wp = transport::wasserstein_with_costs(costs, p, reference)?.value;
            constants.push(-eu / (1.0 + wp.powf((metric.p + q) / 2.0)));
        }
        let worst = constants.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // polynomial growth of u on a grid, the hypothesis behind the bound
        let bounded = (1..=6).all(|k| {
            let x = -(10f64.powi(k));
            (0..lat.num_leaves()).all(|l| (utility.eval_u(l, x) / (1.0 + x.abs().powf(q))).abs() < 1e6)
        });
        Ok(GrowthReport { q, constants, worst, polynomial_growth: bounded })
    }
}

#[derive(Debug, Clone)]
pub struct GrowthReport {
    pub q: f64,
    /// Smallest admissible constant for each sample.
    pub constants: Vec<f64>,
    pub worst: f64,
    /// Whether `u(x) / (1 + |x|^q)` looked bounded on `x = -10^k`, k = 1..6.
    pub polynomial_growth: bool,
}

#[derive(Debug, Clone)]
struct KelleyCut {
    leaf: usize,
    slope: f64,
    intercept: f64,
    idle: usize,
}

fn remap_basis(basis: Basis, rep_rows: usize, prev_rows: &[Option<usize>]) -> Basis {
    let keys = basis
        .0
        .into_iter()
        .filter_map(|k| match k {
            ColKey::Slack(r) if r >= rep_rows => prev_rows.get(r - rep_rows).copied().flatten().map(ColKey::Slack),
            other => Some(other),
        })
        .collect();
    Basis(keys)
}

fn validate_moments(ms: &MomentSpec, horizon: usize) -> Result<(), AmbiguityError> {
    let bad = |msg: String| Err(AmbiguityError::InvalidSpec(msg));
    if ms.negative_exponents.is_empty() || ms.positive_exponents.is_empty() {
        return bad("moment set needs negative and positive exponents".into());
    }
    if ms.negative_exponents.iter().any(|c| !(c.is_finite() && *c < 0.0)) {
        return bad("negative exponents must be < 0".into());
    }
    if ms.positive_exponents.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return bad("positive exponents must be > 0".into());
    }
    if !(ms.negative_exponents.iter().copied().fold(f64::INFINITY, f64::min) < -1.0) {
        return bad("the smallest negative exponent must be < -1".into());
    }
    if !(ms.positive_exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max) > 1.0) {
        return bad("the largest positive exponent must be > 1".into());
    }
    for (exps, bounds, name) in [
        (&ms.negative_exponents, &ms.negative_bounds, "negative"),
        (&ms.positive_exponents, &ms.positive_bounds, "positive"),
    ] {
        if bounds.len() != exps.len() {
            return bad(format!("{name} bounds: one row per exponent expected"));
        }
        for row in bounds {
            if row.len() != horizon {
                return bad(format!("{name} bounds: one entry per time 1..{horizon} expected"));
            }
            if row.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
                return bad(format!("{name} bounds must be > 0"));
            }
        }
    }
    Ok(())
}

/// `E^P[X_t^e]` where `X_t` is `S_t` or `M_t S_t`.
pub fn moment(lat: &ScenarioLattice, weights: &[f64], t: usize, e: f64, undiscounted: bool) -> f64 {
    (0..lat.num_leaves())
        .map(|l| weights[l] * moment_base(lat, l, t, undiscounted).powf(e))
        .sum()
}

fn moment_base(lat: &ScenarioLattice, leaf: usize, t: usize, undiscounted: bool) -> f64 {
    let node = lat.node(lat.path(leaf)[t]);
    if undiscounted {
        node.m * node.s
    } else {
        node.s
    }
}

fn build_rep(lat: &ScenarioLattice, kind: &AmbiguityKind, costs: Option<&CostMatrix>) -> PolytopeRep {
    let n = lat.num_leaves();
    match kind {
        AmbiguityKind::FiniteHull { generators } => {
            let k = generators.len();
            let leaf_map = (0..n)
                .map(|l| (0..k).map(|g| (g, generators[g].weights()[l])).filter(|e| e.1 != 0.0).collect())
                .collect();
            let rows = vec![((0..k).map(|g| (g, 1.0)).collect(), Relation::Eq, 1.0)];
            PolytopeRep { n_vars: k, cost: vec![0.0; k], leaf_map, rows }
        }
        AmbiguityKind::MomentSet(ms) => {
            let mut rows = vec![((0..n).map(|l| (l, 1.0)).collect(), Relation::Eq, 1.0)];
            for (exps, bounds) in
                [(&ms.negative_exponents, &ms.negative_bounds), (&ms.positive_exponents, &ms.positive_bounds)]
            {
                for (i, &e) in exps.iter().enumerate() {
                    for t in 1..=lat.horizon() {
                        let coeffs = (0..n).map(|l| (l, moment_base(lat, l, t, ms.undiscounted).powf(e))).collect();
                        rows.push((coeffs, Relation::Le, bounds[i][t - 1]));
                    }
                }
            }
            PolytopeRep { n_vars: n, cost: vec![0.0; n], leaf_map: (0..n).map(|l| vec![(l, 1.0)]).collect(), rows }
        }
        AmbiguityKind::WassersteinBall { reference, radius, metric } => {
            let costs = costs.unwrap();
            let mut rep = transport_rep(n, reference, |_, _| 0.0);
            let support = reference.support();
            let ns = support.len();
            let budget = (0..n)
                .flat_map(|l| support.iter().enumerate().map(move |(jj, &j)| (l * ns + jj, costs.cost(l, j))))
                .collect();
            rep.rows.push((budget, Relation::Le, radius.powf(metric.p)));
            rep
        }
        AmbiguityKind::WassersteinPenalty { reference, weight, .. } => {
            let costs = costs.unwrap();
            transport_rep(n, reference, |l, j| weight * costs.cost(l, j))
        }
    }
}

/// Plans `pi[l, j]` from every leaf `l` to the support points `j` of the reference.
fn transport_rep(n: usize, reference: &Measure, cost: impl Fn(usize, usize) -> f64) -> PolytopeRep {
    let support = reference.support();
    let ns = support.len();
    let mut costs = Vec::with_capacity(n * ns);
    for l in 0..n {
        for &j in &support {
            costs.push(cost(l, j));
        }
    }
    let rows = support
        .iter()
        .enumerate()
        .map(|(jj, &j)| ((0..n).map(|l| (l * ns + jj, 1.0)).collect(), Relation::Eq, reference.weights()[j]))
        .collect();
    let leaf_map = (0..n).map(|l| (0..ns).map(|jj| (l * ns + jj, 1.0)).collect()).collect();
    PolytopeRep { n_vars: n * ns, cost: costs, leaf_map, rows }
}
