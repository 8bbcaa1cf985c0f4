//! Arbitrage detection, equivalent martingale measures, the no-arbitrage
//! condition over ambiguity sets, and the perturbation that restores it.

use std::sync::Arc;

use thiserror::Error;

use crate::ambiguity::{AmbiguityError, AmbiguityKind, AmbiguitySpec};
use crate::lattice::{LatticeError, Measure, NodeSpec, ScenarioLattice, Strategy};
use crate::lp::{LinearProgram, LpError, Relation};
use crate::transport::{self, TransportError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArbitrageError {
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("LP failure: {0}")]
    LpFailure(#[from] LpError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Ambiguity(#[from] AmbiguityError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Optimal total gain below which the arbitrage LP reports no arbitrage.
const ARBITRAGE_TOL: f64 = 1e-9;
/// Smallest EMM weight accepted as strictly positive.
const EMM_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ArbitrageCheck {
    pub arbitrage: bool,
    /// Optimal value of `max sum_l wealth_l` over the box.
    pub gain: f64,
    pub witness: Option<Strategy>,
}

/// Nodes visited by at least one path in `support`.
fn reached_nodes(lat: &ScenarioLattice, support: &[usize]) -> Vec<bool> {
    let mut reached = vec![false; lat.num_nodes()];
    for &l in support {
        for &i in lat.path(l) {
            reached[i] = true;
        }
    }
    reached
}

/// Looks for a strategy in `[-1, 1]` per node with nonnegative gains on the
/// support of `p` and positive total gain.
pub fn admits_arbitrage(lat: &ScenarioLattice, p: &Measure) -> Result<ArbitrageCheck, ArbitrageError> {
    if !p.is_on(lat) {
        return Err(LatticeError::LatticeMismatch.into());
    }
    let support = p.support();
    let nt = lat.num_non_terminal();
    let reached = reached_nodes(lat, &support);
    let mut lp = LinearProgram::new();
    let plus: Vec<usize> = (0..nt).map(|_| lp.add_var(0.0)).collect();
    let minus: Vec<usize> = (0..nt).map(|_| lp.add_var(0.0)).collect();
    let wealth: Vec<usize> = support.iter().map(|_| lp.add_var(-1.0)).collect();
    for k in 0..nt {
        if reached[lat.non_terminal()[k]] {
            lp.add_row(&[(plus[k], 1.0)], Relation::Le, 1.0);
            lp.add_row(&[(minus[k], 1.0)], Relation::Le, 1.0);
        }
    }
    for (i, &l) in support.iter().enumerate() {
        let mut coeffs = vec![(wealth[i], 1.0)];
        for &(k, d) in lat.increments(l) {
            coeffs.push((plus[k], -d));
            coeffs.push((minus[k], d));
        }
        lp.add_row(&coeffs, Relation::Eq, 0.0);
    }
    let sol = lp.solve()?;
    let gain = -sol.objective;
    let scale = 1.0 + lat.smallest_increment().map_or(0.0, |_| max_increment(lat));
    let arbitrage = gain > ARBITRAGE_TOL * scale;
    let witness = if arbitrage {
        let holdings = (0..nt)
            .map(|k| if reached[lat.non_terminal()[k]] { sol.x[plus[k]] - sol.x[minus[k]] } else { 0.0 })
            .collect();
        Some(Strategy::new(lat, holdings)?)
    } else {
        None
    };
    Ok(ArbitrageCheck { arbitrage, gain, witness })
}

fn max_increment(lat: &ScenarioLattice) -> f64 {
    (0..lat.num_leaves())
        .flat_map(|l| lat.increments(l).iter().map(|&(_, d)| d.abs()))
        .fold(0.0, f64::max)
}

/// A martingale measure equivalent to `p` (same support), or `None` when `p`
/// admits arbitrage. Maximizes the smallest weight on the support.
pub fn find_emm(lat: &ScenarioLattice, p: &Measure) -> Result<Option<Measure>, ArbitrageError> {
    if !p.is_on(lat) {
        return Err(LatticeError::LatticeMismatch.into());
    }
    let residual = lat.martingale_residuals(p.weights());
    if residual.iter().all(|r| r.abs() <= 1e-14) {
        return Ok(Some(p.clone()));
    }
    let support = p.support();
    let reached = reached_nodes(lat, &support);
    let mut lp = LinearProgram::new();
    let q: Vec<usize> = support.iter().map(|_| lp.add_var(0.0)).collect();
    let delta = lp.add_var(-1.0);
    lp.add_row(&q.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(), Relation::Eq, 1.0);
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); lat.num_non_terminal()];
    for (i, &l) in support.iter().enumerate() {
        for &(k, d) in lat.increments(l) {
            rows[k].push((q[i], d));
        }
    }
    for (k, coeffs) in rows.iter().enumerate() {
        if reached[lat.non_terminal()[k]] && !coeffs.is_empty() {
            lp.add_row(coeffs, Relation::Eq, 0.0);
        }
    }
    for &v in &q {
        lp.add_row(&[(v, 1.0), (delta, -1.0)], Relation::Ge, 0.0);
    }
    let sol = match lp.solve() {
        Ok(s) => s,
        Err(LpError::Infeasible(_)) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    if sol.x[delta] <= EMM_TOL {
        return Ok(None);
    }
    let mut weights = vec![0.0; lat.num_leaves()];
    for (i, &l) in support.iter().enumerate() {
        weights[l] = sol.x[q[i]];
    }
    Ok(Some(Measure::normalized(lat, weights)?))
}

/// Largest set of leaves inside `allowed` carrying a martingale measure with
/// exactly that support, with such a measure.
pub fn max_support_martingale(
    lat: &ScenarioLattice,
    allowed: &[bool],
) -> Result<Option<(Vec<bool>, Measure)>, ArbitrageError> {
    let leaves: Vec<usize> = (0..lat.num_leaves()).filter(|&l| allowed[l]).collect();
    if leaves.is_empty() {
        return Ok(None);
    }
    // maximize sum z_l with z_l <= min(1, Q_l) over the martingale cone
    let mut lp = LinearProgram::new();
    let q: Vec<usize> = leaves.iter().map(|_| lp.add_var(0.0)).collect();
    let z: Vec<usize> = leaves.iter().map(|_| lp.add_var(-1.0)).collect();
    for i in 0..leaves.len() {
        lp.add_row(&[(z[i], 1.0)], Relation::Le, 1.0);
        lp.add_row(&[(z[i], 1.0), (q[i], -1.0)], Relation::Le, 0.0);
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); lat.num_non_terminal()];
    for (i, &l) in leaves.iter().enumerate() {
        for &(k, d) in lat.increments(l) {
            rows[k].push((q[i], d));
        }
    }
    for coeffs in rows.iter().filter(|c| !c.is_empty()) {
        lp.add_row(coeffs, Relation::Eq, 0.0);
    }
    let sol = lp.solve()?;
    let mut support = vec![false; lat.num_leaves()];
    let mut weights = vec![0.0; lat.num_leaves()];
    for (i, &l) in leaves.iter().enumerate() {
        if sol.x[z[i]] > 0.5 {
            support[l] = true;
            weights[l] = sol.x[q[i]];
        }
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Ok(None);
    }
    // the z-rows pin weights on the support; drop tiny leftovers elsewhere
    let measure = Measure::normalized(lat, weights)?;
    Ok(Some((support, measure)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum NaStatus {
    Holds,
    Fails,
    Undetermined,
}

#[derive(Debug, Clone)]
pub struct NaEntry {
    pub label: String,
    pub status: NaStatus,
    /// Perturbation size used, when the witness came from the perturbation.
    pub epsilon: Option<f64>,
    /// Dominating arbitrage-free measure, on `lattice`.
    pub witness: Option<Measure>,
    /// Set when the witness lives on an enlarged lattice.
    pub lattice: Option<Arc<ScenarioLattice>>,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct NaReport {
    pub entries: Vec<NaEntry>,
}

impl NaReport {
    /// `Some(true)` when every entry holds, `Some(false)` when one fails,
    /// `None` when something is undetermined.
    pub fn verdict(&self) -> Option<bool> {
        if self.entries.iter().any(|e| e.status == NaStatus::Fails) {
            Some(false)
        } else if self.entries.iter().all(|e| e.status == NaStatus::Holds) {
            Some(true)
        } else {
            None
        }
    }
}

/// Perturbation sizes tried by [`check_na`], largest first.
pub const EPSILON_GRID: [f64; 9] = [0.5, 0.1, 0.05, 0.01, 0.005, 0.001, 1e-4, 5e-5, 1e-5];

pub fn check_na(amb: &AmbiguitySpec) -> Result<NaReport, ArbitrageError> {
    let lat = amb.lattice().clone();
    match amb.kind() {
        AmbiguityKind::FiniteHull { generators } => check_na_hull(&lat, generators),
        _ => {
            let member = amb.max_support_member()?;
            let label = "max-support member".to_string();
            if !admits_arbitrage(&lat, &member)?.arbitrage {
                return Ok(NaReport {
                    entries: vec![NaEntry {
                        label,
                        status: NaStatus::Holds,
                        epsilon: None,
                        witness: Some(member),
                        lattice: None,
                        detail: "the member dominating the whole set is arbitrage-free".into(),
                    }],
                });
            }
            for &eps in &EPSILON_GRID {
                let pert = perturb_na(&lat, &member, eps)?;
                if admits_arbitrage(&pert.lattice, &pert.measure)?.arbitrage {
                    continue;
                }
                if perturbed_member(amb, &pert)? {
                    return Ok(NaReport {
                        entries: vec![NaEntry {
                            label,
                            status: NaStatus::Holds,
                            epsilon: Some(eps),
                            witness: Some(pert.measure),
                            lattice: Some(pert.lattice),
                            detail: "perturbed measure is a member and arbitrage-free on the enlarged lattice"
                                .into(),
                        }],
                    });
                }
            }
            Ok(NaReport {
                entries: vec![NaEntry {
                    label,
                    status: NaStatus::Undetermined,
                    epsilon: None,
                    witness: None,
                    lattice: None,
                    detail: "no perturbation size on the grid produced a member".into(),
                }],
            })
        }
    }
}

/// Membership of a perturbed measure in the set transported to the enlarged lattice.
fn perturbed_member(amb: &AmbiguitySpec, pert: &Perturbed) -> Result<bool, ArbitrageError> {
    let lat = amb.lattice();
    let new = &pert.lattice;
    Ok(match amb.kind() {
        AmbiguityKind::FiniteHull { .. } => false,
        AmbiguityKind::MomentSet(ms) => {
            let groups = [(&ms.negative_exponents, &ms.negative_bounds), (&ms.positive_exponents, &ms.positive_bounds)];
            groups.iter().all(|(exps, bounds)| {
                exps.iter().enumerate().all(|(i, &e)| {
                    (1..=new.horizon()).all(|t| {
                        crate::ambiguity::moment(new, pert.measure.weights(), t, e, ms.undiscounted)
                            <= bounds[i][t - 1] + 1e-12
                    })
                })
            })
        }
        AmbiguityKind::WassersteinBall { reference, radius, metric } => {
            let pts_new: Vec<_> = (0..new.num_leaves()).map(|l| new.path_point(l)).collect();
            let pts_ref: Vec<_> = (0..lat.num_leaves()).map(|l| lat.path_point(l)).collect();
            let w = transport::wasserstein_between(
                *metric,
                &pts_new,
                pert.measure.weights(),
                &pts_ref,
                reference.weights(),
            )?;
            w.value <= *radius
        }
        AmbiguityKind::WassersteinPenalty { .. } => true,
    })
}

fn check_na_hull(lat: &Arc<ScenarioLattice>, generators: &[Measure]) -> Result<NaReport, ArbitrageError> {
    let k = generators.len();
    let supports: Vec<Vec<usize>> = generators.iter().map(|g| g.support()).collect();
    let mut active = vec![true; k];
    // shrink to the largest family whose union support carries a full-support
    // martingale measure
    loop {
        let mut allowed = vec![false; lat.num_leaves()];
        for g in (0..k).filter(|&g| active[g]) {
            for &l in &supports[g] {
                allowed[l] = true;
            }
        }
        let found = max_support_martingale(lat, &allowed)?;
        let covered = |g: usize| found.as_ref().is_some_and(|(s, _)| supports[g].iter().all(|&l| s[l]));
        let next: Vec<bool> = (0..k).map(|g| active[g] && covered(g)).collect();
        if next == active || next.iter().all(|a| !a) {
            active = next;
            break;
        }
        active = next;
    }
    let mixture = if active.iter().any(|&a| a) {
        let count = active.iter().filter(|&&a| a).count() as f64;
        let mut w = vec![0.0; lat.num_leaves()];
        for g in (0..k).filter(|&g| active[g]) {
            for (a, b) in w.iter_mut().zip(generators[g].weights()) {
                *a += b / count;
            }
        }
        Some(Measure::normalized(lat, w)?)
    } else {
        None
    };
    let mut entries = Vec::with_capacity(k);
    for g in 0..k {
        let entry = if active[g] {
            let witness = mixture.clone().unwrap();
            // re-check with the arbitrage LP rather than trusting the fixed point
            let clean = !admits_arbitrage(lat, &witness)?.arbitrage;
            NaEntry {
                label: format!("generator {g}"),
                status: if clean { NaStatus::Holds } else { NaStatus::Undetermined },
                epsilon: None,
                witness: Some(witness),
                lattice: None,
                detail: "dominated by the mixture of all admissible generators".into(),
            }
        } else {
            NaEntry {
                label: format!("generator {g}"),
                status: NaStatus::Fails,
                epsilon: None,
                witness: None,
                lattice: None,
                detail: "every mixture dominating this generator admits arbitrage".into(),
            }
        };
        entries.push(entry);
    }
    Ok(NaReport { entries })
}

/// A measure on an enlarged lattice that dominates the input and is arbitrage-free.
#[derive(Debug, Clone)]
pub struct Perturbed {
    pub lattice: Arc<ScenarioLattice>,
    pub measure: Measure,
    /// New leaf index of each original leaf.
    pub embedding: Vec<usize>,
}

impl Perturbed {
    /// Re-embeds a measure of the original lattice.
    pub fn embed(&self, p: &Measure) -> Result<Measure, LatticeError> {
        let mut w = vec![0.0; self.lattice.num_leaves()];
        for (l, &nl) in self.embedding.iter().enumerate() {
            w[nl] = p.weights()[l];
        }
        Measure::new(&self.lattice, w)
    }
}

/// At every node, mixes the conditional law of `p` (weight `eps`) with the
/// symmetric two-point kernel at `(1 - eps) s` and `(1 + eps) s` (weight
/// `1 - eps`). Nodes without mass, and the inserted ones, use a point mass at
/// the current price in place of the conditional law.
pub fn perturb_na(lat: &ScenarioLattice, p: &Measure, eps: f64) -> Result<Perturbed, ArbitrageError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ArbitrageError::InvalidEpsilon(eps));
    }
    if !p.is_on(lat) {
        return Err(LatticeError::LatticeMismatch.into());
    }
    let horizon = lat.horizon();
    // node masses under p
    let mut mass = vec![0.0; lat.num_nodes()];
    for l in 0..lat.num_leaves() {
        for &i in lat.path(l) {
            mass[i] += p.weights()[l];
        }
    }
    let mut next_label = lat.nodes().iter().map(|n| n.label).max().unwrap() + 1;
    let root = lat.node(0);
    let mut specs = vec![NodeSpec { id: root.label, parent: None, t: 0, m: root.m, s: root.s }];
    // (spec index, original node, probability of reaching it)
    let mut frontier: Vec<(usize, Option<usize>, f64)> = vec![(0, Some(0), 1.0)];
    let mut leaf_prob: Vec<(u64, f64)> = Vec::new();
    for t in 1..=horizon {
        let mut next = Vec::new();
        for &(si, orig, prob) in &frontier {
            let (s, m, label) = (specs[si].s, specs[si].m, specs[si].id);
            // (price, money market, original child, kernel weight)
            let mut kids: Vec<(f64, f64, Option<usize>, f64)> = Vec::new();
            let original_children: &[usize] = orig.map_or(&[], |o| &lat.node(o).children);
            let informative = orig.is_some_and(|o| mass[o] > 0.0);
            for &c in original_children {
                let w = if informative { eps * mass[c] / mass[orig.unwrap()] } else { 0.0 };
                let node = lat.node(c);
                kids.push((node.s, node.m, Some(c), w));
            }
            let mut extra = vec![((1.0 - eps) * s, 0.5 * (1.0 - eps)), ((1.0 + eps) * s, 0.5 * (1.0 - eps))];
            if !informative {
                extra.push((s, eps));
            }
            for (price, w) in extra {
                match kids.iter_mut().find(|k| same_price(k.0, price)) {
                    Some(k) => k.3 += w,
                    None => kids.push((price, m, None, w)),
                }
            }
            for (price, money, oc, w) in kids {
                let id = match oc {
                    Some(c) => lat.node(c).label,
                    None => {
                        next_label += 1;
                        next_label - 1
                    }
                };
                specs.push(NodeSpec { id, parent: Some(label), t, m: money, s: price });
                let child_prob = prob * w;
                if t == horizon {
                    leaf_prob.push((id, child_prob));
                }
                next.push((specs.len() - 1, oc, child_prob));
            }
        }
        frontier = next;
    }
    let new_lat = ScenarioLattice::build(horizon, &specs)?;
    let mut weights = vec![0.0; new_lat.num_leaves()];
    for (label, prob) in leaf_prob {
        weights[new_lat.leaf_by_label(label)?] = prob;
    }
    let measure = Measure::normalized(&new_lat, weights)?;
    let embedding = lat
        .leaf_labels()
        .into_iter()
        .map(|label| new_lat.leaf_by_label(label))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Perturbed { lattice: Arc::new(new_lat), measure, embedding })
}

fn same_price(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::multiplicative_tree;

    #[test]
    fn binomial_examples() {
        let lat = multiplicative_tree(1, 1.0, &[2.0, 0.5]).unwrap();
        let p = Measure::uniform(&lat);
        assert!(!admits_arbitrage(&lat, &p).unwrap().arbitrage);
        let q = find_emm(&lat, &p).unwrap().unwrap();
        assert!((q.weights()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((q.weights()[1] - 2.0 / 3.0).abs() < 1e-12);

        let arb = multiplicative_tree(1, 1.0, &[2.0, 1.5]).unwrap();
        let p = Measure::uniform(&arb);
        let check = admits_arbitrage(&arb, &p).unwrap();
        assert!(check.arbitrage);
        assert_eq!(check.witness.unwrap().holdings(), &[1.0]);
        assert!(find_emm(&arb, &p).unwrap().is_none());
    }

    #[test]
    fn constant_price_is_martingale() {
        let lat = multiplicative_tree(2, 1.0, &[1.0, 1.0]).unwrap();
        let p = Measure::new(&lat, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(!admits_arbitrage(&lat, &p).unwrap().arbitrage);
        assert_eq!(find_emm(&lat, &p).unwrap().unwrap(), p);
    }

    #[test]
    fn perturbing_a_dirac_on_the_flat_path() {
        let lat = multiplicative_tree(2, 1.0, &[1.0]).unwrap();
        let p = Measure::dirac(&lat, 0).unwrap();
        let pert = perturb_na(&lat, &p, 0.1).unwrap();
        // flat path kept, plus up/down moves at each step
        assert_eq!(pert.lattice.num_leaves(), 9);
        assert!(!admits_arbitrage(&pert.lattice, &pert.measure).unwrap().arbitrage);
        let embedded = pert.embed(&p).unwrap();
        for (a, b) in embedded.weights().iter().zip(pert.measure.weights()) {
            assert!(*a == 0.0 || *b > 0.0);
        }
        assert!(perturb_na(&lat, &p, 1.0).is_err());
        assert!(perturb_na(&lat, &p, 0.0).is_err());
    }

    #[test]
    fn first_moment_formula() {
        let lat = multiplicative_tree(1, 1.5, &[1.2, 0.9]).unwrap();
        let p = Measure::new(&lat, vec![0.3, 0.7]).unwrap();
        for &eps in &[0.1, 0.01] {
            let pert = perturb_na(&lat, &p, eps).unwrap();
            for &m in &[-2.0f64, 2.0] {
                let got = crate::ambiguity::moment(&pert.lattice, pert.measure.weights(), 1, m, false);
                let orig = crate::ambiguity::moment(&lat, p.weights(), 1, m, false);
                let want = eps * orig + (1.0 - eps) * ((1.0 - eps).powf(m) + (1.0 + eps).powf(m)) / 2.0 * 1.5f64.powf(m);
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hull_with_arbitrage_dirac() {
        let lat = Arc::new(multiplicative_tree(1, 1.0, &[2.0, 1.0, 0.5]).unwrap());
        let dirac_up = Measure::dirac(&lat, 0).unwrap();
        let full = Measure::uniform(&lat);
        let report = check_na_hull(&lat, &[dirac_up.clone(), full]).unwrap();
        assert_eq!(report.verdict(), Some(true));
        // a Dirac on an up-move alone cannot be repaired inside its own hull
        let report = check_na_hull(&lat, &[dirac_up]).unwrap();
        assert_eq!(report.verdict(), Some(false));
    }
}
