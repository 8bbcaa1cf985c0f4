//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//!
//! Reference values come from independent computations in this file (closed
//! forms, brute-force enumeration, grid searches), never from the solver.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rumax_cli::generate::{generate_instance, Shape};
use rumax_cli::json;
use rumax_cli::problem::{AmbiguityType, ProblemFile};
use rumax_cli::report::{biconj_claims, biconj_duals, run_report, Command, RunConfig};
use rumax_core::ambiguity::{AmbiguityKind, AmbiguitySpec};
use rumax_core::arbitrage::{admits_arbitrage, find_emm, perturb_na};
use rumax_core::lattice::{multiplicative_tree, Claim, Measure, NodeSpec, ScenarioLattice};
use rumax_core::solver::biconj::biconjugate_check;
use rumax_core::solver::entropic::entropic_value;
use rumax_core::solver::{q_zero_branch, solve, DualCertificate, Problem, Solution, Tolerances};
use rumax_core::transport::{path_distance, wasserstein_p, MetricParams};
use rumax_core::utility::{divergence_dv, exp_conjugate, Conjugate, UtilityKind, UtilitySpec};

// Tolerances, as stated in the acceptance criteria.
const WEAK_SLACK: f64 = 1e-9;
const REL_GAP: f64 = 1e-3;
const CONVERGED_SHARE: f64 = 0.95;
const FIXTURE_TOL: f64 = 1e-6;
const DIVERGENCE_TOL: f64 = 1e-7;
const TRANSPORT_TOL: f64 = 1e-5;
const TRIANGLE_SLACK: f64 = 1e-12;
const CONJ_TOL: f64 = 1e-6;
const FENCHEL_YOUNG_TOL: f64 = 1e-9;
const SHAPE_SLACK: f64 = 1e-9;

const SWEEP: u64 = 200;
const KINDS: [AmbiguityType; 4] = [
    AmbiguityType::FiniteHull,
    AmbiguityType::MomentSet,
    AmbiguityType::WassersteinBall,
    AmbiguityType::WassersteinPenalty,
];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn sweep_shape(seed: u64) -> Shape {
    let s = seed as usize;
    Shape { horizon: 1 + (s / 4) % 3, branching: 2 + (s / 12) % 3, kind: KINDS[s % 4] }
}

fn sweep_problem(seed: u64) -> Problem {
    generate_instance(seed, sweep_shape(seed)).unwrap().file.to_problem().unwrap()
}

/// Outcome of one sweep instance, with everything criteria 1, 2 and 10 need.
struct SweepResult {
    seed: u64,
    kind: AmbiguityType,
    leaves: usize,
    solution: Result<Solution, String>,
    /// `U - D` for every dual point tried; positive means a breach.
    violations: Vec<f64>,
    certificate_ok: bool,
}

fn run_sweep_instance(seed: u64) -> SweepResult {
    let prob = sweep_problem(seed);
    let lat = prob.lattice().clone();
    let mut out = SweepResult {
        seed,
        kind: sweep_shape(seed).kind,
        leaves: lat.num_leaves(),
        solution: Err(String::new()),
        violations: Vec::new(),
        certificate_ok: false,
    };
    let sol = match solve(&prob) {
        Ok(s) => s,
        Err(e) => {
            out.solution = Err(e.to_string());
            return out;
        }
    };
    out.certificate_ok = sol.certificate.validate(&prob).is_ok();
    out.violations.push(sol.value - sol.certificate.value);
    if let Some(q0) = sol.q_zero_value {
        out.violations.push(sol.value - q0);
    }
    // further dual-feasible points: scalings of an equivalent martingale measure
    // paired with members of the set
    let mut members = vec![sol.worst_case.clone()];
    if let AmbiguityKind::FiniteHull { generators } = prob.ambiguity().kind() {
        members.extend(generators.iter().cloned());
    }
    if let Ok(Some(q_mart)) = find_emm(&lat, &Measure::uniform(&lat)) {
        for p in &members {
            for q in [0.25, 1.0, 4.0] {
                if let Ok(c) = DualCertificate::evaluate(&prob, q, q_mart.clone(), p.clone()) {
                    if c.value.is_finite() {
                        out.violations.push(sol.value - c.value);
                    }
                }
            }
        }
    }
    out.solution = Ok(sol);
    out
}

fn run_sweep() -> Vec<SweepResult> {
    (0..SWEEP).into_par_iter().map(run_sweep_instance).collect()
}

/// Canonical text of the sweep, used for the determinism check.
fn sweep_digest(results: &[SweepResult]) -> String {
    let rows: Vec<BTreeMap<&str, serde_json::Value>> = results
        .iter()
        .map(|r| {
            let mut m = BTreeMap::new();
            m.insert("seed", r.seed.into());
            match &r.solution {
                Ok(s) => {
                    m.insert("value", s.value.into());
                    m.insert("upper", s.upper().into());
                    m.insert("q", s.certificate.q.into());
                    m.insert("strategy", s.strategy.holdings().to_vec().into());
                    m.insert("martingale", s.certificate.martingale.weights().to_vec().into());
                }
                Err(e) => {
                    m.insert("error", e.clone().into());
                }
            }
            m
        })
        .collect();
    json::to_string(&rows)
}

fn criterion_1(results: &[SweepResult], elapsed: Duration) -> Verdict {
    let errors: Vec<String> = results
        .iter()
        .filter_map(|r| r.solution.as_ref().err().map(|e| format!("seed {}: {e}", r.seed)))
        .collect();
    let worst = results.iter().flat_map(|r| r.violations.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
    let points: usize = results.iter().map(|r| r.violations.len()).sum();
    let invalid = results.iter().filter(|r| r.solution.is_ok() && !r.certificate_ok).count();
    let kinds: std::collections::BTreeSet<String> = results.iter().map(|r| format!("{:?}", r.kind)).collect();
    let max_leaves = results.iter().map(|r| r.leaves).max().unwrap_or(0);
    let passed = errors.is_empty()
        && worst <= WEAK_SLACK
        && invalid == 0
        && kinds.len() == 4
        && max_leaves <= 64
        && elapsed <= Duration::from_secs(300);
    verdict(
        passed,
        format!(
            "{} instances, {points} dual points, max U - D = {worst:.3e}, {invalid} invalid certificates, {} errors{}, {:.1} s",
            results.len(),
            errors.len(),
            errors.first().map_or(String::new(), |e| format!(" (first: {e})")),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2(results: &[SweepResult], elapsed: Duration) -> Verdict {
    let mut converged = 0;
    let mut worst = 0.0f64;
    for r in results {
        if let Ok(s) = &r.solution {
            if s.converged {
                converged += 1;
                worst = worst.max((s.upper() - s.value).abs() / (1.0 + s.value.abs()));
            }
        }
    }
    let share = converged as f64 / results.len() as f64;
    verdict(
        share >= CONVERGED_SHARE && worst <= REL_GAP && elapsed <= Duration::from_secs(900),
        format!(
            "{converged}/{} converged ({:.1}%), max relative gap {worst:.3e}, {:.1} s",
            results.len(),
            100.0 * share,
            elapsed.as_secs_f64()
        ),
    )
}

fn binomial() -> Problem {
    let lat = Arc::new(multiplicative_tree(1, 1.0, &[2.0, 0.5]).unwrap());
    let p = Measure::uniform(&lat);
    let amb = AmbiguitySpec::new(lat.clone(), AmbiguityKind::FiniteHull { generators: vec![p] }).unwrap();
    let claim = Claim::constant(&lat, 0.0).unwrap();
    let u = UtilitySpec::exponential(1.0).unwrap();
    Problem::new(lat, claim, Arc::new(u), Arc::new(amb), Tolerances::default()).unwrap()
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    // first-order condition of -(e^{-t} + e^{t/2})/2 in t
    let theta = (2.0f64 / 3.0) * 2f64.ln();
    let u_star = -0.5 * ((-theta).exp() + (0.5 * theta).exp());
    let w_star = -(-u_star).ln();
    // dQ/dP proportional to u'(theta dS) = e^{-theta dS}
    let (a, b) = ((-theta).exp(), (0.5 * theta).exp());
    let q_star = [a / (a + b), b / (a + b)];
    let stated = [(u_star, -0.944940), (w_star, 0.056633), (q_star[0], 1.0 / 3.0), (q_star[1], 2.0 / 3.0)];
    let oracle_ok = stated.iter().all(|(x, s)| (x - s).abs() <= FIXTURE_TOL);

    let prob = binomial();
    let sol = solve(&prob).unwrap();
    let ent = entropic_value(&prob).unwrap();
    let errs = [
        (sol.strategy.holdings()[0] - theta).abs(),
        (sol.value - u_star).abs(),
        (sol.upper() - u_star).abs(),
        (ent.value - w_star).abs(),
        (sol.value - (-0.944940)).abs(),
        (ent.value - 0.056633).abs(),
        (sol.certificate.martingale.weights()[0] - q_star[0]).abs(),
        (sol.certificate.martingale.weights()[1] - q_star[1]).abs(),
        (ent.martingale.weights()[0] - 1.0 / 3.0).abs(),
    ];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    verdict(
        oracle_ok && worst <= FIXTURE_TOL && elapsed <= Duration::from_secs(1),
        format!(
            "theta {:.9}, U {:.9}, W {:.9}, Q ({:.9}, {:.9}); max error {worst:.3e}, {:.3} s",
            sol.strategy.holdings()[0],
            sol.value,
            ent.value,
            sol.certificate.martingale.weights()[0],
            sol.certificate.martingale.weights()[1],
            elapsed.as_secs_f64()
        ),
    )
}

/// Maximizes a concave function of one variable by bracketing and golden section.
fn maximize_1d(f: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (-1.0, 1.0);
    while f(lo - 1.0) > f(lo) {
        lo = 2.0 * lo - 1.0;
    }
    while f(hi + 1.0) > f(hi) {
        hi = 2.0 * hi + 1.0;
    }
    lo -= 1.0;
    hi += 1.0;
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if f(a) >= f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    f(0.5 * (lo + hi))
}

fn one_period(n: usize) -> Arc<ScenarioLattice> {
    let factors: Vec<f64> = (0..n).map(|k| 0.5 + 1.0 * k as f64 / (n - 1).max(1) as f64).collect();
    Arc::new(multiplicative_tree(1, 1.0, &factors).unwrap())
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(2..=8);
        let lat = one_period(n);
        let p = Measure::new(&lat, random_weights(&mut rng, n)).unwrap();
        let big_q = Measure::new(&lat, random_weights(&mut rng, n)).unwrap();
        let q = rng.gen_range(0.1..5.0);
        let lambda = rng.gen_range(0.5..2.0);
        // sup over X splits into one concave problem per leaf
        let lhs: f64 = (0..n)
            .map(|l| {
                let (pl, ql) = (p.weights()[l], big_q.weights()[l]);
                maximize_1d(|x| -pl * (-lambda * x).exp() - q * ql * x)
            })
            .sum();
        let conj = Conjugate::new(Arc::new(UtilitySpec::exponential(lambda).unwrap()));
        let rhs = divergence_dv(&conj, q, &big_q, &p).unwrap();
        worst = worst.max((lhs - rhs).abs());
    }
    verdict(worst <= DIVERGENCE_TOL, format!("50 tuples, max |sup - E^P v| = {worst:.3e}"))
}

fn random_tree(rng: &mut ChaCha8Rng) -> ScenarioLattice {
    let horizon = rng.gen_range(1..=2);
    let mut specs = vec![NodeSpec { id: 0, parent: None, t: 0, m: 1.0, s: 1.0 }];
    let mut frontier = vec![0usize];
    for t in 1..=horizon {
        let mut next = Vec::new();
        for &i in &frontier {
            let s = specs[i].s;
            let id0 = specs[i].id;
            for _ in 0..rng.gen_range(1..=3) {
                // one-sided children are allowed: these trees may carry arbitrage
                let f = if rng.gen_bool(0.2) { 1.0 } else { rng.gen_range(0.7..1.3) };
                let id = specs.len() as u64;
                specs.push(NodeSpec { id, parent: Some(id0), t, m: 1.0, s: s * f });
                next.push(specs.len() - 1);
            }
        }
        frontier = next;
    }
    ScenarioLattice::build(horizon, &specs).unwrap()
}

/// Strategy gains are nonnegative on the support and positive somewhere.
fn is_arbitrage(lat: &ScenarioLattice, p: &Measure, holdings: &rumax_core::lattice::Strategy) -> bool {
    let gains = lat.wealth_vector(holdings).unwrap();
    let scale = 1.0 + holdings.holdings().iter().map(|h| h.abs()).fold(0.0, f64::max);
    let on = p.support();
    on.iter().all(|&l| gains[l] >= -1e-9 * scale) && on.iter().any(|&l| gains[l] > 1e-9 * scale)
}

fn is_equivalent_martingale(lat: &ScenarioLattice, p: &Measure, q: &Measure) -> bool {
    let same_support = p.weights().iter().zip(q.weights()).all(|(a, b)| (*a > 0.0) == (*b > 0.0));
    let res = lat.martingale_residuals(q.weights()).iter().map(|r| r.abs()).fold(0.0, f64::max);
    same_support && res <= 1e-9
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut disagree, mut bad_witness, mut arbitrage_cases) = (0, 0, 0);
    for _ in 0..100 {
        let lat = random_tree(&mut rng);
        let n = lat.num_leaves();
        let mut w: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.1..1.0) }).collect();
        if w.iter().all(|&x| x == 0.0) {
            w[rng.gen_range(0..n)] = 1.0;
        }
        let p = Measure::normalized(&lat, w).unwrap();
        let arb = admits_arbitrage(&lat, &p).unwrap();
        let emm = find_emm(&lat, &p).unwrap();
        if arb.arbitrage == emm.is_some() {
            disagree += 1;
        }
        if arb.arbitrage {
            arbitrage_cases += 1;
            if !arb.witness.as_ref().is_some_and(|s| is_arbitrage(&lat, &p, s)) {
                bad_witness += 1;
            }
        }
        if let Some(q) = &emm {
            if !is_equivalent_martingale(&lat, &p, q) {
                bad_witness += 1;
            }
        }
    }
    verdict(
        disagree == 0 && bad_witness == 0 && arbitrage_cases > 0 && arbitrage_cases < 100,
        format!("100 instances ({arbitrage_cases} with arbitrage), {disagree} disagreements, {bad_witness} bad witnesses"),
    )
}

/// A measure that only charges root children on one side of the root price.
fn planted(rng: &mut ChaCha8Rng, lat: &ScenarioLattice) -> Measure {
    let root = lat.node(0);
    let up = rng.gen_bool(0.5);
    let side: Vec<usize> = root
        .children
        .iter()
        .copied()
        .filter(|&c| if up { lat.node(c).s > root.s } else { lat.node(c).s < root.s })
        .collect();
    let mut w = vec![0.0; lat.num_leaves()];
    for &c in &side {
        for l in lat.leaves_below(c) {
            w[l] = rng.gen_range(0.1..1.0);
        }
    }
    Measure::normalized(lat, w).unwrap()
}

fn first_moment(lat: &ScenarioLattice, p: &Measure, m: f64) -> f64 {
    (0..lat.num_leaves()).map(|l| p.weights()[l] * lat.node(lat.path(l)[1]).s.powf(m)).sum()
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut not_planted, mut not_dominated, mut still_arb, mut non_monotone) = (0, 0, 0, 0);
    for k in 0..20u64 {
        let shape = Shape { horizon: 1 + (k as usize % 2), branching: 2 + (k as usize % 3), kind: AmbiguityType::FiniteHull };
        let lat = generate_instance(600 + k, shape).unwrap().file.lattice().unwrap();
        let p = planted(&mut rng, &lat);
        if !admits_arbitrage(&lat, &p).unwrap().arbitrage {
            not_planted += 1;
        }
        for eps in [0.1, 0.01] {
            let pert = perturb_na(&lat, &p, eps).unwrap();
            let embedded = pert.embed(&p).unwrap();
            if embedded.weights().iter().zip(pert.measure.weights()).any(|(a, b)| *a > 0.0 && *b <= 0.0) {
                not_dominated += 1;
            }
            if admits_arbitrage(&pert.lattice, &pert.measure).unwrap().arbitrage {
                still_arb += 1;
            }
        }
        let s0 = lat.node(0).s;
        for m in [-2.0, 2.0] {
            let dist: Vec<f64> = [0.1, 0.01, 0.001]
                .iter()
                .map(|&eps| {
                    let pert = perturb_na(&lat, &p, eps).unwrap();
                    (first_moment(&pert.lattice, &pert.measure, m) - s0.powf(m)).abs()
                })
                .collect();
            if !(dist[1] < dist[0] && dist[2] < dist[1]) {
                non_monotone += 1;
            }
        }
    }
    verdict(
        not_planted + not_dominated + still_arb + non_monotone == 0,
        format!(
            "20 planted measures: {not_planted} without arbitrage, {not_dominated} not dominated, \
             {still_arb} still arbitrage, {non_monotone} non-monotone moment sequences"
        ),
    )
}

/// Minimum-cost plan over all basic feasible plans of a small transport problem,
/// found by trying every cell subset that peels like a spanning forest.
fn brute_force_transport(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << cells.len()) {
        if mask.count_ones() as usize > n + m - 1 {
            continue;
        }
        let mut open: Vec<(usize, usize)> = cells.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, c)| *c).collect();
        let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
        let mut total = 0.0;
        let mut ok = true;
        while !open.is_empty() {
            // a row or column with a single open cell fixes that cell's mass
            let pick = (0..open.len()).find(|&k| {
                let (i, j) = open[k];
                open.iter().filter(|c| c.0 == i).count() == 1 || open.iter().filter(|c| c.1 == j).count() == 1
            });
            let Some(k) = pick else {
                ok = false;
                break;
            };
            let (i, j) = open.remove(k);
            let row_single = !open.iter().any(|c| c.0 == i);
            let x = if row_single { ra[i] } else { rb[j] };
            if x < -1e-12 {
                ok = false;
                break;
            }
            ra[i] -= x;
            rb[j] -= x;
            total += x * cost[i][j];
        }
        let balanced = ra.iter().chain(&rb).all(|r| r.abs() <= 1e-12);
        if ok && balanced {
            best = best.min(total);
        }
    }
    best
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_lp = 0.0f64;
    let mut instances = 0;
    for k in 0..60u64 {
        let shape = Shape { horizon: 2, branching: 3, kind: AmbiguityType::FiniteHull };
        let lat = generate_instance(700 + k, shape).unwrap().file.lattice().unwrap();
        let params = MetricParams::new(rng.gen_range(0.5..2.0), rng.gen_range(1.0..3.0), [1.5, 2.0, 3.0][k as usize % 3]).unwrap();
        let n = lat.num_leaves();
        let pick = |rng: &mut ChaCha8Rng| -> (Vec<usize>, Vec<f64>) {
            let mut idx: Vec<usize> = (0..n).collect();
            for i in 0..3 {
                let j = rng.gen_range(i..n);
                idx.swap(i, j);
            }
            idx.truncate(3);
            idx.sort();
            (idx, random_weights(rng, 3))
        };
        let (ia, wa) = pick(&mut rng);
        let (ib, wb) = pick(&mut rng);
        let mut full_a = vec![0.0; n];
        let mut full_b = vec![0.0; n];
        ia.iter().zip(&wa).for_each(|(&i, &w)| full_a[i] = w);
        ib.iter().zip(&wb).for_each(|(&i, &w)| full_b[i] = w);
        let pa = Measure::new(&lat, full_a).unwrap();
        let pb = Measure::new(&lat, full_b).unwrap();
        let cost: Vec<Vec<f64>> = ia
            .iter()
            .map(|&i| {
                ib.iter()
                    .map(|&j| path_distance(&params, &lat.path_point(i), &lat.path_point(j)).unwrap().powf(params.p))
                    .collect()
            })
            .collect();
        let oracle = brute_force_transport(&wa, &wb, &cost).powf(1.0 / params.p);
        let lp = wasserstein_p(&lat, params, &pa, &pb).unwrap().value;
        worst_lp = worst_lp.max((lp - oracle).abs());
        instances += 1;
    }

    // metric axioms on random path triples
    let mut symmetric = true;
    let mut worst_triangle = f64::NEG_INFINITY;
    let mut identity = true;
    for k in 0..1000u64 {
        let shape = Shape { horizon: 1 + (k as usize % 3), branching: 2 + (k as usize % 3), kind: AmbiguityType::FiniteHull };
        let lat = generate_instance(10_000 + k % 40, shape).unwrap().file.lattice().unwrap();
        let params = MetricParams::new(rng.gen_range(0.0..2.0), rng.gen_range(1.0..3.0), 2.0).unwrap();
        let n = lat.num_leaves();
        let (x, y, z) = (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..n));
        let d = |i: usize, j: usize| path_distance(&params, &lat.path_point(i), &lat.path_point(j)).unwrap();
        symmetric &= d(x, y) == d(y, x);
        identity &= d(x, x) == 0.0 && (x == y || d(x, y) > 0.0);
        worst_triangle = worst_triangle.max(d(x, z) - d(x, y) - d(y, z));
    }

    // exact special cases
    let lat = generate_instance(77, Shape { horizon: 2, branching: 3, kind: AmbiguityType::FiniteHull })
        .unwrap()
        .file
        .lattice()
        .unwrap();
    let params = MetricParams::new(1.0, 2.0, 2.0).unwrap();
    let p = Measure::new(&lat, random_weights(&mut rng, lat.num_leaves())).unwrap();
    let self_zero = wasserstein_p(&lat, params, &p, &p).unwrap().value == 0.0;
    let mut dirac_exact = true;
    for (i, j) in [(0, 8), (3, 4), (2, 2)] {
        let w = wasserstein_p(&lat, params, &Measure::dirac(&lat, i).unwrap(), &Measure::dirac(&lat, j).unwrap()).unwrap();
        dirac_exact &= w.value == path_distance(&params, &lat.path_point(i), &lat.path_point(j)).unwrap();
    }
    verdict(
        worst_lp <= TRANSPORT_TOL && symmetric && identity && worst_triangle <= TRIANGLE_SLACK && self_zero && dirac_exact,
        format!(
            "{instances} 3x3 instances max |LP - enumeration| {worst_lp:.3e}; 1000 triples: symmetric {symmetric}, \
             identity {identity}, worst triangle excess {worst_triangle:.3e}; W(P,P)=0 {self_zero}, Dirac exact {dirac_exact}"
        ),
    )
}

/// `sup_x {-e^{-lambda x} - x y}` by successively refined grids.
fn grid_conjugate(lambda: f64, y: f64) -> f64 {
    let f = |x: f64| -(-lambda * x).exp() - x * y;
    let (mut lo, mut hi) = (-40.0, 40.0);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for _ in 0..8 {
        let h = (hi - lo) / 2000.0;
        best = (f64::NEG_INFINITY, 0.0);
        for k in 0..=2000 {
            let x = lo + h * k as f64;
            let v = f(x);
            if v > best.0 {
                best = (v, x);
            }
        }
        lo = best.1 - 2.0 * h;
        hi = best.1 + 2.0 * h;
    }
    best.0
}

fn criterion_8() -> Verdict {
    let ys: Vec<f64> = (0..25).map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / 24.0)).collect();
    let mut worst_grid = 0.0f64;
    for lambda in [0.5, 1.0, 2.0] {
        let conj = Conjugate::new(Arc::new(UtilitySpec::exponential(lambda).unwrap()));
        for &y in &ys {
            let closed = (y / lambda) * ((y / lambda).ln() - 1.0);
            let grid = grid_conjugate(lambda, y);
            let lib = conj.value(0, y).unwrap();
            worst_grid = worst_grid.max((closed - grid).abs()).max((lib - closed).abs()).max((exp_conjugate(lambda, y) - closed).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_fy = f64::NEG_INFINITY;
    let mut worst_eq = 0.0f64;
    for _ in 0..10_000 {
        let lambda: f64 = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let x: f64 = rng.gen_range(-5.0..5.0);
        let y: f64 = 10f64.powf(rng.gen_range(-3.0..3.0));
        // u(x) - x y <= v(y), with equality at the maximizer
        worst_fy = worst_fy.max(-(-lambda * x).exp() - x * y - exp_conjugate(lambda, y));
        let xs = -(y / lambda).ln() / lambda;
        let tight = (-(-lambda * xs).exp() - xs * y - exp_conjugate(lambda, y)).abs();
        worst_eq = worst_eq.max(tight / (1.0 + (xs * y).abs()));
    }
    verdict(
        worst_grid <= CONJ_TOL && worst_fy <= FENCHEL_YOUNG_TOL && worst_eq <= FENCHEL_YOUNG_TOL,
        format!(
            "75 grid points max error {worst_grid:.3e}; 10^4 Fenchel-Young pairs worst excess {worst_fy:.3e}, \
             worst relative equality defect at the maximizer {worst_eq:.3e}"
        ),
    )
}

fn q_zero_oracle(prob: &Problem) -> f64 {
    // v(0) = sup u: 0 for exponential, the flat right tail for the generated tables
    match prob.utility().kind() {
        UtilityKind::Exponential { .. } => 0.0,
        UtilityKind::Tabulated(t) => t.knots().last().unwrap().1,
        UtilityKind::TabulatedPerPath(ts) => ts.iter().map(|t| t.knots().last().unwrap().1).fold(f64::INFINITY, f64::min),
    }
}

fn criterion_9() -> Verdict {
    let results: Vec<(usize, usize, f64, f64)> = (0..50u64)
        .into_par_iter()
        .map(|k| {
            let shape = Shape { horizon: 1 + (k as usize % 2), branching: 2 + (k as usize % 2), kind: KINDS[k as usize % 4] };
            let prob = generate_instance(900 + k, shape).unwrap().file.to_problem().unwrap();
            let claims = biconj_claims(&prob, k).unwrap();
            let duals = biconj_duals(&prob).unwrap();
            let rep = biconjugate_check(&prob, &claims, &duals, &[-1.0, -0.5, 0.0, 0.5, 1.0]).unwrap();
            let worst_margin = rep.checks.iter().map(|c| -c.margin).fold(f64::NEG_INFINITY, f64::max);
            // q = 0 branch against its closed form, and as an upper bound on U
            let q0 = q_zero_branch(&prob).unwrap().map_or(f64::INFINITY, |c| c.value);
            let q0_err = (q0 - q_zero_oracle(&prob)).abs();
            let u = solve(&prob).unwrap().value;
            let q0_excess = u - q0;
            (rep.checks.len(), rep.failures(), worst_margin, q0_err.max(q0_excess))
        })
        .collect();
    let checks: usize = results.iter().map(|r| r.0).sum();
    let failures: usize = results.iter().map(|r| r.1).sum();
    let worst = results.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    let q0_worst = results.iter().map(|r| r.3).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        failures == 0 && worst <= SHAPE_SLACK && q0_worst <= SHAPE_SLACK,
        format!("50 instances, {checks} assertions, {failures} failed, worst violation {worst:.3e}; q=0 branch worst {q0_worst:.3e}"),
    )
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn cli_artifacts(root: &Path) -> Vec<(String, Vec<u8>)> {
    let inputs_dir = root.join("inputs");
    let mut gen = RunConfig::new(Command::Gen, vec![], inputs_dir.clone());
    gen.seed = 1000;
    gen.count = 4;
    gen.shape = Some(Shape { horizon: 2, branching: 3, kind: AmbiguityType::WassersteinBall });
    assert_eq!(run_report(&gen).code, 0);
    let mut inputs: Vec<PathBuf> = (1000..1004).map(|s| inputs_dir.join(format!("instance_{s}.json"))).collect();
    inputs.push(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/binomial_entropic.json"));
    for (name, cmd) in [
        ("solve", Command::Solve),
        ("dual", Command::Dual),
        ("gap", Command::Gap),
        ("na", Command::NaCheck),
        ("conjugate", Command::Conjugate),
        ("biconj", Command::Biconj),
    ] {
        let mut cfg = RunConfig::new(cmd, inputs.clone(), root.join(name));
        cfg.seed = 5;
        run_report(&cfg);
    }
    let cfg = RunConfig::new(Command::Entropic, vec![inputs[4].clone()], root.join("entropic"));
    run_report(&cfg);
    artifacts(root)
}

fn criterion_10(first: &str) -> Verdict {
    let second = sweep_digest(&run_sweep());
    let sweep_same = first == second;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = cli_artifacts(a.path());
    std::env::set_var("RUMAX_THREADS", "1");
    let fb = cli_artifacts(b.path());
    std::env::remove_var("RUMAX_THREADS");
    let files_same = fa == fb;
    // the generated problems also round-trip byte for byte
    let reparsed = fa
        .iter()
        .filter(|(n, _)| n.starts_with("inputs/"))
        .all(|(_, bytes)| {
            let text = String::from_utf8(bytes.clone()).unwrap();
            ProblemFile::from_json(&text).unwrap().to_json() == text
        });
    verdict(
        sweep_same && files_same && reparsed && !fa.is_empty(),
        format!(
            "sweep digest identical {sweep_same} ({} bytes); {} artifacts identical across thread counts {files_same}; problem files round-trip {reparsed}",
            first.len(),
            fa.len()
        ),
    )
}

fn main() {
    let mut lines = Vec::new();
    let mut report = |n: usize, name: &str, v: Verdict| {
        let status = if v.passed { "PASS" } else { "FAIL" };
        let line = format!("criterion {n:>2} [{name}] {status}: {}", v.detail);
        println!("{line}");
        lines.push(v.passed);
    };
    let start = Instant::now();
    let sweep = run_sweep();
    let sweep_time = start.elapsed();
    let digest = sweep_digest(&sweep);
    report(1, "weak duality", criterion_1(&sweep, sweep_time));
    report(2, "strong duality", criterion_2(&sweep, sweep_time));
    report(3, "entropic binomial fixture", criterion_3());
    report(4, "divergence identity", criterion_4());
    report(5, "FTAP agreement", criterion_5());
    report(6, "NA perturbation", criterion_6());
    report(7, "transport", criterion_7());
    report(8, "exponential conjugate", criterion_8());
    report(9, "monotonicity, concavity, q=0 branch", criterion_9());
    report(10, "determinism", criterion_10(&digest));
    let failed = lines.iter().filter(|p| !**p).count();
    println!("acceptance: {} of {} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
