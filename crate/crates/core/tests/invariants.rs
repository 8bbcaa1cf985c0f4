//! Property tests for the structural results the solver relies on.

use std::sync::Arc;

use proptest::prelude::*;
use rumax_core::ambiguity::{AmbiguityKind, AmbiguitySpec};
use rumax_core::arbitrage::{admits_arbitrage, find_emm, perturb_na};
use rumax_core::lattice::{Claim, Measure, NodeSpec, ScenarioLattice};
use rumax_core::solver::{solve, DualCertificate, Problem, Tolerances};
use rumax_core::transport::{wasserstein_p, MetricParams};
use rumax_core::utility::{Conjugate, LeftTail, Tabulated, UtilityKind, UtilitySpec};

/// A two-period tree from per-node child factors; factor lists may sit on one
/// side of 1, so the tree can carry arbitrage.
fn tree(factors: &[Vec<f64>]) -> ScenarioLattice {
    let mut specs = vec![NodeSpec { id: 0, parent: None, t: 0, m: 1.0, s: 1.0 }];
    let root_children: Vec<usize> = factors[0]
        .iter()
        .map(|f| {
            specs.push(NodeSpec { id: specs.len() as u64, parent: Some(0), t: 1, m: 1.0, s: *f });
            specs.len() - 1
        })
        .collect();
    for (k, &c) in root_children.iter().enumerate() {
        let s = specs[c].s;
        for f in &factors[1 + k % (factors.len() - 1)] {
            specs.push(NodeSpec { id: specs.len() as u64, parent: Some(c as u64), t: 2, m: 1.0, s: s * f });
        }
    }
    ScenarioLattice::build(2, &specs).unwrap()
}

fn factor_lists() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.6f64..1.4, 1..=3), 2..=4)
}

fn weights_for(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 3 => 0.05f64..1.0], n)
}

fn measure(lat: &ScenarioLattice, mut w: Vec<f64>) -> Measure {
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    Measure::normalized(lat, w).unwrap()
}

fn gains_are_arbitrage(lat: &ScenarioLattice, p: &Measure, th: &rumax_core::lattice::Strategy) -> bool {
    let g = lat.wealth_vector(th).unwrap();
    let s = p.support();
    s.iter().all(|&l| g[l] >= -1e-9) && s.iter().any(|&l| g[l] > 1e-9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ftap_alternative_holds(factors in factor_lists(), raw in weights_for(64)) {
        let lat = tree(&factors);
        let p = measure(&lat, raw[..lat.num_leaves()].to_vec());
        let check = admits_arbitrage(&lat, &p).unwrap();
        let emm = find_emm(&lat, &p).unwrap();
        prop_assert_eq!(check.arbitrage, emm.is_none());
        if let Some(q) = emm {
            for (a, b) in p.weights().iter().zip(q.weights()) {
                prop_assert_eq!(*a > 0.0, *b > 0.0);
            }
            let res = lat.martingale_residuals(q.weights()).iter().map(|r| r.abs()).fold(0.0, f64::max);
            prop_assert!(res <= 1e-9);
        } else {
            prop_assert!(gains_are_arbitrage(&lat, &p, check.witness.as_ref().unwrap()));
        }
    }

    #[test]
    fn perturbation_dominates_and_removes_arbitrage(
        factors in factor_lists(),
        raw in weights_for(64),
        eps in prop_oneof![Just(0.1), Just(0.01), Just(0.001)],
    ) {
        let lat = tree(&factors);
        let p = measure(&lat, raw[..lat.num_leaves()].to_vec());
        let pert = perturb_na(&lat, &p, eps).unwrap();
        let embedded = pert.embed(&p).unwrap();
        for (a, b) in embedded.weights().iter().zip(pert.measure.weights()) {
            prop_assert!(*a == 0.0 || *b > 0.0);
        }
        prop_assert!(!admits_arbitrage(&pert.lattice, &pert.measure).unwrap().arbitrage);
    }

    #[test]
    fn wasserstein_is_a_metric(
        raw_a in prop::collection::vec(0.05f64..1.0, 9),
        raw_b in prop::collection::vec(0.05f64..1.0, 9),
        raw_c in prop::collection::vec(0.05f64..1.0, 9),
        rho in 0.0f64..2.0,
        p in 1.0f64..3.0,
    ) {
        let lat = tree(&[vec![1.2, 1.0, 0.8], vec![1.1, 1.0, 0.9]]);
        let params = MetricParams::new(rho, 1.0, p).unwrap();
        let (a, b, c) = (measure(&lat, raw_a), measure(&lat, raw_b), measure(&lat, raw_c));
        let w = |x: &Measure, y: &Measure| wasserstein_p(&lat, params, x, y).unwrap().value;
        let (ab, ba, bc, ac) = (w(&a, &b), w(&b, &a), w(&b, &c), w(&a, &c));
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert_eq!(w(&a, &a), 0.0);
    }

    #[test]
    fn tabulated_fenchel_young(
        mut slopes in prop::collection::vec(0.1f64..3.0, 2..=5),
        kappa in 0.0f64..1.0,
        x in -6.0f64..4.0,
        y in 0.01f64..5.0,
    ) {
        slopes.sort_by(|a, b| b.total_cmp(a));
        let mut knots = vec![(-1.0, -slopes[0])];
        for s in &slopes[1..] {
            let (x0, u0) = *knots.last().unwrap();
            knots.push((x0 + 1.0, u0 + s));
        }
        let t = Tabulated::new(knots, slopes[0] + 0.5, 0.0, LeftTail::Quadratic { kappa }).unwrap();
        let u = t.eval(x);
        let spec = Arc::new(UtilitySpec::new(UtilityKind::Tabulated(t), None).unwrap());
        let conj = Conjugate::new(spec.clone());
        let v = conj.value(0, y).unwrap();
        prop_assert!(u - x * y <= v + 1e-9 * (1.0 + v.abs()));
        if let Some(xs) = conj.argmax(0, y) {
            prop_assert!((spec.eval_u(0, xs) - xs * y - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn any_dual_point_bounds_the_value(
        raw in prop::collection::vec(0.1f64..1.0, 4),
        claim in prop::collection::vec(-1.0f64..1.0, 4),
        lambda in 0.5f64..2.0,
        q in 0.1f64..4.0,
    ) {
        let lat = Arc::new(tree(&[vec![1.2, 0.85], vec![1.1, 0.9]]));
        let p = measure(&lat, raw);
        let amb = AmbiguitySpec::new(lat.clone(), AmbiguityKind::FiniteHull { generators: vec![p.clone(), Measure::uniform(&lat)] }).unwrap();
        let prob = Problem::new(
            lat.clone(),
            Claim::new(&lat, claim).unwrap(),
            Arc::new(UtilitySpec::exponential(lambda).unwrap()),
            Arc::new(amb),
            Tolerances::default(),
        )
        .unwrap();
        let sol = solve(&prob).unwrap();
        let q_mart = find_emm(&lat, &p).unwrap().unwrap();
        let d = DualCertificate::evaluate(&prob, q, q_mart, p).unwrap();
        prop_assert!(sol.value <= d.value + 1e-9);
        prop_assert!(sol.value <= sol.upper() + 1e-9);
    }
}
