//! Finite scenario trees: nodes, paths, adapted strategies, claims and measures.
//!
//! Nodes are renumbered densely in breadth-first order and leaves are listed
//! in that order as well. Every per-path vector in the crate (claims, measure
//! weights, utility parameters) uses this canonical leaf order.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, VecDeque};
use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::transport::{self, MetricParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("tree has no nodes")]
    EmptyTree,
    #[error("horizon must be at least 1, got {0}")]
    InvalidHorizon(usize),
    #[error("node id {0} appears more than once")]
    DuplicateNode(u64),
    #[error("node {node} refers to unknown parent {parent}")]
    UnknownParent { node: u64, parent: u64 },
    #[error("tree has {0} root nodes, expected exactly one")]
    MultipleRoots(usize),
    #[error("node {0} is not reachable from the root (cycle in parent links)")]
    CyclicTree(u64),
    #[error("node {node} has non-positive or non-finite {field} = {value}")]
    NonPositivePrice { node: u64, field: &'static str, value: f64 },
    #[error("node {node} at time {t} has a parent at time {parent_t}")]
    TimeGap { node: u64, t: usize, parent_t: usize },
    #[error("root node {node} must sit at time 0, found {t}")]
    RootTime { node: u64, t: usize },
    #[error("leaf {node} ends at time {t} before the horizon {horizon}")]
    ShortPath { node: u64, t: usize, horizon: usize },
    #[error("node {node} at time {t} exceeds the horizon {horizon}")]
    BeyondHorizon { node: u64, t: usize, horizon: usize },
    #[error("unknown leaf {0}")]
    UnknownLeaf(u64),
    #[error("strategy has {got} holdings, expected one per non-terminal node ({expected})")]
    MissingHolding { expected: usize, got: usize },
    #[error("object built on a different lattice")]
    LatticeMismatch,
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("claim value on leaf {0} is not finite")]
    NonFiniteClaim(usize),
    #[error("invalid metric parameters: {0}")]
    InvalidMetricParams(String),
    #[error("weight function violates its lower bound on leaf {leaf}: Z = {z}, bound = {bound}")]
    ZBound { leaf: usize, z: f64, bound: f64 },
}

/// One node as written in a problem file.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: u64,
    pub parent: Option<u64>,
    pub t: usize,
    pub m: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    /// Identifier from the input description.
    pub label: u64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub t: usize,
    pub m: f64,
    pub s: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioLattice {
    horizon: usize,
    nodes: Vec<Node>,
    leaves: Vec<usize>,
    non_terminal: Vec<usize>,
    nt_of_node: Vec<Option<usize>>,
    leaf_of_node: Vec<Option<usize>>,
    paths: Vec<Vec<usize>>,
    // (non-terminal index, price increment) for each step of each path
    increments: Vec<Vec<(usize, f64)>>,
    fingerprint: u64,
}

impl PartialEq for ScenarioLattice {
    fn eq(&self, other: &Self) -> bool {
        self.fingerprint == other.fingerprint && self.nodes == other.nodes
    }
}

impl ScenarioLattice {
    pub fn build(horizon: usize, specs: &[NodeSpec]) -> Result<Self, LatticeError> {
        if specs.is_empty() {
            return Err(LatticeError::EmptyTree);
        }
        if horizon == 0 {
            return Err(LatticeError::InvalidHorizon(horizon));
        }
        let mut by_id: HashMap<u64, usize> = HashMap::with_capacity(specs.len());
        for (k, spec) in specs.iter().enumerate() {
            if by_id.insert(spec.id, k).is_some() {
                return Err(LatticeError::DuplicateNode(spec.id));
            }
            for (field, value) in [("m", spec.m), ("s", spec.s)] {
                if !(value.is_finite() && value > 0.0) {
                    return Err(LatticeError::NonPositivePrice { node: spec.id, field, value });
                }
            }
            if spec.t > horizon {
                return Err(LatticeError::BeyondHorizon { node: spec.id, t: spec.t, horizon });
            }
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); specs.len()];
        let mut roots = Vec::new();
        for (k, spec) in specs.iter().enumerate() {
            match spec.parent {
                None => roots.push(k),
                Some(p) => {
                    let pk = *by_id
                        .get(&p)
                        .ok_or(LatticeError::UnknownParent { node: spec.id, parent: p })?;
                    if specs[pk].t + 1 != spec.t {
                        return Err(LatticeError::TimeGap {
                            node: spec.id,
                            t: spec.t,
                            parent_t: specs[pk].t,
                        });
                    }
                    children[pk].push(k);
                }
            }
        }
        if roots.len() != 1 {
            return Err(LatticeError::MultipleRoots(roots.len()));
        }
        let root = roots[0];
        if specs[root].t != 0 {
            return Err(LatticeError::RootTime { node: specs[root].id, t: specs[root].t });
        }

        let mut order = Vec::with_capacity(specs.len());
        let mut new_index = vec![usize::MAX; specs.len()];
        let mut queue = VecDeque::from([root]);
        while let Some(k) = queue.pop_front() {
            new_index[k] = order.len();
            order.push(k);
            queue.extend(children[k].iter().copied());
        }
        if order.len() != specs.len() {
            let stray = (0..specs.len()).find(|&k| new_index[k] == usize::MAX).unwrap();
            return Err(LatticeError::CyclicTree(specs[stray].id));
        }

        let nodes: Vec<Node> = order
            .iter()
            .map(|&k| {
                let spec = &specs[k];
                Node {
                    label: spec.id,
                    parent: spec.parent.map(|p| new_index[by_id[&p]]),
                    children: children[k].iter().map(|&c| new_index[c]).collect(),
                    t: spec.t,
                    m: spec.m,
                    s: spec.s,
                }
            })
            .collect();
        for node in &nodes {
            if node.children.is_empty() && node.t < horizon {
                return Err(LatticeError::ShortPath { node: node.label, t: node.t, horizon });
            }
        }
        Ok(Self::from_nodes(horizon, nodes))
    }

    /// Assembles derived tables from nodes already in breadth-first order.
    fn from_nodes(horizon: usize, nodes: Vec<Node>) -> Self {
        let n = nodes.len();
        let mut leaves = Vec::new();
        let mut non_terminal = Vec::new();
        let mut nt_of_node = vec![None; n];
        let mut leaf_of_node = vec![None; n];
        for (i, node) in nodes.iter().enumerate() {
            if node.t == horizon {
                leaf_of_node[i] = Some(leaves.len());
                leaves.push(i);
            } else {
                nt_of_node[i] = Some(non_terminal.len());
                non_terminal.push(i);
            }
        }
        let mut paths = Vec::with_capacity(leaves.len());
        let mut increments = Vec::with_capacity(leaves.len());
        for &leaf in &leaves {
            let mut path = vec![leaf];
            let mut cur = leaf;
            while let Some(p) = nodes[cur].parent {
                path.push(p);
                cur = p;
            }
            path.reverse();
            let inc = path
                .windows(2)
                .map(|w| (nt_of_node[w[0]].unwrap(), nodes[w[1]].s - nodes[w[0]].s))
                .collect();
            paths.push(path);
            increments.push(inc);
        }
        let mut hasher = DefaultHasher::new();
        horizon.hash(&mut hasher);
        for node in &nodes {
            node.label.hash(&mut hasher);
            node.parent.hash(&mut hasher);
            node.t.hash(&mut hasher);
            node.m.to_bits().hash(&mut hasher);
            node.s.to_bits().hash(&mut hasher);
        }
        ScenarioLattice {
            horizon,
            nodes,
            leaves,
            non_terminal,
            nt_of_node,
            leaf_of_node,
            paths,
            increments,
            fingerprint: hasher.finish(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn num_non_terminal(&self) -> usize {
        self.non_terminal.len()
    }

    /// Node index of each leaf in canonical order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn non_terminal(&self) -> &[usize] {
        &self.non_terminal
    }

    pub fn nt_index(&self, node: usize) -> Option<usize> {
        self.nt_of_node[node]
    }

    pub fn leaf_index(&self, node: usize) -> Option<usize> {
        self.leaf_of_node[node]
    }

    /// Looks up a leaf by its input label.
    pub fn leaf_by_label(&self, label: u64) -> Result<usize, LatticeError> {
        self.leaves
            .iter()
            .position(|&i| self.nodes[i].label == label)
            .ok_or(LatticeError::UnknownLeaf(label))
    }

    pub fn leaf_labels(&self) -> Vec<u64> {
        self.leaves.iter().map(|&i| self.nodes[i].label).collect()
    }

    /// Node indices from the root to the given leaf.
    pub fn path(&self, leaf: usize) -> &[usize] {
        &self.paths[leaf]
    }

    /// Asset prices `S_0..S_T` along a path.
    pub fn path_prices(&self, leaf: usize) -> Vec<f64> {
        self.paths[leaf].iter().map(|&i| self.nodes[i].s).collect()
    }

    /// Money-market values `M_0..M_T` along a path.
    pub fn path_money(&self, leaf: usize) -> Vec<f64> {
        self.paths[leaf].iter().map(|&i| self.nodes[i].m).collect()
    }

    /// `(non-terminal index, S_t - S_{t-1})` for t = 1..T along a path.
    pub fn increments(&self, leaf: usize) -> &[(usize, f64)] {
        &self.increments[leaf]
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Leaves whose path passes through `node`.
    pub fn leaves_below(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(i) = stack.pop() {
            if let Some(l) = self.leaf_of_node[i] {
                out.push(l);
            }
            stack.extend(self.nodes[i].children.iter().rev().copied());
        }
        out.sort_unstable();
        out
    }

    /// True when the asset price never moves.
    pub fn is_constant_price(&self) -> bool {
        self.increments.iter().flatten().all(|&(_, d)| d == 0.0)
    }

    pub fn smallest_increment(&self) -> Option<f64> {
        self.increments
            .iter()
            .flatten()
            .map(|&(_, d)| d.abs())
            .filter(|&d| d > 0.0)
            .min_by(f64::total_cmp)
    }

    /// Gains of a strategy on one leaf.
    pub fn wealth(&self, th: &Strategy, leaf: usize) -> Result<f64, LatticeError> {
        self.check_strategy(th)?;
        if leaf >= self.num_leaves() {
            return Err(LatticeError::UnknownLeaf(leaf as u64));
        }
        Ok(self.gain(&th.holdings, leaf))
    }

    /// Gains of a strategy on every leaf.
    pub fn wealth_vector(&self, th: &Strategy) -> Result<Vec<f64>, LatticeError> {
        self.check_strategy(th)?;
        Ok(self.gains(&th.holdings))
    }

    pub(crate) fn gain(&self, holdings: &[f64], leaf: usize) -> f64 {
        self.increments[leaf].iter().map(|&(k, d)| holdings[k] * d).sum()
    }

    pub(crate) fn gains(&self, holdings: &[f64]) -> Vec<f64> {
        (0..self.num_leaves()).map(|l| self.gain(holdings, l)).collect()
    }

    fn check_strategy(&self, th: &Strategy) -> Result<(), LatticeError> {
        if th.fingerprint != self.fingerprint {
            return Err(LatticeError::LatticeMismatch);
        }
        if th.holdings.len() != self.num_non_terminal() {
            return Err(LatticeError::MissingHolding {
                expected: self.num_non_terminal(),
                got: th.holdings.len(),
            });
        }
        Ok(())
    }

    /// Martingale residual `sum_{l through n} w_l dS(l)` for each non-terminal node.
    pub fn martingale_residuals(&self, weights: &[f64]) -> Vec<f64> {
        let mut res = vec![0.0; self.num_non_terminal()];
        for (l, inc) in self.increments.iter().enumerate() {
            for &(k, d) in inc {
                res[k] += weights[l] * d;
            }
        }
        res
    }

    pub fn z_weight(&self, variant: ZVariant) -> Result<Claim, LatticeError> {
        let t = self.horizon;
        let values: Vec<f64> = match variant {
            ZVariant::SumPriceInverse => (0..self.num_leaves())
                .map(|l| self.path_prices(l).iter().map(|&s| s.max(1.0 / s)).sum())
                .collect(),
            ZVariant::TransportAnchored { rho, kappa } => {
                let mp = MetricParams::new(rho, kappa, 2.0)
                    .map_err(|e| LatticeError::InvalidMetricParams(e.to_string()))?;
                let anchor = self.anchor_path();
                let s0 = self.nodes[0].s;
                let factor = (rho * t as f64).exp() * (t as f64).powf(1.0 - 1.0 / kappa);
                (0..self.num_leaves())
                    .map(|l| {
                        let d = transport::path_distance(&mp, &self.path_point(l), &anchor)
                            .expect("paths share the horizon");
                        s0 + t as f64 + factor * d
                    })
                    .collect()
            }
        };
        for (l, &z) in values.iter().enumerate() {
            let bound = self.path_prices(l).iter().map(|s| s.abs()).sum::<f64>().max(1.0);
            if z < bound * (1.0 - 1e-12) {
                return Err(LatticeError::ZBound { leaf: l, z, bound });
            }
        }
        Claim::new(self, values)
    }

    /// The path `((m, s) at t = 0..T)` for a leaf.
    pub fn path_point(&self, leaf: usize) -> Vec<(f64, f64)> {
        self.paths[leaf].iter().map(|&i| (self.nodes[i].m, self.nodes[i].s)).collect()
    }

    /// `((a_0, s_0), (a_1, 1), ..., (a_T, 1))` with `a_t` the smallest money-market
    /// value at time t.
    pub fn anchor_path(&self) -> Vec<(f64, f64)> {
        let mut a = vec![f64::INFINITY; self.horizon + 1];
        for node in &self.nodes {
            a[node.t] = a[node.t].min(node.m);
        }
        let mut anchor: Vec<(f64, f64)> = a.into_iter().map(|m| (m, 1.0)).collect();
        anchor[0].1 = self.nodes[0].s;
        anchor
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZVariant {
    SumPriceInverse,
    TransportAnchored { rho: f64, kappa: f64 },
}

/// Probability weights on leaves, in canonical leaf order.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    weights: Vec<f64>,
    fingerprint: u64,
}

impl Measure {
    pub fn new(lat: &ScenarioLattice, weights: Vec<f64>) -> Result<Self, LatticeError> {
        if weights.len() != lat.num_leaves() {
            return Err(LatticeError::InvalidMeasure(format!(
                "{} weights for {} leaves",
                weights.len(),
                lat.num_leaves()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(LatticeError::InvalidMeasure(format!("weight {w} is negative or not finite")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(LatticeError::InvalidMeasure(format!("weights sum to {total}")));
        }
        Ok(Measure { weights, fingerprint: lat.fingerprint() })
    }

    /// Clips tiny negative entries produced by floating-point solvers and
    /// rescales to unit mass.
    pub fn normalized(lat: &ScenarioLattice, mut weights: Vec<f64>) -> Result<Self, LatticeError> {
        for w in weights.iter_mut() {
            if *w < 0.0 && *w > -1e-9 {
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(LatticeError::InvalidMeasure(format!("total mass {total}")));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(lat, weights)
    }

    pub fn uniform(lat: &ScenarioLattice) -> Self {
        let n = lat.num_leaves();
        Measure { weights: vec![1.0 / n as f64; n], fingerprint: lat.fingerprint() }
    }

    pub fn dirac(lat: &ScenarioLattice, leaf: usize) -> Result<Self, LatticeError> {
        if leaf >= lat.num_leaves() {
            return Err(LatticeError::UnknownLeaf(leaf as u64));
        }
        let mut weights = vec![0.0; lat.num_leaves()];
        weights[leaf] = 1.0;
        Ok(Measure { weights, fingerprint: lat.fingerprint() })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&l| self.weights[l] > 0.0).collect()
    }

    pub fn expectation(&self, c: &Claim) -> Result<f64, LatticeError> {
        if c.fingerprint != self.fingerprint {
            return Err(LatticeError::LatticeMismatch);
        }
        Ok(self.weights.iter().zip(&c.values).map(|(w, v)| w * v).sum())
    }

    pub fn is_on(&self, lat: &ScenarioLattice) -> bool {
        self.fingerprint == lat.fingerprint()
    }
}

/// A payoff per leaf in units of the terminal money-market account.
#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    values: Vec<f64>,
    fingerprint: u64,
}

impl Claim {
    pub fn new(lat: &ScenarioLattice, values: Vec<f64>) -> Result<Self, LatticeError> {
        if values.len() != lat.num_leaves() {
            return Err(LatticeError::InvalidMeasure(format!(
                "claim has {} values for {} leaves",
                values.len(),
                lat.num_leaves()
            )));
        }
        if let Some(l) = values.iter().position(|v| !v.is_finite()) {
            return Err(LatticeError::NonFiniteClaim(l));
        }
        Ok(Claim { values, fingerprint: lat.fingerprint() })
    }

    pub fn constant(lat: &ScenarioLattice, c: f64) -> Result<Self, LatticeError> {
        Self::new(lat, vec![c; lat.num_leaves()])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

/// Holdings `theta` per non-terminal node, in breadth-first order of those nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    holdings: Vec<f64>,
    fingerprint: u64,
}

impl Strategy {
    pub fn new(lat: &ScenarioLattice, holdings: Vec<f64>) -> Result<Self, LatticeError> {
        if holdings.len() != lat.num_non_terminal() {
            return Err(LatticeError::MissingHolding {
                expected: lat.num_non_terminal(),
                got: holdings.len(),
            });
        }
        Ok(Strategy { holdings, fingerprint: lat.fingerprint() })
    }

    pub fn zero(lat: &ScenarioLattice) -> Self {
        Strategy { holdings: vec![0.0; lat.num_non_terminal()], fingerprint: lat.fingerprint() }
    }

    pub fn holdings(&self) -> &[f64] {
        &self.holdings
    }
}

/// Recombining-free tree where every node has the same price multipliers.
/// Handy for fixtures: `factors` are applied to the parent price.
pub fn multiplicative_tree(horizon: usize, s0: f64, factors: &[f64]) -> Result<ScenarioLattice, LatticeError> {
    let mut specs = vec![NodeSpec { id: 0, parent: None, t: 0, m: 1.0, s: s0 }];
    let mut frontier = vec![0usize];
    for t in 1..=horizon {
        let mut next = Vec::new();
        for &p in &frontier {
            for f in factors {
                let id = specs.len() as u64;
                specs.push(NodeSpec { id, parent: Some(specs[p].id), t, m: 1.0, s: specs[p].s * f });
                next.push(id as usize);
            }
        }
        frontier = next;
    }
    ScenarioLattice::build(horizon, &specs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binomial(up: f64, down: f64) -> ScenarioLattice {
        let specs = [
            NodeSpec { id: 0, parent: None, t: 0, m: 1.0, s: 1.0 },
            NodeSpec { id: 1, parent: Some(0), t: 1, m: 1.0, s: up },
            NodeSpec { id: 2, parent: Some(0), t: 1, m: 1.0, s: down },
        ];
        ScenarioLattice::build(1, &specs).unwrap()
    }

    #[test]
    fn binomial_has_two_paths() {
        let lat = binomial(2.0, 0.5);
        assert_eq!(lat.num_leaves(), 2);
        assert_eq!(lat.num_non_terminal(), 1);
        assert_eq!(lat.path_prices(1), vec![1.0, 0.5]);
    }

    #[test]
    fn trinomial_counts() {
        let lat = multiplicative_tree(2, 1.0, &[1.2, 1.0, 0.8]).unwrap();
        assert_eq!(lat.num_nodes(), 13);
        assert_eq!(lat.num_leaves(), 9);
        assert_eq!(lat.num_non_terminal(), 4);
    }

    #[test]
    fn single_path_has_zero_gains() {
        let lat = multiplicative_tree(3, 1.0, &[1.0]).unwrap();
        assert_eq!(lat.num_leaves(), 1);
        let th = Strategy::new(&lat, vec![5.0, -2.0, 1.0]).unwrap();
        assert_eq!(lat.wealth(&th, 0).unwrap(), 0.0);
        assert!(lat.is_constant_price());
    }

    #[test]
    fn wealth_examples() {
        let lat = binomial(2.0, 0.5);
        let th = Strategy::new(&lat, vec![1.0]).unwrap();
        assert_eq!(lat.wealth(&th, 0).unwrap(), 1.0);
        let theta = 2.0 / 3.0 * 2f64.ln();
        let th = Strategy::new(&lat, vec![theta]).unwrap();
        assert!((lat.wealth(&th, 1).unwrap() - theta * (0.5 - 1.0)).abs() < 1e-15);
        assert!((lat.wealth(&th, 1).unwrap() + 0.2310).abs() < 1e-4);
        let zero = Strategy::zero(&lat);
        assert_eq!(lat.wealth_vector(&zero).unwrap(), vec![0.0, 0.0]);
        assert_eq!(lat.wealth(&zero, 7), Err(LatticeError::UnknownLeaf(7)));
    }

    #[test]
    fn expectations() {
        let lat = binomial(2.0, 0.5);
        let c = Claim::new(&lat, vec![1.0, 3.0]).unwrap();
        assert_eq!(Measure::uniform(&lat).expectation(&c).unwrap(), 2.0);
        assert_eq!(Measure::dirac(&lat, 1).unwrap().expectation(&c).unwrap(), 3.0);
        let s1 = Claim::new(&lat, vec![2.0, 0.5]).unwrap();
        let q = Measure::new(&lat, vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        assert!((q.expectation(&s1).unwrap() - 1.0).abs() < 1e-15);
        let other = binomial(2.0, 0.25);
        let foreign = Claim::new(&other, vec![0.0, 0.0]).unwrap();
        assert_eq!(q.expectation(&foreign), Err(LatticeError::LatticeMismatch));
    }

    #[test]
    fn construction_errors() {
        let root = NodeSpec { id: 0, parent: None, t: 0, m: 1.0, s: 1.0 };
        let bad_price = NodeSpec { id: 1, parent: Some(0), t: 1, m: 1.0, s: -1.0 };
        assert!(matches!(
            ScenarioLattice::build(1, &[root.clone(), bad_price]),
            Err(LatticeError::NonPositivePrice { .. })
        ));
        let second_root = NodeSpec { id: 1, parent: None, t: 0, m: 1.0, s: 1.0 };
        assert_eq!(
            ScenarioLattice::build(1, &[root.clone(), second_root]),
            Err(LatticeError::MultipleRoots(2))
        );
        let gap = NodeSpec { id: 1, parent: Some(0), t: 2, m: 1.0, s: 1.0 };
        assert!(matches!(ScenarioLattice::build(2, &[root.clone(), gap]), Err(LatticeError::TimeGap { .. })));
        let a = NodeSpec { id: 1, parent: Some(2), t: 1, m: 1.0, s: 1.0 };
        let b = NodeSpec { id: 2, parent: Some(1), t: 2, m: 1.0, s: 1.0 };
        // 1 -> 2 -> 1 with inconsistent times trips TimeGap before the cycle check
        assert!(ScenarioLattice::build(2, &[root.clone(), a, b]).is_err());
        let c1 = NodeSpec { id: 1, parent: Some(2), t: 1, m: 1.0, s: 1.0 };
        let c2 = NodeSpec { id: 2, parent: Some(1), t: 1, m: 1.0, s: 1.0 };
        let leaf = NodeSpec { id: 3, parent: Some(0), t: 1, m: 1.0, s: 1.0 };
        assert!(ScenarioLattice::build(1, &[root.clone(), leaf, c1, c2]).is_err());
        let short = ScenarioLattice::build(2, &[root]);
        assert!(matches!(short, Err(LatticeError::ShortPath { .. })));
    }

    #[test]
    fn cycle_with_consistent_times_is_unreachable() {
        // A self-parented node cannot satisfy the time rule, so cycles always
        // surface as TimeGap; the reachability check is the backstop.
        let root = NodeSpec { id: 0, parent: None, t: 0, m: 1.0, s: 1.0 };
        let selfish = NodeSpec { id: 5, parent: Some(5), t: 1, m: 1.0, s: 1.0 };
        assert!(ScenarioLattice::build(1, &[root, selfish]).is_err());
    }

    #[test]
    fn z_weights() {
        let specs = [
            NodeSpec { id: 0, parent: None, t: 0, m: 1.0, s: 1.0 },
            NodeSpec { id: 1, parent: Some(0), t: 1, m: 1.0, s: 2.0 },
            NodeSpec { id: 2, parent: Some(1), t: 2, m: 1.0, s: 0.5 },
        ];
        let lat = ScenarioLattice::build(2, &specs).unwrap();
        let z = lat.z_weight(ZVariant::SumPriceInverse).unwrap();
        assert_eq!(z.values(), &[5.0]);

        let flat = multiplicative_tree(3, 1.0, &[1.0]).unwrap();
        let z = flat.z_weight(ZVariant::SumPriceInverse).unwrap();
        assert_eq!(z.values(), &[4.0]);
        let z = flat.z_weight(ZVariant::TransportAnchored { rho: 0.3, kappa: 2.0 }).unwrap();
        assert_eq!(z.values(), &[1.0 + 3.0]);
    }
}
