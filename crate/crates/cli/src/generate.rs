//! Seeded random instances. Every non-terminal node gets children strictly
//! above and strictly below its price, so the uniform measure on any
//! generated tree is arbitrage free.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::problem::{
    AmbiguityEntry, AmbiguityType, MeasureEntry, NodeEntry, Positive, ProblemFile, TailEntry, TailType,
    UtilityEntry, UtilityType,
};

#[derive(Debug, Error, PartialEq)]
pub enum GenerateError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub horizon: usize,
    pub branching: usize,
    pub kind: AmbiguityType,
}

pub const MAX_HORIZON: usize = 4;
pub const MAX_BRANCHING: usize = 4;

#[derive(Debug, Clone)]
pub struct Generated {
    pub file: ProblemFile,
    /// Single-child nodes: the price never moves and there is nothing to trade.
    pub degenerate: bool,
}

impl Generated {
    pub fn to_json(&self) -> String {
        self.file.to_json()
    }
}

/// Six decimals keeps files readable and exact on reload.
fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| round6(x / total)).collect();
    // push the rounding residue onto the largest weight
    let resid = 1.0 - w.iter().sum::<f64>();
    let big = (0..n).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap_or(0);
    w[big] += resid;
    w
}

fn child_factors(rng: &mut ChaCha8Rng, branching: usize) -> Vec<f64> {
    if branching == 1 {
        return vec![1.0];
    }
    loop {
        let mut logs = vec![rng.gen_range(0.05..0.4), -rng.gen_range(0.05..0.4)];
        for _ in 2..branching {
            logs.push(rng.gen_range(-0.4..0.4));
        }
        let mut f: Vec<f64> = logs.iter().map(|z: &f64| round6(z.exp())).collect();
        f.sort_by(|a, b| b.total_cmp(a));
        let distinct = f.windows(2).all(|w| w[0] - w[1] > 1e-3);
        if distinct && f[0] > 1.0 && f[branching - 1] < 1.0 {
            return f;
        }
    }
}

fn nodes(rng: &mut ChaCha8Rng, shape: &Shape) -> Vec<NodeEntry> {
    let mut out = vec![NodeEntry { id: 0, parent: None, t: 0, m: 1.0, s: 1.0 }];
    let mut frontier = vec![0usize];
    for t in 1..=shape.horizon {
        let mut next = Vec::new();
        for &i in &frontier {
            let s = out[i].s;
            let id0 = out[i].id;
            for f in child_factors(rng, shape.branching) {
                let id = out.len() as u64;
                out.push(NodeEntry { id, parent: Some(id0), t, m: 1.0, s: round6(s * f) });
                next.push(out.len() - 1);
            }
        }
        frontier = next;
    }
    out
}

fn utility(rng: &mut ChaCha8Rng) -> UtilityEntry {
    let blank = UtilityEntry {
        kind: UtilityType::Exponential,
        lambda: None,
        knots: None,
        left_slope: None,
        right_slope: None,
        left_tail: None,
        tables: None,
        scale: None,
    };
    if rng.gen_bool(0.8) {
        return UtilityEntry { lambda: Some(Positive(round6(rng.gen_range(0.5..2.0)))), ..blank };
    }
    // concave piecewise-linear: decreasing slopes, flat right tail, quadratic left tail
    let mut slopes: Vec<f64> = (0..5).map(|_| rng.gen_range(0.1..3.0)).collect();
    slopes.sort_by(|a, b| b.total_cmp(a));
    let mut knots = vec![[-2.0, round6(-2.0 * slopes[0])]];
    for (k, s) in slopes.iter().enumerate().skip(1) {
        let [x, u] = knots[k - 1];
        knots.push([x + 1.0, round6(u + s)]);
    }
    UtilityEntry {
        kind: UtilityType::Tabulated,
        knots: Some(knots),
        left_slope: Some(round6(slopes[0] + rng.gen_range(0.0..1.0))),
        right_slope: Some(0.0),
        left_tail: Some(TailEntry { kind: TailType::Quadratic, kappa: Some(round6(rng.gen_range(0.1..1.0))) }),
        ..blank
    }
}

fn ambiguity(rng: &mut ChaCha8Rng, shape: &Shape, leaf_prices: &[Vec<f64>]) -> AmbiguityEntry {
    let n = leaf_prices.len();
    let mut entry = AmbiguityEntry {
        kind: shape.kind,
        generators: None,
        negative_exponents: None,
        negative_bounds: None,
        positive_exponents: None,
        positive_bounds: None,
        undiscounted: None,
        reference: None,
        radius: None,
        weight: None,
        rho: None,
        kappa: None,
        p: None,
    };
    let reference = MeasureEntry { leaves: None, weights: weights(rng, n) };
    match shape.kind {
        AmbiguityType::FiniteHull => {
            let k = rng.gen_range(2..=3);
            entry.generators = Some((0..k).map(|_| MeasureEntry { leaves: None, weights: weights(rng, n) }).collect());
        }
        AmbiguityType::MomentSet => {
            let bounds = |e: f64, slack: f64| -> Vec<f64> {
                (1..=shape.horizon)
                    .map(|t| {
                        let m: f64 = leaf_prices.iter().zip(&reference.weights).map(|(s, w)| w * s[t].powf(e)).sum();
                        round6(m * (1.0 + slack) + 1e-6)
                    })
                    .collect()
            };
            let (sn, sp) = (rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3));
            entry.negative_exponents = Some(vec![-2.0]);
            entry.negative_bounds = Some(vec![bounds(-2.0, sn)]);
            entry.positive_exponents = Some(vec![2.0]);
            entry.positive_bounds = Some(vec![bounds(2.0, sp)]);
        }
        AmbiguityType::WassersteinBall | AmbiguityType::WassersteinPenalty => {
            entry.rho = Some(round6(rng.gen_range(0.5..2.0)));
            entry.kappa = Some(1.0);
            entry.p = Some(*[1.5, 2.0].choose(rng).unwrap());
            if shape.kind == AmbiguityType::WassersteinBall {
                entry.radius = Some(Positive(round6(rng.gen_range(0.05..0.3))));
            } else {
                entry.weight = Some(Positive(round6(rng.gen_range(0.5..5.0))));
            }
            entry.reference = Some(reference);
        }
    }
    entry
}

pub fn generate_instance(seed: u64, shape: Shape) -> Result<Generated, GenerateError> {
    if shape.horizon == 0 || shape.horizon > MAX_HORIZON {
        return Err(GenerateError::InvalidShape(format!("horizon {} outside 1..={MAX_HORIZON}", shape.horizon)));
    }
    if shape.branching == 0 || shape.branching > MAX_BRANCHING {
        return Err(GenerateError::InvalidShape(format!(
            "branching {} outside 1..={MAX_BRANCHING}",
            shape.branching
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = nodes(&mut rng, &shape);
    // prices along each leaf's path, leaves in id order
    let parent_of: Vec<Option<u64>> = nodes.iter().map(|n| n.parent).collect();
    let leaf_prices: Vec<Vec<f64>> = nodes
        .iter()
        .filter(|n| n.t == shape.horizon)
        .map(|leaf| {
            let mut path = vec![leaf.s];
            let mut cur = leaf.parent;
            while let Some(p) = cur {
                path.push(nodes[p as usize].s);
                cur = parent_of[p as usize];
            }
            path.reverse();
            path
        })
        .collect();
    let n = leaf_prices.len();
    let claim: Vec<f64> = (0..n).map(|_| round6(rng.gen_range(-1.0..1.0))).collect();
    let utility = utility(&mut rng);
    let ambiguity = ambiguity(&mut rng, &shape, &leaf_prices);
    Ok(Generated {
        file: ProblemFile { horizon: shape.horizon, nodes, claim: Some(claim), utility, ambiguity, tolerances: None },
        degenerate: shape.branching == 1,
    })
}
