//! Problem files: JSON schema, validation into a [`Problem`], and writing.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use rumax_core::ambiguity::{AmbiguityKind, AmbiguitySpec, MomentSpec};
use rumax_core::lattice::{Claim, Measure, NodeSpec, ScenarioLattice};
use rumax_core::solver::{Problem, Tolerances};
use rumax_core::transport::MetricParams;
use rumax_core::utility::{LeftTail, Tabulated, UtilityKind, UtilitySpec};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
}

fn invalid(msg: impl fmt::Display) -> ProblemError {
    ProblemError::Validation(msg.to_string())
}

fn missing(pointer: &str) -> ProblemError {
    ProblemError::Schema { pointer: pointer.to_string(), message: "missing field".into() }
}

/// A strictly positive finite number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Positive(pub f64);

impl<'de> Deserialize<'de> for Positive {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if v.is_finite() && v > 0.0 {
            Ok(Positive(v))
        } else {
            Err(serde::de::Error::custom(format!("expected a positive number, got {v}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: u64,
    pub parent: Option<u64>,
    pub t: usize,
    pub m: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityType {
    Exponential,
    Tabulated,
    TabulatedPerPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailType {
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailEntry {
    #[serde(rename = "type")]
    pub kind: TailType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub knots: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_tail: Option<TailEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityEntry {
    #[serde(rename = "type")]
    pub kind: UtilityType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Positive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_tail: Option<TailEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tables: Option<Vec<TableEntry>>,
    /// Per-path scale `a`: the utility on a path is `u(a x)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<Positive>>,
}

/// Leaf weights, in canonical order or keyed by leaf ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaves: Option<Vec<u64>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbiguityType {
    FiniteHull,
    MomentSet,
    WassersteinBall,
    WassersteinPenalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguityEntry {
    #[serde(rename = "type")]
    pub kind: AmbiguityType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generators: Option<Vec<MeasureEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_exponents: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_bounds: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_exponents: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_bounds: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undiscounted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<MeasureEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<Positive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Positive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primal_tol: Option<Positive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_tol: Option<Positive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub horizon: usize,
    pub nodes: Vec<NodeEntry>,
    /// Claim values in canonical leaf order; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<Vec<f64>>,
    pub utility: UtilityEntry,
    pub ambiguity: AmbiguityEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<TolerancesEntry>,
}

pub(crate) fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = pointer(e.path());
            let inner = e.into_inner();
            // strip serde_json's position suffix; the pointer locates the field
            let message = inner.to_string().split(" at line ").next().unwrap_or_default().to_string();
            ProblemError::Schema { pointer, message }
        })
    }

    pub fn to_json(&self) -> String {
        crate::json::to_string(self)
    }

    pub fn lattice(&self) -> Result<Arc<ScenarioLattice>, ProblemError> {
        let specs: Vec<NodeSpec> =
            self.nodes.iter().map(|n| NodeSpec { id: n.id, parent: n.parent, t: n.t, m: n.m, s: n.s }).collect();
        Ok(Arc::new(ScenarioLattice::build(self.horizon, &specs).map_err(invalid)?))
    }

    pub fn to_problem(&self) -> Result<Problem, ProblemError> {
        let lat = self.lattice()?;
        let n = lat.num_leaves();
        let claim = match &self.claim {
            Some(v) if v.len() != n => return Err(invalid(format!("claim has {} values for {n} leaves", v.len()))),
            Some(v) => Claim::new(&lat, v.clone()).map_err(invalid)?,
            None => Claim::constant(&lat, 0.0).map_err(invalid)?,
        };
        let utility = self.utility.to_spec()?;
        let ambiguity = self.ambiguity.to_spec(&lat)?;
        let mut tol = Tolerances::default();
        if let Some(t) = &self.tolerances {
            if let Some(v) = t.primal_tol {
                tol.primal_tol = v.0;
            }
            if let Some(v) = t.dual_tol {
                tol.dual_tol = v.0;
            }
            if let Some(v) = t.max_iters {
                tol.max_iters = v;
            }
        }
        Problem::new(lat, claim, Arc::new(utility), Arc::new(ambiguity), tol).map_err(invalid)
    }
}

fn tail(entry: &Option<TailEntry>, at: &str) -> Result<LeftTail, ProblemError> {
    match entry {
        None => Ok(LeftTail::Linear),
        Some(TailEntry { kind: TailType::Linear, .. }) => Ok(LeftTail::Linear),
        Some(TailEntry { kind: TailType::Quadratic, kappa }) => {
            let kappa = kappa.ok_or_else(|| missing(&format!("{at}/left_tail/kappa")))?;
            Ok(LeftTail::Quadratic { kappa })
        }
    }
}

fn table(
    knots: &[[f64; 2]],
    left: Option<f64>,
    right: Option<f64>,
    left_tail: &Option<TailEntry>,
    at: &str,
) -> Result<Tabulated, ProblemError> {
    let knots: Vec<(f64, f64)> = knots.iter().map(|k| (k[0], k[1])).collect();
    // default tails: continue the first segment on the left, flat on the right
    let first_slope = knots.windows(2).next().map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0));
    let left = left.or(first_slope).ok_or_else(|| missing(&format!("{at}/left_slope")))?;
    let right = right.unwrap_or(0.0);
    Tabulated::new(knots, left, right, tail(left_tail, at)?).map_err(invalid)
}

impl UtilityEntry {
    pub fn to_spec(&self) -> Result<UtilitySpec, ProblemError> {
        let kind = match self.kind {
            UtilityType::Exponential => {
                UtilityKind::Exponential { lambda: self.lambda.ok_or_else(|| missing("/utility/lambda"))?.0 }
            }
            UtilityType::Tabulated => {
                let knots = self.knots.as_ref().ok_or_else(|| missing("/utility/knots"))?;
                UtilityKind::Tabulated(table(knots, self.left_slope, self.right_slope, &self.left_tail, "/utility")?)
            }
            UtilityType::TabulatedPerPath => {
                let tables = self.tables.as_ref().ok_or_else(|| missing("/utility/tables"))?;
                let tables = tables
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        table(&t.knots, t.left_slope, t.right_slope, &t.left_tail, &format!("/utility/tables/{i}"))
                    })
                    .collect::<Result<_, _>>()?;
                UtilityKind::TabulatedPerPath(tables)
            }
        };
        let scale = self.scale.as_ref().map(|s| s.iter().map(|p| p.0).collect());
        UtilitySpec::new(kind, scale).map_err(invalid)
    }
}

impl MeasureEntry {
    pub fn from_measure(m: &Measure) -> Self {
        MeasureEntry { leaves: None, weights: m.weights().to_vec() }
    }

    pub fn to_measure(&self, lat: &ScenarioLattice, at: &str) -> Result<Measure, ProblemError> {
        let n = lat.num_leaves();
        let weights = match &self.leaves {
            None => {
                if self.weights.len() != n {
                    return Err(invalid(format!(
                        "{at}: {} weights for {n} leaves; the measure lives on a different lattice",
                        self.weights.len()
                    )));
                }
                self.weights.clone()
            }
            Some(ids) => {
                if ids.len() != self.weights.len() {
                    return Err(invalid(format!("{at}: leaves and weights differ in length")));
                }
                let mut w = vec![0.0; n];
                for (&id, &v) in ids.iter().zip(&self.weights) {
                    let l = lat.leaf_by_label(id).map_err(|_| {
                        invalid(format!("{at}: node {id} is not a leaf; the measure lives on a different lattice"))
                    })?;
                    w[l] += v;
                }
                w
            }
        };
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid(format!("{at}: weights must be nonnegative")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(invalid(format!("{at}: weights sum to {total}")));
        }
        Measure::normalized(lat, weights).map_err(invalid)
    }
}

impl AmbiguityEntry {
    fn metric(&self) -> Result<MetricParams, ProblemError> {
        let rho = self.rho.ok_or_else(|| missing("/ambiguity/rho"))?;
        let kappa = self.kappa.ok_or_else(|| missing("/ambiguity/kappa"))?;
        let p = self.p.ok_or_else(|| missing("/ambiguity/p"))?;
        MetricParams::new(rho, kappa, p).map_err(invalid)
    }

    pub fn to_spec(&self, lat: &Arc<ScenarioLattice>) -> Result<AmbiguitySpec, ProblemError> {
        let kind = match self.kind {
            AmbiguityType::FiniteHull => {
                let gens = self.generators.as_ref().ok_or_else(|| missing("/ambiguity/generators"))?;
                let generators = gens
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g.to_measure(lat, &format!("/ambiguity/generators/{i}")))
                    .collect::<Result<_, _>>()?;
                AmbiguityKind::FiniteHull { generators }
            }
            AmbiguityType::MomentSet => AmbiguityKind::MomentSet(MomentSpec {
                negative_exponents: self.negative_exponents.clone().ok_or_else(|| missing("/ambiguity/negative_exponents"))?,
                negative_bounds: self.negative_bounds.clone().ok_or_else(|| missing("/ambiguity/negative_bounds"))?,
                positive_exponents: self.positive_exponents.clone().ok_or_else(|| missing("/ambiguity/positive_exponents"))?,
                positive_bounds: self.positive_bounds.clone().ok_or_else(|| missing("/ambiguity/positive_bounds"))?,
                undiscounted: self.undiscounted.unwrap_or(false),
            }),
            AmbiguityType::WassersteinBall => AmbiguityKind::WassersteinBall {
                reference: self
                    .reference
                    .as_ref()
                    .ok_or_else(|| missing("/ambiguity/reference"))?
                    .to_measure(lat, "/ambiguity/reference")?,
                radius: self.radius.ok_or_else(|| missing("/ambiguity/radius"))?.0,
                metric: self.metric()?,
            },
            AmbiguityType::WassersteinPenalty => AmbiguityKind::WassersteinPenalty {
                reference: self
                    .reference
                    .as_ref()
                    .ok_or_else(|| missing("/ambiguity/reference"))?
                    .to_measure(lat, "/ambiguity/reference")?,
                weight: self.weight.ok_or_else(|| missing("/ambiguity/weight"))?.0,
                metric: self.metric()?,
            },
        };
        AmbiguitySpec::new(lat.clone(), kind).map_err(invalid)
    }
}

pub fn parse_problem_str(text: &str) -> Result<Problem, ProblemError> {
    ProblemFile::from_json(text)?.to_problem()
}

pub fn read_problem_file(path: &Path) -> Result<ProblemFile, ProblemError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ProblemError::Io { path: path.display().to_string(), source })?;
    ProblemFile::from_json(&text)
}

pub fn parse_problem(path: &Path) -> Result<Problem, ProblemError> {
    read_problem_file(path)?.to_problem()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BINOMIAL: &str = r#"{
        "horizon": 1,
        "nodes": [
            {"id": 0, "parent": null, "t": 0, "m": 1.0, "s": 1.0},
            {"id": 1, "parent": 0, "t": 1, "m": 1.0, "s": 2.0},
            {"id": 2, "parent": 0, "t": 1, "m": 1.0, "s": 0.5}
        ],
        "utility": {"type": "exponential", "lambda": 1.0},
        "ambiguity": {"type": "finite_hull", "generators": [{"weights": [0.5, 0.5]}]}
    }"#;

    #[test]
    fn parses_binomial() {
        let prob = parse_problem_str(BINOMIAL).unwrap();
        assert_eq!(prob.lattice().num_leaves(), 2);
        assert_eq!(prob.claim().values(), &[0.0, 0.0]);
    }

    #[test]
    fn negative_lambda_points_at_field() {
        let text = BINOMIAL.replace("\"lambda\": 1.0", "\"lambda\": -1.0");
        match parse_problem_str(&text) {
            Err(ProblemError::Schema { pointer, .. }) => assert_eq!(pointer, "/utility/lambda"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn foreign_reference_is_rejected() {
        let text = BINOMIAL.replace(r#"{"weights": [0.5, 0.5]}"#, r#"{"leaves": [1, 7], "weights": [0.5, 0.5]}"#);
        assert!(matches!(parse_problem_str(&text), Err(ProblemError::Validation(_))));
        let text = BINOMIAL.replace(r#"{"weights": [0.5, 0.5]}"#, r#"{"weights": [0.25, 0.25, 0.5]}"#);
        assert!(matches!(parse_problem_str(&text), Err(ProblemError::Validation(_))));
    }

    #[test]
    fn round_trip() {
        let file = ProblemFile::from_json(BINOMIAL).unwrap();
        let again = ProblemFile::from_json(&file.to_json()).unwrap();
        assert_eq!(file, again);
    }

    #[test]
    fn nested_pointer() {
        let text = BINOMIAL.replace("\"s\": 2.0", "\"s\": \"two\"");
        match ProblemFile::from_json(&text) {
            Err(ProblemError::Schema { pointer, .. }) => assert_eq!(pointer, "/nodes/1/s"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
