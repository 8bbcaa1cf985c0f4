//! Random utility functions, their convex conjugates and v-divergences.
//!
//! Two families ship: exponential utility `u(x) = -exp(-lambda x)` and
//! piecewise-linear concave tables with declared tails. Either can depend on
//! the path through a positive per-leaf scale `a`, giving `u(w, x) = u~(a x)`
//! and `v(w, y) = v~(y / a)`.

use std::sync::Arc;

use thiserror::Error;

use crate::ambiguity::{AmbiguityError, AmbiguitySpec, ConvexInnerResult};
use crate::lattice::{LatticeError, Measure};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UtilityError {
    #[error("invalid utility specification: {0}")]
    InvalidSpec(String),
    #[error("conjugate evaluated at negative slope {0}")]
    NegativeSlope(f64),
    #[error("scale q must be nonnegative, got {0}")]
    NegativeScale(f64),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Ambiguity(#[from] Box<AmbiguityError>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeftTail {
    /// Continue with the declared left slope.
    Linear,
    /// Subtract `kappa (x_1 - x)^2` beyond the first knot.
    Quadratic { kappa: f64 },
}

/// Piecewise-linear utility through `knots`, extended by `left_slope` and
/// `right_slope` outside the knot range.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    knots: Vec<(f64, f64)>,
    left_slope: f64,
    right_slope: f64,
    left_tail: LeftTail,
}

impl Tabulated {
    pub fn new(
        knots: Vec<(f64, f64)>,
        left_slope: f64,
        right_slope: f64,
        left_tail: LeftTail,
    ) -> Result<Self, UtilityError> {
        if knots.is_empty() {
            return Err(UtilityError::InvalidSpec("tabulated utility needs at least one knot".into()));
        }
        if knots.iter().any(|(x, u)| !x.is_finite() || !u.is_finite()) {
            return Err(UtilityError::InvalidSpec("knots must be finite".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(UtilityError::InvalidSpec("knot abscissae must be strictly increasing".into()));
        }
        if !left_slope.is_finite() || !right_slope.is_finite() {
            return Err(UtilityError::InvalidSpec("tail slopes must be finite".into()));
        }
        if let LeftTail::Quadratic { kappa } = left_tail {
            if !(kappa.is_finite() && kappa >= 0.0) {
                return Err(UtilityError::InvalidSpec(format!("left tail kappa must be >= 0, got {kappa}")));
            }
        }
        Ok(Tabulated { knots, left_slope, right_slope, left_tail })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn left_slope(&self) -> f64 {
        self.left_slope
    }

    pub fn right_slope(&self) -> f64 {
        self.right_slope
    }

    pub fn left_tail(&self) -> LeftTail {
        self.left_tail
    }

    fn kappa(&self) -> f64 {
        match self.left_tail {
            LeftTail::Linear => 0.0,
            LeftTail::Quadratic { kappa } => kappa,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (x1, u1) = self.knots[0];
        let (xk, uk) = *self.knots.last().unwrap();
        if x < x1 {
            return u1 + self.left_slope * (x - x1) - self.kappa() * (x1 - x).powi(2);
        }
        if x >= xk {
            return uk + self.right_slope * (x - xk);
        }
        let i = self.knots.partition_point(|k| k.0 <= x) - 1;
        let (xa, ua) = self.knots[i];
        let (xb, ub) = self.knots[i + 1];
        ua + (ub - ua) * (x - xa) / (xb - xa)
    }

    /// Right derivative.
    pub fn derivative(&self, x: f64) -> f64 {
        let (x1, _) = self.knots[0];
        let (xk, _) = *self.knots.last().unwrap();
        if x < x1 {
            return self.left_slope + 2.0 * self.kappa() * (x1 - x);
        }
        if x >= xk {
            return self.right_slope;
        }
        let i = self.knots.partition_point(|k| k.0 <= x) - 1;
        let (xa, ua) = self.knots[i];
        let (xb, ub) = self.knots[i + 1];
        (ub - ua) / (xb - xa)
    }

    /// Slopes from left to right: left tail at the first knot, segments, right tail.
    pub fn slopes(&self) -> Vec<f64> {
        let mut s = vec![self.left_slope];
        s.extend(self.knots.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)));
        s.push(self.right_slope);
        s
    }

    /// `sup_x u(x) - x y` together with a maximizer, by bracketing the slope.
    pub fn conjugate(&self, y: f64) -> (f64, Option<f64>) {
        if y < self.right_slope {
            return (f64::INFINITY, None);
        }
        let (mut best, mut arg) = (f64::NEG_INFINITY, self.knots[0].0);
        for &(x, u) in &self.knots {
            let val = u - x * y;
            if val > best {
                best = val;
                arg = x;
            }
        }
        if y > self.left_slope {
            let kappa = self.kappa();
            if kappa == 0.0 {
                return (f64::INFINITY, None);
            }
            let (x1, u1) = self.knots[0];
            let z = (y - self.left_slope) / (2.0 * kappa);
            let val = u1 - x1 * y + (y - self.left_slope).powi(2) / (4.0 * kappa);
            if val > best {
                best = val;
                arg = x1 - z;
            }
        }
        (best, Some(arg))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum UtilityKind {
    Exponential { lambda: f64 },
    /// One table for all paths.
    Tabulated(Tabulated),
    /// One table per leaf, canonical order.
    TabulatedPerPath(Vec<Tabulated>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySpec {
    kind: UtilityKind,
    scale: Option<Vec<f64>>,
}

impl UtilitySpec {
    pub fn new(kind: UtilityKind, scale: Option<Vec<f64>>) -> Result<Self, UtilityError> {
        if let UtilityKind::Exponential { lambda } = kind {
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(UtilityError::InvalidSpec(format!("lambda must be > 0, got {lambda}")));
            }
        }
        if let UtilityKind::TabulatedPerPath(tables) = &kind {
            if tables.is_empty() {
                return Err(UtilityError::InvalidSpec("per-path table list is empty".into()));
            }
        }
        if let Some(a) = &scale {
            if a.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(UtilityError::InvalidSpec("per-path scales must be positive".into()));
            }
        }
        Ok(UtilitySpec { kind, scale })
    }

    pub fn exponential(lambda: f64) -> Result<Self, UtilityError> {
        Self::new(UtilityKind::Exponential { lambda }, None)
    }

    pub fn kind(&self) -> &UtilityKind {
        &self.kind
    }

    pub fn scale(&self) -> Option<&[f64]> {
        self.scale.as_deref()
    }

    /// `Some(lambda)` for exponential utility without path dependence.
    pub fn plain_exponential(&self) -> Option<f64> {
        match (&self.kind, &self.scale) {
            (UtilityKind::Exponential { lambda }, None) => Some(*lambda),
            _ => None,
        }
    }

    /// Number of leaves this spec is tied to, if any.
    pub fn leaf_count(&self) -> Option<usize> {
        match (&self.kind, &self.scale) {
            (UtilityKind::TabulatedPerPath(t), _) => Some(t.len()),
            (_, Some(a)) => Some(a.len()),
            _ => None,
        }
    }

    fn a(&self, leaf: usize) -> f64 {
        self.scale.as_ref().map_or(1.0, |a| a[leaf])
    }

    fn table(&self, leaf: usize) -> &Tabulated {
        match &self.kind {
            UtilityKind::Tabulated(t) => t,
            UtilityKind::TabulatedPerPath(ts) => &ts[leaf],
            UtilityKind::Exponential { .. } => unreachable!("exponential utility has no table"),
        }
    }

    /// `u(w, x)` on the path of `leaf`.
    pub fn eval_u(&self, leaf: usize, x: f64) -> f64 {
        let ax = self.a(leaf) * x;
        match &self.kind {
            UtilityKind::Exponential { lambda } => -(-lambda * ax).exp(),
            _ => self.table(leaf).eval(ax),
        }
    }

    /// Right derivative of `u(w, .)` at `x`.
    pub fn derivative(&self, leaf: usize, x: f64) -> f64 {
        let a = self.a(leaf);
        match &self.kind {
            UtilityKind::Exponential { lambda } => a * lambda * (-lambda * a * x).exp(),
            _ => a * self.table(leaf).derivative(a * x),
        }
    }

    /// `sup_x {u(w, x) - u(w, 0)}` over `x >= 0`.
    pub fn upside(&self, leaf: usize) -> f64 {
        match &self.kind {
            UtilityKind::Exponential { .. } => 1.0,
            _ => {
                let t = self.table(leaf);
                if t.right_slope > 0.0 {
                    return f64::INFINITY;
                }
                let u0 = t.eval(0.0);
                let mut best: f64 = 0.0;
                for &(x, u) in &t.knots {
                    if x >= 0.0 {
                        best = best.max(u - u0);
                    }
                }
                best
            }
        }
    }
}

/// Convex conjugate `v(w, y) = sup_x {u(w, x) - x y}` of a utility spec.
#[derive(Debug, Clone)]
pub struct Conjugate {
    spec: Arc<UtilitySpec>,
}

impl Conjugate {
    pub fn new(spec: Arc<UtilitySpec>) -> Self {
        Conjugate { spec }
    }

    pub fn spec(&self) -> &UtilitySpec {
        &self.spec
    }

    /// `v(w, y)`, possibly `+inf`.
    pub fn value(&self, leaf: usize, y: f64) -> Result<f64, UtilityError> {
        if y < 0.0 || y.is_nan() {
            return Err(UtilityError::NegativeSlope(y));
        }
        Ok(self.value_unchecked(leaf, y))
    }

    pub(crate) fn value_unchecked(&self, leaf: usize, y: f64) -> f64 {
        let a = self.spec.a(leaf);
        let y = y / a;
        match &self.spec.kind {
            UtilityKind::Exponential { lambda } => exp_conjugate(*lambda, y),
            _ => self.spec.table(leaf).conjugate(y).0,
        }
    }

    /// A maximizer `x*(y)` of `u(w, x) - x y`, when the supremum is attained.
    /// At `y = 0` under exponential utility the supremum is not attained.
    pub fn argmax(&self, leaf: usize, y: f64) -> Option<f64> {
        let a = self.spec.a(leaf);
        let ys = y / a;
        match &self.spec.kind {
            UtilityKind::Exponential { lambda } => {
                (ys > 0.0).then(|| -(ys / lambda).ln() / lambda / a)
            }
            _ => self.spec.table(leaf).conjugate(ys).1.map(|x| x / a),
        }
    }

    /// Perspective `p v(r / p)` with its closed extension at `p = 0`.
    pub fn perspective(&self, leaf: usize, r: f64, p: f64) -> f64 {
        if p > 0.0 {
            p * self.value_unchecked(leaf, r / p)
        } else if r > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }

    /// A supporting cut of the perspective in `p` for fixed `r`: returns
    /// `(slope, intercept)` with `p v(r/p) >= slope p + intercept` for all `p >= 0`
    /// and equality at `p_hint` when `p_hint > 0`.
    ///
    /// Every `x` gives the cut `p u(x) - r x`, since `v(y) >= u(x) - x y`.
    pub fn perspective_cut(&self, leaf: usize, r: f64, p_hint: f64) -> (f64, f64) {
        if r <= 0.0 {
            // p v(0) is linear in p (v(0) may be +inf only when u is unbounded above)
            let v0 = self.value_unchecked(leaf, 0.0);
            return (v0, 0.0);
        }
        let x = self
            .argmax(leaf, r / p_hint)
            .unwrap_or_else(|| panic!("conjugate not attained at leaf {leaf}, y = {}", r / p_hint));
        (self.spec.eval_u(leaf, x), -r * x)
    }
}

/// Conjugate of `-exp(-lambda x)`.
pub fn exp_conjugate(lambda: f64, y: f64) -> f64 {
    if y == 0.0 {
        0.0
    } else {
        let z = y / lambda;
        z * (z.ln() - 1.0)
    }
}

/// `D_v(qQ || P) = E^P v(q dQ/dP)`, `+inf` unless `qQ << P`.
pub fn divergence_dv(conj: &Conjugate, q: f64, big_q: &Measure, p: &Measure) -> Result<f64, UtilityError> {
    if q < 0.0 {
        return Err(UtilityError::NegativeScale(q));
    }
    if big_q.fingerprint() != p.fingerprint() {
        return Err(LatticeError::LatticeMismatch.into());
    }
    let mut total = 0.0;
    for (l, (&ql, &pl)) in big_q.weights().iter().zip(p.weights()).enumerate() {
        total += conj.perspective(l, q * ql, pl);
        if total == f64::INFINITY {
            break;
        }
    }
    Ok(total)
}

/// `D^alpha_v(qQ) = inf_{P in set} {D_v(qQ || P) + alpha(P)}`.
pub fn robust_divergence(
    conj: &Conjugate,
    q: f64,
    big_q: &Measure,
    amb: &AmbiguitySpec,
) -> Result<ConvexInnerResult, UtilityError> {
    if q < 0.0 {
        return Err(UtilityError::NegativeScale(q));
    }
    if big_q.fingerprint() != amb.lattice().fingerprint() {
        return Err(LatticeError::LatticeMismatch.into());
    }
    let r: Vec<f64> = big_q.weights().iter().map(|w| q * w).collect();
    let leaf_fn = PerspectiveFn { conj, r: &r };
    amb.convex_inner_min(&leaf_fn).map_err(|e| UtilityError::Ambiguity(Box::new(e)))
}

/// Separable convex function of the leaf weights used by the inner solver.
pub trait LeafConvex: Sync {
    /// `f_l(p)`, possibly `+inf`.
    fn value(&self, leaf: usize, p: f64) -> f64;
    /// A cut `(slope, intercept)` valid for all `p >= 0` and tight at `p`.
    /// Called only where `value(leaf, p)` is finite.
    fn cut(&self, leaf: usize, p: f64) -> (f64, f64);
}

pub(crate) struct PerspectiveFn<'a> {
    pub(crate) conj: &'a Conjugate,
    pub(crate) r: &'a [f64],
}

impl LeafConvex for PerspectiveFn<'_> {
    fn value(&self, leaf: usize, p: f64) -> f64 {
        self.conj.perspective(leaf, self.r[leaf], p)
    }

    fn cut(&self, leaf: usize, p: f64) -> (f64, f64) {
        self.conj.perspective_cut(leaf, self.r[leaf], p)
    }
}

/// Per-condition outcome of [`check_conditions`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionStatus {
    pub passed: bool,
    pub detail: String,
    /// `(leaf, point)` exhibiting a failure, or the extreme point inspected.
    pub witness: Option<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    /// Nondecreasing and concave.
    pub u1: ConditionStatus,
    /// Bounded above on the right half-line (advisory on finite path sets).
    pub u2: ConditionStatus,
    /// Superlinear decay of `u(x)/|x|` as `x -> -inf`.
    pub u3: ConditionStatus,
    /// `sup |v(w, y)|` finite over `y` in `[0, y_max]`.
    pub conjugate_bound: ConditionStatus,
}

impl ConditionReport {
    pub fn all_passed(&self) -> bool {
        self.u1.passed && self.u2.passed && self.u3.passed && self.conjugate_bound.passed
    }
}

/// Evaluation grid for the audit: `x` points for shape checks and `y_max`
/// for the conjugate bound.
#[derive(Debug, Clone)]
pub struct ConditionGrid {
    pub x: Vec<f64>,
    pub y_max: f64,
}

impl Default for ConditionGrid {
    fn default() -> Self {
        ConditionGrid { x: (0..=400).map(|k| -20.0 + 0.1 * k as f64).collect(), y_max: 10.0 }
    }
}

pub fn check_conditions(spec: &UtilitySpec, n_leaves: usize, grid: &ConditionGrid) -> ConditionReport {
    let mut xs = grid.x.clone();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ConditionReport {
        u1: check_shape(spec, n_leaves, &xs),
        u2: check_bounded_above(spec, n_leaves),
        u3: check_left_decay(spec, n_leaves),
        conjugate_bound: check_conjugate_bound(spec, n_leaves, grid.y_max),
    }
}

fn pass(detail: impl Into<String>, witness: Option<(usize, f64)>) -> ConditionStatus {
    ConditionStatus { passed: true, detail: detail.into(), witness }
}

fn fail(detail: impl Into<String>, witness: Option<(usize, f64)>) -> ConditionStatus {
    ConditionStatus { passed: false, detail: detail.into(), witness }
}

fn check_shape(spec: &UtilitySpec, n_leaves: usize, xs: &[f64]) -> ConditionStatus {
    if !matches!(spec.kind, UtilityKind::Exponential { .. }) {
        for leaf in 0..n_leaves {
            let t = spec.table(leaf);
            let a = spec.a(leaf);
            let slopes = t.slopes();
            // position k in the slope list sits at knot k - 1 / k
            for (k, w) in slopes.windows(2).enumerate() {
                let at = t.knots[k].0 / a;
                if w[1] > w[0] {
                    return fail(format!("slope increases from {} to {} at x = {at}", w[0], w[1]), Some((leaf, at)));
                }
            }
            if let Some(&s) = slopes.iter().find(|&&s| s < 0.0) {
                let at = t.knots.last().unwrap().0 / a;
                return fail(format!("negative slope {s}"), Some((leaf, at)));
            }
        }
    }
    for leaf in 0..n_leaves {
        for w in xs.windows(3) {
            let (a, b, c) = (spec.eval_u(leaf, w[0]), spec.eval_u(leaf, w[1]), spec.eval_u(leaf, w[2]));
            if b < a - 1e-12 * a.abs().max(1.0) {
                return fail("u decreases", Some((leaf, w[1])));
            }
            let lhs = (b - a) / (w[1] - w[0]);
            let rhs = (c - b) / (w[2] - w[1]);
            if rhs > lhs + 1e-9 * lhs.abs().max(1.0) {
                return fail("u is not concave", Some((leaf, w[1])));
            }
        }
    }
    pass("nondecreasing and concave", None)
}

fn check_bounded_above(spec: &UtilitySpec, n_leaves: usize) -> ConditionStatus {
    match &spec.kind {
        UtilityKind::Exponential { .. } => pass("bounded above by 0", None),
        _ => {
            for leaf in 0..n_leaves {
                let t = spec.table(leaf);
                if t.right_slope > 0.0 {
                    let at = t.knots.last().unwrap().0 / spec.a(leaf);
                    return fail(
                        format!("right slope {} > 0 makes u unbounded above", t.right_slope),
                        Some((leaf, at)),
                    );
                }
            }
            pass("flat right tail", None)
        }
    }
}

fn check_left_decay(spec: &UtilitySpec, n_leaves: usize) -> ConditionStatus {
    if matches!(spec.kind, UtilityKind::Exponential { .. }) {
        return pass("exponential decay", None);
    }
    let ratio = |k: i32| -> f64 {
        let x = -(10f64.powi(k));
        (0..n_leaves)
            .map(|l| spec.eval_u(l, x) / x.abs())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let ratios: Vec<f64> = (1..=6).map(ratio).collect();
    // u(x)/|x| -> -inf shows up as the ratio growing without bound; a linear
    // tail settles at a constant
    let growing = ratios.windows(2).all(|w| w[1] < w[0]) && ratios[5] < 100.0 * ratios[2].min(-1e-300);
    if growing {
        pass(format!("u(x)/|x| at x = -1e6 is {:.3e}", ratios[5]), Some((0, -1e6)))
    } else {
        fail(
            format!("u(x)/|x| stays bounded: {:.3e} at -1e3, {:.3e} at -1e6", ratios[2], ratios[5]),
            Some((0, -1e6)),
        )
    }
}

fn check_conjugate_bound(spec: &UtilitySpec, n_leaves: usize, y_max: f64) -> ConditionStatus {
    let conj = Conjugate::new(Arc::new(spec.clone()));
    let mut worst = (0.0f64, 0usize, 0.0f64);
    for leaf in 0..n_leaves {
        for k in 0..=200 {
            let y = y_max * k as f64 / 200.0;
            let v = conj.value_unchecked(leaf, y);
            if !v.is_finite() {
                return fail(format!("v is infinite at y = {y}"), Some((leaf, y)));
            }
            if v.abs() > worst.0 {
                worst = (v.abs(), leaf, y);
            }
        }
    }
    pass(format!("sup |v| = {:.6e} on [0, {y_max}]", worst.0), Some((worst.1, worst.2)))
}
