//! Dense revised simplex for the small linear programs used throughout the crate.
//!
//! Every variable is nonnegative; callers model free or boxed variables by
//! splitting or by explicit rows. The solver runs a two-phase method with an
//! explicit basis inverse that is refactorized periodically. Pricing is
//! Dantzig's rule; after a run of degenerate pivots it falls back to Bland's
//! rule until progress resumes, which rules out cycling.
//!
//! Duals follow the convention `c_j - sum_i a_ij y_i >= 0` at optimality, so
//! the optimal objective equals `sum_i b_i y_i`.

use nalgebra::DMatrix;
use thiserror::Error;

const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-11;
const REFACTOR_EVERY: usize = 50;
const DEGENERATE_STREAK: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible (phase-one residual {0:.3e})")]
    Infeasible(f64),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("basis matrix became numerically singular")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// Identifies a standard-form column independently of how many structural
/// columns exist, so a basis survives column generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColKey {
    Var(usize),
    Slack(usize),
    Artificial(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Basis(pub Vec<ColKey>);

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub duals: Vec<f64>,
    pub basis: Basis,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
struct RowMeta {
    relation: Relation,
    rhs: f64,
}

/// `min c.x` subject to row constraints and `x >= 0`.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    cost: Vec<f64>,
    columns: Vec<Vec<(usize, f64)>>,
    rows: Vec<RowMeta>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_var(&mut self, cost: f64) -> usize {
        self.cost.push(cost);
        self.columns.push(Vec::new());
        self.cost.len() - 1
    }

    /// Adds a column with entries in existing rows.
    pub fn add_column(&mut self, cost: f64, entries: &[(usize, f64)]) -> usize {
        let j = self.add_var(cost);
        for &(row, coef) in entries {
            debug_assert!(row < self.rows.len());
            if coef != 0.0 {
                self.columns[j].push((row, coef));
            }
        }
        j
    }

    pub fn add_row(&mut self, coeffs: &[(usize, f64)], relation: Relation, rhs: f64) -> usize {
        let row = self.rows.len();
        self.rows.push(RowMeta { relation, rhs });
        for &(var, coef) in coeffs {
            debug_assert!(var < self.cost.len());
            if coef != 0.0 {
                self.columns[var].push((row, coef));
            }
        }
        row
    }

    pub fn set_cost(&mut self, var: usize, cost: f64) {
        self.cost[var] = cost;
    }

    pub fn cost(&self, var: usize) -> f64 {
        self.cost[var]
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        self.solve_warm(None)
    }

    /// Solves starting from `hint`. Rows added after the hint was taken enter
    /// with their slack (or artificial) basic. A primal feasible start continues
    /// with the primal simplex, a dual feasible one with the dual simplex, and
    /// anything else falls back to a cold start.
    pub fn solve_warm(&self, hint: Option<&Basis>) -> Result<LpSolution, LpError> {
        match self.solve_from(hint) {
            // a warm basis can drift into an ill-conditioned corner; start over
            Err(LpError::Singular) if hint.is_some() => self.solve_from(None),
            other => other,
        }
    }

    fn solve_from(&self, hint: Option<&Basis>) -> Result<LpSolution, LpError> {
        let mut sx = StandardForm::build(self);
        if sx.m == 0 {
            return sx.solve_without_rows();
        }
        let warm = hint.map_or(WarmStart::Rejected, |b| sx.install_basis(b));
        let ready = match warm {
            WarmStart::PrimalFeasible => true,
            WarmStart::DualFeasible => match sx.run_dual() {
                Ok(()) => true,
                Err(LpError::Infeasible(r)) => return Err(LpError::Infeasible(r)),
                Err(_) => false,
            },
            WarmStart::Rejected => false,
        };
        if !ready {
            sx.iterations = 0;
            sx.cold_start();
            sx.run(Phase::One)?;
            let residual: f64 = sx
                .basis
                .iter()
                .zip(&sx.xb)
                .filter(|(&j, _)| sx.is_artificial(j))
                .map(|(_, &v)| v.max(0.0))
                .sum();
            if residual > FEAS_TOL * (1.0 + sx.b_norm) {
                return Err(LpError::Infeasible(residual));
            }
            sx.drive_out_artificials()?;
        }
        sx.run(Phase::Two)?;
        Ok(sx.extract())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum WarmStart {
    PrimalFeasible,
    DualFeasible,
    Rejected,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

struct StandardForm {
    m: usize,
    n_struct: usize,
    cols: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    keys: Vec<ColKey>,
    slack_of: Vec<Option<usize>>,
    artificial_of: Vec<Option<usize>>,
    row_sign: Vec<f64>,
    b: Vec<f64>,
    b_norm: f64,
    basis: Vec<usize>,
    pos_in_basis: Vec<Option<usize>>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
}

impl StandardForm {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.rows.len();
        let n_struct = lp.cost.len();
        let mut row_sign = vec![1.0; m];
        let mut b = vec![0.0; m];
        let mut relations = Vec::with_capacity(m);
        for (i, row) in lp.rows.iter().enumerate() {
            let (sign, rel) = if row.rhs < 0.0 {
                let flipped = match row.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                (-1.0, flipped)
            } else {
                (1.0, row.relation)
            };
            row_sign[i] = sign;
            b[i] = sign * row.rhs;
            relations.push(rel);
        }
        let mut cols: Vec<Vec<(usize, f64)>> = lp
            .columns
            .iter()
            .map(|c| c.iter().map(|&(i, v)| (i, v * row_sign[i])).collect())
            .collect();
        let mut cost = lp.cost.clone();
        let mut keys: Vec<ColKey> = (0..n_struct).map(ColKey::Var).collect();
        let mut slack_of = vec![None; m];
        let mut artificial_of = vec![None; m];
        for (i, rel) in relations.iter().enumerate() {
            let coef = match rel {
                Relation::Le => 1.0,
                Relation::Ge => -1.0,
                Relation::Eq => continue,
            };
            slack_of[i] = Some(cols.len());
            cols.push(vec![(i, coef)]);
            cost.push(0.0);
            keys.push(ColKey::Slack(i));
        }
        for (i, rel) in relations.iter().enumerate() {
            if *rel == Relation::Le {
                continue;
            }
            artificial_of[i] = Some(cols.len());
            cols.push(vec![(i, 1.0)]);
            cost.push(0.0);
            keys.push(ColKey::Artificial(i));
        }
        let b_norm = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let n = cols.len();
        StandardForm {
            m,
            n_struct,
            cols,
            cost,
            keys,
            slack_of,
            artificial_of,
            row_sign,
            b,
            b_norm,
            basis: Vec::new(),
            pos_in_basis: vec![None; n],
            binv: Vec::new(),
            xb: Vec::new(),
            iterations: 0,
            since_refactor: 0,
        }
    }

    fn is_artificial(&self, j: usize) -> bool {
        matches!(self.keys[j], ColKey::Artificial(_))
    }

    fn solve_without_rows(&self) -> Result<LpSolution, LpError> {
        if self.cost[..self.n_struct].iter().any(|&c| c < -OPT_TOL) {
            return Err(LpError::Unbounded);
        }
        Ok(LpSolution {
            x: vec![0.0; self.n_struct],
            objective: 0.0,
            duals: Vec::new(),
            basis: Basis(Vec::new()),
            iterations: 0,
        })
    }

    fn set_basis(&mut self, basis: Vec<usize>) {
        self.pos_in_basis.iter_mut().for_each(|p| *p = None);
        for (i, &j) in basis.iter().enumerate() {
            self.pos_in_basis[j] = Some(i);
        }
        self.basis = basis;
    }

    fn cold_start(&mut self) {
        let basis: Vec<usize> = (0..self.m)
            .map(|i| match (self.slack_of[i], self.artificial_of[i]) {
                (_, Some(a)) => a,
                (Some(s), None) => s,
                (None, None) => unreachable!("every row has a slack or an artificial"),
            })
            .collect();
        self.set_basis(basis);
        // the initial basis is a signed identity with +1 on the diagonal
        self.binv = vec![0.0; self.m * self.m];
        for i in 0..self.m {
            self.binv[i * self.m + i] = 1.0;
        }
        self.xb = self.b.clone();
        self.since_refactor = 0;
    }

    fn install_basis(&mut self, hint: &Basis) -> WarmStart {
        if hint.0.len() > self.m {
            return WarmStart::Rejected;
        }
        let mut keys = hint.0.clone();
        for r in hint.0.len()..self.m {
            keys.push(if self.slack_of[r].is_some() { ColKey::Slack(r) } else { ColKey::Artificial(r) });
        }
        let mut basis = Vec::with_capacity(self.m);
        let mut seen = vec![false; self.cols.len()];
        for key in &keys {
            let j = match *key {
                ColKey::Var(v) if v < self.n_struct => Some(v),
                ColKey::Slack(r) if r < self.m => self.slack_of[r],
                ColKey::Artificial(r) if r < self.m => self.artificial_of[r],
                _ => None,
            };
            match j {
                Some(j) if !seen[j] => {
                    seen[j] = true;
                    basis.push(j);
                }
                _ => return WarmStart::Rejected,
            }
        }
        self.set_basis(basis);
        if self.refactor().is_err() {
            return WarmStart::Rejected;
        }
        let tol = FEAS_TOL * (1.0 + self.b_norm);
        let feasible = self.xb.iter().all(|&v| v >= -tol)
            && self
                .basis
                .iter()
                .zip(&self.xb)
                .all(|(&j, &v)| !self.is_artificial(j) || v.abs() <= tol);
        if feasible {
            for v in self.xb.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            return WarmStart::PrimalFeasible;
        }
        let y = self.simplex_multipliers(Phase::Two);
        let dual_feasible = (0..self.cols.len()).all(|j| {
            self.pos_in_basis[j].is_some()
                || self.is_artificial(j)
                || self.reduced_cost(j, &y, Phase::Two) >= -OPT_TOL
        });
        if dual_feasible {
            WarmStart::DualFeasible
        } else {
            WarmStart::Rejected
        }
    }

    /// Dual simplex from a dual feasible basis. Basic artificials are fixed at
    /// zero and are driven out from either side.
    fn run_dual(&mut self) -> Result<(), LpError> {
        let limit = 50 * (self.m + self.cols.len()) + 1000;
        let tol = FEAS_TOL * (1.0 + self.b_norm);
        let mut degenerate = 0usize;
        loop {
            if self.iterations > limit {
                return Err(LpError::IterationLimit(limit));
            }
            let bland = degenerate >= DEGENERATE_STREAK;
            let mut leave: Option<(usize, f64)> = None;
            for (i, &v) in self.xb.iter().enumerate() {
                let infeas = if self.is_artificial(self.basis[i]) { v.abs() } else { -v };
                if infeas <= tol {
                    continue;
                }
                let better = match leave {
                    None => true,
                    Some((r, best)) => {
                        if bland {
                            self.basis[i] < self.basis[r]
                        } else {
                            infeas > best
                        }
                    }
                };
                if better {
                    leave = Some((i, infeas));
                }
            }
            let Some((r, _)) = leave else {
                for v in self.xb.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                return Ok(());
            };
            // decreasing an artificial from above flips the admissible sign
            let sign = if self.xb[r] > 0.0 { 1.0 } else { -1.0 };
            let m = self.m;
            let y = self.simplex_multipliers(Phase::Two);
            let mut entering: Option<(usize, f64, f64)> = None;
            for j in 0..self.cols.len() {
                if self.pos_in_basis[j].is_some() || self.is_artificial(j) {
                    continue;
                }
                let a: f64 = self.cols[j].iter().map(|&(k, v)| self.binv[r * m + k] * v).sum();
                let a = sign * a;
                if a <= PIVOT_TOL {
                    continue;
                }
                let d = self.reduced_cost(j, &y, Phase::Two).max(0.0);
                let ratio = d / a;
                let better = match entering {
                    None => true,
                    Some((q, best, best_a)) => {
                        if ratio < best - 1e-12 {
                            true
                        } else if ratio <= best + 1e-12 {
                            if bland {
                                j < q
                            } else {
                                a > best_a
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    entering = Some((j, ratio, a));
                }
            }
            let Some((q, ratio, _)) = entering else {
                return Err(LpError::Infeasible(self.xb[r].abs()));
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            let alpha = self.direction(q);
            self.pivot(r, q, &alpha)?;
        }
    }

    fn refactor(&mut self) -> Result<(), LpError> {
        let m = self.m;
        let mut bmat = DMatrix::<f64>::zeros(m, m);
        for (k, &j) in self.basis.iter().enumerate() {
            for &(i, v) in &self.cols[j] {
                bmat[(i, k)] = v;
            }
        }
        let inv = bmat.lu().try_inverse().ok_or(LpError::Singular)?;
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(LpError::Singular);
        }
        self.binv.resize(m * m, 0.0);
        for i in 0..m {
            for k in 0..m {
                self.binv[i * m + k] = inv[(i, k)];
            }
        }
        self.xb = (0..m)
            .map(|i| {
                let row = &self.binv[i * m..(i + 1) * m];
                row.iter().zip(&self.b).map(|(a, b)| a * b).sum()
            })
            .collect();
        self.since_refactor = 0;
        Ok(())
    }

    fn phase_cost(&self, j: usize, phase: Phase) -> f64 {
        match phase {
            Phase::One => {
                if self.is_artificial(j) {
                    1.0
                } else {
                    0.0
                }
            }
            Phase::Two => self.cost[j],
        }
    }

    fn simplex_multipliers(&self, phase: Phase) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &j) in self.basis.iter().enumerate() {
            let cb = self.phase_cost(j, phase);
            if cb != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, a) in y.iter_mut().zip(row) {
                    *yk += cb * a;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64], phase: Phase) -> f64 {
        let dot: f64 = self.cols[j].iter().map(|&(i, v)| y[i] * v).sum();
        self.phase_cost(j, phase) - dot
    }

    fn direction(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        for &(k, v) in &self.cols[j] {
            for (i, a) in alpha.iter_mut().enumerate() {
                *a += self.binv[i * m + k] * v;
            }
        }
        alpha
    }

    fn pivot(&mut self, r: usize, q: usize, alpha: &[f64]) -> Result<(), LpError> {
        let m = self.m;
        let step = self.xb[r] / alpha[r];
        for i in 0..m {
            if i != r {
                self.xb[i] -= step * alpha[i];
            }
        }
        self.xb[r] = step;
        let piv = alpha[r];
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (prow, after) = rest.split_at_mut(m);
        prow.iter_mut().for_each(|v| *v /= piv);
        for (i, a) in alpha.iter().enumerate() {
            if i == r || *a == 0.0 {
                continue;
            }
            let row = if i < r {
                &mut before[i * m..(i + 1) * m]
            } else {
                let off = (i - r - 1) * m;
                &mut after[off..off + m]
            };
            for (v, p) in row.iter_mut().zip(prow.iter()) {
                *v -= a * p;
            }
        }
        let leaving = self.basis[r];
        self.pos_in_basis[leaving] = None;
        self.pos_in_basis[q] = Some(r);
        self.basis[r] = q;
        self.iterations += 1;
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor()?;
            for v in self.xb.iter_mut() {
                if *v < 0.0 && *v > -FEAS_TOL {
                    *v = 0.0;
                }
            }
        }
        Ok(())
    }

    fn run(&mut self, phase: Phase) -> Result<(), LpError> {
        let limit = 50 * (self.m + self.cols.len()) + 1000;
        let mut degenerate = 0usize;
        loop {
            if self.iterations > limit {
                return Err(LpError::IterationLimit(limit));
            }
            let y = self.simplex_multipliers(phase);
            let bland = degenerate >= DEGENERATE_STREAK;
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.cols.len() {
                if self.pos_in_basis[j].is_some() {
                    continue;
                }
                if phase == Phase::Two && self.is_artificial(j) {
                    continue;
                }
                let d = self.reduced_cost(j, &y, phase);
                if d < -OPT_TOL {
                    if bland {
                        entering = Some((j, d));
                        break;
                    }
                    if entering.is_none_or(|(_, best)| d < best) {
                        entering = Some((j, d));
                    }
                }
            }
            let Some((q, _)) = entering else {
                if self.since_refactor > 0 {
                    // confirm optimality against a fresh factorization
                    self.refactor()?;
                    let y = self.simplex_multipliers(phase);
                    let still_optimal = (0..self.cols.len()).all(|j| {
                        self.pos_in_basis[j].is_some()
                            || (phase == Phase::Two && self.is_artificial(j))
                            || self.reduced_cost(j, &y, phase) >= -OPT_TOL
                    });
                    if !still_optimal {
                        continue;
                    }
                }
                return Ok(());
            };
            let alpha = self.direction(q);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = alpha[i];
                let locked = phase == Phase::Two && self.is_artificial(self.basis[i]);
                let ratio = if locked && a.abs() > PIVOT_TOL {
                    0.0
                } else if a > PIVOT_TOL {
                    self.xb[i].max(0.0) / a
                } else {
                    continue;
                };
                let better = match leave {
                    None => true,
                    Some((r, best)) => {
                        if ratio < best - 1e-12 {
                            true
                        } else if ratio <= best + 1e-12 {
                            if bland {
                                self.basis[i] < self.basis[r]
                            } else {
                                a.abs() > alpha[r].abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
            let Some((r, ratio)) = leave else {
                return Err(LpError::Unbounded);
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, q, &alpha)?;
        }
    }

    fn drive_out_artificials(&mut self) -> Result<(), LpError> {
        for r in 0..self.m {
            let j = self.basis[r];
            if !self.is_artificial(j) {
                continue;
            }
            let m = self.m;
            let mut best: Option<(usize, f64)> = None;
            for q in 0..self.cols.len() {
                if self.pos_in_basis[q].is_some() || self.is_artificial(q) {
                    continue;
                }
                let a: f64 = self.cols[q]
                    .iter()
                    .map(|&(k, v)| self.binv[r * m + k] * v)
                    .sum();
                if a.abs() > 1e-9 && best.is_none_or(|(_, b)| a.abs() > b.abs()) {
                    best = Some((q, a));
                }
            }
            if let Some((q, _)) = best {
                let alpha = self.direction(q);
                self.xb[r] = 0.0;
                self.pivot(r, q, &alpha)?;
            }
            // otherwise the row is redundant and the artificial stays locked at zero
        }
        Ok(())
    }

    fn extract(mut self) -> LpSolution {
        if self.since_refactor > 0 {
            // best effort; the current inverse is still valid if this fails
            let _ = self.refactor();
        }
        let mut x = vec![0.0; self.n_struct];
        for (i, &j) in self.basis.iter().enumerate() {
            if j < self.n_struct {
                x[j] = self.xb[i].max(0.0);
            }
        }
        let objective = x.iter().zip(&self.cost).map(|(a, c)| a * c).sum();
        let y = self.simplex_multipliers(Phase::Two);
        let duals = y.iter().zip(&self.row_sign).map(|(v, s)| v * s).collect();
        let basis = Basis(self.basis.iter().map(|&j| self.keys[j]).collect());
        LpSolution {
            x,
            objective,
            duals,
            basis,
            iterations: self.iterations,
        }
    }
}
