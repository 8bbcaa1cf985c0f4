//! Column-generation master for `max_z min_P {sum_l P_l u_l(b_l + (Bz)_l) + alpha(P)} - c.z`.
//!
//! The master LP works on the dual side: it minimizes over the polytope
//! lifting of `P` and over mixtures `mu_{l,s} >= 0` of conjugate slopes with
//! `sum_s mu_{l,s} = P_l`, paying `v_l(s) + s b_l` per unit of mass, under
//! `B^T r + beta+ - beta- = c` where `r_l = sum_s s mu_{l,s}`. The `beta` slack
//! costs the box radius, so the z-row duals are the primal iterate on the box.

use nalgebra::{DMatrix, DVector};

use crate::ambiguity::{AmbiguitySpec, InnerResult};
use crate::lp::{Basis, LinearProgram, Relation};

use super::SolverError;

/// Per-leaf concave utility seen by the engine, with its conjugate.
pub(crate) trait LeafUtility: Sync {
    fn u(&self, leaf: usize, x: f64) -> f64;
    /// Right derivative.
    fn du(&self, leaf: usize, x: f64) -> f64;
    /// Second derivative for smooth utilities; `None` disables the Newton polish.
    fn d2u(&self, leaf: usize, x: f64) -> Option<f64>;
    /// `sup_x u(x) - x y`, possibly `+inf`.
    fn v(&self, leaf: usize, y: f64) -> f64;
    /// Wealth range whose slopes keep the master well scaled.
    fn clamp(&self, leaf: usize, x: f64) -> f64;
    fn seed_slopes(&self, leaf: usize, base: f64) -> Vec<f64>;
}

/// `p v(r / p)` with the closed extension at `p = 0`.
pub(crate) fn perspective(util: &dyn LeafUtility, leaf: usize, r: f64, p: f64) -> f64 {
    if p > 0.0 {
        p * util.v(leaf, r / p)
    } else if r > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

pub(crate) struct SaddleProblem<'a> {
    pub amb: &'a AmbiguitySpec,
    pub util: &'a dyn LeafUtility,
    pub b: &'a [f64],
    /// Sparse columns of `B`, `(leaf, coefficient)`.
    pub bcols: Vec<Vec<(usize, f64)>>,
    pub c: Vec<f64>,
    pub radius: Vec<f64>,
    pub tol: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub lower: f64,
    pub upper: f64,
    pub master: f64,
    pub columns: usize,
}

/// An exactly evaluated upper bound: leaf weights `P` in the set and `r` with
/// `B^T r = c`.
#[derive(Debug, Clone)]
pub(crate) struct UpperPoint {
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub value: f64,
}

pub(crate) struct SaddleRun {
    pub z: Vec<f64>,
    pub lower: f64,
    pub worst: InnerResult,
    pub upper: Option<UpperPoint>,
    pub trace: Vec<TraceRow>,
    pub iterates: Vec<Vec<f64>>,
    /// The strategy box still binds in the final master.
    pub box_active: bool,
}

const BOX_EXPANSIONS: usize = 3;
const RESIDUAL_TOL: f64 = 1e-10;

impl<'a> SaddleProblem<'a> {
    fn n_leaves(&self) -> usize {
        self.b.len()
    }

    fn brows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows = vec![Vec::new(); self.n_leaves()];
        for (j, col) in self.bcols.iter().enumerate() {
            for &(l, v) in col {
                rows[l].push((j, v));
            }
        }
        rows
    }

    fn wealth(&self, brows: &[Vec<(usize, f64)>], z: &[f64]) -> Vec<f64> {
        brows
            .iter()
            .zip(self.b)
            .map(|(row, b)| b + row.iter().map(|&(j, v)| v * z[j]).sum::<f64>())
            .collect()
    }

    fn cz(&self, z: &[f64]) -> f64 {
        self.c.iter().zip(z).map(|(c, z)| c * z).sum()
    }

    fn evaluate_wealth(&self, z: &[f64], x: &[f64]) -> Result<(f64, InnerResult), SolverError> {
        let cost: Vec<f64> = x.iter().enumerate().map(|(l, &x)| self.util.u(l, x)).collect();
        if cost.iter().any(|c| !c.is_finite()) {
            return Ok((f64::NEG_INFINITY, self.amb.inner_min(&vec![0.0; cost.len()])?));
        }
        let inner = self.amb.inner_min(&cost)?;
        Ok((inner.value - self.cz(z), inner))
    }

    fn residual(&self, r: &[f64]) -> f64 {
        self.bcols
            .iter()
            .zip(&self.c)
            .map(|(col, c)| {
                let s: f64 = col.iter().map(|&(l, v)| v * r[l]).sum();
                (s - c).abs() / (1.0 + c.abs())
            })
            .fold(0.0, f64::max)
    }

    /// `r.b + sum_l P_l v(r_l / P_l) + alpha` when `B^T r = c` holds.
    pub(crate) fn exact_upper(&self, p: &[f64], r: &[f64], alpha: f64) -> Option<UpperPoint> {
        let scale = r.iter().map(|x| x.abs()).fold(1.0, f64::max);
        if self.residual(r) > RESIDUAL_TOL * scale || !alpha.is_finite() {
            return None;
        }
        let mut value = alpha;
        for l in 0..self.n_leaves() {
            value += r[l] * self.b[l] + perspective(self.util, l, r[l], p[l]);
        }
        value.is_finite().then(|| UpperPoint { p: p.to_vec(), r: r.to_vec(), value })
    }

    /// Damped Newton ascent of `sum_l p_l u_l(b_l + (Bz)_l) - c.z` inside the box.
    pub(crate) fn newton(&self, p: &[f64], z0: &[f64], radius: &[f64]) -> Option<Vec<f64>> {
        let brows = self.brows();
        let k = z0.len();
        let f = |z: &[f64]| -> f64 {
            let x = self.wealth(&brows, z);
            let mut s = -self.cz(z);
            for (l, &xl) in x.iter().enumerate() {
                if p[l] > 0.0 {
                    s += p[l] * self.util.u(l, xl);
                }
            }
            s
        };
        let mut z = z0.to_vec();
        let mut fz = f(&z);
        if !fz.is_finite() {
            return None;
        }
        for _ in 0..60 {
            let x = self.wealth(&brows, &z);
            let mut g = DVector::from_iterator(k, self.c.iter().map(|c| -c));
            let mut h = DMatrix::<f64>::zeros(k, k);
            for (l, row) in brows.iter().enumerate() {
                if p[l] <= 0.0 {
                    continue;
                }
                let d1 = p[l] * self.util.du(l, x[l]);
                let d2 = p[l] * self.util.d2u(l, x[l])?;
                for &(i, vi) in row {
                    g[i] += d1 * vi;
                    for &(j, vj) in row {
                        h[(i, j)] -= d2 * vi * vj;
                    }
                }
            }
            let gnorm = g.amax();
            if gnorm <= 1e-14 * (1.0 + fz.abs()) {
                break;
            }
            let ridge = 1e-12 * (1.0 + h.diagonal().amax());
            for i in 0..k {
                h[(i, i)] += ridge;
            }
            let d = h.cholesky()?.solve(&g);
            let slope = g.dot(&d);
            if !(slope > 0.0) {
                break;
            }
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = z.iter().zip(d.iter()).map(|(a, b)| a + t * b).collect();
                if trial.iter().zip(radius).any(|(v, r)| v.abs() > *r) {
                    t *= 0.5;
                    continue;
                }
                let ft = f(&trial);
                if ft.is_finite() && ft >= fz + 1e-4 * t * slope {
                    z = trial;
                    fz = ft;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Some(z)
    }

    pub(crate) fn run(&self) -> Result<SaddleRun, SolverError> {
        let n = self.n_leaves();
        let mut radius = self.radius.clone();
        let nz = self.bcols.len();
        let brows = self.brows();
        let rep = self.amb.rep();
        let mut lp = LinearProgram::new();
        let w_off = rep.install(&mut lp, |_| 0.0);
        let leaf_rows: Vec<usize> = (0..n)
            .map(|l| {
                let coeffs: Vec<_> = rep.leaf_map[l].iter().map(|&(j, v)| (w_off + j, -v)).collect();
                lp.add_row(&coeffs, Relation::Eq, 0.0)
            })
            .collect();
        let mut beta = Vec::with_capacity(nz);
        let z_rows: Vec<usize> = (0..nz)
            .map(|j| {
                let bp = lp.add_var(radius[j]);
                let bm = lp.add_var(radius[j]);
                beta.push((bp, bm));
                lp.add_row(&[(bp, 1.0), (bm, -1.0)], Relation::Eq, self.c[j])
            })
            .collect();
        // (leaf, slope) of every mu column
        let mut columns: Vec<(usize, f64, usize)> = Vec::new();
        let mut slopes: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut add_column = |lp: &mut LinearProgram, columns: &mut Vec<(usize, f64, usize)>, l: usize, s: f64| -> bool {
            if !(s.is_finite() && s >= 0.0) {
                return false;
            }
            let cost = self.util.v(l, s) + s * self.b[l];
            if !cost.is_finite() {
                return false;
            }
            if slopes[l].iter().any(|&t| (t - s).abs() <= 1e-12 * s.max(t).max(1e-300)) {
                return false;
            }
            slopes[l].push(s);
            let mut entries = vec![(leaf_rows[l], 1.0)];
            for &(j, v) in &brows[l] {
                if s * v != 0.0 {
                    entries.push((z_rows[j], s * v));
                }
            }
            let var = lp.add_column(cost, &entries);
            columns.push((l, s, var));
            true
        };
        for l in 0..n {
            for s in self.util.seed_slopes(l, self.b[l]) {
                add_column(&mut lp, &mut columns, l, s);
            }
        }

        let mut basis: Option<Basis> = None;
        let mut trace = Vec::new();
        let mut iterates = Vec::new();
        let mut best: Option<(f64, Vec<f64>, InnerResult)> = None;
        let mut upper: Option<UpperPoint> = None;
        let mut expansions = 0;
        let mut box_active = false;
        let smooth = self.util.d2u(0, self.b.first().copied().unwrap_or(0.0)).is_some();

        for it in 0..self.max_iters {
            let sol = lp.solve_warm(basis.as_ref())?;
            basis = Some(sol.basis.clone());
            let master = sol.objective;
            let z: Vec<f64> = z_rows.iter().map(|&r| -sol.duals[r]).collect();
            let w = &sol.x[w_off..w_off + rep.n_vars];
            let p_bar = rep.leaf_weights(w);
            let rep_cost: f64 = rep.cost.iter().zip(w).map(|(c, w)| c * w).sum();
            let mut r = vec![0.0; n];
            for &(l, s, var) in &columns {
                r[l] += s * sol.x[var];
            }
            // simplex round-off can leave dust on leaves the master gives no mass
            for l in 0..n {
                if p_bar[l] <= 0.0 {
                    r[l] = 0.0;
                }
            }
            box_active = beta.iter().any(|&(a, b)| sol.x[a] + sol.x[b] > 1e-12);

            let x = self.wealth(&brows, &z);
            let (lower, inner) = self.evaluate_wealth(&z, &x)?;
            iterates.push(z.clone());
            if best.as_ref().is_none_or(|b| lower > b.0) {
                best = Some((lower, z.clone(), inner.clone()));
            }
            if !box_active {
                if let Some(u) = self.exact_upper(&p_bar, &r, rep_cost) {
                    if upper.as_ref().is_none_or(|b| u.value < b.value) {
                        upper = Some(u);
                    }
                }
            }
            // candidate slopes: pricing at the dual iterate
            let mut extra_slopes: Vec<(usize, f64)> = Vec::new();
            if smooth && (it % 4 == 3 || it == 0) {
                let start = best.as_ref().map(|b| b.1.clone()).unwrap();
                if let Some(zn) = self.newton(&p_bar, &start, &radius) {
                    let xn = self.wealth(&brows, &zn);
                    let (ln, inner_n) = self.evaluate_wealth(&zn, &xn)?;
                    let rn: Vec<f64> = (0..n).map(|l| p_bar[l] * self.util.du(l, xn[l])).collect();
                    if let Some(u) = self.exact_upper(&p_bar, &rn, rep_cost) {
                        if upper.as_ref().is_none_or(|b| u.value < b.value) {
                            upper = Some(u);
                        }
                    }
                    extra_slopes.extend((0..n).map(|l| (l, self.util.du(l, self.util.clamp(l, xn[l])))));
                    iterates.push(zn.clone());
                    if best.as_ref().is_none_or(|b| ln > b.0) {
                        best = Some((ln, zn, inner_n));
                    }
                }
            }
            // the worst-case measure at the best point gives another candidate
            {
                let b = best.as_ref().unwrap();
                let xb = self.wealth(&brows, &b.1);
                let pw = b.2.measure.weights();
                let rw: Vec<f64> = (0..n).map(|l| pw[l] * self.util.du(l, xb[l])).collect();
                if let Some(u) = self.exact_upper(pw, &rw, b.2.alpha) {
                    if upper.as_ref().is_none_or(|c| u.value < c.value) {
                        upper = Some(u);
                    }
                }
                extra_slopes.extend((0..n).map(|l| (l, self.util.du(l, self.util.clamp(l, xb[l])))));
            }
            let lower_best = best.as_ref().unwrap().0;
            let ub = upper.as_ref().map_or(f64::INFINITY, |u| u.value);
            trace.push(TraceRow { iteration: it, lower: lower_best, upper: ub, master, columns: columns.len() });
            if ub - lower_best <= self.tol {
                break;
            }
            // price at the dual iterate; stabilizing slopes are added regardless
            let mut priced = 0;
            for l in 0..n {
                let s = self.util.du(l, self.util.clamp(l, x[l]));
                let pi = sol.duals[leaf_rows[l]];
                let rc = self.util.v(l, s) + s * x[l] - pi;
                if rc < -1e-13 * (1.0 + pi.abs()) && add_column(&mut lp, &mut columns, l, s) {
                    priced += 1;
                }
            }
            for (l, s) in extra_slopes {
                add_column(&mut lp, &mut columns, l, s);
            }
            if priced == 0 {
                if box_active && expansions < BOX_EXPANSIONS {
                    expansions += 1;
                    for j in 0..nz {
                        radius[j] *= 10.0;
                        lp.set_cost(beta[j].0, radius[j]);
                        lp.set_cost(beta[j].1, radius[j]);
                    }
                    continue;
                }
                break;
            }
        }
        let (lower, z, worst) = best.unwrap();
        Ok(SaddleRun { z, lower, worst, upper, trace, iterates, box_active })
    }
}
