//! Path metric with the price transform `phi` and exact discrete Wasserstein distances.

use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{Measure, ScenarioLattice};
use crate::lp::{LinearProgram, LpError, Relation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("phi is defined on (0, inf), got {0}")]
    NonPositiveInput(f64),
    #[error("paths have different horizons ({0} vs {1})")]
    HorizonMismatch(usize, usize),
    #[error("invalid metric parameters: {0}")]
    InvalidParams(String),
    #[error("measures live on different lattices")]
    LatticeMismatch,
    #[error("paths start from different roots; the metric ignores t = 0")]
    RootMismatch,
    #[error("transport LP failed: {0}")]
    LpFailure(#[from] LpError),
}

/// Parameters of the path metric `d` and the Wasserstein order `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricParams {
    pub rho: f64,
    pub kappa: f64,
    pub p: f64,
}

impl MetricParams {
    pub fn new(rho: f64, kappa: f64, p: f64) -> Result<Self, TransportError> {
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(TransportError::InvalidParams(format!("rho must be >= 0, got {rho}")));
        }
        if !(kappa.is_finite() && kappa >= 1.0) {
            return Err(TransportError::InvalidParams(format!("kappa must be >= 1, got {kappa}")));
        }
        if !(p.is_finite() && p > 1.0) {
            return Err(TransportError::InvalidParams(format!("p must be > 1, got {p}")));
        }
        Ok(MetricParams { rho, kappa, p })
    }
}

/// `x - 1` above one and `ln x` below: continuous, increasing, zero at one.
pub fn phi(x: f64) -> Result<f64, TransportError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(TransportError::NonPositiveInput(x));
    }
    Ok(if x > 1.0 { x - 1.0 } else { x.ln() })
}

/// Distance between two paths given as `(m_t, s_t)` for t = 0..T. The t = 0
/// coordinates do not enter.
pub fn path_distance(mp: &MetricParams, a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64, TransportError> {
    if a.len() != b.len() {
        return Err(TransportError::HorizonMismatch(
            a.len().saturating_sub(1),
            b.len().saturating_sub(1),
        ));
    }
    let k = mp.kappa;
    let mut acc = 0.0;
    for t in 1..a.len() {
        let dm = (a[t].0 - b[t].0).abs();
        let ds = (phi(a[t].1)? - phi(b[t].1)?).abs();
        acc += (-mp.rho * k * t as f64).exp() * (dm.powf(k) + ds.powf(k));
    }
    Ok(acc.powf(1.0 / k))
}

/// Pairwise path distances on one lattice together with their p-th powers.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    n: usize,
    params: MetricParams,
    dist: Vec<f64>,
    dist_p: Vec<f64>,
    fingerprint: u64,
}

impl CostMatrix {
    pub fn new(lat: &ScenarioLattice, params: MetricParams) -> Self {
        let n = lat.num_leaves();
        let points: Vec<Vec<(f64, f64)>> = (0..n).map(|l| lat.path_point(l)).collect();
        let dist: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k / n, k % n);
                path_distance(&params, &points[i], &points[j]).expect("paths share the horizon")
            })
            .collect();
        let dist_p = dist.iter().map(|d| d.powf(params.p)).collect();
        CostMatrix { n, params, dist, dist_p, fingerprint: lat.fingerprint() }
    }

    pub fn params(&self) -> &MetricParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    /// `d(i, j)^p`.
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.dist_p[i * self.n + j]
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

/// Sparse coupling between two finitely supported measures.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub n_rows: usize,
    pub n_cols: usize,
    /// `(row, column, mass)` with positive mass.
    pub entries: Vec<(usize, usize, f64)>,
}

impl TransportPlan {
    pub fn row_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows];
        for &(i, _, w) in &self.entries {
            out[i] += w;
        }
        out
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for &(_, j, w) in &self.entries {
            out[j] += w;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct WassersteinResult {
    /// `W_p`.
    pub value: f64,
    /// `W_p^p`, the optimal transport cost.
    pub cost: f64,
    pub plan: TransportPlan,
    /// Kantorovich potentials `(f, g)` with `f_i + g_j <= d_ij^p`; zero off the supports.
    pub potentials: (Vec<f64>, Vec<f64>),
}

/// `W_p(P, P*)` for two measures on the same lattice.
pub fn wasserstein_p(
    lat: &ScenarioLattice,
    params: MetricParams,
    p: &Measure,
    p_star: &Measure,
) -> Result<WassersteinResult, TransportError> {
    let costs = CostMatrix::new(lat, params);
    wasserstein_with_costs(&costs, p, p_star)
}

pub fn wasserstein_with_costs(
    costs: &CostMatrix,
    p: &Measure,
    p_star: &Measure,
) -> Result<WassersteinResult, TransportError> {
    if p.fingerprint() != costs.fingerprint() || p_star.fingerprint() != costs.fingerprint() {
        return Err(TransportError::LatticeMismatch);
    }
    if p.weights() == p_star.weights() {
        let n = costs.len();
        let entries = p.support().into_iter().map(|i| (i, i, p.weights()[i])).collect();
        return Ok(WassersteinResult {
            value: 0.0,
            cost: 0.0,
            plan: TransportPlan { n_rows: n, n_cols: n, entries },
            potentials: (vec![0.0; n], vec![0.0; n]),
        });
    }
    let mut res = solve_transport(p.weights(), p_star.weights(), |i, j| costs.cost(i, j))?;
    let (sa, sb) = (p.support(), p_star.support());
    res.value = if sa.len() == 1 && sb.len() == 1 {
        costs.distance(sa[0], sb[0])
    } else {
        res.cost.powf(1.0 / costs.params().p)
    };
    Ok(res)
}

/// `W_p` between measures on two point clouds of paths that share their root.
pub fn wasserstein_between(
    params: MetricParams,
    points_a: &[Vec<(f64, f64)>],
    weights_a: &[f64],
    points_b: &[Vec<(f64, f64)>],
    weights_b: &[f64],
) -> Result<WassersteinResult, TransportError> {
    let roots = points_a.iter().chain(points_b).map(|pt| pt.first().copied());
    let first = points_a.first().and_then(|pt| pt.first().copied());
    if roots.into_iter().any(|r| r != first) {
        return Err(TransportError::RootMismatch);
    }
    let nb = points_b.len();
    let mut cost = vec![0.0; points_a.len() * nb];
    for (i, a) in points_a.iter().enumerate() {
        for (j, b) in points_b.iter().enumerate() {
            cost[i * nb + j] = path_distance(&params, a, b)?.powf(params.p);
        }
    }
    let mut res = solve_transport(weights_a, weights_b, |i, j| cost[i * nb + j])?;
    res.value = res.cost.powf(1.0 / params.p);
    Ok(res)
}

fn solve_transport(
    a: &[f64],
    b: &[f64],
    cost: impl Fn(usize, usize) -> f64,
) -> Result<WassersteinResult, TransportError> {
    let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    let (n_rows, n_cols) = (a.len(), b.len());
    let mut f = vec![0.0; n_rows];
    let mut g = vec![0.0; n_cols];

    // A point mass on either side leaves a single feasible coupling.
    if rows.len() == 1 || cols.len() == 1 {
        let mut entries = Vec::new();
        let mut total = 0.0;
        for &i in &rows {
            for &j in &cols {
                let w = a[i] * b[j];
                entries.push((i, j, w));
                total += w * cost(i, j);
            }
        }
        if rows.len() == 1 {
            for &j in &cols {
                g[j] = cost(rows[0], j);
            }
        } else {
            for &i in &rows {
                f[i] = cost(i, cols[0]);
            }
        }
        return Ok(WassersteinResult {
            value: 0.0,
            cost: total,
            plan: TransportPlan { n_rows, n_cols, entries },
            potentials: (f, g),
        });
    }

    let mut lp = LinearProgram::new();
    let mut var = Vec::with_capacity(rows.len() * cols.len());
    for &i in &rows {
        for &j in &cols {
            var.push(lp.add_var(cost(i, j)));
        }
    }
    let nc = cols.len();
    for (ri, &i) in rows.iter().enumerate() {
        let coeffs: Vec<_> = (0..nc).map(|cj| (var[ri * nc + cj], 1.0)).collect();
        lp.add_row(&coeffs, Relation::Eq, a[i]);
    }
    for (cj, &j) in cols.iter().enumerate() {
        let coeffs: Vec<_> = (0..rows.len()).map(|ri| (var[ri * nc + cj], 1.0)).collect();
        lp.add_row(&coeffs, Relation::Eq, b[j]);
    }
    let sol = lp.solve()?;
    let mut entries = Vec::new();
    for (ri, &i) in rows.iter().enumerate() {
        for (cj, &j) in cols.iter().enumerate() {
            let w = sol.x[var[ri * nc + cj]];
            if w > 0.0 {
                entries.push((i, j, w));
            }
        }
    }
    for (ri, &i) in rows.iter().enumerate() {
        f[i] = sol.duals[ri];
    }
    for (cj, &j) in cols.iter().enumerate() {
        g[j] = sol.duals[rows.len() + cj];
    }
    Ok(WassersteinResult {
        value: 0.0,
        cost: sol.objective.max(0.0),
        plan: TransportPlan { n_rows, n_cols, entries },
        potentials: (f, g),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::multiplicative_tree;

    #[test]
    fn phi_values() {
        assert_eq!(phi(1.0).unwrap(), 0.0);
        assert_eq!(phi(2.0).unwrap(), 1.0);
        assert!((phi((-1f64).exp()).unwrap() + 1.0).abs() < 1e-15);
        assert!(phi(0.0).is_err());
        assert!(phi(-3.0).is_err());
    }

    #[test]
    fn distance_examples() {
        let mp = MetricParams::new(0.0, 1.0, 2.0).unwrap();
        let a = [(1.0, 1.0), (1.0, 2.0)];
        let b = [(1.0, 1.0), (1.0, 1.0)];
        assert_eq!(path_distance(&mp, &a, &b).unwrap(), 1.0);
        assert_eq!(path_distance(&mp, &a, &a).unwrap(), 0.0);
        assert!(path_distance(&mp, &a, &b[..1]).is_err());
    }

    #[test]
    fn invalid_params() {
        assert!(MetricParams::new(-0.1, 1.0, 2.0).is_err());
        assert!(MetricParams::new(0.0, 0.5, 2.0).is_err());
        assert!(MetricParams::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn dirac_pair_is_exact() {
        let lat = multiplicative_tree(2, 1.0, &[1.5, 0.7]).unwrap();
        let mp = MetricParams::new(0.2, 2.0, 2.0).unwrap();
        let a = Measure::dirac(&lat, 0).unwrap();
        let b = Measure::dirac(&lat, 3).unwrap();
        let w = wasserstein_p(&lat, mp, &a, &b).unwrap();
        let d = path_distance(&mp, &lat.path_point(0), &lat.path_point(3)).unwrap();
        assert_eq!(w.value, d);
        let same = wasserstein_p(&lat, mp, &a, &a).unwrap();
        assert_eq!(same.value, 0.0);
    }

    #[test]
    fn plan_marginals_and_duality() {
        let lat = multiplicative_tree(2, 1.0, &[1.5, 1.0, 0.7]).unwrap();
        let mp = MetricParams::new(0.1, 1.0, 2.0).unwrap();
        let wa: Vec<f64> = (1..=9).map(|k| k as f64 / 45.0).collect();
        let wb: Vec<f64> = (1..=9).rev().map(|k| k as f64 / 45.0).collect();
        let a = Measure::new(&lat, wa.clone()).unwrap();
        let b = Measure::new(&lat, wb.clone()).unwrap();
        let costs = CostMatrix::new(&lat, mp);
        let w = wasserstein_with_costs(&costs, &a, &b).unwrap();
        for (x, y) in w.plan.row_marginal().iter().zip(&wa) {
            assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in w.plan.col_marginal().iter().zip(&wb) {
            assert!((x - y).abs() < 1e-10);
        }
        let (f, g) = &w.potentials;
        let dual: f64 = f.iter().zip(&wa).map(|(x, y)| x * y).sum::<f64>()
            + g.iter().zip(&wb).map(|(x, y)| x * y).sum::<f64>();
        assert!((dual - w.cost).abs() < 1e-8);
        for i in 0..9 {
            for j in 0..9 {
                assert!(f[i] + g[j] <= costs.cost(i, j) + 1e-9);
            }
        }
    }

    #[test]
    fn different_roots_rejected() {
        let mp = MetricParams::new(0.0, 1.0, 2.0).unwrap();
        let a = vec![vec![(1.0, 1.0), (1.0, 2.0)]];
        let b = vec![vec![(1.0, 1.5), (1.0, 2.0)]];
        assert_eq!(
            wasserstein_between(mp, &a, &[1.0], &b, &[1.0]).unwrap_err(),
            TransportError::RootMismatch
        );
    }
}
