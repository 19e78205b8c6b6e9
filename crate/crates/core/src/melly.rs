//! Linear quantile-regression decomposition into coefficient,
//! characteristic and residual effects.
//!
//! Each period gets a path of weighted linear quantile regressions on a
//! level grid. Unconditional quantiles come from pooling the fitted values
//! `x_i'β(τ_j)` over sample rows and grid levels.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{DesignSpec, PeriodView};
use crate::error::{Error, Result};
use crate::functionals::{inequality_stats, GridCdf, InequalityStats, QuantileMode, STATISTICS};
use crate::par;

/// Interior-point controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QrControl {
    /// Stop when the duality gap relative to `1 + |objective|` drops below
    /// this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QrControl {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 100 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QrFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn step_bound(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

/// Weighted linear quantile regression by a primal-dual interior-point
/// method with Mehrotra's predictor-corrector (the Frisch-Newton
/// algorithm). `x` is row-major `n × p`.
pub fn quantile_regression(x: &[f64], p: usize, y: &[f64], w: &[f64], tau: f64, ctrl: &QrControl) -> Result<QrFit> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level {tau} outside (0, 1)")));
    }
    let n = y.len();
    if x.len() != n * p || w.len() != n {
        return Err(Error::Dimension { expected: n * p, got: x.len() });
    }
    if x.iter().chain(y).chain(w).any(|v| !v.is_finite()) || w.iter().any(|v| *v < 0.0) {
        return Err(Error::NonFinite("quantile regression input"));
    }
    // The check loss is positively homogeneous, so weights scale rows.
    let rows: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    let m = rows.len();
    if m < p {
        return Err(Error::InvalidArgument(format!("{m} weighted rows for {p} coefficients")));
    }
    let a = DMatrix::from_fn(p, m, |k, j| x[rows[j] * p + k] * w[rows[j]]);
    let c = DVector::from_fn(m, |j, _| -y[rows[j]] * w[rows[j]]);
    let b = &a * DVector::from_element(m, 1.0 - tau);

    let solve = |mat: &DMatrix<f64>, rhs: &DVector<f64>| -> Result<DVector<f64>> {
        crate::glm::solve_spd(mat, rhs, 1e-12).ok_or_else(|| Error::Numerical("singular quantile-regression normal equations".into()))
    };

    let mut xv = DVector::from_element(m, 1.0 - tau);
    let mut s = DVector::from_element(m, tau);
    let aat = &a * a.transpose();
    let mut yv = solve(&aat, &(&a * &c))?;
    let r = &c - a.transpose() * &yv;
    let delta = 1e-3 * (r.abs().sum() / m as f64).max(1e-12);
    let mut z = r.map(|v| v.max(0.0) + delta);
    let mut wv = r.map(|v| (-v).max(0.0) + delta);
    let beta = 0.99995;

    let gap_of = |xv: &DVector<f64>, yv: &DVector<f64>, wv: &DVector<f64>| c.dot(xv) - yv.dot(&b) + wv.sum();
    let mut gap = gap_of(&xv, &yv, &wv);
    let mut it = 0;
    let mut converged = false;
    while it < ctrl.max_iter {
        if gap.abs() / (1.0 + c.dot(&xv).abs()) < ctrl.tol {
            converged = true;
            break;
        }
        it += 1;
        let q = DVector::from_fn(m, |j, _| 1.0 / (z[j] / xv[j] + wv[j] / s[j]));
        let r = &z - &wv;
        let mut aq = a.clone();
        for j in 0..m {
            aq.column_mut(j).scale_mut(q[j]);
        }
        let aqa = &aq * a.transpose();
        // Carrying the primal residual keeps rounding drift out of Ax = b.
        let mut rhs = &b - &a * &xv + &aq * &r;
        let mut dy = solve(&aqa, &rhs)?;
        let aty = a.transpose() * &dy;
        let mut dx = DVector::from_fn(m, |j, _| q[j] * (aty[j] - r[j]));
        let mut ds = -&dx;
        let mut dz = DVector::from_fn(m, |j, _| -z[j] * (dx[j] / xv[j] + 1.0));
        let mut dw = DVector::from_fn(m, |j, _| -wv[j] * (ds[j] / s[j] + 1.0));
        let steps = |dx: &DVector<f64>, ds: &DVector<f64>, dz: &DVector<f64>, dw: &DVector<f64>| {
            let fp = step_bound(xv.as_slice(), dx.as_slice()).min(step_bound(s.as_slice(), ds.as_slice()));
            let fd = step_bound(wv.as_slice(), dw.as_slice()).min(step_bound(z.as_slice(), dz.as_slice()));
            ((beta * fp).min(1.0), (beta * fd).min(1.0))
        };
        let (mut fp, mut fd) = steps(&dx, &ds, &dz, &dw);
        if fp.min(fd) < 1.0 {
            // Mehrotra corrector.
            let mu0 = z.dot(&xv) + wv.dot(&s);
            let g = (&z + fd * &dz).dot(&(&xv + fp * &dx)) + (&wv + fd * &dw).dot(&(&s + fp * &ds));
            let mu = mu0 * (g / mu0).powi(3) / (2.0 * m as f64);
            let xinv = xv.map(|v| 1.0 / v);
            let sinv = s.map(|v| 1.0 / v);
            let dxdz = dx.component_mul(&dz).component_mul(&xinv);
            let dsdw = ds.component_mul(&dw).component_mul(&sinv);
            let xi = DVector::from_fn(m, |j, _| mu * (xinv[j] - sinv[j]) - dxdz[j] + dsdw[j]);
            rhs -= &aq * &xi;
            dy = solve(&aqa, &rhs)?;
            let aty = a.transpose() * &dy;
            dx = DVector::from_fn(m, |j, _| q[j] * (aty[j] + xi[j] - r[j]));
            ds = -&dx;
            dz = DVector::from_fn(m, |j, _| mu * xinv[j] - z[j] - xinv[j] * z[j] * dx[j] - dxdz[j]);
            dw = DVector::from_fn(m, |j, _| mu * sinv[j] - wv[j] - sinv[j] * wv[j] * ds[j] - dsdw[j]);
            (fp, fd) = steps(&dx, &ds, &dz, &dw);
        }
        xv += fp * &dx;
        s += fp * &ds;
        yv += fd * &dy;
        wv += fd * &dw;
        z += fd * &dz;
        gap = gap_of(&xv, &yv, &wv);
        if !gap.is_finite() {
            return Err(Error::Numerical("interior-point iterates diverged".into()));
        }
    }
    if !converged && gap.abs() / (1.0 + c.dot(&xv).abs()) < ctrl.tol {
        converged = true;
    }
    Ok(QrFit {
        coefficients: yv.iter().map(|v| -v).collect(),
        iterations: it,
        converged,
    })
}

/// Equally spaced interior levels `j/(n+1)`, `j = 1..n`.
pub fn tau_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|j| j as f64 / (n + 1) as f64).collect()
}

/// Cell midpoints `(j − 1/2)/n`, `j = 1..n`: the interior grid whose uniform
/// weights reproduce the moments of `U ~ Unif(0, 1)` most closely.
pub fn midpoint_tau_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|j| (j as f64 - 0.5) / n as f64).collect()
}

/// Coefficient path of one period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QrPath {
    pub period: String,
    pub taus: Vec<f64>,
    pub design: DesignSpec,
    /// `coefs[j]` is `β(taus[j])`.
    pub coefs: Vec<Vec<f64>>,
    /// Levels whose fit did not converge and were interpolated.
    pub flagged: Vec<usize>,
}

/// Fits the quantile-regression path of `view` on `taus`.
pub fn fit_qr_path(view: &PeriodView, design: &DesignSpec, taus: &[f64], ctrl: &QrControl) -> Result<QrPath> {
    if taus.is_empty() || taus.windows(2).any(|t| t[0] >= t[1]) {
        return Err(Error::InvalidArgument("level grid must be nonempty and increasing".into()));
    }
    let p = design.width();
    let mut x = vec![0.0; view.len() * p];
    let mut y = Vec::with_capacity(view.len());
    for (i, (o, _)) in view.iter().enumerate() {
        design.fill(&o.covariates, &mut x[i * p..(i + 1) * p]);
        y.push(o.outcome);
    }
    let fits = par::map_range(taus.len(), |j| quantile_regression(&x, p, &y, view.weights(), taus[j], ctrl));
    let mut coefs: Vec<Option<Vec<f64>>> = Vec::with_capacity(taus.len());
    let mut flagged = Vec::new();
    for (j, f) in fits.into_iter().enumerate() {
        match f {
            Ok(f) if f.converged => coefs.push(Some(f.coefficients)),
            Ok(_) | Err(Error::Numerical(_)) => {
                flagged.push(j);
                coefs.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let good: Vec<usize> = (0..taus.len()).filter(|&j| coefs[j].is_some()).collect();
    if good.is_empty() {
        return Err(Error::Numerical(format!("no quantile regression converged in period `{}`", view.period())));
    }
    if !flagged.is_empty() {
        log::warn!("period `{}`: {} quantile levels did not converge; interpolated from neighbours", view.period(), flagged.len());
    }
    let filled: Vec<Vec<f64>> = (0..taus.len())
        .map(|j| {
            if let Some(c) = &coefs[j] {
                return c.clone();
            }
            let lo = good.iter().rev().find(|&&g| g < j).copied();
            let hi = good.iter().find(|&&g| g > j).copied();
            match (lo, hi) {
                (Some(l), Some(h)) => {
                    let t = (taus[j] - taus[l]) / (taus[h] - taus[l]);
                    let (a, b) = (coefs[l].as_ref().unwrap(), coefs[h].as_ref().unwrap());
                    a.iter().zip(b).map(|(u, v)| u + t * (v - u)).collect()
                }
                (Some(g), None) | (None, Some(g)) => coefs[g].clone().unwrap(),
                (None, None) => unreachable!(),
            }
        })
        .collect();
    Ok(QrPath {
        period: view.period().to_string(),
        taus: taus.to_vec(),
        design: design.clone(),
        coefs: filled,
        flagged,
    })
}

impl QrPath {
    /// Index of the level nearest 0.5.
    pub fn median_index(&self) -> usize {
        (0..self.taus.len())
            .min_by(|&a, &b| (self.taus[a] - 0.5).abs().total_cmp(&(self.taus[b] - 0.5).abs()))
            .expect("nonempty grid")
    }

    /// `β_self(0.5) + β_resid(τ) − β_resid(0.5)`: this path's median slope
    /// with the rank profile of `resid`.
    pub fn with_residuals_of(&self, resid: &QrPath) -> Result<QrPath> {
        if self.taus != resid.taus || self.design != resid.design {
            return Err(Error::InvalidArgument("paths must share levels and design".into()));
        }
        let (ms, mr) = (self.median_index(), resid.median_index());
        let coefs = resid
            .coefs
            .iter()
            .map(|b| b.iter().enumerate().map(|(k, v)| self.coefs[ms][k] + v - resid.coefs[mr][k]).collect())
            .collect();
        Ok(QrPath {
            period: format!("{}|{}", self.period, resid.period),
            taus: self.taus.clone(),
            design: self.design.clone(),
            coefs,
            flagged: Vec::new(),
        })
    }

    /// Share of (row, adjacent level pair) where the fitted conditional
    /// quantile decreases.
    pub fn crossing_rate(&self, view: &PeriodView) -> f64 {
        let mut crossings = 0usize;
        let mut total = 0usize;
        for (o, _) in view.iter() {
            let row = self.design.row(&o.covariates);
            let fitted: Vec<f64> = self.coefs.iter().map(|b| b.iter().zip(&row).map(|(u, v)| u * v).sum()).collect();
            crossings += fitted.windows(2).filter(|f| f[1] < f[0]).count();
            total += fitted.len().saturating_sub(1);
        }
        if total == 0 {
            0.0
        } else {
            crossings as f64 / total as f64
        }
    }
}

/// Fitted values pooled over rows and levels, sorted, with cumulative
/// weights `w_i · Δτ_j`.
#[derive(Clone, Debug)]
pub struct PooledDistribution {
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl PooledDistribution {
    pub fn new(path: &QrPath, view: &PeriodView) -> Result<Self> {
        let j = path.taus.len();
        let dtau: Vec<f64> = (0..j)
            .map(|k| {
                let lo = if k == 0 { 0.0 } else { (path.taus[k - 1] + path.taus[k]) / 2.0 };
                let hi = if k + 1 == j { 1.0 } else { (path.taus[k] + path.taus[k + 1]) / 2.0 };
                hi - lo
            })
            .collect();
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(view.len() * j);
        for (o, w) in view.iter() {
            if w == 0.0 {
                continue;
            }
            let row = path.design.row(&o.covariates);
            for (b, dt) in path.coefs.iter().zip(&dtau) {
                pairs.push((b.iter().zip(&row).map(|(u, v)| u * v).sum(), w * dt));
            }
        }
        if pairs.is_empty() {
            return Err(Error::Validation("no weighted rows to pool".into()));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let cumulative = pairs
            .iter()
            .map(|p| {
                acc += p.1;
                acc
            })
            .collect();
        Ok(Self {
            values: pairs.into_iter().map(|p| p.0).collect(),
            cumulative,
        })
    }

    /// Weighted left-inverse quantile of the pooled values.
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidArgument(format!("quantile level {tau} outside (0, 1)")));
        }
        let total = *self.cumulative.last().unwrap();
        let k = self.cumulative.partition_point(|&c| c < tau * total).min(self.values.len() - 1);
        Ok(self.values[k])
    }

    /// As a grid CDF on the distinct pooled values.
    pub fn to_grid(&self) -> GridCdf {
        let total = *self.cumulative.last().unwrap();
        let mut grid: Vec<f64> = Vec::new();
        let mut cdf: Vec<f64> = Vec::new();
        for (v, c) in self.values.iter().zip(&self.cumulative) {
            if grid.last() == Some(v) {
                *cdf.last_mut().unwrap() = c / total;
            } else {
                grid.push(*v);
                cdf.push(c / total);
            }
        }
        *cdf.last_mut().unwrap() = 1.0;
        GridCdf { grid, cdf }
    }

    pub fn stats(&self) -> Result<InequalityStats> {
        inequality_stats(&self.to_grid(), QuantileMode::Step)
    }
}

/// Unconditional `tau` quantile implied by `path` and the rows of `view`.
pub fn unconditional_quantile(path: &QrPath, view: &PeriodView, tau: f64) -> Result<f64> {
    PooledDistribution::new(path, view)?.quantile(tau)
}

pub const MELLY_COLUMNS: [&str; 4] = ["Total", "Coefficients", "Characteristics", "Residuals"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MellyReport {
    pub statistics: Vec<String>,
    pub columns: Vec<String>,
    /// Percent, `values[s][c]` in [`MELLY_COLUMNS`] order.
    pub values: Vec<Vec<f64>>,
    pub crossing_rate: [f64; 2],
    pub flagged_levels: [usize; 2],
}

impl MellyReport {
    pub fn value(&self, statistic: &str, column: &str) -> Option<f64> {
        let s = self.statistics.iter().position(|n| n == statistic)?;
        let c = self.columns.iter().position(|n| n == column)?;
        Some(self.values[s][c])
    }

    pub fn telescoping_error(&self) -> f64 {
        self.values
            .iter()
            .map(|r| (r[0] - r[1] - r[2] - r[3]).abs())
            .fold(0.0, f64::max)
    }

    pub fn as_report(&self) -> crate::functionals::DecompositionReport {
        crate::functionals::DecompositionReport {
            statistics: self.statistics.clone(),
            columns: self.columns.clone(),
            values: self.values.clone(),
            se: None,
            meta: Default::default(),
        }
    }
}

/// Decomposes the change from `reference` (paths and rows) to `comparison`
/// into coefficient, characteristic and residual effects:
///
/// * residuals: `Q(β_c, X_c) − Q(β_m, X_c)`
/// * coefficients: `Q(β_m, X_c) − Q(β_r, X_c)`
/// * characteristics: `Q(β_r, X_c) − Q(β_r, X_r)`
///
/// with `β_m(τ) = β_c(0.5) + β_r(τ) − β_r(0.5)`.
pub fn melly_decompose(reference: (&QrPath, &PeriodView), comparison: (&QrPath, &PeriodView)) -> Result<MellyReport> {
    let (path_r, x_r) = reference;
    let (path_c, x_c) = comparison;
    if path_r.taus != path_c.taus {
        return Err(Error::InvalidArgument("paths must share one level grid".into()));
    }
    let mixed = path_c.with_residuals_of(path_r)?;
    let s_cc = PooledDistribution::new(path_c, x_c)?.stats()?.values();
    let s_mc = PooledDistribution::new(&mixed, x_c)?.stats()?.values();
    let s_rc = PooledDistribution::new(path_r, x_c)?.stats()?.values();
    let s_rr = PooledDistribution::new(path_r, x_r)?.stats()?.values();
    let values = (0..STATISTICS.len())
        .map(|s| {
            let residuals = 100.0 * (s_cc[s] - s_mc[s]);
            let coefficients = 100.0 * (s_mc[s] - s_rc[s]);
            let characteristics = 100.0 * (s_rc[s] - s_rr[s]);
            vec![residuals + coefficients + characteristics, coefficients, characteristics, residuals]
        })
        .collect();
    Ok(MellyReport {
        statistics: STATISTICS.iter().map(|s| s.to_string()).collect(),
        columns: MELLY_COLUMNS.iter().map(|s| s.to_string()).collect(),
        values,
        crossing_rate: [path_r.crossing_rate(x_r), path_c.crossing_rate(x_c)],
        flagged_levels: [path_r.flagged.len(), path_c.flagged.len()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force weighted check loss.
    fn check_loss(x: &[f64], p: usize, y: &[f64], w: &[f64], tau: f64, b: &[f64]) -> f64 {
        y.iter()
            .enumerate()
            .map(|(i, yi)| {
                let r = yi - x[i * p..(i + 1) * p].iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
                w[i] * r * (tau - f64::from(r < 0.0))
            })
            .sum()
    }

    #[test]
    fn intercept_only_is_a_weighted_quantile() {
        let y = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6];
        let w = [1.0, 2.0, 1.0, 1.0, 0.5, 1.0];
        let x = [1.0; 6];
        let f = quantile_regression(&x, 1, &y, &w, 0.5, &QrControl::default()).unwrap();
        assert!(f.converged);
        // Sorted: 1.0(2) 1.5(1) 2.6(1) 3.0(1) 4.0(1) 9.0(0.5); half of 6.5 is
        // reached inside 2.6's weight.
        assert!((f.coefficients[0] - 2.6).abs() < 1e-6, "{:?}", f.coefficients);
    }

    #[test]
    fn solution_minimizes_check_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 300;
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut w = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen_range(-1.0..2.0);
            x.extend([1.0, a]);
            y.push(1.0 + 0.5 * a + rng.gen_range(-1.0..1.0) * (1.0 + 0.3 * a));
            w.push(rng.gen_range(0.5..2.0));
        }
        for tau in [0.1, 0.5, 0.83] {
            let f = quantile_regression(&x, 2, &y, &w, tau, &QrControl::default()).unwrap();
            assert!(f.converged);
            let best = check_loss(&x, 2, &y, &w, tau, &f.coefficients);
            for d in [[1e-3, 0.0], [-1e-3, 0.0], [0.0, 1e-3], [0.0, -1e-3], [1e-3, -1e-3]] {
                let b = [f.coefficients[0] + d[0], f.coefficients[1] + d[1]];
                assert!(check_loss(&x, 2, &y, &w, tau, &b) >= best - 1e-6);
            }
        }
    }

    #[test]
    fn tau_grid_of_99_is_percentiles() {
        let t = tau_grid(99);
        assert_eq!(t.len(), 99);
        assert!((t[49] - 0.5).abs() < 1e-15);
    }
}
