//! Distribution regression: the conditional CDF `F(y | x)` estimated by one
//! binary regression of `1{Y <= y}` on `x` per threshold `y`.
//!
//! Rows with identical design vectors are pooled before fitting, so a
//! threshold fit costs one GLM over the distinct covariate patterns. The
//! estimates are the same as fitting the raw rows.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{DesignSpec, PeriodView};
use crate::error::{Error, Result};
use crate::glm::{fit_binary, DesignMatrix, FitControl, FitStatus, GlmFit, Link};
use crate::par;

/// How a threshold grid is derived from a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GridSpec {
    /// Every distinct observed value.
    AllUnique,
    /// `points` weighted empirical quantiles at equally spaced levels from 0
    /// to 1, so the grid runs from the sample minimum to the maximum. Falls
    /// back to all distinct values when there are no more than `points`.
    QuantileSpaced {
        points: usize,
        /// Drop thresholds below the `trim` and above the `1 − trim`
        /// quantile, keeping the maximum so the CDF still reaches one.
        #[serde(default)]
        trim: Option<f64>,
    },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::QuantileSpaced {
            points: 100,
            trim: None,
        }
    }
}

/// Strictly increasing threshold values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub values: Vec<f64>,
    pub construction: GridSpec,
}

impl ThresholdGrid {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty threshold grid".into()));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("threshold grid must be finite and strictly increasing".into()));
        }
        Ok(Self {
            values,
            construction: GridSpec::AllUnique,
        })
    }

    /// Builds a grid from weighted values.
    pub fn build(values: &[f64], weights: &[f64], spec: GridSpec) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("cannot build a grid from no values".into()));
        }
        let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut uniq: Vec<f64> = Vec::new();
        let mut cum: Vec<f64> = Vec::new();
        let mut acc = 0.0;
        for (v, w) in pairs {
            acc += w;
            if uniq.last() == Some(&v) {
                *cum.last_mut().unwrap() = acc;
            } else {
                uniq.push(v);
                cum.push(acc);
            }
        }
        let total = acc;
        let grid = match spec {
            GridSpec::AllUnique => uniq,
            GridSpec::QuantileSpaced { points, trim } => {
                if points < 2 {
                    return Err(Error::InvalidArgument("quantile-spaced grid needs at least 2 points".into()));
                }
                let mut g = if uniq.len() <= points {
                    uniq.clone()
                } else {
                    let mut g: Vec<f64> = Vec::with_capacity(points);
                    for j in 0..points {
                        let level = j as f64 / (points - 1) as f64;
                        let at = cum.partition_point(|&c| c < level * total).min(uniq.len() - 1);
                        let v = if j == points - 1 { uniq[uniq.len() - 1] } else { uniq[at] };
                        if g.last().is_none_or(|&l| v > l) {
                            g.push(v);
                        }
                    }
                    g
                };
                if let Some(t) = trim {
                    if !(0.0..0.5).contains(&t) {
                        return Err(Error::InvalidArgument(format!("trim {t} outside [0, 0.5)")));
                    }
                    let lo = uniq[cum.partition_point(|&c| c < t * total).min(uniq.len() - 1)];
                    let hi = uniq[cum.partition_point(|&c| c < (1.0 - t) * total).min(uniq.len() - 1)];
                    let top = *g.last().unwrap();
                    g.retain(|&v| (v >= lo && v <= hi) || v == top);
                }
                g
            }
        };
        Ok(Self {
            values: grid,
            construction: spec,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same grid shifted by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v + c).collect(),
            construction: self.construction,
        }
    }
}

/// Sorts a sequence of CDF values into nondecreasing order, clamped to
/// `[0, 1]`. Leaves already-monotone input untouched.
pub fn rearrange(values: &mut [f64]) {
    for v in values.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    if values.windows(2).any(|w| w[0] > w[1]) {
        values.sort_by(f64::total_cmp);
    }
}

/// Per-threshold fit outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdFlag {
    Ok,
    /// All responses 0 (below the support) or 1 (at or above its top).
    Degenerate,
    Separated,
    NotConverged,
}

/// The fitted conditional distribution of one variable given a design, at
/// each point of a threshold grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalOutcomeModel {
    pub period: String,
    pub grid: ThresholdGrid,
    pub link: Link,
    pub design: DesignSpec,
    pub fits: Vec<GlmFit>,
}

/// Rows pooled by identical design vectors, each with its sorted response
/// values and running weight.
pub(crate) struct PooledRows {
    pub design: Vec<f64>,
    pub width: usize,
    pub weight: Vec<f64>,
    values: Vec<Vec<f64>>,
    cumw: Vec<Vec<f64>>,
}

impl PooledRows {
    pub fn new<'a>(rows: impl Iterator<Item = (&'a [f64], f64, f64)>, design: &DesignSpec) -> Self {
        let width = design.width();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut flat = Vec::new();
        let mut weight = Vec::new();
        let mut members: Vec<Vec<(f64, f64)>> = Vec::new();
        let mut buf = vec![0.0; width];
        for (x, value, w) in rows {
            if w == 0.0 {
                continue;
            }
            design.fill(x, &mut buf);
            let key: Vec<u64> = buf.iter().map(|v| v.to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                flat.extend_from_slice(&buf);
                weight.push(0.0);
                members.push(Vec::new());
                weight.len() - 1
            });
            weight[g] += w;
            members[g].push((value, w));
        }
        let mut values = Vec::with_capacity(members.len());
        let mut cumw = Vec::with_capacity(members.len());
        for mut m in members {
            m.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut acc = 0.0;
            values.push(m.iter().map(|p| p.0).collect());
            cumw.push(
                m.iter()
                    .map(|p| {
                        acc += p.1;
                        acc
                    })
                    .collect(),
            );
        }
        Self {
            design: flat,
            width,
            weight,
            values,
            cumw,
        }
    }

    pub fn groups(&self) -> usize {
        self.weight.len()
    }

    /// Weighted share of each group at or below `y`.
    pub fn shares_below(&self, y: f64) -> Vec<f64> {
        (0..self.groups())
            .map(|g| {
                let k = self.values[g].partition_point(|&v| v <= y);
                if k == 0 {
                    0.0
                } else if k == self.values[g].len() {
                    1.0
                } else {
                    (self.cumw[g][k - 1] / self.weight[g]).min(1.0)
                }
            })
            .collect()
    }
}

/// Fits one binary regression per grid point on pooled rows.
pub(crate) fn fit_on_pooled(
    pooled: &PooledRows,
    grid: &ThresholdGrid,
    design: &DesignSpec,
    link: Link,
    ctrl: &FitControl,
    period: &str,
) -> Result<ConditionalOutcomeModel> {
    if pooled.groups() == 0 {
        return Err(Error::Validation(format!("no rows with positive weight in period `{period}`")));
    }
    let x = DesignMatrix::new(&pooled.design, pooled.width)?;
    let fits = par::map_range(grid.len(), |j| {
        let z = pooled.shares_below(grid.values[j]);
        fit_binary(&x, &z, &pooled.weight, link, ctrl)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let informative = fits.iter().filter(|f| !f.is_degenerate()).count();
    if informative < 2 && grid.len() > 1 {
        return Err(Error::Validation(format!(
            "distribution regression in period `{period}` has {informative} non-degenerate thresholds; need at least 2"
        )));
    }
    Ok(ConditionalOutcomeModel {
        period: period.to_string(),
        grid: grid.clone(),
        link,
        design: design.clone(),
        fits,
    })
}

/// Fits the conditional outcome CDF of `view`'s period on `grid`.
pub fn fit_distribution_regression(
    view: &PeriodView,
    design: &DesignSpec,
    grid: &ThresholdGrid,
    link: Link,
    ctrl: &FitControl,
) -> Result<ConditionalOutcomeModel> {
    let pooled = PooledRows::new(
        view.iter().map(|(o, w)| (o.covariates.as_slice(), o.outcome, w)),
        design,
    );
    fit_on_pooled(&pooled, grid, design, link, ctrl, view.period())
}

/// Grid built from the view's own outcomes, then [`fit_distribution_regression`].
pub fn fit_distribution_regression_with_spec(
    view: &PeriodView,
    design: &DesignSpec,
    spec: GridSpec,
    link: Link,
    ctrl: &FitControl,
) -> Result<ConditionalOutcomeModel> {
    let grid = ThresholdGrid::build(&view.outcomes(), view.weights(), spec)?;
    fit_distribution_regression(view, design, &grid, link, ctrl)
}

impl ConditionalOutcomeModel {
    pub fn flags(&self) -> Vec<ThresholdFlag> {
        self.fits
            .iter()
            .map(|f| match f.status {
                FitStatus::Converged => ThresholdFlag::Ok,
                FitStatus::Degenerate { .. } => ThresholdFlag::Degenerate,
                FitStatus::Separated => ThresholdFlag::Separated,
                FitStatus::NotConverged => ThresholdFlag::NotConverged,
            })
            .collect()
    }

    /// Coefficient matrix, one row per threshold.
    pub fn coefficients(&self) -> Vec<Vec<f64>> {
        self.fits.iter().map(|f| f.coefficients.clone()).collect()
    }

    /// Unrearranged predicted probabilities over the grid for a design row.
    pub fn raw_cdf(&self, design_row: &[f64]) -> Result<Vec<f64>> {
        self.fits.iter().map(|f| f.predict(design_row)).collect()
    }

    /// Rearranged conditional CDF over the grid at covariate vector `x`.
    pub fn conditional_cdf(&self, x: &[f64]) -> Result<Vec<f64>> {
        let needed = self.design.columns.iter().copied().max().map_or(0, |m| m + 1);
        if x.len() < needed {
            return Err(Error::Dimension {
                expected: needed,
                got: x.len(),
            });
        }
        let mut cdf = self.raw_cdf(&self.design.row(x))?;
        rearrange(&mut cdf);
        Ok(cdf)
    }

    /// Rearranged CDFs for many design rows at once (row-major, `rows × width`
    /// in, `rows × grid` out).
    pub(crate) fn cdf_batch(&self, design_rows: &[f64], rows: usize) -> Vec<f64> {
        let p = self.design.width();
        let g = self.grid.len();
        if rows == 0 {
            return Vec::new();
        }
        let l = DMatrix::from_row_slice(rows, p, design_rows);
        let mut gamma = DMatrix::zeros(p, g);
        for (j, f) in self.fits.iter().enumerate() {
            for k in 0..p {
                gamma[(k, j)] = f.coefficients[k];
            }
        }
        let idx = l * gamma;
        let mut out = vec![0.0; rows * g];
        for r in 0..rows {
            let dst = &mut out[r * g..(r + 1) * g];
            for (j, f) in self.fits.iter().enumerate() {
                dst[j] = f.prob_from_index(idx[(r, j)]);
            }
            rearrange(dst);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.fits.len() != m.grid.len() {
            return Err(Error::Validation("model has one fit per threshold".into()));
        }
        let p = m.design.width();
        if m.fits.iter().any(|f| f.coefficients.len() != p) {
            return Err(Error::Validation("coefficient rows must match the design width".into()));
        }
        Ok(m)
    }
}
