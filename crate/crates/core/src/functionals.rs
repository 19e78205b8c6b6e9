//! Statistics of grid-represented distributions and decomposition tables.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::counterfactual::CounterfactualDistribution;
use crate::error::{Error, Result};

/// A CDF stored as values at increasing grid points, read as a right-
/// continuous step function.
pub trait GridDistribution {
    fn grid(&self) -> &[f64];
    fn cdf(&self) -> &[f64];

    /// Step CDF at any `y`.
    fn cdf_at(&self, y: f64) -> f64 {
        let k = self.grid().partition_point(|&g| g <= y);
        if k == 0 {
            0.0
        } else {
            self.cdf()[k - 1]
        }
    }
}

impl GridDistribution for CounterfactualDistribution {
    fn grid(&self) -> &[f64] {
        &self.grid.values
    }

    fn cdf(&self) -> &[f64] {
        &self.cdf
    }
}

/// A standalone grid CDF.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCdf {
    pub grid: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl GridDistribution for GridCdf {
    fn grid(&self) -> &[f64] {
        &self.grid
    }

    fn cdf(&self) -> &[f64] {
        &self.cdf
    }
}

impl GridCdf {
    pub fn new(grid: Vec<f64>, cdf: Vec<f64>) -> Result<Self> {
        if grid.len() != cdf.len() {
            return Err(Error::Dimension {
                expected: grid.len(),
                got: cdf.len(),
            });
        }
        if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("grid must be nonempty and strictly increasing".into()));
        }
        Ok(Self { grid, cdf })
    }

    /// Weighted empirical CDF of a sample, on its distinct values.
    pub fn from_sample(values: &[f64], weights: &[f64]) -> Result<Self> {
        if values.len() != weights.len() || values.is_empty() {
            return Err(Error::InvalidArgument("need equally many values and weights, at least one".into()));
        }
        let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = weights.iter().sum();
        let mut grid: Vec<f64> = Vec::new();
        let mut cdf: Vec<f64> = Vec::new();
        let mut acc = 0.0;
        for (v, w) in pairs {
            acc += w;
            if grid.last() == Some(&v) {
                *cdf.last_mut().unwrap() = acc / total;
            } else {
                grid.push(v);
                cdf.push(acc / total);
            }
        }
        *cdf.last_mut().unwrap() = 1.0;
        Self::new(grid, cdf)
    }

    pub fn of<D: GridDistribution + ?Sized>(d: &D) -> Self {
        Self {
            grid: d.grid().to_vec(),
            cdf: d.cdf().to_vec(),
        }
    }

    /// Same distribution on the scale `c·Y`, `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.iter().map(|v| v * c).collect(),
            cdf: self.cdf.clone(),
        }
    }
}

/// Inverse convention for [`quantile`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMode {
    /// Linear between the bracketing grid points.
    #[default]
    Interpolated,
    /// The left inverse `inf{y : F(y) >= τ}` of the step CDF.
    Step,
}

/// The `tau` quantile of `dist`.
pub fn quantile<D: GridDistribution + ?Sized>(dist: &D, tau: f64, mode: QuantileMode) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level {tau} outside (0, 1)")));
    }
    let (g, f) = (dist.grid(), dist.cdf());
    if g.is_empty() {
        return Err(Error::InvalidArgument("empty distribution".into()));
    }
    let j = f.partition_point(|&v| v < tau);
    if j >= g.len() {
        return Ok(g[g.len() - 1]);
    }
    if j == 0 || mode == QuantileMode::Step {
        return Ok(g[j]);
    }
    let (f0, f1) = (f[j - 1], f[j]);
    if f1 <= f0 {
        return Ok(g[j]);
    }
    Ok(g[j - 1] + (tau - f0) / (f1 - f0) * (g[j] - g[j - 1]))
}

fn check_monotone<D: GridDistribution + ?Sized>(dist: &D) -> Result<()> {
    let f = dist.cdf();
    if f.len() != dist.grid().len() || f.is_empty() {
        return Err(Error::InvalidArgument("grid and CDF lengths differ".into()));
    }
    if f.iter().any(|v| !(0.0..=1.0 + 1e-12).contains(v)) || f.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("CDF must be nondecreasing within [0, 1]".into()));
    }
    if f[f.len() - 1] <= 0.0 {
        return Err(Error::InvalidArgument("CDF carries no mass".into()));
    }
    Ok(())
}

fn masses<D: GridDistribution + ?Sized>(dist: &D) -> Vec<f64> {
    let mut prev = 0.0;
    dist.cdf()
        .iter()
        .map(|&f| {
            let m = f - prev;
            prev = f;
            m
        })
        .collect()
}

/// Mean and standard deviation as Stieltjes sums over the grid increments,
/// normalized by the total mass.
pub fn moments<D: GridDistribution + ?Sized>(dist: &D) -> Result<(f64, f64)> {
    check_monotone(dist)?;
    let m = masses(dist);
    let total: f64 = m.iter().sum();
    let mean = dist.grid().iter().zip(&m).map(|(y, p)| y * p).sum::<f64>() / total;
    let var = dist.grid().iter().zip(&m).map(|(y, p)| p * (y - mean).powi(2)).sum::<f64>() / total;
    Ok((mean, var.max(0.0).sqrt()))
}

/// Lorenz ordinates `L(F_j)` at each grid point.
pub fn lorenz<D: GridDistribution + ?Sized>(dist: &D) -> Result<Vec<f64>> {
    check_monotone(dist)?;
    let m = masses(dist);
    let total_income: f64 = dist.grid().iter().zip(&m).map(|(y, p)| y * p).sum();
    let mut acc = 0.0;
    Ok(dist
        .grid()
        .iter()
        .zip(&m)
        .map(|(y, p)| {
            acc += y * p;
            acc / total_income
        })
        .collect())
}

/// Gini coefficient `1 − 2∫L dF`, with the Lorenz curve integrated by the
/// trapezoid rule in the probability coordinate (exact for a discrete law).
/// Requires positive grid values.
pub fn gini<D: GridDistribution + ?Sized>(dist: &D) -> Result<f64> {
    if dist.grid().iter().any(|&y| y <= 0.0) {
        return Err(Error::InvalidArgument("Gini needs a positive grid".into()));
    }
    let l = lorenz(dist)?;
    let m = masses(dist);
    let total: f64 = m.iter().sum();
    let mut prev = 0.0;
    let mut area = 0.0;
    for (lj, pj) in l.iter().zip(&m) {
        area += pj / total * (prev + lj);
        prev = *lj;
    }
    Ok(1.0 - area)
}

/// Names of the report statistics, in report order.
pub const STATISTICS: [&str; 7] = ["SD", "90-10", "50-10", "90-50", "75-25", "95-5", "Gini"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityStats {
    pub sd: f64,
    pub gini: f64,
    pub iqr_90_10: f64,
    pub iqr_50_10: f64,
    pub iqr_90_50: f64,
    pub iqr_75_25: f64,
    pub iqr_95_5: f64,
}

impl InequalityStats {
    /// Values in [`STATISTICS`] order.
    pub fn values(&self) -> [f64; 7] {
        [self.sd, self.iqr_90_10, self.iqr_50_10, self.iqr_90_50, self.iqr_75_25, self.iqr_95_5, self.gini]
    }
}

pub fn inequality_stats<D: GridDistribution + ?Sized>(dist: &D, mode: QuantileMode) -> Result<InequalityStats> {
    let q = |t: f64| quantile(dist, t, mode);
    let (q05, q10, q25, q50, q75, q90, q95) = (q(0.05)?, q(0.10)?, q(0.25)?, q(0.5)?, q(0.75)?, q(0.90)?, q(0.95)?);
    let iqr_50_10 = q50 - q10;
    let iqr_90_50 = q90 - q50;
    Ok(InequalityStats {
        sd: moments(dist)?.1,
        gini: gini(dist)?,
        iqr_90_10: iqr_90_50 + iqr_50_10,
        iqr_50_10,
        iqr_90_50,
        iqr_75_25: q75 - q25,
        iqr_95_5: q95 - q05,
    })
}

/// Quantile levels for curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileLevels {
    pub levels: Vec<f64>,
}

impl QuantileLevels {
    pub fn new(mut levels: Vec<f64>) -> Result<Self> {
        if levels.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::InvalidArgument("quantile levels must lie in (0, 1)".into()));
        }
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        Ok(Self { levels })
    }

    /// 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95.
    pub fn standard() -> Self {
        Self {
            levels: vec![0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95],
        }
    }

    /// 0.08 to 0.92 in steps of 0.01 (85 levels).
    pub fn band() -> Self {
        Self {
            levels: (8..=92).map(|k| f64::from(k) / 100.0).collect(),
        }
    }

    /// The band grid merged with the standard levels.
    pub fn with_standard() -> Self {
        let mut l = Self::band().levels;
        l.extend(Self::standard().levels);
        Self::new(l).expect("valid levels")
    }
}

/// Statistic × effect table in percent (log differences × 100).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub statistics: Vec<String>,
    /// `Total` first, then one column per chain step.
    pub columns: Vec<String>,
    /// `values[s][c]`.
    pub values: Vec<Vec<f64>>,
    #[serde(default)]
    pub se: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub meta: ReportMeta,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub reference: String,
    pub comparison: String,
    pub sequence: Vec<String>,
    pub link: String,
    pub grid: String,
}

impl DecompositionReport {
    pub fn value(&self, statistic: &str, column: &str) -> Option<f64> {
        let s = self.statistics.iter().position(|n| n == statistic)?;
        let c = self.columns.iter().position(|n| n == column)?;
        Some(self.values[s][c])
    }

    /// Largest `|total − Σ effects|` over statistics.
    pub fn telescoping_error(&self) -> f64 {
        self.values
            .iter()
            .map(|row| (row[0] - row[1..].iter().sum::<f64>()).abs())
            .fold(0.0, f64::max)
    }

    /// Flattened cells in row-major order, for bootstrap draws.
    pub fn cells(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}

/// Per-step statistics of a chain.
pub fn chain_stats<D: GridDistribution>(chain: &[D], mode: QuantileMode) -> Result<Vec<InequalityStats>> {
    chain.iter().map(|d| inequality_stats(d, mode)).collect()
}

/// Builds the report from a chain that runs from the observed comparison
/// distribution to the observed reference one. `labels[i]` names the swap
/// between `chain[i]` and `chain[i + 1]`. Effects are
/// `stat(chain[i]) − stat(chain[i + 1])` and the total is
/// `stat(chain[0]) − stat(chain[last])`, all × 100.
pub fn assemble_report<D: GridDistribution>(chain: &[D], labels: &[String], mode: QuantileMode) -> Result<DecompositionReport> {
    if chain.len() < 3 {
        return Err(Error::InvalidArgument(format!("a decomposition chain needs at least 3 distributions, got {}", chain.len())));
    }
    if labels.len() + 1 != chain.len() {
        return Err(Error::Dimension {
            expected: chain.len() - 1,
            got: labels.len(),
        });
    }
    let stats = chain_stats(chain, mode)?;
    Ok(report_from_stats(&stats, labels))
}

pub(crate) fn report_from_stats(stats: &[InequalityStats], labels: &[String]) -> DecompositionReport {
    let vals: Vec<[f64; 7]> = stats.iter().map(InequalityStats::values).collect();
    let last = vals.len() - 1;
    let values = (0..STATISTICS.len())
        .map(|s| {
            let mut row = vec![100.0 * (vals[0][s] - vals[last][s])];
            row.extend((0..last).map(|i| 100.0 * (vals[i][s] - vals[i + 1][s])));
            row
        })
        .collect();
    let mut columns = vec!["Total".to_string()];
    columns.extend(labels.iter().cloned());
    DecompositionReport {
        statistics: STATISTICS.iter().map(|s| s.to_string()).collect(),
        columns,
        values,
        se: None,
        meta: ReportMeta::default(),
    }
}

/// One curve over an argument grid, optionally with a band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub argument: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub lower: Option<Vec<f64>>,
    #[serde(default)]
    pub upper: Option<Vec<f64>>,
}

impl Curve {
    fn new(name: &str, argument: &[f64], values: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            argument: argument.to_vec(),
            values,
            lower: None,
            upper: None,
        }
    }
}

/// Quantile-effect and distribution-effect curves: `Total` then one per
/// chain step, in outcome units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveBundle {
    pub qe: Vec<Curve>,
    pub de: Vec<Curve>,
}

impl CurveBundle {
    /// All curve values concatenated, for bootstrap draws.
    pub fn cells(&self) -> Vec<f64> {
        self.qe.iter().chain(&self.de).flat_map(|c| c.values.iter().copied()).collect()
    }
}

/// `n` equally spaced points between the smaller 1st percentile and the
/// larger 97th percentile of the chain's two endpoints.
pub fn default_de_grid<D: GridDistribution>(chain: &[D], n: usize, mode: QuantileMode) -> Result<Vec<f64>> {
    let (first, last) = match chain {
        [a, .., b] => (a, b),
        _ => return Err(Error::InvalidArgument("chain needs two endpoints".into())),
    };
    let lo = quantile(first, 0.01, mode)?.min(quantile(last, 0.01, mode)?);
    let hi = quantile(first, 0.97, mode)?.max(quantile(last, 0.97, mode)?);
    if n < 2 || hi <= lo {
        return Ok(vec![lo]);
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

pub fn qe_de_curves<D: GridDistribution>(
    chain: &[D],
    labels: &[String],
    levels: &QuantileLevels,
    de_grid: &[f64],
    mode: QuantileMode,
) -> Result<CurveBundle> {
    if labels.len() + 1 != chain.len() || chain.len() < 2 {
        return Err(Error::Dimension {
            expected: chain.len().saturating_sub(1),
            got: labels.len(),
        });
    }
    let q: Vec<Vec<f64>> = chain
        .iter()
        .map(|d| levels.levels.iter().map(|&t| quantile(d, t, mode)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let f: Vec<Vec<f64>> = chain.iter().map(|d| de_grid.iter().map(|&y| d.cdf_at(y)).collect()).collect();
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    let last = chain.len() - 1;
    let build = |vals: &[Vec<f64>], arg: &[f64]| -> Vec<Curve> {
        let mut out = vec![Curve::new("Total", arg, diff(&vals[0], &vals[last]))];
        out.extend((0..last).map(|i| Curve::new(&labels[i], arg, diff(&vals[i], &vals[i + 1]))));
        out
    };
    Ok(CurveBundle {
        qe: build(&q, &levels.levels),
        de: build(&f, de_grid),
    })
}

/// Between- and within-group variance of `Y = X'β(U)` from a coefficient
/// path on a level grid (`coefs[j]` is `β(τ_j)`) and a weighted sample of
/// design rows: `E[β]'Var[X]E[β]` and `tr(E[XX']Var[β])`, with `E` and `Var`
/// over the grid taken as uniform.
pub fn variance_channels(coefs: &[Vec<f64>], design: &[Vec<f64>], weights: &[f64]) -> Result<(f64, f64)> {
    let p = coefs.first().map(Vec::len).ok_or_else(|| Error::InvalidArgument("empty coefficient path".into()))?;
    if coefs.iter().any(|c| c.len() != p) {
        return Err(Error::InvalidArgument("ragged coefficient path".into()));
    }
    if design.len() != weights.len() || design.is_empty() {
        return Err(Error::InvalidArgument("need one weight per design row".into()));
    }
    if let Some(r) = design.iter().find(|r| r.len() != p) {
        return Err(Error::Dimension { expected: p, got: r.len() });
    }
    let j = coefs.len() as f64;
    let eb: Vec<f64> = (0..p).map(|a| coefs.iter().map(|c| c[a]).sum::<f64>() / j).collect();
    let mut vb = DMatrix::<f64>::zeros(p, p);
    for c in coefs {
        for a in 0..p {
            for b in 0..p {
                vb[(a, b)] += (c[a] - eb[a]) * (c[b] - eb[b]) / j;
            }
        }
    }
    let w: f64 = weights.iter().sum();
    if w <= 0.0 {
        return Err(Error::InvalidArgument("weights sum to zero".into()));
    }
    let ex: Vec<f64> = (0..p).map(|a| design.iter().zip(weights).map(|(r, wi)| wi * r[a]).sum::<f64>() / w).collect();
    let mut exx = DMatrix::<f64>::zeros(p, p);
    let mut vx = DMatrix::<f64>::zeros(p, p);
    for (r, wi) in design.iter().zip(weights) {
        for a in 0..p {
            for b in 0..p {
                exx[(a, b)] += wi * r[a] * r[b] / w;
                vx[(a, b)] += wi * (r[a] - ex[a]) * (r[b] - ex[b]) / w;
            }
        }
    }
    let ebv = nalgebra::DVector::from_vec(eb);
    let between = (ebv.transpose() * &vx * &ebv)[(0, 0)];
    let within = (exx * vb).trace();
    Ok((between, within))
}

/// Probability mass per bin divided by bin width, for density plots.
pub fn binned_density<D: GridDistribution + ?Sized>(dist: &D, edges: &[f64]) -> Result<Vec<f64>> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("bin edges must be increasing, at least two".into()));
    }
    Ok(edges
        .windows(2)
        .map(|w| {
            // Mass in (w0, w1], left edge inclusive for the first bin.
            let lo = if w[0] == edges[0] { dist.cdf_at(w[0] - f64::EPSILON * w[0].abs().max(1.0)) } else { dist.cdf_at(w[0]) };
            (dist.cdf_at(w[1]) - lo) / (w[1] - w[0])
        })
        .collect())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Report as CSV: one row per statistic, each effect followed by an `_se`
/// column (empty without standard errors).
pub fn write_report_csv<W: Write>(report: &DecompositionReport, mut out: W) -> Result<()> {
    let mut header = vec!["statistic".to_string()];
    for c in &report.columns {
        header.push(csv_field(c));
        header.push(csv_field(&format!("{c}_se")));
    }
    writeln!(out, "{}", header.join(","))?;
    for (s, name) in report.statistics.iter().enumerate() {
        let mut row = vec![csv_field(name)];
        for c in 0..report.columns.len() {
            row.push(format!("{}", report.values[s][c]));
            row.push(report.se.as_ref().map_or(String::new(), |se| format!("{}", se[s][c])));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Fixed-width text table with standard errors in parentheses under each
/// value.
pub fn format_report_table(report: &DecompositionReport, decimals: usize) -> String {
    let width = report.columns.iter().map(String::len).max().unwrap_or(0).max(decimals + 8);
    let mut s = String::new();
    let _ = write!(s, "{:<10}", "");
    for c in &report.columns {
        let _ = write!(s, " {c:>width$}");
    }
    s.push('\n');
    for (i, name) in report.statistics.iter().enumerate() {
        let _ = write!(s, "{name:<10}");
        for v in &report.values[i] {
            let _ = write!(s, " {v:>width$.decimals$}");
        }
        s.push('\n');
        if let Some(se) = &report.se {
            let _ = write!(s, "{:<10}", "");
            for v in &se[i] {
                let cell = format!("({v:.decimals$})");
                let _ = write!(s, " {cell:>width$}");
            }
            s.push('\n');
        }
    }
    s
}

/// Curves in long format: `kind,step,argument,value,lower,upper`.
pub fn write_curves_csv<W: Write>(bundle: &CurveBundle, mut out: W) -> Result<()> {
    writeln!(out, "kind,step,argument,value,lower,upper")?;
    for (kind, curves) in [("qe", &bundle.qe), ("de", &bundle.de)] {
        for c in curves {
            for i in 0..c.argument.len() {
                let band = |b: &Option<Vec<f64>>| b.as_ref().map_or(String::new(), |v| format!("{}", v[i]));
                writeln!(
                    out,
                    "{kind},{},{},{},{},{}",
                    csv_field(&c.name),
                    c.argument[i],
                    c.values[i],
                    band(&c.lower),
                    band(&c.upper)
                )?;
            }
        }
    }
    Ok(())
}
