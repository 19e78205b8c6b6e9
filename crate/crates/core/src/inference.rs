//! Bootstrap standard errors and confidence bands.
//!
//! Every replication reruns the whole pipeline on a perturbed sample. Each
//! replication draws from its own random stream, so results do not depend
//! on scheduling.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::analysis::PreparedAnalysis;
use crate::dataset::{Dataset, PeriodView, Sample};
use crate::error::{Error, Result};
use crate::functionals::{CurveBundle, DecompositionReport};
use crate::par;

/// IQR of a standard normal.
const NORMAL_IQR: f64 = 1.348_979_500_392_163_5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightLaw {
    /// Standard exponential multipliers (mean 1, variance 1).
    #[default]
    Exponential,
    /// All multipliers 1: reproduces the point estimate.
    Constant,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum BootstrapScheme {
    /// Resample rows with replacement within each period, keeping survey
    /// weights.
    #[default]
    ResampleRows,
    /// Multiply survey weights by i.i.d. nonnegative unit-mean draws.
    ExchangeableWeights {
        #[serde(default)]
        law: WeightLaw,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeSummary {
    /// Interquartile range of the draws over that of a standard normal.
    #[default]
    Iqr,
    Sd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub scheme: BootstrapScheme,
    pub seed: u64,
    pub coverage: f64,
    pub se: SeSummary,
    /// Largest tolerated share of failed replications.
    pub max_failure_share: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replications: 500,
            scheme: BootstrapScheme::ResampleRows,
            seed: 1,
            coverage: 0.95,
            se: SeSummary::Iqr,
            max_failure_share: 0.1,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::InvalidArgument("at least 2 bootstrap replications".into()));
        }
        if !(self.coverage > 0.0 && self.coverage < 1.0) {
            return Err(Error::InvalidArgument(format!("coverage {} outside (0, 1)", self.coverage)));
        }
        Ok(())
    }

    fn rng(&self, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep as u64);
        rng
    }
}

/// The perturbed sample of replication `rep`.
pub fn replicate_sample<'a>(data: &'a Dataset, cfg: &BootstrapConfig, rep: usize) -> Result<Sample<'a>> {
    let mut rng = cfg.rng(rep);
    let mut views = Vec::with_capacity(2);
    for p in data.periods() {
        let full = data.view(p)?;
        let view = match cfg.scheme {
            BootstrapScheme::ResampleRows => {
                let n = full.len();
                let idx: Vec<usize> = (0..n).map(|_| full.indices()[rng.gen_range(0..n)]).collect();
                let w = idx.iter().map(|&i| data.rows()[i].weight).collect();
                PeriodView::new(data, p, idx, w)?
            }
            BootstrapScheme::ExchangeableWeights { law } => {
                let w = full
                    .weights()
                    .iter()
                    .map(|w| match law {
                        WeightLaw::Exponential => w * <Exp1 as Distribution<f64>>::sample(&Exp1, &mut rng),
                        WeightLaw::Constant => *w,
                    })
                    .collect();
                PeriodView::new(data, p, full.indices().to_vec(), w)?
            }
        };
        views.push(view);
    }
    Sample::new(views)
}

/// Successful replications in index order, plus the failures.
#[derive(Clone, Debug)]
pub struct BootstrapDraws {
    pub replications: Vec<usize>,
    pub reports: Vec<DecompositionReport>,
    pub curves: Vec<CurveBundle>,
    pub failures: Vec<(usize, String)>,
}

/// Reruns `analysis` on `cfg.replications` perturbed samples.
pub fn bootstrap_pipeline(data: &Dataset, analysis: &PreparedAnalysis, cfg: &BootstrapConfig) -> Result<BootstrapDraws> {
    cfg.validate()?;
    let results = par::map_range(cfg.replications, |rep| {
        replicate_sample(data, cfg, rep).and_then(|s| analysis.run(&s))
    });
    let mut draws = BootstrapDraws {
        replications: Vec::new(),
        reports: Vec::new(),
        curves: Vec::new(),
        failures: Vec::new(),
    };
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(out) => {
                draws.replications.push(rep);
                draws.reports.push(out.report);
                draws.curves.push(out.curves);
            }
            Err(e) => {
                log::warn!("bootstrap replication {rep} failed: {e}");
                draws.failures.push((rep, e.to_string()));
            }
        }
    }
    let share = draws.failures.len() as f64 / cfg.replications as f64;
    if share > cfg.max_failure_share {
        return Err(Error::Bootstrap(format!(
            "{} of {} replications failed (first: {})",
            draws.failures.len(),
            cfg.replications,
            draws.failures[0].1
        )));
    }
    Ok(draws)
}

/// Linear-interpolation sample quantile of sorted values.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Spread of bootstrap draws of one quantity.
pub fn draw_se(values: &[f64], summary: SeSummary) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Bootstrap("need at least 2 successful draws".into()));
    }
    match summary {
        SeSummary::Iqr => {
            let mut v = values.to_vec();
            v.sort_by(f64::total_cmp);
            Ok((sorted_quantile(&v, 0.75) - sorted_quantile(&v, 0.25)) / NORMAL_IQR)
        }
        SeSummary::Sd => {
            let n = values.len() as f64;
            let m = values.iter().sum::<f64>() / n;
            Ok((values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
        }
    }
}

/// Point report with a standard error in every cell.
pub fn summarize_se(point: &DecompositionReport, draws: &[DecompositionReport], summary: SeSummary) -> Result<DecompositionReport> {
    if draws.len() < 2 {
        return Err(Error::Bootstrap(format!("need at least 2 successful draws, have {}", draws.len())));
    }
    let mut se = vec![vec![0.0; point.columns.len()]; point.statistics.len()];
    for (s, row) in se.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let vals: Vec<f64> = draws.iter().map(|d| d.values[s][c]).collect();
            *cell = draw_se(&vals, summary)?;
        }
    }
    Ok(DecompositionReport {
        se: Some(se),
        ..point.clone()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandedCurve {
    pub argument: Vec<f64>,
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Uniform bands: one value. Pointwise bands: the largest.
    pub critical_value: f64,
}

fn scales(draws: &[Vec<f64>], estimate: &[f64], summary: SeSummary) -> Result<Vec<f64>> {
    if draws.len() < 2 {
        return Err(Error::Bootstrap("need at least 2 draws for a band".into()));
    }
    if let Some(d) = draws.iter().find(|d| d.len() != estimate.len()) {
        return Err(Error::Dimension {
            expected: estimate.len(),
            got: d.len(),
        });
    }
    let mut s: Vec<f64> = (0..estimate.len())
        .map(|k| draw_se(&draws.iter().map(|d| d[k]).collect::<Vec<_>>(), summary))
        .collect::<Result<_>>()?;
    let mut positive: Vec<f64> = s.iter().copied().filter(|v| *v > 0.0).collect();
    positive.sort_by(f64::total_cmp);
    let floor = if positive.is_empty() { 1e-12 } else { (1e-3 * positive[positive.len() / 2]).max(1e-12) };
    let floored = s.iter().filter(|v| **v < floor).count();
    if floored > 0 {
        log::warn!("{floored} band points have near-zero bootstrap spread; scale floored at {floor:e}");
    }
    for v in s.iter_mut() {
        *v = v.max(floor);
    }
    Ok(s)
}

fn level_quantile(mut v: Vec<f64>, coverage: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    sorted_quantile(&v, coverage)
}

/// Sup-t band: the critical value is the `coverage` quantile over draws of
/// `max_k |draw_k − estimate_k| / scale_k`.
pub fn uniform_band(draws: &[Vec<f64>], estimate: &[f64], argument: &[f64], coverage: f64, summary: SeSummary) -> Result<BandedCurve> {
    let scale = scales(draws, estimate, summary)?;
    let sup: Vec<f64> = draws
        .iter()
        .map(|d| d.iter().zip(estimate).zip(&scale).map(|((x, e), s)| (x - e).abs() / s).fold(0.0, f64::max))
        .collect();
    let crit = level_quantile(sup, coverage);
    Ok(BandedCurve {
        argument: argument.to_vec(),
        estimate: estimate.to_vec(),
        lower: estimate.iter().zip(&scale).map(|(e, s)| e - crit * s).collect(),
        upper: estimate.iter().zip(&scale).map(|(e, s)| e + crit * s).collect(),
        critical_value: crit,
    })
}

/// Band from pointwise `coverage` quantiles of `|draw − estimate| / scale`.
pub fn pointwise_band(draws: &[Vec<f64>], estimate: &[f64], argument: &[f64], coverage: f64, summary: SeSummary) -> Result<BandedCurve> {
    let scale = scales(draws, estimate, summary)?;
    let crits: Vec<f64> = (0..estimate.len())
        .map(|k| level_quantile(draws.iter().map(|d| (d[k] - estimate[k]).abs() / scale[k]).collect(), coverage))
        .collect();
    Ok(BandedCurve {
        argument: argument.to_vec(),
        estimate: estimate.to_vec(),
        lower: (0..estimate.len()).map(|k| estimate[k] - crits[k] * scale[k]).collect(),
        upper: (0..estimate.len()).map(|k| estimate[k] + crits[k] * scale[k]).collect(),
        critical_value: crits.iter().copied().fold(0.0, f64::max),
    })
}

/// Adds uniform bands to every curve of `bundle`.
pub fn attach_bands(bundle: &mut CurveBundle, draws: &[CurveBundle], coverage: f64, summary: SeSummary) -> Result<()> {
    let pick = |kind: usize, i: usize| -> Vec<Vec<f64>> {
        draws
            .iter()
            .map(|d| if kind == 0 { d.qe[i].values.clone() } else { d.de[i].values.clone() })
            .collect()
    };
    for (kind, curves) in [&mut bundle.qe, &mut bundle.de].into_iter().enumerate() {
        for (i, c) in curves.iter_mut().enumerate() {
            let band = uniform_band(&pick(kind, i), &c.values, &c.argument, coverage, summary)?;
            c.lower = Some(band.lower);
            c.upper = Some(band.upper);
        }
    }
    Ok(())
}

/// Report draws as CSV: one row per replication, one column per
/// `statistic:column` cell.
pub fn write_draws_csv<W: Write>(draws: &BootstrapDraws, mut out: W) -> Result<()> {
    let Some(first) = draws.reports.first() else {
        return Ok(());
    };
    let mut header = vec!["replication".to_string()];
    for s in &first.statistics {
        for c in &first.columns {
            header.push(format!("{s}:{c}"));
        }
    }
    writeln!(out, "{}", header.join(","))?;
    for (rep, r) in draws.replications.iter().zip(&draws.reports) {
        let cells: Vec<String> = r.cells().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{rep},{}", cells.join(","))?;
    }
    Ok(())
}
