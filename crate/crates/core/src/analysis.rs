//! The full decomposition pipeline: outcome models, block models, the
//! counterfactual chain, and its report and curves.

use serde::{Deserialize, Serialize};

use crate::counterfactual::{run_chain, CounterfactualDistribution, CounterfactualOptions};
use crate::dataset::{Dataset, FactorSchema, Sample};
use crate::distreg::{GridSpec, ThresholdGrid};
use crate::error::{Error, Result};
use crate::functionals::{
    chain_stats, qe_de_curves, quantile, report_from_stats, CurveBundle, DecompositionReport, GridCdf, InequalityStats,
    QuantileLevels, QuantileMode, ReportMeta,
};

pub const STRUCTURE: &str = "Structure";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSpec {
    /// Block order; the schema order when absent.
    pub sequence: Option<Vec<String>>,
    /// Period whose covariates and structure are swapped in; the dataset's
    /// first period when absent.
    pub reference: Option<String>,
    pub comparison: Option<String>,
    pub grid: GridSpec,
    /// Swap the structure first instead of last.
    pub structure_first: bool,
    pub counterfactual: CounterfactualOptions,
    pub quantile_mode: QuantileMode,
    pub levels: QuantileLevels,
    /// Points on the distribution-effect argument grid.
    pub de_points: usize,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            sequence: None,
            reference: None,
            comparison: None,
            grid: GridSpec::default(),
            structure_first: false,
            counterfactual: CounterfactualOptions::default(),
            quantile_mode: QuantileMode::Interpolated,
            levels: QuantileLevels::band(),
            de_points: 100,
        }
    }
}

/// An analysis with everything that must stay fixed across bootstrap
/// replications (threshold grids, the distribution-effect grid) derived once
/// from the point sample.
#[derive(Clone, Debug)]
pub struct PreparedAnalysis {
    pub spec: AnalysisSpec,
    pub schema: FactorSchema,
    pub reference: String,
    pub comparison: String,
    pub grids: Vec<(String, ThresholdGrid)>,
    pub de_grid: Vec<f64>,
    /// Names of the chain steps.
    pub labels: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct AnalysisOutput {
    pub chain: Vec<CounterfactualDistribution>,
    pub stats: Vec<InequalityStats>,
    pub report: DecompositionReport,
    pub curves: CurveBundle,
}

impl PreparedAnalysis {
    pub fn new(data: &Dataset, spec: AnalysisSpec) -> Result<Self> {
        let [first, second] = data.periods().clone();
        let reference = spec.reference.clone().unwrap_or(first.clone());
        let comparison = spec.comparison.clone().unwrap_or(if reference == first { second } else { first });
        if reference == comparison {
            return Err(Error::InvalidArgument("reference and comparison periods must differ".into()));
        }
        for p in [&reference, &comparison] {
            if !data.has_period(p) {
                return Err(Error::InvalidArgument(format!("dataset has no period `{p}`")));
            }
        }
        let schema = match &spec.sequence {
            Some(seq) => data.schema().reordered(seq)?,
            None => data.schema().clone(),
        };
        let mut grids = Vec::with_capacity(2);
        let mut observed = Vec::with_capacity(2);
        for p in [&reference, &comparison] {
            let v = data.view(p)?;
            let y = v.outcomes();
            grids.push((p.clone(), ThresholdGrid::build(&y, v.weights(), spec.grid)?));
            observed.push(GridCdf::from_sample(&y, v.weights())?);
        }
        let mode = spec.quantile_mode;
        let lo = quantile(&observed[0], 0.01, mode)?.min(quantile(&observed[1], 0.01, mode)?);
        let hi = quantile(&observed[0], 0.97, mode)?.max(quantile(&observed[1], 0.97, mode)?);
        let n = spec.de_points.max(2);
        let de_grid = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let blocks = schema.blocks.iter().map(|b| b.name.clone());
        let labels = if spec.structure_first {
            std::iter::once(STRUCTURE.to_string()).chain(blocks).collect()
        } else {
            blocks.chain(std::iter::once(STRUCTURE.to_string())).collect()
        };
        Ok(Self {
            spec,
            schema,
            reference,
            comparison,
            grids,
            de_grid,
            labels,
        })
    }

    /// Evaluates the chain on one sample.
    pub fn chain(&self, sample: &Sample) -> Result<Vec<CounterfactualDistribution>> {
        run_chain(
            sample,
            &self.schema,
            &self.reference,
            &self.comparison,
            &self.grids,
            self.spec.structure_first,
            &self.spec.counterfactual,
        )
    }

    /// Runs the whole pipeline on one sample.
    pub fn run(&self, sample: &Sample) -> Result<AnalysisOutput> {
        let chain = self.chain(sample)?;
        let stats = chain_stats(&chain, self.spec.quantile_mode)?;
        let mut report = report_from_stats(&stats, &self.labels);
        report.meta = ReportMeta {
            reference: self.reference.clone(),
            comparison: self.comparison.clone(),
            sequence: self.schema.blocks.iter().map(|b| b.name.clone()).collect(),
            link: self.spec.counterfactual.link.to_string(),
            grid: serde_json::to_string(&self.spec.grid)?,
        };
        let curves = qe_de_curves(&chain, &self.labels, &self.spec.levels, &self.de_grid, self.spec.quantile_mode)?;
        Ok(AnalysisOutput {
            chain,
            stats,
            report,
            curves,
        })
    }
}

/// Prepares and runs `spec` on the full dataset.
pub fn analyze(data: &Dataset, spec: AnalysisSpec) -> Result<AnalysisOutput> {
    PreparedAnalysis::new(data, spec)?.run(&data.sample())
}
