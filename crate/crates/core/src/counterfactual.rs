//! Counterfactual unconditional outcome distributions.
//!
//! A counterfactual pairs one period's conditional outcome structure with a
//! covariate law assembled block by block: each block is drawn from its
//! assigned period conditionally on all later blocks. Trailing blocks that
//! share the last block's period come straight from that period's sample;
//! earlier blocks are integrated out against fitted conditional models.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, DesignSpec, FactorSchema, PeriodView, Sample};
use crate::distreg::{fit_on_pooled, rearrange, ConditionalOutcomeModel, GridSpec, PooledRows, ThresholdGrid};
use crate::error::{Error, Result};
use crate::glm::{fit_binary, DesignMatrix, FitControl, GlmFit, Link};
use crate::par;

/// Period assignment for the outcome structure and for every block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualSpec {
    pub structure_period: String,
    /// `(block name, period)` pairs in schema order.
    pub block_periods: Vec<(String, String)>,
}

impl CounterfactualSpec {
    pub fn new(structure_period: impl Into<String>, block_periods: Vec<(String, String)>) -> Self {
        Self {
            structure_period: structure_period.into(),
            block_periods,
        }
    }

    /// Everything from one period: the observed distribution.
    pub fn observed(schema: &FactorSchema, period: &str) -> Self {
        Self::new(
            period,
            schema.blocks.iter().map(|b| (b.name.clone(), period.to_string())).collect(),
        )
    }

    pub fn is_observed(&self) -> bool {
        self.block_periods.iter().all(|(_, p)| *p == self.structure_period)
    }

    /// Period of each schema block, in schema order.
    pub fn resolve(&self, schema: &FactorSchema) -> Result<Vec<String>> {
        if self.block_periods.len() != schema.blocks.len() {
            return Err(Error::InvalidArgument(format!(
                "spec assigns {} blocks, schema has {}",
                self.block_periods.len(),
                schema.blocks.len()
            )));
        }
        for (b, (name, _)) in schema.blocks.iter().zip(&self.block_periods) {
            if b.name != *name {
                return Err(Error::InvalidArgument(format!(
                    "spec block `{name}` does not follow schema order (expected `{}`)",
                    b.name
                )));
            }
        }
        Ok(self.block_periods.iter().map(|(_, p)| p.clone()).collect())
    }

    /// Index of the first block of the trailing run that shares the last
    /// block's period.
    fn suffix_start(periods: &[String]) -> usize {
        let last = &periods[periods.len() - 1];
        let mut s = periods.len() - 1;
        while s > 0 && periods[s - 1] == *last {
            s -= 1;
        }
        s
    }
}

/// Fitted conditional law of one block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BlockLaw {
    /// Observed value combinations of a dummy block, with sequential binary
    /// fits: `fits[k]` models `P(cell k | cell >= k, later blocks)`.
    DiscreteCells { cells: Vec<Vec<f64>>, fits: Vec<GlmFit> },
    /// Distribution regression of a single continuous column on a grid of
    /// its donor-period values.
    DistributionRegression { model: ConditionalOutcomeModel },
}

/// Law of a block's columns given all later blocks, in one period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateBlockModel {
    pub block: String,
    pub period: String,
    pub columns: Vec<usize>,
    pub conditioning: DesignSpec,
    pub law: BlockLaw,
    /// Distinct donor values of the conditioning columns with their weight,
    /// kept when those columns are all dummies so that unseen patterns can
    /// be pooled.
    patterns: Option<Vec<(Vec<f64>, f64)>>,
}

/// Draws of a block given one conditioning vector.
type Law = Vec<(Vec<f64>, f64)>;

impl CovariateBlockModel {
    /// Conditional law at covariate vector `x` (only the conditioning
    /// columns are read). The flag reports whether pooling over a coarser
    /// conditioning set was needed.
    pub fn conditional_law(&self, x: &[f64]) -> Result<(Law, bool)> {
        let cond = &self.conditioning.columns;
        if let Some(patterns) = &self.patterns {
            let key: Vec<f64> = cond.iter().map(|&c| x[c]).collect();
            if !patterns.iter().any(|(p, _)| *p == key) {
                return self.pooled_law(x, &key, patterns).map(|l| (l, true));
            }
        }
        self.direct_law(x).map(|l| (l, false))
    }

    fn direct_law(&self, x: &[f64]) -> Result<Law> {
        match &self.law {
            BlockLaw::DiscreteCells { cells, fits } => {
                let row = self.conditioning.row(x);
                let mut out = Vec::with_capacity(cells.len());
                let mut rem = 1.0;
                for (k, cell) in cells.iter().enumerate() {
                    let p = if k + 1 == cells.len() {
                        rem
                    } else {
                        let p = rem * fits[k].predict(&row)?;
                        rem = (rem - p).max(0.0);
                        p
                    };
                    if p > 0.0 {
                        out.push((cell.clone(), p));
                    }
                }
                Ok(out)
            }
            BlockLaw::DistributionRegression { model } => {
                let cdf = model.conditional_cdf(x)?;
                let mut prev = 0.0;
                let mut out = Vec::new();
                for (v, f) in model.grid.values.iter().zip(&cdf) {
                    let mass = f - prev;
                    prev = *f;
                    if mass > 0.0 {
                        out.push((vec![*v], mass));
                    }
                }
                Ok(out)
            }
        }
    }

    /// Averages the law over donor patterns that agree with `key` on the
    /// longest possible prefix of the conditioning columns.
    fn pooled_law(&self, x: &[f64], key: &[f64], patterns: &[(Vec<f64>, f64)]) -> Result<Law> {
        let cond = &self.conditioning.columns;
        for k in (0..key.len()).rev() {
            let matches: Vec<&(Vec<f64>, f64)> = patterns.iter().filter(|(p, _)| p[..k] == key[..k]).collect();
            if matches.is_empty() {
                continue;
            }
            let total: f64 = matches.iter().map(|m| m.1).sum();
            let mut acc: Vec<(Vec<f64>, f64)> = Vec::new();
            let mut xx = x.to_vec();
            for (pattern, w) in matches {
                for (&c, &v) in cond.iter().zip(pattern) {
                    xx[c] = v;
                }
                for (vals, p) in self.direct_law(&xx)? {
                    match acc.iter_mut().find(|(v, _)| *v == vals) {
                        Some(slot) => slot.1 += p * w / total,
                        None => acc.push((vals, p * w / total)),
                    }
                }
            }
            return Ok(acc);
        }
        Err(Error::Validation(format!("block `{}` has no donor rows in period `{}`", self.block, self.period)))
    }
}

/// Settings shared by block models and counterfactual evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterfactualOptions {
    pub link: Link,
    pub fit: FitControl,
    /// Grid size for continuous blocks.
    pub block_grid_points: usize,
    /// Cap on integration leaves per evaluation row.
    pub max_leaves_per_row: usize,
}

impl Default for CounterfactualOptions {
    fn default() -> Self {
        Self {
            link: Link::Logit,
            fit: FitControl::default(),
            block_grid_points: 50,
            max_leaves_per_row: 10_000,
        }
    }
}

fn later_columns(blocks: &[Vec<usize>], b: usize) -> Vec<usize> {
    let mut cols: Vec<usize> = blocks[b + 1..].iter().flatten().copied().collect();
    cols.sort_unstable();
    cols
}

/// Fits the law of block `b` (schema order) given all later blocks, on the
/// rows of `view`.
pub fn fit_block_model(
    view: &PeriodView,
    schema: &FactorSchema,
    b: usize,
    options: &CounterfactualOptions,
) -> Result<CovariateBlockModel> {
    let blocks = schema.resolved_blocks()?;
    let block = &schema.blocks[b];
    let columns = blocks[b].clone();
    let later = later_columns(&blocks, b);
    let conditioning = DesignSpec::new(true, later.clone(), &schema.interaction_indices()?)?;
    let kinds: Vec<ColumnKind> = columns.iter().map(|&c| schema.columns[c].kind).collect();

    let law = if kinds.iter().all(|k| *k == ColumnKind::Dummy) {
        let mut cells: Vec<Vec<f64>> = Vec::new();
        for (o, w) in view.iter() {
            let v: Vec<f64> = columns.iter().map(|&c| o.covariates[c]).collect();
            if w > 0.0 && !cells.contains(&v) {
                cells.push(v);
            }
        }
        cells.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
        let cell_of = |x: &[f64]| -> f64 {
            let v: Vec<f64> = columns.iter().map(|&c| x[c]).collect();
            cells.iter().position(|c| *c == v).map_or(f64::INFINITY, |k| k as f64)
        };
        let mut fits = Vec::with_capacity(cells.len().saturating_sub(1));
        for k in 0..cells.len().saturating_sub(1) {
            let pooled = PooledRows::new(
                view.iter()
                    .map(|(o, w)| (o.covariates.as_slice(), cell_of(&o.covariates), w))
                    .filter(|&(_, cell, _)| cell >= k as f64),
                &conditioning,
            );
            let z = pooled.shares_below(k as f64);
            let x = DesignMatrix::new(&pooled.design, pooled.width)?;
            fits.push(fit_binary(&x, &z, &pooled.weight, options.link, &options.fit)?);
        }
        BlockLaw::DiscreteCells { cells, fits }
    } else if kinds == [ColumnKind::Continuous] {
        let c = columns[0];
        let values: Vec<f64> = view.iter().map(|(o, _)| o.covariates[c]).collect();
        let grid = ThresholdGrid::build(
            &values,
            view.weights(),
            GridSpec::QuantileSpaced {
                points: options.block_grid_points,
                trim: None,
            },
        )?;
        let pooled = PooledRows::new(view.iter().map(|(o, w)| (o.covariates.as_slice(), o.covariates[c], w)), &conditioning);
        let model = fit_on_pooled(&pooled, &grid, &conditioning, options.link, &options.fit, view.period())?;
        BlockLaw::DistributionRegression { model }
    } else {
        return Err(Error::Schema(format!(
            "block `{}` must be all dummies or a single continuous column to be integrated out",
            block.name
        )));
    };

    let patterns = if !later.is_empty() && later.iter().all(|&c| schema.columns[c].kind == ColumnKind::Dummy) {
        let mut pats: Vec<(Vec<f64>, f64)> = Vec::new();
        for (o, w) in view.iter() {
            if w == 0.0 {
                continue;
            }
            let key: Vec<f64> = later.iter().map(|&c| o.covariates[c]).collect();
            match pats.iter_mut().find(|(p, _)| *p == key) {
                Some(slot) => slot.1 += w,
                None => pats.push((key, w)),
            }
        }
        Some(pats)
    } else {
        None
    };

    Ok(CovariateBlockModel {
        block: block.name.clone(),
        period: view.period().to_string(),
        columns,
        conditioning,
        law,
        patterns,
    })
}

/// Block models needed to evaluate `specs`: every block before the trailing
/// run, in its assigned period. Returns `(block index, period)` pairs.
pub fn required_block_models(schema: &FactorSchema, specs: &[CounterfactualSpec]) -> Result<Vec<(usize, String)>> {
    let mut need: Vec<(usize, String)> = Vec::new();
    for spec in specs {
        let periods = spec.resolve(schema)?;
        for (b, p) in periods.iter().enumerate().take(CounterfactualSpec::suffix_start(&periods)) {
            let key = (b, p.clone());
            if !need.contains(&key) {
                need.push(key);
            }
        }
    }
    Ok(need)
}

/// Fits every block model in `needed`.
pub fn fit_block_models(
    sample: &Sample,
    schema: &FactorSchema,
    needed: &[(usize, String)],
    options: &CounterfactualOptions,
) -> Result<Vec<CovariateBlockModel>> {
    needed
        .iter()
        .map(|(b, p)| fit_block_model(sample.view(p)?, schema, *b, options))
        .collect()
}

/// An unconditional CDF on its structure period's threshold grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualDistribution {
    pub spec: CounterfactualSpec,
    pub grid: ThresholdGrid,
    pub cdf: Vec<f64>,
    /// Total weight and row count of the evaluation sample.
    pub support_weight: f64,
    pub support_rows: usize,
    /// Integration nodes that needed pooled block laws.
    pub pooled_nodes: usize,
}

impl CounterfactualDistribution {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct Node {
    x: Vec<f64>,
    weight: f64,
}

/// Evaluates the counterfactual CDF for `spec`.
pub fn counterfactual_cdf(
    spec: &CounterfactualSpec,
    schema: &FactorSchema,
    outcome_model: &ConditionalOutcomeModel,
    block_models: &[CovariateBlockModel],
    sample: &Sample,
    options: &CounterfactualOptions,
) -> Result<CounterfactualDistribution> {
    let periods = spec.resolve(schema)?;
    if outcome_model.period != spec.structure_period {
        return Err(Error::InvalidArgument(format!(
            "outcome model is for period `{}`, spec needs `{}`",
            outcome_model.period, spec.structure_period
        )));
    }
    let blocks = schema.resolved_blocks()?;
    let s = CounterfactualSpec::suffix_start(&periods);
    let mut models: Vec<&CovariateBlockModel> = Vec::with_capacity(s);
    for b in 0..s {
        let name = &schema.blocks[b].name;
        let m = block_models
            .iter()
            .find(|m| m.block == *name && m.period == periods[b])
            .ok_or_else(|| Error::InvalidArgument(format!("no fitted model for block `{name}` in period `{}`", periods[b])))?;
        models.push(m);
    }

    // Evaluation rows, pooled by their trailing-block values.
    let view = sample.view(&periods[periods.len() - 1])?;
    let suffix_cols: Vec<usize> = blocks[s..].iter().flatten().copied().collect();
    let width = schema.width();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut groups: Vec<Node> = Vec::new();
    for (o, w) in view.iter() {
        if w == 0.0 {
            continue;
        }
        let key: Vec<u64> = suffix_cols.iter().map(|&c| o.covariates[c].to_bits()).collect();
        let g = *index.entry(key).or_insert_with(|| {
            let mut x = vec![0.0; width];
            for &c in &suffix_cols {
                x[c] = o.covariates[c];
            }
            groups.push(Node { x, weight: 0.0 });
            groups.len() - 1
        });
        groups[g].weight += w;
    }
    let total: f64 = groups.iter().map(|g| g.weight).sum();
    if total <= 0.0 {
        return Err(Error::Validation(format!("period `{}` has no weight to integrate over", view.period())));
    }

    let grid_len = outcome_model.grid.len();
    let chunk = 64;
    let n_chunks = groups.len().div_ceil(chunk);
    let partials = par::map_range(n_chunks, |ci| -> Result<(Vec<f64>, usize)> {
        let mut acc = vec![0.0; grid_len];
        let mut pooled = 0;
        let mut nodes: Vec<Node> = Vec::new();
        for g in &groups[ci * chunk..((ci + 1) * chunk).min(groups.len())] {
            let mut frontier = vec![Node {
                x: g.x.clone(),
                weight: g.weight,
            }];
            for b in (0..s).rev() {
                let m = models[b];
                let mut next = Vec::new();
                for node in &frontier {
                    let (law, was_pooled) = m.conditional_law(&node.x)?;
                    if was_pooled {
                        pooled += 1;
                    }
                    for (vals, p) in law {
                        let mut x = node.x.clone();
                        for (&c, v) in m.columns.iter().zip(vals) {
                            x[c] = v;
                        }
                        next.push(Node { x, weight: node.weight * p });
                    }
                }
                if next.len() > options.max_leaves_per_row {
                    return Err(Error::Budget {
                        needed: next.len(),
                        budget: options.max_leaves_per_row,
                    });
                }
                frontier = next;
            }
            nodes.extend(frontier);
        }
        let p = outcome_model.design.width();
        let mut rows = vec![0.0; nodes.len() * p];
        for (i, n) in nodes.iter().enumerate() {
            outcome_model.design.fill(&n.x, &mut rows[i * p..(i + 1) * p]);
        }
        let cdfs = outcome_model.cdf_batch(&rows, nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            for (a, v) in acc.iter_mut().zip(&cdfs[i * grid_len..(i + 1) * grid_len]) {
                *a += n.weight * v;
            }
        }
        Ok((acc, pooled))
    });
    let mut cdf = vec![0.0; grid_len];
    let mut pooled_nodes = 0;
    for part in partials {
        let (acc, pooled) = part?;
        for (c, a) in cdf.iter_mut().zip(acc) {
            *c += a;
        }
        pooled_nodes += pooled;
    }
    for c in cdf.iter_mut() {
        *c /= total;
    }
    rearrange(&mut cdf);
    if pooled_nodes > 0 {
        log::warn!("{pooled_nodes} integration nodes used pooled block laws (conditioning values unseen in the donor period)");
    }
    Ok(CounterfactualDistribution {
        spec: spec.clone(),
        grid: outcome_model.grid.clone(),
        cdf,
        support_weight: total,
        support_rows: view.len(),
        pooled_nodes,
    })
}

/// The decomposition chain from the observed `comparison` distribution to
/// the observed `reference` one, swapping one block at a time in schema
/// order and the structure last (or first with `structure_first`).
pub fn chain_specs(schema: &FactorSchema, reference: &str, comparison: &str, structure_first: bool) -> Vec<CounterfactualSpec> {
    let k = schema.blocks.len();
    let assign = |swapped: usize| -> Vec<(String, String)> {
        schema
            .blocks
            .iter()
            .enumerate()
            .map(|(b, blk)| (blk.name.clone(), if b < swapped { reference } else { comparison }.to_string()))
            .collect()
    };
    let mut out = Vec::with_capacity(k + 2);
    if structure_first {
        out.push(CounterfactualSpec::new(comparison, assign(0)));
        for swapped in 0..=k {
            out.push(CounterfactualSpec::new(reference, assign(swapped)));
        }
    } else {
        for swapped in 0..=k {
            out.push(CounterfactualSpec::new(comparison, assign(swapped)));
        }
        out.push(CounterfactualSpec::new(reference, assign(k)));
    }
    out
}

/// Outcome models and block models for one sample, ready to evaluate any
/// spec over the two periods.
pub struct FittedModels {
    pub outcome: Vec<ConditionalOutcomeModel>,
    pub blocks: Vec<CovariateBlockModel>,
}

impl FittedModels {
    pub fn outcome_for(&self, period: &str) -> Result<&ConditionalOutcomeModel> {
        self.outcome
            .iter()
            .find(|m| m.period == period)
            .ok_or_else(|| Error::InvalidArgument(format!("no outcome model for period `{period}`")))
    }
}

/// Evaluates each spec in turn.
pub fn evaluate_specs(
    specs: &[CounterfactualSpec],
    schema: &FactorSchema,
    models: &FittedModels,
    sample: &Sample,
    options: &CounterfactualOptions,
) -> Result<Vec<CounterfactualDistribution>> {
    specs
        .iter()
        .map(|spec| counterfactual_cdf(spec, schema, models.outcome_for(&spec.structure_period)?, &models.blocks, sample, options))
        .collect()
}

/// Fits everything a chain over `schema` (already in sequence order) needs
/// and evaluates it. `grids` holds the outcome threshold grid per period.
pub fn run_chain(
    sample: &Sample,
    schema: &FactorSchema,
    reference: &str,
    comparison: &str,
    grids: &[(String, ThresholdGrid)],
    structure_first: bool,
    options: &CounterfactualOptions,
) -> Result<Vec<CounterfactualDistribution>> {
    let specs = chain_specs(schema, reference, comparison, structure_first);
    let design = schema.full_design()?;
    let outcome = [reference, comparison]
        .iter()
        .map(|p| {
            let grid = grids
                .iter()
                .find(|(q, _)| q == p)
                .map(|(_, g)| g)
                .ok_or_else(|| Error::InvalidArgument(format!("no threshold grid for period `{p}`")))?;
            crate::distreg::fit_distribution_regression(sample.view(p)?, &design, grid, options.link, &options.fit)
        })
        .collect::<Result<Vec<_>>>()?;
    let needed = required_block_models(schema, &specs)?;
    let blocks = fit_block_models(sample, schema, &needed, options)?;
    evaluate_specs(&specs, schema, &FittedModels { outcome, blocks }, sample, options)
}

/// Chain for `data` with blocks taken in `sequence` (all schema blocks),
/// outcome grids built per period from `grid`.
pub fn decomposition_sequence(
    data: &crate::dataset::Dataset,
    sequence: &[String],
    grid: GridSpec,
    structure_first: bool,
    options: &CounterfactualOptions,
) -> Result<Vec<CounterfactualDistribution>> {
    let schema = data.schema().reordered(sequence)?;
    let sample = data.sample();
    let [reference, comparison] = data.periods().clone();
    let grids = [&reference, &comparison]
        .iter()
        .map(|p| {
            let v = sample.view(p)?;
            Ok(((*p).clone(), ThresholdGrid::build(&v.outcomes(), v.weights(), grid)?))
        })
        .collect::<Result<Vec<_>>>()?;
    run_chain(&sample, &schema, &reference, &comparison, &grids, structure_first, options)
}
