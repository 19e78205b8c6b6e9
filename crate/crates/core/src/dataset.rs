//! Two-period weighted cross-section data: schema, validation, CSV ingestion
//! and weighted summary statistics.
//!
//! The canonical CSV layout is a header row followed by one observation per
//! row, with columns `outcome`, `weight`, `period` and then every schema
//! column in schema order. Ingestion looks columns up by name, so extra
//! columns are ignored and order is free; [`write_csv`] always emits the
//! canonical order.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OUTCOME: &str = "outcome";
pub const WEIGHT: &str = "weight";
pub const PERIOD: &str = "period";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Dummy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous,
        }
    }

    pub fn dummy(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Dummy,
        }
    }
}

/// A named group of covariate columns that is swapped as one factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub columns: Vec<String>,
}

impl Block {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
        }
    }
}

fn default_true() -> bool {
    true
}

/// Covariate layout and the ordered factor blocks of a decomposition.
///
/// Block order is the decomposition sequence: the first block is swapped
/// first. Columns that belong to no block travel with the last block.
/// `interactions` lists products of columns that enter every design in which
/// all of their constituent columns are present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSchema {
    pub columns: Vec<Column>,
    pub blocks: Vec<Block>,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default)]
    pub interactions: Vec<Vec<String>>,
}

impl FactorSchema {
    pub fn new(columns: Vec<Column>, blocks: Vec<Block>) -> Result<Self> {
        let schema = Self {
            columns,
            blocks,
            intercept: true,
            interactions: Vec::new(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn with_interactions(mut self, interactions: Vec<Vec<String>>) -> Result<Self> {
        self.interactions = interactions;
        self.validate()?;
        Ok(self)
    }

    /// Adds every product of two or more dummy columns, which makes designs
    /// over dummy-only covariates saturated.
    pub fn saturate_dummies(mut self) -> Result<Self> {
        let dummies: Vec<String> = self
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Dummy)
            .map(|c| c.name.clone())
            .collect();
        let mut interactions = Vec::new();
        for mask in 1u32..(1u32 << dummies.len()) {
            if mask.count_ones() < 2 {
                continue;
            }
            let set: Vec<String> = dummies
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, n)| n.clone())
                .collect();
            interactions.push(set);
        }
        interactions.sort_by_key(|s| s.len());
        self.interactions = interactions;
        self.validate()?;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown column `{name}`")))
    }

    pub fn block_index(&self, name: &str) -> Result<usize> {
        self.blocks
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown block `{name}`")))
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for c in &self.columns {
            if [OUTCOME, WEIGHT, PERIOD].contains(&c.name.as_str()) {
                return Err(Error::Schema(format!("reserved column name `{}`", c.name)));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        if self.blocks.is_empty() {
            return Err(Error::Schema("schema needs at least one block".into()));
        }
        let mut seen_blocks = BTreeSet::new();
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for b in &self.blocks {
            if !seen_blocks.insert(b.name.as_str()) {
                return Err(Error::Schema(format!("duplicate block `{}`", b.name)));
            }
            if b.columns.is_empty() {
                return Err(Error::Schema(format!("block `{}` has no columns", b.name)));
            }
            for c in &b.columns {
                self.column_index(c)?;
                if let Some(prev) = owner.insert(c.as_str(), b.name.as_str()) {
                    return Err(Error::Schema(format!(
                        "column `{c}` is in both block `{prev}` and block `{}`",
                        b.name
                    )));
                }
            }
        }
        for set in &self.interactions {
            if set.len() < 2 {
                return Err(Error::Schema("an interaction needs at least two columns".into()));
            }
            for c in set {
                self.column_index(c)?;
            }
        }
        Ok(())
    }

    /// Column indices per block, in block order; unblocked columns are
    /// appended to the last block.
    pub fn resolved_blocks(&self) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut used = vec![false; self.columns.len()];
        for b in &self.blocks {
            let mut idx = Vec::with_capacity(b.columns.len());
            for c in &b.columns {
                let i = self.column_index(c)?;
                used[i] = true;
                idx.push(i);
            }
            out.push(idx);
        }
        let last = out.len() - 1;
        for (i, u) in used.iter().enumerate() {
            if !u {
                out[last].push(i);
            }
        }
        Ok(out)
    }

    /// Returns a copy whose blocks follow `sequence`, which must be a
    /// permutation of the block names.
    pub fn reordered(&self, sequence: &[String]) -> Result<Self> {
        if sequence.len() != self.blocks.len() {
            return Err(Error::Schema(format!(
                "sequence has {} blocks, schema has {}",
                sequence.len(),
                self.blocks.len()
            )));
        }
        let mut blocks = Vec::with_capacity(sequence.len());
        let mut seen = BTreeSet::new();
        for name in sequence {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("block `{name}` repeated in sequence")));
            }
            blocks.push(self.blocks[self.block_index(name)?].clone());
        }
        Ok(Self {
            blocks,
            ..self.clone()
        })
    }

    pub(crate) fn interaction_indices(&self) -> Result<Vec<Vec<usize>>> {
        self.interactions
            .iter()
            .map(|set| set.iter().map(|c| self.column_index(c)).collect())
            .collect()
    }

    /// Design over all columns, used by outcome models.
    pub fn full_design(&self) -> Result<DesignSpec> {
        DesignSpec::new(
            self.intercept,
            (0..self.columns.len()).collect(),
            &self.interaction_indices()?,
        )
    }
}

/// Maps a covariate vector to a regression design row: optional intercept,
/// selected columns, then products for interactions fully inside the
/// selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub intercept: bool,
    pub columns: Vec<usize>,
    pub interactions: Vec<Vec<usize>>,
}

impl DesignSpec {
    pub fn new(intercept: bool, columns: Vec<usize>, interactions: &[Vec<usize>]) -> Result<Self> {
        let inside: Vec<Vec<usize>> = interactions
            .iter()
            .filter(|set| set.iter().all(|c| columns.contains(c)))
            .cloned()
            .collect();
        let spec = Self {
            intercept,
            columns,
            interactions: inside,
        };
        if spec.width() == 0 {
            return Err(Error::Schema("empty design".into()));
        }
        Ok(spec)
    }

    pub fn width(&self) -> usize {
        usize::from(self.intercept) + self.columns.len() + self.interactions.len()
    }

    pub fn fill(&self, x: &[f64], out: &mut [f64]) {
        let mut k = 0;
        if self.intercept {
            out[0] = 1.0;
            k = 1;
        }
        for &c in &self.columns {
            out[k] = x[c];
            k += 1;
        }
        for set in &self.interactions {
            out[k] = set.iter().map(|&c| x[c]).product();
            k += 1;
        }
    }

    pub fn row(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        self.fill(x, &mut out);
        out
    }
}

/// One household row.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub outcome: f64,
    pub covariates: Vec<f64>,
    pub weight: f64,
    pub period: String,
}

/// Validated two-period microdata. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: FactorSchema,
    rows: Vec<Observation>,
    periods: [String; 2],
}

/// Counts of rows dropped during ingestion, by reason.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub missing_outcome: usize,
    pub nonpositive_weight: usize,
    pub schema_violation: usize,
}

impl DropReport {
    pub fn total(&self) -> usize {
        self.missing_outcome + self.nonpositive_weight + self.schema_violation
    }
}

#[derive(Clone, Debug)]
pub struct IngestOptions {
    /// Field values treated as missing.
    pub missing_tokens: Vec<String>,
    /// Explicit (reference, comparison) period order; defaults to order of
    /// first appearance.
    pub periods: Option<[String; 2]>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            missing_tokens: ["", "NA", "NaN", "nan", ".", "null"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            periods: None,
        }
    }
}

impl Dataset {
    /// Validates rows against the schema. Periods are taken in order of first
    /// appearance unless `periods` is given.
    pub fn new(schema: FactorSchema, rows: Vec<Observation>, periods: Option<[String; 2]>) -> Result<Self> {
        schema.validate()?;
        let mut seen: Vec<String> = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            if !r.outcome.is_finite() {
                return Err(Error::Validation(format!("row {i}: non-finite outcome")));
            }
            if !(r.weight.is_finite() && r.weight > 0.0) {
                return Err(Error::Validation(format!("row {i}: weight must be positive and finite")));
            }
            if r.covariates.len() != schema.width() {
                return Err(Error::Validation(format!(
                    "row {i}: {} covariates, schema has {}",
                    r.covariates.len(),
                    schema.width()
                )));
            }
            for (v, c) in r.covariates.iter().zip(&schema.columns) {
                if !v.is_finite() {
                    return Err(Error::Validation(format!("row {i}: non-finite `{}`", c.name)));
                }
                if c.kind == ColumnKind::Dummy && *v != 0.0 && *v != 1.0 {
                    return Err(Error::Validation(format!("row {i}: dummy `{}` = {v}", c.name)));
                }
            }
            if !seen.contains(&r.period) {
                seen.push(r.period.clone());
            }
        }
        let periods = match periods {
            Some(p) => {
                if p[0] == p[1] {
                    return Err(Error::Validation("the two periods must differ".into()));
                }
                for r in &rows {
                    if !p.contains(&r.period) {
                        return Err(Error::Validation(format!("unexpected period `{}`", r.period)));
                    }
                }
                p
            }
            None => {
                if seen.len() != 2 {
                    return Err(Error::Validation(format!(
                        "expected exactly two periods, found {}: {:?}",
                        seen.len(),
                        seen
                    )));
                }
                [seen[0].clone(), seen[1].clone()]
            }
        };
        for p in &periods {
            let mut distinct = BTreeSet::new();
            let mut wsum = 0.0;
            for r in rows.iter().filter(|r| &r.period == p) {
                distinct.insert(r.outcome.to_bits());
                wsum += r.weight;
            }
            if distinct.is_empty() {
                return Err(Error::Validation(format!("period `{p}` has no rows")));
            }
            if distinct.len() < 2 {
                return Err(Error::Validation(format!(
                    "period `{p}` has a single distinct outcome value"
                )));
            }
            if wsum <= 0.0 {
                return Err(Error::Validation(format!("period `{p}` has zero total weight")));
            }
        }
        Ok(Self {
            schema,
            rows,
            periods,
        })
    }

    pub fn schema(&self) -> &FactorSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `[reference, comparison]`; totals are comparison minus reference.
    pub fn periods(&self) -> &[String; 2] {
        &self.periods
    }

    pub fn has_period(&self, period: &str) -> bool {
        self.periods.iter().any(|p| p == period)
    }

    /// Same rows with a different schema (e.g. reordered blocks).
    pub fn with_schema(&self, schema: FactorSchema) -> Result<Self> {
        if schema.columns != self.schema.columns {
            return Err(Error::Schema("replacement schema must keep the same columns".into()));
        }
        schema.validate()?;
        Ok(Self {
            schema,
            rows: self.rows.clone(),
            periods: self.periods.clone(),
        })
    }

    /// Returns a dataset whose outcomes in `period` are shifted by `shift`.
    pub fn shift_outcomes(&self, period: &str, shift: f64) -> Result<Self> {
        if !self.has_period(period) {
            return Err(Error::Validation(format!("unknown period `{period}`")));
        }
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if r.period == period {
                    r.outcome += shift;
                }
                r
            })
            .collect();
        Ok(Self {
            schema: self.schema.clone(),
            rows,
            periods: self.periods.clone(),
        })
    }

    /// All rows of `period` at their survey weights.
    pub fn view(&self, period: &str) -> Result<PeriodView<'_>> {
        if !self.has_period(period) {
            return Err(Error::Validation(format!("unknown period `{period}`")));
        }
        let idx: Vec<usize> = (0..self.rows.len())
            .filter(|&i| self.rows[i].period == period)
            .collect();
        let weights = idx.iter().map(|&i| self.rows[i].weight).collect();
        Ok(PeriodView {
            data: self,
            period: period.to_string(),
            idx,
            weights,
        })
    }

    fn column_values(&self, column: &str) -> Result<Box<dyn Fn(&Observation) -> f64 + '_>> {
        if column == OUTCOME {
            return Ok(Box::new(|o: &Observation| o.outcome));
        }
        if column == WEIGHT {
            return Ok(Box::new(|o: &Observation| o.weight));
        }
        let c = self.schema.column_index(column)?;
        Ok(Box::new(move |o: &Observation| o.covariates[c]))
    }
}

/// A period's rows with analysis weights. Bootstrap replications are views
/// with resampled indices or perturbed weights over the same dataset.
#[derive(Clone, Debug)]
pub struct PeriodView<'a> {
    data: &'a Dataset,
    period: String,
    idx: Vec<usize>,
    weights: Vec<f64>,
}

impl<'a> PeriodView<'a> {
    pub fn new(data: &'a Dataset, period: &str, idx: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if idx.len() != weights.len() {
            return Err(Error::Dimension {
                expected: idx.len(),
                got: weights.len(),
            });
        }
        if idx.iter().any(|&i| i >= data.rows.len() || data.rows[i].period != period) {
            return Err(Error::Validation(format!("view indices must select period `{period}` rows")));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Validation("view weights must be finite and nonnegative".into()));
        }
        Ok(Self {
            data,
            period: period.to_string(),
            idx,
            weights,
        })
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn period(&self) -> &str {
        &self.period
    }

    pub fn indices(&self) -> &[usize] {
        &self.idx
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a Observation, f64)> + '_ {
        let rows = &self.data.rows;
        self.idx.iter().zip(&self.weights).map(move |(&i, &w)| (&rows[i], w))
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.iter().map(|(o, _)| o.outcome).collect()
    }
}

/// Both periods of a dataset as weighted views: the point sample, or one
/// bootstrap replication.
#[derive(Clone, Debug)]
pub struct Sample<'a> {
    views: Vec<PeriodView<'a>>,
}

impl<'a> Sample<'a> {
    pub fn new(views: Vec<PeriodView<'a>>) -> Result<Self> {
        for (i, v) in views.iter().enumerate() {
            if views[..i].iter().any(|u| u.period == v.period) {
                return Err(Error::Validation(format!("period `{}` given twice", v.period)));
            }
        }
        Ok(Self { views })
    }

    pub fn view(&self, period: &str) -> Result<&PeriodView<'a>> {
        self.views
            .iter()
            .find(|v| v.period == period)
            .ok_or_else(|| Error::Validation(format!("sample has no period `{period}`")))
    }

    pub fn views(&self) -> &[PeriodView<'a>] {
        &self.views
    }
}

impl Dataset {
    /// Both periods at their survey weights.
    pub fn sample(&self) -> Sample<'_> {
        Sample {
            views: self.periods.iter().map(|p| self.view(p).expect("known period")).collect(),
        }
    }
}

/// Reads a dataset CSV from a path. See [`read_csv`].
pub fn ingest_csv(path: impl AsRef<Path>, schema: &FactorSchema, options: &IngestOptions) -> Result<(Dataset, DropReport)> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema, options)
}

/// Parses dataset CSV. Rows with a missing or non-finite outcome, a missing
/// or nonpositive weight, or a covariate that violates the schema are
/// dropped and counted; a malformed record or unparseable number is an
/// error carrying the 1-based data row number.
pub fn read_csv<R: Read>(reader: R, schema: &FactorSchema, options: &IngestOptions) -> Result<(Dataset, DropReport)> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("header is missing column `{name}`")))
    };
    let outcome_at = find(OUTCOME)?;
    let weight_at = find(WEIGHT)?;
    let period_at = find(PERIOD)?;
    let cov_at: Vec<usize> = schema.columns.iter().map(|c| find(&c.name)).collect::<Result<_>>()?;

    let is_missing = |s: &str| options.missing_tokens.iter().any(|t| t == s);
    let parse = |s: &str, row: usize, column: &str| -> Result<Option<f64>> {
        if is_missing(s) {
            return Ok(None);
        }
        s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
            row,
            column: column.to_string(),
            value: s.to_string(),
        })
    };

    let mut drops = DropReport::default();
    let mut rows = Vec::new();
    let mut raw_periods: Vec<String> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { .. } => Error::Parse {
                row,
                column: "<record>".into(),
                value: "wrong number of fields".into(),
            },
            _ => Error::Csv(e),
        })?;
        let period = rec.get(period_at).unwrap_or("").to_string();
        if !period.is_empty() && !raw_periods.contains(&period) {
            raw_periods.push(period.clone());
        }
        let outcome = parse(rec.get(outcome_at).unwrap_or(""), row, OUTCOME)?;
        let weight = parse(rec.get(weight_at).unwrap_or(""), row, WEIGHT)?;
        let mut covs = Vec::with_capacity(cov_at.len());
        let mut violation = period.is_empty() || is_missing(&period);
        for (&at, col) in cov_at.iter().zip(&schema.columns) {
            match parse(rec.get(at).unwrap_or(""), row, &col.name)? {
                Some(v) if v.is_finite() => {
                    if col.kind == ColumnKind::Dummy && v != 0.0 && v != 1.0 {
                        violation = true;
                    }
                    covs.push(v);
                }
                _ => violation = true,
            }
        }
        let Some(outcome) = outcome.filter(|v| v.is_finite()) else {
            drops.missing_outcome += 1;
            continue;
        };
        let Some(weight) = weight.filter(|w| w.is_finite() && *w > 0.0) else {
            drops.nonpositive_weight += 1;
            continue;
        };
        if violation {
            drops.schema_violation += 1;
            continue;
        }
        rows.push(Observation {
            outcome,
            covariates: covs,
            weight,
            period,
        });
    }
    let wanted = options.periods.clone().or_else(|| {
        if raw_periods.len() == 2 {
            Some([raw_periods[0].clone(), raw_periods[1].clone()])
        } else {
            None
        }
    });
    if let Some(p) = &wanted {
        for period in p {
            if !rows.iter().any(|r| &r.period == period) {
                return Err(Error::Validation(format!(
                    "period `{period}` is empty after dropping invalid rows ({drops:?})"
                )));
            }
        }
    }
    let data = Dataset::new(schema.clone(), rows, wanted)?;
    Ok((data, drops))
}

/// Writes the canonical CSV; reading it back reproduces the dataset exactly.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![OUTCOME.to_string(), WEIGHT.to_string(), PERIOD.to_string()];
    header.extend(data.schema.columns.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for r in &data.rows {
        let mut rec = vec![r.outcome.to_string(), r.weight.to_string(), r.period.clone()];
        rec.extend(r.covariates.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Variance convention for weighted standard deviations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdConvention {
    /// `Σw(x − x̄)² / Σw`.
    #[default]
    Frequency,
    /// Frequency convention times `n / (n − 1)`, `n` the row count.
    SmallSample,
}

/// Weighted mean and standard deviation of `column` (a schema column,
/// `outcome` or `weight`) in `period`.
pub fn weighted_mean_sd(data: &Dataset, column: &str, period: &str, convention: SdConvention) -> Result<(f64, f64)> {
    let get = data.column_values(column)?;
    let view = data.view(period)?;
    let pairs: Vec<(f64, f64)> = view.iter().map(|(o, w)| (get(o), w)).collect();
    mean_sd(&pairs, convention)
}

pub(crate) fn mean_sd(pairs: &[(f64, f64)], convention: SdConvention) -> Result<(f64, f64)> {
    let wsum: f64 = pairs.iter().map(|p| p.1).sum();
    if wsum <= 0.0 {
        return Err(Error::Validation("zero total weight".into()));
    }
    if pairs.len() < 2 {
        return Err(Error::Validation("standard deviation needs at least two rows".into()));
    }
    let mean = pairs.iter().map(|(x, w)| w * x).sum::<f64>() / wsum;
    let mut var = pairs.iter().map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / wsum;
    if convention == SdConvention::SmallSample {
        let n = pairs.len() as f64;
        var *= n / (n - 1.0);
    }
    Ok((mean, var.sqrt()))
}

/// Standard error of a weighted mean by linearization:
/// `sqrt(n/(n−1) · Σw²(x − x̄)²) / Σw`. Reduces to `s/√n` for equal weights.
pub(crate) fn mean_se(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    let wsum: f64 = pairs.iter().map(|p| p.1).sum();
    if wsum <= 0.0 {
        return Err(Error::Validation("zero total weight".into()));
    }
    if pairs.len() < 2 {
        return Err(Error::Validation("standard error needs at least two rows".into()));
    }
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(|(x, w)| w * x).sum::<f64>() / wsum;
    let ss: f64 = pairs.iter().map(|(x, w)| (w * (x - mean)).powi(2)).sum();
    Ok((mean, (n / (n - 1.0) * ss).sqrt() / wsum))
}

/// Difference of weighted means (comparison minus reference) with the
/// standard error for independent samples.
pub fn weighted_diff_se(data: &Dataset, column: &str) -> Result<(f64, f64)> {
    let get = data.column_values(column)?;
    let [a, b] = data.periods();
    let pa: Vec<(f64, f64)> = data.view(a)?.iter().map(|(o, w)| (get(o), w)).collect();
    let pb: Vec<(f64, f64)> = data.view(b)?.iter().map(|(o, w)| (get(o), w)).collect();
    let (ma, sa) = mean_se(&pa)?;
    let (mb, sb) = mean_se(&pb)?;
    Ok((mb - ma, (sa * sa + sb * sb).sqrt()))
}
