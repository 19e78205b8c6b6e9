//! Synthetic data-generating processes with exact answers.
//!
//! [`DiscreteDgp`] puts binary covariates on a small lattice and gives every
//! cell a finite outcome distribution, so counterfactual CDFs can be
//! enumerated exactly from parameters or from sample contingency tables.
//! [`LinearQrDgp`] draws `Y = X'β(U)` with `U ~ Unif(0, 1)`.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::counterfactual::CounterfactualSpec;
use crate::dataset::{Block, Column, Dataset, FactorSchema, Observation};
use crate::error::{Error, Result};
use crate::glm::{norm_cdf, norm_quantile};

pub const MAX_CELLS: usize = 16;

/// One period of a [`DiscreteDgp`]. Cell `c` sets covariate `j` to bit `j`
/// of `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretePeriod {
    pub label: String,
    pub cell_probs: Vec<f64>,
    /// Outcome probabilities over the shared support, one row per cell.
    pub outcome_probs: Vec<Vec<f64>>,
    /// Survey weights are drawn uniformly from this range.
    pub weight_range: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDgp {
    pub covariates: Vec<String>,
    pub blocks: Vec<Block>,
    pub support: Vec<f64>,
    pub periods: [DiscretePeriod; 2],
    pub n_per_period: usize,
    pub seed: u64,
    /// Add every dummy interaction to the schema so that all models are
    /// saturated.
    #[serde(default = "yes")]
    pub saturated: bool,
}

fn yes() -> bool {
    true
}

/// Probabilities of a normal law binned onto `support`, each point taking the
/// mass between the midpoints to its neighbours.
pub fn discretized_normal(mean: f64, sd: f64, support: &[f64]) -> Vec<f64> {
    let n = support.len();
    let mut out = Vec::with_capacity(n);
    let mut prev = 0.0;
    for j in 0..n {
        let upper = if j + 1 == n {
            1.0
        } else {
            norm_cdf(((support[j] + support[j + 1]) / 2.0 - mean) / sd)
        };
        out.push(upper - prev);
        prev = upper;
    }
    out
}

/// `n` equally spaced points from `lo` to `hi`.
pub fn lattice(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn product_law(marginals: &[f64]) -> Vec<f64> {
    let d = marginals.len();
    (0..1usize << d)
        .map(|c| {
            (0..d)
                .map(|j| if c >> j & 1 == 1 { marginals[j] } else { 1.0 - marginals[j] })
                .product()
        })
        .collect()
}

fn cell_bits(c: usize, d: usize) -> Vec<f64> {
    (0..d).map(|j| (c >> j & 1) as f64).collect()
}

impl DiscreteDgp {
    pub fn cells(&self) -> usize {
        1 << self.covariates.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.cells();
        if k > MAX_CELLS {
            return Err(Error::InvalidArgument(format!("lattice has {k} cells; at most {MAX_CELLS}")));
        }
        if self.support.windows(2).any(|w| w[0] >= w[1]) || self.support.is_empty() {
            return Err(Error::InvalidArgument("support must be strictly increasing".into()));
        }
        if self.periods[0].label == self.periods[1].label {
            return Err(Error::InvalidArgument("period labels must differ".into()));
        }
        for p in &self.periods {
            let ok = |v: &[f64]| v.iter().all(|x| *x >= 0.0 && x.is_finite()) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-9;
            if p.cell_probs.len() != k || !ok(&p.cell_probs) {
                return Err(Error::InvalidArgument(format!("period `{}`: {k} cell probabilities summing to one", p.label)));
            }
            if p.outcome_probs.len() != k || p.outcome_probs.iter().any(|r| r.len() != self.support.len() || !ok(r)) {
                return Err(Error::InvalidArgument(format!("period `{}`: one outcome law per cell over the support", p.label)));
            }
            if !(p.weight_range.0 > 0.0 && p.weight_range.0 <= p.weight_range.1) {
                return Err(Error::InvalidArgument("weight range must be positive and ordered".into()));
            }
        }
        self.schema().map(|_| ())
    }

    pub fn schema(&self) -> Result<FactorSchema> {
        let schema = FactorSchema::new(self.covariates.iter().map(Column::dummy).collect(), self.blocks.clone())?;
        if self.saturated {
            schema.saturate_dummies()
        } else {
            Ok(schema)
        }
    }

    fn period(&self, label: &str) -> Result<&DiscretePeriod> {
        self.periods
            .iter()
            .find(|p| p.label == label)
            .ok_or_else(|| Error::InvalidArgument(format!("DGP has no period `{label}`")))
    }

    /// Three binary covariates in three blocks; both covariate laws and cell
    /// outcome laws move between periods.
    pub fn shipped() -> Self {
        let support = lattice(6.5, 9.5, 31);
        let law = |shift: f64, spread: f64| -> Vec<Vec<f64>> {
            (0..8)
                .map(|c| {
                    let b = cell_bits(c, 3);
                    discretized_normal(7.6 + 0.35 * b[0] + 0.2 * b[1] - 0.15 * b[2] + shift, 0.4 + 0.1 * b[0] * spread, &support)
                })
                .collect()
        };
        let mut a_probs = product_law(&[0.35, 0.5, 0.3]);
        a_probs[7] += 0.04;
        a_probs[0] -= 0.04;
        Self {
            covariates: vec!["x1".into(), "x2".into(), "x3".into()],
            blocks: vec![Block::new("X1", &["x1"]), Block::new("X2", &["x2"]), Block::new("X3", &["x3"])],
            support: support.clone(),
            periods: [
                DiscretePeriod {
                    label: "18".into(),
                    cell_probs: a_probs,
                    outcome_probs: law(0.0, 0.0),
                    weight_range: (0.5, 2.0),
                },
                DiscretePeriod {
                    label: "22".into(),
                    cell_probs: product_law(&[0.45, 0.4, 0.35]),
                    outcome_probs: law(0.05, 1.0),
                    weight_range: (0.5, 2.0),
                },
            ],
            n_per_period: 5_000,
            seed: 20_180_022,
            saturated: true,
        }
    }

    /// Two binary covariates (four cells) in two blocks, with dependent
    /// covariates and a changing structure.
    pub fn four_cell() -> Self {
        let support = lattice(6.8, 9.2, 25);
        let law = |m: [f64; 4], sd: f64| -> Vec<Vec<f64>> { m.iter().map(|&mu| discretized_normal(mu, sd, &support)).collect() };
        Self {
            covariates: vec!["x1".into(), "x2".into()],
            blocks: vec![Block::new("X1", &["x1"]), Block::new("X2", &["x2"])],
            support: support.clone(),
            periods: [
                DiscretePeriod {
                    label: "18".into(),
                    cell_probs: vec![0.4, 0.15, 0.2, 0.25],
                    outcome_probs: law([7.6, 8.0, 7.8, 8.3], 0.35),
                    weight_range: (0.5, 2.0),
                },
                DiscretePeriod {
                    label: "22".into(),
                    cell_probs: vec![0.3, 0.2, 0.15, 0.35],
                    outcome_probs: law([7.7, 8.0, 7.85, 8.45], 0.4),
                    weight_range: (0.5, 2.0),
                },
            ],
            n_per_period: 20_000,
            seed: 4,
            saturated: true,
        }
    }

    /// Independent blocks with the same covariate law in both periods. The
    /// outcome structure shifts by `structure_shift` in the second period.
    pub fn independence_null(structure_shift: f64) -> Self {
        let support = lattice(6.8, 9.2, 25);
        let probs = product_law(&[0.4, 0.55, 0.3]);
        let law = |shift: f64| -> Vec<Vec<f64>> {
            (0..8)
                .map(|c| {
                    let b = cell_bits(c, 3);
                    discretized_normal(7.7 + 0.3 * b[0] + 0.25 * b[1] + 0.15 * b[2] + shift, 0.4, &support)
                })
                .collect()
        };
        Self {
            covariates: vec!["x1".into(), "x2".into(), "x3".into()],
            blocks: vec![Block::new("X1", &["x1"]), Block::new("X2", &["x2"]), Block::new("X3", &["x3"])],
            support: support.clone(),
            periods: [
                DiscretePeriod {
                    label: "18".into(),
                    cell_probs: probs.clone(),
                    outcome_probs: law(0.0),
                    weight_range: (0.5, 2.0),
                },
                DiscretePeriod {
                    label: "22".into(),
                    cell_probs: probs,
                    outcome_probs: law(structure_shift),
                    weight_range: (0.5, 2.0),
                },
            ],
            n_per_period: 20_000,
            seed: 7,
            saturated: true,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n_per_period = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Draws `n_per_period` rows per period, deterministically in `seed`.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let d = self.covariates.len();
        let mut rows = Vec::with_capacity(2 * self.n_per_period);
        for p in &self.periods {
            let cells = WeightedIndex::new(&p.cell_probs).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let outcomes = p
                .outcome_probs
                .iter()
                .map(|r| WeightedIndex::new(r).map_err(|e| Error::InvalidArgument(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let (lo, hi) = p.weight_range;
            for _ in 0..self.n_per_period {
                let c = cells.sample(&mut rng);
                let y = self.support[outcomes[c].sample(&mut rng)];
                let weight = if lo == hi { lo } else { rng.gen_range(lo..hi) };
                rows.push(Observation {
                    outcome: y,
                    covariates: cell_bits(c, d),
                    weight,
                    period: p.label.clone(),
                });
            }
        }
        Dataset::new(
            self.schema()?,
            rows,
            Some([self.periods[0].label.clone(), self.periods[1].label.clone()]),
        )
    }

    fn block_bits(&self) -> Result<Vec<Vec<usize>>> {
        self.schema()?.resolved_blocks()
    }

    /// Population counterfactual CDF over `support`.
    pub fn exact_counterfactual(&self, spec: &CounterfactualSpec) -> Result<Vec<f64>> {
        self.validate()?;
        let joint: Vec<Vec<f64>> = self.periods.iter().map(|p| p.cell_probs.clone()).collect();
        let labels = [self.periods[0].label.as_str(), self.periods[1].label.as_str()];
        let structure = &self.period(&spec.structure_period)?.outcome_probs;
        let cond: Vec<Vec<Vec<f64>>> = structure.iter().map(|r| vec![cumulative(r)]).collect();
        enumerate_counterfactual(self, spec, &labels, &joint, |c| cond[c][0].clone())
    }

    /// The same enumeration with every law replaced by its weighted sample
    /// counterpart from `data`, evaluated at `grid`: what a fully saturated
    /// estimator must return.
    pub fn plugin_counterfactual(&self, data: &Dataset, spec: &CounterfactualSpec, grid: &[f64]) -> Result<Vec<f64>> {
        let d = self.covariates.len();
        let k = self.cells();
        let labels = [self.periods[0].label.as_str(), self.periods[1].label.as_str()];
        let mut joint = vec![vec![0.0; k]; 2];
        let mut cell_rows: Vec<Vec<(f64, f64)>> = vec![Vec::new(); k];
        for o in data.rows() {
            let c: usize = (0..d).map(|j| (o.covariates[j] as usize) << j).sum();
            let p = labels.iter().position(|l| *l == o.period).expect("period");
            joint[p][c] += o.weight;
            if o.period == spec.structure_period {
                cell_rows[c].push((o.outcome, o.weight));
            }
        }
        for j in joint.iter_mut() {
            let t: f64 = j.iter().sum();
            j.iter_mut().for_each(|v| *v /= t);
        }
        let ecdf = |c: usize| -> Vec<f64> {
            let rows = &cell_rows[c];
            let t: f64 = rows.iter().map(|r| r.1).sum();
            grid.iter()
                .map(|&y| if t == 0.0 { 0.0 } else { rows.iter().filter(|r| r.0 <= y).map(|r| r.1).sum::<f64>() / t })
                .collect()
        };
        enumerate_counterfactual(self, spec, &labels, &joint, ecdf)
    }
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = p
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    if let Some(l) = out.last_mut() {
        *l = 1.0;
    }
    out
}

/// `Σ_x q(x) F(y | x)` with `q(x) = Π_b P_{p_b}(x_b | x_{b+1}, …, x_k)`.
fn enumerate_counterfactual(
    dgp: &DiscreteDgp,
    spec: &CounterfactualSpec,
    labels: &[&str; 2],
    joint: &[Vec<f64>],
    cell_cdf: impl Fn(usize) -> Vec<f64>,
) -> Result<Vec<f64>> {
    let schema = dgp.schema()?;
    let periods = spec.resolve(&schema)?;
    let blocks = dgp.block_bits()?;
    let k = dgp.cells();
    let mask_of = |cols: &[usize]| cols.iter().fold(0usize, |m, &j| m | 1 << j);
    let mut q = vec![1.0; k];
    for (b, period) in periods.iter().enumerate() {
        let p = labels
            .iter()
            .position(|l| l == period)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown period `{period}`")))?;
        let later = mask_of(&blocks[b + 1..].concat());
        let with_b = later | mask_of(&blocks[b]);
        let marginal = |c: usize, mask: usize| -> f64 { (0..k).filter(|&e| e & mask == c & mask).map(|e| joint[p][e]).sum() };
        for (c, qc) in q.iter_mut().enumerate() {
            let denom = marginal(c, later);
            if denom <= 0.0 {
                if *qc > 0.0 {
                    return Err(Error::Validation(format!("conditioning pattern of cell {c} has zero probability in `{period}`")));
                }
                continue;
            }
            *qc *= marginal(c, with_b) / denom;
        }
    }
    let mut out: Option<Vec<f64>> = None;
    for (c, &qc) in q.iter().enumerate() {
        if qc == 0.0 {
            continue;
        }
        let f = cell_cdf(c);
        let acc = out.get_or_insert_with(|| vec![0.0; f.len()]);
        for (a, v) in acc.iter_mut().zip(f) {
            *a += qc * v;
        }
    }
    out.ok_or_else(|| Error::Validation("counterfactual covariate law is empty".into()))
}

/// Law of one covariate in a [`LinearQrDgp`] period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum CovariateLaw {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

/// Shape `g` of a coefficient path `β(u) = a + b·g(u)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathShape {
    /// `g(u) = Φ⁻¹(u)`.
    Normal,
    /// `g(u) = u − 1/2`.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefPath {
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QrPeriod {
    pub label: String,
    pub covariates: Vec<CovariateLaw>,
    /// Intercept first, then one path per covariate.
    pub coefficients: Vec<CoefPath>,
}

/// `Y = β₀(U) + Σ_j X_j β_j(U)` with `U ~ Unif(0, 1)` independent of `X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearQrDgp {
    pub names: Vec<String>,
    pub shape: PathShape,
    pub periods: [QrPeriod; 2],
    pub n_per_period: usize,
    pub seed: u64,
    /// Reuse the same covariate and rank draws in every period, so periods
    /// with the same covariate laws differ only through their paths.
    #[serde(default)]
    pub common_draws: bool,
}

impl LinearQrDgp {
    /// Same slopes in both periods, location-only error, intercept moving by
    /// `shift`. Draws are common to both periods, so the residual structure
    /// is identical.
    pub fn location_shift(shift: f64) -> Self {
        let period = |label: &str, a0: f64| QrPeriod {
            label: label.into(),
            covariates: vec![CovariateLaw::Normal { mean: 0.0, sd: 1.0 }, CovariateLaw::Bernoulli { p: 0.4 }],
            coefficients: vec![CoefPath { a: a0, b: 0.3 }, CoefPath { a: 0.25, b: 0.0 }, CoefPath { a: 0.2, b: 0.0 }],
        };
        Self {
            names: vec!["x1".into(), "d1".into()],
            shape: PathShape::Normal,
            periods: [period("18", 7.8), period("22", 7.8 + shift)],
            n_per_period: 20_000,
            seed: 11,
            common_draws: true,
        }
    }

    /// Slopes that vary with the rank, with uniform-shaped paths.
    pub fn heterogeneous() -> Self {
        let period = |label: &str| QrPeriod {
            label: label.into(),
            covariates: vec![CovariateLaw::Bernoulli { p: 0.5 }, CovariateLaw::Normal { mean: 1.0, sd: 0.5 }],
            coefficients: vec![CoefPath { a: 7.5, b: 0.6 }, CoefPath { a: 0.3, b: 0.4 }, CoefPath { a: 0.2, b: 0.3 }],
        };
        Self {
            names: vec!["d1".into(), "x1".into()],
            shape: PathShape::Uniform,
            periods: [period("18"), period("22")],
            n_per_period: 200_000,
            seed: 12,
            common_draws: false,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n_per_period = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn g(&self, u: f64) -> f64 {
        match self.shape {
            PathShape::Normal => norm_quantile(u),
            PathShape::Uniform => u - 0.5,
        }
    }

    pub fn schema(&self) -> Result<FactorSchema> {
        let laws = &self.periods[0].covariates;
        let cols = self
            .names
            .iter()
            .zip(laws)
            .map(|(n, l)| match l {
                CovariateLaw::Normal { .. } => Column::continuous(n),
                CovariateLaw::Bernoulli { .. } => Column::dummy(n),
            })
            .collect();
        let blocks = self.names.iter().map(|n| Block::new(n.to_uppercase(), &[n.as_str()])).collect();
        FactorSchema::new(cols, blocks)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.names.len();
        for per in &self.periods {
            if per.covariates.len() != p || per.coefficients.len() != p + 1 {
                return Err(Error::InvalidArgument(format!("period `{}`: {p} covariates and {} coefficient paths", per.label, p + 1)));
            }
            if per.covariates.iter().zip(&self.periods[0].covariates).any(|(a, b)| std::mem::discriminant(a) != std::mem::discriminant(b)) {
                return Err(Error::InvalidArgument("covariate kinds must agree across periods".into()));
            }
        }
        Ok(())
    }

    /// True `β(τ)` of `period` at each level.
    pub fn true_path(&self, period: &str, taus: &[f64]) -> Result<Vec<Vec<f64>>> {
        let per = self
            .periods
            .iter()
            .find(|p| p.label == period)
            .ok_or_else(|| Error::InvalidArgument(format!("DGP has no period `{period}`")))?;
        Ok(taus.iter().map(|&t| per.coefficients.iter().map(|c| c.a + c.b * self.g(t)).collect()).collect())
    }

    /// Draws the sample; errors if `x'β(u)` decreases in `u` at any drawn `x`.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let unit = Uniform::new(0.0f64, 1.0);
        let mut rows = Vec::with_capacity(2 * self.n_per_period);
        for (k, per) in self.periods.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            if !self.common_draws {
                rng.set_stream(k as u64);
            }
            for _ in 0..self.n_per_period {
                let x: Vec<f64> = per
                    .covariates
                    .iter()
                    .map(|law| match *law {
                        CovariateLaw::Normal { mean, sd } => Normal::new(mean, sd).expect("valid normal").sample(&mut rng),
                        CovariateLaw::Bernoulli { p } => f64::from(rng.gen_bool(p)),
                    })
                    .collect();
                let slope = per.coefficients[0].b + x.iter().zip(&per.coefficients[1..]).map(|(v, c)| v * c.b).sum::<f64>();
                if slope < 0.0 {
                    return Err(Error::Validation(format!(
                        "period `{}`: x'β(u) decreases in u at x = {x:?}; the model is not a valid quantile process",
                        per.label
                    )));
                }
                let mut u: f64 = unit.sample(&mut rng);
                while u <= 0.0 {
                    u = unit.sample(&mut rng);
                }
                let gu = self.g(u);
                let y = per.coefficients[0].a + per.coefficients[0].b * gu
                    + x.iter().zip(&per.coefficients[1..]).map(|(v, c)| v * (c.a + c.b * gu)).sum::<f64>();
                rows.push(Observation {
                    outcome: y,
                    covariates: x,
                    weight: 1.0,
                    period: per.label.clone(),
                });
            }
        }
        Dataset::new(
            self.schema()?,
            rows,
            Some([self.periods[0].label.clone(), self.periods[1].label.clone()]),
        )
    }
}

/// A four-factor sample with one continuous block: log assets, college,
/// family (married, children) and age. Covariate laws and the outcome
/// structure both move between periods `"18"` and `"22"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedDgp {
    pub n_per_period: usize,
    pub seed: u64,
}

impl Default for MixedDgp {
    fn default() -> Self {
        Self { n_per_period: 2_000, seed: 44 }
    }
}

impl MixedDgp {
    pub fn schema(&self) -> Result<FactorSchema> {
        FactorSchema::new(
            vec![
                Column::continuous("assets"),
                Column::dummy("college"),
                Column::dummy("married"),
                Column::dummy("kids"),
                Column::dummy("old"),
            ],
            vec![
                Block::new("Assets", &["assets"]),
                Block::new("Education", &["college"]),
                Block::new("Family", &["married", "kids"]),
                Block::new("Age", &["old"]),
            ],
        )
    }

    pub fn generate(&self) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let z = Normal::new(0.0, 1.0).expect("unit normal");
        let mut rows = Vec::with_capacity(2 * self.n_per_period);
        for (k, period) in ["18", "22"].into_iter().enumerate() {
            let t = k as f64;
            for _ in 0..self.n_per_period {
                let old = f64::from(rng.gen_bool(0.35 + 0.05 * t));
                let married = f64::from(rng.gen_bool(0.45 + 0.1 * old - 0.03 * t));
                let kids = f64::from(rng.gen_bool(0.2 + 0.25 * married - 0.15 * old));
                let college = f64::from(rng.gen_bool(0.3 + 0.04 * t + 0.05 * married));
                let assets = 2.0 + 0.6 * college + 0.5 * old + 0.3 * married + 0.1 * t + 0.8 * z.sample(&mut rng);
                let sd = 0.35 + 0.05 * college + 0.03 * t;
                let outcome = 7.4 + 0.12 * assets + 0.3 * college + (0.1 - 0.03 * t) * married - 0.06 * kids + 0.08 * old + 0.04 * t
                    + sd * z.sample(&mut rng);
                rows.push(Observation {
                    outcome,
                    covariates: vec![assets, college, married, kids, old],
                    weight: rng.gen_range(0.5..2.0),
                    period: period.into(),
                });
            }
        }
        Dataset::new(self.schema()?, rows, Some(["18".into(), "22".into()]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discretized_normal_sums_to_one() {
        let s = lattice(-3.0, 3.0, 13);
        let p = discretized_normal(0.0, 1.0, &s);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((p[6] - (norm_cdf(0.25) - norm_cdf(-0.25))).abs() < 1e-15);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = DiscreteDgp::four_cell().with_n(500).generate().unwrap();
        let b = DiscreteDgp::four_cell().with_n(500).generate().unwrap();
        assert_eq!(a.rows(), b.rows());
        let c = DiscreteDgp::four_cell().with_n(500).with_seed(5).generate().unwrap();
        assert_ne!(a.rows(), c.rows());
    }

    #[test]
    fn cell_frequencies_converge() {
        let dgp = DiscreteDgp::shipped().with_n(100_000);
        let data = dgp.generate().unwrap();
        for (pi, p) in dgp.periods.iter().enumerate() {
            let mut counts = vec![0.0; 8];
            for o in data.rows().iter().filter(|o| o.period == p.label) {
                let c = (0..3).map(|j| (o.covariates[j] as usize) << j).sum::<usize>();
                counts[c] += 1.0;
            }
            for (c, n) in counts.iter().enumerate() {
                assert!((n / 100_000.0 - dgp.periods[pi].cell_probs[c]).abs() < 0.005);
            }
        }
    }

    #[test]
    fn observed_exact_counterfactual_is_the_marginal() {
        let dgp = DiscreteDgp::four_cell();
        let schema = dgp.schema().unwrap();
        let f = dgp.exact_counterfactual(&CounterfactualSpec::observed(&schema, "22")).unwrap();
        let p = &dgp.periods[1];
        let mut acc = 0.0;
        for (j, fj) in f.iter().enumerate() {
            acc += (0..4).map(|c| p.cell_probs[c] * p.outcome_probs[c][j]).sum::<f64>();
            assert!((fj - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn swap_x1_on_four_cells_by_hand() {
        // Structure 22, X1 | X2 from 18, X2 from 22:
        // q(x1, x2) = P22(x2) · P18(x1 | x2).
        let dgp = DiscreteDgp::four_cell();
        let spec = CounterfactualSpec::new("22", vec![("X1".into(), "18".into()), ("X2".into(), "22".into())]);
        let f = dgp.exact_counterfactual(&spec).unwrap();
        let (a, b) = (&dgp.periods[0].cell_probs, &dgp.periods[1].cell_probs);
        // cells: 0 = (0,0), 1 = (1,0), 2 = (0,1), 3 = (1,1)
        let p22_x2 = [b[0] + b[1], b[2] + b[3]];
        let p18_x1_given = |x1: usize, x2: usize| a[x1 + 2 * x2] / (a[2 * x2] + a[1 + 2 * x2]);
        let q = [
            p22_x2[0] * p18_x1_given(0, 0),
            p22_x2[0] * p18_x1_given(1, 0),
            p22_x2[1] * p18_x1_given(0, 1),
            p22_x2[1] * p18_x1_given(1, 1),
        ];
        let cdfs: Vec<Vec<f64>> = dgp.periods[1].outcome_probs.iter().map(|r| cumulative(r)).collect();
        for j in 0..dgp.support.len() {
            let want: f64 = (0..4).map(|c| q[c] * cdfs[c][j]).sum();
            assert!((f[j] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn independence_makes_swaps_inert() {
        let dgp = DiscreteDgp::independence_null(0.1);
        let schema = dgp.schema().unwrap();
        let base = dgp.exact_counterfactual(&CounterfactualSpec::observed(&schema, "22")).unwrap();
        let spec = CounterfactualSpec::new(
            "22",
            vec![("X1".into(), "18".into()), ("X2".into(), "22".into()), ("X3".into(), "22".into())],
        );
        let swapped = dgp.exact_counterfactual(&spec).unwrap();
        for (a, b) in base.iter().zip(&swapped) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn decreasing_quantile_process_is_rejected() {
        let mut dgp = LinearQrDgp::location_shift(0.0).with_n(200);
        dgp.periods[0].coefficients[1].b = -1.0;
        assert!(matches!(dgp.generate(), Err(Error::Validation(_))));
    }

    #[test]
    fn true_path_at_the_median() {
        let dgp = LinearQrDgp::heterogeneous();
        let b = dgp.true_path("18", &[0.5, 0.75]).unwrap();
        assert_eq!(b[0], vec![7.5, 0.3, 0.2]);
        assert!((b[1][1] - 0.4).abs() < 1e-15);
    }
}
