//! Microdata preparation: deflation, equivalence scaling, hedonic
//! imputation of vehicle and housing service flows, and two measurement
//! diagnostics (an instrumental-variable elasticity and a basket CPI ratio).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converts a nominal amount to base-period units for a price index with
/// base 100.
pub fn deflate(nominal: f64, index: f64) -> Result<f64> {
    if !(index > 0.0 && index.is_finite()) {
        return Err(Error::InvalidArgument(format!("price index must be positive, got {index}")));
    }
    if !nominal.is_finite() {
        return Err(Error::NonFinite("nominal amount"));
    }
    Ok(nominal / (index / 100.0))
}

/// A named price index with one value per period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deflator {
    pub name: String,
    pub values: BTreeMap<String, f64>,
}

impl Deflator {
    pub fn new(name: impl Into<String>, values: BTreeMap<String, f64>) -> Result<Self> {
        let d = Self { name: name.into(), values };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self.values.iter().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            Some((p, v)) => Err(Error::Validation(format!("index `{}` has nonpositive value {v} in period `{p}`", self.name))),
            None => Ok(()),
        }
    }

    pub fn index(&self, period: &str) -> Result<f64> {
        self.values
            .get(period)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("index `{}` has no value for period `{period}`", self.name)))
    }

    pub fn deflate(&self, nominal: f64, period: &str) -> Result<f64> {
        deflate(nominal, self.index(period)?)
    }
}

/// Household equivalence scale; every variant equals 1 for a single adult.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scale")]
pub enum EquivalenceScale {
    /// `√(adults + children)`.
    #[default]
    SquareRoot,
    /// `adults + children`.
    PerCapita,
    /// 1 for the first member, 0.5 per further adult, 0.3 per child.
    OecdModified,
    /// `(adults + child_weight·children)^elasticity`.
    Parametric { child_weight: f64, elasticity: f64 },
}

impl EquivalenceScale {
    pub fn factor(&self, adults: u32, children: u32) -> Result<f64> {
        let size = adults + children;
        if size == 0 {
            return Err(Error::InvalidArgument("household has no members".into()));
        }
        let (a, k) = (f64::from(adults), f64::from(children));
        Ok(match *self {
            Self::SquareRoot => (a + k).sqrt(),
            Self::PerCapita => a + k,
            Self::OecdModified => {
                if adults > 0 {
                    1.0 + 0.5 * (a - 1.0) + 0.3 * k
                } else {
                    1.0 + 0.3 * (k - 1.0)
                }
            }
            Self::Parametric { child_weight, elasticity } => {
                if !(child_weight >= 0.0 && elasticity > 0.0 && elasticity <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "parametric scale needs child_weight >= 0 and elasticity in (0, 1], got {child_weight}, {elasticity}"
                    )));
                }
                (a + child_weight * k).powf(elasticity)
            }
        })
    }
}

/// Consumption per equivalent adult.
pub fn equivalence_scale(consumption: f64, adults: u32, children: u32, scale: EquivalenceScale) -> Result<f64> {
    Ok(consumption / scale.factor(adults, children)?)
}

/// How predictions from a log-linear regression are mapped back to levels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retransformation {
    /// `exp(fit) · mean(exp(residual))`, weighted.
    #[default]
    Smearing,
    /// `exp(fit + σ²/2)` under normal errors.
    Normal,
    /// `exp(fit)`, the conditional median under symmetric errors.
    Exp,
}

/// Weighted least squares of `y` on an intercept and `x`, retransformed
/// for prediction in levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLinearModel {
    /// Intercept first.
    pub coefficients: Vec<f64>,
    pub sigma2: f64,
    pub smearing: f64,
    pub retransformation: Retransformation,
}

impl LogLinearModel {
    pub fn fit(x: &[Vec<f64>], log_y: &[f64], w: &[f64], retransformation: Retransformation) -> Result<Self> {
        let (coefficients, resid) = wls(x, log_y, w)?;
        let wsum: f64 = w.iter().sum();
        let dof = (x.len() as f64 - coefficients.len() as f64).max(1.0);
        let sigma2 = resid.iter().zip(w).map(|(e, wi)| wi * e * e).sum::<f64>() / wsum * x.len() as f64 / dof;
        let smearing = resid.iter().zip(w).map(|(e, wi)| wi * e.exp()).sum::<f64>() / wsum;
        Ok(Self {
            coefficients,
            sigma2,
            smearing,
            retransformation,
        })
    }

    pub fn log_fit(&self, x: &[f64]) -> Result<f64> {
        if x.len() + 1 != self.coefficients.len() {
            return Err(Error::Dimension { expected: self.coefficients.len() - 1, got: x.len() });
        }
        Ok(self.coefficients[0] + x.iter().zip(&self.coefficients[1..]).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Predicted level.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let f = self.log_fit(x)?;
        Ok(match self.retransformation {
            Retransformation::Smearing => f.exp() * self.smearing,
            Retransformation::Normal => (f + self.sigma2 / 2.0).exp(),
            Retransformation::Exp => f.exp(),
        })
    }
}

/// Weighted least squares with an intercept; returns coefficients and
/// residuals.
fn wls(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = y.len();
    if x.len() != n || w.len() != n {
        return Err(Error::Dimension { expected: n, got: x.len().min(w.len()) });
    }
    if n == 0 {
        return Err(Error::Validation("regression sample is empty".into()));
    }
    let p = x[0].len() + 1;
    if x.iter().any(|r| r.len() + 1 != p) {
        return Err(Error::InvalidArgument("ragged regressor rows".into()));
    }
    if n < p {
        return Err(Error::Validation(format!("{n} rows for {p} coefficients")));
    }
    if x.iter().flatten().chain(y).chain(w).any(|v| !v.is_finite()) || w.iter().any(|v| *v < 0.0) {
        return Err(Error::NonFinite("regression input"));
    }
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut row = vec![1.0; p];
    for i in 0..n {
        row[1..].copy_from_slice(&x[i]);
        for a in 0..p {
            xty[a] += w[i] * row[a] * y[i];
            for b in 0..p {
                xtx[(a, b)] += w[i] * row[a] * row[b];
            }
        }
    }
    let beta = crate::glm::solve_spd(&xtx, &xty, 1e-10).ok_or_else(|| Error::Numerical("singular regression design".into()))?;
    let resid = (0..n)
        .map(|i| y[i] - beta[0] - x[i].iter().zip(beta.iter().skip(1)).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    Ok((beta.iter().copied().collect(), resid))
}

/// Settings for the service-flow imputations. The flow rate has no default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationConfig {
    /// Share of current vehicle value consumed per quarter.
    pub rate: f64,
    /// Annual geometric depreciation of vehicle value.
    pub annual_depreciation: f64,
    #[serde(default)]
    pub retransformation: Retransformation,
}

impl ImputationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rate", self.rate), ("annual_depreciation", self.annual_depreciation)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    /// Purchase price, if reported.
    pub price: Option<f64>,
    /// Years since purchase.
    pub years_owned: f64,
    /// Vehicle and household characteristics for the price model.
    pub characteristics: Vec<f64>,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleBranch {
    /// Bought within the last year with a reported price.
    RecentPrice,
    /// Older, with a reported price.
    DepreciatedPrice,
    /// Price imputed from characteristics.
    ImputedPrice,
}

impl VehicleRecord {
    pub fn branch(&self) -> VehicleBranch {
        match self.price {
            Some(_) if self.years_owned <= 1.0 => VehicleBranch::RecentPrice,
            Some(_) => VehicleBranch::DepreciatedPrice,
            None => VehicleBranch::ImputedPrice,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleFlow {
    pub value: f64,
    pub flow: f64,
    pub branch: VehicleBranch,
}

/// Current value times the flow rate. Prices of vehicles bought more than a
/// year ago are depreciated geometrically over the years owned; missing
/// prices are predicted from a log-price regression on the priced records
/// and then depreciated.
pub fn impute_vehicle_flow(records: &[VehicleRecord], cfg: &ImputationConfig) -> Result<Vec<VehicleFlow>> {
    cfg.validate()?;
    if let Some(r) = records.iter().find(|r| !(r.years_owned >= 0.0) || r.price.is_some_and(|p| !(p > 0.0))) {
        return Err(Error::Validation(format!("invalid vehicle record {r:?}")));
    }
    let priced: Vec<&VehicleRecord> = records.iter().filter(|r| r.price.is_some()).collect();
    let needs_model = records.iter().any(|r| r.price.is_none());
    let model = if needs_model {
        if priced.is_empty() {
            return Err(Error::Validation("no priced vehicles to fit the price model".into()));
        }
        let x: Vec<Vec<f64>> = priced.iter().map(|r| r.characteristics.clone()).collect();
        let y: Vec<f64> = priced.iter().map(|r| r.price.unwrap().ln()).collect();
        let w: Vec<f64> = priced.iter().map(|r| r.weight).collect();
        Some(LogLinearModel::fit(&x, &y, &w, cfg.retransformation)?)
    } else {
        None
    };
    let keep = 1.0 - cfg.annual_depreciation;
    records
        .iter()
        .map(|r| {
            let branch = r.branch();
            let value = match branch {
                VehicleBranch::RecentPrice => r.price.unwrap(),
                VehicleBranch::DepreciatedPrice => r.price.unwrap() * keep.powf(r.years_owned),
                VehicleBranch::ImputedPrice => model.as_ref().unwrap().predict(&r.characteristics)? * keep.powf(r.years_owned),
            };
            Ok(VehicleFlow {
                value,
                flow: value * cfg.rate,
                branch,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HousingRecord {
    /// Reported quarterly rental equivalent.
    pub reported_quarterly: Option<f64>,
    /// Observed monthly rent (renters).
    pub monthly_rent: Option<f64>,
    pub characteristics: Vec<f64>,
    pub weight: f64,
}

/// Quarterly rental equivalents: reported values pass through, the rest
/// get three times the predicted monthly rent from a log-rent regression on
/// renters. The result is a consumption component only.
pub fn impute_rental_equivalent(records: &[HousingRecord], retransformation: Retransformation) -> Result<Vec<f64>> {
    let renters: Vec<&HousingRecord> = records.iter().filter(|r| r.monthly_rent.is_some_and(|m| m > 0.0)).collect();
    let needs_model = records.iter().any(|r| r.reported_quarterly.is_none());
    let model = if needs_model {
        if renters.is_empty() {
            return Err(Error::Validation("no renters to fit the rent model".into()));
        }
        let x: Vec<Vec<f64>> = renters.iter().map(|r| r.characteristics.clone()).collect();
        let y: Vec<f64> = renters.iter().map(|r| r.monthly_rent.unwrap().ln()).collect();
        let w: Vec<f64> = renters.iter().map(|r| r.weight).collect();
        Some(LogLinearModel::fit(&x, &y, &w, retransformation)?)
    } else {
        None
    };
    records
        .iter()
        .map(|r| match r.reported_quarterly {
            Some(q) => Ok(q),
            None => Ok(3.0 * model.as_ref().unwrap().predict(&r.characteristics)?),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvEstimate {
    pub coef: f64,
    pub se: f64,
    pub intercept: f64,
    pub n: usize,
    /// First-stage F statistic of the instrument.
    pub first_stage_f: f64,
    /// Set when the first stage F is below 1.
    pub weak_instrument: bool,
}

impl IvEstimate {
    /// Coefficient with its standard error in parentheses.
    pub fn formatted(&self, decimals: usize) -> String {
        format!("{:.d$} ({:.d$})", self.coef, self.se, d = decimals)
    }
}

/// Weighted quantile of `v` (left inverse of the weighted ECDF).
fn weighted_quantile(v: &[f64], w: &[f64], tau: f64) -> f64 {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    for &i in &idx {
        acc += w[i];
        if acc >= tau * total {
            return v[i];
        }
    }
    v[*idx.last().unwrap()]
}

/// Just-identified weighted two-stage least squares of `y` on `x` with
/// instrument `z`, after dropping rows with `z` below its weighted `trim`
/// quantile or above its `1 − trim` quantile. Standard errors are the
/// conventional homoskedastic ones with weights normalized to the sample
/// size.
pub fn iv_elasticity(y: &[f64], x: &[f64], z: &[f64], w: &[f64], trim: f64) -> Result<IvEstimate> {
    let n = y.len();
    if x.len() != n || z.len() != n || w.len() != n {
        return Err(Error::Dimension { expected: n, got: x.len().min(z.len()).min(w.len()) });
    }
    if !(0.0..0.25).contains(&trim) {
        return Err(Error::InvalidArgument(format!("trim must lie in [0, 0.25), got {trim}")));
    }
    if y.iter().chain(x).chain(z).chain(w).any(|v| !v.is_finite()) || w.iter().any(|v| *v < 0.0) {
        return Err(Error::NonFinite("instrumental-variable input"));
    }
    let keep: Vec<usize> = if trim > 0.0 {
        let lo = weighted_quantile(z, w, trim);
        let hi = weighted_quantile(z, w, 1.0 - trim);
        (0..n).filter(|&i| z[i] >= lo && z[i] <= hi).collect()
    } else {
        (0..n).collect()
    };
    let m = keep.len();
    if m < 3 {
        return Err(Error::Validation(format!("{m} rows left after trimming")));
    }
    let wsum: f64 = keep.iter().map(|&i| w[i]).sum();
    let wn: Vec<f64> = keep.iter().map(|&i| w[i] * m as f64 / wsum).collect();
    let mean = |v: &[f64]| keep.iter().zip(&wn).map(|(&i, wi)| wi * v[i]).sum::<f64>() / m as f64;
    let (my, mx, mz) = (mean(y), mean(x), mean(z));
    let cov = |a: &[f64], ma: f64, b: &[f64], mb: f64| keep.iter().zip(&wn).map(|(&i, wi)| wi * (a[i] - ma) * (b[i] - mb)).sum::<f64>();
    let szx = cov(z, mz, x, mx);
    let szz = cov(z, mz, z, mz);
    if szx.abs() <= 1e-300 || szz <= 0.0 {
        return Err(Error::Numerical("instrument is uncorrelated with the regressor".into()));
    }
    let coef = cov(z, mz, y, my) / szx;
    let intercept = my - coef * mx;
    let dof = (m - 2) as f64;
    let s2 = keep.iter().zip(&wn).map(|(&i, wi)| wi * (y[i] - intercept - coef * x[i]).powi(2)).sum::<f64>() / dof;
    // Var(β̂) = σ² S_zz / S_zx² for the just-identified model.
    let se = (s2 * szz / (szx * szx)).sqrt();
    let gamma = szx / szz;
    let sxx = cov(x, mx, x, mx);
    let first_ss = (sxx - gamma * szx).max(0.0);
    let first_s2 = first_ss / dof;
    let first_stage_f = if first_s2 > 0.0 { gamma * gamma * szz / first_s2 } else { f64::INFINITY };
    let weak_instrument = first_stage_f < 1.0;
    if weak_instrument {
        log::warn!("weak instrument: first-stage F = {first_stage_f:.3}");
    }
    Ok(IvEstimate {
        coef,
        se,
        intercept,
        n: m,
        first_stage_f,
        weak_instrument,
    })
}

/// Weighted average of component price indices over the all-items index.
/// Weights that do not sum to one are normalized with a warning.
pub fn basket_cpi_ratio(components: &[(f64, f64)], all_items: f64) -> Result<f64> {
    if components.is_empty() {
        return Err(Error::InvalidArgument("no basket components".into()));
    }
    if !(all_items > 0.0 && all_items.is_finite()) {
        return Err(Error::InvalidArgument(format!("all-items index must be positive, got {all_items}")));
    }
    if components.iter().any(|(i, w)| !(*i > 0.0 && i.is_finite() && *w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument("component indices must be positive and weights nonnegative".into()));
    }
    let total: f64 = components.iter().map(|c| c.1).sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("component weights sum to zero".into()));
    }
    if (total - 1.0).abs() > 1e-9 {
        log::warn!("basket weights sum to {total}; normalizing");
    }
    let basket = components.iter().map(|(i, w)| i * w).sum::<f64>() / total;
    Ok(basket / all_items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deflation_matches_log_identity() {
        for (c, i) in [(7.861676, 251.1), (12.0, 100.0), (0.37, 297.507)] {
            let r = deflate(c, i).unwrap();
            assert!((r.ln() - (c.ln() - (i / 100.0).ln())).abs() < 1e-12);
        }
        assert_eq!(deflate(5.0, 100.0).unwrap(), 5.0);
        assert!(deflate(5.0, 0.0).is_err());
        assert!(deflate(5.0, -3.0).is_err());
    }

    #[test]
    fn scales_are_normalized_and_monotone() {
        let scales = [
            EquivalenceScale::SquareRoot,
            EquivalenceScale::PerCapita,
            EquivalenceScale::OecdModified,
            EquivalenceScale::Parametric { child_weight: 0.7, elasticity: 0.7 },
        ];
        for s in scales {
            assert_eq!(equivalence_scale(10.0, 1, 0, s).unwrap(), 10.0);
            for a in 1..5 {
                for k in 0..5 {
                    let here = equivalence_scale(10.0, a, k, s).unwrap();
                    assert!(equivalence_scale(10.0, a + 1, k, s).unwrap() <= here);
                    assert!(equivalence_scale(10.0, a, k + 1, s).unwrap() <= here);
                }
            }
            assert!(s.factor(0, 0).is_err());
        }
        assert_eq!(equivalence_scale(10.0, 2, 2, EquivalenceScale::SquareRoot).unwrap(), 5.0);
    }

    #[test]
    fn basket_ratio_single_component() {
        assert_eq!(basket_cpi_ratio(&[(250.0, 1.0)], 250.0).unwrap(), 1.0);
        let r = basket_cpi_ratio(&[(200.0, 2.0), (300.0, 2.0)], 250.0).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        assert!(basket_cpi_ratio(&[], 250.0).is_err());
    }

    #[test]
    fn vehicle_branches() {
        let cfg = ImputationConfig { rate: 0.05, annual_depreciation: 0.15, retransformation: Retransformation::Smearing };
        let recs = vec![
            VehicleRecord { price: Some(20.0), years_owned: 0.5, characteristics: vec![1.0], weight: 1.0 },
            VehicleRecord { price: Some(20.0), years_owned: 3.0, characteristics: vec![2.0], weight: 1.0 },
            VehicleRecord { price: Some(30.0), years_owned: 2.0, characteristics: vec![3.0], weight: 1.0 },
        ];
        let f = impute_vehicle_flow(&recs, &cfg).unwrap();
        assert_eq!(f[0].branch, VehicleBranch::RecentPrice);
        assert!((f[0].flow - 20.0 * 0.05).abs() < 1e-15);
        assert!((f[1].value - 20.0 * 0.85f64.powi(3)).abs() < 1e-12);
        let bad = ImputationConfig { rate: 1.5, ..cfg.clone() };
        assert!(impute_vehicle_flow(&recs, &bad).is_err());
        let unpriced = vec![VehicleRecord { price: None, years_owned: 1.0, characteristics: vec![1.0], weight: 1.0 }];
        assert!(impute_vehicle_flow(&unpriced, &cfg).is_err());
    }

    #[test]
    fn rental_times_three() {
        let recs: Vec<HousingRecord> = (0..10)
            .map(|i| HousingRecord {
                reported_quarterly: None,
                monthly_rent: Some(1.2),
                characteristics: vec![f64::from(i)],
                weight: 1.0,
            })
            .chain(std::iter::once(HousingRecord { reported_quarterly: Some(9.9), monthly_rent: None, characteristics: vec![0.0], weight: 1.0 }))
            .collect();
        let q = impute_rental_equivalent(&recs, Retransformation::Exp).unwrap();
        assert!((q[0] - 3.6).abs() < 1e-12);
        assert_eq!(q[10], 9.9);
    }

    #[test]
    fn iv_identity_and_ols_reduction() {
        let x: Vec<f64> = (0..50).map(|i| (f64::from(i) * 0.37).sin() + 2.0).collect();
        let w: Vec<f64> = (0..50).map(|i| 1.0 + f64::from(i % 3)).collect();
        let e = iv_elasticity(&x, &x, &x, &w, 0.0).unwrap();
        assert!((e.coef - 1.0).abs() < 1e-12 && e.se < 1e-7);
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 0.8 * v + 0.1 * (i as f64 * 1.3).cos()).collect();
        let iv = iv_elasticity(&y, &x, &x, &w, 0.0).unwrap();
        let xs: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
        let (b, _) = wls(&xs, &y, &w).unwrap();
        assert!((iv.coef - b[1]).abs() < 1e-10 && (iv.intercept - b[0]).abs() < 1e-10);
        assert_eq!(IvEstimate { coef: 0.9368293, se: 0.006551, ..iv }.formatted(3), "0.937 (0.007)");
    }
}
