//! Weighted maximum-likelihood binary-response regression.
//!
//! Fits use Fisher scoring (Newton for the canonical logit link) with
//! step-halving on the weighted log-likelihood and a scaled ridge fallback
//! when the information matrix is numerically singular. Responses may be
//! fractional: a row with response `z` and weight `w` stands for a group of
//! binary outcomes with weighted success share `z`, which gives the same
//! estimates as the ungrouped rows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Fitted probabilities closer than this to 0 or 1 mark a separated fit.
pub const SEPARATION_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logit,
    Probit,
    Cloglog,
    Cauchit,
    LinearProbability,
}

impl std::str::FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logit" => Ok(Link::Logit),
            "probit" => Ok(Link::Probit),
            "cloglog" => Ok(Link::Cloglog),
            "cauchit" => Ok(Link::Cauchit),
            "lpm" | "linear" | "linear_probability" => Ok(Link::LinearProbability),
            other => Err(Error::InvalidArgument(format!("unknown link `{other}`"))),
        }
    }
}

impl std::fmt::Display for Link {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Link::Logit => "logit",
            Link::Probit => "probit",
            Link::Cloglog => "cloglog",
            Link::Cauchit => "cauchit",
            Link::LinearProbability => "linear_probability",
        };
        f.write_str(s)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn ln_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Mills-ratio expansion; erfc underflows here.
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - LN_SQRT_2PI + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_quantile(p: f64) -> f64 {
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // One Newton step; the series inverse alone is good to about 1e-9.
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if pdf > 0.0 {
        x - (norm_cdf(x) - p) / pdf
    } else {
        x
    }
}

impl Link {
    /// Response probability at linear index `eta`, always within `[0, 1]`.
    pub fn cdf(self, eta: f64) -> f64 {
        match self {
            Link::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            Link::Probit => norm_cdf(eta),
            Link::Cloglog => -(-eta.exp()).exp_m1(),
            Link::Cauchit => {
                if eta < 0.0 {
                    (-1.0 / eta).atan() / std::f64::consts::PI
                } else {
                    0.5 + eta.atan() / std::f64::consts::PI
                }
            }
            Link::LinearProbability => eta.clamp(0.0, 1.0),
        }
    }

    /// `(ln F(eta), ln(1 − F(eta)))`, accurate in both tails.
    fn log_cdf_pair(self, eta: f64) -> (f64, f64) {
        match self {
            Link::Logit => (-softplus(-eta), -softplus(eta)),
            Link::Probit => (ln_norm_cdf(eta), ln_norm_cdf(-eta)),
            Link::Cloglog => {
                let e = eta.exp();
                ((-(-e).exp_m1()).ln(), -e)
            }
            Link::Cauchit => {
                let pi = std::f64::consts::PI;
                let tail = |t: f64| -> f64 {
                    // F(t) for t < 0.
                    ((-1.0 / t).atan() / pi).ln()
                };
                if eta < 0.0 {
                    (tail(eta), (0.5 - eta.atan() / pi).ln())
                } else if eta > 0.0 {
                    ((0.5 + eta.atan() / pi).ln(), tail(-eta))
                } else {
                    (0.5f64.ln(), 0.5f64.ln())
                }
            }
            Link::LinearProbability => {
                let p = eta.clamp(0.0, 1.0);
                (p.ln(), (1.0 - p).ln())
            }
        }
    }

    fn ln_pdf(self, eta: f64, ln_f: f64, ln_g: f64) -> f64 {
        match self {
            Link::Logit => ln_f + ln_g,
            Link::Probit => -0.5 * eta * eta - LN_SQRT_2PI,
            Link::Cloglog => eta - eta.exp(),
            Link::Cauchit => -(std::f64::consts::PI * (1.0 + eta * eta)).ln(),
            Link::LinearProbability => 0.0,
        }
    }

    /// Inverse of [`Link::cdf`] on `(0, 1)`.
    pub fn quantile(self, p: f64) -> f64 {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        match self {
            Link::Logit => (p / (1.0 - p)).ln(),
            Link::Probit => norm_quantile(p),
            Link::Cloglog => (-(-p).ln_1p()).ln(),
            Link::Cauchit => (std::f64::consts::PI * (p - 0.5)).tan(),
            Link::LinearProbability => p,
        }
    }

    pub const ALL: [Link; 5] = [
        Link::Logit,
        Link::Probit,
        Link::Cloglog,
        Link::Cauchit,
        Link::LinearProbability,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitControl {
    /// Convergence threshold on the sup-norm of the score divided by the
    /// total weight.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial ridge, relative to the largest diagonal entry, used only when
    /// the information matrix fails to factor.
    pub ridge: f64,
}

impl Default for FitControl {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            ridge: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum FitStatus {
    Converged,
    /// Some fitted probabilities reached the 0/1 limit: the MLE does not
    /// exist and predictions snap to that limit.
    Separated,
    /// All responses equal; predictions are the constant `level`.
    Degenerate { level: f64 },
    NotConverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub link: Link,
    #[serde(flatten)]
    pub status: FitStatus,
    pub iterations: usize,
    pub loglik: f64,
}

impl GlmFit {
    pub fn converged(&self) -> bool {
        matches!(self.status, FitStatus::Converged)
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self.status, FitStatus::Degenerate { .. })
    }

    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    /// Predicted probability for a design row.
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.coefficients.len() {
            return Err(Error::Dimension {
                expected: self.coefficients.len(),
                got: row.len(),
            });
        }
        Ok(self.prob_from_index(self.linear_predictor(row)))
    }

    pub(crate) fn prob_from_index(&self, eta: f64) -> f64 {
        match self.status {
            FitStatus::Degenerate { level } => level,
            FitStatus::Separated => {
                let p = self.link.cdf(eta);
                if p < SEPARATION_EPS {
                    0.0
                } else if p > 1.0 - SEPARATION_EPS {
                    1.0
                } else {
                    p
                }
            }
            _ => self.link.cdf(eta),
        }
    }
}

/// Row-major design matrix borrowed from a flat buffer.
#[derive(Clone, Copy, Debug)]
pub struct DesignMatrix<'a> {
    data: &'a [f64],
    cols: usize,
}

impl<'a> DesignMatrix<'a> {
    pub fn new(data: &'a [f64], cols: usize) -> Result<Self> {
        if cols == 0 || data.len() % cols != 0 {
            return Err(Error::InvalidArgument(format!(
                "buffer of {} values is not a matrix with {cols} columns",
                data.len()
            )));
        }
        Ok(Self { data, cols })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

struct Eval {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
    saturated: bool,
}

fn evaluate(x: &DesignMatrix, z: &[f64], w: &[f64], link: Link, beta: &[f64], with_derivs: bool) -> Eval {
    let p = x.cols();
    let mut loglik = 0.0;
    let mut score = DVector::zeros(if with_derivs { p } else { 0 });
    let mut info = DMatrix::zeros(if with_derivs { p } else { 0 }, if with_derivs { p } else { 0 });
    let mut saturated = false;
    for i in 0..x.rows() {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        let row = x.row(i);
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        let (ln_f, ln_g) = link.log_cdf_pair(eta);
        let zi = z[i];
        if zi > 0.0 {
            loglik += wi * zi * ln_f;
        }
        if zi < 1.0 {
            loglik += wi * (1.0 - zi) * ln_g;
        }
        if ln_f.max(ln_g) > (1.0 - SEPARATION_EPS).ln() {
            saturated = true;
        }
        if !with_derivs {
            continue;
        }
        let f = ln_f.exp();
        let (resid_scale, info_w) = if link == Link::Logit {
            (1.0, (ln_f + ln_g).exp())
        } else {
            let ln_pdf = link.ln_pdf(eta, ln_f, ln_g);
            ((ln_pdf - ln_f - ln_g).exp(), (2.0 * ln_pdf - ln_f - ln_g).exp())
        };
        let g = wi * (zi - f) * resid_scale;
        let h = wi * info_w;
        if !(g.is_finite() && h.is_finite()) {
            continue;
        }
        for a in 0..p {
            score[a] += g * row[a];
            let ha = h * row[a];
            if ha == 0.0 {
                continue;
            }
            for b in 0..=a {
                info[(a, b)] += ha * row[b];
            }
        }
    }
    if with_derivs {
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
    }
    Eval {
        loglik,
        score,
        info,
        saturated,
    }
}

/// Solves `H d = g`, retrying with a growing ridge scaled by the largest
/// diagonal entry when `H` does not factor.
pub(crate) fn solve_spd(h: &DMatrix<f64>, g: &DVector<f64>, ridge: f64) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        let d = ch.solve(g);
        if d.iter().all(|v| v.is_finite()) {
            return Some(d);
        }
    }
    let scale = h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut lambda = ridge.max(1e-14);
    while lambda < 1.0 {
        let mut hr = h.clone();
        for k in 0..hr.nrows() {
            hr[(k, k)] += lambda * scale;
        }
        if let Some(ch) = hr.cholesky() {
            let d = ch.solve(g);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        lambda *= 100.0;
    }
    None
}

fn validate_inputs(x: &DesignMatrix, z: &[f64], w: &[f64]) -> Result<f64> {
    let n = x.rows();
    if z.len() != n {
        return Err(Error::Dimension { expected: n, got: z.len() });
    }
    if w.len() != n {
        return Err(Error::Dimension { expected: n, got: w.len() });
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix"));
    }
    if z.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("responses must lie in [0, 1]".into()));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
    }
    let wsum: f64 = w.iter().sum();
    if wsum <= 0.0 {
        return Err(Error::InvalidArgument("weights sum to zero".into()));
    }
    Ok(wsum)
}

fn weighted_least_squares(x: &DesignMatrix, z: &[f64], w: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let p = x.cols();
    let mut xtx = DMatrix::zeros(p, p);
    let mut xtz = DVector::zeros(p);
    for i in 0..x.rows() {
        let row = x.row(i);
        for a in 0..p {
            let wa = w[i] * row[a];
            xtz[a] += wa * z[i];
            for b in 0..=a {
                xtx[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
    }
    solve_spd(&xtx, &xtz, ridge)
        .map(|d| d.iter().copied().collect())
        .ok_or_else(|| Error::Numerical("singular weighted least-squares system".into()))
}

/// Weighted binary regression of `z` on the rows of `x`.
///
/// All-zero or all-one responses give a [`FitStatus::Degenerate`] fit rather
/// than an error; perfectly separated data give [`FitStatus::Separated`].
pub fn fit_binary(x: &DesignMatrix, z: &[f64], w: &[f64], link: Link, ctrl: &FitControl) -> Result<GlmFit> {
    let wsum = validate_inputs(x, z, w)?;
    let p = x.cols();
    let active = || z.iter().zip(w).filter(|(_, &wi)| wi > 0.0);
    if active().all(|(&zi, _)| zi == 0.0) || active().all(|(&zi, _)| zi == 1.0) {
        let level = if active().all(|(&zi, _)| zi == 0.0) { 0.0 } else { 1.0 };
        return Ok(GlmFit {
            coefficients: vec![0.0; p],
            link,
            status: FitStatus::Degenerate { level },
            iterations: 0,
            loglik: 0.0,
        });
    }

    if link == Link::LinearProbability {
        let beta = weighted_least_squares(x, z, w, ctrl.ridge)?;
        let loglik = -z
            .iter()
            .zip(w)
            .enumerate()
            .map(|(i, (zi, wi))| {
                let e = zi - x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
                wi * e * e
            })
            .sum::<f64>();
        return Ok(GlmFit {
            coefficients: beta,
            link,
            status: FitStatus::Converged,
            iterations: 1,
            loglik,
        });
    }

    // Start at the marginal rate through a constant column when one exists.
    let zbar = z.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let mut beta = vec![0.0; p];
    if let Some(c) = (0..p).find(|&c| (0..x.rows()).all(|i| x.row(i)[c] == 1.0)) {
        beta[c] = link.quantile(zbar);
    }

    let mut cur = evaluate(x, z, w, link, &beta, true);
    let mut status = FitStatus::NotConverged;
    let mut iterations = 0;
    let mut polished = false;
    while iterations < ctrl.max_iter {
        let grad = cur.score.amax() / wsum;
        if grad < ctrl.tol && polished {
            status = FitStatus::Converged;
            break;
        }
        let Some(dir) = solve_spd(&cur.info, &cur.score, ctrl.ridge) else {
            return Err(Error::Numerical("information matrix could not be factored".into()));
        };
        iterations += 1;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().zip(dir.iter()).map(|(b, d)| b + step * d).collect();
            let val = evaluate(x, z, w, link, &trial, false);
            if val.loglik.is_finite() && val.loglik >= cur.loglik - 1e-12 * (1.0 + cur.loglik.abs()) {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            // No ascent possible: we are at the optimum to machine precision.
            status = if grad < ctrl.tol.sqrt() {
                FitStatus::Converged
            } else {
                FitStatus::NotConverged
            };
            break;
        };
        beta = next;
        cur = evaluate(x, z, w, link, &beta, true);
        // One extra full step after the tolerance is first met.
        polished = grad < ctrl.tol;
    }
    if cur.saturated && !matches!(status, FitStatus::Degenerate { .. }) {
        status = FitStatus::Separated;
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numerical("non-finite coefficients".into()));
    }
    Ok(GlmFit {
        coefficients: beta,
        link,
        status,
        iterations,
        loglik: cur.loglik,
    })
}

/// Predicted probability for a design row; see [`GlmFit::predict`].
pub fn predict_prob(fit: &GlmFit, row: &[f64]) -> Result<f64> {
    fit.predict(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fit(x: &[f64], p: usize, z: &[f64], w: &[f64], link: Link) -> GlmFit {
        fit_binary(&DesignMatrix::new(x, p).unwrap(), z, w, link, &FitControl::default()).unwrap()
    }

    #[test]
    fn intercept_only_logit_is_log_odds() {
        let z = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let w = [1.0, 2.0, 0.5, 3.0, 1.0, 1.5, 0.25];
        let ones = vec![1.0; z.len()];
        let f = fit(&ones, 1, &z, &w, Link::Logit);
        let p = z.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
        assert!(f.converged());
        assert!((f.coefficients[0] - (p / (1.0 - p)).ln()).abs() < 1e-12);
    }

    #[test]
    fn separated_dummy_is_flagged_not_fatal() {
        let x: Vec<f64> = (0..20).flat_map(|i| [1.0, f64::from(i >= 10)]).collect();
        let z: Vec<f64> = (0..20).map(|i| f64::from(i >= 10)).collect();
        let w = vec![1.0; 20];
        for link in [Link::Logit, Link::Probit, Link::Cloglog, Link::Cauchit] {
            let f = fit(&x, 2, &z, &w, link);
            // Cauchit tails are so heavy that the score vanishes before the
            // probabilities reach the separation cutoff.
            if link != Link::Cauchit {
                assert_eq!(f.status, FitStatus::Separated, "{link}");
            }
            assert!(f.predict(&[1.0, 1.0]).unwrap() > 0.999, "{link}");
            assert!(f.predict(&[1.0, 0.0]).unwrap() < 1e-3, "{link}");
        }
    }

    #[test]
    fn all_equal_responses_are_degenerate() {
        let ones = vec![1.0; 5];
        let f = fit(&ones, 1, &[0.0; 5], &[1.0; 5], Link::Logit);
        assert_eq!(f.status, FitStatus::Degenerate { level: 0.0 });
        assert_eq!(f.predict(&[1.0]).unwrap(), 0.0);
        let f = fit(&ones, 1, &[1.0; 5], &[1.0; 5], Link::Probit);
        assert_eq!(f.predict(&[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn non_finite_design_is_an_error() {
        let x = [1.0, f64::NAN, 1.0, 0.0];
        let r = fit_binary(&DesignMatrix::new(&x, 2).unwrap(), &[0.0, 1.0], &[1.0, 1.0], Link::Logit, &FitControl::default());
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn predictions_at_known_indices() {
        let zero = GlmFit {
            coefficients: vec![0.0, 0.0],
            link: Link::Logit,
            status: FitStatus::Converged,
            iterations: 0,
            loglik: 0.0,
        };
        assert_eq!(zero.predict(&[1.0, 4.0]).unwrap(), 0.5);
        let lpm = GlmFit {
            link: Link::LinearProbability,
            coefficients: vec![1.3],
            ..zero.clone()
        };
        assert_eq!(lpm.predict(&[1.0]).unwrap(), 1.0);
        let logit = GlmFit {
            coefficients: vec![3f64.ln()],
            ..zero.clone()
        };
        assert!((logit.predict(&[1.0]).unwrap() - 0.75).abs() < 1e-15);
        assert!(matches!(zero.predict(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn link_cdfs_are_monotone_bounded_and_invertible() {
        for link in Link::ALL {
            let mut prev = 0.0;
            for k in -400..=400 {
                let eta = f64::from(k) * 0.05;
                let p = link.cdf(eta);
                assert!((0.0..=1.0).contains(&p));
                assert!(p >= prev, "{link} at {eta}");
                prev = p;
            }
            if link != Link::LinearProbability {
                for p in [0.01, 0.3, 0.5, 0.9] {
                    assert!((link.cdf(link.quantile(p)) - p).abs() < 1e-12, "{link}");
                }
            }
        }
    }

    #[test]
    fn log_probabilities_stay_finite_in_tails() {
        for link in [Link::Logit, Link::Probit, Link::Cloglog, Link::Cauchit] {
            for eta in [-60.0, -35.0, 0.0, 35.0, 60.0] {
                let (a, b) = link.log_cdf_pair(eta);
                assert!(a.is_finite() && b.is_finite(), "{link} {eta}: {a} {b}");
            }
        }
    }

    #[test]
    fn monte_carlo_logit_recovers_truth() {
        // True (0.5, -1.0); the 3-SE window uses the observed information.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 50_000;
        let mut x = Vec::with_capacity(2 * n);
        let mut z = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: f64 = rng.gen_range(-2.0..2.0);
            let p = Link::Logit.cdf(0.5 - xi);
            x.extend([1.0, xi]);
            z.push(f64::from(rng.gen::<f64>() < p));
        }
        let w = vec![1.0; n];
        let f = fit(&x, 2, &z, &w, Link::Logit);
        assert!(f.converged());
        let ev = evaluate(&DesignMatrix::new(&x, 2).unwrap(), &z, &w, Link::Logit, &f.coefficients, true);
        let cov = ev.info.try_inverse().unwrap();
        for (k, truth) in [0.5, -1.0].iter().enumerate() {
            let se = cov[(k, k)].sqrt();
            assert!((f.coefficients[k] - truth).abs() < 3.0 * se, "coef {k}");
        }
    }

    #[test]
    fn score_equation_holds_with_intercept() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 2_000;
        let mut x = Vec::new();
        let mut z = Vec::new();
        let mut w = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen_range(0.0..3.0);
            let b = f64::from(rng.gen_bool(0.4));
            x.extend([1.0, a, b]);
            z.push(f64::from(rng.gen::<f64>() < Link::Logit.cdf(-1.0 + a - b)));
            w.push(rng.gen_range(0.5..2.0));
        }
        let f = fit(&x, 3, &z, &w, Link::Logit);
        let dm = DesignMatrix::new(&x, 3).unwrap();
        let wsum: f64 = w.iter().sum();
        let mean_pred = (0..n).map(|i| w[i] * f.predict(dm.row(i)).unwrap()).sum::<f64>() / wsum;
        let mean_z = z.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / wsum;
        assert!((mean_pred - mean_z).abs() < 1e-8);
    }

    #[test]
    fn rescaling_a_column_rescales_its_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 3_000;
        let mut x = Vec::new();
        let mut xs = Vec::new();
        let mut z = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen_range(-1.0..1.0);
            x.extend([1.0, a]);
            xs.extend([1.0, 7.5 * a]);
            z.push(f64::from(rng.gen::<f64>() < norm_cdf(0.2 + 0.8 * a)));
        }
        let w = vec![1.0; n];
        for link in [Link::Logit, Link::Probit] {
            let f = fit(&x, 2, &z, &w, link);
            let g = fit(&xs, 2, &z, &w, link);
            assert!((f.coefficients[1] / 7.5 - g.coefficients[1]).abs() < 1e-8);
            for i in 0..20 {
                let r = [1.0, x[2 * i + 1]];
                let rs = [1.0, xs[2 * i + 1]];
                assert!((f.predict(&r).unwrap() - g.predict(&rs).unwrap()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn integer_weights_match_replicated_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut x = Vec::new();
        let mut z = Vec::new();
        let mut w = Vec::new();
        let mut xr = Vec::new();
        let mut zr = Vec::new();
        for _ in 0..300 {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let zi = f64::from(rng.gen::<f64>() < Link::Logit.cdf(a));
            let k = rng.gen_range(1..4);
            x.extend([1.0, a]);
            z.push(zi);
            w.push(f64::from(k));
            for _ in 0..k {
                xr.extend([1.0, a]);
                zr.push(zi);
            }
        }
        let f = fit(&x, 2, &z, &w, Link::Logit);
        let g = fit(&xr, 2, &zr, &vec![1.0; zr.len()], Link::Logit);
        for (a, b) in f.coefficients.iter().zip(&g.coefficients) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn grouped_fractional_responses_match_binary_rows() {
        // Two cells; 3 of 4 successes in cell 0 and 1 of 5 in cell 1.
        let xb: Vec<f64> = (0..9).flat_map(|i| [1.0, f64::from(i >= 4)]).collect();
        let zb = [1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let fb = fit(&xb, 2, &zb, &[1.0; 9], Link::Cloglog);
        let fg = fit(&[1.0, 0.0, 1.0, 1.0], 2, &[0.75, 0.2], &[4.0, 5.0], Link::Cloglog);
        for (a, b) in fb.coefficients.iter().zip(&fg.coefficients) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((fg.predict(&[1.0, 1.0]).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn linear_probability_is_weighted_least_squares() {
        let x = [1.0, 0.0, 1.0, 1.0, 1.0, 2.0];
        let z = [0.0, 1.0, 1.0];
        let f = fit(&x, 2, &z, &[1.0, 1.0, 1.0], Link::LinearProbability);
        assert!((f.coefficients[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((f.coefficients[1] - 0.5).abs() < 1e-12);
        assert_eq!(f.predict(&[1.0, 3.0]).unwrap(), 1.0);
    }
}
