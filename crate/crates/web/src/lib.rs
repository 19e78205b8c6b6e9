//! Browser bindings. Each export takes plain numbers or arrays and returns a
//! JSON string for the page to draw.

use dr_decomp::analysis::{analyze, AnalysisSpec};
use dr_decomp::dgp::{DiscreteDgp, LinearQrDgp};
use dr_decomp::functionals::{format_report_table, gini, lorenz, moments, GridCdf, GridDistribution};
use dr_decomp::melly::{fit_qr_path, melly_decompose, tau_grid, QrControl};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

fn text<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct DecomposeView {
    table: String,
    report: dr_decomp::functionals::DecompositionReport,
    qe: Vec<dr_decomp::functionals::Curve>,
}

/// Simulated three-block decomposition with the given block order
/// (comma separated, e.g. `"X2,X1,X3"`) and link.
pub fn decompose_json(n: usize, seed: u64, link: &str, sequence: &str, structure_first: bool) -> Result<String, String> {
    if !(50..=20_000).contains(&n) {
        return Err(format!("rows per period must lie in 50..=20000, got {n}"));
    }
    let data = DiscreteDgp::shipped().with_n(n).with_seed(seed).generate().map_err(text)?;
    let mut spec = AnalysisSpec { structure_first, ..Default::default() };
    spec.counterfactual.link = link.parse().map_err(text)?;
    let seq: Vec<String> = sequence.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if !seq.is_empty() {
        spec.sequence = Some(seq);
    }
    let out = analyze(&data, spec).map_err(text)?;
    let view = DecomposeView { table: format_report_table(&out.report, 2), report: out.report, qe: out.curves.qe };
    serde_json::to_string(&view).map_err(text)
}

#[derive(Serialize)]
struct LorenzView {
    gini: f64,
    mean: f64,
    sd: f64,
    /// Cumulative population share at each distinct value.
    population: Vec<f64>,
    /// Cumulative income share at the same points.
    lorenz: Vec<f64>,
}

/// Lorenz curve and Gini coefficient of a weighted sample of positive values.
/// An empty `weights` means equal weights.
pub fn lorenz_json(values: &[f64], weights: &[f64]) -> Result<String, String> {
    let w: Vec<f64> = if weights.is_empty() { vec![1.0; values.len()] } else { weights.to_vec() };
    if w.len() != values.len() {
        return Err(format!("{} values but {} weights", values.len(), w.len()));
    }
    let dist = GridCdf::from_sample(values, &w).map_err(text)?;
    let (mean, sd) = moments(&dist).map_err(text)?;
    let view = LorenzView {
        gini: gini(&dist).map_err(text)?,
        mean,
        sd,
        population: dist.cdf().to_vec(),
        lorenz: lorenz(&dist).map_err(text)?,
    };
    serde_json::to_string(&view).map_err(text)
}

#[derive(Serialize)]
struct MellyView {
    table: String,
    report: dr_decomp::melly::MellyReport,
}

/// Quantile-regression decomposition of a simulated intercept shift
/// (`heterogeneous = false`) or of rank-varying slopes.
pub fn melly_json(n: usize, seed: u64, shift: f64, levels: usize, heterogeneous: bool) -> Result<String, String> {
    if !(100..=20_000).contains(&n) {
        return Err(format!("rows per period must lie in 100..=20000, got {n}"));
    }
    if !(3..=199).contains(&levels) {
        return Err(format!("levels must lie in 3..=199, got {levels}"));
    }
    let dgp = if heterogeneous { LinearQrDgp::heterogeneous() } else { LinearQrDgp::location_shift(shift) };
    let data = dgp.with_n(n).with_seed(seed).generate().map_err(text)?;
    let design = data.schema().full_design().map_err(text)?;
    let taus = tau_grid(levels);
    let [a, b] = data.periods().clone();
    let (va, vb) = (data.view(&a).map_err(text)?, data.view(&b).map_err(text)?);
    let ctrl = QrControl::default();
    let pa = fit_qr_path(&va, &design, &taus, &ctrl).map_err(text)?;
    let pb = fit_qr_path(&vb, &design, &taus, &ctrl).map_err(text)?;
    let report = melly_decompose((&pa, &va), (&pb, &vb)).map_err(text)?;
    let view = MellyView { table: format_report_table(&report.as_report(), 3), report };
    serde_json::to_string(&view).map_err(text)
}

#[wasm_bindgen]
pub fn decompose(n: usize, seed: u64, link: &str, sequence: &str, structure_first: bool) -> Result<String, JsError> {
    to_js(decompose_json(n, seed, link, sequence, structure_first))
}

#[wasm_bindgen]
pub fn lorenz_gini(values: &[f64], weights: &[f64]) -> Result<String, JsError> {
    to_js(lorenz_json(values, weights))
}

#[wasm_bindgen]
pub fn melly(n: usize, seed: u64, shift: f64, levels: usize, heterogeneous: bool) -> Result<String, JsError> {
    to_js(melly_json(n, seed, shift, levels, heterogeneous))
}
