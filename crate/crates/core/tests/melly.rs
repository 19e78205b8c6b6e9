use dr_decomp::dataset::{Dataset, DesignSpec};
use dr_decomp::dgp::{CovariateLaw, DiscreteDgp, LinearQrDgp};
use dr_decomp::functionals::{quantile, variance_channels, GridCdf, QuantileMode};
use dr_decomp::melly::{fit_qr_path, melly_decompose, midpoint_tau_grid, tau_grid, unconditional_quantile, PooledDistribution, QrControl};

fn generate(dgp: &LinearQrDgp) -> (Dataset, DesignSpec) {
    let data = dgp.generate().unwrap();
    let design = data.schema().full_design().unwrap();
    (data, design)
}

#[test]
fn location_shift_has_no_residual_effect() {
    let (data, design) = generate(&LinearQrDgp::location_shift(0.15));
    let taus = tau_grid(99);
    let (v18, v22) = (data.view("18").unwrap(), data.view("22").unwrap());
    let p18 = fit_qr_path(&v18, &design, &taus, &QrControl::default()).unwrap();
    let p22 = fit_qr_path(&v22, &design, &taus, &QrControl::default()).unwrap();
    assert_eq!(p18.coefs.len(), 99);
    let r = melly_decompose((&p18, &v18), (&p22, &v22)).unwrap();
    assert!(r.telescoping_error() < 1e-10);
    for s in &r.statistics {
        assert!(r.value(s, "Residuals").unwrap().abs() < 1e-2, "{s}");
        assert!(r.value(s, "Characteristics").unwrap().abs() < 1e-9);
    }
    assert_eq!(r.flagged_levels, [0, 0]);
}

#[test]
fn identical_periods_have_no_effects() {
    let mut dgp = LinearQrDgp::heterogeneous().with_n(3_000);
    dgp.common_draws = true;
    let (data, design) = generate(&dgp);
    let taus = tau_grid(19);
    let (v18, v22) = (data.view("18").unwrap(), data.view("22").unwrap());
    let p18 = fit_qr_path(&v18, &design, &taus, &QrControl::default()).unwrap();
    let p22 = fit_qr_path(&v22, &design, &taus, &QrControl::default()).unwrap();
    let r = melly_decompose((&p18, &v18), (&p22, &v22)).unwrap();
    for row in &r.values {
        assert!(row.iter().all(|v| v.abs() < 1e-6), "{row:?}");
    }
}

#[test]
fn location_model_slopes_are_flat_and_recover_truth() {
    let mut dgp = LinearQrDgp::location_shift(0.0).with_n(20_000);
    dgp.common_draws = false;
    let (data, design) = generate(&dgp);
    let taus = [0.1, 0.25, 0.5, 0.75, 0.9];
    let v = data.view("18").unwrap();
    let path = fit_qr_path(&v, &design, &taus, &QrControl::default()).unwrap();
    let truth = dgp.true_path("18", &taus).unwrap();
    // Slope SE at n = 20,000 with error sd 0.3 is about 0.003.
    for (b, t) in path.coefs.iter().zip(&truth) {
        for k in 0..3 {
            assert!((b[k] - t[k]).abs() < 0.015, "{b:?} vs {t:?}");
        }
    }
}

#[test]
fn pooled_quantiles_match_empirical_quantiles() {
    let mut dgp = LinearQrDgp::location_shift(0.0).with_n(20_000);
    dgp.common_draws = false;
    let (data, design) = generate(&dgp);
    let v = data.view("22").unwrap();
    let path = fit_qr_path(&v, &design, &tau_grid(99), &QrControl::default()).unwrap();
    let emp = GridCdf::from_sample(&v.outcomes(), v.weights()).unwrap();
    let pooled = PooledDistribution::new(&path, &v).unwrap();
    let mut last = f64::NEG_INFINITY;
    for k in 1..10 {
        let t = k as f64 / 10.0;
        let q = pooled.quantile(t).unwrap();
        assert!(q >= last);
        last = q;
        let e = quantile(&emp, t, QuantileMode::Step).unwrap();
        assert!((q - e).abs() < 0.01, "τ = {t}: {q} vs {e}");
    }
    assert!(path.crossing_rate(&v) < 0.05);
}

#[test]
fn saturated_design_reconstructs_observed_quantiles() {
    let mut dgp = LinearQrDgp::heterogeneous().with_n(10_000);
    for per in dgp.periods.iter_mut() {
        per.covariates = vec![CovariateLaw::Bernoulli { p: 0.5 }, CovariateLaw::Bernoulli { p: 0.3 }];
    }
    let data = dgp.generate().unwrap();
    let design = data.schema().clone().saturate_dummies().unwrap().full_design().unwrap();
    assert_eq!(design.width(), 4);
    let v = data.view("18").unwrap();
    let path = fit_qr_path(&v, &design, &tau_grid(99), &QrControl::default()).unwrap();
    let emp = GridCdf::from_sample(&v.outcomes(), v.weights()).unwrap();
    for k in 1..20 {
        let t = k as f64 / 20.0;
        let q = unconditional_quantile(&path, &v, t).unwrap();
        let e = quantile(&emp, t, QuantileMode::Step).unwrap();
        assert!((q - e).abs() < 0.02, "τ = {t}: {q} vs {e}");
    }
}

#[test]
fn intercept_only_path_pools_intercepts() {
    let data = DiscreteDgp::four_cell().with_n(500).generate().unwrap();
    let v = data.view("18").unwrap();
    let design = DesignSpec::new(true, vec![], &[]).unwrap();
    let taus = tau_grid(9);
    let path = fit_qr_path(&v, &design, &taus, &QrControl::default()).unwrap();
    let b0: Vec<f64> = path.coefs.iter().map(|b| b[0]).collect();
    let e = GridCdf::from_sample(&v.outcomes(), v.weights()).unwrap();
    for (t, b) in taus.iter().zip(&b0) {
        let q = quantile(&e, *t, QuantileMode::Step).unwrap();
        assert!((b - q).abs() < 1e-6, "{t}: {b} vs {q}");
    }
    // With equal Δτ the pooled median is the middle intercept.
    let q = unconditional_quantile(&path, &v, 0.5).unwrap();
    assert!((q - b0[4]).abs() < 1e-12);
}

#[test]
fn variance_channels_add_up_to_outcome_variance() {
    let dgp = LinearQrDgp::heterogeneous().with_n(20_000);
    let (data, design) = generate(&dgp);
    let v = data.view("18").unwrap();
    let path = fit_qr_path(&v, &design, &midpoint_tau_grid(99), &QrControl::default()).unwrap();
    let rows: Vec<Vec<f64>> = v.iter().map(|(o, _)| design.row(&o.covariates)).collect();
    let (between, within) = variance_channels(&path.coefs, &rows, v.weights()).unwrap();
    let y = v.outcomes();
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let var = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64;
    assert!(((between + within) / var - 1.0).abs() < 0.04, "{between} + {within} vs {var}");
    assert!(between > 0.0 && within > between);
}

#[test]
fn grid_mismatch_is_an_error() {
    let (data, design) = generate(&LinearQrDgp::location_shift(0.0).with_n(300));
    let (v18, v22) = (data.view("18").unwrap(), data.view("22").unwrap());
    let a = fit_qr_path(&v18, &design, &tau_grid(9), &QrControl::default()).unwrap();
    let b = fit_qr_path(&v22, &design, &tau_grid(19), &QrControl::default()).unwrap();
    assert!(melly_decompose((&a, &v18), (&b, &v22)).is_err());
}
