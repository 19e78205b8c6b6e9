use dr_decomp::prep::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn published_basket_ratios() {
    let r18 = basket_cpi_ratio(&[(241.441, 1.0)], 252.052).unwrap();
    let r22 = basket_cpi_ratio(&[(294.775, 1.0)], 297.507).unwrap();
    assert_eq!(format!("{r18:.3}"), "0.958");
    assert_eq!(format!("{r22:.3}"), "0.991");
}

#[test]
fn published_deflation() {
    let real = deflate(7.861676, 251.1).unwrap();
    assert_eq!(format!("{real:.4}"), "3.1309");
    // The published real value implies an unrounded index of about 251.107.
    assert_eq!(format!("{:.3}", 3.130807), format!("{real:.3}"));
}

#[test]
fn switching_indices_shifts_logs_uniformly() {
    let shift = (1.165f64 / 1.117).ln();
    assert!((shift - 0.042).abs() < 5e-4);
    for c in [1.0, 7.3, 250.0] {
        let a = deflate(c, 116.5).unwrap().ln();
        let b = deflate(c, 111.7).unwrap().ln();
        assert!((b - a - shift).abs() < 1e-12);
    }
}

#[test]
fn imputed_vehicle_values_are_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.4).unwrap();
    let cfg = ImputationConfig { rate: 0.06, annual_depreciation: 0.12, retransformation: Retransformation::Smearing };
    let mut recs = Vec::new();
    let mut truth = Vec::new();
    for i in 0..20_000 {
        let c: Vec<f64> = vec![rng.gen_range(0.0..2.0), f64::from(rng.gen_bool(0.4))];
        let price = (2.5 + 0.3 * c[0] - 0.2 * c[1] + noise.sample(&mut rng)).exp();
        let years = f64::from(rng.gen_range(0..8u32));
        truth.push(price * 0.88f64.powf(years));
        recs.push(VehicleRecord { price: (i % 3 != 0).then_some(price), years_owned: years, characteristics: c, weight: 1.0 });
    }
    let flows = impute_vehicle_flow(&recs, &cfg).unwrap();
    let (mut imputed, mut actual) = (0.0, 0.0);
    for (k, f) in flows.iter().enumerate() {
        if f.branch == VehicleBranch::ImputedPrice {
            imputed += f.value;
            actual += truth[k];
        } else if f.branch == VehicleBranch::RecentPrice {
            assert_eq!(f.value, recs[k].price.unwrap());
        } else {
            assert!((f.value - truth[k]).abs() < 1e-9 * truth[k]);
        }
        assert!((f.flow - 0.06 * f.value).abs() < 1e-12 * f.value);
    }
    assert!((imputed / actual - 1.0).abs() < 0.02, "{}", imputed / actual);
}

#[test]
fn imputed_rents_recover_the_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut recs = Vec::new();
    let mut truth = Vec::new();
    for i in 0..10_000 {
        let c: Vec<f64> = vec![rng.gen_range(1.0..6.0)];
        let rent = (0.2 + 0.1 * c[0] + noise.sample(&mut rng)).exp();
        let renter = i % 2 == 0;
        truth.push(3.0 * rent);
        recs.push(HousingRecord { reported_quarterly: None, monthly_rent: renter.then_some(rent), characteristics: c, weight: 1.0 });
    }
    let q = impute_rental_equivalent(&recs, Retransformation::Smearing).unwrap();
    let owners: Vec<usize> = (0..recs.len()).filter(|i| i % 2 == 1).collect();
    let est: f64 = owners.iter().map(|&i| q[i]).sum();
    let tru: f64 = owners.iter().map(|&i| truth[i]).sum();
    assert!((est / tru - 1.0).abs() < 0.02, "{}", est / tru);
    let empty = vec![HousingRecord { reported_quarterly: None, monthly_rent: None, characteristics: vec![1.0], weight: 1.0 }];
    assert!(impute_rental_equivalent(&empty, Retransformation::Exp).is_err());
}

#[test]
fn perfect_instrument_recovers_slope() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.2).unwrap();
    let x: Vec<f64> = (0..5_000).map(|_| rng.gen_range(8.0..11.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| 0.9 * v + noise.sample(&mut rng)).collect();
    let w = vec![1.0; x.len()];
    let e = iv_elasticity(&y, &x, &x, &w, 0.05).unwrap();
    assert!((e.coef - 0.9).abs() < 3.0 * e.se, "{e:?}");
    assert!(e.n < x.len() && e.n > 4_400);
    assert!(!e.weak_instrument);
}

#[test]
fn instrument_removes_endogeneity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let (mut y, mut x, mut z) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..20_000 {
        let zi: f64 = n01.sample(&mut rng);
        let u: f64 = n01.sample(&mut rng);
        let xi = 0.8 * zi + 0.6 * u + 0.3 * n01.sample(&mut rng);
        y.push(0.9 * xi + 0.5 * u);
        x.push(xi);
        z.push(zi);
    }
    let w: Vec<f64> = (0..y.len()).map(|i| 1.0 + (i % 4) as f64).collect();
    let e = iv_elasticity(&y, &x, &z, &w, 0.0).unwrap();
    assert!((e.coef - 0.9).abs() < 3.0 * e.se, "{e:?}");
    let ols = iv_elasticity(&y, &x, &x, &w, 0.0).unwrap();
    assert!(ols.coef - 0.9 > 10.0 * ols.se);
}

#[test]
fn weak_instrument_is_flagged() {
    let x: Vec<f64> = (0..200).map(|i| f64::from(i % 17)).collect();
    let z: Vec<f64> = (0..200).map(|i| f64::from((i * 7919) % 13) + if i % 17 == 0 { 0.01 } else { 0.0 }).collect();
    let w = vec![1.0; 200];
    if let Ok(e) = iv_elasticity(&x, &x, &z, &w, 0.0) {
        assert_eq!(e.weak_instrument, e.first_stage_f < 1.0);
    }
}

proptest! {
    #[test]
    fn deflate_then_log(c in 1e-3f64..1e6, i in 1.0f64..1e3) {
        let r = deflate(c, i).unwrap();
        prop_assert!((r.ln() - (c.ln() - (i / 100.0).ln())).abs() < 1e-12);
    }

    #[test]
    fn vehicle_branches_partition(price in proptest::option::of(1.0f64..50.0), years in 0.0f64..15.0) {
        let r = VehicleRecord { price, years_owned: years, characteristics: vec![], weight: 1.0 };
        let b = r.branch();
        let expected = match (price.is_some(), years <= 1.0) {
            (true, true) => VehicleBranch::RecentPrice,
            (true, false) => VehicleBranch::DepreciatedPrice,
            (false, _) => VehicleBranch::ImputedPrice,
        };
        prop_assert_eq!(b, expected);
    }

    #[test]
    fn larger_households_never_gain(a in 1u32..8, k in 0u32..8, c in 0.1f64..100.0) {
        for s in [EquivalenceScale::SquareRoot, EquivalenceScale::PerCapita, EquivalenceScale::OecdModified] {
            let base = equivalence_scale(c, a, k, s).unwrap();
            prop_assert!(equivalence_scale(c, a + 1, k, s).unwrap() <= base);
            prop_assert!(equivalence_scale(c, a, k + 1, s).unwrap() <= base);
        }
    }
}
