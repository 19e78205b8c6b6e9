use dr_decomp::analysis::{analyze, AnalysisSpec};
use dr_decomp::counterfactual::{chain_specs, decomposition_sequence, fit_block_model, CounterfactualOptions, CounterfactualSpec};
use dr_decomp::dataset::{Block, Column, Dataset, FactorSchema, Observation};
use dr_decomp::dgp::DiscreteDgp;
use dr_decomp::distreg::GridSpec;
use dr_decomp::functionals::{GridCdf, GridDistribution};
use dr_decomp::glm::Link;

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn saturated_chain_matches_contingency_oracles() {
    let dgp = DiscreteDgp::four_cell().with_n(20_000);
    let data = dgp.generate().unwrap();
    let seq: Vec<String> = vec!["X1".into(), "X2".into()];
    let chain = decomposition_sequence(&data, &seq, GridSpec::AllUnique, false, &CounterfactualOptions::default()).unwrap();
    assert_eq!(chain.len(), 4);
    for cf in &chain {
        let plug = dgp.plugin_counterfactual(&data, &cf.spec, &cf.grid.values).unwrap();
        assert!(max_abs(&cf.cdf, &plug) < 1e-10, "{:?}: {}", cf.spec, max_abs(&cf.cdf, &plug));
        let exact = dgp.exact_counterfactual(&cf.spec).unwrap();
        let population = GridCdf::new(dgp.support.clone(), exact).unwrap();
        let at: Vec<f64> = cf.grid.values.iter().map(|&y| population.cdf_at(y)).collect();
        assert!(max_abs(&cf.cdf, &at) < 0.02);
    }
}

#[test]
fn observed_spec_reproduces_the_weighted_ecdf() {
    let data = DiscreteDgp::shipped().with_n(3_000).generate().unwrap();
    let chain = decomposition_sequence(&data, &["X1".into(), "X2".into(), "X3".into()], GridSpec::AllUnique, false, &CounterfactualOptions::default()).unwrap();
    for (cf, period) in [(&chain[0], "22"), (chain.last().unwrap(), "18")] {
        assert!(cf.spec.is_observed());
        let v = data.view(period).unwrap();
        let e = GridCdf::from_sample(&v.outcomes(), v.weights()).unwrap();
        let at: Vec<f64> = cf.grid.values.iter().map(|&y| e.cdf_at(y)).collect();
        assert!(max_abs(&cf.cdf, &at) < 1e-10);
        assert_eq!(*cf.cdf.last().unwrap(), 1.0);
    }
}

#[test]
fn chain_layout() {
    let schema = DiscreteDgp::shipped().schema().unwrap();
    let specs = chain_specs(&schema, "18", "22", false);
    assert_eq!(specs.len(), 5);
    assert!(specs[0].is_observed() && specs[0].structure_period == "22");
    assert_eq!(specs[1].block_periods[0].1, "18");
    assert_eq!(specs[1].block_periods[1].1, "22");
    assert_eq!(specs[3].structure_period, "22");
    assert!(specs[3].block_periods.iter().all(|(_, p)| p == "18"));
    assert!(specs[4].is_observed() && specs[4].structure_period == "18");
    let first = chain_specs(&schema, "18", "22", true);
    assert_eq!(first[1].structure_period, "18");
    assert!(first[1].block_periods.iter().all(|(_, p)| p == "22"));
}

/// Both periods share one covariate table in which the three dummies are
/// exactly independent, so no covariate swap can move the distribution.
fn balanced_independent() -> Dataset {
    let schema = FactorSchema::new(
        vec![Column::dummy("a"), Column::dummy("b"), Column::dummy("c")],
        vec![Block::new("A", &["a"]), Block::new("B", &["b"]), Block::new("C", &["c"])],
    )
    .unwrap()
    .saturate_dummies()
    .unwrap();
    let mut rows = Vec::new();
    for (period, shift) in [("18", 0.0), ("22", 0.3)] {
        for a in 0..2u32 {
            for b in 0..2u32 {
                for c in 0..2u32 {
                    // Cell counts factor as f(a)·g(b)·h(c).
                    let count = [2u32, 1][a as usize] * [1u32, 3][b as usize] * 5;
                    for k in 0..count {
                        let y = 7.0 + 0.2 * f64::from(a) + 0.1 * f64::from(b) + 0.05 * f64::from(c) + 0.03 * f64::from(k % 7) + shift * f64::from(k % 3) / 2.0;
                        rows.push(Observation {
                            outcome: (y * 100.0).round() / 100.0,
                            covariates: vec![f64::from(a), f64::from(b), f64::from(c)],
                            weight: 1.0,
                            period: period.into(),
                        });
                    }
                }
            }
        }
    }
    Dataset::new(schema, rows, None).unwrap()
}

#[test]
fn independence_null_effects_do_not_depend_on_sequence() {
    let data = balanced_independent();
    let run = |seq: &[&str]| {
        let spec = AnalysisSpec {
            sequence: Some(seq.iter().map(|s| s.to_string()).collect()),
            grid: GridSpec::AllUnique,
            ..Default::default()
        };
        analyze(&data, spec).unwrap().report
    };
    let r1 = run(&["A", "B", "C"]);
    let r2 = run(&["C", "A", "B"]);
    for s in &r1.statistics {
        for b in ["A", "B", "C", "Structure"] {
            let (x, y) = (r1.value(s, b).unwrap(), r2.value(s, b).unwrap());
            assert!((x - y).abs() < 1e-8, "{s} {b}: {x} vs {y}");
        }
        for b in ["A", "B", "C"] {
            assert!(r1.value(s, b).unwrap().abs() < 1e-8);
        }
    }
}

#[test]
fn single_dummy_block_without_later_blocks_is_the_marginal() {
    let data = DiscreteDgp::four_cell().with_n(2_000).generate().unwrap();
    let schema = data.schema().reordered(&["X2".into(), "X1".into()]).unwrap();
    // Last block is modeled only when asked directly: its law has no
    // conditioning columns beyond the intercept.
    let view = data.view("18").unwrap();
    let m = fit_block_model(&view, &schema, 1, &CounterfactualOptions::default()).unwrap();
    let (law, pooled) = m.conditional_law(&[0.0, 0.0]).unwrap();
    assert!(!pooled);
    let share: f64 = view.iter().filter(|(o, _)| o.covariates[0] == 1.0).map(|(_, w)| w).sum::<f64>() / view.total_weight();
    let p1 = law.iter().find(|(v, _)| v[0] == 1.0).unwrap().1;
    assert!((p1 - share).abs() < 1e-10);
    assert!((law.iter().map(|l| l.1).sum::<f64>() - 1.0).abs() < 1e-14);
}

#[test]
fn continuous_block_law_is_a_proper_distribution() {
    let schema = FactorSchema::new(
        vec![Column::continuous("assets"), Column::dummy("d")],
        vec![Block::new("Assets", &["assets"]), Block::new("D", &["d"])],
    )
    .unwrap();
    let mut rows = Vec::new();
    for i in 0..1_500u32 {
        for period in ["18", "22"] {
            let d = f64::from(i % 3 == 0);
            let a = 1.0 + d + f64::from((i * 7919) % 101) / 50.0;
            rows.push(Observation {
                outcome: 7.5 + 0.2 * a + f64::from((i * 31) % 17) / 40.0,
                covariates: vec![a, d],
                weight: 1.0 + f64::from(i % 4) / 4.0,
                period: period.into(),
            });
        }
    }
    let data = Dataset::new(schema.clone(), rows, None).unwrap();
    let view = data.view("18").unwrap();
    let m = fit_block_model(&view, &schema, 0, &CounterfactualOptions { link: Link::Logit, ..Default::default() }).unwrap();
    for (o, _) in view.iter().take(50) {
        let (law, _) = m.conditional_law(&o.covariates).unwrap();
        assert!(law.iter().all(|(_, p)| *p > 0.0));
        assert!((law.iter().map(|l| l.1).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(law.windows(2).all(|w| w[0].0[0] < w[1].0[0]));
    }
    let chain = decomposition_sequence(&data, &["Assets".into(), "D".into()], GridSpec::default(), false, &CounterfactualOptions::default()).unwrap();
    for cf in &chain {
        assert!(cf.cdf.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn missing_block_model_is_an_error() {
    let dgp = DiscreteDgp::four_cell().with_n(1_000);
    let data = dgp.generate().unwrap();
    let schema = data.schema();
    let spec = CounterfactualSpec::new("22", vec![("X1".into(), "18".into()), ("X2".into(), "22".into())]);
    let design = schema.full_design().unwrap();
    let v = data.view("22").unwrap();
    let m = dr_decomp::distreg::fit_distribution_regression_with_spec(&v, &design, GridSpec::AllUnique, Link::Logit, &Default::default()).unwrap();
    let r = dr_decomp::counterfactual::counterfactual_cdf(&spec, schema, &m, &[], &data.sample(), &CounterfactualOptions::default());
    assert!(r.is_err());
}

#[test]
fn unseen_conditioning_pattern_is_pooled() {
    // Period 18 never has x2 = 1, so X1 | X2 = 1 must be pooled.
    let schema = FactorSchema::new(vec![Column::dummy("x1"), Column::dummy("x2")], vec![Block::new("X1", &["x1"]), Block::new("X2", &["x2"])])
        .unwrap()
        .saturate_dummies()
        .unwrap();
    let mut rows = Vec::new();
    for i in 0..400u32 {
        let x1 = f64::from(i % 4 == 0);
        rows.push(Observation { outcome: 7.0 + f64::from(i % 5) / 10.0 + x1 / 5.0, covariates: vec![x1, 0.0], weight: 1.0, period: "18".into() });
        let x2 = f64::from(i % 2);
        rows.push(Observation { outcome: 7.1 + f64::from(i % 5) / 10.0, covariates: vec![f64::from(i % 3 == 0), x2], weight: 1.0, period: "22".into() });
    }
    let data = Dataset::new(schema, rows, None).unwrap();
    let chain = decomposition_sequence(&data, &["X1".into(), "X2".into()], GridSpec::AllUnique, false, &CounterfactualOptions::default()).unwrap();
    assert!(chain[1].pooled_nodes > 0);
    assert!(chain[1].cdf.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn leaf_budget_is_enforced() {
    let dgp = DiscreteDgp::shipped().with_n(500);
    let data = dgp.generate().unwrap();
    let opts = CounterfactualOptions { max_leaves_per_row: 1, ..Default::default() };
    let r = decomposition_sequence(&data, &["X1".into(), "X2".into(), "X3".into()], GridSpec::AllUnique, false, &opts);
    assert!(matches!(r, Err(dr_decomp::Error::Budget { .. })));
}
