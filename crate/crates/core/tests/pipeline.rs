//! End-to-end checks through the public API only.

use nestattr::{
    build_aggregation_matrix, bu_lime, consistency_residual, lime_from_sets, make_linear_oracle, make_mil_oracle,
    perturb_two_level, solve_c2fa, solve_kkt_oracle, td_lime, CoeffSpec, GroundTruth, NestedShape, SolverConfig,
    WeightSpec,
};
use proptest::prelude::*;

fn tight() -> SolverConfig {
    SolverConfig {
        eps1: 1e-12,
        eps2: 1e-12,
        max_iters: 200_000,
        ..SolverConfig::default()
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn c2fa_matches_kkt_on_mil_oracle() {
    let shape = NestedShape::new(vec![4, 3, 5]).unwrap();
    let m = build_aggregation_matrix(&shape);
    let oracle = make_mil_oracle(&shape, &[1], 0.2, 11).unwrap();
    let (high, low) = perturb_two_level(&oracle, 40, 80, WeightSpec::Cosine, 3).unwrap();
    let cfg = tight();
    let (pair, trace) = solve_c2fa(&high, &low, &m, &cfg).unwrap();
    let kkt = solve_kkt_oracle(&high, &low, &m, cfg.lambda_high, cfg.lambda_low).unwrap();
    assert!(!trace.is_empty());
    assert!(max_abs_diff(&pair.hifa, &kkt.hifa) < 1e-4);
    assert!(max_abs_diff(&pair.lofa, &kkt.lofa) < 1e-4);
    assert!(consistency_residual(&pair, &m).unwrap() < cfg.eps2);
}

#[test]
fn baselines_are_consistent_and_lime_is_not() {
    let shape = NestedShape::uniform(4, 3).unwrap();
    let m = build_aggregation_matrix(&shape);
    let oracle = make_mil_oracle(&shape, &[2], 0.2, 5).unwrap();
    let (high, low) = perturb_two_level(&oracle, 20, 30, WeightSpec::Cosine, 8).unwrap();
    let lime = lime_from_sets(&high, &low, 0.1, 0.1).unwrap();
    assert!(consistency_residual(&lime, &m).unwrap() > 1e-6);
    let bu = bu_lime(&lime.lofa, &m).unwrap();
    assert_eq!(consistency_residual(&bu, &m).unwrap(), 0.0);
    let td = td_lime(&lime.hifa, &shape, 9).unwrap();
    assert!(consistency_residual(&td, &m).unwrap() < 1e-12);
}

#[test]
fn noiseless_linear_oracle_is_recovered() {
    let shape = NestedShape::new(vec![2, 3, 2]).unwrap();
    let m = build_aggregation_matrix(&shape);
    let coeffs = vec![0.2, 0.05, 0.15, 0.05, 0.0, 0.1, 0.25];
    let oracle = make_linear_oracle(&shape, &CoeffSpec::Explicit(coeffs), 0.0, 0).unwrap();
    let (high, low) = perturb_two_level(&oracle, 200, 400, WeightSpec::Cosine, 1).unwrap();
    let cfg = SolverConfig {
        lambda_high: 1e-8,
        lambda_low: 1e-8,
        eps1: 1e-14,
        eps2: 1e-14,
        max_iters: 500_000,
        ..SolverConfig::default()
    };
    let (pair, _) = solve_c2fa(&high, &low, &m, &cfg).unwrap();
    let truth = oracle.ground_truth();
    assert!(max_abs_diff(&pair.hifa, &truth.hifa) < 1e-5);
    assert!(max_abs_diff(&pair.lofa, &truth.lofa) < 1e-5);
}

#[test]
fn mil_labels_mark_positive_group() {
    let shape = NestedShape::uniform(5, 6).unwrap();
    let oracle = make_mil_oracle(&shape, &[0, 3], 0.2, 2).unwrap();
    assert_eq!(oracle.instance_labels(), vec![true, false, false, true, false]);
    let low = oracle.low_labels();
    assert_eq!(low.len(), 30);
    for (d, &key) in low.iter().enumerate() {
        if key {
            assert!(shape.group_of(d) == 0 || shape.group_of(d) == 3);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn c2fa_output_is_consistent(sizes in prop::collection::vec(1usize..4, 2..5), seed in 0u64..1_000) {
        let shape = NestedShape::new(sizes).unwrap();
        let m = build_aggregation_matrix(&shape);
        let oracle = make_mil_oracle(&shape, &[0], 0.2, seed).unwrap();
        let p = shape.n_groups() + shape.n_low();
        let (high, low) = perturb_two_level(&oracle, 4 * p, 6 * p, WeightSpec::Cosine, seed).unwrap();
        let cfg = SolverConfig::default();
        let (pair, _) = solve_c2fa(&high, &low, &m, &cfg).unwrap();
        prop_assert!(pair.is_finite());
        prop_assert!(consistency_residual(&pair, &m).unwrap() <= cfg.eps2);
    }

    #[test]
    fn perturbation_is_seed_deterministic(seed in any::<u64>()) {
        let shape = NestedShape::uniform(3, 2).unwrap();
        let oracle = make_mil_oracle(&shape, &[1], 0.2, 0).unwrap();
        let a = perturb_two_level(&oracle, 10, 10, WeightSpec::Cosine, seed).unwrap();
        let b = perturb_two_level(&oracle, 10, 10, WeightSpec::Cosine, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
