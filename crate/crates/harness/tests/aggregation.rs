use mavic_harness::aggregate::{aggregate, aggregate_default};
use mavic_harness::experiment::{aggregate_rows, Evaluation, SeedResult};
use mavic_learner::{BaseStats, ComplianceStats, Mode};
use proptest::prelude::*;

#[test]
fn identical_values_have_zero_spread() {
    let a = aggregate_default(&[3.25; 5], 7).unwrap();
    assert_eq!(a.mean, 3.25);
    assert_eq!(a.std, 0.0);
    assert_eq!(a.ci, Some((3.25, 3.25)));
}

#[test]
fn one_to_five() {
    let a = aggregate_default(&[1.0, 2.0, 3.0, 4.0, 5.0], 0).unwrap();
    assert_eq!(a.n, 5);
    assert!((a.mean - 3.0).abs() < 1e-12);
    // Sum of squared deviations is 10 over 4 degrees of freedom.
    assert!((a.std - 2.5f64.sqrt()).abs() < 1e-12);
    assert!((a.std - 1.5811).abs() < 1e-4);
    let (lo, hi) = a.ci.unwrap();
    assert!(1.0 <= lo && lo < 3.0 && 3.0 < hi && hi <= 5.0, "{lo} {hi}");
}

#[test]
fn fixed_seed_is_bit_reproducible() {
    let values = [0.3, 0.9, 0.1, 0.75, 0.42];
    let a = aggregate_default(&values, 11).unwrap();
    let b = aggregate_default(&values, 11).unwrap();
    let (a_lo, a_hi) = a.ci.unwrap();
    let (b_lo, b_hi) = b.ci.unwrap();
    assert_eq!(a_lo.to_bits(), b_lo.to_bits());
    assert_eq!(a_hi.to_bits(), b_hi.to_bits());
    assert_eq!(a.std.to_bits(), b.std.to_bits());
}

#[test]
fn fewer_than_two_values_have_no_interval() {
    assert!(aggregate_default(&[], 0).is_none());
    let a = aggregate_default(&[2.0], 0).unwrap();
    assert_eq!(a.ci, None);
}

fn seed_result(mode: Mode, seed: u64, base: f64, compliance: Option<f64>) -> SeedResult {
    SeedResult {
        env: "chain".into(),
        mode,
        seed,
        train_seconds: 0.0,
        evaluation: Evaluation {
            base: BaseStats {
                episodes: 1,
                mean: base,
                std: 0.0,
                discounted_mean: base,
                discounted_std: 0.0,
            },
            compliance: ComplianceStats {
                episodes: 1,
                records: Vec::new(),
                compliance,
                live_base_mean: 0.0,
                live_reward_mean: 0.0,
            },
            histograms: Vec::new(),
        },
    }
}

#[test]
fn rows_group_by_mode_and_skip_missing_compliance() {
    let results = vec![
        seed_result(Mode::Mavic, 0, 10.0, Some(1.0)),
        seed_result(Mode::Mavic, 1, 8.0, Some(0.5)),
        seed_result(Mode::Naive, 0, 5.0, None),
        seed_result(Mode::Naive, 1, 5.0, Some(0.0)),
    ];
    let rows = aggregate_rows(&results, 1000, 0);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].mode, Mode::Mavic);
    assert_eq!(rows[0].base.mean, 9.0);
    assert_eq!(rows[0].compliance.unwrap().mean, 0.75);
    assert_eq!(rows[1].n_seeds, 2);
    assert_eq!(rows[1].compliance.unwrap().n, 1);
}

proptest! {
    #[test]
    fn aggregation_ignores_seed_order(values in prop::collection::vec(-100.0f64..100.0, 2..8), rotate in 0usize..8, seed in 0u64..1000) {
        let mut shuffled = values.clone();
        let k = rotate % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = aggregate(&values, 500, 0.95, seed).unwrap();
        let b = aggregate(&shuffled, 500, 0.95, seed).unwrap();
        prop_assert_eq!(a, b);
        let (lo, hi) = a.ci.unwrap();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min - 1e-9 <= lo && lo <= hi && hi <= max + 1e-9);
    }
}
