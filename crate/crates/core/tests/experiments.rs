use aecs_core::simdevice::PRESET_NAMES;
use aecs_core::{
    load_preset, optimality_rate, run_ablation, true_optimum, verify_ordering_accuracy,
    verify_variance_reduction, CoreSelection, HeuristicParams, RateEstimate, SearchConfig,
};

#[test]
fn noiseless_devices_are_always_optimal() {
    let cfg = SearchConfig::default();
    for name in PRESET_NAMES {
        let d = load_preset(name).unwrap().noiseless();
        for p in [
            HeuristicParams::default(),
            HeuristicParams::default().without_heuristic(),
        ] {
            let r = optimality_rate(&d, &cfg, &p, 3, 1).unwrap();
            assert_eq!(r.rate, 1.0, "{name}");
        }
    }
}

#[test]
fn wilson_interval_brackets_the_rate() {
    for (k, n) in [(0, 10), (3, 10), (10, 10), (190, 200)] {
        let r = RateEstimate::new(k, n);
        assert!(r.ci_low <= r.rate && r.rate <= r.ci_high, "{r:?}");
        assert!(r.ci_low >= 0.0 && r.ci_high <= 1.0);
    }
    assert_eq!(RateEstimate::new(10, 10).ci_high, 1.0);
    assert_eq!(RateEstimate::new(0, 10).ci_low, 0.0);
}

#[test]
fn variance_ratio_endpoints_are_exact() {
    let d = load_preset("galaxya56").unwrap();
    let sel = CoreSelection::Affinity(vec![0, 2, 0]);
    let p = HeuristicParams::default();
    let r0 = verify_variance_reduction(&d, &sel, &p, 0.0, 300, 5).unwrap();
    let r1 = verify_variance_reduction(&d, &sel, &p, 1.0, 300, 5).unwrap();
    assert_eq!(r0.empirical_variance_ratio, Some(1.0));
    assert_eq!(r1.empirical_variance_ratio, Some(0.0));
    assert_eq!(r0.predicted_ratio, 1.0);
    assert!(verify_variance_reduction(&d, &sel, &p, 1.5, 300, 5).is_err());
    assert!(verify_variance_reduction(&d, &sel, &p, 0.5, 1, 5).is_err());
}

#[test]
fn ordering_check_is_reproducible() {
    let d = load_preset("v30pro").unwrap();
    let p = HeuristicParams::default();
    let a = verify_ordering_accuracy(&d, &p, 0.5, 12, 10, 3).unwrap();
    let b = verify_ordering_accuracy(&d, &p, 0.5, 12, 10, 3).unwrap();
    assert_eq!(a, b);
    assert!(a.comparisons <= 120);
}

#[test]
fn ablation_is_reproducible_and_order_independent() {
    let cfg = SearchConfig {
        repeats: 10,
        ..SearchConfig::default()
    };
    let p = HeuristicParams::default();
    let mate = load_preset("mate40pro").unwrap();
    let iphone = load_preset("iphone12").unwrap();
    let ab = run_ablation(&[mate.clone(), iphone.clone()], &cfg, &p, 12, 9).unwrap();
    let again = run_ablation(&[mate.clone(), iphone.clone()], &cfg, &p, 12, 9).unwrap();
    assert_eq!(ab.to_json(), again.to_json());
    let ba = run_ablation(&[iphone, mate], &cfg, &p, 12, 9).unwrap();
    assert_eq!(ab.rows[0], ba.rows[1]);
    assert_eq!(ab.rows[1], ba.rows[0]);
    let row = &ab.rows[0];
    assert_eq!(row.exhaustive_space, 39);
    assert_eq!(row.exhaustive_measurements, 390);
    assert_eq!(
        row.true_optimum,
        true_optimum(&load_preset("mate40pro").unwrap(), 0.08).unwrap()
    );
    assert!(ab.to_csv().lines().count() == 3);
    assert!(run_ablation(&[], &cfg, &p, 12, 9).is_err());
}

#[test]
fn heuristic_helps_on_a_performance_preset() {
    let d = load_preset("mate40pro").unwrap();
    let cfg = SearchConfig::default();
    let p = HeuristicParams::default();
    let with = optimality_rate(&d, &cfg, &p, 60, 42).unwrap();
    let without = optimality_rate(&d, &cfg, &p.without_heuristic(), 60, 42).unwrap();
    assert!(with.rate >= without.rate, "{with:?} vs {without:?}");
}
