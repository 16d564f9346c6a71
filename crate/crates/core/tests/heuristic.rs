use aecs_core::heuristic::{blend, ObjectiveScale};
use aecs_core::topology::Cluster;
use aecs_core::{
    capacity_factor, enumerate_selections, heuristic_energy, load_preset, power_heuristic,
    CoreSelection, CoreType, CpuTopology, HeuristicParams, MeasurementSample, SelectionMode,
};
use proptest::prelude::*;

fn arb_topology() -> impl Strategy<Value = CpuTopology> {
    prop::collection::vec((1u32..=4, 0.8f64..4.5), 1..=4).prop_map(|spec| {
        let n = spec.len();
        let clusters = spec
            .into_iter()
            .enumerate()
            .map(|(i, (cores, f))| Cluster {
                core_count: cores,
                max_freq_ghz: f,
                capacity: f,
                core_type: match i {
                    0 => CoreType::Prime,
                    _ if i + 1 == n => CoreType::Efficient,
                    _ => CoreType::Performance,
                },
            })
            .collect();
        CpuTopology::new("random", clusters, SelectionMode::Affinity).unwrap()
    })
}

fn arb_params() -> impl Strategy<Value = HeuristicParams> {
    (
        10.0f64..300.0,
        0.0f64..200.0,
        0.0f64..200.0,
        0.05f64..1.0,
        0.0f64..3000.0,
    )
        .prop_map(|(e, dm, dp, b, ps)| HeuristicParams {
            a_efficient: e,
            a_performance: e + dm,
            a_prime: e + dm + dp,
            b,
            static_power: ps,
            ..Default::default()
        })
}

fn counts(s: &CoreSelection) -> Vec<u32> {
    match s {
        CoreSelection::Affinity(c) => c.clone(),
        CoreSelection::Threads(_) => unreachable!(),
    }
}

fn sample_for(speed: f64, energy_mj: f64) -> MeasurementSample {
    let tokens = 50;
    let elapsed = f64::from(tokens) / speed;
    MeasurementSample {
        tokens,
        speed_tps: speed,
        elapsed_s: elapsed,
        energy_mj_per_tok: energy_mj,
        avg_power_w: energy_mj * f64::from(tokens) / 1000.0 / elapsed,
    }
}

proptest! {
    // Dropping a core from a cluster other than the biggest selected one
    // keeps s_I fixed, so only that core's active term turns idle.
    #[test]
    fn removing_a_core_has_closed_form_delta(
        t in arb_topology(),
        p in arb_params(),
        pick in any::<prop::sample::Index>(),
    ) {
        let all = enumerate_selections(&t);
        let sel = pick.get(&all);
        let c = counts(sel);
        let s = capacity_factor(sel, &t).unwrap();
        let h = power_heuristic(sel, &t, &p).unwrap();
        let biggest = c.iter().position(|&n| n > 0).unwrap();
        for i in 0..c.len() {
            if c[i] == 0 || (i == biggest && c[i] == 1) {
                continue;
            }
            let mut smaller = c.clone();
            smaller[i] -= 1;
            let smaller = CoreSelection::Affinity(smaller);
            prop_assert_eq!(capacity_factor(&smaller, &t).unwrap(), s);
            let cl = &t.clusters()[i];
            let f = cl.max_freq_ghz * s;
            let want = p.factor(cl.core_type) * (1.0 - p.b) * f * f;
            let got = h - power_heuristic(&smaller, &t, &p).unwrap();
            prop_assert!((got - want).abs() <= 1e-9 * h.max(1.0), "{} vs {}", got, want);
        }
    }

    #[test]
    fn heuristic_increases_with_each_factor(
        t in arb_topology(),
        p in arb_params(),
        pick in any::<prop::sample::Index>(),
        bump in 1.0f64..50.0,
    ) {
        let all = enumerate_selections(&t);
        let sel = pick.get(&all);
        let h = power_heuristic(sel, &t, &p).unwrap();
        // power_heuristic does not require the factor ordering, so each
        // factor can be raised on its own
        for c in t.clusters() {
            let mut q = p;
            match c.core_type {
                CoreType::Prime => q.a_prime += bump,
                CoreType::Performance => q.a_performance += bump,
                CoreType::Efficient => q.a_efficient += bump,
            }
            prop_assert!(power_heuristic(sel, &t, &q).unwrap() > h);
        }
        let q = HeuristicParams { static_power: p.static_power + bump, ..p };
        prop_assert!(power_heuristic(sel, &t, &q).unwrap() > h);
    }

    // Same counts, higher s_I: raise the capacity of the biggest selected
    // cluster relative to cluster 0.
    #[test]
    fn heuristic_increases_with_capacity_factor(
        freqs in prop::collection::vec(1.0f64..4.0, 2),
        cores in 1u32..=3,
        p in arb_params(),
    ) {
        let mut freqs = freqs;
        freqs.sort_by(|a, b| b.total_cmp(a));
        let make = |cap1: f64| {
            let clusters = freqs
                .iter()
                .enumerate()
                .map(|(i, &f)| Cluster {
                    core_count: cores,
                    max_freq_ghz: f,
                    capacity: if i == 1 { cap1 } else { f },
                    core_type: if i == 0 { CoreType::Prime } else { CoreType::Performance },
                })
                .collect();
            CpuTopology::new("cap", clusters, SelectionMode::Affinity).unwrap()
        };
        let mut sel = vec![0; freqs.len()];
        sel[1] = 1;
        let sel = CoreSelection::Affinity(sel);
        let lo = make(freqs[0] * 0.5);
        let hi = make(freqs[0] * 0.9);
        prop_assert!(capacity_factor(&sel, &hi).unwrap() > capacity_factor(&sel, &lo).unwrap());
        prop_assert!(power_heuristic(&sel, &hi, &p).unwrap() > power_heuristic(&sel, &lo, &p).unwrap());
    }

    #[test]
    fn scaling_factors_preserves_heuristic_time_argmin(
        t in arb_topology(),
        p in arb_params(),
        k in 0.01f64..100.0,
        speeds in prop::collection::vec(5.0f64..30.0, 80),
    ) {
        let all = enumerate_selections(&t);
        let scaled = HeuristicParams {
            a_efficient: p.a_efficient * k,
            a_performance: p.a_performance * k,
            a_prime: p.a_prime * k,
            static_power: p.static_power * k,
            ..p
        };
        let argmin = |q: &HeuristicParams| {
            all.iter()
                .enumerate()
                .map(|(i, s)| (i, power_heuristic(s, &t, q).unwrap() / speeds[i % speeds.len()]))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0
        };
        prop_assert_eq!(argmin(&p), argmin(&scaled));
    }

    #[test]
    fn degenerate_alpha_argmins(
        t in arb_topology(),
        samples in prop::collection::vec((5.0f64..30.0, 100.0f64..900.0), 80),
    ) {
        let all = enumerate_selections(&t);
        let p0 = HeuristicParams { alpha: 0.0, ..Default::default() };
        let p1 = HeuristicParams { alpha: 1.0, ..Default::default() };
        let argmin = |f: &dyn Fn(usize) -> f64| {
            (0..all.len()).min_by(|&a, &b| f(a).total_cmp(&f(b))).unwrap()
        };
        let sample = |i: usize| {
            let (s, e) = samples[i % samples.len()];
            sample_for(s, e)
        };
        let by_blend0 = argmin(&|i| heuristic_energy(&sample(i), &all[i], &t, &p0).unwrap());
        let by_energy = argmin(&|i| sample(i).run_energy_j());
        prop_assert_eq!(by_blend0, by_energy);
        let by_blend1 = argmin(&|i| heuristic_energy(&sample(i), &all[i], &t, &p1).unwrap());
        let by_ht = argmin(&|i| power_heuristic(&all[i], &t, &p1).unwrap() * sample(i).elapsed_s);
        prop_assert_eq!(by_blend1, by_ht);
    }

    // Root normalization divides each term by a positive constant, so with
    // one term switched off the ranking is unchanged.
    #[test]
    fn normalized_blend_keeps_single_term_ranking(
        e in prop::collection::vec(0.1f64..100.0, 2..20),
        ht in prop::collection::vec(0.1f64..1e5, 2..20),
        re in 0.1f64..100.0,
        rh in 0.1f64..1e5,
    ) {
        let n = e.len().min(ht.len());
        let scale = ObjectiveScale::from_reference(re, rh);
        for alpha in [0.0, 1.0] {
            for i in 0..n {
                for j in 0..n {
                    let raw = blend(alpha, e[i], ht[i]) < blend(alpha, e[j], ht[j]);
                    let norm = scale.blend(alpha, e[i], ht[i]) < scale.blend(alpha, e[j], ht[j]);
                    prop_assert_eq!(raw, norm);
                }
            }
        }
    }
}

#[test]
fn thread_selection_packs_big_first() {
    let d = load_preset("iphone12").unwrap();
    let p = HeuristicParams::default();
    let t = &d.topology;
    let h3 = power_heuristic(&CoreSelection::Threads(3), t, &p).unwrap();
    let packed = t.packed_counts(3);
    assert_eq!(packed, vec![2, 1]);
    // same value as the explicit count vector on an affinity twin
    let twin = CpuTopology::new("twin", t.clusters().to_vec(), SelectionMode::Affinity).unwrap();
    let h_twin = power_heuristic(&CoreSelection::Affinity(packed), &twin, &p).unwrap();
    assert_eq!(h3, h_twin);
    assert_eq!(capacity_factor(&CoreSelection::Threads(5), t).unwrap(), 1.0);
}

#[test]
fn mate40_reference_values() {
    let d = load_preset("mate40pro").unwrap();
    let p = HeuristicParams::default();
    let t = &d.topology;
    // written out independently of the library
    let hand = |c: [f64; 3], s: f64| {
        let a = [200.0, 160.0, 80.0];
        let n = [1.0, 3.0, 4.0];
        let f = [3.13, 2.54, 2.05];
        (0..3)
            .map(|i| a[i] * (c[i] + (n[i] - c[i]) * 0.7) * (f[i] * s) * (f[i] * s))
            .sum::<f64>()
            + 1000.0
    };
    let h = power_heuristic(&CoreSelection::Affinity(vec![1, 0, 0]), t, &p).unwrap();
    assert!((h - hand([1.0, 0.0, 0.0], 1.0)).abs() < 1e-9);
    assert!((h - 6068.5).abs() < 0.1);
    let h = power_heuristic(&CoreSelection::Affinity(vec![0, 2, 0]), t, &p).unwrap();
    assert!((h - hand([0.0, 2.0, 0.0], 2.54 / 3.13)).abs() < 1e-9);
    assert!((h - 4358.7).abs() < 0.5);
}
