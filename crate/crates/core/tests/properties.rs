use localindep::features::first_order_features;
use localindep::simulate::{sample_random_graph, simulate_hawkes, RandomGraphConfig, SimulationConfig};
use localindep::{
    ExpansionOrder, LITestConfig, LinkFunction, MarkedEventSequence, PreparedSequence, SplineBasis, Window,
};
use proptest::prelude::*;

fn simulated(d: usize, seed: u64, horizon: f64) -> MarkedEventSequence {
    let (_, spec) = sample_random_graph(&RandomGraphConfig::new(d, 0.4, seed)).unwrap();
    simulate_hawkes(
        &spec,
        &SimulationConfig {
            horizon,
            seed,
            ..Default::default()
        },
    )
    .unwrap()
}

fn events() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    proptest::collection::vec((0.0f64..20.0, 0usize..3), 0..40).prop_map(|mut pts| {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 == b.0);
        pts.into_iter().unzip()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn link_round_trips(x in 1e-6f64..50.0) {
        for link in LinkFunction::ALL {
            let back = link.inverse(link.eval(x).unwrap());
            prop_assert!((back - x).abs() <= 1e-12 * x.max(1.0), "{link}: {x} -> {back}");
        }
    }

    #[test]
    fn an_event_at_t_does_not_change_features_at_t(
        (times, marks) in events(),
        t in 0.5f64..19.5,
        mark in 0usize..3,
    ) {
        let window = Window::new(0.0, 20.0).unwrap();
        let basis = SplineBasis::new(4.0, 6, 3).unwrap();
        let before = MarkedEventSequence::new(times.clone(), marks.clone(), window, 3).unwrap();
        prop_assume!(!times.contains(&t));
        let mut pts: Vec<(f64, usize)> = times.into_iter().zip(marks).collect();
        pts.push((t, mark));
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (t2, m2) = pts.into_iter().unzip();
        let after = MarkedEventSequence::new(t2, m2, window, 3).unwrap();
        for j in 0..3 {
            prop_assert_eq!(first_order_features(&before, j, &basis, t), first_order_features(&after, j, &basis, t));
        }
    }

    #[test]
    fn old_events_contribute_nothing((times, marks) in events(), t in 10.0f64..20.0) {
        let window = Window::new(0.0, 20.0).unwrap();
        let basis = SplineBasis::new(3.0, 5, 3).unwrap();
        let full = MarkedEventSequence::new(times.clone(), marks.clone(), window, 3).unwrap();
        let (recent_t, recent_m): (Vec<f64>, Vec<usize>) = times
            .into_iter()
            .zip(marks)
            .filter(|&(s, _)| s > t - 3.0)
            .unzip();
        let recent = MarkedEventSequence::new(recent_t, recent_m, window, 3).unwrap();
        for j in 0..3 {
            prop_assert_eq!(first_order_features(&full, j, &basis, t), first_order_features(&recent, j, &basis, t));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulations_are_simple_and_reproducible(d in 1usize..5, seed in 0u64..1000) {
        let a = simulated(d, seed, 100.0);
        prop_assert!(a.times().windows(2).all(|w| w[0] < w[1]));
        prop_assert!(a.times().iter().all(|&t| a.window().contains(t)));
        prop_assert!(a.marks().iter().all(|&m| m < d));
        prop_assert_eq!(a, simulated(d, seed, 100.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn li_test_is_equivariant_under_relabeling(
        seed in 0u64..500,
        perm in Just(vec![0usize, 1, 2]).prop_shuffle(),
        second in any::<bool>(),
        condition in any::<bool>(),
    ) {
        let seq = simulated(3, seed, 300.0);
        let order = if second { ExpansionOrder::Second } else { ExpansionOrder::First };
        let cfg = LITestConfig::default().with_order(order);
        let (j, k) = (0, 1);
        let cond: Vec<usize> = if condition { vec![2] } else { vec![] };
        let a = PreparedSequence::for_config(&seq, &cfg).unwrap().test(j, k, &cond, &cfg).unwrap();
        let relabeled = seq.relabel(&perm).unwrap();
        let pcond: Vec<usize> = cond.iter().map(|&c| perm[c]).collect();
        let b = PreparedSequence::for_config(&relabeled, &cfg)
            .unwrap()
            .test(perm[j], perm[k], &pcond, &cfg)
            .unwrap();
        prop_assert!((a.p_value - b.p_value).abs() < 1e-9, "{} vs {}", a.p_value, b.p_value);
        prop_assert_eq!(a.df, b.df);
        // identical inputs give bit-identical output
        let again = PreparedSequence::for_config(&seq, &cfg).unwrap().test(j, k, &cond, &cfg).unwrap();
        prop_assert_eq!(a.statistic.to_bits(), again.statistic.to_bits());
        prop_assert_eq!(a.p_value.to_bits(), again.p_value.to_bits());
    }
}
