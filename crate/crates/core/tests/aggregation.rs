use std::collections::BTreeSet;

use fedsim::data::{partition_indices, split_holdout};
use fedsim::model::{dense_stack, Params};
use fedsim::protocol::{aggregate_weighted, select_clients};
use fedsim::rng::seeded;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn weighted_mean_matches_brute_force(
        seed in any::<u64>(),
        clients in 1usize..8,
        sizes in prop::collection::vec(1usize..500, 8),
    ) {
        let layers = dense_stack(3, &[4], 2);
        let mut rng = seeded(seed);
        let models: Vec<Params<f64>> =
            (0..clients).map(|_| Params::xavier(&layers, &mut rng).unwrap()).collect();
        let updates: Vec<(usize, &Params<f64>, usize)> =
            models.iter().enumerate().map(|(i, p)| (i, p, sizes[i])).collect();
        let mean = aggregate_weighted(&updates).unwrap();
        let total: usize = sizes[..clients].iter().sum();
        for j in 0..mean.len() {
            let mut expected = 0.0;
            for (i, m) in models.iter().enumerate() {
                expected += m.values()[j] * sizes[i] as f64;
            }
            expected /= total as f64;
            prop_assert!((mean.values()[j] - expected).abs() < 1e-7);
        }
    }

    #[test]
    fn partition_is_a_disjoint_cover(n in 1usize..400, k in 1usize..20, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let part = partition_indices(n, k, seed).unwrap();
        prop_assert_eq!(part.assignments.len(), k);
        let mut seen = BTreeSet::new();
        for shard in &part.assignments {
            prop_assert!(!shard.is_empty());
            prop_assert!(shard.len().abs_diff(n / k) <= 1);
            for &i in shard {
                prop_assert!(seen.insert(i), "index {} assigned twice", i);
            }
        }
        prop_assert_eq!(seen, (0..n).collect::<BTreeSet<_>>());
    }

    #[test]
    fn holdout_split_covers_the_shard(shard in prop::collection::vec(0usize..10_000, 1..100)) {
        let (train, holdout) = split_holdout(&shard);
        prop_assert!(!train.is_empty() && !holdout.is_empty());
        if shard.len() >= 5 {
            let mut joined = train.clone();
            joined.extend(&holdout);
            prop_assert_eq!(joined, shard);
        }
    }

    #[test]
    fn selection_is_sorted_and_sized(fraction in 0.0f64..=1.0, n in 1usize..50, seed in any::<u64>()) {
        let picked = select_clients(fraction, n, &mut seeded(seed));
        prop_assert_eq!(picked.len(), fedsim::cost::clients_per_round(fraction, n));
        prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(picked.iter().all(|&i| i < n));
    }
}

#[test]
fn partition_rejects_more_clients_than_samples() {
    assert!(partition_indices(3, 4, 0).is_err());
}

#[test]
fn mismatched_shapes_name_the_client() {
    let a = Params::<f32>::zeros(&dense_stack(3, &[4], 2)).unwrap();
    let b = Params::<f32>::zeros(&dense_stack(3, &[5], 2)).unwrap();
    let err = aggregate_weighted(&[(0, &a, 1), (6, &b, 1)]).unwrap_err();
    assert!(err.to_string().contains('6'), "{err}");
}
