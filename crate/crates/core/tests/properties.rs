use std::sync::Arc;

use dfl_core::aggregation::{run_consensus, AlphaRule};
use dfl_core::data::{gaussian_sizes, partition_iid, synth_dataset, SizeRule};
use dfl_core::model::Architecture;
use dfl_core::segment::{enumerate_segments, segment_len, SegmentUnit};
use dfl_core::topology::{algebraic_connectivity, ring_lattice, watts_strogatz, Graph};
use dfl_core::{init_params, model_distance, InitMode, ModelParams};
use proptest::prelude::*;

fn arch() -> Arc<Architecture> {
    Arc::new(Architecture::small((1, 8, 8), 10).unwrap())
}

fn model(seed: u64) -> ModelParams {
    init_params(&arch(), seed, InitMode::PerClientRandom { client: seed as usize })
}

fn centroid(models: &[ModelParams]) -> Vec<f64> {
    let mut c = vec![0.0; models[0].num_params()];
    for m in models {
        for (acc, v) in c.iter_mut().zip(m.values()) {
            *acc += v / models.len() as f64;
        }
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn distance_is_a_metric(a in 0u64..1000, b in 0u64..1000, c in 0u64..1000) {
        let (ma, mb, mc) = (model(a), model(b), model(c));
        let ab = model_distance(&ma, &mb).unwrap();
        prop_assert_eq!(ab, model_distance(&mb, &ma).unwrap());
        prop_assert_eq!(model_distance(&ma, &ma).unwrap(), 0.0);
        let ac = model_distance(&ma, &mc).unwrap();
        let cb = model_distance(&mc, &mb).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn small_world_keeps_edge_count(half_k in 1usize..4, extra in 1usize..20, p in 0.0f64..=1.0, seed in any::<u64>()) {
        let k = 2 * half_k;
        let n = k + extra;
        let g = watts_strogatz(n, k, p, seed).unwrap();
        prop_assert_eq!(g.edge_count(), n * k / 2);
        prop_assert!(g.edges().all(|(u, v)| u != v));
    }

    #[test]
    fn connectivity_iff_positive_lambda2(n in 2usize..12, edges in proptest::collection::vec((0usize..12, 0usize..12), 0..30)) {
        let mut g = Graph::empty(n, false);
        for (u, v) in edges {
            let (u, v) = (u % n, v % n);
            if u != v {
                g.add_edge(u, v).unwrap();
            }
        }
        let l2 = algebraic_connectivity(&g).unwrap();
        prop_assert_eq!(g.is_connected(), l2 > 1e-9, "lambda2 = {}", l2);
    }

    #[test]
    fn consensus_preserves_centroid(seed in 0u64..500, n in 3usize..8) {
        let g = ring_lattice(n, 2).unwrap();
        let models: Vec<_> = (0..n as u64).map(|i| model(seed * 16 + i)).collect();
        let before = centroid(&models);
        let (after, _) = run_consensus(models, &g, 1e-3, 20, AlphaRule::MaxDegree).unwrap();
        for (x, y) in before.iter().zip(centroid(&after)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_sizes_sum_and_floor(draws in proptest::collection::vec(0.0f64..5.0, 2..12), batch in 1usize..64) {
        let total = 6000;
        let sizes = gaussian_sizes(&draws, total, batch, SizeRule::Floor);
        // nearest rounding may leave fewer than one sample per client unassigned
        let sum: usize = sizes.iter().sum();
        prop_assert!(sum <= total && total - sum < draws.len(), "sum {}", sum);
        prop_assert!(sizes.iter().all(|&s| s >= batch));
    }

    #[test]
    fn iid_split_is_a_balanced_partition(k in 1usize..20, seed in any::<u64>()) {
        let ds = synth_dataset(3, 200, 10).unwrap();
        let plan = partition_iid(&ds, k, seed).unwrap();
        let sizes = plan.sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), 200);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert!(plan.is_disjoint());
    }
}

#[test]
fn segments_tile_the_model_for_every_unit() {
    let a = arch();
    for unit in [SegmentUnit::Layer, SegmentUnit::OutChannel, SegmentUnit::InChannel, SegmentUnit::Kernel] {
        let total: usize = enumerate_segments(&a, unit).into_iter().map(|id| segment_len(&a, id).unwrap()).sum();
        assert_eq!(total, a.param_count(), "{unit:?}");
    }
}
