mod common;

use std::collections::BTreeMap;

use common::{pid, random_graph};
use dexp_core::graph::{CategoryMap, ExposureGraph, Interval, ProtocolId};
use dexp_core::risk::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn categories(g: &ExposureGraph, k: usize) -> CategoryMap {
    g.nodes().keys().enumerate().map(|(i, p)| (p.clone(), format!("s{}", i % k))).collect()
}

fn ranking(scores: &BTreeMap<ProtocolId, f64>, rename: impl Fn(&ProtocolId) -> ProtocolId) -> Vec<(f64, ProtocolId)> {
    let mut v: Vec<(f64, ProtocolId)> = scores.iter().map(|(p, s)| (*s, rename(p))).collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pagerank_sums_to_one(seed in any::<u64>(), n in 1usize..60, density in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, density, 0);
        let total: f64 = pagerank(&g, PageRankConfig::default()).values().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn regular_ring_gives_uniform_pagerank(n in 2usize..40, k in 1usize..5) {
        let k = k.min(n - 1);
        let ids: Vec<ProtocolId> = (0..n).map(|i| pid(&format!("n{i:03}"))).collect();
        let mut edges = BTreeMap::new();
        for i in 0..n {
            for s in 1..=k {
                edges.insert((ids[i].clone(), ids[(i + s) % n].clone()), 2.5);
            }
        }
        let g = ExposureGraph::new(Interval { start: 0, end: 1 }, ids.iter().map(|p| (p.clone(), 1.0)).collect(), edges).unwrap();
        for r in pagerank(&g, PageRankConfig::default()).values() {
            prop_assert!((r - 1.0 / n as f64).abs() <= 1e-9);
        }
    }

    #[test]
    fn sis_bounded_and_ranking_survives_relabeling(seed in any::<u64>(), n in 1usize..50, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, 0.1, 0);
        let (alpha, beta) = (a, (1.0 - a) * b);
        let w = SisWeights::new(alpha, beta, 1.0 - alpha - beta).unwrap();
        let s = sis(&g, w, 5);
        prop_assert!(s.values().all(|v| (0.0..=1.0).contains(v)));

        // reverse the labels
        let rename = |p: &ProtocolId| pid(&format!("m{:03}", n - 1 - p.as_str()[1..].parse::<usize>().unwrap()));
        let nodes = g.nodes().iter().map(|(p, v)| (rename(p), *v)).collect();
        let edges = g.edges().iter().map(|((p, q), v)| ((rename(p), rename(q)), *v)).collect();
        let h = ExposureGraph::new(g.interval(), nodes, edges).unwrap();
        let sh = sis(&h, w, 5);
        let before: Vec<ProtocolId> = ranking(&s, rename).into_iter().map(|x| x.1).collect();
        let after: Vec<ProtocolId> = ranking(&sh, |p| p.clone()).into_iter().map(|x| x.1).collect();
        // ties may order differently under new ids; compare score multisets per rank
        let sb: Vec<f64> = ranking(&s, rename).into_iter().map(|x| x.0).collect();
        let sa: Vec<f64> = ranking(&sh, |p| p.clone()).into_iter().map(|x| x.0).collect();
        for (x, y) in sb.iter().zip(&sa) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        for (i, p) in before.iter().enumerate() {
            let tied = sb.iter().filter(|x| (*x - sb[i]).abs() <= 1e-9).count();
            if tied == 1 {
                prop_assert_eq!(p, &after[i]);
            }
        }
    }

    #[test]
    fn hhi_is_scale_invariant(v in prop::collection::vec(0.0f64..1e6, 1..40), c in 1e-3f64..1e3) {
        prop_assume!(v.iter().sum::<f64>() > 0.0);
        let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
        prop_assert!((hhi(&v).unwrap() - hhi(&scaled).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn spillover_total_equals_edge_total(seed in any::<u64>(), n in 1usize..60, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // integer weights so the totals are exact in any summation order
        let g0 = random_graph(&mut rng, n, 0.2, 0);
        let edges = g0.edges().keys().map(|e| (e.clone(), rng.random_range(1..1000) as f64)).collect();
        let g = ExposureGraph::new(g0.interval(), g0.nodes().clone(), edges).unwrap();
        let s = spillover_matrix(&g, &categories(&g, k)).unwrap();
        prop_assert_eq!(s.total(), g.total_edge_weight());
    }

    #[test]
    fn density_grows_with_edges(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, 0.1, 0);
        let mut edges = g.edges().clone();
        let mut last = network_density(&g).unwrap();
        for _ in 0..10 {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            if i != j {
                edges.insert((pid(&format!("n{i:03}")), pid(&format!("n{j:03}"))), 1.0);
            }
            let h = ExposureGraph::new(g.interval(), g.nodes().clone(), edges.clone()).unwrap();
            let d = network_density(&h).unwrap();
            prop_assert!(d >= last);
            last = d;
        }
    }
}
