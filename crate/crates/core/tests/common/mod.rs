#![allow(dead_code)]

pub mod oracles;

use std::collections::BTreeMap;

use dexp_core::forecast::features::{FeaturedGraph, NodeFeatures, NUMERIC_FEATURES};
use dexp_core::forecast::model::{AnchorInputs, Architecture, ExampleTargets, ForecastModel, LossWeights};
use dexp_core::forecast::FeatureScaler;
use dexp_core::graph::{ExposureGraph, Interval, ProtocolId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn pid(s: &str) -> ProtocolId {
    ProtocolId::new(s)
}

/// Random graph with `n` nodes `n00..`, each ordered pair an edge with
/// probability `p_edge`.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p_edge: f64, start: u32) -> ExposureGraph {
    let ids: Vec<ProtocolId> = (0..n).map(|i| pid(&format!("n{i:03}"))).collect();
    let nodes: BTreeMap<_, _> = ids.iter().map(|p| (p.clone(), rng.random_range(1.0..1000.0))).collect();
    let mut edges = BTreeMap::new();
    for p in &ids {
        for q in &ids {
            if p != q && rng.random_bool(p_edge) {
                edges.insert((p.clone(), q.clone()), rng.random_range(0.5..500.0));
            }
        }
    }
    ExposureGraph::new(Interval { start, end: start + 1 }, nodes, edges).unwrap()
}

pub fn random_features(rng: &mut ChaCha8Rng, g: &ExposureGraph, n_sectors: usize) -> FeaturedGraph {
    let features = g
        .nodes()
        .keys()
        .map(|p| {
            let mut numeric = [0.0; NUMERIC_FEATURES];
            numeric.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
            let f = NodeFeatures {
                numeric,
                sector: rng.random_range(0..n_sectors + 1),
                n_sectors: n_sectors + 1,
            };
            (p.clone(), f)
        })
        .collect();
    FeaturedGraph { graph: g.clone(), features }
}

/// A d=8 model over 2 sectors with one horizon.
pub fn mini_model(seed: u64) -> ForecastModel {
    let arch = Architecture {
        embedding_dim: 8,
        encoder_hidden: vec![10],
        link_hidden: vec![12, 6],
        node_hidden: vec![7],
    };
    ForecastModel::new(arch, vec!["a".into(), "b".into()], &[1], FeatureScaler::identity(), seed)
}

pub fn mini_problem(seed: u64) -> (ForecastModel, AnchorInputs, ExampleTargets, LossWeights) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_graph(&mut rng, 5, 0.4, 0);
    let fg = random_features(&mut rng, &g, 2);
    let model = mini_model(seed);
    let anchor = AnchorInputs::new(&fg, &model.scaler).unwrap();
    let mut t = ExampleTargets::default();
    for i in 0..5 {
        for j in 0..5 {
            if i != j && rng.random_bool(0.6) {
                let y = rng.random_bool(0.4);
                t.src.push(i);
                t.dst.push(j);
                t.labels.push(if y { 1.0 } else { 0.0 });
                t.weight_delta.push(y.then(|| rng.random_range(-3.0..3.0)));
            }
        }
    }
    if !t.labels.iter().any(|y| *y > 0.5) {
        t.labels[0] = 1.0;
        t.weight_delta[0] = Some(0.7);
    }
    for i in 0..5 {
        if i != 2 {
            t.node_idx.push(i);
            t.node_delta.push(rng.random_range(-0.5..0.5));
        }
    }
    let w = LossWeights {
        exist: 2.0,
        weight: 0.5,
        node: 20.0,
        pos_weight: 5.0,
        smooth_l1_delta: 1.0,
    };
    (model, anchor, t, w)
}

/// Featured graph sequence from a small synthetic market with true issuers.
pub fn small_sequence(n_protocols: usize, n_weeks: usize, seed: u64) -> (Vec<FeaturedGraph>, dexp_core::graph::CategoryMap) {
    use dexp_core::forecast::features::default_sectors;
    use dexp_core::synth::{generate, SynthConfig};
    let cfg = SynthConfig {
        n_protocols,
        n_tokens: 2 * n_protocols,
        n_weeks,
        seed,
        ..SynthConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    let seq = dexp_core::graph::sequence_from_snapshots(&ds.snapshots, &ds.issuers, 0.0).unwrap();
    let cats = ds.snapshots[0].categories();
    let sectors = default_sectors();
    let featured = seq
        .graphs()
        .iter()
        .enumerate()
        .map(|(i, g)| FeaturedGraph::new(g.clone(), Some(&ds.snapshots[i + 1]), &cats, &sectors))
        .collect();
    (featured, cats)
}

/// Default training settings on a much smaller network.
pub fn tiny_train_config() -> dexp_core::forecast::TrainConfig {
    dexp_core::forecast::TrainConfig {
        architecture: Architecture {
            embedding_dim: 8,
            encoder_hidden: vec![16],
            link_hidden: vec![16],
            node_hidden: vec![8],
        },
        horizons: vec![1, 2],
        epochs: 4,
        ..Default::default()
    }
}

/// Worst per-tensor relative error `‖a − n‖ / (‖a‖ + ‖n‖)` between the
/// analytic gradient and central differences of the full objective.
pub fn worst_relative_error(seed: u64) -> (f64, usize) {
    let (model, anchor, targets, w) = mini_problem(seed);
    let (_, grads) = model.loss_and_grads(1, &anchor, &targets, &w).unwrap();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let groups: [(&str, &dexp_core::forecast::nn::Mlp); 3] = [("encoder", &grads.encoder), ("link", &grads.link), ("node", &grads.node)];
    for (name, analytic) in groups {
        for (t, a_tensor) in analytic.slices().iter().enumerate() {
            let mut num = vec![0.0; a_tensor.len()];
            for (i, n) in num.iter_mut().enumerate() {
                let eval = |delta: f64| {
                    let mut m = model.clone();
                    let target = match name {
                        "encoder" => &mut m.encoder,
                        "link" => &mut m.heads.get_mut(&1).unwrap().link,
                        _ => &mut m.heads.get_mut(&1).unwrap().node,
                    };
                    target.slices_mut()[t][i] += delta;
                    m.loss(1, &anchor, &targets, &w).unwrap().total
                };
                *n = (eval(eps) - eval(-eps)) / (2.0 * eps);
            }
            let diff: f64 = a_tensor.iter().zip(&num).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = a_tensor.iter().map(|a| a * a).sum::<f64>().sqrt() + num.iter().map(|n| n * n).sum::<f64>().sqrt();
            if scale > 1e-12 {
                worst = worst.max(diff / scale);
            }
            checked += a_tensor.len();
        }
    }
    (worst, checked)
}
