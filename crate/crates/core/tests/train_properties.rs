mod common;

use common::{small_sequence, tiny_train_config};
use dexp_core::forecast::features::FeaturedGraph;
use dexp_core::forecast::{train, walk_forward_split, Split};
use dexp_core::graph::ExposureGraph;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn folds_never_leak(n in 3usize..200, train_min in 1usize..80, val_len in 1usize..20, test_len in 1usize..30, step in 1usize..12,
                        horizons in prop::collection::btree_set(1u32..16, 1..5)) {
        let horizons: Vec<u32> = horizons.into_iter().collect();
        let Ok(folds) = walk_forward_split(n, train_min, val_len, test_len, step) else {
            prop_assert!(train_min + val_len + test_len > n);
            return Ok(());
        };
        for f in &folds {
            prop_assert!(f.train.end <= f.val.start && f.val.end <= f.test.start && f.test.end <= n);
            let max_train_target = f.train_pairs(&horizons).iter().map(|(t, h)| t + *h as usize).max();
            let val_targets: Vec<usize> = f.val_pairs(&horizons).iter().map(|(t, h)| t + *h as usize).collect();
            let test_targets: Vec<usize> = f.test_pairs(&horizons).iter().map(|(t, h)| t + *h as usize).collect();
            if let Some(m) = max_train_target {
                prop_assert!(m < f.val.start);
            }
            prop_assert!(val_targets.iter().all(|w| f.val.contains(w)));
            prop_assert!(test_targets.iter().all(|w| f.test.contains(w)));
            if let (Some(vmax), Some(tmin)) = (val_targets.iter().max(), test_targets.iter().min()) {
                prop_assert!(vmax < tmin);
            }
        }
    }
}

fn fold(n: usize) -> Split {
    Split { train: 0..n - 6, val: n - 6..n - 3, test: n - 3..n }
}

#[test]
fn test_window_cannot_influence_training() {
    let (seq, _) = small_sequence(20, 16, 4);
    let split = fold(seq.len());
    let cfg = tiny_train_config();
    let (a, ha) = train(&seq, &split, &cfg).unwrap();

    // replace every test-window graph with an empty one
    let mut blanked: Vec<FeaturedGraph> = seq.clone();
    for fg in &mut blanked[split.test.clone()] {
        *fg = FeaturedGraph { graph: ExposureGraph::empty(fg.graph.interval()), features: Default::default() };
    }
    let (b, hb) = train(&blanked, &split, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
}

#[test]
fn training_is_deterministic() {
    let (seq, _) = small_sequence(20, 14, 9);
    let split = fold(seq.len());
    let cfg = tiny_train_config();
    let (a, ha) = train(&seq, &split, &cfg).unwrap();
    let (b, hb) = train(&seq, &split, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    let c = train(&seq, &split, &dexp_core::forecast::TrainConfig { seed: 1, ..cfg }).unwrap().0;
    assert_ne!(a, c);
}

#[test]
fn loss_falls_every_epoch_on_a_tiny_sequence() {
    let (seq, _) = small_sequence(12, 8, 2);
    let n = seq.len();
    let split = Split { train: 0..n, val: n..n, test: n..n };
    let cfg = dexp_core::forecast::TrainConfig { epochs: 10, ..tiny_train_config() };
    let (_, h) = train(&seq, &split, &cfg).unwrap();
    let losses: Vec<f64> = h.epochs.iter().map(|e| e.loss).collect();
    assert_eq!(losses.len(), 10);
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}
