//! Training configuration, sample construction, walk-forward splits and
//! the training loop with early stopping.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::ops::Range;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{default_sectors, FeatureScaler, FeaturedGraph};
use super::model::{AnchorInputs, Architecture, ExampleTargets, ForecastModel, LossWeights};
use super::nn::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::graph::{ExposureGraph, ProtocolId};
use crate::metrics::auprc;
use crate::util::rng_for;

const TRAIN_STREAM: u64 = 0x7EA1;
const VAL_STREAM: u64 = 0x7A11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub horizons: Vec<u32>,
    pub neg_ratio: usize,
    pub lambda_exist: f64,
    pub lambda_weight: f64,
    pub lambda_node: f64,
    pub adam: AdamConfig,
    pub lr_heads: f64,
    pub lr_backbone: f64,
    pub epochs: usize,
    pub patience: usize,
    pub grad_clip: f64,
    pub smooth_l1_delta: f64,
    pub seed: u64,
    pub sectors: Vec<String>,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            horizons: vec![1, 4, 8, 12],
            neg_ratio: 5,
            lambda_exist: 2.0,
            lambda_weight: 0.5,
            lambda_node: 20.0,
            adam: AdamConfig::default(),
            lr_heads: 5e-4,
            lr_backbone: 5e-5,
            epochs: 20,
            patience: 3,
            grad_clip: 1.0,
            smooth_l1_delta: 1.0,
            seed: 0,
            sectors: default_sectors(),
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return bad("horizons must be non-empty and positive");
        }
        if self.neg_ratio == 0 || self.epochs == 0 || self.patience == 0 {
            return bad("neg_ratio, epochs and patience must be positive");
        }
        let positive = [
            self.lambda_exist,
            self.lambda_weight,
            self.lambda_node,
            self.lr_heads,
            self.lr_backbone,
            self.grad_clip,
            self.smooth_l1_delta,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("loss weights, learning rates, clip and delta must be positive");
        }
        let a = &self.architecture;
        if a.embedding_dim == 0 || [&a.encoder_hidden, &a.link_hidden, &a.node_hidden].iter().any(|h| h.contains(&0)) {
            return bad("layer widths must be positive");
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            exist: self.lambda_exist,
            weight: self.lambda_weight,
            node: self.lambda_node,
            pos_weight: self.neg_ratio as f64,
            smooth_l1_delta: self.smooth_l1_delta,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn max_horizon(&self) -> u32 {
        self.horizons.iter().copied().max().unwrap_or(0)
    }
}

/// Labeled pairs: all positives followed by sampled negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPairs {
    pub pairs: Vec<((ProtocolId, ProtocolId), bool)>,
    /// The complement held fewer non-edges than requested and was used whole.
    pub insufficient: bool,
}

impl LabeledPairs {
    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|(_, y)| *y).count()
    }
}

/// All positives plus `ratio · |pos|` ordered non-edges over `nodes`
/// drawn uniformly without replacement. Falls back to the whole complement
/// when it is too small.
pub fn negative_sample(
    pos_edges: &BTreeSet<(ProtocolId, ProtocolId)>,
    nodes: &BTreeSet<ProtocolId>,
    ratio: usize,
    seed: &[u64],
) -> Result<LabeledPairs> {
    if ratio == 0 {
        return Err(Error::InvalidConfig("negative ratio must be at least 1".into()));
    }
    let ids: Vec<&ProtocolId> = nodes.iter().collect();
    let n = ids.len();
    let inside = pos_edges
        .iter()
        .filter(|(p, q)| p != q && nodes.contains(p) && nodes.contains(q))
        .count();
    let complement = (n * n.saturating_sub(1)).saturating_sub(inside);
    let wanted = ratio * pos_edges.len();
    let mut pairs: Vec<((ProtocolId, ProtocolId), bool)> = pos_edges.iter().map(|e| (e.clone(), true)).collect();
    let insufficient = complement < wanted;
    if insufficient {
        if wanted > 0 {
            warn!("only {complement} non-edges available, {wanted} requested");
        }
        for p in &ids {
            for q in &ids {
                if p != q {
                    let e = ((*p).clone(), (*q).clone());
                    if !pos_edges.contains(&e) {
                        pairs.push((e, false));
                    }
                }
            }
        }
    } else {
        let mut rng = rng_for(seed);
        let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(wanted);
        while seen.len() < wanted {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j || seen.contains(&(i, j)) {
                continue;
            }
            let e = (ids[i].clone(), ids[j].clone());
            if pos_edges.contains(&e) {
                continue;
            }
            seen.insert((i, j));
            pairs.push((e, false));
        }
    }
    Ok(LabeledPairs { pairs, insufficient })
}

/// Labeled candidates for forecasting `target` from `anchor`: target edges
/// between anchor nodes are positives, negatives are sampled from the
/// anchor's other ordered pairs.
pub fn candidate_pairs(anchor: &ExposureGraph, target: &ExposureGraph, ratio: usize, seed: &[u64]) -> Result<LabeledPairs> {
    let nodes = anchor.node_set();
    let pos: BTreeSet<_> = target
        .edges()
        .keys()
        .filter(|(p, q)| nodes.contains(p) && nodes.contains(q))
        .cloned()
        .collect();
    negative_sample(&pos, &nodes, ratio, seed)
}

/// Index ranges (into the graph sequence) of one walk-forward fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    /// Training pairs `(anchor, h)` whose target lies inside the training window.
    pub fn train_pairs(&self, horizons: &[u32]) -> Vec<(usize, u32)> {
        target_pairs(&self.train, horizons)
    }

    pub fn val_pairs(&self, horizons: &[u32]) -> Vec<(usize, u32)> {
        target_pairs(&self.val, horizons)
    }

    pub fn test_pairs(&self, horizons: &[u32]) -> Vec<(usize, u32)> {
        target_pairs(&self.test, horizons)
    }
}

/// `(origin, h)` pairs with `origin + h` in `targets`, ordered by origin then h.
pub fn target_pairs(targets: &Range<usize>, horizons: &[u32]) -> Vec<(usize, u32)> {
    let mut out = Vec::new();
    for t in 0..targets.end {
        for &h in horizons {
            let target = t + h as usize;
            if targets.contains(&target) {
                out.push((t, h));
            }
        }
    }
    out
}

/// Expanding-window folds. Fold `k` trains on `[0, train_min + k·step)`,
/// validates on the next `val_len` indices and tests on the `test_len`
/// after that; folds whose test window runs past `n` are dropped.
pub fn walk_forward_split(n: usize, train_min: usize, val_len: usize, test_len: usize, step: usize) -> Result<Vec<Split>> {
    if train_min == 0 || val_len == 0 || test_len == 0 || step == 0 {
        return Err(Error::InvalidConfig(
            "train_min, val_len, test_len and step must be positive".into(),
        ));
    }
    let mut folds = Vec::new();
    let mut end = train_min;
    while end + val_len + test_len <= n {
        folds.push(Split {
            train: 0..end,
            val: end..end + val_len,
            test: end + val_len..end + val_len + test_len,
        });
        end += step;
    }
    if folds.is_empty() {
        return Err(Error::InsufficientHistory(format!(
            "{n} weeks cannot hold train {train_min} + val {val_len} + test {test_len}"
        )));
    }
    Ok(folds)
}

/// Supervision for forecasting `target` from `anchor` at one horizon.
pub fn build_targets(anchor: &AnchorInputs, anchor_graph: &ExposureGraph, target: &ExposureGraph, labeled: &LabeledPairs) -> ExampleTargets {
    let mut t = ExampleTargets::default();
    for ((p, q), y) in &labeled.pairs {
        let (Some(i), Some(j)) = (anchor.position(p), anchor.position(q)) else {
            continue;
        };
        t.src.push(i);
        t.dst.push(j);
        t.labels.push(if *y { 1.0 } else { 0.0 });
        t.weight_delta.push(if *y {
            let now = anchor_graph.edge_weight(p, q).unwrap_or(0.0).ln_1p();
            Some(target.edge_weight(p, q).unwrap_or(0.0).ln_1p() - now)
        } else {
            None
        });
    }
    for (i, p) in anchor.ids.iter().enumerate() {
        if let Some(next) = target.tvl(p) {
            t.node_idx.push(i);
            t.node_delta.push(next.ln_1p() - anchor.tvl[i].ln_1p());
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub exist: f64,
    pub weight: f64,
    pub node: f64,
    pub grad_norm: f64,
    pub val_auprc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// Model plus what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub split: Option<Split>,
    pub model: ForecastModel,
    pub history: TrainingHistory,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.version != Self::VERSION {
            return Err(Error::InvalidConfig(format!("unsupported checkpoint version {}", c.version)));
        }
        Ok(c)
    }
}

struct Optimizer {
    encoder: AdamState,
    heads: BTreeMap<u32, (AdamState, AdamState)>,
}

/// Mean per-horizon AUPRC of the model on labeled validation candidates.
fn validation_auprc(
    model: &ForecastModel,
    anchors: &[Option<AnchorInputs>],
    val: &[(usize, u32, ExampleTargets)],
) -> Result<Option<f64>> {
    let mut by_h: BTreeMap<u32, Vec<(f64, bool)>> = BTreeMap::new();
    for (a, h, t) in val {
        let anchor = anchors[*a].as_ref().expect("anchor prepared");
        let (probs, _) = model.score_pairs(*h, anchor, &t.src, &t.dst)?;
        let scores = by_h.entry(*h).or_default();
        scores.extend(probs.into_iter().zip(t.labels.iter().map(|y| *y > 0.5)));
    }
    let per_h: Vec<f64> = by_h.values().filter_map(|s| auprc(s).ok()).collect();
    Ok((!per_h.is_empty()).then(|| per_h.iter().sum::<f64>() / per_h.len() as f64))
}

/// Trains on the fold's training window and early-stops on validation
/// AUPRC. Without validation targets all epochs run and the last
/// parameters are kept.
pub fn train(graphs: &[FeaturedGraph], split: &Split, cfg: &TrainConfig) -> Result<(ForecastModel, TrainingHistory)> {
    cfg.validate()?;
    if split.train.end > graphs.len() || split.val.end > graphs.len() {
        return Err(Error::InvalidConfig(format!(
            "split {:?} exceeds {} graphs",
            split,
            graphs.len()
        )));
    }
    let train_pairs = split.train_pairs(&cfg.horizons);
    if train_pairs.is_empty() {
        return Err(Error::InsufficientHistory(format!(
            "training window {:?} holds no anchor for horizons {:?}",
            split.train, cfg.horizons
        )));
    }
    let scaler = FeatureScaler::fit(graphs[split.train.clone()].iter().flat_map(|g| g.features.values()));
    let mut model = ForecastModel::new(
        cfg.architecture.clone(),
        cfg.sectors.clone(),
        &cfg.horizons,
        scaler,
        cfg.seed,
    );
    let weights = cfg.loss_weights();

    let val_pairs = split.val_pairs(&cfg.horizons);
    let mut anchors: Vec<Option<AnchorInputs>> = vec![None; graphs.len()];
    for &(a, _) in train_pairs.iter().chain(&val_pairs) {
        if anchors[a].is_none() {
            anchors[a] = Some(AnchorInputs::new(&graphs[a], &model.scaler)?);
        }
    }
    let mut examples = Vec::with_capacity(train_pairs.len());
    for &(a, h) in &train_pairs {
        let target = &graphs[a + h as usize].graph;
        let labeled = candidate_pairs(&graphs[a].graph, target, cfg.neg_ratio, &[cfg.seed, TRAIN_STREAM, a as u64, h as u64])?;
        let anchor = anchors[a].as_ref().expect("anchor prepared");
        examples.push((a, h, build_targets(anchor, &graphs[a].graph, target, &labeled)));
    }
    let mut val = Vec::with_capacity(val_pairs.len());
    for &(a, h) in &val_pairs {
        let target = &graphs[a + h as usize].graph;
        let labeled = candidate_pairs(&graphs[a].graph, target, cfg.neg_ratio, &[cfg.seed, VAL_STREAM, a as u64, h as u64])?;
        let anchor = anchors[a].as_ref().expect("anchor prepared");
        val.push((a, h, build_targets(anchor, &graphs[a].graph, target, &labeled)));
    }
    info!(
        "training on {} examples, validating on {}, {} parameters",
        examples.len(),
        val.len(),
        model.param_count()
    );

    let mut opt = Optimizer {
        encoder: AdamState::new(&model.encoder),
        heads: model
            .heads
            .iter()
            .map(|(h, heads)| (*h, (AdamState::new(&heads.link), AdamState::new(&heads.node))))
            .collect(),
    };
    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, ForecastModel)> = None;
    let mut bad_epochs = 0;
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_for(&[cfg.seed, 0x5EED, epoch as u64]));
        let mut sums = [0.0; 5];
        for &k in &order {
            let (a, h, targets) = &examples[k];
            let anchor = anchors[*a].as_ref().expect("anchor prepared");
            let (loss, mut grads) = model.loss_and_grads(*h, anchor, targets, &weights)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    anchor: *a,
                    horizon: *h,
                    detail: format!("{loss:?}"),
                });
            }
            let norm = clip_global_norm(&mut [&mut grads.encoder, &mut grads.link, &mut grads.node], cfg.grad_clip);
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    anchor: *a,
                    horizon: *h,
                    detail: "non-finite gradient".into(),
                });
            }
            adam_step(&mut model.encoder, &grads.encoder, &mut opt.encoder, cfg.lr_backbone, cfg.adam)?;
            let heads = model.heads.get_mut(h).expect("configured horizon");
            let (s_link, s_node) = opt.heads.get_mut(h).expect("configured horizon");
            adam_step(&mut heads.link, &grads.link, s_link, cfg.lr_heads, cfg.adam)?;
            adam_step(&mut heads.node, &grads.node, s_node, cfg.lr_heads, cfg.adam)?;
            for (s, v) in sums.iter_mut().zip([loss.total, loss.exist, loss.weight, loss.node, norm]) {
                *s += v;
            }
        }
        let n = examples.len() as f64;
        let val_auprc = validation_auprc(&model, &anchors, &val)?;
        let record = EpochRecord {
            epoch,
            loss: sums[0] / n,
            exist: sums[1] / n,
            weight: sums[2] / n,
            node: sums[3] / n,
            grad_norm: sums[4] / n,
            val_auprc,
        };
        debug!("{record:?}");
        info!(
            "epoch {epoch}: loss {:.5} val AUPRC {}",
            record.loss,
            val_auprc.map_or("n/a".into(), |v| format!("{v:.4}"))
        );
        history.epochs.push(record);

        if let Some(score) = val_auprc {
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, model.clone()));
                history.best_epoch = Some(epoch);
                bad_epochs = 0;
            } else {
                bad_epochs += 1;
                if bad_epochs >= cfg.patience {
                    history.stopped_early = true;
                    info!("early stop after epoch {epoch}");
                    break;
                }
            }
        }
    }
    if let Some((_, m)) = best {
        model = m;
    } else {
        history.best_epoch = history.epochs.last().map(|e| e.epoch);
    }
    Ok((model, history))
}

/// Trains on every graph with no validation window.
pub fn train_all(graphs: &[FeaturedGraph], cfg: &TrainConfig) -> Result<(ForecastModel, TrainingHistory)> {
    let n = graphs.len();
    train(
        graphs,
        &Split {
            train: 0..n,
            val: n..n,
            test: n..n,
        },
        cfg,
    )
}
