//! Encoder, link head and node head of the graph forecaster, the multi-task
//! loss with its analytic gradient, and the persistence baseline.
//!
//! The link head sees the symmetric pair composition
//! `[h_p; h_q; h_p ⊙ h_q; |h_p − h_q|]` followed by a small pair context
//! (current edge indicator and scaled log-weights in both directions).

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{concatenate, s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::features::{FeatureScaler, FeaturedGraph};
use super::nn::Mlp;
use crate::error::{Error, Result};
use crate::graph::{ExposureGraph, Interval, ProtocolId};
use crate::util::rng_for;

/// Length of the pair context appended to the pairwise features.
pub const PAIR_CONTEXT: usize = 3;
/// Divisor applied to log1p edge weights in the pair context.
pub const LOGW_SCALE: f64 = 10.0;
/// Probabilities are kept inside `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-12;
/// Clamp used by [`bce_loss`] on probability inputs.
pub const BCE_CLAMP: f64 = 1e-7;
/// Persistence probability margin.
pub const PERSISTENCE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub embedding_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub link_hidden: Vec<usize>,
    pub node_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            embedding_dim: 64,
            encoder_hidden: vec![128, 64],
            link_hidden: vec![256, 64],
            node_hidden: vec![128, 32],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub exist: f64,
    pub weight: f64,
    pub node: f64,
    pub pos_weight: f64,
    pub smooth_l1_delta: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub exist: f64,
    pub weight: f64,
    pub node: f64,
    pub total: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Weighted binary cross-entropy on a probability, clamped to
/// `[1e-7, 1 − 1e-7]`; positives are scaled by `pos_weight`.
pub fn bce_loss(y_hat: f64, y: f64, pos_weight: f64) -> f64 {
    let p = y_hat.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(pos_weight * y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Same loss on a logit: `w·y·softplus(−z) + (1 − y)·softplus(z)`.
pub fn bce_with_logit(z: f64, y: f64, pos_weight: f64) -> f64 {
    pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z)
}

fn bce_logit_grad(z: f64, y: f64, pos_weight: f64) -> f64 {
    let s = sigmoid(z);
    pos_weight * y * (s - 1.0) + (1.0 - y) * s
}

pub fn smooth_l1(r: f64, delta: f64) -> f64 {
    if r.abs() < delta {
        0.5 * r * r / delta
    } else {
        r.abs() - 0.5 * delta
    }
}

fn smooth_l1_grad(r: f64, delta: f64) -> f64 {
    if r.abs() < delta {
        r / delta
    } else {
        r.signum()
    }
}

pub fn total_loss(exist: f64, weight: f64, node: f64, w: &LossWeights) -> f64 {
    w.exist * exist + w.weight * weight + w.node * node
}

/// `[h_p; h_q; h_p ⊙ h_q; |h_p − h_q|]`
pub fn pairwise_features(hp: &[f64], hq: &[f64]) -> Result<Vec<f64>> {
    if hp.len() != hq.len() {
        return Err(Error::DimensionMismatch {
            expected: hp.len(),
            got: hq.len(),
        });
    }
    let mut f = Vec::with_capacity(4 * hp.len());
    f.extend_from_slice(hp);
    f.extend_from_slice(hq);
    f.extend(hp.iter().zip(hq).map(|(a, b)| a * b));
    f.extend(hp.iter().zip(hq).map(|(a, b)| (a - b).abs()));
    Ok(f)
}

/// Runs the link head on one input row: `(existence probability, residual)`.
pub fn link_head(input: &[f64], params: &Mlp) -> Result<(f64, f64)> {
    if params.out_dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: params.out_dim(),
        });
    }
    let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row");
    params.check_input(&x)?;
    let out = params.predict(&x);
    Ok((sigmoid(out[[0, 0]]).clamp(PROB_EPS, 1.0 - PROB_EPS), out[[0, 1]]))
}

pub fn reconstruct_edge_logweight(w_now_log1p: f64, residual: f64) -> f64 {
    w_now_log1p + residual
}

/// Runs the node head on `[h_p; h_in; h_out]`.
pub fn node_head(hp: &[f64], h_in: &[f64], h_out: &[f64], params: &Mlp) -> Result<f64> {
    for v in [h_in, h_out] {
        if v.len() != hp.len() {
            return Err(Error::DimensionMismatch {
                expected: hp.len(),
                got: v.len(),
            });
        }
    }
    let mut row = hp.to_vec();
    row.extend_from_slice(h_in);
    row.extend_from_slice(h_out);
    let x = Array2::from_shape_vec((1, row.len()), row).expect("row");
    params.check_input(&x)?;
    Ok(params.predict(&x)[[0, 0]])
}

/// Row-normalized incoming and outgoing weight matrices: row `p` of the
/// first averages over `q -> p` edges, row `p` of the second over `p -> q`.
/// Nodes without neighbors get zero rows.
pub fn neighbor_weights(g: &ExposureGraph) -> (Array2<f64>, Array2<f64>) {
    let ig = g.indexed();
    let n = ig.len();
    let mut agg_in = Array2::zeros((n, n));
    let mut agg_out = Array2::zeros((n, n));
    for p in 0..n {
        let tin: f64 = ig.inc[p].iter().map(|(_, w)| w).sum();
        if tin > 0.0 {
            for &(q, w) in &ig.inc[p] {
                agg_in[[p, q]] = w / tin;
            }
        }
        let tout: f64 = ig.out[p].iter().map(|(_, w)| w).sum();
        if tout > 0.0 {
            for &(q, w) in &ig.out[p] {
                agg_out[[p, q]] = w / tout;
            }
        }
    }
    (agg_in, agg_out)
}

/// Embeds every node: `h_p = MLP(x_p)`.
pub fn encode_nodes(
    features: &BTreeMap<ProtocolId, Vec<f64>>,
    params: &Mlp,
) -> Result<BTreeMap<ProtocolId, Vec<f64>>> {
    if features.is_empty() {
        return Ok(BTreeMap::new());
    }
    let dim = params.in_dim();
    let mut data = Vec::with_capacity(features.len() * dim);
    for v in features.values() {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        data.extend_from_slice(v);
    }
    let x = Array2::from_shape_vec((features.len(), dim), data).expect("rows");
    let h = params.predict(&x);
    Ok(features
        .keys()
        .zip(h.rows())
        .map(|(p, row)| (p.clone(), row.to_vec()))
        .collect())
}

/// Per-horizon heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heads {
    pub link: Mlp,
    pub node: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub architecture: Architecture,
    pub sectors: Vec<String>,
    pub scaler: FeatureScaler,
    pub encoder: Mlp,
    pub heads: BTreeMap<u32, Heads>,
}

/// Everything about an anchor graph the forward pass needs.
#[derive(Debug, Clone)]
pub struct AnchorInputs {
    pub ids: Vec<ProtocolId>,
    pub x: Array2<f64>,
    pub agg_in: Array2<f64>,
    pub agg_out: Array2<f64>,
    /// Current log1p edge weights by index pair.
    pub logw: BTreeMap<(usize, usize), f64>,
    pub tvl: Vec<f64>,
}

impl AnchorInputs {
    pub fn new(fg: &FeaturedGraph, scaler: &FeatureScaler) -> Result<Self> {
        let g = &fg.graph;
        let ids: Vec<ProtocolId> = g.nodes().keys().cloned().collect();
        let mut rows = Vec::new();
        let mut dim = None;
        for p in &ids {
            let f = fg.features.get(p).ok_or_else(|| Error::UnknownProtocol(p.clone()))?;
            let v = scaler.transform(f);
            if let Some(d) = dim {
                if d != v.len() {
                    return Err(Error::DimensionMismatch { expected: d, got: v.len() });
                }
            }
            dim = Some(v.len());
            rows.extend(v);
        }
        let x = Array2::from_shape_vec((ids.len(), dim.unwrap_or(0)), rows).expect("rows");
        let (agg_in, agg_out) = neighbor_weights(g);
        let pos = |p: &ProtocolId| ids.binary_search(p).expect("node id");
        let logw = g
            .edges()
            .iter()
            .map(|((p, q), w)| ((pos(p), pos(q)), w.ln_1p()))
            .collect();
        Ok(AnchorInputs {
            tvl: g.nodes().values().copied().collect(),
            ids,
            x,
            agg_in,
            agg_out,
            logw,
        })
    }

    pub fn position(&self, p: &ProtocolId) -> Option<usize> {
        self.ids.binary_search(p).ok()
    }

    pub fn current_logw(&self, i: usize, j: usize) -> f64 {
        self.logw.get(&(i, j)).copied().unwrap_or(0.0)
    }

    pub fn pair_context(&self, i: usize, j: usize) -> [f64; PAIR_CONTEXT] {
        let fwd = self.logw.get(&(i, j));
        [
            if fwd.is_some() { 1.0 } else { 0.0 },
            fwd.copied().unwrap_or(0.0) / LOGW_SCALE,
            self.current_logw(j, i) / LOGW_SCALE,
        ]
    }
}

/// Supervision for one (anchor, horizon) example.
#[derive(Debug, Clone, Default)]
pub struct ExampleTargets {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub labels: Vec<f64>,
    /// `w̃_{t+h} − w̃_t` for positive pairs.
    pub weight_delta: Vec<Option<f64>>,
    pub node_idx: Vec<usize>,
    pub node_delta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub encoder: Mlp,
    pub link: Mlp,
    pub node: Mlp,
}

struct Forward {
    h: Array2<f64>,
    enc_cache: super::nn::MlpCache,
    node_out: Array2<f64>,
    node_cache: super::nn::MlpCache,
    hp: Array2<f64>,
    hq: Array2<f64>,
    pair: Array2<f64>,
    link_out: Array2<f64>,
    link_cache: super::nn::MlpCache,
}

impl ForecastModel {
    pub fn new(
        architecture: Architecture,
        sectors: Vec<String>,
        horizons: &[u32],
        scaler: FeatureScaler,
        seed: u64,
    ) -> Self {
        let x_dim = super::features::NUMERIC_FEATURES + sectors.len() + 1;
        let d = architecture.embedding_dim;
        let mut rng = rng_for(&[seed, 0xE0C0]);
        let dims = |input: usize, hidden: &[usize], out: usize| {
            let mut v = vec![input];
            v.extend_from_slice(hidden);
            v.push(out);
            v
        };
        let encoder = Mlp::new(&dims(x_dim, &architecture.encoder_hidden, d), &mut rng);
        let heads = horizons
            .iter()
            .map(|&h| {
                let mut rng = rng_for(&[seed, 0x4EAD, h as u64]);
                let link = Mlp::new(&dims(4 * d + PAIR_CONTEXT, &architecture.link_hidden, 2), &mut rng);
                let node = Mlp::new(&dims(3 * d, &architecture.node_hidden, 1), &mut rng);
                (h, Heads { link, node })
            })
            .collect();
        ForecastModel {
            architecture,
            sectors,
            scaler,
            encoder,
            heads,
        }
    }

    pub fn horizons(&self) -> Vec<u32> {
        self.heads.keys().copied().collect()
    }

    pub fn embedding_dim(&self) -> usize {
        self.architecture.embedding_dim
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count()
            + self
                .heads
                .values()
                .map(|h| h.link.param_count() + h.node.param_count())
                .sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.heads.values().all(|h| h.link.is_finite() && h.node.is_finite())
    }

    fn heads_for(&self, horizon: u32) -> Result<&Heads> {
        self.heads.get(&horizon).ok_or(Error::UnknownHorizon(horizon))
    }

    pub fn embed(&self, anchor: &AnchorInputs) -> Result<Array2<f64>> {
        self.encoder.check_input(&anchor.x)?;
        Ok(self.encoder.predict(&anchor.x))
    }

    /// Per-pair block of the link input: `[h_p⊙h_q; |h_p−h_q|; context]`.
    /// The `[h_p; h_q]` blocks enter the first layer through per-node
    /// products instead, which is the same sum with far fewer operations.
    fn pair_block(anchor: &AnchorInputs, hp: &Array2<f64>, hq: &Array2<f64>, src: &[usize], dst: &[usize]) -> Array2<f64> {
        let prod = hp * hq;
        let diff = (hp - hq).mapv(f64::abs);
        let ctx = Array2::from_shape_fn((src.len(), PAIR_CONTEXT), |(r, c)| anchor.pair_context(src[r], dst[r])[c]);
        concatenate(Axis(1), &[prod.view(), diff.view(), ctx.view()]).expect("same rows")
    }

    /// First link layer pre-activation for pairs `(src[r], dst[r])`.
    fn link_first_layer(link: &Mlp, h: &Array2<f64>, g: &Array2<f64>, src: &[usize], dst: &[usize]) -> Array2<f64> {
        let d = h.ncols();
        let w = &link.layers[0].w;
        let up = h.dot(&w.slice(s![0..d, ..]));
        let uq = h.dot(&w.slice(s![d..2 * d, ..]));
        let mut z = g.dot(&w.slice(s![2 * d.., ..])) + &link.layers[0].b;
        for (r, mut row) in z.rows_mut().into_iter().enumerate() {
            row += &up.row(src[r]);
            row += &uq.row(dst[r]);
        }
        z
    }

    fn node_inputs(anchor: &AnchorInputs, h: &Array2<f64>) -> Array2<f64> {
        let h_in = anchor.agg_in.dot(h);
        let h_out = anchor.agg_out.dot(h);
        concatenate(Axis(1), &[h.view(), h_in.view(), h_out.view()]).expect("same rows")
    }

    fn forward(&self, horizon: u32, anchor: &AnchorInputs, src: &[usize], dst: &[usize]) -> Result<Forward> {
        let heads = self.heads_for(horizon)?;
        self.encoder.check_input(&anchor.x)?;
        let (h, enc_cache) = self.encoder.forward(&anchor.x);
        let node_in = Self::node_inputs(anchor, &h);
        let (node_out, node_cache) = heads.node.forward(&node_in);
        let hp = h.select(Axis(0), src);
        let hq = h.select(Axis(0), dst);
        let pair = Self::pair_block(anchor, &hp, &hq, src, dst);
        let z0 = Self::link_first_layer(&heads.link, &h, &pair, src, dst);
        let (link_out, link_cache) = heads.link.forward_from_first(z0);
        Ok(Forward {
            h,
            enc_cache,
            node_out,
            node_cache,
            hp,
            hq,
            pair,
            link_out,
            link_cache,
        })
    }

    fn losses(fw: &Forward, t: &ExampleTargets, w: &LossWeights) -> (LossBreakdown, Array2<f64>, Array2<f64>) {
        let b = t.labels.len();
        let mut d_link = Array2::zeros((b, 2));
        let mut exist = 0.0;
        if b > 0 {
            for i in 0..b {
                let z = fw.link_out[[i, 0]];
                exist += bce_with_logit(z, t.labels[i], w.pos_weight);
                d_link[[i, 0]] = w.exist * bce_logit_grad(z, t.labels[i], w.pos_weight) / b as f64;
            }
            exist /= b as f64;
        }
        let positives = t.weight_delta.iter().filter(|x| x.is_some()).count();
        let mut weight = 0.0;
        if positives > 0 {
            for (i, target) in t.weight_delta.iter().enumerate() {
                if let Some(target) = target {
                    let r = fw.link_out[[i, 1]] - target;
                    weight += smooth_l1(r, w.smooth_l1_delta);
                    d_link[[i, 1]] = w.weight * smooth_l1_grad(r, w.smooth_l1_delta) / positives as f64;
                }
            }
            weight /= positives as f64;
        }
        let n = fw.node_out.nrows();
        let mut d_node = Array2::zeros((n, 1));
        let mut node = 0.0;
        let k = t.node_idx.len();
        if k > 0 {
            for (&i, &target) in t.node_idx.iter().zip(&t.node_delta) {
                let r = fw.node_out[[i, 0]] - target;
                node += smooth_l1(r, w.smooth_l1_delta);
                d_node[[i, 0]] += w.node * smooth_l1_grad(r, w.smooth_l1_delta) / k as f64;
            }
            node /= k as f64;
        }
        let total = total_loss(exist, weight, node, w);
        (
            LossBreakdown {
                exist,
                weight,
                node,
                total,
            },
            d_link,
            d_node,
        )
    }

    /// Multi-task loss of one example; component losses are means over
    /// their sample sets.
    pub fn loss(&self, horizon: u32, anchor: &AnchorInputs, t: &ExampleTargets, w: &LossWeights) -> Result<LossBreakdown> {
        let fw = self.forward(horizon, anchor, &t.src, &t.dst)?;
        Ok(Self::losses(&fw, t, w).0)
    }

    /// Loss and its gradient with respect to the encoder and the heads of
    /// `horizon`.
    pub fn loss_and_grads(
        &self,
        horizon: u32,
        anchor: &AnchorInputs,
        t: &ExampleTargets,
        w: &LossWeights,
    ) -> Result<(LossBreakdown, Gradients)> {
        let heads = self.heads_for(horizon)?;
        let fw = self.forward(horizon, anchor, &t.src, &t.dst)?;
        let (breakdown, d_link, d_node) = Self::losses(&fw, t, w);

        let mut g_link = heads.link.zeros_like();
        let mut g_node = heads.node.zeros_like();
        let mut g_enc = self.encoder.zeros_like();
        let d = self.embedding_dim();

        // first link layer by hand: node blocks via scatter, pair block dense
        let d_z0 = heads.link.backward_to_first(&fw.link_cache, &d_link, &mut g_link);
        let w0 = &heads.link.layers[0].w;
        let n = fw.h.nrows();
        let mut d_up: Array2<f64> = Array2::zeros((n, d_z0.ncols()));
        let mut d_uq: Array2<f64> = Array2::zeros((n, d_z0.ncols()));
        for (r, row) in d_z0.rows().into_iter().enumerate() {
            let mut a = d_up.row_mut(t.src[r]);
            a += &row;
            let mut b = d_uq.row_mut(t.dst[r]);
            b += &row;
        }
        {
            let g0 = &mut g_link.layers[0];
            let mut gw = g0.w.slice_mut(s![0..d, ..]);
            gw += &fw.h.t().dot(&d_up);
            let mut gw = g0.w.slice_mut(s![d..2 * d, ..]);
            gw += &fw.h.t().dot(&d_uq);
            let mut gw = g0.w.slice_mut(s![2 * d.., ..]);
            gw += &fw.pair.t().dot(&d_z0);
            g0.b += &d_z0.sum_axis(Axis(0));
        }
        let d_pair = d_z0.dot(&w0.slice(s![2 * d.., ..]).t());
        let sign = (&fw.hp - &fw.hq).mapv(|v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        let d_prod = d_pair.slice(s![.., 0..d]);
        let d_abs = d_pair.slice(s![.., d..2 * d]);
        let d_hp = &(&d_prod * &fw.hq) + &(&d_abs * &sign);
        let d_hq = &(&d_prod * &fw.hp) - &(&d_abs * &sign);

        let mut d_h: Array2<f64> = d_up.dot(&w0.slice(s![0..d, ..]).t()) + d_uq.dot(&w0.slice(s![d..2 * d, ..]).t());
        for (r, (&i, &j)) in t.src.iter().zip(&t.dst).enumerate() {
            let mut row = d_h.row_mut(i);
            row += &d_hp.row(r);
            let mut row = d_h.row_mut(j);
            row += &d_hq.row(r);
        }

        let d_ni = heads.node.backward(&fw.node_cache, &d_node, &mut g_node);
        d_h += &d_ni.slice(s![.., 0..d]);
        d_h += &anchor.agg_in.t().dot(&d_ni.slice(s![.., d..2 * d]));
        d_h += &anchor.agg_out.t().dot(&d_ni.slice(s![.., 2 * d..3 * d]));

        self.encoder.backward(&fw.enc_cache, &d_h, &mut g_enc);
        Ok((
            breakdown,
            Gradients {
                encoder: g_enc,
                link: g_link,
                node: g_node,
            },
        ))
    }

    /// Existence probabilities and residuals for index pairs.
    pub fn score_pairs(&self, horizon: u32, anchor: &AnchorInputs, src: &[usize], dst: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let heads = self.heads_for(horizon)?;
        if src.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let h = self.embed(anchor)?;
        let hp = h.select(Axis(0), src);
        let hq = h.select(Axis(0), dst);
        let pair = Self::pair_block(anchor, &hp, &hq, src, dst);
        let out = heads.link.forward_from_first(Self::link_first_layer(&heads.link, &h, &pair, src, dst)).0;
        let probs = out.column(0).iter().map(|z| sigmoid(*z).clamp(PROB_EPS, 1.0 - PROB_EPS)).collect();
        Ok((probs, out.column(1).to_vec()))
    }

    pub fn node_deltas(&self, horizon: u32, anchor: &AnchorInputs) -> Result<Array1<f64>> {
        let heads = self.heads_for(horizon)?;
        let h = self.embed(anchor)?;
        Ok(heads.node.predict(&Self::node_inputs(anchor, &h)).column(0).to_owned())
    }

    /// Forecast of the graph `horizon` weeks after `fg`, scored on
    /// `candidates` (ordered pairs of `fg`'s nodes).
    pub fn predict(
        &self,
        fg: &FeaturedGraph,
        horizon: u32,
        candidates: &BTreeSet<(ProtocolId, ProtocolId)>,
    ) -> Result<ForecastBundle> {
        self.heads_for(horizon)?;
        let anchor = AnchorInputs::new(fg, &self.scaler)?;
        let mut src = Vec::with_capacity(candidates.len());
        let mut dst = Vec::with_capacity(candidates.len());
        for (p, q) in candidates {
            let i = anchor.position(p).ok_or_else(|| Error::UnknownProtocol(p.clone()))?;
            let j = anchor.position(q).ok_or_else(|| Error::UnknownProtocol(q.clone()))?;
            if i == j {
                return Err(Error::InvalidGraph(format!("self-pair candidate {p}")));
            }
            src.push(i);
            dst.push(j);
        }
        let (probs, residuals) = if anchor.ids.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            self.score_pairs(horizon, &anchor, &src, &dst)?
        };
        let node_delta = if anchor.ids.is_empty() {
            BTreeMap::new()
        } else {
            anchor.ids.iter().cloned().zip(self.node_deltas(horizon, &anchor)?).collect()
        };
        let mut edge_prob = BTreeMap::new();
        let mut edge_logweight = BTreeMap::new();
        for (k, pair) in candidates.iter().enumerate() {
            edge_prob.insert(pair.clone(), probs[k]);
            edge_logweight.insert(
                pair.clone(),
                reconstruct_edge_logweight(anchor.current_logw(src[k], dst[k]), residuals[k]),
            );
        }
        Ok(ForecastBundle {
            origin: fg.graph.interval(),
            horizon,
            edge_prob,
            edge_logweight,
            node_delta,
        })
    }
}

/// Predicted state of the graph `horizon` weeks after `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastBundle {
    pub origin: Interval,
    pub horizon: u32,
    pub edge_prob: BTreeMap<(ProtocolId, ProtocolId), f64>,
    /// Reconstructed `log(1 + w)` at the target week.
    pub edge_logweight: BTreeMap<(ProtocolId, ProtocolId), f64>,
    /// Predicted change of `log(1 + TVL)`.
    pub node_delta: BTreeMap<ProtocolId, f64>,
}

impl ForecastBundle {
    /// Discretizes the forecast into a graph over the origin's nodes:
    /// edges with probability above 0.5 and weight `expm1(log-weight)`
    /// floored at 0; node weights shifted by the predicted log change.
    pub fn materialize(&self, origin: &ExposureGraph) -> Result<ExposureGraph> {
        let nodes: BTreeMap<ProtocolId, f64> = origin
            .nodes()
            .iter()
            .map(|(p, tvl)| {
                let delta = self.node_delta.get(p).copied().unwrap_or(0.0);
                (p.clone(), (tvl.ln_1p() + delta).exp_m1().max(0.0))
            })
            .collect();
        let edges = self
            .edge_prob
            .iter()
            .filter(|(_, prob)| **prob > 0.5)
            .filter_map(|(pair, _)| {
                let w = self.edge_logweight[pair].exp_m1().max(0.0);
                (w > 0.0 && nodes.contains_key(&pair.0) && nodes.contains_key(&pair.1)).then(|| (pair.clone(), w))
            })
            .collect();
        let h = self.horizon;
        ExposureGraph::new(
            Interval {
                start: self.origin.start + h,
                end: self.origin.end + h,
            },
            nodes,
            edges,
        )
    }
}

/// Forecast that the graph stays as it is: current edges get probability
/// `1 − ε`, other candidates `ε`, log-weights carry over, node deltas are 0.
pub fn persistence_predict(
    g: &ExposureGraph,
    horizon: u32,
    candidates: &BTreeSet<(ProtocolId, ProtocolId)>,
) -> ForecastBundle {
    let mut edge_prob = BTreeMap::new();
    let mut edge_logweight = BTreeMap::new();
    for pair in g.edges().keys().chain(candidates.iter()) {
        let w = g.edges().get(pair).copied();
        edge_prob.insert(
            pair.clone(),
            if w.is_some() { 1.0 - PERSISTENCE_EPS } else { PERSISTENCE_EPS },
        );
        edge_logweight.insert(pair.clone(), w.map_or(0.0, f64::ln_1p));
    }
    ForecastBundle {
        origin: g.interval(),
        horizon,
        edge_prob,
        edge_logweight,
        node_delta: g.nodes().keys().map(|p| (p.clone(), 0.0)).collect(),
    }
}
