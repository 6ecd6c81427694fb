//! Independent re-implementations used as test oracles. They share no
//! code with the library beyond its public data types.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use dexp_core::graph::{ExposureGraph, HoldingsSnapshot, IssuerMap, ProtocolId, TokenId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random snapshot pair over `n_protocols` protocols and `n_tokens` tokens.
/// With `coarse` values sit on a grid of multiples of 10 (so sums are exact
/// in any order and zero changes are common); otherwise they are continuous.
/// Sells, buys and unchanged holdings all occur; about a third of tokens
/// have an issuer.
pub fn random_snapshot_pair(rng: &mut ChaCha8Rng, n_protocols: usize, n_tokens: usize, coarse: bool) -> (HoldingsSnapshot, HoldingsSnapshot, IssuerMap) {
    let protocols: Vec<ProtocolId> = (0..n_protocols).map(|i| ProtocolId::new(format!("p{i:02}"))).collect();
    let tokens: Vec<TokenId> = (0..n_tokens).map(|i| TokenId::new(format!("chain:t{i:03}"))).collect();
    let mut issuers = IssuerMap::new();
    for t in &tokens {
        if rng.random_bool(0.35) {
            issuers.insert(t.clone(), protocols[rng.random_range(0..n_protocols)].clone());
        }
    }
    let mut s1 = HoldingsSnapshot::new(0, "2024-01-01");
    let mut s2 = HoldingsSnapshot::new(1, "2024-01-08");
    for (i, p) in protocols.iter().enumerate() {
        let (mut h1, mut h2) = (BTreeMap::new(), BTreeMap::new());
        if i == 0 {
            // neither snapshot may be empty
            h1.insert(TokenId::new("chain:anchor"), 1.0);
            h2.insert(TokenId::new("chain:anchor"), 1.0);
        }
        for _ in 0..rng.random_range(0..=6) {
            let t = &tokens[rng.random_range(0..n_tokens)];
            let unchanged = rng.random_range(0..4) == 0;
            let mut draw = || {
                if coarse {
                    rng.random_range(0..5) as f64 * 10.0
                } else {
                    rng.random_range(0.0..50.0)
                }
            };
            let v1 = draw();
            let v2 = if unchanged { v1 } else { draw() };
            let both = rng.random_bool(0.6);
            if both || rng.random_bool(0.5) {
                h1.insert(t.clone(), v1);
            }
            if both || rng.random_bool(0.5) {
                h2.insert(t.clone(), v2);
            }
        }
        if !h1.is_empty() || rng.random_bool(0.5) {
            s1.insert(p.clone(), "chain", "cat", h1).unwrap();
        }
        if !h2.is_empty() || rng.random_bool(0.5) {
            s2.insert(p.clone(), "chain", "cat", h2).unwrap();
        }
    }
    (s1, s2, issuers)
}

/// Token-level edge weights written directly from the definitions: node
/// weight over the token intersection, pruning first, then for every
/// token and every other holder the piecewise flow toward the issuer.
pub fn brute_force_edges(s1: &HoldingsSnapshot, s2: &HoldingsSnapshot, issuers: &IssuerMap, theta: f64) -> BTreeMap<(ProtocolId, ProtocolId), f64> {
    let value = |s: &HoldingsSnapshot, p: &ProtocolId, t: &TokenId| s.value(p, t).unwrap_or(0.0);
    let mut all: BTreeSet<ProtocolId> = s1.protocols.keys().cloned().collect();
    all.extend(s2.protocols.keys().cloned());
    let kept: BTreeSet<ProtocolId> = all
        .into_iter()
        .filter(|p| {
            let mut w = 0.0;
            if let (Some(a), Some(b)) = (s1.protocols.get(p), s2.protocols.get(p)) {
                for t in a.tokens.keys() {
                    if b.tokens.contains_key(t) {
                        w += b.tokens[t];
                    }
                }
            }
            w >= theta
        })
        .collect();
    let mut out = BTreeMap::new();
    for p in &kept {
        for q in &kept {
            if p == q {
                continue;
            }
            let mut total = 0.0;
            let mut held: BTreeSet<&TokenId> = BTreeSet::new();
            if let Some(h) = s1.protocols.get(p) {
                held.extend(h.tokens.keys());
            }
            if let Some(h) = s2.protocols.get(p) {
                held.extend(h.tokens.keys());
            }
            for t in held {
                if issuers.get(t) != Some(q) {
                    continue;
                }
                let dp = value(s2, p, t) - value(s1, p, t);
                let dq = value(s2, q, t) - value(s1, q, t);
                let flow = if dp < 0.0 {
                    -dp
                } else if dq >= 0.0 {
                    dq
                } else {
                    0.0
                };
                total += flow;
            }
            if total > 0.0 {
                out.insert((p.clone(), q.clone()), total);
            }
        }
    }
    out
}

/// Outcome of the naive simulator, indexed like `tvl`.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveOutcome {
    pub losses: Vec<f64>,
    pub distressed: Vec<bool>,
    pub depth: usize,
}

/// Queue-based loss propagation over a dense exposure matrix
/// `w[i][j]` = weight of edge i -> j (i holds claims on j). Each queue
/// generation is one round; a node enters the queue at most once.
pub fn naive_contagion(tvl: &[f64], w: &[Vec<f64>], shocked: &[(usize, f64)], tau: f64) -> NaiveOutcome {
    let n = tvl.len();
    let mut loss = vec![0.0; n];
    let mut distressed = vec![false; n];
    let mut queue: VecDeque<(usize, usize, f64)> = VecDeque::new();
    let mut initial: Vec<usize> = Vec::new();
    for &(i, d) in shocked {
        loss[i] = (d * tvl[i]).min(tvl[i]);
        distressed[i] = true;
        initial.push(i);
    }
    initial.sort();
    for i in initial {
        queue.push_back((1, i, loss[i]));
    }
    let mut depth = 0;
    let mut round = 1;
    while !queue.is_empty() {
        // drain one generation
        let mut moved = false;
        while let Some(&(r, debtor, amount)) = queue.front() {
            if r != round {
                break;
            }
            queue.pop_front();
            let total: f64 = (0..n).map(|c| w[c][debtor]).sum();
            if amount <= 0.0 || total <= 0.0 {
                continue;
            }
            for c in 0..n {
                if w[c][debtor] > 0.0 {
                    let share = amount * w[c][debtor] / total;
                    if share > 0.0 {
                        moved = true;
                    }
                    loss[c] = (loss[c] + share).min(tvl[c]);
                }
            }
        }
        if moved {
            depth = round;
        }
        for i in 0..n {
            if !distressed[i] && loss[i] > tau * tvl[i] {
                distressed[i] = true;
                queue.push_back((round + 1, i, loss[i]));
            }
        }
        round += 1;
    }
    NaiveOutcome {
        losses: loss,
        distressed,
        depth,
    }
}

/// Dense matrix view of a graph in node-id order.
pub fn dense(g: &ExposureGraph) -> (Vec<ProtocolId>, Vec<f64>, Vec<Vec<f64>>) {
    let ids: Vec<ProtocolId> = g.nodes().keys().cloned().collect();
    let tvl = g.nodes().values().copied().collect();
    let n = ids.len();
    let mut w = vec![vec![0.0; n]; n];
    for (i, p) in ids.iter().enumerate() {
        for (j, q) in ids.iter().enumerate() {
            if let Some(x) = g.edge_weight(p, q) {
                w[i][j] = x;
            }
        }
    }
    (ids, tvl, w)
}

/// AUROC by counting every positive/negative pair.
pub fn auroc_pairs(scores: &[(f64, bool)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (sp, yp) in scores {
        if !*yp {
            continue;
        }
        for (sn, yn) in scores {
            if *yn {
                continue;
            }
            den += 1.0;
            if sp > sn {
                num += 1.0;
            } else if sp == sn {
                num += 0.5;
            }
        }
    }
    num / den
}

/// AUPRC by enumerating every distinct threshold from high to low and
/// recounting the confusion matrix each time.
pub fn auprc_thresholds(scores: &[(f64, bool)]) -> f64 {
    let pos = scores.iter().filter(|(_, y)| *y).count() as f64;
    let mut thresholds: Vec<f64> = scores.iter().map(|(s, _)| *s).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = scores.iter().filter(|(s, y)| *y && *s >= t).count() as f64;
        let fp = scores.iter().filter(|(s, y)| !*y && *s >= t).count() as f64;
        let recall = tp / pos;
        area += (recall - prev_recall) * (tp / (tp + fp));
        prev_recall = recall;
    }
    area
}

/// Random scored labels of length `n` with both classes present; scores
/// come from a small set so ties are frequent.
pub fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, bool)> {
    loop {
        let levels = rng.random_range(1..=n.max(2));
        let v: Vec<(f64, bool)> = (0..n)
            .map(|_| (rng.random_range(0..levels) as f64 / levels as f64, rng.random_bool(0.4)))
            .collect();
        if v.iter().any(|x| x.1) && v.iter().any(|x| !x.1) {
            return v;
        }
    }
}

pub const TAU_GRID: [f64; 3] = [0.05, 0.1, 0.5];
pub const DELTA_GRID: [f64; 3] = [0.1, 0.5, 1.0];

/// Node TVLs and edge weights used for enumerated topologies; varied enough
/// that both the distress threshold and the TVL cap bind somewhere.
pub const ENUM_TVL: [f64; 6] = [100.0, 40.0, 250.0, 15.0, 80.0, 60.0];

pub fn enum_weight(i: usize, j: usize) -> f64 {
    1.0 + ((i * 7 + j * 3) % 5) as f64 * 0.75
}

/// Ordered pairs (i, j), i != j, in the bit order used by `bits_graph`.
pub fn pair_list(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect()
}

/// Graph on nodes `n0..` whose edge set is given by the bits of `mask`
/// over `pair_list(n)`.
pub fn bits_graph(n: usize, pairs: &[(usize, usize)], mask: u64, tvl: &[f64], weight: impl Fn(usize, usize) -> f64) -> (ExposureGraph, Vec<Vec<f64>>) {
    let ids: Vec<ProtocolId> = (0..n).map(|i| ProtocolId::new(format!("n{i}"))).collect();
    let nodes: BTreeMap<ProtocolId, f64> = ids.iter().cloned().zip(tvl.iter().copied()).collect();
    let mut edges = BTreeMap::new();
    let mut w = vec![vec![0.0; n]; n];
    for (b, &(i, j)) in pairs.iter().enumerate() {
        if mask >> b & 1 == 1 {
            w[i][j] = weight(i, j);
            edges.insert((ids[i].clone(), ids[j].clone()), w[i][j]);
        }
    }
    let g = ExposureGraph::new(dexp_core::graph::Interval { start: 0, end: 1 }, nodes, edges).unwrap();
    (g, w)
}

/// Runs the library and the naive simulator on one instance and reports the
/// first difference, if any. Losses are compared bit for bit.
pub fn contagion_mismatch(g: &ExposureGraph, tvl: &[f64], w: &[Vec<f64>], targets: &[usize], delta0: f64, tau: f64) -> Option<String> {
    let ids: Vec<ProtocolId> = g.nodes().keys().cloned().collect();
    let shocked: Vec<(ProtocolId, f64)> = targets.iter().map(|&i| (ids[i].clone(), delta0)).collect();
    let lib = dexp_core::contagion::run_contagion(g, &shocked, tau).unwrap();
    let naive = naive_contagion(tvl, w, &targets.iter().map(|&i| (i, delta0)).collect::<Vec<_>>(), tau);
    let lib_losses: Vec<f64> = lib.losses.values().copied().collect();
    let lib_distressed: BTreeSet<&ProtocolId> = lib.rounds.iter().flatten().collect();
    let naive_distressed: BTreeSet<&ProtocolId> = ids.iter().zip(&naive.distressed).filter(|(_, d)| **d).map(|(p, _)| p).collect();
    let same_losses = lib_losses.len() == naive.losses.len() && lib_losses.iter().zip(&naive.losses).all(|(a, b)| a.to_bits() == b.to_bits());
    let naive_sum: f64 = naive.losses.iter().sum();
    if !same_losses || lib_distressed != naive_distressed || lib.depth != naive.depth || lib.system_loss_usd.to_bits() != naive_sum.to_bits() {
        return Some(format!(
            "targets {targets:?} delta0 {delta0} tau {tau}: library {lib_losses:?} depth {} vs naive {:?} depth {}",
            lib.depth, naive.losses, naive.depth
        ));
    }
    None
}

/// Every topology on `n` nodes with every non-empty target subset (or only
/// `{0}` when `single_target`), over the full tau/delta0 grid. Returns the
/// number of simulated instances.
pub fn contagion_exhaustive(n: usize, single_target: bool) -> Result<usize, String> {
    let pairs = pair_list(n);
    let subsets: Vec<Vec<usize>> = if single_target {
        vec![vec![0]]
    } else {
        (1u32..1 << n).map(|s| (0..n).filter(|i| s >> i & 1 == 1).collect()).collect()
    };
    let mut count = 0;
    for mask in 0..1u64 << pairs.len() {
        let (g, w) = bits_graph(n, &pairs, mask, &ENUM_TVL[..n], enum_weight);
        for targets in &subsets {
            for tau in TAU_GRID {
                for d in DELTA_GRID {
                    if let Some(m) = contagion_mismatch(&g, &ENUM_TVL[..n], &w, targets, d, tau) {
                        return Err(format!("n={n} mask={mask:#x}: {m}"));
                    }
                    count += 1;
                }
            }
        }
    }
    Ok(count)
}

/// Uniformly random topologies on `n` nodes with random weights, TVLs and
/// target sets, over the full grid.
pub fn contagion_sampled(rng: &mut ChaCha8Rng, n: usize, samples: usize) -> Result<usize, String> {
    let pairs = pair_list(n);
    let mut count = 0;
    for _ in 0..samples {
        let mask = rng.random::<u64>() & ((1u64 << pairs.len()) - 1);
        let tvl: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..500.0)).collect();
        let wts: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.1..50.0)).collect();
        let (g, w) = bits_graph(n, &pairs, mask, &tvl, |i, j| wts[i * n + j]);
        let targets: Vec<usize> = loop {
            let t: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.3)).collect();
            if !t.is_empty() {
                break t;
            }
        };
        for tau in TAU_GRID {
            for d in DELTA_GRID {
                if let Some(m) = contagion_mismatch(&g, &tvl, &w, &targets, d, tau) {
                    return Err(format!("n={n} mask={mask:#x}: {m}"));
                }
                count += 1;
            }
        }
    }
    Ok(count)
}
