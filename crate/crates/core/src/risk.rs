//! Systemic-importance scores, sector spillovers, concentration and density
//! measures, and the ΔHHI early-warning rule. Every function here is a pure
//! functional of a graph, so it applies equally to observed and predicted
//! graphs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CategoryMap, ExposureGraph, ProtocolId};
use crate::util::sample_std;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageRankConfig {
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for PageRankConfig {
    fn default() -> Self {
        PageRankConfig {
            damping: 0.85,
            max_iters: 200,
            tol: 1e-12,
        }
    }
}

/// Edge-weighted PageRank; dangling mass is spread uniformly.
pub fn pagerank(g: &ExposureGraph, cfg: PageRankConfig) -> BTreeMap<ProtocolId, f64> {
    let ig = g.indexed();
    let n = ig.len();
    if n == 0 {
        return BTreeMap::new();
    }
    let out_strength: Vec<f64> = ig.out.iter().map(|es| es.iter().map(|(_, w)| w).sum()).collect();
    let nf = n as f64;
    let mut rank = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    for _ in 0..cfg.max_iters {
        let dangling: f64 = (0..n).filter(|&i| out_strength[i] == 0.0).map(|i| rank[i]).sum();
        let base = (1.0 - cfg.damping) / nf + cfg.damping * dangling / nf;
        next.iter_mut().for_each(|x| *x = base);
        for (i, es) in ig.out.iter().enumerate() {
            if out_strength[i] == 0.0 {
                continue;
            }
            let share = cfg.damping * rank[i] / out_strength[i];
            for &(j, w) in es {
                next[j] += share * w;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let diff: f64 = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rank, &mut next);
        if diff < cfg.tol {
            break;
        }
    }
    ig.ids.into_iter().zip(rank).collect()
}

/// Share of `p`'s outgoing exposure held in its `k` largest edges.
pub fn tail_exposure(g: &ExposureGraph, p: &ProtocolId, k: usize) -> Result<f64> {
    if !g.contains(p) {
        return Err(Error::UnknownProtocol(p.clone()));
    }
    let mut ws: Vec<f64> = g.out_edges(p).map(|(_, w)| w).collect();
    let total: f64 = ws.iter().sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    ws.sort_by(|a, b| b.total_cmp(a));
    let top: f64 = ws.iter().take(k).sum();
    Ok((top / total).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SisWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl SisWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = SisWeights { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.alpha, self.beta, self.gamma].iter().all(|x| x.is_finite() && *x >= 0.0)
            && (self.alpha + self.beta + self.gamma - 1.0).abs() <= 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("SIS weights {self:?} must be non-negative and sum to 1")))
        }
    }
}

impl Default for SisWeights {
    fn default() -> Self {
        SisWeights {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
        }
    }
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Systemic importance score per protocol, in `[0, 1]`.
///
/// PageRank and `ln(1 + TVL)` are min-max normalized over the graph's nodes;
/// a constant component normalizes to 0.
pub fn sis(g: &ExposureGraph, w: SisWeights, k: usize) -> BTreeMap<ProtocolId, f64> {
    sis_with(g, w, k, PageRankConfig::default())
}

pub fn sis_with(g: &ExposureGraph, w: SisWeights, k: usize, pr: PageRankConfig) -> BTreeMap<ProtocolId, f64> {
    if g.node_count() == 0 {
        return BTreeMap::new();
    }
    let ranks = pagerank(g, pr);
    let ids: Vec<&ProtocolId> = g.nodes().keys().collect();
    let pr_norm = min_max(&ids.iter().map(|p| ranks[*p]).collect::<Vec<_>>());
    let tvl_norm = min_max(&g.nodes().values().map(|v| v.ln_1p()).collect::<Vec<_>>());
    ids.iter()
        .enumerate()
        .map(|(i, p)| {
            let tail = tail_exposure(g, p, k).expect("node of g");
            let s = w.alpha * pr_norm[i] + w.beta * tail + w.gamma * tvl_norm[i];
            ((*p).clone(), s.clamp(0.0, 1.0))
        })
        .collect()
}

/// Protocols sorted by descending score, ties by id.
pub fn top_k(scores: &BTreeMap<ProtocolId, f64>, k: usize) -> Vec<(ProtocolId, f64)> {
    let mut v: Vec<(ProtocolId, f64)> = scores.iter().map(|(p, s)| (p.clone(), *s)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpilloverMatrix {
    /// Sector labels, sorted; row/column order of `values`.
    pub sectors: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SpilloverMatrix {
    pub fn total(&self) -> f64 {
        self.values.iter().flatten().sum()
    }

    pub fn get(&self, from: &str, to: &str) -> Option<f64> {
        let i = self.sectors.iter().position(|s| s == from)?;
        let j = self.sectors.iter().position(|s| s == to)?;
        Some(self.values[i][j])
    }

    pub fn off_diagonal(&self) -> Vec<f64> {
        let k = self.sectors.len();
        let mut out = Vec::with_capacity(k * k.saturating_sub(1));
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    out.push(self.values[i][j]);
                }
            }
        }
        out
    }
}

/// `S[i][j]` = total edge weight from sector `i` protocols to sector `j`.
pub fn spillover_matrix(g: &ExposureGraph, category_of: &CategoryMap) -> Result<SpilloverMatrix> {
    let missing: Vec<ProtocolId> = g
        .nodes()
        .keys()
        .filter(|p| !category_of.contains_key(*p))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCategory(missing));
    }
    let sectors: Vec<String> = g
        .nodes()
        .keys()
        .map(|p| category_of[p].clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let k = sectors.len();
    let mut values = vec![vec![0.0; k]; k];
    let pos = |p: &ProtocolId| sectors.binary_search(&category_of[p]).expect("sector listed");
    for ((p, q), w) in g.edges() {
        values[pos(p)][pos(q)] += w;
    }
    Ok(SpilloverMatrix { sectors, values })
}

/// Herfindahl–Hirschman index on shares: `Σ (v_i / Σv)²`.
pub fn hhi(values: &[f64]) -> Result<f64> {
    let total: f64 = values.iter().sum();
    if values.is_empty() || total <= 0.0 {
        return Err(Error::AllZero);
    }
    Ok(values.iter().map(|v| (v / total).powi(2)).sum())
}

/// HHI of the off-diagonal spillover entries.
pub fn spillover_index(s: &SpilloverMatrix) -> Result<f64> {
    hhi(&s.off_diagonal())
}

pub fn network_density(g: &ExposureGraph) -> Result<f64> {
    let n = g.node_count();
    if n < 2 {
        return Err(Error::TooFewNodes(n));
    }
    Ok(g.edge_count() as f64 / (n * (n - 1)) as f64)
}

pub const DEFAULT_WARNING_WINDOW: usize = 26;

/// Flags week `t` when `hhi_t - hhi_{t-1}` exceeds twice the sample standard
/// deviation of the previous `window` first differences. Weeks without a
/// full trailing window are never flagged.
pub fn early_warning(series: &[(u32, f64)], window: usize) -> Vec<(u32, bool)> {
    let deltas: Vec<f64> = series.windows(2).map(|w| w[1].1 - w[0].1).collect();
    series
        .iter()
        .enumerate()
        .map(|(t, (week, _))| {
            // delta of week t is deltas[t - 1]; its trailing window is
            // deltas[t - 1 - window .. t - 1]
            let flagged = window >= 2
                && t > window
                && {
                    let d = deltas[t - 1];
                    let sigma = sample_std(&deltas[t - 1 - window..t - 1]);
                    d > 2.0 * sigma
                };
            (*week, flagged)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskConfig {
    pub sis_weights: SisWeights,
    pub tail_k: usize,
    pub top_k: usize,
    pub pagerank: PageRankConfig,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            sis_weights: SisWeights::default(),
            tail_k: 5,
            top_k: 10,
            pagerank: PageRankConfig::default(),
        }
    }
}

/// Per-week risk measurements. Measures undefined on the graph (too few
/// nodes, no edges) are `None` and named in `degenerate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub week: u32,
    pub nodes: usize,
    pub edges: usize,
    pub sis: BTreeMap<ProtocolId, f64>,
    pub top_sis: Vec<(ProtocolId, f64)>,
    pub spillover: SpilloverMatrix,
    pub spillover_index: Option<f64>,
    pub density: Option<f64>,
    pub tvl_hhi: Option<f64>,
    pub edge_hhi: Option<f64>,
    pub mean_sis: Option<f64>,
    pub degenerate: Vec<String>,
}

impl RiskReport {
    /// Scalar measures by name, in a fixed order.
    pub fn scalar_metrics(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("density", self.density),
            ("tvl_hhi", self.tvl_hhi),
            ("edge_hhi", self.edge_hhi),
            ("spillover_index", self.spillover_index),
            ("mean_sis", self.mean_sis),
        ]
    }
}

pub fn risk_report(g: &ExposureGraph, category_of: &CategoryMap, cfg: &RiskConfig) -> Result<RiskReport> {
    cfg.sis_weights.validate()?;
    let spillover = spillover_matrix(g, category_of)?;
    let mut degenerate = Vec::new();
    let mut note = |name: &str, r: Result<f64>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            degenerate.push(format!("{name}: {e}"));
            None
        }
    };
    let spillover_index = note("spillover_index", spillover_index(&spillover));
    let density = note("density", network_density(g));
    let tvl_hhi = note("tvl_hhi", hhi(&g.nodes().values().copied().collect::<Vec<_>>()));
    let edge_hhi = note("edge_hhi", hhi(&g.edges().values().copied().collect::<Vec<_>>()));
    let scores = sis_with(g, cfg.sis_weights, cfg.tail_k, cfg.pagerank);
    let mean_sis = if scores.is_empty() {
        degenerate.push("mean_sis: empty graph".into());
        None
    } else {
        Some(scores.values().sum::<f64>() / scores.len() as f64)
    };
    Ok(RiskReport {
        week: g.week(),
        nodes: g.node_count(),
        edges: g.edge_count(),
        top_sis: top_k(&scores, cfg.top_k),
        sis: scores,
        spillover,
        spillover_index,
        density,
        tvl_hhi,
        edge_hhi,
        mean_sis,
        degenerate,
    })
}
