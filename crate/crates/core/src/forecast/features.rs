//! Tabular node descriptors fed to the encoder.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{CategoryMap, ExposureGraph, HoldingsSnapshot, ProtocolId};

/// Sector labels known to the one-hot block; anything else maps to a
/// trailing "other" slot.
pub const DEFAULT_SECTORS: [&str; 15] = [
    "algo-stables",
    "bridge",
    "cdp",
    "derivatives",
    "dexes",
    "insurance",
    "launchpad",
    "lending",
    "liquid-staking",
    "restaking",
    "rwa",
    "services",
    "staking-pool",
    "yield",
    "yield-aggregator",
];

pub fn default_sectors() -> Vec<String> {
    DEFAULT_SECTORS.iter().map(|s| s.to_string()).collect()
}

pub const NUMERIC_FEATURES: usize = 8;

pub const NUMERIC_FEATURE_NAMES: [&str; NUMERIC_FEATURES] = [
    "log_tvl",
    "log_token_types",
    "top5_concentration",
    "holdings_entropy",
    "log_in_degree",
    "log_out_degree",
    "log_in_strength",
    "log_out_strength",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatures {
    pub numeric: [f64; NUMERIC_FEATURES],
    /// Index into the sector list; `n_sectors - 1` is "other".
    pub sector: usize,
    pub n_sectors: usize,
}

impl NodeFeatures {
    pub fn dim(&self) -> usize {
        NUMERIC_FEATURES + self.n_sectors
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.numeric.to_vec();
        v.extend((0..self.n_sectors).map(|i| if i == self.sector { 1.0 } else { 0.0 }));
        v
    }
}

pub fn sector_index(label: Option<&String>, sectors: &[String]) -> usize {
    label
        .and_then(|l| sectors.iter().position(|s| s == l))
        .unwrap_or(sectors.len())
}

/// Descriptors for every node of `g`; holdings statistics come from
/// `snapshot` (the observation at the end of the interval).
pub fn node_features(
    g: &ExposureGraph,
    snapshot: Option<&HoldingsSnapshot>,
    categories: &CategoryMap,
    sectors: &[String],
) -> BTreeMap<ProtocolId, NodeFeatures> {
    let mut in_deg: BTreeMap<&ProtocolId, (usize, f64)> = BTreeMap::new();
    let mut out_deg: BTreeMap<&ProtocolId, (usize, f64)> = BTreeMap::new();
    for ((p, q), w) in g.edges() {
        let o = out_deg.entry(p).or_default();
        o.0 += 1;
        o.1 += w;
        let i = in_deg.entry(q).or_default();
        i.0 += 1;
        i.1 += w;
    }
    g.nodes()
        .iter()
        .map(|(p, tvl)| {
            let mut values: Vec<f64> = snapshot
                .and_then(|s| s.protocols.get(p))
                .map(|h| h.tokens.values().copied().filter(|v| *v > 0.0).collect())
                .unwrap_or_default();
            values.sort_by(|a, b| b.total_cmp(a));
            let total: f64 = values.iter().sum();
            let (top5, entropy) = if total > 0.0 {
                let top5 = values.iter().take(5).sum::<f64>() / total;
                let entropy = -values
                    .iter()
                    .map(|v| v / total)
                    .map(|s| s * s.ln())
                    .sum::<f64>();
                (top5, entropy)
            } else {
                (0.0, 0.0)
            };
            let (ind, ins) = in_deg.get(p).copied().unwrap_or_default();
            let (outd, outs) = out_deg.get(p).copied().unwrap_or_default();
            let f = NodeFeatures {
                numeric: [
                    tvl.ln_1p(),
                    (values.len() as f64).ln_1p(),
                    top5,
                    entropy,
                    (ind as f64).ln_1p(),
                    (outd as f64).ln_1p(),
                    ins.ln_1p(),
                    outs.ln_1p(),
                ],
                sector: sector_index(categories.get(p), sectors),
                n_sectors: sectors.len() + 1,
            };
            (p.clone(), f)
        })
        .collect()
}

/// A graph together with the descriptors of its nodes.
#[derive(Debug, Clone)]
pub struct FeaturedGraph {
    pub graph: ExposureGraph,
    pub features: BTreeMap<ProtocolId, NodeFeatures>,
}

impl FeaturedGraph {
    pub fn new(
        graph: ExposureGraph,
        snapshot: Option<&HoldingsSnapshot>,
        categories: &CategoryMap,
        sectors: &[String],
    ) -> Self {
        let features = node_features(&graph, snapshot, categories, sectors);
        FeaturedGraph { graph, features }
    }
}

/// Standardizes the numeric block; the one-hot block passes through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn identity() -> Self {
        FeatureScaler {
            mean: vec![0.0; NUMERIC_FEATURES],
            std: vec![1.0; NUMERIC_FEATURES],
        }
    }

    pub fn fit<'a>(features: impl IntoIterator<Item = &'a NodeFeatures>) -> Self {
        let rows: Vec<&NodeFeatures> = features.into_iter().collect();
        if rows.is_empty() {
            return Self::identity();
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; NUMERIC_FEATURES];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.numeric) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; NUMERIC_FEATURES];
        for r in &rows {
            for ((s, v), m) in std.iter_mut().zip(r.numeric).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut std {
            *s = s.sqrt();
            if *s < 1e-9 {
                *s = 1.0;
            }
        }
        FeatureScaler { mean, std }
    }

    pub fn transform(&self, f: &NodeFeatures) -> Vec<f64> {
        let mut v = f.to_vec();
        for i in 0..NUMERIC_FEATURES {
            v[i] = (v[i] - self.mean[i]) / self.std[i];
        }
        v
    }
}
