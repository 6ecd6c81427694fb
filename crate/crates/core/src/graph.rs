//! Weekly exposure graphs built from paired holdings snapshots.
//!
//! An edge `p -> q` means protocol `p` holds tokens issued by `q`, so `p`
//! carries credit exposure to `q`. Node weights are the USD value of the
//! tokens a protocol held at both ends of the interval, valued at the end.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::round6;

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                $name(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }
    };
}

string_id!(TokenId);
string_id!(ProtocolId);

/// Token → issuing protocol.
pub type IssuerMap = BTreeMap<TokenId, ProtocolId>;

/// Protocol → sector label.
pub type CategoryMap = BTreeMap<ProtocolId, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolHoldings {
    pub chain: String,
    pub category: String,
    pub tokens: BTreeMap<TokenId, f64>,
}

/// Token holdings of every protocol at one weekly observation.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldingsSnapshot {
    pub week: u32,
    pub observed_at: String,
    pub protocols: BTreeMap<ProtocolId, ProtocolHoldings>,
}

impl HoldingsSnapshot {
    pub fn new(week: u32, observed_at: impl Into<String>) -> Self {
        HoldingsSnapshot {
            week,
            observed_at: observed_at.into(),
            protocols: BTreeMap::new(),
        }
    }

    /// Adds one protocol's holdings, rejecting negative or non-finite values
    /// and duplicate protocol records.
    pub fn insert(
        &mut self,
        protocol: ProtocolId,
        chain: impl Into<String>,
        category: impl Into<String>,
        holdings: impl IntoIterator<Item = (TokenId, f64)>,
    ) -> Result<()> {
        if protocol.as_str().is_empty() {
            return Err(Error::InvalidSnapshot("empty protocol id".into()));
        }
        if self.protocols.contains_key(&protocol) {
            return Err(Error::InvalidSnapshot(format!(
                "duplicate protocol `{protocol}` in week {}",
                self.week
            )));
        }
        let mut tokens = BTreeMap::new();
        for (token, usd) in holdings {
            if token.as_str().is_empty() {
                return Err(Error::InvalidSnapshot("empty token id".into()));
            }
            if !usd.is_finite() || usd < 0.0 {
                return Err(Error::InvalidSnapshot(format!(
                    "usd_value {usd} for ({protocol}, {token}) in week {}",
                    self.week
                )));
            }
            if tokens.insert(token.clone(), usd).is_some() {
                return Err(Error::InvalidSnapshot(format!(
                    "duplicate pair ({protocol}, {token}) in week {}",
                    self.week
                )));
            }
        }
        self.protocols.insert(
            protocol,
            ProtocolHoldings {
                chain: chain.into(),
                category: category.into(),
                tokens,
            },
        );
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.protocols.values().all(|h| h.tokens.is_empty())
    }

    pub fn value(&self, protocol: &ProtocolId, token: &TokenId) -> Option<f64> {
        self.protocols.get(protocol)?.tokens.get(token).copied()
    }

    pub fn categories(&self) -> CategoryMap {
        self.protocols
            .iter()
            .map(|(p, h)| (p.clone(), h.category.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub start: u32,
    pub end: u32,
}

/// Weighted directed exposure graph for one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureGraph {
    interval: Interval,
    nodes: BTreeMap<ProtocolId, f64>,
    edges: BTreeMap<(ProtocolId, ProtocolId), f64>,
}

impl ExposureGraph {
    /// Validates and assembles a graph: non-negative node weights, strictly
    /// positive edge weights, no self-loops, every endpoint a node.
    pub fn new(
        interval: Interval,
        nodes: BTreeMap<ProtocolId, f64>,
        edges: BTreeMap<(ProtocolId, ProtocolId), f64>,
    ) -> Result<Self> {
        for (p, w) in &nodes {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::InvalidGraph(format!("node {p} has weight {w}")));
            }
        }
        for ((p, q), w) in &edges {
            if p == q {
                return Err(Error::InvalidGraph(format!("self-loop on {p}")));
            }
            if !w.is_finite() || *w <= 0.0 {
                return Err(Error::InvalidGraph(format!("edge {p}->{q} has weight {w}")));
            }
            if !nodes.contains_key(p) || !nodes.contains_key(q) {
                return Err(Error::InvalidGraph(format!(
                    "edge {p}->{q} has an endpoint outside the node set"
                )));
            }
        }
        Ok(ExposureGraph {
            interval,
            nodes,
            edges,
        })
    }

    pub fn empty(interval: Interval) -> Self {
        ExposureGraph {
            interval,
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
        }
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    /// The week the graph describes (end of its interval).
    pub fn week(&self) -> u32 {
        self.interval.end
    }

    pub fn nodes(&self) -> &BTreeMap<ProtocolId, f64> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeMap<(ProtocolId, ProtocolId), f64> {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn tvl(&self, p: &ProtocolId) -> Option<f64> {
        self.nodes.get(p).copied()
    }

    pub fn edge_weight(&self, p: &ProtocolId, q: &ProtocolId) -> Option<f64> {
        self.edges.get(&(p.clone(), q.clone())).copied()
    }

    pub fn contains(&self, p: &ProtocolId) -> bool {
        self.nodes.contains_key(p)
    }

    pub fn total_tvl(&self) -> f64 {
        self.nodes.values().sum()
    }

    pub fn total_edge_weight(&self) -> f64 {
        self.edges.values().sum()
    }

    pub fn edge_set(&self) -> BTreeSet<(ProtocolId, ProtocolId)> {
        self.edges.keys().cloned().collect()
    }

    /// Outgoing edges of `p` as `(dst, weight)`, ordered by destination.
    pub fn out_edges<'a>(&'a self, p: &'a ProtocolId) -> impl Iterator<Item = (&'a ProtocolId, f64)> + 'a {
        self.edges
            .range((p.clone(), ProtocolId::new(String::new()))..)
            .take_while(move |((src, _), _)| src == p)
            .map(|((_, dst), w)| (dst, *w))
    }

    /// Sub-graph induced by `keep`.
    pub fn restrict_to(&self, keep: &BTreeSet<ProtocolId>) -> ExposureGraph {
        ExposureGraph {
            interval: self.interval,
            nodes: self
                .nodes
                .iter()
                .filter(|(p, _)| keep.contains(*p))
                .map(|(p, w)| (p.clone(), *w))
                .collect(),
            edges: self
                .edges
                .iter()
                .filter(|((p, q), _)| keep.contains(p) && keep.contains(q))
                .map(|(k, w)| (k.clone(), *w))
                .collect(),
        }
    }

    pub fn node_set(&self) -> BTreeSet<ProtocolId> {
        self.nodes.keys().cloned().collect()
    }

    /// Dense integer-indexed view for the numeric kernels.
    pub fn indexed(&self) -> IndexedGraph {
        let ids: Vec<ProtocolId> = self.nodes.keys().cloned().collect();
        let index: BTreeMap<&ProtocolId, usize> = ids.iter().enumerate().map(|(i, p)| (p, i)).collect();
        let n = ids.len();
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        for ((p, q), w) in &self.edges {
            let (i, j) = (index[p], index[q]);
            out[i].push((j, *w));
            inc[j].push((i, *w));
        }
        IndexedGraph {
            tvl: self.nodes.values().copied().collect(),
            ids,
            out,
            inc,
        }
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            interval: [self.interval.start, self.interval.end],
            nodes: self
                .nodes
                .iter()
                .map(|(id, w)| NodeJson {
                    id: id.clone(),
                    weight: round6(*w),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .filter(|(_, w)| round6(**w) > 0.0)
                .map(|((src, dst), w)| EdgeJson {
                    src: src.clone(),
                    dst: dst.clone(),
                    weight: round6(*w),
                })
                .collect(),
        }
    }

    pub fn from_json(json: GraphJson) -> Result<Self> {
        let interval = Interval {
            start: json.interval[0],
            end: json.interval[1],
        };
        let mut nodes = BTreeMap::new();
        for n in json.nodes {
            if nodes.insert(n.id.clone(), n.weight).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate node {}", n.id)));
            }
        }
        let mut edges = BTreeMap::new();
        for e in json.edges {
            if edges.insert((e.src.clone(), e.dst.clone()), e.weight).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate edge {}->{}", e.src, e.dst)));
            }
        }
        ExposureGraph::new(interval, nodes, edges)
    }

    /// Serialized form, weights rounded to 6 decimals.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("graph serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeJson {
    pub id: ProtocolId,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeJson {
    pub src: ProtocolId,
    pub dst: ProtocolId,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphJson {
    pub interval: [u32; 2],
    pub nodes: Vec<NodeJson>,
    pub edges: Vec<EdgeJson>,
}

/// Integer-indexed adjacency lists; `ids` is sorted, so index order matches
/// protocol-id order.
#[derive(Debug, Clone)]
pub struct IndexedGraph {
    pub ids: Vec<ProtocolId>,
    pub tvl: Vec<f64>,
    /// `out[i]` = `(j, w)` for each edge `i -> j`, ordered by `j`.
    pub out: Vec<Vec<(usize, f64)>>,
    /// `inc[j]` = `(i, w)` for each edge `i -> j`, ordered by `i`.
    pub inc: Vec<Vec<(usize, f64)>>,
}

impl IndexedGraph {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, p: &ProtocolId) -> Option<usize> {
        self.ids.binary_search(p).ok()
    }
}

/// Ordered graphs over contiguous intervals.
#[derive(Debug, Clone, Default)]
pub struct GraphSequence {
    graphs: Vec<ExposureGraph>,
}

impl GraphSequence {
    pub fn new(graphs: Vec<ExposureGraph>) -> Result<Self> {
        for pair in graphs.windows(2) {
            let (a, b) = (pair[0].interval, pair[1].interval);
            if a.end != b.start || b.start >= b.end {
                return Err(Error::InvalidGraph(format!(
                    "intervals {a:?} and {b:?} are not contiguous"
                )));
            }
        }
        Ok(GraphSequence { graphs })
    }

    pub fn graphs(&self) -> &[ExposureGraph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn into_inner(self) -> Vec<ExposureGraph> {
        self.graphs
    }
}

/// Value at `t2` of the tokens `p` held at both `t1` and `t2`.
pub fn compute_node_weight(p: &ProtocolId, snap1: &HoldingsSnapshot, snap2: &HoldingsSnapshot) -> f64 {
    let (Some(h1), Some(h2)) = (snap1.protocols.get(p), snap2.protocols.get(p)) else {
        return 0.0;
    };
    h2.tokens
        .iter()
        .filter(|(token, _)| h1.tokens.contains_key(*token))
        .map(|(_, v)| *v)
        .sum()
}

/// Per-token flow from sender `p` toward receiver `q`.
///
/// Branches are evaluated in order: a decrease at `p` is the flow; otherwise
/// a non-negative change at `q` is; otherwise nothing moved.
pub fn compute_value_flow(delta_sender: f64, delta_receiver: f64) -> f64 {
    if delta_sender < 0.0 {
        (-delta_sender).max(0.0)
    } else if delta_receiver >= 0.0 {
        delta_receiver.max(0.0)
    } else {
        0.0
    }
}

/// Sum of the per-token flows restricted to tokens issued by `q`.
pub fn compute_edge_weight(
    q: &ProtocolId,
    token_flows: &BTreeMap<TokenId, f64>,
    issuer_of: &IssuerMap,
) -> f64 {
    token_flows
        .iter()
        .filter(|(token, _)| issuer_of.get(*token) == Some(q))
        .map(|(_, f)| *f)
        .sum()
}

/// Builds the exposure graph for the interval `(snap1.week, snap2.week)`.
///
/// Nodes below `theta` are pruned together with their incident edges before
/// edges are computed. For every token `σ` issued by a retained node `q`, each
/// other retained protocol `p` that held `σ` at either end of the interval
/// contributes the flow of `σ` from `p` to `q`.
pub fn build_exposure_graph(
    snap1: &HoldingsSnapshot,
    snap2: &HoldingsSnapshot,
    issuer_of: &IssuerMap,
    theta: f64,
) -> Result<ExposureGraph> {
    if snap1.is_empty() {
        return Err(Error::EmptySnapshot(snap1.week));
    }
    if snap2.is_empty() {
        return Err(Error::EmptySnapshot(snap2.week));
    }
    if snap1.week >= snap2.week {
        return Err(Error::InvalidSnapshot(format!(
            "weeks {} and {} are not increasing",
            snap1.week, snap2.week
        )));
    }

    let mut nodes = BTreeMap::new();
    for p in snap1.protocols.keys().chain(snap2.protocols.keys()) {
        if nodes.contains_key(p) {
            continue;
        }
        let w = compute_node_weight(p, snap1, snap2);
        if w >= theta {
            nodes.insert(p.clone(), w);
        }
    }

    // token -> [(holder, ΔS)] over retained holders
    let mut deltas: BTreeMap<&TokenId, Vec<(&ProtocolId, f64)>> = BTreeMap::new();
    let empty = BTreeMap::new();
    for p in nodes.keys() {
        let t1 = snap1.protocols.get(p).map_or(&empty, |h| &h.tokens);
        let t2 = snap2.protocols.get(p).map_or(&empty, |h| &h.tokens);
        let held: BTreeSet<&TokenId> = t1.keys().chain(t2.keys()).collect();
        for token in held {
            let d = t2.get(token).copied().unwrap_or(0.0) - t1.get(token).copied().unwrap_or(0.0);
            deltas.entry(token).or_default().push((p, d));
        }
    }

    let mut edges: BTreeMap<(ProtocolId, ProtocolId), f64> = BTreeMap::new();
    for (token, holders) in &deltas {
        let Some(q) = issuer_of.get(*token) else {
            continue;
        };
        if !nodes.contains_key(q) {
            continue;
        }
        let delta_q = holders
            .iter()
            .find(|(p, _)| *p == q)
            .map_or(0.0, |(_, d)| *d);
        for (p, delta_p) in holders {
            if *p == q {
                continue;
            }
            let flow = compute_value_flow(*delta_p, delta_q);
            if flow > 0.0 {
                *edges.entry(((*p).clone(), q.clone())).or_insert(0.0) += flow;
            }
        }
    }

    ExposureGraph::new(
        Interval {
            start: snap1.week,
            end: snap2.week,
        },
        nodes,
        edges,
    )
}

/// One graph per consecutive snapshot pair.
pub fn sequence_from_snapshots(
    snaps: &[HoldingsSnapshot],
    issuer_of: &IssuerMap,
    theta: f64,
) -> Result<GraphSequence> {
    if snaps.len() < 2 {
        return Err(Error::InsufficientSnapshots(snaps.len()));
    }
    let graphs = snaps
        .windows(2)
        .map(|w| build_exposure_graph(&w[0], &w[1], issuer_of, theta))
        .collect::<Result<Vec<_>>>()?;
    GraphSequence::new(graphs)
}

/// Fraction of the edges of `prev` still present in `next`.
pub fn edge_overlap(prev: &ExposureGraph, next: &ExposureGraph) -> Option<f64> {
    if prev.edge_count() == 0 {
        return None;
    }
    let kept = prev.edges.keys().filter(|k| next.edges.contains_key(*k)).count();
    Some(kept as f64 / prev.edge_count() as f64)
}

#[derive(Debug, Serialize, Deserialize)]
struct HoldingJson {
    token_id: TokenId,
    usd_value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotRecord {
    week: u32,
    date: String,
    protocol_id: ProtocolId,
    chain: String,
    category: String,
    holdings: Vec<HoldingJson>,
}

/// Reads JSON Lines snapshot records, one per (week, protocol).
pub fn read_snapshots_jsonl(reader: impl BufRead) -> Result<Vec<HoldingsSnapshot>> {
    let mut by_week: BTreeMap<u32, HoldingsSnapshot> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::InvalidSnapshot(format!("line {}: {e}", lineno + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SnapshotRecord = serde_json::from_str(&line)?;
        let snap = by_week
            .entry(rec.week)
            .or_insert_with(|| HoldingsSnapshot::new(rec.week, rec.date.clone()));
        if snap.observed_at != rec.date {
            return Err(Error::InvalidSnapshot(format!(
                "week {} has dates {} and {}",
                rec.week, snap.observed_at, rec.date
            )));
        }
        snap.insert(
            rec.protocol_id,
            rec.chain,
            rec.category,
            rec.holdings.into_iter().map(|h| (h.token_id, h.usd_value)),
        )?;
    }
    Ok(by_week.into_values().collect())
}

pub fn write_snapshots_jsonl(snaps: &[HoldingsSnapshot], mut out: impl Write) -> std::io::Result<()> {
    for snap in snaps {
        for (p, h) in &snap.protocols {
            let rec = SnapshotRecord {
                week: snap.week,
                date: snap.observed_at.clone(),
                protocol_id: p.clone(),
                chain: h.chain.clone(),
                category: h.category.clone(),
                holdings: h
                    .tokens
                    .iter()
                    .map(|(t, v)| HoldingJson {
                        token_id: t.clone(),
                        usd_value: round6(*v),
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}
