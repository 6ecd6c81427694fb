//! Synthetic holdings generator calibrated to weekly exposure-network
//! statistics (node/edge counts, week-to-week edge overlap).
//!
//! Every protocol issues at least one token and keeps a treasury of its own
//! tokens that grows each week, so every cross-protocol holding produces an
//! exposure edge. Holdings churn weekly (small positions more often), new
//! positions follow a sector affinity matrix weighted by issuer size, and
//! holding values drift with a per-sector trend.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::features::DEFAULT_SECTORS;
use crate::graph::{edge_overlap, sequence_from_snapshots, HoldingsSnapshot, IssuerMap, ProtocolId, TokenId};
use crate::mapper::{ProtocolRecord, TokenMetadata};
use crate::util::{mean, rng_for};

const CHAINS: [&str; 5] = ["ethereum", "arbitrum", "bsc", "polygon", "solana"];
const SYLLABLES: [&str; 24] = [
    "zor", "vex", "ka", "lum", "tri", "nov", "pel", "qua", "ris", "dax", "mo", "fen", "gal", "hyd", "ix", "jun",
    "kel", "ora", "pyx", "sol", "tav", "ul", "wyn", "zed",
];
const TOKEN_KINDS: [&str; 4] = ["governance", "receipt", "staked", "liquidity"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeShift {
    /// Snapshot index at which the rewiring happens.
    pub week: u32,
    /// Fraction of holdings replaced.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_protocols: usize,
    pub n_tokens: usize,
    pub n_weeks: usize,
    pub edge_overlap: f64,
    /// Log-normal TVL parameters (of ln USD).
    pub tvl_log_mean: f64,
    pub tvl_log_std: f64,
    pub regime_shifts: Vec<RegimeShift>,
    pub n_sectors: usize,
    /// Mean number of external token positions per protocol.
    pub holdings_per_protocol: f64,
    /// Weekly std of idiosyncratic log value changes.
    pub value_noise: f64,
    /// Std of the per-sector weekly log drift.
    pub sector_drift: f64,
    /// Weekly treasury increment as a fraction of the initial treasury.
    pub treasury_growth: f64,
    pub start_date: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_protocols: 100,
            n_tokens: 200,
            n_weeks: 60,
            edge_overlap: 0.985,
            tvl_log_mean: 16.0,
            tvl_log_std: 1.5,
            regime_shifts: Vec::new(),
            n_sectors: 15,
            holdings_per_protocol: 5.5,
            value_noise: 0.02,
            sector_drift: 0.015,
            treasury_growth: 0.01,
            start_date: "2024-01-01".into(),
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// No churn, noise or drift; treasuries grow linearly so every week's
    /// graph has the same edges with the same weights.
    pub fn frozen() -> Self {
        SynthConfig {
            edge_overlap: 1.0,
            value_noise: 0.0,
            sector_drift: 0.0,
            ..Self::default()
        }
    }

    /// Default dynamics plus two rewiring events.
    pub fn regime_shift() -> Self {
        SynthConfig {
            regime_shifts: vec![
                RegimeShift { week: 30, fraction: 0.25 },
                RegimeShift { week: 45, fraction: 0.25 },
            ],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.edge_overlap > 0.0 && self.edge_overlap <= 1.0) {
            return bad(format!("edge_overlap {} outside (0, 1]", self.edge_overlap));
        }
        if self.n_weeks < 2 {
            return bad("n_weeks must be at least 2".into());
        }
        if self.n_protocols < 2 || self.n_tokens < self.n_protocols {
            return bad("need at least 2 protocols and one token per protocol".into());
        }
        if !(2..=DEFAULT_SECTORS.len()).contains(&self.n_sectors) {
            return bad(format!("n_sectors must be in 2..={}", DEFAULT_SECTORS.len()));
        }
        for s in &self.regime_shifts {
            if !(0.0..=1.0).contains(&s.fraction) || s.week as usize >= self.n_weeks || s.week == 0 {
                return bad(format!("regime shift {s:?} out of range"));
            }
        }
        let nonneg = [
            self.tvl_log_std,
            self.value_noise,
            self.sector_drift,
            self.treasury_growth,
            self.holdings_per_protocol,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !self.tvl_log_mean.is_finite() {
            return bad("dispersion and growth parameters must be finite and non-negative".into());
        }
        NaiveDate::parse_from_str(&self.start_date, "%Y-%m-%d")
            .map_err(|e| Error::InvalidConfig(format!("start_date: {e}")))?;
        Ok(())
    }

    /// Weekly probability that a holding is dropped.
    pub fn churn_rate(&self) -> f64 {
        (1.0 - self.edge_overlap) / self.edge_overlap
    }
}

/// Statistics of the generated data re-measured through graph construction
/// with the true issuer map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub weeks: usize,
    pub graphs: usize,
    pub mean_nodes: f64,
    pub mean_edges: f64,
    pub mean_overlap: f64,
    pub target_overlap: f64,
    pub tokens: usize,
    pub tokens_declared: usize,
    pub tokens_manual: usize,
    pub tokens_described: usize,
    pub tokens_primary: usize,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub snapshots: Vec<HoldingsSnapshot>,
    pub tokens: Vec<TokenMetadata>,
    pub protocols: Vec<ProtocolRecord>,
    pub manual: BTreeMap<TokenId, ProtocolId>,
    /// Ground-truth issuers (primary-market tokens are absent).
    pub issuers: IssuerMap,
    pub config: SynthConfig,
}

impl SynthDataset {
    pub fn stats(&self) -> Result<SynthStats> {
        let graphs = sequence_from_snapshots(&self.snapshots, &self.issuers, 0.0)?;
        let g = graphs.graphs();
        let overlaps: Vec<f64> = g.windows(2).filter_map(|w| edge_overlap(&w[0], &w[1])).collect();
        let count = |f: &dyn Fn(&TokenMetadata) -> bool| self.tokens.iter().filter(|t| f(t)).count();
        let declared = count(&|t| t.declared_issuer.is_some());
        let manual = self.manual.len();
        let primary = count(&|t| t.declared_issuer.is_none() && !self.issuers.contains_key(&t.token_id));
        Ok(SynthStats {
            weeks: self.snapshots.len(),
            graphs: g.len(),
            mean_nodes: mean(&g.iter().map(|x| x.node_count() as f64).collect::<Vec<_>>()),
            mean_edges: mean(&g.iter().map(|x| x.edge_count() as f64).collect::<Vec<_>>()),
            mean_overlap: if overlaps.is_empty() { f64::NAN } else { mean(&overlaps) },
            target_overlap: self.config.edge_overlap,
            tokens: self.tokens.len(),
            tokens_declared: declared,
            tokens_manual: manual,
            tokens_described: self.tokens.len() - declared - manual - primary,
            tokens_primary: primary,
        })
    }
}

struct Protocol {
    id: ProtocolId,
    sector: usize,
    chain: &'static str,
    size: f64,
}

struct Token {
    id: TokenId,
    issuer: Option<usize>,
}

fn unique_names(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let parts = rng.random_range(2..=3);
        let name: String = (0..parts).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
        if seen.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map_or_else(String::new, |f| f.to_uppercase().chain(c).collect())
}

/// Picks a token for `holder` that it neither issues nor already holds.
fn pick_token(
    rng: &mut ChaCha8Rng,
    holder: usize,
    protocols: &[Protocol],
    tokens: &[Token],
    affinity: &[Vec<f64>],
    held: &BTreeMap<(usize, usize), f64>,
) -> Option<usize> {
    let s = protocols[holder].sector;
    let weights: Vec<f64> = tokens
        .iter()
        .enumerate()
        .map(|(j, t)| {
            if held.contains_key(&(holder, j)) || t.issuer == Some(holder) {
                return 0.0;
            }
            match t.issuer {
                Some(q) => affinity[s][protocols[q].sector] * protocols[q].size.sqrt(),
                None => 0.2 * affinity[s][s] * protocols[holder].size.sqrt(),
            }
        })
        .collect();
    WeightedIndex::new(&weights).ok().map(|d| d.sample(rng))
}

/// Generates the dataset described by `cfg`; identical configs give
/// identical output.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = rng_for(&[cfg.seed, 0x5A47]);
    let sectors: Vec<&str> = DEFAULT_SECTORS.iter().copied().take(cfg.n_sectors).collect();
    let names = unique_names(&mut rng, cfg.n_protocols);
    let tvl = LogNormal::new(cfg.tvl_log_mean, cfg.tvl_log_std).expect("valid log-normal");

    let protocols: Vec<Protocol> = (0..cfg.n_protocols)
        .map(|i| Protocol {
            id: ProtocolId::new(format!("{}-{}", names[i], i)),
            sector: i % cfg.n_sectors,
            chain: CHAINS[rng.random_range(0..CHAINS.len())],
            size: tvl.sample(&mut rng),
        })
        .collect();
    let records: Vec<ProtocolRecord> = protocols
        .iter()
        .zip(&names)
        .map(|(p, name)| ProtocolRecord {
            protocol_id: p.id.clone(),
            name: capitalize(name),
            category: sectors[p.sector].to_string(),
            chain: p.chain.to_string(),
            description: format!("{} {} protocol on {}", capitalize(name), sectors[p.sector], p.chain),
        })
        .collect();

    // first n_protocols tokens: one per protocol; the rest go to
    // size-weighted issuers, with 5% primary-market assets
    let sizes = WeightedIndex::new(protocols.iter().map(|p| p.size.sqrt())).expect("positive sizes");
    let n_primary = (cfg.n_tokens as f64 * 0.05).round() as usize;
    let mut tokens = Vec::with_capacity(cfg.n_tokens);
    let mut metadata = Vec::with_capacity(cfg.n_tokens);
    let mut manual = BTreeMap::new();
    let mut issuers = IssuerMap::new();
    for j in 0..cfg.n_tokens {
        let issuer = if j < cfg.n_protocols {
            Some(j)
        } else if j >= cfg.n_tokens - n_primary.min(cfg.n_tokens - cfg.n_protocols) {
            None
        } else {
            Some(sizes.sample(&mut rng))
        };
        let chain = issuer.map_or(CHAINS[j % CHAINS.len()], |q| protocols[q].chain);
        let id = TokenId::new(format!("{chain}:0x{:08x}", crate::util::mix_seed(&[cfg.seed, j as u64]) as u32));
        let kind = TOKEN_KINDS[rng.random_range(0..TOKEN_KINDS.len())];
        let meta = match issuer {
            Some(q) => {
                let name = &records[q].name;
                let symbol = format!("{}{}", name.to_uppercase().chars().take(3).collect::<String>(), j % 10);
                let roll: f64 = rng.random();
                issuers.insert(id.clone(), protocols[q].id.clone());
                if roll < 0.74 {
                    TokenMetadata {
                        token_id: id.clone(),
                        declared_issuer: Some(protocols[q].id.clone()),
                        symbol,
                        description: format!("{name} {kind} token"),
                    }
                } else if roll < 0.84 {
                    manual.insert(id.clone(), protocols[q].id.clone());
                    TokenMetadata {
                        token_id: id.clone(),
                        declared_issuer: None,
                        symbol: symbol.clone(),
                        description: format!("bridged {} asset", symbol.to_lowercase()),
                    }
                } else {
                    TokenMetadata {
                        token_id: id.clone(),
                        declared_issuer: None,
                        symbol,
                        description: format!("{name} {kind} token"),
                    }
                }
            }
            None => TokenMetadata {
                token_id: id.clone(),
                declared_issuer: None,
                symbol: format!("NAT{j}"),
                description: format!("native {chain} gas asset"),
            },
        };
        metadata.push(meta);
        tokens.push(Token { id, issuer });
    }

    let aff = LogNormal::new(0.0, 1.2).expect("valid log-normal");
    let affinity: Vec<Vec<f64>> = (0..cfg.n_sectors)
        .map(|_| (0..cfg.n_sectors).map(|_| aff.sample(&mut rng)).collect())
        .collect();
    let drift_dist = Normal::new(0.0, cfg.sector_drift.max(f64::MIN_POSITIVE)).expect("valid normal");
    let drift: Vec<f64> = (0..cfg.n_sectors)
        .map(|_| if cfg.sector_drift > 0.0 { drift_dist.sample(&mut rng) } else { 0.0 })
        .collect();
    let share = LogNormal::new(-2.5, 0.8).expect("valid log-normal");

    // (holder, token) -> USD value of external positions
    let mut held: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for p in 0..cfg.n_protocols {
        let k = 1 + (rng.random::<f64>() * 2.0 * (cfg.holdings_per_protocol - 1.0).max(0.0)).round() as usize;
        for _ in 0..k {
            if let Some(j) = pick_token(&mut rng, p, &protocols, &tokens, &affinity, &held) {
                held.insert((p, j), protocols[p].size * share.sample(&mut rng));
            }
        }
    }
    // treasury: the issuer's own tokens
    // (weekly increment, value)
    let mut treasury: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for (j, t) in tokens.iter().enumerate() {
        if let Some(q) = t.issuer {
            // whole dollars keep frozen-market increments exact
            let v = (protocols[q].size * rng.random_range(0.1..0.3)).round();
            treasury.insert((q, j), ((cfg.treasury_growth * v).round(), v));
        }
    }

    let start = NaiveDate::parse_from_str(&cfg.start_date, "%Y-%m-%d").expect("validated");
    let churn = cfg.churn_rate();
    let noise = Normal::new(0.0, cfg.value_noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut snapshots = Vec::with_capacity(cfg.n_weeks);
    for week in 0..cfg.n_weeks {
        if week > 0 {
            // value dynamics
            for ((p, _), v) in held.iter_mut() {
                let eps = if cfg.value_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                *v *= (drift[protocols[*p].sector] + eps).exp();
            }
            for (inc, v) in treasury.values_mut() {
                let bump = if cfg.value_noise > 0.0 { rng.random_range(0.5..1.5) } else { 1.0 };
                *v += *inc * bump;
            }
            // churn: small positions leave more often
            let mut dropped = 0;
            if churn > 0.0 && !held.is_empty() {
                let mut values: Vec<f64> = held.values().copied().collect();
                values.sort_by(f64::total_cmp);
                let median = values[values.len() / 2].max(1e-9);
                let w: BTreeMap<(usize, usize), f64> =
                    held.iter().map(|(k, v)| (*k, (v / median).max(1e-6).powf(-0.5).min(20.0))).collect();
                let mean_w = w.values().sum::<f64>() / w.len() as f64;
                let keys: Vec<(usize, usize)> = held.keys().copied().collect();
                for k in keys {
                    if rng.random::<f64>() < (churn * w[&k] / mean_w).min(1.0) {
                        held.remove(&k);
                        dropped += 1;
                    }
                }
            }
            for shift in cfg.regime_shifts.iter().filter(|s| s.week as usize == week) {
                let keys: Vec<(usize, usize)> = held.keys().copied().collect();
                for k in keys {
                    if rng.random::<f64>() < shift.fraction {
                        held.remove(&k);
                        dropped += 1;
                    }
                }
            }
            for _ in 0..dropped {
                let p = rng.random_range(0..cfg.n_protocols);
                if let Some(j) = pick_token(&mut rng, p, &protocols, &tokens, &affinity, &held) {
                    let scale = (drift[protocols[p].sector] * week as f64).exp();
                    held.insert((p, j), protocols[p].size * scale * share.sample(&mut rng));
                }
            }
        }

        let date = start + Duration::weeks(week as i64);
        let mut snap = HoldingsSnapshot::new(week as u32, date.format("%Y-%m-%d").to_string());
        let mut rows: BTreeMap<usize, Vec<(TokenId, f64)>> = BTreeMap::new();
        for ((p, j), v) in &held {
            rows.entry(*p).or_default().push((tokens[*j].id.clone(), crate::util::round6(*v)));
        }
        for ((q, j), (_, v)) in &treasury {
            rows.entry(*q).or_default().push((tokens[*j].id.clone(), crate::util::round6(*v)));
        }
        for (p, holdings) in rows {
            let pr = &protocols[p];
            snap.insert(pr.id.clone(), pr.chain, sectors[pr.sector], holdings)?;
        }
        snapshots.push(snap);
    }

    Ok(SynthDataset {
        snapshots,
        tokens: metadata,
        protocols: records,
        manual,
        issuers,
        config: cfg.clone(),
    })
}
