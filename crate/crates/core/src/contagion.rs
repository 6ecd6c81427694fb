//! DebtRank-style loss propagation over an exposure graph.
//!
//! Edge `q -> p` means `q` holds claims issued by `p`, so when `p` is
//! distressed its loss is allocated to every such creditor `q` in proportion
//! to the edge weight. Propagation runs in synchronous rounds:
//!
//! * round 0: shocked protocols lose `δ0 · TVL` and are distressed;
//! * round `r`: every protocol that became distressed in round `r - 1` passes
//!   on the cumulative loss it carried when it became distressed. Losses are
//!   capped at TVL; once a round ends, protocols whose loss exceeds
//!   `τ · TVL` become distressed and propagate in the next round.
//!
//! A protocol propagates at most once; loss arriving after that is absorbed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CategoryMap, ExposureGraph, ProtocolId};

pub const DEFAULT_TAU: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    LargestProtocol,
    TopN(usize),
    Sector(String),
    Explicit(Vec<ProtocolId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(rename = "rule")]
    pub targets: TargetRule,
    #[serde(rename = "delta0")]
    pub loss_ratio: f64,
    #[serde(rename = "tau", default = "default_tau")]
    pub distress_threshold: f64,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidScenario(msg));
        if self.name.trim().is_empty() {
            return fail("name must not be empty".into());
        }
        if !(0.0..=1.0).contains(&self.loss_ratio) {
            return fail(format!("delta0 {} outside [0, 1]", self.loss_ratio));
        }
        if !(self.distress_threshold > 0.0 && self.distress_threshold < 1.0) {
            return fail(format!("tau {} outside (0, 1)", self.distress_threshold));
        }
        match &self.targets {
            TargetRule::TopN(0) => fail("top_n requires n >= 1".into()),
            TargetRule::Sector(s) if s.trim().is_empty() => fail("sector label must not be empty".into()),
            TargetRule::Explicit(v) if v.is_empty() => fail("explicit target list is empty".into()),
            _ => Ok(()),
        }
    }
}

/// The three standard shocks: 50% of the largest protocol, 30% of the
/// top five, and total loss of every bridge protocol.
pub fn canonical_scenarios() -> Vec<ScenarioSpec> {
    vec![
        ScenarioSpec {
            name: "top_protocol".into(),
            targets: TargetRule::LargestProtocol,
            loss_ratio: 0.5,
            distress_threshold: DEFAULT_TAU,
        },
        ScenarioSpec {
            name: "top5_protocols".into(),
            targets: TargetRule::TopN(5),
            loss_ratio: 0.3,
            distress_threshold: DEFAULT_TAU,
        },
        ScenarioSpec {
            name: "bridge_sector".into(),
            targets: TargetRule::Sector("bridge".into()),
            loss_ratio: 1.0,
            distress_threshold: DEFAULT_TAU,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContagionResult {
    /// Loss of every node, including zero entries.
    pub losses: BTreeMap<ProtocolId, f64>,
    pub system_loss_usd: f64,
    pub system_loss_pct: f64,
    pub depth: usize,
    pub affected_count: usize,
    pub distressed_count: usize,
    /// Protocols entering distress in each round; `rounds[0]` is the shock.
    pub rounds: Vec<Vec<ProtocolId>>,
}

pub fn run_contagion(g: &ExposureGraph, shocked: &[(ProtocolId, f64)], tau: f64) -> Result<ContagionResult> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidTau(tau));
    }
    let ig = g.indexed();
    let n = ig.len();
    let mut loss = vec![0.0; n];
    let mut distressed = vec![false; n];
    let mut carried = vec![0.0; n];

    let mut frontier = Vec::with_capacity(shocked.len());
    for (p, delta0) in shocked {
        let i = ig.position(p).ok_or_else(|| Error::UnknownProtocol(p.clone()))?;
        if !(0.0..=1.0).contains(delta0) {
            return Err(Error::InvalidScenario(format!("delta0 {delta0} outside [0, 1]")));
        }
        if distressed[i] {
            return Err(Error::InvalidScenario(format!("{p} shocked twice")));
        }
        loss[i] = (delta0 * ig.tvl[i]).min(ig.tvl[i]);
        carried[i] = loss[i];
        distressed[i] = true;
        frontier.push(i);
    }
    frontier.sort_unstable();

    let exposure_total: Vec<f64> = ig.inc.iter().map(|cs| cs.iter().map(|(_, w)| w).sum()).collect();
    let mut rounds = vec![frontier.iter().map(|&i| ig.ids[i].clone()).collect::<Vec<_>>()];
    let mut depth = 0;
    let mut round = 0;
    while !frontier.is_empty() {
        round += 1;
        let mut transferred = false;
        for &debtor in &frontier {
            let amount = carried[debtor];
            let total = exposure_total[debtor];
            if amount <= 0.0 || total <= 0.0 {
                continue;
            }
            for &(creditor, w) in &ig.inc[debtor] {
                let share = amount * w / total;
                if share > 0.0 {
                    transferred = true;
                }
                loss[creditor] = (loss[creditor] + share).min(ig.tvl[creditor]);
            }
        }
        if transferred {
            depth = round;
        }
        frontier = (0..n)
            .filter(|&i| !distressed[i] && loss[i] > tau * ig.tvl[i])
            .collect();
        for &i in &frontier {
            distressed[i] = true;
            carried[i] = loss[i];
        }
        if !frontier.is_empty() {
            rounds.push(frontier.iter().map(|&i| ig.ids[i].clone()).collect());
        }
    }

    let system_loss_usd: f64 = loss.iter().sum();
    let total_tvl: f64 = ig.tvl.iter().sum();
    let system_loss_pct = if total_tvl > 0.0 {
        (100.0 * system_loss_usd / total_tvl).min(100.0)
    } else {
        0.0
    };
    Ok(ContagionResult {
        affected_count: loss.iter().filter(|l| **l > 0.0).count(),
        distressed_count: distressed.iter().filter(|d| **d).count(),
        losses: ig.ids.into_iter().zip(loss).collect(),
        system_loss_usd,
        system_loss_pct,
        depth,
        rounds,
    })
}

/// Resolves a scenario's target rule on `g`, pairing each target with the
/// scenario loss ratio.
pub fn resolve_scenario(
    g: &ExposureGraph,
    categories: &CategoryMap,
    spec: &ScenarioSpec,
) -> Result<Vec<(ProtocolId, f64)>> {
    spec.validate()?;
    let by_size = || {
        let mut v: Vec<(&ProtocolId, f64)> = g.nodes().iter().map(|(p, w)| (p, *w)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    };
    let targets: Vec<ProtocolId> = match &spec.targets {
        TargetRule::LargestProtocol => by_size().into_iter().take(1).map(|(p, _)| p.clone()).collect(),
        TargetRule::TopN(k) => by_size().into_iter().take(*k).map(|(p, _)| p.clone()).collect(),
        TargetRule::Sector(label) => g
            .nodes()
            .keys()
            .filter(|p| categories.get(*p) == Some(label))
            .cloned()
            .collect(),
        TargetRule::Explicit(list) => {
            let set: BTreeSet<&ProtocolId> = list.iter().collect();
            for p in &set {
                if !g.contains(p) {
                    return Err(Error::UnknownProtocol((*p).clone()));
                }
            }
            set.into_iter().cloned().collect()
        }
    };
    if targets.is_empty() {
        return Err(Error::EmptySelection(spec.name.clone()));
    }
    Ok(targets.into_iter().map(|p| (p, spec.loss_ratio)).collect())
}

pub fn run_scenario(g: &ExposureGraph, categories: &CategoryMap, spec: &ScenarioSpec) -> Result<ContagionResult> {
    let shocked = resolve_scenario(g, categories, spec)?;
    run_contagion(g, &shocked, spec.distress_threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressComparison {
    pub scenario: String,
    pub targets: Vec<ProtocolId>,
    pub loss_baseline: f64,
    pub loss_model: f64,
    pub loss_realized: f64,
}

/// Runs one scenario on the current, predicted and realized graphs, all
/// restricted to the protocols present both now and at the target week.
/// Targets are resolved once, on the realized graph.
pub fn predictive_stress_compare(
    g_now: &ExposureGraph,
    g_pred: &ExposureGraph,
    g_real: &ExposureGraph,
    categories: &CategoryMap,
    spec: &ScenarioSpec,
) -> Result<StressComparison> {
    let common: BTreeSet<ProtocolId> = g_now
        .nodes()
        .keys()
        .filter(|p| g_real.contains(p))
        .cloned()
        .collect();
    let (now, pred, real) = (
        g_now.restrict_to(&common),
        g_pred.restrict_to(&common),
        g_real.restrict_to(&common),
    );
    let shocked = resolve_scenario(&real, categories, spec)?;
    let tau = spec.distress_threshold;
    Ok(StressComparison {
        scenario: spec.name.clone(),
        targets: shocked.iter().map(|(p, _)| p.clone()).collect(),
        loss_baseline: run_contagion(&now, &shocked, tau)?.system_loss_pct,
        loss_model: run_contagion(&pred, &shocked, tau)?.system_loss_pct,
        loss_realized: run_contagion(&real, &shocked, tau)?.system_loss_pct,
    })
}
