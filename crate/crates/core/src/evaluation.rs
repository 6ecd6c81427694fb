//! Multi-horizon forecast evaluation: link and weight metrics, stress-loss
//! comparison with worst-case stratification, and predicted-vs-realized
//! risk measures.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::contagion::{predictive_stress_compare, ScenarioSpec, StressComparison};
use crate::error::{Error, Result};
use crate::forecast::features::FeaturedGraph;
use crate::forecast::model::{persistence_predict, ForecastBundle, ForecastModel};
use crate::forecast::train::{candidate_pairs, negative_sample};
use crate::graph::{CategoryMap, ExposureGraph, ProtocolId};
use crate::metrics::{auprc, auroc, mae_rmse};
use crate::risk::{risk_report, RiskConfig};
use crate::util::{pearson, round6};

const TASK1_STREAM: u64 = 0x7A51;
const STRESS_STREAM: u64 = 0x57E5;

/// Anything that forecasts a graph `h` weeks ahead.
pub trait Forecaster {
    fn name(&self) -> &str;
    fn forecast(
        &self,
        fg: &FeaturedGraph,
        horizon: u32,
        candidates: &BTreeSet<(ProtocolId, ProtocolId)>,
    ) -> Result<ForecastBundle>;
}

impl Forecaster for ForecastModel {
    fn name(&self) -> &str {
        "model"
    }

    fn forecast(&self, fg: &FeaturedGraph, horizon: u32, candidates: &BTreeSet<(ProtocolId, ProtocolId)>) -> Result<ForecastBundle> {
        self.predict(fg, horizon, candidates)
    }
}

/// The graph stays as it is.
#[derive(Debug, Clone, Copy, Default)]
pub struct Persistence;

impl Forecaster for Persistence {
    fn name(&self) -> &str {
        "persistence"
    }

    fn forecast(&self, fg: &FeaturedGraph, horizon: u32, candidates: &BTreeSet<(ProtocolId, ProtocolId)>) -> Result<ForecastBundle> {
        Ok(persistence_predict(&fg.graph, horizon, candidates))
    }
}

/// Returns the realized graph itself; upper bound for the stress comparison.
#[derive(Debug, Clone)]
pub struct Oracle<'a> {
    pub graphs: &'a [FeaturedGraph],
}

impl Forecaster for Oracle<'_> {
    fn name(&self) -> &str {
        "oracle"
    }

    fn forecast(&self, fg: &FeaturedGraph, horizon: u32, candidates: &BTreeSet<(ProtocolId, ProtocolId)>) -> Result<ForecastBundle> {
        let t = self
            .graphs
            .iter()
            .position(|g| g.graph.interval() == fg.graph.interval())
            .ok_or_else(|| Error::InvalidConfig("origin not in oracle sequence".into()))?;
        let real = &self
            .graphs
            .get(t + horizon as usize)
            .ok_or_else(|| Error::InsufficientHistory(format!("no graph {horizon} weeks after index {t}")))?
            .graph;
        let mut b = persistence_predict(real, horizon, candidates);
        b.origin = fg.graph.interval();
        b.node_delta = fg
            .graph
            .nodes()
            .iter()
            .map(|(p, w)| (p.clone(), real.tvl(p).map_or(0.0, |r| r.ln_1p() - w.ln_1p())))
            .collect();
        Ok(b)
    }
}

/// One row of the link/weight/node metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task1Row {
    pub model: String,
    pub horizon: u32,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub mae_w: Option<f64>,
    pub rmse_w: Option<f64>,
    pub mae_n: Option<f64>,
    pub rmse_n: Option<f64>,
    pub origins: usize,
    pub pairs: usize,
    pub positives: usize,
}

/// Scores each forecaster on `(origin, h)` pairs. Candidates are all
/// target edges between origin nodes plus negatives drawn with a seed
/// derived from `(seed, origin, h)`, so every forecaster sees the same set.
pub fn evaluate_task1(
    forecasters: &[&dyn Forecaster],
    graphs: &[FeaturedGraph],
    origins: &[(usize, u32)],
    neg_ratio: usize,
    seed: u64,
) -> Result<Vec<Task1Row>> {
    let horizons: BTreeSet<u32> = origins.iter().map(|(_, h)| *h).collect();
    let mut rows = Vec::new();
    for f in forecasters {
        for &h in &horizons {
            let mut scores = Vec::new();
            let mut weights = Vec::new();
            let mut nodes = Vec::new();
            let mut count = 0;
            for &(t, _) in origins.iter().filter(|(_, hh)| *hh == h) {
                let target = &graphs
                    .get(t + h as usize)
                    .ok_or_else(|| Error::InsufficientHistory(format!("origin {t} + {h} beyond sequence")))?
                    .graph;
                let anchor = &graphs[t];
                let labeled = candidate_pairs(&anchor.graph, target, neg_ratio, &[seed, TASK1_STREAM, t as u64, h as u64])?;
                let candidates: BTreeSet<_> = labeled.pairs.iter().map(|(e, _)| e.clone()).collect();
                let b = f.forecast(anchor, h, &candidates)?;
                for (e, y) in &labeled.pairs {
                    scores.push((b.edge_prob[e], *y));
                    if *y {
                        let truth = target.edges()[e].ln_1p();
                        weights.push((b.edge_logweight[e], truth));
                    }
                }
                for (p, w) in anchor.graph.nodes() {
                    if let Some(next) = target.tvl(p) {
                        nodes.push((b.node_delta.get(p).copied().unwrap_or(0.0), next.ln_1p() - w.ln_1p()));
                    }
                }
                count += 1;
            }
            let (mae_w, rmse_w) = mae_rmse(&weights).ok().unzip();
            let (mae_n, rmse_n) = mae_rmse(&nodes).ok().unzip();
            rows.push(Task1Row {
                model: f.name().to_string(),
                horizon: h,
                auroc: auroc(&scores).ok(),
                auprc: auprc(&scores).ok(),
                mae_w,
                rmse_w,
                mae_n,
                rmse_n,
                origins: count,
                pairs: scores.len(),
                positives: weights.len(),
            });
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{:.6}", round6(x))).unwrap_or_default()
}

/// CSV `model,h,AUROC,AUPRC,MAE_w,RMSE_w,MAE_n,RMSE_n`.
pub fn write_task1_csv(rows: &[Task1Row], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "h", "AUROC", "AUPRC", "MAE_w", "RMSE_w", "MAE_n", "RMSE_n"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.horizon.to_string(),
            opt(r.auroc),
            opt(r.auprc),
            opt(r.mae_w),
            opt(r.rmse_w),
            opt(r.mae_n),
            opt(r.rmse_n),
        ])?;
    }
    w.flush().map_err(|e| Error::io("task1 csv", e))?;
    Ok(())
}

/// One stress comparison at `(origin, h, scenario)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressRecord {
    pub origin: usize,
    pub week: u32,
    pub horizon: u32,
    pub scenario: String,
    pub loss_baseline: f64,
    pub loss_model: f64,
    pub loss_realized: f64,
}

impl StressRecord {
    pub fn baseline_error(&self) -> f64 {
        (self.loss_baseline - self.loss_realized).abs()
    }

    pub fn model_error(&self) -> f64 {
        (self.loss_model - self.loss_realized).abs()
    }
}

/// Candidate pairs used to materialize a forecast at origin `t`: current
/// edges plus sampled non-edges, drawn without looking at the target.
pub fn forecast_candidates(g: &ExposureGraph, neg_ratio: usize, seed: &[u64]) -> Result<BTreeSet<(ProtocolId, ProtocolId)>> {
    let labeled = negative_sample(&g.edge_set(), &g.node_set(), neg_ratio, seed)?;
    Ok(labeled.pairs.into_iter().map(|(e, _)| e).collect())
}

/// Materialized forecast of graph `t + h` from graph `t`.
pub fn forecast_graph(
    f: &dyn Forecaster,
    graphs: &[FeaturedGraph],
    t: usize,
    h: u32,
    neg_ratio: usize,
    seed: u64,
) -> Result<ExposureGraph> {
    let g = &graphs[t];
    let candidates = forecast_candidates(&g.graph, neg_ratio, &[seed, STRESS_STREAM, t as u64, h as u64])?;
    f.forecast(g, h, &candidates)?.materialize(&g.graph)
}

/// Stress losses on current, forecast and realized graphs for every
/// `(origin, h, scenario)`. Scenarios whose targets vanish at an origin
/// are skipped.
pub fn evaluate_task2(
    f: &dyn Forecaster,
    graphs: &[FeaturedGraph],
    categories: &CategoryMap,
    origins: &[(usize, u32)],
    scenarios: &[ScenarioSpec],
    neg_ratio: usize,
    seed: u64,
) -> Result<Vec<StressRecord>> {
    let mut out = Vec::new();
    for &(t, h) in origins {
        let real = &graphs
            .get(t + h as usize)
            .ok_or_else(|| Error::InsufficientHistory(format!("origin {t} + {h} beyond sequence")))?
            .graph;
        let pred = forecast_graph(f, graphs, t, h, neg_ratio, seed)?;
        for spec in scenarios {
            let c: StressComparison = match predictive_stress_compare(&graphs[t].graph, &pred, real, categories, spec) {
                Ok(c) => c,
                Err(Error::EmptySelection(name)) => {
                    warn!("scenario {name} selects nothing at origin {t}, h {h}");
                    continue;
                }
                Err(e) => return Err(e),
            };
            out.push(StressRecord {
                origin: t,
                week: graphs[t].graph.week(),
                horizon: h,
                scenario: c.scenario,
                loss_baseline: c.loss_baseline,
                loss_model: c.loss_model,
                loss_realized: c.loss_realized,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedSummary {
    pub horizon: u32,
    pub cases: usize,
    pub worst_cases: usize,
    pub delta_mae_all: f64,
    pub delta_mae_worst20: f64,
    pub win_rate_worst20: f64,
}

/// Size of the worst-case stratum: `⌈0.2·n⌉`.
pub fn worst20_size(n: usize) -> usize {
    (n * 2).div_ceil(10)
}

/// Indices of the `⌈0.2·n⌉` largest baseline errors (earlier index first
/// among ties). Depends on baseline errors only.
pub fn worst20_indices(baseline_errors: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..baseline_errors.len()).collect();
    idx.sort_by(|a, b| baseline_errors[*b].total_cmp(&baseline_errors[*a]).then(a.cmp(b)));
    idx.truncate(worst20_size(baseline_errors.len()));
    idx
}

/// Per-horizon ΔMAE = MAE(baseline) − MAE(model) over all cases and over
/// the worst 20% of baseline errors pooled across scenarios, plus the
/// share of worst cases where the model error is strictly smaller.
pub fn stratified_summary(records: &[StressRecord]) -> Vec<StratifiedSummary> {
    let mut by_h: BTreeMap<u32, Vec<&StressRecord>> = BTreeMap::new();
    for r in records {
        by_h.entry(r.horizon).or_default().push(r);
    }
    by_h.into_iter()
        .map(|(h, rs)| {
            let base: Vec<f64> = rs.iter().map(|r| r.baseline_error()).collect();
            let model: Vec<f64> = rs.iter().map(|r| r.model_error()).collect();
            let n = rs.len() as f64;
            let delta_all = (base.iter().sum::<f64>() - model.iter().sum::<f64>()) / n;
            let worst = worst20_indices(&base);
            let k = worst.len() as f64;
            let delta_worst = worst.iter().map(|&i| base[i] - model[i]).sum::<f64>() / k;
            let wins = worst.iter().filter(|&&i| model[i] < base[i]).count() as f64;
            StratifiedSummary {
                horizon: h,
                cases: rs.len(),
                worst_cases: worst.len(),
                delta_mae_all: delta_all,
                delta_mae_worst20: delta_worst,
                win_rate_worst20: wins / k,
            }
        })
        .collect()
}

/// CSV `scenario,week,horizon,loss_baseline,loss_model,loss_realized`.
pub fn write_stress_records_csv(records: &[StressRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "week", "horizon", "loss_baseline", "loss_model", "loss_realized"])?;
    for r in records {
        w.write_record([
            r.scenario.clone(),
            r.week.to_string(),
            r.horizon.to_string(),
            format!("{:.6}", round6(r.loss_baseline)),
            format!("{:.6}", round6(r.loss_model)),
            format!("{:.6}", round6(r.loss_realized)),
        ])?;
    }
    w.flush().map_err(|e| Error::io("stress csv", e))?;
    Ok(())
}

/// CSV `h,dMAE_all,dMAE_worst20,win_rate`.
pub fn write_task2_csv(summary: &[StratifiedSummary], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["h", "dMAE_all", "dMAE_worst20", "win_rate"])?;
    for s in summary {
        w.write_record([
            s.horizon.to_string(),
            format!("{:.6}", round6(s.delta_mae_all)),
            format!("{:.6}", round6(s.delta_mae_worst20)),
            format!("{:.6}", round6(s.win_rate_worst20)),
        ])?;
    }
    w.flush().map_err(|e| Error::io("task2 csv", e))?;
    Ok(())
}

/// One predicted-vs-realized measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub week: u32,
    pub horizon: u32,
    pub metric: String,
    pub predicted: Option<f64>,
    pub realized: Option<f64>,
    /// Why either side is missing.
    pub error: Option<String>,
}

/// Risk measures on aligned `(week, h, predicted, realized)` graphs. A
/// measure undefined on either graph is kept as a point with an error
/// note rather than aborting the run.
pub fn risk_metric_calibration(
    pairs: &[(u32, u32, &ExposureGraph, &ExposureGraph)],
    categories: &CategoryMap,
    cfg: &RiskConfig,
) -> Result<Vec<CalibrationPoint>> {
    let mut out = Vec::new();
    for &(week, h, pred, real) in pairs {
        let rp = risk_report(pred, categories, cfg);
        let rr = risk_report(real, categories, cfg);
        let names = ["density", "tvl_hhi", "edge_hhi", "spillover_index", "mean_sis"];
        let lookup = |r: &Result<crate::risk::RiskReport>, name: &str| -> (Option<f64>, Option<String>) {
            match r {
                Ok(rep) => {
                    let v = rep.scalar_metrics().into_iter().find(|(n, _)| *n == name).and_then(|(_, v)| v);
                    let why = v.is_none().then(|| {
                        rep.degenerate
                            .iter()
                            .find(|d| d.starts_with(name))
                            .cloned()
                            .unwrap_or_else(|| format!("{name} undefined"))
                    });
                    (v, why)
                }
                Err(e) => (None, Some(e.to_string())),
            }
        };
        for name in names {
            let (p, pe) = lookup(&rp, name);
            let (r, re) = lookup(&rr, name);
            let error = match (pe, re) {
                (None, None) => None,
                (a, b) => Some(
                    [a.map(|e| format!("predicted: {e}")), b.map(|e| format!("realized: {e}"))]
                        .into_iter()
                        .flatten()
                        .collect::<Vec<_>>()
                        .join("; "),
                ),
            };
            out.push(CalibrationPoint {
                week,
                horizon: h,
                metric: name.to_string(),
                predicted: p,
                realized: r,
                error,
            });
        }
    }
    Ok(out)
}

/// Pearson correlation between predicted and realized values of `metric`
/// over points where both are defined.
pub fn calibration_correlation(points: &[CalibrationPoint], metric: &str) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.metric == metric)
        .filter_map(|p| Some((p.predicted?, p.realized?)))
        .unzip();
    pearson(&x, &y)
}

/// CSV `week,horizon,metric,predicted,realized,error`.
pub fn write_calibration_csv(points: &[CalibrationPoint], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["week", "horizon", "metric", "predicted", "realized", "error"])?;
    for p in points {
        w.write_record([
            p.week.to_string(),
            p.horizon.to_string(),
            p.metric.clone(),
            opt(p.predicted),
            opt(p.realized),
            p.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("calibration csv", e))?;
    Ok(())
}
