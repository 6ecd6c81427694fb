//! Read-only JSON API over prepared run artifacts. Handlers are plain
//! functions so any HTTP layer can wrap them.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::contagion::{run_scenario, ContagionResult, ScenarioSpec};
use crate::error::Error;
use crate::evaluation::forecast_graph;
use crate::forecast::{FeaturedGraph, ForecastModel};
use crate::graph::{ExposureGraph, Interval, ProtocolId};
use crate::pipeline::{featurize, load_checkpoint, load_graphs, load_snapshots, CalibrationReport, LoadedGraphs, PipelineConfig};
use crate::risk::{risk_report, RiskConfig, RiskReport};

/// Error with the HTTP status it maps to.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            ApiError::NotFound(_) => 404,
            ApiError::Invalid(_) => 422,
            ApiError::Conflict(_) => 409,
            ApiError::Internal(_) => 500,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: self.to_string(),
            status: self.status(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub status: u16,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidScenario(_)
            | Error::EmptySelection(_)
            | Error::UnknownProtocol(_)
            | Error::InvalidTau(_)
            | Error::UnknownHorizon(_) => ApiError::Invalid(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphSource {
    #[default]
    Observed,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressRequest {
    pub week: u32,
    pub scenario_spec: ScenarioSpec,
    #[serde(default, rename = "use")]
    pub source: GraphSource,
    #[serde(default)]
    pub horizon: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressResponse {
    pub week: u32,
    #[serde(rename = "use")]
    pub source: GraphSource,
    pub horizon: Option<u32>,
    pub scenario: String,
    #[serde(flatten)]
    pub result: ContagionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeksResponse {
    pub weeks: Vec<u32>,
    pub model_loaded: bool,
    pub horizons: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub week: u32,
    pub interval: Interval,
    pub nodes: usize,
    pub edges: usize,
    pub total_tvl: f64,
    pub total_edge_weight: f64,
    /// Largest protocols by TVL.
    pub largest: Vec<(ProtocolId, f64)>,
}

const SUMMARY_TOP: usize = 10;

pub struct ServiceState {
    graphs: LoadedGraphs,
    model: Option<(ForecastModel, Vec<FeaturedGraph>)>,
    calibration: BTreeMap<u32, CalibrationReport>,
    risk: RiskConfig,
    neg_ratio: usize,
    seed: u64,
    predicted: Mutex<BTreeMap<(u32, u32), Arc<ExposureGraph>>>,
}

impl ServiceState {
    pub fn new(
        graphs: LoadedGraphs,
        model: Option<(ForecastModel, Vec<FeaturedGraph>)>,
        calibration: Vec<CalibrationReport>,
        cfg: &PipelineConfig,
    ) -> Self {
        ServiceState {
            graphs,
            model,
            calibration: calibration.into_iter().map(|c| (c.horizon, c)).collect(),
            risk: cfg.risk.clone(),
            neg_ratio: cfg.eval_neg_ratio,
            seed: cfg.seed,
            predicted: Mutex::new(BTreeMap::new()),
        }
    }

    /// Loads graphs and, when present, the checkpoint and calibration report.
    pub fn load(cfg: &PipelineConfig) -> crate::Result<Self> {
        let art = cfg.artifacts();
        let graphs = load_graphs(&art)?;
        let model = match load_checkpoint(&art) {
            Ok(ckpt) => {
                let snaps = load_snapshots(&cfg.snapshots_path())?;
                let featured = featurize(&graphs.graphs, &snaps, &graphs.categories, &ckpt.model.sectors);
                Some((ckpt.model, featured))
            }
            Err(Error::MissingArtifact(p)) => {
                log::info!("no model at {}; predicted graphs disabled", p.display());
                None
            }
            Err(e) => return Err(e),
        };
        let path = art.report("calibration.json");
        let calibration = if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&text)?
        } else {
            Vec::new()
        };
        Ok(ServiceState::new(graphs, model, calibration, cfg))
    }

    pub fn model_loaded(&self) -> bool {
        self.model.is_some()
    }

    fn graph(&self, week: u32) -> ApiResult<(usize, &ExposureGraph)> {
        let i = self
            .graphs
            .index_of(week)
            .ok_or_else(|| ApiError::NotFound(format!("unknown week {week}")))?;
        Ok((i, &self.graphs.graphs[i]))
    }

    pub fn weeks(&self) -> WeeksResponse {
        WeeksResponse {
            weeks: self.graphs.weeks(),
            model_loaded: self.model_loaded(),
            horizons: self.model.as_ref().map(|(m, _)| m.horizons()).unwrap_or_default(),
        }
    }

    pub fn graph_summary(&self, week: u32) -> ApiResult<GraphSummary> {
        let (_, g) = self.graph(week)?;
        let mut largest: Vec<(ProtocolId, f64)> = g.nodes().iter().map(|(p, w)| (p.clone(), *w)).collect();
        largest.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        largest.truncate(SUMMARY_TOP);
        Ok(GraphSummary {
            week,
            interval: g.interval(),
            nodes: g.node_count(),
            edges: g.edge_count(),
            total_tvl: g.total_tvl(),
            total_edge_weight: g.total_edge_weight(),
            largest,
        })
    }

    pub fn risk(&self, week: u32) -> ApiResult<RiskReport> {
        let (_, g) = self.graph(week)?;
        Ok(risk_report(g, &self.graphs.categories, &self.risk)?)
    }

    /// Forecast of week `week + h` made at `week`; cached per `(week, h)`.
    pub fn predicted_graph(&self, week: u32, horizon: u32) -> ApiResult<Arc<ExposureGraph>> {
        let (model, featured) = self
            .model
            .as_ref()
            .ok_or_else(|| ApiError::Conflict("no model loaded".into()))?;
        let (i, _) = self.graph(week)?;
        if !model.horizons().contains(&horizon) {
            return Err(ApiError::Invalid(format!(
                "horizon {horizon} not among model horizons {:?}",
                model.horizons()
            )));
        }
        let mut cache = self.predicted.lock().map_err(|_| ApiError::Internal("cache poisoned".into()))?;
        if let Some(g) = cache.get(&(week, horizon)) {
            return Ok(g.clone());
        }
        let g = Arc::new(forecast_graph(model, featured, i, horizon, self.neg_ratio, self.seed)?);
        cache.insert((week, horizon), g.clone());
        Ok(g)
    }

    /// Parses and validates a raw request body; any shape or value error is
    /// an invalid scenario.
    pub fn parse_stress(body: &serde_json::Value) -> ApiResult<StressRequest> {
        let req: StressRequest =
            serde_json::from_value(body.clone()).map_err(|e| ApiError::Invalid(format!("invalid request: {e}")))?;
        req.scenario_spec.validate()?;
        Ok(req)
    }

    pub fn stress(&self, req: &StressRequest) -> ApiResult<StressResponse> {
        req.scenario_spec.validate()?;
        let result = match req.source {
            GraphSource::Observed => {
                let (_, g) = self.graph(req.week)?;
                run_scenario(g, &self.graphs.categories, &req.scenario_spec)?
            }
            GraphSource::Predicted => {
                if self.model.is_none() {
                    return Err(ApiError::Conflict("no model loaded".into()));
                }
                self.graph(req.week)?;
                let h = req
                    .horizon
                    .ok_or_else(|| ApiError::Invalid("horizon is required for predicted graphs".into()))?;
                let g = self.predicted_graph(req.week, h)?;
                run_scenario(&g, &self.graphs.categories, &req.scenario_spec)?
            }
        };
        Ok(StressResponse {
            week: req.week,
            source: req.source,
            horizon: req.horizon,
            scenario: req.scenario_spec.name.clone(),
            result,
        })
    }

    pub fn calibration(&self, horizon: u32) -> ApiResult<&CalibrationReport> {
        if self.calibration.is_empty() && !self.model_loaded() {
            return Err(ApiError::Conflict("no model loaded".into()));
        }
        self.calibration
            .get(&horizon)
            .ok_or_else(|| ApiError::NotFound(format!("no calibration for horizon {horizon}")))
    }
}
