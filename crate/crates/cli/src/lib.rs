//! Command dispatch and the HTTP layer for `dexp`.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clap::{Parser, Subcommand};
use serde::Serialize;

use dexp_core::pipeline::{self, PipelineConfig};
use dexp_core::service::{ApiError, ServiceState};

#[derive(Debug, Parser)]
#[command(name = "dexp", version, about = "Credit-exposure graphs, systemic risk and forecast-then-measure stress tests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML pipeline config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic holdings dataset.
    Synth,
    /// Build weekly exposure graphs.
    Build,
    /// Resolve token issuers.
    Map,
    /// Risk reports and early-warning flags per week.
    Metrics,
    /// Run the configured scenarios on every observed week.
    Stress,
    /// Train the forecaster on the walk-forward split.
    Train,
    /// Score the forecaster and persistence on held-out weeks.
    Evaluate,
    /// Risk and stress measures on forecast graphs.
    ForecastMeasure,
    /// Serve the JSON API.
    Serve,
}

impl Cli {
    pub fn pipeline_config(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Runs one batch command and prints its summary.
pub fn run_command(cmd: Command, cfg: &PipelineConfig) -> anyhow::Result<()> {
    match cmd {
        Command::Synth => print_json(&pipeline::cmd_synth(cfg)?),
        Command::Build => {
            let m = pipeline::cmd_build(cfg)?;
            println!("built {} graphs into {}", m.weeks.len(), cfg.artifacts().graphs_dir().display());
            Ok(())
        }
        Command::Map => print_json(&pipeline::cmd_map(cfg)?),
        Command::Metrics => {
            let reports = pipeline::cmd_metrics(cfg)?;
            println!("wrote {} risk reports", reports.len());
            Ok(())
        }
        Command::Stress => {
            let rows = pipeline::cmd_stress(cfg)?;
            println!("wrote {} stress rows", rows.len());
            Ok(())
        }
        Command::Train => {
            let ckpt = pipeline::cmd_train(cfg)?;
            print_json(&ckpt.history)
        }
        Command::Evaluate => {
            let report = pipeline::cmd_evaluate(cfg)?;
            print_json(&report.task1)?;
            print_json(&report.task2)
        }
        Command::ForecastMeasure => print_json(&pipeline::cmd_forecast_measure(cfg)?.dashboard),
        Command::Serve => serve(cfg),
    }
}

struct ApiErrorResponse(ApiError);

impl IntoResponse for ApiErrorResponse {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0.body())).into_response()
    }
}

type Shared = Arc<ServiceState>;

fn reply<T: Serialize>(r: Result<T, ApiError>) -> Response {
    match r {
        Ok(v) => Json(v).into_response(),
        Err(e) => ApiErrorResponse(e).into_response(),
    }
}

async fn weeks(State(s): State<Shared>) -> Response {
    Json(s.weeks()).into_response()
}

async fn graph_summary(State(s): State<Shared>, Path(week): Path<u32>) -> Response {
    reply(s.graph_summary(week))
}

async fn risk(State(s): State<Shared>, Path(week): Path<u32>) -> Response {
    reply(s.risk(week))
}

async fn stress(State(s): State<Shared>, body: Option<Json<serde_json::Value>>) -> Response {
    let Some(Json(body)) = body else {
        return ApiErrorResponse(ApiError::Invalid("request body must be JSON".into())).into_response();
    };
    // simulations are CPU-bound; keep them off the async workers
    let result = tokio::task::spawn_blocking(move || ServiceState::parse_stress(&body).and_then(|req| s.stress(&req))).await;
    match result {
        Ok(r) => reply(r),
        Err(e) => ApiErrorResponse(ApiError::Internal(e.to_string())).into_response(),
    }
}

async fn calibration(State(s): State<Shared>, Path(horizon): Path<u32>) -> Response {
    reply(s.calibration(horizon))
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/weeks", get(weeks))
        .route("/graph/{week}/summary", get(graph_summary))
        .route("/risk/{week}", get(risk))
        .route("/stress", post(stress))
        .route("/calibration/{horizon}", get(calibration))
        .with_state(state)
}

fn serve(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let state = Arc::new(ServiceState::load(cfg)?);
    let addr = format!("{}:{}", cfg.serve.bind, cfg.serve.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        log::info!("serving on http://{addr}");
        axum::serve(listener, router(state)).await?;
        Ok(())
    })
}
