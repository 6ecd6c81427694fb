//! File-based pipeline: every command reads its inputs from, and writes its
//! artifacts to, a run directory. Rerunning a command on unchanged inputs
//! rewrites byte-identical files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::contagion::{canonical_scenarios, run_scenario, ContagionResult, ScenarioSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    calibration_correlation, evaluate_task1, evaluate_task2, forecast_graph, risk_metric_calibration, stratified_summary,
    write_calibration_csv, write_stress_records_csv, write_task1_csv, write_task2_csv, CalibrationPoint, Persistence,
    StratifiedSummary, StressRecord, Task1Row,
};
use crate::forecast::{train, walk_forward_split, Checkpoint, FeaturedGraph, ForecastModel, Split, TrainConfig, TrainingHistory};
use crate::graph::{
    read_snapshots_jsonl, sequence_from_snapshots, write_snapshots_jsonl, CategoryMap, ExposureGraph, GraphJson,
    HoldingsSnapshot, IssuerMap,
};
use crate::mapper::{
    build_tfidf, read_manual_csv, read_mapping_csv, read_protocols_jsonl, read_token_metadata_jsonl, write_manual_csv,
    write_protocols_jsonl, write_token_metadata_jsonl, MappingTable, Provenance, DEFAULT_SIMILARITY_THRESHOLD,
};
use crate::risk::{early_warning, risk_report, RiskConfig, RiskReport, DEFAULT_WARNING_WINDOW};
use crate::synth::{generate, SynthConfig, SynthStats};
use crate::util::round6;

/// Walk-forward settings; `fold` picks one of the generated folds (the
/// last one by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_min: usize,
    pub val_len: usize,
    pub test_len: usize,
    pub step: usize,
    pub fold: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_min: 31,
            // long enough for the longest default horizon to have targets
            val_len: 12,
            test_len: 16,
            step: 8,
            fold: None,
        }
    }
}

impl SplitConfig {
    pub fn select(&self, n_graphs: usize) -> Result<Split> {
        let folds = walk_forward_split(n_graphs, self.train_min, self.val_len, self.test_len, self.step)?;
        let k = self.fold.unwrap_or(folds.len() - 1);
        folds
            .get(k)
            .cloned()
            .ok_or_else(|| Error::InvalidConfig(format!("fold {k} requested, {} available", folds.len())))
    }
}

/// Input files; unset paths default to the run directory's `data/`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputPaths {
    pub snapshots: Option<PathBuf>,
    pub tokens: Option<PathBuf>,
    pub protocols: Option<PathBuf>,
    pub manual: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub bind: String,
    pub port: u16,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            bind: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Overrides the seeds inside `synth` and `train`.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub inputs: InputPaths,
    /// Node pruning threshold in USD.
    pub prune_theta: f64,
    /// Minimum cosine similarity for a TF-IDF match.
    pub similarity_theta: f64,
    pub warning_window: usize,
    /// Negatives per positive when scoring held-out weeks.
    pub eval_neg_ratio: usize,
    pub risk: RiskConfig,
    pub scenarios: Vec<ScenarioSpec>,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub serve: ServeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            out_dir: PathBuf::from("out"),
            inputs: InputPaths::default(),
            prune_theta: 0.0,
            similarity_theta: DEFAULT_SIMILARITY_THRESHOLD,
            warning_window: DEFAULT_WARNING_WINDOW,
            eval_neg_ratio: 5,
            risk: RiskConfig::default(),
            scenarios: canonical_scenarios(),
            synth: SynthConfig::default(),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.similarity_theta) {
            return Err(Error::InvalidConfig(format!("similarity_theta {} outside [0, 1]", self.similarity_theta)));
        }
        if !(self.prune_theta >= 0.0) || self.eval_neg_ratio == 0 || self.warning_window == 0 {
            return Err(Error::InvalidConfig(
                "prune_theta must be >= 0; eval_neg_ratio and warning_window positive".into(),
            ));
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        self.risk.sis_weights.validate()?;
        self.synth_config().validate()?;
        self.train_config().validate()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn artifacts(&self) -> Artifacts {
        Artifacts::new(&self.out_dir)
    }

    fn input(&self, given: &Option<PathBuf>, default: PathBuf) -> PathBuf {
        given.clone().unwrap_or(default)
    }

    pub fn snapshots_path(&self) -> PathBuf {
        self.input(&self.inputs.snapshots, self.artifacts().data("snapshots.jsonl"))
    }

    pub fn tokens_path(&self) -> PathBuf {
        self.input(&self.inputs.tokens, self.artifacts().data("tokens.jsonl"))
    }

    pub fn protocols_path(&self) -> PathBuf {
        self.input(&self.inputs.protocols, self.artifacts().data("protocols.jsonl"))
    }

    pub fn manual_path(&self) -> PathBuf {
        self.input(&self.inputs.manual, self.artifacts().data("manual_map.csv"))
    }
}

/// Layout of a run directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Artifacts { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    pub fn mapping(&self) -> PathBuf {
        self.root.join("mapping.csv")
    }

    pub fn graphs_dir(&self) -> PathBuf {
        self.root.join("graphs")
    }

    pub fn graph(&self, week: u32) -> PathBuf {
        self.graphs_dir().join(format!("week_{week:04}.json"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.graphs_dir().join("manifest.json")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model").join("checkpoint.json")
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    require(path)?;
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Graph files index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub weeks: Vec<u32>,
    pub categories: CategoryMap,
    pub prune_theta: f64,
}

/// Everything downstream commands need from `build`.
#[derive(Debug, Clone)]
pub struct LoadedGraphs {
    pub graphs: Vec<ExposureGraph>,
    pub categories: CategoryMap,
}

impl LoadedGraphs {
    pub fn weeks(&self) -> Vec<u32> {
        self.graphs.iter().map(ExposureGraph::week).collect()
    }

    pub fn index_of(&self, week: u32) -> Option<usize> {
        self.graphs.iter().position(|g| g.week() == week)
    }
}

pub fn load_graphs(art: &Artifacts) -> Result<LoadedGraphs> {
    let manifest: Manifest = read_json(&art.manifest())?;
    let graphs = manifest
        .weeks
        .iter()
        .map(|w| ExposureGraph::from_json(read_json::<GraphJson>(&art.graph(*w))?))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedGraphs {
        graphs,
        categories: manifest.categories,
    })
}

pub fn load_snapshots(path: &Path) -> Result<Vec<HoldingsSnapshot>> {
    read_snapshots_jsonl(open(path)?)
}

/// Pairs each graph with node descriptors taken from the snapshot at the
/// end of its interval.
pub fn featurize(graphs: &[ExposureGraph], snapshots: &[HoldingsSnapshot], categories: &CategoryMap, sectors: &[String]) -> Vec<FeaturedGraph> {
    let by_week: BTreeMap<u32, &HoldingsSnapshot> = snapshots.iter().map(|s| (s.week, s)).collect();
    graphs
        .iter()
        .map(|g| FeaturedGraph::new(g.clone(), by_week.get(&g.week()).copied(), categories, sectors))
        .collect()
}

pub fn load_featured(cfg: &PipelineConfig) -> Result<(LoadedGraphs, Vec<FeaturedGraph>)> {
    let loaded = load_graphs(&cfg.artifacts())?;
    let snaps = load_snapshots(&cfg.snapshots_path())?;
    let featured = featurize(&loaded.graphs, &snaps, &loaded.categories, &cfg.train.sectors);
    Ok((loaded, featured))
}

pub fn load_checkpoint(art: &Artifacts) -> Result<Checkpoint> {
    let path = art.checkpoint();
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.clone()),
        _ => Error::io(&path, e),
    })?;
    Checkpoint::from_json(&text)
}

pub fn cmd_synth(cfg: &PipelineConfig) -> Result<SynthStats> {
    let ds = generate(&cfg.synth_config())?;
    let art = cfg.artifacts();
    let p = art.data("snapshots.jsonl");
    write_with(&p, |w| write_snapshots_jsonl(&ds.snapshots, w).map_err(io_at(&p)))?;
    let p = art.data("tokens.jsonl");
    write_with(&p, |w| write_token_metadata_jsonl(&ds.tokens, w).map_err(io_at(&p)))?;
    let p = art.data("protocols.jsonl");
    write_with(&p, |w| write_protocols_jsonl(&ds.protocols, w).map_err(io_at(&p)))?;
    write_with(&art.data("manual_map.csv"), |w| write_manual_csv(&ds.manual, w))?;
    write_with(&art.data("true_issuers.csv"), |w| write_manual_csv(&ds.issuers, w))?;
    let stats = ds.stats()?;
    write_json(&art.data("synth_stats.json"), &stats)?;
    info!(
        "synth: {} weeks, {:.1} nodes, {:.1} edges, overlap {:.4}",
        stats.weeks, stats.mean_nodes, stats.mean_edges, stats.mean_overlap
    );
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingSummary {
    pub tokens: usize,
    pub by_provenance: BTreeMap<String, usize>,
    /// Share of tokens mapped to their true issuer, when ground truth is
    /// available (synthetic runs).
    pub accuracy: Option<f64>,
}

pub fn cmd_map(cfg: &PipelineConfig) -> Result<MappingSummary> {
    let art = cfg.artifacts();
    let tokens = read_token_metadata_jsonl(open(&cfg.tokens_path())?)?;
    let manual = match cfg.manual_path() {
        p if p.exists() => read_manual_csv(open(&p)?)?,
        _ => BTreeMap::new(),
    };
    let protocols = read_protocols_jsonl(open(&cfg.protocols_path())?)?;
    let descriptions = protocols
        .iter()
        .map(|p| (p.protocol_id.clone(), p.description.clone()))
        .collect();
    let tfidf = build_tfidf(&descriptions).ok();
    let table = MappingTable::build(&tokens, &manual, tfidf.as_ref(), cfg.similarity_theta)?;
    write_with(&art.mapping(), |w| table.write_csv(w))?;

    let truth_path = art.data("true_issuers.csv");
    let accuracy = if truth_path.exists() {
        let truth = read_manual_csv(open(&truth_path)?)?;
        let issuers = table.issuer_map();
        let hits = tokens
            .iter()
            .filter(|t| match truth.get(&t.token_id) {
                Some(q) => issuers.get(&t.token_id) == Some(q),
                // primary-market tokens have no issuer and should fall through
                None => table.entries[&t.token_id].provenance == Provenance::SelfProtocol,
            })
            .count();
        Some(round6(hits as f64 / tokens.len().max(1) as f64))
    } else {
        None
    };
    let summary = MappingSummary {
        tokens: tokens.len(),
        by_provenance: table
            .count_by_provenance()
            .into_iter()
            .map(|(p, n)| (p.as_str().to_string(), n))
            .collect(),
        accuracy,
    };
    write_json(&art.report("mapping_summary.json"), &summary)?;
    info!("map: {} tokens {:?}", summary.tokens, summary.by_provenance);
    Ok(summary)
}

fn load_mapping(cfg: &PipelineConfig) -> Result<IssuerMap> {
    let path = cfg.artifacts().mapping();
    if !path.exists() {
        info!("no mapping at {}, computing it", path.display());
        cmd_map(cfg)?;
    }
    read_mapping_csv(open(&path)?)
}

pub fn cmd_build(cfg: &PipelineConfig) -> Result<Manifest> {
    let art = cfg.artifacts();
    let snaps = load_snapshots(&cfg.snapshots_path())?;
    let issuers = load_mapping(cfg)?;
    let seq = sequence_from_snapshots(&snaps, &issuers, cfg.prune_theta)?;
    let mut categories = CategoryMap::new();
    for s in &snaps {
        categories.extend(s.categories());
    }
    let dir = art.graphs_dir();
    if dir.exists() {
        // stale weeks from an earlier, longer input must not survive
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for g in seq.graphs() {
        let path = art.graph(g.week());
        write_with(&path, |w| w.write_all(g.to_json_string().as_bytes()).map_err(io_at(&path)))?;
    }
    let manifest = Manifest {
        weeks: seq.graphs().iter().map(ExposureGraph::week).collect(),
        categories,
        prune_theta: cfg.prune_theta,
    };
    write_json(&art.manifest(), &manifest)?;
    info!("build: {} graphs", manifest.weeks.len());
    Ok(manifest)
}

pub fn cmd_metrics(cfg: &PipelineConfig) -> Result<Vec<RiskReport>> {
    let art = cfg.artifacts();
    let loaded = load_graphs(&art)?;
    let mut reports = Vec::new();
    for g in &loaded.graphs {
        let r = risk_report(g, &loaded.categories, &cfg.risk)?;
        write_json(&art.report(&format!("risk/week_{:04}.json", g.week())), &r)?;
        reports.push(r);
    }
    write_with(&art.report("risk_timeseries.csv"), |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["week", "metric", "value"])?;
        for r in &reports {
            for (name, v) in r.scalar_metrics() {
                out.write_record([r.week.to_string(), name.to_string(), v.map(|x| format!("{:.6}", round6(x))).unwrap_or_default()])?;
            }
        }
        Ok(out.flush().map_err(io_at(&art.report("risk_timeseries.csv")))?)
    })?;
    let mut warnings = Vec::new();
    for metric in ["tvl_hhi", "edge_hhi"] {
        let series: Vec<(u32, f64)> = reports
            .iter()
            .filter_map(|r| {
                let v = r.scalar_metrics().into_iter().find(|(n, _)| *n == metric)?.1?;
                Some((r.week, v))
            })
            .collect();
        let values: BTreeMap<u32, f64> = series.iter().copied().collect();
        for (week, flagged) in early_warning(&series, cfg.warning_window) {
            warnings.push((week, metric, values[&week], flagged));
        }
    }
    write_with(&art.report("early_warning.csv"), |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["week", "metric", "value", "flagged"])?;
        for (week, metric, v, f) in &warnings {
            out.write_record([week.to_string(), metric.to_string(), format!("{:.6}", round6(*v)), f.to_string()])?;
        }
        Ok(out.flush().map_err(io_at(&art.report("early_warning.csv")))?)
    })?;
    info!(
        "metrics: {} weeks, {} early-warning flags",
        reports.len(),
        warnings.iter().filter(|w| w.3).count()
    );
    Ok(reports)
}

/// One scenario outcome on an observed week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressRow {
    pub week: u32,
    pub scenario: String,
    pub result: ContagionResult,
}

pub fn cmd_stress(cfg: &PipelineConfig) -> Result<Vec<StressRow>> {
    let art = cfg.artifacts();
    let loaded = load_graphs(&art)?;
    let mut rows = Vec::new();
    for g in &loaded.graphs {
        let mut week_rows = Vec::new();
        for spec in &cfg.scenarios {
            match run_scenario(g, &loaded.categories, spec) {
                Ok(result) => week_rows.push(StressRow {
                    week: g.week(),
                    scenario: spec.name.clone(),
                    result,
                }),
                Err(Error::EmptySelection(name)) => warn!("week {}: scenario {name} selects nothing", g.week()),
                Err(e) => return Err(e),
            }
        }
        write_json(&art.report(&format!("stress/week_{:04}.json", g.week())), &week_rows)?;
        rows.extend(week_rows);
    }
    let path = art.report("stress.csv");
    write_with(&path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["week", "scenario", "system_loss_usd", "system_loss_pct", "depth", "affected_count", "distressed_count"])?;
        for r in &rows {
            out.write_record([
                r.week.to_string(),
                r.scenario.clone(),
                format!("{:.6}", round6(r.result.system_loss_usd)),
                format!("{:.6}", round6(r.result.system_loss_pct)),
                r.result.depth.to_string(),
                r.result.affected_count.to_string(),
                r.result.distressed_count.to_string(),
            ])?;
        }
        Ok(out.flush().map_err(io_at(&path))?)
    })?;
    info!("stress: {} rows", rows.len());
    Ok(rows)
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<Checkpoint> {
    let art = cfg.artifacts();
    let (_, featured) = load_featured(cfg)?;
    let split = cfg.split.select(featured.len())?;
    let tc = cfg.train_config();
    info!("train: split {:?}", split);
    let (model, history) = train(&featured, &split, &tc)?;
    let ckpt = Checkpoint {
        version: Checkpoint::VERSION,
        config: tc,
        split: Some(split),
        model,
        history,
    };
    let path = art.checkpoint();
    write_with(&path, |w| w.write_all(ckpt.to_json().as_bytes()).map_err(io_at(&path)))?;
    write_history_csv(&ckpt.history, &art.report("training_history.csv"))?;
    info!(
        "train: {} epochs, best {:?}",
        ckpt.history.epochs.len(),
        ckpt.history.best_epoch
    );
    Ok(ckpt)
}

fn write_history_csv(h: &TrainingHistory, path: &Path) -> Result<()> {
    write_with(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "loss", "exist", "weight", "node", "grad_norm", "val_auprc"])?;
        for e in &h.epochs {
            out.write_record([
                e.epoch.to_string(),
                format!("{:.6}", round6(e.loss)),
                format!("{:.6}", round6(e.exist)),
                format!("{:.6}", round6(e.weight)),
                format!("{:.6}", round6(e.node)),
                format!("{:.6}", round6(e.grad_norm)),
                e.val_auprc.map(|v| format!("{:.6}", round6(v))).unwrap_or_default(),
            ])?;
        }
        Ok(out.flush().map_err(io_at(path))?)
    })
}

fn test_split(ckpt: &Checkpoint) -> Result<&Split> {
    ckpt.split
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("checkpoint has no held-out split".into()))
}

/// Held-out results of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub split: Split,
    pub task1: Vec<Task1Row>,
    pub task2: Vec<StratifiedSummary>,
    /// Mean over horizons of model AUPRC minus persistence AUPRC.
    pub delta_auprc: Option<f64>,
}

impl EvaluationReport {
    pub fn mean_auprc(&self, model: &str) -> Option<f64> {
        let v: Vec<f64> = self.task1.iter().filter(|r| r.model == model).map(|r| r.auprc).collect::<Option<_>>()?;
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Worst-20% win rate pooled over horizons, weighted by stratum size.
    pub fn pooled_win_rate(&self) -> Option<f64> {
        let k: usize = self.task2.iter().map(|s| s.worst_cases).sum();
        let wins: f64 = self.task2.iter().map(|s| s.win_rate_worst20 * s.worst_cases as f64).sum();
        (k > 0).then(|| wins / k as f64)
    }
}

/// Scores `model` and persistence on the split's test pairs.
pub fn evaluate_model(
    model: &ForecastModel,
    featured: &[FeaturedGraph],
    categories: &CategoryMap,
    split: &Split,
    cfg: &PipelineConfig,
) -> Result<(EvaluationReport, Vec<StressRecord>)> {
    let pairs = split.test_pairs(&model.horizons());
    if pairs.is_empty() {
        return Err(Error::InsufficientHistory("no test pairs for the configured horizons".into()));
    }
    let task1 = evaluate_task1(&[model, &Persistence], featured, &pairs, cfg.eval_neg_ratio, cfg.seed)?;
    let records = evaluate_task2(model, featured, categories, &pairs, &cfg.scenarios, cfg.eval_neg_ratio, cfg.seed)?;
    let mut report = EvaluationReport {
        split: split.clone(),
        task1,
        task2: stratified_summary(&records),
        delta_auprc: None,
    };
    report.delta_auprc = report
        .mean_auprc("model")
        .zip(report.mean_auprc("persistence"))
        .map(|(m, p)| m - p);
    Ok((report, records))
}

pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<EvaluationReport> {
    let art = cfg.artifacts();
    let ckpt = load_checkpoint(&art)?;
    let (loaded, featured) = load_featured(cfg)?;
    let (report, records) = evaluate_model(&ckpt.model, &featured, &loaded.categories, test_split(&ckpt)?, cfg)?;
    write_with(&art.report("task1.csv"), |w| write_task1_csv(&report.task1, w))?;
    write_with(&art.report("stress_records.csv"), |w| write_stress_records_csv(&records, w))?;
    write_with(&art.report("task2.csv"), |w| write_task2_csv(&report.task2, w))?;
    write_json(&art.report("evaluation.json"), &report)?;
    info!(
        "evaluate: dAUPRC {:?}, worst-20% win rate {:?}",
        report.delta_auprc,
        report.pooled_win_rate()
    );
    Ok(report)
}

/// Predicted-vs-realized points for one horizon plus correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub horizon: u32,
    pub points: Vec<CalibrationPoint>,
    pub correlation: BTreeMap<String, Option<f64>>,
}

/// Forward-looking view from the latest observed week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardView {
    pub origin_week: u32,
    pub horizon: u32,
    pub nodes: usize,
    pub edges: usize,
    pub watchlist: Vec<(crate::graph::ProtocolId, f64)>,
    pub spillover_index: Option<f64>,
    pub density: Option<f64>,
    pub tvl_hhi: Option<f64>,
    pub stress: Vec<(String, f64)>,
    pub degenerate: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastMeasureOutput {
    pub calibration: Vec<CalibrationReport>,
    pub dashboard: Vec<ForwardView>,
}

const CALIBRATED_METRICS: [&str; 5] = ["density", "tvl_hhi", "edge_hhi", "spillover_index", "mean_sis"];

pub fn calibration_for(
    model: &ForecastModel,
    featured: &[FeaturedGraph],
    categories: &CategoryMap,
    split: &Split,
    cfg: &PipelineConfig,
) -> Result<Vec<CalibrationReport>> {
    let mut out = Vec::new();
    for h in model.horizons() {
        let origins: Vec<usize> = split.test_pairs(&[h]).into_iter().map(|(t, _)| t).collect();
        let preds = origins
            .iter()
            .map(|&t| forecast_graph(model, featured, t, h, cfg.eval_neg_ratio, cfg.seed))
            .collect::<Result<Vec<_>>>()?;
        let aligned: Vec<_> = origins
            .iter()
            .zip(&preds)
            .map(|(&t, p)| {
                let real = &featured[t + h as usize].graph;
                (real.week(), h, p, real)
            })
            .collect();
        let points = risk_metric_calibration(&aligned, categories, &cfg.risk)?;
        let correlation = CALIBRATED_METRICS
            .iter()
            .map(|m| (m.to_string(), calibration_correlation(&points, m)))
            .collect();
        out.push(CalibrationReport {
            horizon: h,
            points,
            correlation,
        });
    }
    Ok(out)
}

pub fn forward_view(
    model: &ForecastModel,
    featured: &[FeaturedGraph],
    categories: &CategoryMap,
    h: u32,
    cfg: &PipelineConfig,
) -> Result<(ExposureGraph, ForwardView)> {
    let t = featured.len() - 1;
    let pred = forecast_graph(model, featured, t, h, cfg.eval_neg_ratio, cfg.seed)?;
    let report = risk_report(&pred, categories, &cfg.risk)?;
    let mut stress = Vec::new();
    for spec in &cfg.scenarios {
        match run_scenario(&pred, categories, spec) {
            Ok(r) => stress.push((spec.name.clone(), r.system_loss_pct)),
            Err(Error::EmptySelection(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let view = ForwardView {
        origin_week: featured[t].graph.week(),
        horizon: h,
        nodes: report.nodes,
        edges: report.edges,
        watchlist: report.top_sis.clone(),
        spillover_index: report.spillover_index,
        density: report.density,
        tvl_hhi: report.tvl_hhi,
        stress,
        degenerate: report.degenerate,
    };
    Ok((pred, view))
}

pub fn cmd_forecast_measure(cfg: &PipelineConfig) -> Result<ForecastMeasureOutput> {
    let art = cfg.artifacts();
    let ckpt = load_checkpoint(&art)?;
    let (loaded, featured) = load_featured(cfg)?;
    let calibration = calibration_for(&ckpt.model, &featured, &loaded.categories, test_split(&ckpt)?, cfg)?;
    let points: Vec<CalibrationPoint> = calibration.iter().flat_map(|c| c.points.clone()).collect();
    write_with(&art.report("calibration.csv"), |w| write_calibration_csv(&points, w))?;
    write_json(&art.report("calibration.json"), &calibration)?;

    let mut dashboard = Vec::new();
    for h in ckpt.model.horizons() {
        let (pred, view) = forward_view(&ckpt.model, &featured, &loaded.categories, h, cfg)?;
        let path = art.report(&format!("forward/predicted_h{h:02}.json"));
        write_with(&path, |w| w.write_all(pred.to_json_string().as_bytes()).map_err(io_at(&path)))?;
        dashboard.push(view);
    }
    write_json(&art.report("forward_dashboard.json"), &dashboard)?;
    info!("forecast-measure: {} horizons", dashboard.len());
    Ok(ForecastMeasureOutput { calibration, dashboard })
}
