//! Stage runners behind the CLI. Every stage reads its inputs from files
//! under the output root and writes its own files there:
//!
//! | stage    | reads                                  | writes                          |
//! |----------|----------------------------------------|---------------------------------|
//! | ingest   | `<scenes>/*.json`                      | `db/<scene_id>.jsonl`           |
//! | label    | `db/`                                  | `labels.jsonl`, `plan_gt.jsonl` |
//! | generate | `db/`, `labels.jsonl`                  | `qa/template.jsonl`             |
//! | caption  | `db/`, labels, `qa/template.jsonl`, audit log | `qa/final.jsonl`, `qa/dropped.jsonl` |
//! | stats    | `db/`, `labels.jsonl`, `qa/*.jsonl`    | `stats/`                        |

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::action_labeler::{label_scene, ActionLabel, LabelError, TrajectorySample};
use crate::analysis::{export_stats, AnalysisError, ExportFormat, StatsAccumulator, StatsBundle};
use crate::config::{ConfigError, PipelineConfig};
use crate::eval_metrics::{
    evaluate_captions, evaluate_plans, plan_ground_truth, MetricError, MetricReport, PlanGroundTruth, PlanPrediction,
};
use crate::reasoning_orchestrator::{
    build_prompt, repair_or_finalize, request_body, request_hash, validate_grounding, AuditLog, AuditRecord,
    FinalAnnotation, HttpTransport, MllmClient, OrchestratorError, PromptBundle, Sleeper, Verdict,
};
use crate::scene_store::{ingest_scene, partition_windows, read_database, write_database, SceneError, SceneRecord};
use crate::template_engine::{
    action_facts, extract_facts, generate_qa, QaCategory, QaPair, TemplateError,
};
use crate::temporal_memory::{run_demo, DemoReport, TemporalError};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    User = 1,
    UpstreamData = 2,
    Transport = 3,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone, thiserror::Error, Serialize)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: String,
    pub kind: String,
    pub class: ErrorClass,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: &str, kind: &str, class: ErrorClass, message: impl Into<String>) -> Self {
        Self {
            stage: stage.into(),
            kind: kind.into(),
            class,
            message: message.into(),
        }
    }

    pub fn missing(stage: &str, message: impl Into<String>) -> Self {
        Self::new(stage, "missing_input", ErrorClass::UpstreamData, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.class.exit_code()
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind,
            "stage": self.stage,
            "message": self.message,
            "exit_code": self.exit_code(),
        })
        .to_string()
    }
}

/// Maps a module error to a kind and an exit class.
pub trait Classify: std::fmt::Display {
    fn classify(&self) -> (&'static str, ErrorClass);
}

impl Classify for ConfigError {
    fn classify(&self) -> (&'static str, ErrorClass) {
        ("config", ErrorClass::User)
    }
}

impl Classify for std::io::Error {
    fn classify(&self) -> (&'static str, ErrorClass) {
        ("io", ErrorClass::User)
    }
}

impl Classify for SceneError {
    fn classify(&self) -> (&'static str, ErrorClass) {
        let kind = match self {
            SceneError::Schema { .. } => "schema",
            SceneError::Order { .. } => "order",
            SceneError::Geometry { .. } => "geometry",
            SceneError::TooShort { .. } => "too_short",
            SceneError::InvalidWindow(_) => return ("config", ErrorClass::User),
            SceneError::Database { .. } => "database",
            SceneError::Io(_) => return ("io", ErrorClass::User),
        };
        (kind, ErrorClass::UpstreamData)
    }
}

impl Classify for LabelError {
    fn classify(&self) -> (&'static str, ErrorClass) {
        match self {
            LabelError::Config(_) => ("config", ErrorClass::User),
            LabelError::DegenerateTrajectory(_) => ("degenerate_trajectory", ErrorClass::UpstreamData),
        }
    }
}

impl Classify for TemplateError {
    fn classify(&self) -> (&'static str, ErrorClass) {
        match self {
            TemplateError::Config(_) | TemplateError::Load { .. } | TemplateError::InvalidTemplate(_) => {
                ("config", ErrorClass::User)
            }
            TemplateError::EmptyTemplateSet(_) => ("empty_template_set", ErrorClass::User),
            TemplateError::MissingSlot { .. } => ("missing_slot", ErrorClass::UpstreamData),
            TemplateError::FactType { .. } => ("fact_type", ErrorClass::UpstreamData),
        }
    }
}

impl Classify for OrchestratorError {
    fn classify(&self) -> (&'static str, ErrorClass) {
        let class = match self {
            OrchestratorError::Transport { .. }
            | OrchestratorError::Auth(_)
            | OrchestratorError::RateLimit { .. }
            | OrchestratorError::Malformed(_) => ErrorClass::Transport,
            OrchestratorError::Budget { .. } | OrchestratorError::Media { .. } | OrchestratorError::MissingInput(_) => {
                ErrorClass::UpstreamData
            }
            OrchestratorError::Config(_) | OrchestratorError::Io(_) => ErrorClass::User,
        };
        (self.kind(), class)
    }
}

impl Classify for MetricError {
    fn classify(&self) -> (&'static str, ErrorClass) {
        let kind = match self {
            MetricError::Grid(_) => "grid",
            MetricError::EmptyBatch => "empty_batch",
            MetricError::EmptyCandidate => "empty_candidate",
            MetricError::CorpusTooSmall(_) => "corpus_too_small",
            MetricError::DegenerateGeometry(_) => "degenerate_geometry",
            MetricError::NonFinite(_) => "non_finite",
            MetricError::MissingSample(_) => "missing_sample",
            MetricError::InvalidInput(_) => "invalid_input",
        };
        (kind, ErrorClass::UpstreamData)
    }
}

impl Classify for AnalysisError {
    fn classify(&self) -> (&'static str, ErrorClass) {
        match self {
            AnalysisError::EmptyCorpus => ("empty_corpus", ErrorClass::UpstreamData),
            AnalysisError::Config(_) => ("config", ErrorClass::User),
            AnalysisError::Io { .. } | AnalysisError::Csv { .. } => ("io", ErrorClass::User),
        }
    }
}

impl Classify for TemporalError {
    fn classify(&self) -> (&'static str, ErrorClass) {
        match self {
            TemporalError::Config(_) => ("config", ErrorClass::User),
            _ => ("temporal_memory", ErrorClass::UpstreamData),
        }
    }
}

/// `map_err` adapter adding stage context.
pub fn at<E: Classify>(stage: &str) -> impl Fn(E) -> PipelineError + '_ {
    move |e| {
        let (kind, class) = e.classify();
        PipelineError::new(stage, kind, class, e.to_string())
    }
}

/// What a stage wrote, printed by the CLI as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub outputs: Vec<PathBuf>,
    pub counts: BTreeMap<String, usize>,
}

impl StageSummary {
    fn new(stage: &str, outputs: Vec<PathBuf>, counts: &[(&str, usize)]) -> Self {
        tracing::info!(stage, ?counts, "stage finished");
        Self {
            stage: stage.into(),
            outputs,
            counts: counts.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

/// One row of `labels.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub scene_id: String,
    pub frame_index: usize,
    pub frame_id: String,
    pub label: ActionLabel,
    pub trajectory: TrajectorySample,
}

/// Line of a caption-prediction file for `eval-vqa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionPrediction {
    pub sample_id: String,
    pub answer: String,
}

/// Caption outcome that did not produce a QA pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRecord {
    pub key: String,
    pub reason: String,
}

/// Sample id shared by prompts, audit records and VQA evaluation:
/// `<scene>#<window>/<category>`.
pub fn qa_key(pair: &QaPair) -> String {
    format!("{}#{}/{}", pair.scene_id, pair.window_index, pair.category.as_str())
}

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Self {
            root: cfg.paths.out.clone(),
        }
    }

    pub fn db(&self) -> PathBuf {
        self.root.join("db")
    }

    pub fn labels(&self) -> PathBuf {
        self.root.join("labels.jsonl")
    }

    pub fn plan_gt(&self) -> PathBuf {
        self.root.join("plan_gt.jsonl")
    }

    pub fn template_qa(&self) -> PathBuf {
        self.root.join("qa").join("template.jsonl")
    }

    pub fn final_qa(&self) -> PathBuf {
        self.root.join("qa").join("final.jsonl")
    }

    pub fn dropped_qa(&self) -> PathBuf {
        self.root.join("qa").join("dropped.jsonl")
    }

    pub fn prompts(&self) -> PathBuf {
        self.root.join("qa").join("prompts.jsonl")
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("stats")
    }
}

fn pool(jobs: usize, stage: &str) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::new(stage, "config", ErrorClass::User, format!("thread pool: {e}")))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, stage: &str) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(|_| PipelineError::missing(stage, format!("{} not found", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(at(stage))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| {
            PipelineError::new(stage, "parse", ErrorClass::UpstreamData, format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T], stage: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(at(stage))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(at(stage))?);
    for r in rows {
        let line = serde_json::to_string(r).map_err(|e| PipelineError::new(stage, "serialize", ErrorClass::User, e.to_string()))?;
        w.write_all(line.as_bytes()).map_err(at(stage))?;
        w.write_all(b"\n").map_err(at(stage))?;
    }
    w.flush().map_err(at(stage))
}

fn sorted_files(dir: &Path, ext: &str, stage: &str) -> Result<Vec<PathBuf>, PipelineError> {
    let entries = fs::read_dir(dir).map_err(|_| PipelineError::missing(stage, format!("directory {} not found", dir.display())))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.map_err(at(stage))?.path();
        if p.is_file() && p.extension().is_some_and(|x| x == ext) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn safe_scene_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Parses every `*.json` scene document and writes one database file per
/// scene. Stale database files are removed first.
pub fn run_ingest(cfg: &PipelineConfig, jobs: usize) -> Result<StageSummary, PipelineError> {
    const STAGE: &str = "ingest";
    let layout = Layout::new(cfg);
    let inputs = sorted_files(&cfg.paths.scenes, "json", STAGE)?;
    if inputs.is_empty() {
        return Err(PipelineError::missing(STAGE, format!("no *.json scenes in {}", cfg.paths.scenes.display())));
    }
    let scenes: Vec<SceneRecord> = pool(jobs, STAGE)?.install(|| {
        inputs
            .par_iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(at(STAGE))?;
                ingest_scene(&text).map_err(|e| {
                    let mut err = at(STAGE)(e);
                    err.message = format!("{}: {}", p.display(), err.message);
                    err
                })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut seen = HashMap::new();
    for (s, p) in scenes.iter().zip(&inputs) {
        if !safe_scene_id(&s.scene_id) {
            return Err(PipelineError::new(STAGE, "schema", ErrorClass::UpstreamData, format!("{}: scene_id {:?} is not a safe file name", p.display(), s.scene_id)));
        }
        if let Some(prev) = seen.insert(s.scene_id.clone(), p) {
            return Err(PipelineError::new(
                STAGE,
                "schema",
                ErrorClass::UpstreamData,
                format!("scene_id {:?} appears in {} and {}", s.scene_id, prev.display(), p.display()),
            ));
        }
    }
    let db = layout.db();
    fs::create_dir_all(&db).map_err(at(STAGE))?;
    for stale in sorted_files(&db, "jsonl", STAGE)? {
        fs::remove_file(stale).map_err(at(STAGE))?;
    }
    let mut outputs = Vec::new();
    let mut frames = 0;
    for s in &scenes {
        let path = db.join(format!("{}.jsonl", s.scene_id));
        let mut w = BufWriter::new(File::create(&path).map_err(at(STAGE))?);
        write_database(s, &mut w).map_err(at(STAGE))?;
        w.flush().map_err(at(STAGE))?;
        frames += s.frames.len();
        outputs.push(path);
    }
    Ok(StageSummary::new(STAGE, outputs, &[("scenes", scenes.len()), ("frames", frames)]))
}

/// Scenes from the database, in file-name order.
pub fn load_database(cfg: &PipelineConfig, stage: &str) -> Result<Vec<SceneRecord>, PipelineError> {
    let files = sorted_files(&Layout::new(cfg).db(), "jsonl", stage)?;
    if files.is_empty() {
        return Err(PipelineError::missing(stage, "database is empty; run ingest first"));
    }
    files
        .iter()
        .map(|p| {
            let f = File::open(p).map_err(at(stage))?;
            read_database(BufReader::new(f)).map_err(|e| {
                let mut err = at(stage)(e);
                err.message = format!("{}: {}", p.display(), err.message);
                err
            })
        })
        .collect()
}

pub fn run_label(cfg: &PipelineConfig, jobs: usize) -> Result<StageSummary, PipelineError> {
    const STAGE: &str = "label";
    cfg.labeler.validate().map_err(at(STAGE))?;
    let layout = Layout::new(cfg);
    let scenes = load_database(cfg, STAGE)?;
    let per_scene: Vec<(Vec<LabelRow>, Vec<PlanGroundTruth>)> = pool(jobs, STAGE)?.install(|| {
        scenes
            .par_iter()
            .map(|scene| {
                let labels = label_scene(scene, &cfg.labeler).map_err(at(STAGE))?;
                let mut rows = Vec::with_capacity(labels.len());
                let mut gts = Vec::new();
                for (i, label, trajectory) in labels {
                    rows.push(LabelRow {
                        scene_id: scene.scene_id.clone(),
                        frame_index: i,
                        frame_id: scene.frames[i].frame_id.clone(),
                        label,
                        trajectory,
                    });
                    if let Some(gt) = plan_ground_truth(scene, i, &cfg.metrics.grid) {
                        gts.push(gt);
                    }
                }
                Ok((rows, gts))
            })
            .collect::<Result<Vec<_>, PipelineError>>()
    })?;
    let (labels, gts): (Vec<_>, Vec<_>) = per_scene.into_iter().unzip();
    let labels: Vec<LabelRow> = labels.into_iter().flatten().collect();
    let gts: Vec<PlanGroundTruth> = gts.into_iter().flatten().collect();
    write_jsonl(&layout.labels(), &labels, STAGE)?;
    write_jsonl(&layout.plan_gt(), &gts, STAGE)?;
    Ok(StageSummary::new(
        STAGE,
        vec![layout.labels(), layout.plan_gt()],
        &[("labels", labels.len()), ("plan_samples", gts.len())],
    ))
}

fn label_index(rows: Vec<LabelRow>) -> HashMap<(String, usize), LabelRow> {
    rows.into_iter().map(|r| ((r.scene_id.clone(), r.frame_index), r)).collect()
}

/// Template QA pairs for every window whose last frame carries a label.
pub fn run_generate(cfg: &PipelineConfig, jobs: usize) -> Result<StageSummary, PipelineError> {
    const STAGE: &str = "generate";
    let layout = Layout::new(cfg);
    let set = cfg.template_set().map_err(at(STAGE))?;
    let gen = cfg.templates.generation();
    gen.thresholds.validate().map_err(at(STAGE))?;
    let scenes = load_database(cfg, STAGE)?;
    let labels = label_index(read_jsonl(&layout.labels(), STAGE)?);
    let (w, s) = (cfg.templates.window_len, cfg.templates.stride);
    let per_scene: Vec<(Vec<QaPair>, usize)> = pool(jobs, STAGE)?.install(|| {
        scenes
            .par_iter()
            .map(|scene| {
                let windows = partition_windows(scene, w, s).map_err(at(STAGE))?;
                let mut pairs = Vec::new();
                let mut skipped = 0;
                for win in &windows {
                    let Some(row) = labels.get(&(scene.scene_id.clone(), win.last_frame_index())) else {
                        skipped += 1;
                        continue;
                    };
                    pairs.extend(generate_qa(win, &row.label, &set, &gen, cfg.seed).map_err(at(STAGE))?);
                }
                Ok((pairs, skipped))
            })
            .collect::<Result<Vec<_>, PipelineError>>()
    })?;
    let skipped: usize = per_scene.iter().map(|(_, k)| k).sum();
    let pairs: Vec<QaPair> = per_scene.into_iter().flat_map(|(p, _)| p).collect();
    write_jsonl(&layout.template_qa(), &pairs, STAGE)?;
    Ok(StageSummary::new(
        STAGE,
        vec![layout.template_qa()],
        &[("qa_pairs", pairs.len()), ("windows_skipped_unlabeled", skipped)],
    ))
}

/// Endpoint access for the caption stage.
pub enum CaptionSource<'a> {
    /// Only the audit log is consulted.
    Offline,
    Online {
        transport: &'a dyn HttpTransport,
        sleeper: &'a dyn Sleeper,
        /// Overrides the token environment variable (tests).
        token: Option<String>,
    },
}

struct CaptionJob<'a> {
    window: crate::scene_store::SceneWindow,
    task: QaCategory,
    template: &'a QaPair,
    captions: Vec<crate::template_engine::GroundedCaption>,
}

/// MLLM captioning with grounding validation and repair. Recorded
/// completions whose request hash matches are reused; offline mode uses
/// nothing else. With `dry_run` only the prompts are written.
pub fn run_caption(cfg: &PipelineConfig, jobs: usize, source: CaptionSource<'_>) -> Result<StageSummary, PipelineError> {
    const STAGE: &str = "caption";
    let layout = Layout::new(cfg);
    let orch = &cfg.orchestrator;
    orch.endpoint.validate().map_err(at(STAGE))?;
    let set = cfg.template_set().map_err(at(STAGE))?;
    let lexicon = cfg.lexicon().map_err(at(STAGE))?;
    let rubric = cfg.rubric().map_err(at(STAGE))?;
    let thresholds = cfg.templates.thresholds;
    let scenes = load_database(cfg, STAGE)?;
    let labels = label_index(read_jsonl(&layout.labels(), STAGE)?);
    let templates: Vec<QaPair> = read_jsonl(&layout.template_qa(), STAGE)?;
    let by_key: HashMap<String, &QaPair> = templates.iter().map(|p| (qa_key(p), p)).collect();

    let mut work = Vec::new();
    for scene in &scenes {
        for win in partition_windows(scene, cfg.templates.window_len, cfg.templates.stride).map_err(at(STAGE))? {
            let key = win.key();
            let captions: Vec<_> = QaCategory::ALL
                .iter()
                .filter_map(|c| by_key.get(&format!("{key}/{}", c.as_str())).map(|p| p.answer.clone()))
                .collect();
            if captions.is_empty() {
                continue;
            }
            for &task in &orch.tasks {
                let template = by_key.get(&format!("{key}/{}", task.as_str())).ok_or_else(|| {
                    PipelineError::missing(STAGE, format!("no template QA pair for {key}/{}; regenerate with this task enabled", task.as_str()))
                })?;
                work.push(CaptionJob { window: win.clone(), task, template, captions: captions.clone() });
            }
        }
    }

    let facts_for = |job: &CaptionJob| {
        let mut facts = extract_facts(&job.window, &thresholds);
        if job.task == QaCategory::Action {
            if let Some(row) = labels.get(&(job.window.scene_id.clone(), job.window.last_frame_index())) {
                facts.extend(action_facts(&job.window.last_frame().frame_id, &row.label));
            }
        }
        facts
    };

    let bundles: Vec<PromptBundle> = work
        .iter()
        .map(|job| {
            build_prompt(&job.window, &facts_for(job), &job.captions, &set.priors, &rubric, job.task, &orch.prompt)
                .map_err(at(STAGE))
        })
        .collect::<Result<_, _>>()?;

    if cfg.dry_run {
        write_jsonl(&layout.prompts(), &bundles, STAGE)?;
        return Ok(StageSummary::new(STAGE, vec![layout.prompts()], &[("prompts", bundles.len())]));
    }

    let audit_path = cfg.audit_log_path();
    let recorded: BTreeMap<String, AuditRecord> = match (&source, audit_path.exists()) {
        (_, true) => AuditLog::replay(&audit_path).map_err(at(STAGE))?,
        (CaptionSource::Offline, false) => {
            return Err(at(STAGE)(AuditLog::replay(&audit_path).expect_err("file is absent")));
        }
        (CaptionSource::Online { .. }, false) => BTreeMap::new(),
    };
    let log = match source {
        CaptionSource::Online { .. } => Some(AuditLog::open(&audit_path).map_err(at(STAGE))?),
        CaptionSource::Offline => None,
    };
    let client = match &source {
        CaptionSource::Offline => None,
        CaptionSource::Online { transport, sleeper, token } => Some(match token {
            Some(t) => MllmClient::with_token(orch.endpoint.clone(), t.clone(), *transport, *sleeper, log.as_ref()),
            None => MllmClient::from_env(orch.endpoint.clone(), *transport, *sleeper, log.as_ref()).map_err(at(STAGE))?,
        }),
    };

    let completion = |bundle: &PromptBundle| -> Result<String, PipelineError> {
        let key = bundle.key();
        let hash = request_hash(&request_body(bundle, &orch.endpoint));
        if let Some(rec) = recorded.get(&key).filter(|r| r.request_hash == hash && r.text.is_some()) {
            return Ok(rec.text.clone().unwrap_or_default());
        }
        match &client {
            Some(c) => c.request_completion(bundle).map(|r| r.text).map_err(at(STAGE)),
            None => Err(PipelineError::missing(
                STAGE,
                format!("audit log {} has no completion for {key} with request hash {hash}", audit_path.display()),
            )),
        }
    };

    let threads = jobs.max(1).min(orch.endpoint.max_inflight);
    let outcomes: Vec<(FinalAnnotation, Verdict)> = pool(threads, STAGE)?.install(|| {
        work.par_iter()
            .zip(&bundles)
            .map(|(job, bundle)| {
                let text = completion(bundle)?;
                let facts = facts_for(job);
                let report = validate_grounding(&text, &facts, &lexicon);
                let fin = repair_or_finalize(&text, &report, orch.reject_policy, &facts, &lexicon, &job.template.answer);
                Ok((fin, report.verdict))
            })
            .collect::<Result<Vec<_>, PipelineError>>()
    })?;

    let mut finals = Vec::new();
    let mut dropped = Vec::new();
    let mut verdicts: BTreeMap<&str, usize> = BTreeMap::new();
    for ((job, bundle), (fin, verdict)) in work.iter().zip(&bundles).zip(outcomes) {
        *verdicts
            .entry(match verdict {
                Verdict::Pass => "pass",
                Verdict::Repairable => "repairable",
                Verdict::Reject => "reject",
            })
            .or_default() += 1;
        match fin {
            FinalAnnotation::Accepted { caption, validation, .. } => finals.push(QaPair {
                answer: caption,
                validation,
                ..job.template.clone()
            }),
            FinalAnnotation::Dropped { reason } => dropped.push(DroppedRecord { key: bundle.key(), reason }),
        }
    }
    write_jsonl(&layout.final_qa(), &finals, STAGE)?;
    write_jsonl(&layout.dropped_qa(), &dropped, STAGE)?;
    let mut counts = vec![("final", finals.len()), ("dropped", dropped.len())];
    counts.extend(verdicts);
    Ok(StageSummary::new(STAGE, vec![layout.final_qa(), layout.dropped_qa()], &counts))
}

pub fn run_eval_plan(preds: &Path, gt: &Path, cfg: &PipelineConfig) -> Result<MetricReport, PipelineError> {
    const STAGE: &str = "eval-plan";
    let preds: Vec<PlanPrediction> = read_jsonl(preds, STAGE)?;
    let gts: Vec<PlanGroundTruth> = read_jsonl(gt, STAGE)?;
    evaluate_plans(&preds, &gts, cfg.metrics.dims()).map_err(at(STAGE))
}

/// Caption metrics for predictions keyed by [`qa_key`] against the answers
/// of a QA-pair file.
pub fn run_eval_vqa(preds: &Path, refs: &Path) -> Result<MetricReport, PipelineError> {
    const STAGE: &str = "eval-vqa";
    let preds: Vec<CaptionPrediction> = read_jsonl(preds, STAGE)?;
    let pairs: Vec<QaPair> = read_jsonl(refs, STAGE)?;
    let mut references: HashMap<String, Vec<String>> = HashMap::new();
    for p in &pairs {
        references.entry(qa_key(p)).or_default().push(p.answer.text.clone());
    }
    let cands: Vec<(String, String)> = preds.into_iter().map(|p| (p.sample_id, p.answer)).collect();
    evaluate_captions(&cands, &references).map_err(at(STAGE))
}

/// Statistics over labeled frames; reasoning text comes from the final QA
/// file when present, else from the template file.
pub fn compute_pipeline_stats(cfg: &PipelineConfig, jobs: usize) -> Result<StatsBundle, PipelineError> {
    const STAGE: &str = "stats";
    let layout = Layout::new(cfg);
    let scenes = load_database(cfg, STAGE)?;
    let labels = label_index(read_jsonl(&layout.labels(), STAGE)?);
    let qa_path = if layout.final_qa().exists() { layout.final_qa() } else { layout.template_qa() };
    let qa: Vec<QaPair> = if qa_path.exists() { read_jsonl(&qa_path, STAGE)? } else { Vec::new() };
    let mut reasoning: HashMap<(String, usize), String> = HashMap::new();
    for scene in &scenes {
        let windows = partition_windows(scene, cfg.templates.window_len, cfg.templates.stride).map_err(at(STAGE))?;
        for p in qa.iter().filter(|p| p.scene_id == scene.scene_id && p.category == QaCategory::Reasoning) {
            if let Some(w) = windows.get(p.window_index) {
                reasoning.insert((scene.scene_id.clone(), w.last_frame_index()), p.answer.text.clone());
            }
        }
    }
    let base = StatsAccumulator::new(&cfg.stats).map_err(at(STAGE))?;
    let partials: Vec<StatsAccumulator> = pool(jobs, STAGE)?.install(|| {
        scenes
            .par_iter()
            .map(|scene| {
                let mut acc = base.empty_like();
                for (i, frame) in scene.frames.iter().enumerate() {
                    let key = (scene.scene_id.clone(), i);
                    if let Some(row) = labels.get(&key) {
                        acc.add(frame, &row.label, reasoning.get(&key).map_or("", String::as_str));
                    }
                }
                acc
            })
            .collect()
    });
    let mut total = base;
    for p in &partials {
        total.merge(p);
    }
    total.finish().map_err(at(STAGE))
}

pub fn run_stats(cfg: &PipelineConfig, jobs: usize, out: Option<&Path>) -> Result<StageSummary, PipelineError> {
    const STAGE: &str = "stats";
    let bundle = compute_pipeline_stats(cfg, jobs)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| Layout::new(cfg).stats());
    let files = export_stats(&bundle, &dir, ExportFormat::All).map_err(at(STAGE))?;
    Ok(StageSummary::new(STAGE, files, &[("frames", bundle.frames), ("tokens", bundle.word_freq.len())]))
}

pub fn run_memory_demo(cfg: &PipelineConfig) -> Result<DemoReport, PipelineError> {
    run_demo(&cfg.temporal_memory).map_err(at("memory-demo"))
}
