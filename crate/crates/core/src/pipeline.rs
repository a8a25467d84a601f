//! End-to-end runs: prompts, ingest, metrics and reports, driven by one JSON
//! config and summarized in a `run.json` record.
//!
//! Every referenced input is checked before anything is written. Outputs
//! depend only on the inputs, so two runs over the same inputs produce
//! byte-identical trees.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingStore, StoreError, DATA_FILE, MANIFEST_FILE};
use crate::extrinsic::{
    read_answers, validate_answers, xdp_records, xna_summary, xna_votes, AliasTable, AnswerError,
    QuestionId, VqaAnswer, XdpRecord, XnaSummary,
};
use crate::human_eval::{
    evaluate, read_annotations, read_auto_labels, AnnotationTable, AutoLabel, HumanEvalError,
    QuestionReport,
};
use crate::intrinsic::{CultureMapSpec, MetricError, MetricReport};
use crate::ontology::{NationalityOrder, OntologyError, OntologyRegistry};
use crate::par::Execution;
use crate::prompt::{enumerate_dataset, ModelConfig, PromptError};
use crate::report::{self, ReportError, HISTOGRAM_BINS};
use crate::suite::{self, CcsRun, CdRun, CoverageRun, DpRun, NaRun, Selection};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RECORD_FILE: &str = "run.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Prompts,
    Ingest,
    Metrics,
    Reports,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::Prompts,
        Stage::Ingest,
        Stage::Metrics,
        Stage::Reports,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Prompts => "prompts",
            Stage::Ingest => "ingest",
            Stage::Metrics => "metrics",
            Stage::Reports => "reports",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Na,
    Dp,
    Cd,
    Ccs,
    Coverage,
    Xna,
    Xdp,
    HumanEval,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Na,
        Metric::Dp,
        Metric::Cd,
        Metric::Ccs,
        Metric::Coverage,
        Metric::Xna,
        Metric::Xdp,
        Metric::HumanEval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Na => "na",
            Metric::Dp => "dp",
            Metric::Cd => "cd",
            Metric::Ccs => "ccs",
            Metric::Coverage => "coverage",
            Metric::Xna => "xna",
            Metric::Xdp => "xdp",
            Metric::HumanEval => "human_eval",
        }
    }

    fn needs_archives(self) -> bool {
        matches!(
            self,
            Metric::Na | Metric::Dp | Metric::Cd | Metric::Ccs | Metric::Coverage
        )
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalization {
    /// Emit the min-max normalized CCS grids.
    #[serde(default = "yes")]
    pub ccs: bool,
    /// Range-normalize per-template coverage within each model.
    #[serde(default = "yes")]
    pub coverage: bool,
}

fn yes() -> bool {
    true
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            ccs: true,
            coverage: true,
        }
    }
}

fn primary_order() -> NationalityOrder {
    NationalityOrder::Primary
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Registry JSON; the bundled registry when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Stages to run. Empty means every stage whose inputs are configured.
    #[serde(default)]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub archives: Vec<PathBuf>,
    #[serde(default)]
    pub answers: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotators_per_item: Option<usize>,
    /// Metrics to compute. Empty means every metric whose inputs are present.
    #[serde(default)]
    pub metrics: Vec<Metric>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub selection: Selection,
    /// XDP dimensions to score. Empty means every dimension with answers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dimensions: Vec<String>,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "primary_order")]
    pub order: NationalityOrder,
    #[serde(default)]
    pub culture_map: CultureMapSpec,
}

impl RunConfig {
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            registry: None,
            output_dir: output_dir.into(),
            stages: Vec::new(),
            models: Vec::new(),
            archives: Vec::new(),
            answers: Vec::new(),
            annotations: None,
            auto_labels: None,
            annotators_per_item: None,
            metrics: Vec::new(),
            selection: Selection::default(),
            dimensions: Vec::new(),
            normalization: Normalization::default(),
            order: NationalityOrder::Primary,
            culture_map: CultureMapSpec::default(),
        }
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let read_err = |reason: String| PipelineError::ReadConfig {
            path: path.to_path_buf(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.registry.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
        self.archives.iter_mut().for_each(fix);
        self.answers.iter_mut().for_each(fix);
        if let Some(p) = self.annotations.as_mut() {
            fix(p);
        }
        if let Some(p) = self.auto_labels.as_mut() {
            fix(p);
        }
    }

    /// Selected stages plus the ones they depend on, in run order.
    pub fn effective_stages(&self) -> Vec<Stage> {
        let mut on: Vec<Stage> = self.stages.clone();
        if on.is_empty() {
            if !self.models.is_empty() {
                on.push(Stage::Prompts);
            }
            let has_inputs =
                !self.archives.is_empty() || !self.answers.is_empty() || self.annotations.is_some();
            if has_inputs {
                on.push(Stage::Reports);
            }
        }
        if on.contains(&Stage::Reports) {
            on.push(Stage::Metrics);
        }
        if on.contains(&Stage::Metrics) {
            on.push(Stage::Ingest);
        }
        Stage::ALL.into_iter().filter(|s| on.contains(s)).collect()
    }

    fn load_registry(&self) -> Result<OntologyRegistry, PipelineError> {
        match &self.registry {
            Some(p) => {
                require(p, "registry", false)?;
                OntologyRegistry::from_path(p).map_err(|e| PipelineError::Config(e.to_string()))
            }
            None => Ok(OntologyRegistry::bundled()),
        }
    }

    /// Checks the config against the registry and the file system without
    /// writing anything.
    pub fn validate(&self, registry: &OntologyRegistry) -> Result<(), PipelineError> {
        let stages = self.effective_stages();
        if stages.is_empty() {
            return Err(PipelineError::Config(
                "nothing to run: no stage selected and no inputs configured".into(),
            ));
        }
        if stages.contains(&Stage::Prompts) {
            if self.models.is_empty() {
                return Err(PipelineError::Config(
                    "the prompts stage needs at least one model".into(),
                ));
            }
            for m in &self.models {
                for l in &m.languages {
                    registry.language(l).map_err(config_err)?;
                }
                for c in &m.concepts {
                    registry.concept(c).map_err(config_err)?;
                }
                if m.images_per_set == 0 {
                    return Err(PipelineError::Config(format!(
                        "model `{}` has images_per_set 0",
                        m.model_id
                    )));
                }
            }
        }
        if stages.contains(&Stage::Ingest) {
            for dir in &self.archives {
                require(dir, "archive", true)?;
                require(&dir.join(MANIFEST_FILE), "archive manifest", false)?;
                require(&dir.join(DATA_FILE), "archive data", false)?;
            }
            for p in &self.answers {
                require(p, "answer file", false)?;
            }
            if let Some(p) = &self.annotations {
                require(p, "annotation file", false)?;
            }
            if let Some(p) = &self.auto_labels {
                require(p, "automatic label file", false)?;
                if self.annotations.is_none() {
                    return Err(PipelineError::Config(
                        "auto_labels given without annotations".into(),
                    ));
                }
            }
            if stages.contains(&Stage::Metrics) {
                for m in &self.metrics {
                    let missing = match m {
                        m if m.needs_archives() => self.archives.is_empty(),
                        Metric::Xna | Metric::Xdp => self.answers.is_empty(),
                        _ => self.annotations.is_none(),
                    };
                    if missing {
                        return Err(PipelineError::Config(format!(
                            "metric `{m}` selected but its inputs are not configured"
                        )));
                    }
                }
            }
        }
        for l in &self.selection.languages {
            registry.language(l).map_err(config_err)?;
        }
        for d in &self.dimensions {
            registry.dimension(d).map_err(config_err)?;
        }
        check_output_dir(&self.output_dir)
    }
}

fn config_err(e: OntologyError) -> PipelineError {
    PipelineError::Config(e.to_string())
}

fn require(path: &Path, what: &'static str, dir: bool) -> Result<(), PipelineError> {
    let ok = if dir { path.is_dir() } else { path.is_file() };
    if ok {
        Ok(())
    } else {
        Err(PipelineError::MissingInput {
            what,
            path: path.to_path_buf(),
        })
    }
}

fn check_output_dir(dir: &Path) -> Result<(), PipelineError> {
    let mut probe = Some(dir);
    while let Some(p) = probe {
        if p.exists() {
            let meta = std::fs::metadata(p)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
            if !meta.is_dir() {
                return Err(PipelineError::Config(format!(
                    "{} is not a directory",
                    p.display()
                )));
            }
            if meta.permissions().readonly() {
                return Err(PipelineError::Config(format!(
                    "{} is not writable",
                    p.display()
                )));
            }
            return Ok(());
        }
        probe = p.parent().filter(|p| !p.as_os_str().is_empty());
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Answer(#[from] AnswerError),
    #[error(transparent)]
    HumanEval(#[from] HumanEvalError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("metric `{metric}`: {source}")]
    InMetric {
        metric: Metric,
        source: Box<StageError>,
    },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("{what} not found: {}", path.display())]
    MissingInput { what: &'static str, path: PathBuf },
    #[error("cannot read config {}: {reason}", path.display())]
    ReadConfig { path: PathBuf, reason: String },
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: Stage, source: StageError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    /// A stage failed; files listed so far are partial.
    Failed,
    DryRun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub metric: Metric,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: Stage,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool_version: String,
    pub registry_version: String,
    pub status: RunStatus,
    pub stages: Vec<Stage>,
    /// The config as run. `output_dir` is recorded as `.`, the directory
    /// holding this record.
    pub config: RunConfig,
    /// Output files relative to the output directory, grouped by stage or
    /// metric.
    pub outputs: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<Skipped>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    /// Not written to disk so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunRecord {
    pub fn files(&self) -> impl Iterator<Item = &str> {
        self.outputs.values().flatten().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Validate and read every input, write nothing.
    pub dry_run: bool,
    pub exec: Execution,
}

/// Everything read by the ingest stage.
#[derive(Debug, Default)]
pub struct Inputs {
    pub store: Option<EmbeddingStore>,
    pub answers: Vec<VqaAnswer>,
    pub annotations: Option<BTreeMap<String, AnnotationTable>>,
    pub auto_labels: Vec<AutoLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ArchiveSummary {
    path: String,
    rows: usize,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct IngestSummary {
    archives: Vec<ArchiveSummary>,
    rows: usize,
    dim: Option<usize>,
    image_models: Vec<String>,
    answers: usize,
    error_answers: usize,
    annotation_questions: Vec<String>,
    auto_labels: usize,
}

/// Results of the metrics stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricResults {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub na: Option<NaRun>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpRun>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cd: Option<CdRun>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ccs: Option<Vec<CcsRun>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageRun>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xna: Option<XnaSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xdp: Option<Vec<XdpRecord>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub human_eval: Option<Vec<QuestionReport>>,
}

struct Outputs<'a> {
    root: &'a Path,
    files: BTreeMap<String, Vec<String>>,
}

impl Outputs<'_> {
    fn text(&mut self, group: &str, rel: &str, contents: &str) -> Result<(), ReportError> {
        report::write_text(&self.root.join(rel), contents)?;
        self.files
            .entry(group.to_string())
            .or_default()
            .push(rel.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, group: &str, rel: &str, value: &T) -> Result<(), ReportError> {
        self.text(group, rel, &report::to_json(value)?)
    }
}

/// File-name-safe form of an identifier.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Runs the configured stages in order and writes `run.json`.
pub fn run(config: &RunConfig, opts: RunOptions) -> Result<RunRecord, PipelineError> {
    let started = Instant::now();
    let registry = config.load_registry()?;
    config.validate(&registry)?;
    let stages = config.effective_stages();
    let mut snapshot = config.clone();
    snapshot.output_dir = PathBuf::from(".");
    let mut record = RunRecord {
        tool_version: TOOL_VERSION.to_string(),
        registry_version: registry.version().to_string(),
        status: RunStatus::Complete,
        stages: stages.clone(),
        config: snapshot,
        outputs: BTreeMap::new(),
        skipped: Vec::new(),
        failure: None,
        wall_time: Duration::ZERO,
    };

    if opts.dry_run {
        if stages.contains(&Stage::Ingest) {
            ingest(config, &registry).map_err(|source| PipelineError::Stage {
                stage: Stage::Ingest,
                source,
            })?;
        }
        record.status = RunStatus::DryRun;
        record.wall_time = started.elapsed();
        return Ok(record);
    }

    let mut out = Outputs {
        root: &config.output_dir,
        files: BTreeMap::new(),
    };
    let result = run_stages(
        config,
        &registry,
        &stages,
        opts.exec,
        &mut out,
        &mut record.skipped,
    );
    record.outputs = std::mem::take(&mut out.files);
    record
        .outputs
        .entry("record".into())
        .or_default()
        .push(RECORD_FILE.to_string());
    for files in record.outputs.values_mut() {
        files.sort();
    }
    if let Err((stage, source)) = result {
        record.status = RunStatus::Failed;
        record.failure = Some(Failure {
            stage,
            error: source.to_string(),
        });
        // Best effort: the stage error is what the caller needs to see.
        let _ = report::write_json(&config.output_dir.join(RECORD_FILE), &record);
        return Err(PipelineError::Stage { stage, source });
    }
    report::write_json(&config.output_dir.join(RECORD_FILE), &record).map_err(|e| {
        PipelineError::Stage {
            stage: *stages.last().expect("validated non-empty"),
            source: e.into(),
        }
    })?;
    record.wall_time = started.elapsed();
    Ok(record)
}

fn run_stages(
    config: &RunConfig,
    registry: &OntologyRegistry,
    stages: &[Stage],
    exec: Execution,
    out: &mut Outputs<'_>,
    skipped: &mut Vec<Skipped>,
) -> Result<(), (Stage, StageError)> {
    let mut inputs = Inputs::default();
    let mut results = MetricResults::default();
    for &stage in stages {
        let r = match stage {
            Stage::Prompts => prompts_stage(config, registry, exec, out),
            Stage::Ingest => ingest(config, registry).and_then(|i| {
                inputs = i;
                write_ingest_summary(config, &inputs, out)
            }),
            Stage::Metrics => {
                metrics_stage(config, registry, &inputs, exec, skipped).and_then(|r| {
                    results = r;
                    write_metric_json(&results, out)
                })
            }
            Stage::Reports => write_reports(config, &results, out),
        };
        r.map_err(|e| (stage, e))?;
    }
    Ok(())
}

fn prompts_stage(
    config: &RunConfig,
    registry: &OntologyRegistry,
    exec: Execution,
    out: &mut Outputs<'_>,
) -> Result<(), StageError> {
    for model in &config.models {
        let manifest = enumerate_dataset(model, registry, exec)?;
        out.text(
            "prompts",
            &format!("prompts/{}.jsonl", file_stem(&model.model_id)),
            &manifest.to_jsonl(),
        )?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>, StageError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| StageError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Reads and validates every configured input.
pub fn ingest(config: &RunConfig, registry: &OntologyRegistry) -> Result<Inputs, StageError> {
    let mut inputs = Inputs::default();
    for dir in &config.archives {
        let store = EmbeddingStore::ingest_archive(dir)?;
        inputs.store = Some(match inputs.store.take() {
            None => store,
            Some(mut merged) => {
                merge_into(&mut merged, &store)?;
                merged
            }
        });
    }
    for path in &config.answers {
        let answers = read_answers(open(path)?)?;
        validate_answers(&answers, registry)?;
        inputs.answers.extend(answers);
    }
    if let Some(path) = &config.annotations {
        inputs.annotations = Some(read_annotations(open(path)?, config.annotators_per_item)?);
    }
    if let Some(path) = &config.auto_labels {
        inputs.auto_labels = read_auto_labels(open(path)?)?;
    }
    Ok(inputs)
}

fn merge_into(target: &mut EmbeddingStore, other: &EmbeddingStore) -> Result<(), StoreError> {
    if target.dim() != other.dim() {
        return Err(StoreError::DimMismatch {
            expected: target.dim(),
            actual: other.dim(),
        });
    }
    for (key, row) in other.rows() {
        target.insert(key.clone(), row.to_vec())?;
    }
    Ok(())
}

fn write_ingest_summary(
    config: &RunConfig,
    inputs: &Inputs,
    out: &mut Outputs<'_>,
) -> Result<(), StageError> {
    let mut archives = Vec::new();
    for dir in &config.archives {
        let store = EmbeddingStore::ingest_archive(dir)?;
        archives.push(ArchiveSummary {
            path: dir.display().to_string(),
            rows: store.len(),
            dim: store.dim(),
        });
    }
    let summary = IngestSummary {
        archives,
        rows: inputs.store.as_ref().map_or(0, EmbeddingStore::len),
        dim: inputs.store.as_ref().map(EmbeddingStore::dim),
        image_models: inputs
            .store
            .as_ref()
            .map(EmbeddingStore::image_models)
            .unwrap_or_default(),
        answers: inputs.answers.len(),
        error_answers: inputs.answers.iter().filter(|a| a.is_error()).count(),
        annotation_questions: inputs
            .annotations
            .as_ref()
            .map(|t| t.keys().cloned().collect())
            .unwrap_or_default(),
        auto_labels: inputs.auto_labels.len(),
    };
    out.json("ingest", "ingest.json", &summary)?;
    Ok(())
}

/// Whether an error only says the inputs lack what the metric needs.
fn is_absence(e: &StageError) -> bool {
    matches!(
        e,
        StageError::Metric(MetricError::MissingText(_) | MetricError::Empty(_))
    )
}

/// Computes the selected metrics. With no explicit selection, metrics whose
/// inputs are absent are skipped and listed in `skipped`.
pub fn metrics_stage(
    config: &RunConfig,
    registry: &OntologyRegistry,
    inputs: &Inputs,
    exec: Execution,
    skipped: &mut Vec<Skipped>,
) -> Result<MetricResults, StageError> {
    let explicit = !config.metrics.is_empty();
    let selected: Vec<Metric> = if explicit {
        Metric::ALL
            .into_iter()
            .filter(|m| config.metrics.contains(m))
            .collect()
    } else {
        Metric::ALL.to_vec()
    };
    let mut results = MetricResults::default();
    let sel = &config.selection;
    for metric in selected {
        let outcome: Result<(), StageError> = (|| {
            if metric.needs_archives() {
                let Some(store) = inputs.store.as_ref() else {
                    return Err(MetricError::Empty("archive list").into());
                };
                match metric {
                    Metric::Na => results.na = Some(suite::run_na(registry, store, sel, exec)?),
                    Metric::Dp => {
                        results.dp = Some(suite::run_dp(
                            registry,
                            store,
                            sel,
                            &config.culture_map,
                            exec,
                        )?)
                    }
                    Metric::Cd => results.cd = Some(suite::run_cd(registry, store, sel, exec)?),
                    Metric::Ccs => results.ccs = Some(suite::run_ccs(registry, store, sel, exec)?),
                    _ => {
                        results.coverage = Some(suite::run_coverage(
                            registry,
                            store,
                            sel,
                            config.normalization.coverage,
                            exec,
                        )?)
                    }
                }
                return Ok(());
            }
            match metric {
                Metric::Xna => {
                    let aliases = AliasTable::nationalities(registry)?;
                    let votes = xna_votes(&inputs.answers, &aliases, exec);
                    if votes.is_empty() {
                        return Err(MetricError::Empty("XNA answer set").into());
                    }
                    results.xna = Some(xna_summary(&votes, registry, config.order)?);
                }
                Metric::Xdp => {
                    let mut records = Vec::new();
                    let wanted = |id: &str| {
                        config.dimensions.is_empty() || config.dimensions.iter().any(|d| d == id)
                    };
                    for dim in registry.dimensions().iter().filter(|d| wanted(&d.id)) {
                        let q = QuestionId::Xdp(dim.id.clone());
                        if inputs.answers.iter().any(|a| a.question_id == q) {
                            records.extend(xdp_records(&inputs.answers, dim, exec)?);
                        }
                    }
                    if records.is_empty() {
                        return Err(MetricError::Empty("XDP answer set").into());
                    }
                    results.xdp = Some(records);
                }
                _ => {
                    let Some(tables) = &inputs.annotations else {
                        return Err(MetricError::Empty("annotation file").into());
                    };
                    results.human_eval = Some(evaluate(tables, &inputs.auto_labels)?);
                }
            }
            Ok(())
        })();
        match outcome {
            Ok(()) => {}
            Err(e) if !explicit && is_absence(&e) => skipped.push(Skipped {
                metric,
                reason: e.to_string(),
            }),
            Err(e) => {
                return Err(StageError::InMetric {
                    metric,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(results)
}

fn write_metric_json(results: &MetricResults, out: &mut Outputs<'_>) -> Result<(), StageError> {
    let mut put = |metric: Metric, value: Option<serde_json::Value>| -> Result<(), StageError> {
        if let Some(v) = value {
            out.json(metric.as_str(), &format!("metrics/{metric}.json"), &v)?;
        }
        Ok(())
    };
    fn val<T: Serialize>(v: &Option<T>) -> Result<Option<serde_json::Value>, StageError> {
        v.as_ref()
            .map(serde_json::to_value)
            .transpose()
            .map_err(|e| StageError::Report(e.into()))
    }
    put(Metric::Na, val(&results.na)?)?;
    put(Metric::Dp, val(&results.dp)?)?;
    put(Metric::Cd, val(&results.cd)?)?;
    put(Metric::Ccs, val(&results.ccs)?)?;
    put(Metric::Coverage, val(&results.coverage)?)?;
    put(Metric::Xna, val(&results.xna)?)?;
    put(Metric::Xdp, val(&results.xdp)?)?;
    put(Metric::HumanEval, val(&results.human_eval)?)?;
    Ok(())
}

fn concat_reports(metric: &str, reports: &[MetricReport]) -> MetricReport {
    MetricReport::new(
        metric,
        reports.iter().flat_map(|r| r.values.clone()).collect(),
    )
}

/// CSV files for every computed metric.
fn write_reports(
    config: &RunConfig,
    results: &MetricResults,
    out: &mut Outputs<'_>,
) -> Result<(), StageError> {
    if let Some(na) = &results.na {
        let g = Metric::Na.as_str();
        out.text(g, "reports/na.csv", &report::metric_csv(&na.report)?)?;
        out.text(
            g,
            "reports/na_accuracy.csv",
            &report::accuracy_csv(&na.confusion)?,
        )?;
        for c in &na.confusion {
            let rel = format!(
                "reports/na_confusion/{}__{}.csv",
                file_stem(&c.model),
                c.template
            );
            out.text(g, &rel, &report::confusion_csv(&c.matrix)?)?;
        }
    }
    if let Some(dp) = &results.dp {
        let g = Metric::Dp.as_str();
        out.text(g, "reports/dp.csv", &report::metric_csv(&dp.report)?)?;
        for m in &dp.culture_maps {
            let rel = format!("reports/culture_map/{}.csv", file_stem(&m.model));
            out.text(g, &rel, &report::culture_map_csv(&m.map)?)?;
        }
    }
    if let Some(cd) = &results.cd {
        let g = Metric::Cd.as_str();
        out.text(g, "reports/cd.csv", &report::metric_csv(&cd.report)?)?;
        out.text(
            g,
            "reports/cd_by_language.csv",
            &report::metric_csv(&cd.by_language)?,
        )?;
    }
    if let Some(ccs) = &results.ccs {
        let g = Metric::Ccs.as_str();
        for r in ccs {
            let dir = format!(
                "reports/ccs/{}__{}__{}",
                file_stem(&r.model),
                r.template,
                file_stem(&r.baseline_source)
            );
            let csvs = report::ccs_csvs(&r.matrix)?;
            out.text(g, &format!("{dir}/raw.csv"), &csvs.raw)?;
            out.text(g, &format!("{dir}/symmetrized.csv"), &csvs.symmetrized)?;
            if config.normalization.ccs {
                out.text(g, &format!("{dir}/normalized.csv"), &csvs.normalized)?;
            }
        }
    }
    if let Some(cov) = &results.coverage {
        let g = Metric::Coverage.as_str();
        out.text(g, "reports/coverage.csv", &report::metric_csv(&cov.report)?)?;
        let per_template = concat_reports("coverage", &cov.by_template);
        out.text(
            g,
            "reports/coverage_by_template.csv",
            &report::metric_csv(&per_template)?,
        )?;
    }
    if let Some(xna) = &results.xna {
        let g = Metric::Xna.as_str();
        out.text(g, "reports/xna.csv", &report::xna_csv(xna)?)?;
        out.text(
            g,
            "reports/xna_language_means.csv",
            &report::xna_means_csv(xna)?,
        )?;
        let mut by_source: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for c in &xna.cells {
            by_source.entry(&c.source).or_default().push(c.result.score);
        }
        for (source, scores) in by_source {
            let bins = report::histogram(&scores, HISTOGRAM_BINS)?;
            let rel = format!("reports/xna_histogram/{}.csv", file_stem(source));
            out.text(g, &rel, &report::histogram_csv(&bins)?)?;
        }
    }
    if let Some(xdp) = &results.xdp {
        let g = Metric::Xdp.as_str();
        out.text(g, "reports/xdp.csv", &report::xdp_csv(xdp)?)?;
        out.text(
            g,
            "reports/radar.csv",
            &report::radar_csv(&report::radar_points(xdp))?,
        )?;
    }
    if let Some(he) = &results.human_eval {
        out.text(
            Metric::HumanEval.as_str(),
            "reports/human_eval.csv",
            &report::human_eval_csv(he)?,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::SetKey;
    use crate::prompt::TemplateKind;

    fn small_archive(dir: &Path) {
        let reg = OntologyRegistry::bundled_shared();
        let mut store = EmbeddingStore::new(4);
        for (i, lang) in ["EN", "FR"].iter().enumerate() {
            let nat = reg.nationality(lang).unwrap();
            let mut v = vec![0.1f32; 4];
            v[i] = 1.0;
            store
                .insert(suite::nationality_text_key(&nat.primary_name), v.clone())
                .unwrap();
            store
                .insert(
                    SetKey::image("m", "food", TemplateKind::FullyTranslated, lang, 0),
                    v,
                )
                .unwrap();
        }
        store.export_archive(dir).unwrap();
    }

    #[test]
    fn prompts_only_writes_manifest_and_record() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new(tmp.path().join("out"));
        cfg.stages = vec![Stage::Prompts];
        let mut model = ModelConfig::new("sd");
        model.languages = vec!["EN".into(), "FR".into()];
        model.concepts = vec!["food".into()];
        cfg.models = vec![model];
        let rec = run(&cfg, RunOptions::default()).unwrap();
        assert_eq!(rec.stages, [Stage::Prompts]);
        let files: Vec<&str> = rec.files().collect();
        assert_eq!(files, ["prompts/sd.jsonl", "run.json"]);
        assert!(!tmp.path().join("out/metrics").exists());
        let lines = std::fs::read_to_string(tmp.path().join("out/prompts/sd.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 2 * 5);
    }

    #[test]
    fn missing_archive_fails_before_writing() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        let mut cfg = RunConfig::new(&out);
        cfg.archives = vec![tmp.path().join("nope")];
        let err = run(&cfg, RunOptions::default()).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
        assert!(!out.exists());
    }

    #[test]
    fn explicit_metric_without_inputs_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new(tmp.path().join("out"));
        cfg.stages = vec![Stage::Metrics];
        cfg.metrics = vec![Metric::Xna];
        assert!(matches!(
            run(&cfg, RunOptions::default()),
            Err(PipelineError::Config(_))
        ));
    }

    #[test]
    fn metrics_run_and_absent_ones_are_skipped() {
        let tmp = tempfile::tempdir().unwrap();
        small_archive(&tmp.path().join("arch"));
        let mut cfg = RunConfig::new(tmp.path().join("out"));
        cfg.stages = vec![Stage::Reports];
        cfg.archives = vec![tmp.path().join("arch")];
        let rec = run(&cfg, RunOptions::default()).unwrap();
        assert_eq!(rec.stages, [Stage::Ingest, Stage::Metrics, Stage::Reports]);
        assert!(rec.outputs.contains_key("na"));
        let skipped: Vec<Metric> = rec.skipped.iter().map(|s| s.metric).collect();
        assert!(skipped.contains(&Metric::Dp) && skipped.contains(&Metric::Xna));
        for f in rec.files() {
            assert!(tmp.path().join("out").join(f).is_file(), "{f}");
        }
        let acc = std::fs::read_to_string(tmp.path().join("out/reports/na_accuracy.csv")).unwrap();
        assert!(acc.contains("m,fully_translated,1,2,2,"), "{acc}");
    }

    #[test]
    fn dry_run_writes_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        small_archive(&tmp.path().join("arch"));
        let out = tmp.path().join("out");
        let mut cfg = RunConfig::new(&out);
        cfg.stages = vec![Stage::Metrics];
        cfg.archives = vec![tmp.path().join("arch")];
        let rec = run(
            &cfg,
            RunOptions {
                dry_run: true,
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_eq!(rec.status, RunStatus::DryRun);
        assert!(!out.exists());
    }

    #[test]
    fn failing_stage_is_named_and_flagged() {
        let tmp = tempfile::tempdir().unwrap();
        small_archive(&tmp.path().join("arch"));
        let out = tmp.path().join("out");
        let mut cfg = RunConfig::new(&out);
        cfg.stages = vec![Stage::Metrics];
        cfg.archives = vec![tmp.path().join("arch")];
        cfg.metrics = vec![Metric::Dp];
        let err = run(&cfg, RunOptions::default()).unwrap_err();
        assert!(
            matches!(
                err,
                PipelineError::Stage {
                    stage: Stage::Metrics,
                    ..
                }
            ),
            "{err}"
        );
        let rec: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join(RECORD_FILE)).unwrap()).unwrap();
        assert_eq!(rec["status"], "failed");
        assert_eq!(rec["failure"]["stage"], "metrics");
    }

    #[test]
    fn config_paths_resolve_against_the_file() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("run.json");
        std::fs::write(
            &path,
            r#"{"output_dir": "out", "archives": ["a"], "stages": ["ingest"]}"#,
        )
        .unwrap();
        let cfg = RunConfig::from_path(&path).unwrap();
        assert_eq!(cfg.output_dir, tmp.path().join("out"));
        assert_eq!(cfg.archives, [tmp.path().join("a")]);
        assert_eq!(cfg.order, NationalityOrder::Primary);
    }
}
