//! Staged pipeline used by the `harmscope` binary.
//!
//! Every stage reads its inputs from files and writes its outputs into the
//! output directory, so each one can be rerun and inspected on its own:
//!
//! | stage      | reads                                  | writes                                              |
//! |------------|----------------------------------------|-----------------------------------------------------|
//! | `extract`  | corpus, response cache                 | `extractions.jsonl`, `quarantine_summary.json`      |
//! | `filter`   | `extractions.jsonl`                    | `filtered.jsonl`, `relevance_summary.json`          |
//! | `metrics`  | `extractions.jsonl`, `filtered.jsonl`  | `report/` (tables, plots, metadata, manifest)       |
//! | `validate` | corpus, gold CSV, `extractions.jsonl`  | `validation_report.json`                            |
//! | `synth`    | nothing                                | `corpus.json`, `extractions.jsonl`, `expected_counts.json`, `cache/` |
//!
//! Exit codes, shared by all subcommands:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O or other failure |
//! | 2 | invalid arguments or configuration |
//! | 3 | input file not found |
//! | 4 | malformed input file |
//! | 5 | backend unavailable (missing key, auth failure, replay cache miss) |
//! | 6 | rate limited after all retries |
//! | 7 | one or more incidents quarantined |
//! | 8 | an earlier stage's output is missing |
//! | 9 | no incidents to compute metrics over |
//! | 10 | malformed gold annotations |

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agreement::{
    gold_to_results, load_gold, validate_against_gold, AccuracyOptions, AgreementError, FacetAccuracy, ValidationReport,
};
use crate::corpus::{load_corpus, Corpus, CorpusError};
use crate::extraction::{
    from_jsonl, merge_subjects_with, run_extraction, to_jsonl, BackendConfig, ExtractionError, ExtractionResult,
    RunOptions,
};
use crate::metrics::{MetricsError, PairOptions, PairScope, DEFAULT_MIN_SUPPORT, DEFAULT_TOP_CATEGORIES};
use crate::normalization::{load_grouping_rules, GroupingRules, NormalizationError, NormalizationReport};
use crate::prompting::{plan_prompts, sha256_hex, PromptError, PromptOptions};
use crate::relevance::{filter_relevant, relevance_report, FilteredCorpus};
use crate::reporting::{build_bundle, emit_file, emit_plots, emit_tables, BundleOptions, ReportError, TableFormat};
use crate::rubric::{rubric_definition, RUBRIC_VERSION};
use crate::synth::{self, SynthError, SynthSpec};

pub const DEFAULT_MODEL: &str = "gpt-5.1";

pub const EXTRACTIONS_FILE: &str = "extractions.jsonl";
pub const QUARANTINE_SUMMARY_FILE: &str = "quarantine_summary.json";
pub const QUARANTINE_DIR: &str = "quarantine";
pub const FILTERED_FILE: &str = "filtered.jsonl";
pub const RELEVANCE_SUMMARY_FILE: &str = "relevance_summary.json";
pub const REPORT_DIR: &str = "report";
pub const VALIDATION_FILE: &str = "validation_report.json";
pub const SYNTH_CORPUS_FILE: &str = "corpus.json";
pub const EXPECTED_COUNTS_FILE: &str = "expected_counts.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("malformed input {}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
    #[error("{0}")]
    BackendUnavailable(String),
    #[error("{0}")]
    RateLimited(String),
    #[error("{count} incident(s) quarantined; see {}", summary.display())]
    Quarantined { count: usize, summary: PathBuf },
    #[error("missing input for `{stage}`: {} (run `{needs}` first)", path.display())]
    MissingStageInput {
        stage: &'static str,
        needs: &'static str,
        path: PathBuf,
    },
    #[error("no incidents left to compute metrics over")]
    EmptyCorpus,
    #[error("{0}")]
    GoldFormat(String),
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io { .. } | Self::Other(_) => 1,
            Self::Usage(_) => 2,
            Self::FileNotFound(_) => 3,
            Self::Malformed { .. } => 4,
            Self::BackendUnavailable(_) => 5,
            Self::RateLimited(_) => 6,
            Self::Quarantined { .. } => 7,
            Self::MissingStageInput { .. } => 8,
            Self::EmptyCorpus => 9,
            Self::GoldFormat(_) => 10,
        }
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                Self::FileNotFound(path.to_path_buf())
            } else {
                Self::Io {
                    path: path.to_path_buf(),
                    source,
                }
            }
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::FileNotFound(path) => Self::FileNotFound(path),
            CorpusError::Io { path, source } => Self::Io { path, source },
            other => Self::Malformed {
                path: PathBuf::from("corpus"),
                message: other.to_string(),
            },
        }
    }
}

impl From<ExtractionError> for PipelineError {
    fn from(e: ExtractionError) -> Self {
        match e {
            ExtractionError::BackendUnavailable { .. } => Self::BackendUnavailable(e.to_string()),
            ExtractionError::RateLimited { .. } => Self::RateLimited(e.to_string()),
            ExtractionError::InvalidConfig(m) => Self::Usage(format!("invalid backend configuration: {m}")),
            ExtractionError::CacheWriteFailure { .. } => Self::Other(e.to_string()),
        }
    }
}

impl From<NormalizationError> for PipelineError {
    fn from(e: NormalizationError) -> Self {
        match e {
            NormalizationError::Io { path, source } => PipelineError::io(Path::new(&path))(source),
            other => Self::Malformed {
                path: PathBuf::from("grouping rules"),
                message: other.to_string(),
            },
        }
    }
}

impl From<ReportError> for PipelineError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io { path, source } => Self::Io { path, source },
            ReportError::Metrics(m) => m.into(),
        }
    }
}

impl From<MetricsError> for PipelineError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::EmptyCorpus => Self::EmptyCorpus,
            other => Self::Other(other.to_string()),
        }
    }
}

impl From<AgreementError> for PipelineError {
    fn from(e: AgreementError) -> Self {
        match e {
            AgreementError::GoldFormatError { .. } => Self::GoldFormat(e.to_string()),
            other => Self::Other(other.to_string()),
        }
    }
}

impl From<PromptError> for PipelineError {
    fn from(e: PromptError) -> Self {
        Self::Other(e.to_string())
    }
}

fn default_min_support() -> u64 {
    DEFAULT_MIN_SUPPORT
}

fn default_top_categories() -> Option<usize> {
    Some(DEFAULT_TOP_CATEGORIES)
}

fn default_byte_budget() -> usize {
    PromptOptions::default().byte_budget
}

fn default_backend() -> BackendConfig {
    BackendConfig::replay(DEFAULT_MODEL, PathBuf::new())
}

/// Settings for one pipeline run, loaded from `--config` and overridden by
/// command-line flags. Relative paths in a config file are taken relative to
/// that file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub corpus_path: Option<PathBuf>,
    /// An empty `cache_dir` means `cache/` next to the corpus file.
    #[serde(default = "default_backend")]
    pub backend: BackendConfig,
    #[serde(default)]
    pub grouping_rules_path: Option<PathBuf>,
    #[serde(default = "default_min_support")]
    pub min_support: u64,
    #[serde(default)]
    pub pair_scope: PairScope,
    #[serde(default)]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Categories kept in the pair matrix and edge list; `None` keeps all.
    #[serde(default = "default_top_categories")]
    pub top_categories: Option<usize>,
    /// Exit 0 from `extract` even when incidents were quarantined.
    #[serde(default)]
    pub allow_quarantine: bool,
    #[serde(default = "default_byte_budget")]
    pub byte_budget: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_path: None,
            backend: default_backend(),
            grouping_rules_path: None,
            min_support: DEFAULT_MIN_SUPPORT,
            pair_scope: PairScope::Incident,
            output_dir: PathBuf::from("out"),
            seed: 0,
            top_categories: default_top_categories(),
            allow_quarantine: false,
            byte_budget: default_byte_budget(),
        }
    }
}

fn rebase(base: &Path, path: &mut PathBuf) {
    if !path.as_os_str().is_empty() && path.is_relative() {
        *path = base.join(&*path);
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(PipelineError::io(path))?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = config.corpus_path.as_mut() {
            rebase(base, p);
        }
        if let Some(p) = config.grouping_rules_path.as_mut() {
            rebase(base, p);
        }
        rebase(base, &mut config.output_dir);
        rebase(base, &mut config.backend.cache_dir);
        Ok(config)
    }

    /// Fills derived defaults and checks everything a stage may touch.
    pub fn resolve(mut self) -> Result<Self, PipelineError> {
        if self.output_dir.as_os_str().is_empty() {
            self.output_dir = PathBuf::from("out");
        }
        if self.backend.cache_dir.as_os_str().is_empty() {
            self.backend.cache_dir = match &self.corpus_path {
                Some(corpus) => corpus.parent().unwrap_or(Path::new("")).join("cache"),
                None => self.output_dir.join("cache"),
            };
        }
        if let Some(rules) = &self.grouping_rules_path {
            if !rules.is_file() {
                return Err(PipelineError::FileNotFound(rules.clone()));
            }
        }
        if self.byte_budget == 0 {
            return Err(PipelineError::Usage("byte_budget must be positive".into()));
        }
        if self.top_categories == Some(0) {
            return Err(PipelineError::Usage("top_categories must be positive".into()));
        }
        self.backend
            .validate()
            .map_err(|e| PipelineError::Usage(e.to_string()))?;
        Ok(self)
    }

    fn corpus_path(&self) -> Result<&Path, PipelineError> {
        self.corpus_path
            .as_deref()
            .ok_or_else(|| PipelineError::Usage("no corpus given (use --corpus or corpus_path)".into()))
    }

    pub fn rules(&self) -> Result<GroupingRules, PipelineError> {
        Ok(load_grouping_rules(self.grouping_rules_path.as_deref())?)
    }

    /// Settings that can change analysis results. Paths, concurrency and
    /// retry behaviour are left out so relocating a run keeps its hash.
    pub fn analysis_settings(&self, rules: &GroupingRules) -> Value {
        json!({
            "rubric_version": RUBRIC_VERSION,
            "model_name": self.backend.model_name,
            "backend": self.backend.kind,
            "decoding": self.backend.decoding,
            "byte_budget": self.byte_budget,
            "grouping_rules_fingerprint": rules.fingerprint(),
            "min_support": self.min_support,
            "pair_scope": self.pair_scope,
            "top_categories": self.top_categories,
            "seed": self.seed,
        })
    }

    pub fn config_hash(&self, rules: &GroupingRules) -> String {
        sha256_hex(self.analysis_settings(rules).to_string().as_bytes())
    }

    fn path(&self, file: &str) -> PathBuf {
        self.output_dir.join(file)
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(PipelineError::io(parent))?;
    }
    fs::write(path, text).map_err(PipelineError::io(path))
}

fn pretty(value: &Value) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    text
}

fn read_stage(path: &Path, stage: &'static str, needs: &'static str) -> Result<Vec<ExtractionResult>, PipelineError> {
    let text = match fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(PipelineError::MissingStageInput {
                stage,
                needs,
                path: path.to_path_buf(),
            })
        }
        Err(e) => return Err(PipelineError::io(path)(e)),
    };
    from_jsonl(&text).map_err(|e| PipelineError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn load_corpus_at(path: &Path) -> Result<Corpus, PipelineError> {
    load_corpus(path).map_err(|e| match e {
        CorpusError::FileNotFound(p) => PipelineError::FileNotFound(p),
        CorpusError::Io { path, source } => PipelineError::Io { path, source },
        other => PipelineError::Malformed {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// The rendered prompt(s) for one incident, without contacting a backend.
pub fn dump_prompt(config: &RunConfig, incident_id: u64) -> Result<String, PipelineError> {
    let corpus = load_corpus_at(config.corpus_path()?)?;
    let incident = corpus
        .incident(incident_id)
        .ok_or_else(|| PipelineError::Usage(format!("incident {incident_id} is not in the corpus")))?;
    let options = PromptOptions {
        byte_budget: config.byte_budget,
    };
    let prompts = plan_prompts(incident, &rubric_definition(), &options)?;
    Ok(prompts
        .iter()
        .map(|p| p.rendered_prompt.as_str())
        .collect::<Vec<_>>()
        .join("\n\n"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtractSummary {
    pub incidents: usize,
    pub subjects: usize,
    pub quarantined: usize,
    pub backend_calls: usize,
    pub cache_hits: usize,
}

impl fmt::Display for ExtractSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "extracted: {}, subjects: {}, quarantined: {}, backend calls: {}, cache hits: {}",
            self.incidents, self.subjects, self.quarantined, self.backend_calls, self.cache_hits
        )
    }
}

/// Runs extraction over the corpus, merges duplicate subjects and writes
/// the export. Quarantined incidents are reported as an error after the
/// export is written, unless `allow_quarantine` is set.
pub fn cmd_extract(config: &RunConfig) -> Result<ExtractSummary, PipelineError> {
    let corpus = load_corpus_at(config.corpus_path()?)?;
    let rules = config.rules()?;
    let options = RunOptions {
        prompt: PromptOptions {
            byte_budget: config.byte_budget,
        },
        quarantine_dir: Some(config.path(QUARANTINE_DIR)),
    };
    let run = run_extraction(&corpus, &config.backend, &options)?;
    let results = merge_subjects_with(run.results.clone(), &rules);
    write_text(&config.path(EXTRACTIONS_FILE), &to_jsonl(&results))?;
    let summary_path = config.path(QUARANTINE_SUMMARY_FILE);
    write_text(&summary_path, &pretty(&run.quarantine_summary()))?;
    let summary = ExtractSummary {
        incidents: results.len(),
        subjects: results.iter().map(ExtractionResult::subject_count).sum(),
        quarantined: run.quarantined.len(),
        backend_calls: run.backend_calls,
        cache_hits: run.cache_hits,
    };
    for q in &run.quarantined {
        log::warn!("quarantined incident {}", q.incident_id);
    }
    if summary.quarantined > 0 && !config.allow_quarantine {
        return Err(PipelineError::Quarantined {
            count: summary.quarantined,
            summary: summary_path,
        });
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FilterSummary {
    pub incidents: usize,
    pub subjects: usize,
    pub dropped_incidents: usize,
    pub dropped_subjects: usize,
}

impl fmt::Display for FilterSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "incidents: {}, subjects: {}", self.incidents, self.subjects)
    }
}

pub fn cmd_filter(config: &RunConfig) -> Result<FilterSummary, PipelineError> {
    let before = read_stage(&config.path(EXTRACTIONS_FILE), "filter", "extract")?;
    let filtered = filter_relevant(&before);
    if filtered.n_incidents == 0 {
        log::warn!("no incident has a causally relevant marker; N = 0");
    }
    write_text(&config.path(FILTERED_FILE), &to_jsonl(&filtered.incidents))?;
    let mut summary = relevance_report(&before, &filtered).to_json();
    summary["N"] = json!(filtered.n_incidents);
    summary["dropped_subjects"] = json!(filtered.dropped_subjects);
    summary["dropped_incidents"] = json!(filtered.dropped_incidents);
    write_text(&config.path(RELEVANCE_SUMMARY_FILE), &pretty(&summary))?;
    Ok(FilterSummary {
        incidents: filtered.n_incidents,
        subjects: filtered.subject_count(),
        dropped_incidents: filtered.dropped_incidents,
        dropped_subjects: filtered.dropped_subjects,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetricsSummary {
    pub report_dir: PathBuf,
    pub n_incidents: u64,
    pub files: usize,
    pub edges: usize,
    pub edges_below_support: usize,
}

impl fmt::Display for MetricsSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "N: {}, edges: {} ({} below support), files: {} in {}",
            self.n_incidents,
            self.edges,
            self.edges_below_support,
            self.files,
            self.report_dir.display()
        )
    }
}

/// Reads both stage exports and rebuilds the filtered corpus, taking drop
/// counts from the difference.
fn filtered_input(config: &RunConfig) -> Result<(Vec<ExtractionResult>, FilteredCorpus), PipelineError> {
    let before = read_stage(&config.path(EXTRACTIONS_FILE), "metrics", "extract")?;
    let kept = read_stage(&config.path(FILTERED_FILE), "metrics", "filter")?;
    let subjects = |rs: &[ExtractionResult]| rs.iter().map(ExtractionResult::subject_count).sum::<usize>();
    let filtered = FilteredCorpus {
        n_incidents: kept.len(),
        dropped_subjects: subjects(&before).saturating_sub(subjects(&kept)),
        dropped_incidents: before.len().saturating_sub(kept.len()),
        incidents: kept,
    };
    Ok((before, filtered))
}

/// Computes every metric and writes tables, plots, the normalization
/// report, run metadata and the manifest under `report/`. `generated_at`
/// goes into the manifest only.
pub fn cmd_metrics(config: &RunConfig, generated_at: &str) -> Result<MetricsSummary, PipelineError> {
    let rules = config.rules()?;
    let (before, filtered) = filtered_input(config)?;
    let options = BundleOptions {
        pairs: PairOptions {
            min_support: config.min_support,
            top_categories: config.top_categories,
        },
        scope: config.pair_scope,
        config_hash: config.config_hash(&rules),
    };
    let bundle = build_bundle(&filtered, &before, &rules, &options)?;
    let dir = config.path(REPORT_DIR);
    let mut manifest = emit_tables(&bundle, &dir, &[TableFormat::Csv, TableFormat::Json])?;
    manifest.extend(emit_plots(&bundle, &dir)?);

    let grouped: Vec<_> = before
        .iter()
        .flat_map(|r| &r.subjects)
        .flat_map(|s| s.present_markers())
        .filter_map(|m| rules.group_value(m.category, m.marker.as_deref()?).ok())
        .collect();
    let normalization = serde_json::to_value(NormalizationReport::from_values(&grouped)).expect("report serializes");
    emit_file(
        &dir,
        "normalization_report.json",
        pretty(&normalization).as_bytes(),
        &mut manifest,
    )?;

    let metadata = run_metadata(config, &rules, &bundle.metadata, &before, &filtered);
    emit_file(&dir, "run_metadata.json", pretty(&metadata).as_bytes(), &mut manifest)?;
    manifest.write(&dir, generated_at)?;

    Ok(MetricsSummary {
        n_incidents: bundle.causal.n_incidents,
        files: manifest.files.len() + 1,
        edges: bundle.pairs.edges.len(),
        edges_below_support: bundle.pairs.edges.iter().filter(|e| !e.support_ok).count(),
        report_dir: dir,
    })
}

fn run_metadata(
    config: &RunConfig,
    rules: &GroupingRules,
    bundle: &crate::reporting::BundleMetadata,
    before: &[ExtractionResult],
    filtered: &FilteredCorpus,
) -> Value {
    let version = env!("CARGO_PKG_VERSION");
    let model_name = before
        .first()
        .map(|r| r.model_name.clone())
        .unwrap_or_else(|| config.backend.model_name.clone());
    json!({
        "tool": { "name": env!("CARGO_PKG_NAME"), "version": version },
        "modules": {
            "corpus": version,
            "rubric": RUBRIC_VERSION,
            "prompting": sha256_hex(crate::prompting::PROMPT_TEMPLATE.as_bytes()),
            "extraction": version,
            "relevance": version,
            "normalization": rules.version,
            "metrics": version,
            "reporting": version,
        },
        "config_hash": bundle.config_hash,
        "config": config.analysis_settings(rules),
        "rubric_version": RUBRIC_VERSION,
        "model_name": model_name,
        "N": bundle.n_incidents,
        "dropped_subjects": bundle.dropped_subjects,
        "dropped_incidents": bundle.dropped_incidents,
        "inputs": {
            EXTRACTIONS_FILE: sha256_hex(to_jsonl(before).as_bytes()),
            FILTERED_FILE: sha256_hex(to_jsonl(&filtered.incidents).as_bytes()),
        },
    })
}

/// Compares the extraction export against gold annotations and writes
/// `validation_report.json`.
pub fn cmd_validate(config: &RunConfig, gold_path: &Path) -> Result<ValidationReport, PipelineError> {
    let corpus = load_corpus_at(config.corpus_path()?)?;
    if !gold_path.is_file() {
        return Err(PipelineError::FileNotFound(gold_path.to_path_buf()));
    }
    let rows = load_gold(gold_path)?;
    let gold = gold_to_results(&rows, &corpus)?;
    let model = read_stage(&config.path(EXTRACTIONS_FILE), "validate", "extract")?;
    let report = validate_against_gold(&model, &gold, &AccuracyOptions::default())?;
    let value = serde_json::to_value(&report).expect("report serializes");
    write_text(&config.path(VALIDATION_FILE), &pretty(&value))?;
    Ok(report)
}

fn facet_lines(out: &mut String, label: &str, facet: &FacetAccuracy) {
    let a = facet.accuracy;
    out.push_str(&format!("{label}: {} ({}/{})\n", a.fixed(3), a.count, a.total));
    if let Some(stats) = &facet.stats {
        let kappa = stats.kappa.map_or("undefined".to_string(), |k| format!("{k:.3}"));
        out.push_str(&format!("  kappa: {kappa}\n"));
        if let Some(pabak) = stats.pabak {
            out.push_str(&format!("  PABAK: {pabak:.3} (p_o = {:.3})\n", stats.p_o));
        }
    }
}

/// Human-readable summary of a validation report.
pub fn format_validation(report: &ValidationReport) -> String {
    let mut out = String::new();
    facet_lines(&mut out, "subject identification", &report.subject_identification);
    facet_lines(&mut out, "category values", &report.category_values);
    facet_lines(&mut out, "causal relevance", &report.causal_relevance);
    let rows: Vec<_> = report
        .category_values
        .per_category
        .iter()
        .filter(|(_, s)| s.count > 0)
        .collect();
    if !rows.is_empty() {
        out.push_str("misattribution by category:\n");
        for (category, share) in rows {
            out.push_str(&format!(
                "  {:<28} {} ({}/{})\n",
                category.name(),
                share.percent(1) + "%",
                share.count,
                share.total
            ));
        }
    }
    out
}

/// What `synth` generates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SynthRequest {
    Planted(SynthSpec),
    Random(synth::RandomSpec),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SynthSummary {
    pub incidents: usize,
    pub cache_entries: usize,
}

/// Writes a synthetic corpus, its extraction export, the exact expected
/// causal counts and a replay cache under the output directory.
pub fn cmd_synth(config: &RunConfig, request: &SynthRequest) -> Result<SynthSummary, PipelineError> {
    let rules = config.rules()?;
    let (corpus, extractions, expected) = match request {
        SynthRequest::Planted(spec) => {
            let out = synth::plant(spec, &rules).map_err(|e| match e {
                SynthError::Infeasible(_) | SynthError::Unmapped { .. } => PipelineError::Usage(e.to_string()),
            })?;
            (out.corpus, out.extractions, out.expected)
        }
        SynthRequest::Random(spec) => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
            let extractions = synth::random_extractions(&mut rng, spec);
            let corpus = synth::corpus_for(extractions.iter().map(|r| r.incident_id), config.seed);
            let expected = synth::count(&filter_relevant(&extractions).incidents, &rules);
            (corpus, extractions, expected)
        }
    };
    let corpus_json = serde_json::to_value(&corpus).expect("corpus serializes");
    write_text(&config.path(SYNTH_CORPUS_FILE), &pretty(&corpus_json))?;
    write_text(&config.path(EXTRACTIONS_FILE), &to_jsonl(&extractions))?;
    write_text(&config.path(EXPECTED_COUNTS_FILE), &pretty(&expected.to_json()))?;
    let cache_entries =
        synth::write_replay_cache(&corpus, &extractions, &config.path("cache"), &config.backend.model_name)
            .map_err(|e| PipelineError::Other(e.to_string()))?;
    Ok(SynthSummary {
        incidents: corpus.incidents.len(),
        cache_entries,
    })
}

/// The rubric as JSON.
pub fn rubric_export() -> String {
    pretty(&serde_json::to_value(rubric_definition()).expect("rubric serializes"))
}
