//! Runs extraction over a corpus.
//!
//! Each incident is planned into one or more prompts, each prompt is served
//! from the cache or the backend, and every fresh response is written to the
//! cache before it is parsed. A response that fails to parse gets one
//! corrective re-request when the backend is live; if that fails too the
//! incident is quarantined and the run continues.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::backend::{Backend, BackendConfig, BackendError, BackendKind};
use super::cache::{write_atomic, CacheEntry, ResponseCache};
use super::parse::{parse_extraction, ParseFailure};
use super::{subject_id, ExtractionResult};
use crate::corpus::{Corpus, IncidentRecord};
use crate::prompting::{plan_prompts, sha256_hex, PromptError, PromptOptions, PromptRequest};
use crate::rubric::{rubric_definition, Rubric, RUBRIC_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractionError {
    #[error("incident {incident_id}: backend unavailable: {message}")]
    BackendUnavailable { incident_id: u64, message: String },
    #[error("incident {incident_id}: rate limited after {attempts} attempts")]
    RateLimited { incident_id: u64, attempts: u32 },
    #[error("cannot write {path}: {message}")]
    CacheWriteFailure { path: PathBuf, message: String },
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
}

impl ExtractionError {
    fn from_backend(incident_id: u64, err: BackendError) -> Self {
        match err {
            BackendError::BackendUnavailable { message } => Self::BackendUnavailable { incident_id, message },
            BackendError::RateLimited { attempts } => Self::RateLimited { incident_id, attempts },
            BackendError::InvalidConfig(m) => Self::InvalidConfig(m),
        }
    }
}

impl From<super::cache::CacheWriteError> for ExtractionError {
    fn from(e: super::cache::CacheWriteError) -> Self {
        Self::CacheWriteFailure {
            path: e.path,
            message: e.message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum QuarantineReason {
    Parse { failure: ParseFailure },
    Oversize { bytes: usize, budget: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub incident_id: u64,
    #[serde(flatten)]
    pub reason: QuarantineReason,
    /// Where the offending raw response was written, if anywhere.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub prompt: PromptOptions,
    /// Directory receiving `<incident_id>.txt` for each quarantined incident.
    pub quarantine_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExtractionRun {
    /// Ordered by incident id.
    pub results: Vec<ExtractionResult>,
    /// Ordered by incident id.
    pub quarantined: Vec<QuarantineEntry>,
    pub backend_calls: usize,
    pub cache_hits: usize,
}

impl ExtractionRun {
    pub fn subject_count(&self) -> usize {
        self.results.iter().map(|r| r.subjects.len()).sum()
    }

    pub fn quarantine_summary(&self) -> serde_json::Value {
        serde_json::json!({
            "quarantined": self.quarantined.len(),
            "extracted": self.results.len(),
            "incidents": self.quarantined,
        })
    }
}

pub const CORRECTIVE_INSTRUCTION: &str =
    "Your previous reply could not be used because it did not follow the output rules. \
Reply again with only the JSON object described above, listing all 26 identity categories for every AI subject, \
using only the allowed values for MarkerType, DirectScore and AlternateScore, and writing MarkerHarm only when \
DirectScore is Yes and AlternateScore is No.";

enum Outcome {
    Done(ExtractionResult),
    Quarantined(QuarantineEntry),
}

struct Worker<'a> {
    backend: &'a dyn Backend,
    config: &'a BackendConfig,
    cache: ResponseCache,
    rubric: Rubric,
    options: &'a RunOptions,
    calls: AtomicUsize,
    hits: AtomicUsize,
}

impl Worker<'_> {
    fn call(&self, incident_id: u64, prompt: &str) -> Result<String, ExtractionError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.backend
            .complete(prompt)
            .map_err(|e| ExtractionError::from_backend(incident_id, e))
    }

    fn quarantine(&self, incident_id: u64, raw: &str, reason: QuarantineReason) -> Result<Outcome, ExtractionError> {
        log::warn!("quarantining incident {incident_id}: {reason:?}");
        let path = match &self.options.quarantine_dir {
            Some(dir) => {
                let path = dir.join(format!("{incident_id}.txt"));
                write_atomic(&path, raw.as_bytes())?;
                Some(path)
            }
            None => None,
        };
        Ok(Outcome::Quarantined(QuarantineEntry {
            incident_id,
            reason,
            path,
        }))
    }

    fn fresh_entry(&self, request: &PromptRequest, raw: String) -> CacheEntry {
        CacheEntry {
            incident_id: request.incident_id,
            model_name: self.config.model_name.clone(),
            rubric_version: RUBRIC_VERSION.to_string(),
            prompt_hash: request.prompt_hash.clone(),
            chunk: request.chunk,
            decoding: self.config.decoding.clone(),
            superseded: Vec::new(),
            raw_response: raw,
        }
    }

    /// Serves one prompt, returning the raw response and its parse.
    fn serve(
        &self,
        request: &PromptRequest,
    ) -> Result<(String, Result<ExtractionResult, ParseFailure>), ExtractionError> {
        let id = request.incident_id;
        if let Some(entry) = self.cache.lookup(request) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            let parsed = parse_extraction(&entry.raw_response, id);
            return Ok((entry.raw_response, parsed));
        }
        if !self.backend.is_live() {
            return Err(ExtractionError::BackendUnavailable {
                incident_id: id,
                message: format!(
                    "no cached response at {} for prompt {}",
                    self.cache.path_for(id, request.chunk).display(),
                    request.prompt_hash
                ),
            });
        }
        let raw = self.call(id, &request.rendered_prompt)?;
        let mut entry = self.fresh_entry(request, raw);
        self.cache.store(&entry)?;
        let parsed = parse_extraction(&entry.raw_response, id);
        let Err(failure) = parsed else {
            return Ok((entry.raw_response, parsed));
        };
        log::info!("incident {id}: {failure}; sending a corrective request");
        let retry_prompt = format!("{}\n\n{}", request.rendered_prompt, CORRECTIVE_INSTRUCTION);
        let second = self.call(id, &retry_prompt)?;
        entry
            .superseded
            .push(std::mem::replace(&mut entry.raw_response, second));
        self.cache.store(&entry)?;
        let parsed = parse_extraction(&entry.raw_response, id);
        Ok((entry.raw_response, parsed))
    }

    fn process(&self, incident: &IncidentRecord) -> Result<Outcome, ExtractionError> {
        let id = incident.incident_id;
        let requests = match plan_prompts(incident, &self.rubric, &self.options.prompt) {
            Ok(r) => r,
            Err(PromptError::OversizePrompt { bytes, budget, .. }) => {
                return self.quarantine(id, "", QuarantineReason::Oversize { bytes, budget });
            }
            Err(e) => {
                return Err(ExtractionError::InvalidConfig(format!("incident {id}: {e}")));
            }
        };
        let mut parts = Vec::with_capacity(requests.len());
        let mut raws = Vec::with_capacity(requests.len());
        for request in &requests {
            let (raw, parsed) = self.serve(request)?;
            match parsed {
                Ok(result) => parts.push(result),
                Err(failure) => return self.quarantine(id, &raw, QuarantineReason::Parse { failure }),
            }
            raws.push(raw);
        }
        Ok(Outcome::Done(self.combine(id, parts, &raws)))
    }

    fn combine(&self, incident_id: u64, parts: Vec<ExtractionResult>, raws: &[String]) -> ExtractionResult {
        let prompt_chunks = parts.len();
        let mut parts = parts.into_iter();
        let mut result = parts.next().expect("at least one prompt per incident");
        for part in parts {
            result.subjects.extend(part.subjects);
        }
        if prompt_chunks > 1 {
            for (i, s) in result.subjects.iter_mut().enumerate() {
                s.subject_id = subject_id(incident_id, i + 1);
            }
            result.raw_response_hash = sha256_hex(raws.join("\n").as_bytes());
        }
        result.model_name = self.config.model_name.clone();
        result.rubric_version = RUBRIC_VERSION.to_string();
        result.prompt_chunks = prompt_chunks;
        result
    }
}

/// Runs extraction with the backend described by `config`.
pub fn run_extraction(
    corpus: &Corpus,
    config: &BackendConfig,
    options: &RunOptions,
) -> Result<ExtractionRun, ExtractionError> {
    let backend = config.connect().map_err(|e| match e {
        BackendError::BackendUnavailable { message } => ExtractionError::BackendUnavailable {
            incident_id: 0,
            message,
        },
        other => ExtractionError::from_backend(0, other),
    })?;
    run_extraction_with(corpus, config, backend.as_ref(), options)
}

/// Runs extraction against an explicit backend, using `config` for the
/// model name, cache location and parallelism.
pub fn run_extraction_with(
    corpus: &Corpus,
    config: &BackendConfig,
    backend: &dyn Backend,
    options: &RunOptions,
) -> Result<ExtractionRun, ExtractionError> {
    config.validate().map_err(|e| ExtractionError::from_backend(0, e))?;
    let worker = Worker {
        backend,
        config,
        cache: ResponseCache::new(&config.cache_dir, &config.model_name, RUBRIC_VERSION),
        rubric: rubric_definition(),
        options,
        calls: AtomicUsize::new(0),
        hits: AtomicUsize::new(0),
    };
    let threads = match config.kind {
        BackendKind::Replay => 1,
        BackendKind::Http => config.max_parallel,
    }
    .min(corpus.incidents.len().max(1));

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let outcomes: Mutex<Vec<Outcome>> = Mutex::new(Vec::new());
    let first_error: Mutex<Option<(usize, ExtractionError)>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(incident) = corpus.incidents.get(i) else {
                    break;
                };
                match worker.process(incident) {
                    Ok(outcome) => outcomes.lock().expect("no poisoned lock").push(outcome),
                    Err(e) => {
                        abort.store(true, Ordering::Relaxed);
                        let mut slot = first_error.lock().expect("no poisoned lock");
                        // Report the earliest incident's error so failures are reproducible.
                        if slot.as_ref().is_none_or(|(j, _)| i < *j) {
                            *slot = Some((i, e));
                        }
                        break;
                    }
                }
            });
        }
    });

    if let Some((_, e)) = first_error.into_inner().expect("no poisoned lock") {
        return Err(e);
    }
    let mut run = ExtractionRun {
        backend_calls: worker.calls.load(Ordering::Relaxed),
        cache_hits: worker.hits.load(Ordering::Relaxed),
        ..Default::default()
    };
    for outcome in outcomes.into_inner().expect("no poisoned lock") {
        match outcome {
            Outcome::Done(r) => run.results.push(r),
            Outcome::Quarantined(q) => run.quarantined.push(q),
        }
    }
    run.results.sort_by_key(|r| r.incident_id);
    run.quarantined.sort_by_key(|q| q.incident_id);
    if !run.quarantined.is_empty() {
        log::warn!(
            "{} of {} incidents quarantined",
            run.quarantined.len(),
            run.quarantined.len() + run.results.len()
        );
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ReportRecord;
    use crate::extraction::response::render_response;
    use crate::extraction::HarmedSubject;
    use crate::rubric::SubjectType;
    use std::collections::BTreeMap;
    use std::fs;

    fn corpus(ids: &[u64]) -> Corpus {
        Corpus {
            metadata: BTreeMap::new(),
            incidents: ids
                .iter()
                .map(|&id| IncidentRecord {
                    incident_id: id,
                    title: format!("Incident {id}"),
                    description: String::new(),
                    reports: vec![ReportRecord {
                        report_id: id * 10,
                        incident_id: id,
                        title: format!("Report {id}"),
                        body: format!("Body of report for incident {id}."),
                        source_url: None,
                        published_date: None,
                    }],
                })
                .collect(),
        }
    }

    fn response_for(id: u64) -> String {
        let mut subject = HarmedSubject::blank(id, 1, "Residents", SubjectType::GroupOfPersons);
        subject.report_ids.insert(id * 10);
        render_response(&ExtractionResult {
            incident_id: id,
            description: format!("System {id} was deployed."),
            subjects: vec![subject],
            raw_response_hash: String::new(),
            model_name: String::new(),
            rubric_version: RUBRIC_VERSION.into(),
            prompt_chunks: 1,
        })
    }

    fn incident_of(prompt: &str) -> u64 {
        let start = prompt.find("IncidentID: \"").unwrap() + "IncidentID: \"".len();
        let end = prompt[start..].find('"').unwrap();
        prompt[start..start + end].parse().unwrap()
    }

    /// Answers from a closure and counts calls.
    struct Mock<F: Fn(u64, usize) -> String + Sync> {
        answer: F,
        calls: Mutex<BTreeMap<u64, usize>>,
    }

    impl<F: Fn(u64, usize) -> String + Sync> Mock<F> {
        fn new(answer: F) -> Self {
            Self {
                answer,
                calls: Mutex::new(BTreeMap::new()),
            }
        }
        fn total(&self) -> usize {
            self.calls.lock().unwrap().values().sum()
        }
    }

    impl<F: Fn(u64, usize) -> String + Sync> Backend for Mock<F> {
        fn complete(&self, prompt: &str) -> Result<String, BackendError> {
            let id = incident_of(prompt);
            let mut calls = self.calls.lock().unwrap();
            let n = calls.entry(id).or_insert(0);
            *n += 1;
            Ok((self.answer)(id, *n))
        }
    }

    fn http_config(dir: &std::path::Path) -> BackendConfig {
        let mut c = BackendConfig::http("mock-model", "http://unused", dir.join("cache"));
        c.max_parallel = 3;
        c
    }

    #[test]
    fn results_ordered_and_cached() {
        let tmp = tempfile::tempdir().unwrap();
        let config = http_config(tmp.path());
        let ids = [9, 3, 5, 1, 7, 2];
        let mock = Mock::new(|id, _| response_for(id));
        let first = run_extraction_with(&corpus(&ids), &config, &mock, &RunOptions::default()).unwrap();
        let order: Vec<u64> = first.results.iter().map(|r| r.incident_id).collect();
        assert_eq!(order, vec![1, 2, 3, 5, 7, 9]);
        assert_eq!(first.backend_calls, 6);
        assert!(first.results.iter().all(|r| r.model_name == "mock-model"));

        let second = run_extraction_with(&corpus(&ids), &config, &mock, &RunOptions::default()).unwrap();
        assert_eq!(mock.total(), 6, "second run must be served from the cache");
        assert_eq!(second.backend_calls, 0);
        assert_eq!(second.cache_hits, 6);
        assert_eq!(first.results, second.results);

        let replay = BackendConfig::replay("mock-model", tmp.path().join("cache"));
        let third = run_extraction(&corpus(&ids), &replay, &RunOptions::default()).unwrap();
        assert_eq!(third.results, first.results);
    }

    #[test]
    fn corrective_request_then_success() {
        let tmp = tempfile::tempdir().unwrap();
        let config = http_config(tmp.path());
        let mock = Mock::new(|id, n| if n == 1 { "not json".into() } else { response_for(id) });
        let run = run_extraction_with(&corpus(&[1, 2]), &config, &mock, &RunOptions::default()).unwrap();
        assert_eq!(run.results.len(), 2);
        assert_eq!(mock.total(), 4);
        let cached = fs::read_to_string(tmp.path().join("cache/mock-model/1.0.0/1.json")).unwrap();
        let entry: CacheEntry = serde_json::from_str(&cached).unwrap();
        assert_eq!(entry.superseded, vec!["not json".to_string()]);
    }

    #[test]
    fn second_failure_quarantines_only_that_incident() {
        let tmp = tempfile::tempdir().unwrap();
        let config = http_config(tmp.path());
        let mock = Mock::new(|id, _| {
            if id == 2 {
                "still not json".into()
            } else {
                response_for(id)
            }
        });
        let options = RunOptions {
            quarantine_dir: Some(tmp.path().join("quarantine")),
            ..Default::default()
        };
        let run = run_extraction_with(&corpus(&[1, 2, 3]), &config, &mock, &options).unwrap();
        assert_eq!(
            run.results.iter().map(|r| r.incident_id).collect::<Vec<_>>(),
            vec![1, 3]
        );
        assert_eq!(run.quarantined.len(), 1);
        assert_eq!(run.quarantined[0].incident_id, 2);
        assert!(matches!(&run.quarantined[0].reason, QuarantineReason::Parse { failure } if failure.is_not_json()));
        let saved = fs::read_to_string(tmp.path().join("quarantine/2.txt")).unwrap();
        assert_eq!(saved, "still not json");
        assert_eq!(mock.calls.lock().unwrap()[&2], 2);
    }

    #[test]
    fn replay_miss_is_backend_unavailable() {
        let tmp = tempfile::tempdir().unwrap();
        let replay = BackendConfig::replay("m", tmp.path());
        let err = run_extraction(&corpus(&[4]), &replay, &RunOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            ExtractionError::BackendUnavailable { incident_id: 4, .. }
        ));
    }

    #[test]
    fn oversize_incident_is_quarantined() {
        let tmp = tempfile::tempdir().unwrap();
        let config = http_config(tmp.path());
        let mock = Mock::new(|id, _| response_for(id));
        let options = RunOptions {
            prompt: PromptOptions { byte_budget: 100 },
            quarantine_dir: None,
        };
        let run = run_extraction_with(&corpus(&[1]), &config, &mock, &options).unwrap();
        assert!(run.results.is_empty());
        assert!(matches!(
            run.quarantined[0].reason,
            QuarantineReason::Oversize { budget: 100, .. }
        ));
        assert_eq!(mock.total(), 0);
    }

    #[test]
    fn chunked_incident_combines_subjects() {
        let tmp = tempfile::tempdir().unwrap();
        let config = http_config(tmp.path());
        let mut c = corpus(&[5]);
        let report = c.incidents[0].reports[0].clone();
        let mut second = report.clone();
        second.report_id = 51;
        second.body = "x".repeat(2000);
        let mut first = report;
        first.body = "y".repeat(2000);
        c.incidents[0].reports = vec![first, second];
        let single = plan_prompts(&c.incidents[0], &rubric_definition(), &PromptOptions::default()).unwrap();
        let budget = single[0].rendered_prompt.len() - 1000;
        let options = RunOptions {
            prompt: PromptOptions { byte_budget: budget },
            quarantine_dir: None,
        };
        let mock = Mock::new(|id, _| response_for(id));
        let run = run_extraction_with(&c, &config, &mock, &options).unwrap();
        let r = &run.results[0];
        assert_eq!(r.prompt_chunks, 2);
        let ids: Vec<&str> = r.subjects.iter().map(|s| s.subject_id.as_str()).collect();
        assert_eq!(ids, vec!["5-S1", "5-S2"]);
        assert!(tmp.path().join("cache/mock-model/1.0.0/5.c1.json").exists());
    }
}
