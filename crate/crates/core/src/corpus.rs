//! Incident/report corpus: the input every later stage consumes.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed corpus input at {context}: {message}")]
    MalformedInput { context: String, message: String },
    #[error("duplicate incident_id {0}")]
    DuplicateIncidentId(u64),
    #[error("duplicate report_id {0}")]
    DuplicateReportId(u64),
    #[error("report {report_id} (incident {incident_id}) has an empty body")]
    EmptyReportBody { incident_id: u64, report_id: u64 },
    #[error("incident {0} has no reports")]
    EmptyIncident(u64),
    #[error("report {report_id} declares incident {declared} but is listed under incident {parent}")]
    IncidentMismatch { report_id: u64, declared: u64, parent: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub report_id: u64,
    pub incident_id: u64,
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub source_url: Option<String>,
    #[serde(default)]
    pub published_date: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub incident_id: u64,
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub reports: Vec<ReportRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub incidents: Vec<IncidentRecord>,
}

impl Corpus {
    pub fn report_count(&self) -> usize {
        self.incidents.iter().map(|i| i.reports.len()).sum()
    }

    pub fn incident(&self, incident_id: u64) -> Option<&IncidentRecord> {
        self.incidents.iter().find(|i| i.incident_id == incident_id)
    }

    /// Maps every report id to its incident id.
    pub fn report_index(&self) -> BTreeMap<u64, u64> {
        self.incidents
            .iter()
            .flat_map(|i| i.reports.iter().map(move |r| (r.report_id, i.incident_id)))
            .collect()
    }

    /// Checks every corpus invariant, in document order.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut incident_ids = BTreeSet::new();
        let mut report_ids = BTreeSet::new();
        for incident in &self.incidents {
            if !incident_ids.insert(incident.incident_id) {
                return Err(CorpusError::DuplicateIncidentId(incident.incident_id));
            }
            if incident.reports.is_empty() {
                return Err(CorpusError::EmptyIncident(incident.incident_id));
            }
            if incident.reports.len() > 1000 {
                log::warn!(
                    "incident {} has {} reports, far outside the expected range",
                    incident.incident_id,
                    incident.reports.len()
                );
            }
            for report in &incident.reports {
                if report.incident_id != incident.incident_id {
                    return Err(CorpusError::IncidentMismatch {
                        report_id: report.report_id,
                        declared: report.incident_id,
                        parent: incident.incident_id,
                    });
                }
                if !report_ids.insert(report.report_id) {
                    return Err(CorpusError::DuplicateReportId(report.report_id));
                }
                if report.body.trim().is_empty() {
                    return Err(CorpusError::EmptyReportBody {
                        incident_id: incident.incident_id,
                        report_id: report.report_id,
                    });
                }
                if let Some(date) = &report.published_date {
                    if !is_iso_date(date) {
                        return Err(CorpusError::MalformedInput {
                            context: format!("report {}", report.report_id),
                            message: format!("published_date {date:?} is not an ISO-8601 date"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn is_iso_date(raw: &str) -> bool {
    chrono::NaiveDate::parse_from_str(raw, "%Y-%m-%d").is_ok() || chrono::DateTime::parse_from_rfc3339(raw).is_ok()
}

/// Parses and validates a corpus document held in memory.
pub fn parse_corpus(text: &str) -> Result<Corpus, CorpusError> {
    if text.starts_with('\u{feff}') {
        return Err(CorpusError::MalformedInput {
            context: "line 1, column 1".into(),
            message: "byte order mark is not allowed".into(),
        });
    }
    let corpus: Corpus = serde_json::from_str(text).map_err(|e| CorpusError::MalformedInput {
        context: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    corpus.validate()?;
    Ok(corpus)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            CorpusError::FileNotFound(path.to_path_buf())
        } else if source.kind() == io::ErrorKind::InvalidData {
            CorpusError::MalformedInput {
                context: path.display().to_string(),
                message: "file is not valid UTF-8".into(),
            }
        } else {
            CorpusError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    parse_corpus(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub incidents: usize,
    pub reports: usize,
    pub min_reports: usize,
    pub max_reports: usize,
    /// Rounded to two decimals.
    pub mean_reports: f64,
    /// Fraction of incidents with more than one report.
    pub multi_report_share: f64,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let counts: Vec<usize> = corpus.incidents.iter().map(|i| i.reports.len()).collect();
    if counts.is_empty() {
        return CorpusStats {
            incidents: 0,
            reports: 0,
            min_reports: 0,
            max_reports: 0,
            mean_reports: 0.0,
            multi_report_share: 0.0,
        };
    }
    let reports: usize = counts.iter().sum();
    let multi = counts.iter().filter(|&&c| c > 1).count();
    CorpusStats {
        incidents: counts.len(),
        reports,
        min_reports: counts.iter().copied().min().unwrap_or(0),
        max_reports: counts.iter().copied().max().unwrap_or(0),
        mean_reports: (reports as f64 / counts.len() as f64 * 100.0).round() / 100.0,
        multi_report_share: multi as f64 / counts.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(incidents: &str) -> String {
        format!(r#"{{"metadata": {{"source": "test"}}, "incidents": [{incidents}]}}"#)
    }

    fn incident(id: u64, reports: &[(u64, &str)]) -> String {
        let reports: Vec<String> = reports
            .iter()
            .map(|(rid, body)| {
                format!(
                    r#"{{"report_id": {rid}, "incident_id": {id}, "title": "t", "body": {body:?}, "source_url": null, "published_date": "2024-05-01"}}"#
                )
            })
            .collect();
        format!(
            r#"{{"incident_id": {id}, "title": "i{id}", "description": "d", "reports": [{}]}}"#,
            reports.join(",")
        )
    }

    #[test]
    fn duplicate_incident_rejected() {
        let text = doc(&format!("{},{}", incident(7, &[(1, "a")]), incident(7, &[(2, "b")])));
        assert!(matches!(parse_corpus(&text), Err(CorpusError::DuplicateIncidentId(7))));
    }

    #[test]
    fn whitespace_body_rejected() {
        let text = doc(&incident(3, &[(1, "  \n\t ")]));
        assert!(matches!(
            parse_corpus(&text),
            Err(CorpusError::EmptyReportBody {
                incident_id: 3,
                report_id: 1
            })
        ));
    }

    #[test]
    fn duplicate_report_rejected() {
        let text = doc(&format!("{},{}", incident(1, &[(5, "a")]), incident(2, &[(5, "b")])));
        assert!(matches!(parse_corpus(&text), Err(CorpusError::DuplicateReportId(5))));
    }

    #[test]
    fn incident_without_reports_rejected() {
        let text = doc(&incident(9, &[]));
        assert!(matches!(parse_corpus(&text), Err(CorpusError::EmptyIncident(9))));
    }

    #[test]
    fn malformed_json_carries_position() {
        let err = parse_corpus("{\n  \"incidents\": [\n    {oops}\n]}").unwrap_err();
        match err {
            CorpusError::MalformedInput { context, .. } => assert!(context.starts_with("line 3")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bom_rejected() {
        let text = format!("\u{feff}{}", doc(""));
        assert!(matches!(parse_corpus(&text), Err(CorpusError::MalformedInput { .. })));
    }

    #[test]
    fn bad_date_rejected() {
        let text = doc(&incident(1, &[(1, "x")])).replace("2024-05-01", "May 1st");
        assert!(matches!(parse_corpus(&text), Err(CorpusError::MalformedInput { .. })));
    }

    #[test]
    fn missing_file() {
        let err = load_corpus("/definitely/not/here.json").unwrap_err();
        assert!(matches!(err, CorpusError::FileNotFound(_)));
    }

    #[test]
    fn unicode_kept_verbatim() {
        let text = doc(&incident(1, &[(1, "Céline Dion — «quoted»")]));
        let corpus = parse_corpus(&text).unwrap();
        assert_eq!(corpus.incidents[0].reports[0].body, "Céline Dion — «quoted»");
    }

    #[test]
    fn single_report_stats() {
        let corpus = parse_corpus(&doc(&incident(1, &[(1, "x")]))).unwrap();
        let stats = corpus_stats(&corpus);
        assert_eq!((stats.min_reports, stats.max_reports), (1, 1));
        assert_eq!(stats.mean_reports, 1.0);
        assert_eq!(stats.multi_report_share, 0.0);
    }

    #[test]
    fn empty_corpus_stats_are_zero() {
        let stats = corpus_stats(&Corpus::default());
        assert_eq!(stats.incidents, 0);
        assert_eq!(stats.mean_reports, 0.0);
    }
}
