//! Renders the extraction prompt for one incident.
//!
//! The static text lives in `assets/extraction_prompt.txt`. It uses
//! Python-format conventions: `{{`/`}}` are literal braces, the three `{}`
//! slots receive incident id, report count and report payload, and
//! `{categories}` receives the rubric's category listing.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{IncidentRecord, ReportRecord};
use crate::rubric::Rubric;

pub const PROMPT_TEMPLATE: &str = include_str!("../assets/extraction_prompt.txt");

pub const DEFAULT_BYTE_BUDGET: usize = 400_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("incident {0} has no reports to render")]
    EmptyIncident(u64),
    #[error("prompt for incident {incident_id} needs {bytes} bytes, budget is {budget}")]
    OversizePrompt {
        incident_id: u64,
        bytes: usize,
        budget: usize,
    },
    #[error("template error: {0}")]
    Template(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub byte_budget: usize,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            byte_budget: DEFAULT_BYTE_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkInfo {
    /// 0-based chunk index.
    pub index: usize,
    pub of: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub incident_id: u64,
    pub total_report_number: usize,
    pub report_ids: Vec<u64>,
    pub reports_payload: String,
    pub rendered_prompt: String,
    pub prompt_hash: String,
    /// Set when the incident was split across several prompts.
    pub chunk: Option<ChunkInfo>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Concatenates report bodies, each preceded by a `--- REPORT <id> ---` line.
pub fn reports_payload(reports: &[&ReportRecord]) -> String {
    reports
        .iter()
        .map(|r| format!("--- REPORT {} ---\n{}", r.report_id, r.body))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Python `str.format`-style substitution limited to what the template uses.
fn render_template(template: &str, positional: &[&str], named: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + positional.iter().map(|p| p.len()).sum::<usize>());
    let mut next = 0;
    let mut chars = template.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '{' if matches!(chars.peek(), Some((_, '{'))) => {
                chars.next();
                out.push('{');
            }
            '}' if matches!(chars.peek(), Some((_, '}'))) => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let rest = &template[i + 1..];
                let end = rest
                    .find('}')
                    .ok_or_else(|| PromptError::Template(format!("unclosed brace at byte {i}")))?;
                let field = &rest[..end];
                if field.is_empty() {
                    let value = positional
                        .get(next)
                        .ok_or_else(|| PromptError::Template("too few positional values".into()))?;
                    out.push_str(value);
                    next += 1;
                } else {
                    let (_, value) = named
                        .iter()
                        .find(|(name, _)| *name == field)
                        .ok_or_else(|| PromptError::Template(format!("unknown field {{{field}}}")))?;
                    out.push_str(value);
                }
                for _ in 0..=end {
                    chars.next();
                }
            }
            '}' => return Err(PromptError::Template(format!("stray '}}' at byte {i}"))),
            other => out.push(other),
        }
    }
    if next != positional.len() {
        return Err(PromptError::Template(format!(
            "template consumed {next} positional values, {} supplied",
            positional.len()
        )));
    }
    Ok(out)
}

fn render(
    incident_id: u64,
    reports: &[&ReportRecord],
    rubric: &Rubric,
    chunk: Option<ChunkInfo>,
) -> Result<PromptRequest, PromptError> {
    let payload = reports_payload(reports);
    let id = incident_id.to_string();
    let count = reports.len().to_string();
    let listing = rubric.category_listing();
    let rendered = render_template(PROMPT_TEMPLATE, &[&id, &count, &payload], &[("categories", &listing)])?;
    Ok(PromptRequest {
        incident_id,
        total_report_number: reports.len(),
        report_ids: reports.iter().map(|r| r.report_id).collect(),
        reports_payload: payload,
        prompt_hash: sha256_hex(rendered.as_bytes()),
        rendered_prompt: rendered,
        chunk,
    })
}

/// Renders the single prompt covering every report of `incident`.
pub fn build_prompt(
    incident: &IncidentRecord,
    rubric: &Rubric,
    options: &PromptOptions,
) -> Result<PromptRequest, PromptError> {
    if incident.reports.is_empty() {
        return Err(PromptError::EmptyIncident(incident.incident_id));
    }
    let reports: Vec<&ReportRecord> = incident.reports.iter().collect();
    let request = render(incident.incident_id, &reports, rubric, None)?;
    if request.rendered_prompt.len() > options.byte_budget {
        return Err(PromptError::OversizePrompt {
            incident_id: incident.incident_id,
            bytes: request.rendered_prompt.len(),
            budget: options.byte_budget,
        });
    }
    Ok(request)
}

/// Like [`build_prompt`], but splits an incident whose prompt exceeds the
/// byte budget into consecutive report chunks, each within budget. Fails only
/// when a single report cannot fit on its own.
pub fn plan_prompts(
    incident: &IncidentRecord,
    rubric: &Rubric,
    options: &PromptOptions,
) -> Result<Vec<PromptRequest>, PromptError> {
    match build_prompt(incident, rubric, options) {
        Ok(request) => return Ok(vec![request]),
        Err(PromptError::OversizePrompt { .. }) => {}
        Err(other) => return Err(other),
    }

    let mut groups: Vec<Vec<&ReportRecord>> = Vec::new();
    let mut current: Vec<&ReportRecord> = Vec::new();
    for report in &incident.reports {
        current.push(report);
        let fits = render(incident.incident_id, &current, rubric, None)?
            .rendered_prompt
            .len()
            <= options.byte_budget;
        if fits {
            continue;
        }
        current.pop();
        if current.is_empty() {
            let alone = render(incident.incident_id, &[report], rubric, None)?;
            return Err(PromptError::OversizePrompt {
                incident_id: incident.incident_id,
                bytes: alone.rendered_prompt.len(),
                budget: options.byte_budget,
            });
        }
        groups.push(std::mem::take(&mut current));
        current.push(report);
        let alone = render(incident.incident_id, &current, rubric, None)?;
        if alone.rendered_prompt.len() > options.byte_budget {
            return Err(PromptError::OversizePrompt {
                incident_id: incident.incident_id,
                bytes: alone.rendered_prompt.len(),
                budget: options.byte_budget,
            });
        }
    }
    if !current.is_empty() {
        groups.push(current);
    }

    let of = groups.len();
    groups
        .iter()
        .enumerate()
        .map(|(index, group)| render(incident.incident_id, group, rubric, Some(ChunkInfo { index, of })))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rubric::rubric_definition;

    fn report(id: u64, incident: u64, body: &str) -> ReportRecord {
        ReportRecord {
            report_id: id,
            incident_id: incident,
            title: format!("report {id}"),
            body: body.to_string(),
            source_url: None,
            published_date: None,
        }
    }

    fn incident(id: u64, bodies: &[&str]) -> IncidentRecord {
        IncidentRecord {
            incident_id: id,
            title: "t".into(),
            description: "d".into(),
            reports: bodies
                .iter()
                .enumerate()
                .map(|(i, b)| report(id * 100 + i as u64, id, b))
                .collect(),
        }
    }

    #[test]
    fn template_formatter() {
        let out = render_template("a {{x}} {} {n} {}", &["1", "2"], &[("n", "N")]).unwrap();
        assert_eq!(out, "a {x} 1 N 2");
        assert!(render_template("{}", &[], &[]).is_err());
        assert!(render_template("{}", &["1", "2"], &[]).is_err());
        assert!(render_template("}", &[], &[]).is_err());
        assert!(render_template("{zzz}", &[], &[]).is_err());
    }

    #[test]
    fn renders_placeholders() {
        let rubric = rubric_definition();
        let req = build_prompt(&incident(42, &["first", "second"]), &rubric, &PromptOptions::default()).unwrap();
        let p = &req.rendered_prompt;
        assert!(p.starts_with("Persona: You are an expert AI Incident Analyst"));
        assert!(p.contains("IncidentID: \"42\","));
        assert!(p.contains("TotalReportNumber: \"2\","));
        assert!(p.contains("--- REPORT 4200 ---\nfirst\n\n--- REPORT 4201 ---\nsecond"));
        assert!(p.contains("{\"IncidentID\": \"{}\","));
        assert!(p.contains("22. Caste (e.g., Brahmin, Dalit)"));
        assert!(p
            .trim_end()
            .ends_with("Rule 6: Output only JSON - do not include any other content."));
        assert_eq!(req.total_report_number, 2);
        assert_eq!(req.prompt_hash, sha256_hex(p.as_bytes()));
    }

    #[test]
    fn empty_incident_rejected() {
        let rubric = rubric_definition();
        let err = build_prompt(&incident(5, &[]), &rubric, &PromptOptions::default()).unwrap_err();
        assert_eq!(err, PromptError::EmptyIncident(5));
    }

    #[test]
    fn deterministic_and_sensitive_to_bodies() {
        let rubric = rubric_definition();
        let opts = PromptOptions::default();
        let a = build_prompt(&incident(1, &["x"]), &rubric, &opts).unwrap();
        let b = build_prompt(&incident(1, &["x"]), &rubric, &opts).unwrap();
        let c = build_prompt(&incident(1, &["y"]), &rubric, &opts).unwrap();
        assert_eq!(a.prompt_hash, b.prompt_hash);
        assert_ne!(a.prompt_hash, c.prompt_hash);
    }

    #[test]
    fn oversize_is_chunked() {
        let rubric = rubric_definition();
        let base = build_prompt(&incident(1, &["x"]), &rubric, &PromptOptions::default())
            .unwrap()
            .rendered_prompt
            .len();
        let body = "b".repeat(1000);
        let inc = incident(1, &[&body, &body, &body, &body]);
        let opts = PromptOptions {
            byte_budget: base + 2100,
        };
        assert!(matches!(
            build_prompt(&inc, &rubric, &opts),
            Err(PromptError::OversizePrompt { .. })
        ));
        let chunks = plan_prompts(&inc, &rubric, &opts).unwrap();
        assert_eq!(chunks.len(), 2);
        for (i, chunk) in chunks.iter().enumerate() {
            assert!(chunk.rendered_prompt.len() <= opts.byte_budget);
            assert_eq!(chunk.chunk, Some(ChunkInfo { index: i, of: 2 }));
            assert_eq!(chunk.total_report_number, 2);
        }
        let ids: Vec<u64> = chunks.iter().flat_map(|c| c.report_ids.clone()).collect();
        assert_eq!(ids, vec![100, 101, 102, 103]);
    }

    #[test]
    fn single_huge_report_is_an_error() {
        let rubric = rubric_definition();
        let inc = incident(1, &[&"z".repeat(5000)]);
        let opts = PromptOptions { byte_budget: 1000 };
        assert!(matches!(
            plan_prompts(&inc, &rubric, &opts),
            Err(PromptError::OversizePrompt { .. })
        ));
    }
}
