//! Parsing and validation of a raw model response.
//!
//! The model is asked for JSON with a comma after every category, including
//! the last one, so trailing commas are accepted. A surrounding Markdown code
//! fence is stripped. Everything else must match the output skeleton; each
//! deviation is reported as a [`Violation`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{ExtractionResult, HarmedSubject, MarkerRecord, MarkerType, NOT_MENTIONED};
use crate::prompting::sha256_hex;
use crate::rubric::{Answer, CounterfactualJudgment, IdentityCategory, SubjectType, RUBRIC_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NotJson {
        message: String,
    },
    MissingField {
        subject: Option<String>,
        field: String,
    },
    MissingCategory {
        subject: String,
        category: IdentityCategory,
    },
    UnknownCategory {
        subject: String,
        name: String,
    },
    DuplicateCategory {
        subject: String,
        category: IdentityCategory,
    },
    BadEnum {
        subject: Option<String>,
        field: String,
        value: String,
    },
    /// MarkerHarm text without CQ1 = Yes and CQ2 = No.
    MarkerHarmWithoutCausalYes {
        subject: String,
        category: IdentityCategory,
    },
    /// Extracted or Inferred marker type with no marker value.
    EmptyMarker {
        subject: String,
        category: IdentityCategory,
    },
    BadSubjectId {
        subject: String,
        value: String,
    },
    IncidentMismatch {
        value: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotJson { message } => write!(f, "not JSON: {message}"),
            Self::MissingField { subject, field } => match subject {
                Some(s) => write!(f, "{s}: missing field {field}"),
                None => write!(f, "missing field {field}"),
            },
            Self::MissingCategory { subject, category } => {
                write!(f, "{subject}: missing category {category}")
            }
            Self::UnknownCategory { subject, name } => write!(f, "{subject}: unknown category {name:?}"),
            Self::DuplicateCategory { subject, category } => {
                write!(f, "{subject}: category {category} given twice")
            }
            Self::BadEnum { subject, field, value } => match subject {
                Some(s) => write!(f, "{s}: bad value {value:?} for {field}"),
                None => write!(f, "bad value {value:?} for {field}"),
            },
            Self::MarkerHarmWithoutCausalYes { subject, category } => {
                write!(
                    f,
                    "{subject}: MarkerHarm for {category} without DirectScore Yes / AlternateScore No"
                )
            }
            Self::EmptyMarker { subject, category } => {
                write!(f, "{subject}: {category} has a marker type but no marker")
            }
            Self::BadSubjectId { subject, value } => write!(f, "{subject}: bad SubjectID {value:?}"),
            Self::IncidentMismatch { value } => write!(f, "IncidentID {value:?} does not match"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub struct ParseFailure {
    pub incident_id: u64,
    pub violations: Vec<Violation>,
}

impl ParseFailure {
    fn single(incident_id: u64, violation: Violation) -> Self {
        Self {
            incident_id,
            violations: vec![violation],
        }
    }

    pub fn is_not_json(&self) -> bool {
        matches!(self.violations.as_slice(), [Violation::NotJson { .. }])
    }
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "incident {}: ", self.incident_id)?;
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Removes a Markdown code fence around the payload, if present.
fn strip_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let body = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest,
    };
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

/// Drops commas that directly precede `}` or `]`, outside string literals.
fn strip_trailing_commas(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text.char_indices() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                out.push(c);
            }
            ',' => {
                let next = bytes[i + 1..].iter().find(|b| !b.is_ascii_whitespace());
                if !matches!(next, Some(b'}') | Some(b']')) {
                    out.push(c);
                }
            }
            _ => out.push(c),
        }
    }
    out
}

fn text_field(obj: &Map<String, Value>, key: &str) -> Option<String> {
    match obj.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

fn parse_report_ids(value: Option<&Value>) -> Result<BTreeSet<u64>, String> {
    let mut ids = BTreeSet::new();
    let mut push_text = |s: &str| -> Result<(), String> {
        for part in s.split(|c: char| c == ',' || c == ';' || c.is_whitespace()) {
            if part.is_empty() {
                continue;
            }
            ids.insert(part.parse::<u64>().map_err(|_| s.to_string())?);
        }
        Ok(())
    };
    match value {
        None | Some(Value::Null) => {}
        Some(Value::Number(n)) => {
            push_text(&n.to_string())?;
        }
        Some(Value::String(s)) => push_text(s)?,
        Some(Value::Array(items)) => {
            for item in items {
                match item {
                    Value::Number(n) => push_text(&n.to_string())?,
                    Value::String(s) => push_text(s)?,
                    other => return Err(other.to_string()),
                }
            }
        }
        Some(other) => return Err(other.to_string()),
    }
    Ok(ids)
}

fn is_valid_subject_id(value: &str, incident_id: u64) -> bool {
    value
        .strip_prefix(&format!("{incident_id}-S"))
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

fn parse_marker_type(raw: Option<&str>) -> Option<MarkerType> {
    let raw = raw.unwrap_or("").trim().to_lowercase();
    match raw.as_str() {
        "extracted" | "explicit" => Some(MarkerType::Extracted),
        "inferred" | "implicit" => Some(MarkerType::Inferred),
        "none" | "" => Some(MarkerType::None),
        _ => None,
    }
}

fn parse_marker(
    subject: &str,
    category: IdentityCategory,
    value: &Value,
    violations: &mut Vec<Violation>,
) -> MarkerRecord {
    let fallback = MarkerRecord::not_mentioned(category);
    let Some(obj) = value.as_object() else {
        violations.push(Violation::BadEnum {
            subject: Some(subject.to_string()),
            field: category.response_key().to_string(),
            value: value.to_string(),
        });
        return fallback;
    };
    let harm = text_field(obj, "MarkerHarm").unwrap_or_default().trim().to_string();
    let type_raw = text_field(obj, "MarkerType");
    let Some(marker_type) = parse_marker_type(type_raw.as_deref()) else {
        violations.push(Violation::BadEnum {
            subject: Some(subject.to_string()),
            field: format!("{}.MarkerType", category.response_key()),
            value: type_raw.unwrap_or_default(),
        });
        return fallback;
    };

    if marker_type == MarkerType::None {
        // Scores next to a None marker are template filler and are dropped.
        if !harm.is_empty() {
            violations.push(Violation::MarkerHarmWithoutCausalYes {
                subject: subject.to_string(),
                category,
            });
        }
        return fallback;
    }

    let marker = text_field(obj, "Marker").unwrap_or_default().trim().to_string();
    if marker.is_empty() || marker.eq_ignore_ascii_case(NOT_MENTIONED) {
        violations.push(Violation::EmptyMarker {
            subject: subject.to_string(),
            category,
        });
        return fallback;
    }

    let mut answer = |field: &str| -> Option<Answer> {
        let raw = text_field(obj, field).unwrap_or_default();
        let parsed = Answer::parse(&raw);
        if parsed.is_none() {
            violations.push(Violation::BadEnum {
                subject: Some(subject.to_string()),
                field: format!("{}.{field}", category.response_key()),
                value: raw,
            });
        }
        parsed
    };
    let direct = answer("DirectScore");
    let alternate = answer("AlternateScore");
    let (Some(direct), Some(alternate)) = (direct, alternate) else {
        return fallback;
    };

    let judgment = CounterfactualJudgment {
        cq1_direct: direct,
        cq2_alternate: alternate,
        reasoning: text_field(obj, "Reasoning").unwrap_or_default(),
    };
    if !harm.is_empty() && !judgment.is_causally_relevant() {
        violations.push(Violation::MarkerHarmWithoutCausalYes {
            subject: subject.to_string(),
            category,
        });
    }
    MarkerRecord {
        category,
        marker: Some(marker),
        marker_type,
        source: text_field(obj, "Source").unwrap_or_default(),
        judgment: Some(judgment),
        marker_harm: harm,
    }
}

fn parse_subject(
    key: &str,
    value: &Value,
    incident_id: u64,
    ordinal: usize,
    violations: &mut Vec<Violation>,
) -> Option<HarmedSubject> {
    let label = key.to_string();
    let Some(obj) = value.as_object() else {
        violations.push(Violation::MissingField {
            subject: Some(label),
            field: "Categories".into(),
        });
        return None;
    };

    let subject_id = match text_field(obj, "SubjectID") {
        Some(id) if is_valid_subject_id(id.trim(), incident_id) => id.trim().to_string(),
        Some(id) => {
            violations.push(Violation::BadSubjectId {
                subject: label.clone(),
                value: id,
            });
            super::subject_id(incident_id, ordinal)
        }
        None => {
            violations.push(Violation::BadSubjectId {
                subject: label.clone(),
                value: String::new(),
            });
            super::subject_id(incident_id, ordinal)
        }
    };

    let name = text_field(obj, "Name").unwrap_or_default().trim().to_string();
    if name.is_empty() {
        violations.push(Violation::MissingField {
            subject: Some(label.clone()),
            field: "Name".into(),
        });
    }

    let type_raw = text_field(obj, "Type").unwrap_or_default();
    let subject_type = SubjectType::parse(&type_raw).unwrap_or_else(|| {
        violations.push(Violation::BadEnum {
            subject: Some(label.clone()),
            field: "Type".into(),
            value: type_raw.clone(),
        });
        SubjectType::Other
    });

    let report_ids = parse_report_ids(obj.get("ReportID")).unwrap_or_else(|value| {
        violations.push(Violation::BadEnum {
            subject: Some(label.clone()),
            field: "ReportID".into(),
            value,
        });
        BTreeSet::new()
    });

    let mut markers = BTreeMap::new();
    match obj.get("Categories").and_then(Value::as_object) {
        None => violations.push(Violation::MissingField {
            subject: Some(label.clone()),
            field: "Categories".into(),
        }),
        Some(categories) => {
            for (cat_name, cat_value) in categories {
                let Some(category) = IdentityCategory::parse(cat_name) else {
                    violations.push(Violation::UnknownCategory {
                        subject: label.clone(),
                        name: cat_name.clone(),
                    });
                    continue;
                };
                if markers.contains_key(&category) {
                    violations.push(Violation::DuplicateCategory {
                        subject: label.clone(),
                        category,
                    });
                    continue;
                }
                let record = parse_marker(&label, category, cat_value, violations);
                markers.insert(category, record);
            }
            for category in IdentityCategory::ALL {
                if !markers.contains_key(&category) {
                    violations.push(Violation::MissingCategory {
                        subject: label.clone(),
                        category,
                    });
                }
            }
        }
    }

    Some(HarmedSubject {
        subject_id,
        incident_id,
        report_ids,
        name,
        subject_type,
        markers,
    })
}

/// Parses one model response for `incident_id`.
pub fn parse_extraction(raw: &str, incident_id: u64) -> Result<ExtractionResult, ParseFailure> {
    let body = strip_trailing_commas(strip_fence(raw));
    let doc: Value = serde_json::from_str(&body)
        .map_err(|e| ParseFailure::single(incident_id, Violation::NotJson { message: e.to_string() }))?;
    let Some(root) = doc.as_object() else {
        return Err(ParseFailure::single(
            incident_id,
            Violation::NotJson {
                message: "top-level value is not an object".into(),
            },
        ));
    };

    let mut violations = Vec::new();
    if let Some(id) = text_field(root, "IncidentID") {
        if id.trim().parse::<u64>().ok() != Some(incident_id) {
            violations.push(Violation::IncidentMismatch { value: id });
        }
    }

    let mut subjects = Vec::new();
    match root.get("AI_Subjects") {
        Some(Value::Object(map)) => {
            for (i, (key, value)) in map.iter().enumerate() {
                if let Some(s) = parse_subject(key, value, incident_id, i + 1, &mut violations) {
                    subjects.push(s);
                }
            }
        }
        Some(Value::Array(items)) => {
            for (i, value) in items.iter().enumerate() {
                let key = format!("S{}", i + 1);
                if let Some(s) = parse_subject(&key, value, incident_id, i + 1, &mut violations) {
                    subjects.push(s);
                }
            }
        }
        Some(Value::Null) => {}
        Some(other) => violations.push(Violation::BadEnum {
            subject: None,
            field: "AI_Subjects".into(),
            value: other.to_string(),
        }),
        None => violations.push(Violation::MissingField {
            subject: None,
            field: "AI_Subjects".into(),
        }),
    }

    let mut ids = BTreeSet::new();
    for s in &subjects {
        if !ids.insert(s.subject_id.clone()) {
            violations.push(Violation::BadSubjectId {
                subject: s.subject_id.clone(),
                value: format!("duplicate {}", s.subject_id),
            });
        }
    }

    if !violations.is_empty() {
        return Err(ParseFailure {
            incident_id,
            violations,
        });
    }

    Ok(ExtractionResult {
        incident_id,
        description: text_field(root, "Description").unwrap_or_default(),
        subjects,
        raw_response_hash: sha256_hex(raw.as_bytes()),
        model_name: String::new(),
        rubric_version: RUBRIC_VERSION.to_string(),
        prompt_chunks: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn marker_json(marker: &str, kind: &str, direct: &str, alt: &str, harm: &str) -> String {
        format!(
            r#"{{"Marker": "{marker}", "MarkerType": "{kind}", "Source": "s", "DirectScore": "{direct}", "AlternateScore": "{alt}", "Reasoning": "r", "MarkerHarm": "{harm}"}}"#
        )
    }

    fn none_json() -> String {
        r#"{"Marker": "Not mentioned", "MarkerType": "None", "Source": "None", "DirectScore": "No", "AlternateScore": "Yes", "Reasoning": "", "MarkerHarm": ""}"#.to_string()
    }

    fn response(incident: u64, overrides: &[(&str, String)], skip: &[&str]) -> String {
        let mut cats = Vec::new();
        for c in IdentityCategory::ALL {
            let key = c.response_key();
            if skip.contains(&key) {
                continue;
            }
            let body = overrides
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| v.clone())
                .unwrap_or_else(none_json);
            cats.push(format!("\"{key}\": {body},"));
        }
        format!(
            r#"{{"IncidentID": "{incident}", "Description": "d", "ReportNumber": 1, "AI_Subjects": {{"S1": {{"SubjectID": "{incident}-S1", "ReportID": 7, "Name": "Naga Munchetty", "Type": "Individual", "Categories": {{ {} }} }} }} }}"#,
            cats.join("\n")
        )
    }

    #[test]
    fn valid_response_with_trailing_commas_and_fence() {
        let raw = format!(
            "```json\n{}\n```",
            response(
                924,
                &[(
                    "Gender",
                    marker_json("Woman", "Extracted", "Yes", "No", "She was targeted.")
                )],
                &[]
            )
        );
        let result = parse_extraction(&raw, 924).unwrap();
        let s = &result.subjects[0];
        assert_eq!(s.name, "Naga Munchetty");
        assert_eq!(s.subject_type, SubjectType::Individual);
        assert_eq!(s.markers.len(), 26);
        let g = s.marker(IdentityCategory::Gender);
        assert_eq!(g.marker.as_deref(), Some("Woman"));
        assert!(g.is_causally_relevant());
        assert_eq!(s.report_ids, BTreeSet::from([7]));
        let caste = s.marker(IdentityCategory::Caste);
        assert_eq!(caste.marker, None);
        assert!(caste.judgment.is_none());
        assert!(caste.source.is_empty());
        for m in s.markers.values() {
            m.check().unwrap();
        }
    }

    #[test]
    fn missing_caste() {
        let err = parse_extraction(&response(1, &[], &["Caste"]), 1).unwrap_err();
        assert_eq!(
            err.violations,
            vec![Violation::MissingCategory {
                subject: "S1".into(),
                category: IdentityCategory::Caste
            }]
        );
    }

    #[test]
    fn harm_without_causal_yes() {
        let raw = response(
            1,
            &[(
                "Age",
                marker_json("49", "Extracted", "No", "Yes", "Something happened."),
            )],
            &[],
        );
        let err = parse_extraction(&raw, 1).unwrap_err();
        assert!(matches!(
            err.violations[0],
            Violation::MarkerHarmWithoutCausalYes {
                category: IdentityCategory::Age,
                ..
            }
        ));
    }

    #[test]
    fn bad_enum_values() {
        let raw = response(
            1,
            &[("Race", marker_json("Black", "Extracted", "Maybe", "No", ""))],
            &[],
        );
        let err = parse_extraction(&raw, 1).unwrap_err();
        assert!(
            matches!(&err.violations[0], Violation::BadEnum { field, value, .. } if field == "Race.DirectScore" && value == "Maybe")
        );

        let raw = response(1, &[], &[]).replace("\"Individual\"", "\"Robot\"");
        let err = parse_extraction(&raw, 1).unwrap_err();
        assert!(matches!(&err.violations[0], Violation::BadEnum { field, .. } if field == "Type"));
    }

    #[test]
    fn bad_subject_id() {
        let raw = response(1, &[], &[]).replace("\"1-S1\"", "\"IncidentID-S1\"");
        let err = parse_extraction(&raw, 1).unwrap_err();
        assert!(matches!(err.violations[0], Violation::BadSubjectId { .. }));
    }

    #[test]
    fn not_json() {
        let err = parse_extraction("Sorry, I cannot help with that.", 3).unwrap_err();
        assert!(err.is_not_json());
        assert_eq!(err.incident_id, 3);
    }

    #[test]
    fn explicit_is_extracted_and_species_alias() {
        let raw = response(
            2,
            &[(
                "Specie",
                marker_json("rhinos", "Explicit", "Yes", "No", "Rhinos were tracked by poachers."),
            )],
            &[],
        );
        let result = parse_extraction(&raw, 2).unwrap();
        let m = result.subjects[0].marker(IdentityCategory::Species);
        assert_eq!(m.marker_type, MarkerType::Extracted);
    }

    #[test]
    fn empty_marker_with_type_rejected() {
        let raw = response(
            2,
            &[("Religion", marker_json("Not mentioned", "Inferred", "No", "Yes", ""))],
            &[],
        );
        let err = parse_extraction(&raw, 2).unwrap_err();
        assert!(matches!(err.violations[0], Violation::EmptyMarker { .. }));
    }

    #[test]
    fn incident_mismatch() {
        let err = parse_extraction(&response(5, &[], &[]), 6).unwrap_err();
        assert!(err
            .violations
            .iter()
            .any(|v| matches!(v, Violation::IncidentMismatch { .. })));
    }

    #[test]
    fn trailing_comma_inside_string_untouched() {
        assert_eq!(strip_trailing_commas(r#"{"a": ",}", }"#), r#"{"a": ",}" }"#);
        assert_eq!(strip_trailing_commas("[1, 2,\n ]"), "[1, 2\n ]");
    }

    #[test]
    fn report_ids_forms() {
        use serde_json::json;
        assert_eq!(
            parse_report_ids(Some(&json!([1, "2"]))).unwrap(),
            BTreeSet::from([1, 2])
        );
        assert_eq!(parse_report_ids(Some(&json!("3, 4"))).unwrap(), BTreeSet::from([3, 4]));
        assert!(parse_report_ids(Some(&json!("report_number"))).is_err());
        assert!(parse_report_ids(None).unwrap().is_empty());
    }
}
