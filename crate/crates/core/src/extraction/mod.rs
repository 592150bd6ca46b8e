//! Model-backed extraction of harmed subjects and their identity markers.
//!
//! - [`parse`] turns one raw model response into an [`ExtractionResult`]
//! - [`merge`] deduplicates subjects within an incident
//! - [`backend`] and [`cache`] run prompts against a text model, persisting
//!   every raw response before it is parsed
//! - [`run`] ties the above together over a corpus with bounded parallelism

pub mod backend;
pub mod cache;
pub mod merge;
pub mod parse;
pub mod response;
pub mod run;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::rubric::{CounterfactualJudgment, IdentityCategory, SubjectType};

pub use backend::{Backend, BackendConfig, BackendError, BackendKind, DecodingParams};
pub use merge::{merge_subjects, merge_subjects_with};
pub use parse::{parse_extraction, ParseFailure, Violation};
pub use response::render_response;
pub use run::{
    run_extraction, run_extraction_with, ExtractionError, ExtractionRun, QuarantineEntry, QuarantineReason, RunOptions,
};

/// The marker string the model uses for "no marker".
pub const NOT_MENTIONED: &str = "Not mentioned";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MarkerType {
    Extracted,
    Inferred,
    None,
}

impl MarkerType {
    /// Extracted beats Inferred beats None when two records compete.
    pub fn specificity(self) -> u8 {
        match self {
            Self::Extracted => 2,
            Self::Inferred => 1,
            Self::None => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerRecord {
    pub category: IdentityCategory,
    /// `None` is the "Not mentioned" sentinel.
    pub marker: Option<String>,
    pub marker_type: MarkerType,
    /// Verbatim excerpt or inference reasoning; empty when there is no marker.
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub judgment: Option<CounterfactualJudgment>,
    #[serde(default)]
    pub marker_harm: String,
}

impl MarkerRecord {
    pub fn not_mentioned(category: IdentityCategory) -> Self {
        Self {
            category,
            marker: None,
            marker_type: MarkerType::None,
            source: String::new(),
            judgment: None,
            marker_harm: String::new(),
        }
    }

    pub fn is_present(&self) -> bool {
        self.marker_type != MarkerType::None
    }

    pub fn is_causally_relevant(&self) -> bool {
        self.judgment
            .as_ref()
            .is_some_and(CounterfactualJudgment::is_causally_relevant)
    }

    /// Checks the record's internal consistency rules.
    pub fn check(&self) -> Result<(), &'static str> {
        let none = self.marker_type == MarkerType::None;
        if none != self.marker.is_none() {
            return Err("marker type None must coincide with a missing marker");
        }
        if none && (!self.source.is_empty() || self.judgment.is_some()) {
            return Err("a missing marker carries no source and no judgment");
        }
        if !none && self.judgment.is_none() {
            return Err("an extracted or inferred marker needs both counterfactual answers");
        }
        if !self.marker_harm.is_empty() && !self.is_causally_relevant() {
            return Err("marker harm requires CQ1 = Yes and CQ2 = No");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarmedSubject {
    pub subject_id: String,
    pub incident_id: u64,
    #[serde(default)]
    pub report_ids: BTreeSet<u64>,
    pub name: String,
    pub subject_type: SubjectType,
    /// Exactly one record per identity category.
    pub markers: BTreeMap<IdentityCategory, MarkerRecord>,
}

impl HarmedSubject {
    /// A subject with every category set to "Not mentioned".
    pub fn blank(incident_id: u64, ordinal: usize, name: &str, subject_type: SubjectType) -> Self {
        Self {
            subject_id: subject_id(incident_id, ordinal),
            incident_id,
            report_ids: BTreeSet::new(),
            name: name.to_string(),
            subject_type,
            markers: IdentityCategory::ALL
                .into_iter()
                .map(|c| (c, MarkerRecord::not_mentioned(c)))
                .collect(),
        }
    }

    pub fn marker(&self, category: IdentityCategory) -> &MarkerRecord {
        &self.markers[&category]
    }

    pub fn present_markers(&self) -> impl Iterator<Item = &MarkerRecord> {
        self.markers.values().filter(|m| m.is_present())
    }

    pub fn relevant_markers(&self) -> impl Iterator<Item = &MarkerRecord> {
        self.markers.values().filter(|m| m.is_causally_relevant())
    }

    /// Sets a present marker with the given counterfactual answers.
    pub fn set_marker(
        &mut self,
        category: IdentityCategory,
        value: &str,
        marker_type: MarkerType,
        judgment: CounterfactualJudgment,
    ) -> &mut MarkerRecord {
        let record = self.markers.get_mut(&category).expect("all categories present");
        *record = MarkerRecord {
            category,
            marker: Some(value.to_string()),
            marker_type,
            source: String::new(),
            marker_harm: String::new(),
            judgment: Some(judgment),
        };
        record
    }
}

pub fn subject_id(incident_id: u64, ordinal: usize) -> String {
    format!("{incident_id}-S{ordinal}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub incident_id: u64,
    pub description: String,
    pub subjects: Vec<HarmedSubject>,
    pub raw_response_hash: String,
    pub model_name: String,
    pub rubric_version: String,
    /// Number of prompts the incident was split into; 1 unless it exceeded
    /// the prompt byte budget.
    #[serde(default = "one")]
    pub prompt_chunks: usize,
}

fn one() -> usize {
    1
}

impl ExtractionResult {
    pub fn subject_count(&self) -> usize {
        self.subjects.len()
    }
}

/// Writes results as JSON lines, one incident per line.
pub fn to_jsonl(results: &[ExtractionResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r).expect("extraction results serialize"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<ExtractionResult>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
