//! Renders an [`ExtractionResult`] back into the model's output format.
//! Used by the synthetic-corpus generator to produce replayable responses.

use std::collections::BTreeSet;

use serde::ser::{Serialize, Serializer};

use super::{ExtractionResult, HarmedSubject, MarkerRecord, MarkerType, NOT_MENTIONED};
use crate::rubric::IdentityCategory;

#[derive(serde::Serialize)]
#[serde(rename_all = "PascalCase")]
struct MarkerOut<'a> {
    marker: &'a str,
    marker_type: &'static str,
    source: &'a str,
    direct_score: &'static str,
    alternate_score: &'static str,
    reasoning: &'a str,
    marker_harm: &'a str,
}

const ABSENT: MarkerOut<'static> = MarkerOut {
    marker: NOT_MENTIONED,
    marker_type: "None",
    source: "None",
    direct_score: "",
    alternate_score: "",
    reasoning: "",
    marker_harm: "",
};

fn marker_out(record: Option<&MarkerRecord>) -> MarkerOut<'_> {
    let Some(record) = record else { return ABSENT };
    match (&record.marker, &record.judgment) {
        (Some(marker), Some(judgment)) => MarkerOut {
            marker,
            marker_type: match record.marker_type {
                MarkerType::Extracted => "Extracted",
                MarkerType::Inferred => "Inferred",
                MarkerType::None => "None",
            },
            source: &record.source,
            direct_score: judgment.cq1_direct.as_str(),
            alternate_score: judgment.cq2_alternate.as_str(),
            reasoning: &judgment.reasoning,
            marker_harm: &record.marker_harm,
        },
        _ => ABSENT,
    }
}

struct Categories<'a>(&'a HarmedSubject);

impl Serialize for Categories<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_map(
            IdentityCategory::ALL
                .into_iter()
                .map(|c| (c.response_key(), marker_out(self.0.markers.get(&c)))),
        )
    }
}

#[derive(serde::Serialize)]
struct SubjectOut<'a> {
    #[serde(rename = "SubjectID")]
    subject_id: &'a str,
    #[serde(rename = "ReportID")]
    report_ids: &'a BTreeSet<u64>,
    #[serde(rename = "Name")]
    name: &'a str,
    #[serde(rename = "Type")]
    subject_type: &'static str,
    #[serde(rename = "Categories")]
    categories: Categories<'a>,
}

struct Subjects<'a>(&'a [HarmedSubject]);

impl Serialize for Subjects<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_map(self.0.iter().enumerate().map(|(i, s)| {
            let out = SubjectOut {
                subject_id: &s.subject_id,
                report_ids: &s.report_ids,
                name: &s.name,
                subject_type: s.subject_type.label(),
                categories: Categories(s),
            };
            (format!("S{}", i + 1), out)
        }))
    }
}

#[derive(serde::Serialize)]
struct ResponseOut<'a> {
    #[serde(rename = "IncidentID")]
    incident_id: String,
    #[serde(rename = "Description")]
    description: &'a str,
    #[serde(rename = "ReportNumber")]
    report_number: usize,
    #[serde(rename = "AI_Subjects")]
    subjects: Subjects<'a>,
}

pub fn render_response(result: &ExtractionResult) -> String {
    let reports: BTreeSet<u64> = result
        .subjects
        .iter()
        .flat_map(|s| s.report_ids.iter().copied())
        .collect();
    let doc = ResponseOut {
        incident_id: result.incident_id.to_string(),
        description: &result.description,
        report_number: reports.len(),
        subjects: Subjects(&result.subjects),
    };
    serde_json::to_string_pretty(&doc).expect("response renders")
}
