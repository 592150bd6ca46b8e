//! Counterfactual relevance filter.
//!
//! A marker survives iff the harm happened because of it (CQ1 = Yes) and
//! would plausibly not have happened otherwise (CQ2 = No). Removal cascades:
//! a subject left without markers is dropped, and so is an incident left
//! without subjects.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::extraction::{ExtractionResult, MarkerRecord};
use crate::rubric::IdentityCategory;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredCorpus {
    /// Retained incidents, in input order. Subjects keep one record per
    /// category; removed markers are reset to "Not mentioned".
    pub incidents: Vec<ExtractionResult>,
    pub dropped_subjects: usize,
    pub dropped_incidents: usize,
    /// Retained incident count; the denominator of every metric.
    #[serde(rename = "N")]
    pub n_incidents: usize,
}

impl FilteredCorpus {
    pub fn subject_count(&self) -> usize {
        self.incidents.iter().map(|r| r.subjects.len()).sum()
    }
}

pub fn filter_relevant(results: &[ExtractionResult]) -> FilteredCorpus {
    let mut incidents = Vec::with_capacity(results.len());
    let mut dropped_subjects = 0;
    let mut dropped_incidents = 0;
    for result in results {
        let mut kept = result.clone();
        kept.subjects.clear();
        for subject in &result.subjects {
            let mut subject = subject.clone();
            for (category, record) in subject.markers.iter_mut() {
                if !record.is_causally_relevant() {
                    *record = MarkerRecord::not_mentioned(*category);
                }
            }
            if subject.present_markers().next().is_some() {
                kept.subjects.push(subject);
            } else {
                dropped_subjects += 1;
            }
        }
        if kept.subjects.is_empty() {
            dropped_incidents += 1;
        } else {
            incidents.push(kept);
        }
    }
    FilteredCorpus {
        n_incidents: incidents.len(),
        incidents,
        dropped_subjects,
        dropped_incidents,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryDrop {
    /// Present markers before filtering.
    pub overall: usize,
    /// Markers that passed the relevance test.
    pub causal: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub incidents_before: usize,
    pub incidents_after: usize,
    pub subjects_before: usize,
    pub subjects_after: usize,
    pub markers_before: usize,
    pub markers_after: usize,
    /// Keyed by category name, in rubric order.
    pub categories: Vec<(IdentityCategory, CategoryDrop)>,
}

impl RelevanceReport {
    pub fn category(&self, category: IdentityCategory) -> CategoryDrop {
        self.categories
            .iter()
            .find(|(c, _)| *c == category)
            .map(|(_, d)| *d)
            .unwrap_or_default()
    }

    /// JSON with categories as an object keyed by display name.
    pub fn to_json(&self) -> serde_json::Value {
        let categories: serde_json::Map<String, serde_json::Value> = self
            .categories
            .iter()
            .map(|(c, d)| {
                (
                    c.name().to_string(),
                    serde_json::json!({"overall": d.overall, "causal": d.causal}),
                )
            })
            .collect();
        serde_json::json!({
            "incidents_before": self.incidents_before,
            "incidents_after": self.incidents_after,
            "subjects_before": self.subjects_before,
            "subjects_after": self.subjects_after,
            "markers_before": self.markers_before,
            "markers_after": self.markers_after,
            "categories": categories,
        })
    }
}

pub fn relevance_report(before: &[ExtractionResult], after: &FilteredCorpus) -> RelevanceReport {
    let mut counts: BTreeMap<IdentityCategory, CategoryDrop> = IdentityCategory::ALL
        .into_iter()
        .map(|c| (c, CategoryDrop::default()))
        .collect();
    for subject in before.iter().flat_map(|r| &r.subjects) {
        for m in subject.present_markers() {
            counts.get_mut(&m.category).expect("known category").overall += 1;
        }
    }
    for subject in after.incidents.iter().flat_map(|r| &r.subjects) {
        for m in subject.present_markers() {
            counts.get_mut(&m.category).expect("known category").causal += 1;
        }
    }
    let categories: Vec<_> = IdentityCategory::ALL.into_iter().map(|c| (c, counts[&c])).collect();
    RelevanceReport {
        incidents_before: before.len(),
        incidents_after: after.n_incidents,
        subjects_before: before.iter().map(|r| r.subjects.len()).sum(),
        subjects_after: after.subject_count(),
        markers_before: categories.iter().map(|(_, d)| d.overall).sum(),
        markers_after: categories.iter().map(|(_, d)| d.causal).sum(),
        categories,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{HarmedSubject, MarkerType};
    use crate::rubric::{Answer, CounterfactualJudgment, SubjectType};
    use Answer::{No, Yes};
    use IdentityCategory as C;

    fn subject(incident: u64, n: usize, markers: &[(IdentityCategory, Answer, Answer)]) -> HarmedSubject {
        let mut s = HarmedSubject::blank(incident, n, "someone", SubjectType::Individual);
        for (c, q1, q2) in markers {
            s.set_marker(
                *c,
                "value",
                MarkerType::Extracted,
                CounterfactualJudgment::new(*q1, *q2),
            );
        }
        s
    }

    fn result(incident: u64, subjects: Vec<HarmedSubject>) -> ExtractionResult {
        ExtractionResult {
            incident_id: incident,
            description: String::new(),
            subjects,
            raw_response_hash: String::new(),
            model_name: String::new(),
            rubric_version: String::new(),
            prompt_chunks: 1,
        }
    }

    #[test]
    fn yes_yes_and_no_answers_are_removed() {
        let input = vec![result(
            1,
            vec![subject(
                1,
                1,
                &[
                    (C::Gender, Yes, No),
                    (C::Age, Yes, Yes),
                    (C::Race, No, No),
                    (C::Class, No, Yes),
                ],
            )],
        )];
        let out = filter_relevant(&input);
        let s = &out.incidents[0].subjects[0];
        assert!(s.marker(C::Gender).is_present());
        for c in [C::Age, C::Race, C::Class] {
            assert_eq!(s.marker(c), &MarkerRecord::not_mentioned(c));
        }
        assert_eq!(s.markers.len(), 26);
    }

    #[test]
    fn cascade() {
        let input = vec![
            result(
                1,
                vec![
                    subject(1, 1, &[(C::Age, Yes, Yes)]),
                    subject(1, 2, &[(C::Age, Yes, No)]),
                ],
            ),
            result(2, vec![subject(2, 1, &[(C::Race, No, Yes)])]),
            result(3, vec![]),
        ];
        let out = filter_relevant(&input);
        assert_eq!(out.n_incidents, 1);
        assert_eq!(out.dropped_subjects, 2);
        assert_eq!(out.dropped_incidents, 2);
        assert_eq!(out.incidents[0].subjects[0].subject_id, "1-S2");

        let again = filter_relevant(&out.incidents);
        assert_eq!(again.incidents, out.incidents);
        assert_eq!((again.dropped_subjects, again.dropped_incidents), (0, 0));
    }

    #[test]
    fn report_counts() {
        let input = vec![
            result(
                1,
                vec![subject(1, 1, &[(C::Gender, Yes, No), (C::Nationality, No, Yes)])],
            ),
            result(2, vec![subject(2, 1, &[(C::Gender, Yes, Yes)])]),
        ];
        let out = filter_relevant(&input);
        let report = relevance_report(&input, &out);
        assert_eq!(report.category(C::Gender), CategoryDrop { overall: 2, causal: 1 });
        assert_eq!(report.category(C::Nationality), CategoryDrop { overall: 1, causal: 0 });
        assert_eq!(report.category(C::Caste), CategoryDrop::default());
        assert_eq!((report.incidents_before, report.incidents_after), (2, 1));
        assert_eq!((report.markers_before, report.markers_after), (3, 1));
        assert_eq!(report.to_json()["categories"]["Gender"]["overall"], 2);
    }
}
