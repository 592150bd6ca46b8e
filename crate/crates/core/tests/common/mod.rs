//! Shared helpers for integration tests: fixture paths and a brute-force
//! recount oracle that shares no code with the metrics module.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use harmscope::extraction::ExtractionResult;
use harmscope::rubric::{Answer, IdentityCategory};
use harmscope::synth::{canned_results, CannedIncident};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn canned(name: &str) -> Vec<ExtractionResult> {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    let incidents: Vec<CannedIncident> = serde_json::from_str(&text).unwrap();
    canned_results(&incidents, harmscope::pipeline::DEFAULT_MODEL)
}

/// Grouped value for every entry of the random vocabulary, written out by
/// hand. `None` marks values that belong to no group.
pub fn oracle_group(category: IdentityCategory, raw: &str) -> Option<String> {
    use IdentityCategory as C;
    let grouped = match (category, raw) {
        (C::Gender, "woman" | "girls") => "Female",
        (C::Gender, "men" | "boy") => "Male",
        (C::Gender, "nonbinary") => "Other",
        (C::Gender, "person") => return None,
        (C::Class, "gig worker") => "Lower",
        (C::Class, "small business owner") => "Middle",
        (C::Class, "politician" | "wealthy") => "Upper",
        (C::Class, "astronaut") => return None,
        (C::Race, "Black" | "Asian") => "People of color",
        (C::Race, "White") => "White",
        (C::Race, "mixed") => return None,
        (C::Age, "teenager" | "16-year-old") => "Adolescents (10-19)",
        (C::Age, "adult") => "Adults (25-59)",
        (C::Age, "elderly") => "Older adults (60-99)",
        (C::Age, "young") => return None,
        (C::Nationality, "US") => "us",
        (C::Nationality, "Argentine") => "argentine",
        (C::Nationality, "German") => "german",
        (C::PoliticalIdentity, "right-wing") => "right-wing",
        (C::PoliticalIdentity, "Elite") => "elite",
        (C::PoliticalIdentity, "left-wing") => "left-wing",
        (C::Religion, "Muslim") => "muslim",
        (C::Religion, "Christian") => "christian",
        (C::Language, "Spanish") => "spanish",
        other => panic!("value outside the oracle vocabulary: {other:?}"),
    };
    Some(grouped.to_string())
}

pub type OracleValue = (IdentityCategory, String);

/// Counts recomputed by walking every incident once per queried key.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct OracleCounts {
    pub n: u64,
    pub n_c: BTreeMap<IdentityCategory, u64>,
    pub n_v: BTreeMap<OracleValue, u64>,
    pub n_cc: BTreeMap<(IdentityCategory, IdentityCategory), u64>,
    pub n_vv: BTreeMap<(OracleValue, OracleValue), u64>,
}

fn relevant(answers: Option<(Answer, Answer)>) -> bool {
    answers == Some((Answer::Yes, Answer::No))
}

/// Per incident: relevant categories and relevant grouped values, straight
/// from the unfiltered extraction with the Yes/No rule applied inline.
fn incident_marks(r: &ExtractionResult) -> (BTreeSet<IdentityCategory>, BTreeSet<(IdentityCategory, String)>) {
    let mut cats = BTreeSet::new();
    let mut vals = BTreeSet::new();
    for s in &r.subjects {
        for (c, m) in &s.markers {
            let answers = m.judgment.as_ref().map(|j| (j.cq1_direct, j.cq2_alternate));
            if m.marker.is_none() || !relevant(answers) {
                continue;
            }
            cats.insert(*c);
            if let Some(g) = oracle_group(*c, m.marker.as_deref().unwrap()) {
                vals.insert((*c, g));
            }
        }
    }
    (cats, vals)
}

pub fn oracle_counts(results: &[ExtractionResult]) -> OracleCounts {
    let marks: Vec<_> = results
        .iter()
        .map(incident_marks)
        .filter(|(c, _)| !c.is_empty())
        .collect();
    let mut out = OracleCounts {
        n: marks.len() as u64,
        ..Default::default()
    };
    let all_values: BTreeSet<(IdentityCategory, String)> = marks.iter().flat_map(|(_, v)| v.iter().cloned()).collect();
    for a in IdentityCategory::ALL {
        let count = marks.iter().filter(|(c, _)| c.contains(&a)).count() as u64;
        if count > 0 {
            out.n_c.insert(a, count);
        }
        for b in IdentityCategory::ALL {
            if a < b {
                let count = marks.iter().filter(|(c, _)| c.contains(&a) && c.contains(&b)).count() as u64;
                if count > 0 {
                    out.n_cc.insert((a, b), count);
                }
            }
        }
    }
    for a in &all_values {
        let count = marks.iter().filter(|(_, v)| v.contains(a)).count() as u64;
        out.n_v.insert(a.clone(), count);
        for b in &all_values {
            if a < b && a.0 != b.0 {
                let count = marks.iter().filter(|(_, v)| v.contains(a) && v.contains(b)).count() as u64;
                if count > 0 {
                    out.n_vv.insert((a.clone(), b.clone()), count);
                }
            }
        }
    }
    out
}
