//! Synthetic corpora with known counts.
//!
//! [`plant`] builds a corpus and its extractions so that two identity values
//! occur in exactly the requested numbers of incidents, jointly in a
//! requested number, and returns the exact [`CountTable`] the metrics must
//! reproduce. [`random_extractions`] draws unconstrained extraction sets from
//! a small fixed vocabulary for oracle comparisons.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, IncidentRecord, ReportRecord};
use crate::extraction::cache::{CacheEntry, CacheWriteError, ResponseCache};
use crate::extraction::{render_response, DecodingParams, ExtractionResult, HarmedSubject, MarkerType};
use crate::metrics::{CountMode, CountTable, PairScope, ValueKey};
use crate::normalization::GroupingRules;
use crate::prompting::{build_prompt, sha256_hex, PromptError, PromptOptions};
use crate::rubric::{rubric_definition, Answer, CounterfactualJudgment, IdentityCategory, SubjectType, RUBRIC_VERSION};

pub const SYNTH_MODEL: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("infeasible plan: {0}")]
    Infeasible(String),
    #[error("{value:?} does not group in {category}")]
    Unmapped { category: IdentityCategory, value: String },
}

/// One planted value: a raw marker string and the category it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedValue {
    pub category: IdentityCategory,
    pub marker: String,
}

impl PlantedValue {
    pub fn new(category: IdentityCategory, marker: &str) -> Self {
        Self {
            category,
            marker: marker.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    #[serde(rename = "N")]
    pub n_incidents: u64,
    pub value_a: PlantedValue,
    pub value_b: PlantedValue,
    pub n_a: u64,
    pub n_b: u64,
    pub joint: u64,
    /// Adds markers that fail the relevance test and duplicate subjects,
    /// neither of which may change any count.
    #[serde(default)]
    pub noise: bool,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Infeasible(m));
        if self.value_a.category == self.value_b.category {
            return bad("the two values must be in different categories".into());
        }
        if FILLER.0 == self.value_a.category || FILLER.0 == self.value_b.category {
            return bad(format!("{} is reserved for filler markers", FILLER.0));
        }
        if self.joint > self.n_a.min(self.n_b) {
            return bad(format!(
                "joint {} exceeds a marginal ({}, {})",
                self.joint, self.n_a, self.n_b
            ));
        }
        if self.n_a + self.n_b - self.joint > self.n_incidents {
            return bad(format!(
                "{} incidents cannot hold {} + {} - {} planted values",
                self.n_incidents, self.n_a, self.n_b, self.joint
            ));
        }
        Ok(())
    }
}

/// Marker given to incidents that carry neither planted value, so every
/// incident survives the relevance filter.
const FILLER: (IdentityCategory, &str) = (IdentityCategory::Education, "University students");

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub corpus: Corpus,
    pub extractions: Vec<ExtractionResult>,
    /// Causal, incident-scope counts the metrics must reproduce.
    pub expected: CountTable,
}

fn relevant() -> CounterfactualJudgment {
    CounterfactualJudgment {
        cq1_direct: Answer::Yes,
        cq2_alternate: Answer::No,
        reasoning: "Planted as causally relevant.".into(),
    }
}

fn not_relevant() -> CounterfactualJudgment {
    CounterfactualJudgment {
        cq1_direct: Answer::Yes,
        cq2_alternate: Answer::Yes,
        reasoning: "Planted as not causally relevant.".into(),
    }
}

fn report_for(incident_id: u64) -> ReportRecord {
    ReportRecord {
        report_id: incident_id * 10 + 1,
        incident_id,
        title: format!("Synthetic incident {incident_id}"),
        body: format!("A deployed system harmed people in synthetic incident {incident_id}."),
        source_url: None,
        published_date: None,
    }
}

/// A corpus with one synthetic report per incident id.
pub fn corpus_for(incident_ids: impl IntoIterator<Item = u64>, seed: u64) -> Corpus {
    Corpus {
        metadata: BTreeMap::from([
            ("generator".to_string(), serde_json::json!("harmscope synth")),
            ("seed".to_string(), serde_json::json!(seed)),
        ]),
        incidents: incident_ids
            .into_iter()
            .map(|incident_id| IncidentRecord {
                incident_id,
                title: format!("Synthetic incident {incident_id}"),
                description: String::new(),
                reports: vec![report_for(incident_id)],
            })
            .collect(),
    }
}

fn result_for(incident_id: u64, subjects: Vec<HarmedSubject>) -> ExtractionResult {
    let mut result = ExtractionResult {
        incident_id,
        description: format!("Synthetic system {incident_id} was deployed in a test setting."),
        subjects,
        raw_response_hash: String::new(),
        model_name: SYNTH_MODEL.into(),
        rubric_version: RUBRIC_VERSION.into(),
        prompt_chunks: 1,
    };
    result.raw_response_hash = sha256_hex(render_response(&result).as_bytes());
    result
}

fn grouped(rules: &GroupingRules, v: &PlantedValue) -> Result<ValueKey, SynthError> {
    match rules.group_value(v.category, &v.marker) {
        Ok(g) if g.is_mapped() => Ok(ValueKey::new(v.category, &g.grouped)),
        _ => Err(SynthError::Unmapped {
            category: v.category,
            value: v.marker.clone(),
        }),
    }
}

/// Builds a corpus where `value_a` and `value_b` are causally relevant in
/// exactly `n_a` and `n_b` incidents, `joint` of them shared.
pub fn plant(spec: &SynthSpec, rules: &GroupingRules) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let key_a = grouped(rules, &spec.value_a)?;
    let key_b = grouped(rules, &spec.value_b)?;
    let filler = PlantedValue::new(FILLER.0, FILLER.1);
    let key_filler = grouped(rules, &filler)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Slot k gets: both values (k < joint), only a, only b, or the filler.
    let only_a = spec.n_a - spec.joint;
    let only_b = spec.n_b - spec.joint;
    let mut slots: Vec<(bool, bool)> = (0..spec.n_incidents)
        .map(|k| {
            if k < spec.joint {
                (true, true)
            } else if k < spec.joint + only_a {
                (true, false)
            } else if k < spec.joint + only_a + only_b {
                (false, true)
            } else {
                (false, false)
            }
        })
        .collect();
    slots.shuffle(&mut rng);

    let mut extractions = Vec::with_capacity(slots.len());
    for (k, &(has_a, has_b)) in slots.iter().enumerate() {
        let incident_id = k as u64 + 1;
        let mut subjects = Vec::new();
        let mut primary = HarmedSubject::blank(incident_id, 1, "Affected people", SubjectType::GroupOfPersons);
        primary.report_ids.insert(incident_id * 10 + 1);
        let planted: Vec<&PlantedValue> = [(has_a, &spec.value_a), (has_b, &spec.value_b)]
            .into_iter()
            .filter_map(|(has, v)| has.then_some(v))
            .collect();
        let planted = if planted.is_empty() { vec![&filler] } else { planted };
        // With noise, a joint incident may split its two values across two
        // subjects; incident-scope counting must not notice.
        let split = spec.noise && planted.len() == 2 && rng.gen_bool(0.5);
        for (i, v) in planted.iter().enumerate() {
            if split && i == 1 {
                let mut second =
                    HarmedSubject::blank(incident_id, 2, "Other affected people", SubjectType::GroupOfPersons);
                second.report_ids.insert(incident_id * 10 + 1);
                second.set_marker(v.category, &v.marker, MarkerType::Extracted, relevant());
                subjects.push(second);
            } else {
                primary.set_marker(v.category, &v.marker, MarkerType::Extracted, relevant());
            }
        }
        if spec.noise {
            // A marker in an unrelated category that fails the relevance test.
            if rng.gen_bool(0.5) {
                primary.set_marker(
                    IdentityCategory::Religion,
                    "Muslim",
                    MarkerType::Inferred,
                    not_relevant(),
                );
            }
            // A duplicate of the primary subject under a distinct name.
            if rng.gen_bool(0.25) {
                let mut copy = primary.clone();
                copy.name = "Affected people (second report)".into();
                subjects.push(copy);
            }
        }
        subjects.insert(0, primary);
        for (i, s) in subjects.iter_mut().enumerate() {
            s.subject_id = crate::extraction::subject_id(incident_id, i + 1);
        }
        extractions.push(result_for(incident_id, subjects));
    }

    let n_filler = spec.n_incidents - (spec.n_a + spec.n_b - spec.joint);
    let (ordered_a, ordered_b) = if key_a <= key_b {
        (&key_a, &key_b)
    } else {
        (&key_b, &key_a)
    };
    let (cat_lo, cat_hi) = if key_a.category <= key_b.category {
        (key_a.category, key_b.category)
    } else {
        (key_b.category, key_a.category)
    };
    let mut expected = CountTable {
        n_incidents: spec.n_incidents,
        n_c: BTreeMap::new(),
        n_v: BTreeMap::new(),
        n_cc: BTreeMap::new(),
        n_vv: BTreeMap::new(),
        mode: CountMode::Causal,
        scope: PairScope::Incident,
    };
    for (key, n) in [(&key_a, spec.n_a), (&key_b, spec.n_b), (&key_filler, n_filler)] {
        if n > 0 {
            expected.n_c.insert(key.category, n);
            expected.n_v.insert(key.clone(), n);
        }
    }
    if spec.joint > 0 {
        expected.n_cc.insert((cat_lo, cat_hi), spec.joint);
        expected.n_vv.insert((ordered_a.clone(), ordered_b.clone()), spec.joint);
    }

    Ok(SynthOutput {
        corpus: corpus_for(1..=spec.n_incidents, spec.seed),
        extractions,
        expected,
    })
}

/// Hand-written extraction answers in a compact form: only present
/// markers are listed. Used for fixture corpora whose expected outputs are
/// counted by hand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CannedIncident {
    pub incident_id: u64,
    pub description: String,
    pub subjects: Vec<CannedSubject>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CannedSubject {
    pub name: String,
    #[serde(rename = "type")]
    pub subject_type: SubjectType,
    pub report_ids: Vec<u64>,
    #[serde(default)]
    pub markers: Vec<CannedMarker>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CannedMarker {
    pub category: IdentityCategory,
    pub marker: String,
    #[serde(default = "extracted")]
    pub marker_type: MarkerType,
    #[serde(default)]
    pub source: String,
    pub cq1: Answer,
    pub cq2: Answer,
    #[serde(default)]
    pub reasoning: String,
    /// Written only for causally relevant markers.
    #[serde(default)]
    pub harm: String,
}

fn extracted() -> MarkerType {
    MarkerType::Extracted
}

/// Expands canned answers into full extraction results.
pub fn canned_results(incidents: &[CannedIncident], model_name: &str) -> Vec<ExtractionResult> {
    incidents
        .iter()
        .map(|incident| {
            let subjects = incident
                .subjects
                .iter()
                .enumerate()
                .map(|(i, canned)| {
                    let mut s = HarmedSubject::blank(incident.incident_id, i + 1, &canned.name, canned.subject_type);
                    s.report_ids.extend(&canned.report_ids);
                    for m in &canned.markers {
                        let judgment = CounterfactualJudgment {
                            cq1_direct: m.cq1,
                            cq2_alternate: m.cq2,
                            reasoning: m.reasoning.clone(),
                        };
                        let record = s.set_marker(m.category, &m.marker, m.marker_type, judgment);
                        record.source = m.source.clone();
                        record.marker_harm = m.harm.clone();
                    }
                    s
                })
                .collect();
            let mut result = result_for(incident.incident_id, subjects);
            result.description = incident.description.clone();
            result.model_name = model_name.to_string();
            result.raw_response_hash = sha256_hex(render_response(&result).as_bytes());
            result
        })
        .collect()
}

/// Category vocabulary used by [`random_extractions`]. Each category mixes
/// values that group, values that group together, and values that fit no
/// group.
pub const RANDOM_VOCABULARY: &[(IdentityCategory, &[&str])] = &[
    (
        IdentityCategory::Gender,
        &["woman", "girls", "men", "boy", "nonbinary", "person"],
    ),
    (
        IdentityCategory::Class,
        &[
            "gig worker",
            "politician",
            "small business owner",
            "wealthy",
            "astronaut",
        ],
    ),
    (IdentityCategory::Race, &["Black", "White", "Asian", "mixed"]),
    (
        IdentityCategory::Age,
        &["teenager", "16-year-old", "adult", "elderly", "young"],
    ),
    (IdentityCategory::Nationality, &["US", "Argentine", "German"]),
    (
        IdentityCategory::PoliticalIdentity,
        &["right-wing", "Elite", "left-wing"],
    ),
    (IdentityCategory::Religion, &["Muslim", "Christian"]),
    (IdentityCategory::Language, &["Spanish"]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomSpec {
    pub max_incidents: usize,
    pub max_subjects: usize,
    /// Chance in percent that a given vocabulary category gets a marker.
    pub marker_percent: u32,
}

impl Default for RandomSpec {
    fn default() -> Self {
        Self {
            max_incidents: 50,
            max_subjects: 4,
            marker_percent: 35,
        }
    }
}

/// Random extraction set with 0..=`max_incidents` incidents, some subjects
/// without markers, and every CQ1/CQ2 combination.
pub fn random_extractions<R: Rng>(rng: &mut R, spec: &RandomSpec) -> Vec<ExtractionResult> {
    let n = rng.gen_range(0..=spec.max_incidents);
    let answers = [Answer::Yes, Answer::No];
    (1..=n as u64)
        .map(|incident_id| {
            let subject_count = rng.gen_range(0..=spec.max_subjects);
            let subjects = (1..=subject_count)
                .map(|ordinal| {
                    let mut s = HarmedSubject::blank(
                        incident_id,
                        ordinal,
                        &format!("Subject {ordinal}"),
                        SubjectType::Individual,
                    );
                    s.report_ids.insert(incident_id * 10 + 1);
                    for (category, values) in RANDOM_VOCABULARY {
                        if rng.gen_range(0..100) >= spec.marker_percent {
                            continue;
                        }
                        let value = values[rng.gen_range(0..values.len())];
                        let marker_type = if rng.gen_bool(0.5) {
                            MarkerType::Extracted
                        } else {
                            MarkerType::Inferred
                        };
                        // Weighted towards relevant markers so filters keep data.
                        let judgment = if rng.gen_bool(0.5) {
                            CounterfactualJudgment::new(Answer::Yes, Answer::No)
                        } else {
                            CounterfactualJudgment::new(answers[rng.gen_range(0..2)], answers[rng.gen_range(0..2)])
                        };
                        s.set_marker(*category, value, marker_type, judgment);
                    }
                    s
                })
                .collect();
            result_for(incident_id, subjects)
        })
        .collect()
}

/// Writes replay-cache entries so that running extraction over `corpus`
/// with the replay backend returns `extractions`.
pub fn write_replay_cache(
    corpus: &Corpus,
    extractions: &[ExtractionResult],
    cache_dir: &Path,
    model_name: &str,
) -> Result<usize, SynthCacheError> {
    let rubric = rubric_definition();
    let cache = ResponseCache::new(cache_dir, model_name, RUBRIC_VERSION);
    let by_id: BTreeMap<u64, &ExtractionResult> = extractions.iter().map(|r| (r.incident_id, r)).collect();
    let mut written = 0;
    for incident in &corpus.incidents {
        let Some(result) = by_id.get(&incident.incident_id) else {
            continue;
        };
        let request = build_prompt(incident, &rubric, &PromptOptions::default())?;
        cache.store(&CacheEntry {
            incident_id: incident.incident_id,
            model_name: model_name.to_string(),
            rubric_version: RUBRIC_VERSION.to_string(),
            prompt_hash: request.prompt_hash,
            chunk: None,
            decoding: DecodingParams::default(),
            superseded: Vec::new(),
            raw_response: render_response(result),
        })?;
        written += 1;
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthCacheError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Write(#[from] CacheWriteError),
}

/// Incident-scope causal counts from `extractions`; same as the metrics
/// module would compute, exposed for expected-table exports.
pub fn count(extractions: &[ExtractionResult], rules: &GroupingRules) -> CountTable {
    CountTable::from_results(extractions, rules, CountMode::Causal, PairScope::Incident)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::amplification_score;
    use crate::relevance::filter_relevant;

    fn spec(n: u64, n_a: u64, n_b: u64, joint: u64, noise: bool) -> SynthSpec {
        SynthSpec {
            seed: 7,
            n_incidents: n,
            value_a: PlantedValue::new(IdentityCategory::Nationality, "US"),
            value_b: PlantedValue::new(IdentityCategory::PoliticalIdentity, "right-wing"),
            n_a,
            n_b,
            joint,
            noise,
        }
    }

    #[test]
    fn planted_counts_are_recovered() {
        let rules = GroupingRules::bundled();
        for noise in [false, true] {
            let out = plant(&spec(100, 10, 20, 4, noise), &rules).unwrap();
            let filtered = filter_relevant(&out.extractions);
            assert_eq!(filtered.n_incidents, 100);
            let table = crate::metrics::build_count_table(&filtered, &rules, PairScope::Incident);
            assert_eq!(table, out.expected);
            let edge = amplification_score(
                &table,
                &ValueKey::new(IdentityCategory::Nationality, "us"),
                &ValueKey::new(IdentityCategory::PoliticalIdentity, "right-wing"),
                5,
            )
            .unwrap();
            assert_eq!(edge.score_fixed(3), "2.000");
        }
    }

    #[test]
    fn same_seed_same_output() {
        let rules = GroupingRules::bundled();
        let a = plant(&spec(60, 20, 15, 5, true), &rules).unwrap();
        let b = plant(&spec(60, 20, 15, 5, true), &rules).unwrap();
        assert_eq!(a, b);
        let mut other = spec(60, 20, 15, 5, true);
        other.seed = 8;
        assert_ne!(plant(&other, &rules).unwrap().extractions, a.extractions);
    }

    #[test]
    fn infeasible_plans_rejected() {
        let rules = GroupingRules::bundled();
        assert!(plant(&spec(10, 5, 5, 6, false), &rules).is_err());
        assert!(plant(&spec(10, 8, 8, 2, false), &rules).is_err());
        let mut s = spec(10, 1, 1, 0, false);
        s.value_a = PlantedValue::new(IdentityCategory::Class, "astronaut");
        assert!(matches!(plant(&s, &rules), Err(SynthError::Unmapped { .. })));
    }

    #[test]
    fn random_sets_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            for r in random_extractions(&mut rng, &RandomSpec::default()) {
                for s in &r.subjects {
                    assert_eq!(s.markers.len(), 26);
                    assert!(s.markers.values().all(|m| m.check().is_ok()));
                }
            }
        }
    }

    #[test]
    fn replay_cache_round_trip() {
        let rules = GroupingRules::bundled();
        let out = plant(&spec(12, 4, 5, 2, true), &rules).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        assert_eq!(
            write_replay_cache(&out.corpus, &out.extractions, tmp.path(), SYNTH_MODEL).unwrap(),
            12
        );
        let config = crate::extraction::BackendConfig::replay(SYNTH_MODEL, tmp.path());
        let run = crate::extraction::run_extraction(&out.corpus, &config, &Default::default()).unwrap();
        assert_eq!(run.results, out.extractions);
    }
}
