//! Inter-rater agreement and accuracy against gold annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::extraction::{ExtractionResult, HarmedSubject, MarkerType, NOT_MENTIONED};
use crate::metrics::Share;
use crate::names;
use crate::rubric::{Answer, CounterfactualJudgment, IdentityCategory, SubjectType};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgreementError {
    #[error("label vectors share no item ids")]
    MisalignedVectors,
    #[error("item id {0:?} appears twice in one vector")]
    DuplicateItem(String),
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("label {0:?} is not Yes or No")]
    NonBinaryLabels(String),
    #[error("gold file line {line}: {message}")]
    GoldFormatError { line: u64, message: String },
    #[error("gold annotations and model output share no incidents")]
    NoOverlap,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelVector {
    items: Vec<(String, String)>,
}

impl LabelVector {
    pub fn new<I, S, T>(items: I) -> Result<Self, AgreementError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let items: Vec<(String, String)> = items.into_iter().map(|(i, l)| (i.into(), l.into())).collect();
        let mut seen = BTreeSet::new();
        for (id, _) in &items {
            if !seen.insert(id) {
                return Err(AgreementError::DuplicateItem(id.clone()));
            }
        }
        Ok(Self { items })
    }

    /// Items labelled in order, with ids `0..n`.
    pub fn from_labels<T: Into<String>>(labels: impl IntoIterator<Item = T>) -> Self {
        Self {
            items: labels
                .into_iter()
                .enumerate()
                .map(|(i, l)| (i.to_string(), l.into()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[(String, String)] {
        &self.items
    }
}

/// Label pairs on the shared item ids, plus ids only one side labelled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub pairs: Vec<(String, String)>,
    pub only_a: Vec<String>,
    pub only_b: Vec<String>,
}

pub fn align(a: &LabelVector, b: &LabelVector) -> Result<Alignment, AgreementError> {
    let b_map: BTreeMap<&str, &str> = b.items.iter().map(|(i, l)| (i.as_str(), l.as_str())).collect();
    let a_ids: BTreeSet<&str> = a.items.iter().map(|(i, _)| i.as_str()).collect();
    let pairs: Vec<(String, String)> = a
        .items
        .iter()
        .filter_map(|(id, la)| b_map.get(id.as_str()).map(|lb| (la.clone(), lb.to_string())))
        .collect();
    if pairs.is_empty() {
        return Err(AgreementError::MisalignedVectors);
    }
    Ok(Alignment {
        only_a: a
            .items
            .iter()
            .filter(|(i, _)| !b_map.contains_key(i.as_str()))
            .map(|(i, _)| i.clone())
            .collect(),
        only_b: b
            .items
            .iter()
            .filter(|(i, _)| !a_ids.contains(i.as_str()))
            .map(|(i, _)| i.clone())
            .collect(),
        pairs,
    })
}

pub fn percent_agreement(a: &LabelVector, b: &LabelVector) -> Result<Share, AgreementError> {
    let aligned = align(a, b)?;
    Ok(Share {
        count: aligned.pairs.iter().filter(|(x, y)| x == y).count() as u64,
        total: aligned.pairs.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub n_items: u64,
    pub agreements: u64,
    pub p_o: f64,
    pub p_e: f64,
    /// Absent when chance agreement is 1 and kappa is undefined.
    pub kappa: Option<f64>,
    /// Present only for Yes/No labels.
    pub pabak: Option<f64>,
    pub only_a: usize,
    pub only_b: usize,
}

fn to_f64(r: Ratio<i128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Exact observed agreement, chance agreement and kappa.
pub fn kappa_exact(aligned: &Alignment) -> (Ratio<i128>, Ratio<i128>, Option<Ratio<i128>>) {
    let n = aligned.pairs.len() as i128;
    let agree = aligned.pairs.iter().filter(|(x, y)| x == y).count() as i128;
    let mut marg_a: BTreeMap<&str, i128> = BTreeMap::new();
    let mut marg_b: BTreeMap<&str, i128> = BTreeMap::new();
    for (x, y) in &aligned.pairs {
        *marg_a.entry(x).or_default() += 1;
        *marg_b.entry(y).or_default() += 1;
    }
    let chance: i128 = marg_a
        .iter()
        .map(|(label, ca)| ca * marg_b.get(label).copied().unwrap_or(0))
        .sum();
    let p_o = Ratio::new(agree, n);
    let p_e = Ratio::new(chance, n * n);
    let one = Ratio::from_integer(1);
    let kappa = (p_e != one).then(|| (p_o - p_e) / (one - p_e));
    (p_o, p_e, kappa)
}

fn binary(label: &str) -> Result<Answer, AgreementError> {
    Answer::parse(label).ok_or_else(|| AgreementError::NonBinaryLabels(label.to_string()))
}

fn stats(aligned: &Alignment) -> AgreementStats {
    let (p_o, p_e, kappa) = kappa_exact(aligned);
    let is_binary = aligned
        .pairs
        .iter()
        .all(|(x, y)| binary(x).is_ok() && binary(y).is_ok());
    let two = Ratio::from_integer(2);
    AgreementStats {
        n_items: aligned.pairs.len() as u64,
        agreements: aligned.pairs.iter().filter(|(x, y)| x == y).count() as u64,
        p_o: to_f64(p_o),
        p_e: to_f64(p_e),
        kappa: kappa.map(to_f64),
        pabak: is_binary.then(|| to_f64(two * p_o - Ratio::from_integer(1))),
        only_a: aligned.only_a.len(),
        only_b: aligned.only_b.len(),
    }
}

pub fn cohen_kappa(a: &LabelVector, b: &LabelVector) -> Result<AgreementStats, AgreementError> {
    let aligned = align(a, b)?;
    if aligned.pairs.len() < 2 {
        return Err(AgreementError::TooFewItems(aligned.pairs.len()));
    }
    Ok(stats(&aligned))
}

/// Prevalence- and bias-adjusted kappa, `2 p_o - 1`, for Yes/No labels.
pub fn pabak(a: &LabelVector, b: &LabelVector) -> Result<AgreementStats, AgreementError> {
    let mut aligned = align(a, b)?;
    for (x, y) in aligned.pairs.iter_mut() {
        *x = binary(x)?.as_str().to_string();
        *y = binary(y)?.as_str().to_string();
    }
    Ok(stats(&aligned))
}

/// One row of the gold annotation file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRow {
    pub report_id: u64,
    pub subject_name: String,
    pub subject_type: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub marker: String,
    #[serde(default)]
    pub cq1: String,
    #[serde(default)]
    pub cq2: String,
}

const GOLD_COLUMNS: [&str; 7] = [
    "report_id",
    "subject_name",
    "subject_type",
    "category",
    "marker",
    "cq1",
    "cq2",
];

pub fn parse_gold(text: &str) -> Result<Vec<GoldRow>, AgreementError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| AgreementError::GoldFormatError {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    for column in GOLD_COLUMNS {
        if !headers.iter().any(|h| h == column) {
            return Err(AgreementError::GoldFormatError {
                line: 1,
                message: format!("missing column {column}"),
            });
        }
    }
    let mut rows = Vec::new();
    for record in reader.deserialize::<GoldRow>() {
        let row = record.map_err(|e| AgreementError::GoldFormatError {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldRow>, AgreementError> {
    let text = std::fs::read_to_string(path).map_err(|e| AgreementError::GoldFormatError {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    parse_gold(&text)
}

/// Groups gold rows into per-incident subject records, resolving each
/// report to its incident through `corpus`. Subjects are keyed by folded
/// name within an incident.
pub fn gold_to_results(rows: &[GoldRow], corpus: &Corpus) -> Result<Vec<ExtractionResult>, AgreementError> {
    let index = corpus.report_index();
    let mut incidents: BTreeMap<u64, Vec<HarmedSubject>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        let line = i as u64 + 2;
        let bad = |message: String| AgreementError::GoldFormatError { line, message };
        let incident_id = *index
            .get(&row.report_id)
            .ok_or_else(|| bad(format!("report {} is not in the corpus", row.report_id)))?;
        let subject_type = SubjectType::parse(&row.subject_type)
            .ok_or_else(|| bad(format!("bad subject_type {:?}", row.subject_type)))?;
        if row.subject_name.trim().is_empty() {
            return Err(bad("empty subject_name".into()));
        }
        let subjects = incidents.entry(incident_id).or_default();
        let key = names::fold(&row.subject_name);
        let pos = match subjects.iter().position(|s| names::fold(&s.name) == key) {
            Some(p) => p,
            None => {
                subjects.push(HarmedSubject::blank(
                    incident_id,
                    subjects.len() + 1,
                    row.subject_name.trim(),
                    subject_type,
                ));
                subjects.len() - 1
            }
        };
        let subject = &mut subjects[pos];
        subject.report_ids.insert(row.report_id);
        let marker = row.marker.trim();
        if row.category.trim().is_empty() || marker.is_empty() || marker.eq_ignore_ascii_case(NOT_MENTIONED) {
            continue;
        }
        let category = IdentityCategory::parse(&row.category)
            .ok_or_else(|| bad(format!("unknown category {:?}", row.category)))?;
        let answer = |v: &str| Answer::parse(v).ok_or_else(|| bad(format!("bad answer {v:?}")));
        let judgment = CounterfactualJudgment::new(answer(&row.cq1)?, answer(&row.cq2)?);
        subject.set_marker(category, marker, MarkerType::Extracted, judgment);
    }
    Ok(incidents
        .into_iter()
        .map(|(incident_id, subjects)| ExtractionResult {
            incident_id,
            description: String::new(),
            subjects,
            raw_response_hash: String::new(),
            model_name: "gold".into(),
            rubric_version: String::new(),
            prompt_chunks: 1,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    SubjectIdentification,
    CategoryValues,
    CausalRelevance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyOptions {
    /// Count cells where both sides say "Not mentioned" as matches.
    pub count_none_matches: bool,
}

impl Default for AccuracyOptions {
    fn default() -> Self {
        Self {
            count_none_matches: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetAccuracy {
    pub facet: Facet,
    pub accuracy: Share,
    /// Disagreements over compared cells, per category. Empty for subject
    /// identification.
    pub per_category: Vec<(IdentityCategory, Share)>,
    /// Agreement statistics over the compared labels, when at least two.
    pub stats: Option<AgreementStats>,
    /// Subjects with no counterpart, as `<incident>: <name>`.
    pub unmatched_model: Vec<String>,
    pub unmatched_gold: Vec<String>,
}

impl FacetAccuracy {
    pub fn max_misattribution(&self) -> Option<(IdentityCategory, Share)> {
        self.per_category
            .iter()
            .filter(|(_, s)| s.total > 0)
            .max_by(|(ca, a), (cb, b)| a.ratio().cmp(&b.ratio()).then_with(|| cb.cmp(ca)))
            .copied()
    }
}

struct Matching<'a> {
    pairs: Vec<(&'a HarmedSubject, &'a HarmedSubject)>,
    unmatched_model: Vec<String>,
    unmatched_gold: Vec<String>,
}

fn match_subjects<'a>(
    model: &'a [ExtractionResult],
    gold: &'a [ExtractionResult],
) -> Result<Matching<'a>, AgreementError> {
    let model_by_id: BTreeMap<u64, &ExtractionResult> = model.iter().map(|r| (r.incident_id, r)).collect();
    let mut matching = Matching {
        pairs: Vec::new(),
        unmatched_model: Vec::new(),
        unmatched_gold: Vec::new(),
    };
    let mut overlap = false;
    for g in gold {
        let Some(m) = model_by_id.get(&g.incident_id) else {
            continue;
        };
        overlap = true;
        let mut used = vec![false; m.subjects.len()];
        for gs in &g.subjects {
            let key = names::fold(&gs.name);
            let found = m
                .subjects
                .iter()
                .enumerate()
                .find(|(i, ms)| !used[*i] && names::fold(&ms.name) == key);
            match found {
                Some((i, ms)) => {
                    used[i] = true;
                    matching.pairs.push((ms, gs));
                }
                None => matching.unmatched_gold.push(format!("{}: {}", g.incident_id, gs.name)),
            }
        }
        for (i, ms) in m.subjects.iter().enumerate() {
            if !used[i] {
                matching.unmatched_model.push(format!("{}: {}", m.incident_id, ms.name));
            }
        }
    }
    if !overlap {
        return Err(AgreementError::NoOverlap);
    }
    Ok(matching)
}

fn value_label(subject: &HarmedSubject, category: IdentityCategory) -> String {
    match &subject.marker(category).marker {
        Some(v) => names::fold(v),
        None => "none".to_string(),
    }
}

fn relevance_label(subject: &HarmedSubject, category: IdentityCategory) -> &'static str {
    if subject.marker(category).is_causally_relevant() {
        "Yes"
    } else {
        "No"
    }
}

/// Compares model output with gold annotations on one facet. Only incidents
/// present in both are considered.
pub fn accuracy_vs_gold(
    model: &[ExtractionResult],
    gold: &[ExtractionResult],
    facet: Facet,
    options: &AccuracyOptions,
) -> Result<FacetAccuracy, AgreementError> {
    let matching = match_subjects(model, gold)?;
    let mut out = FacetAccuracy {
        facet,
        accuracy: Share { count: 0, total: 0 },
        per_category: Vec::new(),
        stats: None,
        unmatched_model: matching.unmatched_model,
        unmatched_gold: matching.unmatched_gold,
    };
    if facet == Facet::SubjectIdentification {
        let matched = matching.pairs.len() as u64;
        out.accuracy = Share {
            count: matched,
            total: matched + out.unmatched_model.len() as u64 + out.unmatched_gold.len() as u64,
        };
        return Ok(out);
    }

    let mut items_model = Vec::new();
    let mut items_gold = Vec::new();
    let mut per_category: BTreeMap<IdentityCategory, Share> = IdentityCategory::ALL
        .into_iter()
        .map(|c| (c, Share { count: 0, total: 0 }))
        .collect();
    for (ms, gs) in &matching.pairs {
        for category in IdentityCategory::ALL {
            let (m_present, g_present) = (ms.marker(category).is_present(), gs.marker(category).is_present());
            let (lm, lg) = match facet {
                Facet::CategoryValues => {
                    if !options.count_none_matches && !m_present && !g_present {
                        continue;
                    }
                    (value_label(ms, category), value_label(gs, category))
                }
                Facet::CausalRelevance => {
                    if !m_present && !g_present {
                        continue;
                    }
                    (
                        relevance_label(ms, category).to_string(),
                        relevance_label(gs, category).to_string(),
                    )
                }
                Facet::SubjectIdentification => unreachable!(),
            };
            let cell = per_category.get_mut(&category).expect("known category");
            cell.total += 1;
            if lm != lg {
                cell.count += 1;
            }
            let id = format!("{}|{}|{}", gs.incident_id, names::fold(&gs.name), category.number());
            items_model.push((id.clone(), lm));
            items_gold.push((id, lg));
        }
    }
    let total: u64 = per_category.values().map(|s| s.total).sum();
    let wrong: u64 = per_category.values().map(|s| s.count).sum();
    out.accuracy = Share {
        count: total - wrong,
        total,
    };
    out.per_category = per_category.into_iter().collect();
    if items_model.len() >= 2 {
        let a = LabelVector::new(items_model)?;
        let b = LabelVector::new(items_gold)?;
        out.stats = Some(cohen_kappa(&a, &b)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub subject_identification: FacetAccuracy,
    pub category_values: FacetAccuracy,
    pub causal_relevance: FacetAccuracy,
}

pub fn validate_against_gold(
    model: &[ExtractionResult],
    gold: &[ExtractionResult],
    options: &AccuracyOptions,
) -> Result<ValidationReport, AgreementError> {
    Ok(ValidationReport {
        subject_identification: accuracy_vs_gold(model, gold, Facet::SubjectIdentification, options)?,
        category_values: accuracy_vs_gold(model, gold, Facet::CategoryValues, options)?,
        causal_relevance: accuracy_vs_gold(model, gold, Facet::CausalRelevance, options)?,
    })
}
