//! Incident-level prevalence, intersection and amplification metrics.
//!
//! Every count is the number of incidents in which something holds, so a
//! value carried by several subjects of one incident still counts once.
//! Counts stay integral; ratios are exact rationals and only become `f64`
//! at the edge.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::extraction::{ExtractionResult, HarmedSubject, MarkerRecord};
use crate::normalization::GroupingRules;
use crate::relevance::FilteredCorpus;
use crate::rubric::IdentityCategory;

pub const DEFAULT_MIN_SUPPORT: u64 = 5;
pub const DEFAULT_TOP_CATEGORIES: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no incidents to compute metrics over")]
    EmptyCorpus,
    #[error("both arguments are in category {0}")]
    SameCategory(IdentityCategory),
    #[error("{0} never occurs, so the expected count is undefined")]
    ZeroMarginal(ValueKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    /// Markers that passed the relevance filter.
    Causal,
    /// Every present marker, before filtering.
    Overall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairScope {
    /// Both categories relevant somewhere in the incident.
    #[default]
    Incident,
    /// Both categories relevant on one subject.
    SameSubject,
}

/// A grouped identity value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ValueKey {
    pub category: IdentityCategory,
    pub value: String,
}

impl ValueKey {
    pub fn new(category: IdentityCategory, value: &str) -> Self {
        Self {
            category,
            value: value.to_string(),
        }
    }
}

impl fmt::Display for ValueKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.category, self.value)
    }
}

fn ordered<T: Ord>(a: T, b: T) -> (T, T) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    pub n_incidents: u64,
    pub n_c: BTreeMap<IdentityCategory, u64>,
    pub n_v: BTreeMap<ValueKey, u64>,
    /// Keys are ordered pairs with the smaller category first.
    pub n_cc: BTreeMap<(IdentityCategory, IdentityCategory), u64>,
    /// Keys are ordered pairs with the smaller value first.
    pub n_vv: BTreeMap<(ValueKey, ValueKey), u64>,
    pub mode: CountMode,
    pub scope: PairScope,
}

/// Per-subject view: counted categories and their grouped values.
struct SubjectMarks {
    categories: BTreeSet<IdentityCategory>,
    values: BTreeSet<ValueKey>,
}

fn counted(record: &MarkerRecord, mode: CountMode) -> bool {
    match mode {
        CountMode::Causal => record.is_causally_relevant(),
        CountMode::Overall => record.is_present(),
    }
}

fn marks(subject: &HarmedSubject, rules: &GroupingRules, mode: CountMode) -> SubjectMarks {
    let mut out = SubjectMarks {
        categories: BTreeSet::new(),
        values: BTreeSet::new(),
    };
    for record in subject.markers.values().filter(|r| counted(r, mode)) {
        out.categories.insert(record.category);
        let Some(raw) = record.marker.as_deref() else { continue };
        // Values that fit no group still count towards their category.
        if let Ok(g) = rules.group_value(record.category, raw) {
            if g.is_mapped() {
                out.values.insert(ValueKey::new(record.category, &g.grouped));
            }
        }
    }
    out
}

fn pairs<T: Ord + Clone>(items: &BTreeSet<T>, distinct: impl Fn(&T, &T) -> bool) -> Vec<(T, T)> {
    let items: Vec<&T> = items.iter().collect();
    let mut out = Vec::new();
    for (i, a) in items.iter().enumerate() {
        for b in &items[i + 1..] {
            if distinct(a, b) {
                out.push(((*a).clone(), (*b).clone()));
            }
        }
    }
    out
}

impl CountTable {
    /// Counts over `results`, one incident per element.
    pub fn from_results(
        results: &[ExtractionResult],
        rules: &GroupingRules,
        mode: CountMode,
        scope: PairScope,
    ) -> Self {
        let mut table = Self {
            n_incidents: results.len() as u64,
            n_c: BTreeMap::new(),
            n_v: BTreeMap::new(),
            n_cc: BTreeMap::new(),
            n_vv: BTreeMap::new(),
            mode,
            scope,
        };
        for result in results {
            let subjects: Vec<SubjectMarks> = result.subjects.iter().map(|s| marks(s, rules, mode)).collect();
            let categories: BTreeSet<_> = subjects.iter().flat_map(|s| s.categories.iter().copied()).collect();
            let values: BTreeSet<_> = subjects.iter().flat_map(|s| s.values.iter().cloned()).collect();
            let (cat_pairs, value_pairs): (BTreeSet<_>, BTreeSet<_>) = match scope {
                PairScope::Incident => (
                    pairs(&categories, |_, _| true).into_iter().collect(),
                    pairs(&values, |a, b| a.category != b.category).into_iter().collect(),
                ),
                PairScope::SameSubject => (
                    subjects
                        .iter()
                        .flat_map(|s| pairs(&s.categories, |_, _| true))
                        .collect(),
                    subjects
                        .iter()
                        .flat_map(|s| pairs(&s.values, |a, b| a.category != b.category))
                        .collect(),
                ),
            };
            for c in categories {
                *table.n_c.entry(c).or_default() += 1;
            }
            for v in values {
                *table.n_v.entry(v).or_default() += 1;
            }
            for p in cat_pairs {
                *table.n_cc.entry(p).or_default() += 1;
            }
            for p in value_pairs {
                *table.n_vv.entry(p).or_default() += 1;
            }
        }
        table
    }

    pub fn category_count(&self, c: IdentityCategory) -> u64 {
        self.n_c.get(&c).copied().unwrap_or(0)
    }

    pub fn value_count(&self, v: &ValueKey) -> u64 {
        self.n_v.get(v).copied().unwrap_or(0)
    }

    pub fn pair_count(&self, a: IdentityCategory, b: IdentityCategory) -> u64 {
        self.n_cc.get(&ordered(a, b)).copied().unwrap_or(0)
    }

    pub fn value_pair_count(&self, a: &ValueKey, b: &ValueKey) -> u64 {
        let key = ordered(a.clone(), b.clone());
        self.n_vv.get(&key).copied().unwrap_or(0)
    }

    /// Categories with at least one incident, most prevalent first; ties keep
    /// rubric order.
    pub fn ranked_categories(&self) -> Vec<IdentityCategory> {
        let mut cats: Vec<_> = IdentityCategory::ALL
            .into_iter()
            .filter(|c| self.category_count(*c) > 0)
            .collect();
        cats.sort_by_key(|c| std::cmp::Reverse(self.category_count(*c)));
        cats
    }

    /// Grouped values of `category`, most prevalent first, ties by name.
    pub fn ranked_values(&self, category: IdentityCategory) -> Vec<ValueKey> {
        let mut values: Vec<_> = self.n_v.keys().filter(|v| v.category == category).cloned().collect();
        values.sort_by(|a, b| self.value_count(b).cmp(&self.value_count(a)).then_with(|| a.cmp(b)));
        values
    }

    /// Plain JSON dump of every count, in key order.
    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::{json, Map, Value};
        let value = |v: &ValueKey| json!({ "category": v.category, "value": v.value });
        let n_c: Map<String, Value> = self.n_c.iter().map(|(c, n)| (c.name().to_string(), json!(n))).collect();
        json!({
            "mode": self.mode,
            "scope": self.scope,
            "N": self.n_incidents,
            "n_c": n_c,
            "n_v": self.n_v.iter().map(|(v, n)| {
                let mut entry = value(v);
                entry["incidents"] = json!(n);
                entry
            }).collect::<Vec<_>>(),
            "n_cc": self.n_cc.iter().map(|((a, b), n)| {
                json!({ "category_a": a, "category_b": b, "incidents": n })
            }).collect::<Vec<_>>(),
            "n_vv": self.n_vv.iter().map(|((a, b), n)| {
                json!({ "value_a": value(a), "value_b": value(b), "incidents": n })
            }).collect::<Vec<_>>(),
        })
    }
}

/// Causal counts over a filtered corpus.
pub fn build_count_table(corpus: &FilteredCorpus, rules: &GroupingRules, scope: PairScope) -> CountTable {
    CountTable::from_results(&corpus.incidents, rules, CountMode::Causal, scope)
}

/// Overall counts: every present marker before filtering, restricted to
/// the incidents the filter retained.
pub fn build_overall_table(
    corpus: &FilteredCorpus,
    before: &[ExtractionResult],
    rules: &GroupingRules,
    scope: PairScope,
) -> CountTable {
    let kept: BTreeSet<u64> = corpus.incidents.iter().map(|r| r.incident_id).collect();
    let retained: Vec<ExtractionResult> = before
        .iter()
        .filter(|r| kept.contains(&r.incident_id))
        .cloned()
        .collect();
    CountTable::from_results(&retained, rules, CountMode::Overall, scope)
}

/// `num / den` rounded half up to `decimals` places, computed exactly.
pub fn round_half_up(num: u128, den: u128, decimals: u32) -> String {
    assert!(den > 0, "zero denominator");
    let scale = 10u128.pow(decimals);
    let scaled = (2 * num * scale + den) / (2 * den);
    if decimals == 0 {
        return scaled.to_string();
    }
    format!(
        "{}.{:0width$}",
        scaled / scale,
        scaled % scale,
        width = decimals as usize
    )
}

/// A count out of a total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Share {
    pub count: u64,
    pub total: u64,
}

impl Share {
    pub fn ratio(&self) -> Ratio<u64> {
        Ratio::new(self.count, self.total)
    }

    /// Nearest double; exact division of two integers below 2^53.
    pub fn value(&self) -> f64 {
        self.count as f64 / self.total as f64
    }

    pub fn fixed(&self, decimals: u32) -> String {
        round_half_up(self.count.into(), self.total.into(), decimals)
    }

    /// Percentage rounded to `decimals` places, without the sign.
    pub fn percent(&self, decimals: u32) -> String {
        round_half_up(u128::from(self.count) * 100, self.total.into(), decimals)
    }
}

fn share(table: &CountTable, count: u64) -> Result<Share, MetricsError> {
    if table.n_incidents == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(Share {
        count,
        total: table.n_incidents,
    })
}

pub fn category_prevalence(table: &CountTable, c: IdentityCategory) -> Result<Share, MetricsError> {
    share(table, table.category_count(c))
}

pub fn value_prevalence(table: &CountTable, v: &ValueKey) -> Result<Share, MetricsError> {
    share(table, table.value_count(v))
}

pub fn intersectional_score(
    table: &CountTable,
    c1: IdentityCategory,
    c2: IdentityCategory,
) -> Result<Share, MetricsError> {
    if c1 == c2 {
        return Err(MetricsError::SameCategory(c1));
    }
    share(table, table.pair_count(c1, c2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplificationEdge {
    pub value_a: ValueKey,
    pub value_b: ValueKey,
    pub observed: u64,
    pub n_a: u64,
    pub n_b: u64,
    pub n_total: u64,
    /// `n_a * n_b / n_total`
    pub expected: f64,
    /// `observed / expected`
    pub score: f64,
    pub support_ok: bool,
}

impl AmplificationEdge {
    pub fn expected_ratio(&self) -> Ratio<u64> {
        Ratio::new(self.n_a * self.n_b, self.n_total)
    }

    pub fn score_ratio(&self) -> Ratio<u64> {
        Ratio::new(self.observed * self.n_total, self.n_a * self.n_b)
    }

    pub fn score_fixed(&self, decimals: u32) -> String {
        round_half_up(
            u128::from(self.observed) * u128::from(self.n_total),
            u128::from(self.n_a) * u128::from(self.n_b),
            decimals,
        )
    }

    pub fn expected_fixed(&self, decimals: u32) -> String {
        round_half_up(
            u128::from(self.n_a) * u128::from(self.n_b),
            self.n_total.into(),
            decimals,
        )
    }

    /// Exact comparison of scores.
    fn cmp_score(&self, other: &Self) -> Ordering {
        let lhs = u128::from(self.observed) * u128::from(self.n_total) * u128::from(other.n_a) * u128::from(other.n_b);
        let rhs = u128::from(other.observed) * u128::from(other.n_total) * u128::from(self.n_a) * u128::from(self.n_b);
        lhs.cmp(&rhs)
    }
}

pub fn amplification_score(
    table: &CountTable,
    v1: &ValueKey,
    v2: &ValueKey,
    min_support: u64,
) -> Result<AmplificationEdge, MetricsError> {
    if v1.category == v2.category {
        return Err(MetricsError::SameCategory(v1.category));
    }
    if table.n_incidents == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    let (a, b) = ordered(v1.clone(), v2.clone());
    let n_a = table.value_count(&a);
    let n_b = table.value_count(&b);
    for (v, n) in [(&a, n_a), (&b, n_b)] {
        if n == 0 {
            return Err(MetricsError::ZeroMarginal(v.clone()));
        }
    }
    let observed = table.value_pair_count(&a, &b);
    let n_total = table.n_incidents;
    let (num, den) = (observed as f64 * n_total as f64, n_a as f64 * n_b as f64);
    Ok(AmplificationEdge {
        value_a: a,
        value_b: b,
        observed,
        n_a,
        n_b,
        n_total,
        expected: (n_a as f64 * n_b as f64) / n_total as f64,
        score: num / den,
        support_ok: observed >= min_support,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOptions {
    pub min_support: u64,
    /// Restricts the matrix and the value universe to this many of the most
    /// prevalent categories; `None` uses every category that occurs.
    pub top_categories: Option<usize>,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            min_support: DEFAULT_MIN_SUPPORT,
            top_categories: Some(DEFAULT_TOP_CATEGORIES),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCell {
    pub row: IdentityCategory,
    pub column: IdentityCategory,
    /// On the diagonal, the category's own incident count.
    pub share: Share,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAnalysis {
    pub categories: Vec<IdentityCategory>,
    /// Row-major, `categories.len()` squared cells.
    pub matrix: Vec<PairCell>,
    /// Value pairs that co-occur at least once, strongest first.
    pub edges: Vec<AmplificationEdge>,
}

impl PairAnalysis {
    pub fn cell(&self, row: IdentityCategory, column: IdentityCategory) -> Option<&PairCell> {
        self.matrix.iter().find(|c| c.row == row && c.column == column)
    }
}

pub fn all_pairs(table: &CountTable, options: &PairOptions) -> Result<PairAnalysis, MetricsError> {
    if table.n_incidents == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut categories = table.ranked_categories();
    if let Some(k) = options.top_categories {
        categories.truncate(k);
    }
    let mut matrix = Vec::with_capacity(categories.len() * categories.len());
    for &row in &categories {
        for &column in &categories {
            let count = if row == column {
                table.category_count(row)
            } else {
                table.pair_count(row, column)
            };
            matrix.push(PairCell {
                row,
                column,
                share: share(table, count)?,
            });
        }
    }
    let selected: BTreeSet<_> = categories.iter().copied().collect();
    let mut edges = Vec::new();
    for ((a, b), &observed) in &table.n_vv {
        if observed == 0 || !selected.contains(&a.category) || !selected.contains(&b.category) {
            continue;
        }
        edges.push(amplification_score(table, a, b, options.min_support)?);
    }
    edges.sort_by(|x, y| {
        y.cmp_score(x)
            .then_with(|| x.value_a.cmp(&y.value_a))
            .then_with(|| x.value_b.cmp(&y.value_b))
    });
    Ok(PairAnalysis {
        categories,
        matrix,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::MarkerType;
    use crate::rubric::{Answer, CounterfactualJudgment, SubjectType};
    use IdentityCategory as C;

    fn incident(id: u64, subjects: &[&[(IdentityCategory, &str)]]) -> ExtractionResult {
        ExtractionResult {
            incident_id: id,
            description: String::new(),
            subjects: subjects
                .iter()
                .enumerate()
                .map(|(i, markers)| {
                    let mut s = HarmedSubject::blank(id, i + 1, "x", SubjectType::Individual);
                    for (c, v) in *markers {
                        s.set_marker(
                            *c,
                            v,
                            MarkerType::Extracted,
                            CounterfactualJudgment::new(Answer::Yes, Answer::No),
                        );
                    }
                    s
                })
                .collect(),
            raw_response_hash: String::new(),
            model_name: String::new(),
            rubric_version: String::new(),
            prompt_chunks: 1,
        }
    }

    fn table(results: &[ExtractionResult], scope: PairScope) -> CountTable {
        CountTable::from_results(results, &GroupingRules::bundled(), CountMode::Causal, scope)
    }

    #[test]
    fn once_per_incident() {
        let t = table(
            &[incident(1, &[&[(C::Gender, "woman")], &[(C::Gender, "girls")]])],
            PairScope::Incident,
        );
        assert_eq!(t.value_count(&ValueKey::new(C::Gender, "Female")), 1);
        assert_eq!(t.category_count(C::Gender), 1);
    }

    #[test]
    fn scopes_differ_across_subjects() {
        let results = [incident(1, &[&[(C::Gender, "woman")], &[(C::Class, "politician")]])];
        let wide = table(&results, PairScope::Incident);
        let narrow = table(&results, PairScope::SameSubject);
        assert_eq!(wide.pair_count(C::Class, C::Gender), 1);
        assert_eq!(wide.pair_count(C::Gender, C::Class), 1);
        assert_eq!(narrow.pair_count(C::Gender, C::Class), 0);
        let (f, u) = (ValueKey::new(C::Gender, "Female"), ValueKey::new(C::Class, "Upper"));
        assert_eq!(wide.value_pair_count(&u, &f), 1);
        assert_eq!(narrow.value_pair_count(&f, &u), 0);
    }

    #[test]
    fn unmapped_values_count_only_for_the_category() {
        let t = table(&[incident(1, &[&[(C::Class, "astronaut")]])], PairScope::Incident);
        assert_eq!(t.category_count(C::Class), 1);
        assert!(t.n_v.is_empty());
    }

    #[test]
    fn prevalence_errors() {
        let t = table(&[], PairScope::Incident);
        assert_eq!(category_prevalence(&t, C::Age), Err(MetricsError::EmptyCorpus));
        let t = table(&[incident(1, &[&[(C::Age, "49")]])], PairScope::Incident);
        assert_eq!(category_prevalence(&t, C::Caste).unwrap().value(), 0.0);
        assert_eq!(
            intersectional_score(&t, C::Age, C::Age),
            Err(MetricsError::SameCategory(C::Age))
        );
        let missing = ValueKey::new(C::Race, "White");
        assert_eq!(
            amplification_score(&t, &ValueKey::new(C::Age, "Adults (25-59)"), &missing, 5),
            Err(MetricsError::ZeroMarginal(missing))
        );
    }

    #[test]
    fn rounding() {
        assert_eq!(round_half_up(83, 711, 3), "0.117");
        assert_eq!(round_half_up(8300, 711, 1), "11.7");
        assert_eq!(round_half_up(1, 8, 2), "0.13");
        assert_eq!(round_half_up(5, 2, 0), "3");
        assert_eq!(Share { count: 3, total: 5 }.percent(1), "60.0");
    }

    #[test]
    fn edges_sorted_and_flagged() {
        let results = [
            incident(1, &[&[(C::Gender, "woman"), (C::Class, "politician")]]),
            incident(2, &[&[(C::Gender, "woman"), (C::Class, "gig worker")]]),
            incident(3, &[&[(C::Gender, "man"), (C::Class, "gig worker")]]),
        ];
        let t = table(&results, PairScope::Incident);
        let analysis = all_pairs(
            &t,
            &PairOptions {
                min_support: 2,
                top_categories: None,
            },
        )
        .unwrap();
        let scores: Vec<String> = analysis.edges.iter().map(|e| e.score_fixed(3)).collect();
        assert_eq!(scores, vec!["1.500", "1.500", "0.750"]);
        assert!(analysis.edges.iter().all(|e| !e.support_ok));
        assert_eq!(analysis.categories, vec![C::Gender, C::Class]);
        assert_eq!(analysis.cell(C::Class, C::Gender).unwrap().share.count, 3);
        assert_eq!(analysis.cell(C::Class, C::Class).unwrap().share.count, 3);
    }
}
