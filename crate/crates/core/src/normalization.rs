//! Grouping of raw marker values into analysis buckets.
//!
//! Race, gender, class and age have explicit grouping rules; the other 22
//! categories pass through lower-cased and whitespace-collapsed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::names;
use crate::rubric::IdentityCategory;

pub const BUNDLED_RULES: &str = include_str!("../assets/grouping_rules.json");

#[derive(Debug, thiserror::Error)]
pub enum NormalizationError {
    #[error("empty marker value for {0}")]
    EmptyValue(IdentityCategory),
    #[error("malformed grouping rules: {0}")]
    MalformedRules(String),
    #[error("failed to read grouping rules {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RaceGroup {
    #[serde(alias = "people of color", alias = "poc")]
    PeopleOfColor,
    White,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderGroup {
    Female,
    Male,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassGroup {
    Lower,
    Middle,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeBucket {
    Children,
    Adolescents,
    YoungerAdults,
    Adults,
    OlderAdults,
}

/// Inclusive age range in whole years. 0 stands for "under one year".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(u32, u32)", into = "(u32, u32)")]
pub struct AgeRange {
    pub min: u32,
    pub max: u32,
}

impl From<(u32, u32)> for AgeRange {
    fn from((min, max): (u32, u32)) -> Self {
        Self { min, max }
    }
}

impl From<AgeRange> for (u32, u32) {
    fn from(r: AgeRange) -> Self {
        (r.min, r.max)
    }
}

impl AgeRange {
    pub fn exact(age: u32) -> Self {
        Self { min: age, max: age }
    }

    pub fn intersects(&self, other: &AgeRange) -> bool {
        self.min <= other.max && other.min <= self.max
    }
}

impl RaceGroup {
    pub fn label(self) -> &'static str {
        match self {
            Self::PeopleOfColor => "People of color",
            Self::White => "White",
        }
    }
}

impl GenderGroup {
    pub fn label(self) -> &'static str {
        match self {
            Self::Female => "Female",
            Self::Male => "Male",
            Self::Other => "Other",
        }
    }
}

impl ClassGroup {
    pub fn label(self) -> &'static str {
        match self {
            Self::Lower => "Lower",
            Self::Middle => "Middle",
            Self::Upper => "Upper",
        }
    }
}

impl AgeBucket {
    pub const ALL: [AgeBucket; 5] = [
        Self::Children,
        Self::Adolescents,
        Self::YoungerAdults,
        Self::Adults,
        Self::OlderAdults,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Children => "Children (1-9)",
            Self::Adolescents => "Adolescents (10-19)",
            Self::YoungerAdults => "Younger adults (20-24)",
            Self::Adults => "Adults (25-59)",
            Self::OlderAdults => "Older adults (60-99)",
        }
    }

    /// Nominal bounds of the bucket.
    pub fn range(self) -> AgeRange {
        let (min, max) = match self {
            Self::Children => (1, 9),
            Self::Adolescents => (10, 19),
            Self::YoungerAdults => (20, 24),
            Self::Adults => (25, 59),
            Self::OlderAdults => (60, 99),
        };
        AgeRange { min, max }
    }

    /// Bucket containing the whole range, if any. Children also absorb ages
    /// under one year.
    pub fn for_range(range: AgeRange) -> Option<Self> {
        if range.min > range.max {
            return None;
        }
        Self::ALL.into_iter().find(|bucket| {
            let b = bucket.range();
            let lower = if *bucket == Self::Children { 0 } else { b.min };
            range.min >= lower && range.max <= b.max
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleApplied {
    Lexicon,
    Range,
    Passthrough,
    Unmapped,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupedValue {
    pub category: IdentityCategory,
    pub raw: String,
    /// Empty when `rule_applied` is `Unmapped`.
    pub grouped: String,
    pub rule_applied: RuleApplied,
}

impl GroupedValue {
    pub fn is_mapped(&self) -> bool {
        self.rule_applied != RuleApplied::Unmapped
    }
}

/// Object whose keys must be unique after folding; used for every lexicon
/// section of the rules file.
#[derive(Debug, Clone, PartialEq)]
struct UniqueMap<V>(BTreeMap<String, V>);

impl<V> Default for UniqueMap<V> {
    fn default() -> Self {
        Self(BTreeMap::new())
    }
}

impl<'de, V: Deserialize<'de>> Deserialize<'de> for UniqueMap<V> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct UniqueVisitor<V>(std::marker::PhantomData<V>);

        impl<'de, V: Deserialize<'de>> Visitor<'de> for UniqueVisitor<V> {
            type Value = UniqueMap<V>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object with unique keys")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut map = BTreeMap::new();
                while let Some((key, value)) = access.next_entry::<String, V>()? {
                    let folded = names::fold(&key);
                    if folded.is_empty() {
                        return Err(serde::de::Error::custom("empty lexicon key"));
                    }
                    if map.insert(folded.clone(), value).is_some() {
                        return Err(serde::de::Error::custom(format!("duplicate lexicon key {key:?}")));
                    }
                }
                Ok(UniqueMap(map))
            }
        }

        deserializer.deserialize_map(UniqueVisitor(std::marker::PhantomData))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesFile {
    #[serde(default)]
    version: Option<String>,
    #[serde(default)]
    notes: Option<String>,
    #[serde(default)]
    race_white_terms: Vec<String>,
    #[serde(default)]
    race_poc_terms: Vec<String>,
    #[serde(default)]
    gender_terms: UniqueMap<GenderGroup>,
    #[serde(default)]
    class_lexicon: UniqueMap<ClassGroup>,
    #[serde(default)]
    age_synonyms: UniqueMap<AgeRange>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingRules {
    pub version: String,
    pub race_white_terms: BTreeSet<String>,
    pub race_poc_terms: BTreeSet<String>,
    pub gender_terms: BTreeMap<String, GenderGroup>,
    pub class_lexicon: BTreeMap<String, ClassGroup>,
    pub age_synonyms: BTreeMap<String, AgeRange>,
}

fn parse_rules_file(text: &str) -> Result<RulesFile, NormalizationError> {
    let file: RulesFile = serde_json::from_str(text).map_err(|e| NormalizationError::MalformedRules(e.to_string()))?;
    let _ = &file.notes;
    for list in [&file.race_white_terms, &file.race_poc_terms] {
        let mut seen = BTreeSet::new();
        for term in list {
            let folded = names::fold(term);
            if folded.is_empty() || !seen.insert(folded) {
                return Err(NormalizationError::MalformedRules(format!(
                    "empty or duplicate race term {term:?}"
                )));
            }
        }
    }
    for (key, range) in &file.age_synonyms.0 {
        if range.min > range.max {
            return Err(NormalizationError::MalformedRules(format!(
                "age synonym {key:?} has min > max"
            )));
        }
    }
    Ok(file)
}

impl GroupingRules {
    pub fn bundled() -> Self {
        let file = parse_rules_file(BUNDLED_RULES).expect("bundled grouping rules are valid");
        let mut rules = Self {
            version: String::new(),
            race_white_terms: BTreeSet::new(),
            race_poc_terms: BTreeSet::new(),
            gender_terms: BTreeMap::new(),
            class_lexicon: BTreeMap::new(),
            age_synonyms: BTreeMap::new(),
        };
        rules.apply(file);
        rules
    }

    fn apply(&mut self, file: RulesFile) {
        if let Some(version) = file.version {
            self.version = if self.version.is_empty() {
                version
            } else {
                format!("{}+{}", self.version, version)
            };
        }
        for term in file.race_white_terms {
            let folded = names::fold(&term);
            self.race_poc_terms.remove(&folded);
            self.race_white_terms.insert(folded);
        }
        for term in file.race_poc_terms {
            let folded = names::fold(&term);
            self.race_white_terms.remove(&folded);
            self.race_poc_terms.insert(folded);
        }
        self.gender_terms.extend(file.gender_terms.0);
        self.class_lexicon.extend(file.class_lexicon.0);
        self.age_synonyms.extend(file.age_synonyms.0);
    }

    /// Applies an override document on top of these rules.
    pub fn with_overrides(mut self, text: &str) -> Result<Self, NormalizationError> {
        let file = parse_rules_file(text)?;
        self.apply(file);
        Ok(self)
    }

    /// SHA-256 over the canonical JSON form; recorded in run metadata.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("rules serialize");
        crate::prompting::sha256_hex(json.as_bytes())
    }

    pub fn group_value(&self, category: IdentityCategory, raw: &str) -> Result<GroupedValue, NormalizationError> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(NormalizationError::EmptyValue(category));
        }
        let (grouped, rule_applied) = match category {
            IdentityCategory::Race => lexicon_result(self.group_race(trimmed).map(RaceGroup::label)),
            IdentityCategory::Gender => lexicon_result(self.group_gender(trimmed).map(GenderGroup::label)),
            IdentityCategory::Class => lexicon_result(self.group_class(trimmed).map(ClassGroup::label)),
            IdentityCategory::Age => match self.parse_age(trimmed).and_then(AgeBucket::for_range) {
                Some(bucket) => (bucket.label().to_string(), RuleApplied::Range),
                None => (String::new(), RuleApplied::Unmapped),
            },
            _ => (passthrough(trimmed), RuleApplied::Passthrough),
        };
        Ok(GroupedValue {
            category,
            raw: raw.to_string(),
            grouped,
            rule_applied,
        })
    }

    pub fn group_race(&self, raw: &str) -> Option<RaceGroup> {
        let folded = names::fold(raw);
        if self.race_white_terms.contains(&folded) {
            return Some(RaceGroup::White);
        }
        if self.race_poc_terms.contains(&folded) {
            return Some(RaceGroup::PeopleOfColor);
        }
        let toks = names::tokens(raw);
        let hits = |terms: &BTreeSet<String>| terms.iter().any(|t| names::contains_phrase(&toks, &names::tokens(t)));
        match (hits(&self.race_white_terms), hits(&self.race_poc_terms)) {
            (true, false) => Some(RaceGroup::White),
            (false, true) => Some(RaceGroup::PeopleOfColor),
            _ => None,
        }
    }

    pub fn group_gender(&self, raw: &str) -> Option<GenderGroup> {
        longest_match(&self.gender_terms, raw, false)
    }

    pub fn group_class(&self, raw: &str) -> Option<ClassGroup> {
        longest_match(&self.class_lexicon, raw, true)
    }

    /// Parses an age expression: numbers ("16-year-old", "49"), ranges
    /// ("10-19"), durations under a year ("16-month-old"), decades ("30s")
    /// or stage words from the synonym table.
    pub fn parse_age(&self, raw: &str) -> Option<AgeRange> {
        static RANGE: LazyLock<Regex> =
            LazyLock::new(|| Regex::new(r"(\d{1,3})\s*(?:-|–|—|to)\s*(\d{1,3})(?:\s*-?\s*(?:year|yr))?").unwrap());
        static SUB_YEAR: LazyLock<Regex> =
            LazyLock::new(|| Regex::new(r"(\d{1,3})\s*-?\s*(?:month|week|day)s?\b").unwrap());
        static DECADE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d{1,2}0)'?s\b").unwrap());
        static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d{1,3}").unwrap());

        let lowered = raw.to_lowercase();
        if let Some(caps) = SUB_YEAR.captures(&lowered) {
            let n: u32 = caps[1].parse().ok()?;
            // 16 months is past the first birthday; weeks and days never are.
            let years = if caps[0].contains("month") { n / 12 } else { 0 };
            return Some(AgeRange::exact(years));
        }
        if let Some(caps) = RANGE.captures(&lowered) {
            let a: u32 = caps[1].parse().ok()?;
            let b: u32 = caps[2].parse().ok()?;
            return Some(AgeRange {
                min: a.min(b),
                max: a.max(b),
            });
        }
        if let Some(caps) = DECADE.captures(&lowered) {
            let d: u32 = caps[1].parse().ok()?;
            return Some(AgeRange { min: d, max: d + 9 });
        }
        if let Some(m) = NUMBER.find(&lowered) {
            return m.as_str().parse().ok().map(AgeRange::exact);
        }
        let folded = names::fold(raw);
        if let Some(range) = self.age_synonyms.get(&folded) {
            return Some(*range);
        }
        let toks = names::tokens(raw);
        self.age_synonyms
            .iter()
            .filter(|(key, _)| names::contains_phrase(&toks, &names::tokens(key)))
            .max_by(|(a, _), (b, _)| a.len().cmp(&b.len()).then_with(|| b.cmp(a)))
            .map(|(_, range)| *range)
    }
}

impl Default for GroupingRules {
    fn default() -> Self {
        Self::bundled()
    }
}

fn lexicon_result(label: Option<&'static str>) -> (String, RuleApplied) {
    match label {
        Some(label) => (label.to_string(), RuleApplied::Lexicon),
        None => (String::new(), RuleApplied::Unmapped),
    }
}

/// Exact folded match first, then the longest lexicon phrase occurring as a
/// whole-token run. Equal-length matches that disagree leave the value
/// unmapped unless `first_on_tie` is set, in which case lexicographic order
/// decides.
fn longest_match<G: Copy + PartialEq>(lexicon: &BTreeMap<String, G>, raw: &str, first_on_tie: bool) -> Option<G> {
    let folded = names::fold(raw);
    if let Some(group) = lexicon.get(&folded) {
        return Some(*group);
    }
    let toks = names::tokens(raw);
    let mut best: Option<(usize, G)> = None;
    let mut tied = false;
    for (key, group) in lexicon {
        let key_toks = names::tokens(key);
        if !names::contains_phrase(&toks, &key_toks) {
            continue;
        }
        let len = key.len();
        match best {
            None => best = Some((len, *group)),
            Some((best_len, _)) if len > best_len => {
                best = Some((len, *group));
                tied = false;
            }
            Some((best_len, best_group)) if len == best_len && best_group != *group => tied = true,
            _ => {}
        }
    }
    match best {
        Some(_) if tied && !first_on_tie => None,
        Some((_, group)) => Some(group),
        None => None,
    }
}

fn passthrough(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Loads the bundled rules, then applies the override file when given.
pub fn load_grouping_rules(path: Option<&Path>) -> Result<GroupingRules, NormalizationError> {
    let rules = GroupingRules::bundled();
    match path {
        None => Ok(rules),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| NormalizationError::Io {
                path: path.display().to_string(),
                source,
            })?;
            rules.with_overrides(&text)
        }
    }
}

pub fn group_value(
    rules: &GroupingRules,
    category: IdentityCategory,
    raw: &str,
) -> Result<GroupedValue, NormalizationError> {
    rules.group_value(category, raw)
}

/// Tally of grouping outcomes, written as `normalization_report.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizationReport {
    /// (category, raw value) -> grouped value and rule, with occurrence count.
    pub mapped: Vec<MappedEntry>,
    pub unmapped: Vec<MappedEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MappedEntry {
    pub category: IdentityCategory,
    pub raw: String,
    pub grouped: String,
    pub rule_applied: RuleApplied,
    pub occurrences: u64,
}

impl NormalizationReport {
    pub fn from_values<'a>(values: impl IntoIterator<Item = &'a GroupedValue>) -> Self {
        let mut counts: BTreeMap<&GroupedValue, u64> = BTreeMap::new();
        for v in values {
            *counts.entry(v).or_default() += 1;
        }
        let mut report = Self::default();
        for (v, occurrences) in counts {
            let entry = MappedEntry {
                category: v.category,
                raw: v.raw.clone(),
                grouped: v.grouped.clone(),
                rule_applied: v.rule_applied,
                occurrences,
            };
            if v.is_mapped() {
                report.mapped.push(entry);
            } else {
                report.unmapped.push(entry);
            }
        }
        report
    }
}
