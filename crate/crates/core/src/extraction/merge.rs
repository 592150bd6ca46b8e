//! Deduplication of harmed subjects within an incident.
//!
//! Two subjects are merged when
//! - their subject types agree,
//! - their names refer to the same entity: equal after folding, one a token
//!   subsequence of the other, or (weaker) sharing a content word while also
//!   sharing at least one compatible marker, and
//! - no category carries conflicting present markers.
//!
//! Passes repeat until nothing merges, so the result is a fixpoint and
//! merging it again changes nothing.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use super::{subject_id, ExtractionResult, HarmedSubject, MarkerRecord};
use crate::names;
use crate::normalization::GroupingRules;
use crate::rubric::IdentityCategory;

static BUNDLED: LazyLock<GroupingRules> = LazyLock::new(GroupingRules::bundled);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NameMatch {
    Strong,
    Weak,
    None,
}

pub fn name_match(a: &str, b: &str) -> NameMatch {
    let ta: Vec<String> = names::tokens(a).iter().map(|t| names::stem(t)).collect();
    let tb: Vec<String> = names::tokens(b).iter().map(|t| names::stem(t)).collect();
    if ta.is_empty() || tb.is_empty() {
        return NameMatch::None;
    }
    if ta == tb || names::is_token_subsequence(&ta, &tb) || names::is_token_subsequence(&tb, &ta) {
        return NameMatch::Strong;
    }
    let ca = names::content_stems(a);
    let cb = names::content_stems(b);
    if ca.iter().any(|t| cb.contains(t)) {
        NameMatch::Weak
    } else {
        NameMatch::None
    }
}

/// Whether two present marker values in `category` can describe the same subject.
pub fn values_compatible(rules: &GroupingRules, category: IdentityCategory, a: &str, b: &str) -> bool {
    if names::fold(a) == names::fold(b) {
        return true;
    }
    match category {
        IdentityCategory::Age => {
            if let (Some(ra), Some(rb)) = (rules.parse_age(a), rules.parse_age(b)) {
                return ra.intersects(&rb);
            }
        }
        IdentityCategory::Race | IdentityCategory::Gender | IdentityCategory::Class => {
            let ga = rules.group_value(category, a).ok().filter(|g| g.is_mapped());
            let gb = rules.group_value(category, b).ok().filter(|g| g.is_mapped());
            if let (Some(ga), Some(gb)) = (ga, gb) {
                return ga.grouped == gb.grouped;
            }
        }
        _ => {}
    }
    let sa = names::content_stems(a);
    let sb = names::content_stems(b);
    let subset = |x: &[String], y: &[String]| !x.is_empty() && x.iter().all(|t| y.contains(t));
    subset(&sa, &sb) || subset(&sb, &sa)
}

struct MarkerComparison {
    conflicts: usize,
    overlaps: usize,
}

fn compare_markers(rules: &GroupingRules, a: &HarmedSubject, b: &HarmedSubject) -> MarkerComparison {
    let mut cmp = MarkerComparison {
        conflicts: 0,
        overlaps: 0,
    };
    for category in IdentityCategory::ALL {
        let (Some(va), Some(vb)) = (
            a.markers.get(&category).and_then(|m| m.marker.as_deref()),
            b.markers.get(&category).and_then(|m| m.marker.as_deref()),
        ) else {
            continue;
        };
        if values_compatible(rules, category, va, vb) {
            cmp.overlaps += 1;
        } else {
            cmp.conflicts += 1;
        }
    }
    cmp
}

pub fn mergeable(rules: &GroupingRules, a: &HarmedSubject, b: &HarmedSubject) -> bool {
    let names = name_match(&a.name, &b.name);
    if names == NameMatch::None {
        return false;
    }
    if a.subject_type != b.subject_type {
        log::info!(
            "not merging {:?} and {:?} in incident {}: subject types {} and {} differ",
            a.name,
            b.name,
            a.incident_id,
            a.subject_type,
            b.subject_type
        );
        return false;
    }
    let cmp = compare_markers(rules, a, b);
    if cmp.conflicts > 0 {
        return false;
    }
    names == NameMatch::Strong || cmp.overlaps > 0
}

fn pick(kept: &MarkerRecord, other: &MarkerRecord) -> MarkerRecord {
    if other.marker_type.specificity() > kept.marker_type.specificity() {
        other.clone()
    } else {
        kept.clone()
    }
}

fn combine(a: &HarmedSubject, b: &HarmedSubject) -> HarmedSubject {
    let name = if b.name.chars().count() > a.name.chars().count() {
        b.name.clone()
    } else {
        a.name.clone()
    };
    let markers: BTreeMap<_, _> = IdentityCategory::ALL
        .into_iter()
        .map(|c| {
            let record = match (a.markers.get(&c), b.markers.get(&c)) {
                (Some(x), Some(y)) => pick(x, y),
                (Some(x), None) | (None, Some(x)) => x.clone(),
                (None, None) => MarkerRecord::not_mentioned(c),
            };
            (c, record)
        })
        .collect();
    HarmedSubject {
        subject_id: a.subject_id.clone(),
        incident_id: a.incident_id,
        report_ids: a.report_ids.union(&b.report_ids).copied().collect(),
        name,
        subject_type: a.subject_type,
        markers,
    }
}

fn merge_incident(rules: &GroupingRules, mut subjects: Vec<HarmedSubject>) -> Vec<HarmedSubject> {
    loop {
        let mut out: Vec<HarmedSubject> = Vec::with_capacity(subjects.len());
        let mut changed = false;
        for subject in subjects {
            match out.iter_mut().find(|kept| mergeable(rules, kept, &subject)) {
                Some(kept) => {
                    *kept = combine(kept, &subject);
                    changed = true;
                }
                None => out.push(subject),
            }
        }
        subjects = out;
        if !changed {
            break;
        }
    }
    for (i, s) in subjects.iter_mut().enumerate() {
        s.subject_id = subject_id(s.incident_id, i + 1);
    }
    subjects
}

/// Merges subjects per incident with the bundled grouping rules.
pub fn merge_subjects(results: Vec<ExtractionResult>) -> Vec<ExtractionResult> {
    merge_subjects_with(results, &BUNDLED)
}

pub fn merge_subjects_with(results: Vec<ExtractionResult>, rules: &GroupingRules) -> Vec<ExtractionResult> {
    results
        .into_iter()
        .map(|mut r| {
            r.subjects = merge_incident(rules, std::mem::take(&mut r.subjects));
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::MarkerType;
    use crate::rubric::{Answer, CounterfactualJudgment, SubjectType};
    use IdentityCategory as C;

    fn subject(ordinal: usize, name: &str, markers: &[(IdentityCategory, &str, MarkerType)]) -> HarmedSubject {
        let mut s = HarmedSubject::blank(1, ordinal, name, SubjectType::GroupOfPersons);
        s.report_ids.insert(ordinal as u64);
        for (c, v, t) in markers {
            s.set_marker(*c, v, *t, CounterfactualJudgment::new(Answer::Yes, Answer::No));
        }
        s
    }

    fn result(subjects: Vec<HarmedSubject>) -> ExtractionResult {
        ExtractionResult {
            incident_id: 1,
            description: String::new(),
            subjects,
            raw_response_hash: String::new(),
            model_name: "m".into(),
            rubric_version: "v".into(),
            prompt_chunks: 1,
        }
    }

    fn merged(subjects: Vec<HarmedSubject>) -> Vec<HarmedSubject> {
        merge_subjects(vec![result(subjects)]).remove(0).subjects
    }

    #[test]
    fn alice_users_merge() {
        let out = merged(vec![
            subject(1, "Users of Alice", &[]),
            subject(2, "Users of Yandex's Alice", &[]),
        ]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].name, "Users of Yandex's Alice");
        assert_eq!(out[0].report_ids.len(), 2);
        assert_eq!(out[0].subject_id, "1-S1");
    }

    #[test]
    fn spanish_speaking_users_merge_on_markers() {
        let out = merged(vec![
            subject(
                1,
                "Young, Spanish-speaking user",
                &[
                    (C::Age, "Young", MarkerType::Inferred),
                    (C::Language, "Spanish", MarkerType::Extracted),
                ],
            ),
            subject(
                2,
                "Teenage users who speak Spanish",
                &[
                    (C::Age, "Teenage", MarkerType::Extracted),
                    (C::Language, "Spanish", MarkerType::Extracted),
                ],
            ),
        ]);
        assert_eq!(out.len(), 1);
        // Extracted beats Inferred.
        assert_eq!(out[0].marker(C::Age).marker.as_deref(), Some("Teenage"));
    }

    #[test]
    fn distinct_people_stay_apart() {
        let markers = [
            (C::Gender, "Women", MarkerType::Extracted),
            (C::Class, "High-profile", MarkerType::Extracted),
        ];
        let out = merged(vec![
            subject(1, "Taylor Swift", &markers),
            subject(2, "Megan Thee Stallion", &markers),
        ]);
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].subject_id, "1-S2");
    }

    #[test]
    fn conflicting_age_blocks_merge() {
        let out = merged(vec![
            subject(1, "Users", &[(C::Age, "teenager", MarkerType::Extracted)]),
            subject(2, "Users", &[(C::Age, "adult", MarkerType::Extracted)]),
        ]);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn subject_type_conflict_blocks_merge() {
        let a = subject(1, "Amazon", &[]);
        let mut b = subject(2, "Amazon", &[]);
        b.subject_type = SubjectType::Organization;
        assert_eq!(merged(vec![a, b]).len(), 2);
    }

    #[test]
    fn merge_keeps_union_of_markers() {
        let out = merged(vec![
            subject(1, "Drivers", &[(C::Class, "gig worker", MarkerType::Extracted)]),
            subject(
                2,
                "Delivery drivers",
                &[(C::Nationality, "Kenyan", MarkerType::Inferred)],
            ),
        ]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].present_markers().count(), 2);
    }

    #[test]
    fn idempotent_and_transitive() {
        let input = vec![
            subject(1, "Alice", &[]),
            subject(2, "Bob", &[]),
            subject(3, "Users of Alice", &[]),
            subject(4, "Users of Yandex's Alice", &[]),
        ];
        let once = merge_subjects(vec![result(input)]);
        let twice = merge_subjects(once.clone());
        assert_eq!(once, twice);
        let names: Vec<&str> = once[0].subjects.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, vec!["Users of Yandex's Alice", "Bob"]);
    }

    #[test]
    fn compatible_values() {
        let rules = GroupingRules::bundled();
        assert!(values_compatible(&rules, C::Age, "Teenager", "Young"));
        assert!(!values_compatible(&rules, C::Age, "teenager", "adult"));
        assert!(values_compatible(&rules, C::Gender, "Woman", "Women"));
        assert!(!values_compatible(&rules, C::Gender, "Woman", "Men"));
        assert!(values_compatible(&rules, C::Language, "Spanish", "Spanish speaker"));
        assert!(!values_compatible(&rules, C::Nationality, "German", "Syrian"));
    }
}
