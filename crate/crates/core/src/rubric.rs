//! The identity rubric: the closed set of identity categories with their
//! exemplary values, the harmed-subject typology and the two counterfactual
//! questions.
//!
//! Every other module (prompting, parsing, normalization, metrics) reads
//! categories from [`IdentityCategory::ALL`]; there is no second list.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Version of the rubric text. Bump whenever the category list, exemplary
/// values or the prompt template change; cached model outputs are keyed by it.
pub const RUBRIC_VERSION: &str = "1.0.0";

/// One of the 26 identity categories, in rubric order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IdentityCategory {
    Race,
    Gender,
    GenderIdentity,
    Class,
    Sexuality,
    Nationality,
    Ability,
    GenderExpression,
    Heritage,
    Age,
    Appearance,
    Language,
    SkinTone,
    Religion,
    ReproductiveStatus,
    BodySize,
    Education,
    ImmigrationStatus,
    Geography,
    Indigeneity,
    FamilyStatus,
    Caste,
    PoliticalIdentity,
    Neurodiversity,
    HealthStatus,
    Species,
}

impl IdentityCategory {
    pub const COUNT: usize = 26;

    pub const ALL: [IdentityCategory; 26] = [
        Self::Race,
        Self::Gender,
        Self::GenderIdentity,
        Self::Class,
        Self::Sexuality,
        Self::Nationality,
        Self::Ability,
        Self::GenderExpression,
        Self::Heritage,
        Self::Age,
        Self::Appearance,
        Self::Language,
        Self::SkinTone,
        Self::Religion,
        Self::ReproductiveStatus,
        Self::BodySize,
        Self::Education,
        Self::ImmigrationStatus,
        Self::Geography,
        Self::Indigeneity,
        Self::FamilyStatus,
        Self::Caste,
        Self::PoliticalIdentity,
        Self::Neurodiversity,
        Self::HealthStatus,
        Self::Species,
    ];

    /// 1-based position in the rubric list.
    pub fn number(self) -> usize {
        self as usize + 1
    }

    /// Canonical display name, e.g. `"Political Identity"`.
    pub fn name(self) -> &'static str {
        match self {
            Self::Race => "Race",
            Self::Gender => "Gender",
            Self::GenderIdentity => "Gender Identity",
            Self::Class => "Class",
            Self::Sexuality => "Sexuality",
            Self::Nationality => "Nationality",
            Self::Ability => "Ability",
            Self::GenderExpression => "Gender Expression",
            Self::Heritage => "Heritage",
            Self::Age => "Age",
            Self::Appearance => "Appearance",
            Self::Language => "Language",
            Self::SkinTone => "Skin Tone",
            Self::Religion => "Religion",
            Self::ReproductiveStatus => "Reproductive Status",
            Self::BodySize => "Body Size",
            Self::Education => "Education",
            Self::ImmigrationStatus => "Immigration Status",
            Self::Geography => "Geography",
            Self::Indigeneity => "Indigeneity",
            Self::FamilyStatus => "Family Status",
            Self::Caste => "Caste",
            Self::PoliticalIdentity => "Political Identity",
            Self::Neurodiversity => "Neurodiversity",
            Self::HealthStatus => "Health Status",
            Self::Species => "Species",
        }
    }

    pub fn exemplary_values(self) -> &'static [&'static str] {
        match self {
            Self::Race => &["White", "Black"],
            Self::Gender => &["Male", "Female"],
            Self::GenderIdentity => &["Cisgender", "Trans"],
            Self::Class => &["Upper class", "Working class"],
            Self::Sexuality => &["Heterosexual", "Gay"],
            Self::Nationality => &["German", "Syrian"],
            Self::Ability => &["Able-bodied", "Disabled"],
            Self::GenderExpression => &["Masculine", "Feminine", "gender nonconforming"],
            Self::Heritage => &[
                "European descent",
                "African American",
                "Indigenous heritage",
                "diasporic",
            ],
            Self::Age => &["Teenager", "Adult", "Middle-aged", "Senior"],
            Self::Appearance => &["Conventionally attractive", "perceived as unattractive"],
            Self::Language => &["Anglophone", "English as a second language"],
            Self::SkinTone => &["Light", "Dark"],
            Self::Religion => &["Christian", "Muslim"],
            Self::ReproductiveStatus => &["Fertile", "Infertile"],
            Self::BodySize => &["Thin", "fat", "obese"],
            Self::Education => &[
                "Student",
                "professor",
                "vocational trainee",
                "graduate of an elite university",
                "self-taught",
            ],
            Self::ImmigrationStatus => &[
                "Citizen",
                "permanent resident",
                "temporary visa holder",
                "undocumented migrant",
            ],
            Self::Geography => &[
                "Urban",
                "rural",
                "remote region",
                "informal settlement",
                "university town",
                "capital city",
            ],
            Self::Indigeneity => &["Indigenous person", "settler descendant", "colonizer lineage"],
            Self::FamilyStatus => &["Single", "married", "divorced", "single parent", "caregiver"],
            Self::Caste => &["Brahmin", "Dalit"],
            Self::PoliticalIdentity => &["Progressive", "conservative", "libertarian", "socialist"],
            Self::Neurodiversity => &["Neurotypical", "autistic", "ADHD"],
            Self::HealthStatus => &["Mentally well", "living with depression", "chronically ill"],
            Self::Species => &["Human", "nonhuman animal", "plant", "insect"],
        }
    }

    /// Key used for this category in the model's JSON output. Only Species
    /// differs from [`name`](Self::name): the output skeleton spells it "Specie".
    pub fn response_key(self) -> &'static str {
        match self {
            Self::Species => "Specie",
            other => other.name(),
        }
    }

    /// Resolve a free-form category name. Matching ignores case, whitespace,
    /// underscores and hyphens; "Specie" is accepted for Species.
    pub fn parse(name: &str) -> Option<Self> {
        let key = squash(name);
        if key.is_empty() {
            return None;
        }
        if key == "specie" {
            return Some(Self::Species);
        }
        Self::ALL.into_iter().find(|c| squash(c.name()) == key)
    }
}

fn squash(name: &str) -> String {
    name.chars()
        .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
        .flat_map(char::to_lowercase)
        .collect()
}

impl fmt::Display for IdentityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IdentityCategory {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s).ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown identity category {0:?}")]
pub struct UnknownCategory(pub String);

impl Serialize for IdentityCategory {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for IdentityCategory {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Self::parse(&raw).ok_or_else(|| serde::de::Error::custom(UnknownCategory(raw)))
    }
}

/// Returns the canonical category for `name`, if it names one of the 26.
pub fn canonical_category(name: &str) -> Option<IdentityCategory> {
    IdentityCategory::parse(name)
}

pub fn is_valid_category(name: &str) -> bool {
    canonical_category(name).is_some()
}

/// Typology of harmed subjects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SubjectType {
    Individual,
    GroupOfPersons,
    Society,
    Organization,
    Nature,
    Other,
}

impl SubjectType {
    pub const ALL: [SubjectType; 6] = [
        Self::Individual,
        Self::GroupOfPersons,
        Self::Society,
        Self::Organization,
        Self::Nature,
        Self::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Individual => "Individual",
            Self::GroupOfPersons => "Group of persons",
            Self::Society => "Society",
            Self::Organization => "Organization",
            Self::Nature => "Nature",
            Self::Other => "Other",
        }
    }

    /// Accepts the labels used in the output skeleton ("Organizations",
    /// "Group of persons") as well as the typology wording ("A group of persons").
    pub fn parse(raw: &str) -> Option<Self> {
        let folded = raw.trim().to_lowercase();
        let folded = folded
            .strip_prefix("an ")
            .or_else(|| folded.strip_prefix("a "))
            .unwrap_or(&folded);
        let key: String = folded.chars().filter(|c| c.is_alphanumeric()).collect();
        match key.as_str() {
            "individual" => Some(Self::Individual),
            "groupofpersons" | "group" | "groupofperson" => Some(Self::GroupOfPersons),
            "society" => Some(Self::Society),
            "organization" | "organizations" | "organisation" | "organisations" => Some(Self::Organization),
            "nature" => Some(Self::Nature),
            "other" => Some(Self::Other),
            _ => None,
        }
    }
}

impl fmt::Display for SubjectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for SubjectType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for SubjectType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Self::parse(&raw).ok_or_else(|| serde::de::Error::custom(format!("unknown subject type {raw:?}")))
    }
}

/// Binary answer to a counterfactual question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_lowercase().as_str() {
            "yes" => Some(Self::Yes),
            "no" => Some(Self::No),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Yes => "Yes",
            Self::No => "No",
        }
    }
}

/// The two counterfactual judgments attached to an extracted marker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualJudgment {
    /// CQ1: did the incident happen because the subject had the marker?
    pub cq1_direct: Answer,
    /// CQ2: would it still have happened without the marker?
    pub cq2_alternate: Answer,
    #[serde(default)]
    pub reasoning: String,
}

impl CounterfactualJudgment {
    pub fn new(cq1_direct: Answer, cq2_alternate: Answer) -> Self {
        Self {
            cq1_direct,
            cq2_alternate,
            reasoning: String::new(),
        }
    }

    /// A marker is causally relevant when CQ1 is Yes and CQ2 is No.
    pub fn is_causally_relevant(&self) -> bool {
        self.cq1_direct == Answer::Yes && self.cq2_alternate == Answer::No
    }
}

pub fn direct_question(marker: &str) -> String {
    format!("Did this incident happen because the AI Subject was {marker}?")
}

pub fn alternate_question(marker: &str) -> String {
    format!("Would this incident still have happened if the AI Subject was not {marker}?")
}

/// Static view over the whole rubric, used for export and prompt rendering.
#[derive(Debug, Clone, Serialize)]
pub struct Rubric {
    pub version: &'static str,
    pub categories: Vec<CategoryEntry>,
    pub subject_types: Vec<&'static str>,
    pub direct_question: &'static str,
    pub alternate_question: &'static str,
    /// Categories with bundled grouping rules (see `normalization`).
    pub grouped_categories: Vec<IdentityCategory>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CategoryEntry {
    pub number: usize,
    pub category: IdentityCategory,
    pub exemplary_values: &'static [&'static str],
}

impl Rubric {
    /// The category list as it appears inside the extraction prompt.
    pub fn category_listing(&self) -> String {
        let mut out = String::from("List of identity categories and their exemplary values:\n");
        for entry in &self.categories {
            out.push_str(&format!(
                "{}. {} (e.g., {})\n",
                entry.number,
                entry.category.name(),
                entry.exemplary_values.join(", ")
            ));
        }
        out.pop();
        out
    }
}

pub fn rubric_definition() -> Rubric {
    Rubric {
        version: RUBRIC_VERSION,
        categories: IdentityCategory::ALL
            .into_iter()
            .map(|category| CategoryEntry {
                number: category.number(),
                category,
                exemplary_values: category.exemplary_values(),
            })
            .collect(),
        subject_types: SubjectType::ALL.iter().map(|t| t.label()).collect(),
        direct_question: "Did this incident happen because the AI Subject was [marker]?",
        alternate_question: "Would this incident still have happened if the AI Subject was not [marker]?",
        grouped_categories: vec![
            IdentityCategory::Race,
            IdentityCategory::Gender,
            IdentityCategory::Class,
            IdentityCategory::Age,
        ],
    }
}
