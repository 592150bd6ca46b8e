//! Analysis artifacts: four tables (CSV and JSON) and four SVG plots.
//!
//! Output layout under the report directory:
//!
//! ```text
//! tables/category_prevalence.{csv,json}
//! tables/value_prevalence.{csv,json}
//! tables/pair_matrix.{csv,json}
//! tables/amplification_edges.{csv,json}
//! plots/category_prevalence.svg
//! plots/value_prevalence.svg
//! plots/pair_heatmap.svg
//! plots/amplification_edges.svg
//! manifest.json
//! ```
//!
//! Artifact bytes depend only on the bundle. The manifest's `generated_at`
//! is the one timestamp written anywhere.

mod svg;
mod tables;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::extraction::ExtractionResult;
use crate::metrics::{
    all_pairs, build_count_table, build_overall_table, CountTable, MetricsError, PairAnalysis, PairOptions, PairScope,
    ValueKey,
};
use crate::normalization::GroupingRules;
use crate::prompting::sha256_hex;
use crate::relevance::FilteredCorpus;
use crate::rubric::IdentityCategory;

pub use svg::{amplification_svg, category_bar_svg, heatmap_svg, value_bar_svg};
pub use tables::{render_table, Table, TableFormat};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub model_name: String,
    pub rubric_version: String,
    #[serde(rename = "N")]
    pub n_incidents: u64,
    pub dropped_subjects: usize,
    pub dropped_incidents: usize,
    pub config_hash: String,
    pub grouping_rules_fingerprint: String,
    pub min_support: u64,
    pub pair_scope: PairScope,
    pub top_categories: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub metadata: BundleMetadata,
    pub causal: CountTable,
    pub overall: CountTable,
    pub pairs: PairAnalysis,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleOptions {
    pub pairs: PairOptions,
    pub scope: PairScope,
    pub config_hash: String,
}

/// Builds causal and overall tables and the pair analysis.
pub fn build_bundle(
    filtered: &FilteredCorpus,
    before: &[ExtractionResult],
    rules: &GroupingRules,
    options: &BundleOptions,
) -> Result<ReportBundle, MetricsError> {
    let causal = build_count_table(filtered, rules, options.scope);
    let overall = build_overall_table(filtered, before, rules, options.scope);
    let pairs = all_pairs(&causal, &options.pairs)?;
    let first = filtered.incidents.first();
    Ok(ReportBundle {
        metadata: BundleMetadata {
            model_name: first.map(|r| r.model_name.clone()).unwrap_or_default(),
            rubric_version: first.map(|r| r.rubric_version.clone()).unwrap_or_default(),
            n_incidents: causal.n_incidents,
            dropped_subjects: filtered.dropped_subjects,
            dropped_incidents: filtered.dropped_incidents,
            config_hash: options.config_hash.clone(),
            grouping_rules_fingerprint: rules.fingerprint(),
            min_support: options.pairs.min_support,
            pair_scope: options.scope,
            top_categories: options.pairs.top_categories,
        },
        causal,
        overall,
        pairs,
    })
}

impl ReportBundle {
    /// All 26 categories, most prevalent first; absent ones last in rubric order.
    pub fn category_order(&self) -> Vec<IdentityCategory> {
        let mut order = self.causal.ranked_categories();
        for c in IdentityCategory::ALL {
            if !order.contains(&c) {
                order.push(c);
            }
        }
        order
    }

    /// Categories whose values are reported: the pair-analysis selection.
    pub fn value_categories(&self) -> Vec<IdentityCategory> {
        self.pairs.categories.clone()
    }

    /// Values of `category` seen in either table: by causal count, then
    /// overall count, then name.
    pub fn values_for(&self, category: IdentityCategory) -> Vec<ValueKey> {
        let mut values: Vec<ValueKey> = self
            .causal
            .n_v
            .keys()
            .chain(self.overall.n_v.keys())
            .filter(|v| v.category == category)
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        values.sort_by(|a, b| {
            self.causal
                .value_count(b)
                .cmp(&self.causal.value_count(a))
                .then_with(|| self.overall.value_count(b).cmp(&self.overall.value_count(a)))
                .then_with(|| a.cmp(b))
        });
        values
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the report directory, with `/` separators.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn extend(&mut self, other: Manifest) {
        self.files.extend(other.files);
    }

    pub fn contains(&self, path: &str) -> bool {
        self.files.iter().any(|f| f.path == path)
    }

    /// Writes `manifest.json`, sorted by path, stamped with `generated_at`.
    pub fn write(&self, dir: &Path, generated_at: &str) -> Result<PathBuf, ReportError> {
        let mut files = self.files.clone();
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let doc = serde_json::json!({ "generated_at": generated_at, "files": files });
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        text.push('\n');
        write_file(&path, text.as_bytes())?;
        Ok(path)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let io = |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

/// Writes `bytes` to `dir/relative` and records it in `manifest`.
pub fn emit_file(dir: &Path, relative: &str, bytes: &[u8], manifest: &mut Manifest) -> Result<(), ReportError> {
    write_file(&dir.join(relative), bytes)?;
    manifest.files.push(ManifestEntry {
        path: relative.to_string(),
        sha256: sha256_hex(bytes),
        bytes: bytes.len() as u64,
    });
    Ok(())
}

pub fn emit_tables(bundle: &ReportBundle, dir: &Path, formats: &[TableFormat]) -> Result<Manifest, ReportError> {
    let mut manifest = Manifest::default();
    for table in Table::ALL {
        for &format in formats {
            let relative = format!("tables/{}.{}", table.file_stem(), format.extension());
            let text = render_table(bundle, table, format);
            emit_file(dir, &relative, text.as_bytes(), &mut manifest)?;
        }
    }
    Ok(manifest)
}

pub fn emit_plots(bundle: &ReportBundle, dir: &Path) -> Result<Manifest, ReportError> {
    let mut manifest = Manifest::default();
    let plots = [
        ("plots/category_prevalence.svg", category_bar_svg(bundle)),
        ("plots/value_prevalence.svg", value_bar_svg(bundle)),
        ("plots/pair_heatmap.svg", heatmap_svg(&bundle.pairs)),
        ("plots/amplification_edges.svg", amplification_svg(&bundle.pairs)),
    ];
    for (relative, text) in plots {
        emit_file(dir, relative, text.as_bytes(), &mut manifest)?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{HarmedSubject, MarkerType};
    use crate::relevance::filter_relevant;
    use crate::rubric::{Answer, CounterfactualJudgment, SubjectType};
    use IdentityCategory as C;

    fn incident(id: u64, markers: &[(IdentityCategory, &str, bool)]) -> ExtractionResult {
        let mut s = HarmedSubject::blank(id, 1, "x", SubjectType::Individual);
        for (c, v, relevant) in markers {
            let q2 = if *relevant { Answer::No } else { Answer::Yes };
            s.set_marker(
                *c,
                v,
                MarkerType::Extracted,
                CounterfactualJudgment::new(Answer::Yes, q2),
            );
        }
        ExtractionResult {
            incident_id: id,
            description: String::new(),
            subjects: vec![s],
            raw_response_hash: String::new(),
            model_name: "m".into(),
            rubric_version: "1.0.0".into(),
            prompt_chunks: 1,
        }
    }

    pub(super) fn bundle() -> ReportBundle {
        let before = vec![
            incident(1, &[(C::Gender, "woman", true), (C::Class, "politician", true)]),
            incident(2, &[(C::Gender, "woman", true), (C::Class, "gig worker", true)]),
            incident(3, &[(C::Gender, "man", true), (C::Class, "celebrity", true)]),
            incident(4, &[(C::Age, "teenager", true), (C::Gender, "girl", false)]),
            incident(5, &[(C::Race, "Black", true)]),
        ];
        let filtered = filter_relevant(&before);
        build_bundle(&filtered, &before, &GroupingRules::bundled(), &BundleOptions::default()).unwrap()
    }

    #[test]
    fn eight_table_files_and_four_plots() {
        let tmp = tempfile::tempdir().unwrap();
        let b = bundle();
        let tables = emit_tables(&b, tmp.path(), &[TableFormat::Csv, TableFormat::Json]).unwrap();
        assert_eq!(tables.files.len(), 8);
        let plots = emit_plots(&b, tmp.path()).unwrap();
        assert_eq!(plots.files.len(), 4);
        let again = tempfile::tempdir().unwrap();
        let tables2 = emit_tables(&b, again.path(), &[TableFormat::Csv, TableFormat::Json]).unwrap();
        assert_eq!(tables, tables2);
        let mut all = tables;
        all.extend(plots);
        all.write(tmp.path(), "2026-01-01T00:00:00Z").unwrap();
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["files"].as_array().unwrap().len(), 12);
    }

    #[test]
    fn overall_includes_filtered_markers_of_retained_incidents() {
        let b = bundle();
        let female = ValueKey::new(C::Gender, "Female");
        assert_eq!(b.causal.value_count(&female), 2);
        assert_eq!(b.overall.value_count(&female), 3);
        assert_eq!(b.metadata.n_incidents, 5);
    }
}
