//! Deduplicates subjects that several reports describe under different names.
//!
//! ```text
//! cargo run --example merge_subjects
//! ```

use harmscope::extraction::merge::{mergeable, name_match};
use harmscope::extraction::merge_subjects_with;
use harmscope::normalization::GroupingRules;
use harmscope::synth::{canned_results, CannedIncident};

const ANSWERS: &str = r#"[
  {
    "incident_id": 90,
    "description": "A credit model cut limits for some customers.",
    "subjects": [
      {"name": "Jane Doe", "type": "Individual", "report_ids": [901],
       "markers": [{"category": "Gender", "marker": "woman", "cq1": "Yes", "cq2": "No"}]},
      {"name": "Ms. Jane Doe", "type": "Individual", "report_ids": [902],
       "markers": [{"category": "Gender", "marker": "female", "marker_type": "Inferred", "cq1": "Yes", "cq2": "No"},
                   {"category": "Age", "marker": "34-year-old", "cq1": "No", "cq2": "Yes"}]},
      {"name": "Jane Doe", "type": "Individual", "report_ids": [903],
       "markers": [{"category": "Age", "marker": "elderly", "cq1": "No", "cq2": "Yes"}]},
      {"name": "Small business owners", "type": "Group of persons", "report_ids": [902],
       "markers": [{"category": "Class", "marker": "small business owner", "cq1": "Yes", "cq2": "No"}]}
    ]
  }
]"#;

fn main() -> anyhow::Result<()> {
    let incidents: Vec<CannedIncident> = serde_json::from_str(ANSWERS)?;
    let results = canned_results(&incidents, "example");
    let rules = GroupingRules::bundled();

    let subjects = &results[0].subjects;
    for (i, a) in subjects.iter().enumerate() {
        for b in &subjects[i + 1..] {
            println!(
                "{:<22} ~ {:<22} names {:?}, mergeable {}",
                a.name,
                b.name,
                name_match(&a.name, &b.name),
                mergeable(&rules, a, b)
            );
        }
    }

    let merged = merge_subjects_with(results, &rules);
    println!();
    for s in &merged[0].subjects {
        let markers: Vec<String> = s
            .present_markers()
            .map(|m| format!("{}={}", m.category.name(), m.marker.as_deref().unwrap_or("")))
            .collect();
        println!(
            "{} {:<22} reports {:?}  {}",
            s.subject_id,
            s.name,
            s.report_ids,
            markers.join(", ")
        );
    }
    Ok(())
}
