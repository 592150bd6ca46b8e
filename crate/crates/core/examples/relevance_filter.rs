//! Applies the counterfactual relevance filter to hand-written answers and
//! lists what survives.
//!
//! ```text
//! cargo run --example relevance_filter -- fixtures/c5_answers.json
//! ```

use std::path::PathBuf;

use harmscope::relevance::{filter_relevant, relevance_report};
use harmscope::synth::{canned_results, CannedIncident};

fn main() -> anyhow::Result<()> {
    let path = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/argentina_answers.json"));
    let incidents: Vec<CannedIncident> = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    let before = canned_results(&incidents, "example");

    for result in &before {
        for subject in &result.subjects {
            for m in subject.present_markers() {
                let j = m.judgment.as_ref().expect("present markers carry a judgment");
                println!(
                    "incident {:>4}  {:<28} {:<12} {:<14} CQ1={:<3} CQ2={:<3} -> {}",
                    result.incident_id,
                    subject.name,
                    m.category.name(),
                    m.marker.as_deref().unwrap_or(""),
                    j.cq1_direct.as_str(),
                    j.cq2_alternate.as_str(),
                    if m.is_causally_relevant() { "kept" } else { "removed" }
                );
            }
        }
    }

    let after = filter_relevant(&before);
    println!();
    println!(
        "incidents kept {} (dropped {}), subjects kept {} (dropped {})",
        after.n_incidents,
        after.dropped_incidents,
        after.subject_count(),
        after.dropped_subjects
    );
    println!(
        "{}",
        serde_json::to_string_pretty(&relevance_report(&before, &after).to_json())?
    );
    Ok(())
}
