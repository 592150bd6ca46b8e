//! Prints the extraction prompt for one incident of a corpus, with its size
//! and hash.
//!
//! ```text
//! cargo run --example render_prompt -- fixtures/c5.json 42
//! ```

use std::path::PathBuf;

use harmscope::corpus::load_corpus;
use harmscope::prompting::{build_prompt, PromptOptions};
use harmscope::rubric::rubric_definition;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let corpus_path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/c5.json"));
    let incident_id: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(42);

    let corpus = load_corpus(&corpus_path)?;
    let incident = corpus
        .incident(incident_id)
        .ok_or_else(|| anyhow::anyhow!("incident {incident_id} is not in {}", corpus_path.display()))?;
    let request = build_prompt(incident, &rubric_definition(), &PromptOptions::default())?;

    println!("{}", request.rendered_prompt);
    eprintln!(
        "incident {}: {} reports, {} bytes, sha256 {}",
        request.incident_id,
        request.total_report_number,
        request.rendered_prompt.len(),
        request.prompt_hash
    );
    Ok(())
}
