//! Turns hand-written answers into a replay cache, so the extraction stage
//! can run offline against a corpus.
//!
//! ```text
//! cargo run --example replay_cache -- fixtures/c5.json fixtures/c5_answers.json fixtures/cache
//! ```
//!
//! With no arguments it regenerates the bundled fixture cache.

use std::path::PathBuf;

use harmscope::corpus::load_corpus;
use harmscope::pipeline::DEFAULT_MODEL;
use harmscope::synth::{canned_results, write_replay_cache, CannedIncident};

fn main() -> anyhow::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut args = std::env::args_os().skip(1).map(PathBuf::from);
    let corpus_path = args.next().unwrap_or_else(|| fixtures.join("c5.json"));
    let answers_path = args.next().unwrap_or_else(|| fixtures.join("c5_answers.json"));
    let cache_dir = args.next().unwrap_or_else(|| fixtures.join("cache"));

    let corpus = load_corpus(&corpus_path)?;
    let answers: Vec<CannedIncident> = serde_json::from_str(&std::fs::read_to_string(&answers_path)?)?;
    let results = canned_results(&answers, DEFAULT_MODEL);
    let written = write_replay_cache(&corpus, &results, &cache_dir, DEFAULT_MODEL)?;
    println!("wrote {written} cache entries under {}", cache_dir.display());
    Ok(())
}
