//! Runs extract, filter and metrics over the five-incident fixture with the
//! replay cache and copies every output into a directory.
//!
//! ```text
//! cargo run --example fixture_pipeline -- /tmp/fixture-run
//! ```
//!
//! With no argument it refreshes `fixtures/golden`, the reference tree the
//! acceptance run compares against. The timestamp is pinned so the manifest
//! is reproducible.

use std::fs;
use std::path::{Path, PathBuf};

use harmscope::extraction::BackendConfig;
use harmscope::pipeline::{cmd_extract, cmd_filter, cmd_metrics, RunConfig, DEFAULT_MODEL};

const GENERATED_AT: &str = "2026-01-01T00:00:00Z";

fn copy_tree(from: &Path, to: &Path) -> std::io::Result<usize> {
    fs::create_dir_all(to)?;
    let mut copied = 0;
    for entry in fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copied += copy_tree(&entry.path(), &target)?;
        } else {
            fs::copy(entry.path(), target)?;
            copied += 1;
        }
    }
    Ok(copied)
}

fn main() -> anyhow::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let target = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| fixtures.join("golden"));

    let work = tempfile::tempdir()?;
    let config = RunConfig {
        corpus_path: Some(fixtures.join("c5.json")),
        backend: BackendConfig::replay(DEFAULT_MODEL, fixtures.join("cache")),
        output_dir: work.path().to_path_buf(),
        ..RunConfig::default()
    }
    .resolve()?;
    println!("{}", cmd_extract(&config)?);
    println!("{}", cmd_filter(&config)?);
    println!("{}", cmd_metrics(&config, GENERATED_AT)?);

    if target.exists() {
        fs::remove_dir_all(&target)?;
    }
    let copied = copy_tree(work.path(), &target)?;
    println!("copied {copied} files to {}", target.display());
    Ok(())
}
