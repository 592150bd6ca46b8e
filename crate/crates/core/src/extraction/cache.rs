//! On-disk response cache.
//!
//! Layout: `<cache_dir>/<model>/<rubric_version>/<incident_id>.json`, or
//! `<incident_id>.c<k>.json` for the k-th chunk of a split incident. An entry
//! is a hit only if its stored prompt hash equals the current one.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::backend::DecodingParams;
use crate::prompting::{ChunkInfo, PromptRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub incident_id: u64,
    pub model_name: String,
    pub rubric_version: String,
    pub prompt_hash: String,
    #[serde(default)]
    pub chunk: Option<ChunkInfo>,
    #[serde(default)]
    pub decoding: DecodingParams,
    /// Earlier responses replaced by a corrective re-request, oldest first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub superseded: Vec<String>,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot write {path}: {message}")]
pub struct CacheWriteError {
    pub path: PathBuf,
    pub message: String,
}

/// Keeps the path component filesystem-safe.
fn path_component(text: &str) -> String {
    text.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(cache_dir: &Path, model_name: &str, rubric_version: &str) -> Self {
        Self {
            dir: cache_dir
                .join(path_component(model_name))
                .join(path_component(rubric_version)),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, incident_id: u64, chunk: Option<ChunkInfo>) -> PathBuf {
        match chunk {
            Some(c) => self.dir.join(format!("{incident_id}.c{}.json", c.index)),
            None => self.dir.join(format!("{incident_id}.json")),
        }
    }

    /// Returns the cached entry for `request`, if one exists with a matching
    /// prompt hash. Unreadable entries count as misses.
    pub fn lookup(&self, request: &PromptRequest) -> Option<CacheEntry> {
        let path = self.path_for(request.incident_id, request.chunk);
        let text = fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(entry) if entry.prompt_hash == request.prompt_hash => Some(entry),
            Ok(_) => {
                log::debug!("{}: prompt hash changed, ignoring cached response", path.display());
                None
            }
            Err(e) => {
                log::warn!("{}: unreadable cache entry: {e}", path.display());
                None
            }
        }
    }

    pub fn store(&self, entry: &CacheEntry) -> Result<PathBuf, CacheWriteError> {
        let path = self.path_for(entry.incident_id, entry.chunk);
        let mut text = serde_json::to_string_pretty(entry).expect("cache entries serialize");
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CacheWriteError> {
    let fail = |e: std::io::Error| CacheWriteError {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let parent = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(fail)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("entry");
    let temp = parent.join(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut file = fs::File::create(&temp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&temp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&temp);
    }
    result.map_err(fail)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(hash: &str, chunk: Option<ChunkInfo>) -> PromptRequest {
        PromptRequest {
            incident_id: 7,
            total_report_number: 1,
            report_ids: vec![1],
            reports_payload: String::new(),
            rendered_prompt: String::new(),
            prompt_hash: hash.into(),
            chunk,
        }
    }

    fn entry(hash: &str, chunk: Option<ChunkInfo>) -> CacheEntry {
        CacheEntry {
            incident_id: 7,
            model_name: "gpt/x".into(),
            rubric_version: "1.0.0".into(),
            prompt_hash: hash.into(),
            chunk,
            decoding: DecodingParams::default(),
            superseded: vec![],
            raw_response: "{}".into(),
        }
    }

    #[test]
    fn layout_and_hit_rules() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(tmp.path(), "gpt/x", "1.0.0");
        let path = cache.store(&entry("abc", None)).unwrap();
        assert_eq!(path, tmp.path().join("gpt_x/1.0.0/7.json"));
        assert!(cache.lookup(&request("abc", None)).is_some());
        assert!(cache.lookup(&request("other", None)).is_none());

        let chunk = Some(ChunkInfo { index: 1, of: 2 });
        let path = cache.store(&entry("def", chunk)).unwrap();
        assert!(path.ends_with("7.c1.json"));
        assert!(cache.lookup(&request("def", chunk)).is_some());

        let leftovers: Vec<_> = fs::read_dir(cache.dir())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn unwritable_location_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let blocker = tmp.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let cache = ResponseCache::new(&blocker, "m", "v");
        assert!(cache.store(&entry("a", None)).is_err());
    }
}
