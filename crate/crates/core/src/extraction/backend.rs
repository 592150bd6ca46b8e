//! Text-model backends.
//!
//! [`HttpBackend`] speaks the OpenAI-compatible chat-completions protocol.
//! [`ReplayBackend`] never answers; in replay mode every response must come
//! from the cache.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const DEFAULT_API_KEY_ENV: &str = "LLM_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Replay,
}

/// Sampling parameters sent with every request. The defaults ask for
/// deterministic decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: Option<u32>,
    pub seed: Option<u64>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: None,
            seed: Some(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_name: String,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    /// Name of the environment variable holding the API key. The key itself
    /// is never part of the configuration.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    pub cache_dir: PathBuf,
    #[serde(default)]
    pub decoding: DecodingParams,
    /// Base delay before retrying a rate-limited request; doubles per attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}
fn default_max_parallel() -> usize {
    4
}
fn default_retry_limit() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1000
}
fn default_timeout_secs() -> u64 {
    600
}

impl BackendConfig {
    /// A replay configuration reading from `cache_dir`.
    pub fn replay(model_name: &str, cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Replay,
            model_name: model_name.to_string(),
            endpoint_url: None,
            api_key_env: default_api_key_env(),
            max_parallel: 1,
            retry_limit: 0,
            cache_dir: cache_dir.into(),
            decoding: DecodingParams::default(),
            backoff_ms: default_backoff_ms(),
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn http(model_name: &str, endpoint_url: &str, cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Http,
            endpoint_url: Some(endpoint_url.to_string()),
            max_parallel: default_max_parallel(),
            retry_limit: default_retry_limit(),
            ..Self::replay(model_name, cache_dir)
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let invalid = |m: &str| Err(BackendError::InvalidConfig(m.to_string()));
        if self.max_parallel == 0 {
            return invalid("max_parallel must be at least 1");
        }
        if self.model_name.trim().is_empty() {
            return invalid("model_name is empty");
        }
        if self.api_key_env.trim().is_empty() {
            return invalid("api_key_env is empty");
        }
        if self.kind == BackendKind::Http && self.endpoint_url.as_deref().is_none_or(|u| u.trim().is_empty()) {
            return invalid("an http backend needs endpoint_url");
        }
        Ok(())
    }

    /// Builds the backend this configuration describes.
    pub fn connect(&self) -> Result<Box<dyn Backend>, BackendError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Replay => Box::new(ReplayBackend),
            BackendKind::Http => Box::new(HttpBackend::from_config(self)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {message}")]
    BackendUnavailable { message: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
}

impl BackendError {
    fn unavailable(message: impl Into<String>) -> Self {
        Self::BackendUnavailable {
            message: message.into(),
        }
    }
}

pub trait Backend: Sync {
    /// Sends one prompt and returns the model's message content.
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;

    /// Whether a fresh request is possible. Replay backends return false.
    fn is_live(&self) -> bool {
        true
    }
}

pub struct ReplayBackend;

impl Backend for ReplayBackend {
    fn complete(&self, _prompt: &str) -> Result<String, BackendError> {
        Err(BackendError::unavailable(
            "replay backend has no cached response for this prompt",
        ))
    }

    fn is_live(&self) -> bool {
        false
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint_url: String,
    api_key: String,
    api_key_env: String,
    model_name: String,
    decoding: DecodingParams,
    retry_limit: u32,
    backoff: Duration,
}

impl HttpBackend {
    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                BackendError::unavailable(format!("environment variable {} is not set", config.api_key_env))
            })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::unavailable(format!("cannot build http client: {e}")))?;
        Ok(Self {
            client,
            endpoint_url: config.endpoint_url.clone().unwrap_or_default(),
            api_key,
            api_key_env: config.api_key_env.clone(),
            model_name: config.model_name.clone(),
            decoding: config.decoding.clone(),
            retry_limit: config.retry_limit,
            backoff: Duration::from_millis(config.backoff_ms),
        })
    }

    fn body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.decoding.temperature,
            "top_p": self.decoding.top_p,
        });
        if let Some(max) = self.decoding.max_tokens {
            body["max_tokens"] = json!(max);
        }
        if let Some(seed) = self.decoding.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

fn message_content(body: &Value) -> Option<String> {
    body.pointer("/choices/0/message/content")?.as_str().map(str::to_string)
}

impl Backend for HttpBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let body = self.body(prompt);
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let response = self
                .client
                .post(&self.endpoint_url)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send()
                .map_err(|e| BackendError::unavailable(format!("{}: {e}", self.endpoint_url)))?;
            let status = response.status();
            if status.as_u16() == 401 || status.as_u16() == 403 {
                return Err(BackendError::unavailable(format!(
                    "{} rejected the key from {} ({status})",
                    self.endpoint_url, self.api_key_env
                )));
            }
            if status.as_u16() == 429 || status.is_server_error() {
                if attempt > self.retry_limit {
                    return Err(if status.as_u16() == 429 {
                        BackendError::RateLimited { attempts: attempt }
                    } else {
                        BackendError::unavailable(format!("{} returned {status}", self.endpoint_url))
                    });
                }
                let wait = response
                    .headers()
                    .get(reqwest::header::RETRY_AFTER)
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(Duration::from_secs)
                    .unwrap_or(self.backoff * 2u32.saturating_pow(attempt - 1));
                log::warn!("{} returned {status}, retrying in {wait:?}", self.endpoint_url);
                std::thread::sleep(wait);
                continue;
            }
            if !status.is_success() {
                return Err(BackendError::unavailable(format!(
                    "{} returned {status}",
                    self.endpoint_url
                )));
            }
            let json: Value = response
                .json()
                .map_err(|e| BackendError::unavailable(format!("unreadable response body: {e}")))?;
            return message_content(&json)
                .ok_or_else(|| BackendError::unavailable("response has no choices[0].message.content"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Answers every request with `status` and `body`, counting requests.
    fn serve(status: &'static str, body: &'static str, expected: usize) -> (String, std::thread::JoinHandle<usize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut served = 0;
            for stream in listener.incoming().take(expected) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; length];
                reader.read_exact(&mut buf).unwrap();
                let reply = format!(
                    "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
                served += 1;
            }
            served
        });
        (url, handle)
    }

    fn config(url: &str, env: &str) -> BackendConfig {
        let mut c = BackendConfig::http("test-model", url, "/nonexistent");
        c.api_key_env = env.to_string();
        c.backoff_ms = 1;
        c.retry_limit = 2;
        c
    }

    #[test]
    fn missing_key_names_the_variable() {
        let c = config("http://127.0.0.1:9/", "HARMSCOPE_TEST_UNSET_KEY");
        let err = c.connect().err().unwrap();
        assert!(err.to_string().contains("HARMSCOPE_TEST_UNSET_KEY"), "{err}");
    }

    #[test]
    fn rejected_key_names_the_variable() {
        std::env::set_var("HARMSCOPE_TEST_BAD_KEY", "nope");
        let (url, server) = serve("401 Unauthorized", "{}", 1);
        let backend = config(&url, "HARMSCOPE_TEST_BAD_KEY").connect().unwrap();
        let err = backend.complete("hi").unwrap_err();
        assert!(matches!(err, BackendError::BackendUnavailable { .. }));
        assert!(err.to_string().contains("HARMSCOPE_TEST_BAD_KEY"), "{err}");
        assert_eq!(server.join().unwrap(), 1);
    }

    #[test]
    fn rate_limit_retries_then_fails() {
        std::env::set_var("HARMSCOPE_TEST_RL_KEY", "k");
        let (url, server) = serve("429 Too Many Requests", "{}", 3);
        let backend = config(&url, "HARMSCOPE_TEST_RL_KEY").connect().unwrap();
        assert_eq!(
            backend.complete("hi").unwrap_err(),
            BackendError::RateLimited { attempts: 3 }
        );
        assert_eq!(server.join().unwrap(), 3);
    }

    #[test]
    fn success_returns_message_content() {
        std::env::set_var("HARMSCOPE_TEST_OK_KEY", "k");
        let (url, server) = serve("200 OK", r#"{"choices":[{"message":{"content":"{\"a\":1}"}}]}"#, 1);
        let backend = config(&url, "HARMSCOPE_TEST_OK_KEY").connect().unwrap();
        assert_eq!(backend.complete("hi").unwrap(), r#"{"a":1}"#);
        server.join().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut c = BackendConfig::replay("m", "c");
        assert!(c.validate().is_ok());
        c.max_parallel = 0;
        assert!(c.validate().is_err());
        let mut h = BackendConfig::http("m", "", "c");
        assert!(h.validate().is_err());
        h.endpoint_url = Some("http://x".into());
        assert!(h.validate().is_ok());
    }

    #[test]
    fn config_rejects_inline_key() {
        let text = r#"{"kind":"http","model_name":"m","cache_dir":"c","api_key":"secret"}"#;
        assert!(serde_json::from_str::<BackendConfig>(text).is_err());
    }
}
