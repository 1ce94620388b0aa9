use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::prompt::PromptBundle;
use super::OrchestratorError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_s: f64,
    pub max_attempts: u32,
    pub max_inflight: usize,
    pub backoff_initial_ms: u64,
    pub backoff_max_ms: u64,
    pub temperature: f64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "mllm".into(),
            token_env: "VLAFORGE_API_TOKEN".into(),
            timeout_s: 60.0,
            max_attempts: 4,
            max_inflight: 4,
            backoff_initial_ms: 500,
            backoff_max_ms: 30_000,
            temperature: 0.0,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.max_attempts == 0 || self.max_inflight == 0 || !(self.timeout_s > 0.0) {
            return Err(OrchestratorError::Config(
                "max_attempts, max_inflight and timeout_s must be positive".into(),
            ));
        }
        if self.base_url.trim().is_empty() || self.model.trim().is_empty() {
            return Err(OrchestratorError::Config("base_url and model are required".into()));
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .backoff_initial_ms
            .saturating_mul(1u64 << (attempt.saturating_sub(1)).min(30))
            .min(self.backoff_max_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub retry_after: Option<Duration>,
    pub body: String,
}

/// Minimal POST interface so tests can script endpoint behaviour.
pub trait HttpTransport: Send + Sync {
    /// `Err` is a connection-level failure (no HTTP status).
    fn post_json(&self, url: &str, token: &str, body: &Value, timeout: Duration) -> Result<HttpResponse, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, OrchestratorError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| OrchestratorError::Config(format!("http client: {e}")))?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(&self, url: &str, token: &str, body: &Value, timeout: Duration) -> Result<HttpResponse, String> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(token)
            .json(body)
            .timeout(timeout)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, retry_after, body })
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub total_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub key: String,
    pub text: String,
    pub usage: Usage,
    pub attempts: u32,
    pub request_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub window_key: String,
    pub request_hash: String,
    pub attempts: u32,
    pub status: String,
    pub text: Option<String>,
}

/// Append-only JSONL log of endpoint traffic; writes are serialized.
pub struct AuditLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl AuditLog {
    pub fn open(path: &Path) -> Result<Self, OrchestratorError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_owned(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &AuditRecord) -> Result<(), OrchestratorError> {
        let mut line = serde_json::to_string(record).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// Successful completions by key; later records win.
    pub fn replay(path: &Path) -> Result<BTreeMap<String, AuditRecord>, OrchestratorError> {
        let file = File::open(path)
            .map_err(|_| OrchestratorError::MissingInput(format!("audit log {} not found", path.display())))?;
        let mut out = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: AuditRecord = serde_json::from_str(&line).map_err(|e| {
                OrchestratorError::Malformed(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            if rec.status == "ok" && rec.text.is_some() {
                out.insert(rec.window_key.clone(), rec);
            }
        }
        Ok(out)
    }
}

pub fn request_body(bundle: &PromptBundle, endpoint: &EndpointConfig) -> Value {
    let mut content = vec![json!({"type": "text", "text": bundle.user_text})];
    content.extend(bundle.media_refs.iter().map(|u| json!({"type": "image_url", "image_url": {"url": u}})));
    json!({
        "model": endpoint.model,
        "temperature": endpoint.temperature,
        "messages": [
            {"role": "system", "content": bundle.system_text},
            {"role": "user", "content": content},
        ],
    })
}

pub fn request_hash(body: &Value) -> String {
    hex::encode(Sha256::digest(body.to_string().as_bytes()))
}

fn parse_completion(body: &str) -> Result<(String, Usage), OrchestratorError> {
    let v: Value = serde_json::from_str(body).map_err(|e| OrchestratorError::Malformed(format!("not JSON: {e}")))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| OrchestratorError::Malformed("missing choices[0].message.content".into()))?;
    let usage = v
        .get("usage")
        .map(|u| serde_json::from_value::<Usage>(u.clone()))
        .transpose()
        .map_err(|e| OrchestratorError::Malformed(format!("usage: {e}")))?
        .unwrap_or_default();
    Ok((text.to_owned(), usage))
}

pub struct MllmClient<'a> {
    pub endpoint: EndpointConfig,
    token: String,
    transport: &'a dyn HttpTransport,
    sleeper: &'a dyn Sleeper,
    audit: Option<&'a AuditLog>,
}

impl<'a> MllmClient<'a> {
    /// Reads the bearer token from the configured environment variable.
    pub fn from_env(
        endpoint: EndpointConfig,
        transport: &'a dyn HttpTransport,
        sleeper: &'a dyn Sleeper,
        audit: Option<&'a AuditLog>,
    ) -> Result<Self, OrchestratorError> {
        let token = std::env::var(&endpoint.token_env)
            .ok()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| OrchestratorError::Auth(format!("environment variable {} is not set", endpoint.token_env)))?;
        Ok(Self::with_token(endpoint, token, transport, sleeper, audit))
    }

    pub fn with_token(
        endpoint: EndpointConfig,
        token: String,
        transport: &'a dyn HttpTransport,
        sleeper: &'a dyn Sleeper,
        audit: Option<&'a AuditLog>,
    ) -> Self {
        Self { endpoint, token, transport, sleeper, audit }
    }

    fn log(&self, key: &str, hash: &str, attempts: u32, result: &Result<RawCompletion, OrchestratorError>) {
        let Some(log) = self.audit else { return };
        let (status, text) = match result {
            Ok(c) => ("ok".to_owned(), Some(c.text.clone())),
            Err(e) => (format!("error: {}", e.kind()), None),
        };
        let rec = AuditRecord {
            window_key: key.to_owned(),
            request_hash: hash.to_owned(),
            attempts,
            status,
            text,
        };
        if let Err(e) = log.append(&rec) {
            tracing::warn!(error = %e, "audit log write failed");
        }
    }

    /// One chat completion with retries on 429, 5xx and connection errors,
    /// never more than `max_attempts` requests.
    pub fn request_completion(&self, bundle: &PromptBundle) -> Result<RawCompletion, OrchestratorError> {
        let body = request_body(bundle, &self.endpoint);
        let hash = request_hash(&body);
        let key = bundle.key();
        let url = self.endpoint.url();
        let timeout = Duration::from_secs_f64(self.endpoint.timeout_s);
        let mut attempts = 0;
        let result = loop {
            attempts += 1;
            let (err, wait) = match self.transport.post_json(&url, &self.token, &body, timeout) {
                Err(msg) => (OrchestratorError::Transport { attempts, message: msg }, None),
                Ok(r) if (200..300).contains(&r.status) => {
                    break parse_completion(&r.body).map(|(text, usage)| RawCompletion {
                        key: key.clone(),
                        text,
                        usage,
                        attempts,
                        request_hash: hash.clone(),
                    });
                }
                Ok(r) if r.status == 401 || r.status == 403 => {
                    break Err(OrchestratorError::Auth(format!("endpoint answered {}", r.status)));
                }
                Ok(r) if r.status == 429 => (
                    OrchestratorError::RateLimit {
                        attempts,
                        retry_after_s: r.retry_after.map(|d| d.as_secs_f64()),
                    },
                    r.retry_after,
                ),
                Ok(r) if r.status >= 500 => (
                    OrchestratorError::Transport {
                        attempts,
                        message: format!("status {}", r.status),
                    },
                    None,
                ),
                Ok(r) => {
                    break Err(OrchestratorError::Transport {
                        attempts,
                        message: format!("status {}: {}", r.status, r.body.chars().take(200).collect::<String>()),
                    })
                }
            };
            if attempts >= self.endpoint.max_attempts {
                break Err(err);
            }
            let delay = wait.unwrap_or_else(|| self.endpoint.backoff(attempts));
            tracing::debug!(key = %key, attempt = attempts, ?delay, error = %err, "retrying");
            self.sleeper.sleep(delay);
        };
        self.log(&key, &hash, attempts, &result);
        result
    }
}
