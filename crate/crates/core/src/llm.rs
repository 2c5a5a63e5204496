//! LLM client abstraction shared by debunk augmentation and the chain-of-debunk
//! agents, with a deterministic mock backend, an HTTP backend and an audit log.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ENDPOINT_ENV: &str = "DIFND_LLM_ENDPOINT";
pub const KEY_ENV: &str = "DIFND_LLM_KEY";
pub const MODEL_ENV: &str = "DIFND_LLM_MODEL";

#[derive(Debug, Clone)]
pub struct LlmRequest<'a> {
    pub item_id: &'a str,
    pub stage: &'a str,
    pub prompt: &'a str,
    /// Media paths for multimodal agents (keyframes, audio).
    pub attachments: &'a [String],
    pub seed: u64,
    pub attempt: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmResponse {
    pub text: String,
    pub latency_ms: u64,
}

pub trait LlmClient: Send + Sync {
    fn backend_id(&self) -> &str;
    fn generate(&self, request: &LlmRequest<'_>) -> Result<LlmResponse>;
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(&Sha256::digest(prompt.as_bytes())[..8])
}

type Handler = dyn Fn(&LlmRequest<'_>) -> Result<String> + Send + Sync;

enum MockMode {
    Echo,
    Scripted(Mutex<VecDeque<String>>),
    Handler(Arc<Handler>),
}

/// Deterministic offline backend. Reports zero latency so records built from
/// its responses are byte-reproducible.
///
/// In echo mode the response is a digest of `(prompt, seed)` followed by every
/// prompt line that starts with `Keywords:` or `Style:`, and, when the prompt
/// asks for an `ANSWER:` line, a verdict chosen by the digest.
pub struct MockLlm {
    id: String,
    mode: MockMode,
}

impl MockLlm {
    pub fn echo() -> Self {
        Self {
            id: "mock-echo".into(),
            mode: MockMode::Echo,
        }
    }

    pub fn scripted<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            id: "mock-scripted".into(),
            mode: MockMode::Scripted(Mutex::new(responses.into_iter().map(Into::into).collect())),
        }
    }

    pub fn with_handler<F>(id: impl Into<String>, f: F) -> Self
    where
        F: Fn(&LlmRequest<'_>) -> Result<String> + Send + Sync + 'static,
    {
        Self {
            id: id.into(),
            mode: MockMode::Handler(Arc::new(f)),
        }
    }

    fn echo_response(request: &LlmRequest<'_>) -> String {
        let mut h = Sha256::new();
        h.update(request.prompt.as_bytes());
        h.update(request.seed.to_le_bytes());
        let digest = h.finalize();
        let mut out = format!("mock response {}", hex::encode(&digest[..6]));
        for line in request.prompt.lines() {
            let t = line.trim();
            if t.starts_with("Keywords:") || t.starts_with("Style:") {
                out.push('\n');
                out.push_str(t);
            }
        }
        if request.prompt.contains("ANSWER:") {
            let verdict = if digest[0] & 1 == 0 { "REAL" } else { "FAKE" };
            out = format!("ANSWER: {verdict}\n{out}");
        }
        out
    }
}

impl LlmClient for MockLlm {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &LlmRequest<'_>) -> Result<LlmResponse> {
        let text = match &self.mode {
            MockMode::Echo => Self::echo_response(request),
            MockMode::Scripted(queue) => {
                queue
                    .lock()
                    .expect("mock script lock")
                    .pop_front()
                    .ok_or_else(|| Error::LlmFailure {
                        stage: request.stage.to_string(),
                        attempts: request.attempt + 1,
                        reason: "mock script exhausted".into(),
                    })?
            }
            MockMode::Handler(f) => f(request)?,
        };
        Ok(LlmResponse { text, latency_ms: 0 })
    }
}

/// OpenAI-compatible chat-completions backend configured from the environment.
pub struct HttpLlm {
    endpoint: String,
    key: Option<String>,
    model: String,
}

impl HttpLlm {
    pub fn new(endpoint: impl Into<String>, key: Option<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            key,
            model: model.into(),
        }
    }

    pub fn from_env() -> Result<Self> {
        let endpoint =
            std::env::var(ENDPOINT_ENV).map_err(|_| Error::BackendUnavailable(format!("{ENDPOINT_ENV} is not set")))?;
        let key = std::env::var(KEY_ENV).ok();
        let model = std::env::var(MODEL_ENV).unwrap_or_else(|_| "default".into());
        Ok(Self::new(endpoint, key, model))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl LlmClient for HttpLlm {
    fn backend_id(&self) -> &str {
        &self.model
    }

    fn generate(&self, request: &LlmRequest<'_>) -> Result<LlmResponse> {
        let mut content = vec![serde_json::json!({"type": "text", "text": request.prompt})];
        for a in request.attachments {
            content.push(serde_json::json!({"type": "file_path", "path": a}));
        }
        let body = serde_json::json!({
            "model": self.model,
            "seed": request.seed,
            "messages": [{"role": "user", "content": content}],
        });
        let mut call = ureq::post(&self.endpoint);
        if let Some(key) = &self.key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let start = Instant::now();
        let failure = |reason: String| Error::LlmFailure {
            stage: request.stage.to_string(),
            attempts: request.attempt + 1,
            reason,
        };
        let resp: ChatResponse = call
            .send_json(body)
            .map_err(|e| failure(e.to_string()))?
            .into_json()
            .map_err(|e| failure(format!("bad response body: {e}")))?;
        let text = resp
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .unwrap_or_default();
        Ok(LlmResponse {
            text,
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub item_id: String,
    pub stage: String,
    pub prompt_hash: String,
    pub prompt: String,
    pub response: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub ts: u64,
}

/// Append-only JSONL audit log of every prompt/response pair. A single mutex
/// serializes writers; entries are also kept in memory for inspection.
pub struct TranscriptLog {
    sink: Mutex<Option<BufWriter<File>>>,
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl Default for TranscriptLog {
    fn default() -> Self {
        Self::memory()
    }
}

impl TranscriptLog {
    pub fn memory() -> Self {
        Self {
            sink: Mutex::new(None),
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            sink: Mutex::new(Some(BufWriter::new(file))),
            entries: Mutex::new(Vec::new()),
        })
    }

    pub fn record(&self, request: &LlmRequest<'_>, response: &str, backend_id: &str, latency_ms: u64) {
        let entry = TranscriptEntry {
            item_id: request.item_id.to_string(),
            stage: request.stage.to_string(),
            prompt_hash: prompt_hash(request.prompt),
            prompt: request.prompt.to_string(),
            response: response.to_string(),
            backend_id: backend_id.to_string(),
            latency_ms,
            ts: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        if let Some(w) = self.sink.lock().expect("transcript lock").as_mut() {
            if let Ok(line) = serde_json::to_string(&entry) {
                if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                    log::warn!("transcript write failed: {e}");
                }
            }
        }
        self.entries.lock().expect("transcript lock").push(entry);
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.entries.lock().expect("transcript lock").clone()
    }
}

/// Calls `client`, treating errors and blank responses as failures, for at most
/// `1 + max_retries` attempts. Every attempt is logged.
pub fn generate_with_retry(
    client: &dyn LlmClient,
    request: LlmRequest<'_>,
    max_retries: usize,
    log: &TranscriptLog,
) -> Result<LlmResponse> {
    let mut last = String::from("no attempt made");
    for attempt in 0..=max_retries {
        let req = LlmRequest {
            attempt,
            ..request.clone()
        };
        match client.generate(&req) {
            Ok(resp) => {
                log.record(&req, &resp.text, client.backend_id(), resp.latency_ms);
                if !resp.text.trim().is_empty() {
                    return Ok(resp);
                }
                last = "empty response".into();
            }
            Err(e) => {
                log.record(&req, &format!("<error: {e}>"), client.backend_id(), 0);
                last = e.to_string();
            }
        }
    }
    Err(Error::LlmFailure {
        stage: request.stage.to_string(),
        attempts: max_retries + 1,
        reason: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str) -> LlmRequest<'_> {
        LlmRequest {
            item_id: "i1",
            stage: "test",
            prompt,
            attachments: &[],
            seed: 7,
            attempt: 0,
        }
    }

    #[test]
    fn echo_is_deterministic_and_echoes_markers() {
        let m = MockLlm::echo();
        let p = "Write something.\nKeywords: Alpha, Beta\nStyle: friendly";
        let a = m.generate(&req(p)).unwrap();
        let b = m.generate(&req(p)).unwrap();
        assert_eq!(a, b);
        assert!(a.text.contains("Keywords: Alpha, Beta"));
        assert!(a.text.contains("Style: friendly"));
        let other = m.generate(&LlmRequest { seed: 8, ..req(p) }).unwrap();
        assert_ne!(a.text, other.text);
    }

    #[test]
    fn retry_skips_empty_responses() {
        let m = MockLlm::scripted(["", "  ", "ok"]);
        let log = TranscriptLog::memory();
        let r = generate_with_retry(&m, req("p"), 3, &log).unwrap();
        assert_eq!(r.text, "ok");
        assert_eq!(log.entries().len(), 3);
    }

    #[test]
    fn retry_gives_up() {
        let m = MockLlm::scripted(["", "", "", "", "late"]);
        let log = TranscriptLog::memory();
        match generate_with_retry(&m, req("p"), 3, &log) {
            Err(Error::LlmFailure { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn file_log_is_jsonl() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let log = TranscriptLog::append_to(f.path()).unwrap();
        let m = MockLlm::echo();
        generate_with_retry(&m, req("hello"), 0, &log).unwrap();
        generate_with_retry(&m, req("again"), 0, &log).unwrap();
        drop(log);
        let text = std::fs::read_to_string(f.path()).unwrap();
        let lines: Vec<TranscriptEntry> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].prompt_hash, prompt_hash("hello"));
        assert_eq!(lines[1].backend_id, "mock-echo");
    }

    #[test]
    fn http_needs_endpoint() {
        std::env::remove_var(ENDPOINT_ENV);
        assert!(matches!(HttpLlm::from_env(), Err(Error::BackendUnavailable(_))));
    }
}
