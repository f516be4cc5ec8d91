//! JSON-over-HTTP transport, retry policy and transcript recording.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ProviderError;

#[derive(Debug, Clone)]
pub struct HttpRequest {
    pub url: String,
    /// Sent on the wire only; never recorded in transcripts.
    pub headers: Vec<(String, String)>,
    pub body: Value,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        Self { status: 200, body: body.into() }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Connect(String),
}

pub trait Transport: Send + Sync {
    fn post_json(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Blocking HTTP(S) transport.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| ProviderError::InvalidConfig(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let body = serde_json::to_vec(&request.body).map_err(|e| TransportError::Connect(e.to_string()))?;
        let mut builder = self
            .client
            .post(&request.url)
            .timeout(request.timeout)
            .header("content-type", "application/json")
            .body(body);
        for (k, v) in &request.headers {
            builder = builder.header(k.as_str(), v.as_str());
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_secs: f64,
    pub cap_secs: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_backoff_secs: 0.5, cap_secs: 8.0 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): `min(cap, base * 2^retry)`.
    pub fn delay(&self, retry: u32) -> Duration {
        let secs = self.base_backoff_secs * 2f64.powi(retry.min(62) as i32);
        Duration::from_secs_f64(secs.min(self.cap_secs).max(0.0))
    }

    /// Every delay this policy can produce, in order.
    pub fn schedule(&self) -> Vec<Duration> {
        (0..self.max_attempts.saturating_sub(1)).map(|i| self.delay(i)).collect()
    }
}

fn retryable(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

/// Sends `request`, retrying transport failures, 408, 429 and 5xx responses
/// up to `policy.max_attempts` total attempts. Other non-2xx statuses fail
/// immediately.
pub fn send_with_retry(
    transport: &dyn Transport,
    request: &HttpRequest,
    policy: &RetryPolicy,
) -> Result<HttpResponse, ProviderError> {
    let attempts = policy.max_attempts.max(1);
    let mut last = ProviderError::Http { status: None, attempts: 0, message: "no attempt made".into() };
    for attempt in 1..=attempts {
        if attempt > 1 {
            std::thread::sleep(policy.delay(attempt - 2));
        }
        match transport.post_json(request) {
            Ok(resp) if resp.is_success() => return Ok(resp),
            Ok(resp) => {
                let err = ProviderError::Http {
                    status: Some(resp.status),
                    attempts: attempt,
                    message: truncate(&resp.body, 200),
                };
                if !retryable(resp.status) {
                    return Err(err);
                }
                last = err;
            }
            Err(TransportError::Timeout) => last = ProviderError::Timeout { attempts: attempt },
            Err(TransportError::Connect(msg)) => {
                last = ProviderError::Http { status: None, attempts: attempt, message: msg }
            }
        }
    }
    Err(last)
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub url: String,
    pub request: Value,
    pub response: Option<HttpResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Wraps a transport and appends every exchange to a JSON-lines transcript.
/// Headers (and therefore credentials) are never written.
pub struct RecordingTransport<T> {
    inner: T,
    file: Mutex<File>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { inner, file: Mutex::new(file) })
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn post_json(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let result = self.inner.post_json(request);
        let entry = TranscriptEntry {
            url: request.url.clone(),
            request: request.body.clone(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| format!("{e:?}")),
        };
        if let Ok(mut line) = serde_json::to_vec(&entry) {
            line.push(b'\n');
            let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
            let _ = f.write_all(&line);
        }
        result
    }
}

/// Serves responses from a recorded transcript, in order.
pub struct ReplayTransport {
    entries: Vec<TranscriptEntry>,
    next: AtomicUsize,
    source: PathBuf,
}

impl ReplayTransport {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            entries.push(entry);
        }
        Ok(Self { entries, next: AtomicUsize::new(0), source: path.to_path_buf() })
    }

    pub fn remaining(&self) -> usize {
        self.entries.len().saturating_sub(self.next.load(Ordering::SeqCst))
    }
}

impl Transport for ReplayTransport {
    fn post_json(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let i = self.next.fetch_add(1, Ordering::SeqCst);
        let entry = self
            .entries
            .get(i)
            .ok_or_else(|| TransportError::Connect(format!("transcript {} exhausted", self.source.display())))?;
        if entry.url != request.url || entry.request != request.body {
            return Err(TransportError::Connect(format!("request {i} does not match transcript")));
        }
        match (&entry.response, &entry.error) {
            (Some(resp), _) => Ok(resp.clone()),
            (None, Some(e)) if e.contains("Timeout") => Err(TransportError::Timeout),
            (None, e) => Err(TransportError::Connect(e.clone().unwrap_or_default())),
        }
    }
}

/// Refuses every request and counts the attempts. Used to prove that offline
/// pipelines never touch the network.
#[derive(Debug, Default)]
pub struct DenyTransport {
    attempts: AtomicUsize,
}

impl DenyTransport {
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }
}

impl Transport for DenyTransport {
    fn post_json(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        Err(TransportError::Connect(format!("network access denied: {}", request.url)))
    }
}
