//! Client for a remote sentence-embedding service.
//!
//! Protocol: `POST <endpoint>/encode` with `{"texts": [...]}`, answered by
//! `{"vectors": [[...], ...], "dim": D}`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::EmbedError;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Base URL; `/encode` is appended.
    pub url: String,
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub retries: u32,
    /// Maximum texts per request.
    pub batch_size: usize,
    pub max_in_flight: usize,
    /// First retry delay; doubles on every further attempt.
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout: Duration::from_millis(5000),
            retries: 3,
            batch_size: 32,
            max_in_flight: 4,
            backoff: Duration::from_millis(100),
        }
    }
}

#[derive(Serialize)]
struct EncodeRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EncodeResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

#[derive(Clone)]
pub struct RemoteEncoder {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEncoder")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl RemoteEncoder {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Encodes `texts` in order. Requests carry at most `batch_size` texts
    /// and at most `max_in_flight` of them run concurrently.
    pub fn encode_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let chunks: Vec<&[String]> = texts.chunks(self.config.batch_size.max(1)).collect();
        let results: Vec<Mutex<Option<Result<Vec<Vec<f64>>, EmbedError>>>> =
            chunks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.config.max_in_flight.clamp(1, chunks.len());

        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= chunks.len() {
                        break;
                    }
                    let r = self.request_with_retries(chunks[i]);
                    let failed = r.is_err();
                    *results[i].lock().unwrap() = Some(r);
                    if failed {
                        // stop handing out new chunks
                        next.store(chunks.len(), Ordering::Relaxed);
                    }
                });
            }
        });

        let mut out = Vec::with_capacity(texts.len());
        let mut dim = None;
        for slot in results {
            let Some(chunk) = slot.into_inner().unwrap() else {
                continue;
            };
            for v in chunk? {
                match dim {
                    None => dim = Some(v.len()),
                    Some(d) if d != v.len() => {
                        return Err(EmbedError::Protocol(format!(
                            "vector dimension changed across batches ({d} vs {})",
                            v.len()
                        )))
                    }
                    _ => {}
                }
                out.push(v);
            }
        }
        if out.len() != texts.len() {
            return Err(EmbedError::Protocol(format!(
                "received {} vectors for {} texts",
                out.len(),
                texts.len()
            )));
        }
        Ok(out)
    }

    fn request_with_retries(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.request(texts, attempt) {
                Err(e) if e.is_retriable() && attempt <= self.config.retries => {
                    let delay = self.config.backoff * 2u32.saturating_pow(attempt - 1);
                    warn!("encoder request failed ({e}); retrying in {delay:?}");
                    thread::sleep(delay);
                }
                other => return other,
            }
        }
    }

    fn request(&self, texts: &[String], attempt: u32) -> Result<Vec<Vec<f64>>, EmbedError> {
        let url = format!("{}/encode", self.config.url.trim_end_matches('/'));
        debug!("POST {url} ({} texts, attempt {attempt})", texts.len());
        let remote_err = |status, message: String| EmbedError::Remote {
            status,
            attempts: attempt,
            message,
        };
        let mut response = self
            .agent
            .post(&url)
            .send_json(EncodeRequest { texts })
            .map_err(|e| remote_err(None, e.to_string()))?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let body = response.body_mut().read_to_string().unwrap_or_default();
            return Err(remote_err(Some(status), body));
        }
        let parsed: EncodeResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Protocol(format!("unreadable response body: {e}")))?;
        if parsed.vectors.len() != texts.len() {
            return Err(EmbedError::Protocol(format!(
                "received {} vectors for {} texts",
                parsed.vectors.len(),
                texts.len()
            )));
        }
        if let Some(v) = parsed.vectors.iter().find(|v| v.len() != parsed.dim) {
            return Err(EmbedError::Protocol(format!(
                "vector of length {} but declared dim {}",
                v.len(),
                parsed.dim
            )));
        }
        Ok(parsed.vectors)
    }
}
