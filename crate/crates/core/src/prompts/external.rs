use super::TextEncoder;
use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

/// Connection settings for an external embedding service.
#[derive(Debug, Clone)]
pub struct EncoderClientConfig {
    /// Full URL of the embedding endpoint.
    pub endpoint: String,
    /// Expected vector width.
    pub dim: usize,
    pub timeout_ms: u64,
    /// Retries after the first attempt (transport failures only).
    pub max_retries: u32,
    /// First retry delay; doubles on each subsequent retry.
    pub backoff_base_ms: u64,
}

impl EncoderClientConfig {
    pub fn new(endpoint: impl Into<String>, dim: usize) -> Self {
        EncoderClientConfig {
            endpoint: endpoint.into(),
            dim,
            timeout_ms: 2000,
            max_retries: 3,
            backoff_base_ms: 100,
        }
    }
}

/// Client for an external embedding service speaking
/// `POST {"input": text} -> {"embedding": [f64; dim]}`.
///
/// Responses are cached by SHA-256 of the input text, so repeated
/// embeddings of the same prompt hit the network once per process.
pub struct ExternalEncoder {
    cfg: EncoderClientConfig,
    client: reqwest::blocking::Client,
    cache: Mutex<HashMap<[u8; 32], Vec<f64>>>,
}

#[derive(serde::Serialize)]
struct EmbedRequest<'a> {
    input: &'a str,
}

#[derive(serde::Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

enum Attempt {
    /// Connection failures, timeouts, non-2xx statuses, malformed bodies:
    /// worth retrying.
    Transport(String),
    /// The service answered cleanly but violated the contract: fail fast.
    Protocol(String),
}

impl ExternalEncoder {
    pub fn new(cfg: EncoderClientConfig) -> Result<Self> {
        if cfg.endpoint.is_empty() {
            return Err(Error::config("external encoder endpoint is empty"));
        }
        if cfg.dim == 0 {
            return Err(Error::config("external encoder width must be positive"));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| Error::Encoder(format!("failed to build http client: {e}")))?;
        Ok(ExternalEncoder {
            cfg,
            client,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Number of cached embeddings.
    pub fn cache_len(&self) -> usize {
        self.cache.lock().expect("cache poisoned").len()
    }

    fn attempt(&self, text: &str) -> std::result::Result<Vec<f64>, Attempt> {
        let resp = self
            .client
            .post(&self.cfg.endpoint)
            .json(&EmbedRequest { input: text })
            .send()
            .map_err(|e| Attempt::Transport(format!("request failed: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Attempt::Transport(format!("http status {status}")));
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| Attempt::Transport(format!("malformed body: {e}")))?;
        if body.embedding.len() != self.cfg.dim {
            return Err(Attempt::Protocol(format!(
                "embedding width {} != expected {}",
                body.embedding.len(),
                self.cfg.dim
            )));
        }
        if body.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Attempt::Protocol("embedding contains non-finite values".into()));
        }
        Ok(body.embedding)
    }
}

impl TextEncoder for ExternalEncoder {
    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let key: [u8; 32] = Sha256::digest(text.as_bytes()).into();
        if let Some(hit) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let mut delay = Duration::from_millis(self.cfg.backoff_base_ms);
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(text) {
                Ok(v) => {
                    self.cache
                        .lock()
                        .expect("cache poisoned")
                        .insert(key, v.clone());
                    return Ok(v);
                }
                Err(Attempt::Protocol(msg)) => return Err(Error::Protocol(msg)),
                Err(Attempt::Transport(msg)) => last = msg,
            }
        }
        Err(Error::Encoder(format!(
            "endpoint {} unavailable after {} attempts: {last}",
            self.cfg.endpoint,
            self.cfg.max_retries + 1
        )))
    }

    fn dim(&self) -> usize {
        self.cfg.dim
    }
}
