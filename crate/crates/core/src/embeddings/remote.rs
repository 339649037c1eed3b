//! Client for an HTTP+JSON embeddings endpoint.
//!
//! Request: `POST {"model": ..., "input": [...]}` with a bearer token.
//! Response: `{"data": [{"embedding": [...], "index": n}, ...]}`.

use std::thread;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{EmbedError, Embedder, EmbeddingVector, ProviderConfig};

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct Response {
    data: Vec<Item>,
}

#[derive(Deserialize)]
struct Item {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

pub struct RemoteEmbedder {
    cfg: ProviderConfig,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Retry(String),
    Fatal(EmbedError),
}

impl RemoteEmbedder {
    pub fn new(cfg: ProviderConfig) -> Result<Self, EmbedError> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.request_timeout_s))
            .build()
            .map_err(|e| EmbedError::Config(e.to_string()))?;
        Ok(RemoteEmbedder { cfg, client })
    }

    fn api_key(&self) -> Option<String> {
        std::env::var(&self.cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
    }

    fn attempt(&self, batch: &[&str]) -> Result<Vec<Vec<f64>>, Attempt> {
        let url = self.cfg.endpoint_url.as_deref().unwrap_or_default();
        let model = self.cfg.model_name.as_deref().unwrap_or_default();
        let mut req = self.client.post(url).json(&Request {
            model,
            input: batch,
        });
        if let Some(key) = self.api_key() {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(Attempt::Fatal(EmbedError::Auth(format!("HTTP {status}"))));
        }
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(EmbedError::Network(format!(
                "HTTP {status}"
            ))));
        }
        let body: Response = resp
            .json()
            .map_err(|e| Attempt::Fatal(EmbedError::Network(format!("malformed response: {e}"))))?;
        if body.data.len() != batch.len() {
            return Err(Attempt::Fatal(EmbedError::Network(format!(
                "expected {} embeddings, got {}",
                batch.len(),
                body.data.len()
            ))));
        }
        let mut items = body.data;
        if items.iter().all(|i| i.index.is_some()) {
            items.sort_by_key(|i| i.index);
        }
        Ok(items.into_iter().map(|i| i.embedding).collect())
    }

    /// One batch with exponential backoff between attempts.
    fn request(&self, batch: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let attempts = self.cfg.retries.max(1);
        let mut delay = Duration::from_millis(self.cfg.backoff_ms);
        let mut last = String::new();
        for i in 0..attempts {
            match self.attempt(batch) {
                Ok(raw) => {
                    let tag = self.tag();
                    return raw
                        .into_iter()
                        .map(|v| {
                            if v.len() != self.cfg.dim {
                                return Err(EmbedError::DimensionMismatch {
                                    expected: self.cfg.dim,
                                    found: v.len(),
                                });
                            }
                            EmbeddingVector::new(v, &tag)
                        })
                        .collect();
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    warn!(
                        "embedding request attempt {} of {attempts} failed: {msg}",
                        i + 1
                    );
                    last = msg;
                    if i + 1 < attempts {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(EmbedError::Network(format!(
            "giving up after {attempts} attempts: {last}"
        )))
    }
}

impl Embedder for RemoteEmbedder {
    fn tag(&self) -> String {
        format!(
            "remote-{}",
            self.cfg.model_name.as_deref().unwrap_or("unknown")
        )
    }

    fn dim(&self) -> usize {
        self.cfg.dim
    }

    /// Splits into batches of at most `max_batch` and keeps at most
    /// `max_in_flight` requests outstanding.
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let batches: Vec<&[&str]> = texts.chunks(self.cfg.max_batch).collect();
        let mut out = Vec::with_capacity(texts.len());
        for wave in batches.chunks(self.cfg.max_in_flight) {
            let results: Vec<Result<Vec<EmbeddingVector>, EmbedError>> = thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|b| s.spawn(move || self.request(b)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join()
                            .unwrap_or_else(|_| Err(EmbedError::Network("worker panicked".into())))
                    })
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}
