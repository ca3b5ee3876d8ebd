//! Embedding providers: a deterministic hashing embedder that needs nothing
//! beyond this crate, and an HTTP client for an external embedding service.
//!
//! Service wire format (UTF-8 JSON):
//!
//! ```text
//! GET  /health  -> {"model_id": "...", "dimension": 384}
//! POST /embed   <- {"texts": ["...", ...]}
//!               -> {"model_id": "...", "dimension": 384, "vectors": [[...], ...]}
//! ```

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vector = Vec<f32>;

pub const FALLBACK_DIMENSION: usize = 384;
pub const FALLBACK_MODEL_ID: &str = "fallback-char3-hash-384";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Fallback,
    Service,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub kind: ProviderKind,
    pub dimension: usize,
    pub model_id: String,
    pub batch_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbedError {
    #[error("embedding service at {endpoint} unreachable: {message}")]
    Unreachable { endpoint: String, message: String },
    #[error("embedding request timed out")]
    Timeout,
    #[error("embedding service returned HTTP {0}")]
    Status(u16),
    #[error("embedding protocol violation: {0}")]
    Protocol(String),
    #[error("batch of {len} texts exceeds provider limit {limit}")]
    BatchTooLarge { len: usize, limit: usize },
    #[error("invalid embedder spec `{0}` (expected `fallback` or `service:URL`)")]
    InvalidSpec(String),
}

impl EmbedError {
    /// Failures worth retrying on a fresh worker.
    pub fn is_transient(&self) -> bool {
        match self {
            EmbedError::Unreachable { .. } | EmbedError::Timeout => true,
            EmbedError::Status(code) => *code >= 500 || *code == 429,
            _ => false,
        }
    }
}

/// Source of unit-norm sentence vectors. Implementations are shared across
/// worker threads.
pub trait EmbeddingProvider: Send + Sync {
    fn info(&self) -> &ProviderInfo;

    /// One vector per text, in order. `texts.len()` must not exceed
    /// `info().batch_limit`.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vector>, EmbedError>;

    fn embed(&self, text: &str) -> Result<Vector, EmbedError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }
}

/// Embeds any number of texts, splitting into batches of the provider's limit.
pub fn embed_all(p: &dyn EmbeddingProvider, texts: &[&str]) -> Result<Vec<Vector>, EmbedError> {
    let limit = p.info().batch_limit.max(1);
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(limit) {
        out.extend(p.embed_batch(chunk)?);
    }
    Ok(out)
}

fn check_batch(info: &ProviderInfo, len: usize) -> Result<(), EmbedError> {
    if len > info.batch_limit {
        return Err(EmbedError::BatchTooLarge {
            len,
            limit: info.batch_limit,
        });
    }
    Ok(())
}

/// Signed feature hashing of character trigrams, L2-normalized.
///
/// Text is lowercased, whitespace-collapsed and padded with one space on each
/// side, so word boundaries contribute their own trigrams. Texts without any
/// trigram map to the first basis vector.
#[derive(Debug, Clone)]
pub struct FallbackEmbedder {
    info: ProviderInfo,
}

impl Default for FallbackEmbedder {
    fn default() -> Self {
        FallbackEmbedder {
            info: ProviderInfo {
                kind: ProviderKind::Fallback,
                dimension: FALLBACK_DIMENSION,
                model_id: FALLBACK_MODEL_ID.to_string(),
                batch_limit: 256,
            },
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl FallbackEmbedder {
    pub fn vector(&self, text: &str) -> Vector {
        let dim = self.info.dimension;
        let padded = format!(" {} ", crate::text::normalize_whitespace(&text.to_lowercase()));
        let chars: Vec<char> = padded.chars().collect();
        let mut acc = vec![0.0f64; dim];
        let mut buf = String::new();
        for w in chars.windows(3) {
            buf.clear();
            buf.extend(w);
            let h = fnv1a(buf.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            acc[(h % dim as u64) as usize] += sign;
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            let mut v = vec![0.0f32; dim];
            v[0] = 1.0;
            return v;
        }
        acc.iter().map(|x| (x / norm) as f32).collect()
    }
}

impl EmbeddingProvider for FallbackEmbedder {
    fn info(&self) -> &ProviderInfo {
        &self.info
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vector>, EmbedError> {
        check_batch(&self.info, texts.len())?;
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceOptions {
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub batch_limit: usize,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        ServiceOptions {
            timeout: Duration::from_secs(30),
            max_in_flight: 8,
            batch_limit: 64,
        }
    }
}

#[derive(Debug, Deserialize)]
struct Health {
    model_id: String,
    dimension: usize,
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    model_id: String,
    dimension: usize,
    vectors: Vec<Vec<f32>>,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Client for an external embedding service.
#[derive(Debug)]
pub struct ServiceEmbedder {
    endpoint: String,
    agent: ureq::Agent,
    info: ProviderInfo,
    permits: Permits,
}

impl ServiceEmbedder {
    /// Connects and performs the `/health` handshake.
    pub fn connect(endpoint: &str, opts: ServiceOptions) -> Result<Self, EmbedError> {
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(opts.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = agent
            .get(format!("{endpoint}/health"))
            .call()
            .map_err(|e| transport_error(&endpoint, e))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(EmbedError::Status(status));
        }
        let health: Health = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Protocol(format!("malformed /health response: {e}")))?;
        if health.dimension == 0 {
            return Err(EmbedError::Protocol("service advertised dimension 0".into()));
        }
        Ok(ServiceEmbedder {
            info: ProviderInfo {
                kind: ProviderKind::Service,
                dimension: health.dimension,
                model_id: health.model_id,
                batch_limit: opts.batch_limit.max(1),
            },
            permits: Permits {
                free: Mutex::new(opts.max_in_flight.max(1)),
                cv: Condvar::new(),
            },
            endpoint,
            agent,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

fn transport_error(endpoint: &str, e: ureq::Error) -> EmbedError {
    match e {
        ureq::Error::Timeout(_) => EmbedError::Timeout,
        ureq::Error::StatusCode(code) => EmbedError::Status(code),
        ureq::Error::Json(e) => EmbedError::Protocol(e.to_string()),
        other => EmbedError::Unreachable {
            endpoint: endpoint.to_string(),
            message: other.to_string(),
        },
    }
}

impl EmbeddingProvider for ServiceEmbedder {
    fn info(&self) -> &ProviderInfo {
        &self.info
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vector>, EmbedError> {
        check_batch(&self.info, texts.len())?;
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let _permit = self.permits.acquire();
        let mut resp = self
            .agent
            .post(format!("{}/embed", self.endpoint))
            .send_json(EmbedRequest { texts })
            .map_err(|e| transport_error(&self.endpoint, e))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(EmbedError::Status(status));
        }
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Protocol(format!("malformed /embed response: {e}")))?;
        if body.model_id != self.info.model_id {
            return Err(EmbedError::Protocol(format!(
                "model changed from `{}` to `{}`",
                self.info.model_id, body.model_id
            )));
        }
        if body.dimension != self.info.dimension {
            return Err(EmbedError::Protocol(format!(
                "dimension {} differs from handshake dimension {}",
                body.dimension, self.info.dimension
            )));
        }
        if body.vectors.len() != texts.len() {
            return Err(EmbedError::Protocol(format!(
                "{} vectors for {} texts",
                body.vectors.len(),
                texts.len()
            )));
        }
        body.vectors
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                if v.len() != self.info.dimension {
                    return Err(EmbedError::Protocol(format!(
                        "vector {i} has length {}, expected {}",
                        v.len(),
                        self.info.dimension
                    )));
                }
                normalize(v).ok_or_else(|| EmbedError::Protocol(format!("vector {i} is zero or not finite")))
            })
            .collect()
    }
}

/// Rescales to unit L2 norm; `None` for zero or non-finite input.
pub fn normalize(v: Vector) -> Option<Vector> {
    let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.into_iter().map(|x| (f64::from(x) / norm) as f32).collect())
}

/// Which provider to build.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Fallback,
    Service(String),
}

impl FromStr for ProviderSpec {
    type Err = EmbedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "fallback" {
            return Ok(ProviderSpec::Fallback);
        }
        match s.strip_prefix("service:") {
            Some(url) if !url.is_empty() => Ok(ProviderSpec::Service(url.to_string())),
            _ => Err(EmbedError::InvalidSpec(s.to_string())),
        }
    }
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderSpec::Fallback => f.write_str("fallback"),
            ProviderSpec::Service(url) => write!(f, "service:{url}"),
        }
    }
}

pub struct ConfiguredProvider {
    pub provider: Arc<dyn EmbeddingProvider>,
    /// Set when a service could not be reached and the fallback took over.
    pub warning: Option<String>,
}

/// Builds a provider. With `degrade_to_fallback`, a failed service handshake
/// yields the fallback embedder plus a warning instead of an error.
pub fn configure_provider(
    spec: &ProviderSpec,
    opts: ServiceOptions,
    degrade_to_fallback: bool,
) -> Result<ConfiguredProvider, EmbedError> {
    match spec {
        ProviderSpec::Fallback => Ok(ConfiguredProvider {
            provider: Arc::new(FallbackEmbedder::default()),
            warning: None,
        }),
        ProviderSpec::Service(url) => match ServiceEmbedder::connect(url, opts) {
            Ok(p) => Ok(ConfiguredProvider {
                provider: Arc::new(p),
                warning: None,
            }),
            Err(e) if degrade_to_fallback => Ok(ConfiguredProvider {
                provider: Arc::new(FallbackEmbedder::default()),
                warning: Some(format!("embedding service unavailable, using fallback embedder: {e}")),
            }),
            Err(e) => Err(e),
        },
    }
}

/// Text-keyed vector cache. Concurrent readers; the first writer for a key
/// wins, so every reader observes one vector per key.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    map: RwLock<HashMap<String, Arc<Vector>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, text: &str) -> Option<Arc<Vector>> {
        self.map.read().unwrap_or_else(|e| e.into_inner()).get(text).cloned()
    }

    /// Vectors for `texts`, embedding only those not yet cached.
    pub fn get_or_embed(&self, p: &dyn EmbeddingProvider, texts: &[&str]) -> Result<Vec<Arc<Vector>>, EmbedError> {
        let mut missing: Vec<&str> = Vec::new();
        {
            let map = self.map.read().unwrap_or_else(|e| e.into_inner());
            for t in texts {
                if map.contains_key(*t) {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                } else {
                    self.misses.fetch_add(1, Ordering::Relaxed);
                    if !missing.contains(t) {
                        missing.push(t);
                    }
                }
            }
        }
        if !missing.is_empty() {
            let vectors = embed_all(p, &missing)?;
            let mut map = self.map.write().unwrap_or_else(|e| e.into_inner());
            for (t, v) in missing.into_iter().zip(vectors) {
                map.entry(t.to_string()).or_insert_with(|| Arc::new(v));
            }
        }
        let map = self.map.read().unwrap_or_else(|e| e.into_inner());
        Ok(texts.iter().map(|t| Arc::clone(&map[*t])).collect())
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
