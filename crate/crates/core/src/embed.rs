//! Dense vectors for meaning units.
//!
//! Every vector is normalized to unit length when it is constructed, so
//! cosine similarity is a dot product. Backends only return raw numbers; the
//! [`Embedder`] checks dimensions, rejects zero vectors, memoizes by
//! normalized text and restores input order.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{read_jsonl, write_jsonl, IoError};
use crate::segment::{normalize_text, MeaningUnit, UnitId};

/// Environment variable that overrides the service URL.
pub const EMBED_URL_ENV: &str = "AUTOMUP_EMBED_URL";

/// Dimension of the mock backend when none is given.
pub const DEFAULT_MOCK_DIM: usize = 768;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero vector cannot be normalized")]
    ZeroVector,
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("missing embedding for unit {0}")]
    Missing(UnitId),
    #[error("backend {0} can only embed known units, not free text {1:?}")]
    AdHocUnsupported(String, String),
    #[error("embedding service {url} unreachable after {attempts} attempts: {last}")]
    Unreachable {
        url: String,
        attempts: usize,
        last: String,
    },
    #[error("embedding service returned an invalid response: {0}")]
    BadResponse(String),
    #[error("cannot pool an empty list of vectors")]
    EmptyPool,
    #[error("pooled vectors cancel out to zero")]
    DegeneratePool,
    #[error("no units to embed")]
    NoUnits,
    #[error("invalid backend spec {0:?}")]
    BadSpec(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// A unit-length vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    /// Euclidean norm of the raw input.
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(raw: Vec<f64>) -> Result<Self, EmbedError> {
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::ZeroVector);
        }
        let values = raw.into_iter().map(|x| x / norm).collect();
        Ok(Self { values, norm })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn source_norm(&self) -> f64 {
        self.norm
    }

    fn check_dim(&self, other: &Self) -> Result<(), EmbedError> {
        if self.dim() != other.dim() {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    a.check_dim(b)?;
    if a.values == b.values {
        // exact self-similarity, so a cutoff of 1.0 still admits duplicates
        return Ok(1.0);
    }
    Ok(dot(&a.values, &b.values).clamp(-1.0, 1.0))
}

/// Mean of the vectors, renormalized.
pub fn mean_pool<'a, I>(vectors: I) -> Result<EmbeddingVector, EmbedError>
where
    I: IntoIterator<Item = &'a EmbeddingVector>,
{
    let mut iter = vectors.into_iter();
    let first = iter.next().ok_or(EmbedError::EmptyPool)?;
    let mut sum = first.values.clone();
    let mut n = 1usize;
    for v in iter {
        first.check_dim(v)?;
        for (s, x) in sum.iter_mut().zip(&v.values) {
            *s += x;
        }
        n += 1;
    }
    for s in sum.iter_mut() {
        *s /= n as f64;
    }
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(EmbedError::DegeneratePool);
    }
    EmbeddingVector::new(sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    PrecomputedFile,
    HttpService,
    DeterministicMock,
}

/// Where embeddings come from.
///
/// The short string form is `mock`, `mock:<dim>`, `file:<path>` or an
/// `http://` / `https://` URL (`http` alone reads the URL from
/// `AUTOMUP_EMBED_URL`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingBackendSpec {
    pub kind: BackendKind,
    pub location: String,
    pub batch_size: usize,
    pub dimension: Option<usize>,
}

impl EmbeddingBackendSpec {
    pub fn mock(dim: usize) -> Self {
        Self {
            kind: BackendKind::DeterministicMock,
            location: String::new(),
            batch_size: 64,
            dimension: Some(dim),
        }
    }

    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::PrecomputedFile,
            location: path.into().to_string_lossy().into_owned(),
            batch_size: 64,
            dimension: None,
        }
    }

    pub fn http(url: impl Into<String>, batch_size: usize) -> Self {
        Self {
            kind: BackendKind::HttpService,
            location: url.into(),
            batch_size,
            dimension: None,
        }
    }

    /// Applies `AUTOMUP_EMBED_URL` to service backends.
    pub fn with_env_override(mut self) -> Self {
        if self.kind == BackendKind::HttpService {
            if let Ok(url) = std::env::var(EMBED_URL_ENV) {
                if !url.trim().is_empty() {
                    self.location = url.trim().to_string();
                }
            }
        }
        self
    }

    pub fn build(&self) -> Result<Box<dyn EmbeddingBackend>, EmbedError> {
        if self.batch_size == 0 {
            return Err(EmbedError::BadSpec("batch_size must be at least 1".into()));
        }
        Ok(match self.kind {
            BackendKind::DeterministicMock => Box::new(MockBackend::new(self.dimension.unwrap_or(DEFAULT_MOCK_DIM), 0)),
            BackendKind::PrecomputedFile => Box::new(FileBackend::load(Path::new(&self.location))?),
            BackendKind::HttpService => {
                if self.location.is_empty() {
                    return Err(EmbedError::BadSpec(format!("service URL missing (set {EMBED_URL_ENV})")));
                }
                Box::new(HttpBackend::new(&self.location, self.batch_size))
            }
        })
    }
}

impl FromStr for EmbeddingBackendSpec {
    type Err = EmbedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "mock" {
            return Ok(Self::mock(DEFAULT_MOCK_DIM));
        }
        if let Some(dim) = s.strip_prefix("mock:") {
            let dim: usize = dim.parse().map_err(|_| EmbedError::BadSpec(s.into()))?;
            if dim == 0 {
                return Err(EmbedError::BadSpec(s.into()));
            }
            return Ok(Self::mock(dim));
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(Self::file(path));
        }
        if s == "http" {
            return Ok(Self::http("", 32));
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Self::http(s, 32));
        }
        Err(EmbedError::BadSpec(s.into()))
    }
}

impl fmt::Display for EmbeddingBackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            BackendKind::DeterministicMock => write!(f, "mock:{}", self.dimension.unwrap_or(DEFAULT_MOCK_DIM)),
            BackendKind::PrecomputedFile => write!(f, "file:{}", self.location),
            BackendKind::HttpService => f.write_str(&self.location),
        }
    }
}

/// One text to embed. `unit_id` is `None` for free text.
#[derive(Debug, Clone, Copy)]
pub struct EmbedItem<'a> {
    pub unit_id: Option<UnitId>,
    pub text: &'a str,
    pub normalized: &'a str,
}

pub trait EmbeddingBackend: Send + Sync {
    /// Raw vectors, one per item, in item order.
    fn embed_batch(&self, items: &[EmbedItem<'_>]) -> Result<Vec<Vec<f64>>, EmbedError>;

    /// Declared output dimension, when known up front.
    fn dimension(&self) -> Option<usize>;

    /// Whether equal normalized texts always map to the same vector, which
    /// makes text memoization safe.
    fn text_keyed(&self) -> bool {
        true
    }

    fn describe(&self) -> String;
}

/// Vectors derived from a seeded hash of the normalized text. Equal
/// normalized texts get equal vectors; distinct texts get independent,
/// nearly orthogonal ones. No semantic content.
#[derive(Debug, Clone)]
pub struct MockBackend {
    dim: usize,
    seed: u64,
}

impl MockBackend {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    pub fn vector_for(&self, normalized: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(normalized.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}

impl EmbeddingBackend for MockBackend {
    fn embed_batch(&self, items: &[EmbedItem<'_>]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(items.iter().map(|it| self.vector_for(it.normalized)).collect())
    }

    fn dimension(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn describe(&self) -> String {
        format!("mock:{}", self.dim)
    }
}

/// One line of a precomputed embedding file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub unit_id: UnitId,
    pub vector: Vec<f64>,
}

/// Vectors looked up by unit id.
#[derive(Debug, Clone)]
pub struct FileBackend {
    path: PathBuf,
    vectors: HashMap<UnitId, Vec<f64>>,
    dim: Option<usize>,
}

impl FileBackend {
    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let records: Vec<EmbeddingRecord> = read_jsonl(path)?;
        Self::from_records(path, records)
    }

    pub fn from_records(path: &Path, records: Vec<EmbeddingRecord>) -> Result<Self, EmbedError> {
        let mut dim = None;
        let mut vectors = HashMap::with_capacity(records.len());
        for rec in records {
            match dim {
                None => dim = Some(rec.vector.len()),
                Some(d) if d != rec.vector.len() => {
                    return Err(EmbedError::DimensionMismatch {
                        expected: d,
                        found: rec.vector.len(),
                    })
                }
                _ => {}
            }
            vectors.insert(rec.unit_id, rec.vector);
        }
        Ok(Self {
            path: path.to_path_buf(),
            vectors,
            dim,
        })
    }
}

impl EmbeddingBackend for FileBackend {
    fn embed_batch(&self, items: &[EmbedItem<'_>]) -> Result<Vec<Vec<f64>>, EmbedError> {
        items
            .iter()
            .map(|it| {
                let id = it
                    .unit_id
                    .ok_or_else(|| EmbedError::AdHocUnsupported(self.describe(), it.text.chars().take(60).collect()))?;
                self.vectors.get(&id).cloned().ok_or(EmbedError::Missing(id))
            })
            .collect()
    }

    fn dimension(&self) -> Option<usize> {
        self.dim
    }

    fn text_keyed(&self) -> bool {
        false
    }

    fn describe(&self) -> String {
        format!("file:{}", self.path.display())
    }
}

#[derive(Serialize)]
struct EmbedRequestBody<'a> {
    texts: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponseBody {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

/// Client for a service exposing `POST /embed` and `GET /health`.
pub struct HttpBackend {
    base: String,
    batch_size: usize,
    attempts: usize,
    backoff: Duration,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(url: &str, batch_size: usize) -> Self {
        let base = url.trim_end_matches('/').trim_end_matches("/embed").to_string();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            base,
            batch_size: batch_size.max(1),
            attempts: 3,
            backoff: Duration::from_millis(200),
            agent,
        }
    }

    /// Overrides the retry policy (attempt count and first backoff delay,
    /// doubled after every failure).
    pub fn with_retry(mut self, attempts: usize, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    pub fn health(&self) -> Result<(), EmbedError> {
        let url = format!("{}/health", self.base);
        match self.agent.get(&url).call() {
            Ok(_) => Ok(()),
            Err(e) => Err(EmbedError::Unreachable {
                url,
                attempts: 1,
                last: e.to_string(),
            }),
        }
    }

    fn post_once(&self, url: &str, texts: &[&str]) -> Result<EmbedResponseBody, (bool, String)> {
        let body = EmbedRequestBody { texts: texts.to_vec() };
        match self.agent.post(url).send_json(&body) {
            Ok(mut resp) => resp
                .body_mut()
                .read_json::<EmbedResponseBody>()
                .map_err(|e| (false, format!("undecodable body: {e}"))),
            // client errors will not improve on retry
            Err(ureq::Error::StatusCode(code)) if (400..500).contains(&code) => Err((false, format!("HTTP {code}"))),
            Err(e) => Err((true, e.to_string())),
        }
    }

    fn post_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let url = format!("{}/embed", self.base);
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match self.post_once(&url, texts) {
                Ok(resp) => {
                    if resp.vectors.len() != texts.len() {
                        return Err(EmbedError::BadResponse(format!(
                            "{} vectors for {} texts",
                            resp.vectors.len(),
                            texts.len()
                        )));
                    }
                    if let Some(v) = resp.vectors.iter().find(|v| v.len() != resp.dim) {
                        return Err(EmbedError::DimensionMismatch {
                            expected: resp.dim,
                            found: v.len(),
                        });
                    }
                    return Ok(resp.vectors);
                }
                Err((false, msg)) => return Err(EmbedError::BadResponse(msg)),
                Err((true, msg)) => {
                    log::warn!("embed request attempt {attempt}/{} failed: {msg}", self.attempts);
                    last = msg;
                    if attempt < self.attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(EmbedError::Unreachable {
            url,
            attempts: self.attempts,
            last,
        })
    }
}

impl EmbeddingBackend for HttpBackend {
    fn embed_batch(&self, items: &[EmbedItem<'_>]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.batch_size) {
            let texts: Vec<&str> = chunk.iter().map(|it| it.text).collect();
            out.extend(self.post_batch(&texts)?);
        }
        Ok(out)
    }

    fn dimension(&self) -> Option<usize> {
        None
    }

    fn describe(&self) -> String {
        self.base.clone()
    }
}

/// Backend wrapper that validates, normalizes and memoizes.
pub struct Embedder {
    backend: Box<dyn EmbeddingBackend>,
    memo: Mutex<HashMap<String, EmbeddingVector>>,
    dim: Mutex<Option<usize>>,
}

impl Embedder {
    pub fn new(backend: Box<dyn EmbeddingBackend>) -> Self {
        let dim = backend.dimension();
        Self {
            backend,
            memo: Mutex::new(HashMap::new()),
            dim: Mutex::new(dim),
        }
    }

    pub fn from_spec(spec: &EmbeddingBackendSpec) -> Result<Self, EmbedError> {
        Ok(Self::new(spec.build()?))
    }

    pub fn describe(&self) -> String {
        self.backend.describe()
    }

    pub fn dimension(&self) -> Option<usize> {
        *self.dim.lock().unwrap()
    }

    fn finish(&self, raw: Vec<f64>) -> Result<EmbeddingVector, EmbedError> {
        let mut dim = self.dim.lock().unwrap();
        match *dim {
            Some(d) if d != raw.len() => {
                return Err(EmbedError::DimensionMismatch {
                    expected: d,
                    found: raw.len(),
                })
            }
            None => *dim = Some(raw.len()),
            _ => {}
        }
        drop(dim);
        EmbeddingVector::new(raw)
    }

    /// Seeds the text cache with known vectors, for instance ones read back
    /// from an embeddings file, so later lookups of the same normalized text
    /// skip the backend.
    pub fn remember(&self, units: &[MeaningUnit], vectors: &[EmbeddingVector]) -> Result<(), EmbedError> {
        let mut memo = self.memo.lock().unwrap();
        for (u, v) in units.iter().zip(vectors) {
            {
                let mut dim = self.dim.lock().unwrap();
                match *dim {
                    Some(d) if d != v.dim() => {
                        return Err(EmbedError::DimensionMismatch {
                            expected: d,
                            found: v.dim(),
                        })
                    }
                    None => *dim = Some(v.dim()),
                    _ => {}
                }
            }
            memo.entry(u.normalized_text.clone()).or_insert_with(|| v.clone());
        }
        Ok(())
    }

    /// One vector per unit, in input order.
    pub fn embed_units(&self, units: &[MeaningUnit]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if units.is_empty() {
            return Err(EmbedError::NoUnits);
        }
        let items: Vec<EmbedItem<'_>> = units
            .iter()
            .map(|u| EmbedItem {
                unit_id: Some(u.unit_id),
                text: &u.text,
                normalized: &u.normalized_text,
            })
            .collect();
        if !self.backend.text_keyed() {
            let raw = self.backend.embed_batch(&items)?;
            let vectors = raw.into_iter().map(|r| self.finish(r)).collect::<Result<Vec<_>, _>>()?;
            // remember them so free text equal to a known unit can be resolved
            let mut memo = self.memo.lock().unwrap();
            for (u, v) in units.iter().zip(&vectors) {
                memo.entry(u.normalized_text.clone()).or_insert_with(|| v.clone());
            }
            return Ok(vectors);
        }
        self.embed_items(&items)
    }

    /// Vectors for free text (not tied to unit ids).
    pub fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let normalized: Vec<String> = texts.iter().map(|t| normalize_text(t)).collect();
        let items: Vec<EmbedItem<'_>> = texts
            .iter()
            .zip(&normalized)
            .map(|(t, n)| EmbedItem {
                unit_id: None,
                text: t,
                normalized: n,
            })
            .collect();
        self.embed_items(&items)
    }

    fn embed_items(&self, items: &[EmbedItem<'_>]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut pending: Vec<EmbedItem<'_>> = Vec::new();
        {
            let memo = self.memo.lock().unwrap();
            let mut queued = std::collections::HashSet::new();
            for it in items {
                if !memo.contains_key(it.normalized) && queued.insert(it.normalized) {
                    pending.push(*it);
                }
            }
        }
        if !pending.is_empty() {
            let raw = self.backend.embed_batch(&pending)?;
            if raw.len() != pending.len() {
                return Err(EmbedError::BadResponse(format!(
                    "{} vectors for {} texts",
                    raw.len(),
                    pending.len()
                )));
            }
            let fresh = raw.into_iter().map(|r| self.finish(r)).collect::<Result<Vec<_>, _>>()?;
            let mut memo = self.memo.lock().unwrap();
            for (it, v) in pending.iter().zip(fresh) {
                memo.entry(it.normalized.to_string()).or_insert(v);
            }
        }
        let memo = self.memo.lock().unwrap();
        Ok(items.iter().map(|it| memo[it.normalized].clone()).collect())
    }
}

/// Writes `{unit_id, vector}` lines.
pub fn write_embeddings(path: &Path, units: &[MeaningUnit], vectors: &[EmbeddingVector]) -> Result<(), IoError> {
    write_jsonl(
        path,
        units.iter().zip(vectors).map(|(u, v)| EmbeddingRecord {
            unit_id: u.unit_id,
            vector: v.values.clone(),
        }),
    )
}
