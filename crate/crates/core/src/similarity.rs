//! Sentence embeddings behind a pluggable backend, and the clamped cosine
//! similarity used by the decoder's semantic term.

use std::collections::HashMap;
use std::hash::Hasher;
use std::io::BufRead;
use std::sync::RwLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("embedding service unavailable (retryable): {0}")]
    Transport(String),
    #[error("embedding service protocol error: {0}")]
    Protocol(String),
    #[error("vector file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl SimilarityError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, SimilarityError::Transport(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        EmbeddingVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingVector(self.0.iter().map(|v| v * factor).collect())
    }
}

/// A text-to-vector provider. Implementations must be deterministic within
/// a run and safe to share across threads.
pub trait EmbeddingBackend: Send + Sync {
    fn name(&self) -> &str;

    fn dimension(&self) -> usize;

    /// Embeds non-empty text. Implementations may assume the text has been
    /// checked by [`embed`].
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, SimilarityError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, SimilarityError> {
        texts.iter().map(|t| embed(self, t)).collect()
    }
}

/// Embeds `text`, rejecting strings that are empty after trimming.
pub fn embed<B: EmbeddingBackend + ?Sized>(backend: &B, text: &str) -> Result<EmbeddingVector, SimilarityError> {
    if text.trim().is_empty() {
        return Err(SimilarityError::EmptyText);
    }
    backend.embed_text(text)
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if u.dimension() != v.dimension() {
        return Err(SimilarityError::DimensionMismatch {
            expected: u.dimension(),
            found: v.dimension(),
        });
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    let nu: f64 = u.0.iter().map(|a| a * a).sum();
    let nv: f64 = v.0.iter().map(|b| b * b).sum();
    if nu == 0.0 || nv == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    // sqrt(nu * nv) returns nu exactly when u == v, so cosine(v, v) == 1.
    Ok((dot / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}

/// Cosine clamped to [0, 1]; a zero vector on either side scores 0.
pub fn similarity_of(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, SimilarityError> {
    match cosine(u, v) {
        Ok(c) => Ok(c.max(0.0)),
        Err(SimilarityError::ZeroVector) => Ok(0.0),
        Err(e) => Err(e),
    }
}

pub fn similarity_score<B: EmbeddingBackend + ?Sized>(
    backend: &B,
    original: &str,
    candidate: &str,
) -> Result<f64, SimilarityError> {
    let a = embed(backend, original)?;
    let b = embed(backend, candidate)?;
    similarity_of(&a, &b)
}

/// Averages pre-trained word vectors; out-of-vocabulary words contribute
/// nothing. Text made only of unknown words embeds to the zero vector.
#[derive(Clone, Debug)]
pub struct WordVectorBackend {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectorBackend {
    pub fn from_vectors(dimension: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self, SimilarityError> {
        if let Some(v) = vectors.values().find(|v| v.len() != dimension) {
            return Err(SimilarityError::DimensionMismatch {
                expected: dimension,
                found: v.len(),
            });
        }
        Ok(WordVectorBackend { dimension, vectors })
    }

    /// Reads `word v1 ... vd` lines, with an optional `count dim` header.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, SimilarityError> {
        let mut dimension = None;
        let mut vectors = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| SimilarityError::Io(e.to_string()))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                dimension = Some(fields[1].parse().unwrap());
                continue;
            }
            let err = |message: String| SimilarityError::Format { line: i + 1, message };
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| err("non-numeric vector component".into()))?;
            if values.is_empty() {
                return Err(err("word has no vector".into()));
            }
            match dimension {
                None => dimension = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(err(format!("expected {d} components, found {}", values.len())))
                }
                _ => {}
            }
            vectors.insert(fields[0].to_string(), values);
        }
        let dimension = dimension.ok_or(SimilarityError::Format {
            line: 0,
            message: "vector file is empty".into(),
        })?;
        Ok(WordVectorBackend { dimension, vectors })
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, SimilarityError> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| SimilarityError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    fn lookup(&self, word: &str) -> Option<&Vec<f64>> {
        self.vectors
            .get(word)
            .or_else(|| self.vectors.get(&word.to_lowercase()))
    }
}

impl EmbeddingBackend for WordVectorBackend {
    fn name(&self) -> &str {
        "wordvec"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, SimilarityError> {
        let mut sum = vec![0.0; self.dimension];
        let mut known = 0usize;
        for word in text.split_whitespace() {
            if let Some(v) = self.lookup(word) {
                known += 1;
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            }
        }
        if known > 0 {
            sum.iter_mut().for_each(|s| *s /= known as f64);
        }
        Ok(EmbeddingVector(sum))
    }
}

/// Offline backend: counts of lower-cased words and their boundary-marked
/// character trigrams, hashed into a fixed number of buckets.
#[derive(Clone, Debug)]
pub struct HashingBackend {
    dimension: usize,
}

impl HashingBackend {
    pub const DEFAULT_DIMENSION: usize = 1024;

    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "hashing backend needs at least one bucket");
        HashingBackend { dimension }
    }

    fn bucket(&self, feature: &[u8]) -> usize {
        let mut h = fnv::FnvHasher::default();
        h.write(feature);
        (h.finish() % self.dimension as u64) as usize
    }
}

impl Default for HashingBackend {
    fn default() -> Self {
        HashingBackend::new(Self::DEFAULT_DIMENSION)
    }
}

impl EmbeddingBackend for HashingBackend {
    fn name(&self) -> &str {
        "hash"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, SimilarityError> {
        let mut v = vec![0.0; self.dimension];
        for word in text.split_whitespace() {
            let word = word.to_lowercase();
            v[self.bucket(format!("w:{word}").as_bytes())] += 1.0;
            let marked: Vec<char> = format!("<{word}>").chars().collect();
            for gram in marked.windows(3) {
                let gram: String = gram.iter().collect();
                v[self.bucket(format!("c:{gram}").as_bytes())] += 1.0;
            }
        }
        Ok(EmbeddingVector(v))
    }
}

#[derive(Clone, Debug)]
pub struct HttpEmbeddingConfig {
    /// Base URL; requests go to `{base_url}/embed`.
    pub base_url: String,
    pub timeout: Duration,
}

impl HttpEmbeddingConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpEmbeddingConfig {
            base_url: base_url.into(),
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Remote embedding service: `POST /embed {"texts": [...]}` answered by
/// `{"vectors": [[...], ...]}`.
pub struct HttpEmbeddingBackend {
    endpoint: String,
    agent: ureq::Agent,
    dimension: usize,
}

impl HttpEmbeddingBackend {
    /// Connects and learns the vector dimension from a probe request.
    pub fn connect(config: &HttpEmbeddingConfig) -> Result<Self, SimilarityError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut backend = HttpEmbeddingBackend {
            endpoint: format!("{}/embed", config.base_url.trim_end_matches('/')),
            agent,
            dimension: 0,
        };
        let probe = backend.request(&["dimension probe"])?;
        backend.dimension = probe[0].len();
        if backend.dimension == 0 {
            return Err(SimilarityError::Protocol("service returned empty vectors".into()));
        }
        Ok(backend)
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, SimilarityError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&EmbedRequest { texts })
            .map_err(|e| SimilarityError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(SimilarityError::Transport(format!("{} returned status {status}", self.endpoint)));
        }
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| SimilarityError::Protocol(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(SimilarityError::Protocol(format!(
                "sent {} texts, received {} vectors",
                texts.len(),
                body.vectors.len()
            )));
        }
        Ok(body.vectors)
    }
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, SimilarityError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, SimilarityError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(SimilarityError::EmptyText);
        }
        self.request(texts)?
            .into_iter()
            .map(|v| {
                if v.len() != self.dimension {
                    Err(SimilarityError::DimensionMismatch {
                        expected: self.dimension,
                        found: v.len(),
                    })
                } else if v.iter().any(|x| !x.is_finite()) {
                    Err(SimilarityError::Protocol("non-finite vector component".into()))
                } else {
                    Ok(EmbeddingVector(v))
                }
            })
            .collect()
    }
}

/// Memoizes another backend by exact text. Safe under concurrent use.
pub struct CachedBackend<B> {
    inner: B,
    cache: RwLock<HashMap<String, EmbeddingVector>>,
}

impl<B: EmbeddingBackend> CachedBackend<B> {
    pub fn new(inner: B) -> Self {
        CachedBackend {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<B: EmbeddingBackend> EmbeddingBackend for CachedBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, SimilarityError> {
        if let Some(v) = self.cache.read().unwrap().get(text) {
            return Ok(v.clone());
        }
        let v = self.inner.embed_text(text)?;
        self.cache.write().unwrap().insert(text.to_string(), v.clone());
        Ok(v)
    }

    /// Serves hits from the cache and forwards the misses as one batch.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, SimilarityError> {
        let mut out: Vec<Option<EmbeddingVector>> = {
            let cache = self.cache.read().unwrap();
            texts.iter().map(|t| cache.get(*t).cloned()).collect()
        };
        let misses: Vec<&str> = texts
            .iter()
            .zip(&out)
            .filter(|(_, v)| v.is_none())
            .map(|(t, _)| *t)
            .collect();
        if !misses.is_empty() {
            let fetched = self.inner.embed_batch(&misses)?;
            let mut cache = self.cache.write().unwrap();
            let mut fresh = misses.iter().zip(fetched);
            for slot in out.iter_mut().filter(|v| v.is_none()) {
                let (text, v) = fresh.next().expect("one vector per miss");
                cache.insert(text.to_string(), v.clone());
                *slot = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.unwrap()).collect())
    }
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, SimilarityError> {
        (**self).embed_text(text)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, SimilarityError> {
        (**self).embed_batch(texts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ab_backend() -> WordVectorBackend {
        WordVectorBackend::from_reader("a 1 0\nb 0 1\nc 3 4\n".as_bytes()).unwrap()
    }

    #[test]
    fn embed_is_deterministic() {
        let b = HashingBackend::default();
        assert_eq!(embed(&b, "hello").unwrap(), embed(&b, "hello").unwrap());
        assert_eq!(embed(&b, "  "), Err(SimilarityError::EmptyText));
    }

    #[test]
    fn word_average_definition() {
        let b = ab_backend();
        assert_eq!(embed(&b, "a b").unwrap().values(), &[0.5, 0.5]);
        // One OOV word out of three: mean over (1,0) and (3,4) only.
        assert_eq!(embed(&b, "a zebra c").unwrap().values(), &[2.0, 2.0]);
        assert!(embed(&b, "zebra").unwrap().is_zero());
    }

    #[test]
    fn vector_file_header_and_errors() {
        let b = WordVectorBackend::from_reader("2 3\nx 1 2 3\ny 4 5 6\n".as_bytes()).unwrap();
        assert_eq!(b.dimension(), 3);
        let bad = WordVectorBackend::from_reader("x 1 2\ny 1\n".as_bytes()).unwrap_err();
        assert!(matches!(bad, SimilarityError::Format { line: 2, .. }));
    }

    #[test]
    fn cosine_examples() {
        let v = EmbeddingVector::new(vec![0.3, -1.7, 2.2]);
        assert_eq!(cosine(&v, &v).unwrap(), 1.0);
        let x = EmbeddingVector::new(vec![1.0, 0.0]);
        let y = EmbeddingVector::new(vec![0.0, 1.0]);
        assert_eq!(cosine(&x, &y).unwrap(), 0.0);
        // (1,2,3).(4,5,6) = 32; |u|^2 = 14, |v|^2 = 77.
        let u = EmbeddingVector::new(vec![1.0, 2.0, 3.0]);
        let w = EmbeddingVector::new(vec![4.0, 5.0, 6.0]);
        let expect = 32.0 / (14.0f64.sqrt() * 77.0f64.sqrt());
        assert!((cosine(&u, &w).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.974_631_846).abs() < 1e-9);
        let z = EmbeddingVector::new(vec![0.0, 0.0]);
        assert_eq!(cosine(&x, &z), Err(SimilarityError::ZeroVector));
        assert!(matches!(cosine(&x, &u), Err(SimilarityError::DimensionMismatch { .. })));
    }

    #[test]
    fn similarity_clamps_and_handles_identity() {
        let b = HashingBackend::default();
        assert_eq!(similarity_score(&b, "the cat sat", "the cat sat").unwrap(), 1.0);
        let wv = WordVectorBackend::from_reader("up 1 1\ndown -1 -1\n".as_bytes()).unwrap();
        assert_eq!(similarity_score(&wv, "up", "down").unwrap(), 0.0);
        assert_eq!(similarity_score(&wv, "up", "nowhere").unwrap(), 0.0);
    }

    #[test]
    fn prefix_similarity_matches_mean_vectors() {
        let b = WordVectorBackend::from_reader("w1 1 0 2\nw2 0 3 1\nw3 2 2 0\nw4 1 -1 1\n".as_bytes()).unwrap();
        // Full mean: (4,4,4)/4 = (1,1,1); prefix "w1 w2" mean: (0.5,1.5,1.5).
        let full = [1.0, 1.0, 1.0];
        let half = [0.5, 1.5, 1.5];
        let dot: f64 = full.iter().zip(&half).map(|(a, b)| a * b).sum();
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expect = dot / (n(&full) * n(&half));
        let got = similarity_score(&b, "w1 w2 w3 w4", "w1 w2").unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn cached_backend_agrees() {
        let cached = CachedBackend::new(HashingBackend::new(64));
        let plain = HashingBackend::new(64);
        for t in ["a b", "a b", "c"] {
            assert_eq!(embed(&cached, t).unwrap(), embed(&plain, t).unwrap());
        }
        assert_eq!(cached.len(), 2);
    }

    struct Counting {
        inner: HashingBackend,
        batches: std::sync::Mutex<Vec<usize>>,
    }

    impl EmbeddingBackend for Counting {
        fn name(&self) -> &str {
            "counting"
        }
        fn dimension(&self) -> usize {
            self.inner.dimension()
        }
        fn embed_text(&self, text: &str) -> Result<EmbeddingVector, SimilarityError> {
            self.inner.embed_text(text)
        }
        fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, SimilarityError> {
            self.batches.lock().unwrap().push(texts.len());
            texts.iter().map(|t| self.inner.embed_text(t)).collect()
        }
    }

    #[test]
    fn cached_batch_forwards_only_misses() {
        let cached = CachedBackend::new(Counting {
            inner: HashingBackend::new(32),
            batches: Default::default(),
        });
        embed(&cached, "b").unwrap();
        let got = cached.embed_batch(&["a", "b", "c"]).unwrap();
        let plain = HashingBackend::new(32);
        for (t, v) in ["a", "b", "c"].iter().zip(&got) {
            assert_eq!(v, &plain.embed_text(t).unwrap());
        }
        assert_eq!(*cached.inner.batches.lock().unwrap(), vec![2]);
        cached.embed_batch(&["a", "c"]).unwrap();
        assert_eq!(cached.inner.batches.lock().unwrap().len(), 1);
    }

    proptest! {
        #[test]
        fn scale_invariant_and_symmetric(
            u in prop::collection::vec(-5.0f64..5.0, 4),
            v in prop::collection::vec(-5.0f64..5.0, 4),
            k in 0.01f64..100.0,
        ) {
            let u = EmbeddingVector::new(u);
            let v = EmbeddingVector::new(v);
            let s = similarity_of(&u, &v).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((s - similarity_of(&v, &u).unwrap()).abs() < 1e-12);
            prop_assert!((s - similarity_of(&u.scaled(k), &v).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn hashing_backend_text_symmetry(a in "[a-z]{1,6}( [a-z]{1,6}){0,5}", b in "[a-z]{1,6}( [a-z]{1,6}){0,5}") {
            let h = HashingBackend::new(128);
            let ab = similarity_score(&h, &a, &b).unwrap();
            let ba = similarity_score(&h, &b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
