//! Round-trip translation through a pivot language, used as a paraphrasing
//! and lexical-simplification pass over decoder output.

use std::collections::HashMap;
use std::io::BufRead;
use std::sync::RwLock;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranslateError {
    #[error("translation service unavailable: {0}")]
    Transport(String),
    #[error("translation service protocol error: {0}")]
    Protocol(String),
    #[error("{client} does not support {from} -> {target}")]
    Unsupported {
        client: String,
        from: String,
        target: String,
    },
    #[error("invalid back-translation configuration: {0}")]
    Config(String),
    #[error("dictionary line {line}: {message}")]
    Dictionary { line: usize, message: String },
}

impl TranslateError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, TranslateError::Transport(_))
    }
}

pub trait TranslationClient: Send + Sync {
    fn name(&self) -> &str;

    fn supports(&self, _source: &str, _target: &str) -> bool {
        true
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, TranslateError>;
}

impl<C: TranslationClient + ?Sized> TranslationClient for Box<C> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn supports(&self, source: &str, target: &str) -> bool {
        (**self).supports(source, target)
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, TranslateError> {
        (**self).translate(text, source, target)
    }
}

/// Returns its input unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityClient;

impl TranslationClient for IdentityClient {
    fn name(&self) -> &str {
        "identity"
    }

    fn translate(&self, text: &str, _source: &str, _target: &str) -> Result<String, TranslateError> {
        Ok(text.to_string())
    }
}

/// Phrase-table mock. Each entry maps a source phrase to a pivot phrase and
/// that pivot phrase to a back-translated phrase. Words without an entry
/// pass through; the longest matching phrase wins.
#[derive(Clone, Debug)]
pub struct DictionaryClient {
    source_language: String,
    pivot_language: String,
    forward: HashMap<Vec<String>, String>,
    backward: HashMap<Vec<String>, String>,
    longest: usize,
}

impl DictionaryClient {
    pub fn new(source_language: &str, pivot_language: &str, entries: &[(String, String, String)]) -> Self {
        let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        let mut forward = HashMap::new();
        let mut backward = HashMap::new();
        let mut longest = 1;
        for (src, pivot, back) in entries {
            let (s, p) = (words(src), words(pivot));
            longest = longest.max(s.len()).max(p.len());
            forward.insert(s, pivot.clone());
            backward.insert(p, back.clone());
        }
        DictionaryClient {
            source_language: source_language.to_string(),
            pivot_language: pivot_language.to_string(),
            forward,
            backward,
            longest,
        }
    }

    /// Reads `src<TAB>pivot<TAB>back` rows; `#` lines and blank lines are skipped.
    pub fn from_reader<R: BufRead>(source_language: &str, pivot_language: &str, reader: R) -> Result<Self, TranslateError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| TranslateError::Dictionary { line: i + 1, message: e.to_string() })?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 || cols.iter().any(|c| c.trim().is_empty()) {
                return Err(TranslateError::Dictionary {
                    line: i + 1,
                    message: "expected three non-empty tab-separated columns".into(),
                });
            }
            entries.push((cols[0].trim().to_string(), cols[1].trim().to_string(), cols[2].trim().to_string()));
        }
        Ok(Self::new(source_language, pivot_language, &entries))
    }

    fn rewrite(&self, text: &str, table: &HashMap<Vec<String>, String>) -> String {
        let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        let mut out: Vec<String> = Vec::new();
        let mut i = 0;
        'outer: while i < words.len() {
            for len in (1..=self.longest.min(words.len() - i)).rev() {
                if let Some(rep) = table.get(&words[i..i + len]) {
                    out.push(rep.clone());
                    i += len;
                    continue 'outer;
                }
            }
            out.push(words[i].clone());
            i += 1;
        }
        out.join(" ")
    }
}

impl TranslationClient for DictionaryClient {
    fn name(&self) -> &str {
        "dict"
    }

    fn supports(&self, source: &str, target: &str) -> bool {
        (source == self.source_language && target == self.pivot_language)
            || (source == self.pivot_language && target == self.source_language)
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, TranslateError> {
        if !self.supports(source, target) {
            return Err(TranslateError::Unsupported {
                client: self.name().into(),
                from: source.into(),
                target: target.into(),
            });
        }
        let table = if source == self.source_language {
            &self.forward
        } else {
            &self.backward
        };
        Ok(self.rewrite(text, table))
    }
}

#[derive(Clone, Debug)]
pub struct HttpTranslationConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    /// Header that carries the API key.
    pub key_header: String,
    pub timeout: Duration,
}

impl HttpTranslationConfig {
    pub const URL_VAR: &'static str = "TREESIMP_TRANSLATE_URL";
    pub const KEY_VAR: &'static str = "TREESIMP_TRANSLATE_KEY";

    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpTranslationConfig {
            endpoint: endpoint.into(),
            api_key: None,
            key_header: "X-Api-Key".into(),
            timeout: Duration::from_secs(30),
        }
    }

    /// Endpoint from `TREESIMP_TRANSLATE_URL`, key from `TREESIMP_TRANSLATE_KEY`.
    pub fn from_env() -> Result<Self, TranslateError> {
        let endpoint = std::env::var(Self::URL_VAR)
            .map_err(|_| TranslateError::Config(format!("{} is not set", Self::URL_VAR)))?;
        let mut cfg = Self::new(endpoint);
        cfg.api_key = std::env::var(Self::KEY_VAR).ok();
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct TranslateRequest<'a> {
    q: &'a str,
    source: &'a str,
    target: &'a str,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct TranslateResponse {
    translated_text: String,
}

/// JSON translation service: `POST {"q", "source", "target"}` answered by
/// `{"translatedText": ...}`.
pub struct HttpTranslationClient {
    config: HttpTranslationConfig,
    agent: ureq::Agent,
}

impl HttpTranslationClient {
    pub fn new(config: HttpTranslationConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTranslationClient { config, agent }
    }
}

impl TranslationClient for HttpTranslationClient {
    fn name(&self) -> &str {
        "http"
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, TranslateError> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header(self.config.key_header.as_str(), key.as_str());
        }
        let mut resp = req
            .send_json(&TranslateRequest { q: text, source, target })
            .map_err(|e| TranslateError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(TranslateError::Transport(format!(
                "{} returned status {status}",
                self.config.endpoint
            )));
        }
        let body: TranslateResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| TranslateError::Protocol(e.to_string()))?;
        Ok(body.translated_text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SeparatorPolicy {
    /// Replace chunk separators `" - "` with `", "` before translating.
    #[default]
    Strip,
    Keep,
}

impl SeparatorPolicy {
    pub fn apply(self, text: &str) -> String {
        match self {
            SeparatorPolicy::Strip => text.replace(" - ", ", "),
            SeparatorPolicy::Keep => text.to_string(),
        }
    }
}

impl std::str::FromStr for SeparatorPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strip" => Ok(SeparatorPolicy::Strip),
            "keep" => Ok(SeparatorPolicy::Keep),
            other => Err(format!("unknown separator policy {other:?} (expected strip or keep)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BtConfig {
    pub source_language: String,
    pub pivot_language: String,
    pub separator_policy: SeparatorPolicy,
}

impl BtConfig {
    /// German pivot for English input, English pivot for anything else.
    pub fn for_source(source_language: &str) -> Self {
        let pivot = if source_language == "en" { "de" } else { "en" };
        BtConfig {
            source_language: source_language.to_string(),
            pivot_language: pivot.to_string(),
            separator_policy: SeparatorPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TranslateError> {
        if self.source_language.is_empty() || self.pivot_language.is_empty() {
            return Err(TranslateError::Config("language codes must be non-empty".into()));
        }
        if self.source_language == self.pivot_language {
            return Err(TranslateError::Config(format!(
                "pivot language must differ from source ({})",
                self.source_language
            )));
        }
        Ok(())
    }
}

impl Default for BtConfig {
    fn default() -> Self {
        BtConfig::for_source("en")
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BtStatus {
    Done(String),
    /// Empty input; nothing was sent.
    Skipped,
    Failed(TranslateError),
}

impl BtStatus {
    pub fn output(&self) -> Option<&str> {
        match self {
            BtStatus::Done(s) => Some(s),
            _ => None,
        }
    }
}

type CacheKey = (String, String, String);

/// Runs the two translation legs with retries and a shared leg cache.
pub struct BackTranslator<C> {
    client: C,
    config: BtConfig,
    retry: RetryPolicy,
    cache: RwLock<HashMap<CacheKey, String>>,
}

impl<C: TranslationClient> BackTranslator<C> {
    pub fn new(client: C, config: BtConfig) -> Result<Self, TranslateError> {
        config.validate()?;
        let (src, pivot) = (&config.source_language, &config.pivot_language);
        for (a, b) in [(src, pivot), (pivot, src)] {
            if !client.supports(a, b) {
                return Err(TranslateError::Unsupported {
                    client: client.name().into(),
                    from: a.clone(),
                    target: b.clone(),
                });
            }
        }
        Ok(BackTranslator {
            client,
            config,
            retry: RetryPolicy::default(),
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn config(&self) -> &BtConfig {
        &self.config
    }

    pub fn client(&self) -> &C {
        &self.client
    }

    /// Starts a new cache epoch.
    pub fn clear_cache(&self) {
        self.cache.write().unwrap().clear();
    }

    fn leg(&self, text: &str, source: &str, target: &str) -> Result<String, TranslateError> {
        let key = (text.to_string(), source.to_string(), target.to_string());
        if let Some(hit) = self.cache.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let mut delay = self.retry.base_delay;
        let mut attempt = 1;
        let out = loop {
            match self.client.translate(text, source, target) {
                Ok(t) => break t,
                Err(e) if e.is_retryable() && attempt < self.retry.attempts => {
                    log::debug!("translation attempt {attempt} failed: {e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        self.cache.write().unwrap().insert(key, out.clone());
        Ok(out)
    }

    pub fn round_trip(&self, text: &str) -> Result<String, TranslateError> {
        if text.trim().is_empty() {
            return Err(TranslateError::Config("cannot translate empty text".into()));
        }
        let prepared = self.config.separator_policy.apply(text);
        let src = &self.config.source_language;
        let pivot = &self.config.pivot_language;
        let there = self.leg(&prepared, src, pivot)?;
        self.leg(&there, pivot, src)
    }

    /// Order-preserving; failures stay with their item.
    pub fn batch_round_trip<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Vec<BtStatus> {
        texts
            .par_iter()
            .map(|t| {
                let t = t.as_ref();
                if t.trim().is_empty() {
                    BtStatus::Skipped
                } else {
                    match self.round_trip(t) {
                        Ok(s) => BtStatus::Done(s),
                        Err(e) => BtStatus::Failed(e),
                    }
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting<C> {
        inner: C,
        calls: AtomicUsize,
    }

    impl<C: TranslationClient> TranslationClient for Counting<C> {
        fn name(&self) -> &str {
            "counting"
        }
        fn translate(&self, text: &str, s: &str, t: &str) -> Result<String, TranslateError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.translate(text, s, t)
        }
    }

    /// Fails on any text containing "bad", and the first `flaky` calls overall.
    struct Faulty {
        flaky: AtomicUsize,
    }

    impl TranslationClient for Faulty {
        fn name(&self) -> &str {
            "faulty"
        }
        fn translate(&self, text: &str, _: &str, _: &str) -> Result<String, TranslateError> {
            if text.contains("bad") {
                return Err(TranslateError::Transport("boom".into()));
            }
            if self.flaky.load(Ordering::SeqCst) > 0 {
                self.flaky.fetch_sub(1, Ordering::SeqCst);
                return Err(TranslateError::Transport("flaky".into()));
            }
            Ok(text.to_uppercase())
        }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(1),
        }
    }

    #[test]
    fn identity_round_trip_applies_separator_policy() {
        let bt = BackTranslator::new(IdentityClient, BtConfig::for_source("en")).unwrap();
        assert_eq!(bt.round_trip("a b - c d").unwrap(), "a b, c d");
        let keep = BtConfig {
            separator_policy: SeparatorPolicy::Keep,
            ..BtConfig::for_source("en")
        };
        let bt = BackTranslator::new(IdentityClient, keep).unwrap();
        assert_eq!(bt.round_trip("a b - c d").unwrap(), "a b - c d");
    }

    #[test]
    fn dictionary_substitution() {
        let client = DictionaryClient::from_reader(
            "en",
            "de",
            "purchase\tkaufen\tbuy\nlarge house\tgrosses Haus\tbig house\n".as_bytes(),
        )
        .unwrap();
        let bt = BackTranslator::new(client, BtConfig::for_source("en")).unwrap();
        assert_eq!(bt.round_trip("they purchase a large house").unwrap(), "they buy a big house");
    }

    #[test]
    fn cache_halves_client_calls() {
        let client = Counting {
            inner: IdentityClient,
            calls: AtomicUsize::new(0),
        };
        let bt = BackTranslator::new(client, BtConfig::for_source("en")).unwrap();
        let a = bt.round_trip("same input").unwrap();
        let b = bt.round_trip("same input").unwrap();
        assert_eq!(a, b);
        assert_eq!(bt.client().calls.load(Ordering::SeqCst), 2);
        bt.clear_cache();
        bt.round_trip("same input").unwrap();
        assert_eq!(bt.client().calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn config_errors() {
        assert!(BackTranslator::new(IdentityClient, BtConfig {
            pivot_language: "en".into(),
            ..BtConfig::for_source("en")
        })
        .is_err());
        assert_eq!(BtConfig::for_source("vi").pivot_language, "en");
        let dict = DictionaryClient::new("en", "fr", &[]);
        assert!(matches!(
            BackTranslator::new(dict, BtConfig::for_source("en")),
            Err(TranslateError::Unsupported { .. })
        ));
    }

    #[test]
    fn retries_then_succeeds_or_fails() {
        let bt = BackTranslator::new(Faulty { flaky: AtomicUsize::new(2) }, BtConfig::for_source("en"))
            .unwrap()
            .with_retry(fast());
        assert_eq!(bt.round_trip("ok").unwrap(), "OK");
        let bt = BackTranslator::new(Faulty { flaky: AtomicUsize::new(3) }, BtConfig::for_source("en"))
            .unwrap()
            .with_retry(fast());
        assert!(matches!(bt.round_trip("ok"), Err(TranslateError::Transport(_))));
    }

    #[test]
    fn batch_isolates_failures() {
        let bt = BackTranslator::new(Faulty { flaky: AtomicUsize::new(0) }, BtConfig::for_source("en"))
            .unwrap()
            .with_retry(fast());
        let out = bt.batch_round_trip(&["one", "bad two", "three", " "]);
        assert_eq!(out[0], BtStatus::Done("ONE".into()));
        assert!(matches!(out[1], BtStatus::Failed(_)));
        assert_eq!(out[2], BtStatus::Done("THREE".into()));
        assert_eq!(out[3], BtStatus::Skipped);
    }

    #[test]
    fn identity_batch_is_identity() {
        let keep = BtConfig {
            separator_policy: SeparatorPolicy::Keep,
            ..BtConfig::default()
        };
        let bt = BackTranslator::new(IdentityClient, keep).unwrap();
        let texts: Vec<String> = (0..100).map(|i| format!("sentence number {i}")).collect();
        let out = bt.batch_round_trip(&texts);
        for (t, o) in texts.iter().zip(&out) {
            assert_eq!(o.output(), Some(t.as_str()));
        }
    }
}
