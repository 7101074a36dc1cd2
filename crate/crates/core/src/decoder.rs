//! Structural simplification: beam search over a dependency tree where each
//! new token must be a child of the previously generated one.
//!
//! A hypothesis is a list of chunks. A chunk is a downward path in the tree;
//! when the current token has no unselected children, a new chunk is opened
//! at the unselected token nearest the root (lowest depth, then lowest
//! index). Every search step therefore adds exactly one token, so all beam
//! members share the same length at any step.
//!
//! The search seeds the first chunk with the root's subject (when present)
//! followed by the root, and stops at the first step where some hypothesis
//! is both long enough (`ceil(lambda * n)` tokens) and similar enough
//! (`sim >= tau`). Among those, the highest total wins. If no hypothesis ever
//! qualifies, the best hypothesis covering every token is returned.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fluency::{PosLanguageModel, Sym};
use crate::similarity::{embed, similarity_of, EmbeddingBackend, EmbeddingVector, SimilarityError};
use crate::treebank::DepSentence;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decoder configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecoderConfig {
    /// Weight of the fluency term.
    pub alpha: f64,
    /// Minimum similarity to the original for a hypothesis to complete.
    pub tau: f64,
    /// Minimum output/input token ratio for a hypothesis to complete.
    pub lambda_ratio: f64,
    pub beam_size: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            alpha: 2.0,
            tau: 0.95,
            lambda_ratio: 0.5,
            beam_size: 5,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(DecodeError::Config(format!("alpha must be a finite non-negative number, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(DecodeError::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !(self.lambda_ratio > 0.0 && self.lambda_ratio <= 1.0) {
            return Err(DecodeError::Config(format!(
                "lambda must lie in (0, 1], got {}",
                self.lambda_ratio
            )));
        }
        if self.beam_size == 0 {
            return Err(DecodeError::Config("beam size must be at least 1".into()));
        }
        Ok(())
    }

    /// Minimum number of tokens before a hypothesis may complete.
    pub fn min_tokens(&self, n: usize) -> usize {
        // The epsilon keeps e.g. 0.3 * 10 from rounding up to 4.
        ((self.lambda_ratio * n as f64) - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScoreBreakdown {
    pub sim: f64,
    pub flu: f64,
    pub depth: f64,
    pub total: f64,
}

impl ScoreBreakdown {
    pub fn new(sim: f64, flu: f64, depth: f64, alpha: f64) -> Self {
        ScoreBreakdown {
            sim,
            flu,
            depth,
            total: sim + alpha * flu + depth,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    ThresholdMet,
    TokensExhausted,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::ThresholdMet => "threshold-met",
            Termination::TokensExhausted => "tokens-exhausted",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    selected: Vec<usize>,
    chunks: Vec<Vec<usize>>,
    seed_len: usize,
    frontier: usize,
    score: Option<ScoreBreakdown>,
    terminated: Option<Termination>,
}

impl Hypothesis {
    /// Builds a hypothesis from chunks in generation order. The first
    /// `seed_len` tokens of the first chunk are the search seed.
    pub fn from_chunks(chunks: Vec<Vec<usize>>, seed_len: usize) -> Self {
        assert!(chunks.iter().all(|c| !c.is_empty()), "chunks must be non-empty");
        let selected: Vec<usize> = chunks.iter().flatten().copied().collect();
        let frontier = *selected.last().expect("hypothesis needs at least one token");
        Hypothesis {
            selected,
            chunks,
            seed_len,
            frontier,
            score: None,
            terminated: None,
        }
    }

    /// Token indices in generation order.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    /// Chunks in generation order, tokens within each in generation order.
    pub fn chunks(&self) -> &[Vec<usize>] {
        &self.chunks
    }

    /// Number of leading tokens placed by the seed (subject and root).
    pub fn seed_len(&self) -> usize {
        self.seed_len
    }

    pub fn frontier(&self) -> usize {
        self.frontier
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn score(&self) -> Option<ScoreBreakdown> {
        self.score
    }

    pub fn terminated(&self) -> Option<Termination> {
        self.terminated
    }

    /// Each chunk's tokens sorted into input order.
    pub fn surface_chunks(&self) -> Vec<Vec<usize>> {
        self.chunks
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.sort_unstable();
                c
            })
            .collect()
    }

    fn push(&self, token: usize, new_chunk: bool) -> Hypothesis {
        let mut next = self.clone();
        next.selected.push(token);
        if new_chunk {
            next.chunks.push(vec![token]);
        } else {
            next.chunks.last_mut().unwrap().push(token);
        }
        next.frontier = token;
        next.score = None;
        next
    }
}

/// The seed hypothesis: `[subject, root]` when the root has a subject,
/// otherwise `[root]`. The frontier is the root in both cases.
pub fn initial_hypotheses(sent: &DepSentence) -> Vec<Hypothesis> {
    let root = sent.root();
    let seed = match sent.root_subject() {
        Some(subj) => vec![subj, root],
        None => vec![root],
    };
    let seed_len = seed.len();
    vec![Hypothesis::from_chunks(vec![seed], seed_len)]
}

/// One successor per unselected child of the frontier. With no such child,
/// a single successor opening a new chunk at the unselected token of least
/// (depth, index); with nothing left, the hypothesis itself marked exhausted.
pub fn expand(sent: &DepSentence, hyp: &Hypothesis) -> Vec<Hypothesis> {
    assert!(hyp.terminated.is_none(), "cannot expand a terminated hypothesis");
    let candidates: Vec<usize> = sent
        .children(hyp.frontier)
        .iter()
        .copied()
        .filter(|c| !hyp.selected.contains(c))
        .collect();
    if !candidates.is_empty() {
        return candidates.into_iter().map(|c| hyp.push(c, false)).collect();
    }
    let restart = (1..=sent.len())
        .filter(|i| !hyp.selected.contains(i))
        .min_by_key(|&i| (sent.depth(i), i));
    match restart {
        Some(tok) => vec![hyp.push(tok, true)],
        None => {
            let mut done = hyp.clone();
            done.terminated = Some(Termination::TokensExhausted);
            vec![done]
        }
    }
}

/// Output string: chunks joined by `" - "`, each chunk in input order.
pub fn render(sent: &DepSentence, hyp: &Hypothesis) -> String {
    hyp.surface_chunks()
        .iter()
        .map(|c| chunk_text(sent, c))
        .collect::<Vec<_>>()
        .join(" - ")
}

/// The scored string: every chunk in input order, separators dropped.
pub fn plain_surface(sent: &DepSentence, hyp: &Hypothesis) -> String {
    hyp.surface_chunks()
        .iter()
        .map(|c| chunk_text(sent, c))
        .collect::<Vec<_>>()
        .join(" ")
}

fn chunk_text(sent: &DepSentence, chunk: &[usize]) -> String {
    chunk
        .iter()
        .map(|&i| sent.token(i).form.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Per-sentence scoring state: the original embedding, token symbols and a
/// similarity cache keyed by the scored surface string.
pub struct Scorer<'a, B: ?Sized> {
    cfg: &'a DecoderConfig,
    sent: &'a DepSentence,
    lm: &'a PosLanguageModel,
    backend: &'a B,
    original: EmbeddingVector,
    syms: Vec<Sym>,
    sim_cache: HashMap<String, f64>,
}

impl<'a, B: EmbeddingBackend + ?Sized> Scorer<'a, B> {
    pub fn new(
        cfg: &'a DecoderConfig,
        sent: &'a DepSentence,
        lm: &'a PosLanguageModel,
        backend: &'a B,
    ) -> Result<Self, DecodeError> {
        let original = embed(backend, &sent.joined_forms())?;
        let syms = sent.tokens().iter().map(|t| lm.symbol_for_upos(t.upos)).collect();
        Ok(Scorer {
            cfg,
            sent,
            lm,
            backend,
            original,
            syms,
            sim_cache: HashMap::new(),
        })
    }

    pub fn score(&mut self, hyp: &Hypothesis) -> Result<ScoreBreakdown, DecodeError> {
        assert!(!hyp.is_empty(), "cannot score an empty hypothesis");
        let surface = plain_surface(self.sent, hyp);
        let sim = match self.sim_cache.get(&surface) {
            Some(&s) => s,
            None => {
                let v = embed(self.backend, &surface)?;
                let s = similarity_of(&self.original, &v)?;
                self.sim_cache.insert(surface, s);
                s
            }
        };
        Ok(self.breakdown(hyp, sim))
    }

    /// Scores every hypothesis in place, embedding all unseen surfaces in
    /// a single batch.
    pub fn score_all(&mut self, hyps: &mut [Hypothesis]) -> Result<(), DecodeError> {
        let surfaces: Vec<String> = hyps.iter().map(|h| plain_surface(self.sent, h)).collect();
        let mut missing: Vec<&str> = surfaces
            .iter()
            .filter(|s| !self.sim_cache.contains_key(*s))
            .map(String::as_str)
            .collect();
        missing.sort_unstable();
        missing.dedup();
        if !missing.is_empty() {
            let vectors = self.backend.embed_batch(&missing)?;
            for (text, v) in missing.iter().zip(&vectors) {
                let s = similarity_of(&self.original, v)?;
                self.sim_cache.insert(text.to_string(), s);
            }
        }
        for (h, surface) in hyps.iter_mut().zip(&surfaces) {
            let sim = self.sim_cache[surface];
            h.score = Some(self.breakdown(h, sim));
        }
        Ok(())
    }

    fn breakdown(&self, hyp: &Hypothesis, sim: f64) -> ScoreBreakdown {
        let chunk_syms: Vec<Vec<Sym>> = hyp
            .surface_chunks()
            .iter()
            .map(|c| c.iter().map(|&i| self.syms[i - 1]).collect())
            .collect();
        let flu = self.lm.chunked_fluency_syms(&chunk_syms);
        let depth = 1.0 / self.sent.max_depth_of(hyp.selected.iter().copied()) as f64;
        ScoreBreakdown::new(sim, flu, depth, self.cfg.alpha)
    }
}

/// Scores one hypothesis without caching.
pub fn score<B: EmbeddingBackend + ?Sized>(
    cfg: &DecoderConfig,
    sent: &DepSentence,
    hyp: &Hypothesis,
    lm: &PosLanguageModel,
    backend: &B,
) -> Result<ScoreBreakdown, DecodeError> {
    Scorer::new(cfg, sent, lm, backend)?.score(hyp)
}

/// Ranking used for the beam and for the final pick: higher total, then
/// fewer tokens, then the lexicographically smaller generation sequence.
pub fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    let ta = a.score.map_or(f64::NEG_INFINITY, |s| s.total);
    let tb = b.score.map_or(f64::NEG_INFINITY, |s| s.total);
    tb.total_cmp(&ta)
        .then(a.len().cmp(&b.len()))
        .then_with(|| a.selected.cmp(&b.selected))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SearchCounters {
    pub hypotheses_scored: usize,
    /// Chunks in the returned hypothesis.
    pub chunks_created: usize,
    /// Hypotheses scored, grouped by the index of the chunk they extended.
    pub scored_per_chunk: Vec<usize>,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct SimplificationResult {
    pub surface: String,
    pub hypothesis: Hypothesis,
    pub score: ScoreBreakdown,
    pub reason: Termination,
    pub counters: SearchCounters,
}

impl SimplificationResult {
    pub fn selected(&self) -> &[usize] {
        self.hypothesis.selected()
    }
}

pub fn simplify<B: EmbeddingBackend + ?Sized>(
    cfg: &DecoderConfig,
    sent: &DepSentence,
    lm: &PosLanguageModel,
    backend: &B,
) -> Result<SimplificationResult, DecodeError> {
    cfg.validate()?;
    let n = sent.len();
    let min_tokens = cfg.min_tokens(n);
    let mut scorer = Scorer::new(cfg, sent, lm, backend)?;
    let mut counters = SearchCounters::default();

    let completable = |h: &Hypothesis| {
        let s = h.score.expect("scored");
        h.len() >= min_tokens && h.len() < n && s.sim >= cfg.tau
    };
    let finish = |mut pool: Vec<Hypothesis>, reason: Termination, mut counters: SearchCounters| {
        pool.sort_by(rank);
        let best = pool.swap_remove(0);
        counters.chunks_created = best.chunks.len();
        SimplificationResult {
            surface: render(sent, &best),
            score: best.score.expect("scored"),
            hypothesis: best,
            reason,
            counters,
        }
    };

    let mut beam = initial_hypotheses(sent);
    scorer.score_all(&mut beam)?;
    for _ in &beam {
        counters.hypotheses_scored += 1;
        bump(&mut counters.scored_per_chunk, 0);
    }
    if beam.iter().all(|h| h.len() == n) {
        return Ok(finish(beam, Termination::TokensExhausted, counters));
    }
    let pool: Vec<Hypothesis> = beam.iter().filter(|h| completable(h)).cloned().collect();
    if !pool.is_empty() {
        return Ok(finish(pool, Termination::ThresholdMet, counters));
    }

    loop {
        counters.steps += 1;
        let mut candidates = Vec::new();
        let mut exhausted = Vec::new();
        for h in &beam {
            for c in expand(sent, h) {
                if c.terminated.is_some() {
                    exhausted.push(c);
                } else {
                    candidates.push(c);
                }
            }
        }
        scorer.score_all(&mut candidates)?;
        for c in &candidates {
            counters.hypotheses_scored += 1;
            bump(&mut counters.scored_per_chunk, c.chunks.len() - 1);
        }
        let pool: Vec<Hypothesis> = candidates.iter().filter(|h| completable(h)).cloned().collect();
        if !pool.is_empty() {
            return Ok(finish(pool, Termination::ThresholdMet, counters));
        }
        if candidates.is_empty() {
            return Ok(finish(exhausted, Termination::TokensExhausted, counters));
        }
        candidates.sort_by(rank);
        candidates.truncate(cfg.beam_size);
        beam = candidates;
    }
}

fn bump(v: &mut Vec<usize>, idx: usize) {
    if v.len() <= idx {
        v.resize(idx + 1, 0);
    }
    v[idx] += 1;
}

/// Simplifies every sentence, `jobs` at a time, keeping input order.
/// Failures are reported per sentence.
pub fn simplify_all<B: EmbeddingBackend + ?Sized>(
    cfg: &DecoderConfig,
    sentences: &[DepSentence],
    lm: &PosLanguageModel,
    backend: &B,
    jobs: usize,
) -> Vec<Result<SimplificationResult, DecodeError>> {
    let run = || {
        sentences
            .par_iter()
            .map(|s| simplify(cfg, s, lm, backend))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => sentences.iter().map(|s| simplify(cfg, s, lm, backend)).collect(),
    }
}
