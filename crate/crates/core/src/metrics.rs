//! Automatic simplification metrics: compression ratio, exact copies, split
//! ratio, added/deleted word proportions, Levenshtein similarity, embedding
//! similarity and SARI with its add/keep/delete components.
//!
//! Word-level metrics share one tokenizer: lower-case, split on whitespace,
//! then peel trailing `.`, `!`, `?` off each word unless the word already
//! contains an inner period (abbreviations such as `u.s.`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::similarity::{similarity_score, EmbeddingBackend, SimilarityError};

pub const SARI_MAX_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("instance {0}: original sentence is empty")]
    EmptyOriginal(usize),
    #[error("instance {0}: at least one reference is required")]
    NoReferences(usize),
    #[error("line counts differ: {0}")]
    Alignment(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn split_terminal(word: &str) -> (&str, &str) {
    let body = word.trim_end_matches(is_terminal);
    if body.is_empty() || body.contains('.') {
        return (word, "");
    }
    (body, &word[body.len()..])
}

/// Lower-cased word tokens with terminal punctuation separated.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_lowercase();
        let (body, tail) = split_terminal(&word);
        out.push(body.to_string());
        out.extend(tail.chars().map(String::from));
    }
    out
}

/// Sentences delimited by words ending in `.`, `!` or `?`; never below 1.
pub fn sentence_count(text: &str) -> usize {
    let words: Vec<&str> = text.split_whitespace().collect();
    let boundaries = words
        .iter()
        .enumerate()
        .filter(|(i, w)| *i + 1 < words.len() && !split_terminal(w).1.is_empty())
        .count();
    boundaries + 1
}

/// Characters of `output` over characters of `original`.
pub fn compression_ratio(original: &str, output: &str) -> f64 {
    let denom = original.chars().count();
    assert!(denom > 0, "compression ratio needs a non-empty original");
    output.chars().count() as f64 / denom as f64
}

/// 1 when both sides tokenize identically, else 0.
pub fn exact_copy(original: &str, output: &str) -> f64 {
    if tokenize(original) == tokenize(output) {
        1.0
    } else {
        0.0
    }
}

pub fn split_ratio(original: &str, output: &str) -> f64 {
    sentence_count(output) as f64 / sentence_count(original) as f64
}

fn bag(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

fn multiset_minus(a: &[String], b: &[String]) -> usize {
    let bb = bag(b);
    bag(a)
        .iter()
        .map(|(t, &n)| n.saturating_sub(bb.get(t).copied().unwrap_or(0)))
        .sum()
}

/// Share of output words not found in the original (multiset difference).
pub fn additions_proportion(original: &str, output: &str) -> f64 {
    let out = tokenize(output);
    if out.is_empty() {
        return 0.0;
    }
    multiset_minus(&out, &tokenize(original)) as f64 / out.len() as f64
}

/// Share of original words missing from the output (multiset difference).
pub fn deletions_proportion(original: &str, output: &str) -> f64 {
    let orig = tokenize(original);
    let out = tokenize(output);
    if out.is_empty() {
        return 1.0;
    }
    if orig.is_empty() {
        return 0.0;
    }
    multiset_minus(&orig, &out) as f64 / orig.len() as f64
}

/// `1 - levenshtein / max_len` over characters; two empty strings score 1.
pub fn levenshtein_similarity(original: &str, output: &str) -> f64 {
    let longest = original.chars().count().max(output.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(original, output) as f64 / longest as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SariScore {
    pub sari: f64,
    pub add: f64,
    pub keep: f64,
    pub del: f64,
}

type Counts<'a> = BTreeMap<&'a [String], usize>;

fn ngrams(tokens: &[String], n: usize) -> Counts<'_> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Precision and recall for one operation at one order. `None` marks a
/// side whose denominator is empty.
struct OrderStats {
    precision: Option<f64>,
    recall: Option<f64>,
}

impl OrderStats {
    /// F1, or `None` when both sides are empty and the order is skipped.
    fn f1(&self) -> Option<f64> {
        if self.precision.is_none() && self.recall.is_none() {
            return None;
        }
        let p = self.precision.unwrap_or(0.0);
        let r = self.recall.unwrap_or(0.0);
        Some(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
    }
}

fn keep_stats(src: &Counts, out: &Counts, refs: &Counts, numref: usize) -> OrderStats {
    let get = |m: &Counts, g: &[String]| m.get(g).copied().unwrap_or(0);
    // Source and output counts are replicated once per reference.
    let kept: Vec<(&[String], usize)> = src
        .iter()
        .filter_map(|(g, &s)| {
            let k = (s * numref).min(get(out, g) * numref);
            (k > 0).then_some((*g, k))
        })
        .collect();
    let all: usize = src.iter().map(|(g, &s)| (s * numref).min(get(refs, g))).sum();
    let good: Vec<f64> = kept.iter().map(|&(g, k)| k.min(get(refs, g)) as f64).collect();
    OrderStats {
        precision: (!kept.is_empty())
            .then(|| kept.iter().zip(&good).map(|(&(_, k), g)| g / k as f64).sum::<f64>() / kept.len() as f64),
        recall: (all > 0).then(|| good.iter().sum::<f64>() / all as f64),
    }
}

fn del_stats(src: &Counts, out: &Counts, refs: &Counts, numref: usize) -> OrderStats {
    let get = |m: &Counts, g: &[String]| m.get(g).copied().unwrap_or(0);
    let deleted: Vec<(&[String], usize)> = src
        .iter()
        .filter_map(|(g, &s)| {
            let d = (s * numref).saturating_sub(get(out, g) * numref);
            (d > 0).then_some((*g, d))
        })
        .collect();
    let all: usize = src.iter().map(|(g, &s)| (s * numref).saturating_sub(get(refs, g))).sum();
    let good: Vec<f64> = deleted
        .iter()
        .map(|&(g, d)| d.saturating_sub(get(refs, g)) as f64)
        .collect();
    OrderStats {
        precision: (!deleted.is_empty()).then(|| {
            deleted.iter().zip(&good).map(|(&(_, d), g)| g / d as f64).sum::<f64>() / deleted.len() as f64
        }),
        recall: (all > 0).then(|| good.iter().sum::<f64>() / all as f64),
    }
}

fn add_stats(src: &Counts, out: &Counts, refs: &Counts) -> OrderStats {
    let added: BTreeSet<&[String]> = out.keys().filter(|g| !src.contains_key(*g)).copied().collect();
    let wanted: BTreeSet<&[String]> = refs.keys().filter(|g| !src.contains_key(*g)).copied().collect();
    let good = added.intersection(&wanted).count() as f64;
    OrderStats {
        precision: (!added.is_empty()).then(|| good / added.len() as f64),
        recall: (!wanted.is_empty()).then(|| good / wanted.len() as f64),
    }
}

fn operation_score(per_order: &[Option<f64>]) -> f64 {
    let used: Vec<f64> = per_order.iter().flatten().copied().collect();
    if used.is_empty() {
        // Nothing to do and nothing done at any order.
        return 100.0;
    }
    100.0 * used.iter().sum::<f64>() / used.len() as f64
}

/// SARI over n-gram orders 1..=4 with F1 for every operation.
///
/// At each order, an operation whose precision and recall denominators are
/// both empty is left out of that operation's average; if only one is empty
/// it contributes 0 for that side. An operation with no usable order at all
/// scores 100.
pub fn sari<S: AsRef<str>>(original: &str, output: &str, references: &[S]) -> SariScore {
    assert!(!references.is_empty(), "SARI needs at least one reference");
    let src_toks = tokenize(original);
    let out_toks = tokenize(output);
    let ref_toks: Vec<Vec<String>> = references.iter().map(|r| tokenize(r.as_ref())).collect();
    let numref = references.len();

    let (mut add, mut keep, mut del) = (Vec::new(), Vec::new(), Vec::new());
    for n in 1..=SARI_MAX_ORDER {
        let src = ngrams(&src_toks, n);
        let out = ngrams(&out_toks, n);
        let mut refs: Counts = BTreeMap::new();
        for r in &ref_toks {
            for (g, c) in ngrams(r, n) {
                *refs.entry(g).or_insert(0) += c;
            }
        }
        keep.push(keep_stats(&src, &out, &refs, numref).f1());
        del.push(del_stats(&src, &out, &refs, numref).f1());
        add.push(add_stats(&src, &out, &refs).f1());
    }
    let (add, keep, del) = (operation_score(&add), operation_score(&keep), operation_score(&del));
    SariScore {
        sari: (add + keep + del) / 3.0,
        add,
        keep,
        del,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalInstance {
    pub original: String,
    pub system_output: String,
    pub references: Vec<String>,
}

impl EvalInstance {
    pub fn new(original: impl Into<String>, system_output: impl Into<String>, references: Vec<String>) -> Self {
        EvalInstance {
            original: original.into(),
            system_output: system_output.into(),
            references,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceMetrics {
    pub cr: f64,
    pub cp: f64,
    pub split_ratio: f64,
    pub additions: f64,
    pub deletions: f64,
    pub lev_sim: f64,
    pub sim: Option<f64>,
    pub sari: SariScore,
}

impl InstanceMetrics {
    pub fn compute<B: EmbeddingBackend + ?Sized>(
        inst: &EvalInstance,
        backend: Option<&B>,
    ) -> Result<InstanceMetrics, MetricsError> {
        let (o, s) = (inst.original.as_str(), inst.system_output.as_str());
        let sim = match backend {
            Some(b) if !s.trim().is_empty() => Some(similarity_score(b, o, s)?),
            Some(_) => Some(0.0),
            None => None,
        };
        Ok(InstanceMetrics {
            cr: compression_ratio(o, s),
            cp: exact_copy(o, s),
            split_ratio: split_ratio(o, s),
            additions: additions_proportion(o, s),
            deletions: deletions_proportion(o, s),
            lev_sim: levenshtein_similarity(o, s),
            sim,
            sari: sari(o, s, &inst.references),
        })
    }
}

/// Corpus means of every metric plus the per-instance rows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub instances: usize,
    pub cr: f64,
    pub cp: f64,
    pub split_ratio: f64,
    pub additions: f64,
    pub deletions: f64,
    pub lev_sim: f64,
    pub sim: Option<f64>,
    /// Pseudo-log-likelihood fluency needs an external masked LM; never computed.
    pub fl: Option<f64>,
    pub sari: f64,
    pub sari_add: f64,
    pub sari_keep: f64,
    pub sari_del: f64,
    #[serde(skip)]
    pub per_instance: Vec<InstanceMetrics>,
}

pub fn evaluate_corpus<B: EmbeddingBackend + ?Sized>(
    instances: &[EvalInstance],
    backend: Option<&B>,
) -> Result<MetricsReport, MetricsError> {
    if instances.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut rows = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        if inst.original.trim().is_empty() {
            return Err(MetricsError::EmptyOriginal(i));
        }
        if inst.references.is_empty() {
            return Err(MetricsError::NoReferences(i));
        }
        rows.push(InstanceMetrics::compute(inst, backend)?);
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&InstanceMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let sim = backend.map(|_| mean(&|r| r.sim.unwrap_or(0.0)));
    Ok(MetricsReport {
        instances: rows.len(),
        cr: mean(&|r| r.cr),
        cp: mean(&|r| r.cp),
        split_ratio: mean(&|r| r.split_ratio),
        additions: mean(&|r| r.additions),
        deletions: mean(&|r| r.deletions),
        lev_sim: mean(&|r| r.lev_sim),
        sim,
        fl: None,
        sari: mean(&|r| r.sari.sari),
        sari_add: mean(&|r| r.sari.add),
        sari_keep: mean(&|r| r.sari.keep),
        sari_del: mean(&|r| r.sari.del),
        per_instance: rows,
    })
}

impl MetricsReport {
    /// One flat JSON object; unavailable columns appear as `"unavailable"`.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        let obj = v.as_object_mut().unwrap();
        for key in ["sim", "fl"] {
            if obj.get(key).is_some_and(|x| x.is_null()) {
                obj.insert(key.into(), serde_json::Value::String("unavailable".into()));
            }
        }
        serde_json::to_string_pretty(&v).unwrap()
    }

    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        let mut out = String::new();
        let _ = writeln!(out, "{:<12}{:>12}", "metric", "value");
        let rows: [(&str, String); 13] = [
            ("instances", self.instances.to_string()),
            ("CR", format!("{:.4}", self.cr)),
            ("CP", format!("{:.4}", self.cp)),
            ("%SP", format!("{:.4}", self.split_ratio)),
            ("%A", format!("{:.4}", self.additions)),
            ("%D", format!("{:.4}", self.deletions)),
            ("LevSIM", format!("{:.4}", self.lev_sim)),
            ("SIM", opt(self.sim)),
            ("FL", opt(self.fl)),
            ("SARI", format!("{:.2}", self.sari)),
            ("Add", format!("{:.2}", self.sari_add)),
            ("Keep", format!("{:.2}", self.sari_keep)),
            ("Del", format!("{:.2}", self.sari_del)),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<12}{v:>12}");
        }
        out
    }

    /// Tab-separated per-instance rows with a header.
    pub fn instances_tsv(&self) -> String {
        let mut out = String::from("index\tcr\tcp\tsplit\tadd_prop\tdel_prop\tlev_sim\tsim\tsari\tadd\tkeep\tdel\n");
        for (i, r) in self.per_instance.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.cr,
                r.cp,
                r.split_ratio,
                r.additions,
                r.deletions,
                r.lev_sim,
                r.sim.map_or("n/a".into(), |s| s.to_string()),
                r.sari.sari,
                r.sari.add,
                r.sari.keep,
                r.sari.del
            );
        }
        out
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, MetricsError> {
    let io_err = |e: std::io::Error| MetricsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    std::io::BufReader::new(file)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err)
}

/// Loads line-aligned `orig`, `sys` and reference files.
pub fn read_corpus_files<P: AsRef<Path>>(
    original: &Path,
    system: &Path,
    references: &[P],
) -> Result<Vec<EvalInstance>, MetricsError> {
    let orig = read_lines(original)?;
    let sys = read_lines(system)?;
    let refs: Vec<Vec<String>> = references
        .iter()
        .map(|p| read_lines(p.as_ref()))
        .collect::<Result<_, _>>()?;
    let mismatch = |path: &Path, n: usize| {
        MetricsError::Alignment(format!(
            "{} has {} lines but {} has {n}",
            original.display(),
            orig.len(),
            path.display()
        ))
    };
    if sys.len() != orig.len() {
        return Err(mismatch(system, sys.len()));
    }
    for (p, r) in references.iter().zip(&refs) {
        if r.len() != orig.len() {
            return Err(mismatch(p.as_ref(), r.len()));
        }
    }
    Ok((0..orig.len())
        .map(|i| EvalInstance::new(orig[i].clone(), sys[i].clone(), refs.iter().map(|r| r[i].clone()).collect()))
        .collect())
}
