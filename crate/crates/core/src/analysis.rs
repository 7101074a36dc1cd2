//! Leave-one-out importance of tokens: how much the sentence embedding
//! similarity drops when a single token is removed, aggregated by
//! part of speech, tree depth and relative position.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::similarity::{similarity_score, EmbeddingBackend, SimilarityError};
use crate::treebank::{DepSentence, Upos};

pub const DECILES: usize = 10;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("sentence has {0} token(s); at least 2 are needed")]
    TooShort(usize),
    #[error("no sentence with at least 2 tokens")]
    EmptyCorpus,
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TokenReduction {
    pub index: usize,
    pub upos: Upos,
    pub depth: usize,
    pub decile: usize,
    pub reduction: f64,
}

/// Position bucket of token `index` (1-based) in an `n`-token sentence.
pub fn position_decile(index: usize, n: usize) -> usize {
    (index - 1) * DECILES / n
}

/// `1 - sim(full, full without token i)` for every token.
pub fn leave_one_out_reductions<B: EmbeddingBackend + ?Sized>(
    sent: &DepSentence,
    backend: &B,
) -> Result<Vec<TokenReduction>, AnalysisError> {
    let n = sent.len();
    if n < 2 {
        return Err(AnalysisError::TooShort(n));
    }
    let full = sent.joined_forms();
    let mut out = Vec::with_capacity(n);
    for tok in sent.tokens() {
        let rest: Vec<&str> = sent
            .tokens()
            .iter()
            .filter(|t| t.index != tok.index)
            .map(|t| t.form.as_str())
            .collect();
        let sim = similarity_score(backend, &full, &rest.join(" "))?;
        out.push(TokenReduction {
            index: tok.index,
            upos: tok.upos,
            depth: sent.depth(tok.index),
            decile: position_decile(tok.index, n),
            reduction: (1.0 - sim).clamp(0.0, 1.0),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ImportanceProfile {
    pub sentences: usize,
    pub skipped: usize,
    pub tokens: usize,
    pub by_pos: BTreeMap<Upos, f64>,
    pub by_depth: BTreeMap<usize, f64>,
    pub by_decile: BTreeMap<usize, f64>,
    /// For each depth, the share of tokens at that depth carrying each tag.
    pub pos_by_depth: BTreeMap<usize, BTreeMap<Upos, f64>>,
}

/// Mean with values sorted first, so the result does not depend on the
/// order in which sentences were visited.
fn ordered_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn grouped_means<K: Ord + Copy>(rows: &[TokenReduction], key: impl Fn(&TokenReduction) -> K) -> BTreeMap<K, f64> {
    let mut groups: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry(key(r)).or_default().push(r.reduction);
    }
    groups.into_iter().map(|(k, v)| (k, ordered_mean(v))).collect()
}

/// Aggregates leave-one-out reductions over a corpus. Sentences shorter
/// than two tokens are counted in `skipped`.
pub fn aggregate_profile<B: EmbeddingBackend + ?Sized>(
    corpus: &[DepSentence],
    backend: &B,
) -> Result<ImportanceProfile, AnalysisError> {
    let per_sentence: Vec<Option<Vec<TokenReduction>>> = corpus
        .par_iter()
        .map(|s| match leave_one_out_reductions(s, backend) {
            Ok(rows) => Ok(Some(rows)),
            Err(AnalysisError::TooShort(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_, _>>()?;
    let skipped = per_sentence.iter().filter(|r| r.is_none()).count();
    let rows: Vec<TokenReduction> = per_sentence.into_iter().flatten().flatten().collect();
    if rows.is_empty() {
        return Err(AnalysisError::EmptyCorpus);
    }

    let mut tag_counts: BTreeMap<usize, BTreeMap<Upos, usize>> = BTreeMap::new();
    for r in &rows {
        *tag_counts.entry(r.depth).or_default().entry(r.upos).or_insert(0) += 1;
    }
    let pos_by_depth = tag_counts
        .into_iter()
        .map(|(d, tags)| {
            let total: usize = tags.values().sum();
            (d, tags.into_iter().map(|(t, c)| (t, c as f64 / total as f64)).collect())
        })
        .collect();

    Ok(ImportanceProfile {
        sentences: corpus.len() - skipped,
        skipped,
        tokens: rows.len(),
        by_pos: grouped_means(&rows, |r| r.upos),
        by_depth: grouped_means(&rows, |r| r.depth),
        by_decile: grouped_means(&rows, |r| r.decile),
        pos_by_depth,
    })
}

impl ImportanceProfile {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "sentences {}  skipped {}  tokens {}\n",
            self.sentences, self.skipped, self.tokens
        );
        let _ = writeln!(out, "{:<8}{:>10}", "UPOS", "reduction");
        for (t, v) in &self.by_pos {
            let _ = writeln!(out, "{:<8}{:>10.4}", t.as_str(), v);
        }
        let _ = writeln!(out, "\n{:<8}{:>10}", "depth", "reduction");
        for (d, v) in &self.by_depth {
            let _ = writeln!(out, "{d:<8}{v:>10.4}");
        }
        let _ = writeln!(out, "\n{:<8}{:>10}", "decile", "reduction");
        for (d, v) in &self.by_decile {
            let _ = writeln!(out, "{d:<8}{v:>10.4}");
        }
        let _ = writeln!(out, "\nPOS share by depth");
        for (d, tags) in &self.pos_by_depth {
            let cells: Vec<String> = tags.iter().map(|(t, p)| format!("{}={p:.3}", t.as_str())).collect();
            let _ = writeln!(out, "{d:<8}{}", cells.join(" "));
        }
        out
    }

    /// Long-format rows `table<TAB>key<TAB>tag<TAB>value` for plotting tools.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("table\tkey\ttag\tvalue\n");
        for (t, v) in &self.by_pos {
            let _ = writeln!(out, "pos\t{}\t\t{v}", t.as_str());
        }
        for (d, v) in &self.by_depth {
            let _ = writeln!(out, "depth\t{d}\t\t{v}");
        }
        for (d, v) in &self.by_decile {
            let _ = writeln!(out, "decile\t{d}\t\t{v}");
        }
        for (d, tags) in &self.pos_by_depth {
            for (t, p) in tags {
                let _ = writeln!(out, "pos_by_depth\t{d}\t{}\t{p}", t.as_str());
            }
        }
        out
    }
}
