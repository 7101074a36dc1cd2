//! Interpolated Kneser-Ney n-gram model over part-of-speech tags.
//!
//! The highest order uses absolute discounting on raw counts; every lower
//! order uses continuation counts (number of distinct left extensions), and
//! the unigram level interpolates with a uniform distribution so that every
//! tag, including `<unk>`, keeps non-zero mass.
//!
//! Sequences are padded with `order - 1` copies of `<s>` and closed with one
//! `</s>` during training. `<s>` is never predicted.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::treebank::Upos;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_DISCOUNT: f64 = 0.75;

const FORMAT_MAGIC: &str = "treesimp-poslm";
const FORMAT_VERSION: u32 = 1;
const MAX_ORDER: usize = 8;

#[derive(Debug, Error)]
pub enum FluencyError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("sequence {0} of the training corpus is empty")]
    EmptySequence(usize),
    #[error("discount must lie in (0, 1), got {0}")]
    InvalidDiscount(f64),
    #[error("order must be between 2 and {MAX_ORDER}, got {0}")]
    InvalidOrder(usize),
    #[error("invalid tagset: {0}")]
    InvalidTagset(String),
    #[error("unsupported model version {found} (expected {FORMAT_VERSION})")]
    Version { found: String },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Vocabulary symbol. Tagset entries come first, then `<unk>`, `</s>`, `<s>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sym(u8);

#[derive(Clone, Copy, Debug, Default)]
struct ContextStats {
    total: u64,
    distinct: u64,
}

#[derive(Clone, Debug)]
pub struct PosLanguageModel {
    order: usize,
    discount: f64,
    tagset: Vec<String>,
    lookup: HashMap<String, Sym>,
    /// Raw counts of full-order n-grams; the only persisted table.
    counts: HashMap<u64, u64>,
    high_ctx: HashMap<u64, ContextStats>,
    /// Continuation counts for orders 1..order-1, indexed by `order - 1`.
    continuation: Vec<HashMap<u64, u64>>,
    continuation_ctx: Vec<HashMap<u64, ContextStats>>,
    unknown_mapped: usize,
}

fn push_key(key: u64, sym: Sym) -> u64 {
    (key << 8) | (sym.0 as u64 + 1)
}

fn key_of(syms: &[Sym]) -> u64 {
    syms.iter().fold(0, |k, &s| push_key(k, s))
}

fn suffix_key(key: u64, len: usize) -> u64 {
    if len >= 8 {
        key
    } else {
        key & ((1u64 << (8 * len)) - 1)
    }
}

fn decode_key(mut key: u64) -> Vec<Sym> {
    let mut out = Vec::new();
    while key != 0 {
        out.push(Sym((key & 0xff) as u8 - 1));
        key >>= 8;
    }
    out.reverse();
    out
}

impl PosLanguageModel {
    /// The universal POS tagset as owned strings.
    pub fn upos_tagset() -> Vec<String> {
        Upos::ALL.iter().map(|t| t.as_str().to_string()).collect()
    }

    fn empty<S: AsRef<str>>(tagset: &[S], order: usize, discount: f64) -> Result<Self, FluencyError> {
        if !(2..=MAX_ORDER).contains(&order) {
            return Err(FluencyError::InvalidOrder(order));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(FluencyError::InvalidDiscount(discount));
        }
        if tagset.len() + 3 > 255 {
            return Err(FluencyError::InvalidTagset(format!(
                "{} tags exceed the supported maximum of 252",
                tagset.len()
            )));
        }
        let mut lookup = HashMap::new();
        let mut names = Vec::with_capacity(tagset.len());
        for (i, tag) in tagset.iter().enumerate() {
            let tag = tag.as_ref();
            if tag.is_empty() || tag.chars().any(char::is_whitespace) || [BOS, EOS, UNK].contains(&tag) {
                return Err(FluencyError::InvalidTagset(format!("illegal tag {tag:?}")));
            }
            if lookup.insert(tag.to_string(), Sym(i as u8)).is_some() {
                return Err(FluencyError::InvalidTagset(format!("duplicate tag {tag:?}")));
            }
            names.push(tag.to_string());
        }
        Ok(PosLanguageModel {
            order,
            discount,
            tagset: names,
            lookup,
            counts: HashMap::new(),
            high_ctx: HashMap::new(),
            continuation: vec![HashMap::new(); order - 1],
            continuation_ctx: vec![HashMap::new(); order - 1],
            unknown_mapped: 0,
        })
    }

    /// A model with no evidence: every prediction is uniform over the vocabulary.
    pub fn uniform<S: AsRef<str>>(tagset: &[S], order: usize) -> Result<Self, FluencyError> {
        Self::empty(tagset, order, DEFAULT_DISCOUNT)
    }

    /// Trains an interpolated Kneser-Ney model. Tags outside `tagset` are
    /// mapped to `<unk>` and counted in [`unknown_mapped`](Self::unknown_mapped).
    pub fn train<S, T>(corpus: &[Vec<S>], tagset: &[T], order: usize, discount: f64) -> Result<Self, FluencyError>
    where
        S: AsRef<str>,
        T: AsRef<str>,
    {
        if corpus.is_empty() {
            return Err(FluencyError::EmptyCorpus);
        }
        let mut model = Self::empty(tagset, order, discount)?;
        let bos = model.bos();
        let eos = model.eos();
        let mut padded = Vec::new();
        for (i, seq) in corpus.iter().enumerate() {
            if seq.is_empty() {
                return Err(FluencyError::EmptySequence(i));
            }
            padded.clear();
            padded.extend(std::iter::repeat_n(bos, order - 1));
            for tag in seq {
                let sym = model.symbol(tag.as_ref());
                if sym == model.unk() && tag.as_ref() != UNK {
                    model.unknown_mapped += 1;
                }
                padded.push(sym);
            }
            padded.push(eos);
            for window in padded.windows(order) {
                *model.counts.entry(key_of(window)).or_insert(0) += 1;
            }
        }
        if model.unknown_mapped > 0 {
            log::warn!("poslm: {} tags outside the tagset mapped to {UNK}", model.unknown_mapped);
        }
        model.derive_tables();
        Ok(model)
    }

    fn derive_tables(&mut self) {
        let n = self.order;
        self.high_ctx.clear();
        for (&key, &c) in &self.counts {
            let st = self.high_ctx.entry(key >> 8).or_default();
            st.total += c;
            st.distinct += 1;
        }
        // Each lower-order m-gram counts the distinct (m+1)-gram types it ends.
        for m in (1..n).rev() {
            let mut table: HashMap<u64, u64> = HashMap::new();
            {
                let longer: Box<dyn Iterator<Item = &u64>> = if m == n - 1 {
                    Box::new(self.counts.keys())
                } else {
                    Box::new(self.continuation[m].keys())
                };
                for &key in longer {
                    *table.entry(suffix_key(key, m)).or_insert(0) += 1;
                }
            }
            let mut ctx: HashMap<u64, ContextStats> = HashMap::new();
            for (&key, &c) in &table {
                let st = ctx.entry(key >> 8).or_default();
                st.total += c;
                st.distinct += 1;
            }
            self.continuation[m - 1] = table;
            self.continuation_ctx[m - 1] = ctx;
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn tagset(&self) -> &[String] {
        &self.tagset
    }

    /// Number of training tags that were mapped to `<unk>`.
    pub fn unknown_mapped(&self) -> usize {
        self.unknown_mapped
    }

    /// Number of distinct n-gram types stored for each order `1..=order`
    /// (continuation types below the top order).
    pub fn ngram_type_counts(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.continuation.iter().map(HashMap::len).collect();
        v.push(self.counts.len());
        v
    }

    /// Total number of full-order n-gram tokens seen in training.
    pub fn ngram_token_count(&self) -> u64 {
        self.counts.values().sum()
    }

    fn unk(&self) -> Sym {
        Sym(self.tagset.len() as u8)
    }

    fn eos(&self) -> Sym {
        Sym(self.tagset.len() as u8 + 1)
    }

    fn bos(&self) -> Sym {
        Sym(self.tagset.len() as u8 + 2)
    }

    fn vocab_size(&self) -> usize {
        self.tagset.len() + 2
    }

    /// Maps a tag string to its symbol; unknown strings map to `<unk>`.
    pub fn symbol(&self, tag: &str) -> Sym {
        match tag {
            BOS => self.bos(),
            EOS => self.eos(),
            UNK => self.unk(),
            t => self.lookup.get(t).copied().unwrap_or_else(|| self.unk()),
        }
    }

    pub fn symbol_for_upos(&self, upos: Upos) -> Sym {
        self.symbol(upos.as_str())
    }

    /// Every predictable symbol name: the tagset, `<unk>` and `</s>`.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut v = self.tagset.clone();
        v.push(UNK.to_string());
        v.push(EOS.to_string());
        v
    }

    /// p(tag | context). The context is the preceding tags (most recent
    /// last); it is left-padded with `<s>` to `order - 1` symbols.
    pub fn prob<S: AsRef<str>>(&self, context: &[S], tag: &str) -> f64 {
        let ctx: Vec<Sym> = context.iter().map(|t| self.symbol(t.as_ref())).collect();
        self.prob_sym(&self.pad_context(&ctx), self.symbol(tag))
    }

    fn pad_context(&self, ctx: &[Sym]) -> Vec<Sym> {
        let want = self.order - 1;
        let mut out = Vec::with_capacity(want);
        if ctx.len() < want {
            out.extend(std::iter::repeat_n(self.bos(), want - ctx.len()));
            out.extend_from_slice(ctx);
        } else {
            out.extend_from_slice(&ctx[ctx.len() - want..]);
        }
        out
    }

    /// `history` must hold exactly `order - 1` symbols.
    fn prob_sym(&self, history: &[Sym], sym: Sym) -> f64 {
        debug_assert_eq!(history.len(), self.order - 1);
        let d = self.discount;
        let mut p = 1.0 / self.vocab_size() as f64;
        for m in 1..=self.order {
            let ctx_key = key_of(&history[history.len() + 1 - m..]);
            let gram_key = push_key(ctx_key, sym);
            let (count, stats) = if m == self.order {
                (self.counts.get(&gram_key), self.high_ctx.get(&ctx_key))
            } else {
                (
                    self.continuation[m - 1].get(&gram_key),
                    self.continuation_ctx[m - 1].get(&ctx_key),
                )
            };
            if let Some(st) = stats {
                let c = count.copied().unwrap_or(0) as f64;
                let total = st.total as f64;
                p = ((c - d).max(0.0) + d * st.distinct as f64 * p) / total;
            }
        }
        p
    }

    /// Sum of natural-log conditional probabilities with `<s>` padding and
    /// no closing `</s>` term.
    pub fn sequence_log_prob<S: AsRef<str>>(&self, tags: &[S]) -> f64 {
        let syms: Vec<Sym> = tags.iter().map(|t| self.symbol(t.as_ref())).collect();
        self.sequence_log_prob_syms(&syms)
    }

    pub fn sequence_log_prob_syms(&self, syms: &[Sym]) -> f64 {
        let mut history = vec![self.bos(); self.order - 1];
        let mut total = 0.0;
        for &s in syms {
            total += self.prob_sym(&history, s).ln();
            history.remove(0);
            history.push(s);
        }
        total
    }

    /// Geometric-mean per-tag probability, in (0, 1].
    pub fn fluency_score<S: AsRef<str>>(&self, tags: &[S]) -> f64 {
        assert!(!tags.is_empty(), "fluency_score requires a non-empty sequence");
        geometric_mean_prob(self.sequence_log_prob(tags), tags.len())
    }

    /// Scores each chunk as an independent sequence and combines them as a
    /// length-weighted geometric mean.
    pub fn chunked_fluency_syms(&self, chunks: &[Vec<Sym>]) -> f64 {
        let len: usize = chunks.iter().map(Vec::len).sum();
        assert!(len > 0, "chunked fluency requires at least one tag");
        let lp: f64 = chunks.iter().map(|c| self.sequence_log_prob_syms(c)).sum();
        geometric_mean_prob(lp, len)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FluencyError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FluencyError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    fn sym_name(&self, s: Sym) -> &str {
        if s == self.bos() {
            BOS
        } else if s == self.eos() {
            EOS
        } else if s == self.unk() {
            UNK
        } else {
            &self.tagset[s.0 as usize]
        }
    }

    /// Text dump: header, full-order counts sorted by key, then `end`.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), FluencyError> {
        writeln!(w, "{FORMAT_MAGIC} {FORMAT_VERSION}")?;
        writeln!(w, "order {}", self.order)?;
        writeln!(w, "discount {}", self.discount)?;
        writeln!(w, "tagset {}", self.tagset.join(" "))?;
        writeln!(w, "unknown_mapped {}", self.unknown_mapped)?;
        writeln!(w, "ngrams {}", self.counts.len())?;
        let mut entries: Vec<(&u64, &u64)> = self.counts.iter().collect();
        entries.sort();
        for (&key, &count) in entries {
            let names: Vec<&str> = decode_key(key).into_iter().map(|s| self.sym_name(s)).collect();
            writeln!(w, "{count}\t{}", names.join(" "))?;
        }
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self, FluencyError> {
        let mut lines = BufReader::new(reader).lines();
        let mut next = |what: &str| -> Result<String, FluencyError> {
            match lines.next() {
                Some(line) => Ok(line?),
                None => Err(FluencyError::Corrupt(format!("unexpected end of file reading {what}"))),
            }
        };
        let header = next("header")?;
        let version = header
            .strip_prefix(FORMAT_MAGIC)
            .ok_or_else(|| FluencyError::Corrupt("missing model header".into()))?
            .trim();
        if version != FORMAT_VERSION.to_string() {
            return Err(FluencyError::Version { found: version.to_string() });
        }
        fn field<'a>(line: &'a str, name: &str) -> Result<&'a str, FluencyError> {
            line.strip_prefix(name)
                .and_then(|rest| rest.strip_prefix(' ').or(if rest.is_empty() { Some("") } else { None }))
                .ok_or_else(|| FluencyError::Corrupt(format!("expected `{name}` line, found {line:?}")))
        }
        fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, FluencyError> {
            s.trim().parse().map_err(|_| FluencyError::Corrupt(format!("bad {what}: {s:?}")))
        }
        let order: usize = num(field(&next("order")?, "order")?, "order")?;
        let discount: f64 = num(field(&next("discount")?, "discount")?, "discount")?;
        let tag_line = next("tagset")?;
        let tagset: Vec<&str> = field(&tag_line, "tagset")?.split_whitespace().collect();
        let unknown_mapped: usize = num(field(&next("unknown_mapped")?, "unknown_mapped")?, "unknown_mapped")?;
        let expected: usize = num(field(&next("ngrams")?, "ngrams")?, "ngram count")?;

        let mut model = Self::empty(&tagset, order, discount).map_err(|e| FluencyError::Corrupt(e.to_string()))?;
        model.unknown_mapped = unknown_mapped;
        for i in 0..expected {
            let line = next("n-gram table")?;
            let (count, gram) = line
                .split_once('\t')
                .ok_or_else(|| FluencyError::Corrupt(format!("malformed n-gram entry {i}")))?;
            let count: u64 = num(count, "n-gram count")?;
            let syms: Vec<Sym> = gram
                .split(' ')
                .map(|name| match name {
                    BOS | EOS | UNK => Ok(model.symbol(name)),
                    t => model
                        .lookup
                        .get(t)
                        .copied()
                        .ok_or_else(|| FluencyError::Corrupt(format!("tag {t:?} not in tagset"))),
                })
                .collect::<Result<_, _>>()?;
            if syms.len() != order || count == 0 {
                return Err(FluencyError::Corrupt(format!("invalid n-gram entry {i}")));
            }
            if model.counts.insert(key_of(&syms), count).is_some() {
                return Err(FluencyError::Corrupt(format!("duplicate n-gram entry {i}")));
            }
        }
        if next("trailer")? != "end" {
            return Err(FluencyError::Corrupt("missing end marker".into()));
        }
        model.derive_tables();
        Ok(model)
    }
}

/// `exp(log_prob_sum / len)`: the geometric mean of per-step probabilities.
pub fn geometric_mean_prob(log_prob_sum: f64, len: usize) -> f64 {
    assert!(len > 0, "geometric mean over zero steps");
    (log_prob_sum / len as f64).exp()
}

/// Reads a POS corpus: one whitespace-separated tag sequence per line.
/// Blank lines are skipped.
pub fn read_pos_corpus<R: BufRead>(reader: R) -> Result<Vec<Vec<String>>, FluencyError> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let tags: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if !tags.is_empty() {
            out.push(tags);
        }
    }
    Ok(out)
}
