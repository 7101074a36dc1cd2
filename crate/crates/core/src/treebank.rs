//! CoNLL-U ingestion and dependency-tree navigation.
//!
//! Only the ID, FORM, UPOS, HEAD and DEPREL columns carry meaning here; the
//! remaining columns are read and dropped. Multiword-token ranges (`3-4`) and
//! empty nodes (`5.1`) are skipped and counted.

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use thiserror::Error;

/// Universal part-of-speech tags, plus `Unk` for anything outside the set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Upos {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
    Unk,
}

impl Upos {
    /// The 17 universal tags, in canonical order (excludes `Unk`).
    pub const ALL: [Upos; 17] = [
        Upos::Adj,
        Upos::Adp,
        Upos::Adv,
        Upos::Aux,
        Upos::Cconj,
        Upos::Det,
        Upos::Intj,
        Upos::Noun,
        Upos::Num,
        Upos::Part,
        Upos::Pron,
        Upos::Propn,
        Upos::Punct,
        Upos::Sconj,
        Upos::Sym,
        Upos::Verb,
        Upos::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Upos::Adj => "ADJ",
            Upos::Adp => "ADP",
            Upos::Adv => "ADV",
            Upos::Aux => "AUX",
            Upos::Cconj => "CCONJ",
            Upos::Det => "DET",
            Upos::Intj => "INTJ",
            Upos::Noun => "NOUN",
            Upos::Num => "NUM",
            Upos::Part => "PART",
            Upos::Pron => "PRON",
            Upos::Propn => "PROPN",
            Upos::Punct => "PUNCT",
            Upos::Sconj => "SCONJ",
            Upos::Sym => "SYM",
            Upos::Verb => "VERB",
            Upos::X => "X",
            Upos::Unk => "UNK",
        }
    }

    /// Maps a tag string onto the tagset; unknown strings become `Unk`.
    pub fn from_tag(tag: &str) -> Upos {
        tag.parse().unwrap_or(Upos::Unk)
    }
}

impl FromStr for Upos {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "UNK" {
            return Ok(Upos::Unk);
        }
        Upos::ALL.iter().copied().find(|t| t.as_str() == s).ok_or(())
    }
}

impl serde::Serialize for Upos {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreebankError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sentence {sentence} (starting at line {line}): {message}")]
    Structure {
        sentence: usize,
        line: usize,
        message: String,
    },
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepToken {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    pub upos: Upos,
    /// Parent index, 0 for the ROOT attachment.
    pub head: usize,
    pub deprel: String,
}

impl DepToken {
    pub fn new(index: usize, form: &str, upos: Upos, head: usize, deprel: &str) -> Self {
        DepToken {
            index,
            form: form.to_string(),
            upos,
            head,
            deprel: deprel.to_string(),
        }
    }
}

/// A validated dependency tree. Immutable once built.
#[derive(Clone, Debug)]
pub struct DepSentence {
    tokens: Vec<DepToken>,
    text: String,
    root: usize,
    children: Vec<Vec<usize>>,
    depths: Vec<usize>,
}

impl PartialEq for DepSentence {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.text == other.text
    }
}

impl DepSentence {
    /// Builds a sentence, checking index contiguity, single root and acyclicity.
    /// When `text` is `None` the forms are joined with single spaces.
    pub fn new(tokens: Vec<DepToken>, text: Option<String>) -> Result<Self, TreebankError> {
        let n = tokens.len();
        if n == 0 {
            return Err(TreebankError::InvalidTree("sentence has no tokens".into()));
        }
        for (pos, tok) in tokens.iter().enumerate() {
            if tok.index != pos + 1 {
                return Err(TreebankError::InvalidTree(format!(
                    "token ids are not contiguous: expected {}, found {}",
                    pos + 1,
                    tok.index
                )));
            }
            if tok.head == tok.index {
                return Err(TreebankError::InvalidTree(format!(
                    "token {} is its own head",
                    tok.index
                )));
            }
            if tok.head > n {
                return Err(TreebankError::InvalidTree(format!(
                    "token {} has head {} beyond sentence length {}",
                    tok.index, tok.head, n
                )));
            }
        }
        let roots: Vec<usize> = tokens
            .iter()
            .filter(|t| t.head == 0)
            .map(|t| t.index)
            .collect();
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(TreebankError::InvalidTree("no token attached to ROOT".into())),
            _ => {
                return Err(TreebankError::InvalidTree(format!(
                    "multiple tokens attached to ROOT: {roots:?}"
                )))
            }
        };

        let mut children = vec![Vec::new(); n + 1];
        for tok in &tokens {
            if tok.head != 0 {
                children[tok.head].push(tok.index);
            }
        }

        // Breadth-first from the root; anything left unvisited sits on a cycle.
        let mut depths = vec![0usize; n + 1];
        depths[root] = 1;
        let mut queue = std::collections::VecDeque::from([root]);
        let mut seen = 1;
        while let Some(node) = queue.pop_front() {
            for &child in &children[node] {
                depths[child] = depths[node] + 1;
                seen += 1;
                queue.push_back(child);
            }
        }
        if seen != n {
            let stuck: Vec<usize> = (1..=n).filter(|&i| depths[i] == 0).collect();
            return Err(TreebankError::InvalidTree(format!(
                "head graph has a cycle through tokens {stuck:?}"
            )));
        }

        let text = text.unwrap_or_else(|| {
            tokens
                .iter()
                .map(|t| t.form.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        });
        Ok(DepSentence {
            tokens,
            text,
            root,
            children,
            depths,
        })
    }

    /// Builds a sentence from `(form, upos, head, deprel)` rows.
    pub fn from_rows(rows: &[(&str, Upos, usize, &str)]) -> Result<Self, TreebankError> {
        let tokens = rows
            .iter()
            .enumerate()
            .map(|(i, (form, upos, head, rel))| DepToken::new(i + 1, form, *upos, *head, rel))
            .collect();
        DepSentence::new(tokens, None)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[DepToken] {
        &self.tokens
    }

    /// The original sentence text (from `# text =` when present).
    pub fn text(&self) -> &str {
        &self.text
    }

    /// Token forms joined by single spaces, in input order.
    pub fn joined_forms(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.form.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// 1-based token lookup. Panics when out of range.
    pub fn token(&self, idx: usize) -> &DepToken {
        self.check_index(idx);
        &self.tokens[idx - 1]
    }

    /// Index of the ROOT-attached token.
    pub fn root(&self) -> usize {
        self.root
    }

    /// Children of `idx` in ascending index order. Panics when out of range.
    pub fn children(&self, idx: usize) -> &[usize] {
        self.check_index(idx);
        &self.children[idx]
    }

    /// Nodes on the path from the root to `idx`, inclusive. The root has depth 1.
    pub fn depth(&self, idx: usize) -> usize {
        self.check_index(idx);
        self.depths[idx]
    }

    /// Depth of the deepest token in the sentence.
    pub fn tree_depth(&self) -> usize {
        self.depths[1..].iter().copied().max().unwrap_or(0)
    }

    /// Largest child count over all tokens.
    pub fn max_children(&self) -> usize {
        self.children[1..].iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Lowest-index child of the root whose relation starts with `nsubj`.
    pub fn root_subject(&self) -> Option<usize> {
        self.children[self.root]
            .iter()
            .copied()
            .find(|&c| self.tokens[c - 1].deprel.starts_with("nsubj"))
    }

    /// Maximum depth over `indices`. Panics on an empty set.
    pub fn max_depth_of<I>(&self, indices: I) -> usize
    where
        I: IntoIterator<Item = usize>,
    {
        indices
            .into_iter()
            .map(|i| self.depth(i))
            .max()
            .expect("max_depth_of requires a non-empty index set")
    }

    pub fn upos_sequence(&self) -> Vec<Upos> {
        self.tokens.iter().map(|t| t.upos).collect()
    }

    /// Serializes back to a CoNLL-U block (with `# text =` and a trailing blank line).
    pub fn to_conllu(&self) -> String {
        let mut out = format!("# text = {}\n", self.text);
        for t in &self.tokens {
            out.push_str(&format!(
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_\n",
                t.index, t.form, t.upos, t.head, t.deprel
            ));
        }
        out.push('\n');
        out
    }

    fn check_index(&self, idx: usize) {
        assert!(
            (1..=self.tokens.len()).contains(&idx),
            "token index {idx} out of range 1..={}",
            self.tokens.len()
        );
    }
}

/// Result of reading a CoNLL-U stream.
#[derive(Clone, Debug, Default)]
pub struct Conllu {
    pub sentences: Vec<DepSentence>,
    /// Multiword-token range lines that were skipped.
    pub skipped_ranges: usize,
    /// Empty-node lines (`n.m` ids) that were skipped.
    pub skipped_empty_nodes: usize,
    /// UPOS values outside the tagset, mapped to `UNK`.
    pub unknown_tags: usize,
}

struct Block {
    start_line: usize,
    text: Option<String>,
    tokens: Vec<DepToken>,
}

pub fn parse_conllu_str(input: &str) -> Result<Conllu, TreebankError> {
    parse_conllu(input.as_bytes())
}

pub fn parse_conllu<R: BufRead>(reader: R) -> Result<Conllu, TreebankError> {
    let mut out = Conllu::default();
    let mut block: Option<Block> = None;

    let finish = |block: Option<Block>, out: &mut Conllu| -> Result<(), TreebankError> {
        let Some(b) = block else { return Ok(()) };
        if b.tokens.is_empty() {
            // Comment-only block.
            return Ok(());
        }
        let sentence = out.sentences.len() + 1;
        let sent = DepSentence::new(b.tokens, b.text).map_err(|e| match e {
            TreebankError::InvalidTree(message) => TreebankError::Structure {
                sentence,
                line: b.start_line,
                message,
            },
            other => other,
        })?;
        out.sentences.push(sent);
        Ok(())
    };

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| TreebankError::Io(e.to_string()))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            finish(block.take(), &mut out)?;
            continue;
        }
        let b = block.get_or_insert_with(|| Block {
            start_line: lineno,
            text: None,
            tokens: Vec::new(),
        });
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(text) = comment.trim_start().strip_prefix("text =") {
                b.text = Some(text.trim().to_string());
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(TreebankError::Parse {
                line: lineno,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') {
            out.skipped_ranges += 1;
            continue;
        }
        if id.contains('.') {
            out.skipped_empty_nodes += 1;
            continue;
        }
        let index: usize = id.parse().map_err(|_| TreebankError::Parse {
            line: lineno,
            message: format!("invalid token id {id:?}"),
        })?;
        if index == 0 {
            return Err(TreebankError::Parse {
                line: lineno,
                message: "token ids start at 1".into(),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| TreebankError::Parse {
            line: lineno,
            message: format!("invalid head {:?}", cols[6]),
        })?;
        let upos = match cols[3].parse::<Upos>() {
            Ok(t) => t,
            Err(()) => {
                out.unknown_tags += 1;
                Upos::Unk
            }
        };
        b.tokens.push(DepToken {
            index,
            form: cols[1].to_string(),
            upos,
            head,
            deprel: cols[7].to_string(),
        });
    }
    finish(block.take(), &mut out)?;
    if out.skipped_ranges + out.skipped_empty_nodes + out.unknown_tags > 0 {
        log::warn!(
            "conllu: skipped {} multiword ranges, {} empty nodes; {} tags mapped to UNK",
            out.skipped_ranges,
            out.skipped_empty_nodes,
            out.unknown_tags
        );
    }
    Ok(out)
}
