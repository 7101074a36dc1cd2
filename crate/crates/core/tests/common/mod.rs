//! Shared fixtures for integration tests: a seeded generator of
//! grammar-shaped dependency trees and independent metric oracles.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treesimp::treebank::{DepSentence, DepToken, Upos};

const DET: &[&str] = &["the", "a", "this", "every", "some"];
const ADJ: &[&str] = &["old", "quiet", "bright", "large", "small", "famous", "early", "local"];
const NOUN: &[&str] = &[
    "city", "river", "teacher", "garden", "company", "report", "village", "market", "engineer", "bridge",
    "council", "painting", "student", "harbor", "festival",
];
const PROPN: &[&str] = &["Paris", "Maria", "Google", "Nile", "Europe"];
const PRON: &[&str] = &["she", "they", "he", "we"];
const VERB: &[&str] = &["built", "visited", "praised", "opened", "described", "crossed", "funded", "painted"];
const ADV: &[&str] = &["quickly", "often", "later", "recently", "slowly"];
const ADP: &[&str] = &["in", "near", "with", "after", "for"];
const AUX: &[&str] = &["has", "was", "will"];
const NUM: &[&str] = &["two", "three", "ten"];
const CCONJ: &[&str] = &["and", "but"];

struct Node {
    form: String,
    upos: Upos,
    deprel: &'static str,
    left: Vec<Node>,
    right: Vec<Node>,
}

impl Node {
    fn leaf(form: &str, upos: Upos, deprel: &'static str) -> Node {
        Node {
            form: form.to_string(),
            upos,
            deprel,
            left: Vec::new(),
            right: Vec::new(),
        }
    }

    /// Appends the subtree in surface order; children point at this
    /// node's final 1-based position.
    fn linearize(&self, head: usize, rows: &mut Vec<(String, Upos, usize, &'static str)>) {
        let self_pos = rows.len() + self.left.iter().map(Node::size).sum::<usize>() + 1;
        for l in &self.left {
            l.linearize(self_pos, rows);
        }
        rows.push((self.form.clone(), self.upos, head, self.deprel));
        for r in &self.right {
            r.linearize(self_pos, rows);
        }
    }

    fn size(&self) -> usize {
        1 + self.left.iter().chain(&self.right).map(Node::size).sum::<usize>()
    }
}

/// Seeded source of clause-shaped sentences: subjects and objects as noun
/// phrases with determiners and adjectives, prepositional attachments,
/// adverbs, occasional coordination and final punctuation.
pub struct TreeGenerator {
    rng: ChaCha8Rng,
}

impl TreeGenerator {
    pub fn new(seed: u64) -> Self {
        TreeGenerator {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn pick(&mut self, list: &[&str]) -> String {
        list.choose(&mut self.rng).unwrap().to_string()
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.random_bool(p)
    }

    fn noun_phrase(&mut self, deprel: &'static str, depth: usize) -> Node {
        if deprel == "nsubj" && self.chance(0.15) {
            return Node::leaf(&self.pick(PRON), Upos::Pron, deprel);
        }
        if self.chance(0.1) {
            return Node::leaf(&self.pick(PROPN), Upos::Propn, deprel);
        }
        let mut n = Node::leaf(&self.pick(NOUN), Upos::Noun, deprel);
        if self.chance(0.8) {
            n.left.push(Node::leaf(&self.pick(DET), Upos::Det, "det"));
        }
        if self.chance(0.1) {
            n.left.push(Node::leaf(&self.pick(NUM), Upos::Num, "nummod"));
        }
        for _ in 0..2 {
            if self.chance(0.35) {
                n.left.push(Node::leaf(&self.pick(ADJ), Upos::Adj, "amod"));
            }
        }
        if depth < 2 && self.chance(0.25) {
            n.right.push(self.prep_phrase("nmod", depth + 1));
        }
        n
    }

    fn prep_phrase(&mut self, deprel: &'static str, depth: usize) -> Node {
        let mut np = self.noun_phrase(deprel, depth);
        np.left.insert(0, Node::leaf(&self.pick(ADP), Upos::Adp, "case"));
        np
    }

    fn clause(&mut self, deprel: &'static str, depth: usize) -> Node {
        let mut v = Node::leaf(&self.pick(VERB), Upos::Verb, deprel);
        if self.chance(0.85) {
            v.left.push(self.noun_phrase("nsubj", depth));
        }
        if self.chance(0.2) {
            v.left.push(Node::leaf(&self.pick(AUX), Upos::Aux, "aux"));
        }
        if self.chance(0.25) {
            v.left.push(Node::leaf(&self.pick(ADV), Upos::Adv, "advmod"));
        }
        if self.chance(0.75) {
            v.right.push(self.noun_phrase("obj", depth));
        }
        for _ in 0..2 {
            if self.chance(0.35) {
                v.right.push(self.prep_phrase("obl", depth));
            }
        }
        if self.chance(0.15) {
            v.right.push(Node::leaf(&self.pick(ADV), Upos::Adv, "advmod"));
        }
        if depth == 0 && self.chance(0.12) {
            let mut conj = self.clause("conj", depth + 1);
            conj.left.insert(0, Node::leaf(&self.pick(CCONJ), Upos::Cconj, "cc"));
            v.right.push(conj);
        }
        v
    }

    pub fn sentence(&mut self) -> DepSentence {
        let mut root = self.clause("root", 0);
        root.right.push(Node::leaf(".", Upos::Punct, "punct"));
        let mut rows = Vec::new();
        root.linearize(0, &mut rows);
        let tokens = rows
            .iter()
            .enumerate()
            .map(|(i, (f, u, h, d))| DepToken::new(i + 1, f, *u, *h, d))
            .collect();
        DepSentence::new(tokens, None).expect("generated tree is valid")
    }

    pub fn corpus(&mut self, n: usize) -> Vec<DepSentence> {
        (0..n).map(|_| self.sentence()).collect()
    }

    /// Random tree over `n` tokens: a random order, each token attached to
    /// an earlier one in that order; the root may get a subject.
    pub fn small_tree(&mut self, n: usize) -> DepSentence {
        let tags = [Upos::Noun, Upos::Verb, Upos::Adj, Upos::Det, Upos::Adp, Upos::Adv, Upos::Pron];
        let mut order: Vec<usize> = (1..=n).collect();
        for i in (1..n).rev() {
            let j = self.rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut head = vec![0usize; n + 1];
        for k in 1..n {
            head[order[k]] = order[self.rng.random_range(0..k)];
        }
        let root = order[0];
        let root_children: Vec<usize> = (1..=n).filter(|&i| head[i] == root).collect();
        let subject = if !root_children.is_empty() && self.chance(0.6) {
            Some(root_children[self.rng.random_range(0..root_children.len())])
        } else {
            None
        };
        let tokens = (1..=n)
            .map(|i| {
                let upos = *tags.choose(&mut self.rng).unwrap();
                let form = match upos {
                    Upos::Noun => self.pick(NOUN),
                    Upos::Verb => self.pick(VERB),
                    Upos::Adj => self.pick(ADJ),
                    Upos::Det => self.pick(DET),
                    Upos::Adp => self.pick(ADP),
                    Upos::Adv => self.pick(ADV),
                    _ => self.pick(PRON),
                };
                let rel = if i == root {
                    "root"
                } else if Some(i) == subject {
                    "nsubj"
                } else {
                    "dep"
                };
                DepToken::new(i, &form, upos, head[i], rel)
            })
            .collect();
        DepSentence::new(tokens, None).expect("random tree is valid")
    }
}

pub fn upos_corpus(sentences: &[DepSentence]) -> Vec<Vec<String>> {
    sentences
        .iter()
        .map(|s| s.upos_sequence().iter().map(|u| u.as_str().to_string()).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// Metric oracles. Deliberately written without touching the library's
// metric code: string n-grams, ordered counters, explicit loops.

pub fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let word = raw.to_lowercase();
        let mut cut = word.len();
        while cut > 0 && matches!(word.as_bytes()[cut - 1], b'.' | b'!' | b'?') {
            cut -= 1;
        }
        let body = &word[..cut];
        if body.is_empty() || body.contains('.') {
            out.push(word.clone());
        } else {
            out.push(body.to_string());
            for ch in word[cut..].chars() {
                out.push(ch.to_string());
            }
        }
    }
    out
}

type Counter = BTreeMap<String, i64>;

fn counter(items: &[String]) -> Counter {
    let mut c = Counter::new();
    for i in items {
        *c.entry(i.clone()).or_insert(0) += 1;
    }
    c
}

fn scaled(c: &Counter, k: i64) -> Counter {
    c.iter().map(|(g, v)| (g.clone(), v * k)).collect()
}

fn intersect(a: &Counter, b: &Counter) -> Counter {
    a.iter()
        .filter_map(|(g, &v)| {
            let m = v.min(*b.get(g).unwrap_or(&0));
            (m > 0).then(|| (g.clone(), m))
        })
        .collect()
}

fn subtract(a: &Counter, b: &Counter) -> Counter {
    a.iter()
        .filter_map(|(g, &v)| {
            let m = v - b.get(g).unwrap_or(&0);
            (m > 0).then(|| (g.clone(), m))
        })
        .collect()
}

fn grams(tokens: &[String], n: usize) -> Vec<String> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].join(" ")).collect()
}

fn f1(p: Option<f64>, r: Option<f64>) -> Option<f64> {
    if p.is_none() && r.is_none() {
        return None;
    }
    let (p, r) = (p.unwrap_or(0.0), r.unwrap_or(0.0));
    Some(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
}

/// Returns `(sari, add, keep, del)`.
pub fn oracle_sari(orig: &str, sys: &str, refs: &[&str]) -> (f64, f64, f64, f64) {
    let s_tok = oracle_tokens(orig);
    let c_tok = oracle_tokens(sys);
    let r_tok: Vec<Vec<String>> = refs.iter().map(|r| oracle_tokens(r)).collect();
    let numref = refs.len() as i64;
    let mut keep_f = Vec::new();
    let mut del_f = Vec::new();
    let mut add_f = Vec::new();
    for n in 1..=4 {
        let sgrams = grams(&s_tok, n);
        let cgrams = grams(&c_tok, n);
        let rgramsall: Vec<String> = r_tok.iter().flat_map(|r| grams(r, n)).collect();
        let rc = counter(&rgramsall);
        let s_rep = scaled(&counter(&sgrams), numref);
        let c_rep = scaled(&counter(&cgrams), numref);

        let keep = intersect(&s_rep, &c_rep);
        let keep_good = intersect(&keep, &rc);
        let keep_all = intersect(&s_rep, &rc);
        let mut t1 = 0.0;
        let mut t2 = 0.0;
        for (g, v) in &keep {
            let good = *keep_good.get(g).unwrap_or(&0) as f64;
            t1 += good / *v as f64;
            t2 += good;
        }
        let all: i64 = keep_all.values().sum();
        keep_f.push(f1(
            (!keep.is_empty()).then(|| t1 / keep.len() as f64),
            (all > 0).then(|| t2 / all as f64),
        ));

        let del = subtract(&s_rep, &c_rep);
        let del_good = subtract(&del, &rc);
        let del_all = subtract(&s_rep, &rc);
        let mut t1 = 0.0;
        let mut t2 = 0.0;
        for (g, v) in &del {
            let good = *del_good.get(g).unwrap_or(&0) as f64;
            t1 += good / *v as f64;
            t2 += good;
        }
        let all: i64 = del_all.values().sum();
        del_f.push(f1(
            (!del.is_empty()).then(|| t1 / del.len() as f64),
            (all > 0).then(|| t2 / all as f64),
        ));

        let sset: BTreeSet<&String> = sgrams.iter().collect();
        let cset: BTreeSet<&String> = cgrams.iter().collect();
        let rset: BTreeSet<&String> = rgramsall.iter().collect();
        let add: BTreeSet<&&String> = cset.iter().filter(|g| !sset.contains(**g)).collect();
        let add_all: BTreeSet<&&String> = rset.iter().filter(|g| !sset.contains(**g)).collect();
        let good = add.iter().filter(|g| rset.contains(**g)).count() as f64;
        add_f.push(f1(
            (!add.is_empty()).then(|| good / add.len() as f64),
            (!add_all.is_empty()).then(|| good / add_all.len() as f64),
        ));
    }
    let avg = |v: &[Option<f64>]| {
        let used: Vec<f64> = v.iter().flatten().copied().collect();
        if used.is_empty() {
            100.0
        } else {
            100.0 * used.iter().sum::<f64>() / used.len() as f64
        }
    };
    let (add, keep, del) = (avg(&add_f), avg(&keep_f), avg(&del_f));
    ((add + keep + del) / 3.0, add, keep, del)
}

/// Classic two-row dynamic program over Unicode scalar values.
pub fn oracle_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

fn bag_minus(a: &[String], b: &[String]) -> usize {
    let (ca, cb) = (counter(a), counter(b));
    subtract(&ca, &cb).values().sum::<i64>() as usize
}

/// `[cr, cp, %a, %d, lev_sim, sari, add, keep, del]`.
pub fn oracle_metrics(orig: &str, sys: &str, refs: &[&str]) -> [f64; 9] {
    let (o, s) = (oracle_tokens(orig), oracle_tokens(sys));
    let cr = sys.chars().count() as f64 / orig.chars().count() as f64;
    let cp = if o == s { 1.0 } else { 0.0 };
    let add = if s.is_empty() { 0.0 } else { bag_minus(&s, &o) as f64 / s.len() as f64 };
    let del = if s.is_empty() { 1.0 } else { bag_minus(&o, &s) as f64 / o.len() as f64 };
    let longest = orig.chars().count().max(sys.chars().count());
    let lev = if longest == 0 {
        1.0
    } else {
        1.0 - oracle_levenshtein(orig, sys) as f64 / longest as f64
    };
    let (sari, a, k, d) = oracle_sari(orig, sys, refs);
    [cr, cp, add, del, lev, sari, a, k, d]
}
