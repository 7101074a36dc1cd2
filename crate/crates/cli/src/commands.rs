use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use treesimp::analysis::aggregate_profile;
use treesimp::backtranslate::BtStatus;
use treesimp::decoder::{plain_surface, simplify_all, DecoderConfig, SimplificationResult};
use treesimp::fluency::{read_pos_corpus, PosLanguageModel};
use treesimp::metrics::{self, evaluate_corpus, read_corpus_files, EvalInstance};
use treesimp::similarity::EmbeddingBackend;
use treesimp::treebank::{parse_conllu, DepSentence};

use crate::config::{BackendConfig, BackendFlags, RunConfig, RunFlags};

/// How a command finished when it did not hit a global error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some items failed; the rest were processed.
    Partial,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_sentences(path: &Path) -> Result<Vec<DepSentence>> {
    let doc = parse_conllu(open(path)?).with_context(|| format!("parsing {}", path.display()))?;
    if doc.unknown_tags > 0 {
        log::warn!("{}: {} token(s) with unknown UPOS tags", path.display(), doc.unknown_tags);
    }
    Ok(doc.sentences)
}

pub fn train_lm(corpus: &Path, order: usize, discount: f64, out: &Path) -> Result<Outcome> {
    let sequences: Vec<Vec<String>> = if corpus.extension().is_some_and(|e| e == "conllu") {
        read_sentences(corpus)?
            .iter()
            .map(|s| s.upos_sequence().iter().map(|u| u.as_str().to_string()).collect())
            .collect()
    } else {
        read_pos_corpus(open(corpus)?).with_context(|| format!("reading {}", corpus.display()))?
    };
    let lm = PosLanguageModel::train(&sequences, &PosLanguageModel::upos_tagset(), order, discount)?;
    lm.save(out).with_context(|| format!("writing {}", out.display()))?;

    println!("sequences   {}", sequences.len());
    println!("tagset      {}", lm.tagset().join(" "));
    println!("unknown     {}", lm.unknown_mapped());
    for (i, n) in lm.ngram_type_counts().iter().enumerate() {
        println!("{}-gram types {n}", i + 1);
    }
    println!("n-gram tokens {}", lm.ngram_token_count());

    let deviation = normalization_probe(&lm, &sequences);
    println!("normalization max |sum - 1| = {deviation:.3e}");
    if deviation > 1e-6 {
        bail!("trained model is not normalized (deviation {deviation:.3e})");
    }
    println!("wrote {}", out.display());
    Ok(Outcome::Success)
}

/// Largest deviation from 1 of the total probability over the vocabulary,
/// over the empty context and a handful of contexts drawn from the corpus.
fn normalization_probe(lm: &PosLanguageModel, corpus: &[Vec<String>]) -> f64 {
    let vocab = lm.vocabulary();
    let mut contexts: Vec<&[String]> = vec![&[]];
    for seq in corpus.iter().take(25) {
        contexts.push(&seq[..seq.len().min(lm.order() - 1)]);
    }
    contexts
        .iter()
        .map(|ctx| (vocab.iter().map(|t| lm.prob(ctx, t)).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

struct Phase1 {
    results: Vec<Result<SimplificationResult, String>>,
    outputs: Vec<String>,
}

fn run_phase1<B: EmbeddingBackend + ?Sized>(
    cfg: &DecoderConfig,
    sentences: &[DepSentence],
    lm: &PosLanguageModel,
    backend: &B,
    jobs: usize,
) -> Phase1 {
    let results: Vec<Result<SimplificationResult, String>> = simplify_all(cfg, sentences, lm, backend, jobs)
        .into_iter()
        .map(|r| r.map_err(|e| e.to_string()))
        .collect();
    let outputs = results
        .iter()
        .zip(sentences)
        .map(|(r, s)| match r {
            Ok(res) => res.surface.clone(),
            Err(_) => s.joined_forms(),
        })
        .collect();
    Phase1 { results, outputs }
}

pub fn simplify(input: &Path, output: &Path, sidecar: Option<PathBuf>, flags: &RunFlags) -> Result<Outcome> {
    let cfg = RunConfig::from_flags(flags)?;
    let sentences = read_sentences(input)?;
    let lm = cfg.load_lm()?;
    let backend = cfg.backend.build()?;
    let translator = cfg.back_translator()?;

    let phase1 = run_phase1(&cfg.decoder, &sentences, &lm, &backend, cfg.jobs);
    let mut failures = phase1.results.iter().filter(|r| r.is_err()).count();

    let bt: Option<Vec<BtStatus>> = translator.as_ref().map(|t| t.batch_round_trip(&phase1.outputs));
    let finals: Vec<String> = match (&bt, &translator) {
        (Some(statuses), Some(t)) => statuses
            .iter()
            .zip(&phase1.outputs)
            .map(|(st, p1)| match st {
                BtStatus::Done(s) => s.clone(),
                _ => t.config().separator_policy.apply(p1),
            })
            .collect(),
        _ => phase1.outputs.clone(),
    };
    if let Some(statuses) = &bt {
        failures += statuses.iter().filter(|s| matches!(s, BtStatus::Failed(_))).count();
    }

    let mut out = create(output)?;
    for line in &finals {
        writeln!(out, "{line}")?;
    }
    out.flush()?;

    let sidecar = sidecar.unwrap_or_else(|| {
        let mut p = output.as_os_str().to_owned();
        p.push(".jsonl");
        PathBuf::from(p)
    });
    let mut side = create(&sidecar)?;
    for (i, sent) in sentences.iter().enumerate() {
        let bt_field = match bt.as_ref().map(|b| &b[i]) {
            None => json!(null),
            Some(BtStatus::Done(_)) => json!({"status": "done"}),
            Some(BtStatus::Skipped) => json!({"status": "skipped"}),
            Some(BtStatus::Failed(e)) => json!({"status": "failed", "error": e.to_string()}),
        };
        let record = match &phase1.results[i] {
            Ok(r) => json!({
                "index": i,
                "output": finals[i],
                "phase1": r.surface,
                "plain": plain_surface(sent, &r.hypothesis),
                "reason": r.reason.as_str(),
                "score": r.score,
                "tokens": r.selected(),
                "chunks": r.hypothesis.chunks(),
                "counters": r.counters,
                "bt": bt_field,
                "error": null,
            }),
            Err(e) => json!({
                "index": i,
                "output": finals[i],
                "phase1": phase1.outputs[i],
                "reason": null,
                "bt": bt_field,
                "error": e,
            }),
        };
        writeln!(side, "{record}")?;
    }
    side.flush()?;

    log::info!("{} sentences, {failures} failure(s)", sentences.len());
    Ok(if failures > 0 { Outcome::Partial } else { Outcome::Success })
}

pub struct EvaluateArgs<'a> {
    pub orig: &'a Path,
    pub sys: &'a Path,
    pub refs: &'a [PathBuf],
    pub no_sim: bool,
    pub json: Option<&'a Path>,
    pub instances: Option<&'a Path>,
    pub backend: &'a BackendFlags,
}

pub fn evaluate(args: EvaluateArgs) -> Result<Outcome> {
    let instances = read_corpus_files(args.orig, args.sys, args.refs)?;
    let report = if args.no_sim {
        evaluate_corpus::<dyn EmbeddingBackend>(&instances, None)?
    } else {
        let backend = BackendConfig::from_flags(args.backend)?.build()?;
        evaluate_corpus(&instances, Some(&backend))?
    };
    print!("{}", report.to_table());
    if let Some(p) = args.json {
        write_file(p, &report.to_json())?;
    }
    if let Some(p) = args.instances {
        write_file(p, &report.instances_tsv())?;
    }
    Ok(Outcome::Success)
}

pub struct SweepArgs<'a> {
    pub input: &'a Path,
    pub taus: &'a [f64],
    pub lambdas: &'a [f64],
    pub refs: &'a [PathBuf],
    pub outputs: Option<&'a Path>,
    pub table: Option<&'a Path>,
    pub flags: &'a RunFlags,
}

/// File name used for the outputs of one grid cell.
pub fn cell_file_name(tau: f64, lambda: f64) -> String {
    format!("tau{tau}_lambda{lambda}.txt")
}

pub fn sweep(args: SweepArgs) -> Result<Outcome> {
    let cfg = RunConfig::from_flags(args.flags)?;
    let sentences = read_sentences(args.input)?;
    if sentences.is_empty() {
        bail!("{} contains no sentences", args.input.display());
    }
    let references: Vec<Vec<String>> = args
        .refs
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let lines: Vec<String> = text.lines().map(str::to_string).collect();
            if lines.len() != sentences.len() {
                bail!("{} has {} lines for {} sentences", p.display(), lines.len(), sentences.len());
            }
            Ok(lines)
        })
        .collect::<Result<_>>()?;
    if let Some(dir) = args.outputs {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let lm = cfg.load_lm()?;
    let backend = cfg.backend.build()?;

    let mut table = String::from("tau\tlambda\tCR\t%D\tSARI\tSIM\n");
    let mut failures = 0;
    for &lambda in args.lambdas {
        for &tau in args.taus {
            let dcfg = DecoderConfig {
                tau,
                lambda_ratio: lambda,
                ..cfg.decoder
            };
            dcfg.validate()?;
            let phase1 = run_phase1(&dcfg, &sentences, &lm, &backend, cfg.jobs);
            failures += phase1.results.iter().filter(|r| r.is_err()).count();

            let originals: Vec<String> = sentences.iter().map(DepSentence::joined_forms).collect();
            let plains: Vec<String> = phase1
                .results
                .iter()
                .zip(&sentences)
                .map(|(r, s)| match r {
                    Ok(res) => plain_surface(s, &res.hypothesis),
                    Err(_) => s.joined_forms(),
                })
                .collect();
            let n = sentences.len() as f64;
            let cr = originals
                .iter()
                .zip(&plains)
                .map(|(o, p)| metrics::compression_ratio(o, p))
                .sum::<f64>()
                / n;
            let del = originals
                .iter()
                .zip(&plains)
                .map(|(o, p)| metrics::deletions_proportion(o, p))
                .sum::<f64>()
                / n;
            let sim = phase1
                .results
                .iter()
                .map(|r| r.as_ref().map_or(1.0, |res| res.score.sim))
                .sum::<f64>()
                / n;
            let sari = if references.is_empty() {
                "n/a".to_string()
            } else {
                let inst: Vec<EvalInstance> = (0..sentences.len())
                    .map(|i| {
                        EvalInstance::new(
                            originals[i].clone(),
                            plains[i].clone(),
                            references.iter().map(|r| r[i].clone()).collect(),
                        )
                    })
                    .collect();
                let report = evaluate_corpus::<dyn EmbeddingBackend>(&inst, None)?;
                format!("{:.2}", report.sari)
            };
            table.push_str(&format!("{tau}\t{lambda}\t{cr:.4}\t{del:.4}\t{sari}\t{sim:.4}\n"));

            if let Some(dir) = args.outputs {
                let mut body = phase1.outputs.join("\n");
                body.push('\n');
                write_file(&dir.join(cell_file_name(tau, lambda)), &body)?;
            }
        }
    }
    print!("{table}");
    if let Some(p) = args.table {
        write_file(p, &table)?;
    }
    Ok(if failures > 0 { Outcome::Partial } else { Outcome::Success })
}

pub fn analyze(input: &Path, output: Option<&Path>, tsv: Option<&Path>, flags: &BackendFlags) -> Result<Outcome> {
    let sentences = read_sentences(input)?;
    let backend = BackendConfig::from_flags(flags)?.build()?;
    let profile = aggregate_profile(&sentences, &backend)?;
    let table = profile.to_table();
    match output {
        Some(p) => write_file(p, &table)?,
        None => print!("{table}"),
    }
    if let Some(p) = tsv {
        write_file(p, &profile.to_tsv())?;
    }
    Ok(Outcome::Success)
}
