mod common;

use std::collections::BTreeSet;

use common::TreeGenerator;
use proptest::prelude::*;
use treesimp::decoder::{plain_surface, simplify, DecoderConfig, Termination};
use treesimp::fluency::PosLanguageModel;
use treesimp::similarity::{similarity_score, HashingBackend};

fn lm() -> PosLanguageModel {
    let corpus = TreeGenerator::new(11).corpus(300);
    PosLanguageModel::train(&common::upos_corpus(&corpus), &PosLanguageModel::upos_tagset(), 3, 0.75).unwrap()
}

fn config() -> impl Strategy<Value = DecoderConfig> {
    (
        prop_oneof![Just(0.0), Just(1.0), Just(2.0)],
        0.3f64..=1.0,
        0.1f64..=0.9,
        1usize..=6,
    )
        .prop_map(|(alpha, tau, lambda_ratio, beam_size)| DecoderConfig {
            alpha,
            tau,
            lambda_ratio,
            beam_size,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn output_respects_constraints(seed in any::<u64>(), n in 1usize..12, cfg in config()) {
        let sent = TreeGenerator::new(seed).small_tree(n);
        let backend = HashingBackend::default();
        let r = simplify(&cfg, &sent, &lm(), &backend).unwrap();
        let sel = r.selected();
        let set: BTreeSet<usize> = sel.iter().copied().collect();
        prop_assert_eq!(set.len(), sel.len());
        prop_assert!(sel.iter().all(|&i| (1..=n).contains(&i)));

        let mut seed_tokens: Vec<usize> = sent.root_subject().into_iter().collect();
        seed_tokens.push(sent.root());
        prop_assert_eq!(&sel[..r.hypothesis.seed_len()], &seed_tokens[..]);

        let plain = plain_surface(&sent, &r.hypothesis);
        let sim = similarity_score(&backend, &sent.joined_forms(), &plain).unwrap();
        prop_assert!((sim - r.score.sim).abs() < 1e-12);
        if r.reason == Termination::ThresholdMet {
            prop_assert!(sel.len() >= cfg.min_tokens(n));
            prop_assert!(sel.len() < n);
            prop_assert!(r.score.sim >= cfg.tau);
        }
    }

    #[test]
    fn decoding_is_deterministic(seed in any::<u64>(), n in 1usize..12, cfg in config()) {
        let sent = TreeGenerator::new(seed).small_tree(n);
        let lm = lm();
        let a = simplify(&cfg, &sent, &lm, &HashingBackend::default()).unwrap();
        let b = simplify(&cfg, &sent, &lm, &HashingBackend::default()).unwrap();
        prop_assert_eq!(a.surface, b.surface);
        prop_assert_eq!(a.score.total.to_bits(), b.score.total.to_bits());
    }

    #[test]
    fn higher_threshold_never_shortens(seed in any::<u64>(), n in 2usize..12, cfg in config(), t in 0.3f64..=1.0) {
        let sent = TreeGenerator::new(seed).small_tree(n);
        let lm = lm();
        let backend = HashingBackend::default();
        let (lo, hi) = if t < cfg.tau { (t, cfg.tau) } else { (cfg.tau, t) };
        let a = simplify(&DecoderConfig { tau: lo, ..cfg.clone() }, &sent, &lm, &backend).unwrap();
        let b = simplify(&DecoderConfig { tau: hi, ..cfg }, &sent, &lm, &backend).unwrap();
        prop_assert!(a.selected().len() <= b.selected().len());
    }
}
