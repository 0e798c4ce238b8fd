//! The two worked examples from the water-privatization and public-plan
//! debates: saliency peaking on the highlighted tokens yields the expected
//! constraints, and constrained decoding covers every clause.

use relconstrain::constraints::{build_cnf, CompiledCnf, MorphologyTable};
use relconstrain::decoder::{beam_search, nld_decode, DecoderConfig};
use relconstrain::lm::NGramLm;
use relconstrain::pipeline::lm_sequence;
use relconstrain::saliency::{select_constraint_tokens, SaliencyVector};
use relconstrain::text::{tokenize, StopList};

const QUERY_1: &str = "privatization: is water a resource that should be owned by private companies versus a global commons?";
const DOC_1: &str = "private companies are profit-maximizing entities that often view environmental health and safety standards as obstructive to their profit interests. this is a problem particularly in the context of water which is so fundamentally important to the environment health and life.";

const DOC_2: &str = "\"the case against: the public plan will unfairly crowd out private coverage\". heritage foundation. july 28 2009: \"it 's simply impossible to believe the claims by sen. charles schumer (d-n.y.) and others that congress really will do nothing to disrupt the level playing field by favoring the public plan. with congress as both umpire and a team manager one thing is clear: it will favor its own team. the result is the public plan will unfairly crowd out private coverage.";

/// Raw saliency with the given surfaces at their first occurrence peaking in
/// order, punctuation and stopwords scoring high too, everything else low.
fn oracle_saliency(tokens: &[String], peaks: &[&str]) -> SaliencyVector {
    let stops = StopList::default();
    let mut raw: Vec<f64> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if stops.is_stopword(t) || stops.is_punctuation(t) {
                2.0
            } else {
                0.01 * (i % 7) as f64
            }
        })
        .collect();
    for (rank, peak) in peaks.iter().enumerate() {
        let pos = tokens.iter().position(|t| t == peak).unwrap();
        raw[pos] = 1.0 - 0.1 * rank as f64;
    }
    SaliencyVector::from_raw(tokens.to_vec(), raw).unwrap()
}

#[test]
fn row_one_oracle_saliency_selects_highlighted_tokens() {
    let tokens = tokenize(DOC_1);
    let saliency = oracle_saliency(&tokens, &["private", "health", "standards"]);
    let selected = select_constraint_tokens(&saliency, &StopList::default(), 3);
    assert_eq!(selected, ["private", "health", "standards"]);

    let cnf = build_cnf(&selected, &MorphologyTable::builtin()).unwrap();
    let nested = cnf.to_nested();
    assert_eq!(nested.len(), 3);
    assert!(nested[0].contains(&"privatization".to_string()));
    assert!(nested[1].contains(&"healthy".to_string()));
    assert!(nested[2].contains(&"standard".to_string()));
    assert!(nested[2].contains(&"standards".to_string()));
}

#[test]
fn row_two_oracle_saliency_selects_highlighted_tokens() {
    let tokens = tokenize(DOC_2);
    let saliency = oracle_saliency(&tokens, &["congress", "public", "private"]);
    let selected = select_constraint_tokens(&saliency, &StopList::default(), 3);
    assert_eq!(selected, ["congress", "public", "private"]);
}

#[test]
fn row_one_constrained_decoding_covers_every_clause() {
    let summaries = [
        "water is a global commons .",
        "water is a global commons .",
        "water is a global commons .",
        "water should be a public resource .",
        "environmental and health standards are often violated by private ownership of water .",
        "companies profit from water .",
    ];
    let corpus: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| lm_sequence(QUERY_1, Some(s)))
        .collect();
    let lm = NGramLm::train_surfaces(&corpus, 3, 0.01).unwrap();

    let cnf = build_cnf(
        &["private", "health", "standards"],
        &MorphologyTable::builtin(),
    )
    .unwrap();
    let compiled = CompiledCnf::new(&cnf, lm.vocab());
    let prompt = lm.vocab().encode(&lm_sequence(QUERY_1, None));
    let cfg = DecoderConfig::default();

    let out = nld_decode(&lm, &prompt, &compiled, &cfg).unwrap();
    let text = lm.vocab().decode(&out.tokens).unwrap();
    assert!(out.all_satisfied, "{text:?}");
    assert!(cnf.satisfied_by(&text), "{text:?}");
    for clause in cnf.to_nested() {
        assert!(
            clause.iter().any(|form| text.contains(form)),
            "{clause:?} in {text:?}"
        );
    }

    let plain = beam_search(&lm, &prompt, &cfg).unwrap();
    let plain_text = lm.vocab().decode(&plain.tokens).unwrap();
    assert_eq!(plain_text.join(" "), "water is a global commons .");
    assert!(!cnf.satisfied_by(&plain_text));
}
