#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use mt_core::augment::{FeedbackRecord, Variation};
use mt_core::corpus::{tokenize, IntentInventory, IntentLabel, LabeledExample, Origin, Sentence, Token};
use mt_core::knowledge::{CorpusMaskedLm, KnowledgeBase, LexiconRecord, SynonymLexicon, ValidatedStore};
use mt_core::learner::{Hyperparams, LinearModel};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn kl_oracle(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
}

pub fn entropy_oracle(p: &[f64], threshold: f64) -> f64 {
    let kept: Vec<f64> = p.iter().copied().filter(|x| *x >= threshold).collect();
    let kept = if kept.is_empty() { p.to_vec() } else { kept };
    let z: f64 = kept.iter().sum();
    kept.iter().map(|x| x / z).filter(|x| *x > 0.0).map(|x| -x * x.ln()).sum()
}

pub fn label(name: &str) -> IntentLabel {
    IntentInventory::new([name]).unwrap().labels()[0].clone()
}

pub fn example(id: &str, text: &str, label: IntentLabel) -> LabeledExample {
    LabeledExample {
        id: id.into(),
        sentence: tokenize(text).unwrap(),
        label,
        origin: Origin::Manual,
    }
}

pub fn toy_corpus_lm() -> CorpusMaskedLm {
    let s = [
        tokenize("how do i submit the homework").unwrap(),
        tokenize("how do i upload the homework").unwrap(),
    ];
    CorpusMaskedLm::new(s.iter())
}

/// Knowledge base for the turn-in walkthrough: a lexicon entry for "turn"
/// and a corpus where every inconsequential slot has at least three
/// fill-ins.
pub fn walkthrough_kb() -> KnowledgeBase {
    let corpus: Vec<Sentence> = [
        "how do i turn in the homework",
        "how can we turn in a homework",
        "how should you turn in this homework",
        "how did they turn in that homework",
        "how will he hand in our homework",
    ]
    .iter()
    .map(|t| tokenize(t).unwrap())
    .collect();
    let lexicon = SynonymLexicon::from_records(&[LexiconRecord {
        word: "turn".into(),
        synonyms: vec![
            "turn over".into(),
            "give".into(),
            "submit".into(),
            "put".into(),
            "participate".into(),
            "qualify".into(),
        ],
        forms: vec!["turns".into(), "turned".into()],
    }]);
    KnowledgeBase::new(
        Arc::new(lexicon),
        ValidatedStore::in_memory(),
        Arc::new(CorpusMaskedLm::new(corpus.iter())),
    )
}

/// "how do i turn in the homework": "turn" important with four validated
/// phrases, "do", "i" and "the" inconsequential.
pub fn walkthrough_feedback() -> (LabeledExample, FeedbackRecord) {
    let ex = example("ex-turn", "How do I turn in the homework?", label("submission"));
    let mut fb = FeedbackRecord::label_only(ex.id.clone(), ex.label.clone());
    fb.important.insert(3);
    fb.inconsequential.extend([1, 2, 5]);
    fb.validated.insert(
        3,
        vec!["turn over".into(), "give".into(), "submit".into(), "put".into()],
    );
    (ex, fb)
}

/// Checks that `v` is `source` with exactly one contiguous site replaced as
/// its provenance claims.
pub fn one_edit_aligned(source: &Sentence, v: &Variation) -> Result<(), String> {
    if v.provenance.edits.len() != 1 {
        return Err(format!("{} edits", v.provenance.edits.len()));
    }
    let edit = &v.provenance.edits[0];
    let s = &source.tokens;
    if edit.position >= s.len() {
        return Err("edit outside sentence".into());
    }
    let phrase: Vec<Token> = edit
        .replacement
        .split_whitespace()
        .map(|w| Token::new(w).unwrap())
        .collect();
    if phrase.len() == 1 && phrase[0] == s[edit.position] {
        return Err("replacement equals the original word".into());
    }
    let mut expected: Vec<Token> = s[..edit.position].to_vec();
    expected.extend(phrase);
    expected.extend_from_slice(&s[edit.position + 1..]);
    if expected != v.sentence.tokens {
        return Err(format!("`{}` is not `{}` with one splice", v.sentence.text(), source.text()));
    }
    // independent of provenance: the differing region of the source spans at
    // most one token
    let t = &v.sentence.tokens;
    let prefix = s.iter().zip(t).take_while(|(a, b)| a == b).count();
    let max_suffix = s.len().min(t.len()) - prefix;
    let suffix = s
        .iter()
        .rev()
        .zip(t.iter().rev())
        .take(max_suffix)
        .take_while(|(a, b)| a == b)
        .count();
    if s.len() - prefix - suffix > 1 {
        return Err("source differs in more than one token".into());
    }
    Ok(())
}

/// A feedback record with random disjoint marks and random replacement
/// phrases for important positions.
pub fn random_feedback(rng: &mut ChaCha8Rng, ex: &LabeledExample, lexicon: &SynonymLexicon) -> FeedbackRecord {
    let mut fb = FeedbackRecord::label_only(ex.id.clone(), ex.label.clone());
    let n = ex.sentence.len();
    for i in 0..n {
        match rng.gen_range(0..4) {
            0 => {
                fb.important.insert(i);
            }
            1 => {
                fb.inconsequential.insert(i);
            }
            _ => {}
        }
    }
    let pool = ["alpha", "beta gamma", "hand in", "turn over", "send", "a b c"];
    let important: Vec<usize> = fb.important.iter().copied().collect();
    for i in important {
        let word = ex.sentence.tokens[i].as_str();
        let mut phrases: Vec<String> = lexicon.synonyms(word).iter().take(rng.gen_range(0..4)).cloned().collect();
        for _ in 0..rng.gen_range(0..3) {
            let p = pool[rng.gen_range(0..pool.len())].to_string();
            if p != word {
                phrases.push(p);
            }
        }
        if !phrases.is_empty() {
            fb.validated.insert(i, phrases);
        }
    }
    fb
}

/// Random small model over `vocab` words with weights in [-2, 2].
pub fn random_model(rng: &mut ChaCha8Rng, k: usize, vocab: usize) -> LinearModel {
    let names: Vec<String> = (0..k).map(|i| format!("intent{i}")).collect();
    let inventory = IntentInventory::new(names).unwrap();
    let tokens: Vec<String> = (0..vocab).map(|i| format!("w{i}")).collect();
    let weights: Vec<f64> = (0..(vocab + 1) * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let bias: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    LinearModel::from_parts(inventory, tokens, weights, bias, Hyperparams::online(), 0).unwrap()
}

pub fn random_tokens(rng: &mut ChaCha8Rng, words: &[String], len: usize) -> Vec<Token> {
    (0..len)
        .map(|_| Token::new(&words[rng.gen_range(0..words.len())]).unwrap())
        .collect()
}

pub fn sets(v: &[usize]) -> BTreeSet<usize> {
    v.iter().copied().collect()
}

pub fn validated(entries: &[(usize, &[&str])]) -> BTreeMap<usize, Vec<String>> {
    entries
        .iter()
        .map(|(p, v)| (*p, v.iter().map(|s| s.to_string()).collect()))
        .collect()
}
