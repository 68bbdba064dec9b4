//! Feedback interpretation: turns teacher annotations into labeled sentence
//! variations. Also hosts the EDA baseline augmenter used for comparisons.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{phrase_tokens, IntentLabel, LabeledExample, Origin, Sentence, Token};
use crate::error::{Error, Result};
use crate::knowledge::{normalize_phrase, KnowledgeBase, MaskedLmQuery, SynonymLexicon};

/// Masked-LM fill-ins used per inconsequential word.
pub const INCONSEQUENTIAL_TOP_K: usize = 3;
/// Variations generated per example by the EDA baseline when matching the
/// average feedback-driven yield.
pub const EDA_DEFAULT_N: usize = 16;
const CROSS_PRODUCT_LIMIT: usize = 512;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    #[default]
    Accept,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub example_id: String,
    pub label: IntentLabel,
    #[serde(default)]
    pub important: BTreeSet<usize>,
    #[serde(default)]
    pub inconsequential: BTreeSet<usize>,
    #[serde(default)]
    pub validated: BTreeMap<usize, Vec<String>>,
    #[serde(default)]
    pub action: Action,
    #[serde(default)]
    pub sim_seconds: f64,
}

impl FeedbackRecord {
    pub fn label_only(example_id: impl Into<String>, label: IntentLabel) -> Self {
        FeedbackRecord {
            example_id: example_id.into(),
            label,
            important: BTreeSet::new(),
            inconsequential: BTreeSet::new(),
            validated: BTreeMap::new(),
            action: Action::Accept,
            sim_seconds: 0.0,
        }
    }

    /// Anything beyond the label itself.
    pub fn has_annotation(&self) -> bool {
        !self.important.is_empty() || !self.inconsequential.is_empty() || !self.validated.is_empty()
    }

    pub fn validate(&self, source: &Sentence) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidFeedback(m));
        if !(self.sim_seconds.is_finite() && self.sim_seconds >= 0.0) {
            return bad(format!("sim_seconds {} must be non-negative", self.sim_seconds));
        }
        if self.action == Action::Skip && self.has_annotation() {
            return bad("skip records carry no annotations".into());
        }
        if let Some(p) = self.important.intersection(&self.inconsequential).next() {
            return bad(format!("position {p} is marked both important and inconsequential"));
        }
        let n = source.len();
        if let Some(p) = self
            .important
            .iter()
            .chain(&self.inconsequential)
            .find(|&&p| p >= n)
        {
            return bad(format!("position {p} is outside the {n}-token sentence"));
        }
        for (pos, phrases) in &self.validated {
            if !self.important.contains(pos) {
                return bad(format!("validated replacements at {pos}, which is not marked important"));
            }
            let word = source.tokens[*pos].as_str();
            for p in phrases {
                match normalize_phrase(p) {
                    Some(norm) if norm != word => {}
                    _ => return bad(format!("`{p}` is not a valid replacement for `{word}`")),
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariationSource {
    Validated,
    LexiconLm,
    MaskedLm,
    EdaSynonym,
    EdaInsertion,
    EdaSwap,
    EdaDeletion,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    /// Token position in the source sentence.
    pub position: usize,
    /// Inserted text; empty for deletions, the swapped pair for swaps.
    pub replacement: String,
    pub source: VariationSource,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub edits: Vec<Edit>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variation {
    pub sentence: Sentence,
    pub label: IntentLabel,
    pub provenance: Provenance,
}

impl Variation {
    pub fn to_example(&self, index: usize) -> LabeledExample {
        LabeledExample {
            id: format!("{}+v{}", self.provenance.source_id, index),
            sentence: self.sentence.clone(),
            label: self.label.clone(),
            origin: Origin::Augmented,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariationMode {
    /// One replacement per variation.
    #[default]
    OneEdit,
    /// Every combination of per-site choices (at least one edit), capped.
    CrossProduct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub mode: VariationMode,
    /// Tag recorded for important-word replacements.
    pub important_source: VariationSource,
    pub inconsequential_k: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            mode: VariationMode::OneEdit,
            important_source: VariationSource::Validated,
            inconsequential_k: INCONSEQUENTIAL_TOP_K,
        }
    }
}

struct Site {
    position: usize,
    options: Vec<(String, VariationSource)>,
}

fn splice(tokens: &[Token], edits: &[(usize, &str)]) -> Vec<Token> {
    let mut out = Vec::with_capacity(tokens.len() + 2);
    for (i, t) in tokens.iter().enumerate() {
        match edits.iter().find(|(p, _)| *p == i) {
            Some((_, phrase)) => out.extend(phrase_tokens(phrase)),
            None => out.push(t.clone()),
        }
    }
    out
}

fn collect_sites(source: &Sentence, fb: &FeedbackRecord, kb: &KnowledgeBase, opts: &GenerateOptions) -> Result<Vec<Site>> {
    let mut sites = Vec::new();
    let positions: BTreeSet<usize> = fb.important.union(&fb.inconsequential).copied().collect();
    for pos in positions {
        let word = source.tokens[pos].as_str();
        let options: Vec<(String, VariationSource)> = if fb.important.contains(&pos) {
            fb.validated
                .get(&pos)
                .into_iter()
                .flatten()
                .filter_map(|p| normalize_phrase(p))
                .filter(|p| p != word)
                .map(|p| (p, opts.important_source))
                .collect()
        } else {
            let q = MaskedLmQuery::new(source.tokens.clone(), pos, opts.inconsequential_k.max(1))?;
            kb.masked_lm_top_k(&q)
                .into_iter()
                .take(opts.inconsequential_k)
                .filter(|(w, _)| w != word)
                .map(|(w, _)| (w, VariationSource::MaskedLm))
                .collect()
        };
        if !options.is_empty() {
            sites.push(Site {
                position: pos,
                options,
            });
        }
    }
    Ok(sites)
}

/// Sentence variations from accepted feedback: each validated phrase at each
/// important position, and each masked-LM top-k fill-in at each
/// inconsequential position. Identical token sequences collapse to the first.
pub fn generate_variations(
    source: &LabeledExample,
    fb: &FeedbackRecord,
    kb: &KnowledgeBase,
    opts: &GenerateOptions,
) -> Result<Vec<Variation>> {
    if fb.action != Action::Accept {
        return Err(Error::InvalidFeedback("variations require an accepted example".into()));
    }
    fb.validate(&source.sentence)?;
    let sites = collect_sites(&source.sentence, fb, kb, opts)?;

    let mut seen: BTreeSet<Vec<Token>> = BTreeSet::new();
    seen.insert(source.sentence.tokens.clone());
    let mut out = Vec::new();
    let mut emit = |choices: &[(usize, &str, VariationSource)]| -> Result<()> {
        let edits: Vec<(usize, &str)> = choices.iter().map(|(p, s, _)| (*p, *s)).collect();
        let tokens = splice(&source.sentence.tokens, &edits);
        if seen.insert(tokens.clone()) {
            out.push(Variation {
                sentence: Sentence::from_tokens(tokens)?,
                label: source.label.clone(),
                provenance: Provenance {
                    source_id: source.id.clone(),
                    edits: choices
                        .iter()
                        .map(|(p, s, tag)| Edit {
                            position: *p,
                            replacement: s.to_string(),
                            source: *tag,
                        })
                        .collect(),
                },
            });
        }
        Ok(())
    };

    match opts.mode {
        VariationMode::OneEdit => {
            for site in &sites {
                for (phrase, tag) in &site.options {
                    emit(&[(site.position, phrase, *tag)])?;
                }
            }
        }
        VariationMode::CrossProduct => {
            // odometer over (none | option_i) per site, skipping all-none
            let radix: Vec<usize> = sites.iter().map(|s| s.options.len() + 1).collect();
            let mut digits = vec![0usize; sites.len()];
            let mut produced = 0;
            'outer: loop {
                let mut d = sites.len();
                loop {
                    if d == 0 {
                        break 'outer;
                    }
                    d -= 1;
                    digits[d] += 1;
                    if digits[d] < radix[d] {
                        break;
                    }
                    digits[d] = 0;
                }
                let choices: Vec<(usize, &str, VariationSource)> = sites
                    .iter()
                    .zip(&digits)
                    .filter(|(_, &k)| k > 0)
                    .map(|(s, &k)| (s.position, s.options[k - 1].0.as_str(), s.options[k - 1].1))
                    .collect();
                emit(&choices)?;
                produced += 1;
                if produced >= CROSS_PRODUCT_LIMIT {
                    break;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum EdaMove {
    Synonym,
    Insertion,
    Swap,
    Deletion,
}

/// Easy-data-augmentation baseline: `n` variations, each from one uniformly
/// drawn move (synonym replacement, synonym insertion, adjacent swap,
/// deletion). Moves needing a synonym fall back to a swap when no token has
/// one; a one-token sentence without synonyms yields nothing.
pub fn eda_augment(source: &LabeledExample, n: usize, lexicon: &SynonymLexicon, seed: u64) -> Vec<Variation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = &source.sentence.tokens;
    let with_syn: Vec<usize> = (0..tokens.len())
        .filter(|&i| !lexicon.synonyms(tokens[i].as_str()).is_empty())
        .collect();
    let moves = [EdaMove::Synonym, EdaMove::Insertion, EdaMove::Swap, EdaMove::Deletion];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut mv = moves[rng.gen_range(0..moves.len())];
        if matches!(mv, EdaMove::Synonym | EdaMove::Insertion) && with_syn.is_empty() {
            mv = EdaMove::Swap;
        }
        if matches!(mv, EdaMove::Swap | EdaMove::Deletion) && tokens.len() < 2 {
            if with_syn.is_empty() {
                break;
            }
            mv = EdaMove::Synonym;
        }
        let (new_tokens, edit) = match mv {
            EdaMove::Synonym => {
                let pos = with_syn[rng.gen_range(0..with_syn.len())];
                let syns = lexicon.synonyms(tokens[pos].as_str());
                let phrase = &syns[rng.gen_range(0..syns.len())];
                (
                    splice(tokens, &[(pos, phrase)]),
                    Edit {
                        position: pos,
                        replacement: phrase.clone(),
                        source: VariationSource::EdaSynonym,
                    },
                )
            }
            EdaMove::Insertion => {
                let from = with_syn[rng.gen_range(0..with_syn.len())];
                let syns = lexicon.synonyms(tokens[from].as_str());
                let phrase = &syns[rng.gen_range(0..syns.len())];
                let at = rng.gen_range(0..=tokens.len());
                let mut t = tokens[..at].to_vec();
                t.extend(phrase_tokens(phrase));
                t.extend_from_slice(&tokens[at..]);
                (
                    t,
                    Edit {
                        position: at,
                        replacement: phrase.clone(),
                        source: VariationSource::EdaInsertion,
                    },
                )
            }
            EdaMove::Swap => {
                let i = rng.gen_range(0..tokens.len() - 1);
                let mut t = tokens.clone();
                t.swap(i, i + 1);
                (
                    t,
                    Edit {
                        position: i,
                        replacement: format!("{} {}", tokens[i + 1], tokens[i]),
                        source: VariationSource::EdaSwap,
                    },
                )
            }
            EdaMove::Deletion => {
                let i = rng.gen_range(0..tokens.len());
                let mut t = tokens.clone();
                t.remove(i);
                (
                    t,
                    Edit {
                        position: i,
                        replacement: String::new(),
                        source: VariationSource::EdaDeletion,
                    },
                )
            }
        };
        out.push(Variation {
            sentence: Sentence::from_tokens(new_tokens).expect("edits keep at least one token"),
            label: source.label.clone(),
            provenance: Provenance {
                source_id: source.id.clone(),
                edits: vec![edit],
            },
        });
    }
    out
}
