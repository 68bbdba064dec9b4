//! The knowledge base: replacement recommendations for a word in context.
//!
//! Three sources are merged in priority order: replacements the teacher
//! validated earlier, a static synonym/word-form lexicon, and a masked
//! language model. The masked LM is either a remote service speaking the
//! `/mask` JSON protocol or a corpus-statistics fallback built from the
//! bootstrap sentences.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::corpus::{join, phrase_tokens, Sentence, Token};
use crate::error::{Error, Result};
use crate::jsonl;

pub const MAX_PHRASE_TOKENS: usize = 3;
pub const MASKED_LM_ENV: &str = "MT_MASKED_LM_URL";
pub const MASKED_LM_TIMEOUT: Duration = Duration::from_secs(2);
pub const MASK_TOKEN: &str = "[MASK]";
/// Masked-LM suggestions appended to teacher-facing recommendations.
pub const DEFAULT_RECOMMEND_LM_K: usize = 10;

/// Lowercases and re-joins a phrase; `None` if it is empty or too long.
pub fn normalize_phrase(phrase: &str) -> Option<String> {
    let toks = phrase_tokens(phrase);
    if toks.is_empty() || toks.len() > MAX_PHRASE_TOKENS {
        return None;
    }
    Some(join(&toks))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconRecord {
    pub word: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub forms: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct LexiconEntry {
    synonyms: Vec<String>,
    forms: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, LexiconEntry>,
}

fn push_unique(list: &mut Vec<String>, phrase: String) {
    if !list.contains(&phrase) {
        list.push(phrase);
    }
}

impl SynonymLexicon {
    pub fn from_records(records: &[LexiconRecord]) -> Self {
        let mut entries: BTreeMap<String, LexiconEntry> = BTreeMap::new();
        for r in records {
            let Some(word) = normalize_phrase(&r.word) else {
                continue;
            };
            let entry = entries.entry(word.clone()).or_default();
            for s in r.synonyms.iter().filter_map(|s| normalize_phrase(s)) {
                if s != word {
                    push_unique(&mut entry.synonyms, s);
                }
            }
            for f in r.forms.iter().filter_map(|s| normalize_phrase(s)) {
                if f != word {
                    push_unique(&mut entry.forms, f);
                }
            }
        }
        SynonymLexicon { entries }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_records(&jsonl::read(path)?))
    }

    pub fn to_records(&self) -> Vec<LexiconRecord> {
        self.entries
            .iter()
            .map(|(word, e)| LexiconRecord {
                word: word.clone(),
                synonyms: e.synonyms.clone(),
                forms: e.forms.clone(),
            })
            .collect()
    }

    pub fn synonyms(&self, word: &str) -> &[String] {
        self.entries.get(word).map_or(&[], |e| &e.synonyms)
    }

    /// Inflectional variants from the lexicon's forms section.
    pub fn word_forms(&self, word: &str) -> &[String] {
        self.entries.get(word).map_or(&[], |e| &e.forms)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Validated-store log line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatedRecord {
    pub word: String,
    pub phrase: String,
    pub ts: i64,
}

/// Teacher-validated replacements, most recent first, with an optional
/// append-only log on disk.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidatedStore {
    entries: BTreeMap<String, Vec<String>>,
    path: Option<PathBuf>,
}

impl ValidatedStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a log file and replays it.
    pub fn open(path: &Path) -> Result<Self> {
        let mut store = ValidatedStore {
            entries: BTreeMap::new(),
            path: Some(path.to_path_buf()),
        };
        if path.exists() {
            for rec in jsonl::read::<ValidatedRecord>(path)? {
                store.prepend(&rec.word, rec.phrase);
            }
        }
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, word: &str) -> &[String] {
        self.entries.get(word).map_or(&[], Vec::as_slice)
    }

    pub fn entries(&self) -> &BTreeMap<String, Vec<String>> {
        &self.entries
    }

    fn prepend(&mut self, word: &str, phrase: String) {
        let list = self.entries.entry(word.to_string()).or_default();
        list.retain(|p| *p != phrase);
        list.insert(0, phrase);
    }

    /// Prepends `accepted` (keeping its order) and drops older duplicates.
    /// The in-memory store is updated even if the disk write fails.
    pub fn record(&mut self, word: &str, accepted: &[String]) -> Result<()> {
        let phrases = validate_replacements(word, accepted)?;
        for p in phrases.iter().rev() {
            self.prepend(word, p.clone());
        }
        if let Some(path) = &self.path {
            let ts = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs() as i64);
            // replaying single prepends in reverse reproduces the batch order
            let lines: Vec<ValidatedRecord> = phrases
                .iter()
                .rev()
                .map(|p| ValidatedRecord {
                    word: word.to_string(),
                    phrase: p.clone(),
                    ts,
                })
                .collect();
            let text = jsonl::to_string(&lines)?;
            append_text(path, &text)?;
        }
        Ok(())
    }
}

fn append_text(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

fn validate_replacements(word: &str, accepted: &[String]) -> Result<Vec<String>> {
    if accepted.is_empty() {
        return Err(Error::InvalidReplacement {
            word: word.to_string(),
            reason: "no phrases given".into(),
        });
    }
    let mut out = Vec::with_capacity(accepted.len());
    for p in accepted {
        let norm = normalize_phrase(p).ok_or_else(|| Error::InvalidReplacement {
            word: word.to_string(),
            reason: format!("`{p}` must have 1..={MAX_PHRASE_TOKENS} words"),
        })?;
        if norm == word {
            return Err(Error::InvalidReplacement {
                word: word.to_string(),
                reason: "a word cannot replace itself".into(),
            });
        }
        push_unique(&mut out, norm);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedLmQuery {
    pub tokens: Vec<Token>,
    pub mask_index: usize,
    pub k: usize,
}

impl MaskedLmQuery {
    pub fn new(tokens: Vec<Token>, mask_index: usize, k: usize) -> Result<Self> {
        if mask_index >= tokens.len() {
            return Err(Error::KOutOfRange {
                k: mask_index,
                max: tokens.len().saturating_sub(1),
            });
        }
        if k == 0 {
            return Err(Error::KOutOfRange { k, max: usize::MAX });
        }
        Ok(MaskedLmQuery {
            tokens,
            mask_index,
            k,
        })
    }

    pub fn masked_word(&self) -> &str {
        self.tokens[self.mask_index].as_str()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskCandidate {
    pub word: String,
    pub confidence: f64,
}

pub trait MaskedLm: Send + Sync + fmt::Debug {
    /// Top-k fill-ins for the masked slot, excluding the masked word.
    fn top_k(&self, q: &MaskedLmQuery) -> Vec<MaskCandidate>;
}

const BOS: &str = "<s>";
const EOS: &str = "</s>";

/// Fill-in statistics from a corpus: words seen between the same left and
/// right neighbours, backing off to words sharing either neighbour.
#[derive(Clone, Debug, Default)]
pub struct CorpusMaskedLm {
    both: HashMap<(String, String), BTreeMap<String, u32>>,
    left: HashMap<String, BTreeMap<String, u32>>,
    right: HashMap<String, BTreeMap<String, u32>>,
}

fn neighbours(tokens: &[Token], i: usize) -> (&str, &str) {
    let l = if i == 0 { BOS } else { tokens[i - 1].as_str() };
    let r = tokens.get(i + 1).map_or(EOS, Token::as_str);
    (l, r)
}

impl CorpusMaskedLm {
    pub fn new<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let mut lm = CorpusMaskedLm::default();
        for s in sentences {
            for (i, w) in s.tokens.iter().enumerate() {
                let (l, r) = neighbours(&s.tokens, i);
                let w = w.as_str().to_string();
                *lm.both
                    .entry((l.to_string(), r.to_string()))
                    .or_default()
                    .entry(w.clone())
                    .or_default() += 1;
                *lm.left.entry(l.to_string()).or_default().entry(w.clone()).or_default() += 1;
                *lm.right.entry(r.to_string()).or_default().entry(w).or_default() += 1;
            }
        }
        lm
    }
}

/// Frequency descending, then lexicographic; confidence is the count's share
/// of the tier.
fn rank_counts(counts: &BTreeMap<String, u32>, exclude: &[&str]) -> Vec<MaskCandidate> {
    let total: u32 = counts.values().sum();
    let mut v: Vec<(&String, &u32)> = counts
        .iter()
        .filter(|(w, _)| !exclude.contains(&w.as_str()))
        .collect();
    v.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    v.into_iter()
        .map(|(w, c)| MaskCandidate {
            word: w.clone(),
            confidence: *c as f64 / total.max(1) as f64,
        })
        .collect()
}

impl MaskedLm for CorpusMaskedLm {
    fn top_k(&self, q: &MaskedLmQuery) -> Vec<MaskCandidate> {
        let masked = q.masked_word();
        let (l, r) = neighbours(&q.tokens, q.mask_index);
        let mut out: Vec<MaskCandidate> = self
            .both
            .get(&(l.to_string(), r.to_string()))
            .map(|c| rank_counts(c, &[masked]))
            .unwrap_or_default();
        out.truncate(q.k);
        if out.len() < q.k {
            let mut merged: BTreeMap<String, u32> = BTreeMap::new();
            for m in [self.left.get(l), self.right.get(r)].into_iter().flatten() {
                for (w, c) in m {
                    *merged.entry(w.clone()).or_default() += c;
                }
            }
            let taken: Vec<String> = out.iter().map(|c| c.word.clone()).collect();
            let mut exclude: Vec<&str> = taken.iter().map(String::as_str).collect();
            exclude.extend([masked, BOS, EOS]);
            let need = q.k - out.len();
            out.extend(rank_counts(&merged, &exclude).into_iter().take(need));
        }
        out
    }
}

#[derive(Serialize)]
struct MaskRequest<'a> {
    tokens: Vec<&'a str>,
    mask_index: usize,
    k: usize,
}

#[derive(Deserialize)]
struct MaskResponse {
    candidates: Vec<MaskCandidate>,
}

/// Client for an external `/mask` service; any failure falls back to the
/// corpus model with a logged warning.
#[derive(Debug)]
pub struct RemoteMaskedLm {
    url: String,
    agent: ureq::Agent,
    fallback: CorpusMaskedLm,
}

impl RemoteMaskedLm {
    pub fn new(base_url: &str, fallback: CorpusMaskedLm) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(MASKED_LM_TIMEOUT))
            .build()
            .new_agent();
        RemoteMaskedLm {
            url: format!("{}/mask", base_url.trim_end_matches('/')),
            agent,
            fallback,
        }
    }

    fn query(&self, q: &MaskedLmQuery) -> std::result::Result<Vec<MaskCandidate>, String> {
        let tokens = q
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| if i == q.mask_index { MASK_TOKEN } else { t.as_str() })
            .collect();
        let req = MaskRequest {
            tokens,
            mask_index: q.mask_index,
            // one spare in case the service echoes the masked word
            k: q.k + 1,
        };
        let resp: MaskResponse = self
            .agent
            .post(&self.url)
            .send_json(&req)
            .map_err(|e| e.to_string())?
            .body_mut()
            .read_json()
            .map_err(|e| e.to_string())?;
        let masked = q.masked_word();
        let mut out = Vec::with_capacity(q.k);
        for c in resp.candidates {
            let Some(word) = normalize_phrase(&c.word) else {
                continue;
            };
            if word == masked || out.iter().any(|o: &MaskCandidate| o.word == word) {
                continue;
            }
            out.push(MaskCandidate {
                word,
                confidence: c.confidence,
            });
            if out.len() == q.k {
                break;
            }
        }
        Ok(out)
    }
}

impl MaskedLm for RemoteMaskedLm {
    fn top_k(&self, q: &MaskedLmQuery) -> Vec<MaskCandidate> {
        match self.query(q) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("masked LM service at {} failed ({e}); using corpus fallback", self.url);
                self.fallback.top_k(q)
            }
        }
    }
}

/// Remote model when `MT_MASKED_LM_URL` is set, corpus fallback otherwise.
pub fn masked_lm_from_env(fallback: CorpusMaskedLm) -> Arc<dyn MaskedLm> {
    match std::env::var(MASKED_LM_ENV) {
        Ok(url) if !url.trim().is_empty() => Arc::new(RemoteMaskedLm::new(&url, fallback)),
        _ => Arc::new(fallback),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommendationSource {
    Validated,
    Lexicon,
    MaskedLm,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementRecommendation {
    pub phrase: String,
    pub source: RecommendationSource,
}

#[derive(Debug)]
pub struct KnowledgeBase {
    lexicon: Arc<SynonymLexicon>,
    validated: RwLock<ValidatedStore>,
    masked_lm: Arc<dyn MaskedLm>,
    recommend_lm_k: usize,
}

impl KnowledgeBase {
    pub fn new(lexicon: Arc<SynonymLexicon>, validated: ValidatedStore, masked_lm: Arc<dyn MaskedLm>) -> Self {
        KnowledgeBase {
            lexicon,
            validated: RwLock::new(validated),
            masked_lm,
            recommend_lm_k: DEFAULT_RECOMMEND_LM_K,
        }
    }

    pub fn with_recommend_lm_k(mut self, k: usize) -> Self {
        self.recommend_lm_k = k;
        self
    }

    /// Same lexicon and masked LM, with a detached in-memory copy of the
    /// validated store.
    pub fn fork_in_memory(&self) -> KnowledgeBase {
        let entries = self.validated.read().expect("kb lock").entries.clone();
        KnowledgeBase {
            lexicon: Arc::clone(&self.lexicon),
            validated: RwLock::new(ValidatedStore { entries, path: None }),
            masked_lm: Arc::clone(&self.masked_lm),
            recommend_lm_k: self.recommend_lm_k,
        }
    }

    pub fn lexicon(&self) -> &SynonymLexicon {
        &self.lexicon
    }

    pub fn validated(&self, word: &str) -> Vec<String> {
        self.validated.read().expect("kb lock").get(word).to_vec()
    }

    pub fn validated_snapshot(&self) -> BTreeMap<String, Vec<String>> {
        self.validated.read().expect("kb lock").entries.clone()
    }

    pub fn word_forms(&self, word: &str) -> Vec<String> {
        self.lexicon.word_forms(word).to_vec()
    }

    pub fn masked_lm_top_k(&self, q: &MaskedLmQuery) -> Vec<(String, f64)> {
        self.masked_lm
            .top_k(q)
            .into_iter()
            .map(|c| (c.word, c.confidence))
            .collect()
    }

    pub fn record_validated(&self, word: &str, accepted: &[String]) -> Result<()> {
        self.validated.write().expect("kb lock").record(word, accepted)
    }

    /// Validated phrases, then lexicon synonyms and word forms, then masked-LM
    /// fill-ins; each phrase listed once under its highest-priority source.
    pub fn recommend(&self, word: &str, context: &Sentence, position: usize) -> Result<Vec<ReplacementRecommendation>> {
        if context.tokens.get(position).map(Token::as_str) != Some(word) {
            return Err(Error::InvalidReplacement {
                word: word.to_string(),
                reason: format!("position {position} does not hold `{word}` in `{}`", context.text()),
            });
        }
        let mut out: Vec<ReplacementRecommendation> = Vec::new();
        let mut add = |phrase: &str, source: RecommendationSource| {
            if phrase != word && !out.iter().any(|r| r.phrase == phrase) {
                out.push(ReplacementRecommendation {
                    phrase: phrase.to_string(),
                    source,
                });
            }
        };
        for p in self.validated(word) {
            add(&p, RecommendationSource::Validated);
        }
        for p in self.lexicon.synonyms(word).iter().chain(self.lexicon.word_forms(word)) {
            add(p, RecommendationSource::Lexicon);
        }
        if self.recommend_lm_k > 0 {
            let q = MaskedLmQuery::new(context.tokens.clone(), position, self.recommend_lm_k)?;
            for (w, _) in self.masked_lm_top_k(&q) {
                add(&w, RecommendationSource::MaskedLm);
            }
        }
        Ok(out)
    }

    /// Lexicon synonyms that also appear in the masked-LM top-k, in LM order.
    pub fn lexicon_lm_intersection(&self, context: &Sentence, position: usize, k: usize) -> Result<Vec<String>> {
        let word = context.tokens[position].as_str();
        let syns = self.lexicon.synonyms(word);
        let q = MaskedLmQuery::new(context.tokens.clone(), position, k)?;
        Ok(self
            .masked_lm_top_k(&q)
            .into_iter()
            .map(|(w, _)| w)
            .filter(|w| syns.contains(w))
            .collect())
    }
}
