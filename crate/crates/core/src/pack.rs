//! The shipped synthetic course-assistant pack: training templates, held-out
//! paraphrase templates for the test set, a synonym/word-form lexicon, the
//! simulated teacher's gold replacement table and its stoplist.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    expand_template, inventory_from_records, templates_from_records, IntentInventory, LabeledExample, Origin,
    Template, TemplateRecord,
};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::knowledge::{normalize_phrase, LexiconRecord, SynonymLexicon};

pub const TEMPLATES_FILE: &str = "templates.jsonl";
pub const TEST_TEMPLATES_FILE: &str = "test_templates.jsonl";
pub const LEXICON_FILE: &str = "lexicon.jsonl";
pub const GOLD_FILE: &str = "gold_synonyms.jsonl";
pub const STOPLIST_FILE: &str = "stoplist.txt";

const TEMPLATES: &str = include_str!("../data/templates.jsonl");
const TEST_TEMPLATES: &str = include_str!("../data/test_templates.jsonl");
const LEXICON: &str = include_str!("../data/lexicon.jsonl");
const GOLD: &str = include_str!("../data/gold_synonyms.jsonl");
const STOPLIST: &str = include_str!("../data/stoplist.txt");

pub const TEST_PER_INTENT: usize = 25;
const TEST_SEED: u64 = 0x7e57;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub word: String,
    pub synonyms: Vec<String>,
}

/// Replacements the simulated teacher would approve, per word.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GoldSynonyms(BTreeMap<String, Vec<String>>);

impl GoldSynonyms {
    pub fn from_records(records: &[GoldRecord]) -> Self {
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in records {
            let Some(word) = normalize_phrase(&r.word) else { continue };
            let list = map.entry(word.clone()).or_default();
            for s in r.synonyms.iter().filter_map(|s| normalize_phrase(s)) {
                if s != word && !list.contains(&s) {
                    list.push(s);
                }
            }
        }
        GoldSynonyms(map)
    }

    pub fn get(&self, word: &str) -> &[String] {
        self.0.get(word).map_or(&[], Vec::as_slice)
    }
}

#[derive(Clone, Debug)]
pub struct Pack {
    pub inventory: IntentInventory,
    pub templates: Vec<Template>,
    pub test_templates: Vec<Template>,
    pub lexicon: SynonymLexicon,
    pub gold: GoldSynonyms,
    pub stoplist: BTreeSet<String>,
}

fn parse_stoplist(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

impl Pack {
    pub fn builtin() -> Pack {
        Self::from_texts(TEMPLATES, TEST_TEMPLATES, LEXICON, GOLD, STOPLIST, Path::new("<builtin>"))
            .expect("shipped pack is valid")
    }

    fn from_texts(templates: &str, test: &str, lexicon: &str, gold: &str, stop: &str, origin: &Path) -> Result<Pack> {
        let records: Vec<TemplateRecord> = jsonl::parse(templates, &origin.join(TEMPLATES_FILE))?;
        let inventory = inventory_from_records(&records)?;
        let templates = templates_from_records(&records, &inventory, "t")?;
        let test_records: Vec<TemplateRecord> = jsonl::parse(test, &origin.join(TEST_TEMPLATES_FILE))?;
        let test_templates = templates_from_records(&test_records, &inventory, "h")?;
        let lexicon = SynonymLexicon::from_records(&jsonl::parse::<LexiconRecord>(lexicon, &origin.join(LEXICON_FILE))?);
        let gold = GoldSynonyms::from_records(&jsonl::parse::<GoldRecord>(gold, &origin.join(GOLD_FILE))?);
        Ok(Pack {
            inventory,
            templates,
            test_templates,
            lexicon,
            gold,
            stoplist: parse_stoplist(stop),
        })
    }

    /// Loads a pack directory laid out like the shipped one. Missing optional
    /// files (everything but the templates) fall back to the builtin copies.
    pub fn load(dir: &Path) -> Result<Pack> {
        Self::from_templates_file(&dir.join(TEMPLATES_FILE))
    }

    /// Loads a templates file; the other pack files are looked up next to it
    /// and fall back to the builtin copies.
    pub fn from_templates_file(path: &Path) -> Result<Pack> {
        let dir = path.parent().unwrap_or(Path::new("."));
        let read = |name: &str, fallback: &'static str| -> Result<String> {
            let p = dir.join(name);
            if p.exists() {
                std::fs::read_to_string(&p).map_err(|e| Error::io(p, e))
            } else {
                Ok(fallback.to_string())
            }
        };
        let templates = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_texts(
            &templates,
            &read(TEST_TEMPLATES_FILE, TEST_TEMPLATES)?,
            &read(LEXICON_FILE, LEXICON)?,
            &read(GOLD_FILE, GOLD)?,
            &read(STOPLIST_FILE, STOPLIST)?,
            dir,
        )
    }

    /// Writes the shipped data files into `dir`.
    pub fn write_builtin(dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            (TEMPLATES_FILE, TEMPLATES),
            (TEST_TEMPLATES_FILE, TEST_TEMPLATES),
            (LEXICON_FILE, LEXICON),
            (GOLD_FILE, GOLD),
            (STOPLIST_FILE, STOPLIST),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }

    pub fn template(&self, id: &str) -> Option<&Template> {
        self.templates.iter().find(|t| t.id == id)
    }

    /// Fixed test set: `per_intent` examples per intent, drawn round-robin
    /// across that intent's held-out templates after a fixed shuffle.
    pub fn test_set(&self, per_intent: usize) -> Result<Vec<LabeledExample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(TEST_SEED);
        let mut out = Vec::new();
        for label in self.inventory.labels() {
            let mut groups: Vec<Vec<LabeledExample>> = Vec::new();
            for t in self.test_templates.iter().filter(|t| t.intent == *label) {
                let mut ex = expand_template(t)?;
                ex.shuffle(&mut rng);
                groups.push(ex);
            }
            let mut picked = Vec::new();
            let mut round = 0;
            while picked.len() < per_intent && groups.iter().any(|g| round < g.len()) {
                for g in &groups {
                    if picked.len() < per_intent {
                        if let Some(e) = g.get(round) {
                            picked.push(e.clone());
                        }
                    }
                }
                round += 1;
            }
            out.extend(picked);
        }
        for (i, e) in out.iter_mut().enumerate() {
            e.id = format!("m{i:03}");
            e.origin = Origin::Manual;
        }
        Ok(out)
    }
}
