//! On-disk layout shared by the command line and the service: generated data
//! directories, knowledge-base directories and session specs that point at
//! them.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_dataset, save_dataset, split_dataset, tokenize, ExampleRecord, IntentInventory, LabeledExample,
    Sentence, SplitManifest,
};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::knowledge::{masked_lm_from_env, CorpusMaskedLm, KnowledgeBase, SynonymLexicon, ValidatedStore};
use crate::learner::LinearModel;
use crate::pack::{Pack, LEXICON_FILE, TEST_PER_INTENT};
use crate::session::{SessionConfig, SessionInit};

pub const INTENTS_FILE: &str = "intents.json";
pub const BOOTSTRAP_FILE: &str = "bootstrap.jsonl";
pub const POOL_FILE: &str = "pool.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const KB_DIR: &str = "kb";
pub const VALIDATED_FILE: &str = "validated.jsonl";
pub const CORPUS_FILE: &str = "corpus.jsonl";

/// Fails with `MissingArtifact` naming `path` when it does not exist.
pub fn require(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(require(path)?).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        source,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataDir {
    pub inventory: IntentInventory,
    pub bootstrap: Vec<LabeledExample>,
    pub pool: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub manifest: SplitManifest,
}

impl DataDir {
    /// Splits the pack's templates, draws its fixed test set and writes the
    /// data files plus a knowledge-base directory under `out`.
    pub fn generate(pack: &Pack, bootstrap_fraction: f64, seed: u64, out: &Path) -> Result<DataDir> {
        let split = split_dataset(&pack.templates, &pack.inventory, bootstrap_fraction, seed)?;
        let data = DataDir {
            inventory: pack.inventory.clone(),
            bootstrap: split.bootstrap,
            pool: split.novel_pool,
            test: pack.test_set(TEST_PER_INTENT)?,
            manifest: split.manifest,
        };
        data.write(out)?;
        write_kb_dir(&out.join(KB_DIR), &pack.lexicon, &data.bootstrap)?;
        Ok(data)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let names: Vec<&str> = self.inventory.labels().iter().map(|l| l.name.as_str()).collect();
        write_json(&dir.join(INTENTS_FILE), &names)?;
        save_dataset(&dir.join(BOOTSTRAP_FILE), &self.bootstrap)?;
        save_dataset(&dir.join(POOL_FILE), &self.pool)?;
        save_dataset(&dir.join(TEST_FILE), &self.test)?;
        write_json(&dir.join(SPLIT_FILE), &self.manifest)
    }

    pub fn load(dir: &Path) -> Result<DataDir> {
        let inventory = read_inventory(dir)?;
        let read = |name: &str| load_dataset(require(&dir.join(name))?, &inventory);
        Ok(DataDir {
            bootstrap: read(BOOTSTRAP_FILE)?,
            pool: read(POOL_FILE)?,
            test: read(TEST_FILE)?,
            manifest: read_json(&dir.join(SPLIT_FILE))?,
            inventory,
        })
    }
}

pub fn read_inventory(dir: &Path) -> Result<IntentInventory> {
    let names: Vec<String> = read_json(&dir.join(INTENTS_FILE))?;
    IntentInventory::new(names)
}

/// Writes a knowledge-base directory: the lexicon and the corpus the
/// fallback masked LM learns from. The validated store is created on first
/// use.
pub fn write_kb_dir(dir: &Path, lexicon: &SynonymLexicon, corpus: &[LabeledExample]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    jsonl::write(&dir.join(LEXICON_FILE), &lexicon.to_records())?;
    save_dataset(&dir.join(CORPUS_FILE), corpus)
}

/// Sentences of a dataset file, labels ignored.
pub fn read_corpus(path: &Path) -> Result<Vec<Sentence>> {
    jsonl::read::<ExampleRecord>(path)?
        .iter()
        .map(|r| tokenize(&r.text))
        .collect()
}

/// Opens a knowledge-base directory. The lexicon is required; a missing
/// corpus leaves the fallback masked LM empty. `MT_MASKED_LM_URL` selects the
/// remote masked LM.
pub fn open_kb_dir(dir: &Path) -> Result<KnowledgeBase> {
    let lexicon = SynonymLexicon::load(require(&dir.join(LEXICON_FILE))?)?;
    let corpus_path = dir.join(CORPUS_FILE);
    let corpus = if corpus_path.exists() {
        read_corpus(&corpus_path)?
    } else {
        Vec::new()
    };
    let validated = ValidatedStore::open(&dir.join(VALIDATED_FILE))?;
    Ok(KnowledgeBase::new(
        Arc::new(lexicon),
        validated,
        masked_lm_from_env(CorpusMaskedLm::new(corpus.iter())),
    ))
}

/// References to the artifacts a teaching session starts from, plus its
/// configuration. `test` and `bootstrap` default to the files next to the
/// pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub model: PathBuf,
    pub pool: PathBuf,
    pub kb: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<PathBuf>,
    #[serde(default)]
    pub config: SessionConfig,
}

impl SessionSpec {
    fn sibling(&self, name: &str) -> PathBuf {
        self.pool.parent().unwrap_or(Path::new(".")).join(name)
    }

    pub fn test_path(&self) -> PathBuf {
        self.test.clone().unwrap_or_else(|| self.sibling(TEST_FILE))
    }

    /// Explicit bootstrap file, else the pool's sibling if present.
    pub fn bootstrap_path(&self) -> Option<PathBuf> {
        self.bootstrap.clone().or_else(|| {
            let p = self.sibling(BOOTSTRAP_FILE);
            p.exists().then_some(p)
        })
    }

    /// Every path joined onto `base`.
    pub fn rebased(&self, base: &Path) -> SessionSpec {
        SessionSpec {
            model: base.join(&self.model),
            pool: base.join(&self.pool),
            kb: base.join(&self.kb),
            test: self.test.as_ref().map(|p| base.join(p)),
            bootstrap: self.bootstrap.as_ref().map(|p| base.join(p)),
            config: self.config.clone(),
        }
    }

    pub fn paths(&self) -> Vec<&Path> {
        let mut out = vec![self.model.as_path(), self.pool.as_path(), self.kb.as_path()];
        out.extend(self.test.as_deref());
        out.extend(self.bootstrap.as_deref());
        out
    }

    /// Loads the model and example files; the knowledge base is opened by the
    /// caller so several sessions can share one.
    pub fn load(&self, kb: Arc<KnowledgeBase>) -> Result<SessionInit> {
        let model = LinearModel::load(require(&self.model)?)?;
        let inv = model.inventory().clone();
        let pool = load_dataset(require(&self.pool)?, &inv)?;
        let test = load_dataset(require(&self.test_path())?, &inv)?;
        let replay_seed_set = match self.bootstrap_path() {
            Some(p) => load_dataset(require(&p)?, &inv)?,
            None => Vec::new(),
        };
        Ok(SessionInit {
            model,
            replay_seed_set,
            pool,
            test,
            kb,
            config: self.config.clone(),
        })
    }
}
