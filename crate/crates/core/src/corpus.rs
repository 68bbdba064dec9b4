//! Intent datasets: tokenization, question templates with entity
//! placeholders, template expansion and template-level train splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

/// A lowercase word: letters, digits and internal apostrophes or hyphens.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Wraps an already-normalized word. Returns `None` if `text` would not
    /// survive tokenization unchanged.
    pub fn new(text: &str) -> Option<Token> {
        let mut toks = split_words(text);
        match (toks.next(), toks.next()) {
            (Some(t), None) if t == text => Some(Token(t)),
            _ => None,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub raw: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    /// Builds a sentence from tokens; `raw` becomes the space-joined text.
    pub fn from_tokens(tokens: Vec<Token>) -> Result<Sentence> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let raw = join(&tokens);
        Ok(Sentence { raw, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        join(&self.tokens)
    }
}

pub fn join(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(Token::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '-'
}

fn split_words(raw: &str) -> impl Iterator<Item = String> + '_ {
    raw.split(|c: char| !is_word_char(c))
        .map(|w| w.trim_matches(|c| c == '\'' || c == '-'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

pub fn tokenize(raw: &str) -> Result<Sentence> {
    let tokens: Vec<Token> = split_words(raw).map(Token).collect();
    if tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(Sentence {
        raw: raw.to_string(),
        tokens,
    })
}

/// Tokenizes a replacement phrase into its words (may be empty).
pub fn phrase_tokens(phrase: &str) -> Vec<Token> {
    split_words(phrase).map(Token).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntentLabel {
    pub id: usize,
    pub name: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentInventory {
    labels: Vec<IntentLabel>,
}

impl IntentInventory {
    pub fn new<I, S>(names: I) -> Result<IntentInventory>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut labels: Vec<IntentLabel> = Vec::new();
        for name in names {
            let name = name.into();
            if name.trim().is_empty() {
                return Err(Error::Empty { what: "intent name" });
            }
            if labels.iter().any(|l| l.name == name) {
                return Err(Error::InvalidTemplate {
                    pattern: name,
                    reason: "duplicate intent name".into(),
                });
            }
            labels.push(IntentLabel {
                id: labels.len(),
                name,
            });
        }
        Ok(IntentInventory { labels })
    }

    pub fn labels(&self) -> &[IntentLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&IntentLabel> {
        self.labels.get(id)
    }

    pub fn by_name(&self, name: &str) -> Result<&IntentLabel> {
        self.labels
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::UnknownIntent(name.to_string()))
    }

    pub fn contains(&self, label: &IntentLabel) -> bool {
        self.labels.get(label.id) == Some(label)
    }
}

/// Templates file line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub intent: String,
    pub pattern: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub entities: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub intent: IntentLabel,
    pub pattern: String,
    pub keywords: Vec<Token>,
    pub placeholder_entities: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, PartialEq, Eq)]
enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn parse_pattern(pattern: &str) -> Result<Vec<Piece<'_>>> {
    let bad = |reason: &str| Error::InvalidTemplate {
        pattern: pattern.to_string(),
        reason: reason.to_string(),
    };
    let mut pieces = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            pieces.push(Piece::Text(&rest[..open]));
        }
        let close = rest[open..].find('}').ok_or_else(|| bad("unclosed `{`"))? + open;
        let name = &rest[open + 1..close];
        if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return Err(bad("placeholder names must be non-empty identifiers"));
        }
        pieces.push(Piece::Slot(name));
        rest = &rest[close + 1..];
    }
    if rest.contains('}') {
        return Err(bad("unmatched `}`"));
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest));
    }
    Ok(pieces)
}

impl Template {
    pub fn new(
        id: impl Into<String>,
        intent: IntentLabel,
        pattern: impl Into<String>,
        keywords: &[&str],
        entities: BTreeMap<String, Vec<String>>,
    ) -> Result<Template> {
        let t = Template {
            id: id.into(),
            intent,
            pattern: pattern.into(),
            keywords: keywords
                .iter()
                .flat_map(|k| phrase_tokens(k))
                .collect(),
            placeholder_entities: entities,
        };
        t.validate()?;
        Ok(t)
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Result<Vec<String>> {
        let mut seen = Vec::<String>::new();
        for p in parse_pattern(&self.pattern)? {
            if let Piece::Slot(name) = p {
                if !seen.iter().any(|s| s == name) {
                    seen.push(name.to_string());
                }
            }
        }
        Ok(seen)
    }

    fn fixed_tokens(&self) -> Result<Vec<Token>> {
        let mut out = Vec::new();
        for p in parse_pattern(&self.pattern)? {
            if let Piece::Text(t) = p {
                out.extend(phrase_tokens(t));
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidTemplate {
            pattern: self.pattern.clone(),
            reason,
        };
        for name in self.placeholders()? {
            match self.placeholder_entities.get(&name) {
                Some(list) if !list.is_empty() => {}
                _ => return Err(bad(format!("placeholder `{name}` has no entities"))),
            }
        }
        let fixed = self.fixed_tokens()?;
        for k in &self.keywords {
            if !fixed.contains(k) {
                return Err(bad(format!("keyword `{k}` is not in the fixed text")));
            }
        }
        Ok(())
    }

    /// Number of examples `expand_template` yields.
    pub fn expansion_size(&self) -> Result<usize> {
        Ok(self
            .placeholders()?
            .iter()
            .map(|p| self.placeholder_entities.get(p).map_or(0, Vec::len))
            .product())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Template,
    Manual,
    Augmented,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Template => "template",
            Origin::Manual => "manual",
            Origin::Augmented => "augmented",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub sentence: Sentence,
    pub label: IntentLabel,
    pub origin: Origin,
}

/// Separator between the source template id and the expansion index in
/// template-generated example ids (`t007:12`).
pub const TEMPLATE_ID_SEPARATOR: char = ':';

impl LabeledExample {
    /// Source template id for template-generated examples.
    pub fn template_id(&self) -> Option<&str> {
        if self.origin != Origin::Template {
            return None;
        }
        self.id.split_once(TEMPLATE_ID_SEPARATOR).map(|(t, _)| t)
    }

    pub fn to_record(&self) -> ExampleRecord {
        ExampleRecord {
            id: self.id.clone(),
            text: self.sentence.raw.clone(),
            label: self.label.name.clone(),
            origin: self.origin,
        }
    }
}

/// Dataset file line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub text: String,
    pub label: String,
    pub origin: Origin,
}

impl ExampleRecord {
    pub fn resolve(&self, inventory: &IntentInventory) -> Result<LabeledExample> {
        Ok(LabeledExample {
            id: self.id.clone(),
            sentence: tokenize(&self.text)?,
            label: inventory.by_name(&self.label)?.clone(),
            origin: self.origin,
        })
    }
}

pub fn expand_template(t: &Template) -> Result<Vec<LabeledExample>> {
    let pieces = parse_pattern(&t.pattern)?;
    let names = t.placeholders()?;
    let lists: Vec<&Vec<String>> = names
        .iter()
        .map(|n| {
            t.placeholder_entities
                .get(n)
                .filter(|l| !l.is_empty())
                .ok_or_else(|| Error::InvalidTemplate {
                    pattern: t.pattern.clone(),
                    reason: format!("placeholder `{n}` has no entities"),
                })
        })
        .collect::<Result<_>>()?;

    let total: usize = lists.iter().map(|l| l.len()).product();
    let mut out = Vec::with_capacity(total);
    // odometer: last placeholder varies fastest
    let mut digits = vec![0usize; lists.len()];
    for n in 0..total {
        let mut raw = String::new();
        for p in &pieces {
            match p {
                Piece::Text(s) => raw.push_str(s),
                Piece::Slot(name) => {
                    let slot = names.iter().position(|x| x == name).expect("known slot");
                    raw.push_str(&lists[slot][digits[slot]]);
                }
            }
        }
        out.push(LabeledExample {
            id: format!("{}{}{}", t.id, TEMPLATE_ID_SEPARATOR, n),
            sentence: tokenize(&raw)?,
            label: t.intent.clone(),
            origin: Origin::Template,
        });
        for d in (0..digits.len()).rev() {
            digits[d] += 1;
            if digits[d] < lists[d].len() {
                break;
            }
            digits[d] = 0;
        }
    }
    Ok(out)
}

/// Which templates went to which side of a split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub bootstrap_fraction: f64,
    pub bootstrap_templates: Vec<String>,
    pub novel_templates: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub bootstrap: Vec<LabeledExample>,
    pub novel_pool: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub manifest: SplitManifest,
}

/// Partitions templates (per intent, by seed) into bootstrap and novel sets
/// and expands each side. The test set is left empty for the caller.
pub fn split_dataset(
    templates: &[Template],
    inventory: &IntentInventory,
    bootstrap_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(bootstrap_fraction > 0.0 && bootstrap_fraction < 1.0) {
        return Err(Error::InvalidFraction(bootstrap_fraction));
    }
    let mut by_intent: BTreeMap<usize, Vec<&Template>> = BTreeMap::new();
    for t in templates {
        if !inventory.contains(&t.intent) {
            return Err(Error::UnknownIntent(t.intent.name.clone()));
        }
        by_intent.entry(t.intent.id).or_default().push(t);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot_ids = BTreeSet::new();
    for label in inventory.labels() {
        let mut group = by_intent.remove(&label.id).unwrap_or_default();
        if group.is_empty() {
            return Err(Error::IntentWithoutBootstrap(label.name.clone()));
        }
        group.shuffle(&mut rng);
        let n = group.len();
        let wanted = (n as f64 * bootstrap_fraction).round() as usize;
        let take = if n == 1 { 1 } else { wanted.clamp(1, n - 1) };
        boot_ids.extend(group[..take].iter().map(|t| t.id.clone()));
    }

    let mut split = DatasetSplit {
        manifest: SplitManifest {
            seed,
            bootstrap_fraction,
            ..Default::default()
        },
        ..Default::default()
    };
    for t in templates {
        let examples = expand_template(t)?;
        if boot_ids.contains(&t.id) {
            split.manifest.bootstrap_templates.push(t.id.clone());
            split.bootstrap.extend(examples);
        } else {
            split.manifest.novel_templates.push(t.id.clone());
            split.novel_pool.extend(examples);
        }
    }
    Ok(split)
}

/// Inventory in order of first appearance in the templates file.
pub fn inventory_from_records(records: &[TemplateRecord]) -> Result<IntentInventory> {
    let mut names: Vec<&str> = Vec::new();
    for r in records {
        if !names.contains(&r.intent.as_str()) {
            names.push(&r.intent);
        }
    }
    IntentInventory::new(names)
}

pub fn templates_from_records(
    records: &[TemplateRecord],
    inventory: &IntentInventory,
    id_prefix: &str,
) -> Result<Vec<Template>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let kws: Vec<&str> = r.keywords.iter().map(String::as_str).collect();
            Template::new(
                format!("{id_prefix}{i:03}"),
                inventory.by_name(&r.intent)?.clone(),
                r.pattern.clone(),
                &kws,
                r.entities.clone(),
            )
        })
        .collect()
}

pub fn load_templates(path: &Path) -> Result<(IntentInventory, Vec<Template>)> {
    let records: Vec<TemplateRecord> = jsonl::read(path)?;
    let inventory = inventory_from_records(&records)?;
    let templates = templates_from_records(&records, &inventory, "t")?;
    Ok((inventory, templates))
}

pub fn load_dataset(path: &Path, inventory: &IntentInventory) -> Result<Vec<LabeledExample>> {
    jsonl::read::<ExampleRecord>(path)?
        .iter()
        .map(|r| r.resolve(inventory))
        .collect()
}

pub fn save_dataset(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let records: Vec<ExampleRecord> = examples.iter().map(LabeledExample::to_record).collect();
    jsonl::write(path, &records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &Sentence) -> Vec<&str> {
        s.tokens.iter().map(Token::as_str).collect()
    }

    fn inv() -> IntentInventory {
        IntentInventory::new(["submission", "teachingstaff"]).unwrap()
    }

    fn template(id: &str, intent: usize, pattern: &str, ents: &[(&str, &[&str])]) -> Template {
        let inventory = inv();
        let entities = ents
            .iter()
            .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
            .collect();
        Template::new(id, inventory.get(intent).unwrap().clone(), pattern, &[], entities).unwrap()
    }

    #[test]
    fn tokenizes_question() {
        let s = tokenize("How do I turn in an assignment?").unwrap();
        assert_eq!(words(&s), ["how", "do", "i", "turn", "in", "an", "assignment"]);
        assert_eq!(s.raw, "How do I turn in an assignment?");
    }

    #[test]
    fn single_token() {
        assert_eq!(words(&tokenize("A").unwrap()), ["a"]);
    }

    #[test]
    fn reference_tokenization_table() {
        // hand-tokenized reference cases
        let table: &[(&str, &[&str])] = &[
            ("exam 2!!!", &["exam", "2"]),
            ("What's the TA's e-mail?", &["what's", "the", "ta's", "e-mail"]),
            ("'quoted' -dash- words", &["quoted", "dash", "words"]),
            ("  spaced\tout\nline ", &["spaced", "out", "line"]),
            ("Café déjà-vu", &["café", "déjà-vu"]),
            ("a--b", &["a--b"]),
            ("(parens), [brackets]; {braces}", &["parens", "brackets", "braces"]),
        ];
        for (raw, expected) in table {
            assert_eq!(words(&tokenize(raw).unwrap()), *expected, "{raw}");
        }
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(tokenize("   "), Err(Error::EmptyInput)));
        assert!(matches!(tokenize("?!--"), Err(Error::EmptyInput)));
    }

    #[test]
    fn token_new_requires_normalized_word() {
        assert!(Token::new("submit").is_some());
        assert!(Token::new("Submit").is_none());
        assert!(Token::new("turn over").is_none());
    }

    #[test]
    fn expand_single_placeholder() {
        let t = template(
            "t0",
            0,
            "How do I submit the {object}?",
            &[("object", &["assignment 1", "exam 2"])],
        );
        let ex = expand_template(&t).unwrap();
        assert_eq!(ex.len(), 2);
        assert!(ex.iter().all(|e| e.label.name == "submission"));
        assert_eq!(ex[0].sentence.raw, "How do I submit the assignment 1?");
        assert_eq!(ex[1].id, "t0:1");
        assert_eq!(ex[1].template_id(), Some("t0"));
    }

    #[test]
    fn expand_without_placeholders() {
        let t = template("t1", 1, "Who teaches this class?", &[]);
        assert_eq!(expand_template(&t).unwrap().len(), 1);
    }

    #[test]
    fn expand_cross_product_order() {
        let t = template(
            "t2",
            0,
            "{a} then {b}",
            &[("a", &["x", "y"]), ("b", &["1", "2", "3"])],
        );
        let raws: Vec<String> = expand_template(&t)
            .unwrap()
            .into_iter()
            .map(|e| e.sentence.raw)
            .collect();
        let mut expected = Vec::new();
        for a in ["x", "y"] {
            for b in ["1", "2", "3"] {
                expected.push(format!("{a} then {b}"));
            }
        }
        assert_eq!(raws, expected);
    }

    #[test]
    fn template_validation() {
        let inventory = inv();
        let label = inventory.get(0).unwrap().clone();
        let missing = Template::new("t", label.clone(), "submit {x}", &[], BTreeMap::new());
        assert!(matches!(missing, Err(Error::InvalidTemplate { .. })));
        let kw_in_slot = Template::new(
            "t",
            label.clone(),
            "submit {x}",
            &["homework"],
            [("x".to_string(), vec!["homework".to_string()])].into(),
        );
        assert!(kw_in_slot.is_err());
        let ok = Template::new(
            "t",
            label,
            "submit {x}",
            &["submit"],
            [("x".to_string(), vec!["homework".to_string()])].into(),
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn split_rounds_per_intent() {
        let mut templates = Vec::new();
        for i in 0..10 {
            templates.push(template(&format!("t{i:02}"), i % 2, &format!("question {i}"), &[]));
        }
        let split = split_dataset(&templates, &inv(), 0.2, 7).unwrap();
        assert_eq!(split.manifest.bootstrap_templates.len(), 2);
        assert_eq!(split.manifest.novel_templates.len(), 8);
        let again = split_dataset(&templates, &inv(), 0.2, 7).unwrap();
        assert_eq!(
            serde_json::to_string(&split.manifest).unwrap(),
            serde_json::to_string(&again.manifest).unwrap()
        );
    }

    #[test]
    fn split_rejects_intent_without_templates() {
        let templates = vec![template("t0", 0, "only submission", &[])];
        assert!(matches!(
            split_dataset(&templates, &inv(), 0.5, 1),
            Err(Error::IntentWithoutBootstrap(name)) if name == "teachingstaff"
        ));
        assert!(matches!(
            split_dataset(&templates, &inv(), 1.0, 1),
            Err(Error::InvalidFraction(_))
        ));
    }
}
