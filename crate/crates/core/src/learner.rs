//! Online multiclass linear classifier over bag-of-words counts.
//!
//! The model is multinomial logistic regression trained by seeded SGD on
//! softmax cross-entropy, so every prediction is a strictly positive
//! probability vector over the intent inventory. Feature 0 is a reserved
//! out-of-vocabulary sink whose weights stay at zero; unseen words at
//! prediction time land there and cannot move the output.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{IntentInventory, IntentLabel, LabeledExample, Sentence, Token};
use crate::error::{Error, Result};

pub const OOV_INDEX: usize = 0;
const OOV_TOKEN: &str = "<oov>";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub replay_batch: usize,
}

impl Hyperparams {
    pub fn bootstrap() -> Self {
        Hyperparams {
            learning_rate: 0.1,
            epochs: 30,
            l2: 1e-4,
            replay_batch: 32,
        }
    }

    pub fn online() -> Self {
        Hyperparams {
            epochs: 5,
            ..Self::bootstrap()
        }
    }

    /// Zero learning rate is accepted so sweeps can include a do-nothing
    /// baseline point.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidHyperparams(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidHyperparams("epochs must be positive".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::InvalidHyperparams(format!(
                "l2 {} must be finite and non-negative",
                self.l2
            )));
        }
        Ok(())
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::bootstrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    frozen: bool,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = String;

    fn try_from(r: VocabularyRepr) -> std::result::Result<Self, String> {
        if r.tokens.first().map(String::as_str) != Some(OOV_TOKEN) {
            return Err("vocabulary must start with the oov sink".into());
        }
        let index: HashMap<String, usize> = r
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != r.tokens.len() {
            return Err("duplicate vocabulary entry".into());
        }
        Ok(Vocabulary {
            tokens: r.tokens,
            index,
            frozen: r.frozen,
        })
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            frozen: v.frozen,
        }
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            tokens: vec![OOV_TOKEN.to_string()],
            index: [(OOV_TOKEN.to_string(), OOV_INDEX)].into(),
            frozen: false,
        }
    }
}

impl Vocabulary {
    /// Number of features including the sink.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == 1
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied().filter(|&i| i != OOV_INDEX)
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(OOV_INDEX)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    fn intern(&mut self, token: &str) -> usize {
        if let Some(i) = self.get(token) {
            return i;
        }
        if self.frozen {
            return OOV_INDEX;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }
}

/// Sparse term-frequency vector, sorted by feature index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<(usize, f64)>);

impl FeatureVector {
    fn from_indices(mut idx: Vec<usize>) -> Self {
        idx.sort_unstable();
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(idx.len());
        for i in idx {
            match out.last_mut() {
                Some((j, c)) if *j == i => *c += 1.0,
                _ => out.push((i, 1.0)),
            }
        }
        FeatureVector(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelDistribution {
    probs: Vec<f64>,
}

impl LabelDistribution {
    /// Validates a caller-supplied distribution: strictly positive entries
    /// summing to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty {
                what: "label distribution",
            });
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(p.is_finite() && *p > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidFeedback(format!(
                "not a strictly positive distribution: {probs:?}"
            )));
        }
        Ok(LabelDistribution { probs })
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        LabelDistribution {
            probs: softmax(logits),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Highest-probability index; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Indices sorted by descending probability, ties by ascending index.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx
    }
}

/// Numerically stable softmax. Entries are floored at the smallest normal
/// f64 so the result stays strictly positive even for extreme logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    let mut floored = false;
    for p in &mut out {
        *p /= sum;
        if *p < f64::MIN_POSITIVE {
            *p = f64::MIN_POSITIVE;
            floored = true;
        }
    }
    if floored {
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|p| *p /= s);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    inventory: IntentInventory,
    vocabulary: Vocabulary,
    /// Feature-major: entry `f * K + k` is the weight of feature f for intent k.
    weights: Vec<f64>,
    bias: Vec<f64>,
    hyperparams: Hyperparams,
    seed: u64,
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    version: u32,
    model: &'a LinearModel,
}

#[derive(Deserialize)]
struct Checkpoint {
    version: u32,
    model: LinearModel,
}

impl LinearModel {
    pub fn zeros(inventory: IntentInventory, hyperparams: Hyperparams, seed: u64) -> Self {
        let k = inventory.len();
        LinearModel {
            inventory,
            vocabulary: Vocabulary::default(),
            weights: vec![0.0; k],
            bias: vec![0.0; k],
            hyperparams,
            seed,
        }
    }

    /// Assembles a model from raw parts. `tokens` excludes the sink; `weights`
    /// is feature-major over `[sink] + tokens`.
    pub fn from_parts(
        inventory: IntentInventory,
        tokens: Vec<String>,
        weights: Vec<f64>,
        bias: Vec<f64>,
        hyperparams: Hyperparams,
        seed: u64,
    ) -> Result<Self> {
        let k = inventory.len();
        let mut vocabulary = Vocabulary::default();
        for t in &tokens {
            vocabulary.intern(t);
        }
        if vocabulary.len() != tokens.len() + 1 {
            return Err(Error::InvalidHyperparams("duplicate vocabulary token".into()));
        }
        if weights.len() != vocabulary.len() * k {
            return Err(Error::DimensionMismatch {
                left: weights.len(),
                right: vocabulary.len() * k,
            });
        }
        if bias.len() != k {
            return Err(Error::DimensionMismatch {
                left: bias.len(),
                right: k,
            });
        }
        let mut m = LinearModel {
            inventory,
            vocabulary,
            weights,
            bias,
            hyperparams,
            seed,
        };
        m.weights[..k].iter_mut().for_each(|w| *w = 0.0);
        Ok(m)
    }

    pub fn inventory(&self) -> &IntentInventory {
        &self.inventory
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn vocabulary_mut(&mut self) -> &mut Vocabulary {
        &mut self.vocabulary
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyperparams
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_intents(&self) -> usize {
        self.inventory.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, feature: usize, intent: usize) -> f64 {
        self.weights[feature * self.num_intents() + intent]
    }

    /// Read-only featurization; unknown words map to the sink.
    pub fn featurize(&self, tokens: &[Token]) -> FeatureVector {
        FeatureVector::from_indices(
            tokens
                .iter()
                .map(|t| self.vocabulary.lookup(t.as_str()))
                .collect(),
        )
    }

    /// Featurization that grows the vocabulary (unless frozen).
    fn featurize_mut(&mut self, tokens: &[Token]) -> FeatureVector {
        let idx = tokens
            .iter()
            .map(|t| self.vocabulary.intern(t.as_str()))
            .collect();
        let k = self.num_intents();
        self.weights.resize(self.vocabulary.len() * k, 0.0);
        FeatureVector::from_indices(idx)
    }

    pub fn logits(&self, x: &FeatureVector) -> Vec<f64> {
        let k = self.num_intents();
        let mut z = self.bias.clone();
        for &(f, c) in &x.0 {
            if f == OOV_INDEX {
                continue;
            }
            let row = &self.weights[f * k..(f + 1) * k];
            for (zi, w) in z.iter_mut().zip(row) {
                *zi += w * c;
            }
        }
        z
    }

    /// Label distribution for any token sequence, including the empty one
    /// (which yields softmax of the bias).
    pub fn predict_tokens(&self, tokens: &[Token]) -> LabelDistribution {
        LabelDistribution::from_logits(&self.logits(&self.featurize(tokens)))
    }

    pub fn predict(&self, s: &Sentence) -> LabelDistribution {
        self.predict_tokens(&s.tokens)
    }

    pub fn top_k(&self, s: &Sentence, k: usize) -> Result<Vec<(IntentLabel, f64)>> {
        top_k_of(&self.inventory, &self.predict(s), k)
    }

    /// Cross-entropy of one example plus `l2/2` times the squared norm of the
    /// weights on the example's active (non-sink) features, with its exact
    /// gradient. Gradients are dense, in the same layout as `weights`.
    pub fn loss_and_gradient(
        &self,
        x: &FeatureVector,
        label: usize,
        l2: f64,
    ) -> (f64, Vec<f64>, Vec<f64>) {
        let k = self.num_intents();
        let p = softmax(&self.logits(x));
        let mut loss = -p[label].ln();
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; k];
        for j in 0..k {
            gb[j] = p[j] - if j == label { 1.0 } else { 0.0 };
        }
        for &(f, c) in &x.0 {
            if f == OOV_INDEX {
                continue;
            }
            for j in 0..k {
                let w = self.weights[f * k + j];
                gw[f * k + j] += gb[j] * c + l2 * w;
                loss += 0.5 * l2 * w * w;
            }
        }
        (loss, gw, gb)
    }

    fn sgd_step(&mut self, x: &FeatureVector, label: usize, lr: f64, l2: f64) {
        let k = self.num_intents();
        let p = softmax(&self.logits(x));
        let g: Vec<f64> = (0..k)
            .map(|j| p[j] - if j == label { 1.0 } else { 0.0 })
            .collect();
        for &(f, c) in &x.0 {
            if f == OOV_INDEX {
                continue;
            }
            let row = &mut self.weights[f * k..(f + 1) * k];
            for (w, gj) in row.iter_mut().zip(&g) {
                *w -= lr * (gj * c + l2 * *w);
            }
        }
        for (b, gj) in self.bias.iter_mut().zip(&g) {
            *b -= lr * gj;
        }
    }

    fn run_epochs(&mut self, batch: &[(FeatureVector, usize)], hp: &Hyperparams, rng: &mut ChaCha8Rng) {
        let mut order: Vec<usize> = (0..batch.len()).collect();
        for _ in 0..hp.epochs {
            order.shuffle(rng);
            for &i in &order {
                let (x, y) = &batch[i];
                self.sgd_step(x, *y, hp.learning_rate, hp.l2);
            }
        }
    }

    fn check_labels(&self, examples: &[LabeledExample]) -> Result<()> {
        for e in examples {
            if !self.inventory.contains(&e.label) {
                return Err(Error::UnknownIntent(e.label.name.clone()));
            }
        }
        Ok(())
    }

    /// Trains a fresh model for `hp.epochs` seeded passes.
    pub fn train(
        examples: &[LabeledExample],
        inventory: &IntentInventory,
        hp: &Hyperparams,
        seed: u64,
    ) -> Result<LinearModel> {
        if examples.is_empty() {
            return Err(Error::Empty {
                what: "training set",
            });
        }
        hp.validate()?;
        let mut model = LinearModel::zeros(inventory.clone(), hp.clone(), seed);
        model.check_labels(examples)?;
        let batch: Vec<(FeatureVector, usize)> = examples
            .iter()
            .map(|e| (model.featurize_mut(&e.sentence.tokens), e.label.id))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.run_epochs(&batch, hp, &mut rng);
        Ok(model)
    }

    /// One online teaching step: SGD over the taught example, its variations
    /// and a seeded replay sample drawn from `replay_source`.
    pub fn update(
        &mut self,
        hp: &Hyperparams,
        taught: &LabeledExample,
        variations: &[LabeledExample],
        replay_source: &[LabeledExample],
        seed: u64,
    ) -> Result<()> {
        hp.validate()?;
        if let Some(v) = variations.iter().find(|v| v.label != taught.label) {
            return Err(Error::LabelMismatch {
                variation: v.id.clone(),
                expected: taught.label.name.clone(),
                found: v.label.name.clone(),
            });
        }
        self.check_labels(std::slice::from_ref(taught))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut batch: Vec<(FeatureVector, usize)> = Vec::with_capacity(1 + variations.len() + hp.replay_batch);
        for e in std::iter::once(taught).chain(variations) {
            batch.push((self.featurize_mut(&e.sentence.tokens), e.label.id));
        }
        if hp.replay_batch > 0 && !replay_source.is_empty() {
            let amount = hp.replay_batch.min(replay_source.len());
            for i in rand::seq::index::sample(&mut rng, replay_source.len(), amount) {
                let e = &replay_source[i];
                if !self.inventory.contains(&e.label) {
                    return Err(Error::UnknownIntent(e.label.name.clone()));
                }
                batch.push((self.featurize_mut(&e.sentence.tokens), e.label.id));
            }
        }
        self.run_epochs(&batch, hp, &mut rng);
        Ok(())
    }

    pub fn error_rate(&self, test: &[LabeledExample]) -> Result<f64> {
        if test.is_empty() {
            return Err(Error::Empty { what: "test set" });
        }
        let wrong = test
            .par_iter()
            .filter(|e| self.predict(&e.sentence).argmax() != e.label.id)
            .count();
        Ok(wrong as f64 / test.len() as f64)
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&CheckpointRef {
            version: CHECKPOINT_VERSION,
            model: self,
        })?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<LinearModel> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(ck.version));
        }
        Ok(ck.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<LinearModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_json(&text)
    }
}

pub fn top_k_of(
    inventory: &IntentInventory,
    d: &LabelDistribution,
    k: usize,
) -> Result<Vec<(IntentLabel, f64)>> {
    if k == 0 || k > d.len() {
        return Err(Error::KOutOfRange { k, max: d.len() });
    }
    Ok(d.ranked()
        .into_iter()
        .take(k)
        .map(|i| (inventory.labels()[i].clone(), d.probs()[i]))
        .collect())
}

/// A model together with the cumulative set of everything it was taught.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineLearner {
    pub model: LinearModel,
    cumulative: Vec<LabeledExample>,
}

impl OnlineLearner {
    pub fn new(model: LinearModel, initial: Vec<LabeledExample>) -> Self {
        OnlineLearner {
            model,
            cumulative: initial,
        }
    }

    pub fn cumulative(&self) -> &[LabeledExample] {
        &self.cumulative
    }

    /// Replays from the set as it stood before this step, then appends the
    /// taught example and its variations.
    pub fn update(
        &mut self,
        hp: &Hyperparams,
        taught: &LabeledExample,
        variations: &[LabeledExample],
        seed: u64,
    ) -> Result<()> {
        self.model
            .update(hp, taught, variations, &self.cumulative, seed)?;
        self.cumulative.push(taught.clone());
        self.cumulative.extend_from_slice(variations);
        Ok(())
    }
}

/// Element i is the mean of `errors[..=i]`.
pub fn running_average(errors: &[f64]) -> Vec<f64> {
    let mut sum = 0.0;
    errors
        .iter()
        .enumerate()
        .map(|(i, e)| {
            sum += e;
            sum / (i + 1) as f64
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub hyperparams: Hyperparams,
    pub eval_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub best: Hyperparams,
    pub best_index: usize,
    pub table: Vec<SweepRow>,
}

/// Grid search: one model per point, lowest eval error wins, ties by grid
/// order.
pub fn sweep(
    grid: &[Hyperparams],
    trainset: &[LabeledExample],
    evalset: &[LabeledExample],
    inventory: &IntentInventory,
    seed: u64,
) -> Result<SweepOutcome> {
    if grid.is_empty() {
        return Err(Error::Empty { what: "grid" });
    }
    let table: Vec<SweepRow> = grid
        .par_iter()
        .map(|hp| {
            let model = LinearModel::train(trainset, inventory, hp, seed)?;
            Ok(SweepRow {
                hyperparams: hp.clone(),
                eval_error: model.error_rate(evalset)?,
            })
        })
        .collect::<Result<_>>()?;
    let mut best_index = 0;
    for (i, row) in table.iter().enumerate() {
        if row.eval_error < table[best_index].eval_error {
            best_index = i;
        }
    }
    Ok(SweepOutcome {
        best: table[best_index].hyperparams.clone(),
        best_index,
        table,
    })
}
