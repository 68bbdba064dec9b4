//! The teaching loop.
//!
//! A session walks an automaton per example: `offered` then either `skipped`
//! or `accepted` followed by `feedback_applied`. Calls out of order are
//! rejected before anything is mutated. Every transition is appended to an
//! event log that can be replayed to rebuild the same model bit for bit.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{eda_augment, generate_variations, Action, FeedbackRecord, GenerateOptions, Provenance, Variation};
use crate::corpus::{IntentLabel, LabeledExample, Origin};
use crate::error::{Error, Result};
use crate::interpret::{word_importance, KlDirection};
use crate::jsonl;
use crate::knowledge::{KnowledgeBase, ReplacementRecommendation};
use crate::learner::{running_average, top_k_of, Hyperparams, LinearModel, OnlineLearner};
use crate::selector::{confusion_score, most_confusing, ConfusionConfig, DEFAULT_TOP_K};

pub const DEFAULT_SKIP_COOLDOWN: u64 = 25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeModel {
    pub label_seconds: f64,
    pub feedback_multiplier: f64,
    pub skip_seconds: f64,
}

impl TimeModel {
    /// Feedback costs 8x a plain label.
    pub fn t1() -> Self {
        TimeModel {
            label_seconds: 10.0,
            feedback_multiplier: 8.0,
            skip_seconds: 1.0,
        }
    }

    /// Feedback costs 4x a plain label.
    pub fn t2() -> Self {
        TimeModel {
            feedback_multiplier: 4.0,
            ..Self::t1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.label_seconds) && ok(self.feedback_multiplier) && ok(self.skip_seconds) {
            Ok(())
        } else {
            Err(Error::InvalidHyperparams(format!("time model values must be positive: {self:?}")))
        }
    }

    /// Extra charge for annotations beyond the label.
    pub fn feedback_extra(&self) -> f64 {
        self.label_seconds * (self.feedback_multiplier - 1.0)
    }
}

impl Default for TimeModel {
    fn default() -> Self {
        Self::t1()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionOrder {
    /// Most confusing first, re-ranked after every interaction.
    #[default]
    Confusion,
    /// A seeded shuffle of the pool, consumed front to back.
    Random,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Augmentation {
    /// Interpret the feedback into variations.
    #[default]
    Feedback,
    /// Ignore the annotations' content and produce as many EDA variations as
    /// the feedback would have.
    EdaMatched,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default)]
    pub time: TimeModel,
    #[serde(default = "Hyperparams::online")]
    pub online_hp: Hyperparams,
    #[serde(default)]
    pub confusion: ConfusionConfig,
    #[serde(default)]
    pub kl_direction: KlDirection,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_cooldown")]
    pub skip_cooldown: u64,
    #[serde(default)]
    pub order: SelectionOrder,
    #[serde(default)]
    pub augmentation: Augmentation,
    #[serde(default)]
    pub generate: GenerateOptions,
    #[serde(default)]
    pub seed: u64,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

fn default_cooldown() -> u64 {
    DEFAULT_SKIP_COOLDOWN
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            time: TimeModel::default(),
            online_hp: Hyperparams::online(),
            confusion: ConfusionConfig::default(),
            kl_direction: KlDirection::default(),
            top_k: DEFAULT_TOP_K,
            skip_cooldown: DEFAULT_SKIP_COOLDOWN,
            order: SelectionOrder::default(),
            augmentation: Augmentation::default(),
            generate: GenerateOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub intent: IntentLabel,
    pub confidence: f64,
}

/// What the teacher sees for the offered example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineStateView {
    pub example_id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub top_k: Vec<Prediction>,
    pub confusion: f64,
    pub importance: Vec<f64>,
    pub recommendations: Vec<Vec<ReplacementRecommendation>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Offered,
    Skipped,
    Accepted,
    FeedbackApplied,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Offered => "offered",
            EventKind::Skipped => "skipped",
            EventKind::Accepted => "accepted",
            EventKind::FeedbackApplied => "feedback_applied",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub kind: EventKind,
    pub example_id: String,
    /// Wall-clock milliseconds since the Unix epoch.
    pub timestamp: u64,
    /// Simulated clock after the event.
    pub sim_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<EventPayload>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_examples: usize,
    pub sim_seconds: f64,
    pub error: f64,
    pub running_avg: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ErrorCurve {
    pub points: Vec<CurvePoint>,
}

impl ErrorCurve {
    pub fn push(&mut self, sim_seconds: f64, error: f64) -> CurvePoint {
        let errors: Vec<f64> = self.points.iter().map(|p| p.error).chain([error]).collect();
        let point = CurvePoint {
            n_examples: self.points.len() + 1,
            sim_seconds,
            error,
            running_avg: *running_average(&errors).last().expect("non-empty"),
        };
        self.points.push(point);
        point
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeachStepResult {
    pub example_id: String,
    pub variations: usize,
    pub error: f64,
    pub point: CurvePoint,
    pub curve_len: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Dataset record of an augmented example plus the edits that produced it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub id: String,
    pub text: String,
    pub label: String,
    pub origin: Origin,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub offered: usize,
    pub accepted: usize,
    pub skipped: usize,
    /// skipped / accepted; `None` before the first acceptance.
    pub skip_ratio: Option<f64>,
    pub total_sim_seconds: f64,
    pub variations: usize,
    pub final_error: Option<f64>,
    pub final_running_avg: Option<f64>,
    pub pool_remaining: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "phase")]
pub enum Phase {
    Idle,
    Offered { example_id: String },
    Accepted { example_id: String },
}

/// Everything needed to start (or replay) a session.
#[derive(Clone, Debug)]
pub struct SessionInit {
    pub model: LinearModel,
    /// Initial cumulative training set (normally the bootstrap examples);
    /// online updates replay from it.
    pub replay_seed_set: Vec<LabeledExample>,
    pub pool: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub kb: Arc<KnowledgeBase>,
    pub config: SessionConfig,
}

#[derive(Debug)]
pub struct Session {
    id: String,
    learner: OnlineLearner,
    pool: Vec<LabeledExample>,
    taught: BTreeSet<String>,
    test: Vec<LabeledExample>,
    kb: Arc<KnowledgeBase>,
    config: SessionConfig,
    log: Vec<InteractionEvent>,
    log_path: Option<PathBuf>,
    clock: f64,
    curve: ErrorCurve,
    phase: Phase,
    current_view: Option<MachineStateView>,
    offers: u64,
    cooldown: HashMap<String, u64>,
    skipped: usize,
    variations: Vec<(String, Variation)>,
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn conflict(event: &'static str, reason: impl Into<String>) -> Error {
    Error::Conflict {
        event,
        reason: reason.into(),
    }
}

/// Per-step seed derived from the session seed (splitmix64 finalizer).
fn step_seed(seed: u64, step: u64) -> u64 {
    let mut z = seed ^ step.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Session {
    pub fn new(id: impl Into<String>, init: SessionInit) -> Result<Session> {
        init.config.time.validate()?;
        init.config.online_hp.validate()?;
        if init.test.is_empty() {
            return Err(Error::Empty { what: "test set" });
        }
        if init.config.top_k == 0 || init.config.top_k > init.model.num_intents() {
            return Err(Error::KOutOfRange {
                k: init.config.top_k,
                max: init.model.num_intents(),
            });
        }
        for e in init.pool.iter().chain(&init.test) {
            if !init.model.inventory().contains(&e.label) {
                return Err(Error::UnknownIntent(e.label.name.clone()));
            }
        }
        let mut pool = init.pool;
        let mut seen = BTreeSet::new();
        if let Some(dup) = pool.iter().find(|e| !seen.insert(e.id.as_str())) {
            return Err(Error::InvalidFeedback(format!("duplicate pool id `{}`", dup.id)));
        }
        if init.config.order == SelectionOrder::Random {
            pool.shuffle(&mut ChaCha8Rng::seed_from_u64(init.config.seed));
        }
        Ok(Session {
            id: id.into(),
            learner: OnlineLearner::new(init.model, init.replay_seed_set),
            pool,
            taught: BTreeSet::new(),
            test: init.test,
            kb: init.kb,
            config: init.config,
            log: Vec::new(),
            log_path: None,
            clock: 0.0,
            curve: ErrorCurve::default(),
            phase: Phase::Idle,
            current_view: None,
            offers: 0,
            cooldown: HashMap::new(),
            skipped: 0,
            variations: Vec::new(),
        })
    }

    /// Streams every subsequent event to `path` as JSONL.
    pub fn with_log_file(mut self, path: impl Into<PathBuf>) -> Self {
        self.log_path = Some(path.into());
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn model(&self) -> &LinearModel {
        &self.learner.model
    }

    pub fn learner(&self) -> &OnlineLearner {
        &self.learner
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn kb(&self) -> &Arc<KnowledgeBase> {
        &self.kb
    }

    pub fn pool(&self) -> &[LabeledExample] {
        &self.pool
    }

    pub fn pool_example(&self, id: &str) -> Option<&LabeledExample> {
        self.pool.iter().find(|e| e.id == id)
    }

    pub fn taught(&self) -> &BTreeSet<String> {
        &self.taught
    }

    pub fn log(&self) -> &[InteractionEvent] {
        &self.log
    }

    pub fn curve(&self) -> &ErrorCurve {
        &self.curve
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    /// Examples added by augmentation so far, with provenance-bearing ids.
    pub fn augmented(&self) -> Vec<LabeledExample> {
        self.learner
            .cumulative()
            .iter()
            .filter(|e| e.origin == Origin::Augmented)
            .cloned()
            .collect()
    }

    /// Every variation generated so far, as training-set records with their
    /// provenance.
    pub fn augmented_records(&self) -> Vec<AugmentedRecord> {
        self.variations
            .iter()
            .map(|(id, v)| AugmentedRecord {
                id: id.clone(),
                text: v.sentence.text(),
                label: v.label.name.clone(),
                origin: Origin::Augmented,
                provenance: v.provenance.clone(),
            })
            .collect()
    }

    fn push_event(&mut self, kind: EventKind, example_id: &str, payload: Option<EventPayload>) {
        let ev = InteractionEvent {
            kind,
            example_id: example_id.to_string(),
            timestamp: now_millis(),
            sim_seconds: self.clock,
            payload,
        };
        if let Some(path) = &self.log_path {
            if let Err(e) = jsonl::append(path, &ev) {
                log::warn!("session {}: could not append event: {e}", self.id);
            }
        }
        self.log.push(ev);
    }

    fn eligible(&self, e: &LabeledExample) -> bool {
        self.cooldown.get(&e.id).is_none_or(|&until| self.offers >= until)
    }

    fn build_view(&self, example: &LabeledExample) -> Result<MachineStateView> {
        let model = &self.learner.model;
        let d = model.predict(&example.sentence);
        let top = top_k_of(model.inventory(), &d, self.config.top_k)?;
        let importance = word_importance(model, &example.sentence, self.config.kl_direction);
        let recommendations = example
            .sentence
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| self.kb.recommend(t.as_str(), &example.sentence, i))
            .collect::<Result<_>>()?;
        Ok(MachineStateView {
            example_id: example.id.clone(),
            text: example.sentence.raw.clone(),
            tokens: example.sentence.tokens.iter().map(|t| t.as_str().to_string()).collect(),
            top_k: top
                .into_iter()
                .map(|(intent, confidence)| Prediction { intent, confidence })
                .collect(),
            confusion: confusion_score(&d, &self.config.confusion),
            importance: importance.0,
            recommendations,
        })
    }

    /// Offers the next example. Repeated calls before a decision return the
    /// same view without logging another offer.
    pub fn next_candidate(&mut self) -> Result<MachineStateView> {
        match &self.phase {
            Phase::Offered { .. } => {
                return Ok(self.current_view.clone().expect("offered phase keeps its view"));
            }
            Phase::Accepted { example_id } => {
                return Err(conflict(
                    "accepted",
                    format!("feedback for `{example_id}` is pending"),
                ));
            }
            Phase::Idle => {}
        }
        if self.pool.is_empty() {
            return Err(Error::PoolExhausted);
        }
        let any_eligible = self.pool.iter().any(|e| self.eligible(e));
        let candidates = self.pool.iter().filter(|e| !any_eligible || self.eligible(e));
        let chosen_id = match self.config.order {
            SelectionOrder::Confusion => most_confusing(&self.learner.model, candidates, &self.config.confusion),
            SelectionOrder::Random => candidates.into_iter().next(),
        }
        .expect("non-empty candidates")
        .id
        .clone();
        let example = self.pool_example(&chosen_id).expect("chosen from pool").clone();
        let view = self.build_view(&example)?;
        self.offers += 1;
        self.phase = Phase::Offered {
            example_id: chosen_id.clone(),
        };
        self.current_view = Some(view.clone());
        self.push_event(EventKind::Offered, &chosen_id, None);
        Ok(view)
    }

    pub fn decide(&mut self, example_id: &str, action: Action) -> Result<()> {
        match &self.phase {
            Phase::Offered { example_id: offered } if offered == example_id => {}
            Phase::Offered { example_id: offered } => {
                return Err(conflict(
                    "offered",
                    format!("`{example_id}` is not the offered example `{offered}`"),
                ))
            }
            Phase::Accepted { example_id: pending } => {
                return Err(conflict(
                    "accepted",
                    format!("`{pending}` was already accepted and awaits feedback"),
                ))
            }
            Phase::Idle => return Err(conflict("idle", "no example has been offered")),
        }
        self.current_view = None;
        match action {
            Action::Skip => {
                self.clock += self.config.time.skip_seconds;
                self.skipped += 1;
                self.cooldown
                    .insert(example_id.to_string(), self.offers + self.config.skip_cooldown);
                let pos = self.pool.iter().position(|e| e.id == example_id).expect("offered example in pool");
                let e = self.pool.remove(pos);
                self.pool.push(e);
                self.phase = Phase::Idle;
                self.push_event(EventKind::Skipped, example_id, None);
            }
            Action::Accept => {
                self.clock += self.config.time.label_seconds;
                self.phase = Phase::Accepted {
                    example_id: example_id.to_string(),
                };
                self.push_event(EventKind::Accepted, example_id, None);
            }
        }
        Ok(())
    }

    fn variations_for(&self, taught: &LabeledExample, fb: &FeedbackRecord) -> Result<Vec<Variation>> {
        let mut vars = generate_variations(taught, fb, &self.kb, &self.config.generate)?;
        if self.config.augmentation == Augmentation::EdaMatched {
            let seed = step_seed(self.config.seed ^ 0xeda, self.curve.len() as u64);
            vars = eda_augment(taught, vars.len(), self.kb.lexicon(), seed);
        }
        Ok(vars)
    }

    /// Applies feedback for the accepted example: augmentation, knowledge
    /// base update, online learning step and test evaluation.
    pub fn submit_feedback(&mut self, fb: FeedbackRecord) -> Result<TeachStepResult> {
        let pending = match &self.phase {
            Phase::Accepted { example_id } => example_id.clone(),
            Phase::Offered { example_id } => {
                return Err(conflict("offered", format!("`{example_id}` has not been accepted")))
            }
            Phase::Idle => return Err(conflict("idle", "no accepted example awaits feedback")),
        };
        if fb.example_id != pending {
            return Err(conflict(
                "accepted",
                format!("feedback is for `{}` but `{pending}` is pending", fb.example_id),
            ));
        }
        if fb.action != Action::Accept {
            return Err(Error::InvalidFeedback("feedback must carry action `accept`".into()));
        }
        if !self.learner.model.inventory().contains(&fb.label) {
            return Err(Error::UnknownIntent(fb.label.name.clone()));
        }
        let example = self.pool_example(&pending).expect("pending example in pool").clone();
        fb.validate(&example.sentence)?;

        let taught = LabeledExample {
            label: fb.label.clone(),
            ..example.clone()
        };
        let variations = self.variations_for(&taught, &fb)?;
        let var_examples: Vec<LabeledExample> = variations
            .iter()
            .enumerate()
            .map(|(i, v)| v.to_example(i))
            .collect();
        let step = self.curve.len() as u64;
        self.learner
            .update(&self.config.online_hp, &taught, &var_examples, step_seed(self.config.seed, step))?;

        let mut warnings = Vec::new();
        for (pos, phrases) in &fb.validated {
            if phrases.is_empty() {
                continue;
            }
            let word = example.sentence.tokens[*pos].as_str();
            if let Err(e) = self.kb.record_validated(word, phrases) {
                log::warn!("session {}: {e}", self.id);
                warnings.push(e.to_string());
            }
        }

        let error = self.learner.model.error_rate(&self.test)?;
        if fb.sim_seconds > 0.0 {
            self.clock += fb.sim_seconds;
        } else if fb.has_annotation() {
            self.clock += self.config.time.feedback_extra();
        }
        self.pool.retain(|e| e.id != pending);
        self.cooldown.remove(&pending);
        self.taught.insert(pending.clone());
        let n_vars = variations.len();
        self.variations
            .extend(var_examples.into_iter().map(|e| e.id).zip(variations));
        let point = self.curve.push(self.clock, error);
        self.phase = Phase::Idle;
        self.push_event(
            EventKind::FeedbackApplied,
            &pending,
            Some(EventPayload {
                feedback: Some(fb),
                variations: Some(n_vars),
                error: Some(error),
            }),
        );
        Ok(TeachStepResult {
            example_id: pending,
            variations: n_vars,
            error,
            point,
            curve_len: self.curve.len(),
            warnings,
        })
    }

    pub fn report(&self) -> SessionReport {
        let accepted = self.curve.len();
        SessionReport {
            offered: self.log.iter().filter(|e| e.kind == EventKind::Offered).count(),
            accepted,
            skipped: self.skipped,
            skip_ratio: (accepted > 0).then(|| self.skipped as f64 / accepted as f64),
            total_sim_seconds: self.clock,
            variations: self.variations.len(),
            final_error: self.curve.last().map(|p| p.error),
            final_running_avg: self.curve.last().map(|p| p.running_avg),
            pool_remaining: self.pool.len(),
        }
    }

    /// Re-applies one logged event.
    pub fn apply_event(&mut self, ev: &InteractionEvent) -> Result<()> {
        match ev.kind {
            EventKind::Offered => {
                let view = self.next_candidate()?;
                if view.example_id != ev.example_id {
                    return Err(conflict(
                        "offered",
                        format!("replay diverged: offered `{}` but the log has `{}`", view.example_id, ev.example_id),
                    ));
                }
            }
            EventKind::Skipped => self.decide(&ev.example_id, Action::Skip)?,
            EventKind::Accepted => self.decide(&ev.example_id, Action::Accept)?,
            EventKind::FeedbackApplied => {
                let fb = ev
                    .payload
                    .as_ref()
                    .and_then(|p| p.feedback.clone())
                    .ok_or_else(|| Error::InvalidFeedback("feedback_applied event without feedback".into()))?;
                self.submit_feedback(fb)?;
            }
        }
        Ok(())
    }

    pub fn replay(id: impl Into<String>, init: SessionInit, events: &[InteractionEvent]) -> Result<Session> {
        let mut s = Session::new(id, init)?;
        for ev in events {
            s.apply_event(ev)?;
        }
        Ok(s)
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        jsonl::write(path, &self.log)
    }

    pub fn read_log(path: &Path) -> Result<Vec<InteractionEvent>> {
        jsonl::read(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_seeds_differ() {
        let a: BTreeSet<u64> = (0..100).map(|i| step_seed(7, i)).collect();
        assert_eq!(a.len(), 100);
        assert_eq!(step_seed(7, 3), step_seed(7, 3));
    }

    #[test]
    fn time_presets() {
        assert_eq!(TimeModel::t1().feedback_extra(), 70.0);
        assert_eq!(TimeModel::t2().feedback_extra(), 30.0);
        assert!(TimeModel {
            skip_seconds: 0.0,
            ..TimeModel::t1()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn curve_running_average() {
        let mut c = ErrorCurve::default();
        c.push(10.0, 0.5);
        c.push(20.0, 0.3);
        let p = c.push(30.0, 0.1);
        assert_eq!(p.n_examples, 3);
        assert!((p.running_avg - 0.3).abs() < 1e-12);
    }
}
