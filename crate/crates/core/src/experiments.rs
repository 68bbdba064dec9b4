//! Simulated-teacher experiments: baselines, ablations, curve export and
//! comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{Action, FeedbackRecord, GenerateOptions, VariationSource};
use crate::corpus::{split_dataset, DatasetSplit, LabeledExample, Template};
use crate::error::{Error, Result};
use crate::knowledge::{CorpusMaskedLm, KnowledgeBase, MaskedLm, SynonymLexicon, ValidatedStore};
use crate::learner::{Hyperparams, LinearModel};
use crate::pack::{GoldSynonyms, Pack, TEST_PER_INTENT};
use crate::session::{
    Augmentation, ErrorCurve, InteractionEvent, MachineStateView, SelectionOrder, Session, SessionConfig, SessionInit,
    TimeModel,
};

pub const DEFAULT_BOOTSTRAP_FRACTION: f64 = 0.2;
pub const DEFAULT_BUDGET: usize = 150;
/// Masked-LM depth for the lexicon intersection used instead of validated
/// phrases.
pub const NV_LM_K: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "RL")]
    Rl,
    #[serde(rename = "AL")]
    Al,
    #[serde(rename = "ALHC")]
    Alhc,
    #[serde(rename = "MT_NI")]
    MtNi,
    #[serde(rename = "MT_NV")]
    MtNv,
    #[serde(rename = "FULL_MT")]
    FullMt,
    #[serde(rename = "MT_EDA")]
    MtEda,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Rl,
        Strategy::Al,
        Strategy::Alhc,
        Strategy::MtNi,
        Strategy::MtNv,
        Strategy::FullMt,
        Strategy::MtEda,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Rl => "RL",
            Strategy::Al => "AL",
            Strategy::Alhc => "ALHC",
            Strategy::MtNi => "MT_NI",
            Strategy::MtNv => "MT_NV",
            Strategy::FullMt => "FULL_MT",
            Strategy::MtEda => "MT_EDA",
        }
    }

    /// Whether the simulated teacher may skip offered examples.
    pub fn filters(&self) -> bool {
        !matches!(self, Strategy::Rl | Strategy::Al)
    }

    pub fn label_only(&self) -> bool {
        matches!(self, Strategy::Rl | Strategy::Al | Strategy::Alhc)
    }

    pub fn order(&self) -> SelectionOrder {
        match self {
            Strategy::Rl => SelectionOrder::Random,
            _ => SelectionOrder::Confusion,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown strategy `{s}` (expected one of RL, AL, ALHC, MT_NI, MT_NV, FULL_MT, MT_EDA)"))
    }
}

pub fn parse_strategies(list: &str) -> std::result::Result<Vec<Strategy>, String> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTeacherProfile {
    /// Accept a correctly predicted example only when its confusion exceeds
    /// this.
    pub accept_confusion: f64,
    /// After this many skips in a row the teacher accepts the next offer.
    pub max_skip_streak: usize,
    pub time: TimeModel,
}

impl Default for SimTeacherProfile {
    fn default() -> Self {
        SimTeacherProfile {
            accept_confusion: 0.3,
            max_skip_streak: 25,
            time: TimeModel::t1(),
        }
    }
}

impl SimTeacherProfile {
    pub fn accepts(&self, view: &MachineStateView, gold_label: &str) -> bool {
        let top1 = view.top_k.first().map(|p| p.intent.name.as_str());
        top1 != Some(gold_label) || view.confusion > self.accept_confusion
    }
}

/// What the simulated teacher knows about the example's origin.
#[derive(Clone, Copy, Debug)]
pub struct Gold<'a> {
    pub template: &'a Template,
    pub synonyms: &'a GoldSynonyms,
    pub stoplist: &'a BTreeSet<String>,
}

/// The teacher's decision and annotations for an offered example. Without
/// gold the result is `MissingGold`; callers fall back to a label-only record.
pub fn simulate_teacher(
    example: &LabeledExample,
    gold: Option<Gold<'_>>,
    profile: &SimTeacherProfile,
    kb: &KnowledgeBase,
    view: &MachineStateView,
) -> Result<FeedbackRecord> {
    let Some(gold) = gold else {
        return Err(Error::MissingGold(example.id.clone()));
    };
    let label = gold.template.intent.clone();
    if !profile.accepts(view, &label.name) {
        let mut fb = FeedbackRecord::label_only(example.id.clone(), label);
        fb.action = Action::Skip;
        return Ok(fb);
    }
    let mut fb = FeedbackRecord::label_only(example.id.clone(), label);
    let keywords: BTreeSet<&str> = gold.template.keywords.iter().map(|t| t.as_str()).collect();
    for (i, tok) in example.sentence.tokens.iter().enumerate() {
        let w = tok.as_str();
        if keywords.contains(w) {
            fb.important.insert(i);
            let approved = gold.synonyms.get(w);
            let accepted: Vec<String> = kb
                .recommend(w, &example.sentence, i)?
                .into_iter()
                .map(|r| r.phrase)
                .filter(|p| approved.contains(p))
                .collect();
            if !accepted.is_empty() {
                fb.validated.insert(i, accepted);
            }
        } else if gold.stoplist.contains(w) {
            fb.inconsequential.insert(i);
        }
    }
    Ok(fb)
}

/// Shapes the teacher's full feedback to what a strategy is allowed to use.
fn restrict(strategy: Strategy, mut fb: FeedbackRecord, example: &LabeledExample, kb: &KnowledgeBase) -> Result<FeedbackRecord> {
    match strategy {
        Strategy::Rl | Strategy::Al | Strategy::Alhc => {
            fb.important.clear();
            fb.inconsequential.clear();
            fb.validated.clear();
        }
        Strategy::MtNi => {
            fb.important.clear();
            fb.validated.clear();
        }
        Strategy::MtNv => {
            fb.validated.clear();
            for &i in &fb.important {
                let phrases = kb.lexicon_lm_intersection(&example.sentence, i, NV_LM_K)?;
                if !phrases.is_empty() {
                    fb.validated.insert(i, phrases);
                }
            }
        }
        Strategy::FullMt | Strategy::MtEda => {}
    }
    Ok(fb)
}

/// Everything a strategy run needs for one seed.
#[derive(Debug)]
pub struct ExperimentSetup {
    pub seed: u64,
    pub split: DatasetSplit,
    pub model: LinearModel,
    pub templates: BTreeMap<String, Template>,
    pub gold: GoldSynonyms,
    pub stoplist: BTreeSet<String>,
    pub lexicon: Arc<SynonymLexicon>,
    pub masked_lm: Arc<dyn MaskedLm>,
}

impl ExperimentSetup {
    /// Splits the pack by `seed`, trains the bootstrap model with the same
    /// seed and attaches the fixed test set. The masked LM is the corpus
    /// fallback over the bootstrap sentences.
    pub fn from_pack(pack: &Pack, seed: u64, bootstrap_fraction: f64, bootstrap_hp: &Hyperparams) -> Result<Self> {
        let mut split = split_dataset(&pack.templates, &pack.inventory, bootstrap_fraction, seed)?;
        split.test = pack.test_set(TEST_PER_INTENT)?;
        let model = LinearModel::train(&split.bootstrap, &pack.inventory, bootstrap_hp, seed)?;
        let masked_lm: Arc<dyn MaskedLm> = Arc::new(CorpusMaskedLm::new(split.bootstrap.iter().map(|e| &e.sentence)));
        Ok(ExperimentSetup {
            seed,
            split,
            model,
            templates: pack.templates.iter().map(|t| (t.id.clone(), t.clone())).collect(),
            gold: pack.gold.clone(),
            stoplist: pack.stoplist.clone(),
            lexicon: Arc::new(pack.lexicon.clone()),
            masked_lm,
        })
    }

    fn gold_for(&self, example: &LabeledExample) -> Option<Gold<'_>> {
        let template = self.templates.get(example.template_id()?)?;
        Some(Gold {
            template,
            synonyms: &self.gold,
            stoplist: &self.stoplist,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub online_hp: Hyperparams,
    pub profile: SimTeacherProfile,
    pub budget: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            online_hp: Hyperparams::online(),
            profile: SimTeacherProfile::default(),
            budget: DEFAULT_BUDGET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub seed: u64,
    pub curve: ErrorCurve,
    pub log: Vec<InteractionEvent>,
    /// Variations added at each accepted step.
    pub variations: Vec<usize>,
    pub truncated: bool,
    pub final_model: LinearModel,
}

pub fn session_config(strategy: Strategy, cfg: &ExperimentConfig, seed: u64) -> SessionConfig {
    SessionConfig {
        time: cfg.profile.time,
        online_hp: cfg.online_hp.clone(),
        order: strategy.order(),
        augmentation: if strategy == Strategy::MtEda {
            Augmentation::EdaMatched
        } else {
            Augmentation::Feedback
        },
        generate: GenerateOptions {
            important_source: if strategy == Strategy::MtNv {
                VariationSource::LexiconLm
            } else {
                VariationSource::Validated
            },
            ..GenerateOptions::default()
        },
        seed,
        ..SessionConfig::default()
    }
}

/// Fresh session inputs for a strategy run: the bootstrap model, the novel
/// pool, the test set and an empty in-memory knowledge base.
pub fn session_init(strategy: Strategy, setup: &ExperimentSetup, cfg: &ExperimentConfig) -> SessionInit {
    let kb = Arc::new(KnowledgeBase::new(
        Arc::clone(&setup.lexicon),
        ValidatedStore::in_memory(),
        Arc::clone(&setup.masked_lm),
    ));
    SessionInit {
        model: setup.model.clone(),
        replay_seed_set: setup.split.bootstrap.clone(),
        pool: setup.split.novel_pool.clone(),
        test: setup.split.test.clone(),
        kb,
        config: session_config(strategy, cfg, setup.seed),
    }
}

/// Runs one strategy until `budget` examples are accepted or the pool runs
/// out. A budget above the pool size is truncated with a warning.
pub fn run_strategy(strategy: Strategy, setup: &ExperimentSetup, cfg: &ExperimentConfig) -> Result<StrategyRun> {
    if cfg.budget == 0 {
        return Err(Error::InvalidHyperparams("budget must be at least 1".into()));
    }
    let init = session_init(strategy, setup, cfg);
    let kb = Arc::clone(&init.kb);
    let mut session = Session::new(format!("{strategy}-{}", setup.seed), init)?;
    let pool_size = session.pool().len();
    let truncated = cfg.budget > pool_size;
    if truncated {
        log::warn!("{strategy}: budget {} exceeds the pool of {pool_size}; truncating", cfg.budget);
    }
    let target = cfg.budget.min(pool_size);
    let mut variations = Vec::with_capacity(target);
    let mut consecutive_skips = 0usize;

    while session.curve().len() < target {
        let view = match session.next_candidate() {
            Ok(v) => v,
            Err(Error::PoolExhausted) => break,
            Err(e) => return Err(e),
        };
        let example = session
            .pool_example(&view.example_id)
            .expect("offered example is in the pool")
            .clone();
        let full = match simulate_teacher(&example, setup.gold_for(&example), &cfg.profile, &kb, &view) {
            Ok(fb) => fb,
            Err(Error::MissingGold(_)) => FeedbackRecord::label_only(example.id.clone(), example.label.clone()),
            Err(e) => return Err(e),
        };
        let patience = cfg.profile.max_skip_streak.min(session.pool().len());
        let may_skip = strategy.filters() && consecutive_skips < patience;
        if full.action == Action::Skip && may_skip {
            session.decide(&example.id, Action::Skip)?;
            consecutive_skips += 1;
            continue;
        }
        consecutive_skips = 0;
        let mut fb = full;
        fb.action = Action::Accept;
        let fb = restrict(strategy, fb, &example, &kb)?;
        session.decide(&example.id, Action::Accept)?;
        let step = session.submit_feedback(fb)?;
        variations.push(step.variations);
    }

    Ok(StrategyRun {
        strategy,
        seed: setup.seed,
        curve: session.curve().clone(),
        log: session.log().to_vec(),
        variations,
        truncated,
        final_model: session.model().clone(),
    })
}

/// Every (strategy, seed) pair, run in parallel. Results are ordered by seed
/// then strategy as given.
pub fn run_grid(
    pack: &Pack,
    strategies: &[Strategy],
    seeds: &[u64],
    bootstrap_fraction: f64,
    bootstrap_hp: &Hyperparams,
    cfg: &ExperimentConfig,
) -> Result<Vec<StrategyRun>> {
    let setups: Vec<ExperimentSetup> = seeds
        .par_iter()
        .map(|&s| ExperimentSetup::from_pack(pack, s, bootstrap_fraction, bootstrap_hp))
        .collect::<Result<_>>()?;
    let jobs: Vec<(&ExperimentSetup, Strategy)> = setups
        .iter()
        .flat_map(|s| strategies.iter().map(move |&st| (s, st)))
        .collect();
    jobs.into_par_iter()
        .map(|(setup, st)| run_strategy(st, setup, cfg))
        .collect()
}

/// Risk plus `eta` times cost.
pub fn teaching_objective(risk: f64, cost: f64, eta: f64) -> f64 {
    risk + eta * cost
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub strategy: String,
    pub seed: u64,
    pub n_examples: usize,
    pub sim_seconds: f64,
    pub error: f64,
    pub running_avg: f64,
}

pub fn curve_rows(run: &StrategyRun) -> Vec<CurveRow> {
    run.curve
        .points
        .iter()
        .map(|p| CurveRow {
            strategy: run.strategy.name().to_string(),
            seed: run.seed,
            n_examples: p.n_examples,
            sim_seconds: p.sim_seconds,
            error: p.error,
            running_avg: p.running_avg,
        })
        .collect()
}

pub fn write_curves_csv<W: Write>(out: W, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["strategy", "seed", "n_examples", "sim_seconds", "error", "running_avg"])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn curves_csv_string(rows: &[CurveRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_curves_csv(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn read_curves_csv<R: Read>(input: R) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Groups rows into curves keyed by (strategy, seed).
pub fn curves_from_rows(rows: &[CurveRow]) -> BTreeMap<(String, u64), ErrorCurve> {
    let mut map: BTreeMap<(String, u64), ErrorCurve> = BTreeMap::new();
    for r in rows {
        map.entry((r.strategy.clone(), r.seed))
            .or_default()
            .points
            .push(crate::session::CurvePoint {
                n_examples: r.n_examples,
                sim_seconds: r.sim_seconds,
                error: r.error,
                running_avg: r.running_avg,
            });
    }
    map
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Pointwise median over seeds, up to the shortest curve.
pub fn median_curve(curves: &[&ErrorCurve]) -> ErrorCurve {
    let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    let points = (0..len)
        .map(|i| {
            let field = |f: fn(&crate::session::CurvePoint) -> f64| {
                let mut v: Vec<f64> = curves.iter().map(|c| f(&c.points[i])).collect();
                median(&mut v).expect("non-empty")
            };
            crate::session::CurvePoint {
                n_examples: curves[0].points[i].n_examples,
                sim_seconds: field(|p| p.sim_seconds),
                error: field(|p| p.error),
                running_avg: field(|p| p.running_avg),
            }
        })
        .collect();
    ErrorCurve { points }
}

/// Median of the final running-average error across seeds, per strategy.
pub fn median_final(runs: &[StrategyRun]) -> BTreeMap<Strategy, f64> {
    let mut by: BTreeMap<Strategy, Vec<f64>> = BTreeMap::new();
    for r in runs {
        if let Some(p) = r.curve.last() {
            by.entry(r.strategy).or_default().push(p.running_avg);
        }
    }
    by.into_iter()
        .filter_map(|(s, mut v)| median(&mut v).map(|m| (s, m)))
        .collect()
}

/// (b - a) / b: how much lower `a` is than `b`, relative to `b`.
pub fn relative_delta(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| (b - a) / b)
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|v| *v < x);
    if i == 0 {
        return ys[0];
    }
    if i >= xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    if x1 == x0 {
        y1
    } else {
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Trapezoid area under (xs, ys) restricted to [lo, hi], with linear
/// interpolation at the bounds.
pub fn trapezoid_auc(xs: &[f64], ys: &[f64], lo: f64, hi: f64) -> f64 {
    if xs.is_empty() || hi <= lo {
        return 0.0;
    }
    let mut pts = vec![(lo, interpolate(xs, ys, lo))];
    pts.extend(xs.iter().zip(ys).filter(|(x, _)| **x > lo && **x < hi).map(|(x, y)| (*x, *y)));
    pts.push((hi, interpolate(xs, ys, hi)));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub name: String,
    pub points: usize,
    pub final_error: f64,
    pub final_running_avg: f64,
    /// Area under the running-average curve against examples, over the range
    /// shared by all curves.
    pub auc_examples: Option<f64>,
    /// Same against simulated seconds.
    pub auc_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDelta {
    pub a: String,
    pub b: String,
    pub final_delta: Option<f64>,
    pub auc_examples_delta: Option<f64>,
    pub auc_seconds_delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub summaries: Vec<CurveSummary>,
    pub deltas: Vec<PairDelta>,
    pub examples_range: Option<(f64, f64)>,
    pub seconds_range: Option<(f64, f64)>,
    pub notes: Vec<String>,
}

fn shared_range(curves: &[(String, ErrorCurve)], x: fn(&crate::session::CurvePoint) -> f64) -> Option<(f64, f64)> {
    let lo = curves.iter().map(|(_, c)| x(&c.points[0])).fold(f64::NEG_INFINITY, f64::max);
    let hi = curves
        .iter()
        .map(|(_, c)| x(c.points.last().expect("non-empty")))
        .fold(f64::INFINITY, f64::min);
    (hi > lo).then_some((lo, hi))
}

/// Final and area-under-curve summaries for each named curve, plus relative
/// deltas for every ordered pair.
pub fn compare_curves(curves: &[(String, ErrorCurve)]) -> Result<ComparisonTable> {
    if curves.len() < 2 {
        return Err(Error::Empty {
            what: "comparison (need at least two curves)",
        });
    }
    if let Some((name, _)) = curves.iter().find(|(_, c)| c.is_empty()) {
        return Err(Error::InvalidFeedback(format!("curve `{name}` has no points")));
    }
    let mut notes = Vec::new();
    let examples_range = shared_range(curves, |p| p.n_examples as f64);
    let seconds_range = shared_range(curves, |p| p.sim_seconds);
    if examples_range.is_none() {
        notes.push("curves share no range of example counts; example AUC omitted".to_string());
    }
    if seconds_range.is_none() {
        notes.push("curves share no range of simulated time; time AUC omitted".to_string());
    }
    let auc = |c: &ErrorCurve, range: Option<(f64, f64)>, x: fn(&crate::session::CurvePoint) -> f64| {
        range.map(|(lo, hi)| {
            let xs: Vec<f64> = c.points.iter().map(x).collect();
            let ys: Vec<f64> = c.points.iter().map(|p| p.running_avg).collect();
            trapezoid_auc(&xs, &ys, lo, hi)
        })
    };
    let summaries: Vec<CurveSummary> = curves
        .iter()
        .map(|(name, c)| {
            let last = c.last().expect("non-empty");
            CurveSummary {
                name: name.clone(),
                points: c.len(),
                final_error: last.error,
                final_running_avg: last.running_avg,
                auc_examples: auc(c, examples_range, |p| p.n_examples as f64),
                auc_seconds: auc(c, seconds_range, |p| p.sim_seconds),
            }
        })
        .collect();
    let mut deltas = Vec::new();
    for a in &summaries {
        for b in &summaries {
            if a.name == b.name {
                continue;
            }
            let d = |x: Option<f64>, y: Option<f64>| x.zip(y).and_then(|(x, y)| relative_delta(x, y));
            deltas.push(PairDelta {
                a: a.name.clone(),
                b: b.name.clone(),
                final_delta: relative_delta(a.final_running_avg, b.final_running_avg),
                auc_examples_delta: d(a.auc_examples, b.auc_examples),
                auc_seconds_delta: d(a.auc_seconds, b.auc_seconds),
            });
        }
    }
    Ok(ComparisonTable {
        summaries,
        deltas,
        examples_range,
        seconds_range,
        notes,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Flat CSV of a comparison: one `summary` row per curve and one `delta` row
/// per ordered pair.
pub fn comparison_csv(table: &ComparisonTable) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record([
        "kind",
        "a",
        "b",
        "points",
        "final_error",
        "final_running_avg",
        "auc_examples",
        "auc_seconds",
    ])?;
    for s in &table.summaries {
        w.write_record([
            "summary".to_string(),
            s.name.clone(),
            String::new(),
            s.points.to_string(),
            s.final_error.to_string(),
            s.final_running_avg.to_string(),
            opt(s.auc_examples),
            opt(s.auc_seconds),
        ])?;
    }
    for d in &table.deltas {
        w.write_record([
            "delta".to_string(),
            d.a.clone(),
            d.b.clone(),
            String::new(),
            String::new(),
            opt(d.final_delta),
            opt(d.auc_examples_delta),
            opt(d.auc_seconds_delta),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::CurvePoint;

    fn curve(points: &[(usize, f64, f64)]) -> ErrorCurve {
        let mut c = ErrorCurve::default();
        for &(_, s, e) in points {
            c.push(s, e);
        }
        c
    }

    #[test]
    fn objective_examples() {
        assert!((teaching_objective(0.1, 205.0, 0.001) - 0.305).abs() < 1e-12);
        assert_eq!(teaching_objective(0.27, 1e6, 0.0), 0.27);
    }

    #[test]
    fn relative_delta_example() {
        assert!((relative_delta(0.08, 0.10).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(relative_delta(0.1, 0.0), None);
    }

    #[test]
    fn strategy_names_roundtrip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert_eq!(
            parse_strategies("RL,AL,FULL_MT").unwrap(),
            vec![Strategy::Rl, Strategy::Al, Strategy::FullMt]
        );
        assert!("XX".parse::<Strategy>().is_err());
    }

    #[test]
    fn identical_curves_have_zero_deltas() {
        let c = curve(&[(1, 10.0, 0.5), (2, 20.0, 0.4), (3, 30.0, 0.3)]);
        let t = compare_curves(&[("a".into(), c.clone()), ("b".into(), c)]).unwrap();
        for d in &t.deltas {
            assert_eq!(d.final_delta, Some(0.0));
            assert_eq!(d.auc_examples_delta, Some(0.0));
            assert_eq!(d.auc_seconds_delta, Some(0.0));
        }
    }

    #[test]
    fn auc_over_shared_range() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [1.0, 1.0, 3.0, 3.0];
        assert!((trapezoid_auc(&xs, &ys, 1.0, 4.0) - 6.0).abs() < 1e-12);
        assert!((trapezoid_auc(&xs, &ys, 2.5, 3.5) - 2.75).abs() < 1e-12);
    }

    #[test]
    fn disjoint_time_ranges_are_noted() {
        let a = ErrorCurve {
            points: vec![
                CurvePoint { n_examples: 1, sim_seconds: 1.0, error: 0.5, running_avg: 0.5 },
                CurvePoint { n_examples: 2, sim_seconds: 2.0, error: 0.5, running_avg: 0.5 },
            ],
        };
        let b = ErrorCurve {
            points: vec![
                CurvePoint { n_examples: 1, sim_seconds: 5.0, error: 0.5, running_avg: 0.5 },
                CurvePoint { n_examples: 2, sim_seconds: 6.0, error: 0.5, running_avg: 0.5 },
            ],
        };
        let t = compare_curves(&[("a".into(), a), ("b".into(), b)]).unwrap();
        assert!(t.seconds_range.is_none());
        assert_eq!(t.notes.len(), 1);
        assert!(t.summaries[0].auc_seconds.is_none());
        assert!(t.summaries[0].auc_examples.is_some());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn csv_roundtrip() {
        let rows = vec![CurveRow {
            strategy: "AL".into(),
            seed: 3,
            n_examples: 1,
            sim_seconds: 10.0,
            error: 0.125,
            running_avg: 0.125,
        }];
        let text = curves_csv_string(&rows).unwrap();
        assert!(text.starts_with("strategy,seed,n_examples,sim_seconds,error,running_avg\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_curves_csv(text.as_bytes()).unwrap(), rows);
    }
}
