use std::sync::Arc;

use mt_core::augment::{Action, FeedbackRecord};
use mt_core::corpus::LabeledExample;
use mt_core::experiments::{ExperimentSetup, DEFAULT_BOOTSTRAP_FRACTION};
use mt_core::knowledge::{KnowledgeBase, ValidatedStore};
use mt_core::learner::Hyperparams;
use mt_core::pack::Pack;
use mt_core::selector::{rank_pool, ConfusionConfig};
use mt_core::session::{EventKind, Session, SessionConfig, SessionInit};
use mt_core::Error;

fn setup() -> ExperimentSetup {
    ExperimentSetup::from_pack(&Pack::builtin(), 0, DEFAULT_BOOTSTRAP_FRACTION, &Hyperparams::bootstrap()).unwrap()
}

fn init(setup: &ExperimentSetup, pool: Vec<LabeledExample>) -> SessionInit {
    SessionInit {
        model: setup.model.clone(),
        replay_seed_set: setup.split.bootstrap.clone(),
        pool,
        test: setup.split.test.clone(),
        kb: Arc::new(KnowledgeBase::new(
            Arc::clone(&setup.lexicon),
            ValidatedStore::in_memory(),
            Arc::clone(&setup.masked_lm),
        )),
        config: SessionConfig::default(),
    }
}

fn small_pool(setup: &ExperimentSetup, n: usize) -> Vec<LabeledExample> {
    setup.split.novel_pool.iter().step_by(17).take(n).cloned().collect()
}

fn is_conflict<T: std::fmt::Debug>(r: Result<T, Error>) -> bool {
    matches!(r, Err(Error::Conflict { .. }))
}

#[test]
fn first_offer_is_the_most_confusing_with_full_state() {
    let s = setup();
    let pool = small_pool(&s, 40);
    let expected = rank_pool(&s.model, &pool, &ConfusionConfig::default())[0].example_id.clone();
    let mut session = Session::new("t", init(&s, pool)).unwrap();
    let view = session.next_candidate().unwrap();
    assert_eq!(view.example_id, expected);
    assert_eq!(view.top_k.len(), 5);
    assert_eq!(view.importance.len(), view.tokens.len());
    assert_eq!(view.recommendations.len(), view.tokens.len());
    assert!(view.importance.iter().all(|v| *v >= 0.0 && v.is_finite()));

    let again = session.next_candidate().unwrap();
    assert_eq!(again, view);
    let offers = session.log().iter().filter(|e| e.kind == EventKind::Offered).count();
    assert_eq!(offers, 1);
}

#[test]
fn out_of_order_calls_are_rejected_without_mutation() {
    let s = setup();
    let mut session = Session::new("t", init(&s, small_pool(&s, 10))).unwrap();
    let label = s.model.inventory().labels()[0].clone();

    assert!(is_conflict(session.decide("nope", Action::Accept)));
    assert!(is_conflict(session.submit_feedback(FeedbackRecord::label_only("x", label.clone()))));
    assert!(session.log().is_empty());

    let view = session.next_candidate().unwrap();
    assert!(is_conflict(session.decide("other", Action::Skip)));
    assert!(is_conflict(session.submit_feedback(FeedbackRecord::label_only(view.example_id.clone(), label.clone()))));
    session.decide(&view.example_id, Action::Accept).unwrap();
    assert!(is_conflict(session.decide(&view.example_id, Action::Accept)));
    assert!(is_conflict(session.next_candidate()));
    assert!(is_conflict(session.submit_feedback(FeedbackRecord::label_only("other", label.clone()))));

    // invalid feedback leaves the pending example untouched
    let clock = session.clock();
    let log_len = session.log().len();
    let mut bad = FeedbackRecord::label_only(view.example_id.clone(), label.clone());
    bad.important.insert(0);
    bad.inconsequential.insert(0);
    assert!(matches!(session.submit_feedback(bad), Err(Error::InvalidFeedback(_))));
    assert_eq!(session.clock(), clock);
    assert_eq!(session.log().len(), log_len);
    assert!(session.curve().is_empty());

    let step = session.submit_feedback(FeedbackRecord::label_only(view.example_id.clone(), label)).unwrap();
    assert_eq!(step.variations, 0);
    assert_eq!(session.curve().len(), 1);
    assert!(session.pool_example(&view.example_id).is_none());
    assert!(session.taught().contains(&view.example_id));
}

#[test]
fn time_accounting_follows_the_time_model() {
    let s = setup();
    let mut session = Session::new("t", init(&s, small_pool(&s, 10))).unwrap();
    let v = session.next_candidate().unwrap();
    session.decide(&v.example_id, Action::Skip).unwrap();
    assert_eq!(session.clock(), 1.0);

    let v = session.next_candidate().unwrap();
    session.decide(&v.example_id, Action::Accept).unwrap();
    assert_eq!(session.clock(), 11.0);
    let label = session.pool_example(&v.example_id).unwrap().label.clone();
    session
        .submit_feedback(FeedbackRecord::label_only(v.example_id.clone(), label))
        .unwrap();
    assert_eq!(session.clock(), 11.0);

    let v = session.next_candidate().unwrap();
    session.decide(&v.example_id, Action::Accept).unwrap();
    let ex = session.pool_example(&v.example_id).unwrap().clone();
    let mut fb = FeedbackRecord::label_only(ex.id.clone(), ex.label.clone());
    fb.inconsequential.insert(0);
    session.submit_feedback(fb).unwrap();
    assert_eq!(session.clock(), 11.0 + 10.0 + 70.0);

    let report = session.report();
    assert_eq!(report.accepted, 2);
    assert_eq!(report.skipped, 1);
    assert_eq!(report.skip_ratio, Some(0.5));
    assert_eq!(report.total_sim_seconds, session.clock());
    let sims: Vec<f64> = session.log().iter().map(|e| e.sim_seconds).collect();
    assert!(sims.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn skipped_example_cools_down() {
    let s = setup();
    let mut session = Session::new("t", init(&s, small_pool(&s, 40))).unwrap();
    let first = session.next_candidate().unwrap().example_id;
    session.decide(&first, Action::Skip).unwrap();
    for _ in 0..25 {
        let v = session.next_candidate().unwrap();
        assert_ne!(v.example_id, first);
        session.decide(&v.example_id, Action::Skip).unwrap();
    }
    // the next 25 offers have passed: the most confusing example is back
    let v = session.next_candidate().unwrap();
    assert_eq!(v.example_id, first);
}

#[test]
fn cooldown_is_ignored_when_everything_is_cooling() {
    let s = setup();
    let mut session = Session::new("t", init(&s, small_pool(&s, 2))).unwrap();
    let a = session.next_candidate().unwrap().example_id;
    session.decide(&a, Action::Skip).unwrap();
    let b = session.next_candidate().unwrap().example_id;
    assert_ne!(a, b);
    session.decide(&b, Action::Skip).unwrap();
    let c = session.next_candidate().unwrap().example_id;
    assert!(c == a || c == b);
}

#[test]
fn empty_pool_reports_exhaustion_and_null_ratio() {
    let s = setup();
    let mut session = Session::new("t", init(&s, Vec::new())).unwrap();
    assert!(matches!(session.next_candidate(), Err(Error::PoolExhausted)));
    let r = session.report();
    assert_eq!(r.accepted, 0);
    assert_eq!(r.skip_ratio, None);
    assert!(serde_json::to_string(&r).unwrap().contains("\"skip_ratio\":null"));
}

#[test]
fn feedback_variations_enter_the_training_set() {
    let s = setup();
    let mut session = Session::new("t", init(&s, small_pool(&s, 10))).unwrap();
    let v = session.next_candidate().unwrap();
    session.decide(&v.example_id, Action::Accept).unwrap();
    let ex = session.pool_example(&v.example_id).unwrap().clone();
    let mut fb = FeedbackRecord::label_only(ex.id.clone(), ex.label.clone());
    fb.important.insert(0);
    fb.validated.insert(0, vec!["zorblax".into(), "quux thing".into()]);
    let step = session.submit_feedback(fb).unwrap();
    assert_eq!(step.variations, 2);
    let aug = session.augmented();
    assert_eq!(aug.len(), 2);
    assert!(aug.iter().all(|e| e.label == ex.label && e.id.starts_with(&ex.id)));
    assert_eq!(session.kb().validated(ex.sentence.tokens[0].as_str()), ["zorblax", "quux thing"]);
    assert!(session.model().vocabulary().get("zorblax").is_some());
}

#[test]
fn persisted_log_replays_bit_exactly() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let pool = small_pool(&s, 30);
    let mut session = Session::new("t", init(&s, pool.clone())).unwrap().with_log_file(&path);
    for i in 0..8 {
        let v = session.next_candidate().unwrap();
        if i % 3 == 2 {
            session.decide(&v.example_id, Action::Skip).unwrap();
            continue;
        }
        session.decide(&v.example_id, Action::Accept).unwrap();
        let ex = session.pool_example(&v.example_id).unwrap().clone();
        let mut fb = FeedbackRecord::label_only(ex.id.clone(), ex.label.clone());
        fb.inconsequential.insert(ex.sentence.len() - 1);
        session.submit_feedback(fb).unwrap();
    }
    let events = Session::read_log(&path).unwrap();
    assert_eq!(events, session.log());

    let replayed = Session::replay("r", init(&s, pool), &events).unwrap();
    assert_eq!(
        replayed.model().to_checkpoint_json().unwrap(),
        session.model().to_checkpoint_json().unwrap()
    );
    assert_eq!(replayed.curve(), session.curve());
    assert_eq!(replayed.clock(), session.clock());
}

#[test]
fn replay_detects_divergence() {
    let s = setup();
    let pool = small_pool(&s, 10);
    let mut session = Session::new("t", init(&s, pool.clone())).unwrap();
    let v = session.next_candidate().unwrap();
    let mut events = session.log().to_vec();
    events[0].example_id = format!("{}-x", v.example_id);
    assert!(matches!(
        Session::replay("r", init(&s, pool), &events),
        Err(Error::Conflict { .. })
    ));
}
