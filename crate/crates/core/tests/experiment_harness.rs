use std::collections::BTreeMap;
use std::sync::Arc;

use mt_core::augment::{generate_variations, Action, GenerateOptions};
use mt_core::corpus::{tokenize, IntentInventory, LabeledExample, Origin, Template};
use mt_core::experiments::{
    compare_curves, comparison_csv, curve_rows, curves_csv_string, curves_from_rows, read_curves_csv, run_strategy,
    session_config, session_init, simulate_teacher, ExperimentConfig, ExperimentSetup, Gold, SimTeacherProfile,
    Strategy, DEFAULT_BOOTSTRAP_FRACTION,
};
use mt_core::knowledge::{CorpusMaskedLm, KnowledgeBase, LexiconRecord, SynonymLexicon, ValidatedStore};
use mt_core::learner::Hyperparams;
use mt_core::pack::{GoldRecord, GoldSynonyms, Pack};
use mt_core::session::{EventKind, MachineStateView, Prediction, Session};
use mt_core::Error;

fn setup(seed: u64) -> ExperimentSetup {
    ExperimentSetup::from_pack(&Pack::builtin(), seed, DEFAULT_BOOTSTRAP_FRACTION, &Hyperparams::bootstrap()).unwrap()
}

fn cfg(budget: usize) -> ExperimentConfig {
    ExperimentConfig {
        budget,
        ..Default::default()
    }
}

fn offered(log: &[mt_core::session::InteractionEvent]) -> Vec<String> {
    log.iter()
        .filter(|e| e.kind == EventKind::Offered)
        .map(|e| e.example_id.clone())
        .collect()
}

#[test]
fn budget_one_gives_one_point() {
    let s = setup(0);
    for st in Strategy::ALL {
        let run = run_strategy(st, &s, &cfg(1)).unwrap();
        assert_eq!(run.curve.len(), 1, "{st}");
        assert!(!run.truncated);
    }
    assert!(matches!(run_strategy(Strategy::Rl, &s, &cfg(0)), Err(Error::InvalidHyperparams(_))));
}

#[test]
fn random_order_depends_on_seed_and_confusion_order_does_not() {
    let s = setup(0);
    let rl = |seed: u64| {
        let mut init = session_init(Strategy::Rl, &s, &cfg(5));
        init.config = session_config(Strategy::Rl, &cfg(5), seed);
        let mut session = Session::new("rl", init).unwrap();
        (0..5)
            .map(|_| {
                let v = session.next_candidate().unwrap();
                session.decide(&v.example_id, Action::Skip).unwrap();
                v.example_id
            })
            .collect::<Vec<_>>()
    };
    assert_ne!(rl(1), rl(2));

    let al_first = |seed: u64| {
        let mut init = session_init(Strategy::Al, &s, &cfg(5));
        init.config = session_config(Strategy::Al, &cfg(5), seed);
        Session::new("al", init).unwrap().next_candidate().unwrap().example_id
    };
    assert_eq!(al_first(1), al_first(99));
}

#[test]
fn variation_counts_per_strategy() {
    let s = setup(1);
    let c = cfg(25);
    for st in [Strategy::Rl, Strategy::Al, Strategy::Alhc] {
        let run = run_strategy(st, &s, &c).unwrap();
        assert!(run.variations.iter().all(|v| *v == 0), "{st}");
        assert_eq!(run.variations.len(), run.curve.len());
    }

    // feedback strategies: logged counts equal what the augment module
    // predicts for the logged feedback
    let run = run_strategy(Strategy::FullMt, &s, &c).unwrap();
    assert!(run.variations.iter().sum::<usize>() > 0);
    let kb = KnowledgeBase::new(Arc::clone(&s.lexicon), ValidatedStore::in_memory(), Arc::clone(&s.masked_lm));
    let pool: BTreeMap<&str, &LabeledExample> = s.split.novel_pool.iter().map(|e| (e.id.as_str(), e)).collect();
    let applied: Vec<_> = run.log.iter().filter(|e| e.kind == EventKind::FeedbackApplied).collect();
    assert_eq!(applied.len(), run.curve.len());
    for (ev, n) in applied.iter().zip(&run.variations) {
        let payload = ev.payload.as_ref().unwrap();
        let fb = payload.feedback.as_ref().unwrap();
        let src = pool[ev.example_id.as_str()];
        let predicted = generate_variations(src, fb, &kb, &GenerateOptions::default()).unwrap().len();
        assert_eq!(predicted, *n);
        assert_eq!(payload.variations, Some(*n));
    }

    let eda = run_strategy(Strategy::MtEda, &s, &c).unwrap();
    let eda_applied: Vec<_> = eda.log.iter().filter(|e| e.kind == EventKind::FeedbackApplied).collect();
    for (ev, n) in eda_applied.iter().zip(&eda.variations) {
        let fb = ev.payload.as_ref().unwrap().feedback.as_ref().unwrap();
        let src = pool[ev.example_id.as_str()];
        let matched = generate_variations(src, fb, &kb, &GenerateOptions::default()).unwrap().len();
        assert!(*n <= matched);
    }
}

#[test]
fn alhc_filters_the_al_offer_stream() {
    let s = setup(2);
    let al = run_strategy(Strategy::Al, &s, &cfg(1)).unwrap();
    let alhc = run_strategy(Strategy::Alhc, &s, &cfg(1)).unwrap();
    // identical model before the first acceptance, so ALHC's offers start
    // with AL's first offer and only skips are added
    assert_eq!(offered(&alhc.log)[0], offered(&al.log)[0]);
    assert!(alhc.log.iter().filter(|e| e.kind == EventKind::Skipped).count() <= SimTeacherProfile::default().max_skip_streak);
}

#[test]
fn oversized_budget_truncates() {
    let mut s = setup(0);
    s.split.novel_pool.truncate(6);
    let run = run_strategy(Strategy::FullMt, &s, &cfg(50)).unwrap();
    assert!(run.truncated);
    assert_eq!(run.curve.len(), 6);
}

fn view(example_id: &str, top: &str, confusion: f64) -> MachineStateView {
    let inv = IntentInventory::new(["submission", "officehours"]).unwrap();
    MachineStateView {
        example_id: example_id.into(),
        text: String::new(),
        tokens: Vec::new(),
        top_k: vec![Prediction {
            intent: inv.by_name(top).unwrap().clone(),
            confidence: 0.9,
        }],
        confusion,
        importance: Vec::new(),
        recommendations: Vec::new(),
    }
}

#[test]
fn simulated_teacher_rules() {
    let inv = IntentInventory::new(["submission", "officehours"]).unwrap();
    let submission = inv.by_name("submission").unwrap().clone();
    let template = Template::new("t000", submission.clone(), "how do i submit the {x}", &["submit"], {
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), vec!["homework".to_string()]);
        m
    })
    .unwrap();
    let gold = GoldSynonyms::from_records(&[GoldRecord {
        word: "submit".into(),
        synonyms: vec!["turn in".into(), "hand in".into(), "email".into()],
    }]);
    let stoplist = ["how", "do", "i", "the"].iter().map(|s| s.to_string()).collect();
    let lexicon = SynonymLexicon::from_records(&[LexiconRecord {
        word: "submit".into(),
        synonyms: vec!["turn in".into(), "hand in".into(), "yield".into()],
        forms: vec![],
    }]);
    let kb = KnowledgeBase::new(Arc::new(lexicon), ValidatedStore::in_memory(), Arc::new(CorpusMaskedLm::default()));
    let ex = LabeledExample {
        id: "t000:0".into(),
        sentence: tokenize("how do i submit the homework").unwrap(),
        label: submission.clone(),
        origin: Origin::Template,
    };
    let g = Gold {
        template: &template,
        synonyms: &gold,
        stoplist: &stoplist,
    };
    let profile = SimTeacherProfile::default();

    let skip = simulate_teacher(&ex, Some(g), &profile, &kb, &view(&ex.id, "submission", 0.1)).unwrap();
    assert_eq!(skip.action, Action::Skip);
    assert!(!skip.has_annotation());

    let wrong = simulate_teacher(&ex, Some(g), &profile, &kb, &view(&ex.id, "officehours", 0.1)).unwrap();
    assert_eq!(wrong.action, Action::Accept);
    assert_eq!(wrong.label, submission);
    assert_eq!(wrong.important.iter().copied().collect::<Vec<_>>(), [3]);
    assert_eq!(wrong.inconsequential.iter().copied().collect::<Vec<_>>(), [0, 1, 2, 4]);
    assert_eq!(wrong.validated[&3], ["turn in", "hand in"]);

    let confused = simulate_teacher(&ex, Some(g), &profile, &kb, &view(&ex.id, "submission", 0.9)).unwrap();
    assert_eq!(confused, wrong);

    let manual = LabeledExample {
        id: "m001".into(),
        origin: Origin::Manual,
        ..ex.clone()
    };
    assert!(matches!(
        simulate_teacher(&manual, None, &profile, &kb, &view("m001", "submission", 0.9)),
        Err(Error::MissingGold(_))
    ));
}

#[test]
fn csv_and_comparison_roundtrip() {
    let s = setup(4);
    let a = run_strategy(Strategy::Al, &s, &cfg(12)).unwrap();
    let b = run_strategy(Strategy::Rl, &s, &cfg(12)).unwrap();
    let mut rows = curve_rows(&a);
    rows.extend(curve_rows(&b));
    let text = curves_csv_string(&rows).unwrap();
    assert_eq!(text.lines().next().unwrap(), "strategy,seed,n_examples,sim_seconds,error,running_avg");
    assert_eq!(text.lines().count(), 25);
    let back = read_curves_csv(text.as_bytes()).unwrap();
    assert_eq!(back, rows);

    let curves = curves_from_rows(&back);
    assert_eq!(curves[&("AL".to_string(), 4)], a.curve);
    let table = compare_curves(&[("AL".into(), a.curve.clone()), ("RL".into(), b.curve.clone())]).unwrap();

    // spreadsheet-style recomputation straight from the CSV rows
    let col = |name: &str| -> Vec<(f64, f64)> {
        back.iter()
            .filter(|r| r.strategy == name)
            .map(|r| (r.n_examples as f64, r.running_avg))
            .collect()
    };
    let trap = |pts: &[(f64, f64)]| -> f64 { pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum() };
    let (al, rl) = (col("AL"), col("RL"));
    let al_final = al.last().unwrap().1;
    let rl_final = rl.last().unwrap().1;
    let d = table.deltas.iter().find(|d| d.a == "AL" && d.b == "RL").unwrap();
    assert!((d.final_delta.unwrap() - (rl_final - al_final) / rl_final).abs() < 1e-12);
    assert!((table.summaries[0].auc_examples.unwrap() - trap(&al)).abs() < 1e-12);
    assert!((table.summaries[1].auc_examples.unwrap() - trap(&rl)).abs() < 1e-12);
    let csv = comparison_csv(&table).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 + 2);
    assert!(compare_curves(&[("AL".into(), a.curve)]).is_err());
}
