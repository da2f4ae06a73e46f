use std::sync::Arc;

use prefmem_core::dataset::{fixture, fixture_labels, mock_script, split, stats};
use prefmem_core::evaluation::{render_report, run_experiments, EvalConfig, Experiment, ReportFormat};
use prefmem_core::extraction::extract;
use prefmem_core::gateway::{LlmGateway, MockGateway};
use prefmem_core::maintenance::{ingest, MaintenanceAction, MaintenanceConfig, UtteranceKind};
use prefmem_core::prefstore::PreferenceStore;
use prefmem_core::retrieval::{retrieve, RetrievalQuery, TopK};
use prefmem_core::selftest::golden_mismatches;
use prefmem_core::taxonomy::CategoryTaxonomy;

fn setup() -> (Arc<CategoryTaxonomy>, Vec<prefmem_core::dataset::DataPoint>, MockGateway) {
    let t = Arc::new(CategoryTaxonomy::bundled());
    let points = fixture(&t);
    let gw = MockGateway::new(mock_script(&points, &fixture_labels()));
    (t, points, gw)
}

#[test]
fn full_memory_lifecycle_survives_reopen() {
    let (t, points, gw) = setup();
    let dir = tempfile::tempdir().unwrap();
    let schema = t.compile_schema();
    let cfg = MaintenanceConfig::default();
    {
        let store = PreferenceStore::open(dir.path(), t.clone(), gw.embedding_dimension()).unwrap();
        for p in &points {
            let o = extract(&gw, &p.transcript(), &schema).unwrap();
            for e in ingest(&gw, &store, &p.user_id, &o.candidates, &cfg).unwrap() {
                assert_eq!(e.result.unwrap().decision.action, MaintenanceAction::Append);
            }
        }
        // a different value: MP grows, SP is replaced
        for p in &points {
            let o = extract(&gw, &p.maintenance_transcript(UtteranceKind::Different), &schema).unwrap();
            ingest(&gw, &store, &p.user_id, &o.candidates, &cfg).unwrap();
        }
    }
    let store = PreferenceStore::open(dir.path(), t.clone(), gw.embedding_dimension()).unwrap();
    for p in &points {
        let held = store.by_detail_category(&p.user_id, &p.ground_truth.path());
        let single = t.detail(&p.ground_truth.path()).unwrap().kind == prefmem_core::taxonomy::DetailKind::Single;
        let want = if single { 1 } else { 2 };
        assert_eq!(held.len(), want, "{}", p.id);
        if single {
            assert_ne!(held[0].value, p.ground_truth.value, "{}", p.id);
        }
    }

    let purged = store.opt_out("user_7", &["music".into()]).unwrap();
    assert!(purged >= 2);
    assert_eq!(store.snapshot("user_7").count_by_subcategory("music"), 0);
    assert_eq!(store.opted_out("user_7"), vec!["music".to_string()]);
    let user_schema = store.user_taxonomy("user_7").compile_schema();
    let music = points.iter().find(|p| p.id == "u7-01").unwrap();
    assert!(extract(&gw, &music.transcript(), &user_schema).unwrap().candidates.is_empty());

    let query = RetrievalQuery {
        user_id: "user_12".into(),
        utterance: "Play something funny for the drive.".into(),
        k: TopK::Fixed(2),
    };
    let top = retrieve(&gw, &query, &store.snapshot("user_12"), None).unwrap();
    assert_eq!(top.len(), 2);
    assert!(top[0].score >= top[1].score);

    let export = store.export("user_3");
    let other = PreferenceStore::in_memory(t, gw.embedding_dimension());
    other.import(&export).unwrap();
    assert_eq!(other.snapshot("user_3").len(), store.snapshot("user_3").len());
}

#[test]
fn report_is_reproducible_and_frozen() {
    let (t, points, gw) = setup();
    let a = run_experiments(&gw, &t, &points, &Experiment::ALL, "mock", &EvalConfig::default());
    let b = run_experiments(&gw, &t, &points, &Experiment::ALL, "mock", &EvalConfig::default());
    for format in [ReportFormat::PlainTable, ReportFormat::Json, ReportFormat::ConfusionGrid] {
        assert_eq!(
            render_report(&a, &Experiment::ALL, format).unwrap(),
            render_report(&b, &Experiment::ALL, format).unwrap()
        );
    }
    assert!(golden_mismatches().unwrap().is_empty());
}

#[test]
fn split_halves_keep_the_statistics_shape() {
    let (_, points, _) = setup();
    let (test, rest) = split(&points, (0.5, 0.5), 42).unwrap();
    assert_eq!(test.len() + rest.len(), points.len());
    let s = stats(&test).unwrap();
    assert_eq!(s.maintenance_utterances, 3 * test.len());
    assert!(s.avg_turns_per_conversation >= 1.0);
}
