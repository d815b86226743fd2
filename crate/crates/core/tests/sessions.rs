mod common;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use aiq_core::adapters::{AdapterConfig, Outcome};
use aiq_core::administration::{
    ParseProblem, RunOptions, SessionStatus, Store, StoreError, Subject, SubjectCategory,
};
use aiq_core::battery::{reference_battery, NonAnswerPolicy, WeightVector};
use aiq_core::scoring::{ability_scores, ScoreMethod, ScoringError};
use common::{exact_battery, key_stub, reference_answer, stepping_store, HttpStub, Reply};

fn store_with_subject() -> (tempfile::TempDir, Store) {
    let dir = tempfile::tempdir().unwrap();
    let store = stepping_store(dir.path());
    store
        .add_subject(Subject::new("bot", "Bot", SubjectCategory::ArtificialSystem))
        .unwrap();
    (dir, store)
}

#[test]
fn start_session_persists_created_session() {
    let (_dir, store) = store_with_subject();
    let stub = HttpStub::echo();
    let s = store
        .start_session(&exact_battery(2), "bot", AdapterConfig::http(stub.endpoint()))
        .unwrap();
    assert_eq!(s.status, SessionStatus::Created);
    assert!(s.responses.is_empty());
    assert_eq!(store.load_session(&s.id).unwrap(), s);
    assert_eq!(store.summaries().unwrap().len(), 1);
}

#[test]
fn start_session_rejects_unknown_subject_and_bad_battery() {
    let (_dir, store) = store_with_subject();
    let cfg = AdapterConfig::manual();
    assert!(matches!(
        store.start_session(&exact_battery(1), "ghost", cfg.clone()),
        Err(StoreError::UnknownSubject(_))
    ));
    let mut bad = exact_battery(1);
    bad.weights = WeightVector::new(0.3, 0.3, 0.3, 0.3);
    assert!(matches!(
        store.start_session(&bad, "bot", cfg.clone()),
        Err(StoreError::InvalidBattery(_))
    ));
    let bad_cfg = AdapterConfig::http("not a url");
    assert!(matches!(
        store.start_session(&exact_battery(1), "bot", bad_cfg),
        Err(StoreError::AdapterConfigInvalid(_))
    ));
}

#[test]
fn correct_answers_earn_full_marks() {
    let (_dir, store) = store_with_subject();
    let stub = key_stub();
    let battery = exact_battery(3);
    let s = store
        .start_session(&battery, "bot", AdapterConfig::http(stub.endpoint()))
        .unwrap();
    let done = store.run_session(&s.id, RunOptions::default()).unwrap();
    assert_eq!(done.status, SessionStatus::Complete);
    let earned: f64 = done.item_scores.values().map(|s| s.points).sum();
    let possible: f64 = battery.items().map(|(_, i)| i.max_points).sum();
    assert_eq!(earned, possible);
    let order: Vec<&str> = battery.items().map(|(_, i)| i.id.as_str()).collect();
    let received: Vec<_> = {
        let mut r: Vec<_> = done.responses.values().collect();
        r.sort_by_key(|r| r.received_at);
        r.into_iter().map(|r| r.item_id.as_str()).collect()
    };
    assert_eq!(received, order);
    let scores = ability_scores(&done, &battery).unwrap();
    assert_eq!(scores.input, 100.0);
    assert_eq!(store.iq_result(&done).unwrap().q.rounded(), 100.0);
}

#[test]
fn human_rubric_items_leave_session_awaiting_grades() {
    let (_dir, store) = store_with_subject();
    let stub = HttpStub::start(|id, _| reference_answer(id));
    let battery = reference_battery();
    let s = store
        .start_session(&battery, "bot", AdapterConfig::http(stub.endpoint()))
        .unwrap();
    let s = store.run_session(&s.id, RunOptions::default()).unwrap();
    assert_eq!(s.status, SessionStatus::AwaitingGrades);
    let pending = s.pending_items(&battery);
    assert_eq!(pending.len(), 5);

    let err = store
        .record_manual_score(&s.id, pending[0], 99.0, "g1")
        .unwrap_err();
    assert!(matches!(
        err,
        StoreError::Scoring(ScoringError::OutOfRange { .. })
    ));
    let err = store
        .record_manual_score(&s.id, "in-text-1", 1.0, "g1")
        .unwrap_err();
    assert!(matches!(err, StoreError::Scoring(ScoringError::NotPending(_))));
    let err = store.record_manual_score(&s.id, "nope", 1.0, "g1").unwrap_err();
    assert!(matches!(err, StoreError::Scoring(ScoringError::UnknownItem(_))));

    let mut last = s;
    for (n, item) in pending.iter().enumerate() {
        last = store.record_manual_score(&last.id, item, 1.0, "g1").unwrap();
        let expected = if n + 1 == pending.len() {
            SessionStatus::Complete
        } else {
            SessionStatus::AwaitingGrades
        };
        assert_eq!(last.status, expected);
    }
    let score = &last.item_scores[pending[0]];
    assert_eq!(
        score.method,
        ScoreMethod::Manual {
            grader_id: "g1".into()
        }
    );
    assert!(last.finished_at.is_some());
}

#[test]
fn paused_run_resumes_with_identical_transcript() {
    let battery = reference_battery();

    let (_a, straight) = store_with_subject();
    let stub = HttpStub::start(|id, _| reference_answer(id));
    let cfg = AdapterConfig::http(stub.endpoint());
    let s = straight.start_session(&battery, "bot", cfg.clone()).unwrap();
    let full = straight.run_session(&s.id, RunOptions::default()).unwrap();

    let (dir, interrupted) = store_with_subject();
    let s = interrupted.start_session(&battery, "bot", cfg).unwrap();
    let partial = interrupted
        .run_session(
            &s.id,
            RunOptions {
                max_items: Some(17),
                ..Default::default()
            },
        )
        .unwrap();
    assert_eq!(partial.status, SessionStatus::Running);
    assert_eq!(partial.responses.len(), 17);

    let reopened = Store::open(dir.path()).unwrap();
    let resumed = reopened.run_session(&s.id, RunOptions::default()).unwrap();
    assert_eq!(resumed.status, full.status);
    assert_eq!(resumed.responses.len(), full.responses.len());
    for (id, rec) in &full.responses {
        assert!(rec.same_transcript(&resumed.responses[id]), "{id}");
    }
    let points = |s: &aiq_core::administration::Session| {
        s.item_scores
            .iter()
            .map(|(k, v)| (k.clone(), v.points))
            .collect::<Vec<_>>()
    };
    assert_eq!(points(&full), points(&resumed));
}

#[test]
fn stop_flag_pauses_between_items() {
    let (_dir, store) = store_with_subject();
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let stub = HttpStub::start(move |id, _| {
        if id == "s-1" {
            flag.store(true, Ordering::SeqCst);
        }
        Reply::Text(format!("KEY-{id}"))
    });
    let battery = exact_battery(3);
    let s = store
        .start_session(&battery, "bot", AdapterConfig::http(stub.endpoint()))
        .unwrap();
    let paused = store
        .run_session(
            &s.id,
            RunOptions {
                stop: Some(stop),
                ..Default::default()
            },
        )
        .unwrap();
    // input and output subtests, then the first two mastery items
    assert_eq!(paused.responses.len(), 8);
    assert_eq!(paused.status, SessionStatus::Running);
    let done = store.run_session(&s.id, RunOptions::default()).unwrap();
    assert_eq!(done.status, SessionStatus::Complete);
}

#[test]
fn complete_session_rerun_is_a_no_op() {
    let (_dir, store) = store_with_subject();
    let stub = key_stub();
    let s = store
        .start_session(&exact_battery(1), "bot", AdapterConfig::http(stub.endpoint()))
        .unwrap();
    store.run_session(&s.id, RunOptions::default()).unwrap();
    let before = std::fs::read(store.session_path(&s.id)).unwrap();
    let hits = stub.hits();
    store.run_session(&s.id, RunOptions::default()).unwrap();
    assert_eq!(std::fs::read(store.session_path(&s.id)).unwrap(), before);
    assert_eq!(stub.hits(), hits);
}

#[test]
fn save_load_round_trip_is_bit_exact() {
    let (_dir, store) = store_with_subject();
    let stub = HttpStub::start(|id, _| reference_answer(id));
    let s = store
        .start_session(&reference_battery(), "bot", AdapterConfig::http(stub.endpoint()))
        .unwrap();
    store.run_session(&s.id, RunOptions::default()).unwrap();
    for (item, pts) in common::REFERENCE_GRADES {
        store.record_manual_score(&s.id, item, *pts, "g1").unwrap();
    }
    let path = store.session_path(&s.id);
    let bytes = std::fs::read(&path).unwrap();
    let loaded = store.load_session(&s.id).unwrap();
    store.save_session(&loaded).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(store.load_session(&s.id).unwrap(), loaded);
}

#[test]
fn truncated_session_file_is_a_parse_error() {
    let (_dir, store) = store_with_subject();
    let s = store
        .start_session(&exact_battery(1), "bot", AdapterConfig::manual())
        .unwrap();
    let path = store.session_path(&s.id);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    match store.load_session(&s.id) {
        Err(StoreError::Parse {
            problem: ParseProblem::Syntax { line, .. },
            ..
        }) => assert!(line > 0),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_battery_version_is_unresolved() {
    let (_dir, store) = store_with_subject();
    let battery = exact_battery(1);
    let s = store
        .start_session(&battery, "bot", AdapterConfig::manual())
        .unwrap();
    std::fs::remove_file(store.battery_path(&battery.battery_ref())).unwrap();
    match store.load_session(&s.id) {
        Err(StoreError::Parse {
            problem: ParseProblem::UnresolvedRef(r),
            ..
        }) => assert_eq!(r, battery.battery_ref()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn responses_for_unknown_items_are_rejected_on_load() {
    let (_dir, store) = store_with_subject();
    let stub = key_stub();
    let s = store
        .start_session(&exact_battery(1), "bot", AdapterConfig::http(stub.endpoint()))
        .unwrap();
    store.run_session(&s.id, RunOptions::default()).unwrap();
    let path = store.session_path(&s.id);
    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("\"i-0\"", "\"zz-9\"");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(
        store.load_session(&s.id),
        Err(StoreError::Parse {
            problem: ParseProblem::Inconsistent(_),
            ..
        })
    ));
}

#[test]
fn timeouts_score_zero_or_wait_for_review() {
    let (_dir, store) = store_with_subject();
    let stub = HttpStub::start(|_, _| Reply::Hang(Duration::from_secs(2)));
    let cfg = AdapterConfig::http(stub.endpoint()).with_timeout(Duration::from_millis(50));

    let s = store
        .start_session(&exact_battery(1), "bot", cfg.clone())
        .unwrap();
    let done = store.run_session(&s.id, RunOptions::default()).unwrap();
    assert_eq!(done.status, SessionStatus::Complete);
    assert!(done.item_scores.values().all(|s| s.auto_zero && s.points == 0.0));

    let mut review = exact_battery(1);
    review.id = "exact-review".into();
    review.non_answer_policy = NonAnswerPolicy::HumanReview;
    let s = store.start_session(&review, "bot", cfg).unwrap();
    let held = store.run_session(&s.id, RunOptions::default()).unwrap();
    assert_eq!(held.status, SessionStatus::AwaitingGrades);
    assert_eq!(held.pending_items(&review).len(), 4);
    assert!(held.responses.values().all(|r| r.outcome == Outcome::Timeout));
}

#[test]
fn concurrent_manual_scores_are_serialized() {
    let (dir, store) = store_with_subject();
    let stub = HttpStub::start(|id, _| reference_answer(id));
    let battery = reference_battery();
    let s = store
        .start_session(&battery, "bot", AdapterConfig::http(stub.endpoint()))
        .unwrap();
    store.run_session(&s.id, RunOptions::default()).unwrap();
    let handles: Vec<_> = common::REFERENCE_GRADES
        .iter()
        .map(|(item, pts)| {
            let store = Store::open(dir.path()).unwrap();
            let id = s.id.clone();
            std::thread::spawn(move || store.record_manual_score(&id, item, *pts, "g").map(|_| ()))
        })
        .collect();
    for h in handles {
        h.join().unwrap().unwrap();
    }
    let done = store.load_session(&s.id).unwrap();
    assert_eq!(done.status, SessionStatus::Complete);
    assert_eq!(done.item_scores.len(), battery.item_count());
}

#[test]
fn aborted_session_cannot_run() {
    let (_dir, store) = store_with_subject();
    let s = store
        .start_session(&exact_battery(1), "bot", AdapterConfig::manual())
        .unwrap();
    store.abort_session(&s.id).unwrap();
    assert!(matches!(
        store.run_session(&s.id, RunOptions::default()),
        Err(StoreError::NotRunnable { .. })
    ));
}

#[test]
fn index_rebuild_matches_sessions() {
    let (_dir, store) = store_with_subject();
    for _ in 0..3 {
        store
            .start_session(&exact_battery(1), "bot", AdapterConfig::manual())
            .unwrap();
    }
    std::fs::remove_file(store.root().join(aiq_core::administration::INDEX_FILE)).unwrap();
    let rebuilt = store.rebuild_index().unwrap();
    assert_eq!(rebuilt.len(), 3);
    assert_eq!(store.summaries().unwrap(), rebuilt);
}
