mod common;

use aiq_core::grading::{classify_grade, storage_trend, Condition, StorageObservation, StorageTrend};
use chrono::{Duration, TimeZone, Utc};
use common::{oracle_grade, Shape};
use proptest::prelude::*;

#[test]
fn classifier_matches_truth_table() {
    let shapes = Shape::all();
    assert!(shapes.len() > 64 * 4 / 2);
    for s in &shapes {
        let r = classify_grade(&s.profile(), 0.0).unwrap();
        assert_eq!(r.grade, oracle_grade(s), "{s:?}");
        assert_eq!(r.degenerate, r.grade <= 1, "{s:?}");
        assert_eq!(r.next_grade_gaps.is_empty(), r.grade == 6, "{s:?}");
        assert_eq!(r.storage_trend, s.trend);
    }
}

#[test]
fn degenerate_io_dominates() {
    let s = Shape {
        input: true,
        output: false,
        trend: StorageTrend::Increasing,
        sharing: true,
        creation: true,
        unbounded: 0b0001,
    };
    let r = classify_grade(&s.profile(), 0.0).unwrap();
    assert_eq!(r.grade, 0);
    assert!(r.next_grade_gaps.contains(&Condition::OutputPositive));
}

#[test]
fn gaps_name_next_rung() {
    let s = Shape {
        input: true,
        output: true,
        trend: StorageTrend::Increasing,
        sharing: false,
        creation: true,
        unbounded: 0,
    };
    let r = classify_grade(&s.profile(), 0.0).unwrap();
    assert_eq!(r.grade, 3);
    assert_eq!(r.next_grade_gaps, vec![Condition::KnowledgeShared]);
    assert!(!r.notes.is_empty());
}

fn shape() -> impl Strategy<Value = Shape> {
    (
        prop::sample::select(StorageTrend::ALL.to_vec()),
        any::<bool>(),
        any::<bool>(),
        0u8..16,
    )
        .prop_map(|(trend, sharing, creation, unbounded)| Shape {
            input: true,
            output: true,
            trend,
            sharing,
            creation,
            unbounded,
        })
        .prop_filter("valid", Shape::is_valid)
}

fn dominating(s: Shape) -> impl Strategy<Value = Shape> {
    let trends: Vec<StorageTrend> = StorageTrend::ALL.into_iter().filter(|t| *t >= s.trend).collect();
    (
        prop::sample::select(trends),
        any::<bool>(),
        any::<bool>(),
        0u8..16,
    )
        .prop_map(move |(trend, sharing, creation, extra)| Shape {
            trend,
            sharing: s.sharing || sharing,
            creation: s.creation || creation,
            unbounded: s.unbounded | extra,
            ..s
        })
        .prop_filter("valid", Shape::is_valid)
}

proptest! {
    #[test]
    fn adding_capabilities_never_lowers_grade((a, b) in shape().prop_flat_map(|a| (Just(a), dominating(a)))) {
        let ga = classify_grade(&a.profile(), 0.0).unwrap().grade;
        let gb = classify_grade(&b.profile(), 0.0).unwrap().grade;
        prop_assert!(gb >= ga, "{:?} -> {:?}", a, b);
    }

    #[test]
    fn trend_is_translation_invariant(alphas in prop::collection::vec(0.0f64..10.0, 0..6), shift_days in -20000i64..20000, eps in 0.0f64..1.0) {
        let base = Utc.with_ymd_and_hms(2014, 1, 1, 0, 0, 0).unwrap();
        let series = |offset: Duration| -> Vec<StorageObservation> {
            alphas
                .iter()
                .enumerate()
                .map(|(i, a)| StorageObservation { t: base + offset + Duration::days(30 * i as i64), alpha: *a })
                .collect()
        };
        prop_assert_eq!(
            storage_trend(&series(Duration::zero()), eps).unwrap(),
            storage_trend(&series(Duration::days(shift_days)), eps).unwrap()
        );
    }
}

#[test]
fn unsorted_observations_are_rejected() {
    let t = |y| Utc.with_ymd_and_hms(y, 1, 1, 0, 0, 0).unwrap();
    let obs = [
        StorageObservation {
            t: t(2016),
            alpha: 1.0,
        },
        StorageObservation {
            t: t(2015),
            alpha: 2.0,
        },
    ];
    assert!(storage_trend(&obs, 0.0).is_err());
}

#[test]
fn fixture_profiles_classify_to_their_grades() {
    let dir = common::fixture_store().join("profiles");
    let expected = [
        ("input-only-sensor", 0),
        ("stone", 1),
        ("washing-machine", 2),
        ("alphago", 3),
        ("cloud-robot", 4),
        ("human", 5),
        ("all-unbounded", 6),
    ];
    for (name, grade) in expected {
        let text = std::fs::read_to_string(dir.join(format!("{name}.json"))).unwrap();
        let profile = aiq_core::canonical::from_str(&text).unwrap();
        assert_eq!(classify_grade(&profile, 0.0).unwrap().grade, grade, "{name}");
    }
}
