#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use aiq_core::administration::Store;
use aiq_core::clock::SteppingClock;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use chrono::{TimeZone, Utc};
use serde_json::{json, Value};

pub enum Reply {
    Text(String),
    Null,
    Status(u16),
    Hang(Duration),
}

type Handler = dyn Fn(&str, &str) -> Reply + Send + Sync;

#[derive(Clone)]
struct StubState {
    handler: Arc<Handler>,
    hits: Arc<AtomicUsize>,
}

/// Local HTTP subject speaking the adapter wire format.
pub struct HttpStub {
    pub addr: SocketAddr,
    pub hits: Arc<AtomicUsize>,
}

impl HttpStub {
    pub fn start(handler: impl Fn(&str, &str) -> Reply + Send + Sync + 'static) -> Self {
        let hits = Arc::new(AtomicUsize::new(0));
        let state = StubState {
            handler: Arc::new(handler),
            hits: hits.clone(),
        };
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                let app = Router::new()
                    .route("/answer", post(answer).get(|| async { "ok" }))
                    .with_state(state);
                axum::serve(listener, app).await.unwrap();
            });
        });
        let addr = rx.recv().unwrap();
        Self { addr, hits }
    }

    /// Replies with the prompt verbatim.
    pub fn echo() -> Self {
        Self::start(|_, prompt| Reply::Text(prompt.to_string()))
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}/answer", self.addr)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

async fn answer(State(state): State<StubState>, Json(body): Json<Value>) -> Response {
    state.hits.fetch_add(1, Ordering::SeqCst);
    let item = body["item_id"].as_str().unwrap_or_default().to_string();
    let prompt = body["prompt"].as_str().unwrap_or_default().to_string();
    let handler = state.handler.clone();
    match handler(&item, &prompt) {
        Reply::Text(t) => Json(json!({ "response": t })).into_response(),
        Reply::Null => Json(json!({ "response": null })).into_response(),
        Reply::Status(code) => StatusCode::from_u16(code).unwrap().into_response(),
        Reply::Hang(d) => {
            tokio::time::sleep(d).await;
            Json(json!({ "response": "late" })).into_response()
        }
    }
}

/// Port with nothing listening on it.
pub fn closed_port() -> u16 {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().port()
}

pub fn stepping_store(root: &Path) -> Store {
    let start = Utc.with_ymd_and_hms(2016, 3, 1, 9, 0, 0).unwrap();
    Store::open(root)
        .unwrap()
        .with_clock(Arc::new(SteppingClock::new(start, chrono::Duration::seconds(1))))
}

pub fn fixture_store() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/store")
}

/// Copies the shipped fixture store into `dest`.
pub fn copy_fixture_store(dest: &Path) {
    copy_dir(&fixture_store(), dest);
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// Stub answers for the reference battery: most correct, some wrong.
pub const REFERENCE_ANSWERS: &[(&str, &str)] = &[
    ("in-text-1", "Friday"),
    ("in-text-2", "Carl"),
    ("in-text-3", "24"),
    ("in-image-1", "square"),
    ("in-image-2", "CAT"),
    ("in-image-3", "seven"),
    ("in-audio-1", "apple"),
    ("in-audio-2", "four"),
    ("in-audio-3", "dog"),
    ("out-translate-1", "Good  morning"),
    ("out-translate-2", "cat"),
    ("out-translate-3", "wine"),
    ("out-express-1", "twelve"),
    ("out-express-2", "mouses"),
    ("out-express-3", "new"),
    ("out-summary-1", "Plants use sunlight and water"),
    ("out-summary-2", "vapour rises"),
    ("out-summary-3", "red and green"),
    ("ms-general-1", "Paris"),
    ("ms-general-2", "Venus"),
    ("ms-general-3", "Au"),
    ("ms-arith-1", "391"),
    ("ms-arith-2", "12"),
    ("ms-arith-3", "1.414"),
    ("ms-sense-1", "no"),
    ("ms-sense-2", "8"),
    ("ms-sense-3", "same"),
    ("ms-science-1", "100 degrees"),
    ("ms-science-2", "300,000 km/s"),
    ("ms-science-3", "O2"),
    ("cr-assoc-1", "whale, fish and salt"),
    ("cr-assoc-2", "both are animals; one flies"),
    ("cr-pattern-1", "32"),
    ("cr-pattern-2", "21"),
    ("cr-pattern-3", "2, 4, 8, 16: doubling"),
    ("cr-imagine-1", "a hook and a wire"),
    ("cr-imagine-2", "a lamp that listens"),
    ("cr-invent-1", "a self-folding umbrella"),
    ("cr-invent-2", "carbon fibre"),
    ("cr-story-1", "Once upon a time."),
    ("cr-story-2", "worm"),
];

/// Grades for the human-rubric items of the reference battery.
pub const REFERENCE_GRADES: &[(&str, f64)] = &[
    ("cr-assoc-2", 2.0),
    ("cr-pattern-3", 1.0),
    ("cr-imagine-2", 3.0),
    ("cr-invent-1", 2.0),
    ("cr-story-1", 4.0),
];

pub fn reference_answer(item_id: &str) -> Reply {
    REFERENCE_ANSWERS
        .iter()
        .find(|(id, _)| *id == item_id)
        .map(|(_, a)| Reply::Text(a.to_string()))
        .unwrap_or(Reply::Null)
}

use aiq_core::battery::{Ability, Battery, Prompt, ScoringMode, Subtest, TestItem, WeightVector};

/// Four-subtest battery of ExactMatch items; item `x` has the single key `key-x`.
pub fn exact_battery(items_per_ability: usize) -> Battery {
    let subtests = Ability::ALL
        .iter()
        .map(|&ability| {
            let items: Vec<TestItem> = (0..items_per_ability)
                .map(|n| {
                    let id = format!("{}-{n}", ability.symbol().to_lowercase());
                    TestItem {
                        prompt: Prompt::text(format!("prompt for {id}")),
                        max_points: (n + 1) as f64,
                        scoring: ScoringMode::ExactMatch {
                            keys: vec![format!("key-{id}")],
                        },
                        id,
                    }
                })
                .collect();
            Subtest {
                id: format!("sub-{}", ability.symbol().to_lowercase()),
                ability,
                title: format!("{ability} items"),
                max_points: items.iter().map(|i| i.max_points).sum(),
                items,
            }
        })
        .collect();
    Battery {
        id: "exact".into(),
        version: "1".into(),
        weights: WeightVector::EQUAL,
        subtests,
        non_answer_policy: Default::default(),
    }
}

/// Stub that answers every item of [`exact_battery`] correctly.
pub fn key_stub() -> HttpStub {
    HttpStub::start(|id, _| Reply::Text(format!("KEY-{id}")))
}

use aiq_core::grading::{CapabilityProfile, StorageObservation, StorageTrend};
use std::collections::BTreeSet;

/// Storage series producing `trend` under eps 0.
pub fn storage_for(trend: StorageTrend) -> Vec<StorageObservation> {
    let t = |y| Utc.with_ymd_and_hms(y, 1, 1, 0, 0, 0).unwrap();
    let obs = |a: f64, b: f64| {
        vec![
            StorageObservation { t: t(2015), alpha: a },
            StorageObservation { t: t(2016), alpha: b },
        ]
    };
    match trend {
        StorageTrend::Empty => vec![],
        StorageTrend::Zero => obs(0.0, 0.0),
        StorageTrend::Fixed => obs(5.0, 5.0),
        StorageTrend::Increasing => obs(5.0, 7.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub input: bool,
    pub output: bool,
    pub trend: StorageTrend,
    pub sharing: bool,
    pub creation: bool,
    /// Bitmask over I, O, S, C.
    pub unbounded: u8,
}

impl Shape {
    pub fn profile(&self) -> CapabilityProfile {
        let mut p = CapabilityProfile::new("subject");
        p.input_positive = self.input;
        p.output_positive = self.output;
        p.storage_observations = storage_for(self.trend);
        p.sharing = self.sharing;
        p.creation_positive = self.creation;
        p.unbounded = Ability::ALL
            .iter()
            .enumerate()
            .filter(|(i, _)| self.unbounded & (1 << i) != 0)
            .map(|(_, a)| *a)
            .collect::<BTreeSet<_>>();
        p
    }

    /// Unbounded markers need the matching positive fact.
    pub fn is_valid(&self) -> bool {
        let backed = [self.input, self.output, self.trend.retains(), self.creation];
        (0..4).all(|i| self.unbounded & (1 << i) == 0 || backed[i])
    }

    /// Every valid shape: 2^4 flags x 4 trends x 16 marker sets.
    pub fn all() -> Vec<Shape> {
        let mut out = Vec::new();
        for bits in 0u8..16 {
            for trend in StorageTrend::ALL {
                for unbounded in 0u8..16 {
                    let s = Shape {
                        input: bits & 1 != 0,
                        output: bits & 2 != 0,
                        sharing: bits & 4 != 0,
                        creation: bits & 8 != 0,
                        trend,
                        unbounded,
                    };
                    if s.is_valid() {
                        out.push(s);
                    }
                }
            }
        }
        out
    }
}

/// Grade table written out case by case.
pub fn oracle_grade(s: &Shape) -> u8 {
    match (s.input, s.output) {
        (true, false) | (false, true) => return 0,
        (false, false) => return 1,
        (true, true) => {}
    }
    if s.unbounded == 0b1111 {
        return 6;
    }
    match (s.trend, s.sharing, s.creation) {
        (StorageTrend::Empty | StorageTrend::Zero, _, _) => 0,
        (StorageTrend::Fixed, _, _) => 2,
        (StorageTrend::Increasing, false, _) => 3,
        (StorageTrend::Increasing, true, false) => 4,
        (StorageTrend::Increasing, true, true) => 5,
    }
}
