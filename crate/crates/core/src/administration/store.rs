use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use super::{valid_id, Session, SessionStatus, Subject};
use crate::adapters::{Adapter, AdapterConfig, AdapterError, Transcriber};
use crate::battery::{Battery, BatteryRef, NonAnswerPolicy};
use crate::canonical;
use crate::clock::{Clock, SystemClock};
use crate::grading::CapabilityProfile;
use crate::reporting::Observation;
use crate::scoring::{self, IqResult, ScoreOutcome, ScoringError};

pub const SUBJECTS_FILE: &str = "subjects.json";
pub const INDEX_FILE: &str = "index.json";
const SESSIONS_DIR: &str = "sessions";
const BATTERIES_DIR: &str = "batteries";
const RESULTS_DIR: &str = "results";
const PROFILES_DIR: &str = "profiles";
const STORE_LOCK: &str = ".store.lock";

/// Why a stored file could not be turned back into a value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseProblem {
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    /// The referenced battery version is not in the store.
    UnresolvedRef(BatteryRef),
    /// The file parsed but breaks a session invariant.
    Inconsistent(String),
}

impl std::fmt::Display for ParseProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseProblem::Syntax {
                line,
                column,
                message,
            } => write!(f, "line {line}, column {column}: {message}"),
            ParseProblem::UnresolvedRef(r) => write!(f, "UnresolvedRef: battery {r} not in store"),
            ParseProblem::Inconsistent(msg) => write!(f, "inconsistent: {msg}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown subject {0}")]
    UnknownSubject(String),
    #[error("subject {0} already registered")]
    DuplicateSubject(String),
    #[error("invalid id {0:?}: use letters, digits, '-', '_' or '.'")]
    InvalidId(String),
    #[error("invalid battery: {0}")]
    InvalidBattery(String),
    #[error("battery {0} is already stored with different content")]
    BatteryConflict(BatteryRef),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {id} cannot run in status {status}")]
    NotRunnable { id: String, status: SessionStatus },
    #[error("adapter config invalid: {0}")]
    AdapterConfigInvalid(#[from] AdapterError),
    #[error("refusing to save session {id}: {reason}")]
    InvalidSession { id: String, reason: String },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot parse {path}: {problem}")]
    Parse { path: PathBuf, problem: ParseProblem },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

impl StoreError {
    fn write(path: &Path, source: io::Error) -> Self {
        StoreError::Write {
            path: path.to_path_buf(),
            source,
        }
    }

    fn syntax(path: &Path, e: serde_json::Error) -> Self {
        StoreError::Parse {
            path: path.to_path_buf(),
            problem: ParseProblem::Syntax {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            },
        }
    }
}

/// Row of the session index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSummary {
    pub id: String,
    pub subject_ref: String,
    pub battery_ref: BatteryRef,
    pub status: SessionStatus,
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    pub responses: usize,
    pub pending: usize,
}

/// An IQ value recorded from elsewhere (e.g. a published ranking), kept
/// verbatim and never recomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordedIq {
    pub subject_ref: String,
    #[serde(rename = "Q")]
    pub q: f64,
    pub as_of: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

/// Controls for one call to [`Store::run_session`].
#[derive(Default)]
pub struct RunOptions {
    /// Pause after administering this many items in this call.
    pub max_items: Option<usize>,
    /// Pause as soon as this flag is set.
    pub stop: Option<Arc<AtomicBool>>,
    /// Operator input for `ManualTranscript` adapters.
    pub transcriber: Option<Box<dyn Transcriber>>,
}

/// Exclusive advisory lock, released on drop.
struct LockGuard(File);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| StoreError::write(path, e))?;
    tmp.write_all(contents.as_bytes())
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| StoreError::write(path, e))?;
    tmp.persist(path).map_err(|e| StoreError::write(path, e.error))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<Option<String>, StoreError> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(Some(text)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(StoreError::Read {
            path: path.to_path_buf(),
            source: e,
        }),
    }
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => {
            return Err(StoreError::Read {
                path: dir.to_path_buf(),
                source: e,
            })
        }
    };
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// File-backed store: one canonical JSON file per session, plus subjects,
/// batteries and an index.
///
/// ```text
/// <root>/subjects.json
/// <root>/index.json
/// <root>/sessions/<id>.json
/// <root>/batteries/<id>-<version>.json
/// <root>/results/*.json      recorded IQ values
/// <root>/profiles/*.json     capability profiles
/// ```
#[derive(Clone)]
pub struct Store {
    root: PathBuf,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).finish()
    }
}

impl Store {
    /// Opens `root`, creating the directory layout if needed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for dir in [SESSIONS_DIR, BATTERIES_DIR, RESULTS_DIR, PROFILES_DIR] {
            let path = root.join(dir);
            fs::create_dir_all(&path).map_err(|e| StoreError::write(&path, e))?;
        }
        Ok(Store {
            root,
            clock: Arc::new(SystemClock),
        })
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn session_path(&self, id: &str) -> PathBuf {
        self.root.join(SESSIONS_DIR).join(format!("{id}.json"))
    }

    pub fn battery_path(&self, r: &BatteryRef) -> PathBuf {
        self.root
            .join(BATTERIES_DIR)
            .join(format!("{}-{}.json", r.id, r.version))
    }

    pub fn results_dir(&self) -> PathBuf {
        self.root.join(RESULTS_DIR)
    }

    pub fn profiles_dir(&self) -> PathBuf {
        self.root.join(PROFILES_DIR)
    }

    fn lock(&self, path: PathBuf) -> Result<LockGuard, StoreError> {
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| StoreError::write(&path, e))?;
        file.lock().map_err(|e| StoreError::write(&path, e))?;
        Ok(LockGuard(file))
    }

    fn lock_store(&self) -> Result<LockGuard, StoreError> {
        self.lock(self.root.join(STORE_LOCK))
    }

    fn lock_session(&self, id: &str) -> Result<LockGuard, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::UnknownSession(id.to_string()));
        }
        self.lock(self.root.join(SESSIONS_DIR).join(format!(".{id}.lock")))
    }

    // ---- subjects ----

    pub fn subjects(&self) -> Result<Vec<Subject>, StoreError> {
        let path = self.root.join(SUBJECTS_FILE);
        match read_text(&path)? {
            None => Ok(Vec::new()),
            Some(text) => canonical::from_str(&text).map_err(|e| StoreError::syntax(&path, e)),
        }
    }

    pub fn subject(&self, id: &str) -> Result<Subject, StoreError> {
        self.subjects()?
            .into_iter()
            .find(|s| s.id == id)
            .ok_or_else(|| StoreError::UnknownSubject(id.to_string()))
    }

    pub fn add_subject(&self, subject: Subject) -> Result<(), StoreError> {
        if !valid_id(&subject.id) {
            return Err(StoreError::InvalidId(subject.id));
        }
        let _guard = self.lock_store()?;
        let mut subjects = self.subjects()?;
        if subjects.iter().any(|s| s.id == subject.id) {
            return Err(StoreError::DuplicateSubject(subject.id));
        }
        subjects.push(subject);
        subjects.sort_by(|a, b| a.id.cmp(&b.id));
        let path = self.root.join(SUBJECTS_FILE);
        write_atomic(
            &path,
            &canonical::to_string(&subjects).expect("subjects serialize"),
        )
    }

    // ---- batteries ----

    /// Copies `battery` into the store. Re-installing identical content is a no-op.
    pub fn install_battery(&self, battery: &Battery) -> Result<PathBuf, StoreError> {
        let path = self.battery_path(&battery.battery_ref());
        let text = battery.to_canonical_json();
        let _guard = self.lock_store()?;
        match read_text(&path)? {
            Some(existing) if existing == text => Ok(path),
            Some(_) => Err(StoreError::BatteryConflict(battery.battery_ref())),
            None => write_atomic(&path, &text).map(|_| path),
        }
    }

    pub fn battery(&self, r: &BatteryRef) -> Result<Battery, StoreError> {
        let path = self.battery_path(r);
        let text = read_text(&path)?.ok_or_else(|| StoreError::Parse {
            path: path.clone(),
            problem: ParseProblem::UnresolvedRef(r.clone()),
        })?;
        canonical::from_str(&text).map_err(|e| StoreError::syntax(&path, e))
    }

    // ---- sessions ----

    /// Creates and persists a new session in status `Created`.
    pub fn start_session(
        &self,
        battery: &Battery,
        subject_id: &str,
        adapter: AdapterConfig,
    ) -> Result<Session, StoreError> {
        self.subject(subject_id)?;
        let report = battery.validate();
        if !report.is_valid() {
            let msgs: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
            return Err(StoreError::InvalidBattery(msgs.join("; ")));
        }
        adapter.validate()?;
        self.install_battery(battery)?;
        let now = self.clock.now();
        let id = format!(
            "{}-{}",
            now.format("%Y%m%d"),
            &Uuid::new_v4().simple().to_string()[..12]
        );
        let session = Session::new(id, battery, subject_id, adapter, now);
        self.save_session(&session)?;
        Ok(session)
    }

    /// Writes the session atomically and updates the index.
    pub fn save_session(&self, session: &Session) -> Result<PathBuf, StoreError> {
        if !valid_id(&session.id) {
            return Err(StoreError::InvalidId(session.id.clone()));
        }
        let battery = self.battery(&session.battery_ref)?;
        session
            .check(&battery)
            .map_err(|reason| StoreError::InvalidSession {
                id: session.id.clone(),
                reason,
            })?;
        let path = self.session_path(&session.id);
        write_atomic(&path, &canonical::to_string(session).expect("session serializes"))?;
        self.update_index(session, &battery)?;
        Ok(path)
    }

    pub fn load_session(&self, id: &str) -> Result<Session, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::UnknownSession(id.to_string()));
        }
        let path = self.session_path(id);
        if !path.exists() {
            return Err(StoreError::UnknownSession(id.to_string()));
        }
        self.load_session_file(&path)
    }

    /// Parses a session file and checks it against the battery it references.
    pub fn load_session_file(&self, path: &Path) -> Result<Session, StoreError> {
        let text = read_text(path)?.ok_or_else(|| StoreError::Read {
            path: path.to_path_buf(),
            source: io::Error::from(io::ErrorKind::NotFound),
        })?;
        let session: Session = canonical::from_str(&text).map_err(|e| StoreError::syntax(path, e))?;
        let battery = self.battery(&session.battery_ref).map_err(|e| match e {
            StoreError::Parse {
                problem: ParseProblem::UnresolvedRef(r),
                ..
            } => StoreError::Parse {
                path: path.to_path_buf(),
                problem: ParseProblem::UnresolvedRef(r),
            },
            other => other,
        })?;
        session.check(&battery).map_err(|msg| StoreError::Parse {
            path: path.to_path_buf(),
            problem: ParseProblem::Inconsistent(msg),
        })?;
        Ok(session)
    }

    pub fn session_ids(&self) -> Result<Vec<String>, StoreError> {
        Ok(json_files(&self.root.join(SESSIONS_DIR))?
            .iter()
            .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
            .collect())
    }

    fn summarize(session: &Session, battery: &Battery) -> SessionSummary {
        SessionSummary {
            id: session.id.clone(),
            subject_ref: session.subject_ref.clone(),
            battery_ref: session.battery_ref.clone(),
            status: session.status,
            started_at: session.started_at,
            finished_at: session.finished_at,
            responses: session.responses.len(),
            pending: session.pending_items(battery).len(),
        }
    }

    fn read_index(&self) -> Option<BTreeMap<String, SessionSummary>> {
        let text = read_text(&self.root.join(INDEX_FILE)).ok()??;
        let rows: Vec<SessionSummary> = canonical::from_str(&text).ok()?;
        Some(rows.into_iter().map(|r| (r.id.clone(), r)).collect())
    }

    fn write_index(&self, rows: &BTreeMap<String, SessionSummary>) -> Result<(), StoreError> {
        let list: Vec<&SessionSummary> = rows.values().collect();
        write_atomic(
            &self.root.join(INDEX_FILE),
            &canonical::to_string(&list).expect("index serializes"),
        )
    }

    fn scan_index(&self) -> Result<BTreeMap<String, SessionSummary>, StoreError> {
        let mut rows = BTreeMap::new();
        for id in self.session_ids()? {
            let session = self.load_session(&id)?;
            let battery = self.battery(&session.battery_ref)?;
            rows.insert(id, Self::summarize(&session, &battery));
        }
        Ok(rows)
    }

    fn update_index(&self, session: &Session, battery: &Battery) -> Result<(), StoreError> {
        let _guard = self.lock_store()?;
        let mut rows = match self.read_index() {
            Some(rows) => rows,
            None => self.scan_index()?,
        };
        rows.insert(session.id.clone(), Self::summarize(session, battery));
        self.write_index(&rows)
    }

    /// Rebuilds the index from the session files.
    pub fn rebuild_index(&self) -> Result<Vec<SessionSummary>, StoreError> {
        let _guard = self.lock_store()?;
        let rows = self.scan_index()?;
        self.write_index(&rows)?;
        Ok(rows.into_values().collect())
    }

    /// Session summaries ordered by id.
    pub fn summaries(&self) -> Result<Vec<SessionSummary>, StoreError> {
        match self.read_index() {
            Some(rows) => Ok(rows.into_values().collect()),
            None => self.rebuild_index(),
        }
    }

    /// Administers the remaining items of a session in battery order.
    ///
    /// Machine-scorable items are scored as they arrive and the session is
    /// persisted after every item, so a killed run resumes from the last
    /// saved item. Running a session that is already `Complete` or
    /// `AwaitingGrades` returns it unchanged.
    pub fn run_session(&self, id: &str, opts: RunOptions) -> Result<Session, StoreError> {
        let _guard = self.lock_session(id)?;
        let mut session = self.load_session(id)?;
        match session.status {
            SessionStatus::Complete | SessionStatus::AwaitingGrades => return Ok(session),
            SessionStatus::Aborted => {
                return Err(StoreError::NotRunnable {
                    id: id.to_string(),
                    status: session.status,
                })
            }
            SessionStatus::Created | SessionStatus::Running => {}
        }
        let battery = self.battery(&session.battery_ref)?;
        let mut adapter = Adapter::new(session.adapter.clone())?.with_clock(self.clock.clone());
        if let Some(t) = opts.transcriber {
            adapter = adapter.with_transcriber(t);
        }
        let delay = session.adapter.inter_item_delay();

        if session.status == SessionStatus::Created {
            session.status = SessionStatus::Running;
            self.save_session(&session)?;
        }

        let mut administered = 0usize;
        for (_, item) in battery.items() {
            if session.responses.contains_key(&item.id) {
                continue;
            }
            let stop_requested = opts.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst));
            if stop_requested || opts.max_items.is_some_and(|m| administered >= m) {
                return Ok(session);
            }
            if administered > 0 && !delay.is_zero() {
                thread::sleep(delay);
            }
            let record = adapter.administer(item);
            let now = self.clock.now();
            let review =
                !record.outcome.is_answered() && battery.non_answer_policy == NonAnswerPolicy::HumanReview;
            if !review {
                if let ScoreOutcome::Scored(score) = scoring::score_item(item, &record, now)? {
                    session.item_scores.insert(item.id.clone(), score);
                }
            }
            session.responses.insert(item.id.clone(), record);
            administered += 1;
            if session.all_administered(&battery) {
                session.refresh_status(&battery, now);
            }
            self.save_session(&session)?;
        }
        session.refresh_status(&battery, self.clock.now());
        self.save_session(&session)?;
        Ok(session)
    }

    /// Records a grader's score under the session's writer lock.
    pub fn record_manual_score(
        &self,
        id: &str,
        item_id: &str,
        points: f64,
        grader_id: &str,
    ) -> Result<Session, StoreError> {
        let _guard = self.lock_session(id)?;
        let mut session = self.load_session(id)?;
        let battery = self.battery(&session.battery_ref)?;
        scoring::record_manual_score(
            &mut session,
            &battery,
            item_id,
            points,
            grader_id,
            self.clock.now(),
        )?;
        self.save_session(&session)?;
        Ok(session)
    }

    pub fn abort_session(&self, id: &str) -> Result<Session, StoreError> {
        let _guard = self.lock_session(id)?;
        let mut session = self.load_session(id)?;
        if session.status == SessionStatus::Complete {
            return Err(StoreError::NotRunnable {
                id: id.to_string(),
                status: session.status,
            });
        }
        if session.status != SessionStatus::Aborted {
            session.status = SessionStatus::Aborted;
            session.finished_at = Some(self.clock.now());
            self.save_session(&session)?;
        }
        Ok(session)
    }

    /// IQ of a complete session, timestamped with its finish time.
    pub fn iq_result(&self, session: &Session) -> Result<IqResult, StoreError> {
        let battery = self.battery(&session.battery_ref)?;
        let at = session.finished_at.unwrap_or(session.started_at);
        Ok(IqResult::for_session(session, &battery, at)?)
    }

    /// Results of every complete session, ordered by session id.
    pub fn completed_results(&self) -> Result<Vec<IqResult>, StoreError> {
        let mut out = Vec::new();
        for id in self.session_ids()? {
            let session = self.load_session(&id)?;
            if session.status == SessionStatus::Complete {
                out.push(self.iq_result(&session)?);
            }
        }
        Ok(out)
    }

    /// Every recorded value under `results/`, file by file in name order.
    pub fn recorded_results(&self) -> Result<Vec<RecordedIq>, StoreError> {
        self.recorded_results_matching(|_| true)
    }

    /// Recorded values from `results/<name>.json` only.
    pub fn recorded_results_in(&self, name: &str) -> Result<Vec<RecordedIq>, StoreError> {
        let path = self.results_dir().join(format!("{name}.json"));
        if !path.is_file() {
            return Err(StoreError::Read {
                path,
                source: io::Error::from(io::ErrorKind::NotFound),
            });
        }
        self.recorded_results_matching(|p| p == path)
    }

    fn recorded_results_matching(&self, keep: impl Fn(&Path) -> bool) -> Result<Vec<RecordedIq>, StoreError> {
        let mut out = Vec::new();
        for path in json_files(&self.results_dir())?.into_iter().filter(|p| keep(p)) {
            let text = read_text(&path)?.unwrap_or_default();
            let rows: Vec<RecordedIq> =
                canonical::from_str(&text).map_err(|e| StoreError::syntax(&path, e))?;
            out.extend(rows);
        }
        Ok(out)
    }

    /// Writes recorded values to `results/<name>.json`.
    pub fn record_results(&self, name: &str, rows: &[RecordedIq]) -> Result<PathBuf, StoreError> {
        if !valid_id(name) {
            return Err(StoreError::InvalidId(name.to_string()));
        }
        let path = self.results_dir().join(format!("{name}.json"));
        write_atomic(&path, &canonical::to_string(&rows).expect("results serialize"))?;
        Ok(path)
    }

    /// Recorded values followed by complete session results.
    pub fn observations(&self) -> Result<Vec<Observation>, StoreError> {
        let mut out: Vec<Observation> = self.recorded_results()?.iter().map(Observation::from).collect();
        out.extend(self.completed_results()?.iter().map(Observation::from));
        Ok(out)
    }

    /// Capability profiles stored under `profiles/`, keyed by file stem.
    pub fn profiles(&self) -> Result<Vec<(String, CapabilityProfile)>, StoreError> {
        let mut out = Vec::new();
        for path in json_files(&self.profiles_dir())? {
            let text = read_text(&path)?.unwrap_or_default();
            let profile: CapabilityProfile =
                canonical::from_str(&text).map_err(|e| StoreError::syntax(&path, e))?;
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            out.push((name, profile));
        }
        Ok(out)
    }

    pub fn save_profile(&self, name: &str, profile: &CapabilityProfile) -> Result<PathBuf, StoreError> {
        if !valid_id(name) {
            return Err(StoreError::InvalidId(name.to_string()));
        }
        let path = self.profiles_dir().join(format!("{name}.json"));
        write_atomic(&path, &canonical::to_string(profile).expect("profile serializes"))?;
        Ok(path)
    }
}
