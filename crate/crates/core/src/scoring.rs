//! Item scoring, ability aggregation and the weighted IQ.
//!
//! The IQ of a subject is `Q = a·f(I) + b·f(O) + c·f(S) + d·f(C)` where each
//! ability score `f(·)` is the percentage of attainable points earned on the
//! items of that ability, and the weights sum to one.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::adapters::ResponseRecord;
use crate::administration::{Session, SessionStatus};
use crate::battery::{Ability, Battery, ScoringMode, TestItem, WeightVector};
use crate::canonical::round9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("response for {response} does not belong to item {item}")]
    ItemResponseMismatch { item: String, response: String },
    #[error("item {0} is not pending a manual score")]
    NotPending(String),
    #[error("{points} points is outside [0, {max}] for item {item}")]
    OutOfRange { item: String, points: f64, max: f64 },
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("session is incomplete: {pending} item(s) still unscored")]
    SessionIncomplete { pending: usize },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid ability scores: {0}")]
    InvalidAbilityScores(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ScoreMethod {
    Auto,
    Manual { grader_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemScore {
    pub item_id: String,
    pub points: f64,
    pub method: ScoreMethod,
    /// Set when the points were assigned because the subject gave no answer.
    pub auto_zero: bool,
    pub scored_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreOutcome {
    Scored(ItemScore),
    PendingHumanGrade,
}

/// Trim, case-fold and collapse internal whitespace.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// True if the words of `keyword` occur as a contiguous run in `response`.
pub fn mentions(response: &str, keyword: &str) -> bool {
    let hay = words(response);
    let needle = words(keyword);
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle.as_slice())
}

fn number_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").unwrap())
}

fn thousands_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(\d),(\d{3})").unwrap())
}

/// The whole response as a number, else the first number in it.
pub fn parse_number(response: &str) -> Option<f64> {
    let trimmed = response.trim();
    if let Ok(v) = trimmed.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let mut cleaned = trimmed.to_string();
    // "1,000,000" needs two passes since matches cannot overlap
    while thousands_pattern().is_match(&cleaned) {
        cleaned = thousands_pattern().replace_all(&cleaned, "$1$2").into_owned();
    }
    number_pattern()
        .find(&cleaned)
        .and_then(|m| m.as_str().parse::<f64>().ok())
        .filter(|v| v.is_finite())
}

/// Machine points for an answered response, or `None` for human-graded items.
pub fn machine_points(item: &TestItem, response: &str) -> Option<f64> {
    let points = match &item.scoring {
        ScoringMode::ExactMatch { keys } => {
            let answer = normalize(response);
            if keys.iter().any(|k| normalize(k) == answer) {
                item.max_points
            } else {
                0.0
            }
        }
        ScoringMode::NumericAnswer { value, tolerance } => match parse_number(response) {
            Some(v) if (v - value).abs() <= *tolerance => item.max_points,
            _ => 0.0,
        },
        ScoringMode::KeywordRubric { keywords, cap } => {
            let earned: f64 = keywords
                .iter()
                .filter(|(k, _)| mentions(response, k))
                .map(|(_, p)| *p)
                .sum();
            earned.min(*cap)
        }
        ScoringMode::HumanRubric { .. } => return None,
    };
    Some(round9(points.clamp(0.0, item.max_points)))
}

/// Scores one response. Non-answers get zero points flagged `auto_zero`.
pub fn score_item(
    item: &TestItem,
    resp: &ResponseRecord,
    now: DateTime<Utc>,
) -> Result<ScoreOutcome, ScoringError> {
    if resp.item_id != item.id {
        return Err(ScoringError::ItemResponseMismatch {
            item: item.id.clone(),
            response: resp.item_id.clone(),
        });
    }
    let auto = |points: f64, auto_zero: bool| {
        ScoreOutcome::Scored(ItemScore {
            item_id: item.id.clone(),
            points,
            method: ScoreMethod::Auto,
            auto_zero,
            scored_at: now,
        })
    };
    if !resp.outcome.is_answered() {
        return Ok(auto(0.0, true));
    }
    Ok(match machine_points(item, &resp.raw_response) {
        Some(points) => auto(points, false),
        None => ScoreOutcome::PendingHumanGrade,
    })
}

/// Records a grader's score for a pending item and updates the session status.
///
/// This is the pure part of the operation; [`crate::administration::Store`]
/// wraps it with locking and persistence.
pub fn record_manual_score(
    sess: &mut Session,
    battery: &Battery,
    item_id: &str,
    points: f64,
    grader_id: &str,
    now: DateTime<Utc>,
) -> Result<(), ScoringError> {
    let (_, item) = battery
        .find_item(item_id)
        .ok_or_else(|| ScoringError::UnknownItem(item_id.to_string()))?;
    if !sess.is_pending(item_id) {
        return Err(ScoringError::NotPending(item_id.to_string()));
    }
    if !points.is_finite() || points < 0.0 || points > item.max_points {
        return Err(ScoringError::OutOfRange {
            item: item_id.to_string(),
            points,
            max: item.max_points,
        });
    }
    sess.item_scores.insert(
        item_id.to_string(),
        ItemScore {
            item_id: item_id.to_string(),
            points: round9(points),
            method: ScoreMethod::Manual {
                grader_id: grader_id.to_string(),
            },
            auto_zero: false,
            scored_at: now,
        },
    );
    sess.refresh_status(battery, now);
    Ok(())
}

/// The four ability scores, each in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbilityScores {
    #[serde(rename = "f_I")]
    pub input: f64,
    #[serde(rename = "f_O")]
    pub output: f64,
    #[serde(rename = "f_S")]
    pub mastery: f64,
    #[serde(rename = "f_C")]
    pub creation: f64,
}

impl AbilityScores {
    pub fn new(input: f64, output: f64, mastery: f64, creation: f64) -> Self {
        Self {
            input,
            output,
            mastery,
            creation,
        }
    }

    pub fn get(&self, ability: Ability) -> f64 {
        match ability {
            Ability::Input => self.input,
            Ability::Output => self.output,
            Ability::Mastery => self.mastery,
            Ability::Creation => self.creation,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Ability) -> f64) -> Self {
        Self::new(
            f(Ability::Input),
            f(Ability::Output),
            f(Ability::Mastery),
            f(Ability::Creation),
        )
    }
}

fn ability_totals(sess: &Session, battery: &Battery) -> BTreeMap<Ability, (f64, f64, usize)> {
    let mut totals: BTreeMap<Ability, (f64, f64, usize)> = BTreeMap::new();
    for (subtest, item) in battery.items() {
        let entry = totals.entry(subtest.ability).or_default();
        entry.1 += item.max_points;
        match sess.item_scores.get(&item.id) {
            Some(score) => entry.0 += score.points,
            None => entry.2 += 1,
        }
    }
    totals
}

/// Points-ratio aggregation over every item of each ability.
pub fn ability_scores(sess: &Session, battery: &Battery) -> Result<AbilityScores, ScoringError> {
    let pending = sess.unscored_items(battery).len();
    if sess.status != SessionStatus::Complete || pending > 0 {
        return Err(ScoringError::SessionIncomplete { pending });
    }
    let totals = ability_totals(sess, battery);
    Ok(AbilityScores::from_fn(|a| {
        let (earned, max, _) = totals.get(&a).copied().unwrap_or_default();
        if max > 0.0 {
            100.0 * earned / max
        } else {
            0.0
        }
    }))
}

/// Ability scores for abilities whose items are all scored.
pub fn partial_ability_scores(sess: &Session, battery: &Battery) -> BTreeMap<Ability, f64> {
    ability_totals(sess, battery)
        .into_iter()
        .filter(|(_, (_, max, missing))| *missing == 0 && *max > 0.0)
        .map(|(a, (earned, max, _))| (a, 100.0 * earned / max))
        .collect()
}

/// Rounds half-up to two decimals, ignoring binary noise below 1e-9.
pub fn round_half_up_2(x: f64) -> f64 {
    let scaled = round9(x * 100.0);
    (scaled + 0.5).floor() / 100.0
}

/// An IQ value. Keeps the raw weighted sum; displays with two decimals.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Quotient(f64);

impl Quotient {
    pub fn new(raw: f64) -> Self {
        Quotient(raw)
    }

    pub fn raw(self) -> f64 {
        self.0
    }

    pub fn rounded(self) -> f64 {
        round_half_up_2(self.0)
    }
}

impl fmt::Display for Quotient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.rounded())
    }
}

impl Serialize for Quotient {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Quotient {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        f64::deserialize(d).map(Quotient)
    }
}

/// `a·f(I) + b·f(O) + c·f(S) + d·f(C)`.
pub fn compute_iq(scores: &AbilityScores, weights: &WeightVector) -> Result<Quotient, ScoringError> {
    if let Some(v) = weights.violations().first() {
        return Err(ScoringError::InvalidWeights(v.reason()));
    }
    for a in Ability::ALL {
        let f = scores.get(a);
        if !(0.0..=100.0).contains(&f) {
            return Err(ScoringError::InvalidAbilityScores(format!(
                "f({}) = {f} is outside [0, 100]",
                a.symbol()
            )));
        }
    }
    let q: f64 = Ability::ALL
        .iter()
        .map(|&a| weights.weight(a) * scores.get(a))
        .sum();
    // weights may sum to 1 + 1e-9
    Ok(Quotient(q.clamp(0.0, 100.0)))
}

/// The IQ of one subject from one session.
///
/// Serialized with both the two-decimal `Q` and the unrounded `Q_raw`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "IqResultRepr", from = "IqResultRepr")]
pub struct IqResult {
    pub subject_ref: String,
    pub session_ref: String,
    pub q: Quotient,
    pub weights: WeightVector,
    pub ability_scores: AbilityScores,
    pub computed_at: DateTime<Utc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IqResultRepr {
    subject_ref: String,
    session_ref: String,
    #[serde(rename = "Q")]
    q: f64,
    #[serde(rename = "Q_raw")]
    q_raw: f64,
    weights: WeightVector,
    ability_scores: AbilityScores,
    computed_at: DateTime<Utc>,
}

impl From<IqResult> for IqResultRepr {
    fn from(r: IqResult) -> Self {
        IqResultRepr {
            subject_ref: r.subject_ref,
            session_ref: r.session_ref,
            q: r.q.rounded(),
            q_raw: r.q.raw(),
            weights: r.weights,
            ability_scores: r.ability_scores,
            computed_at: r.computed_at,
        }
    }
}

impl From<IqResultRepr> for IqResult {
    fn from(r: IqResultRepr) -> Self {
        IqResult {
            subject_ref: r.subject_ref,
            session_ref: r.session_ref,
            q: Quotient(r.q_raw),
            weights: r.weights,
            ability_scores: r.ability_scores,
            computed_at: r.computed_at,
        }
    }
}

impl IqResult {
    pub fn for_session(sess: &Session, battery: &Battery, now: DateTime<Utc>) -> Result<Self, ScoringError> {
        let scores = ability_scores(sess, battery)?;
        let q = compute_iq(&scores, &battery.weights)?;
        Ok(IqResult {
            subject_ref: sess.subject_ref.clone(),
            session_ref: sess.id.clone(),
            q,
            weights: battery.weights,
            ability_scores: scores,
            computed_at: now,
        })
    }
}

/// Writes results as CSV: `subject_id,Q,f_I,f_O,f_S,f_C,computed_at`.
pub fn write_results_csv<W: std::io::Write>(results: &[IqResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject_id", "Q", "f_I", "f_O", "f_S", "f_C", "computed_at"])?;
    for r in results {
        let s = &r.ability_scores;
        w.write_record([
            r.subject_ref.clone(),
            r.q.to_string(),
            round9(s.input).to_string(),
            round9(s.output).to_string(),
            round9(s.mastery).to_string(),
            round9(s.creation).to_string(),
            r.computed_at.to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        ])?;
    }
    w.flush()?;
    Ok(())
}
