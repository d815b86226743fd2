//! Test batteries: versioned, weighted collections of ability-grouped subtests.
//!
//! A battery is loaded from a single canonical JSON file, validated once and
//! then treated as immutable; sessions refer to it by `(id, version)`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;

/// Absolute tolerance on `a + b + c + d = 1`.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Tolerance used when comparing a subtest's declared maximum to its items.
const POINTS_TOLERANCE: f64 = 1e-9;

const REFERENCE_BATTERY_JSON: &str = include_str!("../batteries/reference-battery-v1.json");

/// The four measured abilities of an intelligent system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ability {
    /// Knowledge and information acceptance.
    #[serde(alias = "I")]
    Input,
    /// Knowledge and information output.
    #[serde(alias = "O")]
    Output,
    /// Knowledge mastery and storage.
    #[serde(alias = "S")]
    Mastery,
    /// Knowledge creation and innovation.
    #[serde(alias = "C")]
    Creation,
}

impl Ability {
    pub const ALL: [Ability; 4] = [
        Ability::Input,
        Ability::Output,
        Ability::Mastery,
        Ability::Creation,
    ];

    /// Single-letter symbol: I, O, S or C.
    pub fn symbol(self) -> &'static str {
        match self {
            Ability::Input => "I",
            Ability::Output => "O",
            Ability::Mastery => "S",
            Ability::Creation => "C",
        }
    }
}

impl fmt::Display for Ability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Ability::Input => "Input",
            Ability::Output => "Output",
            Ability::Mastery => "Mastery",
            Ability::Creation => "Creation",
        };
        f.write_str(name)
    }
}

/// Weights `a`, `b`, `c`, `d` of the Input, Output, Mastery and Creation scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightVector {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for WeightVector {
    fn default() -> Self {
        Self::EQUAL
    }
}

impl WeightVector {
    pub const EQUAL: WeightVector = WeightVector {
        a: 0.25,
        b: 0.25,
        c: 0.25,
        d: 0.25,
    };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub fn weight(&self, ability: Ability) -> f64 {
        match ability {
            Ability::Input => self.a,
            Ability::Output => self.b,
            Ability::Mastery => self.c,
            Ability::Creation => self.d,
        }
    }

    pub fn sum(&self) -> f64 {
        self.a + self.b + self.c + self.d
    }

    /// Violations of the weight invariants, in `a, b, c, d` order then the sum.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (name, value) in [('a', self.a), ('b', self.b), ('c', self.c), ('d', self.d)] {
            if !(0.0..=1.0).contains(&value) {
                out.push(Violation::WeightOutOfRange { weight: name, value });
            }
        }
        let sum = self.sum();
        if !sum.is_finite() || (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            out.push(Violation::WeightSum { sum });
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.violations().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Text,
    ImageRef,
    AudioRef,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::ImageRef => "image-ref",
            Modality::AudioRef => "audio-ref",
        })
    }
}

/// Item stimulus. Media prompts carry a URI in `content` and are never decoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prompt {
    pub modality: Modality,
    pub content: String,
}

impl Prompt {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            modality: Modality::Text,
            content: content.into(),
        }
    }
}

/// How a response to an item is turned into points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", deny_unknown_fields)]
pub enum ScoringMode {
    /// Full marks iff the normalized response equals one of the normalized keys.
    ExactMatch { keys: Vec<String> },
    /// Sum of the points of every keyword found in the response, capped.
    KeywordRubric {
        keywords: BTreeMap<String, f64>,
        cap: f64,
    },
    /// Full marks iff the parsed response is within `tolerance` of `value`.
    NumericAnswer { value: f64, tolerance: f64 },
    /// Scored by a human grader against `rubric`, in increments of `step`.
    HumanRubric { rubric: String, step: f64 },
}

impl ScoringMode {
    pub fn is_machine_scorable(&self) -> bool {
        !matches!(self, ScoringMode::HumanRubric { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoringMode::ExactMatch { .. } => "ExactMatch",
            ScoringMode::KeywordRubric { .. } => "KeywordRubric",
            ScoringMode::NumericAnswer { .. } => "NumericAnswer",
            ScoringMode::HumanRubric { .. } => "HumanRubric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestItem {
    pub id: String,
    pub prompt: Prompt,
    pub max_points: f64,
    pub scoring: ScoringMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subtest {
    pub id: String,
    pub ability: Ability,
    pub title: String,
    pub items: Vec<TestItem>,
    pub max_points: f64,
}

impl Subtest {
    pub fn item_points_total(&self) -> f64 {
        self.items.iter().map(|i| i.max_points).sum()
    }
}

/// What happens to items the subject did not answer (timeout, transport
/// failure, refusal).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum NonAnswerPolicy {
    /// Zero points, flagged `auto_zero`.
    #[default]
    AutoZero,
    /// Queue the item for a human grader instead.
    HumanReview,
}

impl NonAnswerPolicy {
    fn is_default(&self) -> bool {
        *self == NonAnswerPolicy::AutoZero
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Battery {
    pub id: String,
    pub version: String,
    pub weights: WeightVector,
    pub subtests: Vec<Subtest>,
    #[serde(default, skip_serializing_if = "NonAnswerPolicy::is_default")]
    pub non_answer_policy: NonAnswerPolicy,
}

/// Reference to a specific battery version.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryRef {
    pub id: String,
    pub version: String,
}

impl fmt::Display for BatteryRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.id, self.version)
    }
}

impl Battery {
    pub fn battery_ref(&self) -> BatteryRef {
        BatteryRef {
            id: self.id.clone(),
            version: self.version.clone(),
        }
    }

    /// Every item in administration order, paired with its subtest.
    pub fn items(&self) -> impl Iterator<Item = (&Subtest, &TestItem)> {
        self.subtests
            .iter()
            .flat_map(|s| s.items.iter().map(move |i| (s, i)))
    }

    pub fn item_count(&self) -> usize {
        self.subtests.iter().map(|s| s.items.len()).sum()
    }

    pub fn find_item(&self, item_id: &str) -> Option<(&Subtest, &TestItem)> {
        self.items().find(|(_, i)| i.id == item_id)
    }

    /// Items grouped by ability: `item_id -> ability`.
    pub fn item_abilities(&self) -> HashMap<&str, Ability> {
        self.items().map(|(s, i)| (i.id.as_str(), s.ability)).collect()
    }

    pub fn validate(&self) -> ValidationReport {
        validate_battery(self)
    }

    pub fn to_canonical_json(&self) -> String {
        canonical::to_string(self).expect("battery serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, LoadError> {
        canonical::from_str(text).map_err(LoadError::from_json)
    }
}

/// One broken battery invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyField {
        field: &'static str,
    },
    WeightOutOfRange {
        weight: char,
        value: f64,
    },
    WeightSum {
        sum: f64,
    },
    DuplicateSubtestId {
        subtest: String,
    },
    EmptySubtest {
        subtest: String,
    },
    DuplicateItemId {
        item: String,
        subtest: String,
    },
    InvalidItemMaxPoints {
        item: String,
        value: f64,
    },
    SubtestMaxPointsMismatch {
        subtest: String,
        declared: f64,
        computed: f64,
    },
    InvalidScoring {
        item: String,
        reason: String,
    },
    AbilityUncovered(Ability),
}

impl Violation {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Violation::EmptyField { .. } => "EmptyField",
            Violation::WeightOutOfRange { .. } => "WeightOutOfRange",
            Violation::WeightSum { .. } => "WeightSum",
            Violation::DuplicateSubtestId { .. } => "DuplicateSubtestId",
            Violation::EmptySubtest { .. } => "EmptySubtest",
            Violation::DuplicateItemId { .. } => "DuplicateItemId",
            Violation::InvalidItemMaxPoints { .. } => "InvalidItemMaxPoints",
            Violation::SubtestMaxPointsMismatch { .. } => "SubtestMaxPointsMismatch",
            Violation::InvalidScoring { .. } => "InvalidScoring",
            Violation::AbilityUncovered(_) => "AbilityUncovered",
        }
    }

    /// Path of the offending field.
    pub fn field(&self) -> String {
        match self {
            Violation::EmptyField { field } => (*field).to_string(),
            Violation::WeightOutOfRange { weight, .. } => format!("weights.{weight}"),
            Violation::WeightSum { .. } => "weights".to_string(),
            Violation::DuplicateSubtestId { subtest } | Violation::EmptySubtest { subtest } => {
                format!("subtests[{subtest}]")
            }
            Violation::SubtestMaxPointsMismatch { subtest, .. } => {
                format!("subtests[{subtest}].max_points")
            }
            Violation::DuplicateItemId { item, subtest } => {
                format!("subtests[{subtest}].items[{item}]")
            }
            Violation::InvalidItemMaxPoints { item, .. } => format!("items[{item}].max_points"),
            Violation::InvalidScoring { item, .. } => format!("items[{item}].scoring"),
            Violation::AbilityUncovered(_) => "subtests".to_string(),
        }
    }

    pub fn reason(&self) -> String {
        match self {
            Violation::EmptyField { .. } => "must not be empty".to_string(),
            Violation::WeightOutOfRange { value, .. } => format!("{value} is outside [0, 1]"),
            Violation::WeightSum { sum } => format!("sum {} ≠ 1.0", canonical::round9(*sum)),
            Violation::DuplicateSubtestId { .. } => "duplicate subtest id".to_string(),
            Violation::EmptySubtest { .. } => "subtest has no items".to_string(),
            Violation::DuplicateItemId { .. } => "duplicate item id".to_string(),
            Violation::InvalidItemMaxPoints { value, .. } => {
                format!("{value} is not a positive number")
            }
            Violation::SubtestMaxPointsMismatch {
                declared, computed, ..
            } => format!(
                "declared {} but items sum to {}",
                canonical::round9(*declared),
                canonical::round9(*computed)
            ),
            Violation::InvalidScoring { reason, .. } => reason.clone(),
            Violation::AbilityUncovered(a) => format!("no subtest covers {a}"),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}): {}", self.code(), self.field(), self.reason())
    }
}

/// All invariant violations of a battery, in deterministic order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn codes(&self) -> Vec<&'static str> {
        self.violations.iter().map(Violation::code).collect()
    }
}

fn scoring_problems(item: &TestItem) -> Vec<String> {
    let mut reasons = Vec::new();
    match &item.scoring {
        ScoringMode::ExactMatch { keys } => {
            if keys.is_empty() {
                reasons.push("ExactMatch needs at least one key".to_string());
            }
        }
        ScoringMode::KeywordRubric { keywords, cap } => {
            if keywords.is_empty() {
                reasons.push("KeywordRubric needs at least one keyword".to_string());
            }
            if keywords.keys().any(|k| k.trim().is_empty()) {
                reasons.push("blank keyword".to_string());
            }
            if keywords.values().any(|p| !p.is_finite() || *p < 0.0) {
                reasons.push("keyword points must be non-negative".to_string());
            }
            if !cap.is_finite() || *cap <= 0.0 || *cap > item.max_points + POINTS_TOLERANCE {
                reasons.push(format!("cap {cap} must be in (0, max_points]"));
            }
        }
        ScoringMode::NumericAnswer { value, tolerance } => {
            if !value.is_finite() {
                reasons.push("numeric value must be finite".to_string());
            }
            if !tolerance.is_finite() || *tolerance < 0.0 {
                reasons.push("tolerance must be non-negative".to_string());
            }
        }
        ScoringMode::HumanRubric { rubric, step } => {
            if rubric.trim().is_empty() {
                reasons.push("rubric text must not be empty".to_string());
            }
            if !step.is_finite() || *step <= 0.0 {
                reasons.push("step must be positive".to_string());
            }
        }
    }
    reasons
}

/// Checks every battery invariant and reports all violations.
///
/// Item ids must be unique across the whole battery, since sessions key
/// responses by item id.
pub fn validate_battery(b: &Battery) -> ValidationReport {
    let mut violations = Vec::new();
    if b.id.trim().is_empty() {
        violations.push(Violation::EmptyField { field: "id" });
    }
    if b.version.trim().is_empty() {
        violations.push(Violation::EmptyField { field: "version" });
    }
    violations.extend(b.weights.violations());

    let mut subtest_ids = HashSet::new();
    let mut item_ids = HashSet::new();
    for subtest in &b.subtests {
        if !subtest_ids.insert(subtest.id.as_str()) {
            violations.push(Violation::DuplicateSubtestId {
                subtest: subtest.id.clone(),
            });
        }
        if subtest.items.is_empty() {
            violations.push(Violation::EmptySubtest {
                subtest: subtest.id.clone(),
            });
        }
        for item in &subtest.items {
            if !item_ids.insert(item.id.as_str()) {
                violations.push(Violation::DuplicateItemId {
                    item: item.id.clone(),
                    subtest: subtest.id.clone(),
                });
            }
            if !item.max_points.is_finite() || item.max_points <= 0.0 {
                violations.push(Violation::InvalidItemMaxPoints {
                    item: item.id.clone(),
                    value: item.max_points,
                });
            }
            for reason in scoring_problems(item) {
                violations.push(Violation::InvalidScoring {
                    item: item.id.clone(),
                    reason,
                });
            }
        }
        let computed = subtest.item_points_total();
        if !subtest.items.is_empty()
            && (!subtest.max_points.is_finite() || (subtest.max_points - computed).abs() > POINTS_TOLERANCE)
        {
            violations.push(Violation::SubtestMaxPointsMismatch {
                subtest: subtest.id.clone(),
                declared: subtest.max_points,
                computed,
            });
        }
    }

    for ability in Ability::ALL {
        if !b.subtests.iter().any(|s| s.ability == ability) {
            violations.push(Violation::AbilityUncovered(ability));
        }
    }
    ValidationReport { violations }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("battery file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("cannot read battery file: {0}")]
    Io(#[from] io::Error),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation in {field}: {reason}")]
    SchemaViolation { field: String, reason: String },
}

impl LoadError {
    pub(crate) fn from_json(e: serde_json::Error) -> Self {
        LoadError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// Parses and validates a battery. The first violation is reported as a
/// [`LoadError::SchemaViolation`].
pub fn parse_battery(text: &str) -> Result<Battery, LoadError> {
    let battery = Battery::from_json_str(text)?;
    if let Some(v) = validate_battery(&battery).violations.into_iter().next() {
        return Err(LoadError::SchemaViolation {
            field: v.field(),
            reason: v.reason(),
        });
    }
    Ok(battery)
}

pub fn load_battery(path: impl AsRef<Path>) -> Result<Battery, LoadError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => LoadError::FileNotFound(path.to_path_buf()),
        _ => LoadError::Io(e),
    })?;
    parse_battery(&text)
}

pub fn save_battery(b: &Battery, path: impl AsRef<Path>) -> io::Result<()> {
    fs::write(path, b.to_canonical_json())
}

/// The built-in `reference-battery-v1`: 15 subtests (Input 3, Output 3,
/// Mastery 4, Creation 5) with equal weights.
pub fn reference_battery() -> Battery {
    parse_battery(REFERENCE_BATTERY_JSON).expect("bundled reference battery is valid")
}

pub fn reference_battery_json() -> &'static str {
    REFERENCE_BATTERY_JSON
}
