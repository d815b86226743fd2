//! Intelligence grades 0 to 6.
//!
//! Grades 0 and 1 are decided by the I/O flags alone: a one-way system is
//! grade 0 and a system with neither input nor output is grade 1. Every
//! other system climbs a cumulative ladder:
//!
//! | grade | requires (in addition to the rung below)          |
//! |-------|---------------------------------------------------|
//! | 2     | f(I) > 0, f(O) > 0, retained knowledge α > 0      |
//! | 3     | α increases with time                             |
//! | 4     | knowledge shared with other systems               |
//! | 5     | f(C) > 0                                          |
//!
//! Grade 6 is reached only when I, O, S and C are all declared unbounded.
//! A system with I/O but no retained knowledge sits below the ladder at
//! grade 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::Ability;
use crate::scoring::IqResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradingError {
    #[error("storage observations must be strictly increasing in time (index {index})")]
    UnsortedObservations { index: usize },
    #[error("invalid profile: {0}")]
    ProfileInvalid(String),
    #[error("epsilon must be a finite number >= 0, got {0}")]
    InvalidEpsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageObservation {
    pub t: DateTime<Utc>,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StorageTrend {
    Empty,
    Zero,
    Fixed,
    Increasing,
}

impl StorageTrend {
    pub const ALL: [StorageTrend; 4] = [
        StorageTrend::Empty,
        StorageTrend::Zero,
        StorageTrend::Fixed,
        StorageTrend::Increasing,
    ];

    /// Knowledge is retained (α > 0).
    pub fn retains(self) -> bool {
        matches!(self, StorageTrend::Fixed | StorageTrend::Increasing)
    }
}

fn check_eps(eps: f64) -> Result<(), GradingError> {
    if eps.is_finite() && eps >= 0.0 {
        Ok(())
    } else {
        Err(GradingError::InvalidEpsilon(eps))
    }
}

/// Classifies a time series of retained-knowledge magnitudes.
pub fn storage_trend(obs: &[StorageObservation], eps: f64) -> Result<StorageTrend, GradingError> {
    check_eps(eps)?;
    if let Some(index) = obs.windows(2).position(|w| w[1].t <= w[0].t) {
        return Err(GradingError::UnsortedObservations { index: index + 1 });
    }
    let (Some(first), Some(last)) = (obs.first(), obs.last()) else {
        return Ok(StorageTrend::Empty);
    };
    if obs.iter().all(|o| o.alpha <= eps) {
        Ok(StorageTrend::Zero)
    } else if obs.len() >= 2 && last.alpha > first.alpha + eps {
        Ok(StorageTrend::Increasing)
    } else {
        Ok(StorageTrend::Fixed)
    }
}

/// Structural facts about a subject, measured or declared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapabilityProfile {
    pub subject_ref: String,
    pub input_positive: bool,
    pub output_positive: bool,
    #[serde(default)]
    pub storage_observations: Vec<StorageObservation>,
    pub sharing: bool,
    pub creation_positive: bool,
    /// Abilities declared to grow without bound.
    #[serde(default)]
    pub unbounded: BTreeSet<Ability>,
    #[serde(default)]
    pub evidence_notes: BTreeMap<String, String>,
}

impl CapabilityProfile {
    pub fn new(subject_ref: impl Into<String>) -> Self {
        Self {
            subject_ref: subject_ref.into(),
            input_positive: false,
            output_positive: false,
            storage_observations: Vec::new(),
            sharing: false,
            creation_positive: false,
            unbounded: BTreeSet::new(),
            evidence_notes: BTreeMap::new(),
        }
    }

    /// Measured part of a profile from a subject's results: positivity from
    /// the latest result, storage observations from the mastery score over
    /// time. Sharing and unbounded markers are left for the assessor.
    pub fn measured(subject_ref: &str, results: &[IqResult]) -> Self {
        let mut own: Vec<&IqResult> = results.iter().filter(|r| r.subject_ref == subject_ref).collect();
        own.sort_by_key(|r| r.computed_at);
        own.dedup_by_key(|r| r.computed_at);
        let mut profile = Self::new(subject_ref);
        if let Some(latest) = own.last() {
            let s = &latest.ability_scores;
            profile.input_positive = s.input > 0.0;
            profile.output_positive = s.output > 0.0;
            profile.creation_positive = s.creation > 0.0;
        }
        profile.storage_observations = own
            .iter()
            .map(|r| StorageObservation {
                t: r.computed_at,
                alpha: r.ability_scores.mastery,
            })
            .collect();
        profile
    }

    pub fn validate(&self) -> Result<(), GradingError> {
        if let Some(index) = self
            .storage_observations
            .windows(2)
            .position(|w| w[1].t <= w[0].t)
        {
            return Err(GradingError::UnsortedObservations { index: index + 1 });
        }
        if let Some(o) = self
            .storage_observations
            .iter()
            .find(|o| !o.alpha.is_finite() || o.alpha < 0.0)
        {
            return Err(GradingError::ProfileInvalid(format!(
                "alpha {} at {} must be a finite number >= 0",
                o.alpha, o.t
            )));
        }
        for ability in &self.unbounded {
            let backed = match ability {
                Ability::Input => self.input_positive,
                Ability::Output => self.output_positive,
                Ability::Creation => self.creation_positive,
                Ability::Mastery => self.storage_observations.iter().any(|o| o.alpha > 0.0),
            };
            if !backed {
                return Err(GradingError::ProfileInvalid(format!(
                    "unbounded {} requires f({}) > 0",
                    ability,
                    ability.symbol()
                )));
            }
        }
        Ok(())
    }
}

/// One condition of a grade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    InputPositive,
    InputZero,
    OutputPositive,
    OutputZero,
    StorageRetained,
    StorageFixed,
    StorageIncreasing,
    KnowledgeShared,
    CreationPositive,
    UnboundedInput,
    UnboundedOutput,
    UnboundedMastery,
    UnboundedCreation,
}

impl Condition {
    fn unbounded(a: Ability) -> Self {
        match a {
            Ability::Input => Condition::UnboundedInput,
            Ability::Output => Condition::UnboundedOutput,
            Ability::Mastery => Condition::UnboundedMastery,
            Ability::Creation => Condition::UnboundedCreation,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::InputPositive => "f(I) > 0",
            Condition::InputZero => "f(I) = 0",
            Condition::OutputPositive => "f(O) > 0",
            Condition::OutputZero => "f(O) = 0",
            Condition::StorageRetained => "f(S) = α > 0",
            Condition::StorageFixed => "α fixed over time",
            Condition::StorageIncreasing => "α increasing over time",
            Condition::KnowledgeShared => "knowledge shared with other systems",
            Condition::CreationPositive => "f(C) > 0",
            Condition::UnboundedInput => "f(I) unbounded",
            Condition::UnboundedOutput => "f(O) unbounded",
            Condition::UnboundedMastery => "f(S) unbounded",
            Condition::UnboundedCreation => "f(C) unbounded",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeResult {
    pub grade: u8,
    pub matched_conditions: Vec<Condition>,
    /// Unmet conditions of the next grade; empty only at grade 6.
    pub next_grade_gaps: Vec<Condition>,
    /// Grades 0 and 1.
    pub degenerate: bool,
    pub storage_trend: StorageTrend,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Facts the classifier looks at, after the storage series is reduced.
#[derive(Debug, Clone, Copy)]
struct Facts {
    input: bool,
    output: bool,
    trend: StorageTrend,
    sharing: bool,
    creation: bool,
}

impl Facts {
    fn holds(&self, c: Condition, unbounded: &BTreeSet<Ability>) -> bool {
        match c {
            Condition::InputPositive => self.input,
            Condition::InputZero => !self.input,
            Condition::OutputPositive => self.output,
            Condition::OutputZero => !self.output,
            Condition::StorageRetained => self.trend.retains(),
            Condition::StorageFixed => self.trend == StorageTrend::Fixed,
            Condition::StorageIncreasing => self.trend == StorageTrend::Increasing,
            Condition::KnowledgeShared => self.sharing,
            Condition::CreationPositive => self.creation,
            Condition::UnboundedInput => unbounded.contains(&Ability::Input),
            Condition::UnboundedOutput => unbounded.contains(&Ability::Output),
            Condition::UnboundedMastery => unbounded.contains(&Ability::Mastery),
            Condition::UnboundedCreation => unbounded.contains(&Ability::Creation),
        }
    }
}

/// Requirements of ladder rung `grade` (2..=6), cumulative for 2..=5.
pub fn rung_requirements(grade: u8) -> Vec<Condition> {
    use Condition::*;
    match grade {
        2 => vec![InputPositive, OutputPositive, StorageRetained],
        3 => vec![InputPositive, OutputPositive, StorageRetained, StorageIncreasing],
        4 => vec![
            InputPositive,
            OutputPositive,
            StorageRetained,
            StorageIncreasing,
            KnowledgeShared,
        ],
        5 => vec![
            InputPositive,
            OutputPositive,
            StorageRetained,
            StorageIncreasing,
            KnowledgeShared,
            CreationPositive,
        ],
        6 => Ability::ALL.iter().map(|&a| Condition::unbounded(a)).collect(),
        _ => Vec::new(),
    }
}

/// Maps a capability profile to a grade with diagnostics.
pub fn classify_grade(p: &CapabilityProfile, eps: f64) -> Result<GradeResult, GradingError> {
    p.validate()?;
    let trend = storage_trend(&p.storage_observations, eps)?;
    let facts = Facts {
        input: p.input_positive,
        output: p.output_positive,
        trend,
        sharing: p.sharing,
        creation: p.creation_positive,
    };
    let unmet = |grade: u8| -> Vec<Condition> {
        rung_requirements(grade)
            .into_iter()
            .filter(|c| !facts.holds(*c, &p.unbounded))
            .collect()
    };
    let mut notes = Vec::new();

    if facts.input != facts.output || (!facts.input && !facts.output) {
        let (grade, matched) = match (facts.input, facts.output) {
            (true, false) => (0, vec![Condition::InputPositive, Condition::OutputZero]),
            (false, true) => (0, vec![Condition::InputZero, Condition::OutputPositive]),
            _ => (1, vec![Condition::InputZero, Condition::OutputZero]),
        };
        notes.push("no two-way exchange with testers; other capabilities are not assessed".into());
        return Ok(GradeResult {
            grade,
            matched_conditions: matched,
            // grade 1 is reached from grade 0 only by losing a channel, so
            // the gaps point at the first grade reachable by adding one
            next_grade_gaps: unmet(2),
            degenerate: true,
            storage_trend: trend,
            notes,
        });
    }

    let fully_unbounded = Ability::ALL.iter().all(|a| p.unbounded.contains(a));
    let mut grade = 0u8;
    for rung in 2..=5u8 {
        if unmet(rung).is_empty() {
            grade = rung;
        } else {
            break;
        }
    }
    let mut matched: Vec<Condition> = if grade >= 2 {
        rung_requirements(grade)
    } else {
        vec![Condition::InputPositive, Condition::OutputPositive]
    };
    if grade == 2 && trend == StorageTrend::Fixed {
        matched.push(Condition::StorageFixed);
    }
    if grade == 0 {
        notes.push(format!(
            "two-way I/O but no retained knowledge (storage trend {trend:?})"
        ));
    }
    if facts.creation && grade < 5 {
        notes.push(format!(
            "creation is present but grade 5 also needs: {}",
            unmet(5)
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    if fully_unbounded {
        grade = 6;
        matched = vec![Condition::InputPositive, Condition::OutputPositive];
        matched.extend(rung_requirements(6));
    } else if !p.unbounded.is_empty() {
        notes.push("only some abilities are declared unbounded".into());
    }
    let next_grade_gaps = match grade {
        6 => Vec::new(),
        0 => unmet(2),
        g => unmet(g + 1),
    };
    Ok(GradeResult {
        grade,
        matched_conditions: matched,
        next_grade_gaps,
        degenerate: grade <= 1,
        storage_trend: trend,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t(year: i32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(year, 1, 1, 0, 0, 0).unwrap()
    }

    fn obs(points: &[(i32, f64)]) -> Vec<StorageObservation> {
        points
            .iter()
            .map(|&(y, alpha)| StorageObservation { t: t(y), alpha })
            .collect()
    }

    #[test]
    fn trend_examples() {
        assert_eq!(storage_trend(&[], 0.0).unwrap(), StorageTrend::Empty);
        assert_eq!(
            storage_trend(&obs(&[(2014, 5.0), (2015, 5.0)]), 0.0).unwrap(),
            StorageTrend::Fixed
        );
        assert_eq!(
            storage_trend(&obs(&[(2014, 5.0), (2015, 7.0)]), 0.0).unwrap(),
            StorageTrend::Increasing
        );
        assert_eq!(
            storage_trend(&obs(&[(2014, 0.0), (2015, 0.0)]), 0.0).unwrap(),
            StorageTrend::Zero
        );
        assert_eq!(
            storage_trend(&obs(&[(2014, 5.0)]), 0.0).unwrap(),
            StorageTrend::Fixed
        );
        // within eps counts as fixed
        assert_eq!(
            storage_trend(&obs(&[(2014, 5.0), (2015, 5.5)]), 1.0).unwrap(),
            StorageTrend::Fixed
        );
        assert_eq!(
            storage_trend(&obs(&[(2015, 5.0), (2014, 5.0)]), 0.0),
            Err(GradingError::UnsortedObservations { index: 1 })
        );
        assert!(storage_trend(&[], -1.0).is_err());
    }

    #[test]
    fn unbounded_requires_positive_flag() {
        let mut p = CapabilityProfile::new("x");
        p.unbounded.insert(Ability::Creation);
        assert!(matches!(
            classify_grade(&p, 0.0),
            Err(GradingError::ProfileInvalid(_))
        ));
    }

    #[test]
    fn degenerate_io_dominates() {
        let mut p = CapabilityProfile::new("x");
        p.input_positive = true;
        p.sharing = true;
        p.creation_positive = true;
        p.storage_observations = obs(&[(2014, 1.0), (2016, 4.0)]);
        let g = classify_grade(&p, 0.0).unwrap();
        assert_eq!(g.grade, 0);
        assert!(g.degenerate);
        assert_eq!(g.next_grade_gaps, vec![Condition::OutputPositive]);
    }

    #[test]
    fn io_without_storage_is_below_ladder() {
        let mut p = CapabilityProfile::new("x");
        p.input_positive = true;
        p.output_positive = true;
        let g = classify_grade(&p, 0.0).unwrap();
        assert_eq!(g.grade, 0);
        assert!(g.degenerate);
        assert_eq!(g.next_grade_gaps, vec![Condition::StorageRetained]);
    }

    #[test]
    fn creative_but_unshared_stops_at_three() {
        let mut p = CapabilityProfile::new("x");
        p.input_positive = true;
        p.output_positive = true;
        p.creation_positive = true;
        p.storage_observations = obs(&[(2014, 1.0), (2016, 4.0)]);
        let g = classify_grade(&p, 0.0).unwrap();
        assert_eq!(g.grade, 3);
        assert_eq!(g.next_grade_gaps, vec![Condition::KnowledgeShared]);
        assert!(g.notes.iter().any(|n| n.contains("creation is present")));
    }

    #[test]
    fn profile_json_accepts_symbols() {
        let text = r#"{"subject_ref":"g","input_positive":true,"output_positive":true,
            "sharing":true,"creation_positive":true,"unbounded":["I","O","S","C"],
            "storage_observations":[{"t":"2014-01-01T00:00:00Z","alpha":1.0}]}"#;
        let p: CapabilityProfile = serde_json::from_str(text).unwrap();
        assert_eq!(p.unbounded.len(), 4);
        assert_eq!(classify_grade(&p, 0.0).unwrap().grade, 6);
    }
}
