//! Subjects, sessions and their lifecycle.
//!
//! A [`Session`] is one administration of one battery version to one subject
//! through one adapter. Sessions are persisted in a [`Store`] after every
//! administered item so an interrupted run can resume where it stopped.

mod store;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterConfig, ResponseRecord};
use crate::battery::{Battery, BatteryRef};
use crate::scoring::ItemScore;

pub use store::{
    ParseProblem, RecordedIq, RunOptions, SessionSummary, Store, StoreError, INDEX_FILE, SUBJECTS_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubjectCategory {
    Human,
    ArtificialSystem,
}

/// A system under test, or a human baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subject {
    pub id: String,
    pub display_name: String,
    pub category: SubjectCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vintage: Option<i32>,
}

impl Subject {
    pub fn new(id: impl Into<String>, display_name: impl Into<String>, category: SubjectCategory) -> Self {
        Self {
            id: id.into(),
            display_name: display_name.into(),
            category,
            region: None,
            country: None,
            vintage: None,
        }
    }

    pub fn with_region(mut self, region: impl Into<String>, country: impl Into<String>) -> Self {
        self.region = Some(region.into());
        self.country = Some(country.into());
        self
    }
}

/// Subject ids double as file-name fragments.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.starts_with('.')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    Created,
    Running,
    AwaitingGrades,
    Complete,
    Aborted,
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Session {
    pub id: String,
    pub battery_ref: BatteryRef,
    pub subject_ref: String,
    pub adapter: AdapterConfig,
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    pub responses: BTreeMap<String, ResponseRecord>,
    pub item_scores: BTreeMap<String, ItemScore>,
    pub status: SessionStatus,
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        battery: &Battery,
        subject_ref: impl Into<String>,
        adapter: AdapterConfig,
        now: DateTime<Utc>,
    ) -> Self {
        Session {
            id: id.into(),
            battery_ref: battery.battery_ref(),
            subject_ref: subject_ref.into(),
            adapter,
            started_at: now,
            finished_at: None,
            responses: BTreeMap::new(),
            item_scores: BTreeMap::new(),
            status: SessionStatus::Created,
        }
    }

    /// Administered but not yet scored.
    pub fn is_pending(&self, item_id: &str) -> bool {
        self.status != SessionStatus::Aborted
            && self.responses.contains_key(item_id)
            && !self.item_scores.contains_key(item_id)
    }

    /// Item ids awaiting a manual score, in battery order.
    pub fn pending_items<'b>(&self, battery: &'b Battery) -> Vec<&'b str> {
        battery
            .items()
            .map(|(_, i)| i.id.as_str())
            .filter(|id| self.is_pending(id))
            .collect()
    }

    /// Items without a final score, administered or not.
    pub fn unscored_items<'b>(&self, battery: &'b Battery) -> Vec<&'b str> {
        battery
            .items()
            .map(|(_, i)| i.id.as_str())
            .filter(|id| !self.item_scores.contains_key(*id))
            .collect()
    }

    pub fn all_administered(&self, battery: &Battery) -> bool {
        battery.items().all(|(_, i)| self.responses.contains_key(&i.id))
    }

    /// Moves to `AwaitingGrades` or `Complete` once every item is administered.
    pub fn refresh_status(&mut self, battery: &Battery, now: DateTime<Utc>) {
        if matches!(self.status, SessionStatus::Aborted) || !self.all_administered(battery) {
            return;
        }
        if self.unscored_items(battery).is_empty() {
            if self.status != SessionStatus::Complete {
                self.status = SessionStatus::Complete;
                self.finished_at = Some(now);
            }
        } else {
            self.status = SessionStatus::AwaitingGrades;
        }
    }

    /// Checks the session against its battery.
    pub fn check(&self, battery: &Battery) -> Result<(), String> {
        if battery.battery_ref() != self.battery_ref {
            return Err(format!(
                "session references {} but battery is {}",
                self.battery_ref,
                battery.battery_ref()
            ));
        }
        let known = battery.item_abilities();
        for (key, rec) in &self.responses {
            if key != &rec.item_id {
                return Err(format!("response keyed {key} is for {}", rec.item_id));
            }
            if !known.contains_key(key.as_str()) {
                return Err(format!("response for unknown item {key}"));
            }
        }
        for (key, score) in &self.item_scores {
            if key != &score.item_id {
                return Err(format!("score keyed {key} is for {}", score.item_id));
            }
            let Some((_, item)) = battery.find_item(key) else {
                return Err(format!("score for unknown item {key}"));
            };
            if !self.responses.contains_key(key) {
                return Err(format!("score for unadministered item {key}"));
            }
            if !(0.0..=item.max_points).contains(&score.points) {
                return Err(format!("score for {key} outside [0, {}]", item.max_points));
            }
        }
        let administered = self.all_administered(battery);
        let unscored = self.unscored_items(battery).len();
        let consistent = match self.status {
            SessionStatus::Complete => unscored == 0,
            SessionStatus::AwaitingGrades => administered && unscored > 0,
            SessionStatus::Created => self.responses.is_empty(),
            SessionStatus::Running => !administered || battery.item_count() == 0,
            SessionStatus::Aborted => true,
        };
        if !consistent {
            return Err(format!(
                "status {} inconsistent with {} response(s) and {unscored} unscored item(s)",
                self.status,
                self.responses.len()
            ));
        }
        Ok(())
    }
}
