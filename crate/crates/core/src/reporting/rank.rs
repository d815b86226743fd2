use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::administration::{RecordedIq, Subject, SubjectCategory};
use crate::scoring::{IqResult, Quotient};

/// One subject's IQ as input to a ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankInput {
    pub subject_ref: String,
    pub q: Quotient,
}

impl RankInput {
    pub fn new(subject_ref: impl Into<String>, q: f64) -> Self {
        Self {
            subject_ref: subject_ref.into(),
            q: Quotient::new(q),
        }
    }
}

impl From<&IqResult> for RankInput {
    fn from(r: &IqResult) -> Self {
        Self {
            subject_ref: r.subject_ref.clone(),
            q: r.q,
        }
    }
}

impl From<&RecordedIq> for RankInput {
    fn from(r: &RecordedIq) -> Self {
        Self::new(r.subject_ref.clone(), r.q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub subject_id: String,
    pub display_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    #[serde(rename = "Q", with = "two_decimals")]
    pub q: Quotient,
}

mod two_decimals {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::scoring::Quotient;

    pub fn serialize<S: Serializer>(q: &Quotient, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(q.rounded())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Quotient, D::Error> {
        f64::deserialize(d).map(Quotient::new)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub as_of: DateTime<Utc>,
    pub rows: Vec<RankRow>,
}

/// Ranks subjects by Q, highest first.
///
/// Ties keep distinct consecutive ranks, ordered by subject id ascending.
/// Subjects missing from `subjects` are listed under their id.
pub fn rank_report(
    results: &[RankInput],
    subjects: &[Subject],
    as_of: DateTime<Utc>,
) -> Result<RankTable, ReportError> {
    let mut seen = HashSet::new();
    for r in results {
        if !seen.insert(r.subject_ref.as_str()) {
            return Err(ReportError::DuplicateSubject(r.subject_ref.clone()));
        }
    }
    let registry: HashMap<&str, &Subject> = subjects.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut sorted: Vec<&RankInput> = results.iter().collect();
    sorted.sort_by(|x, y| {
        y.q.raw()
            .total_cmp(&x.q.raw())
            .then_with(|| x.subject_ref.cmp(&y.subject_ref))
    });
    let rows = sorted
        .into_iter()
        .enumerate()
        .map(|(n, r)| {
            let subject = registry.get(r.subject_ref.as_str());
            RankRow {
                rank: n + 1,
                subject_id: r.subject_ref.clone(),
                display_name: subject
                    .map(|s| s.display_name.clone())
                    .unwrap_or_else(|| r.subject_ref.clone()),
                category: subject.map(|s| match s.category {
                    SubjectCategory::Human => "Human".to_string(),
                    SubjectCategory::ArtificialSystem => "AI".to_string(),
                }),
                region: subject.and_then(|s| s.region.clone()),
                country: subject.and_then(|s| s.country.clone()),
                q: r.q,
            }
        })
        .collect();
    Ok(RankTable { as_of, rows })
}

impl RankTable {
    /// Plain-text table: rank, region, country, subject and Absolute IQ.
    pub fn render_text(&self) -> String {
        let header = ["Rank", "Region", "Country", "Subject", "Absolute IQ"];
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.rank.to_string(),
                    r.region.clone().unwrap_or_default(),
                    r.country
                        .clone()
                        .or_else(|| r.category.clone())
                        .unwrap_or_default(),
                    r.display_name.clone(),
                    r.q.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let mut line = |cells: [&str; 5]| {
            let mut text = String::new();
            for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
                let pad = w - cell.chars().count();
                if i == 0 || i == 4 {
                    let _ = write!(text, "{}{}", " ".repeat(pad), cell);
                } else {
                    let _ = write!(text, "{}{}", cell, " ".repeat(pad));
                }
                if i < 4 {
                    text.push_str("  ");
                }
            }
            out.push_str(text.trim_end());
            out.push('\n');
        };
        line(header);
        for row in &body {
            line([&row[0], &row[1], &row[2], &row[3], &row[4]]);
        }
        out
    }
}
