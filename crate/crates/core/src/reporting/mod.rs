//! Ranking tables, longitudinal trend assessments and CSV export.

mod rank;
mod trend;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::administration::RecordedIq;
use crate::scoring::IqResult;

pub use rank::{rank_report, RankInput, RankRow, RankTable};
pub use trend::{fit_line, trend_report, LineFit, Scenario, TrendAssessment, TrendPoint, SECONDS_PER_YEAR};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("subject {0} appears more than once")]
    DuplicateSubject(String),
    #[error("series for {0} needs at least two points at distinct times")]
    InsufficientData(String),
    #[error("baseline subject {0} has no series")]
    UnknownBaseline(String),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
}

fn write_err(path: &Path) -> impl Fn(io::Error) -> ReportError + '_ {
    move |source| ReportError::Write {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ReportError + '_ {
    move |e| ReportError::Write {
        path: path.to_path_buf(),
        source: io::Error::other(e),
    }
}

/// A subject's IQ at a point in time, from a session or a recorded value.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub subject_ref: String,
    pub at: DateTime<Utc>,
    pub q: f64,
}

impl From<&IqResult> for Observation {
    fn from(r: &IqResult) -> Self {
        Self {
            subject_ref: r.subject_ref.clone(),
            at: r.computed_at,
            q: r.q.raw(),
        }
    }
}

impl From<&RecordedIq> for Observation {
    fn from(r: &RecordedIq) -> Self {
        Self {
            subject_ref: r.subject_ref.clone(),
            at: r.as_of,
            q: r.q,
        }
    }
}

/// The most recent observation per subject, ignoring anything after `as_of`.
/// Among equal timestamps the later entry in `obs` wins.
pub fn latest_per_subject(obs: &[Observation], as_of: Option<DateTime<Utc>>) -> Vec<RankInput> {
    let mut latest: BTreeMap<&str, &Observation> = BTreeMap::new();
    for o in obs.iter().filter(|o| as_of.is_none_or(|t| o.at <= t)) {
        match latest.get(o.subject_ref.as_str()) {
            Some(prev) if prev.at > o.at => {}
            _ => {
                latest.insert(&o.subject_ref, o);
            }
        }
    }
    latest
        .into_values()
        .map(|o| RankInput::new(o.subject_ref.clone(), o.q))
        .collect()
}

/// Groups observations into time-ordered series per subject. Exact duplicates
/// are kept once.
pub fn series(obs: &[Observation]) -> BTreeMap<String, Vec<TrendPoint>> {
    let mut out: BTreeMap<String, Vec<TrendPoint>> = BTreeMap::new();
    for o in obs {
        let points = out.entry(o.subject_ref.clone()).or_default();
        let p = TrendPoint::new(o.at, o.q);
        if !points.contains(&p) {
            points.push(p);
        }
    }
    for points in out.values_mut() {
        points.sort_by(|x, y| x.at.cmp(&y.at).then(x.q.total_cmp(&y.q)));
    }
    out
}

/// Writes `table` as CSV with a header row.
pub fn write_rank_csv<W: Write>(table: &RankTable, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "rank",
        "subject_id",
        "display_name",
        "category",
        "region",
        "country",
        "Q",
    ])?;
    for row in &table.rows {
        w.write_record([
            row.rank.to_string(),
            row.subject_id.clone(),
            row.display_name.clone(),
            row.category.clone().unwrap_or_default(),
            row.region.clone().unwrap_or_default(),
            row.country.clone().unwrap_or_default(),
            row.q.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trend_csv<W: Write>(rows: &[TrendAssessment], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "subject_id",
        "scenario",
        "slope_per_year",
        "human_baseline",
        "crossing_time",
    ])?;
    for a in rows {
        w.write_record([
            a.subject_ref.clone(),
            a.scenario.to_string(),
            format!("{:.6}", a.slope),
            a.human_baseline_ref.clone(),
            a.crossing_time
                .map(|t| t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
                .unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// What [`export_csv`] can write.
pub enum CsvReport<'a> {
    Rank(&'a RankTable),
    Trend(&'a [TrendAssessment]),
}

/// Writes a report to `path` as UTF-8 CSV and returns the path.
pub fn export_csv(report: CsvReport<'_>, path: impl AsRef<Path>) -> Result<PathBuf, ReportError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(write_err(path))?;
    let mut out = BufWriter::new(file);
    match report {
        CsvReport::Rank(t) => write_rank_csv(t, &mut out),
        CsvReport::Trend(rows) => write_trend_csv(rows, &mut out),
    }
    .map_err(csv_err(path))?;
    out.flush().map_err(write_err(path))?;
    Ok(path.to_path_buf())
}
