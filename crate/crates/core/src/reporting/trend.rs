//! Trend assessment of IQ series against a human baseline.
//!
//! Each series is fitted with an ordinary least-squares line in time (years).
//! A subject is labeled:
//!
//! * `A` when its line crosses above the baseline's line inside the observed
//!   window or within one further window length;
//! * `C` when it is rising, still below the baseline at the end of the window
//!   and closing the gap, but does not cross within that horizon;
//! * `Indeterminate` otherwise.
//!
//! The baseline series itself is labeled `B`.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use super::ReportError;

/// Length of a Julian year.
pub const SECONDS_PER_YEAR: f64 = 31_557_600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub at: DateTime<Utc>,
    #[serde(rename = "Q")]
    pub q: f64,
}

impl TrendPoint {
    pub fn new(at: DateTime<Utc>, q: f64) -> Self {
        Self { at, q }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    A,
    B,
    C,
    Indeterminate,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendAssessment {
    pub subject_ref: String,
    /// IQ points per year.
    pub slope: f64,
    pub human_baseline_ref: String,
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossing_time: Option<DateTime<Utc>>,
    /// `crossing_time` as fractional years since the Unix epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossing_year: Option<f64>,
}

/// Least-squares line `q = mean_q + slope · (years − mean_years)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub mean_years: f64,
    pub mean_q: f64,
}

impl LineFit {
    pub fn at(&self, years: f64) -> f64 {
        self.mean_q + self.slope * (years - self.mean_years)
    }
}

pub(crate) fn years(t: DateTime<Utc>) -> f64 {
    t.timestamp() as f64 / SECONDS_PER_YEAR + f64::from(t.timestamp_subsec_nanos()) / 1e9 / SECONDS_PER_YEAR
}

fn from_years(y: f64) -> Option<DateTime<Utc>> {
    let secs = y * SECONDS_PER_YEAR;
    let whole = secs.floor();
    let nanos = ((secs - whole) * 1e9).round().min(999_999_999.0) as u32;
    Utc.timestamp_opt(whole as i64, nanos).single()
}

/// Fits a line to `(years, q)` pairs. `None` without two distinct times.
pub fn fit_line(points: &[(f64, f64)]) -> Option<LineFit> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mean_years = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_q = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_years).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_years) * (p.1 - mean_q)).sum();
    Some(LineFit {
        slope: sxy / sxx,
        mean_years,
        mean_q,
    })
}

fn fit_series(subject: &str, series: &[TrendPoint]) -> Result<(LineFit, f64, f64), ReportError> {
    let pts: Vec<(f64, f64)> = series.iter().map(|p| (years(p.at), p.q)).collect();
    let fit = fit_line(&pts).ok_or_else(|| ReportError::InsufficientData(subject.to_string()))?;
    let start = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let end = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    Ok((fit, start, end))
}

/// Assesses every series against `human_baseline`. Output is ordered by
/// subject id.
pub fn trend_report(
    series: &BTreeMap<String, Vec<TrendPoint>>,
    human_baseline: &str,
) -> Result<Vec<TrendAssessment>, ReportError> {
    let baseline_series = series
        .get(human_baseline)
        .ok_or_else(|| ReportError::UnknownBaseline(human_baseline.to_string()))?;
    let (baseline, _, _) = fit_series(human_baseline, baseline_series)?;

    let mut out = Vec::with_capacity(series.len());
    for (subject, points) in series {
        let (fit, start, end) = fit_series(subject, points)?;
        let mut assessment = TrendAssessment {
            subject_ref: subject.clone(),
            slope: fit.slope,
            human_baseline_ref: human_baseline.to_string(),
            scenario: Scenario::Indeterminate,
            crossing_time: None,
            crossing_year: None,
        };
        if subject == human_baseline {
            assessment.scenario = Scenario::B;
            out.push(assessment);
            continue;
        }
        let horizon = end + (end - start);
        let closing = fit.slope > baseline.slope;
        // fitted lines meet where subject(x) = baseline(x)
        let crossing = closing.then(|| {
            let subject_at_0 = fit.mean_q - fit.slope * fit.mean_years;
            let baseline_at_0 = baseline.mean_q - baseline.slope * baseline.mean_years;
            (baseline_at_0 - subject_at_0) / (fit.slope - baseline.slope)
        });
        match crossing {
            Some(x) if x >= start && x <= horizon => {
                assessment.scenario = Scenario::A;
                assessment.crossing_year = Some(x);
                assessment.crossing_time = from_years(x);
            }
            Some(x) if x > horizon && fit.slope > 0.0 && baseline.at(end) > fit.at(end) => {
                assessment.scenario = Scenario::C;
            }
            _ => {}
        }
        out.push(assessment);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn year(y: f64) -> DateTime<Utc> {
        from_years(y - 1970.0).unwrap()
    }

    #[test]
    fn year_conversion_round_trips() {
        let t = Utc.with_ymd_and_hms(2016, 6, 30, 12, 0, 0).unwrap();
        assert_eq!(from_years(years(t)).unwrap(), t);
    }

    #[test]
    fn fit_recovers_exact_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3.0 + 2.5 * i as f64)).collect();
        let fit = fit_line(&pts).unwrap();
        assert!((fit.slope - 2.5).abs() < 1e-12);
        assert!((fit.at(10.0) - 28.0).abs() < 1e-12);
        assert!(fit_line(&[(1.0, 2.0), (1.0, 3.0)]).is_none());
    }

    #[test]
    fn single_point_is_insufficient() {
        let mut series = BTreeMap::new();
        series.insert(
            "human".to_string(),
            vec![
                TrendPoint::new(year(2014.0), 97.0),
                TrendPoint::new(year(2016.0), 97.0),
            ],
        );
        series.insert("ai".to_string(), vec![TrendPoint::new(year(2014.0), 20.0)]);
        assert!(matches!(trend_report(&series, "human"), Err(ReportError::InsufficientData(s)) if s == "ai"));
        assert!(matches!(
            trend_report(&series, "nobody"),
            Err(ReportError::UnknownBaseline(_))
        ));
    }

    #[test]
    fn declining_subject_is_indeterminate() {
        let mut series = BTreeMap::new();
        series.insert(
            "human".to_string(),
            vec![
                TrendPoint::new(year(2014.0), 97.0),
                TrendPoint::new(year(2016.0), 97.0),
            ],
        );
        series.insert(
            "ai".to_string(),
            vec![
                TrendPoint::new(year(2014.0), 40.0),
                TrendPoint::new(year(2016.0), 30.0),
            ],
        );
        let out = trend_report(&series, "human").unwrap();
        assert_eq!(out[0].scenario, Scenario::Indeterminate);
        assert_eq!(out[1].scenario, Scenario::B);
    }
}
