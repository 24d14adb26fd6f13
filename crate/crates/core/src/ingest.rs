//! Event loading, pre-crash windowing and validity rules.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pwl_fit::{sample_weights, PwlFit};
use crate::{G, T_START};

/// Crashes are cut here to drop the sample closest to impact.
pub const CRASH_WINDOW_END: f64 = -0.3;
/// Minimum sampled duration of a valid event, seconds.
pub const MIN_DURATION: f64 = 3.0;
/// Lowest accepted sampling frequency, Hz.
pub const MIN_SAMPLE_RATE: f64 = 5.0;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceGroup {
    #[serde(rename = "CISS_sc")]
    CissSc,
    #[serde(rename = "SHRP2_sc")]
    Shrp2Sc,
    #[serde(rename = "SHRP2_nsc")]
    Shrp2Nsc,
    #[serde(rename = "SHRP2_nc")]
    Shrp2Nc,
}

impl SourceGroup {
    pub const ALL: [SourceGroup; 4] = [
        SourceGroup::CissSc,
        SourceGroup::Shrp2Sc,
        SourceGroup::Shrp2Nsc,
        SourceGroup::Shrp2Nc,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SourceGroup::CissSc => "CISS_sc",
            SourceGroup::Shrp2Sc => "SHRP2_sc",
            SourceGroup::Shrp2Nsc => "SHRP2_nsc",
            SourceGroup::Shrp2Nc => "SHRP2_nc",
        }
    }

    /// Severity implied by the group definition.
    pub fn default_severity(self) -> Severity {
        match self {
            SourceGroup::CissSc | SourceGroup::Shrp2Sc => Severity::Severe,
            SourceGroup::Shrp2Nsc => Severity::NonSevere,
            SourceGroup::Shrp2Nc => Severity::None,
        }
    }
}

impl fmt::Display for SourceGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SourceGroup {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        let s = s.trim();
        SourceGroup::ALL
            .into_iter()
            .find(|g| g.label().eq_ignore_ascii_case(s))
            .ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Severity {
    Severe,
    NonSevere,
    None,
}

impl Severity {
    pub fn label(self) -> &'static str {
        match self {
            Severity::Severe => "Severe",
            Severity::NonSevere => "NonSevere",
            Severity::None => "None",
        }
    }

    pub fn is_crash(self) -> bool {
        self != Severity::None
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Severity {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s.trim().to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "severe" => Ok(Severity::Severe),
            "nonsevere" => Ok(Severity::NonSevere),
            "none" | "nearcrash" => Ok(Severity::None),
            _ => Err(()),
        }
    }
}

/// A loaded event: speed samples relative to time zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEvent {
    pub event_id: String,
    pub source_group: SourceGroup,
    pub severity: Severity,
    /// `(t, v)` pairs, strictly increasing in `t`.
    pub samples: Vec<(f64, f64)>,
    /// Survey weight (CISS only).
    pub native_weight: Option<f64>,
    /// Sampling frequency from the median spacing; `None` for single samples.
    pub sample_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub v: f64,
    /// Fit weight.
    pub w: f64,
}

/// A windowed event with fit weights attached.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfile {
    pub event_id: String,
    pub source_group: SourceGroup,
    pub severity: Severity,
    pub samples: Vec<Sample>,
    pub weight_sum: f64,
    pub native_weight: Option<f64>,
}

impl SpeedProfile {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.v).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.w).collect()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Back to a raw event, dropping the fit weights.
    pub fn to_raw(&self) -> RawEvent {
        let samples: Vec<(f64, f64)> = self.samples.iter().map(|s| (s.t, s.v)).collect();
        RawEvent {
            event_id: self.event_id.clone(),
            source_group: self.source_group,
            severity: self.severity,
            sample_rate: sample_rate(&samples),
            samples,
            native_weight: self.native_weight,
        }
    }
}

fn sample_rate(samples: &[(f64, f64)]) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let mut dts: Vec<f64> = samples.windows(2).map(|p| p[1].0 - p[0].0).collect();
    dts.sort_by(f64::total_cmp);
    let mid = dts.len() / 2;
    let median = if dts.len() % 2 == 0 {
        0.5 * (dts[mid - 1] + dts[mid])
    } else {
        dts[mid]
    };
    Some(1.0 / median)
}

pub(crate) fn parse_number(field: &str, name: &str, line: u64) -> Result<f64> {
    let value: f64 = field.trim().parse().map_err(|_| Error::MalformedRow {
        line,
        message: format!("{name} = {field:?} is not a number"),
    })?;
    if !value.is_finite() {
        return Err(Error::MalformedRow {
            line,
            message: format!("{name} = {field:?} is not finite"),
        });
    }
    Ok(value)
}

struct Pending {
    event: RawEvent,
    first_line: u64,
}

/// Read events from a CSV with columns `event_id, group, severity, t, v` and
/// an optional `weight` column. Events keep their order of first appearance.
pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<RawEvent>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_events(file)
}

/// [`load_events`] over any reader.
pub fn read_events<R: std::io::Read>(reader: R) -> Result<Vec<RawEvent>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let missing = |name: &str| Error::MalformedRow {
        line: 1,
        message: format!("missing column {name:?}"),
    };
    let c_id = col("event_id").ok_or_else(|| missing("event_id"))?;
    let c_group = col("group").ok_or_else(|| missing("group"))?;
    let c_sev = col("severity").ok_or_else(|| missing("severity"))?;
    let c_t = col("t").ok_or_else(|| missing("t"))?;
    let c_v = col("v").ok_or_else(|| missing("v"))?;
    let c_w = col("weight");

    let mut order: Vec<Pending> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |c: usize| record.get(c).unwrap_or("");
        let id = field(c_id).to_string();
        let group: SourceGroup = field(c_group).parse().map_err(|_| Error::UnknownGroup {
            line,
            label: field(c_group).to_string(),
        })?;
        let severity: Severity = field(c_sev).parse().map_err(|_| Error::UnknownSeverity {
            line,
            label: field(c_sev).to_string(),
        })?;
        let t = parse_number(field(c_t), "t", line)?;
        let v = parse_number(field(c_v), "v", line)?;
        let weight = match c_w.map(field) {
            Some(s) if !s.is_empty() => Some(parse_number(s, "weight", line)?),
            _ => None,
        };

        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(Pending {
                event: RawEvent {
                    event_id: id.clone(),
                    source_group: group,
                    severity,
                    samples: Vec::new(),
                    native_weight: None,
                    sample_rate: None,
                },
                first_line: line,
            });
            order.len() - 1
        });
        let pending = &mut order[slot];
        let ev = &mut pending.event;
        if ev.source_group != group || ev.severity != severity {
            return Err(Error::MalformedRow {
                line,
                message: format!(
                    "event {id} changes group/severity (first seen at line {})",
                    pending.first_line
                ),
            });
        }
        if let Some(w) = weight {
            match ev.native_weight {
                Some(prev) if prev != w => {
                    return Err(Error::MalformedRow {
                        line,
                        message: format!("event {id} has conflicting weights {prev} and {w}"),
                    })
                }
                _ => ev.native_weight = Some(w),
            }
        }
        ev.samples.push((t, v));
    }

    order
        .into_iter()
        .map(|p| finish_event(p.event))
        .collect()
}

fn finish_event(mut ev: RawEvent) -> Result<RawEvent> {
    ev.samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(pair) = ev.samples.windows(2).find(|p| p[0].0 == p[1].0) {
        return Err(Error::DuplicateTimestamp {
            event_id: ev.event_id,
            t: pair[0].0,
        });
    }
    if let Some(&(t, v)) = ev.samples.iter().find(|s| s.1 < 0.0) {
        return Err(Error::InvalidEvent {
            event_id: ev.event_id,
            reason: format!("negative speed {v} at t = {t}"),
        });
    }
    if let Some(w) = ev.native_weight {
        if w <= 0.0 {
            return Err(Error::InvalidEvent {
                event_id: ev.event_id,
                reason: format!("non-positive weight {w}"),
            });
        }
    }
    ev.sample_rate = sample_rate(&ev.samples);
    if let Some(rate) = ev.sample_rate {
        if rate < MIN_SAMPLE_RATE - 1e-6 {
            return Err(Error::InvalidEvent {
                event_id: ev.event_id,
                reason: format!("sample rate {rate:.3} Hz is below {MIN_SAMPLE_RATE} Hz"),
            });
        }
    }
    Ok(ev)
}

/// Restrict an event to `[-5, -0.3]` (crashes) or `[-5, 0]` (near-crashes)
/// and attach fit weights.
pub fn window_event(e: &RawEvent) -> Result<SpeedProfile> {
    let end = if e.severity.is_crash() {
        CRASH_WINDOW_END
    } else {
        0.0
    };
    let kept: Vec<(f64, f64)> = e
        .samples
        .iter()
        .copied()
        .filter(|&(t, _)| t >= T_START - TIME_EPS && t <= end + TIME_EPS)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyWindow {
            event_id: e.event_id.clone(),
        });
    }
    let times: Vec<f64> = kept.iter().map(|s| s.0.clamp(T_START, 0.0)).collect();
    let weights = sample_weights(&times);
    let samples: Vec<Sample> = kept
        .iter()
        .zip(&weights)
        .map(|(&(t, v), &w)| Sample { t, v, w })
        .collect();
    Ok(SpeedProfile {
        event_id: e.event_id.clone(),
        source_group: e.source_group,
        severity: e.severity,
        weight_sum: weights.iter().sum(),
        samples,
        native_weight: e.native_weight,
    })
}

/// Validity rule: at least three seconds of samples and every fitted
/// acceleration within ±1 g.
pub fn validate_event(p: &SpeedProfile, fit: &PwlFit) -> bool {
    p.duration() >= MIN_DURATION - TIME_EPS
        && fit
            .segments
            .iter()
            .all(|s| s.slope.abs() <= G && s.slope.is_finite())
}
