//! CSV artifacts: fitted parameters, the combined dataset, synthetic events
//! and sampled speed profiles.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::combine::{Provenance, Stage, WeightedDataset};
use crate::error::{Error, Result};
use crate::ingest::{parse_number, RawEvent, Severity, SourceGroup, SpeedProfile};
use crate::mvdist::SubdatasetId;
use crate::pwl_fit::{EventFit, EventParams};
use crate::synth::SyntheticDataset;
use crate::Param;

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row of the fit-stage output. Events that could not be fitted keep a
/// row (with NaN parameters) because raw group counts include them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRow {
    pub params: EventParams,
    pub valid: bool,
    /// `ok`, `invalid`, or the fit error.
    pub status: String,
    pub native_weight: Option<f64>,
    pub n_b: Option<usize>,
    pub r_squared: Option<f64>,
    pub adjusted_r_squared: Option<f64>,
    pub loss: Option<f64>,
    pub repaired: bool,
}

impl ParamRow {
    pub fn from_fit(f: &EventFit, native_weight: Option<f64>) -> Self {
        ParamRow {
            params: f.params.clone(),
            valid: f.valid,
            status: if f.valid { "ok" } else { "invalid" }.into(),
            native_weight,
            n_b: Some(f.fit.n_b),
            r_squared: Some(f.fit.r_squared),
            adjusted_r_squared: Some(f.adjusted_r_squared),
            loss: Some(f.fit.loss),
            repaired: f.fit.modified_for_nonnegativity,
        }
    }

    pub fn failed(event_id: &str, group: SourceGroup, severity: Severity, err: &Error) -> Self {
        let mut params = EventParams::new(f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN);
        params.event_id = event_id.into();
        params.source_group = Some(group);
        params.severity = Some(severity);
        ParamRow {
            params,
            valid: false,
            status: err.to_string(),
            native_weight: None,
            n_b: None,
            r_squared: None,
            adjusted_r_squared: None,
            loss: None,
            repaired: false,
        }
    }
}

const PARAM_HEADER: [&str; 17] = [
    "event_id", "group", "severity", "valid", "status", "native_weight", "v_c", "a1", "a2",
    "tau_s", "tau_1", "tau_2", "n_b", "r_squared", "adj_r_squared", "loss", "repaired",
];

pub fn write_params(path: &Path, rows: &[ParamRow]) -> Result<()> {
    write_params_to(create(path)?, rows)
}

pub fn write_params_to<W: Write>(w: W, rows: &[ParamRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(PARAM_HEADER)?;
    for r in rows {
        let p = &r.params;
        let mut rec = vec![
            p.event_id.clone(),
            p.source_group.map(|g| g.label().to_string()).unwrap_or_default(),
            p.severity.map(|s| s.label().to_string()).unwrap_or_default(),
            r.valid.to_string(),
            r.status.clone(),
            opt(r.native_weight),
        ];
        rec.extend(p.vector().iter().map(|v| v.to_string()));
        rec.extend([
            r.n_b.map(|n| n.to_string()).unwrap_or_default(),
            opt(r.r_squared),
            opt(r.adjusted_r_squared),
            opt(r.loss),
            r.repaired.to_string(),
        ]);
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("params output", e))?;
    Ok(())
}

/// Column lookup tolerant of case, punctuation and a few common aliases.
struct Columns {
    headers: Vec<String>,
}

impl Columns {
    fn new(h: &csv::StringRecord) -> Self {
        Columns {
            headers: h.iter().map(normalize_header).collect(),
        }
    }

    fn find(&self, names: &[&str]) -> Option<usize> {
        names
            .iter()
            .find_map(|n| self.headers.iter().position(|h| h == n))
    }
}

fn normalize_header(h: &str) -> String {
    let base = h.split(['(', '[']).next().unwrap_or(h);
    base.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase()
}

fn param_aliases(p: Param) -> &'static [&'static str] {
    match p {
        Param::Vc => &["vc", "vcrash", "speedatcrash"],
        Param::A1 => &["a1"],
        Param::A2 => &["a2"],
        Param::TauS => &["taus", "ts"],
        Param::Tau1 => &["tau1", "t1"],
        Param::Tau2 => &["tau2", "t2"],
    }
}

fn parse_bool(s: &str, line: u64) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::MalformedRow {
            line,
            message: format!("{s:?} is not a boolean"),
        }),
    }
}

fn parse_opt(s: &str, name: &str, line: u64) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_number(s, name, line).map(Some)
    }
}

fn parse_any(s: &str, name: &str, line: u64) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::MalformedRow {
        line,
        message: format!("{name} = {s:?} is not a number"),
    })
}

fn parse_group(s: &str, line: u64) -> Result<Option<SourceGroup>> {
    if s.trim().is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::UnknownGroup {
        line,
        label: s.into(),
    })
}

fn parse_severity(s: &str, line: u64) -> Result<Option<Severity>> {
    if s.trim().is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::UnknownSeverity {
        line,
        label: s.into(),
    })
}

pub fn read_params(path: &Path) -> Result<Vec<ParamRow>> {
    read_params_from(open(path)?)
}

pub fn read_params_from<R: Read>(r: R) -> Result<Vec<ParamRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let cols = Columns::new(rdr.headers()?);
    let need = |name: &str| {
        cols.find(&[name]).ok_or_else(|| Error::MalformedRow {
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let idx: Vec<usize> = PARAM_HEADER
        .iter()
        .map(|h| need(&normalize_header(h)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let f = |i: usize| rec.get(idx[i]).unwrap_or("");
        let mut params = EventParams::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        params.event_id = f(0).into();
        params.source_group = parse_group(f(1), line)?;
        params.severity = parse_severity(f(2), line)?;
        for (k, p) in Param::ALL.iter().enumerate() {
            p.set(&mut params, parse_any(f(6 + k), p.name(), line)?);
        }
        let valid = parse_bool(f(3), line)?;
        let native_weight = parse_opt(f(5), "native_weight", line)?;
        params.weight = native_weight.unwrap_or(1.0);
        rows.push(ParamRow {
            params,
            valid,
            status: f(4).into(),
            native_weight,
            n_b: match f(12) {
                "" => None,
                s => Some(s.parse().map_err(|_| Error::MalformedRow {
                    line,
                    message: format!("n_b = {s:?} is not an integer"),
                })?),
            },
            r_squared: parse_opt(f(13), "r_squared", line)?,
            adjusted_r_squared: parse_opt(f(14), "adj_r_squared", line)?,
            loss: parse_opt(f(15), "loss", line)?,
            repaired: parse_bool(f(16), line)?,
        });
    }
    Ok(rows)
}

pub fn write_combined(path: &Path, d: &WeightedDataset) -> Result<()> {
    write_combined_to(create(path)?, d)
}

pub fn write_combined_to<W: Write>(w: W, d: &WeightedDataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "event_id", "group", "severity", "v_c", "a1", "a2", "tau_s", "tau_1", "tau_2", "weight",
        "attached_to",
    ])?;
    for (e, prov) in d.events.iter().zip(&d.provenance) {
        let mut rec = vec![
            e.event_id.clone(),
            e.source_group.map(|g| g.label().to_string()).unwrap_or_default(),
            e.severity.map(|s| s.label().to_string()).unwrap_or_default(),
        ];
        rec.extend(e.vector().iter().map(|v| v.to_string()));
        rec.push(e.weight.to_string());
        rec.push(prov.attached_to.clone().unwrap_or_default());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("combined output", e))?;
    Ok(())
}

/// Read a weighted parameter table. Besides this crate's own output, tables
/// with differently spelled headers are accepted (`v_c (m/s)`, `tau_s`, `ts`,
/// `Weight`, ...); `event_id`, `group`, `severity` and `weight` are optional.
pub fn read_combined(path: &Path) -> Result<WeightedDataset> {
    read_combined_from(open(path)?)
}

pub fn read_combined_from<R: Read>(r: R) -> Result<WeightedDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let cols = Columns::new(rdr.headers()?);
    let pcols: Vec<usize> = Param::ALL
        .iter()
        .map(|&p| {
            cols.find(param_aliases(p)).ok_or_else(|| Error::MalformedRow {
                line: 1,
                message: format!("missing column for {p}"),
            })
        })
        .collect::<Result<_>>()?;
    let c_id = cols.find(&["eventid", "id", "event"]);
    let c_group = cols.find(&["group", "sourcegroup", "source"]);
    let c_sev = cols.find(&["severity"]);
    let c_w = cols.find(&["weight", "sampleweight", "w"]);
    let c_att = cols.find(&["attachedto"]);
    let mut events = Vec::new();
    let mut provenance = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |c: Option<usize>| c.and_then(|c| rec.get(c)).unwrap_or("");
        let mut e = EventParams::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for (p, &c) in Param::ALL.iter().zip(&pcols) {
            p.set(&mut e, parse_number(rec.get(c).unwrap_or(""), p.name(), line)?);
        }
        e.event_id = match get(c_id) {
            "" => format!("row-{}", i + 1),
            s => s.into(),
        };
        e.source_group = parse_group(get(c_group), line)?;
        e.severity = parse_severity(get(c_sev), line)?;
        e.weight = parse_opt(get(c_w), "weight", line)?.unwrap_or(1.0);
        if !(e.weight >= 0.0) {
            return Err(Error::MalformedRow {
                line,
                message: format!("negative weight {}", e.weight),
            });
        }
        events.push(e);
        provenance.push(Provenance {
            attached_to: Some(get(c_att)).filter(|s| !s.is_empty()).map(String::from),
            ..Default::default()
        });
    }
    Ok(WeightedDataset {
        events,
        stage: Stage::CombinedIncident,
        provenance,
    })
}

pub fn write_synthetic(path: &Path, s: &SyntheticDataset) -> Result<()> {
    write_synthetic_to(create(path)?, s)
}

pub fn write_synthetic_to<W: Write>(w: W, s: &SyntheticDataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["event_id", "subdataset", "v_c", "a1", "a2", "tau_s", "tau_1", "tau_2", "weight"])?;
    for (e, label) in s.events.iter().zip(&s.labels) {
        let mut rec = vec![e.event_id.clone(), label.to_string()];
        rec.extend(e.vector().iter().map(|v| v.to_string()));
        rec.push(e.weight.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("synthetic output", e))?;
    Ok(())
}

/// Synthetic events with their sub-dataset labels (when present).
pub fn read_synthetic(path: &Path) -> Result<(Vec<EventParams>, Vec<Option<SubdatasetId>>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let c_label = Columns::new(rdr.headers()?).find(&["subdataset"]);
    let labels: Vec<Option<SubdatasetId>> = rdr
        .records()
        .map(|r| {
            let r = r?;
            Ok(c_label
                .and_then(|c| r.get(c))
                .and_then(|s| SubdatasetId::ALL.into_iter().find(|id| id.to_string() == s)))
        })
        .collect::<Result<_>>()?;
    let d = read_combined(path)?;
    Ok((d.events, labels))
}

/// Raw events in the long input format read by [`crate::ingest::load_events`].
pub fn write_events(path: &Path, events: &[RawEvent]) -> Result<()> {
    write_events_to(create(path)?, events)
}

pub fn write_events_to<W: Write>(w: W, events: &[RawEvent]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["event_id", "group", "severity", "t", "v", "weight"])?;
    for e in events {
        for &(t, v) in &e.samples {
            wtr.write_record([
                e.event_id.clone(),
                e.source_group.label().to_string(),
                e.severity.label().to_string(),
                t.to_string(),
                v.to_string(),
                opt(e.native_weight),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("event output", e))?;
    Ok(())
}

pub fn write_profiles(path: &Path, profiles: &[SpeedProfile]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    wtr.write_record(["event_id", "t", "v"])?;
    for p in profiles {
        for s in &p.samples {
            wtr.write_record([p.event_id.clone(), s.t.to_string(), s.v.to_string()])?;
        }
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
