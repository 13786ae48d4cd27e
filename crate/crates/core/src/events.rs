//! Event data model, JSONL interchange and timeline utilities.
//!
//! On disk, timestamps are ISO-8601 UTC strings; in memory they are integer
//! seconds since the Unix epoch. Events of one patient are ordered by time
//! with ties kept in ingestion order.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::keyed_hash;

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    #[serde(alias = "unknown")]
    Other,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Other => "other",
        }
    }

    pub const ALL: [Sex; 3] = [Sex::Female, Sex::Male, Sex::Other];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    MeasurementLab,
    MeasurementFlowsheet,
    Procedure,
    Surgery,
    DrugAdministration,
    DrugPrescription,
    Visit,
    Diagnosis,
    Observation,
    VisitDetail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowStage {
    Order,
    Taken,
    Start,
    End,
    Result,
    Administration,
    Single,
}

impl WorkflowStage {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkflowStage::Order => "order",
            WorkflowStage::Taken => "taken",
            WorkflowStage::Start => "start",
            WorkflowStage::End => "end",
            WorkflowStage::Result => "result",
            WorkflowStage::Administration => "administration",
            WorkflowStage::Single => "single",
        }
    }
}

impl fmt::Display for WorkflowStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Domain {
    /// Stages of one clinical action in temporal order.
    ///
    /// Single-event domains return `[Single]`. Visits carry both a start and
    /// an end event regardless of workflow annotation.
    pub fn workflow(self) -> &'static [WorkflowStage] {
        use WorkflowStage::*;
        match self {
            Domain::MeasurementLab => &[Order, Taken, Result],
            Domain::Procedure => &[Order, Start],
            Domain::Surgery => &[Start, End],
            Domain::DrugAdministration => &[Order, Administration],
            Domain::DrugPrescription => &[Order, Start],
            Domain::Visit => &[Start, End],
            Domain::MeasurementFlowsheet
            | Domain::Diagnosis
            | Domain::Observation
            | Domain::VisitDetail => &[Single],
        }
    }

    /// Stages kept when workflow annotation is off.
    pub fn primary_stages(self) -> &'static [WorkflowStage] {
        use WorkflowStage::*;
        match self {
            Domain::MeasurementLab => &[Result],
            Domain::Procedure | Domain::Surgery | Domain::DrugPrescription => &[Start],
            Domain::DrugAdministration => &[Administration],
            Domain::Visit => &[Start, End],
            _ => &[Single],
        }
    }

    pub fn is_multi_stage(self) -> bool {
        self.workflow().len() > 1
    }

    pub fn allows_stage(self, stage: WorkflowStage) -> bool {
        self.workflow().contains(&stage)
    }
}

/// The kind of value attached to an event, used for attribute encoding and
/// for OOV stratification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Attribute<'a> {
    None,
    Numeric(f64),
    Text(&'a str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    #[serde(with = "date_format")]
    pub birth_date: NaiveDate,
    pub sex: Sex,
}

impl PatientRecord {
    /// Birth instant (midnight UTC) in epoch seconds.
    pub fn birth_time(&self) -> i64 {
        self.birth_date
            .and_hms_opt(0, 0, 0)
            .expect("midnight is valid")
            .and_utc()
            .timestamp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalEvent {
    pub patient_id: String,
    #[serde(with = "time_format")]
    pub time: i64,
    pub code: String,
    #[serde(default)]
    pub numeric_value: Option<f64>,
    #[serde(default)]
    pub text_value: Option<String>,
    pub domain: Domain,
    #[serde(default)]
    pub workflow_stage: Option<WorkflowStage>,
}

impl ClinicalEvent {
    /// Numeric values take precedence over text when both are present.
    pub fn attribute(&self) -> Attribute<'_> {
        match (self.numeric_value, self.text_value.as_deref()) {
            (Some(v), text) => {
                if text.is_some() {
                    log::debug!(
                        "event {}@{} has numeric and text values; text ignored",
                        self.code,
                        self.time
                    );
                }
                Attribute::Numeric(v)
            }
            (None, Some(t)) => Attribute::Text(t),
            (None, None) => Attribute::None,
        }
    }

    /// Stage used for workflow logic; events without one count as primary.
    pub fn is_primary(&self) -> bool {
        match self.workflow_stage {
            None => true,
            Some(stage) => self.domain.primary_stages().contains(&stage),
        }
    }

    /// Checks ids, value finiteness and that the stage belongs to the domain.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.patient_id.is_empty() {
            return Err("empty patient_id".into());
        }
        if self.code.is_empty() {
            return Err("empty code".into());
        }
        if let Some(v) = self.numeric_value {
            if !v.is_finite() {
                return Err(format!("non-finite numeric_value {v}"));
            }
        }
        if let Some(stage) = self.workflow_stage {
            if !self.domain.allows_stage(stage) {
                return Err(format!(
                    "workflow stage {stage} is not legal for domain {:?}",
                    self.domain
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientTimeline {
    pub patient: PatientRecord,
    pub events: Vec<ClinicalEvent>,
}

impl PatientTimeline {
    pub fn new(patient: PatientRecord, mut events: Vec<ClinicalEvent>) -> Self {
        events.sort_by_key(|e| e.time);
        PatientTimeline { patient, events }
    }

    pub fn patient_id(&self) -> &str {
        &self.patient.patient_id
    }

    /// Same patient, different event list (kept in the given order).
    pub fn with_events(&self, events: Vec<ClinicalEvent>) -> Self {
        PatientTimeline {
            patient: self.patient.clone(),
            events,
        }
    }
}

/// Patient timelines keyed by patient id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    timelines: BTreeMap<String, PatientTimeline>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_timelines(timelines: impl IntoIterator<Item = PatientTimeline>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for tl in timelines {
            let id = tl.patient.patient_id.clone();
            if map.insert(id.clone(), tl).is_some() {
                return Err(Error::DuplicatePatient(id));
            }
        }
        Ok(Dataset { timelines: map })
    }

    pub fn len(&self) -> usize {
        self.timelines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timelines.is_empty()
    }

    pub fn get(&self, patient_id: &str) -> Option<&PatientTimeline> {
        self.timelines.get(patient_id)
    }

    /// Timelines in patient-id order.
    pub fn timelines(&self) -> impl Iterator<Item = &PatientTimeline> {
        self.timelines.values()
    }

    pub fn patient_ids(&self) -> impl Iterator<Item = &str> {
        self.timelines.keys().map(String::as_str)
    }

    pub fn event_count(&self) -> usize {
        self.timelines.values().map(|t| t.events.len()).sum()
    }

    /// Keeps only the given patients.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Self {
        let timelines = ids
            .into_iter()
            .filter_map(|id| self.timelines.get(id).map(|t| (id.to_string(), t.clone())))
            .collect();
        Dataset { timelines }
    }

    pub fn map_timelines(&self, f: impl Fn(&PatientTimeline) -> PatientTimeline) -> Self {
        let timelines = self
            .timelines
            .iter()
            .map(|(k, t)| (k.clone(), f(t)))
            .collect();
        Dataset { timelines }
    }
}

/// Reads `patients.jsonl` and `events.jsonl` streams into timelines.
///
/// Blank lines are skipped. Errors carry the 1-based line number of the
/// offending record.
pub fn parse_dataset(patients: impl BufRead, events: impl BufRead) -> Result<Dataset> {
    let mut timelines: BTreeMap<String, PatientTimeline> = BTreeMap::new();
    for (idx, line) in patients.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| parse_err("patients", line_no, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatientRecord =
            serde_json::from_str(&line).map_err(|e| parse_err("patients", line_no, e))?;
        if record.patient_id.is_empty() {
            return Err(parse_err("patients", line_no, "empty patient_id"));
        }
        let id = record.patient_id.clone();
        if timelines.contains_key(&id) {
            return Err(Error::DuplicatePatient(id));
        }
        timelines.insert(
            id,
            PatientTimeline {
                patient: record,
                events: Vec::new(),
            },
        );
    }

    let mut unknown: Vec<String> = Vec::new();
    let mut seen_unknown = HashSet::new();
    for (idx, line) in events.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| parse_err("events", line_no, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: ClinicalEvent =
            serde_json::from_str(&line).map_err(|e| parse_err("events", line_no, e))?;
        event
            .validate()
            .map_err(|msg| parse_err("events", line_no, msg))?;
        match timelines.get_mut(&event.patient_id) {
            Some(tl) => tl.events.push(event),
            None => {
                if seen_unknown.insert(event.patient_id.clone()) {
                    unknown.push(event.patient_id);
                }
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownPatients(unknown));
    }
    for tl in timelines.values_mut() {
        tl.events.sort_by_key(|e| e.time);
    }
    Ok(Dataset { timelines })
}

/// Writes a dataset in the interchange format, patients in id order and
/// events grouped by patient in timeline order.
pub fn write_dataset(
    dataset: &Dataset,
    mut patients: impl Write,
    mut events: impl Write,
) -> std::io::Result<()> {
    for tl in dataset.timelines() {
        serde_json::to_writer(&mut patients, &tl.patient)?;
        patients.write_all(b"\n")?;
        for ev in &tl.events {
            serde_json::to_writer(&mut events, ev)?;
            events.write_all(b"\n")?;
        }
    }
    patients.flush()?;
    events.flush()
}

pub fn read_dataset_dir(dir: &std::path::Path) -> Result<Dataset> {
    let open = |name: &str| {
        let path = dir.join(name);
        std::fs::File::open(&path)
            .map(std::io::BufReader::new)
            .map_err(|e| Error::io(path, e))
    };
    parse_dataset(open("patients.jsonl")?, open("events.jsonl")?)
}

pub fn write_dataset_dir(dataset: &Dataset, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| {
        let path = dir.join(name);
        std::fs::File::create(&path)
            .map(std::io::BufWriter::new)
            .map_err(|e| Error::io(path, e))
    };
    let p = create("patients.jsonl")?;
    let e = create("events.jsonl")?;
    write_dataset(dataset, p, e).map_err(|e| Error::io(dir, e))
}

fn parse_err(source: &str, line: usize, msg: impl fmt::Display) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        line,
        message: msg.to_string(),
    }
}

/// Deterministic patient-level split.
///
/// A patient goes to the training set iff `H(seed ‖ id) / 2^64 < train_fraction`,
/// with `H` the first 64 bits of SHA-256. Both returned lists keep input order.
pub fn split_patients<S: AsRef<str>>(
    patient_ids: &[S],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut seen = HashSet::with_capacity(patient_ids.len());
    let mut train = Vec::new();
    let mut val = Vec::new();
    for id in patient_ids {
        let id = id.as_ref();
        if !seen.insert(id) {
            return Err(Error::DuplicatePatient(id.to_string()));
        }
        let u = keyed_hash(seed, id) as f64 / 18_446_744_073_709_551_616.0;
        if u < train_fraction {
            train.push(id.to_string());
        } else {
            val.push(id.to_string());
        }
    }
    Ok((train, val))
}

/// Events with `time <= cutoff`, order preserved.
pub fn apply_temporal_cutoff(timeline: &PatientTimeline, cutoff: i64) -> PatientTimeline {
    timeline.with_events(
        timeline
            .events
            .iter()
            .filter(|e| e.time <= cutoff)
            .cloned()
            .collect(),
    )
}

/// Parses an ISO-8601 timestamp into epoch seconds.
///
/// Offsets are honoured; timestamps without an offset are read as UTC.
pub fn parse_timestamp(s: &str) -> Result<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    if let Ok(d) = NaiveDate::from_str(s) {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp());
    }
    Err(Error::InvalidData(format!("unparseable timestamp {s:?}")))
}

pub fn format_timestamp(secs: i64) -> String {
    match DateTime::from_timestamp(secs, 0) {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => secs.to_string(),
    }
}

mod time_format {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(secs: &i64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_timestamp(*secs))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<i64, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_timestamp(&raw).map_err(D::Error::custom)
    }
}

mod date_format {
    use chrono::NaiveDate;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(date: &NaiveDate, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&date.format("%Y-%m-%d").to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDate, D::Error> {
        let raw = String::deserialize(d)?;
        NaiveDate::parse_from_str(&raw, "%Y-%m-%d").map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PATIENT: &str = r#"{"patient_id":"p1","birth_date":"2000-01-01","sex":"female"}"#;

    fn ev(time: &str, code: &str) -> String {
        format!(
            r#"{{"patient_id":"p1","time":"{time}","code":"{code}","numeric_value":null,"text_value":null,"domain":"diagnosis","workflow_stage":null}}"#
        )
    }

    fn parse(patients: &str, events: &str) -> Result<Dataset> {
        parse_dataset(patients.as_bytes(), events.as_bytes())
    }

    #[test]
    fn patient_without_events() {
        let ds = parse(PATIENT, "").unwrap();
        assert_eq!(ds.len(), 1);
        assert!(ds.get("p1").unwrap().events.is_empty());
    }

    #[test]
    fn events_sorted_by_time() {
        let events = [
            ev("2020-01-02T00:00:00Z", "e1"),
            ev("2020-01-03T00:00:00Z", "e2"),
            ev("2020-01-01T00:00:00Z", "e3"),
        ]
        .join("\n");
        let ds = parse(PATIENT, &events).unwrap();
        let codes: Vec<_> = ds.get("p1").unwrap().events.iter().map(|e| e.code.as_str()).collect();
        assert_eq!(codes, ["e3", "e1", "e2"]);
    }

    #[test]
    fn equal_times_keep_file_order() {
        let events = [ev("2020-01-02T00:00:00Z", "a"), ev("2020-01-02T00:00:00Z", "b")].join("\n");
        let ds = parse(PATIENT, &events).unwrap();
        let codes: Vec<_> = ds.get("p1").unwrap().events.iter().map(|e| e.code.as_str()).collect();
        assert_eq!(codes, ["a", "b"]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let events = format!("{}\n{{not json", ev("2020-01-02T00:00:00Z", "a"));
        match parse(PATIENT, &events) {
            Err(Error::Parse { line, source_name, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(source_name, "events");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_patient_is_listed() {
        let events = ev("2020-01-02T00:00:00Z", "a").replace("\"p1\"", "\"ghost\"");
        match parse(PATIENT, &events) {
            Err(Error::UnknownPatients(ids)) => assert_eq!(ids, ["ghost"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_timestamp_is_error() {
        assert!(parse(PATIENT, &ev("yesterday", "a")).is_err());
    }

    #[test]
    fn illegal_stage_is_error() {
        let line = ev("2020-01-02T00:00:00Z", "a").replace(
            r#""workflow_stage":null"#,
            r#""workflow_stage":"taken""#,
        );
        assert!(matches!(parse(PATIENT, &line), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn extra_keys_ignored() {
        let line = ev("2020-01-02T00:00:00Z", "a").replace('}', r#","unit":"mg"}"#);
        assert_eq!(parse(PATIENT, &line).unwrap().event_count(), 1);
    }

    #[test]
    fn duplicate_patient_rejected() {
        let patients = format!("{PATIENT}\n{PATIENT}");
        assert!(matches!(parse(&patients, ""), Err(Error::DuplicatePatient(_))));
    }

    #[test]
    fn numeric_takes_precedence() {
        let line = ev("2020-01-02T00:00:00Z", "a")
            .replace(r#""numeric_value":null"#, r#""numeric_value":1.5"#)
            .replace(r#""text_value":null"#, r#""text_value":"high""#);
        let ds = parse(PATIENT, &line).unwrap();
        assert_eq!(ds.get("p1").unwrap().events[0].attribute(), Attribute::Numeric(1.5));
    }

    #[test]
    fn timestamp_formats() {
        let z = parse_timestamp("2020-01-02T03:04:05Z").unwrap();
        assert_eq!(parse_timestamp("2020-01-02T03:04:05").unwrap(), z);
        assert_eq!(parse_timestamp("2020-01-02T05:04:05+02:00").unwrap(), z);
        assert_eq!(format_timestamp(z), "2020-01-02T03:04:05Z");
    }

    #[test]
    fn split_empty_and_deterministic() {
        let empty: [&str; 0] = [];
        assert_eq!(split_patients(&empty, 0.9, 1).unwrap(), (vec![], vec![]));
        let ids: Vec<String> = (0..200).map(|i| format!("id{i}")).collect();
        assert_eq!(split_patients(&ids, 0.9, 3).unwrap(), split_patients(&ids, 0.9, 3).unwrap());
    }

    #[test]
    fn split_fraction_on_ten_thousand_ids() {
        let ids: Vec<String> = (0..10_000).map(|i| format!("synthetic-{i:05}")).collect();
        for seed in 0..5 {
            let (train, val) = split_patients(&ids, 0.9, seed).unwrap();
            assert_eq!(train.len() + val.len(), ids.len());
            assert!((8800..=9200).contains(&train.len()), "seed {seed}: {}", train.len());
        }
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(split_patients(&["a", "a"], 0.5, 0).is_err());
        assert!(split_patients(&["a"], 1.0, 0).is_err());
        assert!(split_patients(&["a"], 0.0, 0).is_err());
    }

    #[test]
    fn cutoff_is_inclusive() {
        let events = [
            ev("2020-01-01T00:00:00Z", "a"),
            ev("2020-01-02T00:00:00Z", "b"),
            ev("2020-01-03T00:00:00Z", "c"),
        ]
        .join("\n");
        let ds = parse(PATIENT, &events).unwrap();
        let tl = ds.get("p1").unwrap();
        let t = |s| parse_timestamp(s).unwrap();
        assert!(apply_temporal_cutoff(tl, t("2019-12-31T00:00:00Z")).events.is_empty());
        assert_eq!(apply_temporal_cutoff(tl, t("2020-01-02T00:00:00Z")).events.len(), 2);
        assert_eq!(&apply_temporal_cutoff(tl, t("2021-01-01T00:00:00Z")), tl);
    }
}
