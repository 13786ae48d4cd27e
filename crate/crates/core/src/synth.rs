//! Deterministic synthetic cohorts.
//!
//! Each patient is generated from its own ChaCha8 stream keyed by
//! `derive_seed(seed, "synth/patient/<index>")`, so output is identical
//! across platforms and independent of generation order. Lab and flowsheet
//! values are log-normal with parameters derived from the concept index
//! alone, so cohorts generated with different seeds share value
//! distributions.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{ClinicalEvent, Dataset, Domain, PatientRecord, PatientTimeline, Sex, WorkflowStage, SECONDS_PER_DAY};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConceptCounts {
    pub lab: u32,
    pub flowsheet: u32,
    pub drug: u32,
    pub procedure: u32,
}

/// Inclusive `[min, max]` lag range in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagRange {
    pub min: u32,
    pub max: u32,
}

impl LagRange {
    pub const fn new(min: u32, max: u32) -> Self {
        LagRange { min, max }
    }

    pub const ZERO: LagRange = LagRange::new(0, 0);

    fn sample_secs(&self, rng: &mut impl Rng) -> i64 {
        i64::from(rng.random_range(self.min..=self.max)) * 60
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkflowLags {
    pub lab_order_to_taken: LagRange,
    pub lab_taken_to_result: LagRange,
    pub procedure_order_to_start: LagRange,
    pub surgery_start_to_end: LagRange,
    pub administration_order_to_given: LagRange,
    pub prescription_order_to_start: LagRange,
    pub visit_start_to_end: LagRange,
}

impl WorkflowLags {
    pub const ZERO: WorkflowLags = WorkflowLags {
        lab_order_to_taken: LagRange::ZERO,
        lab_taken_to_result: LagRange::ZERO,
        procedure_order_to_start: LagRange::ZERO,
        surgery_start_to_end: LagRange::ZERO,
        administration_order_to_given: LagRange::ZERO,
        prescription_order_to_start: LagRange::ZERO,
        visit_start_to_end: LagRange::ZERO,
    };

    fn ranges(&self) -> [LagRange; 7] {
        [
            self.lab_order_to_taken,
            self.lab_taken_to_result,
            self.procedure_order_to_start,
            self.surgery_start_to_end,
            self.administration_order_to_given,
            self.prescription_order_to_start,
            self.visit_start_to_end,
        ]
    }
}

impl Default for WorkflowLags {
    fn default() -> Self {
        WorkflowLags {
            lab_order_to_taken: LagRange::new(0, 120),
            lab_taken_to_result: LagRange::new(10, 720),
            procedure_order_to_start: LagRange::new(30, 4320),
            surgery_start_to_end: LagRange::new(30, 600),
            administration_order_to_given: LagRange::new(5, 240),
            prescription_order_to_start: LagRange::new(0, 1440),
            visit_start_to_end: LagRange::new(60, 14_400),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub concepts: ConceptCounts,
    /// Mean number of clinical actions per patient. A multi-stage action
    /// contributes one event per stage to the output.
    pub mean_events_per_patient: f64,
    /// Inclusive range of timeline spans in days.
    pub timeline_span_days: (u32, u32),
    pub workflow_lags: WorkflowLags,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_patients: 100,
            concepts: ConceptCounts {
                lab: 40,
                flowsheet: 20,
                drug: 30,
                procedure: 20,
            },
            mean_events_per_patient: 40.0,
            timeline_span_days: (30, 2000),
            workflow_lags: WorkflowLags::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.concepts;
        if c.lab == 0 || c.flowsheet == 0 || c.drug == 0 || c.procedure == 0 {
            return Err(Error::InvalidArgument("all concept counts must be > 0".into()));
        }
        if !(self.mean_events_per_patient > 0.0) || !self.mean_events_per_patient.is_finite() {
            return Err(Error::InvalidArgument("mean_events_per_patient must be > 0".into()));
        }
        if self.timeline_span_days.0 > self.timeline_span_days.1 {
            return Err(Error::InvalidArgument("timeline_span_days min > max".into()));
        }
        if self.workflow_lags.ranges().iter().any(|r| r.min > r.max) {
            return Err(Error::InvalidArgument("workflow lag range with min > max".into()));
        }
        Ok(())
    }
}

const OBSERVATION_CONCEPTS: u32 = 12;
const OBSERVATION_LEVELS: u32 = 5;
const VISIT_TYPES: [&str; 3] = ["VISIT/inpatient", "VISIT/outpatient", "VISIT/emergency"];

/// Relative frequencies of action kinds.
const ACTION_WEIGHTS: [(ActionKind, u32); 10] = [
    (ActionKind::Lab, 30),
    (ActionKind::Flowsheet, 20),
    (ActionKind::Procedure, 6),
    (ActionKind::Surgery, 2),
    (ActionKind::Administration, 12),
    (ActionKind::Prescription, 6),
    (ActionKind::Visit, 4),
    (ActionKind::Diagnosis, 10),
    (ActionKind::Observation, 7),
    (ActionKind::VisitDetail, 3),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ActionKind {
    Lab,
    Flowsheet,
    Procedure,
    Surgery,
    Administration,
    Prescription,
    Visit,
    Diagnosis,
    Observation,
    VisitDetail,
}

/// Log-normal parameters for a numeric concept, independent of the seed.
fn value_distribution(kind: &str, concept: u32) -> LogNormal<f64> {
    let h = derive_seed(u64::from(concept), kind);
    let mu = (h % 10_000) as f64 / 10_000.0 * 5.0 - 1.0;
    let sigma = 0.2 + ((h >> 20) % 10_000) as f64 / 10_000.0 * 0.8;
    LogNormal::new(mu, sigma).expect("sigma > 0")
}

fn round_value(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Data-window end used to place timelines (2025-05-07T00:00:00Z).
fn window_end() -> i64 {
    NaiveDate::from_ymd_opt(2025, 5, 7)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
        .and_utc()
        .timestamp()
}

/// Generates a complete cohort. Patients are named `SYN<index>` with
/// zero-padded indices.
pub fn generate_cohort(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let timelines = (0..config.n_patients).map(|i| generate_patient(config, i));
    Dataset::from_timelines(timelines)
}

/// One patient's timeline; a pure function of `(config, index)`.
pub fn generate_patient(config: &SynthConfig, index: usize) -> PatientTimeline {
    let (patient, actions) = generate_actions(config, index);
    PatientTimeline::new(patient, actions.into_iter().flatten().collect())
}

/// Patient record plus its clinical actions, each action's stage events in
/// workflow order.
fn generate_actions(config: &SynthConfig, index: usize) -> (PatientRecord, Vec<Vec<ClinicalEvent>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("synth/patient/{index}")));
    let patient_id = format!("SYN{index:07}");

    let end_limit = window_end() - i64::from(rng.random_range(0..365u32)) * SECONDS_PER_DAY;
    let birth_days_before = rng.random_range(30..(90 * 365) as u32);
    let birth = end_limit - i64::from(birth_days_before) * SECONDS_PER_DAY;
    let birth_date = chrono::DateTime::from_timestamp(birth, 0).unwrap().date_naive();
    let birth = birth_date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp();
    let sex = match rng.random_range(0..100u32) {
        0..=48 => Sex::Female,
        49..=97 => Sex::Male,
        _ => Sex::Other,
    };

    let (lo, hi) = config.timeline_span_days;
    let span_days = i64::from(rng.random_range(lo..=hi));
    let start = (end_limit - span_days * SECONDS_PER_DAY).max(birth + SECONDS_PER_DAY);
    let end = end_limit.max(start);

    let n_actions = Poisson::new(config.mean_events_per_patient)
        .expect("mean > 0")
        .sample(&mut rng) as usize;
    let mut anchors: Vec<i64> = (0..n_actions).map(|_| rng.random_range(start..=end)).collect();
    anchors.sort_unstable();

    let total_weight: u32 = ACTION_WEIGHTS.iter().map(|(_, w)| w).sum();
    let mut actions = Vec::with_capacity(n_actions);
    for anchor in anchors {
        let mut pick = rng.random_range(0..total_weight);
        let kind = ACTION_WEIGHTS
            .iter()
            .find(|(_, w)| {
                if pick < *w {
                    true
                } else {
                    pick -= w;
                    false
                }
            })
            .map(|(k, _)| *k)
            .unwrap();
        let mut events = Vec::with_capacity(3);
        emit_action(config, &mut rng, &patient_id, kind, anchor, &mut events);
        actions.push(events);
    }

    (
        PatientRecord {
            patient_id,
            birth_date,
            sex,
        },
        actions,
    )
}

fn emit_action(
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
    patient_id: &str,
    kind: ActionKind,
    t0: i64,
    out: &mut Vec<ClinicalEvent>,
) {
    use WorkflowStage::*;
    let lags = &config.workflow_lags;
    let c = config.concepts;
    let mut push = |time: i64, code: &str, domain: Domain, stage: Option<WorkflowStage>, num: Option<f64>, text: Option<String>| {
        out.push(ClinicalEvent {
            patient_id: patient_id.to_string(),
            time,
            code: code.to_string(),
            numeric_value: num,
            text_value: text,
            domain,
            workflow_stage: stage,
        });
    };
    match kind {
        ActionKind::Lab => {
            let concept = rng.random_range(0..c.lab);
            let code = format!("LAB/{concept:04}");
            let value = round_value(value_distribution("lab", concept).sample(rng));
            let taken = t0 + lags.lab_order_to_taken.sample_secs(rng);
            let result = taken + lags.lab_taken_to_result.sample_secs(rng);
            push(t0, &code, Domain::MeasurementLab, Some(Order), None, None);
            push(taken, &code, Domain::MeasurementLab, Some(Taken), None, None);
            push(result, &code, Domain::MeasurementLab, Some(Result), Some(value), None);
        }
        ActionKind::Flowsheet => {
            let concept = rng.random_range(0..c.flowsheet);
            let value = round_value(value_distribution("flowsheet", concept).sample(rng));
            push(t0, &format!("FLOW/{concept:04}"), Domain::MeasurementFlowsheet, Some(Single), Some(value), None);
        }
        ActionKind::Procedure => {
            let code = format!("PROC/{:04}", rng.random_range(0..c.procedure));
            let start = t0 + lags.procedure_order_to_start.sample_secs(rng);
            push(t0, &code, Domain::Procedure, Some(Order), None, None);
            push(start, &code, Domain::Procedure, Some(Start), None, None);
        }
        ActionKind::Surgery => {
            let code = format!("SURG/{:04}", rng.random_range(0..c.procedure));
            let end = t0 + lags.surgery_start_to_end.sample_secs(rng);
            push(t0, &code, Domain::Surgery, Some(Start), None, None);
            push(end, &code, Domain::Surgery, Some(End), None, None);
        }
        ActionKind::Administration => {
            let concept = rng.random_range(0..c.drug);
            let code = format!("DRUG/{concept:04}");
            let route = ["oral", "iv", "im", "sc"][(concept % 4) as usize];
            let given = t0 + lags.administration_order_to_given.sample_secs(rng);
            push(t0, &code, Domain::DrugAdministration, Some(Order), None, None);
            push(given, &code, Domain::DrugAdministration, Some(Administration), None, Some(route.to_string()));
        }
        ActionKind::Prescription => {
            let code = format!("RX/{:04}", rng.random_range(0..c.drug));
            let start = t0 + lags.prescription_order_to_start.sample_secs(rng);
            push(t0, &code, Domain::DrugPrescription, Some(Order), None, None);
            push(start, &code, Domain::DrugPrescription, Some(Start), None, None);
        }
        ActionKind::Visit => {
            let code = VISIT_TYPES[rng.random_range(0..VISIT_TYPES.len())];
            let end = t0 + lags.visit_start_to_end.sample_secs(rng);
            push(t0, code, Domain::Visit, Some(Start), None, None);
            push(end, code, Domain::Visit, Some(End), None, None);
        }
        ActionKind::Diagnosis => {
            let code = format!("DX/{:04}", rng.random_range(0..c.procedure * 2));
            push(t0, &code, Domain::Diagnosis, None, None, None);
        }
        ActionKind::Observation => {
            let concept = rng.random_range(0..OBSERVATION_CONCEPTS);
            let level = rng.random_range(0..OBSERVATION_LEVELS);
            push(t0, &format!("OBS/{concept:04}"), Domain::Observation, Some(Single), None, Some(format!("level{level}")));
        }
        ActionKind::VisitDetail => {
            let code = format!("UNIT/{:02}", rng.random_range(0..8u32));
            push(t0, &code, Domain::VisitDetail, None, None, None);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cohort() {
        let cfg = SynthConfig {
            n_patients: 0,
            ..SynthConfig::default()
        };
        assert!(generate_cohort(&cfg).unwrap().is_empty());
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig {
            n_patients: 20,
            seed: 42,
            ..SynthConfig::default()
        };
        assert_eq!(generate_cohort(&cfg).unwrap(), generate_cohort(&cfg).unwrap());
        let other = SynthConfig { seed: 43, ..cfg.clone() };
        assert_ne!(generate_cohort(&cfg).unwrap(), generate_cohort(&other).unwrap());
    }

    #[test]
    fn patient_is_independent_of_cohort_size() {
        let small = SynthConfig { n_patients: 3, ..SynthConfig::default() };
        let large = SynthConfig { n_patients: 30, ..SynthConfig::default() };
        assert_eq!(
            generate_cohort(&small).unwrap().get("SYN0000002"),
            generate_cohort(&large).unwrap().get("SYN0000002")
        );
    }

    #[test]
    fn action_stages_follow_workflow_order() {
        let cfg = SynthConfig { n_patients: 50, ..SynthConfig::default() };
        let mut n_labs = 0;
        for i in 0..cfg.n_patients {
            let (patient, actions) = generate_actions(&cfg, i);
            let birth = patient.birth_time();
            for action in &actions {
                let domain = action[0].domain;
                let stages: Vec<_> = action.iter().map(|e| e.workflow_stage.unwrap_or(WorkflowStage::Single)).collect();
                if domain.is_multi_stage() {
                    assert_eq!(stages, domain.workflow());
                }
                assert!(action.windows(2).all(|w| w[0].time <= w[1].time));
                assert!(action.iter().all(|e| e.time >= birth));
                n_labs += usize::from(domain == Domain::MeasurementLab);
            }
        }
        assert!(n_labs > 0);
    }

    #[test]
    fn zero_lags_share_timestamp_and_keep_stage_order() {
        let cfg = SynthConfig { n_patients: 10, workflow_lags: WorkflowLags::ZERO, ..SynthConfig::default() };
        for i in 0..cfg.n_patients {
            let (_, actions) = generate_actions(&cfg, i);
            for action in actions {
                assert!(action.iter().all(|e| e.time == action[0].time));
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.concepts.lab = 0;
        assert!(generate_cohort(&cfg).is_err());
        let mut cfg = SynthConfig::default();
        cfg.workflow_lags.lab_order_to_taken = LagRange::new(5, 1);
        assert!(generate_cohort(&cfg).is_err());
    }
}
