#![allow(dead_code)]

use chrono::NaiveDate;
use ehrtok_core::events::{ClinicalEvent, Dataset, Domain, PatientRecord, PatientTimeline, Sex, WorkflowStage};
use ehrtok_core::synth::{generate_cohort, SynthConfig};
use proptest::prelude::*;

pub const DAY: i64 = 86_400;

pub fn patient(id: &str) -> PatientRecord {
    PatientRecord {
        patient_id: id.into(),
        birth_date: NaiveDate::from_ymd_opt(1980, 1, 1).unwrap(),
        sex: Sex::Female,
    }
}

/// Seconds since epoch for 2020-01-01 plus `offset_secs`.
pub fn t(offset_secs: i64) -> i64 {
    1_577_836_800 + offset_secs
}

pub fn event(pid: &str, time: i64, code: &str, domain: Domain, stage: Option<WorkflowStage>) -> ClinicalEvent {
    ClinicalEvent {
        patient_id: pid.into(),
        time,
        code: code.into(),
        numeric_value: None,
        text_value: None,
        domain,
        workflow_stage: stage,
    }
}

pub fn cohort(seed: u64, n: usize) -> Dataset {
    generate_cohort(&SynthConfig {
        seed,
        n_patients: n,
        ..SynthConfig::default()
    })
    .unwrap()
}

const DOMAINS: [Domain; 10] = [
    Domain::MeasurementLab,
    Domain::MeasurementFlowsheet,
    Domain::Procedure,
    Domain::Surgery,
    Domain::DrugAdministration,
    Domain::DrugPrescription,
    Domain::Visit,
    Domain::Diagnosis,
    Domain::Observation,
    Domain::VisitDetail,
];

fn arb_event(pid: String) -> impl Strategy<Value = ClinicalEvent> {
    (
        0..DOMAINS.len(),
        0usize..4,
        0i64..(400 * DAY),
        0u8..3,
        -50.0f64..50.0,
        0usize..3,
        any::<bool>(),
    )
        .prop_map(move |(d, code, offset, attr, num, text, no_stage)| {
            let domain = DOMAINS[d];
            let stages = domain.workflow();
            let stage = if no_stage { None } else { Some(stages[code % stages.len()]) };
            let mut ev = event(&pid, t(offset), &format!("C{d}_{code}"), domain, stage);
            match attr {
                1 => ev.numeric_value = Some(num),
                2 => ev.text_value = Some(format!("v{text}")),
                _ => {}
            }
            ev
        })
}

/// Random timelines over a small code space, including edge cases
/// (empty, same-timestamp events, missing stages, mixed attributes).
pub fn arb_timeline(max_events: usize) -> impl Strategy<Value = PatientTimeline> {
    (0u32..1000, proptest::collection::vec(arb_event(String::new()), 0..=max_events)).prop_map(|(n, events)| {
        let pid = format!("P{n}");
        let events = events
            .into_iter()
            .map(|mut e| {
                e.patient_id = pid.clone();
                e
            })
            .collect();
        PatientTimeline::new(patient(&pid), events)
    })
}

pub fn arb_dataset(max_patients: usize, max_events: usize) -> impl Strategy<Value = Dataset> {
    proptest::collection::vec(arb_timeline(max_events), 0..=max_patients).prop_map(|tls| {
        let mut seen = std::collections::HashSet::new();
        Dataset::from_timelines(tls.into_iter().filter(|tl| seen.insert(tl.patient_id().to_string()))).unwrap()
    })
}
