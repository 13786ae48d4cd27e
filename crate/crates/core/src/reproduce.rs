//! Reference-table reproductions from vendored fixtures.
//!
//! Each target runs the relevant pipeline and compares the result with
//! published values under a pinned tolerance.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::Serialize;

use crate::compute::{flops_from_params, param_counts, DEFAULT_BACKBONE_PARAMS, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::stats::{
    factorial_report, parse_auroc_csv, AurocTableRow, FactorialReport, Formula, LABEL_EVENT, LABEL_INTERCEPT,
    LABEL_TIME, LABEL_WORKFLOW,
};
use crate::tokenizer::{EventEncoding, TimeEncoding};

pub const MAIN_FULLSHOT_CSV: &str = include_str!("../fixtures/main_fullshot_auroc.csv");
pub const TRANSFER_CSV: &str = include_str!("../fixtures/transfer_auroc.csv");

/// 74 tasks × 8 conditions, full-shot AUROC on the development site.
pub fn main_fullshot_rows() -> Result<Vec<AurocTableRow>> {
    parse_auroc_csv(MAIN_FULLSHOT_CSV.as_bytes())
}

/// 13 tasks × 8 conditions, AUROC on the external site.
pub fn transfer_rows() -> Result<Vec<AurocTableRow>> {
    parse_auroc_csv(TRANSFER_CSV.as_bytes())
}

/// Published per-condition compute figures. Parameter columns are in
/// millions as printed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceCondition {
    pub event_encoding: EventEncoding,
    pub time_encoding: TimeEncoding,
    pub workflow: bool,
    pub vocab_size: u64,
    pub embedding_m: f64,
    pub backbone_m: f64,
    pub head_m: f64,
    pub total_m: f64,
    pub percent_vocab_dependent: f64,
    pub tokens_seen: u64,
    pub total_flops: f64,
}

const fn cond(
    event_encoding: EventEncoding,
    time_encoding: TimeEncoding,
    workflow: bool,
    vocab_size: u64,
    params_m: [f64; 4],
    percent_vocab_dependent: f64,
    tokens_seen: u64,
    total_flops: f64,
) -> ReferenceCondition {
    ReferenceCondition {
        event_encoding,
        time_encoding,
        workflow,
        vocab_size,
        embedding_m: params_m[0],
        backbone_m: params_m[1],
        head_m: params_m[2],
        total_m: params_m[3],
        percent_vocab_dependent,
        tokens_seen,
        total_flops,
    }
}

impl ReferenceCondition {
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}",
            self.event_encoding,
            match self.time_encoding {
                TimeEncoding::TimeTokens => "tokens",
                _ => "positions",
            },
            if self.workflow { "yes" } else { "no" }
        )
    }
}

use EventEncoding::{Factorized as F, Joint as J};
use TimeEncoding::{TimePositions as P, TimeTokens as T};

pub const REFERENCE_CONDITIONS: [ReferenceCondition; 8] = [
    cond(J, P, false, 25_263, [19.4, 115.6, 19.4, 154.4], 25.1, 680_615_416, 5.51e17),
    cond(J, P, true, 35_373, [27.1, 115.6, 27.2, 169.9], 32.0, 899_291_143, 7.70e17),
    cond(J, T, false, 25_322, [19.4, 115.6, 19.4, 154.5], 25.2, 785_851_344, 6.37e17),
    cond(J, T, true, 35_432, [27.2, 115.6, 27.2, 170.0], 32.0, 1_015_924_901, 8.71e17),
    cond(F, P, false, 10_889, [8.36, 115.6, 8.37, 132.4], 12.6, 1_291_693_160, 9.61e17),
    cond(F, P, true, 11_758, [8.99, 115.6, 9.01, 133.6], 13.5, 1_719_058_463, 1.29e18),
    cond(F, T, false, 10_948, [8.40, 115.6, 8.42, 132.4], 12.7, 1_390_730_204, 1.04e18),
    cond(F, T, true, 11_817, [9.04, 115.6, 9.06, 133.7], 13.5, 1_831_385_376, 1.37e18),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReproId {
    S10,
    S16,
    S7Flops,
    S3Params,
}

impl ReproId {
    pub const ALL: [ReproId; 4] = [ReproId::S10, ReproId::S16, ReproId::S7Flops, ReproId::S3Params];

    pub fn as_str(self) -> &'static str {
        match self {
            ReproId::S10 => "S10",
            ReproId::S16 => "S16",
            ReproId::S7Flops => "S7-flops",
            ReproId::S3Params => "S3-params",
        }
    }
}

impl fmt::Display for ReproId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReproId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReproId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown target {s:?}; expected one of S10, S16, S7-flops, S3-params"))
            })
    }
}

/// Acceptance rule for one observed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    /// `|observed − expected| ≤ tol`
    Absolute { expected: f64, tol: f64 },
    /// `|observed − expected| ≤ tol·|expected|`
    Relative { expected: f64, tol: f64 },
    /// `observed < bound`
    Below { bound: f64 },
    /// `observed > bound`
    Above { bound: f64 },
    /// `lo ≤ observed ≤ hi`
    Within { lo: f64, hi: f64 },
}

impl Criterion {
    pub fn accepts(&self, observed: f64) -> bool {
        match *self {
            Criterion::Absolute { expected, tol } => (observed - expected).abs() <= tol,
            Criterion::Relative { expected, tol } => (observed - expected).abs() <= tol * expected.abs(),
            Criterion::Below { bound } => observed < bound,
            Criterion::Above { bound } => observed > bound,
            Criterion::Within { lo, hi } => (lo..=hi).contains(&observed),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Criterion::Absolute { expected, tol } => write!(f, "{expected} ± {tol}"),
            Criterion::Relative { expected, tol } => write!(f, "{expected:e} ± {}%", tol * 100.0),
            Criterion::Below { bound } => write!(f, "< {bound}"),
            Criterion::Above { bound } => write!(f, "> {bound}"),
            Criterion::Within { lo, hi } => write!(f, "in [{lo}, {hi}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub criterion: Criterion,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, observed: f64, criterion: Criterion) -> Self {
        Check {
            name: name.into(),
            observed,
            pass: criterion.accepts(observed),
            criterion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReproReport {
    pub id: ReproId,
    pub checks: Vec<Check>,
    /// Human-readable rendering of the reproduced table.
    pub table: String,
}

impl ReproReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn render(&self) -> String {
        let mut out = format!("{}\n", self.table.trim_end());
        for c in &self.checks {
            let _ = writeln!(
                out,
                "[{}] {}: observed {}, expected {}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                fmt_value(c.observed),
                c.criterion
            );
        }
        out
    }
}

fn fmt_value(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e6 || v.abs() < 1e-4) {
        format!("{v:.4e}")
    } else {
        format!("{v:.6}")
    }
}

const BETA_TOL: f64 = 0.001;

fn effect_checks(report: &FactorialReport, expected: &[(&str, f64)], checks: &mut Vec<Check>) -> Result<()> {
    for &(label, value) in expected {
        let e = report
            .effect(label)
            .ok_or_else(|| Error::InvalidData(format!("fit is missing effect {label:?}")))?;
        checks.push(Check::new(
            format!("β {label}"),
            e.estimate,
            Criterion::Absolute { expected: value, tol: BETA_TOL },
        ));
    }
    Ok(())
}

fn p_check(report: &FactorialReport, label: &str, criterion: Criterion) -> Result<Check> {
    let e = report
        .effect(label)
        .ok_or_else(|| Error::InvalidData(format!("fit is missing effect {label:?}")))?;
    Ok(Check::new(format!("p {label}"), e.p, criterion))
}

fn reproduce_main() -> Result<ReproReport> {
    let report = factorial_report(&main_fullshot_rows()?, Formula::MainEffects)?;
    let mut checks = Vec::new();
    effect_checks(
        &report,
        &[(LABEL_INTERCEPT, 0.870), (LABEL_TIME, 0.007), (LABEL_EVENT, 0.008), (LABEL_WORKFLOW, 0.007)],
        &mut checks,
    )?;
    for label in [LABEL_TIME, LABEL_EVENT, LABEL_WORKFLOW] {
        checks.push(p_check(&report, label, Criterion::Below { bound: 0.001 })?);
    }
    Ok(ReproReport {
        id: ReproId::S10,
        checks,
        table: report.render(),
    })
}

fn reproduce_transfer() -> Result<ReproReport> {
    let report = factorial_report(&transfer_rows()?, Formula::MainEffects)?;
    let mut checks = Vec::new();
    effect_checks(
        &report,
        &[(LABEL_INTERCEPT, 0.806), (LABEL_TIME, 0.002), (LABEL_EVENT, 0.008), (LABEL_WORKFLOW, 0.000)],
        &mut checks,
    )?;
    checks.push(p_check(&report, LABEL_EVENT, Criterion::Below { bound: 0.001 })?);
    checks.push(p_check(&report, LABEL_TIME, Criterion::Within { lo: 0.15, hi: 0.40 })?);
    checks.push(p_check(&report, LABEL_WORKFLOW, Criterion::Above { bound: 0.5 })?);
    Ok(ReproReport {
        id: ReproId::S16,
        checks,
        table: report.render(),
    })
}

fn reproduce_flops() -> Result<ReproReport> {
    let mut checks = Vec::new();
    let mut table = format!("{:<24} {:>10} {:>15} {:>11} {:>11}\n", "condition", "N (M)", "tokens seen", "6ND", "reference");
    for r in &REFERENCE_CONDITIONS {
        let n = (r.backbone_m + r.head_m) * 1e6;
        let flops = flops_from_params(n, r.tokens_seen);
        let _ = writeln!(
            table,
            "{:<24} {:>10.2} {:>15} {:>11.3e} {:>11.3e}",
            r.label(),
            n / 1e6,
            r.tokens_seen,
            flops,
            r.total_flops
        );
        checks.push(Check::new(
            format!("FLOPs {}", r.label()),
            flops,
            Criterion::Relative { expected: r.total_flops, tol: 0.01 },
        ));
    }
    Ok(ReproReport {
        id: ReproId::S7Flops,
        checks,
        table,
    })
}

fn reproduce_params() -> Result<ReproReport> {
    let mut checks = Vec::new();
    let mut table = format!(
        "{:<24} {:>7} {:>11} {:>11} {:>11} {:>7}\n",
        "condition", "V", "embedding", "head", "total", "% vocab"
    );
    for r in &REFERENCE_CONDITIONS {
        let p = param_counts(r.vocab_size, DEFAULT_HIDDEN, DEFAULT_BACKBONE_PARAMS)?;
        let _ = writeln!(
            table,
            "{:<24} {:>7} {:>10.2}M {:>10.2}M {:>10.1}M {:>6.1}%",
            r.label(),
            r.vocab_size,
            p.embedding_params as f64 / 1e6,
            p.head_params as f64 / 1e6,
            p.total_params as f64 / 1e6,
            p.percent_vocab_dependent
        );
        checks.push(Check::new(
            format!("embedding {}", r.label()),
            p.embedding_params as f64,
            Criterion::Relative { expected: r.embedding_m * 1e6, tol: 0.005 },
        ));
        checks.push(Check::new(
            format!("percent vocab-dependent {}", r.label()),
            p.percent_vocab_dependent,
            Criterion::Absolute { expected: r.percent_vocab_dependent, tol: 0.2 },
        ));
    }
    Ok(ReproReport {
        id: ReproId::S3Params,
        checks,
        table,
    })
}

pub fn reproduce(id: ReproId) -> Result<ReproReport> {
    match id {
        ReproId::S10 => reproduce_main(),
        ReproId::S16 => reproduce_transfer(),
        ReproId::S7Flops => reproduce_flops(),
        ReproId::S3Params => reproduce_params(),
    }
}
