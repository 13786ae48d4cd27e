//! Factorial AUROC tables: design construction, mixed-model fits and
//! per-task direction counts.
//!
//! Coding is treatment contrasts with the intercept cell at
//! Time-Positions / Factorized / No-Workflow. The fitted columns are
//! indicators for Time-Tokens, Joint and Workflow; the time contrast is
//! reported negated as "Time-Positions vs Time-Tokens".

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lmm::{FixedEffect, LmmFit, LmmProblem};
use crate::error::{Error, Result};
use crate::tokenizer::{EventEncoding, TimeEncoding};

/// Shot size at which the interaction model's main effects are read.
pub const SHOT_CENTER: f64 = 32.0;
/// Mean differences at or below this magnitude count as ties.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocTableRow {
    pub task: String,
    pub time_encoding: TimeEncoding,
    pub event_encoding: EventEncoding,
    pub workflow: bool,
    pub shot_size: Option<u32>,
    pub auroc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    /// `AUROC ~ Time + Event + Workflow + (1|Task)`
    MainEffects,
    /// `AUROC ~ (Time + Event + Workflow) × log2(k/32) + (1|Task)`
    ShotInteraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Time,
    Event,
    Workflow,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Time, Axis::Event, Axis::Workflow];

    /// `(level A, level B)`; differences are A − B.
    pub fn levels(self) -> (&'static str, &'static str) {
        match self {
            Axis::Time => ("Time-Positions", "Time-Tokens"),
            Axis::Event => ("Joint", "Factorized"),
            Axis::Workflow => ("Workflow", "No Workflow"),
        }
    }

    fn is_level_a(self, row: &AurocTableRow) -> bool {
        match self {
            Axis::Time => row.time_encoding == TimeEncoding::TimePositions,
            Axis::Event => row.event_encoding == EventEncoding::Joint,
            Axis::Workflow => row.workflow,
        }
    }

    /// Levels of the other two axes plus shot size.
    fn other_key(self, row: &AurocTableRow) -> (u8, u8, u8, Option<u32>) {
        let t = (row.time_encoding == TimeEncoding::TimeTokens) as u8;
        let e = (row.event_encoding == EventEncoding::Joint) as u8;
        let w = row.workflow as u8;
        match self {
            Axis::Time => (2, e, w, row.shot_size),
            Axis::Event => (t, 2, w, row.shot_size),
            Axis::Workflow => (t, e, 2, row.shot_size),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Time => "time",
            Axis::Event => "event",
            Axis::Workflow => "workflow",
        })
    }
}

fn parse_time(s: &str) -> Option<TimeEncoding> {
    match normalize(s).as_str() {
        "positions" | "pos" | "timepositions" => Some(TimeEncoding::TimePositions),
        "tokens" | "tok" | "toks" | "timetokens" => Some(TimeEncoding::TimeTokens),
        _ => None,
    }
}

fn parse_event(s: &str) -> Option<EventEncoding> {
    match normalize(s).as_str() {
        "joint" | "j" => Some(EventEncoding::Joint),
        "factorized" | "factorised" | "f" => Some(EventEncoding::Factorized),
        _ => None,
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match normalize(s).as_str() {
        "yes" | "y" | "true" | "1" => Some(true),
        "no" | "n" | "false" | "0" => Some(false),
        _ => None,
    }
}

fn normalize(s: &str) -> String {
    s.trim()
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Reads `task,time_encoding,event_encoding,workflow[,shot_size],auroc`.
pub fn parse_auroc_csv(reader: impl std::io::Read) -> Result<Vec<AurocTableRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| {
        col(name).ok_or_else(|| Error::InvalidData(format!("missing column {name:?}")))
    };
    let (task_c, time_c, event_c, wf_c, auroc_c) = (
        required("task")?,
        required("time_encoding")?,
        required("event_encoding")?,
        required("workflow")?,
        required("auroc")?,
    );
    let shot_c = col("shot_size");

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str, v: &str| Error::Parse {
            source_name: "auroc table".into(),
            line,
            message: format!("bad {what} {v:?}"),
        };
        let get = |c: usize| rec.get(c).unwrap_or("");
        let auroc: f64 = get(auroc_c).parse().map_err(|_| bad("auroc", get(auroc_c)))?;
        if !(0.0..=1.0).contains(&auroc) {
            return Err(bad("auroc", get(auroc_c)));
        }
        let shot_size = match shot_c.map(get) {
            None | Some("") => None,
            Some(v) => Some(v.parse::<u32>().map_err(|_| bad("shot_size", v))?),
        };
        rows.push(AurocTableRow {
            task: get(task_c).to_string(),
            time_encoding: parse_time(get(time_c)).ok_or_else(|| bad("time_encoding", get(time_c)))?,
            event_encoding: parse_event(get(event_c)).ok_or_else(|| bad("event_encoding", get(event_c)))?,
            workflow: parse_bool(get(wf_c)).ok_or_else(|| bad("workflow", get(wf_c)))?,
            shot_size,
            auroc,
        });
    }
    Ok(rows)
}

pub fn read_auroc_csv(path: &Path) -> Result<Vec<AurocTableRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_auroc_csv(file)
}

/// Task labels in order of first appearance, and each row's task index.
fn task_index(rows: &[AurocTableRow]) -> (Vec<String>, Vec<usize>) {
    let mut names = Vec::new();
    let mut lookup: HashMap<&str, usize> = HashMap::new();
    let idx = rows
        .iter()
        .map(|r| {
            *lookup.entry(r.task.as_str()).or_insert_with(|| {
                names.push(r.task.clone());
                names.len() - 1
            })
        })
        .collect();
    (names, idx)
}

fn validate_levels(rows: &[AurocTableRow]) -> Result<()> {
    for r in rows {
        if !matches!(r.time_encoding, TimeEncoding::TimePositions | TimeEncoding::TimeTokens) {
            return Err(Error::InvalidData(format!(
                "task {}: time encoding {:?} is outside the positions/tokens design",
                r.task, r.time_encoding
            )));
        }
    }
    Ok(())
}

pub const INTERCEPT: &str = "(Intercept)";
pub const TIME_TOKENS: &str = "time_tokens";
pub const JOINT: &str = "joint";
pub const WORKFLOW: &str = "workflow";
pub const LOG2_SHOTS: &str = "log2_shots_c";

/// Response, design matrix, column names and per-row task index.
type Design = (Vec<f64>, DMatrix<f64>, Vec<String>, Vec<usize>);

fn design(rows: &[AurocTableRow], formula: Formula) -> Result<Design> {
    validate_levels(rows)?;
    let (_, groups) = task_index(rows);
    let mut names: Vec<String> = [INTERCEPT, TIME_TOKENS, JOINT, WORKFLOW].map(String::from).to_vec();
    match formula {
        Formula::MainEffects => {
            let mut seen = std::collections::HashSet::new();
            for r in rows {
                if !seen.insert((&r.task, r.time_encoding, r.event_encoding, r.workflow)) {
                    return Err(Error::InvalidData(format!(
                        "main-effects layout needs one row per task and condition; task {} repeats",
                        r.task
                    )));
                }
            }
        }
        Formula::ShotInteraction => {
            names.push(LOG2_SHOTS.into());
            for base in [TIME_TOKENS, JOINT, WORKFLOW] {
                names.push(format!("{base}:{LOG2_SHOTS}"));
            }
        }
    }
    let p = names.len();
    let mut x = DMatrix::zeros(rows.len(), p);
    for (i, r) in rows.iter().enumerate() {
        let main = [
            1.0,
            f64::from(u8::from(r.time_encoding == TimeEncoding::TimeTokens)),
            f64::from(u8::from(r.event_encoding == EventEncoding::Joint)),
            f64::from(u8::from(r.workflow)),
        ];
        for (j, v) in main.iter().enumerate() {
            x[(i, j)] = *v;
        }
        if formula == Formula::ShotInteraction {
            let k = r.shot_size.filter(|&k| k > 0).ok_or_else(|| {
                Error::InvalidData(format!("task {}: shot interaction needs a positive shot_size", r.task))
            })?;
            let c = f64::from(k).log2() - SHOT_CENTER.log2();
            x[(i, 4)] = c;
            for j in 1..4 {
                x[(i, 4 + j)] = main[j] * c;
            }
        }
    }
    let y = rows.iter().map(|r| r.auroc).collect();
    Ok((y, x, names, groups))
}

/// REML fit of the chosen formula, in the raw indicator coding.
pub fn fit_lmm_reml(rows: &[AurocTableRow], formula: Formula) -> Result<LmmFit> {
    let (y, x, names, groups) = design(rows, formula)?;
    LmmProblem::new(y, x, names, &groups)?.fit()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskDifference {
    pub task: String,
    pub mean_difference: f64,
    pub n_pairs: usize,
}

/// Per task, the mean over matched condition pairs of (level A − level B)
/// on `axis`. Tasks keep first-appearance order.
pub fn paired_differences(rows: &[AurocTableRow], axis: Axis) -> Result<Vec<TaskDifference>> {
    let (names, idx) = task_index(rows);
    type Key = (u8, u8, u8, Option<u32>);
    type Pair = (Option<f64>, Option<f64>);
    let mut per_task: Vec<Vec<(Key, Pair)>> = vec![Vec::new(); names.len()];
    for (r, &t) in rows.iter().zip(&idx) {
        let key = axis.other_key(r);
        let slot = match per_task[t].iter_mut().find(|(k, _)| *k == key) {
            Some((_, s)) => s,
            None => {
                per_task[t].push((key, (None, None)));
                &mut per_task[t].last_mut().unwrap().1
            }
        };
        let target = if axis.is_level_a(r) { &mut slot.0 } else { &mut slot.1 };
        if target.replace(r.auroc).is_some() {
            return Err(Error::InvalidData(format!(
                "task {}: duplicate cell on the {axis} axis",
                r.task
            )));
        }
    }
    names
        .into_iter()
        .zip(per_task)
        .map(|(task, cells)| {
            let mut sum = 0.0;
            for (_, pair) in &cells {
                match pair {
                    (Some(a), Some(b)) => sum += a - b,
                    _ => {
                        return Err(Error::InvalidData(format!(
                            "task {task}: unbalanced pairing on the {axis} axis"
                        )))
                    }
                }
            }
            Ok(TaskDifference {
                mean_difference: sum / cells.len() as f64,
                n_pairs: cells.len(),
                task,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AxisWins {
    pub axis: Axis,
    pub level_a: String,
    pub level_b: String,
    pub favors_a: usize,
    pub favors_b: usize,
    pub ties: usize,
    pub n_tasks: usize,
}

pub fn axis_wins(rows: &[AurocTableRow], axis: Axis) -> Result<AxisWins> {
    let diffs = paired_differences(rows, axis)?;
    let (a, b) = axis.levels();
    let favors_a = diffs.iter().filter(|d| d.mean_difference > TIE_TOLERANCE).count();
    let favors_b = diffs.iter().filter(|d| d.mean_difference < -TIE_TOLERANCE).count();
    Ok(AxisWins {
        axis,
        level_a: a.into(),
        level_b: b.into(),
        favors_a,
        favors_b,
        ties: diffs.len() - favors_a - favors_b,
        n_tasks: diffs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorialReport {
    pub formula: Formula,
    pub fit: LmmFit,
    /// Effects in reporting orientation (time contrast negated).
    pub effects: Vec<FixedEffect>,
    pub wins: Vec<AxisWins>,
}

pub const LABEL_INTERCEPT: &str = "Intercept";
pub const LABEL_TIME: &str = "Time Encoding: Time-Positions vs Time-Tokens";
pub const LABEL_EVENT: &str = "Event Encoding: Joint vs Factorized";
pub const LABEL_WORKFLOW: &str = "Workflow: Yes vs No";

fn reported(fit: &LmmFit, name: &str, label: &str, negate: bool) -> Option<FixedEffect> {
    let mut e = fit.effect(name)?;
    e.name = label.to_string();
    if negate {
        e.estimate = -e.estimate;
        e.t = -e.t;
        e.ci95 = (-e.ci95.1, -e.ci95.0);
    }
    Some(e)
}

pub fn factorial_report(rows: &[AurocTableRow], formula: Formula) -> Result<FactorialReport> {
    let fit = fit_lmm_reml(rows, formula)?;
    let mut effects = vec![
        reported(&fit, INTERCEPT, LABEL_INTERCEPT, false),
        reported(&fit, TIME_TOKENS, LABEL_TIME, true),
        reported(&fit, JOINT, LABEL_EVENT, false),
        reported(&fit, WORKFLOW, LABEL_WORKFLOW, false),
    ];
    if formula == Formula::ShotInteraction {
        effects.extend([
            reported(&fit, LOG2_SHOTS, "log2(shot size)", false),
            reported(&fit, &format!("{TIME_TOKENS}:{LOG2_SHOTS}"), "Time encoding × log2(shot size)", true),
            reported(&fit, &format!("{JOINT}:{LOG2_SHOTS}"), "Event encoding × log2(shot size)", false),
            reported(&fit, &format!("{WORKFLOW}:{LOG2_SHOTS}"), "Workflow × log2(shot size)", false),
        ]);
    }
    let effects = effects.into_iter().flatten().collect();
    let wins = if formula == Formula::MainEffects {
        Axis::ALL.iter().map(|&a| axis_wins(rows, a)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(FactorialReport {
        formula,
        fit,
        effects,
        wins,
    })
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

impl FactorialReport {
    pub fn effect(&self, label: &str) -> Option<&FixedEffect> {
        self.effects.iter().find(|e| e.name == label)
    }

    pub fn wins(&self, axis: Axis) -> Option<&AxisWins> {
        self.wins.iter().find(|w| w.axis == axis)
    }

    /// Text table: effect, β, 95% CI, p.
    pub fn render(&self) -> String {
        let width = self.effects.iter().map(|e| e.name.chars().count()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>9}  {:<16}  {:>7}", "Effect", "β (AUROC)", "95% CI", "p value");
        for e in &self.effects {
            let ci = format!("[{:.3}, {:.3}]", e.ci95.0, e.ci95.1);
            let _ = writeln!(out, "{:<width$}  {:>9.3}  {:<16}  {:>7}", e.name, e.estimate, ci, fmt_p(e.p));
        }
        let _ = writeln!(
            out,
            "σ²_task = {:.3e}, σ²_resid = {:.3e}, df = {}, REML log-lik = {:.4}",
            self.fit.sigma2_task, self.fit.sigma2_resid, self.fit.df, self.fit.reml_loglik
        );
        for w in &self.wins {
            let _ = writeln!(
                out,
                "{}: {} favored in {}/{} tasks ({} favored in {}, {} tied)",
                w.axis, w.level_a, w.favors_a, w.n_tasks, w.level_b, w.favors_b, w.ties
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(task: &str, t: TimeEncoding, e: EventEncoding, w: bool, auroc: f64) -> AurocTableRow {
        AurocTableRow {
            task: task.into(),
            time_encoding: t,
            event_encoding: e,
            workflow: w,
            shot_size: None,
            auroc,
        }
    }

    fn full(task: &str, values: [f64; 8]) -> Vec<AurocTableRow> {
        let mut out = Vec::new();
        let mut i = 0;
        for t in [TimeEncoding::TimePositions, TimeEncoding::TimeTokens] {
            for e in [EventEncoding::Factorized, EventEncoding::Joint] {
                for w in [false, true] {
                    out.push(row(task, t, e, w, values[i]));
                    i += 1;
                }
            }
        }
        out
    }

    #[test]
    fn csv_aliases() {
        let text = "task,time_encoding,event_encoding,workflow,auroc\nA,Pos,J,Yes,0.9\nA,time_tokens,factorized,no,0.8\n";
        let rows = parse_auroc_csv(text.as_bytes()).unwrap();
        assert_eq!(rows[0].time_encoding, TimeEncoding::TimePositions);
        assert_eq!(rows[0].event_encoding, EventEncoding::Joint);
        assert!(rows[0].workflow);
        assert_eq!(rows[1].time_encoding, TimeEncoding::TimeTokens);
        assert!(parse_auroc_csv("task,time_encoding,event_encoding,workflow,auroc\nA,x,J,yes,0.9\n".as_bytes()).is_err());
        assert!(parse_auroc_csv("task,auroc\nA,0.9\n".as_bytes()).is_err());
    }

    #[test]
    fn identical_conditions_tie() {
        let rows: Vec<_> = ["a", "b", "c"].iter().flat_map(|t| full(t, [0.8; 8])).collect();
        for axis in Axis::ALL {
            let diffs = paired_differences(&rows, axis).unwrap();
            assert!(diffs.iter().all(|d| d.mean_difference == 0.0));
            let w = axis_wins(&rows, axis).unwrap();
            assert_eq!((w.favors_a, w.favors_b, w.ties), (0, 0, 3));
        }
    }

    #[test]
    fn single_pair_is_raw_difference() {
        let rows = vec![
            row("a", TimeEncoding::TimePositions, EventEncoding::Joint, false, 0.9),
            row("a", TimeEncoding::TimePositions, EventEncoding::Factorized, false, 0.85),
        ];
        let d = paired_differences(&rows, Axis::Event).unwrap();
        assert_eq!(d[0].n_pairs, 1);
        assert!((d[0].mean_difference - 0.05).abs() < 1e-15);
    }

    #[test]
    fn unbalanced_pairing_errors() {
        let mut rows = full("a", [0.8; 8]);
        rows.pop();
        assert!(paired_differences(&rows, Axis::Event).is_err());
    }

    #[test]
    fn main_effects_rejects_repeats() {
        let mut rows = full("a", [0.8, 0.81, 0.82, 0.83, 0.79, 0.8, 0.81, 0.82]);
        rows.extend(full("b", [0.7, 0.72, 0.74, 0.73, 0.7, 0.71, 0.72, 0.74]));
        rows.push(rows[0].clone());
        assert!(fit_lmm_reml(&rows, Formula::MainEffects).is_err());
    }

    #[test]
    fn shot_model_needs_shot_sizes() {
        let mut rows = full("a", [0.8, 0.81, 0.82, 0.83, 0.79, 0.8, 0.81, 0.82]);
        rows.extend(full("b", [0.7, 0.72, 0.74, 0.73, 0.7, 0.71, 0.72, 0.74]));
        assert!(matches!(fit_lmm_reml(&rows, Formula::ShotInteraction), Err(Error::InvalidData(_))));
    }

    #[test]
    fn single_shot_size_is_aliased() {
        let mut rows = full("a", [0.8, 0.81, 0.82, 0.83, 0.79, 0.8, 0.81, 0.82]);
        rows.extend(full("b", [0.7, 0.72, 0.74, 0.73, 0.7, 0.71, 0.72, 0.74]));
        for r in &mut rows {
            r.shot_size = Some(64);
        }
        match fit_lmm_reml(&rows, Formula::ShotInteraction) {
            Err(Error::RankDeficient(cols)) => assert!(cols.iter().any(|c| c.contains(LOG2_SHOTS))),
            other => panic!("{other:?}"),
        }
    }
}
