//! AUROC, balanced few-shot sampling and random-intercept mixed models.

mod auroc;
mod factorial;
mod lmm;
mod sampling;

pub use auroc::auroc;
pub use factorial::{
    axis_wins, factorial_report, fit_lmm_reml, paired_differences, parse_auroc_csv, read_auroc_csv,
    AurocTableRow, Axis, AxisWins, FactorialReport, Formula, TaskDifference, INTERCEPT, JOINT,
    LABEL_EVENT, LABEL_INTERCEPT, LABEL_TIME, LABEL_WORKFLOW, LOG2_SHOTS, SHOT_CENTER, TIME_TOKENS,
    WORKFLOW,
};
pub use lmm::{fit_reml, FixedEffect, LmmFit, LmmProblem, LOG_LAMBDA_BOUNDS};
pub use sampling::{balanced_sample, sample_plan, SamplePlan, SamplerConfig};
