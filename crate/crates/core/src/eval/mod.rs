//! Threshold-free detection metrics and per-run reports.

mod metrics;
mod regions;
mod report;

pub use metrics::{
    auroc, pixel_auroc, pro_curve, pro_score, pro_score_at, quantile_thresholds, LabeledScores,
    DEFAULT_FPR_LIMIT, DEFAULT_PRO_THRESHOLDS,
};
pub use regions::{connected_components, Region};
pub use report::{evaluate_run, render_table, EvalReport};
