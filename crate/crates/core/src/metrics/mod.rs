//! Image- and pixel-level detection metrics.

mod aupro;
mod components;
mod ranking;
mod report;

pub use aupro::{aupro, DEFAULT_FPR_LIMIT};
pub use components::label_components;
pub use ranking::{auroc, average_precision, f1_max};
pub use report::{evaluate, EvalReport, GroundTruth, MetricBundle, METRIC_COLUMNS};
