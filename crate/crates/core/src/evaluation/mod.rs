//! Classification metrics, parameter/MAC accounting, and report files.

mod complexity;
mod metrics;
mod report;

pub use complexity::{complexity, count_macs, count_pars, ComplexityReport, LayerComplexity};
pub use metrics::{compute_metrics, confusion_from_predictions, ConfusionCounts, MetricsReport};
pub use report::{emit_report, read_reports, ExperimentReport, ReportFormat, CSV_HEADER};
