//! Classification metrics, ROC analysis, the logistic-regression baseline,
//! the ablation harness and report writers.

mod ablation;
mod baseline;
mod metrics;
mod report;
mod roc;
mod spline;

pub use ablation::{ablate, evaluate_model, AblationReport, AblationRow};
pub use baseline::{LogisticRegression, LrConfig};
pub use metrics::{ConfusionMatrix, Metric};
pub use report::{roc_csv, roc_svg, write_evaluation, write_file, MetricsReport};
pub use roc::{auc, roc_auc, roc_curve, RocPoint};
pub use spline::{spline_smooth, thomas, NaturalSpline, DEFAULT_SAMPLES};
