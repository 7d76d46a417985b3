//! AUROC, cross-path alignment diagnostics and the ablation suite.

pub mod ablation;
pub mod alignment;
pub mod auroc;

pub use ablation::{ablation_suite, AblationPlan, AblationReport, ArmSummary, RunMetrics, RunOutcome, LADDER};
pub use alignment::{alignment_report, AlignmentReport, ClassAlignment};
pub use auroc::{auroc, auroc_scores, Scored, ScoredSet};
