//! Theory-side instrumentation: exact ℋΔℋ and ideal-joint computations over
//! stump classes, bound verification, 𝒜-distance and report files.

mod adist;
mod bounds;
mod hypothesis;
mod instance;
mod report;

pub use adist::{a_distance, a_distance_with, AdistConfig};
pub use bounds::{
    empirical_hdh_distance, ideal_joint_error, verify_rho_bound, verify_rho_bound_with, verify_theorem1,
    verify_theorem1_with, BoundReport, HypothesisRisks, Violation, VerifyOptions,
};
pub use hypothesis::{HypothesisClass, Stump, MAX_HYPOTHESES};
pub use instance::{BoundInstance, InstanceKind, InstanceSpec, MAX_INSTANCE_HYPOTHESES, MAX_INSTANCE_SAMPLES};
pub use report::{
    emit_report, read_metrics_csv, write_metrics_csv, ADistances, ReportPaths, METRIC_COLUMNS, REPORT_SCHEMA,
    REPORT_SCHEMA_VERSION,
};
