//! End-to-end orchestration: configuration, shared initial stage, methods,
//! ablation variants, and report files.

mod calibrate;
mod config;
mod report;
mod run;
mod stage;

pub use calibrate::{
    calibrate_policy, run_calibration, Calibration, PolicyCalibration, DEMONSTRATOR_BAND, DEMONSTRATOR_TRIALS,
    NARROW_POLICY_BAND, WIDE_POLICY_BAND,
};
pub use config::{mixture_label, ExperimentConfig, Method, Variant, CLASSIFIER_SIZES, ROLLOUT_BUDGETS};
pub use report::{
    emit_report, fmt_sig, summary_table, write_csvs, CheckpointPoint, CompositionRow, EpisodeBudget,
    MethodReport, OodPoint, ReplicateResult, Report, REPORT_SCHEMA_VERSION,
};
pub use run::{
    composition, curate_variant, rollouts_needed, run_ablation_suite, run_baseline, run_demo_score,
    run_method_on, run_methods, run_variant_on, SNAPSHOT_LABEL_OFFSET,
};
pub use stage::{replicate_dir, rollout_seed, stage_seed, InitialStage};
