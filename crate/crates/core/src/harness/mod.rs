//! Experiment orchestration behind the command-line tool.

mod config;
mod metrics;
mod run;
mod sweep;

pub use config::{
    inner_for_seed, parse_dataset_config, Baseline, BaselineOptions, ModelFile, ModelSection, OuterSection, RunConfig,
    SweepSection,
};
pub use metrics::{
    split_metrics, write_history_csv, write_metrics_csv, write_metrics_jsonl, write_weight_histogram, HistoryRow,
    MethodMetrics, SplitMetrics,
};
pub use run::{
    core_only, effective_weights, eval_weighted_erm, evaluate_weights, initial_group_fractions,
    inverse_group_size_weights, resolve_output_dir, run_baseline, run_experiment, run_in_memory, run_maple_on,
    train_irmv1_direct, train_risk_direct, write_weights_file, RunOutcome, MAPLE_METHOD, OUTPUT_ROOT_ENV,
};
pub use sweep::{log_log_slope, sweep_generalization_gap, write_sweep, GapSample, SweepReport, SweepRow};
