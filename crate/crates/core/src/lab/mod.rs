//! Datasets, experiment specs, runners and results files.

mod common;
pub mod data;
pub mod gap;
pub mod mitigation;
pub mod montecarlo;
pub mod results;
pub mod spec;
pub mod sweeps;
pub mod underparam;

pub use common::{half_mse, load_splits, median, Probe, RunContext, Subject};
pub use data::{
    load_idx, load_text_matrix, prepare_binary_task, split_pool, synth_dataset, write_idx, IdxImages, LabeledPool, Splits, SynthSpec,
};
pub use gap::{gap_run, run_late_linearization, run_linearization_gap, GapRun};
pub use mitigation::{mitigate, run_mitigation, teacher_interpolator_task, train_rung, MitigationOutcome, Rung, StopReason};
pub use montecarlo::{mc_inputs, run_mc_experiment, run_mc_init_norm, McStats};
pub use results::{metrics_path, read_results, write_results, MetricRecord, ResultRecord, RowKey, RunOutput, RESULT_HEADER};
pub use spec::{schema_keys, DataSource, ExperimentKind, ExperimentSpec};
pub use sweeps::{median_metric, run_adaptive_compare, run_batch_sweep, run_sigma_sweep, BATCH_SWEEP_OPTIMIZERS};
pub use underparam::{run_underparam_demo, RandomFeatures};

use crate::error::Result;

/// Runs whatever experiment `spec` describes.
pub fn run_experiment(spec: &ExperimentSpec, ctx: &RunContext) -> Result<RunOutput> {
    match spec.experiment {
        ExperimentKind::SigmaSweep => run_sigma_sweep(spec, ctx),
        ExperimentKind::AdaptiveCompare => run_adaptive_compare(spec, ctx),
        ExperimentKind::BatchSweep => run_batch_sweep(spec, ctx),
        ExperimentKind::LinearizationGap => run_linearization_gap(spec, ctx),
        ExperimentKind::Mitigation => Ok(run_mitigation(spec, &spec.mitigation, ctx)?.1),
        ExperimentKind::McInitNorm => run_mc_experiment(spec, ctx),
        ExperimentKind::UnderparamDemo => run_underparam_demo(spec),
        ExperimentKind::LateLinearization => run_late_linearization(spec, ctx),
    }
}
