use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::data::{load_idx, load_text_matrix, prepare_binary_task, split_pool, synth_dataset, Splits, SynthSpec};
use super::results::{MetricRecord, ResultRecord, RunOutput};
use super::spec::{DataSource, ExperimentSpec};
use crate::error::{Error, Result};
use crate::net::{feature_matrix, forward_batch, FeatureMatrix, LinearizedModel, NetworkConfig, ParamVector};
use crate::optim::{
    adaptive_learning_rate, default_learning_rate, learning_rate_grid, Batching, FullNetwork, Model, Preconditioner, StopRule, TrainStatus, TrainTrace,
};
use crate::solver::KernelMatrix;

/// Execution settings shared by all runners.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunContext {
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
}

impl RunContext {
    pub fn new(jobs: usize) -> Self {
        RunContext { jobs }
    }

    /// `f(0..n)` on the worker pool, results in index order.
    pub fn map<T: Send>(&self, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build();
        match pool {
            Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            Err(_) => (0..n).map(f).collect(),
        }
    }
}

/// The train/validation/test splits a spec describes.
pub fn load_splits(spec: &ExperimentSpec) -> Result<Splits> {
    let d = &spec.data;
    match d.source {
        DataSource::Synthetic => {
            let mut s = SynthSpec::new(d.input_dim, d.n_train, d.n_val, d.n_test, d.seed);
            s.min_radius = d.min_radius;
            s.noise = d.noise;
            s.teacher = NetworkConfig::new(d.teacher_depth, d.input_dim, d.teacher_width, d.teacher_sigma);
            synth_dataset(&s)
        }
        DataSource::Idx => {
            let raw = load_idx(Path::new(&d.images), Path::new(&d.labels))?;
            prepare_binary_task(&raw.to_pool(), d.class_a, d.class_b, d.n_train, d.n_val, d.n_test, d.seed)
        }
        DataSource::Text => {
            let pool = load_text_matrix(Path::new(&d.path))?;
            split_pool(&pool, d.n_train, d.n_val, d.n_test, d.seed)
        }
    }
}

pub fn merge(parts: Vec<RunOutput>) -> RunOutput {
    let mut out = RunOutput::default();
    for p in parts {
        out.extend(p);
    }
    out
}

/// `(1/2n)‖pred − y‖²`; `None` for an empty set.
pub fn half_mse(pred: &DVector<f64>, y: &DVector<f64>) -> Option<f64> {
    (!y.is_empty()).then(|| (pred - y).norm_squared() / (2.0 * y.len() as f64))
}

/// Seed of repetition `rep`.
pub fn rep_seed(spec: &ExperimentSpec, rep: usize) -> u64 {
    spec.seed.wrapping_add(rep as u64)
}

/// A row keyed by spec, seed, sweep point and predictor.
pub fn record(spec: &ExperimentSpec, seed: u64, sweep_key: &str, sweep_value: f64, optimizer: &str) -> ResultRecord {
    ResultRecord {
        spec_hash: spec.hash(),
        experiment: spec.experiment.name().to_string(),
        seed,
        sweep_key: sweep_key.to_string(),
        sweep_value: Some(sweep_value),
        optimizer: optimizer.to_string(),
        ..Default::default()
    }
}

/// Output holding a single failed row.
pub fn failure(rec: ResultRecord, err: &Error) -> RunOutput {
    log::warn!("{} {}={:?} seed {} failed: {err}", rec.optimizer, rec.sweep_key, rec.sweep_value, rec.seed);
    RunOutput {
        metrics: vec![rec.metric("status", "error"), rec.metric("error", err)],
        records: vec![rec],
        failures: 1,
    }
}

/// Rows for a unit of work that may fail as a whole: on error, `template`
/// rows (one per predictor name) are emitted as failures.
pub fn isolate(templates: Vec<ResultRecord>, work: impl FnOnce() -> Result<RunOutput>) -> RunOutput {
    match work() {
        Ok(out) => out,
        Err(e) => {
            let mut out = RunOutput::default();
            for t in templates {
                out.extend(failure(t, &e));
            }
            out
        }
    }
}

/// Fills the step column from a finished run and pushes its status.
pub fn finish_trained(rec: &mut ResultRecord, trace: &TrainTrace, threshold: f64, metrics: &mut Vec<MetricRecord>) {
    rec.steps = Some(trace.steps);
    metrics.push(rec.metric("status", trace.status.name()));
    if let TrainStatus::Diverged { step } = trace.status {
        metrics.push(rec.metric("diverged_at", step));
    } else if !(trace.final_loss() < threshold) {
        log::warn!("{} seed {} stopped at loss {:.3e} ({})", rec.optimizer, rec.seed, trace.final_loss(), trace.status.name());
    }
}

/// Runs one predictor's work; its row is emitted either way, as a failure
/// when `work` errors.
pub fn row(out: &mut RunOutput, template: ResultRecord, work: impl FnOnce(&mut ResultRecord, &mut Vec<MetricRecord>) -> Result<()>) {
    let start = Instant::now();
    let mut rec = template.clone();
    let mut metrics = Vec::new();
    match work(&mut rec, &mut metrics) {
        Ok(()) => {
            rec.wall_time_s = Some(start.elapsed().as_secs_f64());
            out.records.push(rec);
            out.metrics.extend(metrics);
        }
        Err(e) => out.extend(failure(template, &e)),
    }
}

/// What gets trained: the network itself or its linearization, with the
/// validation and test inputs it is evaluated on.
pub enum Subject {
    Full {
        net: FullNetwork,
        val: DMatrix<f64>,
        test: DMatrix<f64>,
    },
    Linearized {
        lin: LinearizedModel,
        val: (FeatureMatrix, DVector<f64>),
        test: (FeatureMatrix, DVector<f64>),
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    Train,
    Val,
    Test,
}

impl Subject {
    pub fn full(config: &NetworkConfig, splits: &Splits) -> Self {
        Subject::Full {
            net: FullNetwork::new(config, &splits.train.x),
            val: splits.val.x.clone(),
            test: splits.test.x.clone(),
        }
    }

    pub fn linearized(config: &NetworkConfig, anchor: &ParamVector, splits: &Splits) -> Result<Self> {
        let at = |x: &DMatrix<f64>| -> Result<(FeatureMatrix, DVector<f64>)> {
            Ok((feature_matrix(config, anchor, x)?, forward_batch(config, anchor, x)?))
        };
        Ok(Subject::Linearized {
            lin: LinearizedModel::new(config, anchor, &splits.train.x)?,
            val: at(&splits.val.x)?,
            test: at(&splits.test.x)?,
        })
    }

    /// From already computed anchor features and outputs on the training set.
    pub fn linearized_from(config: &NetworkConfig, anchor: &ParamVector, phi: &FeatureMatrix, f0: &DVector<f64>, splits: &Splits) -> Result<Self> {
        let at = |x: &DMatrix<f64>| -> Result<(FeatureMatrix, DVector<f64>)> {
            Ok((feature_matrix(config, anchor, x)?, forward_batch(config, anchor, x)?))
        };
        Ok(Subject::Linearized {
            lin: LinearizedModel::from_parts(config, anchor, phi.clone(), f0.clone()),
            val: at(&splits.val.x)?,
            test: at(&splits.test.x)?,
        })
    }

    pub fn model(&self) -> &dyn Model {
        match self {
            Subject::Full { net, .. } => net,
            Subject::Linearized { lin, .. } => lin,
        }
    }

    /// `""` for the network, `"_linearized"` for its linearization.
    pub fn suffix(&self) -> &'static str {
        match self {
            Subject::Full { .. } => "",
            Subject::Linearized { .. } => "_linearized",
        }
    }

    pub fn predict(&self, theta: &[f64], probe: Probe) -> Result<DVector<f64>> {
        match (self, probe) {
            (s, Probe::Train) => s.model().predict_train(theta),
            (Subject::Full { net, val, .. }, Probe::Val) => net.predict(theta, val),
            (Subject::Full { net, test, .. }, Probe::Test) => net.predict(theta, test),
            (Subject::Linearized { lin, val, .. }, Probe::Val) => Ok(lin.predict_with(theta, &val.0, &val.1)),
            (Subject::Linearized { lin, test, .. }, Probe::Test) => Ok(lin.predict_with(theta, &test.0, &test.1)),
        }
    }

    /// Fills the train/val/test loss columns for parameters `theta`.
    pub fn score(&self, rec: &mut ResultRecord, theta: &[f64], splits: &Splits) -> Result<DVector<f64>> {
        rec.train_loss = half_mse(&self.predict(theta, Probe::Train)?, &splits.train.y);
        rec.val_loss = half_mse(&self.predict(theta, Probe::Val)?, &splits.val.y);
        let test = self.predict(theta, Probe::Test)?;
        rec.test_loss = half_mse(&test, &splits.test.y);
        Ok(test)
    }
}

/// Stop rule for a subject from the experiment's threshold and caps.
pub fn stop_rule(spec: &ExperimentSpec, subject: &Subject) -> StopRule {
    let base = match subject {
        Subject::Full { .. } => StopRule::full().with_cap(spec.train.step_cap),
        Subject::Linearized { .. } => StopRule::linearized().with_cap(spec.train.lin_step_cap),
    };
    base.with_threshold(spec.train.loss_threshold).with_grad_tol(spec.train.grad_tol)
}

/// Learning rate for a run: the experiment's fixed `eta` if set, `0.5/λ_max`
/// for plain (S)GD, else the grid search (always on full batches).
pub fn select_rate(
    spec: &ExperimentSpec,
    model: &dyn Model,
    y: &DVector<f64>,
    theta0: &[f64],
    preconditioner: &Preconditioner,
    k: &KernelMatrix,
) -> Result<f64> {
    if spec.train.eta > 0.0 {
        return Ok(spec.train.eta);
    }
    if !preconditioner.is_adaptive() {
        return default_learning_rate(k);
    }
    let grid = learning_rate_grid(spec.train.lr_grid_min, spec.train.lr_grid_max);
    adaptive_learning_rate(model, y, theta0, preconditioner, &Batching::Full, spec.train.lr_probe_steps, &grid)
}

/// Median of a nonempty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_keeps_order_for_any_job_count() {
        for jobs in [0, 1, 3] {
            let v = RunContext::new(jobs).map(10, |i| i * i);
            assert_eq!(v, (0..10).map(|i| i * i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn median_and_loss() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        let y = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(half_mse(&DVector::from_vec(vec![0.0, 0.0]), &y), Some(0.25));
        assert_eq!(half_mse(&DVector::zeros(0), &DVector::zeros(0)), None);
    }
}
