use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::rules::{Batching, OptimizerState, Preconditioner, UpdateRule};
use super::schedule::BatchStream;
use crate::error::{Error, Result};
use crate::net::{forward_batch, loss_and_gradient, LinearizedModel, NetworkConfig, ParamVector};
use crate::solver::KernelMatrix;

pub const DEFAULT_LOSS_THRESHOLD: f64 = 1e-5;
pub const LINEARIZED_STEP_CAP: usize = 1_000_000;
pub const FULL_STEP_CAP: usize = 100_000;

/// Something trainable on the squared loss `(1/2N)‖f_θ(X) − Y‖²`.
pub trait Model: Sync {
    fn param_count(&self) -> usize;

    fn n_samples(&self) -> usize;

    /// Predictions on the training inputs.
    fn predict_train(&self, theta: &[f64]) -> Result<DVector<f64>>;

    /// Full training loss and the gradient of the batch loss
    /// `(1/2|B|)Σ_{i∈B}(f_i − y_i)²` (all rows when `batch` is `None`).
    fn loss_and_gradient(&self, theta: &[f64], y: &DVector<f64>, batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)>;
}

/// The network itself on a fixed training set.
#[derive(Debug, Clone)]
pub struct FullNetwork {
    pub config: NetworkConfig,
    pub x: DMatrix<f64>,
    layout: ParamVector,
}

impl FullNetwork {
    pub fn new(config: &NetworkConfig, x: &DMatrix<f64>) -> Self {
        FullNetwork {
            config: config.clone(),
            x: x.clone(),
            layout: ParamVector::zeros(config),
        }
    }

    pub fn params(&self, theta: &[f64]) -> ParamVector {
        self.layout.with_values(theta.to_vec())
    }

    pub fn predict(&self, theta: &[f64], x: &DMatrix<f64>) -> Result<DVector<f64>> {
        forward_batch(&self.config, &self.params(theta), x)
    }
}

impl Model for FullNetwork {
    fn param_count(&self) -> usize {
        self.layout.len()
    }

    fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    fn predict_train(&self, theta: &[f64]) -> Result<DVector<f64>> {
        forward_batch(&self.config, &self.params(theta), &self.x)
    }

    fn loss_and_gradient(&self, theta: &[f64], y: &DVector<f64>, batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        loss_and_gradient(&self.config, &self.params(theta), &self.x, y, batch)
    }
}

impl Model for LinearizedModel {
    fn param_count(&self) -> usize {
        self.phi.cols()
    }

    fn n_samples(&self) -> usize {
        self.phi.rows()
    }

    fn predict_train(&self, theta: &[f64]) -> Result<DVector<f64>> {
        if theta.len() != self.phi.cols() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.phi.cols(),
                got: theta.len(),
            });
        }
        Ok(LinearizedModel::predict_train(self, theta))
    }

    fn loss_and_gradient(&self, theta: &[f64], y: &DVector<f64>, batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let resid = Model::predict_train(self, theta)? - y;
        let n = resid.len();
        let loss = resid.norm_squared() / (2.0 * n as f64);
        let weights = match batch {
            None => resid / n as f64,
            Some([]) => return Err(Error::EmptyBatch),
            Some(b) => {
                let mut w = DVector::zeros(n);
                for &i in b {
                    w[i] += resid[i] / b.len() as f64;
                }
                w
            }
        };
        Ok((loss, self.phi.apply_transpose(&weights).data.into()))
    }
}

/// When to stop: loss below the threshold, or a step cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub loss_threshold: f64,
    pub step_cap: usize,
    /// Also stop once `‖∇L‖₂` falls below this (0 disables). Needed when
    /// the minimum loss is not zero.
    pub grad_tol: f64,
}

impl StopRule {
    pub fn linearized() -> Self {
        StopRule {
            loss_threshold: DEFAULT_LOSS_THRESHOLD,
            step_cap: LINEARIZED_STEP_CAP,
            grad_tol: 0.0,
        }
    }

    pub fn full() -> Self {
        StopRule {
            loss_threshold: DEFAULT_LOSS_THRESHOLD,
            step_cap: FULL_STEP_CAP,
            grad_tol: 0.0,
        }
    }

    pub fn with_threshold(mut self, loss_threshold: f64) -> Self {
        self.loss_threshold = loss_threshold;
        self
    }

    pub fn with_cap(mut self, step_cap: usize) -> Self {
        self.step_cap = step_cap;
        self
    }

    pub fn with_grad_tol(mut self, grad_tol: f64) -> Self {
        self.grad_tol = grad_tol;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecordOptions {
    /// θ at steps 1, 2, 4, 8, … and at the final step.
    pub snapshots: bool,
    /// The effective diagonal `D_t` of every step.
    pub d_payloads: bool,
    /// `D_t` at the snapshot steps only (for large `P`).
    pub d_snapshots: bool,
    /// The batch used at every step.
    pub batches: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    Converged,
    StepCap,
    Diverged { step: usize },
}

impl TrainStatus {
    pub fn name(self) -> &'static str {
        match self {
            TrainStatus::Converged => "converged",
            TrainStatus::StepCap => "step_cap",
            TrainStatus::Diverged { .. } => "diverged",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    /// `losses[t]` is the full training loss at `θ_t`.
    pub losses: Vec<f64>,
    pub snapshots: Vec<(usize, Vec<f64>)>,
    /// `d_payloads[t]` is `D_t`, used for the update `θ_t → θ_{t+1}`.
    pub d_payloads: Vec<DVector<f64>>,
    /// `(t, D_{t-1})`: the diagonal of the update that produced `θ_t`.
    pub d_snapshots: Vec<(usize, DVector<f64>)>,
    pub batches: Vec<Vec<usize>>,
    pub status: TrainStatus,
    /// Number of updates performed.
    pub steps: usize,
    /// Final parameters.
    pub theta: Vec<f64>,
}

impl TrainTrace {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trace holds the initial loss")
    }

    pub fn converged(&self) -> bool {
        self.status == TrainStatus::Converged
    }
}

/// Runs the discrete iteration; see [`train_observed`].
pub fn train(
    model: &dyn Model,
    y: &DVector<f64>,
    theta0: &[f64],
    rule: &UpdateRule,
    stop: &StopRule,
    record: &RecordOptions,
) -> Result<TrainTrace> {
    train_observed(model, y, theta0, rule, stop, record, &mut |_, _| Ok(()))
}

/// Iterates `θ_{t+1} = θ_t − η·D_t·∇L_B(θ_t)` until the full training loss
/// drops below the threshold or the cap is hit. `observer(t, θ_t)` sees
/// every iterate including `θ_0` and the final one.
///
/// A non-finite loss or parameter ends the run with
/// [`TrainStatus::Diverged`] rather than an error; errors are reserved for
/// inconsistent inputs.
pub fn train_observed(
    model: &dyn Model,
    y: &DVector<f64>,
    theta0: &[f64],
    rule: &UpdateRule,
    stop: &StopRule,
    record: &RecordOptions,
    observer: &mut dyn FnMut(usize, &[f64]) -> Result<()>,
) -> Result<TrainTrace> {
    let n = model.n_samples();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: n,
            got: y.len(),
        });
    }
    if theta0.len() != model.param_count() {
        return Err(Error::DimensionMismatch {
            what: "initial parameters",
            expected: model.param_count(),
            got: theta0.len(),
        });
    }
    rule.validate(n)?;
    let mut state = OptimizerState::new(&rule.preconditioner, theta0.len())?;
    let mut batches = match &rule.batching {
        Batching::Full => None,
        Batching::MiniBatch {
            batch_size,
            shuffle,
            seed,
        } => Some(BatchStream::new(n, *batch_size, *shuffle, *seed)?),
    };

    let mut theta = theta0.to_vec();
    let mut trace = TrainTrace {
        losses: Vec::new(),
        snapshots: Vec::new(),
        d_payloads: Vec::new(),
        d_snapshots: Vec::new(),
        batches: Vec::new(),
        status: TrainStatus::StepCap,
        steps: 0,
        theta: Vec::new(),
    };
    let mut next_snapshot = 1;
    let mut final_d: Option<(usize, DVector<f64>)> = None;

    for t in 0.. {
        observer(t, &theta)?;
        let batch = batches.as_mut().map(|s| s.next().expect("stream is endless"));
        let (loss, grad) = model.loss_and_gradient(&theta, y, batch.as_deref())?;
        trace.losses.push(loss);
        if !loss.is_finite() {
            trace.status = TrainStatus::Diverged { step: t };
            break;
        }
        if loss < stop.loss_threshold || (stop.grad_tol > 0.0 && grad.iter().map(|g| g * g).sum::<f64>().sqrt() < stop.grad_tol) {
            trace.status = TrainStatus::Converged;
            break;
        }
        if t >= stop.step_cap {
            trace.status = TrainStatus::StepCap;
            break;
        }
        let mut last_d = None;
        match state.step(rule.eta, &mut theta, &grad) {
            Ok(d) => {
                let d = || d.clone().unwrap_or_else(|| DVector::from_element(theta.len(), 1.0));
                if record.d_payloads {
                    trace.d_payloads.push(d());
                }
                if record.d_snapshots {
                    last_d = Some(d());
                }
            }
            Err(Error::Diverged { .. }) => {
                trace.status = TrainStatus::Diverged { step: t + 1 };
                trace.steps = t + 1;
                break;
            }
            Err(e) => return Err(e),
        }
        if record.batches {
            trace.batches.push(batch.unwrap_or_else(|| (0..n).collect()));
        }
        trace.steps = t + 1;
        if trace.steps == next_snapshot {
            if record.snapshots {
                trace.snapshots.push((trace.steps, theta.clone()));
            }
            if let Some(d) = last_d.take() {
                trace.d_snapshots.push((trace.steps, d));
            }
            next_snapshot *= 2;
        } else if let Some(d) = last_d.take() {
            final_d = Some((trace.steps, d));
        }
    }
    if record.snapshots && trace.snapshots.last().is_none_or(|(s, _)| *s != trace.steps) {
        trace.snapshots.push((trace.steps, theta.clone()));
    }
    if let Some((t, d)) = final_d {
        if t == trace.steps {
            trace.d_snapshots.push((t, d));
        }
    }
    trace.theta = theta;
    Ok(trace)
}

/// `η = 0.5/λ_max(K)`.
pub fn default_learning_rate(k: &KernelMatrix) -> Result<f64> {
    let l = k.lambda_max();
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::NonPositiveSpectrum(l));
    }
    Ok(0.5 / l)
}

/// `{1, 3} × 10^k` for `k` in `lo..=hi`, largest first.
pub fn learning_rate_grid(lo: i32, hi: i32) -> Vec<f64> {
    // parse so that 3e-1 is the nearest double to 0.3, not 3·10⁻¹
    let mut grid: Vec<f64> = (lo..=hi)
        .flat_map(|k| [1, 3].map(|c| format!("{c}e{k}").parse::<f64>().expect("valid literal")))
        .collect();
    grid.sort_by(|a, b| b.total_cmp(a));
    grid
}

/// Largest `η` of the (descending) grid whose first `probe_steps` steps
/// decrease the training loss monotonically.
pub fn adaptive_learning_rate(
    model: &dyn Model,
    y: &DVector<f64>,
    theta0: &[f64],
    preconditioner: &Preconditioner,
    batching: &Batching,
    probe_steps: usize,
    grid: &[f64],
) -> Result<f64> {
    for &eta in grid {
        let rule = UpdateRule {
            eta,
            preconditioner: preconditioner.clone(),
            batching: batching.clone(),
        };
        let stop = StopRule {
            loss_threshold: 0.0,
            step_cap: probe_steps,
            grad_tol: 0.0,
        };
        let tr = train(model, y, theta0, &rule, &stop, &RecordOptions::default())?;
        let monotone = tr.losses.windows(2).all(|w| w[1] <= w[0]);
        if !matches!(tr.status, TrainStatus::Diverged { .. }) && monotone {
            return Ok(eta);
        }
    }
    Err(Error::InvalidHyperparameter(format!(
        "no learning rate in the grid gives a monotone {probe_steps}-step decay for {}",
        preconditioner.name()
    )))
}
