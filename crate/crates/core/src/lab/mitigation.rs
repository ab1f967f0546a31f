//! Shrinking σ along a geometric ladder from a fixed raw initialization.

use serde::{Deserialize, Serialize};

use super::common::{half_mse, load_splits, merge, record, rep_seed, select_rate, stop_rule, RunContext, Subject};
use super::data::Splits;
use super::results::RunOutput;
use super::spec::{ExperimentSpec, MitigationSection};
use crate::error::Result;
use crate::net::{feature_matrix, init_params, NetworkConfig, ParamVector};
use crate::optim::{train, Preconditioner, RecordOptions, TrainStatus, UpdateRule};
use crate::solver::{empirical_ntk, min_complexity_interpolator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Relative validation improvement fell below `plateau_rel`.
    Plateau,
    /// A rung hit the step cap.
    SlowTraining,
    /// The next σ would fall below `min_sigma`.
    LadderExhausted,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Plateau => "plateau",
            StopReason::SlowTraining => "slow_training",
            StopReason::LadderExhausted => "ladder_exhausted",
        }
    }
}

/// One trained rung of the ladder.
#[derive(Debug, Clone)]
pub struct Rung {
    pub sigma: f64,
    pub eta: f64,
    pub train_loss: f64,
    /// `+∞` when training diverged.
    pub val_loss: f64,
    pub test_loss: Option<f64>,
    pub steps: usize,
    pub status: TrainStatus,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MitigationOutcome {
    pub seed: u64,
    pub rungs: Vec<Rung>,
    pub chosen: usize,
    pub stop_reason: StopReason,
    /// The network at σ = 1; rung `i` uses `with_sigma(rungs[i].sigma)`.
    pub config: NetworkConfig,
}

impl MitigationOutcome {
    pub fn ladder(&self) -> Vec<f64> {
        self.rungs.iter().map(|r| r.sigma).collect()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.rungs.iter().map(|r| r.val_loss).collect()
    }

    pub fn chosen_sigma(&self) -> f64 {
        self.rungs[self.chosen].sigma
    }

    /// The selected trained parameters.
    pub fn chosen_params(&self) -> ParamVector {
        ParamVector::from_values(&self.config, self.rungs[self.chosen].theta.clone()).expect("rung parameters match the config")
    }
}

/// Trains the network at scale `sigma` from raw parameters `theta0` with
/// plain GD at `0.5/λ_max` (or the experiment's fixed rate).
pub fn train_rung(spec: &ExperimentSpec, splits: &Splits, config: &NetworkConfig, theta0: &ParamVector, sigma: f64) -> Result<Rung> {
    let cfg = config.clone().with_sigma(sigma);
    let subject = Subject::full(&cfg, splits);
    let k = empirical_ntk(&feature_matrix(&cfg, theta0, &splits.train.x)?)?;
    let eta = select_rate(spec, subject.model(), &splits.train.y, &theta0.values, &Preconditioner::Identity, &k)?;
    let trace = train(subject.model(), &splits.train.y, &theta0.values, &UpdateRule::gd(eta), &stop_rule(spec, &subject), &RecordOptions::default())?;
    let val = subject.predict(&trace.theta, super::common::Probe::Val)?;
    let test = subject.predict(&trace.theta, super::common::Probe::Test)?;
    let val_loss = match (trace.status, half_mse(&val, &splits.val.y)) {
        (TrainStatus::Diverged { .. }, _) | (_, None) => f64::INFINITY,
        (_, Some(v)) if !v.is_finite() => f64::INFINITY,
        (_, Some(v)) => v,
    };
    Ok(Rung {
        sigma,
        eta,
        train_loss: trace.final_loss(),
        val_loss,
        test_loss: half_mse(&test, &splits.test.y),
        steps: trace.steps,
        status: trace.status,
        theta: trace.theta,
    })
}

/// Replaces the labels by the min-complexity interpolator of the training
/// labels under the student's own features at `theta0` (σ = 1). That
/// interpolator is σ-invariant for homogeneous nets, so any σ-dependence of
/// the trained network is pure initialization error.
pub fn teacher_interpolator_task(splits: &Splits, config: &NetworkConfig, theta0: &ParamVector) -> Result<Splits> {
    let cfg = config.clone().with_sigma(1.0);
    let phi = feature_matrix(&cfg, theta0, &splits.train.x)?;
    let w = min_complexity_interpolator(&phi, &empirical_ntk(&phi)?, &splits.train.y)?;
    let mut out = splits.clone();
    for ds in [&mut out.train, &mut out.val, &mut out.test] {
        ds.y = w.predict(&feature_matrix(&cfg, theta0, &ds.x)?)?;
    }
    Ok(out)
}

/// The ladder `σ_start, decay·σ_start, …` for one repetition: stops on a
/// validation plateau, a step-cap hit, or when the next σ would drop below
/// `min_sigma`; picks the rung with the lowest validation loss.
pub fn mitigate(spec: &ExperimentSpec, params: &MitigationSection, splits: &Splits, rep: usize) -> Result<MitigationOutcome> {
    let seed = rep_seed(spec, rep);
    let config = spec.network_config(splits.train.dim()).with_sigma(1.0);
    let theta0 = init_params(&config, seed);
    let task;
    let splits = if params.task == "teacher_interpolator" {
        task = teacher_interpolator_task(splits, &config, &theta0)?;
        &task
    } else {
        splits
    };
    let mut rungs: Vec<Rung> = Vec::new();
    let mut sigma = params.sigma_start;
    let stop_reason = loop {
        let rung = train_rung(spec, splits, &config, &theta0, sigma)?;
        let slow = rung.status == TrainStatus::StepCap;
        let plateau = rungs.last().is_some_and(|prev| {
            let gain = (prev.val_loss - rung.val_loss) / prev.val_loss;
            !(gain >= params.plateau_rel)
        });
        log::info!("mitigation seed {seed}: σ = {sigma:.4} val {:.4e} ({})", rung.val_loss, rung.status.name());
        rungs.push(rung);
        if slow {
            break StopReason::SlowTraining;
        }
        if plateau {
            break StopReason::Plateau;
        }
        sigma *= params.decay;
        if sigma < params.min_sigma {
            break StopReason::LadderExhausted;
        }
    };
    let chosen = rungs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.val_loss.total_cmp(&b.1.val_loss))
        .map(|(i, _)| i)
        .expect("at least one rung");
    Ok(MitigationOutcome {
        seed,
        rungs,
        chosen,
        stop_reason,
        config,
    })
}

/// [`mitigate`] for every repetition, plus one results row per visited
/// rung.
pub fn run_mitigation(spec: &ExperimentSpec, params: &MitigationSection, ctx: &RunContext) -> Result<(Vec<Result<MitigationOutcome>>, RunOutput)> {
    let splits = load_splits(spec)?;
    let outcomes = ctx.map(spec.repetitions, |rep| mitigate(spec, params, &splits, rep));
    let parts = outcomes
        .iter()
        .enumerate()
        .map(|(rep, o)| {
            let seed = rep_seed(spec, rep);
            match o {
                Ok(o) => outcome_rows(spec, o),
                Err(e) => {
                    let mut t = record(spec, seed, "sigma", params.sigma_start, "gd");
                    t.sigma = Some(params.sigma_start);
                    t.width = Some(spec.network.width);
                    super::common::failure(t, e)
                }
            }
        })
        .collect();
    Ok((outcomes, merge(parts)))
}

fn outcome_rows(spec: &ExperimentSpec, o: &MitigationOutcome) -> RunOutput {
    let mut out = RunOutput::default();
    let last = o.rungs.len() - 1;
    for (i, r) in o.rungs.iter().enumerate() {
        let mut rec = record(spec, o.seed, "sigma", r.sigma, "gd");
        rec.sigma = Some(r.sigma);
        rec.width = Some(o.config.width);
        rec.train_loss = Some(r.train_loss);
        rec.val_loss = r.val_loss.is_finite().then_some(r.val_loss);
        rec.test_loss = r.test_loss;
        rec.steps = Some(r.steps);
        out.metrics.push(rec.metric("status", r.status.name()));
        out.metrics.push(rec.metric("rung", i));
        out.metrics.push(rec.metric("eta", r.eta));
        out.metrics.push(rec.metric("chosen", i == o.chosen));
        if i == last {
            out.metrics.push(rec.metric("stop_reason", o.stop_reason.name()));
        }
        out.records.push(rec);
    }
    out
}
