//! Network vs linearization in lockstep, anchored at θ₀ or at a later
//! iterate θ_T.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::common::{finish_trained, isolate, load_splits, merge, record, rep_seed, row, select_rate, stop_rule, RunContext, Subject};
use super::data::Splits;
use super::results::RunOutput;
use super::spec::ExperimentSpec;
use crate::error::Result;
use crate::net::{feature_matrix, forward_batch, init_params, LinearizedModel, NetworkConfig, ParamVector};
use crate::optim::{train_observed, FullNetwork, Preconditioner, RecordOptions, StopRule, TrainTrace, UpdateRule};
use crate::solver::{empirical_ntk, gd_closed_form, GdForm, GdProblem};

/// Outcome of training a network and its linearization from one anchor.
#[derive(Debug, Clone)]
pub struct GapRun {
    /// `max_t max_x |f^NN_t(x) − f^lin_t(x)|` over the recorded steps both
    /// runs reached (0, 1, 2, 4, …) and the two final models.
    pub sup_gap: f64,
    /// `max_x |f^NN(x) − f^lin(x)|` between the final models.
    pub terminal_gap: f64,
    pub full: TrainTrace,
    pub lin: TrainTrace,
    pub full_probe: DVector<f64>,
    pub lin_probe: DVector<f64>,
}

fn recorded(t: usize) -> bool {
    t == 0 || t.is_power_of_two()
}

/// Trains the network at `anchor` and its linearization around `anchor`
/// with the same rule, recording probe predictions at steps 0, 1, 2, 4, ….
#[allow(clippy::too_many_arguments)]
pub fn gap_run(
    config: &NetworkConfig,
    anchor: &ParamVector,
    x_train: &DMatrix<f64>,
    y: &DVector<f64>,
    x_probe: &DMatrix<f64>,
    rule: &UpdateRule,
    stop_full: &StopRule,
    stop_lin: &StopRule,
) -> Result<GapRun> {
    let net = FullNetwork::new(config, x_train);
    let lin = LinearizedModel::new(config, anchor, x_train)?;
    let phi_probe = feature_matrix(config, anchor, x_probe)?;
    let f0_probe = forward_batch(config, anchor, x_probe)?;

    let mut full_seen = BTreeMap::new();
    let full = train_observed(&net, y, &anchor.values, rule, stop_full, &RecordOptions::default(), &mut |t, theta| {
        if recorded(t) {
            full_seen.insert(t, net.predict(theta, x_probe)?);
        }
        Ok(())
    })?;
    let mut lin_seen = BTreeMap::new();
    let lin_trace = train_observed(&lin, y, &anchor.values, rule, stop_lin, &RecordOptions::default(), &mut |t, theta| {
        if recorded(t) {
            lin_seen.insert(t, lin.predict_with(theta, &phi_probe, &f0_probe));
        }
        Ok(())
    })?;
    let full_probe = net.predict(&full.theta, x_probe)?;
    let lin_probe = lin.predict_with(&lin_trace.theta, &phi_probe, &f0_probe);
    let terminal_gap = gap(&full_probe, &lin_probe);
    let sup_gap = full_seen
        .iter()
        .filter_map(|(t, f)| lin_seen.get(t).map(|l| gap(f, l)))
        .fold(terminal_gap, f64::max);
    Ok(GapRun {
        sup_gap,
        terminal_gap,
        full,
        lin: lin_trace,
        full_probe,
        lin_probe,
    })
}

fn gap(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    if a.is_empty() {
        0.0
    } else {
        (a - b).amax()
    }
}

fn is_full_batch(name: &str) -> bool {
    !(name == "sgd" || name.ends_with("_sgd"))
}

/// Gap between the network and its linearization at θ₀, per width,
/// repetition and full-batch optimizer of `train.optimizers`. The probe set
/// is the test split. Adaptive learning rates are chosen on the linearized
/// model and shared by both runs.
pub fn run_linearization_gap(spec: &ExperimentSpec, ctx: &RunContext) -> Result<RunOutput> {
    let splits = load_splits(spec)?;
    let points: Vec<(usize, usize)> = spec
        .sweep
        .widths
        .iter()
        .flat_map(|&w| (0..spec.repetitions).map(move |r| (w, r)))
        .collect();
    Ok(merge(ctx.map(points.len(), |i| gap_point(spec, &splits, points[i].0, points[i].1))))
}

fn gap_point(spec: &ExperimentSpec, splits: &Splits, width: usize, rep: usize) -> RunOutput {
    let seed = rep_seed(spec, rep);
    let mut cfg = spec.network_config(splits.train.dim());
    cfg.width = width;
    let names: Vec<&String> = spec.train.optimizers.iter().filter(|o| is_full_batch(o)).collect();
    let template = |name: &str| {
        let mut r = record(spec, seed, "width", width as f64, name);
        r.sigma = Some(cfg.sigma);
        r.width = Some(width);
        r
    };
    isolate(names.iter().map(|n| template(n)).collect(), || {
        let theta0 = init_params(&cfg, seed);
        let lin = Subject::linearized(&cfg, &theta0, splits)?;
        let k = empirical_ntk(match &lin {
            Subject::Linearized { lin, .. } => &lin.phi,
            Subject::Full { .. } => unreachable!("built as linearized"),
        })?;
        let stop_full = stop_rule(spec, &Subject::full(&cfg, splits));
        let stop_lin = stop_rule(spec, &lin);
        let mut out = RunOutput::default();
        for name in names {
            row(&mut out, template(name), |rec, metrics| {
                let pre = match spec.train.preconditioner(name)? {
                    Preconditioner::Explicit { .. } => Preconditioner::Explicit {
                        diagonal: vec![1.0; theta0.len()],
                    },
                    p => p,
                };
                let eta = select_rate(spec, lin.model(), &splits.train.y, &theta0.values, &pre, &k)?;
                let rule = UpdateRule::gd(eta).with_preconditioner(pre);
                let run = gap_run(&cfg, &theta0, &splits.train.x, &splits.train.y, &splits.test.x, &rule, &stop_full, &stop_lin)?;
                fill_gap_row(rec, metrics, spec, &run, splits, k.jitter());
                metrics.push(rec.metric("eta", eta));
                Ok(())
            });
        }
        Ok(out)
    })
}

fn fill_gap_row(
    rec: &mut super::results::ResultRecord,
    metrics: &mut Vec<super::results::MetricRecord>,
    spec: &ExperimentSpec,
    run: &GapRun,
    splits: &Splits,
    jitter: f64,
) {
    rec.train_loss = Some(run.full.final_loss());
    rec.test_loss = super::common::half_mse(&run.full_probe, &splits.test.y);
    rec.jitter = Some(jitter);
    finish_trained(rec, &run.full, spec.train.loss_threshold, metrics);
    metrics.push(rec.metric("sup_gap", run.sup_gap));
    metrics.push(rec.metric("terminal_gap", run.terminal_gap));
    metrics.push(rec.metric("lin_steps", run.lin.steps));
    metrics.push(rec.metric("lin_status", run.lin.status.name()));
    metrics.push(rec.metric("lin_test_loss", super::common::half_mse(&run.lin_probe, &splits.test.y).unwrap_or(f64::NAN)));
}

/// GD on the network with re-linearization at the iterates `θ_T`,
/// `T ∈ sweep.t_grid`: from each anchor, continued training vs the
/// linearization around `θ_T` (lockstep gaps) and vs the closed form with
/// features `φ_T` and offset `f_{θ_T}`. `T = 0` reproduces the GD rows of
/// the linearization-gap runner.
pub fn run_late_linearization(spec: &ExperimentSpec, ctx: &RunContext) -> Result<RunOutput> {
    let splits = load_splits(spec)?;
    Ok(merge(ctx.map(spec.repetitions, |rep| late_point(spec, &splits, rep))))
}

fn late_point(spec: &ExperimentSpec, splits: &Splits, rep: usize) -> RunOutput {
    let seed = rep_seed(spec, rep);
    let cfg = spec.network_config(splits.train.dim());
    let template = |t: usize| {
        let mut r = record(spec, seed, "t", t as f64, "gd");
        r.sigma = Some(cfg.sigma);
        r.width = Some(cfg.width);
        r
    };
    let grid = &spec.sweep.t_grid;
    isolate(grid.iter().map(|&t| template(t)).collect(), || {
        let theta0 = init_params(&cfg, seed);
        let net = FullNetwork::new(&cfg, &splits.train.x);
        let full_subject = Subject::full(&cfg, splits);
        let lin_stop = StopRule::linearized().with_cap(spec.train.lin_step_cap).with_threshold(spec.train.loss_threshold);
        let full_stop = stop_rule(spec, &full_subject);
        let phi0 = feature_matrix(&cfg, &theta0, &splits.train.x)?;
        let k0 = empirical_ntk(&phi0)?;
        let lin0 = LinearizedModel::from_parts(&cfg, &theta0, phi0, forward_batch(&cfg, &theta0, &splits.train.x)?);
        let eta = select_rate(spec, &lin0, &splits.train.y, &theta0.values, &Preconditioner::Identity, &k0)?;
        let rule = UpdateRule::gd(eta);

        // θ_T for every T (the final iterate if training stops earlier)
        let t_max = grid.iter().copied().max().unwrap_or(0);
        let mut anchors: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let pre = train_observed(&net, &splits.train.y, &theta0.values, &rule, &full_stop.with_cap(t_max.min(full_stop.step_cap)), &RecordOptions::default(), &mut |t, theta| {
            if grid.contains(&t) {
                anchors.insert(t, theta.to_vec());
            }
            Ok(())
        })?;
        let mut out = RunOutput::default();
        for &t in grid {
            row(&mut out, template(t), |rec, metrics| {
                let (t_eff, values) = match anchors.get(&t) {
                    Some(v) => (t, v.clone()),
                    None => (pre.steps, pre.theta.clone()),
                };
                let anchor = theta0.with_values(values);
                let run = gap_run(&cfg, &anchor, &splits.train.x, &splits.train.y, &splits.test.x, &rule, &full_stop, &lin_stop)?;
                let phi_t = feature_matrix(&cfg, &anchor, &splits.train.x)?;
                let k_t = empirical_ntk(&phi_t)?;
                let f_t = forward_batch(&cfg, &anchor, &splits.train.x)?;
                let problem = GdProblem {
                    phi_train: &phi_t,
                    kernel: &k_t,
                    y: &splits.train.y,
                    theta0: &anchor.values,
                    f0_train: &f_t,
                };
                let probe_phi = feature_matrix(&cfg, &anchor, &splits.test.x)?;
                let probe_f = forward_batch(&cfg, &anchor, &splits.test.x)?;
                let closed = gd_closed_form(&problem, &probe_phi, &probe_f, GdForm::Generic)?;
                fill_gap_row(rec, metrics, spec, &run, splits, k_t.jitter());
                rec.steps = Some(t_eff + run.full.steps);
                metrics.push(rec.metric("t_effective", t_eff));
                metrics.push(rec.metric("closed_form_gap", gap(&run.full_probe, &closed)));
                metrics.push(rec.metric("lambda0_t", k_t.lambda_min()));
                metrics.push(rec.metric("eta", eta));
                Ok(())
            });
        }
        Ok(out)
    })
}
