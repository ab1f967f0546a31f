//! σ sweep, adaptive-vs-GD comparison and batch-size sweep.

use nalgebra::DVector;

use super::common::{finish_trained, isolate, load_splits, median, merge, record, rep_seed, row, select_rate, stop_rule, Probe, RunContext, Subject};
use super::data::Splits;
use super::results::{ResultRecord, RunOutput};
use super::spec::ExperimentSpec;
use crate::error::Result;
use crate::net::{feature_matrix, forward_batch, init_params, NetworkConfig, ParamVector};
use crate::optim::{
    batch_size_from_ratio, concentration_metric, train, Batching, Preconditioner, RecordOptions, TrainTrace, UpdateRule,
};
use crate::solver::{empirical_ntk, gd_closed_form, j_statistic, min_complexity_interpolator, GdForm, GdProblem, KernelMatrix};

/// For each σ and repetition: the min-complexity interpolator, the GD
/// closed form, linearized GD (optional) and the trained network, all from
/// the same raw θ₀.
pub fn run_sigma_sweep(spec: &ExperimentSpec, ctx: &RunContext) -> Result<RunOutput> {
    let splits = load_splits(spec)?;
    let points: Vec<(f64, usize)> = spec
        .sweep
        .sigmas
        .iter()
        .flat_map(|&s| (0..spec.repetitions).map(move |r| (s, r)))
        .collect();
    Ok(merge(ctx.map(points.len(), |i| sigma_point(spec, &splits, points[i].0, points[i].1))))
}

fn sigma_point(spec: &ExperimentSpec, splits: &Splits, sigma: f64, rep: usize) -> RunOutput {
    let seed = rep_seed(spec, rep);
    let cfg = spec.network_config(splits.train.dim()).with_sigma(sigma);
    let template = |name: &str| {
        let mut r = record(spec, seed, "sigma", sigma, name);
        r.sigma = Some(sigma);
        r.width = Some(cfg.width);
        r
    };
    let mut names = vec!["interpolator", "gd_closed_form"];
    if spec.train.linearized {
        names.push("gd_linearized");
    }
    names.push("gd");
    let templates = names.iter().map(|n| template(n)).collect();
    isolate(templates, || {
        let theta0 = init_params(&cfg, seed);
        let phi = feature_matrix(&cfg, &theta0, &splits.train.x)?;
        let k = empirical_ntk(&phi)?;
        let f0 = forward_batch(&cfg, &theta0, &splits.train.x)?;
        let probes = [&splits.train, &splits.val, &splits.test]
            .map(|ds| -> Result<_> { Ok((feature_matrix(&cfg, &theta0, &ds.x)?, forward_batch(&cfg, &theta0, &ds.x)?)) });
        let [p_tr, p_va, p_te] = probes;
        let (p_tr, p_va, p_te) = (p_tr?, p_va?, p_te?);
        let mut out = RunOutput::default();

        row(&mut out, template("interpolator"), |rec, _| {
            let w = min_complexity_interpolator(&phi, &k, &splits.train.y)?;
            rec.train_loss = half(&w.predict(&p_tr.0)?, &splits.train.y);
            rec.val_loss = half(&w.predict(&p_va.0)?, &splits.val.y);
            rec.test_loss = half(&w.predict(&p_te.0)?, &splits.test.y);
            rec.jitter = Some(w.jitter);
            Ok(())
        });

        row(&mut out, template("gd_closed_form"), |rec, metrics| {
            let form = if cfg.is_homogeneous() { GdForm::relu(&cfg)? } else { GdForm::Generic };
            let problem = GdProblem {
                phi_train: &phi,
                kernel: &k,
                y: &splits.train.y,
                theta0: &theta0.values,
                f0_train: &f0,
            };
            rec.train_loss = half(&gd_closed_form(&problem, &p_tr.0, &p_tr.1, form)?, &splits.train.y);
            rec.val_loss = half(&gd_closed_form(&problem, &p_va.0, &p_va.1, form)?, &splits.val.y);
            rec.test_loss = half(&gd_closed_form(&problem, &p_te.0, &p_te.1, form)?, &splits.test.y);
            rec.jitter = Some(k.jitter());
            if cfg.is_homogeneous() && !splits.test.is_empty() {
                let j = j_statistic(&p_te.0, &phi, &k, &theta0.values, cfg.depth)?;
                metrics.push(rec.metric("j_statistic", j));
                // J scales exactly as σ^L; the σ = 1 value is the shape constant
                metrics.push(rec.metric("j_statistic_unit_sigma", j / sigma.powi(cfg.depth as i32)));
            }
            Ok(())
        });

        let mut subjects = Vec::new();
        if spec.train.linearized {
            subjects.push(Subject::linearized_from(&cfg, &theta0, &phi, &f0, splits)?);
        }
        subjects.push(Subject::full(&cfg, splits));
        for subject in &subjects {
            let name = format!("gd{}", subject.suffix());
            row(&mut out, template(&name), |rec, metrics| {
                let eta = select_rate(spec, subject.model(), &splits.train.y, &theta0.values, &Preconditioner::Identity, &k)?;
                let trace = fit(subject, spec, &splits.train.y, &theta0.values, UpdateRule::gd(eta), RecordOptions::default())?;
                subject.score(rec, &trace.theta, splits)?;
                rec.jitter = Some(k.jitter());
                finish_trained(rec, &trace, spec.train.loss_threshold, metrics);
                metrics.push(rec.metric("eta", eta));
                Ok(())
            });
        }
        Ok(out)
    })
}

fn half(pred: &DVector<f64>, y: &DVector<f64>) -> Option<f64> {
    super::common::half_mse(pred, y)
}

fn fit(subject: &Subject, spec: &ExperimentSpec, y: &DVector<f64>, theta0: &[f64], rule: UpdateRule, record: RecordOptions) -> Result<TrainTrace> {
    train(subject.model(), y, theta0, &rule, &stop_rule(spec, subject), &record)
}

/// The subjects `train.model` asks for, anchored at `theta0`.
fn subjects(spec: &ExperimentSpec, cfg: &NetworkConfig, theta0: &ParamVector, splits: &Splits) -> Result<Vec<Subject>> {
    let mut v = Vec::new();
    if spec.train.model != "linearized" {
        v.push(Subject::full(cfg, splits));
    }
    if spec.train.model != "full" {
        v.push(Subject::linearized(cfg, theta0, splits)?);
    }
    Ok(v)
}

/// Preconditioner of a named optimizer, with `explicit_adaptive` sized to
/// `p` parameters.
fn preconditioner_for(spec: &ExperimentSpec, name: &str, p: usize) -> Result<Preconditioner> {
    Ok(match spec.train.preconditioner(name)? {
        Preconditioner::Explicit { .. } => Preconditioner::Explicit { diagonal: vec![1.0; p] },
        other => other,
    })
}

fn is_minibatch(name: &str) -> bool {
    name == "sgd" || name.ends_with("_sgd")
}

/// Every optimizer of `train.optimizers` from one θ₀ per width and
/// repetition; test-prediction distances to GD and the concentration of
/// the adaptive diagonals.
pub fn run_adaptive_compare(spec: &ExperimentSpec, ctx: &RunContext) -> Result<RunOutput> {
    let splits = load_splits(spec)?;
    let points: Vec<(usize, usize)> = spec
        .sweep
        .widths
        .iter()
        .flat_map(|&w| (0..spec.repetitions).map(move |r| (w, r)))
        .collect();
    Ok(merge(ctx.map(points.len(), |i| compare_point(spec, &splits, points[i].0, points[i].1))))
}

fn compare_point(spec: &ExperimentSpec, splits: &Splits, width: usize, rep: usize) -> RunOutput {
    let seed = rep_seed(spec, rep);
    let mut cfg = spec.network_config(splits.train.dim());
    cfg.width = width;
    let model_names: Vec<&str> = match spec.train.model.as_str() {
        "full" => vec![""],
        "linearized" => vec!["_linearized"],
        _ => vec!["", "_linearized"],
    };
    let template = |name: &str| {
        let mut r = record(spec, seed, "width", width as f64, name);
        r.sigma = Some(cfg.sigma);
        r.width = Some(width);
        r
    };
    let mut templates = Vec::new();
    for m in &model_names {
        for o in &spec.train.optimizers {
            templates.push(template(&format!("{o}{m}")));
        }
    }
    isolate(templates, || {
        let theta0 = init_params(&cfg, seed);
        let phi = feature_matrix(&cfg, &theta0, &splits.train.x)?;
        let k = empirical_ntk(&phi)?;
        let n = splits.train.len();
        let mut out = RunOutput::default();
        for subject in subjects(spec, &cfg, &theta0, splits)? {
            let gd_eta = select_rate(spec, subject.model(), &splits.train.y, &theta0.values, &Preconditioner::Identity, &k)?;
            let gd = fit(&subject, spec, &splits.train.y, &theta0.values, UpdateRule::gd(gd_eta), RecordOptions::default())?;
            let gd_test = subject.predict(&gd.theta, Probe::Test)?;
            for name in &spec.train.optimizers {
                let label = format!("{name}{}", subject.suffix());
                row(&mut out, template(&label), |rec, metrics| {
                    let pre = preconditioner_for(spec, name, theta0.len())?;
                    let mut rule = UpdateRule::gd(gd_eta).with_preconditioner(pre.clone());
                    if is_minibatch(name) {
                        rec.split_ratio = Some(spec.train.split_ratio);
                        rec.shuffle = Some(spec.train.shuffle);
                        rule = rule.with_batching(Batching::MiniBatch {
                            batch_size: batch_size_from_ratio(spec.train.split_ratio, n)?,
                            shuffle: spec.train.shuffle,
                            seed,
                        });
                    }
                    // D ≡ 𝟙 must reproduce GD, so it keeps GD's rate
                    if pre.is_adaptive() && !matches!(pre, Preconditioner::Explicit { .. }) {
                        rule.eta = select_rate(spec, subject.model(), &splits.train.y, &theta0.values, &pre, &k)?;
                    }
                    let record = RecordOptions {
                        d_snapshots: pre.is_adaptive(),
                        ..Default::default()
                    };
                    let trace = if name == "gd" { gd.clone() } else { fit(&subject, spec, &splits.train.y, &theta0.values, rule.clone(), record)? };
                    let test = subject.score(rec, &trace.theta, splits)?;
                    rec.jitter = Some(k.jitter());
                    if !trace.d_snapshots.is_empty() {
                        let payloads: Vec<DVector<f64>> = trace.d_snapshots.iter().map(|(_, d)| d.clone()).collect();
                        rec.concentration = Some(concentration_metric(&payloads, None)?);
                    }
                    finish_trained(rec, &trace, spec.train.loss_threshold, metrics);
                    metrics.push(rec.metric("eta", rule.eta));
                    metrics.push(rec.metric("distance_to_gd", (&test - &gd_test).norm()));
                    Ok(())
                });
            }
        }
        Ok(out)
    })
}

/// Plain SGD and AdaGrad-SGD over split ratios × shuffle, each compared to
/// the full-batch run of the same preconditioner from the same θ₀.
pub fn run_batch_sweep(spec: &ExperimentSpec, ctx: &RunContext) -> Result<RunOutput> {
    let splits = load_splits(spec)?;
    let points: Vec<(usize, usize)> = spec
        .sweep
        .widths
        .iter()
        .flat_map(|&w| (0..spec.repetitions).map(move |r| (w, r)))
        .collect();
    Ok(merge(ctx.map(points.len(), |i| batch_point(spec, &splits, points[i].0, points[i].1))))
}

/// Optimizers of the batch sweep.
pub const BATCH_SWEEP_OPTIMIZERS: [&str; 2] = ["sgd", "adagrad_sgd"];

fn batch_point(spec: &ExperimentSpec, splits: &Splits, width: usize, rep: usize) -> RunOutput {
    let seed = rep_seed(spec, rep);
    let mut cfg = spec.network_config(splits.train.dim());
    cfg.width = width;
    let n = splits.train.len();
    let suffixes: Vec<&str> = match spec.train.model.as_str() {
        "full" => vec![""],
        "linearized" => vec!["_linearized"],
        _ => vec!["", "_linearized"],
    };
    let template = |name: &str, ratio: f64, shuffle: bool| {
        let mut r = record(spec, seed, "split_ratio", ratio, name);
        r.sigma = Some(cfg.sigma);
        r.width = Some(width);
        r.split_ratio = Some(ratio);
        r.shuffle = Some(shuffle);
        r
    };
    let grid: Vec<(f64, bool)> = spec
        .sweep
        .split_ratios
        .iter()
        .flat_map(|&r| spec.sweep.shuffle.iter().map(move |&s| (r, s)))
        .collect();
    let mut templates = Vec::new();
    for s in &suffixes {
        for o in BATCH_SWEEP_OPTIMIZERS {
            for &(r, sh) in &grid {
                templates.push(template(&format!("{o}{s}"), r, sh));
            }
        }
    }
    isolate(templates, || {
        let theta0 = init_params(&cfg, seed);
        let phi = feature_matrix(&cfg, &theta0, &splits.train.x)?;
        let k = empirical_ntk(&phi)?;
        let mut out = RunOutput::default();
        for subject in subjects(spec, &cfg, &theta0, splits)? {
            for name in BATCH_SWEEP_OPTIMIZERS {
                let label = format!("{name}{}", subject.suffix());
                let pre = spec.train.preconditioner(name)?;
                let (eta, ref_test) = full_batch_reference(spec, &subject, splits, &theta0, &pre, &k)?;
                for &(ratio, shuffle) in &grid {
                    row(&mut out, template(&label, ratio, shuffle), |rec, metrics| {
                        let rule = UpdateRule::gd(eta).with_preconditioner(pre.clone()).with_batching(Batching::MiniBatch {
                            batch_size: batch_size_from_ratio(ratio, n)?,
                            shuffle,
                            seed,
                        });
                        let trace = fit(&subject, spec, &splits.train.y, &theta0.values, rule, RecordOptions::default())?;
                        let test = subject.score(rec, &trace.theta, splits)?;
                        rec.jitter = Some(k.jitter());
                        finish_trained(rec, &trace, spec.train.loss_threshold, metrics);
                        metrics.push(rec.metric("eta", eta));
                        metrics.push(rec.metric("distance_to_full_batch", (&test - &ref_test).norm()));
                        Ok(())
                    });
                }
            }
        }
        Ok(out)
    })
}

/// Learning rate and test predictions of the full-batch run.
fn full_batch_reference(
    spec: &ExperimentSpec,
    subject: &Subject,
    splits: &Splits,
    theta0: &ParamVector,
    pre: &Preconditioner,
    k: &KernelMatrix,
) -> Result<(f64, DVector<f64>)> {
    let eta = select_rate(spec, subject.model(), &splits.train.y, &theta0.values, pre, k)?;
    let rule = UpdateRule::gd(eta).with_preconditioner(pre.clone());
    let trace = fit(subject, spec, &splits.train.y, &theta0.values, rule, RecordOptions::default())?;
    Ok((eta, subject.predict(&trace.theta, Probe::Test)?))
}

/// Median of `metric` over rows of `out` matching `pred`.
pub fn median_metric(out: &RunOutput, metric: &str, pred: impl Fn(&ResultRecord) -> bool) -> Option<f64> {
    let keys: Vec<_> = out.records.iter().filter(|r| pred(r)).map(ResultRecord::key).collect();
    median(&out.metric_values(metric, |m| keys.contains(&m.key())))
}
