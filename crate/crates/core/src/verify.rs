//! Runtime property suite behind `ntk-lab verify`: small randomized
//! instances of the invariants of the network, solver, optimizer and lab
//! layers, each checked against an independent computation.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lab::data::{encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels};
use crate::lab::{ExperimentSpec, IdxImages};
use crate::net::{
    feature_map, feature_matrix, forward, forward_batch, homogeneity_residual, init_params, loss_and_gradient, BiasMode, FeatureMatrix,
    LinearizedModel, NetworkConfig,
};
use crate::optim::{
    concentration_metric, default_learning_rate, sgd_schedule, train, train_observed, Batching, OptimizerState, Preconditioner, RecordOptions,
    StopRule, UpdateRule,
};
use crate::solver::{
    adaptive_closed_form_trace, d_kernel_interpolator, empirical_ntk, gd_closed_form, min_complexity_interpolator, projector_apply,
    sgd_projector_matrix, AdaptiveMatrixSeq, AdaptiveProblem, GdForm, GdProblem,
};

/// Outcome of one invariant.
#[derive(Debug, Clone)]
pub struct Check {
    pub group: &'static str,
    pub name: &'static str,
    pub passed: bool,
    /// Measured error or the failure message.
    pub detail: String,
    pub seconds: f64,
}

type Outcome = std::result::Result<String, String>;

fn ensure(ok: bool, what: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

fn within(err: f64, tol: f64, what: &str) -> Outcome {
    ensure(err <= tol, || format!("{what}: {err:.3e} > {tol:.0e}"))?;
    Ok(format!("{what} {err:.1e}"))
}

fn e2s(e: crate::Error) -> String {
    e.to_string()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn inputs(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.random_range(-0.6..0.6))
}

fn fixed_features(n: usize, p: usize, seed: u64) -> (LinearizedModel, DVector<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let phi = FeatureMatrix::from_rows(&DMatrix::from_fn(n, p, |_, _| r.random_range(-1.0..1.0)));
    let theta0: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
    let f0 = phi.apply(&DVector::from_column_slice(&theta0));
    let y = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
    (LinearizedModel::fixed_features(phi, theta0.clone(), f0).expect("consistent sizes"), y, theta0)
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

// ---- net ----

fn param_count() -> Outcome {
    let cfg = NetworkConfig::new(3, 5, 7, 1.0);
    let want = (5 + 1) * 7 + (7 + 1) * 7 + (7 + 1);
    ensure(cfg.param_count() == want && init_params(&cfg, 0).len() == want, || {
        format!("P = {} != {want}", cfg.param_count())
    })?;
    Ok(format!("P = {want}"))
}

fn features_are_gradients() -> Outcome {
    let cfg = NetworkConfig::new(3, 4, 6, 1.3).with_bias_mode(BiasMode::StandardNormal);
    let theta = init_params(&cfg, 1);
    let x = [0.3, -0.2, 0.5, 0.1];
    let phi = feature_map(&cfg, &theta, &x).map_err(e2s)?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut up = theta.clone();
        up.values[i] += h;
        let mut dn = theta.clone();
        dn.values[i] -= h;
        let fd = (forward(&cfg, &up, &x).map_err(e2s)? - forward(&cfg, &dn, &x).map_err(e2s)?) / (2.0 * h);
        worst = worst.max((fd - phi[i]).abs());
    }
    within(worst, 1e-6, "max |∂f/∂θ − φ|")
}

fn sigma_homogeneity() -> Outcome {
    let base = NetworkConfig::new(3, 3, 16, 1.0);
    let theta = init_params(&base, 2);
    let x = inputs(5, 3, &mut rng(3));
    let phi1 = feature_matrix(&base, &theta, &x).map_err(e2s)?;
    let f1 = forward_batch(&base, &theta, &x).map_err(e2s)?;
    let mut worst: f64 = 0.0;
    for s in [0.5, 2.0, 3.7] {
        let cfg = base.clone().with_sigma(s);
        let scale = s.powi(3);
        let phi = feature_matrix(&cfg, &theta, &x).map_err(e2s)?;
        let f = forward_batch(&cfg, &theta, &x).map_err(e2s)?;
        worst = worst.max((phi.transposed() - phi1.transposed() * scale).amax() / (phi1.transposed().amax() * scale));
        worst = worst.max(rel(&f, &(&f1 * scale)));
    }
    within(worst, 1e-12, "relative deviation from σ^L scaling")
}

fn euler_identity() -> Outcome {
    let cfg = NetworkConfig::new(3, 4, 12, 1.7);
    let theta = init_params(&cfg, 4);
    let mut worst: f64 = 0.0;
    let x = inputs(6, 4, &mut rng(5));
    for i in 0..6 {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        let f = forward(&cfg, &theta, &xi).map_err(e2s)?;
        worst = worst.max(homogeneity_residual(&cfg, &theta, &xi).map_err(e2s)? / f.abs().max(1.0));
    }
    within(worst, 1e-10, "|⟨θ,∇f⟩ − Lf|")
}

fn linearization_of_affine_net_is_exact() -> Outcome {
    let cfg = NetworkConfig::new(1, 4, 1, 1.4).with_bias_mode(BiasMode::StandardNormal);
    let anchor = init_params(&cfg, 6);
    let x = inputs(7, 4, &mut rng(7));
    let lin = LinearizedModel::new(&cfg, &anchor, &x).map_err(e2s)?;
    let moved = init_params(&cfg, 8);
    let a = lin.predict(&moved.values, &x).map_err(e2s)?;
    let b = forward_batch(&cfg, &moved, &x).map_err(e2s)?;
    let at_anchor = (lin.predict_train(&anchor.values) - forward_batch(&cfg, &anchor, &x).map_err(e2s)?).amax();
    within((a - b).amax().max(at_anchor), 1e-12, "|f^lin − f|")
}

fn batch_gradient_is_feature_contraction() -> Outcome {
    let cfg = NetworkConfig::new(2, 3, 10, 1.1);
    let theta = init_params(&cfg, 9);
    let mut r = rng(10);
    let x = inputs(8, 3, &mut r);
    let y = DVector::from_fn(8, |_, _| r.random_range(-1.0..1.0));
    let batch = [1usize, 4, 6];
    let (_, g) = loss_and_gradient(&cfg, &theta, &x, &y, Some(&batch)).map_err(e2s)?;
    let phi = feature_matrix(&cfg, &theta, &x).map_err(e2s)?;
    let f = forward_batch(&cfg, &theta, &x).map_err(e2s)?;
    let mut w = DVector::zeros(8);
    for &i in &batch {
        w[i] = (f[i] - y[i]) / 3.0;
    }
    within((DVector::from_vec(g) - phi.apply_transpose(&w)).amax(), 1e-12, "|∇L_B − Φᵀw|")
}

// ---- solver ----

fn relu_instance(sigma: f64, width: usize, seed: u64) -> (NetworkConfig, crate::net::ParamVector, DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let cfg = NetworkConfig::new(2, 4, width, sigma);
    let theta = init_params(&cfg, seed);
    let mut r = rng(seed + 100);
    let x = inputs(10, 4, &mut r);
    let y = DVector::from_fn(10, |_, _| r.random_range(-1.0..1.0));
    let probe = inputs(12, 4, &mut r);
    (cfg, theta, x, y, probe)
}

fn interpolator_interpolates() -> Outcome {
    let (cfg, theta, x, y, _) = relu_instance(1.0, 64, 11);
    let phi = feature_matrix(&cfg, &theta, &x).map_err(e2s)?;
    let k = empirical_ntk(&phi).map_err(e2s)?;
    let w = min_complexity_interpolator(&phi, &k, &y).map_err(e2s)?;
    within((w.predict(&phi).map_err(e2s)? - &y).amax(), 1e-8, "|f^int(X) − Y|")
}

fn interpolator_is_sigma_invariant() -> Outcome {
    let (cfg, theta, x, y, probe) = relu_instance(1.0, 64, 12);
    let predict = |s: f64| -> crate::Result<DVector<f64>> {
        let c = cfg.clone().with_sigma(s);
        let phi = feature_matrix(&c, &theta, &x)?;
        let w = min_complexity_interpolator(&phi, &empirical_ntk(&phi)?, &y)?;
        w.predict(&feature_matrix(&c, &theta, &probe)?)
    };
    let base = predict(1.0).map_err(e2s)?;
    let mut worst: f64 = 0.0;
    for s in [0.25, 3.0, 8.0] {
        worst = worst.max(rel(&predict(s).map_err(e2s)?, &base));
    }
    within(worst, 1e-8, "relative change of f^int across σ")
}

fn projector_is_orthogonal() -> Outcome {
    let (model, _, theta0) = fixed_features(6, 20, 13);
    let k = empirical_ntk(&model.phi).map_err(e2s)?;
    let v = DVector::from_column_slice(&theta0);
    let (inside, outside) = projector_apply(&model.phi, &k, &v).map_err(e2s)?;
    let (again, _) = projector_apply(&model.phi, &k, &inside).map_err(e2s)?;
    let idem = (&again - &inside).amax();
    let orth = inside.dot(&outside).abs();
    let kills = model.phi.apply(&outside).amax();
    within(idem.max(orth).max(kills), 1e-10, "P² − P, ⟨Pv,(𝟙−P)v⟩, Φ(𝟙−P)v")
}

fn relu_form_equals_generic_form() -> Outcome {
    let (cfg, theta, x, y, probe) = relu_instance(1.5, 48, 14);
    let phi = feature_matrix(&cfg, &theta, &x).map_err(e2s)?;
    let k = empirical_ntk(&phi).map_err(e2s)?;
    let f0 = forward_batch(&cfg, &theta, &x).map_err(e2s)?;
    let problem = GdProblem {
        phi_train: &phi,
        kernel: &k,
        y: &y,
        theta0: &theta.values,
        f0_train: &f0,
    };
    let pp = feature_matrix(&cfg, &theta, &probe).map_err(e2s)?;
    let pf = forward_batch(&cfg, &theta, &probe).map_err(e2s)?;
    let a = gd_closed_form(&problem, &pp, &pf, GdForm::Generic).map_err(e2s)?;
    let b = gd_closed_form(&problem, &pp, &pf, GdForm::relu(&cfg).map_err(e2s)?).map_err(e2s)?;
    within((a - b).amax(), 1e-9, "|generic − relu form|")
}

fn closed_form_matches_linearized_gd() -> Outcome {
    let (cfg, theta, x, y, probe) = relu_instance(1.0, 32, 15);
    let lin = LinearizedModel::new(&cfg, &theta, &x).map_err(e2s)?;
    let k = empirical_ntk(&lin.phi).map_err(e2s)?;
    let eta = default_learning_rate(&k).map_err(e2s)?;
    let stop = StopRule::linearized().with_threshold(1e-14);
    let tr = train(&lin, &y, &theta.values, &UpdateRule::gd(eta), &stop, &RecordOptions::default()).map_err(e2s)?;
    ensure(tr.converged(), || format!("GD stopped with {} after {} steps", tr.status.name(), tr.steps))?;
    let pp = feature_matrix(&cfg, &theta, &probe).map_err(e2s)?;
    let pf = forward_batch(&cfg, &theta, &probe).map_err(e2s)?;
    let problem = GdProblem {
        phi_train: &lin.phi,
        kernel: &k,
        y: &y,
        theta0: &theta.values,
        f0_train: &lin.f_anchor,
    };
    let closed = gd_closed_form(&problem, &pp, &pf, GdForm::Generic).map_err(e2s)?;
    within((closed - lin.predict_with(&tr.theta, &pp, &pf)).amax(), 1e-6, "|iterative − closed form|")
}

fn adaptive_trace_matches_adagrad() -> Outcome {
    let (model, y, theta0) = fixed_features(4, 16, 16);
    let mut r = rng(17);
    let probe = FeatureMatrix::from_rows(&DMatrix::from_fn(5, 16, |_, _| r.random_range(-1.0..1.0)));
    let f0_probe = probe.apply(&DVector::from_column_slice(&theta0));
    let eta = 0.05;
    let rule = UpdateRule::gd(eta).with_preconditioner(Preconditioner::adagrad());
    let stop = StopRule::linearized().with_threshold(0.0).with_cap(50);
    let record = RecordOptions {
        d_payloads: true,
        ..Default::default()
    };
    let mut iterates = Vec::new();
    let tr = train_observed(&model, &y, &theta0, &rule, &stop, &record, &mut |_, th| {
        iterates.push(model.predict_with(th, &probe, &f0_probe));
        Ok(())
    })
    .map_err(e2s)?;
    let problem = AdaptiveProblem {
        phi_train: &model.phi,
        phi_probe: &probe,
        y: &y,
        f0_train: &model.f_anchor,
        f0_probe: &f0_probe,
        eta,
    };
    let closed = adaptive_closed_form_trace(&problem, &AdaptiveMatrixSeq::Diagonal(tr.d_payloads.clone()), tr.steps).map_err(e2s)?;
    let worst = iterates.iter().zip(&closed.probe).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
    ensure(iterates.len() == closed.probe.len(), || "trace lengths differ".into())?;
    within(worst, 1e-6, "max_t |iterative − closed form|")
}

fn sgd_step_is_projector_step() -> Outcome {
    let (model, y, theta0) = fixed_features(6, 24, 18);
    let k = empirical_ntk(&model.phi).map_err(e2s)?;
    let eta = 0.1;
    let mut worst: f64 = 0.0;
    for batch in [vec![2usize], vec![0, 3, 5], (0..6).collect()] {
        let (_, g) = crate::optim::Model::loss_and_gradient(&model, &theta0, &y, Some(&batch)).map_err(e2s)?;
        let sgd = DVector::from_column_slice(&theta0) - DVector::from_vec(g) * eta;
        let (_, full) = crate::optim::Model::loss_and_gradient(&model, &theta0, &y, None).map_err(e2s)?;
        let proj = sgd_projector_matrix(&model.phi, &k, &batch, 0.0).map_err(e2s)?;
        let pre = DVector::from_column_slice(&theta0) - proj.apply(&model.phi, &k, &DVector::from_vec(full)).map_err(e2s)? * eta;
        worst = worst.max((sgd - pre).amax());
    }
    within(worst, 1e-12, "|SGD step − D_B step|")
}

fn single_sample_adagrad_limit() -> Outcome {
    let p = 12;
    let mut r = rng(19);
    let phi = FeatureMatrix::from_rows(&DMatrix::from_fn(1, p, |_, _| r.random_range(-1.0..1.0)));
    let probe = FeatureMatrix::from_rows(&DMatrix::from_fn(20, p, |_, _| r.random_range(-1.0..1.0)));
    let y = DVector::from_element(1, 0.8);
    let theta0 = vec![0.0; p];
    let model = LinearizedModel::fixed_features(phi.clone(), theta0.clone(), DVector::zeros(1)).map_err(e2s)?;
    let rule = UpdateRule::gd(0.05).with_preconditioner(Preconditioner::AdaGrad { eps_div: 0.0 });
    let stop = StopRule::linearized().with_threshold(1e-20).with_cap(200_000);
    let tr = train(&model, &y, &theta0, &rule, &stop, &RecordOptions::default()).map_err(e2s)?;
    // D_t ∝ diag(|φ|)⁻¹ for every t, so the limit is the D-kernel interpolator
    let d = phi.transposed().column(0).map(|v| 1.0 / v.abs());
    let want = d_kernel_interpolator(&phi, &probe, &d, &y).map_err(e2s)?;
    let got = model.predict_with(&tr.theta, &probe, &DVector::zeros(20));
    within((got - want).amax(), 1e-5, "|AdaGrad limit − D-kernel interpolator|")
}

fn kernel_jitter_ladder() -> Outcome {
    let (model, _, _) = fixed_features(5, 30, 20);
    let k = empirical_ntk(&model.phi).map_err(e2s)?;
    ensure(k.jitter() == 0.0 && k.is_factored(), || format!("well-posed kernel got jitter {}", k.jitter()))?;
    let mut rows = model.phi.to_rows();
    let first = rows.row(0).into_owned();
    rows.row_mut(1).copy_from(&first);
    let dup = empirical_ntk(&FeatureMatrix::from_rows(&rows)).map_err(e2s)?;
    ensure(!dup.is_factored() || dup.jitter() > 0.0, || "duplicate rows factored without jitter".into())?;
    Ok(format!("duplicate rows: jitter {:.1e}, factored {}", dup.jitter(), dup.is_factored()))
}

// ---- optim ----

fn adagrad_hand_unroll() -> Outcome {
    let mut st = OptimizerState::new(&Preconditioner::AdaGrad { eps_div: 0.0 }, 2).map_err(e2s)?;
    let mut th = vec![1.0, -1.0];
    st.step(0.5, &mut th, &[2.0, -1.0]).map_err(e2s)?;
    st.step(0.5, &mut th, &[1.0, 1.0]).map_err(e2s)?;
    // acc = [4, 1] then [5, 2]
    let want = [1.0 - 0.5 - 0.5 / 5f64.sqrt(), -1.0 + 0.5 - 0.5 / 2f64.sqrt()];
    within((th[0] - want[0]).abs().max((th[1] - want[1]).abs()), 1e-15, "|θ − hand value|")
}

fn unit_diagonal_is_gd() -> Outcome {
    let (model, y, theta0) = fixed_features(5, 14, 21);
    let stop = StopRule::linearized().with_cap(200);
    let gd = train(&model, &y, &theta0, &UpdateRule::gd(0.05), &stop, &RecordOptions::default()).map_err(e2s)?;
    let ones = UpdateRule::gd(0.05).with_preconditioner(Preconditioner::Explicit { diagonal: vec![1.0; 14] });
    let ex = train(&model, &y, &theta0, &ones, &stop, &RecordOptions::default()).map_err(e2s)?;
    let full = UpdateRule::gd(0.05).with_batching(Batching::MiniBatch {
        batch_size: 5,
        shuffle: false,
        seed: 0,
    });
    let fb = train(&model, &y, &theta0, &full, &stop, &RecordOptions::default()).map_err(e2s)?;
    let a = DVector::from_vec(gd.theta);
    let err = (&a - DVector::from_vec(ex.theta)).amax().max((&a - DVector::from_vec(fb.theta)).amax());
    within(err, 1e-10, "|D≡𝟙 or full-batch SGD − GD|")
}

fn schedules_partition_epochs() -> Outcome {
    for (n, b, shuffle) in [(17, 4, true), (10, 3, false), (8, 8, true)] {
        for epoch in sgd_schedule(n, b, shuffle, 5, 4).map_err(e2s)? {
            let mut all: Vec<usize> = epoch.into_iter().flatten().collect();
            all.sort_unstable();
            ensure(all == (0..n).collect::<Vec<_>>(), || format!("N={n}, |B|={b}: epoch is not a partition"))?;
        }
    }
    Ok("every epoch covers 0..N once".into())
}

fn concentration_under_proportional_gradients() -> Outcome {
    let g = [0.4, -1.2, 0.9];
    let a = [0.8, -0.5, 0.3, 0.7, 0.2];
    let mut st = OptimizerState::new(&Preconditioner::AdaGrad { eps_div: 0.0 }, 3).map_err(e2s)?;
    let mut th = vec![0.0; 3];
    let mut ds = Vec::new();
    for ai in a {
        let grad: Vec<f64> = g.iter().map(|x| ai * x).collect();
        ds.push(st.step(0.01, &mut th, &grad).map_err(e2s)?.expect("adaptive"));
    }
    let s_t: f64 = a.iter().map(|v| v * v).sum();
    let want = 1.0 - a[0].abs() / s_t.sqrt();
    within((concentration_metric(&ds, None).map_err(e2s)? - want).abs(), 1e-12, "|metric − 1 + |a₀|/√S_T|")
}

// ---- lab ----

fn idx_round_trip() -> Outcome {
    let mut r = rng(22);
    let data = IdxImages {
        count: 10,
        rows: 3,
        cols: 4,
        pixels: (0..120).map(|_| r.random()).collect(),
        labels: (0..10).map(|_| r.random_range(0..10)).collect(),
    };
    let path = std::path::Path::new("<memory>");
    let (count, rows, cols, pixels) = parse_idx_images(&encode_idx_images(&data), path).map_err(e2s)?;
    let labels = parse_idx_labels(&encode_idx_labels(&data.labels), path).map_err(e2s)?;
    let back = IdxImages {
        count,
        rows,
        cols,
        pixels,
        labels,
    };
    ensure(back == data, || "decoded IDX differs".into())?;
    Ok("10 images".into())
}

fn spec_round_trip() -> Outcome {
    let spec = ExperimentSpec::default();
    let back = ExperimentSpec::from_toml_with_overrides(&spec.to_toml(), &[]).map_err(e2s)?;
    ensure(back == spec, || "spec changed through TOML".into())?;
    let err = ExperimentSpec::from_toml_with_overrides("", &["network.widht=3".into()]).err();
    ensure(err.is_some_and(|e| e.to_string().contains("network.widht")), || "unknown key not named".into())?;
    Ok("defaults survive, unknown keys named".into())
}

type Entry = (&'static str, &'static str, fn() -> Outcome);

const SUITE: &[Entry] = &[
    ("net", "parameter count", param_count),
    ("net", "features are parameter gradients", features_are_gradients),
    ("net", "σ-homogeneity of features and outputs", sigma_homogeneity),
    ("net", "Euler identity for zero-bias relu", euler_identity),
    ("net", "depth-1 linearization is exact", linearization_of_affine_net_is_exact),
    ("net", "batch gradient = Φᵀ weights", batch_gradient_is_feature_contraction),
    ("solver", "interpolator fits training labels", interpolator_interpolates),
    ("solver", "interpolator is σ-invariant", interpolator_is_sigma_invariant),
    ("solver", "span projector is orthogonal", projector_is_orthogonal),
    ("solver", "relu and generic GD forms agree", relu_form_equals_generic_form),
    ("solver", "GD closed form = linearized GD", closed_form_matches_linearized_gd),
    ("solver", "adaptive trace = linearized AdaGrad", adaptive_trace_matches_adagrad),
    ("solver", "SGD step = projector-preconditioned step", sgd_step_is_projector_step),
    ("solver", "single-sample AdaGrad limit", single_sample_adagrad_limit),
    ("solver", "kernel jitter ladder", kernel_jitter_ladder),
    ("optim", "AdaGrad hand unroll", adagrad_hand_unroll),
    ("optim", "unit diagonal and full batch reduce to GD", unit_diagonal_is_gd),
    ("optim", "mini-batch epochs partition the data", schedules_partition_epochs),
    ("optim", "concentration metric closed form", concentration_under_proportional_gradients),
    ("lab", "IDX round trip", idx_round_trip),
    ("lab", "spec round trip and key errors", spec_round_trip),
];

/// Runs every check; a panic inside a check counts as a failure.
pub fn run_suite() -> Vec<Check> {
    SUITE
        .iter()
        .map(|&(group, name, f)| {
            let start = Instant::now();
            let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
            let (passed, detail) = match result {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            Check {
                group,
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

/// Plain-text table, one line per check plus a summary.
pub fn render_table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.chars().count()).max().unwrap_or(0);
    let mut out = String::new();
    for c in checks {
        let pad = width - c.name.chars().count();
        out.push_str(&format!(
            "{:<4} {:<7} {}{} {:>7.3}s  {}\n",
            if c.passed { "PASS" } else { "FAIL" },
            c.group,
            c.name,
            " ".repeat(pad),
            c.seconds,
            c.detail
        ));
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    out.push_str(&format!("{} checks, {} failed\n", checks.len(), failed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let checks = run_suite();
        let table = render_table(&checks);
        assert!(checks.iter().all(|c| c.passed), "{table}");
    }
}
