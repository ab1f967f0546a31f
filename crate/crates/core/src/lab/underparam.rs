//! Linear models on a fixed random feature map with more samples than
//! features: the trained predictor no longer depends on θ₀ or the optimizer.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::common::{finish_trained, half_mse, load_splits, record, rep_seed, row, select_rate};
use super::results::RunOutput;
use super::spec::ExperimentSpec;
use crate::error::Result;
use crate::net::{FeatureMatrix, LinearizedModel};
use crate::optim::{train, RecordOptions, StopRule, UpdateRule};
use crate::solver::{empirical_ntk, underparam_closed_form};

/// `φ(x) = √(2/P)·relu(Wx/√d)` with a fixed Gaussian `W ∈ ℝ^{P×d}`.
#[derive(Debug, Clone)]
pub struct RandomFeatures {
    w: DMatrix<f64>,
}

impl RandomFeatures {
    pub fn new(features: usize, input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RandomFeatures {
            w: DMatrix::from_fn(features, input_dim, |_, _| StandardNormal.sample(&mut rng)),
        }
    }

    pub fn features(&self) -> usize {
        self.w.nrows()
    }

    pub fn map(&self, x: &DMatrix<f64>) -> FeatureMatrix {
        let d = self.w.ncols() as f64;
        let scale = (2.0 / self.features() as f64).sqrt();
        let pre = x * self.w.transpose() / d.sqrt();
        FeatureMatrix::from_rows(&pre.map(|h| scale * h.max(0.0)))
    }
}

/// Every full-batch optimizer of `train.optimizers` from `repetitions`
/// draws of θ₀; distances to the least-squares closed form, to the first
/// draw's predictions and to the GD predictions of the same draw.
pub fn run_underparam_demo(spec: &ExperimentSpec) -> Result<RunOutput> {
    let splits = load_splits(spec)?;
    let feats = RandomFeatures::new(spec.sweep.features, splits.train.dim(), spec.data.seed);
    let p = feats.features();
    let phi = feats.map(&splits.train.x);
    let phi_test = feats.map(&splits.test.x);
    let k = empirical_ntk(&phi)?;
    let closed = underparam_closed_form(&phi, &splits.train.y, spec.sweep.ridge, &phi_test)?;
    let names: Vec<&String> = spec.train.optimizers.iter().filter(|o| !(o.as_str() == "sgd" || o.ends_with("_sgd"))).collect();
    let stop = StopRule::linearized().with_cap(spec.train.lin_step_cap).with_threshold(0.0).with_grad_tol(spec.train.grad_tol);

    let mut out = RunOutput::default();
    let mut first: Vec<Option<DVector<f64>>> = vec![None; names.len()];
    for rep in 0..spec.repetitions {
        let seed = rep_seed(spec, rep);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta0: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f0 = phi.apply(&DVector::from_column_slice(&theta0));
        let f0_test = phi_test.apply(&DVector::from_column_slice(&theta0));
        let model = LinearizedModel::fixed_features(phi.clone(), theta0.clone(), f0)?;
        let mut gd_pred: Option<DVector<f64>> = None;
        for (oi, name) in names.iter().enumerate() {
            let mut template = record(spec, seed, "features", p as f64, name);
            template.width = Some(p);
            row(&mut out, template, |rec, metrics| {
                let pre = spec.train.preconditioner(name)?;
                let eta = select_rate(spec, &model, &splits.train.y, &theta0, &pre, &k)?;
                let trace = train(&model, &splits.train.y, &theta0, &UpdateRule::gd(eta).with_preconditioner(pre), &stop, &RecordOptions::default())?;
                let pred = model.predict_with(&trace.theta, &phi_test, &f0_test);
                rec.train_loss = Some(trace.final_loss());
                rec.test_loss = half_mse(&pred, &splits.test.y);
                rec.jitter = Some(k.jitter());
                // the loss floor is positive; convergence is judged by the gradient
                finish_trained(rec, &trace, f64::INFINITY, metrics);
                metrics.push(rec.metric("eta", eta));
                metrics.push(rec.metric("distance_to_closed_form", max_abs(&pred, &closed)));
                match &first[oi] {
                    Some(f) => metrics.push(rec.metric("distance_to_first_init", max_abs(&pred, f))),
                    None => first[oi] = Some(pred.clone()),
                }
                match &gd_pred {
                    Some(g) => metrics.push(rec.metric("distance_to_gd", max_abs(&pred, g))),
                    None if name.as_str() == "gd" => gd_pred = Some(pred.clone()),
                    None => {}
                }
                Ok(())
            });
        }
    }
    Ok(out)
}

fn max_abs(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    if a.is_empty() {
        0.0
    } else {
        (a - b).amax()
    }
}
