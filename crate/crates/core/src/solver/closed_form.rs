use nalgebra::{Cholesky, DMatrix, DVector};

use super::kernel::{extreme_eigenvalues, KernelMatrix, SINGULAR_RATIO};
use crate::error::{Error, Result};
use crate::net::{Activation, BiasMode, FeatureMatrix, NetworkConfig};

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}

/// Dual coefficients `α = K⁻¹Y` and the primal weights `Φᵀα` of the
/// minimum-norm interpolator.
#[derive(Debug, Clone)]
pub struct InterpolatorWeights {
    pub alpha: DVector<f64>,
    pub primal: DVector<f64>,
    pub jitter: f64,
}

impl InterpolatorWeights {
    /// `f^int(x) = φ(x)Φᵀα` for every row of `phi`.
    pub fn predict(&self, phi: &FeatureMatrix) -> Result<DVector<f64>> {
        check_len("probe feature width", self.primal.len(), phi.cols())?;
        Ok(phi.apply(&self.primal))
    }
}

pub fn min_complexity_interpolator(
    phi_train: &FeatureMatrix,
    k: &KernelMatrix,
    y: &DVector<f64>,
) -> Result<InterpolatorWeights> {
    check_len("kernel size", phi_train.rows(), k.n())?;
    check_len("labels", phi_train.rows(), y.len())?;
    let alpha = k.solve(y)?;
    let primal = phi_train.apply_transpose(&alpha);
    Ok(InterpolatorWeights {
        alpha,
        primal,
        jitter: k.jitter(),
    })
}

/// Which closed form of the GD limit to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GdForm {
    /// `f₀(x) + φ(x)ΦᵀK⁻¹(Y − f₀(X))`; valid for any network.
    Generic,
    /// `f^int(x) + (1/L)·φ(x)(𝟙 − P_F)θ₀`; needs relu homogeneity.
    Relu { depth: usize },
}

impl GdForm {
    /// The relu form, after checking that the config is homogeneous.
    pub fn relu(config: &NetworkConfig) -> Result<Self> {
        if config.activation != Activation::Relu {
            return Err(Error::ActivationNotSupported(config.activation.name()));
        }
        if config.bias_mode != BiasMode::Zero {
            return Err(Error::BiasNotSupported);
        }
        Ok(GdForm::Relu { depth: config.depth })
    }
}

/// Inputs shared by the GD-limit closed forms.
#[derive(Debug, Clone, Copy)]
pub struct GdProblem<'a> {
    pub phi_train: &'a FeatureMatrix,
    pub kernel: &'a KernelMatrix,
    pub y: &'a DVector<f64>,
    pub theta0: &'a [f64],
    pub f0_train: &'a DVector<f64>,
}

/// Predictions at convergence of linearized gradient descent.
pub fn gd_closed_form(
    problem: &GdProblem<'_>,
    phi_probe: &FeatureMatrix,
    f0_probe: &DVector<f64>,
    form: GdForm,
) -> Result<DVector<f64>> {
    let GdProblem {
        phi_train,
        kernel,
        y,
        theta0,
        f0_train,
    } = *problem;
    check_len("probe feature width", phi_train.cols(), phi_probe.cols())?;
    check_len("probe outputs", phi_probe.rows(), f0_probe.len())?;
    check_len("training outputs", phi_train.rows(), f0_train.len())?;
    match form {
        GdForm::Generic => {
            let w = min_complexity_interpolator(phi_train, kernel, &(y - f0_train))?;
            Ok(f0_probe + phi_probe.apply(&w.primal))
        }
        GdForm::Relu { depth } => {
            check_len("initial parameters", phi_train.cols(), theta0.len())?;
            let w = min_complexity_interpolator(phi_train, kernel, y)?;
            let (_, perp) = projector_apply(phi_train, kernel, &DVector::from_column_slice(theta0))?;
            Ok(phi_probe.apply(&w.primal) + phi_probe.apply(&perp) / depth as f64)
        }
    }
}

/// `(P_F v, (𝟙 − P_F) v)` with `P_F = ΦᵀK⁻¹Φ`, never formed densely.
pub fn projector_apply(
    phi_train: &FeatureMatrix,
    k: &KernelMatrix,
    v: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_len("projected vector", phi_train.cols(), v.len())?;
    check_len("kernel size", phi_train.rows(), k.n())?;
    let inside = phi_train.apply_transpose(&k.solve(&phi_train.apply(v))?);
    let outside = v - &inside;
    Ok((inside, outside))
}

/// `φ(x)DΦᵀ(ΦDΦᵀ)⁻¹Y`: the interpolator that is minimal w.r.t. the kernel
/// `K_D = ΦDΦᵀ` for a positive diagonal `D`.
pub fn d_kernel_interpolator(
    phi_train: &FeatureMatrix,
    phi_probe: &FeatureMatrix,
    d: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len("diagonal", phi_train.cols(), d.len())?;
    check_len("probe feature width", phi_train.cols(), phi_probe.cols())?;
    check_len("labels", phi_train.rows(), y.len())?;
    if let Some(bad) = d.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidHyperparameter(format!("diagonal entries must be positive, found {bad}")));
    }
    let kd = KernelMatrix::new(weighted_gram(phi_train, d))?;
    let alpha = kd.solve(y)?;
    let primal = d.component_mul(&phi_train.apply_transpose(&alpha));
    Ok(phi_probe.apply(&primal))
}

/// `Φ diag(d) Φᵀ`.
pub(crate) fn weighted_gram(phi: &FeatureMatrix, d: &DVector<f64>) -> DMatrix<f64> {
    let t = phi.transposed();
    let mut scaled = t.clone();
    for mut col in scaled.column_iter_mut() {
        col.component_mul_assign(d);
    }
    t.tr_mul(&scaled)
}

/// Least squares in the primal: `φ(x)(ΦᵀΦ + ridge·𝟙)⁻¹ΦᵀY`.
///
/// With `ridge = 0` the features must have full column rank.
pub fn underparam_closed_form(
    phi: &FeatureMatrix,
    y: &DVector<f64>,
    ridge: f64,
    phi_probe: &FeatureMatrix,
) -> Result<DVector<f64>> {
    check_len("labels", phi.rows(), y.len())?;
    check_len("probe feature width", phi.cols(), phi_probe.cols())?;
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidHyperparameter(format!("ridge must be nonnegative, got {ridge}")));
    }
    let t = phi.transposed();
    let mut primal = t * t.transpose();
    for i in 0..primal.nrows() {
        primal[(i, i)] += ridge;
    }
    let (lambda_min, lambda_max) = extreme_eigenvalues(&primal);
    if !(lambda_min > SINGULAR_RATIO * lambda_max) {
        return Err(Error::RankDeficient { lambda_min, lambda_max });
    }
    let chol = Cholesky::new(primal).ok_or(Error::RankDeficient { lambda_min, lambda_max })?;
    let w = chol.solve(&phi.apply_transpose(y));
    Ok(phi_probe.apply(&w))
}

/// `‖Φ_probe(𝟙 − P_F)θ₀‖₂ / √(2·n_probe·L)`, the size of the
/// initialization's out-of-span contribution on the probe set.
pub fn j_statistic(
    phi_probe: &FeatureMatrix,
    phi_train: &FeatureMatrix,
    k: &KernelMatrix,
    theta0: &[f64],
    depth: usize,
) -> Result<f64> {
    check_len("probe feature width", phi_train.cols(), phi_probe.cols())?;
    if phi_probe.rows() == 0 {
        return Err(Error::InsufficientSamples("j statistic needs at least one probe point".into()));
    }
    let (_, perp) = projector_apply(phi_train, k, &DVector::from_column_slice(theta0))?;
    let n_probe = phi_probe.rows() as f64;
    Ok(phi_probe.apply(&perp).norm() / (2.0 * n_probe * depth as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::empirical_ntk;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Dense `P_F` via the Moore–Penrose pseudo-inverse of `Φ`.
    fn dense_projector(rows: &DMatrix<f64>) -> DMatrix<f64> {
        let pinv = rows.clone().pseudo_inverse(1e-14).unwrap();
        pinv * rows
    }

    #[test]
    fn hand_solved_single_point() {
        let phi = FeatureMatrix::from_rows(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let k = empirical_ntk(&phi).unwrap();
        let w = min_complexity_interpolator(&phi, &k, &DVector::from_element(1, 2.0)).unwrap();
        assert_eq!(w.primal.as_slice(), &[2.0, 0.0]);
        assert_eq!(w.predict(&phi).unwrap()[0], 2.0);
    }

    #[test]
    fn interpolator_is_minimum_norm_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows = random_matrix(5, 8, &mut rng);
        let y = random_vector(5, &mut rng);
        let phi = FeatureMatrix::from_rows(&rows);
        let k = empirical_ntk(&phi).unwrap();
        let w = min_complexity_interpolator(&phi, &k, &y).unwrap();
        let oracle = rows.clone().pseudo_inverse(1e-14).unwrap() * &y;
        assert!((&w.primal - oracle).amax() < 1e-10);
        assert!((w.predict(&phi).unwrap() - &y).amax() <= 1e-8 * y.amax());
    }

    #[test]
    fn interpolator_equals_dual_kernel_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = FeatureMatrix::from_rows(&random_matrix(6, 15, &mut rng));
        let probe = FeatureMatrix::from_rows(&random_matrix(4, 15, &mut rng));
        let y = random_vector(6, &mut rng);
        let k = empirical_ntk(&phi).unwrap();
        let primal = min_complexity_interpolator(&phi, &k, &y).unwrap().predict(&probe).unwrap();
        // k(x, X) entries from explicit dot products
        let cross = DMatrix::from_fn(4, 6, |i, j| probe.row(i).iter().zip(phi.row(j)).map(|(a, b)| a * b).sum::<f64>());
        let dual = cross * k.inverse().unwrap() * &y;
        assert!((primal - dual).amax() < 1e-10);
    }

    #[test]
    fn projector_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = random_matrix(4, 12, &mut rng);
        let phi = FeatureMatrix::from_rows(&rows);
        let k = empirical_ntk(&phi).unwrap();
        let v = random_vector(12, &mut rng);
        let (inside, outside) = projector_apply(&phi, &k, &v).unwrap();
        let dense = dense_projector(&rows);
        assert!((&inside - &dense * &v).amax() < 1e-10);
        assert!((&inside + &outside - &v).amax() < 1e-14);
        let (twice, _) = projector_apply(&phi, &k, &inside).unwrap();
        assert!((twice - &inside).amax() < 1e-10);
        let span = rows.transpose() * random_vector(4, &mut rng);
        let (_, perp) = projector_apply(&phi, &k, &span).unwrap();
        assert!(perp.amax() < 1e-10);
    }

    #[test]
    fn gd_forms_reproduce_labels_on_training_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = FeatureMatrix::from_rows(&random_matrix(5, 20, &mut rng));
        let k = empirical_ntk(&phi).unwrap();
        let y = random_vector(5, &mut rng);
        let theta0: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f0 = random_vector(5, &mut rng);
        let problem = GdProblem {
            phi_train: &phi,
            kernel: &k,
            y: &y,
            theta0: &theta0,
            f0_train: &f0,
        };
        for form in [GdForm::Generic, GdForm::Relu { depth: 2 }] {
            let pred = gd_closed_form(&problem, &phi, &f0, form).unwrap();
            assert!((pred - &y).amax() < 1e-8, "{form:?}");
        }
    }

    #[test]
    fn relu_form_collapses_to_interpolator_for_in_span_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = random_matrix(3, 10, &mut rng);
        let phi = FeatureMatrix::from_rows(&rows);
        let probe = FeatureMatrix::from_rows(&random_matrix(4, 10, &mut rng));
        let k = empirical_ntk(&phi).unwrap();
        let y = random_vector(3, &mut rng);
        let theta0 = rows.transpose() * random_vector(3, &mut rng);
        let f0 = phi.apply(&theta0) / 2.0;
        let problem = GdProblem {
            phi_train: &phi,
            kernel: &k,
            y: &y,
            theta0: theta0.as_slice(),
            f0_train: &f0,
        };
        let relu = gd_closed_form(&problem, &probe, &(probe.apply(&theta0) / 2.0), GdForm::Relu { depth: 2 }).unwrap();
        let int = min_complexity_interpolator(&phi, &k, &y).unwrap().predict(&probe).unwrap();
        assert!((relu - int).amax() < 1e-12);
    }

    #[test]
    fn relu_form_rejects_inhomogeneous_configs() {
        let cfg = NetworkConfig::new(2, 3, 4, 1.0);
        assert!(GdForm::relu(&cfg).is_ok());
        assert!(matches!(
            GdForm::relu(&cfg.clone().with_activation(Activation::Softplus)),
            Err(Error::ActivationNotSupported(_))
        ));
        assert!(matches!(
            GdForm::relu(&cfg.with_bias_mode(BiasMode::StandardNormal)),
            Err(Error::BiasNotSupported)
        ));
    }

    #[test]
    fn d_kernel_interpolator_reduces_and_interpolates() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let phi = FeatureMatrix::from_rows(&random_matrix(4, 9, &mut rng));
        let probe = FeatureMatrix::from_rows(&random_matrix(3, 9, &mut rng));
        let y = random_vector(4, &mut rng);
        let ones = DVector::from_element(9, 1.0);
        let k = empirical_ntk(&phi).unwrap();
        let plain = min_complexity_interpolator(&phi, &k, &y).unwrap().predict(&probe).unwrap();
        assert!((d_kernel_interpolator(&phi, &probe, &ones, &y).unwrap() - plain).amax() < 1e-10);
        let d = DVector::from_fn(9, |_, _| rng.random_range(0.1..3.0));
        assert!((d_kernel_interpolator(&phi, &phi, &d, &y).unwrap() - &y).amax() < 1e-8);
        let mut bad = d.clone();
        bad[2] = 0.0;
        assert!(d_kernel_interpolator(&phi, &phi, &bad, &y).is_err());
    }

    #[test]
    fn underparam_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows = random_matrix(30, 6, &mut rng);
        let y = random_vector(30, &mut rng);
        let phi = FeatureMatrix::from_rows(&rows);
        let pred = underparam_closed_form(&phi, &y, 0.0, &phi).unwrap();
        let w = (rows.transpose() * &rows).lu().solve(&(rows.transpose() * &y)).unwrap();
        assert!((pred - &rows * w).amax() < 1e-9);
    }

    #[test]
    fn underparam_square_system_interpolates_and_rejects_rank_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let phi = FeatureMatrix::from_rows(&random_matrix(5, 5, &mut rng));
        let y = random_vector(5, &mut rng);
        assert!((underparam_closed_form(&phi, &y, 0.0, &phi).unwrap() - &y).amax() < 1e-8);
        let mut rows = random_matrix(8, 3, &mut rng);
        let c0 = rows.column(0).clone_owned();
        rows.set_column(2, &c0);
        let phi = FeatureMatrix::from_rows(&rows);
        let y = random_vector(8, &mut rng);
        assert!(matches!(
            underparam_closed_form(&phi, &y, 0.0, &phi),
            Err(Error::RankDeficient { .. })
        ));
        assert!(underparam_closed_form(&phi, &y, 1e-3, &phi).is_ok());
    }

    #[test]
    fn j_statistic_matches_dense_oracle_and_vanishes_in_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows = random_matrix(4, 14, &mut rng);
        let probe_rows = random_matrix(6, 14, &mut rng);
        let phi = FeatureMatrix::from_rows(&rows);
        let probe = FeatureMatrix::from_rows(&probe_rows);
        let k = empirical_ntk(&phi).unwrap();
        let theta0 = random_vector(14, &mut rng);
        let j = j_statistic(&probe, &phi, &k, theta0.as_slice(), 3).unwrap();
        let perp = (DMatrix::identity(14, 14) - dense_projector(&rows)) * &theta0;
        let oracle = (&probe_rows * perp).norm() / (2.0 * 6.0 * 3.0f64).sqrt();
        assert!((j - oracle).abs() < 1e-10);
        let span = rows.transpose() * random_vector(4, &mut rng);
        assert!(j_statistic(&probe, &phi, &k, span.as_slice(), 3).unwrap() < 1e-10);
    }
}
