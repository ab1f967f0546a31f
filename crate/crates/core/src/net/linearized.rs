use nalgebra::{DMatrix, DVector};

use super::{feature_matrix, forward_batch, FeatureMatrix, NetworkConfig, ParamVector};
use crate::error::{Error, Result};

/// `f0_x + ⟨φ(x), θ - θ₀⟩`.
pub fn linearized_forward(theta0: &[f64], phi_x: &[f64], f0_x: f64, theta: &[f64]) -> Result<f64> {
    if phi_x.len() != theta0.len() || theta.len() != theta0.len() {
        return Err(Error::DimensionMismatch {
            what: "linearized parameters",
            expected: theta0.len(),
            got: if phi_x.len() != theta0.len() { phi_x.len() } else { theta.len() },
        });
    }
    let shift: f64 = phi_x
        .iter()
        .zip(theta.iter().zip(theta0))
        .map(|(p, (t, t0))| p * (t - t0))
        .sum();
    Ok(f0_x + shift)
}

/// The network's first-order expansion around an anchor `θ_a`, with the
/// anchor features and outputs on the training inputs cached.
///
/// Anchoring at initialization gives the usual linearization; anchoring at a
/// later iterate `θ_T` gives the late linearization.
#[derive(Debug, Clone)]
pub struct LinearizedModel {
    pub config: NetworkConfig,
    pub anchor: ParamVector,
    pub phi: FeatureMatrix,
    pub f_anchor: DVector<f64>,
}

impl LinearizedModel {
    pub fn new(config: &NetworkConfig, anchor: &ParamVector, x_train: &DMatrix<f64>) -> Result<Self> {
        let phi = feature_matrix(config, anchor, x_train)?;
        let f_anchor = forward_batch(config, anchor, x_train)?;
        Ok(LinearizedModel {
            config: config.clone(),
            anchor: anchor.clone(),
            phi,
            f_anchor,
        })
    }

    pub fn from_parts(config: &NetworkConfig, anchor: &ParamVector, phi: FeatureMatrix, f_anchor: DVector<f64>) -> Self {
        LinearizedModel {
            config: config.clone(),
            anchor: anchor.clone(),
            phi,
            f_anchor,
        }
    }

    /// A plain linear model `f(θ) = f₀ + Φ(θ − θ₀)` over fixed features,
    /// not tied to any network. Only the `predict_train`/`predict_with`
    /// paths are meaningful for it.
    pub fn fixed_features(phi: FeatureMatrix, theta0: Vec<f64>, f0: DVector<f64>) -> Result<Self> {
        if theta0.len() != phi.cols() || f0.len() != phi.rows() || phi.cols() == 0 {
            return Err(Error::DimensionMismatch {
                what: "fixed-feature model",
                expected: phi.cols(),
                got: theta0.len(),
            });
        }
        // a depth-1 net with P - 1 inputs has exactly P parameters
        let config = NetworkConfig::new(1, phi.cols().max(2) - 1, 1, 1.0);
        let anchor = ParamVector::from_values(&config, theta0)?;
        Ok(LinearizedModel {
            config,
            anchor,
            phi,
            f_anchor: f0,
        })
    }

    /// Predictions on the cached training inputs.
    pub fn predict_train(&self, theta: &[f64]) -> DVector<f64> {
        let shift = DVector::from_iterator(theta.len(), theta.iter().zip(&self.anchor.values).map(|(t, a)| t - a));
        &self.f_anchor + self.phi.apply(&shift)
    }

    /// Predictions on new inputs; evaluates features at the anchor.
    pub fn predict(&self, theta: &[f64], x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let phi = feature_matrix(&self.config, &self.anchor, x)?;
        let f0 = forward_batch(&self.config, &self.anchor, x)?;
        Ok(self.predict_with(theta, &phi, &f0))
    }

    /// Predictions given precomputed anchor features and outputs.
    pub fn predict_with(&self, theta: &[f64], phi: &FeatureMatrix, f0: &DVector<f64>) -> DVector<f64> {
        let shift = DVector::from_iterator(theta.len(), theta.iter().zip(&self.anchor.values).map(|(t, a)| t - a));
        f0 + phi.apply(&shift)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{feature_map, forward, init_params, BiasMode};

    #[test]
    fn zero_and_unit_displacement() {
        let theta0 = [0.5, -1.0, 2.0];
        let phi = [0.1, 0.2, 0.3];
        assert_eq!(linearized_forward(&theta0, &phi, 1.5, &theta0).unwrap(), 1.5);
        let mut theta = theta0;
        theta[1] += 1.0;
        assert!((linearized_forward(&theta0, &phi, 1.5, &theta).unwrap() - 1.7).abs() < 1e-15);
        assert!(linearized_forward(&theta0, &phi[..2], 1.5, &theta).is_err());
    }

    #[test]
    fn depth_one_model_is_its_own_linearization() {
        let cfg = NetworkConfig::new(1, 4, 1, 1.3).with_bias_mode(BiasMode::StandardNormal);
        let theta0 = init_params(&cfg, 1);
        let x = [0.2, -0.1, 0.4, 0.3];
        let phi = feature_map(&cfg, &theta0, &x).unwrap();
        let f0 = forward(&cfg, &theta0, &x).unwrap();
        for seed in 2..6 {
            let theta = init_params(&cfg, seed);
            let lin = linearized_forward(&theta0.values, &phi, f0, &theta.values).unwrap();
            let full = forward(&cfg, &theta, &x).unwrap();
            assert!((lin - full).abs() < 1e-12);
        }
    }
}
