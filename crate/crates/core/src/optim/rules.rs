use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPS_DIV: f64 = 1e-8;

/// How the gradient is rescaled per coordinate before the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preconditioner {
    Identity,
    AdaGrad { eps_div: f64 },
    RmsProp { rho: f64, eps_div: f64 },
    Adam { beta1: f64, beta2: f64, eps_div: f64 },
    /// A fixed positive diagonal.
    Explicit { diagonal: Vec<f64> },
}

impl Preconditioner {
    pub fn adagrad() -> Self {
        Preconditioner::AdaGrad { eps_div: DEFAULT_EPS_DIV }
    }

    pub fn rmsprop() -> Self {
        Preconditioner::RmsProp {
            rho: 0.9,
            eps_div: DEFAULT_EPS_DIV,
        }
    }

    pub fn adam() -> Self {
        Preconditioner::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps_div: DEFAULT_EPS_DIV,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preconditioner::Identity => "gd",
            Preconditioner::AdaGrad { .. } => "adagrad",
            Preconditioner::RmsProp { .. } => "rmsprop",
            Preconditioner::Adam { .. } => "adam",
            Preconditioner::Explicit { .. } => "explicit_adaptive",
        }
    }

    pub fn is_adaptive(&self) -> bool {
        !matches!(self, Preconditioner::Identity)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparameter(msg));
        match self {
            Preconditioner::Identity => Ok(()),
            Preconditioner::AdaGrad { eps_div } => {
                if *eps_div >= 0.0 {
                    Ok(())
                } else {
                    bad(format!("eps_div must be nonnegative, got {eps_div}"))
                }
            }
            Preconditioner::RmsProp { rho, eps_div } => {
                if !(0.0..=1.0).contains(rho) {
                    bad(format!("rho must lie in [0, 1], got {rho}"))
                } else if !(*eps_div >= 0.0) {
                    bad(format!("eps_div must be nonnegative, got {eps_div}"))
                } else {
                    Ok(())
                }
            }
            Preconditioner::Adam { beta1, beta2, eps_div } => {
                if !(0.0..1.0).contains(beta1) || !(0.0..1.0).contains(beta2) {
                    bad(format!("adam betas must lie in [0, 1), got {beta1}, {beta2}"))
                } else if !(*eps_div >= 0.0) {
                    bad(format!("eps_div must be nonnegative, got {eps_div}"))
                } else {
                    Ok(())
                }
            }
            Preconditioner::Explicit { diagonal } => {
                if diagonal.iter().all(|d| *d > 0.0 && d.is_finite()) {
                    Ok(())
                } else {
                    bad("explicit diagonal must be positive".into())
                }
            }
        }
    }
}

/// Full-batch or mini-batch gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Batching {
    Full,
    MiniBatch { batch_size: usize, shuffle: bool, seed: u64 },
}

/// A learning rate, a preconditioner and a batching policy. Plain SGD is
/// `Identity` with `MiniBatch`; "AdaGrad-SGD" is `AdaGrad` with `MiniBatch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRule {
    pub eta: f64,
    pub preconditioner: Preconditioner,
    pub batching: Batching,
}

impl UpdateRule {
    pub fn gd(eta: f64) -> Self {
        UpdateRule {
            eta,
            preconditioner: Preconditioner::Identity,
            batching: Batching::Full,
        }
    }

    pub fn with_preconditioner(mut self, p: Preconditioner) -> Self {
        self.preconditioner = p;
        self
    }

    pub fn with_batching(mut self, b: Batching) -> Self {
        self.batching = b;
        self
    }

    /// `gd`, `sgd`, `adagrad`, `adagrad_sgd`, …
    pub fn name(&self) -> String {
        match (&self.preconditioner, &self.batching) {
            (Preconditioner::Identity, Batching::MiniBatch { .. }) => "sgd".into(),
            (p, Batching::Full) => p.name().into(),
            (p, Batching::MiniBatch { .. }) => format!("{}_sgd", p.name()),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidLearningRate(self.eta));
        }
        self.preconditioner.validate()?;
        if let Batching::MiniBatch { batch_size, .. } = self.batching {
            if batch_size == 0 || batch_size > n {
                return Err(Error::InvalidBatchSize { batch_size, n });
            }
        }
        Ok(())
    }
}

/// `θ ← θ − η·g`.
pub fn gd_step(eta: f64, theta: &mut [f64], grad: &[f64]) -> Result<()> {
    check(theta, grad)?;
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= eta * g;
    }
    Ok(())
}

fn check(theta: &[f64], grad: &[f64]) -> Result<()> {
    if theta.len() != grad.len() {
        return Err(Error::DimensionMismatch {
            what: "gradient",
            expected: theta.len(),
            got: grad.len(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged { step: 0 });
    }
    Ok(())
}

/// Accumulators of one optimizer run.
///
/// Each step returns the effective diagonal `D_t`: the per-coordinate factor
/// the update applies to the gradient (AdaGrad, RMSprop, explicit) or to the
/// bias-corrected first moment (Adam).
#[derive(Debug, Clone)]
pub struct OptimizerState {
    preconditioner: Preconditioner,
    /// Σ g² (AdaGrad) or the second-moment average (RMSprop, Adam).
    pub second: Vec<f64>,
    /// First-moment average (Adam).
    pub first: Vec<f64>,
    pub t: usize,
}

impl OptimizerState {
    pub fn new(preconditioner: &Preconditioner, p: usize) -> Result<Self> {
        preconditioner.validate()?;
        if let Preconditioner::Explicit { diagonal } = preconditioner {
            if diagonal.len() != p {
                return Err(Error::DimensionMismatch {
                    what: "explicit diagonal",
                    expected: p,
                    got: diagonal.len(),
                });
            }
        }
        Ok(OptimizerState {
            preconditioner: preconditioner.clone(),
            second: vec![0.0; p],
            first: vec![0.0; p],
            t: 0,
        })
    }

    /// Applies one update in place and returns `D_t` when the rule is
    /// adaptive (`None` for plain gradient descent).
    pub fn step(&mut self, eta: f64, theta: &mut [f64], grad: &[f64]) -> Result<Option<DVector<f64>>> {
        check(theta, grad).map_err(|e| match e {
            Error::Diverged { .. } => Error::Diverged { step: self.t + 1 },
            e => e,
        })?;
        self.t += 1;
        let d = match &self.preconditioner {
            Preconditioner::Identity => {
                gd_step(eta, theta, grad)?;
                return Ok(None);
            }
            Preconditioner::AdaGrad { eps_div } => {
                let mut d = DVector::zeros(theta.len());
                for i in 0..theta.len() {
                    self.second[i] += grad[i] * grad[i];
                    d[i] = 1.0 / (self.second[i] + eps_div).sqrt();
                    theta[i] -= eta * d[i] * grad[i];
                }
                d
            }
            Preconditioner::RmsProp { rho, eps_div } => {
                let mut d = DVector::zeros(theta.len());
                for i in 0..theta.len() {
                    self.second[i] = rho * self.second[i] + (1.0 - rho) * grad[i] * grad[i];
                    d[i] = 1.0 / (self.second[i] + eps_div).sqrt();
                    theta[i] -= eta * d[i] * grad[i];
                }
                d
            }
            Preconditioner::Adam { beta1, beta2, eps_div } => {
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                let mut d = DVector::zeros(theta.len());
                for i in 0..theta.len() {
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * grad[i];
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * grad[i] * grad[i];
                    d[i] = 1.0 / ((self.second[i] / c2).sqrt() + eps_div);
                    theta[i] -= eta * d[i] * self.first[i] / c1;
                }
                d
            }
            Preconditioner::Explicit { diagonal } => {
                for i in 0..theta.len() {
                    theta[i] -= eta * diagonal[i] * grad[i];
                }
                DVector::from_column_slice(diagonal)
            }
        };
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: self.t });
        }
        Ok(Some(d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Gradient of `½ θᵀ diag(h) θ`.
    fn quad_grad(h: &[f64], theta: &[f64]) -> Vec<f64> {
        h.iter().zip(theta).map(|(a, t)| a * t).collect()
    }

    #[test]
    fn gd_step_basics() {
        let mut theta = [2.0, 0.0];
        gd_step(1.0, &mut theta, &[0.0, 0.0]).unwrap();
        assert_eq!(theta, [2.0, 0.0]);
        let g = theta;
        gd_step(1.0, &mut theta, &g).unwrap();
        assert_eq!(theta, [0.0, 0.0]);
        assert!(matches!(gd_step(1.0, &mut theta, &[f64::NAN, 0.0]), Err(Error::Diverged { .. })));
    }

    #[test]
    fn adagrad_first_step_is_normalized_sign() {
        let mut st = OptimizerState::new(&Preconditioner::AdaGrad { eps_div: 0.0 }, 3).unwrap();
        let mut theta = [1.0, 1.0, 1.0];
        st.step(0.1, &mut theta, &[3.0, -0.5, 2e-3]).unwrap();
        for (t, want) in theta.iter().zip([0.9, 1.1, 0.9]) {
            assert!((t - want).abs() < 1e-15);
        }
    }

    #[test]
    fn adagrad_proportional_gradients() {
        let g = [0.5, -2.0, 1.5];
        let a = [1.0, 0.6, -0.3, 0.25];
        let mut st = OptimizerState::new(&Preconditioner::AdaGrad { eps_div: 0.0 }, 3).unwrap();
        let mut theta = [0.0; 3];
        let mut s = 0.0;
        for ai in a {
            let grad: Vec<f64> = g.iter().map(|x| ai * x).collect();
            let d = st.step(0.01, &mut theta, &grad).unwrap().unwrap();
            s += ai * ai;
            for j in 0..3 {
                let want = 1.0 / (g[j].abs() * s.sqrt());
                assert!((d[j] - want).abs() <= 1e-10 * want);
            }
        }
    }

    #[test]
    fn adagrad_three_step_unroll() {
        // ½(θ₁² + 4θ₂²), θ₀ = (1, 1), η = 0.5, ε = 0
        let h = [1.0, 4.0];
        let mut st = OptimizerState::new(&Preconditioner::AdaGrad { eps_div: 0.0 }, 2).unwrap();
        let mut theta = vec![1.0, 1.0];
        // hand unrolled: each coordinate θ ← θ − 0.5·g/√(Σg²)
        let mut want = [1.0f64, 1.0];
        let mut acc = [0.0f64; 2];
        let expected: Vec<[f64; 2]> = (0..3)
            .map(|_| {
                for j in 0..2 {
                    let g = h[j] * want[j];
                    acc[j] += g * g;
                    want[j] -= 0.5 * g / acc[j].sqrt();
                }
                want
            })
            .collect();
        assert_eq!(expected[0], [0.5, 0.5]);
        // step 2: g = (0.5, 2), acc = (1.25, 20) → θ = 0.5 − 0.25/√1.25, 0.5 − 1/√20
        assert!((expected[1][0] - (0.5 - 0.25 / 1.25f64.sqrt())).abs() < 1e-15);
        assert!((expected[1][1] - (0.5 - 1.0 / 20f64.sqrt())).abs() < 1e-15);
        for e in expected {
            let g = quad_grad(&h, &theta);
            st.step(0.5, &mut theta, &g).unwrap();
            assert!((theta[0] - e[0]).abs() < 1e-12 && (theta[1] - e[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_with_zero_betas_is_sign_step() {
        let p = Preconditioner::Adam {
            beta1: 0.0,
            beta2: 0.0,
            eps_div: 0.0,
        };
        let mut st = OptimizerState::new(&p, 2).unwrap();
        let mut theta = [0.0, 0.0];
        st.step(0.2, &mut theta, &[5.0, -0.01]).unwrap();
        assert!((theta[0] + 0.2).abs() < 1e-15 && (theta[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_with_unit_decay_keeps_accumulator() {
        let p = Preconditioner::RmsProp { rho: 1.0, eps_div: 1.0 };
        let mut st = OptimizerState::new(&p, 2).unwrap();
        let mut theta = [1.0, 2.0];
        for _ in 0..4 {
            let g = theta;
            st.step(0.1, &mut theta, &g).unwrap();
            assert_eq!(st.second, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn adam_and_rmsprop_five_step_unroll() {
        let h = [1.0, 3.0];
        let (b1, b2, eps, rho, eta) = (0.9, 0.999, 1e-8, 0.9, 0.05);

        let mut theta = vec![1.0, -1.0];
        let mut st = OptimizerState::new(
            &Preconditioner::Adam {
                beta1: b1,
                beta2: b2,
                eps_div: eps,
            },
            2,
        )
        .unwrap();
        let (mut w, mut m, mut v) = ([1.0f64, -1.0], [0.0f64; 2], [0.0f64; 2]);
        for t in 1..=5 {
            for j in 0..2 {
                let g = h[j] * w[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let mh = m[j] / (1.0 - b1.powi(t));
                let vh = v[j] / (1.0 - b2.powi(t));
                w[j] -= eta * mh / (vh.sqrt() + eps);
            }
            let g = quad_grad(&h, &theta);
            st.step(eta, &mut theta, &g).unwrap();
            assert!((theta[0] - w[0]).abs() < 1e-12 && (theta[1] - w[1]).abs() < 1e-12);
        }

        let mut theta = vec![1.0, -1.0];
        let mut st = OptimizerState::new(&Preconditioner::RmsProp { rho, eps_div: eps }, 2).unwrap();
        let (mut w, mut v) = ([1.0f64, -1.0], [0.0f64; 2]);
        for _ in 0..5 {
            for j in 0..2 {
                let g = h[j] * w[j];
                v[j] = rho * v[j] + (1.0 - rho) * g * g;
                w[j] -= eta * g / (v[j] + eps).sqrt();
            }
            let g = quad_grad(&h, &theta);
            st.step(eta, &mut theta, &g).unwrap();
            assert!((theta[0] - w[0]).abs() < 1e-12 && (theta[1] - w[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn validation_rejects_bad_hyperparameters() {
        assert!(UpdateRule::gd(0.0).validate(3).is_err());
        assert!(UpdateRule::gd(0.1)
            .with_batching(Batching::MiniBatch {
                batch_size: 4,
                shuffle: false,
                seed: 0
            })
            .validate(3)
            .is_err());
        let adam = Preconditioner::Adam {
            beta1: 1.0,
            beta2: 0.5,
            eps_div: 0.0,
        };
        assert!(adam.validate().is_err());
        assert_eq!(
            UpdateRule::gd(0.1)
                .with_preconditioner(Preconditioner::adagrad())
                .with_batching(Batching::MiniBatch {
                    batch_size: 1,
                    shuffle: true,
                    seed: 0
                })
                .name(),
            "adagrad_sgd"
        );
    }
}
