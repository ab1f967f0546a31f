use nalgebra::DVector;

use crate::error::{Error, Result};

/// `sup_t ‖D_t − D‖_op / sup_t ‖D_t‖_op` over diagonal payloads, where the
/// operator norm of a diagonal is its largest absolute entry. The reference
/// `D` defaults to the last recorded `D_t`.
pub fn concentration_metric(payloads: &[DVector<f64>], reference: Option<&DVector<f64>>) -> Result<f64> {
    let last = payloads.last().ok_or(Error::EmptyTrace)?;
    let reference = reference.unwrap_or(last);
    let mut dev: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for d in payloads {
        if d.len() != reference.len() {
            return Err(Error::DimensionMismatch {
                what: "adaptive diagonal",
                expected: reference.len(),
                got: d.len(),
            });
        }
        dev = dev.max((d - reference).amax());
        scale = scale.max(d.amax());
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(dev / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{OptimizerState, Preconditioner};

    #[test]
    fn constant_sequence_has_zero_metric() {
        let d = DVector::from_vec(vec![0.3, 2.0]);
        assert_eq!(concentration_metric(&[d.clone(), d.clone(), d], None).unwrap(), 0.0);
        assert!(matches!(concentration_metric(&[], None), Err(Error::EmptyTrace)));
    }

    #[test]
    fn two_step_hand_value() {
        let seq = [DVector::from_vec(vec![1.0, 1.0]), DVector::from_vec(vec![1.0, 2.0])];
        assert_eq!(concentration_metric(&seq, None).unwrap(), 0.5);
    }

    #[test]
    fn adagrad_under_proportional_gradients() {
        // D_t = diag(|g|)⁻¹ / √S_t, so relative to the last step every
        // coordinate deviates by the same factor 1 − |a₀|/√S_T.
        let g = [0.4, -1.2, 0.9];
        let a = [0.8, -0.5, 0.3, 0.7, 0.2];
        let mut st = OptimizerState::new(&Preconditioner::AdaGrad { eps_div: 0.0 }, 3).unwrap();
        let mut theta = vec![0.0; 3];
        let payloads: Vec<_> = a
            .iter()
            .map(|ai| {
                let grad: Vec<f64> = g.iter().map(|x| ai * x).collect();
                st.step(0.01, &mut theta, &grad).unwrap().unwrap()
            })
            .collect();
        let s_t: f64 = a.iter().map(|x| x * x).sum();
        let analytic = 1.0 - a[0].abs() / s_t.sqrt();
        assert!((concentration_metric(&payloads, None).unwrap() - analytic).abs() < 1e-10);
    }
}
