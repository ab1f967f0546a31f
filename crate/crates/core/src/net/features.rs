use nalgebra::{DMatrix, DMatrixView, DVector};
use rayon::prelude::*;

use super::{Activation, NetworkConfig, ParamVector};
use crate::error::{Error, Result};

/// Rows per block when building a feature matrix.
pub const DEFAULT_CHUNK_ROWS: usize = 16;

/// Per-sample parameter gradients `Φ(X)`, one row `φ(x_i)` per sample.
///
/// Stored transposed (`P × N`, one contiguous column per sample) so that
/// per-sample rows are cache friendly and the kernel is a single `ΦᵀΦ`-style
/// product.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    by_sample: DMatrix<f64>,
}

impl FeatureMatrix {
    /// Builds from an `N × P` matrix.
    pub fn from_rows(rows: &DMatrix<f64>) -> Self {
        FeatureMatrix {
            by_sample: rows.transpose(),
        }
    }

    pub fn from_row_slices(rows: &[Vec<f64>]) -> Self {
        let p = rows.first().map_or(0, Vec::len);
        let mut by_sample = DMatrix::zeros(p, rows.len());
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), p, "ragged feature rows");
            by_sample.column_mut(i).copy_from_slice(r);
        }
        FeatureMatrix { by_sample }
    }

    /// Wraps a `P × N` matrix whose columns are the feature rows.
    pub fn from_columns(by_sample: DMatrix<f64>) -> Self {
        FeatureMatrix { by_sample }
    }

    pub fn rows(&self) -> usize {
        self.by_sample.ncols()
    }

    pub fn cols(&self) -> usize {
        self.by_sample.nrows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.cols();
        &self.by_sample.as_slice()[i * p..(i + 1) * p]
    }

    /// `Φᵀ` as a `P × N` matrix.
    pub fn transposed(&self) -> &DMatrix<f64> {
        &self.by_sample
    }

    pub fn to_rows(&self) -> DMatrix<f64> {
        self.by_sample.transpose()
    }

    /// `Φ v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.by_sample.tr_mul(v)
    }

    /// `Φᵀ a`.
    pub fn apply_transpose(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.by_sample * a
    }

    /// `ΦΦᵀ`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.by_sample.tr_mul(&self.by_sample)
    }

    /// `Φ_self Φ_otherᵀ`, shape `self.rows() × other.rows()`.
    pub fn cross_gram(&self, other: &FeatureMatrix) -> DMatrix<f64> {
        self.by_sample.tr_mul(&other.by_sample)
    }

    /// Keeps the listed rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            by_sample: self.by_sample.select_columns(idx),
        }
    }
}

fn check_input(config: &NetworkConfig, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != config.input_dim {
        return Err(Error::DimensionMismatch {
            what: "input dimension",
            expected: config.input_dim,
            got: x.ncols(),
        });
    }
    Ok(())
}

/// Row-wise forward pass keeping every layer's pre-activation (`N × m_l`).
fn pre_activations(config: &NetworkConfig, params: &ParamVector, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let sigma = config.sigma;
    let act = config.activation;
    let mut pres: Vec<DMatrix<f64>> = Vec::with_capacity(config.depth);
    for (l, layer) in params.layout().layers().iter().enumerate() {
        // row-major W (fan_out × fan_in) read column-major is Wᵀ
        let wt = DMatrixView::from_slice(&params.values[layer.weights.clone()], layer.fan_in, layer.fan_out);
        let mut h = if l == 0 {
            x * wt
        } else {
            pres[l - 1].map(|v| act.apply(v)) * wt
        };
        h *= sigma / (layer.fan_in as f64).sqrt();
        if config.has_biases() {
            let bias = &params.values[layer.bias.clone()];
            for (mut col, &b) in h.column_iter_mut().zip(bias) {
                col.add_scalar_mut(sigma * b);
            }
        }
        pres.push(h);
    }
    pres
}

/// Backpropagates output sensitivities `delta_out` (`N × 1`) and returns the
/// per-layer sensitivities `Δ_l = ∂(Σ_i δ_i f(x_i)) / ∂h^l`, row per sample.
fn backprop(
    config: &NetworkConfig,
    params: &ParamVector,
    pres: &[DMatrix<f64>],
    delta_out: DMatrix<f64>,
) -> Vec<DMatrix<f64>> {
    let layers = params.layout().layers();
    let mut deltas = vec![DMatrix::zeros(0, 0); layers.len()];
    let mut delta = delta_out;
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        if l > 0 {
            let wt = DMatrixView::from_slice(&params.values[layer.weights.clone()], layer.fan_in, layer.fan_out);
            let scale = config.sigma / (layer.fan_in as f64).sqrt();
            let mut below = &delta * wt.transpose();
            below *= scale;
            below.zip_apply(&pres[l - 1], |d, h| *d *= config.activation.derivative(h));
            deltas[l] = std::mem::replace(&mut delta, below);
        } else {
            deltas[l] = std::mem::replace(&mut delta, DMatrix::zeros(0, 0));
        }
    }
    deltas
}

/// Network output `h^L(x)` for a single input.
pub fn forward(config: &NetworkConfig, params: &ParamVector, x: &[f64]) -> Result<f64> {
    let xm = DMatrix::from_row_slice(1, x.len(), x);
    Ok(forward_batch(config, params, &xm)?[0])
}

/// Row-wise forward pass over an `N × d` input matrix.
pub fn forward_batch(config: &NetworkConfig, params: &ParamVector, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_input(config, x)?;
    params.check(config)?;
    let pres = pre_activations(config, params, x);
    Ok(pres.last().expect("depth >= 1").column(0).into_owned())
}

/// Exact gradient `∇_θ f(x)` at `params`.
pub fn feature_map(config: &NetworkConfig, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    let xm = DMatrix::from_row_slice(1, x.len(), x);
    let phi = feature_matrix(config, params, &xm)?;
    Ok(phi.row(0).to_vec())
}

/// Stacks `φ(x_i)` for every row of `x`.
pub fn feature_matrix(config: &NetworkConfig, params: &ParamVector, x: &DMatrix<f64>) -> Result<FeatureMatrix> {
    feature_matrix_chunked(config, params, x, DEFAULT_CHUNK_ROWS)
}

/// Block-wise feature matrix build; blocks run in parallel but every row is
/// computed independently, so the result does not depend on scheduling.
pub fn feature_matrix_chunked(
    config: &NetworkConfig,
    params: &ParamVector,
    x: &DMatrix<f64>,
    chunk_rows: usize,
) -> Result<FeatureMatrix> {
    check_input(config, x)?;
    params.check(config)?;
    let n = x.nrows();
    let p = params.len();
    let chunk_rows = chunk_rows.max(1);
    let starts: Vec<usize> = (0..n).step_by(chunk_rows).collect();
    let blocks: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + chunk_rows).min(n);
            let xb = x.rows(start, end - start).into_owned();
            feature_block(config, params, &xb)
        })
        .collect();
    let mut data = Vec::with_capacity(n * p);
    for b in blocks {
        data.extend_from_slice(&b);
    }
    Ok(FeatureMatrix {
        by_sample: DMatrix::from_vec(p, n, data),
    })
}

/// Feature rows for a block, concatenated sample after sample.
fn feature_block(config: &NetworkConfig, params: &ParamVector, x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows();
    let p = params.len();
    let pres = pre_activations(config, params, x);
    let deltas = backprop(config, params, &pres, DMatrix::from_element(n, 1, 1.0));
    let mut out = vec![0.0; n * p];
    for (l, layer) in params.layout().layers().iter().enumerate() {
        let scale = config.sigma / (layer.fan_in as f64).sqrt();
        let inputs = if l == 0 {
            x.clone()
        } else {
            pres[l - 1].map(|v| config.activation.apply(v))
        };
        let delta = &deltas[l];
        for i in 0..n {
            let row = &mut out[i * p..(i + 1) * p];
            let w = &mut row[layer.weights.clone()];
            for r in 0..layer.fan_out {
                let d = scale * delta[(i, r)];
                let dst = &mut w[r * layer.fan_in..(r + 1) * layer.fan_in];
                for (c, v) in dst.iter_mut().enumerate() {
                    *v = d * inputs[(i, c)];
                }
            }
            if config.has_biases() {
                for (r, v) in row[layer.bias.clone()].iter_mut().enumerate() {
                    *v = config.sigma * delta[(i, r)];
                }
            }
        }
    }
    out
}

/// Training loss `(1/2|B|) Σ_{i∈B} (f(x_i) - y_i)²` over the batch, the full
/// loss over all rows, and the batch-loss gradient. `batch = None` means all
/// rows.
pub fn loss_and_gradient(
    config: &NetworkConfig,
    params: &ParamVector,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    batch: Option<&[usize]>,
) -> Result<(f64, Vec<f64>)> {
    check_input(config, x)?;
    params.check(config)?;
    let n = x.nrows();
    let pres = pre_activations(config, params, x);
    let out = pres.last().expect("depth >= 1").column(0);
    let resid: DVector<f64> = out - y;
    let full_loss = resid.norm_squared() / (2.0 * n as f64);

    let mut delta_out = DMatrix::zeros(n, 1);
    match batch {
        None => {
            for i in 0..n {
                delta_out[(i, 0)] = resid[i] / n as f64;
            }
        }
        Some(b) => {
            if b.is_empty() {
                return Err(Error::EmptyBatch);
            }
            for &i in b {
                delta_out[(i, 0)] += resid[i] / b.len() as f64;
            }
        }
    }
    let deltas = backprop(config, params, &pres, delta_out);
    let mut grad = vec![0.0; params.len()];
    for (l, layer) in params.layout().layers().iter().enumerate() {
        let scale = config.sigma / (layer.fan_in as f64).sqrt();
        let gw = if l == 0 {
            x.tr_mul(&deltas[l])
        } else {
            pres[l - 1].map(|v| config.activation.apply(v)).tr_mul(&deltas[l])
        };
        // fan_in × fan_out column-major is W row-major
        for (dst, src) in grad[layer.weights.clone()].iter_mut().zip(gw.as_slice()) {
            *dst = scale * src;
        }
        if config.has_biases() {
            for (r, dst) in grad[layer.bias.clone()].iter_mut().enumerate() {
                *dst = config.sigma * deltas[l].column(r).sum();
            }
        }
    }
    Ok((full_loss, grad))
}

/// `|f(x) - ⟨θ, ∇f(x)⟩ / L| / max(1, |f(x)|)`, the relu homogeneity defect.
pub fn homogeneity_residual(config: &NetworkConfig, params: &ParamVector, x: &[f64]) -> Result<f64> {
    if config.activation != Activation::Relu {
        return Err(Error::ActivationNotSupported(config.activation.name()));
    }
    let f = forward(config, params, x)?;
    let phi = feature_map(config, params, x)?;
    let inner: f64 = phi.iter().zip(&params.values).map(|(g, t)| g * t).sum();
    Ok((f - inner / config.depth as f64).abs() / f.abs().max(1.0))
}
