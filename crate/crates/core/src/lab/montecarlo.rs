//! Monte-Carlo estimate of the squared output norm at initialization.

use nalgebra::DMatrix;

use super::common::{record, RunContext};
use super::results::RunOutput;
use super::spec::ExperimentSpec;
use crate::error::{Error, Result};
use crate::net::{forward_batch, init_params, BiasMode, NetworkConfig};

/// `E‖f_{θ₀}(X)‖²` over fresh initializations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McStats {
    pub samples: usize,
    pub mean: f64,
    /// Standard error of the mean.
    pub stderr: f64,
    /// Exact expectation under the NTK parametrization (fan-in scaling):
    /// `σ^{2L}Σ‖x‖²/(2^{L−1}d)` for zero biases, and the layer recursion
    /// `q₁ = σ²(‖x‖²/d + 1)`, `q_l = σ²(q_{l−1}/2 + 1)` with normal biases.
    pub expected: f64,
    /// `2Σ_{i=1}^{L}(σ²/2)^i·Σ‖x‖²`, the textbook bound for normal biases
    /// (`None` for zero biases).
    pub normal_bias_bound: Option<f64>,
}

/// Chunks the sample range is split into; fixed so the summation order,
/// and hence the result, does not depend on the worker count.
const CHUNKS: usize = 64;

/// Estimates `E‖f_{θ₀}(X)‖²` from `n_samples` initializations; sample `s`
/// uses seed `seed + s`.
pub fn run_mc_init_norm(config: &NetworkConfig, n_samples: usize, x_set: &DMatrix<f64>, seed: u64, ctx: &RunContext) -> Result<McStats> {
    config.validate()?;
    if n_samples < 2 {
        return Err(Error::InvalidHyperparameter(format!("need at least 2 samples, got {n_samples}")));
    }
    if x_set.ncols() != config.input_dim {
        return Err(Error::DimensionMismatch {
            what: "probe input dimension",
            expected: config.input_dim,
            got: x_set.ncols(),
        });
    }
    let per = n_samples.div_ceil(CHUNKS);
    let sums = ctx.map(CHUNKS, |c| -> Result<(f64, f64)> {
        let (mut s1, mut s2) = (0.0, 0.0);
        for s in c * per..((c + 1) * per).min(n_samples) {
            let theta = init_params(config, seed.wrapping_add(s as u64));
            let v = forward_batch(config, &theta, x_set)?.norm_squared();
            s1 += v;
            s2 += v * v;
        }
        Ok((s1, s2))
    });
    let (mut s1, mut s2) = (0.0, 0.0);
    for r in sums {
        let (a, b) = r?;
        s1 += a;
        s2 += b;
    }
    let n = n_samples as f64;
    let mean = s1 / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    let (expected, bound) = expectation(config, x_set);
    Ok(McStats {
        samples: n_samples,
        mean,
        stderr: (var / n).sqrt(),
        expected,
        normal_bias_bound: bound,
    })
}

fn expectation(config: &NetworkConfig, x: &DMatrix<f64>) -> (f64, Option<f64>) {
    let s2 = config.sigma * config.sigma;
    let d = config.input_dim as f64;
    let norms: Vec<f64> = x.row_iter().map(|r| r.norm_squared()).collect();
    let total: f64 = norms.iter().sum();
    let l = config.depth as i32;
    match config.bias_mode {
        BiasMode::Zero => (s2.powi(l) * total / (2f64.powi(l - 1) * d), None),
        BiasMode::StandardNormal => {
            let exact = norms
                .iter()
                .map(|nx| {
                    let mut q = s2 * (nx / d + 1.0);
                    for _ in 1..l {
                        q = s2 * (q / 2.0 + 1.0);
                    }
                    q
                })
                .sum();
            let bound = 2.0 * (1..=l).map(|i| (s2 / 2.0).powi(i)).sum::<f64>() * total;
            (exact, Some(bound))
        }
    }
}

/// The probe inputs of a Monte-Carlo spec: `sweep.mc_inputs`, or the first
/// unit vector in `data.input_dim` dimensions.
pub fn mc_inputs(spec: &ExperimentSpec) -> Result<DMatrix<f64>> {
    let rows = &spec.sweep.mc_inputs;
    if rows.is_empty() {
        let mut x = DMatrix::zeros(1, spec.data.input_dim.max(1));
        x[(0, 0)] = 1.0;
        return Ok(x);
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::config("sweep.mc_inputs", "rows must be nonempty and of equal length"));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

/// One row per σ of `sweep.sigmas`.
pub fn run_mc_experiment(spec: &ExperimentSpec, ctx: &RunContext) -> Result<RunOutput> {
    let x = mc_inputs(spec)?;
    let mut out = RunOutput::default();
    for &sigma in &spec.sweep.sigmas {
        let cfg = spec.network_config(x.ncols()).with_sigma(sigma);
        let mut rec = record(spec, spec.seed, "sigma", sigma, "mc");
        rec.sigma = Some(sigma);
        rec.width = Some(cfg.width);
        let start = std::time::Instant::now();
        match run_mc_init_norm(&cfg, spec.sweep.mc_samples, &x, spec.seed, ctx) {
            Ok(st) => {
                rec.wall_time_s = Some(start.elapsed().as_secs_f64());
                out.metrics.push(rec.metric("status", "ok"));
                out.metrics.push(rec.metric("mean", st.mean));
                out.metrics.push(rec.metric("stderr", st.stderr));
                out.metrics.push(rec.metric("samples", st.samples));
                out.metrics.push(rec.metric("expected", st.expected));
                out.metrics.push(rec.metric("relative_error", (st.mean - st.expected).abs() / st.expected));
                if let Some(b) = st.normal_bias_bound {
                    out.metrics.push(rec.metric("normal_bias_bound", b));
                    out.metrics.push(rec.metric("within_bound", st.mean <= b * (1.0 + 3.0 * st.stderr / st.mean.max(f64::MIN_POSITIVE))));
                }
                out.records.push(rec);
            }
            Err(e) => out.extend(super::common::failure(rec, &e)),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_gives_exactly_zero() {
        let cfg = NetworkConfig::new(2, 1, 16, 0.0);
        let x = DMatrix::from_element(1, 1, 1.0);
        let st = run_mc_init_norm(&cfg, 10, &x, 0, &RunContext::new(1)).unwrap();
        assert_eq!((st.mean, st.stderr, st.expected), (0.0, 0.0, 0.0));
    }

    #[test]
    fn estimate_is_independent_of_job_count() {
        let cfg = NetworkConfig::new(2, 3, 8, 1.3);
        let x = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, -0.5, 0.0, 0.4]);
        let a = run_mc_init_norm(&cfg, 300, &x, 7, &RunContext::new(1)).unwrap();
        let b = run_mc_init_norm(&cfg, 300, &x, 7, &RunContext::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn normal_bias_recursion_at_depth_one() {
        // f = σ/√d·wᵀx + σb: E f² = σ²(‖x‖²/d + 1)
        let cfg = NetworkConfig::new(1, 2, 1, 2.0).with_bias_mode(BiasMode::StandardNormal);
        let x = DMatrix::from_row_slice(1, 2, &[0.6, 0.8]);
        let (e, b) = expectation(&cfg, &x);
        assert!((e - 4.0 * 1.5).abs() < 1e-12);
        assert!((b.unwrap() - 2.0 * 2.0).abs() < 1e-12);
        let st = run_mc_init_norm(&cfg, 20_000, &x, 1, &RunContext::new(1)).unwrap();
        assert!((st.mean - e).abs() < 4.0 * st.stderr, "{st:?}");
    }
}
