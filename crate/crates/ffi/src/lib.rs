//! C ABI over `ntk-lab`.
//!
//! Conventions:
//! * every fallible call returns an [`NtkStatus`]; on failure a message is
//!   available from [`ntk_last_error`] on the same thread;
//! * matrices are dense, row-major `f64` with one sample per row;
//! * objects are opaque handles created by `*_new`/`*_fit` and released by
//!   the matching `*_free` (null is accepted and ignored);
//! * output buffers are caller-allocated, their lengths are passed in and
//!   checked.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::{DMatrix, DVector};

use ntk_lab::lab::{run_mc_init_norm, RunContext};
use ntk_lab::net::{feature_matrix, forward_batch, init_params, BiasMode, FeatureMatrix, NetworkConfig, ParamVector};
use ntk_lab::solver::{empirical_ntk, gd_closed_form, min_complexity_interpolator, GdForm, GdProblem, InterpolatorWeights, KernelMatrix};
use ntk_lab::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NtkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    SingularKernel = 4,
    Diverged = 5,
    Config = 6,
    Io = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 8,
}

/// Bias handling of a network.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NtkBiasMode {
    /// Biases pinned at zero (σ-homogeneous ReLU nets).
    Zero = 0,
    /// Trainable biases drawn from N(0, 1).
    StandardNormal = 1,
}

/// A ReLU network in NTK parametrization together with its parameters.
pub struct NtkNetwork {
    config: NetworkConfig,
    params: ParamVector,
}

/// Empirical NTK `ΦΦᵀ` of a network on a training set.
pub struct NtkKernel {
    kernel: KernelMatrix,
}

/// Minimum-complexity interpolator of a training set, bound to the
/// network parameters it was fitted at.
pub struct NtkInterpolator {
    config: NetworkConfig,
    params: ParamVector,
    weights: InterpolatorWeights,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn code_of(e: &Error) -> NtkStatus {
    match e {
        Error::DimensionMismatch { .. } => NtkStatus::DimensionMismatch,
        Error::SingularKernel { .. } | Error::RankDeficient { .. } | Error::StepSolve { .. } => NtkStatus::SingularKernel,
        Error::Diverged { .. } | Error::NonPositiveSpectrum(_) => NtkStatus::Diverged,
        Error::Config { .. } | Error::SpecFile { .. } => NtkStatus::Config,
        Error::Io(_) | Error::Csv(_) | Error::BadMagic { .. } | Error::Truncated { .. } | Error::MalformedData { .. } => NtkStatus::Io,
        _ => NtkStatus::InvalidArgument,
    }
}

struct Fail(NtkStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(code_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(NtkStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(NtkStatus::InvalidArgument, msg.into())
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NtkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NtkStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            NtkStatus::Internal
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>, Fail> {
    let len = rows.checked_mul(cols).ok_or_else(|| invalid(format!("{what}: size overflow")))?;
    Ok(DMatrix::from_row_slice(rows, cols, slice(p, len, what)?))
}

fn write_out(dst: &mut [f64], src: &[f64], what: &str) -> Result<(), Fail> {
    if dst.len() != src.len() {
        return Err(Fail(
            NtkStatus::DimensionMismatch,
            format!("{what}: buffer holds {} values, need {}", dst.len(), src.len()),
        ));
    }
    dst.copy_from_slice(src);
    Ok(())
}

unsafe fn emit<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread; empty after a
/// successful one. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ntk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ntk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a network of `depth` weight layers with parameters drawn from
/// `seed`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ntk_network_new(
    depth: usize,
    input_dim: usize,
    width: usize,
    sigma: f64,
    bias_mode: NtkBiasMode,
    seed: u64,
    out: *mut *mut NtkNetwork,
) -> NtkStatus {
    guard(|| {
        let mode = match bias_mode {
            NtkBiasMode::Zero => BiasMode::Zero,
            NtkBiasMode::StandardNormal => BiasMode::StandardNormal,
        };
        let config = NetworkConfig::new(depth, input_dim, width, sigma).with_bias_mode(mode);
        config.validate()?;
        let params = init_params(&config, seed);
        emit(out, NtkNetwork { config, params }, "out")
    })
}

/// # Safety
/// `net` must be null or a handle from [`ntk_network_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ntk_network_free(net: *mut NtkNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of parameters `P`, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ntk_network_param_count(net: *const NtkNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.params.len())
}

/// Copies the `P` parameters into `out`.
///
/// # Safety
/// `net` must be a live handle; `out` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn ntk_network_get_params(net: *const NtkNetwork, out: *mut f64, len: usize) -> NtkStatus {
    guard(|| {
        let net = as_ref(net, "net")?;
        write_out(slice_mut(out, len, "out")?, &net.params.values, "parameters")
    })
}

/// Replaces the `P` parameters.
///
/// # Safety
/// `net` must be a live handle; `values` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn ntk_network_set_params(net: *mut NtkNetwork, values: *const f64, len: usize) -> NtkStatus {
    guard(|| {
        let net = net.as_mut().ok_or_else(|| null("net"))?;
        let v = slice(values, len, "values")?.to_vec();
        net.params = ParamVector::from_values(&net.config, v)?;
        Ok(())
    })
}

/// Changes the output scale σ without touching the raw parameters.
///
/// # Safety
/// `net` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ntk_network_set_sigma(net: *mut NtkNetwork, sigma: f64) -> NtkStatus {
    guard(|| {
        let net = net.as_mut().ok_or_else(|| null("net"))?;
        let config = net.config.clone().with_sigma(sigma);
        config.validate()?;
        net.config = config;
        Ok(())
    })
}

/// Outputs `f(x_i)` for the `n` rows of `x` (`n × input_dim`).
///
/// # Safety
/// `net` must be a live handle; `x` must hold `n · input_dim` values and
/// `out` `n` writable values.
#[no_mangle]
pub unsafe extern "C" fn ntk_network_forward(net: *const NtkNetwork, x: *const f64, n: usize, out: *mut f64) -> NtkStatus {
    guard(|| {
        let net = as_ref(net, "net")?;
        let x = matrix(x, n, net.config.input_dim, "x")?;
        let f = forward_batch(&net.config, &net.params, &x)?;
        write_out(slice_mut(out, n, "out")?, f.as_slice(), "outputs")
    })
}

/// Feature map `Φ` (`n × P`, row-major): row `i` is `∂f(x_i)/∂θ`.
///
/// # Safety
/// `net` must be a live handle; `x` must hold `n · input_dim` values and
/// `out` `n · P` writable values.
#[no_mangle]
pub unsafe extern "C" fn ntk_network_features(net: *const NtkNetwork, x: *const f64, n: usize, out: *mut f64) -> NtkStatus {
    guard(|| {
        let net = as_ref(net, "net")?;
        let x = matrix(x, n, net.config.input_dim, "x")?;
        let rows = feature_matrix(&net.config, &net.params, &x)?.to_rows();
        let p = net.params.len();
        let dst = slice_mut(out, n * p, "out")?;
        for i in 0..n {
            for j in 0..p {
                dst[i * p + j] = rows[(i, j)];
            }
        }
        Ok(())
    })
}

/// Empirical NTK of `net` on the `n` rows of `x`.
///
/// # Safety
/// `net` must be a live handle; `x` must hold `n · input_dim` values;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ntk_kernel_new(net: *const NtkNetwork, x: *const f64, n: usize, out: *mut *mut NtkKernel) -> NtkStatus {
    guard(|| {
        let net = as_ref(net, "net")?;
        let x = matrix(x, n, net.config.input_dim, "x")?;
        let kernel = empirical_ntk(&feature_matrix(&net.config, &net.params, &x)?)?;
        emit(out, NtkKernel { kernel }, "out")
    })
}

/// # Safety
/// `k` must be null or a live kernel handle.
#[no_mangle]
pub unsafe extern "C" fn ntk_kernel_free(k: *mut NtkKernel) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// Side length `N`, or 0 for a null handle.
///
/// # Safety
/// `k` must be null or a live kernel handle.
#[no_mangle]
pub unsafe extern "C" fn ntk_kernel_size(k: *const NtkKernel) -> usize {
    k.as_ref().map_or(0, |k| k.kernel.n())
}

/// Kernel entries (`N × N`, row-major).
///
/// # Safety
/// `k` must be a live kernel handle; `out` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn ntk_kernel_entries(k: *const NtkKernel, out: *mut f64, len: usize) -> NtkStatus {
    guard(|| {
        let k = as_ref(k, "kernel")?;
        let e = k.kernel.entries().transpose(); // column-major → row-major
        write_out(slice_mut(out, len, "out")?, e.as_slice(), "kernel entries")
    })
}

/// Extreme eigenvalues and the diagonal jitter used to factor the kernel.
///
/// # Safety
/// `k` must be a live kernel handle; the three outputs must be writable
/// (any of them may be null to skip it).
#[no_mangle]
pub unsafe extern "C" fn ntk_kernel_spectrum(k: *const NtkKernel, lambda_min: *mut f64, lambda_max: *mut f64, jitter: *mut f64) -> NtkStatus {
    guard(|| {
        let k = as_ref(k, "kernel")?;
        for (p, v) in [(lambda_min, k.kernel.lambda_min()), (lambda_max, k.kernel.lambda_max()), (jitter, k.kernel.jitter())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Fits the minimum-complexity interpolator of `(x, y)` at the network's
/// current parameters.
///
/// # Safety
/// `net` must be a live handle; `x` must hold `n · input_dim` values, `y`
/// `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ntk_interpolator_fit(
    net: *const NtkNetwork,
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut *mut NtkInterpolator,
) -> NtkStatus {
    guard(|| {
        let net = as_ref(net, "net")?;
        let x = matrix(x, n, net.config.input_dim, "x")?;
        let y = DVector::from_column_slice(slice(y, n, "y")?);
        let phi = feature_matrix(&net.config, &net.params, &x)?;
        let weights = min_complexity_interpolator(&phi, &empirical_ntk(&phi)?, &y)?;
        let fitted = NtkInterpolator {
            config: net.config.clone(),
            params: net.params.clone(),
            weights,
        };
        emit(out, fitted, "out")
    })
}

/// # Safety
/// `w` must be null or a live interpolator handle.
#[no_mangle]
pub unsafe extern "C" fn ntk_interpolator_free(w: *mut NtkInterpolator) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Interpolator predictions at the `m` rows of `probe`.
///
/// # Safety
/// `w` must be a live handle; `probe` must hold `m · input_dim` values and
/// `out` `m` writable values.
#[no_mangle]
pub unsafe extern "C" fn ntk_interpolator_predict(w: *const NtkInterpolator, probe: *const f64, m: usize, out: *mut f64) -> NtkStatus {
    guard(|| {
        let w = as_ref(w, "interpolator")?;
        let probe = matrix(probe, m, w.config.input_dim, "probe")?;
        let phi: FeatureMatrix = feature_matrix(&w.config, &w.params, &probe)?;
        let pred = w.weights.predict(&phi)?;
        write_out(slice_mut(out, m, "out")?, pred.as_slice(), "predictions")
    })
}

/// Limit of linearized gradient descent from the network's parameters on
/// `(x, y)`, evaluated at the `m` rows of `probe`.
///
/// # Safety
/// `net` must be a live handle; `x` must hold `n · input_dim` values, `y`
/// `n` values, `probe` `m · input_dim` values and `out` `m` writable values.
#[no_mangle]
pub unsafe extern "C" fn ntk_gd_closed_form(
    net: *const NtkNetwork,
    x: *const f64,
    y: *const f64,
    n: usize,
    probe: *const f64,
    m: usize,
    out: *mut f64,
) -> NtkStatus {
    guard(|| {
        let net = as_ref(net, "net")?;
        let d = net.config.input_dim;
        let x = matrix(x, n, d, "x")?;
        let y = DVector::from_column_slice(slice(y, n, "y")?);
        let probe = matrix(probe, m, d, "probe")?;
        let phi = feature_matrix(&net.config, &net.params, &x)?;
        let kernel = empirical_ntk(&phi)?;
        let f0 = forward_batch(&net.config, &net.params, &x)?;
        let problem = GdProblem {
            phi_train: &phi,
            kernel: &kernel,
            y: &y,
            theta0: &net.params.values,
            f0_train: &f0,
        };
        let pp = feature_matrix(&net.config, &net.params, &probe)?;
        let pf = forward_batch(&net.config, &net.params, &probe)?;
        let pred = gd_closed_form(&problem, &pp, &pf, GdForm::Generic)?;
        write_out(slice_mut(out, m, "out")?, pred.as_slice(), "predictions")
    })
}

/// Monte-Carlo estimate of `E‖f_{θ₀}(X)‖²` over `samples` fresh
/// initializations of the network's architecture (seeds `seed + s`), with
/// the exact expectation for comparison.
///
/// # Safety
/// `net` must be a live handle; `x` must hold `n · input_dim` values; the
/// outputs must be writable (any may be null to skip it).
#[no_mangle]
pub unsafe extern "C" fn ntk_mc_init_norm(
    net: *const NtkNetwork,
    x: *const f64,
    n: usize,
    samples: usize,
    seed: u64,
    mean: *mut f64,
    stderr: *mut f64,
    expected: *mut f64,
) -> NtkStatus {
    guard(|| {
        let net = as_ref(net, "net")?;
        let x = matrix(x, n, net.config.input_dim, "x")?;
        let st = run_mc_init_norm(&net.config, samples, &x, seed, &RunContext::new(1))?;
        for (p, v) in [(mean, st.mean), (stderr, st.stderr), (expected, st.expected)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}
