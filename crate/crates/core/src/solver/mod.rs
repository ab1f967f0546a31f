//! Empirical kernels and closed-form minimizers of linearized training.
//!
//! Everything here works on feature matrices `Φ` and kernels `K = ΦΦᵀ`;
//! `N × N` systems go through [`KernelMatrix`] and its jitter ladder, `P × P`
//! objects are never formed except in the underparameterized solver and
//! the test-only dense adaptive matrices.

mod adaptive;
mod closed_form;
mod kernel;

pub use adaptive::{
    adaptive_closed_form_trace, sgd_projector_matrix, AdaptiveMatrixSeq, AdaptiveProblem, ClosedFormTrace,
    ProjectorStep, SgdProjector,
};
pub use closed_form::{
    d_kernel_interpolator, gd_closed_form, j_statistic, min_complexity_interpolator, projector_apply,
    underparam_closed_form, GdForm, GdProblem, InterpolatorWeights,
};
pub use kernel::{empirical_ntk, KernelMatrix, SINGULAR_RATIO};
