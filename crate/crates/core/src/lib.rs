//! Closed-form minimizers of wide fully-connected networks in the linearized
//! (neural tangent kernel) regime, and the machinery to check them against
//! iterative training.
//!
//! The crate is split into four layers:
//!
//! - [`net`]: the network itself (NTK parametrization), its exact parameter
//!   gradients (the feature map) and the linearized model.
//! - [`solver`]: empirical kernels and every closed-form minimizer (gradient
//!   descent, adaptive preconditioners, mini-batch projectors, the
//!   underparameterized case).
//! - [`optim`]: iterative optimizers for the full network and its
//!   linearization, batch schedules and the concentration diagnostic.
//! - [`lab`]: datasets, experiment specs, runners and result persistence.
//!
//! [`verify`] bundles the module invariants into a runnable property suite.

pub mod error;
pub mod lab;
pub mod net;
pub mod optim;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
