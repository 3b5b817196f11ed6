//! Distributed-delay viral infection model with general incidence and a
//! CTL immune response.
//!
//! The crate covers equilibrium analysis (reproduction numbers and the
//! three equilibria), method-of-steps simulation of the delay system and
//! numerical audits of the Lyapunov functionals behind the global
//! stability results.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod equilibria;
pub mod error;
pub mod integrator;
pub mod kernels;
pub mod model;
pub mod numerics;
pub mod plot;
pub mod presets;
pub mod scenario;
pub mod verifier;

pub use error::{Error, Result};
pub use kernels::{DelayKernel, QuadratureSpec};
pub use model::{ModelSpec, State};
