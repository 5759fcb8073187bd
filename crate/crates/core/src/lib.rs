//! Positive ground states and multiple critical points of the quasilinear
//! Dirichlet problem `-Δu - Δ(u²)u = |u|^{p-2}u`, computed through the
//! semilinear reformulation `u = f(v)`:
//!
//! ```text
//! I_p(v) = ½∫|∇v|² − (1/p)∫|f(v)|^p
//! ```
//!
//! on a masked Cartesian grid. See the README for the module map.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod error;
pub mod experiments;
pub mod functional;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod nehari;
pub mod par;
pub mod spectra;

pub use domain::{DomainGrid, DomainSpec, Field, Shape};
pub use error::{Error, Result};
pub use functional::ExponentParams;
pub use kernel::{f_of, inv_f, TransformSample};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Whether the rayon-backed helpers are compiled in.
pub const PARALLEL: bool = cfg!(feature = "parallel");
