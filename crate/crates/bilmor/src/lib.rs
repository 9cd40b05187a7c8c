//! Interpolatory model order reduction for SISO bilinear dynamical systems.
//!
//! A bilinear system couples its state to the input through an extra
//! state-times-input term:
//!
//! ```text
//! x'(t) = A x(t) + N x(t) u(t) + b u(t)
//! y(t)  = c x(t)
//! ```
//!
//! Its input-output behavior decomposes into a series of multivariate
//! transfer functions H_k(s_1, ..., s_k); truncating the series after M
//! terms gives a computable surrogate with an H2-type norm. This crate
//! provides:
//!
//! * [`system`]: the system type, transfer-function evaluation,
//!   perturbations of the state matrix, and time-domain simulation,
//! * [`norms`]: H2 norms of subsystems and truncated series by quadrature
//!   and by a closed-form Kronecker/Gramian formula, plus H-infinity
//!   estimates,
//! * [`sylvester`]: the Kronecker-structured linear solves at the heart of
//!   the reduction algorithms, in coupled and cascaded forms,
//! * [`solvers`]: complex BiCG and its deflated variant for the inexact
//!   solve path, with recycling between nearby systems,
//! * [`mor`]: the two fixed-point reduction iterations (coupled and
//!   truncated) and a residue-level interpolation verifier,
//! * [`stability`]: experiments quantifying how inexact solves perturb the
//!   reduced model, including explicit error-term assembly and norm bounds.
//!
//! All randomness is seeded explicitly; every public entry point is
//! deterministic for fixed inputs.

pub mod error;
mod linalg;
pub mod mor;
pub mod norms;
pub mod solvers;
pub mod stability;
pub mod sylvester;
pub mod system;
pub mod tensor;

pub use error::{Error, Result};

/// Dense complex matrix, the working type of all solve paths.
pub type CMatrix = nalgebra::DMatrix<num_complex::Complex64>;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<num_complex::Complex64>;
