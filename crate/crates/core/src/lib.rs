//! Monte Carlo solvers for semilinear parabolic systems written as infinite
//! ODE systems over Fourier modes.
//!
//! A system `dχ_k/dt = λ_k [ -χ_k + C_f p_k χ_k + C_b Σ q_{k,l,m} B_{k,l,m}(χ_l, χ_m) + d_k γ_k ]`
//! is solved three ways:
//!
//! * as an expectation over random branching trees ([`tree`], [`eval`], [`mc`]),
//! * through level-pruned tree functionals whose expectations solve a
//!   semi-implicit iteration that is always globally defined,
//! * deterministically on a truncated mode box ([`det`]), which serves as the
//!   oracle for every stochastic estimate.
//!
//! Concrete systems (Burgers, 2D vorticity, surface growth, the scalar
//! logistic ODE) are built in [`model`]; lattice bookkeeping lives in
//! [`modes`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod det;
pub mod error;
pub mod eval;
pub mod mc;
pub mod model;
pub mod modes;
pub mod rng;
pub mod tree;
pub mod value;

pub use error::{Error, Result};
pub use modes::{ModeIndex, TruncationBox, WeightFunction};
pub use value::CVec;
