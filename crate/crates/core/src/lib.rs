//! Small-ball probabilities for Gaussian processes in `L₂[0, 1]` and their
//! finite-dimensional perturbations.
//!
//! The crate is organized bottom-up:
//!
//! * [`kernels`] and [`spectral`]: covariance kernels and their Nyström
//!   discretization (eigenvalues, eigenfunctions, Fourier coefficients).
//! * [`quadform`]: distribution of `Σ μ_k ξ_k²` by characteristic-function
//!   inversion, saddlepoint approximation and Monte Carlo.
//! * [`asymptotics`]: closed-form small-ball asymptotics for power-law
//!   spectra and the algebra of forms `𝒜 x^α exp(−𝒟 x^{−β})`.
//! * [`perturbation`]: the finite-rank perturbation `X_A`, its
//!   classification and the transfer factors relating `P{‖X_A‖ < ε}` to
//!   `P{‖X₀‖ < ε}`.
//! * [`durbin`]: limiting processes of ω²-type goodness-of-fit statistics
//!   with estimated parameters.

// `!(x > 0.0)` guards are used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod durbin;
pub mod error;
pub mod kernels;
pub mod montecarlo;
pub mod perturbation;
pub mod quad;
pub mod quadform;
pub mod special;
pub mod spectral;
pub mod validation;

pub use error::{Result, SmallBallError};
