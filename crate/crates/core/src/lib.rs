//! Truncated spectral models for time-periodic Schrodinger operators
//! `i d/dt psi = (K0 + V(t)) psi`.
//!
//! Operators live on a finite window of the eigenbasis of `K0`: Hermite
//! functions for the harmonic oscillator, Fourier modes for the half-wave
//! operator `|D| + 1`. On top of that sit resonant averages, a two-step
//! normal form, commutator (Mourre) positivity checks, propagators and
//! norm-growth diagnostics, tied together by TOML scenarios.

pub mod basis;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod mourre;
pub mod normal_form;
pub mod operator;
pub mod propagator;
pub mod resonant;
pub mod scenarios;
pub mod spectral;

pub use basis::{BasisKind, BasisModel, StateVector};
pub use error::{Error, Result};
pub use operator::{Banded, ToeplitzSpec, TruncatedOperator};
pub use resonant::TimePeriodicOperator;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

pub(crate) const I: C64 = C64::new(0.0, 1.0);
pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
