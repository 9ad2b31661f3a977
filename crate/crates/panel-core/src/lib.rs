//! Spectral-Galerkin core for a clamped rectangular panel driven by a
//! flow-induced delay force.
//!
//! The crate is `no_std` (alloc required) and holds all numerics:
//!
//! * [`basis`] — tensor-product clamped-beam basis and bilinear-form matrices,
//! * [`delay`] — delay horizon, translation-overlap kernel tensors, history ring,
//! * [`dynamics`] — IMEX time stepping, energies, Lyapunov function,
//! * [`flowtrace`] — half-space flow potential evaluation and the reduction check,
//! * [`longtime`] — quasi-stability, dissipativity and attractor-dimension diagnostics,
//! * [`functionals`] — determining functionals and completeness defects.
//!
//! IO, file formats and the command line live in the companion `panel-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod basis;
pub mod delay;
pub mod dynamics;
pub mod flowtrace;
pub mod functionals;
pub mod linalg;
pub mod longtime;
pub mod quad;
pub mod rng;

mod beam;
mod float;

pub use basis::{BasisSet, Field, PlateDomain};
pub use delay::{DelayHistory, DelayKernel, DelayParams};
pub use dynamics::{EnergyRecord, ModalState, PhysParams};

use alloc::string::String;

/// Errors surfaced by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A constructor argument violates its documented range.
    InvalidArgument(String),
    /// Quadrature resolution is below the floor needed by the request.
    InsufficientQuadrature(String),
    /// A sampled value was NaN or infinite where a finite one is required.
    NonFiniteSample(String),
    /// The delay history ring has not been filled yet.
    HistoryUnderfilled { have: usize, need: usize },
    /// Flow speed within the excluded band around Mach 1.
    DegenerateSpeed(f64),
    /// State norm exceeded the blow-up threshold during time stepping.
    BlowUp { step: u64, time: f64, norm: f64 },
    /// A matrix factorization or eigensolve failed.
    LinAlg(String),
    /// A functional family came out empty (no admissible points).
    EmptySet(String),
    /// Stored trajectory does not cover the requested time window.
    InsufficientCoverage { have: f64, need: f64 },
}

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            Error::InsufficientQuadrature(m) => write!(f, "insufficient quadrature: {m}"),
            Error::NonFiniteSample(m) => write!(f, "non-finite sample: {m}"),
            Error::HistoryUnderfilled { have, need } => {
                write!(f, "history underfilled: {have} of {need} slots")
            }
            Error::DegenerateSpeed(u) => write!(f, "degenerate flow speed U={u} (|U-1| too small)"),
            Error::BlowUp { step, time, norm } => {
                write!(f, "blow-up at step {step} (t={time}): |a| = {norm:e}")
            }
            Error::LinAlg(m) => write!(f, "linear algebra failure: {m}"),
            Error::EmptySet(m) => write!(f, "empty set: {m}"),
            Error::InsufficientCoverage { have, need } => {
                write!(
                    f,
                    "insufficient trajectory coverage: have {have}, need {need}"
                )
            }
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

/// FNV-1a over a byte stream; used to fingerprint basis/kernel builds
/// so cache files can refuse mismatched inputs.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
