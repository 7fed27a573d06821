//! Desk-scale simulation and analysis of single-NV-center magnetometry.
//!
//! The crate models the full signal chain of an NV-center quantum-sensing
//! experiment: the sensor qubit (the {m_S = 0, m_S = −1} subspace of the NV
//! ground-state spin triplet), nuclear spins coupled to it through hyperfine
//! interactions, the dynamical-decoupling pulse sequences that turn the sensor
//! into a narrowband AC magnetometer, the IQ waveforms that realize those
//! sequences on an arbitrary waveform generator, and the estimation machinery
//! that turns measured traces back into physical parameters.
//!
//! # Module map
//!
//! - [`constants`] / [`register`] — physical constants and the spin-system
//!   description (bias field, nuclear spins, hyperfine couplings).
//! - [`physics`] — closed-form frequency relations of the NV–nuclear system.
//! - [`geometry`] — bias-magnet field model and mechanical clearance.
//! - [`waveform`] — envelope rendering, IQ synthesis, upconversion, file I/O.
//! - [`sequences`] — symbolic pulse sequences and exact timing expansion.
//! - [`simulator`] — brute-force unitary evolution of qubit ⊗ nuclei, driven
//!   two-level dynamics, decoherence envelopes, photon-count readout.
//! - [`models`] — closed-form signal models (multipulse NMR spectra,
//!   hyperfine inversion, proton NMR, decay laws, photon correlation).
//! - [`estimation`] — least-squares fitting, spectrum/peak extraction, and
//!   the end-to-end parameter-extraction pipelines.
//! - [`trace`] — measurement traces with axis semantics and CSV round-trip.
//!
//! # Conventions
//!
//! Frequencies are plain (not angular) and carried in hertz; times in
//! seconds; magnetic fields in millitesla; geometry lengths in millimetres
//! and optical lengths in nanometres, always named explicitly. Hamiltonians
//! are stored in frequency units and picked up a factor 2π only inside
//! propagator construction.

pub mod constants;
pub mod estimation;
pub mod geometry;
pub mod models;
pub mod physics;
pub mod register;
pub mod sequences;
pub mod simulator;
pub mod trace;
pub mod waveform;

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Domain errors are precondition violations a caller can act on; capacity
/// and numerical errors are operational limits; I/O and parse errors carry
/// the offending path.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's inputs was violated.
    #[error("{0}")]
    Domain(String),

    /// The spin register exceeds the exact-simulation capacity.
    #[error("register holds {n} nuclei; exact simulation is capped at {max}")]
    Capacity { n: usize, max: usize },

    /// The hyperfine inversion is undefined at these angles.
    #[error("hyperfine inversion undefined: {0}")]
    InversionUndefined(String),

    /// The hyperfine inversion produced a negative radicand, i.e. the inputs
    /// are mutually inconsistent. The radicand is carried in Hz².
    #[error("inconsistent inversion inputs: radicand {radicand:.3} Hz² is negative")]
    InconsistentInversion { radicand: f64 },

    /// An iterative numerical procedure failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An I/O operation failed; the path gives context.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file had valid I/O but invalid content.
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    /// Shorthand for a domain error with a formatted message.
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Shorthand for a numerical-failure error with a formatted message.
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// FNV-1a 64-bit hash, used to tag artifacts with a stable register/config
/// fingerprint. Not cryptographic; stability across runs and platforms is
/// the only requirement.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a64_matches_reference_vectors() {
        // Reference values for the canonical FNV-1a 64 test strings.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn error_messages_carry_context() {
        let e = Error::Capacity { n: 7, max: 5 };
        assert!(e.to_string().contains('7'));
        let e = Error::domain("tau must be positive");
        assert_eq!(e.to_string(), "tau must be positive");
    }
}
