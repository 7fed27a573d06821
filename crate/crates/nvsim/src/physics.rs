//! Closed-form frequency relations of the NV–nuclear system.
//!
//! The NV ground state is a spin triplet with zero-field splitting D; an
//! axial bias field B0 Zeeman-shifts the m_S = ±1 levels by ±γ_e·B0, so the
//! two microwave transitions sit at D ∓ γ_e·B0. A nuclear spin coupled to
//! the sensor precesses about an effective field that depends on the sensor
//! state: bare Larmor precession at f0 = γ·B0 when m_S = 0, and a tilted,
//! shifted precession at f1 = √((f0 + a_∥)² + a_⊥²) when m_S = −1. Those two
//! conditional frequencies carry all the information the multipulse
//! spectroscopy in this crate extracts.

use nalgebra::Matrix2;

use crate::constants::STANDARD;
use crate::register::{NuclearSpin, Species};
use crate::{Error, Result};

/// Which sensor transition of the ground-state triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    /// m_S = 0 ↔ m_S = −1 (the sensing transition throughout this crate).
    ZeroToMinusOne,
    /// m_S = 0 ↔ m_S = +1.
    ZeroToPlusOne,
}

/// Microwave transition frequency of the sensor (Hz) at axial bias `b0_mt`.
///
/// Returns D − γ_e·B0 for 0↔−1 and D + γ_e·B0 for 0↔+1; the two always sum
/// to exactly 2D.
pub fn nv_transition_frequency(b0_mt: f64, which: Transition) -> Result<f64> {
    if !(b0_mt.is_finite() && b0_mt >= 0.0) {
        return Err(Error::domain(format!(
            "bias field must be nonnegative and finite, got {b0_mt} mT"
        )));
    }
    let zeeman = STANDARD.gamma_e_hz_per_mt * b0_mt;
    Ok(match which {
        Transition::ZeroToMinusOne => STANDARD.zero_field_splitting_hz - zeeman,
        Transition::ZeroToPlusOne => STANDARD.zero_field_splitting_hz + zeeman,
    })
}

/// Bare nuclear Larmor frequency γ·B0 (Hz) for a known species.
///
/// `Species::Other` carries no implied gyromagnetic ratio and is rejected;
/// use [`conditional_precession_frequencies`] with an explicit
/// [`NuclearSpin`] for those.
pub fn larmor_frequency(species: Species, b0_mt: f64) -> Result<f64> {
    if !(b0_mt.is_finite() && b0_mt >= 0.0) {
        return Err(Error::domain(format!(
            "bias field must be nonnegative and finite, got {b0_mt} mT"
        )));
    }
    let gamma = species.expected_gamma_hz_per_mt().ok_or_else(|| {
        Error::domain(
            "species carries no implied gyromagnetic ratio; supply one via NuclearSpin",
        )
    })?;
    Ok(gamma * b0_mt)
}

/// f1 from the bare Larmor frequency and the hyperfine components (all Hz).
///
/// The transverse component enters squared, so its sign convention is
/// unobservable here.
pub(crate) fn f1_from_components(f0_hz: f64, a_par_hz: f64, a_perp_hz: f64) -> f64 {
    ((f0_hz + a_par_hz).powi(2) + a_perp_hz.powi(2)).sqrt()
}

/// Conditional precession frequencies `(f0, f1)` in Hz of one nucleus at
/// bias `b0_mt`: f0 = γ·B0 for sensor state m_S = 0 and
/// f1 = √((f0 + a_∥)² + a_⊥²) for m_S = −1.
pub fn conditional_precession_frequencies(nuclear: &NuclearSpin, b0_mt: f64) -> Result<(f64, f64)> {
    if !(b0_mt.is_finite() && b0_mt >= 0.0) {
        return Err(Error::domain(format!(
            "bias field must be nonnegative and finite, got {b0_mt} mT"
        )));
    }
    let f0 = nuclear.gamma_hz_per_mt * b0_mt;
    let f1 = f1_from_components(f0, nuclear.coupling.a_par_hz, nuclear.coupling.a_perp_hz);
    Ok((f0, f1))
}

/// The two conditional nuclear Hamiltonians as 2×2 real symmetric matrices
/// in frequency units (Hz):
///
///   H(m_S=0)  = −f0·Iz
///   H(m_S=−1) = −(f0 + a_∥)·Iz − a_⊥·Ix
///
/// with Iz = σz/2, Ix = σx/2. Their eigen-splittings are exactly f0 and f1.
/// The 2π enters only when a propagator exp(−i·2π·H·t) is built from these.
pub fn build_conditional_hamiltonians(
    nuclear: &NuclearSpin,
    b0_mt: f64,
) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
    let (f0, _) = conditional_precession_frequencies(nuclear, b0_mt)?;
    let a_par = nuclear.coupling.a_par_hz;
    let a_perp = nuclear.coupling.a_perp_hz;
    let h0 = Matrix2::new(-f0 / 2.0, 0.0, 0.0, f0 / 2.0);
    let h1 = Matrix2::new(
        -(f0 + a_par) / 2.0,
        -a_perp / 2.0,
        -a_perp / 2.0,
        (f0 + a_par) / 2.0,
    );
    Ok((h0, h1))
}
