//! Physical constants of the NV sensing problem.
//!
//! Everything downstream — transition frequencies, magnet calibration,
//! proton-layer field amplitudes — pulls its numbers from the single
//! [`PhysicalConstants`] value rather than scattering literals. Fields are
//! public for reading; construct custom sets through [`PhysicalConstants::new`]
//! so the positivity invariants hold.

use crate::{Error, Result};

/// Fundamental and NV-specific constants.
///
/// Units follow the crate conventions: frequencies in Hz, fields in mT, so
/// gyromagnetic ratios are Hz/mT and `gamma * B` is directly a frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Planck constant h (J·s).
    pub planck_h: f64,
    /// Magnetic constant prefactor μ₀/4π (T·m/A).
    pub mu0_over_4pi: f64,
    /// NV ground-state zero-field splitting D (Hz).
    pub zero_field_splitting_hz: f64,
    /// Electron gyromagnetic ratio γ_e (Hz/mT).
    pub gamma_e_hz_per_mt: f64,
    /// ¹³C nuclear gyromagnetic ratio (Hz/mT).
    pub gamma_c13_hz_per_mt: f64,
    /// ¹H nuclear gyromagnetic ratio (Hz/mT).
    pub gamma_h1_hz_per_mt: f64,
}

/// The standard constant set used throughout the crate.
pub const STANDARD: PhysicalConstants = PhysicalConstants {
    planck_h: 6.626_070_15e-34,
    mu0_over_4pi: 1.0e-7,
    zero_field_splitting_hz: 2.87e9,
    gamma_e_hz_per_mt: 28.0e6,
    gamma_c13_hz_per_mt: 10.705e3,
    gamma_h1_hz_per_mt: 42.577e3,
};

impl PhysicalConstants {
    /// Build a custom constant set, enforcing that every entry is positive
    /// and finite.
    pub fn new(
        planck_h: f64,
        mu0_over_4pi: f64,
        zero_field_splitting_hz: f64,
        gamma_e_hz_per_mt: f64,
        gamma_c13_hz_per_mt: f64,
        gamma_h1_hz_per_mt: f64,
    ) -> Result<Self> {
        let c = PhysicalConstants {
            planck_h,
            mu0_over_4pi,
            zero_field_splitting_hz,
            gamma_e_hz_per_mt,
            gamma_c13_hz_per_mt,
            gamma_h1_hz_per_mt,
        };
        for (name, v) in [
            ("planck_h", c.planck_h),
            ("mu0_over_4pi", c.mu0_over_4pi),
            ("zero_field_splitting_hz", c.zero_field_splitting_hz),
            ("gamma_e_hz_per_mt", c.gamma_e_hz_per_mt),
            ("gamma_c13_hz_per_mt", c.gamma_c13_hz_per_mt),
            ("gamma_h1_hz_per_mt", c.gamma_h1_hz_per_mt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!(
                    "physical constant {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(c)
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        STANDARD
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_values_are_the_published_ones() {
        let c = PhysicalConstants::default();
        assert_eq!(c.zero_field_splitting_hz, 2.87e9);
        assert_eq!(c.gamma_e_hz_per_mt, 28.0e6);
        assert_eq!(c.gamma_c13_hz_per_mt, 10.705e3);
        assert_eq!(c.gamma_h1_hz_per_mt, 42.577e3);
        assert_eq!(c.planck_h, 6.626_070_15e-34);
        assert_eq!(c.mu0_over_4pi, 1.0e-7);
    }

    #[test]
    fn gyromagnetic_hierarchy_holds() {
        // The electron moment dwarfs both nuclear moments, and the proton
        // outpaces carbon-13 by roughly 4:1; these orderings are what make
        // the NV a useful sensor for either species.
        let c = STANDARD;
        assert!(c.gamma_e_hz_per_mt > 100.0 * c.gamma_h1_hz_per_mt);
        assert!(c.gamma_h1_hz_per_mt > 3.9 * c.gamma_c13_hz_per_mt);
        assert!(c.gamma_h1_hz_per_mt < 4.1 * c.gamma_c13_hz_per_mt);
    }

    #[test]
    fn constructor_rejects_nonpositive_entries() {
        let r = PhysicalConstants::new(6.6e-34, 1e-7, -2.87e9, 28.0e6, 1.07e4, 4.26e4);
        assert!(r.is_err(), "negative zero-field splitting must be rejected");
        let msg = r.unwrap_err().to_string();
        assert!(msg.contains("zero_field_splitting_hz"), "error names the field: {msg}");
    }
}
