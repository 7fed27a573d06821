//! Spin-system description: the sensor's bias field, the nuclear spins it is
//! coupled to, and the optional nitrogen-host detuning mixture.
//!
//! A [`SpinRegister`] is the single source of truth handed to the simulator,
//! the closed-form models, and the CLI. It serializes to a small versioned
//! JSON document (schema tag `nvsim-register/1`) so measurement artifacts can
//! embed a stable fingerprint of the system they were computed from.
//!
//! All frequencies in this module are Hz and fields are mT, as everywhere in
//! the crate; the JSON field names carry the units explicitly.

use serde::{Deserialize, Serialize};

use crate::constants::STANDARD;
use crate::{fnv1a64, Error, Result};

/// Maximum number of nuclear spins the exact simulator will accept; beyond
/// this the Hilbert space (2^(n+1) = 64 at the cap) stops being "sub-second
/// oracle" material and larger baths are represented by decoherence
/// envelopes instead.
pub const MAX_NUCLEI: usize = 5;

/// Schema tag written into register JSON files.
pub const REGISTER_SCHEMA: &str = "nvsim-register/1";

/// Nuclear species tag. `Other` carries no implied gyromagnetic ratio and
/// exists for synthetic registers in tests and what-if studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Species {
    Carbon13,
    Proton,
    Other,
}

impl Species {
    /// The accepted gyromagnetic ratio for a known species (Hz/mT), or
    /// `None` if the tag implies nothing.
    pub fn expected_gamma_hz_per_mt(self) -> Option<f64> {
        match self {
            Species::Carbon13 => Some(STANDARD.gamma_c13_hz_per_mt),
            Species::Proton => Some(STANDARD.gamma_h1_hz_per_mt),
            Species::Other => None,
        }
    }
}

impl std::fmt::Display for Species {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Species::Carbon13 => write!(f, "carbon-13"),
            Species::Proton => write!(f, "proton"),
            Species::Other => write!(f, "other"),
        }
    }
}

/// Secular hyperfine coupling of one nucleus to the sensor spin.
///
/// `a_par_hz` is signed; `a_perp_hz` is kept nonnegative because the sign of
/// the transverse component only fixes the orientation of the nuclear x-axis
/// and carries no observable consequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperfineCoupling {
    /// Component along the NV axis, a_∥ (Hz, signed).
    pub a_par_hz: f64,
    /// Component transverse to the NV axis, a_⊥ (Hz, ≥ 0).
    pub a_perp_hz: f64,
}

impl HyperfineCoupling {
    /// Build a coupling, rejecting non-finite values and negative a_⊥.
    pub fn new(a_par_hz: f64, a_perp_hz: f64) -> Result<Self> {
        if !a_par_hz.is_finite() || !a_perp_hz.is_finite() {
            return Err(Error::domain(format!(
                "hyperfine components must be finite, got a_par = {a_par_hz}, a_perp = {a_perp_hz}"
            )));
        }
        if a_perp_hz < 0.0 {
            return Err(Error::domain(format!(
                "a_perp must be nonnegative (sign is absorbed into the axis convention), got {a_perp_hz} Hz"
            )));
        }
        Ok(HyperfineCoupling { a_par_hz, a_perp_hz })
    }

    /// The uncoupled (spectator) coupling.
    pub fn zero() -> Self {
        HyperfineCoupling {
            a_par_hz: 0.0,
            a_perp_hz: 0.0,
        }
    }
}

/// One nuclear spin-1/2 in the register.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuclearSpin {
    /// Species tag; constrains the gyromagnetic ratio when it is a known one.
    pub species: Species,
    /// Gyromagnetic ratio (Hz/mT).
    pub gamma_hz_per_mt: f64,
    /// Hyperfine coupling to the sensor.
    pub coupling: HyperfineCoupling,
}

impl NuclearSpin {
    /// Relative tolerance for the "γ matches the species tag" check. Loose
    /// enough to admit slightly different literature values, tight enough to
    /// catch unit mistakes (Hz vs kHz) instantly.
    const GAMMA_REL_TOL: f64 = 1e-3;

    /// Build a nuclear spin with an explicit gyromagnetic ratio.
    pub fn new(species: Species, gamma_hz_per_mt: f64, coupling: HyperfineCoupling) -> Result<Self> {
        if !(gamma_hz_per_mt.is_finite() && gamma_hz_per_mt > 0.0) {
            return Err(Error::domain(format!(
                "gyromagnetic ratio must be positive and finite, got {gamma_hz_per_mt} Hz/mT"
            )));
        }
        if let Some(expected) = species.expected_gamma_hz_per_mt() {
            let rel = ((gamma_hz_per_mt - expected) / expected).abs();
            if rel > Self::GAMMA_REL_TOL {
                return Err(Error::domain(format!(
                    "gyromagnetic ratio {gamma_hz_per_mt} Hz/mT does not match species {species} \
                     (expected {expected} Hz/mT within {:.0e} relative)",
                    Self::GAMMA_REL_TOL
                )));
            }
        }
        Ok(NuclearSpin {
            species,
            gamma_hz_per_mt,
            coupling,
        })
    }

    /// A ¹³C nucleus with the standard gyromagnetic ratio.
    pub fn carbon13(coupling: HyperfineCoupling) -> Self {
        NuclearSpin {
            species: Species::Carbon13,
            gamma_hz_per_mt: STANDARD.gamma_c13_hz_per_mt,
            coupling,
        }
    }

    /// A ¹H nucleus with the standard gyromagnetic ratio.
    pub fn proton(coupling: HyperfineCoupling) -> Self {
        NuclearSpin {
            species: Species::Proton,
            gamma_hz_per_mt: STANDARD.gamma_h1_hz_per_mt,
            coupling,
        }
    }
}

/// Classical detuning mixture standing in for the ¹⁴N host nucleus.
///
/// Instead of enlarging the quantum register, the host's hyperfine states
/// are modeled as a weighted ensemble of sensor detunings; any observable is
/// the weight-average over the branches. The three-line variant with ±2.16
/// MHz reproduces the characteristic free-precession beating and the pulsed
/// resonance triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NitrogenMixture {
    /// Detuning of each branch (Hz, relative to the central transition).
    pub detunings_hz: Vec<f64>,
    /// Weight of each branch; nonnegative, summing to 1.
    pub weights: Vec<f64>,
}

impl NitrogenMixture {
    /// Tolerance on the weight sum.
    const WEIGHT_SUM_TOL: f64 = 1e-12;

    /// Build a mixture, validating weights.
    pub fn new(detunings_hz: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if detunings_hz.len() != weights.len() {
            return Err(Error::domain(format!(
                "mixture has {} detunings but {} weights",
                detunings_hz.len(),
                weights.len()
            )));
        }
        if detunings_hz.is_empty() {
            return Err(Error::domain("mixture must have at least one branch"));
        }
        if detunings_hz.iter().any(|d| !d.is_finite()) {
            return Err(Error::domain("mixture detunings must be finite"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::domain("mixture weights must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > Self::WEIGHT_SUM_TOL {
            return Err(Error::domain(format!(
                "mixture weights sum to {sum}, expected 1 within {:.0e}",
                Self::WEIGHT_SUM_TOL
            )));
        }
        Ok(NitrogenMixture {
            detunings_hz,
            weights,
        })
    }

    /// The standard ¹⁴N triplet: equally weighted detunings −A, 0, +A with
    /// A = 2.16 MHz.
    pub fn standard_triplet() -> Self {
        let a = 2.16e6;
        NitrogenMixture {
            detunings_hz: vec![-a, 0.0, a],
            weights: vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        }
    }

    /// Iterate over `(detuning_hz, weight)` branches.
    pub fn branches(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.detunings_hz
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
    }
}

/// The complete spin system: bias field, nuclear spins, optional host
/// mixture. Immutable after construction; every consumer takes it by
/// reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinRegister {
    /// Schema tag; written on save, checked on load.
    pub schema: String,
    /// Bias field along the NV axis (mT, ≥ 0).
    pub b0_mt: f64,
    /// Nuclear spins, at most [`MAX_NUCLEI`].
    pub nuclei: Vec<NuclearSpin>,
    /// Optional nitrogen-host detuning mixture.
    pub nitrogen: Option<NitrogenMixture>,
}

impl SpinRegister {
    /// Build a register, enforcing the field and capacity invariants.
    pub fn new(
        b0_mt: f64,
        nuclei: Vec<NuclearSpin>,
        nitrogen: Option<NitrogenMixture>,
    ) -> Result<Self> {
        if !(b0_mt.is_finite() && b0_mt >= 0.0) {
            return Err(Error::domain(format!(
                "bias field must be nonnegative and finite, got {b0_mt} mT"
            )));
        }
        if nuclei.len() > MAX_NUCLEI {
            return Err(Error::Capacity {
                n: nuclei.len(),
                max: MAX_NUCLEI,
            });
        }
        Ok(SpinRegister {
            schema: REGISTER_SCHEMA.to_string(),
            b0_mt,
            nuclei,
            nitrogen,
        })
    }

    /// A bare sensor with no nuclei and no host mixture.
    pub fn bare(b0_mt: f64) -> Result<Self> {
        SpinRegister::new(b0_mt, Vec::new(), None)
    }

    /// Canonical JSON serialization (fixed field order, no trailing newline).
    pub fn to_canonical_json(&self) -> String {
        // serde_json writes struct fields in declaration order, which is all
        // the canonicalization this fingerprint needs.
        serde_json::to_string_pretty(self).expect("register serialization cannot fail")
    }

    /// Stable 64-bit fingerprint of the register description, used to tag
    /// measurement artifacts.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(self.to_canonical_json().as_bytes())
    }

    /// Parse a register from JSON text, validating schema tag and invariants.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: SpinRegister = serde_json::from_str(text).map_err(|e| {
            Error::domain(format!("register JSON does not parse: {e}"))
        })?;
        if raw.schema != REGISTER_SCHEMA {
            return Err(Error::domain(format!(
                "unsupported register schema {:?}, expected {REGISTER_SCHEMA:?}",
                raw.schema
            )));
        }
        // Re-run every constructor so hand-edited files get the same checks
        // as programmatic construction.
        let nuclei = raw
            .nuclei
            .into_iter()
            .map(|n| NuclearSpin::new(n.species, n.gamma_hz_per_mt, n.coupling))
            .collect::<Result<Vec<_>>>()?;
        let nitrogen = match raw.nitrogen {
            Some(m) => Some(NitrogenMixture::new(m.detunings_hz, m.weights)?),
            None => None,
        };
        SpinRegister::new(raw.b0_mt, nuclei, nitrogen)
    }

    /// Load a register from a JSON file.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Save the register as pretty-printed JSON.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_canonical_json();
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spin_a() -> NuclearSpin {
        NuclearSpin::carbon13(HyperfineCoupling::new(-226.2e3, 242.8e3).unwrap())
    }

    #[test]
    fn coupling_rejects_negative_transverse_component() {
        let r = HyperfineCoupling::new(10.0e3, -5.0e3);
        assert!(r.is_err(), "negative a_perp must be rejected");
    }

    #[test]
    fn nuclear_spin_gamma_must_match_known_species() {
        let c = HyperfineCoupling::zero();
        // kHz-instead-of-Hz unit slip: three orders of magnitude off.
        let r = NuclearSpin::new(Species::Carbon13, 10.705, c);
        assert!(r.is_err(), "wildly wrong gamma must be rejected for a known species");
        // Explicit ratios are fine for the open species tag.
        assert!(NuclearSpin::new(Species::Other, 123.0, c).is_ok());
    }

    #[test]
    fn register_capacity_is_enforced() {
        let nuclei = vec![spin_a(); 6];
        match SpinRegister::new(4.7, nuclei, None) {
            Err(crate::Error::Capacity { n: 6, max: 5 }) => {}
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn mixture_weights_must_sum_to_one() {
        let r = NitrogenMixture::new(vec![-2.16e6, 0.0, 2.16e6], vec![0.3, 0.3, 0.3]);
        assert!(r.is_err(), "weights summing to 0.9 must be rejected");
        let m = NitrogenMixture::standard_triplet();
        let sum: f64 = m.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_preserves_register_and_fingerprint() {
        let reg = SpinRegister::new(
            4.7,
            vec![spin_a()],
            Some(NitrogenMixture::standard_triplet()),
        )
        .unwrap();
        let text = reg.to_canonical_json();
        let back = SpinRegister::from_json(&text).unwrap();
        assert_eq!(reg, back);
        assert_eq!(reg.fingerprint(), back.fingerprint());
    }

    #[test]
    fn fingerprint_is_sensitive_to_coupling_changes() {
        let a = SpinRegister::new(4.7, vec![spin_a()], None).unwrap();
        let mut nuclei = vec![spin_a()];
        nuclei[0].coupling.a_par_hz += 1.0;
        let b = SpinRegister::new(4.7, nuclei, None).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn schema_tag_is_checked_on_load() {
        let reg = SpinRegister::bare(4.7).unwrap();
        let text = reg.to_canonical_json().replace("nvsim-register/1", "nvsim-register/9");
        let r = SpinRegister::from_json(&text);
        assert!(r.is_err(), "schema mismatch must be rejected");
    }
}
