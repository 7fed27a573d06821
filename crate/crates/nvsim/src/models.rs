//! Closed-form signal models.
//!
//! Everything here is an analytic expression with no internal state: the
//! multipulse NMR dip of a single nucleus and its product spectrum, the
//! inversion from measured frequencies back to hyperfine couplings, the
//! Ramsey/echo decay shapes, the statistically polarized proton-layer signal,
//! and the photon-correlation function. The exact unitary simulator in
//! [`crate::simulator`] is the ground truth these forms are validated against
//! (see [`SpectralForm`] for the one place where two variants coexist).
//!
//! Units follow the crate conventions: frequencies in Hz, times in seconds,
//! magnetic fields in mT, NV depth in nm. The photon-correlation model is the
//! single deliberate exception — it works in nanoseconds end to end, because
//! correlator hardware bins and the customary decay constants (~0.01–0.1 ns⁻¹)
//! both live there; seconds would force 1e8-scale parameters through the
//! fitting machinery for no benefit.

use crate::constants::STANDARD;
use crate::register::HyperfineCoupling;
use crate::trace::{AxisKind, MeasurementTrace};
use crate::{Error, Result};

/// Which algebraic variant of the multipulse dip formula to evaluate.
///
/// The dip amplitude and the composite-rotation cosine exist in two forms in
/// the wild. The [`SpectralForm::Validated`] form is the one that matches the
/// exact unitary simulator to better than 1e-6 (it is reproduced by composing
/// the conditional rotations by hand): a transverse (`a_perp`) numerator and a
/// `cos φ0 · cos φ1` product term. The [`SpectralForm::AsPrinted`] variant —
/// `a_par` in the numerator and `cos φ0 · sin φ1` in the cosine — circulates
/// in print but fails two basic checks: it does not go to "no dip" as
/// `a_perp → 0`, and it is unbounded near `cos(φ_r/2) = 0`. It is kept behind
/// this flag so the `oracle-compare` tool can quantify the difference; nothing
/// else should use it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralForm {
    /// Simulator-validated algebra (the default everywhere).
    Validated,
    /// Literal transcription kept for comparison reports only.
    AsPrinted,
}

impl SpectralForm {
    /// Stable lowercase name, used in artifact metadata and CLI flags.
    pub fn name(self) -> &'static str {
        match self {
            SpectralForm::Validated => "validated",
            SpectralForm::AsPrinted => "as-printed",
        }
    }

    /// Parse the [`Self::name`] representation.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "validated" => Ok(SpectralForm::Validated),
            "as-printed" => Ok(SpectralForm::AsPrinted),
            other => Err(Error::domain(format!(
                "unknown spectral form {other:?}; expected validated or as-printed"
            ))),
        }
    }
}

/// How a set of rotation angles was obtained; recorded so that downstream
/// consumers can tell a forward model evaluation from an inversion of
/// measured frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleContext {
    /// Computed from couplings: φ0 = π f0 τ, φ1 = π f1 τ, φ_r from the
    /// composite-rotation cosine.
    Forward,
    /// Computed from a measured nuclear Rabi frequency: φ_r = π − 2π f_r τ.
    Inversion,
}

/// The three angles that govern a multipulse resonance: the conditional
/// precession half-angles `φ0 = π f0 τ` and `φ1 = π f1 τ`, and the composite
/// rotation angle `φ_r` advanced per two-pulse unit of the decoupling train.
#[derive(Debug, Clone, Copy)]
pub struct RotationAngles {
    /// `π f0 τ` (rad), precession conditioned on the sensor in `m_S = 0`.
    pub phi0_rad: f64,
    /// `π f1 τ` (rad), precession conditioned on the sensor in `m_S = −1`.
    pub phi1_rad: f64,
    /// Composite rotation angle per two π pulses (rad).
    pub phi_r_rad: f64,
    /// Where the angles came from (forward model vs inversion).
    pub context: AngleContext,
    /// True when `|cos φ_r|` exceeded 1 by a floating-point sliver (≤ 1e-9)
    /// and was clamped. Anything worse is rejected as a domain error.
    pub clamped: bool,
}

/// Tolerance for `|cos φ_r|` marginally exceeding 1 through floating-point
/// rounding: within this, the value is clamped and flagged; beyond it, the
/// inputs are treated as inconsistent.
pub const COS_CLAMP_TOL: f64 = 1e-9;

/// Guard against a numerically singular inversion: `|sin φ0 · sin φ1|` below
/// this is rejected rather than amplified into garbage couplings.
const SIN_SINGULAR_TOL: f64 = 1e-12;

fn check_forward_inputs(f0_hz: f64, tau_s: f64) -> Result<()> {
    if !(f0_hz.is_finite() && f0_hz > 0.0) {
        return Err(Error::domain(format!(
            "bare precession frequency must be positive and finite, got {f0_hz} Hz"
        )));
    }
    if !(tau_s.is_finite() && tau_s > 0.0) {
        return Err(Error::domain(format!(
            "pulse spacing must be positive and finite, got {tau_s} s"
        )));
    }
    Ok(())
}

impl RotationAngles {
    /// Forward angles for a given coupling at pulse spacing `tau_s`, using
    /// the requested algebraic form for `cos φ_r`.
    ///
    /// `f1` is derived from the coupling and `f0` (it is not an independent
    /// input: an inconsistent caller-supplied `f1` could silently break the
    /// `P0 ∈ [0, 1]` guarantee of the dip formula).
    pub fn forward(
        coupling: &HyperfineCoupling,
        f0_hz: f64,
        tau_s: f64,
        form: SpectralForm,
    ) -> Result<Self> {
        check_forward_inputs(f0_hz, tau_s)?;
        let f1_hz = (f0_hz + coupling.a_par_hz).hypot(coupling.a_perp_hz);
        let phi0 = std::f64::consts::PI * f0_hz * tau_s;
        let phi1 = std::f64::consts::PI * f1_hz * tau_s;
        let cos_phi_r = match form {
            SpectralForm::Validated => {
                phi0.cos() * phi1.cos()
                    - ((f0_hz + coupling.a_par_hz) / f1_hz) * phi0.sin() * phi1.sin()
            }
            // Literal transcription: sin φ1 where the validated algebra has
            // cos φ1. Kept strictly for comparison reports.
            SpectralForm::AsPrinted => {
                phi0.cos() * phi1.sin()
                    - ((coupling.a_par_hz + f0_hz) / f1_hz) * phi0.sin() * phi1.sin()
            }
        };
        let (cos_phi_r, clamped) = clamp_cosine(cos_phi_r)?;
        Ok(RotationAngles {
            phi0_rad: phi0,
            phi1_rad: phi1,
            phi_r_rad: cos_phi_r.acos(),
            context: AngleContext::Forward,
            clamped,
        })
    }

    /// Angles for the inversion path, where `φ_r` comes from a measured
    /// nuclear Rabi frequency: `φ_r = π − 2π f_r τ`.
    pub fn inversion(f0_hz: f64, f1_hz: f64, f_r_hz: f64, tau_s: f64) -> Result<Self> {
        check_forward_inputs(f0_hz, tau_s)?;
        if !(f1_hz.is_finite() && f1_hz > 0.0) {
            return Err(Error::domain(format!(
                "conditional precession frequency must be positive and finite, got {f1_hz} Hz"
            )));
        }
        if !(f_r_hz.is_finite() && f_r_hz >= 0.0) {
            return Err(Error::domain(format!(
                "nuclear Rabi frequency must be nonnegative and finite, got {f_r_hz} Hz"
            )));
        }
        Ok(RotationAngles {
            phi0_rad: std::f64::consts::PI * f0_hz * tau_s,
            phi1_rad: std::f64::consts::PI * f1_hz * tau_s,
            phi_r_rad: std::f64::consts::PI - 2.0 * std::f64::consts::PI * f_r_hz * tau_s,
            context: AngleContext::Inversion,
            clamped: false,
        })
    }
}

/// Clamp a cosine that strayed outside [−1, 1] by at most [`COS_CLAMP_TOL`];
/// reject anything worse.
fn clamp_cosine(c: f64) -> Result<(f64, bool)> {
    if c.abs() <= 1.0 {
        Ok((c, false))
    } else if c.abs() <= 1.0 + COS_CLAMP_TOL {
        Ok((c.signum(), true))
    } else {
        Err(Error::domain(format!(
            "composite rotation cosine {c} lies outside [-1, 1]; the inputs are inconsistent"
        )))
    }
}

/// A single evaluation of the multipulse dip formula.
#[derive(Debug, Clone, Copy)]
pub struct DipValue {
    /// Probability of finding the sensor back in `m_S = 0`.
    pub p0: f64,
    /// True when a floating-point sliver outside the mathematically
    /// guaranteed range had to be clamped (cosine or probability).
    pub clamped: bool,
}

/// Sensor survival probability `P0` after an `n_pulses`-pulse decoupling
/// train at spacing `tau_s`, for one nucleus with the given coupling.
///
/// Validated form:
/// ```text
/// P0 = 1 − amp · sin²(N φ_r / 2)
/// amp = ( (a_perp / f1) · sin(φ0/2) · sin(φ1/2) / cos(φ_r/2) )²
/// cos φ_r = cos φ0 cos φ1 − ((f0 + a_par)/f1) · sin φ0 sin φ1
/// ```
/// with `φ0,1 = π f0,1 τ` and `f1 = hypot(f0 + a_par, a_perp)`. The result is
/// guaranteed in [0, 1] (clamped-and-flagged within 1e-9 of the boundary).
/// The [`SpectralForm::AsPrinted`] variant carries no such guarantee — it is
/// reported as-is so comparison tooling can see its failure modes.
///
/// The expression is exact for **even** pulse counts, where the train
/// decomposes into identical two-pulse unit cells (the state-vector
/// simulator confirms it to rounding). For odd counts the trailing segment
/// breaks the cell structure and the formula is only a leading-order
/// approximation, off at the scale of the modulation depth; single-pulse
/// (Hahn) physics belongs to the simulator, not this function.
pub fn single_nucleus_dip(
    coupling: &HyperfineCoupling,
    f0_hz: f64,
    tau_s: f64,
    n_pulses: u32,
    form: SpectralForm,
) -> Result<DipValue> {
    check_forward_inputs(f0_hz, tau_s)?;
    if n_pulses == 0 {
        return Ok(DipValue {
            p0: 1.0,
            clamped: false,
        });
    }
    let f1_hz = (f0_hz + coupling.a_par_hz).hypot(coupling.a_perp_hz);
    if f1_hz == 0.0 {
        // Degenerate: the conditional Hamiltonian in m_S = −1 vanishes, so
        // the nucleus cannot dephase the sensor at all.
        return Ok(DipValue {
            p0: 1.0,
            clamped: false,
        });
    }
    let angles = RotationAngles::forward(coupling, f0_hz, tau_s, form)?;
    let numerator = match form {
        SpectralForm::Validated => coupling.a_perp_hz / f1_hz,
        SpectralForm::AsPrinted => coupling.a_par_hz / f1_hz,
    };
    let half = 0.5 * angles.phi_r_rad;
    let m_x = numerator * (0.5 * angles.phi0_rad).sin() * (0.5 * angles.phi1_rad).sin()
        / half.cos();
    let amp = m_x * m_x;
    let p0 = 1.0 - amp * (0.5 * f64::from(n_pulses) * angles.phi_r_rad).sin().powi(2);
    match form {
        SpectralForm::Validated => {
            // The validated algebra keeps P0 in [0, 1] exactly; floating
            // point may stray by ulps near a deep resonance.
            if (-COS_CLAMP_TOL..=1.0 + COS_CLAMP_TOL).contains(&p0) {
                Ok(DipValue {
                    p0: p0.clamp(0.0, 1.0),
                    clamped: angles.clamped || p0 < 0.0 || p0 > 1.0,
                })
            } else if p0.is_finite() {
                Err(Error::numerical(format!(
                    "validated dip formula produced P0 = {p0} outside [0, 1] \
                     (a_par = {} Hz, a_perp = {} Hz, f0 = {f0_hz} Hz, tau = {tau_s} s, N = {n_pulses})",
                    coupling.a_par_hz, coupling.a_perp_hz
                )))
            } else {
                Err(Error::numerical(
                    "validated dip formula produced a non-finite P0".to_owned(),
                ))
            }
        }
        SpectralForm::AsPrinted => Ok(DipValue {
            p0,
            clamped: angles.clamped,
        }),
    }
}

/// Recover the hyperfine coupling from measured conditional precession
/// frequencies and a nuclear Rabi frequency:
///
/// ```text
/// a_par  = [ (cos φ0 cos φ1 − cos φ_r) / (sin φ0 sin φ1) ] · f1 − f0
/// a_perp = sqrt( f1² − (f0 + a_par)² )
/// ```
/// with `φ_r = π − 2π f_r τ`. Singular angles (`sin φ0 · sin φ1 ≈ 0`) are an
/// [`Error::InversionUndefined`]; a negative radicand means the three
/// frequencies cannot belong to one nucleus and is an
/// [`Error::InconsistentInversion`] carrying the radicand.
pub fn invert_hyperfine(
    f0_hz: f64,
    f1_hz: f64,
    f_r_hz: f64,
    tau_s: f64,
) -> Result<HyperfineCoupling> {
    let angles = RotationAngles::inversion(f0_hz, f1_hz, f_r_hz, tau_s)?;
    let s0 = angles.phi0_rad.sin();
    let s1 = angles.phi1_rad.sin();
    if (s0 * s1).abs() < SIN_SINGULAR_TOL {
        let which = if s0.abs() < s1.abs() { "φ0" } else { "φ1" };
        return Err(Error::InversionUndefined(format!(
            "sin φ0 · sin φ1 = {:.3e} at τ = {tau_s} s ({which} is at a multiple of π); \
             choose a different τ",
            s0 * s1
        )));
    }
    let a_par_hz = ((angles.phi0_rad.cos() * angles.phi1_rad.cos() - angles.phi_r_rad.cos())
        / (s0 * s1))
        * f1_hz
        - f0_hz;
    let radicand = f1_hz * f1_hz - (f0_hz + a_par_hz).powi(2);
    if radicand < 0.0 {
        return Err(Error::InconsistentInversion { radicand });
    }
    HyperfineCoupling::new(a_par_hz, radicand.sqrt())
}

/// Product spectrum of several nuclei with a common multipulse decay factor.
///
/// Per grid point τ, each nucleus contributes its [`single_nucleus_dip`]
/// value `P0_i`, combined as
///
/// ```text
/// P0(τ) = 1/2 + (1/2) · e^{−Nτ/T₂} · Π_i (2 P0_i − 1)
/// ```
///
/// so the no-signal baseline is 1 for any number of nuclei and a single
/// nucleus at `T₂ → ∞` reduces exactly to its own dip curve. (The variant
/// with unhalved `Π (P0_i − 1/2)` sometimes seen in print has a baseline of
/// `(1/2)^{n−1}` and is not a probability for n ≥ 2; under
/// [`SpectralForm::AsPrinted`] that literal product is evaluated anyway, for
/// comparison tooling only.)
///
/// The returned trace lives on the filter-frequency axis `(2τ)⁻¹` in Hz,
/// ascending; `t2_s` may be `f64::INFINITY` for a decay-free spectrum.
pub fn full_spectrum(
    couplings: &[HyperfineCoupling],
    f0_hz: f64,
    t2_s: f64,
    tau_grid_s: &[f64],
    n_pulses: u32,
    form: SpectralForm,
) -> Result<MeasurementTrace> {
    if tau_grid_s.is_empty() {
        return Err(Error::domain("τ grid must not be empty"));
    }
    if !(t2_s > 0.0) {
        return Err(Error::domain(format!(
            "decay constant must be positive (or infinite), got {t2_s} s"
        )));
    }
    let mut p0 = Vec::with_capacity(tau_grid_s.len());
    for &tau_s in tau_grid_s {
        let decay = (-(f64::from(n_pulses) * tau_s) / t2_s).exp();
        let value = match form {
            SpectralForm::Validated => {
                let mut product = 1.0;
                for c in couplings {
                    product *= 2.0 * single_nucleus_dip(c, f0_hz, tau_s, n_pulses, form)?.p0 - 1.0;
                }
                0.5 + 0.5 * decay * product
            }
            SpectralForm::AsPrinted => {
                let mut product = 1.0;
                for c in couplings {
                    product *= single_nucleus_dip(c, f0_hz, tau_s, n_pulses, form)?.p0 - 0.5;
                }
                0.5 + decay * product
            }
        };
        p0.push(value);
    }
    let mut trace = MeasurementTrace::new(AxisKind::TauSeconds, tau_grid_s.to_vec(), "p0", p0)?;
    trace.set_meta("model", "multipulse-product-spectrum");
    trace.set_meta("form", form.name());
    trace.set_meta("f0_hz", format!("{f0_hz}"));
    trace.set_meta("t2_s", format!("{t2_s}"));
    trace.set_meta("n_pulses", format!("{n_pulses}"));
    trace.set_meta("nuclei", format!("{}", couplings.len()));
    trace.to_filter_frequency_axis()
}

/// A statistically polarized proton layer above a shallow sensor.
///
/// The layer is characterized by its number density and the sensor depth;
/// the rms coupling field follows from those two via [`b_rms_mt`]. The
/// detection sequence contributes the pulse count `n_pulses`; the proton
/// Larmor frequency `f_h_hz` sets where the resonance sits.
#[derive(Debug, Clone, Copy)]
pub struct ProtonLayerModel {
    /// Proton number density ρ (m⁻³).
    pub density_per_m3: f64,
    /// Sensor depth below the surface (nm).
    pub depth_nm: f64,
    /// Proton Larmor frequency (Hz), `γ_H · B0`.
    pub f_h_hz: f64,
    /// Number of π pulses in the decoupling train.
    pub n_pulses: u32,
}

impl ProtonLayerModel {
    /// Validate and build. Density, depth and Larmor frequency must be
    /// positive and finite; the train must contain at least one pulse.
    pub fn new(density_per_m3: f64, depth_nm: f64, f_h_hz: f64, n_pulses: u32) -> Result<Self> {
        if !(density_per_m3.is_finite() && density_per_m3 > 0.0) {
            return Err(Error::domain(format!(
                "proton density must be positive and finite, got {density_per_m3} m^-3"
            )));
        }
        if !(depth_nm.is_finite() && depth_nm > 0.0) {
            return Err(Error::domain(format!(
                "sensor depth must be positive and finite, got {depth_nm} nm"
            )));
        }
        if !(f_h_hz.is_finite() && f_h_hz > 0.0) {
            return Err(Error::domain(format!(
                "proton Larmor frequency must be positive and finite, got {f_h_hz} Hz"
            )));
        }
        if n_pulses == 0 {
            return Err(Error::domain("the detection train needs at least one π pulse"));
        }
        Ok(ProtonLayerModel {
            density_per_m3,
            depth_nm,
            f_h_hz,
            n_pulses,
        })
    }

    /// The rms coupling field of this layer at the sensor (mT).
    pub fn b_rms_mt(&self) -> f64 {
        b_rms_mt(self.density_per_m3, self.depth_nm)
    }

    /// Model contrast at one pulse spacing. Caller must keep `tau_s > 0`
    /// (enforced with an error in [`proton_signal`]; plain math here so the
    /// function is directly usable as a fit model).
    pub fn contrast_at(&self, tau_s: f64) -> f64 {
        let n_tau = f64::from(self.n_pulses) * tau_s;
        let phase = STANDARD.gamma_e_hz_per_mt * self.b_rms_mt() * n_tau;
        let detune_hz = self.f_h_hz - 1.0 / (2.0 * tau_s);
        (-8.0 * phase * phase * filter_response(n_tau, detune_hz)).exp()
    }
}

/// Root-mean-square magnetic field (mT) that a half-space of protons at
/// density `density_per_m3` produces at a sensor `depth_nm` below the
/// surface:
///
/// ```text
/// B_rms = (μ0/4π) · h · γ_H · sqrt( 5πρ / (96 d³) )
/// ```
///
/// with `γ_H` per tesla and `d` in meters; the prefactor `h γ_H` is the
/// proton magnetic moment expressed through Planck's constant.
pub fn b_rms_mt(density_per_m3: f64, depth_nm: f64) -> f64 {
    let d_m = depth_nm * 1e-9;
    let gamma_h_hz_per_t = STANDARD.gamma_h1_hz_per_mt * 1e3;
    let b_t = STANDARD.mu0_over_4pi
        * STANDARD.planck_h
        * gamma_h_hz_per_t
        * (5.0 * std::f64::consts::PI * density_per_m3 / (96.0 * d_m.powi(3))).sqrt();
    b_t * 1e3
}

/// The normalized band-pass response of an `N`-pulse train of total length
/// `n_tau_s` to a tone detuned by `detune_hz` from the filter center:
/// `sinc²(π · Nτ · Δf)` with the unnormalized `sinc(x) = sin(x)/x`.
///
/// Even in `detune_hz` by construction; equals 1 at zero detuning.
pub fn filter_response(n_tau_s: f64, detune_hz: f64) -> f64 {
    let x = std::f64::consts::PI * n_tau_s * detune_hz;
    let s = if x == 0.0 { 1.0 } else { x.sin() / x };
    s * s
}

/// Proton-layer signal `C(τ)` over a τ grid:
///
/// ```text
/// C(τ) = exp[ −8 (γ_e B_rms Nτ)² · sinc²( π Nτ (f_h − 1/(2τ)) ) ]
/// ```
///
/// The minimum sits at `τ = 1/(2 f_h)` where the train filter is centered on
/// the proton Larmor line. τ = 0 is excluded (the filter frequency diverges).
pub fn proton_signal(model: &ProtonLayerModel, tau_grid_s: &[f64]) -> Result<MeasurementTrace> {
    if tau_grid_s.is_empty() {
        return Err(Error::domain("τ grid must not be empty"));
    }
    for &tau in tau_grid_s {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::domain(format!(
                "proton signal needs τ > 0, got {tau} s"
            )));
        }
    }
    let c: Vec<f64> = tau_grid_s.iter().map(|&t| model.contrast_at(t)).collect();
    let mut trace = MeasurementTrace::new(AxisKind::TauSeconds, tau_grid_s.to_vec(), "contrast", c)?;
    trace.set_meta("model", "proton-layer");
    trace.set_meta("density_per_m3", format!("{}", model.density_per_m3));
    trace.set_meta("depth_nm", format!("{}", model.depth_nm));
    trace.set_meta("f_h_hz", format!("{}", model.f_h_hz));
    trace.set_meta("n_pulses", format!("{}", model.n_pulses));
    trace.set_meta("b_rms_mt", format!("{}", model.b_rms_mt()));
    Ok(trace)
}

/// Ramsey fringe with a stretched-exponential envelope:
///
/// ```text
/// P0(τ) = 1/2 − e^{−(τ/T₂*)^p} · ( α0 + α1 · cos(2π α2 τ + α3) )
/// ```
///
/// `alpha = [α0, α1, α2, α3]` with `α2` in Hz and `α3` in radians. Pure math
/// (no validation): callers keep `τ ≥ 0`, `t2_star_s > 0`, `p > 0`; the
/// function is used directly as a fit model.
pub fn ramsey_model(tau_s: f64, t2_star_s: f64, p: f64, alpha: [f64; 4]) -> f64 {
    let envelope = (-(tau_s / t2_star_s).powf(p)).exp();
    let fringe = alpha[0]
        + alpha[1] * (2.0 * std::f64::consts::PI * alpha[2] * tau_s + alpha[3]).cos();
    0.5 - envelope * fringe
}

/// Echo decay with a stretched exponent:
///
/// ```text
/// P0(τ) = 1/2 · ( 1 + e^{−(2τ/T₂)^p} )
/// ```
///
/// `tau_s` here is the half-interval of the echo (π/2 – τ – π – τ – π/2), so
/// the decay argument is the full evolution time 2τ. Note the timed plans in
/// [`crate::sequences`] use the train convention where their `tau_s` is the
/// full window; the two meet at `plan τ = 2 · model τ`.
pub fn echo_model(tau_s: f64, t2_s: f64, p: f64) -> f64 {
    0.5 * (1.0 + (-(2.0 * tau_s / t2_s).powf(p)).exp())
}

/// Second-order photon correlation of a driven three-level emitter:
///
/// ```text
/// g²(τ_d) = 1 − ζη e^{−γ1 |τ_d|} + ζ(η−1) e^{−γ2 |τ_d|}
/// ```
///
/// Nanosecond units throughout (see the module docs): `delay_ns` is the
/// detector delay, the rates are per ns. `g²(0) = 1 − ζ` exactly; the
/// `η = 1, γ2 = 0` limit is the pure two-level antibunching dip
/// `1 − ζ e^{−γ1 |τ_d|}`.
pub fn g2_model(delay_ns: f64, zeta: f64, eta: f64, gamma1_per_ns: f64, gamma2_per_ns: f64) -> f64 {
    let t = delay_ns.abs();
    1.0 - zeta * eta * (-gamma1_per_ns * t).exp()
        + zeta * (eta - 1.0) * (-gamma2_per_ns * t).exp()
}
