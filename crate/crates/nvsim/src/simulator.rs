//! State-vector simulation of the sensor–nuclei register, driven two-level
//! evolution under shaped pulses, decoherence envelopes, and photon-counting
//! readout.
//!
//! # Ideal register evolution
//!
//! [`evolve_ideal`] runs a [`SequencePlan`] on a [`SpinRegister`] with
//! instantaneous (ideal) pulses: sensor rotations are exact SU(2) rotations,
//! and every free-evolution interval applies the closed-form propagator of
//! each nucleus's conditional Hamiltonian — no numerical integration, so the
//! only error is floating-point rounding. The nuclear bath starts maximally
//! mixed, handled exactly by averaging over the 2ⁿ computational basis
//! states (the outcome is linear in the initial density matrix). The host
//! nitrogen, when present, contributes as a weighted average over classical
//! sensor detunings.
//!
//! Readout orientation: decoupling and correlation sequences are reported so
//! that the signal-free baseline is bright (`P0 → 1`). The natural outcome
//! of an N-π train between two +x π/2 pulses is dark for every standard
//! phase pattern, so the simulator runs the same plan on a bare register and
//! flips the result when that reference lands below ½. Ramsey and Hahn keep
//! their natural orientation.
//!
//! # Units
//!
//! Frequencies in Hz, times in seconds, fields in mT. Propagators are
//! `exp(−2πi·H·t)` with `H` in Hz.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::physics::build_conditional_hamiltonians;
use crate::register::{NitrogenMixture, SpinRegister};
use crate::sequences::{
    build_sequence, phase_cycle_pair, Angle, Axis, SequencePlan, SymbolicItem,
};
use crate::trace::{AxisKind, MeasurementTrace};
use crate::waveform::EnvelopeSpec;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// SU(2) building blocks
// ---------------------------------------------------------------------------

/// Closed-form propagator `exp(−2πi·H·t)` for `H = (hz·σz + hx·σx)/2` (Hz),
/// row-major `[u00, u01, u10, u11]`.
fn su2_free(hz: f64, hx: f64, t_s: f64) -> [Complex64; 4] {
    let v = hz.hypot(hx);
    if v == 0.0 || t_s == 0.0 {
        return [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
        ];
    }
    let theta = std::f64::consts::PI * v * t_s;
    let c = theta.cos();
    let s = theta.sin() / v;
    [
        Complex64::new(c, -s * hz),
        Complex64::new(0.0, -s * hx),
        Complex64::new(0.0, -s * hx),
        Complex64::new(c, s * hz),
    ]
}

// ---------------------------------------------------------------------------
// Register state
// ---------------------------------------------------------------------------

/// A pure state of the sensor ⊗ nuclei register.
///
/// Basis ordering: amplitude index `i = s·2ⁿ + k` where `s ∈ {0, 1}` is the
/// sensor state (0 = m_S 0, 1 = m_S −1) and bit `j` of `k` is the σz state
/// of nucleus `j` (bit 0 cleared = its "up" basis state). With n ≤ 5 nuclei
/// the vector never exceeds 64 amplitudes, so everything stays dense.
#[derive(Debug, Clone)]
pub struct RegisterState {
    amps: Vec<Complex64>,
    n_nuclei: usize,
}

impl RegisterState {
    /// Sensor in `m_S = 0`, nuclei in the computational basis state
    /// `nuclear_basis_index` (bit `j` = state of nucleus `j`).
    pub fn new(n_nuclei: usize, nuclear_basis_index: usize) -> Result<Self> {
        let dim_n = 1usize << n_nuclei;
        if nuclear_basis_index >= dim_n {
            return Err(Error::domain(format!(
                "nuclear basis index {nuclear_basis_index} out of range for {n_nuclei} nuclei"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 2 * dim_n];
        amps[nuclear_basis_index] = Complex64::new(1.0, 0.0);
        Ok(RegisterState { amps, n_nuclei })
    }

    /// Number of nuclear spins.
    pub fn n_nuclei(&self) -> usize {
        self.n_nuclei
    }

    /// Population of the sensor `m_S = 0` sector.
    pub fn p0(&self) -> f64 {
        let dim_n = 1usize << self.n_nuclei;
        self.amps[..dim_n].iter().map(|a| a.norm_sqr()).sum()
    }

    /// Euclidean norm of the state vector (1 up to rounding; evolution is
    /// built from exact unitaries).
    pub fn norm(&self) -> f64 {
        self.amps
            .iter()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Apply a 2×2 gate to nucleus `bit` within one sensor sector.
    fn apply_nuclear_gate(&mut self, sector: usize, bit: usize, u: &[Complex64; 4]) {
        let dim_n = 1usize << self.n_nuclei;
        let base = sector * dim_n;
        let mask = 1usize << bit;
        for k in 0..dim_n {
            if k & mask != 0 {
                continue;
            }
            let i0 = base + k;
            let i1 = base + k + mask;
            let a = self.amps[i0];
            let b = self.amps[i1];
            self.amps[i0] = u[0] * a + u[1] * b;
            self.amps[i1] = u[2] * a + u[3] * b;
        }
    }

    /// Multiply every amplitude of one sensor sector by `phase`.
    fn apply_sector_phase(&mut self, sector: usize, phase: Complex64) {
        let dim_n = 1usize << self.n_nuclei;
        for a in &mut self.amps[sector * dim_n..(sector + 1) * dim_n] {
            *a *= phase;
        }
    }

    /// Ideal sensor rotation by `angle_rad` about the equatorial axis at
    /// `axis_phase_rad` (0 = +x, π/2 = +y):
    ///
    /// ```text
    /// R = [ cos(α/2)              −i·sin(α/2)·e^{−iφ} ]
    ///     [ −i·sin(α/2)·e^{+iφ}    cos(α/2)           ]
    /// ```
    fn rotate_sensor(&mut self, angle_rad: f64, axis_phase_rad: f64) {
        let c = Complex64::new((0.5 * angle_rad).cos(), 0.0);
        let s = (0.5 * angle_rad).sin();
        let minus_i = Complex64::new(0.0, -1.0);
        let r01 = minus_i * s * Complex64::from_polar(1.0, -axis_phase_rad);
        let r10 = minus_i * s * Complex64::from_polar(1.0, axis_phase_rad);
        let dim_n = 1usize << self.n_nuclei;
        for k in 0..dim_n {
            let a = self.amps[k];
            let b = self.amps[k + dim_n];
            self.amps[k] = c * a + r01 * b;
            self.amps[k + dim_n] = r10 * a + c * b;
        }
    }

    /// Free evolution for `t_s` seconds: the conditional propagator of each
    /// nucleus in each sensor sector, plus the sensor detuning phase on the
    /// m_S = −1 sector.
    fn free_evolve(&mut self, pairs: &[HamiltonianPair], detuning_hz: f64, t_s: f64) {
        if t_s == 0.0 {
            return;
        }
        for (j, pair) in pairs.iter().enumerate() {
            let u0 = su2_free(pair.h0_z, pair.h0_x, t_s);
            let u1 = su2_free(pair.h1_z, pair.h1_x, t_s);
            self.apply_nuclear_gate(0, j, &u0);
            self.apply_nuclear_gate(1, j, &u1);
        }
        if detuning_hz != 0.0 {
            let phase =
                Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * detuning_hz * t_s);
            self.apply_sector_phase(1, phase);
        }
    }
}

/// The two conditional Hamiltonians of one nucleus as `(σz, σx)/2`
/// coefficients in Hz, extracted from the physics module's matrices.
#[derive(Debug, Clone, Copy)]
struct HamiltonianPair {
    h0_z: f64,
    h0_x: f64,
    h1_z: f64,
    h1_x: f64,
}

fn hamiltonian_pairs(register: &SpinRegister) -> Result<Vec<HamiltonianPair>> {
    register
        .nuclei
        .iter()
        .map(|nuc| {
            let (h0, h1) = build_conditional_hamiltonians(nuc, register.b0_mt)?;
            Ok(HamiltonianPair {
                h0_z: 2.0 * h0[(0, 0)],
                h0_x: 2.0 * h0[(0, 1)],
                h1_z: 2.0 * h1[(0, 0)],
                h1_x: 2.0 * h1[(0, 1)],
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Ideal-pulse schedules
// ---------------------------------------------------------------------------

/// One step of an ideal-pulse schedule: an instantaneous rotation or a free
/// wait.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Step {
    Rotate { axis: Axis, angle: Angle },
    Wait { duration_s: f64 },
}

/// Expand a plan into rotations and waits under the centre-to-centre τ
/// convention. The gap between two pulses follows from their angles alone —
/// π/2→π and π→π/2 are τ/2, π→π is τ, π/2→π/2 is the Ramsey interval τ —
/// and the storage gap of a correlation plan contributes its full interval
/// with no extra pair gap. This reproduces the absolute pulse centres of
/// [`crate::sequences::expand_timing`] exactly (a test asserts it).
fn ideal_schedule(plan: &SequencePlan) -> Result<Vec<Step>> {
    let items = build_sequence(plan)?;
    let tau = plan.tau_s;
    let mut steps = Vec::with_capacity(2 * items.len());
    let mut prev: Option<SymbolicItem> = None;
    for &item in &items {
        match item {
            SymbolicItem::Pulse { axis, angle } => {
                if let Some(prev_item) = prev {
                    let gap = match prev_item {
                        SymbolicItem::StorageGap => 0.0,
                        SymbolicItem::Pulse {
                            angle: prev_angle, ..
                        } => match (prev_angle, angle) {
                            (Angle::PiHalf, Angle::Pi) => tau / 2.0,
                            (Angle::Pi, Angle::Pi) => tau,
                            (Angle::Pi, Angle::PiHalf) => tau / 2.0,
                            (Angle::PiHalf, Angle::PiHalf) => tau,
                        },
                    };
                    if gap > 0.0 {
                        steps.push(Step::Wait { duration_s: gap });
                    }
                }
                steps.push(Step::Rotate { axis, angle });
            }
            SymbolicItem::StorageGap => {
                let storage = plan
                    .storage_s()
                    .ok_or_else(|| Error::domain("storage gap outside a correlation plan"))?;
                if storage > 0.0 {
                    steps.push(Step::Wait {
                        duration_s: storage,
                    });
                }
            }
        }
        prev = Some(item);
    }
    Ok(steps)
}

fn run_schedule(
    state: &mut RegisterState,
    schedule: &[Step],
    pairs: &[HamiltonianPair],
    detuning_hz: f64,
) {
    for step in schedule {
        match *step {
            Step::Rotate { axis, angle } => {
                state.rotate_sensor(angle.radians(), axis.phase_rad());
            }
            Step::Wait { duration_s } => state.free_evolve(pairs, detuning_hz, duration_s),
        }
    }
}

/// `P0` of one readout branch: maximally mixed nuclei (exact basis average)
/// and the weighted nitrogen detuning branches.
fn run_branch(
    schedule: &[Step],
    pairs: &[HamiltonianPair],
    branches: &[(f64, f64)],
) -> Result<f64> {
    let n = pairs.len();
    let dim_n = 1usize << n;
    let mut p0 = 0.0;
    for &(detuning_hz, weight) in branches {
        if weight == 0.0 {
            continue;
        }
        for k0 in 0..dim_n {
            let mut state = RegisterState::new(n, k0)?;
            run_schedule(&mut state, schedule, pairs, detuning_hz);
            p0 += weight * state.p0() / dim_n as f64;
        }
    }
    Ok(p0)
}

/// The raw (orientation-free) plan outcome, phase cycling included.
fn run_plan(register: &SpinRegister, plan: &SequencePlan) -> Result<f64> {
    let plan = plan.clone().validated()?;
    let pairs = hamiltonian_pairs(register)?;
    let branches: Vec<(f64, f64)> = match &register.nitrogen {
        Some(mixture) => mixture.branches().collect(),
        None => vec![(0.0, 1.0)],
    };
    if plan.phase_cycle {
        let (plus, minus) = phase_cycle_pair(&plan)?;
        let p_plus = run_branch(&ideal_schedule(&plus)?, &pairs, &branches)?;
        let p_minus = run_branch(&ideal_schedule(&minus)?, &pairs, &branches)?;
        Ok(crate::sequences::combine_phase_cycled(p_plus, p_minus))
    } else {
        run_branch(&ideal_schedule(&plan)?, &pairs, &branches)
    }
}

/// Run a plan on a register with ideal pulses and return `P0`.
///
/// Decoupling and correlation outcomes are oriented so that the signal-free
/// baseline is bright: the same plan is evaluated on a bare register (no
/// nuclei, no host mixture, same field), and when that reference lands below
/// ½ the result is reported as `1 − P0`. See the module docs.
pub fn evolve_ideal(register: &SpinRegister, plan: &SequencePlan) -> Result<f64> {
    let raw = run_plan(register, plan)?;
    if plan.kind.is_decoupling() || plan.kind.is_correlation() {
        let bare = SpinRegister::bare(register.b0_mt)?;
        let reference = run_plan(&bare, plan)?;
        if reference < 0.5 {
            return Ok(1.0 - raw);
        }
    }
    Ok(raw)
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Which plan knob a sweep varies. Count values are carried as f64 for the
/// trace axis but must be positive whole numbers.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepSpec {
    /// Vary the pulse spacing τ (seconds).
    Tau(Vec<f64>),
    /// Vary the π count N at fixed τ.
    PulseCount(Vec<f64>),
    /// Vary the storage interval t_corr (seconds); correlation plans only.
    CorrelationTime(Vec<f64>),
    /// Vary the inner π count M; correlation-multipulse plans only.
    InnerPulseCount(Vec<f64>),
}

impl SweepSpec {
    fn axis_kind(&self) -> AxisKind {
        match self {
            SweepSpec::Tau(_) => AxisKind::TauSeconds,
            SweepSpec::PulseCount(_) => AxisKind::PulseCount,
            SweepSpec::CorrelationTime(_) => AxisKind::CorrelationTime,
            SweepSpec::InnerPulseCount(_) => AxisKind::InnerPulseCount,
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            SweepSpec::Tau(v)
            | SweepSpec::PulseCount(v)
            | SweepSpec::CorrelationTime(v)
            | SweepSpec::InnerPulseCount(v) => v,
        }
    }
}

fn as_count(value: f64, what: &str) -> Result<u32> {
    if value.is_finite() && value > 0.0 && value.fract() == 0.0 && value <= f64::from(u32::MAX) {
        Ok(value as u32)
    } else {
        Err(Error::domain(format!(
            "{what} values must be positive whole numbers, got {value}"
        )))
    }
}

/// Build the per-point plan of a sweep.
fn plan_at(base: &SequencePlan, spec: &SweepSpec, value: f64) -> Result<SequencePlan> {
    let mut plan = base.clone();
    match spec {
        SweepSpec::Tau(_) => plan.tau_s = value,
        SweepSpec::PulseCount(_) => plan.n_pulses = as_count(value, "pulse-count")?,
        SweepSpec::CorrelationTime(_) => plan.t_corr_s = Some(value),
        SweepSpec::InnerPulseCount(_) => {
            plan.inner_m = Some(as_count(value, "inner-pulse-count")?)
        }
    }
    plan.validated()
}

/// Sweep one plan knob across a register, in parallel, and collect the `P0`
/// curve with full provenance metadata (register fingerprint, kind, fixed
/// knobs). Every per-point plan is re-validated, so an N grid that breaks
/// the block-size rule or a τ that turns nonpositive fails loudly with the
/// offending value.
pub fn simulate_sweep(
    register: &SpinRegister,
    base: &SequencePlan,
    spec: &SweepSpec,
) -> Result<MeasurementTrace> {
    let values = spec.values();
    if values.is_empty() {
        return Err(Error::domain("sweep needs at least one point"));
    }
    let p0: Result<Vec<f64>> = values
        .par_iter()
        .map(|&v| evolve_ideal(register, &plan_at(base, spec, v)?))
        .collect();
    let mut trace = MeasurementTrace::new(spec.axis_kind(), values.to_vec(), "p0", p0?)?;
    trace.set_meta("register", format!("{:016x}", register.fingerprint()));
    trace.set_meta("kind", base.kind.name());
    trace.set_meta("b0_mt", register.b0_mt);
    trace.set_meta("phase_cycle", base.phase_cycle);
    match spec {
        SweepSpec::Tau(_) => {
            trace.set_meta("n_pulses", base.n_pulses);
        }
        SweepSpec::PulseCount(_) => {
            trace.set_meta("tau_s", base.tau_s);
        }
        SweepSpec::CorrelationTime(_) | SweepSpec::InnerPulseCount(_) => {
            trace.set_meta("tau_s", base.tau_s);
            trace.set_meta("n_pulses", base.n_pulses);
        }
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// Driven two-level evolution
// ---------------------------------------------------------------------------

/// Result of integrating a shaped drive on the bare sensor transition.
#[derive(Debug, Clone, Copy)]
pub struct DrivenOutcome {
    /// Probability of remaining in `m_S = 0`.
    pub p0: f64,
    /// Transfer probability into `m_S = −1` (`1 − p0` for a pure state).
    pub p1: f64,
    /// Number of integration slices of the accepted pass.
    pub slices: usize,
}

/// Rotating-frame Hamiltonian step: `H = [[0, Ω/2], [Ω/2, Δ]]` in Hz,
/// applied via the exact constant-H propagator over one slice.
fn driven_step(c: &mut [Complex64; 2], rabi_hz: f64, detuning_hz: f64, dt_s: f64) {
    // H = c0·I + cx·σx + cz·σz with c0 = Δ/2, cx = Ω/2, cz = −Δ/2.
    let c0 = 0.5 * detuning_hz;
    let cx = 0.5 * rabi_hz;
    let cz = -0.5 * detuning_hz;
    let v = cx.hypot(cz);
    let two_pi = 2.0 * std::f64::consts::PI;
    let global = Complex64::from_polar(1.0, -two_pi * c0 * dt_s);
    if v == 0.0 {
        c[0] *= global;
        c[1] *= global;
        return;
    }
    let theta = two_pi * v * dt_s;
    let cos = theta.cos();
    let s = theta.sin() / v;
    let u00 = Complex64::new(cos, -s * cz);
    let u01 = Complex64::new(0.0, -s * cx);
    let u11 = Complex64::new(cos, s * cz);
    let (a, b) = (c[0], c[1]);
    c[0] = global * (u00 * a + u01 * b);
    c[1] = global * (u01 * a + u11 * b);
}

fn driven_pass(
    envelope: &EnvelopeSpec,
    peak_rabi_hz: f64,
    static_detuning_hz: f64,
    slices: usize,
) -> [Complex64; 2] {
    let mut c = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
    let dt = envelope.duration_s / slices as f64;
    for k in 0..slices {
        let t_mid = (k as f64 + 0.5) * dt;
        let rabi = peak_rabi_hz * envelope.amplitude(t_mid);
        let detuning = static_detuning_hz + envelope.instantaneous_detuning(t_mid);
        driven_step(&mut c, rabi, detuning, dt);
    }
    c
}

/// Convergence target for the adaptive slice doubling.
const DRIVEN_TOL: f64 = 1e-6;
/// Slice-count ceiling; exceeding it means the drive parameters are far
/// outside the regime this integrator is meant for.
const DRIVEN_MAX_SLICES: usize = 1 << 20;

/// Integrate a shaped, optionally chirped drive on the bare two-level
/// sensor, starting from `m_S = 0`.
///
/// The envelope supplies the amplitude profile and (for WURST shapes) the
/// linear chirp; `peak_rabi_hz` scales the amplitude; `static_detuning_hz`
/// is the drive offset from the sensor transition. Midpoint-sampled
/// piecewise-constant propagation with slice doubling until `P0` moves by
/// less than 1e-6 — exact for a constant drive, second-order for shaped
/// ones.
pub fn evolve_driven(
    envelope: &EnvelopeSpec,
    peak_rabi_hz: f64,
    static_detuning_hz: f64,
) -> Result<DrivenOutcome> {
    if !(peak_rabi_hz.is_finite() && peak_rabi_hz >= 0.0) {
        return Err(Error::domain(format!(
            "peak Rabi frequency must be nonnegative and finite, got {peak_rabi_hz} Hz"
        )));
    }
    if !static_detuning_hz.is_finite() {
        return Err(Error::domain("drive detuning must be finite"));
    }
    let mut slices = 256usize;
    let mut prev = driven_pass(envelope, peak_rabi_hz, static_detuning_hz, slices);
    loop {
        let next_slices = slices * 2;
        let next = driven_pass(envelope, peak_rabi_hz, static_detuning_hz, next_slices);
        let moved = (next[0].norm_sqr() - prev[0].norm_sqr()).abs();
        if moved < DRIVEN_TOL {
            return Ok(DrivenOutcome {
                p0: next[0].norm_sqr(),
                p1: next[1].norm_sqr(),
                slices: next_slices,
            });
        }
        if next_slices >= DRIVEN_MAX_SLICES {
            return Err(Error::numerical(format!(
                "driven evolution did not converge below {DRIVEN_TOL} within \
                 {DRIVEN_MAX_SLICES} slices (Ω = {peak_rabi_hz} Hz, Δ = {static_detuning_hz} Hz, \
                 T = {} s)",
                envelope.duration_s
            )));
        }
        slices = next_slices;
        prev = next;
    }
}

/// Pulsed resonance profile: apply one shaped pulse at each drive detuning
/// and record `P0`, averaged over the host-nitrogen branches when a mixture
/// is given (each branch shifts the sensor resonance by its detuning).
pub fn pulsed_odmr_profile(
    mixture: Option<&NitrogenMixture>,
    envelope: &EnvelopeSpec,
    peak_rabi_hz: f64,
    detuning_grid_hz: &[f64],
) -> Result<MeasurementTrace> {
    if detuning_grid_hz.is_empty() {
        return Err(Error::domain("detuning grid must not be empty"));
    }
    let branches: Vec<(f64, f64)> = match mixture {
        Some(m) => m.branches().collect(),
        None => vec![(0.0, 1.0)],
    };
    let p0: Result<Vec<f64>> = detuning_grid_hz
        .par_iter()
        .map(|&delta| {
            let mut p = 0.0;
            for &(branch_hz, weight) in &branches {
                if weight == 0.0 {
                    continue;
                }
                p += weight * evolve_driven(envelope, peak_rabi_hz, delta - branch_hz)?.p0;
            }
            Ok(p)
        })
        .collect();
    let mut trace =
        MeasurementTrace::new(AxisKind::DetuningHz, detuning_grid_hz.to_vec(), "p0", p0?)?;
    trace.set_meta("shape", envelope.shape.name());
    trace.set_meta("pulse_duration_s", envelope.duration_s);
    trace.set_meta("rabi_hz", peak_rabi_hz);
    Ok(trace)
}

// ---------------------------------------------------------------------------
// Decoherence envelopes
// ---------------------------------------------------------------------------

/// Which total-time argument a decay envelope uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeKind {
    /// Free-precession decay: total time is the Ramsey interval τ.
    Ramsey,
    /// Echo decay: total time is the full coherence window (the plan τ of a
    /// Hahn sequence).
    Echo,
    /// Train decay: total time is N·τ.
    Multipulse,
}

impl EnvelopeKind {
    /// Stable name for metadata and CLI flags.
    pub fn name(self) -> &'static str {
        match self {
            EnvelopeKind::Ramsey => "ramsey",
            EnvelopeKind::Echo => "echo",
            EnvelopeKind::Multipulse => "multipulse",
        }
    }

    /// Parse the [`Self::name`] representation.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ramsey" => Ok(EnvelopeKind::Ramsey),
            "echo" => Ok(EnvelopeKind::Echo),
            "multipulse" => Ok(EnvelopeKind::Multipulse),
            other => Err(Error::domain(format!(
                "unknown envelope kind {other:?}; expected ramsey, echo, or multipulse"
            ))),
        }
    }
}

/// A stretched-exponential coherence decay `exp(−(t/T)^p)` attached to a
/// trace axis.
///
/// The time argument `t` is the **total** coherent evolution time, resolved
/// from the trace axis and metadata: a `time_s` axis is used directly, a
/// `tau_s` axis is `τ` for Ramsey/echo kinds and `N·τ` for multipulse (with
/// `N` from the trace's `n_pulses` metadata), a `pulse_count` axis is `N·τ`
/// (with `τ` from `tau_s` metadata), and a correlation-time axis decays in
/// the storage interval directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoherenceEnvelope {
    pub kind: EnvelopeKind,
    /// Time constant T (seconds); `f64::INFINITY` for a decay-free envelope.
    pub time_constant_s: f64,
    /// Stretch exponent p.
    pub stretch_p: f64,
}

impl DecoherenceEnvelope {
    /// Build an envelope; T must be positive (infinity allowed), p positive
    /// and finite.
    pub fn new(kind: EnvelopeKind, time_constant_s: f64, stretch_p: f64) -> Result<Self> {
        if !(time_constant_s > 0.0) {
            return Err(Error::domain(format!(
                "envelope time constant must be positive, got {time_constant_s} s"
            )));
        }
        if !(stretch_p.is_finite() && stretch_p > 0.0) {
            return Err(Error::domain(format!(
                "stretch exponent must be positive and finite, got {stretch_p}"
            )));
        }
        Ok(DecoherenceEnvelope {
            kind,
            time_constant_s,
            stretch_p,
        })
    }

    /// Decay factor at a given total evolution time.
    pub fn factor(&self, total_time_s: f64) -> f64 {
        if total_time_s <= 0.0 {
            return 1.0;
        }
        (-(total_time_s / self.time_constant_s).powf(self.stretch_p)).exp()
    }

    /// Decay factor at point `i` of a trace, resolving the total time from
    /// the axis and metadata (see the type docs).
    pub fn factor_at(&self, trace: &MeasurementTrace, i: usize) -> Result<f64> {
        let x = trace.x[i];
        let meta_num = |key: &str| -> Result<f64> {
            trace
                .metadata
                .get(key)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| {
                    Error::domain(format!(
                        "envelope resolution needs numeric {key:?} metadata on a {} trace",
                        trace.axis.name()
                    ))
                })
        };
        let total = match trace.axis {
            AxisKind::TimeSeconds | AxisKind::CorrelationTime => x,
            AxisKind::TauSeconds => match self.kind {
                EnvelopeKind::Ramsey | EnvelopeKind::Echo => x,
                EnvelopeKind::Multipulse => meta_num("n_pulses")? * x,
            },
            AxisKind::PulseCount => meta_num("tau_s")? * x,
            other => {
                return Err(Error::domain(format!(
                    "no envelope time argument for a {} axis",
                    other.name()
                )))
            }
        };
        Ok(self.factor(total))
    }

    /// One-line description for metadata.
    pub fn describe(&self) -> String {
        format!(
            "{} time_constant_s={} stretch_p={}",
            self.kind.name(),
            self.time_constant_s,
            self.stretch_p
        )
    }
}

/// Apply a decay envelope to a `P0` trace: contrast shrinks toward the
/// fully mixed level, `y ↦ ½ + E·(y − ½)`, leaving any extra columns
/// untouched. The inverse operation (for measured data) is
/// [`crate::estimation::spectrum::normalize_by_envelope`].
pub fn apply_envelope(
    trace: &MeasurementTrace,
    envelope: &DecoherenceEnvelope,
) -> Result<MeasurementTrace> {
    let mut out = trace.clone();
    for i in 0..out.len() {
        let factor = envelope.factor_at(trace, i)?;
        let y = out.columns[0].values[i];
        out.columns[0].values[i] = 0.5 + factor * (y - 0.5);
    }
    out.set_meta("envelope", envelope.describe());
    Ok(out)
}

// ---------------------------------------------------------------------------
// Photon statistics
// ---------------------------------------------------------------------------

/// Photon-counting readout calibration: mean detected photons per shot for
/// the two sensor states, plus the shot budget and RNG seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutModel {
    /// Mean photons per shot with the sensor in `m_S = 0` (bright).
    pub bright_per_shot: f64,
    /// Mean photons per shot with the sensor in `m_S = −1` (dark).
    pub dark_per_shot: f64,
    /// Number of shots averaged per point.
    pub shots: u32,
    /// Base RNG seed; point `i` uses stream `i` of this seed.
    pub seed: u64,
}

impl ReadoutModel {
    /// Build a readout model. Bright must exceed dark, both positive.
    pub fn new(bright_per_shot: f64, dark_per_shot: f64, shots: u32, seed: u64) -> Result<Self> {
        if !(dark_per_shot.is_finite() && dark_per_shot > 0.0) {
            return Err(Error::domain(format!(
                "dark rate must be positive and finite, got {dark_per_shot} photons/shot"
            )));
        }
        if !(bright_per_shot.is_finite() && bright_per_shot > dark_per_shot) {
            return Err(Error::domain(format!(
                "bright rate must exceed the dark rate, got bright = {bright_per_shot}, \
                 dark = {dark_per_shot} photons/shot"
            )));
        }
        if shots == 0 {
            return Err(Error::domain("at least one shot is required"));
        }
        Ok(ReadoutModel {
            bright_per_shot,
            dark_per_shot,
            shots,
            seed,
        })
    }

    /// Expected total signal counts over the shot budget at a given `P0`.
    pub fn expected_counts(&self, p0: f64) -> f64 {
        f64::from(self.shots)
            * (p0 * self.bright_per_shot + (1.0 - p0) * self.dark_per_shot)
    }
}

/// Exact Poisson sample for λ ≤ this chunk size via Knuth's product method
/// (e^{−16} ≈ 1.1e−7 keeps the product comfortably inside f64 range).
const POISSON_CHUNK: f64 = 16.0;

fn poisson_knuth<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    let limit = (-lambda).exp();
    let mut k = 0u64;
    let mut p = 1.0f64;
    loop {
        p *= rng.gen::<f64>();
        if p <= limit {
            return k;
        }
        k += 1;
    }
}

/// Draw an exact Poisson(λ) sample for any finite λ ≥ 0.
///
/// Large λ is split into independent chunks of 16 (a sum of independent
/// Poisson variables is Poisson of the summed mean), so the sampler is
/// exact at every λ — no normal approximation anywhere.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> Result<u64> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::domain(format!(
            "Poisson mean must be nonnegative and finite, got {lambda}"
        )));
    }
    let mut remaining = lambda;
    let mut total = 0u64;
    while remaining > POISSON_CHUNK {
        total += poisson_knuth(rng, POISSON_CHUNK);
        remaining -= POISSON_CHUNK;
    }
    Ok(total + poisson_knuth(rng, remaining))
}

/// Turn an ideal `P0` trace into photon-sampled estimates.
///
/// Per point, three Poisson totals are drawn: the signal counts at that
/// point's `P0`, and fresh bright and dark reference totals (references are
/// re-measured per point, as in the interleaved acquisition this models).
/// The estimate is `(S − D) / (B − D)`; if the sampled references coincide
/// the point is flagged NaN rather than divided to garbage. Each point uses
/// its own counter-mode RNG stream, so results are independent of evaluation
/// order and fully reproducible from the seed.
///
/// The returned trace carries the estimate as its primary column plus the
/// three raw count columns.
pub fn sample_photons(trace: &MeasurementTrace, model: &ReadoutModel) -> Result<MeasurementTrace> {
    let shots = f64::from(model.shots);
    let mut estimates = Vec::with_capacity(trace.len());
    let mut signal_counts = Vec::with_capacity(trace.len());
    let mut bright_counts = Vec::with_capacity(trace.len());
    let mut dark_counts = Vec::with_capacity(trace.len());
    for (i, &p0) in trace.primary().iter().enumerate() {
        if !(-1e-9..=1.0 + 1e-9).contains(&p0) {
            return Err(Error::domain(format!(
                "photon sampling needs probabilities in [0, 1], got {p0} at point {i}"
            )));
        }
        let p0 = p0.clamp(0.0, 1.0);
        let mut rng = ChaCha12Rng::seed_from_u64(model.seed);
        rng.set_stream(i as u64);
        let s = sample_poisson(&mut rng, model.expected_counts(p0))? as f64;
        let b = sample_poisson(&mut rng, shots * model.bright_per_shot)? as f64;
        let d = sample_poisson(&mut rng, shots * model.dark_per_shot)? as f64;
        estimates.push(if b == d { f64::NAN } else { (s - d) / (b - d) });
        signal_counts.push(s);
        bright_counts.push(b);
        dark_counts.push(d);
    }
    let mut out = MeasurementTrace::new(trace.axis, trace.x.clone(), "p0_est", estimates)?;
    out.push_column("signal_counts", signal_counts)?;
    out.push_column("bright_counts", bright_counts)?;
    out.push_column("dark_counts", dark_counts)?;
    out.metadata = trace.metadata.clone();
    out.set_meta("bright_per_shot", model.bright_per_shot);
    out.set_meta("dark_per_shot", model.dark_per_shot);
    out.set_meta("shots", model.shots);
    out.set_meta("seed", model.seed);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Continuous-wave resonance synthesis
// ---------------------------------------------------------------------------

/// Synthetic continuous-wave resonance spectrum: the product of Lorentzian
/// dips at the two sensor transitions,
///
/// ```text
/// y(f) = Π_t [ 1 − c · (w/2)² / ((f − f_t)² + (w/2)²) ]
/// ```
///
/// with contrast `c ∈ (0, 1]` and full width at half maximum `w`. A zero
/// width degenerates to an indicator: the dip applies only where the grid
/// hits a transition frequency exactly.
pub fn synth_cw_odmr(
    b0_mt: f64,
    contrast: f64,
    fwhm_hz: f64,
    freq_grid_hz: &[f64],
) -> Result<MeasurementTrace> {
    if freq_grid_hz.is_empty() {
        return Err(Error::domain("frequency grid must not be empty"));
    }
    if !(contrast > 0.0 && contrast <= 1.0) {
        return Err(Error::domain(format!(
            "contrast must lie in (0, 1], got {contrast}"
        )));
    }
    if !(fwhm_hz.is_finite() && fwhm_hz >= 0.0) {
        return Err(Error::domain(format!(
            "linewidth must be nonnegative and finite, got {fwhm_hz} Hz"
        )));
    }
    let transitions = [
        crate::physics::nv_transition_frequency(b0_mt, crate::physics::Transition::ZeroToMinusOne)?,
        crate::physics::nv_transition_frequency(b0_mt, crate::physics::Transition::ZeroToPlusOne)?,
    ];
    let half = 0.5 * fwhm_hz;
    let y: Vec<f64> = freq_grid_hz
        .iter()
        .map(|&f| {
            transitions
                .iter()
                .map(|&f_t| {
                    let line = if fwhm_hz == 0.0 {
                        if f == f_t {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        let d = f - f_t;
                        half * half / (d * d + half * half)
                    };
                    1.0 - contrast * line
                })
                .product()
        })
        .collect();
    let mut trace = MeasurementTrace::new(AxisKind::FrequencyHz, freq_grid_hz.to_vec(), "y", y)?;
    trace.set_meta("b0_mt", b0_mt);
    trace.set_meta("contrast", contrast);
    trace.set_meta("fwhm_hz", fwhm_hz);
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::register::{HyperfineCoupling, NitrogenMixture, NuclearSpin, Species};
    use crate::sequences::{expand_timing, SequenceKind};
    use crate::trace::linspace;
    use proptest::prelude::*;

    const KHZ: f64 = 1e3;
    const US: f64 = 1e-6;

    /// The strongly coupled reference nucleus used across the test suite:
    /// a_∥ = −226.24 kHz, a_⊥ = +242.77 kHz at 4.7 mT.
    fn reference_register() -> SpinRegister {
        let coupling = HyperfineCoupling::new(-226.24 * KHZ, 242.77 * KHZ).unwrap();
        SpinRegister::new(4.7, vec![NuclearSpin::carbon13(coupling)], None).unwrap()
    }

    fn f0_at(b0_mt: f64) -> f64 {
        crate::physics::larmor_frequency(Species::Carbon13, b0_mt).unwrap()
    }

    #[test]
    fn bare_ramsey_is_dark_and_bare_hahn_is_bright() {
        let bare = SpinRegister::bare(4.7).unwrap();
        for tau in [0.3 * US, 1.0 * US, 7.7 * US] {
            let ramsey = evolve_ideal(&bare, &SequencePlan::ramsey(tau).unwrap()).unwrap();
            assert!(ramsey.abs() < 1e-12, "ramsey τ={tau}: {ramsey}");
            let hahn = evolve_ideal(&bare, &SequencePlan::hahn(tau).unwrap()).unwrap();
            assert!((hahn - 1.0).abs() < 1e-12, "hahn τ={tau}: {hahn}");
        }
    }

    #[test]
    fn ramsey_on_the_host_mixture_matches_the_fringe_model() {
        // The ±2.16 MHz triplet beats as ½ − 1/6 − (1/3)·cos(2π·2.16e6·τ),
        // which is the fringe model with α = [1/6, 1/3, 2.16 MHz, 0] and a
        // unit envelope.
        let register =
            SpinRegister::new(4.7, vec![], Some(NitrogenMixture::standard_triplet())).unwrap();
        for &tau in &linspace(0.01 * US, 1.5 * US, 41).unwrap() {
            let sim = evolve_ideal(&register, &SequencePlan::ramsey(tau).unwrap()).unwrap();
            let model = models::ramsey_model(
                tau,
                f64::INFINITY,
                1.0,
                [1.0 / 6.0, 1.0 / 3.0, 2.16e6, 0.0],
            );
            assert!(
                (sim - model).abs() < 1e-12,
                "τ = {tau}: sim {sim} vs model {model}"
            );
        }
    }

    #[test]
    fn ideal_schedule_reproduces_the_timed_expansion() {
        let plans = [
            SequencePlan::ramsey(1.5 * US).unwrap(),
            SequencePlan::hahn(3.72 * US).unwrap(),
            SequencePlan::decoupling(SequenceKind::Xy8, 2.0 * US, 16).unwrap(),
            SequencePlan::correlation(2.0 * US, 4, 4, 30.0 * US).unwrap(),
            SequencePlan::correlation_multipulse(2.0 * US, 4, 4, 8).unwrap(),
        ];
        for plan in &plans {
            let timed = expand_timing(plan).unwrap();
            let centers: Vec<f64> = timed.events.iter().map(|e| e.t_center_s).collect();
            // Accumulate the schedule's waits between rotations and compare
            // against the center-to-center distances.
            let mut gaps = Vec::new();
            let mut acc = 0.0;
            for step in ideal_schedule(plan).unwrap() {
                match step {
                    Step::Wait { duration_s } => acc += duration_s,
                    Step::Rotate { .. } => {
                        gaps.push(acc);
                        acc = 0.0;
                    }
                }
            }
            assert_eq!(gaps.len(), centers.len(), "{}", plan.kind.name());
            for (i, w) in centers.windows(2).enumerate() {
                let expect = w[1] - w[0];
                assert!(
                    (gaps[i + 1] - expect).abs() < 1e-15 + 1e-12 * expect,
                    "{}: gap {i} is {} s, expected {} s",
                    plan.kind.name(),
                    gaps[i + 1],
                    expect
                );
            }
        }
    }

    #[test]
    fn state_vector_matches_the_closed_form_dip() {
        // Dual-route check at the reference point: the state-vector XY4-4
        // outcome must equal the closed-form dip to rounding, and both land
        // on the frozen value 0.3561.
        let register = reference_register();
        let coupling = register.nuclei[0].coupling;
        let tau = 3.72 * US;
        let plan = SequencePlan::decoupling(SequenceKind::Xy4, tau, 4).unwrap();
        let sim = evolve_ideal(&register, &plan).unwrap();
        let closed = models::single_nucleus_dip(
            &coupling,
            f0_at(4.7),
            tau,
            4,
            models::SpectralForm::Validated,
        )
        .unwrap()
        .p0;
        assert!(
            (sim - closed).abs() < 1e-9,
            "simulator {sim} vs closed form {closed}"
        );
        assert!((sim - 0.3561).abs() < 1e-3, "frozen value check: {sim}");
    }

    #[test]
    fn xy4_dip_sits_in_the_expected_filter_window() {
        let register = reference_register();
        let plan = SequencePlan::decoupling(SequenceKind::Xy4, 3.0 * US, 4).unwrap();
        let grid = linspace(1.0 * US, 5.0 * US, 401).unwrap();
        let trace = simulate_sweep(&register, &plan, &SweepSpec::Tau(grid)).unwrap();
        let i_min = trace.argmin().unwrap();
        let f_dip = 1.0 / (2.0 * trace.x[i_min]);
        assert!(
            (125.0 * KHZ..=140.0 * KHZ).contains(&f_dip),
            "dip at {} kHz",
            f_dip / KHZ
        );
        assert!(
            (trace.primary()[i_min] - 0.3492).abs() < 1e-3,
            "dip depth {}",
            trace.primary()[i_min]
        );
        // Sweep provenance.
        assert_eq!(
            trace.metadata["register"],
            format!("{:016x}", register.fingerprint())
        );
        assert_eq!(trace.metadata["kind"], "xy4");
        assert_eq!(trace.metadata["n_pulses"], "4");
    }

    #[test]
    fn hahn_revivals_sit_at_the_bare_precession_period() {
        // The echo modulation carries sin²(π·f0·τ/2): it vanishes exactly
        // when the half-interval τ/2 is a whole number of bare precession
        // periods, i.e. at plan τ = 2m/f0 under the full-window convention.
        let register = reference_register();
        let f0 = f0_at(4.7);
        for m in 1..=3 {
            let tau = 2.0 * f64::from(m) / f0;
            let p0 = evolve_ideal(&register, &SequencePlan::hahn(tau).unwrap()).unwrap();
            assert!(p0 >= 0.999, "revival m={m} at τ={tau}: P0 = {p0}");
        }
        // Between revivals the echo collapses visibly.
        let grid = linspace(2.0 * 0.2 / f0, 2.0 * 1.8 / f0, 321).unwrap();
        let base = SequencePlan::hahn(1.0 * US).unwrap();
        let trace = simulate_sweep(&register, &base, &SweepSpec::Tau(grid)).unwrap();
        let deepest = trace.primary()[trace.argmin().unwrap()];
        assert!(deepest < 0.9, "no collapse between revivals: min P0 = {deepest}");
    }

    #[test]
    fn independent_nuclei_factorize() {
        let c1 = HyperfineCoupling::new(-226.24 * KHZ, 242.77 * KHZ).unwrap();
        let c2 = HyperfineCoupling::new(80.0 * KHZ, 150.0 * KHZ).unwrap();
        let both = SpinRegister::new(
            4.7,
            vec![NuclearSpin::carbon13(c1), NuclearSpin::carbon13(c2)],
            None,
        )
        .unwrap();
        let only1 = SpinRegister::new(4.7, vec![NuclearSpin::carbon13(c1)], None).unwrap();
        let only2 = SpinRegister::new(4.7, vec![NuclearSpin::carbon13(c2)], None).unwrap();
        for &tau in &[1.7 * US, 2.9 * US, 3.72 * US] {
            let plan = SequencePlan::decoupling(SequenceKind::Xy8, tau, 8).unwrap();
            let p12 = evolve_ideal(&both, &plan).unwrap();
            let p1 = evolve_ideal(&only1, &plan).unwrap();
            let p2 = evolve_ideal(&only2, &plan).unwrap();
            let lhs = 2.0 * p12 - 1.0;
            let rhs = (2.0 * p1 - 1.0) * (2.0 * p2 - 1.0);
            assert!(
                (lhs - rhs).abs() < 1e-12,
                "τ = {tau}: coherent parts {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn transverse_coupling_sign_is_unobservable() {
        // Build the negative-a_⊥ register literally (the constructor
        // rightly refuses it, because the sign is pure convention — which
        // is exactly what this test demonstrates).
        let plus = reference_register();
        let minus_nucleus = NuclearSpin {
            species: Species::Carbon13,
            gamma_hz_per_mt: plus.nuclei[0].gamma_hz_per_mt,
            coupling: HyperfineCoupling {
                a_par_hz: -226.24 * KHZ,
                a_perp_hz: -242.77 * KHZ,
            },
        };
        let minus = SpinRegister {
            nuclei: vec![minus_nucleus],
            ..plus.clone()
        };
        for &tau in &[1.3 * US, 3.72 * US] {
            let plan = SequencePlan::decoupling(SequenceKind::Xy4, tau, 4).unwrap();
            let a = evolve_ideal(&plus, &plan).unwrap();
            let b = evolve_ideal(&minus, &plan).unwrap();
            assert!((a - b).abs() < 1e-12, "τ = {tau}: {a} vs {b}");
        }
    }

    #[test]
    fn phase_cycle_branches_are_complementary() {
        let register = reference_register();
        let plan = SequencePlan::decoupling(SequenceKind::Xy8, 2.7 * US, 8).unwrap();
        let (plus, minus) = phase_cycle_pair(&plan).unwrap();
        let p_plus = run_plan(&register, &plus.with_phase_cycle(false)).unwrap();
        let p_minus = run_plan(&register, &minus.with_phase_cycle(false)).unwrap();
        assert!(
            (p_plus + p_minus - 1.0).abs() < 1e-12,
            "ideal branches must be complementary: {p_plus} + {p_minus}"
        );
        // Hence cycling equals the +x branch for ideal pulses.
        let combined = run_plan(&register, &plan).unwrap();
        assert!((combined - p_plus).abs() < 1e-12);
    }

    #[test]
    fn evolution_preserves_the_norm() {
        let register = SpinRegister::new(
            4.7,
            vec![
                NuclearSpin::carbon13(HyperfineCoupling::new(-226.24 * KHZ, 242.77 * KHZ).unwrap()),
                NuclearSpin::carbon13(HyperfineCoupling::new(57.0 * KHZ, 310.0 * KHZ).unwrap()),
                NuclearSpin::carbon13(HyperfineCoupling::new(0.0, 90.0 * KHZ).unwrap()),
            ],
            None,
        )
        .unwrap();
        let pairs = hamiltonian_pairs(&register).unwrap();
        let plan = SequencePlan::correlation(1.9 * US, 8, 4, 17.3 * US).unwrap();
        let schedule = ideal_schedule(&plan).unwrap();
        for k0 in 0..8 {
            let mut state = RegisterState::new(3, k0).unwrap();
            run_schedule(&mut state, &schedule, &pairs, 2.16e6);
            assert!(
                (state.norm() - 1.0).abs() < 1e-12,
                "norm drifted to {} for basis state {k0}",
                state.norm()
            );
        }
    }

    #[test]
    fn pi_pulse_is_exact_on_resonance() {
        let rabi = 387.0 * KHZ;
        let t_pi = 1.0 / (2.0 * rabi);
        let envelope = EnvelopeSpec::square(t_pi).unwrap();
        let out = evolve_driven(&envelope, rabi, 0.0).unwrap();
        assert!((out.p1 - 1.0).abs() < 1e-9, "P1 = {}", out.p1);
        assert!((t_pi - 1292.0e-9).abs() < 0.1e-9, "t_pi = {t_pi}");
    }

    #[test]
    fn detuned_square_drive_matches_the_rabi_formula() {
        let rabi = 500.0 * KHZ;
        for &(detune, t_ns) in &[(0.0, 700.0), (300.0 * KHZ, 900.0), (-1.2e6, 400.0)] {
            let t = t_ns * 1e-9;
            let out = evolve_driven(&EnvelopeSpec::square(t).unwrap(), rabi, detune).unwrap();
            let v = rabi.hypot(detune);
            let expect = (rabi / v).powi(2) * (std::f64::consts::PI * v * t).sin().powi(2);
            assert!(
                (out.p1 - expect).abs() < 1e-6,
                "Δ = {detune}: P1 = {} vs {expect}",
                out.p1
            );
        }
    }

    #[test]
    fn cosine_square_needs_twice_the_peak_for_a_pi_pulse() {
        // Equal pulse areas: the single-lobe cosine-square envelope carries
        // half the area of the square one, so doubling the peak recovers an
        // exact π rotation on resonance.
        let rabi = 387.0 * KHZ;
        let t_pi = 1.0 / (2.0 * rabi);
        let half = evolve_driven(&EnvelopeSpec::cosine_square(t_pi).unwrap(), rabi, 0.0).unwrap();
        assert!(
            (half.p1 - 0.5).abs() < 1e-5,
            "same peak gives a π/2 rotation: P1 = {}",
            half.p1
        );
        let full =
            evolve_driven(&EnvelopeSpec::cosine_square(t_pi).unwrap(), 2.0 * rabi, 0.0).unwrap();
        assert!((full.p1 - 1.0).abs() < 1e-5, "doubled peak: P1 = {}", full.p1);
    }

    #[test]
    fn wurst_inverts_across_the_chirp_band() {
        // 2 µs WURST-20 chirped over ±10 MHz at 4 MHz peak: adiabatic
        // inversion must hold across ±2 MHz of static detuning. The wide
        // span matters — the band edges must start and end far detuned, or
        // the dressed state never decouples before the amplitude shuts off.
        let envelope = EnvelopeSpec::wurst(2.0 * US, 20.0, 20.0e6).unwrap();
        for &detune in &linspace(-2.0e6, 2.0e6, 21).unwrap() {
            let out = evolve_driven(&envelope, 4.0e6, detune).unwrap();
            assert!(
                out.p1 >= 0.99,
                "Δ = {} MHz: inversion only reached {}",
                detune / 1e6,
                out.p1
            );
        }
        // A fixed-frequency square π pulse of the same peak is much
        // narrower band: at 2 MHz detuning it leaves over 20% behind.
        let square = EnvelopeSpec::square(1.0 / (2.0 * 4.0e6)).unwrap();
        let narrow = evolve_driven(&square, 4.0e6, 2.0e6).unwrap();
        assert!(narrow.p1 < 0.8, "square at 2 MHz detuning: {}", narrow.p1);
    }

    #[test]
    fn pulsed_resonance_shows_the_host_triplet() {
        let rabi = 387.0 * KHZ;
        let envelope = EnvelopeSpec::square(1.0 / (2.0 * rabi)).unwrap();
        let mixture = NitrogenMixture::standard_triplet();
        let grid = linspace(-3.0e6, 3.0e6, 601).unwrap();
        let trace = pulsed_odmr_profile(Some(&mixture), &envelope, rabi, &grid).unwrap();
        for center in [-2.16e6, 0.0, 2.16e6] {
            let (best, _) = trace
                .x
                .iter()
                .zip(trace.primary())
                .filter(|(&f, _)| (f - center).abs() <= 0.5e6)
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            assert!(
                (best - center).abs() <= 20.0 * KHZ,
                "line near {center} Hz found at {best} Hz"
            );
        }
    }

    #[test]
    fn cw_spectrum_dips_at_both_transitions() {
        let grid = linspace(2.60e9, 3.15e9, 1101).unwrap(); // 0.5 MHz steps
        let trace = synth_cw_odmr(4.7, 0.2, 8.0e6, &grid).unwrap();
        let minima: Vec<f64> = [2.7384e9, 3.0016e9]
            .iter()
            .map(|&center| {
                let (f, _) = trace
                    .x
                    .iter()
                    .zip(trace.primary())
                    .filter(|(&f, _)| (f - center).abs() <= 50.0e6)
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap();
                *f
            })
            .collect();
        assert!((minima[0] - 2.7384e9).abs() <= 0.5e6, "lower dip at {}", minima[0]);
        assert!((minima[1] - 3.0016e9).abs() <= 0.5e6, "upper dip at {}", minima[1]);
        // Zero linewidth degenerates to an indicator on exact grid hits.
        let sharp = synth_cw_odmr(0.0, 0.3, 0.0, &[2.87e9, 2.871e9]).unwrap();
        assert!((sharp.primary()[0] - (1.0 - 0.3) * (1.0 - 0.3)).abs() < 1e-12);
        assert_eq!(sharp.primary()[1], 1.0);
    }

    #[test]
    fn photon_sampling_is_deterministic_and_unbiased() {
        let xs = linspace(1.0, 400.0, 400).unwrap();
        let trace =
            MeasurementTrace::new(AxisKind::PulseCount, xs, "p0", vec![0.6; 400]).unwrap();
        let model = ReadoutModel::new(0.05, 0.02, 2000, 42).unwrap();
        let a = sample_photons(&trace, &model).unwrap();
        let b = sample_photons(&trace, &model).unwrap();
        assert_eq!(a, b, "same seed must reproduce identical traces");
        let other = sample_photons(&trace, &ReadoutModel::new(0.05, 0.02, 2000, 43).unwrap())
            .unwrap();
        assert_ne!(a.primary(), other.primary(), "different seeds must differ");
        let mean: f64 = a.primary().iter().sum::<f64>() / 400.0;
        assert!(
            (mean - 0.6).abs() < 0.03,
            "estimate mean {mean} strays from the true 0.6"
        );
        // Raw count columns ride along for auditability.
        assert!(a.column("signal_counts").is_some());
        assert_eq!(a.metadata["shots"], "2000");
    }

    #[test]
    fn degenerate_reference_samples_are_flagged_not_divided() {
        // Minuscule rates with one shot: bright and dark references both
        // sample to zero counts at many points, which must surface as NaN.
        let xs = linspace(1.0, 200.0, 200).unwrap();
        let trace =
            MeasurementTrace::new(AxisKind::PulseCount, xs, "p0", vec![0.5; 200]).unwrap();
        let model = ReadoutModel::new(0.02, 0.01, 1, 7).unwrap();
        let sampled = sample_photons(&trace, &model).unwrap();
        let nans = sampled.primary().iter().filter(|v| v.is_nan()).count();
        assert!(nans > 0, "expected flagged points at these count rates");
        assert!(
            sampled.primary().iter().all(|v| v.is_nan() || v.is_finite()),
            "estimates are either finite or explicitly flagged"
        );
    }

    #[test]
    fn poisson_sampler_moments_and_chunking() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert_eq!(sample_poisson(&mut rng, 0.0).unwrap(), 0);
        assert!(sample_poisson(&mut rng, f64::NAN).is_err());
        assert!(sample_poisson(&mut rng, -1.0).is_err());
        // Means at, below, and well above the chunk size (the last one
        // exercises the chunk decomposition ~6 times per draw).
        for &lambda in &[0.3, 16.0, 47.5, 100.0] {
            let n = 20_000;
            let samples: Vec<f64> = (0..n)
                .map(|_| sample_poisson(&mut rng, lambda).unwrap() as f64)
                .collect();
            let mean = samples.iter().sum::<f64>() / n as f64;
            let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
            let se = (lambda / n as f64).sqrt();
            assert!(
                (mean - lambda).abs() < 5.0 * se,
                "λ = {lambda}: mean {mean}"
            );
            assert!(
                (var / lambda - 1.0).abs() < 0.06,
                "λ = {lambda}: variance {var}"
            );
        }
    }

    #[test]
    fn envelope_resolution_and_identity() {
        let xs = linspace(1.0 * US, 5.0 * US, 9).unwrap();
        let mut trace =
            MeasurementTrace::new(AxisKind::TauSeconds, xs.clone(), "p0", vec![1.0; 9]).unwrap();
        // Decay-free envelope: exact identity.
        let unit = DecoherenceEnvelope::new(EnvelopeKind::Multipulse, f64::INFINITY, 1.0).unwrap();
        trace.set_meta("n_pulses", 32);
        let same = apply_envelope(&trace, &unit).unwrap();
        assert_eq!(same.primary(), trace.primary());
        // Multipulse on a τ axis: t = N·τ.
        let env = DecoherenceEnvelope::new(EnvelopeKind::Multipulse, 300.0 * US, 1.5).unwrap();
        let damped = apply_envelope(&trace, &env).unwrap();
        for (i, &tau) in xs.iter().enumerate() {
            let expect = 0.5 + 0.5 * (-(32.0 * tau / (300.0 * US)).powf(1.5)).exp();
            assert!(
                (damped.primary()[i] - expect).abs() < 1e-15,
                "τ = {tau}: {} vs {expect}",
                damped.primary()[i]
            );
        }
        // Without the metadata the resolution must fail loudly.
        let bare_trace =
            MeasurementTrace::new(AxisKind::TauSeconds, xs.clone(), "p0", vec![1.0; 9]).unwrap();
        assert!(matches!(
            apply_envelope(&bare_trace, &env),
            Err(Error::Domain(_))
        ));
        // Echo kind on a τ axis uses the full window directly.
        let echo = DecoherenceEnvelope::new(EnvelopeKind::Echo, 300.0 * US, 1.0).unwrap();
        let e = apply_envelope(&bare_trace, &echo).unwrap();
        assert!((e.primary()[0] - (0.5 + 0.5 * (-(1.0 * US) / (300.0 * US)).exp())).abs() < 1e-15);
        // Pulse-count axis resolves N·τ from tau_s metadata.
        let mut n_trace = MeasurementTrace::new(
            AxisKind::PulseCount,
            vec![8.0, 16.0, 32.0],
            "p0",
            vec![1.0; 3],
        )
        .unwrap();
        n_trace.set_meta("tau_s", 2.0 * US);
        let dn = apply_envelope(&n_trace, &env).unwrap();
        let expect = 0.5 + 0.5 * (-(32.0 * 2.0 * US / (300.0 * US)).powf(1.5)).exp();
        assert!((dn.primary()[2] - expect).abs() < 1e-15);
    }

    #[test]
    fn sweep_rejects_fractional_pulse_counts() {
        let register = reference_register();
        let plan = SequencePlan::decoupling(SequenceKind::Cpmg, 2.0 * US, 4).unwrap();
        let err = simulate_sweep(
            &register,
            &plan,
            &SweepSpec::PulseCount(vec![4.0, 8.0, 8.5]),
        )
        .unwrap_err();
        assert!(err.to_string().contains("whole numbers"), "{err}");
        // A grid that breaks the XY block rule fails with the block message.
        let xy = SequencePlan::decoupling(SequenceKind::Xy4, 2.0 * US, 4).unwrap();
        let err = simulate_sweep(&register, &xy, &SweepSpec::PulseCount(vec![4.0, 6.0]))
            .unwrap_err();
        assert!(err.to_string().contains("block"), "{err}");
    }

    proptest! {
        /// The state-vector simulator and the closed-form dip agree to 1e-9
        /// across random couplings, spacings, and train lengths, for both an
        /// XY and a CPMG phase pattern. Even pulse counts only: the closed
        /// form's two-pulse unit cell does not exist for odd N, where it is
        /// merely a leading-order approximation.
        #[test]
        fn state_vector_matches_closed_form_everywhere(
            a_par_khz in -400.0f64..400.0,
            a_perp_khz in 0.0f64..400.0,
            tau_us in 0.2f64..6.0,
            reps in 1u32..8,
            xy in proptest::bool::ANY,
        ) {
            let coupling = HyperfineCoupling::new(a_par_khz * KHZ, a_perp_khz * KHZ).unwrap();
            let register =
                SpinRegister::new(4.7, vec![NuclearSpin::carbon13(coupling)], None).unwrap();
            let (kind, n) = if xy {
                (SequenceKind::Xy4, 4 * reps)
            } else {
                (SequenceKind::Cpmg, 2 * reps)
            };
            let tau = tau_us * US;
            let plan = SequencePlan::decoupling(kind, tau, n).unwrap();
            let sim = evolve_ideal(&register, &plan).unwrap();
            let closed = models::single_nucleus_dip(
                &coupling,
                f0_at(4.7),
                tau,
                n,
                models::SpectralForm::Validated,
            )
            .unwrap()
            .p0;
            prop_assert!(
                (sim - closed).abs() < 1e-9,
                "kind {:?} N {} τ {} µs: sim {} vs closed {}",
                kind, n, tau_us, sim, closed
            );
        }
    }
}
