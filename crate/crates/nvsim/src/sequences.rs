//! Symbolic pulse sequences and their expansion to absolute-time schedules.
//!
//! A [`SequencePlan`] names a sequence family (Ramsey, Hahn, CP, CPMG,
//! XY4/8/16, correlation spectroscopy) together with its knobs: the inter-π
//! spacing τ, the π count N, block size k, storage interval, pulse shapes
//! and durations, and the readout phase. [`build_sequence`] turns a plan
//! into the exact symbolic pulse ordering; [`expand_timing`] places the
//! pulses on an absolute time axis under the τ convention used throughout:
//!
//! - τ is the **centre-to-centre** spacing of adjacent π pulses;
//! - the first π centre sits τ/2 after the falling edge of the initial π/2;
//! - the readout π/2 rises τ/2 after the last π centre, so the coherence
//!   window is exactly N·τ.
//!
//! Event times are f64 seconds computed as single products from τ (never by
//! accumulating gaps), so a τ sweep carries no timing drift and the window
//! identity holds to the last bit.

use serde::{Deserialize, Serialize};

use crate::waveform::{EnvelopeShape, IQWaveform};
use crate::{Error, Result};

/// Schema tag for sequence-plan JSON files.
pub const PLAN_SCHEMA: &str = "nvsim-plan/1";

/// Rotation axis in the rotating frame, realized as the IF phase offset of
/// the pulse (0°/90°/180°/270° for +x/+y/−x/−y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "+x")]
    PlusX,
    #[serde(rename = "+y")]
    PlusY,
    #[serde(rename = "-x")]
    MinusX,
    #[serde(rename = "-y")]
    MinusY,
}

impl Axis {
    /// The IF phase offset that realizes this axis.
    pub fn theta_if_deg(self) -> f64 {
        match self {
            Axis::PlusX => 0.0,
            Axis::PlusY => 90.0,
            Axis::MinusX => 180.0,
            Axis::MinusY => 270.0,
        }
    }

    /// Rotation-axis phase in radians (same as `theta_if_deg`).
    pub fn phase_rad(self) -> f64 {
        self.theta_if_deg().to_radians()
    }

    /// The opposite axis (+x ↔ −x, +y ↔ −y).
    pub fn negated(self) -> Axis {
        match self {
            Axis::PlusX => Axis::MinusX,
            Axis::PlusY => Axis::MinusY,
            Axis::MinusX => Axis::PlusX,
            Axis::MinusY => Axis::PlusY,
        }
    }

    /// Display name ("+x", "-y", …).
    pub fn name(self) -> &'static str {
        match self {
            Axis::PlusX => "+x",
            Axis::PlusY => "+y",
            Axis::MinusX => "-x",
            Axis::MinusY => "-y",
        }
    }
}

/// Rotation angle of a pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Angle {
    PiHalf,
    Pi,
}

impl Angle {
    /// The rotation angle in radians.
    pub fn radians(self) -> f64 {
        match self {
            Angle::PiHalf => std::f64::consts::FRAC_PI_2,
            Angle::Pi => std::f64::consts::PI,
        }
    }
}

/// One fully specified pulse: axis, angle, envelope shape, duration.
/// Duration 0 means ideal (instantaneous) — the simulator's default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub axis: Axis,
    pub angle: Angle,
    pub shape: EnvelopeShape,
    pub duration_s: f64,
}

impl PulseSpec {
    /// Build a pulse spec; duration must be finite and ≥ 0.
    pub fn new(axis: Axis, angle: Angle, shape: EnvelopeShape, duration_s: f64) -> Result<Self> {
        if !(duration_s.is_finite() && duration_s >= 0.0) {
            return Err(Error::domain(format!(
                "pulse duration must be nonnegative and finite, got {duration_s} s"
            )));
        }
        Ok(PulseSpec {
            axis,
            angle,
            shape,
            duration_s,
        })
    }
}

/// Shape/duration templates for the two pulse roles of a sequence. Axes are
/// assigned per position by [`build_sequence`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseTiming {
    pub pi_half_shape: EnvelopeShape,
    /// π/2 duration (seconds); 0 = ideal.
    pub pi_half_duration_s: f64,
    pub pi_shape: EnvelopeShape,
    /// π duration (seconds); 0 = ideal.
    pub pi_duration_s: f64,
}

impl PulseTiming {
    /// Ideal (zero-duration) pulses — what the register simulator uses.
    pub fn ideal() -> Self {
        PulseTiming {
            pi_half_shape: EnvelopeShape::Square,
            pi_half_duration_s: 0.0,
            pi_shape: EnvelopeShape::CosineSquare,
            pi_duration_s: 0.0,
        }
    }

    /// Finite-duration pulses: square π/2, cosine-square π (the hardware
    /// convention this crate models).
    pub fn finite(pi_half_duration_s: f64, pi_duration_s: f64) -> Result<Self> {
        for (name, v) in [
            ("pi_half_duration_s", pi_half_duration_s),
            ("pi_duration_s", pi_duration_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!(
                    "{name} must be nonnegative and finite, got {v} s"
                )));
            }
        }
        Ok(PulseTiming {
            pi_half_shape: EnvelopeShape::Square,
            pi_half_duration_s,
            pi_shape: EnvelopeShape::CosineSquare,
            pi_duration_s,
        })
    }
}

/// Sequence family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceKind {
    /// π/2 – τ – π/2 free-precession interferometry.
    Ramsey,
    /// π/2 – τ/2 – π – τ/2 – π/2 echo (N = 1).
    Hahn,
    /// Carr–Purcell train: all π pulses about +x.
    Cp,
    /// CPMG train: all π pulses about +y.
    Cpmg,
    /// XY4 block X,Y,X,Y repeated N/4 times.
    Xy4,
    /// XY8 block = XY4 followed by YX4: X,Y,X,Y,Y,X,Y,X.
    Xy8,
    /// XY16 block = XY8 followed by the same block on negated axes.
    Xy16,
    /// Two N-pulse decoupling halves separated by a storage interval
    /// t_corr, bridged by ±y π/2 pulses.
    Correlation,
    /// Correlation variant whose storage interval carries an inner train of
    /// M π pulses (default: same τ, all +y), so t_corr = M·τ.
    CorrelationMultipulse,
}

impl SequenceKind {
    /// Kinds built around a π train between the two π/2 pulses.
    pub fn is_decoupling(self) -> bool {
        matches!(
            self,
            SequenceKind::Cp | SequenceKind::Cpmg | SequenceKind::Xy4 | SequenceKind::Xy8 | SequenceKind::Xy16
        )
    }

    /// Kinds with two decoupling halves and a storage interval.
    pub fn is_correlation(self) -> bool {
        matches!(
            self,
            SequenceKind::Correlation | SequenceKind::CorrelationMultipulse
        )
    }

    /// The natural block size of the kind's π train (1 for CP/CPMG).
    pub fn natural_block(self) -> u32 {
        match self {
            SequenceKind::Xy4 => 4,
            SequenceKind::Xy8 => 8,
            SequenceKind::Xy16 => 16,
            _ => 1,
        }
    }

    /// Stable name for files and CLI flags.
    pub fn name(self) -> &'static str {
        match self {
            SequenceKind::Ramsey => "ramsey",
            SequenceKind::Hahn => "hahn",
            SequenceKind::Cp => "cp",
            SequenceKind::Cpmg => "cpmg",
            SequenceKind::Xy4 => "xy4",
            SequenceKind::Xy8 => "xy8",
            SequenceKind::Xy16 => "xy16",
            SequenceKind::Correlation => "correlation",
            SequenceKind::CorrelationMultipulse => "correlation-multipulse",
        }
    }
}

/// A complete sequence specification: family plus every timing knob.
///
/// For correlation kinds, `n_pulses` counts the π pulses of **each** half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePlan {
    /// Schema tag; written on save, checked on load.
    pub schema: String,
    pub kind: SequenceKind,
    /// Inter-π spacing τ (seconds). For Ramsey this is the free-precession
    /// interval between the two π/2 pulses.
    pub tau_s: f64,
    /// π-pulse count N (per half for correlation kinds; 1 for Hahn; 0 for
    /// Ramsey).
    pub n_pulses: u32,
    /// Block size k; the train is the k-pulse block repeated N/k times. For
    /// XY kinds this equals the kind's natural block; correlation halves may
    /// choose 1 (CPMG-style), 4, 8, or 16.
    pub block: u32,
    /// Storage interval (seconds); `Correlation` only.
    pub t_corr_s: Option<f64>,
    /// Inner π count M; `CorrelationMultipulse` only (storage = M·τ).
    pub inner_m: Option<u32>,
    /// Axis of the final (readout) π/2: +x, or −x for phase cycling.
    pub readout_axis: Axis,
    /// Whether downstream evaluation should combine the ±x readout pair.
    pub phase_cycle: bool,
    /// Pulse shape/duration templates.
    pub pulses: PulseTiming,
}

impl SequencePlan {
    fn base(kind: SequenceKind, tau_s: f64, n_pulses: u32, block: u32) -> SequencePlan {
        SequencePlan {
            schema: PLAN_SCHEMA.to_string(),
            kind,
            tau_s,
            n_pulses,
            block,
            t_corr_s: None,
            inner_m: None,
            readout_axis: Axis::PlusX,
            phase_cycle: true,
            pulses: PulseTiming::ideal(),
        }
    }

    /// Ramsey plan with free-precession interval `tau_s`.
    pub fn ramsey(tau_s: f64) -> Result<SequencePlan> {
        Self::base(SequenceKind::Ramsey, tau_s, 0, 1).validated()
    }

    /// Hahn-echo plan with half-interval `tau_s` (total evolution 2·τ… no:
    /// the single π sits τ/2 after the first π/2, total window τ — N = 1
    /// under the uniform convention).
    pub fn hahn(tau_s: f64) -> Result<SequencePlan> {
        Self::base(SequenceKind::Hahn, tau_s, 1, 1).validated()
    }

    /// A decoupling train: CP, CPMG, or an XY family member.
    pub fn decoupling(kind: SequenceKind, tau_s: f64, n_pulses: u32) -> Result<SequencePlan> {
        if !kind.is_decoupling() {
            return Err(Error::domain(format!(
                "{} is not a decoupling kind; use the dedicated constructor",
                kind.name()
            )));
        }
        Self::base(kind, tau_s, n_pulses, kind.natural_block()).validated()
    }

    /// Correlation spectroscopy: two `n_per_half`-pulse halves with block
    /// pattern `block` (1 = CPMG-style, or 4/8/16 for XYk patterns),
    /// separated by `t_corr_s`.
    pub fn correlation(
        tau_s: f64,
        n_per_half: u32,
        block: u32,
        t_corr_s: f64,
    ) -> Result<SequencePlan> {
        let mut p = Self::base(SequenceKind::Correlation, tau_s, n_per_half, block);
        p.t_corr_s = Some(t_corr_s);
        p.validated()
    }

    /// Correlation variant with an `inner_m`-pulse train (all +y, spacing τ)
    /// filling the storage interval, so t_corr = M·τ.
    pub fn correlation_multipulse(
        tau_s: f64,
        n_per_half: u32,
        block: u32,
        inner_m: u32,
    ) -> Result<SequencePlan> {
        let mut p = Self::base(SequenceKind::CorrelationMultipulse, tau_s, n_per_half, block);
        p.inner_m = Some(inner_m);
        p.validated()
    }

    /// Replace the pulse templates (builder style).
    pub fn with_pulses(mut self, pulses: PulseTiming) -> Result<SequencePlan> {
        self.pulses = pulses;
        self.validated()
    }

    /// Set the readout axis (+x or −x only).
    pub fn with_readout(mut self, axis: Axis) -> Result<SequencePlan> {
        self.readout_axis = axis;
        self.validated()
    }

    /// Enable or disable phase cycling (builder style).
    pub fn with_phase_cycle(mut self, on: bool) -> SequencePlan {
        self.phase_cycle = on;
        self
    }

    /// Run the full invariant check, returning `self` on success.
    pub fn validated(self) -> Result<SequencePlan> {
        if self.schema != PLAN_SCHEMA {
            return Err(Error::domain(format!(
                "unsupported plan schema {:?}, expected {PLAN_SCHEMA:?}",
                self.schema
            )));
        }
        if !(self.tau_s.is_finite() && self.tau_s > 0.0) {
            return Err(Error::domain(format!(
                "tau must be positive and finite, got {} s",
                self.tau_s
            )));
        }
        if !matches!(self.readout_axis, Axis::PlusX | Axis::MinusX) {
            return Err(Error::domain(format!(
                "readout axis must be +x or -x, got {}",
                self.readout_axis.name()
            )));
        }
        match self.kind {
            SequenceKind::Ramsey => {
                if self.n_pulses != 0 {
                    return Err(Error::domain("ramsey carries no π pulses (N must be 0)"));
                }
            }
            SequenceKind::Hahn => {
                if self.n_pulses != 1 {
                    return Err(Error::domain("hahn has exactly one π pulse (N must be 1)"));
                }
            }
            k if k.is_decoupling() => {
                if self.n_pulses == 0 {
                    return Err(Error::domain(format!(
                        "{} needs at least one π pulse",
                        k.name()
                    )));
                }
                if self.block != k.natural_block() {
                    return Err(Error::domain(format!(
                        "{} uses block size {}, got {}",
                        k.name(),
                        k.natural_block(),
                        self.block
                    )));
                }
                if self.n_pulses % self.block != 0 {
                    return Err(Error::domain(format!(
                        "N = {} is not divisible by the {} block size {}",
                        self.n_pulses,
                        k.name(),
                        self.block
                    )));
                }
            }
            _ => {
                // Correlation kinds.
                if self.n_pulses == 0 {
                    return Err(Error::domain("correlation halves need at least one π pulse"));
                }
                if !matches!(self.block, 1 | 4 | 8 | 16) {
                    return Err(Error::domain(format!(
                        "correlation block size must be 1, 4, 8, or 16, got {}",
                        self.block
                    )));
                }
                if self.n_pulses % self.block != 0 {
                    return Err(Error::domain(format!(
                        "N = {} per half is not divisible by block size {}",
                        self.n_pulses, self.block
                    )));
                }
                match self.kind {
                    SequenceKind::Correlation => {
                        let t = self.t_corr_s.ok_or_else(|| {
                            Error::domain("correlation plan needs t_corr_s")
                        })?;
                        if !(t.is_finite() && t >= 0.0) {
                            return Err(Error::domain(format!(
                                "t_corr must be nonnegative and finite, got {t} s"
                            )));
                        }
                        if self.inner_m.is_some() {
                            return Err(Error::domain(
                                "plain correlation takes no inner pulse count; use correlation-multipulse",
                            ));
                        }
                    }
                    SequenceKind::CorrelationMultipulse => {
                        let m = self.inner_m.ok_or_else(|| {
                            Error::domain("correlation-multipulse plan needs inner_m")
                        })?;
                        if m == 0 {
                            return Err(Error::domain("inner pulse count M must be at least 1"));
                        }
                        if self.t_corr_s.is_some() {
                            return Err(Error::domain(
                                "correlation-multipulse derives t_corr = M·τ; do not set t_corr_s",
                            ));
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }
        if (self.t_corr_s.is_some() || self.inner_m.is_some()) && !self.kind.is_correlation() {
            return Err(Error::domain(format!(
                "{} takes neither t_corr_s nor inner_m",
                self.kind.name()
            )));
        }
        Ok(self)
    }

    /// Storage interval length (seconds): explicit t_corr, or M·τ for the
    /// multipulse variant. `None` for non-correlation kinds.
    pub fn storage_s(&self) -> Option<f64> {
        match self.kind {
            SequenceKind::Correlation => self.t_corr_s,
            SequenceKind::CorrelationMultipulse => {
                self.inner_m.map(|m| m as f64 * self.tau_s)
            }
            _ => None,
        }
    }

    /// Parse a plan from JSON text, re-validating all invariants.
    pub fn from_json(text: &str) -> Result<SequencePlan> {
        let plan: SequencePlan = serde_json::from_str(text)
            .map_err(|e| Error::domain(format!("plan JSON does not parse: {e}")))?;
        plan.validated()
    }

    /// Load a plan from a JSON file.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<SequencePlan> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Save the plan as pretty-printed JSON.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text =
            serde_json::to_string_pretty(self).expect("plan serialization cannot fail");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// One element of a symbolic sequence: a pulse, or the storage gap of a
/// correlation sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SymbolicItem {
    Pulse { axis: Axis, angle: Angle },
    /// The t_corr storage interval between the two correlation halves.
    StorageGap,
}

/// π-axis list for one decoupling train of `n` pulses built from the block
/// pattern of size `k`.
fn train_axes(kind_block: u32, cp_style_x: bool, n: u32) -> Result<Vec<Axis>> {
    use Axis::*;
    let block: Vec<Axis> = match kind_block {
        1 => vec![if cp_style_x { PlusX } else { PlusY }],
        4 => vec![PlusX, PlusY, PlusX, PlusY],
        8 => vec![PlusX, PlusY, PlusX, PlusY, PlusY, PlusX, PlusY, PlusX],
        16 => {
            let xy8 = [PlusX, PlusY, PlusX, PlusY, PlusY, PlusX, PlusY, PlusX];
            xy8.iter()
                .copied()
                .chain(xy8.iter().map(|a| a.negated()))
                .collect()
        }
        other => {
            return Err(Error::domain(format!(
                "unsupported block size {other}"
            )))
        }
    };
    if n as usize % block.len() != 0 {
        return Err(Error::domain(format!(
            "π count {n} is not a multiple of the block size {}",
            block.len()
        )));
    }
    Ok(block
        .iter()
        .copied()
        .cycle()
        .take(n as usize)
        .collect())
}

/// Expand a plan into its exact symbolic pulse ordering.
///
/// Orderings: CP is all-X, CPMG all-Y; XY4 = X,Y,X,Y; XY8 = XY4 then YX4;
/// XY16 = XY8 then the same block with negated axes. Correlation sequences
/// read X/2 – train – Y/2 – storage – Y/2 – train – (±X)/2.
pub fn build_sequence(plan: &SequencePlan) -> Result<Vec<SymbolicItem>> {
    use Angle::*;
    use Axis::*;
    let p = |axis, angle| SymbolicItem::Pulse { axis, angle };
    let readout = p(plan.readout_axis, PiHalf);
    let mut items = vec![p(PlusX, PiHalf)];
    match plan.kind {
        SequenceKind::Ramsey => {}
        SequenceKind::Hahn => items.push(p(PlusX, Pi)),
        SequenceKind::Cp => {
            items.extend(train_axes(1, true, plan.n_pulses)?.into_iter().map(|a| p(a, Pi)));
        }
        SequenceKind::Cpmg => {
            items.extend(train_axes(1, false, plan.n_pulses)?.into_iter().map(|a| p(a, Pi)));
        }
        SequenceKind::Xy4 | SequenceKind::Xy8 | SequenceKind::Xy16 => {
            items.extend(
                train_axes(plan.block, false, plan.n_pulses)?
                    .into_iter()
                    .map(|a| p(a, Pi)),
            );
        }
        SequenceKind::Correlation | SequenceKind::CorrelationMultipulse => {
            let half = train_axes(plan.block, false, plan.n_pulses)?;
            items.extend(half.iter().map(|&a| p(a, Pi)));
            items.push(p(PlusY, PiHalf));
            if plan.kind == SequenceKind::CorrelationMultipulse {
                let m = plan.inner_m.expect("validated plan has inner_m");
                items.extend((0..m).map(|_| p(PlusY, Pi)));
            } else {
                items.push(SymbolicItem::StorageGap);
            }
            items.push(p(PlusY, PiHalf));
            items.extend(half.iter().map(|&a| p(a, Pi)));
        }
    }
    items.push(readout);
    Ok(items)
}

/// Role of a laser window in the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaserRole {
    /// Spin initialization into m_S = 0 before the sequence.
    Init,
    /// Fluorescence readout after the sequence.
    Readout,
}

/// A laser window marker. Lasers bracket the microwave sequence; they do
/// not participate in spin evolution (initialization is treated as exact).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserMarker {
    pub role: LaserRole,
    pub t_start_s: f64,
    pub duration_s: f64,
}

/// A pulse placed on the absolute time axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedEvent {
    /// Rising edge (seconds).
    pub t_start_s: f64,
    /// Pulse centre (seconds); `t_start_s + duration/2`.
    pub t_center_s: f64,
    pub pulse: PulseSpec,
}

impl TimedEvent {
    /// Falling edge (seconds).
    pub fn t_end_s(&self) -> f64 {
        self.t_start_s + self.pulse.duration_s
    }
}

/// A fully scheduled sequence: pulses at absolute times plus laser markers.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedEventList {
    pub events: Vec<TimedEvent>,
    pub lasers: Vec<LaserMarker>,
    /// Total coherent-evolution window (seconds): τ for Ramsey, N·τ for
    /// trains, 2·N·τ for the two correlation halves (storage excluded).
    pub total_sensing_s: f64,
    /// End of the schedule (seconds): falling edge of the readout laser.
    pub total_s: f64,
}

impl TimedEventList {
    /// Human-readable timing table for audit output.
    pub fn format_table(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>4}  {:>14}  {:>14}  {:>10}  {:<6}  {:<5}  {}",
            "#", "start (ns)", "center (ns)", "dur (ns)", "angle", "axis", "shape"
        );
        for (i, e) in self.events.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:>4}  {:>14.3}  {:>14.3}  {:>10.3}  {:<6}  {:<5}  {}",
                i,
                e.t_start_s * 1e9,
                e.t_center_s * 1e9,
                e.pulse.duration_s * 1e9,
                match e.pulse.angle {
                    Angle::PiHalf => "pi/2",
                    Angle::Pi => "pi",
                },
                e.pulse.axis.name(),
                e.pulse.shape.name(),
            );
        }
        let _ = writeln!(
            out,
            "sensing window: {:.3} ns, schedule end: {:.3} ns",
            self.total_sensing_s * 1e9,
            self.total_s * 1e9
        );
        out
    }
}

/// Default laser window length (seconds) for init and readout markers.
pub const DEFAULT_LASER_S: f64 = 1e-6;

/// Place a plan's pulses on the absolute time axis.
///
/// Gap preconditions for finite π pulses: every centre-to-centre τ interval
/// must leave an edge-to-edge gap of at least one π duration, equivalently
/// τ ≥ 2·(π duration); violations are domain errors naming the gap. The
/// π/2 durations extend the schedule but never eat into the τ bookkeeping
/// (τ/2 is measured from the π/2 falling edge to the π centre).
pub fn expand_timing(plan: &SequencePlan) -> Result<TimedEventList> {
    let plan = plan.clone().validated()?;
    let items = build_sequence(&plan)?;
    let tau = plan.tau_s;
    let d_half = plan.pulses.pi_half_duration_s;
    let d_pi = plan.pulses.pi_duration_s;

    // Gap checks (only bind when π pulses are finite).
    if d_pi > 0.0 {
        let needs_train = plan.kind != SequenceKind::Ramsey;
        if needs_train {
            let first_gap = tau / 2.0 - d_pi / 2.0;
            if first_gap < d_pi / 2.0 {
                return Err(Error::domain(format!(
                    "gap between the π/2 falling edge and the first π rising edge is {:.3} ns, \
                     shorter than half the π duration {:.3} ns (τ = {:.3} ns)",
                    first_gap * 1e9,
                    d_pi / 2.0 * 1e9,
                    tau * 1e9
                )));
            }
            let interior_gap = tau - d_pi;
            if plan.n_pulses > 1 && interior_gap < d_pi {
                return Err(Error::domain(format!(
                    "interior gap between adjacent π pulses is {:.3} ns, shorter than the π \
                     duration {:.3} ns (τ = {:.3} ns)",
                    interior_gap * 1e9,
                    d_pi * 1e9,
                    tau * 1e9
                )));
            }
        }
    }
    if plan.kind.is_correlation() {
        let storage = plan.storage_s().expect("validated correlation plan");
        if plan.kind == SequenceKind::Correlation && storage < d_half {
            return Err(Error::domain(format!(
                "storage interval {:.3} ns is shorter than the π/2 duration {:.3} ns",
                storage * 1e9,
                d_half * 1e9
            )));
        }
    }

    let init = LaserMarker {
        role: LaserRole::Init,
        t_start_s: 0.0,
        duration_s: DEFAULT_LASER_S,
    };
    // The first π/2 rises when the init laser ends; the coherence window
    // opens at its falling edge.
    let first_rise = init.duration_s;
    let window_open = first_rise + d_half;

    let mut events = Vec::new();
    let mut push = |t_center: f64, pulse: PulseSpec| {
        events.push(TimedEvent {
            t_start_s: t_center - pulse.duration_s / 2.0,
            t_center_s: t_center,
            pulse,
        });
    };

    let half_pulse = |axis| PulseSpec {
        axis,
        angle: Angle::PiHalf,
        shape: plan.pulses.pi_half_shape,
        duration_s: d_half,
    };
    let pi_pulse = |axis| PulseSpec {
        axis,
        angle: Angle::Pi,
        shape: plan.pulses.pi_shape,
        duration_s: d_pi,
    };

    // The initial π/2 (start-anchored; its centre is start + d/2).
    push(first_rise + d_half / 2.0, half_pulse(Axis::PlusX));

    // Walk the symbolic items after the initial π/2, maintaining the origin
    // of the current coherence window. Every π centre and window edge is a
    // single product of τ — no gap accumulation.
    let mut origin = window_open;
    let mut pi_index: u64 = 0; // π index within the current window
    let total_sensing_s;
    match plan.kind {
        SequenceKind::Ramsey => {
            total_sensing_s = tau;
        }
        _ => {
            let n = plan.n_pulses as f64;
            total_sensing_s = if plan.kind.is_correlation() {
                2.0 * (n * tau)
            } else {
                n * tau
            };
        }
    }

    for item in items.iter().skip(1) {
        match *item {
            SymbolicItem::Pulse { axis, angle: Angle::Pi } => {
                let c = origin + (2.0 * pi_index as f64 + 1.0) * (tau / 2.0);
                push(c, pi_pulse(axis));
                pi_index += 1;
            }
            SymbolicItem::Pulse { axis, angle: Angle::PiHalf } => {
                // A π/2 closes the current window; it rises where the window
                // ends and re-opens a new window at its falling edge.
                let window_len = if plan.kind == SequenceKind::Ramsey {
                    tau
                } else {
                    pi_index as f64 * tau
                };
                let rise = origin + window_len;
                push(rise + d_half / 2.0, half_pulse(axis));
                origin = rise + d_half;
                pi_index = 0;
            }
            SymbolicItem::StorageGap => {
                // Storage: plain wait; the next π/2 rises after it.
                let storage = plan.storage_s().expect("validated correlation plan");
                origin += storage;
                // Compensate: the upcoming π/2 handler adds `window_len`,
                // which is 0 here because pi_index was reset by the π/2
                // preceding the gap.
            }
        }
    }

    let last_end = events
        .last()
        .map(|e| e.t_end_s())
        .expect("every plan has pulses");
    let readout = LaserMarker {
        role: LaserRole::Readout,
        t_start_s: last_end,
        duration_s: DEFAULT_LASER_S,
    };
    let total_s = readout.t_start_s + readout.duration_s;

    // Invariant: strictly increasing, non-overlapping events.
    for w in events.windows(2) {
        if w[1].t_start_s < w[0].t_end_s() - 1e-15 {
            return Err(Error::domain(format!(
                "pulses overlap: one ends at {:.3} ns, the next starts at {:.3} ns",
                w[0].t_end_s() * 1e9,
                w[1].t_start_s * 1e9
            )));
        }
    }

    Ok(TimedEventList {
        events,
        lasers: vec![init, readout],
        total_sensing_s,
        total_s,
    })
}

/// The two phase-cycling branches of a plan: identical except the readout
/// π/2 axis (+x and −x).
pub fn phase_cycle_pair(plan: &SequencePlan) -> Result<(SequencePlan, SequencePlan)> {
    let plus = plan.clone().with_readout(Axis::PlusX)?;
    let minus = plan.clone().with_readout(Axis::MinusX)?;
    Ok((plus, minus))
}

/// Combine the two phase-cycling branches: the −x readout inverts the
/// signal, so the branches are averaged as (P₊ + (1 − P₋))/2, cancelling
/// offsets common to both.
pub fn combine_phase_cycled(p_plus: f64, p_minus: f64) -> f64 {
    0.5 * (p_plus + 1.0 - p_minus)
}

/// Carrier settings for rendering a schedule into one AWG waveform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarrierSettings {
    /// AWG sample rate (Hz).
    pub sample_rate_hz: f64,
    /// Intermediate frequency (Hz).
    pub f_if_hz: f64,
    /// Maximum renderable duration (seconds); the AWG memory limit.
    pub max_duration_s: f64,
}

impl Default for CarrierSettings {
    fn default() -> Self {
        CarrierSettings {
            sample_rate_hz: 1e9,
            f_if_hz: 100e6,
            max_duration_s: 16.2e-3,
        }
    }
}

/// Render a timed schedule into a single continuous IQ waveform.
///
/// The IF carrier phase is **absolute** (2π·f_IF·t from the waveform start)
/// so pulses stay phase-coherent in the rotating frame no matter where they
/// sit; each pulse adds its axis phase on top. Zero everywhere outside
/// pulses. All pulses must have finite durations.
pub fn sequence_to_waveform(
    timed: &TimedEventList,
    settings: &CarrierSettings,
) -> Result<IQWaveform> {
    let rate = settings.sample_rate_hz;
    if timed.total_s > settings.max_duration_s {
        return Err(Error::domain(format!(
            "schedule of {:.3} ms exceeds the waveform length limit {:.3} ms",
            timed.total_s * 1e3,
            settings.max_duration_s * 1e3
        )));
    }
    let n = (timed.total_s * rate).round() as usize;
    let mut i = vec![0.0f64; n];
    let mut q = vec![0.0f64; n];
    for e in &timed.events {
        if e.pulse.duration_s <= 0.0 {
            return Err(Error::domain(
                "cannot render ideal (zero-duration) pulses; give the plan finite pulse durations",
            ));
        }
        let env = crate::waveform::EnvelopeSpec::new(e.pulse.shape, e.pulse.duration_s, 1.0, 0.0)?;
        let theta = e.pulse.axis.phase_rad();
        let k0 = (e.t_start_s * rate).round() as usize;
        let k1 = ((e.t_end_s()) * rate).round() as usize;
        if k1 > n {
            return Err(Error::domain("pulse extends past the end of the schedule"));
        }
        for k in k0..k1 {
            let t = k as f64 / rate;
            let a = env.amplitude(t - e.t_start_s);
            let phase = 2.0 * std::f64::consts::PI * settings.f_if_hz * t + theta;
            i[k] = a * phase.cos();
            q[k] = a * phase.sin();
        }
    }
    IQWaveform::new(rate, settings.f_if_hz, 0.0, i, q)
}
