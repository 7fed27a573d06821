//! Sample-accurate IQ waveform synthesis: pulse envelopes, single-sideband
//! phase bookkeeping, chirped adiabatic pulses, and waveform-file export.
//!
//! Microwave control reaches the sensor through an IQ mixer: the AWG plays
//! an intermediate-frequency pair
//!
//!   I(t) = A(t)·cos(2π f_IF t + θ_IF),  Q(t) = A(t)·sin(2π f_IF t + θ_IF)
//!
//! and the mixer output I·cos(2π f_LO t + θ_LO) − Q·sin(2π f_LO t + θ_LO)
//! collapses to the single sideband A(t)·cos(2π (f_LO + f_IF) t + θ_LO + θ_IF),
//! so the envelope A(t) sets the pulse shape and θ_IF sets the rotation axis
//! in the rotating frame (0°/90°/180°/270° for +x/+y/−x/−y).
//!
//! Envelope shapes: square, single-lobe cosine-square, and the WURST
//! adiabatic shape with a linear frequency chirp. The raised-cosine and
//! WURST shapes each have a "literal" variant preserved for comparison; see
//! the shape docs for why the defaults differ from those variants.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

/// Schema tag written as the first header line of waveform files.
pub const WAVEFORM_SCHEMA: &str = "nvsim-waveform/1";

/// Pulse envelope shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeShape {
    /// Constant 1 over the pulse duration.
    Square,
    /// Single-lobe raised cosine sin²(π t/T_p): zero at both edges, maximal
    /// at the centre, with exactly half the area of the square envelope.
    /// (A literal transcription cos²(2π t/T_p) would vanish at T_p/4 and
    /// describe a multi-lobe shape; the single-lobe form is what satisfies
    /// the 2:1 area ratio the shape exists for.)
    CosineSquare,
    /// WURST amplitude 1 − |cos(π t/T_w)|^w: zero at the edges, flat top.
    /// This is the standard smooth-truncation profile and the default; the
    /// adiabatic-inversion check in the simulator is the arbiter for it.
    WurstStandard,
    /// Literal variant 1 − |sin(2π t/T_w)|^w: maximal at the pulse edges.
    /// Kept for comparison only; it is not a smooth-truncation shape.
    WurstLiteral,
}

impl EnvelopeShape {
    /// Stable name for file headers and CLI flags.
    pub fn name(self) -> &'static str {
        match self {
            EnvelopeShape::Square => "square",
            EnvelopeShape::CosineSquare => "cosine-square",
            EnvelopeShape::WurstStandard => "wurst-standard",
            EnvelopeShape::WurstLiteral => "wurst-literal",
        }
    }

    /// Parse a shape name (inverse of [`EnvelopeShape::name`]).
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "square" => EnvelopeShape::Square,
            "cosine-square" => EnvelopeShape::CosineSquare,
            "wurst-standard" => EnvelopeShape::WurstStandard,
            "wurst-literal" => EnvelopeShape::WurstLiteral,
            _ => return None,
        })
    }

    /// True for the two WURST variants (which may carry a chirp).
    pub fn is_wurst(self) -> bool {
        matches!(self, EnvelopeShape::WurstStandard | EnvelopeShape::WurstLiteral)
    }
}

/// A fully specified pulse envelope: shape, duration, and (for WURST) the
/// exponent and symmetric chirp span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeSpec {
    pub shape: EnvelopeShape,
    /// Pulse duration T_p or T_w (seconds).
    pub duration_s: f64,
    /// WURST exponent w; ignored by non-WURST shapes.
    pub wurst_exponent: f64,
    /// Full chirp span (Hz); the instantaneous frequency ramps linearly from
    /// −span/2 to +span/2 over the duration. Must be 0 for non-WURST shapes.
    pub chirp_span_hz: f64,
}

impl EnvelopeSpec {
    /// A square envelope of the given duration.
    pub fn square(duration_s: f64) -> Result<Self> {
        Self::new(EnvelopeShape::Square, duration_s, 1.0, 0.0)
    }

    /// A single-lobe cosine-square envelope.
    pub fn cosine_square(duration_s: f64) -> Result<Self> {
        Self::new(EnvelopeShape::CosineSquare, duration_s, 1.0, 0.0)
    }

    /// The default WURST envelope with exponent `w` and full chirp span.
    pub fn wurst(duration_s: f64, wurst_exponent: f64, chirp_span_hz: f64) -> Result<Self> {
        Self::new(
            EnvelopeShape::WurstStandard,
            duration_s,
            wurst_exponent,
            chirp_span_hz,
        )
    }

    /// Build any shape with full validation.
    pub fn new(
        shape: EnvelopeShape,
        duration_s: f64,
        wurst_exponent: f64,
        chirp_span_hz: f64,
    ) -> Result<Self> {
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(Error::domain(format!(
                "envelope duration must be positive and finite, got {duration_s} s"
            )));
        }
        if !(wurst_exponent.is_finite() && wurst_exponent > 0.0) {
            return Err(Error::domain(format!(
                "wurst exponent must be positive and finite, got {wurst_exponent}"
            )));
        }
        if !chirp_span_hz.is_finite() {
            return Err(Error::domain("chirp span must be finite"));
        }
        if !shape.is_wurst() && chirp_span_hz != 0.0 {
            return Err(Error::domain(format!(
                "shape {} cannot carry a chirp (span {chirp_span_hz} Hz given)",
                shape.name()
            )));
        }
        Ok(EnvelopeSpec {
            shape,
            duration_s,
            wurst_exponent,
            chirp_span_hz,
        })
    }

    /// Continuous-time amplitude A(t) ∈ [0, 1]; zero outside [0, T].
    pub fn amplitude(&self, t_s: f64) -> f64 {
        if !(0.0..=self.duration_s).contains(&t_s) {
            return 0.0;
        }
        let frac = t_s / self.duration_s;
        match self.shape {
            EnvelopeShape::Square => 1.0,
            EnvelopeShape::CosineSquare => {
                let s = (std::f64::consts::PI * frac).sin();
                s * s
            }
            EnvelopeShape::WurstStandard => {
                1.0 - (std::f64::consts::PI * frac).cos().abs().powf(self.wurst_exponent)
            }
            EnvelopeShape::WurstLiteral => {
                1.0 - (2.0 * std::f64::consts::PI * frac).sin().abs().powf(self.wurst_exponent)
            }
        }
    }

    /// Instantaneous frequency offset (Hz) of the chirp at time `t_s`:
    /// a linear ramp from −span/2 at t=0 to +span/2 at t=T, zero outside
    /// the pulse and for chirp-free shapes.
    pub fn instantaneous_detuning(&self, t_s: f64) -> f64 {
        if self.chirp_span_hz == 0.0 || !(0.0..=self.duration_s).contains(&t_s) {
            return 0.0;
        }
        self.chirp_span_hz * (t_s / self.duration_s - 0.5)
    }

    /// Accumulated chirp phase (radians) at time `t_s`: the exact integral
    /// 2π·∫₀ᵗ Δf(t′) dt′ of the linear ramp, not a per-sample summation, so
    /// the phase is continuous at any sample rate.
    pub fn chirp_phase(&self, t_s: f64) -> f64 {
        if self.chirp_span_hz == 0.0 {
            return 0.0;
        }
        let t = t_s.clamp(0.0, self.duration_s);
        2.0 * std::f64::consts::PI
            * self.chirp_span_hz
            * (t * t / (2.0 * self.duration_s) - 0.5 * t)
    }

    /// Number of samples the envelope occupies at `sample_rate_hz`.
    fn sample_count(&self, sample_rate_hz: f64) -> Result<usize> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::domain(format!(
                "sample rate must be positive and finite, got {sample_rate_hz} Hz"
            )));
        }
        let n = (self.duration_s * sample_rate_hz).round() as usize;
        if n < 2 {
            return Err(Error::domain(format!(
                "envelope of {} s spans {n} samples at {sample_rate_hz} Hz; need at least 2",
                self.duration_s
            )));
        }
        Ok(n)
    }
}

/// Sample the envelope amplitude on the uniform grid t_k = k/rate,
/// k = 0..⌈T·rate⌉−1.
pub fn render_envelope(spec: &EnvelopeSpec, sample_rate_hz: f64) -> Result<Vec<f64>> {
    let n = spec.sample_count(sample_rate_hz)?;
    Ok((0..n)
        .map(|k| spec.amplitude(k as f64 / sample_rate_hz))
        .collect())
}

/// An IQ sample pair ready for an AWG: envelope and phase folded into two
/// equal-length channels at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct IQWaveform {
    /// AWG sample rate (Hz).
    pub sample_rate_hz: f64,
    /// Intermediate (sideband) frequency (Hz).
    pub f_if_hz: f64,
    /// IF phase offset (degrees); encodes the rotation axis.
    pub theta_if_deg: f64,
    /// In-phase channel, |samples| ≤ 1.
    pub i: Vec<f64>,
    /// Quadrature channel, same length as `i`, |samples| ≤ 1.
    pub q: Vec<f64>,
}

impl IQWaveform {
    /// Build a waveform from raw channels, validating the invariants.
    pub fn new(
        sample_rate_hz: f64,
        f_if_hz: f64,
        theta_if_deg: f64,
        i: Vec<f64>,
        q: Vec<f64>,
    ) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::domain(format!(
                "sample rate must be positive and finite, got {sample_rate_hz} Hz"
            )));
        }
        if i.len() != q.len() {
            return Err(Error::domain(format!(
                "I and Q channels differ in length: {} vs {}",
                i.len(),
                q.len()
            )));
        }
        if i.iter().chain(&q).any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-12) {
            return Err(Error::domain(
                "IQ samples must be finite with magnitude at most 1",
            ));
        }
        Ok(IQWaveform {
            sample_rate_hz,
            f_if_hz,
            theta_if_deg,
            i,
            q,
        })
    }

    /// An all-zero waveform of `n` samples.
    pub fn silence(sample_rate_hz: f64, f_if_hz: f64, n: usize) -> Result<Self> {
        IQWaveform::new(sample_rate_hz, f_if_hz, 0.0, vec![0.0; n], vec![0.0; n])
    }

    /// Number of samples per channel.
    pub fn len(&self) -> usize {
        self.i.len()
    }

    /// True when the waveform holds no samples.
    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    /// Total duration (seconds).
    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }
}

/// Synthesize the IQ pair for one pulse envelope:
///
///   I[k] = A(t_k)·cos(2π f_IF t_k + θ_IF + φ_chirp(t_k))
///   Q[k] = A(t_k)·sin(2π f_IF t_k + θ_IF + φ_chirp(t_k))
///
/// with t_k = k/rate. For WURST specs the chirp phase is the exact integral
/// of the linear frequency ramp.
pub fn synthesize_iq(
    spec: &EnvelopeSpec,
    f_if_hz: f64,
    theta_if_deg: f64,
    sample_rate_hz: f64,
) -> Result<IQWaveform> {
    let n = spec.sample_count(sample_rate_hz)?;
    let theta = theta_if_deg.to_radians();
    let mut i = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / sample_rate_hz;
        let a = spec.amplitude(t);
        let phase = 2.0 * std::f64::consts::PI * f_if_hz * t + theta + spec.chirp_phase(t);
        i.push(a * phase.cos());
        q.push(a * phase.sin());
    }
    IQWaveform::new(sample_rate_hz, f_if_hz, theta_if_deg, i, q)
}

/// Digital single-sideband mix: out[k] = I[k]·cos(2π f_LO t_k + θ_LO) −
/// Q[k]·sin(2π f_LO t_k + θ_LO), which by the product-to-sum identity equals
/// A(t_k)·cos(2π (f_LO+f_IF) t_k + θ_LO+θ_IF) exactly.
///
/// The output sample rate is explicit so the Nyquist constraint on the
/// upconverted frequency is part of the call contract; it must equal the IQ
/// rate (the mix is evaluated on the IQ grid — this routine does not
/// resample).
pub fn upconvert(
    iq: &IQWaveform,
    f_lo_hz: f64,
    theta_lo_deg: f64,
    output_rate_hz: f64,
) -> Result<Vec<f64>> {
    if output_rate_hz != iq.sample_rate_hz {
        return Err(Error::domain(format!(
            "output rate {output_rate_hz} Hz must equal the IQ sample rate {} Hz; \
             upconversion is evaluated on the IQ grid",
            iq.sample_rate_hz
        )));
    }
    let f_up = f_lo_hz + iq.f_if_hz;
    if 2.0 * f_up >= output_rate_hz {
        return Err(Error::domain(format!(
            "upconverted frequency {f_up} Hz is not below the Nyquist limit {} Hz",
            output_rate_hz / 2.0
        )));
    }
    let theta = theta_lo_deg.to_radians();
    Ok((0..iq.len())
        .map(|k| {
            let t = k as f64 / iq.sample_rate_hz;
            let ph = 2.0 * std::f64::consts::PI * f_lo_hz * t + theta;
            iq.i[k] * ph.cos() - iq.q[k] * ph.sin()
        })
        .collect())
}

/// On-disk representation of a waveform file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveformFormat {
    /// Decimal CSV rows `i,q`; preserves f64 samples exactly.
    Csv,
    /// Interleaved little-endian 32-bit floats; compact, quantizes samples
    /// to f32 (re-export of an imported file is byte-identical).
    F32Le,
}

impl WaveformFormat {
    fn name(self) -> &'static str {
        match self {
            WaveformFormat::Csv => "csv",
            WaveformFormat::F32Le => "f32le",
        }
    }
}

fn waveform_header(iq: &IQWaveform, format: WaveformFormat) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "#schema={WAVEFORM_SCHEMA}");
    let _ = writeln!(h, "#format={}", format.name());
    let _ = writeln!(h, "#sample_rate_hz={}", iq.sample_rate_hz);
    let _ = writeln!(h, "#f_if_hz={}", iq.f_if_hz);
    let _ = writeln!(h, "#theta_if_deg={}", iq.theta_if_deg);
    let _ = writeln!(h, "#channels=2");
    let _ = writeln!(h, "#samples={}", iq.len());
    let _ = writeln!(h, "#end-header");
    h
}

/// Write a two-channel waveform file in the chosen format. The header is
/// text either way; see [`WaveformFormat`] for the sample encodings.
pub fn export_waveform(
    iq: &IQWaveform,
    path: impl AsRef<Path>,
    format: WaveformFormat,
) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = waveform_header(iq, format).into_bytes();
    match format {
        WaveformFormat::Csv => {
            let mut body = String::new();
            for k in 0..iq.len() {
                let _ = writeln!(body, "{},{}", iq.i[k], iq.q[k]);
            }
            bytes.extend_from_slice(body.as_bytes());
        }
        WaveformFormat::F32Le => {
            for k in 0..iq.len() {
                bytes.extend_from_slice(&(iq.i[k] as f32).to_le_bytes());
                bytes.extend_from_slice(&(iq.q[k] as f32).to_le_bytes());
            }
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a waveform file written by [`export_waveform`], auto-detecting the
/// sample encoding from the `#format` header field.
pub fn import_waveform(path: impl AsRef<Path>) -> Result<IQWaveform> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        message: msg,
    };

    // The header is newline-terminated text up to and including "#end-header".
    let mut offset = 0usize;
    let mut fields: std::collections::BTreeMap<String, String> = Default::default();
    loop {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err("truncated header".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| parse_err("non-UTF-8 header line".into()))?;
        offset += nl + 1;
        if line == "#end-header" {
            break;
        }
        let kv = line
            .strip_prefix('#')
            .and_then(|r| r.split_once('='))
            .ok_or_else(|| parse_err(format!("malformed header line {line:?}")))?;
        fields.insert(kv.0.to_string(), kv.1.to_string());
    }
    if fields.get("schema").map(String::as_str) != Some(WAVEFORM_SCHEMA) {
        return Err(parse_err(format!(
            "unsupported schema {:?}",
            fields.get("schema")
        )));
    }
    let num = |key: &str| -> Result<f64> {
        fields
            .get(key)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| parse_err(format!("missing or unparseable header field {key}")))
    };
    let sample_rate_hz = num("sample_rate_hz")?;
    let f_if_hz = num("f_if_hz")?;
    let theta_if_deg = num("theta_if_deg")?;
    let samples = num("samples")? as usize;
    let format = fields
        .get("format")
        .map(String::as_str)
        .ok_or_else(|| parse_err("missing format field".into()))?;

    let (i, q) = match format {
        "csv" => {
            let body = std::str::from_utf8(&bytes[offset..])
                .map_err(|_| parse_err("non-UTF-8 CSV body".into()))?;
            let mut i = Vec::with_capacity(samples);
            let mut q = Vec::with_capacity(samples);
            for line in body.lines() {
                if line.is_empty() {
                    continue;
                }
                let (a, b) = line
                    .split_once(',')
                    .ok_or_else(|| parse_err(format!("malformed sample row {line:?}")))?;
                i.push(
                    a.parse::<f64>()
                        .map_err(|_| parse_err(format!("unparseable sample {a:?}")))?,
                );
                q.push(
                    b.parse::<f64>()
                        .map_err(|_| parse_err(format!("unparseable sample {b:?}")))?,
                );
            }
            (i, q)
        }
        "f32le" => {
            let body = &bytes[offset..];
            if body.len() != samples * 8 {
                return Err(parse_err(format!(
                    "binary body holds {} bytes, expected {} for {} samples",
                    body.len(),
                    samples * 8,
                    samples
                )));
            }
            let mut i = Vec::with_capacity(samples);
            let mut q = Vec::with_capacity(samples);
            for chunk in body.chunks_exact(8) {
                i.push(f32::from_le_bytes(chunk[0..4].try_into().unwrap()) as f64);
                q.push(f32::from_le_bytes(chunk[4..8].try_into().unwrap()) as f64);
            }
            (i, q)
        }
        other => return Err(parse_err(format!("unknown format {other:?}"))),
    };
    if i.len() != samples {
        return Err(parse_err(format!(
            "file declares {samples} samples but carries {}",
            i.len()
        )));
    }
    IQWaveform::new(sample_rate_hz, f_if_hz, theta_if_deg, i, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn square_envelope_renders_unit_samples() {
        // 48 ns at 1 GS/s: exactly 48 unit samples.
        let spec = EnvelopeSpec::square(48e-9).unwrap();
        let a = render_envelope(&spec, 1e9).unwrap();
        assert_eq!(a.len(), 48);
        assert!(a.iter().all(|&v| v == 1.0));
        // Sub-sample durations are rejected.
        assert!(render_envelope(&EnvelopeSpec::square(1e-9).unwrap(), 1e9).is_err());
    }

    #[test]
    fn cosine_square_has_half_the_area() {
        let rate = 1e9;
        let sq = render_envelope(&EnvelopeSpec::square(200e-9).unwrap(), rate).unwrap();
        let cs = render_envelope(&EnvelopeSpec::cosine_square(200e-9).unwrap(), rate).unwrap();
        let area = |v: &[f64]| v.iter().sum::<f64>();
        let ratio = area(&sq) / area(&cs);
        // The discrete sin² sum is exactly n/2, so the ratio is exact up to
        // floating-point rounding.
        assert!((ratio - 2.0).abs() < 1e-12, "area ratio {ratio}");
    }

    #[test]
    fn wurst_standard_edge_and_center_amplitudes() {
        let spec = EnvelopeSpec::wurst(2e-6, 2.0, 20e6).unwrap();
        assert_eq!(spec.amplitude(0.0), 0.0);
        assert!(spec.amplitude(2e-6).abs() < 1e-12);
        assert!((spec.amplitude(1e-6) - 1.0).abs() < 1e-12);
        // The literal variant peaks at the edges instead.
        let lit = EnvelopeSpec::new(EnvelopeShape::WurstLiteral, 2e-6, 2.0, 20e6).unwrap();
        assert_eq!(lit.amplitude(0.0), 1.0);
    }

    #[test]
    fn non_wurst_shapes_reject_chirp() {
        assert!(EnvelopeSpec::new(EnvelopeShape::Square, 1e-6, 1.0, 1e6).is_err());
    }

    #[test]
    fn if_carrier_has_ten_samples_per_cycle() {
        // 100 MHz at 1 GS/s: I repeats every 10 samples under a flat envelope.
        let spec = EnvelopeSpec::square(100e-9).unwrap();
        let iq = synthesize_iq(&spec, 100e6, 0.0, 1e9).unwrap();
        assert_eq!(iq.len(), 100);
        for k in 0..iq.len() - 10 {
            assert!(
                (iq.i[k] - iq.i[k + 10]).abs() < 1e-12,
                "I not 10-sample periodic at {k}"
            );
        }
        // θ_IF = 0: the first sample is (A, 0).
        assert_eq!(iq.i[0], 1.0);
        assert_eq!(iq.q[0], 0.0);
    }

    #[test]
    fn upconvert_matches_closed_form() {
        let spec = EnvelopeSpec::square(500e-9).unwrap();
        let (f_if, f_lo, rate) = (100e6, 300e6, 1e9);
        for theta_if in [0.0, 90.0, 217.0] {
            let iq = synthesize_iq(&spec, f_if, theta_if, rate).unwrap();
            let out = upconvert(&iq, f_lo, 30.0, rate).unwrap();
            for (k, &o) in out.iter().enumerate() {
                let t = k as f64 / rate;
                let expect = (2.0 * std::f64::consts::PI * (f_lo + f_if) * t
                    + (30.0 + theta_if).to_radians())
                .cos();
                assert!(
                    (o - expect).abs() < 1e-12,
                    "sample {k}: {o} vs {expect} (theta_if {theta_if})"
                );
            }
        }
        // Nyquist violations and rate mismatches are rejected.
        let iq = synthesize_iq(&spec, f_if, 0.0, rate).unwrap();
        assert!(upconvert(&iq, 450e6, 0.0, rate).is_err());
        assert!(upconvert(&iq, 300e6, 0.0, 2e9).is_err());
    }

    #[test]
    fn chirp_sweeps_linearly() {
        // T_w = 2 µs, span 20 MHz: finite-difference instantaneous frequency
        // of the IQ pair tracks f_IF + span·(t/T_w − ½) to well under 0.5%
        // of the span (the phase is quadratic, so the central difference is
        // exact up to rounding).
        let rate = 1e9;
        let span = 20e6;
        let f_if = 100e6;
        let spec = EnvelopeSpec::wurst(2e-6, 2.0, span).unwrap();
        let iq = synthesize_iq(&spec, f_if, 0.0, rate).unwrap();
        let n = iq.len();
        // Unwrapped phase from atan2; amplitude is positive strictly inside
        // the pulse, so the angle is well defined except at the two edges.
        let mut phase = Vec::with_capacity(n);
        let mut prev = 0.0f64;
        let mut acc = 0.0f64;
        for k in 0..n {
            let raw = iq.q[k].atan2(iq.i[k]);
            if k > 0 {
                let mut d = raw - prev;
                while d > std::f64::consts::PI {
                    d -= 2.0 * std::f64::consts::PI;
                }
                while d < -std::f64::consts::PI {
                    d += 2.0 * std::f64::consts::PI;
                }
                acc += d;
            } else {
                acc = raw;
            }
            prev = raw;
            phase.push(acc);
        }
        let mut worst: f64 = 0.0;
        for k in 1..n - 1 {
            let f_fd = (phase[k + 1] - phase[k - 1]) * rate / (4.0 * std::f64::consts::PI);
            let t = k as f64 / rate;
            let f_ideal = f_if + span * (t / 2e-6 - 0.5);
            worst = worst.max((f_fd - f_ideal).abs());
        }
        assert!(
            worst < 0.005 * span,
            "worst chirp deviation {worst} Hz exceeds 0.5% of span"
        );
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = EnvelopeSpec::cosine_square(200e-9).unwrap();
        let iq = synthesize_iq(&spec, 100e6, 90.0, 1e9).unwrap();

        // CSV preserves the f64 samples exactly.
        let p = dir.path().join("wave.csv");
        export_waveform(&iq, &p, WaveformFormat::Csv).unwrap();
        let back = import_waveform(&p).unwrap();
        assert_eq!(back, iq);

        // Binary quantizes to f32 once; re-export is byte-identical.
        let pb = dir.path().join("wave.f32");
        export_waveform(&iq, &pb, WaveformFormat::F32Le).unwrap();
        let b1 = import_waveform(&pb).unwrap();
        let pb2 = dir.path().join("wave2.f32");
        export_waveform(&b1, &pb2, WaveformFormat::F32Le).unwrap();
        assert_eq!(
            std::fs::read(&pb).unwrap(),
            std::fs::read(&pb2).unwrap(),
            "binary round trip must stabilize after one import"
        );
        for k in 0..iq.len() {
            assert!((b1.i[k] - iq.i[k]).abs() <= f32::EPSILON as f64);
        }
    }

    #[test]
    fn empty_waveform_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let iq = IQWaveform::silence(1e9, 100e6, 0).unwrap();
        let p = dir.path().join("empty.csv");
        export_waveform(&iq, &p, WaveformFormat::Csv).unwrap();
        assert_eq!(import_waveform(&p).unwrap().len(), 0);
    }

    #[test]
    fn full_length_sequence_is_accepted() {
        // 16.2 ms at 1 GS/s: 16.2 million samples per channel. Allocation
        // and export must handle it; the file is ~130 MB as f32 pairs, so
        // this test only builds the waveform and checks the sample count.
        let n = (16.2e-3 * 1e9_f64).round() as usize;
        let iq = IQWaveform::silence(1e9, 100e6, n).unwrap();
        assert_eq!(iq.len(), 16_200_000);
        assert!((iq.duration_s() - 16.2e-3).abs() < 1e-12);
    }

    proptest! {
        /// Synthesized IQ magnitudes never exceed 1 for any shape/config.
        #[test]
        fn iq_samples_bounded(
            shape_idx in 0usize..4,
            dur_ns in 10.0f64..5000.0,
            w in 0.5f64..20.0,
            theta in 0.0f64..360.0,
        ) {
            let shape = [
                EnvelopeShape::Square,
                EnvelopeShape::CosineSquare,
                EnvelopeShape::WurstStandard,
                EnvelopeShape::WurstLiteral,
            ][shape_idx];
            let span = if shape.is_wurst() { 20e6 } else { 0.0 };
            let spec = EnvelopeSpec::new(shape, dur_ns * 1e-9, w, span).unwrap();
            let iq = synthesize_iq(&spec, 100e6, theta, 1e9).unwrap();
            for k in 0..iq.len() {
                prop_assert!(iq.i[k].abs() <= 1.0 + 1e-12);
                prop_assert!(iq.q[k].abs() <= 1.0 + 1e-12);
                // |I+iQ| = A ≤ 1 as well.
                prop_assert!((iq.i[k].powi(2) + iq.q[k].powi(2)).sqrt() <= 1.0 + 1e-12);
            }
        }
    }
}
