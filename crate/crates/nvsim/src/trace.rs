//! Measurement traces: sampled curves with axis semantics, provenance
//! metadata, and a diffable CSV file format.
//!
//! Every sweep, spectrum, and sampled readout in the crate flows through
//! [`MeasurementTrace`]. A trace is an x-grid with one or more named value
//! columns plus a string metadata map (register fingerprint, seed, tool
//! version, sweep configuration) that ends up in the file header, so any
//! artifact can be traced back to the exact inputs that produced it.
//!
//! # File format
//!
//! '#'-prefixed `key=value` header lines, then a column-name line, then
//! comma-separated data rows:
//!
//! ```text
//! #schema=nvsim-trace/1
//! #axis=tau_s
//! #register_hash=00c0ffee00c0ffee
//! x,p0
//! 0.000001,0.75
//! ```
//!
//! Values are written with Rust's shortest-roundtrip float formatting and
//! parsed back bit-exactly, so save → load → save is byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

/// Schema tag written as the first header line of trace files.
pub const TRACE_SCHEMA: &str = "nvsim-trace/1";

/// What the x-axis of a trace means. The serialized name doubles as the
/// unit documentation (`tau_s` is τ in seconds, and so on).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisKind {
    /// Inter-π spacing τ (seconds).
    TauSeconds,
    /// π-pulse count N (dimensionless).
    PulseCount,
    /// Correlation storage interval t_corr (seconds).
    CorrelationTime,
    /// Inner π-pulse count M of the correlation variant (dimensionless).
    InnerPulseCount,
    /// Plain frequency axis (Hz), e.g. spectra or the (2τ)⁻¹ filter axis.
    FrequencyHz,
    /// Drive detuning from resonance (Hz).
    DetuningHz,
    /// Photon-correlation delay τ_d (ns).
    DelayNs,
    /// Magnet–sample distance (mm).
    DistanceMm,
    /// Total evolution time (seconds), e.g. Nτ for pulse-number sweeps.
    TimeSeconds,
}

impl AxisKind {
    /// Stable serialized name (also names the unit).
    pub fn name(self) -> &'static str {
        match self {
            AxisKind::TauSeconds => "tau_s",
            AxisKind::PulseCount => "pulse_count",
            AxisKind::CorrelationTime => "t_corr_s",
            AxisKind::InnerPulseCount => "inner_pulse_count",
            AxisKind::FrequencyHz => "frequency_hz",
            AxisKind::DetuningHz => "detuning_hz",
            AxisKind::DelayNs => "delay_ns",
            AxisKind::DistanceMm => "distance_mm",
            AxisKind::TimeSeconds => "time_s",
        }
    }

    /// Parse a serialized axis name.
    pub fn parse(name: &str) -> Option<AxisKind> {
        Some(match name {
            "tau_s" => AxisKind::TauSeconds,
            "pulse_count" => AxisKind::PulseCount,
            "t_corr_s" => AxisKind::CorrelationTime,
            "inner_pulse_count" => AxisKind::InnerPulseCount,
            "frequency_hz" => AxisKind::FrequencyHz,
            "detuning_hz" => AxisKind::DetuningHz,
            "delay_ns" => AxisKind::DelayNs,
            "distance_mm" => AxisKind::DistanceMm,
            "time_s" => AxisKind::TimeSeconds,
            _ => return None,
        })
    }
}

/// One named value column of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    /// Column name as written in the CSV header row.
    pub label: String,
    /// Values, same length as the trace's x-grid.
    pub values: Vec<f64>,
}

/// A sampled curve with axis semantics and provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTrace {
    /// Meaning (and unit) of the x-axis.
    pub axis: AxisKind,
    /// Sample positions.
    pub x: Vec<f64>,
    /// One or more value columns, each as long as `x`.
    pub columns: Vec<Column>,
    /// Provenance: register fingerprint, seed, sweep configuration, tool
    /// version. Written into the file header in sorted key order.
    pub metadata: BTreeMap<String, String>,
}

impl MeasurementTrace {
    /// Build a single-column trace.
    pub fn new(axis: AxisKind, x: Vec<f64>, label: impl Into<String>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::domain(format!(
                "trace has {} x values but {} y values",
                x.len(),
                y.len()
            )));
        }
        Ok(MeasurementTrace {
            axis,
            x,
            columns: vec![Column {
                label: label.into(),
                values: y,
            }],
            metadata: BTreeMap::new(),
        })
    }

    /// Append an additional column of the same length.
    pub fn push_column(&mut self, label: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.x.len() {
            return Err(Error::domain(format!(
                "column has {} values but the trace has {} points",
                values.len(),
                self.x.len()
            )));
        }
        self.columns.push(Column {
            label: label.into(),
            values,
        });
        Ok(())
    }

    /// Set a metadata entry (builder style).
    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }

    /// Set a metadata entry in place.
    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.insert(key.into(), value.to_string());
    }

    /// The first (primary) value column.
    pub fn primary(&self) -> &[f64] {
        &self.columns[0].values
    }

    /// Number of sample points.
    pub fn len(&self) -> usize {
        self.x.len()
    }

    /// True when the trace has no points.
    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Look up a column by label.
    pub fn column(&self, label: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.label == label)
            .map(|c| c.values.as_slice())
    }

    /// Index of the minimum of the primary column (NaN-safe: NaNs lose).
    pub fn argmin(&self) -> Option<usize> {
        let y = self.primary();
        let mut best: Option<usize> = None;
        for (i, v) in y.iter().enumerate() {
            if v.is_nan() {
                continue;
            }
            if best.map_or(true, |b| *v < y[b]) {
                best = Some(i);
            }
        }
        best
    }

    /// Re-express a τ-sweep on the (2τ)⁻¹ filter-frequency axis.
    ///
    /// A decoupling train with spacing τ passes AC fields near (2τ)⁻¹, so
    /// dips are conventionally plotted against that frequency. The returned
    /// trace is reversed so x stays increasing. Requires strictly positive τ.
    pub fn to_filter_frequency_axis(&self) -> Result<MeasurementTrace> {
        if self.axis != AxisKind::TauSeconds {
            return Err(Error::domain(format!(
                "filter-frequency relabeling needs a tau_s axis, trace has {}",
                self.axis.name()
            )));
        }
        if self.x.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::domain(
                "filter-frequency relabeling needs strictly positive tau values",
            ));
        }
        let mut x: Vec<f64> = self.x.iter().map(|&t| 1.0 / (2.0 * t)).collect();
        x.reverse();
        let columns = self
            .columns
            .iter()
            .map(|c| {
                let mut values = c.values.clone();
                values.reverse();
                Column {
                    label: c.label.clone(),
                    values,
                }
            })
            .collect();
        Ok(MeasurementTrace {
            axis: AxisKind::FrequencyHz,
            x,
            columns,
            metadata: self.metadata.clone(),
        })
    }

    /// Serialize to the CSV format described in the module docs.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#schema={TRACE_SCHEMA}");
        let _ = writeln!(out, "#axis={}", self.axis.name());
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "#{k}={v}");
        }
        let mut header = String::from("x");
        for c in &self.columns {
            header.push(',');
            header.push_str(&c.label);
        }
        let _ = writeln!(out, "{header}");
        for i in 0..self.x.len() {
            let _ = write!(out, "{}", self.x[i]);
            for c in &self.columns {
                let _ = write!(out, ",{}", c.values[i]);
            }
            out.push('\n');
        }
        out
    }

    /// Parse the CSV format (inverse of [`MeasurementTrace::to_csv`]).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().peekable();
        let first = lines
            .next()
            .ok_or_else(|| Error::domain("empty trace file"))?;
        if first != format!("#schema={TRACE_SCHEMA}") {
            return Err(Error::domain(format!(
                "unsupported trace schema line {first:?}, expected #schema={TRACE_SCHEMA}"
            )));
        }
        let mut axis = None;
        let mut metadata = BTreeMap::new();
        while let Some(line) = lines.peek() {
            let Some(rest) = line.strip_prefix('#') else {
                break;
            };
            let (k, v) = rest.split_once('=').ok_or_else(|| {
                Error::domain(format!("malformed header line {line:?} (expected #key=value)"))
            })?;
            if k == "axis" {
                axis = Some(AxisKind::parse(v).ok_or_else(|| {
                    Error::domain(format!("unknown axis kind {v:?}"))
                })?);
            } else {
                metadata.insert(k.to_string(), v.to_string());
            }
            lines.next();
        }
        let axis = axis.ok_or_else(|| Error::domain("trace file has no #axis header"))?;
        let header = lines
            .next()
            .ok_or_else(|| Error::domain("trace file has no column header row"))?;
        let mut names = header.split(',');
        if names.next() != Some("x") {
            return Err(Error::domain(format!(
                "column header must start with 'x', got {header:?}"
            )));
        }
        let labels: Vec<String> = names.map(str::to_string).collect();
        if labels.is_empty() {
            return Err(Error::domain("trace file has no value columns"));
        }
        let mut x = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
        for (row_idx, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != labels.len() + 1 {
                return Err(Error::domain(format!(
                    "data row {} has {} fields, expected {}",
                    row_idx + 1,
                    fields.len(),
                    labels.len() + 1
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::domain(format!("unparseable number {s:?} in data row")))
            };
            x.push(parse(fields[0])?);
            for (c, f) in cols.iter_mut().zip(&fields[1..]) {
                c.push(parse(f)?);
            }
        }
        let columns = labels
            .into_iter()
            .zip(cols)
            .map(|(label, values)| Column { label, values })
            .collect();
        Ok(MeasurementTrace {
            axis,
            x,
            columns,
            metadata,
        })
    }

    /// Write the trace to a file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Read a trace from a file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Build a uniform grid of `n ≥ 2` points from `start` to `stop` inclusive.
///
/// Points are computed as `start + i·step` (not by accumulation), so grids
/// are reproducible and as exact as f64 allows.
pub fn linspace(start: f64, stop: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::domain(format!("linspace needs at least 2 points, got {n}")));
    }
    if !(start.is_finite() && stop.is_finite() && stop > start) {
        return Err(Error::domain(format!(
            "linspace needs finite start < stop, got [{start}, {stop}]"
        )));
    }
    let step = (stop - start) / (n - 1) as f64;
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_trace() -> MeasurementTrace {
        let mut t = MeasurementTrace::new(
            AxisKind::TauSeconds,
            vec![1.0e-6, 2.0e-6, 3.0e-6],
            "p0",
            vec![0.5, 0.25, 1.0],
        )
        .unwrap()
        .with_meta("seed", 42)
        .with_meta("register_hash", "00c0ffee00c0ffee");
        t.push_column("counts", vec![100.0, 50.0, 200.0]).unwrap();
        t
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let t = sample_trace();
        let text = t.to_csv();
        let back = MeasurementTrace::from_csv(&text).unwrap();
        assert_eq!(t, back);
        assert_eq!(back.to_csv(), text, "save -> load -> save must not change bytes");
    }

    #[test]
    fn csv_preserves_special_values() {
        let t = MeasurementTrace::new(
            AxisKind::DelayNs,
            vec![-1.0, 0.0, 1.0],
            "g2",
            vec![f64::NAN, 1.0e-300, 12345.678901234567],
        )
        .unwrap();
        let back = MeasurementTrace::from_csv(&t.to_csv()).unwrap();
        assert!(back.primary()[0].is_nan());
        assert_eq!(back.primary()[1], 1.0e-300);
        assert_eq!(back.primary()[2], 12345.678901234567);
    }

    #[test]
    fn mismatched_column_lengths_are_rejected() {
        let r = MeasurementTrace::new(AxisKind::PulseCount, vec![1.0, 2.0], "p0", vec![0.5]);
        assert!(r.is_err());
        let mut t = sample_trace();
        assert!(t.push_column("bad", vec![1.0]).is_err());
    }

    #[test]
    fn filter_frequency_axis_inverts_and_reverses() {
        let t = MeasurementTrace::new(
            AxisKind::TauSeconds,
            vec![1.0e-6, 2.0e-6, 4.0e-6],
            "p0",
            vec![0.1, 0.2, 0.3],
        )
        .unwrap();
        let f = t.to_filter_frequency_axis().unwrap();
        assert_eq!(f.axis, AxisKind::FrequencyHz);
        // (2·4 µs)⁻¹ = 125 kHz comes first, (2·1 µs)⁻¹ = 500 kHz last.
        assert_eq!(f.x, vec![125e3, 250e3, 500e3]);
        assert_eq!(f.primary(), &[0.3, 0.2, 0.1]);
        // Non-τ axes refuse the relabeling.
        assert!(f.to_filter_frequency_axis().is_err());
    }

    #[test]
    fn argmin_skips_nans() {
        let t = MeasurementTrace::new(
            AxisKind::TauSeconds,
            vec![1.0, 2.0, 3.0],
            "p0",
            vec![0.5, f64::NAN, 0.2],
        )
        .unwrap();
        assert_eq!(t.argmin(), Some(2));
    }

    #[test]
    fn linspace_endpoints_are_exact() {
        let g = linspace(1.0e-6, 5.0e-6, 101).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 1.0e-6);
        assert!((g[100] - 5.0e-6).abs() < 1e-18);
        assert!(linspace(1.0, 1.0, 5).is_err());
        assert!(linspace(0.0, 1.0, 1).is_err());
    }

    proptest! {
        /// Any finite trace survives the CSV round trip bit-exactly.
        #[test]
        fn csv_round_trip_random(values in proptest::collection::vec(-1.0e12f64..1.0e12, 1..40)) {
            let n = values.len();
            let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let t = MeasurementTrace::new(AxisKind::PulseCount, x, "y", values).unwrap();
            let back = MeasurementTrace::from_csv(&t.to_csv()).unwrap();
            prop_assert_eq!(t, back);
        }
    }
}
