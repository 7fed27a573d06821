//! `nvsim` — command-line front end for the NV-magnetometry toolkit.
//!
//! Each subcommand wraps one slice of the library: `magnet` (bias-field
//! geometry), `simulate` (state-vector sweeps), `spectrum` (FFT + peaks),
//! `fit` (least-squares models), `extract` (hyperfine pipeline), `waveform`
//! (IQ synthesis), and `oracle-compare` (simulator vs. closed form).
//!
//! Conventions shared by every subcommand:
//!
//! - Flags take laboratory units (µs, ns, MHz, mT, GS/s); they are converted
//!   to the library's plain units (s, Hz) at this boundary and nowhere else.
//! - Every JSON artifact embeds the tool version, the subcommand, the full
//!   effective configuration, and the RNG seed when one was used; trace CSVs
//!   carry the same provenance in their metadata header. A run can be
//!   reproduced from its output alone.
//! - `--config file.json` supplies defaults (flag names as keys, scalars as
//!   values); explicit flags win. Unknown keys fail like unknown flags.
//! - Exit 0 means the run completed — including fits that report
//!   `converged: false`, which is a result, not a failure. Exit 2 is a
//!   usage or domain error; exit 1 is an internal numerical failure.
//! - `--out -` writes to stdout. Traces are CSV ('#'-prefixed metadata,
//!   comma-separated columns, '.' decimal); reports are pretty-printed JSON.
//! - `--threads` caps the sweep worker pool; results and output ordering do
//!   not depend on it.

use std::collections::BTreeMap;
use std::env;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use nvsim::estimation::pipelines::{
    extract_depth_pipeline, extract_hyperfine_pipeline, fit_g2, HyperfineBundle,
};
use nvsim::estimation::spectrum::{
    amplitude_spectrum, coherent_part, normalize_by_envelope, SpectrumWindow,
};
use nvsim::estimation::{fit_with, FitOptions, FitProblem, ParamSpec};
use nvsim::geometry::{
    calibrate_remanence, magnet_field, minimum_distance, CylindricalMagnet, StageGeometry,
};
use nvsim::models::{echo_model, ramsey_model, single_nucleus_dip, SpectralForm};
use nvsim::physics::{larmor_frequency, nv_transition_frequency, Transition};
use nvsim::register::{Species, SpinRegister};
use nvsim::sequences::{
    expand_timing, sequence_to_waveform, CarrierSettings, PulseTiming, SequenceKind, SequencePlan,
};
use nvsim::simulator::{
    apply_envelope, sample_photons, simulate_sweep, DecoherenceEnvelope, EnvelopeKind,
    ReadoutModel, SweepSpec,
};
use nvsim::trace::{linspace, AxisKind, MeasurementTrace};
use nvsim::waveform::{export_waveform, synthesize_iq, EnvelopeShape, EnvelopeSpec, WaveformFormat};
use nvsim::{Error, Result};

/// Schema tag written into every JSON artifact.
const ARTIFACT_SCHEMA: &str = "nvsim-artifact/1";

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

/// Simulate and analyze single-NV-center magnetometry experiments.
#[derive(Parser)]
#[command(name = "nvsim", version, max_term_width = 100)]
struct Cli {
    /// Worker threads for sweep parallelism (0 = library default). Output
    /// bytes are independent of this value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// JSON config file with per-subcommand defaults; explicit flags
    /// override file values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bias-magnet field table, mechanical clearance, and remanence
    /// calibration.
    Magnet(MagnetArgs),
    /// Evolve a spin register through a pulse-sequence sweep.
    Simulate(SimulateArgs),
    /// Amplitude spectrum and peak list of a measurement trace.
    Spectrum(SpectrumArgs),
    /// Least-squares fits: Ramsey, echo decay, photon correlation, proton
    /// depth.
    Fit(FitArgs),
    /// Hyperfine couplings from a τ-sweep / correlation / N-sweep triple.
    Extract(ExtractArgs),
    /// Render pulse envelopes or full sequences as IQ waveforms.
    #[command(subcommand)]
    Waveform(WaveformCmd),
    /// Grid comparison of the state-vector simulator against the closed-form
    /// spectrum model.
    OracleCompare(OracleArgs),
}

#[derive(Args)]
struct MagnetArgs {
    /// Remanent field B_r of the magnet (mT).
    #[arg(long, default_value_t = 1270.0)]
    b_r_mt: f64,
    /// Magnet radius (mm).
    #[arg(long, default_value_t = 10.0)]
    radius_mm: f64,
    /// Magnet height (mm).
    #[arg(long, default_value_t = 20.0)]
    height_mm: f64,
    /// Start of the distance grid (mm).
    #[arg(long, default_value_t = 5.0)]
    d_from_mm: f64,
    /// End of the distance grid (mm).
    #[arg(long, default_value_t = 60.0)]
    d_to_mm: f64,
    /// Number of grid points.
    #[arg(long, default_value_t = 111)]
    points: usize,
    /// Instead of tabulating, fit B_r to a measured field-vs-distance trace
    /// (CSV on a distance axis) and emit the fit artifact.
    #[arg(long, value_name = "TRACE")]
    calibrate: Option<PathBuf>,
    /// Output path; `-` writes to stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Spin-register description (JSON).
    #[arg(long, value_name = "FILE")]
    register: PathBuf,
    /// Sequence family.
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Inter-π spacing τ (µs); overridden point by point when sweeping τ.
    #[arg(long, default_value_t = 1.0)]
    tau_us: f64,
    /// π-pulse count N (total; per half for correlation kinds). Required for
    /// everything except Ramsey and Hahn.
    #[arg(long)]
    n_pulses: Option<u32>,
    /// Block size of correlation halves (1, 4, 8, or 16).
    #[arg(long, default_value_t = 4)]
    block: u32,
    /// Storage interval t_corr (µs); correlation kind only.
    #[arg(long)]
    t_corr_us: Option<f64>,
    /// Inner π count M; correlation-multipulse kind only.
    #[arg(long)]
    inner_m: Option<u32>,
    /// Evaluate only the +x readout instead of the phase-cycled ±x pair.
    #[arg(long)]
    no_phase_cycle: bool,
    /// Sweep axis.
    #[arg(long, value_enum)]
    sweep: SweepArg,
    /// Sweep start (µs for time axes, a count otherwise).
    #[arg(long)]
    from: f64,
    /// Sweep end, inclusive (same unit as --from).
    #[arg(long)]
    to: f64,
    /// Number of sweep points on a uniform grid.
    #[arg(long, conflicts_with = "step")]
    points: Option<usize>,
    /// Sweep step (same unit as --from); alternative to --points.
    #[arg(long)]
    step: Option<f64>,
    /// Decoherence envelope applied to the ideal trace.
    #[arg(long, value_enum)]
    envelope: Option<EnvArg>,
    /// Envelope time constant (µs); required with --envelope.
    #[arg(long)]
    t2_us: Option<f64>,
    /// Envelope stretch exponent.
    #[arg(long, default_value_t = 1.0)]
    stretch_p: f64,
    /// Sample photon counts per point instead of reporting exact
    /// probabilities.
    #[arg(long)]
    shots: Option<u32>,
    /// Mean detected photons per shot with the sensor in m_S = 0.
    #[arg(long, default_value_t = 0.05)]
    bright_per_shot: f64,
    /// Mean detected photons per shot with the sensor in m_S = −1.
    #[arg(long, default_value_t = 0.02)]
    dark_per_shot: f64,
    /// RNG seed for photon sampling; the same seed reproduces the output
    /// byte for byte.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output path; `-` writes to stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args)]
struct SpectrumArgs {
    /// Input trace (CSV).
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// FFT window.
    #[arg(long, value_enum, default_value = "hann")]
    window: WindowArg,
    /// Minimum peak amplitude relative to the strongest line.
    #[arg(long, default_value_t = 0.1)]
    prominence: f64,
    /// Map P0 to the coherent part 2·P0 − 1 before transforming.
    #[arg(long)]
    coherent: bool,
    /// Divide out a decoherence envelope before transforming.
    #[arg(long, value_enum)]
    envelope: Option<EnvArg>,
    /// Envelope time constant (µs); required with --envelope.
    #[arg(long)]
    t2_us: Option<f64>,
    /// Envelope stretch exponent.
    #[arg(long, default_value_t = 1.0)]
    stretch_p: f64,
    /// Where to write the spectrum trace (CSV); omitted = peaks only.
    #[arg(long, value_name = "FILE")]
    out_spectrum: Option<PathBuf>,
    /// Where to write the peak-list artifact; `-` writes to stdout.
    #[arg(long, default_value = "-")]
    out_peaks: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Input trace (CSV).
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Model to fit.
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Iteration cap for the least-squares solver (the g2 model manages its
    /// own).
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Ramsey: T2* seed (µs). Default: half the x-span.
    #[arg(long)]
    t2_us_seed: Option<f64>,
    /// Ramsey/echo: stretch-exponent seed. Defaults: 2 (Ramsey), 1 (echo).
    #[arg(long)]
    p_seed: Option<f64>,
    /// Ramsey: seed for the beat frequency α₂ (Hz). Default: the dominant
    /// line of the trace's own spectrum.
    #[arg(long)]
    alpha2_hz_seed: Option<f64>,
    /// Proton: spin number density of the surface layer (m⁻³); required.
    #[arg(long)]
    density_per_m3: Option<f64>,
    /// Proton: π-pulse count of the recorded sweep. Default: the trace's
    /// n_pulses metadata.
    #[arg(long)]
    n_pulses: Option<u32>,
    /// Proton: Larmor frequency (Hz). Default: predicted from --b0-mt or
    /// the trace's b0_mt metadata.
    #[arg(long)]
    f_h_hz: Option<f64>,
    /// Proton: static field (mT) for the Larmor prediction.
    #[arg(long)]
    b0_mt: Option<f64>,
    /// Proton: fit the Larmor frequency (±20%) instead of holding it.
    #[arg(long)]
    fit_f_h: bool,
    /// Output path; `-` writes to stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    /// Decoupling τ-sweep trace (CSV, τ axis).
    #[arg(long, value_name = "FILE")]
    tau_sweep: PathBuf,
    /// Correlation trace (CSV, t_corr axis).
    #[arg(long, value_name = "FILE")]
    correlation: PathBuf,
    /// Pulse-number sweep trace (CSV, N axis).
    #[arg(long, value_name = "FILE")]
    n_sweep: PathBuf,
    /// Static field (mT). Default: the τ-sweep's b0_mt metadata.
    #[arg(long)]
    b0_mt: Option<f64>,
    /// Pulse spacing of the N-sweep (µs). Default: its tau_s metadata.
    #[arg(long)]
    n_sweep_tau_us: Option<f64>,
    /// Output path; `-` writes to stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum WaveformCmd {
    /// Synthesize a single pulse envelope at the IF carrier.
    Envelope(WaveEnvelopeArgs),
    /// Render a full pulse sequence to an IQ waveform.
    Sequence(WaveSequenceArgs),
}

#[derive(Args)]
struct WaveEnvelopeArgs {
    /// Envelope shape.
    #[arg(long, value_enum)]
    shape: ShapeArg,
    /// Pulse duration (ns).
    #[arg(long)]
    duration_ns: f64,
    /// WURST amplitude exponent.
    #[arg(long, default_value_t = 20.0)]
    wurst_exponent: f64,
    /// WURST chirp span (MHz, full width).
    #[arg(long, default_value_t = 0.0)]
    chirp_span_mhz: f64,
    /// Intermediate frequency (MHz).
    #[arg(long, default_value_t = 100.0)]
    f_if_mhz: f64,
    /// IF phase offset (degrees).
    #[arg(long, default_value_t = 0.0)]
    theta_if_deg: f64,
    /// Sample rate (GS/s).
    #[arg(long, default_value_t = 1.0)]
    sample_rate_gsps: f64,
    /// Waveform file format.
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Output waveform file (stdout is reserved for the provenance
    /// artifact).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct WaveSequenceArgs {
    /// Sequence family.
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Inter-π spacing τ (µs).
    #[arg(long)]
    tau_us: f64,
    /// π-pulse count N (total; per half for correlation kinds).
    #[arg(long)]
    n_pulses: Option<u32>,
    /// Block size of correlation halves (1, 4, 8, or 16).
    #[arg(long, default_value_t = 4)]
    block: u32,
    /// Storage interval t_corr (µs); correlation kind only.
    #[arg(long)]
    t_corr_us: Option<f64>,
    /// Inner π count M; correlation-multipulse kind only.
    #[arg(long)]
    inner_m: Option<u32>,
    /// π/2 pulse duration (ns).
    #[arg(long)]
    pi_half_ns: f64,
    /// π pulse duration (ns).
    #[arg(long)]
    pi_ns: f64,
    /// Intermediate frequency (MHz).
    #[arg(long, default_value_t = 100.0)]
    f_if_mhz: f64,
    /// Sample rate (GS/s).
    #[arg(long, default_value_t = 1.0)]
    sample_rate_gsps: f64,
    /// Waveform length cap (ms).
    #[arg(long, default_value_t = 16.2)]
    max_duration_ms: f64,
    /// Waveform file format.
    #[arg(long, value_enum, default_value = "f32le")]
    format: FormatArg,
    /// Output waveform file (stdout is reserved for the provenance
    /// artifact).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// Spin-register description (JSON); must hold at least one nucleus.
    #[arg(long, value_name = "FILE")]
    register: PathBuf,
    /// Decoupling kind to compare (cp, cpmg, xy4, xy8, xy16).
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Start of the τ grid (µs).
    #[arg(long, default_value_t = 1.0)]
    tau_from_us: f64,
    /// End of the τ grid (µs).
    #[arg(long, default_value_t = 5.0)]
    tau_to_us: f64,
    /// Number of τ grid points.
    #[arg(long, default_value_t = 50)]
    tau_points: usize,
    /// Number of pulse counts; the i-th is i blocks (N = block·i).
    #[arg(long, default_value_t = 10)]
    n_count: u32,
    /// Closed-form variant(s) to compare against.
    #[arg(long, value_enum, default_value = "both")]
    form: FormArg,
    /// Agreement threshold on |simulator − closed form|.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    /// Output path; `-` writes to stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

// ---------------------------------------------------------------------------
// Flag-enum wrappers
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Ramsey,
    Hahn,
    Cp,
    Cpmg,
    Xy4,
    Xy8,
    Xy16,
    Correlation,
    CorrelationMultipulse,
}

impl KindArg {
    fn to_kind(self) -> SequenceKind {
        match self {
            KindArg::Ramsey => SequenceKind::Ramsey,
            KindArg::Hahn => SequenceKind::Hahn,
            KindArg::Cp => SequenceKind::Cp,
            KindArg::Cpmg => SequenceKind::Cpmg,
            KindArg::Xy4 => SequenceKind::Xy4,
            KindArg::Xy8 => SequenceKind::Xy8,
            KindArg::Xy16 => SequenceKind::Xy16,
            KindArg::Correlation => SequenceKind::Correlation,
            KindArg::CorrelationMultipulse => SequenceKind::CorrelationMultipulse,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SweepArg {
    /// Inter-π spacing τ.
    Tau,
    /// π-pulse count N.
    N,
    /// Correlation storage interval.
    TCorr,
    /// Inner π count of the correlation-multipulse variant.
    InnerM,
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    Hann,
    None,
}

impl WindowArg {
    fn to_window(self) -> SpectrumWindow {
        match self {
            WindowArg::Hann => SpectrumWindow::Hann,
            WindowArg::None => SpectrumWindow::None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    Ramsey,
    Echo,
    Multipulse,
}

impl EnvArg {
    fn to_kind(self) -> EnvelopeKind {
        match self {
            EnvArg::Ramsey => EnvelopeKind::Ramsey,
            EnvArg::Echo => EnvelopeKind::Echo,
            EnvArg::Multipulse => EnvelopeKind::Multipulse,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Ramsey,
    Echo,
    G2,
    Proton,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Square,
    CosineSquare,
    WurstStandard,
    WurstLiteral,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    F32le,
}

impl FormatArg {
    fn to_format(self) -> WaveformFormat {
        match self {
            FormatArg::Csv => WaveformFormat::Csv,
            FormatArg::F32le => WaveformFormat::F32Le,
        }
    }

    fn name(self) -> &'static str {
        match self {
            FormatArg::Csv => "csv",
            FormatArg::F32le => "f32le",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Validated,
    AsPrinted,
    Both,
}

impl FormArg {
    fn to_forms(self) -> Vec<SpectralForm> {
        match self {
            FormArg::Validated => vec![SpectralForm::Validated],
            FormArg::AsPrinted => vec![SpectralForm::AsPrinted],
            FormArg::Both => vec![SpectralForm::Validated, SpectralForm::AsPrinted],
        }
    }
}

// ---------------------------------------------------------------------------
// Entry point and shared plumbing
// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let raw: Vec<String> = env::args().collect();
    let args = match inject_config(raw) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("nvsim: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(&args);
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("nvsim: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nvsim: {e}");
            match e {
                Error::Numerical(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Magnet(a) => run_magnet(a, cli),
        Command::Simulate(a) => run_simulate(a, cli),
        Command::Spectrum(a) => run_spectrum(a, cli),
        Command::Fit(a) => run_fit(a, cli),
        Command::Extract(a) => run_extract(a, cli),
        Command::Waveform(WaveformCmd::Envelope(a)) => run_wave_envelope(a, cli),
        Command::Waveform(WaveformCmd::Sequence(a)) => run_wave_sequence(a, cli),
        Command::OracleCompare(a) => run_oracle(a, cli),
    }
}

/// Merge `--config file.json` into the argument list. Keys the user already
/// passed explicitly are skipped, so flags win; everything else is appended
/// as `--key value` and validated by the ordinary parser, so unknown keys
/// fail exactly like unknown flags. Booleans toggle bare flags; `false` and
/// `null` mean "absent".
fn inject_config(mut args: Vec<String>) -> std::result::Result<Vec<String>, String> {
    let path = match find_config_path(&args) {
        Some(p) => p,
        None => return Ok(args),
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
    let root: Value = serde_json::from_str(&text).map_err(|e| format!("{path}: {e}"))?;
    let obj = root
        .as_object()
        .ok_or_else(|| format!("{path}: config must be a JSON object of flag/value pairs"))?;
    let mut keys: Vec<&String> = obj.keys().collect();
    keys.sort();
    for key in keys {
        if key == "config" {
            continue;
        }
        let flag = format!("--{key}");
        let flag_eq = format!("--{key}=");
        if args.iter().any(|a| *a == flag || a.starts_with(&flag_eq)) {
            continue;
        }
        match &obj[key.as_str()] {
            Value::Bool(true) => args.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Number(n) => {
                args.push(flag);
                args.push(n.to_string());
            }
            Value::String(s) => {
                args.push(flag);
                args.push(s.clone());
            }
            other => {
                return Err(format!(
                    "{path}: key \"{key}\": config values must be scalars, got {other}"
                ));
            }
        }
    }
    Ok(args)
}

fn find_config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(rest) = a.strip_prefix("--config=") {
            return Some(rest.to_string());
        }
    }
    None
}

/// The provenance wrapper around every JSON result.
#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    schema: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a BTreeMap<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    result: T,
}

fn artifact_json<T: Serialize>(
    command: &str,
    config: &BTreeMap<String, Value>,
    seed: Option<u64>,
    result: T,
) -> String {
    let artifact = Artifact {
        schema: ARTIFACT_SCHEMA,
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        seed,
        result,
    };
    let mut text = serde_json::to_string_pretty(&artifact).expect("artifact serializes");
    text.push('\n');
    text
}

/// Write `text` to `out`, with `-` meaning stdout.
fn write_out(out: &Path, text: &str) -> Result<()> {
    if out.as_os_str() == "-" {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        lock.write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))
    } else {
        fs::write(out, text).map_err(|e| Error::io(out, e))
    }
}

/// Collect the per-command flag values plus the global flags into the
/// effective-config map embedded in every artifact.
fn cfgmap(entries: Vec<(&'static str, Value)>, cli: &Cli) -> BTreeMap<String, Value> {
    let mut map: BTreeMap<String, Value> =
        entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    map.insert("threads".to_string(), json!(cli.threads));
    map.insert("config".to_string(), j_path_opt(&cli.config));
    map
}

fn j_path(p: &Path) -> Value {
    json!(p.display().to_string())
}

fn j_path_opt(p: &Option<PathBuf>) -> Value {
    p.as_ref().map(|p| j_path(p)).unwrap_or(Value::Null)
}

/// Stamp a trace with the same provenance an artifact carries.
fn stamp_trace(trace: &mut MeasurementTrace, command: &str, config: &BTreeMap<String, Value>) {
    trace.set_meta("cli_version", env!("CARGO_PKG_VERSION"));
    trace.set_meta("cli_command", command);
    trace.set_meta(
        "cli_config",
        serde_json::to_string(config).expect("config serializes"),
    );
}

fn meta_f64(trace: &MeasurementTrace, key: &str) -> Option<f64> {
    trace.metadata.get(key).and_then(|v| v.parse().ok())
}

/// Uniform sweep grid from either a point count or a step size.
fn sweep_grid(from: f64, to: f64, points: Option<usize>, step: Option<f64>) -> Result<Vec<f64>> {
    match (points, step) {
        (Some(n), None) => linspace(from, to, n),
        (None, Some(h)) => {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::domain(format!(
                    "sweep step must be positive and finite, got {h}"
                )));
            }
            if !(from.is_finite() && to.is_finite() && to >= from) {
                return Err(Error::domain(format!(
                    "sweep range must be finite with --to ≥ --from, got [{from}, {to}]"
                )));
            }
            // Index arithmetic, not accumulation, so long grids do not drift.
            let count = ((to - from) / h + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| from + h * i as f64).collect())
        }
        (None, None) => Err(Error::domain(
            "give either --points or --step to define the sweep grid",
        )),
        (Some(_), Some(_)) => Err(Error::domain(
            "--points and --step are mutually exclusive",
        )),
    }
}

/// Build a sequence plan from the common flag set. `kind` decides which of
/// the optional knobs are actually required.
fn build_plan(
    kind: SequenceKind,
    tau_s: f64,
    n_pulses: Option<u32>,
    block: u32,
    t_corr_s: Option<f64>,
    inner_m: Option<u32>,
) -> Result<SequencePlan> {
    let need_n = || {
        n_pulses.ok_or_else(|| {
            Error::domain(format!(
                "--n-pulses is required for the {} kind",
                kind.name()
            ))
        })
    };
    match kind {
        SequenceKind::Ramsey => SequencePlan::ramsey(tau_s),
        SequenceKind::Hahn => SequencePlan::hahn(tau_s),
        SequenceKind::Correlation => {
            let t_corr = t_corr_s.ok_or_else(|| {
                Error::domain("--t-corr-us is required for the correlation kind")
            })?;
            SequencePlan::correlation(tau_s, need_n()?, block, t_corr)
        }
        SequenceKind::CorrelationMultipulse => {
            let m = inner_m.ok_or_else(|| {
                Error::domain("--inner-m is required for the correlation-multipulse kind")
            })?;
            SequencePlan::correlation_multipulse(tau_s, need_n()?, block, m)
        }
        other => SequencePlan::decoupling(other, tau_s, need_n()?),
    }
}

// ---------------------------------------------------------------------------
// magnet
// ---------------------------------------------------------------------------

fn run_magnet(a: &MagnetArgs, cli: &Cli) -> Result<()> {
    let config = cfgmap(
        vec![
            ("b-r-mt", json!(a.b_r_mt)),
            ("radius-mm", json!(a.radius_mm)),
            ("height-mm", json!(a.height_mm)),
            ("d-from-mm", json!(a.d_from_mm)),
            ("d-to-mm", json!(a.d_to_mm)),
            ("points", json!(a.points)),
            ("calibrate", j_path_opt(&a.calibrate)),
            ("out", j_path(&a.out)),
        ],
        cli,
    );
    let magnet = CylindricalMagnet::new(a.b_r_mt, a.radius_mm, a.height_mm)?;

    if let Some(path) = &a.calibrate {
        let trace = MeasurementTrace::load(path)?;
        if trace.axis != AxisKind::DistanceMm {
            return Err(Error::domain(format!(
                "calibration trace must live on a distance_mm axis, got {}",
                trace.axis.name()
            )));
        }
        let samples: Vec<(f64, f64)> = trace
            .x
            .iter()
            .copied()
            .zip(trace.primary().iter().copied())
            .collect();
        let fit = calibrate_remanence(&samples, a.radius_mm, a.height_mm)?;
        return write_out(&a.out, &artifact_json("magnet", &config, None, &fit));
    }

    let distances = linspace(a.d_from_mm, a.d_to_mm, a.points)?;
    let mut b0 = Vec::with_capacity(distances.len());
    let mut f_minus = Vec::with_capacity(distances.len());
    let mut f_plus = Vec::with_capacity(distances.len());
    for &d in &distances {
        let b = magnet_field(&magnet, d)?;
        b0.push(b);
        f_minus.push(nv_transition_frequency(b, Transition::ZeroToMinusOne)?);
        f_plus.push(nv_transition_frequency(b, Transition::ZeroToPlusOne)?);
    }
    let mut trace = MeasurementTrace::new(AxisKind::DistanceMm, distances, "b0_mt", b0)?;
    trace.push_column("f_minus_hz", f_minus)?;
    trace.push_column("f_plus_hz", f_plus)?;
    let d_min = minimum_distance(&StageGeometry::standard(), &magnet);
    trace.set_meta("d_min_mm", format!("{d_min}"));
    trace.set_meta("b_r_mt", format!("{}", a.b_r_mt));
    stamp_trace(&mut trace, "magnet", &config);
    write_out(&a.out, &trace.to_csv())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn run_simulate(a: &SimulateArgs, cli: &Cli) -> Result<()> {
    let config = cfgmap(
        vec![
            ("register", j_path(&a.register)),
            ("kind", json!(a.kind.to_kind().name())),
            ("tau-us", json!(a.tau_us)),
            ("n-pulses", json!(a.n_pulses)),
            ("block", json!(a.block)),
            ("t-corr-us", json!(a.t_corr_us)),
            ("inner-m", json!(a.inner_m)),
            ("no-phase-cycle", json!(a.no_phase_cycle)),
            ("sweep", json!(sweep_name(a.sweep))),
            ("from", json!(a.from)),
            ("to", json!(a.to)),
            ("points", json!(a.points)),
            ("step", json!(a.step)),
            ("envelope", json!(a.envelope.map(|e| e.to_kind().name()))),
            ("t2-us", json!(a.t2_us)),
            ("stretch-p", json!(a.stretch_p)),
            ("shots", json!(a.shots)),
            ("bright-per-shot", json!(a.bright_per_shot)),
            ("dark-per-shot", json!(a.dark_per_shot)),
            ("seed", json!(a.seed)),
            ("out", j_path(&a.out)),
        ],
        cli,
    );
    let register = SpinRegister::load(&a.register)?;
    let kind = a.kind.to_kind();

    // Sweep placeholders: the swept knob need not be given as a flag; seed
    // the base plan from the sweep start instead. Every point re-validates.
    let t_corr_s = a
        .t_corr_us
        .map(|v| v * 1e-6)
        .or((a.sweep == SweepArg::TCorr).then_some(a.from * 1e-6));
    let inner_m = a
        .inner_m
        .or((a.sweep == SweepArg::InnerM).then(|| a.from.round().max(1.0) as u32));
    let mut plan = build_plan(
        kind,
        a.tau_us * 1e-6,
        a.n_pulses,
        a.block,
        t_corr_s,
        inner_m,
    )?;
    if a.no_phase_cycle {
        plan.phase_cycle = false;
    }

    let values = sweep_grid(a.from, a.to, a.points, a.step)?;
    let spec = match a.sweep {
        SweepArg::Tau => SweepSpec::Tau(values.iter().map(|v| v * 1e-6).collect()),
        SweepArg::N => SweepSpec::PulseCount(values),
        SweepArg::TCorr => {
            SweepSpec::CorrelationTime(values.iter().map(|v| v * 1e-6).collect())
        }
        SweepArg::InnerM => SweepSpec::InnerPulseCount(values),
    };

    let mut trace = simulate_sweep(&register, &plan, &spec)?;
    if let Some(env_arg) = a.envelope {
        let t2 = a
            .t2_us
            .ok_or_else(|| Error::domain("--t2-us is required with --envelope"))?;
        let envelope = DecoherenceEnvelope::new(env_arg.to_kind(), t2 * 1e-6, a.stretch_p)?;
        trace = apply_envelope(&trace, &envelope)?;
    }
    let mut seed = None;
    if let Some(shots) = a.shots {
        let model = ReadoutModel::new(a.bright_per_shot, a.dark_per_shot, shots, a.seed)?;
        trace = sample_photons(&trace, &model)?;
        seed = Some(a.seed);
    }
    let _ = seed; // recorded in the trace metadata and the config map
    stamp_trace(&mut trace, "simulate", &config);
    write_out(&a.out, &trace.to_csv())
}

fn sweep_name(s: SweepArg) -> &'static str {
    match s {
        SweepArg::Tau => "tau",
        SweepArg::N => "n",
        SweepArg::TCorr => "t-corr",
        SweepArg::InnerM => "inner-m",
    }
}

// ---------------------------------------------------------------------------
// spectrum
// ---------------------------------------------------------------------------

fn run_spectrum(a: &SpectrumArgs, cli: &Cli) -> Result<()> {
    let config = cfgmap(
        vec![
            ("in", j_path(&a.input)),
            ("window", json!(window_name(a.window))),
            ("prominence", json!(a.prominence)),
            ("coherent", json!(a.coherent)),
            ("envelope", json!(a.envelope.map(|e| e.to_kind().name()))),
            ("t2-us", json!(a.t2_us)),
            ("stretch-p", json!(a.stretch_p)),
            ("out-spectrum", j_path_opt(&a.out_spectrum)),
            ("out-peaks", j_path(&a.out_peaks)),
        ],
        cli,
    );
    let mut trace = MeasurementTrace::load(&a.input)?;
    if trace.axis == AxisKind::PulseCount {
        trace = pulse_count_to_time(&trace)?;
    }
    if a.coherent {
        trace = coherent_part(&trace)?;
    }
    if let Some(env_arg) = a.envelope {
        let t2 = a
            .t2_us
            .ok_or_else(|| Error::domain("--t2-us is required with --envelope"))?;
        let envelope = DecoherenceEnvelope::new(env_arg.to_kind(), t2 * 1e-6, a.stretch_p)?;
        trace = normalize_by_envelope(&trace, &envelope)?;
    }
    let (mut spectrum, peaks) = amplitude_spectrum(&trace, a.window.to_window(), a.prominence)?;
    if let Some(path) = &a.out_spectrum {
        stamp_trace(&mut spectrum, "spectrum", &config);
        spectrum.save(path)?;
    }
    let result = json!({
        "peaks": peaks,
        "input_points": trace.len(),
        "spectrum_points": spectrum.len(),
    });
    write_out(&a.out_peaks, &artifact_json("spectrum", &config, None, result))
}

fn window_name(w: WindowArg) -> &'static str {
    match w {
        WindowArg::Hann => "hann",
        WindowArg::None => "none",
    }
}

/// Map a pulse-number sweep onto the total-time axis `N·τ` so it can be
/// Fourier transformed; the spacing comes from the trace's own metadata.
fn pulse_count_to_time(trace: &MeasurementTrace) -> Result<MeasurementTrace> {
    let tau_s = meta_f64(trace, "tau_s").ok_or_else(|| {
        Error::domain(
            "pulse-count trace lacks the tau_s metadata needed to map N onto a time axis",
        )
    })?;
    let xs: Vec<f64> = trace.x.iter().map(|&n| n * tau_s).collect();
    let mut out = MeasurementTrace::new(
        AxisKind::TimeSeconds,
        xs,
        trace.columns[0].label.clone(),
        trace.primary().to_vec(),
    )?;
    for column in &trace.columns[1..] {
        out.push_column(column.label.clone(), column.values.clone())?;
    }
    out.metadata = trace.metadata.clone();
    out.set_meta("transform", "pulse-count axis mapped to total time N*tau");
    Ok(out)
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

fn run_fit(a: &FitArgs, cli: &Cli) -> Result<()> {
    let config = cfgmap(
        vec![
            ("in", j_path(&a.input)),
            ("model", json!(model_name(a.model))),
            ("max-iter", json!(a.max_iter)),
            ("t2-us-seed", json!(a.t2_us_seed)),
            ("p-seed", json!(a.p_seed)),
            ("alpha2-hz-seed", json!(a.alpha2_hz_seed)),
            ("density-per-m3", json!(a.density_per_m3)),
            ("n-pulses", json!(a.n_pulses)),
            ("f-h-hz", json!(a.f_h_hz)),
            ("b0-mt", json!(a.b0_mt)),
            ("fit-f-h", json!(a.fit_f_h)),
            ("out", j_path(&a.out)),
        ],
        cli,
    );
    let trace = MeasurementTrace::load(&a.input)?;
    let fit = match a.model {
        ModelArg::Ramsey => fit_ramsey(a, &trace)?,
        ModelArg::Echo => fit_echo(a, &trace)?,
        ModelArg::G2 => fit_g2(&trace)?,
        ModelArg::Proton => fit_proton(a, &trace)?,
    };
    // A fit that ran out of iterations still reports honestly
    // (converged: false in the artifact); only broken inputs are errors.
    write_out(&a.out, &artifact_json("fit", &config, None, &fit))
}

fn model_name(m: ModelArg) -> &'static str {
    match m {
        ModelArg::Ramsey => "ramsey",
        ModelArg::Echo => "echo",
        ModelArg::G2 => "g2",
        ModelArg::Proton => "proton",
    }
}

/// Finite (x, y) pairs of a trace's primary column, preserving order.
fn finite_pairs(trace: &MeasurementTrace) -> Vec<(f64, f64)> {
    trace
        .x
        .iter()
        .zip(trace.primary())
        .filter(|(_, y)| y.is_finite())
        .map(|(&x, &y)| (x, y))
        .collect()
}

fn fit_ramsey(a: &FitArgs, trace: &MeasurementTrace) -> Result<nvsim::estimation::FitResult> {
    if !matches!(trace.axis, AxisKind::TauSeconds | AxisKind::TimeSeconds) {
        return Err(Error::domain(format!(
            "the Ramsey model needs a time axis (tau_s or time_s), got {}",
            trace.axis.name()
        )));
    }
    let pairs = finite_pairs(trace);
    if pairs.len() < 8 {
        return Err(Error::domain(format!(
            "the Ramsey fit needs at least 8 finite points, got {}",
            pairs.len()
        )));
    }
    let span = pairs.last().unwrap().0 - pairs.first().unwrap().0;
    let (mut y_min, mut y_max, mut y_sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &(_, y) in &pairs {
        y_min = y_min.min(y);
        y_max = y_max.max(y);
        y_sum += y;
    }
    let y_mean = y_sum / pairs.len() as f64;

    let t2_seed = match a.t2_us_seed {
        Some(v) => v * 1e-6,
        None => 0.5 * span,
    };
    let p_seed = a.p_seed.unwrap_or(2.0);
    let alpha2_seed = match a.alpha2_hz_seed {
        Some(v) => v,
        None => dominant_frequency(trace)?,
    };
    let params = vec![
        ParamSpec::bounded("t2_star_s", t2_seed, 1e-3 * t2_seed, 1e3 * t2_seed),
        ParamSpec::bounded("p", p_seed, 0.3, 5.0),
        ParamSpec::free("alpha0", 0.5 - y_mean),
        ParamSpec::free("alpha1", 0.5 * (y_max - y_min)),
        ParamSpec::bounded("alpha2_hz", alpha2_seed, 0.5 * alpha2_seed, 1.5 * alpha2_seed),
        ParamSpec::bounded("alpha3_rad", 0.0, -std::f64::consts::PI, std::f64::consts::PI),
    ];
    let problem = FitProblem::from_trace(trace, params, |p, x| {
        ramsey_model(x, p[0], p[1], [p[2], p[3], p[4], p[5]])
    })?;
    let mut fit = fit_with(&problem, FitOptions { max_iterations: a.max_iter })?;
    fit.note("model", "ramsey: 0.5 - exp(-(t/T2*)^p) * (a0 + a1*cos(2*pi*a2*t + a3))");
    fit.note_value("alpha2_seed_hz", alpha2_seed);
    Ok(fit)
}

/// Seed α₂ from the strongest line of the trace's own spectrum.
fn dominant_frequency(trace: &MeasurementTrace) -> Result<f64> {
    let (_, peaks) = amplitude_spectrum(trace, SpectrumWindow::Hann, 0.2).map_err(|e| {
        Error::domain(format!(
            "auto-seeding the beat frequency from the trace's spectrum failed ({e}); \
             pass --alpha2-hz-seed"
        ))
    })?;
    peaks.first().map(|p| p.frequency_hz).ok_or_else(|| {
        Error::domain(
            "the trace's spectrum shows no line to seed the beat frequency from; \
             pass --alpha2-hz-seed",
        )
    })
}

fn fit_echo(a: &FitArgs, trace: &MeasurementTrace) -> Result<nvsim::estimation::FitResult> {
    if trace.axis != AxisKind::TauSeconds {
        return Err(Error::domain(format!(
            "the echo model needs a tau_s axis (a Hahn τ sweep), got {}",
            trace.axis.name()
        )));
    }
    let pairs = finite_pairs(trace);
    if pairs.len() < 4 {
        return Err(Error::domain(format!(
            "the echo fit needs at least 4 finite points, got {}",
            pairs.len()
        )));
    }
    // Seed T2 where the coherence has fallen to 1/e of its half-range.
    let threshold = 0.5 + 0.5 / std::f64::consts::E;
    let span = pairs.last().unwrap().0 - pairs.first().unwrap().0;
    let t2_seed = match a.t2_us_seed {
        Some(v) => v * 1e-6,
        None => pairs
            .iter()
            .find(|&&(_, y)| y <= threshold)
            .map(|&(x, _)| x)
            .unwrap_or(span)
            .max(1e-9),
    };
    let p_seed = a.p_seed.unwrap_or(1.0);
    let params = vec![
        ParamSpec::bounded("t2_s", t2_seed, 1e-3 * t2_seed, 1e3 * t2_seed),
        ParamSpec::bounded("p", p_seed, 0.3, 5.0),
    ];
    // The trace's τ is the full coherence window of the plan; the model's
    // argument is the half-interval, hence x/2.
    let problem = FitProblem::from_trace(trace, params, |p, x| echo_model(0.5 * x, p[0], p[1]))?;
    let mut fit = fit_with(&problem, FitOptions { max_iterations: a.max_iter })?;
    fit.note("model", "echo: 0.5 * (1 + exp(-(t/T2)^p)), t = full window");
    Ok(fit)
}

fn fit_proton(a: &FitArgs, trace: &MeasurementTrace) -> Result<nvsim::estimation::FitResult> {
    let density = a.density_per_m3.ok_or_else(|| {
        Error::domain("--density-per-m3 is required for the proton model")
    })?;
    let n_pulses = a
        .n_pulses
        .or_else(|| meta_f64(trace, "n_pulses").map(|v| v as u32))
        .ok_or_else(|| {
            Error::domain(
                "--n-pulses is required (the input trace carries no n_pulses metadata)",
            )
        })?;
    let f_h_hz = match a.f_h_hz {
        Some(f) => f,
        None => {
            let b0 = a.b0_mt.or_else(|| meta_f64(trace, "b0_mt")).ok_or_else(|| {
                Error::domain(
                    "give --f-h-hz directly, or --b0-mt (or b0_mt trace metadata) \
                     to predict the proton Larmor frequency",
                )
            })?;
            larmor_frequency(Species::Proton, b0)?
        }
    };
    extract_depth_pipeline(trace, density, n_pulses, f_h_hz, a.fit_f_h)
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

fn run_extract(a: &ExtractArgs, cli: &Cli) -> Result<()> {
    let config = cfgmap(
        vec![
            ("tau-sweep", j_path(&a.tau_sweep)),
            ("correlation", j_path(&a.correlation)),
            ("n-sweep", j_path(&a.n_sweep)),
            ("b0-mt", json!(a.b0_mt)),
            ("n-sweep-tau-us", json!(a.n_sweep_tau_us)),
            ("out", j_path(&a.out)),
        ],
        cli,
    );
    let tau_sweep = MeasurementTrace::load(&a.tau_sweep)?;
    let correlation = MeasurementTrace::load(&a.correlation)?;
    let n_sweep = MeasurementTrace::load(&a.n_sweep)?;
    let b0_mt = a
        .b0_mt
        .or_else(|| meta_f64(&tau_sweep, "b0_mt"))
        .ok_or_else(|| {
            Error::domain(
                "--b0-mt is required (the τ-sweep trace carries no b0_mt metadata)",
            )
        })?;
    let n_sweep_tau_s = a
        .n_sweep_tau_us
        .map(|v| v * 1e-6)
        .or_else(|| meta_f64(&n_sweep, "tau_s"))
        .ok_or_else(|| {
            Error::domain(
                "--n-sweep-tau-us is required (the N-sweep trace carries no tau_s metadata)",
            )
        })?;
    let bundle = HyperfineBundle {
        tau_sweep: &tau_sweep,
        correlation: &correlation,
        n_sweep: &n_sweep,
        n_sweep_tau_s,
        b0_mt,
    };
    // Underdetermined extractions still produce a report (with the reasons
    // in its notes); that is a result, not an error.
    let report = extract_hyperfine_pipeline(&bundle)?;
    write_out(&a.out, &artifact_json("extract", &config, None, &report))
}

// ---------------------------------------------------------------------------
// waveform
// ---------------------------------------------------------------------------

fn run_wave_envelope(a: &WaveEnvelopeArgs, cli: &Cli) -> Result<()> {
    let config = cfgmap(
        vec![
            ("shape", json!(shape_name(a.shape))),
            ("duration-ns", json!(a.duration_ns)),
            ("wurst-exponent", json!(a.wurst_exponent)),
            ("chirp-span-mhz", json!(a.chirp_span_mhz)),
            ("f-if-mhz", json!(a.f_if_mhz)),
            ("theta-if-deg", json!(a.theta_if_deg)),
            ("sample-rate-gsps", json!(a.sample_rate_gsps)),
            ("format", json!(a.format.name())),
            ("out", j_path(&a.out)),
        ],
        cli,
    );
    let out = require_file_out(&a.out)?;
    let duration_s = a.duration_ns * 1e-9;
    let span_hz = a.chirp_span_mhz * 1e6;
    let spec = match a.shape {
        ShapeArg::Square => EnvelopeSpec::square(duration_s)?,
        ShapeArg::CosineSquare => EnvelopeSpec::cosine_square(duration_s)?,
        ShapeArg::WurstStandard => EnvelopeSpec::wurst(duration_s, a.wurst_exponent, span_hz)?,
        ShapeArg::WurstLiteral => EnvelopeSpec::new(
            EnvelopeShape::WurstLiteral,
            duration_s,
            a.wurst_exponent,
            span_hz,
        )?,
    };
    let iq = synthesize_iq(
        &spec,
        a.f_if_mhz * 1e6,
        a.theta_if_deg,
        a.sample_rate_gsps * 1e9,
    )?;
    export_waveform(&iq, out, a.format.to_format())?;
    // The waveform file's header is fixed by the import contract, so the
    // provenance artifact rides on stdout instead.
    let result = json!({
        "file": out.display().to_string(),
        "samples": iq.i.len(),
        "duration_s": iq.i.len() as f64 / iq.sample_rate_hz,
        "format": a.format.name(),
    });
    write_out(Path::new("-"), &artifact_json("waveform envelope", &config, None, result))
}

fn shape_name(s: ShapeArg) -> &'static str {
    match s {
        ShapeArg::Square => "square",
        ShapeArg::CosineSquare => "cosine-square",
        ShapeArg::WurstStandard => "wurst-standard",
        ShapeArg::WurstLiteral => "wurst-literal",
    }
}

fn require_file_out(out: &Path) -> Result<&Path> {
    if out.as_os_str() == "-" {
        return Err(Error::domain(
            "waveform output needs a file path; stdout carries the provenance artifact",
        ));
    }
    Ok(out)
}

fn run_wave_sequence(a: &WaveSequenceArgs, cli: &Cli) -> Result<()> {
    let config = cfgmap(
        vec![
            ("kind", json!(a.kind.to_kind().name())),
            ("tau-us", json!(a.tau_us)),
            ("n-pulses", json!(a.n_pulses)),
            ("block", json!(a.block)),
            ("t-corr-us", json!(a.t_corr_us)),
            ("inner-m", json!(a.inner_m)),
            ("pi-half-ns", json!(a.pi_half_ns)),
            ("pi-ns", json!(a.pi_ns)),
            ("f-if-mhz", json!(a.f_if_mhz)),
            ("sample-rate-gsps", json!(a.sample_rate_gsps)),
            ("max-duration-ms", json!(a.max_duration_ms)),
            ("format", json!(a.format.name())),
            ("out", j_path(&a.out)),
        ],
        cli,
    );
    let out = require_file_out(&a.out)?;
    let mut plan = build_plan(
        a.kind.to_kind(),
        a.tau_us * 1e-6,
        a.n_pulses,
        a.block,
        a.t_corr_us.map(|v| v * 1e-6),
        a.inner_m,
    )?;
    plan.pulses = PulseTiming::finite(a.pi_half_ns * 1e-9, a.pi_ns * 1e-9)?;
    let timed = expand_timing(&plan)?;
    let settings = CarrierSettings {
        sample_rate_hz: a.sample_rate_gsps * 1e9,
        f_if_hz: a.f_if_mhz * 1e6,
        max_duration_s: a.max_duration_ms * 1e-3,
    };
    let iq = sequence_to_waveform(&timed, &settings)?;
    export_waveform(&iq, out, a.format.to_format())?;
    let result = json!({
        "file": out.display().to_string(),
        "samples": iq.i.len(),
        "duration_s": iq.i.len() as f64 / iq.sample_rate_hz,
        "events": timed.events.len(),
        "total_sensing_s": timed.total_sensing_s,
        "format": a.format.name(),
    });
    write_out(Path::new("-"), &artifact_json("waveform sequence", &config, None, result))
}

// ---------------------------------------------------------------------------
// oracle-compare
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FormReport {
    form: &'static str,
    max_abs_deviation: f64,
    worst_tau_s: f64,
    worst_n_pulses: u32,
    /// Grid points where the form's algebra produced no valid rotation at
    /// all (possible for the as-printed variant, which carries no
    /// `P0 ∈ [0, 1]` guarantee). Excluded from the deviation maximum.
    undefined_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_undefined: Option<String>,
    within_tolerance: bool,
}

#[derive(Serialize)]
struct OracleReport {
    register: String,
    n_nuclei: usize,
    kind: &'static str,
    tau_from_s: f64,
    tau_to_s: f64,
    tau_points: usize,
    pulse_counts: Vec<u32>,
    tolerance: f64,
    forms: Vec<FormReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

fn run_oracle(a: &OracleArgs, cli: &Cli) -> Result<()> {
    let config = cfgmap(
        vec![
            ("register", j_path(&a.register)),
            ("kind", json!(a.kind.to_kind().name())),
            ("tau-from-us", json!(a.tau_from_us)),
            ("tau-to-us", json!(a.tau_to_us)),
            ("tau-points", json!(a.tau_points)),
            ("n-count", json!(a.n_count)),
            ("form", json!(form_arg_name(a.form))),
            ("tolerance", json!(a.tolerance)),
            ("out", j_path(&a.out)),
        ],
        cli,
    );
    let register = SpinRegister::load(&a.register)?;
    if register.nuclei.is_empty() {
        return Err(Error::domain(
            "oracle comparison needs at least one nucleus in the register",
        ));
    }
    let kind = a.kind.to_kind();
    if !kind.is_decoupling() {
        return Err(Error::domain(format!(
            "oracle comparison covers the decoupling kinds (cp, cpmg, xy4, xy8, xy16), got {}",
            kind.name()
        )));
    }
    if a.n_count == 0 {
        return Err(Error::domain("--n-count must be at least 1"));
    }
    let taus = linspace(a.tau_from_us * 1e-6, a.tau_to_us * 1e-6, a.tau_points)?;
    let block = kind.natural_block();
    let pulse_counts: Vec<u32> = (1..=a.n_count).map(|i| block * i).collect();

    // One simulator sweep per pulse count, reused across both forms.
    let mut sims = Vec::with_capacity(pulse_counts.len());
    for &n in &pulse_counts {
        let plan = SequencePlan::decoupling(kind, taus[0], n)?;
        let trace = simulate_sweep(&register, &plan, &SweepSpec::Tau(taus.clone()))?;
        sims.push((n, trace));
    }

    let mut forms = Vec::new();
    for form in a.form.to_forms() {
        let mut max_dev = 0.0_f64;
        let mut worst = (taus[0], pulse_counts[0]);
        let mut undefined = 0usize;
        let mut first_undefined = None;
        for (n, trace) in &sims {
            for (j, &tau) in taus.iter().enumerate() {
                let closed = match closed_p0(&register, tau, *n, form) {
                    Ok(v) => v,
                    // The as-printed transcription can produce an impossible
                    // rotation cosine; that is its failure mode, so record
                    // it instead of aborting the report. The validated form
                    // is range-guaranteed — its errors are real.
                    Err(e) if matches!(form, SpectralForm::AsPrinted) => {
                        undefined += 1;
                        first_undefined.get_or_insert_with(|| {
                            format!("tau = {tau:.4e} s, N = {n}: {e}")
                        });
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let dev = (trace.primary()[j] - closed).abs();
                if dev > max_dev {
                    max_dev = dev;
                    worst = (tau, *n);
                }
            }
        }
        forms.push(FormReport {
            form: form.name(),
            max_abs_deviation: max_dev,
            worst_tau_s: worst.0,
            worst_n_pulses: worst.1,
            undefined_points: undefined,
            first_undefined,
            within_tolerance: undefined == 0 && max_dev <= a.tolerance,
        });
    }

    let note = pulse_counts.iter().any(|n| n % 2 == 1).then(|| {
        "the grid includes odd pulse counts, where the closed form is only a \
         leading-order approximation; deviations there are expected"
            .to_string()
    });
    let report = OracleReport {
        register: format!("{:016x}", register.fingerprint()),
        n_nuclei: register.nuclei.len(),
        kind: kind.name(),
        tau_from_s: taus[0],
        tau_to_s: *taus.last().unwrap(),
        tau_points: taus.len(),
        pulse_counts,
        tolerance: a.tolerance,
        forms,
        note,
    };
    // Tolerance verdicts are data; a disagreement is reported, not raised.
    write_out(&a.out, &artifact_json("oracle-compare", &config, None, &report))
}

fn form_arg_name(f: FormArg) -> &'static str {
    match f {
        FormArg::Validated => "validated",
        FormArg::AsPrinted => "as-printed",
        FormArg::Both => "both",
    }
}

/// Closed-form survival probability of the full register: per-nucleus dips
/// combined by the independent-spin product rule of the chosen form. Each
/// nucleus precesses at its own γ·B0.
fn closed_p0(
    register: &SpinRegister,
    tau_s: f64,
    n_pulses: u32,
    form: SpectralForm,
) -> Result<f64> {
    let mut validated = 1.0;
    let mut printed = 1.0;
    for nucleus in &register.nuclei {
        let f0_hz = nucleus.gamma_hz_per_mt * register.b0_mt;
        let p = single_nucleus_dip(&nucleus.coupling, f0_hz, tau_s, n_pulses, form)?.p0;
        validated *= 2.0 * p - 1.0;
        printed *= p - 0.5;
    }
    Ok(match form {
        SpectralForm::Validated => 0.5 + 0.5 * validated,
        SpectralForm::AsPrinted => 0.5 + printed,
    })
}
