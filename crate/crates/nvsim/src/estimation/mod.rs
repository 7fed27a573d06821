//! Parameter estimation: damped least-squares fitting, spectra, and the
//! end-to-end extraction pipelines.
//!
//! The fitter is a small Levenberg–Marquardt loop over an arbitrary scalar
//! model `f(params, x)` with box bounds and fixed/free flags per parameter.
//! Jacobians come from central finite differences — every model in this crate
//! is cheap to evaluate and none of them justifies hand-written derivatives.
//! Results are reported uniformly as [`FitResult`]: named parameters,
//! covariance-based uncertainties, residual norm, iteration count, a
//! converged flag, and a free-form provenance block. Non-convergence is data
//! (`converged = false` with best-so-far values), not an error; errors are
//! reserved for structurally unusable problems.
//!
//! Submodules: [`spectrum`] for discrete Fourier spectra and peak
//! refinement, [`pipelines`] for the measurement-to-parameter workflows.

pub mod pipelines;
pub mod spectrum;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Schema tag embedded in serialized fit results.
pub const FIT_SCHEMA: &str = "nvsim-fit/1";

/// One named parameter of a completed fit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FitParameter {
    /// Parameter name (unit suffix included, e.g. `t2_s`).
    pub name: String,
    /// Fitted (or held) value.
    pub value: f64,
    /// One-sigma uncertainty from the residual covariance, when available.
    pub uncertainty: Option<f64>,
    /// True when the parameter was held fixed during the fit.
    pub fixed: bool,
}

impl FitParameter {
    /// A free parameter with a known standard error (non-finite errors are
    /// recorded as absent).
    pub fn free(name: impl Into<String>, value: f64, uncertainty: f64) -> Self {
        FitParameter {
            name: name.into(),
            value,
            uncertainty: uncertainty.is_finite().then_some(uncertainty),
            fixed: false,
        }
    }

    /// A parameter that was held at a caller-supplied value.
    pub fn held(name: impl Into<String>, value: f64) -> Self {
        FitParameter {
            name: name.into(),
            value,
            uncertainty: None,
            fixed: true,
        }
    }
}

/// Outcome of a fit (or of a closed-form estimate reported in the same
/// shape). Serializes to JSON with stable field order.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FitResult {
    /// Schema tag for the serialized form.
    pub schema: String,
    /// Parameters in problem order.
    pub parameters: Vec<FitParameter>,
    /// Euclidean norm of the final residual vector (√SSR).
    pub residual_norm: f64,
    /// Number of outer iterations performed.
    pub iterations: usize,
    /// Whether the minimizer met its convergence test.
    pub converged: bool,
    /// Free-form notes: everything needed to re-derive the result by hand.
    pub provenance: BTreeMap<String, String>,
}

impl FitResult {
    /// Assemble a result; provenance starts empty.
    pub fn new(
        parameters: Vec<FitParameter>,
        residual_norm: f64,
        iterations: usize,
        converged: bool,
    ) -> Self {
        FitResult {
            schema: FIT_SCHEMA.to_owned(),
            parameters,
            residual_norm,
            iterations,
            converged,
            provenance: BTreeMap::new(),
        }
    }

    /// Attach a textual provenance note.
    pub fn note(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.provenance.insert(key.into(), value.into());
    }

    /// Attach a numeric provenance note (shortest-roundtrip formatting).
    pub fn note_value(&mut self, key: impl Into<String>, value: f64) {
        self.provenance.insert(key.into(), format!("{value}"));
    }

    /// Look up a parameter by name.
    pub fn parameter(&self, name: &str) -> Option<&FitParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Fitted value of a named parameter.
    pub fn value(&self, name: &str) -> Option<f64> {
        self.parameter(name).map(|p| p.value)
    }

    /// Uncertainty of a named parameter, when the covariance was available.
    pub fn uncertainty(&self, name: &str) -> Option<f64> {
        self.parameter(name).and_then(|p| p.uncertainty)
    }

    /// Pretty-printed JSON (deterministic: ordered fields, sorted notes).
    pub fn to_json_pretty(&self) -> String {
        // Serialization of this struct cannot fail: all fields are plain.
        serde_json::to_string_pretty(self).expect("fit result serializes")
    }
}

/// Specification of one model parameter before fitting.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    /// Name carried through to [`FitParameter`].
    pub name: String,
    /// Starting value.
    pub initial: f64,
    /// Lower box bound (may be `-inf`).
    pub lower: f64,
    /// Upper box bound (may be `+inf`).
    pub upper: f64,
    /// Held at `initial` when true.
    pub fixed: bool,
}

impl ParamSpec {
    /// An unbounded free parameter.
    pub fn free(name: impl Into<String>, initial: f64) -> Self {
        ParamSpec {
            name: name.into(),
            initial,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            fixed: false,
        }
    }

    /// A free parameter confined to `[lower, upper]`.
    pub fn bounded(name: impl Into<String>, initial: f64, lower: f64, upper: f64) -> Self {
        ParamSpec {
            name: name.into(),
            initial,
            lower,
            upper,
            fixed: false,
        }
    }

    /// A parameter held at `value`.
    pub fn held(name: impl Into<String>, value: f64) -> Self {
        ParamSpec {
            name: name.into(),
            initial: value,
            lower: value,
            upper: value,
            fixed: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.initial.is_finite() {
            return Err(Error::domain(format!(
                "parameter {:?} has non-finite initial value {}",
                self.name, self.initial
            )));
        }
        if self.fixed {
            return Ok(());
        }
        if !(self.lower <= self.initial && self.initial <= self.upper) {
            return Err(Error::domain(format!(
                "parameter {:?}: initial {} outside bounds [{}, {}]",
                self.name, self.initial, self.lower, self.upper
            )));
        }
        if !(self.lower < self.upper) {
            return Err(Error::domain(format!(
                "parameter {:?}: empty bound interval [{}, {}]",
                self.name, self.lower, self.upper
            )));
        }
        Ok(())
    }
}

/// A least-squares problem: data, parameters, and a scalar model.
///
/// The model receives the full parameter vector (fixed entries included, in
/// spec order) and one abscissa, and returns the model ordinate; the loss is
/// the sum of squared residuals `Σ (y_i − f(p, x_i))²`.
pub struct FitProblem<F: Fn(&[f64], f64) -> f64> {
    xs: Vec<f64>,
    ys: Vec<f64>,
    params: Vec<ParamSpec>,
    model: F,
}

impl<F: Fn(&[f64], f64) -> f64> FitProblem<F> {
    /// Build and validate a problem. Non-finite data points are rejected
    /// here; use [`FitProblem::from_trace`] to drop flagged points instead.
    pub fn new(xs: &[f64], ys: &[f64], params: Vec<ParamSpec>, model: F) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::domain(format!(
                "data length mismatch: {} abscissae vs {} ordinates",
                xs.len(),
                ys.len()
            )));
        }
        if xs.is_empty() {
            return Err(Error::domain("cannot fit an empty data set"));
        }
        for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
            if !(x.is_finite() && y.is_finite()) {
                return Err(Error::domain(format!(
                    "non-finite data at point {i}: ({x}, {y}); drop flagged points first"
                )));
            }
        }
        for p in &params {
            p.validate()?;
        }
        let free = params.iter().filter(|p| !p.fixed).count();
        if free == 0 {
            return Err(Error::domain("no free parameters to fit"));
        }
        if free > xs.len() {
            return Err(Error::domain(format!(
                "{free} free parameters exceed {} data points",
                xs.len()
            )));
        }
        Ok(FitProblem {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            params,
            model,
        })
    }

    /// Build a problem from a trace's primary column, silently dropping
    /// non-finite ordinates (flagged photon-sampling points).
    pub fn from_trace(
        trace: &crate::trace::MeasurementTrace,
        params: Vec<ParamSpec>,
        model: F,
    ) -> Result<Self> {
        let mut xs = Vec::with_capacity(trace.len());
        let mut ys = Vec::with_capacity(trace.len());
        for (&x, &y) in trace.x.iter().zip(trace.primary()) {
            if y.is_finite() {
                xs.push(x);
                ys.push(y);
            }
        }
        Self::new(&xs, &ys, params, model)
    }
}

/// Knobs for the minimizer. The defaults serve every fit in this crate.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Maximum number of outer (Jacobian) iterations.
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 200,
        }
    }
}

/// Residual vector for the full parameter vector `p`.
fn residuals<F: Fn(&[f64], f64) -> f64>(problem: &FitProblem<F>, p: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        problem.xs.len(),
        problem
            .xs
            .iter()
            .zip(&problem.ys)
            .map(|(&x, &y)| y - (problem.model)(p, x)),
    )
}

/// Central-difference Jacobian of the residuals with respect to the free
/// parameters, evaluated without leaving the box bounds.
fn jacobian<F: Fn(&[f64], f64) -> f64>(
    problem: &FitProblem<F>,
    p: &[f64],
    free: &[usize],
) -> DMatrix<f64> {
    let n = problem.xs.len();
    let mut j = DMatrix::zeros(n, free.len());
    let mut work = p.to_vec();
    for (col, &k) in free.iter().enumerate() {
        let spec = &problem.params[k];
        let h = 1e-6 * p[k].abs() + 1e-9;
        let a = (p[k] - h).max(spec.lower);
        let b = (p[k] + h).min(spec.upper);
        if b <= a {
            continue; // bound interval thinner than the step; leave zero
        }
        work[k] = b;
        let r_b = residuals(problem, &work);
        work[k] = a;
        let r_a = residuals(problem, &work);
        work[k] = p[k];
        let denom = b - a;
        for i in 0..n {
            j[(i, col)] = (r_b[i] - r_a[i]) / denom;
        }
    }
    j
}

/// Minimize a [`FitProblem`] with default options.
pub fn fit<F: Fn(&[f64], f64) -> f64>(problem: &FitProblem<F>) -> Result<FitResult> {
    fit_with(problem, FitOptions::default())
}

/// Minimize a [`FitProblem`]: Levenberg–Marquardt with Marquardt diagonal
/// scaling, box-bound projection, and covariance-based uncertainties.
///
/// Deterministic for identical inputs. Returns `Err` only when the problem
/// is unusable at the starting point (non-finite residuals); running out of
/// iterations or stalling yields `converged = false` with the best-so-far
/// parameters.
pub fn fit_with<F: Fn(&[f64], f64) -> f64>(
    problem: &FitProblem<F>,
    options: FitOptions,
) -> Result<FitResult> {
    const LAMBDA_INIT: f64 = 1e-3;
    const LAMBDA_SCALE: f64 = 3.0;
    const LAMBDA_MAX: f64 = 1e12;
    const GRAD_TOL: f64 = 1e-12;
    const STEP_TOL: f64 = 1e-10;
    const SSR_REL_TOL: f64 = 1e-14;

    let free: Vec<usize> = (0..problem.params.len())
        .filter(|&i| !problem.params[i].fixed)
        .collect();
    let mut p: Vec<f64> = problem.params.iter().map(|s| s.initial).collect();
    let mut r = residuals(problem, &p);
    let mut ssr = r.norm_squared();
    if !ssr.is_finite() {
        return Err(Error::numerical(format!(
            "residuals are non-finite at the initial point (SSR = {ssr})"
        )));
    }

    let mut lambda = LAMBDA_INIT;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < options.max_iterations {
        iterations += 1;
        let j = jacobian(problem, &p, &free);
        let g = j.transpose() * &r;
        if g.amax() <= GRAD_TOL * (1.0 + ssr) {
            converged = true;
            break;
        }
        let jtj = j.transpose() * &j;

        // Inner damping loop: raise λ until a step improves the loss.
        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            let mut a = jtj.clone();
            for d in 0..free.len() {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let delta = match a.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= LAMBDA_SCALE;
                    continue;
                }
            };
            let mut trial = p.clone();
            let mut step_rel: f64 = 0.0;
            for (d, &k) in free.iter().enumerate() {
                let spec = &problem.params[k];
                trial[k] = (p[k] + delta[d]).clamp(spec.lower, spec.upper);
                step_rel = step_rel.max((trial[k] - p[k]).abs() / (p[k].abs() + 1e-12));
            }
            let r_trial = residuals(problem, &trial);
            let ssr_trial = r_trial.norm_squared();
            if ssr_trial.is_finite() && ssr_trial < ssr {
                let improvement = ssr - ssr_trial;
                p = trial;
                r = r_trial;
                ssr = ssr_trial;
                lambda = (lambda / LAMBDA_SCALE).max(1e-12);
                accepted = true;
                if step_rel < STEP_TOL || improvement <= SSR_REL_TOL * ssr.max(1e-300) {
                    converged = true;
                }
                break;
            }
            // No improvement. A vanishing proposed step means we are at a
            // minimum to working precision (bounds included): stop cleanly.
            if step_rel < STEP_TOL {
                converged = true;
                accepted = true;
                break;
            }
            lambda *= LAMBDA_SCALE;
        }
        if converged || !accepted {
            break;
        }
    }

    // Covariance at the final point: s² (JᵀJ)⁻¹ with s² = SSR / dof.
    let j = jacobian(problem, &p, &free);
    let jtj = j.transpose() * &j;
    let dof = problem.xs.len().saturating_sub(free.len());
    let sigmas: Vec<Option<f64>> = if dof >= 1 {
        let s2 = ssr / dof as f64;
        match jtj.clone().try_inverse() {
            Some(inv) => (0..free.len())
                .map(|d| {
                    let v = s2 * inv[(d, d)];
                    (v.is_finite() && v >= 0.0).then(|| v.sqrt())
                })
                .collect(),
            None => vec![None; free.len()],
        }
    } else {
        vec![None; free.len()]
    };

    let mut parameters = Vec::with_capacity(problem.params.len());
    let mut free_slot = 0;
    for (k, spec) in problem.params.iter().enumerate() {
        if spec.fixed {
            parameters.push(FitParameter::held(spec.name.clone(), p[k]));
        } else {
            parameters.push(FitParameter {
                name: spec.name.clone(),
                value: p[k],
                uncertainty: sigmas[free_slot],
                fixed: false,
            });
            free_slot += 1;
        }
    }

    let mut result = FitResult::new(parameters, ssr.sqrt(), iterations, converged);
    result.note_value("points", problem.xs.len() as f64);
    result.note_value("free_parameters", free.len() as f64);
    result.note_value("degrees_of_freedom", dof as f64);
    result.note_value("lambda_final", lambda);
    Ok(result)
}

/// Evaluate `f` on an inclusive linear grid and return the minimizing
/// abscissa and value. Ties keep the lowest abscissa. Coarse seeding helper
/// for the pipelines (and for user-driven searches over, e.g., a poorly
/// constrained resonance frequency).
pub fn grid_minimize(
    lo: f64,
    hi: f64,
    steps: usize,
    f: impl Fn(f64) -> f64,
) -> Result<(f64, f64)> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::domain(format!(
            "grid_minimize needs a finite interval with lo < hi, got [{lo}, {hi}]"
        )));
    }
    if steps < 2 {
        return Err(Error::domain("grid_minimize needs at least 2 steps"));
    }
    let dx = (hi - lo) / (steps - 1) as f64;
    let mut best = (lo, f(lo));
    for i in 1..steps {
        let x = lo + dx * i as f64;
        let y = f(x);
        if y < best.1 {
            best = (x, y);
        }
    }
    Ok(best)
}
