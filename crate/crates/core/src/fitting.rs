//! Nonlinear least squares for the lineshapes used by the experiments:
//! exponential decays, damped sinusoids, Lorentzian and Gaussian lines and
//! straight lines.
//!
//! Levenberg-Marquardt with Marquardt's diagonal scaling, started from a
//! deterministic heuristic guess. Same input, same output.

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {needed} points for {model}, got {found}")]
    TooFewPoints { model: Model, needed: usize, found: usize },
    #[error("x values must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("non-finite data at index {0}")]
    NonFinite(usize),
    #[error("weights length {found} does not match data length {expected}")]
    WeightsLength { expected: usize, found: usize },
    #[error("fwhm is defined for LORENTZIAN and GAUSSIAN fits, not {0}")]
    NoWidth(Model),
    #[error("fit did not converge (residual norm {0:.3e})")]
    NotConverged(f64),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Model {
    ExpDecay,
    DampedSine,
    Lorentzian,
    Gaussian,
    Line,
}

impl Model {
    pub const ALL: [Model; 5] = [Model::ExpDecay, Model::DampedSine, Model::Lorentzian, Model::Gaussian, Model::Line];

    pub fn id(&self) -> &'static str {
        match self {
            Model::ExpDecay => "exp_decay",
            Model::DampedSine => "damped_sine",
            Model::Lorentzian => "lorentzian",
            Model::Gaussian => "gaussian",
            Model::Line => "line",
        }
    }

    fn base_params(&self) -> &'static [&'static str] {
        match self {
            Model::ExpDecay => &["amplitude", "tau", "offset"],
            Model::DampedSine => &["amplitude", "frequency", "phase", "decay_rate", "offset"],
            Model::Lorentzian => &["amplitude", "center", "hwhm", "offset"],
            Model::Gaussian => &["amplitude", "center", "sigma", "offset"],
            Model::Line => &["slope", "intercept"],
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id().to_uppercase())
    }
}

impl FromStr for Model {
    type Err = FitError;
    fn from_str(s: &str) -> Result<Self, FitError> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Model::ALL
            .into_iter()
            .find(|m| m.id() == key)
            .ok_or_else(|| FitError::UnknownModel(s.to_string()))
    }
}

/// Treatment of the stretch exponent β in `A·exp(−(x/τ)^β) + C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stretch {
    Fixed(f64),
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub stretch: Stretch,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { stretch: Stretch::Fixed(1.0), max_iterations: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: Model,
    pub params: BTreeMap<String, ParamEstimate>,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub diagnostics: Vec<String>,
}

impl FitResult {
    /// Fitted value of a named parameter.
    pub fn value(&self, name: &str) -> Option<f64> {
        self.params.get(name).map(|p| p.value)
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.params.get(name).map(|p| p.std_error)
    }
}

/// Parameterized lineshape with its analytic gradient.
struct Shape {
    model: Model,
    stretch: Stretch,
}

impl Shape {
    fn names(&self) -> Vec<&'static str> {
        let mut names = self.model.base_params().to_vec();
        if self.model == Model::ExpDecay && self.stretch == Stretch::Free {
            names.push("stretch");
        }
        names
    }

    fn eval(&self, p: &[f64], x: f64, grad: Option<&mut [f64]>) -> f64 {
        match self.model {
            Model::ExpDecay => {
                let (a, tau, c) = (p[0], p[1], p[2]);
                let beta = match self.stretch {
                    Stretch::Fixed(b) => b,
                    Stretch::Free => p[3],
                };
                let u = x / tau;
                let ub = if u > 0.0 { u.powf(beta) } else { 0.0 };
                let e = (-ub).exp();
                if let Some(g) = grad {
                    g[0] = e;
                    g[1] = a * e * beta * ub / tau;
                    g[2] = 1.0;
                    if self.stretch == Stretch::Free {
                        g[3] = if u > 0.0 { -a * e * ub * u.ln() } else { 0.0 };
                    }
                }
                a * e + c
            }
            Model::DampedSine => {
                let (a, f, phi, gamma, c) = (p[0], p[1], p[2], p[3], p[4]);
                let env = (-gamma * x).exp();
                let arg = TAU * f * x + phi;
                let (s, co) = arg.sin_cos();
                if let Some(g) = grad {
                    g[0] = env * co;
                    g[1] = -a * env * s * TAU * x;
                    g[2] = -a * env * s;
                    g[3] = -a * x * env * co;
                    g[4] = 1.0;
                }
                a * env * co + c
            }
            Model::Lorentzian => {
                let (a, x0, w, c) = (p[0], p[1], p[2], p[3]);
                let d = x - x0;
                let den = d * d + w * w;
                let l = w * w / den;
                if let Some(g) = grad {
                    g[0] = l;
                    g[1] = a * 2.0 * d * w * w / (den * den);
                    g[2] = a * 2.0 * w * d * d / (den * den);
                    g[3] = 1.0;
                }
                a * l + c
            }
            Model::Gaussian => {
                let (a, x0, s, c) = (p[0], p[1], p[2], p[3]);
                let d = x - x0;
                let e = (-d * d / (2.0 * s * s)).exp();
                if let Some(g) = grad {
                    g[0] = e;
                    g[1] = a * e * d / (s * s);
                    g[2] = a * e * d * d / (s * s * s);
                    g[3] = 1.0;
                }
                a * e + c
            }
            Model::Line => {
                if let Some(g) = grad {
                    g[0] = x;
                    g[1] = 1.0;
                }
                p[0] * x + p[1]
            }
        }
    }
}

/// Evaluates a model with parameters in the order of its parameter names
/// (β appended for a free-stretch exponential).
pub fn evaluate(model: Model, params: &[f64], x: f64) -> f64 {
    let stretch = if model == Model::ExpDecay && params.len() == 4 { Stretch::Free } else { Stretch::Fixed(1.0) };
    Shape { model, stretch }.eval(params, x, None)
}

/// Parameter names of a model in evaluation order.
pub fn param_names(model: Model) -> &'static [&'static str] {
    model.base_params()
}

pub fn fit(model: Model, data: &[(f64, f64)], weights: Option<&[f64]>) -> Result<FitResult, FitError> {
    fit_with(model, data, weights, &FitOptions::default())
}

pub fn fit_with(
    model: Model,
    data: &[(f64, f64)],
    weights: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    let shape = Shape { model, stretch: opts.stretch };
    let names = shape.names();
    let k = names.len();
    // A straight line is identifiable from three points with one degree of
    // freedom left for the error estimate; the nonlinear shapes need two.
    let needed = if model == Model::Line { k + 1 } else { k + 2 };
    if data.len() < needed {
        return Err(FitError::TooFewPoints { model, needed, found: data.len() });
    }
    for (i, &(x, y)) in data.iter().enumerate() {
        if !x.is_finite() || !y.is_finite() {
            return Err(FitError::NonFinite(i));
        }
        if i > 0 && x <= data[i - 1].0 {
            return Err(FitError::NotIncreasing(i));
        }
    }
    let w: Vec<f64> = match weights {
        Some(w) if w.len() != data.len() => {
            return Err(FitError::WeightsLength { expected: data.len(), found: w.len() })
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; data.len()],
    };
    let mut p0 = initial_guess(model, data);
    if shape.names().len() > p0.len() {
        p0.push(1.0);
    }
    let mut lm = levenberg_marquardt(&shape, data, &w, p0, opts.max_iterations);
    canonicalize(model, &mut lm.params);

    let mut diagnostics = Vec::new();
    let n = data.len();
    let jac = jacobian(&shape, data, &w, &lm.params);
    let jtj = jac.transpose() * &jac;
    let svd = jtj.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax == 0.0 || smin <= 1e-14 * smax {
        diagnostics.push(format!(
            "rank-deficient Jacobian (singular values {smin:.3e}..{smax:.3e}); standard errors unreliable"
        ));
    }
    if !lm.converged {
        diagnostics.push(format!("no convergence after {} iterations", lm.iterations));
    }
    let dof = n.saturating_sub(k).max(1) as f64;
    let s2 = lm.cost * 2.0 / dof;
    let cov = svd
        .pseudo_inverse(1e-14 * smax.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DMatrix::zeros(k, k));
    let params = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let var = (s2 * cov[(j, j)]).max(0.0);
            (name.to_string(), ParamEstimate { value: lm.params[j], std_error: var.sqrt() })
        })
        .collect();
    Ok(FitResult {
        model,
        params,
        residual_norm: (2.0 * lm.cost).sqrt(),
        initial_residual_norm: (2.0 * lm.initial_cost).sqrt(),
        converged: lm.converged,
        iterations: lm.iterations,
        diagnostics,
    })
}

/// Full width at half maximum of a Lorentzian or Gaussian fit.
pub fn fwhm(fit: &FitResult) -> Result<f64, FitError> {
    match fit.model {
        Model::Lorentzian => Ok(2.0 * fit.value("hwhm").unwrap_or(f64::NAN).abs()),
        Model::Gaussian => Ok(2.0 * (2.0 * LN_2).sqrt() * fit.value("sigma").unwrap_or(f64::NAN).abs()),
        other => Err(FitError::NoWidth(other)),
    }
}

/// Picks one representative of each family of equivalent parameter sets:
/// positive widths, and for sinusoids a positive amplitude with the phase
/// wrapped into (−π, π].
fn canonicalize(model: Model, p: &mut [f64]) {
    match model {
        Model::DampedSine => {
            if p[0] < 0.0 {
                p[0] = -p[0];
                p[2] += std::f64::consts::PI;
            }
            if p[1] < 0.0 {
                p[1] = -p[1];
                p[2] = -p[2];
            }
            p[2] = std::f64::consts::PI - (std::f64::consts::PI - p[2]).rem_euclid(TAU);
        }
        Model::Lorentzian | Model::Gaussian => p[2] = p[2].abs(),
        Model::ExpDecay | Model::Line => {}
    }
}

struct LmOutcome {
    params: Vec<f64>,
    cost: f64,
    initial_cost: f64,
    converged: bool,
    iterations: usize,
}

fn residuals(shape: &Shape, data: &[(f64, f64)], w: &[f64], p: &[f64]) -> DVector<f64> {
    DVector::from_iterator(data.len(), data.iter().zip(w).map(|(&(x, y), &wi)| wi * (y - shape.eval(p, x, None))))
}

fn jacobian(shape: &Shape, data: &[(f64, f64)], w: &[f64], p: &[f64]) -> DMatrix<f64> {
    let k = p.len();
    let mut j = DMatrix::zeros(data.len(), k);
    let mut g = vec![0.0; k];
    for (i, (&(x, _), &wi)) in data.iter().zip(w).enumerate() {
        shape.eval(p, x, Some(&mut g));
        for c in 0..k {
            j[(i, c)] = -wi * g[c];
        }
    }
    j
}

fn cost_of(r: &DVector<f64>) -> f64 {
    let c = 0.5 * r.norm_squared();
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

fn levenberg_marquardt(shape: &Shape, data: &[(f64, f64)], w: &[f64], p0: Vec<f64>, max_iter: usize) -> LmOutcome {
    let k = p0.len();
    let mut p = p0;
    let mut r = residuals(shape, data, w, &p);
    let mut cost = cost_of(&r);
    let initial_cost = cost;
    let scale: f64 = data.iter().zip(w).map(|(&(_, y), &wi)| (wi * y).powi(2)).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        if cost <= 1e-30 * scale {
            converged = true;
            break;
        }
        let j = jacobian(shape, data, w, &p);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut accepted = false;
        let mut small_step = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for d in 0..k {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12 * (1.0 + jtj.diagonal().max()));
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let r_trial = residuals(shape, data, w, &trial);
            let c_trial = cost_of(&r_trial);
            small_step = step.iter().zip(&p).all(|(s, v)| s.abs() <= 1e-12 * (v.abs() + 1e-12));
            if c_trial <= cost {
                let decrease = cost - c_trial;
                p = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if small_step || decrease <= 1e-15 * cost {
                    converged = true;
                }
                break;
            }
            if small_step {
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // No downhill step exists at any damping: a stationary point.
            converged = small_step || lambda >= 1e20;
            break;
        }
    }
    LmOutcome { params: p, cost, initial_cost, converged, iterations }
}

fn initial_guess(model: Model, data: &[(f64, f64)]) -> Vec<f64> {
    match model {
        Model::ExpDecay => guess_exp(data),
        Model::DampedSine => guess_sine(data),
        Model::Lorentzian => {
            let (a, x0, hwhm, c) = guess_peak(data);
            vec![a, x0, hwhm, c]
        }
        Model::Gaussian => {
            let (a, x0, hwhm, c) = guess_peak(data);
            vec![a, x0, hwhm / (2.0 * LN_2).sqrt(), c]
        }
        Model::Line => {
            let (slope, intercept) = linear_regression(data);
            vec![slope, intercept]
        }
    }
}

fn linear_regression(data: &[(f64, f64)]) -> (f64, f64) {
    let n = data.len() as f64;
    let mx = data.iter().map(|d| d.0).sum::<f64>() / n;
    let my = data.iter().map(|d| d.1).sum::<f64>() / n;
    let sxy: f64 = data.iter().map(|d| (d.0 - mx) * (d.1 - my)).sum();
    let sxx: f64 = data.iter().map(|d| (d.0 - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Integral-equation estimate for `A·exp(−x/τ) + C`: with `S(x)` the running
/// integral of y, `y − y₀ = −S/τ + (C/τ)(x − x₀)` is linear in the unknowns.
fn guess_exp(data: &[(f64, f64)]) -> Vec<f64> {
    let (x0, y0) = data[0];
    let span = data[data.len() - 1].0 - x0;
    let mut s = 0.0;
    let mut rows = Vec::with_capacity(data.len());
    for (i, &(x, y)) in data.iter().enumerate() {
        if i > 0 {
            let (xp, yp) = data[i - 1];
            s += 0.5 * (y + yp) * (x - xp);
        }
        rows.push((s, x - x0, y - y0));
    }
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(si, ti, di) in &rows {
        a11 += si * si;
        a12 += si * ti;
        a22 += ti * ti;
        b1 += si * di;
        b2 += ti * di;
    }
    let det = a11 * a22 - a12 * a12;
    let mut tau = span / 3.0;
    let mut c = data[data.len() - 1].1;
    if det.abs() > 0.0 {
        let alpha = (b1 * a22 - b2 * a12) / det;
        let beta = (a11 * b2 - a12 * b1) / det;
        if alpha < 0.0 && alpha.is_finite() {
            tau = -1.0 / alpha;
            c = beta * tau;
        }
    }
    // Amplitude by least squares on the basis exp(−x/τ) with C fixed.
    let (mut num, mut den) = (0.0, 0.0);
    for &(x, y) in data {
        let e = (-x / tau).exp();
        num += e * (y - c);
        den += e * e;
    }
    let a = if den > 0.0 { num / den } else { data[0].1 - c };
    vec![a, tau, c]
}

fn guess_sine(data: &[(f64, f64)]) -> Vec<f64> {
    let n = data.len();
    let c = data.iter().map(|d| d.1).sum::<f64>() / n as f64;
    let span = data[n - 1].0 - data[0].0;
    // Dominant bin of a zero-padded discrete spectrum on a fine grid.
    let fmax = 0.5 * (n - 1) as f64 / span;
    let df = 0.05 / span;
    let mut best = (0.0, 0.0, 0.0);
    let mut f = df * 10.0;
    while f <= fmax {
        let (mut re, mut im) = (0.0, 0.0);
        for &(x, y) in data {
            let (s, co) = (TAU * f * x).sin_cos();
            re += (y - c) * co;
            im -= (y - c) * s;
        }
        let power = re * re + im * im;
        if power > best.0 {
            best = (power, f, im.atan2(re));
        }
        f += df;
    }
    let (_, freq, phase) = best;
    let amp = data.iter().map(|d| (d.1 - c).abs()).fold(0.0, f64::max);
    vec![amp, freq, phase, 0.0, c]
}

/// Offset from the edges, extremum for the center, half-maximum crossings
/// for the half-width.
fn guess_peak(data: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    let n = data.len();
    let edge = (n * 15 / 100).max(1);
    let mut edges: Vec<f64> = data[..edge].iter().chain(&data[n - edge..]).map(|d| d.1).collect();
    edges.sort_by(f64::total_cmp);
    let m = edges.len();
    let c = if m % 2 == 1 { edges[m / 2] } else { 0.5 * (edges[m / 2 - 1] + edges[m / 2]) };
    let (imax, _) = data
        .iter()
        .enumerate()
        .max_by(|a, b| (a.1 .1 - c).abs().total_cmp(&(b.1 .1 - c).abs()))
        .expect("nonempty");
    let a = data[imax].1 - c;
    let half = 0.5 * a.abs();
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = imax;
        for i in range {
            let d = (data[i].1 - c).abs();
            if d < half {
                let dp = (data[prev].1 - c).abs();
                let frac = if dp > d { (dp - half) / (dp - d) } else { 0.5 };
                return Some(data[prev].0 + frac * (data[i].0 - data[prev].0));
            }
            prev = i;
        }
        None
    };
    let left = crossing(&mut (0..imax).rev());
    let right = crossing(&mut (imax + 1..n));
    let span = data[n - 1].0 - data[0].0;
    let x0 = data[imax].0;
    let hwhm = match (left, right) {
        (Some(l), Some(r)) => 0.5 * (r - l),
        (Some(l), None) => x0 - l,
        (None, Some(r)) => r - x0,
        (None, None) => span / 10.0,
    };
    let hwhm = if hwhm > 0.0 { hwhm } else { span / 10.0 };
    (a, x0, hwhm, c)
}
