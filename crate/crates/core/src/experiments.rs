//! Sweep drivers. Each driver compiles its template once per grid point, runs
//! it from the maximally mixed state, and tabulates the readout observables.
//! Points run in parallel with per-point seeds derived from the master seed,
//! so results do not depend on the worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{self, ConfigError, FluorescenceConfig, ParamsConfig};
use crate::fitting::{self, FitError, FitResult, Model};
use crate::model::{hh_resonance, SystemParams};
use crate::operator::DensityMatrix;
use crate::pulse::{self, compile_template, CompileError, Knobs, RunError, RunOptions, RunOutput, Template};
use crate::readout::FluorescenceParams;
use crate::units;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error("knob `{0}` is set by the driver")]
    DriverKnob(String),
    #[error("at {x_name} = {x}: {source}")]
    Run { x_name: &'static str, x: f64, source: RunError },
    #[error("grid value {0} is not a whole number of repetitions ≥ 1")]
    BadRepetition(f64),
    #[error("no column `{0}`")]
    UnknownColumn(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Static description of a driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverInfo {
    pub template: Template,
    pub description: &'static str,
    /// CSV column name of the swept quantity, unit-suffixed.
    pub x_name: &'static str,
    /// Template knob driven by the sweep.
    pub sweep_knob: &'static str,
    /// Knob value = `x · knob_scale`.
    pub knob_scale: f64,
    /// Knobs the driver sets itself besides the swept one.
    pub fixed_knobs: &'static [&'static str],
    /// Fit applied by default, with the column it is applied to.
    pub default_fit: Option<(Model, &'static str)>,
}

const fn info(
    template: Template,
    description: &'static str,
    x_name: &'static str,
    sweep_knob: &'static str,
    knob_scale: f64,
    fixed_knobs: &'static [&'static str],
    default_fit: Option<(Model, &'static str)>,
) -> DriverInfo {
    DriverInfo { template, description, x_name, sweep_knob, knob_scale, fixed_knobs, default_fit }
}

const REGISTRY: [DriverInfo; 10] = [
    info(
        Template::ElectronT1,
        "electron polarization vs wait after initialization",
        "wait_ms",
        "wait_ms",
        1.0,
        &[],
        Some((Model::ExpDecay, "contrast")),
    ),
    info(
        Template::Odmr,
        "fluorescence vs MW detuning of a weak π pulse",
        "detuning_mhz",
        "detuning_mhz",
        1.0,
        &[],
        Some((Model::Lorentzian, "contrast")),
    ),
    info(
        Template::ElectronRabi,
        "electron Rabi oscillation vs MW pulse duration",
        "duration_us",
        "duration_us",
        1.0,
        &[],
        Some((Model::DampedSine, "contrast")),
    ),
    info(
        Template::HahnEcho,
        "electron Hahn-echo amplitude vs total free evolution",
        "free_evolution_us",
        "tau_us",
        0.5,
        &["final_phase_deg"],
        Some((Model::ExpDecay, "echo")),
    ),
    info(
        Template::HhSweep,
        "locked polarization vs lock amplitude, polarization reversal alternating",
        "lock_rabi_mhz",
        "lock_rabi_mhz",
        1.0,
        &[],
        Some((Model::Lorentzian, "sz")),
    ),
    info(
        Template::SpinLock,
        "locked polarization and nuclear polarization vs lock duration",
        "lock_us",
        "lock_us",
        1.0,
        &[],
        None,
    ),
    info(
        Template::Novel,
        "nuclear polarization after each repeated transfer",
        "repetition",
        "reps",
        1.0,
        &["record_each"],
        None,
    ),
    info(
        Template::Nmr,
        "nuclear polarization after an RF pulse vs RF frequency",
        "rf_freq_mhz",
        "rf_freq_mhz",
        1.0,
        &[],
        Some((Model::Lorentzian, "iz")),
    ),
    info(
        Template::NuclearRabi,
        "nuclear polarization vs RF pulse duration",
        "rf_duration_us",
        "rf_duration_us",
        1.0,
        &[],
        Some((Model::DampedSine, "iz")),
    ),
    info(
        Template::NuclearEcho,
        "nuclear echo amplitude vs total free evolution",
        "free_evolution_ms",
        "tau_ms",
        0.5,
        &["final_phase_deg"],
        Some((Model::ExpDecay, "echo")),
    ),
];

pub fn registry() -> &'static [DriverInfo] {
    &REGISTRY
}

pub fn driver_info(t: Template) -> &'static DriverInfo {
    REGISTRY.iter().find(|d| d.template == t).expect("every template has a driver")
}

impl DriverInfo {
    pub fn id(&self) -> &'static str {
        self.template.id()
    }

    /// Observable columns, in output order.
    pub fn columns(&self) -> Vec<&'static str> {
        let mut c = vec!["contrast", "p_bright", "sz", "sx", "iz"];
        match self.template {
            Template::Nmr | Template::NuclearRabi => c.push("readout_iz"),
            Template::NuclearEcho => c.extend(["readout_iz", "echo"]),
            Template::HahnEcho => c.push("echo"),
            _ => {}
        }
        c
    }

    /// Knobs a configuration may set.
    pub fn user_knobs(&self, p: &SystemParams) -> Knobs {
        let mut k = self.template.default_knobs(p);
        k.remove(self.sweep_knob);
        for f in self.fixed_knobs {
            k.remove(*f);
        }
        k
    }

    /// Default sweep grid in units of `x_name`.
    pub fn default_grid(&self, p: &SystemParams, knobs: &Knobs) -> Vec<f64> {
        let mhz = |w: f64| units::mhz_from_angular(w);
        match self.template {
            Template::ElectronT1 => config::linspace(0.0, 30.0, 31),
            Template::Odmr => config::linspace(-8.0, 8.0, 81),
            Template::ElectronRabi => config::linspace(0.0, 0.4, 81),
            Template::HahnEcho => config::linspace(0.0, 12.0, 41),
            Template::HhSweep => {
                let c = mhz(p.omega_l);
                config::linspace(c - 0.8, c + 0.8, 81)
            }
            Template::SpinLock => config::linspace(0.0, 20.0, 101),
            Template::Novel => (1..=20).map(f64::from).collect(),
            Template::Nmr => {
                let down = knobs.get("electron_down").copied().unwrap_or(0.0) == 1.0;
                let c = mhz(p.nmr_resonance(!down));
                config::linspace(c - 0.12, c + 0.12, 121)
            }
            Template::NuclearRabi => config::linspace(0.0, 300.0, 121),
            Template::NuclearEcho => config::linspace(0.0, 30.0, 31),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverOptions {
    pub seed: u64,
    /// Worker threads for point-parallel execution; `None` uses all cores.
    pub workers: Option<usize>,
    pub fluorescence: FluorescenceParams,
    /// Apply the driver's default fit.
    pub fit: bool,
}

impl Default for DriverOptions {
    fn default() -> Self {
        Self { seed: 0, workers: None, fluorescence: FluorescenceParams::default(), fit: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub x: f64,
    /// Aligned with [`SweepResult::columns`].
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub column: String,
    #[serde(flatten)]
    pub result: FitResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub driver: Template,
    pub sweep_name: String,
    pub x_name: String,
    pub columns: Vec<String>,
    pub points: Vec<SweepPoint>,
    pub params: SystemParams,
    pub fluorescence: FluorescenceParams,
    /// Complete knob set used, swept knob excluded.
    pub knobs: Knobs,
    pub seed: u64,
    pub fit: Option<FitSummary>,
    /// Derived quantities in external units, e.g. `t1_ms`.
    pub summary: BTreeMap<String, f64>,
    /// Non-fatal problems, e.g. a failed default fit.
    pub warnings: Vec<String>,
}

impl SweepResult {
    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|pt| pt.x).collect()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.points.iter().map(|pt| pt.values[i]).collect())
    }

    pub fn series(&self, name: &str) -> Option<Vec<(f64, f64)>> {
        Some(self.xs().into_iter().zip(self.column(name)?).collect())
    }

    /// `x` of the smallest value in a column.
    pub fn argmin(&self, name: &str) -> Option<f64> {
        let s = self.series(name)?;
        s.into_iter().min_by(|a, b| a.1.total_cmp(&b.1)).map(|(x, _)| x)
    }

    pub fn argmax(&self, name: &str) -> Option<f64> {
        let s = self.series(name)?;
        s.into_iter().max_by(|a, b| a.1.total_cmp(&b.1)).map(|(x, _)| x)
    }

    /// Fits one column; the result is returned, not stored.
    pub fn fit_column(&self, model: Model, column: &str) -> Result<FitResult, ExperimentError> {
        let data = self.series(column).ok_or_else(|| ExperimentError::UnknownColumn(column.into()))?;
        Ok(fitting::fit(model, &data, None)?)
    }

    /// CSV text: a `#` comment naming units, the header row, one row per point.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut units_line = format!("# {}", describe_column(&self.x_name));
        for c in &self.columns {
            units_line.push_str(", ");
            units_line.push_str(&describe_column(c));
        }
        out.push_str(&units_line);
        out.push('\n');
        out.push_str(&self.x_name);
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for pt in &self.points {
            let _ = write!(out, "{}", pt.x);
            for v in &pt.values {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Metadata sidecar (TOML): run identity, parameters in external units,
    /// knobs, grid, fit and summary.
    pub fn metadata_toml(&self) -> String {
        #[derive(Serialize)]
        struct Run<'a> {
            driver: &'a str,
            sweep_name: &'a str,
            seed: u64,
            version: &'a str,
            points: usize,
            x: &'a str,
            columns: &'a [String],
        }
        #[derive(Serialize)]
        struct Grid {
            values: Vec<f64>,
        }
        #[derive(Serialize)]
        struct Meta<'a> {
            run: Run<'a>,
            params: ParamsConfig,
            fluorescence: FluorescenceConfig,
            knobs: &'a Knobs,
            grid: Grid,
            #[serde(skip_serializing_if = "BTreeMap::is_empty")]
            summary: &'a BTreeMap<String, f64>,
            #[serde(skip_serializing_if = "Vec::is_empty")]
            warnings: &'a Vec<String>,
            #[serde(skip_serializing_if = "Option::is_none")]
            fit: Option<&'a FitSummary>,
        }
        let mut params = ParamsConfig::from(&self.params);
        if self.params.larmor_from_field {
            params.larmor_mhz = None;
        }
        let meta = Meta {
            run: Run {
                driver: self.driver.id(),
                sweep_name: &self.sweep_name,
                seed: self.seed,
                version: env!("CARGO_PKG_VERSION"),
                points: self.points.len(),
                x: &self.x_name,
                columns: &self.columns,
            },
            params,
            fluorescence: FluorescenceConfig::from(&self.fluorescence),
            knobs: &self.knobs,
            grid: Grid { values: self.xs() },
            summary: &self.summary,
            warnings: &self.warnings,
            fit: self.fit.as_ref(),
        };
        toml::to_string(&meta).expect("metadata serializes")
    }
}

fn describe_column(name: &str) -> String {
    let (base, unit) = match name.rsplit_once('_') {
        Some((b, u)) if ["ms", "us", "mhz", "khz"].contains(&u) => (b, u),
        _ => (name, ""),
    };
    let unit = match unit {
        "ms" => "ms",
        "us" => "μs",
        "mhz" => "MHz",
        "khz" => "kHz",
        _ if name == "repetition" => "count",
        _ => "dimensionless",
    };
    format!("{base} [{unit}]")
}

/// Seed of grid point `index`, independent of scheduling.
pub fn point_seed(master: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Observables of one compiled run.
fn observe(info: &DriverInfo, out: &RunOutput) -> BTreeMap<&'static str, f64> {
    let fin = out.record("final").expect("templates end with a final readout");
    let mut v = BTreeMap::new();
    v.insert("contrast", fin.contrast);
    v.insert("p_bright", fin.p_bright);
    v.insert("sz", fin.sz);
    v.insert("sx", fin.sx);
    v.insert("iz", fin.iz);
    if matches!(info.template, Template::Nmr | Template::NuclearRabi | Template::NuclearEcho) {
        let probe = out.record("probe").expect("nuclear templates have a probe readout");
        v.insert("iz", probe.iz);
        v.insert("readout_iz", fin.iz);
    }
    v
}

/// Default knobs with `overrides` applied, after checking parameters and grid.
fn resolve_knobs(info: &DriverInfo, p: &SystemParams, overrides: &Knobs, grid: &[f64]) -> Result<Knobs, ExperimentError> {
    p.validate().map_err(ConfigError::from)?;
    config::check_grid(grid)?;
    let mut knobs = info.template.default_knobs(p);
    for (name, value) in overrides {
        if name == info.sweep_knob || info.fixed_knobs.contains(&name.as_str()) {
            return Err(ExperimentError::DriverKnob(name.clone()));
        }
        if !knobs.contains_key(name) {
            return Err(CompileError::ExtraKnob(name.clone()).into());
        }
        knobs.insert(name.clone(), *value);
    }
    // A changed Rabi frequency carries its π pulse along unless both are set.
    for (rabi, pi, to_mhz) in [("mw_rabi_mhz", "pi_pulse_us", 1.0), ("rf_rabi_khz", "rf_pi_us", 1e-3)] {
        if overrides.contains_key(rabi) && !overrides.contains_key(pi) && knobs.contains_key(pi) {
            knobs.insert(pi.into(), pulse::pi_duration_us(knobs[rabi] * to_mhz));
        }
    }
    Ok(knobs)
}

/// Checks a driver invocation without running it: parameters, grid, knob
/// names, and that the template compiles at every grid point.
pub fn check_driver(template: Template, p: &SystemParams, overrides: &Knobs, grid: &[f64]) -> Result<(), ExperimentError> {
    let info = driver_info(template);
    let knobs = resolve_knobs(info, p, overrides, grid)?;
    let mut k = knobs.clone();
    for f in info.fixed_knobs {
        k.insert(f.to_string(), 0.0);
    }
    if template == Template::Novel {
        if let Some(&bad) = grid.iter().find(|&&x| x < 1.0 || x.fract() != 0.0) {
            return Err(ExperimentError::BadRepetition(bad));
        }
        k.insert("record_each".into(), 1.0);
    }
    for &x in grid {
        k.insert(info.sweep_knob.into(), x * info.knob_scale);
        compile_template(template, p, &k)?;
    }
    Ok(())
}

/// Runs a driver over `grid` (units of the driver's `x_name`). `overrides`
/// replaces default knob values; the swept and driver-set knobs may not be
/// overridden.
pub fn run_driver(
    template: Template,
    p: &SystemParams,
    overrides: &Knobs,
    grid: &[f64],
    opts: &DriverOptions,
) -> Result<SweepResult, ExperimentError> {
    let info = driver_info(template);
    opts.fluorescence.validate().map_err(ConfigError::from)?;
    let mut knobs = resolve_knobs(info, p, overrides, grid)?;

    let rho0 = DensityMatrix::maximally_mixed(4);
    let columns = info.columns();
    let run_point = |index: usize, x: f64| -> Result<Vec<f64>, ExperimentError> {
        let mut k = knobs.clone();
        k.insert(info.sweep_knob.into(), x * info.knob_scale);
        let ropts = RunOptions { seed: point_seed(opts.seed, index), trajectory_step: None, fluorescence: opts.fluorescence };
        let exec = |k: &Knobs| -> Result<RunOutput, ExperimentError> {
            let seq = compile_template(template, p, k)?;
            pulse::run(&seq, p, &rho0, &ropts).map_err(|source| ExperimentError::Run { x_name: info.x_name, x, source })
        };
        let mut obs = if info.fixed_knobs.contains(&"final_phase_deg") {
            k.insert("final_phase_deg".into(), 0.0);
            let straight = exec(&k)?;
            k.insert("final_phase_deg".into(), 180.0);
            let flipped = exec(&k)?;
            let mut obs = observe(info, &straight);
            let other = observe(info, &flipped);
            let key = if template == Template::HahnEcho { "sz" } else { "iz" };
            obs.insert("echo", 0.5 * (obs[key] - other[key]));
            obs
        } else {
            observe(info, &exec(&k)?)
        };
        Ok(columns.iter().map(|c| obs.remove(c).expect("observable present")).collect())
    };

    let rows: Vec<Vec<f64>> = if template == Template::Novel {
        run_novel(info, p, &knobs, grid, opts, &rho0)?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers.unwrap_or(0))
            .build()
            .map_err(|e| ExperimentError::Pool(e.to_string()))?;
        pool.install(|| grid.par_iter().enumerate().map(|(i, &x)| run_point(i, x)).collect::<Result<_, _>>())?
    };

    knobs.remove(info.sweep_knob);
    for f in info.fixed_knobs {
        knobs.remove(*f);
    }
    let mut result = SweepResult {
        driver: template,
        sweep_name: format!("{}_vs_{}", template.id(), info.x_name),
        x_name: info.x_name.into(),
        columns: columns.iter().map(|c| c.to_string()).collect(),
        points: grid.iter().zip(rows).map(|(&x, values)| SweepPoint { x, values }).collect(),
        params: p.clone(),
        fluorescence: opts.fluorescence,
        knobs,
        seed: opts.seed,
        fit: None,
        summary: BTreeMap::new(),
        warnings: Vec::new(),
    };
    if template == Template::Novel {
        // A single nucleus saturates within a few transfers, too fast for a
        // buildup fit; the plateau is read directly.
        let iz = result.column("iz").expect("iz column");
        result.summary.insert("saturation_2iz".into(), 2.0 * iz[iz.len() - 1]);
    }
    if opts.fit {
        if let Some((model, column)) = info.default_fit {
            match result.fit_column(model, column) {
                Ok(f) => {
                    result.summary.extend(summarize(template, &f));
                    if !f.converged {
                        result.warnings.push(format!("{model} fit of `{column}` did not converge"));
                    }
                    result.fit = Some(FitSummary { column: column.into(), result: f });
                }
                Err(e) => result.warnings.push(format!("{model} fit of `{column}` failed: {e}")),
            }
        }
    }
    Ok(result)
}

/// NOVEL runs once with as many repetitions as the largest grid value and
/// reads the per-repetition records.
fn run_novel(
    info: &DriverInfo,
    p: &SystemParams,
    knobs: &Knobs,
    grid: &[f64],
    opts: &DriverOptions,
    rho0: &DensityMatrix,
) -> Result<Vec<Vec<f64>>, ExperimentError> {
    if let Some(&bad) = grid.iter().find(|&&x| x < 1.0 || x.fract() != 0.0) {
        return Err(ExperimentError::BadRepetition(bad));
    }
    let mut k = knobs.clone();
    let max = *grid.last().expect("grid checked nonempty");
    k.insert("reps".into(), max);
    k.insert("record_each".into(), 1.0);
    let seq = compile_template(Template::Novel, p, &k)?;
    let ropts = RunOptions { seed: point_seed(opts.seed, 0), trajectory_step: None, fluorescence: opts.fluorescence };
    let out = pulse::run(&seq, p, rho0, &ropts)
        .map_err(|source| ExperimentError::Run { x_name: info.x_name, x: max, source })?;
    Ok(grid
        .iter()
        .map(|&x| {
            let r = out.record(&format!("rep{}", x as u32)).expect("every repetition recorded");
            vec![r.contrast, r.p_bright, r.sz, r.sx, r.iz]
        })
        .collect())
}

/// Quantities derived from a driver's default fit, in external units.
fn summarize(template: Template, f: &FitResult) -> BTreeMap<String, f64> {
    let mut s = BTreeMap::new();
    let v = |name: &str| f.value(name).unwrap_or(f64::NAN);
    let mut put = |k: &str, x: f64| {
        s.insert(k.to_string(), x);
    };
    match template {
        Template::ElectronT1 => put("t1_ms", v("tau")),
        Template::HahnEcho => put("t2_us", v("tau")),
        Template::NuclearEcho => put("t2n_ms", v("tau")),
        Template::Odmr | Template::HhSweep | Template::Nmr => {
            put("center_mhz", v("center"));
            if let Ok(w) = fitting::fwhm(f) {
                put("fwhm_mhz", w);
            }
        }
        Template::ElectronRabi => put("rabi_mhz", v("frequency")),
        Template::NuclearRabi => put("rabi_khz", v("frequency") * 1e3),
        Template::SpinLock | Template::Novel => {}
    }
    s
}

// Typed entry points, one per experiment. Grids are in the units named in
// each signature.

fn with(pairs: &[(&str, f64)]) -> Knobs {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub fn sim_electron_t1(p: &SystemParams, wait_ms: &[f64], opts: &DriverOptions) -> Result<SweepResult, ExperimentError> {
    run_driver(Template::ElectronT1, p, &Knobs::new(), wait_ms, opts)
}

pub fn sim_odmr(
    p: &SystemParams,
    detuning_mhz: &[f64],
    rabi_mhz: f64,
    opts: &DriverOptions,
) -> Result<SweepResult, ExperimentError> {
    run_driver(Template::Odmr, p, &with(&[("mw_rabi_mhz", rabi_mhz)]), detuning_mhz, opts)
}

pub fn sim_electron_rabi(
    p: &SystemParams,
    duration_us: &[f64],
    rabi_mhz: f64,
    opts: &DriverOptions,
) -> Result<SweepResult, ExperimentError> {
    run_driver(Template::ElectronRabi, p, &with(&[("mw_rabi_mhz", rabi_mhz)]), duration_us, opts)
}

/// Grid is the total free evolution 2τ.
pub fn sim_hahn_echo(
    p: &SystemParams,
    free_evolution_us: &[f64],
    opts: &DriverOptions,
) -> Result<SweepResult, ExperimentError> {
    run_driver(Template::HahnEcho, p, &Knobs::new(), free_evolution_us, opts)
}

pub fn sim_hh_sweep(
    p: &SystemParams,
    lock_rabi_mhz: &[f64],
    lock_us: f64,
    opts: &DriverOptions,
) -> Result<SweepResult, ExperimentError> {
    run_driver(Template::HhSweep, p, &with(&[("lock_us", lock_us)]), lock_rabi_mhz, opts)
}

/// Lock amplitude of a spin-lock trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LockDrive {
    /// At the Hartmann-Hahn crossing.
    Resonant,
    /// Offset from the crossing by this many MHz.
    Detuned(f64),
}

pub fn sim_spin_lock_trace(
    p: &SystemParams,
    lock_us: &[f64],
    drive: LockDrive,
    opts: &DriverOptions,
) -> Result<SweepResult, ExperimentError> {
    let res = units::mhz_from_angular(hh_resonance(p));
    let rabi = match drive {
        LockDrive::Resonant => res,
        LockDrive::Detuned(d) => res + d,
    };
    run_driver(Template::SpinLock, p, &with(&[("lock_rabi_mhz", rabi)]), lock_us, opts)
}

pub fn sim_novel_buildup(
    p: &SystemParams,
    n_reps: u32,
    lock_us: f64,
    opts: &DriverOptions,
) -> Result<SweepResult, ExperimentError> {
    let grid: Vec<f64> = (1..=n_reps).map(f64::from).collect();
    run_driver(Template::Novel, p, &with(&[("lock_us", lock_us)]), &grid, opts)
}

/// The RF amplitude is set so that `rf_pi_us` is a π pulse.
pub fn sim_nmr_sweep(
    p: &SystemParams,
    rf_freq_mhz: &[f64],
    rf_pi_us: f64,
    electron_down: bool,
    opts: &DriverOptions,
) -> Result<SweepResult, ExperimentError> {
    let knobs = with(&[
        ("rf_duration_us", rf_pi_us),
        ("rf_rabi_khz", 1e3 / (2.0 * rf_pi_us)),
        ("electron_down", if electron_down { 1.0 } else { 0.0 }),
    ]);
    run_driver(Template::Nmr, p, &knobs, rf_freq_mhz, opts)
}

pub fn sim_nuclear_rabi(
    p: &SystemParams,
    rf_duration_us: &[f64],
    rf_rabi_khz: f64,
    opts: &DriverOptions,
) -> Result<SweepResult, ExperimentError> {
    run_driver(Template::NuclearRabi, p, &with(&[("rf_rabi_khz", rf_rabi_khz)]), rf_duration_us, opts)
}

/// Grid is the total free evolution 2τ.
pub fn sim_nuclear_echo(
    p: &SystemParams,
    free_evolution_ms: &[f64],
    opts: &DriverOptions,
) -> Result<SweepResult, ExperimentError> {
    run_driver(Template::NuclearEcho, p, &Knobs::new(), free_evolution_ms, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> DriverOptions {
        DriverOptions { fit: false, ..Default::default() }
    }

    #[test]
    fn registry_covers_every_template() {
        assert_eq!(registry().len(), 10);
        for t in Template::ALL {
            assert_eq!(driver_info(t).template, t);
        }
    }

    #[test]
    fn t1_starts_initialized_and_relaxes_to_mixed() {
        let p = SystemParams::default();
        let r = sim_electron_t1(&p, &[0.0, 100.0], &quick()).unwrap();
        let sz = r.column("sz").unwrap();
        assert!((sz[0] - 0.42).abs() < 1e-9);
        assert!(sz[1].abs() < 1e-6);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let p = SystemParams::default();
        let grid = config::linspace(-3.0, 3.0, 9);
        let serial = sim_odmr(&p, &grid, 1.0, &DriverOptions { workers: Some(1), ..quick() }).unwrap();
        let parallel = sim_odmr(&p, &grid, 1.0, &DriverOptions { workers: Some(4), ..quick() }).unwrap();
        assert_eq!(serial.to_csv(), parallel.to_csv());
    }

    #[test]
    fn driver_knobs_cannot_be_overridden() {
        let p = SystemParams::default();
        let k = with(&[("wait_ms", 1.0)]);
        assert_eq!(
            run_driver(Template::ElectronT1, &p, &k, &[0.0], &quick()),
            Err(ExperimentError::DriverKnob("wait_ms".into()))
        );
        let k = with(&[("nope", 1.0)]);
        assert!(matches!(
            run_driver(Template::ElectronT1, &p, &k, &[0.0], &quick()),
            Err(ExperimentError::Compile(CompileError::ExtraKnob(_)))
        ));
        assert!(run_driver(Template::ElectronT1, &p, &Knobs::new(), &[1.0, 0.0], &quick()).is_err());
        assert!(run_driver(Template::Novel, &p, &Knobs::new(), &[0.5], &quick()).is_err());
    }

    #[test]
    fn csv_has_units_comment_and_header() {
        let p = SystemParams::default();
        let r = sim_electron_t1(&p, &[0.0, 1.0], &quick()).unwrap();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "# wait [ms], contrast [dimensionless], p_bright [dimensionless], sz [dimensionless], sx [dimensionless], iz [dimensionless]");
        assert_eq!(lines.next().unwrap(), "wait_ms,contrast,p_bright,sz,sx,iz");
        assert_eq!(lines.count(), 2);
        let meta: toml::Table = toml::from_str(&r.metadata_toml()).unwrap();
        assert_eq!(meta["run"]["driver"].as_str(), Some("electron_t1"));
        assert!(meta["params"].get("t1_electron_ms").is_some());
    }

    #[test]
    fn check_driver_mirrors_run_driver_rejections() {
        let p = SystemParams::default();
        let k = |n: &str| Knobs::from([(n.to_string(), 1.0)]);
        assert!(check_driver(Template::Odmr, &p, &Knobs::new(), &[-1.0, 0.0, 1.0]).is_ok());
        assert!(matches!(check_driver(Template::Odmr, &p, &k("detuning_mhz"), &[0.0]), Err(ExperimentError::DriverKnob(_))));
        assert!(matches!(check_driver(Template::Odmr, &p, &k("lock_us"), &[0.0]), Err(ExperimentError::Compile(_))));
        assert!(matches!(check_driver(Template::Novel, &p, &Knobs::new(), &[1.5]), Err(ExperimentError::BadRepetition(_))));
        assert!(check_driver(Template::HahnEcho, &p, &Knobs::new(), &[-2.0]).is_err());
        for t in Template::ALL {
            let info = driver_info(t);
            let grid = info.default_grid(&p, &info.user_knobs(&p));
            check_driver(t, &p, &Knobs::new(), &grid).unwrap();
        }
    }

    #[test]
    fn point_seeds_differ() {
        assert_ne!(point_seed(1, 0), point_seed(1, 1));
        assert_eq!(point_seed(1, 3), point_seed(1, 3));
    }
}
