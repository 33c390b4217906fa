//! Parameter sets in external units (MHz, kHz, μs, ms, ns, tesla) as they
//! appear in configuration files and metadata sidecars.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, SystemParams};
use crate::readout::{FluorescenceParams, ReadoutError};
use crate::units;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Readout(#[from] ReadoutError),
    #[error("`larmor_mhz` cannot be set together with `larmor_from_field = true`")]
    LarmorConflict,
    #[error("grid: {0}")]
    Grid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    pub gamma_n_mhz_per_t: f64,
    pub b_field_t: f64,
    /// Fixed Larmor frequency; omitted in derived mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub larmor_mhz: Option<f64>,
    pub larmor_from_field: bool,
    pub a_perp_khz: f64,
    pub a_par_khz: f64,
    pub t1_electron_ms: f64,
    pub t2_electron_us: f64,
    pub t2_star_ns: f64,
    pub t1_rho_us: f64,
    pub init_fidelity: f64,
    pub reinit_nuclear_loss: f64,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        let mut c = Self::from(&SystemParams::default());
        c.larmor_mhz = None;
        c
    }
}

/// Drops the last bits of unit-conversion round-off so sidecars read cleanly.
fn tidy(x: f64) -> f64 {
    if x.is_finite() {
        format!("{x:.12e}").parse().unwrap_or(x)
    } else {
        x
    }
}

impl From<&SystemParams> for ParamsConfig {
    fn from(p: &SystemParams) -> Self {
        Self {
            gamma_n_mhz_per_t: p.gamma_n,
            b_field_t: p.b_field,
            larmor_mhz: Some(tidy(units::mhz_from_angular(p.omega_l))),
            larmor_from_field: p.larmor_from_field,
            a_perp_khz: tidy(units::khz_from_angular(p.a_perp)),
            a_par_khz: tidy(units::khz_from_angular(p.a_par)),
            t1_electron_ms: tidy(units::ms_from_seconds(p.t1_electron)),
            t2_electron_us: tidy(units::us_from_seconds(p.t2_electron)),
            t2_star_ns: tidy(units::ns_from_seconds(p.t2_star)),
            t1_rho_us: tidy(units::us_from_seconds(p.t1_rho)),
            init_fidelity: p.init_fidelity,
            reinit_nuclear_loss: p.reinit_nuclear_loss,
        }
    }
}

impl ParamsConfig {
    pub fn to_params(&self) -> Result<SystemParams, ConfigError> {
        if self.larmor_from_field && self.larmor_mhz.is_some() {
            return Err(ConfigError::LarmorConflict);
        }
        let mut p = SystemParams {
            gamma_n: self.gamma_n_mhz_per_t,
            b_field: self.b_field_t,
            omega_l: units::angular_from_mhz(self.larmor_mhz.unwrap_or(1.96)),
            a_perp: units::angular_from_khz(self.a_perp_khz),
            a_par: units::angular_from_khz(self.a_par_khz),
            t1_electron: units::seconds_from_ms(self.t1_electron_ms),
            t2_electron: units::seconds_from_us(self.t2_electron_us),
            t2_star: units::seconds_from_ns(self.t2_star_ns),
            t1_rho: units::seconds_from_us(self.t1_rho_us),
            init_fidelity: self.init_fidelity,
            reinit_nuclear_loss: self.reinit_nuclear_loss,
            larmor_from_field: false,
        };
        if self.larmor_from_field {
            p = p.at_field(self.b_field_t);
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluorescenceConfig {
    pub pump_rate_mhz: f64,
    pub repump_rate_mhz: f64,
    pub photon_rate_mhz: f64,
    pub background_mhz: f64,
    pub bin_width_us: f64,
    pub poisson_noise: bool,
}

impl Default for FluorescenceConfig {
    fn default() -> Self {
        Self::from(&FluorescenceParams::default())
    }
}

impl From<&FluorescenceParams> for FluorescenceConfig {
    fn from(f: &FluorescenceParams) -> Self {
        Self {
            pump_rate_mhz: f.pump_rate * 1e-6,
            repump_rate_mhz: f.repump_rate * 1e-6,
            photon_rate_mhz: f.photon_rate * 1e-6,
            background_mhz: f.background * 1e-6,
            bin_width_us: units::us_from_seconds(f.bin_width),
            poisson_noise: f.poisson_noise,
        }
    }
}

impl FluorescenceConfig {
    pub fn to_params(&self) -> Result<FluorescenceParams, ConfigError> {
        let f = FluorescenceParams {
            pump_rate: self.pump_rate_mhz * 1e6,
            repump_rate: self.repump_rate_mhz * 1e6,
            photon_rate: self.photon_rate_mhz * 1e6,
            background: self.background_mhz * 1e6,
            bin_width: units::seconds_from_us(self.bin_width_us),
            poisson_noise: self.poisson_noise,
        };
        f.validate()?;
        Ok(f)
    }
}

/// Sweep grid: explicit values, or `points` evenly spaced values from
/// `start` to `stop` inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum GridSpec {
    Values { values: Vec<f64> },
    Linear { start: f64, stop: f64, points: usize },
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>, ConfigError> {
        let v = match self {
            GridSpec::Values { values } => values.clone(),
            GridSpec::Linear { start, stop, points } => linspace(*start, *stop, *points),
        };
        check_grid(&v)?;
        Ok(v)
    }
}

/// `n` evenly spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Grids must be nonempty, finite and strictly increasing.
pub fn check_grid(v: &[f64]) -> Result<(), ConfigError> {
    if v.is_empty() {
        return Err(ConfigError::Grid("empty".into()));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(ConfigError::Grid(format!("non-finite value {x}")));
    }
    if let Some(w) = v.windows(2).find(|w| w[1] <= w[0]) {
        return Err(ConfigError::Grid(format!("not strictly increasing at {} → {}", w[0], w[1])));
    }
    Ok(())
}
