//! Conversions between the external units (MHz, kHz, μs, ms) and the
//! internal ones (rad/s, s). Every boundary conversion goes through here.

use std::f64::consts::TAU;

/// Ordinary frequency in MHz to angular frequency in rad/s.
pub fn angular_from_mhz(f_mhz: f64) -> f64 {
    TAU * f_mhz * 1e6
}

/// Angular frequency in rad/s to ordinary frequency in MHz.
pub fn mhz_from_angular(omega: f64) -> f64 {
    omega / (TAU * 1e6)
}

pub fn angular_from_khz(f_khz: f64) -> f64 {
    angular_from_mhz(f_khz * 1e-3)
}

pub fn khz_from_angular(omega: f64) -> f64 {
    mhz_from_angular(omega) * 1e3
}

pub fn seconds_from_us(t_us: f64) -> f64 {
    t_us * 1e-6
}

pub fn us_from_seconds(t: f64) -> f64 {
    t * 1e6
}

pub fn seconds_from_ms(t_ms: f64) -> f64 {
    t_ms * 1e-3
}

pub fn ms_from_seconds(t: f64) -> f64 {
    t * 1e3
}

pub fn seconds_from_ns(t_ns: f64) -> f64 {
    t_ns * 1e-9
}

pub fn ns_from_seconds(t: f64) -> f64 {
    t * 1e9
}
