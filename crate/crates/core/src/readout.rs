//! Two-state optical readout: the bright population relaxes toward its
//! steady state under optical pumping, and the integrated leading edge of the
//! fluorescence, normalized by the steady-state tail, is the pulsed-experiment
//! signal.
//!
//! The bright state is electron ↓; optical pumping empties it into ↑.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitting::{self, Model};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReadoutError {
    #[error("invalid fluorescence parameter `{name}` = {value}: {reason}")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },
    #[error("initial bright population {0} outside [0, 1]")]
    BadPopulation(f64),
    #[error("{which} window contains no bins")]
    EmptyWindow { which: &'static str },
    #[error("windows ({leading:e} s + {trailing:e} s) exceed the trace ({duration:e} s)")]
    WindowsExceedTrace { leading: f64, trailing: f64, duration: f64 },
    #[error("trace spans {span:e} s but the fit needs at least 5/(pump+repump) = {needed:e} s")]
    TraceTooShort { span: f64, needed: f64 },
    #[error("polarization fit failed to converge (residual norm {residual_norm:.3e})")]
    FitFailed { residual_norm: f64 },
    #[error(transparent)]
    Fit(#[from] fitting::FitError),
}

/// Rates in 1/s, photon and background rates in counts/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluorescenceParams {
    pub pump_rate: f64,
    pub repump_rate: f64,
    pub photon_rate: f64,
    pub background: f64,
    pub bin_width: f64,
    pub poisson_noise: bool,
}

impl Default for FluorescenceParams {
    /// Transient time constant 10 μs with a 92% steady-state polarization.
    fn default() -> Self {
        Self {
            pump_rate: 9.2e4,
            repump_rate: 8.0e3,
            photon_rate: 1.0e6,
            background: 0.0,
            bin_width: 1e-6,
            poisson_noise: false,
        }
    }
}

impl FluorescenceParams {
    pub fn validate(&self) -> Result<(), ReadoutError> {
        for (name, value) in [
            ("pump_rate", self.pump_rate),
            ("repump_rate", self.repump_rate),
            ("photon_rate", self.photon_rate),
            ("background", self.background),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(ReadoutError::InvalidParameter { name, value, reason: "must be finite and ≥ 0" });
            }
        }
        if !(self.pump_rate > self.repump_rate) {
            return Err(ReadoutError::InvalidParameter {
                name: "pump_rate",
                value: self.pump_rate,
                reason: "must exceed repump_rate",
            });
        }
        if !(self.bin_width > 0.0) {
            return Err(ReadoutError::InvalidParameter {
                name: "bin_width",
                value: self.bin_width,
                reason: "must be > 0",
            });
        }
        Ok(())
    }

    /// Steady-state bright population `repump/(pump+repump)`.
    pub fn steady_state(&self) -> f64 {
        self.repump_rate / (self.pump_rate + self.repump_rate)
    }

    pub fn total_rate(&self) -> f64 {
        self.pump_rate + self.repump_rate
    }

    /// Bright population at time `t` after the laser turns on.
    pub fn bright_population(&self, p_bright0: f64, t: f64) -> f64 {
        let pss = self.steady_state();
        pss + (p_bright0 - pss) * (-self.total_rate() * t).exp()
    }
}

/// Integration windows of one readout, all in seconds: the leading edge
/// `[0, leading]`, the normalization tail `[pulse − trailing, pulse]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutWindow {
    pub leading: f64,
    pub trailing: f64,
    pub pulse: f64,
}

impl Default for ReadoutWindow {
    fn default() -> Self {
        Self { leading: 20e-6, trailing: 100e-6, pulse: 300e-6 }
    }
}

impl ReadoutWindow {
    pub fn validate(&self) -> Result<(), ReadoutError> {
        if !(self.leading > 0.0) || !(self.trailing > 0.0) || self.leading + self.trailing > self.pulse {
            return Err(ReadoutError::WindowsExceedTrace {
                leading: self.leading,
                trailing: self.trailing,
                duration: self.pulse,
            });
        }
        Ok(())
    }
}

/// Binned fluorescence `(bin-center time, counts)` over `duration`.
/// Poisson sampling, when enabled, is driven by `seed`.
pub fn fluorescence_trace(
    p_bright0: f64,
    fp: &FluorescenceParams,
    duration: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>, ReadoutError> {
    fp.validate()?;
    if !(0.0..=1.0).contains(&p_bright0) {
        return Err(ReadoutError::BadPopulation(p_bright0));
    }
    let bins = (duration / fp.bin_width).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::with_capacity(bins);
    for i in 0..bins {
        let t = (i as f64 + 0.5) * fp.bin_width;
        let mean = (fp.photon_rate * fp.bright_population(p_bright0, t) + fp.background) * fp.bin_width;
        let counts = if fp.poisson_noise && mean > 0.0 {
            Poisson::new(mean).map(|d| d.sample(&mut rng)).unwrap_or(mean)
        } else {
            mean
        };
        trace.push((t, counts));
    }
    Ok(trace)
}

/// Mean leading-edge counts over mean trailing counts. Windows are counted
/// from the first and last bin of the trace.
pub fn contrast(trace: &[(f64, f64)], leading: f64, trailing: f64) -> Result<f64, ReadoutError> {
    let (first, last) = match (trace.first(), trace.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(ReadoutError::EmptyWindow { which: "leading" }),
    };
    let bin = if trace.len() > 1 { (last - first) / (trace.len() - 1) as f64 } else { 0.0 };
    let start = first - 0.5 * bin;
    let end = last + 0.5 * bin;
    if leading + trailing > end - start + 1e-12 * (end - start) {
        return Err(ReadoutError::WindowsExceedTrace { leading, trailing, duration: end - start });
    }
    let mean_in = |lo: f64, hi: f64, which| {
        let (sum, n) = trace
            .iter()
            .filter(|(t, _)| *t >= lo && *t <= hi)
            .fold((0.0, 0usize), |(s, n), (_, c)| (s + c, n + 1));
        if n == 0 {
            Err(ReadoutError::EmptyWindow { which })
        } else {
            Ok(sum / n as f64)
        }
    };
    let lead = mean_in(start, start + leading, "leading")?;
    let tail = mean_in(end - trailing, end, "trailing")?;
    if tail == 0.0 {
        return Err(ReadoutError::EmptyWindow { which: "trailing" });
    }
    Ok(lead / tail)
}

/// Noiseless contrast for an initial bright population.
pub fn expected_contrast(p_bright0: f64, fp: &FluorescenceParams, window: &ReadoutWindow) -> Result<f64, ReadoutError> {
    let mut clean = *fp;
    clean.poisson_noise = false;
    let trace = fluorescence_trace(p_bright0.clamp(0.0, 1.0), &clean, window.pulse, 0)?;
    contrast(&trace, window.leading, window.trailing)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationFit {
    /// Steady-state spin polarization `1 − p_ss`.
    pub polarization: f64,
    pub p_bright0: f64,
    /// Fitted transient rate, 1/s.
    pub rate: f64,
    pub residual_norm: f64,
}

/// Recovers the steady-state polarization and the initial bright population
/// from a trace, given the known photon and background rates.
pub fn fit_polarization(trace: &[(f64, f64)], fp: &FluorescenceParams) -> Result<PolarizationFit, ReadoutError> {
    fp.validate()?;
    let span = match (trace.first(), trace.last()) {
        (Some(a), Some(b)) => b.0 - a.0 + fp.bin_width,
        _ => 0.0,
    };
    let needed = 5.0 / fp.total_rate();
    if span < needed {
        return Err(ReadoutError::TraceTooShort { span, needed });
    }
    // Fit in μs so the decay constant is of order one.
    let data: Vec<(f64, f64)> = trace.iter().map(|&(t, c)| (t * 1e6, c)).collect();
    let r = fitting::fit(Model::ExpDecay, &data, None)?;
    if !r.converged {
        return Err(ReadoutError::FitFailed { residual_norm: r.residual_norm });
    }
    let scale = fp.photon_rate * fp.bin_width;
    let tau = r.value("tau").unwrap_or(f64::NAN) * 1e-6;
    let offset = r.value("offset").unwrap_or(f64::NAN);
    let amplitude = r.value("amplitude").unwrap_or(f64::NAN);
    let pss = (offset - fp.background * fp.bin_width) / scale;
    Ok(PolarizationFit {
        polarization: 1.0 - pss,
        p_bright0: pss + amplitude / scale,
        rate: 1.0 / tau,
        residual_norm: r.residual_norm,
    })
}

/// CSV export of a trace with header `time_s,counts`.
pub fn trace_to_csv(trace: &[(f64, f64)]) -> String {
    let mut out = String::from("time_s,counts\n");
    for (t, c) in trace {
        out.push_str(&format!("{t},{c}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steady_state_trace_is_flat_and_gives_unit_contrast() {
        let fp = FluorescenceParams::default();
        let tr = fluorescence_trace(fp.steady_state(), &fp, 300e-6, 0).unwrap();
        let c0 = tr[0].1;
        assert!(tr.iter().all(|(_, c)| (c - c0).abs() < 1e-12 * c0));
        let w = ReadoutWindow::default();
        assert!((contrast(&tr, w.leading, w.trailing).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn default_polarization_is_92_percent() {
        assert!((1.0 - FluorescenceParams::default().steady_state() - 0.92).abs() < 1e-12);
    }

    #[test]
    fn background_only() {
        let fp = FluorescenceParams { photon_rate: 0.0, background: 5e4, ..Default::default() };
        let tr = fluorescence_trace(0.9, &fp, 50e-6, 0).unwrap();
        assert!(tr.iter().all(|(_, c)| (c - 5e4 * 1e-6).abs() < 1e-15));
    }

    #[test]
    fn contrast_is_monotone_and_scale_invariant() {
        let fp = FluorescenceParams::default();
        let w = ReadoutWindow::default();
        let mut prev = 0.0;
        for k in 0..=10 {
            let c = expected_contrast(k as f64 / 10.0, &fp, &w).unwrap();
            assert!(c > prev);
            prev = c;
        }
        assert!(expected_contrast(1.0, &fp, &w).unwrap() > 1.0);
        let brighter = FluorescenceParams { photon_rate: 7.3e6, ..fp };
        let a = expected_contrast(0.6, &fp, &w).unwrap();
        let b = expected_contrast(0.6, &brighter, &w).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn trace_is_non_negative_with_noise() {
        let fp = FluorescenceParams { poisson_noise: true, photon_rate: 2e5, ..Default::default() };
        for seed in 0..5 {
            let tr = fluorescence_trace(0.7, &fp, 100e-6, seed).unwrap();
            assert!(tr.iter().all(|(_, c)| *c >= 0.0));
        }
    }

    #[test]
    fn window_errors() {
        let fp = FluorescenceParams::default();
        let tr = fluorescence_trace(0.5, &fp, 50e-6, 0).unwrap();
        assert!(matches!(contrast(&tr, 40e-6, 20e-6), Err(ReadoutError::WindowsExceedTrace { .. })));
        assert!(matches!(contrast(&tr, 0.1e-6, 20e-6), Err(ReadoutError::EmptyWindow { which: "leading" })));
        assert!(fluorescence_trace(1.5, &fp, 50e-6, 0).is_err());
    }

    #[test]
    fn polarization_fit_round_trip() {
        let fp = FluorescenceParams::default();
        let tr = fluorescence_trace(0.75, &fp, 300e-6, 0).unwrap();
        let fit = fit_polarization(&tr, &fp).unwrap();
        assert!((fit.polarization - 0.92).abs() < 1e-6 * 0.92);
        assert!((fit.p_bright0 - 0.75).abs() < 1e-6 * 0.75);
        assert!((fit.rate - fp.total_rate()).abs() < 1e-6 * fp.total_rate());
        let short = fluorescence_trace(0.75, &fp, 30e-6, 0).unwrap();
        assert!(matches!(fit_polarization(&short, &fp), Err(ReadoutError::TraceTooShort { .. })));
    }

    #[test]
    fn csv_export_header() {
        let fp = FluorescenceParams::default();
        let tr = fluorescence_trace(0.5, &fp, 3e-6, 0).unwrap();
        let csv = trace_to_csv(&tr);
        assert!(csv.starts_with("time_s,counts\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
