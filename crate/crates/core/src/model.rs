//! Physical parameters of the electron-nuclear pair and the Hamiltonians of
//! each segment type.
//!
//! Frames: MW segments live in the electron rotating frame at the drive
//! frequency with the nucleus in the lab frame; RF segments additionally move
//! the nucleus into the frame rotating at the RF frequency and keep only the
//! secular hyperfine term; free evolution uses the electron rotating frame.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::operator::{ComplexMatrix, OperatorError};
use crate::spin::SpinOps;
use crate::units;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter `{name}` = {value} is invalid: {reason}")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },
    #[error("expected a {expected:?} drive, got {found:?}")]
    WrongDriveKind { expected: DriveKind, found: DriveKind },
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Physical constants of the joint system. Frequencies are angular (rad/s),
/// times in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    /// Nuclear gyromagnetic ratio, MHz/T.
    pub gamma_n: f64,
    /// Field magnitude, T.
    pub b_field: f64,
    pub omega_l: f64,
    pub a_perp: f64,
    pub a_par: f64,
    pub t1_electron: f64,
    pub t2_electron: f64,
    /// Free-induction decay time from quasi-static detuning noise.
    pub t2_star: f64,
    pub t1_rho: f64,
    pub init_fidelity: f64,
    pub reinit_nuclear_loss: f64,
    /// When set, `omega_l` tracks `2π·gamma_n·b_field`.
    pub larmor_from_field: bool,
}

/// Nuclear polarization lost per optical reinitialization by default. Chosen
/// so that the three resets of the nuclear echo, together with the dephasing
/// of the nuclear coherence in the electron-↓ branch, lose about 16%.
pub const DEFAULT_REINIT_NUCLEAR_LOSS: f64 = 0.0025;

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            gamma_n: 10.705,
            b_field: 0.1887,
            omega_l: units::angular_from_mhz(1.96),
            a_perp: units::angular_from_khz(230.0),
            a_par: units::angular_from_khz(720.0),
            t1_electron: 5.8e-3,
            t2_electron: 3e-6,
            t2_star: 250e-9,
            t1_rho: 10e-6,
            init_fidelity: 0.92,
            reinit_nuclear_loss: DEFAULT_REINIT_NUCLEAR_LOSS,
            larmor_from_field: false,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive_times = [
            ("t1_electron", self.t1_electron),
            ("t2_electron", self.t2_electron),
            ("t2_star", self.t2_star),
            ("t1_rho", self.t1_rho),
        ];
        for (name, value) in positive_times {
            if !(value > 0.0) {
                return Err(ModelError::InvalidParameter { name, value, reason: "must be > 0" });
            }
        }
        if self.t2_electron > 2.0 * self.t1_electron {
            return Err(ModelError::InvalidParameter {
                name: "t2_electron",
                value: self.t2_electron,
                reason: "must not exceed 2·t1_electron",
            });
        }
        let non_negative = [
            ("omega_l", self.omega_l),
            ("a_perp", self.a_perp),
            ("a_par", self.a_par),
            ("b_field", self.b_field),
        ];
        for (name, value) in non_negative {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(ModelError::InvalidParameter { name, value, reason: "must be finite and ≥ 0" });
            }
        }
        if !(self.gamma_n > 0.0) {
            return Err(ModelError::InvalidParameter { name: "gamma_n", value: self.gamma_n, reason: "must be > 0" });
        }
        for (name, value) in [("init_fidelity", self.init_fidelity), ("reinit_nuclear_loss", self.reinit_nuclear_loss)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ModelError::InvalidParameter { name, value, reason: "must lie in [0, 1]" });
            }
        }
        if self.larmor_from_field {
            let derived = TAU * larmor_frequency(self.gamma_n, self.b_field) * 1e6;
            if (self.omega_l - derived).abs() > 1e-12 * derived.max(1.0) {
                return Err(ModelError::InvalidParameter {
                    name: "omega_l",
                    value: self.omega_l,
                    reason: "inconsistent with gamma_n·b_field in derived mode",
                });
            }
        }
        Ok(())
    }

    /// Switches to derived mode at field `b` (tesla).
    pub fn at_field(mut self, b: f64) -> Self {
        self.b_field = b;
        self.larmor_from_field = true;
        self.omega_l = units::angular_from_mhz(larmor_frequency(self.gamma_n, b));
        self
    }

    /// Same parameters with every dissipative channel switched off.
    pub fn without_dissipation(mut self) -> Self {
        self.t1_electron = f64::INFINITY;
        self.t2_electron = f64::INFINITY;
        self.t1_rho = f64::INFINITY;
        self
    }

    /// Standard deviation of the quasi-static detuning, rad/s. A Gaussian
    /// spread σ gives a free-induction envelope `exp(−σ²t²/2)`, which falls to
    /// 1/e at `t2_star` for σ = √2/t2_star.
    pub fn detuning_sigma(&self) -> f64 {
        if self.t2_star.is_infinite() {
            0.0
        } else {
            2f64.sqrt() / self.t2_star
        }
    }

    /// Nuclear resonance, rad/s, with the electron in ↑ (`true`) or ↓.
    pub fn nmr_resonance(&self, electron_up: bool) -> f64 {
        if electron_up {
            self.omega_l + 0.5 * self.a_par
        } else {
            self.omega_l - 0.5 * self.a_par
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DriveKind {
    Mw,
    Rf,
    None,
}

/// A drive: Rabi frequency and detuning in rad/s, phase in radians. For RF
/// drives the detuning is `ω_L − ω_RF`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveParams {
    pub kind: DriveKind,
    pub rabi: f64,
    pub phase: f64,
    pub detuning: f64,
}

impl DriveParams {
    pub fn mw(rabi: f64, phase: f64, detuning: f64) -> Self {
        Self { kind: DriveKind::Mw, rabi, phase, detuning }
    }

    pub fn rf(rabi: f64, phase: f64, detuning: f64) -> Self {
        Self { kind: DriveKind::Rf, rabi, phase, detuning }
    }

    pub fn none() -> Self {
        Self { kind: DriveKind::None, rabi: 0.0, phase: 0.0, detuning: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.rabi >= 0.0) {
            return Err(ModelError::InvalidParameter { name: "rabi", value: self.rabi, reason: "must be ≥ 0" });
        }
        if self.kind == DriveKind::None && self.rabi != 0.0 {
            return Err(ModelError::InvalidParameter {
                name: "rabi",
                value: self.rabi,
                reason: "a NONE drive carries no amplitude",
            });
        }
        Ok(())
    }

    fn expect(&self, kind: DriveKind) -> Result<(), ModelError> {
        if self.kind != kind {
            return Err(ModelError::WrongDriveKind { expected: kind, found: self.kind });
        }
        self.validate()
    }
}

/// Larmor frequency `γ_N·|B|` in MHz.
pub fn larmor_frequency(gamma_n: f64, b: f64) -> f64 {
    gamma_n * b.abs()
}

/// `Δ S_z + Ω(cos φ S_x + sin φ S_y) + ω_L I_z + A⊥ S_z I_x + A∥ S_z I_z`.
pub fn hamiltonian_mw(p: &SystemParams, d: &DriveParams) -> Result<ComplexMatrix, ModelError> {
    d.expect(DriveKind::Mw)?;
    let o = SpinOps::new();
    Ok(o.s_z.scale(d.detuning)
        + o.s_x.scale(d.rabi * d.phase.cos())
        + o.s_y.scale(d.rabi * d.phase.sin())
        + hyperfine_lab(p, &o))
}

/// `Δ_n I_z + Ω_n(cos φ I_x + sin φ I_y) + A∥ S_z I_z` in the RF frame.
pub fn hamiltonian_rf(p: &SystemParams, d: &DriveParams) -> Result<ComplexMatrix, ModelError> {
    d.expect(DriveKind::Rf)?;
    let o = SpinOps::new();
    Ok(o.i_z.scale(d.detuning)
        + o.i_x.scale(d.rabi * d.phase.cos())
        + o.i_y.scale(d.rabi * d.phase.sin())
        + o.sz_iz.scale(p.a_par))
}

/// Free evolution `Δ S_z + ω_L I_z + A⊥ S_z I_x + A∥ S_z I_z`; `detuning` is
/// the quasi-static electron offset.
pub fn hamiltonian_wait(p: &SystemParams, detuning: f64) -> ComplexMatrix {
    let o = SpinOps::new();
    o.s_z.scale(detuning) + hyperfine_lab(p, &o)
}

/// Lab-frame nuclear drive `H_wait + 2Ω_n cos(ω_RF t) I_x`, with `rf_freq` the
/// angular RF frequency.
pub fn hamiltonian_timedep(p: &SystemParams, rf_amplitude: f64, rf_freq: f64, t: f64) -> ComplexMatrix {
    let o = SpinOps::new();
    hyperfine_lab(p, &o) + o.i_x.scale(2.0 * rf_amplitude * (rf_freq * t).cos())
}

fn hyperfine_lab(p: &SystemParams, o: &SpinOps) -> ComplexMatrix {
    o.i_z.scale(p.omega_l) + o.sz_ix.scale(p.a_perp) + o.sz_iz.scale(p.a_par)
}

/// Full flip-flop transfer time `2π/A⊥` at exact matching.
pub fn hh_transfer_time(a_perp: f64) -> f64 {
    TAU / a_perp
}

/// Drive amplitude (rad/s) at which the dressed electron states cross the
/// nuclear levels. The hyperfine terms shift it below `ω_L` by about
/// `A∥²/(8ω_L)`, so the crossing is located numerically as the minimum of
/// the gap between the two middle eigenvalues of the MW Hamiltonian.
pub fn hh_resonance(p: &SystemParams) -> f64 {
    let gap = |omega: f64| -> f64 {
        let h = hamiltonian_mw(p, &DriveParams::mw(omega, 0.0, 0.0)).expect("valid MW drive");
        let ev = h.hermitian_eigenvalues();
        ev[2] - ev[1]
    };
    let span = 0.5 * p.omega_l.max(p.a_par).max(p.a_perp);
    let (mut a, mut b) = ((p.omega_l - span).max(0.0), p.omega_l + span);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (gap(c), gap(d));
    while b - a > 1e-9 * p.omega_l.max(1.0) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = gap(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = gap(d);
        }
    }
    0.5 * (a + b)
}

/// Phase of a pulse rotating about +y; a π/2 pulse at this phase takes ↑ to +x.
pub const PHASE_Y: f64 = PI / 2.0;
