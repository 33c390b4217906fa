//! Pulse sequences: the segment representation, the template compiler for
//! each experiment, static validation, and the executor.
//!
//! The executor keeps an absolute clock. RF segments are propagated in the
//! frame rotating at the RF frequency, entered and left at the segment's
//! start and end times, so the nuclear phase stays consistent across any mix
//! of RF pulses and free evolution.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dynamics::{check_joint, expectation, laser_reset, Channel, DynamicsError, Propagator};
use crate::model::{hamiltonian_mw, hamiltonian_rf, hamiltonian_wait, DriveKind, DriveParams, ModelError, SystemParams};
use crate::operator::{ComplexMatrix, DensityMatrix, C64};
use crate::readout::{expected_contrast, FluorescenceParams, ReadoutError, ReadoutWindow};
use crate::spin::SpinOps;
use crate::units;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    LaserInit,
    MwPulse,
    RfPulse,
    Wait,
    Readout,
}

impl SegmentKind {
    pub fn id(&self) -> &'static str {
        match self {
            SegmentKind::LaserInit => "LASER_INIT",
            SegmentKind::MwPulse => "MW_PULSE",
            SegmentKind::RfPulse => "RF_PULSE",
            SegmentKind::Wait => "WAIT",
            SegmentKind::Readout => "READOUT",
        }
    }
}

impl FromStr for SegmentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [
            SegmentKind::LaserInit,
            SegmentKind::MwPulse,
            SegmentKind::RfPulse,
            SegmentKind::Wait,
            SegmentKind::Readout,
        ]
        .into_iter()
        .find(|k| k.id() == s)
        .ok_or_else(|| format!("unknown segment kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub kind: SegmentKind,
    /// Seconds.
    pub duration: f64,
    pub drive: Option<DriveParams>,
    pub window: Option<ReadoutWindow>,
    /// Explicit start time; by default a segment starts when the previous
    /// one ends.
    pub start: Option<f64>,
    /// Spin-lock segment: T1ρ relaxation replaces T2 dephasing.
    pub lock: bool,
    /// Phase inverted (φ + π) in the reversed variant of the sequence.
    pub reversible: bool,
    pub label: Option<String>,
}

impl Segment {
    fn bare(kind: SegmentKind, duration: f64) -> Self {
        Self { kind, duration, drive: None, window: None, start: None, lock: false, reversible: false, label: None }
    }

    pub fn laser_init() -> Self {
        Self::bare(SegmentKind::LaserInit, 0.0)
    }

    pub fn wait(duration: f64) -> Self {
        Self::bare(SegmentKind::Wait, duration)
    }

    pub fn mw(drive: DriveParams, duration: f64) -> Self {
        Self { drive: Some(drive), ..Self::bare(SegmentKind::MwPulse, duration) }
    }

    pub fn rf(drive: DriveParams, duration: f64) -> Self {
        Self { drive: Some(drive), ..Self::bare(SegmentKind::RfPulse, duration) }
    }

    pub fn readout(window: ReadoutWindow) -> Self {
        Self { window: Some(window), ..Self::bare(SegmentKind::Readout, 0.0) }
    }

    pub fn locked(mut self) -> Self {
        self.lock = true;
        self
    }

    pub fn reversible(mut self) -> Self {
        self.reversible = true;
        self
    }

    pub fn labeled(mut self, label: &str) -> Self {
        self.label = Some(label.to_string());
        self
    }

    pub fn starting_at(mut self, t: f64) -> Self {
        self.start = Some(t);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub segments: Vec<Segment>,
    pub shots: u32,
    /// Run each shot twice, once with every reversible pulse phase-inverted,
    /// and average the two.
    pub alternate_reversal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    NegativeDuration,
    MissingDrive,
    UnexpectedDrive,
    DriveKindMismatch,
    InvalidDrive,
    MissingWindow,
    UnexpectedWindow,
    InvalidWindow,
    NoReadout,
    MwBeforeLaserInit,
    SimultaneousDrives,
    Overlap,
    LockWithoutMw,
    ZeroShots,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::NegativeDuration => "duration must be ≥ 0",
            Rule::MissingDrive => "pulse segment needs a drive",
            Rule::UnexpectedDrive => "only MW and RF pulses carry a drive",
            Rule::DriveKindMismatch => "drive kind must match the segment kind",
            Rule::InvalidDrive => "drive parameters invalid",
            Rule::MissingWindow => "READOUT needs a window",
            Rule::UnexpectedWindow => "only READOUT carries a window",
            Rule::InvalidWindow => "readout windows must fit inside the laser pulse",
            Rule::NoReadout => "sequence needs at least one READOUT",
            Rule::MwBeforeLaserInit => "LASER_INIT must precede the first MW pulse",
            Rule::SimultaneousDrives => "MW and RF drives may not overlap",
            Rule::Overlap => "segments may not overlap",
            Rule::LockWithoutMw => "only MW pulses can be spin locks",
            Rule::ZeroShots => "shots must be ≥ 1",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub segment: Option<usize>,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.segment {
            Some(i) => write!(f, "segment {i}: {} ({})", self.rule, self.message),
            None => write!(f, "sequence: {} ({})", self.rule, self.message),
        }
    }
}

/// Checks every segment and sequence invariant; empty when well formed.
pub fn validate(seq: &Sequence) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut diag = |segment: Option<usize>, rule: Rule, message: String| {
        out.push(Diagnostic { segment, rule, message });
    };
    if seq.shots == 0 {
        diag(None, Rule::ZeroShots, "shots = 0".into());
    }
    let mut clock = 0.0f64;
    let mut seen_laser = false;
    let mut seen_mw = false;
    let mut last_drive: Option<(usize, DriveKind, f64)> = None;
    for (i, s) in seq.segments.iter().enumerate() {
        let at = Some(i);
        if !(s.duration >= 0.0) {
            diag(at, Rule::NegativeDuration, format!("duration {}", s.duration));
        }
        let wants_drive = matches!(s.kind, SegmentKind::MwPulse | SegmentKind::RfPulse);
        match (&s.drive, wants_drive) {
            (None, true) => diag(at, Rule::MissingDrive, s.kind.id().into()),
            (Some(_), false) => diag(at, Rule::UnexpectedDrive, s.kind.id().into()),
            (Some(d), true) => {
                let expected = if s.kind == SegmentKind::MwPulse { DriveKind::Mw } else { DriveKind::Rf };
                if d.kind != expected {
                    diag(at, Rule::DriveKindMismatch, format!("{:?} drive on {}", d.kind, s.kind.id()));
                }
                if let Err(e) = d.validate() {
                    diag(at, Rule::InvalidDrive, e.to_string());
                }
            }
            (None, false) => {}
        }
        match (&s.window, s.kind == SegmentKind::Readout) {
            (None, true) => diag(at, Rule::MissingWindow, String::new()),
            (Some(_), false) => diag(at, Rule::UnexpectedWindow, s.kind.id().into()),
            (Some(w), true) => {
                if let Err(e) = w.validate() {
                    diag(at, Rule::InvalidWindow, e.to_string());
                }
            }
            (None, false) => {}
        }
        if s.lock && s.kind != SegmentKind::MwPulse {
            diag(at, Rule::LockWithoutMw, s.kind.id().into());
        }
        if s.kind == SegmentKind::LaserInit {
            seen_laser = true;
        }
        if s.kind == SegmentKind::MwPulse && !seen_mw {
            seen_mw = true;
            if !seen_laser {
                diag(at, Rule::MwBeforeLaserInit, String::new());
            }
        }
        let start = s.start.unwrap_or(clock);
        if start < clock - 1e-15 {
            let drive_kind = s.drive.map(|d| d.kind);
            let clash = match (last_drive, drive_kind) {
                (Some((j, k, end)), Some(kind)) if k != kind && start < end => Some(j),
                _ => None,
            };
            match clash {
                Some(j) => diag(
                    at,
                    Rule::SimultaneousDrives,
                    format!("starts at {start:e} s while segment {j} is still driving"),
                ),
                None => diag(at, Rule::Overlap, format!("starts at {start:e} s before {clock:e} s")),
            }
        }
        let end = start + s.duration.max(0.0);
        if let Some(d) = s.drive {
            last_drive = Some((i, d.kind, end));
        }
        clock = clock.max(end);
    }
    if !seq.segments.iter().any(|s| s.kind == SegmentKind::Readout) {
        diag(None, Rule::NoReadout, String::new());
    }
    out
}

// ---------------------------------------------------------------------------
// Templates

pub type Knobs = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("missing knob `{0}`")]
    MissingKnob(String),
    #[error("unknown knob `{0}`")]
    ExtraKnob(String),
    #[error("knob `{name}` = {value}: {reason}")]
    InvalidKnob { name: String, value: f64, reason: &'static str },
    #[error("π pulse `{knob}` = {found} μs is inconsistent with the Rabi frequency (expected {expected} μs)")]
    InconsistentPiPulse { knob: String, expected: f64, found: f64 },
    #[error("compiled sequence is invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Template {
    ElectronT1,
    Odmr,
    ElectronRabi,
    HahnEcho,
    HhSweep,
    SpinLock,
    Novel,
    Nmr,
    NuclearRabi,
    NuclearEcho,
}

const READOUT_KNOBS: [&str; 3] = ["readout_leading_us", "readout_trailing_us", "readout_pulse_us"];

impl Template {
    pub const ALL: [Template; 10] = [
        Template::ElectronT1,
        Template::Odmr,
        Template::ElectronRabi,
        Template::HahnEcho,
        Template::HhSweep,
        Template::SpinLock,
        Template::Novel,
        Template::Nmr,
        Template::NuclearRabi,
        Template::NuclearEcho,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Template::ElectronT1 => "electron_t1",
            Template::Odmr => "odmr",
            Template::ElectronRabi => "electron_rabi",
            Template::HahnEcho => "hahn_echo",
            Template::HhSweep => "hh_sweep",
            Template::SpinLock => "spin_lock",
            Template::Novel => "novel",
            Template::Nmr => "nmr",
            Template::NuclearRabi => "nuclear_rabi",
            Template::NuclearEcho => "nuclear_echo",
        }
    }

    /// Default knob values (external units, named by suffix).
    pub fn default_knobs(&self, p: &SystemParams) -> Knobs {
        let w = ReadoutWindow::default();
        let mut k = Knobs::new();
        let mut set = |name: &str, v: f64| {
            k.insert(name.to_string(), v);
        };
        set("readout_leading_us", units::us_from_seconds(w.leading));
        set("readout_trailing_us", units::us_from_seconds(w.trailing));
        set("readout_pulse_us", units::us_from_seconds(w.pulse));
        let lock_mhz = units::mhz_from_angular(crate::model::hh_resonance(p));
        let mw = |set: &mut dyn FnMut(&str, f64)| {
            set("mw_rabi_mhz", DEFAULT_MW_RABI_MHZ);
            set("pi_pulse_us", pi_duration_us(DEFAULT_MW_RABI_MHZ));
        };
        let lock = |set: &mut dyn FnMut(&str, f64)| {
            set("mw_rabi_mhz", DEFAULT_MW_RABI_MHZ);
            set("pi_pulse_us", pi_duration_us(DEFAULT_MW_RABI_MHZ));
            set("lock_rabi_mhz", lock_mhz);
            set("lock_us", DEFAULT_LOCK_US);
        };
        let rf_pi = pi_duration_us(DEFAULT_RF_RABI_KHZ * 1e-3);
        let nuclear = |set: &mut dyn FnMut(&str, f64)| {
            lock(set);
            set("prepol_reps", 6.0);
            set("rf_freq_mhz", units::mhz_from_angular(p.nmr_resonance(true)));
            set("rf_rabi_khz", DEFAULT_RF_RABI_KHZ);
        };
        match self {
            Template::ElectronT1 => {
                set("wait_ms", 0.0);
                set("shots", 1.0);
            }
            Template::Odmr => {
                set("mw_rabi_mhz", ODMR_RABI_MHZ);
                set("pi_pulse_us", pi_duration_us(ODMR_RABI_MHZ));
                set("detuning_mhz", 0.0);
                set("shots", 200.0);
            }
            Template::ElectronRabi => {
                mw(&mut set);
                set("duration_us", 0.0);
                set("shots", 200.0);
            }
            Template::HahnEcho => {
                mw(&mut set);
                set("tau_us", 0.0);
                set("final_phase_deg", 0.0);
                set("shots", 200.0);
            }
            Template::HhSweep => {
                lock(&mut set);
                set("lock_us", DEFAULT_HH_LOCK_US);
                set("shots", 1.0);
            }
            Template::SpinLock => {
                lock(&mut set);
                set("shots", 1.0);
            }
            Template::Novel => {
                lock(&mut set);
                set("reps", 10.0);
                set("record_each", 1.0);
                set("shots", 1.0);
            }
            Template::Nmr | Template::NuclearRabi => {
                nuclear(&mut set);
                set("rf_duration_us", rf_pi);
                set("electron_down", 0.0);
                set("shots", 1.0);
            }
            Template::NuclearEcho => {
                nuclear(&mut set);
                set("rf_pi_us", rf_pi);
                set("tau_ms", 0.0);
                set("final_phase_deg", 0.0);
                set("reinit", 1.0);
                set("shots", 1.0);
            }
        }
        k
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Template {
    type Err = CompileError;
    fn from_str(s: &str) -> Result<Self, CompileError> {
        let key = s.trim().to_ascii_lowercase();
        Template::ALL
            .into_iter()
            .find(|t| t.id() == key)
            .ok_or_else(|| CompileError::UnknownTemplate(s.to_string()))
    }
}

/// Electron drive used for π and π/2 pulses.
pub const DEFAULT_MW_RABI_MHZ: f64 = 10.0;
/// Weaker ODMR drive, whose power broadening sets part of the linewidth.
pub const ODMR_RABI_MHZ: f64 = 1.0;
/// Lock duration close to the first full transfer.
pub const DEFAULT_LOCK_US: f64 = 4.0;
/// Lock duration of the Hartmann-Hahn sweep, where the dip of a single
/// nucleus is still a single clean minimum.
pub const DEFAULT_HH_LOCK_US: f64 = 2.0;
pub const DEFAULT_RF_RABI_KHZ: f64 = 10.1;

/// Ideal π-pulse duration in μs for a Rabi frequency in MHz.
pub fn pi_duration_us(rabi_mhz: f64) -> f64 {
    1.0 / (2.0 * rabi_mhz)
}

struct KnobReader<'a> {
    knobs: &'a Knobs,
}

impl KnobReader<'_> {
    fn get(&self, name: &str) -> Result<f64, CompileError> {
        let v = *self.knobs.get(name).ok_or_else(|| CompileError::MissingKnob(name.into()))?;
        if !v.is_finite() {
            return Err(CompileError::InvalidKnob { name: name.into(), value: v, reason: "must be finite" });
        }
        Ok(v)
    }

    fn non_negative(&self, name: &str) -> Result<f64, CompileError> {
        let v = self.get(name)?;
        if v < 0.0 {
            return Err(CompileError::InvalidKnob { name: name.into(), value: v, reason: "must be ≥ 0" });
        }
        Ok(v)
    }

    fn positive(&self, name: &str) -> Result<f64, CompileError> {
        let v = self.get(name)?;
        if !(v > 0.0) {
            return Err(CompileError::InvalidKnob { name: name.into(), value: v, reason: "must be > 0" });
        }
        Ok(v)
    }

    fn count(&self, name: &str) -> Result<u32, CompileError> {
        let v = self.non_negative(name)?;
        if v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(CompileError::InvalidKnob { name: name.into(), value: v, reason: "must be a whole number" });
        }
        Ok(v as u32)
    }

    fn flag(&self, name: &str) -> Result<bool, CompileError> {
        match self.get(name)? {
            v if v == 0.0 => Ok(false),
            v if v == 1.0 => Ok(true),
            v => Err(CompileError::InvalidKnob { name: name.into(), value: v, reason: "must be 0 or 1" }),
        }
    }

    /// Rabi frequency (MHz) with its π-pulse duration (μs) checked for
    /// consistency.
    fn pi_pair(&self, rabi_knob: &str, rabi_scale_to_mhz: f64, pi_knob: &str) -> Result<(f64, f64), CompileError> {
        let rabi = self.positive(rabi_knob)? * rabi_scale_to_mhz;
        let pi = self.positive(pi_knob)?;
        let expected = pi_duration_us(rabi);
        if (pi - expected).abs() > 1e-6 * expected {
            return Err(CompileError::InconsistentPiPulse { knob: pi_knob.into(), expected, found: pi });
        }
        Ok((rabi, pi))
    }

    fn window(&self) -> Result<ReadoutWindow, CompileError> {
        let w = ReadoutWindow {
            leading: units::seconds_from_us(self.positive(READOUT_KNOBS[0])?),
            trailing: units::seconds_from_us(self.positive(READOUT_KNOBS[1])?),
            pulse: units::seconds_from_us(self.positive(READOUT_KNOBS[2])?),
        };
        w.validate().map_err(|e| CompileError::Invalid(e.to_string()))?;
        Ok(w)
    }
}

/// Spin-lock transfer block: π/2 about +y taking ↑ to +x, lock along x,
/// π/2 about −y returning the locked component to ↑. Both π/2 pulses are
/// inverted in the reversed variant, which locks along −x instead.
fn lock_block(rabi_mhz: f64, pi_us: f64, lock_rabi_mhz: f64, lock_us: f64) -> [Segment; 3] {
    let rabi = units::angular_from_mhz(rabi_mhz);
    let half_pi = units::seconds_from_us(pi_us / 2.0);
    [
        Segment::mw(DriveParams::mw(rabi, PI / 2.0, 0.0), half_pi).reversible(),
        Segment::mw(DriveParams::mw(units::angular_from_mhz(lock_rabi_mhz), 0.0, 0.0), units::seconds_from_us(lock_us))
            .locked(),
        Segment::mw(DriveParams::mw(rabi, -PI / 2.0, 0.0), half_pi).reversible(),
    ]
}

/// Builds the sequence of a template from a complete knob set.
pub fn compile_template(template: Template, p: &SystemParams, knobs: &Knobs) -> Result<Sequence, CompileError> {
    let expected = template.default_knobs(p);
    if let Some(extra) = knobs.keys().find(|k| !expected.contains_key(*k)) {
        return Err(CompileError::ExtraKnob(extra.clone()));
    }
    if let Some(missing) = expected.keys().find(|k| !knobs.contains_key(*k)) {
        return Err(CompileError::MissingKnob(missing.clone()));
    }
    let k = KnobReader { knobs };
    let window = k.window()?;
    let shots = k.count("shots")?;
    if shots == 0 {
        return Err(CompileError::InvalidKnob { name: "shots".into(), value: 0.0, reason: "must be ≥ 1" });
    }
    let mut segs = vec![Segment::laser_init()];
    let mut alternate_reversal = false;
    let readout = |label: &str| Segment::readout(window).labeled(label);
    match template {
        Template::ElectronT1 => {
            segs.push(Segment::wait(units::seconds_from_ms(k.non_negative("wait_ms")?)));
            segs.push(readout("final"));
        }
        Template::Odmr => {
            let (rabi, pi) = k.pi_pair("mw_rabi_mhz", 1.0, "pi_pulse_us")?;
            let detuning = units::angular_from_mhz(k.get("detuning_mhz")?);
            segs.push(Segment::mw(
                DriveParams::mw(units::angular_from_mhz(rabi), 0.0, detuning),
                units::seconds_from_us(pi),
            ));
            segs.push(readout("final"));
        }
        Template::ElectronRabi => {
            let (rabi, _) = k.pi_pair("mw_rabi_mhz", 1.0, "pi_pulse_us")?;
            segs.push(Segment::mw(
                DriveParams::mw(units::angular_from_mhz(rabi), 0.0, 0.0),
                units::seconds_from_us(k.non_negative("duration_us")?),
            ));
            segs.push(readout("final"));
        }
        Template::HahnEcho => {
            let (rabi, pi) = k.pi_pair("mw_rabi_mhz", 1.0, "pi_pulse_us")?;
            let omega = units::angular_from_mhz(rabi);
            let tau = units::seconds_from_us(k.non_negative("tau_us")?);
            let final_phase = k.get("final_phase_deg")?.to_radians();
            let pi_s = units::seconds_from_us(pi);
            segs.extend([
                Segment::mw(DriveParams::mw(omega, 0.0, 0.0), pi_s / 2.0),
                Segment::wait(tau),
                Segment::mw(DriveParams::mw(omega, 0.0, 0.0), pi_s),
                Segment::wait(tau),
                Segment::mw(DriveParams::mw(omega, final_phase, 0.0), pi_s / 2.0),
                readout("final"),
            ]);
        }
        Template::HhSweep | Template::SpinLock => {
            let (rabi, pi) = k.pi_pair("mw_rabi_mhz", 1.0, "pi_pulse_us")?;
            segs.extend(lock_block(rabi, pi, k.non_negative("lock_rabi_mhz")?, k.non_negative("lock_us")?));
            segs.push(readout("final"));
            alternate_reversal = template == Template::HhSweep;
        }
        Template::Novel => {
            let (rabi, pi) = k.pi_pair("mw_rabi_mhz", 1.0, "pi_pulse_us")?;
            let block = lock_block(rabi, pi, k.non_negative("lock_rabi_mhz")?, k.non_negative("lock_us")?);
            let record_each = k.flag("record_each")?;
            for rep in 0..k.count("reps")? {
                segs.extend(block.iter().cloned());
                if record_each {
                    segs.push(readout(&format!("rep{}", rep + 1)));
                }
                segs.push(Segment::laser_init());
            }
            segs.push(readout("final"));
        }
        Template::Nmr | Template::NuclearRabi | Template::NuclearEcho => {
            let (rabi, pi) = k.pi_pair("mw_rabi_mhz", 1.0, "pi_pulse_us")?;
            let block = lock_block(rabi, pi, k.non_negative("lock_rabi_mhz")?, k.non_negative("lock_us")?);
            for _ in 0..k.count("prepol_reps")? {
                segs.extend(block.iter().cloned());
                segs.push(Segment::laser_init());
            }
            let rf_rabi = units::angular_from_khz(k.non_negative("rf_rabi_khz")?);
            let rf_detuning = p.omega_l - units::angular_from_mhz(k.positive("rf_freq_mhz")?);
            let rf = |phase: f64, duration_us: f64| {
                Segment::rf(DriveParams::rf(rf_rabi, phase, rf_detuning), units::seconds_from_us(duration_us))
            };
            if template == Template::NuclearEcho {
                let (_, rf_pi) = k.pi_pair("rf_rabi_khz", 1e-3, "rf_pi_us")?;
                let tau = units::seconds_from_ms(k.non_negative("tau_ms")?);
                let reinit = k.flag("reinit")?;
                let final_phase = k.get("final_phase_deg")?.to_radians();
                segs.push(rf(0.0, rf_pi / 2.0));
                segs.push(Segment::wait(tau));
                if reinit {
                    segs.push(Segment::laser_init());
                }
                segs.push(rf(0.0, rf_pi));
                segs.push(Segment::wait(tau));
                if reinit {
                    segs.push(Segment::laser_init());
                }
                segs.push(rf(final_phase, rf_pi / 2.0));
            } else {
                if k.flag("electron_down")? {
                    segs.push(Segment::mw(
                        DriveParams::mw(units::angular_from_mhz(rabi), 0.0, 0.0),
                        units::seconds_from_us(pi),
                    ));
                }
                segs.push(rf(0.0, k.non_negative("rf_duration_us")?));
            }
            segs.push(readout("probe"));
            segs.push(Segment::laser_init());
            segs.extend(block.iter().cloned());
            segs.push(readout("final"));
        }
    }
    let seq = Sequence { segments: segs, shots, alternate_reversal };
    let diags = validate(&seq);
    if let Some(d) = diags.first() {
        return Err(CompileError::Invalid(d.to_string()));
    }
    Ok(seq)
}

// ---------------------------------------------------------------------------
// Execution

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("sequence fails validation: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("segment {segment}: {source}")]
    Propagation { segment: usize, source: DynamicsError },
    #[error("segment {segment}: {source}")]
    Model { segment: usize, source: ModelError },
    #[error("segment {segment}: {source}")]
    Readout { segment: usize, source: ReadoutError },
    #[error(transparent)]
    Params(ModelError),
    #[error("initial state: {0}")]
    InitialState(DynamicsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub seed: u64,
    /// Record ⟨S⟩ and ⟨I_z⟩ at least this often (seconds) when set.
    pub trajectory_step: Option<f64>,
    pub fluorescence: FluorescenceParams,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { seed: 0, trajectory_step: None, fluorescence: FluorescenceParams::default() }
    }
}

/// Shot-averaged observables at a READOUT segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutRecord {
    pub segment: usize,
    pub label: Option<String>,
    /// Electron ↓ population entering the readout.
    pub p_bright: f64,
    pub contrast: f64,
    pub sx: f64,
    pub sz: f64,
    pub iz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub sx: f64,
    pub sz: f64,
    pub iz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub final_state: DensityMatrix,
    pub records: Vec<ReadoutRecord>,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

impl RunOutput {
    pub fn record(&self, label: &str) -> Option<&ReadoutRecord> {
        self.records.iter().find(|r| r.label.as_deref() == Some(label))
    }
}

/// Quasi-static electron detunings, one per shot, by stratified sampling of
/// a zero-mean Gaussian with standard deviation `sigma`. A single shot is
/// noise-free.
pub fn detuning_samples(shots: u32, sigma: f64, seed: u64) -> Vec<f64> {
    if shots <= 1 || sigma == 0.0 {
        return vec![0.0; shots.max(1) as usize];
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..shots)
        .map(|k| {
            let u = (k as f64 + rng.random::<f64>()) / shots as f64;
            normal.inverse_cdf(u.clamp(1e-12, 1.0 - 1e-12))
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct PropKey {
    kind: SegmentKind,
    duration: u64,
    rabi: u64,
    phase: u64,
    detuning: u64,
    shot_detuning: u64,
    lock: bool,
}

struct Executor<'a> {
    p: &'a SystemParams,
    ops: SpinOps,
    free: Vec<Channel>,
    locked: Vec<Channel>,
    cache: HashMap<PropKey, Arc<Propagator>>,
}

impl<'a> Executor<'a> {
    fn new(p: &'a SystemParams) -> Self {
        Self { p, ops: SpinOps::new(), free: Channel::free_set(p), locked: Channel::lock_set(p), cache: HashMap::new() }
    }

    fn propagator(
        &mut self,
        kind: SegmentKind,
        drive: DriveParams,
        lock: bool,
        delta: f64,
        duration: f64,
    ) -> Result<Arc<Propagator>, RunError> {
        let key = PropKey {
            kind,
            duration: duration.to_bits(),
            rabi: drive.rabi.to_bits(),
            phase: drive.phase.to_bits(),
            detuning: drive.detuning.to_bits(),
            shot_detuning: delta.to_bits(),
            lock,
        };
        if let Some(prop) = self.cache.get(&key) {
            return Ok(prop.clone());
        }
        let h = match kind {
            SegmentKind::MwPulse => {
                let d = DriveParams { detuning: drive.detuning + delta, ..drive };
                hamiltonian_mw(self.p, &d).map_err(|e| RunError::Model { segment: 0, source: e })?
            }
            SegmentKind::RfPulse => {
                let h = hamiltonian_rf(self.p, &drive).map_err(|e| RunError::Model { segment: 0, source: e })?;
                h + self.ops.s_z.scale(delta)
            }
            _ => hamiltonian_wait(self.p, delta),
        };
        let channels = if lock { &self.locked } else { &self.free };
        let prop = Arc::new(
            Propagator::new(&h, channels, duration).map_err(|e| RunError::Propagation { segment: 0, source: e })?,
        );
        self.cache.insert(key, prop.clone());
        Ok(prop)
    }

    fn observe(&self, rho: &DensityMatrix) -> (f64, f64, f64) {
        let ev = |op: &ComplexMatrix| expectation(rho, op).unwrap_or(f64::NAN);
        (ev(&self.ops.s_x), ev(&self.ops.s_z), ev(&self.ops.i_z))
    }
}

/// Moves the nuclear factor into (`sign` = +1) or out of (−1) the frame
/// rotating at `omega` at time `t`: `ρ → R ρ R†` with `R = exp(i·sign·ω t I_z)`.
fn rotate_nuclear_frame(rho: &DensityMatrix, omega: f64, t: f64, sign: f64) -> DensityMatrix {
    let m = rho.matrix();
    let mut out = m.clone();
    let theta = sign * (omega * t).rem_euclid(std::f64::consts::TAU);
    let m_n = [0.5, -0.5, 0.5, -0.5];
    for a in 0..4 {
        for b in 0..4 {
            let dm = m_n[a] - m_n[b];
            if dm != 0.0 {
                out.set(a, b, m.get(a, b) * C64::from_polar(1.0, theta * dm));
            }
        }
    }
    DensityMatrix::new_unchecked(out)
}

/// Executes a sequence: every shot (and, with alternate reversal, both
/// variants) is propagated from `rho0`, and states, records and trajectories
/// are averaged.
pub fn run(seq: &Sequence, p: &SystemParams, rho0: &DensityMatrix, opts: &RunOptions) -> Result<RunOutput, RunError> {
    let diags = validate(seq);
    if !diags.is_empty() {
        return Err(RunError::Invalid(diags));
    }
    p.validate().map_err(RunError::Params)?;
    check_joint(rho0).map_err(RunError::InitialState)?;
    rho0.validate().map_err(|e| RunError::InitialState(e.into()))?;
    if seq.segments.iter().any(|s| s.kind == SegmentKind::Readout) {
        opts.fluorescence.validate().map_err(|e| RunError::Readout { segment: 0, source: e })?;
    }

    let deltas = detuning_samples(seq.shots, p.detuning_sigma(), opts.seed);
    let variants: &[bool] = if seq.alternate_reversal { &[false, true] } else { &[false] };
    let weight = 1.0 / (deltas.len() * variants.len()) as f64;

    let mut exec = Executor::new(p);
    let mut final_acc = ComplexMatrix::zeros(4);
    let mut records: Vec<ReadoutRecord> = Vec::new();
    let mut trajectory: Option<Vec<TrajectoryPoint>> = opts.trajectory_step.map(|_| Vec::new());
    let mut first_pass = true;

    for &delta in &deltas {
        for &reversed in variants {
            let mut rho = rho0.clone();
            let mut clock = 0.0f64;
            let mut rec_index = 0usize;
            let mut traj_index = 0usize;
            let mut push_traj = |exec: &Executor, rho: &DensityMatrix, time: f64, traj: &mut Option<Vec<TrajectoryPoint>>| {
                if let Some(points) = traj.as_mut() {
                    let (sx, sz, iz) = exec.observe(rho);
                    if first_pass {
                        points.push(TrajectoryPoint { time, sx: weight * sx, sz: weight * sz, iz: weight * iz });
                    } else {
                        let pt = &mut points[traj_index];
                        pt.sx += weight * sx;
                        pt.sz += weight * sz;
                        pt.iz += weight * iz;
                    }
                    traj_index += 1;
                }
            };
            push_traj(&exec, &rho, clock, &mut trajectory);

            for (i, seg) in seq.segments.iter().enumerate() {
                if let Some(start) = seg.start {
                    if start > clock {
                        let prop = exec.propagator(SegmentKind::Wait, DriveParams::none(), false, delta, start - clock)?;
                        rho = prop.apply(&rho).map_err(|e| RunError::Propagation { segment: i, source: e })?;
                        clock = start;
                    }
                }
                let fail = |e: RunError| relabel(e, i);
                match seg.kind {
                    SegmentKind::LaserInit => {
                        if seg.duration > 0.0 {
                            let prop = exec
                                .propagator(SegmentKind::Wait, DriveParams::none(), false, delta, seg.duration)
                                .map_err(fail)?;
                            rho = prop.apply(&rho).map_err(|e| RunError::Propagation { segment: i, source: e })?;
                        }
                        rho = laser_reset(&rho, p);
                        rho.validate().map_err(|e| RunError::Propagation { segment: i, source: e.into() })?;
                        clock += seg.duration;
                        push_traj(&exec, &rho, clock, &mut trajectory);
                    }
                    SegmentKind::Readout => {
                        let (sx, sz, iz) = exec.observe(&rho);
                        let p_bright = rho.matrix().get(2, 2).re + rho.matrix().get(3, 3).re;
                        if first_pass {
                            records.push(ReadoutRecord {
                                segment: i,
                                label: seg.label.clone(),
                                p_bright: weight * p_bright,
                                contrast: 0.0,
                                sx: weight * sx,
                                sz: weight * sz,
                                iz: weight * iz,
                            });
                        } else {
                            let r = &mut records[rec_index];
                            r.p_bright += weight * p_bright;
                            r.sx += weight * sx;
                            r.sz += weight * sz;
                            r.iz += weight * iz;
                        }
                        rec_index += 1;
                    }
                    SegmentKind::MwPulse | SegmentKind::RfPulse | SegmentKind::Wait => {
                        let mut drive = seg.drive.unwrap_or_else(DriveParams::none);
                        if reversed && seg.reversible {
                            drive.phase += PI;
                        }
                        let pieces = match opts.trajectory_step {
                            Some(step) if step > 0.0 && seg.duration > step => (seg.duration / step).ceil() as usize,
                            _ => 1,
                        };
                        let piece = seg.duration / pieces as f64;
                        if seg.duration == 0.0 {
                            continue;
                        }
                        let prop = exec.propagator(seg.kind, drive, seg.lock, delta, piece).map_err(fail)?;
                        let rf_omega = p.omega_l - drive.detuning;
                        for _ in 0..pieces {
                            rho = if seg.kind == SegmentKind::RfPulse {
                                let rot = rotate_nuclear_frame(&rho, rf_omega, clock, 1.0);
                                let evolved =
                                    prop.apply(&rot).map_err(|e| RunError::Propagation { segment: i, source: e })?;
                                rotate_nuclear_frame(&evolved, rf_omega, clock + piece, -1.0)
                            } else {
                                prop.apply(&rho).map_err(|e| RunError::Propagation { segment: i, source: e })?
                            };
                            clock += piece;
                            push_traj(&exec, &rho, clock, &mut trajectory);
                        }
                    }
                }
            }
            final_acc = &final_acc + &rho.matrix().scale(weight);
            first_pass = false;
        }
    }

    for r in &mut records {
        let w = seq.segments[r.segment].window.unwrap_or_default();
        r.contrast = expected_contrast(r.p_bright.clamp(0.0, 1.0), &opts.fluorescence, &w)
            .map_err(|e| RunError::Readout { segment: r.segment, source: e })?;
    }
    let final_state =
        DensityMatrix::new(final_acc).map_err(|e| RunError::Propagation { segment: seq.segments.len(), source: e.into() })?;
    Ok(RunOutput { final_state, records, trajectory })
}

fn relabel(e: RunError, segment: usize) -> RunError {
    match e {
        RunError::Propagation { source, .. } => RunError::Propagation { segment, source },
        RunError::Model { source, .. } => RunError::Model { segment, source },
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Text form

/// One line per segment, `key=value` fields, preceded by a header line.
pub fn to_text(seq: &Sequence) -> String {
    let mut out = format!("SEQUENCE shots={} alternate_reversal={}\n", seq.shots, seq.alternate_reversal);
    for s in &seq.segments {
        let mut line = format!("{} duration={}", s.kind.id(), s.duration);
        if let Some(d) = s.drive {
            let kind = match d.kind {
                DriveKind::Mw => "MW",
                DriveKind::Rf => "RF",
                DriveKind::None => "NONE",
            };
            line.push_str(&format!(" drive={kind} rabi={} phase={} detuning={}", d.rabi, d.phase, d.detuning));
        }
        if let Some(w) = s.window {
            line.push_str(&format!(" leading={} trailing={} pulse={}", w.leading, w.trailing, w.pulse));
        }
        if let Some(t) = s.start {
            line.push_str(&format!(" start={t}"));
        }
        if s.lock {
            line.push_str(" lock=true");
        }
        if s.reversible {
            line.push_str(" reversible=true");
        }
        if let Some(l) = &s.label {
            line.push_str(&format!(" label={l}"));
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

/// Inverse of [`to_text`].
pub fn from_text(text: &str) -> Result<Sequence, ParseError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let err = |line: usize, message: String| ParseError { line: line + 1, message };
    let (n, header) = lines.next().ok_or_else(|| err(0, "empty input".into()))?;
    let fields = parse_fields(header.strip_prefix("SEQUENCE").ok_or_else(|| err(n, "expected SEQUENCE header".into()))?)
        .map_err(|m| err(n, m))?;
    let shots = fields.get("shots").ok_or_else(|| err(n, "missing shots".into()))?.parse().map_err(|_| err(n, "bad shots".into()))?;
    let alternate_reversal = fields
        .get("alternate_reversal")
        .map(|v| v.parse::<bool>())
        .transpose()
        .map_err(|_| err(n, "bad alternate_reversal".into()))?
        .unwrap_or(false);
    let mut segments = Vec::new();
    for (n, line) in lines {
        let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
        let kind: SegmentKind = kind.parse().map_err(|m| err(n, m))?;
        let f = parse_fields(rest).map_err(|m| err(n, m))?;
        let num = |key: &str| -> Result<Option<f64>, ParseError> {
            f.get(key).map(|v| v.parse::<f64>().map_err(|_| err(n, format!("bad number for {key}")))).transpose()
        };
        let mut seg = Segment::bare(kind, num("duration")?.ok_or_else(|| err(n, "missing duration".into()))?);
        if let Some(dk) = f.get("drive") {
            let dkind = match dk.as_str() {
                "MW" => DriveKind::Mw,
                "RF" => DriveKind::Rf,
                "NONE" => DriveKind::None,
                other => return Err(err(n, format!("unknown drive kind `{other}`"))),
            };
            seg.drive = Some(DriveParams {
                kind: dkind,
                rabi: num("rabi")?.unwrap_or(0.0),
                phase: num("phase")?.unwrap_or(0.0),
                detuning: num("detuning")?.unwrap_or(0.0),
            });
        }
        if let (Some(leading), Some(trailing), Some(pulse)) = (num("leading")?, num("trailing")?, num("pulse")?) {
            seg.window = Some(ReadoutWindow { leading, trailing, pulse });
        }
        seg.start = num("start")?;
        seg.lock = f.get("lock").map(|v| v == "true").unwrap_or(false);
        seg.reversible = f.get("reversible").map(|v| v == "true").unwrap_or(false);
        seg.label = f.get("label").cloned();
        segments.push(seg);
    }
    Ok(Sequence { segments, shots, alternate_reversal })
}

fn parse_fields(s: &str) -> Result<BTreeMap<String, String>, String> {
    s.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format!("expected key=value, got `{kv}`"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::product_state;

    fn defaults(t: Template) -> (SystemParams, Knobs) {
        let p = SystemParams::default();
        let k = t.default_knobs(&p);
        (p, k)
    }

    #[test]
    fn every_template_compiles_with_defaults() {
        for t in Template::ALL {
            let (p, k) = defaults(t);
            let seq = compile_template(t, &p, &k).unwrap_or_else(|e| panic!("{t}: {e}"));
            assert!(validate(&seq).is_empty(), "{t}");
        }
    }

    #[test]
    fn rabi_pi_pulse_is_fifty_ns() {
        assert!((pi_duration_us(10.0) - 0.05).abs() < 1e-15);
        let (p, mut k) = defaults(Template::ElectronRabi);
        k.insert("pi_pulse_us".into(), 0.06);
        assert!(matches!(
            compile_template(Template::ElectronRabi, &p, &k),
            Err(CompileError::InconsistentPiPulse { .. })
        ));
    }

    #[test]
    fn knob_set_must_be_exact() {
        let (p, mut k) = defaults(Template::SpinLock);
        k.insert("bogus".into(), 1.0);
        assert_eq!(compile_template(Template::SpinLock, &p, &k), Err(CompileError::ExtraKnob("bogus".into())));
        let (p, mut k) = defaults(Template::SpinLock);
        k.remove("lock_us");
        assert_eq!(compile_template(Template::SpinLock, &p, &k), Err(CompileError::MissingKnob("lock_us".into())));
        assert!("novel9".parse::<Template>().is_err());
    }

    #[test]
    fn novel_with_zero_reps_is_init_and_readout() {
        let (p, mut k) = defaults(Template::Novel);
        k.insert("reps".into(), 0.0);
        let seq = compile_template(Template::Novel, &p, &k).unwrap();
        let kinds: Vec<_> = seq.segments.iter().map(|s| s.kind).collect();
        assert_eq!(kinds, vec![SegmentKind::LaserInit, SegmentKind::Readout]);
    }

    #[test]
    fn spin_lock_shape() {
        let (p, k) = defaults(Template::SpinLock);
        let seq = compile_template(Template::SpinLock, &p, &k).unwrap();
        let kinds: Vec<_> = seq.segments.iter().map(|s| s.kind).collect();
        use SegmentKind::*;
        assert_eq!(kinds, vec![LaserInit, MwPulse, MwPulse, MwPulse, Readout]);
        assert!(seq.segments[2].lock);
        let prep = seq.segments[1].drive.unwrap().phase;
        let lock = seq.segments[2].drive.unwrap().phase;
        assert!(((prep - lock).abs() - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn nuclear_echo_resets_before_each_rf_pulse() {
        let (p, k) = defaults(Template::NuclearEcho);
        let seq = compile_template(Template::NuclearEcho, &p, &k).unwrap();
        let rf: Vec<usize> =
            seq.segments.iter().enumerate().filter(|(_, s)| s.kind == SegmentKind::RfPulse).map(|(i, _)| i).collect();
        assert_eq!(rf.len(), 3);
        for i in rf {
            let before = seq.segments[..i].iter().rev().find(|s| s.kind != SegmentKind::Wait).unwrap();
            assert_eq!(before.kind, SegmentKind::LaserInit, "RF at {i}");
        }
    }

    #[test]
    fn compilation_is_deterministic() {
        for t in Template::ALL {
            let (p, k) = defaults(t);
            assert_eq!(compile_template(t, &p, &k).unwrap(), compile_template(t, &p, &k).unwrap());
        }
    }

    #[test]
    fn validation_diagnostics() {
        let w = ReadoutWindow::default();
        let no_readout = Sequence { segments: vec![Segment::laser_init()], shots: 1, alternate_reversal: false };
        let d = validate(&no_readout);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].rule, Rule::NoReadout);

        let overlap = Sequence {
            segments: vec![
                Segment::laser_init(),
                Segment::mw(DriveParams::mw(1e7, 0.0, 0.0), 1e-6),
                Segment::rf(DriveParams::rf(1e4, 0.0, 0.0), 1e-6).starting_at(0.5e-6),
                Segment::readout(w),
            ],
            shots: 1,
            alternate_reversal: false,
        };
        let d = validate(&overlap);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].rule, Rule::SimultaneousDrives);
        assert_eq!(d[0].segment, Some(2));

        let no_init = Sequence {
            segments: vec![Segment::mw(DriveParams::mw(1e7, 0.0, 0.0), 1e-6), Segment::readout(w)],
            shots: 1,
            alternate_reversal: false,
        };
        assert_eq!(validate(&no_init)[0].rule, Rule::MwBeforeLaserInit);

        let mut bad = Segment::wait(-1.0);
        bad.drive = Some(DriveParams::rf(1.0, 0.0, 0.0));
        let malformed = Sequence { segments: vec![bad, Segment::readout(w)], shots: 0, alternate_reversal: false };
        let rules: Vec<Rule> = validate(&malformed).iter().map(|d| d.rule).collect();
        assert!(rules.contains(&Rule::ZeroShots));
        assert!(rules.contains(&Rule::NegativeDuration));
        assert!(rules.contains(&Rule::UnexpectedDrive));
    }

    #[test]
    fn init_then_readout_gives_steady_state() {
        let p = SystemParams::default();
        let seq = Sequence {
            segments: vec![Segment::laser_init(), Segment::readout(ReadoutWindow::default())],
            shots: 1,
            alternate_reversal: false,
        };
        let out = run(&seq, &p, &DensityMatrix::maximally_mixed(4), &RunOptions::default()).unwrap();
        let r = &out.records[0];
        assert!((r.p_bright - 0.08).abs() < 1e-12);
        assert!((r.sz - 0.42).abs() < 1e-12);
        assert!((r.contrast - 1.0).abs() < 1e-9);
    }

    #[test]
    fn run_rejects_invalid_sequences() {
        let p = SystemParams::default();
        let seq = Sequence { segments: vec![Segment::laser_init()], shots: 1, alternate_reversal: false };
        let rho = product_state(0.5, 0.0).unwrap();
        assert!(matches!(run(&seq, &p, &rho, &RunOptions::default()), Err(RunError::Invalid(_))));
    }

    #[test]
    fn text_round_trip() {
        for t in Template::ALL {
            let (p, k) = defaults(t);
            let seq = compile_template(t, &p, &k).unwrap();
            let text = to_text(&seq);
            assert_eq!(from_text(&text).unwrap(), seq, "{t}");
        }
        assert!(from_text("SEQUENCE shots=1\nBEEP duration=0\n").is_err());
    }

    #[test]
    fn stratified_detunings_are_deterministic_and_centered() {
        let a = detuning_samples(200, 1.0, 7);
        assert_eq!(a, detuning_samples(200, 1.0, 7));
        assert_ne!(a, detuning_samples(200, 1.0, 8));
        let mean: f64 = a.iter().sum::<f64>() / 200.0;
        let var: f64 = a.iter().map(|x| x * x).sum::<f64>() / 200.0;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.05);
        assert_eq!(detuning_samples(1, 1.0, 3), vec![0.0]);
    }

    #[test]
    fn rf_frame_bookkeeping_is_consistent_with_free_precession() {
        // A nuclear π/2 pulse, a free wait, and a second π/2 pulse resonant
        // with the ↑ branch: with the electron in ↑ the result is a full flip
        // for any wait. A⊥ is off so the ↑-branch frequency is exact.
        let mut p = SystemParams::default().without_dissipation();
        p.a_perp = 0.0;
        p.init_fidelity = 1.0;
        p.reinit_nuclear_loss = 0.0;
        let rabi = units::angular_from_khz(10.0);
        let half_pi = 0.25 / 10e3;
        let detuning = -p.a_par / 2.0;
        let rho0 = product_state(1.0, 1.0).unwrap();
        for wait in [0.0, 3.3e-6, 17.7e-6] {
            let seq = Sequence {
                segments: vec![
                    Segment::laser_init(),
                    Segment::rf(DriveParams::rf(rabi, 0.0, detuning), half_pi),
                    Segment::wait(wait),
                    Segment::rf(DriveParams::rf(rabi, 0.0, detuning), half_pi),
                    Segment::readout(ReadoutWindow::default()),
                ],
                shots: 1,
                alternate_reversal: false,
            };
            let out = run(&seq, &p, &rho0, &RunOptions::default()).unwrap();
            assert!((out.records[0].iz + 0.5).abs() < 1e-9, "wait {wait}: {}", out.records[0].iz);
        }
    }
}
