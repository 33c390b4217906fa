//! Open-system evolution of the joint density matrix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SystemParams;
use crate::operator::{
    build_liouvillian, expm_hermitian, expm_superoperator, ComplexMatrix, DensityMatrix,
    OperatorError, StateError, Superoperator, C64,
};
use crate::spin::{self, JOINT_DIM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("propagated state violates invariants: {0}")]
    Invariant(#[from] StateError),
    #[error("negative duration {0}")]
    NegativeDuration(f64),
    #[error("RK4 step {dt:e} s exceeds duration/100 = {limit:e} s")]
    StepTooCoarse { dt: f64, limit: f64 },
    #[error("RK4 step {dt:e} s times ‖H‖ = {norm:e} rad/s exceeds 0.05 at t = {time:e} s")]
    StepTooLarge { dt: f64, norm: f64, time: f64 },
    #[error("observable is not Hermitian (deviation {deviation:.3e})")]
    NonHermitianObservable { deviation: f64 },
    #[error("expectation value has imaginary part {0:.3e}")]
    ComplexExpectation(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChannelLabel {
    DephasingT2,
    ElectronFlipUp,
    ElectronFlipDown,
    SpinlockT1rho,
}

/// Dissipative process: jump operator and rate (1/s).
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub jump: ComplexMatrix,
    pub rate: f64,
    pub label: ChannelLabel,
}

impl Channel {
    /// Electron dephasing `σ_z ⊗ 𝟙` at `1/(2T2)`.
    pub fn dephasing_t2(p: &SystemParams) -> Self {
        Self {
            jump: spin::electron(&spin::pauli_z()),
            rate: half_rate(p.t2_electron),
            label: ChannelLabel::DephasingT2,
        }
    }

    pub fn electron_flip_up(p: &SystemParams) -> Self {
        Self {
            jump: spin::electron(&spin::sigma_plus()),
            rate: half_rate(p.t1_electron),
            label: ChannelLabel::ElectronFlipUp,
        }
    }

    pub fn electron_flip_down(p: &SystemParams) -> Self {
        Self {
            jump: spin::electron(&spin::sigma_minus()),
            rate: half_rate(p.t1_electron),
            label: ChannelLabel::ElectronFlipDown,
        }
    }

    /// Rotating-frame relaxation during a lock. The jump is `σ_z ⊗ 𝟙`, which
    /// is transverse to every in-plane lock axis, so the locked magnetization
    /// decays as `exp(−t/T1ρ)`; a jump along the lock axis would commute with
    /// the locked state and leave it untouched.
    pub fn spinlock_t1rho(p: &SystemParams) -> Self {
        Self {
            jump: spin::electron(&spin::pauli_z()),
            rate: half_rate(p.t1_rho),
            label: ChannelLabel::SpinlockT1rho,
        }
    }

    /// Channels active outside spin locks.
    pub fn free_set(p: &SystemParams) -> Vec<Channel> {
        vec![Self::dephasing_t2(p), Self::electron_flip_up(p), Self::electron_flip_down(p)]
    }

    /// Channels active while the electron is locked: T1ρ replaces T2.
    pub fn lock_set(p: &SystemParams) -> Vec<Channel> {
        vec![Self::spinlock_t1rho(p), Self::electron_flip_up(p), Self::electron_flip_down(p)]
    }
}

fn half_rate(t: f64) -> f64 {
    if t.is_infinite() {
        0.0
    } else {
        1.0 / (2.0 * t)
    }
}

fn active(channels: &[Channel]) -> impl Iterator<Item = (&ComplexMatrix, f64)> {
    channels.iter().filter(|c| c.rate > 0.0).map(|c| (&c.jump, c.rate))
}

/// Propagator of one piecewise-constant segment: a unitary when no channel
/// is active, otherwise the exponential of the Liouvillian.
#[derive(Debug, Clone)]
pub enum Propagator {
    Unitary(ComplexMatrix),
    Open(Superoperator),
}

impl Propagator {
    pub fn new(h: &ComplexMatrix, channels: &[Channel], duration: f64) -> Result<Self, DynamicsError> {
        if duration < 0.0 || duration.is_nan() {
            return Err(DynamicsError::NegativeDuration(duration));
        }
        if active(channels).next().is_none() {
            Ok(Self::Unitary(expm_hermitian(h, duration)?))
        } else {
            let l = build_liouvillian(h, active(channels))?;
            Ok(Self::Open(expm_superoperator(&l, duration)?))
        }
    }

    /// Applies the map and checks the density-matrix invariants.
    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix, DynamicsError> {
        let m = match self {
            Self::Unitary(u) => &(u * rho.matrix()) * &u.adjoint(),
            Self::Open(s) => s.apply(rho.matrix())?,
        };
        Ok(DensityMatrix::new(m)?)
    }
}

/// `ρ(τ) = exp(Lτ) ρ(0)` for constant `h`.
pub fn propagate_segment(
    rho: &DensityMatrix,
    h: &ComplexMatrix,
    channels: &[Channel],
    duration: f64,
) -> Result<DensityMatrix, DynamicsError> {
    if duration == 0.0 {
        return Ok(rho.clone());
    }
    Propagator::new(h, channels, duration)?.apply(rho)
}

fn lindblad_rhs(rho: &ComplexMatrix, h: &ComplexMatrix, channels: &[Channel]) -> ComplexMatrix {
    let mut d = h.commutator(rho).scale_c(C64::new(0.0, -1.0));
    for c in channels.iter().filter(|c| c.rate > 0.0) {
        let l = &c.jump;
        let ld = l.adjoint();
        let ldl = &ld * l;
        let jump = &(l * rho) * &ld;
        let anti = &(&ldl * rho) + &(rho * &ldl);
        d = &d + &(&jump - &anti.scale(0.5)).scale(c.rate);
    }
    d
}

/// Classical fourth-order Runge-Kutta integration of the master equation with
/// a time-dependent Hamiltonian. Requires `dt ≤ duration/100` and
/// `dt·‖H(t)‖_F ≤ 0.05` at every stage time.
pub fn propagate_timedep<F>(
    rho: &DensityMatrix,
    h_of_t: F,
    dt: f64,
    duration: f64,
    channels: &[Channel],
) -> Result<DensityMatrix, DynamicsError>
where
    F: Fn(f64) -> ComplexMatrix,
{
    if duration < 0.0 {
        return Err(DynamicsError::NegativeDuration(duration));
    }
    if duration == 0.0 {
        return Ok(rho.clone());
    }
    let limit = duration / 100.0;
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(DynamicsError::StepTooCoarse { dt, limit });
    }
    let steps = (duration / dt).round().max(1.0) as usize;
    let h_step = duration / steps as f64;
    let mut y = rho.matrix().clone();
    let eval = |t: f64| -> Result<ComplexMatrix, DynamicsError> {
        let h = h_of_t(t);
        let norm = h.frobenius_norm();
        if h_step * norm > 0.05 {
            return Err(DynamicsError::StepTooLarge { dt: h_step, norm, time: t });
        }
        Ok(h)
    };
    for k in 0..steps {
        let t = k as f64 * h_step;
        let h0 = eval(t)?;
        let hm = eval(t + 0.5 * h_step)?;
        let h1 = eval(t + h_step)?;
        let k1 = lindblad_rhs(&y, &h0, channels);
        let k2 = lindblad_rhs(&(&y + &k1.scale(0.5 * h_step)), &hm, channels);
        let k3 = lindblad_rhs(&(&y + &k2.scale(0.5 * h_step)), &hm, channels);
        let k4 = lindblad_rhs(&(&y + &k3.scale(h_step)), &h1, channels);
        let incr = &(&k1 + &k2.scale(2.0)) + &(&k3.scale(2.0) + &k4);
        y = &y + &incr.scale(h_step / 6.0);
    }
    Ok(DensityMatrix::new(y)?)
}

/// `Re Tr(ρ·op)` for a Hermitian observable.
pub fn expectation(rho: &DensityMatrix, op: &ComplexMatrix) -> Result<f64, DynamicsError> {
    let scale = op.max_abs().max(1.0);
    let deviation = op.hermiticity_error();
    if deviation > 1e-9 * scale {
        return Err(DynamicsError::NonHermitianObservable { deviation });
    }
    let v = (rho.matrix() * op).trace();
    if v.im.abs() > 1e-9 * scale {
        return Err(DynamicsError::ComplexExpectation(v.im));
    }
    Ok(v.re)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    Electron,
    Nucleus,
}

/// Reduced 2×2 state of one subsystem.
pub fn partial_trace(rho: &DensityMatrix, keep: Subsystem) -> ComplexMatrix {
    let m = rho.matrix();
    let mut out = ComplexMatrix::zeros(2);
    for a in 0..2 {
        for b in 0..2 {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..2 {
                s += match keep {
                    Subsystem::Electron => m.get(2 * a + k, 2 * b + k),
                    Subsystem::Nucleus => m.get(2 * k + a, 2 * k + b),
                };
            }
            out.set(a, b, s);
        }
    }
    out
}

/// Optical reinitialization of the electron.
///
/// The electron becomes `diag(f, 1−f)` with `f = init_fidelity`. The nucleus
/// keeps the state it had in the ↑ branch. In the ↓ branch the optical cycle
/// scrambles the hyperfine-conditioned precession phase, so that branch's
/// nuclear coherence is lost while its populations survive. Finally the
/// nucleus is depolarized by `reinit_nuclear_loss`.
pub fn laser_reset(rho: &DensityMatrix, p: &SystemParams) -> DensityMatrix {
    let m = rho.matrix();
    let mut nuc = ComplexMatrix::zeros(2);
    for a in 0..2 {
        for b in 0..2 {
            let mut v = m.get(a, b);
            if a == b {
                v += m.get(2 + a, 2 + b);
            }
            nuc.set(a, b, v);
        }
    }
    let loss = p.reinit_nuclear_loss;
    let tr = nuc.trace();
    let mut depolarized = nuc.scale(1.0 - loss);
    for k in 0..2 {
        depolarized.set(k, k, depolarized.get(k, k) + tr * (0.5 * loss));
    }
    let f = p.init_fidelity;
    let electron = ComplexMatrix::from_diagonal(&[C64::new(f, 0.0), C64::new(1.0 - f, 0.0)]);
    DensityMatrix::new_unchecked(crate::operator::kron(&electron, &depolarized))
}

/// Product state `diag(f, 1−f) ⊗ ½(𝟙 + P σ_z)` with nuclear polarization `P`.
pub fn product_state(electron_up: f64, nuclear_polarization: f64) -> Result<DensityMatrix, StateError> {
    let n_up = 0.5 * (1.0 + nuclear_polarization);
    let e_up = electron_up;
    DensityMatrix::diagonal(&[
        e_up * n_up,
        e_up * (1.0 - n_up),
        (1.0 - e_up) * n_up,
        (1.0 - e_up) * (1.0 - n_up),
    ])
}

/// Joint-space dimension check used by higher layers.
pub fn check_joint(rho: &DensityMatrix) -> Result<(), DynamicsError> {
    if rho.dim() != JOINT_DIM {
        return Err(StateError::Dimension { expected: JOINT_DIM, found: rho.dim() }.into());
    }
    Ok(())
}
