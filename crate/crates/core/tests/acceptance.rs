//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Tolerances are fixed here and never loosened.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sivdnp::config::linspace;
use sivdnp::dynamics::{laser_reset, product_state, propagate_timedep, Channel, Propagator};
use sivdnp::experiments::*;
use sivdnp::fitting::{self, Model};
use sivdnp::model::hamiltonian_timedep;
use sivdnp::operator::fidelity;
use sivdnp::pulse::{self, compile_template, RunOptions, Segment, Sequence};
use sivdnp::spin::SpinOps;
use sivdnp::{units, ComplexMatrix, DensityMatrix, DriveParams, FluorescenceParams, ReadoutWindow, SystemParams, Template};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn opts() -> DriverOptions {
    DriverOptions { fit: false, ..Default::default() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Electron coherence under the dephasing channel alone decays with T2.
fn lindblad_t2_decay() -> Outcome {
    let p = SystemParams::default();
    let ops = SpinOps::new();
    let plus_x = {
        let e = ComplexMatrix::from_real(2, &[0.5, 0.5, 0.5, 0.5]).unwrap();
        DensityMatrix::new(sivdnp::operator::kron(&e, &ComplexMatrix::identity(2).scale(0.5))).unwrap()
    };
    let channel = [Channel::dephasing_t2(&p)];
    let h = ComplexMatrix::zeros(4);
    let data: Vec<(f64, f64)> = linspace(0.0, 15.0, 31)
        .into_iter()
        .map(|t_us| {
            let rho = Propagator::new(&h, &channel, units::seconds_from_us(t_us)).unwrap().apply(&plus_x).unwrap();
            (t_us, sivdnp::dynamics::expectation(&rho, &ops.s_x).unwrap())
        })
        .collect();
    let tau = fitting::fit(Model::ExpDecay, &data, None).unwrap().value("tau").unwrap();
    let err = rel(tau, 3.0);
    outcome(err <= 1e-4, format!("fitted coherence decay {tau:.8} μs vs 3 μs, relative error {err:.2e} (≤ 1e-4)"))
}

fn hh_center(p: &SystemParams) -> (SweepResult, f64) {
    let info = driver_info(Template::HhSweep);
    let grid = info.default_grid(p, &info.user_knobs(p));
    let r = sim_hh_sweep(p, &grid, pulse::DEFAULT_HH_LOCK_US, &opts()).unwrap();
    let c = r.fit_column(Model::Lorentzian, "sz").unwrap().value("center").unwrap();
    (r, c)
}

fn slope_over_fields(base: &SystemParams) -> f64 {
    let pts: Vec<(f64, f64)> =
        [0.160, 0.1887, 0.220].iter().map(|&b| (b, hh_center(&base.clone().at_field(b)).1)).collect();
    fitting::fit(Model::Line, &pts, None).unwrap().value("slope").unwrap()
}

/// Hartmann-Hahn dip at ω_L within one grid step, field slope γ_N within 0.5%.
fn hh_center_and_slope() -> Outcome {
    let start = Instant::now();
    let p = SystemParams::default();
    let (r, _) = hh_center(&p);
    let xs = r.xs();
    let step = xs[1] - xs[0];
    let dip = r.argmin("sz").unwrap();
    let larmor = units::mhz_from_angular(p.omega_l);
    let dip_ok = (dip - larmor).abs() <= step + 1e-12;
    let slope = slope_over_fields(&p);
    let slope_err = rel(slope, 10.705);
    let elapsed = start.elapsed().as_secs_f64();
    let mut control = p.clone();
    control.a_par = 0.0;
    let control_slope = slope_over_fields(&control);
    outcome(
        dip_ok && slope_err <= 5e-3 && elapsed < 30.0,
        format!(
            "dip at {dip:.3} MHz vs ω_L {larmor:.3} MHz (step {step:.3}); slope {slope:.4} MHz/T, relative error {slope_err:.2e} (≤ 5e-3); {elapsed:.1} s (< 30 s); A∥ = 0 control slope {control_slope:.4} MHz/T"
        ),
    )
}

/// First maximum of ⟨I_z⟩ under a resonant lock without dissipation.
fn flip_flop_period() -> Outcome {
    let p = SystemParams::default().without_dissipation();
    let grid = linspace(0.0, 8.0, 801);
    let r = sim_spin_lock_trace(&p, &grid, LockDrive::Resonant, &opts()).unwrap();
    let iz = r.column("iz").unwrap();
    let i = (1..iz.len() - 1).find(|&i| iz[i] >= iz[i - 1] && iz[i] > iz[i + 1]).unwrap();
    // Parabolic vertex through the maximum and its neighbours.
    let (y0, y1, y2) = (iz[i - 1], iz[i], iz[i + 1]);
    let h = grid[1] - grid[0];
    let t = grid[i] + 0.5 * h * (y0 - y2) / (y0 - 2.0 * y1 + y2);
    let err = rel(t, 4.35);
    outcome(err <= 0.02, format!("first ⟨I_z⟩ maximum at {t:.3} μs vs 4.35 μs, relative error {err:.2e} (≤ 2e-2)"))
}

fn novel_saturation() -> Outcome {
    let p = SystemParams::default();
    let r = sim_novel_buildup(&p, 20, 4.0, &opts()).unwrap();
    let sat = 2.0 * r.column("iz").unwrap()[19];
    outcome((0.55..=0.85).contains(&sat), format!("saturated 2⟨I_z⟩ = {sat:.4} (in [0.55, 0.85])"))
}

fn nmr_center(p: &SystemParams, down: bool) -> f64 {
    let info = driver_info(Template::Nmr);
    let mut knobs = info.user_knobs(p);
    knobs.insert("electron_down".into(), if down { 1.0 } else { 0.0 });
    let grid = info.default_grid(p, &knobs);
    let rf_pi = pulse::pi_duration_us(pulse::DEFAULT_RF_RABI_KHZ * 1e-3);
    let r = sim_nmr_sweep(p, &grid, rf_pi, down, &opts()).unwrap();
    r.fit_column(Model::Lorentzian, "iz").unwrap().value("center").unwrap()
}

fn nmr_line_position() -> Outcome {
    let p = SystemParams::default();
    let up = nmr_center(&p, false);
    let down = nmr_center(&p, true);
    let ok = (up - 2.32).abs() <= 0.010 && (down - 1.60).abs() <= 0.010;
    outcome(ok, format!("dip at {up:.5} MHz vs 2.32, electron-↓ control at {down:.5} MHz vs 1.60 (each within 10 kHz)"))
}

fn rabi_frequency_khz(p: &SystemParams, rabi_khz: f64) -> f64 {
    let span = 2.5 * 1e3 / rabi_khz;
    let r = sim_nuclear_rabi(p, &linspace(0.0, span, 121), rabi_khz, &opts()).unwrap();
    r.fit_column(Model::DampedSine, "iz").unwrap().value("frequency").unwrap() * 1e3
}

fn nuclear_rabi() -> Outcome {
    let p = SystemParams::default();
    let matched = rabi_frequency_khz(&p, 10.1);
    let err = rel(matched, 10.1);
    let amps = [5.0, 7.5, 10.1, 12.5, 15.0];
    let pts: Vec<(f64, f64)> = amps.iter().map(|&a| (a, rabi_frequency_khz(&p, a))).collect();
    let line = fitting::fit(Model::Line, &pts, None).unwrap();
    let (slope, intercept) = (line.value("slope").unwrap(), line.value("intercept").unwrap());
    let intercept_rel = intercept.abs() / 10.1;
    let worst = pts.iter().map(|(a, f)| rel(*f, slope * a + intercept)).fold(0.0, f64::max);
    outcome(
        err <= 5e-3 && intercept_rel <= 0.02 && worst <= 0.02,
        format!(
            "frequency {matched:.4} kHz vs 10.1, relative error {err:.2e} (≤ 5e-3); slope {slope:.4}, intercept {intercept:.4} kHz ({intercept_rel:.2e} of 10.1 kHz, ≤ 2e-2), worst deviation from the line {worst:.2e} (≤ 2e-2)"
        ),
    )
}

fn nuclear_echo_limit() -> Outcome {
    let p = SystemParams::default();
    let r = sim_nuclear_echo(&p, &linspace(0.0, 30.0, 31), &opts()).unwrap();
    let tau = r.fit_column(Model::ExpDecay, "echo").unwrap().value("tau").unwrap();
    let ratio = tau / 5.8;
    outcome((1.0..=2.0).contains(&ratio), format!("T2ⁿ = {tau:.3} ms = {ratio:.4}·T1 (in [1, 2])"))
}

fn round_trip_fits() -> Outcome {
    let p = SystemParams::default();
    let t1 = sim_electron_t1(&p, &linspace(0.0, 30.0, 31), &opts())
        .unwrap()
        .fit_column(Model::ExpDecay, "contrast")
        .unwrap()
        .value("tau")
        .unwrap();
    let t2 = sim_hahn_echo(&p, &linspace(0.0, 12.0, 41), &opts())
        .unwrap()
        .fit_column(Model::ExpDecay, "echo")
        .unwrap()
        .value("tau")
        .unwrap();
    let rabi = sim_electron_rabi(&p, &linspace(0.0, 0.4, 81), 10.0, &opts())
        .unwrap()
        .fit_column(Model::DampedSine, "contrast")
        .unwrap()
        .value("frequency")
        .unwrap();
    let errs = [rel(t1, 5.8), rel(t2, 3.0), rel(rabi, 10.0)];
    outcome(
        errs.iter().all(|&e| e <= 0.02),
        format!(
            "T1 {t1:.4} ms ({:.2e}), T2 {t2:.4} μs ({:.2e}), Rabi {rabi:.4} MHz ({:.2e}); each ≤ 2e-2",
            errs[0], errs[1], errs[2]
        ),
    )
}

/// Rotating-frame RF pulse against lab-frame integration of the full drive.
fn rwa_oracle() -> Outcome {
    let mut p = SystemParams::default();
    p.a_perp = 0.0;
    let rf_freq = p.nmr_resonance(true);
    let rho0 = laser_reset(&product_state(1.0, 1.0).unwrap(), &p);
    let mut worst: f64 = 1.0;
    let mut details = Vec::new();
    for ratio in [0.002, 0.005, 0.01] {
        let rabi = ratio * p.omega_l;
        let duration = std::f64::consts::PI / rabi;
        let seq = Sequence {
            segments: vec![
                Segment::rf(DriveParams::rf(rabi, 0.0, p.omega_l - rf_freq), duration),
                Segment::readout(ReadoutWindow::default()),
            ],
            shots: 1,
            alternate_reversal: false,
        };
        let rot = pulse::run(&seq, &p, &rho0, &RunOptions::default()).unwrap().final_state;
        let channels = Channel::free_set(&p);
        let dt = duration / (duration * 5e8).ceil();
        let lab = propagate_timedep(&rho0, |t| hamiltonian_timedep(&p, rabi, rf_freq, t), dt, duration, &channels).unwrap();
        let f = fidelity(&rot, &lab);
        worst = worst.min(f);
        details.push(format!("{ratio}: {f:.6}"));
    }
    outcome(
        worst >= 1.0 - 1e-3,
        format!("fidelity by Ω_n/ω_L {} (each ≥ 1 − 1e-3)", details.join(", ")),
    )
}

fn check_state(rho: &DensityMatrix) -> Result<(), String> {
    let m = rho.matrix();
    let tr = (m.trace().re - 1.0).abs().max(m.trace().im.abs());
    let herm = m.hermiticity_error();
    let min = m.hermitian_eigenvalues()[0];
    if tr > 1e-9 || herm > 1e-9 || min < -1e-8 {
        return Err(format!("trace error {tr:.1e}, hermiticity {herm:.1e}, min eigenvalue {min:.1e}"));
    }
    Ok(())
}

/// Every driver's sequence, run end to end at a random grid point for each
/// of 10 seeds, keeps a valid density matrix.
fn cptp_suite() -> Outcome {
    let p = SystemParams::default();
    let rho0 = DensityMatrix::maximally_mixed(4);
    let mut runs = 0;
    for info in registry() {
        let grid = info.default_grid(&p, &info.user_knobs(&p));
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = grid[rng.random_range(0..grid.len())];
            let mut knobs = info.template.default_knobs(&p);
            knobs.insert(info.sweep_knob.into(), x * info.knob_scale);
            let seq = match compile_template(info.template, &p, &knobs) {
                Ok(s) => s,
                Err(e) => return outcome(false, format!("{} seed {seed}: {e}", info.id())),
            };
            let ro = RunOptions { seed, trajectory_step: None, fluorescence: FluorescenceParams::default() };
            match pulse::run(&seq, &p, &rho0, &ro) {
                Ok(out) => {
                    if let Err(e) = check_state(&out.final_state) {
                        return outcome(false, format!("{} seed {seed}: {e}", info.id()));
                    }
                }
                Err(e) => return outcome(false, format!("{} seed {seed}: {e}", info.id())),
            }
            runs += 1;
        }
    }
    outcome(true, format!("{runs} end-to-end runs, every propagated state within trace/Hermiticity 1e-9 and eigenvalues ≥ −1e-8"))
}

fn reversal_cancellation() -> Outcome {
    let p = SystemParams::default();
    let (r, _) = hh_center(&p);
    let worst = r.column("iz").unwrap().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    outcome(worst < 0.01, format!("max |⟨I_z⟩| over {} sweep points {worst:.2e} (< 0.01)", r.points.len()))
}

fn odmr_width_calibration() -> Outcome {
    let p = SystemParams::default();
    let r = sim_odmr(&p, &linspace(-8.0, 8.0, 81), pulse::ODMR_RABI_MHZ, &opts()).unwrap();
    let w = fitting::fwhm(&r.fit_column(Model::Lorentzian, "contrast").unwrap()).unwrap();
    let err = rel(w, 2.89);
    outcome(err <= 0.10, format!("ODMR FWHM {w:.3} MHz vs 2.89 MHz, relative error {err:.2e} (≤ 0.10)"))
}

fn hh_width_calibration() -> Outcome {
    let p = SystemParams::default();
    let (r, _) = hh_center(&p);
    let w = fitting::fwhm(&r.fit_column(Model::Lorentzian, "sz").unwrap()).unwrap() * 1e3;
    let ratio = w / 328.0;
    outcome(
        (0.5..=2.0).contains(&ratio),
        format!("dip FWHM {w:.1} kHz at a {} μs lock, {ratio:.3}× 328 kHz (within a factor 2)", pulse::DEFAULT_HH_LOCK_US),
    )
}

fn polarization_calibration() -> Outcome {
    let p = SystemParams::default();
    let after_reset = laser_reset(&DensityMatrix::maximally_mixed(4), &p);
    let up = after_reset.matrix().get(0, 0).re + after_reset.matrix().get(1, 1).re;
    let steady = 1.0 - FluorescenceParams::default().steady_state();
    let ok = (up - 0.92).abs() < 1e-12 && (steady - 0.92).abs() < 1e-12;
    outcome(ok, format!("electron ↑ after reset {up:.12}, optical steady state {steady:.12} (both 0.92 exactly)"))
}

fn reinit_loss_calibration() -> Outcome {
    let p = SystemParams::default();
    let with = sim_nuclear_echo(&p, &[0.0], &opts()).unwrap().column("echo").unwrap()[0];
    let mut knobs = sivdnp::Knobs::new();
    knobs.insert("reinit".into(), 0.0);
    let without = run_driver(Template::NuclearEcho, &p, &knobs, &[0.0], &opts()).unwrap().column("echo").unwrap()[0];
    let loss = 1.0 - with / without;
    outcome(
        (loss - 0.16).abs() <= 0.01,
        format!("echo lost to the three resets {:.2}% vs 16% budget (within 1 point)", 100.0 * loss),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 15] = [
        ("lindblad_t2_decay", lindblad_t2_decay),
        ("hartmann_hahn_center_and_slope", hh_center_and_slope),
        ("flip_flop_period", flip_flop_period),
        ("novel_saturation", novel_saturation),
        ("nmr_line_position", nmr_line_position),
        ("nuclear_rabi_frequency_and_linearity", nuclear_rabi),
        ("nuclear_echo_limit", nuclear_echo_limit),
        ("round_trip_fits", round_trip_fits),
        ("rwa_oracle", rwa_oracle),
        ("cptp_every_driver", cptp_suite),
        ("reversal_cancellation", reversal_cancellation),
        ("calibration_odmr_width", odmr_width_calibration),
        ("calibration_hh_width", hh_width_calibration),
        ("calibration_polarization", polarization_calibration),
        ("calibration_reinit_loss", reinit_loss_calibration),
    ];
    let total = Instant::now();
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let start = Instant::now();
        let o = check();
        println!(
            "{} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(name);
        }
    }
    println!(
        "acceptance: {} of {} passed in {:.1} s",
        criteria.len() - failed.len(),
        criteria.len(),
        total.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
