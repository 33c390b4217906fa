use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sivdnp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sivdnp"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SIVDNP_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const SMALL_ODMR: &str = r#"
experiment = "odmr"
seed = 7

[knobs]
shots = 20

[grid]
start = -4.0
stop = 4.0
points = 9
"#;

#[test]
fn list_names_every_driver() {
    let dir = tempfile::tempdir().unwrap();
    let o = sivdnp(&["list"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    let ids = [
        "electron_t1",
        "odmr",
        "electron_rabi",
        "hahn_echo",
        "hh_sweep",
        "spin_lock",
        "novel",
        "nmr",
        "nuclear_rabi",
        "nuclear_echo",
    ];
    for id in ids {
        assert!(out.lines().any(|l| l == id), "{id} missing from\n{out}");
    }
    assert_eq!(out.lines().filter(|l| !l.starts_with(' ')).count(), 10);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "odmr.toml", SMALL_ODMR);
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, workers) in [(&a, "1"), (&b, "3")] {
        let o = sivdnp(&["run", cfg, "--output-dir", out.to_str().unwrap(), "--workers", workers], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["odmr.csv", "odmr.meta.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.join("odmr.csv")).unwrap();
    assert!(csv.starts_with("# detuning [MHz], contrast [dimensionless]"));
    assert_eq!(csv.lines().nth(1).unwrap(), "detuning_mhz,contrast,p_bright,sz,sx,iz");
    assert_eq!(csv.lines().count(), 2 + 9);
}

#[test]
fn existing_outputs_are_not_replaced_without_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "odmr.toml", SMALL_ODMR);
    let cfg = cfg.to_str().unwrap();
    let csv = dir.path().join("odmr.csv");
    fs::write(&csv, "keep me").unwrap();

    let o = sivdnp(&["run", cfg], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--overwrite"), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&csv).unwrap(), "keep me");
    assert!(!dir.path().join("odmr.meta.toml").exists());

    let o = sivdnp(&["run", cfg, "--overwrite"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_ne!(fs::read_to_string(&csv).unwrap(), "keep me");
}

#[test]
fn validate_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "odmr.toml", &format!("output_dir = \"out\"\n{SMALL_ODMR}"));
    let before: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    let o = sivdnp(&["validate", "odmr.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let after: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(before, after);
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "odmr.toml", &format!("output_dir = \"from_config\"\n{SMALL_ODMR}"));
    let env_dir = dir.path().join("from_env");
    let run = |extra: &[&str], env: bool| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_sivdnp"));
        c.args(["run", "odmr.toml", "--overwrite"]).args(extra).current_dir(dir.path());
        if env {
            c.env("SIVDNP_OUTPUT_DIR", &env_dir);
        } else {
            c.env_remove("SIVDNP_OUTPUT_DIR");
        }
        assert!(c.output().unwrap().status.success());
    };
    run(&["--output-dir", "from_flag"], true);
    assert!(dir.path().join("from_flag/odmr.csv").exists());
    run(&[], true);
    assert!(dir.path().join("from_config/odmr.csv").exists());
    assert!(!env_dir.exists());

    write_config(dir.path(), "odmr.toml", SMALL_ODMR);
    run(&[], true);
    assert!(env_dir.join("odmr.csv").exists());
    run(&[], false);
    assert!(dir.path().join("odmr.csv").exists());
}

#[test]
fn nmr_run_then_lorentzian_fit_finds_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "nmr.toml",
        r#"
experiment = "nmr"
seed = 1
fit = "none"

[grid]
start = 2.24
stop = 2.40
points = 65
"#,
    );
    let o = sivdnp(&["run", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!fs::read_to_string(dir.path().join("nmr.meta.toml")).unwrap().contains("[fit]"));

    let o = sivdnp(&["fit", "nmr.csv", "lorentzian"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("`iz`"), "{out}");
    let center: f64 = out
        .lines()
        .find_map(|l| l.trim().strip_prefix("center"))
        .and_then(|rest| rest.split_whitespace().next())
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("no center in\n{out}"));
    assert!((center - 2.32).abs() < 0.005, "{center}");
}

#[test]
fn malformed_configs_fail_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("unknown_param.toml", "experiment = \"odmr\"\n[params]\nt2_us = 3.0\n", "t2_us"),
        ("missing.toml", "seed = 1\n", "experiment"),
        ("bad_driver.toml", "experiment = \"odmrx\"\n", "experiment"),
        ("bad_knob.toml", "experiment = \"odmr\"\n[knobs]\nlock_us = 2.0\n", "lock_us"),
        ("swept_knob.toml", "experiment = \"odmr\"\n[knobs]\ndetuning_mhz = 2.0\n", "detuning_mhz"),
        ("bad_value.toml", "experiment = \"odmr\"\n[params]\ninit_fidelity = 1.5\n", "init_fidelity"),
        ("bad_grid.toml", "experiment = \"odmr\"\n[grid]\nvalues = [1.0, 0.0]\n", "[grid]"),
        ("bad_fit.toml", "experiment = \"odmr\"\nfit = \"cubic\"\n", "fit"),
        ("syntax.toml", "experiment = \n", "experiment"),
    ];
    for (name, body, field) in cases {
        write_config(dir.path(), name, body);
        for cmd in ["validate", "run"] {
            let o = sivdnp(&[cmd, name], dir.path());
            assert!(!o.status.success(), "{cmd} {name} succeeded");
            assert!(stderr(&o).contains(field), "{cmd} {name}: {}", stderr(&o));
        }
    }
    let o = sivdnp(&["validate", "absent.toml"], dir.path());
    assert!(!o.status.success());
    assert!(!dir.path().join("odmr.csv").exists());
}

#[test]
fn fit_rejects_unknown_columns_and_models() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("d.csv"), "# x [ms], y [dimensionless]\nx,y\n0,1\n1,0.5\n2,0.25\n3,0.125\n4,0.0625\n5,0.03125\n").unwrap();
    let o = sivdnp(&["fit", "d.csv", "exp_decay", "--y", "y"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!sivdnp(&["fit", "d.csv", "exp_decay", "--y", "z"], dir.path()).status.success());
    assert!(!sivdnp(&["fit", "d.csv", "cubic", "--y", "y"], dir.path()).status.success());
}
