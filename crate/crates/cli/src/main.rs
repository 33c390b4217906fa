//! `sivdnp`: run experiment drivers from TOML configs, fit CSV columns and
//! list the available drivers.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use sivdnp::experiments::{self, driver_info, registry, DriverInfo, DriverOptions, ExperimentError, FitSummary, SweepResult};
use sivdnp::fitting::{self, FitResult, Model};
use sivdnp::{ConfigError, FluorescenceConfig, GridSpec, Knobs, ParamsConfig, SystemParams, Template};

/// Environment variable naming the default output directory.
const OUTPUT_DIR_ENV: &str = "SIVDNP_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "sivdnp", version, about = "Electron-nuclear spin dynamics simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file and write CSV + metadata.
    Run {
        config: PathBuf,
        /// Directory for outputs; overrides the config and the environment.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Master seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for the sweep (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Replace existing output files.
        #[arg(long)]
        overwrite: bool,
    },
    /// Fit a model to one column of a CSV written by `run`.
    Fit {
        csv: PathBuf,
        /// exp_decay, damped_sine, lorentzian, gaussian or line.
        model: String,
        /// Abscissa column (default: the first).
        #[arg(long)]
        x: Option<String>,
        /// Fitted column (default: the driver's fit column, else `contrast`).
        #[arg(long)]
        y: Option<String>,
    },
    /// Check a config without running it or writing anything.
    Validate { config: PathBuf },
    /// List drivers with their sweep axes, default grids and knobs.
    List,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    experiment: String,
    #[serde(default)]
    seed: u64,
    output_dir: Option<PathBuf>,
    /// `"none"` or a model id; absent means the driver's default fit.
    fit: Option<String>,
    fit_column: Option<String>,
    #[serde(default)]
    params: ParamsConfig,
    #[serde(default)]
    fluorescence: FluorescenceConfig,
    #[serde(default)]
    knobs: Knobs,
    grid: Option<GridSpec>,
}

/// A config resolved into simulator types.
struct Plan {
    info: &'static DriverInfo,
    params: SystemParams,
    opts: DriverOptions,
    knobs: Knobs,
    grid: Vec<f64>,
    fit: FitChoice,
    output_dir: Option<PathBuf>,
}

enum FitChoice {
    Default,
    Off,
    Model(Model, String),
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, output_dir, seed, workers, overwrite } => {
            run(&config, output_dir, seed, workers, overwrite)
        }
        Command::Fit { csv, model, x, y } => fit(&csv, &model, x.as_deref(), y.as_deref()),
        Command::Validate { config } => validate(&config),
        Command::List => {
            list();
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<Plan> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let template: Template = cfg
        .experiment
        .parse()
        .map_err(|e| anyhow!("field `experiment`: {e}"))?;
    let info = driver_info(template);
    let params = cfg.params.to_params().context("section [params]")?;
    let fluorescence = cfg.fluorescence.to_params().context("section [fluorescence]")?;
    let grid = match &cfg.grid {
        Some(g) => g.values().context("section [grid]")?,
        None => {
            let mut k = info.user_knobs(&params);
            k.extend(cfg.knobs.iter().map(|(n, v)| (n.clone(), *v)));
            info.default_grid(&params, &k)
        }
    };
    let fit = match cfg.fit.as_deref() {
        None => FitChoice::Default,
        Some("none") => FitChoice::Off,
        Some(id) => {
            let model: Model = id.parse().map_err(|e| anyhow!("field `fit`: {e}"))?;
            let column = cfg
                .fit_column
                .clone()
                .or_else(|| info.default_fit.map(|(_, c)| c.to_string()))
                .unwrap_or_else(|| "contrast".into());
            if !info.columns().contains(&column.as_str()) {
                bail!("field `fit_column`: `{column}` is not a column of {}", info.id());
            }
            FitChoice::Model(model, column)
        }
    };
    if cfg.fit_column.is_some() && !matches!(fit, FitChoice::Model(..)) {
        bail!("field `fit_column`: requires `fit` to name a model");
    }
    let opts = DriverOptions { seed: cfg.seed, workers: None, fluorescence, fit: matches!(fit, FitChoice::Default) };
    Ok(Plan { info, params, opts, knobs: cfg.knobs, grid, fit, output_dir: cfg.output_dir })
}

fn validate(config: &Path) -> Result<()> {
    let plan = load(config)?;
    experiments::check_driver(plan.info.template, &plan.params, &plan.knobs, &plan.grid).map_err(locate)?;
    println!("{}: ok ({}, {} points)", config.display(), plan.info.id(), plan.grid.len());
    Ok(())
}

fn run(config: &Path, dir_flag: Option<PathBuf>, seed: Option<u64>, workers: Option<usize>, overwrite: bool) -> Result<()> {
    let mut plan = load(config)?;
    if let Some(s) = seed {
        plan.opts.seed = s;
    }
    if workers == Some(0) {
        bail!("--workers must be at least 1");
    }
    plan.opts.workers = workers;

    let dir = output_dir(config, dir_flag, plan.output_dir.as_deref());
    let stem = config
        .file_stem()
        .ok_or_else(|| anyhow!("config path has no file name"))?
        .to_string_lossy()
        .into_owned();
    let csv_path = dir.join(format!("{stem}.csv"));
    let meta_path = dir.join(format!("{stem}.meta.toml"));
    // Refuse before simulating so a collision costs nothing.
    if !overwrite {
        for p in [&csv_path, &meta_path] {
            if p.exists() {
                bail!("{} exists; pass --overwrite to replace it", p.display());
            }
        }
    }

    let mut result = experiments::run_driver(plan.info.template, &plan.params, &plan.knobs, &plan.grid, &plan.opts)
        .map_err(locate)?;
    if let FitChoice::Model(model, column) = &plan.fit {
        match result.fit_column(*model, column) {
            Ok(f) => result.fit = Some(FitSummary { column: column.clone(), result: f }),
            Err(e) => result.warnings.push(format!("{model} fit of `{column}` failed: {e}")),
        }
    }

    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(&csv_path, result.to_csv()).with_context(|| format!("writing {}", csv_path.display()))?;
    fs::write(&meta_path, result.metadata_toml()).with_context(|| format!("writing {}", meta_path.display()))?;
    report(&result, &csv_path, &meta_path);
    Ok(())
}

/// Prefixes driver errors with the config section they come from.
fn locate(e: ExperimentError) -> anyhow::Error {
    let section = match &e {
        ExperimentError::DriverKnob(_) | ExperimentError::Compile(_) => "section [knobs]",
        ExperimentError::BadRepetition(_) | ExperimentError::Config(ConfigError::Grid(_)) => "section [grid]",
        _ => return e.into(),
    };
    anyhow::Error::new(e).context(section)
}

/// Flag, then config (relative to the config's directory), then the
/// environment, then the working directory.
fn output_dir(config: &Path, flag: Option<PathBuf>, from_config: Option<&Path>) -> PathBuf {
    if let Some(d) = flag {
        return d;
    }
    if let Some(d) = from_config {
        let base = config.parent().unwrap_or_else(|| Path::new(""));
        return base.join(d);
    }
    if let Some(d) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
        return PathBuf::from(d);
    }
    PathBuf::from(".")
}

fn report(r: &SweepResult, csv: &Path, meta: &Path) {
    println!("{} ({} points, seed {})", r.sweep_name, r.points.len(), r.seed);
    println!("  wrote {}", csv.display());
    println!("  wrote {}", meta.display());
    if let Some(f) = &r.fit {
        println!("  fit {} on `{}`:", f.result.model, f.column);
        print_fit(&f.result, "    ");
    }
    for (k, v) in &r.summary {
        println!("  {k} = {v:.6}");
    }
    for w in &r.warnings {
        println!("  warning: {w}");
    }
}

fn print_fit(f: &FitResult, indent: &str) {
    for (name, p) in &f.params {
        println!("{indent}{name:<12} {:>14.6} ± {:.3e}", p.value, p.std_error);
    }
    if let Ok(w) = fitting::fwhm(f) {
        println!("{indent}{:<12} {w:>14.6}", "fwhm");
    }
    println!("{indent}residual     {:>14.6e}  ({} iterations)", f.residual_norm, f.iterations);
    if !f.converged {
        println!("{indent}warning: did not converge");
    }
    for d in &f.diagnostics {
        println!("{indent}note: {d}");
    }
}

fn fit(csv_path: &Path, model: &str, x: Option<&str>, y: Option<&str>) -> Result<()> {
    let model: Model = model.parse()?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .with_context(|| format!("opening {}", csv_path.display()))?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let x_name = x.map(str::to_string).or_else(|| headers.first().cloned()).ok_or_else(|| anyhow!("empty CSV"))?;
    let y_name = match y {
        Some(y) => y.to_string(),
        None => sidecar_fit_column(csv_path).unwrap_or_else(|| "contrast".into()),
    };
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| anyhow!("no column `{name}` in {}", csv_path.display()))
    };
    let (xi, yi) = (col(&x_name)?, col(&y_name)?);
    let mut data = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize, name: &str| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| anyhow!("row {}: missing `{name}`", row + 1))?
                .parse()
                .with_context(|| format!("row {}: column `{name}`", row + 1))
        };
        data.push((parse(xi, &x_name)?, parse(yi, &y_name)?));
    }
    let f = fitting::fit(model, &data, None)?;
    println!("{model} fit of `{y_name}` vs `{x_name}` ({} points):", data.len());
    print_fit(&f, "  ");
    Ok(())
}

/// Fit column of the driver recorded in the metadata written next to a CSV.
fn sidecar_fit_column(csv_path: &Path) -> Option<String> {
    #[derive(Deserialize)]
    struct Meta {
        run: RunMeta,
    }
    #[derive(Deserialize)]
    struct RunMeta {
        driver: String,
    }
    let text = fs::read_to_string(csv_path.with_extension("meta.toml")).ok()?;
    let meta: Meta = toml::from_str(&text).ok()?;
    let template: Template = meta.run.driver.parse().ok()?;
    driver_info(template).default_fit.map(|(_, c)| c.to_string())
}

fn list() {
    let p = SystemParams::default();
    for info in registry() {
        let knobs = info.user_knobs(&p);
        let grid = info.default_grid(&p, &knobs);
        println!("{}", info.id());
        println!("  {}", info.description);
        println!(
            "  x: {}  grid: {} .. {} ({} points)",
            info.x_name,
            fmt_num(grid[0]),
            fmt_num(grid[grid.len() - 1]),
            grid.len()
        );
        println!("  columns: {}", info.columns().join(", "));
        match info.default_fit {
            Some((m, c)) => println!("  fit: {} on {c}", m.id()),
            None => println!("  fit: none"),
        }
        let k: Vec<String> = knobs.iter().map(|(n, v)| format!("{n}={}", fmt_num(*v))).collect();
        println!("  knobs: {}", k.join(" "));
    }
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}
