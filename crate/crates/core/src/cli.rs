//! Command-line front end. Exit codes: 0 success, 1 failed verification,
//! 2 configuration or usage error, 3 numerical or I/O failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{Config, ConfigError};
use crate::error::Error;
use crate::measures::{GaussianMixture, GridDensity};
use crate::optimizer;
use crate::ot;
use crate::sensitivities::{self, Family};
use crate::transport::{self, Velocity};
use crate::Point;

#[derive(Debug, Parser)]
#[command(name = "wassopt", version, about = "Shape and topology optimization as Wasserstein gradient flows")]
pub struct Cli {
    /// Configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `[output].dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress per-item progress lines.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the derivative verification battery.
    Verify {
        /// Restrict to one family.
        #[arg(long, value_parser = ["shape1", "shape2", "top", "dens"])]
        only: Option<String>,
    },
    /// Run the density gradient flow.
    Optimize,
    /// Transport a density with a preset velocity field.
    TransportDemo,
    /// Compare the exact transport solver with its oracles.
    OtCheck,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Numerical(#[from] Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("{failed} of {total} checks failed")]
    Failed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Numerical(inner) => eprintln!("error: {}: {inner}", inner.name()),
                other => eprintln!("error: {other}"),
            }
            e.exit_code()
        }
    }
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(cfg.output_dir()));
    fs::create_dir_all(&out)?;
    let say = |line: String| {
        if !cli.quiet {
            println!("{line}");
        }
    };
    match &cli.command {
        Command::Verify { only } => verify(&cfg, &out, only.as_deref(), &say),
        Command::Optimize => optimize(&cfg, &out, &say),
        Command::TransportDemo => transport_demo(&cfg, &out, &say),
        Command::OtCheck => ot_check(&cfg, &out, &say),
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(io::Error::from)?;
    writeln!(w)?;
    Ok(w.flush()?)
}

fn write_snapshot(out: &Path, step: usize, rho: &GridDensity) -> Result<PathBuf, CliError> {
    let csv = out.join(format!("rho_{step}.csv"));
    let mut w = BufWriter::new(File::create(&csv)?);
    rho.write_csv(&mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(out.join(format!("rho_{step}.pgm")))?);
    rho.write_pgm(&mut w)?;
    w.flush()?;
    Ok(csv)
}

fn count_failures(total: usize, failed: usize) -> Result<(), CliError> {
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Failed { failed, total })
    }
}

fn verify(cfg: &Config, out: &Path, only: Option<&str>, say: &dyn Fn(String)) -> Result<(), CliError> {
    let families: Vec<Family> = match only {
        Some(name) => vec![Family::parse(name).expect("clap restricts the family names")],
        None => Family::ALL.to_vec(),
    };
    let reports = sensitivities::standard_battery(&families, cfg.seed()?)?;
    for r in &reports {
        say(format!(
            "{} {:<40} estimate={:+.10e} reference={:+.10e} rel_err={:.3e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.test,
            r.estimate,
            r.reference,
            r.rel_err
        ));
    }
    write_json(&out.join("report.json"), &reports)?;
    let failed = reports.iter().filter(|r| !r.pass).count();
    say(format!("{} of {} derivative checks passed", reports.len() - failed, reports.len()));
    count_failures(reports.len(), failed)
}

#[derive(Serialize)]
struct OptimizeSummary<'a> {
    objective: &'a str,
    sign: f64,
    initial_objective: f64,
    final_objective: f64,
    steps: usize,
    final_density: String,
}

fn optimize(cfg: &Config, out: &Path, say: &dyn Fn(String)) -> Result<(), CliError> {
    let rho0 = cfg.initial_density()?;
    let flow = cfg.flow()?;
    let every = cfg.snapshot_every()?;
    let mut final_path = write_snapshot(out, 0, &rho0)?;
    let (rho, log) = optimizer::run_gradient_flow_with(&rho0, &flow, |k, rho| {
        if k % every == 0 {
            write_snapshot(out, k, rho).map_err(|e| Error::InvalidInput(format!("snapshot {k}: {e}")))?;
        }
        Ok(())
    })?;
    let steps = log.entries.len();
    if let Some(last) = log.entries.last() {
        say(format!(
            "steps={} t={:.6e} objective {:.10e} -> {:.10e}",
            steps, last.t, log.initial_objective, last.objective
        ));
    }
    if steps > 0 {
        final_path = write_snapshot(out, steps, &rho)?;
    }
    let mut w = BufWriter::new(File::create(out.join("runlog.jsonl"))?);
    transport::write_jsonl(&log.entries, &mut w)?;
    w.flush()?;
    let summary = OptimizeSummary {
        objective: flow.objective.name(),
        sign: log.sign,
        initial_objective: log.initial_objective,
        final_objective: log.entries.last().map_or(log.initial_objective, |e| e.objective),
        steps,
        final_density: final_path.display().to_string(),
    };
    write_json(&out.join("report.json"), &summary)?;
    println!("{}", final_path.display());
    Ok(())
}

#[derive(Serialize)]
struct TransportSummary {
    t_final: f64,
    steps: usize,
    initial_mass: f64,
    final_mass: f64,
    max_mass_error_per_step: f64,
}

fn transport_demo(cfg: &Config, out: &Path, say: &dyn Fn(String)) -> Result<(), CliError> {
    let grid = cfg.grid()?;
    let rho0 = if cfg.raw("grid", "init").is_some() {
        cfg.initial_density()?
    } else {
        let center = Point::new(grid.x0 + 0.5 * grid.lx, grid.y0 + 0.5 * grid.ly);
        let g = GaussianMixture::single(center, 0.1 * grid.lx.min(grid.ly));
        use crate::measures::DensityField;
        GridDensity::from_fn(grid, |x| g.density_at(x))?.normalize()?
    };
    let field = cfg.field()?;
    let t_final = cfg.f64_or("flow", "t_final", 0.25)?;
    if t_final < 0.0 {
        return Err(ConfigError::Invalid { section: "flow".into(), key: "t_final".into(), message: "must be >= 0".into() }.into());
    }
    let safety = cfg.flow_safety()?;
    let dt_max = cfg.f64_opt("flow", "dt_max")?.unwrap_or_else(|| transport::default_dt_max(&grid));
    write_snapshot(out, 0, &rho0)?;
    let (rho, records) = transport::solve_continuity(&rho0, Velocity::Analytic(&field), t_final, safety, dt_max)?;
    let mut w = BufWriter::new(File::create(out.join("runlog.jsonl"))?);
    transport::write_jsonl(&records, &mut w)?;
    w.flush()?;
    let path = write_snapshot(out, records.len(), &rho)?;
    let mut prev = rho0.mass();
    let mut worst = 0.0f64;
    for r in &records {
        worst = worst.max((r.mass - prev).abs());
        prev = r.mass;
    }
    say(format!("steps={} mass {:.15} -> {:.15}", records.len(), rho0.mass(), rho.mass()));
    let summary = TransportSummary {
        t_final,
        steps: records.len(),
        initial_mass: rho0.mass(),
        final_mass: rho.mass(),
        max_mass_error_per_step: worst,
    };
    write_json(&out.join("report.json"), &summary)?;
    println!("{}", path.display());
    Ok(())
}

fn ot_check(cfg: &Config, out: &Path, say: &dyn Fn(String)) -> Result<(), CliError> {
    let checks = ot::oracle_suite(cfg.seed()?)?;
    for c in &checks {
        say(format!(
            "{} {:<24} value={:.15e} reference={:.15e} error={:.3e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.test,
            c.value,
            c.reference,
            c.error
        ));
    }
    write_json(&out.join("report.json"), &checks)?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    say(format!("{} of {} transport checks passed", checks.len() - failed, checks.len()));
    count_failures(checks.len(), failed)
}
