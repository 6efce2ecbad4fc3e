//! Command-line front end: runs the benchmark presets or a configuration
//! file with the gradient-projection optimizer or the optimality-criteria
//! baseline, and writes the density image or volume, the convergence history
//! and a run manifest.

pub mod config;
pub mod export;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use egp_core::{run_egp, run_oc, ModelError, OptimizerError, RunResult};
use serde::Serialize;
use thiserror::Error;

pub use config::{ConfigFile, Method, Overrides, Preset, ResolvedConfig};
pub use export::ExportError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}{}: {message}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Config {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("{}: {source}", path.display())]
    Export {
        path: PathBuf,
        #[source]
        source: ExportError,
    },
}

#[derive(Debug, Parser)]
#[command(name = "egp", version, about = "Topology optimization by efficient gradient projection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Half MBB beam (default 60x20).
    Mbb(RunArgs),
    /// Compliant force inverter (default 100x100).
    Inverter(RunArgs),
    /// 3D cantilever (default 60x20x10).
    #[command(name = "cantilever3d")]
    Cantilever3d(RunArgs),
    /// Problem described by a configuration file.
    Custom {
        #[arg(value_name = "CONFIG")]
        file: PathBuf,
        #[command(flatten)]
        args: RunArgs,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub nz: Option<usize>,
    /// Configuration file layered between the preset and the flags.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_name = "F")]
    pub volume_fraction: Option<f64>,
    #[arg(long, value_name = "R")]
    pub penalization: Option<f64>,
    #[arg(long, value_name = "R")]
    pub density_radius: Option<f64>,
    #[arg(long, value_name = "R")]
    pub sensitivity_radius: Option<f64>,
    #[arg(long, value_name = "R")]
    pub oc_radius: Option<f64>,
    /// Snap width applied to both ends of the density range.
    #[arg(long, value_name = "DELTA")]
    pub threshold: Option<f64>,
    /// Clip threshold multiplier.
    #[arg(long, value_name = "KAPPA")]
    pub clip_multiplier: Option<f64>,
    #[arg(long, value_name = "N")]
    pub max_iterations: Option<usize>,
    /// Stop once the largest density change drops below this.
    #[arg(long, value_name = "TOL")]
    pub stop_tolerance: Option<f64>,
    /// Record wall-clock times in the CSV (otherwise zero, keeping output reproducible).
    #[arg(long)]
    pub timings: bool,
}

impl RunArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            method: self.method,
            nx: self.nx,
            ny: self.ny,
            nz: self.nz,
            volume_fraction: self.volume_fraction,
            penalization: self.penalization,
            density_radius: self.density_radius,
            sensitivity_radius: self.sensitivity_radius,
            oc_radius: self.oc_radius,
            threshold: self.threshold,
            clip_multiplier: self.clip_multiplier,
            max_iterations: self.max_iterations,
            stop_tolerance: self.stop_tolerance,
        }
    }
}

/// What a finished run reports.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub final_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grey_fraction: f64,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
struct WallClock {
    total_s: f64,
    update_ms: f64,
    fea_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    method: Method,
    output_dir: &'a Path,
    exit_status: i32,
    summary: &'a RunSummary,
    wall_clock: WallClock,
    config: &'a ResolvedConfig,
}

fn export_err(path: &Path) -> impl FnOnce(ExportError) -> CliError + '_ {
    move |source| CliError::Export {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs one command and writes its outputs.
pub fn run(cli: &Cli) -> Result<RunSummary, CliError> {
    let (preset, file_path, args) = match &cli.command {
        Command::Mbb(a) => (Some(Preset::Mbb), a.config.as_deref(), a),
        Command::Inverter(a) => (Some(Preset::Inverter), a.config.as_deref(), a),
        Command::Cantilever3d(a) => (Some(Preset::Cantilever3d), a.config.as_deref(), a),
        Command::Custom { file, args } => (None, Some(file.as_path()), args),
    };
    let file = file_path.map(ConfigFile::load).transpose()?;
    let (resolved, problem) = ResolvedConfig::resolve(preset, file.as_ref(), file_path, &args.overrides())?;

    let out = &args.out;
    fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.clone(),
        source,
    })?;
    let started = Instant::now();
    let result: RunResult = match resolved.method {
        Method::Egp => run_egp(&problem)?,
        Method::Oc => run_oc(&problem)?,
    };
    let total_s = started.elapsed().as_secs_f64();

    let stem = format!("{}_{}", resolved.problem.preset, resolved.method);
    let mut files = Vec::new();
    let image = if problem.grid.is_3d() {
        let p = out.join(format!("{stem}.vtk"));
        export::export_vtk(&result.design, &p).map_err(export_err(&p))?;
        p
    } else {
        let p = out.join(format!("{stem}.pgm"));
        export::export_density_image(&result.design, &p).map_err(export_err(&p))?;
        p
    };
    files.push(image);
    if !result.record.is_empty() {
        let p = out.join(format!("{stem}.csv"));
        export::write_convergence_csv(&result.record, &p, args.timings).map_err(export_err(&p))?;
        files.push(p);
    }
    let manifest_path = out.join(format!("{stem}_manifest.toml"));
    files.push(manifest_path.clone());

    let summary = RunSummary {
        // an empty run has no evaluated design
        final_objective: result.final_objective.unwrap_or(f64::NAN),
        iterations: result.iterations(),
        converged: result.converged,
        grey_fraction: result.design.grey_fraction(),
        files,
    };
    let manifest = RunManifest {
        method: resolved.method,
        output_dir: out,
        exit_status: 0,
        summary: &summary,
        wall_clock: WallClock {
            total_s,
            update_ms: result.record.total_update_ms(),
            fea_ms: result.record.total_fea_ms(),
        },
        config: &resolved,
    };
    let text = toml::to_string(&manifest).expect("manifest fields are plain data");
    fs::write(&manifest_path, text).map_err(|source| CliError::Io {
        path: manifest_path.clone(),
        source,
    })?;
    Ok(summary)
}
