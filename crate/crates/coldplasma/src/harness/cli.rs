//! Command-line entry point.  Each subcommand loads an optional TOML
//! configuration, applies flag overrides, and runs one experiment.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Result;
use crate::harness::config::RunConfig;
use crate::harness::experiments;

#[derive(Parser)]
#[command(
    name = "coldplasma",
    about = "Structure-preserving cold relativistic plasma solver",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonOverrides {
    /// Configuration file (TOML); defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Spatial formulation: fluxfree | dgflux.
    #[arg(long)]
    formulation: Option<String>,
    /// Time integrator: avf | ssprk3 | euler.
    #[arg(long)]
    integrator: Option<String>,
    /// Time step.
    #[arg(long)]
    dt: Option<f64>,
    /// Final time.
    #[arg(long)]
    t_end: Option<f64>,
    /// Random seed for every draw in the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Speed of light.
    #[arg(long)]
    c: Option<f64>,
    /// Number of macro-particles.
    #[arg(long)]
    particles: Option<usize>,
    /// Gauss cleaning interval in steps (0 disables).
    #[arg(long)]
    cleaning: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Cells per direction (single value for a cubic mesh).
    #[arg(long)]
    cells: Option<usize>,
}

impl CommonOverrides {
    fn apply(&self, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => base,
        };
        if let Some(v) = &self.formulation {
            cfg.run.formulation = v.clone();
        }
        if let Some(v) = &self.integrator {
            cfg.run.integrator = v.clone();
        }
        if let Some(v) = self.dt {
            cfg.run.dt = v;
        }
        if let Some(v) = self.t_end {
            cfg.run.t_end = v;
        }
        if let Some(v) = self.seed {
            cfg.run.seed = v;
        }
        if let Some(v) = self.c {
            cfg.physics.c = v;
        }
        if let Some(v) = self.particles {
            cfg.particles.count = v;
        }
        if let Some(v) = self.cleaning {
            cfg.run.cleaning_interval = v;
        }
        if let Some(v) = &self.out {
            cfg.output.dir = v.clone();
        }
        if let Some(v) = self.cells {
            cfg.mesh.cells = [v, v, v];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Manufactured-solution convergence study.
    Converge {
        #[command(flatten)]
        common: CommonOverrides,
        /// Comma-separated list of cubic mesh resolutions.
        #[arg(long, default_value = "4,8,16")]
        meshes: String,
    },
    /// Conservation study (mass, energy, Gauss law, div B per step).
    Conserve {
        #[command(flatten)]
        common: CommonOverrides,
    },
    /// Scaled plasma wake-field demo.
    Wake {
        #[command(flatten)]
        common: CommonOverrides,
        /// Weight per beam particle (0 gives the zero-charge control).
        #[arg(long)]
        beam_weight: Option<f64>,
    },
    /// Clean the electric field of a dumped state in place.
    CleanField {
        #[command(flatten)]
        common: CommonOverrides,
        /// Directory holding state.dump (and optionally particles.csv).
        #[arg(long)]
        state: PathBuf,
    },
    /// Print the discrete setup for a configuration.
    Info {
        #[command(flatten)]
        common: CommonOverrides,
    },
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Converge { common, meshes } => {
            let cfg = common.apply(experiments::convergence_preset())?;
            let meshes: Vec<usize> = meshes
                .split(',')
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|_| {
                        crate::error::Error::Config(format!("bad mesh size {s:?}"))
                    })
                })
                .collect::<Result<_>>()?;
            let table = experiments::run_convergence(&cfg, &meshes)?;
            print!("{}", table.render());
        }
        Command::Conserve { common } => {
            let cfg = common.apply(experiments::conservation_preset())?;
            let series = experiments::run_conservation(&cfg)?;
            println!("steps: {}", series.reports.len() - 1);
            if cfg.run.integrator == "avf" {
                println!("mean fixed-point iterations: {:.2}", series.mean_picard_iters);
            }
            println!(
                "max |mass err| {:.3e}  max |energy err| {:.3e}",
                series.max_abs(|r| r.mass_rel_err),
                series.max_abs(|r| r.energy_rel_err)
            );
            println!(
                "max gauss residual {:.3e}  max divB {:.3e}",
                series.max_abs(|r| r.gauss_residual_inf),
                series.max_abs(|r| r.div_b_l2)
            );
            if !cfg.output.dir.is_empty() {
                println!("diagnostics written to {}/diagnostics.csv", cfg.output.dir);
            }
        }
        Command::Wake { common, beam_weight } => {
            let mut cfg = common.apply(experiments::wake_preset())?;
            if let Some(w) = beam_weight {
                cfg.wake.beam_weight = w;
            }
            let summary = experiments::run_wake(&cfg)?;
            println!(
                "t = {:.3}: axis E_z in trail region: [{:.3e}, {:.3e}]",
                summary.final_time, summary.ez_trail_min, summary.ez_trail_max
            );
            println!(
                "background density modulation: {:.3e}; removed weight {:.3e}",
                summary.rho_modulation, summary.removed_weight
            );
        }
        Command::CleanField { common, state } => {
            let cfg = common.apply(RunConfig::default())?;
            let (before, after) = experiments::clean_field_dir(&cfg, &state)?;
            println!("gauss residual before: {before:.6e}");
            println!("gauss residual after:  {after:.6e}");
        }
        Command::Info { common } => {
            let cfg = common.apply(RunConfig::default())?;
            print!("{}", experiments::info_string(&cfg)?);
        }
    }
    Ok(())
}
