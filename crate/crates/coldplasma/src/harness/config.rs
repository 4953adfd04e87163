//! Run configuration: a flat sectioned key-value file (TOML syntax).
//! Unknown keys are rejected.  All quantities use the normalized unit
//! system of the solver (the speed of light, species mass and charge are
//! explicit constants; lengths are domain units, times are light-crossing
//! units of those lengths).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semidiscrete::{Formulation, PhysConstants};
use crate::solvers::CgConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    /// Lower domain corner (length units).
    pub lower: [f64; 3],
    /// Upper domain corner (length units).
    pub upper: [f64; 3],
    /// Cells per direction.
    pub cells: [usize; 3],
    /// Periodic identification per direction.
    pub periodic: [bool; 3],
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            lower: [-1.0; 3],
            upper: [1.0; 3],
            cells: [4, 4, 4],
            periodic: [false; 3],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// "fluxfree" or "dgflux".
    pub formulation: String,
    /// "avf", "ssprk3" or "euler".
    pub integrator: String,
    /// Element degree parameter (only 0 is built).
    pub k: usize,
    /// Time step (time units).
    pub dt: f64,
    /// Final time (time units).
    pub t_end: f64,
    /// Apply the exact Gauss cleaning every this many steps (0 disables).
    pub cleaning_interval: usize,
    /// Seed for every random draw in the run.
    pub seed: u64,
    /// Relative tolerance of the conjugate-gradient solver.
    pub cg_tol: f64,
    /// Convergence threshold of the implicit fixed-point iteration.
    pub picard_tol: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            formulation: "fluxfree".into(),
            integrator: "avf".into(),
            k: 0,
            dt: 5e-3,
            t_end: 0.3,
            cleaning_interval: 0,
            seed: 1234,
            cg_tol: 1e-12,
            picard_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    /// Speed of light (length/time units).
    pub c: f64,
    /// Species mass.
    pub m: f64,
    /// Species charge.
    pub e: f64,
    /// Neutralizing background density.
    pub n0: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            c: 1.0,
            m: 1.0,
            e: -1.0,
            n0: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticlesConfig {
    /// Number of macro-particles (0 disables the particle phase).
    pub count: usize,
    /// Weight per particle (mass units).
    pub weight: f64,
    /// Half-width of the truncation cube of the sampling density.
    pub cutoff: f64,
}

impl Default for ParticlesConfig {
    fn default() -> Self {
        ParticlesConfig {
            count: 0,
            weight: 1e-3,
            cutoff: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WakeConfig {
    /// Number of beam macro-particles.
    pub beam_count: usize,
    /// Weight per beam particle (0 gives the zero-charge control run).
    pub beam_weight: f64,
    /// Beam box lower corner (length units).
    pub beam_lower: [f64; 3],
    /// Beam box upper corner (length units).
    pub beam_upper: [f64; 3],
    /// Initial beam momentum along z (mass * c units; ~4 is 0.97 c).
    pub beam_momentum_z: f64,
    /// Uniform background fluid density.
    pub background_density: f64,
}

impl Default for WakeConfig {
    fn default() -> Self {
        WakeConfig {
            beam_count: 2000,
            beam_weight: 2.5e-6,
            beam_lower: [-0.1, -0.1, -0.75],
            beam_upper: [0.1, 0.1, -0.5],
            beam_momentum_z: 0.97 / (1.0f64 - 0.97 * 0.97).sqrt(),
            background_density: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Output directory; empty disables file output.
    pub dir: String,
    /// Emit a diagnostics row / field snapshot every this many steps.
    pub every: usize,
    /// Write legacy VTK field snapshots.
    pub vtk: bool,
    /// Write raw coefficient dumps (exact restart data) at the end.
    pub dumps: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: String::new(),
            every: 1,
            vtk: false,
            dumps: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    pub run: RunSection,
    pub physics: PhysicsConfig,
    pub particles: ParticlesConfig,
    pub wake: WakeConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.dt <= 0.0 {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.run.t_end < 0.0 {
            return Err(Error::Config("t_end must be non-negative".into()));
        }
        if self.run.k != 0 {
            return Err(Error::Config(format!(
                "element degree k={} is not built (only k=0)",
                self.run.k
            )));
        }
        self.formulation()?;
        self.integrator()?;
        Ok(())
    }

    pub fn formulation(&self) -> Result<Formulation> {
        match self.run.formulation.as_str() {
            "fluxfree" => Ok(Formulation::FluxFree),
            "dgflux" => Ok(Formulation::DgFlux),
            other => Err(Error::Config(format!(
                "unknown formulation '{other}' (expected fluxfree|dgflux)"
            ))),
        }
    }

    pub fn integrator(&self) -> Result<Integrator> {
        match self.run.integrator.as_str() {
            "avf" => Ok(Integrator::Avf),
            "ssprk3" => Ok(Integrator::SspRk3),
            "euler" => Ok(Integrator::Euler),
            other => Err(Error::Config(format!(
                "unknown integrator '{other}' (expected avf|ssprk3|euler)"
            ))),
        }
    }

    pub fn constants(&self) -> PhysConstants {
        PhysConstants {
            c: self.physics.c,
            m: self.physics.m,
            e: self.physics.e,
            n0: self.physics.n0,
        }
    }

    pub fn cg(&self) -> CgConfig {
        CgConfig {
            rel_tol: self.run.cg_tol,
            ..CgConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Avf,
    SspRk3,
    Euler,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_validate() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.mesh.cells, [4, 4, 4]);
        assert_eq!(cfg.run.integrator, "avf");
    }

    #[test]
    fn unknown_keys_fail_fast() {
        let err = RunConfig::from_toml_str("[run]\nnot_a_key = 3\n");
        assert!(err.is_err());
        let err = RunConfig::from_toml_str("[not_a_section]\nx = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str("[run]\ndt = -0.5\n").is_err());
        assert!(RunConfig::from_toml_str("[run]\nintegrator = 'leapfrog'\n").is_err());
        assert!(RunConfig::from_toml_str("[run]\nk = 2\n").is_err());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = RunConfig::from_toml_str(
            "[mesh]\ncells = [8, 8, 8]\n[physics]\nc = 10.0\n[particles]\ncount = 100\n",
        )
        .unwrap();
        assert_eq!(cfg.mesh.cells, [8, 8, 8]);
        assert_eq!(cfg.physics.c, 10.0);
        assert_eq!(cfg.particles.count, 100);
    }
}
