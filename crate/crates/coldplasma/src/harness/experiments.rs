//! Experiment drivers: conservation studies, the manufactured-solution
//! convergence study, and the scaled plasma wake-field demo.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{self, ConservationReport};
use crate::error::{Error, Result};
use crate::fespace::{l2_project_scalar, l2_project_vector};
use crate::harness::config::{Integrator, RunConfig};
use crate::harness::mms::MmsSolution;
use crate::harness::output;
use crate::harness::vtk::{self, CellData};
use crate::integrators::{avf_step, cfl_number, euler_step, ssprk3_step, AvfConfig, TimeState};
use crate::mesh::build_mesh;
use crate::particles::{sample_gaussian_ball, ParticleSet};
use crate::semidiscrete::{Discretization, FieldState, Formulation, MomentumDofs};
use crate::solvers::{gauss_clean, norm_inf};
use crate::vec3::{self, Vec3};

pub fn build_discretization(cfg: &RunConfig) -> Result<Discretization> {
    let mesh = Arc::new(build_mesh(
        cfg.mesh.lower,
        cfg.mesh.upper,
        cfg.mesh.cells,
        cfg.mesh.periodic,
    )?);
    Discretization::new(mesh, cfg.formulation()?, cfg.constants(), cfg.cg())
}

/// Project an analytic vector field onto the momentum space.
fn project_momentum(disc: &Discretization, f: impl Fn(Vec3) -> Vec3) -> Result<MomentumDofs> {
    match disc.formulation {
        Formulation::FluxFree => {
            let spaces = disc.m_nodal.as_ref().unwrap();
            let masses = disc.m_nodal_mass.as_ref().unwrap();
            let mut comps: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
            for a in 0..3 {
                comps[a] = l2_project_scalar(
                    &spaces[a],
                    &masses[a],
                    &disc.vol_rule,
                    &disc.cg,
                    |x| f(x)[a],
                )?;
            }
            Ok(MomentumDofs::Nodal(comps))
        }
        Formulation::DgFlux => Ok(MomentumDofs::Rt(l2_project_vector(
            &disc.rt_space,
            &disc.m_rt,
            &disc.vol_rule,
            &disc.cg,
            f,
        )?)),
    }
}

/// Replace the electric field by its exact Gauss-law cleaning against the
/// current charge distribution.
pub fn apply_cleaning(
    disc: &Discretization,
    state: &mut FieldState,
    particles: &ParticleSet,
) -> Result<()> {
    let charge = diagnostics::gauss_charge_moment(disc, state, particles);
    state.e = gauss_clean(
        &disc.seq.grad,
        &disc.m_n,
        &disc.stiffness,
        &state.e,
        &charge,
        &disc.cg,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Conservation study.
// ---------------------------------------------------------------------------

/// Initial data of the conservation study: smooth fields whose analytic
/// divergence matches the n0 = 2 background, a dimple-free positive
/// density, and a divergence-free magnetic field realized through a vector
/// potential so the elementwise divergence vanishes exactly at t = 0.
pub fn conservation_initial_state(disc: &Discretization, cfg: &RunConfig) -> Result<TimeState> {
    let m = disc.constants.m;
    let e = disc.constants.e;

    let rho = l2_project_scalar(&disc.rho_space, &disc.m_rho, &disc.vol_rule, &disc.cg, |x| {
        2.0 + m / (4.0 * PI * e) * x[1] * (x[0] * x[1]).sin()
    })?;
    let momentum = project_momentum(disc, |x| {
        [
            0.25 * (PI * x[0]).sin(),
            0.25 * (PI * x[1]).sin(),
            0.25 * (PI * x[2]).sin(),
        ]
    })?;
    let e_field = l2_project_vector(&disc.n_space, &disc.m_n, &disc.vol_rule, &disc.cg, |x| {
        [
            -(x[0] * x[1]).cos(),
            (x[0] * x[2]).cos(),
            (x[0] * x[1]).sin(),
        ]
    })?;
    // B = curl(A) with A chosen so that curl A equals the target field;
    // applying the discrete curl to the projected potential keeps the
    // elementwise divergence exactly zero.
    let potential = l2_project_vector(&disc.n_space, &disc.m_n, &disc.vol_rule, &disc.cg, |x| {
        [
            0.0,
            (PI * x[0]).sin() * (PI * x[1]).cos() * (PI * x[2]).sin() / (4.0 * PI),
            -(PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).cos() / (4.0 * PI),
        ]
    })?;
    let b_field = disc.seq.curl.matvec(&potential);

    let particles = if cfg.particles.count > 0 {
        sample_gaussian_ball(
            cfg.particles.count,
            cfg.particles.cutoff,
            cfg.run.seed,
            disc.constants.m,
            disc.constants.e,
            cfg.particles.weight,
        )
    } else {
        ParticleSet::empty(disc.constants.m, disc.constants.e)
    };

    let mut fields = disc.zero_state();
    fields.rho = rho;
    fields.m = momentum;
    fields.e = e_field;
    fields.b = b_field;

    let mut state = TimeState {
        fields,
        particles,
        t: 0.0,
    };
    // Exact Gauss cleaning at t = 0.
    apply_cleaning(disc, &mut state.fields, &state.particles)?;
    Ok(state)
}

#[derive(Debug)]
pub struct ConservationSeries {
    pub reports: Vec<ConservationReport>,
    pub mean_picard_iters: f64,
    pub total_halvings: usize,
}

impl ConservationSeries {
    pub fn max_abs(&self, f: impl Fn(&ConservationReport) -> f64) -> f64 {
        self.reports.iter().map(|r| f(r).abs()).fold(0.0, f64::max)
    }
}

/// Run the conservation experiment described by the configuration and
/// return the per-step diagnostics (also written to the output directory
/// when one is configured).
pub fn run_conservation(cfg: &RunConfig) -> Result<ConservationSeries> {
    let disc = build_discretization(cfg)?;
    let mut state = conservation_initial_state(&disc, cfg)?;
    let integrator = cfg.integrator()?;

    let avf_cfg = AvfConfig {
        picard_tol: cfg.run.picard_tol,
        ..AvfConfig::default()
    };
    let n_steps = steps_for(cfg.run.t_end, cfg.run.dt)?;

    if integrator != Integrator::Avf {
        let cfl = cfl_number(&disc, &state.fields, cfg.run.dt)?;
        if cfl > 1.0 {
            eprintln!("warning: explicit step exceeds the advective CFL bound (CFL = {cfl:.2})");
        }
    }

    let reference = (
        diagnostics::total_mass(&disc, &state.fields, &state.particles),
        diagnostics::total_energy(&disc, &state.fields, &state.particles)?,
    );
    let mut reports = vec![diagnostics::report(
        &disc,
        &state.fields,
        &state.particles,
        state.t,
        Some(reference),
    )?];

    let mut picard_total = 0usize;
    let mut halvings = 0usize;
    for step in 1..=n_steps {
        state = match integrator {
            Integrator::Avf => {
                let (next, stats) = avf_step(&disc, &state, cfg.run.dt, &avf_cfg, None)?;
                picard_total += stats.picard_iters;
                halvings += stats.halvings;
                next
            }
            Integrator::SspRk3 => ssprk3_step(&disc, &state, cfg.run.dt, None)?,
            Integrator::Euler => euler_step(&disc, &state, cfg.run.dt, None)?,
        };
        if cfg.run.cleaning_interval > 0 && step % cfg.run.cleaning_interval == 0 {
            apply_cleaning(&disc, &mut state.fields, &state.particles)?;
        }
        if step % cfg.output.every.max(1) == 0 || step == n_steps {
            reports.push(diagnostics::report(
                &disc,
                &state.fields,
                &state.particles,
                state.t,
                Some(reference),
            )?);
        }
    }

    if !cfg.output.dir.is_empty() {
        let dir = PathBuf::from(&cfg.output.dir);
        std::fs::create_dir_all(&dir)?;
        output::write_csv(&dir.join("diagnostics.csv"), &reports)?;
        if cfg.output.dumps {
            write_state_dump(&dir, &disc, &state)?;
        }
        if cfg.output.vtk {
            write_state_vtk(&dir.join("final.vtk"), &disc, &state.fields)?;
        }
    }

    Ok(ConservationSeries {
        reports,
        mean_picard_iters: if integrator == Integrator::Avf && n_steps > 0 {
            picard_total as f64 / n_steps as f64
        } else {
            0.0
        },
        total_halvings: halvings,
    })
}

fn steps_for(t_end: f64, dt: f64) -> Result<usize> {
    let n = (t_end / dt).round();
    if n < 0.0 || (n * dt - t_end).abs() > 1e-9 * t_end.max(dt) {
        return Err(Error::Config(format!(
            "t_end = {t_end} is not an integer number of steps of dt = {dt}"
        )));
    }
    Ok(n as usize)
}

// ---------------------------------------------------------------------------
// Manufactured-solution convergence study.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ConvergenceRow {
    pub cells: usize,
    pub h: f64,
    pub err_e: f64,
    pub err_b: f64,
    pub err_rho: f64,
    pub err_m: f64,
    pub mean_picard_iters: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub order_e: f64,
    pub order_b: f64,
    pub order_rho: f64,
    pub order_m: f64,
}

impl ConvergenceTable {
    pub fn render(&self) -> String {
        let mut out = String::from(
            "cells        h        err_E        err_B      err_rho        err_M   picard\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:>5} {:>8.4} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>8.2}\n",
                r.cells, r.h, r.err_e, r.err_b, r.err_rho, r.err_m, r.mean_picard_iters
            ));
        }
        out.push_str(&format!(
            "fitted orders:  E {:.2}   B {:.2}   rho {:.2}   M {:.2}\n",
            self.order_e, self.order_b, self.order_rho, self.order_m
        ));
        out
    }
}

/// Least-squares slope of ln(err) against ln(h).
fn fit_order(h: &[f64], err: &[f64]) -> f64 {
    let n = h.len() as f64;
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Run the manufactured-solution study on a sequence of meshes with the
/// implicit integrator and report L2 errors at the final time plus fitted
/// convergence orders.
pub fn run_convergence(cfg: &RunConfig, meshes: &[usize]) -> Result<ConvergenceTable> {
    let mms = MmsSolution::new(cfg.constants());
    let mut rows = Vec::new();

    for &n in meshes {
        let mut mesh_cfg = cfg.clone();
        mesh_cfg.mesh.cells = [n, n, n];
        mesh_cfg.mesh.lower = [-1.0; 3];
        mesh_cfg.mesh.upper = [1.0; 3];
        mesh_cfg.mesh.periodic = [false; 3];
        let disc = build_discretization(&mesh_cfg)?;

        let mut fields = disc.zero_state();
        fields.rho = l2_project_scalar(
            &disc.rho_space,
            &disc.m_rho,
            &disc.vol_rule,
            &disc.cg,
            |x| mms.rho(0.0, x),
        )?;
        fields.m = project_momentum(&disc, |x| mms.m(0.0, x))?;
        fields.e = l2_project_vector(&disc.n_space, &disc.m_n, &disc.vol_rule, &disc.cg, |x| {
            mms.e(0.0, x)
        })?;
        fields.b = l2_project_vector(&disc.rt_space, &disc.m_rt, &disc.vol_rule, &disc.cg, |x| {
            mms.b(0.0, x)
        })?;

        let mut state = TimeState {
            fields,
            particles: ParticleSet::empty(disc.constants.m, disc.constants.e),
            t: 0.0,
        };

        let avf_cfg = AvfConfig {
            picard_tol: cfg.run.picard_tol,
            ..AvfConfig::default()
        };
        let n_steps = steps_for(cfg.run.t_end, cfg.run.dt)?;
        let mut picard_total = 0usize;
        for _ in 0..n_steps {
            let (next, stats) = avf_step(&disc, &state, cfg.run.dt, &avf_cfg, Some(&mms))?;
            picard_total += stats.picard_iters;
            state = next;
        }

        let (err_e, err_b, err_rho, err_m) = l2_errors(&disc, &state.fields, &mms, state.t);
        rows.push(ConvergenceRow {
            cells: n,
            h: (mesh_cfg.mesh.upper[0] - mesh_cfg.mesh.lower[0]) / n as f64,
            err_e,
            err_b,
            err_rho,
            err_m,
            mean_picard_iters: if n_steps > 0 {
                picard_total as f64 / n_steps as f64
            } else {
                0.0
            },
        });
    }

    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let table = ConvergenceTable {
        order_e: fit_order(&h, &rows.iter().map(|r| r.err_e).collect::<Vec<_>>()),
        order_b: fit_order(&h, &rows.iter().map(|r| r.err_b).collect::<Vec<_>>()),
        order_rho: fit_order(&h, &rows.iter().map(|r| r.err_rho).collect::<Vec<_>>()),
        order_m: fit_order(&h, &rows.iter().map(|r| r.err_m).collect::<Vec<_>>()),
        rows,
    };
    Ok(table)
}

/// L2 errors of the four fields against the exact solution at time t.
fn l2_errors(
    disc: &Discretization,
    fields: &FieldState,
    mms: &MmsSolution,
    t: f64,
) -> (f64, f64, f64, f64) {
    let vol = disc.mesh.cell_volume();
    let (mut e2, mut b2, mut r2, mut m2) = (0.0, 0.0, 0.0, 0.0);
    for cell in 0..disc.mesh.n_cells() {
        for (q, r) in disc.vol_rule.points.iter().enumerate() {
            let w = disc.vol_rule.weights[q] * vol;
            let x = disc.mesh.ref_to_physical(cell, *r);
            let exact = mms.fields(t, x);
            let eh = disc.eval_e(&fields.e, cell, q);
            let bh = disc.eval_b(&fields.b, cell, q);
            let rhoh = disc.eval_rho(&fields.rho, cell, q);
            let mh = disc.eval_momentum(&fields.m, cell, q);
            let de = vec3::sub(eh, exact.e);
            let db = vec3::sub(bh, exact.b);
            let dm = vec3::sub(mh, exact.m);
            e2 += w * vec3::dot(de, de);
            b2 += w * vec3::dot(db, db);
            r2 += w * (rhoh - exact.rho) * (rhoh - exact.rho);
            m2 += w * vec3::dot(dm, dm);
        }
    }
    (e2.sqrt(), b2.sqrt(), r2.sqrt(), m2.sqrt())
}

// ---------------------------------------------------------------------------
// Plasma wake-field demo (scaled, qualitative).
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct WakeSummary {
    /// Cell-centered E_z along the axis column nearest x = y = 0.
    pub ez_axis: Vec<(f64, f64)>,
    /// Extrema of E_z in the region trailing the beam.
    pub ez_trail_min: f64,
    pub ez_trail_max: f64,
    /// Largest relative background-density deviation at cell centers.
    pub rho_modulation: f64,
    /// Largest field coefficient magnitude (zero-charge control check).
    pub max_field_coeff: f64,
    pub removed_weight: f64,
    pub final_time: f64,
}

fn uniform_beam(cfg: &RunConfig, constants: crate::semidiscrete::PhysConstants) -> ParticleSet {
    let wake = &cfg.wake;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed.wrapping_add(0x57414b45));
    let mut set = ParticleSet::empty(constants.m, constants.e);
    for _ in 0..wake.beam_count {
        let x = [
            rng.gen_range(wake.beam_lower[0]..wake.beam_upper[0]),
            rng.gen_range(wake.beam_lower[1]..wake.beam_upper[1]),
            rng.gen_range(wake.beam_lower[2]..wake.beam_upper[2]),
        ];
        set.x.push(x);
        set.u.push([0.0, 0.0, wake.beam_momentum_z]);
        set.weight.push(wake.beam_weight);
        set.active.push(true);
    }
    set
}

/// Scaled wake-field run: periodic transverse directions, conducting axial
/// boundaries, cold uniform background, relativistic beam particles.
pub fn run_wake(cfg: &RunConfig) -> Result<WakeSummary> {
    let disc = build_discretization(cfg)?;
    let constants = disc.constants;

    let mut fields = disc.zero_state();
    let background = cfg.wake.background_density * constants.m;
    fields.rho = l2_project_scalar(
        &disc.rho_space,
        &disc.m_rho,
        &disc.vol_rule,
        &disc.cg,
        |_| background,
    )?;
    let particles = uniform_beam(cfg, constants);
    let mut state = TimeState {
        fields,
        particles,
        t: 0.0,
    };
    apply_cleaning(&disc, &mut state.fields, &state.particles)?;

    let cfl = cfl_number(&disc, &state.fields, cfg.run.dt)?;
    if cfl > 1.0 {
        eprintln!("warning: explicit step exceeds the advective CFL bound (CFL = {cfl:.2})");
    }

    let reference = (
        diagnostics::total_mass(&disc, &state.fields, &state.particles),
        diagnostics::total_energy(&disc, &state.fields, &state.particles)?,
    );
    let mut reports = vec![diagnostics::report(
        &disc,
        &state.fields,
        &state.particles,
        0.0,
        Some(reference),
    )?];

    let out_dir = if cfg.output.dir.is_empty() {
        None
    } else {
        let dir = PathBuf::from(&cfg.output.dir);
        std::fs::create_dir_all(&dir)?;
        Some(dir)
    };

    let n_steps = steps_for(cfg.run.t_end, cfg.run.dt)?;
    for step in 1..=n_steps {
        state = match cfg.integrator()? {
            Integrator::Avf => {
                let avf_cfg = AvfConfig {
                    picard_tol: cfg.run.picard_tol,
                    ..AvfConfig::default()
                };
                avf_step(&disc, &state, cfg.run.dt, &avf_cfg, None)?.0
            }
            Integrator::SspRk3 => ssprk3_step(&disc, &state, cfg.run.dt, None)?,
            Integrator::Euler => euler_step(&disc, &state, cfg.run.dt, None)?,
        };
        if cfg.run.cleaning_interval > 0 && step % cfg.run.cleaning_interval == 0 {
            apply_cleaning(&disc, &mut state.fields, &state.particles)?;
        }
        let due = step % cfg.output.every.max(1) == 0 || step == n_steps;
        if due {
            reports.push(diagnostics::report(
                &disc,
                &state.fields,
                &state.particles,
                state.t,
                Some(reference),
            )?);
            if let Some(dir) = &out_dir {
                if cfg.output.vtk {
                    write_state_vtk(&dir.join(format!("wake_{step:05}.vtk")), &disc, &state.fields)?;
                }
            }
        }
    }

    if let Some(dir) = &out_dir {
        output::write_csv(&dir.join("diagnostics.csv"), &reports)?;
        output::write_particle_dump(&dir.join("particles.csv"), &state.particles)?;
        if cfg.output.dumps {
            write_state_dump(dir, &disc, &state)?;
        }
    }

    // Axis E_z profile at the cell column nearest x = y = 0.
    let n = disc.mesh.cells_per_dim;
    let (ix, iy) = (n[0] / 2, n[1] / 2);
    let mut ez_axis = Vec::with_capacity(n[2]);
    for iz in 0..n[2] {
        let cell = disc.mesh.cell_index([ix, iy, iz]);
        let x = disc.mesh.ref_to_physical(cell, [0.5; 3]);
        let e = crate::fespace::eval_field_vector(&disc.n_space, &state.fields.e, x)?;
        ez_axis.push((x[2], e[2]));
    }

    // Trail region: behind the beam tail at the final time.
    let beam_speed = {
        let u = cfg.wake.beam_momentum_z;
        u / (constants.m * (1.0 + u * u / (constants.m * constants.m * constants.c * constants.c)).sqrt())
    };
    let tail = cfg.wake.beam_lower[2] + beam_speed * state.t;
    let (mut ez_min, mut ez_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (z, ez) in &ez_axis {
        if *z < tail {
            ez_min = ez_min.min(*ez);
            ez_max = ez_max.max(*ez);
        }
    }

    // Background density modulation at cell centers.
    let mut rho_modulation = 0.0f64;
    for cell in 0..disc.mesh.n_cells() {
        let x = disc.mesh.ref_to_physical(cell, [0.5; 3]);
        let rho = crate::fespace::eval_field_scalar(&disc.rho_space, &state.fields.rho, x)?;
        rho_modulation = rho_modulation.max(((rho - background) / background).abs());
    }

    let max_field_coeff = norm_inf(&state.fields.e)
        .max(norm_inf(&state.fields.b))
        .max(state.fields.m.norm_inf());

    Ok(WakeSummary {
        ez_axis,
        ez_trail_min: ez_min,
        ez_trail_max: ez_max,
        rho_modulation,
        max_field_coeff,
        removed_weight: state.particles.removed_weight,
        final_time: state.t,
    })
}

// ---------------------------------------------------------------------------
// State snapshots, dumps and the standalone cleaning entry point.
// ---------------------------------------------------------------------------

/// Cell-centered snapshot of all four fields as legacy VTK.
pub fn write_state_vtk(path: &Path, disc: &Discretization, fields: &FieldState) -> Result<()> {
    let n_cells = disc.mesh.n_cells();
    let mut rho = Vec::with_capacity(n_cells);
    let mut mom = Vec::with_capacity(n_cells);
    let mut e = Vec::with_capacity(n_cells);
    let mut b = Vec::with_capacity(n_cells);
    for cell in 0..n_cells {
        let x = disc.mesh.ref_to_physical(cell, [0.5; 3]);
        rho.push(crate::fespace::eval_field_scalar(
            &disc.rho_space,
            &fields.rho,
            x,
        )?);
        let m = match &fields.m {
            MomentumDofs::Nodal(comps) => {
                let spaces = disc.m_nodal.as_ref().unwrap();
                [
                    crate::fespace::eval_field_scalar(&spaces[0], &comps[0], x)?,
                    crate::fespace::eval_field_scalar(&spaces[1], &comps[1], x)?,
                    crate::fespace::eval_field_scalar(&spaces[2], &comps[2], x)?,
                ]
            }
            MomentumDofs::Rt(c) => crate::fespace::eval_field_vector(&disc.rt_space, c, x)?,
        };
        mom.push(m);
        e.push(crate::fespace::eval_field_vector(
            &disc.n_space,
            &fields.e,
            x,
        )?);
        b.push(crate::fespace::eval_field_vector(
            &disc.rt_space,
            &fields.b,
            x,
        )?);
    }
    vtk::write_vtk(
        path,
        &disc.mesh,
        "cold plasma fields",
        &[
            ("density", CellData::Scalar(rho)),
            ("momentum", CellData::Vector(mom)),
            ("electric", CellData::Vector(e)),
            ("magnetic", CellData::Vector(b)),
        ],
    )
}

pub fn write_state_dump(dir: &Path, disc: &Discretization, state: &TimeState) -> Result<()> {
    let mut blocks: Vec<(&str, &[f64])> = vec![("rho", &state.fields.rho)];
    match &state.fields.m {
        MomentumDofs::Nodal(c) => {
            blocks.push(("m0", &c[0]));
            blocks.push(("m1", &c[1]));
            blocks.push(("m2", &c[2]));
        }
        MomentumDofs::Rt(c) => blocks.push(("m", c)),
    }
    blocks.push(("e", &state.fields.e));
    blocks.push(("b", &state.fields.b));
    output::write_coeff_dump(&dir.join("state.dump"), &blocks)?;
    output::write_particle_dump(&dir.join("particles.csv"), &state.particles)?;
    let _ = disc;
    Ok(())
}

/// Load a state dump, clean the electric field against the dumped charge
/// data, rewrite the dump, and return the Gauss residual before and after.
pub fn clean_field_dir(cfg: &RunConfig, dir: &Path) -> Result<(f64, f64)> {
    let disc = build_discretization(cfg)?;
    let blocks = output::read_coeff_dump(&dir.join("state.dump"))?;
    let mut fields = disc.zero_state();
    let mut m_nodal: [Vec<f64>; 3] = Default::default();
    for (name, coeffs) in blocks {
        match name.as_str() {
            "rho" => fields.rho = coeffs,
            "e" => fields.e = coeffs,
            "b" => fields.b = coeffs,
            "m" => fields.m = MomentumDofs::Rt(coeffs),
            "m0" => m_nodal[0] = coeffs,
            "m1" => m_nodal[1] = coeffs,
            "m2" => m_nodal[2] = coeffs,
            other => return Err(Error::Parse(format!("unknown dump block {other:?}"))),
        }
    }
    if !m_nodal[0].is_empty() {
        fields.m = MomentumDofs::Nodal(m_nodal);
    }
    let particles_path = dir.join("particles.csv");
    let particles = if particles_path.exists() {
        output::read_particle_dump(&particles_path, disc.constants.m, disc.constants.e)?
    } else {
        ParticleSet::empty(disc.constants.m, disc.constants.e)
    };

    let before = diagnostics::gauss_residual_inf(&disc, &fields, &particles);
    apply_cleaning(&disc, &mut fields, &particles)?;
    let after = diagnostics::gauss_residual_inf(&disc, &fields, &particles);

    let state = TimeState {
        fields,
        particles,
        t: 0.0,
    };
    write_state_dump(dir, &disc, &state)?;
    Ok((before, after))
}

/// Human-readable summary of the discrete setup for a configuration.
pub fn info_string(cfg: &RunConfig) -> Result<String> {
    use std::fmt::Write as _;
    let disc = build_discretization(cfg)?;
    let mut out = String::new();
    writeln!(
        out,
        "mesh: {}x{}x{} cells on [{}, {}] x [{}, {}] x [{}, {}], periodic {:?}",
        disc.mesh.cells_per_dim[0],
        disc.mesh.cells_per_dim[1],
        disc.mesh.cells_per_dim[2],
        disc.mesh.lower[0],
        disc.mesh.upper[0],
        disc.mesh.lower[1],
        disc.mesh.upper[1],
        disc.mesh.lower[2],
        disc.mesh.upper[2],
        disc.mesh.periodic,
    )
    .unwrap();
    writeln!(out, "interior faces: {}", disc.mesh.interior_faces().len()).unwrap();
    writeln!(out, "formulation: {:?}", disc.formulation).unwrap();
    writeln!(out, "density space dofs:   {}", disc.rho_space.n_dofs).unwrap();
    match &disc.m_nodal {
        Some(s) => writeln!(
            out,
            "momentum space dofs:  {} + {} + {} (nodal components)",
            s[0].n_dofs, s[1].n_dofs, s[2].n_dofs
        )
        .unwrap(),
        None => writeln!(out, "momentum space dofs:  {} (face)", disc.rt_space.n_dofs).unwrap(),
    }
    writeln!(out, "edge space dofs:      {}", disc.n_space.n_dofs).unwrap();
    writeln!(out, "face space dofs:      {}", disc.rt_space.n_dofs).unwrap();
    writeln!(out, "constrained nodal:    {}", disc.q_bc.n_dofs).unwrap();
    writeln!(
        out,
        "particles: {} (weight {})",
        cfg.particles.count, cfg.particles.weight
    )
    .unwrap();
    writeln!(
        out,
        "dt = {}, t_end = {} ({} steps), integrator {}",
        cfg.run.dt,
        cfg.run.t_end,
        steps_for(cfg.run.t_end, cfg.run.dt)?,
        cfg.run.integrator
    )
    .unwrap();
    Ok(out)
}

// Presets used by the thin command-line binary and the examples.

/// Conservation-study preset matching the bundled acceptance runs.
pub fn conservation_preset() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.run.dt = 5e-3;
    cfg.run.t_end = 0.3;
    cfg.particles.count = 1000;
    cfg.particles.weight = 1e-3;
    cfg.physics.n0 = 2.0;
    cfg
}

/// Convergence-study preset (the mesh list is supplied separately).
pub fn convergence_preset() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.run.dt = 2.5e-4;
    cfg.run.t_end = 0.1;
    cfg.particles.count = 0;
    cfg
}

/// Scaled wake-demo preset.
pub fn wake_preset() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.mesh.cells = [16, 16, 20];
    cfg.mesh.periodic = [true, true, false];
    cfg.run.integrator = "ssprk3".into();
    cfg.run.dt = 0.025;
    cfg.run.t_end = 1.2;
    cfg.run.cleaning_interval = 100;
    cfg.physics.n0 = 1.0;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_rounding() {
        assert_eq!(steps_for(0.3, 5e-3).unwrap(), 60);
        assert_eq!(steps_for(0.02, 5e-5).unwrap(), 400);
        assert!(steps_for(0.3, 7e-3).is_err());
    }

    #[test]
    fn order_fit_recovers_slope() {
        let h = [0.5f64, 0.25, 0.125];
        let err: Vec<f64> = h.iter().map(|h| 3.0 * h * h).collect();
        let p = fit_order(&h, &err);
        assert!((p - 2.0).abs() < 1e-12);
    }

    #[test]
    fn conservation_initial_state_satisfies_constraints() {
        let mut cfg = conservation_preset();
        cfg.particles.count = 50;
        cfg.mesh.cells = [3, 3, 3];
        let disc = build_discretization(&cfg).unwrap();
        let state = conservation_initial_state(&disc, &cfg).unwrap();
        // Post-cleaning Gauss residual at solver tolerance.
        let r = diagnostics::gauss_residual_inf(&disc, &state.fields, &state.particles);
        assert!(r < 1e-11, "gauss residual {r:.2e}");
        // Vector-potential preparation gives an exactly divergence-free B.
        let div = diagnostics::div_b_l2(&disc, &state.fields);
        assert!(div < 1e-13, "div B {div:.2e}");
        assert_eq!(state.particles.len(), 50);
    }
}
