//! Conserved quantities and constraint residuals.
//!
//! All diagnostics are pure functions of the discrete state and use the same
//! quadrature as the scheme itself, so the invariants of the implicit
//! integrator are reproduced to solver tolerance.

use crate::error::{Error, Result};
use crate::particles::{pair_particles_with_nodal, ParticleSet};
use crate::quadrature::QuadratureRule;
use crate::semidiscrete::{gamma, gamma_fluid, Discretization, FieldState, RHO_FLOOR};
use crate::solvers;
use crate::vec3;

#[derive(Debug, Clone, Copy)]
pub struct ConservationReport {
    pub time: f64,
    pub total_mass: f64,
    pub total_energy: f64,
    pub gauss_residual_inf: f64,
    pub div_b_l2: f64,
    /// (mass(t) - mass(0)) / mass(0); zero when no reference is given.
    pub mass_rel_err: f64,
    pub energy_rel_err: f64,
    /// Weight carried by particles removed through open boundaries.
    pub removed_weight: f64,
}

/// Total mass: (1/m) ∫ rho dx plus the weights of the active particles.
pub fn total_mass(disc: &Discretization, state: &FieldState, particles: &ParticleSet) -> f64 {
    let mut fluid = 0.0;
    let vol = disc.mesh.cell_volume();
    for cell in 0..disc.mesh.n_cells() {
        for q in 0..disc.vol_rule.len() {
            fluid += disc.vol_rule.weights[q] * vol * disc.eval_rho(&state.rho, cell, q);
        }
    }
    fluid / disc.constants.m + particles.active_weight()
}

/// Total energy with the scheme's own quadrature rule.
pub fn total_energy(
    disc: &Discretization,
    state: &FieldState,
    particles: &ParticleSet,
) -> Result<f64> {
    total_energy_with_rule(disc, state, particles, &disc.vol_rule)
}

/// Total energy with an explicit volume rule (the doubled rule serves as an
/// independent accuracy oracle; the field part is quadratic and exact under
/// both, so it uses the mass matrices).
pub fn total_energy_with_rule(
    disc: &Discretization,
    state: &FieldState,
    particles: &ParticleSet,
    rule: &QuadratureRule,
) -> Result<f64> {
    let c = disc.constants.c;
    let c2 = c * c;
    let vol = disc.mesh.cell_volume();
    let mut fluid = 0.0;
    let stock_rule = std::ptr::eq(rule, &disc.vol_rule);
    for cell in 0..disc.mesh.n_cells() {
        for (q, r) in rule.points.iter().enumerate() {
            let (rho, m) = if stock_rule {
                (
                    disc.eval_rho(&state.rho, cell, q),
                    disc.eval_momentum(&state.m, cell, q),
                )
            } else {
                let x = disc.mesh.ref_to_physical(cell, *r);
                (
                    crate::fespace::eval_field_scalar(&disc.rho_space, &state.rho, x)?,
                    eval_momentum_at(disc, state, x)?,
                )
            };
            if !(rho > RHO_FLOOR) {
                return Err(Error::DensityFloor {
                    cell,
                    value: rho,
                    floor: RHO_FLOOR,
                });
            }
            let g = gamma_fluid(m, rho, c);
            fluid += rule.weights[q] * vol * rho * (g - 1.0) * c2;
        }
    }

    let mut kinetic = 0.0;
    for p in 0..particles.len() {
        if particles.active[p] {
            kinetic += particles.weight[p]
                * (gamma(particles.u[p], particles.mass, c) - 1.0)
                * particles.mass
                * c2;
        }
    }

    let field = (solvers::dot(&disc.m_n.matvec(&state.e), &state.e)
        + solvers::dot(&disc.m_rt.matvec(&state.b), &state.b))
        / (8.0 * std::f64::consts::PI);

    Ok(fluid + kinetic + field)
}

fn eval_momentum_at(
    disc: &Discretization,
    state: &FieldState,
    x: vec3::Vec3,
) -> Result<vec3::Vec3> {
    match &state.m {
        crate::semidiscrete::MomentumDofs::Nodal(comps) => {
            let spaces = disc.m_nodal.as_ref().unwrap();
            Ok([
                crate::fespace::eval_field_scalar(&spaces[0], &comps[0], x)?,
                crate::fespace::eval_field_scalar(&spaces[1], &comps[1], x)?,
                crate::fespace::eval_field_scalar(&spaces[2], &comps[2], x)?,
            ])
        }
        crate::semidiscrete::MomentumDofs::Rt(coeffs) => {
            crate::fespace::eval_field_vector(&disc.rt_space, coeffs, x)
        }
    }
}

/// Assembled charge functional of the Gauss law against the constrained
/// nodal basis: f[i] = 4 pi e ( (1/m) <rho, phi_i> + sum_p w_p phi_i(X_p)
/// - n0 ∫ phi_i ).  This is both the cleaning right-hand side and the
/// reference the residual is measured against.
pub fn gauss_charge_moment(
    disc: &Discretization,
    state: &FieldState,
    particles: &ParticleSet,
) -> Vec<f64> {
    let coef = 4.0 * std::f64::consts::PI * disc.constants.e;
    let fluid = disc.pair_rho_with_qbc(&state.rho);
    let part = pair_particles_with_nodal(particles, &disc.q_bc);
    let mut out = vec![0.0; disc.q_bc.n_dofs];
    for i in 0..out.len() {
        out[i] = coef
            * (fluid[i] / disc.constants.m + part[i] - disc.constants.n0 * disc.q_bc_moment[i]);
    }
    out
}

/// Infinity norm of the weak Gauss-law residual over the constrained nodal
/// basis: max_i | -∫ E . grad(phi_i) - f[i] |.
pub fn gauss_residual_inf(
    disc: &Discretization,
    state: &FieldState,
    particles: &ParticleSet,
) -> f64 {
    let div_pairing = disc.seq.grad.matvec_transpose(&disc.m_n.matvec(&state.e));
    let charge = gauss_charge_moment(disc, state, particles);
    let mut res = 0.0f64;
    for i in 0..charge.len() {
        res = res.max((-div_pairing[i] - charge[i]).abs());
    }
    res
}

/// L2 norm of the elementwise divergence of the magnetic field.
pub fn div_b_l2(disc: &Discretization, state: &FieldState) -> f64 {
    let d = disc.seq.div.matvec(&state.b);
    solvers::dot(&d, &disc.m_dg0.matvec(&d)).sqrt()
}

/// Full report; `reference` carries (mass, energy) at t = 0 for the
/// relative errors.
pub fn report(
    disc: &Discretization,
    state: &FieldState,
    particles: &ParticleSet,
    time: f64,
    reference: Option<(f64, f64)>,
) -> Result<ConservationReport> {
    let total_mass = total_mass(disc, state, particles);
    let total_energy = total_energy(disc, state, particles)?;
    let (mass_rel_err, energy_rel_err) = match reference {
        Some((m0, h0)) => ((total_mass - m0) / m0, (total_energy - h0) / h0),
        None => (0.0, 0.0),
    };
    Ok(ConservationReport {
        time,
        total_mass,
        total_energy,
        gauss_residual_inf: gauss_residual_inf(disc, state, particles),
        div_b_l2: div_b_l2(disc, state),
        mass_rel_err,
        energy_rel_err,
        removed_weight: particles.removed_weight,
    })
}
