//! Relativistic macro-particles: container, explicit pushers, point current
//! deposition, and the cell-by-cell trajectory segmentation with its
//! per-segment weighting matrices used by the implicit integrator.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fespace::{eval_field_vector, BasisEval, FeSpace, FIXED_DOF};
use crate::mesh::StructuredHexMesh;
use crate::quadrature::XiRule;
use crate::semidiscrete::gamma;
use crate::vec3::{self, Vec3};

#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub x: Vec<Vec3>,
    pub u: Vec<Vec3>,
    pub weight: Vec<f64>,
    pub active: Vec<bool>,
    /// Species mass.
    pub mass: f64,
    /// Species charge.
    pub charge: f64,
    /// Accumulated weight of particles removed through open boundaries.
    pub removed_weight: f64,
}

impl ParticleSet {
    pub fn empty(mass: f64, charge: f64) -> Self {
        ParticleSet {
            x: Vec::new(),
            u: Vec::new(),
            weight: Vec::new(),
            active: Vec::new(),
            mass,
            charge,
            removed_weight: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn active_weight(&self) -> f64 {
        self.weight
            .iter()
            .zip(&self.active)
            .filter(|(_, a)| **a)
            .map(|(w, _)| w)
            .sum()
    }

    /// Deactivate a particle and add its weight to the removal ledger.
    pub fn deactivate(&mut self, p: usize) {
        if self.active[p] {
            self.active[p] = false;
            self.removed_weight += self.weight[p];
        }
    }

    /// Relativistic velocity U / (m gamma(U)) of particle p.
    pub fn velocity(&self, p: usize, c: f64) -> Vec3 {
        let g = gamma(self.u[p], self.mass, c);
        vec3::scale(1.0 / (self.mass * g), self.u[p])
    }
}

/// Rejection-sample positions from exp(-10 |x|^2) truncated to the cube
/// |x_i| < cutoff, with momentum components uniform in [0,1].  Deterministic
/// for a fixed seed.
pub fn sample_gaussian_ball(
    n: usize,
    cutoff: f64,
    seed: u64,
    mass: f64,
    charge: f64,
    weight: f64,
) -> ParticleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParticleSet::empty(mass, charge);
    while set.x.len() < n {
        let x = [
            rng.gen_range(-cutoff..cutoff),
            rng.gen_range(-cutoff..cutoff),
            rng.gen_range(-cutoff..cutoff),
        ];
        let accept: f64 = rng.gen_range(0.0..1.0);
        if accept < (-10.0 * vec3::dot(x, x)).exp() {
            let u = [
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            ];
            set.x.push(x);
            set.u.push(u);
            set.weight.push(weight);
            set.active.push(true);
        }
    }
    set
}

/// Forward-Euler position update with periodic wrapping; particles leaving
/// through a non-periodic boundary are deactivated.
pub fn push_position_explicit(set: &mut ParticleSet, mesh: &StructuredHexMesh, dt: f64, c: f64) {
    for p in 0..set.len() {
        if !set.active[p] {
            continue;
        }
        let v = set.velocity(p, c);
        let x = vec3::axpy(dt, v, set.x[p]);
        let x = mesh.wrap_point(x);
        if mesh.locate_point(x).is_none() {
            set.deactivate(p);
        } else {
            set.x[p] = x;
        }
    }
}

/// Forward-Euler momentum update from the discrete fields.
pub fn push_momentum_explicit(
    set: &mut ParticleSet,
    edge_space: &FeSpace,
    e_coeffs: &[f64],
    face_space: &FeSpace,
    b_coeffs: &[f64],
    dt: f64,
    c: f64,
) -> Result<()> {
    for p in 0..set.len() {
        if !set.active[p] {
            continue;
        }
        let e = eval_field_vector(edge_space, e_coeffs, set.x[p])?;
        let b = eval_field_vector(face_space, b_coeffs, set.x[p])?;
        let du = lorentz_rate(set.u[p], e, b, set.charge, set.mass, c);
        set.u[p] = vec3::axpy(dt, du, set.u[p]);
    }
    Ok(())
}

/// dU/dt = e (E + U x B / (c m gamma(U))).
#[inline]
pub fn lorentz_rate(u: Vec3, e_at: Vec3, b_at: Vec3, charge: f64, mass: f64, c: f64) -> Vec3 {
    let g = gamma(u, mass, c);
    let uxb = vec3::cross(u, b_at);
    [
        charge * (e_at[0] + uxb[0] / (c * mass * g)),
        charge * (e_at[1] + uxb[1] / (c * mass * g)),
        charge * (e_at[2] + uxb[2] / (c * mass * g)),
    ]
}

/// Point-deposited particle current moment against the edge basis:
/// out[i] = sum_p w_p (U_p / gamma(U_p)) . nu_i(X_p).
/// The caller applies physical prefactors.
pub fn deposit_point_current(set: &ParticleSet, edge_space: &FeSpace, c: f64) -> Vec<f64> {
    let mut out = vec![0.0; edge_space.n_dofs];
    let mesh = &edge_space.mesh;
    for p in 0..set.len() {
        if !set.active[p] {
            continue;
        }
        let Some(cr) = mesh.locate_point(set.x[p]) else {
            continue;
        };
        let g = gamma(set.u[p], set.mass, c);
        let ug = vec3::scale(set.weight[p] / g, set.u[p]);
        let dofs = edge_space.cell_dofs(cr.cell);
        if let BasisEval::Vector { values, .. } = edge_space.eval_basis(cr.cell, cr.ref_coords) {
            for (i, v) in values.iter().enumerate() {
                if dofs[i] != FIXED_DOF {
                    out[dofs[i]] += vec3::dot(ug, *v);
                }
            }
        }
    }
    out
}

/// A straight trajectory split at cell boundaries, with the diagonal
/// per-segment weighting matrices.
#[derive(Debug, Clone)]
pub struct SegmentedPath {
    /// Crossing points A_0 = x_old, ..., A_s = x_new (covering space).
    pub points: Vec<Vec3>,
    /// Diagonals of the weighting matrices, one per segment.  Entries are
    /// displacement ratios componentwise; a component with zero total
    /// displacement gets 1/s so the diagonals still sum to the identity.
    pub d_diag: Vec<Vec3>,
}

impl SegmentedPath {
    pub fn segments(&self) -> usize {
        self.points.len() - 1
    }
}

/// Segment the straight move from `x_old` to `x_new` (unwrapped, covering
/// space for periodic meshes) and build the weighting matrices.
pub fn segment_and_build_d(
    mesh: &StructuredHexMesh,
    x_old: Vec3,
    x_new: Vec3,
) -> SegmentedPath {
    let points = mesh.segment_crossings(x_old, x_new);
    let s = points.len() - 1;
    let total = vec3::sub(x_new, x_old);
    let mut d_diag = Vec::with_capacity(s);
    for i in 0..s {
        let delta = vec3::sub(points[i + 1], points[i]);
        let mut d = [0.0; 3];
        for k in 0..3 {
            d[k] = if total[k] == 0.0 {
                1.0 / s as f64
            } else {
                delta[k] / total[k]
            };
        }
        d_diag.push(d);
    }
    SegmentedPath { points, d_diag }
}

/// Charge-conserving current moment of segmented trajectories:
/// out[i] = sum_p w_p sum_seg (A_j - A_{j-1})/dt . \int_0^1 nu_i(X^xi) dxi,
/// with X^xi the linear interpolant along each sub-segment (xi = 0 at the
/// older end).  The caller applies physical prefactors.
pub fn segmented_current(
    weights: &[f64],
    active: &[bool],
    paths: &[SegmentedPath],
    edge_space: &FeSpace,
    dt: f64,
    xi: &XiRule,
) -> Vec<f64> {
    let mut out = vec![0.0; edge_space.n_dofs];
    let mesh = &edge_space.mesh;
    for (p, path) in paths.iter().enumerate() {
        if !active[p] {
            continue;
        }
        let w = weights[p];
        for seg in 0..path.segments() {
            let a = path.points[seg];
            let b = path.points[seg + 1];
            let rate = vec3::scale(w / dt, vec3::sub(b, a));
            if rate == [0.0, 0.0, 0.0] {
                continue;
            }
            for (s, wq) in xi.nodes.iter().zip(&xi.weights) {
                let xq = mesh.wrap_point(vec3::lerp(a, b, *s));
                let Some(cr) = mesh.locate_point(xq) else {
                    continue;
                };
                let dofs = edge_space.cell_dofs(cr.cell);
                if let BasisEval::Vector { values, .. } =
                    edge_space.eval_basis(cr.cell, cr.ref_coords)
                {
                    for (i, v) in values.iter().enumerate() {
                        if dofs[i] != FIXED_DOF {
                            out[dofs[i]] += wq * vec3::dot(rate, *v);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Particle charge paired with a nodal basis: out[i] = sum_p w_p phi_i(X_p).
pub fn pair_particles_with_nodal(set: &ParticleSet, nodal_space: &FeSpace) -> Vec<f64> {
    let mut out = vec![0.0; nodal_space.n_dofs];
    let mesh = &nodal_space.mesh;
    for p in 0..set.len() {
        if !set.active[p] {
            continue;
        }
        let Some(cr) = mesh.locate_point(set.x[p]) else {
            continue;
        };
        let dofs = nodal_space.cell_dofs(cr.cell);
        if let BasisEval::Scalar { values, .. } = nodal_space.eval_basis(cr.cell, cr.ref_coords) {
            for (i, v) in values.iter().enumerate() {
                if dofs[i] != FIXED_DOF {
                    out[dofs[i]] += set.weight[p] * v;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::{build_space, Constraint, Family, SpaceKind};
    use crate::mesh::build_mesh;
    use crate::solvers::norm_inf;
    use std::sync::Arc;

    fn mesh(n: usize) -> Arc<StructuredHexMesh> {
        Arc::new(build_mesh([-1.0; 3], [1.0; 3], [n; 3], [false; 3]).unwrap())
    }

    fn edge_space(m: &Arc<StructuredHexMesh>) -> FeSpace {
        build_space(
            m.clone(),
            SpaceKind::new(Family::EdgeNedelec, 0, Constraint::Boundary),
        )
        .unwrap()
    }

    fn nodal_bc(m: &Arc<StructuredHexMesh>) -> FeSpace {
        build_space(
            m.clone(),
            SpaceKind::new(Family::NodalQ, 0, Constraint::Boundary),
        )
        .unwrap()
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let a = sample_gaussian_ball(500, 0.5, 9, 1.0, -1.0, 1e-3);
        let b = sample_gaussian_ball(500, 0.5, 9, 1.0, -1.0, 1e-3);
        assert_eq!(a.x, b.x);
        assert_eq!(a.u, b.u);
        let mut mean = [0.0; 3];
        for (x, u) in a.x.iter().zip(&a.u) {
            for k in 0..3 {
                assert!(x[k].abs() < 0.5);
                assert!((0.0..1.0).contains(&u[k]));
            }
            mean = vec3::add(mean, *x);
        }
        // Sample mean within 5 sigma/sqrt(n) of zero; the truncated
        // Gaussian has sigma ~ sqrt(1/20).
        let bound = 5.0 * (0.05f64).sqrt() / (500f64).sqrt();
        for k in 0..3 {
            assert!((mean[k] / 500.0).abs() < bound);
        }
    }

    #[test]
    fn position_push_basics() {
        let m = mesh(4);
        let mut set = ParticleSet::empty(1.0, -1.0);
        set.x.push([0.0; 3]);
        set.u.push([0.0; 3]);
        set.weight.push(1.0);
        set.active.push(true);
        set.x.push([0.0; 3]);
        set.u.push([1.0, 0.0, 0.0]);
        set.weight.push(1.0);
        set.active.push(true);
        push_position_explicit(&mut set, &m, 1.0, 1.0);
        assert_eq!(set.x[0], [0.0; 3]);
        let expect = 1.0 / 2.0f64.sqrt();
        assert!((set.x[1][0] - expect).abs() < 1e-14);
        // Speed below c always.
        assert!(vec3::norm(set.velocity(1, 1.0)) < 1.0);
    }

    #[test]
    fn momentum_push_basics() {
        let m = mesh(2);
        let ne = edge_space(&m);
        let rt = build_space(
            m.clone(),
            SpaceKind::new(Family::FaceRaviartThomas, 0, Constraint::Boundary),
        )
        .unwrap();
        let mut set = ParticleSet::empty(1.0, 1.0);
        set.x.push([0.2, 0.1, -0.3]);
        set.u.push([0.4, -0.2, 0.1]);
        set.weight.push(1.0);
        set.active.push(true);
        let e = vec![0.0; ne.n_dofs];
        let b = vec![0.0; rt.n_dofs];
        let u0 = set.u[0];
        push_momentum_explicit(&mut set, &ne, &e, &rt, &b, 0.5, 1.0).unwrap();
        assert_eq!(set.u[0], u0);
        // Magnetic force does no work.
        let du = lorentz_rate([0.3, 0.4, -0.1], [0.0; 3], [0.2, -0.5, 1.0], -1.0, 1.0, 1.0);
        assert!(vec3::dot(du, [0.3, 0.4, -0.1]).abs() < 1e-15);
        // Uniform E gives dU = e E dt.
        let du = lorentz_rate([0.0; 3], [1.0, 0.0, 0.0], [0.0; 3], 1.0, 1.0, 1.0);
        assert_eq!(du, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn deposit_vanishes_for_stationary_particles() {
        let m = mesh(2);
        let ne = edge_space(&m);
        let mut set = ParticleSet::empty(1.0, -1.0);
        set.x.push([0.3, -0.2, 0.4]);
        set.u.push([0.0; 3]);
        set.weight.push(2.0);
        set.active.push(true);
        let out = deposit_point_current(&set, &ne, 1.0);
        assert!(norm_inf(&out) == 0.0);
    }

    #[test]
    fn deposit_matches_direct_basis_evaluation() {
        let m = mesh(2);
        let ne = edge_space(&m);
        let mut set = ParticleSet::empty(1.0, -1.0);
        let x = [0.37, -0.11, 0.53];
        let u = [1.0, 0.5, -0.25];
        set.x.push(x);
        set.u.push(u);
        set.weight.push(0.7);
        set.active.push(true);
        let out = deposit_point_current(&set, &ne, 1.0);
        let cr = m.locate_point(x).unwrap();
        let dofs = ne.cell_dofs(cr.cell);
        let g = gamma(u, 1.0, 1.0);
        if let BasisEval::Vector { values, .. } = ne.eval_basis(cr.cell, cr.ref_coords) {
            for (i, v) in values.iter().enumerate() {
                if dofs[i] != FIXED_DOF {
                    let expect = 0.7 * vec3::dot(u, *v) / g;
                    assert!((out[dofs[i]] - expect).abs() < 1e-14);
                }
            }
        }
        let nonzero = out.iter().filter(|v| **v != 0.0).count();
        assert!(nonzero <= 12);
    }

    #[test]
    fn d_matrices_stationary_and_single_cell() {
        let m = mesh(4);
        let x = [0.1, 0.2, 0.3];
        let path = segment_and_build_d(&m, x, x);
        assert_eq!(path.segments(), 1);
        assert_eq!(path.d_diag[0], [1.0, 1.0, 1.0]);

        let path = segment_and_build_d(&m, [0.05, 0.05, 0.05], [0.2, 0.1, 0.15]);
        assert_eq!(path.segments(), 1);
        assert_eq!(path.d_diag[0], [1.0, 1.0, 1.0]);
    }

    #[test]
    fn d_matrices_sum_to_identity() {
        let m = mesh(4);
        // A diagonal move crossing several planes.
        let path = segment_and_build_d(&m, [-0.9, -0.7, -0.2], [0.8, 0.9, 0.1]);
        assert!(path.segments() > 2);
        let mut sum = [0.0; 3];
        for d in &path.d_diag {
            sum = vec3::add(sum, *d);
        }
        for k in 0..3 {
            assert!((sum[k] - 1.0).abs() < 1e-14);
        }
        // Eq-of-motion consistency: D_i * total displacement / dt equals the
        // per-segment displacement rate.
        let dt = 0.25;
        let total = vec3::sub([0.8, 0.9, 0.1], [-0.9, -0.7, -0.2]);
        for (i, d) in path.d_diag.iter().enumerate() {
            let delta = vec3::sub(path.points[i + 1], path.points[i]);
            for k in 0..3 {
                let lhs = d[k] * total[k] / dt;
                let rhs = delta[k] / dt;
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn d_matrices_degenerate_component() {
        let m = mesh(4);
        // No displacement along z; crosses one x-plane.
        let path = segment_and_build_d(&m, [-0.1, 0.2, 0.3], [0.1, 0.25, 0.3]);
        let s = path.segments() as f64;
        let mut sum_z = 0.0;
        for d in &path.d_diag {
            assert!((d[2] - 1.0 / s).abs() < 1e-15);
            sum_z += d[2];
        }
        assert!((sum_z - 1.0).abs() < 1e-14);
    }

    /// Discrete charge balance: the segmented current paired with the
    /// gradient of any constrained nodal function equals the endpoint
    /// difference of that function.
    #[test]
    fn segmented_current_charge_balance() {
        let m = mesh(4);
        let q_bc = nodal_bc(&m);
        let ne = edge_space(&m);
        let xi = XiRule::default();
        let seq = crate::sequence::build_sequence(
            &q_bc,
            &ne,
            &build_space(
                m.clone(),
                SpaceKind::new(Family::FaceRaviartThomas, 0, Constraint::Boundary),
            )
            .unwrap(),
            &build_space(m.clone(), SpaceKind::new(Family::BrokenDg(0), 0, Constraint::None))
                .unwrap(),
        )
        .unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dt = 0.1;
        for _ in 0..100 {
            let a = [
                rng.gen_range(-0.95..0.95),
                rng.gen_range(-0.95..0.95),
                rng.gen_range(-0.95..0.95),
            ];
            let b = [
                rng.gen_range(-0.95..0.95),
                rng.gen_range(-0.95..0.95),
                rng.gen_range(-0.95..0.95),
            ];
            let w = rng.gen_range(0.1..2.0);
            let path = segment_and_build_d(&m, a, b);
            let current = segmented_current(&[w], &[true], &[path], &ne, dt, &xi);

            // Pair with grad(phi) for every constrained nodal basis phi:
            // G^T current.
            let paired = seq.grad.matvec_transpose(&current);

            // Endpoint differences of each nodal basis function.
            let mut set_new = ParticleSet::empty(1.0, -1.0);
            set_new.x.push(b);
            set_new.u.push([0.0; 3]);
            set_new.weight.push(w);
            set_new.active.push(true);
            let mut set_old = set_new.clone();
            set_old.x[0] = a;
            let phi_new = pair_particles_with_nodal(&set_new, &q_bc);
            let phi_old = pair_particles_with_nodal(&set_old, &q_bc);

            let mut res = 0.0f64;
            for i in 0..q_bc.n_dofs {
                res = res.max((paired[i] - (phi_new[i] - phi_old[i]) / dt).abs());
            }
            assert!(res < 1e-12, "charge balance residual {res:.2e}");
        }
    }

    /// Chain-rule consistency of the point-deposited current: pairing with
    /// grad(phi) equals d/dt of the deposited charge along the trajectory.
    #[test]
    fn point_current_chain_rule() {
        let m = mesh(4);
        let q_bc = nodal_bc(&m);
        let mut set = ParticleSet::empty(1.0, -1.0);
        set.x.push([0.21, -0.34, 0.12]);
        set.u.push([0.4, 0.3, -0.2]);
        set.weight.push(1.3);
        set.active.push(true);
        let c = 1.0;

        // Analytic rate: w grad(phi)(X) . v.
        let cr = m.locate_point(set.x[0]).unwrap();
        let dofs = q_bc.cell_dofs(cr.cell);
        let grads = crate::fespace::q1_gradients(cr.ref_coords, m.h);
        let v = set.velocity(0, c);
        let mut analytic = vec![0.0; q_bc.n_dofs];
        for i in 0..8 {
            if dofs[i] != FIXED_DOF {
                analytic[dofs[i]] = 1.3 * vec3::dot(grads[i], v);
            }
        }

        // Finite-difference of the deposited charge.
        let eps = 1e-6;
        let mut fwd = set.clone();
        fwd.x[0] = vec3::axpy(eps, v, set.x[0]);
        let mut bwd = set.clone();
        bwd.x[0] = vec3::axpy(-eps, v, set.x[0]);
        let qf = pair_particles_with_nodal(&fwd, &q_bc);
        let qb = pair_particles_with_nodal(&bwd, &q_bc);
        for i in 0..q_bc.n_dofs {
            let fd = (qf[i] - qb[i]) / (2.0 * eps);
            assert!((fd - analytic[i]).abs() < 1e-8);
        }
    }
}
