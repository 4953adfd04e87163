//! Compatible finite element families on structured hexahedral meshes.
//!
//! Four lowest-order (k = 0) families are provided:
//!  - `NodalQ`: continuous trilinear elements (degree k+1), vertex DOFs;
//!  - `EdgeNedelec`: curl-conforming edge elements, tangential edge DOFs;
//!  - `FaceRaviartThomas`: div-conforming face elements, normal flux DOFs;
//!  - `BrokenDg(d)`: discontinuous elements of degree d (0 or 1), cell DOFs.
//!
//! DOF coefficients are canonical: a nodal coefficient is the vertex value,
//! an edge coefficient is the tangential line integral over its edge, a face
//! coefficient is the normal flux through its face.  On a structured grid
//! all edges and faces are oriented along the +axis directions, so no sign
//! bookkeeping is needed.
//!
//! Edge and face entities use the cyclic axis convention: for axis `e` the
//! transverse axes are `u = (e+1)%3`, `v = (e+2)%3`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::StructuredHexMesh;
use crate::quadrature::{gauss_nodes, gauss_weights, QuadratureRule};
use crate::solvers::{cg_solve, CgConfig, SparseMatrix};
use crate::vec3::Vec3;

/// Marker for a local basis function whose global DOF is removed by a
/// boundary constraint (its coefficient is identically zero).
pub const FIXED_DOF: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    NodalQ,
    EdgeNedelec,
    FaceRaviartThomas,
    /// Discontinuous family of the given absolute polynomial degree.
    BrokenDg(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// Full space.
    None,
    /// Homogeneous boundary subspace: f = 0 (nodal), n x f = 0 (edge),
    /// n . f = 0 (face).  For the broken family this marks the zero-mean
    /// subspace, which is realized by subtracting means rather than by
    /// removing DOFs.
    Boundary,
    /// Zero trace on the two boundary planes normal to the given axis only.
    /// Used for the components of a vector-valued nodal field subject to
    /// n . f = 0.
    NormalComponent(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaceKind {
    pub family: Family,
    /// Degree parameter of the compatible complex; only k = 0 is built.
    pub k: usize,
    pub constraint: Constraint,
}

impl SpaceKind {
    pub fn new(family: Family, k: usize, constraint: Constraint) -> Self {
        SpaceKind { family, k, constraint }
    }
}

#[derive(Debug)]
pub struct FeSpace {
    pub mesh: Arc<StructuredHexMesh>,
    pub kind: SpaceKind,
    pub n_dofs: usize,
    pub local_dofs: usize,
    /// `n_cells * local_dofs` table of global DOF ids (`FIXED_DOF` for
    /// constrained-out locals).
    cell_dofs: Vec<usize>,
    /// Raw lattice entity id -> global DOF id (empty for broken spaces).
    entity_global: Vec<usize>,
}

#[inline]
fn lambda(o: usize, t: f64) -> f64 {
    if o == 0 {
        1.0 - t
    } else {
        t
    }
}

#[inline]
fn dlambda(o: usize) -> f64 {
    if o == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Lattice point count along an axis: n for periodic axes (indices wrap),
/// n+1 otherwise.
fn points(mesh: &StructuredHexMesh, d: usize) -> usize {
    if mesh.periodic[d] {
        mesh.cells_per_dim[d]
    } else {
        mesh.cells_per_dim[d] + 1
    }
}

/// Whether lattice point index j (0..=n) sits on a true boundary plane.
fn on_boundary(mesh: &StructuredHexMesh, d: usize, j: usize) -> bool {
    !mesh.periodic[d] && (j == 0 || j == mesh.cells_per_dim[d])
}

pub fn build_space(mesh: Arc<StructuredHexMesh>, kind: SpaceKind) -> Result<FeSpace> {
    if kind.k != 0 {
        return Err(Error::UnsupportedDegree(kind.k));
    }
    match kind.family {
        Family::NodalQ => build_nodal(mesh, kind),
        Family::EdgeNedelec => build_edge(mesh, kind),
        Family::FaceRaviartThomas => build_face(mesh, kind),
        Family::BrokenDg(d) => {
            if d > 1 {
                return Err(Error::UnsupportedDegree(d));
            }
            if matches!(kind.constraint, Constraint::NormalComponent(_)) {
                return Err(Error::SpaceMismatch(
                    "component constraint is only defined for nodal spaces".into(),
                ));
            }
            Ok(build_broken(mesh, kind, d))
        }
    }
}

fn renumber(entity_constrained: Vec<bool>) -> (Vec<usize>, usize) {
    let mut global = vec![FIXED_DOF; entity_constrained.len()];
    let mut next = 0usize;
    for (i, constrained) in entity_constrained.iter().enumerate() {
        if !constrained {
            global[i] = next;
            next += 1;
        }
    }
    (global, next)
}

fn build_nodal(mesh: Arc<StructuredHexMesh>, kind: SpaceKind) -> Result<FeSpace> {
    let p = [points(&mesh, 0), points(&mesh, 1), points(&mesh, 2)];
    let raw = p[0] * p[1] * p[2];
    let mut constrained = vec![false; raw];
    for jz in 0..p[2] {
        for jy in 0..p[1] {
            for jx in 0..p[0] {
                let j = [jx, jy, jz];
                let c = match kind.constraint {
                    Constraint::None => false,
                    Constraint::Boundary => (0..3).any(|d| on_boundary(&mesh, d, j[d])),
                    Constraint::NormalComponent(a) => on_boundary(&mesh, a, j[a]),
                };
                constrained[jx + p[0] * (jy + p[1] * jz)] = c;
            }
        }
    }
    let (entity_global, n_dofs) = renumber(constrained);

    let n_cells = mesh.n_cells();
    let mut cell_dofs = vec![FIXED_DOF; n_cells * 8];
    for cell in 0..n_cells {
        let c = mesh.cell_coords(cell);
        for l in 0..8 {
            let (a, b, cc) = (l & 1, (l >> 1) & 1, l >> 2);
            let j = [
                (c[0] + a) % p[0].max(1),
                (c[1] + b) % p[1].max(1),
                (c[2] + cc) % p[2].max(1),
            ];
            // For non-periodic axes the modulo is a no-op because
            // c + offset <= n < p.
            let raw = j[0] + p[0] * (j[1] + p[1] * j[2]);
            cell_dofs[cell * 8 + l] = entity_global[raw];
        }
    }
    Ok(FeSpace {
        mesh,
        kind,
        n_dofs,
        local_dofs: 8,
        cell_dofs,
        entity_global,
    })
}

/// Raw edge id layout: three axis blocks, each indexed by
/// `i_e + n_e * (j_u + p_u * j_v)` with cyclic transverse axes (u, v).
fn edge_block_sizes(mesh: &StructuredHexMesh) -> [usize; 3] {
    let mut sizes = [0usize; 3];
    for e in 0..3 {
        let (u, v) = ((e + 1) % 3, (e + 2) % 3);
        sizes[e] = mesh.cells_per_dim[e] * points(mesh, u) * points(mesh, v);
    }
    sizes
}

fn edge_raw(mesh: &StructuredHexMesh, axis: usize, i: usize, ju: usize, jv: usize) -> usize {
    let sizes = edge_block_sizes(mesh);
    let offset: usize = sizes[..axis].iter().sum();
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    let pu = points(mesh, u);
    let ju = ju % pu;
    let jv = jv % points(mesh, v);
    offset + i + mesh.cells_per_dim[axis] * (ju + pu * jv)
}

fn build_edge(mesh: Arc<StructuredHexMesh>, kind: SpaceKind) -> Result<FeSpace> {
    if matches!(kind.constraint, Constraint::NormalComponent(_)) {
        return Err(Error::SpaceMismatch(
            "component constraint is only defined for nodal spaces".into(),
        ));
    }
    let sizes = edge_block_sizes(&mesh);
    let raw_total: usize = sizes.iter().sum();
    let mut constrained = vec![false; raw_total];
    if kind.constraint == Constraint::Boundary {
        for e in 0..3 {
            let (u, v) = ((e + 1) % 3, (e + 2) % 3);
            for jv in 0..points(&mesh, v) {
                for ju in 0..points(&mesh, u) {
                    for i in 0..mesh.cells_per_dim[e] {
                        // An edge lies on the boundary when either transverse
                        // plane index is a boundary plane.
                        if on_boundary(&mesh, u, ju) || on_boundary(&mesh, v, jv) {
                            constrained[edge_raw(&mesh, e, i, ju, jv)] = true;
                        }
                    }
                }
            }
        }
    }
    let (entity_global, n_dofs) = renumber(constrained);

    let n_cells = mesh.n_cells();
    let mut cell_dofs = vec![FIXED_DOF; n_cells * 12];
    for cell in 0..n_cells {
        let c = mesh.cell_coords(cell);
        for e in 0..3 {
            let (u, v) = ((e + 1) % 3, (e + 2) % 3);
            for ov in 0..2 {
                for ou in 0..2 {
                    let l = e * 4 + ou + 2 * ov;
                    let raw = edge_raw(&mesh, e, c[e], c[u] + ou, c[v] + ov);
                    cell_dofs[cell * 12 + l] = entity_global[raw];
                }
            }
        }
    }
    Ok(FeSpace {
        mesh,
        kind,
        n_dofs,
        local_dofs: 12,
        cell_dofs,
        entity_global,
    })
}

fn face_block_sizes(mesh: &StructuredHexMesh) -> [usize; 3] {
    let mut sizes = [0usize; 3];
    for d in 0..3 {
        let (u, v) = ((d + 1) % 3, (d + 2) % 3);
        sizes[d] = points(mesh, d) * mesh.cells_per_dim[u] * mesh.cells_per_dim[v];
    }
    sizes
}

fn face_raw(mesh: &StructuredHexMesh, axis: usize, plane: usize, cu: usize, cv: usize) -> usize {
    let sizes = face_block_sizes(mesh);
    let offset: usize = sizes[..axis].iter().sum();
    let planes = points(mesh, axis);
    let plane = plane % planes;
    let (u, _v) = ((axis + 1) % 3, (axis + 2) % 3);
    offset + plane + planes * (cu + mesh.cells_per_dim[u] * cv)
}

fn build_face(mesh: Arc<StructuredHexMesh>, kind: SpaceKind) -> Result<FeSpace> {
    if matches!(kind.constraint, Constraint::NormalComponent(_)) {
        return Err(Error::SpaceMismatch(
            "component constraint is only defined for nodal spaces".into(),
        ));
    }
    let sizes = face_block_sizes(&mesh);
    let raw_total: usize = sizes.iter().sum();
    let mut constrained = vec![false; raw_total];
    if kind.constraint == Constraint::Boundary {
        for d in 0..3 {
            let (u, v) = ((d + 1) % 3, (d + 2) % 3);
            for cv in 0..mesh.cells_per_dim[v] {
                for cu in 0..mesh.cells_per_dim[u] {
                    for plane in 0..points(&mesh, d) {
                        if on_boundary(&mesh, d, plane) {
                            constrained[face_raw(&mesh, d, plane, cu, cv)] = true;
                        }
                    }
                }
            }
        }
    }
    let (entity_global, n_dofs) = renumber(constrained);

    let n_cells = mesh.n_cells();
    let mut cell_dofs = vec![FIXED_DOF; n_cells * 6];
    for cell in 0..n_cells {
        let c = mesh.cell_coords(cell);
        for d in 0..3 {
            let (u, v) = ((d + 1) % 3, (d + 2) % 3);
            for a in 0..2 {
                let l = d * 2 + a;
                let raw = face_raw(&mesh, d, c[d] + a, c[u], c[v]);
                cell_dofs[cell * 6 + l] = entity_global[raw];
            }
        }
    }
    Ok(FeSpace {
        mesh,
        kind,
        n_dofs,
        local_dofs: 6,
        cell_dofs,
        entity_global,
    })
}

fn build_broken(mesh: Arc<StructuredHexMesh>, kind: SpaceKind, degree: usize) -> FeSpace {
    let local = if degree == 0 { 1 } else { 8 };
    let n_cells = mesh.n_cells();
    let cell_dofs = (0..n_cells * local).collect();
    FeSpace {
        mesh,
        kind,
        n_dofs: n_cells * local,
        local_dofs: local,
        cell_dofs,
        entity_global: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// Reference basis evaluation (fixed-size, allocation free).
// ---------------------------------------------------------------------------

pub fn q1_values(r: Vec3) -> [f64; 8] {
    let mut out = [0.0; 8];
    for l in 0..8 {
        let (a, b, c) = (l & 1, (l >> 1) & 1, l >> 2);
        out[l] = lambda(a, r[0]) * lambda(b, r[1]) * lambda(c, r[2]);
    }
    out
}

pub fn q1_gradients(r: Vec3, h: Vec3) -> [Vec3; 8] {
    let mut out = [[0.0; 3]; 8];
    for l in 0..8 {
        let (a, b, c) = (l & 1, (l >> 1) & 1, l >> 2);
        let (la, lb, lc) = (lambda(a, r[0]), lambda(b, r[1]), lambda(c, r[2]));
        out[l] = [
            dlambda(a) * lb * lc / h[0],
            la * dlambda(b) * lc / h[1],
            la * lb * dlambda(c) / h[2],
        ];
    }
    out
}

pub fn edge_values(r: Vec3, h: Vec3) -> [Vec3; 12] {
    let mut out = [[0.0; 3]; 12];
    for e in 0..3 {
        let (u, v) = ((e + 1) % 3, (e + 2) % 3);
        for ov in 0..2 {
            for ou in 0..2 {
                let l = e * 4 + ou + 2 * ov;
                out[l][e] = lambda(ou, r[u]) * lambda(ov, r[v]) / h[e];
            }
        }
    }
    out
}

pub fn edge_curls(r: Vec3, h: Vec3) -> [Vec3; 12] {
    let mut out = [[0.0; 3]; 12];
    for e in 0..3 {
        let (u, v) = ((e + 1) % 3, (e + 2) % 3);
        for ov in 0..2 {
            for ou in 0..2 {
                let l = e * 4 + ou + 2 * ov;
                // curl(f e_e) = -d_u f e_v + d_v f e_u
                out[l][v] = -dlambda(ou) * lambda(ov, r[v]) / (h[e] * h[u]);
                out[l][u] = lambda(ou, r[u]) * dlambda(ov) / (h[e] * h[v]);
            }
        }
    }
    out
}

pub fn rt_values(r: Vec3, h: Vec3) -> [Vec3; 6] {
    let mut out = [[0.0; 3]; 6];
    for d in 0..3 {
        let (u, v) = ((d + 1) % 3, (d + 2) % 3);
        for a in 0..2 {
            out[d * 2 + a][d] = lambda(a, r[d]) / (h[u] * h[v]);
        }
    }
    out
}

pub fn rt_divergences(h: Vec3) -> [f64; 6] {
    let vol = h[0] * h[1] * h[2];
    let mut out = [0.0; 6];
    for d in 0..3 {
        for a in 0..2 {
            out[d * 2 + a] = dlambda(a) / vol;
        }
    }
    out
}

/// The Jacobian of a lowest-order face basis function has a single nonzero
/// entry d_d psi_d; returned as (axis, value), constant over the cell.
pub fn rt_jacobian_diag(h: Vec3) -> [(usize, f64); 6] {
    let vol = h[0] * h[1] * h[2];
    let mut out = [(0usize, 0.0f64); 6];
    for d in 0..3 {
        for a in 0..2 {
            out[d * 2 + a] = (d, dlambda(a) / vol);
        }
    }
    out
}

/// Basis values (and derivatives) of a space at a reference point.
#[derive(Debug, Clone)]
pub enum BasisEval {
    Scalar {
        values: Vec<f64>,
        gradients: Vec<Vec3>,
    },
    Vector {
        values: Vec<Vec3>,
        curls: Option<Vec<Vec3>>,
        divergences: Option<Vec<f64>>,
    },
}

impl FeSpace {
    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        &self.cell_dofs[cell * self.local_dofs..(cell + 1) * self.local_dofs]
    }

    /// Evaluate all local basis functions (and the natural derivative of the
    /// family) at a reference point.  All cells of a structured mesh share
    /// the same affine geometry, so the result is cell independent.
    pub fn eval_basis(&self, _cell: usize, r: Vec3) -> BasisEval {
        let h = self.mesh.h;
        match self.kind.family {
            Family::NodalQ => BasisEval::Scalar {
                values: q1_values(r).to_vec(),
                gradients: q1_gradients(r, h).to_vec(),
            },
            Family::BrokenDg(0) => BasisEval::Scalar {
                values: vec![1.0],
                gradients: vec![[0.0; 3]],
            },
            Family::BrokenDg(_) => BasisEval::Scalar {
                values: q1_values(r).to_vec(),
                gradients: q1_gradients(r, h).to_vec(),
            },
            Family::EdgeNedelec => BasisEval::Vector {
                values: edge_values(r, h).to_vec(),
                curls: Some(edge_curls(r, h).to_vec()),
                divergences: None,
            },
            Family::FaceRaviartThomas => BasisEval::Vector {
                values: rt_values(r, h).to_vec(),
                curls: None,
                divergences: Some(rt_divergences(h).to_vec()),
            },
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self.kind.family, Family::NodalQ | Family::BrokenDg(_))
    }

    // Lattice accessors used to assemble the exact-sequence operators.
    // Indices may equal n along an axis; periodic axes wrap them.

    pub(crate) fn vertex_dof(&self, j: [usize; 3]) -> usize {
        debug_assert_eq!(self.kind.family, Family::NodalQ);
        let p = [
            points(&self.mesh, 0),
            points(&self.mesh, 1),
            points(&self.mesh, 2),
        ];
        let raw = (j[0] % p[0]) + p[0] * ((j[1] % p[1]) + p[1] * (j[2] % p[2]));
        self.entity_global[raw]
    }

    pub(crate) fn edge_dof(&self, axis: usize, i: usize, ju: usize, jv: usize) -> usize {
        debug_assert_eq!(self.kind.family, Family::EdgeNedelec);
        self.entity_global[edge_raw(&self.mesh, axis, i, ju, jv)]
    }

    pub(crate) fn face_dof(&self, axis: usize, plane: usize, cu: usize, cv: usize) -> usize {
        debug_assert_eq!(self.kind.family, Family::FaceRaviartThomas);
        self.entity_global[face_raw(&self.mesh, axis, plane, cu, cv)]
    }
}

// ---------------------------------------------------------------------------
// Mass matrices, moments and L2 projection.
// ---------------------------------------------------------------------------

/// Assembled mass matrix of the space (symmetric positive definite on the
/// retained DOFs).
pub fn mass_matrix(space: &FeSpace, rule: &QuadratureRule) -> SparseMatrix {
    let mesh = &space.mesh;
    let vol = mesh.cell_volume();
    let nl = space.local_dofs;
    let mut local = vec![0.0f64; nl * nl];

    // All cells share one local mass matrix on a uniform structured grid.
    for v in local.iter_mut() {
        *v = 0.0;
    }
    for (q, r) in rule.points.iter().enumerate() {
        let w = rule.weights[q] * vol;
        match space.eval_basis(0, *r) {
            BasisEval::Scalar { values, .. } => {
                for i in 0..nl {
                    for j in i..nl {
                        local[i * nl + j] += w * values[i] * values[j];
                    }
                }
            }
            BasisEval::Vector { values, .. } => {
                for i in 0..nl {
                    for j in i..nl {
                        local[i * nl + j] += w * crate::vec3::dot(values[i], values[j]);
                    }
                }
            }
        }
    }
    for i in 0..nl {
        for j in 0..i {
            local[i * nl + j] = local[j * nl + i];
        }
    }

    let mut triplets = Vec::with_capacity(mesh.n_cells() * nl * nl);
    for cell in 0..mesh.n_cells() {
        let dofs = space.cell_dofs(cell);
        for i in 0..nl {
            if dofs[i] == FIXED_DOF {
                continue;
            }
            for j in 0..nl {
                if dofs[j] == FIXED_DOF {
                    continue;
                }
                triplets.push((dofs[i], dofs[j], local[i * nl + j]));
            }
        }
    }
    SparseMatrix::from_triplets(space.n_dofs, space.n_dofs, triplets)
}

/// Moment vector `m_i = ∫ φ_i dx` of a scalar space.
pub fn moment_vector(space: &FeSpace, rule: &QuadratureRule) -> Vec<f64> {
    assert!(space.is_scalar());
    let mesh = &space.mesh;
    let vol = mesh.cell_volume();
    let nl = space.local_dofs;
    let mut local = vec![0.0f64; nl];
    for (q, r) in rule.points.iter().enumerate() {
        if let BasisEval::Scalar { values, .. } = space.eval_basis(0, *r) {
            for i in 0..nl {
                local[i] += rule.weights[q] * vol * values[i];
            }
        }
    }
    let mut out = vec![0.0; space.n_dofs];
    for cell in 0..mesh.n_cells() {
        let dofs = space.cell_dofs(cell);
        for i in 0..nl {
            if dofs[i] != FIXED_DOF {
                out[dofs[i]] += local[i];
            }
        }
    }
    out
}

/// L2 projection of a scalar point function onto the space.
pub fn l2_project_scalar(
    space: &FeSpace,
    mass: &SparseMatrix,
    rule: &QuadratureRule,
    cg: &CgConfig,
    f: impl Fn(Vec3) -> f64,
) -> Result<Vec<f64>> {
    let mesh = &space.mesh;
    let vol = mesh.cell_volume();
    let mut rhs = vec![0.0; space.n_dofs];
    for cell in 0..mesh.n_cells() {
        let dofs = space.cell_dofs(cell);
        for (q, r) in rule.points.iter().enumerate() {
            let x = mesh.ref_to_physical(cell, *r);
            let w = rule.weights[q] * vol * f(x);
            if let BasisEval::Scalar { values, .. } = space.eval_basis(cell, *r) {
                for i in 0..space.local_dofs {
                    if dofs[i] != FIXED_DOF {
                        rhs[dofs[i]] += w * values[i];
                    }
                }
            }
        }
    }
    cg_solve(mass, &rhs, None, cg)
}

/// L2 projection of a vector point function onto an edge or face space.
pub fn l2_project_vector(
    space: &FeSpace,
    mass: &SparseMatrix,
    rule: &QuadratureRule,
    cg: &CgConfig,
    f: impl Fn(Vec3) -> Vec3,
) -> Result<Vec<f64>> {
    let mesh = &space.mesh;
    let vol = mesh.cell_volume();
    let mut rhs = vec![0.0; space.n_dofs];
    for cell in 0..mesh.n_cells() {
        let dofs = space.cell_dofs(cell);
        for (q, r) in rule.points.iter().enumerate() {
            let x = mesh.ref_to_physical(cell, *r);
            let fx = f(x);
            let w = rule.weights[q] * vol;
            if let BasisEval::Vector { values, .. } = space.eval_basis(cell, *r) {
                for i in 0..space.local_dofs {
                    if dofs[i] != FIXED_DOF {
                        rhs[dofs[i]] += w * crate::vec3::dot(values[i], fx);
                    }
                }
            }
        }
    }
    cg_solve(mass, &rhs, None, cg)
}

/// Point evaluation of a scalar field given its coefficients.
pub fn eval_field_scalar(space: &FeSpace, coeffs: &[f64], x: Vec3) -> Result<f64> {
    assert_eq!(coeffs.len(), space.n_dofs);
    let cr = space
        .mesh
        .locate_point(x)
        .ok_or(Error::OutsideDomain { point: x })?;
    let dofs = space.cell_dofs(cr.cell);
    match space.eval_basis(cr.cell, cr.ref_coords) {
        BasisEval::Scalar { values, .. } => {
            let mut acc = 0.0;
            for (i, v) in values.iter().enumerate() {
                if dofs[i] != FIXED_DOF {
                    acc += coeffs[dofs[i]] * v;
                }
            }
            Ok(acc)
        }
        _ => unreachable!("scalar evaluation on vector space"),
    }
}

/// Point evaluation of a vector field given its coefficients.
pub fn eval_field_vector(space: &FeSpace, coeffs: &[f64], x: Vec3) -> Result<Vec3> {
    assert_eq!(coeffs.len(), space.n_dofs);
    let cr = space
        .mesh
        .locate_point(x)
        .ok_or(Error::OutsideDomain { point: x })?;
    let dofs = space.cell_dofs(cr.cell);
    match space.eval_basis(cr.cell, cr.ref_coords) {
        BasisEval::Vector { values, .. } => {
            let mut acc = [0.0; 3];
            for (i, v) in values.iter().enumerate() {
                if dofs[i] != FIXED_DOF {
                    let c = coeffs[dofs[i]];
                    acc[0] += c * v[0];
                    acc[1] += c * v[1];
                    acc[2] += c * v[2];
                }
            }
            Ok(acc)
        }
        _ => unreachable!("vector evaluation on scalar space"),
    }
}

/// Canonical interpolation onto the edge space: tangential line integrals
/// of an analytic field over every retained edge.
pub fn interpolate_edge(space: &FeSpace, f: impl Fn(Vec3) -> Vec3) -> Vec<f64> {
    assert_eq!(space.kind.family, Family::EdgeNedelec);
    let mesh = &space.mesh;
    let nodes = gauss_nodes(3);
    let weights = gauss_weights(3);
    let mut out = vec![0.0; space.n_dofs];
    for e in 0..3 {
        let (u, v) = ((e + 1) % 3, (e + 2) % 3);
        for jv in 0..points(mesh, v) {
            for ju in 0..points(mesh, u) {
                for i in 0..mesh.cells_per_dim[e] {
                    let dof = space.edge_dof(e, i, ju, jv);
                    if dof == FIXED_DOF {
                        continue;
                    }
                    let mut start = [0.0; 3];
                    start[e] = mesh.lower[e] + i as f64 * mesh.h[e];
                    start[u] = mesh.lower[u] + ju as f64 * mesh.h[u];
                    start[v] = mesh.lower[v] + jv as f64 * mesh.h[v];
                    let mut acc = 0.0;
                    for (t, w) in nodes.iter().zip(&weights) {
                        let mut x = start;
                        x[e] += t * mesh.h[e];
                        acc += w * f(x)[e] * mesh.h[e];
                    }
                    out[dof] = acc;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;
    use crate::solvers::norm_inf;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn mesh(n: usize) -> Arc<StructuredHexMesh> {
        Arc::new(build_mesh([-1.0; 3], [1.0; 3], [n; 3], [false; 3]).unwrap())
    }

    fn space(mesh: &Arc<StructuredHexMesh>, family: Family, constraint: Constraint) -> FeSpace {
        build_space(mesh.clone(), SpaceKind::new(family, 0, constraint)).unwrap()
    }

    #[test]
    fn dof_counts_2x2x2() {
        let m = mesh(2);
        assert_eq!(space(&m, Family::NodalQ, Constraint::None).n_dofs, 27);
        assert_eq!(space(&m, Family::NodalQ, Constraint::Boundary).n_dofs, 1);
        assert_eq!(space(&m, Family::EdgeNedelec, Constraint::None).n_dofs, 54);
        assert_eq!(space(&m, Family::FaceRaviartThomas, Constraint::None).n_dofs, 36);
        assert_eq!(space(&m, Family::BrokenDg(0), Constraint::None).n_dofs, 8);
        assert_eq!(space(&m, Family::BrokenDg(1), Constraint::None).n_dofs, 64);
    }

    #[test]
    fn constrained_counts() {
        let m = mesh(3);
        // Interior entities of a 3^3 grid.
        assert_eq!(space(&m, Family::NodalQ, Constraint::Boundary).n_dofs, 8);
        assert_eq!(
            space(&m, Family::EdgeNedelec, Constraint::Boundary).n_dofs,
            3 * 3 * 2 * 2
        );
        assert_eq!(
            space(&m, Family::FaceRaviartThomas, Constraint::Boundary).n_dofs,
            3 * 2 * 9
        );
    }

    #[test]
    fn unsupported_degree_rejected() {
        let m = mesh(2);
        assert!(build_space(m.clone(), SpaceKind::new(Family::NodalQ, 1, Constraint::None)).is_err());
        assert!(build_space(m, SpaceKind::new(Family::BrokenDg(2), 0, Constraint::None)).is_err());
    }

    #[test]
    fn nodal_partition_of_unity() {
        let vals = q1_values([0.3, 0.7, 0.1]);
        let sum: f64 = vals.iter().sum();
        assert!((sum - 1.0).abs() < 1e-14);
        let center = q1_values([0.5; 3]);
        for v in center {
            assert!((v - 0.125).abs() < 1e-15);
        }
        let grads = q1_gradients([0.3, 0.7, 0.1], [0.5; 3]);
        let mut g = [0.0; 3];
        for gr in grads {
            g = crate::vec3::add(g, gr);
        }
        assert!(crate::vec3::norm_inf(g) < 1e-13);
    }

    #[test]
    fn edge_dof_is_tangential_line_integral() {
        // The lowest-order edge function integrates to one along its own
        // edge and to zero along every other edge of the cell.
        let m = mesh(2);
        let h = m.h;
        let nodes = gauss_nodes(2);
        let weights = gauss_weights(2);
        for own in 0..12 {
            for other in 0..12 {
                let e = other / 4;
                let (u, v) = ((e + 1) % 3, (e + 2) % 3);
                let (ou, ov) = ((other % 4) & 1, (other % 4) >> 1);
                let mut acc = 0.0;
                for (t, w) in nodes.iter().zip(&weights) {
                    let mut r = [0.0; 3];
                    r[e] = *t;
                    r[u] = ou as f64;
                    r[v] = ov as f64;
                    let vals = edge_values(r, h);
                    acc += w * vals[own][e] * h[e];
                }
                let expect = if own == other { 1.0 } else { 0.0 };
                assert!(
                    (acc - expect).abs() < 1e-13,
                    "edge {own} against edge {other}: {acc}"
                );
            }
        }
    }

    #[test]
    fn rt_dof_is_face_flux() {
        let m = mesh(2);
        let h = m.h;
        let nodes = gauss_nodes(2);
        let weights = gauss_weights(2);
        for own in 0..6 {
            for other in 0..6 {
                let d = other / 2;
                let (u, v) = ((d + 1) % 3, (d + 2) % 3);
                let a = other % 2;
                let mut acc = 0.0;
                for (tu, wu) in nodes.iter().zip(&weights) {
                    for (tv, wv) in nodes.iter().zip(&weights) {
                        let mut r = [0.0; 3];
                        r[d] = a as f64;
                        r[u] = *tu;
                        r[v] = *tv;
                        let vals = rt_values(r, h);
                        acc += wu * wv * vals[own][d] * h[u] * h[v];
                    }
                }
                let expect = if own == other { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn mass_matrix_spd_and_row_sums() {
        let m = mesh(2);
        let rule = QuadratureRule::tensor_cube(3);
        let q = space(&m, Family::NodalQ, Constraint::None);
        let mass = mass_matrix(&q, &rule);
        assert!(mass.is_symmetric(1e-14));
        // Row sums of the nodal mass matrix total the domain volume.
        let ones = vec![1.0; q.n_dofs];
        let row_sums = mass.matvec(&ones);
        let total: f64 = row_sums.iter().sum();
        assert!((total - 8.0).abs() < 1e-12);
        // x^T M x > 0 for random nonzero x.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: Vec<f64> = (0..q.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let quad = crate::solvers::dot(&x, &mass.matvec(&x));
            assert!(quad > 0.0);
        }
    }

    #[test]
    fn single_cell_dg_mass_is_volume() {
        let m = Arc::new(build_mesh([0.0; 3], [1.0; 3], [1, 1, 1], [false; 3]).unwrap());
        let dg = space(&m, Family::BrokenDg(0), Constraint::None);
        let mass = mass_matrix(&dg, &QuadratureRule::tensor_cube(3));
        assert_eq!(mass.nrows(), 1);
        let (_, vals) = mass.row(0);
        assert!((vals[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn projection_reproduces_constants_and_is_idempotent() {
        let m = mesh(3);
        let rule = QuadratureRule::tensor_cube(3);
        let cg = CgConfig::default();
        let q = space(&m, Family::NodalQ, Constraint::None);
        let mass = mass_matrix(&q, &rule);
        let coeffs = l2_project_scalar(&q, &mass, &rule, &cg, |_| 2.5).unwrap();
        for c in &coeffs {
            assert!((c - 2.5).abs() < 1e-10);
        }
        // Projecting a member of the space returns it.
        let f = |x: Vec3| 0.25 * (x[0] - 0.5) + 1.0 - 0.5 * x[1] * x[2];
        let first = l2_project_scalar(&q, &mass, &rule, &cg, f).unwrap();
        let second = l2_project_scalar(&q, &mass, &rule, &cg, |x| {
            eval_field_scalar(&q, &first, x).unwrap()
        })
        .unwrap();
        let diff: Vec<f64> = first.iter().zip(&second).map(|(a, b)| a - b).collect();
        assert!(norm_inf(&diff) < 1e-9);
    }

    #[test]
    fn projection_rate_second_order() {
        let rule = QuadratureRule::tensor_cube(3);
        let cg = CgConfig::default();
        let mut errs = Vec::new();
        for n in [4usize, 8] {
            let m = mesh(n);
            let q = space(&m, Family::NodalQ, Constraint::None);
            let mass = mass_matrix(&q, &rule);
            let f = |x: Vec3| (PI * x[0]).sin();
            let coeffs = l2_project_scalar(&q, &mass, &rule, &cg, f).unwrap();
            // L2 error by quadrature.
            let mut err2 = 0.0;
            for cell in 0..m.n_cells() {
                for (qi, r) in rule.points.iter().enumerate() {
                    let x = m.ref_to_physical(cell, *r);
                    let dofs = q.cell_dofs(cell);
                    let vals = q1_values(*r);
                    let mut fh = 0.0;
                    for i in 0..8 {
                        fh += coeffs[dofs[i]] * vals[i];
                    }
                    err2 += rule.weights[qi] * m.cell_volume() * (fh - f(x)).powi(2);
                }
            }
            errs.push(err2.sqrt());
        }
        let ratio = errs[0] / errs[1];
        assert!(
            (3.0..5.0).contains(&ratio),
            "projection error ratio {ratio} not ~4"
        );
    }

    #[test]
    fn zero_coefficients_evaluate_to_zero() {
        let m = mesh(2);
        let ne = space(&m, Family::EdgeNedelec, Constraint::None);
        let coeffs = vec![0.0; ne.n_dofs];
        let v = eval_field_vector(&ne, &coeffs, [0.1, 0.2, 0.3]).unwrap();
        assert_eq!(v, [0.0; 3]);
        assert!(eval_field_vector(&ne, &coeffs, [5.0, 0.0, 0.0]).is_err());
    }

    /// Tangential traces of an edge field agree from both sides of every
    /// interior face; normal traces of a face field agree likewise.
    #[test]
    fn conformity_across_faces() {
        let m = mesh(3);
        let ne = space(&m, Family::EdgeNedelec, Constraint::None);
        let rt = space(&m, Family::FaceRaviartThomas, Constraint::None);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e_coeffs: Vec<f64> = (0..ne.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b_coeffs: Vec<f64> = (0..rt.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();

        for face in m.interior_faces().iter().take(40) {
            let d = face.axis;
            let (u, v) = ((d + 1) % 3, (d + 2) % 3);
            for _ in 0..3 {
                let mut r1 = [0.0; 3];
                r1[d] = 1.0;
                r1[u] = rng.gen_range(0.05..0.95);
                r1[v] = rng.gen_range(0.05..0.95);
                let mut r2 = r1;
                r2[d] = 0.0;

                let eval = |space: &FeSpace, coeffs: &[f64], cell: usize, r: Vec3| {
                    let dofs = space.cell_dofs(cell);
                    match space.eval_basis(cell, r) {
                        BasisEval::Vector { values, .. } => {
                            let mut acc = [0.0; 3];
                            for i in 0..space.local_dofs {
                                if dofs[i] != FIXED_DOF {
                                    let c = coeffs[dofs[i]];
                                    for k in 0..3 {
                                        acc[k] += c * values[i][k];
                                    }
                                }
                            }
                            acc
                        }
                        _ => unreachable!(),
                    }
                };

                let e1 = eval(&ne, &e_coeffs, face.side1, r1);
                let e2 = eval(&ne, &e_coeffs, face.side2, r2);
                // Tangential components (u, v) continuous for the edge family.
                assert!((e1[u] - e2[u]).abs() < 1e-12);
                assert!((e1[v] - e2[v]).abs() < 1e-12);

                let b1 = eval(&rt, &b_coeffs, face.side1, r1);
                let b2 = eval(&rt, &b_coeffs, face.side2, r2);
                // Normal component continuous for the face family.
                assert!((b1[d] - b2[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normal_component_constraint_masks_single_axis() {
        let m = mesh(2);
        let sx = space(&m, Family::NodalQ, Constraint::NormalComponent(0));
        // 3^3 lattice minus the two x-boundary planes: 1*3*3 interior planes.
        assert_eq!(sx.n_dofs, 9);
    }
}
