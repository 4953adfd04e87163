//! Discrete exact-sequence operators between the compatible spaces.
//!
//! `G` maps nodal coefficients to the edge coefficients of the gradient,
//! `C` maps edge coefficients to the face coefficients of the curl, and
//! `D` maps face coefficients to elementwise divergences (degree-0 broken
//! space).  With canonical DOFs all entries are incidence integers (scaled
//! by 1/volume for `D`), so `C·G = 0` and `D·C = 0` hold exactly.
//!
//! The weak divergence and weak gradient are the mass-matrix adjoints of
//! `G` and `D`.

use crate::error::{Error, Result};
use crate::fespace::{FeSpace, Family, FIXED_DOF};
use crate::solvers::{cg_solve, CgConfig, SparseMatrix};

#[derive(Debug)]
pub struct SequenceOperators {
    /// Gradient: constrained nodal -> constrained edge.
    pub grad: SparseMatrix,
    /// Curl: constrained edge -> constrained face.
    pub curl: SparseMatrix,
    /// Divergence: constrained face -> broken degree 0.
    pub div: SparseMatrix,
}

fn points(mesh: &crate::mesh::StructuredHexMesh, d: usize) -> usize {
    if mesh.periodic[d] {
        mesh.cells_per_dim[d]
    } else {
        mesh.cells_per_dim[d] + 1
    }
}

/// Build the three operators.  The spaces must live on the same mesh, with
/// the nodal/edge/face spaces boundary-constrained.
pub fn build_sequence(
    nodal: &FeSpace,
    edge: &FeSpace,
    face: &FeSpace,
    broken: &FeSpace,
) -> Result<SequenceOperators> {
    if nodal.kind.family != Family::NodalQ
        || edge.kind.family != Family::EdgeNedelec
        || face.kind.family != Family::FaceRaviartThomas
        || broken.kind.family != Family::BrokenDg(0)
    {
        return Err(Error::SpaceMismatch(
            "sequence requires nodal, edge, face and degree-0 broken spaces".into(),
        ));
    }
    let mesh = &nodal.mesh;
    for other in [&edge.mesh, &face.mesh, &broken.mesh] {
        if !std::ptr::eq(mesh.as_ref(), other.as_ref()) {
            return Err(Error::SpaceMismatch(
                "sequence spaces must share one mesh".into(),
            ));
        }
    }

    // Gradient: edge coefficient of grad(phi) is phi(head) - phi(tail).
    let mut g_triplets = Vec::new();
    for e in 0..3 {
        let (u, v) = ((e + 1) % 3, (e + 2) % 3);
        for jv in 0..points(mesh, v) {
            for ju in 0..points(mesh, u) {
                for i in 0..mesh.cells_per_dim[e] {
                    let row = edge.edge_dof(e, i, ju, jv);
                    if row == FIXED_DOF {
                        continue;
                    }
                    let mut tail = [0usize; 3];
                    tail[e] = i;
                    tail[u] = ju;
                    tail[v] = jv;
                    let mut head = tail;
                    head[e] = i + 1;
                    let tail_dof = nodal.vertex_dof(tail);
                    let head_dof = nodal.vertex_dof(head);
                    if tail_dof != FIXED_DOF {
                        g_triplets.push((row, tail_dof, -1.0));
                    }
                    if head_dof != FIXED_DOF {
                        g_triplets.push((row, head_dof, 1.0));
                    }
                }
            }
        }
    }
    let grad = SparseMatrix::from_triplets(edge.n_dofs, nodal.n_dofs, g_triplets);

    // Curl: face coefficient of curl(E) is the circulation around the face
    // boundary, oriented by the +axis normal: +u edge at v_lo, +v edge at
    // u_hi, -u edge at v_hi, -v edge at u_lo.
    let mut c_triplets = Vec::new();
    for d in 0..3 {
        let (u, v) = ((d + 1) % 3, (d + 2) % 3);
        for cv in 0..mesh.cells_per_dim[v] {
            for cu in 0..mesh.cells_per_dim[u] {
                for plane in 0..points(mesh, d) {
                    let row = face.face_dof(d, plane, cu, cv);
                    if row == FIXED_DOF {
                        continue;
                    }
                    // Edge axis u: along-index cu; transverse (v, d) in the
                    // cyclic frame of u, i.e. (u+1)%3 == v, (u+2)%3 == d.
                    let e1 = edge.edge_dof(u, cu, cv, plane);
                    let e2 = edge.edge_dof(u, cu, cv + 1, plane);
                    // Edge axis v: along-index cv; transverse (d, u).
                    let e3 = edge.edge_dof(v, cv, plane, cu + 1);
                    let e4 = edge.edge_dof(v, cv, plane, cu);
                    for (dof, sign) in [(e1, 1.0), (e2, -1.0), (e3, 1.0), (e4, -1.0)] {
                        if dof != FIXED_DOF {
                            c_triplets.push((row, dof, sign));
                        }
                    }
                }
            }
        }
    }
    let curl = SparseMatrix::from_triplets(face.n_dofs, edge.n_dofs, c_triplets);

    // Divergence: cell value of div(B) is the signed flux sum over the six
    // cell faces divided by the volume.
    let inv_vol = 1.0 / mesh.cell_volume();
    let mut d_triplets = Vec::new();
    for cell in 0..mesh.n_cells() {
        let c = mesh.cell_coords(cell);
        for d in 0..3 {
            let (u, v) = ((d + 1) % 3, (d + 2) % 3);
            let lo = face.face_dof(d, c[d], c[u], c[v]);
            let hi = face.face_dof(d, c[d] + 1, c[u], c[v]);
            if lo != FIXED_DOF {
                d_triplets.push((cell, lo, -inv_vol));
            }
            if hi != FIXED_DOF {
                d_triplets.push((cell, hi, inv_vol));
            }
        }
    }
    let div = SparseMatrix::from_triplets(broken.n_dofs, face.n_dofs, d_triplets);

    Ok(SequenceOperators { grad, curl, div })
}

/// Weak divergence of an edge field: solves
/// `M_Q x = -G^T M_N e` so that `∫ x φ = -∫ e · ∇φ` for every constrained
/// nodal test function.
pub fn weak_divergence(
    seq: &SequenceOperators,
    nodal_mass: &SparseMatrix,
    edge_mass: &SparseMatrix,
    e: &[f64],
    cfg: &CgConfig,
) -> Result<Vec<f64>> {
    let rhs: Vec<f64> = seq
        .grad
        .matvec_transpose(&edge_mass.matvec(e))
        .iter()
        .map(|v| -v)
        .collect();
    cg_solve(nodal_mass, &rhs, None, cfg)
}

/// Weak gradient of a broken degree-0 field: solves
/// `M_RT y = -D^T M_DG q` so that `∫ y · B = -∫ q ∇·B` for every
/// constrained face test function.
pub fn weak_gradient(
    seq: &SequenceOperators,
    face_mass: &SparseMatrix,
    broken_mass: &SparseMatrix,
    q: &[f64],
    cfg: &CgConfig,
) -> Result<Vec<f64>> {
    let rhs: Vec<f64> = seq
        .div
        .matvec_transpose(&broken_mass.matvec(q))
        .iter()
        .map(|v| -v)
        .collect();
    cg_solve(face_mass, &rhs, None, cfg)
}
