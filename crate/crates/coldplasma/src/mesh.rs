//! Structured axis-aligned hexahedral meshes.
//!
//! Cells are numbered lexicographically (`x` fastest).  Every interior face
//! carries the +axis direction as its designated normal; `side1` is the cell
//! the normal points away from.  Periodic directions identify the first and
//! last plane of faces, vertices, edges and faces of the lattice.

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Tolerance (in parameter space) below which segment/face crossings are
/// merged or snapped to the segment endpoints.
const CROSSING_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    /// Normal axis (0, 1 or 2); the designated normal is the +axis vector.
    pub axis: usize,
    /// Cell on the negative side of the face (the normal points out of it).
    pub side1: usize,
    /// Cell on the positive side.
    pub side2: usize,
}

/// A located point: owning cell plus reference coordinates in [0,1]^3.
#[derive(Debug, Clone, Copy)]
pub struct CellRef {
    pub cell: usize,
    pub ref_coords: Vec3,
}

#[derive(Debug)]
pub struct StructuredHexMesh {
    pub lower: Vec3,
    pub upper: Vec3,
    pub cells_per_dim: [usize; 3],
    pub periodic: [bool; 3],
    pub h: Vec3,
    faces: Vec<Face>,
}

/// Builds a structured mesh; rejects degenerate extents or empty cell counts.
pub fn build_mesh(
    lower: Vec3,
    upper: Vec3,
    n_cells: [usize; 3],
    periodic: [bool; 3],
) -> Result<StructuredHexMesh> {
    for d in 0..3 {
        if !(upper[d] > lower[d]) {
            return Err(Error::InvalidMesh(format!(
                "upper corner must exceed lower corner (axis {d}: {} vs {})",
                upper[d], lower[d]
            )));
        }
        if n_cells[d] == 0 {
            return Err(Error::InvalidMesh(format!("zero cells along axis {d}")));
        }
    }
    let h = [
        (upper[0] - lower[0]) / n_cells[0] as f64,
        (upper[1] - lower[1]) / n_cells[1] as f64,
        (upper[2] - lower[2]) / n_cells[2] as f64,
    ];
    let mut mesh = StructuredHexMesh {
        lower,
        upper,
        cells_per_dim: n_cells,
        periodic,
        h,
        faces: Vec::new(),
    };
    mesh.faces = mesh.enumerate_interior_faces();
    Ok(mesh)
}

impl StructuredHexMesh {
    pub fn n_cells(&self) -> usize {
        self.cells_per_dim[0] * self.cells_per_dim[1] * self.cells_per_dim[2]
    }

    pub fn cell_volume(&self) -> f64 {
        self.h[0] * self.h[1] * self.h[2]
    }

    pub fn domain_volume(&self) -> f64 {
        (self.upper[0] - self.lower[0])
            * (self.upper[1] - self.lower[1])
            * (self.upper[2] - self.lower[2])
    }

    pub fn cell_index(&self, ijk: [usize; 3]) -> usize {
        let n = self.cells_per_dim;
        ijk[0] + n[0] * (ijk[1] + n[1] * ijk[2])
    }

    pub fn cell_coords(&self, cell: usize) -> [usize; 3] {
        let n = self.cells_per_dim;
        [cell % n[0], (cell / n[0]) % n[1], cell / (n[0] * n[1])]
    }

    /// Physical coordinates of the cell's lower corner.
    pub fn cell_origin(&self, cell: usize) -> Vec3 {
        let ijk = self.cell_coords(cell);
        [
            self.lower[0] + ijk[0] as f64 * self.h[0],
            self.lower[1] + ijk[1] as f64 * self.h[1],
            self.lower[2] + ijk[2] as f64 * self.h[2],
        ]
    }

    /// Map reference coordinates in a cell to physical coordinates.
    pub fn ref_to_physical(&self, cell: usize, r: Vec3) -> Vec3 {
        let o = self.cell_origin(cell);
        [
            o[0] + r[0] * self.h[0],
            o[1] + r[1] * self.h[1],
            o[2] + r[2] * self.h[2],
        ]
    }

    pub fn interior_faces(&self) -> &[Face] {
        &self.faces
    }

    fn enumerate_interior_faces(&self) -> Vec<Face> {
        let n = self.cells_per_dim;
        let mut faces = Vec::new();
        for axis in 0..3 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            for plane in 1..=n[axis] {
                // Plane n[axis] exists only under periodic identification.
                if plane == n[axis] && !self.periodic[axis] {
                    continue;
                }
                for cv in 0..n[v] {
                    for cu in 0..n[u] {
                        let mut lo = [0usize; 3];
                        lo[axis] = plane - 1;
                        lo[u] = cu;
                        lo[v] = cv;
                        let mut hi = lo;
                        hi[axis] = plane % n[axis];
                        faces.push(Face {
                            axis,
                            side1: self.cell_index(lo),
                            side2: self.cell_index(hi),
                        });
                    }
                }
            }
        }
        faces
    }

    /// Wrap a point into the fundamental domain along periodic axes.
    pub fn wrap_point(&self, x: Vec3) -> Vec3 {
        let mut out = x;
        for d in 0..3 {
            if self.periodic[d] {
                let len = self.upper[d] - self.lower[d];
                out[d] = self.lower[d] + (x[d] - self.lower[d]).rem_euclid(len);
            }
        }
        out
    }

    /// True when the (wrapped) point lies inside the closed domain.
    pub fn contains(&self, x: Vec3) -> bool {
        let x = self.wrap_point(x);
        (0..3).all(|d| x[d] >= self.lower[d] && x[d] <= self.upper[d])
    }

    /// Locate a point.  Points exactly on a shared face resolve to the cell
    /// with the lower linear index (reference coordinate 1 along that axis).
    /// Returns `None` for points outside a non-periodic domain.
    pub fn locate_point(&self, x: Vec3) -> Option<CellRef> {
        let x = self.wrap_point(x);
        let mut ijk = [0usize; 3];
        let mut r = [0.0f64; 3];
        for d in 0..3 {
            let s = (x[d] - self.lower[d]) / self.h[d];
            if s < 0.0 {
                return None;
            }
            let n = self.cells_per_dim[d];
            let mut i = s.floor();
            let mut frac = s - i;
            // Tie rule: exact face hits belong to the lower cell.
            if frac == 0.0 && i > 0.0 {
                i -= 1.0;
                frac = 1.0;
            }
            let i = i as usize;
            if i >= n {
                return None;
            }
            ijk[d] = i;
            r[d] = frac;
        }
        Some(CellRef {
            cell: self.cell_index(ijk),
            ref_coords: r,
        })
    }

    /// Split the straight segment `[a, b]` at every lattice plane it
    /// crosses.  The result starts exactly at `a` and ends exactly at `b`;
    /// consecutive points lie in the closure of a single cell.  The inputs
    /// may live in the periodic covering space (the lattice planes extend
    /// periodically); `a == b` yields the degenerate two-point list.
    pub fn segment_crossings(&self, a: Vec3, b: Vec3) -> Vec<Vec3> {
        let mut ts: Vec<f64> = Vec::new();
        for d in 0..3 {
            let sa = (a[d] - self.lower[d]) / self.h[d];
            let sb = (b[d] - self.lower[d]) / self.h[d];
            if sa == sb {
                continue;
            }
            let (lo, hi) = if sa < sb { (sa, sb) } else { (sb, sa) };
            let first = lo.ceil() as i64;
            let last = hi.floor() as i64;
            for m in first..=last {
                let t = (m as f64 - sa) / (sb - sa);
                if t > CROSSING_TOL && t < 1.0 - CROSSING_TOL {
                    ts.push(t);
                }
            }
        }
        ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ts.dedup_by(|x, y| (*x - *y).abs() < CROSSING_TOL);

        let mut points = Vec::with_capacity(ts.len() + 2);
        points.push(a);
        for &t in &ts {
            points.push([
                a[0] + t * (b[0] - a[0]),
                a[1] + t * (b[1] - a[1]),
                a[2] + t * (b[2] - a[2]),
            ]);
        }
        points.push(b);
        points
    }
}
