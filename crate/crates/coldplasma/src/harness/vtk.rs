//! Legacy ASCII VTK output (unstructured hexahedral grid, cell data) and a
//! minimal reader used to round-trip test the writer.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::StructuredHexMesh;
use crate::vec3::Vec3;

pub enum CellData {
    Scalar(Vec<f64>),
    Vector(Vec<Vec3>),
}

/// Write cell-centered fields on the structured mesh as a legacy ASCII VTK
/// unstructured grid of hexahedra.
pub fn write_vtk(
    path: &Path,
    mesh: &StructuredHexMesh,
    title: &str,
    data: &[(&str, CellData)],
) -> Result<()> {
    let n = mesh.cells_per_dim;
    let np = [n[0] + 1, n[1] + 1, n[2] + 1];
    let n_points = np[0] * np[1] * np[2];
    let n_cells = mesh.n_cells();

    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    writeln!(out, "{title}").unwrap();
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");

    writeln!(out, "POINTS {n_points} double").unwrap();
    for k in 0..np[2] {
        for j in 0..np[1] {
            for i in 0..np[0] {
                writeln!(
                    out,
                    "{} {} {}",
                    mesh.lower[0] + i as f64 * mesh.h[0],
                    mesh.lower[1] + j as f64 * mesh.h[1],
                    mesh.lower[2] + k as f64 * mesh.h[2],
                )
                .unwrap();
            }
        }
    }

    let pid = |i: usize, j: usize, k: usize| i + np[0] * (j + np[1] * k);
    writeln!(out, "CELLS {} {}", n_cells, 9 * n_cells).unwrap();
    for cell in 0..n_cells {
        let c = mesh.cell_coords(cell);
        writeln!(
            out,
            "8 {} {} {} {} {} {} {} {}",
            pid(c[0], c[1], c[2]),
            pid(c[0] + 1, c[1], c[2]),
            pid(c[0] + 1, c[1] + 1, c[2]),
            pid(c[0], c[1] + 1, c[2]),
            pid(c[0], c[1], c[2] + 1),
            pid(c[0] + 1, c[1], c[2] + 1),
            pid(c[0] + 1, c[1] + 1, c[2] + 1),
            pid(c[0], c[1] + 1, c[2] + 1),
        )
        .unwrap();
    }
    writeln!(out, "CELL_TYPES {n_cells}").unwrap();
    for _ in 0..n_cells {
        out.push_str("12\n");
    }

    writeln!(out, "CELL_DATA {n_cells}").unwrap();
    for (name, field) in data {
        match field {
            CellData::Scalar(values) => {
                assert_eq!(values.len(), n_cells);
                writeln!(out, "SCALARS {name} double 1").unwrap();
                out.push_str("LOOKUP_TABLE default\n");
                for v in values {
                    writeln!(out, "{v}").unwrap();
                }
            }
            CellData::Vector(values) => {
                assert_eq!(values.len(), n_cells);
                writeln!(out, "VECTORS {name} double").unwrap();
                for v in values {
                    writeln!(out, "{} {} {}", v[0], v[1], v[2]).unwrap();
                }
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Minimal legacy-VTK reader: returns the cell data arrays (vectors are
/// flattened to three scalars per cell in order).
pub fn read_vtk_cell_data(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().peekable();
    let mut n_cells = 0usize;
    let mut out = HashMap::new();
    while let Some(line) = lines.next() {
        let mut words = line.split_whitespace();
        match words.next() {
            Some("CELL_DATA") => {
                n_cells = words
                    .next()
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| Error::Parse("bad CELL_DATA header".into()))?;
            }
            Some("SCALARS") if n_cells > 0 => {
                let name = words
                    .next()
                    .ok_or_else(|| Error::Parse("unnamed SCALARS".into()))?
                    .to_string();
                // Skip the lookup table line.
                lines.next();
                let mut values = Vec::with_capacity(n_cells);
                while values.len() < n_cells {
                    let row = lines
                        .next()
                        .ok_or_else(|| Error::Parse("truncated SCALARS".into()))?;
                    for w in row.split_whitespace() {
                        values.push(
                            w.parse::<f64>()
                                .map_err(|_| Error::Parse(format!("bad value {w:?}")))?,
                        );
                    }
                }
                out.insert(name, values);
            }
            Some("VECTORS") if n_cells > 0 => {
                let name = words
                    .next()
                    .ok_or_else(|| Error::Parse("unnamed VECTORS".into()))?
                    .to_string();
                let mut values = Vec::with_capacity(3 * n_cells);
                while values.len() < 3 * n_cells {
                    let row = lines
                        .next()
                        .ok_or_else(|| Error::Parse("truncated VECTORS".into()))?;
                    for w in row.split_whitespace() {
                        values.push(
                            w.parse::<f64>()
                                .map_err(|_| Error::Parse(format!("bad value {w:?}")))?,
                        );
                    }
                }
                out.insert(name, values);
            }
            _ => {}
        }
    }
    Ok(out)
}
