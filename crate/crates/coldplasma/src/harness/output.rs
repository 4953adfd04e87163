//! File output: diagnostics CSV, raw coefficient dumps (exact restart) and
//! columnar particle dumps.

use std::fmt::Write as _;
use std::path::Path;

use crate::diagnostics::ConservationReport;
use crate::error::{Error, Result};
use crate::particles::ParticleSet;

/// Diagnostics CSV with one row per emitted step, full double precision.
pub fn csv_string(reports: &[ConservationReport]) -> String {
    let mut out = String::from("t,mass_rel_err,energy_rel_err,gauss_inf,divB_L2,removed_mass\n");
    for r in reports {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.time, r.mass_rel_err, r.energy_rel_err, r.gauss_residual_inf, r.div_b_l2,
            r.removed_weight
        )
        .unwrap();
    }
    out
}

pub fn write_csv(path: &Path, reports: &[ConservationReport]) -> Result<()> {
    std::fs::write(path, csv_string(reports))?;
    Ok(())
}

/// Text coefficient dump: named blocks of full-precision values, one per
/// line.  Round-trips exactly through the shortest-representation float
/// formatting.
pub fn write_coeff_dump(path: &Path, fields: &[(&str, &[f64])]) -> Result<()> {
    let mut out = String::new();
    for (name, coeffs) in fields {
        writeln!(out, "field {} {}", name, coeffs.len()).unwrap();
        for v in *coeffs {
            // Shortest round-trip representation.
            writeln!(out, "{v}").unwrap();
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_coeff_dump(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let mut out = Vec::new();
    while let Some(header) = lines.next() {
        if header.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "field" {
            return Err(Error::Parse(format!("bad dump header: {header:?}")));
        }
        let name = parts[1].to_string();
        let len: usize = parts[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad length in {header:?}")))?;
        let mut coeffs = Vec::with_capacity(len);
        for _ in 0..len {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("truncated block {name}")))?;
            coeffs.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad value {line:?}")))?,
            );
        }
        out.push((name, coeffs));
    }
    Ok(out)
}

/// Columnar particle dump: id, position, momentum, weight.
pub fn write_particle_dump(path: &Path, set: &ParticleSet) -> Result<()> {
    let mut out = String::from("id,x,y,z,ux,uy,uz,w\n");
    for p in 0..set.len() {
        if !set.active[p] {
            continue;
        }
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            p,
            set.x[p][0],
            set.x[p][1],
            set.x[p][2],
            set.u[p][0],
            set.u[p][1],
            set.u[p][2],
            set.weight[p]
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a particle dump back (mass and charge are not stored in the file).
pub fn read_particle_dump(path: &Path, mass: f64, charge: f64) -> Result<ParticleSet> {
    let text = std::fs::read_to_string(path)?;
    let mut set = ParticleSet::empty(mass, charge);
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "id,x,y,z,ux,uy,uz,w" {
                return Err(Error::Parse(format!("bad particle header {line:?}")));
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(Error::Parse(format!("bad particle row {line:?}")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number {s:?}")))
        };
        set.x.push([parse(cols[1])?, parse(cols[2])?, parse(cols[3])?]);
        set.u.push([parse(cols[4])?, parse(cols[5])?, parse(cols[6])?]);
        set.weight.push(parse(cols[7])?);
        set.active.push(true);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_precision() {
        let r = ConservationReport {
            time: 0.125,
            total_mass: 8.0,
            total_energy: 1.0,
            gauss_residual_inf: 3.5e-13,
            div_b_l2: 0.0,
            mass_rel_err: -1.0e-15,
            energy_rel_err: 2.0e-12,
            removed_weight: 0.0,
        };
        let text = csv_string(&[r]);
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,mass_rel_err,energy_rel_err,gauss_inf,divB_L2,removed_mass"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("1.2500000000000000e-1,"));
        assert_eq!(row.split(',').count(), 6);
    }

    #[test]
    fn coeff_dump_round_trip() {
        let dir = std::env::temp_dir().join("coldplasma_dump_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.dump");
        let a = vec![1.0, -0.25, 3.333333333333333e-7, f64::MIN_POSITIVE];
        let b = vec![0.1 + 0.2];
        write_coeff_dump(&path, &[("e", &a), ("rho", &b)]).unwrap();
        let back = read_coeff_dump(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "e");
        assert_eq!(back[0].1, a);
        assert_eq!(back[1].1, b);
        std::fs::remove_dir_all(&dir).ok();
    }
}
