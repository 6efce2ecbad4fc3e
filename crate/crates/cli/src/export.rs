//! Output files: density images, VTK volumes and convergence histories.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use egp_core::{ConvergenceRecord, DensityField, GridSpec, IterationRecord};
use thiserror::Error;

pub const CSV_HEADER: &str =
    "iter,objective,volume_fraction,max_change,clip_threshold,active_set_size,alg1_expansions,update_ms,fea_ms";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("density image needs a 2D field, got {nx}x{ny}x{nz} (write a VTK volume instead)")]
    NotPlanar { nx: usize, ny: usize, nz: usize },
    #[error("VTK volume needs a 3D field, got {nx}x{ny}")]
    NotVolume { nx: usize, ny: usize },
    #[error("convergence record is empty")]
    EmptyRecord,
    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Binary graymap, one pixel per element, black at density 1, top row first.
pub fn density_image(x: &DensityField) -> Result<Vec<u8>, ExportError> {
    let g = x.grid();
    if g.is_3d() {
        return Err(ExportError::NotPlanar {
            nx: g.nx,
            ny: g.ny,
            nz: g.nz,
        });
    }
    let mut out = format!("P5\n{} {}\n255\n", g.nx, g.ny).into_bytes();
    let v = x.values();
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let d = v[g.element_id(ix, iy, 0)].clamp(0.0, 1.0);
            out.push((255.0 * (1.0 - d)).round() as u8);
        }
    }
    Ok(out)
}

pub fn export_density_image(x: &DensityField, path: &Path) -> Result<(), ExportError> {
    fs::write(path, density_image(x)?)?;
    Ok(())
}

/// Legacy ASCII structured points with one density per cell. Grid row 0 is
/// the top of the domain, so rows are flipped to make `+y` point up.
pub fn vtk_volume(x: &DensityField) -> Result<String, ExportError> {
    let g = x.grid();
    if !g.is_3d() {
        return Err(ExportError::NotVolume { nx: g.nx, ny: g.ny });
    }
    let mut s = String::new();
    let _ = write!(
        s,
        "# vtk DataFile Version 3.0\ndensity\nASCII\nDATASET STRUCTURED_POINTS\n\
         DIMENSIONS {} {} {}\nORIGIN 0 0 0\nSPACING 1 1 1\nCELL_DATA {}\n\
         SCALARS density double 1\nLOOKUP_TABLE default\n",
        g.nx + 1,
        g.ny + 1,
        g.nz + 1,
        g.n_elements()
    );
    let v = x.values();
    for iz in 0..g.nz {
        for j in 0..g.ny {
            for ix in 0..g.nx {
                let _ = writeln!(s, "{}", v[g.element_id(ix, g.ny - 1 - j, iz)]);
            }
        }
    }
    Ok(s)
}

pub fn export_vtk(x: &DensityField, path: &Path) -> Result<(), ExportError> {
    fs::write(path, vtk_volume(x)?)?;
    Ok(())
}

/// Reads back the grid and cell densities written by [`vtk_volume`], in
/// element order.
pub fn parse_vtk_volume(text: &str) -> Result<(GridSpec, Vec<f64>), ExportError> {
    let err = |detail: &str| ExportError::Parse {
        what: "VTK volume",
        detail: detail.to_string(),
    };
    let mut lines = text.lines();
    let dims: Vec<usize> = lines
        .by_ref()
        .find_map(|l| l.strip_prefix("DIMENSIONS "))
        .ok_or_else(|| err("no DIMENSIONS"))?
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| err(&e.to_string())))
        .collect::<Result<_, _>>()?;
    if dims.len() != 3 || dims.iter().any(|&d| d < 2) {
        return Err(err("bad DIMENSIONS"));
    }
    let grid = GridSpec::new_3d(dims[0] - 1, dims[1] - 1, dims[2] - 1).map_err(|e| err(&e.to_string()))?;
    lines
        .by_ref()
        .find(|l| l.starts_with("LOOKUP_TABLE"))
        .ok_or_else(|| err("no LOOKUP_TABLE"))?;
    let cells: Vec<f64> = lines
        .flat_map(str::split_whitespace)
        .map(|t| t.parse::<f64>().map_err(|e| err(&e.to_string())))
        .collect::<Result<_, _>>()?;
    if cells.len() != grid.n_elements() {
        return Err(err("cell count does not match DIMENSIONS"));
    }
    let mut values = vec![0.0; cells.len()];
    let mut k = 0;
    for iz in 0..grid.nz {
        for j in 0..grid.ny {
            for ix in 0..grid.nx {
                values[grid.element_id(ix, grid.ny - 1 - j, iz)] = cells[k];
                k += 1;
            }
        }
    }
    Ok((grid, values))
}

/// Convergence history as CSV. Numbers use the shortest representation that
/// parses back to the same `f64`. Timing columns are written as zero unless
/// `timings` is set, so that repeated runs give identical files.
pub fn convergence_csv(record: &ConvergenceRecord, timings: bool) -> Result<String, ExportError> {
    if record.is_empty() {
        return Err(ExportError::EmptyRecord);
    }
    let mut s = String::with_capacity(64 * (record.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in record.rows() {
        let (upd, fea) = if timings { (r.update_ms, r.fea_ms) } else { (0.0, 0.0) };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.iter,
            r.objective,
            r.volume_fraction,
            r.max_change,
            r.clip_threshold,
            r.active_set_size,
            r.alg1_expansions,
            upd,
            fea
        );
    }
    Ok(s)
}

pub fn write_convergence_csv(record: &ConvergenceRecord, path: &Path, timings: bool) -> Result<(), ExportError> {
    fs::write(path, convergence_csv(record, timings)?)?;
    Ok(())
}

pub fn parse_convergence_csv(text: &str) -> Result<Vec<IterationRecord>, ExportError> {
    let err = |detail: String| ExportError::Parse {
        what: "convergence CSV",
        detail,
    };
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(err("unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(err(format!("row {}: {} fields", i + 1, f.len())));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|e| err(format!("row {}: {e}", i + 1)));
            let int = |k: usize| f[k].parse::<usize>().map_err(|e| err(format!("row {}: {e}", i + 1)));
            Ok(IterationRecord {
                iter: int(0)?,
                objective: num(1)?,
                volume_fraction: num(2)?,
                max_change: num(3)?,
                clip_threshold: num(4)?,
                active_set_size: int(5)?,
                alg1_expansions: int(6)?,
                update_ms: num(7)?,
                fea_ms: num(8)?,
            })
        })
        .collect()
}
