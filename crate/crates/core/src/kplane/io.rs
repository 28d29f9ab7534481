//! Flat binary files for sampled functions: one JSON header line, then the
//! values as little-endian `f64`.

use std::io::{BufRead, Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{DirectionDesign, PlaneFunction};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, UniformGrid};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Header {
    Grid {
        d: usize,
        extent: Vec<f64>,
        counts: Vec<usize>,
    },
    Plane {
        d: usize,
        k: usize,
        matrices: Vec<Vec<Vec<f64>>>,
        weights: Vec<f64>,
        t_extent: Vec<f64>,
        t_counts: Vec<usize>,
    },
}

/// Either kind of sampled function.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Grid(GridFunction),
    Plane(PlaneFunction),
}

fn write_values<W: Write>(w: &mut W, header: &Header, values: &[f64]) -> Result<()> {
    serde_json::to_writer(&mut *w, header)?;
    w.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(8 * values.len());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn write_grid<W: Write>(w: &mut W, f: &GridFunction) -> Result<()> {
    let header = Header::Grid { d: f.dim(), extent: f.grid.extent.clone(), counts: f.grid.counts.clone() };
    write_values(w, &header, &f.values)
}

pub fn write_plane<W: Write>(w: &mut W, g: &PlaneFunction) -> Result<()> {
    let matrices = g
        .design
        .matrices()
        .iter()
        .map(|a| a.row_iter().map(|row| row.iter().copied().collect()).collect())
        .collect();
    let header = Header::Plane {
        d: g.design.d(),
        k: g.design.k(),
        matrices,
        weights: g.design.weights().to_vec(),
        t_extent: g.t_grid.extent.clone(),
        t_counts: g.t_grid.counts.clone(),
    };
    write_values(w, &header, &g.values)
}

pub fn write_field<W: Write>(w: &mut W, field: &Field) -> Result<()> {
    match field {
        Field::Grid(f) => write_grid(w, f),
        Field::Plane(g) => write_plane(w, g),
    }
}

fn read_values<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * n {
        return Err(Error::Schema(format!("expected {n} values ({} bytes), found {} bytes", 8 * n, bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

pub fn read_field<R: BufRead>(r: &mut R) -> Result<Field> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Schema(format!("bad header: {e}")))?;
    match header {
        Header::Grid { d, extent, counts } => {
            if extent.len() != d {
                return Err(Error::Schema(format!("header says d = {d} but lists {} extents", extent.len())));
            }
            let grid = UniformGrid::new(extent, counts)?;
            let values = read_values(r, grid.len())?;
            Ok(Field::Grid(GridFunction::new(grid, values)?))
        }
        Header::Plane { d, k, matrices, weights, t_extent, t_counts } => {
            let mut mats = Vec::with_capacity(matrices.len());
            for rows in matrices {
                let ncols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != ncols) {
                    return Err(Error::Schema("ragged design matrix".into()));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                mats.push(DMatrix::from_row_slice(rows.len(), ncols, &flat));
            }
            let design = DirectionDesign::new(d, k, mats, weights)?;
            let t_grid = UniformGrid::new(t_extent, t_counts)?;
            let values = read_values(r, design.len() * t_grid.len())?;
            Ok(Field::Plane(PlaneFunction::new(design, t_grid, values)?))
        }
    }
}
