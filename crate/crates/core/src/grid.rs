//! Regular prediction grids.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::create;
use crate::error::{Error, Result};

/// Regular `nx × ny` grid. Cell `c = iy * nx + ix` sits at
/// `(origin.0 + ix * cell_size, origin.1 + iy * cell_size)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub cell_size: f64,
    pub origin: (f64, f64),
    /// Names of per-cell covariates beyond `x` and `y`.
    #[serde(default)]
    pub extra_names: Vec<String>,
    /// `n_cells × extra_names.len()` matrix in cell order.
    #[serde(skip)]
    pub extra: Option<Array2<f64>>,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, cell_size: f64, origin: (f64, f64)) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Config(format!("grid must be nonempty, got {nx}×{ny}")));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::Config(format!("cell size must be positive, got {cell_size}")));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        Ok(Self {
            nx,
            ny,
            cell_size,
            origin,
            extra_names: Vec::new(),
            extra: None,
        })
    }

    /// Attaches extra per-cell covariates (e.g. altitude).
    pub fn with_extra(mut self, names: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (self.n_cells(), names.len()) {
            return Err(Error::Shape(format!(
                "extra covariates must be {}×{}, got {:?}",
                self.n_cells(),
                names.len(),
                values.dim()
            )));
        }
        self.extra_names = names;
        self.extra = Some(values);
        Ok(self)
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_xy(&self, cell: usize) -> (f64, f64) {
        let ix = cell % self.nx;
        let iy = cell / self.nx;
        (
            self.origin.0 + ix as f64 * self.cell_size,
            self.origin.1 + iy as f64 * self.cell_size,
        )
    }

    pub fn covariate_names(&self) -> Vec<String> {
        let mut names = vec!["x".to_string(), "y".to_string()];
        names.extend(self.extra_names.iter().cloned());
        names
    }

    /// Covariate rows (`x`, `y`, extras...) of the given cells.
    pub fn covariates_of(&self, cells: &[usize]) -> Array2<f64> {
        let d = 2 + self.extra_names.len();
        let mut out = Array2::zeros((cells.len(), d));
        for (row, &c) in cells.iter().enumerate() {
            let (x, y) = self.cell_xy(c);
            out[[row, 0]] = x;
            out[[row, 1]] = y;
            if let Some(extra) = &self.extra {
                for e in 0..self.extra_names.len() {
                    out[[row, 2 + e]] = extra[[c, e]];
                }
            }
        }
        out
    }

    /// Covariates of every cell in cell order.
    pub fn covariates(&self) -> Array2<f64> {
        let cells: Vec<usize> = (0..self.n_cells()).collect();
        self.covariates_of(&cells)
    }

    /// Reads `x,y[,extra...]` rows forming a complete regular grid (any row order).
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| parse_error(path, e))?;
        let header = rdr.headers().map_err(|e| parse_error(path, e))?.clone();
        if header.len() < 2 || &header[0] != "x" || &header[1] != "y" {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "expected header `x,y[,...]`".into(),
            });
        }
        let extra_names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let mut rows: Vec<(f64, f64, Vec<f64>, u64)> = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| parse_error(path, e))?;
            let line = record.position().map_or(0, |p| p.line());
            let nums: Vec<f64> = record
                .iter()
                .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: "non-numeric grid covariate".into(),
                })?;
            rows.push((nums[0], nums[1], nums[2..].to_vec(), line));
        }
        let xs = distinct(rows.iter().map(|r| r.0));
        let ys = distinct(rows.iter().map(|r| r.1));
        if xs.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "grid has no cells".into(),
            });
        }
        let spacing = |v: &[f64]| -> Option<f64> {
            if v.len() < 2 {
                return None;
            }
            Some(v[1] - v[0])
        };
        let cell_size = spacing(&xs).or(spacing(&ys)).unwrap_or(1.0);
        let irregular = |v: &[f64]| {
            v.windows(2)
                .any(|w| ((w[1] - w[0]) - cell_size).abs() > 1e-9 * cell_size.max(w[1].abs()))
        };
        if irregular(&xs) || irregular(&ys) || rows.len() != xs.len() * ys.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: "cells do not form a complete regular grid with equal spacing".into(),
            });
        }
        let mut grid = Self::new(xs.len(), ys.len(), cell_size, (xs[0], ys[0]))?;
        let mut extra = Array2::zeros((grid.n_cells(), extra_names.len()));
        let mut seen = vec![false; grid.n_cells()];
        for (x, y, rest, line) in rows {
            let ix = ((x - xs[0]) / cell_size).round() as usize;
            let iy = ((y - ys[0]) / cell_size).round() as usize;
            let c = iy * grid.nx + ix;
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("duplicate grid cell ({x}, {y})"),
                });
            }
            for (e, v) in rest.into_iter().enumerate() {
                extra[[c, e]] = v;
            }
        }
        if !extra_names.is_empty() {
            grid = grid.with_extra(extra_names, extra)?;
        }
        Ok(grid)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = create(path)?;
        let err = |e| Error::io(path, e);
        writeln!(out, "{}", self.covariate_names().join(",")).map_err(err)?;
        for row in self.covariates().axis_iter(Axis(0)) {
            let cols: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", cols.join(",")).map_err(err)?;
        }
        out.flush().map_err(err)
    }
}

fn parse_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let set: BTreeSet<u64> = values.map(|v| ordered_bits(v)).collect();
    set.into_iter().map(from_ordered_bits).collect()
}

// Order-preserving map of finite f64 onto u64.
fn ordered_bits(v: f64) -> u64 {
    let b = (v + 0.0).to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn from_ordered_bits(b: u64) -> f64 {
    if b >> 63 == 1 {
        f64::from_bits(b & !(1 << 63))
    } else {
        f64::from_bits(!b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_layout() {
        let g = GridSpec::new(3, 2, 2.0, (10.0, -1.0)).unwrap();
        assert_eq!(g.n_cells(), 6);
        assert_eq!(g.cell_xy(0), (10.0, -1.0));
        assert_eq!(g.cell_xy(4), (12.0, 1.0));
        assert!(GridSpec::new(0, 2, 1.0, (0.0, 0.0)).is_err());
        assert!(GridSpec::new(2, 2, -1.0, (0.0, 0.0)).is_err());
    }

    #[test]
    fn csv_round_trip_with_altitude() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::new(4, 3, 2500.0, (486660.0, 77183.0))
            .unwrap()
            .with_extra(
                vec!["alt".into()],
                Array2::from_shape_fn((12, 1), |(c, _)| 300.0 + c as f64),
            )
            .unwrap();
        let p = dir.path().join("grid.csv");
        g.write_csv(&p).unwrap();
        let back = GridSpec::from_csv(&p).unwrap();
        assert_eq!(back, g);

        // Shuffled rows describe the same grid.
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[1..].reverse();
        std::fs::write(&p, lines.join("\n")).unwrap();
        assert_eq!(GridSpec::from_csv(&p).unwrap(), g);
    }

    #[test]
    fn rejects_incomplete_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        std::fs::write(&p, "x,y\n0,0\n1,0\n0,1\n").unwrap();
        assert!(GridSpec::from_csv(&p).is_err());
        std::fs::write(&p, "x,y\n0,0\n1,0\n3,0\n").unwrap();
        assert!(GridSpec::from_csv(&p).is_err());
        std::fs::write(&p, "x,y\n5,7\n").unwrap();
        let g = GridSpec::from_csv(&p).unwrap();
        assert_eq!((g.nx, g.ny, g.cell_xy(0)), (1, 1, (5.0, 7.0)));
    }

    #[test]
    fn ordered_bits_preserve_order() {
        let v = [-3.5, -0.0, 0.0, 1e-300, 2.0, 1e300];
        let bits: Vec<u64> = v.iter().map(|&x| ordered_bits(x)).collect();
        assert!(bits.windows(2).all(|w| w[0] <= w[1]));
        for &x in &v {
            assert_eq!(from_ordered_bits(ordered_bits(x)), x + 0.0);
        }
    }
}
