//! Headerless numeric CSV for matrices and vectors.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::dataset::create;
use crate::error::{Error, Result};

pub fn write_matrix(path: &Path, m: ArrayView2<'_, f64>) -> Result<()> {
    let mut out = create(path)?;
    let mut line = String::new();
    for row in m.rows() {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// One value per line.
pub fn write_vector(path: &Path, v: ArrayView1<'_, f64>) -> Result<()> {
    write_matrix(path, v.insert_axis(ndarray::Axis(1)))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut flat = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let before = flat.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: n as u64 + 1,
                message: format!("bad number `{field}`"),
            })?;
            flat.push(v);
        }
        let w = flat.len() - before;
        if *width.get_or_insert(w) != w {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n as u64 + 1,
                message: format!("expected {} columns, found {w}", width.unwrap()),
            });
        }
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, width.unwrap_or(0)), flat).expect("row widths checked"))
}

pub fn read_vector(path: &Path) -> Result<Array1<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() > 1 {
        return Err(Error::Shape(format!(
            "{}: expected one column, found {}",
            path.display(),
            m.ncols()
        )));
    }
    Ok(m.into_iter().collect())
}
