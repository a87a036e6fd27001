//! Conversions between `ndarray` storage and `faer` factorizations.

use faer::{Mat, MatRef};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub(crate) fn to_mat(a: ArrayView2<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn to_array2(m: MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Thin SVD `a = U diag(s) Vᵀ`, returned as (U, s, Vᵀ) with s nonincreasing.
pub(crate) fn thin_svd(a: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Vec<f64>, Array2<f64>)> {
    let m = to_mat(a);
    let svd = m
        .thin_svd()
        .map_err(|e| Error::Numeric(format!("SVD failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let sigma: Vec<f64> = (0..s.nrows()).map(|i| s[i]).collect();
    Ok((
        to_array2(svd.U()),
        sigma,
        to_array2(svd.V().transpose()),
    ))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub(crate) fn cholesky_lower(a: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let m = to_mat(a);
    let llt = m.llt(faer::Side::Lower).ok()?;
    Some(to_array2(llt.L()))
}
