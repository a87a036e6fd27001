//! Empirical orthogonal function decomposition of centered station data.
//!
//! The centered S×T matrix is scaled by `(S - 1)^(-1/2)` and factorized with a
//! thin SVD. Right singular vectors give the temporal bases φ_k; the left
//! factors rescaled by `sqrt(S - 1) * σ_k` give spatial coefficients α_k with
//! zero mean, empirical variance σ_k² and no cross-covariance, so that
//! `centered[i][j] = Σ_k α_k(i) φ_k(j)`.

use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::csvio;
use crate::dataset::CenteredDataset;
use crate::error::{Error, Result};
use crate::linalg::thin_svd;

#[derive(Debug, Clone, PartialEq)]
pub struct EofBasis {
    temporal_bases: Array2<f64>,
    spatial_coeffs: Array2<f64>,
    singular_values: Array1<f64>,
    mean_series: Array1<f64>,
}

impl EofBasis {
    /// K×T, row k is φ_k.
    pub fn temporal_bases(&self) -> &Array2<f64> {
        &self.temporal_bases
    }

    /// S×K, column k is α_k at the decomposed stations.
    pub fn spatial_coeffs(&self) -> &Array2<f64> {
        &self.spatial_coeffs
    }

    pub fn singular_values(&self) -> &Array1<f64> {
        &self.singular_values
    }

    pub fn mean_series(&self) -> &Array1<f64> {
        &self.mean_series
    }

    /// K = min(T, S - 1).
    pub fn k_total(&self) -> usize {
        self.singular_values.len()
    }

    pub fn n_stations(&self) -> usize {
        self.spatial_coeffs.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.mean_series.len()
    }
}

/// Thin SVD of the scaled centered matrix.
///
/// Each φ_k is oriented so that its entry of largest magnitude (earliest on
/// ties) is positive.
pub fn decompose(cd: &CenteredDataset) -> Result<EofBasis> {
    let z = &cd.centered;
    let (s, t) = z.dim();
    if s < 2 || t < 1 {
        return Err(Error::Precondition(format!(
            "decomposition needs at least 2 stations and 1 time step, got {s}×{t}"
        )));
    }
    if z.iter().chain(cd.mean_series.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "centered data contain non-finite entries".into(),
        ));
    }
    let k_total = t.min(s - 1);
    let scale = ((s - 1) as f64).sqrt();
    let (u, sigma, vt) = thin_svd(z.mapv(|v| v / scale).view())?;
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    order.truncate(k_total);

    let mut temporal_bases = Array2::zeros((k_total, t));
    let mut spatial_coeffs = Array2::zeros((s, k_total));
    let mut singular_values = Array1::zeros(k_total);
    for (k, &src) in order.iter().enumerate() {
        let mut phi = vt.row(src).to_owned();
        let mut left = u.column(src).to_owned();
        if dominant_entry(phi.view()) < 0.0 {
            phi.mapv_inplace(|v| -v);
            left.mapv_inplace(|v| -v);
        }
        let sv = sigma[src].max(0.0);
        temporal_bases.row_mut(k).assign(&phi);
        spatial_coeffs
            .column_mut(k)
            .assign(&left.mapv(|v| v * sv * scale));
        singular_values[k] = sv;
    }
    Ok(EofBasis {
        temporal_bases,
        spatial_coeffs,
        singular_values,
        mean_series: cd.mean_series.clone(),
    })
}

/// Entry of largest absolute value, earliest index on ties.
fn dominant_entry(v: ArrayView1<'_, f64>) -> f64 {
    let mut best = 0.0f64;
    for &x in v {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    best
}

/// σ_k² / Σ σ_l²; all zeros when every singular value is zero.
pub fn explained_variance(basis: &EofBasis) -> Array1<f64> {
    let sq = basis.singular_values.mapv(|s| s * s);
    let total = sq.sum();
    if total > 0.0 {
        sq / total
    } else {
        Array1::zeros(basis.k_total())
    }
}

/// Cumulative explained variance, entry k = Σ_{l≤k} σ_l² / Σ σ_l².
pub fn cumulative_explained_variance(basis: &EofBasis) -> Array1<f64> {
    let sq = basis.singular_values.mapv(|s| s * s);
    let total = sq.sum();
    let mut partial = 0.0;
    sq.iter()
        .map(|v| {
            partial += v;
            if total > 0.0 {
                partial / total
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationRule {
    /// Keep exactly this many leading components.
    Count(usize),
    /// Keep the fewest leading components whose cumulative explained variance reaches θ.
    VarianceThreshold(f64),
}

/// Leading K̃ components of an [`EofBasis`].
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedBasis {
    full: Arc<EofBasis>,
    k_used: usize,
    variance_captured: f64,
}

impl TruncatedBasis {
    /// K̃×T view of the retained temporal bases.
    pub fn temporal_bases(&self) -> ArrayView2<'_, f64> {
        self.full.temporal_bases.slice(s![..self.k_used, ..])
    }

    /// S×K̃ view of the retained spatial coefficients.
    pub fn spatial_coeffs(&self) -> ArrayView2<'_, f64> {
        self.full.spatial_coeffs.slice(s![.., ..self.k_used])
    }

    pub fn singular_values(&self) -> ArrayView1<'_, f64> {
        self.full.singular_values.slice(s![..self.k_used])
    }

    pub fn mean_series(&self) -> &Array1<f64> {
        &self.full.mean_series
    }

    pub fn k_used(&self) -> usize {
        self.k_used
    }

    pub fn k_total(&self) -> usize {
        self.full.k_total()
    }

    pub fn n_times(&self) -> usize {
        self.full.n_times()
    }

    pub fn variance_captured(&self) -> f64 {
        self.variance_captured
    }

    pub fn full(&self) -> &EofBasis {
        &self.full
    }

    /// SHA-256 over the retained temporal bases and mean series.
    pub fn fingerprint(&self) -> String {
        fingerprint(self.temporal_bases(), self.mean_series().view())
    }
}

/// SHA-256 (hex) of a `K̃ × T` basis matrix and mean series.
pub fn fingerprint(temporal_bases: ArrayView2<'_, f64>, mean_series: ArrayView1<'_, f64>) -> String {
    let mut h = Sha256::new();
    h.update((temporal_bases.nrows() as u64).to_le_bytes());
    h.update((temporal_bases.ncols() as u64).to_le_bytes());
    for v in temporal_bases.iter().chain(mean_series.iter()) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn truncate(basis: impl Into<Arc<EofBasis>>, rule: TruncationRule) -> Result<TruncatedBasis> {
    let full = basis.into();
    let k = full.k_total();
    let cumulative = cumulative_explained_variance(&full);
    let k_used = match rule {
        TruncationRule::Count(n) => {
            if n < 1 || n > k {
                return Err(Error::Config(format!(
                    "truncation to {n} components is outside [1, {k}]"
                )));
            }
            n
        }
        TruncationRule::VarianceThreshold(theta) => {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::Config(format!(
                    "variance threshold {theta} is outside (0, 1]"
                )));
            }
            if k == 0 {
                return Err(Error::Config("basis has no components".into()));
            }
            if theta == 1.0 {
                // Every nonzero component, however small its share.
                full.singular_values
                    .iter()
                    .rposition(|&s| s > 0.0)
                    .map_or(1, |i| i + 1)
            } else {
                cumulative
                    .iter()
                    .position(|&c| c >= theta)
                    .map_or(1, |i| i + 1)
            }
        }
    };
    let variance_captured = cumulative[k_used - 1];
    Ok(TruncatedBasis {
        full,
        k_used,
        variance_captured,
    })
}

/// `coeffs · Φ`, plus the mean series when `add_mean` is set.
pub fn reconstruct(
    coeffs: ArrayView2<'_, f64>,
    basis: &TruncatedBasis,
    add_mean: bool,
) -> Result<Array2<f64>> {
    if coeffs.ncols() != basis.k_used() {
        return Err(Error::Shape(format!(
            "{} coefficient columns for {} retained components",
            coeffs.ncols(),
            basis.k_used()
        )));
    }
    let mut out = coeffs.dot(&basis.temporal_bases());
    if add_mean {
        out += basis.mean_series();
    }
    Ok(out)
}

/// Coefficients of raw series on the retained bases: `(values - μ̄) · Φᵀ`.
///
/// For stations that entered the decomposition this reproduces their
/// spatial coefficients.
pub fn project(values: ArrayView2<'_, f64>, basis: &TruncatedBasis) -> Result<Array2<f64>> {
    if values.ncols() != basis.n_times() {
        return Err(Error::Shape(format!(
            "{} time steps for a basis over {}",
            values.ncols(),
            basis.n_times()
        )));
    }
    let centered = &values - basis.mean_series();
    Ok(centered.dot(&basis.temporal_bases().t()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisMetadata {
    pub n_stations: usize,
    pub n_times: usize,
    pub k_total: usize,
    pub k_used: usize,
    pub variance_captured: f64,
    pub fingerprint: String,
}

pub const BASIS_FILES: [&str; 5] = ["phi.csv", "alpha.csv", "sigma.csv", "mean.csv", "basis.json"];

/// Writes `phi.csv` (K×T), `alpha.csv` (S×K), `sigma.csv`, `mean.csv` and
/// `basis.json` into `dir`.
pub fn save_basis(dir: &Path, basis: &TruncatedBasis) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let full = basis.full();
    csvio::write_matrix(&dir.join("phi.csv"), full.temporal_bases.view())?;
    csvio::write_matrix(&dir.join("alpha.csv"), full.spatial_coeffs.view())?;
    csvio::write_vector(&dir.join("sigma.csv"), full.singular_values.view())?;
    csvio::write_vector(&dir.join("mean.csv"), full.mean_series.view())?;
    let meta = BasisMetadata {
        n_stations: full.n_stations(),
        n_times: full.n_times(),
        k_total: full.k_total(),
        k_used: basis.k_used(),
        variance_captured: basis.variance_captured(),
        fingerprint: basis.fingerprint(),
    };
    let path = dir.join("basis.json");
    let json = serde_json::to_string_pretty(&meta).expect("plain struct");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_basis(dir: &Path) -> Result<TruncatedBasis> {
    let path = dir.join("basis.json");
    let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: BasisMetadata = serde_json::from_str(&raw).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let full = EofBasis {
        temporal_bases: csvio::read_matrix(&dir.join("phi.csv"))?,
        spatial_coeffs: csvio::read_matrix(&dir.join("alpha.csv"))?,
        singular_values: csvio::read_vector(&dir.join("sigma.csv"))?,
        mean_series: csvio::read_vector(&dir.join("mean.csv"))?,
    };
    let k = full.k_total();
    if full.temporal_bases.dim() != (k, meta.n_times)
        || full.spatial_coeffs.dim() != (meta.n_stations, k)
        || full.mean_series.len() != meta.n_times
        || k != meta.k_total
    {
        return Err(Error::Shape(format!(
            "basis files in {} disagree with basis.json",
            dir.display()
        )));
    }
    let basis = truncate(full, TruncationRule::Count(meta.k_used))?;
    if basis.fingerprint() != meta.fingerprint {
        return Err(Error::Precondition(format!(
            "basis fingerprint mismatch in {}",
            dir.display()
        )));
    }
    Ok(basis)
}
