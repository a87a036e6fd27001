//! Synthetic benchmark: Gaussian random fields modulated by AR(1) series plus noise.
//!
//! The field at grid cell `s` and time `t_j` is `Σ_k X_k(s) · Y_k(t_j) + ε`, where
//! the `X_k` are independent stationary Gaussian fields with squared-exponential
//! covariance, the `Y_k` are independent stationary AR(1) series and `ε` is
//! i.i.d. Gaussian noise whose standard deviation is a fraction of the standard
//! deviation of the noise-free field over all grid cells and time steps.

use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::dataset::{StationDataset, TimeAxis};
use crate::error::{Error, Result};
use crate::linalg::cholesky_lower;
use crate::seeds::derive_seed;

pub use crate::grid::GridSpec;

/// Largest grid simulated with the exact Cholesky method under [`GrfMethod::Auto`].
pub const CHOLESKY_MAX_CELLS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrfMethod {
    /// Cholesky up to [`CHOLESKY_MAX_CELLS`] cells, circulant embedding above.
    #[default]
    Auto,
    Cholesky,
    CirculantEmbedding,
}

fn kernel(d: f64, length_scale: f64) -> f64 {
    (-(d * d) / (2.0 * length_scale * length_scale)).exp()
}

/// Zero-mean, unit-variance stationary Gaussian field with covariance
/// `exp(-d² / (2 ℓ²))`, returned as an `ny × nx` map.
pub fn gaussian_random_field(grid: &GridSpec, length_scale: f64, seed: u64) -> Result<Array2<f64>> {
    gaussian_random_field_with(grid, length_scale, seed, GrfMethod::Auto)
}

pub fn gaussian_random_field_with(
    grid: &GridSpec,
    length_scale: f64,
    seed: u64,
    method: GrfMethod,
) -> Result<Array2<f64>> {
    if !(length_scale > 0.0 && length_scale.is_finite()) {
        return Err(Error::Config(format!(
            "length scale must be positive, got {length_scale}"
        )));
    }
    let method = match method {
        GrfMethod::Auto if grid.n_cells() <= CHOLESKY_MAX_CELLS => GrfMethod::Cholesky,
        GrfMethod::Auto => GrfMethod::CirculantEmbedding,
        m => m,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match method {
        GrfMethod::Cholesky => {
            if grid.n_cells() > CHOLESKY_MAX_CELLS {
                return Err(Error::Capability(format!(
                    "a {}×{} grid ({} cells) exceeds the {CHOLESKY_MAX_CELLS}-cell limit of \
                     the exact Cholesky method; use the circulant-embedding spectral method",
                    grid.nx,
                    grid.ny,
                    grid.n_cells()
                )));
            }
            let lx = axis_factor(grid.nx, grid.cell_size, length_scale)?;
            let ly = axis_factor(grid.ny, grid.cell_size, length_scale)?;
            let white = Array2::from_shape_simple_fn((grid.ny, grid.nx), || {
                rng.sample::<f64, _>(StandardNormal)
            });
            Ok(ly.dot(&white).dot(&lx.t()))
        }
        GrfMethod::CirculantEmbedding => Ok(circulant_embedding(grid, length_scale, &mut rng)),
        GrfMethod::Auto => unreachable!(),
    }
}

/// Cholesky factor of the 1-D covariance along one grid axis.
///
/// The squared-exponential kernel is separable on a regular grid, so the
/// full covariance is the Kronecker product of the two axis covariances and
/// its Cholesky factor is the Kronecker product of their factors. A growing
/// diagonal jitter absorbs the near-singularity of smooth kernels.
fn axis_factor(n: usize, cell_size: f64, length_scale: f64) -> Result<Array2<f64>> {
    let cov = Array2::from_shape_fn((n, n), |(i, j)| {
        kernel((i as f64 - j as f64) * cell_size, length_scale)
    });
    let mut jitter = 0.0;
    for _ in 0..12 {
        let mut a = cov.clone();
        a.diag_mut().mapv_inplace(|v| v + jitter);
        if let Some(l) = cholesky_lower(a.view()) {
            // Restore unit marginal variance.
            return Ok(l / (1.0 + jitter).sqrt());
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
    }
    Err(Error::Numeric(format!(
        "covariance along a {n}-cell axis is not positive definite even with jitter {jitter:e}"
    )))
}

fn embedding_size(n: usize, cell_size: f64, length_scale: f64) -> usize {
    let decay = (6.0 * length_scale / cell_size).ceil() as usize;
    (2 * (n - 1).max(decay)).max(1)
}

fn circulant_embedding(grid: &GridSpec, length_scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mx = embedding_size(grid.nx, grid.cell_size, length_scale);
    let my = embedding_size(grid.ny, grid.cell_size, length_scale);
    let wrapped = |i: usize, m: usize| i.min(m - i) as f64 * grid.cell_size;
    let mut spectrum: Vec<Complex<f64>> = (0..my * mx)
        .map(|c| {
            let (iy, ix) = (c / mx, c % mx);
            let d = wrapped(ix, mx).hypot(wrapped(iy, my));
            Complex::new(kernel(d, length_scale), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    fft2(&mut planner, &mut spectrum, my, mx);

    let total = (mx * my) as f64;
    let min_eig = spectrum.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
    if min_eig < -1e-8 * total {
        warn!("circulant embedding has negative eigenvalue {min_eig:e}; clamped to zero");
    }
    let mut field: Vec<Complex<f64>> = spectrum
        .iter()
        .map(|lambda| {
            let scale = (lambda.re.max(0.0) / total).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex::new(re * scale, im * scale)
        })
        .collect();
    fft2(&mut planner, &mut field, my, mx);
    Array2::from_shape_fn((grid.ny, grid.nx), |(iy, ix)| field[iy * mx + ix].re)
}

/// In-place forward 2-D DFT of a row-major `rows × cols` buffer.
fn fft2(planner: &mut FftPlanner<f64>, data: &mut [Complex<f64>], rows: usize, cols: usize) {
    let row_fft = planner.plan_fft_forward(cols);
    for row in data.chunks_exact_mut(cols) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(rows);
    let mut column = vec![Complex::new(0.0, 0.0); rows];
    for j in 0..cols {
        for i in 0..rows {
            column[i] = data[i * cols + j];
        }
        col_fft.process(&mut column);
        for i in 0..rows {
            data[i * cols + j] = column[i];
        }
    }
}

/// Stationary AR(1) series `Y(t) = φ Y(t-1) + η_t`, started from its
/// stationary distribution `N(0, σ² / (1 - φ²))`.
pub fn ar1_series(length: usize, phi: f64, innovation_sd: f64, seed: u64) -> Result<Array1<f64>> {
    if !(phi.abs() < 1.0) {
        return Err(Error::Config(format!(
            "AR(1) coefficient {phi} is not in (-1, 1); the process would be nonstationary"
        )));
    }
    if !(innovation_sd > 0.0 && innovation_sd.is_finite()) {
        return Err(Error::Config(format!(
            "innovation sd must be positive, got {innovation_sd}"
        )));
    }
    if length == 0 {
        return Err(Error::Config("series length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stationary_sd = innovation_sd / (1.0 - phi * phi).sqrt();
    let mut y = Array1::zeros(length);
    y[0] = stationary_sd * rng.sample::<f64, _>(StandardNormal);
    for t in 1..length {
        y[t] = phi * y[t - 1] + innovation_sd * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(y)
}

/// Parameters of [`synthesize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationParams {
    pub n_components: usize,
    pub t_len: usize,
    /// Noise sd as a fraction of the noise-free field's sd.
    pub noise_ratio: f64,
    pub phi: f64,
    pub innovation_sd: f64,
    /// In coordinate units.
    pub length_scale: f64,
    pub method: GrfMethod,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            n_components: 20,
            t_len: 1080,
            noise_ratio: 0.10,
            phi: 0.8,
            innovation_sd: 1.0,
            length_scale: 10.0,
            method: GrfMethod::Auto,
        }
    }
}

/// Generating components of a synthetic field.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub grid: GridSpec,
    /// `X_k` as `ny × nx` maps.
    pub fields: Vec<Array2<f64>>,
    /// `n_components × T`, row k is `Y_k`.
    pub series: Array2<f64>,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SyntheticTruth {
    pub fn n_times(&self) -> usize {
        self.series.ncols()
    }

    /// `cells × n_components` matrix of `X_k` values.
    fn loadings(&self, cells: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((cells.len(), self.fields.len()), |(r, k)| {
            let c = cells[r];
            self.fields[k][[c / self.grid.nx, c % self.grid.nx]]
        })
    }

    /// Noise-free series at the given cells (`cells × T`).
    pub fn noise_free(&self, cells: &[usize]) -> Array2<f64> {
        self.loadings(cells).dot(&self.series)
    }

    /// Noise-free field over the whole grid (`n_cells × T`).
    pub fn noise_free_field(&self) -> Array2<f64> {
        let cells: Vec<usize> = (0..self.grid.n_cells()).collect();
        self.noise_free(&cells)
    }

    /// Noise added at one cell. Each cell owns an independent stream, so the
    /// draw does not depend on which other cells are sampled.
    pub fn noise(&self, cell: usize) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "noise", 0));
        rng.set_stream(cell as u64);
        Array1::from_shape_simple_fn(self.n_times(), || {
            self.noise_sd * rng.sample::<f64, _>(StandardNormal)
        })
    }

    /// Observed (noisy) series at the given cells (`cells × T`).
    pub fn observed(&self, cells: &[usize]) -> Array2<f64> {
        let mut out = self.noise_free(cells);
        for (mut row, &c) in out.axis_iter_mut(Axis(0)).zip(cells) {
            row += &self.noise(c);
        }
        out
    }

    /// Writes `grid.json`, `series.csv` (components × T) and one
    /// `field_XX.csv` (`ny × nx`) per component.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = TruthMetadata {
            grid: self.grid.clone(),
            n_components: self.fields.len(),
            n_times: self.n_times(),
            noise_sd: self.noise_sd,
            seed: self.seed,
        };
        let path = dir.join("grid.json");
        let json = serde_json::to_string_pretty(&meta).expect("plain struct");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))?;
        csvio::write_matrix(&dir.join("series.csv"), self.series.view())?;
        for (k, f) in self.fields.iter().enumerate() {
            csvio::write_matrix(&dir.join(format!("field_{k:02}.csv")), f.view())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("grid.json");
        let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: TruthMetadata = serde_json::from_str(&raw).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        let series = csvio::read_matrix(&dir.join("series.csv"))?;
        let fields = (0..meta.n_components)
            .map(|k| csvio::read_matrix(&dir.join(format!("field_{k:02}.csv"))))
            .collect::<Result<Vec<_>>>()?;
        if series.dim() != (meta.n_components, meta.n_times)
            || fields.iter().any(|f| f.dim() != (meta.grid.ny, meta.grid.nx))
        {
            return Err(Error::Shape(format!(
                "truth files in {} disagree with grid.json",
                dir.display()
            )));
        }
        Ok(Self {
            grid: meta.grid,
            fields,
            series,
            noise_sd: meta.noise_sd,
            seed: meta.seed,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TruthMetadata {
    grid: GridSpec,
    n_components: usize,
    n_times: usize,
    noise_sd: f64,
    seed: u64,
}

/// Mean and sample standard deviation of `loadings · series` over every
/// (cell, time) pair, from Gram matrices instead of the full field.
fn field_moments(fields: &[Array2<f64>], series: &Array2<f64>) -> (f64, f64) {
    let k = fields.len();
    let cells = fields[0].len() as f64;
    let times = series.ncols() as f64;
    let n = cells * times;
    let field_sums: Vec<f64> = fields.iter().map(|f| f.sum()).collect();
    let series_sums = series.sum_axis(Axis(1));
    let mean = (0..k).map(|a| field_sums[a] * series_sums[a]).sum::<f64>() / n;
    let series_gram = series.dot(&series.t());
    let mut second = 0.0;
    for a in 0..k {
        for b in 0..k {
            let field_dot: f64 = fields[a].iter().zip(fields[b].iter()).map(|(x, y)| x * y).sum();
            second += field_dot * series_gram[[a, b]];
        }
    }
    let var = ((second - n * mean * mean) / (n - 1.0)).max(0.0);
    (mean, var.sqrt())
}

pub fn synthesize(grid: &GridSpec, params: &SimulationParams, seed: u64) -> Result<SyntheticTruth> {
    if params.n_components == 0 {
        return Err(Error::Config("at least one component is required".into()));
    }
    if params.t_len == 0 {
        return Err(Error::Config("series length must be positive".into()));
    }
    if !(params.noise_ratio >= 0.0 && params.noise_ratio.is_finite()) {
        return Err(Error::Config(format!(
            "noise ratio must be nonnegative, got {}",
            params.noise_ratio
        )));
    }
    if grid.n_cells() * params.t_len < 2 {
        return Err(Error::Config("need at least two grid-time values".into()));
    }
    let fields = (0..params.n_components)
        .map(|k| {
            gaussian_random_field_with(
                grid,
                params.length_scale,
                derive_seed(seed, "field", k as u64),
                params.method,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut series = Array2::zeros((params.n_components, params.t_len));
    for k in 0..params.n_components {
        let y = ar1_series(
            params.t_len,
            params.phi,
            params.innovation_sd,
            derive_seed(seed, "series", k as u64),
        )?;
        series.row_mut(k).assign(&y);
    }
    let (_, sd_free) = field_moments(&fields, &series);
    Ok(SyntheticTruth {
        grid: grid.clone(),
        fields,
        series,
        noise_sd: params.noise_ratio * sd_free,
        seed,
    })
}

fn station_id(cell: usize, n_cells: usize) -> String {
    let width = n_cells.saturating_sub(1).to_string().len();
    format!("c{cell:0width$}")
}

/// Draws `train + val + test` distinct grid cells uniformly without
/// replacement and returns the observed series there as three datasets with
/// the grid covariates.
pub fn sample_stations(
    truth: &SyntheticTruth,
    counts: [usize; 3],
    seed: u64,
) -> Result<(StationDataset, StationDataset, StationDataset)> {
    let n_cells = truth.grid.n_cells();
    let total: usize = counts.iter().sum();
    if counts.contains(&0) {
        return Err(Error::Config(format!(
            "every station set must be nonempty, got {counts:?}"
        )));
    }
    if total > n_cells {
        return Err(Error::Config(format!(
            "{total} stations requested from a grid of {n_cells} cells"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn = index::sample(&mut rng, n_cells, total).into_vec();
    let mut sets = Vec::with_capacity(3);
    let mut start = 0;
    for &n in &counts {
        let mut cells = drawn[start..start + n].to_vec();
        cells.sort_unstable();
        start += n;
        sets.push(
            StationDataset::new(
                cells.iter().map(|&c| station_id(c, n_cells)).collect(),
                truth.grid.covariate_names(),
                truth.grid.covariates_of(&cells),
                TimeAxis::indices(truth.n_times()),
                truth.observed(&cells),
            )?,
        );
    }
    let test = sets.pop().expect("three sets");
    let val = sets.pop().expect("three sets");
    let train = sets.pop().expect("three sets");
    Ok((train, val, test))
}

/// Grid cell index of a station produced by [`sample_stations`].
pub fn station_cell(station_id: &str) -> Option<usize> {
    station_id.strip_prefix('c')?.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn grid(nx: usize, ny: usize) -> GridSpec {
        GridSpec::new(nx, ny, 1.0, (0.0, 0.0)).unwrap()
    }

    fn lag_correlation(series: &Array1<f64>) -> f64 {
        let m = series.mean().unwrap();
        let d = series.mapv(|v| v - m);
        let num: f64 = d.iter().zip(d.iter().skip(1)).map(|(a, b)| a * b).sum();
        num / d.iter().map(|v| v * v).sum::<f64>()
    }

    /// Average of `f(a) f(b)` over horizontal and vertical pairs at lag `d`.
    fn empirical_cov(f: &Array2<f64>, d: usize) -> (f64, usize) {
        let (ny, nx) = f.dim();
        let mut sum = 0.0;
        let mut n = 0;
        for iy in 0..ny {
            for ix in 0..nx {
                if ix + d < nx {
                    sum += f[[iy, ix]] * f[[iy, ix + d]];
                    n += 1;
                }
                if iy + d < ny {
                    sum += f[[iy, ix]] * f[[iy + d, ix]];
                    n += 1;
                }
            }
        }
        (sum, n)
    }

    fn check_kernel(g: &GridSpec, method: GrfMethod, seeds: u64) {
        let mut sums = [0.0; 7];
        let mut counts = [0usize; 7];
        for seed in 0..seeds {
            let f = gaussian_random_field_with(g, 3.0, seed, method).unwrap();
            for d in 0..=6 {
                let (s, n) = empirical_cov(&f, d);
                sums[d] += s;
                counts[d] += n;
            }
        }
        for d in 0..=6 {
            let est = sums[d] / counts[d] as f64;
            let expected = (-((d * d) as f64) / 18.0).exp();
            assert!(
                (est - expected).abs() < 0.05,
                "{method:?} lag {d}: {est} vs {expected}"
            );
        }
    }

    #[test]
    fn grf_covariance_cholesky() {
        check_kernel(&grid(32, 32), GrfMethod::Cholesky, 200);
    }

    #[test]
    fn grf_covariance_circulant() {
        check_kernel(&grid(32, 32), GrfMethod::CirculantEmbedding, 200);
    }

    #[test]
    fn grf_white_noise_limit() {
        let g = grid(100, 100);
        let f = gaussian_random_field(&g, 0.01, 5).unwrap();
        let (s, n) = empirical_cov(&f, 1);
        let var = f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64;
        assert!((s / n as f64 / var).abs() < 0.05);
    }

    #[test]
    fn grf_deterministic_and_validated() {
        let g = grid(20, 10);
        assert_eq!(
            gaussian_random_field(&g, 2.0, 9).unwrap(),
            gaussian_random_field(&g, 2.0, 9).unwrap()
        );
        assert_ne!(
            gaussian_random_field(&g, 2.0, 9).unwrap(),
            gaussian_random_field(&g, 2.0, 10).unwrap()
        );
        assert!(matches!(gaussian_random_field(&g, 0.0, 1), Err(Error::Config(_))));
        let big = grid(65, 64);
        assert!(matches!(
            gaussian_random_field_with(&big, 2.0, 1, GrfMethod::Cholesky),
            Err(Error::Capability(_))
        ));
        assert_eq!(gaussian_random_field(&big, 2.0, 1).unwrap().dim(), (64, 65));
    }

    #[test]
    fn grf_marginals() {
        let g = grid(12, 10);
        let n = 500;
        let mut sum = Array2::<f64>::zeros((10, 12));
        let mut sq = Array2::<f64>::zeros((10, 12));
        for seed in 0..n {
            let f = gaussian_random_field(&g, 2.0, 1000 + seed).unwrap();
            sum += &f;
            sq += &f.mapv(|v| v * v);
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean.mapv(|m| m * m);
        assert!(mean.mean().unwrap().abs() < 0.1);
        assert!((var.mean().unwrap() - 1.0).abs() < 0.1);
        // Five standard errors per cell.
        assert!(mean.iter().all(|m| m.abs() < 5.0 / (n as f64).sqrt()));
        assert!(var.iter().all(|v| (v - 1.0).abs() < 5.0 * (2.0 / n as f64).sqrt()));
    }

    #[test]
    fn ar1_autocorrelation() {
        let y = ar1_series(100_000, 0.0, 1.0, 1).unwrap();
        assert!(lag_correlation(&y).abs() < 0.01);
        let y = ar1_series(100_000, 0.9, 1.0, 2).unwrap();
        assert!((lag_correlation(&y) - 0.9).abs() < 0.02);
        assert_eq!(ar1_series(1080, 0.8, 1.0, 3).unwrap().len(), 1080);
        assert_eq!(ar1_series(50, 0.5, 1.0, 4).unwrap(), ar1_series(50, 0.5, 1.0, 4).unwrap());
    }

    #[test]
    fn ar1_stationary_start() {
        // Variance of Y(0) over many seeds matches σ²/(1-φ²) = 1/0.19.
        let n = 4000;
        let v: f64 = (0..n)
            .map(|s| ar1_series(1, 0.9, 1.0, s).unwrap()[0].powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((v * 0.19 - 1.0).abs() < 0.1, "{v}");
    }

    #[test]
    fn ar1_rejects_unit_root() {
        assert!(matches!(ar1_series(10, 1.0, 1.0, 0), Err(Error::Config(_))));
        assert!(matches!(ar1_series(10, -1.2, 1.0, 0), Err(Error::Config(_))));
    }

    fn small_params(noise_ratio: f64) -> SimulationParams {
        SimulationParams {
            n_components: 20,
            t_len: 60,
            noise_ratio,
            length_scale: 4.0,
            ..Default::default()
        }
    }

    #[test]
    fn moments_match_direct_computation() {
        let truth = synthesize(&grid(9, 7), &small_params(0.0), 3).unwrap();
        let field = truth.noise_free_field();
        let n = field.len() as f64;
        let mean = field.mean().unwrap();
        let sd = (field.mapv(|v| (v - mean).powi(2)).sum() / (n - 1.0)).sqrt();
        let (m2, sd2) = field_moments(&truth.fields, &truth.series);
        assert!((mean - m2).abs() < 1e-10 * sd);
        assert!((sd - sd2).abs() < 1e-10 * sd);
    }

    #[test]
    fn noise_ratio_is_one_percent_of_variance() {
        let truth = synthesize(&grid(30, 20), &small_params(0.10), 8).unwrap();
        let cells: Vec<usize> = (0..truth.grid.n_cells()).collect();
        let free = truth.noise_free(&cells);
        let noise = truth.observed(&cells) - &free;
        let var = |a: &Array2<f64>| {
            let m = a.mean().unwrap();
            a.mapv(|v| (v - m).powi(2)).sum() / (a.len() as f64 - 1.0)
        };
        let ratio = var(&noise) / var(&free);
        assert!((ratio - 0.01).abs() < 0.002, "{ratio}");
    }

    #[test]
    fn noise_free_rank_bound() {
        use crate::dataset::center;
        use crate::eof::decompose;
        let truth = synthesize(&grid(15, 10), &small_params(0.0), 4).unwrap();
        let (train, _, _) = sample_stations(&truth, [100, 20, 20], 5).unwrap();
        let basis = decompose(&center(&train).unwrap()).unwrap();
        let sv = basis.singular_values();
        assert!(sv.iter().skip(20).all(|&v| v < 1e-9 * sv[0]));
    }

    #[test]
    fn sampling_is_disjoint_and_deterministic() {
        let truth = synthesize(&grid(20, 15), &small_params(0.1), 2).unwrap();
        let (a, b, c) = sample_stations(&truth, [100, 50, 50], 7).unwrap();
        let ids: HashSet<&String> = a
            .station_ids()
            .iter()
            .chain(b.station_ids())
            .chain(c.station_ids())
            .collect();
        assert_eq!(ids.len(), 200);
        assert_eq!(a.n_times(), 60);
        assert_eq!(a.covariate_names(), ["x", "y"]);
        let again = sample_stations(&truth, [100, 50, 50], 7).unwrap();
        assert_eq!((a.clone(), b, c), again);

        // Stations carry the truth at their cell.
        let cell = station_cell(&a.station_ids()[3]).unwrap();
        let expected = truth.observed(&[cell]);
        assert_eq!(a.values().row(3), expected.row(0));
        assert_eq!(a.coords().row(3), truth.grid.covariates_of(&[cell]).row(0));

        assert!(matches!(
            sample_stations(&truth, [300, 0, 0], 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            sample_stations(&truth, [200, 60, 60], 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn full_scale_sampling_counts() {
        let g = grid(139, 88);
        assert_eq!(g.n_cells(), 12_232);
        let truth = SyntheticTruth {
            grid: g,
            fields: vec![Array2::zeros((88, 139))],
            series: Array2::zeros((1, 3)),
            noise_sd: 0.0,
            seed: 0,
        };
        let (a, b, c) = sample_stations(&truth, [2000, 1000, 1000], 11).unwrap();
        let ids: HashSet<&String> = a
            .station_ids()
            .iter()
            .chain(b.station_ids())
            .chain(c.station_ids())
            .collect();
        assert_eq!(ids.len(), 4000);
    }

    #[test]
    fn truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let truth = synthesize(&grid(6, 5), &small_params(0.1), 1).unwrap();
        truth.save(dir.path()).unwrap();
        let back = SyntheticTruth::load(dir.path()).unwrap();
        assert_eq!(back, truth);
        assert_eq!(back.observed(&[3, 7]), truth.observed(&[3, 7]));
    }
}
