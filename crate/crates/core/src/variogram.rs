//! Empirical isotropic spatio-temporal semivariogram.
//!
//! For a spatial lag bin `h` and a temporal lag bin `τ`,
//!
//! ```text
//! γ(h, τ) = 1 / (2 |N|) · Σ_{(i, k, j, l) ∈ N} [Z(s_i, t_j) − Z(s_k, t_l)]²
//! ```
//!
//! where `N` holds every ordered station pair `(i, k)` whose distance falls in
//! `h` combined with every ordered time pair `(j, l)` whose index lag
//! `|j − l|` falls in `τ`, minus the trivial `i = k, j = l` terms. Stations
//! are paired with themselves at distance zero, so a zero-width bin at `h = 0`
//! carries the purely temporal variogram.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{create, StationDataset};
use crate::error::{Error, Result};

/// Lag class `(center - half_width, center + half_width]`, or exactly
/// `center` when `half_width` is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagBin {
    pub center: f64,
    pub half_width: f64,
}

impl LagBin {
    pub fn exact(center: f64) -> Self {
        Self {
            center,
            half_width: 0.0,
        }
    }

    pub fn contains(&self, lag: f64) -> bool {
        if self.half_width == 0.0 {
            lag == self.center
        } else {
            lag > self.center - self.half_width && lag <= self.center + self.half_width
        }
    }
}

/// Uniform subsample of unordered station pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSubsample {
    /// Probability of keeping each pair, in (0, 1].
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub space_bins: Vec<LagBin>,
    /// In time-index steps.
    pub time_lags: Vec<LagBin>,
    #[serde(default)]
    pub subsample: Option<PairSubsample>,
}

impl Binning {
    /// A zero-distance bin, then `n_space` equal-width bins up to half the
    /// largest station distance; temporal lags `0..=max_time_lag`.
    pub fn default_for(ds: &StationDataset, n_space: usize, max_time_lag: usize) -> Result<Self> {
        if n_space == 0 {
            return Err(Error::Config("need at least one spatial bin".into()));
        }
        let mut max_d = 0.0f64;
        for i in 0..ds.n_stations() {
            for k in (i + 1)..ds.n_stations() {
                max_d = max_d.max(distance(ds.coords().view(), i, k));
            }
        }
        if max_d <= 0.0 {
            return Err(Error::Precondition(
                "all stations are co-located; no spatial lags to bin".into(),
            ));
        }
        let width = max_d / 2.0 / n_space as f64;
        let mut space_bins = vec![LagBin::exact(0.0)];
        space_bins.extend((0..n_space).map(|b| LagBin {
            center: (b as f64 + 0.5) * width,
            half_width: width / 2.0,
        }));
        let max_lag = max_time_lag.min(ds.n_times().saturating_sub(1));
        let time_lags = (0..=max_lag).map(|l| LagBin::exact(l as f64)).collect();
        Ok(Self {
            space_bins,
            time_lags,
            subsample: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariogramSurface {
    pub binning: Binning,
    /// `space_bins × time_lags`; `NaN` in empty cells.
    pub gamma: Array2<f64>,
    /// Ordered (station, time) pairs accumulated per cell.
    pub pair_counts: Array2<u64>,
}

impl VariogramSurface {
    pub fn gamma_at(&self, h: usize, tau: usize) -> Option<f64> {
        (self.pair_counts[[h, tau]] > 0).then(|| self.gamma[[h, tau]])
    }

    /// `(h index, τ index, γ)` for every nonempty cell.
    pub fn nonempty_cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.pair_counts
            .indexed_iter()
            .filter(|(_, &n)| n > 0)
            .map(|((h, t), _)| (h, t, self.gamma[[h, t]]))
    }

    /// max γ / min γ over nonempty cells whose spatial bin center is positive.
    pub fn flatness_ratio(&self) -> Option<f64> {
        let values: Vec<f64> = self
            .nonempty_cells()
            .filter(|&(h, _, _)| self.binning.space_bins[h].center > 0.0)
            .map(|(_, _, g)| g)
            .collect();
        if values.is_empty() {
            return None;
        }
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        Some(if min > 0.0 { max / min } else { f64::INFINITY })
    }

    /// Writes `h_center,tau_center,gamma,pairs` rows (empty `gamma` for empty
    /// cells) and a JSON sidecar with the binning at `<path>.json`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = create(path)?;
        let err = |e| Error::io(path, e);
        writeln!(out, "h_center,tau_center,gamma,pairs").map_err(err)?;
        for (h, hb) in self.binning.space_bins.iter().enumerate() {
            for (t, tb) in self.binning.time_lags.iter().enumerate() {
                let n = self.pair_counts[[h, t]];
                if n > 0 {
                    writeln!(out, "{},{},{},{n}", hb.center, tb.center, self.gamma[[h, t]])
                } else {
                    writeln!(out, "{},{},,0", hb.center, tb.center)
                }
                .map_err(err)?;
            }
        }
        out.flush().map_err(err)?;
        let sidecar = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.binning).expect("plain struct");
        std::fs::write(&sidecar, json + "\n").map_err(|e| Error::io(sidecar, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let sidecar = sidecar_path(path);
        let raw = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let binning: Binning = serde_json::from_str(&raw).map_err(|e| Error::Parse {
            path: sidecar.clone(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        let dims = (binning.space_bins.len(), binning.time_lags.len());
        let mut gamma = Array2::from_elem(dims, f64::NAN);
        let mut pair_counts = Array2::zeros(dims);
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        for (n, record) in rdr.records().enumerate() {
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n as u64 + 2,
                message,
            };
            let record = record.map_err(|e| bad(e.to_string()))?;
            let (h, t) = (n / dims.1, n % dims.1);
            if h >= dims.0 || record.len() != 4 {
                return Err(bad("row does not match the binning sidecar".into()));
            }
            pair_counts[[h, t]] = record[3].parse().map_err(|_| bad("bad pair count".into()))?;
            if !record[2].is_empty() {
                gamma[[h, t]] = record[2].parse().map_err(|_| bad("bad gamma".into()))?;
            }
        }
        Ok(Self {
            binning,
            gamma,
            pair_counts,
        })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    name.into()
}

fn distance(coords: ArrayView2<'_, f64>, a: usize, b: usize) -> f64 {
    (coords[[a, 0]] - coords[[b, 0]]).hypot(coords[[a, 1]] - coords[[b, 1]])
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Computes γ over spatial distances in the first two covariates (`x`, `y`)
/// and integer time-index lags.
pub fn empirical_semivariogram(ds: &StationDataset, binning: &Binning) -> Result<VariogramSurface> {
    let (s, t) = ds.values().dim();
    if s < 2 || t < 2 {
        return Err(Error::Precondition(format!(
            "semivariogram needs at least 2 stations and 2 time steps, got {s}×{t}"
        )));
    }
    if !ds.is_complete() {
        return Err(Error::Precondition(format!(
            "semivariogram input has {} missing values",
            ds.missing_count()
        )));
    }
    if let Some(sub) = binning.subsample {
        if !(sub.fraction > 0.0 && sub.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "pair subsample fraction {} is outside (0, 1]",
                sub.fraction
            )));
        }
    }
    let z = ds.values();
    let nh = binning.space_bins.len();
    let nt = binning.time_lags.len();

    // Integer lags covered by each temporal bin.
    let lags: Vec<Vec<usize>> = binning
        .time_lags
        .iter()
        .map(|b| (0..t).filter(|&d| b.contains(d as f64)).collect())
        .collect();

    let mut sums = vec![CompensatedSum::default(); nh * nt];
    let mut counts = Array2::<u64>::zeros((nh, nt));
    let mut rng = binning
        .subsample
        .map(|sub| (ChaCha8Rng::seed_from_u64(sub.seed), sub.fraction));
    let mut hits = Vec::with_capacity(nh);

    for i in 0..s {
        for k in i..s {
            if k > i {
                if let Some((rng, fraction)) = rng.as_mut() {
                    if rng.random::<f64>() >= *fraction {
                        continue;
                    }
                }
            }
            let d = distance(ds.coords().view(), i, k);
            hits.clear();
            hits.extend((0..nh).filter(|&h| binning.space_bins[h].contains(d)));
            if hits.is_empty() {
                continue;
            }
            let zi = z.row(i);
            let zk = z.row(k);
            // Distinct stations appear as (i, k) and (k, i), which contribute
            // identical terms; a station paired with itself appears once.
            let station_mult: u64 = if i == k { 1 } else { 2 };
            for (tb, bin_lags) in lags.iter().enumerate() {
                let mut acc = CompensatedSum::default();
                let mut n = 0u64;
                for &lag in bin_lags {
                    if lag == 0 {
                        if i == k {
                            continue;
                        }
                        for j in 0..t {
                            acc.add((zi[j] - zk[j]).powi(2));
                        }
                        n += t as u64;
                    } else {
                        for j in 0..t - lag {
                            acc.add((zi[j] - zk[j + lag]).powi(2));
                            acc.add((zi[j + lag] - zk[j]).powi(2));
                        }
                        n += 2 * (t - lag) as u64;
                    }
                }
                if n == 0 {
                    continue;
                }
                for &h in &hits {
                    let cell = &mut sums[h * nt + tb];
                    cell.add(station_mult as f64 * acc.sum);
                    cell.add(station_mult as f64 * acc.carry);
                    counts[[h, tb]] += station_mult * n;
                }
            }
        }
    }

    let gamma = Array2::from_shape_fn((nh, nt), |(h, tb)| {
        let n = counts[[h, tb]];
        if n == 0 {
            f64::NAN
        } else {
            sums[h * nt + tb].value() / (2.0 * n as f64)
        }
    });
    Ok(VariogramSurface {
        binning: binning.clone(),
        gamma,
        pair_counts: counts,
    })
}

/// Observed minus predicted values on the same stations and times.
pub fn residual_dataset(ds: &StationDataset, predictions: ArrayView2<'_, f64>) -> Result<StationDataset> {
    if predictions.dim() != ds.values().dim() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs observations {:?}",
            predictions.dim(),
            ds.values().dim()
        )));
    }
    ds.with_values(ds.values() - &predictions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuggetSill {
    pub nugget: f64,
    /// `(h index, τ index)` of the cell giving the nugget.
    pub nugget_cell: (usize, usize),
    pub sill: f64,
    pub sill_cells: Vec<(usize, usize)>,
}

/// Nugget: γ of the nonempty cell with the smallest `(h, τ)` centers
/// (compared by `h` first). Sill: mean γ over the quarter of nonempty cells
/// (rounded up) farthest from the origin in lag space, each axis scaled by
/// its largest nonempty lag.
pub fn nugget_and_sill_summary(v: &VariogramSurface) -> Result<NuggetSill> {
    let cells: Vec<(usize, usize, f64)> = v.nonempty_cells().collect();
    if cells.is_empty() {
        return Err(Error::Diagnostic("semivariogram has no nonempty cells".into()));
    }
    let hc = |h: usize| v.binning.space_bins[h].center;
    let tc = |t: usize| v.binning.time_lags[t].center;
    let &(nh, nt, nugget) = cells
        .iter()
        .min_by(|a, b| {
            hc(a.0)
                .total_cmp(&hc(b.0))
                .then(tc(a.1).total_cmp(&tc(b.1)))
        })
        .expect("nonempty");

    let h_max = cells.iter().map(|c| hc(c.0).abs()).fold(0.0, f64::max);
    let t_max = cells.iter().map(|c| tc(c.1).abs()).fold(0.0, f64::max);
    let norm = |x: f64, m: f64| if m > 0.0 { x / m } else { 0.0 };
    let radius = |c: &(usize, usize, f64)| norm(hc(c.0), h_max).hypot(norm(tc(c.1), t_max));
    let mut ranked = cells.clone();
    ranked.sort_by(|a, b| radius(b).total_cmp(&radius(a)).then((a.0, a.1).cmp(&(b.0, b.1))));
    let take = cells.len().div_ceil(4);
    let top = &ranked[..take];
    let sill = top.iter().map(|c| c.2).sum::<f64>() / take as f64;
    Ok(NuggetSill {
        nugget,
        nugget_cell: (nh, nt),
        sill,
        sill_cells: top.iter().map(|c| (c.0, c.1)).collect(),
    })
}
