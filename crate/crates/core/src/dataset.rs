//! Station time-series data: ingestion, imputation, station splits and centering.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of spatial neighbours used when filling a missing cell.
pub const IMPUTATION_NEIGHBOURS: usize = 8;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// How the entries of a [`TimeAxis`] are encoded on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeKind {
    /// Plain integer indices.
    Index,
    /// ISO-8601 timestamps, stored as seconds since the Unix epoch (UTC).
    Timestamp,
}

/// Strictly increasing, regularly spaced time index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeAxis {
    kind: TimeKind,
    values: Vec<i64>,
}

impl TimeAxis {
    pub fn new(kind: TimeKind, values: Vec<i64>) -> Result<Self> {
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Precondition(
                "time axis must be strictly increasing".into(),
            ));
        }
        if values.len() > 2 {
            let step = values[1] - values[0];
            if let Some(w) = values.windows(2).find(|w| w[1] - w[0] != step) {
                return Err(Error::Precondition(format!(
                    "time axis is irregular: step {} between {} and {} differs from {}",
                    w[1] - w[0],
                    w[0],
                    w[1],
                    step
                )));
            }
        }
        Ok(Self { kind, values })
    }

    /// Integer time indices `0..len`.
    pub fn indices(len: usize) -> Self {
        Self {
            kind: TimeKind::Index,
            values: (0..len as i64).collect(),
        }
    }

    pub fn kind(&self) -> TimeKind {
        self.kind
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Text form of entry `j`, as written to measurement files.
    pub fn label(&self, j: usize) -> String {
        format_time(self.kind, self.values[j])
    }
}

fn format_time(kind: TimeKind, value: i64) -> String {
    match kind {
        TimeKind::Index => value.to_string(),
        TimeKind::Timestamp => DateTime::from_timestamp(value, 0)
            .map(|t| t.naive_utc().format(TIMESTAMP_FORMAT).to_string())
            .unwrap_or_else(|| value.to_string()),
    }
}

fn parse_time(raw: &str) -> Option<(TimeKind, i64)> {
    let raw = raw.trim();
    if let Ok(i) = raw.parse::<i64>() {
        return Some((TimeKind::Index, i));
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some((TimeKind::Timestamp, t.timestamp()));
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    for fmt in FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some((TimeKind::Timestamp, t.and_utc().timestamp()));
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| (TimeKind::Timestamp, t.and_utc().timestamp()))
}

/// S stations × T time steps of field values with per-station covariates.
///
/// Missing measurements are stored as `NaN`. The first two covariate columns
/// are the planar spatial coordinates; any further columns (altitude, ...)
/// are extra covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct StationDataset {
    station_ids: Vec<String>,
    covariate_names: Vec<String>,
    coords: Array2<f64>,
    times: TimeAxis,
    values: Array2<f64>,
}

impl StationDataset {
    pub fn new(
        station_ids: Vec<String>,
        covariate_names: Vec<String>,
        coords: Array2<f64>,
        times: TimeAxis,
        values: Array2<f64>,
    ) -> Result<Self> {
        let s = station_ids.len();
        if coords.nrows() != s || values.nrows() != s {
            return Err(Error::Shape(format!(
                "{} station ids, {} coordinate rows, {} value rows",
                s,
                coords.nrows(),
                values.nrows()
            )));
        }
        if coords.ncols() != covariate_names.len() {
            return Err(Error::Shape(format!(
                "{} covariate names for {} coordinate columns",
                covariate_names.len(),
                coords.ncols()
            )));
        }
        if covariate_names.len() < 2 {
            return Err(Error::Shape(
                "at least two spatial coordinate columns are required".into(),
            ));
        }
        if values.ncols() != times.len() {
            return Err(Error::Shape(format!(
                "{} time steps but {} value columns",
                times.len(),
                values.ncols()
            )));
        }
        let mut seen = HashMap::with_capacity(s);
        for id in &station_ids {
            if seen.insert(id.as_str(), ()).is_some() {
                return Err(Error::Precondition(format!("duplicate station id `{id}`")));
            }
        }
        if let Some(v) = coords.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("station covariate {v}")));
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::Numeric("infinite measurement".into()));
        }
        Ok(Self {
            station_ids,
            covariate_names,
            coords,
            times,
            values,
        })
    }

    pub fn station_ids(&self) -> &[String] {
        &self.station_ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// S×D covariate matrix.
    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    pub fn times(&self) -> &TimeAxis {
        &self.times
    }

    /// S×T measurements, `NaN` where missing.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|v| !v.is_nan())
    }

    /// Same stations, covariates and times with a new value matrix.
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        if values.dim() != self.values.dim() {
            return Err(Error::Shape(format!(
                "expected {:?} values, got {:?}",
                self.values.dim(),
                values.dim()
            )));
        }
        Self::new(
            self.station_ids.clone(),
            self.covariate_names.clone(),
            self.coords.clone(),
            self.times.clone(),
            values,
        )
    }

    /// Subset of stations in the given row order.
    pub fn select_stations(&self, rows: &[usize]) -> Self {
        Self {
            station_ids: rows.iter().map(|&i| self.station_ids[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
            coords: self.coords.select(Axis(0), rows),
            times: self.times.clone(),
            values: self.values.select(Axis(0), rows),
        }
    }

    /// Stacks the stations of `other` below these; both must share times and covariates.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.times != other.times || self.covariate_names != other.covariate_names {
            return Err(Error::Shape(
                "datasets differ in time axis or covariates".into(),
            ));
        }
        let mut ids = self.station_ids.clone();
        ids.extend(other.station_ids.iter().cloned());
        let coords = ndarray::concatenate(Axis(0), &[self.coords.view(), other.coords.view()])
            .expect("column counts checked");
        let values = ndarray::concatenate(Axis(0), &[self.values.view(), other.values.view()])
            .expect("time axes checked");
        Self::new(ids, self.covariate_names.clone(), coords, self.times.clone(), values)
    }

    fn spatial_distance(&self, a: usize, b: usize) -> f64 {
        let dx = self.coords[[a, 0]] - self.coords[[b, 0]];
        let dy = self.coords[[a, 1]] - self.coords[[b, 1]];
        dx.hypot(dy)
    }

    /// Writes the two CSV files read by [`load_csv`].
    pub fn write_csv(&self, stations_path: &Path, measurements_path: &Path) -> Result<()> {
        let mut out = create(stations_path)?;
        let write_err = |e| Error::io(stations_path, e);
        writeln!(out, "station_id,{}", self.covariate_names.join(",")).map_err(write_err)?;
        for (id, row) in self.station_ids.iter().zip(self.coords.rows()) {
            let cols: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{id},{}", cols.join(",")).map_err(write_err)?;
        }
        out.flush().map_err(write_err)?;

        let mut out = create(measurements_path)?;
        let write_err = |e| Error::io(measurements_path, e);
        let labels: Vec<String> = (0..self.n_times()).map(|j| self.times.label(j)).collect();
        writeln!(out, "station_id,time,value").map_err(write_err)?;
        for (id, row) in self.station_ids.iter().zip(self.values.rows()) {
            for (label, v) in labels.iter().zip(row.iter()) {
                if v.is_nan() {
                    writeln!(out, "{id},{label},").map_err(write_err)?;
                } else {
                    writeln!(out, "{id},{label},{v}").map_err(write_err)?;
                }
            }
        }
        out.flush().map_err(write_err)
    }
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Reads a stations file and a long-format measurements file.
///
/// Station rows keep the order of the stations file; time steps are the
/// sorted distinct times of the measurements file. Empty `value` fields and
/// (station, time) combinations absent from the file are flagged missing.
pub fn load_csv(stations_path: &Path, measurements_path: &Path) -> Result<StationDataset> {
    let (station_ids, covariate_names, coords) = read_stations(stations_path)?;
    let index: HashMap<&str, usize> = station_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut rdr = csv_reader(measurements_path)?;
    let header = rdr
        .headers()
        .map_err(|e| csv_error(measurements_path, e))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols != ["station_id", "time", "value"] {
        return Err(Error::Parse {
            path: measurements_path.to_path_buf(),
            line: 1,
            message: format!("expected header `station_id,time,value`, found `{}`", cols.join(",")),
        });
    }

    let mut kind = None;
    // (station, time, value, line)
    let mut rows: Vec<(usize, i64, f64, u64)> = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(measurements_path, e)),
        }
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: measurements_path.to_path_buf(),
            line,
            message,
        };
        if record.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", record.len())));
        }
        let station = &record[0];
        let &s = index.get(station).ok_or_else(|| Error::UnknownStation {
            path: measurements_path.to_path_buf(),
            line,
            station: station.to_string(),
        })?;
        let (k, t) =
            parse_time(&record[1]).ok_or_else(|| parse_err(format!("bad time `{}`", &record[1])))?;
        match kind {
            None => kind = Some(k),
            Some(prev) if prev != k => {
                return Err(parse_err(
                    "mixes integer time indices and timestamps".to_string(),
                ))
            }
            _ => {}
        }
        let raw = &record[2];
        let v = if raw.is_empty() {
            f64::NAN
        } else {
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(format!("bad value `{raw}`")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value `{raw}`")));
            }
            v
        };
        rows.push((s, t, v, line));
    }

    let mut times: Vec<i64> = rows.iter().map(|r| r.1).collect();
    times.sort_unstable();
    times.dedup();
    let times = TimeAxis::new(kind.unwrap_or(TimeKind::Index), times).map_err(|e| Error::Parse {
        path: measurements_path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;

    let mut values = Array2::from_elem((station_ids.len(), times.len()), f64::NAN);
    let mut seen = Array2::from_elem((station_ids.len(), times.len()), false);
    for (s, t, v, line) in rows {
        let j = times.values().binary_search(&t).expect("time collected above");
        if std::mem::replace(&mut seen[[s, j]], true) {
            return Err(Error::DuplicateKey {
                path: measurements_path.to_path_buf(),
                line,
                station: station_ids[s].clone(),
                time: times.label(j),
            });
        }
        values[[s, j]] = v;
    }
    StationDataset::new(station_ids, covariate_names, coords, times, values)
}

type StationTable = (Vec<String>, Vec<String>, Array2<f64>);

fn read_stations(path: &Path) -> Result<StationTable> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 3 || &header[0] != "station_id" || &header[1] != "x" || &header[2] != "y" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected header `station_id,x,y[,...]`".into(),
        });
    }
    let covariate_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let d = covariate_names.len();
    let mut ids = Vec::new();
    let mut flat = Vec::new();
    let mut seen = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() != d + 1 {
            return Err(parse_err(format!(
                "expected {} fields, found {}",
                d + 1,
                record.len()
            )));
        }
        let id = record[0].to_string();
        if seen.insert(id.clone(), line).is_some() {
            return Err(Error::DuplicateKey {
                path: path.to_path_buf(),
                line,
                station: id,
                time: "-".into(),
            });
        }
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(format!("bad covariate `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite covariate `{field}`")));
            }
            flat.push(v);
        }
        ids.push(id);
    }
    let coords = Array2::from_shape_vec((ids.len(), d), flat).expect("row widths checked");
    Ok((ids, covariate_names, coords))
}

/// Fills every missing cell with the mean of the observed values among the
/// [`IMPUTATION_NEIGHBOURS`] spatially nearest stations at the missing time
/// step and its immediate predecessor and successor (up to 24 cells).
///
/// Only originally observed values enter the averages. Distance ties are
/// broken by ascending station id.
pub fn impute_missing(ds: &StationDataset) -> Result<StationDataset> {
    if ds.is_complete() {
        return Ok(ds.clone());
    }
    let s = ds.n_stations();
    let t = ds.n_times();
    let original = ds.values();
    let mut filled = original.clone();
    let mut neighbour_cache: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut failures = Vec::new();

    for ((i, j), v) in original.indexed_iter() {
        if !v.is_nan() {
            continue;
        }
        let neighbours = neighbour_cache
            .entry(i)
            .or_insert_with(|| nearest_stations(ds, i, IMPUTATION_NEIGHBOURS.min(s - 1)));
        let lo = j.saturating_sub(1);
        let hi = (j + 1).min(t - 1);
        let mut sum = 0.0;
        let mut count = 0usize;
        for &k in neighbours.iter() {
            for jj in lo..=hi {
                let x = original[[k, jj]];
                if !x.is_nan() {
                    sum += x;
                    count += 1;
                }
            }
        }
        if count == 0 {
            failures.push((ds.station_ids[i].clone(), j));
        } else {
            filled[[i, j]] = sum / count as f64;
        }
    }
    if !failures.is_empty() {
        return Err(Error::Imputation { cells: failures });
    }
    ds.with_values(filled)
}

fn nearest_stations(ds: &StationDataset, station: usize, count: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = (0..ds.n_stations())
        .filter(|&k| k != station)
        .map(|k| (ds.spatial_distance(station, k), k))
        .collect();
    others.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| ds.station_ids[a.1].cmp(&ds.station_ids[b.1]))
    });
    others.into_iter().take(count).map(|(_, k)| k).collect()
}

/// Station partition into training, validation and test sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub rng_seed: u64,
}

/// Subset sizes for the given fractions: train and validation are rounded,
/// test takes the remainder.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::Config(format!(
            "split fractions must be nonnegative, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }
    let train = (fractions[0] * n as f64).round() as usize;
    let val = (fractions[1] * n as f64).round() as usize;
    if train + val > n {
        return Err(Error::Config(format!(
            "fractions {fractions:?} overcommit {n} stations"
        )));
    }
    let sizes = [train, val, n - train - val];
    if sizes.contains(&0) {
        return Err(Error::Config(format!(
            "fractions {fractions:?} leave an empty subset among {n} stations (sizes {sizes:?})"
        )));
    }
    Ok(sizes)
}

/// Random station partition. Row indices in each set refer to `ds` and are
/// listed in ascending station-id order; the draw depends only on the set
/// of station ids and the seed, not on row order.
pub fn split_indices(ds: &StationDataset, fractions: [f64; 3], seed: u64) -> Result<SplitSpec> {
    let sizes = split_sizes(ds.n_stations(), fractions)?;
    let mut order: Vec<usize> = (0..ds.n_stations()).collect();
    order.sort_by(|&a, &b| ds.station_ids[a].cmp(&ds.station_ids[b]));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let by_id = |mut rows: Vec<usize>| {
        rows.sort_by(|&a, &b| ds.station_ids[a].cmp(&ds.station_ids[b]));
        rows
    };
    let (train, rest) = order.split_at(sizes[0]);
    let (validation, test) = rest.split_at(sizes[1]);
    Ok(SplitSpec {
        train: by_id(train.to_vec()),
        validation: by_id(validation.to_vec()),
        test: by_id(test.to_vec()),
        rng_seed: seed,
    })
}

pub fn split_stations(
    ds: &StationDataset,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(StationDataset, StationDataset, StationDataset)> {
    let split = split_indices(ds, fractions, seed)?;
    Ok((
        ds.select_stations(&split.train),
        ds.select_stations(&split.validation),
        ds.select_stations(&split.test),
    ))
}

/// Spatially centered data: each time step has its across-station mean removed.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredDataset {
    pub centered: Array2<f64>,
    pub mean_series: Array1<f64>,
    pub station_ids: Vec<String>,
    pub times: TimeAxis,
}

impl CenteredDataset {
    /// Adds the mean series back.
    pub fn uncentered(&self) -> Array2<f64> {
        &self.centered + &self.mean_series
    }
}

pub fn center(ds: &StationDataset) -> Result<CenteredDataset> {
    if !ds.is_complete() {
        return Err(Error::Precondition(format!(
            "cannot center a dataset with {} missing values",
            ds.missing_count()
        )));
    }
    if ds.n_stations() == 0 {
        return Err(Error::Precondition("cannot center zero stations".into()));
    }
    let mean_series = ds
        .values
        .mean_axis(Axis(0))
        .expect("at least one station");
    let centered = &ds.values - &mean_series;
    Ok(CenteredDataset {
        centered,
        mean_series,
        station_ids: ds.station_ids.clone(),
        times: ds.times.clone(),
    })
}

/// Per-covariate affine standardization fitted on training stations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation per column; constant columns get sd 1.
    pub fn fit(x: &Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Precondition(
                "cannot standardize zero rows".into(),
            ));
        }
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let sd = x
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 });
        Ok(Self {
            mean: mean.to_vec(),
            sd: sd.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "expected {} covariates, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        let mut out = x.clone();
        for (mut col, (m, s)) in out.columns_mut().into_iter().zip(self.mean.iter().zip(&self.sd)) {
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn toy(values: Array2<f64>, coords: Array2<f64>) -> StationDataset {
        let s = values.nrows();
        let t = values.ncols();
        StationDataset::new(
            (0..s).map(|i| format!("st{i:02}")).collect(),
            vec!["x".into(), "y".into()],
            coords,
            TimeAxis::indices(t),
            values,
        )
        .unwrap()
    }

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_toy_files() {
        let dir = tempfile::tempdir().unwrap();
        let st = write(dir.path(), "s.csv", "station_id,x,y,alt\na,0,0,100\nb,1,0,200\nc,0,1,300\n");
        let ms = write(
            dir.path(),
            "m.csv",
            "station_id,time,value\na,0,1.5\na,1,2\nb,0,3\nb,1,4\nc,1,6\nc,0,5\n",
        );
        let ds = load_csv(&st, &ms).unwrap();
        assert_eq!(ds.values().dim(), (3, 2));
        assert_eq!(ds.missing_count(), 0);
        assert_eq!(ds.covariate_names(), ["x", "y", "alt"]);
        assert_eq!(ds.values()[[2, 0]], 5.0);
        assert_eq!(ds.coords()[[1, 2]], 200.0);
    }

    #[test]
    fn empty_value_is_missing() {
        let dir = tempfile::tempdir().unwrap();
        let st = write(dir.path(), "s.csv", "station_id,x,y\na,0,0\nb,1,0\nc,0,1\n");
        let ms = write(
            dir.path(),
            "m.csv",
            "station_id,time,value\na,0,1\na,1,2\nb,0,\nb,1,4\nc,0,5\nc,1,6\n",
        );
        let ds = load_csv(&st, &ms).unwrap();
        assert_eq!(ds.missing_count(), 1);
        assert!(ds.values()[[1, 0]].is_nan());
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let st = write(dir.path(), "s.csv", "station_id,x,y\na,0,0\nb,1,0\n");

        let ms = write(dir.path(), "m1.csv", "station_id,time,value\na,0,1\na,0,2\n");
        assert!(matches!(load_csv(&st, &ms), Err(Error::DuplicateKey { line: 3, .. })));

        let ms = write(dir.path(), "m2.csv", "station_id,time,value\na,0,1\nz,0,2\n");
        assert!(matches!(load_csv(&st, &ms), Err(Error::UnknownStation { line: 3, .. })));

        let ms = write(dir.path(), "m3.csv", "station_id,time,value\na,0,1\nb,0,oops\n");
        let err = load_csv(&st, &ms).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(err.to_string().contains(":3:"));

        let ms = write(dir.path(), "m4.csv", "station_id,time,value\na,0,1\na,1,1\na,3,1\n");
        assert!(matches!(load_csv(&st, &ms), Err(Error::Parse { .. })));

        let bad_st = write(dir.path(), "s2.csv", "station_id,x,y\na,0,zero\n");
        assert!(matches!(load_csv(&bad_st, &ms), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn timestamps_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let st = write(dir.path(), "s.csv", "station_id,x,y\na,0,0\nb,1,0\n");
        let ms = write(
            dir.path(),
            "m.csv",
            "station_id,time,value\na,2016-07-01T00:00:00,1\na,2016-07-01T01:00:00,2\n\
             b,2016-07-01 00:00:00,3\nb,2016-07-01T01:00:00Z,4\n",
        );
        let ds = load_csv(&st, &ms).unwrap();
        assert_eq!(ds.times().kind(), TimeKind::Timestamp);
        assert_eq!(ds.n_times(), 2);
        assert_eq!(ds.times().label(1), "2016-07-01T01:00:00");
        assert_eq!(ds.missing_count(), 0);

        let st2 = dir.path().join("s2.csv");
        let ms2 = dir.path().join("m2.csv");
        ds.write_csv(&st2, &ms2).unwrap();
        assert_eq!(load_csv(&st2, &ms2).unwrap(), ds);
    }

    #[test]
    fn imputes_constant_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coords = Array2::from_shape_fn((12, 2), |_| rng.random_range(0.0..10.0));
        let mut values = Array2::from_elem((12, 6), 4.25);
        values[[5, 3]] = f64::NAN;
        let ds = toy(values, coords);
        let out = impute_missing(&ds).unwrap();
        assert_eq!(out.values()[[5, 3]], 4.25);
    }

    #[test]
    fn boundary_uses_one_side() {
        // Stations on a line; station 0's eight nearest are 1..=8.
        let coords = Array2::from_shape_fn((10, 2), |(i, j)| if j == 0 { i as f64 } else { 0.0 });
        let mut values = Array2::from_shape_fn((10, 4), |(i, j)| (i * 10 + j) as f64);
        values[[0, 0]] = f64::NAN;
        let ds = toy(values, coords);
        let out = impute_missing(&ds).unwrap();
        let expected: f64 = (1..=8)
            .flat_map(|i| [0, 1].map(move |j| (i * 10 + j) as f64))
            .sum::<f64>()
            / 16.0;
        assert_eq!(out.values()[[0, 0]], expected);
    }

    #[test]
    fn ties_broken_by_station_id() {
        // Station 0 at origin, stations 1..=9 all at distance 1.
        let mut coords = Array2::zeros((10, 2));
        for i in 1..10 {
            let a = i as f64;
            coords[[i, 0]] = a.cos();
            coords[[i, 1]] = a.sin();
        }
        let mut values = Array2::zeros((10, 1));
        values[[9, 0]] = 900.0;
        values[[0, 0]] = f64::NAN;
        let ds = toy(values, coords);
        // st09 is the largest id among the tie and is excluded.
        assert_eq!(impute_missing(&ds).unwrap().values()[[0, 0]], 0.0);
    }

    #[test]
    fn imputation_failure_lists_cells() {
        let coords = array![[0.0, 0.0], [1.0, 0.0]];
        let values = array![[f64::NAN], [f64::NAN]];
        match impute_missing(&toy(values, coords)) {
            Err(Error::Imputation { cells }) => {
                assert_eq!(cells, vec![("st00".to_string(), 0), ("st01".to_string(), 0)])
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn imputation_ignores_fresh_imputations() {
        let coords = array![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let values = array![[f64::NAN, 1.0], [f64::NAN, 3.0], [5.0, 7.0]];
        let out = impute_missing(&toy(values, coords)).unwrap();
        assert_eq!(out.values()[[0, 0]], (3.0 + 5.0 + 7.0) / 3.0);
        assert_eq!(out.values()[[1, 0]], (1.0 + 5.0 + 7.0) / 3.0);
    }

    #[test]
    fn split_sizes_match_temperature_network() {
        assert_eq!(split_sizes(369, [0.596, 0.203, 0.201]).unwrap(), [220, 75, 74]);
        assert!(matches!(split_sizes(10, [1.0, 0.0, 0.0]), Err(Error::Config(_))));
        assert!(matches!(split_sizes(10, [0.5, 0.6, -0.1]), Err(Error::Config(_))));
    }

    #[test]
    fn split_is_deterministic_and_order_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = toy(
            Array2::from_shape_fn((40, 3), |_| rng.random()),
            Array2::from_shape_fn((40, 2), |_| rng.random()),
        );
        let a = split_stations(&ds, [0.5, 0.25, 0.25], 9).unwrap();
        let b = split_stations(&ds, [0.5, 0.25, 0.25], 9).unwrap();
        assert_eq!(a, b);

        let reversed: Vec<usize> = (0..40).rev().collect();
        let c = split_stations(&ds.select_stations(&reversed), [0.5, 0.25, 0.25], 9).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.0.n_stations(), 20);
    }

    #[test]
    fn center_hand_example() {
        let ds = toy(array![[1.0, 3.0], [3.0, 5.0]], array![[0.0, 0.0], [1.0, 1.0]]);
        let c = center(&ds).unwrap();
        assert_eq!(c.mean_series, array![2.0, 4.0]);
        assert_eq!(c.centered, array![[-1.0, -1.0], [1.0, 1.0]]);
    }

    #[test]
    fn center_constant_and_missing() {
        let ds = toy(Array2::from_elem((3, 4), 7.5), Array2::zeros((3, 2)));
        let c = center(&ds).unwrap();
        assert!(c.centered.iter().all(|&v| v == 0.0));
        assert!(c.mean_series.iter().all(|&v| v == 7.5));

        let mut values = Array2::zeros((3, 4));
        values[[1, 1]] = f64::NAN;
        let ds = toy(values, Array2::zeros((3, 2)));
        assert!(matches!(center(&ds), Err(Error::Precondition(_))));
    }

    #[test]
    fn center_columns_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let ds = toy(
            Array2::from_shape_fn((50, 20), |_| rng.random_range(-100.0..100.0)),
            Array2::zeros((50, 2)),
        );
        let c = center(&ds).unwrap();
        for (col, raw) in c.centered.columns().into_iter().zip(ds.values().columns()) {
            let scale = raw.iter().map(|v| v.abs()).sum::<f64>();
            assert!(col.sum().abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let x = array![[1.0, 5.0], [3.0, 5.0]];
        let s = Standardizer::fit(&x).unwrap();
        assert_eq!(s.sd, vec![1.0, 1.0]);
        assert_eq!(s.transform(&x).unwrap(), array![[-1.0, 0.0], [1.0, 0.0]]);
        assert!(s.transform(&Array2::zeros((1, 3))).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn dataset(s: usize, t: usize, seed: u64) -> StationDataset {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            toy(
                Array2::from_shape_fn((s, t), |_| rng.random_range(-1e3..1e3)),
                Array2::from_shape_fn((s, 2), |_| rng.random_range(0.0..1.0)),
            )
        }

        proptest! {
            #[test]
            fn center_round_trip(s in 1usize..20, t in 1usize..20, seed in any::<u64>()) {
                let ds = dataset(s, t, seed);
                let back = center(&ds).unwrap().uncentered();
                for (a, b) in back.iter().zip(ds.values().iter()) {
                    prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }

            #[test]
            fn impute_idempotent_on_complete(s in 2usize..12, t in 1usize..8, seed in any::<u64>()) {
                let ds = dataset(s, t, seed);
                prop_assert_eq!(impute_missing(&ds).unwrap(), ds);
            }

            #[test]
            fn split_partitions(s in 3usize..60, seed in any::<u64>()) {
                let ds = dataset(s, 2, seed);
                let Ok(spec) = split_indices(&ds, [0.6, 0.2, 0.2], seed) else {
                    return Ok(());
                };
                let mut all: Vec<usize> = spec.train.iter().chain(&spec.validation).chain(&spec.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..s).collect::<Vec<_>>());
            }
        }
    }
}
