use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use stfield::csvio::{read_matrix, write_matrix};
use stfield::dataset::{center, impute_missing, load_csv, split_stations, StationDataset};
use stfield::eof::{cumulative_explained_variance, decompose, explained_variance, load_basis, save_basis, truncate, TruncatedBasis, TruncationRule};
use stfield::model::{evaluate_mae, forward, load_model, predict_grid, save_model, train, train_single_output_baseline, MlpConfig, MlpModel, TrainReport};
use stfield::seeds::derive_seed;
use stfield::simulate::{sample_stations, synthesize, GridSpec, SyntheticTruth};
use stfield::variogram::{empirical_semivariogram, nugget_and_sill_summary, residual_dataset, Binning, NuggetSill, PairSubsample, VariogramSurface};

use crate::config::{RunConfig, VariogramConfig};
use crate::heatmap::render_svg;
use crate::manifest::{ArtifactKind, Manifest, Run, RunStatus};

pub const METRICS_FILE: &str = "metrics.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
const SETS: [&str; 3] = ["train", "val", "test"];

struct Inputs {
    train: StationDataset,
    val: StationDataset,
    test: StationDataset,
    grid: Option<GridSpec>,
    truth: Option<SyntheticTruth>,
}

fn write_sets(run: &mut Run, sets: [&StationDataset; 3]) -> Result<()> {
    for (name, ds) in SETS.iter().zip(sets) {
        let s = format!("data/{name}_stations.csv");
        let m = format!("data/{name}_measurements.csv");
        ds.write_csv(&run.path(&s), &run.path(&m))?;
        run.add(&s, ArtifactKind::Data)?;
        run.add(&m, ArtifactKind::Data)?;
    }
    Ok(())
}

fn simulate_inputs(run: &mut Run, config: &RunConfig) -> Result<Inputs> {
    let sim = config.simulation.as_ref().expect("validated");
    let grid = sim.grid()?;
    let truth = synthesize(&grid, &sim.params(), derive_seed(config.seed, "simulate", 0))?;
    let (train, val, test) = sample_stations(&truth, sim.stations, derive_seed(config.seed, "stations", 0))?;
    write_sets(run, [&train, &val, &test])?;
    grid.write_csv(&run.path("grid.csv"))?;
    run.add("grid.csv", ArtifactKind::Data)?;
    truth.save(&run.path("truth"))?;
    run.add_dir("truth", ArtifactKind::Data)?;
    Ok(Inputs {
        train,
        val,
        test,
        grid: Some(grid),
        truth: Some(truth),
    })
}

fn load_inputs(run: &mut Run, config: &RunConfig) -> Result<Inputs> {
    let data = config.data.as_ref().expect("validated");
    let mut ds = load_csv(&data.stations, &data.measurements)?;
    if ds.missing_count() > 0 {
        ensure!(
            data.impute,
            "{} values are missing and imputation is disabled",
            ds.missing_count()
        );
        log::info!("imputing {} missing values", ds.missing_count());
        ds = impute_missing(&ds)?;
    }
    let (train, val, test) = split_stations(&ds, data.split, derive_seed(config.seed, "split", 0))?;
    write_sets(run, [&train, &val, &test])?;
    let grid = match &data.grid {
        Some(p) => {
            let g = GridSpec::from_csv(p)?;
            g.write_csv(&run.path("grid.csv"))?;
            run.add("grid.csv", ArtifactKind::Data)?;
            Some(g)
        }
        None => None,
    };
    Ok(Inputs {
        train,
        val,
        test,
        grid,
        truth: None,
    })
}

fn write_config(run: &mut Run, config: &RunConfig) -> Result<()> {
    std::fs::write(run.path("config.toml"), toml::to_string(config)?)?;
    run.add("config.toml", ArtifactKind::Config)
}

/// `cmd_simulate`: synthetic truth, station files and grid.
pub fn cmd_simulate(config: &RunConfig, dir: &Path) -> Result<Manifest> {
    ensure!(config.simulation.is_some(), "`simulate` needs a [simulation] table");
    let mut run = Run::start(dir, "simulate", config.seed)?;
    write_config(&mut run, config)?;
    run.stage("simulate", |run| simulate_inputs(run, config).map(drop))?;
    run.finish()
}

fn decompose_stage(run: &mut Run, both: &StationDataset, rule: TruncationRule, prefix: &str) -> Result<TruncatedBasis> {
    let basis = decompose(&center(both)?)?;
    let ev = explained_variance(&basis);
    let cum = cumulative_explained_variance(&basis);
    let mut text = String::from("k,explained,cumulative\n");
    for k in 0..ev.len() {
        writeln!(text, "{},{},{}", k + 1, ev[k], cum[k])?;
    }
    let ev_path = format!("{prefix}explained_variance.csv");
    std::fs::write(run.path(&ev_path), text)?;
    run.add(&ev_path, ArtifactKind::Table)?;
    let truncated = truncate(basis, rule)?;
    log::info!(
        "kept {} of {} components ({:.4} of the variance)",
        truncated.k_used(),
        truncated.k_total(),
        truncated.variance_captured()
    );
    let basis_dir = format!("{prefix}basis");
    save_basis(&run.path(&basis_dir), &truncated)?;
    run.add_dir(&basis_dir, ArtifactKind::Basis)?;
    Ok(truncated)
}

fn save_trained(run: &mut Run, model: &MlpModel, report: &TrainReport, name: &str) -> Result<()> {
    save_model(&run.path(name), model)?;
    run.add_dir(name, ArtifactKind::Model)?;
    let log_path = format!("{name}_training_log.csv");
    report.write_log(&run.path(&log_path))?;
    run.add(&log_path, ArtifactKind::Log)?;
    log::info!(
        "{name}: {} epochs, best validation MAE {:.6} at epoch {} ({:.1} s)",
        report.stopping_epoch,
        report.best_val_mae,
        report.best_epoch,
        report.wall_seconds
    );
    Ok(())
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub k_used: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    pub test_mae: f64,
}

fn metrics_row(name: &str, model: &MlpModel, report: &TrainReport, sets: [&StationDataset; 3]) -> Result<MetricsRow> {
    let mae = |ds: &StationDataset| -> Result<f64> {
        let (_, signal) = forward(model, ds.coords().view())?;
        Ok(evaluate_mae(signal.view(), ds.values().view())?)
    };
    Ok(MetricsRow {
        model: name.to_string(),
        k_used: model.k_used(),
        epochs: report.stopping_epoch,
        best_epoch: report.best_epoch,
        train_mae: mae(sets[0])?,
        val_mae: mae(sets[1])?,
        test_mae: mae(sets[2])?,
    })
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn write_map(run: &mut Run, stem: &str, map: &Array2<f64>) -> Result<()> {
    let csv = format!("maps/{stem}.csv");
    write_matrix(&run.path(&csv), map.view())?;
    run.add(&csv, ArtifactKind::Map)?;
    let svg = format!("images/{stem}.svg");
    std::fs::create_dir_all(run.path("images"))?;
    std::fs::write(run.path(&svg), render_svg(map.view(), stem))?;
    run.add(&svg, ArtifactKind::Image)
}

fn predict_stage(run: &mut Run, config: &RunConfig, model: &MlpModel, grid: &GridSpec, truth: Option<&SyntheticTruth>) -> Result<()> {
    let pred = predict_grid(model, grid)?;
    for (k, map) in pred.coeff_maps.iter().enumerate() {
        write_map(run, &format!("coeff_{:02}", k + 1), map)?;
    }
    let truth_field = truth.map(|t| t.noise_free_field());
    for &j in &config.maps.snapshots {
        ensure!(j < model.n_times(), "snapshot time {j} is beyond the {} time steps", model.n_times());
        write_map(run, &format!("field_t{j:04}"), &pred.field_map(grid, j))?;
        if let Some(tf) = &truth_field {
            let map = tf
                .column(j)
                .to_owned()
                .into_shape_with_order((grid.ny, grid.nx))?;
            write_map(run, &format!("truth_t{j:04}"), &map)?;
        }
    }
    if config.maps.full_field {
        write_matrix(&run.path("field.csv"), pred.field.view())?;
        run.add("field.csv", ArtifactKind::Table)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSummary {
    pub name: String,
    pub nugget: f64,
    pub sill: f64,
    /// max/min γ over nonempty cells with h > 0.
    pub flatness_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub flatness_threshold: f64,
    /// Residual surfaces whose flatness ratio exceeds the threshold.
    pub structured_residuals: Vec<String>,
    pub surfaces: Vec<SurfaceSummary>,
}

pub fn binning(ds: &StationDataset, vc: &VariogramConfig, seed: u64) -> Result<Binning> {
    let mut b = Binning::default_for(ds, vc.space_bins, vc.max_time_lag)?;
    b.subsample = vc.subsample.map(|fraction| PairSubsample {
        fraction,
        seed: derive_seed(seed, "variogram", 0),
    });
    Ok(b)
}

fn summarize(name: &str, v: &VariogramSurface) -> Result<SurfaceSummary> {
    let NuggetSill { nugget, sill, .. } = nugget_and_sill_summary(v)?;
    Ok(SurfaceSummary {
        name: name.to_string(),
        nugget,
        sill,
        flatness_ratio: v.flatness_ratio(),
    })
}

fn variogram_stage(run: &mut Run, config: &RunConfig, test: &StationDataset, models: &[(&str, &MlpModel)]) -> Result<Diagnostics> {
    let b = binning(test, &config.variogram, config.seed)?;
    let mut surfaces = vec![("data".to_string(), empirical_semivariogram(test, &b)?)];
    for (name, model) in models {
        let (_, signal) = forward(model, test.coords().view())?;
        let predicted = test.with_values(signal.clone())?;
        surfaces.push((format!("{name}_output"), empirical_semivariogram(&predicted, &b)?));
        let residual = residual_dataset(test, signal.view())?;
        surfaces.push((format!("{name}_residual"), empirical_semivariogram(&residual, &b)?));
    }
    let mut summaries = Vec::new();
    for (name, v) in &surfaces {
        let path = format!("variograms/{name}.csv");
        v.write_csv(&run.path(&path))?;
        run.add(&path, ArtifactKind::Variogram)?;
        run.add(format!("{path}.json"), ArtifactKind::Variogram)?;
        summaries.push(summarize(name, v)?);
    }
    let threshold = config.variogram.flatness_threshold;
    let structured_residuals = summaries
        .iter()
        .filter(|s| s.name.ends_with("_residual") && s.flatness_ratio.is_some_and(|r| r >= threshold))
        .map(|s| s.name.clone())
        .collect::<Vec<_>>();
    for name in &structured_residuals {
        log::warn!("{name} semivariogram still shows structure (flatness ratio ≥ {threshold})");
    }
    let diagnostics = Diagnostics {
        flatness_threshold: threshold,
        structured_residuals,
        surfaces: summaries,
    };
    std::fs::write(run.path(DIAGNOSTICS_FILE), serde_json::to_string_pretty(&diagnostics)? + "\n")?;
    run.add(DIAGNOSTICS_FILE, ArtifactKind::Table)?;
    Ok(diagnostics)
}

/// Outcome of [`cmd_run`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub metrics: Vec<MetricsRow>,
    pub diagnostics: Diagnostics,
}

/// `cmd_run`: data → decomposition → training → evaluation → grid
/// prediction → semivariograms.
pub fn cmd_run(config: &RunConfig, dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    let mut run = Run::start(dir, "run", config.seed)?;
    write_config(&mut run, config)?;
    let inputs = run.stage("data", |run| {
        if config.simulation.is_some() {
            simulate_inputs(run, config)
        } else {
            load_inputs(run, config)
        }
    })?;
    let sets = [&inputs.train, &inputs.val, &inputs.test];

    let basis = run.stage("decompose", |run| {
        let both = inputs.train.concat(&inputs.val)?;
        decompose_stage(run, &both, config.truncation, "")
    })?;

    let model_config = MlpConfig {
        seed: derive_seed(config.seed, "model", 0),
        ..config.model.clone()
    };
    let (model, report) = run.stage("train", |run| {
        let (model, report) = train(&inputs.train, &inputs.val, &basis, &model_config)?;
        save_trained(run, &model, &report, "model")?;
        Ok((model, report))
    })?;
    let baseline = if config.baseline {
        Some(run.stage("baseline", |run| {
            let (model, report) = train_single_output_baseline(&inputs.train, &inputs.val, &basis, &model_config)?;
            save_trained(run, &model, &report, "baseline")?;
            Ok((model, report))
        })?)
    } else {
        None
    };

    let metrics = run.stage("evaluate", |run| {
        let mut rows = vec![metrics_row("multi_output", &model, &report, sets)?];
        if let Some((b, br)) = &baseline {
            rows.push(metrics_row("single_output_baseline", b, br, sets)?);
        }
        write_metrics(&run.path(METRICS_FILE), &rows)?;
        run.add(METRICS_FILE, ArtifactKind::Table)?;
        Ok(rows)
    })?;

    if let Some(grid) = &inputs.grid {
        run.stage("predict", |run| predict_stage(run, config, &model, grid, inputs.truth.as_ref()))?;
    }

    let mut models = vec![("model", &model)];
    if let Some((b, _)) = &baseline {
        models.push(("baseline", b));
    }
    let diagnostics = run.stage("variogram", |run| variogram_stage(run, config, &inputs.test, &models))?;
    let manifest = run.finish()?;
    Ok(RunSummary {
        manifest,
        metrics,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReportOutcome {
    Complete,
    /// Listed artifacts were missing or no longer match their hash.
    Partial(Vec<PathBuf>),
}

/// `cmd_report`: re-renders every map into `report/` and writes
/// `report/summary.txt` from the recorded artifacts, without recomputing.
pub fn cmd_report(dir: &Path) -> Result<ReportOutcome> {
    let manifest = Manifest::load(dir)?;
    let out = dir.join("report");
    std::fs::create_dir_all(out.join("images"))?;
    let mut problems = Vec::new();
    let mut summary = String::new();
    writeln!(summary, "command: {}", manifest.command)?;
    writeln!(summary, "seed: {}", manifest.seed)?;
    writeln!(summary, "status: {:?}", manifest.status)?;
    for s in &manifest.stages {
        match &s.error {
            None => writeln!(summary, "stage {}: ok", s.name)?,
            Some(e) => writeln!(summary, "stage {}: FAILED ({e})", s.name)?,
        }
    }
    for a in &manifest.artifacts {
        let path = dir.join(&a.path);
        let intact = path.exists() && crate::manifest::sha256_file(&path)? == a.sha256;
        if !intact {
            problems.push(a.path.clone());
            continue;
        }
        if a.kind == ArtifactKind::Map {
            let stem = a.path.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
            let map = read_matrix(&path)?;
            std::fs::write(out.join("images").join(format!("{stem}.svg")), render_svg(map.view(), stem))?;
        }
    }
    if manifest.artifact(METRICS_FILE).is_some() && !problems.iter().any(|p| p == Path::new(METRICS_FILE)) {
        writeln!(summary, "\ntest MAE")?;
        for r in read_metrics(&dir.join(METRICS_FILE))? {
            writeln!(summary, "  {:<24} K={:<3} {:.6}", r.model, r.k_used, r.test_mae)?;
        }
    }
    if manifest.artifact(DIAGNOSTICS_FILE).is_some() && !problems.iter().any(|p| p == Path::new(DIAGNOSTICS_FILE)) {
        let d: Diagnostics = serde_json::from_str(&std::fs::read_to_string(dir.join(DIAGNOSTICS_FILE))?)?;
        writeln!(summary, "\nsemivariograms (nugget, sill, flatness)")?;
        for s in &d.surfaces {
            let flat = s.flatness_ratio.map_or("n/a".to_string(), |r| format!("{r:.3}"));
            writeln!(summary, "  {:<24} {:.6} {:.6} {flat}", s.name, s.nugget, s.sill)?;
        }
    }
    if !problems.is_empty() {
        writeln!(summary, "\nmissing or modified artifacts")?;
        for p in &problems {
            writeln!(summary, "  {}", p.display())?;
        }
    }
    std::fs::write(out.join("summary.txt"), summary)?;
    if manifest.status != RunStatus::Ok {
        log::warn!("run status is {:?}", manifest.status);
    }
    Ok(if problems.is_empty() {
        ReportOutcome::Complete
    } else {
        ReportOutcome::Partial(problems)
    })
}

fn load_pairs(pairs: &[(PathBuf, PathBuf)]) -> Result<StationDataset> {
    let mut it = pairs.iter();
    let (s, m) = it.next().context("no input datasets")?;
    let mut ds = load_csv(s, m)?;
    for (s, m) in it {
        ds = ds.concat(&load_csv(s, m)?)?;
    }
    Ok(ds)
}

/// `decompose`: basis of the concatenated inputs.
pub fn cmd_decompose(inputs: &[(PathBuf, PathBuf)], rule: TruncationRule, dir: &Path) -> Result<Manifest> {
    let mut run = Run::start(dir, "decompose", 0)?;
    run.stage("decompose", |run| {
        let ds = load_pairs(inputs)?;
        decompose_stage(run, &ds, rule, "").map(drop)
    })?;
    run.finish()
}

/// `train`: multi-output model (and optionally the baseline) against a saved basis.
pub fn cmd_train(
    train_set: (PathBuf, PathBuf),
    val_set: (PathBuf, PathBuf),
    basis_dir: &Path,
    config: &MlpConfig,
    baseline: bool,
    dir: &Path,
) -> Result<Manifest> {
    let mut run = Run::start(dir, "train", config.seed)?;
    run.stage("train", |run| {
        let tr = load_csv(&train_set.0, &train_set.1)?;
        let va = load_csv(&val_set.0, &val_set.1)?;
        let basis = load_basis(basis_dir)?;
        let (model, report) = train(&tr, &va, &basis, config)?;
        save_trained(run, &model, &report, "model")?;
        if baseline {
            let (b, br) = train_single_output_baseline(&tr, &va, &basis, config)?;
            save_trained(run, &b, &br, "baseline")?;
        }
        Ok(())
    })?;
    run.finish()
}

/// `predict`: grid maps and/or predictions at listed station covariates.
pub fn cmd_predict(model_dir: &Path, grid: Option<&Path>, stations: Option<&Path>, snapshots: &[usize], dir: &Path) -> Result<Manifest> {
    if grid.is_none() && stations.is_none() {
        bail!("`predict` needs --grid and/or --stations");
    }
    let mut run = Run::start(dir, "predict", 0)?;
    run.stage("predict", |run| {
        let model = load_model(model_dir)?;
        if let Some(g) = grid {
            let grid = GridSpec::from_csv(g)?;
            let config = RunConfig {
                maps: crate::config::MapConfig {
                    snapshots: snapshots.to_vec(),
                    full_field: false,
                },
                ..RunConfig::from_toml("[simulation]")?
            };
            predict_stage(run, &config, &model, &grid, None)?;
        }
        if let Some(s) = stations {
            let (ids, names, coords) = read_station_covariates(s)?;
            ensure!(names == model.covariate_names(), "station covariates {names:?} do not match the model's");
            let (_, signal) = forward(&model, coords.view())?;
            let ds = StationDataset::new(
                ids,
                names,
                coords,
                stfield::dataset::TimeAxis::indices(model.n_times()),
                signal,
            )?;
            ds.write_csv(&run.path("predicted_stations.csv"), &run.path("predicted_measurements.csv"))?;
            run.add("predicted_stations.csv", ArtifactKind::Data)?;
            run.add("predicted_measurements.csv", ArtifactKind::Data)?;
        }
        Ok(())
    })?;
    run.finish()
}

fn read_station_covariates(path: &Path) -> Result<(Vec<String>, Vec<String>, Array2<f64>)> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = r.headers()?.clone();
    ensure!(header.len() >= 3 && &header[0] == "station_id", "{}: expected `station_id,x,y[,...]`", path.display());
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        for f in rec.iter().skip(1) {
            values.push(f.parse::<f64>().with_context(|| format!("{}: bad covariate `{f}`", path.display()))?);
        }
    }
    let coords = Array2::from_shape_vec((ids.len(), names.len()), values)?;
    Ok((ids, names, coords))
}

/// `variogram`: surface of a dataset, or of its residuals against a
/// predictions file in the same long format.
pub fn cmd_variogram(
    stations: &Path,
    measurements: &Path,
    predictions: Option<&Path>,
    vc: &VariogramConfig,
    seed: u64,
    dir: &Path,
) -> Result<Manifest> {
    let mut run = Run::start(dir, "variogram", seed)?;
    run.stage("variogram", |run| {
        let mut ds = load_csv(stations, measurements)?;
        if let Some(p) = predictions {
            let pred = load_csv(stations, p)?;
            ensure!(pred.times() == ds.times(), "prediction times differ from the observations");
            ds = residual_dataset(&ds, pred.values().view())?;
        }
        let v = empirical_semivariogram(&ds, &binning(&ds, vc, seed)?)?;
        v.write_csv(&run.path("variogram.csv"))?;
        run.add("variogram.csv", ArtifactKind::Variogram)?;
        run.add("variogram.csv.json", ArtifactKind::Variogram)?;
        let s = summarize("variogram", &v)?;
        log::info!("nugget {:.6}, sill {:.6}, flatness {:?}", s.nugget, s.sill, s.flatness_ratio);
        Ok(())
    })?;
    run.finish()
}
