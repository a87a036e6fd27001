use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::optim::{Nadam, OneCycle};
use super::{LossKind, MlpConfig, MlpModel, ModelKind};
use crate::dataset::{create, StationDataset};
use crate::eof::{project, TruncatedBasis};
use crate::error::{Error, Result};
use crate::seeds::derive_seed;

/// Per-epoch history. MAE values are in signal space for both model kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_mae: Vec<f64>,
    pub val_mae: Vec<f64>,
    /// Learning rate at the first step of each epoch.
    pub lr: Vec<f64>,
    /// Number of epochs run.
    pub stopping_epoch: usize,
    /// 1-based epoch of the lowest validation MAE.
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub wall_seconds: f64,
}

impl TrainReport {
    /// CSV `epoch,train_mae,val_mae,lr`.
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut out = create(path)?;
        let err = |e| Error::io(path, e);
        writeln!(out, "epoch,train_mae,val_mae,lr").map_err(err)?;
        for e in 0..self.train_mae.len() {
            writeln!(out, "{},{},{},{}", e + 1, self.train_mae[e], self.val_mae[e], self.lr[e]).map_err(err)?;
        }
        out.flush().map_err(err)
    }
}

/// Loss on the recomposed signal and its gradient w.r.t. the coefficients.
pub(super) fn signal_loss(
    temporal_bases: &Array2<f64>,
    mean_series: &Array1<f64>,
    coeffs: &Array2<f64>,
    observations: ArrayView2<'_, f64>,
    kind: LossKind,
) -> (f64, Array2<f64>) {
    let diff = coeffs.dot(temporal_bases) + mean_series - observations;
    let (value, d_signal) = pointwise_loss(diff, kind);
    (value, d_signal.dot(&temporal_bases.t()))
}

fn pointwise_loss(mut diff: Array2<f64>, kind: LossKind) -> (f64, Array2<f64>) {
    let n = diff.len() as f64;
    match kind {
        LossKind::Mae => {
            let value = diff.iter().map(|d| d.abs()).sum::<f64>() / n;
            // Subgradient 0 at 0.
            diff.mapv_inplace(|d| {
                if d > 0.0 {
                    1.0 / n
                } else if d < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                }
            });
            (value, diff)
        }
        LossKind::Mse => {
            let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
            diff.mapv_inplace(|d| 2.0 * d / n);
            (value, diff)
        }
    }
}

fn check_inputs(train: &StationDataset, val: &StationDataset, basis: &TruncatedBasis) -> Result<()> {
    if val.n_stations() == 0 {
        return Err(Error::Config("training needs validation stations".into()));
    }
    if train.n_stations() == 0 {
        return Err(Error::Config("training needs training stations".into()));
    }
    if train.times() != val.times() {
        return Err(Error::Shape("training and validation time axes differ".into()));
    }
    if train.n_times() != basis.n_times() {
        return Err(Error::Shape(format!(
            "data has {} time steps, basis has {}",
            train.n_times(),
            basis.n_times()
        )));
    }
    if train.covariate_names() != val.covariate_names() {
        return Err(Error::Shape("training and validation covariates differ".into()));
    }
    if !train.is_complete() || !val.is_complete() {
        return Err(Error::Precondition(
            "training data contain missing values; impute first".into(),
        ));
    }
    Ok(())
}

struct Task {
    opt: Nadam,
    rng: ChaCha8Rng,
    best: Option<Network>,
    best_score: f64,
    since_best: usize,
    active: bool,
}

/// Epoch loop shared by both model kinds. `head(task, outputs, rows)` gives
/// the batch loss and its gradient w.r.t. the network outputs; `evaluate`
/// gives signal-space (train, val) MAE and one early-stopping score per task.
fn fit(
    model: &mut MlpModel,
    x: &Array2<f64>,
    head: impl Fn(usize, &Array2<f64>, &[usize]) -> (f64, Array2<f64>),
    evaluate: impl Fn(&MlpModel) -> Result<(f64, f64, Vec<f64>)>,
) -> Result<TrainReport> {
    let start = Instant::now();
    let cfg = model.config.clone();
    let n = x.nrows();
    let batches = n.div_ceil(cfg.batch_size);
    let schedule = OneCycle {
        max_lr: cfg.max_lr,
        start_div: cfg.start_div,
        end_div: cfg.end_div,
        warmup_fraction: cfg.warmup_fraction,
        total_steps: cfg.max_epochs * batches,
    };
    let mut tasks: Vec<Task> = model
        .nets
        .iter()
        .enumerate()
        .map(|(k, net)| Task {
            opt: Nadam::new(&net.params, cfg.beta1, cfg.beta2, cfg.epsilon),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle", k as u64)),
            best: None,
            best_score: f64::INFINITY,
            since_best: 0,
            active: true,
        })
        .collect();

    let mut report = TrainReport {
        train_mae: Vec::new(),
        val_mae: Vec::new(),
        lr: Vec::new(),
        stopping_epoch: 0,
        best_epoch: 0,
        best_val_mae: f64::INFINITY,
        wall_seconds: 0.0,
    };
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.max_epochs {
        let first_step = (epoch - 1) * batches;
        for (k, task) in tasks.iter_mut().enumerate() {
            if !task.active {
                continue;
            }
            order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
            order.shuffle(&mut task.rng);
            let net = &mut model.nets[k];
            for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
                let lr = schedule.lr(first_step + b);
                let xb = x.select(Axis(0), rows);
                let (out, trace) = net.forward_train(xb.view());
                let (loss, d_out) = head(k, &out, rows);
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, lr, loss });
                }
                let grads = net.backward(&trace, d_out);
                net.update_running(&trace);
                task.opt.update(&mut net.params, &grads, lr);
            }
        }
        let (train_mae, val_mae, scores) = evaluate(model)?;
        let lr = schedule.lr(first_step);
        if !(train_mae.is_finite() && val_mae.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                lr,
                loss: train_mae,
            });
        }
        log::debug!("epoch {epoch}: train {train_mae:.6} val {val_mae:.6} lr {lr:.3e}");
        report.train_mae.push(train_mae);
        report.val_mae.push(val_mae);
        report.lr.push(lr);
        report.stopping_epoch = epoch;
        if val_mae < report.best_val_mae {
            report.best_val_mae = val_mae;
            report.best_epoch = epoch;
        }
        if let Some(patience) = cfg.patience {
            for (k, task) in tasks.iter_mut().enumerate() {
                if !task.active {
                    continue;
                }
                if scores[k] < task.best_score {
                    task.best_score = scores[k];
                    task.best = Some(model.nets[k].clone());
                    task.since_best = 0;
                } else {
                    task.since_best += 1;
                    if task.since_best >= patience {
                        task.active = false;
                    }
                }
            }
            if tasks.iter().all(|t| !t.active) {
                break;
            }
        }
    }
    for (k, task) in tasks.into_iter().enumerate() {
        if let Some(best) = task.best {
            model.nets[k] = best;
        }
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Trains the multi-output model on raw observations. With early stopping
/// the weights of the best validation epoch are returned.
pub fn train(
    train: &StationDataset,
    val: &StationDataset,
    basis: &TruncatedBasis,
    config: &MlpConfig,
) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    check_inputs(train, val, basis)?;
    let mut model = MlpModel::build(ModelKind::MultiOutput, config, basis, train)?;
    let x_train = model.standardized(train.coords().view())?;
    let x_val = model.standardized(val.coords().view())?;
    let phi = model.temporal_bases.clone();
    let mean = model.mean_series.clone();
    let y_train = train.values();
    let y_val = val.values();

    let head = |_: usize, out: &Array2<f64>, rows: &[usize]| {
        let y = y_train.select(Axis(0), rows);
        signal_loss(&phi, &mean, out, y.view(), LossKind::Mae)
    };
    let evaluate = |m: &MlpModel| {
        let t = super::evaluate_mae(m.recompose(&m.coefficients(x_train.view())).view(), y_train.view())?;
        let v = super::evaluate_mae(m.recompose(&m.coefficients(x_val.view())).view(), y_val.view())?;
        Ok((t, v, vec![v]))
    };
    let report = fit(&mut model, &x_train, head, evaluate)?;
    Ok((model, report))
}

/// Trains one network per coefficient on the projected training
/// coefficients. Each network stops early on its own validation
/// coefficient MAE; the report still tracks signal-space MAE.
pub fn train_single_output_baseline(
    train: &StationDataset,
    val: &StationDataset,
    basis: &TruncatedBasis,
    config: &MlpConfig,
) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    check_inputs(train, val, basis)?;
    let mut model = MlpModel::build(ModelKind::SingleOutputBaseline, config, basis, train)?;
    let x_train = model.standardized(train.coords().view())?;
    let x_val = model.standardized(val.coords().view())?;
    let alpha_train = project(train.values().view(), basis)?;
    let alpha_val = project(val.values().view(), basis)?;
    let y_train = train.values();
    let y_val = val.values();

    let head = |k: usize, out: &Array2<f64>, rows: &[usize]| {
        let target = alpha_train.column(k).select(Axis(0), rows).insert_axis(Axis(1));
        pointwise_loss(out - &target, LossKind::Mae)
    };
    let evaluate = |m: &MlpModel| {
        let c_train = m.coefficients(x_train.view());
        let c_val = m.coefficients(x_val.view());
        let t = super::evaluate_mae(m.recompose(&c_train).view(), y_train.view())?;
        let v = super::evaluate_mae(m.recompose(&c_val).view(), y_val.view())?;
        let scores = (0..m.k_used())
            .map(|k| {
                let d = &c_val.column(k) - &alpha_val.column(k);
                d.iter().map(|x| x.abs()).sum::<f64>() / d.len() as f64
            })
            .collect();
        Ok((t, v, scores))
    };
    let report = fit(&mut model, &x_train, head, evaluate)?;
    Ok((model, report))
}
