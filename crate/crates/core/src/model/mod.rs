//! Multi-output network predicting EOF spatial coefficients from covariates.
//!
//! The network's output layer holds the `K̃` coefficients of a location. A
//! frozen recomposition maps them to the full series,
//! `signal = coeffs · Φ + μ̄`, and the training loss is taken on that signal.
//! A single-output baseline (one network per coefficient, trained on the
//! coefficients themselves) is provided for comparison.

mod network;
mod optim;
mod persist;
mod train;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{StationDataset, Standardizer};
use crate::eof::TruncatedBasis;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::seeds::derive_seed;

use network::Network;

pub use persist::{load_model, save_model, MODEL_METADATA_FILE};
pub use train::{train, train_single_output_baseline, TrainReport};

/// Network and optimization settings. Activation (ELU), initialization (He
/// normal), optimizer (Nadam) and loss (MAE) are fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub batch_norm: bool,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping; `None`
    /// trains for `max_epochs`.
    pub patience: Option<usize>,
    pub max_lr: f64,
    /// The schedule starts at `max_lr / start_div` ...
    pub start_div: f64,
    /// ... and ends at `max_lr / end_div`.
    pub end_div: f64,
    pub warmup_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 6,
            width: 100,
            batch_norm: false,
            batch_size: 256,
            max_epochs: 1000,
            patience: Some(20),
            max_lr: 1e-2,
            start_div: 10.0,
            end_div: 100.0,
            warmup_fraction: 0.3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden_layers == 0 {
            return bad("hidden_layers must be at least 1");
        }
        if self.width == 0 {
            return bad("width must be at least 1");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be at least 1");
        }
        if self.patience == Some(0) {
            return bad("patience must be at least 1");
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return bad("max_lr must be positive");
        }
        if !(self.start_div >= 1.0 && self.end_div >= 1.0) {
            return bad("start_div and end_div must be at least 1");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must be in [0, 1)");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.epsilon > 0.0) {
            return bad("Nadam needs 0 ≤ β < 1 and ε > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// One network with `K̃` outputs, trained on the recomposed signal.
    MultiOutput,
    /// `K̃` one-output networks, each trained on its own coefficient.
    SingleOutputBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mae,
    /// Smooth substitute for gradient checks.
    Mse,
}

/// A trained (or freshly initialized) model with its frozen recomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    kind: ModelKind,
    config: MlpConfig,
    covariate_names: Vec<String>,
    standardizer: Standardizer,
    nets: Vec<Network>,
    temporal_bases: Array2<f64>,
    mean_series: Array1<f64>,
    basis_fingerprint: String,
}

/// Location of one parameter tensor in the flattened parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    /// Network index (always 0 for the multi-output model).
    pub net: usize,
    /// Dense layer index, 0 = first hidden layer.
    pub layer: usize,
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

impl MlpModel {
    /// Untrained multi-output model. Covariate standardization is fitted on
    /// `train`.
    pub fn initialize(config: &MlpConfig, basis: &TruncatedBasis, train: &StationDataset) -> Result<Self> {
        Self::build(ModelKind::MultiOutput, config, basis, train)
    }

    pub(crate) fn build(
        kind: ModelKind,
        config: &MlpConfig,
        basis: &TruncatedBasis,
        train: &StationDataset,
    ) -> Result<Self> {
        config.validate()?;
        if train.n_times() != basis.n_times() {
            return Err(Error::Shape(format!(
                "training data has {} time steps, basis has {}",
                train.n_times(),
                basis.n_times()
            )));
        }
        let standardizer = Standardizer::fit(train.coords())?;
        let d = train.n_covariates();
        let k = basis.k_used();
        let nets = match kind {
            ModelKind::MultiOutput => vec![Network::init(
                d,
                config.hidden_layers,
                config.width,
                k,
                config.batch_norm,
                derive_seed(config.seed, "init", 0),
            )],
            ModelKind::SingleOutputBaseline => (0..k)
                .map(|i| {
                    Network::init(
                        d,
                        config.hidden_layers,
                        config.width,
                        1,
                        config.batch_norm,
                        derive_seed(config.seed, "init", i as u64),
                    )
                })
                .collect(),
        };
        Ok(Self {
            kind,
            config: config.clone(),
            covariate_names: train.covariate_names().to_vec(),
            standardizer,
            nets,
            temporal_bases: basis.temporal_bases().to_owned(),
            mean_series: basis.mean_series().clone(),
            basis_fingerprint: basis.fingerprint(),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// The frozen `K̃ × T` recomposition matrix.
    pub fn temporal_bases(&self) -> &Array2<f64> {
        &self.temporal_bases
    }

    pub fn mean_series(&self) -> &Array1<f64> {
        &self.mean_series
    }

    pub fn basis_fingerprint(&self) -> &str {
        &self.basis_fingerprint
    }

    pub fn k_used(&self) -> usize {
        self.temporal_bases.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.temporal_bases.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.standardizer.dim()
    }

    /// Trainable parameter count over all networks.
    pub fn n_parameters(&self) -> usize {
        self.nets.iter().map(Network::n_parameters).sum()
    }

    pub fn parameter_layout(&self) -> Vec<ParamBlock> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (n, net) in self.nets.iter().enumerate() {
            let per = if net.batch_norm { 4 } else { 2 };
            for (i, p) in net.params.iter().enumerate() {
                let hidden_part = i < net.n_hidden() * per;
                let (layer, slot) = if hidden_part {
                    (i / per, i % per)
                } else {
                    (net.n_hidden(), i - net.n_hidden() * per)
                };
                let name = ["weight", "bias", "bn_scale", "bn_shift"][slot];
                out.push(ParamBlock {
                    net: n,
                    layer,
                    name,
                    offset,
                    len: p.len(),
                });
                offset += p.len();
            }
        }
        out
    }

    /// All trainable parameters flattened in [`Self::parameter_layout`] order.
    pub fn parameters(&self) -> Vec<f64> {
        self.nets
            .iter()
            .flat_map(|n| n.params.iter().flat_map(|p| p.iter().copied()))
            .collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_parameters() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.n_parameters(),
                values.len()
            )));
        }
        let mut it = values.iter();
        for net in &mut self.nets {
            for p in &mut net.params {
                p.iter_mut().for_each(|v| *v = *it.next().expect("length checked"));
            }
        }
        Ok(())
    }

    fn standardized(&self, covariates: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if covariates.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "model expects {} covariates, got {}",
                self.input_dim(),
                covariates.ncols()
            )));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite covariate".into()));
        }
        self.standardizer.transform(&covariates.to_owned())
    }

    /// Coefficients from standardized covariates (inference mode).
    fn coefficients(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        match self.kind {
            ModelKind::MultiOutput => self.nets[0].predict(x),
            ModelKind::SingleOutputBaseline => {
                let mut out = Array2::zeros((x.nrows(), self.nets.len()));
                for (k, net) in self.nets.iter().enumerate() {
                    out.column_mut(k).assign(&net.predict(x).column(0));
                }
                out
            }
        }
    }

    pub(crate) fn recompose(&self, coeffs: &Array2<f64>) -> Array2<f64> {
        coeffs.dot(&self.temporal_bases) + &self.mean_series
    }
}

/// Runs the network on raw (unstandardized) covariates and returns the
/// `N × K̃` coefficients and the `N × T` recomposed signal.
pub fn forward(model: &MlpModel, covariates: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let x = model.standardized(covariates)?;
    let coeffs = model.coefficients(x.view());
    let signal = model.recompose(&coeffs);
    Ok((coeffs, signal))
}

/// Mean absolute difference over all entries.
pub fn evaluate_mae(predictions: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> Result<f64> {
    if predictions.dim() != truth.dim() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs truth {:?}",
            predictions.dim(),
            truth.dim()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Shape("cannot evaluate an empty matrix".into()));
    }
    let sum: f64 = predictions.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPrediction {
    /// One `ny × nx` map per coefficient.
    pub coeff_maps: Vec<Array2<f64>>,
    /// `n_cells × T`, cells in grid order.
    pub field: Array2<f64>,
}

impl GridPrediction {
    /// Field at time index `j` as an `ny × nx` map.
    pub fn field_map(&self, grid: &GridSpec, j: usize) -> Array2<f64> {
        self.field
            .column(j)
            .to_owned()
            .into_shape_with_order((grid.ny, grid.nx))
            .expect("field rows match the grid")
    }
}

pub fn predict_grid(model: &MlpModel, grid: &GridSpec) -> Result<GridPrediction> {
    if grid.covariate_names() != model.covariate_names {
        return Err(Error::Shape(format!(
            "grid covariates {:?} do not match model covariates {:?}",
            grid.covariate_names(),
            model.covariate_names
        )));
    }
    let (coeffs, field) = forward(model, grid.covariates().view())?;
    let coeff_maps = coeffs
        .axis_iter(Axis(1))
        .map(|c| {
            c.to_owned()
                .into_shape_with_order((grid.ny, grid.nx))
                .expect("one coefficient per cell")
        })
        .collect();
    Ok(GridPrediction { coeff_maps, field })
}

/// Loss of the multi-output model on one batch and its gradient w.r.t. every
/// parameter, flattened as in [`MlpModel::parameters`]. Batch norm, if
/// enabled, uses the statistics of this batch, as in a training step.
pub fn loss_and_gradients(
    model: &MlpModel,
    covariates: ArrayView2<'_, f64>,
    observations: ArrayView2<'_, f64>,
    loss: LossKind,
) -> Result<(f64, Vec<f64>)> {
    if model.kind != ModelKind::MultiOutput {
        return Err(Error::Precondition(
            "loss_and_gradients applies to the multi-output model".into(),
        ));
    }
    if observations.dim() != (covariates.nrows(), model.n_times()) {
        return Err(Error::Shape(format!(
            "observations must be {}×{}, got {:?}",
            covariates.nrows(),
            model.n_times(),
            observations.dim()
        )));
    }
    let x = model.standardized(covariates)?;
    let net = &model.nets[0];
    let (out, trace) = net.forward_train(x.view());
    let (value, d_out) = train::signal_loss(&model.temporal_bases, &model.mean_series, &out, observations, loss);
    let grads = net.backward(&trace, d_out);
    Ok((value, grads.iter().flat_map(|g| g.iter().copied()).collect()))
}
