//! Model directory layout:
//!
//! ```text
//! model.json              kind, config, standardization, shapes, fingerprint
//! phi.csv, mean.csv       frozen recomposition
//! net{n}_p{j}.csv         parameter tensor j of network n (rows × cols)
//! net{n}_bn{l}_mean.csv   moving batch-norm statistics of hidden layer l
//! net{n}_bn{l}_var.csv
//! ```
//!
//! Values are written in shortest round-trip form, so reloading is exact.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::{MlpConfig, MlpModel, ModelKind};
use crate::csvio::{read_matrix, read_vector, write_matrix, write_vector};
use crate::dataset::Standardizer;
use crate::eof::fingerprint;
use crate::error::{Error, Result};

pub const MODEL_METADATA_FILE: &str = "model.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetMeta {
    dims: Vec<usize>,
    batch_norm: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    kind: ModelKind,
    config: MlpConfig,
    covariate_names: Vec<String>,
    standardizer: Standardizer,
    k_used: usize,
    n_times: usize,
    basis_fingerprint: String,
    nets: Vec<NetMeta>,
}

pub fn save_model(dir: &Path, model: &MlpModel) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(&dir.join("phi.csv"), model.temporal_bases.view())?;
    write_vector(&dir.join("mean.csv"), model.mean_series.view())?;
    for (n, net) in model.nets.iter().enumerate() {
        for (j, p) in net.params.iter().enumerate() {
            write_matrix(&dir.join(format!("net{n}_p{j}.csv")), p.view())?;
        }
        for (l, (mean, var)) in net.running.iter().enumerate() {
            write_vector(&dir.join(format!("net{n}_bn{l}_mean.csv")), mean.view())?;
            write_vector(&dir.join(format!("net{n}_bn{l}_var.csv")), var.view())?;
        }
    }
    let meta = ModelMeta {
        kind: model.kind,
        config: model.config.clone(),
        covariate_names: model.covariate_names.clone(),
        standardizer: model.standardizer.clone(),
        k_used: model.k_used(),
        n_times: model.n_times(),
        basis_fingerprint: model.basis_fingerprint.clone(),
        nets: model
            .nets
            .iter()
            .map(|n| NetMeta {
                dims: n.dims.clone(),
                batch_norm: n.batch_norm,
            })
            .collect(),
    };
    let path = dir.join(MODEL_METADATA_FILE);
    let json = serde_json::to_string_pretty(&meta).expect("plain struct");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(dir: &Path) -> Result<MlpModel> {
    let path = dir.join(MODEL_METADATA_FILE);
    let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: ModelMeta = serde_json::from_str(&raw).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let mismatch = |what: &str| Error::Shape(format!("{what} in {} disagrees with {MODEL_METADATA_FILE}", dir.display()));

    let temporal_bases = read_matrix(&dir.join("phi.csv"))?;
    let mean_series = read_vector(&dir.join("mean.csv"))?;
    if temporal_bases.dim() != (meta.k_used, meta.n_times) || mean_series.len() != meta.n_times {
        return Err(mismatch("recomposition"));
    }
    if fingerprint(temporal_bases.view(), mean_series.view()) != meta.basis_fingerprint {
        return Err(Error::Precondition(format!(
            "recomposition in {} does not match the recorded basis fingerprint",
            dir.display()
        )));
    }
    if meta.standardizer.dim() != meta.covariate_names.len() {
        return Err(mismatch("standardization"));
    }

    let mut nets = Vec::with_capacity(meta.nets.len());
    for (n, nm) in meta.nets.iter().enumerate() {
        if nm.dims.len() < 3 || nm.dims[0] != meta.covariate_names.len() {
            return Err(mismatch("network dimensions"));
        }
        let hidden = nm.dims.len() - 2;
        let mut shapes = Vec::new();
        for l in 0..=hidden {
            shapes.push((nm.dims[l], nm.dims[l + 1]));
            shapes.push((1, nm.dims[l + 1]));
            if nm.batch_norm && l < hidden {
                shapes.push((1, nm.dims[l + 1]));
                shapes.push((1, nm.dims[l + 1]));
            }
        }
        let params = shapes
            .iter()
            .enumerate()
            .map(|(j, &shape)| {
                let p: Array2<f64> = read_matrix(&dir.join(format!("net{n}_p{j}.csv")))?;
                if p.dim() != shape {
                    return Err(mismatch(&format!("parameter net{n}_p{j}")));
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        let running = if nm.batch_norm {
            (0..hidden)
                .map(|l| {
                    let mean: Array1<f64> = read_vector(&dir.join(format!("net{n}_bn{l}_mean.csv")))?;
                    let var: Array1<f64> = read_vector(&dir.join(format!("net{n}_bn{l}_var.csv")))?;
                    if mean.len() != nm.dims[l + 1] || var.len() != nm.dims[l + 1] {
                        return Err(mismatch("batch-norm statistics"));
                    }
                    Ok((mean, var))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        nets.push(Network {
            dims: nm.dims.clone(),
            batch_norm: nm.batch_norm,
            params,
            running,
        });
    }
    let expected_outputs: Vec<usize> = match meta.kind {
        ModelKind::MultiOutput => vec![meta.k_used],
        ModelKind::SingleOutputBaseline => vec![1; meta.k_used],
    };
    if nets.iter().map(Network::output_dim).collect::<Vec<_>>() != expected_outputs {
        return Err(mismatch("network outputs"));
    }
    Ok(MlpModel {
        kind: meta.kind,
        config: meta.config,
        covariate_names: meta.covariate_names,
        standardizer: meta.standardizer,
        nets,
        temporal_bases,
        mean_series,
        basis_fingerprint: meta.basis_fingerprint,
    })
}
