//! Checkpoint container: weights, optimizer moments and the run configuration.

use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bodymodel::BodyModel;
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Tensor};
use crate::synthdata::{read_container_header, sha256_tag, verify_payload};

use super::config::RunConfig;
use super::model::TemporalModel;

pub const CHECKPOINT_MAGIC: &str = "TCMR-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Epochs completed when these weights were taken.
    pub epoch: usize,
    pub best_val_pa_mpjpe: Option<f64>,
    pub learning_rate: f64,
    pub mean_theta: Vec<f64>,
    pub names: Vec<String>,
    pub weights: Vec<Tensor>,
    pub adam: Vec<AdamState>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    adam_steps: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    format_version: u32,
    config: RunConfig,
    epoch: usize,
    best_val_pa_mpjpe: Option<f64>,
    learning_rate: f64,
    adam: AdamConfig,
    mean_theta_len: usize,
    tensors: Vec<TensorEntry>,
    payload_bytes: u64,
    checksum: String,
}

impl Checkpoint {
    pub fn from_model(
        model: &TemporalModel,
        config: &RunConfig,
        adam: &[AdamState],
        epoch: usize,
        best_val_pa_mpjpe: Option<f64>,
        learning_rate: f64,
    ) -> Self {
        Self {
            config: config.clone(),
            epoch,
            best_val_pa_mpjpe,
            learning_rate,
            mean_theta: model.regressor.mean.data().to_vec(),
            names: model.params.names().to_vec(),
            weights: model.params.tensors().to_vec(),
            adam: adam.to_vec(),
        }
    }

    /// Rebuilds the network described by the stored configuration and loads the weights.
    pub fn to_model(&self, body: Arc<BodyModel>) -> Result<TemporalModel> {
        let mut model = TemporalModel::new(
            &self.config.temporal,
            &self.config.regressor,
            body,
            &self.mean_theta,
            self.config.seed,
        )?;
        if model.params.names() != self.names.as_slice() {
            return Err(Error::Incompatible {
                what: "checkpoint parameter layout".into(),
                expected: model.params.names().join(","),
                found: self.names.join(","),
            });
        }
        model.params.load_values(self.weights.clone())?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload = Vec::new();
        let mut put = |values: &[f64]| {
            for v in values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        put(&self.mean_theta);
        for t in &self.weights {
            put(t.data());
        }
        for s in &self.adam {
            put(s.m.data());
        }
        for s in &self.adam {
            put(s.v.data());
        }
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            epoch: self.epoch,
            best_val_pa_mpjpe: self.best_val_pa_mpjpe,
            learning_rate: self.learning_rate,
            adam: self
                .adam
                .first()
                .map_or_else(AdamConfig::default, |s| s.config),
            mean_theta_len: self.mean_theta.len(),
            tensors: self
                .names
                .iter()
                .zip(&self.weights)
                .zip(&self.adam)
                .map(|((n, t), s)| TensorEntry {
                    name: n.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                    adam_steps: s.step_count,
                })
                .collect(),
            payload_bytes: payload.len() as u64,
            checksum: sha256_tag(&payload),
        };
        let json = serde_json::to_string(&header)?;
        let mut file =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let write = |f: &mut std::io::BufWriter<std::fs::File>| -> std::io::Result<()> {
            writeln!(f, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
            writeln!(f, "{json}")?;
            f.write_all(&payload)?;
            f.flush()
        };
        write(&mut file).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let h: CheckpointHeader =
            read_container_header(&mut reader, path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let mut payload = Vec::new();
        reader
            .read_to_end(&mut payload)
            .map_err(|e| Error::io(path, e))?;
        verify_payload(path, &payload, h.payload_bytes, &h.checksum)?;
        let scalars: usize = h.tensors.iter().map(|t| t.rows * t.cols).sum();
        if payload.len() != 8 * (h.mean_theta_len + 3 * scalars) {
            return Err(Error::format(
                path,
                "payload size does not match the tensor table",
            ));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mean_theta: Vec<f64> = values.by_ref().take(h.mean_theta_len).collect();
        let mut take = |rows: usize, cols: usize| -> Tensor {
            Tensor::from_vec(rows, cols, values.by_ref().take(rows * cols).collect())
                .expect("sized by header")
        };
        let weights: Vec<Tensor> = h.tensors.iter().map(|t| take(t.rows, t.cols)).collect();
        let ms: Vec<Tensor> = h.tensors.iter().map(|t| take(t.rows, t.cols)).collect();
        let vs: Vec<Tensor> = h.tensors.iter().map(|t| take(t.rows, t.cols)).collect();
        let adam = ms
            .into_iter()
            .zip(vs)
            .zip(&h.tensors)
            .map(|((m, v), t)| AdamState {
                m,
                v,
                step_count: t.adam_steps,
                config: h.adam,
            })
            .collect();
        Ok(Self {
            config: h.config,
            epoch: h.epoch,
            best_val_pa_mpjpe: h.best_val_pa_mpjpe,
            learning_rate: h.learning_rate,
            mean_theta,
            names: h.tensors.iter().map(|t| t.name.clone()).collect(),
            weights,
            adam,
        })
    }
}
