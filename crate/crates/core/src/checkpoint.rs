//! JSON checkpoints. Parameters are stored as flat decimal arrays written with
//! shortest round-trip precision, so a reloaded model is bit-identical.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{AutoencoderConfig, AutoencoderModel};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flow::{CouplingLayer, FlowConfig, FlowModel, Whitening};
use crate::numeric::DenseLayer;
use crate::score::{ScoreMode, Standardization};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderCheckpoint {
    pub format_version: u32,
    pub model_kind: String,
    pub latent_dim: usize,
    /// Widths of every layer boundary, input through latent to reconstruction.
    pub layer_dims: Vec<usize>,
    /// Encoder activations followed by decoder activations.
    pub activations: Vec<String>,
    pub parameters: Vec<f64>,
    pub train_config: AutoencoderConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowCheckpoint {
    pub format_version: u32,
    pub model_kind: String,
    pub latent_dim: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub s_max: f64,
    /// One string per coupling, `1` for pass-through dimensions.
    pub masks: Vec<String>,
    pub activations: Vec<String>,
    pub whitening_mean: Vec<f64>,
    pub whitening_std: Vec<f64>,
    pub parameters: Vec<f64>,
    pub train_config: FlowConfig,
    pub seed: u64,
}

/// Both models plus everything needed to score and threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineCheckpoint {
    pub format_version: u32,
    pub model_kind: String,
    pub latent_dim: usize,
    pub score_mode: ScoreMode,
    pub standardization: Standardization,
    pub threshold: f64,
    pub threshold_quantile: f64,
    pub autoencoder: AutoencoderCheckpoint,
    pub flow: FlowCheckpoint,
    /// Effective run configuration, embedded for reproducibility.
    pub config: RunConfig,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn check_header(version: u32, kind: &str, expected: &str) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format_version {version}, expected {FORMAT_VERSION}")));
    }
    if kind != expected {
        return Err(bad(format!("model_kind {kind:?}, expected {expected:?}")));
    }
    Ok(())
}

fn activation_tags<'a>(layers: impl Iterator<Item = &'a DenseLayer>) -> Vec<String> {
    layers.map(|l| l.activation.tag().to_string()).collect()
}

impl AutoencoderCheckpoint {
    pub fn from_model(model: &AutoencoderModel, train_config: &AutoencoderConfig, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model_kind: "autoencoder".into(),
            latent_dim: model.latent_dim,
            layer_dims: model.layer_dims(),
            activations: activation_tags(model.encoder.iter().chain(&model.decoder)),
            parameters: model.params_flat(),
            train_config: train_config.clone(),
            seed,
        }
    }

    pub fn to_model(&self) -> Result<AutoencoderModel> {
        check_header(self.format_version, &self.model_kind, "autoencoder")?;
        let dims = &self.layer_dims;
        let n = dims.len() / 2;
        let mirrored = dims.len() >= 3 && dims.len() % 2 == 1 && (0..n).all(|i| dims[i] == dims[dims.len() - 1 - i]);
        if !mirrored || dims.contains(&0) {
            return Err(bad(format!("invalid layer_dims {dims:?}")));
        }
        if dims[n] != self.latent_dim {
            return Err(bad("layer_dims does not pass through latent_dim"));
        }
        let mut model = AutoencoderModel::zeros(dims[0], &dims[1..n], self.latent_dim);
        if activation_tags(model.encoder.iter().chain(&model.decoder)) != self.activations {
            return Err(bad("activation tags do not match the autoencoder architecture"));
        }
        if self.parameters.len() != model.param_count() {
            return Err(bad(format!(
                "autoencoder has {} parameters, checkpoint stores {}",
                model.param_count(),
                self.parameters.len()
            )));
        }
        model.set_params_flat(&self.parameters).map_err(|e| bad(e.to_string()))?;
        Ok(model)
    }
}

fn mask_string(mask: &[bool]) -> String {
    mask.iter().map(|m| if *m { '1' } else { '0' }).collect()
}

fn parse_mask(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '1' => Ok(true),
            '0' => Ok(false),
            other => Err(bad(format!("mask contains {other:?}"))),
        })
        .collect()
}

impl FlowCheckpoint {
    pub fn from_model(flow: &FlowModel, train_config: &FlowConfig, seed: u64) -> Self {
        let hidden_dim = flow
            .layers
            .first()
            .map(|c| c.scale_net[0].out_dim)
            .unwrap_or(train_config.hidden_dim);
        let s_max = flow.layers.first().map(|c| c.s_max).unwrap_or(train_config.s_max);
        Self {
            format_version: FORMAT_VERSION,
            model_kind: "flow".into(),
            latent_dim: flow.dim,
            num_layers: flow.layers.len(),
            hidden_dim,
            s_max,
            masks: flow.layers.iter().map(|c| mask_string(&c.mask)).collect(),
            activations: activation_tags(flow.layers.iter().flat_map(|c| c.scale_net.iter().chain(&c.shift_net))),
            whitening_mean: flow.whitening.mean.clone(),
            whitening_std: flow.whitening.std.clone(),
            parameters: flow.params_flat(),
            train_config: train_config.clone(),
            seed,
        }
    }

    pub fn to_model(&self) -> Result<FlowModel> {
        check_header(self.format_version, &self.model_kind, "flow")?;
        if self.masks.len() != self.num_layers {
            return Err(bad(format!("{} masks for {} coupling layers", self.masks.len(), self.num_layers)));
        }
        let layers = self
            .masks
            .iter()
            .map(|m| Ok(CouplingLayer::zeros(parse_mask(m)?, self.hidden_dim, self.s_max)))
            .collect::<Result<Vec<_>>>()?;
        let mut flow = FlowModel {
            dim: self.latent_dim,
            layers,
            whitening: Whitening {
                mean: self.whitening_mean.clone(),
                std: self.whitening_std.clone(),
            },
        };
        flow.validate().map_err(|e| bad(e.to_string()))?;
        let tags = activation_tags(flow.layers.iter().flat_map(|c| c.scale_net.iter().chain(&c.shift_net)));
        if tags != self.activations {
            return Err(bad("activation tags do not match the flow architecture"));
        }
        if self.parameters.len() != flow.param_count() {
            return Err(bad(format!(
                "flow has {} parameters, checkpoint stores {}",
                flow.param_count(),
                self.parameters.len()
            )));
        }
        flow.set_params_flat(&self.parameters).map_err(|e| bad(e.to_string()))?;
        Ok(flow)
    }
}

impl PipelineCheckpoint {
    pub fn check(&self) -> Result<()> {
        check_header(self.format_version, &self.model_kind, "pipeline")?;
        if self.autoencoder.latent_dim != self.latent_dim || self.flow.latent_dim != self.latent_dim {
            return Err(bad(format!(
                "latent_dim mismatch: pipeline {}, autoencoder {}, flow {}",
                self.latent_dim, self.autoencoder.latent_dim, self.flow.latent_dim
            )));
        }
        if !self.threshold.is_finite() {
            return Err(bad("threshold is not finite"));
        }
        Ok(())
    }
}

/// Compact JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec(value).map_err(|e| bad(format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes a checkpoint compactly.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = to_json_bytes(value)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a report, pretty-printed.
pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| bad(format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint document; malformed content is a checkpoint error
/// carrying serde's line/column context.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| bad(format!("{}: {e}", path.display())))
}

pub fn save_autoencoder(path: &Path, model: &AutoencoderModel, cfg: &AutoencoderConfig, seed: u64) -> Result<()> {
    write_json(path, &AutoencoderCheckpoint::from_model(model, cfg, seed))
}

pub fn load_autoencoder(path: &Path) -> Result<AutoencoderModel> {
    read_json::<AutoencoderCheckpoint>(path)?.to_model()
}

pub fn save_flow(path: &Path, flow: &FlowModel, cfg: &FlowConfig, seed: u64) -> Result<()> {
    write_json(path, &FlowCheckpoint::from_model(flow, cfg, seed))
}

pub fn load_flow(path: &Path) -> Result<FlowModel> {
    read_json::<FlowCheckpoint>(path)?.to_model()
}
