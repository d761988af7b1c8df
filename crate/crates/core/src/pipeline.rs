//! Autoencoder + flow trained together, with the score standardization and
//! trigger threshold derived from the validation split.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{train_autoencoder, AutoencoderModel, TrainReport};
use crate::checkpoint::{AutoencoderCheckpoint, FlowCheckpoint, PipelineCheckpoint, FORMAT_VERSION};
use crate::config::RunConfig;
use crate::data::{check_normal_only, Frame};
use crate::error::{Error, Result};
use crate::eval::choose_threshold;
use crate::flow::{train_flow, FlowModel, FlowReport};
use crate::score::{anomaly_score_pixels, ScoreMode, Standardization};

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub autoencoder: AutoencoderModel,
    pub flow: FlowModel,
    pub score_mode: ScoreMode,
    pub standardization: Standardization,
    pub threshold: f64,
    pub threshold_quantile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrainReport {
    pub train_frames: usize,
    pub val_frames: usize,
    pub autoencoder: TrainReport,
    pub flow: FlowReport,
    pub standardization: Standardization,
    pub threshold: f64,
    pub threshold_quantile: f64,
    pub config: RunConfig,
}

impl Pipeline {
    pub fn score_pixels(&self, pixels: &[f64]) -> Result<f64> {
        anomaly_score_pixels(
            &self.autoencoder,
            &self.flow,
            pixels,
            &self.score_mode,
            Some(&self.standardization),
        )
    }

    pub fn score_frame(&self, frame: &Frame) -> Result<f64> {
        frame.validate()?;
        self.score_pixels(&frame.pixels)
    }

    pub fn score_frames(&self, frames: &[Frame]) -> Result<Vec<f64>> {
        frames.iter().map(|f| self.score_frame(f)).collect()
    }

    pub fn to_checkpoint(&self, cfg: &RunConfig) -> PipelineCheckpoint {
        PipelineCheckpoint {
            format_version: FORMAT_VERSION,
            model_kind: "pipeline".into(),
            latent_dim: self.autoencoder.latent_dim,
            score_mode: self.score_mode,
            standardization: self.standardization,
            threshold: self.threshold,
            threshold_quantile: self.threshold_quantile,
            autoencoder: AutoencoderCheckpoint::from_model(&self.autoencoder, &cfg.autoencoder, cfg.seed),
            flow: FlowCheckpoint::from_model(&self.flow, &cfg.flow, cfg.flow_seed()),
            config: cfg.clone(),
        }
    }

    pub fn from_checkpoint(ck: &PipelineCheckpoint) -> Result<Self> {
        ck.check()?;
        Ok(Self {
            autoencoder: ck.autoencoder.to_model()?,
            flow: ck.flow.to_model()?,
            score_mode: ck.score_mode,
            standardization: ck.standardization,
            threshold: ck.threshold,
            threshold_quantile: ck.threshold_quantile,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&crate::checkpoint::read_json(path)?)
    }
}

fn latents(ae: &AutoencoderModel, frames: &[Frame]) -> Result<Vec<Vec<f64>>> {
    frames.iter().map(|f| ae.encode(f)).collect()
}

/// Trains the autoencoder, then the flow on its train latents, then fixes the
/// standardization constants and threshold from the validation split.
pub fn train_pipeline(train: &[Frame], val: &[Frame], cfg: &RunConfig) -> Result<(Pipeline, PipelineTrainReport)> {
    cfg.validate()?;
    check_normal_only(train, Path::new(""))?;
    check_normal_only(val, Path::new(""))?;
    let (autoencoder, ae_report) = train_autoencoder(train, val, &cfg.autoencoder, cfg.seed)?;
    let train_latents = latents(&autoencoder, train)?;
    let val_latents = latents(&autoencoder, val)?;
    let (flow, flow_report) = train_flow(&train_latents, &val_latents, &cfg.flow, cfg.flow_seed())?;

    let val_nll = val_latents
        .iter()
        .map(|z| flow.log_prob(z).map(|lp| -lp))
        .collect::<Result<Vec<_>>>()?;
    let val_recon = val
        .iter()
        .map(|f| autoencoder.reconstruction_error(f))
        .collect::<Result<Vec<_>>>()?;
    let standardization = Standardization::fit(&val_nll, &val_recon)?;

    let mut pipeline = Pipeline {
        autoencoder,
        flow,
        score_mode: cfg.score_mode,
        standardization,
        threshold: f64::NAN,
        threshold_quantile: cfg.eval_quantile,
    };
    let val_scores = pipeline.score_frames(val)?;
    if let Some(i) = val_scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Scoring {
            layer: 0,
            message: format!("validation frame {} scored non-finite", val[i].source_id),
        });
    }
    pipeline.threshold = choose_threshold(&val_scores, cfg.eval_quantile)?;

    let report = PipelineTrainReport {
        train_frames: train.len(),
        val_frames: val.len(),
        autoencoder: ae_report,
        flow: flow_report,
        standardization,
        threshold: pipeline.threshold,
        threshold_quantile: cfg.eval_quantile,
        config: cfg.clone(),
    };
    Ok((pipeline, report))
}
