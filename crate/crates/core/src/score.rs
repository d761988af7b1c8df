use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderModel;
use crate::data::{AnomalyLabel, Frame, Split};
use crate::error::{Error, Result};
use crate::flow::{FlowModel, STD_FLOOR};

/// How a frame is turned into a scalar score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreMode {
    /// Negative log-likelihood of the latent under the flow.
    #[default]
    Nll,
    /// `alpha·z(NLL) + (1 − alpha)·z(reconstruction error)`, each standardized
    /// with validation statistics.
    Combined { alpha: f64 },
}

/// Validation-split statistics used by [`ScoreMode::Combined`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub nll_mean: f64,
    pub nll_std: f64,
    pub recon_mean: f64,
    pub recon_std: f64,
}

impl Standardization {
    pub fn fit(nll: &[f64], recon: &[f64]) -> Result<Self> {
        if nll.is_empty() || nll.len() != recon.len() {
            return Err(Error::Contract("standardization needs matching, non-empty score lists".into()));
        }
        let (nll_mean, nll_std) = mean_std(nll);
        let (recon_mean, recon_std) = mean_std(recon);
        Ok(Self {
            nll_mean,
            nll_std,
            recon_mean,
            recon_std,
        })
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(STD_FLOOR))
}

/// One scored frame, ready for evaluation or export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub sample_id: String,
    pub score: f64,
    pub label: Option<AnomalyLabel>,
    pub split: Split,
}

fn check_compatible(ae: &AutoencoderModel, flow: &FlowModel) -> Result<()> {
    if ae.latent_dim != flow.dim {
        return Err(Error::Config(format!(
            "autoencoder latent_dim {} does not match flow dimension {}",
            ae.latent_dim, flow.dim
        )));
    }
    Ok(())
}

/// Score from raw pixels; higher means more anomalous.
pub fn anomaly_score_pixels(
    ae: &AutoencoderModel,
    flow: &FlowModel,
    pixels: &[f64],
    mode: &ScoreMode,
    standardization: Option<&Standardization>,
) -> Result<f64> {
    check_compatible(ae, flow)?;
    let latent = ae.encode_pixels(pixels)?;
    let nll = -flow.log_prob(&latent)?;
    match mode {
        ScoreMode::Nll => Ok(nll),
        ScoreMode::Combined { alpha } => {
            let st = standardization
                .ok_or_else(|| Error::Config("combined score mode needs standardization constants".into()))?;
            let recon = ae.reconstruction_error_pixels(pixels)?;
            let zn = (nll - st.nll_mean) / st.nll_std;
            let zr = (recon - st.recon_mean) / st.recon_std;
            Ok(alpha * zn + (1.0 - alpha) * zr)
        }
    }
}

pub fn anomaly_score(
    ae: &AutoencoderModel,
    flow: &FlowModel,
    frame: &Frame,
    mode: &ScoreMode,
    standardization: Option<&Standardization>,
) -> Result<f64> {
    frame.validate()?;
    anomaly_score_pixels(ae, flow, &frame.pixels, mode, standardization)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FRAME_PIXELS;
    use crate::numeric::RngStream;

    #[test]
    fn trivial_models_score_half_log_two_pi_per_dim() {
        let ae = AutoencoderModel::zeros(FRAME_PIXELS, &[512, 128], 64);
        let flow = FlowModel::identity(64, 8, 64, 3.0);
        let frame = Frame::new(vec![0.42; FRAME_PIXELS], "x", 0, None).unwrap();
        let s = anomaly_score(&ae, &flow, &frame, &ScoreMode::Nll, None).unwrap();
        let expected = 32.0 * (2.0 * std::f64::consts::PI).ln();
        assert!((s - expected).abs() < 1e-10);
    }

    #[test]
    fn latent_mismatch_is_a_config_error() {
        let ae = AutoencoderModel::zeros(16, &[8], 4);
        let flow = FlowModel::identity(6, 2, 8, 3.0);
        let err = anomaly_score_pixels(&ae, &flow, &[0.0; 16], &ScoreMode::Nll, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn combined_mode_standardizes_both_terms() {
        let mut rng = RngStream::new(3);
        let ae = AutoencoderModel::new(16, &[8], 4, &mut rng);
        let flow = FlowModel::new(4, 2, 8, 3.0, &mut rng);
        let x: Vec<f64> = (0..16).map(|i| i as f64 / 20.0).collect();
        let nll = anomaly_score_pixels(&ae, &flow, &x, &ScoreMode::Nll, None).unwrap();
        let recon = ae.reconstruction_error_pixels(&x).unwrap();
        let st = Standardization {
            nll_mean: 1.0,
            nll_std: 2.0,
            recon_mean: 0.1,
            recon_std: 0.05,
        };
        let s = anomaly_score_pixels(&ae, &flow, &x, &ScoreMode::Combined { alpha: 0.5 }, Some(&st)).unwrap();
        let expected = 0.5 * (nll - 1.0) / 2.0 + 0.5 * (recon - 0.1) / 0.05;
        assert!((s - expected).abs() < 1e-12);
        assert!(anomaly_score_pixels(&ae, &flow, &x, &ScoreMode::Combined { alpha: 0.5 }, None).is_err());
    }

    #[test]
    fn score_is_bit_reproducible() {
        let mut rng = RngStream::new(8);
        let ae = AutoencoderModel::new(16, &[8], 4, &mut rng);
        let flow = FlowModel::new(4, 2, 8, 3.0, &mut rng);
        let x = vec![0.3; 16];
        let a = anomaly_score_pixels(&ae, &flow, &x, &ScoreMode::Nll, None).unwrap();
        let b = anomaly_score_pixels(&ae, &flow, &x, &ScoreMode::Nll, None).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
