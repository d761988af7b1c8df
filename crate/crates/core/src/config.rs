use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderConfig;
use crate::data::FRAME_RATE;
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::monitor::MonitorConfig;
use crate::score::ScoreMode;
use crate::synth::SynthSpec;

/// Monitor settings as they appear in the run config. A missing threshold is
/// taken from the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSettings {
    pub threshold: Option<f64>,
    pub window: usize,
    pub consecutive: usize,
    pub frame_rate: f64,
}

impl Default for MonitorSettings {
    fn default() -> Self {
        Self {
            threshold: None,
            window: 15,
            consecutive: 3,
            frame_rate: FRAME_RATE,
        }
    }
}

impl MonitorSettings {
    pub fn resolve(&self, fallback_threshold: f64) -> Result<MonitorConfig> {
        let cfg = MonitorConfig {
            threshold: self.threshold.unwrap_or(fallback_threshold),
            window: self.window,
            consecutive: self.consecutive,
            frame_rate: self.frame_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub out: PathBuf,
    /// Autoencoder seed; the flow uses `seed + 1`.
    pub seed: u64,
    pub autoencoder: AutoencoderConfig,
    pub flow: FlowConfig,
    pub score_mode: ScoreMode,
    /// Validation quantile used as the trigger threshold.
    pub eval_quantile: f64,
    pub monitor: MonitorSettings,
    /// Used by `gen-synth`.
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: PathBuf::from("data/synthetic"),
            out: PathBuf::from("out"),
            seed: 7,
            autoencoder: AutoencoderConfig::default(),
            flow: FlowConfig::default(),
            score_mode: ScoreMode::Nll,
            eval_quantile: 0.99,
            monitor: MonitorSettings::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn flow_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: &str| Err(Error::Config(m.into()));
        if !(self.eval_quantile > 0.0 && self.eval_quantile < 1.0) {
            return cfg("eval_quantile must lie in (0, 1)");
        }
        let ae = &self.autoencoder;
        if ae.batch_size == 0 || ae.latent_dim == 0 || ae.hidden_dims.contains(&0) {
            return cfg("autoencoder batch_size, latent_dim and hidden_dims must be positive");
        }
        let fl = &self.flow;
        if fl.batch_size == 0 || fl.hidden_dim == 0 || !(fl.s_max > 0.0) {
            return cfg("flow batch_size, hidden_dim and s_max must be positive");
        }
        if ae.latent_dim < 2 && fl.num_layers > 0 {
            return cfg("coupling layers need latent_dim of at least 2");
        }
        if let ScoreMode::Combined { alpha } = self.score_mode {
            if !(0.0..=1.0).contains(&alpha) {
                return cfg("combined score alpha must lie in [0, 1]");
            }
        }
        if self.monitor.window == 0 || self.monitor.consecutive == 0 {
            return cfg("monitor window and consecutive must be at least 1");
        }
        self.synth.validate()?;
        Ok(())
    }

    /// Parses and validates a config document. Unknown keys and malformed
    /// JSON are configuration errors carrying line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
