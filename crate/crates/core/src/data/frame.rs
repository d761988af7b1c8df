use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub const FRAME_SIDE: usize = 64;
pub const FRAME_PIXELS: usize = FRAME_SIDE * FRAME_SIDE;
/// Capture rate of the camera streams, frames per second.
pub const FRAME_RATE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyLevel {
    /// Low-level, image-space deviation (brightness, noise, texture).
    Sensory,
    /// Deviation in scene content.
    Semantic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionRelevance {
    Yes,
    No,
    Unspecified,
}

/// Four-axis categorization of one anomaly type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnomalyLabel {
    pub anomaly_type: String,
    pub level: AnomalyLevel,
    pub hazard: bool,
    pub geometric: bool,
    pub mission_relevant: MissionRelevance,
}

impl AnomalyLabel {
    pub fn new(anomaly_type: impl Into<String>, level: AnomalyLevel, hazard: bool, geometric: bool) -> Self {
        Self {
            anomaly_type: anomaly_type.into(),
            level,
            hazard,
            geometric,
            mission_relevant: MissionRelevance::Unspecified,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// One 64×64 grayscale frame, pixels row-major in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pixels: Vec<f64>,
    /// Path relative to the scenario root, e.g. `test/img_0004.pgm`.
    pub source_id: String,
    /// Frame number in the 30 fps capture.
    pub index: u64,
    /// `None` for normal frames.
    pub label: Option<AnomalyLabel>,
}

impl Frame {
    pub fn new(
        pixels: Vec<f64>,
        source_id: impl Into<String>,
        index: u64,
        label: Option<AnomalyLabel>,
    ) -> Result<Self> {
        let frame = Self {
            pixels,
            source_id: source_id.into(),
            index,
            label,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.pixels.len() == FRAME_PIXELS, || {
            format!(
                "frame {} has {} pixels, expected {FRAME_PIXELS}",
                self.source_id,
                self.pixels.len()
            )
        })?;
        ensure(self.pixels.iter().all(|p| (0.0..=1.0).contains(p)), || {
            format!("frame {} has pixels outside [0, 1]", self.source_id)
        })
    }

    pub fn is_anomalous(&self) -> bool {
        self.label.is_some()
    }

    /// Seconds since the start of the stream at the nominal frame rate.
    pub fn timestamp_secs(&self) -> f64 {
        self.index as f64 / FRAME_RATE
    }
}
