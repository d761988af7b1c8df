//! Deterministic synthetic corridor scenario.
//!
//! Normal frames are a vertical luminance ramp (0.2 at the top to 0.8 at the
//! bottom) plus a fixed sinusoidal wall texture, shifted horizontally by a
//! random whole number of pixels and overlaid with Gaussian pixel noise.
//! Three anomaly archetypes cover the sensory/semantic and
//! geometric/non-geometric quadrants of the taxonomy.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::labels::{write_labels, SampleLabel};
use crate::data::scenario::LABELS_FILE;
use crate::data::{encode_pgm, quantize, AnomalyLabel, AnomalyLevel, Frame, ScenarioDataset, Split, FRAME_PIXELS, FRAME_SIDE};
use crate::error::{ensure, Error, Result};
use crate::numeric::RngStream;

pub const TEXTURE_AMPLITUDE: f64 = 0.05;
pub const TEXTURE_PERIOD: f64 = 16.0;

const STREAM_NORMAL: u64 = 1;
const STREAM_ANOMALY: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    DimLight,
    Blob,
    SensorNoise,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [AnomalyKind::DimLight, AnomalyKind::Blob, AnomalyKind::SensorNoise];

    pub fn name(self) -> &'static str {
        match self {
            AnomalyKind::DimLight => "dim_light",
            AnomalyKind::Blob => "blob",
            AnomalyKind::SensorNoise => "sensor_noise",
        }
    }

    pub fn label(self) -> AnomalyLabel {
        match self {
            AnomalyKind::DimLight => AnomalyLabel::new(self.name(), AnomalyLevel::Sensory, false, false),
            AnomalyKind::Blob => AnomalyLabel::new(self.name(), AnomalyLevel::Semantic, true, true),
            AnomalyKind::SensorNoise => AnomalyLabel::new(self.name(), AnomalyLevel::Sensory, false, false),
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnomalyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown anomaly kind {s:?} (expected dim_light, blob or sensor_noise)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobParams {
    pub width: usize,
    pub height: usize,
    pub intensity: f64,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            width: 16,
            height: 16,
            intensity: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyParams {
    pub brightness_delta: f64,
    pub blob: BlobParams,
    pub noise_p: f64,
}

impl Default for AnomalyParams {
    fn default() -> Self {
        Self {
            brightness_delta: -0.4,
            blob: BlobParams::default(),
            noise_p: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalParams {
    pub noise_sigma: f64,
    pub max_shift: i64,
}

impl Default for NormalParams {
    fn default() -> Self {
        Self {
            noise_sigma: 0.02,
            max_shift: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test_normal: usize,
    /// Anomalous test frames per kind, keyed by kind name.
    pub anomaly_counts: BTreeMap<String, usize>,
    pub anomaly: AnomalyParams,
    pub normal: NormalParams,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_train: 200,
            n_val: 50,
            n_test_normal: 50,
            anomaly_counts: AnomalyKind::ALL.iter().map(|k| (k.name().to_string(), 20)).collect(),
            anomaly: AnomalyParams::default(),
            normal: NormalParams::default(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<Vec<(AnomalyKind, usize)>> {
        let p = &self.anomaly;
        ensure_config((0.0..=1.0).contains(&p.noise_p), || format!("noise_p {} outside [0, 1]", p.noise_p))?;
        ensure_config(p.brightness_delta.is_finite(), || "brightness_delta must be finite".into())?;
        ensure_config(
            (1..=FRAME_SIDE).contains(&p.blob.width) && (1..=FRAME_SIDE).contains(&p.blob.height),
            || format!("blob {}x{} does not fit a {FRAME_SIDE}x{FRAME_SIDE} frame", p.blob.width, p.blob.height),
        )?;
        ensure_config((0.0..=1.0).contains(&p.blob.intensity), || "blob intensity outside [0, 1]".into())?;
        ensure_config(self.normal.noise_sigma >= 0.0 && self.normal.max_shift >= 0, || {
            "normal noise_sigma and max_shift must be non-negative".into()
        })?;
        let mut kinds = Vec::new();
        for (name, &count) in &self.anomaly_counts {
            kinds.push((name.parse::<AnomalyKind>()?, count));
        }
        kinds.sort();
        Ok(kinds)
    }
}

fn ensure_config(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

/// Ramp plus texture with the given horizontal shift, no noise.
pub fn base_image(shift: i64) -> Vec<f64> {
    let mut px = Vec::with_capacity(FRAME_PIXELS);
    for y in 0..FRAME_SIDE {
        let ramp = 0.2 + 0.6 * y as f64 / (FRAME_SIDE - 1) as f64;
        for x in 0..FRAME_SIDE {
            let u = x as f64 - shift as f64;
            let texture = TEXTURE_AMPLITUDE * (std::f64::consts::TAU * u / TEXTURE_PERIOD).sin();
            px.push(ramp + texture);
        }
    }
    px
}

pub fn generate_normal_with(rng: &mut RngStream, t: u64, params: &NormalParams) -> Frame {
    let shift = if params.max_shift > 0 {
        rng.int_inclusive(-params.max_shift, params.max_shift)
    } else {
        0
    };
    let mut px = base_image(shift);
    if params.noise_sigma > 0.0 {
        for p in &mut px {
            *p += params.noise_sigma * rng.normal();
        }
    }
    px.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    Frame {
        pixels: px,
        source_id: format!("frame_{t:05}"),
        index: t,
        label: None,
    }
}

/// A normal frame with the default noise (σ = 0.02) and shift range (±2 px).
pub fn generate_normal(rng: &mut RngStream, t: u64) -> Frame {
    generate_normal_with(rng, t, &NormalParams::default())
}

/// Applies one anomaly archetype; returns the altered frame and its label.
pub fn apply_anomaly(frame: &Frame, kind: AnomalyKind, params: &AnomalyParams, rng: &mut RngStream) -> Result<(Frame, AnomalyLabel)> {
    frame.validate()?;
    let mut px = frame.pixels.clone();
    match kind {
        AnomalyKind::DimLight => {
            px.iter_mut()
                .for_each(|p| *p = (*p + params.brightness_delta).clamp(0.0, 1.0));
        }
        AnomalyKind::Blob => {
            let b = params.blob;
            ensure(b.width <= FRAME_SIDE && b.height <= FRAME_SIDE && b.width > 0 && b.height > 0, || {
                "blob does not fit in the frame".into()
            })?;
            let x0 = rng.int_inclusive(0, (FRAME_SIDE - b.width) as i64) as usize;
            let y0 = rng.int_inclusive(0, (FRAME_SIDE - b.height) as i64) as usize;
            for y in y0..y0 + b.height {
                for x in x0..x0 + b.width {
                    px[y * FRAME_SIDE + x] = b.intensity;
                }
            }
        }
        AnomalyKind::SensorNoise => {
            for p in &mut px {
                if rng.bernoulli(params.noise_p) {
                    *p = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
                }
            }
        }
    }
    let label = kind.label();
    let out = Frame {
        pixels: px,
        source_id: frame.source_id.clone(),
        index: frame.index,
        label: Some(label.clone()),
    };
    Ok((out, label))
}

fn quantized(mut frame: Frame) -> Frame {
    frame.pixels.iter_mut().for_each(|p| *p = quantize(*p) as f64 / 255.0);
    frame
}

fn frame_name(split: Split, index: u64) -> String {
    format!("{}/frame_{index:05}.pgm", split.dir_name())
}

/// Normal frame `index` of the stream seeded by `seed`, quantized to 8 bits.
pub fn normal_frame(seed: u64, index: u64, params: &NormalParams) -> Frame {
    let mut rng = RngStream::derive(seed, STREAM_NORMAL, index);
    quantized(generate_normal_with(&mut rng, index, params))
}

/// Anomalous frame `index`: the matching normal frame with `kind` applied.
pub fn anomalous_frame(seed: u64, index: u64, kind: AnomalyKind, normal: &NormalParams, params: &AnomalyParams) -> Result<Frame> {
    let base = normal_frame(seed, index, normal);
    let mut rng = RngStream::derive(seed, STREAM_ANOMALY, index);
    Ok(quantized(apply_anomaly(&base, kind, params, &mut rng)?.0))
}

/// Builds the whole scenario in memory (pixels already 8-bit quantized).
pub fn build_scenario(spec: &SynthSpec) -> Result<ScenarioDataset> {
    let kinds = spec.validate()?;
    let mut next = 0u64;
    let normals = |split: Split, n: usize, next: &mut u64| -> Vec<Frame> {
        (0..n)
            .map(|_| {
                let mut f = normal_frame(spec.seed, *next, &spec.normal);
                f.source_id = frame_name(split, *next);
                *next += 1;
                f
            })
            .collect()
    };
    let train = normals(Split::Train, spec.n_train, &mut next);
    let val = normals(Split::Val, spec.n_val, &mut next);
    let mut test = normals(Split::Test, spec.n_test_normal, &mut next);
    let mut taxonomy = BTreeMap::new();
    for (kind, count) in kinds {
        if count > 0 {
            taxonomy.insert(kind.name().to_string(), kind.label());
        }
        for _ in 0..count {
            let mut f = anomalous_frame(spec.seed, next, kind, &spec.normal, &spec.anomaly)?;
            f.source_id = frame_name(Split::Test, next);
            next += 1;
            test.push(f);
        }
    }
    Ok(ScenarioDataset {
        name: "synthetic".into(),
        train,
        val,
        test,
        taxonomy,
    })
}

/// Writes frames as PGM files under `root`, using each frame's `source_id`
/// as the relative path.
pub fn write_frames(root: &Path, frames: &[Frame]) -> Result<()> {
    for f in frames {
        let path = root.join(&f.source_id);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, encode_pgm(FRAME_SIDE, FRAME_SIDE, &f.pixels)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Writes a dataset in the scenario directory layout.
pub fn write_scenario(dataset: &ScenarioDataset, out: &Path) -> Result<()> {
    for split in Split::ALL {
        let dir = out.join(split.dir_name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_frames(out, dataset.split(split))?;
    }
    let labels: BTreeMap<String, SampleLabel> = dataset
        .test
        .iter()
        .map(|f| {
            let l = match &f.label {
                Some(l) => SampleLabel::Anomalous(l.clone()),
                None => SampleLabel::Normal,
            };
            (f.source_id.clone(), l)
        })
        .collect();
    let path = out.join(LABELS_FILE);
    fs::write(&path, write_labels(&labels)).map_err(|e| Error::io(&path, e))
}

/// Generates the scenario described by `spec` and writes it to `out`.
pub fn generate_scenario(spec: &SynthSpec, out: &Path) -> Result<ScenarioDataset> {
    let dataset = build_scenario(spec)?;
    write_scenario(&dataset, out)?;
    Ok(dataset)
}

/// A stream of `normal_len` normal frames followed by `anomaly_len` frames
/// carrying a sustained anomaly. Frames are named `frame_NNNNN.pgm`.
pub fn generate_stream(
    seed: u64,
    normal_len: usize,
    anomaly: Option<(AnomalyKind, usize)>,
    normal: &NormalParams,
    params: &AnomalyParams,
) -> Result<Vec<Frame>> {
    let mut frames = Vec::with_capacity(normal_len + anomaly.map_or(0, |a| a.1));
    for i in 0..normal_len as u64 {
        let mut f = normal_frame(seed, i, normal);
        f.source_id = format!("frame_{i:05}.pgm");
        frames.push(f);
    }
    if let Some((kind, len)) = anomaly {
        for i in normal_len as u64..(normal_len + len) as u64 {
            let mut f = anomalous_frame(seed, i, kind, normal, params)?;
            f.source_id = format!("frame_{i:05}.pgm");
            frames.push(f);
        }
    }
    Ok(frames)
}
