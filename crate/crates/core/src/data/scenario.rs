//! Scenario directories: `<scenario>/{train,val,test}/*.pgm` plus
//! `<scenario>/labels.csv`.
//!
//! Train and val must be normal-only and the test split must mix normal and
//! labelled anomalous frames. These rules are checked on every load.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::frame::{AnomalyLabel, Frame, Split};
use super::labels::{parse_labels, SampleLabel};
use super::pgm::decode_image;
use super::resize::to_frame_pixels;
use crate::error::{Error, Result};

pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDataset {
    pub name: String,
    pub train: Vec<Frame>,
    pub val: Vec<Frame>,
    pub test: Vec<Frame>,
    /// anomaly_type → taxonomy, for every type present in the test split.
    pub taxonomy: BTreeMap<String, AnomalyLabel>,
}

impl ScenarioDataset {
    pub fn split(&self, split: Split) -> &[Frame] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Re-checks the split protocol on an in-memory dataset.
    pub fn validate(&self, root: &Path) -> Result<()> {
        for split in [Split::Train, Split::Val] {
            let frames = self.split(split);
            if frames.is_empty() {
                return Err(Error::protocol(root.join(split.dir_name()), "split is empty"));
            }
            check_normal_only(frames, root)?;
        }
        if !self.test.iter().any(|f| !f.is_anomalous()) {
            return Err(Error::protocol(root.join("test"), "test split has no normal frame"));
        }
        if !self.test.iter().any(Frame::is_anomalous) {
            return Err(Error::protocol(root.join("test"), "test split has no anomalous frame"));
        }
        for f in self.test.iter().filter_map(|f| f.label.as_ref().map(|l| (f, l))) {
            if !self.taxonomy.contains_key(&f.1.anomaly_type) {
                return Err(Error::protocol(
                    root.join(&f.0.source_id),
                    format!("anomaly type {:?} missing from taxonomy", f.1.anomaly_type),
                ));
            }
        }
        Ok(())
    }
}

/// Fails on the first anomalous frame, naming it.
pub fn check_normal_only(frames: &[Frame], root: &Path) -> Result<()> {
    match frames.iter().find(|f| f.is_anomalous()) {
        Some(f) => Err(Error::protocol(
            root.join(&f.source_id),
            "anomalous sample in a normal-only split",
        )),
        None => Ok(()),
    }
}

/// Trailing decimal digits of the file stem, e.g. `img_0042.pgm` → 42.
pub fn frame_index_from_name(name: &str) -> Option<u64> {
    let stem = name.rsplit_once('.').map_or(name, |(s, _)| s);
    let digits: String = stem
        .chars()
        .rev()
        .take_while(char::is_ascii_digit)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

/// Image files in `dir`, ordered by (frame index, name). Files without a
/// trailing number sort first with index 0.
pub fn list_frames(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("ppm"));
        if is_image && path.is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            files.push((frame_index_from_name(&name).unwrap_or(0), name, path));
        }
    }
    files.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    Ok(files.into_iter().map(|(i, _, p)| (i, p)).collect())
}

/// Reads, decodes and resizes one image file.
pub fn read_frame_pixels(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let image = decode_image(&bytes).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{} {location}", path.display()),
            message,
        },
        other => other,
    })?;
    to_frame_pixels(&image)
}

pub fn load_scenario(root: &Path) -> Result<ScenarioDataset> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "scenario directory not found"),
        ));
    }
    let labels_path = root.join(LABELS_FILE);
    let labels_bytes = fs::read(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    let mut labels = parse_labels(&labels_bytes).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{} {location}", labels_path.display()),
            message,
        },
        other => other,
    })?;

    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    let mut splits: BTreeMap<Split, Vec<Frame>> = BTreeMap::new();
    let mut taxonomy: BTreeMap<String, AnomalyLabel> = BTreeMap::new();

    for split in Split::ALL {
        let dir = root.join(split.dir_name());
        let mut frames = Vec::new();
        for (index, path) in list_frames(&dir)? {
            let file_name = path.file_name().expect("listed file").to_string_lossy();
            let key = format!("{}/{}", split.dir_name(), file_name);
            let label = match (split, labels.remove(&key)) {
                (Split::Train | Split::Val, Some(SampleLabel::Anomalous(_))) => {
                    return Err(Error::protocol(
                        root.join(&key),
                        format!("labelled anomalous but stored in the {split} split"),
                    ));
                }
                (Split::Train | Split::Val, _) => None,
                (Split::Test, Some(label)) => label.anomaly().cloned(),
                (Split::Test, None) => {
                    return Err(Error::protocol(root.join(&key), "test file has no labels.csv entry"));
                }
            };
            if let Some(l) = &label {
                match taxonomy.get(&l.anomaly_type) {
                    Some(known) if known != l => {
                        return Err(Error::protocol(
                            root.join(&key),
                            format!("anomaly type {:?} labelled with inconsistent axes", l.anomaly_type),
                        ));
                    }
                    Some(_) => {}
                    None => {
                        taxonomy.insert(l.anomaly_type.clone(), l.clone());
                    }
                }
            }
            let pixels = read_frame_pixels(&path)?;
            frames.push(Frame::new(pixels, key, index, label)?);
        }
        splits.insert(split, frames);
    }

    if let Some((key, label)) = labels.into_iter().next() {
        let message = match label {
            SampleLabel::Anomalous(_) if !key.starts_with("test/") => {
                "anomalous entry points outside the test split".to_string()
            }
            _ => "labels.csv entry has no matching image file".to_string(),
        };
        return Err(Error::protocol(root.join(key), message));
    }

    let dataset = ScenarioDataset {
        name,
        train: splits.remove(&Split::Train).unwrap_or_default(),
        val: splits.remove(&Split::Val).unwrap_or_default(),
        test: splits.remove(&Split::Test).unwrap_or_default(),
        taxonomy,
    };
    dataset.validate(root)?;
    Ok(dataset)
}
