//! `labels.csv` reading and writing.
//!
//! Header: `filename,label,anomaly_type,level,hazard,geometric,mission_relevant`.
//! `filename` is relative to the scenario root (`test/img_0004.pgm`); a bare
//! name without a directory refers to the test split.

use std::collections::BTreeMap;

use super::frame::{AnomalyLabel, AnomalyLevel, MissionRelevance};
use crate::error::{Error, Result};

pub const LABELS_HEADER: [&str; 7] = [
    "filename",
    "label",
    "anomaly_type",
    "level",
    "hazard",
    "geometric",
    "mission_relevant",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleLabel {
    Normal,
    Anomalous(AnomalyLabel),
}

impl SampleLabel {
    pub fn anomaly(&self) -> Option<&AnomalyLabel> {
        match self {
            SampleLabel::Normal => None,
            SampleLabel::Anomalous(l) => Some(l),
        }
    }
}

/// Maps a labels.csv filename to its scenario-relative key.
pub fn normalize_key(filename: &str) -> String {
    if filename.contains('/') {
        filename.to_string()
    } else {
        format!("test/{filename}")
    }
}

fn yes_no(token: &str, column: &str, line: u64) -> Result<bool> {
    match token {
        "yes" => Ok(true),
        "no" => Ok(false),
        other => Err(Error::parse(
            format!("line {line}"),
            format!("{column} must be yes or no, got {other:?}"),
        )),
    }
}

pub fn parse_labels(bytes: &[u8]) -> Result<BTreeMap<String, SampleLabel>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut out = BTreeMap::new();
    let mut saw_header = false;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::parse(format!("line {line}"), e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if !saw_header {
            let header: Vec<&str> = record.iter().collect();
            if header != LABELS_HEADER {
                return Err(Error::parse(
                    format!("line {line}"),
                    format!("header must be exactly {}", LABELS_HEADER.join(",")),
                ));
            }
            saw_header = true;
            continue;
        }
        if record.len() != LABELS_HEADER.len() {
            return Err(Error::parse(
                format!("line {line}"),
                format!("expected {} fields, found {}", LABELS_HEADER.len(), record.len()),
            ));
        }
        let f: Vec<&str> = record.iter().map(str::trim).collect();
        let filename = f[0];
        if filename.is_empty() {
            return Err(Error::parse(format!("line {line}"), "empty filename"));
        }
        let label = match f[1] {
            "normal" => {
                if f[2..].iter().any(|s| !s.is_empty()) {
                    return Err(Error::parse(
                        format!("line {line}"),
                        "normal rows must leave the taxonomy columns empty",
                    ));
                }
                SampleLabel::Normal
            }
            "anomalous" => {
                if f[2].is_empty() {
                    return Err(Error::parse(format!("line {line}"), "anomalous row without anomaly_type"));
                }
                let level = match f[3] {
                    "sensory" => AnomalyLevel::Sensory,
                    "semantic" => AnomalyLevel::Semantic,
                    other => {
                        return Err(Error::parse(
                            format!("line {line}"),
                            format!("level must be sensory or semantic, got {other:?}"),
                        ))
                    }
                };
                let mission_relevant = match f[6] {
                    "" | "unspecified" => MissionRelevance::Unspecified,
                    "yes" => MissionRelevance::Yes,
                    "no" => MissionRelevance::No,
                    other => {
                        return Err(Error::parse(
                            format!("line {line}"),
                            format!("mission_relevant must be yes, no or empty, got {other:?}"),
                        ))
                    }
                };
                SampleLabel::Anomalous(AnomalyLabel {
                    anomaly_type: f[2].to_string(),
                    level,
                    hazard: yes_no(f[4], "hazard", line)?,
                    geometric: yes_no(f[5], "geometric", line)?,
                    mission_relevant,
                })
            }
            other => {
                return Err(Error::parse(
                    format!("line {line}"),
                    format!("label must be normal or anomalous, got {other:?}"),
                ))
            }
        };
        if out.insert(normalize_key(filename), label).is_some() {
            return Err(Error::parse(
                format!("line {line}"),
                format!("duplicate filename {filename:?}"),
            ));
        }
    }
    if !saw_header {
        return Err(Error::parse("line 1", "missing header"));
    }
    Ok(out)
}

/// Serializes labels in key order.
pub fn write_labels(labels: &BTreeMap<String, SampleLabel>) -> String {
    let mut s = LABELS_HEADER.join(",");
    s.push('\n');
    let yn = |b: bool| if b { "yes" } else { "no" };
    for (name, label) in labels {
        match label {
            SampleLabel::Normal => s.push_str(&format!("{name},normal,,,,,\n")),
            SampleLabel::Anomalous(l) => {
                let level = match l.level {
                    AnomalyLevel::Sensory => "sensory",
                    AnomalyLevel::Semantic => "semantic",
                };
                let mission = match l.mission_relevant {
                    MissionRelevance::Yes => "yes",
                    MissionRelevance::No => "no",
                    MissionRelevance::Unspecified => "",
                };
                s.push_str(&format!(
                    "{name},anomalous,{},{level},{},{},{mission}\n",
                    l.anomaly_type,
                    yn(l.hazard),
                    yn(l.geometric)
                ));
            }
        }
    }
    s
}
