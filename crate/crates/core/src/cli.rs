//! `hazard` command-line entry point.
//!
//! Exit codes: 0 ok, 1 other failure, 2 configuration, 3 I/O,
//! 4 dataset protocol or data parse, 5 checkpoint.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_json, write_json, write_json_pretty, PipelineCheckpoint};
use crate::config::RunConfig;
use crate::data::{list_frames, load_scenario, read_frame_pixels, Split, FRAME_PIXELS};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::monitor::{event_log_csv, run_monitor, trigger_frame, MonitorConfig};
use crate::pipeline::{train_pipeline, Pipeline};
use crate::score::ScoredSample;
use crate::synth::generate_scenario;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const MONITOR_LOG_FILE: &str = "monitor_log.csv";

#[derive(Debug, Parser)]
#[command(name = "hazard", version, about = "Anomaly detection for robot camera streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Run config JSON; defaults are used for missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario directory (overrides the config).
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed (overrides both the training and the synthetic seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic scenario to --out (or the config's scenario path).
    GenSynth(Common),
    /// Train autoencoder and flow on the scenario's normal splits.
    Train(Common),
    /// Score the test split and report ROC AUC.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Pipeline checkpoint (default: <out>/checkpoint.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the stop/backtrack monitor over a directory of frames.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Pipeline checkpoint (default: <out>/checkpoint.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Frame directory (default: <scenario>/test).
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Cap processing at the configured frame rate.
        #[arg(long)]
        realtime: bool,
    },
    /// Print the effective config as JSON.
    PrintConfig(Common),
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Io { .. } => 3,
        Error::Protocol { .. } | Error::Parse { .. } => 4,
        Error::Checkpoint(_) => 5,
        _ => 1,
    }
}

fn effective_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = &common.scenario {
        cfg.scenario = s.clone();
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_gen_synth(common: &Common) -> Result<()> {
    let cfg = effective_config(common)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.scenario.clone());
    let ds = generate_scenario(&cfg.synth, &out)?;
    let anomalous = ds.test.iter().filter(|f| f.is_anomalous()).count();
    println!(
        "wrote {}: train {}, val {}, test {} ({} normal, {} anomalous, {} types)",
        out.display(),
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        ds.test.len() - anomalous,
        anomalous,
        ds.taxonomy.len()
    );
    Ok(())
}

fn cmd_train(common: &Common) -> Result<()> {
    let cfg = effective_config(common)?;
    let started = Instant::now();
    let ds = load_scenario(&cfg.scenario)?;
    eprintln!(
        "loaded {}: train {}, val {}, test {}",
        cfg.scenario.display(),
        ds.train.len(),
        ds.val.len(),
        ds.test.len()
    );
    let (pipeline, report) = train_pipeline(&ds.train, &ds.val, &cfg)?;
    if let Some(w) = &report.autoencoder.warning {
        eprintln!("warning: {w}");
    }
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join(CHECKPOINT_FILE), &pipeline.to_checkpoint(&cfg))?;
    write_json_pretty(&cfg.out.join(TRAIN_REPORT_FILE), &report)?;
    println!(
        "trained in {:.1}s: autoencoder val MSE {:.6}, flow val NLL {:.4} (epoch {}), threshold {:.4}",
        started.elapsed().as_secs_f64(),
        report.autoencoder.val_loss.last().copied().unwrap_or(f64::NAN),
        report.flow.val_nll.get(report.flow.selected_epoch.saturating_sub(1)).copied().unwrap_or(f64::NAN),
        report.flow.selected_epoch,
        report.threshold
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(PipelineCheckpoint, Pipeline)> {
    let ck: PipelineCheckpoint = read_json(path)?;
    let pipeline = Pipeline::from_checkpoint(&ck)?;
    if pipeline.autoencoder.input_dim != FRAME_PIXELS {
        return Err(Error::Checkpoint(format!(
            "autoencoder expects {} inputs, frames have {FRAME_PIXELS}",
            pipeline.autoencoder.input_dim
        )));
    }
    Ok((ck, pipeline))
}

/// What `eval` writes to `eval_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub scenario: String,
    pub checkpoint_threshold: f64,
    pub report: EvalReport,
    pub config: RunConfig,
}

fn scores_csv(samples: &[ScoredSample]) -> String {
    let mut out = String::from("sample_id,split,label,anomaly_type,score\n");
    for s in samples {
        let (label, kind) = match &s.label {
            Some(l) => ("anomalous", l.anomaly_type.as_str()),
            None => ("normal", ""),
        };
        let _ = writeln!(out, "{},{},{},{},{}", s.sample_id, s.split, label, kind, s.score);
    }
    out
}

fn format_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>6} {:>8}", "group", "n", "AUC");
    let _ = writeln!(out, "{:<24} {:>6} {:>8.4}", "overall", report.anomalous_count, report.overall_auc);
    for (k, g) in &report.per_type {
        let _ = writeln!(out, "{:<24} {:>6} {:>8.4}", format!("type {k}"), g.anomalous, g.auc);
    }
    for (k, g) in &report.per_axis {
        let _ = writeln!(out, "{:<24} {:>6} {:>8.4}", k, g.anomalous, g.auc);
    }
    out
}

fn cmd_eval(common: &Common, checkpoint: Option<&Path>) -> Result<()> {
    let cfg = effective_config(common)?;
    let ck_path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.out.join(CHECKPOINT_FILE));
    let (_, pipeline) = load_checkpoint(&ck_path)?;
    let ds = load_scenario(&cfg.scenario)?;
    let test = ds
        .test
        .iter()
        .map(|f| {
            Ok(ScoredSample {
                sample_id: f.source_id.clone(),
                score: pipeline.score_frame(f)?,
                label: f.label.clone(),
                split: Split::Test,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let val_scores = pipeline.score_frames(&ds.val)?;
    let report = evaluate(&test, &ds.taxonomy, &val_scores, cfg.eval_quantile)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", format_table(&report));
    let output = EvalOutput {
        scenario: ds.name.clone(),
        checkpoint_threshold: pipeline.threshold,
        report,
        config: cfg.clone(),
    };
    create_dir(&cfg.out)?;
    write_json_pretty(&cfg.out.join(EVAL_REPORT_FILE), &output)?;
    write_text(&cfg.out.join(SCORES_FILE), &scores_csv(&test))
}

fn cmd_simulate(common: &Common, checkpoint: Option<&Path>, frames: Option<&Path>, realtime: bool) -> Result<()> {
    let cfg = effective_config(common)?;
    let ck_path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.out.join(CHECKPOINT_FILE));
    let (_, pipeline) = load_checkpoint(&ck_path)?;
    let dir = frames.map(Path::to_path_buf).unwrap_or_else(|| cfg.scenario.join("test"));
    let files = list_frames(&dir)?;
    let monitor: MonitorConfig = cfg.monitor.resolve(pipeline.threshold)?;

    let period = Duration::from_secs_f64(1.0 / monitor.frame_rate);
    let start = Instant::now();
    let mut scores = Vec::with_capacity(files.len());
    for (i, (_, path)) in files.iter().enumerate() {
        let score = match read_frame_pixels(path).and_then(|px| pipeline.score_pixels(&px)) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("warning: frame {} unusable ({e}); monitor fails safe", path.display());
                f64::NAN
            }
        };
        scores.push(score);
        if realtime {
            let due = period * (i as u32 + 1);
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                thread::sleep(wait);
            }
        }
    }
    let events = run_monitor(&scores, &monitor)?;
    create_dir(&cfg.out)?;
    write_text(&cfg.out.join(MONITOR_LOG_FILE), &event_log_csv(&events))?;
    match trigger_frame(&events) {
        Some(t) => {
            let e = &events[t as usize];
            println!(
                "trigger at frame {t} ({}, t={:.3}s, smoothed {:.4} > threshold {:.4}{})",
                files[t as usize].1.display(),
                t as f64 / monitor.frame_rate,
                e.smoothed,
                monitor.threshold,
                if e.fault { ", fault" } else { "" }
            );
        }
        None => println!("no trigger over {} frames (threshold {:.4})", events.len(), monitor.threshold),
    }
    Ok(())
}

fn cmd_print_config(common: &Common) -> Result<()> {
    print!("{}", effective_config(common)?.to_json_pretty());
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynth(c) => cmd_gen_synth(c),
        Command::Train(c) => cmd_train(c),
        Command::Eval { common, checkpoint } => cmd_eval(common, checkpoint.as_deref()),
        Command::Simulate {
            common,
            checkpoint,
            frames,
            realtime,
        } => cmd_simulate(common, checkpoint.as_deref(), frames.as_deref(), *realtime),
        Command::PrintConfig(c) => cmd_print_config(c),
    }
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AnomalyLabel;
    use crate::data::AnomalyLevel;

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::io("p", std::io::Error::other("x"))), 3);
        assert_eq!(exit_code(&Error::protocol("p", "x")), 4);
        assert_eq!(exit_code(&Error::parse("l", "x")), 4);
        assert_eq!(exit_code(&Error::Checkpoint("x".into())), 5);
        assert_eq!(exit_code(&Error::Eval("x".into())), 1);
    }

    #[test]
    fn seed_flag_overrides_both_seeds() {
        let c = effective_config(&Common {
            seed: Some(99),
            ..Common::default()
        })
        .unwrap();
        assert_eq!((c.seed, c.synth.seed), (99, 99));
    }

    #[test]
    fn scores_csv_layout() {
        let rows = [
            ScoredSample {
                sample_id: "test/a.pgm".into(),
                score: 1.5,
                label: None,
                split: Split::Test,
            },
            ScoredSample {
                sample_id: "test/b.pgm".into(),
                score: -2.0,
                label: Some(AnomalyLabel::new("blob", AnomalyLevel::Semantic, true, true)),
                split: Split::Test,
            },
        ];
        assert_eq!(
            scores_csv(&rows),
            "sample_id,split,label,anomaly_type,score\ntest/a.pgm,test,normal,,1.5\ntest/b.pgm,test,anomalous,blob,-2\n"
        );
    }
}
