//! Stop/backtrack state machine over a stream of per-frame scores.
//!
//! Each score enters a trailing window of at most `window` values (partial at
//! stream start) and the window mean is the smoothed score. While advancing,
//! `consecutive` smoothed scores above the threshold trigger a stop; the next
//! frame switches to backtracking, which is terminal. A non-finite score
//! stops the robot immediately and is flagged as a fault in the log.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::FRAME_RATE;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub threshold: f64,
    pub window: usize,
    pub consecutive: usize,
    pub frame_rate: f64,
}

impl MonitorConfig {
    /// Defaults: 15-frame window (half a second at 30 fps), 3 consecutive exceedances.
    pub fn with_threshold(threshold: f64) -> Self {
        Self {
            threshold,
            window: 15,
            consecutive: 3,
            frame_rate: FRAME_RATE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.consecutive == 0 {
            return Err(Error::Config("monitor window and consecutive count must be at least 1".into()));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Config("monitor threshold must be finite".into()));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::Config("frame rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Advance,
    Stop,
    Backtrack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Advance,
    Stop,
    Backtrack,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Advance => "ADVANCE",
            Phase::Stop => "STOP",
            Phase::Backtrack => "BACKTRACK",
        })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Advance => "Advance",
            Action::Stop => "Stop",
            Action::Backtrack => "Backtrack",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorState {
    pub phase: Phase,
    pub window: VecDeque<f64>,
    pub consecutive_over: usize,
    pub frames_seen: u64,
    pub trigger_frame: Option<u64>,
}

impl Default for MonitorState {
    fn default() -> Self {
        Self {
            phase: Phase::Advance,
            window: VecDeque::new(),
            consecutive_over: 0,
            frames_seen: 0,
            trigger_frame: None,
        }
    }
}

/// One row of the event log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorEvent {
    pub frame_index: u64,
    pub score: f64,
    pub smoothed: f64,
    pub phase: Phase,
    pub action: Action,
    pub fault: bool,
}

impl MonitorState {
    pub fn new() -> Self {
        Self::default()
    }

    fn smoothed(&self) -> f64 {
        if self.window.is_empty() {
            f64::NAN
        } else {
            self.window.iter().sum::<f64>() / self.window.len() as f64
        }
    }

    /// Advances the machine by one frame.
    pub fn step(&mut self, score: f64, cfg: &MonitorConfig) -> MonitorEvent {
        let frame_index = self.frames_seen;
        self.frames_seen += 1;
        let fault = !score.is_finite();
        if !fault {
            self.window.push_back(score);
            while self.window.len() > cfg.window {
                self.window.pop_front();
            }
        }
        let smoothed = self.smoothed();

        let action = match self.phase {
            Phase::Advance if fault => {
                self.phase = Phase::Stop;
                self.trigger_frame = Some(frame_index);
                Action::Stop
            }
            Phase::Advance => {
                if smoothed > cfg.threshold {
                    self.consecutive_over += 1;
                } else {
                    self.consecutive_over = 0;
                }
                if self.consecutive_over >= cfg.consecutive {
                    self.phase = Phase::Stop;
                    self.trigger_frame = Some(frame_index);
                    Action::Stop
                } else {
                    Action::Advance
                }
            }
            Phase::Stop | Phase::Backtrack => {
                self.phase = Phase::Backtrack;
                Action::Backtrack
            }
        };
        MonitorEvent {
            frame_index,
            score,
            smoothed,
            phase: self.phase,
            action,
            fault,
        }
    }
}

/// Functional form of [`MonitorState::step`].
pub fn monitor_step(state: &MonitorState, score: f64, cfg: &MonitorConfig) -> (MonitorState, Action) {
    let mut next = state.clone();
    let event = next.step(score, cfg);
    (next, event.action)
}

/// Folds [`MonitorState::step`] over a whole stream.
pub fn run_monitor(scores: &[f64], cfg: &MonitorConfig) -> Result<Vec<MonitorEvent>> {
    cfg.validate()?;
    let mut state = MonitorState::new();
    Ok(scores.iter().map(|s| state.step(*s, cfg)).collect())
}

/// Frame index of the first Stop, if any.
pub fn trigger_frame(events: &[MonitorEvent]) -> Option<u64> {
    events.iter().find(|e| e.action == Action::Stop).map(|e| e.frame_index)
}

/// CSV event log: `frame_index,score,smoothed,phase,action,fault`.
pub fn event_log_csv(events: &[MonitorEvent]) -> String {
    let mut out = String::from("frame_index,score,smoothed,phase,action,fault\n");
    for e in events {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.frame_index, e.score, e.smoothed, e.phase, e.action, e.fault as u8
        ));
    }
    out
}
