//! Mission scenario: payloads, their access windows, sunlight episodes and
//! ground-station passes. All times are seconds since the scenario epoch.

pub(crate) mod io;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{LoadProfile, LoadSegment};

pub use io::{
    load_scenario, load_scenario_dir, read_passes_csv, read_sunlight_csv, read_windows_csv,
    write_passes_csv, write_scenario_dir, write_sunlight_csv, write_windows_csv, ScenarioFiles,
    ScenarioHeader,
};
pub use synth::{synthesize_passes, SynthConfig};

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}:{column}: {message}")]
    Parse {
        file: String,
        line: u64,
        column: u64,
        message: String,
    },
    #[error("{file}: {message}")]
    Invalid { file: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadDef {
    pub name: String,
    /// Current drawn while active, amperes.
    #[serde(rename = "power_a")]
    pub power_draw: f64,
    #[serde(rename = "reward")]
    pub reward_per_window: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_group: Option<String>,
}

/// An all-or-nothing payload opportunity.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskWindow {
    pub id: String,
    pub payload: String,
    pub start: f64,
    pub end: f64,
    /// Overrides the payload's default reward when set.
    pub reward: Option<f64>,
}

impl TaskWindow {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SunlightEpisode {
    pub start: f64,
    pub end: f64,
    /// Charging current while sunlit, amperes.
    pub infeed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundPass {
    pub station: String,
    pub start: f64,
    pub end: f64,
    pub max_elevation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub epoch: DateTime<Utc>,
    pub payloads: Vec<PayloadDef>,
    pub windows: Vec<TaskWindow>,
    pub sunlight: Vec<SunlightEpisode>,
    pub passes: Vec<GroundPass>,
    /// Always-on platform draw, amperes.
    pub background_load: f64,
    /// Extra draw while a ground station is in view (UHF transceiver).
    pub pass_load: f64,
    pub soc_floor: f64,
    /// Believed state of charge at the epoch.
    pub initial_soc: f64,
}

impl Scenario {
    pub fn payload(&self, name: &str) -> Option<&PayloadDef> {
        self.payloads.iter().find(|p| p.name == name)
    }

    pub fn window(&self, id: &str) -> Option<&TaskWindow> {
        self.windows.iter().find(|w| w.id == id)
    }

    pub fn window_reward(&self, window: &TaskWindow) -> f64 {
        window
            .reward
            .or_else(|| self.payload(&window.payload).map(|p| p.reward_per_window))
            .unwrap_or(0.0)
    }

    pub fn window_draw(&self, window: &TaskWindow) -> f64 {
        self.payload(&window.payload).map_or(0.0, |p| p.power_draw)
    }

    pub fn window_group(&self, window: &TaskWindow) -> Option<&str> {
        self.payload(&window.payload)
            .and_then(|p| p.exclusion_group.as_deref())
    }

    /// Background, pass and sunlight contributions over `[from, to]`.
    pub fn base_contributions(&self, from: f64, to: f64) -> Vec<LoadSegment> {
        let mut out = vec![LoadSegment {
            start: from,
            end: to,
            load: self.background_load,
        }];
        for p in &self.passes {
            out.push(LoadSegment {
                start: p.start.max(from),
                end: p.end.min(to),
                load: self.pass_load,
            });
        }
        for s in &self.sunlight {
            out.push(LoadSegment {
                start: s.start.max(from),
                end: s.end.min(to),
                load: -s.infeed,
            });
        }
        out.retain(|s| s.end > s.start);
        out
    }

    /// Net battery load with no payload active over `[from, to]`.
    pub fn base_profile(&self, from: f64, to: f64) -> LoadProfile {
        LoadProfile::superpose(self.base_contributions(from, to))
    }

    /// Latest instant covered by any scenario element.
    pub fn span_end(&self) -> f64 {
        let w = self.windows.iter().map(|w| w.end);
        let s = self.sunlight.iter().map(|s| s.end);
        let p = self.passes.iter().map(|p| p.end);
        w.chain(s).chain(p).fold(0.0, f64::max)
    }

    /// Checks every scenario invariant, naming the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.soc_floor) {
            return Err(format!("soc_floor must lie in [0, 1), got {}", self.soc_floor));
        }
        if !(0.0..=1.0).contains(&self.initial_soc) {
            return Err(format!("initial_soc must lie in [0, 1], got {}", self.initial_soc));
        }
        if !(self.background_load.is_finite() && self.pass_load.is_finite()) {
            return Err("background and pass loads must be finite".into());
        }
        let mut names = BTreeSet::new();
        for p in &self.payloads {
            if !names.insert(p.name.as_str()) {
                return Err(format!("duplicate payload name '{}'", p.name));
            }
            if !(p.power_draw >= 0.0 && p.power_draw.is_finite()) {
                return Err(format!("payload '{}' has invalid power_a {}", p.name, p.power_draw));
            }
            if !(p.reward_per_window >= 0.0 && p.reward_per_window.is_finite()) {
                return Err(format!("payload '{}' has invalid reward {}", p.name, p.reward_per_window));
            }
        }
        let mut ids = BTreeSet::new();
        for w in &self.windows {
            if !ids.insert(w.id.as_str()) {
                return Err(format!("duplicate window id '{}'", w.id));
            }
            if !(w.start.is_finite() && w.end.is_finite()) || w.end <= w.start {
                return Err(format!("window '{}' must satisfy start < end", w.id));
            }
            if !names.contains(w.payload.as_str()) {
                return Err(format!("window '{}' references unknown payload '{}'", w.id, w.payload));
            }
            if let Some(r) = w.reward {
                if !(r >= 0.0 && r.is_finite()) {
                    return Err(format!("window '{}' has invalid reward {r}", w.id));
                }
            }
        }
        for (i, s) in self.sunlight.iter().enumerate() {
            if s.end <= s.start {
                return Err(format!("sunlight episode {} must satisfy start < end", i + 1));
            }
            if !(s.infeed >= 0.0 && s.infeed.is_finite()) {
                return Err(format!("sunlight episode {} has negative infeed", i + 1));
            }
        }
        for (i, p) in self.passes.iter().enumerate() {
            if p.end <= p.start {
                return Err(format!("pass {} ({}) must satisfy start < end", i + 1, p.station));
            }
            if !(0.0..=90.0).contains(&p.max_elevation) {
                return Err(format!(
                    "pass {} ({}) has max elevation {} outside [0, 90]",
                    i + 1,
                    p.station,
                    p.max_elevation
                ));
            }
        }
        Ok(())
    }

    /// Sorts windows, sunlight and passes by start time (ties by id/station).
    pub fn sort(&mut self) {
        self.windows
            .sort_by(|a, b| a.start.total_cmp(&b.start).then_with(|| a.id.cmp(&b.id)));
        self.sunlight.sort_by(|a, b| a.start.total_cmp(&b.start));
        self.passes.sort_by(|a, b| {
            a.start
                .total_cmp(&b.start)
                .then_with(|| a.station.cmp(&b.station))
        });
    }

    /// Window counts per payload, for reports.
    pub fn window_counts(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for w in &self.windows {
            *out.entry(w.payload.as_str()).or_insert(0) += 1;
        }
        out
    }
}

/// Splits a window into back-to-back chunks of exactly `chunk` seconds,
/// dropping any shorter remainder. Child ids are `<parent>.<k>`, `k` from 1.
pub fn partition_window(window: &TaskWindow, chunk: f64) -> Vec<TaskWindow> {
    assert!(chunk > 0.0, "chunk length must be positive");
    let count = ((window.end - window.start) / chunk).floor().max(0.0) as usize;
    (0..count)
        .map(|k| TaskWindow {
            id: format!("{}.{}", window.id, k + 1),
            payload: window.payload.clone(),
            start: window.start + k as f64 * chunk,
            end: window.start + (k + 1) as f64 * chunk,
            reward: window.reward,
        })
        .collect()
}

/// Passes whose maximum elevation is strictly above `min_elevation`.
pub fn filter_passes(passes: &[GroundPass], min_elevation: f64) -> Vec<GroundPass> {
    passes
        .iter()
        .filter(|p| p.max_elevation > min_elevation)
        .cloned()
        .collect()
}
