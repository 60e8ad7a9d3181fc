//! The pass-driven replanning loop.
//!
//! At every ground pass that clears the elevation threshold the loop pulls
//! the telemetry downlinked so far, corrects its battery belief, plans the
//! next interval from the end of the pass and tries to upload the result.
//! A failed or rejected upload leaves the previous plan running.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Deserialize;
use thiserror::Error;

use crate::battery::{soc, BatteryParams, KibamState};
use crate::estimator::{propagate_to, reconcile, EstimateError, EstimatorConfig, SocEstimate, TelemetryLog};
use crate::mission::{filter_passes, GroundPass, Scenario};
use crate::scheduler::{
    check_profile, induced_profile, plan_with, tasks_to_segments, CommittedTask, PlanOptions,
    Schedule, ScheduledTask, TracePoint,
};

pub const RUNLOG_HEADER: [&str; 7] = [
    "pass_start_s",
    "station",
    "max_el_deg",
    "plan_id",
    "outcome",
    "correction",
    "pred_soc",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FlightPlan {
    pub plan_id: String,
    /// Instant from which this plan's own tasks take over.
    pub valid_from: f64,
    pub schedule: Schedule,
    pub supersedes: Option<String>,
}

impl FlightPlan {
    /// Tasks starting at or after `t`.
    pub fn tasks_from(&self, t: f64) -> impl Iterator<Item = &ScheduledTask> {
        self.schedule.tasks.iter().filter(move |task| task.start >= t)
    }
}

/// Combines the running plan with a freshly uploaded one.
///
/// Tasks of `active` starting before `incoming.valid_from` stay, including
/// any that straddle it; the rest comes from `incoming`, minus tasks already
/// kept under the same window id.
pub fn merge_plans(active: &FlightPlan, incoming: &FlightPlan) -> FlightPlan {
    let cut = incoming.valid_from;
    let mut tasks: Vec<ScheduledTask> = active
        .schedule
        .tasks
        .iter()
        .filter(|t| t.start < cut)
        .cloned()
        .collect();
    let kept: BTreeSet<String> = tasks.iter().map(|t| t.window_id.clone()).collect();
    tasks.extend(
        incoming
            .tasks_from(cut)
            .filter(|t| !kept.contains(&t.window_id))
            .cloned(),
    );
    tasks.sort_by(|x, y| x.start.total_cmp(&y.start).then_with(|| x.window_id.cmp(&y.window_id)));

    let mut trace: Vec<TracePoint> = active
        .schedule
        .trace
        .iter()
        .filter(|p| p.time < incoming.schedule.t0)
        .copied()
        .collect();
    trace.extend(incoming.schedule.trace.iter().copied());

    FlightPlan {
        plan_id: incoming.plan_id.clone(),
        valid_from: cut,
        schedule: Schedule {
            t0: active.schedule.t0.min(incoming.schedule.t0),
            horizon_end: active.schedule.horizon_end.max(incoming.schedule.horizon_end),
            total_reward: tasks.iter().map(|t| t.reward).fold(0.0, |acc, r| acc + r),
            tasks,
            trace,
            heuristic: active.schedule.heuristic || incoming.schedule.heuristic,
            stats: incoming.schedule.stats,
        },
        supersedes: Some(active.plan_id.clone()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectRule {
    UnknownWindow,
    OutsideWindow,
    ExclusionConflict,
    BelowFloor,
    Depleted,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{rule:?} at t = {at:.3} s: {detail}")]
pub struct Rejection {
    pub rule: RejectRule,
    pub at: f64,
    pub detail: String,
}

/// Independent replay of a plan before upload.
///
/// Checks, in order: every task lies inside a scenario window with its id,
/// no two overlapping tasks share an exclusion group, and the load from
/// `initial.time` to the plan's horizon keeps the battery above `soc_floor`.
pub fn plausibility_check(
    plan: &FlightPlan,
    scenario: &Scenario,
    params: &BatteryParams,
    initial: &KibamState,
    soc_floor: f64,
) -> Result<(), Rejection> {
    let tasks = &plan.schedule.tasks;
    for t in tasks {
        let Some(w) = scenario.window(&t.window_id) else {
            return Err(Rejection {
                rule: RejectRule::UnknownWindow,
                at: t.start,
                detail: format!("no window '{}'", t.window_id),
            });
        };
        if t.start < w.start || t.end > w.end || t.start >= t.end || t.payload != w.payload {
            return Err(Rejection {
                rule: RejectRule::OutsideWindow,
                at: t.start,
                detail: format!("task '{}' leaves its access window", t.window_id),
            });
        }
    }
    for (i, x) in tasks.iter().enumerate() {
        let gx = scenario.payload(&x.payload).and_then(|p| p.exclusion_group.as_deref());
        let Some(gx) = gx else { continue };
        for y in &tasks[i + 1..] {
            let gy = scenario.payload(&y.payload).and_then(|p| p.exclusion_group.as_deref());
            if gy == Some(gx) && x.start < y.end && y.start < x.end {
                return Err(Rejection {
                    rule: RejectRule::ExclusionConflict,
                    at: x.start.max(y.start),
                    detail: format!("'{}' and '{}' share group '{gx}'", x.window_id, y.window_id),
                });
            }
        }
    }
    let end = plan.schedule.horizon_end.max(initial.time);
    let profile = induced_profile(scenario, initial.time, end, &tasks_to_segments(tasks, scenario));
    check_profile(initial, &profile, end, params, soc_floor).map_err(|v| Rejection {
        rule: match v.kind {
            crate::scheduler::ViolationKind::BelowFloor => RejectRule::BelowFloor,
            crate::scheduler::ViolationKind::Depleted => RejectRule::Depleted,
        },
        at: v.at,
        detail: v.kind.to_string(),
    })?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UploadOutcome {
    Accepted,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum UploadError {
    #[error("upload attempted at t = {0} s outside any ground pass")]
    OutOfPass(f64),
}

/// What the loop needs from a satellite.
pub trait SatelliteInterface {
    fn now(&self) -> f64;
    /// Installs the plan running before the first upload.
    fn commission(&mut self, plan: &FlightPlan);
    fn upload(&mut self, plan: &FlightPlan) -> Result<UploadOutcome, UploadError>;
    /// Telemetry sampled after `since`, up to the current time.
    fn fetch_telemetry(&mut self, since: f64) -> TelemetryLog;
    fn advance(&mut self, until: f64);
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HorizonConfig {
    /// Planning interval in seconds.
    #[serde(rename = "interval_s")]
    pub interval: f64,
    #[serde(rename = "min_elevation_deg")]
    pub min_elevation: f64,
    /// Overrides the scenario's floor.
    pub soc_floor: Option<f64>,
    pub beam_cap: Option<usize>,
    pub estimator: EstimatorConfig,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            interval: 24.0 * 3600.0,
            min_elevation: 25.0,
            soc_floor: None,
            beam_cap: None,
            estimator: EstimatorConfig::default(),
        }
    }
}

impl HorizonConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.interval.is_nan() || self.interval <= 0.0 {
            return Err(format!("interval_s must be positive, got {}", self.interval));
        }
        if let Some(f) = self.soc_floor {
            if !(0.0..1.0).contains(&f) {
                return Err(format!("soc_floor must lie in [0, 1), got {f}"));
            }
        }
        if self.beam_cap == Some(0) {
            return Err("beam_cap must be at least 1".into());
        }
        let cap = self.estimator.correction_cap;
        if cap.is_nan() || cap < 0.0 {
            return Err(format!("correction_cap must be non-negative, got {cap}"));
        }
        Ok(())
    }

    fn plan_options(&self, committed: Vec<CommittedTask>) -> PlanOptions {
        PlanOptions {
            beam_cap: self.beam_cap,
            soc_floor: self.soc_floor,
            committed,
            ..PlanOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Executed,
    BackupPlan,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Executed => "Executed",
            Outcome::BackupPlan => "BackupPlan",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub pass: GroundPass,
    /// Plan computed at this pass, whether or not it took effect.
    pub plan_id: String,
    pub outcome: Outcome,
    pub correction: f64,
    /// Believed SoC at the handover instant (end of the pass).
    pub predicted_soc: f64,
    pub alert: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub entries: Vec<RunEntry>,
    /// Every plan computed, starting with the commissioned one.
    pub plans: Vec<FlightPlan>,
    /// The plan in force at the end of the run.
    pub authoritative: Option<FlightPlan>,
    pub text: Vec<String>,
}

impl RunLog {
    pub fn outcomes(&self) -> Vec<Outcome> {
        self.entries.iter().map(|e| e.outcome).collect()
    }

    pub fn plan(&self, id: &str) -> Option<&FlightPlan> {
        self.plans.iter().find(|p| p.plan_id == id)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RUNLOG_HEADER)?;
        for e in &self.entries {
            w.write_record([
                e.pass.start.to_string(),
                e.pass.station.clone(),
                e.pass.max_elevation.to_string(),
                e.plan_id.clone(),
                e.outcome.as_str().to_string(),
                e.correction.to_string(),
                e.predicted_soc.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn text_log(&self) -> String {
        let mut s = String::new();
        for line in &self.text {
            s.push_str(line);
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    /// Without a first plan there is nothing to fall back to.
    #[error("initial plan: {0}")]
    InitialPlan(#[from] crate::scheduler::PlanError),
}

fn committed_at(plan: &FlightPlan, t0: f64, scenario: &Scenario) -> Vec<CommittedTask> {
    plan.schedule
        .tasks
        .iter()
        .filter(|t| t.start < t0 && t.end > t0)
        .map(|t| {
            let p = scenario.payload(&t.payload);
            CommittedTask {
                id: t.window_id.clone(),
                payload: t.payload.clone(),
                start: t.start,
                end: t.end,
                draw: p.map_or(0.0, |p| p.power_draw),
                group: p.and_then(|p| p.exclusion_group.clone()),
            }
        })
        .collect()
}

fn fmt_time(t: f64) -> String {
    let s = t.round() as i64;
    format!("{:02}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
}

/// Runs the receding-horizon loop over `[0, span_end]`.
///
/// Plans are clipped at `span_end`. Every qualifying pass that ends inside
/// the span produces one [`RunEntry`]; planner infeasibility and rejected
/// plans are logged as alerts and handled like a failed upload.
pub fn run<S: SatelliteInterface>(
    scenario: &Scenario,
    params: &BatteryParams,
    config: &HorizonConfig,
    sat: &mut S,
    span_end: f64,
) -> Result<RunLog, RunError> {
    let soc_floor = config.soc_floor.unwrap_or(scenario.soc_floor);
    let mut log = RunLog::default();
    let start = sat.now();
    let mut anchor = KibamState::at_soc(scenario.initial_soc, start, params);

    let first_end = (start + config.interval).min(span_end);
    let schedule = plan_with(scenario, params, &anchor, first_end, &config.plan_options(Vec::new()))?;
    let mut authoritative = FlightPlan {
        plan_id: "plan-0".into(),
        valid_from: start,
        schedule,
        supersedes: None,
    };
    sat.commission(&authoritative);
    log.plans.push(authoritative.clone());
    log.text.push(format!(
        "{} commissioned plan-0: {} tasks, reward {}",
        fmt_time(start),
        authoritative.schedule.tasks.len(),
        authoritative.schedule.total_reward
    ));

    let mut last_fetch = start;
    let passes = filter_passes(&scenario.passes, config.min_elevation);
    let mut index = 0;
    for pass in passes.iter().filter(|p| p.start >= start && p.end <= span_end) {
        index += 1;
        let plan_id = format!("plan-{index}");
        let t0 = pass.end;
        sat.advance(pass.start);
        let telemetry = sat.fetch_telemetry(last_fetch);
        last_fetch = pass.start;

        let tasks = authoritative.schedule.activities(scenario);
        let scheduled = induced_profile(scenario, anchor.time, t0, &tasks);
        let estimate = match reconcile(&anchor, &scheduled, &telemetry, params, &config.estimator) {
            Ok(e) => e,
            Err(EstimateError::EmptyLog) => SocEstimate {
                time: anchor.time,
                state: anchor,
                confidence_window: 0.0,
                correction_applied: 0.0,
            },
            Err(EstimateError::Battery(e)) => {
                log.text.push(format!("{} estimator: {e}", fmt_time(pass.start)));
                SocEstimate {
                    time: anchor.time,
                    state: anchor,
                    confidence_window: 0.0,
                    correction_applied: 0.0,
                }
            }
        };
        anchor = estimate.state;

        let mut entry = RunEntry {
            pass: pass.clone(),
            plan_id: plan_id.clone(),
            outcome: Outcome::BackupPlan,
            correction: estimate.correction_applied,
            predicted_soc: f64::NAN,
            alert: None,
        };
        let head = format!(
            "{} pass {index} {} el {:.2}: correction {:+.4}",
            fmt_time(pass.start),
            pass.station,
            pass.max_elevation,
            estimate.correction_applied
        );

        let belief = match propagate_to(&estimate, &scheduled, t0, params) {
            Ok(b) => b,
            Err(e) => {
                entry.alert = Some(format!("propagation: {e}"));
                log.text.push(format!("{head}; ALERT {}; backup plan continues", entry.alert.as_deref().unwrap_or_default()));
                log.entries.push(entry);
                continue;
            }
        };
        entry.predicted_soc = soc(&belief, params);

        let horizon_end = (t0 + config.interval).min(span_end);
        let options = config.plan_options(committed_at(&authoritative, t0, scenario));
        let schedule = match plan_with(scenario, params, &belief, horizon_end, &options) {
            Ok(s) => s,
            Err(e) => {
                entry.alert = Some(format!("planner: {e}"));
                log.text.push(format!("{head}; ALERT {}; backup plan continues", entry.alert.as_deref().unwrap_or_default()));
                log.entries.push(entry);
                continue;
            }
        };
        let incoming = FlightPlan {
            plan_id: plan_id.clone(),
            valid_from: t0,
            schedule,
            supersedes: Some(authoritative.plan_id.clone()),
        };
        log.plans.push(incoming.clone());
        let merged = merge_plans(&authoritative, &incoming);
        if let Err(r) = plausibility_check(&merged, scenario, params, &belief, soc_floor) {
            entry.alert = Some(format!("plausibility: {r}"));
            log.text.push(format!("{head}; ALERT {}; backup plan continues", entry.alert.as_deref().unwrap_or_default()));
            log.entries.push(entry);
            continue;
        }
        match sat.upload(&incoming) {
            Ok(UploadOutcome::Accepted) => {
                entry.outcome = Outcome::Executed;
                authoritative = merged;
                log.text.push(format!(
                    "{head}; {plan_id} uploaded, valid from {} ({} tasks, reward {})",
                    fmt_time(t0),
                    incoming.schedule.tasks.len(),
                    incoming.schedule.total_reward
                ));
            }
            Ok(UploadOutcome::Failed) => {
                log.text.push(format!("{head}; {plan_id} upload failed; {} continues", authoritative.plan_id));
            }
            Err(e) => {
                entry.alert = Some(e.to_string());
                log.text.push(format!("{head}; ALERT {e}; {} continues", authoritative.plan_id));
            }
        }
        log.entries.push(entry);
    }
    sat.advance(span_end);
    log.authoritative = Some(authoritative);
    Ok(log)
}

pub fn write_runlog_text(log: &RunLog) -> String {
    let mut s = String::new();
    for e in &log.entries {
        let _ = writeln!(
            s,
            "{} {} {:.2} {} {} {:+.4} {:.4}",
            fmt_time(e.pass.start),
            e.pass.station,
            e.pass.max_elevation,
            e.plan_id,
            e.outcome.as_str(),
            e.correction,
            e.predicted_soc
        );
    }
    s
}
