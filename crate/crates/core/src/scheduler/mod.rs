//! Reward-maximal selection of task windows under a state-of-charge floor.
//!
//! The planner sweeps the decision epochs of the horizon (window starts and
//! ends). At each epoch it keeps, per set of still-running windows, an
//! antichain of partial selections; labels with different running sets face
//! different future loads and are never compared. Between epochs each label
//! is evolved in closed form under the base load plus its running draws.
//! Total charge is monotone on a constant-load piece, so checking the floor
//! at piece ends is exact.

mod antichain;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{
    self, soc_to_voltage, step_constant, BatteryError, BatteryParams, KibamState, LoadProfile,
    LoadSegment, CHARGE_EPS,
};
use crate::mission::io::{finite, parse_rows};
use crate::mission::{MissionError, Scenario};

pub use antichain::{
    dominates, equivalent, insert_pruned, Antichain, ChoiceRef, DpLabel, NO_CHOICE,
};

pub const SCHEDULE_HEADER: [&str; 5] = ["window_id", "payload", "start_s", "end_s", "reward"];
pub const TRACE_HEADER: [&str; 5] = ["time_s", "available_as", "bound_as", "soc", "voltage_v"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    BelowFloor,
    Depleted,
}

impl std::fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ViolationKind::BelowFloor => "state of charge below floor",
            ViolationKind::Depleted => "available charge depleted",
        })
    }
}

/// First instant at which a replayed load breaks the battery constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub at: f64,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("horizon end {end} s precedes the initial state time {start} s")]
    BadHorizon { start: f64, end: f64 },
    #[error("initial battery state is invalid: {0}")]
    InvalidState(String),
    #[error("infeasible even with no tasks: {kind} at t = {at:.3} s")]
    Infeasible { at: f64, kind: ViolationKind },
    /// The chosen selection failed its own replay; a planner bug.
    #[error("selected schedule fails replay: {kind} at t = {at:.3} s")]
    Unsound { at: f64, kind: ViolationKind },
}

/// A task the planner must treat as fixed load, typically one still running
/// from the previous plan at handover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommittedTask {
    pub id: String,
    pub payload: String,
    pub start: f64,
    pub end: f64,
    pub draw: f64,
    pub group: Option<String>,
}

impl CommittedTask {
    fn overlaps(&self, start: f64, end: f64) -> bool {
        self.start < end && start < self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOptions {
    /// Antichain pruning; disabling it keeps every feasible partial selection.
    pub pruning: bool,
    /// Maximum labels per antichain. Capping forfeits optimality.
    pub beam_cap: Option<usize>,
    /// Overrides the scenario's floor.
    pub soc_floor: Option<f64>,
    pub committed: Vec<CommittedTask>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            pruning: true,
            beam_cap: None,
            soc_floor: None,
            committed: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PlanStats {
    pub epochs: usize,
    pub candidates: usize,
    /// Labels produced by branching, before pruning.
    pub labels_expanded: usize,
    /// Labels kept, summed over epochs.
    pub stored_labels: usize,
    /// Largest number of labels kept at a single epoch.
    pub peak_width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledTask {
    pub window_id: String,
    pub payload: String,
    pub start: f64,
    pub end: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub time: f64,
    pub available: f64,
    pub bound: f64,
}

impl From<&KibamState> for TracePoint {
    fn from(s: &KibamState) -> Self {
        Self {
            time: s.time,
            available: s.available,
            bound: s.bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub t0: f64,
    pub horizon_end: f64,
    /// Chosen windows in chronological order.
    pub tasks: Vec<ScheduledTask>,
    pub total_reward: f64,
    /// Predicted battery state at every load change, committed load included.
    pub trace: Vec<TracePoint>,
    /// Set when a beam cap dropped labels.
    pub heuristic: bool,
    pub stats: PlanStats,
}

impl Schedule {
    /// Load segments of the chosen tasks.
    pub fn activities(&self, scenario: &Scenario) -> Vec<LoadSegment> {
        tasks_to_segments(&self.tasks, scenario)
    }

    pub fn count_by_payload(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for t in &self.tasks {
            *out.entry(t.payload.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn min_soc(&self, params: &BatteryParams) -> Option<f64> {
        self.trace
            .iter()
            .map(|p| (p.available + p.bound) / params.total_capacity)
            .min_by(f64::total_cmp)
    }
}

/// Draw segments for `tasks`, with draws looked up by payload.
pub fn tasks_to_segments(tasks: &[ScheduledTask], scenario: &Scenario) -> Vec<LoadSegment> {
    tasks
        .iter()
        .map(|t| LoadSegment {
            start: t.start,
            end: t.end,
            load: scenario.payload(&t.payload).map_or(0.0, |p| p.power_draw),
        })
        .collect()
}

/// Base scenario load over `[from, to]` plus `activities` clipped to it.
pub fn induced_profile(
    scenario: &Scenario,
    from: f64,
    to: f64,
    activities: &[LoadSegment],
) -> LoadProfile {
    let mut parts = scenario.base_contributions(from, to);
    parts.extend(activities.iter().filter_map(|a| {
        let seg = LoadSegment {
            start: a.start.max(from),
            end: a.end.min(to),
            load: a.load,
        };
        (seg.end > seg.start).then_some(seg)
    }));
    LoadProfile::superpose(parts)
}

fn above_floor(state: &KibamState, floor_charge: f64) -> bool {
    state.total() >= floor_charge - CHARGE_EPS
}

/// Replays `profile` from `initial` to `until`, returning the state at every
/// piece boundary, or the first instant where total SoC drops below
/// `soc_floor` or the available well empties.
pub fn check_profile(
    initial: &KibamState,
    profile: &LoadProfile,
    until: f64,
    params: &BatteryParams,
    soc_floor: f64,
) -> Result<Vec<TracePoint>, Violation> {
    let floor_charge = soc_floor * params.total_capacity;
    if !above_floor(initial, floor_charge) {
        return Err(Violation {
            at: initial.time,
            kind: ViolationKind::BelowFloor,
        });
    }
    let mut trace = vec![TracePoint::from(initial)];
    let mut state = *initial;
    for piece in profile.pieces(initial.time, until) {
        let duration = piece.end - state.time;
        // Total charge falls linearly while discharging.
        let floor_at = (piece.load > 0.0 && state.total() - piece.load * duration < floor_charge - CHARGE_EPS)
            .then(|| state.time + ((state.total() - floor_charge) / piece.load).max(0.0));
        match step_constant(&state, piece.load, duration, params) {
            Err(BatteryError::Depleted { at, .. }) => {
                return Err(match floor_at {
                    Some(f) if f <= at => Violation { at: f, kind: ViolationKind::BelowFloor },
                    _ => Violation { at, kind: ViolationKind::Depleted },
                });
            }
            Err(_) => unreachable!("pieces are ordered and non-negative"),
            Ok(next) => {
                if let Some(at) = floor_at {
                    return Err(Violation { at, kind: ViolationKind::BelowFloor });
                }
                state = next;
                state.time = piece.end;
                trace.push(TracePoint::from(&state));
            }
        }
    }
    Ok(trace)
}

/// Plans over `[initial.time, horizon_end]` with default options.
pub fn plan(
    scenario: &Scenario,
    params: &BatteryParams,
    initial: &KibamState,
    horizon_end: f64,
) -> Result<Schedule, PlanError> {
    plan_with(scenario, params, initial, horizon_end, &PlanOptions::default())
}

/// One-shot plan over the whole experiment span; the same search as [`plan`].
pub fn plan_monolithic(
    scenario: &Scenario,
    params: &BatteryParams,
    initial: &KibamState,
    span_end: f64,
) -> Result<Schedule, PlanError> {
    plan(scenario, params, initial, span_end)
}

struct Candidate {
    window: usize,
    start: f64,
    end: f64,
    draw: f64,
    reward: f64,
    group: Option<usize>,
}

struct Search<'a> {
    scenario: &'a Scenario,
    cands: Vec<Candidate>,
    /// Back-pointer arena: (candidate, previous choice).
    arena: Vec<(u32, ChoiceRef)>,
}

impl Search<'_> {
    fn choose(&mut self, cand: u32, prev: ChoiceRef) -> ChoiceRef {
        self.arena.push((cand, prev));
        (self.arena.len() - 1) as ChoiceRef
    }

    /// Chosen candidates in chronological order.
    fn sequence(&self, mut at: ChoiceRef) -> Vec<u32> {
        let mut out = Vec::new();
        while at != NO_CHOICE {
            let (cand, prev) = self.arena[at as usize];
            out.push(cand);
            at = prev;
        }
        out.reverse();
        out
    }

    fn id(&self, cand: u32) -> &str {
        &self.scenario.windows[self.cands[cand as usize].window].id
    }

    /// Lexicographic order of the chosen id sequences.
    fn cmp_choices(&self, x: ChoiceRef, y: ChoiceRef) -> Ordering {
        let sx = self.sequence(x);
        let sy = self.sequence(y);
        sx.iter()
            .map(|&c| self.id(c))
            .cmp(sy.iter().map(|&c| self.id(c)))
    }

    fn extra_draw(&self, running: &[u32]) -> f64 {
        running.iter().map(|&c| self.cands[c as usize].draw).sum()
    }

    fn conflicts(&self, running: &[u32], cand: u32) -> bool {
        match self.cands[cand as usize].group {
            None => false,
            Some(g) => running
                .iter()
                .any(|&r| self.cands[r as usize].group == Some(g)),
        }
    }
}

/// Evolves across `pieces` with `extra` load on top; `None` if the floor is
/// crossed or the available well empties.
fn advance(
    state: &KibamState,
    pieces: &[LoadSegment],
    extra: f64,
    floor_charge: f64,
    params: &BatteryParams,
) -> Option<KibamState> {
    let mut s = *state;
    for p in pieces {
        s = step_constant(&s, p.load + extra, p.end - s.time, params).ok()?;
        s.time = p.end;
        if !above_floor(&s, floor_charge) {
            return None;
        }
    }
    Some(s)
}

/// Full planner entry point.
///
/// Candidates are the windows lying entirely inside the horizon that do not
/// collide with a committed task (same id, or same exclusion group while
/// overlapping). Committed tasks contribute their draw to the base load.
pub fn plan_with(
    scenario: &Scenario,
    params: &BatteryParams,
    initial: &KibamState,
    horizon_end: f64,
    options: &PlanOptions,
) -> Result<Schedule, PlanError> {
    let t0 = initial.time;
    if horizon_end.is_nan() || horizon_end < t0 {
        return Err(PlanError::BadHorizon { start: t0, end: horizon_end });
    }
    initial.check(params).map_err(PlanError::InvalidState)?;
    let soc_floor = options.soc_floor.unwrap_or(scenario.soc_floor);
    let floor_charge = soc_floor * params.total_capacity;

    let committed: Vec<LoadSegment> = options
        .committed
        .iter()
        .map(|c| LoadSegment { start: c.start, end: c.end, load: c.draw })
        .collect();
    let base = induced_profile(scenario, t0, horizon_end, &committed);
    if let Err(v) = check_profile(initial, &base, horizon_end, params, soc_floor) {
        return Err(PlanError::Infeasible { at: v.at, kind: v.kind });
    }

    let mut groups: Vec<&str> = Vec::new();
    let mut cands = Vec::new();
    for (i, w) in scenario.windows.iter().enumerate() {
        if w.start < t0 || w.end > horizon_end {
            continue;
        }
        let group = scenario.window_group(w);
        let blocked = options.committed.iter().any(|c| {
            c.id == w.id || (group.is_some() && c.group.as_deref() == group && c.overlaps(w.start, w.end))
        });
        if blocked {
            continue;
        }
        let group = group.map(|g| match groups.iter().position(|&x| x == g) {
            Some(k) => k,
            None => {
                groups.push(g);
                groups.len() - 1
            }
        });
        cands.push(Candidate {
            window: i,
            start: w.start,
            end: w.end,
            draw: scenario.window_draw(w),
            reward: scenario.window_reward(w),
            group,
        });
    }
    cands.sort_by(|x, y| {
        x.start
            .total_cmp(&y.start)
            .then_with(|| scenario.windows[x.window].id.cmp(&scenario.windows[y.window].id))
    });

    let mut epochs: Vec<f64> = vec![t0, horizon_end];
    epochs.extend(cands.iter().flat_map(|c| [c.start, c.end]));
    epochs.sort_by(f64::total_cmp);
    epochs.dedup();

    let mut stats = PlanStats {
        epochs: epochs.len(),
        candidates: cands.len(),
        ..PlanStats::default()
    };
    let mut search = Search { scenario, cands, arena: Vec::new() };
    let mut heuristic = false;

    let mut buckets: BTreeMap<Vec<u32>, Antichain> = BTreeMap::new();
    let mut root = Antichain::new();
    root.insert(DpLabel { reward: 0.0, state: *initial, chosen: NO_CHOICE });
    buckets.insert(Vec::new(), root);

    let mut next_start = 0;
    for span in epochs.windows(2) {
        let (now, next) = (span[0], span[1]);
        let pieces = base.pieces(now, next);
        let first = next_start;
        while next_start < search.cands.len() && search.cands[next_start].start == now {
            next_start += 1;
        }
        let starting: Vec<u32> = (first as u32..next_start as u32).collect();

        let mut out: BTreeMap<Vec<u32>, Antichain> = BTreeMap::new();
        for (running, chain) in std::mem::take(&mut buckets) {
            for label in chain.into_labels() {
                // Every admissible subset of the windows opening now.
                let mut branches = vec![(running.clone(), label)];
                for &c in &starting {
                    for k in 0..branches.len() {
                        let (mut run, lab) = branches[k].clone();
                        if search.conflicts(&run, c) {
                            continue;
                        }
                        run.push(c);
                        let chosen = search.choose(c, lab.chosen);
                        let reward = lab.reward + search.cands[c as usize].reward;
                        branches.push((run, DpLabel { reward, state: lab.state, chosen }));
                    }
                }
                for (mut run, lab) in branches {
                    stats.labels_expanded += 1;
                    let extra = search.extra_draw(&run);
                    let Some(state) = advance(&lab.state, &pieces, extra, floor_charge, params) else {
                        continue;
                    };
                    let lab = DpLabel { state, ..lab };
                    run.retain(|&c| search.cands[c as usize].end > next);
                    run.sort_unstable();
                    let target = out.entry(run).or_default();
                    if options.pruning {
                        target.insert_with(lab, |new, old| search.cmp_choices(new.chosen, old.chosen));
                    } else {
                        target.push_unpruned(lab);
                    }
                }
            }
        }
        if let Some(cap) = options.beam_cap {
            for chain in out.values_mut() {
                heuristic |= chain.truncate(cap);
            }
        }
        let width: usize = out.values().map(Antichain::len).sum();
        stats.stored_labels += width;
        stats.peak_width = stats.peak_width.max(width);
        buckets = out;
    }

    let best = buckets
        .into_values()
        .flat_map(Antichain::into_labels)
        .reduce(|best, l| match l.reward.total_cmp(&best.reward) {
            Ordering::Greater => l,
            Ordering::Equal if search.cmp_choices(l.chosen, best.chosen) == Ordering::Less => l,
            _ => best,
        });
    let (chosen, total_reward) = match best {
        Some(l) => (search.sequence(l.chosen), l.reward),
        // Only reachable when a beam cap discarded every label.
        None => (Vec::new(), 0.0),
    };

    let tasks: Vec<ScheduledTask> = chosen
        .iter()
        .map(|&c| {
            let cand = &search.cands[c as usize];
            let w = &scenario.windows[cand.window];
            ScheduledTask {
                window_id: w.id.clone(),
                payload: w.payload.clone(),
                start: cand.start,
                end: cand.end,
                reward: cand.reward,
            }
        })
        .collect();
    let mut load = committed;
    load.extend(tasks_to_segments(&tasks, scenario));
    let profile = induced_profile(scenario, t0, horizon_end, &load);
    let trace = check_profile(initial, &profile, horizon_end, params, soc_floor)
        .map_err(|v| PlanError::Unsound { at: v.at, kind: v.kind })?;

    Ok(Schedule {
        t0,
        horizon_end,
        tasks,
        total_reward,
        trace,
        heuristic,
        stats,
    })
}

#[derive(Debug, Deserialize)]
struct ScheduleRow {
    window_id: String,
    payload: String,
    start_s: f64,
    end_s: f64,
    reward: f64,
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    time_s: f64,
    available_as: f64,
    bound_as: f64,
    #[allow(dead_code)]
    soc: f64,
    #[allow(dead_code)]
    voltage_v: f64,
}

pub fn write_schedule_csv<W: std::io::Write>(out: W, tasks: &[ScheduledTask]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCHEDULE_HEADER)?;
    for t in tasks {
        w.write_record([
            t.window_id.clone(),
            t.payload.clone(),
            t.start.to_string(),
            t.end.to_string(),
            t.reward.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_schedule_csv(text: &str, file: &str) -> Result<Vec<ScheduledTask>, MissionError> {
    parse_rows::<ScheduleRow>(text, file, &SCHEDULE_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            Ok(ScheduledTask {
                window_id: r.window_id,
                payload: r.payload,
                start: finite(file, line, 3, r.start_s)?,
                end: finite(file, line, 4, r.end_s)?,
                reward: finite(file, line, 5, r.reward)?,
            })
        })
        .collect()
}

pub fn write_trace_csv<W: std::io::Write>(
    out: W,
    trace: &[TracePoint],
    params: &BatteryParams,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for p in trace {
        let soc = battery::soc(
            &KibamState { available: p.available, bound: p.bound, time: p.time },
            params,
        );
        w.write_record([
            p.time.to_string(),
            p.available.to_string(),
            p.bound.to_string(),
            soc.to_string(),
            soc_to_voltage(soc, params).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(text: &str, file: &str) -> Result<Vec<TracePoint>, MissionError> {
    parse_rows::<TraceRow>(text, file, &TRACE_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            Ok(TracePoint {
                time: finite(file, line, 1, r.time_s)?,
                available: finite(file, line, 2, r.available_as)?,
                bound: finite(file, line, 3, r.bound_as)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
