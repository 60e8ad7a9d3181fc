//! A ground-truth satellite for closing the loop.
//!
//! The simulator flies the on-board flight plan against its own "true"
//! battery, downlinks noisy telemetry on a fixed cadence (minus blackout
//! gaps) and accepts or drops uploads according to a failure script.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::battery::{evolve, soc, soc_to_voltage, BatteryError, BatteryParams, KibamState, LoadProfile};
use crate::estimator::{TelemetryLog, TelemetrySample};
use crate::mission::io::{parse_rows, read_text};
use crate::mission::{filter_passes, GroundPass, MissionError, Scenario};
use crate::orchestrator::{merge_plans, FlightPlan, SatelliteInterface, UploadError, UploadOutcome};
use crate::scheduler::{tasks_to_segments, ScheduledTask};

/// SoC margin above the floor at which safe mode releases.
pub const SAFE_MODE_HYSTERESIS: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct TruthConfig {
    pub true_params: BatteryParams,
    pub true_initial: KibamState,
    pub noise_sigma_v: f64,
    pub noise_sigma_i: f64,
    pub cadence: f64,
    /// Half-open blackout intervals `[start, end)` without telemetry.
    pub gaps: Vec<(f64, f64)>,
    pub seed: u64,
}

impl TruthConfig {
    /// Noise-free truth identical to the model.
    pub fn perfect(params: &BatteryParams, initial_soc: f64) -> Self {
        Self {
            true_params: *params,
            true_initial: KibamState::at_soc(initial_soc, 0.0, params),
            noise_sigma_v: 0.0,
            noise_sigma_i: 0.0,
            cadence: 120.0,
            gaps: Vec::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.true_params.validate()?;
        self.true_initial.check(&self.true_params)?;
        if self.cadence.is_nan() || self.cadence <= 0.0 {
            return Err(format!("cadence_s must be positive, got {}", self.cadence));
        }
        if !(self.noise_sigma_v >= 0.0 && self.noise_sigma_i >= 0.0) {
            return Err("noise sigmas must be non-negative".into());
        }
        for &(s, e) in &self.gaps {
            if !(s.is_finite() && e.is_finite() && s < e) {
                return Err(format!("gap [{s}, {e}) is empty or not finite"));
            }
        }
        Ok(())
    }

    /// Parses the truth TOML file; the `[battery]` table takes the battery
    /// config keys.
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            battery: BatteryParams,
            initial_soc: f64,
            #[serde(default = "default_sigma_v")]
            noise_sigma_v: f64,
            #[serde(default = "default_sigma_i")]
            noise_sigma_i: f64,
            #[serde(default = "default_cadence")]
            cadence_s: f64,
            #[serde(default)]
            gaps: Vec<[f64; 2]>,
            #[serde(default)]
            seed: u64,
        }
        fn default_sigma_v() -> f64 {
            0.02
        }
        fn default_sigma_i() -> f64 {
            0.05
        }
        fn default_cadence() -> f64 {
            120.0
        }
        let raw: Raw = toml::from_str(text).map_err(|e| e.to_string())?;
        if !(0.0..=1.0).contains(&raw.initial_soc) {
            return Err(format!("initial_soc must lie in [0, 1], got {}", raw.initial_soc));
        }
        let cfg = Self {
            true_params: raw.battery,
            true_initial: KibamState::at_soc(raw.initial_soc, 0.0, &raw.battery),
            noise_sigma_v: raw.noise_sigma_v,
            noise_sigma_i: raw.noise_sigma_i,
            cadence: raw.cadence_s,
            gaps: raw.gaps.into_iter().map(|[s, e]| (s, e)).collect(),
            seed: raw.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, MissionError> {
        let text = read_text(path)?;
        Self::from_toml_str(&text).map_err(|message| MissionError::Parse {
            file: path.display().to_string(),
            line: 0,
            column: 0,
            message,
        })
    }

    fn in_gap(&self, t: f64) -> bool {
        self.gaps.iter().any(|&(s, e)| t >= s && t < e)
    }
}

/// Reads a `start_s,end_s` blackout CSV.
pub fn read_gaps_csv(text: &str, file: &str) -> Result<Vec<(f64, f64)>, MissionError> {
    #[derive(Deserialize)]
    struct Row {
        start_s: f64,
        end_s: f64,
    }
    let rows: Vec<(u64, Row)> = parse_rows(text, file, &["start_s", "end_s"])?;
    rows.into_iter()
        .map(|(line, r)| {
            if !(r.start_s.is_finite() && r.end_s.is_finite() && r.start_s < r.end_s) {
                return Err(MissionError::Parse {
                    file: file.into(),
                    line,
                    column: 1,
                    message: format!("gap [{}, {}) is empty or not finite", r.start_s, r.end_s),
                });
            }
            Ok((r.start_s, r.end_s))
        })
        .collect()
}

/// Which uploads fail.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FailureScript {
    /// 1-based indices of qualifying passes whose upload fails.
    pub failing: BTreeSet<usize>,
    /// Extra failure chance per upload, drawn from a seeded stream.
    pub probability: f64,
}

impl FailureScript {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn at(passes: impl IntoIterator<Item = usize>) -> Self {
        Self {
            failing: passes.into_iter().collect(),
            probability: 0.0,
        }
    }

    /// Reads a `pass_index,fail` CSV; `fail` is `0`/`1` or `true`/`false`.
    pub fn from_csv(text: &str, file: &str) -> Result<Self, MissionError> {
        #[derive(Deserialize)]
        struct Row {
            pass_index: usize,
            fail: String,
        }
        let rows: Vec<(u64, Row)> = parse_rows(text, file, &["pass_index", "fail"])?;
        let mut failing = BTreeSet::new();
        for (line, r) in rows {
            let fail = match r.fail.trim().to_ascii_lowercase().as_str() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => {
                    return Err(MissionError::Parse {
                        file: file.into(),
                        line,
                        column: 2,
                        message: format!("fail must be 0/1/true/false, got '{other}'"),
                    })
                }
            };
            if r.pass_index == 0 {
                return Err(MissionError::Parse {
                    file: file.into(),
                    line,
                    column: 1,
                    message: "pass_index is 1-based".into(),
                });
            }
            if fail {
                failing.insert(r.pass_index);
            }
        }
        Ok(Self { failing, probability: 0.0 })
    }

    pub fn load(path: &Path) -> Result<Self, MissionError> {
        let text = read_text(path)?;
        Self::from_csv(&text, &path.display().to_string())
    }
}

/// A task as it started on board.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutedTask {
    pub task: ScheduledTask,
    /// On-board plan it came from.
    pub plan_id: String,
    /// Safe mode was active when it was due, so it never ran.
    pub shed: bool,
}

pub struct SimSatellite {
    scenario: Scenario,
    truth: TruthConfig,
    failures: FailureScript,
    upload_passes: Vec<GroundPass>,
    state: KibamState,
    onboard: Option<FlightPlan>,
    full: LoadProfile,
    base: LoadProfile,
    profile_end: f64,
    safe_mode: bool,
    safe_mode_activations: usize,
    brownouts: usize,
    telemetry: Vec<TelemetrySample>,
    executed: Vec<ExecutedTask>,
    noise: ChaCha8Rng,
    upload_rng: ChaCha8Rng,
}

impl SimSatellite {
    /// `min_elevation` selects the passes the failure script counts.
    pub fn new(scenario: &Scenario, truth: TruthConfig, failures: FailureScript, min_elevation: f64) -> Self {
        let profile_end = scenario.span_end().max(truth.true_initial.time);
        let base = scenario.base_profile(truth.true_initial.time, profile_end);
        Self {
            upload_passes: filter_passes(&scenario.passes, min_elevation),
            scenario: scenario.clone(),
            state: truth.true_initial,
            noise: ChaCha8Rng::seed_from_u64(truth.seed),
            upload_rng: ChaCha8Rng::seed_from_u64(truth.seed ^ 0x9e37_79b9_7f4a_7c15),
            truth,
            failures,
            onboard: None,
            full: base.clone(),
            base,
            profile_end,
            safe_mode: false,
            safe_mode_activations: 0,
            brownouts: 0,
            telemetry: Vec::new(),
            executed: Vec::new(),
        }
    }

    pub fn true_state(&self) -> &KibamState {
        &self.state
    }

    pub fn true_params(&self) -> &BatteryParams {
        &self.truth.true_params
    }

    pub fn onboard(&self) -> Option<&FlightPlan> {
        self.onboard.as_ref()
    }

    pub fn safe_mode_activations(&self) -> usize {
        self.safe_mode_activations
    }

    /// Times the available well ran dry despite shedding.
    pub fn brownouts(&self) -> usize {
        self.brownouts
    }

    pub fn telemetry(&self) -> &[TelemetrySample] {
        &self.telemetry
    }

    pub fn executed(&self) -> &[ExecutedTask] {
        &self.executed
    }

    fn rebuild(&mut self, end: f64) {
        let from = self.truth.true_initial.time;
        self.profile_end = end;
        self.base = self.scenario.base_profile(from, end);
        let mut parts = self.scenario.base_contributions(from, end);
        if let Some(plan) = &self.onboard {
            parts.extend(tasks_to_segments(&plan.schedule.tasks, &self.scenario));
        }
        self.full = LoadProfile::superpose(parts);
    }

    fn install(&mut self, plan: FlightPlan) {
        self.onboard = Some(plan);
        self.rebuild(self.profile_end);
    }

    fn profile(&self) -> &LoadProfile {
        if self.safe_mode {
            &self.base
        } else {
            &self.full
        }
    }

    fn update_safe_mode(&mut self) {
        let p = &self.truth.true_params;
        let s = soc(&self.state, p);
        if !self.safe_mode && soc_to_voltage(s, p) < p.voltage_floor {
            self.safe_mode = true;
            self.safe_mode_activations += 1;
        } else if self.safe_mode && s >= p.soc_at_floor + SAFE_MODE_HYSTERESIS {
            self.safe_mode = false;
        }
    }

    fn log_starts(&mut self, from: f64, to: f64) {
        let Some(plan) = &self.onboard else { return };
        for t in plan.schedule.tasks.iter().filter(|t| t.start >= from && t.start < to) {
            self.executed.push(ExecutedTask {
                task: t.clone(),
                plan_id: plan.plan_id.clone(),
                shed: self.safe_mode,
            });
        }
    }

    fn step_to(&mut self, until: f64) {
        let p = self.truth.true_params;
        match evolve(&self.state, self.profile(), until, &p) {
            Ok(s) => self.state = s,
            Err(BatteryError::Depleted { state, .. }) => {
                if !self.safe_mode {
                    self.safe_mode = true;
                    self.safe_mode_activations += 1;
                }
                self.state = state;
                match evolve(&self.state, &self.base, until, &p) {
                    Ok(s) => self.state = s,
                    Err(BatteryError::Depleted { state, .. }) => {
                        self.brownouts += 1;
                        self.state = KibamState { time: until, ..state };
                    }
                    Err(e) => unreachable!("{e}"),
                }
            }
            Err(e) => unreachable!("{e}"),
        }
    }

    fn sample(&mut self) {
        let t = self.state.time;
        let p = &self.truth.true_params;
        let zv: f64 = self.noise.sample(StandardNormal);
        let zi: f64 = self.noise.sample(StandardNormal);
        if self.truth.in_gap(t) {
            return;
        }
        let voltage = soc_to_voltage(soc(&self.state, p), p) + self.truth.noise_sigma_v * zv;
        let current = self.profile().load_at(t) + self.truth.noise_sigma_i * zi;
        self.telemetry.push(TelemetrySample { time: t, voltage, current });
    }
}

impl SatelliteInterface for SimSatellite {
    fn now(&self) -> f64 {
        self.state.time
    }

    fn commission(&mut self, plan: &FlightPlan) {
        self.install(plan.clone());
    }

    fn upload(&mut self, plan: &FlightPlan) -> Result<UploadOutcome, UploadError> {
        let now = self.now();
        let Some(index) = self
            .upload_passes
            .iter()
            .position(|p| now >= p.start && now <= p.end)
        else {
            return Err(UploadError::OutOfPass(now));
        };
        let draw: f64 = self.upload_rng.random();
        if self.failures.failing.contains(&(index + 1)) || draw < self.failures.probability {
            return Ok(UploadOutcome::Failed);
        }
        let merged = match &self.onboard {
            Some(active) => merge_plans(active, plan),
            None => plan.clone(),
        };
        self.install(merged);
        Ok(UploadOutcome::Accepted)
    }

    fn fetch_telemetry(&mut self, since: f64) -> TelemetryLog {
        let samples: Vec<TelemetrySample> = self
            .telemetry
            .iter()
            .filter(|s| s.time > since)
            .copied()
            .collect();
        TelemetryLog::new(samples, self.truth.cadence).expect("simulated telemetry is ordered")
    }

    fn advance(&mut self, until: f64) {
        if until <= self.now() {
            return;
        }
        // keep the profile defined past `until` so the last sample sees a load
        if until >= self.profile_end {
            self.rebuild(until + 86_400.0);
        }
        let cadence = self.truth.cadence;
        while self.now() < until {
            let now = self.now();
            let grid = ((now / cadence).floor() + 1.0) * cadence;
            let next = grid.min(until);
            self.log_starts(now, next);
            self.step_to(next);
            self.state.time = next;
            if next == grid {
                self.update_safe_mode();
                self.sample();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::{LoadSegment, CHARGE_EPS};
    use crate::mission::{PayloadDef, SunlightEpisode, TaskWindow};
    use crate::scheduler::{plan, Schedule};
    use chrono::{TimeZone, Utc};

    fn params() -> BatteryParams {
        BatteryParams {
            total_capacity: 10_000.0,
            diffusion_rate: 1e-4,
            ..BatteryParams::gomx4_like()
        }
    }

    fn scenario() -> Scenario {
        Scenario {
            epoch: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            payloads: vec![PayloadDef {
                name: "cam".into(),
                power_draw: 1.0,
                reward_per_window: 2.0,
                exclusion_group: None,
            }],
            windows: vec![TaskWindow {
                id: "w1".into(),
                payload: "cam".into(),
                start: 1000.0,
                end: 1600.0,
                reward: None,
            }],
            sunlight: vec![],
            passes: vec![
                GroundPass { station: "A".into(), start: 600.0, end: 900.0, max_elevation: 60.0 },
                GroundPass { station: "A".into(), start: 2000.0, end: 2300.0, max_elevation: 10.0 },
                GroundPass { station: "A".into(), start: 3000.0, end: 3300.0, max_elevation: 40.0 },
            ],
            background_load: 0.5,
            pass_load: 0.0,
            soc_floor: 0.6,
            initial_soc: 0.9,
        }
    }

    fn empty_plan(id: &str) -> FlightPlan {
        FlightPlan {
            plan_id: id.into(),
            valid_from: 0.0,
            schedule: Schedule {
                t0: 0.0,
                horizon_end: 3600.0,
                tasks: vec![],
                total_reward: 0.0,
                trace: vec![],
                heuristic: false,
                stats: Default::default(),
            },
            supersedes: None,
        }
    }

    #[test]
    fn no_plan_noise_free_discharge() {
        let mut sc = scenario();
        sc.passes.clear();
        sc.windows.clear();
        let p = params();
        let truth = TruthConfig::perfect(&p, 0.9);
        let mut sat = SimSatellite::new(&sc, truth.clone(), FailureScript::none(), 25.0);
        sat.advance(1200.0);
        let log = sat.fetch_telemetry(0.0);
        assert_eq!(log.len(), 10);
        let profile = LoadProfile::from_segments(vec![LoadSegment { start: 0.0, end: 1200.0, load: 0.5 }]).unwrap();
        for s in &log.samples {
            assert_eq!(s.current, 0.5);
            let oracle = evolve(&truth.true_initial, &profile, s.time, &p).unwrap();
            assert!((s.voltage - soc_to_voltage(soc(&oracle, &p), &p)).abs() < 1e-9);
        }
    }

    #[test]
    fn telemetry_only_up_to_now_and_outside_gaps() {
        let mut truth = TruthConfig::perfect(&params(), 0.9);
        truth.gaps = vec![(240.0, 720.0)];
        let mut sat = SimSatellite::new(&scenario(), truth, FailureScript::none(), 25.0);
        sat.advance(1000.0);
        let times: Vec<f64> = sat.fetch_telemetry(0.0).samples.iter().map(|s| s.time).collect();
        assert_eq!(times, [120.0, 720.0, 840.0, 960.0]);
        assert!(sat.fetch_telemetry(840.0).samples.iter().all(|s| s.time > 840.0));
    }

    #[test]
    fn noisy_telemetry_is_seeded() {
        let mut truth = TruthConfig::perfect(&params(), 0.9);
        truth.noise_sigma_v = 0.02;
        truth.noise_sigma_i = 0.05;
        truth.seed = 11;
        let run = |truth: &TruthConfig| {
            let mut sat = SimSatellite::new(&scenario(), truth.clone(), FailureScript::none(), 25.0);
            sat.advance(3600.0);
            sat.telemetry().to_vec()
        };
        assert_eq!(run(&truth), run(&truth));
        let mut other = truth.clone();
        other.seed = 12;
        assert_ne!(run(&truth), run(&other));
    }

    #[test]
    fn upload_outside_pass_fails() {
        let mut sat = SimSatellite::new(&scenario(), TruthConfig::perfect(&params(), 0.9), FailureScript::none(), 25.0);
        sat.advance(100.0);
        assert_eq!(sat.upload(&empty_plan("p")), Err(UploadError::OutOfPass(100.0)));
        // the low pass does not qualify
        sat.advance(2100.0);
        assert!(sat.upload(&empty_plan("p")).is_err());
    }

    #[test]
    fn scripted_failure_leaves_onboard_plan() {
        let sc = scenario();
        let p = params();
        let script = FailureScript::at([2]);
        let mut sat = SimSatellite::new(&sc, TruthConfig::perfect(&p, 0.9), script, 25.0);
        let initial = KibamState::at_soc(0.9, 0.0, &p);
        let schedule = plan(&sc, &p, &initial, 3600.0).unwrap();
        assert_eq!(schedule.tasks.len(), 1);
        let first = FlightPlan { plan_id: "plan-0".into(), valid_from: 0.0, schedule, supersedes: None };
        sat.commission(&first);

        sat.advance(650.0);
        let mut replacement = empty_plan("plan-1");
        replacement.valid_from = 900.0;
        assert_eq!(sat.upload(&replacement), Ok(UploadOutcome::Accepted));
        assert_eq!(sat.onboard().unwrap().plan_id, "plan-1");
        assert!(sat.onboard().unwrap().schedule.tasks.is_empty());

        sat.advance(3050.0);
        let before = sat.onboard().cloned();
        assert_eq!(sat.upload(&first), Ok(UploadOutcome::Failed));
        assert_eq!(sat.onboard().cloned(), before);
        sat.advance(3600.0);
        assert!(sat.executed().is_empty());
    }

    #[test]
    fn accepted_plan_executes() {
        let sc = scenario();
        let p = params();
        let mut sat = SimSatellite::new(&sc, TruthConfig::perfect(&p, 0.9), FailureScript::none(), 25.0);
        sat.commission(&empty_plan("plan-0"));
        sat.advance(700.0);
        let initial = KibamState::at_soc(0.9, 0.0, &p);
        let schedule = plan(&sc, &p, &initial, 3600.0).unwrap();
        let incoming = FlightPlan { plan_id: "plan-1".into(), valid_from: 900.0, schedule, supersedes: None };
        assert_eq!(sat.upload(&incoming), Ok(UploadOutcome::Accepted));
        sat.advance(3600.0);
        assert_eq!(sat.executed().len(), 1);
        assert_eq!(sat.executed()[0].task.window_id, "w1");
        assert!(!sat.executed()[0].shed);
        let currents: Vec<f64> = sat
            .telemetry()
            .iter()
            .filter(|s| s.time > 1000.0 && s.time < 1600.0)
            .map(|s| s.current)
            .collect();
        assert!(currents.iter().all(|&c| c == 1.5));
    }

    #[test]
    fn richer_truth_matches_oracle() {
        let mut sc = scenario();
        sc.sunlight = vec![SunlightEpisode { start: 2000.0, end: 5000.0, infeed: 2.0 }];
        let model = params();
        let truth_params = BatteryParams { total_capacity: model.total_capacity * 1.1, ..model };
        let initial = KibamState::at_soc(0.9, 0.0, &model);
        let schedule = plan(&sc, &model, &initial, 6000.0).unwrap();
        let predicted = schedule.trace.last().unwrap();
        let flight = FlightPlan { plan_id: "plan-0".into(), valid_from: 0.0, schedule: schedule.clone(), supersedes: None };

        let mut truth = TruthConfig::perfect(&truth_params, 0.9);
        truth.true_initial = KibamState::at_soc(0.9, 0.0, &truth_params);
        let mut sat = SimSatellite::new(&sc, truth.clone(), FailureScript::none(), 25.0);
        sat.commission(&flight);
        sat.advance(6000.0);

        let mut parts = sc.base_contributions(0.0, 6000.0);
        parts.extend(schedule.activities(&sc));
        let oracle = evolve(&truth.true_initial, &LoadProfile::superpose(parts), 6000.0, &truth_params).unwrap();
        let got = sat.true_state();
        assert!((got.available - oracle.available).abs() < 1e-6);
        assert!((got.bound - oracle.bound).abs() < 1e-6);
        let predicted_soc = (predicted.available + predicted.bound) / model.total_capacity;
        assert!(soc(got, &truth_params) > predicted_soc);
    }

    #[test]
    fn safe_mode_sheds_payloads() {
        let mut sc = scenario();
        sc.payloads[0].power_draw = 20.0;
        sc.windows[0].end = 2800.0;
        let p = params();
        // start just above the floor voltage so the task drags it under
        let truth = TruthConfig::perfect(&p, p.soc_at_floor + 0.03);
        let mut sat = SimSatellite::new(&sc, truth, FailureScript::none(), 25.0);
        let mut flight = empty_plan("plan-0");
        flight.schedule.tasks = vec![ScheduledTask {
            window_id: "w1".into(),
            payload: "cam".into(),
            start: 1000.0,
            end: 2800.0,
            reward: 2.0,
        }];
        sat.commission(&flight);
        sat.advance(3600.0);
        assert_eq!(sat.safe_mode_activations(), 1);
        let samples = sat.telemetry();
        for pair in samples.windows(2) {
            let v = pair[0].voltage;
            if v < p.voltage_floor {
                assert!(pair[1].current <= sc.background_load + CHARGE_EPS, "payload ran at {}", pair[1].time);
            }
        }
    }

    #[test]
    fn truth_toml_and_scripts() {
        let text = "initial_soc = 0.8\nseed = 3\ngaps = [[100.0, 200.0]]\n[battery]\ncapacity_as = 22000.0\ndiffusion_per_s = 5e-5\nvoltage_full = 16.2\nvoltage_floor = 14.8\nsoc_at_floor = 0.55\n";
        let cfg = TruthConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.true_params.total_capacity, 22_000.0);
        assert_eq!(cfg.cadence, 120.0);
        assert_eq!(cfg.noise_sigma_v, 0.02);
        assert_eq!(cfg.gaps, [(100.0, 200.0)]);
        assert!((soc(&cfg.true_initial, &cfg.true_params) - 0.8).abs() < 1e-12);
        assert!(TruthConfig::from_toml_str("initial_soc = 0.8\ncadence_s = 0\n[battery]\ncapacity_as = 1.0\ndiffusion_per_s = 1e-4\n").is_err());

        let script = FailureScript::from_csv("pass_index,fail\n1,0\n5,1\n6,true\n", "fail.csv").unwrap();
        assert_eq!(script.failing, BTreeSet::from([5, 6]));
        let err = FailureScript::from_csv("pass_index,fail\n2,maybe\n", "fail.csv").unwrap_err();
        assert!(err.to_string().starts_with("fail.csv:2:"));
        assert_eq!(read_gaps_csv("start_s,end_s\n0,60\n", "g.csv").unwrap(), [(0.0, 60.0)]);
        assert!(read_gaps_csv("start_s,end_s\n60,0\n", "g.csv").is_err());
    }
}
