//! Command implementations behind the `kibam-sched` binary.
//!
//! Every command reads a scenario directory plus optional config files and
//! writes plain CSV into an output directory. Commands report through the
//! `out` writer so they can be driven from tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use kibam_sched::battery::{BatteryParams, KibamState};
use kibam_sched::estimator::write_telemetry_csv;
use kibam_sched::mission::synth::gomx4_scenario;
use kibam_sched::mission::{filter_passes, load_scenario_dir, write_scenario_dir, Scenario};
use kibam_sched::orchestrator::{run, HorizonConfig, RunLog};
use kibam_sched::satsim::{FailureScript, SimSatellite, TruthConfig};
use kibam_sched::scheduler::{
    plan_with, write_schedule_csv, write_trace_csv, PlanError, PlanOptions, Schedule, ScheduledTask,
};

#[derive(Debug, Parser)]
#[command(name = "kibam-sched", version, about = "Battery-aware satellite task scheduling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and check every input file.
    Validate(Manifest),
    /// Plan one horizon and write the schedule and predicted SoC trace.
    Plan {
        #[command(flatten)]
        manifest: Manifest,
        /// Planning start, seconds after the scenario epoch.
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
    },
    /// Fly the receding-horizon loop against the simulated satellite.
    Run(Manifest),
    /// Run the loop and diff it against a single plan over the whole span.
    Compare(Manifest),
    /// Write the synthetic two-day scenario with default configs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

/// Input files and overrides shared by all commands.
#[derive(Debug, Clone, Args)]
pub struct Manifest {
    #[arg(long)]
    pub scenario_dir: PathBuf,
    /// Planner battery model [default: <scenario-dir>/battery.toml]
    #[arg(long)]
    pub battery: Option<PathBuf>,
    /// Horizon settings [default: <scenario-dir>/horizon.toml if present]
    #[arg(long)]
    pub horizon: Option<PathBuf>,
    /// Simulated battery; without it the truth equals the model, noise-free.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// `pass_index,fail` CSV of failing uploads.
    #[arg(long)]
    pub fail_script: Option<PathBuf>,
    /// Extra per-upload failure chance, seeded.
    #[arg(long)]
    pub fail_probability: Option<f64>,
    #[arg(long)]
    pub horizon_h: Option<f64>,
    #[arg(long)]
    pub min_elevation_deg: Option<f64>,
    #[arg(long)]
    pub soc_floor: Option<f64>,
    /// Label cap per planner epoch; 0 plans exactly.
    #[arg(long)]
    pub beam_cap: Option<usize>,
    /// Closed-loop span in hours [default: end of the scenario]
    #[arg(long)]
    pub span_h: Option<f64>,
    /// Overrides the truth config's noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Output { .. } => 1,
            CliError::Infeasible(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            PlanError::Unsound { .. } => CliError::Invariant(e.to_string()),
            PlanError::BadHorizon { .. } | PlanError::InvalidState(_) => CliError::Input(e.to_string()),
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn output_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.display().to_string(),
        source,
    }
}

/// Everything a command needs, loaded and validated.
pub struct Inputs {
    pub scenario: Scenario,
    pub params: BatteryParams,
    pub horizon: HorizonConfig,
    pub truth: TruthConfig,
    pub failures: FailureScript,
    pub span_end: f64,
}

impl Manifest {
    pub fn load(&self) -> Result<Inputs, CliError> {
        let dir = &self.scenario_dir;
        if !dir.is_dir() {
            return Err(CliError::Input(format!("{}: scenario directory not found", dir.display())));
        }
        let scenario = load_scenario_dir(dir).map_err(input)?;
        let battery = self.battery.clone().unwrap_or_else(|| dir.join("battery.toml"));
        let params = BatteryParams::load(&battery).map_err(input)?;

        let horizon_path = self.horizon.clone().or_else(|| {
            let p = dir.join("horizon.toml");
            p.is_file().then_some(p)
        });
        let mut horizon = match &horizon_path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                HorizonConfig::from_toml_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
            }
            None => HorizonConfig::default(),
        };
        if let Some(h) = self.horizon_h {
            horizon.interval = h * 3600.0;
        }
        if let Some(el) = self.min_elevation_deg {
            horizon.min_elevation = el;
        }
        if let Some(f) = self.soc_floor {
            horizon.soc_floor = Some(f);
        }
        if let Some(cap) = self.beam_cap {
            horizon.beam_cap = (cap > 0).then_some(cap);
        }
        horizon.validate().map_err(|e| CliError::Input(format!("horizon config: {e}")))?;

        let mut truth = match &self.truth {
            Some(p) => TruthConfig::load(p).map_err(input)?,
            None => TruthConfig::perfect(&params, scenario.initial_soc),
        };
        if let Some(seed) = self.seed {
            truth.seed = seed;
        }
        let mut failures = match &self.fail_script {
            Some(p) => FailureScript::load(p).map_err(input)?,
            None => FailureScript::none(),
        };
        if let Some(p) = self.fail_probability {
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::Input(format!("--fail-probability must lie in [0, 1], got {p}")));
            }
            failures.probability = p;
        }
        let span_end = match self.span_h {
            Some(h) if h > 0.0 => h * 3600.0,
            Some(h) => return Err(CliError::Input(format!("--span-h must be positive, got {h}"))),
            None => scenario.span_end(),
        };
        Ok(Inputs { scenario, params, horizon, truth, failures, span_end })
    }
}

impl Inputs {
    fn soc_floor(&self) -> f64 {
        self.horizon.soc_floor.unwrap_or(self.scenario.soc_floor)
    }

    fn options(&self) -> PlanOptions {
        PlanOptions {
            beam_cap: self.horizon.beam_cap,
            soc_floor: self.horizon.soc_floor,
            ..PlanOptions::default()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate(m) => cmd_validate(m, out),
        Command::Plan { manifest, t0 } => cmd_plan(manifest, *t0, out).map(|_| ()),
        Command::Run(m) => cmd_run(m, out).map(|_| ()),
        Command::Compare(m) => cmd_compare(m, out),
        Command::Synth { out: dir, seed } => cmd_synth(dir, *seed, out),
    }
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments) {
    // losing a status line is not worth failing the command over
    let _ = out.write_fmt(text);
    let _ = out.write_all(b"\n");
}

pub fn cmd_validate(m: &Manifest, out: &mut dyn Write) -> Result<(), CliError> {
    let inputs = m.load()?;
    let sc = &inputs.scenario;
    let counts = sc
        .window_counts()
        .into_iter()
        .map(|(p, n)| format!("{p} {n}"))
        .collect::<Vec<_>>()
        .join(", ");
    let qualifying = filter_passes(&sc.passes, inputs.horizon.min_elevation).len();
    say(out, format_args!("{}: ok", m.scenario_dir.display()));
    if counts.is_empty() {
        say(out, format_args!("  windows: 0"));
    } else {
        say(out, format_args!("  windows: {} ({counts})", sc.windows.len()));
    }
    say(out, format_args!(
        "  passes: {} ({qualifying} above {} deg)",
        sc.passes.len(),
        inputs.horizon.min_elevation
    ));
    say(out, format_args!("  sunlight episodes: {}", sc.sunlight.len()));
    say(out, format_args!("  span: {:.1} h", sc.span_end() / 3600.0));
    say(out, format_args!(
        "  battery: {} As, v = {} /s",
        inputs.params.total_capacity, inputs.params.diffusion_rate
    ));
    if m.truth.is_some() {
        say(out, format_args!("  truth: {} As", inputs.truth.true_params.total_capacity));
    }
    if m.fail_script.is_some() {
        say(out, format_args!("  failing uploads: {:?}", inputs.failures.failing));
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(output_err(dir))
}

fn write_file<F>(path: &Path, write: F) -> Result<(), CliError>
where
    F: FnOnce(File) -> csv::Result<()>,
{
    let file = File::create(path).map_err(output_err(path))?;
    write(file).map_err(|e| CliError::Output {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })
}

fn write_plan_files(dir: &Path, prefix: &str, schedule: &Schedule, params: &BatteryParams) -> Result<(), CliError> {
    write_file(&dir.join(format!("{prefix}schedule.csv")), |f| write_schedule_csv(f, &schedule.tasks))?;
    write_file(&dir.join(format!("{prefix}trace.csv")), |f| write_trace_csv(f, &schedule.trace, params))
}

fn payload_counts(tasks: &[ScheduledTask]) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in tasks {
        *counts.entry(&t.payload).or_default() += 1;
    }
    counts.iter().map(|(p, n)| format!("{p} {n}")).collect::<Vec<_>>().join(", ")
}

pub fn cmd_plan(m: &Manifest, t0: f64, out: &mut dyn Write) -> Result<Schedule, CliError> {
    let inputs = m.load()?;
    let horizon_end = t0 + inputs.horizon.interval;
    // a later start assumes the scenario's initial SoC at that instant
    let initial = KibamState::at_soc(inputs.scenario.initial_soc, t0, &inputs.params);
    let started = Instant::now();
    let schedule = plan_with(&inputs.scenario, &inputs.params, &initial, horizon_end, &inputs.options())?;
    let elapsed = started.elapsed();

    create_dir(&m.out)?;
    write_plan_files(&m.out, "", &schedule, &inputs.params)?;
    say(out, format_args!("total reward: {}", schedule.total_reward));
    if schedule.tasks.is_empty() {
        say(out, format_args!("tasks: 0"));
    } else {
        say(out, format_args!("tasks: {} ({})", schedule.tasks.len(), payload_counts(&schedule.tasks)));
    }
    if let Some(min) = schedule.min_soc(&inputs.params) {
        say(out, format_args!("min predicted SoC: {min:.4} (floor {})", inputs.soc_floor()));
    }
    if schedule.heuristic {
        say(out, format_args!("note: beam cap reached, schedule is not proven optimal"));
    }
    // timing varies run to run, so it stays off the deterministic output
    eprintln!("planned {} candidates in {:.3} s", schedule.stats.candidates, elapsed.as_secs_f64());
    Ok(schedule)
}

/// Result of a closed-loop run.
pub struct RunOutput {
    pub log: RunLog,
    /// Tasks that actually ran on board.
    pub executed: Vec<ScheduledTask>,
    pub safe_mode_activations: usize,
}

fn closed_loop(inputs: &Inputs) -> Result<(RunOutput, SimSatellite), CliError> {
    let mut sat = SimSatellite::new(
        &inputs.scenario,
        inputs.truth.clone(),
        inputs.failures.clone(),
        inputs.horizon.min_elevation,
    );
    let log = run(&inputs.scenario, &inputs.params, &inputs.horizon, &mut sat, inputs.span_end)
        .map_err(|e| CliError::Infeasible(e.to_string()))?;
    let executed = sat
        .executed()
        .iter()
        .filter(|e| !e.shed && e.task.start < inputs.span_end)
        .map(|e| e.task.clone())
        .collect();
    let safe_mode_activations = sat.safe_mode_activations();
    Ok((RunOutput { log, executed, safe_mode_activations }, sat))
}

pub fn cmd_run(m: &Manifest, out: &mut dyn Write) -> Result<RunOutput, CliError> {
    let inputs = m.load()?;
    let started = Instant::now();
    let (result, sat) = closed_loop(&inputs)?;
    let elapsed = started.elapsed();

    create_dir(&m.out)?;
    let plans = m.out.join("plans");
    create_dir(&plans)?;
    for plan in &result.log.plans {
        write_plan_files(&plans, &format!("{}_", plan.plan_id), &plan.schedule, &inputs.params)?;
    }
    write_file(&m.out.join("runlog.csv"), |f| result.log.write_csv(f))?;
    let text_path = m.out.join("runlog.txt");
    fs::write(&text_path, result.log.text_log()).map_err(output_err(&text_path))?;
    write_file(&m.out.join("telemetry.csv"), |f| write_telemetry_csv(f, sat.telemetry()))?;
    write_file(&m.out.join("executed.csv"), |f| write_executed_csv(f, &sat))?;

    for line in &result.log.text {
        say(out, format_args!("{line}"));
    }
    let reward = result.executed.iter().map(|t| t.reward).fold(0.0, |acc, r| acc + r);
    say(out, format_args!("executed reward: {reward} ({})", payload_counts(&result.executed)));
    say(out, format_args!("safe-mode activations: {}", result.safe_mode_activations));
    eprintln!("closed loop over {:.1} h in {:.3} s", inputs.span_end / 3600.0, elapsed.as_secs_f64());
    Ok(result)
}

fn write_executed_csv(file: File, sat: &SimSatellite) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["window_id", "payload", "start_s", "end_s", "reward", "plan_id", "shed"])?;
    for e in sat.executed() {
        w.write_record([
            e.task.window_id.clone(),
            e.task.payload.clone(),
            e.task.start.to_string(),
            e.task.end.to_string(),
            e.task.reward.to_string(),
            e.plan_id.clone(),
            e.shed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Which side chose a window.
pub fn chosen_by(receding: bool, monolithic: bool) -> &'static str {
    match (receding, monolithic) {
        (true, true) => "both",
        (true, false) => "receding",
        (false, true) => "monolithic",
        (false, false) => "neither",
    }
}

pub fn cmd_compare(m: &Manifest, out: &mut dyn Write) -> Result<(), CliError> {
    let inputs = m.load()?;
    let (result, sat) = closed_loop(&inputs)?;
    let initial = KibamState::at_soc(inputs.scenario.initial_soc, 0.0, &inputs.params);
    let monolithic = plan_with(&inputs.scenario, &inputs.params, &initial, inputs.span_end, &inputs.options())?;

    let receding: BTreeSet<&str> = result.executed.iter().map(|t| t.window_id.as_str()).collect();
    let mono: BTreeSet<&str> = monolithic.tasks.iter().map(|t| t.window_id.as_str()).collect();

    create_dir(&m.out)?;
    write_file(&m.out.join("runlog.csv"), |f| result.log.write_csv(f))?;
    write_file(&m.out.join("executed.csv"), |f| write_executed_csv(f, &sat))?;
    write_plan_files(&m.out, "monolithic_", &monolithic, &inputs.params)?;
    write_file(&m.out.join("compare.csv"), |f| {
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["window_id", "payload", "start_s", "end_s", "chosen_by"])?;
        for win in &inputs.scenario.windows {
            if win.end > inputs.span_end {
                continue;
            }
            let id = win.id.as_str();
            w.write_record([
                id,
                &win.payload,
                &win.start.to_string(),
                &win.end.to_string(),
                chosen_by(receding.contains(id), mono.contains(id)),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;

    let mut totals: BTreeMap<&str, [usize; 2]> = BTreeMap::new();
    for p in &inputs.scenario.payloads {
        totals.insert(&p.name, [0, 0]);
    }
    for t in &result.executed {
        totals.entry(&t.payload).or_default()[0] += 1;
    }
    for t in &monolithic.tasks {
        totals.entry(&t.payload).or_default()[1] += 1;
    }
    let receding_reward = result.executed.iter().map(|t| t.reward).fold(0.0, |acc, r| acc + r);
    write_file(&m.out.join("compare_totals.csv"), |f| {
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["payload", "receding", "monolithic"])?;
        for (p, [r, mo]) in &totals {
            w.write_record([p.to_string(), r.to_string(), mo.to_string()])?;
        }
        w.write_record(["reward".to_string(), receding_reward.to_string(), monolithic.total_reward.to_string()])?;
        w.flush()?;
        Ok(())
    })?;

    say(out, format_args!("{:<10} {:>9} {:>10}", "payload", "receding", "monolithic"));
    for (p, [r, mo]) in &totals {
        say(out, format_args!("{p:<10} {r:>9} {mo:>10}"));
    }
    say(out, format_args!("{:<10} {:>9} {:>10}", "reward", receding_reward, monolithic.total_reward));
    Ok(())
}

pub const DEFAULT_TRUTH: &str = "\
# Simulated pack: same cell model, but the true initial charge is 5 % above
# the planner's belief.
initial_soc = 0.80
noise_sigma_v = 0.02
noise_sigma_i = 0.05
cadence_s = 120.0
seed = 1
";

pub const DEFAULT_HORIZON: &str = "\
interval_s = 86400.0
min_elevation_deg = 25.0
# Exact planning of two-day horizons is exponential in the number of
# equal-reward selections; a beam of 64 labels per epoch is plenty here.
beam_cap = 64
";

pub fn cmd_synth(dir: &Path, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let scenario = gomx4_scenario(seed);
    write_scenario_dir(dir, &scenario).map_err(output_err(dir))?;
    let params = BatteryParams::gomx4_like();
    let write = |name: &str, text: &str| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(output_err(&path))
    };
    write("battery.toml", &params.to_toml_string())?;
    write("truth.toml", &format!("{DEFAULT_TRUTH}\n[battery]\n{}", params.to_toml_string()))?;
    write("horizon.toml", DEFAULT_HORIZON)?;
    write("fail.csv", "pass_index,fail\n5,1\n")?;
    say(out, format_args!("wrote {} ({} windows, {} passes)", dir.display(), scenario.windows.len(), scenario.passes.len()));
    Ok(())
}
