//! State-of-charge estimation from downlinked telemetry.
//!
//! [`reconcile`] works on residuals against the predicted trajectory: the
//! current residual is integrated (Coulomb counting) and the voltage residual
//! is read through the affine voltage map. Telemetry generated by the
//! predicted trajectory itself therefore yields exactly zero correction,
//! whatever the sampling cadence.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::battery::{
    evolve, soc, step_constant, voltage_to_soc, BatteryError, BatteryParams, KibamState,
    LoadProfile,
};
use crate::mission::io::{finite, parse_rows, read_text};
use crate::mission::MissionError;

pub const TELEMETRY_HEADER: [&str; 3] = ["time_s", "voltage_v", "current_a"];

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("telemetry log has no samples in the estimation window")]
    EmptyLog,
    #[error(transparent)]
    Battery(#[from] BatteryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetrySample {
    pub time: f64,
    pub voltage: f64,
    /// Net battery current, positive while discharging.
    pub current: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryLog {
    pub samples: Vec<TelemetrySample>,
    /// Nominal sampling interval in seconds.
    pub cadence: f64,
}

impl TelemetryLog {
    /// Validates ordering and voltages.
    pub fn new(samples: Vec<TelemetrySample>, cadence: f64) -> Result<Self, String> {
        for (i, s) in samples.iter().enumerate() {
            if s.voltage.is_nan() || s.voltage <= 0.0 {
                return Err(format!("sample {i} at t = {} s has voltage {}", s.time, s.voltage));
            }
            if i > 0 && s.time <= samples[i - 1].time {
                return Err(format!("sample {i} at t = {} s is not after its predecessor", s.time));
            }
        }
        Ok(Self { samples, cadence })
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Samples with `time > since`.
    pub fn after(&self, since: f64) -> &[TelemetrySample] {
        let i = self.samples.partition_point(|s| s.time <= since);
        &self.samples[i..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocEstimate {
    pub time: f64,
    pub state: KibamState,
    /// Half-width of the plausible SoC interval around the estimate.
    pub confidence_window: f64,
    /// Signed SoC change applied relative to the prediction.
    pub correction_applied: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Weight of the voltage reading in the blend.
    pub voltage_weight: f64,
    /// Samples in the robust (median) voltage read.
    pub voltage_window: usize,
    /// Longer sampling gaps fall back to the scheduled load.
    pub max_gap: f64,
    /// Largest SoC correction per reconcile.
    pub correction_cap: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            voltage_weight: 0.3,
            voltage_window: 5,
            max_gap: 1800.0,
            correction_cap: 0.08,
        }
    }
}

fn trapezoid(samples: &[TelemetrySample], max_gap: f64, mut value: impl FnMut(&TelemetrySample) -> f64) -> (f64, f64) {
    let mut integral = 0.0;
    let mut skipped = 0.0;
    for w in samples.windows(2) {
        let dt = w[1].time - w[0].time;
        if dt > max_gap {
            skipped += dt;
            continue;
        }
        integral += 0.5 * (value(&w[0]) + value(&w[1])) * dt;
    }
    (integral, skipped)
}

/// Coulomb counting from `initial_soc` at the first sample, with every gap
/// interpolated linearly.
///
/// The well split comes from running the battery model under the
/// trapezoidal interval means, which reproduces the trapezoid total exactly
/// unless a well clamps; the state is then rescaled to the counted total.
pub fn coulomb_count(
    log: &TelemetryLog,
    initial_soc: f64,
    params: &BatteryParams,
) -> Result<SocEstimate, EstimateError> {
    coulomb_count_with_fallback(log, initial_soc, params, f64::INFINITY, &LoadProfile::empty())
}

/// Like [`coulomb_count`], but gaps longer than `max_gap` integrate
/// `scheduled` instead of interpolating.
pub fn coulomb_count_with_fallback(
    log: &TelemetryLog,
    initial_soc: f64,
    params: &BatteryParams,
    max_gap: f64,
    scheduled: &LoadProfile,
) -> Result<SocEstimate, EstimateError> {
    let (first, last) = match (log.samples.first(), log.samples.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(EstimateError::EmptyLog),
    };
    let cap = params.total_capacity;
    let mut state = KibamState::at_soc(initial_soc, first.time, params);
    let mut drawn = 0.0;
    let mut interpolated = 0.0;
    for w in log.samples.windows(2) {
        let dt = w[1].time - w[0].time;
        let (charge, mean) = if dt > max_gap {
            let q = scheduled.charge_between(w[0].time, w[1].time);
            (q, q / dt)
        } else {
            let mean = 0.5 * (w[0].current + w[1].current);
            if dt > 1.5 * log.cadence {
                interpolated += (mean * dt).abs();
            }
            (mean * dt, mean)
        };
        drawn += charge;
        state = match step_constant(&state, mean, dt, params) {
            Ok(s) => s,
            Err(BatteryError::Depleted { state: s, .. }) => KibamState { time: w[1].time, ..s },
            Err(e) => return Err(e.into()),
        };
        state.time = w[1].time;
    }
    let total_soc = initial_soc - drawn / cap;
    let state = state.rescaled_to_soc(total_soc, params);
    Ok(SocEstimate {
        time: last.time,
        state: KibamState { time: last.time, ..state },
        confidence_window: interpolated / cap,
        correction_applied: 0.0,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Corrects the belief `anchor`, propagated along `scheduled`, with the
/// telemetry taken after `anchor.time`.
///
/// Two readings of the SoC offset at the last sample are blended:
/// the median voltage residual over the trailing samples, and the median
/// voltage residual over the leading samples carried forward by the
/// integrated current residual. The correction is clamped to
/// `cfg.correction_cap`, and the predicted well split is kept.
pub fn reconcile(
    anchor: &KibamState,
    scheduled: &LoadProfile,
    log: &TelemetryLog,
    params: &BatteryParams,
    cfg: &EstimatorConfig,
) -> Result<SocEstimate, EstimateError> {
    let samples = log.after(anchor.time);
    if samples.is_empty() {
        return Err(EstimateError::EmptyLog);
    }
    let cap = params.total_capacity;

    let mut predicted = *anchor;
    let mut voltage_residual = Vec::with_capacity(samples.len());
    let mut current_residual = Vec::with_capacity(samples.len());
    for s in samples {
        predicted = evolve(&predicted, scheduled, s.time, params)?;
        let soc_pred = soc(&predicted, params);
        voltage_residual.push(voltage_to_soc(s.voltage, params) - soc_pred);
        current_residual.push(TelemetrySample {
            current: s.current - scheduled.load_at(s.time),
            ..*s
        });
    }

    let k = cfg.voltage_window.max(1).min(samples.len());
    let mut head = voltage_residual[..k].to_vec();
    let mut tail = voltage_residual[samples.len() - k..].to_vec();
    let start_offset = median(&mut head);
    let end_offset = median(&mut tail);
    let (residual_charge, _) = trapezoid(&current_residual, cfg.max_gap, |s| s.current);
    let counted_offset = start_offset - residual_charge / cap;

    let w = cfg.voltage_weight.clamp(0.0, 1.0);
    let blended = w * end_offset + (1.0 - w) * counted_offset;
    let correction = blended.clamp(-cfg.correction_cap, cfg.correction_cap);

    let spread = {
        let mut dev: Vec<f64> = tail.iter().map(|r| (r - end_offset).abs()).collect();
        median(&mut dev)
    };
    let soc_pred = soc(&predicted, params);
    let state = predicted.rescaled_to_soc(soc_pred + correction, params);
    Ok(SocEstimate {
        time: predicted.time,
        state,
        confidence_window: 0.5 * (end_offset - counted_offset).abs() + spread,
        correction_applied: soc(&state, params) - soc_pred,
    })
}

/// Carries an estimate forward to `t0` along the scheduled load.
pub fn propagate_to(
    estimate: &SocEstimate,
    scheduled: &LoadProfile,
    t0: f64,
    params: &BatteryParams,
) -> Result<KibamState, BatteryError> {
    evolve(&estimate.state, scheduled, t0, params)
}

/// Parameter learning hook. Only the initial SoC is corrected at present, so
/// this returns the model parameters unchanged.
pub fn learn_parameters(params: &BatteryParams, _log: &TelemetryLog) -> BatteryParams {
    *params
}

#[derive(Debug, Deserialize)]
struct TelemetryRow {
    time_s: f64,
    voltage_v: f64,
    current_a: f64,
}

pub fn read_telemetry_csv(text: &str, file: &str, cadence: f64) -> Result<TelemetryLog, MissionError> {
    let rows = parse_rows::<TelemetryRow>(text, file, &TELEMETRY_HEADER)?;
    let mut samples = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        samples.push(TelemetrySample {
            time: finite(file, line, 1, r.time_s)?,
            voltage: finite(file, line, 2, r.voltage_v)?,
            current: finite(file, line, 3, r.current_a)?,
        });
    }
    TelemetryLog::new(samples, cadence).map_err(|message| MissionError::Invalid {
        file: file.to_string(),
        message,
    })
}

pub fn load_telemetry(path: &Path, cadence: f64) -> Result<TelemetryLog, MissionError> {
    read_telemetry_csv(&read_text(path)?, &path.display().to_string(), cadence)
}

pub fn write_telemetry_csv<W: std::io::Write>(out: W, samples: &[TelemetrySample]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TELEMETRY_HEADER)?;
    for s in samples {
        w.write_record([s.time.to_string(), s.voltage.to_string(), s.current.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
