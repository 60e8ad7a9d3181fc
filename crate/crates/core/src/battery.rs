//! Kinetic battery model (KiBaM).
//!
//! Charge is held in two wells: the *available* well feeds the load directly,
//! the *bound* well exchanges charge with it through diffusion. With well
//! fill heights `h_a = a / (2c)` and `h_b = b / (2(1 - c))` (where `c` is the
//! available-well share of capacity) the state evolves as
//!
//! ```text
//! da/dt = -l + v (h_b - h_a)
//! db/dt =    - v (h_b - h_a)
//! ```
//!
//! For the default equal split (`c = 0.5`) the heights are the charges
//! themselves and this is the familiar `da/dt = -l + v (b - a)` pair.
//!
//! Loads are piecewise constant, so every step is solved in closed form.
//! Units are amperes, seconds and ampere-seconds throughout; a positive load
//! discharges the battery, a negative load charges it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack used when deciding that a well is empty or full.
pub const CHARGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum BatteryError {
    /// The available well ran dry inside a step. `state` is the battery at
    /// the depletion instant `at`.
    #[error("battery depleted at t = {at:.3} s")]
    Depleted { at: f64, state: KibamState },
    #[error("negative step duration {0} s")]
    NegativeDuration(f64),
    #[error("evolve target {until} s lies before state time {time} s")]
    TargetInPast { time: f64, until: f64 },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: invalid battery parameters: {message}")]
    Invalid { path: String, message: String },
}

/// Static battery description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    #[serde(rename = "capacity_as")]
    pub total_capacity: f64,
    #[serde(rename = "diffusion_per_s")]
    pub diffusion_rate: f64,
    #[serde(default = "default_well_split")]
    pub well_split: f64,
    pub voltage_full: f64,
    pub voltage_floor: f64,
    pub soc_at_floor: f64,
}

fn default_well_split() -> f64 {
    0.5
}

impl BatteryParams {
    /// GOMX-4-like pack: the voltage anchors are the 16.2 V full-charge and
    /// 14.8 V operational-floor readings, the latter holding about 55 % of
    /// the energy. Capacity and diffusion rate are placeholder values.
    pub fn gomx4_like() -> Self {
        Self {
            total_capacity: 20_000.0,
            diffusion_rate: 5e-5,
            well_split: 0.5,
            voltage_full: 16.2,
            voltage_floor: 14.8,
            soc_at_floor: 0.55,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = [
            self.total_capacity,
            self.diffusion_rate,
            self.well_split,
            self.voltage_full,
            self.voltage_floor,
            self.soc_at_floor,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err("all parameters must be finite".into());
        }
        if self.total_capacity <= 0.0 {
            return Err(format!("capacity_as must be > 0, got {}", self.total_capacity));
        }
        if self.diffusion_rate < 0.0 {
            return Err(format!("diffusion_per_s must be >= 0, got {}", self.diffusion_rate));
        }
        if !(self.well_split > 0.0 && self.well_split < 1.0) {
            return Err(format!("well_split must lie in (0, 1), got {}", self.well_split));
        }
        if self.voltage_floor >= self.voltage_full {
            return Err(format!(
                "voltage_floor ({}) must be below voltage_full ({})",
                self.voltage_floor, self.voltage_full
            ));
        }
        if !(0.0..1.0).contains(&self.soc_at_floor) {
            return Err(format!("soc_at_floor must lie in [0, 1), got {}", self.soc_at_floor));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let params: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        params.validate().map_err(|message| ConfigError::Invalid {
            path: origin.to_string(),
            message,
        })?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: origin.clone(),
            source,
        })?;
        Self::from_toml_str(&text, &origin)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("battery parameters always serialize")
    }

    /// Capacity of the available well.
    pub fn available_capacity(&self) -> f64 {
        self.well_split * self.total_capacity
    }

    /// Capacity of the bound well.
    pub fn bound_capacity(&self) -> f64 {
        (1.0 - self.well_split) * self.total_capacity
    }

    /// Relaxation rate of the height difference between the wells.
    fn relaxation_rate(&self) -> f64 {
        let c = self.well_split;
        self.diffusion_rate / (2.0 * c * (1.0 - c))
    }
}

/// Two-well charge at an instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KibamState {
    pub available: f64,
    pub bound: f64,
    pub time: f64,
}

impl KibamState {
    /// Equilibrium state (equal well heights) holding `soc` of the capacity.
    pub fn at_soc(soc: f64, time: f64, params: &BatteryParams) -> Self {
        let total = soc.clamp(0.0, 1.0) * params.total_capacity;
        Self {
            available: params.well_split * total,
            bound: (1.0 - params.well_split) * total,
            time,
        }
    }

    pub fn full(time: f64, params: &BatteryParams) -> Self {
        Self::at_soc(1.0, time, params)
    }

    pub fn total(&self) -> f64 {
        self.available + self.bound
    }

    /// Same split ratio, scaled to hold `soc` of the capacity.
    pub fn rescaled_to_soc(&self, soc: f64, params: &BatteryParams) -> Self {
        let total = self.total();
        if total <= 0.0 {
            return Self::at_soc(soc, self.time, params);
        }
        let target = soc.clamp(0.0, 1.0) * params.total_capacity;
        let ratio = self.available / total;
        let mut out = Self {
            available: ratio * target,
            bound: (1.0 - ratio) * target,
            time: self.time,
        };
        // A split that no longer fits its wells is pushed into the other well.
        let a_cap = params.available_capacity();
        let b_cap = params.bound_capacity();
        if out.available > a_cap {
            out.bound += out.available - a_cap;
            out.available = a_cap;
        }
        if out.bound > b_cap {
            out.available = (out.available + out.bound - b_cap).min(a_cap);
            out.bound = b_cap;
        }
        out
    }

    pub fn check(&self, params: &BatteryParams) -> Result<(), String> {
        let a_cap = params.available_capacity();
        let b_cap = params.bound_capacity();
        if !(self.available >= -CHARGE_EPS && self.available <= a_cap + CHARGE_EPS) {
            return Err(format!("available charge {} outside [0, {}]", self.available, a_cap));
        }
        if !(self.bound >= -CHARGE_EPS && self.bound <= b_cap + CHARGE_EPS) {
            return Err(format!("bound charge {} outside [0, {}]", self.bound, b_cap));
        }
        Ok(())
    }
}

/// One constant-load interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSegment {
    pub start: f64,
    pub end: f64,
    pub load: f64,
}

/// Piecewise-constant net battery load. Uncovered time carries zero load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadProfile {
    segments: Vec<LoadSegment>,
}

impl LoadProfile {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a profile from sorted, non-overlapping segments.
    pub fn from_segments(segments: Vec<LoadSegment>) -> Result<Self, String> {
        for (i, s) in segments.iter().enumerate() {
            if !(s.start.is_finite() && s.end.is_finite() && s.load.is_finite()) {
                return Err(format!("segment {i} is not finite"));
            }
            if s.end < s.start {
                return Err(format!("segment {i} ends before it starts"));
            }
            if i > 0 && s.start < segments[i - 1].end {
                return Err(format!("segment {i} overlaps or precedes segment {}", i - 1));
            }
        }
        Ok(Self {
            segments: segments.into_iter().filter(|s| s.end > s.start).collect(),
        })
    }

    /// Sums possibly overlapping `(start, end, load)` contributions into a
    /// single profile. Adjacent pieces with equal load are merged.
    pub fn superpose<I>(contributions: I) -> Self
    where
        I: IntoIterator<Item = LoadSegment>,
    {
        let parts: Vec<LoadSegment> = contributions
            .into_iter()
            .filter(|c| c.end > c.start && c.load != 0.0)
            .collect();
        if parts.is_empty() {
            return Self::empty();
        }
        let mut times: Vec<f64> = parts.iter().flat_map(|c| [c.start, c.end]).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();

        // Starts and ends sorted separately so the active set can be swept.
        let mut by_start: Vec<usize> = (0..parts.len()).collect();
        by_start.sort_by(|&i, &j| parts[i].start.total_cmp(&parts[j].start));
        let mut active: std::collections::BTreeSet<usize> = Default::default();
        let mut next_start = 0;

        let mut segments: Vec<LoadSegment> = Vec::new();
        for w in times.windows(2) {
            let (t, next) = (w[0], w[1]);
            active.retain(|&i| parts[i].end > t);
            while next_start < by_start.len() && parts[by_start[next_start]].start <= t {
                active.insert(by_start[next_start]);
                next_start += 1;
            }
            // Summing in a fixed order keeps equal-and-opposite loads exact.
            let load: f64 = active.iter().map(|&i| parts[i].load).sum();
            if load == 0.0 {
                continue;
            }
            match segments.last_mut() {
                Some(last) if last.end == t && last.load == load => last.end = next,
                _ => segments.push(LoadSegment { start: t, end: next, load }),
            }
        }
        Self { segments }
    }

    pub fn segments(&self) -> &[LoadSegment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Load in force at `t` (segments are half-open on the right).
    pub fn load_at(&self, t: f64) -> f64 {
        let idx = self.segments.partition_point(|s| s.end <= t);
        match self.segments.get(idx) {
            Some(s) if s.start <= t => s.load,
            _ => 0.0,
        }
    }

    /// Integral of the load over `[from, to]`.
    pub fn charge_between(&self, from: f64, to: f64) -> f64 {
        self.segments
            .iter()
            .map(|s| {
                let lo = s.start.max(from);
                let hi = s.end.min(to);
                if hi > lo {
                    s.load * (hi - lo)
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Every segment boundary inside the open interval `(from, to)`.
    pub fn breakpoints_within(&self, from: f64, to: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for s in &self.segments {
            for t in [s.start, s.end] {
                if t > from && t < to && out.last() != Some(&t) {
                    out.push(t);
                }
            }
        }
        out
    }

    /// Constant-load pieces covering `[from, to]`, zero load filling gaps.
    pub fn pieces(&self, from: f64, to: f64) -> Vec<LoadSegment> {
        let mut out = Vec::new();
        let mut t = from;
        let first = self.segments.partition_point(|s| s.end <= from);
        for s in &self.segments[first..] {
            if t >= to {
                break;
            }
            if s.start >= to {
                break;
            }
            if s.start > t {
                out.push(LoadSegment { start: t, end: s.start, load: 0.0 });
                t = s.start;
            }
            let hi = s.end.min(to);
            if hi > t {
                out.push(LoadSegment { start: t, end: hi, load: s.load });
                t = hi;
            }
        }
        if to > t {
            out.push(LoadSegment { start: t, end: to, load: 0.0 });
        }
        out
    }
}

/// Closed-form solution of the unclamped system after `t` seconds.
#[derive(Debug, Clone, Copy)]
struct FreeFlow {
    a0: f64,
    total0: f64,
    load: f64,
    c: f64,
    k: f64,
    v: f64,
    /// Initial height difference `h_b - h_a`.
    d0: f64,
}

impl FreeFlow {
    fn new(state: &KibamState, load: f64, params: &BatteryParams) -> Self {
        let c = params.well_split;
        let d0 = state.bound / (2.0 * (1.0 - c)) - state.available / (2.0 * c);
        Self {
            a0: state.available,
            total0: state.total(),
            load,
            c,
            k: params.relaxation_rate(),
            v: params.diffusion_rate,
            d0,
        }
    }

    /// `(1 - e^{-kt}) / k`, which tends to `t` as `k -> 0`.
    fn phi(&self, t: f64) -> f64 {
        if self.k == 0.0 {
            t
        } else {
            -(-self.k * t).exp_m1() / self.k
        }
    }

    fn available(&self, t: f64) -> f64 {
        let c = self.c;
        let relax = if self.k == 0.0 { 0.0 } else { -(-self.k * t).exp_m1() };
        self.a0 - self.load * c * t - (1.0 - c) * self.load * self.phi(t)
            + 2.0 * c * (1.0 - c) * self.d0 * relax
    }

    fn at(&self, t: f64) -> (f64, f64) {
        let a = self.available(t);
        (a, self.total0 - self.load * t - a)
    }

    /// Interior stationary point of `available(t)`, if any. `available` is
    /// convex or concave because its derivative is monotone in `t`.
    fn turning_point(&self) -> Option<f64> {
        if self.k == 0.0 {
            return None;
        }
        let c = self.c;
        let num = self.load * c;
        let den = self.v * self.d0 - (1.0 - c) * self.load;
        if den == 0.0 {
            return None;
        }
        let ratio = num / den;
        if ratio > 0.0 && ratio < 1.0 {
            Some(-ratio.ln() / self.k)
        } else {
            None
        }
    }

    /// Earliest `t` in `(0, horizon]` with `available(t)` crossing `level`
    /// in the direction given by `below` (true: drops under the level).
    fn first_crossing(&self, level: f64, below: bool, horizon: f64) -> Option<f64> {
        let outside = |t: f64| {
            let a = self.available(t);
            if below {
                a < level - CHARGE_EPS
            } else {
                a > level + CHARGE_EPS
            }
        };
        let mut pieces = vec![0.0];
        if let Some(tp) = self.turning_point() {
            if tp < horizon {
                pieces.push(tp);
            }
        }
        pieces.push(horizon);
        for w in pieces.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if outside(hi) {
                return Some(bisect(outside, lo, hi));
            }
        }
        None
    }
}

/// Earliest point where a monotone predicate turns true on `[lo, hi]`
/// (`pred(hi)` must hold). Converges well below a millisecond.
fn bisect<F: Fn(f64) -> bool>(pred: F, mut lo: f64, mut hi: f64) -> f64 {
    if pred(lo) {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-9 * hi.abs().max(1.0) {
            break;
        }
    }
    hi
}

/// Clamped phase: available well pinned at capacity, bound well filling up.
fn clamped_bound(b0: f64, t: f64, params: &BatteryParams) -> f64 {
    let b_cap = params.bound_capacity();
    let rate = params.diffusion_rate / (2.0 * (1.0 - params.well_split));
    b_cap + (b0 - b_cap) * (-rate * t).exp()
}

/// Evolves `state` under a constant `net_load` for `duration` seconds.
///
/// Charging beyond the available well's capacity is discarded. Returns
/// [`BatteryError::Depleted`] with the first instant at which the available
/// well empties.
pub fn step_constant(
    state: &KibamState,
    net_load: f64,
    duration: f64,
    params: &BatteryParams,
) -> Result<KibamState, BatteryError> {
    if duration < 0.0 {
        return Err(BatteryError::NegativeDuration(duration));
    }
    if duration == 0.0 {
        return Ok(*state);
    }
    let flow = FreeFlow::new(state, net_load, params);
    let a_cap = params.available_capacity();

    if let Some(t_dep) = flow.first_crossing(0.0, true, duration) {
        let (a, b) = flow.at(t_dep);
        let at = state.time + t_dep;
        return Err(BatteryError::Depleted {
            at,
            state: KibamState {
                available: a.max(0.0),
                bound: b.max(0.0),
                time: at,
            },
        });
    }

    if net_load < 0.0 {
        if let Some(t_full) = flow.first_crossing(a_cap, false, duration) {
            let (_, b_entry) = flow.at(t_full);
            let b_entry = b_entry.min(params.bound_capacity());
            return Ok(KibamState {
                available: a_cap,
                bound: clamped_bound(b_entry, duration - t_full, params),
                time: state.time + duration,
            });
        }
    }

    let (a, b) = flow.at(duration);
    Ok(KibamState {
        available: a.clamp(0.0, a_cap),
        bound: b.clamp(0.0, params.bound_capacity()),
        time: state.time + duration,
    })
}

/// Evolves `state` through `profile` up to `until`.
pub fn evolve(
    state: &KibamState,
    profile: &LoadProfile,
    until: f64,
    params: &BatteryParams,
) -> Result<KibamState, BatteryError> {
    evolve_traced(state, profile, until, params, |_| {})
}

/// Like [`evolve`], calling `visit` with the state at every piece boundary
/// (including the start and the end).
pub fn evolve_traced<F: FnMut(&KibamState)>(
    state: &KibamState,
    profile: &LoadProfile,
    until: f64,
    params: &BatteryParams,
    mut visit: F,
) -> Result<KibamState, BatteryError> {
    if until < state.time {
        return Err(BatteryError::TargetInPast { time: state.time, until });
    }
    let mut current = *state;
    visit(&current);
    for piece in profile.pieces(state.time, until) {
        current = step_constant(&current, piece.load, piece.end - current.time, params)?;
        current.time = piece.end;
        visit(&current);
    }
    Ok(current)
}

/// Total-charge state of charge, `(a + b) / C`.
pub fn soc(state: &KibamState, params: &BatteryParams) -> f64 {
    (state.total() / params.total_capacity).clamp(0.0, 1.0)
}

/// Affine voltage map through `(soc_at_floor, voltage_floor)` and
/// `(1, voltage_full)`; extrapolates below the floor.
pub fn soc_to_voltage(soc: f64, params: &BatteryParams) -> f64 {
    let f = (soc - params.soc_at_floor) / (1.0 - params.soc_at_floor);
    params.voltage_floor * (1.0 - f) + params.voltage_full * f
}

/// Inverse of [`soc_to_voltage`], clamped to `[0, 1]`.
pub fn voltage_to_soc(voltage: f64, params: &BatteryParams) -> f64 {
    let f = (voltage - params.voltage_floor) / (params.voltage_full - params.voltage_floor);
    let soc = params.soc_at_floor * (1.0 - f) + f;
    soc.clamp(0.0, 1.0)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Fixed-step RK4 integration of the unclamped two-well system.
    use super::*;

    pub fn rk4(state: &KibamState, load: f64, duration: f64, dt: f64, p: &BatteryParams) -> (f64, f64) {
        let c = p.well_split;
        let f = |a: f64, b: f64| {
            let q = p.diffusion_rate * (b / (2.0 * (1.0 - c)) - a / (2.0 * c));
            (-load + q, -q)
        };
        let (mut a, mut b) = (state.available, state.bound);
        let steps = (duration / dt).round() as usize;
        let h = duration / steps as f64;
        for _ in 0..steps {
            let (k1a, k1b) = f(a, b);
            let (k2a, k2b) = f(a + 0.5 * h * k1a, b + 0.5 * h * k1b);
            let (k3a, k3b) = f(a + 0.5 * h * k2a, b + 0.5 * h * k2b);
            let (k4a, k4b) = f(a + h * k3a, b + h * k3b);
            a += h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
            b += h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
        }
        (a, b)
    }
}
