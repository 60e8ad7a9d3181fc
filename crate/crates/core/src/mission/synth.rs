//! Synthetic orbital patterns for self-contained scenarios.
//!
//! This is not orbital mechanics: passes are clustered in two daily groups
//! spaced one orbit apart, and sunlight follows a fixed sunlit fraction of
//! every orbit. Output is deterministic for a seed.

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{partition_window, GroundPass, PayloadDef, Scenario, SunlightEpisode, TaskWindow};

/// Shortest and longest start-to-start spacing between consecutive passes.
pub const MIN_PASS_GAP_S: f64 = 90.0 * 60.0;
pub const MAX_PASS_GAP_S: f64 = 15.0 * 3600.0;

const HALF_DAY_S: f64 = 12.0 * 3600.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub orbit_period: f64,
    /// Sunlit fraction of each orbit.
    pub visibility_fraction: f64,
    pub horizon: f64,
    pub seed: u64,
    pub infeed: f64,
    pub station: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            orbit_period: 5700.0,
            visibility_fraction: 0.6,
            horizon: 48.0 * 3600.0,
            seed: 0,
            infeed: 1.6,
            station: "aalborg".into(),
        }
    }
}

/// Passes and sunlight episodes for `horizon` seconds with default infeed
/// and station name.
pub fn synthesize_passes(
    orbit_period: f64,
    visibility_fraction: f64,
    horizon: f64,
    seed: u64,
) -> (Vec<GroundPass>, Vec<SunlightEpisode>) {
    synthesize(&SynthConfig {
        orbit_period,
        visibility_fraction,
        horizon,
        seed,
        ..SynthConfig::default()
    })
}

pub fn synthesize(cfg: &SynthConfig) -> (Vec<GroundPass>, Vec<SunlightEpisode>) {
    assert!(cfg.orbit_period > 0.0, "orbit period must be positive");
    assert!(
        cfg.visibility_fraction > 0.0 && cfg.visibility_fraction < 1.0,
        "visibility fraction must lie in (0, 1)"
    );
    if cfg.horizon <= 0.0 {
        return (Vec::new(), Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Consecutive passes within a cluster are a whole number of orbits apart.
    let spacing = cfg.orbit_period * (MIN_PASS_GAP_S / cfg.orbit_period).ceil();
    let max_in_cluster = (1.0 + (6.0 * 3600.0 / spacing).floor()).clamp(1.0, 4.0) as usize;
    let jitter_max = ((spacing - MIN_PASS_GAP_S) / 2.0).min(60.0);

    let mut passes = Vec::new();
    let first = rng.random_range(0.0..2.0 * 3600.0);
    let mut cluster_start = first;
    while cluster_start < cfg.horizon {
        let count = rng.random_range(2..=max_in_cluster.max(2)).min(max_in_cluster);
        for i in 0..count {
            let jitter = if jitter_max > 0.0 {
                rng.random_range(-jitter_max..=jitter_max)
            } else {
                0.0
            };
            let start = cluster_start + i as f64 * spacing + jitter;
            let duration = rng.random_range(300.0..720.0);
            let max_elevation = rng.random_range(5.0..90.0_f64);
            if start >= 0.0 && start + duration <= cfg.horizon {
                passes.push(GroundPass {
                    station: cfg.station.clone(),
                    start,
                    end: start + duration,
                    max_elevation: (max_elevation * 100.0).round() / 100.0,
                });
            }
        }
        cluster_start += HALF_DAY_S + rng.random_range(-1800.0..=1800.0);
    }

    let phase = rng.random_range(0.0..cfg.orbit_period);
    let sunlit = cfg.visibility_fraction * cfg.orbit_period;
    let mut sunlight = Vec::new();
    let mut k = -1.0;
    loop {
        let start = phase + k * cfg.orbit_period;
        if start >= cfg.horizon {
            break;
        }
        let (lo, hi) = (start.max(0.0), (start + sunlit).min(cfg.horizon));
        if hi > lo {
            sunlight.push(SunlightEpisode {
                start: lo,
                end: hi,
                infeed: cfg.infeed,
            });
        }
        k += 1.0;
    }
    (passes, sunlight)
}

/// The five plan-upload passes of the two-day experiment: handover instant
/// (end of pass, seconds after 2021-05-10T00:00Z) and maximum elevation.
pub const UPLOAD_PASSES: [(f64, f64); 5] = [
    (57.0 * 60.0, 85.85),
    (13.0 * 3600.0 + 50.0 * 60.0, 36.22),
    (15.0 * 3600.0 + 23.0 * 60.0, 28.42),
    (24.0 * 3600.0 + 34.0 * 60.0, 53.59),
    (39.0 * 3600.0 + 1.0 * 60.0, 44.67),
];

/// Low passes (below the upload threshold) interleaved one orbit away from
/// the upload passes: offset from an upload pass end, and max elevation.
const LOW_PASSES: [(usize, f64, f64); 7] = [
    (0, 5700.0, 12.4),
    (1, -5700.0, 9.8),
    (2, 5700.0, 17.1),
    (3, -5700.0, 14.0),
    (3, 5700.0, 21.3),
    (4, -5700.0, 11.5),
    (4, 5700.0, 6.2),
];

const PASS_DURATION_S: f64 = 540.0;

pub fn gomx4_payloads() -> Vec<PayloadDef> {
    vec![
        PayloadDef {
            name: "adsb".into(),
            power_draw: 0.15,
            reward_per_window: 1.0,
            exclusion_group: None,
        },
        PayloadDef {
            name: "camera".into(),
            power_draw: 0.3,
            reward_per_window: 2.0,
            exclusion_group: None,
        },
        PayloadDef {
            name: "hsl".into(),
            power_draw: 1.6,
            reward_per_window: 4.0,
            exclusion_group: Some("sband".into()),
        },
        PayloadDef {
            name: "isl".into(),
            power_draw: 1.5,
            reward_per_window: 3.0,
            exclusion_group: Some("sband".into()),
        },
    ]
}

/// Payload access windows along a synthetic polar orbit: ISL over both poles
/// (partitioned into 7-minute chunks), HSL over a high-latitude and a
/// mid-latitude station, ADS-B over the Atlantic and camera over Greenland.
pub fn gomx4_windows(orbit_period: f64, horizon: f64, seed: u64) -> Vec<TaskWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f15);
    let mut out = Vec::new();
    let orbits_per_day = (86_400.0 / orbit_period).round() as usize;
    let push = |out: &mut Vec<TaskWindow>, id: String, payload: &str, start: f64, len: f64| {
        if start >= 0.0 && start + len <= horizon {
            out.push(TaskWindow {
                id,
                payload: payload.into(),
                start,
                end: start + len,
                reward: None,
            });
        }
    };
    let mut k = 0usize;
    loop {
        let t = k as f64 * orbit_period;
        if t >= horizon {
            break;
        }
        let slot = k % orbits_per_day.max(1);
        for (pole, frac) in [("n", 0.25), ("s", 0.75)] {
            let len = rng.random_range(1290.0..1380.0);
            let start = t + frac * orbit_period - len / 2.0 + rng.random_range(-60.0..60.0);
            let episode = TaskWindow {
                id: format!("isl-{k:03}{pole}"),
                payload: "isl".into(),
                start,
                end: start + len,
                reward: None,
            };
            for chunk in partition_window(&episode, 420.0) {
                if chunk.start >= 0.0 && chunk.end <= horizon {
                    out.push(chunk);
                }
            }
        }
        if rng.random_bool(0.5) {
            let len = rng.random_range(360.0..600.0);
            let start = t + 0.31 * orbit_period + rng.random_range(-90.0..90.0);
            push(&mut out, format!("hsl-{k:03}sv"), "hsl", start, len);
        }
        if slot == 4 || slot == 11 {
            let len = rng.random_range(360.0..540.0);
            let start = t + 0.6 * orbit_period + rng.random_range(-90.0..90.0);
            push(&mut out, format!("hsl-{k:03}co"), "hsl", start, len);
        }
        if matches!(slot, 0 | 1 | 2 | 7 | 8 | 9) {
            let len = rng.random_range(900.0..1200.0);
            let start = t + 0.45 * orbit_period + rng.random_range(-120.0..120.0);
            push(&mut out, format!("adsb-{k:03}"), "adsb", start, len);
        }
        if matches!(slot, 3 | 4 | 10) {
            let len = rng.random_range(240.0..360.0);
            let start = t + 0.18 * orbit_period + rng.random_range(-60.0..60.0);
            push(&mut out, format!("cam-{k:03}"), "camera", start, len);
        }
        k += 1;
    }
    out.sort_by(|a, b| a.start.total_cmp(&b.start).then_with(|| a.id.cmp(&b.id)));
    // Round to whole milliseconds so the CSV text stays short.
    for w in &mut out {
        w.start = (w.start * 1000.0).round() / 1000.0;
        w.end = (w.end * 1000.0).round() / 1000.0;
    }
    out
}

/// Two-day GOMX-4A-like scenario: the five upload passes of the experiment
/// plus low passes, synthetic sunlight and payload windows.
pub fn gomx4_scenario(seed: u64) -> Scenario {
    let orbit_period = 5700.0;
    let horizon = 48.0 * 3600.0;
    let (_, sunlight) = synthesize(&SynthConfig {
        orbit_period,
        horizon,
        seed,
        ..SynthConfig::default()
    });
    let mut passes: Vec<GroundPass> = UPLOAD_PASSES
        .iter()
        .map(|&(end, el)| GroundPass {
            station: "aalborg".into(),
            start: end - PASS_DURATION_S,
            end,
            max_elevation: el,
        })
        .collect();
    for &(anchor, offset, el) in &LOW_PASSES {
        let end = UPLOAD_PASSES[anchor].0 + offset;
        passes.push(GroundPass {
            station: "aalborg".into(),
            start: end - PASS_DURATION_S,
            end,
            max_elevation: el,
        });
    }
    let sunlight = sunlight
        .into_iter()
        .map(|s| SunlightEpisode {
            start: (s.start * 1000.0).round() / 1000.0,
            end: (s.end * 1000.0).round() / 1000.0,
            ..s
        })
        .collect();
    let mut scenario = Scenario {
        epoch: Utc.with_ymd_and_hms(2021, 5, 10, 0, 0, 0).unwrap(),
        payloads: gomx4_payloads(),
        windows: gomx4_windows(orbit_period, horizon, seed),
        sunlight,
        passes,
        background_load: 0.5,
        pass_load: 0.3,
        soc_floor: 0.62,
        initial_soc: 0.75,
    };
    scenario.sort();
    scenario
}
