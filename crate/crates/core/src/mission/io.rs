use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{GroundPass, MissionError, PayloadDef, Scenario, SunlightEpisode, TaskWindow};

pub const WINDOWS_HEADER: [&str; 5] = ["id", "payload", "start_s", "end_s", "reward"];
pub const SUNLIGHT_HEADER: [&str; 3] = ["start_s", "end_s", "infeed_a"];
pub const PASSES_HEADER: [&str; 4] = ["station", "start_s", "end_s", "max_elevation_deg"];

/// Scalar scenario settings, stored as `scenario.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioHeader {
    /// ISO-8601 instant all relative times count from.
    pub epoch: DateTime<Utc>,
    pub background_load_a: f64,
    #[serde(default)]
    pub pass_load_a: f64,
    pub soc_floor: f64,
    pub initial_soc: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PayloadFile {
    #[serde(default)]
    payload: Vec<PayloadDef>,
}

/// Locations of the five files making up a scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioFiles {
    pub header: PathBuf,
    pub payloads: PathBuf,
    pub windows: PathBuf,
    pub sunlight: PathBuf,
    pub passes: PathBuf,
}

impl ScenarioFiles {
    /// Conventional names inside a scenario directory.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            header: dir.join("scenario.toml"),
            payloads: dir.join("payloads.toml"),
            windows: dir.join("windows.csv"),
            sunlight: dir.join("sunlight.csv"),
            passes: dir.join("passes.csv"),
        }
    }

    pub fn all(&self) -> [&Path; 5] {
        [
            &self.header,
            &self.payloads,
            &self.windows,
            &self.sunlight,
            &self.passes,
        ]
    }
}

#[derive(Debug, Deserialize)]
struct WindowRow {
    id: String,
    payload: String,
    start_s: f64,
    end_s: f64,
    reward: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct SunlightRow {
    start_s: f64,
    end_s: f64,
    infeed_a: f64,
}

#[derive(Debug, Deserialize)]
struct PassRow {
    station: String,
    start_s: f64,
    end_s: f64,
    max_elevation_deg: f64,
}

pub(crate) fn read_text(path: &Path) -> Result<String, MissionError> {
    std::fs::read_to_string(path).map_err(|source| MissionError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn csv_error(file: &str, err: csv::Error) -> MissionError {
    let line = err.position().map_or(0, |p| p.line());
    let (column, message) = match err.kind() {
        csv::ErrorKind::Deserialize { err: de, .. } => {
            (de.field().map_or(0, |f| f + 1), de.kind().to_string())
        }
        _ => (0, err.to_string()),
    };
    MissionError::Parse {
        file: file.to_string(),
        line,
        column,
        message,
    }
}

/// Parses CSV text with an exact header; returns rows with their line numbers.
pub(crate) fn parse_rows<T: DeserializeOwned>(
    text: &str,
    file: &str,
    header: &[&str],
) -> Result<Vec<(u64, T)>, MissionError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let found = reader.headers().map_err(|e| csv_error(file, e))?.clone();
    let found: Vec<&str> = found.iter().collect();
    if found != header {
        let column = header
            .iter()
            .zip(found.iter())
            .position(|(a, b)| a != b)
            .unwrap_or(header.len().min(found.len()))
            + 1;
        return Err(MissionError::Parse {
            file: file.to_string(),
            line: 1,
            column: column as u64,
            message: format!("expected header '{}', found '{}'", header.join(","), found.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<T>() {
        match row {
            Ok(r) => {
                // Line of the record just read (header is line 1).
                out.push((out.len() as u64 + 2, r));
            }
            Err(e) => return Err(csv_error(file, e)),
        }
    }
    Ok(out)
}

pub(crate) fn finite(file: &str, line: u64, column: u64, value: f64) -> Result<f64, MissionError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(MissionError::Parse {
            file: file.to_string(),
            line,
            column,
            message: format!("non-finite value {value}"),
        })
    }
}

pub fn read_windows_csv(text: &str, file: &str) -> Result<Vec<TaskWindow>, MissionError> {
    parse_rows::<WindowRow>(text, file, &WINDOWS_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            Ok(TaskWindow {
                start: finite(file, line, 3, r.start_s)?,
                end: finite(file, line, 4, r.end_s)?,
                id: r.id,
                payload: r.payload,
                reward: r.reward,
            })
        })
        .collect()
}

pub fn read_sunlight_csv(text: &str, file: &str) -> Result<Vec<SunlightEpisode>, MissionError> {
    parse_rows::<SunlightRow>(text, file, &SUNLIGHT_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            Ok(SunlightEpisode {
                start: finite(file, line, 1, r.start_s)?,
                end: finite(file, line, 2, r.end_s)?,
                infeed: finite(file, line, 3, r.infeed_a)?,
            })
        })
        .collect()
}

pub fn read_passes_csv(text: &str, file: &str) -> Result<Vec<GroundPass>, MissionError> {
    parse_rows::<PassRow>(text, file, &PASSES_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            Ok(GroundPass {
                station: r.station,
                start: finite(file, line, 2, r.start_s)?,
                end: finite(file, line, 3, r.end_s)?,
                max_elevation: finite(file, line, 4, r.max_elevation_deg)?,
            })
        })
        .collect()
}

fn parse_toml<T: DeserializeOwned>(path: &Path) -> Result<T, MissionError> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|span| line_col(&text, span.start))
            .unwrap_or((0, 0));
        MissionError::Parse {
            file: path.display().to_string(),
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

fn line_col(text: &str, offset: usize) -> (u64, u64) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() as u64 + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) as u64 + 1;
    (line, column)
}

/// Loads and validates a scenario from its five files.
pub fn load_scenario(files: &ScenarioFiles) -> Result<Scenario, MissionError> {
    let header: ScenarioHeader = parse_toml(&files.header)?;
    let payloads: PayloadFile = parse_toml(&files.payloads)?;
    let name = |p: &Path| p.display().to_string();
    let windows = read_windows_csv(&read_text(&files.windows)?, &name(&files.windows))?;
    let sunlight = read_sunlight_csv(&read_text(&files.sunlight)?, &name(&files.sunlight))?;
    let passes = read_passes_csv(&read_text(&files.passes)?, &name(&files.passes))?;

    let mut scenario = Scenario {
        epoch: header.epoch,
        payloads: payloads.payload,
        windows,
        sunlight,
        passes,
        background_load: header.background_load_a,
        pass_load: header.pass_load_a,
        soc_floor: header.soc_floor,
        initial_soc: header.initial_soc,
    };
    // Attribute each violation to the file that carries the offending data.
    if let Err(message) = scenario.validate() {
        let file = if message.starts_with("window") {
            &files.windows
        } else if message.starts_with("sunlight") {
            &files.sunlight
        } else if message.starts_with("pass ") {
            &files.passes
        } else if message.contains("payload") {
            &files.payloads
        } else {
            &files.header
        };
        return Err(MissionError::Invalid {
            file: name(file),
            message,
        });
    }
    scenario.sort();
    Ok(scenario)
}

pub fn load_scenario_dir(dir: &Path) -> Result<Scenario, MissionError> {
    load_scenario(&ScenarioFiles::in_dir(dir))
}

pub fn write_windows_csv<W: std::io::Write>(out: W, windows: &[TaskWindow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(WINDOWS_HEADER)?;
    for win in windows {
        let reward = win.reward.map(|r| r.to_string()).unwrap_or_default();
        w.write_record([
            win.id.as_str(),
            win.payload.as_str(),
            &win.start.to_string(),
            &win.end.to_string(),
            &reward,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sunlight_csv<W: std::io::Write>(out: W, sunlight: &[SunlightEpisode]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUNLIGHT_HEADER)?;
    for s in sunlight {
        w.write_record([s.start.to_string(), s.end.to_string(), s.infeed.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_passes_csv<W: std::io::Write>(out: W, passes: &[GroundPass]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PASSES_HEADER)?;
    for p in passes {
        w.write_record([
            p.station.clone(),
            p.start.to_string(),
            p.end.to_string(),
            p.max_elevation.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a scenario in the directory layout read by [`load_scenario_dir`].
pub fn write_scenario_dir(dir: &Path, scenario: &Scenario) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let files = ScenarioFiles::in_dir(dir);
    let header = ScenarioHeader {
        epoch: scenario.epoch,
        background_load_a: scenario.background_load,
        pass_load_a: scenario.pass_load,
        soc_floor: scenario.soc_floor,
        initial_soc: scenario.initial_soc,
    };
    let to_io = |e: toml::ser::Error| std::io::Error::other(e.to_string());
    std::fs::write(&files.header, toml::to_string(&header).map_err(to_io)?)?;
    let payloads = PayloadFile {
        payload: scenario.payloads.clone(),
    };
    std::fs::write(&files.payloads, toml::to_string(&payloads).map_err(to_io)?)?;
    let csv_io = |e: csv::Error| std::io::Error::other(e.to_string());
    write_windows_csv(std::fs::File::create(&files.windows)?, &scenario.windows).map_err(csv_io)?;
    write_sunlight_csv(std::fs::File::create(&files.sunlight)?, &scenario.sunlight).map_err(csv_io)?;
    write_passes_csv(std::fs::File::create(&files.passes)?, &scenario.passes).map_err(csv_io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_windows_file_is_valid() {
        assert!(read_windows_csv("", "w.csv").unwrap().is_empty());
        assert!(read_windows_csv("id,payload,start_s,end_s,reward\n", "w.csv")
            .unwrap()
            .is_empty());
    }

    #[test]
    fn blank_reward_means_default() {
        let text = "id,payload,start_s,end_s,reward\nw1,adsb,0,60,\nw2,adsb,10,70,2.5\n";
        let ws = read_windows_csv(text, "w.csv").unwrap();
        assert_eq!(ws[0].reward, None);
        assert_eq!(ws[1].reward, Some(2.5));
    }

    #[test]
    fn malformed_number_reports_line_and_column() {
        let text = "id,payload,start_s,end_s,reward\nw1,adsb,0,60,\nw2,adsb,ten,70,\n";
        match read_windows_csv(text, "w.csv").unwrap_err() {
            MissionError::Parse { file, line, column, .. } => {
                assert_eq!(file, "w.csv");
                assert_eq!(line, 3);
                assert_eq!(column, 3);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn wrong_header_rejected() {
        let err = read_passes_csv("station,start,end_s,max_elevation_deg\n", "p.csv").unwrap_err();
        assert!(matches!(err, MissionError::Parse { line: 1, column: 2, .. }));
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("a = 1\nb = x\n", 10), (2, 5));
    }
}
