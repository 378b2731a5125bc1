//! Scenario files, run artifacts and figure series.
//!
//! Every CSV starts with a `# crossflow <kind> schema <n>` comment line
//! followed by a header row.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::SignalSchedule;
use crate::config::{CorridorConfig, LabelScheme};
use crate::fuel::FuelModel;
use crate::metrics::{summarize, ComparisonReport, SimReport};
use crate::sim::{run_with, Mode, RunOutput, SafetyReport, Zone};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
/// Sampling step of the trajectory log (s).
pub const TRAJECTORY_STEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub horizon: f64,
    pub mode: Mode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub corridor: CorridorConfig<f64>,
    pub run: RunSection,
    #[serde(default)]
    pub labels: LabelScheme,
    #[serde(default)]
    pub signals: SignalSchedule,
    #[serde(default)]
    pub fuel: FuelModel<f64>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<f64>,
    pub mode: Option<Mode>,
    pub output_dir: Option<PathBuf>,
}

impl ScenarioFile {
    pub fn reference() -> Self {
        Self {
            corridor: CorridorConfig::reference(),
            run: RunSection { seed: 1, horizon: 3584.0, mode: Mode::Coordinated, output_dir: default_output_dir() },
            labels: LabelScheme::default(),
            signals: SignalSchedule::default(),
            fuel: FuelModel::default(),
        }
    }

    /// Parses and validates; schema problems name the offending key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Self = toml::from_str(text).map_err(|e| Error::Schema(e.message().to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Schema(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Schema(msg) => Error::Schema(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.corridor.validate()?;
        self.labels.validate()?;
        self.signals.validate()?;
        if !(self.run.horizon.is_finite() && self.run.horizon >= 0.0) {
            return Err(Error::Config("horizon must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.run.seed = seed;
        }
        if let Some(h) = o.horizon {
            self.run.horizon = h;
        }
        if let Some(mode) = o.mode {
            self.run.mode = mode;
        }
        if let Some(dir) = &o.output_dir {
            self.run.output_dir = dir.clone();
        }
        self.validate()
    }

    pub fn execute(&self, mode: Mode) -> Result<RunOutput> {
        run_with(&self.corridor, self.run.seed, self.run.horizon, mode, &self.labels, &self.signals)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub vehicle: u32,
    pub t: f64,
    pub intersection: u8,
    pub i: Option<u32>,
    pub j: Option<u8>,
    /// Distance from the control-zone entry of `intersection` (m).
    pub p: f64,
    pub v: f64,
    pub u: f64,
    pub phase: String,
}

/// Samples every vehicle on the global 0.1 s grid, plus one exact row at
/// each merging-zone exit.
pub fn trajectory_rows(run: &RunOutput) -> Vec<TrajectoryRow> {
    let exit_p = run.config.exit_position();
    let mut rows = Vec::new();
    for veh in &run.vehicles {
        let mut leg = (0u8, 0.0, None, None);
        for visit in &veh.visits {
            match visit.zone {
                Zone::Control(z) => leg = (z.number(), visit.offset, visit.i, visit.j),
                Zone::Merging(z) => {
                    let i = visit.i.or(leg.2);
                    let j = visit.j.or(leg.3);
                    leg = (z.number(), visit.offset - run.config.control_zone_length, i, j);
                }
                Zone::Connecting => {}
            }
            let (z, base, i, j) = leg;
            let mut k = (visit.start / TRAJECTORY_STEP).ceil() as i64;
            loop {
                let t = k as f64 / 10.0;
                if t >= visit.end {
                    break;
                }
                if t >= visit.start {
                    let (d, v, u) = veh.path.at(t);
                    rows.push(TrajectoryRow {
                        vehicle: veh.id,
                        t,
                        intersection: z,
                        i,
                        j,
                        p: d - base,
                        v,
                        u,
                        phase: visit.zone.phase().into(),
                    });
                }
                k += 1;
            }
            if let Zone::Merging(_) = visit.zone {
                let (_, v, _) = veh.path.at(visit.end);
                rows.push(TrajectoryRow {
                    vehicle: veh.id,
                    t: visit.end,
                    intersection: z,
                    i,
                    j,
                    p: exit_p,
                    v,
                    u: 0.0,
                    phase: "merging".into(),
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeRow {
    pub time: f64,
    pub intersection: u8,
    pub trigger: u32,
    pub from_connecting_road: bool,
    pub trigger_speed: f64,
    pub tau: f64,
    pub achieved: f64,
    pub partial: bool,
    pub vehicle: Option<u32>,
    pub old_tf: Option<f64>,
    pub new_tf: Option<f64>,
    pub floor: Option<f64>,
    pub tc: Option<f64>,
}

pub fn cascade_rows(run: &RunOutput) -> Vec<CascadeRow> {
    let mut rows = Vec::new();
    for c in &run.cascades {
        let base = CascadeRow {
            time: c.time,
            intersection: c.intersection,
            trigger: c.trigger,
            from_connecting_road: c.from_connecting_road,
            trigger_speed: c.trigger_speed,
            tau: c.tau,
            achieved: c.achieved,
            partial: c.partial,
            vehicle: None,
            old_tf: None,
            new_tf: None,
            floor: None,
            tc: None,
        };
        if c.changed.is_empty() {
            rows.push(base);
            continue;
        }
        for &(vehicle, old, new, floor, tc) in &c.changed {
            rows.push(CascadeRow {
                vehicle: Some(vehicle),
                old_tf: Some(old),
                new_tf: Some(new),
                floor: Some(floor),
                tc: Some(tc),
                ..base.clone()
            });
        }
    }
    rows
}

/// Writes `rows` as CSV under a schema comment line.
pub fn write_csv<T: Serialize>(path: &Path, kind: &str, rows: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# crossflow {kind} schema {SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path, kind: &str) -> Result<Vec<T>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let expected = format!("# crossflow {kind} schema {SCHEMA_VERSION}");
    if first.trim_end() != expected {
        return Err(Error::Schema(format!("{} is not a {kind} log (expected `{expected}`)", path.display())));
    }
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport<'a> {
    pub schema: u32,
    pub scenario: &'a ScenarioFile,
    pub mode: Mode,
    pub summary: &'a SimReport,
    pub safety: &'a SafetyReport,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Writes the four logs and `report.json` into `dir`.
pub fn write_run(dir: &Path, scenario: &ScenarioFile, run: &RunOutput) -> Result<SimReport> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("trajectory.csv"), "trajectory", &trajectory_rows(run))?;
    write_csv(&dir.join("events.csv"), "events", &run.events)?;
    write_csv(&dir.join("schedule.csv"), "schedule", &run.schedule)?;
    write_csv(&dir.join("cascades.csv"), "cascades", &cascade_rows(run))?;
    let summary = SimReport::from_run(run, &scenario.fuel);
    let report = RunReport { schema: SCHEMA_VERSION, scenario, mode: run.mode, summary: &summary, safety: &run.safety };
    write_json(&dir.join("report.json"), &report)?;
    Ok(summary)
}

/// Runs the scenario's mode and writes its artifacts.
pub fn cmd_run(scenario: &ScenarioFile) -> Result<SimReport> {
    let run = scenario.execute(scenario.run.mode)?;
    write_run(&scenario.run.output_dir, scenario, &run)
}

/// Runs both modes on the same arrivals; artifacts go to `coordinated/`,
/// `baseline/`, and `comparison.{json,txt}`.
pub fn cmd_compare(scenario: &ScenarioFile) -> Result<ComparisonReport> {
    let dir = &scenario.run.output_dir;
    let coordinated = scenario.execute(Mode::Coordinated)?;
    let baseline = scenario.execute(Mode::Baseline)?;
    let c = write_run(&dir.join("coordinated"), scenario, &coordinated)?;
    let b = write_run(&dir.join("baseline"), scenario, &baseline)?;
    let cmp = summarize(&c, &b)?;
    write_json(&dir.join("comparison.json"), &cmp)?;
    fs::write(dir.join("comparison.txt"), cmp.to_table())?;
    Ok(cmp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Speed,
    Position,
}

impl std::str::FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speed" => Ok(Figure::Speed),
            "position" => Ok(Figure::Position),
            other => Err(Error::Config(format!("unknown figure `{other}` (speed or position)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    /// Order of control-zone entry at the chosen intersection, from 1.
    pub series: u32,
    pub vehicle: u32,
    pub i: Option<u32>,
    pub t: f64,
    /// Speed (m/s), or distance to the merging-zone exit (m).
    pub value: f64,
}

/// Series for the first `n` vehicles to enter intersection `z`.
pub fn plot_series(rows: &[TrajectoryRow], figure: Figure, n: usize, z: u8, exit_position: f64) -> Vec<PlotRow> {
    let in_zone = |r: &&TrajectoryRow| r.intersection == z && (r.phase == "control" || r.phase == "merging");
    let mut first_seen: Vec<(f64, u32)> = Vec::new();
    for r in rows.iter().filter(in_zone) {
        match first_seen.iter_mut().find(|(_, id)| *id == r.vehicle) {
            Some(entry) => entry.0 = entry.0.min(r.t),
            None => first_seen.push((r.t, r.vehicle)),
        }
    }
    first_seen.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    first_seen.truncate(n);
    let mut out = Vec::new();
    for (k, &(_, id)) in first_seen.iter().enumerate() {
        let mut series: Vec<&TrajectoryRow> = rows.iter().filter(in_zone).filter(|r| r.vehicle == id).collect();
        series.sort_by(|a, b| a.t.total_cmp(&b.t));
        for r in series {
            out.push(PlotRow {
                series: k as u32 + 1,
                vehicle: id,
                i: r.i,
                t: r.t,
                value: match figure {
                    Figure::Speed => r.v,
                    Figure::Position => exit_position - r.p,
                },
            });
        }
    }
    out
}

/// Reads a run directory and writes the figure series to `out`.
pub fn cmd_plotdata(run_dir: &Path, figure: Figure, n: usize, z: u8, out: &Path) -> Result<usize> {
    let rows: Vec<TrajectoryRow> = read_csv(&run_dir.join("trajectory.csv"), "trajectory")?;
    let report: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(run_dir.join("report.json"))?))?;
    let corridor: CorridorConfig<f64> = serde_json::from_value(report["scenario"]["corridor"].clone())?;
    let series = plot_series(&rows, figure, n, z, corridor.exit_position());
    let kind = match figure {
        Figure::Speed => "speed-series",
        Figure::Position => "position-series",
    };
    write_csv(out, kind, &series)?;
    Ok(series.iter().map(|r| r.series).max().unwrap_or(0) as usize)
}
