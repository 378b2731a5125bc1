//! Per-vehicle and aggregate statistics, and the paired comparison.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::fuel::FuelModel;
use crate::sim::{Mode, RunOutput};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleMetrics {
    pub id: u32,
    pub route: String,
    pub t0: f64,
    pub exit: f64,
    pub travel_time: f64,
    /// Fuel from arrival to final exit (mL), including idling before entry.
    pub fuel: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    pub infeasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mode: Mode,
    pub seed: u64,
    pub horizon: f64,
    pub vehicles: Vec<VehicleMetrics>,
    pub mean_travel_time: f64,
    pub total_fuel: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    pub infeasible_count: usize,
    pub cascades: usize,
    pub partial_reliefs: usize,
    pub lateral_violations: usize,
    pub rear_end_checkpoint_violations: usize,
    pub rear_end_dense_violations: usize,
    pub bound_violations: usize,
    pub red_light_violations: usize,
}

impl SimReport {
    pub fn from_run(run: &RunOutput, fuel: &FuelModel<f64>) -> Self {
        let idle = fuel.rate(0.0, 0.0);
        let vehicles: Vec<VehicleMetrics> = run
            .vehicles
            .iter()
            .map(|v| {
                let wait = v.entered - v.t0;
                let mut used = fuel.integrate(&v.path, v.entered, v.exit);
                let (mut lo, hi) =
                    if v.path.segments.is_empty() { (0.0, 0.0) } else { (v.path.min_speed(), v.path.max_speed()) };
                if wait > 0.0 {
                    used += idle * wait;
                    lo = 0.0;
                }
                VehicleMetrics {
                    id: v.id,
                    route: v.route.code(),
                    t0: v.t0,
                    exit: v.exit,
                    travel_time: v.travel_time(),
                    fuel: used,
                    min_speed: lo,
                    max_speed: hi,
                    infeasible: v.infeasible,
                }
            })
            .collect();
        let n = vehicles.len();
        let mean_travel_time =
            if n == 0 { 0.0 } else { vehicles.iter().map(|v| v.travel_time).sum::<f64>() / n as f64 };
        let s = &run.safety;
        Self {
            mode: run.mode,
            seed: run.seed,
            horizon: run.horizon,
            mean_travel_time,
            total_fuel: vehicles.iter().fold(0.0, |acc, v| acc + v.fuel),
            min_speed: vehicles.iter().map(|v| v.min_speed).fold(f64::INFINITY, f64::min),
            max_speed: vehicles.iter().map(|v| v.max_speed).fold(f64::NEG_INFINITY, f64::max),
            infeasible_count: vehicles.iter().filter(|v| v.infeasible).count(),
            cascades: run.cascades.len(),
            partial_reliefs: run.cascades.iter().filter(|c| c.partial).count(),
            lateral_violations: s.lateral.len(),
            rear_end_checkpoint_violations: s.rear_end_checkpoint.len(),
            rear_end_dense_violations: s.rear_end_dense_count,
            bound_violations: s.bounds.len(),
            red_light_violations: run.red_light.len(),
            vehicles,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub id: u32,
    /// Baseline minus coordinated (s).
    pub travel_time: f64,
    /// Baseline minus coordinated (mL).
    pub fuel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub vehicles: usize,
    pub coordinated_fuel: f64,
    pub baseline_fuel: f64,
    /// Percentage reduction of total fuel relative to the baseline.
    pub fuel_improvement: f64,
    pub coordinated_travel_time: f64,
    pub baseline_travel_time: f64,
    /// Percentage reduction of mean travel time relative to the baseline.
    pub travel_time_improvement: f64,
    pub coordinated_min_speed: f64,
    pub baseline_min_speed: f64,
    pub paired: Vec<PairedDelta>,
}

fn improvement(baseline: f64, coordinated: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        100.0 * (baseline - coordinated) / baseline
    }
}

/// Pairs two runs on the same arrival stream.
pub fn summarize(coordinated: &SimReport, baseline: &SimReport) -> Result<ComparisonReport> {
    let same_stream = coordinated.seed == baseline.seed
        && coordinated.vehicles.len() == baseline.vehicles.len()
        && coordinated
            .vehicles
            .iter()
            .zip(&baseline.vehicles)
            .all(|(a, b)| a.id == b.id && a.t0 == b.t0 && a.route == b.route);
    if !same_stream {
        return Err(Error::Comparison("runs do not share an arrival stream".into()));
    }
    let paired = coordinated
        .vehicles
        .iter()
        .zip(&baseline.vehicles)
        .map(|(c, b)| PairedDelta { id: c.id, travel_time: b.travel_time - c.travel_time, fuel: b.fuel - c.fuel })
        .collect();
    let empty = coordinated.vehicles.is_empty();
    Ok(ComparisonReport {
        seed: coordinated.seed,
        vehicles: coordinated.vehicles.len(),
        coordinated_fuel: coordinated.total_fuel,
        baseline_fuel: baseline.total_fuel,
        fuel_improvement: improvement(baseline.total_fuel, coordinated.total_fuel),
        coordinated_travel_time: coordinated.mean_travel_time,
        baseline_travel_time: baseline.mean_travel_time,
        travel_time_improvement: improvement(baseline.mean_travel_time, coordinated.mean_travel_time),
        coordinated_min_speed: if empty { 0.0 } else { coordinated.min_speed },
        baseline_min_speed: if empty { 0.0 } else { baseline.min_speed },
        paired,
    })
}

impl ComparisonReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed {}  vehicles {}", self.seed, self.vehicles);
        let _ = writeln!(out, "{:<22}{:>14}{:>14}{:>14}", "", "coordinated", "baseline", "improvement");
        let _ = writeln!(
            out,
            "{:<22}{:>14.1}{:>14.1}{:>13.1}%",
            "total fuel (mL)", self.coordinated_fuel, self.baseline_fuel, self.fuel_improvement
        );
        let _ = writeln!(
            out,
            "{:<22}{:>14.2}{:>14.2}{:>13.1}%",
            "mean travel time (s)",
            self.coordinated_travel_time,
            self.baseline_travel_time,
            self.travel_time_improvement
        );
        let _ = writeln!(
            out,
            "{:<22}{:>14.2}{:>14.2}",
            "min speed (m/s)", self.coordinated_min_speed, self.baseline_min_speed
        );
        out
    }
}
