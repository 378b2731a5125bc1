//! Event-driven corridor simulation.
//!
//! Plans are closed-form, so the engine only wakes at events and evaluates
//! states exactly. Positions in [`VehicleLog::path`] are measured along the
//! vehicle's route from its first control-zone entry; each [`ZoneVisit`]
//! records where that zone starts on the path.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::config::{CorridorConfig, LabelScheme};
use crate::ocp::{BoundKind, Bounds, Trajectory, TrajectoryPlan};
use crate::planner::{plan_bounded, time_optimal, PlanQuality, State};
use crate::scheduler::{congestion_slack, Arrival, AssignmentRecord, CoordinatorState};
use crate::types::{conflicts, Approach, Intersection, Route};
use crate::{Error, Result};

/// Vehicles closer than this to their merging-zone entry keep their plan.
pub const FREEZE_WINDOW: f64 = 1.0;
/// Sampling step of the dense audit and the trajectory log.
pub const AUDIT_STEP: f64 = 0.1;
const TIME_TOL: f64 = 1e-9;
const REARM_GAP: f64 = 1e-6;
const GAP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Coordinated,
    Baseline,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coordinated" => Ok(Mode::Coordinated),
            "baseline" => Ok(Mode::Baseline),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Coordinated => "coordinated",
            Mode::Baseline => "baseline",
        })
    }
}

/// An external arrival at the corridor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSpec {
    pub id: u32,
    pub t0: f64,
    pub route: Route,
    pub v0: f64,
}

/// Poisson arrivals on the six external approaches, each at one sixth of
/// the corridor rate. Consecutive arrivals on one approach are at least
/// `δ / v_entry` apart; closer draws are delayed.
pub fn generate_arrivals(cfg: &CorridorConfig<f64>, seed: u64, horizon: f64) -> Vec<ArrivalSpec> {
    let routes = Route::external();
    let rate = cfg.arrival_rate / 3600.0 / routes.len() as f64;
    if !(horizon > 0.0) || !(rate > 0.0) {
        return Vec::new();
    }
    let min_gap = cfg.safe_distance / cfg.v_entry;
    let exp = Exp::new(rate).expect("positive rate");
    let mut draws: Vec<(f64, usize)> = Vec::new();
    for (k, _) in routes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64 + 1);
        let (mut raw, mut last) = (0.0, f64::NEG_INFINITY);
        loop {
            raw += exp.sample(&mut rng);
            let t = raw.max(last + min_gap);
            if t > horizon {
                break;
            }
            draws.push((t, k));
            last = t;
        }
    }
    draws.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    draws
        .into_iter()
        .enumerate()
        .map(|(id, (t0, k))| ArrivalSpec { id: id as u32, t0, route: routes[k], v0: cfg.v_entry })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    // Declaration order is the tie-break priority.
    MergingZoneExit,
    HandoverToNextIntersection,
    Arrival,
    ControlZoneEntry,
    MergingZoneEntry,
    SpeedBelowThreshold,
    Replan,
}

impl EventKind {
    pub fn code(self) -> &'static str {
        match self {
            EventKind::MergingZoneExit => "merging-zone-exit",
            EventKind::HandoverToNextIntersection => "handover-to-next-intersection",
            EventKind::Arrival => "arrival",
            EventKind::ControlZoneEntry => "control-zone-entry",
            EventKind::MergingZoneEntry => "merging-zone-entry",
            EventKind::SpeedBelowThreshold => "speed-below-threshold",
            EventKind::Replan => "replan",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEvent {
    pub time: f64,
    pub kind: EventKind,
    pub vehicle: u32,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Control(Intersection),
    Merging(Intersection),
    Connecting,
}

impl Zone {
    pub fn phase(self) -> &'static str {
        match self {
            Zone::Control(_) => "control",
            Zone::Merging(_) => "merging",
            Zone::Connecting => "connecting",
        }
    }

    pub fn intersection(self) -> Option<Intersection> {
        match self {
            Zone::Control(z) | Zone::Merging(z) => Some(z),
            Zone::Connecting => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneVisit {
    pub zone: Zone,
    pub start: f64,
    pub end: f64,
    /// Path position where the zone begins.
    pub offset: f64,
    pub i: Option<u32>,
    pub j: Option<u8>,
}

/// Everything one vehicle did during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleLog {
    pub id: u32,
    pub route: Route,
    /// Scheduled corridor arrival.
    pub t0: f64,
    /// Physical entry; later than `t0` only when the entrance was blocked.
    pub entered: f64,
    pub exit: f64,
    pub path: Trajectory<f64>,
    pub visits: Vec<ZoneVisit>,
    /// Some plan could not be made admissible.
    pub infeasible: bool,
    /// A cascade this vehicle triggered could not deliver the full slack.
    pub partial_relief: bool,
}

impl VehicleLog {
    pub fn travel_time(&self) -> f64 {
        self.exit - self.t0
    }

    pub fn visit_at(&self, t: f64) -> Option<&ZoneVisit> {
        self.visits.iter().find(|v| v.start <= t && t < v.end)
    }

    pub fn merging_visits(&self) -> impl Iterator<Item = (Intersection, &ZoneVisit)> {
        self.visits.iter().filter_map(|v| match v.zone {
            Zone::Merging(z) => Some((z, v)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeRecord {
    pub time: f64,
    pub intersection: u8,
    pub trigger: u32,
    /// Trigger was on the connecting road rather than in the control zone.
    pub from_connecting_road: bool,
    pub trigger_speed: f64,
    pub tau: f64,
    pub achieved: f64,
    pub partial: bool,
    /// `(vehicle, old tf, new tf, floor used, entry feasibility time)`.
    pub changed: Vec<(u32, f64, f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LateralViolation {
    pub intersection: u8,
    pub first: u32,
    pub second: u32,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RearEndViolation {
    pub time: f64,
    pub leader: u32,
    pub follower: u32,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsViolation {
    pub vehicle: u32,
    pub time: f64,
    pub kind: BoundKind,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SafetyReport {
    pub lateral: Vec<LateralViolation>,
    /// Same-lane spacing below `δ` at merging-zone exits.
    pub rear_end_checkpoint: Vec<RearEndViolation>,
    /// Same-lane spacing below `δ` anywhere on the sampling grid.
    pub rear_end_dense_count: usize,
    /// First few dense violations.
    pub rear_end_dense: Vec<RearEndViolation>,
    /// Bound violations of vehicles not flagged infeasible.
    pub bounds: Vec<BoundsViolation>,
    pub flagged_infeasible: Vec<u32>,
}

impl SafetyReport {
    /// No lateral overlap and no checkpoint rear-end violation.
    pub fn collision_free(&self) -> bool {
        self.lateral.is_empty() && self.rear_end_checkpoint.is_empty()
    }

    /// Nothing at all was detected.
    pub fn clean(&self) -> bool {
        self.collision_free() && self.rear_end_dense_count == 0 && self.bounds.is_empty()
    }
}

const DENSE_KEEP: usize = 200;

/// Checks lateral exclusion, rear-end spacing and kinematic bounds.
pub fn audit_safety(vehicles: &[VehicleLog], cfg: &CorridorConfig<f64>, bounds: &Bounds<f64>) -> SafetyReport {
    let mut report = SafetyReport::default();
    let zone_len = cfg.exit_position();

    // Lateral: merging-zone occupancy intervals of perpendicular routes.
    for z in [Intersection::One, Intersection::Two] {
        let mut intervals: Vec<(f64, f64, u32, Approach)> = vehicles
            .iter()
            .flat_map(|v| {
                v.merging_visits()
                    .filter(move |(zz, _)| *zz == z)
                    .map(move |(_, m)| (m.start, m.end, v.id, v.route.origin))
            })
            .collect();
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        for (k, a) in intervals.iter().enumerate() {
            for b in &intervals[k + 1..] {
                if b.0 >= a.1 - TIME_TOL {
                    break;
                }
                let overlap = a.1.min(b.1) - b.0;
                if overlap > TIME_TOL && conflicts(a.3, b.3) {
                    report.lateral.push(LateralViolation {
                        intersection: z.number(),
                        first: a.2,
                        second: b.2,
                        from: b.0,
                        to: a.1.min(b.1),
                    });
                }
            }
        }
    }

    // Group by lane.
    let mut lanes: Vec<(Route, Vec<&VehicleLog>)> = Vec::new();
    for v in vehicles {
        match lanes.iter_mut().find(|(r, _)| *r == v.route) {
            Some((_, list)) => list.push(v),
            None => lanes.push((v.route, vec![v])),
        }
    }

    // Rear-end at merging-zone exits.
    for (_, lane) in &lanes {
        for leader in lane {
            for (_, m) in leader.merging_visits() {
                let t = m.end;
                let exit_pos = m.offset + cfg.merging_zone_side;
                let zone_start = exit_pos - zone_len;
                let follower = lane
                    .iter()
                    .filter(|f| f.id != leader.id && f.entered <= t && t <= f.exit)
                    .map(|f| (f.id, f.path.at(t).0))
                    .filter(|(_, d)| *d >= zone_start && *d <= exit_pos)
                    .max_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((id, d)) = follower {
                    let gap = exit_pos - d;
                    if gap < cfg.safe_distance - GAP_TOL {
                        report.rear_end_checkpoint.push(RearEndViolation {
                            time: t,
                            leader: leader.id,
                            follower: id,
                            gap,
                        });
                    }
                }
            }
        }
    }

    // Dense rear-end on the sampling grid.
    for (_, lane) in &lanes {
        let mut lane = lane.clone();
        lane.sort_by(|a, b| a.entered.total_cmp(&b.entered).then(a.id.cmp(&b.id)));
        let (Some(first), Some(last)) =
            (lane.iter().map(|v| v.entered).min_by(f64::total_cmp), lane.iter().map(|v| v.exit).max_by(f64::total_cmp))
        else {
            continue;
        };
        let mut k = (first / AUDIT_STEP).ceil() as i64;
        let mut start_idx = 0;
        loop {
            let t = k as f64 * AUDIT_STEP;
            if t > last {
                break;
            }
            while start_idx < lane.len() && lane[start_idx].exit < t {
                start_idx += 1;
            }
            let mut present: Vec<(f64, u32)> = lane[start_idx..]
                .iter()
                .take_while(|v| v.entered <= t)
                .filter(|v| v.exit >= t)
                .map(|v| (v.path.at(t).0, v.id))
                .collect();
            present.sort_by(|a, b| b.0.total_cmp(&a.0));
            for w in present.windows(2) {
                let gap = w[0].0 - w[1].0;
                if gap < cfg.safe_distance - GAP_TOL {
                    report.rear_end_dense_count += 1;
                    if report.rear_end_dense.len() < DENSE_KEEP {
                        report.rear_end_dense.push(RearEndViolation { time: t, leader: w[0].1, follower: w[1].1, gap });
                    }
                }
            }
            k += 1;
        }
    }

    // Bounds over every executed arc.
    for v in vehicles {
        if v.infeasible {
            report.flagged_infeasible.push(v.id);
            continue;
        }
        for viol in v.path.check(bounds).violations {
            report.bounds.push(BoundsViolation { vehicle: v.id, time: viol.time, kind: viol.kind, value: viol.value });
        }
    }
    report
}

/// Output of one simulated run.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutput {
    pub mode: Mode,
    pub seed: u64,
    pub horizon: f64,
    pub config: CorridorConfig<f64>,
    pub arrivals: Vec<ArrivalSpec>,
    pub vehicles: Vec<VehicleLog>,
    pub events: Vec<SimEvent>,
    pub schedule: Vec<AssignmentRecord>,
    pub cascades: Vec<CascadeRecord>,
    pub safety: SafetyReport,
    /// Baseline only: stop-line crossings while the signal was red.
    pub red_light: Vec<(u32, f64)>,
}

impl RunOutput {
    /// Vehicles inside the corridor at `t`.
    pub fn in_flight(&self, t: f64) -> usize {
        self.vehicles.iter().filter(|v| v.t0 <= t && v.exit > t).count()
    }
}

/// Runs one mode on the arrival stream drawn from `seed`.
pub fn run_scenario(cfg: &CorridorConfig<f64>, seed: u64, horizon: f64, mode: Mode) -> Result<RunOutput> {
    run_with(cfg, seed, horizon, mode, &LabelScheme::default(), &crate::baseline::SignalSchedule::default())
}

/// [`run_scenario`] with explicit label scheme and signal plan.
pub fn run_with(
    cfg: &CorridorConfig<f64>,
    seed: u64,
    horizon: f64,
    mode: Mode,
    labels: &LabelScheme,
    signals: &crate::baseline::SignalSchedule,
) -> Result<RunOutput> {
    cfg.validate()?;
    labels.validate()?;
    let arrivals = generate_arrivals(cfg, seed, horizon);
    run_arrivals(cfg, seed, horizon, mode, labels, signals, arrivals)
}

/// Runs one mode on a given arrival stream.
pub fn run_arrivals(
    cfg: &CorridorConfig<f64>,
    seed: u64,
    horizon: f64,
    mode: Mode,
    labels: &LabelScheme,
    signals: &crate::baseline::SignalSchedule,
    arrivals: Vec<ArrivalSpec>,
) -> Result<RunOutput> {
    let mut bounds = Bounds::from_config(cfg);
    let (vehicles, events, schedule, cascades, red_light) = match mode {
        Mode::Coordinated => {
            let mut engine = Engine::new(cfg, labels, seed, &arrivals);
            engine.run()?;
            let schedule = engine.coords.iter().flat_map(|c| c.audit.iter().cloned()).collect::<Vec<_>>();
            let mut schedule = schedule;
            schedule.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.intersection.cmp(&b.intersection)));
            (engine.logs(), engine.events, schedule, engine.cascades, Vec::new())
        }
        Mode::Baseline => {
            bounds.v_min = 0.0;
            let out = crate::baseline::run_baseline(cfg, signals, &arrivals)?;
            (out.vehicles, out.events, Vec::new(), Vec::new(), out.red_light)
        }
    };
    let safety = audit_safety(&vehicles, cfg, &bounds);
    Ok(RunOutput {
        mode,
        seed,
        horizon,
        config: *cfg,
        arrivals,
        vehicles,
        events,
        schedule,
        cascades,
        safety,
        red_light,
    })
}

/// Connecting-road length for a through route.
pub fn connecting_length(cfg: &CorridorConfig<f64>, route: &Route) -> f64 {
    match route.origin {
        Approach::West => cfg.connecting_west_east,
        _ => cfg.connecting_east_west,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Pending,
    Control,
    Merging,
    Connecting,
    Done,
}

struct Car {
    id: u32,
    route: Route,
    legs: Vec<Intersection>,
    leg: usize,
    phase: Phase,
    offset: f64,
    version: u64,
    armed: bool,
    last_fire: Option<f64>,
    tm: f64,
    tf: f64,
    exit_speed: f64,
    v0: f64,
    t0: f64,
    exit: f64,
    path: Trajectory<f64>,
    visits: Vec<ZoneVisit>,
    infeasible: bool,
    partial_relief: bool,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    time: f64,
    kind: EventKind,
    vehicle: u32,
    version: u64,
    seq: u64,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.cmp(&other.kind))
            .then(self.vehicle.cmp(&other.vehicle))
            .then(self.seq.cmp(&other.seq))
    }
}

struct Engine<'a> {
    cfg: &'a CorridorConfig<f64>,
    bounds: Bounds<f64>,
    coords: [CoordinatorState<f64>; 2],
    cars: Vec<Car>,
    heap: BinaryHeap<Reverse<Pending>>,
    seq: u64,
    events: Vec<SimEvent>,
    cascades: Vec<CascadeRecord>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a CorridorConfig<f64>, labels: &LabelScheme, seed: u64, arrivals: &[ArrivalSpec]) -> Self {
        let cars = arrivals
            .iter()
            .map(|a| Car {
                id: a.id,
                route: a.route,
                legs: a.route.intersections(),
                leg: 0,
                phase: Phase::Pending,
                offset: 0.0,
                version: 0,
                armed: true,
                last_fire: None,
                tm: f64::NAN,
                tf: f64::NAN,
                exit_speed: a.v0,
                v0: a.v0,
                t0: a.t0,
                exit: f64::NAN,
                path: Trajectory { segments: Vec::new() },
                visits: Vec::new(),
                infeasible: false,
                partial_relief: false,
            })
            .collect();
        let mut engine = Self {
            cfg,
            bounds: Bounds::from_config(cfg),
            coords: [
                CoordinatorState::new(Intersection::One, *labels, seed),
                CoordinatorState::new(Intersection::Two, *labels, seed),
            ],
            cars,
            heap: BinaryHeap::new(),
            seq: 0,
            events: Vec::new(),
            cascades: Vec::new(),
        };
        for a in arrivals {
            engine.push(a.t0, EventKind::Arrival, a.id, 0);
        }
        engine
    }

    fn push(&mut self, time: f64, kind: EventKind, vehicle: u32, version: u64) {
        self.seq += 1;
        self.heap.push(Reverse(Pending { time, kind, vehicle, version, seq: self.seq }));
    }

    fn log(&mut self, time: f64, kind: EventKind, vehicle: u32, detail: String) {
        self.events.push(SimEvent { time, kind, vehicle, detail });
    }

    fn coord(&mut self, z: Intersection) -> &mut CoordinatorState<f64> {
        &mut self.coords[z.index()]
    }

    fn run(&mut self) -> Result<()> {
        while let Some(Reverse(ev)) = self.heap.pop() {
            let car = &self.cars[ev.vehicle as usize];
            let versioned = matches!(
                ev.kind,
                EventKind::MergingZoneEntry | EventKind::MergingZoneExit | EventKind::SpeedBelowThreshold
            );
            if versioned && ev.version != car.version {
                continue;
            }
            match ev.kind {
                EventKind::Arrival => {
                    let route = self.cars[ev.vehicle as usize].route.code();
                    self.log(ev.time, EventKind::Arrival, ev.vehicle, route);
                    self.push(ev.time, EventKind::ControlZoneEntry, ev.vehicle, 0);
                }
                EventKind::ControlZoneEntry => {
                    let z = car.legs[car.leg];
                    let mut batch = vec![ev.vehicle];
                    while let Some(Reverse(next)) = self.heap.peek() {
                        let same = next.kind == EventKind::ControlZoneEntry && next.time == ev.time && {
                            let c = &self.cars[next.vehicle as usize];
                            c.legs[c.leg] == z
                        };
                        if !same {
                            break;
                        }
                        batch.push(next.vehicle);
                        self.heap.pop();
                    }
                    self.enter_control_zone(ev.time, z, batch)?;
                }
                EventKind::MergingZoneEntry => self.enter_merging_zone(ev.time, ev.vehicle)?,
                EventKind::MergingZoneExit => self.exit_merging_zone(ev.time, ev.vehicle)?,
                EventKind::HandoverToNextIntersection => {
                    let car = &mut self.cars[ev.vehicle as usize];
                    car.leg += 1;
                    let z = car.legs[car.leg];
                    let prev_offset = car.offset;
                    car.offset = prev_offset + self.cfg.exit_position() + connecting_length(self.cfg, &car.route);
                    self.log(ev.time, EventKind::HandoverToNextIntersection, ev.vehicle, format!("z={z}"));
                    self.push(ev.time, EventKind::ControlZoneEntry, ev.vehicle, 0);
                }
                EventKind::SpeedBelowThreshold => self.speed_below_threshold(ev.time, ev.vehicle)?,
                EventKind::Replan => {}
            }
        }
        if let Some(c) = self.cars.iter().find(|c| c.phase != Phase::Done) {
            return Err(Error::Infeasible(format!("vehicle {} never left the corridor", c.id)));
        }
        Ok(())
    }

    fn enter_control_zone(&mut self, t: f64, z: Intersection, ids: Vec<u32>) -> Result<()> {
        let arrivals: Vec<Arrival<f64>> = ids
            .iter()
            .map(|&id| {
                let c = &self.cars[id as usize];
                let v0 = if c.leg == 0 { c.v0 } else { c.exit_speed };
                Arrival { id, route: c.route, t0: t, v0 }
            })
            .collect();
        let cfg = self.cfg;
        let records = self.coord(z).register_batch(arrivals, cfg)?;
        for r in records {
            let car = &mut self.cars[r.id as usize];
            car.phase = Phase::Control;
            let offset = car.offset;
            car.visits.push(ZoneVisit {
                zone: Zone::Control(z),
                start: t,
                end: f64::NAN,
                offset,
                i: Some(r.queue_index),
                j: Some(r.label),
            });
            self.log(
                t,
                EventKind::ControlZoneEntry,
                r.id,
                format!("z={z};i={};j={};v={};tf={}", r.queue_index, r.label, r.v, r.tf),
            );
            self.plan(r.id, t, true)?;
        }
        Ok(())
    }

    /// (Re)plans the control-zone approach toward the coordinator's schedule.
    fn plan(&mut self, id: u32, now: f64, fresh: bool) -> Result<()> {
        let cfg = self.cfg;
        let car = &self.cars[id as usize];
        let z = car.legs[car.leg];
        let entry = self.coords[z.index()]
            .entry(id)
            .ok_or_else(|| Error::Infeasible(format!("vehicle {id} missing from queue {z}")))?;
        let (mut tf, mut vf, floor) = (entry.record.tf, entry.exit_speed, entry.assignment.floor_binding());
        let (p, v) = if fresh {
            (0.0, if car.leg == 0 { car.v0 } else { car.exit_speed })
        } else {
            let (d, v, _) = car.path.at(now);
            (d - car.offset, v)
        };
        let start = State::new(now, p, v);
        let mut approach: Option<Trajectory<f64>> = None;
        let mut infeasible = false;
        if floor {
            let capped = Bounds { v_max: vf.min(self.bounds.v_max), ..self.bounds };
            let traj = time_optimal(start, cfg.control_zone_length, &capped);
            let end = traj.end();
            let v_end = traj.at(end).1;
            if (end + cfg.merging_zone_side / v_end - tf).abs() <= 1e-6 && (v_end - vf).abs() <= 1e-6 {
                approach = Some(traj);
            }
        }
        let approach = match approach {
            Some(a) => a,
            None => {
                let tm = tf - cfg.merging_zone_side / vf;
                match plan_bounded(start, State::new(tm, cfg.control_zone_length, vf), &self.bounds) {
                    Ok(planned) => {
                        infeasible = planned.quality == PlanQuality::Infeasible;
                        planned.trajectory
                    }
                    Err(Error::Infeasible(_)) => {
                        // The schedule is out of reach: take the fastest approach
                        // and publish the exit it actually gives.
                        infeasible = true;
                        let traj = time_optimal(start, cfg.control_zone_length, &self.bounds);
                        vf = traj.at(traj.end()).1;
                        tf = traj.end() + cfg.merging_zone_side / vf;
                        self.coords[z.index()].publish_fallback(id, now, tf, traj.end(), vf);
                        traj
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        let tm = approach.end();
        let car = &mut self.cars[id as usize];
        car.infeasible |= infeasible;
        car.path.truncate_after(now);
        let offset = car.offset;
        for mut seg in approach.segments {
            seg.d += offset;
            car.path.push(seg);
        }
        car.path.push(TrajectoryPlan {
            a: 0.0,
            b: 0.0,
            c: vf,
            d: offset + cfg.control_zone_length,
            valid_from: tm,
            valid_until: tf,
            boundary: (offset + cfg.exit_position(), vf),
        });
        car.tm = tm;
        car.tf = tf;
        car.exit_speed = vf;
        car.version += 1;
        let version = car.version;
        self.push(tm, EventKind::MergingZoneEntry, id, version);
        self.push(tf, EventKind::MergingZoneExit, id, version);
        if !fresh {
            self.log(now, EventKind::Replan, id, format!("z={z};tf={tf};vf={vf}"));
        }
        self.schedule_threshold(id, now);
        Ok(())
    }

    /// Edge-triggered watch on vehicles approaching their second intersection.
    fn schedule_threshold(&mut self, id: u32, now: f64) {
        let thr = self.cfg.v_min_desired;
        let car = &mut self.cars[id as usize];
        if car.phase != Phase::Control || car.leg == 0 {
            return;
        }
        // A crossing exactly at the last firing must not fire it again.
        let after = car.last_fire.map(|f| f + REARM_GAP);
        let from = after.map_or(now, |a| a.max(now));
        if !car.armed {
            if let Some(a) = after {
                if car.path.next_at_or_above(a, thr).is_some_and(|r| r <= now) {
                    car.armed = true;
                }
            }
        }
        let next = if car.armed {
            if now >= from && car.path.at(now).1 < thr {
                Some(now)
            } else {
                car.path.next_drop_below(from, thr)
            }
        } else {
            car.path.next_at_or_above(from, thr).and_then(|r| car.path.next_drop_below(r, thr))
        };
        if let Some(t) = next.filter(|&t| t < car.tm) {
            let version = car.version;
            self.push(t, EventKind::SpeedBelowThreshold, id, version);
        }
    }

    fn enter_merging_zone(&mut self, t: f64, id: u32) -> Result<()> {
        let car = &mut self.cars[id as usize];
        let z = car.legs[car.leg];
        car.phase = Phase::Merging;
        if let Some(last) = car.visits.last_mut() {
            last.end = t;
        }
        let (i, j) = car.visits.last().map(|v| (v.i, v.j)).unwrap_or((None, None));
        let offset = car.offset + self.cfg.control_zone_length;
        let (tf, origin) = (car.tf, car.route.origin);
        car.visits.push(ZoneVisit { zone: Zone::Merging(z), start: t, end: tf, offset, i, j });
        let (p, v, u) = car.path.at(t);
        let p = p - car.offset;
        self.coord(z).update_state(id, p, v, u, true);
        for other in &self.cars {
            if other.id != id
                && other.phase == Phase::Merging
                && other.legs[other.leg] == z
                && other.tf > t + TIME_TOL
                && conflicts(origin, other.route.origin)
            {
                return Err(Error::SafetyHalt {
                    time: t,
                    detail: format!("vehicles {} and {id} inside merging zone {z} on conflicting routes", other.id),
                });
            }
        }
        self.log(t, EventKind::MergingZoneEntry, id, format!("z={z};v={v}"));
        Ok(())
    }

    fn exit_merging_zone(&mut self, t: f64, id: u32) -> Result<()> {
        let cfg = self.cfg;
        let car = &self.cars[id as usize];
        let z = car.legs[car.leg];
        let exit_pos = car.offset + cfg.exit_position();
        let route = car.route;
        let vf = car.exit_speed;
        self.coord(z).remove(id);
        // Rear-end checkpoint against the same-lane follower.
        let follower = self
            .cars
            .iter()
            .filter(|c| {
                c.id != id
                    && c.route == route
                    && matches!(c.phase, Phase::Control | Phase::Merging)
                    && c.legs[c.leg] == z
            })
            .map(|c| (c.id, c.path.at(t).0))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((f, d)) = follower {
            let gap = exit_pos - d;
            if gap < cfg.safe_distance - GAP_TOL {
                return Err(Error::SafetyHalt {
                    time: t,
                    detail: format!("vehicle {f} is {gap} m behind {id} at its merging-zone exit"),
                });
            }
        }
        self.log(t, EventKind::MergingZoneExit, id, format!("z={z};v={vf}"));
        let car = &mut self.cars[id as usize];
        if let Some(last) = car.visits.last_mut() {
            last.end = t;
        }
        if car.leg + 1 == car.legs.len() {
            car.phase = Phase::Done;
            car.exit = t;
            return Ok(());
        }
        let length = connecting_length(cfg, &route);
        let on_road = self.cars.iter().filter(|c| c.route == route && c.phase == Phase::Connecting).count();
        if (on_road + 1) as f64 > length / cfg.safe_distance {
            return Err(Error::Capacity { time: t, count: on_road + 1, length });
        }
        let car = &mut self.cars[id as usize];
        car.phase = Phase::Connecting;
        let duration = length / vf;
        car.path.truncate_after(t);
        car.path.push(TrajectoryPlan {
            a: 0.0,
            b: 0.0,
            c: vf,
            d: exit_pos,
            valid_from: t,
            valid_until: t + duration,
            boundary: (exit_pos + length, vf),
        });
        car.visits.push(ZoneVisit {
            zone: Zone::Connecting,
            start: t,
            end: t + duration,
            offset: exit_pos,
            i: None,
            j: None,
        });
        car.version += 1;
        let version = car.version;
        let slow = vf < cfg.v_min_desired && car.armed;
        self.push(t + duration, EventKind::HandoverToNextIntersection, id, 0);
        if slow {
            self.push(t, EventKind::SpeedBelowThreshold, id, version);
        }
        Ok(())
    }

    fn sync(&mut self, z: Intersection, now: f64) {
        let ids: Vec<u32> = self.coords[z.index()].queue.iter().map(|e| e.record.id).collect();
        for id in ids {
            let car = &self.cars[id as usize];
            let (d, v, u) = car.path.at(now);
            let committed = car.phase == Phase::Merging || car.tm - now < FREEZE_WINDOW;
            let p = d - car.offset;
            self.coords[z.index()].update_state(id, p, v, u, committed);
        }
    }

    fn speed_below_threshold(&mut self, t: f64, id: u32) -> Result<()> {
        let cfg = self.cfg;
        let car = &mut self.cars[id as usize];
        let (z, p, v, connecting) = match car.phase {
            Phase::Connecting => (car.legs[car.leg + 1], 0.0, car.exit_speed, true),
            Phase::Control => {
                let (t_low, v_low) = car.path.min_speed_between(t, car.tm).unwrap_or((t, car.path.at(t).1));
                (car.legs[car.leg], car.path.at(t_low).0 - car.offset, v_low, false)
            }
            _ => return Ok(()),
        };
        car.armed = false;
        car.last_fire = Some(t);
        let tau = congestion_slack(p, v, cfg)?.abs();
        self.log(t, EventKind::SpeedBelowThreshold, id, format!("z={z};p={p};v={v};tau={tau}"));
        self.sync(z, t);
        let outcome = self.coord(z).expedite_cascade(id, tau, t, cfg)?;
        let mut changed = Vec::new();
        for &(vid, old, new) in &outcome.changed {
            let e = self.coords[z.index()].entry(vid).expect("changed vehicle is queued");
            changed.push((vid, old, new, e.assignment.floor, e.tc));
        }
        self.cascades.push(CascadeRecord {
            time: t,
            intersection: z.number(),
            trigger: id,
            from_connecting_road: connecting,
            trigger_speed: v,
            tau,
            achieved: outcome.achieved,
            partial: outcome.partial,
            changed,
        });
        if outcome.partial {
            self.cars[id as usize].partial_relief = true;
        }
        let mut replanned_trigger = false;
        for (vid, _, _) in outcome.changed {
            replanned_trigger |= vid == id;
            self.plan(vid, t, false)?;
        }
        if !replanned_trigger {
            self.schedule_threshold(id, t);
        }
        Ok(())
    }

    fn logs(&self) -> Vec<VehicleLog> {
        self.cars
            .iter()
            .map(|c| VehicleLog {
                id: c.id,
                route: c.route,
                t0: c.t0,
                entered: c.t0,
                exit: c.exit,
                path: c.path.clone(),
                visits: c.visits.clone(),
                infeasible: c.infeasible,
                partial_relief: c.partial_relief,
            })
            .collect()
    }
}
