//! Fixed-cycle traffic-light baseline with a minimal car-following rule.
//!
//! Vehicles drive the same routes and arrival stream as the coordinated
//! run, on a fixed 0.1 s step with exact constant-control kinematics. A
//! vehicle brakes no harder than `|u_min|` and always keeps a stopping
//! point at least `δ` behind its leader's stopping point, which keeps the
//! spacing at or above `δ` throughout.

use serde::{Deserialize, Serialize};

use crate::config::CorridorConfig;
use crate::ocp::{Trajectory, TrajectoryPlan};
use crate::sim::{connecting_length, ArrivalSpec, EventKind, SimEvent, VehicleLog, Zone, ZoneVisit};
use crate::types::{conflicts, Approach, Intersection, Road, Route};
use crate::{Error, Result};

pub const BASELINE_STEP: f64 = 0.1;
/// Extra green time a vehicle keeps in hand when it commits to crossing.
const COMMIT_MARGIN: f64 = 0.5;
/// Simulated time allowed after the last arrival before giving up.
const DRAIN_LIMIT: f64 = 7200.0;
/// Vehicles held at a red line stop this far before it.
const STOP_SHORT: f64 = 0.01;

/// Two-phase signal plan: east-west green first, then north-south.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSchedule {
    pub cycle: f64,
    pub east_west_green: f64,
    pub north_south_green: f64,
    /// Phase offset of intersection two relative to intersection one.
    #[serde(default)]
    pub offset: f64,
    /// Degenerate plan with every approach always green.
    #[serde(default)]
    pub all_green: bool,
}

impl Default for SignalSchedule {
    fn default() -> Self {
        Self { cycle: 30.0, east_west_green: 15.0, north_south_green: 15.0, offset: 0.0, all_green: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Signal {
    Green,
    Red,
}

impl SignalSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.cycle > 0.0 && self.east_west_green > 0.0 && self.north_south_green > 0.0) {
            return Err(Error::Config("signal durations must be positive".into()));
        }
        if (self.east_west_green + self.north_south_green - self.cycle).abs() > 1e-9 {
            return Err(Error::Config("green splits must sum to the cycle".into()));
        }
        Ok(())
    }

    fn phase(&self, z: Intersection, t: f64) -> f64 {
        let offset = match z {
            Intersection::One => 0.0,
            Intersection::Two => self.offset,
        };
        (t - offset).rem_euclid(self.cycle)
    }

    pub fn signal_state(&self, z: Intersection, approach: Approach, t: f64) -> Signal {
        if self.green_remaining(z, approach, t) > 0.0 {
            Signal::Green
        } else {
            Signal::Red
        }
    }

    /// Time until the approach turns red; zero while red.
    pub fn green_remaining(&self, z: Intersection, approach: Approach, t: f64) -> f64 {
        if self.all_green {
            return f64::INFINITY;
        }
        let phase = self.phase(z, t);
        match approach.road() {
            Road::EastWest if phase < self.east_west_green => self.east_west_green - phase,
            Road::NorthSouth if phase >= self.east_west_green => self.cycle - phase,
            _ => 0.0,
        }
    }
}

/// Free function form of [`SignalSchedule::signal_state`].
pub fn signal_state(sched: &SignalSchedule, z: Intersection, approach: Approach, t: f64) -> Signal {
    sched.signal_state(z, approach, t)
}

/// Control for one step.
///
/// `stop_line` is a position the vehicle must be able to stop at; `leader`
/// is the leader's `(p, v)` at the start of this step; its stopping point
/// only moves forward, so this is the tightest bound over the step. The result keeps the
/// vehicle's stopping point (braking at `|u_min|`) behind both limits and
/// may stop the vehicle part-way through the step; see [`advance`].
pub fn baseline_drive(
    p: f64,
    v: f64,
    stop_line: Option<f64>,
    leader: Option<(f64, f64)>,
    cfg: &CorridorConfig<f64>,
    dt: f64,
) -> f64 {
    let b = -cfg.u_min;
    let u_free = cfg.u_max.min((cfg.v_max - v) / dt);
    let leader_limit = leader.map(|(pl, vl)| pl + vl * vl / (2.0 * b) - cfg.safe_distance);
    let limit = match (stop_line, leader_limit) {
        (Some(a), Some(c)) => Some(a.min(c)),
        (a, c) => a.or(c),
    };
    let Some(m) = limit else { return u_free };
    // Largest end-of-step speed w with p' + w²/(2b) ≤ m, where p' = p + (v + w)·dt/2.
    let c0 = p + 0.5 * v * dt - m;
    let disc = 0.25 * dt * dt - 2.0 * c0 / b;
    let w = if disc >= 0.0 { b * (-0.5 * dt + disc.sqrt()) } else { -1.0 };
    let u = if w >= 0.0 {
        (w - v) / dt
    } else if m - p > 0.0 {
        // Stop inside this step, exactly at the limit.
        -(v * v) / (2.0 * (m - p))
    } else {
        cfg.u_min
    };
    u.min(u_free).max(cfg.u_min)
}

/// Applies `u` for `dt`, stopping at zero speed if reached mid-step.
/// Returns the end state and the arcs driven.
pub fn advance(t: f64, p: f64, v: f64, u: f64, dt: f64) -> ((f64, f64), Vec<TrajectoryPlan<f64>>) {
    if u < 0.0 && v + u * dt < 0.0 {
        let h = -v / u;
        let braking = TrajectoryPlan::constant_control(t, p, v, u, h);
        let stop = p + 0.5 * v * h;
        let rest = TrajectoryPlan::constant_control(t + h, stop, 0.0, 0.0, dt - h);
        ((stop, 0.0), vec![braking, rest])
    } else {
        let arc = TrajectoryPlan::constant_control(t, p, v, u, dt);
        ((p + v * dt + 0.5 * u * dt * dt, v + u * dt), vec![arc])
    }
}

/// Time to cover `dist` accelerating at `u_max` up to `v_max`.
fn time_to_cover(dist: f64, v: f64, cfg: &CorridorConfig<f64>) -> f64 {
    if dist <= 0.0 {
        return 0.0;
    }
    let accel_dist = (cfg.v_max * cfg.v_max - v * v).max(0.0) / (2.0 * cfg.u_max);
    if accel_dist >= dist {
        ((v * v + 2.0 * cfg.u_max * dist).sqrt() - v) / cfg.u_max
    } else {
        (cfg.v_max - v).max(0.0) / cfg.u_max + (dist - accel_dist) / cfg.v_max
    }
}

/// Time within `[0, h]` at which a constant-control arc reaches `x`.
fn crossing_time(arc: &TrajectoryPlan<f64>, x: f64) -> f64 {
    let (mut lo, mut hi) = (arc.valid_from, arc.valid_until);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if arc.at(mid).0 < x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Waiting,
    Active,
    Done,
}

struct Car {
    id: u32,
    route: Route,
    lane: usize,
    t0: f64,
    status: Status,
    p: f64,
    v: f64,
    entered: f64,
    exit: f64,
    /// Zone boundaries along the path: (position, zone entered there).
    boundaries: Vec<(f64, Option<Zone>)>,
    next_boundary: usize,
    /// Stop lines: (intersection, position).
    lines: Vec<(Intersection, f64)>,
    next_line: usize,
    permitted: bool,
    committed: bool,
    path: Trajectory<f64>,
    visits: Vec<ZoneVisit>,
}

impl Car {
    /// Intersection this vehicle currently claims: approaching with
    /// permission, committed, or inside the merging zone.
    fn claim(&self, merging_side: f64) -> Option<Intersection> {
        if self.status != Status::Active {
            return None;
        }
        if self.next_line > 0 {
            let (z, line) = self.lines[self.next_line - 1];
            if self.p < line + merging_side {
                return Some(z);
            }
        }
        if (self.permitted || self.committed) && self.next_line < self.lines.len() {
            return Some(self.lines[self.next_line].0);
        }
        None
    }
}

pub struct BaselineOutput {
    pub vehicles: Vec<VehicleLog>,
    pub events: Vec<SimEvent>,
    /// Stop-line crossings during red.
    pub red_light: Vec<(u32, f64)>,
}

pub fn run_baseline(
    cfg: &CorridorConfig<f64>,
    signals: &SignalSchedule,
    arrivals: &[ArrivalSpec],
) -> Result<BaselineOutput> {
    signals.validate()?;
    let dt = BASELINE_STEP;
    let b = -cfg.u_min;
    let routes = Route::external();
    let mut cars: Vec<Car> = arrivals
        .iter()
        .map(|a| {
            let legs = a.route.intersections();
            let mut boundaries = Vec::new();
            let mut lines = Vec::new();
            let mut offset = 0.0;
            for (k, z) in legs.iter().enumerate() {
                if k > 0 {
                    boundaries.push((offset, Some(Zone::Control(*z))));
                }
                lines.push((*z, offset + cfg.control_zone_length));
                boundaries.push((offset + cfg.control_zone_length, Some(Zone::Merging(*z))));
                let end = offset + cfg.exit_position();
                if k + 1 < legs.len() {
                    boundaries.push((end, Some(Zone::Connecting)));
                    offset = end + connecting_length(cfg, &a.route);
                } else {
                    boundaries.push((end, None));
                }
            }
            Car {
                id: a.id,
                route: a.route,
                lane: routes.iter().position(|r| *r == a.route).unwrap_or(0),
                t0: a.t0,
                status: Status::Waiting,
                p: 0.0,
                v: a.v0,
                entered: f64::NAN,
                exit: f64::NAN,
                boundaries,
                next_boundary: 0,
                lines,
                next_line: 0,
                permitted: false,
                committed: false,
                path: Trajectory { segments: Vec::new() },
                visits: Vec::new(),
            }
        })
        .collect();
    let mut events = Vec::new();
    let mut red_light = Vec::new();
    let last_arrival = arrivals.iter().map(|a| a.t0).fold(0.0, f64::max);
    let mut remaining = cars.len();
    let mut k: i64 = 0;
    let n_lanes = routes.len();

    while remaining > 0 {
        let t = k as f64 * dt;
        if t > last_arrival + DRAIN_LIMIT {
            return Err(Error::Infeasible("baseline corridor did not drain".into()));
        }
        // Claims held at the start of the step plus any granted during it.
        let mut claims: Vec<Option<Intersection>> = cars.iter().map(|o| o.claim(cfg.merging_zone_side)).collect();
        for lane in 0..n_lanes {
            // Front-to-back order within the lane.
            let mut order: Vec<usize> =
                (0..cars.len()).filter(|&c| cars[c].lane == lane && cars[c].status == Status::Active).collect();
            order.sort_by(|&a, &b| cars[b].p.total_cmp(&cars[a].p).then(cars[a].id.cmp(&cars[b].id)));

            // Entry of the next waiting vehicle, if the entrance is clear.
            if let Some(c) = (0..cars.len())
                .filter(|&c| cars[c].lane == lane && cars[c].status == Status::Waiting && cars[c].t0 <= t)
                .min_by(|&a, &b| cars[a].t0.total_cmp(&cars[b].t0).then(cars[a].id.cmp(&cars[b].id)))
            {
                let clear = order.last().is_none_or(|&l| {
                    let (pl, vl) = (cars[l].p, cars[l].v);
                    let ve = cars[c].v;
                    pl >= cfg.safe_distance && ve * ve / (2.0 * b) <= pl + vl * vl / (2.0 * b) - cfg.safe_distance
                });
                if clear {
                    let car = &mut cars[c];
                    car.status = Status::Active;
                    car.entered = t;
                    car.visits.push(ZoneVisit {
                        zone: Zone::Control(car.lines[0].0),
                        start: t,
                        end: f64::NAN,
                        offset: 0.0,
                        i: None,
                        j: None,
                    });
                    events.push(SimEvent {
                        time: car.t0,
                        kind: EventKind::Arrival,
                        vehicle: car.id,
                        detail: car.route.code(),
                    });
                    events.push(SimEvent {
                        time: t,
                        kind: EventKind::ControlZoneEntry,
                        vehicle: car.id,
                        detail: format!("z={};v={}", car.lines[0].0, car.v),
                    });
                    order.push(c);
                }
            }

            let mut leader_next: Option<(f64, f64)> = None;
            for &c in &order {
                let (p, v) = (cars[c].p, cars[c].v);
                let mut stop_line = None;
                let mut line_info = None;
                if cars[c].next_line < cars[c].lines.len() {
                    let (z, line) = cars[c].lines[cars[c].next_line];
                    line_info = Some((z, line));
                    if !cars[c].committed {
                        let origin = cars[c].route.origin;
                        let ahead_ok =
                            order.iter().take_while(|&&o| o != c).all(|&o| cars[o].p >= line || cars[o].committed);
                        let blocked = cars.iter().zip(&claims).any(|(o, claim)| {
                            o.id != cars[c].id && conflicts(o.route.origin, origin) && *claim == Some(z)
                        });
                        let green_left = signals.green_remaining(z, origin, t);
                        let permitted =
                            ahead_ok && !blocked && time_to_cover(line - p, v, cfg) + COMMIT_MARGIN <= green_left;
                        cars[c].permitted = permitted;
                        if permitted {
                            claims[c] = Some(z);
                        } else {
                            stop_line = Some(line - STOP_SHORT);
                        }
                    }
                }
                let u = baseline_drive(p, v, stop_line, leader_next, cfg, dt);
                let ((p2, v2), arcs) = advance(t, p, v, u, dt);
                let car = &mut cars[c];
                if let Some((_, line)) = line_info {
                    if car.permitted && !car.committed && p2 + v2 * v2 / (2.0 * b) > line {
                        car.committed = true;
                    }
                }
                // Zone boundaries crossed during the step.
                while car.next_boundary < car.boundaries.len() && car.boundaries[car.next_boundary].0 < p2 {
                    let (x, zone) = car.boundaries[car.next_boundary];
                    let arc = arcs.iter().find(|a| a.at(a.valid_until).0 >= x).unwrap_or(&arcs[0]);
                    let tc = crossing_time(arc, x);
                    if let Some(last) = car.visits.last_mut() {
                        last.end = tc;
                    }
                    let prev = car.visits.last().map(|v| v.zone);
                    match (prev, zone) {
                        (_, Some(Zone::Merging(z))) => {
                            if !car.all_green_ok(signals, z, tc) {
                                red_light.push((car.id, tc));
                            }
                            events.push(SimEvent {
                                time: tc,
                                kind: EventKind::MergingZoneEntry,
                                vehicle: car.id,
                                detail: format!("z={z};v={}", arc.at(tc).1),
                            });
                            car.next_line += 1;
                            car.permitted = false;
                            car.committed = false;
                        }
                        (Some(Zone::Merging(z)), _) => {
                            events.push(SimEvent {
                                time: tc,
                                kind: EventKind::MergingZoneExit,
                                vehicle: car.id,
                                detail: format!("z={z};v={}", arc.at(tc).1),
                            });
                        }
                        (Some(Zone::Connecting), Some(Zone::Control(z))) => {
                            events.push(SimEvent {
                                time: tc,
                                kind: EventKind::HandoverToNextIntersection,
                                vehicle: car.id,
                                detail: format!("z={z}"),
                            });
                        }
                        _ => {}
                    }
                    match zone {
                        Some(zone) => {
                            car.visits.push(ZoneVisit { zone, start: tc, end: f64::NAN, offset: x, i: None, j: None })
                        }
                        None => {
                            car.status = Status::Done;
                            car.exit = tc;
                        }
                    }
                    car.next_boundary += 1;
                }
                for arc in arcs {
                    let arc = if car.status == Status::Done {
                        if arc.valid_from >= car.exit {
                            continue;
                        }
                        TrajectoryPlan { valid_until: arc.valid_until.min(car.exit), ..arc }
                    } else {
                        arc
                    };
                    push_merged(&mut car.path, arc);
                }
                car.p = p2;
                car.v = v2;
                if car.status == Status::Done {
                    remaining -= 1;
                }
                leader_next = if car.status == Status::Done { None } else { Some((p, v)) };
            }
        }
        k += 1;
    }

    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.kind.cmp(&b.kind)).then(a.vehicle.cmp(&b.vehicle)));
    let vehicles = cars
        .into_iter()
        .map(|c| VehicleLog {
            id: c.id,
            route: c.route,
            t0: c.t0,
            entered: c.entered,
            exit: c.exit,
            path: c.path,
            visits: c.visits,
            infeasible: false,
            partial_relief: false,
        })
        .collect();
    Ok(BaselineOutput { vehicles, events, red_light })
}

impl Car {
    fn all_green_ok(&self, signals: &SignalSchedule, z: Intersection, t: f64) -> bool {
        // A crossing exactly at the switch instant counts as green.
        signals.signal_state(z, self.route.origin, t) == Signal::Green
            || signals.green_remaining(z, self.route.origin, t - 1e-9) > 0.0
    }
}

/// Appends an arc, extending the previous one when the control is unchanged.
fn push_merged(path: &mut Trajectory<f64>, arc: TrajectoryPlan<f64>) {
    if arc.valid_until <= arc.valid_from {
        return;
    }
    if let Some(last) = path.segments.last_mut() {
        if last.a == 0.0 && arc.a == 0.0 && last.b == arc.b && last.valid_until == arc.valid_from {
            let (p, v, _) = last.at(arc.valid_from);
            if (p - arc.d).abs() < 1e-9 && (v - arc.c).abs() < 1e-9 {
                last.valid_until = arc.valid_until;
                last.boundary = arc.boundary;
                return;
            }
        }
    }
    path.push(arc);
}
