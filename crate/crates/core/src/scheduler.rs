//! Per-intersection coordinator: FIFO identities, feasibility floors,
//! terminal-time assignment and the congestion cascade.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{CorridorConfig, LabelScheme};
use crate::types::{classify_routes, InformationSet, Intersection, Route, SubsetLabel, VehicleRecord};
use crate::{Error, Result, Scalar};

/// Earliest exit if the vehicle accelerates at `u_max`, reaches `v_max`
/// before the merging zone and cruises.
pub fn earliest_exit_reaching_vmax<S: Scalar>(t0: S, v0: S, cfg: &CorridorConfig<S>) -> S {
    exit_reaching_vmax_from(t0, S::zero(), v0, cfg)
}

/// Earliest exit if the vehicle accelerates at `u_max` all the way to the
/// merging zone and crosses it at the speed reached there.
pub fn earliest_exit_below_vmax<S: Scalar>(t0: S, v0: S, cfg: &CorridorConfig<S>) -> S {
    exit_below_vmax_from(t0, S::zero(), v0, cfg)
}

fn exit_reaching_vmax_from<S: Scalar>(t: S, p: S, v: S, cfg: &CorridorConfig<S>) -> S {
    let gap = cfg.v_max - v;
    t + (cfg.exit_position() - p) / cfg.v_max + gap * gap / (S::lit(2.0) * cfg.u_max * cfg.v_max)
}

fn exit_below_vmax_from<S: Scalar>(t: S, p: S, v: S, cfg: &CorridorConfig<S>) -> S {
    let v_m = merging_speed_at_full_throttle(p, v, cfg);
    t + (v_m - v) / cfg.u_max + cfg.merging_zone_side / v_m
}

/// Speed at the merging zone after accelerating at `u_max` from `(p, v)`,
/// ignoring `v_max`.
pub fn merging_speed_at_full_throttle<S: Scalar>(p: S, v: S, cfg: &CorridorConfig<S>) -> S {
    (S::lit(2.0) * (cfg.control_zone_length - p) * cfg.u_max + v * v).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityTimes<S> {
    pub t1: S,
    pub t2: S,
    pub tc: S,
}

/// Feasibility times for a vehicle entering the control zone at `t0` with `v0`.
pub fn feasibility_times<S: Scalar>(t0: S, v0: S, cfg: &CorridorConfig<S>) -> FeasibilityTimes<S> {
    feasibility_from(t0, S::zero(), v0, cfg)
}

/// Feasibility times from an arbitrary point `p ≤ L` of the control zone.
pub fn feasibility_from<S: Scalar>(t: S, p: S, v: S, cfg: &CorridorConfig<S>) -> FeasibilityTimes<S> {
    let t1 = exit_reaching_vmax_from(t, p, v, cfg);
    let t2 = exit_below_vmax_from(t, p, v, cfg);
    FeasibilityTimes { t1, t2, tc: t1.max(t2) }
}

/// Merging-zone speed of the fastest admissible approach from `(p, v)`.
pub fn time_optimal_exit_speed<S: Scalar>(p: S, v: S, cfg: &CorridorConfig<S>) -> S {
    merging_speed_at_full_throttle(p, v, cfg).min(cfg.v_max)
}

/// Earliest exit from `(p, v)` at time `t` when the merging-zone speed is
/// held to `cap`: full acceleration or braking to `cap`, then hold it.
/// `None` when the remaining distance is too short to brake down to `cap`.
pub fn capped_exit<S: Scalar>(t: S, p: S, v: S, cap: S, cfg: &CorridorConfig<S>) -> Option<S> {
    let gap = cap - v;
    let hold = t + (cfg.exit_position() - p) / cap;
    if v <= cap {
        return Some(hold + gap * gap / (S::lit(2.0) * cfg.u_max * cap));
    }
    if (v * v - cap * cap) / (S::lit(-2.0) * cfg.u_min) > cfg.control_zone_length - p {
        return None;
    }
    Some(hold + gap * gap / (S::lit(2.0) * cfg.u_min * cap))
}

/// Additional time needed to reach the merging zone at the desired minimum
/// speed rather than the current one. Negative while `v < v_min_desired`;
/// the cascade uses its magnitude.
pub fn congestion_slack<S: Scalar>(p: S, v: S, cfg: &CorridorConfig<S>) -> Result<S> {
    if v <= S::zero() {
        return Err(Error::Infeasible("congestion slack undefined at zero speed".into()));
    }
    let remaining = cfg.control_zone_length - p;
    Ok(remaining / cfg.v_min_desired - remaining / v)
}

/// Which case of the terminal-time recursion applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// First in queue: earliest feasible exit.
    Head,
    /// Predecessor in R or O: share the merging zone.
    Shared,
    /// Predecessor in L: follow at `δ`.
    SameLane,
    /// Predecessor in C: enter when it leaves.
    Conflict,
}

impl Branch {
    pub fn from_relation(relation: Option<SubsetLabel>) -> Self {
        match relation {
            None => Branch::Head,
            Some(SubsetLabel::R | SubsetLabel::O) => Branch::Shared,
            Some(SubsetLabel::L) => Branch::SameLane,
            Some(SubsetLabel::C) => Branch::Conflict,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Branch::Head => "head",
            Branch::Shared => "RO",
            Branch::SameLane => "L",
            Branch::Conflict => "C",
        }
    }
}

/// What a vehicle learns from its predecessor's information set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredecessorInfo<S> {
    pub tf: S,
    pub exit_speed: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment<S> {
    pub branch: Branch,
    pub tf: S,
    /// Predecessor-driven term, absent for the head.
    pub term: Option<S>,
    pub floor: S,
    /// Merging-zone speed implied by the branch; `None` when the floor binds
    /// and the vehicle takes the fastest admissible approach.
    pub exit_speed: Option<S>,
    /// Set when the same-lane guard overrode the queue-predecessor result.
    pub lane_guard: bool,
    /// Set when the exit was pushed back so the merging-zone entry follows
    /// the last conflicting exit ahead in the queue.
    pub entry_guard: bool,
    /// Merging-zone speed limit from the same-lane vehicle ahead, when it
    /// is below the fastest approach; the floor is then the capped exit.
    pub cap: Option<S>,
}

impl<S: Scalar> Assignment<S> {
    pub fn floor_binding(&self) -> bool {
        self.exit_speed.is_none()
    }
}

/// The terminal-time recursion for one vehicle.
///
/// * head: `t_f = floor`
/// * R/O: `max(t_{i−1}^f, floor)`
/// * L: `max(t_{i−1}^f + δ / v_{i−1}(t_{i−1}^f), floor)`
/// * C: `max(t_{i−1}^f + S / v, floor)` with `v = min(L / (t_{i−1}^f − t_i^0), v_max)`
pub fn terminal_time<S: Scalar>(
    relation: Option<SubsetLabel>,
    pred: Option<PredecessorInfo<S>>,
    t0: S,
    floor: S,
    cfg: &CorridorConfig<S>,
) -> Result<Assignment<S>> {
    let branch = Branch::from_relation(relation);
    let (term, speed) = match (branch, pred) {
        (Branch::Head, _) => (None, None),
        (_, None) => {
            return Err(Error::Infeasible("predecessor information missing".into()));
        }
        (Branch::Shared, Some(p)) => (Some(p.tf), Some(p.exit_speed)),
        (Branch::SameLane, Some(p)) => {
            if p.exit_speed <= S::zero() {
                return Err(Error::Infeasible("predecessor exit speed is zero".into()));
            }
            (Some(p.tf + cfg.safe_distance / p.exit_speed), Some(p.exit_speed))
        }
        (Branch::Conflict, Some(p)) => {
            let window = p.tf - t0;
            if window <= S::zero() {
                return Err(Error::Infeasible("predecessor exits before ego entry".into()));
            }
            // Above v_max the average-speed surrogate is not drivable.
            let v = (cfg.control_zone_length / window).min(cfg.v_max);
            (Some(p.tf + cfg.merging_zone_side / v), Some(v))
        }
    };
    let tf = match term {
        Some(term) => term.max(floor),
        None => floor,
    };
    let exit_speed = match term {
        Some(term) if term >= floor => speed,
        _ => None,
    };
    Ok(Assignment { branch, tf, term, floor, exit_speed, lane_guard: false, entry_guard: false, cap: None })
}

/// An assignment with the vehicle it was derived against.
type Resolved<S> = (Assignment<S>, Option<u32>, Option<PredecessorInfo<S>>);

/// Why a terminal time was (re)assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Cause {
    Arrival,
    Cascade,
    /// The vehicle could not meet its schedule and published the exit it
    /// can actually make.
    Fallback,
}

/// One row of the schedule audit log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssignmentRecord {
    pub time: f64,
    pub intersection: u8,
    pub vehicle: u32,
    pub i: u32,
    pub j: u8,
    pub branch: &'static str,
    pub binding: &'static str,
    pub cause: &'static str,
    pub pred: Option<u32>,
    pub pred_tf: Option<f64>,
    pub pred_exit_speed: Option<f64>,
    pub t0: f64,
    pub tc: f64,
    pub floor: f64,
    pub tf: f64,
    pub exit_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry<S> {
    pub record: VehicleRecord<S>,
    /// Relation of the predecessor as seen from this vehicle.
    pub relation: Option<SubsetLabel>,
    pub assignment: Assignment<S>,
    /// Merging-zone speed the vehicle is planned to hold.
    pub exit_speed: S,
    /// Feasibility time at entry.
    pub tc: S,
    /// Inside the merging zone or too close to it to be re-planned; the
    /// schedule of a committed vehicle is fixed.
    pub committed: bool,
    pub tau: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutcome<S> {
    /// `(vehicle, old tf, new tf)` for every vehicle whose time moved.
    pub changed: Vec<(u32, S, S)>,
    pub requested: S,
    pub achieved: S,
    pub partial: bool,
}

pub struct CoordinatorState<S> {
    pub intersection: Intersection,
    pub queue: Vec<QueueEntry<S>>,
    pub labels: LabelScheme,
    pub audit: Vec<AssignmentRecord>,
    relief: BTreeMap<u32, S>,
    rng: ChaCha8Rng,
}

/// A vehicle reaching a control zone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival<S> {
    pub id: u32,
    pub route: Route,
    pub t0: S,
    pub v0: S,
}

impl<S: Scalar> CoordinatorState<S> {
    pub fn new(intersection: Intersection, labels: LabelScheme, seed: u64) -> Self {
        Self {
            intersection,
            queue: Vec::new(),
            labels,
            audit: Vec::new(),
            relief: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(intersection.number() as u64)),
        }
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.queue.iter().position(|e| e.record.id == id)
    }

    pub fn entry(&self, id: u32) -> Option<&QueueEntry<S>> {
        self.queue.iter().find(|e| e.record.id == id)
    }

    pub fn entry_mut(&mut self, id: u32) -> Option<&mut QueueEntry<S>> {
        self.queue.iter_mut().find(|e| e.record.id == id)
    }

    /// Registers simultaneous arrivals in a seeded random order.
    pub fn register_batch(
        &mut self,
        mut arrivals: Vec<Arrival<S>>,
        cfg: &CorridorConfig<S>,
    ) -> Result<Vec<VehicleRecord<S>>> {
        if arrivals.len() > 1 {
            arrivals.shuffle(&mut self.rng);
        }
        arrivals.into_iter().map(|a| self.register_arrival(a, cfg)).collect()
    }

    /// Assigns `i = N_z(t) + 1`, the subset label relative to the queue
    /// predecessor, and the terminal time.
    pub fn register_arrival(&mut self, arrival: Arrival<S>, cfg: &CorridorConfig<S>) -> Result<VehicleRecord<S>> {
        if arrival.v0 < cfg.v_min || arrival.v0 > cfg.v_max {
            return Err(Error::Infeasible(format!(
                "vehicle {} enters at {} m/s outside the speed range",
                arrival.id, arrival.v0
            )));
        }
        let relation = self.queue.last().map(|p| classify_routes(&arrival.route, &p.record.route));
        let tc = feasibility_times(arrival.t0, arrival.v0, cfg).tc;
        let k = self.queue.len();
        let (assignment, pred_id, pred_info) =
            self.resolve(k, &arrival.route, relation, (arrival.t0, S::zero(), arrival.v0), tc, None, cfg)?;
        let exit_speed = assignment
            .exit_speed
            .or(assignment.cap)
            .unwrap_or_else(|| time_optimal_exit_speed(S::zero(), arrival.v0, cfg));
        let record = VehicleRecord {
            id: arrival.id,
            queue_index: self.queue.len() as u32 + 1,
            label: self.labels.label(relation.unwrap_or(SubsetLabel::L)),
            intersection: self.intersection,
            route: arrival.route,
            t0: arrival.t0,
            p: S::zero(),
            v: arrival.v0,
            u: S::zero(),
            tf: assignment.tf,
            tm: assignment.tf - cfg.merging_zone_side / exit_speed,
        };
        let entry = QueueEntry { record, relation, assignment, exit_speed, tc, committed: false, tau: S::zero() };
        self.log(arrival.t0, &entry, pred_id, pred_info, Cause::Arrival);
        self.queue.push(entry);
        Ok(record)
    }

    /// Terminal time vehicle `ego` would get behind `pred`, from its entry state.
    pub fn assign_terminal_time(
        &self,
        ego: &VehicleRecord<S>,
        pred: Option<&VehicleRecord<S>>,
        cfg: &CorridorConfig<S>,
    ) -> Result<Assignment<S>> {
        let relation = pred.map(|p| classify_routes(&ego.route, &p.route));
        let info = match pred {
            Some(p) => {
                let exit_speed =
                    self.entry(p.id).map(|e| e.exit_speed).unwrap_or_else(|| cfg.merging_zone_side / (p.tf - p.tm));
                Some(PredecessorInfo { tf: p.tf, exit_speed })
            }
            None => None,
        };
        let tc = feasibility_times(ego.t0, ego.v, cfg).tc;
        terminal_time(relation, info, ego.t0, tc, cfg)
    }

    /// Refreshes the kinematic state the coordinator sees for `id`.
    pub fn update_state(&mut self, id: u32, p: S, v: S, u: S, committed: bool) {
        if let Some(e) = self.entry_mut(id) {
            e.record.p = p;
            e.record.v = v;
            e.record.u = u;
            e.committed = committed;
        }
    }

    /// Removes a vehicle at its merging-zone exit.
    pub fn remove(&mut self, id: u32) -> Option<QueueEntry<S>> {
        let pos = self.position(id)?;
        self.relief.remove(&id);
        Some(self.queue.remove(pos))
    }

    pub fn information_set(&self, id: u32) -> Option<InformationSet<S>> {
        let pos = self.position(id)?;
        let e = &self.queue[pos];
        let headway =
            self.queue[..pos].iter().rev().find(|k| k.record.route == e.record.route).map(|k| k.record.p - e.record.p);
        Some(InformationSet {
            p: e.record.p,
            v: e.record.v,
            subset: e.relation.unwrap_or(SubsetLabel::L),
            headway,
            tf: e.record.tf,
            exit_speed: e.exit_speed,
            tau: e.tau,
        })
    }

    /// Runs the recursion for a vehicle at queue position `k` against its
    /// queue predecessor, then against the last same-lane vehicle ahead when
    /// that one sits further up the queue. The later result wins, so two
    /// same-lane vehicles never share an exit time through an intervening
    /// R or O vehicle. Returns the assignment and the vehicle it was made against.
    ///
    /// A floor-bound vehicle would otherwise leave at the fastest approach
    /// speed and close on a slower same-lane vehicle past the merging zone,
    /// so its speed is capped at that vehicle's exit speed and the floor
    /// moves to the capped exit (never past `ceiling`).
    #[allow(clippy::too_many_arguments)]
    fn resolve(
        &self,
        k: usize,
        route: &Route,
        relation: Option<SubsetLabel>,
        (t, p, v): (S, S, S),
        floor: S,
        ceiling: Option<S>,
        cfg: &CorridorConfig<S>,
    ) -> Result<Resolved<S>> {
        let t0 = self.queue.get(k).map_or(t, |e| e.record.t0);
        let info = |e: &QueueEntry<S>| PredecessorInfo { tf: e.record.tf, exit_speed: e.exit_speed };
        let lane = self.queue[..k].iter().rposition(|e| classify_routes(route, &e.record.route) == SubsetLabel::L);
        let mut floor = floor;
        let mut cap = None;
        if let Some(l) = lane {
            let limit = self.queue[l].exit_speed;
            if limit < time_optimal_exit_speed(p, v, cfg) {
                if let Some(exit) = capped_exit(t, p, v, limit, cfg) {
                    let exit = ceiling.map_or(exit, |c| exit.min(c));
                    if exit > floor {
                        floor = exit;
                    }
                    cap = Some(limit);
                }
            }
        }
        let pred = k.checked_sub(1).map(|p| &self.queue[p]);
        let mut assignment = terminal_time(relation, pred.map(info), t0, floor, cfg)?;
        let mut against = (pred.map(|p| p.record.id), pred.map(info));
        if let Some(l) = lane.filter(|&l| l + 1 < k) {
            let ahead = &self.queue[l];
            let guard = terminal_time(Some(SubsetLabel::L), Some(info(ahead)), t0, floor, cfg)?;
            if guard.tf > assignment.tf {
                assignment = Assignment { lane_guard: true, ..guard };
                against = (Some(ahead.record.id), Some(info(ahead)));
            }
        }
        assignment.cap = cap;
        let speed = assignment.exit_speed.or(cap).unwrap_or_else(|| time_optimal_exit_speed(p, v, cfg));
        let last_conflict = self.queue[..k]
            .iter()
            .filter(|e| classify_routes(route, &e.record.route) == SubsetLabel::C)
            .max_by(|a, b| a.record.tf.partial_cmp(&b.record.tf).unwrap_or(std::cmp::Ordering::Equal));
        if let Some(ahead) = last_conflict {
            let entry = ahead.record.tf + cfg.merging_zone_side / speed;
            if entry > assignment.tf {
                assignment.tf = entry;
                assignment.exit_speed = Some(speed);
                assignment.entry_guard = true;
                against = (Some(ahead.record.id), Some(info(ahead)));
            }
        }
        Ok((assignment, against.0, against.1))
    }

    /// Earliest exit still reachable from the current state, never later
    /// than the current schedule.
    fn current_floor(&self, e: &QueueEntry<S>, cfg: &CorridorConfig<S>, now: S) -> S {
        if e.committed {
            return e.record.tf;
        }
        let from_state = feasibility_from(now, e.record.p, e.record.v, cfg).tc;
        from_state.max(e.tc).min(e.record.tf)
    }

    /// Expedites the queue head by the congestion slack of `trigger` and
    /// re-derives every later terminal time through the recursion.
    ///
    /// The head is never moved below its feasibility floor; any shortfall is
    /// reported as partial relief. Repeating a request from the same trigger
    /// with the same slack changes nothing.
    pub fn expedite_cascade(
        &mut self,
        trigger: u32,
        tau: S,
        now: S,
        cfg: &CorridorConfig<S>,
    ) -> Result<CascadeOutcome<S>> {
        let requested = tau.abs();
        let already = self.relief.get(&trigger).copied().unwrap_or_else(S::zero);
        let increment = (requested - already).max(S::zero());
        if requested > already {
            self.relief.insert(trigger, requested);
        }
        if let Some(e) = self.entry_mut(trigger) {
            e.tau = requested;
        }
        let mut outcome =
            CascadeOutcome { changed: Vec::new(), requested: increment, achieved: S::zero(), partial: false };
        if self.queue.is_empty() || increment == S::zero() {
            return Ok(outcome);
        }

        // Head: free choice, clamped at its floor.
        if !self.queue[0].committed {
            let floor = self.current_floor(&self.queue[0], cfg, now);
            let old = self.queue[0].record.tf;
            let new = (old - increment).max(floor);
            outcome.achieved = old - new;
            let assignment = Assignment {
                branch: Branch::Head,
                tf: new,
                term: None,
                floor,
                exit_speed: None,
                lane_guard: false,
                entry_guard: false,
                cap: None,
            };
            self.apply(0, (assignment, None, None), now, cfg, &mut outcome.changed);
        }
        outcome.partial = outcome.achieved < increment - S::lit(1e-9);

        for k in 1..self.queue.len() {
            if self.queue[k].committed {
                continue;
            }
            let e = &self.queue[k];
            let floor = self.current_floor(e, cfg, now);
            let state = (now, e.record.p, e.record.v);
            let ceiling = Some(e.record.tf);
            let resolved = self.resolve(k, &e.record.route, e.relation, state, floor, ceiling, cfg)?;
            self.apply(k, resolved, now, cfg, &mut outcome.changed);
        }
        Ok(outcome)
    }

    fn apply(
        &mut self,
        k: usize,
        (assignment, pred_id, pred_info): Resolved<S>,
        now: S,
        cfg: &CorridorConfig<S>,
        changed: &mut Vec<(u32, S, S)>,
    ) {
        let e = &mut self.queue[k];
        let old_tf = e.record.tf;
        let old_speed = e.exit_speed;
        let exit_speed = assignment
            .exit_speed
            .or(assignment.cap)
            .unwrap_or_else(|| time_optimal_exit_speed(e.record.p, e.record.v, cfg));
        e.assignment = assignment;
        e.record.tf = assignment.tf;
        e.exit_speed = exit_speed;
        e.record.tm = assignment.tf - cfg.merging_zone_side / exit_speed;
        if old_tf != e.record.tf || old_speed != exit_speed {
            changed.push((e.record.id, old_tf, e.record.tf));
        }
        let snapshot = e.clone();
        self.log(now, &snapshot, pred_id, pred_info, Cause::Cascade);
    }

    /// Replaces a vehicle's schedule with the exit it can actually make.
    pub fn publish_fallback(&mut self, id: u32, now: S, tf: S, tm: S, exit_speed: S) {
        let Some(k) = self.position(id) else { return };
        let e = &mut self.queue[k];
        e.record.tf = tf;
        e.record.tm = tm;
        e.assignment.tf = tf;
        e.exit_speed = exit_speed;
        let snapshot = e.clone();
        self.log(now, &snapshot, None, None, Cause::Fallback);
    }

    fn log(&mut self, now: S, e: &QueueEntry<S>, pred: Option<u32>, info: Option<PredecessorInfo<S>>, cause: Cause) {
        let f = |x: S| x.to_f64().unwrap_or(f64::NAN);
        let position = self.position(e.record.id).map(|p| p as u32 + 1).unwrap_or(e.record.queue_index);
        self.audit.push(AssignmentRecord {
            time: f(now),
            intersection: self.intersection.number(),
            vehicle: e.record.id,
            i: position,
            j: e.record.label,
            branch: e.assignment.branch.code(),
            binding: if cause == Cause::Fallback {
                "fallback"
            } else if e.assignment.floor_binding() {
                "floor"
            } else if e.assignment.entry_guard {
                "entry"
            } else if e.assignment.lane_guard {
                "lane"
            } else {
                "pred"
            },
            cause: match cause {
                Cause::Arrival => "arrival",
                Cause::Cascade => "cascade",
                Cause::Fallback => "fallback",
            },
            pred,
            pred_tf: info.map(|i| f(i.tf)),
            pred_exit_speed: info.map(|i| f(i.exit_speed)),
            t0: f(e.record.t0),
            tc: f(e.tc),
            floor: f(e.assignment.floor),
            tf: f(e.record.tf),
            exit_speed: f(e.exit_speed),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Approach;
    use proptest::prelude::*;

    fn cfg() -> CorridorConfig<f64> {
        CorridorConfig::reference()
    }

    /// Forward simulation at constant `u_max` capped at `v_max`, then constant
    /// speed through the merging zone.
    fn simulate_exit(t0: f64, v0: f64, c: &CorridorConfig<f64>, cap: bool) -> f64 {
        let dt = 1e-4;
        let (mut t, mut p, mut v) = (t0, 0.0, v0);
        while p < c.control_zone_length {
            let u = if cap && v >= c.v_max { 0.0 } else { c.u_max };
            let step = if cap { (c.v_max - v).max(0.0) / c.u_max } else { f64::INFINITY };
            let h = if u > 0.0 && step > 0.0 && step < dt { step } else { dt };
            let (p2, v2) = crate::kinematics::kinematic_step((p, v), u, h);
            if p2 >= c.control_zone_length {
                // Land exactly on the merging-zone entry.
                let rem = c.control_zone_length - p;
                let tau = if u == 0.0 { rem / v } else { (-v + (v * v + 2.0 * u * rem).sqrt()) / u };
                t += tau;
                v += u * tau;
                break;
            }
            t += h;
            p = p2;
            v = v2;
        }
        t + c.merging_zone_side / v
    }

    #[test]
    fn vmax_case_values() {
        let c = cfg();
        let t = earliest_exit_reaching_vmax(0.0, 11.11, &c);
        // Reference value is quoted to the millisecond.
        assert!((t - 21.585).abs() < 1e-3, "{t}");
        let oracle = simulate_exit(0.0, 11.11, &c, true);
        assert!((t - oracle).abs() < 1e-3, "{t} vs {oracle}");
        assert!((earliest_exit_reaching_vmax(5.0, 11.11, &c) - (t + 5.0)).abs() < 1e-12);
        assert!((earliest_exit_reaching_vmax(0.0, 13.0, &c) - 280.0 / 13.0).abs() < 1e-12);
    }

    #[test]
    fn below_vmax_case_values() {
        let c = cfg();
        let t = earliest_exit_below_vmax(0.0, 11.11, &c);
        let v_m = (1470.0f64 + 11.11 * 11.11).sqrt();
        assert!((v_m - 39.92).abs() < 5e-3);
        assert!((t - 10.48).abs() < 5e-3, "{t}");
        let oracle = simulate_exit(0.0, 11.11, &c, false);
        assert!((t - oracle).abs() < 1e-3);
        assert!((earliest_exit_below_vmax(5.0, 11.11, &c) - (t + 5.0)).abs() < 1e-12);
    }

    #[test]
    fn below_vmax_degenerate_zone() {
        let mut c = cfg();
        c.control_zone_length = 0.0;
        let t = earliest_exit_below_vmax(2.0, 10.0, &c);
        assert!((t - (2.0 + 35.0 / 10.0)).abs() < 1e-12);
    }

    #[test]
    fn floor_respects_cruise_bound() {
        let c = cfg();
        for v0 in [0.5, 3.0, 7.0, 11.11, 13.0] {
            let ft = feasibility_times(0.0, v0, &c);
            assert!(ft.tc >= c.exit_position() / c.v_max - 1e-12);
        }
    }

    fn pred(tf: f64, exit_speed: f64) -> Option<PredecessorInfo<f64>> {
        Some(PredecessorInfo { tf, exit_speed })
    }

    #[test]
    fn shared_branch_takes_predecessor_time() {
        let a = terminal_time(Some(SubsetLabel::O), pred(30.0, 12.0), 5.0, 21.6, &cfg()).unwrap();
        assert_eq!(a.tf, 30.0);
        assert_eq!(a.branch, Branch::Shared);
        assert_eq!(a.exit_speed, Some(12.0));
    }

    #[test]
    fn same_lane_branch_adds_headway_time() {
        let a = terminal_time(Some(SubsetLabel::L), pred(30.0, 10.0), 5.0, 21.6, &cfg()).unwrap();
        assert!((a.tf - 31.0).abs() < 1e-12);
        // Playback: ego crosses the merging zone at the predecessor's speed,
        // so when the predecessor exits the ego is δ short of the exit.
        let ego_at_pred_exit = cfg().exit_position() - 10.0 * (a.tf - 30.0);
        assert!((cfg().exit_position() - ego_at_pred_exit - 10.0).abs() < 1e-6);
    }

    #[test]
    fn conflict_branch_waits_for_exit() {
        let c = cfg();
        let a = terminal_time(Some(SubsetLabel::C), pred(30.0, 12.0), 5.0, 21.6, &c).unwrap();
        assert!((a.tf - 33.571_428_571).abs() < 1e-6);
        let v = a.exit_speed.unwrap();
        // Merging-zone entry coincides with the predecessor's exit.
        assert!((a.tf - c.merging_zone_side / v - 30.0).abs() < 1e-9);
    }

    #[test]
    fn floor_dominates() {
        let a = terminal_time(Some(SubsetLabel::O), pred(10.0, 12.0), 5.0, 21.6, &cfg()).unwrap();
        assert_eq!(a.tf, 21.6);
        assert!(a.floor_binding());
    }

    #[test]
    fn division_by_zero_is_infeasible() {
        assert!(terminal_time(Some(SubsetLabel::L), pred(30.0, 0.0), 5.0, 21.6, &cfg()).is_err());
        assert!(terminal_time(Some(SubsetLabel::C), pred(5.0, 12.0), 5.0, 21.6, &cfg()).is_err());
    }

    #[test]
    fn slack_examples() {
        let c = cfg();
        assert_eq!(congestion_slack(245.0, 5.0, &c).unwrap(), 0.0);
        assert_eq!(congestion_slack(100.0, 7.0, &c).unwrap(), 0.0);
        let tau = congestion_slack(45.0, 5.0, &c).unwrap();
        assert!((tau - (200.0 / 7.0 - 200.0 / 5.0)).abs() < 1e-12);
        assert!((tau + 11.43).abs() < 5e-3);
        assert!(congestion_slack(45.0, 0.0, &c).is_err());
    }

    fn route(origin: Approach) -> Route {
        Route { origin, lane: 0, crosses_both: false, entry: Intersection::One }
    }

    fn arrival(id: u32, origin: Approach, t0: f64) -> Arrival<f64> {
        Arrival { id, route: route(origin), t0, v0: 11.11 }
    }

    #[test]
    fn queue_indices() {
        let c = cfg();
        let mut coord = CoordinatorState::new(Intersection::One, LabelScheme::default(), 1);
        let r = coord.register_arrival(arrival(0, Approach::West, 0.0), &c).unwrap();
        assert_eq!(r.queue_index, 1);
        for k in 1..6 {
            coord.register_arrival(arrival(k, Approach::West, k as f64 * 3.0), &c).unwrap();
        }
        let r = coord.register_arrival(arrival(6, Approach::North, 20.0), &c).unwrap();
        assert_eq!(r.queue_index, 7);
        assert_eq!(r.label, LabelScheme::default().c);
    }

    #[test]
    fn out_of_range_entry_rejected() {
        let c = cfg();
        let mut coord = CoordinatorState::new(Intersection::One, LabelScheme::default(), 1);
        let mut a = arrival(0, Approach::West, 0.0);
        a.v0 = 14.0;
        assert!(coord.register_arrival(a, &c).is_err());
    }

    #[test]
    fn simultaneous_arrivals_are_reproducible() {
        let c = cfg();
        let order = |seed| {
            let mut coord = CoordinatorState::new(Intersection::One, LabelScheme::default(), seed);
            let batch = vec![
                arrival(0, Approach::West, 1.0),
                arrival(1, Approach::North, 1.0),
                arrival(2, Approach::South, 1.0),
                arrival(3, Approach::East, 1.0),
            ];
            coord.register_batch(batch, &c).unwrap().iter().map(|r| r.id).collect::<Vec<_>>()
        };
        assert_eq!(order(7), order(7));
        let mut ids = order(7);
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    /// Independent recursion over a queue, from scratch.
    fn recompute(coord: &CoordinatorState<f64>, c: &CorridorConfig<f64>) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        let mut speeds: Vec<f64> = Vec::new();
        for (k, e) in coord.queue.iter().enumerate() {
            let floor = e.assignment.floor;
            let (tf, speed) = if k == 0 {
                (e.record.tf, e.exit_speed)
            } else {
                let (ptf, pv) = (out[k - 1], speeds[k - 1]);
                let term = match e.relation.unwrap() {
                    SubsetLabel::R | SubsetLabel::O => (ptf, pv),
                    SubsetLabel::L => (ptf + c.safe_distance / pv, pv),
                    SubsetLabel::C => {
                        let v = (c.control_zone_length / (ptf - e.record.t0)).min(c.v_max);
                        (ptf + c.merging_zone_side / v, v)
                    }
                };
                let pick = |term: (f64, f64)| if term.0 >= floor { term } else { (floor, e.exit_speed) };
                let base = pick(term);
                let same_lane = (0..k).rev().find(|&m| {
                    let r = &coord.queue[m].record.route;
                    r.origin == e.record.route.origin && r.lane == e.record.route.lane
                });
                let (tf, speed) = match same_lane {
                    Some(m) if m + 1 < k => {
                        let guard = pick((out[m] + c.safe_distance / speeds[m], speeds[m]));
                        if guard.0 > base.0 {
                            guard
                        } else {
                            base
                        }
                    }
                    _ => base,
                };
                // Entry guard: a merging-zone length behind the latest conflicting exit.
                let entry = (0..k)
                    .filter(|&m| classify_routes(&e.record.route, &coord.queue[m].record.route) == SubsetLabel::C)
                    .map(|m| out[m] + c.merging_zone_side / speed)
                    .fold(f64::NEG_INFINITY, f64::max);
                (tf.max(entry), speed)
            };
            out.push(tf);
            speeds.push(speed);
        }
        out
    }

    fn busy_queue(c: &CorridorConfig<f64>) -> CoordinatorState<f64> {
        let mut coord = CoordinatorState::new(Intersection::One, LabelScheme::default(), 3);
        // Head, then an O follower, then an L follower of the second one.
        coord.register_arrival(arrival(0, Approach::West, 0.0), c).unwrap();
        coord.register_arrival(arrival(1, Approach::North, 0.5), c).unwrap();
        coord.register_arrival(arrival(2, Approach::South, 0.6), c).unwrap();
        coord.register_arrival(arrival(3, Approach::South, 0.8), c).unwrap();
        coord
    }

    #[test]
    fn cascade_zero_tau_is_noop() {
        let c = cfg();
        let mut coord = busy_queue(&c);
        let before: Vec<f64> = coord.queue.iter().map(|e| e.record.tf).collect();
        let out = coord.expedite_cascade(99, 0.0, 1.0, &c).unwrap();
        assert!(out.changed.is_empty());
        let after: Vec<f64> = coord.queue.iter().map(|e| e.record.tf).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn cascade_single_vehicle_direct() {
        let c = cfg();
        let mut coord = CoordinatorState::new(Intersection::One, LabelScheme::default(), 3);
        coord.register_arrival(arrival(0, Approach::West, 0.0), &c).unwrap();
        // Give the head slack as if scheduled behind a vehicle that already left.
        coord.queue[0].record.tf = 30.0;
        coord.queue[0].record.v = 11.11;
        let out = coord.expedite_cascade(9, 2.0, 0.0, &c).unwrap();
        assert!((coord.queue[0].record.tf - 28.0).abs() < 1e-12);
        assert!(!out.partial);
        assert!((out.achieved - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cascade_clamps_and_flags_partial() {
        let c = cfg();
        let mut coord = CoordinatorState::new(Intersection::One, LabelScheme::default(), 3);
        coord.register_arrival(arrival(0, Approach::West, 0.0), &c).unwrap();
        let tc = coord.queue[0].tc;
        coord.queue[0].record.tf = tc + 1.0;
        let out = coord.expedite_cascade(9, 5.0, 0.0, &c).unwrap();
        assert!(out.partial);
        assert!((coord.queue[0].record.tf - tc).abs() < 1e-9);
    }

    #[test]
    fn cascade_keeps_recursion_and_is_idempotent() {
        let c = cfg();
        let mut coord = busy_queue(&c);
        coord.queue[0].record.tf += 4.0;
        // Re-derive followers so the queue starts consistent.
        coord.expedite_cascade(100, 1e-12, 0.9, &c).unwrap();
        let out = coord.expedite_cascade(7, 3.0, 0.9, &c).unwrap();
        assert!(!out.changed.is_empty());
        let tfs: Vec<f64> = coord.queue.iter().map(|e| e.record.tf).collect();
        assert_eq!(tfs, recompute(&coord, &c));
        for w in tfs.windows(2) {
            assert!(w[1] >= w[0]);
        }
        for e in &coord.queue {
            assert!(e.record.tf >= e.tc - 1e-12);
        }
        let again = coord.expedite_cascade(7, 3.0, 0.9, &c).unwrap();
        assert!(again.changed.is_empty());
        let tfs2: Vec<f64> = coord.queue.iter().map(|e| e.record.tf).collect();
        assert_eq!(tfs, tfs2);
    }

    #[test]
    fn capped_exit_matches_playback() {
        let c = cfg();
        for (v0, cap) in [(11.11f64, 12.0f64), (11.11, 9.5), (5.0, 12.5), (12.9, 12.0)] {
            let dt: f64 = 1e-4;
            let (mut t, mut p, mut v) = (0.0, 0.0, v0);
            while p < c.exit_position() {
                let u = if (v - cap).abs() < 1e-9 {
                    0.0
                } else if v < cap {
                    c.u_max
                } else {
                    c.u_min
                };
                let h = if u != 0.0 { dt.min((cap - v) / u) } else { dt };
                let h = if u == 0.0 { h.min((c.exit_position() - p) / v) } else { h };
                p += v * h + 0.5 * u * h * h;
                v += u * h;
                t += h;
            }
            let exit = capped_exit(0.0, 0.0, v0, cap, &c).unwrap();
            assert!((exit - t).abs() < 1e-3, "{v0} {cap}: {exit} vs {t}");
        }
        assert!(capped_exit(0.0, 240.0, 13.0, 5.0, &c).is_none());
    }

    #[test]
    fn same_lane_guard_through_opposite_vehicle() {
        let c = cfg();
        let mut coord = CoordinatorState::new(Intersection::One, LabelScheme::default(), 3);
        coord.register_arrival(arrival(0, Approach::West, 0.0), &c).unwrap();
        coord.queue[0].record.tf = 40.0;
        coord.register_arrival(arrival(1, Approach::East, 0.5), &c).unwrap();
        coord.register_arrival(arrival(2, Approach::West, 1.0), &c).unwrap();
        let (lead, opp, follow) = (&coord.queue[0], &coord.queue[1], &coord.queue[2]);
        assert_eq!(opp.record.tf, 40.0);
        assert!(follow.assignment.lane_guard);
        assert_eq!(follow.record.tf, 40.0 + c.safe_distance / lead.exit_speed);
        assert_eq!(coord.audit.last().unwrap().binding, "lane");
        assert_eq!(coord.audit.last().unwrap().pred, Some(0));
    }

    #[test]
    fn floor_bound_follower_capped_at_leader_speed() {
        let c = cfg();
        let mut coord = CoordinatorState::new(Intersection::One, LabelScheme::default(), 3);
        coord.register_arrival(arrival(0, Approach::West, 0.0), &c).unwrap();
        coord.queue[0].exit_speed = 11.5;
        coord.register_arrival(arrival(1, Approach::West, 1.0), &c).unwrap();
        let e = &coord.queue[1];
        assert_eq!(e.assignment.cap, Some(11.5));
        assert!(e.exit_speed <= 11.5);
        assert!(e.record.tf >= capped_exit(1.0, 0.0, 11.11, 11.5, &c).unwrap());
    }

    #[test]
    fn information_set_headway() {
        let c = cfg();
        let mut coord = busy_queue(&c);
        coord.update_state(2, 40.0, 11.0, 0.0, false);
        coord.update_state(3, 25.0, 11.0, 0.0, false);
        let y = coord.information_set(3).unwrap();
        assert_eq!(y.headway, Some(15.0));
        assert_eq!(y.subset, SubsetLabel::L);
        assert_eq!(coord.information_set(0).unwrap().headway, None);
    }

    proptest! {
        #[test]
        fn monotone_and_floored(gaps in proptest::collection::vec(0.0..6.0f64, 1..30),
                                origins in proptest::collection::vec(0usize..4, 30)) {
            let c = cfg();
            let mut coord = CoordinatorState::new(Intersection::One, LabelScheme::default(), 5);
            let approaches = [Approach::North, Approach::South, Approach::East, Approach::West];
            let mut t = 0.0;
            for (k, g) in gaps.iter().enumerate() {
                t += g;
                coord.register_arrival(arrival(k as u32, approaches[origins[k]], t), &c).unwrap();
            }
            let tfs: Vec<f64> = coord.queue.iter().map(|e| e.record.tf).collect();
            for w in tfs.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
            for e in &coord.queue {
                prop_assert!(e.record.tf >= e.tc);
            }
            prop_assert_eq!(tfs, recompute(&coord, &c));
        }
    }
}
