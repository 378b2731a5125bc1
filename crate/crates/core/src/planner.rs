//! Bound-respecting trajectories built from closed-form arcs.
//!
//! The unconstrained solution is tried first. When it leaves the admissible
//! set the planner pieces it together from unconstrained arcs and arcs that
//! ride a bound:
//!
//! * a speed excursion is replaced by `arc → cruise at the bound → arc`, the
//!   arcs meeting the cruise with zero control; the junction times minimise
//!   `½∫u²` in closed form;
//! * a control excursion at either end is clipped to the bound for the
//!   shortest hold after which the remainder re-solves inside the bounds.
//!
//! At most [`MAX_REPAIR_PASSES`] clips are applied. If the result still
//! violates a bound the unconstrained plan is returned and marked
//! infeasible, so the schedule is still met.

use crate::ocp::{check_plan, solve_unchecked, Bounds, Trajectory, TrajectoryPlan, CONDITIONING_FLOOR};
use crate::{Result, Scalar};

pub const MAX_REPAIR_PASSES: usize = 5;

const HOLD_GRID: usize = 256;
const BISECTIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State<S> {
    pub t: S,
    pub p: S,
    pub v: S,
}

impl<S: Scalar> State<S> {
    pub fn new(t: S, p: S, v: S) -> Self {
        Self { t, p, v }
    }

    fn hold(&self, u: S, h: S) -> Self {
        Self { t: self.t + h, p: self.p + self.v * h + S::half() * u * h * h, v: self.v + u * h }
    }

    /// State `h` before `self` under constant control `u`.
    fn rewind(&self, u: S, h: S) -> Self {
        Self { t: self.t - h, p: self.p - self.v * h + S::half() * u * h * h, v: self.v - u * h }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanQuality {
    /// The single unconstrained arc is admissible.
    Unconstrained,
    /// Bounds became active; the plan is pieced from several arcs.
    Pieced,
    /// No admissible piecing was found; the unconstrained arc is used.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTrajectory<S> {
    pub trajectory: Trajectory<S>,
    pub quality: PlanQuality,
}

/// Minimum-energy plan from `start` to `end` inside `bounds`.
pub fn plan_bounded<S: Scalar>(start: State<S>, end: State<S>, bounds: &Bounds<S>) -> Result<PlannedTrajectory<S>> {
    let unconstrained = crate::ocp::solve_boundary(start.t, start.p, start.v, end.t, end.p, end.v)?;
    if check_plan(&unconstrained, bounds).ok() {
        return Ok(PlannedTrajectory {
            trajectory: Trajectory::single(unconstrained),
            quality: PlanQuality::Unconstrained,
        });
    }

    let mut prefix: Vec<TrajectoryPlan<S>> = Vec::new();
    let mut suffix: Vec<TrajectoryPlan<S>> = Vec::new();
    let (mut s, mut e) = (start, end);
    for pass in 0..=MAX_REPAIR_PASSES {
        let Some(middle) = candidate(s, e, bounds) else { break };
        let side = violated_side(&middle, bounds);
        match side {
            None => {
                let mut segments = prefix;
                segments.extend(middle);
                segments.extend(suffix.into_iter().rev());
                return Ok(PlannedTrajectory { trajectory: Trajectory { segments }, quality: PlanQuality::Pieced });
            }
            Some(_) if pass == MAX_REPAIR_PASSES => break,
            Some(Side::Start(u)) => {
                let Some(h) = start_hold(s, e, u, bounds) else { break };
                prefix.push(TrajectoryPlan::constant_control(s.t, s.p, s.v, u, h));
                s = s.hold(u, h);
            }
            Some(Side::End(u)) => {
                let Some(h) = end_hold(s, e, u, bounds) else { break };
                let arc_start = e.rewind(u, h);
                suffix.push(TrajectoryPlan::constant_control(arc_start.t, arc_start.p, arc_start.v, u, h));
                e = arc_start;
            }
            Some(Side::Interior) => break,
        }
    }
    Ok(PlannedTrajectory { trajectory: Trajectory::single(unconstrained), quality: PlanQuality::Infeasible })
}

/// Fastest admissible way to reach `target`: full acceleration until
/// `v_max`, then cruise. A start above `v_max` brakes down to it first.
/// Returns the trajectory; its end time and speed are the arrival time and speed.
pub fn time_optimal<S: Scalar>(start: State<S>, target: S, bounds: &Bounds<S>) -> Trajectory<S> {
    let remaining = target - start.p;
    let mut traj = Trajectory { segments: Vec::new() };
    if start.v == bounds.v_max {
        traj.push(TrajectoryPlan::cruise(start.t, start.p, start.v, remaining / start.v));
        return traj;
    }
    if start.v > bounds.v_max {
        let brake_dist = (start.v * start.v - bounds.v_max * bounds.v_max) / (S::lit(-2.0) * bounds.u_min);
        if brake_dist >= remaining {
            let v_reach = (start.v * start.v + S::lit(2.0) * bounds.u_min * remaining).sqrt();
            let t_dec = (v_reach - start.v) / bounds.u_min;
            traj.push(TrajectoryPlan::constant_control(start.t, start.p, start.v, bounds.u_min, t_dec));
            return traj;
        }
        let t_dec = (bounds.v_max - start.v) / bounds.u_min;
        traj.push(TrajectoryPlan::constant_control(start.t, start.p, start.v, bounds.u_min, t_dec));
        let cruise_len = remaining - brake_dist;
        if cruise_len > S::zero() {
            traj.push(TrajectoryPlan::cruise(
                start.t + t_dec,
                target - cruise_len,
                bounds.v_max,
                cruise_len / bounds.v_max,
            ));
        }
        return traj;
    }
    let accel_dist = (bounds.v_max * bounds.v_max - start.v * start.v) / (S::lit(2.0) * bounds.u_max);
    if accel_dist <= remaining {
        let t_acc = (bounds.v_max - start.v) / bounds.u_max;
        let acc = TrajectoryPlan::constant_control(start.t, start.p, start.v, bounds.u_max, t_acc);
        let cruise_len = remaining - accel_dist;
        traj.push(acc);
        if cruise_len > S::zero() {
            // Anchor the cruise on exact values rather than the rounded arc end.
            traj.push(TrajectoryPlan::cruise(
                start.t + t_acc,
                target - cruise_len,
                bounds.v_max,
                cruise_len / bounds.v_max,
            ));
        }
    } else {
        let v_reach = (start.v * start.v + S::lit(2.0) * bounds.u_max * remaining).sqrt();
        let t_acc = (v_reach - start.v) / bounds.u_max;
        traj.push(TrajectoryPlan::constant_control(start.t, start.p, start.v, bounds.u_max, t_acc));
    }
    traj
}

enum Side<S> {
    Start(S),
    End(S),
    Interior,
}

fn violated_side<S: Scalar>(arcs: &[TrajectoryPlan<S>], bounds: &Bounds<S>) -> Option<Side<S>> {
    let tol = Bounds::<S>::tolerance();
    let traj = Trajectory { segments: arcs.to_vec() };
    if traj.check(bounds).ok() {
        return None;
    }
    let clip = |u: S| {
        if u > bounds.u_max + tol {
            Some(bounds.u_max)
        } else if u < bounds.u_min - tol {
            Some(bounds.u_min)
        } else {
            None
        }
    };
    let first = arcs[0];
    let last = arcs[arcs.len() - 1];
    if let Some(u) = clip(first.at(first.valid_from).2) {
        return Some(Side::Start(u));
    }
    if let Some(u) = clip(last.at(last.valid_until).2) {
        return Some(Side::End(u));
    }
    Some(Side::Interior)
}

/// Unconstrained arc, or the speed-capped three-arc plan when the
/// unconstrained arc leaves the speed range.
fn candidate<S: Scalar>(s: State<S>, e: State<S>, bounds: &Bounds<S>) -> Option<Vec<TrajectoryPlan<S>>> {
    if e.t - s.t < S::lit(CONDITIONING_FLOOR) {
        return None;
    }
    let cubic = solve_unchecked(s, e);
    let report = check_plan(&cubic, bounds);
    if report.speed_ok() {
        return Some(vec![cubic]);
    }
    let cap = if report.has(crate::ocp::BoundKind::VMax) { bounds.v_max } else { bounds.v_min };
    speed_capped(s, e, cap)
}

/// `arc → cruise at cap → arc` with zero control at both junctions.
///
/// An arc from speed `v` that meets `cap` with zero control over `T` covers
/// `T·(v + 2·cap)/3`. With `Δ = |cap − v|` at each end the distance condition
/// reads `Δ1·T1 + Δ3·T3 = 3·|cap·T − R|`, and minimising
/// `Δ1²/T1 + Δ3²/T3` under it gives `T_k ∝ √Δ_k`.
fn speed_capped<S: Scalar>(s: State<S>, e: State<S>, cap: S) -> Option<Vec<TrajectoryPlan<S>>> {
    let total = e.t - s.t;
    let distance = e.p - s.p;
    let three = S::lit(3.0);
    let sign = if cap * total >= distance { S::one() } else { -S::one() };
    let d1 = sign * (cap - s.v);
    let d3 = sign * (cap - e.v);
    let k = sign * three * (cap * total - distance);
    let tiny = S::lit(1e-12);
    if d1 < -tiny || d3 < -tiny {
        return None;
    }
    let (d1, d3) = (d1.max(S::zero()), d3.max(S::zero()));
    let denom = d1 * d1.sqrt() + d3 * d3.sqrt();
    if denom <= tiny {
        return None;
    }
    let t1 = d1.sqrt() * k / denom;
    let t3 = d3.sqrt() * k / denom;
    if t1 + t3 > total {
        return None;
    }
    let mut arcs = Vec::with_capacity(3);
    let mut cursor = s;
    if t1 > tiny {
        let end = State::new(s.t + t1, s.p + t1 * (s.v + S::lit(2.0) * cap) / three, cap);
        arcs.push(solve_unchecked(s, end));
        cursor = end;
    }
    let arc3_start = State::new(e.t - t3, e.p - t3 * (S::lit(2.0) * cap + e.v) / three, cap);
    let cruise = arc3_start.t - cursor.t;
    if cruise > tiny {
        arcs.push(TrajectoryPlan::cruise(cursor.t, cursor.p, cap, cruise));
    }
    if t3 > tiny {
        arcs.push(solve_unchecked(arc3_start, e));
    }
    if arcs.is_empty() {
        return None;
    }
    Some(arcs)
}

/// Smallest hold at `u` from `s` after which the remainder no longer
/// violates the control bound at its start.
fn start_hold<S: Scalar>(s: State<S>, e: State<S>, u: S, bounds: &Bounds<S>) -> Option<S> {
    let speed_room = if u > S::zero() { (bounds.v_max - s.v) / u } else { (bounds.v_min - s.v) / u };
    let h_max = speed_room.min(e.t - s.t - S::lit(2.0 * CONDITIONING_FLOOR));
    search_hold(h_max, |h| {
        candidate(s.hold(u, h), e, bounds)
            .map(|arcs| !matches!(violated_side(&arcs, bounds), Some(Side::Start(_))))
            .unwrap_or(false)
    })
}

fn end_hold<S: Scalar>(s: State<S>, e: State<S>, u: S, bounds: &Bounds<S>) -> Option<S> {
    let speed_room = if u > S::zero() { (e.v - bounds.v_min) / u } else { (e.v - bounds.v_max) / u };
    let h_max = speed_room.min(e.t - s.t - S::lit(2.0 * CONDITIONING_FLOOR));
    search_hold(h_max, |h| {
        candidate(s, e.rewind(u, h), bounds)
            .map(|arcs| !matches!(violated_side(&arcs, bounds), Some(Side::End(_))))
            .unwrap_or(false)
    })
}

/// Grid scan for the first hold satisfying `ok`, refined by bisection.
fn search_hold<S: Scalar>(h_max: S, ok: impl Fn(S) -> bool) -> Option<S> {
    if !(h_max > S::zero()) {
        return None;
    }
    let n = S::lit(HOLD_GRID as f64);
    let mut lo = S::zero();
    let mut hi = None;
    for k in 1..=HOLD_GRID {
        let h = h_max * S::lit(k as f64) / n;
        if ok(h) {
            hi = Some(h);
            break;
        }
        lo = h;
    }
    let mut hi = hi?;
    for _ in 0..BISECTIONS {
        let mid = S::half() * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CorridorConfig;

    fn bounds() -> Bounds<f64> {
        Bounds::from_config(&CorridorConfig::reference())
    }

    fn assert_meets(traj: &Trajectory<f64>, s: State<f64>, e: State<f64>) {
        let (p, v, _) = traj.at(s.t);
        assert!((p - s.p).abs() < 1e-9 && (v - s.v).abs() < 1e-9);
        let (p, v, _) = traj.at(e.t);
        assert!((p - e.p).abs() < 1e-6, "end position {p} vs {}", e.p);
        assert!((v - e.v).abs() < 1e-6, "end speed {v} vs {}", e.v);
        assert!((traj.start() - s.t).abs() < 1e-12 && (traj.end() - e.t).abs() < 1e-9);
        for w in traj.segments.windows(2) {
            assert!((w[0].valid_until - w[1].valid_from).abs() < 1e-9);
            let (p0, v0) = w[0].state_at(w[0].valid_until);
            let (p1, v1) = w[1].state_at(w[1].valid_from);
            assert!((p0 - p1).abs() < 1e-7 && (v0 - v1).abs() < 1e-9);
        }
    }

    #[test]
    fn admissible_problem_stays_unconstrained() {
        let s = State::new(0.0, 0.0, 11.11);
        let e = State::new(25.0, 245.0, 9.0);
        let plan = plan_bounded(s, e, &bounds()).unwrap();
        assert_eq!(plan.quality, PlanQuality::Unconstrained);
        assert_eq!(plan.trajectory.segments.len(), 1);
    }

    #[test]
    fn overspeed_is_capped() {
        // Average speed 12.8 from 11.11: the cubic overshoots 13 m/s.
        let s = State::new(0.0, 0.0, 11.11);
        let e = State::new(245.0 / 12.8, 245.0, 12.8);
        let b = bounds();
        let plan = plan_bounded(s, e, &b).unwrap();
        assert_eq!(plan.quality, PlanQuality::Pieced);
        assert!(plan.trajectory.check(&b).ok());
        assert_meets(&plan.trajectory, s, e);
        assert!(plan.trajectory.max_speed() <= 13.0 + 1e-9);
    }

    #[test]
    fn underspeed_is_capped() {
        // Long wait: the cubic dips below v_min.
        let s = State::new(0.0, 0.0, 11.11);
        let e = State::new(150.0, 245.0, 3.0);
        let b = bounds();
        let unconstrained = crate::ocp::solve_boundary(0.0, 0.0, 11.11, 150.0, 245.0, 3.0).unwrap();
        assert!(!check_plan(&unconstrained, &b).speed_ok());
        let plan = plan_bounded(s, e, &b).unwrap();
        assert_eq!(plan.quality, PlanQuality::Pieced);
        assert!(plan.trajectory.check(&b).ok());
        assert_meets(&plan.trajectory, s, e);
    }

    #[test]
    fn control_clipped_at_start() {
        let s = State::new(0.0, 0.0, 5.0);
        let e = State::new(5.0, 50.0, 12.0);
        let b = bounds();
        let plan = plan_bounded(s, e, &b).unwrap();
        assert_eq!(plan.quality, PlanQuality::Pieced);
        assert!(plan.trajectory.check(&b).ok(), "{:?}", plan.trajectory.check(&b));
        assert_meets(&plan.trajectory, s, e);
        assert!((plan.trajectory.at(0.0).2 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn impossible_problem_flagged() {
        // 245 m in 10 s needs 24.5 m/s on average.
        let s = State::new(0.0, 0.0, 11.11);
        let e = State::new(10.0, 245.0, 13.0);
        let plan = plan_bounded(s, e, &bounds()).unwrap();
        assert_eq!(plan.quality, PlanQuality::Infeasible);
        assert_meets(&plan.trajectory, s, e);
    }

    #[test]
    fn pieced_plan_costs_at_least_unconstrained() {
        let s = State::new(0.0, 0.0, 11.11);
        let e = State::new(245.0 / 12.8, 245.0, 12.8);
        let plan = plan_bounded(s, e, &bounds()).unwrap();
        let free = crate::ocp::solve_boundary(s.t, s.p, s.v, e.t, e.p, e.v).unwrap();
        assert!(plan.trajectory.cost() >= free.cost());
    }

    #[test]
    fn time_optimal_reaches_target() {
        let b = bounds();
        let traj = time_optimal(State::new(0.0, 0.0, 11.11), 245.0, &b);
        let (p, v, _) = traj.at(traj.end());
        assert!((p - 245.0).abs() < 1e-9 && (v - 13.0).abs() < 1e-12);
        assert!(traj.check(&b).ok());
        // Short stretch: never reaches v_max.
        let traj = time_optimal(State::new(0.0, 0.0, 2.0), 10.0, &b);
        let (p, v, _) = traj.at(traj.end());
        assert!((p - 10.0).abs() < 1e-9 && v < 13.0);
    }

    #[test]
    fn time_optimal_brakes_to_cap() {
        let b = Bounds { v_max: 9.0, ..bounds() };
        let traj = time_optimal(State::new(0.0, 0.0, 12.0), 245.0, &b);
        let (p, v, u) = traj.at(0.5);
        assert!((u + 3.0).abs() < 1e-12 && (v - 9.0).abs() > 1e-3 && p > 0.0);
        let (p, v, _) = traj.at(traj.end());
        assert!((p - 245.0).abs() < 1e-9 && (v - 9.0).abs() < 1e-12);
        // Too short to shed the excess: brakes throughout.
        let traj = time_optimal(State::new(0.0, 0.0, 12.0), 5.0, &b);
        let (p, v, _) = traj.at(traj.end());
        assert!((p - 5.0).abs() < 1e-9 && v > 9.0);
    }
}
