//! Closed-form minimum-energy trajectories for the double integrator.
//!
//! With no active constraints the optimal control is affine in time,
//! `u*(t) = a·t + b`, so speed is quadratic and position cubic. The four
//! integration constants follow from the state at the current time and the
//! terminal state; the 4×4 system has Hermite structure and is eliminated in
//! closed form.
//!
//! Plans store their constants relative to `valid_from` to keep the cubic
//! well conditioned at large absolute times;
//! [`TrajectoryPlan::absolute_constants`] recovers the `(a, b, c, d)` of the
//! absolute-time polynomial.

use serde::{Deserialize, Serialize};

use crate::config::CorridorConfig;
use crate::{Error, Result, Scalar};

/// Horizons shorter than this make the boundary-value system numerically
/// singular and are rejected.
pub const CONDITIONING_FLOOR: f64 = 1e-3;

/// One polynomial arc: `u = a·τ + b`, `v = ½a·τ² + b·τ + c`,
/// `p = a·τ³/6 + b·τ²/2 + c·τ + d`, with `τ = t − valid_from`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan<S> {
    pub a: S,
    pub b: S,
    pub c: S,
    pub d: S,
    pub valid_from: S,
    pub valid_until: S,
    /// Terminal `(p_f, v_f)` the arc was solved for.
    pub boundary: (S, S),
}

/// Costates along an unconstrained arc: `λ_p = a`, `λ_v(t) = −(a·t + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostateRecord<S> {
    pub lambda_p: S,
    /// `(slope, intercept)` of `λ_v` in absolute time.
    pub lambda_v: (S, S),
}

impl<S: Scalar> CostateRecord<S> {
    pub fn lambda_v_at(&self, t: S) -> S {
        self.lambda_v.0 * t + self.lambda_v.1
    }
}

/// Solves the two-point boundary-value problem from `(p_now, v_now)` at
/// `t_now` to `(p_f, v_f)` at `t_f`.
pub fn solve_boundary<S: Scalar>(t_now: S, p_now: S, v_now: S, t_f: S, p_f: S, v_f: S) -> Result<TrajectoryPlan<S>> {
    let horizon = t_f - t_now;
    if !(horizon >= S::lit(CONDITIONING_FLOOR)) {
        return Err(Error::Infeasible(format!("horizon {horizon} s below conditioning floor")));
    }
    Ok(solve_unchecked(crate::planner::State::new(t_now, p_now, v_now), crate::planner::State::new(t_f, p_f, v_f)))
}

/// Hermite elimination without the conditioning check, for short junction arcs.
pub(crate) fn solve_unchecked<S: Scalar>(
    s: crate::planner::State<S>,
    e: crate::planner::State<S>,
) -> TrajectoryPlan<S> {
    let horizon = e.t - s.t;
    let dp = e.p - s.p - s.v * horizon;
    let dv = e.v - s.v;
    let h2 = horizon * horizon;
    TrajectoryPlan {
        a: (S::lit(6.0) * dv * horizon - S::lit(12.0) * dp) / (h2 * horizon),
        b: (S::lit(6.0) * dp - S::lit(2.0) * dv * horizon) / h2,
        c: s.v,
        d: s.p,
        valid_from: s.t,
        valid_until: e.t,
        boundary: (e.p, e.v),
    }
}

/// Re-solves from the current state; equivalent to a fresh [`solve_boundary`]
/// toward the old plan's terminal state.
pub fn replan<S: Scalar>(plan: &TrajectoryPlan<S>, t_now: S, state: (S, S), new_tf: S) -> Result<TrajectoryPlan<S>> {
    let (p_f, v_f) = plan.boundary;
    solve_boundary(t_now, state.0, state.1, new_tf, p_f, v_f)
}

impl<S: Scalar> TrajectoryPlan<S> {
    /// Arc with control held at `u` for `duration`.
    pub fn constant_control(t0: S, p0: S, v0: S, u: S, duration: S) -> Self {
        let mut plan = Self {
            a: S::zero(),
            b: u,
            c: v0,
            d: p0,
            valid_from: t0,
            valid_until: t0 + duration,
            boundary: (S::zero(), S::zero()),
        };
        plan.boundary = plan.state_at(plan.valid_until);
        plan
    }

    pub fn cruise(t0: S, p0: S, v: S, duration: S) -> Self {
        Self::constant_control(t0, p0, v, S::zero(), duration)
    }

    pub fn duration(&self) -> S {
        self.valid_until - self.valid_from
    }

    /// `(p, v, u)` at `t` without the validity check.
    pub fn at(&self, t: S) -> (S, S, S) {
        let tau = t - self.valid_from;
        let six = S::lit(6.0);
        let half = S::half();
        let u = self.a * tau + self.b;
        let v = half * self.a * tau * tau + self.b * tau + self.c;
        let p = ((self.a / six * tau + half * self.b) * tau + self.c) * tau + self.d;
        (p, v, u)
    }

    pub fn state_at(&self, t: S) -> (S, S) {
        let (p, v, _) = self.at(t);
        (p, v)
    }

    pub fn evaluate(&self, t: S) -> Result<(S, S, S)> {
        if t < self.valid_from || t > self.valid_until {
            return Err(out_of_range(t, self.valid_from, self.valid_until));
        }
        Ok(self.at(t))
    }

    /// Constants of `u = a·t + b`, `v = ½a·t² + b·t + c`,
    /// `p = a·t³/6 + b·t²/2 + c·t + d` in absolute time.
    pub fn absolute_constants(&self) -> (S, S, S, S) {
        let t0 = self.valid_from;
        let half = S::half();
        let a = self.a;
        let b = self.b - a * t0;
        let c = self.c - self.b * t0 + half * a * t0 * t0;
        let d = self.d - self.c * t0 + half * self.b * t0 * t0 - a * t0 * t0 * t0 / S::lit(6.0);
        (a, b, c, d)
    }

    pub fn costates(&self) -> CostateRecord<S> {
        let (a, b, _, _) = self.absolute_constants();
        CostateRecord { lambda_p: a, lambda_v: (-a, -b) }
    }

    /// `½·∫u² dt` over the whole arc.
    pub fn cost(&self) -> S {
        self.cost_between(self.valid_from, self.valid_until)
    }

    /// `½·∫u² dt` over `[from, to]` (clipped to the arc).
    pub fn cost_between(&self, from: S, to: S) -> S {
        let lo = from.max(self.valid_from) - self.valid_from;
        let hi = to.min(self.valid_until) - self.valid_from;
        if hi <= lo {
            return S::zero();
        }
        let prim = |x: S| self.a * self.a * x * x * x / S::lit(3.0) + self.a * self.b * x * x + self.b * self.b * x;
        S::half() * (prim(hi) - prim(lo))
    }

    /// Extremes of `u` and `v` over the arc as `(u_lo, u_hi, v_lo, v_hi)`,
    /// with the times at which the speed extremes occur.
    fn extremes(&self) -> Extremes<S> {
        let (t0, t1) = (self.valid_from, self.valid_until);
        let (_, v0, u0) = self.at(t0);
        let (_, v1, u1) = self.at(t1);
        let mut e = Extremes {
            u_lo: (u0.min(u1), if u0 <= u1 { t0 } else { t1 }),
            u_hi: (u0.max(u1), if u0 >= u1 { t0 } else { t1 }),
            v_lo: (v0.min(v1), if v0 <= v1 { t0 } else { t1 }),
            v_hi: (v0.max(v1), if v0 >= v1 { t0 } else { t1 }),
        };
        if self.a != S::zero() {
            let tau = -self.b / self.a;
            if tau > S::zero() && tau < self.duration() {
                let t = t0 + tau;
                let v = self.at(t).1;
                if v < e.v_lo.0 {
                    e.v_lo = (v, t);
                }
                if v > e.v_hi.0 {
                    e.v_hi = (v, t);
                }
            }
        }
        e
    }
}

struct Extremes<S> {
    u_lo: (S, S),
    u_hi: (S, S),
    v_lo: (S, S),
    v_hi: (S, S),
}

fn out_of_range<S: Scalar>(t: S, from: S, until: S) -> Error {
    let f = |x: S| x.to_f64().unwrap_or(f64::NAN);
    Error::OutOfRange { t: f(t), from: f(from), until: f(until) }
}

/// Admissible control and speed ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds<S> {
    pub u_min: S,
    pub u_max: S,
    pub v_min: S,
    pub v_max: S,
}

impl<S: Scalar> Bounds<S> {
    pub fn from_config(cfg: &CorridorConfig<S>) -> Self {
        Self { u_min: cfg.u_min, u_max: cfg.u_max, v_min: cfg.v_min, v_max: cfg.v_max }
    }

    /// Slack allowed when comparing against a bound.
    pub fn tolerance() -> S {
        S::lit(1e-7).max(S::epsilon() * S::lit(1e3))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundKind {
    UMax,
    UMin,
    VMax,
    VMin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundViolation<S> {
    pub kind: BoundKind,
    /// Where the violation is worst.
    pub time: S,
    pub value: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport<S> {
    pub violations: Vec<BoundViolation<S>>,
}

impl<S: Scalar> BoundsReport<S> {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn control_ok(&self) -> bool {
        !self.violations.iter().any(|v| matches!(v.kind, BoundKind::UMax | BoundKind::UMin))
    }

    pub fn speed_ok(&self) -> bool {
        !self.violations.iter().any(|v| matches!(v.kind, BoundKind::VMax | BoundKind::VMin))
    }

    pub fn has(&self, kind: BoundKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

/// Exact bound check: `u` is affine so its extremes sit at the endpoints;
/// `v` is quadratic with at most one interior vertex at `τ = −b/a`.
pub fn check_bounds<S: Scalar>(plan: &TrajectoryPlan<S>, cfg: &CorridorConfig<S>) -> BoundsReport<S> {
    check_plan(plan, &Bounds::from_config(cfg))
}

pub fn check_plan<S: Scalar>(plan: &TrajectoryPlan<S>, bounds: &Bounds<S>) -> BoundsReport<S> {
    let tol = Bounds::<S>::tolerance();
    let e = plan.extremes();
    let mut violations = Vec::new();
    let mut push = |kind, (value, time): (S, S), bad: bool| {
        if bad {
            violations.push(BoundViolation { kind, time, value });
        }
    };
    push(BoundKind::UMax, e.u_hi, e.u_hi.0 > bounds.u_max + tol);
    push(BoundKind::UMin, e.u_lo, e.u_lo.0 < bounds.u_min - tol);
    push(BoundKind::VMax, e.v_hi, e.v_hi.0 > bounds.v_max + tol);
    push(BoundKind::VMin, e.v_lo, e.v_lo.0 < bounds.v_min - tol);
    BoundsReport { violations }
}

/// Piecewise-polynomial trajectory made of contiguous arcs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<S> {
    pub segments: Vec<TrajectoryPlan<S>>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn single(plan: TrajectoryPlan<S>) -> Self {
        Self { segments: vec![plan] }
    }

    pub fn start(&self) -> S {
        self.segments[0].valid_from
    }

    pub fn end(&self) -> S {
        self.segments[self.segments.len() - 1].valid_until
    }

    pub fn push(&mut self, plan: TrajectoryPlan<S>) {
        self.segments.push(plan);
    }

    fn segment(&self, t: S) -> &TrajectoryPlan<S> {
        let idx = self.segments.partition_point(|s| s.valid_until < t);
        &self.segments[idx.min(self.segments.len() - 1)]
    }

    /// `(p, v, u)` at `t`, clamped to the nearest arc.
    pub fn at(&self, t: S) -> (S, S, S) {
        self.segment(t).at(t)
    }

    pub fn evaluate(&self, t: S) -> Result<(S, S, S)> {
        if t < self.start() || t > self.end() {
            return Err(out_of_range(t, self.start(), self.end()));
        }
        Ok(self.at(t))
    }

    pub fn cost(&self) -> S {
        self.segments.iter().fold(S::zero(), |acc, s| acc + s.cost())
    }

    pub fn cost_between(&self, from: S, to: S) -> S {
        self.segments.iter().fold(S::zero(), |acc, s| acc + s.cost_between(from, to))
    }

    pub fn check(&self, bounds: &Bounds<S>) -> BoundsReport<S> {
        let violations = self.segments.iter().flat_map(|s| check_plan(s, bounds).violations).collect();
        BoundsReport { violations }
    }

    pub fn min_speed(&self) -> S {
        self.segments.iter().map(|s| s.extremes().v_lo.0).fold(S::infinity(), S::min)
    }

    pub fn max_speed(&self) -> S {
        self.segments.iter().map(|s| s.extremes().v_hi.0).fold(S::neg_infinity(), S::max)
    }

    /// Drops everything before `t`, splitting the arc that contains it.
    pub fn truncate_before(&mut self, t: S) {
        let idx = self.segments.partition_point(|s| s.valid_until <= t);
        self.segments.drain(..idx.min(self.segments.len() - 1));
        let first = &mut self.segments[0];
        if t > first.valid_from {
            let (p, v, u) = first.at(t);
            *first = TrajectoryPlan {
                a: first.a,
                b: u,
                c: v,
                d: p,
                valid_from: t,
                valid_until: first.valid_until,
                boundary: first.boundary,
            };
        }
    }

    /// Drops everything after `t`, shortening the arc that contains it.
    /// The shortened arc keeps its original `boundary`.
    pub fn truncate_after(&mut self, t: S) {
        self.segments.retain(|s| s.valid_from < t);
        if let Some(last) = self.segments.last_mut() {
            if last.valid_until > t {
                last.valid_until = t;
            }
        }
    }

    /// Lowest speed over `[from, to]` and the time it occurs.
    pub fn min_speed_between(&self, from: S, to: S) -> Option<(S, S)> {
        let mut best: Option<(S, S)> = None;
        for seg in &self.segments {
            let lo = from.max(seg.valid_from);
            let hi = to.min(seg.valid_until);
            if hi < lo {
                continue;
            }
            let mut candidates = vec![lo, hi];
            if seg.a != S::zero() {
                let vertex = seg.valid_from - seg.b / seg.a;
                if vertex > lo && vertex < hi {
                    candidates.push(vertex);
                }
            }
            for t in candidates {
                let v = seg.at(t).1;
                if best.is_none_or(|(_, bv)| v < bv) {
                    best = Some((t, v));
                }
            }
        }
        best
    }

    /// First time in `[from, end]` at which the speed is strictly below
    /// `threshold` while having been at or above it just before.
    pub fn next_drop_below(&self, from: S, threshold: S) -> Option<S> {
        let mut prev_above: Option<bool> = None;
        for seg in &self.segments {
            if seg.valid_until < from {
                continue;
            }
            let lo = from.max(seg.valid_from);
            let v_lo = seg.at(lo).1;
            let above = v_lo >= threshold;
            if prev_above == Some(true) && !above {
                return Some(lo);
            }
            if above {
                if let Some(t) = first_crossing_down(seg, lo, threshold) {
                    return Some(t);
                }
            }
            prev_above = Some(seg.at(seg.valid_until).1 >= threshold);
        }
        None
    }

    /// First time in `[from, end]` at which the speed is at or above `threshold`.
    pub fn next_at_or_above(&self, from: S, threshold: S) -> Option<S> {
        for seg in &self.segments {
            if seg.valid_until < from {
                continue;
            }
            let lo = from.max(seg.valid_from);
            if seg.at(lo).1 >= threshold {
                return Some(lo);
            }
            let roots = speed_roots(seg, threshold);
            if let Some(t) = roots.into_iter().find(|&t| t > lo && t <= seg.valid_until) {
                return Some(t);
            }
        }
        None
    }
}

/// Times inside the arc where `v = threshold`, ascending.
fn speed_roots<S: Scalar>(seg: &TrajectoryPlan<S>, threshold: S) -> Vec<S> {
    let half = S::half();
    let (qa, qb, qc) = (half * seg.a, seg.b, seg.c - threshold);
    let mut taus = Vec::new();
    if qa == S::zero() {
        if qb != S::zero() {
            taus.push(-qc / qb);
        }
    } else {
        let disc = qb * qb - S::lit(4.0) * qa * qc;
        if disc >= S::zero() {
            let sq = disc.sqrt();
            // Numerically stable pair of roots.
            let q = -half * (qb + qb.signum() * sq);
            if q != S::zero() {
                taus.push(q / qa);
                taus.push(qc / q);
            } else {
                taus.push(S::zero());
            }
        }
    }
    let mut out: Vec<S> = taus
        .into_iter()
        .filter(|&tau| tau >= S::zero() && tau <= seg.duration())
        .map(|tau| seg.valid_from + tau)
        .collect();
    out.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    out
}

fn first_crossing_down<S: Scalar>(seg: &TrajectoryPlan<S>, from: S, threshold: S) -> Option<S> {
    speed_roots(seg, threshold).into_iter().find(|&t| {
        if t < from {
            return false;
        }
        // Speed must actually go below after the root.
        let (_, _, u) = seg.at(t);
        u < S::zero() || (u == S::zero() && seg.a < S::zero())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> CorridorConfig<f64> {
        CorridorConfig::reference()
    }

    /// Gaussian elimination on the absolute-time 4×4 system; independent of
    /// the closed-form elimination.
    #[allow(clippy::needless_range_loop)]
    fn solve_dense(t: f64, tf: f64, q: [f64; 4]) -> [f64; 4] {
        let mut m = [
            [t.powi(3) / 6.0, t * t / 2.0, t, 1.0, q[0]],
            [t * t / 2.0, t, 1.0, 0.0, q[1]],
            [tf.powi(3) / 6.0, tf * tf / 2.0, tf, 1.0, q[2]],
            [tf * tf / 2.0, tf, 1.0, 0.0, q[3]],
        ];
        for col in 0..4 {
            let pivot = (col..4).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()).unwrap();
            m.swap(col, pivot);
            for row in 0..4 {
                if row != col {
                    let f = m[row][col] / m[col][col];
                    for k in col..5 {
                        m[row][k] -= f * m[col][k];
                    }
                }
            }
        }
        [m[0][4] / m[0][0], m[1][4] / m[1][1], m[2][4] / m[2][2], m[3][4] / m[3][3]]
    }

    #[test]
    fn cruise_is_optimal_when_admissible() {
        let plan = solve_boundary(0.0f64, 0.0, 10.0, 28.0, 280.0, 10.0).unwrap();
        let (a, b, c, d) = plan.absolute_constants();
        assert!(a.abs() < 1e-12 && b.abs() < 1e-12);
        assert!((c - 10.0).abs() < 1e-12 && d.abs() < 1e-12);
        assert!(plan.cost().abs() < 1e-20);
    }

    #[test]
    fn matches_dense_linear_system() {
        let plan = solve_boundary(2.0f64, 5.0, 11.11, 21.0, 245.0, 9.0).unwrap();
        let abs = plan.absolute_constants();
        let dense = solve_dense(2.0, 21.0, [5.0, 11.11, 245.0, 9.0]);
        for (x, y) in [abs.0, abs.1, abs.2, abs.3].iter().zip(dense) {
            assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn boundary_reproduced() {
        let plan = solve_boundary(100.0f64, 3.0, 11.11, 121.5, 245.0, 12.0).unwrap();
        let (p, v, _) = plan.evaluate(100.0).unwrap();
        assert!((p - 3.0).abs() < 1e-9 && (v - 11.11).abs() < 1e-9);
        let (p, v, _) = plan.evaluate(121.5).unwrap();
        assert!((p - 245.0).abs() < 1e-6 && (v - 12.0).abs() < 1e-6);
        assert!(plan.evaluate(99.0).is_err());
        assert!(plan.evaluate(121.6).is_err());
    }

    #[test]
    fn time_shift_invariance() {
        let a = solve_boundary(0.0f64, 0.0, 11.11, 22.0, 245.0, 10.0).unwrap();
        let b = solve_boundary(10.0f64, 0.0, 11.11, 32.0, 245.0, 10.0).unwrap();
        for k in 0..=22 {
            let t = k as f64;
            assert!((a.at(t).2 - b.at(t + 10.0).2).abs() < 1e-12);
        }
    }

    #[test]
    fn conditioning_floor() {
        assert!(matches!(solve_boundary(5.0f64, 0.0, 10.0, 5.0005, 0.005, 10.0), Err(Error::Infeasible(_))));
        assert!(solve_boundary(5.0f64, 0.0, 10.0, 5.0, 0.0, 10.0).is_err());
    }

    #[test]
    fn replan_on_plan_is_identity() {
        let plan = solve_boundary(0.0f64, 0.0, 11.11, 24.0, 245.0, 9.5).unwrap();
        let t = 7.3;
        let (p, v, _) = plan.at(t);
        let again = replan(&plan, t, (p, v), 24.0).unwrap();
        let x = plan.absolute_constants();
        let y = again.absolute_constants();
        assert!((x.0 - y.0).abs() < 1e-9);
        assert!((x.1 - y.1).abs() < 1e-9);
        assert!((x.2 - y.2).abs() < 1e-8);
        assert!((x.3 - y.3).abs() < 1e-7);
    }

    #[test]
    fn earlier_deadline_costs_more() {
        let plan = solve_boundary(0.0f64, 0.0, 11.11, 20.0, 245.0, 12.0).unwrap();
        let t = 5.0;
        let (p, v, _) = plan.at(t);
        let old = plan.cost_between(t, 20.0);
        let new = replan(&plan, t, (p, v), 19.0).unwrap();
        assert!(new.cost() > old, "{} <= {}", new.cost(), old);
    }

    #[test]
    fn replan_near_deadline() {
        let plan = solve_boundary(0.0f64, 0.0, 11.11, 24.0, 245.0, 10.0).unwrap();
        let eps = 1e-4;
        let (p, v, _) = plan.at(24.0 - eps);
        assert!(replan(&plan, 24.0 - eps, (p, v), 24.0).is_err());
        let eps = 1e-2;
        let (p, v, _) = plan.at(24.0 - eps);
        let r = replan(&plan, 24.0 - eps, (p + 1e-9, v), 24.0).unwrap();
        assert!(r.a.abs() < 1.0 && r.b.abs() < 1.0);
    }

    #[test]
    fn cruise_within_bounds() {
        let plan = TrajectoryPlan::cruise(0.0f64, 0.0, 10.0, 20.0);
        assert!(check_bounds(&plan, &reference()).ok());
    }

    #[test]
    fn endpoint_control_violation() {
        // Needs a strong initial push: u(valid_from) above u_max.
        let plan = solve_boundary(0.0f64, 0.0, 5.0, 10.0, 130.0, 12.0).unwrap();
        let (_, _, u0) = plan.at(0.0);
        assert!(u0 > 3.0);
        let report = check_bounds(&plan, &reference());
        let v = report.violations.iter().find(|v| v.kind == BoundKind::UMax).unwrap();
        assert_eq!(v.time, 0.0);
        assert_eq!(v.value, u0);
    }

    #[test]
    fn interior_vertex_matches_dense_sampling() {
        let plan = solve_boundary(0.0f64, 0.0, 11.11, 20.0, 260.0, 11.0).unwrap();
        let report = check_bounds(&plan, &reference());
        let v = report.violations.iter().find(|v| v.kind == BoundKind::VMax).unwrap();
        let (a, b, _, _) = plan.absolute_constants();
        assert!((v.time - (-b / a)).abs() < 1e-9);
        // Dense sampling oracle.
        let (mut best_t, mut best_v) = (0.0, f64::MIN);
        let n = (20.0f64 / 1e-4) as usize;
        for k in 0..=n {
            let t = k as f64 * 1e-4;
            let s = plan.at(t).1;
            if s > best_v {
                best_v = s;
                best_t = t;
            }
        }
        assert!((best_t - v.time).abs() < 1e-4);
        assert!((best_v - v.value).abs() < 1e-8);
    }

    #[test]
    fn costates_follow_control() {
        let plan = solve_boundary(3.0f64, 0.0, 11.11, 25.0, 245.0, 9.0).unwrap();
        let co = plan.costates();
        for k in 0..=22 {
            let t = 3.0 + k as f64;
            assert!((co.lambda_v_at(t) + plan.at(t).2).abs() < 1e-9);
        }
        assert_eq!(co.lambda_p, plan.a);
    }

    #[test]
    fn drop_and_recovery_times() {
        // Speed dips from 11.11 below 7 and recovers.
        let plan = solve_boundary(0.0f64, 0.0, 11.11, 60.0, 245.0, 9.0).unwrap();
        let traj = Trajectory::single(plan);
        let down = traj.next_drop_below(0.0, 7.0).unwrap();
        assert!((traj.at(down).1 - 7.0).abs() < 1e-9);
        assert!(traj.at(down + 0.1).1 < 7.0);
        let up = traj.next_at_or_above(down + 0.1, 7.0).unwrap();
        assert!((traj.at(up).1 - 7.0).abs() < 1e-9);
        assert!(traj.next_drop_below(up + 0.1, 7.0).is_none());
    }

    #[test]
    fn truncate_after_and_min_speed() {
        let plan = solve_boundary(0.0f64, 0.0, 11.11, 60.0, 245.0, 9.0).unwrap();
        let mut traj = Trajectory::single(plan);
        traj.push(TrajectoryPlan::cruise(60.0, 245.0, 9.0, 5.0));
        let (t, v) = traj.min_speed_between(0.0, 65.0).unwrap();
        let (a, b, _, _) = plan.absolute_constants();
        assert!((t - (-b / a)).abs() < 1e-9);
        assert!(v < 7.0);
        traj.truncate_after(30.0);
        assert_eq!(traj.segments.len(), 1);
        assert_eq!(traj.end(), 30.0);
        traj.truncate_after(0.0);
        assert!(traj.segments.is_empty());
    }

    #[test]
    fn truncate_keeps_state() {
        let mut traj = Trajectory::single(solve_boundary(0.0f64, 0.0, 11.11, 20.0, 245.0, 12.0).unwrap());
        traj.push(TrajectoryPlan::cruise(20.0, 245.0, 12.0, 3.0));
        let before = traj.at(21.0);
        let mid = traj.at(4.0);
        traj.truncate_before(4.0);
        assert_eq!(traj.start(), 4.0);
        let after = traj.at(4.0);
        assert!((mid.0 - after.0).abs() < 1e-12 && (mid.1 - after.1).abs() < 1e-12);
        assert_eq!(traj.at(21.0), before);
    }

    proptest! {
        #[test]
        fn finite_differences(p0 in 0.0..50.0f64, v0 in 0.5..13.0f64, t0 in 0.0..3000.0f64,
                              horizon in 5.0..40.0f64, pf in 100.0..400.0f64, vf in 0.5..13.0f64,
                              frac in 0.01..0.99f64) {
            let plan = solve_boundary(t0, p0, v0, t0 + horizon, pf, vf).unwrap();
            let t = t0 + frac * horizon;
            let h = 1e-3;
            let (pp, vp, _) = plan.at(t + h);
            let (pm, vm, _) = plan.at(t - h);
            let (_, v, u) = plan.at(t);
            // Central differences are exact on the quadratic speed; the cubic
            // position leaves a·h²/6.
            prop_assert!(((pp - pm) / (2.0 * h) - v).abs() < 1e-6 * (1.0 + plan.a.abs()));
            prop_assert!(((vp - vm) / (2.0 * h) - u).abs() < 1e-6);
        }

        #[test]
        fn resolve_along_plan_is_stable(v0 in 0.5..13.0f64, vf in 0.5..13.0f64,
                                        horizon in 5.0..40.0f64, frac in 0.0..0.9f64) {
            let plan = solve_boundary(0.0f64, 0.0, v0, horizon, 245.0, vf).unwrap();
            let t = frac * horizon;
            let (p, v, _) = plan.at(t);
            let again = solve_boundary(t, p, v, horizon, 245.0, vf).unwrap();
            // Normalise by the magnitudes the constants multiply.
            let x = plan.absolute_constants();
            let y = again.absolute_constants();
            prop_assert!((x.0 - y.0).abs() * horizon.powi(3) < 1e-7 * 245.0);
            prop_assert!((x.1 - y.1).abs() * horizon.powi(2) < 1e-7 * 245.0);
            prop_assert!((x.2 - y.2).abs() * horizon < 1e-7 * 245.0);
            prop_assert!((x.3 - y.3).abs() < 1e-7 * 245.0);
        }
    }
}
