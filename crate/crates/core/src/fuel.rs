//! Polynomial fuel-consumption surrogate.
//!
//! Default coefficients are the speed/acceleration polynomial of
//! Kamal, Mukai, Murata and Kawabe, "Model predictive control of vehicles on
//! urban roads for improved fuel economy", IEEE Trans. Control Systems
//! Technology 21(3), 2013:
//!
//! ```text
//! f = w0 + w1·v + w2·v² + w3·v³ + u·(r0 + r1·v + r2·v²)   (u > 0)
//! f = w0 + w1·v + w2·v² + w3·v³                           (u ≤ 0)
//! ```
//!
//! in mL/s with `v` in m/s and `u` in m/s². They are a stand-in; any
//! polynomial set can be supplied through the scenario file.

use serde::{Deserialize, Serialize};

use crate::ocp::{Trajectory, TrajectoryPlan};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuelModel<S> {
    /// `[w0, w1, w2, w3]`: rate at constant speed.
    pub cruise: [S; 4],
    /// `[r0, r1, r2]`: extra rate per unit of positive acceleration.
    pub accel: [S; 3],
}

impl<S: Scalar> Default for FuelModel<S> {
    fn default() -> Self {
        Self {
            cruise: [S::lit(0.1569), S::lit(2.450e-2), S::lit(-7.415e-4), S::lit(5.975e-5)],
            accel: [S::lit(0.07224), S::lit(9.681e-2), S::lit(1.075e-3)],
        }
    }
}

impl<S: Scalar> FuelModel<S> {
    /// Instantaneous rate (mL/s), floored at zero.
    pub fn rate(&self, v: S, u: S) -> S {
        let [w0, w1, w2, w3] = self.cruise;
        let [r0, r1, r2] = self.accel;
        let mut f = w0 + v * (w1 + v * (w2 + v * w3));
        if u > S::zero() {
            f += u * (r0 + v * (r1 + v * r2));
        }
        f.max(S::zero())
    }

    /// Fuel (mL) burnt along `plan` between `from` and `to`.
    ///
    /// The rate is a polynomial of degree ≤ 6 in time on each side of the
    /// sign change of `u`, so four-point Gauss–Legendre per piece is exact.
    pub fn integrate_plan(&self, plan: &TrajectoryPlan<S>, from: S, to: S) -> S {
        let lo = from.max(plan.valid_from);
        let hi = to.min(plan.valid_until);
        if hi <= lo {
            return S::zero();
        }
        let mut cuts = vec![lo];
        if plan.a != S::zero() {
            let t_zero = plan.valid_from - plan.b / plan.a;
            if t_zero > lo && t_zero < hi {
                cuts.push(t_zero);
            }
        }
        cuts.push(hi);
        cuts.windows(2)
            .map(|w| {
                gauss_legendre(w[0], w[1], |t| {
                    let (_, v, u) = plan.at(t);
                    self.rate(v.max(S::zero()), u)
                })
            })
            .fold(S::zero(), |acc, x| acc + x)
    }

    pub fn integrate(&self, traj: &Trajectory<S>, from: S, to: S) -> S {
        traj.segments.iter().map(|seg| self.integrate_plan(seg, from, to)).fold(S::zero(), |acc, x| acc + x)
    }
}

/// Free-function form of [`FuelModel::rate`]. `v ≥ 0`.
pub fn fuel_rate<S: Scalar>(v: S, u: S, model: &FuelModel<S>) -> S {
    model.rate(v, u)
}

fn gauss_legendre<S: Scalar>(lo: S, hi: S, f: impl Fn(S) -> S) -> S {
    const NODES: [f64; 4] =
        [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
    const WEIGHTS: [f64; 4] =
        [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];
    let mid = S::half() * (lo + hi);
    let half = S::half() * (hi - lo);
    NODES.iter().zip(WEIGHTS).map(|(&x, w)| S::lit(w) * f(mid + half * S::lit(x))).fold(S::zero(), |acc, y| acc + y)
        * half
}
