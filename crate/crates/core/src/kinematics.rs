use crate::Scalar;

/// Exact double-integrator update under a control held constant over `dt`.
/// Clamping to speed bounds is the caller's job.
pub fn kinematic_step<S: Scalar>(state: (S, S), u: S, dt: S) -> (S, S) {
    debug_assert!(dt > S::zero());
    let (p, v) = state;
    (p + v * dt + S::half() * u * dt * dt, v + u * dt)
}
