//! Signal-free coordination of connected automated vehicles through two
//! adjacent intersections.
//!
//! Each vehicle entering a control zone receives a FIFO identity from the
//! intersection coordinator, a scheduled merging-zone exit time, and a
//! closed-form minimum-energy acceleration profile. The [`sim`] module runs
//! the two-intersection corridor event by event; [`baseline`] runs the same
//! arrival stream through fixed-cycle traffic lights for comparison.
//!
//! The numerical core ([`kinematics`], [`scheduler`] formulas, [`ocp`],
//! [`fuel`]) is generic over [`Scalar`] (`f32` or `f64`). The simulator is
//! `f64`; the aliases below name the `f64` instantiations.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod config;
pub mod error;
pub mod fuel;
pub mod io;
pub mod kinematics;
pub mod metrics;
pub mod ocp;
pub mod planner;
pub mod scalar;
pub mod scheduler;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Corridor = config::CorridorConfig<f64>;
pub type Plan = ocp::TrajectoryPlan<f64>;
pub type Trajectory = ocp::Trajectory<f64>;
pub type Vehicle = types::VehicleRecord<f64>;
pub type Coordinator = scheduler::CoordinatorState<f64>;
pub type Fuel = fuel::FuelModel<f64>;
