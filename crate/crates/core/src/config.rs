//! Corridor geometry, kinematic bounds and arrival model.

use serde::{Deserialize, Serialize};

use crate::types::SubsetLabel;
use crate::{Error, Result, Scalar};

/// Geometry and limits shared by both intersections. All units SI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorConfig<S> {
    /// Control-zone entry to merging-zone entry, `L` (m).
    pub control_zone_length: S,
    /// Side of the square merging zone, `S` (m).
    pub merging_zone_side: S,
    /// Connecting road travelled by east-to-west vehicles (m).
    pub connecting_east_west: S,
    /// Connecting road travelled by west-to-east vehicles (m).
    pub connecting_west_east: S,
    /// Minimum safe following distance `δ` (m), centre to centre.
    pub safe_distance: S,
    pub v_min: S,
    pub v_max: S,
    pub u_min: S,
    pub u_max: S,
    /// Speed below which a vehicle approaching the downstream intersection
    /// counts as congested (m/s).
    pub v_min_desired: S,
    /// Speed of every vehicle entering the corridor (m/s).
    pub v_entry: S,
    /// Total corridor arrival rate (veh/h), split evenly over the six
    /// external approaches.
    pub arrival_rate: S,
    /// Control-cost weight `K_i`.
    #[serde(default = "one", bound(deserialize = "S: Scalar + Deserialize<'de>"))]
    pub control_weight: S,
}

fn one<S: Scalar>() -> S {
    S::one()
}

impl<S: Scalar> CorridorConfig<S> {
    /// The two-intersection downtown scenario: L=245 m, S=35 m,
    /// D=160/145 m, δ=10 m, 450 veh/h entering at 11.11 m/s.
    pub fn reference() -> Self {
        Self {
            control_zone_length: S::lit(245.0),
            merging_zone_side: S::lit(35.0),
            connecting_east_west: S::lit(160.0),
            connecting_west_east: S::lit(145.0),
            safe_distance: S::lit(10.0),
            v_min: S::lit(0.5),
            v_max: S::lit(13.0),
            u_min: S::lit(-3.0),
            u_max: S::lit(3.0),
            v_min_desired: S::lit(7.0),
            v_entry: S::lit(11.11),
            arrival_rate: S::lit(450.0),
            control_weight: S::one(),
        }
    }

    /// Checks every invariant and reports the first one violated.
    pub fn validate(&self) -> Result<()> {
        let zero = S::zero();
        let finite = [
            ("control_zone_length", self.control_zone_length),
            ("merging_zone_side", self.merging_zone_side),
            ("connecting_east_west", self.connecting_east_west),
            ("connecting_west_east", self.connecting_west_east),
            ("safe_distance", self.safe_distance),
            ("v_min", self.v_min),
            ("v_max", self.v_max),
            ("u_min", self.u_min),
            ("u_max", self.u_max),
            ("v_min_desired", self.v_min_desired),
            ("v_entry", self.v_entry),
            ("arrival_rate", self.arrival_rate),
            ("control_weight", self.control_weight),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        let checks = [
            (self.merging_zone_side > zero, "merging_zone_side > 0"),
            (self.control_zone_length > self.merging_zone_side, "control_zone_length > merging_zone_side"),
            (self.connecting_east_west > zero, "connecting_east_west > 0"),
            (self.connecting_west_east > zero, "connecting_west_east > 0"),
            (self.safe_distance > zero, "safe_distance > 0"),
            (self.v_min >= zero, "v_min >= 0"),
            (self.v_min < self.v_min_desired, "v_min < v_min_desired"),
            (self.v_min_desired < self.v_max, "v_min_desired < v_max"),
            (self.u_min < zero, "u_min < 0"),
            (self.u_max > zero, "u_max > 0"),
            (self.v_entry >= self.v_min && self.v_entry <= self.v_max, "v_min <= v_entry <= v_max"),
            (self.arrival_rate >= zero, "arrival_rate >= 0"),
            (self.control_weight > zero, "control_weight > 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, rule)) => Err(Error::Config(format!("violates {rule}"))),
            None => Ok(()),
        }
    }

    /// Distance from control-zone entry to merging-zone exit.
    pub fn exit_position(&self) -> S {
        self.control_zone_length + self.merging_zone_side
    }

    pub fn cast<T: Scalar>(&self) -> CorridorConfig<T> {
        let c = |x: S| T::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(T::nan);
        CorridorConfig {
            control_zone_length: c(self.control_zone_length),
            merging_zone_side: c(self.merging_zone_side),
            connecting_east_west: c(self.connecting_east_west),
            connecting_west_east: c(self.connecting_west_east),
            safe_distance: c(self.safe_distance),
            v_min: c(self.v_min),
            v_max: c(self.v_max),
            u_min: c(self.u_min),
            u_max: c(self.u_max),
            v_min_desired: c(self.v_min_desired),
            v_entry: c(self.v_entry),
            arrival_rate: c(self.arrival_rate),
            control_weight: c(self.control_weight),
        }
    }
}

/// One-to-one mapping from subset kind to the integer label `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelScheme {
    #[serde(rename = "R")]
    pub r: u8,
    #[serde(rename = "L")]
    pub l: u8,
    #[serde(rename = "C")]
    pub c: u8,
    #[serde(rename = "O")]
    pub o: u8,
}

impl Default for LabelScheme {
    fn default() -> Self {
        Self { r: 1, l: 2, c: 3, o: 4 }
    }
}

impl LabelScheme {
    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; 4];
        for j in [self.r, self.l, self.c, self.o] {
            if !(1..=4).contains(&j) || std::mem::replace(&mut seen[j as usize - 1], true) {
                return Err(Error::Config("subset labels must be a bijection onto {1,2,3,4}".into()));
            }
        }
        Ok(())
    }

    pub fn label(&self, kind: SubsetLabel) -> u8 {
        match kind {
            SubsetLabel::R => self.r,
            SubsetLabel::L => self.l,
            SubsetLabel::C => self.c,
            SubsetLabel::O => self.o,
        }
    }

    pub fn kind(&self, j: u8) -> Option<SubsetLabel> {
        SubsetLabel::ALL.into_iter().find(|&k| self.label(k) == j)
    }
}
