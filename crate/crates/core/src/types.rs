//! Domain vocabulary: intersections, routes, subset relations, vehicle
//! records and published information sets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Intersection id. `One` is the western intersection, `Two` the eastern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Intersection {
    One,
    Two,
}

impl Intersection {
    pub fn number(self) -> u8 {
        match self {
            Intersection::One => 1,
            Intersection::Two => 2,
        }
    }

    pub fn from_number(z: u8) -> Option<Self> {
        match z {
            1 => Some(Intersection::One),
            2 => Some(Intersection::Two),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self.number() as usize - 1
    }
}

impl fmt::Display for Intersection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Side of an intersection a vehicle approaches from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Approach {
    North,
    South,
    East,
    West,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Road {
    EastWest,
    NorthSouth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    Northbound,
    Southbound,
    Eastbound,
    Westbound,
}

impl Approach {
    pub fn road(self) -> Road {
        match self {
            Approach::North | Approach::South => Road::NorthSouth,
            Approach::East | Approach::West => Road::EastWest,
        }
    }

    /// Through movements only: the heading is away from the origin side.
    pub fn heading(self) -> Heading {
        match self {
            Approach::North => Heading::Southbound,
            Approach::South => Heading::Northbound,
            Approach::East => Heading::Westbound,
            Approach::West => Heading::Eastbound,
        }
    }
}

/// A through-movement route. Every route is a single lane; vehicles on the
/// east-west arterial cross both intersections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Route {
    pub origin: Approach,
    pub lane: u8,
    pub crosses_both: bool,
    /// First intersection on the route.
    pub entry: Intersection,
}

impl Route {
    pub fn new(origin: Approach, lane: u8, crosses_both: bool, entry: Intersection) -> Result<Self> {
        let route = Self { origin, lane, crosses_both, entry };
        route.validate()?;
        Ok(route)
    }

    pub fn validate(&self) -> Result<()> {
        if self.crosses_both && self.origin.road() != Road::EastWest {
            return Err(Error::Config(format!("route from {:?} cannot cross both intersections", self.origin)));
        }
        if self.crosses_both {
            let expected = match self.origin {
                Approach::West => Intersection::One,
                _ => Intersection::Two,
            };
            if self.entry != expected {
                return Err(Error::Config(format!(
                    "{:?}-origin through route must enter at intersection {expected}",
                    self.origin
                )));
            }
        }
        Ok(())
    }

    pub fn heading(&self) -> Heading {
        self.origin.heading()
    }

    /// Intersections visited, in travel order.
    pub fn intersections(&self) -> Vec<Intersection> {
        if !self.crosses_both {
            return vec![self.entry];
        }
        match self.entry {
            Intersection::One => vec![Intersection::One, Intersection::Two],
            Intersection::Two => vec![Intersection::Two, Intersection::One],
        }
    }

    /// The six external single-lane approaches of the corridor in a fixed order.
    pub fn external() -> [Route; 6] {
        use Approach::*;
        use Intersection::*;
        [
            Route { origin: West, lane: 0, crosses_both: true, entry: One },
            Route { origin: East, lane: 0, crosses_both: true, entry: Two },
            Route { origin: North, lane: 0, crosses_both: false, entry: One },
            Route { origin: South, lane: 0, crosses_both: false, entry: One },
            Route { origin: North, lane: 0, crosses_both: false, entry: Two },
            Route { origin: South, lane: 0, crosses_both: false, entry: Two },
        ]
    }

    pub fn code(&self) -> String {
        let o = match self.origin {
            Approach::North => 'N',
            Approach::South => 'S',
            Approach::East => 'E',
            Approach::West => 'W',
        };
        format!("{o}{}@{}", self.lane, self.entry)
    }
}

/// Relation of a vehicle to another in the same control zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubsetLabel {
    /// Same road and direction, different lane.
    R,
    /// Same road and lane.
    L,
    /// Different road, paths conflict inside the merging zone.
    C,
    /// Same road, opposite direction, no conflict.
    O,
}

impl SubsetLabel {
    pub const ALL: [SubsetLabel; 4] = [SubsetLabel::R, SubsetLabel::L, SubsetLabel::C, SubsetLabel::O];
}

impl fmt::Display for SubsetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SubsetLabel::R => "R",
            SubsetLabel::L => "L",
            SubsetLabel::C => "C",
            SubsetLabel::O => "O",
        };
        f.write_str(s)
    }
}

/// Static conflict table over approach pairs. With through movements only,
/// paths conflict exactly when the roads are perpendicular.
pub fn conflicts(a: Approach, b: Approach) -> bool {
    a.road() != b.road()
}

/// Relation of two routes at a common intersection.
pub fn classify_routes(ego: &Route, other: &Route) -> SubsetLabel {
    if ego.origin == other.origin {
        if ego.lane == other.lane {
            SubsetLabel::L
        } else {
            SubsetLabel::R
        }
    } else if conflicts(ego.origin, other.origin) {
        SubsetLabel::C
    } else {
        SubsetLabel::O
    }
}

/// A vehicle's identity and kinematic state at one intersection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord<S> {
    /// Corridor-wide vehicle id, in arrival order.
    pub id: u32,
    /// FIFO position `i` assigned on entry.
    pub queue_index: u32,
    /// Subset label `j`.
    pub label: u8,
    pub intersection: Intersection,
    pub route: Route,
    /// Control-zone entry time.
    pub t0: S,
    /// Position from control-zone entry.
    pub p: S,
    pub v: S,
    pub u: S,
    /// Scheduled merging-zone exit.
    pub tf: S,
    /// Scheduled merging-zone entry.
    pub tm: S,
}

/// Subset relation of `other` as seen from `ego`.
pub fn classify_subset<S: Scalar>(ego: &VehicleRecord<S>, other: &VehicleRecord<S>) -> Result<SubsetLabel> {
    if ego.intersection != other.intersection {
        return Err(Error::Classification { ego: ego.id, other: other.id });
    }
    Ok(classify_routes(&ego.route, &other.route))
}

/// Data a vehicle holds and publishes to its successor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationSet<S> {
    pub p: S,
    pub v: S,
    /// Relation to the queue predecessor.
    pub subset: SubsetLabel,
    /// Distance to the same-lane vehicle ahead, when there is one.
    pub headway: Option<S>,
    pub tf: S,
    /// Planned speed at `tf`.
    pub exit_speed: S,
    /// Congestion slack; zero unless the vehicle is congested.
    pub tau: S,
}
