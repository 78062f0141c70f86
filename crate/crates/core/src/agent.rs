//! Road-agent classes and their default physical parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentClass {
    Car,
    Bus,
    Truck,
    Rickshaw,
    Pedestrian,
    Scooter,
    Motorcycle,
    Bicycle,
    Other,
}

impl AgentClass {
    pub const ALL: [AgentClass; 9] = [
        AgentClass::Car,
        AgentClass::Bus,
        AgentClass::Truck,
        AgentClass::Rickshaw,
        AgentClass::Pedestrian,
        AgentClass::Scooter,
        AgentClass::Motorcycle,
        AgentClass::Bicycle,
        AgentClass::Other,
    ];

    pub const COUNT: usize = 9;

    /// Position of the class in [`AgentClass::ALL`], used for one-hot encoding.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentClass::Car => "car",
            AgentClass::Bus => "bus",
            AgentClass::Truck => "truck",
            AgentClass::Rickshaw => "rickshaw",
            AgentClass::Pedestrian => "pedestrian",
            AgentClass::Scooter => "scooter",
            AgentClass::Motorcycle => "motorcycle",
            AgentClass::Bicycle => "bicycle",
            AgentClass::Other => "other",
        }
    }

    /// Footprint used when no measured size is available.
    pub fn default_size(self) -> AgentSize {
        let (length, width) = match self {
            AgentClass::Car => (4.5, 1.8),
            AgentClass::Bus => (12.0, 2.6),
            AgentClass::Truck => (8.0, 2.5),
            AgentClass::Rickshaw => (2.8, 1.4),
            AgentClass::Pedestrian => (0.5, 0.5),
            AgentClass::Scooter | AgentClass::Motorcycle => (2.0, 0.8),
            AgentClass::Bicycle => (1.8, 0.6),
            AgentClass::Other => (2.0, 2.0),
        };
        AgentSize { length, width }
    }

    /// Cruising speed in m/s.
    pub fn default_pref_speed(self) -> f64 {
        match self {
            AgentClass::Car => 12.0,
            AgentClass::Bus => 9.0,
            AgentClass::Truck => 10.0,
            AgentClass::Rickshaw => 6.0,
            AgentClass::Pedestrian => 1.4,
            AgentClass::Scooter | AgentClass::Motorcycle => 10.0,
            AgentClass::Bicycle => 4.0,
            AgentClass::Other => 5.0,
        }
    }
}

impl fmt::Display for AgentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        AgentClass::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == lower)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown agent class `{s}`")))
    }
}

/// Footprint of a road agent in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSize {
    pub length: f64,
    pub width: f64,
}

impl AgentSize {
    pub fn new(length: f64, width: f64) -> crate::Result<Self> {
        if !(length > 0.0 && width > 0.0 && length.is_finite() && width.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "agent size must be positive, got {length} x {width}"
            )));
        }
        Ok(AgentSize { length, width })
    }

    /// Radius of the disc circumscribing the rectangular footprint.
    pub fn disc_radius(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }
}

/// Per-class overrides for sizes and preferred speeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    sizes: [AgentSize; AgentClass::COUNT],
    pref_speeds: [f64; AgentClass::COUNT],
}

impl Default for ClassTable {
    fn default() -> Self {
        ClassTable {
            sizes: AgentClass::ALL.map(AgentClass::default_size),
            pref_speeds: AgentClass::ALL.map(AgentClass::default_pref_speed),
        }
    }
}

impl ClassTable {
    pub fn size(&self, class: AgentClass) -> AgentSize {
        self.sizes[class.index()]
    }

    pub fn pref_speed(&self, class: AgentClass) -> f64 {
        self.pref_speeds[class.index()]
    }

    pub fn set_size(&mut self, class: AgentClass, size: AgentSize) {
        self.sizes[class.index()] = size;
    }

    pub fn set_pref_speed(&mut self, class: AgentClass, speed: f64) {
        self.pref_speeds[class.index()] = speed;
    }
}
