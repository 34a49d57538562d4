//! Fixed-point virtual time.
//!
//! One time unit (the maximum delay of a single message) is split into
//! [`TICKS_PER_UNIT`] integer ticks so that event ordering never depends on
//! floating point rounding.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Number of ticks in one time unit.
pub const TICKS_PER_UNIT: u64 = 1_000_000;

/// A point (or span) of virtual time, measured in ticks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VirtualTime(u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);
    pub const UNIT: VirtualTime = VirtualTime(TICKS_PER_UNIT);

    pub const fn from_ticks(ticks: u64) -> Self {
        VirtualTime(ticks)
    }

    pub const fn from_units(units: u64) -> Self {
        VirtualTime(units * TICKS_PER_UNIT)
    }

    /// Converts a decimal number of units, rounding to the nearest tick.
    /// Negative and non-finite inputs yield `None`.
    pub fn from_f64(units: f64) -> Option<Self> {
        if !units.is_finite() || units < 0.0 {
            return None;
        }
        let ticks = (units * TICKS_PER_UNIT as f64).round();
        if ticks > u64::MAX as f64 {
            return None;
        }
        Some(VirtualTime(ticks as u64))
    }

    pub const fn ticks(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / TICKS_PER_UNIT as f64
    }

    pub fn saturating_sub(self, other: VirtualTime) -> VirtualTime {
        VirtualTime(self.0.saturating_sub(other.0))
    }

    /// Whole rounds contained in this time (lockstep mode).
    pub const fn whole_units(self) -> u64 {
        self.0 / TICKS_PER_UNIT
    }
}

impl Add for VirtualTime {
    type Output = VirtualTime;

    fn add(self, rhs: VirtualTime) -> VirtualTime {
        VirtualTime(self.0.checked_add(rhs.0).expect("virtual time overflow"))
    }
}

impl Sub for VirtualTime {
    type Output = VirtualTime;

    fn sub(self, rhs: VirtualTime) -> VirtualTime {
        VirtualTime(self.0.checked_sub(rhs.0).expect("negative virtual time"))
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / TICKS_PER_UNIT;
        let frac = self.0 % TICKS_PER_UNIT;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let digits = format!("{frac:06}");
            write!(f, "{whole}.{}", digits.trim_end_matches('0'))
        }
    }
}

// Serialized as a JSON number of time units; every tick count below 2^53 is
// recovered exactly by `from_f64`.
impl Serialize for VirtualTime {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for VirtualTime {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let units = f64::deserialize(deserializer)?;
        VirtualTime::from_f64(units).ok_or_else(|| serde::de::Error::custom(format!("invalid virtual time {units}")))
    }
}
