use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// A candidate's progress: its random rank and current phase, plus an
/// identifier used only to break ties when nodes have unique ids.
///
/// The order is lexicographic on (phase, rank, tiebreak). Two positions that
/// compare `Equal` are tied; in anonymous mode that happens exactly when
/// rank and phase coincide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Position {
    pub rank: u64,
    pub phase: u32,
    #[serde(rename = "id", default, skip_serializing_if = "Option::is_none")]
    pub tiebreak: Option<u32>,
}

impl Position {
    /// `self ≫ other`: strictly ahead.
    pub fn is_ahead_of(&self, other: &Position) -> bool {
        self.cmp(other) == Ordering::Greater
    }

    /// `self ≪ other`: strictly behind.
    pub fn is_behind(&self, other: &Position) -> bool {
        other.is_ahead_of(self)
    }
}

impl Ord for Position {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.phase, self.rank, self.tiebreak).cmp(&(other.phase, other.rank, other.tiebreak))
    }
}

impl PartialOrd for Position {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A rank with its optional unique-id tiebreak (lockstep protocol and
/// leader announcements).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Ticket {
    pub rank: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u32>,
}
