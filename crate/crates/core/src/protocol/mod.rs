//! Election protocols.
//!
//! [`async_election`] is the phased referee protocol for asynchronous
//! networks; [`sync_election`] is the constant-round protocol for lockstep
//! networks.

pub mod async_election;
mod position;
pub mod sync_election;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use async_election::{AsyncElection, PhaseSchedule};
pub use position::{Position, Ticket};
pub use sync_election::SyncElection;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Async,
    Sync,
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolKind::Async => "async",
            ProtocolKind::Sync => "sync",
        })
    }
}

impl FromStr for ProtocolKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "async" => Ok(ProtocolKind::Async),
            "sync" => Ok(ProtocolKind::Sync),
            other => Err(format!("unknown protocol `{other}` (expected async or sync)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CandState {
    Candidate,
    NonElected,
    Elected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RefereeState {
    C0,
    C1,
    C2,
    C3,
}

impl RefereeState {
    /// Transitions a referee may take, self-loops included.
    pub fn is_legal_transition(self, to: RefereeState) -> bool {
        use RefereeState::*;
        matches!((self, to), (C0, C1) | (C1, C2) | (C2, C3) | (C2, C1) | (C3, C2) | (C3, C1) | (C3, C3) | (C1, C1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyncRole {
    Asleep,
    Silent,
    Active,
    Referee,
    Done,
}

impl SyncRole {
    pub fn is_legal_transition(self, to: SyncRole) -> bool {
        use SyncRole::*;
        matches!(
            (self, to),
            (Asleep, Silent)
                | (Asleep, Referee)
                | (Asleep, Done)
                | (Silent, Active)
                | (Silent, Referee)
                | (Silent, Done)
                | (Active, Referee)
                | (Active, Done)
                | (Referee, Done)
        )
    }
}

/// Uniform rank in `[1, n⁴]`.
pub(crate) fn draw_rank<R: rand::Rng>(n: usize, rng: &mut R) -> u64 {
    let top = (n as u128).pow(4).min(u64::MAX as u128) as u64;
    rng.random_range(1..=top.max(1))
}
