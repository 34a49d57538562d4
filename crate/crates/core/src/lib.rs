//! Deterministic discrete-event simulation of randomized leader election in
//! complete networks.
//!
//! Two protocols are provided: a phased referee protocol for asynchronous
//! networks ([`protocol::AsyncElection`]) and a constant-round protocol for
//! synchronous ones ([`protocol::SyncElection`]). An adversary chooses wake-up
//! times and message delays; the [`harness`] runs trials and sweeps, and
//! checks recorded traces against the protocols' safety invariants.
//!
//! ```
//! use leader_sim::harness::{run_trial, TrialSpec};
//! use leader_sim::protocol::ProtocolKind;
//!
//! let report = run_trial(&TrialSpec::new(ProtocolKind::Async, 32, 7)).unwrap();
//! assert!(report.outcome.is_success());
//! ```

pub mod adversary;
pub mod engine;
pub mod harness;
pub mod message;
pub mod protocol;
pub mod rng;
pub mod time;
pub mod trace;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use time::VirtualTime;

/// Index of a node in `0..n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
