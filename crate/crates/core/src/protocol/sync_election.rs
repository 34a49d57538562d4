//! Constant-round election for synchronous complete networks.
//!
//! A node woken by the adversary becomes a silent candidate and tosses up to
//! three coins to turn active: with probability `n^{-2/3}` in its wake-up
//! round `t`, `n^{-1/3}` at `t+3` and `1` at `t+6`. An active candidate polls
//! `⌈2√n log₂ n⌉` random referees plus itself; each referee answers every
//! request with the largest rank it has seen. A candidate that gets its own
//! rank back from every referee broadcasts `WINNER`, and every node adopts the
//! largest announced rank. Any request or announcement retires a silent
//! candidate on the spot.
//!
//! Within a round a node handles, in order: its wake-up, `WINNER`
//! announcements, referee duty for requests, replies to its own requests, and
//! finally a pending activation attempt. A node that already knows the
//! leader neither replies to requests nor announces itself; every requester
//! received the same announcement in the same round.

use rand::Rng;

use crate::engine::lockstep::{LockstepProtocol, RoundInput, RoundNet};
use crate::engine::SimError;
use crate::message::Message;
use crate::protocol::{draw_rank, SyncRole, Ticket};
use crate::trace::Note;
use crate::NodeId;

/// Rounds between activation attempts.
pub const ATTEMPT_GAP: u64 = 3;

/// Probability of the `attempt`-th (1-based) activation coin.
pub fn attempt_probability(n: usize, attempt: u8) -> f64 {
    let n = n.max(1) as f64;
    match attempt {
        1 => n.powf(-2.0 / 3.0),
        2 => n.powf(-1.0 / 3.0),
        _ => 1.0,
    }
}

/// Remote referees an active candidate polls: `⌈2√n log₂ n⌉`, clamped to
/// `n − 1`.
pub fn referee_count(n: usize) -> usize {
    if n <= 1 {
        return 0;
    }
    let n_f = n as f64;
    let raw = (2.0 * n_f.sqrt() * n_f.log2()).ceil() as usize;
    raw.min(n - 1)
}

#[derive(Clone, Debug)]
struct NodeState {
    role: SyncRole,
    ticket: Ticket,
    wake_round: u64,
    attempt: u8,
    max_seen: Option<Ticket>,
    leader: Option<Ticket>,
    expected: usize,
    received: usize,
    all_own: bool,
}

impl NodeState {
    fn new() -> Self {
        NodeState {
            role: SyncRole::Asleep,
            ticket: Ticket { rank: 0, id: None },
            wake_round: 0,
            attempt: 0,
            max_seen: None,
            leader: None,
            expected: 0,
            received: 0,
            all_own: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SyncMetrics {
    /// Nodes that broadcast `WINNER`, in broadcast order.
    pub winners: Vec<NodeId>,
    /// Round of the first successful activation.
    pub first_activation: Option<u64>,
    /// Activations per round.
    pub activations: Vec<(u64, u64)>,
}

pub struct SyncElection {
    unique_ids: bool,
    nodes: Vec<NodeState>,
    metrics: SyncMetrics,
}

impl SyncElection {
    pub fn new(n: usize, unique_ids: bool) -> Self {
        SyncElection { unique_ids, nodes: vec![NodeState::new(); n], metrics: SyncMetrics::default() }
    }

    pub fn metrics(&self) -> &SyncMetrics {
        &self.metrics
    }

    pub fn role(&self, node: NodeId) -> SyncRole {
        self.nodes[node.index()].role
    }

    pub fn leader(&self, node: NodeId) -> Option<Ticket> {
        self.nodes[node.index()].leader
    }

    pub fn ticket(&self, node: NodeId) -> Ticket {
        self.nodes[node.index()].ticket
    }

    fn set_role(&mut self, node: NodeId, to: SyncRole, net: &mut RoundNet) {
        let from = self.nodes[node.index()].role;
        if from == to {
            return;
        }
        self.nodes[node.index()].role = to;
        net.note(Note::Role { node: node.0, from, to });
        if matches!(from, SyncRole::Silent | SyncRole::Active) {
            net.reveal_retired(node);
        }
    }

    fn activate(&mut self, node: NodeId, round: u64, net: &mut RoundNet) -> Result<(), SimError> {
        let count = referee_count(net.n());
        let targets = if count == 0 { Vec::new() } else { net.sample_targets(node, count)? };
        let ticket = self.nodes[node.index()].ticket;
        {
            let s = &mut self.nodes[node.index()];
            s.expected = targets.len() + 1;
            s.received = 0;
            s.all_own = true;
        }
        self.set_role(node, SyncRole::Active, net);
        self.metrics.first_activation.get_or_insert(round);
        match self.metrics.activations.last_mut() {
            Some((r, c)) if *r == round => *c += 1,
            _ => self.metrics.activations.push((round, 1)),
        }
        for to in targets {
            net.send(node, to, Message::SyncRequest(ticket))?;
        }
        net.send(node, node, Message::SyncRequest(ticket))
    }
}

impl LockstepProtocol for SyncElection {
    fn on_round(&mut self, node: NodeId, round: u64, input: RoundInput, net: &mut RoundNet) -> Result<(), SimError> {
        let n = net.n();
        if self.nodes[node.index()].role == SyncRole::Asleep {
            if input.spontaneous {
                let rank = draw_rank(n, net.rng(node));
                let ticket = Ticket { rank, id: self.unique_ids.then_some(node.0) };
                let s = &mut self.nodes[node.index()];
                s.ticket = ticket;
                s.wake_round = round;
                s.attempt = 1;
                self.set_role(node, SyncRole::Silent, net);
                net.reveal_candidate(node, ticket);
            } else if !input.messages.is_empty() {
                self.set_role(node, SyncRole::Referee, net);
            }
        }

        let mut requesters = Vec::new();
        let mut batch_max: Option<Ticket> = None;
        let mut replies = Vec::new();
        let mut announced: Option<Ticket> = None;
        for (from, msg) in input.messages {
            match msg {
                Message::Winner(t) => announced = announced.max(Some(t)),
                Message::SyncRequest(t) => {
                    requesters.push(from);
                    batch_max = batch_max.max(Some(t));
                }
                Message::SyncReply(t) => replies.push(t),
                other => debug_assert!(false, "asynchronous message {other:?} in lockstep protocol"),
            }
        }

        if let Some(best) = announced {
            let s = &mut self.nodes[node.index()];
            s.leader = s.leader.max(Some(best));
            self.set_role(node, SyncRole::Done, net);
        }

        if !requesters.is_empty() {
            if self.nodes[node.index()].role == SyncRole::Silent {
                self.set_role(node, SyncRole::Referee, net);
            }
            let s = &mut self.nodes[node.index()];
            s.max_seen = s.max_seen.max(batch_max);
            let answer = s.max_seen.expect("batch is non-empty");
            if s.role != SyncRole::Done {
                for to in requesters {
                    net.send(node, to, Message::SyncReply(answer))?;
                }
            }
        }

        if !replies.is_empty() && self.nodes[node.index()].role == SyncRole::Active {
            let s = &mut self.nodes[node.index()];
            let own = s.ticket;
            s.received += replies.len();
            s.all_own &= replies.iter().all(|&t| t == own);
            if s.received >= s.expected {
                if s.all_own {
                    s.leader = Some(own);
                    self.metrics.winners.push(node);
                    for v in (0..n as u32).map(NodeId).filter(|&v| v != node) {
                        net.send(node, v, Message::Winner(own))?;
                    }
                    self.set_role(node, SyncRole::Done, net);
                } else {
                    self.set_role(node, SyncRole::Referee, net);
                }
            }
        }

        let s = &self.nodes[node.index()];
        if s.role == SyncRole::Silent && round == s.wake_round + ATTEMPT_GAP * (s.attempt as u64 - 1) {
            let p = attempt_probability(n, s.attempt);
            if net.rng(node).random_bool(p) {
                self.activate(node, round, net)?;
            } else {
                let s = &mut self.nodes[node.index()];
                s.attempt += 1;
                let next = s.wake_round + ATTEMPT_GAP * (s.attempt as u64 - 1);
                net.set_timer(node, next)?;
            }
        }
        Ok(())
    }
}
