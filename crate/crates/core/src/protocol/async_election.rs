//! Phased referee election for asynchronous complete networks.
//!
//! Every node is a referee; nodes woken by the adversary are also candidates.
//! A candidate in phase `i` asks a random set of referees (all nodes in the
//! final phase, itself always included) to approve its position and advances
//! only if none declines. A referee backs one *chosen* candidate at a time;
//! when a candidate ahead of the chosen shows up it becomes the *contender*
//! and the referee asks the chosen to settle the dispute with a `DECIDE`
//! round-trip. States:
//!
//! * `C0`: never approached.
//! * `C1`: a chosen, no dispute.
//! * `C2`: dispute in progress between the chosen and the current contender.
//! * `C3`: dispute in progress between the chosen and an earlier contender
//!   that has since been replaced (and declined).
//!
//! Candidates are identified at a referee by the link their request arrived
//! on, since nodes are anonymous. The elected node broadcasts `LEADER` and
//! every node that receives it terminates.

use crate::engine::{AsyncProtocol, Network, SimError, WakeCause};
use crate::message::{Message, Outcome, Verdict};
use crate::protocol::{draw_rank, CandState, Position, RefereeState, Ticket};
use crate::time::VirtualTime;
use crate::trace::Note;
use crate::NodeId;

/// Phase count and referee-set sizes for a network of `n` nodes. All
/// logarithms are base 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseSchedule {
    n: usize,
    phases: u32,
    cap: usize,
}

impl PhaseSchedule {
    pub fn new(n: usize) -> Self {
        let n_f = n as f64;
        let inner = 4.0 * n_f * n_f.log2();
        let phases = if n <= 1 {
            1
        } else {
            // ⌈log₂ √inner⌉ + 1
            (0.5 * inner.log2()).ceil() as u32 + 1
        };
        let cap = if n <= 1 { 0 } else { inner.sqrt().ceil() as usize };
        PhaseSchedule { n, phases, cap }
    }

    /// Number of phases `K`; phase `K` polls every node.
    pub fn phases(&self) -> u32 {
        self.phases
    }

    /// `⌈√(4n log n)⌉`.
    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Remote referees polled in phase `i`: `min{10·2^i, ⌈√(4n log n)⌉}`
    /// for `i < K`, clamped to `n − 1`; all `n − 1` other nodes at `i = K`.
    pub fn ref_count(&self, phase: u32) -> usize {
        let others = self.n.saturating_sub(1);
        if phase >= self.phases {
            return others;
        }
        let doubling = 10usize.saturating_mul(1usize.checked_shl(phase).unwrap_or(usize::MAX));
        doubling.min(self.cap).min(others)
    }

    /// Last phase covered by the attrition bound:
    /// `ρ = K − ⌈log₂ log₂ n⌉ − 5` (may be zero or negative).
    pub fn attrition_horizon(&self) -> i64 {
        if self.n <= 2 {
            return self.phases as i64 - 5;
        }
        let loglog = (self.n as f64).log2().log2().ceil() as i64;
        self.phases as i64 - loglog - 5
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Backed {
    via: NodeId,
    pos: Position,
}

#[derive(Clone, Debug)]
struct NodeState {
    initialized: bool,
    terminated: bool,
    cand: CandState,
    rank: u64,
    phase: u32,
    in_phase: bool,
    pending: usize,
    declined: bool,
    phase_started: VirtualTime,
    referee: RefereeState,
    chosen: Option<Backed>,
    contender: Option<Backed>,
    leader: Option<Ticket>,
}

impl NodeState {
    fn new() -> Self {
        NodeState {
            initialized: false,
            terminated: false,
            cand: CandState::NonElected,
            rank: 0,
            phase: 0,
            in_phase: false,
            pending: 0,
            declined: false,
            phase_started: VirtualTime::ZERO,
            referee: RefereeState::C0,
            chosen: None,
            contender: None,
            leader: None,
        }
    }
}

/// Per-trial measurements collected by the protocol.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AsyncMetrics {
    /// `per_phase[i]` = candidates that started phase `i` (index 0 unused).
    pub per_phase: Vec<u64>,
    pub elected: Vec<NodeId>,
    /// Longest span between a phase's start and the arrival of its last reply.
    pub max_phase_span: VirtualTime,
    pub phase_count: u64,
}

/// The asynchronous election state of every node in one trial.
pub struct AsyncElection {
    schedule: PhaseSchedule,
    unique_ids: bool,
    nodes: Vec<NodeState>,
    metrics: AsyncMetrics,
}

impl AsyncElection {
    pub fn new(n: usize, unique_ids: bool) -> Self {
        let schedule = PhaseSchedule::new(n);
        AsyncElection {
            schedule,
            unique_ids,
            nodes: vec![NodeState::new(); n],
            metrics: AsyncMetrics { per_phase: vec![0; schedule.phases() as usize + 1], ..AsyncMetrics::default() },
        }
    }

    pub fn schedule(&self) -> &PhaseSchedule {
        &self.schedule
    }

    pub fn metrics(&self) -> &AsyncMetrics {
        &self.metrics
    }

    pub fn cand_state(&self, node: NodeId) -> CandState {
        self.nodes[node.index()].cand
    }

    pub fn referee_state(&self, node: NodeId) -> RefereeState {
        self.nodes[node.index()].referee
    }

    pub fn is_initialized(&self, node: NodeId) -> bool {
        self.nodes[node.index()].initialized
    }

    pub fn is_terminated(&self, node: NodeId) -> bool {
        self.nodes[node.index()].terminated
    }

    pub fn leader(&self, node: NodeId) -> Option<Ticket> {
        self.nodes[node.index()].leader
    }

    /// The ticket of a node that drew a rank.
    pub fn ticket(&self, node: NodeId) -> Ticket {
        Ticket { rank: self.nodes[node.index()].rank, id: self.tiebreak(node) }
    }

    pub fn position(&self, node: NodeId) -> Position {
        let s = &self.nodes[node.index()];
        Position { rank: s.rank, phase: s.phase, tiebreak: self.tiebreak(node) }
    }

    fn tiebreak(&self, node: NodeId) -> Option<u32> {
        self.unique_ids.then_some(node.0)
    }

    fn set_cand(&mut self, node: NodeId, to: CandState, net: &mut Network<'_>) {
        let from = self.nodes[node.index()].cand;
        if from == to {
            return;
        }
        self.nodes[node.index()].cand = to;
        net.note(Note::Candidate { node: node.0, from, to, at_seq: net.next_seq() });
        if from == CandState::Candidate {
            net.reveal_retired(node);
        }
    }

    fn set_referee(&mut self, node: NodeId, to: RefereeState, via: NodeId, net: &mut Network<'_>) {
        let from = self.nodes[node.index()].referee;
        self.nodes[node.index()].referee = to;
        net.note(Note::Referee { node: node.0, from, to, via: via.0 });
    }

    fn terminate(&mut self, node: NodeId, net: &mut Network<'_>) {
        self.nodes[node.index()].terminated = true;
        net.note(Note::Terminated { node: node.0 });
    }

    fn start_phase(&mut self, node: NodeId, phase: u32, net: &mut Network<'_>) -> Result<(), SimError> {
        let count = self.schedule.ref_count(phase);
        let targets: Vec<NodeId> = if phase >= self.schedule.phases() {
            (0..net.n() as u32).map(NodeId).filter(|&v| v != node).collect()
        } else if count == 0 {
            Vec::new()
        } else {
            net.sample_targets(node, count)?
        };
        {
            let s = &mut self.nodes[node.index()];
            s.phase = phase;
            s.in_phase = true;
            s.declined = false;
            s.pending = targets.len() + 1;
            s.phase_started = net.now();
        }
        self.metrics.per_phase[phase as usize] += 1;
        net.note(Note::PhaseStart { node: node.0, phase });
        let pos = self.position(node);
        for to in targets {
            net.send(node, to, Message::Request(pos))?;
        }
        net.send_local(node, Message::Request(pos))
    }

    fn on_reply(&mut self, node: NodeId, pos: Position, declined: bool, net: &mut Network<'_>) -> Result<(), SimError> {
        let s = &mut self.nodes[node.index()];
        if !s.in_phase || pos.phase != s.phase || pos.rank != s.rank {
            // stale reply for a phase already closed
            return Ok(());
        }
        s.pending -= 1;
        s.declined |= declined;
        if s.pending == 0 {
            self.complete_phase(node, net)?;
        }
        Ok(())
    }

    fn complete_phase(&mut self, node: NodeId, net: &mut Network<'_>) -> Result<(), SimError> {
        let (phase, declined, cand, started) = {
            let s = &mut self.nodes[node.index()];
            s.in_phase = false;
            (s.phase, s.declined, s.cand, s.phase_started)
        };
        let span = net.now() - started;
        self.metrics.max_phase_span = self.metrics.max_phase_span.max(span);
        self.metrics.phase_count += 1;
        net.note(Note::PhaseEnd { node: node.0, phase });

        if declined || cand != CandState::Candidate {
            self.set_cand(node, CandState::NonElected, net);
            return Ok(());
        }
        if phase < self.schedule.phases() {
            return self.start_phase(node, phase + 1, net);
        }
        self.set_cand(node, CandState::Elected, net);
        self.metrics.elected.push(node);
        let me = self.ticket(node);
        self.nodes[node.index()].leader = Some(me);
        for v in (0..net.n() as u32).map(NodeId).filter(|&v| v != node) {
            net.send(node, v, Message::leader(me))?;
        }
        self.terminate(node, net);
        Ok(())
    }

    fn on_request(&mut self, r: NodeId, via: NodeId, pos: Position, net: &mut Network<'_>) -> Result<(), SimError> {
        let s = &self.nodes[r.index()];
        let state = s.referee;
        if state == RefereeState::C0 {
            self.nodes[r.index()].chosen = Some(Backed { via, pos });
            net.send(r, via, Message::Approved(pos))?;
            self.set_referee(r, RefereeState::C1, via, net);
            return Ok(());
        }
        let chosen = s.chosen.expect("referee past C0 has a chosen");
        if chosen.via == via {
            // The chosen itself, a phase further on. Approve so it can
            // finish the phase.
            debug_assert_eq!(chosen.pos.rank, pos.rank, "link carries a different candidate");
            self.nodes[r.index()].chosen = Some(Backed { via, pos });
            net.send(r, via, Message::Approved(pos))?;
            if state == RefereeState::C1 {
                self.set_referee(r, RefereeState::C1, via, net);
            }
            return Ok(());
        }
        match state {
            RefereeState::C0 => unreachable!(),
            RefereeState::C1 => {
                if pos.is_behind(&chosen.pos) {
                    net.send(r, via, Message::Declined(pos))?;
                } else {
                    self.nodes[r.index()].contender = Some(Backed { via, pos });
                    net.send(r, chosen.via, Message::Decide(pos))?;
                    self.set_referee(r, RefereeState::C2, via, net);
                }
            }
            RefereeState::C2 | RefereeState::C3 => {
                let w = self.nodes[r.index()].contender.expect("dispute has a contender");
                if pos.is_behind(&w.pos) {
                    net.send(r, via, Message::Declined(pos))?;
                } else {
                    net.send(r, w.via, Message::Declined(w.pos))?;
                    self.nodes[r.index()].contender = Some(Backed { via, pos });
                    self.set_referee(r, RefereeState::C3, via, net);
                }
            }
        }
        Ok(())
    }

    fn on_decide(
        &mut self,
        v: NodeId,
        referee: NodeId,
        contender: Position,
        net: &mut Network<'_>,
    ) -> Result<(), SimError> {
        let contender_wins = match self.nodes[v.index()].cand {
            CandState::NonElected => true,
            CandState::Candidate => {
                let wins = contender.is_ahead_of(&self.position(v));
                if wins {
                    self.set_cand(v, CandState::NonElected, net);
                }
                wins
            }
            // an elected node has terminated and never gets here
            CandState::Elected => false,
        };
        let me = self.position(v);
        net.send(v, referee, Message::decide_reply(contender, me, contender_wins))
    }

    fn on_decide_reply(
        &mut self,
        r: NodeId,
        contender: Verdict,
        chosen: Verdict,
        net: &mut Network<'_>,
    ) -> Result<(), SimError> {
        let state = self.nodes[r.index()].referee;
        assert!(
            matches!(state, RefereeState::C2 | RefereeState::C3),
            "decide reply reached referee {r} in state {state:?}"
        );
        let s = &mut self.nodes[r.index()];
        let mut backed = s.chosen.expect("dispute has a chosen");
        backed.pos = chosen.pos;
        s.chosen = Some(backed);
        let w = s.contender.expect("dispute has a contender");

        if contender.result == Outcome::Wins {
            s.chosen = Some(w);
            s.contender = None;
            net.send(r, w.via, Message::Approved(w.pos))?;
            self.set_referee(r, RefereeState::C1, w.via, net);
        } else if state == RefereeState::C2 || backed.pos.is_ahead_of(&w.pos) {
            s.contender = None;
            net.send(r, w.via, Message::Declined(w.pos))?;
            self.set_referee(r, RefereeState::C1, w.via, net);
        } else {
            net.send(r, backed.via, Message::Decide(w.pos))?;
            self.set_referee(r, RefereeState::C2, w.via, net);
        }
        Ok(())
    }

    fn on_leader(&mut self, node: NodeId, leader: Ticket, net: &mut Network<'_>) {
        self.nodes[node.index()].leader = Some(leader);
        if self.nodes[node.index()].cand != CandState::Elected {
            self.set_cand(node, CandState::NonElected, net);
        }
        self.terminate(node, net);
    }
}

impl AsyncProtocol for AsyncElection {
    fn on_wakeup(&mut self, node: NodeId, cause: WakeCause, net: &mut Network<'_>) -> Result<(), SimError> {
        let n = net.n();
        let s = &mut self.nodes[node.index()];
        assert!(!s.initialized, "node {node} initialized twice");
        s.initialized = true;
        s.referee = RefereeState::C0;
        match cause {
            WakeCause::ByMessage => {
                s.cand = CandState::NonElected;
                Ok(())
            }
            WakeCause::Spontaneous => {
                s.cand = CandState::Candidate;
                s.rank = draw_rank(n, net.rng(node));
                let ticket = self.ticket(node);
                net.reveal_candidate(node, ticket);
                self.start_phase(node, 1, net)
            }
        }
    }

    fn on_message(&mut self, node: NodeId, from: NodeId, msg: Message, net: &mut Network<'_>) -> Result<(), SimError> {
        if self.nodes[node.index()].terminated {
            return Ok(());
        }
        match msg {
            Message::Leader { rank, id, .. } => self.on_leader(node, Ticket { rank, id }, net),
            Message::Request(pos) => self.on_request(node, from, pos, net)?,
            Message::Approved(pos) => self.on_reply(node, pos, false, net)?,
            Message::Declined(pos) => self.on_reply(node, pos, true, net)?,
            Message::Decide(pos) => self.on_decide(node, from, pos, net)?,
            Message::DecideReply { contender, chosen } => self.on_decide_reply(node, contender, chosen, net)?,
            Message::SyncRequest(_) | Message::SyncReply(_) | Message::Winner(_) => {
                debug_assert!(false, "lockstep message in the asynchronous protocol");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::DelaySpec;
    use crate::engine::EventPayload;
    use crate::rng::stream;

    fn pos(rank: u64, phase: u32) -> Position {
        Position { rank, phase, tiebreak: None }
    }

    #[test]
    fn schedule_n1024() {
        // √(4·1024·10) = 202.39…, ⌈log₂ 202.39⌉ + 1 = 9
        let s = PhaseSchedule::new(1024);
        assert_eq!(s.phases(), 9);
        assert_eq!(s.cap(), 203);
        assert_eq!(s.ref_count(1), 20);
        assert_eq!(s.ref_count(4), 160);
        assert_eq!(s.ref_count(5), 203);
        assert_eq!(s.ref_count(9), 1023);
        // K − ⌈log₂ 10⌉ − 5 = 9 − 4 − 5
        assert_eq!(s.attrition_horizon(), 0);
    }

    #[test]
    fn schedule_n16_clamps_to_neighbours() {
        // min{20, ⌈√256⌉ = 16} = 16, clamped to 15
        let s = PhaseSchedule::new(16);
        assert_eq!(s.cap(), 16);
        assert_eq!(s.phases(), 5);
        assert_eq!(s.ref_count(1), 15);
    }

    #[test]
    fn schedule_small_n() {
        assert_eq!(PhaseSchedule::new(1).phases(), 1);
        assert_eq!(PhaseSchedule::new(1).ref_count(1), 0);
        let two = PhaseSchedule::new(2);
        assert_eq!(two.phases(), 3);
        assert_eq!(two.ref_count(1), 1);
    }

    #[test]
    fn ref_counts_non_decreasing() {
        for n in [2, 3, 5, 16, 64, 100, 256, 1000, 1024, 4096, 10_000] {
            let s = PhaseSchedule::new(n);
            let counts: Vec<_> = (1..=s.phases()).map(|i| s.ref_count(i)).collect();
            assert!(counts.windows(2).all(|w| w[0] <= w[1]), "n={n}: {counts:?}");
            assert!(counts.iter().all(|&c| c < n));
        }
    }

    #[test]
    fn ranks_stay_in_domain() {
        let mut rng = stream(5);
        for _ in 0..10_000 {
            let r = draw_rank(3, &mut rng);
            assert!((1..=81).contains(&r));
        }
        assert_eq!(draw_rank(1, &mut rng), 1);
    }

    /// Runs `f` against a bare network and returns what it sent.
    fn with_net<F: FnOnce(&mut AsyncElection, &mut Network<'_>)>(n: usize, f: F) -> Vec<(NodeId, NodeId, Message)> {
        let mut delay = DelaySpec::Unit.build(stream(0)).unwrap();
        let mut net = Network::new(n, 1, &mut delay);
        for v in 0..n as u32 {
            net.set_awake(NodeId(v));
        }
        let mut proto = AsyncElection::new(n, false);
        for s in proto.nodes.iter_mut() {
            s.initialized = true;
        }
        f(&mut proto, &mut net);
        let mut out = Vec::new();
        while let Some(e) = net.queue_mut().pop() {
            match e.payload {
                EventPayload::Deliver { from, to, msg, .. } => out.push((from, to, msg)),
                EventPayload::LocalDeliver { node, msg, .. } => out.push((node, node, msg)),
                EventPayload::Wakeup(_) => {}
            }
        }
        out
    }

    #[test]
    fn fresh_referee_approves() {
        let sent = with_net(4, |p, net| {
            p.on_request(NodeId(0), NodeId(1), pos(7, 1), net).unwrap();
            assert_eq!(p.referee_state(NodeId(0)), RefereeState::C1);
        });
        assert_eq!(sent, vec![(NodeId(0), NodeId(1), Message::Approved(pos(7, 1)))]);
    }

    #[test]
    fn c1_declines_behind() {
        let sent = with_net(4, |p, net| {
            p.nodes[0].referee = RefereeState::C1;
            p.nodes[0].chosen = Some(Backed { via: NodeId(2), pos: pos(9, 2) });
            p.on_request(NodeId(0), NodeId(1), pos(7, 2), net).unwrap();
            assert_eq!(p.referee_state(NodeId(0)), RefereeState::C1);
        });
        assert_eq!(sent, vec![(NodeId(0), NodeId(1), Message::Declined(pos(7, 2)))]);
    }

    #[test]
    fn c1_ahead_opens_dispute() {
        let sent = with_net(4, |p, net| {
            p.nodes[0].referee = RefereeState::C1;
            p.nodes[0].chosen = Some(Backed { via: NodeId(2), pos: pos(9, 2) });
            p.on_request(NodeId(0), NodeId(1), pos(3, 3), net).unwrap();
            assert_eq!(p.referee_state(NodeId(0)), RefereeState::C2);
        });
        assert_eq!(sent, vec![(NodeId(0), NodeId(2), Message::Decide(pos(3, 3)))]);
    }

    #[test]
    fn anonymous_tie_opens_dispute() {
        let sent = with_net(4, |p, net| {
            p.nodes[0].referee = RefereeState::C1;
            p.nodes[0].chosen = Some(Backed { via: NodeId(2), pos: pos(5, 1) });
            p.on_request(NodeId(0), NodeId(1), pos(5, 1), net).unwrap();
            assert_eq!(p.referee_state(NodeId(0)), RefereeState::C2);
        });
        assert_eq!(sent, vec![(NodeId(0), NodeId(2), Message::Decide(pos(5, 1)))]);
    }

    #[test]
    fn chosen_update_is_approved() {
        let sent = with_net(4, |p, net| {
            p.nodes[0].referee = RefereeState::C2;
            p.nodes[0].chosen = Some(Backed { via: NodeId(2), pos: pos(9, 1) });
            p.nodes[0].contender = Some(Backed { via: NodeId(3), pos: pos(4, 2) });
            p.on_request(NodeId(0), NodeId(2), pos(9, 2), net).unwrap();
            assert_eq!(p.nodes[0].chosen.unwrap().pos, pos(9, 2));
            assert_eq!(p.referee_state(NodeId(0)), RefereeState::C2);
        });
        assert_eq!(sent, vec![(NodeId(0), NodeId(2), Message::Approved(pos(9, 2)))]);
    }

    #[test]
    fn c2_replaces_contender() {
        let sent = with_net(4, |p, net| {
            p.nodes[0].referee = RefereeState::C2;
            p.nodes[0].chosen = Some(Backed { via: NodeId(2), pos: pos(1, 1) });
            p.nodes[0].contender = Some(Backed { via: NodeId(3), pos: pos(9, 2) });
            p.on_request(NodeId(0), NodeId(1), pos(11, 2), net).unwrap();
            assert_eq!(p.referee_state(NodeId(0)), RefereeState::C3);
            assert_eq!(p.nodes[0].contender.unwrap().via, NodeId(1));
        });
        assert_eq!(sent, vec![(NodeId(0), NodeId(3), Message::Declined(pos(9, 2)))]);
    }

    #[test]
    fn c3_declines_behind_contender() {
        let sent = with_net(4, |p, net| {
            p.nodes[0].referee = RefereeState::C3;
            p.nodes[0].chosen = Some(Backed { via: NodeId(2), pos: pos(1, 1) });
            p.nodes[0].contender = Some(Backed { via: NodeId(3), pos: pos(9, 2) });
            p.on_request(NodeId(0), NodeId(1), pos(8, 2), net).unwrap();
            assert_eq!(p.referee_state(NodeId(0)), RefereeState::C3);
        });
        assert_eq!(sent, vec![(NodeId(0), NodeId(1), Message::Declined(pos(8, 2)))]);
    }

    #[test]
    fn decide_by_retired_chosen() {
        let sent = with_net(4, |p, net| {
            p.nodes[2].cand = CandState::NonElected;
            p.nodes[2].rank = 4;
            p.nodes[2].phase = 1;
            p.on_decide(NodeId(2), NodeId(0), pos(3, 2), net).unwrap();
        });
        assert_eq!(sent, vec![(NodeId(2), NodeId(0), Message::decide_reply(pos(3, 2), pos(4, 1), true))]);
    }

    #[test]
    fn decide_won_by_advanced_chosen() {
        let sent = with_net(4, |p, net| {
            p.nodes[2].cand = CandState::Candidate;
            p.nodes[2].rank = 4;
            p.nodes[2].phase = 5;
            p.on_decide(NodeId(2), NodeId(0), pos(99, 3), net).unwrap();
            assert_eq!(p.cand_state(NodeId(2)), CandState::Candidate);
        });
        assert_eq!(sent, vec![(NodeId(2), NodeId(0), Message::decide_reply(pos(99, 3), pos(4, 5), false))]);
    }

    #[test]
    fn decide_retires_chosen_behind() {
        let sent = with_net(4, |p, net| {
            p.nodes[2].cand = CandState::Candidate;
            p.nodes[2].rank = 4;
            p.nodes[2].phase = 2;
            p.on_decide(NodeId(2), NodeId(0), pos(5, 2), net).unwrap();
            assert_eq!(p.cand_state(NodeId(2)), CandState::NonElected);
        });
        assert_eq!(sent, vec![(NodeId(2), NodeId(0), Message::decide_reply(pos(5, 2), pos(4, 2), true))]);
    }

    fn disputed(p: &mut AsyncElection, state: RefereeState) {
        p.nodes[0].referee = state;
        p.nodes[0].chosen = Some(Backed { via: NodeId(2), pos: pos(1, 1) });
        p.nodes[0].contender = Some(Backed { via: NodeId(3), pos: pos(9, 2) });
    }

    #[test]
    fn reply_contender_wins() {
        let sent = with_net(4, |p, net| {
            disputed(p, RefereeState::C2);
            let r = Message::decide_reply(pos(9, 2), pos(1, 1), true);
            p.on_message(NodeId(0), NodeId(2), r, net).unwrap();
            assert_eq!(p.referee_state(NodeId(0)), RefereeState::C1);
            assert_eq!(p.nodes[0].chosen.unwrap().via, NodeId(3));
            assert!(p.nodes[0].contender.is_none());
        });
        assert_eq!(sent, vec![(NodeId(0), NodeId(3), Message::Approved(pos(9, 2)))]);
    }

    #[test]
    fn reply_chosen_wins_in_c3_and_stays_ahead() {
        let sent = with_net(4, |p, net| {
            disputed(p, RefereeState::C3);
            let r = Message::decide_reply(pos(5, 2), pos(1, 4), false);
            p.on_message(NodeId(0), NodeId(2), r, net).unwrap();
            assert_eq!(p.referee_state(NodeId(0)), RefereeState::C1);
            assert_eq!(p.nodes[0].chosen.unwrap().pos, pos(1, 4));
        });
        assert_eq!(sent, vec![(NodeId(0), NodeId(3), Message::Declined(pos(9, 2)))]);
    }

    #[test]
    fn reply_chosen_wins_in_c3_but_contender_ahead() {
        let sent = with_net(4, |p, net| {
            disputed(p, RefereeState::C3);
            let r = Message::decide_reply(pos(5, 2), pos(1, 2), false);
            p.on_message(NodeId(0), NodeId(2), r, net).unwrap();
            assert_eq!(p.referee_state(NodeId(0)), RefereeState::C2);
        });
        assert_eq!(sent, vec![(NodeId(0), NodeId(2), Message::Decide(pos(9, 2)))]);
    }

    #[test]
    #[should_panic(expected = "decide reply reached referee")]
    fn reply_in_c1_is_a_violation() {
        with_net(4, |p, net| {
            p.nodes[0].referee = RefereeState::C1;
            p.nodes[0].chosen = Some(Backed { via: NodeId(2), pos: pos(1, 1) });
            let r = Message::decide_reply(pos(5, 2), pos(1, 2), false);
            p.on_message(NodeId(0), NodeId(2), r, net).unwrap();
        });
    }

    #[test]
    fn leader_terminates_and_is_idempotent() {
        let sent = with_net(4, |p, net| {
            p.nodes[1].cand = CandState::Candidate;
            p.nodes[1].in_phase = true;
            p.nodes[1].pending = 3;
            let l = Message::leader(Ticket { rank: 77, id: None });
            p.on_message(NodeId(1), NodeId(0), l.clone(), net).unwrap();
            p.on_message(NodeId(1), NodeId(0), l, net).unwrap();
            assert!(p.is_terminated(NodeId(1)));
            assert_eq!(p.cand_state(NodeId(1)), CandState::NonElected);
            assert_eq!(p.leader(NodeId(1)), Some(Ticket { rank: 77, id: None }));
            // later requests are ignored
            p.on_message(NodeId(1), NodeId(2), Message::Request(pos(3, 1)), net).unwrap();
        });
        assert!(sent.is_empty());
    }

    #[test]
    fn declined_reply_retires_at_phase_end() {
        with_net(4, |p, net| {
            p.nodes[1].cand = CandState::Candidate;
            p.nodes[1].rank = 6;
            p.nodes[1].phase = 1;
            p.nodes[1].in_phase = true;
            p.nodes[1].pending = 2;
            p.on_message(NodeId(1), NodeId(0), Message::Declined(pos(6, 1)), net).unwrap();
            assert_eq!(p.cand_state(NodeId(1)), CandState::Candidate);
            p.on_message(NodeId(1), NodeId(1), Message::Approved(pos(6, 1)), net).unwrap();
            assert_eq!(p.cand_state(NodeId(1)), CandState::NonElected);
            assert!(!p.nodes[1].in_phase);
        });
    }

    #[test]
    fn retired_mid_phase_starts_no_new_phase() {
        let sent = with_net(4, |p, net| {
            p.nodes[1].cand = CandState::NonElected;
            p.nodes[1].rank = 6;
            p.nodes[1].phase = 1;
            p.nodes[1].in_phase = true;
            p.nodes[1].pending = 1;
            p.on_message(NodeId(1), NodeId(0), Message::Approved(pos(6, 1)), net).unwrap();
            assert_eq!(p.nodes[1].phase, 1);
        });
        assert!(sent.is_empty());
    }

    #[test]
    fn final_phase_elects_and_broadcasts() {
        let sent = with_net(4, |p, net| {
            let k = p.schedule.phases();
            p.nodes[1].cand = CandState::Candidate;
            p.nodes[1].rank = 6;
            p.nodes[1].phase = k;
            p.nodes[1].in_phase = true;
            p.nodes[1].pending = 1;
            p.on_message(NodeId(1), NodeId(1), Message::Approved(pos(6, k)), net).unwrap();
            assert_eq!(p.cand_state(NodeId(1)), CandState::Elected);
            assert!(p.is_terminated(NodeId(1)));
        });
        let leaders: Vec<_> = sent.iter().filter(|m| m.2.tag() == "LEADER").collect();
        assert_eq!(leaders.len(), 3);
    }

    #[test]
    fn spontaneous_wake_polls_phase_one_referees() {
        let mut delay = DelaySpec::Unit.build(stream(0)).unwrap();
        let mut net = Network::new(16, 1, &mut delay);
        net.set_awake(NodeId(3));
        let mut p = AsyncElection::new(16, false);
        p.on_wakeup(NodeId(3), WakeCause::Spontaneous, &mut net).unwrap();
        assert_eq!(net.counts().remote("REQUEST"), 15);
        assert_eq!(net.counts().local, 1);
        assert_eq!(p.nodes[3].pending, 16);
        assert_eq!(p.cand_state(NodeId(3)), CandState::Candidate);
    }

    #[test]
    fn wake_by_message_is_retired() {
        let mut delay = DelaySpec::Unit.build(stream(0)).unwrap();
        let mut net = Network::new(4, 1, &mut delay);
        net.set_awake(NodeId(2));
        let mut p = AsyncElection::new(4, false);
        p.on_wakeup(NodeId(2), WakeCause::ByMessage, &mut net).unwrap();
        assert_eq!(p.cand_state(NodeId(2)), CandState::NonElected);
        assert_eq!(p.referee_state(NodeId(2)), RefereeState::C0);
        assert_eq!(net.counts().total_remote(), 0);
    }
}
