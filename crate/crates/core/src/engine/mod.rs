//! Discrete-event engine.
//!
//! The asynchronous runner pops events in `(time, seq)` order and hands each
//! one to the protocol; handlers run to completion before the next event is
//! popped. Sequence numbers are assigned when an event is scheduled, so ties
//! at equal times resolve in scheduling order. The lockstep runner lives in
//! [`lockstep`].

pub mod lockstep;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rustc_hash::FxHashMap;

use thiserror::Error;

use crate::adversary::{AdversaryError, DelayPolicy, HistoryDigest, SendContext, WakeSchedule};
use crate::message::{Message, ALL_TAGS};
use crate::protocol::Ticket;
use crate::rng::{NodeStreams, StreamRng};
use crate::time::VirtualTime;
use crate::trace::{EventKind, Note, TraceOutput, TraceRecord};
use crate::NodeId;

pub const DEFAULT_EVENT_BUDGET: u64 = 1_000_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event scheduled at {at} but the clock is already at {now}")]
    ScheduleInPast { at: VirtualTime, now: VirtualTime },
    #[error("message delay {0} is outside (0, 1]")]
    DelayOutOfRange(VirtualTime),
    #[error("node {0} sent a message while asleep")]
    SenderAsleep(NodeId),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("timer for round {at} set during round {now}")]
    TimerInPast { at: u64, now: u64 },
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error("trace output failed: {0}")]
    Trace(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EventPayload {
    Wakeup(NodeId),
    Deliver { from: NodeId, to: NodeId, sent: VirtualTime, msg: Message },
    LocalDeliver { node: NodeId, sent: VirtualTime, msg: Message },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub time: VirtualTime,
    pub seq: u64,
    pub payload: EventPayload,
}

struct Queued(Event);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.0.time, self.0.seq) == (other.0.time, other.0.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0.time, self.0.seq).cmp(&(other.0.time, other.0.seq))
    }
}

/// Global event queue ordered by `(time, seq)`.
#[derive(Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Queued>>,
    now: VirtualTime,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    /// The sequence number the next scheduled event will get.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Enqueues a fully formed event.
    pub fn schedule(&mut self, event: Event) -> Result<(), SimError> {
        if event.time < self.now {
            return Err(SimError::ScheduleInPast { at: event.time, now: self.now });
        }
        self.next_seq = self.next_seq.max(event.seq + 1);
        self.heap.push(Reverse(Queued(event)));
        Ok(())
    }

    /// Enqueues `payload` at `time` with a fresh sequence number.
    pub fn push(&mut self, time: VirtualTime, payload: EventPayload) -> Result<u64, SimError> {
        let seq = self.next_seq;
        self.schedule(Event { time, seq, payload })?;
        Ok(seq)
    }

    pub fn peek(&self) -> Option<&Event> {
        self.heap.peek().map(|Reverse(Queued(e))| e)
    }

    /// Removes the earliest event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<Event> {
        let Reverse(Queued(e)) = self.heap.pop()?;
        self.now = e.time;
        Some(e)
    }
}

/// Remote and local message counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MessageCounts {
    by_tag: [u64; ALL_TAGS.len()],
    pub local: u64,
}

impl MessageCounts {
    fn slot(tag: &str) -> usize {
        ALL_TAGS.iter().position(|t| *t == tag).expect("unknown message tag")
    }

    pub fn add_remote(&mut self, msg: &Message) {
        self.by_tag[Self::slot(msg.tag())] += 1;
    }

    pub fn remote(&self, tag: &str) -> u64 {
        self.by_tag[Self::slot(tag)]
    }

    pub fn total_remote(&self) -> u64 {
        self.by_tag.iter().sum()
    }

    /// Non-zero per-tag counts in tag order.
    pub fn nonzero(&self) -> impl Iterator<Item = (&'static str, u64)> + '_ {
        ALL_TAGS.iter().zip(self.by_tag.iter()).filter(|(_, &c)| c > 0).map(|(&t, &c)| (t, c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WakeCause {
    Spontaneous,
    ByMessage,
}

/// Protocol handlers driven by the asynchronous runner.
pub trait AsyncProtocol {
    fn on_wakeup(&mut self, node: NodeId, cause: WakeCause, net: &mut Network<'_>) -> Result<(), SimError>;

    /// `from == node` for self-addressed (local) messages.
    fn on_message(&mut self, node: NodeId, from: NodeId, msg: Message, net: &mut Network<'_>) -> Result<(), SimError>;
}

/// The engine as seen from inside a handler.
pub struct Network<'a> {
    n: usize,
    queue: EventQueue,
    channels: FxHashMap<(u32, u32), VirtualTime>,
    awake: Vec<bool>,
    streams: NodeStreams,
    delay: &'a mut dyn DelayPolicy,
    history: HistoryDigest,
    counts: MessageCounts,
    notes: Vec<Note>,
    fifo_clamps: u64,
}

impl<'a> Network<'a> {
    pub fn new(n: usize, seed: u64, delay: &'a mut dyn DelayPolicy) -> Self {
        Network {
            n,
            queue: EventQueue::new(),
            channels: FxHashMap::default(),
            awake: vec![false; n],
            streams: NodeStreams::new(seed, n),
            delay,
            history: HistoryDigest::default(),
            counts: MessageCounts::default(),
            notes: Vec::new(),
            fifo_clamps: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn now(&self) -> VirtualTime {
        self.queue.now()
    }

    pub fn next_seq(&self) -> u64 {
        self.queue.next_seq()
    }

    pub fn is_awake(&self, node: NodeId) -> bool {
        self.awake[node.index()]
    }

    pub fn rng(&mut self, node: NodeId) -> &mut StreamRng {
        self.streams.get(node)
    }

    pub fn counts(&self) -> &MessageCounts {
        &self.counts
    }

    pub fn history(&self) -> &HistoryDigest {
        &self.history
    }

    pub fn queue(&self) -> &EventQueue {
        &self.queue
    }

    pub fn note(&mut self, note: Note) {
        self.notes.push(note);
    }

    #[cfg(test)]
    pub(crate) fn set_awake(&mut self, node: NodeId) {
        self.awake[node.index()] = true;
    }

    #[cfg(test)]
    pub(crate) fn queue_mut(&mut self) -> &mut EventQueue {
        &mut self.queue
    }

    /// Makes a drawn rank visible to the adversary.
    pub fn reveal_candidate(&mut self, node: NodeId, ticket: Ticket) {
        self.history.candidate_revealed(node, ticket);
    }

    pub fn reveal_retired(&mut self, node: NodeId) {
        self.history.candidate_retired(node);
    }

    pub fn sample_targets(&mut self, node: NodeId, count: usize) -> Result<Vec<NodeId>, SimError> {
        let n = self.n;
        Ok(crate::adversary::sample_targets(node, count, n, self.streams.get(node))?)
    }

    /// Sends `msg` with a delay chosen by the adversary. Messages addressed
    /// to the sender itself go through [`Network::send_local`].
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: Message) -> Result<(), SimError> {
        if from == to {
            return self.send_local(from, msg);
        }
        let delay =
            self.delay.delay(&SendContext { from, to, msg: &msg, now: self.queue.now(), history: &self.history });
        self.send_with_delay(from, to, msg, delay)
    }

    /// Sends over the `from → to` link with an explicit delay in (0, 1].
    /// Delivery is clamped to the link's previous delivery time so that the
    /// link stays FIFO.
    pub fn send_with_delay(
        &mut self,
        from: NodeId,
        to: NodeId,
        msg: Message,
        delay: VirtualTime,
    ) -> Result<(), SimError> {
        if delay == VirtualTime::ZERO || delay > VirtualTime::UNIT {
            return Err(SimError::DelayOutOfRange(delay));
        }
        if to.index() >= self.n {
            return Err(SimError::UnknownNode(to));
        }
        if !self.awake[from.index()] {
            return Err(SimError::SenderAsleep(from));
        }
        let now = self.queue.now();
        let mut at = now + delay;
        let last = self.channels.entry((from.0, to.0)).or_insert(VirtualTime::ZERO);
        if *last > at {
            at = *last;
            self.fifo_clamps += 1;
        }
        *last = at;
        self.counts.add_remote(&msg);
        self.history.sends += 1;
        self.queue.push(at, EventPayload::Deliver { from, to, sent: now, msg })?;
        Ok(())
    }

    /// Zero-delay delivery to the node itself; not a network message.
    pub fn send_local(&mut self, node: NodeId, msg: Message) -> Result<(), SimError> {
        if !self.awake[node.index()] {
            return Err(SimError::SenderAsleep(node));
        }
        self.counts.local += 1;
        let now = self.queue.now();
        self.queue.push(now, EventPayload::LocalDeliver { node, sent: now, msg })?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub seed: u64,
    pub event_budget: u64,
}

impl RunConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        RunConfig { n, seed, event_budget: DEFAULT_EVENT_BUDGET }
    }
}

/// What the engine itself measured during one run.
#[derive(Clone, Debug, PartialEq)]
pub struct EngineStats {
    pub counts: MessageCounts,
    pub events: u64,
    pub first_wake: VirtualTime,
    /// Time of the last processed event other than an ignored wake-up.
    pub last_event: VirtualTime,
    pub nonterminating: bool,
    pub fifo_clamps: u64,
    /// Lockstep only.
    pub first_wake_round: Option<u64>,
    /// Lockstep only: last round in which any message was delivered.
    pub last_delivery_round: Option<u64>,
}

impl EngineStats {
    pub fn elapsed(&self) -> VirtualTime {
        self.last_event.saturating_sub(self.first_wake)
    }
}

/// Runs `protocol` asynchronously until the event queue drains or the event
/// budget is exhausted.
pub fn run_async<P: AsyncProtocol>(
    protocol: &mut P,
    wake: &WakeSchedule,
    delay: &mut dyn DelayPolicy,
    config: &RunConfig,
    trace: &mut TraceOutput<'_>,
) -> Result<EngineStats, SimError> {
    let mut net = Network::new(config.n, config.seed, delay);
    for &(node, t) in wake.entries() {
        if node.index() >= config.n {
            return Err(SimError::UnknownNode(node));
        }
        net.queue.push(t, EventPayload::Wakeup(node))?;
    }
    let first_wake = wake.first_time();
    let mut last_event = first_wake;
    let mut events = 0u64;
    let mut nonterminating = false;

    while let Some(event) = net.queue.pop() {
        if events >= config.event_budget {
            nonterminating = true;
            break;
        }
        events += 1;
        let now = event.time;
        let mut record = TraceRecord {
            t: now,
            seq: event.seq,
            kind: EventKind::Wakeup,
            from: None,
            to: 0,
            sent: None,
            round: None,
            ignored: false,
            msg: None,
            notes: Vec::new(),
        };
        match event.payload {
            EventPayload::Wakeup(node) => {
                record.to = node.0;
                if net.awake[node.index()] {
                    record.ignored = true;
                } else {
                    net.awake[node.index()] = true;
                    net.history.wakes.push((node, now));
                    protocol.on_wakeup(node, WakeCause::Spontaneous, &mut net)?;
                    last_event = now;
                }
            }
            EventPayload::Deliver { from, to, sent, msg } => {
                record.kind = EventKind::Deliver;
                record.from = Some(from.0);
                record.to = to.0;
                record.sent = Some(sent);
                record.msg = Some(msg.clone());
                net.history.deliveries += 1;
                if !net.awake[to.index()] {
                    net.awake[to.index()] = true;
                    protocol.on_wakeup(to, WakeCause::ByMessage, &mut net)?;
                }
                protocol.on_message(to, from, msg, &mut net)?;
                last_event = now;
            }
            EventPayload::LocalDeliver { node, sent, msg } => {
                record.kind = EventKind::LocalDeliver;
                record.from = Some(node.0);
                record.to = node.0;
                record.sent = Some(sent);
                record.msg = Some(msg.clone());
                protocol.on_message(node, node, msg, &mut net)?;
                last_event = now;
            }
        }
        record.notes = std::mem::take(&mut net.notes);
        trace.record(&record)?;
    }

    Ok(EngineStats {
        counts: net.counts,
        events,
        first_wake,
        last_event,
        nonterminating,
        fifo_clamps: net.fifo_clamps,
        first_wake_round: None,
        last_delivery_round: None,
    })
}
