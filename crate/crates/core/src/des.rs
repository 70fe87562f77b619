//! Deterministic discrete-event scheduler.
//!
//! Events dequeue in `(time, seq)` order where `seq` is assigned at
//! scheduling time, so simultaneous events run first-in first-out. A run
//! uses a single time domain: integer slots for protocol simulations,
//! [`Seconds`] for the abstract model.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::io::Write;
use std::ops::Add;

use thiserror::Error;

use crate::model::EntityId;

pub trait SimTime: Copy + Ord + fmt::Debug + fmt::Display {}

impl SimTime for u64 {}

/// Real-valued time in seconds with a total order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Seconds(pub f64);

impl Eq for Seconds {}

impl PartialOrd for Seconds {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Seconds {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add<f64> for Seconds {
    type Output = Seconds;

    fn add(self, rhs: f64) -> Seconds {
        Seconds(self.0 + rhs)
    }
}

impl fmt::Display for Seconds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9}", self.0)
    }
}

impl SimTime for Seconds {}

/// Short label of an event payload, used for trace output.
pub trait EventKind {
    fn kind(&self) -> &'static str;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<T, P> {
    pub time: T,
    pub seq: u64,
    pub target: EntityId,
    pub payload: P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Handle(u64);

struct Entry<T, P>(Event<T, P>);

impl<T: Ord, P> PartialEq for Entry<T, P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.seq == other.0.seq
    }
}

impl<T: Ord, P> Eq for Entry<T, P> {}

impl<T: Ord, P> PartialOrd for Entry<T, P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Ord, P> Ord for Entry<T, P> {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        (&other.0.time, other.0.seq).cmp(&(&self.0.time, self.0.seq))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DesError {
    #[error("event scheduled in the past: now {now}, requested {requested}")]
    PastEvent { now: String, requested: String },
    #[error("event queue empty at {now} before the stop condition held")]
    Starvation { now: String },
}

/// Why [`Engine::run_until`] returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The model reported it was done.
    Condition,
    /// The next event lies at or beyond the horizon.
    Horizon,
    /// The event budget was used up.
    EventBudget,
}

#[derive(Debug, Clone, Copy)]
pub struct StopRule<T> {
    pub horizon: Option<T>,
    pub max_events: Option<u64>,
}

impl<T> Default for StopRule<T> {
    fn default() -> Self {
        Self {
            horizon: None,
            max_events: None,
        }
    }
}

impl<T> StopRule<T> {
    pub fn horizon(t: T) -> Self {
        Self {
            horizon: Some(t),
            max_events: None,
        }
    }

    pub fn with_max_events(mut self, n: u64) -> Self {
        self.max_events = Some(n);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunStats<T> {
    pub events: u64,
    pub end_time: T,
    pub stop: StopReason,
}

pub trait Model<T, P> {
    fn handle(&mut self, engine: &mut Engine<T, P>, event: Event<T, P>);

    fn is_done(&self) -> bool {
        false
    }
}

pub struct Engine<T, P> {
    now: T,
    next_seq: u64,
    queue: BinaryHeap<Entry<T, P>>,
    live: HashSet<u64>,
    dispatched: u64,
    trace: Option<Box<dyn Write + Send>>,
}

impl<T: SimTime, P> Engine<T, P> {
    pub fn new(start: T) -> Self {
        Self {
            now: start,
            next_seq: 0,
            queue: BinaryHeap::new(),
            live: HashSet::new(),
            dispatched: 0,
            trace: None,
        }
    }

    pub fn now(&self) -> T {
        self.now
    }

    /// Total number of events dispatched so far.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Number of scheduled, not yet cancelled, events.
    pub fn pending(&self) -> usize {
        self.live.len()
    }

    pub fn set_trace(&mut self, sink: Box<dyn Write + Send>) {
        self.trace = Some(sink);
    }

    pub fn take_trace(&mut self) -> Option<Box<dyn Write + Send>> {
        self.trace.take()
    }

    pub fn tracing(&self) -> bool {
        self.trace.is_some()
    }

    /// Writes one `time<TAB>target<TAB>kind` line when tracing is enabled.
    pub fn trace(&mut self, target: EntityId, kind: &str) {
        if let Some(w) = self.trace.as_mut() {
            // Trace output is best effort.
            let _ = writeln!(w, "{}\t{}\t{}", self.now, target, kind);
        }
    }

    pub fn schedule(&mut self, time: T, target: EntityId, payload: P) -> Result<Handle, DesError> {
        if time < self.now {
            return Err(DesError::PastEvent {
                now: self.now.to_string(),
                requested: time.to_string(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.live.insert(seq);
        self.queue.push(Entry(Event {
            time,
            seq,
            target,
            payload,
        }));
        Ok(Handle(seq))
    }

    /// Cancels a pending event. Returns `false` if it already ran or was
    /// already cancelled.
    pub fn cancel(&mut self, handle: Handle) -> bool {
        self.live.remove(&handle.0)
    }

    pub fn is_pending(&self, handle: Handle) -> bool {
        self.live.contains(&handle.0)
    }

    fn drop_cancelled_head(&mut self) {
        while let Some(head) = self.queue.peek() {
            if self.live.contains(&head.0.seq) {
                break;
            }
            self.queue.pop();
        }
    }

    pub fn peek_time(&mut self) -> Option<T> {
        self.drop_cancelled_head();
        self.queue.peek().map(|e| e.0.time)
    }

    /// Removes the next live event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<Event<T, P>> {
        self.drop_cancelled_head();
        let Entry(ev) = self.queue.pop()?;
        self.live.remove(&ev.seq);
        debug_assert!(ev.time >= self.now);
        self.now = ev.time;
        self.dispatched += 1;
        Some(ev)
    }

    pub fn run_until<M>(&mut self, model: &mut M, rule: &StopRule<T>) -> Result<RunStats<T>, DesError>
    where
        M: Model<T, P>,
        P: EventKind,
    {
        let mut events = 0u64;
        loop {
            if model.is_done() {
                return Ok(self.stats(events, StopReason::Condition));
            }
            if rule.max_events.is_some_and(|max| events >= max) {
                return Ok(self.stats(events, StopReason::EventBudget));
            }
            let next = self.peek_time();
            if next.is_none() && rule.horizon.is_none() {
                return Err(DesError::Starvation {
                    now: self.now.to_string(),
                });
            }
            if let Some(h) = rule.horizon {
                if next.is_none_or(|t| t >= h) {
                    if h > self.now {
                        self.now = h;
                    }
                    return Ok(self.stats(events, StopReason::Horizon));
                }
            }
            let ev = self.pop().expect("peeked event");
            if self.trace.is_some() {
                let kind = ev.payload.kind();
                self.trace(ev.target, kind);
            }
            events += 1;
            model.handle(self, ev);
        }
    }

    fn stats(&self, events: u64, stop: StopReason) -> RunStats<T> {
        RunStats {
            events,
            end_time: self.now,
            stop,
        }
    }
}
