//! Deterministic discrete-event core: a time-ordered event queue and the
//! shared radio medium.

mod radio;

pub use radio::{Medium, RadioBucket, RadioLedger, RadioState, Reception, TxId};

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::timing::Symbols;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("event at t={at} scheduled in the past (now={now})")]
    InPast { at: Symbols, now: Symbols },
    #[error("node {0} is already transmitting")]
    BusyRadio(usize),
}

#[derive(Debug, Clone)]
pub struct Event<E> {
    pub time: Symbols,
    pub seqno: u64,
    pub kind: E,
}

impl<E> PartialEq for Event<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seqno == other.seqno
    }
}

impl<E> Eq for Event<E> {}

impl<E> PartialOrd for Event<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Event<E> {
    // min-heap on (time, seqno)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seqno).cmp(&(self.time, self.seqno))
    }
}

/// Events with equal time pop in insertion order.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Event<E>>,
    now: Symbols,
    next_seqno: u64,
    dispatched: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), now: 0, next_seqno: 0, dispatched: 0 }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Symbols {
        self.now
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, time: Symbols, kind: E) -> Result<u64, KernelError> {
        if time < self.now {
            return Err(KernelError::InPast { at: time, now: self.now });
        }
        let seqno = self.next_seqno;
        self.next_seqno += 1;
        self.heap.push(Event { time, seqno, kind });
        Ok(seqno)
    }

    /// Schedules `delay` symbols after the current time.
    pub fn schedule_in(&mut self, delay: Symbols, kind: E) -> u64 {
        let at = self.now + delay;
        self.schedule(at, kind).expect("relative schedule is never in the past")
    }

    /// Pops the next event strictly before `t_end` and advances the clock.
    pub fn pop_before(&mut self, t_end: Symbols) -> Option<Event<E>> {
        if self.heap.peek()?.time >= t_end {
            return None;
        }
        let ev = self.heap.pop()?;
        self.now = ev.time;
        self.dispatched += 1;
        Some(ev)
    }

    pub fn advance_to(&mut self, t: Symbols) {
        self.now = self.now.max(t);
    }
}
