use std::collections::{BTreeMap, VecDeque};

use crate::codec::{NodeAddr, PacketInfo};
use crate::mac::schedule::SlotTime;
use crate::timing::Symbols;

/// Shared buffer budget of the FIFO and the sent-unacked store.
pub const QUEUE_CAPACITY: usize = 22;
/// Transmissions per packet before it is dropped.
pub const MAX_TRANSMISSIONS: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuedPacket {
    pub info: PacketInfo,
    pub dst: NodeAddr,
    pub seq: u8,
    pub payload_len: usize,
    pub tx_count: u8,
    pub last_tx: Symbols,
    /// GTS of the latest transmission.
    pub sent_in: Option<SlotTime>,
}

/// Why a packet left the queue without acknowledgment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropCause {
    QueueFull,
    RetryLimit,
}

#[derive(Debug, Clone, Default)]
pub struct TxQueue {
    fifo: VecDeque<QueuedPacket>,
    unacked: BTreeMap<(NodeAddr, u8), QueuedPacket>,
    next_seq: BTreeMap<NodeAddr, u8>,
}

impl TxQueue {
    pub fn len(&self) -> usize {
        self.fifo.len() + self.unacked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full(&self) -> bool {
        self.len() >= QUEUE_CAPACITY
    }

    pub fn fifo_len(&self) -> usize {
        self.fifo.len()
    }

    pub fn unacked_len(&self) -> usize {
        self.unacked.len()
    }

    /// Appends a packet for `dst` with the next sequence number of that link.
    /// Returns `false` when the buffer budget is exhausted.
    pub fn enqueue(&mut self, info: PacketInfo, dst: NodeAddr, payload_len: usize) -> bool {
        if self.is_full() {
            return false;
        }
        let seq = self.next_seq.entry(dst).or_insert(0);
        self.fifo.push_back(QueuedPacket { info, dst, seq: *seq, payload_len, tx_count: 0, last_tx: 0, sent_in: None });
        *seq = seq.wrapping_add(1);
        true
    }

    pub fn front(&self) -> Option<&QueuedPacket> {
        self.fifo.front()
    }

    /// Moves the FIFO head into the sent-unacked store.
    pub fn mark_sent(&mut self, now: Symbols, via: SlotTime) -> Option<QueuedPacket> {
        let mut p = self.fifo.pop_front()?;
        p.tx_count += 1;
        p.last_tx = now;
        p.sent_in = Some(via);
        self.unacked.insert((p.dst, p.seq), p);
        Some(p)
    }

    pub fn is_unacked(&self, peer: NodeAddr, seq: u8) -> bool {
        self.unacked.contains_key(&(peer, seq))
    }

    pub fn unacked(&self) -> impl Iterator<Item = &QueuedPacket> {
        self.unacked.values()
    }

    pub fn fifo(&self) -> impl Iterator<Item = &QueuedPacket> {
        self.fifo.iter()
    }

    pub fn acknowledge(&mut self, peer: NodeAddr, seq: u8) -> Option<QueuedPacket> {
        self.unacked.remove(&(peer, seq))
    }

    /// Returns unacknowledged packets to the FIFO head, oldest transmission
    /// first. Packets that used up their transmissions are returned instead.
    pub fn requeue(&mut self, keys: &[(NodeAddr, u8)]) -> Vec<QueuedPacket> {
        let mut back: Vec<QueuedPacket> = keys.iter().filter_map(|k| self.unacked.remove(k)).collect();
        back.sort_by_key(|p| (p.last_tx, p.info.id));
        let mut dropped = Vec::new();
        for p in back.into_iter().rev() {
            if p.tx_count >= MAX_TRANSMISSIONS {
                dropped.push(p);
            } else {
                self.fifo.push_front(p);
            }
        }
        dropped.reverse();
        dropped
    }

    /// Sent-unacked entries last transmitted at or before `cutoff`.
    pub fn stale(&self, cutoff: Symbols) -> Vec<(NodeAddr, u8)> {
        self.unacked.iter().filter(|(_, p)| p.last_tx <= cutoff).map(|(k, _)| *k).collect()
    }
}
