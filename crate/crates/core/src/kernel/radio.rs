//! Shared multichannel medium.
//!
//! A receiver decodes a frame only if it was listening on the frame's channel
//! when the frame started and no other transmission from one of its
//! neighbours on that channel, and no jamming burst, overlapped the frame at
//! any point. There is no capture effect: overlapping frames are lost at every
//! receiver that hears more than one of them.

use crate::codec::Frame;
use crate::kernel::KernelError;
use crate::timing::Symbols;

pub type TxId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadioState {
    Off,
    Listen(u8),
    Receiving { channel: u8, tx: TxId },
    Transmitting { channel: u8, tx: TxId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadioBucket {
    Transmit = 0,
    Receive = 1,
    Listen = 2,
    Off = 3,
}

impl RadioState {
    fn bucket(&self) -> RadioBucket {
        match self {
            RadioState::Off => RadioBucket::Off,
            RadioState::Listen(_) => RadioBucket::Listen,
            RadioState::Receiving { .. } => RadioBucket::Receive,
            RadioState::Transmitting { .. } => RadioBucket::Transmit,
        }
    }
}

/// Cumulative symbols each node spent per radio state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RadioLedger {
    pub per_node: Vec<[Symbols; 4]>,
}

impl RadioLedger {
    pub fn get(&self, node: usize, bucket: RadioBucket) -> Symbols {
        self.per_node[node][bucket as usize]
    }

    pub fn total(&self, node: usize) -> Symbols {
        self.per_node[node].iter().sum()
    }
}

/// Outcome of a transmission at one locked receiver; `frame` is `None` when
/// the frame was corrupted there.
#[derive(Debug, Clone)]
pub struct Reception {
    pub node: usize,
    pub frame: Option<Frame>,
}

#[derive(Debug)]
struct ActiveTx {
    id: TxId,
    src: usize,
    channel: u8,
    frame: Frame,
}

#[derive(Debug, Clone)]
struct NodeRadio {
    state: RadioState,
    since: Symbols,
    corrupted: bool,
}

#[derive(Debug)]
pub struct Medium {
    adjacency: Vec<Vec<bool>>,
    neighbors: Vec<Vec<usize>>,
    radios: Vec<NodeRadio>,
    active: Vec<ActiveTx>,
    next_id: TxId,
    jamming: bool,
    ledger: RadioLedger,
}

impl Medium {
    pub fn new(adjacency: Vec<Vec<bool>>) -> Self {
        let n = adjacency.len();
        let neighbors = (0..n).map(|i| (0..n).filter(|&j| j != i && adjacency[i][j]).collect()).collect();
        Self {
            adjacency,
            neighbors,
            radios: vec![NodeRadio { state: RadioState::Off, since: 0, corrupted: false }; n],
            active: Vec::new(),
            next_id: 0,
            jamming: false,
            ledger: RadioLedger { per_node: vec![[0; 4]; n] },
        }
    }

    pub fn node_count(&self) -> usize {
        self.radios.len()
    }

    pub fn state(&self, node: usize) -> RadioState {
        self.radios[node].state
    }

    pub fn is_jamming(&self) -> bool {
        self.jamming
    }

    fn set_state(&mut self, node: usize, state: RadioState, now: Symbols) {
        let r = &mut self.radios[node];
        let b = r.state.bucket() as usize;
        self.ledger.per_node[node][b] += now - r.since;
        r.since = now;
        r.state = state;
        r.corrupted = false;
    }

    /// Tunes the receiver to `channel`. A reception in progress on another
    /// channel is abandoned.
    pub fn listen(&mut self, node: usize, channel: u8, now: Symbols) {
        match self.radios[node].state {
            RadioState::Listen(c) | RadioState::Receiving { channel: c, .. } if c == channel => {}
            RadioState::Transmitting { .. } => {}
            _ => self.set_state(node, RadioState::Listen(channel), now),
        }
    }

    pub fn off(&mut self, node: usize, now: Symbols) {
        match self.radios[node].state {
            RadioState::Off | RadioState::Transmitting { .. } => {}
            _ => self.set_state(node, RadioState::Off, now),
        }
    }

    fn other_signal_at(&self, node: usize, channel: u8, except: TxId) -> bool {
        self.active.iter().any(|t| t.id != except && t.channel == channel && self.adjacency[t.src][node])
    }

    /// Clear channel assessment at `node` on `channel`.
    pub fn cca_busy(&self, node: usize, channel: u8) -> bool {
        self.jamming
            || matches!(self.radios[node].state, RadioState::Receiving { channel: c, .. } if c == channel)
            || self.other_signal_at(node, channel, TxId::MAX)
    }

    pub fn transmit(&mut self, src: usize, frame: Frame, channel: u8, now: Symbols) -> Result<TxId, KernelError> {
        if matches!(self.radios[src].state, RadioState::Transmitting { .. }) {
            return Err(KernelError::BusyRadio(src));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.set_state(src, RadioState::Transmitting { channel, tx: id }, now);
        for i in 0..self.neighbors[src].len() {
            let v = self.neighbors[src][i];
            match self.radios[v].state {
                RadioState::Listen(c) if c == channel => {
                    let dirty = self.jamming || self.other_signal_at(v, channel, id);
                    self.set_state(v, RadioState::Receiving { channel, tx: id }, now);
                    self.radios[v].corrupted = dirty;
                }
                RadioState::Receiving { channel: c, .. } if c == channel => {
                    self.radios[v].corrupted = true;
                }
                _ => {}
            }
        }
        self.active.push(ActiveTx { id, src, channel, frame });
        Ok(id)
    }

    /// Completes transmission `id`. The sender returns to listening on the
    /// same channel; every receiver locked onto the frame gets an outcome.
    pub fn end_transmission(&mut self, id: TxId, now: Symbols) -> Vec<Reception> {
        let Some(pos) = self.active.iter().position(|t| t.id == id) else {
            return Vec::new();
        };
        let tx = self.active.swap_remove(pos);
        self.set_state(tx.src, RadioState::Listen(tx.channel), now);
        let mut out = Vec::new();
        for i in 0..self.neighbors[tx.src].len() {
            let v = self.neighbors[tx.src][i];
            if let RadioState::Receiving { tx: locked, .. } = self.radios[v].state {
                if locked == id {
                    let ok = !self.radios[v].corrupted;
                    self.set_state(v, RadioState::Listen(tx.channel), now);
                    out.push(Reception { node: v, frame: ok.then(|| tx.frame.clone()) });
                }
            }
        }
        out
    }

    pub fn jam_start(&mut self) {
        self.jamming = true;
        for r in &mut self.radios {
            if matches!(r.state, RadioState::Receiving { .. }) {
                r.corrupted = true;
            }
        }
    }

    pub fn jam_end(&mut self) {
        self.jamming = false;
    }

    /// Ledger including the still-open interval of every radio up to `now`.
    pub fn ledger_at(&self, now: Symbols) -> RadioLedger {
        let mut l = self.ledger.clone();
        for (i, r) in self.radios.iter().enumerate() {
            l.per_node[i][r.state.bucket() as usize] += now.saturating_sub(r.since);
        }
        l
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line3() -> Medium {
        // 0 - 1 - 2, 0 and 2 hidden from each other
        Medium::new(vec![vec![true, true, false], vec![true, true, true], vec![false, true, true]])
    }

    fn data(src: u16) -> Frame {
        Frame::data(src, 1, 0, 10, None).unwrap()
    }

    #[test]
    fn clean_delivery() {
        let mut m = line3();
        m.listen(1, 3, 0);
        let id = m.transmit(0, data(0), 3, 0).unwrap();
        let rx = m.end_transmission(id, 54);
        assert_eq!(rx.len(), 1);
        assert!(rx[0].frame.is_some());
    }

    #[test]
    fn wrong_channel_or_off_hears_nothing() {
        let mut m = line3();
        m.listen(1, 4, 0);
        let id = m.transmit(0, data(0), 3, 0).unwrap();
        assert!(m.end_transmission(id, 54).is_empty());
    }

    #[test]
    fn hidden_nodes_collide_at_common_receiver() {
        let mut m = line3();
        m.listen(1, 0, 0);
        let a = m.transmit(0, data(0), 0, 0).unwrap();
        // 2 cannot sense 0
        assert!(!m.cca_busy(2, 0));
        let b = m.transmit(2, data(2), 0, 53).unwrap();
        let ra = m.end_transmission(a, 54);
        assert!(ra.iter().all(|r| r.frame.is_none()));
        let rb = m.end_transmission(b, 107);
        assert!(rb.iter().all(|r| r.frame.is_none()));
    }

    #[test]
    fn jamming_corrupts_and_blocks_cca() {
        let mut m = line3();
        m.listen(1, 9, 0);
        let a = m.transmit(0, data(0), 9, 0).unwrap();
        m.jam_start();
        m.jam_end();
        assert!(m.end_transmission(a, 54)[0].frame.is_none());
        m.jam_start();
        assert!(m.cca_busy(1, 5));
    }

    #[test]
    fn busy_radio_is_rejected() {
        let mut m = line3();
        m.transmit(0, data(0), 0, 0).unwrap();
        assert_eq!(m.transmit(0, data(0), 1, 1), Err(KernelError::BusyRadio(0)));
    }

    #[test]
    fn ledger_sums_to_elapsed() {
        let mut m = line3();
        m.listen(1, 0, 10);
        let a = m.transmit(0, data(0), 0, 20);
        m.end_transmission(a.unwrap(), 74);
        m.off(1, 100);
        let l = m.ledger_at(500);
        for n in 0..3 {
            assert_eq!(l.total(n), 500);
        }
        assert_eq!(l.get(0, RadioBucket::Transmit), 54);
        assert_eq!(l.get(1, RadioBucket::Receive), 54);
        assert_eq!(l.get(1, RadioBucket::Listen), 10 + 26);
    }
}
