//! Per-node DSME MAC state. The simulator drives timing and the medium;
//! the node owns queues, acknowledgment bookkeeping, GTS schedule and the
//! CAP transmit queue.

pub mod csma;
pub mod handshake;
pub mod ledger;
pub mod queue;
pub mod schedule;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{FrameKind, GackBody, NodeAddr, PacketInfo};
use crate::mac::csma::Csma;
use crate::mac::handshake::{GtsManager, HandshakeMsg, Outgoing};
use crate::mac::ledger::{PendingAckLedger, ReceiveWindow};
use crate::mac::queue::{QueuedPacket, TxQueue, QUEUE_CAPACITY};
use crate::mac::schedule::{Direction, GtsKind};
use crate::timing::{SuperframeConfig, Symbols};

/// Multisuperframes without traffic before a transmit GTS is released.
pub const TX_IDLE_MSFS: u64 = 4;
/// Multisuperframes without traffic before a receive GTS expires.
pub const RX_IDLE_MSFS: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AckScheme {
    RegularAck,
    GackBeacon,
    GackCap,
    GackGts,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown acknowledgment scheme {0:?}")]
pub struct UnknownScheme(pub String);

impl AckScheme {
    pub const ALL: [AckScheme; 4] = [Self::RegularAck, Self::GackBeacon, Self::GackCap, Self::GackGts];

    pub fn name(&self) -> &'static str {
        match self {
            Self::RegularAck => "ack",
            Self::GackBeacon => "gack-beacon",
            Self::GackCap => "gack-cap",
            Self::GackGts => "gack-gts",
        }
    }

    pub fn is_group(&self) -> bool {
        *self != Self::RegularAck
    }

    /// Time between GACK opportunities, `None` for per-packet ACKs.
    pub fn gack_interval(&self, cfg: &SuperframeConfig) -> Option<Symbols> {
        match self {
            Self::RegularAck => None,
            Self::GackBeacon => Some(cfg.beacon_interval()),
            Self::GackCap => Some(cfg.superframe_duration()),
            Self::GackGts => Some(cfg.gack_interval()),
        }
    }
}

impl fmt::Display for AckScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AckScheme {
    type Err = UnknownScheme;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .or(match s.as_str() {
                "regular" | "regular-ack" => Some(Self::RegularAck),
                _ => None,
            })
            .ok_or(UnknownScheme(s))
    }
}

/// Something waiting for CAP access.
#[derive(Debug, Clone, PartialEq)]
pub enum CapItem {
    Command {
        kind: FrameKind,
        dst: NodeAddr,
        msg: HandshakeMsg,
        retries: u8,
    },
    /// GACK whose body is taken from the ledger when the frame goes on air.
    Gack,
}

impl From<Outgoing> for CapItem {
    fn from(o: Outgoing) -> Self {
        CapItem::Command { kind: o.kind, dst: o.dst, msg: o.msg, retries: 0 }
    }
}

/// Result of processing a GACK addressed (partly) to this node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GackOutcome {
    pub released: Vec<QueuedPacket>,
    pub requeued: usize,
    pub dropped: Vec<QueuedPacket>,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub addr: NodeAddr,
    pub parent: Option<NodeAddr>,
    pub scheme: AckScheme,
    pub cfg: SuperframeConfig,
    pub gts: GtsManager,
    pub queue: TxQueue,
    pub ledger: PendingAckLedger,
    pub window: ReceiveWindow,
    pub cap: VecDeque<CapItem>,
    pub csma: Option<Csma>,
    /// Packets were left waiting after a burst (or no GTS exists).
    pub backlog: bool,
    /// Data GTS requests still wanted in this multisuperframe.
    pub wanted: u8,
    pub generates: bool,
    pub rng: ChaCha8Rng,
}

impl Node {
    pub fn new(
        addr: NodeAddr,
        parent: Option<NodeAddr>,
        scheme: AckScheme,
        cfg: SuperframeConfig,
        generates: bool,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            addr,
            parent,
            scheme,
            cfg,
            gts: GtsManager::new(addr, cfg),
            queue: TxQueue::default(),
            ledger: PendingAckLedger::default(),
            window: ReceiveWindow::default(),
            cap: VecDeque::new(),
            csma: None,
            backlog: false,
            wanted: 0,
            generates,
            rng,
        }
    }

    /// Queues an application or forwarded packet toward the parent.
    /// Returns `false` (a queue drop) when the buffer budget is exhausted.
    pub fn app_enqueue(&mut self, info: PacketInfo, payload_len: usize) -> bool {
        match self.parent {
            Some(p) => self.queue.enqueue(info, p, payload_len),
            None => false,
        }
    }

    pub fn tx_data_links(&self) -> usize {
        self.gts.table.descriptors().filter(|d| d.kind == GtsKind::Data && d.direction == Direction::Tx).count()
    }

    fn hears_gack_from_parent(&self) -> bool {
        self.gts
            .table
            .descriptors()
            .any(|d| d.kind == GtsKind::Gack && d.direction == Direction::Rx && Some(d.peer) == self.parent)
    }

    /// Applies a GACK body from `from`: set bits release, clear bits inside
    /// the window requeue.
    pub fn on_gack(&mut self, from: NodeAddr, body: &GackBody) -> GackOutcome {
        let mut out = GackOutcome::default();
        let Some(p) = body.payload_for(self.addr) else {
            return out;
        };
        let mut missing = Vec::new();
        let sent: Vec<(NodeAddr, u8)> =
            self.queue.unacked().filter(|q| q.dst == from).map(|q| (q.dst, q.seq)).collect();
        for (peer, seq) in sent {
            match p.status_of(seq) {
                Some(true) => out.released.extend(self.queue.acknowledge(peer, seq)),
                Some(false) => missing.push((peer, seq)),
                None => {}
            }
        }
        out.requeued = missing.len();
        out.dropped = self.queue.requeue(&missing);
        out.requeued -= out.dropped.len();
        out
    }

    /// Requeues sent-unacked packets whose GACK is overdue; returns the ones
    /// that exhausted their transmissions.
    pub fn stale_sweep(&mut self, now: Symbols) -> Vec<QueuedPacket> {
        let Some(interval) = self.scheme.gack_interval(&self.cfg) else {
            return Vec::new();
        };
        let Some(cutoff) = now.checked_sub(2 * interval) else {
            return Vec::new();
        };
        let stale = self.queue.stale(cutoff);
        self.queue.requeue(&stale)
    }

    /// Multisuperframes without acknowledged traffic after which a transmit
    /// GTS is released. GACK schemes add the time an acknowledgment may take.
    pub fn tx_expiry_msfs(&self) -> u64 {
        let msf = self.cfg.multisuperframe_duration();
        let latency = self.scheme.gack_interval(&self.cfg).map_or(0, |i| (2 * i).div_ceil(msf));
        TX_IDLE_MSFS + latency
    }

    /// Marks the transmit GTS that carried `p` as alive.
    pub fn confirm_delivery(&mut self, p: &QueuedPacket, now: Symbols) {
        let msf = self.cfg.locate(now).msf_index;
        let Some(slot) = p.sent_in else { return };
        if let Some(d) = self.gts.table.descriptor_mut(slot) {
            if d.kind == GtsKind::Data && d.direction == Direction::Tx && d.peer == p.dst {
                d.last_active_msf = msf;
            }
        }
    }

    /// Decides how many data GTS to ask for this multisuperframe.
    pub fn plan_demand(&mut self) {
        let no_link = self.tx_data_links() == 0;
        let missing_gack = self.scheme == AckScheme::GackGts && !no_link && !self.hears_gack_from_parent();
        self.wanted = if self.parent.is_none() {
            0
        } else if self.queue.fifo_len() > QUEUE_CAPACITY / 2 {
            2
        } else if self.backlog || missing_gack || (no_link && (self.generates || !self.queue.is_empty())) {
            1
        } else {
            0
        };
        self.backlog = false;
    }

    /// Superframe-start bookkeeping of the schedule: handshake timers,
    /// idle releases and new requests. Produced frames go to the CAP queue.
    pub fn schedule_upkeep(&mut self, now: Symbols) {
        let mut out = self.gts.tick(now, &mut self.rng);
        let msf = self.cfg.locate(now).msf_index;
        let idle: Vec<_> = self
            .gts
            .table
            .descriptors()
            .filter(|d| d.kind == GtsKind::Data)
            .filter(|d| match d.direction {
                Direction::Tx => msf.saturating_sub(d.last_active_msf) >= self.tx_expiry_msfs(),
                Direction::Rx => msf.saturating_sub(d.last_active_msf) >= RX_IDLE_MSFS,
            })
            .copied()
            .collect();
        for d in idle {
            match d.direction {
                Direction::Tx => out.extend(self.gts.request_deallocation(now, d.cell)),
                Direction::Rx => out.extend(self.gts.expire_rx(d.cell)),
            }
        }
        out.extend(self.gts.prune_gack());
        if self.wanted > 0 {
            if let Some(parent) = self.parent {
                let want_gack = self.scheme == AckScheme::GackGts;
                if let Some(req) = self.gts.request_allocation(now, parent, want_gack, &mut self.rng) {
                    self.wanted -= 1;
                    out.push(req);
                }
            }
        }
        self.cap.extend(out.into_iter().map(CapItem::from));
    }

    /// Handles a received handshake command and queues the replies.
    pub fn on_command(&mut self, kind: FrameKind, src: NodeAddr, msg: &HandshakeMsg, now: Symbols) {
        let out = self.gts.handle(kind, src, msg, now, &mut self.rng);
        self.cap.extend(out.into_iter().map(CapItem::from));
    }

    pub fn has_gack_queued(&self) -> bool {
        self.cap.iter().any(|c| matches!(c, CapItem::Gack))
    }
}
