//! Distributed 3-way GTS handshake: unicast request, broadcast response,
//! broadcast notify. Failed exchanges are rolled back with broadcast
//! deallocation notifies; every node that removes state because of one
//! rebroadcasts its own, so both link ends' neighbourhoods learn of it.
//!
//! The manager is a pure state machine: it consumes received messages and
//! timer ticks and returns the messages to send, leaving channel access to
//! the caller.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::codec::{FrameKind, NodeAddr, BROADCAST};
use crate::mac::schedule::{
    Availability, Cell, CellSpace, Direction, GtsDescriptor, GtsKind, NeighborTable, SlotEntry, SlotTable,
};
use crate::timing::{SuperframeConfig, Symbols};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtsOp {
    Allocate,
    Deallocate,
    /// A neighbour saw the announced cell already in use.
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtsStatus {
    Success,
    Denied,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandshakeMsg {
    pub id: u64,
    pub op: GtsOp,
    pub status: GtsStatus,
    pub initiator: NodeAddr,
    pub target: NodeAddr,
    pub availability: Option<Availability>,
    pub want_gack: bool,
    pub cell: Option<Cell>,
    pub gack_cell: Option<Cell>,
    /// The GACK cell was created for this handshake (as opposed to reused).
    pub gack_new: bool,
}

impl HandshakeMsg {
    fn new(id: u64, op: GtsOp, initiator: NodeAddr, target: NodeAddr) -> Self {
        Self {
            id,
            op,
            status: GtsStatus::Success,
            initiator,
            target,
            availability: None,
            want_gack: false,
            cell: None,
            gack_cell: None,
            gack_new: false,
        }
    }

    fn pair(&self) -> (NodeAddr, NodeAddr) {
        (self.initiator, self.target)
    }
}

/// A command frame the manager wants sent in the CAP.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub kind: FrameKind,
    pub dst: NodeAddr,
    pub msg: HandshakeMsg,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HandshakeStats {
    pub started: u64,
    pub succeeded: u64,
    pub denied: u64,
    pub timed_out: u64,
    pub rolled_back: u64,
    pub duplicates_reported: u64,
    pub gack_conflicts: u64,
    pub relocations: u64,
}

#[derive(Debug, Clone)]
struct Pending {
    id: u64,
    target: NodeAddr,
    want_gack: bool,
    deadline: Symbols,
}

#[derive(Debug, Clone)]
struct Provisional {
    initiator: NodeAddr,
    cell: Cell,
    gack_cell: Option<Cell>,
    gack_new: bool,
    deadline: Symbols,
}

#[derive(Debug, Clone)]
struct PendingDealloc {
    id: u64,
    peer: NodeAddr,
    cell: Cell,
    deadline: Symbols,
}

#[derive(Debug, Clone)]
pub struct GtsManager {
    addr: NodeAddr,
    cfg: SuperframeConfig,
    space: CellSpace,
    pub table: SlotTable,
    pub neighbors: NeighborTable,
    pending: Option<Pending>,
    provisional: BTreeMap<u64, Provisional>,
    deallocs: Vec<PendingDealloc>,
    /// Consecutive GACK-cell conflicts of the current allocation attempt.
    gack_conflicts: u8,
    excluded_sf: Option<u32>,
    backoff_until: Symbols,
    next_id: u32,
    pub stats: HandshakeStats,
}

impl GtsManager {
    pub fn new(addr: NodeAddr, cfg: SuperframeConfig) -> Self {
        Self {
            addr,
            cfg,
            space: CellSpace::new(&cfg),
            table: SlotTable::default(),
            neighbors: NeighborTable::default(),
            pending: None,
            provisional: BTreeMap::new(),
            deallocs: Vec::new(),
            gack_conflicts: 0,
            excluded_sf: None,
            backoff_until: 0,
            next_id: 0,
            stats: HandshakeStats::default(),
        }
    }

    pub fn addr(&self) -> NodeAddr {
        self.addr
    }

    /// True while an allocation this node initiated awaits its response.
    pub fn is_requesting(&self) -> bool {
        self.pending.is_some()
    }

    /// True while any exchange involving this node is unfinished.
    pub fn in_flight(&self) -> bool {
        self.pending.is_some() || !self.provisional.is_empty() || !self.deallocs.is_empty()
    }

    pub fn can_request(&self, now: Symbols) -> bool {
        self.pending.is_none() && now >= self.backoff_until
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id = self.next_id.wrapping_add(1);
        ((self.addr as u64) << 32) | self.next_id as u64
    }

    fn msf(&self) -> Symbols {
        self.cfg.multisuperframe_duration()
    }

    fn backoff<R: Rng + ?Sized>(&mut self, now: Symbols, rng: &mut R) {
        self.backoff_until = now + rng.random_range(0..self.msf());
    }

    /// Cells this node could use: slot time free and not announced nearby.
    fn usable(&self, c: &Cell) -> bool {
        self.table.is_free(c.slot_time()) && !self.neighbors.contains(c)
    }

    fn availability(&self) -> Availability {
        let mut a = Availability::empty(&self.space);
        for (i, c) in self.space.cells().enumerate() {
            if Some(c.sf) != self.excluded_sf && self.usable(&c) {
                a.set(i);
            }
        }
        a
    }

    /// Starts an allocation toward `target`. Returns `None` if busy, backing
    /// off, or no cell is available.
    pub fn request_allocation<R: Rng + ?Sized>(
        &mut self,
        now: Symbols,
        target: NodeAddr,
        want_gack: bool,
        rng: &mut R,
    ) -> Option<Outgoing> {
        if !self.can_request(now) {
            return None;
        }
        let availability = self.availability();
        if availability.count() == 0 {
            self.backoff(now, rng);
            return None;
        }
        let id = self.fresh_id();
        self.pending = Some(Pending { id, target, want_gack, deadline: now + self.msf() });
        self.stats.started += 1;
        let mut msg = HandshakeMsg::new(id, GtsOp::Allocate, self.addr, target);
        msg.availability = Some(availability);
        msg.want_gack = want_gack;
        Some(Outgoing { kind: FrameKind::GtsRequest, dst: target, msg })
    }

    /// Releases a transmit data GTS. The local descriptor is removed at once;
    /// the peer confirms with a response and this node then notifies.
    pub fn request_deallocation(&mut self, now: Symbols, cell: Cell) -> Option<Outgoing> {
        let d = self.table.remove_if(cell, |d| d.direction == Direction::Tx && d.kind == GtsKind::Data)?;
        let id = self.fresh_id();
        self.deallocs.push(PendingDealloc { id, peer: d.peer, cell, deadline: now + self.msf() });
        let mut msg = HandshakeMsg::new(id, GtsOp::Deallocate, self.addr, d.peer);
        msg.cell = Some(cell);
        Some(Outgoing { kind: FrameKind::GtsRequest, dst: d.peer, msg })
    }

    /// Drops a receive descriptor (expiration) and announces it.
    pub fn expire_rx(&mut self, cell: Cell) -> Option<Outgoing> {
        let d = self.table.remove_if(cell, |d| d.direction == Direction::Rx && d.kind == GtsKind::Data)?;
        let mut msg = HandshakeMsg::new(self.fresh_id(), GtsOp::Deallocate, d.peer, self.addr);
        msg.cell = Some(cell);
        Some(Outgoing { kind: FrameKind::GtsNotify, dst: BROADCAST, msg })
    }

    /// Drops own GACK-GTS that no longer serve any receive link, and receive
    /// GACK descriptors whose sender no longer has a link from this node.
    pub fn prune_gack(&mut self) -> Vec<Outgoing> {
        let mut out = Vec::new();
        let has_rx_data = self.table.descriptors().any(|d| d.kind == GtsKind::Data && d.direction == Direction::Rx);
        let mut doomed = Vec::new();
        for d in self.table.descriptors() {
            if d.kind != GtsKind::Gack {
                continue;
            }
            let orphan = match d.direction {
                Direction::Tx => !has_rx_data && self.provisional.is_empty(),
                Direction::Rx => {
                    !self.table.descriptors().any(|x| x.kind == GtsKind::Data && x.peer == d.peer)
                        && self.pending.as_ref().is_none_or(|p| p.target != d.peer)
                }
            };
            if orphan {
                doomed.push(*d);
            }
        }
        for d in doomed {
            self.table.remove_if(d.cell, |_| true);
            if d.direction == Direction::Tx {
                let mut msg = HandshakeMsg::new(self.fresh_id(), GtsOp::Deallocate, self.addr, BROADCAST);
                msg.gack_cell = Some(d.cell);
                msg.gack_new = true;
                out.push(Outgoing { kind: FrameKind::GtsNotify, dst: BROADCAST, msg });
            }
        }
        out
    }

    /// Expires overdue exchanges.
    pub fn tick<R: Rng + ?Sized>(&mut self, now: Symbols, rng: &mut R) -> Vec<Outgoing> {
        let mut out = Vec::new();
        if self.pending.as_ref().is_some_and(|p| now >= p.deadline) {
            self.pending = None;
            self.stats.timed_out += 1;
            self.backoff(now, rng);
        }
        let expired: Vec<u64> = self.provisional.iter().filter(|(_, p)| now >= p.deadline).map(|(id, _)| *id).collect();
        for id in expired {
            self.stats.timed_out += 1;
            out.extend(self.rollback_provisional(id));
        }
        let (done, keep): (Vec<_>, Vec<_>) = self.deallocs.drain(..).partition(|d| now >= d.deadline);
        self.deallocs = keep;
        for d in done {
            out.push(self.dealloc_notify(d.id, self.addr, d.peer, d.cell));
        }
        out
    }

    fn dealloc_notify(&self, id: u64, initiator: NodeAddr, target: NodeAddr, cell: Cell) -> Outgoing {
        let mut msg = HandshakeMsg::new(id, GtsOp::Deallocate, initiator, target);
        msg.cell = Some(cell);
        Outgoing { kind: FrameKind::GtsNotify, dst: BROADCAST, msg }
    }

    fn rollback_provisional(&mut self, id: u64) -> Option<Outgoing> {
        let p = self.provisional.remove(&id)?;
        self.table.release_reservations(id);
        self.stats.rolled_back += 1;
        let mut msg = HandshakeMsg::new(id, GtsOp::Deallocate, p.initiator, self.addr);
        msg.cell = Some(p.cell);
        if p.gack_new {
            msg.gack_cell = p.gack_cell;
            msg.gack_new = true;
        }
        // addressed so the initiator acknowledges it; neighbours overhear
        Some(Outgoing { kind: FrameKind::GtsNotify, dst: p.initiator, msg })
    }

    /// Processes a received handshake frame.
    pub fn handle<R: Rng + ?Sized>(
        &mut self,
        kind: FrameKind,
        src: NodeAddr,
        msg: &HandshakeMsg,
        now: Symbols,
        rng: &mut R,
    ) -> Vec<Outgoing> {
        let me = self.addr;
        match (kind, msg.op) {
            (FrameKind::GtsRequest, GtsOp::Allocate) if msg.target == me => {
                self.on_alloc_request(msg, now, rng).into_iter().collect()
            }
            (FrameKind::GtsRequest, GtsOp::Deallocate) if msg.target == me => {
                let cell = msg.cell.expect("deallocation names a cell");
                self.table.remove_if(cell, |d| d.peer == msg.initiator && d.direction == Direction::Rx);
                let mut reply = msg.clone();
                reply.status = GtsStatus::Success;
                vec![Outgoing { kind: FrameKind::GtsResponse, dst: BROADCAST, msg: reply }]
            }
            (FrameKind::GtsRequest, GtsOp::Duplicate) if msg.target == me || msg.initiator == me => {
                self.on_duplicate(msg)
            }
            (FrameKind::GtsResponse, GtsOp::Allocate) if msg.initiator == me => self.on_alloc_response(msg, now, rng),
            (FrameKind::GtsResponse, GtsOp::Deallocate) if msg.initiator == me => {
                match self.deallocs.iter().position(|d| d.id == msg.id) {
                    Some(i) => {
                        let d = self.deallocs.remove(i);
                        vec![self.dealloc_notify(d.id, me, d.peer, d.cell)]
                    }
                    None => Vec::new(),
                }
            }
            (FrameKind::GtsNotify, GtsOp::Allocate) if msg.target == me => self.on_alloc_notify(msg, now),
            (FrameKind::GtsNotify, GtsOp::Deallocate) if msg.target == me || msg.initiator == me => {
                self.on_dealloc_notify(src, msg)
            }
            (FrameKind::GtsChange, _) if msg.target == me => {
                let cell = msg.cell.expect("change names a cell");
                match self.table.remove_if(cell, |d| d.peer == msg.initiator) {
                    Some(_) => vec![self.dealloc_notify(msg.id, me, msg.initiator, cell)],
                    None => Vec::new(),
                }
            }
            (FrameKind::GtsResponse | FrameKind::GtsNotify, _) => self.overhear(src, msg),
            _ => Vec::new(),
        }
    }

    fn within_gack_interval(&self, data: &Cell, gack: &Cell) -> bool {
        let msf = self.msf();
        let data_end = data.offset(&self.cfg) + self.cfg.slot_duration();
        let start = gack.offset(&self.cfg);
        (start + msf - data_end % msf) % msf < self.cfg.gack_interval()
    }

    fn on_alloc_request<R: Rng + ?Sized>(&mut self, msg: &HandshakeMsg, now: Symbols, rng: &mut R) -> Option<Outgoing> {
        let avail = msg.availability.as_ref()?;
        let mut reply = msg.clone();
        reply.availability = None;
        if let Some(p) = self.provisional.get(&msg.id) {
            // a retransmitted request: repeat the earlier answer
            reply.cell = Some(p.cell);
            reply.gack_cell = p.gack_cell;
            reply.gack_new = p.gack_new;
            return Some(Outgoing { kind: FrameKind::GtsResponse, dst: BROADCAST, msg: reply });
        }
        let candidates: Vec<Cell> = self
            .space
            .cells()
            .enumerate()
            .filter(|(i, c)| avail.contains(*i) && self.usable(c))
            .map(|(_, c)| c)
            .collect();
        // data GTS come from the beginning of the CFP
        let data = candidates.iter().map(|c| c.slot).min().and_then(|first| {
            let early: Vec<Cell> = candidates.iter().copied().filter(|c| c.slot == first).collect();
            early.choose(rng).copied()
        });
        let Some(data) = data else {
            reply.status = GtsStatus::Denied;
            return Some(Outgoing { kind: FrameKind::GtsResponse, dst: BROADCAST, msg: reply });
        };
        let mut gack = None;
        let mut gack_new = false;
        if msg.want_gack {
            gack = self
                .table
                .descriptors()
                .find(|d| {
                    d.kind == GtsKind::Gack && d.direction == Direction::Tx && self.within_gack_interval(&data, &d.cell)
                })
                .map(|d| d.cell);
            if gack.is_none() {
                // new GACK-GTS come from the tail
                let tail: Vec<Cell> = self
                    .space
                    .cells()
                    .filter(|c| {
                        c.slot_time() != data.slot_time() && self.usable(c) && self.within_gack_interval(&data, c)
                    })
                    .collect();
                gack = tail.iter().map(|c| c.slot).max().and_then(|last| {
                    let late: Vec<Cell> = tail.iter().copied().filter(|c| c.slot == last).collect();
                    late.choose(rng).copied()
                });
                gack_new = true;
                if gack.is_none() {
                    reply.status = GtsStatus::Denied;
                    return Some(Outgoing { kind: FrameKind::GtsResponse, dst: BROADCAST, msg: reply });
                }
            }
        }
        self.table.reserve(msg.id, data);
        if gack_new {
            self.table.reserve(msg.id, gack.expect("checked above"));
        }
        self.provisional.insert(
            msg.id,
            Provisional { initiator: msg.initiator, cell: data, gack_cell: gack, gack_new, deadline: now + self.msf() },
        );
        reply.cell = Some(data);
        reply.gack_cell = gack;
        reply.gack_new = gack_new;
        Some(Outgoing { kind: FrameKind::GtsResponse, dst: BROADCAST, msg: reply })
    }

    fn on_alloc_response<R: Rng + ?Sized>(&mut self, msg: &HandshakeMsg, now: Symbols, rng: &mut R) -> Vec<Outgoing> {
        let Some(p) = self.pending.clone().filter(|p| p.id == msg.id) else {
            return Vec::new();
        };
        self.pending = None;
        if msg.status == GtsStatus::Denied {
            self.stats.denied += 1;
            self.backoff(now, rng);
            return Vec::new();
        }
        let cell = msg.cell.expect("successful response names a cell");
        let rollback = || {
            let mut r = msg.clone();
            r.op = GtsOp::Deallocate;
            r.gack_cell = msg.gack_cell.filter(|_| msg.gack_new);
            Outgoing { kind: FrameKind::GtsNotify, dst: BROADCAST, msg: r }
        };
        if !self.usable(&cell) {
            self.stats.rolled_back += 1;
            self.backoff(now, rng);
            return vec![rollback()];
        }
        let mut install_gack = None;
        if p.want_gack {
            let g = msg.gack_cell.expect("gack flag answered with a cell");
            let have = matches!(self.table.get(g.slot_time()),
                Some(SlotEntry::Installed(d)) if d.cell == g && d.kind == GtsKind::Gack && d.direction == Direction::Rx);
            if !have {
                if g.slot_time() == cell.slot_time() || !self.table.is_free(g.slot_time()) {
                    return self.on_gack_conflict(msg, cell, g, now, rng, rollback());
                }
                install_gack = Some(g);
            }
        }
        self.gack_conflicts = 0;
        self.excluded_sf = None;
        let msf = self.cfg.locate(now).msf_index;
        self.table.install(GtsDescriptor {
            cell,
            direction: Direction::Tx,
            kind: GtsKind::Data,
            peer: p.target,
            last_active_msf: msf,
            installed_msf: msf,
        });
        if let Some(g) = install_gack {
            self.table.install(GtsDescriptor {
                cell: g,
                direction: Direction::Rx,
                kind: GtsKind::Gack,
                peer: p.target,
                last_active_msf: msf,
                installed_msf: msf,
            });
        }
        self.stats.succeeded += 1;
        let mut notify = msg.clone();
        notify.op = GtsOp::Allocate;
        vec![Outgoing { kind: FrameKind::GtsNotify, dst: BROADCAST, msg: notify }]
    }

    fn on_gack_conflict<R: Rng + ?Sized>(
        &mut self,
        msg: &HandshakeMsg,
        cell: Cell,
        gack: Cell,
        now: Symbols,
        rng: &mut R,
        rollback: Outgoing,
    ) -> Vec<Outgoing> {
        self.stats.gack_conflicts += 1;
        self.stats.rolled_back += 1;
        self.gack_conflicts += 1;
        let mut out = vec![rollback];
        if self.gack_conflicts < 2 {
            // try another superframe straight away
            self.excluded_sf = Some(cell.sf);
            out.extend(self.request_allocation(now, msg.target, true, rng));
            return out;
        }
        self.gack_conflicts = 0;
        self.excluded_sf = None;
        self.stats.relocations += 1;
        if let Some(d) = self.table.descriptor(gack.slot_time()).copied() {
            self.table.remove_if(d.cell, |_| true);
            match (d.kind, d.direction) {
                (GtsKind::Data, Direction::Rx) => {
                    let mut m = HandshakeMsg::new(self.fresh_id(), GtsOp::Deallocate, self.addr, d.peer);
                    m.cell = Some(d.cell);
                    out.push(Outgoing { kind: FrameKind::GtsChange, dst: d.peer, msg: m.clone() });
                    out.push(self.dealloc_notify(m.id, d.peer, self.addr, d.cell));
                }
                (GtsKind::Data, Direction::Tx) => {
                    let id = self.fresh_id();
                    self.deallocs.push(PendingDealloc { id, peer: d.peer, cell: d.cell, deadline: now + self.msf() });
                    let mut m = HandshakeMsg::new(id, GtsOp::Deallocate, self.addr, d.peer);
                    m.cell = Some(d.cell);
                    out.push(Outgoing { kind: FrameKind::GtsRequest, dst: d.peer, msg: m });
                }
                (GtsKind::Gack, Direction::Tx) => {
                    let mut m = HandshakeMsg::new(self.fresh_id(), GtsOp::Deallocate, self.addr, BROADCAST);
                    m.gack_cell = Some(d.cell);
                    m.gack_new = true;
                    out.push(Outgoing { kind: FrameKind::GtsNotify, dst: BROADCAST, msg: m });
                }
                (GtsKind::Gack, Direction::Rx) => {}
            }
        }
        out
    }

    fn on_alloc_notify(&mut self, msg: &HandshakeMsg, now: Symbols) -> Vec<Outgoing> {
        if self.provisional.get(&msg.id).is_some_and(|p| Some(p.cell) != msg.cell) {
            self.rollback_provisional(msg.id);
        }
        let Some(p) = self.provisional.remove(&msg.id) else {
            // we already rolled back; make sure the initiator does too
            let cell = msg.cell.expect("notify names a cell");
            let mut out = self.dealloc_notify(msg.id, msg.initiator, self.addr, cell);
            out.dst = msg.initiator;
            return vec![out];
        };
        self.table.release_reservations(msg.id);
        let msf = self.cfg.locate(now).msf_index;
        self.table.install(GtsDescriptor {
            cell: p.cell,
            direction: Direction::Rx,
            kind: GtsKind::Data,
            peer: p.initiator,
            last_active_msf: msf,
            installed_msf: msf,
        });
        if p.gack_new {
            if let Some(g) = p.gack_cell {
                self.table.install(GtsDescriptor {
                    cell: g,
                    direction: Direction::Tx,
                    kind: GtsKind::Gack,
                    peer: BROADCAST,
                    last_active_msf: msf,
                    installed_msf: msf,
                });
            }
        }
        Vec::new()
    }

    fn on_dealloc_notify(&mut self, src: NodeAddr, msg: &HandshakeMsg) -> Vec<Outgoing> {
        let me = self.addr;
        let mut removed = false;
        if msg.target == me && self.provisional.contains_key(&msg.id) {
            self.provisional.remove(&msg.id);
            self.table.release_reservations(msg.id);
            self.stats.rolled_back += 1;
            removed = true;
        }
        if let Some(cell) = msg.cell {
            let peer = if msg.initiator == me { msg.target } else { msg.initiator };
            removed |= self.table.remove_if(cell, |d| d.kind == GtsKind::Data && d.peer == peer).is_some();
        }
        if let (Some(g), true) = (msg.gack_cell, msg.gack_new) {
            // a departing GACK-GTS of the node we listen to
            self.table.remove_if(g, |d| d.kind == GtsKind::Gack && d.direction == Direction::Rx && d.peer == src);
        }
        self.forget(msg);
        if !removed {
            return Vec::new();
        }
        let mut echo = msg.clone();
        echo.status = GtsStatus::Success;
        vec![Outgoing { kind: FrameKind::GtsNotify, dst: BROADCAST, msg: echo }]
    }

    fn on_duplicate(&mut self, msg: &HandshakeMsg) -> Vec<Outgoing> {
        let Some(cell) = msg.cell else { return Vec::new() };
        self.neighbors.insert(cell, (BROADCAST, BROADCAST));
        if self.provisional.contains_key(&msg.id) {
            return self.rollback_provisional(msg.id).into_iter().collect();
        }
        let me = self.addr;
        let peer = if msg.initiator == me { msg.target } else { msg.initiator };
        if let Some(d) = self.table.remove_if(cell, |d| d.peer == peer || d.peer == BROADCAST) {
            self.stats.rolled_back += 1;
            let mut out = msg.clone();
            out.op = GtsOp::Deallocate;
            if d.kind == GtsKind::Gack {
                out.cell = None;
                out.gack_cell = Some(cell);
                out.gack_new = true;
            }
            return vec![Outgoing { kind: FrameKind::GtsNotify, dst: BROADCAST, msg: out }];
        }
        Vec::new()
    }

    fn forget(&mut self, msg: &HandshakeMsg) {
        if let Some(c) = msg.cell {
            self.neighbors.remove_pair(&c, msg.pair());
        }
        if let (Some(g), true) = (msg.gack_cell, msg.gack_new) {
            let owner = if msg.target == BROADCAST { msg.initiator } else { msg.target };
            self.neighbors.remove_pair(&g, (owner, BROADCAST));
        }
    }

    fn conflicts(&self, cell: &Cell, pair: (NodeAddr, NodeAddr)) -> bool {
        let own = match self.table.get(cell.slot_time()) {
            Some(SlotEntry::Installed(d)) => {
                d.cell == *cell && !(d.kind == GtsKind::Gack && d.direction == Direction::Rx && d.peer == pair.0)
            }
            Some(SlotEntry::Reserved { cell: c, .. }) => c == cell,
            None => false,
        };
        own || self.neighbors.user(cell).is_some_and(|p| p != pair)
    }

    fn overhear(&mut self, src: NodeAddr, msg: &HandshakeMsg) -> Vec<Outgoing> {
        match msg.op {
            GtsOp::Deallocate => {
                self.forget(msg);
                Vec::new()
            }
            GtsOp::Duplicate => Vec::new(),
            GtsOp::Allocate if msg.status == GtsStatus::Success => {
                let mut announced = Vec::new();
                if let Some(c) = msg.cell {
                    announced.push((c, msg.pair()));
                }
                if let (Some(g), true) = (msg.gack_cell, msg.gack_new) {
                    announced.push((g, (msg.target, BROADCAST)));
                }
                for (c, pair) in &announced {
                    if self.conflicts(c, *pair) {
                        self.stats.duplicates_reported += 1;
                        let mut dup = msg.clone();
                        dup.op = GtsOp::Duplicate;
                        dup.cell = Some(*c);
                        dup.gack_cell = None;
                        dup.gack_new = false;
                        return vec![Outgoing { kind: FrameKind::GtsRequest, dst: src, msg: dup }];
                    }
                }
                for (c, pair) in announced {
                    self.neighbors.insert(c, pair);
                }
                Vec::new()
            }
            GtsOp::Allocate => Vec::new(),
        }
    }
}
