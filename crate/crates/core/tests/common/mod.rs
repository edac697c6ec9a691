//! Helpers shared by the integration tests: golden vector parsing, a
//! symbol-level slot packer, and a scripted handshake harness.
#![allow(dead_code)]

use std::collections::VecDeque;

use dsme_gack::codec::{FrameKind, GackBody, GackPayload, NodeAddr, BROADCAST};
use dsme_gack::mac::handshake::{GtsManager, GtsOp, Outgoing};
use dsme_gack::mac::schedule::{Direction, GtsKind, NeighborTable, SlotTable};
use dsme_gack::timing::{SuperframeConfig, Symbols};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const GOLDEN: &str = include_str!("../golden/gack_vectors.txt");

#[derive(Debug)]
pub enum Vector {
    Body { octets: Vec<u8>, body: GackBody },
    Seqs { octets: Vec<u8>, node: NodeAddr, base: u8, seqs: Vec<u8> },
    Bad { octets: Vec<u8>, error: String },
}

fn hex(s: &str) -> Vec<u8> {
    s.split_whitespace().map(|b| u8::from_str_radix(b, 16).expect("hex octet")).collect()
}

pub fn golden_vectors() -> Vec<Vector> {
    let mut out = Vec::new();
    for line in GOLDEN.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let f: Vec<&str> = line.split('|').map(str::trim).collect();
        let octets = hex(f[1]);
        match f[0] {
            "body" => {
                let payloads = f[2]
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|p| {
                        let v: Vec<&str> = p.split(':').collect();
                        GackPayload {
                            node_addr: u16::from_str_radix(v[0], 16).unwrap(),
                            base_seq: u8::from_str_radix(v[1], 16).unwrap(),
                            bitmap: (0..v[2].len())
                                .step_by(2)
                                .map(|i| u8::from_str_radix(&v[2][i..i + 2], 16).unwrap())
                                .collect(),
                        }
                    })
                    .collect();
                out.push(Vector::Body { octets, body: GackBody::new(payloads) });
            }
            "seqs" => {
                let v: Vec<&str> = f[2].split(':').collect();
                out.push(Vector::Seqs {
                    octets,
                    node: u16::from_str_radix(v[0], 16).unwrap(),
                    base: u8::from_str_radix(v[1], 16).unwrap(),
                    seqs: v[2].split(',').map(|s| s.trim().parse().unwrap()).collect(),
                });
            }
            "bad" => out.push(Vector::Bad { octets, error: f[2].to_string() }),
            other => panic!("unknown vector kind {other}"),
        }
    }
    out
}

/// Places whole transmission cycles into a slot one symbol at a time and
/// counts the frames that finish inside it.
pub fn greedy_pack(slot: u64, airtime: u64, trailer: u64) -> u64 {
    let (mut t, mut n) = (0u64, 0u64);
    loop {
        let mut s = 0;
        while s < airtime + trailer {
            if t == slot {
                return n;
            }
            t += 1;
            s += 1;
        }
        n += 1;
    }
}

/// One scripted run of an allocation under message loss.
#[derive(Debug, Clone, Copy)]
pub struct LossTrace {
    /// Bit i drops the i-th handshake delivery.
    pub drops: u32,
    /// The request arrives twice, as after a lost MAC acknowledgment.
    pub duplicate_request: bool,
    /// The final notify reaches the responder only after its deadline.
    pub late_notify: bool,
    pub want_gack: bool,
}

impl LossTrace {
    /// Trace number `i` of the scripted family.
    pub fn scripted(i: u32) -> Self {
        Self {
            drops: i & 0xff,
            duplicate_request: i & 0x100 != 0,
            late_notify: i & 0x200 != 0,
            want_gack: i.count_ones() % 2 == 1,
        }
    }
}

#[derive(Debug)]
pub struct TraceOutcome {
    pub succeeded: bool,
    /// Endpoints agree on the new link (success) or every node's slot and
    /// neighbour maps equal their state before the request (failure).
    pub total: bool,
    pub quiescent: bool,
}

const B: usize = 0;
const A: usize = 1;
const N1: usize = 2;
const N2: usize = 3;

/// N1 - A - B - N2: A asks its parent B for a link. N1 hears only A, N2
/// only B.
pub struct Harness {
    nodes: Vec<GtsManager>,
    rng: ChaCha8Rng,
    msf: Symbols,
}

fn hears(from: usize) -> &'static [usize] {
    match from {
        B => &[A, N2],
        A => &[B, N1],
        N1 => &[A],
        _ => &[B],
    }
}

fn addressed(o: &Outgoing, to: usize) -> bool {
    o.dst == BROADCAST || o.dst == to as NodeAddr || o.kind == FrameKind::GtsNotify
}

/// Announcements of the new link; everything else is cleanup.
fn lossy(o: &Outgoing) -> bool {
    o.msg.op == GtsOp::Allocate
}

impl Harness {
    pub fn new(seed: u64) -> Self {
        let cfg = SuperframeConfig::new(3, 5, 8, 5).unwrap();
        let mut h = Self {
            nodes: (0..4).map(|i| GtsManager::new(i as NodeAddr, cfg)).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            msf: cfg.multisuperframe_duration(),
        };
        // existing links so that "unchanged" is not trivially empty
        // (A keeps no GACK-GTS of its own, which would send it down the
        // relocation path instead of a plain rollback)
        h.allocate_cleanly(N1, A, false);
        h.allocate_cleanly(N2, B, true);
        h
    }

    fn allocate_cleanly(&mut self, from: usize, to: usize, gack: bool) {
        let o = self.nodes[from].request_allocation(0, to as NodeAddr, gack, &mut self.rng).expect("free cells");
        self.settle(VecDeque::from([(from, o)]), 0);
    }

    /// Delivers everything reliably until nothing is left to send.
    fn settle(&mut self, mut q: VecDeque<(usize, Outgoing)>, now: Symbols) {
        while let Some((from, o)) = q.pop_front() {
            for &to in hears(from) {
                if addressed(&o, to) {
                    for r in self.nodes[to].handle(o.kind, from as NodeAddr, &o.msg, now, &mut self.rng) {
                        q.push_back((to, r));
                    }
                }
            }
        }
    }

    fn snapshot(&self) -> Vec<(SlotTable, NeighborTable)> {
        self.nodes.iter().map(|n| (n.table.clone(), n.neighbors.clone())).collect()
    }

    pub fn run(mut self, trace: LossTrace) -> TraceOutcome {
        let before = self.snapshot();
        let req =
            self.nodes[A].request_allocation(0, B as NodeAddr, trace.want_gack, &mut self.rng).expect("free cells");
        let mut q = VecDeque::from([(A, req.clone())]);
        if trace.duplicate_request {
            q.push_back((A, req));
        }
        let mut cleanup = VecDeque::new();
        let mut deferred = Vec::new();
        let mut bit = 0;
        while let Some((from, o)) = q.pop_front() {
            for &to in hears(from) {
                if !addressed(&o, to) {
                    continue;
                }
                if lossy(&o) {
                    if trace.late_notify && o.kind == FrameKind::GtsNotify && to == B {
                        deferred.push((from, o.clone()));
                        continue;
                    }
                    let dropped = trace.drops & (1 << bit) != 0;
                    bit += 1;
                    if dropped {
                        continue;
                    }
                }
                for r in self.nodes[to].handle(o.kind, from as NodeAddr, &o.msg, 0, &mut self.rng) {
                    if lossy(&r) {
                        q.push_back((to, r));
                    } else {
                        cleanup.push_back((to, r));
                    }
                }
            }
        }
        self.settle(cleanup, 0);
        // deadlines pass
        let late = self.msf;
        let mut q = VecDeque::new();
        for i in 0..self.nodes.len() {
            for o in self.nodes[i].tick(late, &mut self.rng) {
                q.push_back((i, o));
            }
        }
        self.settle(q, late);
        for (from, o) in deferred {
            let out = self.nodes[B].handle(o.kind, from as NodeAddr, &o.msg, late, &mut self.rng);
            self.settle(out.into_iter().map(|r| (B, r)).collect(), late);
        }
        let later = 3 * self.msf;
        let mut q = VecDeque::new();
        for i in 0..self.nodes.len() {
            for o in self.nodes[i].tick(later, &mut self.rng) {
                q.push_back((i, o));
            }
            for o in self.nodes[i].prune_gack() {
                q.push_back((i, o));
            }
        }
        self.settle(q, later);

        let link = |n: &GtsManager, dir: Direction, peer: usize| {
            n.table
                .descriptors()
                .find(|d| d.kind == GtsKind::Data && d.direction == dir && d.peer == peer as NodeAddr)
                .map(|d| d.cell)
        };
        let rx = link(&self.nodes[B], Direction::Rx, A);
        let tx = link(&self.nodes[A], Direction::Tx, B);
        let quiescent = self.nodes.iter().all(|n| !n.in_flight() && !n.table.has_reservations());
        let succeeded = rx.is_some();
        let total = if succeeded { rx == tx } else { tx.is_none() && self.snapshot() == before };
        TraceOutcome { succeeded, total, quiescent }
    }
}
