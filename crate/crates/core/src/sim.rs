//! Network simulation: wires the MAC of every node to the event queue and
//! the shared medium, generates traffic and collects per-run statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::codec::{
    ifs_symbols, Frame, FrameKind, GackBody, NodeAddr, PacketInfo, ACK_OVERHEAD_SYMBOLS, AIFS_SYMBOLS, BROADCAST,
    LIFS_SYMBOLS, MAC_ACK_WAIT_SYMBOLS, MAX_BEACON_GACK_OCTETS, MAX_MAC_PAYLOAD, TURNAROUND_SYMBOLS,
};
use crate::kernel::{EventQueue, Medium, RadioBucket, RadioLedger, RadioState, Reception, TxId};
use crate::mac::csma::{
    align_up, CcaOutcome, Csma, CCA_SYMBOLS, CONTENTION_WINDOW, MAX_FRAME_RETRIES, UNIT_BACKOFF_PERIOD,
};
use crate::mac::handshake::HandshakeStats;
use crate::mac::queue::{DropCause, QueuedPacket};
use crate::mac::schedule::{Cell, Direction, GtsDescriptor, GtsKind};
use crate::mac::{AckScheme, CapItem, Node};
use crate::timing::{seconds_to_symbols, symbols_to_seconds, SuperframeConfig, Symbols, CAP_SLOTS, FIRST_CAP_SLOT};
use crate::topology::Topology;

/// Common channel of beacons and the CAP.
pub const COMMON_CHANNEL: u8 = 0;
/// Listen time at the start of a receive GTS, and after every reception in
/// it, before the radio is switched off.
pub const RX_GUARD_SYMBOLS: Symbols = 100;
/// Default jamming burst length (about 5 ms).
pub const DEFAULT_JAM_DURATION: Symbols = 312;

const TRAFFIC_STREAM: u64 = 0;
const MAC_STREAM: u64 = 1;
const JAMMER_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadSpec {
    Fixed(usize),
    Uniform { lo: usize, hi: usize },
}

impl PayloadSpec {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            PayloadSpec::Fixed(p) => p,
            PayloadSpec::Uniform { lo, hi } => rng.random_range(lo..=hi),
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            PayloadSpec::Fixed(p) => (1..=MAX_MAC_PAYLOAD).contains(&p),
            PayloadSpec::Uniform { lo, hi } => lo >= 1 && lo <= hi && hi <= MAX_MAC_PAYLOAD,
        }
    }
}

/// Poisson packet source of one node: exponential gaps with mean `tau`
/// seconds and payloads drawn from a [`PayloadSpec`].
#[derive(Debug, Clone)]
pub struct TrafficSource {
    gap: Exp<f64>,
    payload: PayloadSpec,
    rng: ChaCha8Rng,
}

impl TrafficSource {
    pub fn new(tau: f64, payload: PayloadSpec, seed: u64, node: usize) -> Result<Self, SimError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(SimError::Tau(tau));
        }
        if !payload.is_valid() {
            return Err(SimError::Payload(payload));
        }
        let gap = Exp::new(1.0 / tau).map_err(|_| SimError::Tau(tau))?;
        Ok(Self { gap, payload, rng: stream_rng(seed, 4 * node as u64 + TRAFFIC_STREAM) })
    }

    /// Time to the next arrival, at least one symbol.
    pub fn next_gap(&mut self) -> Symbols {
        seconds_to_symbols(self.gap.sample(&mut self.rng)).max(1)
    }

    pub fn next_payload(&mut self) -> usize {
        self.payload.draw(&mut self.rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Jammer {
    pub interval: Symbols,
    pub duration: Symbols,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub scheme: AckScheme,
    pub cfg: SuperframeConfig,
    pub topology: Topology,
    /// Mean packet inter-arrival time per node in seconds; `None` disables
    /// traffic.
    pub tau: Option<f64>,
    pub payload: PayloadSpec,
    pub jammer: Option<Jammer>,
    pub seed: u64,
    pub packets_per_node: u64,
    /// Upper bound on the warm-up, in beacon intervals.
    pub max_warmup_bis: u64,
    /// Time allowed after generation stops, in beacon intervals.
    pub drain_bis: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("{needed} coordinators need beacon slots but a beacon interval has {available} superframes")]
    BeaconSlots { needed: usize, available: u32 },
    #[error("invalid payload specification {0:?}")]
    Payload(PayloadSpec),
    #[error("packet interval must be positive, got {0}")]
    Tau(f64),
    #[error("jammer interval must exceed its duration")]
    Jammer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TxPurpose {
    Data,
    Ack,
    Gts,
    Beacon,
    Cap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CsmaStep {
    Assess(u8),
    Transmit,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Slot,
    TxEnd { node: usize, tx: TxId, purpose: TxPurpose },
    BurstNext { node: usize, token: u64 },
    AckTimeout { node: usize, token: u64 },
    SendAck { node: usize, dst: NodeAddr, seq: u8 },
    Csma { node: usize, token: u64, step: CsmaStep },
    CapAckTimeout { node: usize, token: u64 },
    RxGuard { node: usize, token: u64 },
    GackNext { node: usize, token: u64 },
    Arrival { node: usize },
    JamStart,
    JamEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Measuring,
    Draining,
    Done,
}

#[derive(Debug, Clone, Copy)]
struct Burst {
    peer: NodeAddr,
    channel: u8,
    slot_end: Symbols,
    cell: Cell,
}

#[derive(Debug, Clone)]
struct Runtime {
    token: u64,
    burst: Option<Burst>,
    awaiting_ack: Option<(NodeAddr, u8, usize)>,
    /// Receive-role cell of the current CFP slot.
    rx_cell: Option<Cell>,
    gack_slot_end: Option<(u8, Symbols)>,
    csma_active: bool,
    cap_awaiting: Option<NodeAddr>,
    beacon_sf: Option<u32>,
    measured_generated: u64,
    traffic: Option<TrafficSource>,
}

#[derive(Debug, Clone)]
struct PacketRecord {
    generated_at: Symbols,
    measured: bool,
    copies: u32,
    delivered: bool,
    last_cause: DropCause,
}

/// Outcome counters of one simulation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub generated: u64,
    pub delivered: u64,
    pub dropped_queue: u64,
    pub dropped_retry: u64,
    pub residual: u64,
    pub delay_per_hop_sum: f64,
    pub delay_samples: u64,
    pub ack_delay_sum: f64,
    pub ack_delay_samples: u64,
    /// Mean seconds per node in each radio state over the measured window.
    pub tx_time: f64,
    pub rx_time: f64,
    pub idle_time: f64,
    pub off_time: f64,
    pub measured_seconds: f64,
    pub handshakes: HandshakeStats,
    pub channel_access_failures: u64,
    /// GACK frames and GACK-carrying beacons put on air.
    pub gacks_sent: u64,
    /// Sent packets returned to the queue by the stale sweep.
    pub stale_requeues: u64,
    pub events: u64,
}

impl RunStats {
    pub fn pdr(&self) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            self.delivered as f64 / self.generated as f64
        }
    }

    pub fn mean_delay_per_hop(&self) -> Option<f64> {
        (self.delay_samples > 0).then(|| self.delay_per_hop_sum / self.delay_samples as f64)
    }

    pub fn mean_ack_delay(&self) -> Option<f64> {
        (self.ack_delay_samples > 0).then(|| self.ack_delay_sum / self.ack_delay_samples as f64)
    }

    /// Share of time the radio was receiving or listening.
    pub fn listen_share(&self) -> f64 {
        let total = self.tx_time + self.rx_time + self.idle_time + self.off_time;
        if total == 0.0 {
            0.0
        } else {
            (self.rx_time + self.idle_time) / total
        }
    }
}

pub struct Simulation {
    params: SimParams,
    queue: EventQueue<Ev>,
    medium: Medium,
    nodes: Vec<Node>,
    rt: Vec<Runtime>,
    packets: Vec<PacketRecord>,
    phase: Phase,
    measure_start: Symbols,
    ledger_start: RadioLedger,
    drain_end: Symbols,
    /// Measured packets neither delivered nor out of copies.
    unresolved: u64,
    warmup_bis: u64,
    stats: RunStats,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

impl Simulation {
    pub fn new(params: SimParams) -> Result<Self, SimError> {
        if !params.payload.is_valid() {
            return Err(SimError::Payload(params.payload));
        }
        if let Some(tau) = params.tau {
            TrafficSource::new(tau, params.payload, params.seed, 0)?;
        }
        if params.jammer.is_some_and(|j| j.duration == 0 || j.interval <= j.duration) {
            return Err(SimError::Jammer);
        }
        let topo = &params.topology;
        let n = topo.len();
        let coordinators: Vec<usize> = (0..n).filter(|&i| topo.is_coordinator(i)).collect();
        let available = params.cfg.superframes_per_beacon_interval();
        if coordinators.len() > available as usize {
            return Err(SimError::BeaconSlots { needed: coordinators.len(), available });
        }
        let nodes: Vec<Node> = (0..n)
            .map(|i| {
                Node::new(
                    i as NodeAddr,
                    topo.parent(i).map(|p| p as NodeAddr),
                    params.scheme,
                    params.cfg,
                    params.tau.is_some() && i != 0,
                    stream_rng(params.seed, 4 * i as u64 + MAC_STREAM),
                )
            })
            .collect();
        let rt = (0..n)
            .map(|i| Runtime {
                token: 0,
                burst: None,
                awaiting_ack: None,
                rx_cell: None,
                gack_slot_end: None,
                csma_active: false,
                cap_awaiting: None,
                beacon_sf: coordinators.iter().position(|&c| c == i).map(|k| k as u32),
                measured_generated: 0,
                traffic: params
                    .tau
                    .filter(|_| i != 0)
                    .map(|tau| TrafficSource::new(tau, params.payload, params.seed, i).expect("validated above")),
            })
            .collect();
        let mut queue = EventQueue::new();
        queue.schedule(0, Ev::Slot).expect("empty queue");
        let mut jam_rng = stream_rng(params.seed, JAMMER_STREAM);
        if let Some(j) = params.jammer {
            let first = jam_rng.random_range(0..j.interval);
            queue.schedule(first, Ev::JamStart).expect("future");
        }
        let mut sim = Self {
            medium: Medium::new(topo.adjacency().to_vec()),
            queue,
            nodes,
            rt,
            packets: Vec::new(),
            phase: Phase::Warmup,
            measure_start: 0,
            ledger_start: RadioLedger { per_node: vec![[0; 4]; n] },
            drain_end: Symbols::MAX,
            unresolved: 0,
            warmup_bis: 0,
            stats: RunStats::default(),
            params,
        };
        for i in 0..n {
            sim.schedule_arrival(i);
        }
        Ok(sim)
    }

    pub fn now(&self) -> Symbols {
        self.queue.now()
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn medium(&self) -> &Medium {
        &self.medium
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    /// Starts the measured window now, skipping the warm-up rule.
    pub fn start_measuring(&mut self) {
        self.begin_measurement();
    }

    /// Dispatches every event before `t_end` and reports on the window
    /// measured so far.
    pub fn run_until(&mut self, t_end: Symbols) -> RunStats {
        while let Some(ev) = self.queue.pop_before(t_end) {
            self.dispatch(ev.kind);
            if self.phase == Phase::Done {
                break;
            }
        }
        if self.phase != Phase::Done {
            self.queue.advance_to(t_end);
        }
        self.report()
    }

    /// Runs warm-up, the measured window and the drain period.
    pub fn run(mut self) -> RunStats {
        while self.phase != Phase::Done {
            let Some(ev) = self.queue.pop_before(Symbols::MAX) else { break };
            self.dispatch(ev.kind);
        }
        self.report()
    }

    fn report(&self) -> RunStats {
        let now = self.now();
        let mut s = self.stats.clone();
        for p in self.packets.iter().filter(|p| p.measured) {
            s.generated += 1;
            if p.delivered {
                s.delivered += 1;
            } else if p.copies == 0 {
                match p.last_cause {
                    DropCause::QueueFull => s.dropped_queue += 1,
                    DropCause::RetryLimit => s.dropped_retry += 1,
                }
            } else {
                s.residual += 1;
            }
        }
        if self.phase != Phase::Warmup {
            let ledger = self.medium.ledger_at(now);
            let n = self.nodes.len() as f64;
            let mean = |b: RadioBucket| {
                (0..self.nodes.len())
                    .map(|i| symbols_to_seconds(ledger.get(i, b) - self.ledger_start.get(i, b)))
                    .sum::<f64>()
                    / n
            };
            s.tx_time = mean(RadioBucket::Transmit);
            s.rx_time = mean(RadioBucket::Receive);
            s.idle_time = mean(RadioBucket::Listen);
            s.off_time = mean(RadioBucket::Off);
            s.measured_seconds = symbols_to_seconds(now - self.measure_start);
        }
        for node in &self.nodes {
            let h = &node.gts.stats;
            let t = &mut s.handshakes;
            t.started += h.started;
            t.succeeded += h.succeeded;
            t.denied += h.denied;
            t.timed_out += h.timed_out;
            t.rolled_back += h.rolled_back;
            t.duplicates_reported += h.duplicates_reported;
            t.gack_conflicts += h.gack_conflicts;
            t.relocations += h.relocations;
        }
        s.events = self.queue.dispatched();
        s
    }

    fn cfg(&self) -> &SuperframeConfig {
        &self.params.cfg
    }

    fn bump(&mut self, n: usize) -> u64 {
        self.rt[n].token += 1;
        self.rt[n].token
    }

    fn at(&mut self, t: Symbols, ev: Ev) {
        self.queue.schedule(t, ev).expect("events are never scheduled in the past");
    }

    fn dispatch(&mut self, ev: Ev) {
        let now = self.now();
        match ev {
            Ev::Slot => self.on_slot(now),
            Ev::TxEnd { node, tx, purpose } => self.on_tx_end(node, tx, purpose, now),
            Ev::BurstNext { node, token } if token == self.rt[node].token => self.burst_next(node, now),
            Ev::AckTimeout { node, token } if token == self.rt[node].token => self.ack_timeout(node, now),
            Ev::SendAck { node, dst, seq } => self.send_ack(node, dst, seq, now),
            Ev::Csma { node, token, step } if token == self.rt[node].token => self.csma_step(node, step, now),
            Ev::CapAckTimeout { node, token } if token == self.rt[node].token => self.cap_ack_timeout(node, now),
            Ev::RxGuard { node, token } if token == self.rt[node].token => {
                if matches!(self.medium.state(node), RadioState::Listen(_)) {
                    self.medium.off(node, now);
                }
            }
            Ev::GackNext { node, token } if token == self.rt[node].token => self.send_gts_gack(node, now),
            Ev::Arrival { node } => self.on_arrival(node, now),
            Ev::JamStart => {
                let j = self.params.jammer.expect("jam events need a jammer");
                self.medium.jam_start();
                self.at(now + j.duration, Ev::JamEnd);
                self.at(now + j.interval, Ev::JamStart);
            }
            Ev::JamEnd => self.medium.jam_end(),
            _ => {}
        }
    }

    // ---- traffic and packet registry ----

    fn schedule_arrival(&mut self, n: usize) {
        if let Some(src) = self.rt[n].traffic.as_mut() {
            let at = self.queue.now() + src.next_gap();
            self.at(at, Ev::Arrival { node: n });
        }
    }

    fn on_arrival(&mut self, n: usize, now: Symbols) {
        if matches!(self.phase, Phase::Draining | Phase::Done)
            || (self.phase == Phase::Measuring && self.rt[n].measured_generated >= self.params.packets_per_node)
        {
            return;
        }
        let payload = self.rt[n].traffic.as_mut().expect("arrivals come from a source").next_payload();
        let measured = self.phase == Phase::Measuring;
        let id = self.packets.len() as u64;
        self.packets.push(PacketRecord {
            generated_at: now,
            measured,
            copies: 0,
            delivered: false,
            last_cause: DropCause::QueueFull,
        });
        let info = PacketInfo { origin: n as NodeAddr, id, generated_at: now, hops: 0 };
        if self.nodes[n].app_enqueue(info, payload) {
            self.packets[id as usize].copies += 1;
            self.unresolved += u64::from(measured);
        }
        if measured {
            self.rt[n].measured_generated += 1;
            if (1..self.nodes.len()).all(|i| self.rt[i].measured_generated >= self.params.packets_per_node) {
                self.phase = Phase::Draining;
                self.drain_end = now + self.params.drain_bis * self.cfg().beacon_interval();
            }
        }
        self.schedule_arrival(n);
    }

    fn release_copy(&mut self, p: &QueuedPacket, cause: Option<DropCause>) {
        let rec = &mut self.packets[p.info.id as usize];
        rec.copies -= 1;
        if let Some(c) = cause {
            rec.last_cause = c;
        }
        if rec.copies == 0 && !rec.delivered && rec.measured {
            self.unresolved -= 1;
            self.check_drained();
        }
    }

    fn record_ack_delay(&mut self, p: &QueuedPacket, now: Symbols) {
        if self.packets[p.info.id as usize].measured {
            self.stats.ack_delay_sum += symbols_to_seconds(now - p.last_tx);
            self.stats.ack_delay_samples += 1;
        }
    }

    fn check_drained(&mut self) {
        if self.phase == Phase::Draining && self.unresolved == 0 {
            self.phase = Phase::Done;
        }
    }

    fn begin_measurement(&mut self) {
        self.phase = Phase::Measuring;
        self.measure_start = self.now();
        self.ledger_start = self.medium.ledger_at(self.now());
        if self.params.tau.is_none() || self.params.packets_per_node == 0 {
            // no quota to reach: observe the idle network for the drain window
            self.phase = Phase::Draining;
            self.drain_end = self.now() + self.params.drain_bis * self.cfg().beacon_interval();
        }
    }

    // ---- superframe structure ----

    fn on_slot(&mut self, now: Symbols) {
        let cfg = *self.cfg();
        let a = cfg.locate(now);
        self.at(now + cfg.slot_duration(), Ev::Slot);
        match a.slot_index {
            0 => self.superframe_start(now, a.sf_index),
            s if s == FIRST_CAP_SLOT => self.cap_start(now),
            s if s < FIRST_CAP_SLOT + CAP_SLOTS => {}
            s => self.cfp_slot(now, a.sf_index, s),
        }
    }

    fn superframe_start(&mut self, now: Symbols, sf: u32) {
        let cfg = *self.cfg();
        let sf_in_bi = cfg.superframe_in_beacon_interval(now);
        if sf_in_bi == 0 {
            self.beacon_interval_start();
            if self.phase == Phase::Done {
                return;
            }
        }
        if self.phase == Phase::Draining && now >= self.drain_end {
            self.phase = Phase::Done;
            return;
        }
        for n in 0..self.nodes.len() {
            self.end_cfp_activity(n, now);
            if sf == 0 {
                self.nodes[n].plan_demand();
            }
            let before = self.nodes[n].queue.unacked_len();
            let dropped = self.nodes[n].stale_sweep(now);
            self.stats.stale_requeues += (before - self.nodes[n].queue.unacked_len()) as u64;
            for p in dropped {
                self.release_copy(&p, Some(DropCause::RetryLimit));
            }
            self.nodes[n].schedule_upkeep(now);
            if self.params.scheme == AckScheme::GackCap
                && !self.nodes[n].ledger.is_empty()
                && !self.nodes[n].has_gack_queued()
            {
                self.nodes[n].cap.push_front(CapItem::Gack);
            }
            self.medium.listen(n, COMMON_CHANNEL, now);
        }
        for n in 0..self.nodes.len() {
            if self.rt[n].beacon_sf == Some(sf_in_bi) {
                let body = if self.params.scheme == AckScheme::GackBeacon {
                    self.nodes[n].ledger.take_body(MAX_BEACON_GACK_OCTETS)
                } else {
                    None
                };
                self.stats.gacks_sent += u64::from(body.is_some());
                let frame = Frame::beacon(n as NodeAddr, body);
                self.transmit(n, frame, COMMON_CHANNEL, TxPurpose::Beacon, now);
            }
        }
    }

    fn beacon_interval_start(&mut self) {
        if self.phase != Phase::Warmup {
            return;
        }
        self.warmup_bis += 1;
        let settled = self.nodes.iter().all(|n| !n.gts.in_flight() && (!n.generates || n.tx_data_links() > 0));
        if (settled && self.warmup_bis > 1) || self.warmup_bis > self.params.max_warmup_bis {
            self.begin_measurement();
        }
    }

    fn cap_bounds(&self, now: Symbols) -> Option<(Symbols, Symbols)> {
        let cfg = self.cfg();
        let a = cfg.locate(now);
        if !(FIRST_CAP_SLOT..FIRST_CAP_SLOT + CAP_SLOTS).contains(&a.slot_index) {
            return None;
        }
        let sf_start = now - (now % cfg.superframe_duration());
        let start = sf_start + FIRST_CAP_SLOT as Symbols * cfg.slot_duration();
        Some((start, start + CAP_SLOTS as Symbols * cfg.slot_duration()))
    }

    fn cap_start(&mut self, now: Symbols) {
        for n in 0..self.nodes.len() {
            self.medium.listen(n, COMMON_CHANNEL, now);
            self.rt[n].csma_active = false;
            self.start_csma(n, now);
        }
    }

    /// Wraps up whatever a node did in the previous slot.
    fn end_cfp_activity(&mut self, n: usize, now: Symbols) {
        if self.rt[n].awaiting_ack.is_some() {
            self.ack_timeout_inner(n, now);
        }
        if self.rt[n].cap_awaiting.take().is_some() {
            self.cap_retry(n);
        }
        self.rt[n].csma_active = false;
        self.rt[n].burst = None;
        self.rt[n].rx_cell = None;
        self.rt[n].gack_slot_end = None;
        self.bump(n);
    }

    fn cfp_slot(&mut self, now: Symbols, sf: u32, slot: u8) {
        let slot_end = now + self.cfg().slot_duration();
        let msf = self.cfg().locate(now).msf_index;
        let mut senders = Vec::new();
        // tune every radio before anyone goes on air
        for n in 0..self.nodes.len() {
            self.end_cfp_activity(n, now);
            let fresh = |d: &GtsDescriptor| d.direction == Direction::Tx && d.installed_msf == msf;
            let Some(d) = self.nodes[n].gts.table.descriptor((sf, slot)).copied().filter(|d| !fresh(d)) else {
                self.medium.off(n, now);
                continue;
            };
            self.medium.listen(n, d.cell.channel, now);
            match (d.kind, d.direction) {
                (GtsKind::Data, Direction::Tx) => {
                    self.rt[n].burst = Some(Burst { peer: d.peer, channel: d.cell.channel, slot_end, cell: d.cell });
                    senders.push(n);
                }
                (GtsKind::Gack, Direction::Tx) => {
                    self.rt[n].gack_slot_end = Some((d.cell.channel, slot_end));
                    senders.push(n);
                }
                (_, Direction::Rx) => {
                    self.rt[n].rx_cell = Some(d.cell);
                    self.arm_guard(n, now);
                }
            }
        }
        for n in senders {
            if self.rt[n].burst.is_some() {
                self.burst_next(n, now);
            } else {
                self.send_gts_gack(n, now);
            }
        }
    }

    fn arm_guard(&mut self, n: usize, now: Symbols) {
        let token = self.bump(n);
        self.at(now + RX_GUARD_SYMBOLS, Ev::RxGuard { node: n, token });
    }

    fn transmit(&mut self, n: usize, frame: Frame, channel: u8, purpose: TxPurpose, now: Symbols) -> bool {
        let airtime = frame.airtime();
        match self.medium.transmit(n, frame, channel, now) {
            Ok(tx) => {
                self.at(now + airtime, Ev::TxEnd { node: n, tx, purpose });
                true
            }
            Err(_) => false,
        }
    }

    // ---- GTS bursts ----

    fn burst_next(&mut self, n: usize, now: Symbols) {
        let Some(b) = self.rt[n].burst else { return };
        let node = &self.nodes[n];
        let fits = node.queue.front().filter(|p| p.dst == b.peer).is_some_and(|p| {
            let air = Frame::data(0, 0, 0, p.payload_len, None).expect("queued payloads are valid").airtime();
            let cycle = match node.scheme {
                AckScheme::RegularAck => air + ACK_OVERHEAD_SYMBOLS + ifs_symbols(p.payload_len),
                _ => air + ifs_symbols(p.payload_len) - TURNAROUND_SYMBOLS,
            };
            now + cycle <= b.slot_end
        });
        if !fits {
            self.nodes[n].backlog |= self.nodes[n].queue.fifo_len() > 0;
            self.rt[n].burst = None;
            self.medium.off(n, now);
            return;
        }
        let p = self.nodes[n].queue.mark_sent(now, b.cell.slot_time()).expect("front checked");
        let frame = Frame::data(n as NodeAddr, p.dst, p.seq, p.payload_len, Some(p.info)).expect("valid payload");
        self.transmit(n, frame, b.channel, TxPurpose::Data, now);
        if self.nodes[n].scheme == AckScheme::RegularAck {
            self.rt[n].awaiting_ack = Some((p.dst, p.seq, p.payload_len));
        }
    }

    fn ack_timeout(&mut self, n: usize, now: Symbols) {
        let Some((_, _, len)) = self.rt[n].awaiting_ack else { return };
        self.ack_timeout_inner(n, now);
        let token = self.bump(n);
        self.at(now + ifs_symbols(len), Ev::BurstNext { node: n, token });
    }

    fn ack_timeout_inner(&mut self, n: usize, _now: Symbols) {
        let Some((peer, seq, _)) = self.rt[n].awaiting_ack.take() else { return };
        for p in self.nodes[n].queue.requeue(&[(peer, seq)]) {
            self.release_copy(&p, Some(DropCause::RetryLimit));
        }
    }

    fn send_ack(&mut self, n: usize, dst: NodeAddr, seq: u8, now: Symbols) {
        if let RadioState::Listen(ch) = self.medium.state(n) {
            self.transmit(n, Frame::ack(n as NodeAddr, dst, seq), ch, TxPurpose::Ack, now);
        }
    }

    fn send_gts_gack(&mut self, n: usize, now: Symbols) {
        let Some((channel, slot_end)) = self.rt[n].gack_slot_end else { return };
        let node = &mut self.nodes[n];
        let fits = |b: &GackBody| now + Frame::gack(0, b.clone()).airtime() <= slot_end;
        let body = node.ledger.take_body(MAX_MAC_PAYLOAD);
        match body {
            Some(b) if fits(&b) => {
                self.stats.gacks_sent += 1;
                self.transmit(n, Frame::gack(n as NodeAddr, b), channel, TxPurpose::Gts, now);
            }
            Some(b) => {
                // put it back for the next GACK-GTS
                for p in b.payloads {
                    for s in p.acked_set() {
                        node.ledger.record(p.node_addr, s);
                    }
                }
                self.rt[n].gack_slot_end = None;
                self.medium.off(n, now);
            }
            None => {
                self.rt[n].gack_slot_end = None;
                self.medium.off(n, now);
            }
        }
    }

    fn on_tx_end(&mut self, n: usize, tx: TxId, purpose: TxPurpose, now: Symbols) {
        let rx = self.medium.end_transmission(tx, now);
        self.deliver(rx, now);
        match purpose {
            TxPurpose::Data => {
                let token = self.bump(n);
                match self.rt[n].awaiting_ack {
                    Some(_) => self.at(now + MAC_ACK_WAIT_SYMBOLS, Ev::AckTimeout { node: n, token }),
                    None => {
                        let len = self.rt[n].burst.and_then(|_| self.last_payload(n)).unwrap_or(0);
                        self.at(now + ifs_symbols(len) - TURNAROUND_SYMBOLS, Ev::BurstNext { node: n, token });
                    }
                }
            }
            TxPurpose::Ack => {
                if self.rt[n].rx_cell.is_some() {
                    self.arm_guard(n, now);
                }
            }
            TxPurpose::Gts => {
                let token = self.bump(n);
                self.at(now + LIFS_SYMBOLS, Ev::GackNext { node: n, token });
            }
            TxPurpose::Beacon => {}
            TxPurpose::Cap => self.cap_tx_done(n, now),
        }
    }

    /// Payload length of the packet most recently put on air by `n`.
    fn last_payload(&self, n: usize) -> Option<usize> {
        self.nodes[n].queue.unacked().max_by_key(|p| (p.last_tx, p.info.id)).map(|p| p.payload_len)
    }

    fn deliver(&mut self, rx: Vec<Reception>, now: Symbols) {
        for r in rx {
            let v = r.node;
            let Some(frame) = r.frame else {
                if self.rt[v].rx_cell.is_some() {
                    self.arm_guard(v, now);
                }
                continue;
            };
            let me = v as NodeAddr;
            match frame.kind {
                FrameKind::Data if frame.dst == me => self.on_data(v, &frame, now),
                FrameKind::Ack if frame.dst == me => self.on_ack(v, &frame, now),
                FrameKind::Gack => {
                    if let Some(b) = &frame.embedded {
                        self.on_gack(v, frame.src, b, now);
                    }
                    if self.rt[v].rx_cell.is_some() {
                        self.arm_guard(v, now);
                    }
                }
                FrameKind::Beacon => {
                    if let Some(b) = &frame.embedded {
                        self.on_gack(v, frame.src, b, now);
                    }
                }
                FrameKind::GtsRequest | FrameKind::GtsResponse | FrameKind::GtsNotify | FrameKind::GtsChange => {
                    if frame.dst == me {
                        self.at(now + AIFS_SYMBOLS, Ev::SendAck { node: v, dst: frame.src, seq: frame.seq });
                    }
                    // notifies are overheard even when addressed to someone else
                    if frame.dst == me || frame.is_broadcast() || frame.kind == FrameKind::GtsNotify {
                        let msg = frame.handshake.as_ref().expect("command frames carry a message");
                        self.nodes[v].on_command(frame.kind, frame.src, msg, now);
                        self.start_csma(v, now);
                    }
                }
                _ => {}
            }
        }
    }

    fn on_data(&mut self, v: usize, frame: &Frame, now: Symbols) {
        let info = frame.packet.expect("data frames carry a packet");
        if self.nodes[v].window.accept(frame.src, frame.seq) {
            let hops = info.hops + 1;
            if self.nodes[v].parent.is_none() {
                let rec = &mut self.packets[info.id as usize];
                if !rec.delivered {
                    rec.delivered = true;
                    if rec.measured {
                        self.unresolved -= 1;
                        self.stats.delay_per_hop_sum += symbols_to_seconds(now - rec.generated_at) / hops as f64;
                        self.stats.delay_samples += 1;
                    }
                    self.check_drained();
                }
            } else {
                let fwd = PacketInfo { hops, ..info };
                if self.nodes[v].app_enqueue(fwd, frame.payload_len) {
                    self.packets[info.id as usize].copies += 1;
                } else {
                    self.packets[info.id as usize].last_cause = DropCause::QueueFull;
                }
            }
        }
        match self.params.scheme {
            AckScheme::RegularAck => {
                self.at(now + AIFS_SYMBOLS, Ev::SendAck { node: v, dst: frame.src, seq: frame.seq });
            }
            _ => self.nodes[v].ledger.record(frame.src, frame.seq),
        }
        if let Some(c) = self.rt[v].rx_cell {
            let msf = self.cfg().locate(now).msf_index;
            if let Some(d) = self.nodes[v].gts.table.descriptor_mut(c.slot_time()) {
                d.last_active_msf = msf;
            }
            self.arm_guard(v, now);
        }
    }

    fn on_ack(&mut self, v: usize, frame: &Frame, now: Symbols) {
        if let Some((peer, seq, len)) = self.rt[v].awaiting_ack {
            if peer == frame.src && seq == frame.seq {
                self.rt[v].awaiting_ack = None;
                if let Some(p) = self.nodes[v].queue.acknowledge(peer, seq) {
                    self.nodes[v].confirm_delivery(&p, now);
                    self.record_ack_delay(&p, now);
                    self.release_copy(&p, None);
                }
                let token = self.bump(v);
                self.at(now + ifs_symbols(len), Ev::BurstNext { node: v, token });
            }
            return;
        }
        if self.rt[v].cap_awaiting == Some(frame.src) {
            self.rt[v].cap_awaiting = None;
            self.nodes[v].cap.pop_front();
            self.bump(v);
            self.rt[v].csma_active = false;
            self.start_csma(v, now);
        }
    }

    fn on_gack(&mut self, v: usize, src: NodeAddr, body: &GackBody, now: Symbols) {
        let out = self.nodes[v].on_gack(src, body);
        for p in &out.released {
            self.nodes[v].confirm_delivery(p, now);
            self.record_ack_delay(p, now);
            self.release_copy(p, None);
        }
        for p in &out.dropped {
            self.release_copy(p, Some(DropCause::RetryLimit));
        }
    }

    // ---- CAP access ----

    fn start_csma(&mut self, n: usize, now: Symbols) {
        if self.rt[n].csma_active || self.rt[n].cap_awaiting.is_some() || self.nodes[n].cap.is_empty() {
            return;
        }
        let Some((cap_start, _)) = self.cap_bounds(now) else { return };
        let csma = Csma::default();
        let k = csma.draw(&mut self.nodes[n].rng) as Symbols;
        self.nodes[n].csma = Some(csma);
        self.rt[n].csma_active = true;
        let token = self.bump(n);
        // assessments are evaluated at the end of the CCA window
        let at = align_up(now, cap_start) + k * UNIT_BACKOFF_PERIOD + CCA_SYMBOLS;
        self.at(at, Ev::Csma { node: n, token, step: CsmaStep::Assess(CONTENTION_WINDOW) });
    }

    fn cap_frame(&self, n: usize) -> Option<Frame> {
        match self.nodes[n].cap.front()? {
            CapItem::Command { kind, dst, msg, .. } => Some(Frame::command(*kind, n as NodeAddr, *dst, msg.clone())),
            CapItem::Gack => {
                let mut probe = self.nodes[n].ledger.clone();
                probe.take_body(MAX_MAC_PAYLOAD).map(|b| Frame::gack(n as NodeAddr, b))
            }
        }
    }

    fn csma_step(&mut self, n: usize, step: CsmaStep, now: Symbols) {
        let Some((_, cap_end)) = self.cap_bounds(now) else {
            self.rt[n].csma_active = false;
            return;
        };
        let Some(frame) = self.cap_frame(n) else {
            // an empty GACK: nothing left to acknowledge
            self.nodes[n].cap.pop_front();
            self.rt[n].csma_active = false;
            self.start_csma(n, now);
            return;
        };
        let tx_at = match step {
            CsmaStep::Assess(k) => now - CCA_SYMBOLS + k as Symbols * UNIT_BACKOFF_PERIOD,
            CsmaStep::Transmit => now,
        };
        let ack = if frame.is_broadcast() { 0 } else { MAC_ACK_WAIT_SYMBOLS };
        if tx_at + frame.airtime() + ack > cap_end {
            // resumes in the next CAP
            self.rt[n].csma_active = false;
            return;
        }
        match step {
            CsmaStep::Assess(k) => {
                let busy = self.medium.cca_busy(n, COMMON_CHANNEL)
                    || !matches!(self.medium.state(n), RadioState::Listen(COMMON_CHANNEL));
                let token = self.rt[n].token;
                if !busy {
                    let (next, at) = if k > 1 {
                        (CsmaStep::Assess(k - 1), now + UNIT_BACKOFF_PERIOD)
                    } else {
                        (CsmaStep::Transmit, now - CCA_SYMBOLS + UNIT_BACKOFF_PERIOD)
                    };
                    self.at(at, Ev::Csma { node: n, token, step: next });
                    return;
                }
                let node = &mut self.nodes[n];
                let mut csma = node.csma.unwrap_or_default();
                let outcome = csma.on_busy(&mut node.rng);
                node.csma = Some(csma);
                match outcome {
                    CcaOutcome::Backoff(k) => {
                        let at = now + (k as Symbols + 1) * UNIT_BACKOFF_PERIOD;
                        self.at(at, Ev::Csma { node: n, token, step: CsmaStep::Assess(CONTENTION_WINDOW) });
                    }
                    CcaOutcome::ChannelAccessFailure => {
                        self.stats.channel_access_failures += 1;
                        self.rt[n].csma_active = false;
                    }
                }
            }
            CsmaStep::Transmit => {
                let frame = match self.nodes[n].cap.front() {
                    Some(CapItem::Gack) => {
                        let body = self.nodes[n].ledger.take_body(MAX_MAC_PAYLOAD).expect("probed above");
                        self.stats.gacks_sent += 1;
                        Frame::gack(n as NodeAddr, body)
                    }
                    _ => frame,
                };
                if !self.transmit(n, frame, COMMON_CHANNEL, TxPurpose::Cap, now) {
                    // our own ACK is on air; contend again
                    self.rt[n].csma_active = false;
                    self.start_csma(n, now);
                }
            }
        }
    }

    fn cap_tx_done(&mut self, n: usize, now: Symbols) {
        match self.nodes[n].cap.front() {
            Some(CapItem::Command { dst, .. }) if *dst != BROADCAST => {
                let dst = *dst;
                self.rt[n].cap_awaiting = Some(dst);
                let token = self.bump(n);
                self.at(now + MAC_ACK_WAIT_SYMBOLS, Ev::CapAckTimeout { node: n, token });
                return;
            }
            Some(CapItem::Gack) => {
                self.nodes[n].cap.pop_front();
                if !self.nodes[n].ledger.is_empty() {
                    self.nodes[n].cap.push_front(CapItem::Gack);
                }
            }
            _ => {
                self.nodes[n].cap.pop_front();
            }
        }
        self.rt[n].csma_active = false;
        self.start_csma(n, now);
    }

    fn cap_retry(&mut self, n: usize) {
        if let Some(CapItem::Command { retries, .. }) = self.nodes[n].cap.front_mut() {
            *retries += 1;
            if *retries > MAX_FRAME_RETRIES {
                self.nodes[n].cap.pop_front();
            }
        }
    }

    fn cap_ack_timeout(&mut self, n: usize, now: Symbols) {
        if self.rt[n].cap_awaiting.take().is_none() {
            return;
        }
        self.cap_retry(n);
        self.rt[n].csma_active = false;
        self.start_csma(n, now);
    }
}
