//! Scenario presets, replicated runs, parameter sweeps and CSV output.
//!
//! A scenario is described by flat `key = value` text (see [`Experiment::parse`]);
//! every key has a default taken from the worst-case preset.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::analytics::{packets_per_gts, TheoryScheme};
use crate::codec::MAX_MAC_PAYLOAD;
use crate::mac::{AckScheme, UnknownScheme};
use crate::sim::{Jammer, PayloadSpec, RunStats, SimError, SimParams, Simulation, DEFAULT_JAM_DURATION};
use crate::timing::{seconds_to_symbols, symbols_to_seconds, SuperframeConfig, TimingError};
use crate::topology::{build_topology, TopologyError, TopologyKind};

pub const RUN_CSV_HEADER: &str =
    "scheme,tau,jam_interval,pdr,pdr_ci,data_delay_hop,data_delay_ci,ack_delay,ack_delay_ci,\
drops_queue,drops_retry,tx_time,rx_time,idle_time,off_time,seed";

pub const DEFAULT_REPLICATIONS: usize = 10;
pub const DEFAULT_PACKETS_PER_NODE: u64 = 1000;
pub const DEFAULT_MAX_WARMUP_BIS: u64 = 20;
pub const DEFAULT_DRAIN_BIS: u64 = 10;
/// Confidence level of reported half-widths.
pub const CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value {value:?} for {key}")]
    BadValue { line: usize, key: String, value: String },
    #[error("need at least 2 nodes, got {0}")]
    Nodes(usize),
    #[error("replication count must be positive")]
    Replications,
    #[error("payload must lie within 1..={MAX_MAC_PAYLOAD}")]
    Payload,
    #[error(transparent)]
    Timing(#[from] TimingError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Radio power draw per state in milliwatts. Defaults are typical of a
/// 2.4 GHz 802.15.4 transceiver at 3 V.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerWeights {
    pub tx_mw: f64,
    pub rx_mw: f64,
    pub listen_mw: f64,
    pub off_mw: f64,
}

impl Default for PowerWeights {
    fn default() -> Self {
        Self { tx_mw: 52.2, rx_mw: 56.4, listen_mw: 56.4, off_mw: 0.003 }
    }
}

/// The three evaluation scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Worst,
    Best,
    Average,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Worst, Preset::Best, Preset::Average];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Worst => "worst",
            Preset::Best => "best",
            Preset::Average => "average",
        }
    }

    pub fn config(&self) -> ScenarioConfig {
        let (orders, topology, nodes, payload) = match self {
            Preset::Worst => ((3, 6, 8, 6), TopologyKind::Line, 10, PayloadSpec::Fixed(116)),
            Preset::Best => ((4, 7, 7, 7), TopologyKind::Star, 19, PayloadSpec::Fixed(1)),
            Preset::Average => ((4, 6, 8, 6), TopologyKind::BinaryTree, 31, PayloadSpec::Uniform { lo: 1, hi: 116 }),
        };
        let (so, mo, bo, gao) = orders;
        ScenarioConfig {
            scheme: AckScheme::RegularAck,
            cfg: SuperframeConfig::new(so, mo, bo, gao).expect("preset orders are valid"),
            topology,
            nodes,
            tau: Some(1.0),
            payload,
            jam_interval: None,
            jam_duration: symbols_to_seconds(DEFAULT_JAM_DURATION),
            seed: 1,
            packets_per_node: DEFAULT_PACKETS_PER_NODE,
            replications: DEFAULT_REPLICATIONS,
            max_warmup_bis: DEFAULT_MAX_WARMUP_BIS,
            drain_bis: DEFAULT_DRAIN_BIS,
            power: PowerWeights::default(),
        }
    }

    /// Packet intervals swept for this scenario, least loaded first.
    pub fn tau_grid(&self) -> Vec<f64> {
        match self {
            Preset::Worst | Preset::Average => vec![1.0, 0.8, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1],
            Preset::Best => vec![1.0, 0.5, 0.2, 0.1, 0.08, 0.06, 0.04],
        }
    }

    /// Interference intervals swept at a packet interval of one second.
    pub fn jam_grid(&self) -> Vec<f64> {
        vec![1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01]
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "worst" => Ok(Preset::Worst),
            "best" => Ok(Preset::Best),
            "average" | "avg" => Ok(Preset::Average),
            _ => Err(()),
        }
    }
}

/// Everything needed to run one scheme at one load point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scheme: AckScheme,
    pub cfg: SuperframeConfig,
    pub topology: TopologyKind,
    pub nodes: usize,
    /// Mean packet interval per node in seconds; `None` means no traffic.
    pub tau: Option<f64>,
    pub payload: PayloadSpec,
    /// Seconds between interference bursts.
    pub jam_interval: Option<f64>,
    /// Seconds per interference burst.
    pub jam_duration: f64,
    pub seed: u64,
    pub packets_per_node: u64,
    pub replications: usize,
    pub max_warmup_bis: u64,
    pub drain_bis: u64,
    pub power: PowerWeights,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Preset::Worst.config()
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.nodes < 2 {
            return Err(ConfigError::Nodes(self.nodes));
        }
        if self.replications == 0 {
            return Err(ConfigError::Replications);
        }
        if !self.payload.is_valid() {
            return Err(ConfigError::Payload);
        }
        Ok(())
    }

    /// Simulator parameters of replication `rep`; replications use
    /// consecutive seeds so that schemes see identical arrivals.
    pub fn sim_params(&self, rep: usize) -> Result<SimParams, ExperimentError> {
        self.validate()?;
        let jammer = self
            .jam_interval
            .map(|i| Jammer { interval: seconds_to_symbols(i), duration: seconds_to_symbols(self.jam_duration) });
        Ok(SimParams {
            scheme: self.scheme,
            cfg: self.cfg,
            topology: build_topology(self.topology, self.nodes)?,
            tau: self.tau,
            payload: self.payload,
            jammer,
            seed: self.seed.wrapping_add(rep as u64),
            packets_per_node: self.packets_per_node,
            max_warmup_bis: self.max_warmup_bis,
            drain_bis: self.drain_bis,
        })
    }
}

/// Packet interval at which the sink's receive capacity is used up under
/// per-packet acknowledgments: every generating node's traffic has to fit
/// into one GTS per CFP slot time at the sink, at the largest payload.
pub fn saturation_tau(config: &ScenarioConfig) -> f64 {
    let p = match config.payload {
        PayloadSpec::Fixed(p) => p,
        PayloadSpec::Uniform { hi, .. } => hi,
    };
    let per_gts = packets_per_gts(TheoryScheme::RegularAck, config.cfg.so(), p);
    let per_msf = config.cfg.cfp_slots_per_msf() as u64 * per_gts;
    let msf = symbols_to_seconds(config.cfg.multisuperframe_duration());
    (config.nodes - 1) as f64 * msf / per_msf as f64
}

/// Mean with a Student-t confidence half-width over replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// `NaN` with fewer than two samples.
    pub half_width: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, half_width: f64::NAN, samples: 0 };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self { mean, half_width: f64::NAN, samples: n };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.5 + CONFIDENCE / 2.0);
        Self { mean, half_width: t * (var / n as f64).sqrt(), samples: n }
    }

    pub fn low(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn high(&self) -> f64 {
        self.mean + self.half_width
    }
}

/// Aggregate over the replications of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scheme: AckScheme,
    pub tau: Option<f64>,
    pub jam_interval: Option<f64>,
    pub seed: u64,
    pub pdr: Estimate,
    pub data_delay_hop: Estimate,
    pub ack_delay: Estimate,
    /// Mean dropped packets per replication.
    pub drops_queue: f64,
    pub drops_retry: f64,
    /// Mean seconds per node and replication in each radio state.
    pub tx_time: f64,
    pub rx_time: f64,
    pub idle_time: f64,
    pub off_time: f64,
    /// Mean radio power per node in milliwatts.
    pub mean_power_mw: f64,
    pub runs: Vec<RunStats>,
}

impl MetricsReport {
    pub fn aggregate(config: &ScenarioConfig, runs: Vec<RunStats>) -> Self {
        let n = runs.len().max(1) as f64;
        let mean = |f: fn(&RunStats) -> f64| runs.iter().map(f).sum::<f64>() / n;
        let pdr: Vec<f64> = runs.iter().map(RunStats::pdr).collect();
        let delay: Vec<f64> = runs.iter().filter_map(RunStats::mean_delay_per_hop).collect();
        let ack: Vec<f64> = runs.iter().filter_map(RunStats::mean_ack_delay).collect();
        let (tx, rx, idle, off) =
            (mean(|r| r.tx_time), mean(|r| r.rx_time), mean(|r| r.idle_time), mean(|r| r.off_time));
        let total = tx + rx + idle + off;
        let w = config.power;
        let mean_power_mw =
            if total > 0.0 { (tx * w.tx_mw + rx * w.rx_mw + idle * w.listen_mw + off * w.off_mw) / total } else { 0.0 };
        Self {
            scheme: config.scheme,
            tau: config.tau,
            jam_interval: config.jam_interval,
            seed: config.seed,
            pdr: Estimate::from_samples(&pdr),
            data_delay_hop: Estimate::from_samples(&delay),
            ack_delay: Estimate::from_samples(&ack),
            drops_queue: mean(|r| r.dropped_queue as f64),
            drops_retry: mean(|r| r.dropped_retry as f64),
            tx_time: tx,
            rx_time: rx,
            idle_time: idle,
            off_time: off,
            mean_power_mw,
            runs,
        }
    }

    pub fn csv_row(&self) -> String {
        fn num(x: f64) -> String {
            if x.is_finite() {
                x.to_string()
            } else {
                String::new()
            }
        }
        let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
        [
            self.scheme.name().to_string(),
            opt(self.tau),
            opt(self.jam_interval),
            num(self.pdr.mean),
            num(self.pdr.half_width),
            num(self.data_delay_hop.mean),
            num(self.data_delay_hop.half_width),
            num(self.ack_delay.mean),
            num(self.ack_delay.half_width),
            num(self.drops_queue),
            num(self.drops_retry),
            num(self.tx_time),
            num(self.rx_time),
            num(self.idle_time),
            num(self.off_time),
            self.seed.to_string(),
        ]
        .join(",")
    }
}

pub fn write_run_csv<W: Write>(reports: &[MetricsReport], mut out: W) -> io::Result<()> {
    writeln!(out, "{RUN_CSV_HEADER}")?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Runs every replication of `config` and aggregates them.
pub fn run(config: &ScenarioConfig) -> Result<MetricsReport, ExperimentError> {
    Ok(run_all(std::slice::from_ref(config))?.remove(0))
}

/// Runs several scenarios, spreading all of their replications over the
/// thread pool. Reports come back in input order.
pub fn run_all(configs: &[ScenarioConfig]) -> Result<Vec<MetricsReport>, ExperimentError> {
    let mut jobs = Vec::new();
    for (i, c) in configs.iter().enumerate() {
        for rep in 0..c.replications.max(1) {
            jobs.push((i, c.sim_params(rep)?));
        }
    }
    let results: Vec<(usize, RunStats)> =
        jobs.into_par_iter().map(|(i, p)| Simulation::new(p).map(|sim| (i, sim.run()))).collect::<Result<_, _>>()?;
    let mut per: Vec<Vec<RunStats>> = vec![Vec::new(); configs.len()];
    for (i, stats) in results {
        per[i].push(stats);
    }
    Ok(configs.iter().zip(per).map(|(c, runs)| MetricsReport::aggregate(c, runs)).collect())
}

/// All four schemes at every packet interval, under paired seeds.
pub fn sweep_tau(config: &ScenarioConfig, taus: &[f64]) -> Result<Vec<MetricsReport>, ExperimentError> {
    let points: Vec<ScenarioConfig> = taus
        .iter()
        .flat_map(|&tau| {
            AckScheme::ALL.into_iter().map(move |scheme| ScenarioConfig { scheme, tau: Some(tau), ..config.clone() })
        })
        .collect();
    run_all(&points)
}

/// All four schemes at every interference interval with one packet per
/// second and node.
pub fn sweep_jam(config: &ScenarioConfig, intervals: &[f64]) -> Result<Vec<MetricsReport>, ExperimentError> {
    let points: Vec<ScenarioConfig> = intervals
        .iter()
        .flat_map(|&jam| {
            AckScheme::ALL.into_iter().map(move |scheme| ScenarioConfig {
                scheme,
                tau: Some(1.0),
                jam_interval: Some(jam),
                ..config.clone()
            })
        })
        .collect();
    run_all(&points)
}

/// A scenario plus the points to evaluate it at.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub base: ScenarioConfig,
    pub schemes: Vec<AckScheme>,
    pub taus: Vec<Option<f64>>,
    pub jam_intervals: Vec<Option<f64>>,
}

impl Default for Experiment {
    fn default() -> Self {
        Self::from_preset(Preset::Worst)
    }
}

impl Experiment {
    pub fn from_preset(p: Preset) -> Self {
        let base = p.config();
        Self { schemes: AckScheme::ALL.to_vec(), taus: vec![base.tau], jam_intervals: vec![None], base }
    }

    /// Reads flat `key = value` lines. `#` starts a comment. A `preset` key
    /// selects the starting point wherever it appears; `scheme`, `tau` and
    /// `jam_interval` accept comma-separated lists, `scheme = all` runs all
    /// four and `tau = none` runs without traffic.
    ///
    /// Keys: preset, scheme, so, mo, bo, gao, topology, nodes, payload
    /// (`116` or `1-116`), tau, jam_interval, jam_duration, seed,
    /// replications, packets_per_node, max_warmup_bis, drain_bis,
    /// power_tx_mw, power_rx_mw, power_listen_mw, power_off_mw.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            pairs.push((i + 1, k.trim().to_ascii_lowercase(), v.trim().to_string()));
        }
        let mut exp = Experiment::default();
        if let Some((line, key, value)) = pairs.iter().rev().find(|(_, k, _)| k == "preset") {
            let p = value.parse::<Preset>().map_err(|_| bad(*line, key, value))?;
            exp = Experiment::from_preset(p);
        }
        let c = &mut exp.base;
        let (mut so, mut mo, mut bo, mut gao) = (c.cfg.so(), c.cfg.mo(), c.cfg.bo(), c.cfg.gao());
        for (line, key, value) in &pairs {
            let (line, key, value) = (*line, key.as_str(), value.as_str());
            let err = || bad(line, key, value);
            match key {
                "preset" => {}
                "scheme" if value.eq_ignore_ascii_case("all") => exp.schemes = AckScheme::ALL.to_vec(),
                "scheme" => {
                    exp.schemes = parse_list(value, |s| s.parse::<AckScheme>().map_err(|_: UnknownScheme| ()))
                        .map_err(|_| err())?
                }
                "so" => so = value.parse().map_err(|_| err())?,
                "mo" => mo = value.parse().map_err(|_| err())?,
                "bo" => bo = value.parse().map_err(|_| err())?,
                "gao" => gao = value.parse().map_err(|_| err())?,
                "topology" => c.topology = value.parse().map_err(|_| err())?,
                "nodes" => c.nodes = value.parse().map_err(|_| err())?,
                "payload" => c.payload = parse_payload(value).ok_or_else(err)?,
                "tau" => exp.taus = parse_list(value, parse_optional_seconds).map_err(|_| err())?,
                "jam_interval" => exp.jam_intervals = parse_list(value, parse_optional_seconds).map_err(|_| err())?,
                "jam_duration" => c.jam_duration = parse_seconds(value).ok_or_else(err)?,
                "seed" => c.seed = value.parse().map_err(|_| err())?,
                "replications" => c.replications = value.parse().map_err(|_| err())?,
                "packets_per_node" => c.packets_per_node = value.parse().map_err(|_| err())?,
                "max_warmup_bis" => c.max_warmup_bis = value.parse().map_err(|_| err())?,
                "drain_bis" => c.drain_bis = value.parse().map_err(|_| err())?,
                "power_tx_mw" => c.power.tx_mw = value.parse().map_err(|_| err())?,
                "power_rx_mw" => c.power.rx_mw = value.parse().map_err(|_| err())?,
                "power_listen_mw" => c.power.listen_mw = value.parse().map_err(|_| err())?,
                "power_off_mw" => c.power.off_mw = value.parse().map_err(|_| err())?,
                _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
            }
        }
        c.cfg = SuperframeConfig::new(so, mo, bo, gao)?;
        c.scheme = exp.schemes[0];
        c.tau = exp.taus[0];
        c.jam_interval = exp.jam_intervals[0];
        c.validate()?;
        Ok(exp)
    }

    /// One scenario per (tau, jam interval, scheme), in that nesting order.
    pub fn points(&self) -> Vec<ScenarioConfig> {
        let mut out = Vec::new();
        for &tau in &self.taus {
            for &jam_interval in &self.jam_intervals {
                for &scheme in &self.schemes {
                    out.push(ScenarioConfig { scheme, tau, jam_interval, ..self.base.clone() });
                }
            }
        }
        out
    }

    pub fn run(&self) -> Result<Vec<MetricsReport>, ExperimentError> {
        run_all(&self.points())
    }
}

fn bad(line: usize, key: &str, value: &str) -> ConfigError {
    ConfigError::BadValue { line, key: key.to_string(), value: value.to_string() }
}

fn parse_list<T>(value: &str, item: impl Fn(&str) -> Result<T, ()>) -> Result<Vec<T>, ()> {
    let v: Vec<T> = value.split(',').map(|s| item(s.trim())).collect::<Result<_, _>>()?;
    if v.is_empty() {
        Err(())
    } else {
        Ok(v)
    }
}

fn parse_seconds(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|x| *x > 0.0 && x.is_finite())
}

fn parse_optional_seconds(s: &str) -> Result<Option<f64>, ()> {
    if s.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse_seconds(s).map(Some).ok_or(())
    }
}

/// `116` for a fixed size, `1-116` for a uniform range.
pub fn parse_payload(s: &str) -> Option<PayloadSpec> {
    let spec = match s.split_once('-') {
        Some((lo, hi)) => PayloadSpec::Uniform { lo: lo.trim().parse().ok()?, hi: hi.trim().parse().ok()? },
        None => PayloadSpec::Fixed(s.trim().parse().ok()?),
    };
    spec.is_valid().then_some(spec)
}
