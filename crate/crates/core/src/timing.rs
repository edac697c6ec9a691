//! DSME time grid.
//!
//! Every duration in the crate is an integer number of symbols (16 µs at the
//! 2.4 GHz O-QPSK PHY). A superframe has 16 slots: slot 0 carries beacons,
//! slots 1..=8 form the CAP and slots 9..=15 the CFP.

use thiserror::Error;

/// Simulation time and durations, in symbols.
pub type Symbols = u64;

/// Symbols transmitted per second.
pub const SYMBOLS_PER_SECOND: Symbols = 62_500;
/// Slot length at SO = 0.
pub const BASE_SLOT_DURATION: Symbols = 60;
pub const SLOTS_PER_SUPERFRAME: u8 = 16;
/// Superframe length at SO = 0.
pub const BASE_SUPERFRAME_DURATION: Symbols = BASE_SLOT_DURATION * SLOTS_PER_SUPERFRAME as Symbols;
pub const BEACON_SLOT: u8 = 0;
pub const CAP_SLOTS: u8 = 8;
pub const CFP_SLOTS: u8 = 7;
pub const FIRST_CAP_SLOT: u8 = 1;
pub const FIRST_CFP_SLOT: u8 = FIRST_CAP_SLOT + CAP_SLOTS;
pub const NUM_CHANNELS: u8 = 16;
/// Largest order accepted for SO/MO/BO/GAO.
pub const MAX_ORDER: u8 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TimingError {
    #[error("orders must satisfy so <= mo <= bo <= {MAX_ORDER} (got so={so}, mo={mo}, bo={bo})")]
    InvalidOrders { so: u8, mo: u8, bo: u8 },
    #[error("group-ack order {gao} exceeds multisuperframe order {mo}")]
    GaoAboveMo { gao: u8, mo: u8 },
}

/// The four DSME orders. `gao` is only consulted by the GACK-GTS scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SuperframeConfig {
    so: u8,
    mo: u8,
    bo: u8,
    gao: u8,
}

/// Coordinates of one slot in the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotAddress {
    pub msf_index: u64,
    pub sf_index: u32,
    pub slot_index: u8,
}

impl SuperframeConfig {
    /// Validates `so <= mo <= bo`. `gao` may exceed `mo` here; schemes that
    /// need it call [`SuperframeConfig::gack_slots_per_msf`], which rejects it.
    pub fn new(so: u8, mo: u8, bo: u8, gao: u8) -> Result<Self, TimingError> {
        if so > mo || mo > bo || bo > MAX_ORDER {
            return Err(TimingError::InvalidOrders { so, mo, bo });
        }
        if gao > MAX_ORDER {
            return Err(TimingError::GaoAboveMo { gao, mo });
        }
        Ok(Self { so, mo, bo, gao })
    }

    pub fn so(&self) -> u8 {
        self.so
    }

    pub fn mo(&self) -> u8 {
        self.mo
    }

    pub fn bo(&self) -> u8 {
        self.bo
    }

    pub fn gao(&self) -> u8 {
        self.gao
    }

    pub fn slot_duration(&self) -> Symbols {
        slot_duration_symbols(self.so)
    }

    pub fn superframe_duration(&self) -> Symbols {
        superframe_duration_symbols(self.so)
    }

    pub fn multisuperframe_duration(&self) -> Symbols {
        BASE_SUPERFRAME_DURATION << self.mo
    }

    pub fn beacon_interval(&self) -> Symbols {
        BASE_SUPERFRAME_DURATION << self.bo
    }

    /// 2^(MO-SO)
    pub fn superframes_per_msf(&self) -> u32 {
        1 << (self.mo - self.so)
    }

    /// 2^(BO-SO)
    pub fn superframes_per_beacon_interval(&self) -> u32 {
        1 << (self.bo - self.so)
    }

    /// Number of GACK-GTS per multisuperframe, 2^(MO-GAO).
    pub fn gack_slots_per_msf(&self) -> Result<u32, TimingError> {
        if self.gao > self.mo {
            return Err(TimingError::GaoAboveMo { gao: self.gao, mo: self.mo });
        }
        Ok(1 << (self.mo - self.gao))
    }

    /// Spacing between consecutive GACK-GTS, 960 * 2^GAO symbols.
    pub fn gack_interval(&self) -> Symbols {
        BASE_SUPERFRAME_DURATION << self.gao
    }

    /// Number of CFP slots (times 16 channels = GTS) per multisuperframe.
    pub fn cfp_slots_per_msf(&self) -> u32 {
        self.superframes_per_msf() * CFP_SLOTS as u32
    }

    pub fn locate(&self, t: Symbols) -> SlotAddress {
        let msf = self.multisuperframe_duration();
        let sf = self.superframe_duration();
        let slot = self.slot_duration();
        let msf_index = t / msf;
        let in_msf = t % msf;
        SlotAddress { msf_index, sf_index: (in_msf / sf) as u32, slot_index: ((in_msf % sf) / slot) as u8 }
    }

    pub fn slot_start(&self, addr: SlotAddress) -> Symbols {
        addr.msf_index * self.multisuperframe_duration()
            + addr.sf_index as Symbols * self.superframe_duration()
            + addr.slot_index as Symbols * self.slot_duration()
    }

    /// Absolute superframe ordinal containing `t`.
    pub fn superframe_number(&self, t: Symbols) -> u64 {
        t / self.superframe_duration()
    }

    /// Superframe ordinal within the beacon interval containing `t`.
    pub fn superframe_in_beacon_interval(&self, t: Symbols) -> u32 {
        ((t % self.beacon_interval()) / self.superframe_duration()) as u32
    }
}

pub fn slot_duration_symbols(so: u8) -> Symbols {
    BASE_SLOT_DURATION << so
}

pub fn superframe_duration_symbols(so: u8) -> Symbols {
    slot_duration_symbols(so) * SLOTS_PER_SUPERFRAME as Symbols
}

pub fn symbols_to_seconds(s: Symbols) -> f64 {
    s as f64 / SYMBOLS_PER_SECOND as f64
}

pub fn seconds_to_symbols(secs: f64) -> Symbols {
    (secs * SYMBOLS_PER_SECOND as f64).round().max(0.0) as Symbols
}
