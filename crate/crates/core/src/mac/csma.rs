//! Slotted CSMA/CA bookkeeping for the CAP. Timing is driven by the caller;
//! this type only tracks the backoff exponent and attempt count.

use rand::Rng;

use crate::timing::Symbols;

pub const UNIT_BACKOFF_PERIOD: Symbols = 20;
pub const MIN_BE: u8 = 3;
pub const MAX_BE: u8 = 5;
pub const MAX_CSMA_BACKOFFS: u8 = 4;
/// Consecutive idle CCAs required before transmitting.
pub const CONTENTION_WINDOW: u8 = 2;
/// Length of a clear channel assessment; the verdict is known at its end.
pub const CCA_SYMBOLS: Symbols = 8;
/// Retransmissions of an unacknowledged unicast CAP frame.
pub const MAX_FRAME_RETRIES: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Csma {
    pub nb: u8,
    pub be: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcaOutcome {
    /// Back off for this many unit periods and assess again.
    Backoff(u32),
    ChannelAccessFailure,
}

impl Default for Csma {
    fn default() -> Self {
        Self { nb: 0, be: MIN_BE }
    }
}

impl Csma {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        rng.random_range(0..(1u32 << self.be))
    }

    pub fn on_busy<R: Rng + ?Sized>(&mut self, rng: &mut R) -> CcaOutcome {
        self.nb += 1;
        self.be = (self.be + 1).min(MAX_BE);
        if self.nb > MAX_CSMA_BACKOFFS {
            CcaOutcome::ChannelAccessFailure
        } else {
            CcaOutcome::Backoff(self.draw(rng))
        }
    }
}

/// First backoff boundary at or after `t`, for boundaries anchored at
/// `cap_start`.
pub fn align_up(t: Symbols, cap_start: Symbols) -> Symbols {
    let off = t.saturating_sub(cap_start);
    cap_start + off.div_ceil(UNIT_BACKOFF_PERIOD) * UNIT_BACKOFF_PERIOD
}
