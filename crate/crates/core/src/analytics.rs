//! Closed-form maximum throughput and goodput of a GTS under per-packet
//! acknowledgments, group acknowledgments and the 2012 GACK/GTSR scheme.
//!
//! All models take the whole GTS as usable airtime. For the GACK/GTSR
//! variant, two GTS per multisuperframe carry GACK 1 and GACK 2 and every data
//! GTS needs a retransmission GTS, leaving `(7 * 2^(MO-SO) - 2) / 2` data GTS
//! per multisuperframe.

use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

use crate::codec::{
    ifs_symbols, ACK_OVERHEAD_SYMBOLS, HEADER_SYMBOLS, MAX_MAC_PAYLOAD, SYMBOLS_PER_OCTET, TURNAROUND_SYMBOLS,
};
use crate::scalar::Scalar;
use crate::timing::{
    slot_duration_symbols, superframe_duration_symbols, Symbols, CFP_SLOTS, MAX_ORDER, SYMBOLS_PER_SECOND,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TheoryScheme {
    RegularAck,
    Gack,
    GackIeee,
}

impl TheoryScheme {
    pub const ALL: [TheoryScheme; 3] = [Self::RegularAck, Self::Gack, Self::GackIeee];

    pub fn name(&self) -> &'static str {
        match self {
            Self::RegularAck => "ack",
            Self::Gack => "gack",
            Self::GackIeee => "gack-ieee",
        }
    }
}

impl fmt::Display for TheoryScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TheoryError {
    #[error("need so <= mo <= {MAX_ORDER}, got so={so}, mo={mo}")]
    Orders { so: u8, mo: u8 },
    #[error("payload must be 1..={MAX_MAC_PAYLOAD} octets, got {0}")]
    Payload(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TheoryInput {
    pub scheme: TheoryScheme,
    pub so: u8,
    pub mo: u8,
    pub payload: usize,
}

impl TheoryInput {
    pub fn new(scheme: TheoryScheme, so: u8, mo: u8, payload: usize) -> Result<Self, TheoryError> {
        if so > mo || mo > MAX_ORDER {
            return Err(TheoryError::Orders { so, mo });
        }
        if payload == 0 || payload > MAX_MAC_PAYLOAD {
            return Err(TheoryError::Payload(payload));
        }
        Ok(Self { scheme, so, mo, payload })
    }
}

/// Symbols one data transmission occupies inside a GTS.
pub fn cycle_symbols(scheme: TheoryScheme, payload: usize) -> Symbols {
    let frame = HEADER_SYMBOLS + SYMBOLS_PER_OCTET * payload as Symbols;
    match scheme {
        TheoryScheme::RegularAck => frame + ACK_OVERHEAD_SYMBOLS + ifs_symbols(payload),
        TheoryScheme::Gack | TheoryScheme::GackIeee => frame + ifs_symbols(payload) - TURNAROUND_SYMBOLS,
    }
}

/// Fixed per-frame overhead subtracted before sizing the remainder packet.
fn fixed_overhead(scheme: TheoryScheme) -> Symbols {
    let ifs = ifs_symbols(MAX_MAC_PAYLOAD);
    match scheme {
        TheoryScheme::RegularAck => HEADER_SYMBOLS + ACK_OVERHEAD_SYMBOLS + ifs,
        TheoryScheme::Gack | TheoryScheme::GackIeee => HEADER_SYMBOLS + ifs - TURNAROUND_SYMBOLS,
    }
}

pub fn packets_per_gts(scheme: TheoryScheme, so: u8, payload: usize) -> u64 {
    slot_duration_symbols(so) / cycle_symbols(scheme, payload)
}

/// Data GTS per second available to one link.
fn data_gts_per_second<T: Scalar>(scheme: TheoryScheme, so: u8, mo: u8) -> T {
    let sf = superframe_duration_symbols(so);
    match scheme {
        TheoryScheme::RegularAck | TheoryScheme::Gack => T::ratio(SYMBOLS_PER_SECOND * CFP_SLOTS as u64, sf),
        TheoryScheme::GackIeee => {
            let sfs = 1u64 << (mo - so);
            let msf = sf * sfs;
            let usable_twice = CFP_SLOTS as u64 * sfs - 2;
            T::ratio(SYMBOLS_PER_SECOND * usable_twice, 2 * msf)
        }
    }
}

/// Maximum packets per second.
pub fn max_throughput<T: Scalar>(input: &TheoryInput) -> T {
    let per_gts = packets_per_gts(input.scheme, input.so, input.payload);
    data_gts_per_second::<T>(input.scheme, input.so, input.mo) * T::from_u64(per_gts)
}

/// Application bytes per GTS: full-size packets plus the largest packet
/// that fits the remaining symbols.
pub fn goodput_per_gts<T: Scalar>(scheme: TheoryScheme, so: u8) -> T {
    let gts = slot_duration_symbols(so);
    let cycle = cycle_symbols(scheme, MAX_MAC_PAYLOAD);
    let full = MAX_MAC_PAYLOAD as u64 * (gts / cycle);
    let rest = (gts % cycle).saturating_sub(fixed_overhead(scheme));
    T::from_u64(full) + T::ratio(rest, SYMBOLS_PER_OCTET)
}

/// Maximum application bytes per second.
pub fn max_goodput<T: Scalar>(scheme: TheoryScheme, so: u8, mo: u8) -> T {
    data_gts_per_second::<T>(scheme, so, mo) * goodput_per_gts::<T>(scheme, so)
}

pub const DEFAULT_PAYLOADS: [usize; 6] = [1, 25, 50, 75, 100, 116];
pub const DEFAULT_SOS: [u8; 6] = [3, 4, 5, 6, 7, 8];
pub const DEFAULT_MO: u8 = 8;
pub const DEFAULT_THROUGHPUT_SO: u8 = 3;

/// Throughput-versus-payload grid at SO=3, MO=8.
pub fn default_throughput_grid() -> Vec<TheoryInput> {
    TheoryScheme::ALL
        .iter()
        .flat_map(|&s| {
            DEFAULT_PAYLOADS.iter().map(move |&p| TheoryInput {
                scheme: s,
                so: DEFAULT_THROUGHPUT_SO,
                mo: DEFAULT_MO,
                payload: p,
            })
        })
        .collect()
}

/// Goodput-versus-SO grid at MO=8, full-size payload.
pub fn default_goodput_grid() -> Vec<TheoryInput> {
    TheoryScheme::ALL
        .iter()
        .flat_map(|&s| {
            DEFAULT_SOS.iter().map(move |&so| TheoryInput { scheme: s, so, mo: DEFAULT_MO, payload: MAX_MAC_PAYLOAD })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryRow<T> {
    pub input: TheoryInput,
    pub packets_per_s: T,
    pub goodput_bps: T,
}

pub fn sweep<T: Scalar>(inputs: &[TheoryInput]) -> Vec<TheoryRow<T>> {
    inputs
        .iter()
        .map(|i| TheoryRow {
            input: *i,
            packets_per_s: max_throughput(i),
            goodput_bps: max_goodput(i.scheme, i.so, i.mo),
        })
        .collect()
}

pub const THEORY_CSV_HEADER: &str = "scheme,so,mo,p,packets_per_s,goodput_Bps";

pub fn write_theory_csv<T: Scalar, W: Write>(rows: &[TheoryRow<T>], mut out: W) -> io::Result<()> {
    writeln!(out, "{THEORY_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.4},{:.4}",
            r.input.scheme,
            r.input.so,
            r.input.mo,
            r.input.payload,
            r.packets_per_s.to_f64(),
            r.goodput_bps.to_f64()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;

    fn thr(s: TheoryScheme, so: u8, mo: u8, p: usize) -> Rational {
        max_throughput(&TheoryInput::new(s, so, mo, p).unwrap())
    }

    #[test]
    fn cycles() {
        assert_eq!(cycle_symbols(TheoryScheme::RegularAck, 1), 82);
        assert_eq!(cycle_symbols(TheoryScheme::Gack, 1), 36);
        assert_eq!(cycle_symbols(TheoryScheme::RegularAck, 116), 340);
        assert_eq!(cycle_symbols(TheoryScheme::Gack, 116), 294);
    }

    #[test]
    fn throughput_hand_values() {
        assert_eq!(thr(TheoryScheme::RegularAck, 3, 8, 1), Rational::new(62_500 * 35, 7_680));
        assert_eq!(thr(TheoryScheme::Gack, 3, 8, 1), Rational::new(62_500 * 91, 7_680));
        let a: f64 = max_throughput(&TheoryInput::new(TheoryScheme::RegularAck, 3, 8, 1).unwrap());
        let g: f64 = max_throughput(&TheoryInput::new(TheoryScheme::Gack, 3, 8, 1).unwrap());
        assert!((a - 284.8).abs() < 0.05 && (g - 740.6).abs() < 0.05);
    }

    #[test]
    fn goodput_hand_values() {
        assert_eq!(goodput_per_gts::<Rational>(TheoryScheme::RegularAck, 3), Rational::from_integer(132));
        assert_eq!(goodput_per_gts::<Rational>(TheoryScheme::Gack, 3), Rational::from_integer(178));
        assert_eq!(goodput_per_gts::<Rational>(TheoryScheme::RegularAck, 8), Rational::from_integer(5_220));
        assert_eq!(goodput_per_gts::<Rational>(TheoryScheme::Gack, 8), Rational::from_integer(6_037));
        let ga: f64 = max_goodput(TheoryScheme::RegularAck, 3, 8);
        assert!((ga - 7_519.5).abs() < 0.5);
    }

    #[test]
    fn scalar_types_agree() {
        for i in default_throughput_grid().iter().chain(default_goodput_grid().iter()) {
            let exact: Rational = max_throughput(i);
            let f: f64 = max_throughput(i);
            let s: f32 = max_throughput(i);
            assert!((exact.to_f64() - f).abs() < 1e-9);
            assert!((f - s as f64).abs() / f < 1e-5);
        }
    }

    #[test]
    fn input_validation() {
        assert_eq!(TheoryInput::new(TheoryScheme::Gack, 4, 3, 1), Err(TheoryError::Orders { so: 4, mo: 3 }));
        assert_eq!(TheoryInput::new(TheoryScheme::Gack, 3, 8, 0), Err(TheoryError::Payload(0)));
        assert_eq!(TheoryInput::new(TheoryScheme::Gack, 3, 8, 117), Err(TheoryError::Payload(117)));
    }

    #[test]
    fn sweep_csv_shape() {
        let rows = sweep::<f64>(&default_throughput_grid());
        assert_eq!(rows.len(), 18);
        let mut buf = Vec::new();
        write_theory_csv(&sweep::<f64>(&[]), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{THEORY_CSV_HEADER}\n"));
    }

    #[test]
    fn throughput_non_increasing_in_payload() {
        for s in TheoryScheme::ALL {
            for so in 3..=8 {
                let mut last = thr(s, so, 8, 1);
                for p in 2..=116 {
                    let v = thr(s, so, 8, p);
                    assert!(v <= last, "{s} so={so} p={p}");
                    last = v;
                }
            }
        }
    }

    #[test]
    fn gack_dominates_regular_ack() {
        for so in 0..=10 {
            for mo in so..=12 {
                for p in 1..=116 {
                    assert!(thr(TheoryScheme::Gack, so, mo, p) >= thr(TheoryScheme::RegularAck, so, mo, p));
                }
                let g: Rational = max_goodput(TheoryScheme::Gack, so, mo);
                let a: Rational = max_goodput(TheoryScheme::RegularAck, so, mo);
                assert!(g >= a);
            }
        }
    }

    /// Packing loss is at most one cycle per GTS, so the per-second rate stays
    /// within `cycle / S_GTS` of the continuous limit `S_sec * 7 / (16 * cycle)`.
    #[test]
    fn throughput_tracks_fluid_limit_across_so() {
        for s in [TheoryScheme::RegularAck, TheoryScheme::Gack] {
            for p in 1..=116 {
                let c = cycle_symbols(s, p);
                let fluid = Rational::new(62_500 * 7, 16 * c as i64);
                for so in 3..=8 {
                    let t = thr(s, so, 8, p);
                    let slack = Rational::new(c as i64, slot_duration_symbols(so) as i64);
                    assert!(t <= fluid && t >= fluid * (Rational::from_integer(1) - slack));
                }
            }
        }
    }

    #[test]
    fn ieee_goodput_shrinks_as_mo_approaches_so() {
        for so in 3..=6 {
            let mut last: Rational = max_goodput(TheoryScheme::GackIeee, so, so + 6);
            for mo in (so..so + 6).rev() {
                let v: Rational = max_goodput(TheoryScheme::GackIeee, so, mo);
                assert!(v < last);
                last = v;
            }
        }
    }
}
