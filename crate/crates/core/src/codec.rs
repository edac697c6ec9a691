//! Frame model, airtimes and the generalized GACK wire format.
//!
//! GACK body layout (all fields octets, addresses little-endian):
//!
//! ```text
//! [count:1] { [addr:2][bitmap_len:1][base_seq:1][bitmap:bitmap_len] } * count
//! ```
//!
//! Bit `i` of a bitmap acknowledges sequence number `base_seq + i (mod 256)`;
//! bit 0 is the most significant bit of the first bitmap octet.

use thiserror::Error;

use crate::mac::handshake::HandshakeMsg;
use crate::timing::Symbols;

pub type NodeAddr = u16;
pub const BROADCAST: NodeAddr = 0xffff;

/// Largest MAC payload of a data frame.
pub const MAX_MAC_PAYLOAD: usize = 116;
/// Header plus PHY overhead of a data frame.
pub const HEADER_SYMBOLS: Symbols = 34;
/// ACK frame plus the AIFS preceding it.
pub const ACK_OVERHEAD_SYMBOLS: Symbols = 34;
pub const TURNAROUND_SYMBOLS: Symbols = 12;
/// AIFS is one turnaround time.
pub const AIFS_SYMBOLS: Symbols = TURNAROUND_SYMBOLS;
/// On-air time of an ACK frame alone.
pub const ACK_AIRTIME_SYMBOLS: Symbols = ACK_OVERHEAD_SYMBOLS - AIFS_SYMBOLS;
pub const SIFS_SYMBOLS: Symbols = 12;
pub const LIFS_SYMBOLS: Symbols = 40;
/// Largest frame payload still followed by a SIFS.
pub const MAX_SIFS_PAYLOAD: usize = 18;
pub const MAC_ACK_WAIT_SYMBOLS: Symbols = 54;
pub const SYMBOLS_PER_OCTET: Symbols = 2;
/// Body size assumed for beacons and GTS management commands.
pub const CONTROL_BODY_OCTETS: usize = 23;
/// Room left for a GACK body inside a beacon.
pub const MAX_BEACON_GACK_OCTETS: usize = MAX_MAC_PAYLOAD - CONTROL_BODY_OCTETS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("a GACK body holds at most 255 payloads, got {0}")]
    TooManyPayloads(usize),
    #[error("bitmap of payload for node {0:#06x} must hold 1..=255 octets")]
    BadBitmapLength(NodeAddr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("input ends inside payload {0}")]
    Truncated(usize),
    #[error("{0} trailing octets after the last declared payload")]
    CountMismatch(usize),
    #[error("payload {0} declares a zero-length bitmap")]
    ZeroLengthBitmap(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("payload of {0} octets exceeds the {MAX_MAC_PAYLOAD}-octet MAC payload")]
    PayloadTooLong(usize),
}

/// Acknowledgment record for one source node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GackPayload {
    pub node_addr: NodeAddr,
    pub base_seq: u8,
    pub bitmap: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct GackBody {
    pub payloads: Vec<GackPayload>,
}

impl GackPayload {
    /// Builds the smallest bitmap covering `seqs` relative to `base_seq`.
    /// Offsets beyond 255 * 8 bits are ignored.
    pub fn from_seqs(node_addr: NodeAddr, base_seq: u8, seqs: impl IntoIterator<Item = u8>) -> Self {
        let offsets: Vec<usize> = seqs.into_iter().map(|s| s.wrapping_sub(base_seq) as usize).collect();
        let span = offsets.iter().copied().max().map_or(1, |m| m + 1);
        let mut bitmap = vec![0u8; span.div_ceil(8)];
        for off in offsets {
            bitmap[off / 8] |= 0x80 >> (off % 8);
        }
        Self { node_addr, base_seq, bitmap }
    }

    pub fn bitmap_len(&self) -> usize {
        self.bitmap.len()
    }

    pub fn encoded_len(&self) -> usize {
        4 + self.bitmap.len()
    }

    /// Window of sequence numbers the bitmap speaks about.
    pub fn window(&self) -> usize {
        self.bitmap.len() * 8
    }

    /// `Some(acked)` when `seq` falls inside the bitmap window.
    pub fn status_of(&self, seq: u8) -> Option<bool> {
        let off = seq.wrapping_sub(self.base_seq) as usize;
        (off < self.window()).then(|| self.bitmap[off / 8] & (0x80 >> (off % 8)) != 0)
    }

    /// Acknowledged sequence numbers, in bit order.
    pub fn acked_set(&self) -> Vec<u8> {
        (0..self.window())
            .filter(|&i| self.bitmap[i / 8] & (0x80 >> (i % 8)) != 0)
            .map(|i| self.base_seq.wrapping_add(i as u8))
            .collect()
    }
}

impl GackBody {
    pub fn new(payloads: Vec<GackPayload>) -> Self {
        Self { payloads }
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }

    pub fn encoded_len(&self) -> usize {
        1 + self.payloads.iter().map(GackPayload::encoded_len).sum::<usize>()
    }

    pub fn payload_for(&self, addr: NodeAddr) -> Option<&GackPayload> {
        self.payloads.iter().find(|p| p.node_addr == addr)
    }
}

pub fn encode_gack(body: &GackBody) -> Result<Vec<u8>, EncodeError> {
    if body.payloads.len() > 255 {
        return Err(EncodeError::TooManyPayloads(body.payloads.len()));
    }
    let mut out = Vec::with_capacity(body.encoded_len());
    out.push(body.payloads.len() as u8);
    for p in &body.payloads {
        if p.bitmap.is_empty() || p.bitmap.len() > 255 {
            return Err(EncodeError::BadBitmapLength(p.node_addr));
        }
        out.extend_from_slice(&p.node_addr.to_le_bytes());
        out.push(p.bitmap.len() as u8);
        out.push(p.base_seq);
        out.extend_from_slice(&p.bitmap);
    }
    Ok(out)
}

pub fn decode_gack(octets: &[u8]) -> Result<GackBody, DecodeError> {
    let (&count, mut rest) = octets.split_first().ok_or(DecodeError::Truncated(0))?;
    let mut payloads = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        if rest.len() < 4 {
            return Err(DecodeError::Truncated(i));
        }
        let node_addr = u16::from_le_bytes([rest[0], rest[1]]);
        let len = rest[2] as usize;
        let base_seq = rest[3];
        if len == 0 {
            return Err(DecodeError::ZeroLengthBitmap(i));
        }
        if rest.len() < 4 + len {
            return Err(DecodeError::Truncated(i));
        }
        payloads.push(GackPayload { node_addr, base_seq, bitmap: rest[4..4 + len].to_vec() });
        rest = &rest[4 + len..];
    }
    if !rest.is_empty() {
        return Err(DecodeError::CountMismatch(rest.len()));
    }
    Ok(GackBody { payloads })
}

pub fn ifs_symbols(payload_len: usize) -> Symbols {
    if payload_len <= MAX_SIFS_PAYLOAD {
        SIFS_SYMBOLS
    } else {
        LIFS_SYMBOLS
    }
}

pub fn data_airtime_symbols(payload_len: usize) -> Symbols {
    HEADER_SYMBOLS + SYMBOLS_PER_OCTET * payload_len as Symbols
}

pub fn gack_airtime_symbols(body: &GackBody) -> Symbols {
    HEADER_SYMBOLS + SYMBOLS_PER_OCTET * body.encoded_len() as Symbols
}

pub fn control_airtime_symbols() -> Symbols {
    data_airtime_symbols(CONTROL_BODY_OCTETS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Data,
    Ack,
    Gack,
    Beacon,
    GtsRequest,
    GtsResponse,
    GtsNotify,
    GtsChange,
}

/// Application packet carried in a data frame, tracked end to end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketInfo {
    pub origin: NodeAddr,
    pub id: u64,
    pub generated_at: Symbols,
    pub hops: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub src: NodeAddr,
    pub dst: NodeAddr,
    pub seq: u8,
    pub payload_len: usize,
    pub embedded: Option<GackBody>,
    pub handshake: Option<HandshakeMsg>,
    pub packet: Option<PacketInfo>,
}

impl Frame {
    fn bare(kind: FrameKind, src: NodeAddr, dst: NodeAddr) -> Self {
        Self { kind, src, dst, seq: 0, payload_len: 0, embedded: None, handshake: None, packet: None }
    }

    pub fn data(
        src: NodeAddr,
        dst: NodeAddr,
        seq: u8,
        payload_len: usize,
        packet: Option<PacketInfo>,
    ) -> Result<Self, FrameError> {
        if payload_len > MAX_MAC_PAYLOAD {
            return Err(FrameError::PayloadTooLong(payload_len));
        }
        Ok(Self { seq, payload_len, packet, ..Self::bare(FrameKind::Data, src, dst) })
    }

    pub fn ack(src: NodeAddr, dst: NodeAddr, seq: u8) -> Self {
        Self { seq, ..Self::bare(FrameKind::Ack, src, dst) }
    }

    pub fn gack(src: NodeAddr, body: GackBody) -> Self {
        Self { payload_len: body.encoded_len(), embedded: Some(body), ..Self::bare(FrameKind::Gack, src, BROADCAST) }
    }

    pub fn beacon(src: NodeAddr, body: Option<GackBody>) -> Self {
        let extra = body.as_ref().map_or(0, GackBody::encoded_len);
        Self {
            payload_len: CONTROL_BODY_OCTETS + extra,
            embedded: body,
            ..Self::bare(FrameKind::Beacon, src, BROADCAST)
        }
    }

    pub fn command(kind: FrameKind, src: NodeAddr, dst: NodeAddr, msg: HandshakeMsg) -> Self {
        Self { payload_len: CONTROL_BODY_OCTETS, handshake: Some(msg), ..Self::bare(kind, src, dst) }
    }

    pub fn is_broadcast(&self) -> bool {
        self.dst == BROADCAST
    }

    pub fn airtime(&self) -> Symbols {
        match self.kind {
            FrameKind::Ack => ACK_AIRTIME_SYMBOLS,
            _ => data_airtime_symbols(self.payload_len),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_body_is_one_octet() {
        assert_eq!(encode_gack(&GackBody::default()).unwrap(), vec![0x00]);
        assert_eq!(decode_gack(&[0x00]).unwrap(), GackBody::default());
    }

    #[test]
    fn single_payload_layout() {
        let body = GackBody::new(vec![GackPayload { node_addr: 0x0001, base_seq: 5, bitmap: vec![0xA0] }]);
        assert_eq!(encode_gack(&body).unwrap(), vec![0x01, 0x01, 0x00, 0x01, 0x05, 0xA0]);
    }

    #[test]
    fn two_payload_size() {
        let body = GackBody::new(vec![
            GackPayload { node_addr: 7, base_seq: 1, bitmap: vec![0xff] },
            GackPayload { node_addr: 9, base_seq: 200, bitmap: vec![0x80, 0x01] },
        ]);
        let bytes = encode_gack(&body).unwrap();
        assert_eq!(bytes.len(), 12);
        assert_eq!(decode_gack(&bytes).unwrap(), body);
    }

    #[test]
    fn malformed_inputs() {
        // declares two payloads, carries one
        assert_eq!(decode_gack(&[0x02, 0x01, 0x00, 0x01, 0x05, 0xA0]), Err(DecodeError::Truncated(1)));
        assert_eq!(decode_gack(&[]), Err(DecodeError::Truncated(0)));
        assert_eq!(decode_gack(&[0x01, 0x01, 0x00, 0x02, 0x05, 0xA0]), Err(DecodeError::Truncated(0)));
        assert_eq!(decode_gack(&[0x00, 0x17]), Err(DecodeError::CountMismatch(1)));
        assert_eq!(decode_gack(&[0x01, 0x01, 0x00, 0x00, 0x05]), Err(DecodeError::ZeroLengthBitmap(0)));
        let bad = GackBody::new(vec![GackPayload { node_addr: 3, base_seq: 0, bitmap: vec![] }]);
        assert_eq!(encode_gack(&bad), Err(EncodeError::BadBitmapLength(3)));
        let many = GackBody::new(vec![GackPayload { node_addr: 3, base_seq: 0, bitmap: vec![1] }; 256]);
        assert_eq!(encode_gack(&many), Err(EncodeError::TooManyPayloads(256)));
    }

    #[test]
    fn acked_sets() {
        let p = |base, bm: u8| GackPayload { node_addr: 1, base_seq: base, bitmap: vec![bm] };
        assert_eq!(p(5, 0x80).acked_set(), vec![5]);
        assert_eq!(p(5, 0xA0).acked_set(), vec![5, 7]);
        assert_eq!(p(254, 0xE0).acked_set(), vec![254, 255, 0]);
        assert_eq!(p(5, 0xA0).status_of(6), Some(false));
        assert_eq!(p(5, 0xA0).status_of(13), None);
    }

    #[test]
    fn from_seqs_builds_minimal_bitmap() {
        let p = GackPayload::from_seqs(4, 254, [254, 0, 9]);
        // offsets 0, 2 and 11
        assert_eq!(p.bitmap, vec![0xA0, 0x10]);
        assert_eq!(p.acked_set(), vec![254, 0, 9]);
    }

    #[test]
    fn ifs_boundary() {
        assert_eq!(ifs_symbols(18), 12);
        assert_eq!(ifs_symbols(19), 40);
        assert_eq!(ifs_symbols(116), 40);
    }

    #[test]
    fn airtimes() {
        assert_eq!(data_airtime_symbols(0), 34);
        assert_eq!(data_airtime_symbols(1), 36);
        assert_eq!(data_airtime_symbols(116), 266);
        assert_eq!(gack_airtime_symbols(&GackBody::default()), 36);
        let one = GackBody::new(vec![GackPayload { node_addr: 1, base_seq: 0, bitmap: vec![1] }]);
        assert_eq!(gack_airtime_symbols(&one), 46);
        let three = GackBody::new(vec![GackPayload { node_addr: 1, base_seq: 0, bitmap: vec![1, 2] }; 3]);
        assert_eq!(gack_airtime_symbols(&three), 72);
        assert_eq!(Frame::ack(1, 2, 3).airtime(), 22);
        assert_eq!(Frame::gack(1, three.clone()).airtime(), 72);
        assert!(Frame::data(1, 0, 0, 117, None).is_err());
    }
}
