//! Receiver-side acknowledgment state for the GACK schemes.

use std::collections::{BTreeMap, BTreeSet};

use crate::codec::{GackBody, GackPayload, NodeAddr};

/// Sequence numbers received per source since the last GACK hand-off.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PendingAckLedger {
    entries: BTreeMap<NodeAddr, (u64, BTreeSet<u8>)>,
    arrivals: u64,
}

/// Base of the smallest circular window holding all of `seqs`: the element
/// right after the largest gap.
pub fn window_base(seqs: &BTreeSet<u8>) -> Option<u8> {
    let v: Vec<u8> = seqs.iter().copied().collect();
    let first = *v.first()?;
    let mut best = (v[0].wrapping_sub(*v.last()?), first);
    for w in v.windows(2) {
        let gap = w[1] - w[0];
        if gap > best.0 {
            best = (gap, w[1]);
        }
    }
    // a single element wraps onto itself with gap 0
    Some(if v.len() == 1 { first } else { best.1 })
}

impl PendingAckLedger {
    pub fn record(&mut self, src: NodeAddr, seq: u8) {
        let order = self.arrivals;
        self.arrivals += 1;
        self.entries.entry(src).or_insert_with(|| (order, BTreeSet::new())).1.insert(seq);
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sources(&self) -> usize {
        self.entries.len()
    }

    pub fn payload(src: NodeAddr, seqs: &BTreeSet<u8>) -> GackPayload {
        let base = window_base(seqs).unwrap_or(0);
        GackPayload::from_seqs(src, base, seqs.iter().copied())
    }

    /// Builds a body of at most `max_octets` encoded octets from the oldest
    /// sources, removing what it takes. `None` if nothing fits.
    pub fn take_body(&mut self, max_octets: usize) -> Option<GackBody> {
        let mut order: Vec<(u64, NodeAddr)> = self.entries.iter().map(|(a, (o, _))| (*o, *a)).collect();
        order.sort();
        let mut body = GackBody::default();
        let mut used = 1;
        for (_, src) in order {
            let p = Self::payload(src, &self.entries[&src].1);
            if used + p.encoded_len() > max_octets {
                break;
            }
            used += p.encoded_len();
            self.entries.remove(&src);
            body.payloads.push(p);
        }
        (!body.is_empty()).then_some(body)
    }
}

/// Duplicate filter over a 128-sequence window behind the newest number.
#[derive(Debug, Clone, Default)]
pub struct ReceiveWindow {
    per_src: BTreeMap<NodeAddr, (u8, [bool; 256])>,
}

impl ReceiveWindow {
    /// Returns `true` when `seq` from `src` has not been seen before.
    pub fn accept(&mut self, src: NodeAddr, seq: u8) -> bool {
        let Some((top, seen)) = self.per_src.get_mut(&src) else {
            let mut seen = [false; 256];
            seen[seq as usize] = true;
            self.per_src.insert(src, (seq, seen));
            return true;
        };
        let ahead = seq.wrapping_sub(*top);
        if ahead != 0 && ahead < 128 {
            for i in 1..=ahead {
                seen[top.wrapping_add(i) as usize] = false;
            }
            *top = seq;
        }
        let fresh = !seen[seq as usize];
        seen[seq as usize] = true;
        fresh
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[u8]) -> BTreeSet<u8> {
        v.iter().copied().collect()
    }

    #[test]
    fn base_follows_largest_gap() {
        assert_eq!(window_base(&set(&[5, 6, 7])), Some(5));
        assert_eq!(window_base(&set(&[250, 255, 1, 3])), Some(250));
        assert_eq!(window_base(&set(&[9])), Some(9));
        assert_eq!(window_base(&set(&[])), None);
    }

    #[test]
    fn wrapped_payload_is_lossless() {
        let s = set(&[254, 255, 0, 2]);
        let p = PendingAckLedger::payload(3, &s);
        assert_eq!(p.base_seq, 254);
        assert_eq!(p.bitmap_len(), 1);
        assert_eq!(p.acked_set().into_iter().collect::<BTreeSet<_>>(), s);
        assert_eq!(p.status_of(1), Some(false));
    }

    #[test]
    fn body_splits_oldest_first() {
        let mut l = PendingAckLedger::default();
        for src in [7u16, 3, 9] {
            l.record(src, 0);
            l.record(src, 100);
        }
        // each payload: 4 + 13 octets
        let b = l.take_body(1 + 2 * 17).unwrap();
        assert_eq!(b.payloads.iter().map(|p| p.node_addr).collect::<Vec<_>>(), vec![7, 3]);
        assert_eq!(l.sources(), 1);
        assert!(l.take_body(10).is_none());
        let b = l.take_body(100).unwrap();
        assert_eq!(b.payloads[0].node_addr, 9);
        assert!(l.is_empty());
    }

    #[test]
    fn duplicates_are_filtered_across_wrap() {
        let mut w = ReceiveWindow::default();
        assert!(w.accept(1, 250));
        assert!(!w.accept(1, 250));
        assert!(w.accept(1, 3));
        assert!(w.accept(1, 251));
        assert!(!w.accept(1, 3));
        assert!(w.accept(2, 3));
        for s in 4..=130u8 {
            assert!(w.accept(1, s));
        }
        assert!(!w.accept(1, 3));
        for s in 131..=200u8 {
            w.accept(1, s);
        }
        // far enough behind to count as the next lap
        assert!(w.accept(1, 3));
    }
}
