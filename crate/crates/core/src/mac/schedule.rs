//! Per-node view of the CFP: own descriptors, reservations held by
//! in-progress handshakes, and cells known to be used by neighbours.

use std::collections::BTreeMap;

use crate::codec::NodeAddr;
use crate::timing::{SuperframeConfig, Symbols, CFP_SLOTS, FIRST_CFP_SLOT, NUM_CHANNELS};

/// One GTS: a CFP slot of one superframe of the multisuperframe, on one
/// channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub sf: u32,
    pub slot: u8,
    pub channel: u8,
}

/// (superframe, slot) pair; a node can use at most one cell per slot time.
pub type SlotTime = (u32, u8);

impl Cell {
    pub fn new(sf: u32, slot: u8, channel: u8) -> Self {
        Self { sf, slot, channel }
    }

    pub fn slot_time(&self) -> SlotTime {
        (self.sf, self.slot)
    }

    /// Offset of the slot start from the multisuperframe start.
    pub fn offset(&self, cfg: &SuperframeConfig) -> Symbols {
        self.sf as Symbols * cfg.superframe_duration() + self.slot as Symbols * cfg.slot_duration()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Tx,
    Rx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GtsKind {
    Data,
    Gack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GtsDescriptor {
    pub cell: Cell,
    pub direction: Direction,
    pub kind: GtsKind,
    /// Link peer for data GTS, the GACK sender for received GACK-GTS and
    /// broadcast for transmitted GACK-GTS.
    pub peer: NodeAddr,
    /// Multisuperframe ordinal in which the slot last carried traffic.
    pub last_active_msf: u64,
    /// Multisuperframe of installation; a new link is used from the next one.
    pub installed_msf: u64,
}

impl GtsDescriptor {
    pub fn sf_index(&self) -> u32 {
        self.cell.sf
    }

    pub fn slot_index(&self) -> u8 {
        self.cell.slot
    }

    pub fn channel(&self) -> u8 {
        self.cell.channel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotEntry {
    Installed(GtsDescriptor),
    /// Held for handshake `id` until it completes or is rolled back.
    Reserved {
        id: u64,
        cell: Cell,
    },
}

/// Own slot usage, keyed by slot time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotTable {
    entries: BTreeMap<SlotTime, SlotEntry>,
}

impl SlotTable {
    pub fn is_free(&self, st: SlotTime) -> bool {
        !self.entries.contains_key(&st)
    }

    pub fn get(&self, st: SlotTime) -> Option<&SlotEntry> {
        self.entries.get(&st)
    }

    pub fn descriptor(&self, st: SlotTime) -> Option<&GtsDescriptor> {
        match self.entries.get(&st) {
            Some(SlotEntry::Installed(d)) => Some(d),
            _ => None,
        }
    }

    pub fn descriptor_mut(&mut self, st: SlotTime) -> Option<&mut GtsDescriptor> {
        match self.entries.get_mut(&st) {
            Some(SlotEntry::Installed(d)) => Some(d),
            _ => None,
        }
    }

    /// Installs `d`, replacing a reservation at the same slot time. Returns
    /// false if another descriptor occupies it.
    pub fn install(&mut self, d: GtsDescriptor) -> bool {
        match self.entries.get(&d.cell.slot_time()) {
            Some(SlotEntry::Installed(_)) => false,
            _ => {
                self.entries.insert(d.cell.slot_time(), SlotEntry::Installed(d));
                true
            }
        }
    }

    pub fn reserve(&mut self, id: u64, cell: Cell) -> bool {
        if !self.is_free(cell.slot_time()) {
            return false;
        }
        self.entries.insert(cell.slot_time(), SlotEntry::Reserved { id, cell });
        true
    }

    pub fn release_reservations(&mut self, id: u64) {
        self.entries.retain(|_, e| !matches!(e, SlotEntry::Reserved { id: r, .. } if *r == id));
    }

    /// Removes the descriptor on `cell` if it matches `pred`.
    pub fn remove_if(&mut self, cell: Cell, pred: impl Fn(&GtsDescriptor) -> bool) -> Option<GtsDescriptor> {
        match self.entries.get(&cell.slot_time()) {
            Some(SlotEntry::Installed(d)) if d.cell == cell && pred(d) => {
                let d = *d;
                self.entries.remove(&cell.slot_time());
                Some(d)
            }
            _ => None,
        }
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &GtsDescriptor> {
        self.entries.values().filter_map(|e| match e {
            SlotEntry::Installed(d) => Some(d),
            SlotEntry::Reserved { .. } => None,
        })
    }

    pub fn descriptors_mut(&mut self) -> impl Iterator<Item = &mut GtsDescriptor> {
        self.entries.values_mut().filter_map(|e| match e {
            SlotEntry::Installed(d) => Some(d),
            SlotEntry::Reserved { .. } => None,
        })
    }

    pub fn has_reservations(&self) -> bool {
        self.entries.values().any(|e| matches!(e, SlotEntry::Reserved { .. }))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Cells a neighbour pair announced. The pair is (initiator/sender, peer).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NeighborTable {
    cells: BTreeMap<Cell, (NodeAddr, NodeAddr)>,
}

impl NeighborTable {
    pub fn insert(&mut self, cell: Cell, pair: (NodeAddr, NodeAddr)) {
        self.cells.insert(cell, pair);
    }

    pub fn user(&self, cell: &Cell) -> Option<(NodeAddr, NodeAddr)> {
        self.cells.get(cell).copied()
    }

    pub fn contains(&self, cell: &Cell) -> bool {
        self.cells.contains_key(cell)
    }

    pub fn remove_pair(&mut self, cell: &Cell, pair: (NodeAddr, NodeAddr)) -> bool {
        if self.cells.get(cell) == Some(&pair) {
            self.cells.remove(cell);
            true
        } else {
            false
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Cell, &(NodeAddr, NodeAddr))> {
        self.cells.iter()
    }
}

/// Dense index over all CFP cells of a multisuperframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSpace {
    pub superframes: u32,
}

impl CellSpace {
    pub fn new(cfg: &SuperframeConfig) -> Self {
        Self { superframes: cfg.superframes_per_msf() }
    }

    pub fn len(&self) -> usize {
        self.superframes as usize * CFP_SLOTS as usize * NUM_CHANNELS as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, c: Cell) -> usize {
        ((c.sf as usize * CFP_SLOTS as usize) + (c.slot - FIRST_CFP_SLOT) as usize) * NUM_CHANNELS as usize
            + c.channel as usize
    }

    pub fn cell(&self, idx: usize) -> Cell {
        let ch = (idx % NUM_CHANNELS as usize) as u8;
        let st = idx / NUM_CHANNELS as usize;
        Cell {
            sf: (st / CFP_SLOTS as usize) as u32,
            slot: (st % CFP_SLOTS as usize) as u8 + FIRST_CFP_SLOT,
            channel: ch,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).map(|i| self.cell(i))
    }
}

/// Bitmap of cells a requester can accept.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Availability {
    words: Vec<u64>,
}

impl Availability {
    pub fn empty(space: &CellSpace) -> Self {
        Self { words: vec![0; space.len().div_ceil(64)] }
    }

    pub fn set(&mut self, idx: usize) {
        self.words[idx / 64] |= 1 << (idx % 64);
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.words.get(idx / 64).is_some_and(|w| w & (1 << (idx % 64)) != 0)
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_index_round_trip() {
        let cfg = SuperframeConfig::new(3, 6, 8, 6).unwrap();
        let space = CellSpace::new(&cfg);
        assert_eq!(space.len(), 8 * 7 * 16);
        for i in 0..space.len() {
            assert_eq!(space.index(space.cell(i)), i);
        }
        let c = space.cell(space.len() - 1);
        assert_eq!((c.sf, c.slot, c.channel), (7, 15, 15));
    }

    #[test]
    fn one_descriptor_per_slot_time() {
        let mut t = SlotTable::default();
        let d = |ch| GtsDescriptor {
            cell: Cell::new(1, 9, ch),
            direction: Direction::Tx,
            kind: GtsKind::Data,
            peer: 0,
            last_active_msf: 0,
            installed_msf: 0,
        };
        assert!(t.install(d(3)));
        assert!(!t.install(d(4)));
        assert!(!t.reserve(7, Cell::new(1, 9, 5)));
        assert!(t.reserve(7, Cell::new(1, 10, 5)));
        t.release_reservations(7);
        assert_eq!(t.len(), 1);
        assert!(t.remove_if(Cell::new(1, 9, 4), |_| true).is_none());
        assert!(t.remove_if(Cell::new(1, 9, 3), |_| true).is_some());
        assert!(t.is_empty());
    }
}
