//! Working set of active flows: an open-addressing table from flow key to
//! accumulated estimates, counting every insert and update.

use std::mem;

use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};
use crate::key::FlowKey;

const SLOT_HASH_SEED: u64 = 0x7773_6166_5f73_6c74;
const MAX_LOAD_NUM: usize = 3;
const MAX_LOAD_DEN: usize = 4;

pub const DEFAULT_INITIAL_CAPACITY: usize = 1 << 16;
pub const DEFAULT_HARD_CAPACITY: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct WsafEntry {
    pub key: FlowKey,
    pub packets_est: f64,
    /// Accumulated byte estimate, in bytes.
    pub bytes_est: f64,
    /// Microsecond timestamps.
    pub first_seen: u64,
    pub last_update: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WsafStats {
    pub inserts: u64,
    pub updates: u64,
    pub entries: usize,
    pub bytes_resident: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accumulate {
    Inserted,
    Updated,
}

type Slot = Option<WsafEntry>;

#[derive(Debug, Clone)]
pub struct WsafTable {
    slots: Vec<Slot>,
    entries: usize,
    inserts: u64,
    updates: u64,
    hard_capacity: usize,
}

impl Default for WsafTable {
    fn default() -> Self {
        WsafTable::new(DEFAULT_INITIAL_CAPACITY, DEFAULT_HARD_CAPACITY)
            .expect("default capacities are valid")
    }
}

impl WsafTable {
    /// `initial_capacity` is rounded up to a power of two; `hard_capacity`
    /// bounds the number of live entries.
    pub fn new(initial_capacity: usize, hard_capacity: usize) -> Result<Self> {
        if hard_capacity == 0 {
            return Err(Error::InvalidParams(
                "hard capacity must be positive".into(),
            ));
        }
        let cap = initial_capacity
            .max(8)
            .checked_next_power_of_two()
            .ok_or_else(|| {
                Error::InvalidParams(format!("initial capacity {initial_capacity} too large"))
            })?;
        Ok(WsafTable {
            slots: vec![None; cap],
            entries: 0,
            inserts: 0,
            updates: 0,
            hard_capacity,
        })
    }

    pub const SLOT_BYTES: usize = mem::size_of::<Slot>();

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    pub fn stats(&self) -> WsafStats {
        WsafStats {
            inserts: self.inserts,
            updates: self.updates,
            entries: self.entries,
            bytes_resident: self.slots.len() * Self::SLOT_BYTES,
        }
    }

    #[inline]
    fn home(&self, key: &FlowKey) -> usize {
        let h = xxh3_64_with_seed(&key.to_bytes(), SLOT_HASH_SEED);
        (h as usize) & (self.slots.len() - 1)
    }

    /// Slot holding `key`, or the empty slot where it would go.
    fn probe(&self, key: &FlowKey) -> (usize, bool) {
        let mask = self.slots.len() - 1;
        let mut i = self.home(key);
        loop {
            match &self.slots[i] {
                Some(e) if e.key == *key => return (i, true),
                Some(_) => i = (i + 1) & mask,
                None => return (i, false),
            }
        }
    }

    fn grow(&mut self) {
        let doubled = vec![None; self.slots.len() * 2];
        let old = mem::replace(&mut self.slots, doubled);
        for entry in old.into_iter().flatten() {
            let (i, _) = self.probe(&entry.key);
            self.slots[i] = Some(entry);
        }
    }

    pub fn accumulate(
        &mut self,
        key: &FlowKey,
        packets_delta: f64,
        bytes_delta: f64,
        now: u64,
    ) -> Result<Accumulate> {
        let valid = |d: f64| d.is_finite() && d >= 0.0;
        if !valid(packets_delta) || !valid(bytes_delta) {
            return Err(Error::Domain(format!(
                "deltas must be finite and non-negative, got ({packets_delta}, {bytes_delta})"
            )));
        }
        if packets_delta == 0.0 && bytes_delta == 0.0 {
            return Err(Error::InvalidParams(
                "accumulate needs a positive delta".into(),
            ));
        }

        let (mut slot, found) = self.probe(key);
        if found {
            let e = self.slots[slot].as_mut().expect("probe found entry");
            e.packets_est += packets_delta;
            e.bytes_est += bytes_delta;
            e.last_update = e.last_update.max(now);
            self.updates += 1;
            return Ok(Accumulate::Updated);
        }

        if self.entries >= self.hard_capacity {
            return Err(Error::Capacity(self.hard_capacity));
        }
        if (self.entries + 1) * MAX_LOAD_DEN > self.slots.len() * MAX_LOAD_NUM {
            self.grow();
            slot = self.probe(key).0;
        }
        self.slots[slot] = Some(WsafEntry {
            key: *key,
            packets_est: packets_delta,
            bytes_est: bytes_delta,
            first_seen: now,
            last_update: now,
        });
        self.entries += 1;
        self.inserts += 1;
        Ok(Accumulate::Inserted)
    }

    pub fn lookup(&self, key: &FlowKey) -> Option<&WsafEntry> {
        match self.probe(key) {
            (i, true) => self.slots[i].as_ref(),
            _ => None,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &WsafEntry> {
        self.slots.iter().flatten()
    }

    /// Removes every entry and resets the operation counters. Capacity is kept.
    pub fn drain(&mut self) -> Vec<WsafEntry> {
        let out: Vec<WsafEntry> = self.slots.iter_mut().filter_map(Option::take).collect();
        debug_assert_eq!(out.len(), self.entries);
        self.entries = 0;
        self.inserts = 0;
        self.updates = 0;
        out
    }
}
