//! Path ORAM over one untrusted region.
//!
//! The tree has 2^(L+1)-1 buckets of Z slots, L = ceil(log2(capacity)), so
//! leaves outnumber the working set and the stash stays small. Every access,
//! read or write alike, reads one root-to-leaf path and rewrites the same
//! path: exactly 2*(L+1)*Z block events in a fixed address pattern that
//! depends only on the leaf, which is freshly and uniformly drawn on every
//! access. Nothing about the access reveals which logical block was touched
//! or whether it was a read or a write.
//!
//! Blocks evict greedily, deepest bucket first, ties broken toward the
//! smaller block id. Each stored slot seals a one-byte liveness flag, the
//! block's current leaf, and the payload; the flag is what distinguishes a
//! dummy in-band, so a bucket full of dummies is indistinguishable from a
//! full one.
//!
//! The position map lives in oblivious enclave memory and is charged to the
//! budget at 8 bytes per entry. One optional level of recursion packs the
//! map into a second, smaller ORAM, trading one extra fixed path access per
//! operation for a budget charge divided by the packing fanout.

use crate::error::{EngineError, Result};
use crate::memory::{MemoryEngine, RegionId};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Z: slots per bucket.
pub const BUCKET_SLOTS: u64 = 4;

/// Position-map entries packed per block at one recursion level.
pub const POSMAP_FANOUT: u64 = 64;

/// Defensive ceiling; the tested bound is far lower.
const STASH_GUARD: usize = 8192;

/// Budget accounting per position-map entry, in bytes.
const POSMAP_ENTRY_BYTES: u64 = 8;

const HDR: usize = 5; // flag byte + u32 leaf

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StashEntry {
    id: u64,
    leaf: u32,
    data: Vec<u8>,
}

#[derive(Debug, Serialize, Deserialize)]
enum PosMap {
    Direct(Vec<u32>),
    Recursive { inner: Box<PathOram>, fanout: u64 },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PathOram {
    region: RegionId,
    capacity: u64,
    block_size: u32,
    l_max: u32,
    stash: Vec<StashEntry>,
    pos: PosMap,
    budget_charged: u64,
}

fn levels_for(capacity: u64) -> u32 {
    // L = ceil(log2(capacity)); a capacity-1 tree is the root bucket alone.
    let c = capacity.max(1);
    if c == 1 {
        0
    } else {
        (c - 1).ilog2() + 1
    }
}

fn bucket_index(l_max: u32, leaf: u32, level: u32) -> u64 {
    ((1u64 << level) - 1) + (leaf as u64 >> (l_max - level))
}

impl PathOram {
    pub fn init(
        mem: &mut MemoryEngine,
        capacity: u64,
        block_size: u32,
        recursive: bool,
    ) -> Result<Self> {
        assert!(capacity >= 1, "ORAM capacity must be positive");
        let l_max = levels_for(capacity);
        let buckets = (1u64 << (l_max + 1)) - 1;
        let region = mem.region_create(block_size + HDR as u32, buckets * BUCKET_SLOTS)?;

        let pos = if recursive {
            let entries = capacity.div_ceil(POSMAP_FANOUT);
            let inner = PathOram::init(mem, entries, (POSMAP_FANOUT * 4) as u32, false)?;
            PosMap::Recursive {
                inner: Box::new(inner),
                fanout: POSMAP_FANOUT,
            }
        } else {
            let charge = capacity * POSMAP_ENTRY_BYTES;
            mem.budget_mut().charge(charge)?;
            let leaf_count = 1u32 << l_max;
            let map = (0..capacity)
                .map(|_| mem.rng().gen_range(0..leaf_count))
                .collect();
            PosMap::Direct(map)
        };
        let budget_charged = match &pos {
            PosMap::Direct(_) => capacity * POSMAP_ENTRY_BYTES,
            PosMap::Recursive { .. } => 0,
        };

        let oram = Self {
            region,
            capacity,
            block_size,
            l_max,
            stash: Vec::new(),
            pos,
            budget_charged,
        };
        // Initialization is itself a fixed scan: every slot gets a dummy so
        // later path reads never hit a never-written slot.
        let dummy = oram.encode_slot(None);
        for addr in 0..buckets * BUCKET_SLOTS {
            mem.block_write(region, addr, &dummy, crate::crypto::NO_ROW)?;
        }
        Ok(oram)
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn block_size(&self) -> u32 {
        self.block_size
    }

    pub fn region(&self) -> RegionId {
        self.region
    }

    /// L+1: buckets touched per path.
    pub fn levels(&self) -> u32 {
        self.l_max + 1
    }

    pub fn tree_slots(&self) -> u64 {
        ((1u64 << (self.l_max + 1)) - 1) * BUCKET_SLOTS
    }

    pub fn stash_len(&self) -> usize {
        self.stash.len()
    }

    /// Block events one access emits, including recursive map traffic.
    pub fn events_per_access(&self) -> u64 {
        let own = 2 * self.levels() as u64 * BUCKET_SLOTS;
        match &self.pos {
            PosMap::Direct(_) => own,
            PosMap::Recursive { inner, .. } => own + inner.events_per_access(),
        }
    }

    fn encode_slot(&self, live: Option<(&[u8], u32)>) -> Vec<u8> {
        let mut out = vec![0u8; self.block_size as usize + HDR];
        if let Some((data, leaf)) = live {
            out[0] = 1;
            out[1..5].copy_from_slice(&leaf.to_le_bytes());
            out[HDR..HDR + data.len()].copy_from_slice(data);
        }
        out
    }

    fn check_id(&self, id: u64) -> Result<()> {
        if id >= self.capacity {
            return Err(EngineError::OutOfBounds {
                region: self.region,
                address: id,
                blocks: self.capacity,
            });
        }
        Ok(())
    }

    /// Fetch the block's current leaf and assign it a fresh one, through
    /// whichever map representation is active. Exactly one fixed-shape map
    /// access per call. Returns (old leaf, fresh leaf).
    fn remap(&mut self, mem: &mut MemoryEngine, id: u64) -> Result<(u32, u32)> {
        let leaf_count = 1u32 << self.l_max;
        let fresh = mem.rng().gen_range(0..leaf_count);
        match &mut self.pos {
            PosMap::Direct(map) => {
                let old = map[id as usize];
                map[id as usize] = fresh;
                Ok((old, fresh))
            }
            PosMap::Recursive { inner, fanout } => {
                let packed_id = id / *fanout;
                let slot = (id % *fanout) as usize * 4;
                let mut old = 0u32;
                inner.access_update(mem, packed_id, |data| {
                    old = u32::from_le_bytes(data[slot..slot + 4].try_into().unwrap());
                    data[slot..slot + 4].copy_from_slice(&fresh.to_le_bytes());
                })?;
                // Packed blocks start zeroed, and zero is a valid leaf, so a
                // first touch maps to leaf 0; the modulo only guards the
                // degenerate single-leaf tree.
                Ok((old % leaf_count.max(1), fresh))
            }
        }
    }

    /// One oblivious access. Reads the block's path, applies `update` to the
    /// block's data (a fresh zeroed buffer if the id was never written and
    /// `insert_if_absent`), and rewrites the path. Returns the data as it
    /// was before the update, or None if absent.
    fn access(
        &mut self,
        mem: &mut MemoryEngine,
        id: u64,
        insert_if_absent: bool,
        update: Option<&mut dyn FnMut(&mut Vec<u8>)>,
    ) -> Result<Option<Vec<u8>>> {
        self.check_id(id)?;
        let (path_leaf, fresh_leaf) = self.remap(mem, id)?;

        // Read the whole path root to leaf. Live blocks join the stash with
        // their cached leaf, so eviction never consults the position map.
        for level in 0..=self.l_max {
            let bucket = bucket_index(self.l_max, path_leaf, level);
            for s in 0..BUCKET_SLOTS {
                let blk = mem.block_read(self.region, bucket * BUCKET_SLOTS + s)?;
                if blk.payload[0] == 1 {
                    let leaf = u32::from_le_bytes(blk.payload[1..5].try_into().unwrap());
                    debug_assert!(
                        !self.stash.iter().any(|e| e.id == blk.row_id),
                        "block resident twice"
                    );
                    self.stash.push(StashEntry {
                        id: blk.row_id,
                        leaf,
                        data: blk.payload[HDR..].to_vec(),
                    });
                }
            }
        }

        let mut prior = None;
        match self.stash.iter_mut().find(|e| e.id == id) {
            Some(e) => {
                prior = Some(e.data.clone());
                e.leaf = fresh_leaf;
                if let Some(f) = update {
                    f(&mut e.data);
                }
            }
            None => {
                if insert_if_absent {
                    let mut data = vec![0u8; self.block_size as usize];
                    if let Some(f) = update {
                        f(&mut data);
                    }
                    self.stash.push(StashEntry {
                        id,
                        leaf: fresh_leaf,
                        data,
                    });
                }
            }
        }

        self.evict_and_write_path(mem, path_leaf)?;

        if self.stash.len() > STASH_GUARD {
            return Err(EngineError::StashOverflow {
                len: self.stash.len(),
            });
        }
        Ok(prior)
    }

    fn evict_and_write_path(&mut self, mem: &mut MemoryEngine, path_leaf: u32) -> Result<()> {
        // Greedy selection, deepest level first, smaller id wins ties.
        let mut placement: Vec<Vec<StashEntry>> = Vec::with_capacity(self.levels() as usize);
        for level in (0..=self.l_max).rev() {
            let bucket = bucket_index(self.l_max, path_leaf, level);
            let mut candidates: Vec<usize> = (0..self.stash.len())
                .filter(|&k| bucket_index(self.l_max, self.stash[k].leaf, level) == bucket)
                .collect();
            candidates.sort_by_key(|&k| self.stash[k].id);
            candidates.truncate(BUCKET_SLOTS as usize);
            // swap_remove is index-safe when removing back to front.
            candidates.sort_unstable_by(|a, b| b.cmp(a));
            let mut chosen: Vec<StashEntry> = candidates
                .into_iter()
                .map(|k| self.stash.swap_remove(k))
                .collect();
            chosen.sort_by_key(|e| e.id);
            placement.push(chosen);
        }
        placement.reverse(); // placement[level] for level 0..=L

        // Rewrite root to leaf so write addresses mirror read addresses.
        for level in 0..=self.l_max {
            let bucket = bucket_index(self.l_max, path_leaf, level);
            let entries = &placement[level as usize];
            for s in 0..BUCKET_SLOTS {
                let addr = bucket * BUCKET_SLOTS + s;
                match entries.get(s as usize) {
                    Some(e) => {
                        let payload = self.encode_slot(Some((&e.data, e.leaf)));
                        mem.block_write(self.region, addr, &payload, e.id)?;
                    }
                    None => {
                        let payload = self.encode_slot(None);
                        mem.block_write(self.region, addr, &payload, crate::crypto::NO_ROW)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read(&mut self, mem: &mut MemoryEngine, id: u64) -> Result<Option<Vec<u8>>> {
        self.access(mem, id, false, None)
    }

    pub fn write(&mut self, mem: &mut MemoryEngine, id: u64, data: &[u8]) -> Result<Option<Vec<u8>>> {
        assert_eq!(data.len(), self.block_size as usize, "payload must fill the block");
        let data = data.to_vec();
        self.access(
            mem,
            id,
            true,
            Some(&mut move |d: &mut Vec<u8>| d.copy_from_slice(&data)),
        )
    }

    /// Read-modify-write in a single path access.
    pub fn access_update(
        &mut self,
        mem: &mut MemoryEngine,
        id: u64,
        f: impl FnMut(&mut Vec<u8>),
    ) -> Result<Option<Vec<u8>>> {
        let mut f = f;
        self.access(mem, id, true, Some(&mut f))
    }

    /// A dummy access: full fixed-shape path traffic against a reserved id,
    /// changing nothing. Used by callers that pad operation sequences to
    /// worst-case counts.
    pub fn dummy_access(&mut self, mem: &mut MemoryEngine) -> Result<()> {
        self.access(mem, 0, false, None)?;
        Ok(())
    }

    /// Visit every live block exactly once: a fixed scan of all tree slots
    /// in address order, then the stash (enclave memory, no events).
    pub fn linear_scan(
        &mut self,
        mem: &mut MemoryEngine,
        mut visit: impl FnMut(u64, &[u8]),
    ) -> Result<()> {
        for addr in 0..self.tree_slots() {
            let blk = mem.block_read(self.region, addr)?;
            if blk.payload[0] == 1 {
                visit(blk.row_id, &blk.payload[HDR..]);
            }
        }
        for e in &self.stash {
            visit(e.id, &e.data);
        }
        Ok(())
    }

    pub fn free(self, mem: &mut MemoryEngine) -> Result<()> {
        mem.region_free(self.region)?;
        if let PosMap::Recursive { inner, .. } = self.pos {
            inner.free(mem)?;
        }
        mem.budget_mut().release(self.budget_charged);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Op;
    use rand::SeedableRng;

    fn engine(seed: u64) -> MemoryEngine {
        MemoryEngine::new(1 << 22, Some(seed))
    }

    #[test]
    fn level_count_matches_capacity() {
        for (cap, l) in [(1, 0), (2, 1), (3, 2), (4, 2), (5, 3), (64, 6), (65, 7), (1024, 10)] {
            assert_eq!(levels_for(cap), l, "capacity {cap}");
        }
    }

    #[test]
    fn oracle_random_ops() {
        let mut mem = engine(11);
        let mut oram = PathOram::init(&mut mem, 100, 32, false).unwrap();
        let mut mirror: Vec<Option<Vec<u8>>> = vec![None; 100];
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(99);
        for step in 0..2000u32 {
            let id = rng.gen_range(0..100u64);
            match rng.gen_range(0..3) {
                0 => {
                    let got = oram.read(&mut mem, id).unwrap();
                    assert_eq!(got, mirror[id as usize], "read {id} at step {step}");
                }
                1 => {
                    let mut data = vec![0u8; 32];
                    rng.fill(&mut data[..]);
                    let prior = oram.write(&mut mem, id, &data).unwrap();
                    assert_eq!(prior, mirror[id as usize]);
                    mirror[id as usize] = Some(data);
                }
                _ => {
                    let prior = oram
                        .access_update(&mut mem, id, |d| d[0] = d[0].wrapping_add(1))
                        .unwrap();
                    assert_eq!(prior, mirror[id as usize]);
                    let mut next = mirror[id as usize].clone().unwrap_or_else(|| vec![0u8; 32]);
                    next[0] = next[0].wrapping_add(1);
                    mirror[id as usize] = Some(next);
                }
            }
            assert!(oram.stash_len() < 256, "stash blew up: {}", oram.stash_len());
        }
        // Every surviving value is still intact.
        for id in 0..100u64 {
            assert_eq!(oram.read(&mut mem, id).unwrap(), mirror[id as usize]);
        }
    }

    #[test]
    fn every_access_is_one_fixed_path() {
        let mut mem = engine(3);
        let mut oram = PathOram::init(&mut mem, 100, 16, false).unwrap();
        let per = oram.events_per_access();
        assert_eq!(per, 2 * 8 * BUCKET_SLOTS); // L = 7 for capacity 100
        mem.trace_mut().take();
        for id in [0u64, 7, 99, 7] {
            oram.write(&mut mem, id, &[1u8; 16]).unwrap();
            let events = mem.trace_mut().take();
            assert_eq!(events.len() as u64, per);
            let half = events.len() / 2;
            assert!(events[..half].iter().all(|e| e.op == Op::Read));
            assert!(events[half..].iter().all(|e| e.op == Op::Write));
            let read_addrs: Vec<u64> = events[..half].iter().map(|e| e.address).collect();
            let write_addrs: Vec<u64> = events[half..].iter().map(|e| e.address).collect();
            assert_eq!(read_addrs, write_addrs, "write path mirrors read path");
        }
        // Reads and writes are indistinguishable in shape.
        oram.read(&mut mem, 42).unwrap();
        assert_eq!(mem.trace_mut().take().len() as u64, per);
    }

    #[test]
    fn same_seed_same_trace_different_data() {
        let run = |fill: u8| {
            let mut mem = engine(77);
            let mut oram = PathOram::init(&mut mem, 64, 24, false).unwrap();
            for id in 0..64u64 {
                oram.write(&mut mem, id, &[fill ^ id as u8; 24]).unwrap();
            }
            for id in (0..64u64).rev() {
                oram.read(&mut mem, id).unwrap();
            }
            mem.trace_mut().take()
        };
        let a = run(0x00);
        let b = run(0xAB);
        assert_eq!(
            crate::trace::trace_diff(&a, &b),
            crate::trace::TraceDiff::Equal
        );
    }

    #[test]
    fn absent_read_costs_the_same_and_returns_none() {
        let mut mem = engine(5);
        let mut oram = PathOram::init(&mut mem, 32, 8, false).unwrap();
        mem.trace_mut().take();
        assert_eq!(oram.read(&mut mem, 9).unwrap(), None);
        assert_eq!(mem.trace_mut().take().len() as u64, oram.events_per_access());
        assert_eq!(oram.stash_len(), 0, "absent reads must not grow the stash");
    }

    #[test]
    fn dummy_access_preserves_content() {
        let mut mem = engine(6);
        let mut oram = PathOram::init(&mut mem, 16, 8, false).unwrap();
        oram.write(&mut mem, 0, &[9u8; 8]).unwrap();
        mem.trace_mut().take();
        for _ in 0..5 {
            oram.dummy_access(&mut mem).unwrap();
            assert_eq!(mem.trace_mut().take().len() as u64, oram.events_per_access());
        }
        assert_eq!(oram.read(&mut mem, 0).unwrap(), Some(vec![9u8; 8]));
    }

    #[test]
    fn recursive_map_agrees_with_direct_and_charges_less() {
        let mut direct_mem = engine(21);
        let mut rec_mem = engine(21);
        let mut direct = PathOram::init(&mut direct_mem, 256, 16, false).unwrap();
        let mut rec = PathOram::init(&mut rec_mem, 256, 16, true).unwrap();
        assert_eq!(direct_mem.budget().used(), 256 * POSMAP_ENTRY_BYTES);
        assert_eq!(
            rec_mem.budget().used(),
            256u64.div_ceil(POSMAP_FANOUT) * POSMAP_ENTRY_BYTES
        );
        assert!(rec.events_per_access() > direct.events_per_access());
        for id in 0..256u64 {
            let data = [id as u8; 16];
            direct.write(&mut direct_mem, id, &data).unwrap();
            rec.write(&mut rec_mem, id, &data).unwrap();
        }
        for id in (0..256u64).step_by(7) {
            assert_eq!(
                direct.read(&mut direct_mem, id).unwrap(),
                rec.read(&mut rec_mem, id).unwrap()
            );
        }
    }

    #[test]
    fn linear_scan_visits_every_live_block_once() {
        let mut mem = engine(31);
        let mut oram = PathOram::init(&mut mem, 40, 8, false).unwrap();
        for id in 0..25u64 {
            oram.write(&mut mem, id, &[id as u8; 8]).unwrap();
        }
        let mut seen = Vec::new();
        oram.linear_scan(&mut mem, |id, data| {
            assert_eq!(data, &[id as u8; 8]);
            seen.push(id);
        })
        .unwrap();
        seen.sort_unstable();
        assert_eq!(seen, (0..25u64).collect::<Vec<_>>());
    }

    #[test]
    fn scan_trace_is_every_slot_in_address_order() {
        let mut mem = engine(32);
        let mut oram = PathOram::init(&mut mem, 16, 8, false).unwrap();
        oram.write(&mut mem, 3, &[1u8; 8]).unwrap();
        mem.trace_mut().take();
        oram.linear_scan(&mut mem, |_, _| {}).unwrap();
        let events = mem.trace_mut().take();
        assert_eq!(events.len() as u64, oram.tree_slots());
        for (i, e) in events.iter().enumerate() {
            assert_eq!(e.op, Op::Read);
            assert_eq!(e.address, i as u64);
        }
    }

    #[test]
    fn out_of_range_id_rejected() {
        let mut mem = engine(1);
        let mut oram = PathOram::init(&mut mem, 8, 8, false).unwrap();
        assert!(matches!(
            oram.read(&mut mem, 8),
            Err(EngineError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn free_returns_budget() {
        let mut mem = engine(2);
        let before = mem.budget().used();
        let oram = PathOram::init(&mut mem, 128, 8, false).unwrap();
        assert!(mem.budget().used() > before);
        oram.free(&mut mem).unwrap();
        assert_eq!(mem.budget().used(), before);
    }
}
