//! Tables and their storage representations.
//!
//! A table stores rows one-per-block in a flat region (scan everything,
//! always), in an oblivious B+ tree (ordered access inside an ORAM), or in
//! both at once. Flat writes are made data-independent by rewriting every
//! block in a pass — unaffected blocks get a fresh re-encryption of their
//! old contents, so ciphertexts all change and the trace is a pure function
//! of capacity. When both representations exist, every flat row mirrors into
//! the index keyed by (key column, flat address + 1), which lets a mutation
//! pass address the exact index leaf for each affected row.

use std::ops::Bound;

use crate::btree::{BTreeIndex, Cursor};
use crate::error::{EngineError, Result};
use crate::memory::{MemoryEngine, RegionId};
use crate::planner::key_range_of;
use crate::rows::{
    decode_row, dummy_row, encode_key, encode_row, row_is_live, Assign, Predicate, Schema, Value,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StorageMethod {
    Flat,
    Indexed,
    Both,
}

impl StorageMethod {
    pub fn has_flat(self) -> bool {
        matches!(self, StorageMethod::Flat | StorageMethod::Both)
    }

    pub fn has_index(self) -> bool {
        matches!(self, StorageMethod::Indexed | StorageMethod::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            StorageMethod::Flat => "flat",
            StorageMethod::Indexed => "indexed",
            StorageMethod::Both => "both",
        }
    }
}

/// Mutation applied by a predicate pass.
#[derive(Debug, Clone)]
pub enum MutateAction {
    Update(Vec<(usize, Assign)>),
    Delete,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub schema: Schema,
    capacity: u64,
    live_rows: u64,
    method: StorageMethod,
    flat_region: Option<RegionId>,
    flat_block_size: u32,
    index: Option<BTreeIndex>,
    key_col: Option<usize>,
    /// Next address for constant-time inserts; never looks backward at holes.
    fast_pos: u64,
    /// Sequence source for index-only tables (Both tables derive sequence
    /// numbers from flat addresses instead).
    next_seq: u64,
}

impl Table {
    pub fn create(
        mem: &mut MemoryEngine,
        name: &str,
        schema: Schema,
        method: StorageMethod,
        capacity: u64,
        key_col: Option<usize>,
        oram_recursion: bool,
        min_block_size: u32,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(EngineError::TypeError(format!(
                "table {name}: capacity must be positive"
            )));
        }
        if method.has_index() && key_col.is_none() {
            return Err(EngineError::TypeError(format!(
                "table {name}: indexed storage needs a key column"
            )));
        }
        let flat_block_size = schema.row_size().max(min_block_size);
        let flat_region = if method.has_flat() {
            let region = mem.region_create(flat_block_size, capacity)?;
            // Initialize every slot so later scans never hit a never-written
            // block; trace = capacity writes.
            let filler = pad_block(&dummy_row(&schema), flat_block_size);
            for addr in 0..capacity {
                mem.block_write(region, addr, &filler, addr)?;
            }
            Some(region)
        } else {
            None
        };
        let index = if method.has_index() {
            let col = key_col.unwrap();
            let kw = schema.columns()[col].ty.width() as u16;
            Some(BTreeIndex::create(
                mem,
                capacity,
                kw,
                schema.row_size(),
                oram_recursion,
            )?)
        } else {
            None
        };
        Ok(Self {
            name: name.to_string(),
            schema,
            capacity,
            live_rows: 0,
            method,
            flat_region,
            flat_block_size,
            index,
            key_col,
            fast_pos: 0,
            next_seq: 1,
        })
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn live_rows(&self) -> u64 {
        self.live_rows
    }

    pub fn method(&self) -> StorageMethod {
        self.method
    }

    /// True while constant-time inserts would start from address 0, i.e.
    /// the table has never been written through either insert path.
    pub fn fast_insert_ready(&self) -> bool {
        self.fast_pos == 0
    }

    pub fn key_col(&self) -> Option<usize> {
        self.key_col
    }

    pub fn flat_region(&self) -> Option<RegionId> {
        self.flat_region
    }

    pub fn flat_block_size(&self) -> u32 {
        self.flat_block_size
    }

    pub fn index(&self) -> Option<&BTreeIndex> {
        self.index.as_ref()
    }

    pub fn index_mut(&mut self) -> Option<&mut BTreeIndex> {
        self.index.as_mut()
    }

    /// Rows the scan representation touches: blocks for flat, live leaves
    /// for index-only.
    pub fn scan_length(&self) -> u64 {
        if self.method.has_flat() {
            self.capacity
        } else {
            self.live_rows
        }
    }

    fn key_bytes(&self, values: &[Value]) -> Result<Vec<u8>> {
        let col = self.key_col.expect("index table has a key column");
        encode_key(self.schema.columns()[col].ty, &values[col])
    }

    /// Read one flat block and slice the row bytes out of it.
    pub fn read_flat(&self, mem: &mut MemoryEngine, addr: u64) -> Result<Vec<u8>> {
        let region = self.flat_region.expect("flat storage present");
        let blk = mem.block_read(region, addr)?;
        Ok(blk.payload[..self.schema.row_size() as usize].to_vec())
    }

    fn write_flat(&self, mem: &mut MemoryEngine, addr: u64, row: &[u8]) -> Result<()> {
        let region = self.flat_region.expect("flat storage present");
        mem.block_write(region, addr, &pad_block(row, self.flat_block_size), addr)
    }

    pub fn insert(&mut self, mem: &mut MemoryEngine, values: &[Value], fast: bool) -> Result<()> {
        if self.live_rows >= self.capacity {
            return Err(EngineError::TableFull(self.name.clone()));
        }
        let row = encode_row(&self.schema, values)?;
        if self.method.has_flat() {
            let addr = if fast {
                self.fast_insert_flat(mem, &row)?
            } else {
                self.scan_insert_flat(mem, &row)?
            };
            if let Some(index) = self.index.as_mut() {
                let key = encode_key(
                    self.schema.columns()[self.key_col.unwrap()].ty,
                    &values[self.key_col.unwrap()],
                )?;
                index.insert(mem, &key, addr + 1, &row)?;
            }
        } else {
            let key = self.key_bytes(values)?;
            let seq = self.next_seq;
            self.next_seq += 1;
            self.index.as_mut().unwrap().insert(mem, &key, seq, &row)?;
        }
        self.live_rows += 1;
        Ok(())
    }

    /// One full pass; the first unused block takes the row, every other
    /// block is re-encrypted unchanged. Trace: capacity (read, write) pairs.
    fn scan_insert_flat(&mut self, mem: &mut MemoryEngine, row: &[u8]) -> Result<u64> {
        let mut placed: Option<u64> = None;
        for addr in 0..self.capacity {
            let current = self.read_flat(mem, addr)?;
            if placed.is_none() && !row_is_live(&current) {
                self.write_flat(mem, addr, row)?;
                placed = Some(addr);
            } else if !mem.knobs.skip_dummy_writes {
                self.write_flat(mem, addr, &current)?;
            }
        }
        let addr = placed.ok_or_else(|| EngineError::TableFull(self.name.clone()))?;
        self.fast_pos = self.fast_pos.max(addr + 1);
        Ok(addr)
    }

    /// Single write at the saved position. Trace: one write event.
    fn fast_insert_flat(&mut self, mem: &mut MemoryEngine, row: &[u8]) -> Result<u64> {
        if self.fast_pos >= self.capacity {
            return Err(EngineError::TableFull(self.name.clone()));
        }
        let addr = self.fast_pos;
        self.write_flat(mem, addr, row)?;
        self.fast_pos += 1;
        Ok(addr)
    }

    /// Predicate-driven update/delete. One fixed-shape pass over the scan
    /// representation; matching rows change, everything else is rewritten
    /// unchanged. Returns the affected count (which the caller learns
    /// anyway from the answer — it is part of the declared leakage for
    /// mutations, as index mirroring costs one padded operation per
    /// affected row).
    pub fn mutate(
        &mut self,
        mem: &mut MemoryEngine,
        predicate: &Predicate,
        action: &MutateAction,
    ) -> Result<u64> {
        if self.method.has_flat() {
            self.mutate_flat(mem, predicate, action)
        } else {
            self.mutate_index_only(mem, predicate, action)
        }
    }

    fn apply_action(&self, action: &MutateAction, values: &[Value]) -> Option<Vec<Value>> {
        match action {
            MutateAction::Delete => None,
            MutateAction::Update(assigns) => {
                let mut next = values.to_vec();
                for (col, assign) in assigns {
                    next[*col] = assign.apply(values);
                }
                Some(next)
            }
        }
    }

    fn mutate_flat(
        &mut self,
        mem: &mut MemoryEngine,
        predicate: &Predicate,
        action: &MutateAction,
    ) -> Result<u64> {
        let mut affected: Vec<(u64, Vec<Value>, Option<Vec<Value>>)> = Vec::new();
        for addr in 0..self.capacity {
            let current = self.read_flat(mem, addr)?;
            let hit = decode_row(&self.schema, &current)
                .filter(|values| predicate.eval(values))
                .map(|values| {
                    let next = self.apply_action(action, &values);
                    (values, next)
                });
            match hit {
                Some((old, Some(new))) => {
                    let bytes = encode_row(&self.schema, &new)?;
                    self.write_flat(mem, addr, &bytes)?;
                    affected.push((addr, old, Some(new)));
                }
                Some((old, None)) => {
                    self.write_flat(mem, addr, &dummy_row(&self.schema))?;
                    affected.push((addr, old, None));
                }
                None => {
                    if !mem.knobs.skip_dummy_writes {
                        self.write_flat(mem, addr, &current)?;
                    }
                }
            }
        }
        let count = affected.len() as u64;
        for (addr, old, new) in &affected {
            if new.is_none() {
                self.live_rows -= 1;
            }
            if self.index.is_some() {
                let old_key = self.key_bytes(old)?;
                let seq = addr + 1;
                let removed = self.index.as_mut().unwrap().delete_exact(mem, &old_key, seq)?;
                debug_assert!(removed, "index out of step with flat storage");
                if let Some(new) = new {
                    let new_key = self.key_bytes(new)?;
                    let bytes = encode_row(&self.schema, new)?;
                    self.index.as_mut().unwrap().insert(mem, &new_key, seq, &bytes)?;
                }
            }
        }
        Ok(count)
    }

    fn mutate_index_only(
        &mut self,
        mem: &mut MemoryEngine,
        predicate: &Predicate,
        action: &MutateAction,
    ) -> Result<u64> {
        // Pure key-range predicates walk only the affected part of the leaf
        // chain (the walk length equals the affected count, which mutations
        // declare anyway). Everything else is a fixed-shape pass over the
        // whole chain, deciding in-enclave.
        let key_col = self.key_col.expect("index table has a key column");
        let key_ty = self.schema.columns()[key_col].ty;
        let rows = match key_range_of(predicate, key_col, key_ty) {
            Some((lo, hi)) => self.collect_index_range(mem, &lo, &hi)?,
            None => self.index.as_mut().unwrap().scan_all(mem)?,
        };
        let mut affected = Vec::new();
        for (key, seq, bytes) in rows {
            if let Some(values) = decode_row(&self.schema, &bytes) {
                if predicate.eval(&values) {
                    let next = self.apply_action(action, &values);
                    affected.push((key, seq, next));
                }
            }
        }
        let count = affected.len() as u64;
        for (key, seq, next) in affected {
            let replacement = match next {
                Some(values) => {
                    Some((self.key_bytes(&values)?, encode_row(&self.schema, &values)?))
                }
                None => None,
            };
            let index = self.index.as_mut().unwrap();
            let removed = index.delete_exact(mem, &key, seq)?;
            debug_assert!(removed);
            match replacement {
                Some((new_key, bytes)) => index.insert(mem, &new_key, seq, &bytes)?,
                None => self.live_rows -= 1,
            }
        }
        Ok(count)
    }

    /// Collect `(key, seq, row)` for every leaf inside the key range, in
    /// chain order. Same walk shape as the planner's range count.
    fn collect_index_range(
        &mut self,
        mem: &mut MemoryEngine,
        lo: &Bound<Vec<u8>>,
        hi: &Bound<Vec<u8>>,
    ) -> Result<Vec<(Vec<u8>, u64, Vec<u8>)>> {
        let index = self.index.as_mut().unwrap();
        let mut cur = match lo {
            Bound::Unbounded => index.cursor_first(mem)?,
            Bound::Included(k) | Bound::Excluded(k) => {
                let mut cur = index.locate(mem, k)?;
                index.cursor_advance_to(mem, &mut cur, k)?;
                cur
            }
        };
        if let Bound::Excluded(k) = lo {
            while cur.live() && cur.image.as_ref().unwrap().key == *k {
                if index.cursor_has_next(&cur) {
                    index.cursor_step(mem, &mut cur)?;
                } else {
                    cur = Cursor::empty();
                }
            }
        }
        let mut out = Vec::new();
        while cur.live() {
            let img = cur.image.as_ref().unwrap();
            let inside = match hi {
                Bound::Included(h) => img.key <= *h,
                Bound::Excluded(h) => img.key < *h,
                Bound::Unbounded => true,
            };
            if !inside {
                break;
            }
            out.push((img.key.clone(), img.seq, img.row.clone()));
            if index.cursor_has_next(&cur) {
                index.cursor_step(mem, &mut cur)?;
            } else {
                break;
            }
        }
        Ok(out)
    }

    /// Live rows via the flat representation (one full scan).
    pub fn rows_via_flat(&self, mem: &mut MemoryEngine) -> Result<Vec<Vec<Value>>> {
        let mut out = Vec::new();
        for addr in 0..self.capacity {
            let bytes = self.read_flat(mem, addr)?;
            if let Some(values) = decode_row(&self.schema, &bytes) {
                out.push(values);
            }
        }
        Ok(out)
    }

    /// Live rows via the index (leaf chain walk, key order).
    pub fn rows_via_index(&mut self, mem: &mut MemoryEngine) -> Result<Vec<Vec<Value>>> {
        let rows = self.index.as_mut().expect("indexed storage").scan_all(mem)?;
        Ok(rows
            .into_iter()
            .filter_map(|(_, _, bytes)| decode_row(&self.schema, &bytes))
            .collect())
    }

    /// Copy into a larger table. Out of the hot path: tables error at
    /// capacity rather than resize implicitly.
    pub fn grow(mut self, mem: &mut MemoryEngine, new_capacity: u64) -> Result<Table> {
        if new_capacity < self.capacity {
            return Err(EngineError::TypeError(format!(
                "table {}: grow target below current capacity",
                self.name
            )));
        }
        let mut bigger = Table::create(
            mem,
            &self.name,
            self.schema.clone(),
            self.method,
            new_capacity,
            self.key_col,
            false,
            self.flat_block_size,
        )?;
        if self.method.has_flat() {
            for addr in 0..self.capacity {
                let row = self.read_flat(mem, addr)?;
                bigger.write_flat(mem, addr, &row)?;
                if row_is_live(&row) && bigger.index.is_some() {
                    let values = decode_row(&self.schema, &row).unwrap();
                    let key = bigger.key_bytes(&values)?;
                    bigger.index.as_mut().unwrap().insert(mem, &key, addr + 1, &row)?;
                }
            }
        } else {
            for (key, seq, row) in self.index.as_mut().unwrap().scan_all(mem)? {
                bigger.index.as_mut().unwrap().insert(mem, &key, seq, &row)?;
            }
        }
        bigger.live_rows = self.live_rows;
        bigger.fast_pos = self.fast_pos;
        bigger.next_seq = self.next_seq;
        if let Some(region) = self.flat_region {
            mem.region_free(region)?;
        }
        if let Some(index) = self.index.take() {
            index.free(mem)?;
        }
        Ok(bigger)
    }

    pub fn free(mut self, mem: &mut MemoryEngine) -> Result<()> {
        if let Some(region) = self.flat_region {
            mem.region_free(region)?;
        }
        if let Some(index) = self.index.take() {
            index.free(mem)?;
        }
        Ok(())
    }
}

pub fn pad_block(row: &[u8], block_size: u32) -> Vec<u8> {
    let mut out = vec![0u8; block_size as usize];
    out[..row.len()].copy_from_slice(row);
    out
}

/// A result region: flat layout, declared size fixed by the leakage
/// contract, live rows flagged in-band. `written` tracks how much of the
/// declared region an operator actually materialized (the hash join
/// declares |T1|·|T2| but only ever writes its probe outputs).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultTable {
    pub schema: Schema,
    pub region: RegionId,
    pub block_size: u32,
    pub declared: u64,
    pub written: u64,
    pub live: u64,
}

impl ResultTable {
    pub fn alloc(
        mem: &mut MemoryEngine,
        schema: Schema,
        declared: u64,
        min_block_size: u32,
    ) -> Result<Self> {
        let block_size = schema.row_size().max(min_block_size);
        let region = mem.region_create(block_size, declared)?;
        Ok(Self {
            schema,
            region,
            block_size,
            declared,
            written: 0,
            live: 0,
        })
    }

    /// Write every declared slot with a dummy so operators that read before
    /// writing (continuous, hash) start from defined blocks.
    pub fn init_dummies(&mut self, mem: &mut MemoryEngine) -> Result<()> {
        let filler = pad_block(&dummy_row(&self.schema), self.block_size);
        for addr in 0..self.declared {
            mem.block_write(self.region, addr, &filler, addr)?;
        }
        self.written = self.declared;
        Ok(())
    }

    pub fn write_row(&mut self, mem: &mut MemoryEngine, addr: u64, row: &[u8]) -> Result<()> {
        mem.block_write(self.region, addr, &pad_block(row, self.block_size), addr)?;
        self.written = self.written.max(addr + 1);
        Ok(())
    }

    pub fn read_row(&self, mem: &mut MemoryEngine, addr: u64) -> Result<Vec<u8>> {
        let blk = mem.block_read(self.region, addr)?;
        Ok(blk.payload[..self.schema.row_size() as usize].to_vec())
    }

    /// Client-side materialization: scan the written prefix, strip dummies.
    /// This is the only place live and dummy rows part ways, and it happens
    /// after decryption on the client side of the boundary.
    pub fn materialize(&self, mem: &mut MemoryEngine) -> Result<Vec<Vec<Value>>> {
        let mut out = Vec::new();
        for addr in 0..self.written {
            let bytes = self.read_row(mem, addr)?;
            if let Some(values) = decode_row(&self.schema, &bytes) {
                out.push(values);
            }
        }
        Ok(out)
    }

    /// Extend to `target` rows with dummies. Trace depends only on the old
    /// and new declared sizes.
    pub fn pad_to(&mut self, mem: &mut MemoryEngine, target: u64) -> Result<ResultTable> {
        if self.live > target {
            return Err(EngineError::ResultExceedsPad {
                live: self.live,
                target,
            });
        }
        let mut padded = ResultTable::alloc(mem, self.schema.clone(), target, self.block_size)?;
        padded.init_dummies(mem)?;
        for addr in 0..self.written.min(target) {
            let row = self.read_row(mem, addr)?;
            padded.write_row(mem, addr, &row)?;
        }
        padded.live = self.live;
        mem.region_free(self.region)?;
        Ok(padded)
    }

    pub fn free(self, mem: &mut MemoryEngine) -> Result<()> {
        mem.region_free(self.region)
    }
}
