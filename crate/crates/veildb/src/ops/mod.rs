//! Query operators.
//!
//! Every operator here makes its access trace a function of public sizes
//! alone: input scan length, declared result size, and the enclave budget.
//! Row content decides only what ciphertext gets written, never where or
//! when. Operators size their scratch against the free budget but do not
//! hold it past their own return; the budget ledger tracks long-lived
//! structures (ORAM trees, group tables) instead.

pub mod aggregate;
pub mod bitonic;
pub mod join;
pub mod select;

use crate::btree::{BTreeIndex, Cursor};
use crate::error::Result;
use crate::memory::{MemoryEngine, RegionId};
use crate::table::Table;

pub use aggregate::{aggregate, group_aggregate};
pub use join::{hash_join, opaque_join};
pub use select::{
    select_continuous, select_hash, select_index_range, select_large, select_naive, select_small,
};

/// One fixed-shape pass over a table's rows. Flat storage yields every
/// block (dummies included) by address; index storage walks the leaf chain
/// and yields live rows in key order; a region source scans a result
/// region's written prefix, which lets aggregation run over join output.
/// Either way the pass shape depends only on the scan length.
pub enum RowSource<'t> {
    Flat { table: &'t Table, pos: u64 },
    Index { index: &'t mut BTreeIndex, cursor: Option<Cursor>, done: bool },
    Region { region: RegionId, row_size: u32, len: u64, pos: u64 },
}

impl<'t> RowSource<'t> {
    /// Scan through the preferred representation: flat when present.
    pub fn for_table(table: &'t mut Table) -> Self {
        if table.method().has_flat() {
            RowSource::Flat { table, pos: 0 }
        } else {
            RowSource::Index {
                index: table.index_mut().expect("index-only table has an index"),
                cursor: None,
                done: false,
            }
        }
    }

    /// Scan over a result region's written prefix (dense by construction
    /// for every operator that produces one).
    pub fn for_result(result: &crate::table::ResultTable) -> RowSource<'static> {
        RowSource::Region {
            region: result.region,
            row_size: result.schema.row_size(),
            len: result.written,
            pos: 0,
        }
    }

    pub fn scan_length(&self) -> u64 {
        match self {
            RowSource::Flat { table, .. } => table.capacity(),
            RowSource::Index { index, .. } => index.live_rows(),
            RowSource::Region { len, .. } => *len,
        }
    }

    pub fn begin_pass(&mut self) {
        match self {
            RowSource::Flat { pos, .. } => *pos = 0,
            RowSource::Index { cursor, done, .. } => {
                *cursor = None;
                *done = false;
            }
            RowSource::Region { pos, .. } => *pos = 0,
        }
    }

    /// Next row's bytes, or None at end of pass.
    pub fn next(&mut self, mem: &mut MemoryEngine) -> Result<Option<Vec<u8>>> {
        match self {
            RowSource::Flat { table, pos } => {
                if *pos == table.capacity() {
                    return Ok(None);
                }
                let row = table.read_flat(mem, *pos)?;
                *pos += 1;
                Ok(Some(row))
            }
            RowSource::Index { index, cursor, done } => {
                if *done {
                    return Ok(None);
                }
                match cursor {
                    None => *cursor = Some(index.cursor_first(mem)?),
                    Some(cur) => {
                        if index.cursor_has_next(cur) {
                            index.cursor_step(mem, cur)?;
                        } else {
                            *done = true;
                            return Ok(None);
                        }
                    }
                }
                let cur = cursor.as_ref().unwrap();
                if !cur.live() {
                    *done = true;
                    return Ok(None);
                }
                Ok(Some(cur.image.as_ref().unwrap().row.clone()))
            }
            RowSource::Region { region, row_size, len, pos } => {
                if *pos == *len {
                    return Ok(None);
                }
                let blk = mem.block_read(*region, *pos)?;
                *pos += 1;
                Ok(Some(blk.payload[..*row_size as usize].to_vec()))
            }
        }
    }
}

/// Cheap mixer for derived probe addresses and enclave-side hashing.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
pub(crate) mod testutil {
    use crate::memory::MemoryEngine;
    use crate::rows::{ColType, Column, Schema, Value};
    use crate::table::{StorageMethod, Table};

    pub fn engine(seed: u64) -> MemoryEngine {
        MemoryEngine::new(1 << 24, Some(seed))
    }

    pub fn engine_sized(budget: u64, seed: u64) -> MemoryEngine {
        MemoryEngine::new(budget, Some(seed))
    }

    pub fn int_schema(cols: &[&str]) -> Schema {
        Schema::new(
            cols.iter()
                .map(|n| Column { name: (*n).into(), ty: ColType::Int64 })
                .collect(),
        )
        .unwrap()
    }

    pub fn int_rows(rows: &[Vec<i64>]) -> Vec<Vec<Value>> {
        rows.iter()
            .map(|r| r.iter().map(|v| Value::Int(*v)).collect())
            .collect()
    }

    pub fn flat_table(
        mem: &mut MemoryEngine,
        name: &str,
        cols: &[&str],
        rows: &[Vec<i64>],
        capacity: u64,
    ) -> Table {
        let mut t = Table::create(
            mem,
            name,
            int_schema(cols),
            StorageMethod::Flat,
            capacity,
            None,
            false,
            0,
        )
        .unwrap();
        for r in int_rows(rows) {
            t.insert(mem, &r, true).unwrap();
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::rows::Value;
    use crate::table::{StorageMethod, Table};

    #[test]
    fn flat_source_yields_every_block() {
        let mut mem = engine(1);
        let mut t = flat_table(&mut mem, "t", &["a"], &[vec![1], vec![2]], 5);
        let mut src = RowSource::for_table(&mut t);
        assert_eq!(src.scan_length(), 5);
        let mut n = 0;
        src.begin_pass();
        while src.next(&mut mem).unwrap().is_some() {
            n += 1;
        }
        assert_eq!(n, 5, "dummy blocks included");
    }

    #[test]
    fn index_source_yields_live_rows_in_key_order_every_pass() {
        let mut mem = engine(2);
        let mut t = Table::create(
            &mut mem,
            "i",
            int_schema(&["a", "b"]),
            StorageMethod::Indexed,
            16,
            Some(0),
            false,
            0,
        )
        .unwrap();
        for v in [4i64, 1, 3, 2] {
            t.insert(&mut mem, &[Value::Int(v), Value::Int(v * 10)], false)
                .unwrap();
        }
        let mut src = RowSource::for_table(&mut t);
        assert_eq!(src.scan_length(), 4);
        for _ in 0..2 {
            src.begin_pass();
            let mut seen = Vec::new();
            while let Some(bytes) = src.next(&mut mem).unwrap() {
                let vals = crate::rows::decode_row(&int_schema(&["a", "b"]), &bytes).unwrap();
                match vals[0] {
                    Value::Int(v) => seen.push(v),
                    _ => unreachable!(),
                }
            }
            assert_eq!(seen, vec![1, 2, 3, 4]);
        }
    }

    #[test]
    fn splitmix_spreads() {
        let a = splitmix64(0);
        let b = splitmix64(1);
        assert_ne!(a, b);
        assert_ne!(splitmix64(a), splitmix64(b));
    }
}
