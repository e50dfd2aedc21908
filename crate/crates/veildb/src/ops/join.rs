//! Equi-join operators.
//!
//! Both operate on flat storage so rows are positionally addressable. The
//! hash join holds budget-sized chunks of the primary table in the enclave
//! and rescans the foreign table once per chunk, writing exactly one output
//! row (real or dummy) per probe. The sort join tags both inputs into a
//! power-of-two union region, sorts it with enclave-sorted chunks plus a
//! bitonic merge network, and emits matches in one final scan holding only
//! the last-seen primary row. With no enclave budget at all the sort join
//! degrades to chunk size one — the full network — and still goes through.

use crate::error::{EngineError, Result};
use crate::memory::MemoryEngine;
use crate::ops::bitonic::for_each_ce;
use crate::rows::{decode_row, dummy_row, encode_key, encode_row, Schema, Value};
use crate::table::{pad_block, ResultTable, Table};

/// Chunked nested-loop join. Output declared |T1|·|T2| (the worst case the
/// leakage contract admits) but only the probed prefix is ever written.
pub fn hash_join(
    mem: &mut MemoryEngine,
    t1: &Table,
    col1: usize,
    t2: &Table,
    col2: usize,
    out_schema: &Schema,
    min_block: u32,
) -> Result<ResultTable> {
    let n1 = t1.capacity();
    let n2 = t2.capacity();
    let row1 = t1.schema.row_size() as u64;
    let chunk_rows = mem.budget().free() / row1;
    if chunk_rows == 0 {
        return Err(EngineError::BudgetExceeded {
            needed: row1,
            available: mem.budget().free(),
        });
    }
    let key_ty1 = t1.schema.columns()[col1].ty;
    let key_ty2 = t2.schema.columns()[col2].ty;
    let mut out = ResultTable::alloc(mem, out_schema.clone(), n1 * n2, min_block)?;
    let chunks = n1.div_ceil(chunk_rows);
    let mut out_pos = 0u64;
    let mut live = 0u64;
    for ci in 0..chunks {
        let lo = ci * chunk_rows;
        let hi = ((ci + 1) * chunk_rows).min(n1);
        let mut chunk: Vec<(Vec<u8>, Vec<Value>)> = Vec::with_capacity((hi - lo) as usize);
        for addr in lo..hi {
            let bytes = t1.read_flat(mem, addr)?;
            if let Some(values) = decode_row(&t1.schema, &bytes) {
                chunk.push((encode_key(key_ty1, &values[col1])?, values));
            }
        }
        for addr in 0..n2 {
            let bytes = t2.read_flat(mem, addr)?;
            let joined = match decode_row(&t2.schema, &bytes) {
                Some(v2) => {
                    let k2 = encode_key(key_ty2, &v2[col2])?;
                    // First chunk entry with this key; later duplicates in
                    // the same chunk stay silent.
                    chunk.iter().find(|(k1, _)| *k1 == k2).map(|(_, v1)| {
                        let mut v = v1.clone();
                        v.extend(v2.iter().cloned());
                        v
                    })
                }
                None => None,
            };
            let row_bytes = match &joined {
                Some(v) => encode_row(out_schema, v)?,
                None => dummy_row(out_schema),
            };
            if joined.is_some() {
                live += 1;
            }
            out.write_row(mem, out_pos, &row_bytes)?;
            out_pos += 1;
        }
    }
    out.live = live;
    Ok(out)
}

const TAG_PAD: u8 = 0;
const TAG_PRIMARY: u8 = 1;
const TAG_FOREIGN: u8 = 2;

/// A union-region entry: tag byte, arrival sequence, join key, row bytes.
struct Entry {
    tag: u8,
    seq: u64,
    key: Vec<u8>,
    row: Vec<u8>,
}

impl Entry {
    fn pad(key_width: usize, row_width: usize) -> Self {
        Entry { tag: TAG_PAD, seq: 0, key: vec![0; key_width], row: vec![0; row_width] }
    }

    /// Sort rank: padding last, then key, primaries before their foreigns,
    /// arrival order breaking ties.
    fn rank(&self) -> (bool, &[u8], u8, u64) {
        (self.tag == TAG_PAD, &self.key, self.tag, self.seq)
    }

    fn encode(&self, block_size: u32) -> Vec<u8> {
        let mut out = Vec::with_capacity(block_size as usize);
        out.push(self.tag);
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.key);
        out.extend_from_slice(&self.row);
        pad_block(&out, block_size)
    }

    fn decode(bytes: &[u8], key_width: usize, row_width: usize) -> Self {
        let seq = u64::from_le_bytes(bytes[1..9].try_into().unwrap());
        Entry {
            tag: bytes[0],
            seq,
            key: bytes[9..9 + key_width].to_vec(),
            row: bytes[9 + key_width..9 + key_width + row_width].to_vec(),
        }
    }
}

/// Sort-merge join over a padded union of both inputs. `zero_budget`
/// switches off the enclave chunk sort and runs the network from chunk
/// size one.
pub fn opaque_join(
    mem: &mut MemoryEngine,
    t1: &Table,
    col1: usize,
    t2: &Table,
    col2: usize,
    out_schema: &Schema,
    min_block: u32,
    zero_budget: bool,
) -> Result<ResultTable> {
    let n = t1.capacity();
    let m = t2.capacity();
    let total = n + m;
    let p = total.next_power_of_two();
    let key_ty = t1.schema.columns()[col1].ty;
    let key_width = key_ty.width();
    let row_width = (t1.schema.row_size().max(t2.schema.row_size())) as usize;
    let ublock = (1 + 8 + key_width + row_width) as u32;
    let union = mem.region_create(ublock, p)?;

    // Fill: every input block becomes one tagged entry; dummy rows become
    // padding, indistinguishable from the size padding at the tail.
    for addr in 0..n {
        let bytes = t1.read_flat(mem, addr)?;
        let entry = match decode_row(&t1.schema, &bytes) {
            Some(values) => Entry {
                tag: TAG_PRIMARY,
                seq: addr,
                key: encode_key(key_ty, &values[col1])?,
                row: bytes,
            },
            None => Entry::pad(key_width, row_width),
        };
        mem.block_write(union, addr, &entry.encode(ublock), addr)?;
    }
    let key_ty2 = t2.schema.columns()[col2].ty;
    for addr in 0..m {
        let bytes = t2.read_flat(mem, addr)?;
        let entry = match decode_row(&t2.schema, &bytes) {
            Some(values) => Entry {
                tag: TAG_FOREIGN,
                seq: n + addr,
                key: encode_key(key_ty2, &values[col2])?,
                row: bytes,
            },
            None => Entry::pad(key_width, row_width),
        };
        mem.block_write(union, n + addr, &entry.encode(ublock), n + addr)?;
    }
    let pad = Entry::pad(key_width, row_width).encode(ublock);
    for addr in total..p {
        mem.block_write(union, addr, &pad, addr)?;
    }

    // Chunk pass: sort what fits in the enclave, alternating directions.
    let chunk = if zero_budget {
        1
    } else {
        let rows = mem.budget().free() / ublock as u64;
        if rows == 0 {
            let available = mem.budget().free();
            mem.region_free(union)?;
            return Err(EngineError::BudgetExceeded { needed: ublock as u64, available });
        }
        prev_pow2(rows.min(p))
    };
    if chunk > 1 {
        for q in 0..p / chunk {
            let base = q * chunk;
            let mut entries: Vec<Entry> = (0..chunk)
                .map(|r| {
                    let blk = mem.block_read(union, base + r)?;
                    Ok(Entry::decode(&blk.payload, key_width, row_width))
                })
                .collect::<Result<_>>()?;
            entries.sort_by(|a, b| a.rank().cmp(&b.rank()));
            if q % 2 == 1 {
                entries.reverse();
            }
            for (r, e) in entries.iter().enumerate() {
                let addr = base + r as u64;
                mem.block_write(union, addr, &e.encode(ublock), addr)?;
            }
        }
    }

    // Merge network: fixed schedule, two reads and two writes per exchange.
    for_each_ce(p, chunk, |i, l, ascending| {
        let a = Entry::decode(&mem.block_read(union, i)?.payload, key_width, row_width);
        let b = Entry::decode(&mem.block_read(union, l)?.payload, key_width, row_width);
        let (first, second) = if (a.rank() > b.rank()) == ascending { (b, a) } else { (a, b) };
        mem.block_write(union, i, &first.encode(ublock), i)?;
        mem.block_write(union, l, &second.encode(ublock), l)?;
        Ok(())
    })?;

    // Merge scan: primaries load the enclave register, foreigns emit a join
    // or a dummy. One write per position in the unpadded prefix, whatever
    // the entry turned out to be.
    let mut out = ResultTable::alloc(mem, out_schema.clone(), total, min_block)?;
    let mut held: Option<(Vec<u8>, Vec<Value>)> = None;
    let mut live = 0u64;
    for pos in 0..p {
        let entry = Entry::decode(&mem.block_read(union, pos)?.payload, key_width, row_width);
        let mut emit: Option<Vec<Value>> = None;
        match entry.tag {
            TAG_PRIMARY => {
                let values = decode_row(&t1.schema, &entry.row[..t1.schema.row_size() as usize])
                    .expect("primary entries carry live rows");
                if let Some((held_key, _)) = &held {
                    if *held_key == entry.key {
                        out.free(mem)?;
                        mem.region_free(union)?;
                        return Err(EngineError::FkViolation);
                    }
                }
                held = Some((entry.key, values));
            }
            TAG_FOREIGN => {
                let values = decode_row(&t2.schema, &entry.row[..t2.schema.row_size() as usize])
                    .expect("foreign entries carry live rows");
                if let Some((held_key, held_values)) = &held {
                    if *held_key == entry.key {
                        let mut v = held_values.clone();
                        v.extend(values);
                        emit = Some(v);
                    }
                }
            }
            _ => {}
        }
        if pos < total {
            let row_bytes = match &emit {
                Some(v) => encode_row(out_schema, v)?,
                None => dummy_row(out_schema),
            };
            if emit.is_some() {
                live += 1;
            }
            out.write_row(mem, pos, &row_bytes)?;
        }
    }
    mem.region_free(union)?;
    out.live = live;
    Ok(out)
}

fn prev_pow2(x: u64) -> u64 {
    debug_assert!(x >= 1);
    if x.is_power_of_two() { x } else { x.next_power_of_two() / 2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::bitonic::ce_count;
    use crate::ops::testutil::*;
    use crate::trace::{trace_diff, TraceDiff};

    fn reference_join(a: &[Vec<i64>], b: &[Vec<i64>]) -> Vec<Vec<i64>> {
        let mut out = Vec::new();
        for rb in b {
            if let Some(ra) = a.iter().find(|ra| ra[0] == rb[0]) {
                let mut row = ra.clone();
                row.extend(rb.iter().cloned());
                out.push(row);
            }
        }
        out.sort();
        out
    }

    fn materialized(out: &ResultTable, mem: &mut MemoryEngine) -> Vec<Vec<i64>> {
        let mut rows: Vec<Vec<i64>> = out
            .materialize(mem)
            .unwrap()
            .into_iter()
            .map(|r| {
                r.into_iter()
                    .map(|v| match v {
                        Value::Int(x) => x,
                        _ => unreachable!(),
                    })
                    .collect()
            })
            .collect();
        rows.sort();
        rows
    }

    fn joined_schema() -> Schema {
        int_schema(&["a.k", "a.x", "b.k", "b.y"])
    }

    fn setup(
        mem: &mut MemoryEngine,
        a_rows: &[Vec<i64>],
        b_rows: &[Vec<i64>],
        cap_a: u64,
        cap_b: u64,
    ) -> (Table, Table) {
        let a = flat_table(mem, "a", &["k", "x"], a_rows, cap_a);
        let b = flat_table(mem, "b", &["k", "y"], b_rows, cap_b);
        (a, b)
    }

    #[test]
    fn hash_join_matches_reference() {
        let a_rows: Vec<Vec<i64>> = (0..6).map(|i| vec![i, 10 + i]).collect();
        let b_rows: Vec<Vec<i64>> = (0..12).map(|i| vec![i % 8, 100 + i]).collect();
        let mut mem = engine(41);
        let (a, b) = setup(&mut mem, &a_rows, &b_rows, 6, 12);
        let out = hash_join(&mut mem, &a, 0, &b, 0, &joined_schema(), 0).unwrap();
        assert_eq!(materialized(&out, &mut mem), reference_join(&a_rows, &b_rows));
    }

    #[test]
    fn hash_join_event_count_and_chunking() {
        let a_rows: Vec<Vec<i64>> = (0..10).map(|i| vec![i, i]).collect();
        let b_rows: Vec<Vec<i64>> = (0..8).map(|i| vec![i, i]).collect();
        // Budget fits 3 primary rows per chunk → 4 chunks.
        let row_size = int_schema(&["k", "x"]).row_size() as u64;
        let mut mem = engine_sized(3 * row_size, 42);
        let (a, b) = setup(&mut mem, &a_rows, &b_rows, 10, 8);
        mem.trace_mut().take();
        let out = hash_join(&mut mem, &a, 0, &b, 0, &joined_schema(), 0).unwrap();
        let events = mem.trace_mut().take();
        assert_eq!(events.len() as u64, 10 + 2 * 4 * 8);
        assert_eq!(out.declared, 80);
        assert_eq!(out.written, 32, "4 chunks × 8 probes");
        assert_eq!(materialized(&out, &mut mem), reference_join(&a_rows, &b_rows));
    }

    #[test]
    fn hash_join_zero_budget_is_an_error() {
        let mut mem = engine_sized(0, 43);
        let (a, b) = setup(&mut mem, &[vec![1, 1]], &[vec![1, 2]], 2, 2);
        assert!(matches!(
            hash_join(&mut mem, &a, 0, &b, 0, &joined_schema(), 0),
            Err(EngineError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn hash_join_trace_is_data_independent() {
        let run = |shift: i64| {
            let a_rows: Vec<Vec<i64>> = (0..5).map(|i| vec![i + shift, i]).collect();
            let b_rows: Vec<Vec<i64>> = (0..7).map(|i| vec![i * 3, i]).collect();
            let row_size = int_schema(&["k", "x"]).row_size() as u64;
            let mut mem = engine_sized(2 * row_size, 44);
            let (a, b) = setup(&mut mem, &a_rows, &b_rows, 5, 7);
            mem.trace_mut().take();
            hash_join(&mut mem, &a, 0, &b, 0, &joined_schema(), 0).unwrap();
            mem.trace_mut().take()
        };
        assert_eq!(trace_diff(&run(0), &run(1000)), TraceDiff::Equal);
    }

    #[test]
    fn opaque_join_matches_reference_with_duplicates_and_strays() {
        // Foreign keys repeat; some foreigns match nothing; some primaries
        // match nothing.
        let a_rows: Vec<Vec<i64>> = vec![vec![2, 20], vec![5, 50], vec![9, 90]];
        let b_rows: Vec<Vec<i64>> =
            vec![vec![5, 1], vec![2, 2], vec![5, 3], vec![7, 4], vec![2, 5], vec![5, 6]];
        let mut mem = engine(45);
        let (a, b) = setup(&mut mem, &a_rows, &b_rows, 3, 6);
        let out = opaque_join(&mut mem, &a, 0, &b, 0, &joined_schema(), 0, false).unwrap();
        assert_eq!(materialized(&out, &mut mem), reference_join(&a_rows, &b_rows));
        assert_eq!(out.live, 5);
    }

    #[test]
    fn opaque_join_detects_duplicate_primary_keys() {
        let mut mem = engine(46);
        let (a, b) = setup(&mut mem, &[vec![3, 1], vec![3, 2]], &[vec![3, 9]], 2, 1);
        assert!(matches!(
            opaque_join(&mut mem, &a, 0, &b, 0, &joined_schema(), 0, false),
            Err(EngineError::FkViolation)
        ));
    }

    #[test]
    fn opaque_join_event_count() {
        let a_rows: Vec<Vec<i64>> = (0..3).map(|i| vec![i, i]).collect();
        let b_rows: Vec<Vec<i64>> = (0..5).map(|i| vec![i, i]).collect();
        let ublock = (1 + 8 + 8 + int_schema(&["k", "x"]).row_size()) as u64;
        // Budget fits 2 union entries → chunk size 2.
        let mut mem = engine_sized(2 * ublock + 1, 47);
        let (a, b) = setup(&mut mem, &a_rows, &b_rows, 3, 5);
        mem.trace_mut().take();
        let out = opaque_join(&mut mem, &a, 0, &b, 0, &joined_schema(), 0, false).unwrap();
        let events = mem.trace_mut().take().len() as u64;
        // total=8, p=8, chunk=2: fill 8+8, chunk pass 16, network 4·CEs,
        // merge 8 reads + 8 writes.
        assert_eq!(events, 8 + 8 + 16 + 4 * ce_count(8, 2) + 8 + 8);
        assert_eq!(materialized(&out, &mut mem), reference_join(&a_rows, &b_rows));
    }

    #[test]
    fn zero_budget_join_runs_the_full_network() {
        let a_rows: Vec<Vec<i64>> = (0..3).map(|i| vec![i, i]).collect();
        let b_rows: Vec<Vec<i64>> = (0..5).map(|i| vec![i * 2, i]).collect();
        let mut mem = engine_sized(0, 48);
        let (a, b) = setup(&mut mem, &a_rows, &b_rows, 3, 5);
        mem.trace_mut().take();
        let out = opaque_join(&mut mem, &a, 0, &b, 0, &joined_schema(), 0, true).unwrap();
        let events = mem.trace_mut().take().len() as u64;
        // No chunk pass; the network does all the sorting.
        assert_eq!(events, 8 + 8 + 4 * ce_count(8, 1) + 8 + 8);
        assert_eq!(ce_count(8, 1), 24);
        assert_eq!(materialized(&out, &mut mem), reference_join(&a_rows, &b_rows));
    }

    #[test]
    fn opaque_join_trace_is_data_independent() {
        let run = |spread: i64| {
            let a_rows: Vec<Vec<i64>> = (0..4).map(|i| vec![i * spread, i]).collect();
            let b_rows: Vec<Vec<i64>> = (0..6).map(|i| vec![i, i]).collect();
            let mut mem = engine(49);
            let (a, b) = setup(&mut mem, &a_rows, &b_rows, 4, 6);
            mem.trace_mut().take();
            opaque_join(&mut mem, &a, 0, &b, 0, &joined_schema(), 0, false).unwrap();
            mem.trace_mut().take()
        };
        assert_eq!(trace_diff(&run(1), &run(7)), TraceDiff::Equal);
    }

    #[test]
    fn joins_skip_dummy_holes() {
        // Tables with spare capacity: holes must not fabricate matches.
        let a_rows = vec![vec![1i64, 10]];
        let b_rows = vec![vec![1i64, 20], vec![2, 30]];
        let mut mem = engine(50);
        let (a, b) = setup(&mut mem, &a_rows, &b_rows, 4, 4);
        let out = hash_join(&mut mem, &a, 0, &b, 0, &joined_schema(), 0).unwrap();
        assert_eq!(materialized(&out, &mut mem), vec![vec![1, 10, 1, 20]]);
        let out = opaque_join(&mut mem, &a, 0, &b, 0, &joined_schema(), 0, false).unwrap();
        assert_eq!(materialized(&out, &mut mem), vec![vec![1, 10, 1, 20]]);
    }
}
