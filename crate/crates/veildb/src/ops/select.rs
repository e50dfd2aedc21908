//! Selection operators.
//!
//! All five take a declared result size fixed before the scan begins and
//! produce traces shaped only by (scan length, declared size, budget). They
//! trade off differently: `small` re-scans once per buffer-full of results,
//! `large` copies the whole input, `continuous` exploits a promise that the
//! matches sit consecutively, `hash` scatters matches across the result by
//! a position-derived probe sequence, and `naive` routes every match
//! through an ORAM. The index-range variant instead walks a key range on
//! the B+ tree, deliberately revealing the range length.

use std::ops::Bound;

use crate::btree::{BTreeIndex, Cursor};
use crate::error::{EngineError, Result};
use crate::memory::MemoryEngine;
use crate::oram::PathOram;
use crate::ops::{splitmix64, RowSource};
use crate::rows::{decode_row, dummy_row, row_is_live, Predicate, Schema};
use crate::table::ResultTable;

/// Probed result slots per input row in the hash variant: two chains of
/// five consecutive addresses.
pub const HASH_PROBES: usize = 10;
const HASH_CHAIN: u64 = 5;

fn matches(schema: &Schema, pred: &Predicate, bytes: &[u8]) -> bool {
    decode_row(schema, bytes).is_some_and(|values| pred.eval(&values))
}

/// Count matches without a result region; used by the degenerate
/// declared-size-zero paths so they still scan with a fixed shape.
fn scan_count(
    mem: &mut MemoryEngine,
    src: &mut RowSource,
    schema: &Schema,
    pred: &Predicate,
) -> Result<u64> {
    let mut count = 0;
    src.begin_pass();
    while let Some(bytes) = src.next(mem)? {
        if matches(schema, pred, &bytes) {
            count += 1;
        }
    }
    Ok(count)
}

fn empty_result(
    mem: &mut MemoryEngine,
    src: &mut RowSource,
    schema: &Schema,
    pred: &Predicate,
    min_block: u32,
) -> Result<ResultTable> {
    let found = scan_count(mem, src, schema, pred)?;
    if found > 0 {
        return Err(EngineError::ResultExceedsPad { live: found, target: 0 });
    }
    ResultTable::alloc(mem, schema.clone(), 0, min_block)
}

/// Every match detours through a dedicated ORAM: one ORAM access per input
/// row (real write or dummy), then one ORAM read per declared result slot
/// on the way out. Obliviousness comes cheap; the per-access path traffic
/// does not.
pub fn select_naive(
    mem: &mut MemoryEngine,
    src: &mut RowSource,
    schema: &Schema,
    pred: &Predicate,
    declared: u64,
    recursive: bool,
    min_block: u32,
) -> Result<ResultTable> {
    if declared == 0 {
        return empty_result(mem, src, schema, pred, min_block);
    }
    // Ids 1..=declared carry results; id 0 stays the dummy-access target.
    let mut oram = PathOram::init(mem, declared + 1, schema.row_size(), recursive)?;
    let mut found = 0u64;
    src.begin_pass();
    while let Some(bytes) = src.next(mem)? {
        if matches(schema, pred, &bytes) && found < declared {
            found += 1;
            // Ids start at 1; 0 is the dummy-access target.
            oram.write(mem, found, &bytes)?;
        } else if matches(schema, pred, &bytes) {
            found += 1;
            oram.dummy_access(mem)?;
        } else {
            oram.dummy_access(mem)?;
        }
    }
    if found > declared {
        oram.free(mem)?;
        return Err(EngineError::ResultExceedsPad { live: found, target: declared });
    }
    let mut out = ResultTable::alloc(mem, schema.clone(), declared, min_block)?;
    for i in 0..declared {
        let row = oram
            .read(mem, i + 1)?
            .unwrap_or_else(|| dummy_row(schema));
        out.write_row(mem, i, &row)?;
    }
    out.live = found;
    oram.free(mem)?;
    Ok(out)
}

/// Buffer a window of matches in the enclave per pass and flush the window
/// after the pass ends. Pass count = ceil(declared / bufferRows); flush
/// writes pad short windows with dummies so the trace stays size-shaped.
pub fn select_small(
    mem: &mut MemoryEngine,
    src: &mut RowSource,
    schema: &Schema,
    pred: &Predicate,
    declared: u64,
    min_block: u32,
) -> Result<ResultTable> {
    let row_size = schema.row_size() as u64;
    let buffer_rows = mem.budget().free() / row_size;
    if buffer_rows == 0 {
        return Err(EngineError::BudgetExceeded {
            needed: row_size,
            available: mem.budget().free(),
        });
    }
    let passes = declared.div_ceil(buffer_rows).max(1);
    let mut out = ResultTable::alloc(mem, schema.clone(), declared, min_block)?;
    let mut total_matches = 0;
    for pass in 0..passes {
        let window_lo = pass * buffer_rows;
        let window_hi = ((pass + 1) * buffer_rows).min(declared);
        let mut buffered: Vec<Vec<u8>> = Vec::with_capacity((window_hi - window_lo) as usize);
        let mut match_idx = 0u64;
        src.begin_pass();
        while let Some(bytes) = src.next(mem)? {
            if matches(schema, pred, &bytes) {
                if match_idx >= window_lo && match_idx < window_hi {
                    buffered.push(bytes);
                }
                match_idx += 1;
            }
        }
        total_matches = match_idx;
        for (k, addr) in (window_lo..window_hi).enumerate() {
            let row = buffered.get(k).cloned().unwrap_or_else(|| dummy_row(schema));
            out.write_row(mem, addr, &row)?;
        }
    }
    if total_matches > declared {
        out.free(mem)?;
        return Err(EngineError::ResultExceedsPad {
            live: total_matches,
            target: declared,
        });
    }
    out.live = total_matches;
    Ok(out)
}

/// Copy the input wholesale, then blank the misses in place. The result is
/// input-sized, so nothing about the match count shows; the price is a
/// result as big as the table.
pub fn select_large(
    mem: &mut MemoryEngine,
    src: &mut RowSource,
    schema: &Schema,
    pred: &Predicate,
    min_block: u32,
) -> Result<ResultTable> {
    let n = src.scan_length();
    let mut out = ResultTable::alloc(mem, schema.clone(), n, min_block)?;
    src.begin_pass();
    let mut pos = 0u64;
    while let Some(bytes) = src.next(mem)? {
        out.write_row(mem, pos, &bytes)?;
        pos += 1;
    }
    let mut live = 0;
    for addr in 0..n {
        let bytes = out.read_row(mem, addr)?;
        if matches(schema, pred, &bytes) {
            live += 1;
            out.write_row(mem, addr, &bytes)?;
        } else {
            out.write_row(mem, addr, &dummy_row(schema))?;
        }
    }
    out.live = live;
    Ok(out)
}

/// Requires the matches to occupy consecutive scan positions. Each input
/// row triggers a read-modify-write of one result slot (scan position mod
/// declared size), so the k-th match lands k slots past the first and
/// misses re-encrypt whatever the slot held.
pub fn select_continuous(
    mem: &mut MemoryEngine,
    src: &mut RowSource,
    schema: &Schema,
    pred: &Predicate,
    declared: u64,
    min_block: u32,
) -> Result<ResultTable> {
    if declared == 0 {
        return empty_result(mem, src, schema, pred, min_block);
    }
    let mut out = ResultTable::alloc(mem, schema.clone(), declared, min_block)?;
    out.init_dummies(mem)?;
    let mut first = 0u64;
    let mut count = 0u64;
    let mut pos = 0u64;
    src.begin_pass();
    while let Some(bytes) = src.next(mem)? {
        let hit = matches(schema, pred, &bytes);
        let target = pos % declared;
        let current = out.read_row(mem, target)?;
        if hit {
            if count == 0 {
                first = pos;
            } else if pos != first + count {
                out.free(mem)?;
                return Err(EngineError::ContinuityViolated { at: pos });
            }
            if count == declared {
                out.free(mem)?;
                return Err(EngineError::ResultExceedsPad {
                    live: count + 1,
                    target: declared,
                });
            }
            count += 1;
            out.write_row(mem, target, &bytes)?;
        } else {
            out.write_row(mem, target, &current)?;
        }
        pos += 1;
    }
    out.live = count;
    Ok(out)
}

/// The ten result addresses row index `i` probes: two chains of five
/// consecutive slots, derived from per-run salts and the scan position —
/// never from row content.
pub fn hash_probe_addrs(salt1: u64, salt2: u64, i: u64, declared: u64) -> [u64; HASH_PROBES] {
    let mut out = [0u64; HASH_PROBES];
    for (c, salt) in [salt1, salt2].into_iter().enumerate() {
        let start = splitmix64(salt ^ i) % declared;
        for j in 0..HASH_CHAIN {
            out[c * HASH_CHAIN as usize + j as usize] = (start + j) % declared;
        }
    }
    out
}

/// Scatter matches by probing ten result slots per input row. Every probe
/// is a read of the slot followed by a write: the row claims the first free
/// slot it sees, all other probes re-encrypt what they found. The slot
/// occupancy a probe observes never reaches the trace.
pub fn select_hash(
    mem: &mut MemoryEngine,
    src: &mut RowSource,
    schema: &Schema,
    pred: &Predicate,
    declared: u64,
    min_block: u32,
) -> Result<ResultTable> {
    if declared == 0 {
        return empty_result(mem, src, schema, pred, min_block);
    }
    let salt1 = mem.draw_seed();
    let salt2 = mem.draw_seed();
    let mut out = ResultTable::alloc(mem, schema.clone(), declared, min_block)?;
    out.init_dummies(mem)?;
    let mut live = 0u64;
    let mut pos = 0u64;
    src.begin_pass();
    while let Some(bytes) = src.next(mem)? {
        let hit = matches(schema, pred, &bytes);
        let mut placed = false;
        for addr in hash_probe_addrs(salt1, salt2, pos, declared) {
            let current = out.read_row(mem, addr)?;
            if hit && !placed && !row_is_live(&current) {
                out.write_row(mem, addr, &bytes)?;
                placed = true;
            } else {
                out.write_row(mem, addr, &current)?;
            }
        }
        if hit && !placed {
            out.free(mem)?;
            return Err(EngineError::HashOverflow { row: pos });
        }
        if placed {
            live += 1;
        }
        pos += 1;
    }
    out.live = live;
    Ok(out)
}

fn before_upper(key: &[u8], hi: &Bound<Vec<u8>>) -> bool {
    match hi {
        Bound::Included(h) => key <= h.as_slice(),
        Bound::Excluded(h) => key < h.as_slice(),
        Bound::Unbounded => true,
    }
}

/// Walk the key range [lo, hi] on the index and emit every visited row.
/// Positioning costs a root-to-leaf descent; after that each emitted row is
/// one cursor step plus one result write. The number of steps — the range
/// length — is the operator's declared leakage.
pub fn select_index_range(
    mem: &mut MemoryEngine,
    index: &mut BTreeIndex,
    schema: &Schema,
    lo: &Bound<Vec<u8>>,
    hi: &Bound<Vec<u8>>,
    declared: u64,
    min_block: u32,
) -> Result<ResultTable> {
    let mut out = ResultTable::alloc(mem, schema.clone(), declared, min_block)?;
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
    let mut count = 0u64;
    while cur.live() {
        let img = cur.image.as_ref().unwrap();
        if !before_upper(&img.key, hi) {
            break;
        }
        if count == declared {
            out.free(mem)?;
            return Err(EngineError::ResultExceedsPad {
                live: count + 1,
                target: declared,
            });
        }
        out.write_row(mem, count, &img.row)?;
        count += 1;
        if index.cursor_has_next(&cur) {
            index.cursor_step(mem, &mut cur)?;
        } else {
            break;
        }
    }
    out.live = count;
    Ok(out)
}
