//! Operator selection.
//!
//! Selects are planned from a fixed-shape statistics pass (the same scan
//! any select performs), so planning leaks nothing a select would not.
//! Join planning is a pure cost comparison over public sizes and the
//! budget; it touches no storage at all. Thresholds live in
//! `PlannerConfig` and default to the engine's tuned constants.

use std::ops::Bound;

use crate::btree::BTreeIndex;
use crate::error::Result;
use crate::memory::MemoryEngine;
use crate::ops::bitonic::ce_count;
use crate::ops::RowSource;
use crate::rows::{decode_row, encode_key, Cmp, ColType, Predicate, Schema, Value};
use crate::table::Table;

#[derive(Debug, Clone)]
pub struct PlannerConfig {
    /// Match fraction at or above which the input-sized copy wins.
    pub large_threshold: f64,
    /// Small select may re-scan at most this many times.
    pub small_pass_limit: u64,
    /// Whether the planner may rely on contiguity promises.
    pub continuous_enabled: bool,
    /// Primary rows per budget row at or above which the chunked join
    /// needs no cost comparison.
    pub hash_join_ratio: f64,
    /// Below this many chunked-join events, sorting is never worth it.
    pub sort_floor_events: u64,
    /// Relative cost of a compare-exchange block event versus a linear
    /// scan block event.
    pub sort_cost_weight: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            large_threshold: 0.8,
            small_pass_limit: 4,
            continuous_enabled: false,
            hash_join_ratio: 1.0,
            sort_floor_events: 150_000,
            sort_cost_weight: 0.04,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectAlgo {
    Naive,
    Small,
    Large,
    Continuous,
    Hash,
    IndexRange { lo: Bound<Vec<u8>>, hi: Bound<Vec<u8>> },
}

impl SelectAlgo {
    pub fn name(&self) -> &'static str {
        match self {
            SelectAlgo::Naive => "naive",
            SelectAlgo::Small => "small",
            SelectAlgo::Large => "large",
            SelectAlgo::Continuous => "continuous",
            SelectAlgo::Hash => "hash",
            SelectAlgo::IndexRange { .. } => "index-range",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinAlgo {
    Hash,
    Opaque,
    ZeroOm,
}

impl JoinAlgo {
    pub fn name(&self) -> &'static str {
        match self {
            JoinAlgo::Hash => "hash",
            JoinAlgo::Opaque => "opaque",
            JoinAlgo::ZeroOm => "zero-om",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectPlan {
    pub algo: SelectAlgo,
    /// True matches found by the statistics pass.
    pub matches: u64,
    pub contiguous: bool,
    pub scan_len: u64,
}

/// One fixed-shape pass counting matches and checking that the matching
/// scan positions are consecutive.
pub fn gather_select_stats(
    mem: &mut MemoryEngine,
    src: &mut RowSource,
    schema: &Schema,
    pred: &Predicate,
) -> Result<(u64, bool)> {
    let mut matches = 0u64;
    let mut first = 0u64;
    let mut contiguous = true;
    let mut pos = 0u64;
    src.begin_pass();
    while let Some(bytes) = src.next(mem)? {
        let hit = decode_row(schema, &bytes).is_some_and(|v| pred.eval(&v));
        if hit {
            if matches == 0 {
                first = pos;
            } else if pos != first + matches {
                contiguous = false;
            }
            matches += 1;
        }
        pos += 1;
    }
    Ok((matches, contiguous))
}

/// The select dispatch rule over public quantities. `effective_result` is
/// the declared output size — the padded target when padding is on, the
/// measured match count otherwise. Under padding the contiguity branch is
/// skipped (the choice must not depend on where matches sit) and so is the
/// input-sized copy (its result region is input-sized, not target-sized,
/// and padded results must be exactly the target).
pub fn pick_select_algo(
    effective_result: u64,
    contiguous: bool,
    scan_len: u64,
    buffer_rows: u64,
    flat: bool,
    padded: bool,
    cfg: &PlannerConfig,
) -> SelectAlgo {
    if !padded && contiguous && cfg.continuous_enabled && effective_result > 0 {
        return SelectAlgo::Continuous;
    }
    let ratio = if scan_len == 0 { 0.0 } else { effective_result as f64 / scan_len as f64 };
    if !padded && ratio >= cfg.large_threshold && flat {
        return SelectAlgo::Large;
    }
    if effective_result <= cfg.small_pass_limit * buffer_rows {
        return SelectAlgo::Small;
    }
    SelectAlgo::Hash
}

/// Modeled event count of one select execution: operator accesses plus
/// result writes plus the client materialize pass. Used to arbitrate the
/// index path against the flat path on tables that store both.
pub fn select_cost_model(
    algo: &SelectAlgo,
    matches: u64,
    scan_len: u64,
    buffer_rows: u64,
) -> u64 {
    let r = matches;
    let n = scan_len;
    match algo {
        SelectAlgo::Small => {
            let passes = r.div_ceil(buffer_rows.max(1)).max(1);
            passes * n + 2 * r
        }
        SelectAlgo::Large => 5 * n,
        SelectAlgo::Continuous => 3 * n + 2 * r,
        SelectAlgo::Hash => 21 * n + 2 * r,
        // Never picked by the rule; modeled as worse than everything.
        SelectAlgo::Naive | SelectAlgo::IndexRange { .. } => u64::MAX,
    }
}

/// Modeled event count of a key-range walk: descent, range walk, result
/// writes, and materialize.
pub fn index_range_cost_model(index: &BTreeIndex, matches: u64) -> u64 {
    (index.height() as u64 + 2 + matches) * index.events_per_access() + 2 * matches
}

/// Count the rows a range walk would emit; the same index accesses the
/// range select itself performs.
pub fn count_index_range(
    mem: &mut MemoryEngine,
    index: &mut BTreeIndex,
    lo: &Bound<Vec<u8>>,
    hi: &Bound<Vec<u8>>,
) -> Result<u64> {
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
                cur = crate::btree::Cursor::empty();
            }
        }
    }
    let mut count = 0u64;
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
        count += 1;
        if index.cursor_has_next(&cur) {
            index.cursor_step(mem, &mut cur)?;
        } else {
            break;
        }
    }
    Ok(count)
}

/// Plan a select over `table`. Key-range predicates on an indexed key
/// column dispatch to the range walk: unconditionally on index-only
/// tables (the only alternative is the leaf-chain scan), by modeled cost
/// against the flat choice on tables that store both. Everything else
/// runs the statistics scan and the threshold rule. A padded target
/// disables the index path — its result size tracks the matches, not the
/// target.
pub fn plan_select(
    mem: &mut MemoryEngine,
    table: &mut Table,
    pred: &Predicate,
    padded_target: Option<u64>,
    cfg: &PlannerConfig,
) -> Result<SelectPlan> {
    let key_range = match (table.key_col(), table.method().has_index()) {
        (Some(col), true) if padded_target.is_none() => {
            key_range_of(pred, col, table.schema.columns()[col].ty)
        }
        _ => None,
    };
    if let (Some((lo, hi)), false) = (&key_range, table.method().has_flat()) {
        let scan_len = table.index().unwrap().live_rows();
        let matches = count_index_range(mem, table.index_mut().unwrap(), lo, hi)?;
        return Ok(SelectPlan {
            algo: SelectAlgo::IndexRange { lo: lo.clone(), hi: hi.clone() },
            matches,
            contiguous: true,
            scan_len,
        });
    }
    let flat = table.method().has_flat();
    let schema = table.schema.clone();
    let mut src = RowSource::for_table(table);
    let scan_len = src.scan_length();
    let (matches, contiguous) = gather_select_stats(mem, &mut src, &schema, pred)?;
    let buffer_rows = mem.budget().free() / schema.row_size() as u64;
    let effective = padded_target.unwrap_or(matches);
    let algo = pick_select_algo(
        effective,
        contiguous,
        scan_len,
        buffer_rows,
        flat,
        padded_target.is_some(),
        cfg,
    );
    if let Some((lo, hi)) = key_range {
        let index = table.index().unwrap();
        if index_range_cost_model(index, matches)
            < select_cost_model(&algo, matches, scan_len, buffer_rows)
        {
            return Ok(SelectPlan {
                algo: SelectAlgo::IndexRange { lo, hi },
                matches,
                contiguous: true,
                scan_len,
            });
        }
    }
    Ok(SelectPlan { algo, matches, contiguous, scan_len })
}

fn tighter_lo(a: Bound<Vec<u8>>, b: Bound<Vec<u8>>) -> Bound<Vec<u8>> {
    match (&a, &b) {
        (Bound::Unbounded, _) => b,
        (_, Bound::Unbounded) => a,
        (Bound::Included(x) | Bound::Excluded(x), Bound::Included(y) | Bound::Excluded(y)) => {
            if x > y {
                a
            } else if y > x {
                b
            } else if matches!(a, Bound::Excluded(_)) {
                a
            } else {
                b
            }
        }
    }
}

fn tighter_hi(a: Bound<Vec<u8>>, b: Bound<Vec<u8>>) -> Bound<Vec<u8>> {
    match (&a, &b) {
        (Bound::Unbounded, _) => b,
        (_, Bound::Unbounded) => a,
        (Bound::Included(x) | Bound::Excluded(x), Bound::Included(y) | Bound::Excluded(y)) => {
            if x < y {
                a
            } else if y < x {
                b
            } else if matches!(a, Bound::Excluded(_)) {
                a
            } else {
                b
            }
        }
    }
}

/// Recognize predicates that are exactly a key range on `key_col`:
/// comparisons against constants and conjunctions of them. Anything else —
/// other columns, disjunction, negation, inequality — is not a range the
/// index can serve alone.
pub fn key_range_of(
    pred: &Predicate,
    key_col: usize,
    key_ty: ColType,
) -> Option<(Bound<Vec<u8>>, Bound<Vec<u8>>)> {
    match pred {
        Predicate::Atom { col, cmp, value } if *col == key_col => {
            if matches!(value, Value::Null) {
                return None;
            }
            let k = encode_key(key_ty, value).ok()?;
            Some(match cmp {
                Cmp::Eq => (Bound::Included(k.clone()), Bound::Included(k)),
                Cmp::Lt => (Bound::Unbounded, Bound::Excluded(k)),
                Cmp::Le => (Bound::Unbounded, Bound::Included(k)),
                Cmp::Gt => (Bound::Excluded(k), Bound::Unbounded),
                Cmp::Ge => (Bound::Included(k), Bound::Unbounded),
                Cmp::Ne => return None,
            })
        }
        Predicate::And(a, b) => {
            let (lo_a, hi_a) = key_range_of(a, key_col, key_ty)?;
            let (lo_b, hi_b) = key_range_of(b, key_col, key_ty)?;
            Some((tighter_lo(lo_a, lo_b), tighter_hi(hi_a, hi_b)))
        }
        _ => None,
    }
}

/// Block events of the chunked join: every primary row read once for
/// chunk loading, and one foreign-table read plus one output write per
/// probe across all chunk passes.
pub fn hash_join_events(t1: u64, t2: u64, chunk_rows: u64) -> u64 {
    let chunks = t1.div_ceil(chunk_rows.max(1));
    t1 + 2 * chunks * t2
}

/// Modeled cost of the sort join: compare-exchange traffic discounted by
/// `weight` (exchanges run on hot, padded blocks) plus the linear passes
/// (fill, chunk sort, merge scan) at full price.
pub fn opaque_join_cost(t1: u64, t2: u64, budget_rows: u64, weight: f64) -> f64 {
    let total = t1 + t2;
    let p = total.next_power_of_two();
    let c = prev_pow2(budget_rows.max(1)).min(p);
    let ce_events = 4 * ce_count(p, c);
    let linear = 2 * total + 4 * p;
    weight * ce_events as f64 + linear as f64
}

fn prev_pow2(x: u64) -> u64 {
    debug_assert!(x >= 1);
    if x.is_power_of_two() { x } else { x.next_power_of_two() / 2 }
}

/// Pure join dispatch: no storage access, only sizes and budget. The
/// chunked join wins outright when the whole primary table fits in the
/// budget or the job is too small for sorting to pay off; otherwise the
/// two cost models compete.
pub fn plan_join(t1: u64, t2: u64, budget_rows: u64, cfg: &PlannerConfig) -> JoinAlgo {
    if budget_rows == 0 {
        return JoinAlgo::ZeroOm;
    }
    if t1 == 0 || budget_rows as f64 / t1 as f64 >= cfg.hash_join_ratio {
        return JoinAlgo::Hash;
    }
    let hash_events = hash_join_events(t1, t2, budget_rows);
    if hash_events < cfg.sort_floor_events {
        return JoinAlgo::Hash;
    }
    let opaque = opaque_join_cost(t1, t2, budget_rows, cfg.sort_cost_weight);
    if hash_events as f64 <= opaque {
        JoinAlgo::Hash
    } else {
        JoinAlgo::Opaque
    }
}
