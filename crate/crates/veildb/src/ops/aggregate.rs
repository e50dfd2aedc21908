//! Aggregation operators.
//!
//! Both run exactly one pass over the input and keep all intermediate
//! state inside the enclave, so the trace is the scan and nothing else.
//! Plain aggregation needs constant state; grouped aggregation claims
//! budget per distinct group and fails loudly when groups outgrow it.

use std::hash::{Hash, Hasher};

use crate::error::{EngineError, Result};
use crate::memory::MemoryEngine;
use crate::ops::RowSource;
use crate::rows::{decode_row, encode_key, AggSpec, AggState, AggValue, Predicate, Schema, Value};

/// Fold every matching row into one state per aggregate. No result region:
/// the answer is scalar and leaves through the enclave.
pub fn aggregate(
    mem: &mut MemoryEngine,
    src: &mut RowSource,
    schema: &Schema,
    pred: &Predicate,
    specs: &[AggSpec],
) -> Result<Vec<AggValue>> {
    let mut states = vec![AggState::new(); specs.len()];
    src.begin_pass();
    while let Some(bytes) = src.next(mem)? {
        if let Some(values) = decode_row(schema, &bytes) {
            if pred.eval(&values) {
                for (state, spec) in states.iter_mut().zip(specs) {
                    state.fold(spec, &values);
                }
            }
        }
    }
    Ok(states.iter().zip(specs).map(|(st, sp)| st.finish(sp)).collect())
}

/// Probes a group's slot chain may visit before giving up; past this the
/// enclave table is too clustered for the remaining budget.
const GROUP_PROBES: u64 = 16;

struct GroupSlot {
    key_bytes: Vec<u8>,
    key: Value,
    states: Vec<AggState>,
}

/// One scan; an open-addressed table in enclave memory collects per-group
/// states. Each distinct group charges the budget for its slot, released
/// when the operator returns. Output is one entry per group in key order.
pub fn group_aggregate(
    mem: &mut MemoryEngine,
    src: &mut RowSource,
    schema: &Schema,
    pred: &Predicate,
    group_col: usize,
    specs: &[AggSpec],
) -> Result<Vec<(Value, Vec<AggValue>)>> {
    let key_ty = schema.columns()[group_col].ty;
    let entry_bytes = (key_ty.width() + 8 + 24 * specs.len()) as u64;
    let max_groups = mem.budget().free() / entry_bytes;
    if max_groups == 0 {
        return Err(EngineError::BudgetExceeded {
            needed: entry_bytes,
            available: mem.budget().free(),
        });
    }
    // Twice the affordable groups keeps the load factor at or below half
    // when the budget is exhausted; the array itself is addressing space,
    // only claimed slots cost budget. The cap bounds host allocation when
    // the budget would allow more groups than any workload here produces.
    let table_len = (2 * max_groups).clamp(16, 1 << 17) as usize;
    let mut slots: Vec<Option<GroupSlot>> = Vec::new();
    slots.resize_with(table_len, || None);
    let mut charged = 0u64;

    let outcome = fill_groups(
        mem, src, schema, pred, group_col, specs, key_ty, entry_bytes, &mut slots, &mut charged,
    );
    mem.budget_mut().release(charged);
    outcome?;

    let mut groups: Vec<GroupSlot> = slots.into_iter().flatten().collect();
    groups.sort_by(|a, b| a.key_bytes.cmp(&b.key_bytes));
    Ok(groups
        .into_iter()
        .map(|g| {
            let out = g.states.iter().zip(specs).map(|(st, sp)| st.finish(sp)).collect();
            (g.key, out)
        })
        .collect())
}

#[allow(clippy::too_many_arguments)]
fn fill_groups(
    mem: &mut MemoryEngine,
    src: &mut RowSource,
    schema: &Schema,
    pred: &Predicate,
    group_col: usize,
    specs: &[AggSpec],
    key_ty: crate::rows::ColType,
    entry_bytes: u64,
    slots: &mut [Option<GroupSlot>],
    charged: &mut u64,
) -> Result<()> {
    let table_len = slots.len() as u64;
    let mut pos = 0u64;
    src.begin_pass();
    while let Some(bytes) = src.next(mem)? {
        let row = pos;
        pos += 1;
        let Some(values) = decode_row(schema, &bytes) else { continue };
        if !pred.eval(&values) {
            continue;
        }
        let key_bytes = encode_key(key_ty, &values[group_col])?;
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        key_bytes.hash(&mut hasher);
        let h = hasher.finish();
        let mut placed = false;
        for probe in 0..GROUP_PROBES {
            let idx = ((h.wrapping_add(probe)) % table_len) as usize;
            match &mut slots[idx] {
                Some(slot) if slot.key_bytes == key_bytes => {
                    for (state, spec) in slot.states.iter_mut().zip(specs) {
                        state.fold(spec, &values);
                    }
                    placed = true;
                }
                Some(_) => continue,
                empty @ None => {
                    mem.budget_mut().charge(entry_bytes)?;
                    *charged += entry_bytes;
                    let mut states = vec![AggState::new(); specs.len()];
                    for (state, spec) in states.iter_mut().zip(specs) {
                        state.fold(spec, &values);
                    }
                    *empty = Some(GroupSlot {
                        key_bytes,
                        key: values[group_col].clone(),
                        states,
                    });
                    placed = true;
                }
            }
            break;
        }
        if !placed {
            return Err(EngineError::HashOverflow { row });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::testutil::*;
    use crate::rows::{AggFunc, Cmp};
    use crate::trace::{trace_diff, TraceDiff};

    fn specs() -> Vec<AggSpec> {
        vec![
            AggSpec { func: AggFunc::Count, col: None },
            AggSpec { func: AggFunc::Sum, col: Some(1) },
            AggSpec { func: AggFunc::Min, col: Some(1) },
            AggSpec { func: AggFunc::Max, col: Some(1) },
            AggSpec { func: AggFunc::Avg, col: Some(1) },
        ]
    }

    #[test]
    fn scalar_aggregates_match_reference() {
        let rows: Vec<Vec<i64>> = (0..10).map(|i| vec![i % 3, 10 * i + 1]).collect();
        let mut mem = engine(31);
        let mut t = flat_table(&mut mem, "t", &["g", "v"], &rows, 16);
        let mut src = RowSource::for_table(&mut t);
        let schema = int_schema(&["g", "v"]);
        let pred = Predicate::Atom { col: 0, cmp: Cmp::Eq, value: Value::Int(1) };
        mem.trace_mut().take();
        let got = aggregate(&mut mem, &mut src, &schema, &pred, &specs()).unwrap();
        // Only the scan shows up in the trace.
        assert_eq!(mem.trace_mut().take().len(), 16);
        // Rows with g == 1: i = 1, 4, 7 → v = 11, 41, 71.
        assert_eq!(got[0], AggValue::Int(3));
        assert_eq!(got[1], AggValue::Int(123));
        assert_eq!(got[2], AggValue::Value(Value::Int(11)));
        assert_eq!(got[3], AggValue::Value(Value::Int(71)));
        assert_eq!(got[4], AggValue::Rational { sum: 123, count: 3 });
        assert_eq!(got[4].to_value(), Value::Int(41));
    }

    #[test]
    fn empty_input_defaults() {
        let mut mem = engine(32);
        let mut t = flat_table(&mut mem, "t", &["g", "v"], &[], 4);
        let mut src = RowSource::for_table(&mut t);
        let schema = int_schema(&["g", "v"]);
        let got = aggregate(&mut mem, &mut src, &schema, &Predicate::True, &specs()).unwrap();
        assert_eq!(got[0], AggValue::Int(0));
        assert_eq!(got[1], AggValue::Int(0), "sum of nothing is zero");
        assert_eq!(got[2], AggValue::Null);
        assert_eq!(got[3], AggValue::Null);
        assert_eq!(got[4], AggValue::Null);
    }

    #[test]
    fn grouped_matches_reference_and_sorts_by_key() {
        let rows: Vec<Vec<i64>> = (0..30).map(|i| vec![i % 7, i]).collect();
        let mut mem = engine(33);
        let mut t = flat_table(&mut mem, "t", &["g", "v"], &rows, 32);
        let mut src = RowSource::for_table(&mut t);
        let schema = int_schema(&["g", "v"]);
        mem.trace_mut().take();
        let got = group_aggregate(
            &mut mem,
            &mut src,
            &schema,
            &Predicate::True,
            0,
            &[AggSpec { func: AggFunc::Sum, col: Some(1) }],
        )
        .unwrap();
        assert_eq!(mem.trace_mut().take().len(), 32, "scan only");
        let keys: Vec<i64> = got
            .iter()
            .map(|(k, _)| match k {
                Value::Int(v) => *v,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(keys, (0..7).collect::<Vec<i64>>());
        for (k, aggs) in &got {
            let Value::Int(k) = k else { unreachable!() };
            let want: i64 = (0..30).filter(|i| i % 7 == *k).sum();
            assert_eq!(aggs[0], AggValue::Int(want));
        }
        // Budget fully released afterwards.
        assert_eq!(mem.budget().used(), 0);
    }

    #[test]
    fn groups_beyond_budget_fail() {
        let schema = int_schema(&["g", "v"]);
        // Room for exactly two group entries: 8 + 8 + 24 = 40 bytes each.
        let mut mem = engine_sized(80, 34);
        let rows: Vec<Vec<i64>> = (0..6).map(|i| vec![i, i]).collect();
        let mut t = flat_table(&mut mem, "t", &["g", "v"], &rows, 8);
        let mut src = RowSource::for_table(&mut t);
        let r = group_aggregate(
            &mut mem,
            &mut src,
            &schema,
            &Predicate::True,
            0,
            &[AggSpec { func: AggFunc::Sum, col: Some(1) }],
        );
        assert!(matches!(r, Err(EngineError::BudgetExceeded { .. })));
        assert_eq!(mem.budget().used(), 0, "charges rolled back");
    }

    #[test]
    fn grouped_trace_is_data_independent() {
        let run = |rows: &[Vec<i64>]| {
            let mut mem = engine(35);
            let mut t = flat_table(&mut mem, "t", &["g", "v"], rows, 16);
            let mut src = RowSource::for_table(&mut t);
            let schema = int_schema(&["g", "v"]);
            mem.trace_mut().take();
            group_aggregate(
                &mut mem,
                &mut src,
                &schema,
                &Predicate::True,
                0,
                &[AggSpec { func: AggFunc::Count, col: None }],
            )
            .unwrap();
            mem.trace_mut().take()
        };
        let a = run(&(0..10).map(|i| vec![i, i]).collect::<Vec<_>>());
        let b = run(&(0..10).map(|_| vec![7, 0]).collect::<Vec<_>>());
        assert_eq!(trace_diff(&a, &b), TraceDiff::Equal, "1 group vs 10 groups");
    }
}
