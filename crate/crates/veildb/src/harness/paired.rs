//! Paired workloads: same public sizes, different private data.
//!
//! A pair fixes everything the leakage contract calls public — table
//! capacities, declared result sizes, statement shapes, the planner's
//! (re-derived) choice — and randomizes everything else: stored values,
//! match positions where the operator permits it, predicate constants.
//! Both sides run on fresh engines sharing one cipher seed, so any
//! divergence between the two traces is data leaking into addresses.
//!
//! What may vary inside a pair differs by operator, and each generator
//! documents its own contract. Where positions are pinned (the naive
//! select's result ORAM, the index mutation's key skeleton), hiding them
//! is the job of the underlying structure's randomization, which equality
//! testing cannot certify — values still vary freely there.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::exec::{ExecHints, ForcedJoin, ForcedSelect, PlanReport};
use crate::harness::{build_db, insert_stmts};
use crate::trace::{trace_diff, TraceDiff};

/// One paired-trace suite per operator, plus the two mutation paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    SelectSmall,
    SelectLarge,
    SelectContinuous,
    SelectHash,
    SelectNaive,
    Aggregate,
    GroupAggregate,
    JoinHash,
    JoinOpaque,
    JoinZeroOm,
    MutateFlat,
    MutateIndex,
}

impl Suite {
    pub const ALL: [Suite; 12] = [
        Suite::SelectSmall,
        Suite::SelectLarge,
        Suite::SelectContinuous,
        Suite::SelectHash,
        Suite::SelectNaive,
        Suite::Aggregate,
        Suite::GroupAggregate,
        Suite::JoinHash,
        Suite::JoinOpaque,
        Suite::JoinZeroOm,
        Suite::MutateFlat,
        Suite::MutateIndex,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::SelectSmall => "select-small",
            Suite::SelectLarge => "select-large",
            Suite::SelectContinuous => "select-continuous",
            Suite::SelectHash => "select-hash",
            Suite::SelectNaive => "select-naive",
            Suite::Aggregate => "aggregate",
            Suite::GroupAggregate => "group-aggregate",
            Suite::JoinHash => "join-hash",
            Suite::JoinOpaque => "join-opaque",
            Suite::JoinZeroOm => "join-zero-om",
            Suite::MutateFlat => "mutate-flat",
            Suite::MutateIndex => "mutate-index",
        }
    }
}

/// A self-contained run: config text, setup statements (trace discarded),
/// measured statements (trace kept and compared).
pub struct Workload {
    pub config: String,
    pub setup: Vec<String>,
    pub measured: Vec<String>,
    pub hints: ExecHints,
    pub skip_dummy_writes: bool,
    /// Include returned row counts in the invariant check. Off for padded
    /// workloads, where the live result count is exactly what padding hides.
    pub compare_returned: bool,
}

pub struct PairedWorkload {
    pub label: String,
    pub a: Workload,
    pub b: Workload,
}

pub struct RunOutcome {
    pub events: Vec<crate::trace::AccessEvent>,
    pub fingerprints: Vec<String>,
}

pub struct PairOutcome {
    pub diff: TraceDiff,
    /// Set when the two sides disagreed on a public quantity — the pair is
    /// invalid (a generator bug), not evidence about the engine.
    pub violation: Option<String>,
}

// ----- running ---------------------------------------------------------

fn fingerprint(r: &PlanReport, compare_returned: bool) -> String {
    let tables: Vec<String> = r.tables.iter().map(|(n, s)| format!("{n}:{s}")).collect();
    let ret = if compare_returned {
        r.returned_rows.to_string()
    } else {
        "-".to_string()
    };
    format!(
        "{}|{}|{}|{}|{}|{}",
        r.statement,
        r.shape,
        r.algorithm,
        tables.join(","),
        r.declared_rows,
        ret
    )
}

pub fn run_workload(w: &Workload) -> Result<RunOutcome> {
    let mut db = build_db(&w.config)?;
    db.mem().knobs.skip_dummy_writes = w.skip_dummy_writes;
    for stmt in &w.setup {
        db.run_sql(stmt, &ExecHints::default())?;
    }
    db.mem().trace_mut().take();
    let mut events = Vec::new();
    let mut fingerprints = Vec::new();
    for stmt in &w.measured {
        let out = db.run_sql(stmt, &w.hints)?;
        fingerprints.push(fingerprint(&out.report, w.compare_returned));
        events.extend(db.mem().trace_mut().take());
    }
    Ok(RunOutcome { events, fingerprints })
}

/// Run both sides and compare. The trace diff and the invariant check are
/// reported separately so negative controls can observe divergence even
/// when they break an invariant on purpose.
pub fn run_paired(p: &PairedWorkload) -> Result<PairOutcome> {
    let a = run_workload(&p.a)?;
    let b = run_workload(&p.b)?;
    let violation = if a.fingerprints.len() != b.fingerprints.len() {
        Some(format!(
            "{}: statement counts differ ({} vs {})",
            p.label,
            a.fingerprints.len(),
            b.fingerprints.len()
        ))
    } else {
        a.fingerprints
            .iter()
            .zip(&b.fingerprints)
            .find(|(x, y)| x != y)
            .map(|(x, y)| format!("{}: {x} vs {y}", p.label))
    };
    Ok(PairOutcome {
        diff: trace_diff(&a.events, &b.events),
        violation,
    })
}

// ----- generation ------------------------------------------------------

const BASE_BUDGET: u64 = 1 << 23;

fn base_config(seed: u64, extra: &str) -> String {
    format!("oblivious_memory_bytes = {BASE_BUDGET}\nfast_insert = true\ncipher_seed = {seed}\n{extra}")
}

fn rng_for(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Distinct scan positions; sorted so contiguity is easy to audit.
fn sample_positions(rng: &mut ChaCha20Rng, n: u64, r: u64) -> Vec<u64> {
    let mut picks = rand::seq::index::sample(rng, n as usize, r as usize).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|p| p as u64).collect()
}

/// A full flat table of (k, v) rows where `v = marker` exactly at the given
/// positions. Fillers and markers come from disjoint ranges.
fn marked_rows(rng: &mut ChaCha20Rng, n: u64, positions: &[u64]) -> (Vec<Vec<i64>>, i64) {
    let marker = rng.gen_range(500_001..1_000_000);
    let mut rows = Vec::with_capacity(n as usize);
    for i in 0..n {
        let k = rng.gen_range(0..1_000_000);
        let v = if positions.binary_search(&i).is_ok() {
            marker
        } else {
            rng.gen_range(0..500_000)
        };
        rows.push(vec![k, v]);
    }
    (rows, marker)
}

fn flat_select_side(
    rng: &mut ChaCha20Rng,
    config: String,
    n: u64,
    positions: &[u64],
    hints: ExecHints,
    compare_returned: bool,
) -> Workload {
    let (rows, marker) = marked_rows(rng, n, positions);
    let mut setup = vec![format!(
        "CREATE TABLE t (k INT, v INT) WITH STORAGE = FLAT, CAPACITY = {n}"
    )];
    setup.extend(insert_stmts("t", &rows));
    Workload {
        config,
        setup,
        measured: vec![format!("SELECT k, v FROM t WHERE v = {marker}")],
        hints,
        skip_dummy_writes: false,
        compare_returned,
    }
}

fn gen_select(suite: Suite, seed: u64) -> PairedWorkload {
    let mut rng = rng_for(seed);
    let hints = ExecHints::default();
    let (config_extra, n, r) = match suite {
        Suite::SelectSmall => {
            let n = rng.gen_range(32..=128);
            (String::new(), n, rng.gen_range(1..=4 * n / 5 - 1))
        }
        Suite::SelectLarge => {
            let n = rng.gen_range(32..=128);
            (String::new(), n, rng.gen_range(n * 4 / 5 + 1..=n))
        }
        Suite::SelectContinuous => {
            let n = rng.gen_range(32..=128);
            ("planner.continuous_enabled = true\n".to_string(), n, rng.gen_range(1..=n / 2))
        }
        _ => unreachable!(),
    };
    let config = base_config(seed, &config_extra);
    let positions_for = |rng: &mut ChaCha20Rng| -> Vec<u64> {
        if suite == Suite::SelectContinuous {
            let start = rng.gen_range(0..=n - r);
            (start..start + r).collect()
        } else {
            sample_positions(rng, n, r)
        }
    };
    let pa = positions_for(&mut rng);
    let a = flat_select_side(&mut rng, config.clone(), n, &pa, hints, true);
    let pb = positions_for(&mut rng);
    let b = flat_select_side(&mut rng, config, n, &pb, hints, true);
    PairedWorkload {
        label: format!("{}#{seed}", suite.name()),
        a,
        b,
    }
}

/// Hash select runs padded: a pad target of 5 keeps every probe chain
/// covering the whole result region, so placement cannot overflow, and a
/// one-row enclave buffer pushes the size-only planner past the small
/// variant. Match counts may differ inside the pair — the target is the
/// public size.
fn gen_select_hash(seed: u64) -> PairedWorkload {
    let mut rng = rng_for(seed);
    let n = rng.gen_range(64..=128);
    let config = format!(
        "oblivious_memory_bytes = 20\nfast_insert = true\npadding_mode = true\npad_target.t = 5\ncipher_seed = {seed}\n"
    );
    let side = |rng: &mut ChaCha20Rng| {
        let r = rng.gen_range(1..=5);
        let positions = sample_positions(rng, n, r);
        flat_select_side(rng, config.clone(), n, &positions, ExecHints::default(), false)
    };
    let a = side(&mut rng);
    let b = side(&mut rng);
    PairedWorkload {
        label: format!("select-hash#{seed}"),
        a,
        b,
    }
}

/// The naive select's result ORAM follows match positions, so the pair
/// shares positions and varies all content; the ORAM's own path
/// randomization is what hides positions, and that guarantee is
/// distributional, not a trace-equality fact.
fn gen_select_naive(seed: u64) -> PairedWorkload {
    let mut rng = rng_for(seed);
    let n = rng.gen_range(32..=96);
    let r = rng.gen_range(1..=8);
    let positions = sample_positions(&mut rng, n, r);
    let config = base_config(seed, "");
    let hints = ExecHints {
        force_select: Some(ForcedSelect::Naive),
        force_join: None,
    };
    let a = flat_select_side(&mut rng, config.clone(), n, &positions, hints, true);
    let b = flat_select_side(&mut rng, config, n, &positions, hints, true);
    PairedWorkload {
        label: format!("select-naive#{seed}"),
        a,
        b,
    }
}

fn gen_aggregate(suite: Suite, seed: u64) -> PairedWorkload {
    let mut rng = rng_for(seed);
    let n = rng.gen_range(32..=128);
    let groups = rng.gen_range(2..=8);
    let config = base_config(seed, "");
    let side = |rng: &mut ChaCha20Rng| {
        let rows: Vec<Vec<i64>> = (0..n)
            .map(|i| vec![i as i64 % groups, rng.gen_range(0..1_000_000)])
            .collect();
        let measured = match suite {
            Suite::Aggregate => {
                let c = rng.gen_range(0..1_000_000);
                format!("SELECT COUNT(*), SUM(v), MIN(v), MAX(v) FROM t WHERE v < {c}")
            }
            _ => "SELECT g, COUNT(*), SUM(v) FROM t GROUP BY g".to_string(),
        };
        let mut setup = vec![format!(
            "CREATE TABLE t (g INT, v INT) WITH STORAGE = FLAT, CAPACITY = {n}"
        )];
        setup.extend(insert_stmts("t", &rows));
        Workload {
            config: config.clone(),
            setup,
            measured: vec![measured],
            hints: ExecHints::default(),
            skip_dummy_writes: false,
            compare_returned: true,
        }
    };
    let a = side(&mut rng);
    let b = side(&mut rng);
    PairedWorkload {
        label: format!("{}#{seed}", suite.name()),
        a,
        b,
    }
}

/// Foreign-key shaped join inputs: unique primary keys, every foreign row
/// referencing one of them. Join traces are pure functions of the two
/// capacities and the budget, so sides pair freely on sizes.
fn join_side(
    rng: &mut ChaCha20Rng,
    config: String,
    n1: u64,
    n2: u64,
    forced: ForcedJoin,
) -> Workload {
    let mut keys: Vec<i64> = (0..n1 as i64).map(|i| i * 7 + rng.gen_range(0..7)).collect();
    keys.shuffle(rng);
    let a_rows: Vec<Vec<i64>> = keys
        .iter()
        .map(|&k| vec![k, rng.gen_range(0..1_000_000)])
        .collect();
    let b_rows: Vec<Vec<i64>> = (0..n2)
        .map(|_| {
            let k = keys[rng.gen_range(0..keys.len())];
            vec![k, rng.gen_range(0..1_000_000)]
        })
        .collect();
    let mut setup = vec![
        format!("CREATE TABLE a (k INT, x INT) WITH STORAGE = FLAT, CAPACITY = {n1}"),
        format!("CREATE TABLE b (k INT, y INT) WITH STORAGE = FLAT, CAPACITY = {n2}"),
    ];
    setup.extend(insert_stmts("a", &a_rows));
    setup.extend(insert_stmts("b", &b_rows));
    Workload {
        config,
        setup,
        measured: vec!["SELECT * FROM a JOIN b ON a.k = b.k".to_string()],
        hints: ExecHints {
            force_select: None,
            force_join: Some(forced),
        },
        skip_dummy_writes: false,
        compare_returned: true,
    }
}

fn gen_join(suite: Suite, seed: u64) -> PairedWorkload {
    let mut rng = rng_for(seed);
    let n1 = rng.gen_range(16..=48);
    let n2 = rng.gen_range(16..=64);
    // 256 bytes of enclave scratch: a handful of primary rows per hash-join
    // chunk, a small power-of-two chunk for the sort join.
    let config = format!("oblivious_memory_bytes = 256\nfast_insert = true\ncipher_seed = {seed}\n");
    let forced = match suite {
        Suite::JoinHash => ForcedJoin::Hash,
        Suite::JoinOpaque => ForcedJoin::Opaque,
        _ => ForcedJoin::ZeroOm,
    };
    let a = join_side(&mut rng, config.clone(), n1, n2, forced);
    let b = join_side(&mut rng, config, n1, n2, forced);
    PairedWorkload {
        label: format!("{}#{seed}", suite.name()),
        a,
        b,
    }
}

fn mutation_stmt(rng: &mut ChaCha20Rng, update: bool, pred: &str) -> String {
    if update {
        format!("UPDATE t SET v = {} WHERE {pred}", rng.gen_range(0..500_000))
    } else {
        format!("DELETE FROM t WHERE {pred}")
    }
}

fn gen_mutate_flat(seed: u64) -> PairedWorkload {
    let mut rng = rng_for(seed);
    let n = rng.gen_range(32..=128);
    let r = rng.gen_range(1..=n / 4);
    let update = rng.gen_bool(0.5);
    let config = base_config(seed, "");
    let side = |rng: &mut ChaCha20Rng| {
        let positions = sample_positions(rng, n, r);
        let (rows, marker) = marked_rows(rng, n, &positions);
        let mut setup = vec![format!(
            "CREATE TABLE t (k INT, v INT) WITH STORAGE = FLAT, CAPACITY = {n}"
        )];
        setup.extend(insert_stmts("t", &rows));
        Workload {
            config: config.clone(),
            setup,
            measured: vec![mutation_stmt(rng, update, &format!("v = {marker}"))],
            hints: ExecHints::default(),
            skip_dummy_writes: false,
            compare_returned: true,
        }
    };
    let a = side(&mut rng);
    let b = side(&mut rng);
    PairedWorkload {
        label: format!("mutate-flat#{seed}"),
        a,
        b,
    }
}

/// Index mutations leak the key skeleton by design (tree structure, walk
/// lengths), so the pair shares the key set and insertion order and the
/// affected keys, varying every stored value and constant. Half the pairs
/// mutate through a key-range predicate (the range walk), half through a
/// value marker (the full chain scan).
fn gen_mutate_index(seed: u64) -> PairedWorkload {
    let mut rng = rng_for(seed);
    let n: u64 = rng.gen_range(24..=48);
    let r: u64 = rng.gen_range(1..=6);
    let update = rng.gen_bool(0.5);
    let key_path = rng.gen_bool(0.5);
    let mut keys: Vec<i64> = (0..n as i64).map(|i| i * 11 + rng.gen_range(0..11)).collect();
    keys.shuffle(&mut rng);
    let mut sorted = keys.clone();
    sorted.sort_unstable();
    let lo_idx = rng.gen_range(0..=(n - r) as usize);
    let (lo, hi) = (
        sorted[lo_idx],
        if lo_idx + r as usize == n as usize {
            sorted[n as usize - 1] + 1
        } else {
            sorted[lo_idx + r as usize]
        },
    );
    let marked: Vec<usize> =
        rand::seq::index::sample(&mut rng, n as usize, r as usize).into_vec();
    let config = base_config(seed, "");
    let side = |rng: &mut ChaCha20Rng| {
        let marker = rng.gen_range(500_001..1_000_000);
        let rows: Vec<Vec<i64>> = keys
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let v = if key_path || !marked.contains(&i) {
                    rng.gen_range(0..500_000)
                } else {
                    marker
                };
                vec![k, v]
            })
            .collect();
        let pred = if key_path {
            format!("k >= {lo} AND k < {hi}")
        } else {
            format!("v = {marker}")
        };
        let mut setup = vec![format!(
            "CREATE TABLE t (k INT, v INT) WITH STORAGE = INDEX(k), CAPACITY = {n}"
        )];
        setup.extend(insert_stmts("t", &rows));
        Workload {
            config: config.clone(),
            setup,
            measured: vec![mutation_stmt(rng, update, &pred)],
            hints: ExecHints::default(),
            skip_dummy_writes: false,
            compare_returned: true,
        }
    };
    let a = side(&mut rng);
    let b = side(&mut rng);
    PairedWorkload {
        label: format!("mutate-index#{seed}"),
        a,
        b,
    }
}

/// Build one random pair for a suite. Equal seeds give equal pairs.
pub fn generate(suite: Suite, seed: u64) -> PairedWorkload {
    match suite {
        Suite::SelectSmall | Suite::SelectLarge | Suite::SelectContinuous => {
            gen_select(suite, seed)
        }
        Suite::SelectHash => gen_select_hash(seed),
        Suite::SelectNaive => gen_select_naive(seed),
        Suite::Aggregate | Suite::GroupAggregate => gen_aggregate(suite, seed),
        Suite::JoinHash | Suite::JoinOpaque | Suite::JoinZeroOm => gen_join(suite, seed),
        Suite::MutateFlat => gen_mutate_flat(seed),
        Suite::MutateIndex => gen_mutate_index(seed),
    }
}

// ----- negative controls ------------------------------------------------

/// Same table size, different declared result sizes. The traces must
/// diverge — if they did not, the comparison would be vacuous.
pub fn mismatched_size_control(seed: u64) -> PairedWorkload {
    let mut rng = rng_for(seed);
    let n = rng.gen_range(32..=128);
    let r = rng.gen_range(1..=n / 2);
    let config = base_config(seed, "");
    let pa = sample_positions(&mut rng, n, r);
    let a = flat_select_side(&mut rng, config.clone(), n, &pa, ExecHints::default(), true);
    let pb = sample_positions(&mut rng, n, r + 3);
    let b = flat_select_side(&mut rng, config, n, &pb, ExecHints::default(), true);
    PairedWorkload {
        label: format!("control-size#{seed}"),
        a,
        b,
    }
}

/// One honest build against one that skips dummy writes on the flat
/// mutation pass. The mutant's trace thins out where predicates miss,
/// which is exactly the leak the dummy writes exist to prevent.
pub fn mutant_control(seed: u64) -> PairedWorkload {
    let mut pair = gen_mutate_flat(seed);
    pair.label = format!("control-mutant#{seed}");
    // Identical data on both sides: only the build differs.
    let mutant = Workload {
        skip_dummy_writes: true,
        setup: pair.a.setup.clone(),
        measured: pair.a.measured.clone(),
        ..pair.b
    };
    pair.b = mutant;
    pair
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_pairs_equal() {
        for suite in Suite::ALL {
            for seed in [1, 2] {
                let pair = generate(suite, seed);
                let out = run_paired(&pair).unwrap();
                assert!(out.violation.is_none(), "{}: {:?}", pair.label, out.violation);
                assert_eq!(out.diff, TraceDiff::Equal, "{}", pair.label);
            }
        }
    }

    #[test]
    fn mismatched_sizes_diverge() {
        let out = run_paired(&mismatched_size_control(3)).unwrap();
        assert_ne!(out.diff, TraceDiff::Equal);
        assert!(out.violation.is_some(), "different declared sizes are a broken invariant");
    }

    #[test]
    fn dummy_write_skipping_mutant_diverges() {
        let out = run_paired(&mutant_control(4)).unwrap();
        assert_ne!(out.diff, TraceDiff::Equal);
        assert!(out.violation.is_none(), "the mutant lies in the build, not the sizes");
    }

    #[test]
    fn generation_is_deterministic() {
        let p1 = generate(Suite::SelectSmall, 9);
        let p2 = generate(Suite::SelectSmall, 9);
        assert_eq!(p1.a.setup, p2.a.setup);
        assert_eq!(p1.b.measured, p2.b.measured);
    }
}
