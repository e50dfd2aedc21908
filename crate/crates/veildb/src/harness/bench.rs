//! Mixed-workload benchmark across storage methods.
//!
//! Five operation mixes — insert-heavy, small-read-heavy, point/large
//! blends — replay over the same logical table stored flat, indexed, and
//! both ways. Each method's table is built once, sealed, and re-opened
//! fresh for every mix, so mixes never see each other's mutations and the
//! seal/open path gets exercised along the way. The statement sequence per
//! mix is generated once and shared by all methods; only the storage
//! differs. Scores are trace events per operation: the untrusted-memory
//! traffic an operation costs, which is what separates the methods once
//! every one of them is oblivious.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::exec::ExecHints;
use crate::harness::{build_db, insert_stmts};

/// (mix name, percentages of [point, small, large, insert, delete]).
pub const MIXES: [(&str, [u64; 5]); 5] = [
    ("L1", [5, 0, 5, 90, 0]),
    ("L2", [0, 90, 0, 9, 1]),
    ("L3", [50, 0, 50, 0, 0]),
    ("L4", [45, 0, 45, 5, 5]),
    ("L5", [0, 0, 90, 5, 5]),
];

pub const KINDS: [&str; 5] = ["point", "small", "large", "insert", "delete"];
pub const METHODS: [&str; 3] = ["flat", "indexed", "both"];

/// Rows touched by a small read; large reads touch 5% of the table.
const SMALL_SPAN: u64 = 50;

#[derive(Debug, Clone)]
pub struct BenchCell {
    pub mix: &'static str,
    pub method: &'static str,
    pub ops: u64,
    pub events: u64,
    /// (kind, operations, events) for every kind present in the mix.
    pub per_kind: Vec<(&'static str, u64, u64)>,
}

impl BenchCell {
    pub fn avg(&self) -> f64 {
        self.events as f64 / self.ops as f64
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: u64,
    pub cells: Vec<BenchCell>,
}

impl BenchReport {
    pub fn cell(&self, mix: &str, method: &str) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.mix == mix && c.method == method)
    }

    /// Mean events per operation for a whole mix.
    pub fn avg(&self, mix: &str, method: &str) -> f64 {
        self.cell(mix, method).map(BenchCell::avg).unwrap_or(f64::NAN)
    }

    /// Mean events per operation of one kind within a mix.
    pub fn kind_avg(&self, mix: &str, method: &str, kind: &str) -> Option<f64> {
        let cell = self.cell(mix, method)?;
        cell.per_kind
            .iter()
            .find(|(k, ops, _)| *k == kind && *ops > 0)
            .map(|(_, ops, ev)| *ev as f64 / *ops as f64)
    }

    /// `mix,method,kind,ops,events` rows, header included.
    pub fn csv(&self) -> String {
        let mut out = String::from("mix,method,kind,ops,events\n");
        for c in &self.cells {
            for (kind, ops, events) in &c.per_kind {
                if *ops > 0 {
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        c.mix, c.method, kind, ops, events
                    ));
                }
            }
        }
        out
    }
}

/// The statement sequence of one mix, generated once and replayed on every
/// storage method.
fn mix_ops(pcts: &[u64; 5], rows: u64, ops: u64, rng: &mut ChaCha20Rng) -> Vec<(usize, String)> {
    let mut kinds: Vec<usize> = Vec::with_capacity(ops as usize);
    for (ki, pct) in pcts.iter().enumerate() {
        kinds.extend(std::iter::repeat(ki).take((pct * ops / 100) as usize));
    }
    // Integer truncation leftovers go to the dominant kind.
    let dominant = (0..5).max_by_key(|&k| pcts[k]).unwrap();
    while kinds.len() < ops as usize {
        kinds.push(dominant);
    }
    kinds.shuffle(rng);

    let large_span = (rows / 20).max(1);
    let mut live: Vec<i64> = (0..rows as i64).collect();
    let mut next_key = rows as i64;
    kinds
        .into_iter()
        .map(|ki| {
            let sql = match ki {
                0 => {
                    let k = live[rng.gen_range(0..live.len())];
                    format!("SELECT k, v FROM t WHERE k = {k}")
                }
                1 => {
                    let a = rng.gen_range(0..rows - SMALL_SPAN);
                    format!("SELECT k, v FROM t WHERE k >= {a} AND k < {}", a + SMALL_SPAN)
                }
                2 => {
                    let a = rng.gen_range(0..rows - large_span);
                    format!("SELECT k, v FROM t WHERE k >= {a} AND k < {}", a + large_span)
                }
                3 => {
                    let k = next_key;
                    next_key += 1;
                    live.push(k);
                    format!("INSERT INTO t VALUES ({k}, {})", rng.gen_range(0..1000))
                }
                _ => {
                    let k = live.swap_remove(rng.gen_range(0..live.len()));
                    format!("DELETE FROM t WHERE k = {k}")
                }
            };
            (ki, sql)
        })
        .collect()
}

/// Build, seal, replay, score. `rows` is the initial table size; every mix
/// runs `ops` operations against a fresh copy of the sealed table.
pub fn bench_suite(rows: u64, ops: u64, seed: u64) -> Result<BenchReport> {
    assert!(rows > 2 * SMALL_SPAN, "the table must dwarf a small read");
    assert!(ops >= 10, "too few operations to spread a mix over");
    let capacity = rows + rows / 5 + ops;
    let config = format!(
        "oblivious_memory_bytes = {}\nfast_insert = true\ncipher_seed = {seed}\n",
        1u64 << 23
    );

    // One shared statement sequence per mix.
    let sequences: Vec<Vec<(usize, String)>> = MIXES
        .iter()
        .enumerate()
        .map(|(mi, (_, pcts))| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed ^ ((mi as u64 + 1) << 32));
            mix_ops(pcts, rows, ops, &mut rng)
        })
        .collect();

    let mut key_rng = ChaCha20Rng::seed_from_u64(seed);
    let mut keys: Vec<i64> = (0..rows as i64).collect();
    keys.shuffle(&mut key_rng);
    let rows_data: Vec<Vec<i64>> = keys
        .iter()
        .map(|&k| vec![k, key_rng.gen_range(0..1000)])
        .collect();

    let mut cells = Vec::new();
    for method in METHODS {
        let storage = match method {
            "flat" => "FLAT".to_string(),
            "indexed" => "INDEX(k)".to_string(),
            _ => "BOTH(k)".to_string(),
        };
        let mut base = build_db(&config)?;
        base.run_sql(
            &format!("CREATE TABLE t (k INT, v INT) WITH STORAGE = {storage}, CAPACITY = {capacity}"),
            &ExecHints::default(),
        )?;
        for stmt in insert_stmts("t", &rows_data) {
            base.run_sql(&stmt, &ExecHints::default())?;
            base.mem().trace_mut().take();
        }
        let snapshot = base.seal_to_bytes()?;
        drop(base);

        for ((mix, _), sequence) in MIXES.iter().zip(&sequences) {
            let mut db = build_db(&config)?;
            db.open_bytes(&snapshot)?;
            db.mem().trace_mut().take();
            let mut kind_ops = [0u64; 5];
            let mut kind_events = [0u64; 5];
            for (ki, sql) in sequence {
                db.run_sql(sql, &ExecHints::default())?;
                kind_ops[*ki] += 1;
                kind_events[*ki] += db.mem().trace_mut().take().len() as u64;
            }
            cells.push(BenchCell {
                mix,
                method,
                ops,
                events: kind_events.iter().sum(),
                per_kind: KINDS
                    .iter()
                    .enumerate()
                    .map(|(ki, kind)| (*kind, kind_ops[ki], kind_events[ki]))
                    .collect(),
            });
        }
    }
    Ok(BenchReport { rows, cells })
}
