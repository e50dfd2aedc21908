//! Complexity sweeps: one operator, geometrically growing inputs.
//!
//! Each sweep point builds a fresh engine, loads a deterministic table of
//! the requested size, runs exactly one measured statement, and counts
//! trace events. Alongside the measurement it evaluates the operator's
//! modeled event count from runtime quantities (row sizes, chunk counts,
//! tree heights), so the growth check compares measured ratios against
//! modeled ratios rather than against idealized curves with unknowable
//! constants.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::exec::{Database, ExecHints, ForcedJoin, ForcedSelect};
use crate::harness::{build_db, insert_stmts};
use crate::ops::bitonic::ce_count;

/// Everything the complexity table rows cover: the nine scan operators,
/// the index point read, and the two insert paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOp {
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
    IndexPointRead,
    FlatInsert,
    IndexInsert,
}

impl SweepOp {
    pub const ALL: [SweepOp; 13] = [
        SweepOp::SelectSmall,
        SweepOp::SelectLarge,
        SweepOp::SelectContinuous,
        SweepOp::SelectHash,
        SweepOp::SelectNaive,
        SweepOp::Aggregate,
        SweepOp::GroupAggregate,
        SweepOp::JoinHash,
        SweepOp::JoinOpaque,
        SweepOp::JoinZeroOm,
        SweepOp::IndexPointRead,
        SweepOp::FlatInsert,
        SweepOp::IndexInsert,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SweepOp::SelectSmall => "select-small",
            SweepOp::SelectLarge => "select-large",
            SweepOp::SelectContinuous => "select-continuous",
            SweepOp::SelectHash => "select-hash",
            SweepOp::SelectNaive => "select-naive",
            SweepOp::Aggregate => "aggregate",
            SweepOp::GroupAggregate => "group-aggregate",
            SweepOp::JoinHash => "join-hash",
            SweepOp::JoinOpaque => "join-opaque",
            SweepOp::JoinZeroOm => "join-zero-om",
            SweepOp::IndexPointRead => "index-point-read",
            SweepOp::FlatInsert => "flat-insert",
            SweepOp::IndexInsert => "index-insert",
        }
    }

    /// Default grid: powers of two, at least three points, sized so the
    /// slowest operators stay in desk-test territory.
    pub fn default_sizes(&self) -> Vec<u64> {
        match self {
            SweepOp::JoinHash | SweepOp::JoinOpaque | SweepOp::JoinZeroOm => {
                vec![64, 128, 256]
            }
            SweepOp::IndexPointRead => vec![512, 1024, 2048, 4096, 8192],
            SweepOp::IndexInsert => vec![512, 1024, 2048],
            _ => vec![1024, 2048, 4096],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SweepPoint {
    pub size: u64,
    pub measured: u64,
    pub expected: u64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub op: SweepOp,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// `size,operator,access_count` rows, header included.
    pub fn csv(&self) -> String {
        let mut out = String::from("size,operator,access_count\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.size, self.op.name(), p.measured));
        }
        out
    }

    /// Every consecutive measured growth ratio within `slack` of the
    /// modeled growth ratio (both directions).
    pub fn growth_within(&self, slack: f64) -> bool {
        self.points.windows(2).all(|w| {
            let measured = w[1].measured as f64 / w[0].measured as f64;
            let modeled = w[1].expected as f64 / w[0].expected as f64;
            measured <= modeled * slack && measured >= modeled / slack
        })
    }

    /// Measured growth across the whole grid (last / first).
    pub fn span_ratio(&self) -> f64 {
        self.points.last().unwrap().measured as f64 / self.points[0].measured as f64
    }
}

// ----- per-operator setups ----------------------------------------------

const SWEEP_SEED: u64 = 0x5eed;

fn flat_config(extra: &str) -> String {
    format!("oblivious_memory_bytes = {}\nfast_insert = true\ncipher_seed = 77\n{extra}", 1u64 << 23)
}

/// Flat (k, v) table of exactly `n` rows where `v = 1` at the given
/// positions and `v = 0` elsewhere.
fn marked_table(db: &mut Database, n: u64, positions: &[u64]) -> Result<()> {
    let rows: Vec<Vec<i64>> = (0..n)
        .map(|i| {
            let v = if positions.binary_search(&i).is_ok() { 1 } else { 0 };
            vec![i as i64, v]
        })
        .collect();
    run_setup(
        db,
        std::iter::once(format!(
            "CREATE TABLE t (k INT, v INT) WITH STORAGE = FLAT, CAPACITY = {n}"
        ))
        .chain(insert_stmts("t", &rows)),
    )
}

/// Run setup statements, draining the trace as it goes so big index builds
/// do not hold millions of events in memory.
fn run_setup(db: &mut Database, stmts: impl IntoIterator<Item = String>) -> Result<()> {
    for stmt in stmts {
        db.run_sql(&stmt, &ExecHints::default())?;
        db.mem().trace_mut().take();
    }
    Ok(())
}

fn scattered(rng: &mut ChaCha20Rng, n: u64, r: u64) -> Vec<u64> {
    let mut p = rand::seq::index::sample(rng, n as usize, r as usize).into_vec();
    p.sort_unstable();
    p.into_iter().map(|x| x as u64).collect()
}

struct Prepared {
    db: Database,
    measured: String,
    hints: ExecHints,
    expected: u64,
}

fn prepare(op: SweepOp, n: u64) -> Result<Prepared> {
    let mut rng = ChaCha20Rng::seed_from_u64(SWEEP_SEED ^ n);
    let hints = ExecHints::default();
    match op {
        SweepOp::SelectSmall => {
            let r = 8;
            let mut db = build_db(&flat_config(""))?;
            marked_table(&mut db, n, &scattered(&mut rng, n, r))?;
            Ok(Prepared {
                db,
                measured: "SELECT k, v FROM t WHERE v = 1".into(),
                hints,
                expected: 2 * n + 2 * r,
            })
        }
        SweepOp::SelectLarge => {
            let r = (n * 17).div_ceil(20); // 85% of the scan matches
            let mut db = build_db(&flat_config(""))?;
            let positions: Vec<u64> = (0..r).collect();
            marked_table(&mut db, n, &positions)?;
            Ok(Prepared {
                db,
                measured: "SELECT k, v FROM t WHERE v = 1".into(),
                hints,
                expected: 6 * n,
            })
        }
        SweepOp::SelectContinuous => {
            let r = 8;
            let start = rng.gen_range(0..n - r);
            let mut db = build_db(&flat_config("planner.continuous_enabled = true\n"))?;
            let positions: Vec<u64> = (start..start + r).collect();
            marked_table(&mut db, n, &positions)?;
            Ok(Prepared {
                db,
                measured: "SELECT k, v FROM t WHERE v = 1".into(),
                hints,
                expected: 4 * n + 2 * r,
            })
        }
        SweepOp::SelectHash => {
            let target = 5;
            let config = format!(
                "oblivious_memory_bytes = 20\nfast_insert = true\npadding_mode = true\npad_target.t = {target}\ncipher_seed = 77\n"
            );
            let mut db = build_db(&config)?;
            marked_table(&mut db, n, &scattered(&mut rng, n, 3))?;
            Ok(Prepared {
                db,
                measured: "SELECT k, v FROM t WHERE v = 1".into(),
                hints,
                expected: 21 * n + 2 * target,
            })
        }
        SweepOp::SelectNaive => {
            let r = 4;
            let mut db = build_db(&flat_config(""))?;
            marked_table(&mut db, n, &scattered(&mut rng, n, r))?;
            // Result ORAM capacity r+1 is size-independent: 4 levels, 32
            // block events per access, a 60-block initialization.
            Ok(Prepared {
                db,
                measured: "SELECT k, v FROM t WHERE v = 1".into(),
                hints: ExecHints {
                    force_select: Some(ForcedSelect::Naive),
                    force_join: None,
                },
                expected: 34 * n + 196,
            })
        }
        SweepOp::Aggregate => {
            let mut db = build_db(&flat_config(""))?;
            marked_table(&mut db, n, &[])?;
            Ok(Prepared {
                db,
                measured: "SELECT COUNT(*), SUM(v), MAX(k) FROM t WHERE v < 1".into(),
                hints,
                expected: n,
            })
        }
        SweepOp::GroupAggregate => {
            let mut db = build_db(&flat_config(""))?;
            let rows: Vec<Vec<i64>> = (0..n).map(|i| vec![i as i64 % 8, i as i64]).collect();
            run_setup(
                &mut db,
                std::iter::once(format!(
                    "CREATE TABLE t (g INT, v INT) WITH STORAGE = FLAT, CAPACITY = {n}"
                ))
                .chain(insert_stmts("t", &rows)),
            )?;
            Ok(Prepared {
                db,
                measured: "SELECT g, COUNT(*), SUM(v) FROM t GROUP BY g".into(),
                hints,
                expected: n,
            })
        }
        SweepOp::JoinHash | SweepOp::JoinOpaque | SweepOp::JoinZeroOm => prepare_join(op, n, rng),
        SweepOp::IndexPointRead => {
            let mut db = build_db(&flat_config(""))?;
            let mut keys: Vec<i64> = (0..n as i64).collect();
            keys.shuffle(&mut rng);
            let rows: Vec<Vec<i64>> = keys.iter().map(|&k| vec![k, k * 3]).collect();
            run_setup(
                &mut db,
                std::iter::once(format!(
                    "CREATE TABLE t (k INT, v INT) WITH STORAGE = INDEX(k), CAPACITY = {n}"
                ))
                .chain(insert_stmts("t", &rows)),
            )?;
            let (h, epa) = {
                let index = db.table("t").unwrap().index().unwrap();
                (index.height() as u64, index.events_per_access())
            };
            Ok(Prepared {
                db,
                measured: format!("SELECT k, v FROM t WHERE k = {}", n / 2),
                hints,
                // Two range walks (count, then read) of one row each, plus
                // the result write and the materialize read.
                expected: 2 * (h + 3) * epa + 2,
            })
        }
        SweepOp::FlatInsert => {
            let mut db = build_db(&format!(
                "oblivious_memory_bytes = {}\ncipher_seed = 77\n",
                1u64 << 23
            ))?;
            run_setup(
                &mut db,
                std::iter::once(format!(
                    "CREATE TABLE t (k INT, v INT) WITH STORAGE = FLAT, CAPACITY = {n}"
                )),
            )?;
            Ok(Prepared {
                db,
                measured: "INSERT INTO t VALUES (1, 1)".into(),
                hints,
                expected: 2 * n,
            })
        }
        SweepOp::IndexInsert => {
            let mut db = build_db(&flat_config(""))?;
            let mut keys: Vec<i64> = (0..n as i64).collect();
            keys.shuffle(&mut rng);
            let rows: Vec<Vec<i64>> = keys.iter().map(|&k| vec![k, k]).collect();
            run_setup(
                &mut db,
                std::iter::once(format!(
                    "CREATE TABLE t (k INT, v INT) WITH STORAGE = INDEX(k), CAPACITY = {n}"
                ))
                .chain(insert_stmts("t", &rows)),
            )?;
            let (cost, epa) = {
                let index = db.table("t").unwrap().index().unwrap();
                (index.insert_cost(), index.events_per_access())
            };
            Ok(Prepared {
                db,
                measured: format!("INSERT INTO t VALUES ({}, 0)", 20 * n),
                hints,
                expected: cost * epa,
            })
        }
    }
}

fn prepare_join(op: SweepOp, n: u64, mut rng: ChaCha20Rng) -> Result<Prepared> {
    let config = "oblivious_memory_bytes = 256\nfast_insert = true\ncipher_seed = 77\n";
    let mut db = build_db(config)?;
    let mut keys: Vec<i64> = (0..n as i64).collect();
    keys.shuffle(&mut rng);
    let a_rows: Vec<Vec<i64>> = keys.iter().map(|&k| vec![k, k * 2]).collect();
    let b_rows: Vec<Vec<i64>> = (0..n)
        .map(|_| vec![keys[rng.gen_range(0..keys.len())], rng.gen_range(0..1000)])
        .collect();
    run_setup(
        &mut db,
        [
            format!("CREATE TABLE a (k INT, x INT) WITH STORAGE = FLAT, CAPACITY = {n}"),
            format!("CREATE TABLE b (k INT, y INT) WITH STORAGE = FLAT, CAPACITY = {n}"),
        ]
        .into_iter()
        .chain(insert_stmts("a", &a_rows))
        .chain(insert_stmts("b", &b_rows)),
    )?;
    let row1 = db.table("a").unwrap().schema.row_size() as u64;
    let budget = db.mem().budget().free();
    let (forced, expected) = match op {
        SweepOp::JoinHash => {
            let chunks = n.div_ceil(budget / row1);
            (ForcedJoin::Hash, n + 3 * chunks * n)
        }
        _ => {
            let total = 2 * n;
            let p = total.next_power_of_two();
            let ublock = (1 + 8 + 8 + row1) as u64;
            let chunk = if op == SweepOp::JoinZeroOm {
                1
            } else {
                prev_pow2((budget / ublock).min(p))
            };
            let chunk_pass = if chunk > 1 { 2 * p } else { 0 };
            let forced = if op == SweepOp::JoinZeroOm {
                ForcedJoin::ZeroOm
            } else {
                ForcedJoin::Opaque
            };
            (forced, 3 * total + 2 * p + chunk_pass + 4 * ce_count(p, chunk))
        }
    };
    Ok(Prepared {
        db,
        measured: "SELECT * FROM a JOIN b ON a.k = b.k".into(),
        hints: ExecHints {
            force_select: None,
            force_join: Some(forced),
        },
        expected,
    })
}

fn prev_pow2(x: u64) -> u64 {
    debug_assert!(x >= 1);
    if x.is_power_of_two() {
        x
    } else {
        x.next_power_of_two() / 2
    }
}

/// Measure one operator over a doubling grid. Sizes must double and give
/// at least three points; anything else is a harness misuse.
pub fn run_sweep(op: SweepOp, sizes: &[u64]) -> Result<SweepReport> {
    assert!(sizes.len() >= 3, "a sweep needs at least three points");
    assert!(
        sizes.windows(2).all(|w| w[1] == 2 * w[0]),
        "sweep sizes must double"
    );
    let mut points = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut p = prepare(op, n)?;
        p.db.mem().trace_mut().take();
        p.db.run_sql(&p.measured, &p.hints)?;
        let measured = p.db.mem().trace_mut().take().len() as u64;
        points.push(SweepPoint {
            size: n,
            measured,
            expected: p.expected,
        });
    }
    Ok(SweepReport { op, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_operators_track_their_models() {
        for op in [SweepOp::SelectSmall, SweepOp::Aggregate] {
            let report = run_sweep(op, &[256, 512, 1024]).unwrap();
            assert!(report.growth_within(1.5), "{}: {:?}", op.name(), report.points);
        }
    }

    #[test]
    fn small_select_model_is_exact() {
        let report = run_sweep(SweepOp::SelectSmall, &[256, 512, 1024]).unwrap();
        for p in report.points {
            assert_eq!(p.measured, p.expected);
        }
    }

    #[test]
    fn join_sweep_tracks_quadratic_growth() {
        let report = run_sweep(SweepOp::JoinHash, &[32, 64, 128]).unwrap();
        assert!(report.growth_within(1.5), "{:?}", report.points);
        // Twice the rows, well over twice the events.
        assert!(report.span_ratio() > 8.0);
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let report = run_sweep(SweepOp::Aggregate, &[256, 512, 1024]).unwrap();
        let csv = report.csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("size,operator,access_count\n"));
        assert!(csv.contains("512,aggregate,"));
    }

    #[test]
    fn sizes_must_double() {
        let err = std::panic::catch_unwind(|| run_sweep(SweepOp::Aggregate, &[100, 150, 225]));
        assert!(err.is_err());
    }
}
