//! Obliviousness and performance harness.
//!
//! Three instruments over the public engine surface:
//!
//! - [`paired`]: generates pairs of workloads that agree on every public
//!   size and differ in private data, runs each side on a fresh engine with
//!   a shared cipher seed, and compares the two traces event for event.
//!   Negative controls (mismatched sizes, a build that skips dummy writes)
//!   prove the comparison has teeth.
//! - [`sweep`]: measures one operator across geometrically growing inputs
//!   and checks the growth of the trace against the operator's modeled
//!   event count.
//! - [`bench`]: replays mixed read/write workloads over the three storage
//!   methods and reports per-operation access counts.
//!
//! Everything here drives the engine exactly the way a client would —
//! config text, SQL statements, exported traces — so the numbers it
//! reports are the numbers an adversary watching block traffic would see.

pub mod bench;
pub mod paired;
pub mod sweep;

pub use bench::{bench_suite, BenchReport};
pub use paired::{
    mismatched_size_control, mutant_control, run_paired, run_workload, PairOutcome,
    PairedWorkload, Suite, Workload,
};
pub use sweep::{run_sweep, SweepOp, SweepPoint, SweepReport};

use crate::config::EngineConfig;
use crate::error::Result;
use crate::exec::Database;

/// Parse a config text and boot a fresh engine from it.
pub(crate) fn build_db(config: &str) -> Result<Database> {
    let cfg = EngineConfig::parse(config)?;
    cfg.validate()?;
    Ok(Database::new(cfg))
}

/// Render rows as chunked multi-row INSERT statements.
pub(crate) fn insert_stmts(table: &str, rows: &[Vec<i64>]) -> Vec<String> {
    rows.chunks(512)
        .map(|chunk| {
            let tuples: Vec<String> = chunk
                .iter()
                .map(|r| {
                    let vals: Vec<String> = r.iter().map(|v| v.to_string()).collect();
                    format!("({})", vals.join(", "))
                })
                .collect();
            format!("INSERT INTO {table} VALUES {}", tuples.join(", "))
        })
        .collect()
}
