//! Execution driver: catalog, statement dispatch, CSV load, and sealed
//! persistence.
//!
//! `Database` owns the memory engine and the table catalog and turns bound
//! logical plans into operator calls. Every statement leaves a `PlanReport`
//! naming the chosen algorithm and the public sizes — exactly the declared
//! leakage — and drops a trace marker per phase so each untrusted access is
//! attributable to a reported step. Marker labels carry only plan- and
//! size-derived strings.
//!
//! Under padding mode the per-query statistics scan is skipped: result
//! regions are sized by the configured pad target and the algorithm choice
//! is a pure function of public sizes (plus any manual override), so two
//! queries that share a logical plan and pad target produce identical
//! traces regardless of their selectivities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::{EngineError, Result};
use crate::memory::MemoryEngine;
use crate::ops::{
    aggregate, group_aggregate, hash_join, opaque_join, select_continuous, select_hash,
    select_index_range, select_large, select_naive, select_small, RowSource,
};
use crate::planner::{
    pick_select_algo, plan_join, plan_select, JoinAlgo, SelectAlgo, SelectPlan,
};
use crate::rows::{AggSpec, Schema, Value};
use crate::sql::{bind, parse_sql, CatalogView, JoinSpec, LogicalPlan, QueryPlan, QueryShape};
use crate::table::Table;

/// Manual operator overrides, exposed on the CLI. A forced select still
/// runs the planner's statistics pass (the result size must be known);
/// a forced join replaces the pure size-based choice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExecHints {
    pub force_select: Option<ForcedSelect>,
    pub force_join: Option<ForcedJoin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForcedSelect {
    Naive,
    Small,
    Large,
    Continuous,
    Hash,
}

impl ForcedSelect {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "naive" => Self::Naive,
            "small" => Self::Small,
            "large" => Self::Large,
            "continuous" => Self::Continuous,
            "hash" => Self::Hash,
            _ => return None,
        })
    }

    fn algo(self) -> SelectAlgo {
        match self {
            Self::Naive => SelectAlgo::Naive,
            Self::Small => SelectAlgo::Small,
            Self::Large => SelectAlgo::Large,
            Self::Continuous => SelectAlgo::Continuous,
            Self::Hash => SelectAlgo::Hash,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForcedJoin {
    Hash,
    Opaque,
    ZeroOm,
}

impl ForcedJoin {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "hash" => Self::Hash,
            "opaque" => Self::Opaque,
            "zero-om" => Self::ZeroOm,
            _ => return None,
        })
    }

    fn algo(self) -> JoinAlgo {
        match self {
            Self::Hash => JoinAlgo::Hash,
            Self::Opaque => JoinAlgo::Opaque,
            Self::ZeroOm => JoinAlgo::ZeroOm,
        }
    }
}

/// What one statement admits to having done: the leakage contract's
/// quantities and nothing else.
#[derive(Debug, Clone)]
pub struct PlanReport {
    pub statement: &'static str,
    /// Logical-plan fingerprint (shape and table names).
    pub shape: String,
    /// Physical algorithm tag.
    pub algorithm: String,
    /// Input tables with their public sizes.
    pub tables: Vec<(String, u64)>,
    /// Declared result-region size (|R|); 0 for statements without one.
    pub declared_rows: u64,
    /// Rows actually delivered to the client.
    pub returned_rows: u64,
    /// Untrusted accesses this statement appended.
    pub trace_events: u64,
}

impl std::fmt::Display for PlanReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} algorithm={} tables={:?} declared={} returned={} events={}",
            self.statement,
            self.shape,
            self.algorithm,
            self.tables,
            self.declared_rows,
            self.returned_rows,
            self.trace_events
        )
    }
}

#[derive(Debug, Clone)]
pub struct QueryOutput {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub report: PlanReport,
}

pub struct Database {
    mem: MemoryEngine,
    tables: BTreeMap<String, Table>,
    config: EngineConfig,
    /// Generation of the state currently loaded.
    generation: u64,
    /// Highest generation this session has produced or accepted; snapshots
    /// below it are rollbacks.
    last_seen: u64,
}

impl CatalogView for Database {
    fn schema_of(&self, table: &str) -> Option<&Schema> {
        self.tables.get(table).map(|t| &t.schema)
    }
}

impl Database {
    pub fn new(config: EngineConfig) -> Self {
        let mem = MemoryEngine::new(config.oblivious_memory_bytes, Some(config.cipher_seed));
        Self {
            mem,
            tables: BTreeMap::new(),
            config,
            generation: 0,
            last_seen: 0,
        }
    }

    pub fn mem(&mut self) -> &mut MemoryEngine {
        &mut self.mem
    }

    pub fn mem_ref(&self) -> &MemoryEngine {
        &self.mem
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }

    pub fn table_mut(&mut self, name: &str) -> Option<&mut Table> {
        self.tables.get_mut(name)
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Parse, bind, and execute one statement.
    pub fn run_sql(&mut self, text: &str, hints: &ExecHints) -> Result<QueryOutput> {
        let ast = parse_sql(text)?;
        let plan = bind(&ast, self)?;
        self.execute(&plan, hints)
    }

    pub fn execute(&mut self, plan: &LogicalPlan, hints: &ExecHints) -> Result<QueryOutput> {
        let start_events = self.mem.trace().seq();
        match plan {
            LogicalPlan::CreateTable {
                name,
                schema,
                method,
                key_col,
                capacity,
            } => {
                if self.tables.contains_key(name) {
                    return Err(EngineError::TableExists(name.clone()));
                }
                self.mem.trace_mut().mark(format!("create:{name}"));
                let table = Table::create(
                    &mut self.mem,
                    name,
                    schema.clone(),
                    *method,
                    *capacity,
                    *key_col,
                    self.config.oram_recursion,
                    self.config.block_size,
                )?;
                self.tables.insert(name.clone(), table);
                Ok(QueryOutput {
                    columns: Vec::new(),
                    rows: Vec::new(),
                    report: PlanReport {
                        statement: "create",
                        shape: format!("create({name})"),
                        algorithm: "create".into(),
                        tables: vec![(name.clone(), 0)],
                        declared_rows: 0,
                        returned_rows: 0,
                        trace_events: self.mem.trace().seq() - start_events,
                    },
                })
            }
            LogicalPlan::Insert { table, rows } => {
                let t = self
                    .tables
                    .get_mut(table)
                    .ok_or_else(|| EngineError::UnknownTable(table.clone()))?;
                self.mem.trace_mut().mark(format!("insert:{table}"));
                let fast = self.config.fast_insert;
                for row in rows {
                    t.insert(&mut self.mem, row, fast)?;
                }
                let live = t.live_rows();
                Ok(QueryOutput {
                    columns: Vec::new(),
                    rows: Vec::new(),
                    report: PlanReport {
                        statement: "insert",
                        shape: format!("insert({table})"),
                        algorithm: if !t.method().has_flat() {
                            "index-insert".into()
                        } else if fast {
                            "fast-insert".into()
                        } else {
                            "scan-insert".into()
                        },
                        tables: vec![(table.clone(), live)],
                        declared_rows: 0,
                        returned_rows: rows.len() as u64,
                        trace_events: self.mem.trace().seq() - start_events,
                    },
                })
            }
            LogicalPlan::Mutate {
                table,
                pred,
                action,
            } => {
                let t = self
                    .tables
                    .get_mut(table)
                    .ok_or_else(|| EngineError::UnknownTable(table.clone()))?;
                let statement = match action {
                    crate::table::MutateAction::Update(_) => "update",
                    crate::table::MutateAction::Delete => "delete",
                };
                let algorithm = if t.method().has_flat() {
                    "mutate-flat"
                } else {
                    "mutate-index"
                };
                self.mem.trace_mut().mark(format!("{statement}:{table}"));
                let input = t.scan_length();
                let count = t.mutate(&mut self.mem, pred, action)?;
                Ok(QueryOutput {
                    columns: Vec::new(),
                    rows: Vec::new(),
                    report: PlanReport {
                        statement,
                        shape: format!("{statement}({table})"),
                        algorithm: algorithm.into(),
                        tables: vec![(table.clone(), input)],
                        declared_rows: 0,
                        returned_rows: count,
                        trace_events: self.mem.trace().seq() - start_events,
                    },
                })
            }
            LogicalPlan::Query(q) => {
                let mut out = match &q.join {
                    None => self.exec_single(q, hints)?,
                    Some(join) => self.exec_join(q, join, hints)?,
                };
                out.report.trace_events = self.mem.trace().seq() - start_events;
                Ok(out)
            }
        }
    }

    // ----- single-table queries ----------------------------------------

    fn exec_single(&mut self, q: &QueryPlan, hints: &ExecHints) -> Result<QueryOutput> {
        let schema = self
            .tables
            .get(&q.table)
            .ok_or_else(|| EngineError::UnknownTable(q.table.clone()))?
            .schema
            .clone();
        match &q.shape {
            QueryShape::Project(cols) => self.exec_select(q, cols, &schema, hints),
            QueryShape::Aggregate(specs) => {
                let t = self.tables.get_mut(&q.table).unwrap();
                let input = t.scan_length();
                self.mem
                    .trace_mut()
                    .mark(format!("aggregate:{}", q.table));
                let mut src = RowSource::for_table(t);
                let values = aggregate(&mut self.mem, &mut src, &schema, &q.pred, specs)?;
                Ok(QueryOutput {
                    columns: agg_columns(specs, &schema),
                    rows: vec![values.into_iter().map(|v| v.to_value()).collect()],
                    report: PlanReport {
                        statement: "select",
                        shape: q.shape_tag(),
                        algorithm: "scan-aggregate".into(),
                        tables: vec![(q.table.clone(), input)],
                        declared_rows: 1,
                        returned_rows: 1,
                        trace_events: 0,
                    },
                })
            }
            QueryShape::GroupBy { col, specs } => {
                let t = self.tables.get_mut(&q.table).unwrap();
                let input = t.scan_length();
                self.mem
                    .trace_mut()
                    .mark(format!("group-aggregate:{}", q.table));
                let mut src = RowSource::for_table(t);
                let groups =
                    group_aggregate(&mut self.mem, &mut src, &schema, &q.pred, *col, specs)?;
                let returned = groups.len() as u64;
                Ok(QueryOutput {
                    columns: group_columns(*col, specs, &schema),
                    rows: groups
                        .into_iter()
                        .map(|(key, vals)| {
                            std::iter::once(key)
                                .chain(vals.into_iter().map(|v| v.to_value()))
                                .collect()
                        })
                        .collect(),
                    report: PlanReport {
                        statement: "select",
                        shape: q.shape_tag(),
                        algorithm: "scan-group-aggregate".into(),
                        tables: vec![(q.table.clone(), input)],
                        declared_rows: returned,
                        returned_rows: returned,
                        trace_events: 0,
                    },
                })
            }
        }
    }

    /// Row-returning select: plan (or derive, under padding), run the
    /// operator, materialize, project.
    fn exec_select(
        &mut self,
        q: &QueryPlan,
        cols: &[usize],
        schema: &Schema,
        hints: &ExecHints,
    ) -> Result<QueryOutput> {
        let pad = if self.config.padding_mode {
            let target = q.pad.or_else(|| self.config.pad_target_for(&q.table));
            Some(target.ok_or_else(|| {
                EngineError::Config(format!("padding_mode needs a pad target for {}", q.table))
            })?)
        } else {
            q.pad
        };
        let t = self.tables.get_mut(&q.table).unwrap();
        let input = t.scan_length();
        let min_block = self.config.block_size;
        let recursion = self.config.oram_recursion;

        let (algo, declared) = match pad {
            Some(target) => {
                // Sizes only: no statistics pass, no contiguity branch.
                let buffer_rows = self.mem.budget().free() / schema.row_size() as u64;
                let algo = match hints.force_select {
                    Some(f) => f.algo(),
                    None => pick_select_algo(
                        target,
                        false,
                        input,
                        buffer_rows,
                        t.method().has_flat(),
                        true,
                        &self.config.planner,
                    ),
                };
                (algo, target)
            }
            None => {
                let plan: SelectPlan =
                    plan_select(&mut self.mem, t, &q.pred, None, &self.config.planner)?;
                let algo = match hints.force_select {
                    Some(f) => f.algo(),
                    None => plan.algo,
                };
                (algo, plan.matches)
            }
        };

        self.mem
            .trace_mut()
            .mark(format!("select:{}:{}:{}", algo.name(), q.table, declared));
        let result = match &algo {
            SelectAlgo::IndexRange { lo, hi } => {
                let index = t.index_mut().expect("index-range plan over indexed table");
                select_index_range(&mut self.mem, index, schema, lo, hi, declared, min_block)?
            }
            _ => {
                let mut src = RowSource::for_table(t);
                match algo {
                    SelectAlgo::Naive => select_naive(
                        &mut self.mem,
                        &mut src,
                        schema,
                        &q.pred,
                        declared,
                        recursion,
                        min_block,
                    )?,
                    SelectAlgo::Small => {
                        select_small(&mut self.mem, &mut src, schema, &q.pred, declared, min_block)?
                    }
                    SelectAlgo::Large => {
                        select_large(&mut self.mem, &mut src, schema, &q.pred, min_block)?
                    }
                    SelectAlgo::Continuous => select_continuous(
                        &mut self.mem,
                        &mut src,
                        schema,
                        &q.pred,
                        declared,
                        min_block,
                    )?,
                    SelectAlgo::Hash => {
                        select_hash(&mut self.mem, &mut src, schema, &q.pred, declared, min_block)?
                    }
                    SelectAlgo::IndexRange { .. } => unreachable!(),
                }
            }
        };

        let declared_rows = result.declared;
        let rows = result.materialize(&mut self.mem)?;
        result.free(&mut self.mem)?;
        let rows: Vec<Vec<Value>> = rows.into_iter().map(|r| project(&r, cols)).collect();
        let returned_rows = rows.len() as u64;
        Ok(QueryOutput {
            columns: cols
                .iter()
                .map(|&c| schema.columns()[c].name.clone())
                .collect(),
            rows,
            report: PlanReport {
                statement: "select",
                shape: q.shape_tag(),
                algorithm: algo.name().into(),
                tables: vec![(q.table.clone(), input)],
                declared_rows,
                returned_rows,
                trace_events: 0,
            },
        })
    }

    // ----- joins ---------------------------------------------------------

    fn exec_join(
        &mut self,
        q: &QueryPlan,
        join: &JoinSpec,
        hints: &ExecHints,
    ) -> Result<QueryOutput> {
        let t1 = self
            .tables
            .get(&q.table)
            .ok_or_else(|| EngineError::UnknownTable(q.table.clone()))?;
        let t2 = self
            .tables
            .get(&join.table)
            .ok_or_else(|| EngineError::UnknownTable(join.table.clone()))?;
        if !t1.method().has_flat() || !t2.method().has_flat() {
            return Err(EngineError::TypeError(
                "joins scan flat storage; both tables need it".into(),
            ));
        }
        let joined = t1.schema.joined(&q.table, &t2.schema, &join.table)?;
        let n1 = t1.live_rows();
        let n2 = t2.live_rows();
        let budget_rows = self.mem.budget().free() / t1.schema.row_size() as u64;
        let algo = match hints.force_join {
            Some(f) => f.algo(),
            None => plan_join(n1, n2, budget_rows, &self.config.planner),
        };
        self.mem.trace_mut().mark(format!(
            "join:{}:{}:{}:{}x{}",
            algo.name(),
            q.table,
            join.table,
            n1,
            n2
        ));
        let min_block = self.config.block_size;
        let result = match algo {
            JoinAlgo::Hash => hash_join(
                &mut self.mem,
                t1,
                join.left_col,
                t2,
                join.right_col,
                &joined,
                min_block,
            )?,
            JoinAlgo::Opaque | JoinAlgo::ZeroOm => opaque_join(
                &mut self.mem,
                t1,
                join.left_col,
                t2,
                join.right_col,
                &joined,
                min_block,
                algo == JoinAlgo::ZeroOm,
            )?,
        };
        let declared_rows = result.declared;
        let algorithm = format!("{}-join", algo.name());
        let report = PlanReport {
            statement: "select",
            shape: q.shape_tag(),
            algorithm,
            tables: vec![(q.table.clone(), n1), (join.table.clone(), n2)],
            declared_rows,
            returned_rows: 0,
            trace_events: 0,
        };

        let mut out = match &q.shape {
            QueryShape::Project(cols) => {
                let rows = result.materialize(&mut self.mem)?;
                result.free(&mut self.mem)?;
                let rows: Vec<Vec<Value>> = rows
                    .into_iter()
                    .filter(|r| q.pred.eval(r))
                    .map(|r| project(&r, cols))
                    .collect();
                QueryOutput {
                    columns: cols
                        .iter()
                        .map(|&c| joined.columns()[c].name.clone())
                        .collect(),
                    rows,
                    report,
                }
            }
            QueryShape::Aggregate(specs) => {
                let mut src = RowSource::for_result(&result);
                let values = aggregate(&mut self.mem, &mut src, &joined, &q.pred, specs)?;
                result.free(&mut self.mem)?;
                QueryOutput {
                    columns: agg_columns(specs, &joined),
                    rows: vec![values.into_iter().map(|v| v.to_value()).collect()],
                    report,
                }
            }
            QueryShape::GroupBy { col, specs } => {
                let mut src = RowSource::for_result(&result);
                let groups =
                    group_aggregate(&mut self.mem, &mut src, &joined, &q.pred, *col, specs)?;
                result.free(&mut self.mem)?;
                QueryOutput {
                    columns: group_columns(*col, specs, &joined),
                    rows: groups
                        .into_iter()
                        .map(|(key, vals)| {
                            std::iter::once(key)
                                .chain(vals.into_iter().map(|v| v.to_value()))
                                .collect()
                        })
                        .collect(),
                    report,
                }
            }
        };
        out.report.returned_rows = out.rows.len() as u64;
        Ok(out)
    }

    // ----- bulk load -----------------------------------------------------

    /// Load CSV bytes into a table. Fresh flat tables take the single-write
    /// fast path per row; everything else goes through the oblivious insert.
    pub fn load_csv_bytes(&mut self, table: &str, bytes: &[u8]) -> Result<u64> {
        let t = self
            .tables
            .get_mut(table)
            .ok_or_else(|| EngineError::UnknownTable(table.to_string()))?;
        let rows = crate::csvio::parse_csv(&t.schema, bytes)?;
        let fast = t.method().has_flat() && t.live_rows() == 0 && t.fast_insert_ready();
        self.mem.trace_mut().mark(format!("load:{table}"));
        for row in &rows {
            t.insert(&mut self.mem, row, fast)?;
        }
        Ok(rows.len() as u64)
    }

    pub fn load_csv(&mut self, table: &str, path: &std::path::Path) -> Result<u64> {
        let bytes = std::fs::read(path)?;
        self.load_csv_bytes(table, &bytes)
    }

    // ----- sealed persistence ---------------------------------------------

    /// Seal the whole database — catalog, region store, cipher and budget
    /// bookkeeping — under the next generation.
    pub fn seal_to_bytes(&mut self) -> Result<Vec<u8>> {
        let generation = self.last_seen + 1;
        let image = SnapshotImageRef {
            generation,
            nonce_counter: self.mem.cipher().nonce_counter(),
            budget_used: self.mem.budget().used(),
            regions: self.mem.snapshot_regions(),
            tables: self.tables.iter().collect(),
        };
        let plain = bincode::serialize(&image)
            .map_err(|e| EngineError::SnapshotCorrupt(e.to_string()))?;
        let sealed = self.mem.cipher().seal_snapshot(generation, &plain);
        let mut out = Vec::with_capacity(4 + sealed.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&sealed);
        self.generation = generation;
        self.last_seen = generation;
        Ok(out)
    }

    pub fn seal(&mut self, path: &std::path::Path) -> Result<()> {
        let bytes = self.seal_to_bytes()?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// Replace this session's state with a snapshot, refusing generations
    /// below any this session has seen.
    pub fn open_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let image = self.decode_snapshot(bytes)?;
        if image.generation < self.last_seen {
            return Err(EngineError::RollbackDetected {
                found: image.generation,
                latest: self.last_seen,
            });
        }
        self.adopt(image)
    }

    /// Authenticate and decode a snapshot without adopting it.
    fn decode_snapshot(&self, bytes: &[u8]) -> Result<SnapshotImage> {
        let body = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| EngineError::SnapshotCorrupt("bad magic".into()))?;
        let plain = self
            .mem
            .cipher()
            .open_snapshot(body)
            .ok_or_else(|| EngineError::SnapshotCorrupt("authentication failed".into()))?;
        bincode::deserialize(&plain).map_err(|e| EngineError::SnapshotCorrupt(e.to_string()))
    }

    fn adopt(&mut self, image: SnapshotImage) -> Result<()> {
        let mut mem =
            MemoryEngine::new(self.config.oblivious_memory_bytes, Some(self.config.cipher_seed));
        mem.budget_mut().charge(image.budget_used)?;
        mem.cipher_mut().set_nonce_counter(image.nonce_counter);
        mem.restore_regions(image.regions);
        self.mem = mem;
        self.tables = image.tables.into_iter().collect();
        self.generation = image.generation;
        self.last_seen = self.last_seen.max(image.generation);
        Ok(())
    }

    pub fn open(&mut self, path: &std::path::Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.open_bytes(&bytes)
    }
}

const MAGIC: &[u8; 4] = b"VDB1";

/// Borrowing twin of `SnapshotImage` so sealing doesn't clone the catalog;
/// bincode encodes both identically.
#[derive(Serialize)]
struct SnapshotImageRef<'a> {
    generation: u64,
    nonce_counter: u64,
    budget_used: u64,
    regions: Vec<crate::memory::RegionSnapshot>,
    tables: Vec<(&'a String, &'a Table)>,
}

#[derive(Deserialize)]
struct SnapshotImage {
    generation: u64,
    nonce_counter: u64,
    budget_used: u64,
    regions: Vec<crate::memory::RegionSnapshot>,
    tables: Vec<(String, Table)>,
}

fn project(row: &[Value], cols: &[usize]) -> Vec<Value> {
    cols.iter().map(|&c| row[c].clone()).collect()
}

fn spec_name(spec: &AggSpec, schema: &Schema) -> String {
    let func = match spec.func {
        crate::rows::AggFunc::Count => "count",
        crate::rows::AggFunc::Sum => "sum",
        crate::rows::AggFunc::Min => "min",
        crate::rows::AggFunc::Max => "max",
        crate::rows::AggFunc::Avg => "avg",
    };
    match spec.col {
        Some(c) => format!("{func}({})", schema.columns()[c].name),
        None => format!("{func}(*)"),
    }
}

fn agg_columns(specs: &[AggSpec], schema: &Schema) -> Vec<String> {
    specs.iter().map(|s| spec_name(s, schema)).collect()
}

fn group_columns(col: usize, specs: &[AggSpec], schema: &Schema) -> Vec<String> {
    std::iter::once(schema.columns()[col].name.clone())
        .chain(specs.iter().map(|s| spec_name(s, schema)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{trace_diff, TraceDiff};

    fn db() -> Database {
        Database::new(EngineConfig::default())
    }

    fn db_with(overrides: &str) -> Database {
        Database::new(EngineConfig::parse(overrides).unwrap())
    }

    fn run(d: &mut Database, sql: &str) -> QueryOutput {
        d.run_sql(sql, &ExecHints::default()).unwrap()
    }

    fn ints(rows: &[Vec<i64>]) -> Vec<Vec<Value>> {
        rows.iter()
            .map(|r| r.iter().map(|&v| Value::Int(v)).collect())
            .collect()
    }

    #[test]
    fn end_to_end_create_insert_select() {
        let mut d = db();
        run(&mut d, "CREATE TABLE t (k INT, v INT) WITH CAPACITY = 16");
        run(&mut d, "INSERT INTO t VALUES (1, 10), (2, 20), (3, 30)");
        let out = run(&mut d, "SELECT k, v FROM t WHERE v >= 20");
        assert_eq!(out.columns, vec!["k", "v"]);
        assert_eq!(out.rows, ints(&[vec![2, 20], vec![3, 30]]));
        assert_eq!(out.report.statement, "select");
        assert_eq!(out.report.declared_rows, 2);
        assert_eq!(out.report.tables, vec![("t".to_string(), 16)]);
        assert!(out.report.trace_events > 0);
        // The planner's scan (16), the small select (16 reads + 2 result
        // writes), and the materialize pass over the declared prefix (2).
        assert_eq!(out.report.trace_events, 16 + 16 + 2 + 2);
        assert_eq!(out.report.algorithm, "small");
    }

    #[test]
    fn update_delete_and_order_of_operations() {
        let mut d = db();
        run(&mut d, "CREATE TABLE t (k INT, v INT) WITH CAPACITY = 8");
        run(&mut d, "INSERT INTO t VALUES (1, 1), (2, 2), (3, 3)");
        let out = run(&mut d, "UPDATE t SET v = v + 10 WHERE k >= 2");
        assert_eq!(out.report.returned_rows, 2);
        let out = run(&mut d, "DELETE FROM t WHERE v = 12");
        assert_eq!(out.report.returned_rows, 1);
        let out = run(&mut d, "SELECT * FROM t");
        assert_eq!(out.rows, ints(&[vec![1, 1], vec![3, 13]]));
    }

    #[test]
    fn aggregate_and_group_by() {
        let mut d = db();
        run(&mut d, "CREATE TABLE t (g INT, v INT) WITH CAPACITY = 16");
        run(
            &mut d,
            "INSERT INTO t VALUES (1, 5), (1, 7), (2, 1), (2, 3), (2, 2)",
        );
        let out = run(&mut d, "SELECT COUNT(*), SUM(v), AVG(v) FROM t WHERE g = 2");
        assert_eq!(out.columns, vec!["count(*)", "sum(v)", "avg(v)"]);
        assert_eq!(out.rows, ints(&[vec![3, 6, 2]]));
        assert_eq!(out.report.algorithm, "scan-aggregate");

        let out = run(&mut d, "SELECT g, MAX(v) FROM t GROUP BY g");
        assert_eq!(out.columns, vec!["g", "max(v)"]);
        assert_eq!(out.rows, ints(&[vec![1, 7], vec![2, 3]]));
    }

    #[test]
    fn join_project_filter_and_aggregate() {
        let mut d = db();
        run(&mut d, "CREATE TABLE p (id INT, w INT) WITH CAPACITY = 8");
        run(&mut d, "CREATE TABLE f (pid INT, x INT) WITH CAPACITY = 8");
        run(&mut d, "INSERT INTO p VALUES (1, 100), (2, 200)");
        run(
            &mut d,
            "INSERT INTO f VALUES (1, 7), (2, 8), (2, 9), (5, 1)",
        );
        let out = run(
            &mut d,
            "SELECT f.x, p.w FROM p JOIN f ON p.id = f.pid WHERE p.w = 200",
        );
        assert_eq!(out.columns, vec!["f.x", "p.w"]);
        let mut rows = out.rows.clone();
        rows.sort();
        assert_eq!(rows, ints(&[vec![8, 200], vec![9, 200]]));
        assert_eq!(out.report.algorithm, "hash-join");
        assert_eq!(out.report.tables.len(), 2);
        // Declared join output is |T1|·|T2| region rows for the hash join.
        assert_eq!(out.report.declared_rows, 64);

        let out = run(
            &mut d,
            "SELECT COUNT(*), SUM(x) FROM p JOIN f ON p.id = f.pid",
        );
        assert_eq!(out.rows, ints(&[vec![3, 24]]));

        let out = run(
            &mut d,
            "SELECT pid, COUNT(*) FROM p JOIN f ON p.id = f.pid GROUP BY pid",
        );
        assert_eq!(out.rows, ints(&[vec![1, 1], vec![2, 2]]));
    }

    #[test]
    fn forced_join_algorithms_agree() {
        let mut d = db();
        run(&mut d, "CREATE TABLE p (id INT, w INT) WITH CAPACITY = 8");
        run(&mut d, "CREATE TABLE f (pid INT, x INT) WITH CAPACITY = 8");
        run(&mut d, "INSERT INTO p VALUES (1, 100), (2, 200), (3, 300)");
        run(&mut d, "INSERT INTO f VALUES (3, 1), (1, 2), (3, 3)");
        let sql = "SELECT p.id, f.x FROM p JOIN f ON p.id = f.pid";
        let mut results = Vec::new();
        for forced in [ForcedJoin::Hash, ForcedJoin::Opaque, ForcedJoin::ZeroOm] {
            let out = d
                .run_sql(
                    sql,
                    &ExecHints {
                        force_join: Some(forced),
                        ..Default::default()
                    },
                )
                .unwrap();
            let mut rows = out.rows;
            rows.sort();
            results.push((out.report.algorithm.clone(), rows));
        }
        assert_eq!(results[0].1, results[1].1);
        assert_eq!(results[1].1, results[2].1);
        assert_eq!(results[0].0, "hash-join");
        assert_eq!(results[1].0, "opaque-join");
        assert_eq!(results[2].0, "zero-om-join");
    }

    #[test]
    fn indexed_table_uses_range_select() {
        let mut d = db();
        run(
            &mut d,
            "CREATE TABLE i (k INT, v INT) WITH STORAGE = INDEX(k), CAPACITY = 32",
        );
        for n in 0..10 {
            run(&mut d, &format!("INSERT INTO i VALUES ({n}, {})", n * n));
        }
        let out = run(&mut d, "SELECT k, v FROM i WHERE k >= 3 AND k < 6");
        assert_eq!(out.report.algorithm, "index-range");
        assert_eq!(out.rows, ints(&[vec![3, 9], vec![4, 16], vec![5, 25]]));

        // A BOTH table at this tiny scale prefers the flat pass for the
        // same query shape, and still answers identically.
        run(
            &mut d,
            "CREATE TABLE b (k INT, v INT) WITH STORAGE = BOTH(k), CAPACITY = 32",
        );
        for n in 0..10 {
            run(&mut d, &format!("INSERT INTO b VALUES ({n}, {})", n * n));
        }
        let out = run(&mut d, "SELECT k, v FROM b WHERE k >= 3 AND k < 6");
        assert_eq!(out.report.algorithm, "small");
        assert_eq!(out.rows, ints(&[vec![3, 9], vec![4, 16], vec![5, 25]]));
    }

    #[test]
    fn csv_load_fast_path_and_trace_shape() {
        let mut d = db();
        run(&mut d, "CREATE TABLE t (id INT, day DATE) WITH CAPACITY = 8");
        d.mem().trace_mut().take();
        let n = d
            .load_csv_bytes("t", b"id,day\n1,1970-01-02\n2,1970-01-03\n")
            .unwrap();
        assert_eq!(n, 2);
        // Fresh flat table: one write per row.
        assert_eq!(d.mem().trace_mut().take().len(), 2);
        let out = run(&mut d, "SELECT * FROM t WHERE day = '1970-01-03'");
        assert_eq!(out.rows, vec![vec![Value::Int(2), Value::Date(2)]]);
        // Loading again is no longer fresh: scan inserts.
        d.mem().trace_mut().take();
        d.load_csv_bytes("t", b"id,day\n3,1970-01-04\n").unwrap();
        assert_eq!(d.mem().trace_mut().take().len(), 16);
    }

    #[test]
    fn padding_mode_hides_selectivity() {
        let run_padded = |values: &[i64], cutoff: i64| {
            let mut d = db_with("padding_mode = true\npad_target = 12\n");
            run(&mut d, "CREATE TABLE t (v INT) WITH CAPACITY = 8");
            let vals = values
                .iter()
                .map(|v| format!("({v})"))
                .collect::<Vec<_>>()
                .join(", ");
            run(&mut d, &format!("INSERT INTO t VALUES {vals}"));
            d.mem().trace_mut().take();
            let out = run(&mut d, &format!("SELECT v FROM t WHERE v < {cutoff}"));
            (out, d.mem().trace_mut().take())
        };
        // 1-of-8 vs 7-of-8 selectivity, same plan and pad target.
        let (lo, trace_lo) = run_padded(&[5, 9, 9, 9, 9, 9, 9, 9], 6);
        let (hi, trace_hi) = run_padded(&[1, 2, 3, 4, 5, 6, 7, 9], 8);
        assert_eq!(lo.rows.len(), 1);
        assert_eq!(hi.rows.len(), 7);
        assert_eq!(lo.report.declared_rows, 12);
        assert_eq!(hi.report.declared_rows, 12);
        assert_eq!(trace_diff(&trace_lo, &trace_hi), TraceDiff::Equal);
    }

    #[test]
    fn seal_open_round_trip_and_rollback() {
        let mut d = db();
        run(&mut d, "CREATE TABLE t (k INT, v INT) WITH CAPACITY = 8");
        run(&mut d, "INSERT INTO t VALUES (1, 10), (2, 20)");
        let snap1 = d.seal_to_bytes().unwrap();
        run(&mut d, "INSERT INTO t VALUES (3, 30)");
        let snap2 = d.seal_to_bytes().unwrap();

        // Round trip: reopen the latest and query.
        d.open_bytes(&snap2).unwrap();
        let out = run(&mut d, "SELECT COUNT(*) FROM t");
        assert_eq!(out.rows, ints(&[vec![3]]));

        // Replaying the older snapshot is a rollback.
        let err = d.open_bytes(&snap1).unwrap_err();
        assert!(matches!(err, EngineError::RollbackDetected { found: 1, latest: 2 }));
        assert!(err.is_integrity_violation());

        // Tampering fails authentication.
        let mut bad = snap2.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 1;
        assert!(matches!(
            d.open_bytes(&bad).unwrap_err(),
            EngineError::SnapshotCorrupt(_)
        ));
        assert!(matches!(
            d.open_bytes(&snap2[..snap2.len() - 3]).unwrap_err(),
            EngineError::SnapshotCorrupt(_)
        ));
        assert!(matches!(
            d.open_bytes(b"nope").unwrap_err(),
            EngineError::SnapshotCorrupt(_)
        ));

        // A fresh session (new last-seen floor) accepts either snapshot.
        let mut fresh = db();
        fresh.open_bytes(&snap1).unwrap();
        let out = run(&mut fresh, "SELECT COUNT(*) FROM t");
        assert_eq!(out.rows, ints(&[vec![2]]));
    }

    #[test]
    fn seal_open_preserves_indexed_tables() {
        let mut d = db();
        run(
            &mut d,
            "CREATE TABLE i (k INT, v INT) WITH STORAGE = INDEX(k), CAPACITY = 16",
        );
        for n in [5, 3, 8, 1] {
            run(&mut d, &format!("INSERT INTO i VALUES ({n}, {})", n * 2));
        }
        let snap = d.seal_to_bytes().unwrap();
        let mut d2 = db();
        d2.open_bytes(&snap).unwrap();
        let out = run(&mut d2, "SELECT k FROM i WHERE k >= 3 AND k <= 5");
        assert_eq!(out.report.algorithm, "index-range");
        assert_eq!(out.rows, ints(&[vec![3], vec![5]]));
        // And the chain order survives too.
        let out = run(&mut d2, "SELECT COUNT(*) FROM i");
        assert_eq!(out.rows, ints(&[vec![4]]));
    }

    #[test]
    fn wrong_session_key_cannot_open() {
        let mut d = db_with("cipher_seed = 1\n");
        run(&mut d, "CREATE TABLE t (k INT) WITH CAPACITY = 4");
        let snap = d.seal_to_bytes().unwrap();
        let mut other = db_with("cipher_seed = 2\n");
        assert!(matches!(
            other.open_bytes(&snap).unwrap_err(),
            EngineError::SnapshotCorrupt(_)
        ));
    }

    #[test]
    fn identical_sessions_have_identical_traces() {
        let script = |d: &mut Database| {
            run(d, "CREATE TABLE t (k INT, v INT) WITH CAPACITY = 16");
            run(d, "INSERT INTO t VALUES (1, 10), (2, 20), (3, 30), (4, 40)");
            run(d, "SELECT v FROM t WHERE k <= 2");
            run(d, "UPDATE t SET v = 0 WHERE k = 4");
        };
        let mut a = db();
        let mut b = db();
        script(&mut a);
        script(&mut b);
        let ta = a.mem().trace_mut().take();
        let tb = b.mem().trace_mut().take();
        assert!(!ta.is_empty());
        assert_eq!(trace_diff(&ta, &tb), TraceDiff::Equal);
    }

    #[test]
    fn report_marks_label_every_phase() {
        let mut d = db();
        run(&mut d, "CREATE TABLE t (k INT) WITH CAPACITY = 4");
        d.mem().trace_mut().take();
        run(&mut d, "INSERT INTO t VALUES (1)");
        run(&mut d, "SELECT * FROM t WHERE k = 1");
        let marks: Vec<String> = d
            .mem_ref()
            .trace()
            .marks()
            .iter()
            .map(|(_, l)| l.clone())
            .collect();
        assert!(marks.iter().any(|m| m == "insert:t"), "{marks:?}");
        assert!(marks.iter().any(|m| m.starts_with("select:")), "{marks:?}");
    }
}
