//! Command-line driver.
//!
//! The sealed snapshot file IS the database: `create` writes it, `load`
//! and mutating `query` statements re-seal it with a bumped generation,
//! `open` verifies it and prints the catalog. The engine config (notably
//! the cipher seed, which keys the sealing) is not stored in the snapshot;
//! pass the same `--config` to every invocation that touches one database.
//!
//! Exit codes: 0 success, 1 malformed input or failed query, 2 integrity
//! violation (tampered blocks or snapshots, replays, rollbacks).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use veildb::config::EngineConfig;
use veildb::error::{EngineError, Result};
use veildb::exec::{Database, ExecHints, ForcedJoin, ForcedSelect, QueryOutput};
use veildb::harness;
use veildb::trace::{self, TraceDiff};

#[derive(Parser)]
#[command(
    name = "veildb",
    version,
    about = "Oblivious relational engine over untrusted memory"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct DbArgs {
    /// Sealed database file.
    #[arg(long)]
    db: PathBuf,
    /// Engine config file of `key = value` lines; defaults apply when
    /// omitted. Must match the config the database was created with.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create a new sealed database, optionally running setup statements.
    Create {
        #[command(flatten)]
        db: DbArgs,
        /// SQL statements to run before sealing, e.g. CREATE TABLE.
        sql: Vec<String>,
    },
    /// Load a CSV file (header row required) into an existing table.
    Load {
        #[command(flatten)]
        db: DbArgs,
        #[arg(long)]
        table: String,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Run SQL statements; result rows print to stdout as CSV.
    Query {
        #[command(flatten)]
        db: DbArgs,
        /// Write the access trace of the executed statements to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print one plan-report line per statement to stderr.
        #[arg(long)]
        report: bool,
        /// Override the select operator (naive|small|large|continuous|hash).
        #[arg(long, value_parser = parse_forced_select)]
        force_select: Option<ForcedSelect>,
        /// Override the join operator (hash|opaque|zero-om).
        #[arg(long, value_parser = parse_forced_join)]
        force_join: Option<ForcedJoin>,
        sql: Vec<String>,
    },
    /// Replay the mixed workloads over all storage methods; prints CSV.
    Bench {
        /// Initial table size.
        #[arg(long, default_value_t = 2000)]
        rows: u64,
        /// Operations per mix.
        #[arg(long, default_value_t = 100)]
        ops: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two exported traces; prints Equal or FirstDivergence(i).
    TraceDiff { a: PathBuf, b: PathBuf },
    /// Re-seal a database, bumping its generation.
    Seal {
        #[command(flatten)]
        db: DbArgs,
        /// Write the new snapshot here instead of in place.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify a sealed database and print its catalog.
    Open {
        #[command(flatten)]
        db: DbArgs,
    },
}

fn parse_forced_select(s: &str) -> std::result::Result<ForcedSelect, String> {
    ForcedSelect::from_name(s)
        .ok_or_else(|| format!("unknown select operator {s} (naive|small|large|continuous|hash)"))
}

fn parse_forced_join(s: &str) -> std::result::Result<ForcedJoin, String> {
    ForcedJoin::from_name(s).ok_or_else(|| format!("unknown join operator {s} (hash|opaque|zero-om)"))
}

fn main() -> ExitCode {
    // Keep exit code 2 reserved for integrity violations: usage errors
    // exit 1, while --help/--version stay 0.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_integrity_violation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<EngineConfig> {
    let cfg = match path {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn open_db(args: &DbArgs) -> Result<Database> {
    let mut db = Database::new(load_config(&args.config)?);
    db.open(&args.db)?;
    Ok(db)
}

fn csv_cell(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn print_rows(out: &QueryOutput) {
    if out.columns.is_empty() {
        return;
    }
    let header: Vec<String> = out.columns.iter().map(|c| csv_cell(c)).collect();
    println!("{}", header.join(","));
    for row in &out.rows {
        let cells: Vec<String> = row.iter().map(|v| csv_cell(&v.to_string())).collect();
        println!("{}", cells.join(","));
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Create { db: args, sql } => {
            if args.db.exists() {
                return Err(EngineError::Config(format!(
                    "refusing to overwrite existing database {}",
                    args.db.display()
                )));
            }
            let mut db = Database::new(load_config(&args.config)?);
            for stmt in &sql {
                db.run_sql(stmt, &ExecHints::default())?;
            }
            db.seal(&args.db)?;
            println!("created {} (generation {})", args.db.display(), db.generation());
            Ok(())
        }
        Cmd::Load { db: args, table, csv } => {
            let mut db = open_db(&args)?;
            let count = db.load_csv(&table, &csv)?;
            db.seal(&args.db)?;
            println!("{count}");
            Ok(())
        }
        Cmd::Query {
            db: args,
            trace: trace_out,
            report,
            force_select,
            force_join,
            sql,
        } => {
            let mut db = open_db(&args)?;
            let hints = ExecHints {
                force_select,
                force_join,
            };
            db.mem().trace_mut().take();
            let mut events = Vec::new();
            let mut mutated = false;
            for stmt in &sql {
                let out = db.run_sql(stmt, &hints)?;
                events.extend(db.mem().trace_mut().take());
                mutated |= matches!(out.report.statement, "create" | "insert" | "update" | "delete");
                print_rows(&out);
                if report {
                    eprintln!("{}", out.report);
                }
            }
            if let Some(path) = trace_out {
                std::fs::write(path, trace::export(&events))?;
            }
            if mutated {
                db.seal(&args.db)?;
            }
            Ok(())
        }
        Cmd::Bench { rows, ops, seed, out } => {
            let report = harness::bench_suite(rows, ops, seed)?;
            let csv = report.csv();
            match out {
                Some(path) => std::fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Cmd::TraceDiff { a, b } => {
            let ta = trace::parse(&std::fs::read_to_string(&a)?)?;
            let tb = trace::parse(&std::fs::read_to_string(&b)?)?;
            match trace::trace_diff(&ta, &tb) {
                TraceDiff::Equal => println!("Equal"),
                TraceDiff::FirstDivergence(i) => println!("FirstDivergence({i})"),
            }
            Ok(())
        }
        Cmd::Seal { db: args, out } => {
            let mut db = open_db(&args)?;
            let target: &Path = out.as_deref().unwrap_or(&args.db);
            db.seal(target)?;
            println!("sealed {} (generation {})", target.display(), db.generation());
            Ok(())
        }
        Cmd::Open { db: args } => {
            let db = open_db(&args)?;
            println!("generation {}", db.generation());
            let names: Vec<String> = db.table_names().map(String::from).collect();
            for name in names {
                let t = db.table(&name).unwrap();
                println!(
                    "{name}: {} live rows, capacity {}, storage {}",
                    t.live_rows(),
                    t.capacity(),
                    t.method().name()
                );
            }
            Ok(())
        }
    }
}
