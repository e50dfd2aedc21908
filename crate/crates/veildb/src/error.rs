//! Error taxonomy for the engine.
//!
//! Integrity violations (tampering, replay, rollback) are kept distinct from
//! ordinary query errors because callers exit differently on them: the CLI
//! maps integrity violations to exit code 2 and everything else to 1.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    /// Ciphertext failed authentication: any bit flip in the stored block.
    #[error("block authentication failed at region {region} address {address}")]
    MacFailure { region: u32, address: u64 },

    /// A valid ciphertext surfaced at the wrong slot: the sealed metadata
    /// names a different region or address than the one read.
    #[error("authenticated block does not belong at region {region} address {address}")]
    MisplacedBlock { region: u32, address: u64 },

    /// A valid ciphertext for this slot, but its revision predates the last
    /// write the enclave recorded: a replayed stale block.
    #[error("stale block replayed at region {region} address {address}")]
    StaleBlock { region: u32, address: u64 },

    /// Read of a slot that has never been written in this region.
    #[error("read of never-written slot at region {region} address {address}")]
    NeverWritten { region: u32, address: u64 },

    #[error("unknown region {0}")]
    UnknownRegion(u32),

    #[error("address {address} out of bounds for region {region} ({blocks} blocks)")]
    OutOfBounds { region: u32, address: u64, blocks: u64 },

    #[error("payload of {got} bytes does not fit block size {want}")]
    BlockSize { got: usize, want: u32 },

    #[error("oblivious memory budget exceeded: need {needed} bytes, {available} free")]
    BudgetExceeded { needed: u64, available: u64 },

    #[error("ORAM stash exceeded its defensive bound ({len} blocks)")]
    StashOverflow { len: usize },

    #[error("table {0} already exists")]
    TableExists(String),

    #[error("unknown table {0}")]
    UnknownTable(String),

    #[error("unknown column {0}")]
    UnknownColumn(String),

    #[error("table {0} is full")]
    TableFull(String),

    #[error("type error: {0}")]
    TypeError(String),

    /// Defensive check inside the continuous-run select: a match arrived at
    /// a block index that breaks the single contiguous run the planner
    /// promised.
    #[error("continuous select saw a non-contiguous match at block {at}")]
    ContinuityViolated { at: u64 },

    /// All probed output slots for a matching row were taken.
    #[error("hash-distributed output overflow for input row {row}")]
    HashOverflow { row: u64 },

    /// Foreign-key merge join found duplicate keys on the primary side.
    #[error("foreign-key join requires unique primary keys; duplicate found")]
    FkViolation,

    #[error("result has {live} live rows, more than pad target {target}")]
    ResultExceedsPad { live: u64, target: u64 },

    /// Snapshot carries a generation below the latest this session has seen.
    #[error("snapshot rollback detected: generation {found} is older than {latest}")]
    RollbackDetected { found: u64, latest: u64 },

    /// Snapshot bytes failed authentication or decoding.
    #[error("snapshot corrupt: {0}")]
    SnapshotCorrupt(String),

    #[error("SQL error: {0}")]
    Sql(String),

    #[error("CSV error: {0}")]
    Csv(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("trace format error: {0}")]
    TraceFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EngineError {
    /// True for errors that indicate the untrusted store (or a snapshot of
    /// it) was tampered with, as opposed to a malformed or failing query.
    pub fn is_integrity_violation(&self) -> bool {
        matches!(
            self,
            EngineError::MacFailure { .. }
                | EngineError::MisplacedBlock { .. }
                | EngineError::StaleBlock { .. }
                | EngineError::NeverWritten { .. }
                | EngineError::RollbackDetected { .. }
                | EngineError::SnapshotCorrupt(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, EngineError>;
