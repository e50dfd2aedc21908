//! veildb: an oblivious relational query engine.
//!
//! Everything outside a small trusted memory budget is treated as untrusted
//! storage: blocks are sealed with an authenticated cipher, every access is
//! recorded in a trace, and operators are built so the trace depends only on
//! table sizes and the chosen plan, never on row contents.

pub mod budget;
pub mod config;
pub mod crypto;
pub mod csvio;
pub mod exec;
pub mod error;
pub mod harness;
pub mod memory;
pub mod btree;
pub mod oram;
pub mod ops;
pub mod planner;
pub mod rows;
pub mod sql;
pub mod table;
pub mod trace;

pub use error::{EngineError, Result};
