//! Engine configuration.
//!
//! Config files are strict `key = value` lines; `#` starts a full-line
//! comment. Unknown keys, duplicate keys, and malformed values are errors
//! with line numbers, so a typo can't silently fall back to a default.
//!
//! The cipher seed defaults to a fixed value: the test profile derives all
//! keys and randomness deterministically so paired runs and reopened
//! snapshots agree byte for byte. A deployment would feed a sealed secret
//! here instead.

use std::collections::BTreeMap;

use crate::error::{EngineError, Result};
use crate::planner::PlannerConfig;

pub const DEFAULT_OBLIVIOUS_MEMORY: u64 = 8 * 1024 * 1024;
pub const DEFAULT_CIPHER_SEED: u64 = 42;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Enclave-side scratch budget in bytes (symbol S).
    pub oblivious_memory_bytes: u64,
    /// Minimum untrusted block payload size; 0 means row-sized blocks.
    pub block_size: u32,
    /// Store ORAM position maps in a second ORAM instead of flat in the
    /// budget.
    pub oram_recursion: bool,
    /// Inflate select results to the pad target and plan from sizes only.
    pub padding_mode: bool,
    /// Constant-time flat inserts: append at the saved high-water mark
    /// instead of scanning for a hole. Meant for tables with few deletions —
    /// slots freed below the mark are never reclaimed, so a full table can
    /// report `TableFull` while holes remain.
    pub fast_insert: bool,
    /// Default pad target; per-table overrides take precedence.
    pub pad_target: Option<u64>,
    pub pad_targets: BTreeMap<String, u64>,
    pub cipher_seed: u64,
    pub planner: PlannerConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            oblivious_memory_bytes: DEFAULT_OBLIVIOUS_MEMORY,
            block_size: 0,
            oram_recursion: false,
            padding_mode: false,
            fast_insert: false,
            pad_target: None,
            pad_targets: BTreeMap::new(),
            cipher_seed: DEFAULT_CIPHER_SEED,
            planner: PlannerConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn pad_target_for(&self, table: &str) -> Option<u64> {
        self.pad_targets.get(table).copied().or(self.pad_target)
    }

    pub fn parse(text: &str) -> Result<EngineConfig> {
        let mut cfg = EngineConfig::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(cfg_err(lineno, "expected key = value"));
            };
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                return Err(cfg_err(lineno, format!("empty value for {key}")));
            }
            if let Some(prev) = seen.insert(key.to_string(), lineno) {
                return Err(cfg_err(
                    lineno,
                    format!("duplicate key {key} (first set on line {prev})"),
                ));
            }
            apply(&mut cfg, key, value, lineno)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<EngineConfig> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.oblivious_memory_bytes == 0 {
            return Err(EngineError::Config(
                "oblivious_memory_bytes must be positive".into(),
            ));
        }
        if self.padding_mode && self.pad_target.is_none() && self.pad_targets.is_empty() {
            return Err(EngineError::Config(
                "padding_mode needs pad_target (or a per-table pad_target.<table>)".into(),
            ));
        }
        let p = &self.planner;
        if !(p.large_threshold > 0.0 && p.large_threshold <= 1.0) {
            return Err(EngineError::Config(
                "planner.large_threshold must be in (0, 1]".into(),
            ));
        }
        if p.hash_join_ratio <= 0.0 || p.sort_cost_weight < 0.0 {
            return Err(EngineError::Config(
                "planner ratios must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn cfg_err(lineno: usize, msg: impl std::fmt::Display) -> EngineError {
    EngineError::Config(format!("line {lineno}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(value: &str, lineno: usize, key: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| cfg_err(lineno, format!("bad value {value:?} for {key}")))
}

fn parse_bool(value: &str, lineno: usize, key: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(cfg_err(
            lineno,
            format!("bad value {value:?} for {key}, want true or false"),
        )),
    }
}

fn apply(cfg: &mut EngineConfig, key: &str, value: &str, lineno: usize) -> Result<()> {
    match key {
        "oblivious_memory_bytes" => cfg.oblivious_memory_bytes = parse_num(value, lineno, key)?,
        "block_size" => cfg.block_size = parse_num(value, lineno, key)?,
        "oram_recursion" => cfg.oram_recursion = parse_bool(value, lineno, key)?,
        "padding_mode" => cfg.padding_mode = parse_bool(value, lineno, key)?,
        "fast_insert" => cfg.fast_insert = parse_bool(value, lineno, key)?,
        "pad_target" => cfg.pad_target = Some(parse_num(value, lineno, key)?),
        "cipher_seed" => cfg.cipher_seed = parse_num(value, lineno, key)?,
        "planner.large_threshold" => {
            cfg.planner.large_threshold = parse_num(value, lineno, key)?
        }
        "planner.small_pass_limit" => {
            cfg.planner.small_pass_limit = parse_num(value, lineno, key)?
        }
        "planner.hash_join_ratio" => cfg.planner.hash_join_ratio = parse_num(value, lineno, key)?,
        "planner.continuous_enabled" => {
            cfg.planner.continuous_enabled = parse_bool(value, lineno, key)?
        }
        "planner.sort_floor_events" => {
            cfg.planner.sort_floor_events = parse_num(value, lineno, key)?
        }
        "planner.sort_cost_weight" => {
            cfg.planner.sort_cost_weight = parse_num(value, lineno, key)?
        }
        _ => {
            if let Some(table) = key.strip_prefix("pad_target.") {
                if table.is_empty() {
                    return Err(cfg_err(lineno, "pad_target. needs a table name"));
                }
                let target = parse_num(value, lineno, key)?;
                cfg.pad_targets.insert(table.to_string(), target);
            } else {
                return Err(cfg_err(lineno, format!("unknown key {key}")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_sane() {
        let cfg = EngineConfig::default();
        assert_eq!(cfg.oblivious_memory_bytes, 8 * 1024 * 1024);
        assert_eq!(cfg.cipher_seed, 42);
        assert!(!cfg.padding_mode);
        assert!(!cfg.planner.continuous_enabled);
        cfg.validate().unwrap();
    }

    #[test]
    fn full_file_round_trip() {
        let cfg = EngineConfig::parse(
            "# engine\n\
             oblivious_memory_bytes = 65536\n\
             block_size = 128\n\
             oram_recursion = true\n\
             padding_mode = true\n\
             fast_insert = true\n\
             pad_target = 500\n\
             pad_target.orders = 2000\n\
             cipher_seed = 7\n\
             planner.large_threshold = 0.9\n\
             planner.small_pass_limit = 2\n\
             planner.hash_join_ratio = 1.5\n\
             planner.continuous_enabled = true\n\
             planner.sort_floor_events = 99\n\
             planner.sort_cost_weight = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.oblivious_memory_bytes, 65536);
        assert_eq!(cfg.block_size, 128);
        assert!(cfg.oram_recursion);
        assert!(cfg.padding_mode);
        assert!(cfg.fast_insert);
        assert_eq!(cfg.pad_target_for("orders"), Some(2000));
        assert_eq!(cfg.pad_target_for("other"), Some(500));
        assert_eq!(cfg.cipher_seed, 7);
        assert_eq!(cfg.planner.small_pass_limit, 2);
        assert!((cfg.planner.large_threshold - 0.9).abs() < 1e-12);
        assert_eq!(cfg.planner.sort_floor_events, 99);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        for (text, needle) in [
            ("mystery = 1\n", "unknown key"),
            ("block_size = 1\nblock_size = 2\n", "duplicate"),
            ("block_size\n", "key = value"),
            ("block_size = \n", "empty value"),
            ("block_size = ten\n", "bad value"),
            ("oram_recursion = yes\n", "true or false"),
            ("pad_target. = 5\n", "table name"),
        ] {
            let e = EngineConfig::parse(text).unwrap_err().to_string();
            assert!(e.contains(needle), "{text:?} -> {e}");
            assert!(e.contains("line 1") || e.contains("line 2"), "{e}");
        }
    }

    #[test]
    fn padding_requires_a_target() {
        let e = EngineConfig::parse("padding_mode = true\n").unwrap_err().to_string();
        assert!(e.contains("pad_target"), "{e}");
        EngineConfig::parse("padding_mode = true\npad_target.t = 10\n").unwrap();
    }

    #[test]
    fn threshold_bounds_checked() {
        assert!(EngineConfig::parse("planner.large_threshold = 0\n").is_err());
        assert!(EngineConfig::parse("planner.large_threshold = 1.5\n").is_err());
        assert!(EngineConfig::parse("oblivious_memory_bytes = 0\n").is_err());
    }
}
