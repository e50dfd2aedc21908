//! Oblivious enclave memory accounting.
//!
//! The budget models the scarce enclave memory whose contents and access
//! pattern are hidden from the adversary. Buffers charged here never produce
//! trace events; what the budget controls is how much of them an operator
//! may hold at once, which in turn fixes pass counts and chunk sizes.
//! Long-lived charges are ORAM position maps; operators take transient
//! charges for scan buffers and chunk hash tables and release them on
//! completion.

use crate::error::{EngineError, Result};

#[derive(Debug, Clone)]
pub struct Budget {
    total: u64,
    used: u64,
}

impl Budget {
    pub fn new(total_bytes: u64) -> Self {
        Self {
            total: total_bytes,
            used: 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn free(&self) -> u64 {
        self.total - self.used
    }

    pub fn charge(&mut self, bytes: u64) -> Result<()> {
        if bytes > self.free() {
            return Err(EngineError::BudgetExceeded {
                needed: bytes,
                available: self.free(),
            });
        }
        self.used += bytes;
        Ok(())
    }

    pub fn release(&mut self, bytes: u64) {
        debug_assert!(bytes <= self.used, "releasing more than charged");
        self.used = self.used.saturating_sub(bytes);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charge_and_release() {
        let mut b = Budget::new(100);
        b.charge(60).unwrap();
        assert_eq!(b.free(), 40);
        let err = b.charge(41).unwrap_err();
        assert!(matches!(
            err,
            EngineError::BudgetExceeded {
                needed: 41,
                available: 40
            }
        ));
        b.release(60);
        assert_eq!(b.free(), 100);
    }
}
