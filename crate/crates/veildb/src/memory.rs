//! Simulated untrusted memory with authenticated blocks and a full access
//! trace.
//!
//! The engine plays the part of the enclave; everything stored through this
//! module is what the adversary hosts and observes. Reads and writes are
//! block granular, every one appends a trace event, and every block is
//! sealed with the engine's cipher. The enclave keeps, per region, the
//! revision and row id it last wrote at each address, so replayed, moved, or
//! corrupted ciphertexts are detected and classified on read.
//!
//! Enclave-side state (the revision and row-id maps, the trace, the budget
//! ledger) is ordinary trusted memory: it produces no events and is not
//! charged against the oblivious budget. What the budget meters is operator
//! working memory, which callers charge explicitly.

use crate::budget::Budget;
use crate::crypto::{encrypted_block_size, BlockCipher};
use crate::error::{EngineError, Result};
use crate::trace::{Op, Trace};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub type RegionId = u32;

#[derive(Debug)]
struct RegionState {
    block_size: u32,
    /// Ciphertexts as the adversary stores them; slots allocate lazily on
    /// first write so huge regions cost memory proportional to use.
    blocks: Vec<Option<Box<[u8]>>>,
    /// Enclave record: revision of the last write per address, 0 = never.
    revisions: Vec<u64>,
    /// Enclave record: row id claimed by the last write per address.
    row_ids: Vec<u64>,
    freed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadBlock {
    pub payload: Vec<u8>,
    pub row_id: u64,
}

/// Deliberate fault switches for the test harness's negative controls. Not
/// reachable from any config file; a correct build never sets them.
#[derive(Debug, Default, Clone, Copy)]
pub struct DebugKnobs {
    /// Mutant behavior: storage skips the dummy rewrites that make writes
    /// data-independent. The obliviousness harness must catch this.
    pub skip_dummy_writes: bool,
}

pub struct MemoryEngine {
    regions: Vec<RegionState>,
    pub(crate) trace: Trace,
    cipher: BlockCipher,
    pub(crate) budget: Budget,
    rng: ChaCha20Rng,
    pub knobs: DebugKnobs,
}

impl std::fmt::Debug for MemoryEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryEngine")
            .field("regions", &self.regions.len())
            .field("trace_seq", &self.trace.seq())
            .finish_non_exhaustive()
    }
}

impl MemoryEngine {
    /// A seeded engine derives its cipher key and all randomness (ORAM leaf
    /// choices, operator hash seeds) from the seed, which is what lets
    /// paired runs produce byte-identical stores and traces. Pass None for
    /// entropy-derived state.
    pub fn new(budget_bytes: u64, seed: Option<u64>) -> Self {
        let mut rng = match seed {
            Some(s) => ChaCha20Rng::seed_from_u64(s),
            None => ChaCha20Rng::from_rng(rand::thread_rng()).expect("OS entropy available"),
        };
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut key);
        Self {
            regions: Vec::new(),
            trace: Trace::new(),
            cipher: BlockCipher::new(key),
            budget: Budget::new(budget_bytes),
            rng,
            knobs: DebugKnobs::default(),
        }
    }

    pub fn budget(&self) -> &Budget {
        &self.budget
    }

    pub fn budget_mut(&mut self) -> &mut Budget {
        &mut self.budget
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn trace_mut(&mut self) -> &mut Trace {
        &mut self.trace
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    /// Draw a fresh operator seed. Callers must draw a size-independent
    /// number of times per operation so paired runs stay aligned.
    pub fn draw_seed(&mut self) -> u64 {
        self.rng.gen()
    }

    pub fn region_create(&mut self, block_size: u32, num_blocks: u64) -> Result<RegionId> {
        let id = u32::try_from(self.regions.len()).expect("region ids fit u32");
        let n = usize::try_from(num_blocks).expect("block count fits usize");
        self.regions.push(RegionState {
            block_size,
            blocks: vec![None; n],
            revisions: vec![0; n],
            row_ids: vec![0; n],
            freed: false,
        });
        Ok(id)
    }

    pub fn region_free(&mut self, region: RegionId) -> Result<()> {
        let r = self.region_mut(region)?;
        r.blocks = Vec::new();
        r.revisions = Vec::new();
        r.row_ids = Vec::new();
        r.freed = true;
        Ok(())
    }

    pub fn region_blocks(&self, region: RegionId) -> Result<u64> {
        Ok(self.region_ref(region)?.blocks.len() as u64)
    }

    pub fn region_block_size(&self, region: RegionId) -> Result<u32> {
        Ok(self.region_ref(region)?.block_size)
    }

    /// Total untrusted bytes the store occupies at full residency, the
    /// figure space claims are stated against.
    pub fn untrusted_bytes(&self) -> u64 {
        self.regions
            .iter()
            .filter(|r| !r.freed)
            .map(|r| r.blocks.len() as u64 * encrypted_block_size(r.block_size))
            .sum()
    }

    fn region_ref(&self, region: RegionId) -> Result<&RegionState> {
        self.regions
            .get(region as usize)
            .filter(|r| !r.freed)
            .ok_or(EngineError::UnknownRegion(region))
    }

    fn region_mut(&mut self, region: RegionId) -> Result<&mut RegionState> {
        self.regions
            .get_mut(region as usize)
            .filter(|r| !r.freed)
            .ok_or(EngineError::UnknownRegion(region))
    }

    fn check_bounds(r: &RegionState, region: RegionId, address: u64) -> Result<usize> {
        let idx = usize::try_from(address).ok().filter(|&i| i < r.blocks.len());
        idx.ok_or(EngineError::OutOfBounds {
            region,
            address,
            blocks: r.blocks.len() as u64,
        })
    }

    pub fn block_write(
        &mut self,
        region: RegionId,
        address: u64,
        payload: &[u8],
        row_id: u64,
    ) -> Result<()> {
        let r = self.region_ref(region)?;
        let idx = Self::check_bounds(r, region, address)?;
        if payload.len() != r.block_size as usize {
            return Err(EngineError::BlockSize {
                got: payload.len(),
                want: r.block_size,
            });
        }
        self.trace.record(region, Op::Write, address);
        let revision = self.regions[region as usize].revisions[idx] + 1;
        let sealed = self.cipher.seal(region, address, row_id, revision, payload);
        let r = &mut self.regions[region as usize];
        r.blocks[idx] = Some(sealed.into_boxed_slice());
        r.revisions[idx] = revision;
        r.row_ids[idx] = row_id;
        Ok(())
    }

    pub fn block_read(&mut self, region: RegionId, address: u64) -> Result<ReadBlock> {
        let r = self.region_ref(region)?;
        let idx = Self::check_bounds(r, region, address)?;
        self.trace.record(region, Op::Read, address);
        let r = &self.regions[region as usize];
        let stored = r.blocks[idx]
            .as_deref()
            .ok_or(EngineError::NeverWritten { region, address })?;
        let fields = self
            .cipher
            .open(stored)
            .ok_or(EngineError::MacFailure { region, address })?;
        if fields.region != region || fields.address != address || fields.row_id != r.row_ids[idx]
        {
            return Err(EngineError::MisplacedBlock { region, address });
        }
        if fields.revision != r.revisions[idx] {
            return Err(EngineError::StaleBlock { region, address });
        }
        Ok(ReadBlock {
            payload: fields.payload,
            row_id: fields.row_id,
        })
    }

    // ----- adversary simulation surface -------------------------------
    //
    // Integrity tests act as the untrusted host: they lift ciphertexts out
    // of the store and put arbitrary bytes back, without touching enclave
    // records or the trace.

    pub fn adversary_fetch(&self, region: RegionId, address: u64) -> Option<Vec<u8>> {
        let r = self.regions.get(region as usize)?;
        r.blocks.get(address as usize)?.as_ref().map(|b| b.to_vec())
    }

    pub fn adversary_store(&mut self, region: RegionId, address: u64, bytes: Vec<u8>) {
        if let Some(r) = self.regions.get_mut(region as usize) {
            if let Some(slot) = r.blocks.get_mut(address as usize) {
                *slot = Some(bytes.into_boxed_slice());
            }
        }
    }

    // ----- snapshot plumbing -------------------------------------------

    pub(crate) fn cipher(&self) -> &BlockCipher {
        &self.cipher
    }

    pub(crate) fn cipher_mut(&mut self) -> &mut BlockCipher {
        &mut self.cipher
    }

    pub(crate) fn snapshot_regions(&self) -> Vec<RegionSnapshot> {
        self.regions
            .iter()
            .map(|r| RegionSnapshot {
                block_size: r.block_size,
                blocks: r.blocks.iter().map(|b| b.as_ref().map(|x| x.to_vec())).collect(),
                revisions: r.revisions.clone(),
                row_ids: r.row_ids.clone(),
                freed: r.freed,
            })
            .collect()
    }

    pub(crate) fn restore_regions(&mut self, snaps: Vec<RegionSnapshot>) {
        self.regions = snaps
            .into_iter()
            .map(|s| RegionState {
                block_size: s.block_size,
                blocks: s.blocks.into_iter().map(|b| b.map(Vec::into_boxed_slice)).collect(),
                revisions: s.revisions,
                row_ids: s.row_ids,
                freed: s.freed,
            })
            .collect();
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub(crate) struct RegionSnapshot {
    pub block_size: u32,
    pub blocks: Vec<Option<Vec<u8>>>,
    pub revisions: Vec<u64>,
    pub row_ids: Vec<u64>,
    pub freed: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::NO_ROW;
    use crate::trace::{trace_diff, TraceDiff};

    fn engine() -> MemoryEngine {
        MemoryEngine::new(1 << 20, Some(42))
    }

    #[test]
    fn write_read_roundtrip_and_trace() {
        let mut m = engine();
        let r = m.region_create(4, 8).unwrap();
        m.block_write(r, 3, &[1, 2, 3, 4], 7).unwrap();
        let b = m.block_read(r, 3).unwrap();
        assert_eq!(b.payload, vec![1, 2, 3, 4]);
        assert_eq!(b.row_id, 7);
        let ev = m.trace().events();
        assert_eq!(ev.len(), 2);
        assert_eq!((ev[0].op, ev[0].address), (Op::Write, 3));
        assert_eq!((ev[1].op, ev[1].address), (Op::Read, 3));
    }

    #[test]
    fn never_written_reads_error() {
        let mut m = engine();
        let r = m.region_create(4, 8).unwrap();
        let err = m.block_read(r, 0).unwrap_err();
        assert!(matches!(err, EngineError::NeverWritten { .. }));
        assert!(err.is_integrity_violation());
    }

    #[test]
    fn bit_flip_is_mac_failure() {
        let mut m = engine();
        let r = m.region_create(4, 8).unwrap();
        m.block_write(r, 2, &[9, 9, 9, 9], NO_ROW).unwrap();
        let mut ct = m.adversary_fetch(r, 2).unwrap();
        ct[15] ^= 0x01;
        m.adversary_store(r, 2, ct);
        assert!(matches!(
            m.block_read(r, 2).unwrap_err(),
            EngineError::MacFailure { .. }
        ));
    }

    #[test]
    fn copied_ciphertext_is_misplaced() {
        let mut m = engine();
        let r = m.region_create(4, 8).unwrap();
        m.block_write(r, 2, &[1, 1, 1, 1], 2).unwrap();
        m.block_write(r, 5, &[2, 2, 2, 2], 5).unwrap();
        let ct = m.adversary_fetch(r, 2).unwrap();
        m.adversary_store(r, 5, ct);
        assert!(matches!(
            m.block_read(r, 5).unwrap_err(),
            EngineError::MisplacedBlock { region: _, address: 5 }
        ));
    }

    #[test]
    fn cross_region_copy_is_misplaced() {
        let mut m = engine();
        let a = m.region_create(4, 4).unwrap();
        let b = m.region_create(4, 4).unwrap();
        m.block_write(a, 1, &[1, 1, 1, 1], 1).unwrap();
        m.block_write(b, 1, &[2, 2, 2, 2], 1).unwrap();
        let ct = m.adversary_fetch(a, 1).unwrap();
        m.adversary_store(b, 1, ct);
        assert!(matches!(
            m.block_read(b, 1).unwrap_err(),
            EngineError::MisplacedBlock { .. }
        ));
    }

    #[test]
    fn replayed_block_is_stale() {
        let mut m = engine();
        let r = m.region_create(4, 8).unwrap();
        m.block_write(r, 3, &[1, 0, 0, 0], 3).unwrap();
        let old = m.adversary_fetch(r, 3).unwrap();
        m.block_write(r, 3, &[2, 0, 0, 0], 3).unwrap();
        m.adversary_store(r, 3, old);
        assert!(matches!(
            m.block_read(r, 3).unwrap_err(),
            EngineError::StaleBlock { .. }
        ));
    }

    #[test]
    fn huge_region_is_lazy_but_accounts_full_size() {
        let mut m = engine();
        let r = m.region_create(512, 1 << 20).unwrap();
        assert_eq!(m.untrusted_bytes(), (1u64 << 20) * encrypted_block_size(512));
        m.block_write(r, (1 << 20) - 1, &[0u8; 512], NO_ROW).unwrap();
        assert_eq!(
            m.block_read(r, (1 << 20) - 1).unwrap().payload,
            vec![0u8; 512]
        );
    }

    #[test]
    fn bounds_and_block_size_checked() {
        let mut m = engine();
        let r = m.region_create(4, 2).unwrap();
        assert!(matches!(
            m.block_write(r, 2, &[0; 4], NO_ROW).unwrap_err(),
            EngineError::OutOfBounds { .. }
        ));
        assert!(matches!(
            m.block_write(r, 0, &[0; 3], NO_ROW).unwrap_err(),
            EngineError::BlockSize { got: 3, want: 4 }
        ));
        m.region_free(r).unwrap();
        assert!(matches!(
            m.block_read(r, 0).unwrap_err(),
            EngineError::UnknownRegion(_)
        ));
    }

    #[test]
    fn seeded_engines_trace_identically() {
        let run = |vals: [u8; 4]| {
            let mut m = MemoryEngine::new(1 << 20, Some(7));
            let r = m.region_create(4, 4).unwrap();
            m.block_write(r, 0, &vals, NO_ROW).unwrap();
            m.block_read(r, 0).unwrap();
            m.trace_mut().take()
        };
        let a = run([1, 2, 3, 4]);
        let b = run([9, 8, 7, 6]);
        assert_eq!(trace_diff(&a, &b), TraceDiff::Equal);
    }
}
