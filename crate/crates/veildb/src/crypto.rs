//! Authenticated encryption envelope for stored blocks.
//!
//! Every block in untrusted memory is sealed with an AEAD. The sealed
//! plaintext carries the block payload plus binding metadata (row id,
//! revision, region, address) so that after decryption the enclave can
//! classify tampering precisely: a flipped bit fails authentication, a
//! ciphertext copied between slots decrypts but names the wrong slot, and a
//! replayed old ciphertext names a revision below the enclave's record.
//!
//! Nonces are a per-engine monotone counter, domain-separated from snapshot
//! nonces. Counter nonces are never reused within a key's lifetime and keep
//! paired test runs (same seed, same operation count) byte-identical.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};

/// nonce (12) + metadata trailer (8 row id + 8 revision + 4 region + 8
/// address) + AEAD tag (16).
pub const ENVELOPE_OVERHEAD: u64 = 12 + 28 + 16;

/// Sentinel row id for blocks that carry no row (dummies, ORAM slots
/// holding tree bookkeeping, cleared rows).
pub const NO_ROW: u64 = u64::MAX;

/// Bytes a region slot occupies once sealed, as a function of payload size.
pub fn encrypted_block_size(block_size: u32) -> u64 {
    block_size as u64 + ENVELOPE_OVERHEAD
}

const DOMAIN_BLOCK: u8 = 1;
const DOMAIN_SNAPSHOT: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedFields {
    pub payload: Vec<u8>,
    pub row_id: u64,
    pub revision: u64,
    pub region: u32,
    pub address: u64,
}

pub struct BlockCipher {
    aead: ChaCha20Poly1305,
    nonce_counter: u64,
}

impl std::fmt::Debug for BlockCipher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlockCipher")
            .field("nonce_counter", &self.nonce_counter)
            .finish_non_exhaustive()
    }
}

fn nonce_bytes(domain: u8, counter: u64) -> Nonce {
    let mut n = [0u8; 12];
    n[0] = domain;
    n[1..9].copy_from_slice(&counter.to_le_bytes());
    Nonce::from(n)
}

impl BlockCipher {
    pub fn new(key: [u8; 32]) -> Self {
        Self {
            aead: ChaCha20Poly1305::new(Key::from_slice(&key)),
            nonce_counter: 0,
        }
    }

    pub fn nonce_counter(&self) -> u64 {
        self.nonce_counter
    }

    /// Restore the counter when reopening a snapshot so nonces stay unique.
    pub fn set_nonce_counter(&mut self, counter: u64) {
        self.nonce_counter = counter;
    }

    pub fn seal(
        &mut self,
        region: u32,
        address: u64,
        row_id: u64,
        revision: u64,
        payload: &[u8],
    ) -> Vec<u8> {
        let mut plaintext = Vec::with_capacity(payload.len() + 28);
        plaintext.extend_from_slice(payload);
        plaintext.extend_from_slice(&row_id.to_le_bytes());
        plaintext.extend_from_slice(&revision.to_le_bytes());
        plaintext.extend_from_slice(&region.to_le_bytes());
        plaintext.extend_from_slice(&address.to_le_bytes());

        let counter = self.nonce_counter;
        self.nonce_counter += 1;
        let nonce = nonce_bytes(DOMAIN_BLOCK, counter);
        let ct = self
            .aead
            .encrypt(&nonce, Payload::from(plaintext.as_slice()))
            .expect("AEAD encryption is infallible for in-memory buffers");

        let mut out = Vec::with_capacity(12 + ct.len());
        out.extend_from_slice(nonce.as_slice());
        out.extend_from_slice(&ct);
        out
    }

    /// Returns None on authentication failure or malformed envelope; the
    /// caller distinguishes that from metadata mismatches it checks itself.
    pub fn open(&self, bytes: &[u8]) -> Option<SealedFields> {
        if bytes.len() < 12 + 28 + 16 {
            return None;
        }
        let nonce = Nonce::from_slice(&bytes[..12]);
        let pt = self.aead.decrypt(nonce, Payload::from(&bytes[12..])).ok()?;
        if pt.len() < 28 {
            return None;
        }
        let split = pt.len() - 28;
        let payload = pt[..split].to_vec();
        let tail = &pt[split..];
        let row_id = u64::from_le_bytes(tail[0..8].try_into().unwrap());
        let revision = u64::from_le_bytes(tail[8..16].try_into().unwrap());
        let region = u32::from_le_bytes(tail[16..20].try_into().unwrap());
        let address = u64::from_le_bytes(tail[20..28].try_into().unwrap());
        Some(SealedFields {
            payload,
            row_id,
            revision,
            region,
            address,
        })
    }

    /// Seal a whole-database snapshot. The generation doubles as the nonce,
    /// in its own domain; generations strictly increase, so nonces are
    /// unique.
    pub fn seal_snapshot(&self, generation: u64, plaintext: &[u8]) -> Vec<u8> {
        let nonce = nonce_bytes(DOMAIN_SNAPSHOT, generation);
        let ct = self
            .aead
            .encrypt(&nonce, Payload::from(plaintext))
            .expect("AEAD encryption is infallible for in-memory buffers");
        let mut out = Vec::with_capacity(12 + ct.len());
        out.extend_from_slice(nonce.as_slice());
        out.extend_from_slice(&ct);
        out
    }

    pub fn open_snapshot(&self, bytes: &[u8]) -> Option<Vec<u8>> {
        if bytes.len() < 12 + 16 {
            return None;
        }
        if bytes[0] != DOMAIN_SNAPSHOT {
            return None;
        }
        let nonce = Nonce::from_slice(&bytes[..12]);
        self.aead.decrypt(nonce, Payload::from(&bytes[12..])).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cipher() -> BlockCipher {
        BlockCipher::new([7u8; 32])
    }

    #[test]
    fn roundtrip_preserves_fields() {
        let mut c = cipher();
        let sealed = c.seal(3, 42, 9, 5, b"hello");
        assert_eq!(sealed.len() as u64, encrypted_block_size(5));
        let fields = c.open(&sealed).unwrap();
        assert_eq!(
            fields,
            SealedFields {
                payload: b"hello".to_vec(),
                row_id: 9,
                revision: 5,
                region: 3,
                address: 42,
            }
        );
    }

    #[test]
    fn identical_payloads_seal_to_distinct_ciphertexts() {
        let mut c = cipher();
        let a = c.seal(0, 0, NO_ROW, 1, b"same");
        let b = c.seal(0, 0, NO_ROW, 2, b"same");
        assert_ne!(a, b);
    }

    #[test]
    fn any_bit_flip_fails_authentication() {
        let mut c = cipher();
        let sealed = c.seal(1, 2, 3, 4, b"payload");
        for bit in [0usize, 13 * 8, (sealed.len() - 1) * 8] {
            let mut bad = sealed.clone();
            bad[bit / 8] ^= 1 << (bit % 8);
            assert!(c.open(&bad).is_none(), "flip at bit {bit} accepted");
        }
    }

    #[test]
    fn truncation_fails() {
        let mut c = cipher();
        let sealed = c.seal(1, 2, 3, 4, b"payload");
        assert!(c.open(&sealed[..sealed.len() - 1]).is_none());
        assert!(c.open(&[]).is_none());
    }

    #[test]
    fn wrong_key_fails() {
        let mut c = cipher();
        let sealed = c.seal(1, 2, 3, 4, b"payload");
        let other = BlockCipher::new([8u8; 32]);
        assert!(other.open(&sealed).is_none());
    }

    #[test]
    fn same_seed_engines_produce_identical_ciphertexts() {
        let mut a = cipher();
        let mut b = cipher();
        assert_eq!(a.seal(1, 2, 3, 4, b"x"), b.seal(1, 2, 3, 4, b"x"));
    }

    #[test]
    fn snapshot_roundtrip_and_tamper() {
        let c = cipher();
        let sealed = c.seal_snapshot(7, b"snapshot body");
        assert_eq!(c.open_snapshot(&sealed).unwrap(), b"snapshot body");
        let mut bad = sealed.clone();
        bad[20] ^= 0xff;
        assert!(c.open_snapshot(&bad).is_none());
        assert!(c.open_snapshot(&sealed[..10]).is_none());
    }
}
