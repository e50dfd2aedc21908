//! Bitonic merge network schedule.
//!
//! The sort-based join sorts its union region with a fixed network of
//! compare-exchanges. The schedule is a pure function of the region size
//! `p` and the pre-sorted chunk size `c` (both powers of two): chunks
//! arrive sorted in alternating directions, then stages k = 2c, 4c, …, p
//! merge them, each stage running substages j = k/2 down to 1. Inside a
//! stage, position i pairs with i^j and sorts ascending exactly when
//! (i & k) == 0. Who compares with whom never depends on the data.

use crate::error::Result;

/// Visit every compare-exchange as (low index, high index, ascending).
pub fn for_each_ce(
    p: u64,
    c: u64,
    mut visit: impl FnMut(u64, u64, bool) -> Result<()>,
) -> Result<()> {
    assert!(p.is_power_of_two(), "region size must be a power of two");
    assert!(c.is_power_of_two() && c <= p, "chunk size must divide the region");
    let mut k = 2 * c;
    while k <= p {
        let mut j = k / 2;
        while j >= 1 {
            for i in 0..p {
                let partner = i ^ j;
                if partner > i {
                    visit(i, partner, (i & k) == 0)?;
                }
            }
            j /= 2;
        }
        k *= 2;
    }
    Ok(())
}

/// Closed form for the schedule length: p/2 pairs per substage, and stage k
/// contributes log2(k) substages.
pub fn ce_count(p: u64, c: u64) -> u64 {
    if c >= p {
        return 0;
    }
    let mut substages = 0u64;
    let mut k = 2 * c;
    while k <= p {
        substages += u64::from(k.ilog2());
        k *= 2;
    }
    (p / 2) * substages
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule(p: u64, c: u64) -> Vec<(u64, u64, bool)> {
        let mut out = Vec::new();
        for_each_ce(p, c, |i, l, asc| {
            out.push((i, l, asc));
            Ok(())
        })
        .unwrap();
        out
    }

    /// Apply the network to data whose chunks are pre-sorted in
    /// alternating directions, as the join's chunk pass leaves them.
    fn run_network(mut data: Vec<u32>, c: u64) -> Vec<u32> {
        let p = data.len() as u64;
        for (q, chunk) in data.chunks_mut(c as usize).enumerate() {
            chunk.sort_unstable();
            if q % 2 == 1 {
                chunk.reverse();
            }
        }
        for_each_ce(p, c, |i, l, asc| {
            let (a, b) = (data[i as usize], data[l as usize]);
            if (a > b) == asc {
                data.swap(i as usize, l as usize);
            }
            Ok(())
        })
        .unwrap();
        data
    }

    #[test]
    fn eight_from_singletons_is_twenty_four_exchanges() {
        let s = schedule(8, 1);
        assert_eq!(s.len(), 24);
        assert_eq!(ce_count(8, 1), 24);
        // Stage k=2, substage j=1: adjacent pairs, directions alternating.
        assert_eq!(
            &s[..4],
            &[(0, 1, true), (2, 3, false), (4, 5, true), (6, 7, false)]
        );
        // Final substage: adjacent pairs, all ascending.
        assert_eq!(
            &s[20..],
            &[(0, 1, true), (2, 3, true), (4, 5, true), (6, 7, true)]
        );
    }

    #[test]
    fn count_formula_matches_enumeration() {
        for (p, c) in [(1, 1), (2, 1), (8, 1), (8, 2), (16, 4), (64, 8), (32, 32), (4096, 256)] {
            assert_eq!(ce_count(p, c), schedule(p, c).len() as u64, "p={p} c={c}");
        }
    }

    #[test]
    fn network_sorts_from_any_chunk_size() {
        let mut state = 0x9E37u32;
        let mut next = move || {
            state = state.wrapping_mul(747_796_405).wrapping_add(2_891_336_453);
            state >> 8
        };
        for (p, c) in [(8u64, 1u64), (8, 8), (16, 4), (64, 8), (64, 1), (128, 32), (32, 32)] {
            let data: Vec<u32> = (0..p).map(|_| next() % 50).collect();
            let mut want = data.clone();
            want.sort_unstable();
            assert_eq!(run_network(data, c), want, "p={p} c={c}");
        }
    }

    #[test]
    fn schedule_is_data_free_and_pairs_each_index_once_per_substage() {
        let s = schedule(16, 2);
        let substages: u64 = (2..=4).sum::<u64>(); // log2(4) + log2(8) + log2(16)
        assert_eq!(s.len() as u64, 8 * substages);
        // Every substage touches each index exactly once.
        for sub in s.chunks(8) {
            let mut seen = vec![false; 16];
            for (i, l, _) in sub {
                assert!(!seen[*i as usize] && !seen[*l as usize]);
                seen[*i as usize] = true;
                seen[*l as usize] = true;
            }
            assert!(seen.iter().all(|&x| x));
        }
    }
}
