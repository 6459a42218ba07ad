//! Key to rank routing.

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
#[inline]
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, &b| {
        (hash ^ b as u64).wrapping_mul(FNV_PRIME)
    })
}

/// Destination rank of `key`: `fnv1a64(key) mod num_ranks`.
///
/// Panics if `num_ranks` is zero.
#[inline]
pub fn partition(key: &[u8], num_ranks: usize) -> usize {
    assert!(num_ranks >= 1, "partition over zero ranks");
    (fnv1a64(key) % num_ranks as u64) as usize
}
