//! Reflected gray code over fixed-width bit vectors, bit 0 = most
//! significant. Successive values (including the wrap from 2^k-1 to 0)
//! differ in exactly one bit, which is what lets the bitwise ring variant
//! write one register pair per token step in the steady state.

use crate::errors::ConfigError;
use serde::{Deserialize, Serialize};

/// A gray codeword of fixed width; `bits[0]` is the most significant bit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GrayWord {
    pub bits: Vec<u8>,
}

impl GrayWord {
    pub fn width(&self) -> usize {
        self.bits.len()
    }

    pub fn bit(&self, i: usize) -> u8 {
        self.bits[i]
    }
}

impl std::fmt::Display for GrayWord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Encode `v` as a width-`k` gray codeword. `v` must lie below 2^k.
pub fn gray_encode(v: u64, k: usize) -> Result<GrayWord, ConfigError> {
    if k == 0 || (k < 64 && v >> k != 0) {
        return Err(ConfigError::ArgOutsideDomain {
            value: v,
            domain: 1u64.checked_shl(k as u32).unwrap_or(u64::MAX),
        });
    }
    let g = v ^ (v >> 1);
    let bits = (0..k).map(|i| ((g >> (k - 1 - i)) & 1) as u8).collect();
    Ok(GrayWord { bits })
}

/// Decode a gray codeword back to its rank. Any bit pattern is a valid
/// codeword, so this cannot fail.
pub fn gray_decode(w: &GrayWord) -> u64 {
    gray_decode_bits(&w.bits)
}

/// Decode straight from bits (most significant first) without building a word.
/// Each binary digit is the running XOR of the gray digits above it.
pub fn gray_decode_bits(bits: &[u8]) -> u64 {
    let mut acc = 0u64;
    for &b in bits {
        let prev = acc & 1;
        acc = (acc << 1) | (prev ^ u64::from(b));
    }
    acc
}

/// Positions at which `a` and `b` differ.
pub fn diff_positions(a: &GrayWord, b: &GrayWord) -> Vec<usize> {
    assert_eq!(a.width(), b.width());
    (0..a.width()).filter(|&i| a.bits[i] != b.bits[i]).collect()
}

/// How often each bit position flips over one full increment cycle
/// 0 -> 1 -> ... -> 2^k-1 -> 0 (the wrap included). Index 0 = MSB.
pub fn flip_counts_per_cycle(k: usize) -> Vec<u64> {
    let period = 1u64 << k;
    let mut counts = vec![0u64; k];
    for v in 0..period {
        let cur = gray_encode(v, k).unwrap();
        let nxt = gray_encode((v + 1) % period, k).unwrap();
        for p in diff_positions(&cur, &nxt) {
            counts[p] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // The full 3-bit code, most significant bit first.
    const TABLE_3: [(u64, [u8; 3]); 8] = [
        (0, [0, 0, 0]),
        (1, [0, 0, 1]),
        (2, [0, 1, 1]),
        (3, [0, 1, 0]),
        (4, [1, 1, 0]),
        (5, [1, 1, 1]),
        (6, [1, 0, 1]),
        (7, [1, 0, 0]),
    ];

    #[test]
    fn three_bit_table() {
        for (v, bits) in TABLE_3 {
            let w = gray_encode(v, 3).unwrap();
            assert_eq!(w.bits, bits, "encode({v})");
            assert_eq!(gray_decode(&w), v, "decode({w})");
        }
    }

    #[test]
    fn single_bit_change_per_increment() {
        for k in 2..=5usize {
            let period = 1u64 << k;
            for v in 0..period {
                let cur = gray_encode(v, k).unwrap();
                let nxt = gray_encode((v + 1) % period, k).unwrap();
                assert_eq!(
                    diff_positions(&cur, &nxt).len(),
                    1,
                    "k={k} v={v}: {cur} -> {nxt}"
                );
            }
        }
    }

    // Measured flip rates: the LSB flips 2^(k-1) times per full cycle (the
    // "two 0s then two 1s" column pattern), not 2^(k-2); the MSB flips
    // exactly twice, once at the half-way point and once at the wrap.
    #[test]
    fn flip_counts_lsb_and_msb() {
        for k in 2..=6usize {
            let counts = flip_counts_per_cycle(k);
            let lsb = counts[k - 1];
            let msb = counts[0];
            assert_eq!(lsb, 1 << (k - 1), "k={k} lsb");
            assert_ne!(lsb, 1 << (k - 2), "k={k}: the halved count is wrong");
            assert_eq!(msb, 2, "k={k} msb");
            // Every increment flips exactly one bit.
            assert_eq!(counts.iter().sum::<u64>(), 1 << k);
        }
    }

    #[test]
    fn encode_rejects_out_of_range() {
        assert!(gray_encode(8, 3).is_err());
        assert!(gray_encode(0, 0).is_err());
        assert!(gray_encode(7, 3).is_ok());
    }

    proptest! {
        #[test]
        fn roundtrip(k in 1usize..=10, raw in 0u64..1024) {
            let v = raw & ((1 << k) - 1);
            let w = gray_encode(v, k).unwrap();
            prop_assert_eq!(w.width(), k);
            prop_assert_eq!(gray_decode(&w), v);
            prop_assert_eq!(gray_decode_bits(&w.bits), v);
        }
    }
}
