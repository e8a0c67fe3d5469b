//! Bit-packed fixed-width binary vectors.
//!
//! Bit `j` (0-based, left to right in the text form) lives in word `j / 64`
//! at bit position `63 - j % 64`, so the first character of a bit-string is
//! the most significant bit of the first word. With that layout the derived
//! ordering on the word vector is the lexicographic ordering of the text
//! form, and padding bits past `n` are always zero.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString {
    n: usize,
    words: Box<[u64]>,
}

#[inline]
fn words_for(n: usize) -> usize {
    n.div_ceil(WORD_BITS)
}

#[inline]
fn mask_of(j: usize) -> u64 {
    1u64 << (WORD_BITS - 1 - j % WORD_BITS)
}

impl BitString {
    /// All-zero string of width `n`.
    pub fn zeros(n: usize) -> Self {
        BitString {
            n,
            words: vec![0; words_for(n)].into_boxed_slice(),
        }
    }

    pub fn from_bits<I>(bits: I) -> Self
    where
        I: IntoIterator<Item = bool>,
    {
        let bits: Vec<bool> = bits.into_iter().collect();
        let mut out = BitString::zeros(bits.len());
        for (j, b) in bits.into_iter().enumerate() {
            if b {
                out.set(j, true);
            }
        }
        out
    }

    /// Uniform random string of width `n`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut out = BitString::zeros(n);
        for w in out.words.iter_mut() {
            *w = rng.random::<u64>();
        }
        out.clear_padding();
        out
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, j: usize) -> bool {
        assert!(j < self.n, "bit index {j} out of range for width {}", self.n);
        self.words[j / WORD_BITS] & mask_of(j) != 0
    }

    #[inline]
    pub fn set(&mut self, j: usize, value: bool) {
        assert!(j < self.n, "bit index {j} out of range for width {}", self.n);
        let w = &mut self.words[j / WORD_BITS];
        if value {
            *w |= mask_of(j);
        } else {
            *w &= !mask_of(j);
        }
    }

    #[inline]
    pub fn flip(&mut self, j: usize) {
        assert!(j < self.n, "bit index {j} out of range for width {}", self.n);
        self.words[j / WORD_BITS] ^= mask_of(j);
    }

    /// Copy of `self` with bit `j` toggled.
    pub fn toggled(&self, j: usize) -> Self {
        let mut out = self.clone();
        out.flip(j);
        out
    }

    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        for w in out.words.iter_mut() {
            *w = !*w;
        }
        out.clear_padding();
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.n).map(move |j| self.get(j))
    }

    /// Number of ones.
    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Bitwise XOR. Panics on width mismatch; use [`hamming_distance`] for a
    /// checked comparison.
    pub fn xor(&self, other: &BitString) -> BitString {
        assert_eq!(self.n, other.n, "xor of bit-strings with different widths");
        let words = self
            .words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| a ^ b)
            .collect();
        BitString { n: self.n, words }
    }

    /// Hamming distance without the width check.
    #[inline]
    pub fn distance_unchecked(&self, other: &BitString) -> u32 {
        debug_assert_eq!(self.n, other.n);
        self.words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    fn clear_padding(&mut self) {
        let rem = self.n % WORD_BITS;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= !0u64 << (WORD_BITS - rem);
            }
        }
    }
}

/// Number of positions where `a` and `b` differ.
pub fn hamming_distance(a: &BitString, b: &BitString) -> Result<u32> {
    if a.n != b.n {
        return Err(Error::Dimension {
            expected: a.n,
            found: b.n,
            line: None,
        });
    }
    Ok(a.distance_unchecked(b))
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::parse(None, "empty bit-string"));
        }
        let mut out = BitString::zeros(s.len());
        for (j, c) in s.bytes().enumerate() {
            match c {
                b'0' => {}
                b'1' => out.set(j, true),
                other => {
                    return Err(Error::parse(
                        None,
                        format!(
                            "invalid character {:?} at column {}",
                            char::from(other),
                            j + 1
                        ),
                    ))
                }
            }
        }
        Ok(out)
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.iter().map(|b| if b { '1' } else { '0' }).collect();
        f.pad(&s)
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({self})")
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn hamming_examples() {
        assert_eq!(hamming_distance(&bs("000"), &bs("000")).unwrap(), 0);
        assert_eq!(hamming_distance(&bs("101"), &bs("010")).unwrap(), 3);
        assert_eq!(hamming_distance(&bs("1100"), &bs("1010")).unwrap(), 2);
    }

    #[test]
    fn hamming_width_mismatch() {
        let err = hamming_distance(&bs("01"), &bs("011")).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 2, found: 3, .. }));
    }

    #[test]
    fn text_round_trip_across_word_boundary() {
        let s = "1".repeat(63) + "0" + "1" + &"0".repeat(64) + "1";
        let b = bs(&s);
        assert_eq!(b.len(), 130);
        assert_eq!(b.words().len(), 3);
        assert_eq!(b.to_string(), s);
        assert_eq!(b.count_ones(), 65);
    }

    #[test]
    fn rejects_non_binary() {
        assert!(matches!("01x".parse::<BitString>(), Err(Error::Parse { .. })));
        assert!("".parse::<BitString>().is_err());
    }

    #[test]
    fn complement_keeps_padding_clear() {
        let b = bs("101");
        let c = b.complement();
        assert_eq!(c.to_string(), "010");
        assert_eq!(c.words()[0].count_ones(), 1);
    }

    fn arb_triple() -> impl Strategy<Value = (String, String, String)> {
        (1usize..200).prop_flat_map(|n| {
            let s = proptest::collection::vec(any::<bool>(), n)
                .prop_map(|v| v.into_iter().map(|b| if b { '1' } else { '0' }).collect::<String>());
            (s.clone(), s.clone(), s)
        })
    }

    proptest! {
        #[test]
        fn triangle_inequality((a, b, c) in arb_triple()) {
            let (a, b, c) = (bs(&a), bs(&b), bs(&c));
            let ab = hamming_distance(&a, &b).unwrap();
            let bc = hamming_distance(&b, &c).unwrap();
            let ac = hamming_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc);
            prop_assert_eq!(ab, hamming_distance(&b, &a).unwrap());
        }

        #[test]
        fn packed_distance_matches_charwise((a, b, _c) in arb_triple()) {
            let naive = a.bytes().zip(b.bytes()).filter(|(x, y)| x != y).count() as u32;
            let (pa, pb) = (bs(&a), bs(&b));
            prop_assert_eq!(hamming_distance(&pa, &pb).unwrap(), naive);
            prop_assert_eq!(pa.xor(&pb).count_ones(), naive);
        }

        #[test]
        fn ordering_is_lexicographic((a, b, _c) in arb_triple()) {
            prop_assert_eq!(bs(&a).cmp(&bs(&b)), a.cmp(&b));
        }
    }
}
