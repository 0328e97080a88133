//! Bit strings as carried on the simulated wire.

use bitvec::prelude::*;
use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serializer};

pub type Bits = BitVec<u8, Msb0>;

pub fn zeros(len: usize) -> Bits {
    bitvec![u8, Msb0; 0; len]
}

pub fn random_bits<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Bits {
    let mut bits = Bits::with_capacity(len);
    for _ in 0..len {
        bits.push(rng.gen::<bool>());
    }
    bits
}

/// Appends the low `width` bits of `value`, most significant first.
pub fn push_uint(bits: &mut Bits, value: u64, width: usize) {
    for i in (0..width).rev() {
        bits.push((value >> i) & 1 == 1);
    }
}

/// Reads `width` bits starting at `offset` as an unsigned integer, most significant first.
pub fn read_uint(bits: &BitSlice<u8, Msb0>, offset: usize, width: usize) -> u64 {
    bits[offset..offset + width]
        .iter()
        .fold(0u64, |acc, b| (acc << 1) | u64::from(*b))
}

/// Forces a bit string to exactly `len` bits: missing messages become all zeros,
/// short ones are zero-padded and long ones truncated.
pub fn fit_to_length(bits: Option<Bits>, len: usize) -> Bits {
    match bits {
        None => zeros(len),
        Some(mut b) => {
            b.resize(len, false);
            b
        }
    }
}

pub fn to_string(bits: &BitSlice<u8, Msb0>) -> String {
    bits.iter().map(|b| if *b { '1' } else { '0' }).collect()
}

pub fn from_str(s: &str) -> Option<Bits> {
    s.chars()
        .map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        })
        .collect()
}

/// Serde adapter writing bit strings as `"0101..."`.
pub mod serde_bits {
    use super::*;

    pub fn serialize<S: Serializer>(bits: &Bits, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&to_string(bits))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Bits, D::Error> {
        let s = String::deserialize(d)?;
        from_str(&s).ok_or_else(|| D::Error::custom("expected a string of 0/1 characters"))
    }
}
