//! GF(2^k) arithmetic and the keyed polynomial-evaluation hash used to
//! cross-check payloads.
//!
//! A `D`-bit payload is split into `d = D/k` blocks `b_1..b_d` of `k` bits
//! (first block = first `k` bits, most significant bit first) and hashed under
//! key `K` as
//!
//! ```text
//! H(m, K) = b_1·K + b_2·K^2 + ... + b_d·K^d      over GF(2^k)
//! ```
//!
//! For `m ≠ m'` the difference is a nonzero polynomial in `K` of degree at
//! most `d` with zero constant term, so at most `d` of the `2^k` keys collide,
//! i.e. the collision probability is at most `2^{-k}·D/k`.
//!
//! Field arithmetic reduces modulo the fixed polynomials in [`IRREDUCIBLE`].

use std::fmt;
use std::ops::BitXor;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{self, Bits};

pub const MAX_WIDTH: u32 = 32;

/// Reduction polynomial for each width `k` (index = k), including the `x^k`
/// term. Lowest-weight irreducible trinomial where one exists, otherwise the
/// lexicographically smallest pentanomial; degree 8 uses the AES polynomial.
pub const IRREDUCIBLE: [u64; 33] = [
    0,
    0x3,           // x + 1
    0x7,           // x^2 + x + 1
    0xb,           // x^3 + x + 1
    0x13,          // x^4 + x + 1
    0x25,          // x^5 + x^2 + 1
    0x43,          // x^6 + x + 1
    0x83,          // x^7 + x + 1
    0x11b,         // x^8 + x^4 + x^3 + x + 1
    0x203,         // x^9 + x + 1
    0x409,         // x^10 + x^3 + 1
    0x805,         // x^11 + x^2 + 1
    0x1009,        // x^12 + x^3 + 1
    0x201b,        // x^13 + x^4 + x^3 + x + 1
    0x4021,        // x^14 + x^5 + 1
    0x8003,        // x^15 + x + 1
    0x1002b,       // x^16 + x^5 + x^3 + x + 1
    0x20009,       // x^17 + x^3 + 1
    0x40009,       // x^18 + x^3 + 1
    0x80027,       // x^19 + x^5 + x^2 + x + 1
    0x100009,      // x^20 + x^3 + 1
    0x200005,      // x^21 + x^2 + 1
    0x400003,      // x^22 + x + 1
    0x800021,      // x^23 + x^5 + 1
    0x100001b,     // x^24 + x^4 + x^3 + x + 1
    0x2000009,     // x^25 + x^3 + 1
    0x400001b,     // x^26 + x^4 + x^3 + x + 1
    0x8000027,     // x^27 + x^5 + x^2 + x + 1
    0x10000003,    // x^28 + x + 1
    0x20000005,    // x^29 + x^2 + 1
    0x40000003,    // x^30 + x + 1
    0x80000009,    // x^31 + x^3 + 1
    0x10000008d,   // x^32 + x^7 + x^3 + x^2 + 1
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("unsupported field width k={0} (supported: 1..=32)")]
    UnsupportedWidth(u32),
    #[error("value {value:#x} does not fit in {width} bits")]
    ValueOutOfRange { value: u64, width: u32 },
    #[error("field width mismatch: {left} vs {right}")]
    WidthMismatch { left: u32, right: u32 },
    #[error("payload length {len} is not a positive multiple of k={k}")]
    PayloadNotBlockAligned { len: usize, k: u32 },
}

pub fn check_width(k: u32) -> Result<(), FieldError> {
    if (1..=MAX_WIDTH).contains(&k) {
        Ok(())
    } else {
        Err(FieldError::UnsupportedWidth(k))
    }
}

fn mask(k: u32) -> u64 {
    (1u64 << k) - 1
}

/// An element of GF(2^k).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldElement {
    value: u32,
    width: u32,
}

impl FieldElement {
    pub fn new(value: u64, width: u32) -> Result<Self, FieldError> {
        check_width(width)?;
        if value > mask(width) {
            return Err(FieldError::ValueOutOfRange { value, width });
        }
        Ok(FieldElement {
            value: value as u32,
            width,
        })
    }

    /// Keeps the low `width` bits of `value`.
    pub fn truncating(value: u64, width: u32) -> Result<Self, FieldError> {
        check_width(width)?;
        Ok(FieldElement {
            value: (value & mask(width)) as u32,
            width,
        })
    }

    pub fn zero(width: u32) -> Result<Self, FieldError> {
        Self::new(0, width)
    }

    pub fn one(width: u32) -> Result<Self, FieldError> {
        Self::new(1, width)
    }

    pub fn random<R: Rng + ?Sized>(width: u32, rng: &mut R) -> Result<Self, FieldError> {
        check_width(width)?;
        Self::new(rng.gen::<u64>() & mask(width), width)
    }

    pub fn value(self) -> u32 {
        self.value
    }

    pub fn width(self) -> u32 {
        self.width
    }

    pub fn is_zero(self) -> bool {
        self.value == 0
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}/GF(2^{})", self.value, self.width)
    }
}

impl BitXor for FieldElement {
    type Output = FieldElement;

    /// Field addition. Both operands must share a width.
    fn bitxor(self, rhs: FieldElement) -> FieldElement {
        assert_eq!(self.width, rhs.width, "adding elements of different fields");
        FieldElement {
            value: self.value ^ rhs.value,
            width: self.width,
        }
    }
}

/// Carry-less product of two k-bit values reduced modulo `IRREDUCIBLE[k]`.
/// `k` must be in `1..=32` and both inputs below `2^k`.
pub(crate) fn mul_raw(a: u32, b: u32, k: u32) -> u32 {
    let modulus = IRREDUCIBLE[k as usize];
    let (a, b) = (u64::from(a), u64::from(b));
    let mut acc: u64 = 0;
    for i in 0..k {
        if (b >> i) & 1 == 1 {
            acc ^= a << i;
        }
    }
    let mut bit = 2 * k;
    while bit > k {
        bit -= 1;
        if (acc >> bit) & 1 == 1 {
            acc ^= modulus << (bit - k);
        }
    }
    acc as u32
}

/// Product in GF(2^k).
pub fn gf_mul(a: FieldElement, b: FieldElement) -> Result<FieldElement, FieldError> {
    if a.width != b.width {
        return Err(FieldError::WidthMismatch {
            left: a.width,
            right: b.width,
        });
    }
    check_width(a.width)?;
    Ok(FieldElement {
        value: mul_raw(a.value, b.value, a.width),
        width: a.width,
    })
}

/// One generation's worth of data: an exact-length bit string.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Payload {
    #[serde(with = "bits::serde_bits")]
    bits: Bits,
}

impl Payload {
    pub fn new(bits: Bits) -> Self {
        Payload { bits }
    }

    pub fn zeros(len: usize) -> Self {
        Payload {
            bits: bits::zeros(len),
        }
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Payload {
            bits: bits::random_bits(len, rng),
        }
    }

    /// Builds a payload from `k`-bit blocks, first block first.
    pub fn from_blocks(blocks: &[u32], k: u32) -> Result<Self, FieldError> {
        check_width(k)?;
        let mut b = Bits::with_capacity(blocks.len() * k as usize);
        for &block in blocks {
            if u64::from(block) > mask(k) {
                return Err(FieldError::ValueOutOfRange {
                    value: u64::from(block),
                    width: k,
                });
            }
            bits::push_uint(&mut b, u64::from(block), k as usize);
        }
        Ok(Payload { bits: b })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &Bits {
        &self.bits
    }

    pub fn into_bits(self) -> Bits {
        self.bits
    }

    /// Splits into `k`-bit blocks. Fails unless the length is a positive multiple of `k`.
    pub fn blocks(&self, k: u32) -> Result<Vec<u32>, FieldError> {
        check_width(k)?;
        let len = self.bits.len();
        if len == 0 || len % k as usize != 0 {
            return Err(FieldError::PayloadNotBlockAligned { len, k });
        }
        Ok(self
            .bits
            .chunks(k as usize)
            .map(|c| bits::read_uint(c, 0, c.len()) as u32)
            .collect())
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Payload({})", bits::to_string(&self.bits))
    }
}

impl BitXor for &Payload {
    type Output = Payload;

    fn bitxor(self, rhs: &Payload) -> Payload {
        assert_eq!(self.len(), rhs.len(), "xor of payloads of different length");
        Payload {
            bits: self.bits.clone() ^ rhs.bits.clone(),
        }
    }
}

/// Keyed hash of `m`: polynomial evaluation of the message blocks at `key`
/// with powers starting at 1.
pub fn hash(m: &Payload, key: FieldElement) -> Result<FieldElement, FieldError> {
    let k = key.width;
    let blocks = m.blocks(k)?;
    // Horner from the highest power down, then one final multiplication by key.
    let mut acc = 0u32;
    for &b in blocks.iter().rev() {
        acc = mul_raw(acc ^ b, key.value, k);
    }
    Ok(FieldElement {
        value: acc,
        width: k,
    })
}

/// Upper bound `(D/k)·2^{-k}` on the probability that two distinct `D`-bit
/// payloads collide under a uniformly random key.
pub fn collision_bound(d_bits: u64, k: u32) -> Result<BigRational, FieldError> {
    check_width(k)?;
    if d_bits == 0 || d_bits % u64::from(k) != 0 {
        return Err(FieldError::PayloadNotBlockAligned {
            len: d_bits as usize,
            k,
        });
    }
    Ok(BigRational::new(
        BigInt::from(d_bits / u64::from(k)),
        BigInt::from(1u64) << k,
    ))
}

/// The pair `(K, H(m, K))` a node sends to one peer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyedDigest {
    pub key: FieldElement,
    pub digest: FieldElement,
}

impl KeyedDigest {
    pub fn compute(m: &Payload, key: FieldElement) -> Result<Self, FieldError> {
        Ok(KeyedDigest {
            key,
            digest: hash(m, key)?,
        })
    }

    /// Whether this digest matches `m` under its own key.
    pub fn verifies(&self, m: &Payload) -> bool {
        self.key.width == self.digest.width && hash(m, self.key).map_or(false, |h| h == self.digest)
    }

    /// Bits on the wire with a `k`-bit digest: `k` key bits then `k` digest bits.
    pub fn wire_bits(k: u32) -> usize {
        2 * k as usize
    }

    pub fn encode_into(&self, out: &mut Bits) {
        bits::push_uint(out, u64::from(self.key.value), self.key.width as usize);
        bits::push_uint(out, u64::from(self.digest.value), self.digest.width as usize);
    }

    pub fn encode(&self) -> Bits {
        let mut b = Bits::with_capacity(2 * self.key.width as usize);
        self.encode_into(&mut b);
        b
    }

    /// Decodes from `bits[offset..offset + 2k]`.
    pub fn decode(bits: &bitvec::slice::BitSlice<u8, bitvec::order::Msb0>, offset: usize, k: u32) -> Result<Self, FieldError> {
        let w = k as usize;
        Ok(KeyedDigest {
            key: FieldElement::new(bits::read_uint(bits, offset, w), k)?,
            digest: FieldElement::new(bits::read_uint(bits, offset + w, w), k)?,
        })
    }
}
