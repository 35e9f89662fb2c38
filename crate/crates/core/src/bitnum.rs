//! Arbitrary-length binary numbers stored most-significant digit first.
//!
//! Indexing follows the `n[1]` convention: digit 1 is the most significant
//! one and `slice(i, j)` is inclusive on both ends. Lengths are bookkeeping
//! data and are never normalized behind the caller's back; use
//! [`Bitstring::trimmed`], [`Bitstring::pad_left`] and [`Bitstring::fit_to`]
//! to change them explicitly.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use rand::Rng;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BitnumError {
    #[error("subtraction underflow: {minuend} - {subtrahend} is negative")]
    Underflow { minuend: String, subtrahend: String },
    #[error("index out of range: {what}")]
    Range { what: String },
    #[error("invalid binary string {input:?}: {reason}")]
    Parse { input: String, reason: &'static str },
}

/// Counts the bit-level work done by an arithmetic routine.
///
/// Counters are atomics so a single counter can be shared by node programs
/// running on several worker threads.
#[derive(Debug, Default)]
pub struct OpCounter {
    bit_ops: AtomicU64,
    subtractions: AtomicU64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bit_ops(&self) -> u64 {
        self.bit_ops.load(AtomicOrdering::Relaxed)
    }

    pub fn subtractions(&self) -> u64 {
        self.subtractions.load(AtomicOrdering::Relaxed)
    }

    pub fn add_bit_ops(&self, n: u64) {
        self.bit_ops.fetch_add(n, AtomicOrdering::Relaxed);
    }

    pub fn add_subtraction(&self) {
        self.subtractions.fetch_add(1, AtomicOrdering::Relaxed);
    }

    pub fn reset(&self) {
        self.bit_ops.store(0, AtomicOrdering::Relaxed);
        self.subtractions.store(0, AtomicOrdering::Relaxed);
    }

    pub fn snapshot(&self) -> OpCounts {
        OpCounts {
            bit_ops: self.bit_ops(),
            subtractions: self.subtractions(),
        }
    }
}

/// A plain copy of an [`OpCounter`] at some instant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub bit_ops: u64,
    pub subtractions: u64,
}

impl std::ops::Sub for OpCounts {
    type Output = OpCounts;

    fn sub(self, rhs: OpCounts) -> OpCounts {
        OpCounts {
            bit_ops: self.bit_ops - rhs.bit_ops,
            subtractions: self.subtractions - rhs.subtractions,
        }
    }
}

fn tick(ops: Option<&OpCounter>, n: usize) {
    if let Some(ops) = ops {
        ops.add_bit_ops(n as u64);
    }
}

/// A binary number of explicit length, most significant digit first.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Bitstring {
    // invariant: non-empty, every entry is 0 or 1
    bits: Vec<u8>,
}

impl Bitstring {
    /// The all-zero string of `len` digits (at least one).
    pub fn zero(len: usize) -> Self {
        Bitstring {
            bits: vec![0; len.max(1)],
        }
    }

    pub fn one() -> Self {
        Bitstring { bits: vec![1] }
    }

    pub fn from_digits(digits: Vec<u8>) -> Result<Self, BitnumError> {
        if digits.is_empty() {
            return Err(BitnumError::Parse {
                input: String::new(),
                reason: "empty digit sequence",
            });
        }
        if digits.iter().any(|&d| d > 1) {
            return Err(BitnumError::Parse {
                input: format!("{digits:?}"),
                reason: "digits must be 0 or 1",
            });
        }
        Ok(Bitstring { bits: digits })
    }

    /// `value` written with at least `len` digits.
    pub fn from_u64(value: u64, len: usize) -> Self {
        let width = (64 - value.leading_zeros() as usize).max(len).max(1);
        let bits = (0..width)
            .rev()
            .map(|k| if k < 64 { ((value >> k) & 1) as u8 } else { 0 })
            .collect();
        Bitstring { bits }
    }

    /// Uniformly random digits.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let bits = (0..len.max(1)).map(|_| rng.random_range(0..=1u8)).collect();
        Bitstring { bits }
    }

    /// Uniform value in `[0, bound)`, written with `len` digits.
    ///
    /// Rejection sampling over `bit_length(bound)` random digits.
    pub fn random_below<R: Rng + ?Sized>(bound: &Bitstring, len: usize, rng: &mut R) -> Self {
        assert!(!bound.is_zero(), "random_below needs a positive bound");
        let width = bound.bit_length();
        loop {
            let candidate = Bitstring::random(width, rng);
            if candidate.cmp_value(bound) == Ordering::Less {
                return candidate.fit_to(len).expect("value below bound fits");
            }
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn digits(&self) -> &[u8] {
        &self.bits
    }

    /// Digit `i`, 1-based from the most significant end.
    pub fn bit(&self, i: usize) -> Option<u8> {
        if i == 0 {
            return None;
        }
        self.bits.get(i - 1).copied()
    }

    pub fn is_zero(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Number of digits after dropping leading zeros; 0 for zero.
    pub fn bit_length(&self) -> usize {
        match self.bits.iter().position(|&b| b == 1) {
            Some(first) => self.bits.len() - first,
            None => 0,
        }
    }

    pub fn to_u64(&self) -> Option<u64> {
        if self.bit_length() > 64 {
            return None;
        }
        Some(self.bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64))
    }

    /// Drops leading zeros, keeping at least one digit.
    pub fn trimmed(&self) -> Bitstring {
        let first = self
            .bits
            .iter()
            .position(|&b| b == 1)
            .unwrap_or(self.bits.len() - 1);
        Bitstring {
            bits: self.bits[first..].to_vec(),
        }
    }

    /// Prepends zeros up to `len` digits. Longer strings are returned as is.
    pub fn pad_left(&self, len: usize) -> Bitstring {
        if len <= self.bits.len() {
            return self.clone();
        }
        let mut bits = vec![0; len - self.bits.len()];
        bits.extend_from_slice(&self.bits);
        Bitstring { bits }
    }

    /// Rewrites the value with exactly `len` digits.
    pub fn fit_to(&self, len: usize) -> Result<Bitstring, BitnumError> {
        let len = len.max(1);
        let significant = self.bit_length();
        if significant > len {
            return Err(BitnumError::Range {
                what: format!("value with {significant} significant digits does not fit in {len}"),
            });
        }
        let start = self.bits.len() - significant;
        let mut bits = vec![0; len - significant];
        bits.extend_from_slice(&self.bits[start..]);
        Ok(Bitstring { bits })
    }

    pub fn add(&self, other: &Bitstring) -> Bitstring {
        self.add_with(other, None)
    }

    /// Sum with an explicit carry digit: `max(|x|, |y|) + 1` digits.
    pub fn add_with(&self, other: &Bitstring, ops: Option<&OpCounter>) -> Bitstring {
        let width = self.len().max(other.len());
        let mut out = vec![0u8; width + 1];
        let mut carry = 0u8;
        let (x, y) = (&self.bits, &other.bits);
        for k in 0..width {
            let a = if k < x.len() { x[x.len() - 1 - k] } else { 0 };
            let b = if k < y.len() { y[y.len() - 1 - k] } else { 0 };
            let s = a + b + carry;
            out[width - k] = s & 1;
            carry = s >> 1;
        }
        out[0] = carry;
        tick(ops, width);
        Bitstring { bits: out }
    }

    pub fn checked_sub(&self, other: &Bitstring) -> Result<Bitstring, BitnumError> {
        self.sub_with(other, None)
    }

    /// Difference with `|x|` digits; errors when `other > self`.
    pub fn sub_with(
        &self,
        other: &Bitstring,
        ops: Option<&OpCounter>,
    ) -> Result<Bitstring, BitnumError> {
        if self.cmp_value(other) == Ordering::Less {
            return Err(BitnumError::Underflow {
                minuend: self.to_string(),
                subtrahend: other.to_string(),
            });
        }
        let (x, y) = (&self.bits, &other.bits);
        let mut out = vec![0u8; x.len()];
        let mut borrow = 0i8;
        for k in 0..x.len() {
            let a = x[x.len() - 1 - k] as i8;
            let b = if k < y.len() { y[y.len() - 1 - k] as i8 } else { 0 };
            let mut d = a - b - borrow;
            borrow = 0;
            if d < 0 {
                d += 2;
                borrow = 1;
            }
            out[x.len() - 1 - k] = d as u8;
        }
        debug_assert_eq!(borrow, 0);
        if let Some(ops) = ops {
            ops.add_bit_ops(x.len() as u64);
            ops.add_subtraction();
        }
        Ok(Bitstring { bits: out })
    }

    /// Numeric comparison; leading zeros are ignored.
    pub fn cmp_value(&self, other: &Bitstring) -> Ordering {
        self.cmp_with(other, None)
    }

    pub fn cmp_with(&self, other: &Bitstring, ops: Option<&OpCounter>) -> Ordering {
        let width = self.len().max(other.len());
        let (x, y) = (&self.bits, &other.bits);
        let mut examined = 0;
        let mut result = Ordering::Equal;
        for k in (0..width).rev() {
            examined += 1;
            let a = if k < x.len() { x[x.len() - 1 - k] } else { 0 };
            let b = if k < y.len() { y[y.len() - 1 - k] } else { 0 };
            if a != b {
                result = a.cmp(&b);
                break;
            }
        }
        tick(ops, examined);
        result
    }

    pub fn value_eq(&self, other: &Bitstring) -> bool {
        self.cmp_value(other) == Ordering::Equal
    }

    /// Appends `k` zeros.
    pub fn shl(&self, k: usize) -> Bitstring {
        let mut bits = Vec::with_capacity(self.bits.len() + k);
        bits.extend_from_slice(&self.bits);
        bits.resize(self.bits.len() + k, 0);
        Bitstring { bits }
    }

    /// Deletes the rightmost `k` digits; deleting everything leaves `0`.
    pub fn shr(&self, k: usize) -> Result<Bitstring, BitnumError> {
        if k > self.len() {
            return Err(BitnumError::Range {
                what: format!("shift by {k} exceeds length {}", self.len()),
            });
        }
        if k == self.len() {
            return Ok(Bitstring::zero(1));
        }
        Ok(Bitstring {
            bits: self.bits[..self.len() - k].to_vec(),
        })
    }

    /// Digits `i..=j`, 1-based.
    pub fn slice(&self, i: usize, j: usize) -> Result<Bitstring, BitnumError> {
        if i < 1 || i > j || j > self.len() {
            return Err(BitnumError::Range {
                what: format!("slice [{i}:{j}] of a {}-digit string", self.len()),
            });
        }
        Ok(Bitstring {
            bits: self.bits[i - 1..j].to_vec(),
        })
    }

    /// The rightmost `k` digits (`k >= 1`), zero-extended if `k > len`.
    pub fn low_bits(&self, k: usize) -> Bitstring {
        let k = k.max(1);
        if k >= self.len() {
            return self.pad_left(k);
        }
        Bitstring {
            bits: self.bits[self.len() - k..].to_vec(),
        }
    }

    /// `self` followed by one more digit.
    pub fn append_bit(&self, bit: u8) -> Bitstring {
        let mut bits = Vec::with_capacity(self.bits.len() + 1);
        bits.extend_from_slice(&self.bits);
        bits.push(bit & 1);
        Bitstring { bits }
    }

    /// Base-10 rendering of the value.
    pub fn to_decimal_string(&self) -> String {
        // little-endian decimal digits, doubled once per binary digit
        let mut dec: Vec<u8> = vec![0];
        for &b in &self.bits {
            let mut carry = b;
            for d in dec.iter_mut() {
                let v = *d * 2 + carry;
                *d = v % 10;
                carry = v / 10;
            }
            if carry > 0 {
                dec.push(carry);
            }
        }
        dec.iter().rev().map(|d| char::from(b'0' + d)).collect()
    }
}

/// Shift-and-add product with `|x| + |y|` digits.
///
/// Shares no code with the Karatsuba routines; it is the reference every
/// multiplier in this crate is checked against.
pub fn school_mul(x: &Bitstring, y: &Bitstring) -> Bitstring {
    let width = x.len() + y.len();
    // little-endian accumulator
    let mut acc = vec![0u8; width + 1];
    let xs: Vec<u8> = x.bits.iter().rev().copied().collect();
    for (shift, &yb) in y.bits.iter().rev().enumerate() {
        if yb == 0 {
            continue;
        }
        let mut carry = 0u8;
        for (k, &xb) in xs.iter().enumerate() {
            let s = acc[shift + k] + xb + carry;
            acc[shift + k] = s & 1;
            carry = s >> 1;
        }
        let mut pos = shift + xs.len();
        while carry > 0 {
            let s = acc[pos] + carry;
            acc[pos] = s & 1;
            carry = s >> 1;
            pos += 1;
        }
    }
    acc.truncate(width);
    acc.reverse();
    Bitstring { bits: acc }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bitstring({self})")
    }
}

impl FromStr for Bitstring {
    type Err = BitnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(BitnumError::Parse {
                input: String::new(),
                reason: "empty input",
            });
        }
        let bits = s
            .bytes()
            .map(|c| match c {
                b'0' => Ok(0),
                b'1' => Ok(1),
                _ => Err(BitnumError::Parse {
                    input: s.to_string(),
                    reason: "only the digits 0 and 1 are allowed",
                }),
            })
            .collect::<Result<Vec<u8>, _>>()?;
        Ok(Bitstring { bits })
    }
}
