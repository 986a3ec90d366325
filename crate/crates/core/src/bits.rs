//! MSB-first bit packing for 13-bit semantic tokens.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bits per content-style token.
pub const TOKEN_BITS: u32 = 13;
/// Number of distinct token values (2^13).
pub const CODEBOOK_SIZE: u16 = 1 << TOKEN_BITS;

/// A 13-bit content-style symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct SemanticToken(u16);

impl SemanticToken {
    pub const MAX: SemanticToken = SemanticToken(CODEBOOK_SIZE - 1);

    pub fn new(value: u16) -> Result<Self, BitError> {
        if value < CODEBOOK_SIZE {
            Ok(SemanticToken(value))
        } else {
            Err(BitError::TokenOutOfRange { index: 0, value: value as u32 })
        }
    }

    /// Keeps the low 13 bits.
    pub fn from_masked(value: u16) -> Self {
        SemanticToken(value & (CODEBOOK_SIZE - 1))
    }

    pub fn value(self) -> u16 {
        self.0
    }
}

impl TryFrom<u16> for SemanticToken {
    type Error = BitError;
    fn try_from(value: u16) -> Result<Self, Self::Error> {
        SemanticToken::new(value)
    }
}

impl From<SemanticToken> for u16 {
    fn from(t: SemanticToken) -> u16 {
        t.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BitError {
    #[error("token {index} has value {value}, which does not fit in 13 bits")]
    TokenOutOfRange { index: usize, value: u32 },
    #[error("packed length {actual} bytes does not match {expected} bytes for {count} tokens")]
    LengthMismatch { count: usize, expected: usize, actual: usize },
    #[error("nonzero pad bits after {count} tokens")]
    NonzeroPadding { count: usize },
}

/// Bytes needed to hold `count` packed tokens.
pub fn packed_len(count: usize) -> usize {
    (count * TOKEN_BITS as usize).div_ceil(8)
}

/// Appends values MSB-first into a byte buffer.
#[derive(Debug, Default)]
pub struct BitWriter {
    buf: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bytes: usize) -> Self {
        BitWriter { buf: Vec::with_capacity(bytes), acc: 0, nbits: 0 }
    }

    /// Writes the low `width` bits of `value` (width ≤ 32).
    pub fn write(&mut self, value: u32, width: u32) {
        debug_assert!(width <= 32);
        if width == 0 {
            return;
        }
        let mask = if width == 32 { u32::MAX } else { (1u32 << width) - 1 };
        self.acc = (self.acc << width) | u64::from(value & mask);
        self.nbits += width;
        while self.nbits >= 8 {
            self.nbits -= 8;
            self.buf.push((self.acc >> self.nbits) as u8);
        }
        self.acc &= (1u64 << self.nbits) - 1;
    }

    /// Flushes any partial byte, zero-padding its low bits.
    pub fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            self.buf.push((self.acc << (8 - self.nbits)) as u8);
        }
        self.buf
    }
}

/// Reads values MSB-first from a byte slice.
#[derive(Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    pub fn bits_remaining(&self) -> usize {
        self.bytes.len() * 8 - self.pos
    }

    /// Reads `width` bits (≤ 32). Returns `None` past the end.
    pub fn read(&mut self, width: u32) -> Option<u32> {
        if width as usize > self.bits_remaining() {
            return None;
        }
        let mut out = 0u32;
        let mut left = width;
        while left > 0 {
            let byte = self.bytes[self.pos / 8];
            let offset = (self.pos % 8) as u32;
            let take = left.min(8 - offset);
            let shifted = (byte >> (8 - offset - take)) & ((1u16 << take) - 1) as u8;
            out = (out << take) | u32::from(shifted);
            left -= take;
            self.pos += take as usize;
        }
        Some(out)
    }

    /// True when every unread bit is zero.
    pub fn rest_is_zero(&self) -> bool {
        let mut probe = BitReader { bytes: self.bytes, pos: self.pos };
        while probe.bits_remaining() > 0 {
            let w = probe.bits_remaining().min(8) as u32;
            if probe.read(w) != Some(0) {
                return false;
            }
        }
        true
    }
}

/// Packs tokens MSB-first; the final partial byte is zero-padded.
pub fn pack_tokens(tokens: &[SemanticToken]) -> Vec<u8> {
    let mut w = BitWriter::with_capacity(packed_len(tokens.len()));
    for t in tokens {
        w.write(u32::from(t.0), TOKEN_BITS);
    }
    w.finish()
}

/// Packs raw values, rejecting anything that does not fit in 13 bits.
pub fn pack_values(values: &[u16]) -> Result<Vec<u8>, BitError> {
    let tokens = values
        .iter()
        .enumerate()
        .map(|(index, &v)| SemanticToken::new(v).map_err(|_| BitError::TokenOutOfRange { index, value: v as u32 }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pack_tokens(&tokens))
}

/// Strict unpack: the length must match and pad bits must be zero.
pub fn unpack_tokens(bytes: &[u8], count: usize) -> Result<Vec<SemanticToken>, BitError> {
    let (tokens, pad_clean) = unpack_tokens_lenient(bytes, count)?;
    if !pad_clean {
        return Err(BitError::NonzeroPadding { count });
    }
    Ok(tokens)
}

/// Lenient unpack: returns the tokens plus whether the pad bits were zero.
pub fn unpack_tokens_lenient(bytes: &[u8], count: usize) -> Result<(Vec<SemanticToken>, bool), BitError> {
    let expected = packed_len(count);
    if bytes.len() != expected {
        return Err(BitError::LengthMismatch { count, expected, actual: bytes.len() });
    }
    let mut r = BitReader::new(bytes);
    let tokens = (0..count).map(|_| SemanticToken(r.read(TOKEN_BITS).expect("length checked") as u16)).collect();
    Ok((tokens, r.rest_is_zero()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(v: &[u16]) -> Vec<SemanticToken> {
        v.iter().map(|&x| SemanticToken::new(x).unwrap()).collect()
    }

    /// Independent oracle: build the bit string as characters, then chop into bytes.
    fn pack_oracle(values: &[u16]) -> Vec<u8> {
        let mut s = String::new();
        for v in values {
            s.push_str(&format!("{:013b}", v));
        }
        while !s.len().is_multiple_of(8) {
            s.push('0');
        }
        s.as_bytes().chunks(8).map(|c| u8::from_str_radix(std::str::from_utf8(c).unwrap(), 2).unwrap()).collect()
    }

    #[test]
    fn empty_packs_to_nothing() {
        assert!(pack_tokens(&[]).is_empty());
        assert_eq!(unpack_tokens(&[], 0).unwrap(), vec![]);
    }

    #[test]
    fn single_max_token() {
        assert_eq!(pack_oracle(&[8191]), vec![0xFF, 0xF8]);
        assert_eq!(pack_tokens(&toks(&[8191])), vec![0xFF, 0xF8]);
        assert_eq!(unpack_tokens(&[0xFF, 0xF8], 1).unwrap(), toks(&[8191]));
    }

    #[test]
    fn three_small_tokens() {
        let expected = vec![0x00, 0x00, 0x00, 0x40, 0x04];
        assert_eq!(pack_oracle(&[0, 1, 2]), expected);
        assert_eq!(pack_tokens(&toks(&[0, 1, 2])), expected);
        assert_eq!(unpack_tokens(&expected, 3).unwrap(), toks(&[0, 1, 2]));
    }

    #[test]
    fn out_of_range_reports_index() {
        let err = pack_values(&[1, 2, 8192]).unwrap_err();
        assert_eq!(err, BitError::TokenOutOfRange { index: 2, value: 8192 });
        assert!(SemanticToken::new(8192).is_err());
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(unpack_tokens(&[0xFF], 1), Err(BitError::LengthMismatch { expected: 2, actual: 1, .. })));
    }

    #[test]
    fn pad_bits_strict_vs_lenient() {
        assert_eq!(unpack_tokens(&[0xFF, 0xF9], 1), Err(BitError::NonzeroPadding { count: 1 }));
        let (t, clean) = unpack_tokens_lenient(&[0xFF, 0xF9], 1).unwrap();
        assert_eq!(t, toks(&[8191]));
        assert!(!clean);
    }

    #[test]
    fn bit_writer_mixed_widths() {
        let mut w = BitWriter::new();
        w.write(0x001, 12);
        w.write(0, 20);
        assert_eq!(w.finish(), vec![0x00, 0x10, 0x00, 0x00]);
    }

    proptest! {
        #[test]
        fn roundtrip(values in proptest::collection::vec(0u16..8192, 0..200)) {
            let t = toks(&values);
            let packed = pack_tokens(&t);
            prop_assert_eq!(packed.len(), packed_len(values.len()));
            prop_assert_eq!(&packed, &pack_oracle(&values));
            prop_assert_eq!(unpack_tokens(&packed, values.len()).unwrap(), t);
        }
    }
}
