//! Bit-packed binary codes and the `USDB` code file.
//!
//! Bit `j` of a code lives in byte `j / 8` at bit position `j % 8`
//! (LSB-first). In memory codes are held as little-endian `u64` words so
//! the Hamming scan is a word-wise XOR + popcount; the byte view of the
//! words is exactly the on-disk layout.
//!
//! ```text
//! "USDB" | u32 version=1 | u32 n | u32 k | n x (u64 id, ceil(k/8) code bytes)
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::{self, Reader};

pub const CODE_MAGIC: [u8; 4] = *b"USDB";
pub const CODE_VERSION: u32 = 1;
pub const CODE_HEADER_LEN: usize = 16;

pub(crate) fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

pub(crate) fn bytes_for(bits: usize) -> usize {
    bits.div_ceil(8)
}

/// A single `k`-bit code.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitCode {
    bits: usize,
    words: Vec<u64>,
}

impl BitCode {
    pub fn zeros(bits: usize) -> Self {
        BitCode {
            bits,
            words: vec![0; words_for(bits)],
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut code = BitCode::zeros(bits.len());
        for (j, &b) in bits.iter().enumerate() {
            if b {
                code.set(j, true);
            }
        }
        code
    }

    /// Parses a string of `0`/`1` characters, bit 0 first.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::invalid(format!("bad code character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BitCode::from_bools(&bits))
    }

    /// Decodes `ceil(k/8)` LSB-first bytes, rejecting nonzero pad bits.
    pub fn from_bytes(bits: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != bytes_for(bits) {
            return Err(Error::DimensionMismatch {
                context: "code bytes",
                expected: bytes_for(bits),
                found: bytes.len(),
            });
        }
        let mut words = vec![0u64; words_for(bits)];
        for (i, &byte) in bytes.iter().enumerate() {
            words[i / 8] |= (byte as u64) << (8 * (i % 8));
        }
        let code = BitCode { bits, words };
        if !code.pad_is_zero() {
            return Err(Error::NonzeroPadBits {
                record: 0,
                bits,
                offset: 0,
            });
        }
        Ok(code)
    }

    /// Wraps `ceil(k/64)` packed words, rejecting nonzero pad bits.
    pub fn from_words(bits: usize, words: &[u64]) -> Result<Self> {
        if words.len() != words_for(bits) {
            return Err(Error::DimensionMismatch {
                context: "code words",
                expected: words_for(bits),
                found: words.len(),
            });
        }
        if !pad_is_zero(words, bits) {
            return Err(Error::NonzeroPadBits {
                record: 0,
                bits,
                offset: 0,
            });
        }
        Ok(BitCode {
            bits,
            words: words.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, j: usize) -> bool {
        assert!(j < self.bits, "bit {j} out of range for {}-bit code", self.bits);
        (self.words[j / 64] >> (j % 64)) & 1 == 1
    }

    pub fn set(&mut self, j: usize, value: bool) {
        assert!(j < self.bits, "bit {j} out of range for {}-bit code", self.bits);
        let mask = 1u64 << (j % 64);
        if value {
            self.words[j / 64] |= mask;
        } else {
            self.words[j / 64] &= !mask;
        }
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.bits).map(|j| self.get(j)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        words_to_bytes(&self.words, self.bits)
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn hamming(&self, other: &BitCode) -> u32 {
        debug_assert_eq!(self.bits, other.bits);
        hamming_words(&self.words, &other.words)
    }

    fn pad_is_zero(&self) -> bool {
        pad_is_zero(&self.words, self.bits)
    }
}

impl std::fmt::Display for BitCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for j in 0..self.bits {
            f.write_str(if self.get(j) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

fn pad_is_zero(words: &[u64], bits: usize) -> bool {
    let rem = bits % 64;
    rem == 0 || words.last().is_none_or(|w| w >> rem == 0)
}

fn words_to_bytes(words: &[u64], bits: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(bytes_for(bits));
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.truncate(bytes_for(bits));
    out
}

/// `n` packed `k`-bit codes with unique item ids. This is what gets
/// persisted and what the Hamming scan runs over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCodebook {
    bits: usize,
    words_per_code: usize,
    words: Vec<u64>,
    ids: Vec<u64>,
}

impl BinaryCodebook {
    /// Empty codebook for `bits`-bit codes.
    pub fn new(bits: usize) -> Self {
        BinaryCodebook {
            bits,
            words_per_code: words_for(bits),
            words: Vec::new(),
            ids: Vec::new(),
        }
    }

    /// Builds a codebook, rejecting ragged code lengths and duplicate ids.
    pub fn from_codes(codes: &[BitCode], ids: &[u64]) -> Result<Self> {
        if codes.len() != ids.len() {
            return Err(Error::DimensionMismatch {
                context: "codes vs ids",
                expected: codes.len(),
                found: ids.len(),
            });
        }
        let bits = codes.first().map_or(0, BitCode::len);
        let mut cb = BinaryCodebook::new(bits);
        let mut seen = HashSet::with_capacity(ids.len());
        for (code, &id) in codes.iter().zip(ids) {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
            cb.push_unchecked(code, id)?;
        }
        Ok(cb)
    }

    fn push_unchecked(&mut self, code: &BitCode, id: u64) -> Result<()> {
        if code.len() != self.bits {
            return Err(Error::DimensionMismatch {
                context: "code length",
                expected: self.bits,
                found: code.len(),
            });
        }
        self.words.extend_from_slice(code.words());
        self.ids.push(id);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub(crate) fn words_per_code(&self) -> usize {
        self.words_per_code
    }

    pub(crate) fn packed_words(&self) -> &[u64] {
        &self.words
    }

    pub fn code_words(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_code..(i + 1) * self.words_per_code]
    }

    pub fn code(&self, i: usize) -> BitCode {
        BitCode {
            bits: self.bits,
            words: self.code_words(i).to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, BitCode)> + '_ {
        (0..self.len()).map(move |i| (self.ids[i], self.code(i)))
    }

    pub fn encoded_len(&self) -> usize {
        CODE_HEADER_LEN + self.len() * (8 + bytes_for(self.bits))
    }
}

pub fn encode_codebook(cb: &BinaryCodebook) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(cb.encoded_len());
    out.extend_from_slice(&CODE_MAGIC);
    format::put_u32(&mut out, CODE_VERSION);
    format::put_u32(&mut out, format::header_u32("n", 8, cb.len())?);
    format::put_u32(&mut out, format::header_u32("k", 12, cb.bits)?);
    for i in 0..cb.len() {
        let words = cb.code_words(i);
        // pad bits are zero by construction; never write a violating file
        if !pad_is_zero(words, cb.bits) {
            return Err(Error::NonzeroPadBits {
                record: i,
                bits: cb.bits,
                offset: out.len() as u64 + 8,
            });
        }
        format::put_u64(&mut out, cb.ids[i]);
        out.extend_from_slice(&words_to_bytes(words, cb.bits));
    }
    Ok(out)
}

pub fn decode_codebook(bytes: &[u8]) -> Result<BinaryCodebook> {
    let mut r = Reader::new(bytes);
    r.magic(&CODE_MAGIC)?;
    r.version(CODE_VERSION)?;
    let n = r.u32()? as usize;
    let bits = r.u32()? as usize;
    let nbytes = bytes_for(bits);
    r.require(n as u64 * (8 + nbytes as u64))?;
    let mut cb = BinaryCodebook::new(bits);
    let mut seen = HashSet::with_capacity(n);
    for record in 0..n {
        let id = r.u64()?;
        let offset = r.offset();
        let code = BitCode::from_bytes(bits, r.take(nbytes)?).map_err(|e| match e {
            Error::NonzeroPadBits { bits, .. } => Error::NonzeroPadBits { record, bits, offset },
            other => other,
        })?;
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id));
        }
        cb.push_unchecked(&code, id)?;
    }
    r.finish()?;
    Ok(cb)
}

pub fn read_codebook(path: impl AsRef<Path>) -> Result<BinaryCodebook> {
    decode_codebook(&format::read_file(path.as_ref())?)
}

pub fn write_codebook(cb: &BinaryCodebook, path: impl AsRef<Path>) -> Result<()> {
    format::write_file(path.as_ref(), &encode_codebook(cb)?)
}
