//! The compressed image signature: a categorical vector of polytope vertex
//! indices, one per (vocabulary cell, rotation) pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a code database: local-feature dimensionality, vocabulary size
/// and rotation count. Every code produced under one geometry has length
/// `vocab_size * rotations` with symbols in `0..2*feat_dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeGeometry {
    pub feat_dim: u16,
    pub vocab_size: u16,
    pub rotations: u16,
}

impl CodeGeometry {
    pub fn code_len(&self) -> usize {
        self.vocab_size as usize * self.rotations as usize
    }

    /// Bits needed per symbol: the bit length of `2*feat_dim - 1`.
    pub fn bits_per_code(&self) -> u32 {
        bits_for_feat_dim(self.feat_dim)
    }

    /// Packed size of one code vector in bits, before byte padding.
    pub fn packed_bits(&self) -> usize {
        self.code_len() * self.bits_per_code() as usize
    }

    /// Fixed record width of one packed code vector, padded to a byte
    /// boundary. This is the unit of storage-transfer accounting.
    pub fn record_bytes(&self) -> usize {
        self.packed_bits().div_ceil(8)
    }
}

fn bits_for_feat_dim(feat_dim: u16) -> u32 {
    let max_symbol = 2 * feat_dim as u32 - 1;
    u32::BITS - max_symbol.leading_zeros()
}

/// A compressed image signature: `len()` polytope vertex indices, each in
/// `{0, .., 2*feat_dim - 1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolyCode {
    feat_dim: u16,
    codes: Vec<u16>,
}

impl PolyCode {
    pub fn new(codes: Vec<u16>, feat_dim: u16) -> Result<Self> {
        if feat_dim < 2 {
            return Err(Error::invalid("feat_dim must be at least 2"));
        }
        if codes.is_empty() {
            return Err(Error::invalid("empty code vector"));
        }
        let bound = 2 * feat_dim;
        if let Some(bad) = codes.iter().position(|&c| c >= bound) {
            return Err(Error::invalid(format!(
                "code {} at position {bad} out of range (< {bound})",
                codes[bad]
            )));
        }
        Ok(PolyCode { feat_dim, codes })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn feat_dim(&self) -> u16 {
        self.feat_dim
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn bits_per_code(&self) -> u32 {
        bits_for_feat_dim(self.feat_dim)
    }

    /// Packed size in bits (no byte padding).
    pub fn packed_bits(&self) -> usize {
        self.len() * self.bits_per_code() as usize
    }

    /// Packed size in bytes, padded to a byte boundary.
    pub fn record_bytes(&self) -> usize {
        self.packed_bits().div_ceil(8)
    }

    /// Packs the symbols LSB-first into a byte buffer of exactly
    /// `record_bytes()` bytes. Symbols are at most 16 bits wide, so each
    /// straddles no more than three bytes.
    pub fn pack(&self) -> Vec<u8> {
        let bits = self.bits_per_code() as usize;
        let mut out = vec![0u8; self.record_bytes() + 2];
        for (i, &c) in self.codes.iter().enumerate() {
            let offset = i * bits;
            let byte = offset >> 3;
            let word = (c as u32) << (offset & 7);
            out[byte] |= word as u8;
            out[byte + 1] |= (word >> 8) as u8;
            out[byte + 2] |= (word >> 16) as u8;
        }
        out.truncate(self.record_bytes());
        out
    }

    /// Inverse of [`PolyCode::pack`] for a known geometry.
    pub fn unpack(buf: &[u8], feat_dim: u16, code_len: usize) -> Result<Self> {
        let bits = bits_for_feat_dim(feat_dim) as usize;
        let need = (code_len * bits).div_ceil(8);
        if buf.len() < need {
            return Err(Error::Format {
                offset: buf.len(),
                msg: format!("packed code needs {need} bytes, got {}", buf.len()),
            });
        }
        let mask = (1u32 << bits) - 1;
        let mut codes = Vec::with_capacity(code_len);
        for i in 0..code_len {
            let offset = i * bits;
            let byte = offset >> 3;
            let b0 = buf[byte] as u32;
            let b1 = *buf.get(byte + 1).unwrap_or(&0) as u32;
            let b2 = *buf.get(byte + 2).unwrap_or(&0) as u32;
            let word = b0 | (b1 << 8) | (b2 << 16);
            codes.push(((word >> (offset & 7)) & mask) as u16);
        }
        PolyCode::new(codes, feat_dim)
    }
}

/// Number of positions at which two equal-length code vectors agree.
pub fn matching_positions(a: &PolyCode, b: &PolyCode) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "code length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.feat_dim != b.feat_dim {
        return Err(Error::invalid(format!(
            "feat_dim mismatch: {} vs {}",
            a.feat_dim, b.feat_dim
        )));
    }
    Ok(a.codes.iter().zip(&b.codes).filter(|(x, y)| x == y).count())
}

/// Mismatch fraction `1 - matches / len` between two code vectors. On
/// fixed-length categorical vectors this is a metric.
pub fn jaccard_distance(a: &PolyCode, b: &PolyCode) -> Result<f64> {
    let matches = matching_positions(a, b)?;
    Ok(1.0 - matches as f64 / a.len() as f64)
}
