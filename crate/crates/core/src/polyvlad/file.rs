//! Persistence for code databases, rotation banks and vocabularies.
//!
//! Code database (little-endian): magic `HM4C`, version u16 = 1, feat_dim
//! u16, vocab_size u16, rotations u16, code_len u32, image count u32; then
//! one fixed-width record per image with symbols packed at
//! `ceil(log2(2 * feat_dim))` bits each, padded to a byte boundary.

use std::fs;
use std::path::Path;

use super::code::{CodeGeometry, PolyCode};
use super::{Rotation, RotationBank};
use crate::bytes::{Reader, Writer};
use crate::descriptors::Vocabulary;
use crate::error::{Error, Result};

pub(crate) const CODE_MAGIC: &[u8; 4] = b"HM4C";
pub(crate) const CODE_VERSION: u16 = 1;
pub(crate) const CODE_HEADER_LEN: usize = 20;

const ROTATION_MAGIC: &[u8; 4] = b"HM4R";
const ROTATION_VERSION: u16 = 1;

const VOCAB_MAGIC: &[u8; 4] = b"HM4V";
const VOCAB_VERSION: u16 = 1;

pub(crate) fn encode_code_header(geometry: &CodeGeometry, count: u32) -> Vec<u8> {
    let mut w = Writer::new();
    w.magic(CODE_MAGIC)
        .u16(CODE_VERSION)
        .u16(geometry.feat_dim)
        .u16(geometry.vocab_size)
        .u16(geometry.rotations)
        .u32(geometry.code_len() as u32)
        .u32(count);
    w.into_vec()
}

pub(crate) fn decode_code_header(buf: &[u8]) -> Result<(CodeGeometry, u32)> {
    let mut r = Reader::new(buf);
    r.magic(CODE_MAGIC)?;
    let version = r.u16("version")?;
    if version != CODE_VERSION {
        return Err(Error::Format {
            offset: r.offset() - 2,
            msg: format!("unsupported code file version {version}"),
        });
    }
    let feat_dim = r.u16("feat_dim")?;
    let vocab_size = r.u16("vocab_size")?;
    let rotations = r.u16("rotations")?;
    let code_len = r.u32("code_len")?;
    let count = r.u32("image count")?;
    let geometry = CodeGeometry {
        feat_dim,
        vocab_size,
        rotations,
    };
    if feat_dim < 2 || vocab_size == 0 || rotations == 0 {
        return Err(Error::Format {
            offset: 6,
            msg: "degenerate code geometry".into(),
        });
    }
    if geometry.code_len() != code_len as usize {
        return Err(Error::Format {
            offset: 12,
            msg: format!(
                "code_len {code_len} does not match vocab_size * rotations = {}",
                geometry.code_len()
            ),
        });
    }
    Ok((geometry, count))
}

pub fn write_code_file(path: &Path, geometry: &CodeGeometry, codes: &[PolyCode]) -> Result<()> {
    let mut buf = encode_code_header(geometry, codes.len() as u32);
    for code in codes {
        if code.len() != geometry.code_len() || code.feat_dim() != geometry.feat_dim {
            return Err(Error::invalid("code does not match file geometry"));
        }
        buf.extend_from_slice(&code.pack());
    }
    fs::write(path, buf).map_err(|e| Error::storage(path, e))
}

pub fn read_code_file(path: &Path) -> Result<(CodeGeometry, Vec<PolyCode>)> {
    let buf = fs::read(path).map_err(|e| Error::storage(path, e))?;
    if buf.len() < CODE_HEADER_LEN {
        return Err(Error::Format {
            offset: buf.len(),
            msg: "truncated header".into(),
        });
    }
    let (geometry, count) = decode_code_header(&buf[..CODE_HEADER_LEN])?;
    let rec = geometry.record_bytes();
    let need = CODE_HEADER_LEN + rec * count as usize;
    if buf.len() < need {
        return Err(Error::Format {
            offset: buf.len(),
            msg: format!(
                "expected {need} bytes for {count} records, got {}",
                buf.len()
            ),
        });
    }
    let mut codes = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let start = CODE_HEADER_LEN + i * rec;
        codes.push(PolyCode::unpack(
            &buf[start..start + rec],
            geometry.feat_dim,
            geometry.code_len(),
        )?);
    }
    Ok((geometry, codes))
}

pub fn write_rotation_file(path: &Path, bank: &RotationBank) -> Result<()> {
    let d = bank.feat_dim();
    let mut w = Writer::new();
    w.magic(ROTATION_MAGIC)
        .u16(ROTATION_VERSION)
        .u16(d as u16)
        .u16(bank.len() as u16)
        .u64(bank.seed());
    for m in 0..bank.len() {
        for &x in bank.rotation(m).rows() {
            w.f64(x);
        }
    }
    fs::write(path, w.into_vec()).map_err(|e| Error::storage(path, e))
}

pub fn read_rotation_file(path: &Path) -> Result<RotationBank> {
    let buf = fs::read(path).map_err(|e| Error::storage(path, e))?;
    let mut r = Reader::new(&buf);
    r.magic(ROTATION_MAGIC)?;
    let version = r.u16("version")?;
    if version != ROTATION_VERSION {
        return Err(Error::Format {
            offset: r.offset() - 2,
            msg: format!("unsupported rotation file version {version}"),
        });
    }
    let d = r.u16("feat_dim")? as usize;
    let m = r.u16("rotations")? as usize;
    let seed = r.u64("seed")?;
    let mut rotations = Vec::with_capacity(m);
    for _ in 0..m {
        let mut rows = Vec::with_capacity(d * d);
        for _ in 0..d * d {
            rows.push(r.f64("rotation entry")?);
        }
        rotations.push(Rotation::from_rows(d, rows));
    }
    r.expect_end()?;
    Ok(RotationBank::from_parts(seed, rotations))
}

pub fn write_vocab_file(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut w = Writer::new();
    w.magic(VOCAB_MAGIC)
        .u16(VOCAB_VERSION)
        .u16(vocab.feat_dim() as u16)
        .u16(vocab.len() as u16);
    for l in 0..vocab.len() {
        for &x in vocab.center(l) {
            w.f64(x);
        }
    }
    fs::write(path, w.into_vec()).map_err(|e| Error::storage(path, e))
}

pub fn read_vocab_file(path: &Path) -> Result<Vocabulary> {
    let buf = fs::read(path).map_err(|e| Error::storage(path, e))?;
    let mut r = Reader::new(&buf);
    r.magic(VOCAB_MAGIC)?;
    let version = r.u16("version")?;
    if version != VOCAB_VERSION {
        return Err(Error::Format {
            offset: r.offset() - 2,
            msg: format!("unsupported vocabulary file version {version}"),
        });
    }
    let d = r.u16("feat_dim")? as usize;
    let l = r.u16("vocab_size")? as usize;
    let mut centers = Vec::with_capacity(l * d);
    for _ in 0..l * d {
        centers.push(r.f64("center value")?);
    }
    r.expect_end()?;
    Vocabulary::from_centers(d, centers)
}
