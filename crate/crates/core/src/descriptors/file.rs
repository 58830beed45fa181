//! Descriptor file format.
//!
//! Little-endian layout: magic `HM4D`, version u16 = 1, feat_dim u16, image
//! count u32; then per image a descriptor count u32 followed by
//! `count * feat_dim` f32 values.

use std::fs;
use std::path::Path;

use super::{l2_norm_f32, ImageId, LocalDescriptorSet};
use crate::bytes::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HM4D";
const VERSION: u16 = 1;

/// What to do with descriptors whose norm deviates from 1 by more than
/// [`NORM_TOLERANCE`] on load.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormPolicy {
    #[default]
    Reject,
    Renormalize,
}

pub fn write_descriptor_file(path: &Path, sets: &[LocalDescriptorSet]) -> Result<()> {
    let feat_dim = match sets.first() {
        Some(s) => s.feat_dim(),
        None => return Err(Error::invalid("cannot write an empty descriptor file")),
    };
    if sets.iter().any(|s| s.feat_dim() != feat_dim) {
        return Err(Error::invalid("descriptor sets have mixed feat_dim"));
    }
    let mut w = Writer::new();
    w.magic(MAGIC)
        .u16(VERSION)
        .u16(feat_dim as u16)
        .u32(sets.len() as u32);
    for set in sets {
        w.u32(set.len() as u32);
        for desc in set.iter() {
            for &x in desc {
                w.f32(x);
            }
        }
    }
    fs::write(path, w.into_vec()).map_err(|e| Error::storage(path, e))
}

/// Loads a descriptor file. Frames are numbered in file order under
/// sequence id 0; callers renumber when stitching multiple files.
pub fn load_descriptor_file(path: &Path, policy: NormPolicy) -> Result<Vec<LocalDescriptorSet>> {
    let buf = fs::read(path).map_err(|e| Error::storage(path, e))?;
    let mut r = Reader::new(&buf);
    r.magic(MAGIC)?;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: r.offset() - 2,
            msg: format!("unsupported version {version}"),
        });
    }
    let feat_dim = r.u16("feat_dim")? as usize;
    if feat_dim == 0 {
        return Err(Error::Format {
            offset: r.offset() - 2,
            msg: "feat_dim is zero".into(),
        });
    }
    let images = r.u32("image count")?;
    let mut sets = Vec::with_capacity(images as usize);
    for frame in 0..images {
        let count = r.u32("descriptor count")? as usize;
        let mut data = Vec::with_capacity(count * feat_dim);
        for _ in 0..count * feat_dim {
            data.push(r.f32("descriptor value")?);
        }
        if policy == NormPolicy::Renormalize {
            for desc in data.chunks_exact_mut(feat_dim) {
                let norm = l2_norm_f32(desc);
                if norm > 1e-9 && (norm - 1.0).abs() > 1e-6 {
                    for x in desc.iter_mut() {
                        *x /= norm;
                    }
                }
            }
        }
        // `new` enforces the norm gate, which is the Reject behavior.
        sets.push(LocalDescriptorSet::new(
            ImageId::new(0, frame),
            feat_dim,
            data,
        )?);
    }
    r.expect_end()?;
    Ok(sets)
}
