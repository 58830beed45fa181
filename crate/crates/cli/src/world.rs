//! World preparation: materialize descriptor sequences from the configured
//! source, train the vocabulary, sample rotations, and encode everything.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use hm4_core::descriptors::{
    generate_synthetic_world, kmeans_vocabulary, load_descriptor_file, LocalDescriptorSet,
    NormPolicy, Vocabulary,
};
use hm4_core::polyvlad::{encode_image, sample_rotations, RotationBank};
use hm4_core::{CodeGeometry, Error, PolyCode, Result};

use crate::config::{ParamBlock, ScenarioConfig, WorldSource};

/// One encoded query replay with its ground-truth positions.
pub struct QuerySequence {
    pub codes: Vec<PolyCode>,
    pub positions: Vec<f64>,
}

/// Everything both scenario arms consume.
pub struct PreparedWorld {
    pub geometry: CodeGeometry,
    pub vocab: Vocabulary,
    pub bank: RotationBank,
    /// Database sequences in storage order.
    pub db_sequences: Vec<Vec<PolyCode>>,
    /// Ground-truth position of every database frame, flattened in storage
    /// order.
    pub db_positions: Vec<f64>,
    pub queries: Vec<QuerySequence>,
}

/// Descriptor sequences plus per-frame positions, before encoding.
pub struct RawWorld {
    pub database: Vec<Vec<LocalDescriptorSet>>,
    pub db_positions: Vec<Vec<f64>>,
    pub queries: Vec<Vec<LocalDescriptorSet>>,
    pub query_positions: Vec<Vec<f64>>,
}

pub fn materialize(cfg: &ScenarioConfig) -> Result<RawWorld> {
    match &cfg.world {
        WorldSource::Synthetic(world_cfg) => {
            let world = generate_synthetic_world(world_cfg)?;
            let gt = &world.ground_truth;
            let db_positions = world
                .database
                .iter()
                .map(|seq| {
                    seq.iter()
                        .map(|s| gt.position(s.image_id()).expect("generated frame"))
                        .collect()
                })
                .collect();
            let query_positions = world
                .queries
                .iter()
                .map(|seq| {
                    seq.iter()
                        .map(|s| gt.position(s.image_id()).expect("generated frame"))
                        .collect()
                })
                .collect();
            Ok(RawWorld {
                database: world.database,
                db_positions,
                queries: world.queries,
                query_positions,
            })
        }
        WorldSource::Descriptors(d) => {
            let policy = if d.renormalize {
                NormPolicy::Renormalize
            } else {
                NormPolicy::Reject
            };
            let mut database = Vec::with_capacity(d.database.len());
            for path in &d.database {
                database.push(load_descriptor_file(path, policy)?);
            }
            let mut queries = Vec::with_capacity(d.queries.len());
            for path in &d.queries {
                queries.push(load_descriptor_file(path, policy)?);
            }
            let positions = match &d.positions {
                Some(p) => load_positions(p)?,
                None => HashMap::new(),
            };
            let lookup = |seq: usize, frame: usize| -> Result<f64> {
                positions
                    .get(&(seq as u32, frame as u32))
                    .copied()
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "no ground-truth position for sequence {seq} frame {frame}"
                        ))
                    })
            };
            let mut db_positions = Vec::new();
            for (s, seq) in database.iter().enumerate() {
                let mut pos = Vec::with_capacity(seq.len());
                for f in 0..seq.len() {
                    // database positions default to frame order when no file
                    // is given (queries then being absent, they are unused
                    // for accuracy)
                    pos.push(if d.positions.is_some() {
                        lookup(s, f)?
                    } else {
                        f as f64
                    });
                }
                db_positions.push(pos);
            }
            let mut query_positions = Vec::new();
            for (qi, seq) in queries.iter().enumerate() {
                let s = database.len() + qi;
                let mut pos = Vec::with_capacity(seq.len());
                for f in 0..seq.len() {
                    pos.push(lookup(s, f)?);
                }
                query_positions.push(pos);
            }
            Ok(RawWorld {
                database,
                db_positions,
                queries,
                query_positions,
            })
        }
    }
}

fn load_positions(path: &Path) -> Result<HashMap<(u32, u32), f64>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::Storage {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out = HashMap::new();
    for (lineno, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "{}:{}: expected sequence,frame,position_m",
                path.display(),
                lineno + 1
            )));
        }
        if lineno == 0 && fields[0].parse::<u32>().is_err() {
            continue; // header row
        }
        let seq: u32 = fields[0].parse().map_err(|_| bad_line(path, lineno))?;
        let frame: u32 = fields[1].parse().map_err(|_| bad_line(path, lineno))?;
        let pos: f64 = fields[2].parse().map_err(|_| bad_line(path, lineno))?;
        out.insert((seq, frame), pos);
    }
    Ok(out)
}

fn bad_line(path: &Path, lineno: usize) -> Error {
    Error::InvalidArgument(format!(
        "{}:{}: malformed positions row",
        path.display(),
        lineno + 1
    ))
}

/// Trains the vocabulary on a deterministic subsample of the database
/// descriptors.
pub fn train_vocabulary(
    database: &[Vec<LocalDescriptorSet>],
    params: &ParamBlock,
) -> Result<Vocabulary> {
    let mut pool: Vec<&[f32]> = Vec::new();
    for seq in database {
        for set in seq {
            for i in 0..set.len() {
                pool.push(set.descriptor(i));
            }
        }
    }
    if pool.is_empty() {
        return Err(Error::InvalidArgument(
            "database has no descriptors to train on".into(),
        ));
    }
    let stride = pool.len().div_ceil(params.vocab_pool_cap.max(1));
    let sampled: Vec<&[f32]> = pool.iter().step_by(stride.max(1)).copied().collect();
    kmeans_vocabulary(
        &sampled,
        params.vocab_size,
        params.kmeans_iters,
        params.vocab_seed(),
    )
}

fn encode_sequence(
    seq: &[LocalDescriptorSet],
    vocab: &Vocabulary,
    bank: &RotationBank,
) -> Result<Vec<PolyCode>> {
    seq.iter()
        .map(|set| encode_image(set, vocab, bank))
        .collect()
}

/// Full preparation: materialize, train, sample rotations, encode.
pub fn prepare(cfg: &ScenarioConfig) -> Result<PreparedWorld> {
    let raw = materialize(cfg)?;
    let feat_dim = raw
        .database
        .first()
        .and_then(|s| s.first())
        .map(|s| s.feat_dim())
        .ok_or_else(|| Error::InvalidArgument("empty database".into()))?;
    if feat_dim > u16::MAX as usize / 2 {
        return Err(Error::InvalidArgument("feat_dim too large".into()));
    }
    let params = &cfg.params;
    let vocab = train_vocabulary(&raw.database, params)?;
    let bank = sample_rotations(params.rotations, feat_dim, params.rotation_seed())?;
    let geometry = CodeGeometry {
        feat_dim: feat_dim as u16,
        vocab_size: params.vocab_size as u16,
        rotations: params.rotations as u16,
    };

    let mut db_sequences = Vec::with_capacity(raw.database.len());
    for seq in &raw.database {
        db_sequences.push(encode_sequence(seq, &vocab, &bank)?);
    }
    let db_positions: Vec<f64> = raw.db_positions.into_iter().flatten().collect();
    let mut queries = Vec::with_capacity(raw.queries.len());
    for (seq, positions) in raw.queries.iter().zip(raw.query_positions) {
        queries.push(QuerySequence {
            codes: encode_sequence(seq, &vocab, &bank)?,
            positions,
        });
    }
    Ok(PreparedWorld {
        geometry,
        vocab,
        bank,
        db_sequences,
        db_positions,
        queries,
    })
}
