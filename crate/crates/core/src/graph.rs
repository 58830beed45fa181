//! The topological map: a sparse row-stochastic transition matrix grown
//! sequence-by-sequence, plus the support-place submap extracted from it.
//!
//! Map file (little-endian): magic `HM4E`, version u16 = 1, place count
//! u64; then per row a nonzero count u32 followed by (column u32,
//! probability f64) pairs in ascending column order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bytes::{Reader, Writer};
use crate::error::{Error, Result};
use crate::polyvlad::ClusterModel;

const MAP_MAGIC: &[u8; 4] = b"HM4E";
const MAP_VERSION: u16 = 1;

/// Row sums must stay within this tolerance of 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Sign convention for the within-sequence transition profile. `Decay`
/// weights a displacement of `j - i` by `exp(-(j-i)^2 / delta^2)`; `Growth`
/// uses the positive exponent and is kept switchable for fidelity
/// experiments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentSign {
    #[default]
    Decay,
    Growth,
}

/// Sparse row-stochastic transition matrix over the stored places, with a
/// companion inbound-adjacency list for cheap column gathers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Vec<(u32, f64)>>,
    inbound: Vec<Vec<u32>>,
}

impl TransitionMatrix {
    /// An empty map with no places.
    pub fn new() -> Self {
        TransitionMatrix::default()
    }

    /// Builds a map from explicit sparse rows, validating shape, positivity
    /// and row-stochasticity.
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            let mut sum = 0.0;
            let mut prev: Option<u32> = None;
            for &(col, p) in row {
                if col as usize >= n {
                    return Err(Error::invalid(format!(
                        "row {i} references column {col} beyond N = {n}"
                    )));
                }
                if prev.is_some_and(|pc| pc >= col) {
                    return Err(Error::invalid(format!(
                        "row {i} columns are not strictly ascending"
                    )));
                }
                if p <= 0.0 {
                    return Err(Error::invalid(format!(
                        "row {i} stores non-positive entry {p} at column {col}"
                    )));
                }
                prev = Some(col);
                sum += p;
            }
            if !row.is_empty() && (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(format!("row {i} sums to {sum}, expected 1")));
            }
            if row.is_empty() {
                return Err(Error::invalid(format!("row {i} has no transitions")));
            }
        }
        let mut m = TransitionMatrix {
            rows,
            inbound: vec![Vec::new(); n],
        };
        m.rebuild_inbound();
        Ok(m)
    }

    fn rebuild_inbound(&mut self) {
        for l in &mut self.inbound {
            l.clear();
        }
        self.inbound.resize(self.rows.len(), Vec::new());
        for (i, row) in self.rows.iter().enumerate() {
            for &(col, _) in row {
                self.inbound[col as usize].push(i as u32);
            }
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[(u32, f64)])> {
        self.rows.iter().enumerate().map(|(i, r)| (i, r.as_slice()))
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self.rows[i].binary_search_by_key(&(j as u32), |&(c, _)| c) {
            Ok(pos) => self.rows[i][pos].1,
            Err(_) => 0.0,
        }
    }

    /// Sparse column gather via the inbound adjacency list.
    pub fn column(&self, j: usize) -> Vec<(u32, f64)> {
        self.inbound[j]
            .iter()
            .map(|&i| (i, self.entry(i as usize, j)))
            .collect()
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    pub fn in_degree(&self, j: usize) -> usize {
        self.inbound[j].len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Size of the serialized map, the unit of storage accounting.
    pub fn file_bytes(&self) -> usize {
        14 + self.rows.len() * 4 + self.nnz() * 12
    }

    /// Block-diagonal append of a newly initialized sequence map. Place ids
    /// of the existing map are stable; the appended sequence occupies ids
    /// `n()..n() + seq.n()`.
    pub fn append_sequence(&mut self, seq: TransitionMatrix) {
        let offset = self.n() as u32;
        for row in seq.rows {
            self.rows
                .push(row.into_iter().map(|(c, p)| (c + offset, p)).collect());
        }
        for inl in seq.inbound {
            self.inbound
                .push(inl.into_iter().map(|i| i + offset).collect());
        }
    }

    /// Inserts match edges between localized query frames and their matched
    /// places: the new edges take the pre-update diagonal values of their
    /// rows, then every touched row is renormalized. Self-matches are
    /// skipped. `prev_n` is the place count before the sequence of length
    /// covering the `t` values was appended.
    pub fn link_matches(&mut self, prev_n: usize, matches: &[(usize, usize)]) -> Result<()> {
        let n = self.n();
        for &(t, place) in matches {
            let q = prev_n + t;
            if q >= n || place >= n {
                return Err(Error::invalid(format!(
                    "match ({t}, {place}) out of range (prev_n = {prev_n}, N = {n})"
                )));
            }
        }
        let mut diag0: HashMap<usize, f64> = HashMap::new();
        let mut capture = |m: &TransitionMatrix, x: usize| -> f64 {
            *diag0.entry(x).or_insert_with(|| m.entry(x, x))
        };
        let mut touched: Vec<usize> = Vec::new();
        let match_list: Vec<(usize, usize)> = matches
            .iter()
            .map(|&(t, place)| (prev_n + t, place))
            .filter(|&(q, place)| q != place)
            .collect();
        for &(q, place) in &match_list {
            let dq = capture(self, q);
            let dp = capture(self, place);
            if dq > 0.0 {
                self.insert_entry(q, place, dq);
                touched.push(q);
            }
            if dp > 0.0 {
                self.insert_entry(place, q, dp);
                touched.push(place);
            }
        }
        touched.sort_unstable();
        touched.dedup();
        for i in touched {
            self.renormalize_row(i);
        }
        Ok(())
    }

    fn insert_entry(&mut self, i: usize, j: usize, p: f64) {
        let row = &mut self.rows[i];
        match row.binary_search_by_key(&(j as u32), |&(c, _)| c) {
            Ok(pos) => row[pos].1 = p,
            Err(pos) => {
                row.insert(pos, (j as u32, p));
                let inl = &mut self.inbound[j];
                if let Err(ipos) = inl.binary_search(&(i as u32)) {
                    inl.insert(ipos, i as u32);
                }
            }
        }
    }

    fn renormalize_row(&mut self, i: usize) {
        let sum: f64 = self.rows[i].iter().map(|&(_, p)| p).sum();
        if sum > 0.0 {
            for (_, p) in &mut self.rows[i] {
                *p /= sum;
            }
        }
    }
}

/// Within-sequence transition profile: frame `i` reaches frames
/// `i..=i + v_max` with Gaussian weight over the displacement, each row
/// normalized to sum 1.
pub fn init_sequence_transitions(frames: usize, v_max: usize, delta: f64) -> TransitionMatrix {
    init_sequence_transitions_signed(frames, v_max, delta, ExponentSign::Decay)
}

pub fn init_sequence_transitions_signed(
    frames: usize,
    v_max: usize,
    delta: f64,
    sign: ExponentSign,
) -> TransitionMatrix {
    assert!(frames >= 1, "a sequence has at least one frame");
    assert!(delta > 0.0, "delta must be positive");
    let mut rows = Vec::with_capacity(frames);
    for i in 0..frames {
        let hi = (i + v_max).min(frames - 1);
        let mut row: Vec<(u32, f64)> = (i..=hi)
            .map(|j| {
                let disp = (j - i) as f64;
                let exponent = disp * disp / (delta * delta);
                let w = match sign {
                    ExponentSign::Decay => (-exponent).exp(),
                    ExponentSign::Growth => exponent.exp(),
                };
                (j as u32, w)
            })
            .collect();
        let sum: f64 = row.iter().map(|&(_, w)| w).sum();
        for (_, w) in &mut row {
            *w /= sum;
        }
        rows.push(row);
    }
    let mut m = TransitionMatrix {
        inbound: vec![Vec::new(); frames],
        rows,
    };
    m.rebuild_inbound();
    m
}

/// The cluster member with the most outgoing transitions, smallest index on
/// ties.
pub fn support_place(e: &TransitionMatrix, members: &[u32]) -> Result<u32> {
    let mut best: Option<(u32, usize)> = None;
    for &i in members {
        if i as usize >= e.n() {
            return Err(Error::invalid(format!(
                "member {i} beyond place count {}",
                e.n()
            )));
        }
        let deg = e.out_degree(i as usize);
        best = match best {
            None => Some((i, deg)),
            Some((bi, bd)) if deg > bd || (deg == bd && i < bi) => Some((i, deg)),
            keep => keep,
        };
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::invalid("support place of an empty cluster"))
}

/// The coarse transition model: one sparse column of the map per cluster,
/// taken at that cluster's support place.
#[derive(Clone, Debug, PartialEq)]
pub struct SubMap {
    support_places: Vec<u32>,
    columns: Vec<Vec<(u32, f64)>>,
}

impl SubMap {
    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn support_places(&self) -> &[u32] {
        &self.support_places
    }

    pub fn column(&self, k: usize) -> &[(u32, f64)] {
        &self.columns[k]
    }

    pub fn from_parts(support_places: Vec<u32>, columns: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        if support_places.len() != columns.len() {
            return Err(Error::invalid("support place and column counts differ"));
        }
        Ok(SubMap {
            support_places,
            columns,
        })
    }

    /// Logical size for memory accounting.
    pub fn resident_bytes(&self) -> usize {
        let nnz: usize = self.columns.iter().map(|c| c.len()).sum();
        nnz * 12 + self.k() * 8
    }
}

/// Extracts the submap for the given clustering: per cluster, its support
/// place and the map column at that place.
pub fn build_submap(e: &TransitionMatrix, clusters: &ClusterModel) -> Result<SubMap> {
    let mut member_lists: Vec<Vec<u32>> = vec![Vec::new(); clusters.k()];
    for (i, &a) in clusters.assignments().iter().enumerate() {
        member_lists[a as usize].push(i as u32);
    }
    let mut support_places = Vec::with_capacity(clusters.k());
    let mut columns = Vec::with_capacity(clusters.k());
    for members in &member_lists {
        let p = support_place(e, members)?;
        support_places.push(p);
        columns.push(e.column(p as usize));
    }
    Ok(SubMap {
        support_places,
        columns,
    })
}

pub fn write_map_file(path: &Path, e: &TransitionMatrix) -> Result<()> {
    let mut w = Writer::new();
    w.magic(MAP_MAGIC).u16(MAP_VERSION).u64(e.n() as u64);
    for (_, row) in e.rows() {
        w.u32(row.len() as u32);
        for &(col, p) in row {
            w.u32(col).f64(p);
        }
    }
    fs::write(path, w.into_vec()).map_err(|e| Error::storage(path, e))
}

pub fn read_map_file(path: &Path) -> Result<TransitionMatrix> {
    let buf = fs::read(path).map_err(|e| Error::storage(path, e))?;
    let mut r = Reader::new(&buf);
    r.magic(MAP_MAGIC)?;
    let version = r.u16("version")?;
    if version != MAP_VERSION {
        return Err(Error::Format {
            offset: r.offset() - 2,
            msg: format!("unsupported map file version {version}"),
        });
    }
    let n = r.u64("place count")? as usize;
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let count = r.u32("row nonzero count")? as usize;
        let mut row = Vec::with_capacity(count);
        for _ in 0..count {
            let col = r.u32("column")?;
            let p = r.f64("probability")?;
            row.push((col, p));
        }
        rows.push(row);
    }
    r.expect_end()?;
    TransitionMatrix::from_rows(rows).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::Format {
            offset: buf.len(),
            msg,
        },
        other => other,
    })
}
