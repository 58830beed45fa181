//! Two-tiered memory: a disk-backed passive store holding every code and
//! the full map, and a bounded active memory holding the coarse model plus
//! the codes of the current promising places, with byte-accurate transfer
//! accounting.
//!
//! Store directory layout: `codes.hm4c` (fixed-width records, random
//! access), `map.hm4e`, `centroids.hm4c`, `submap.hm4e`, `meta.json`.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bytes::{Reader, Writer};
use crate::error::{Error, Result};
use crate::graph::{read_map_file, write_map_file, SubMap, TransitionMatrix};
use crate::hmm::{ActiveTransition, PromisingSet};
use crate::invindex::{build_index, InvertedIndex};
use crate::polyvlad::file::{decode_code_header, encode_code_header, CODE_HEADER_LEN};
use crate::polyvlad::{read_code_file, write_code_file, ClusterModel, CodeGeometry, PolyCode};

const SUBMAP_MAGIC: &[u8; 4] = b"HM4E";
const SUBMAP_VERSION: u16 = 1;

/// Centroids plus the support-place submap: everything active memory needs
/// to reason about places it has not fetched.
#[derive(Clone, Debug)]
pub struct CoarseModel {
    pub clusters: ClusterModel,
    pub submap: SubMap,
}

impl CoarseModel {
    pub fn new(clusters: ClusterModel, submap: SubMap) -> Result<Self> {
        if clusters.k() != submap.k() {
            return Err(Error::invalid(format!(
                "cluster count {} does not match submap column count {}",
                clusters.k(),
                submap.k()
            )));
        }
        Ok(CoarseModel { clusters, submap })
    }

    pub fn k(&self) -> usize {
        self.clusters.k()
    }
}

#[derive(Serialize, Deserialize)]
struct StoreMeta {
    geometry: CodeGeometry,
    sequences: Vec<(u64, u64)>,
    k: u32,
    support_places: Vec<u32>,
    assignments: Vec<u32>,
    #[serde(default)]
    params: serde_json::Value,
}

/// Record-addressable long-term storage: all codes, the full map, and the
/// persisted coarse model. Any code is readable without loading the
/// database.
pub struct PassiveStore {
    dir: PathBuf,
    geometry: CodeGeometry,
    file: File,
    count: u64,
    sequences: Vec<(u64, u64)>,
    map: TransitionMatrix,
    meta_k: u32,
    meta_support: Vec<u32>,
    meta_assignments: Vec<u32>,
    params: serde_json::Value,
    read_delay: Duration,
    records_read: std::cell::Cell<u64>,
}

impl PassiveStore {
    pub fn create(dir: &Path, geometry: CodeGeometry) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::storage(dir, e))?;
        let codes_path = dir.join("codes.hm4c");
        let mut file = OpenOptions::new()
            .create(true)
            .truncate(true)
            .read(true)
            .write(true)
            .open(&codes_path)
            .map_err(|e| Error::storage(&codes_path, e))?;
        file.write_all(&encode_code_header(&geometry, 0))
            .map_err(|e| Error::storage(&codes_path, e))?;
        let store = PassiveStore {
            dir: dir.to_path_buf(),
            geometry,
            file,
            count: 0,
            sequences: Vec::new(),
            map: TransitionMatrix::new(),
            meta_k: 0,
            meta_support: Vec::new(),
            meta_assignments: Vec::new(),
            params: serde_json::Value::Null,
            read_delay: Duration::ZERO,
            records_read: std::cell::Cell::new(0),
        };
        store.write_meta()?;
        store.save_map()?;
        Ok(store)
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta_raw = fs::read(&meta_path).map_err(|e| Error::storage(&meta_path, e))?;
        let meta: StoreMeta = serde_json::from_slice(&meta_raw).map_err(|e| Error::Format {
            offset: 0,
            msg: format!("meta.json: {e}"),
        })?;
        let codes_path = dir.join("codes.hm4c");
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(&codes_path)
            .map_err(|e| Error::storage(&codes_path, e))?;
        let mut header = [0u8; CODE_HEADER_LEN];
        file.read_exact(&mut header)
            .map_err(|e| Error::storage(&codes_path, e))?;
        let (geometry, count) = decode_code_header(&header)?;
        if geometry != meta.geometry {
            return Err(Error::Format {
                offset: 0,
                msg: "codes.hm4c geometry disagrees with meta.json".into(),
            });
        }
        let map = read_map_file(&dir.join("map.hm4e"))?;
        Ok(PassiveStore {
            dir: dir.to_path_buf(),
            geometry,
            file,
            count: count as u64,
            sequences: meta.sequences,
            map,
            meta_k: meta.k,
            meta_support: meta.support_places,
            meta_assignments: meta.assignments,
            params: meta.params,
            read_delay: Duration::ZERO,
            records_read: std::cell::Cell::new(0),
        })
    }

    fn write_meta(&self) -> Result<()> {
        let meta = StoreMeta {
            geometry: self.geometry,
            sequences: self.sequences.clone(),
            k: self.meta_k,
            support_places: self.meta_support.clone(),
            assignments: self.meta_assignments.clone(),
            params: self.params.clone(),
        };
        let path = self.dir.join("meta.json");
        let tmp = self.dir.join("meta.json.tmp");
        let body = serde_json::to_vec_pretty(&meta).expect("meta serializes");
        fs::write(&tmp, body).map_err(|e| Error::storage(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::storage(&path, e))?;
        Ok(())
    }

    pub fn geometry(&self) -> CodeGeometry {
        self.geometry
    }

    pub fn record_bytes(&self) -> usize {
        self.geometry.record_bytes()
    }

    pub fn code_count(&self) -> u64 {
        self.count
    }

    pub fn sequences(&self) -> &[(u64, u64)] {
        &self.sequences
    }

    /// Simulated per-record fetch latency for scaling experiments.
    pub fn set_read_delay(&mut self, delay: Duration) {
        self.read_delay = delay;
    }

    /// Cumulative records served to active memory.
    pub fn records_read(&self) -> u64 {
        self.records_read.get()
    }

    /// Size of the stored database: code records plus the serialized map.
    pub fn store_bytes(&self) -> u64 {
        CODE_HEADER_LEN as u64
            + self.count * self.record_bytes() as u64
            + self.map.file_bytes() as u64
    }

    /// Appends a sequence of codes; ids are contiguous and stable. Existing
    /// records are never rewritten.
    pub fn put_sequence(&mut self, codes: &[PolyCode]) -> Result<std::ops::Range<u64>> {
        let rec = self.record_bytes();
        let mut payload = Vec::with_capacity(codes.len() * rec);
        for code in codes {
            if code.len() != self.geometry.code_len() || code.feat_dim() != self.geometry.feat_dim {
                return Err(Error::invalid("code does not match store geometry"));
            }
            payload.extend_from_slice(&code.pack());
        }
        let start = self.count;
        let offset = CODE_HEADER_LEN as u64 + start * rec as u64;
        let codes_path = self.dir.join("codes.hm4c");
        self.file
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::storage(&codes_path, e))?;
        self.file
            .write_all(&payload)
            .map_err(|e| Error::storage(&codes_path, e))?;
        self.count += codes.len() as u64;
        let header = encode_code_header(&self.geometry, self.count as u32);
        self.file
            .write_all_at(&header, 0)
            .map_err(|e| Error::storage(&codes_path, e))?;
        self.sequences.push((start, self.count));
        self.write_meta()?;
        Ok(start..self.count)
    }

    /// Random-access read of one stored code.
    pub fn get_code(&self, id: u64) -> Result<PolyCode> {
        if id >= self.count {
            return Err(Error::NotFound(id));
        }
        let rec = self.record_bytes();
        let mut buf = vec![0u8; rec];
        let offset = CODE_HEADER_LEN as u64 + id * rec as u64;
        self.file
            .read_exact_at(&mut buf, offset)
            .map_err(|e| Error::storage(self.dir.join("codes.hm4c"), e))?;
        if !self.read_delay.is_zero() {
            std::thread::sleep(self.read_delay);
        }
        self.records_read.set(self.records_read.get() + 1);
        PolyCode::unpack(&buf, self.geometry.feat_dim, self.geometry.code_len())
    }

    pub fn get_codes(&self, ids: &[u32]) -> Result<Vec<PolyCode>> {
        ids.iter().map(|&id| self.get_code(id as u64)).collect()
    }

    pub fn map(&self) -> &TransitionMatrix {
        &self.map
    }

    /// Exclusive access for the update phase; callers persist with
    /// [`PassiveStore::save_map`] afterwards.
    pub fn map_mut(&mut self) -> &mut TransitionMatrix {
        &mut self.map
    }

    pub fn save_map(&self) -> Result<()> {
        let path = self.dir.join("map.hm4e");
        let tmp = self.dir.join("map.hm4e.tmp");
        write_map_file(&tmp, &self.map)?;
        fs::rename(&tmp, &path).map_err(|e| Error::storage(&path, e))?;
        Ok(())
    }

    pub fn set_params(&mut self, params: serde_json::Value) -> Result<()> {
        self.params = params;
        self.write_meta()
    }

    pub fn params(&self) -> &serde_json::Value {
        &self.params
    }

    /// Persists centroids, submap and cluster assignments atomically
    /// (write-new-then-rename per file).
    pub fn save_coarse(&mut self, coarse: &CoarseModel) -> Result<()> {
        let centroids_path = self.dir.join("centroids.hm4c");
        let centroids_tmp = self.dir.join("centroids.hm4c.tmp");
        write_code_file(&centroids_tmp, &self.geometry, coarse.clusters.centroids())?;
        fs::rename(&centroids_tmp, &centroids_path)
            .map_err(|e| Error::storage(&centroids_path, e))?;

        let submap_path = self.dir.join("submap.hm4e");
        let submap_tmp = self.dir.join("submap.hm4e.tmp");
        write_submap_file(&submap_tmp, &coarse.submap)?;
        fs::rename(&submap_tmp, &submap_path).map_err(|e| Error::storage(&submap_path, e))?;

        self.meta_k = coarse.k() as u32;
        self.meta_support = coarse.submap.support_places().to_vec();
        self.meta_assignments = coarse.clusters.assignments().to_vec();
        self.write_meta()
    }

    pub fn load_coarse(&self) -> Result<CoarseModel> {
        let (geometry, centroids) = read_code_file(&self.dir.join("centroids.hm4c"))?;
        if geometry != self.geometry {
            return Err(Error::Format {
                offset: 0,
                msg: "centroids.hm4c geometry disagrees with store".into(),
            });
        }
        let columns = read_submap_file(&self.dir.join("submap.hm4e"))?;
        let submap = SubMap::from_parts(self.meta_support.clone(), columns)?;
        let clusters = ClusterModel::from_parts(self.meta_assignments.clone(), centroids)?;
        CoarseModel::new(clusters, submap)
    }
}

fn write_submap_file(path: &Path, submap: &SubMap) -> Result<()> {
    let mut w = Writer::new();
    w.magic(SUBMAP_MAGIC)
        .u16(SUBMAP_VERSION)
        .u64(submap.k() as u64);
    for k in 0..submap.k() {
        let col = submap.column(k);
        w.u32(col.len() as u32);
        for &(row, p) in col {
            w.u32(row).f64(p);
        }
    }
    fs::write(path, w.into_vec()).map_err(|e| Error::storage(path, e))
}

fn read_submap_file(path: &Path) -> Result<Vec<Vec<(u32, f64)>>> {
    let buf = fs::read(path).map_err(|e| Error::storage(path, e))?;
    let mut r = Reader::new(&buf);
    r.magic(SUBMAP_MAGIC)?;
    let version = r.u16("version")?;
    if version != SUBMAP_VERSION {
        return Err(Error::Format {
            offset: r.offset() - 2,
            msg: format!("unsupported submap version {version}"),
        });
    }
    let k = r.u64("column count")? as usize;
    let mut columns = Vec::with_capacity(k);
    for _ in 0..k {
        let count = r.u32("column nonzero count")? as usize;
        let mut col = Vec::with_capacity(count);
        for _ in 0..count {
            let row = r.u32("row")?;
            let p = r.f64("probability")?;
            col.push((row, p));
        }
        columns.push(col);
    }
    r.expect_end()?;
    Ok(columns)
}

/// Result of one active-memory sync.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SyncStats {
    pub fetched: usize,
    pub evicted: usize,
    /// Code payload moved from passive storage, in record bytes.
    pub bytes: usize,
}

/// The bounded fast tier: coarse model, inverted index, the codes of the
/// current promising places, and the active transition columns.
pub struct ActiveMemory {
    geometry: CodeGeometry,
    clusters: ClusterModel,
    submap: SubMap,
    index: InvertedIndex,
    resident: BTreeMap<u32, PolyCode>,
    eac: ActiveTransition,
}

impl ActiveMemory {
    pub fn new(geometry: CodeGeometry, coarse: CoarseModel) -> Result<Self> {
        let index = build_index(coarse.clusters.centroids())?;
        Ok(ActiveMemory {
            geometry,
            clusters: coarse.clusters,
            submap: coarse.submap,
            index,
            resident: BTreeMap::new(),
            eac: ActiveTransition::empty(),
        })
    }

    pub fn k(&self) -> usize {
        self.clusters.k()
    }

    pub fn clusters(&self) -> &ClusterModel {
        &self.clusters
    }

    pub fn submap(&self) -> &SubMap {
        &self.submap
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn resident(&self, id: u32) -> Option<&PolyCode> {
        self.resident.get(&id)
    }

    pub fn resident_ids(&self) -> Vec<u32> {
        self.resident.keys().copied().collect()
    }

    pub fn resident_count(&self) -> usize {
        self.resident.len()
    }

    pub fn set_active_transition(&mut self, eac: ActiveTransition) {
        self.eac = eac;
    }

    pub fn active_transition(&self) -> &ActiveTransition {
        &self.eac
    }

    /// Makes the resident set equal to the promising set: fetches exactly
    /// the missing codes from passive storage and evicts the rest.
    pub fn sync(&mut self, promising: &PromisingSet, ps: &PassiveStore) -> Result<SyncStats> {
        let mut evicted = 0usize;
        self.resident.retain(|id, _| {
            let keep = promising.contains(*id);
            if !keep {
                evicted += 1;
            }
            keep
        });
        let missing: Vec<u32> = promising
            .ids()
            .iter()
            .copied()
            .filter(|id| !self.resident.contains_key(id))
            .collect();
        let fetched = missing.len();
        let codes = ps.get_codes(&missing)?;
        let bytes = fetched * ps.record_bytes();
        for (id, code) in missing.into_iter().zip(codes) {
            self.resident.insert(id, code);
        }
        debug_assert_eq!(self.resident_ids(), promising.ids());
        Ok(SyncStats {
            fetched,
            evicted,
            bytes,
        })
    }

    /// Replaces the coarse model and rebuilds the inverted index. The swap
    /// happens only after the new index is fully built.
    pub fn refresh_coarse(&mut self, coarse: CoarseModel) -> Result<()> {
        let index = build_index(coarse.clusters.centroids())?;
        self.clusters = coarse.clusters;
        self.submap = coarse.submap;
        self.index = index;
        Ok(())
    }

    /// Periodic-update path: swaps in the updated coarse model but re-posts
    /// only the changed centroids instead of rebuilding the whole index.
    /// Valid when the cluster count is unchanged.
    pub fn update_coarse(
        &mut self,
        coarse: CoarseModel,
        changed: &[(u32, PolyCode)],
    ) -> Result<()> {
        if coarse.k() != self.index.k() {
            return Err(Error::invalid(
                "cluster count changed; use refresh_coarse instead",
            ));
        }
        self.index.rebuild_on_centroid_change(changed)?;
        debug_assert_eq!(self.index.centroids(), coarse.clusters.centroids());
        self.clusters = coarse.clusters;
        self.submap = coarse.submap;
        Ok(())
    }

    /// Logical resident size: packed promising codes, packed centroids,
    /// submap, inverted index and the active transition columns. The
    /// N-length inference state (belief, assignments) is deliberately not
    /// counted here; it is reported by the scenario layer.
    pub fn resident_bytes(&self) -> usize {
        let rec = self.geometry.record_bytes();
        self.resident.len() * rec
            + self.clusters.k() * rec
            + self.submap.resident_bytes()
            + self.index.resident_bytes()
            + self.eac.resident_bytes()
    }
}

/// One per-step transfer record.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LogEntry {
    pub step: u64,
    pub promising: usize,
    pub fetched: usize,
    pub evicted: usize,
    pub code_bytes: usize,
    pub eac_bytes: usize,
    pub am_bytes: usize,
    pub step_micros: u64,
}

/// Append-only log of per-step transfers and timings.
#[derive(Default)]
pub struct TransferLog {
    entries: Vec<LogEntry>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MetricsSnapshot {
    pub steps: usize,
    pub am_bytes_last: usize,
    pub am_bytes_max: usize,
    pub ps_to_am_bytes_total: u64,
    pub step_micros_p50: u64,
    pub step_micros_p90: u64,
    pub step_micros_p99: u64,
    pub mean_promising: f64,
}

impl TransferLog {
    pub fn new() -> Self {
        TransferLog::default()
    }

    pub fn push(&mut self, entry: LogEntry) {
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn ps_to_am_bytes_total(&self) -> u64 {
        self.entries
            .iter()
            .map(|e| (e.code_bytes + e.eac_bytes) as u64)
            .sum()
    }

    pub fn snapshot_metrics(&self) -> MetricsSnapshot {
        let mut micros: Vec<u64> = self.entries.iter().map(|e| e.step_micros).collect();
        micros.sort_unstable();
        let pct = |p: f64| -> u64 {
            if micros.is_empty() {
                0
            } else {
                let idx = ((micros.len() as f64 - 1.0) * p).round() as usize;
                micros[idx]
            }
        };
        MetricsSnapshot {
            steps: self.entries.len(),
            am_bytes_last: self.entries.last().map_or(0, |e| e.am_bytes),
            am_bytes_max: self.entries.iter().map(|e| e.am_bytes).max().unwrap_or(0),
            ps_to_am_bytes_total: self.ps_to_am_bytes_total(),
            step_micros_p50: pct(0.50),
            step_micros_p90: pct(0.90),
            step_micros_p99: pct(0.99),
            mean_promising: if self.entries.is_empty() {
                0.0
            } else {
                self.entries.iter().map(|e| e.promising as f64).sum::<f64>()
                    / self.entries.len() as f64
            },
        }
    }
}

/// Everything one inference stream owns: the passive store, the active
/// memory, and the transfer log.
pub struct TieredState {
    pub ps: PassiveStore,
    pub am: ActiveMemory,
    pub log: TransferLog,
}

impl TieredState {
    pub fn new(ps: PassiveStore, am: ActiveMemory) -> Self {
        TieredState {
            ps,
            am,
            log: TransferLog::new(),
        }
    }

    /// Opens the store directory and loads its persisted coarse model into
    /// a fresh active memory.
    pub fn open(dir: &Path) -> Result<Self> {
        let ps = PassiveStore::open(dir)?;
        let coarse = ps.load_coarse()?;
        let am = ActiveMemory::new(ps.geometry(), coarse)?;
        Ok(TieredState::new(ps, am))
    }
}
