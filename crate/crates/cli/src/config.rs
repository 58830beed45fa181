//! Scenario configuration: world source, parameter block, thresholds.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hm4_core::descriptors::SyntheticWorldConfig;
use hm4_core::graph::ExponentSign;
use hm4_core::hmm::ObservationParams;
use hm4_core::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldSource {
    Synthetic(SyntheticWorldConfig),
    Descriptors(DescriptorWorld),
}

/// A world assembled from descriptor files: each file is one sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorWorld {
    pub database: Vec<PathBuf>,
    #[serde(default)]
    pub queries: Vec<PathBuf>,
    /// CSV of `sequence,frame,position_m` rows covering every frame.
    /// Database files take sequence ids `0..database.len()`, query files
    /// continue from there. Required when queries are present.
    #[serde(default)]
    pub positions: Option<PathBuf>,
    /// Renormalize descriptors whose norm drifted, instead of rejecting.
    #[serde(default)]
    pub renormalize: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamBlock {
    pub v_max: usize,
    pub delta: f64,
    pub sigma: f64,
    pub zeta: f64,
    pub cap: usize,
    /// Cluster count of the coarse model.
    pub k: usize,
    /// Aggregation vocabulary size.
    pub vocab_size: usize,
    /// Number of sampled rotations.
    pub rotations: usize,
    pub kmeans_iters: usize,
    pub kmodes_iters: usize,
    /// Master seed; vocabulary, rotation and clustering seeds derive from
    /// it.
    pub seed: u64,
    pub transition_exponent_sign: ExponentSign,
    /// Simulated passive-storage latency per fetched record.
    pub ps_read_delay_us: u64,
    /// At most this many descriptors feed vocabulary training.
    pub vocab_pool_cap: usize,
}

impl Default for ParamBlock {
    fn default() -> Self {
        ParamBlock {
            v_max: 10,
            delta: 3.0,
            sigma: 0.03,
            zeta: 0.00015,
            cap: 100,
            k: 64,
            vocab_size: 32,
            rotations: 8,
            kmeans_iters: 20,
            kmodes_iters: 12,
            seed: 42,
            transition_exponent_sign: ExponentSign::Decay,
            ps_read_delay_us: 0,
            vocab_pool_cap: 20_000,
        }
    }
}

impl ParamBlock {
    pub fn observation(&self) -> ObservationParams {
        ObservationParams {
            sigma: self.sigma,
            zeta: self.zeta,
            cap: self.cap,
        }
    }

    pub fn vocab_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn rotation_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn cluster_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }

    pub fn validate(&self) -> Result<()> {
        self.observation().validate()?;
        if self.delta <= 0.0 {
            return Err(Error::InvalidArgument("delta must be positive".into()));
        }
        if self.k == 0 || self.vocab_size < 2 || self.rotations == 0 {
            return Err(Error::InvalidArgument(
                "k, vocab_size (>= 2) and rotations must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn default_thresholds() -> Vec<f64> {
    (1..=25).map(|m| m as f64).collect()
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub world: WorldSource,
    #[serde(default)]
    pub params: ParamBlock,
    /// Append each localized query sequence to the database and refresh the
    /// coarse model afterwards.
    #[serde(default = "default_true")]
    pub update_after_each_sequence: bool,
    /// Correctness thresholds in meters, ascending.
    #[serde(default = "default_thresholds")]
    pub thresholds_m: Vec<f64>,
    /// Where reports and the store are written; the `--out` flag overrides.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::Storage {
            path: path.to_path_buf(),
            source: e,
        })?;
        let cfg: ScenarioConfig = serde_json::from_slice(&raw)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.thresholds_m.is_empty() {
            return Err(Error::InvalidArgument(
                "thresholds_m must be non-empty".into(),
            ));
        }
        let mut prev = 0.0;
        for &t in &self.thresholds_m {
            if t <= prev {
                return Err(Error::InvalidArgument(
                    "thresholds_m must be positive and strictly ascending".into(),
                ));
            }
            prev = t;
        }
        match &self.world {
            WorldSource::Synthetic(cfg) => cfg.validate()?,
            WorldSource::Descriptors(d) => {
                if d.database.is_empty() {
                    return Err(Error::InvalidArgument(
                        "descriptor world needs at least one database file".into(),
                    ));
                }
                if !d.queries.is_empty() && d.positions.is_none() {
                    return Err(Error::InvalidArgument(
                        "descriptor world with queries needs a positions file".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Applies the `--seed` override: replaces the master seed and, for
    /// synthetic worlds, the world seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.params.seed = seed;
        if let WorldSource::Synthetic(cfg) = &mut self.world {
            cfg.seed = seed;
        }
    }

    pub fn resolve_out_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .ok_or_else(|| {
                Error::InvalidArgument("no output directory: set --out or out_dir".into())
            })
    }
}
