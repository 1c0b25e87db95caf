//! Run configuration, read from TOML.

use serde::{Deserialize, Serialize};

use crate::datagen::DatasetSpec;
use crate::encoder::EncoderDims;
use crate::schedule::{ScheduleKind, ScheduleSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClustererKind {
    Dbscan,
    Infomap,
    Kmeans,
}

impl ClustererKind {
    pub fn schedule_kind(self) -> ScheduleKind {
        match self {
            ClustererKind::Dbscan => ScheduleKind::DbscanEps,
            ClustererKind::Infomap => ScheduleKind::InfomapPsi,
            ClustererKind::Kmeans => ScheduleKind::KmeansK,
        }
    }
}

fn default_true() -> bool {
    true
}

/// Every knob of a training run. Field names are the TOML keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds network initialization, batch sampling and k-means.
    pub seed: u64,
    /// Seeds used by `ablate`; empty means `[seed]`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub iterations: usize,

    pub clusterer: ClustererKind,
    /// eps (DBSCAN), psi (InfoMap) or k (k-means).
    pub base: f64,
    pub delta: f64,
    pub min_pts: usize,
    pub k1: usize,
    pub k2: usize,
    #[serde(default)]
    pub jaccard_lambda: f64,

    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(default = "default_true")]
    pub normalize_memory: bool,

    pub p_ids: usize,
    pub k_inst: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub d_hidden: usize,
    pub d_out: usize,

    pub use_dcdp: bool,
    pub use_csm: bool,

    pub query_fraction: f64,
    pub dataset: DatasetSpec,
}

impl RunConfig {
    /// Desk-scale defaults: 25 epochs of 50 iterations, 8 x 4 batches.
    pub fn desk_default() -> Self {
        Self {
            seed: 1,
            seeds: vec![1, 2, 3, 4, 5],
            epochs: 25,
            iterations: 50,
            clusterer: ClustererKind::Dbscan,
            base: 0.45,
            delta: 0.3,
            min_pts: 4,
            k1: 30,
            k2: 6,
            jaccard_lambda: 0.0,
            tau: 0.05,
            alpha: 0.99,
            beta: 0.1,
            gamma: 1.3,
            normalize_memory: true,
            p_ids: 16,
            k_inst: 4,
            lr: 0.07,
            weight_decay: 5e-4,
            d_hidden: 128,
            d_out: 32,
            use_dcdp: true,
            use_csm: true,
            query_fraction: 0.25,
            dataset: DatasetSpec::default(),
        }
    }

    pub fn encoder_dims(&self) -> EncoderDims {
        EncoderDims {
            d_in: self.dataset.d_in,
            d_hidden: self.d_hidden,
            d_out: self.d_out,
        }
    }

    pub fn schedule(&self) -> ScheduleSpec {
        ScheduleSpec {
            kind: self.clusterer.schedule_kind(),
            base: self.base,
            delta: self.delta,
            total_epochs: self.epochs,
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.schedule().validate()?;
        let positive = [
            ("iterations", self.iterations as f64),
            ("min_pts", self.min_pts as f64),
            ("k1", self.k1 as f64),
            ("k2", self.k2 as f64),
            ("tau", self.tau),
            ("gamma", self.gamma),
            ("p_ids", self.p_ids as f64),
            ("k_inst", self.k_inst as f64),
            ("d_hidden", self.d_hidden as f64),
            ("d_out", self.d_out as f64),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be > 0"));
            }
        }
        if self.k2 > self.k1 {
            return Err(Error::config("k2", "must not exceed k1"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::config("beta", "must lie in [0, 1)"));
        }
        // zero freezes the networks while banks and mean nets keep updating
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be >= 0"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.jaccard_lambda) {
            return Err(Error::config("jaccard_lambda", "must lie in [0, 1]"));
        }
        if !(self.query_fraction > 0.0 && self.query_fraction < 1.0) {
            return Err(Error::config("query_fraction", "must lie in (0, 1)"));
        }
        if self.clusterer == ClustererKind::Infomap && self.base + self.delta > 1.0 {
            return Err(Error::config("delta", "base + delta must be <= 1 for InfoMap"));
        }
        if self.clusterer == ClustererKind::Kmeans && self.base + self.delta > self.dataset.len() as f64 {
            return Err(Error::config("delta", "base + delta exceeds the dataset size"));
        }
        Ok(())
    }

    /// Parses and validates a TOML config. Errors carry the offending line
    /// or field.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
