//! Dual clustering co-teaching on synthetic re-identification data.
//!
//! Two small encoders are trained from pseudo labels produced by two
//! clusterings of their own mean-net (EMA) features. Each encoder learns from
//! the labels and memory bank of its peer, the clustering parameters follow
//! mirrored triangular schedules, and batch samples whose nearest memory
//! representation disagrees with their pseudo label are dropped once the
//! clustering quality (Davies-Bouldin index) is good enough.
//!
//! Module map:
//!
//! - [`datagen`]: synthetic identities, cameras and samples
//! - [`encoder`]: two-layer MLP with analytic InfoNCE gradients and EMA shadow
//! - [`metricspace`]: cosine and k-reciprocal Jaccard distances
//! - [`clustering`]: DBSCAN, k-means, InfoMap and Davies-Bouldin scoring
//! - [`schedule`]: per-epoch dual clustering parameters
//! - [`memory`]: cluster memory banks
//! - [`csm`]: consistent sample mining
//! - [`trainer`]: the co-teaching loop
//! - [`eval`]: mAP / CMC retrieval evaluation

pub mod clustering;
pub mod config;
pub mod csm;
pub mod datagen;
pub mod encoder;
mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod memory;
pub mod metricspace;
pub mod schedule;
pub mod trainer;

pub use clustering::{ClusterResult, TrainingSet, OUTLIER};
pub use config::{ClustererKind, RunConfig};
pub use datagen::{Dataset, DatasetSpec, Identity, Sample};
pub use encoder::{EncoderDims, EncoderParams, MeanNet};
pub use error::{Error, Result};
pub use eval::RetrievalResult;
pub use linalg::Matrix;
pub use memory::MemoryBank;
pub use metricspace::DistanceMatrix;
pub use schedule::{ScheduleKind, ScheduleSpec};
pub use trainer::{EpochMetrics, RunResult};
