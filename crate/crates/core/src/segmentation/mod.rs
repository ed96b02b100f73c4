//! Query-agnostic temporal segmentation.
//!
//! [`segment`] dispatches to consecutive density-peak segmentation (the
//! default) or one of the ablation baselines. Every method returns a valid
//! [`EventPartition`]; clustering baselines also keep their raw labels.

pub mod baselines;
pub mod cdpcknn;
pub mod density;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{EventPartition, FrameEmbeddingSeq};

pub use baselines::{coerce_to_consecutive, segment_dpcknn, segment_knn, segment_uniform, uniform_partition};
pub use cdpcknn::{boundary_candidates, local_minima, segment_cdpcknn, select_boundaries};
pub use density::{compute_delta, compute_density, default_knn_k, select_centers, DensityProfile};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SegmentationError {
    #[error("empty frame sequence")]
    EmptySequence,
    #[error("number of events must be at least 1")]
    ZeroEvents,
    #[error("knn_k = {knn_k} outside 1..={} for {frames} frames", frames.saturating_sub(1))]
    KnnOutOfRange { knn_k: usize, frames: usize },
    #[error("{events} events requested but only {frames} frames")]
    TooManyEvents { events: usize, frames: usize },
    #[error("infeasible partition: {needed} borders needed, {available} interior positions")]
    Infeasible { needed: usize, available: usize },
    #[error("expected {expected} density values, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Uniform,
    Knn,
    Dpcknn,
    Cdpcknn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Uniform, Method::Knn, Method::Dpcknn, Method::Cdpcknn];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Uniform => "uniform",
            Method::Knn => "knn",
            Method::Dpcknn => "dpcknn",
            Method::Cdpcknn => "cdpcknn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown segmentation method `{s}` (expected uniform, knn, dpcknn or cdpcknn)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_num_events")]
    pub num_events: usize,
    /// Neighbour count for the density; `None` means `min(5, M - 1)`.
    #[serde(default)]
    pub knn_k: Option<usize>,
    /// Only the k-means baseline consumes randomness.
    #[serde(default)]
    pub seed: u64,
}

fn default_method() -> Method {
    Method::Cdpcknn
}

fn default_num_events() -> usize {
    4
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            method: default_method(),
            num_events: default_num_events(),
            knn_k: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub method: Method,
    pub partition: EventPartition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<DensityProfile>,
    pub centers: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_labels: Option<Vec<usize>>,
    pub warnings: Vec<String>,
}

pub fn segment(seq: &FrameEmbeddingSeq, config: &SegmentationConfig) -> Result<Segmentation, SegmentationError> {
    if seq.is_empty() {
        return Err(SegmentationError::EmptySequence);
    }
    match config.method {
        Method::Uniform => segment_uniform(seq, config.num_events),
        Method::Knn => segment_knn(seq, config),
        Method::Dpcknn => segment_dpcknn(seq, config),
        Method::Cdpcknn => segment_cdpcknn(seq, config),
    }
}

/// Per-frame diagnostic row. Field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostic {
    pub frame: usize,
    pub time_s: f64,
    pub rho: Option<f64>,
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    pub is_boundary: bool,
    pub is_center: bool,
}

impl Segmentation {
    pub fn diagnostics(&self, seq: &FrameEmbeddingSeq) -> Vec<FrameDiagnostic> {
        (0..seq.len())
            .map(|i| FrameDiagnostic {
                frame: i,
                time_s: seq.frame_time(i),
                rho: self.profile.as_ref().map(|p| p.rho[i]),
                delta: self.profile.as_ref().map(|p| p.delta[i]),
                gamma: self.profile.as_ref().map(|p| p.gamma[i]),
                is_boundary: self.partition.boundaries.contains(&i),
                is_center: self.centers.contains(&i),
            })
            .collect()
    }

    /// One JSON object per line, frames in order.
    pub fn write_diagnostics(&self, seq: &FrameEmbeddingSeq, out: &mut impl Write) -> std::io::Result<()> {
        for row in self.diagnostics(seq) {
            serde_json::to_writer(&mut *out, &row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
