//! Consecutive density-peak segmentation.
//!
//! Event borders sit at interior frames of minimal local density. Because a
//! border only splits the timeline, every event is a contiguous run of frames
//! by construction.

use super::density::{default_knn_k, select_centers, DensityProfile};
use super::{Method, Segmentation, SegmentationConfig, SegmentationError};
use crate::model::{EventPartition, FrameEmbeddingSeq};

/// Interior frames `1..M` that are local density minima. Comparisons are
/// non-strict so plateaus qualify, and a missing right neighbour (the last
/// frame) does not disqualify. `density` is any key ordered like `rho`.
pub fn local_minima(density: &[f64]) -> Vec<usize> {
    let m = density.len();
    (1..m)
        .filter(|&i| density[i] <= density[i - 1] && (i + 1 >= m || density[i] <= density[i + 1]))
        .collect()
}

/// Candidate border frames: the local minima, or every interior frame when
/// there are fewer than `needed` minima.
pub fn boundary_candidates(density: &[f64], needed: usize) -> Vec<usize> {
    let minima = local_minima(density);
    if minima.len() >= needed {
        minima
    } else {
        (1..density.len()).collect()
    }
}

/// The `num_events - 1` lowest-density candidates (ties to the lower index),
/// sorted. Distinct interior frames always yield non-empty events.
pub fn select_boundaries(density: &[f64], num_events: usize) -> Result<Vec<usize>, SegmentationError> {
    if num_events == 0 {
        return Err(SegmentationError::ZeroEvents);
    }
    let needed = num_events - 1;
    let interior = density.len().saturating_sub(1);
    if needed > interior {
        return Err(SegmentationError::Infeasible {
            needed,
            available: interior,
        });
    }
    let mut candidates = boundary_candidates(density, needed);
    candidates.sort_by(|&a, &b| density[a].total_cmp(&density[b]).then(a.cmp(&b)));
    candidates.truncate(needed);
    candidates.sort_unstable();
    Ok(candidates)
}

pub fn segment_cdpcknn(
    seq: &FrameEmbeddingSeq,
    config: &SegmentationConfig,
) -> Result<Segmentation, SegmentationError> {
    let m = seq.len();
    let k = config.num_events;
    if k == 0 {
        return Err(SegmentationError::ZeroEvents);
    }
    if k > m {
        return Err(SegmentationError::Infeasible {
            needed: k - 1,
            available: m.saturating_sub(1),
        });
    }
    let knn_k = config.knn_k.unwrap_or_else(|| default_knn_k(m));
    let profile = DensityProfile::compute(&seq.frames, knn_k)?;
    let density: Vec<f64> = profile.knn_mean_sq.iter().map(|v| -v).collect();
    let boundaries = select_boundaries(&density, k)?;
    let partition = EventPartition::new(m, boundaries);
    let centers = select_centers(&profile.gamma, k)?;

    let mut warnings = Vec::new();
    for (i, range) in partition.events().iter().enumerate() {
        if !centers.iter().any(|c| range.contains(c)) {
            warnings.push(format!("event {i} ({}..{}) contains no density center", range.start, range.end));
        }
    }
    Ok(Segmentation {
        method: Method::Cdpcknn,
        partition,
        profile: Some(profile),
        centers,
        raw_labels: None,
        warnings,
    })
}
