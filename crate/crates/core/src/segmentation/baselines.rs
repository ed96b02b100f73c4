//! Ablation baselines: uniform splitting and two clustering methods whose
//! clusters are not guaranteed to be consecutive in time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::density::{default_knn_k, select_centers, sq_dist, DensityProfile};
use super::{Method, Segmentation, SegmentationConfig, SegmentationError};
use crate::model::{EventPartition, FrameEmbeddingSeq};

const MAX_LLOYD_ITERATIONS: usize = 100;

fn check_counts(frames: usize, events: usize) -> Result<(), SegmentationError> {
    if events == 0 {
        return Err(SegmentationError::ZeroEvents);
    }
    if events > frames {
        return Err(SegmentationError::TooManyEvents { events, frames });
    }
    Ok(())
}

/// Equal-length events; the first `M mod K` events get one extra frame.
pub fn uniform_partition(frames: usize, events: usize) -> Result<EventPartition, SegmentationError> {
    check_counts(frames, events)?;
    let base = frames / events;
    let extra = frames % events;
    let lengths: Vec<usize> = (0..events).map(|i| base + usize::from(i < extra)).collect();
    Ok(EventPartition::from_lengths(&lengths))
}

pub fn segment_uniform(seq: &FrameEmbeddingSeq, events: usize) -> Result<Segmentation, SegmentationError> {
    Ok(Segmentation {
        method: Method::Uniform,
        partition: uniform_partition(seq.len(), events)?,
        profile: None,
        centers: Vec::new(),
        raw_labels: None,
        warnings: Vec::new(),
    })
}

/// Index of the nearest center; ties go to the lower center index.
fn nearest(frame: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(frame, center);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// k-means with k-means++ seeding from a seeded ChaCha stream.
pub fn kmeans_labels(frames: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let m = frames.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..m)];
    while chosen.len() < k {
        let weights: Vec<f64> = frames
            .iter()
            .map(|f| {
                chosen
                    .iter()
                    .map(|&c| sq_dist(f, &frames[c]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = m - 1;
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            if weights[pick] == 0.0 {
                pick = (0..m).rev().find(|&i| weights[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            (0..m).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
    }

    let mut centers: Vec<Vec<f64>> = chosen.iter().map(|&c| frames[c].clone()).collect();
    let mut labels: Vec<usize> = frames.iter().map(|f| nearest(f, &centers)).collect();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let dim = frames[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (f, &l) in frames.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(f) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = frames.iter().map(|f| nearest(f, &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

pub fn segment_knn(seq: &FrameEmbeddingSeq, config: &SegmentationConfig) -> Result<Segmentation, SegmentationError> {
    check_counts(seq.len(), config.num_events)?;
    let labels = kmeans_labels(&seq.frames, config.num_events, config.seed);
    Ok(Segmentation {
        method: Method::Knn,
        partition: coerce_to_consecutive(&labels, config.num_events),
        profile: None,
        centers: Vec::new(),
        raw_labels: Some(labels),
        warnings: Vec::new(),
    })
}

/// Density-peak clustering: centers by `rho * delta`, every other frame joins
/// its nearest center, centers keep their own cluster.
pub fn segment_dpcknn(
    seq: &FrameEmbeddingSeq,
    config: &SegmentationConfig,
) -> Result<Segmentation, SegmentationError> {
    let k = config.num_events;
    check_counts(seq.len(), k)?;
    let knn_k = config.knn_k.unwrap_or_else(|| default_knn_k(seq.len()));
    let profile = DensityProfile::compute(&seq.frames, knn_k)?;
    let centers = select_centers(&profile.gamma, k)?;
    let center_vecs: Vec<Vec<f64>> = centers.iter().map(|&c| seq.frames[c].clone()).collect();
    let labels: Vec<usize> = seq
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| match centers.iter().position(|&c| c == i) {
            Some(own) => own,
            None => nearest(f, &center_vecs),
        })
        .collect();
    Ok(Segmentation {
        method: Method::Dpcknn,
        partition: coerce_to_consecutive(&labels, k),
        profile: Some(profile),
        centers,
        raw_labels: Some(labels),
        warnings: Vec::new(),
    })
}

/// Turn arbitrary cluster labels into `k` consecutive non-empty events.
///
/// Clusters are laid out in order of first appearance (clusters without
/// members last). Borders are then placed to maximise the number of frames
/// whose label matches the cluster owning their event; among optimal
/// placements the lexicographically smallest border list wins.
pub fn coerce_to_consecutive(labels: &[usize], k: usize) -> EventPartition {
    let m = labels.len();
    assert!(k >= 1 && k <= m, "coercion needs 1 <= k <= M");
    let mut order: Vec<usize> = Vec::with_capacity(k);
    for &l in labels {
        if l < k && !order.contains(&l) {
            order.push(l);
        }
    }
    for c in 0..k {
        if !order.contains(&c) {
            order.push(c);
        }
    }

    // prefix[c][i] = frames in 0..i labelled c
    let mut prefix = vec![vec![0usize; m + 1]; k];
    for (i, &l) in labels.iter().enumerate() {
        for (c, row) in prefix.iter_mut().enumerate() {
            row[i + 1] = row[i] + usize::from(l == c);
        }
    }
    let count = |seg: usize, start: usize, end: usize| {
        let c = order[seg];
        prefix[c][end] - prefix[c][start]
    };

    // best[j][s]: max matches for events j.. when event j starts at frame s
    const NONE: usize = usize::MAX;
    let mut best = vec![vec![NONE; m + 1]; k];
    for (s, slot) in best[k - 1].iter_mut().take(m).enumerate() {
        *slot = count(k - 1, s, m);
    }
    for j in (0..k - 1).rev() {
        let remaining = k - 1 - j;
        let (head, tail) = best.split_at_mut(j + 1);
        let next = &tail[0];
        for (s, slot) in head[j].iter_mut().take(m).enumerate() {
            let mut top = NONE;
            for (e, &rest) in next.iter().enumerate().take(m - remaining + 1).skip(s + 1) {
                if rest == NONE {
                    continue;
                }
                let v = count(j, s, e) + rest;
                if top == NONE || v > top {
                    top = v;
                }
            }
            *slot = top;
        }
    }

    let mut boundaries = Vec::with_capacity(k - 1);
    let mut s = 0;
    for j in 0..k - 1 {
        let remaining = k - 1 - j;
        let target = best[j][s];
        let e = ((s + 1)..=(m - remaining))
            .find(|&e| best[j + 1][e] != NONE && count(j, s, e) + best[j + 1][e] == target)
            .expect("an optimal border exists");
        boundaries.push(e);
        s = e;
    }
    EventPartition::new(m, boundaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Validate;
    use crate::segmentation::cdpcknn::segment_cdpcknn;
    use proptest::prelude::*;

    fn seq(frames: Vec<Vec<f64>>) -> FrameEmbeddingSeq {
        let m = frames.len();
        FrameEmbeddingSeq {
            video_id: "v".into(),
            fps_sampled: 1.0,
            dim: frames[0].len(),
            frames,
            duration_s: m as f64,
        }
    }

    fn cfg(method: Method, k: usize) -> SegmentationConfig {
        SegmentationConfig {
            method,
            num_events: k,
            knn_k: None,
            seed: 7,
        }
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_partition(10, 2).unwrap().events(), vec![0..5, 5..10]);
        assert_eq!(uniform_partition(10, 3).unwrap().events(), vec![0..4, 4..7, 7..10]);
        assert_eq!(uniform_partition(3, 3).unwrap().lengths(), vec![1, 1, 1]);
        assert!(uniform_partition(2, 3).is_err());
    }

    #[test]
    fn identical_frames_dpcknn_singletons() {
        let s = seq(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        let out = segment_dpcknn(&s, &SegmentationConfig { knn_k: Some(1), ..cfg(Method::Dpcknn, 2) }).unwrap();
        assert_eq!(out.raw_labels, Some(vec![0, 1]));
        assert_eq!(out.partition.events(), vec![0..1, 1..2]);
    }

    #[test]
    fn single_cluster() {
        let s = seq(vec![vec![0.0], vec![3.0], vec![1.0]]);
        for method in [Method::Knn, Method::Dpcknn] {
            let out = match method {
                Method::Knn => segment_knn(&s, &cfg(method, 1)),
                _ => segment_dpcknn(&s, &cfg(method, 1)),
            }
            .unwrap();
            assert_eq!(out.partition.events(), vec![0..3]);
        }
    }

    fn blobs() -> FrameEmbeddingSeq {
        let mut frames = Vec::new();
        // uneven spacing so no two frames share a density
        for x in [0.0, 0.05, 0.09, 0.15, 0.22, 0.3] {
            frames.push(vec![x, 0.0]);
        }
        frames.push(vec![7.0, 7.0]);
        for i in 0..5 {
            frames.push(vec![10.0 + 0.05 * i as f64, 10.0]);
        }
        seq(frames)
    }

    #[test]
    fn separated_blobs_match_cdpcknn() {
        let s = blobs();
        let reference = segment_cdpcknn(&s, &cfg(Method::Cdpcknn, 2)).unwrap().partition;
        assert_eq!(reference.boundaries, vec![6]);
        assert_eq!(segment_dpcknn(&s, &cfg(Method::Dpcknn, 2)).unwrap().partition, reference);
        assert_eq!(segment_knn(&s, &cfg(Method::Knn, 2)).unwrap().partition, reference);
    }

    #[test]
    fn coercion_resolves_interleaving() {
        // cluster 1 appears first; a stray 0 inside the 1-run
        let labels = [1, 1, 0, 1, 0, 0, 0, 2, 2];
        let p = coerce_to_consecutive(&labels, 3);
        assert_eq!(p.boundaries, vec![2, 7]);
        // ties prefer the earliest border
        assert_eq!(coerce_to_consecutive(&[0, 1, 0, 1], 2).boundaries, vec![1]);
    }

    #[test]
    fn knn_is_seeded() {
        let s = blobs();
        let a = kmeans_labels(&s.frames, 3, 11);
        let b = kmeans_labels(&s.frames, 3, 11);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn coercion_always_valid(labels in prop::collection::vec(0usize..4, 1..30), k in 1usize..5) {
            prop_assume!(k <= labels.len());
            let labels: Vec<usize> = labels.into_iter().map(|l| l % k).collect();
            let p = coerce_to_consecutive(&labels, k);
            prop_assert!(p.validate().is_valid());
            prop_assert_eq!(p.num_events(), k);
        }

        #[test]
        fn uniform_lengths_balanced(m in 1usize..200, k in 1usize..20) {
            prop_assume!(k <= m);
            let lengths = uniform_partition(m, k).unwrap().lengths();
            let max = *lengths.iter().max().unwrap();
            let min = *lengths.iter().min().unwrap();
            prop_assert!(max - min <= 1);
            prop_assert!(lengths.windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(lengths.iter().sum::<usize>(), m);
        }
    }
}
