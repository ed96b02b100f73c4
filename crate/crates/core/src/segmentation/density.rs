//! Local density, distance index and center selection.
//!
//! Distances are squared Euclidean on the raw vectors. Density comparisons
//! use the mean k-NN squared distance (the negated log of `rho`), which orders
//! frames exactly like `rho` but keeps distinct values apart where `exp`
//! would underflow to zero.

use serde::{Deserialize, Serialize};

use super::SegmentationError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub rho: Vec<f64>,
    /// Mean squared distance to the `knn_k` nearest neighbours, `-ln(rho)`.
    pub knn_mean_sq: Vec<f64>,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub knn_k: usize,
}

impl DensityProfile {
    /// Density, distance index and `gamma = rho * delta` in one pass over the
    /// distance matrix. A single frame gets `rho = 1`, `delta = 0`.
    pub fn compute(frames: &[Vec<f64>], knn_k: usize) -> Result<Self, SegmentationError> {
        if frames.is_empty() {
            return Err(SegmentationError::EmptySequence);
        }
        if frames.len() == 1 {
            return Ok(Self {
                rho: vec![1.0],
                knn_mean_sq: vec![0.0],
                delta: vec![0.0],
                gamma: vec![0.0],
                knn_k: 0,
            });
        }
        let dist = SqDistances::new(frames);
        let knn_mean_sq = dist.knn_mean(knn_k)?;
        let rho: Vec<f64> = knn_mean_sq.iter().map(|m| (-m).exp()).collect();
        let denser_key: Vec<f64> = knn_mean_sq.iter().map(|m| -m).collect();
        let delta = dist.delta(&denser_key);
        let gamma = rho.iter().zip(&delta).map(|(r, d)| r * d).collect();
        Ok(Self {
            rho,
            knn_mean_sq,
            delta,
            gamma,
            knn_k,
        })
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }
}

/// Dense symmetric matrix of squared distances.
pub struct SqDistances {
    m: usize,
    d: Vec<f64>,
}

impl SqDistances {
    pub fn new(frames: &[Vec<f64>]) -> Self {
        let m = frames.len();
        let mut d = vec![0.0; m * m];
        for i in 0..m {
            for j in (i + 1)..m {
                let v = sq_dist(&frames[i], &frames[j]);
                d[i * m + j] = v;
                d[j * m + i] = v;
            }
        }
        Self { m, d }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.m + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.m..(i + 1) * self.m]
    }

    fn knn_mean(&self, k: usize) -> Result<Vec<f64>, SegmentationError> {
        if k == 0 || k >= self.m {
            return Err(SegmentationError::KnnOutOfRange { knn_k: k, frames: self.m });
        }
        let mut out = Vec::with_capacity(self.m);
        let mut buf = Vec::with_capacity(self.m - 1);
        for i in 0..self.m {
            buf.clear();
            buf.extend(
                self.row(i)
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &v)| v),
            );
            buf.sort_by(f64::total_cmp);
            out.push(buf[..k].iter().sum::<f64>() / k as f64);
        }
        Ok(out)
    }

    /// Distance index against an arbitrary "higher is denser" key.
    fn delta(&self, density: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| {
                let row = self.row(i);
                let nearest_denser = (0..self.m)
                    .filter(|&j| density[j] > density[i])
                    .map(|j| row[j])
                    .min_by(f64::total_cmp);
                nearest_denser.unwrap_or_else(|| row.iter().copied().fold(0.0, f64::max))
            })
            .collect()
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `rho_i = exp(-mean squared distance to the knn_k nearest other frames)`.
pub fn compute_density(frames: &[Vec<f64>], knn_k: usize) -> Result<Vec<f64>, SegmentationError> {
    if frames.is_empty() {
        return Err(SegmentationError::EmptySequence);
    }
    if frames.len() == 1 {
        return Ok(vec![1.0]);
    }
    let mean = SqDistances::new(frames).knn_mean(knn_k)?;
    Ok(mean.into_iter().map(|m| (-m).exp()).collect())
}

/// Squared distance to the nearest strictly denser frame, or to the farthest
/// frame when none is denser.
pub fn compute_delta(frames: &[Vec<f64>], rho: &[f64]) -> Result<Vec<f64>, SegmentationError> {
    if rho.len() != frames.len() {
        return Err(SegmentationError::ShapeMismatch {
            expected: frames.len(),
            found: rho.len(),
        });
    }
    Ok(SqDistances::new(frames).delta(rho))
}

/// Indices of the `k` largest gamma values, ties to the lower index, returned
/// in ascending order.
pub fn select_centers(gamma: &[f64], k: usize) -> Result<Vec<usize>, SegmentationError> {
    if k == 0 {
        return Err(SegmentationError::ZeroEvents);
    }
    if k > gamma.len() {
        return Err(SegmentationError::TooManyEvents {
            events: k,
            frames: gamma.len(),
        });
    }
    let mut order: Vec<usize> = (0..gamma.len()).collect();
    order.sort_by(|&a, &b| gamma[b].total_cmp(&gamma[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

pub fn default_knn_k(frames: usize) -> usize {
    5.min(frames.saturating_sub(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> Vec<Vec<f64>> {
        vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![3.0, 4.0]]
    }

    #[test]
    fn density_example() {
        let rho = compute_density(&example(), 1).unwrap();
        assert_eq!(rho, vec![1.0, 1.0, (-25.0f64).exp()]);
    }

    #[test]
    fn identical_frames_have_unit_density() {
        let frames = vec![vec![0.5, -1.0]; 4];
        assert_eq!(compute_density(&frames, 3).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn two_frames_full_neighbourhood() {
        let frames = vec![vec![0.0], vec![1.5]];
        let d = 1.5f64 * 1.5;
        assert_eq!(compute_density(&frames, 1).unwrap(), vec![(-d).exp(); 2]);
    }

    #[test]
    fn knn_out_of_range() {
        assert!(matches!(
            compute_density(&example(), 3),
            Err(SegmentationError::KnnOutOfRange { .. })
        ));
        assert!(compute_density(&example(), 0).is_err());
    }

    #[test]
    fn delta_example() {
        let rho = [1.0, 1.0, (-25.0f64).exp()];
        assert_eq!(compute_delta(&example(), &rho).unwrap(), vec![25.0, 25.0, 25.0]);
    }

    #[test]
    fn unique_peak_takes_max_distance() {
        let frames = vec![vec![0.0], vec![0.1], vec![0.2], vec![5.0]];
        let profile = DensityProfile::compute(&frames, 2).unwrap();
        let peak = (0..4)
            .max_by(|&a, &b| profile.rho[a].total_cmp(&profile.rho[b]))
            .unwrap();
        assert_eq!(peak, 1);
        let far = (0..4).map(|j| sq_dist(&frames[1], &frames[j])).fold(0.0, f64::max);
        assert_eq!(profile.delta[1], far);
    }

    #[test]
    fn single_frame_convention() {
        let p = DensityProfile::compute(&[vec![1.0]], 5).unwrap();
        assert_eq!(p.delta, vec![0.0]);
        assert_eq!(p.rho, vec![1.0]);
    }

    #[test]
    fn center_examples() {
        let tiny = 25.0 * (-25.0f64).exp();
        assert_eq!(select_centers(&[25.0, 25.0, tiny], 2).unwrap(), vec![0, 1]);
        assert_eq!(select_centers(&[1.0, 3.0, 2.0], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(select_centers(&[3.0, 2.0, 1.0], 1).unwrap(), vec![0]);
        assert_eq!(select_centers(&[1.0, 5.0, 5.0, 2.0], 2).unwrap(), vec![1, 2]);
        assert!(matches!(
            select_centers(&[1.0], 2),
            Err(SegmentationError::TooManyEvents { .. })
        ));
    }
}
