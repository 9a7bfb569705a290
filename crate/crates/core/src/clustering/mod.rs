//! Density-based clustering and clustering-quality scores, built from
//! scratch: DBSCAN, HDBSCAN, silhouette, DBCV, plus the k-distance and
//! mean-pairwise-distance utilities used for parameter selection.
//!
//! Everything here is deterministic. Ties in seeding, spanning-tree
//! construction and neighbor ordering resolve to the lower point index,
//! so identical inputs yield identical labelings.

mod dbscan;
mod hdbscan;
mod validity;

pub use dbscan::dbscan;
pub use hdbscan::hdbscan;
pub use validity::{dbcv, silhouette, ValidityError};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::spatial::{euclidean, KdTree};
use crate::synthgen::SplitMix64;

/// Label assigned to noise points.
pub const NOISE: i32 = -1;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("k = {k} must be smaller than the point count {n}")]
    KTooLarge { k: usize, n: usize },
}

/// Per-point cluster labels: `-1` marks noise, clusters are `0..m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<i32>,
    pub n_clusters: usize,
    pub n_noise: usize,
}

impl ClusterAssignment {
    pub fn from_labels(labels: Vec<i32>) -> ClusterAssignment {
        let n_noise = labels.iter().filter(|&&l| l == NOISE).count();
        let n_clusters = labels
            .iter()
            .filter(|&&l| l >= 0)
            .map(|&l| l as usize + 1)
            .max()
            .unwrap_or(0);
        ClusterAssignment {
            labels,
            n_clusters,
            n_noise,
        }
    }

    /// Point indices of one cluster, ascending.
    pub fn members(&self, cluster: i32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Ascending-sorted distance of every point to its k-th nearest neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct KDistanceCurve {
    pub k: usize,
    pub distances: Vec<f64>,
}

impl KDistanceCurve {
    /// Two-column CSV: `rank,distance`, rank 0-based in sorted order.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        writeln!(w, "rank,distance")?;
        for (rank, d) in self.distances.iter().enumerate() {
            writeln!(w, "{rank},{d}")?;
        }
        w.flush()
    }
}

/// Distance of each point to its k-th nearest neighbor (self excluded),
/// sorted ascending.
pub fn k_distance(points: &[Vec<f64>], k: usize) -> Result<KDistanceCurve, ClusterError> {
    if points.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    if k == 0 {
        return Err(ClusterError::InvalidParams("k must be >= 1".into()));
    }
    if k >= points.len() {
        return Err(ClusterError::KTooLarge {
            k,
            n: points.len(),
        });
    }
    let tree = KdTree::build(points);
    let mut distances: Vec<f64> = (0..points.len())
        .map(|i| {
            // Query k+1 and drop the point itself; with duplicates the
            // self entry may be crowded out, in which case the first k
            // entries already are the k nearest others.
            let mut hits = tree.k_nearest(&points[i], k + 1);
            if let Some(pos) = hits.iter().position(|&(idx, _)| idx == i) {
                hits.remove(pos);
            }
            hits[k - 1].1
        })
        .collect();
    distances.sort_by(|a, b| a.partial_cmp(b).expect("finite distance"));
    Ok(KDistanceCurve { k, distances })
}

/// Fixed seed for the subsample drawn by [`mean_pairwise_distance`] on
/// inputs larger than [`MPD_EXACT_LIMIT`].
const MPD_SAMPLE_SEED: u64 = 0x6d65_616e_5f70_7764;
/// Exact computation limit for [`mean_pairwise_distance`].
pub const MPD_EXACT_LIMIT: usize = 20_000;

/// Mean of all pairwise Euclidean distances. Exact up to
/// [`MPD_EXACT_LIMIT`] points, beyond that over a seeded uniform sample
/// of that size.
pub fn mean_pairwise_distance(points: &[Vec<f64>]) -> Result<f64, ClusterError> {
    mean_pairwise_distance_with_limit(points, MPD_EXACT_LIMIT)
}

fn mean_pairwise_distance_with_limit(
    points: &[Vec<f64>],
    limit: usize,
) -> Result<f64, ClusterError> {
    if points.len() < 2 {
        return Err(ClusterError::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let sample: Vec<usize> = if points.len() <= limit {
        (0..points.len()).collect()
    } else {
        // Partial Fisher-Yates draw without replacement, fixed seed.
        let mut indices: Vec<usize> = (0..points.len()).collect();
        let mut rng = SplitMix64::new(MPD_SAMPLE_SEED);
        for i in 0..limit {
            let j = i + rng.next_below((indices.len() - i) as u64) as usize;
            indices.swap(i, j);
        }
        indices.truncate(limit);
        indices
    };
    let mut sum = 0.0;
    let mut pairs = 0u64;
    for (i, &a) in sample.iter().enumerate() {
        for &b in &sample[i + 1..] {
            sum += euclidean(&points[a], &points[b]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn k_distance_matches_hand_values() {
        let points = one_d(&[0.0, 1.0, 3.0]);
        let curve = k_distance(&points, 1).unwrap();
        assert_eq!(curve.distances, vec![1.0, 1.0, 2.0]);

        let curve = k_distance(&points, 2).unwrap();
        assert_eq!(curve.distances, vec![2.0, 3.0, 3.0]);
    }

    #[test]
    fn k_distance_leading_zeros_for_duplicates() {
        let points = one_d(&[2.0, 2.0, 2.0, 9.0]);
        let curve = k_distance(&points, 1).unwrap();
        assert_eq!(curve.distances[..3], [0.0, 0.0, 0.0]);
        assert_eq!(curve.distances[3], 7.0);

        let curve = k_distance(&points, 2).unwrap();
        assert_eq!(curve.distances[..2], [0.0, 0.0]);
    }

    #[test]
    fn k_distance_rejects_k_out_of_range() {
        let points = one_d(&[0.0, 1.0]);
        assert_eq!(
            k_distance(&points, 2).unwrap_err(),
            ClusterError::KTooLarge { k: 2, n: 2 }
        );
    }

    #[test]
    fn mean_pairwise_distance_hand_values() {
        assert_eq!(
            mean_pairwise_distance(&one_d(&[0.0, 1.0, 3.0])).unwrap(),
            2.0
        );
        assert_eq!(mean_pairwise_distance(&one_d(&[4.0, 4.0])).unwrap(), 0.0);
        assert_eq!(mean_pairwise_distance(&one_d(&[1.0, 6.0])).unwrap(), 5.0);
        assert_eq!(
            mean_pairwise_distance(&one_d(&[7.0])).unwrap_err(),
            ClusterError::TooFewPoints { needed: 2, got: 1 }
        );
    }

    #[test]
    fn oversized_input_falls_back_to_a_seeded_sample() {
        let values: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let points = one_d(&values);
        let exact = mean_pairwise_distance(&points).unwrap();
        let sampled = mean_pairwise_distance_with_limit(&points, 25).unwrap();
        // Deterministic and close to the exact mean for uniform data.
        assert_eq!(
            sampled,
            mean_pairwise_distance_with_limit(&points, 25).unwrap()
        );
        assert!((sampled - exact).abs() / exact < 0.25, "sampled {sampled} vs {exact}");
    }

    #[test]
    fn curve_csv_has_rank_and_distance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kdist.csv");
        let curve = KDistanceCurve {
            k: 1,
            distances: vec![0.5, 1.5],
        };
        curve.write_csv(&path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert_eq!(body, "rank,distance\n0,0.5\n1,1.5\n");
    }
}
