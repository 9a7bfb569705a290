//! DBSCAN with standard core/border/noise semantics.
//!
//! Clusters are seeded in ascending point-index order and neighborhoods
//! are expanded breadth-first over index-sorted neighbor lists, so the
//! labeling is deterministic. A point's neighborhood includes itself and
//! the radius comparison is inclusive (`d <= eps`).

use std::collections::VecDeque;

use crate::spatial::KdTree;

use super::{ClusterAssignment, ClusterError, NOISE};

const UNVISITED: i32 = -2;

pub fn dbscan(
    points: &[Vec<f64>],
    eps: f64,
    min_samples: usize,
) -> Result<ClusterAssignment, ClusterError> {
    if points.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    if !eps.is_finite() || eps <= 0.0 {
        return Err(ClusterError::InvalidParams(format!(
            "eps must be > 0, got {eps}"
        )));
    }
    if min_samples < 1 {
        return Err(ClusterError::InvalidParams(
            "min_samples must be >= 1".into(),
        ));
    }
    let n = points.len();
    let tree = KdTree::build(points);
    let mut labels = vec![UNVISITED; n];
    let mut cluster: i32 = 0;

    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        let neighbors = tree.within_radius(&points[i], eps);
        if neighbors.len() < min_samples {
            labels[i] = NOISE;
            continue;
        }
        labels[i] = cluster;
        let mut queue: VecDeque<usize> = neighbors.into_iter().collect();
        while let Some(q) = queue.pop_front() {
            if labels[q] == NOISE {
                // Border point: reachable but not core.
                labels[q] = cluster;
            }
            if labels[q] != UNVISITED {
                continue;
            }
            labels[q] = cluster;
            let q_neighbors = tree.within_radius(&points[q], eps);
            if q_neighbors.len() >= min_samples {
                queue.extend(q_neighbors);
            }
        }
        cluster += 1;
    }
    Ok(ClusterAssignment::from_labels(labels))
}
