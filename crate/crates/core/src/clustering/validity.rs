//! Clustering-quality scores: silhouette and DBCV.
//!
//! DBCV follows the original density-based validation definition:
//! all-points core distances, mutual-reachability spanning trees per
//! cluster, density sparseness vs. pairwise separation. Noise points
//! count toward the weighting denominator but contribute no validity.

use thiserror::Error;

use crate::spatial::euclidean;

use super::NOISE;

#[derive(Debug, Error, PartialEq)]
pub enum ValidityError {
    #[error("labels length {labels} does not match point count {points}")]
    LengthMismatch { labels: usize, points: usize },
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),
}

/// Mean silhouette over non-noise points: `(b - a) / max(a, b)` with the
/// `0/0 := 0` convention; singleton-cluster points score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[i32]) -> Result<f64, ValidityError> {
    if labels.len() != points.len() {
        return Err(ValidityError::LengthMismatch {
            labels: labels.len(),
            points: points.len(),
        });
    }
    let clusters = cluster_indices(labels);
    if clusters.len() < 2 {
        return Err(ValidityError::SingleCluster);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (&label, members) in &clusters {
        for &p in members {
            if members.len() == 1 {
                count += 1;
                continue; // singleton scores 0
            }
            let a = members
                .iter()
                .filter(|&&q| q != p)
                .map(|&q| euclidean(&points[p], &points[q]))
                .sum::<f64>()
                / (members.len() - 1) as f64;
            let b = clusters
                .iter()
                .filter(|(&other, _)| other != label)
                .map(|(_, other_members)| {
                    other_members
                        .iter()
                        .map(|&q| euclidean(&points[p], &points[q]))
                        .sum::<f64>()
                        / other_members.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                sum += (b - a) / denom;
            }
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Density-Based Clustering Validation index in `[-1, 1]`.
pub fn dbcv(points: &[Vec<f64>], labels: &[i32]) -> Result<f64, ValidityError> {
    if labels.len() != points.len() {
        return Err(ValidityError::LengthMismatch {
            labels: labels.len(),
            points: points.len(),
        });
    }
    let clusters = cluster_indices(labels);
    if clusters.len() < 2 {
        return Err(ValidityError::DegenerateClustering(
            "need at least two clusters".into(),
        ));
    }
    for (label, members) in &clusters {
        if members.len() < 2 {
            return Err(ValidityError::DegenerateClustering(format!(
                "cluster {label} has fewer than two points"
            )));
        }
    }
    let dims = points[0].len();
    let n_total = points.len(); // noise included in the weights

    // Per cluster: all-points core distances, MST over mutual
    // reachability, internal nodes, density sparseness.
    let mut core: Vec<Vec<f64>> = Vec::with_capacity(clusters.len());
    let mut internal: Vec<Vec<usize>> = Vec::with_capacity(clusters.len());
    let mut sparseness: Vec<f64> = Vec::with_capacity(clusters.len());
    let member_sets: Vec<&Vec<usize>> = clusters.values().collect();
    for members in &member_sets {
        let apts: Vec<f64> = members
            .iter()
            .map(|&p| all_points_core_distance(points, members, p, dims))
            .collect();
        let (nodes, dsc) = mst_internal_and_sparseness(points, members, &apts);
        core.push(apts);
        internal.push(nodes);
        sparseness.push(dsc);
    }

    // Pairwise separation, then validity per cluster.
    let m = member_sets.len();
    let mut score = 0.0;
    for i in 0..m {
        let mut min_separation = f64::INFINITY;
        for j in 0..m {
            if i == j {
                continue;
            }
            let sep = separation(
                points,
                member_sets[i],
                &core[i],
                &internal[i],
                member_sets[j],
                &core[j],
                &internal[j],
            );
            min_separation = min_separation.min(sep);
        }
        let dsc = sparseness[i];
        let denom = min_separation.max(dsc);
        let validity = if denom > 0.0 && denom.is_finite() {
            (min_separation - dsc) / denom
        } else {
            0.0
        };
        score += member_sets[i].len() as f64 / n_total as f64 * validity;
    }
    Ok(score)
}

/// Non-noise clusters as ordered `(label, member indices)` pairs.
fn cluster_indices(labels: &[i32]) -> std::collections::BTreeMap<i32, Vec<usize>> {
    let mut map = std::collections::BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l != NOISE {
            map.entry(l).or_insert_with(Vec::new).push(i);
        }
    }
    map
}

/// Inverse-distance density estimate of `p` against its own cluster.
fn all_points_core_distance(points: &[Vec<f64>], members: &[usize], p: usize, dims: usize) -> f64 {
    let mut sum = 0.0;
    for &q in members {
        if q == p {
            continue;
        }
        let d = euclidean(&points[p], &points[q]);
        if d == 0.0 {
            return 0.0; // a duplicate makes the density infinite
        }
        sum += (1.0 / d).powi(dims as i32);
    }
    if sum.is_infinite() {
        return 0.0;
    }
    let mean = sum / (members.len() - 1) as f64;
    mean.powf(-1.0 / dims as f64)
}

/// Prim's MST over the cluster's mutual-reachability graph. Returns the
/// internal nodes (degree >= 2; all nodes when none) and the density
/// sparseness (max weight among internal-internal edges, falling back to
/// the overall max edge).
fn mst_internal_and_sparseness(
    points: &[Vec<f64>],
    members: &[usize],
    apts: &[f64],
) -> (Vec<usize>, f64) {
    let k = members.len();
    let reach = |a: usize, b: usize| -> f64 {
        euclidean(&points[members[a]], &points[members[b]])
            .max(apts[a])
            .max(apts[b])
    };
    let mut in_tree = vec![false; k];
    let mut best = vec![f64::INFINITY; k];
    let mut from = vec![0usize; k];
    let mut degree = vec![0usize; k];
    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(k - 1);
    in_tree[0] = true;
    let mut current = 0usize;
    for _ in 1..k {
        let mut next = usize::MAX;
        let mut next_dist = f64::INFINITY;
        for i in 0..k {
            if in_tree[i] {
                continue;
            }
            let d = reach(current, i);
            if d < best[i] {
                best[i] = d;
                from[i] = current;
            }
            if best[i] < next_dist {
                next_dist = best[i];
                next = i;
            }
        }
        edges.push((from[next], next, next_dist));
        degree[from[next]] += 1;
        degree[next] += 1;
        in_tree[next] = true;
        current = next;
    }
    let mut internal: Vec<usize> = (0..k).filter(|&i| degree[i] >= 2).collect();
    if internal.is_empty() {
        internal = (0..k).collect();
    }
    let internal_edge_max = edges
        .iter()
        .filter(|(a, b, _)| degree[*a] >= 2 && degree[*b] >= 2)
        .map(|(_, _, w)| *w)
        .fold(f64::NEG_INFINITY, f64::max);
    let dsc = if internal_edge_max == f64::NEG_INFINITY {
        // No internal-internal edge (tiny clusters): use the overall max.
        edges.iter().map(|e| e.2).fold(0.0, f64::max)
    } else {
        internal_edge_max
    };
    // Map internal positions back to global point indices.
    let internal_global = internal.iter().map(|&i| members[i]).collect();
    (internal_global, dsc)
}

/// Minimum mutual-reachability distance between the internal nodes of two
/// clusters, each point using its own-cluster core distance.
#[allow(clippy::too_many_arguments)]
fn separation(
    points: &[Vec<f64>],
    members_a: &[usize],
    core_a: &[f64],
    internal_a: &[usize],
    members_b: &[usize],
    core_b: &[f64],
    internal_b: &[usize],
) -> f64 {
    let apts = |members: &[usize], core: &[f64], global: usize| -> f64 {
        let pos = members
            .iter()
            .position(|&m| m == global)
            .expect("internal node belongs to its cluster");
        core[pos]
    };
    let mut min = f64::INFINITY;
    for &p in internal_a {
        for &q in internal_b {
            let d = euclidean(&points[p], &points[q])
                .max(apts(members_a, core_a, p))
                .max(apts(members_b, core_b, q));
            min = min.min(d);
        }
    }
    min
}
