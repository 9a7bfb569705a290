//! HDBSCAN: hierarchical density-based clustering.
//!
//! Pipeline: core distances (distance to the `min_samples`-th nearest
//! neighbor, the point itself counted first), Prim's minimum spanning
//! tree over mutual reachability distances, single-linkage hierarchy,
//! condensed tree under `min_cluster_size`, then excess-of-mass cluster
//! selection. MST ties break toward the lower point index.
//!
//! When the condensed tree never splits (a single root), the root itself
//! is taken as one cluster at its own lambda threshold, or everything is
//! noise if too few points survive that threshold. This keeps degenerate
//! inputs (for example all-duplicate points) in one cluster instead of
//! rejecting them.

use std::collections::HashMap;

use crate::spatial::{euclidean, KdTree};

use super::{ClusterAssignment, ClusterError, NOISE};

struct MstEdge {
    a: usize,
    b: usize,
    weight: f64,
}

/// Single-linkage node; ids `0..n` are leaves, `n..2n-1` internal.
struct SltNode {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

/// One condensed-tree entry: `child` hangs under cluster `parent` and
/// detaches at density level `lambda`. Children with `child < n` are
/// individual points (size 1), larger ids are sub-clusters.
struct CondensedEntry {
    parent: usize,
    child: usize,
    lambda: f64,
    size: usize,
}

pub fn hdbscan(
    points: &[Vec<f64>],
    min_cluster_size: usize,
    min_samples: usize,
) -> Result<ClusterAssignment, ClusterError> {
    if points.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    if min_cluster_size < 2 {
        return Err(ClusterError::InvalidParams(
            "min_cluster_size must be >= 2".into(),
        ));
    }
    if min_samples < 1 {
        return Err(ClusterError::InvalidParams(
            "min_samples must be >= 1".into(),
        ));
    }
    let n = points.len();
    if n < min_cluster_size {
        return Err(ClusterError::TooFewPoints {
            needed: min_cluster_size,
            got: n,
        });
    }
    if min_samples > n {
        return Err(ClusterError::InvalidParams(format!(
            "min_samples {min_samples} exceeds point count {n}"
        )));
    }

    let core = core_distances(points, min_samples);
    let mut mst = prim_mst(points, &core);
    mst.sort_by(|x, y| {
        x.weight
            .partial_cmp(&y.weight)
            .expect("finite weight")
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    let slt = single_linkage(&mst, n);
    let condensed = condense(&slt, n, min_cluster_size);
    let labels = extract_labels(&condensed, n, min_cluster_size);
    Ok(ClusterAssignment::from_labels(labels))
}

/// Distance to the `min_samples`-th nearest neighbor, self included.
fn core_distances(points: &[Vec<f64>], min_samples: usize) -> Vec<f64> {
    let tree = KdTree::build(points);
    points
        .iter()
        .map(|p| tree.k_nearest(p, min_samples)[min_samples - 1].1)
        .collect()
}

fn mutual_reachability(points: &[Vec<f64>], core: &[f64], a: usize, b: usize) -> f64 {
    euclidean(&points[a], &points[b])
        .max(core[a])
        .max(core[b])
}

/// Dense Prim over the implicit mutual-reachability graph.
fn prim_mst(points: &[Vec<f64>], core: &[f64]) -> Vec<MstEdge> {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best_dist = vec![f64::INFINITY; n];
    let mut best_from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0usize;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_dist = f64::INFINITY;
        for i in 0..n {
            if in_tree[i] {
                continue;
            }
            let d = mutual_reachability(points, core, current, i);
            if d < best_dist[i] {
                best_dist[i] = d;
                best_from[i] = current;
            }
            // Lower index wins distance ties because of the strict
            // comparison and ascending scan order.
            if best_dist[i] < next_dist {
                next_dist = best_dist[i];
                next = i;
            }
        }
        let (a, b) = if best_from[next] < next {
            (best_from[next], next)
        } else {
            (next, best_from[next])
        };
        edges.push(MstEdge {
            a,
            b,
            weight: next_dist,
        });
        in_tree[next] = true;
        current = next;
    }
    edges
}

/// Merge points bottom-up along ascending MST edges.
fn single_linkage(sorted_edges: &[MstEdge], n: usize) -> Vec<SltNode> {
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    let mut node_of: Vec<usize> = (0..2 * n - 1).collect();
    let mut size: Vec<usize> = vec![1; 2 * n - 1];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut nodes = Vec::with_capacity(n - 1);
    for (step, edge) in sorted_edges.iter().enumerate() {
        let ra = find(&mut parent, edge.a);
        let rb = find(&mut parent, edge.b);
        let new_id = n + step;
        let merged = size[ra] + size[rb];
        nodes.push(SltNode {
            left: node_of[ra],
            right: node_of[rb],
            distance: edge.weight,
            size: merged,
        });
        parent[ra] = new_id;
        parent[rb] = new_id;
        size[new_id] = merged;
        node_of[new_id] = new_id;
    }
    nodes
}

fn lambda_of(distance: f64) -> f64 {
    if distance > 0.0 {
        1.0 / distance
    } else {
        f64::INFINITY
    }
}

/// Collapse the single-linkage tree: splits where both sides reach
/// `min_cluster_size` create sub-clusters, smaller sides spill their
/// points at the split's lambda.
fn condense(slt: &[SltNode], n: usize, min_cluster_size: usize) -> Vec<CondensedEntry> {
    let mut entries = Vec::new();
    if slt.is_empty() {
        // Single point; never reached because min_cluster_size >= 2.
        return entries;
    }
    let size_of = |id: usize| if id < n { 1 } else { slt[id - n].size };
    let root_slt = n + slt.len() - 1;
    let root_condensed = n;
    let mut next_id = n + 1;
    // (slt node, condensed cluster it belongs to)
    let mut stack = vec![(root_slt, root_condensed)];
    while let Some((slt_id, cluster)) = stack.pop() {
        let node = &slt[slt_id - n];
        let lambda = lambda_of(node.distance);
        let left_big = size_of(node.left) >= min_cluster_size;
        let right_big = size_of(node.right) >= min_cluster_size;
        match (left_big, right_big) {
            (true, true) => {
                // A real split: both sides become new clusters.
                for &child in &[node.left, node.right] {
                    let id = next_id;
                    next_id += 1;
                    entries.push(CondensedEntry {
                        parent: cluster,
                        child: id,
                        lambda,
                        size: size_of(child),
                    });
                    stack.push((child, id));
                }
            }
            (false, false) => {
                // The cluster dissolves; all remaining points exit here.
                for side in [node.left, node.right] {
                    spill_points(slt, n, side, cluster, lambda, &mut entries);
                }
            }
            (true, false) => {
                spill_points(slt, n, node.right, cluster, lambda, &mut entries);
                stack.push((node.left, cluster));
            }
            (false, true) => {
                spill_points(slt, n, node.left, cluster, lambda, &mut entries);
                stack.push((node.right, cluster));
            }
        }
    }
    entries
}

/// Emit every leaf under `slt_id` as a point exiting `cluster` at `lambda`.
fn spill_points(
    slt: &[SltNode],
    n: usize,
    slt_id: usize,
    cluster: usize,
    lambda: f64,
    entries: &mut Vec<CondensedEntry>,
) {
    let mut stack = vec![slt_id];
    while let Some(id) = stack.pop() {
        if id < n {
            entries.push(CondensedEntry {
                parent: cluster,
                child: id,
                lambda,
                size: 1,
            });
        } else {
            let node = &slt[id - n];
            stack.push(node.left);
            stack.push(node.right);
        }
    }
}

fn extract_labels(entries: &[CondensedEntry], n: usize, min_cluster_size: usize) -> Vec<i32> {
    let root = n;
    let mut cluster_ids: Vec<usize> = entries
        .iter()
        .filter(|e| e.child >= n)
        .map(|e| e.child)
        .collect();
    cluster_ids.sort_unstable();

    if cluster_ids.is_empty() {
        return single_root_labels(entries, n, root, min_cluster_size);
    }

    // Birth lambda of each cluster: the lambda of the entry creating it.
    let mut birth: HashMap<usize, f64> = HashMap::new();
    birth.insert(root, 0.0);
    for e in entries {
        if e.child >= n {
            birth.insert(e.child, e.lambda);
        }
    }
    // Stability: mass accumulated by children past the birth level.
    let mut stability: HashMap<usize, f64> = HashMap::new();
    for &c in cluster_ids.iter().chain(std::iter::once(&root)) {
        let b = birth[&c];
        let s: f64 = entries
            .iter()
            .filter(|e| e.parent == c)
            .map(|e| {
                if e.lambda.is_infinite() && b.is_infinite() {
                    0.0
                } else {
                    (e.lambda - b) * e.size as f64
                }
            })
            .sum();
        stability.insert(c, s);
    }
    let child_clusters: HashMap<usize, Vec<usize>> = {
        let mut m: HashMap<usize, Vec<usize>> = HashMap::new();
        for e in entries {
            if e.child >= n {
                m.entry(e.parent).or_default().push(e.child);
            }
        }
        m
    };

    // Excess of mass, leaves upward; the root is never a candidate.
    let mut selected: HashMap<usize, bool> =
        cluster_ids.iter().map(|&c| (c, false)).collect();
    for &c in cluster_ids.iter().rev() {
        let child_sum: f64 = child_clusters
            .get(&c)
            .map(|kids| kids.iter().map(|k| stability[k]).sum())
            .unwrap_or(0.0);
        if stability[&c] > child_sum {
            selected.insert(c, true);
            for d in descendants(&child_clusters, c) {
                selected.insert(d, false);
            }
        } else {
            stability.insert(c, child_sum);
        }
    }

    let mut winners: Vec<usize> = selected
        .iter()
        .filter(|(_, &keep)| keep)
        .map(|(&c, _)| c)
        .collect();
    winners.sort_unstable();

    let mut labels = vec![NOISE; n];
    for (idx, &c) in winners.iter().enumerate() {
        let mut stack = vec![c];
        while let Some(node) = stack.pop() {
            for e in entries.iter().filter(|e| e.parent == node) {
                if e.child >= n {
                    stack.push(e.child);
                } else {
                    labels[e.child] = idx as i32;
                }
            }
        }
    }
    labels
}

fn descendants(child_clusters: &HashMap<usize, Vec<usize>>, c: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![c];
    while let Some(x) = stack.pop() {
        if let Some(kids) = child_clusters.get(&x) {
            for &k in kids {
                out.push(k);
                stack.push(k);
            }
        }
    }
    out
}

/// The tree never split: keep the root as a single cluster at its own
/// lambda threshold (points that persisted to the final density level),
/// or call everything noise if too few qualify.
fn single_root_labels(
    entries: &[CondensedEntry],
    n: usize,
    root: usize,
    min_cluster_size: usize,
) -> Vec<i32> {
    let threshold = entries
        .iter()
        .filter(|e| e.parent == root)
        .map(|e| e.lambda)
        .fold(f64::NEG_INFINITY, f64::max);
    let members: Vec<usize> = entries
        .iter()
        .filter(|e| e.parent == root && e.child < n && e.lambda >= threshold)
        .map(|e| e.child)
        .collect();
    let mut labels = vec![NOISE; n];
    if members.len() >= min_cluster_size {
        for m in members {
            labels[m] = 0;
        }
    }
    labels
}
