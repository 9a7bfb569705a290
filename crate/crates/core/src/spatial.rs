//! Exact k-d tree over f64 points, shared by the clustering neighborhood
//! queries and the detector's nearest-neighbor search.
//!
//! All queries are exact and deterministic: equal distances are broken by
//! the lower point index, and pruning is strict so boundary points are
//! never lost.

use std::collections::BinaryHeap;

/// Euclidean distance, accumulated in dimension order.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    euclidean_sq(a, b).sqrt()
}

pub fn euclidean_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

#[derive(Debug)]
struct Node {
    /// Index into the original point set.
    point: usize,
    split_dim: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Immutable k-d tree; holds its own copy of the points.
#[derive(Debug)]
pub struct KdTree {
    points: Vec<Vec<f64>>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl KdTree {
    pub fn build(points: &[Vec<f64>]) -> KdTree {
        let mut indices: Vec<usize> = (0..points.len()).collect();
        let mut tree = KdTree {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: None,
        };
        tree.root = tree.build_rec(&mut indices);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, idx: usize) -> &[f64] {
        &self.points[idx]
    }

    fn build_rec(&mut self, indices: &mut [usize]) -> Option<usize> {
        if indices.is_empty() {
            return None;
        }
        let dim = self.widest_dimension(indices);
        let mid = indices.len() / 2;
        indices.select_nth_unstable_by(mid, |&a, &b| {
            let ca = self.points[a][dim];
            let cb = self.points[b][dim];
            ca.partial_cmp(&cb)
                .expect("non-finite coordinate")
                .then(a.cmp(&b))
        });
        let point = indices[mid];
        let node_id = self.nodes.len();
        self.nodes.push(Node {
            point,
            split_dim: dim,
            left: None,
            right: None,
        });
        let (lo, hi) = indices.split_at_mut(mid);
        let left = self.build_rec(lo);
        let right = self.build_rec(&mut hi[1..]);
        self.nodes[node_id].left = left;
        self.nodes[node_id].right = right;
        Some(node_id)
    }

    /// Split on the dimension with the largest spread in this subtree.
    fn widest_dimension(&self, indices: &[usize]) -> usize {
        let dims = self.points[indices[0]].len();
        let mut best_dim = 0;
        let mut best_spread = f64::NEG_INFINITY;
        for d in 0..dims {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in indices {
                let v = self.points[i][d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let spread = hi - lo;
            if spread > best_spread {
                best_spread = spread;
                best_dim = d;
            }
        }
        best_dim
    }

    /// Nearest point to `query`; ties resolve to the lower index.
    /// Returns `(index, distance)`.
    pub fn nearest(&self, query: &[f64]) -> Option<(usize, f64)> {
        let root = self.root?;
        let mut best: Option<(f64, usize)> = None;
        self.nearest_rec(root, query, &mut best);
        best.map(|(d_sq, idx)| (idx, d_sq.sqrt()))
    }

    fn nearest_rec(&self, node_id: usize, query: &[f64], best: &mut Option<(f64, usize)>) {
        let node = &self.nodes[node_id];
        let d_sq = euclidean_sq(query, &self.points[node.point]);
        let candidate = (d_sq, node.point);
        match best {
            None => *best = Some(candidate),
            Some(cur) => {
                if candidate < *cur {
                    *best = Some(candidate);
                }
            }
        }
        let diff = query[node.split_dim] - self.points[node.point][node.split_dim];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.nearest_rec(n, query, best);
        }
        if let Some(f) = far {
            // Strict comparison: an equally distant far-side point may win
            // the index tie-break, so it must still be visited.
            if diff * diff <= best.expect("set above").0 {
                self.nearest_rec(f, query, best);
            }
        }
    }

    /// All point indices within distance `r` of `query` (inclusive),
    /// sorted ascending.
    pub fn within_radius(&self, query: &[f64], r: f64) -> Vec<usize> {
        let mut hits = Vec::new();
        if let Some(root) = self.root {
            self.radius_rec(root, query, r * r, &mut hits);
        }
        hits.sort_unstable();
        hits
    }

    fn radius_rec(&self, node_id: usize, query: &[f64], r_sq: f64, hits: &mut Vec<usize>) {
        let node = &self.nodes[node_id];
        if euclidean_sq(query, &self.points[node.point]) <= r_sq {
            hits.push(node.point);
        }
        let diff = query[node.split_dim] - self.points[node.point][node.split_dim];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.radius_rec(n, query, r_sq, hits);
        }
        if let Some(f) = far {
            if diff * diff <= r_sq {
                self.radius_rec(f, query, r_sq, hits);
            }
        }
    }

    /// The `k` nearest points to `query` ordered by `(distance, index)`.
    /// A dataset point passed as its own query counts at distance 0.
    pub fn k_nearest(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        // Max-heap keyed by (dist_sq, idx); the root is the current worst.
        let mut heap: BinaryHeap<HeapKey> = BinaryHeap::with_capacity(k + 1);
        if let Some(root) = self.root {
            self.k_nearest_rec(root, query, k, &mut heap);
        }
        let mut out: Vec<(usize, f64)> = heap
            .into_sorted_vec()
            .into_iter()
            .map(|key| (key.idx, key.d_sq.sqrt()))
            .collect();
        out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    fn k_nearest_rec(&self, node_id: usize, query: &[f64], k: usize, heap: &mut BinaryHeap<HeapKey>) {
        let node = &self.nodes[node_id];
        let d_sq = euclidean_sq(query, &self.points[node.point]);
        let key = HeapKey {
            d_sq,
            idx: node.point,
        };
        if heap.len() < k {
            heap.push(key);
        } else if key < *heap.peek().expect("non-empty") {
            heap.pop();
            heap.push(key);
        }
        let diff = query[node.split_dim] - self.points[node.point][node.split_dim];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.k_nearest_rec(n, query, k, heap);
        }
        if let Some(f) = far {
            let prune = heap.len() == k && diff * diff > heap.peek().expect("full").d_sq;
            if !prune {
                self.k_nearest_rec(f, query, k, heap);
            }
        }
    }
}

#[derive(PartialEq)]
struct HeapKey {
    d_sq: f64,
    idx: usize,
}

impl Eq for HeapKey {}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.d_sq
            .partial_cmp(&other.d_sq)
            .expect("finite distance")
            .then(self.idx.cmp(&other.idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::SplitMix64;

    fn random_points(seed: u64, n: usize, dims: usize) -> Vec<Vec<f64>> {
        let mut rng = SplitMix64::new(seed);
        (0..n)
            .map(|_| (0..dims).map(|_| rng.next_f64() * 10.0).collect())
            .collect()
    }

    #[test]
    fn nearest_matches_linear_scan() {
        for seed in 0..10u64 {
            let pts = random_points(seed, 80, 3);
            let tree = KdTree::build(&pts);
            let queries = random_points(seed ^ 0xdead, 40, 3);
            for q in &queries {
                let (idx, dist) = tree.nearest(q).unwrap();
                let brute = pts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (euclidean(q, p), i))
                    .min_by(|a, b| a.partial_cmp(b).unwrap())
                    .unwrap();
                assert_eq!((brute.1, brute.0), (idx, dist));
            }
        }
    }

    #[test]
    fn nearest_tie_prefers_lower_index() {
        // Two points equidistant from the query.
        let pts = vec![vec![2.0, 0.0], vec![-2.0, 0.0], vec![50.0, 50.0]];
        let (idx, dist) = KdTree::build(&pts).nearest(&[0.0, 0.0]).unwrap();
        assert_eq!(idx, 0);
        assert_eq!(dist, 2.0);
    }

    #[test]
    fn radius_is_inclusive_and_sorted() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let tree = KdTree::build(&pts);
        assert_eq!(tree.within_radius(&[1.0], 1.0), vec![0, 1, 2]);
    }

    #[test]
    fn radius_matches_linear_scan() {
        for seed in 0..10u64 {
            let pts = random_points(seed, 60, 4);
            let tree = KdTree::build(&pts);
            for q in random_points(seed + 100, 20, 4) {
                for r in [0.5, 2.0, 8.0] {
                    let brute: Vec<usize> = pts
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| euclidean(&q, p) <= r)
                        .map(|(i, _)| i)
                        .collect();
                    assert_eq!(tree.within_radius(&q, r), brute);
                }
            }
        }
    }

    #[test]
    fn k_nearest_matches_linear_scan() {
        for seed in 0..6u64 {
            let pts = random_points(seed, 50, 5);
            let tree = KdTree::build(&pts);
            for q in random_points(seed + 7, 10, 5) {
                for k in [1usize, 3, 10, 50] {
                    let got = tree.k_nearest(&q, k);
                    let mut brute: Vec<(usize, f64)> = pts
                        .iter()
                        .enumerate()
                        .map(|(i, p)| (i, euclidean(&q, p)))
                        .collect();
                    brute.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
                    brute.truncate(k);
                    assert_eq!(got, brute);
                }
            }
        }
    }

    #[test]
    fn duplicate_points_are_all_reported() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let tree = KdTree::build(&pts);
        assert_eq!(tree.within_radius(&[1.0, 1.0], 0.0), vec![0, 1, 2, 3, 4]);
        assert_eq!(tree.nearest(&[1.0, 1.0]).unwrap(), (0, 0.0));
    }
}
