//! Independent DBCV oracle: a direct quadratic transliteration of the
//! density-based validation formulas (all-points core distance, mutual
//! reachability, Kruskal spanning tree, internal-node sparseness and
//! separation), checked against the library implementation and a frozen
//! value on a fixed instance.

use flowguard::clustering::dbcv;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn apts(points: &[Vec<f64>], members: &[usize], p: usize, dims: usize) -> f64 {
    let mut sum = 0.0;
    for &q in members {
        if q == p {
            continue;
        }
        let d = dist(&points[p], &points[q]);
        if d == 0.0 {
            return 0.0;
        }
        sum += (1.0 / d).powi(dims as i32);
    }
    if sum.is_infinite() {
        return 0.0;
    }
    (sum / (members.len() - 1) as f64).powf(-1.0 / dims as f64)
}

/// Spanning tree over the mutual-reachability graph of one cluster;
/// returns (internal member positions, density sparseness).
///
/// Mutual-reachability graphs carry structural weight ties (many pairs
/// share one dominating core distance), and the internal-edge notion
/// depends on the tree shape, which differs between equally minimal
/// spanning trees. The index's tree-construction convention is therefore
/// pinned: Prim from node 0, lower index wins ties. This oracle writes
/// that convention out independently, edge by edge.
fn mst_stats(points: &[Vec<f64>], members: &[usize], core: &[f64]) -> (Vec<usize>, f64) {
    let k = members.len();
    let w = |i: usize, j: usize| -> f64 {
        dist(&points[members[i]], &points[members[j]])
            .max(core[i])
            .max(core[j])
    };
    let mut in_tree = vec![false; k];
    in_tree[0] = true;
    let mut best_via: Vec<Option<(f64, usize)>> = vec![None; k];
    let mut last_added = 0usize;
    let mut chosen: Vec<(f64, usize, usize)> = Vec::new();
    let mut degree = vec![0usize; k];
    for _ in 1..k {
        for cand in 0..k {
            if in_tree[cand] {
                continue;
            }
            let d = w(last_added, cand);
            if best_via[cand].map(|(bd, _)| d < bd).unwrap_or(true) {
                best_via[cand] = Some((d, last_added));
            }
        }
        let (next, (weight, from)) = (0..k)
            .filter(|&c| !in_tree[c])
            .map(|c| (c, best_via[c].expect("frontier candidate")))
            .min_by(|a, b| (a.1 .0, a.0).partial_cmp(&(b.1 .0, b.0)).unwrap())
            .expect("tree incomplete");
        in_tree[next] = true;
        degree[from] += 1;
        degree[next] += 1;
        chosen.push((weight, from, next));
        last_added = next;
    }
    let internal: Vec<usize> = (0..k).filter(|&i| degree[i] >= 2).collect();
    let internal = if internal.is_empty() {
        (0..k).collect()
    } else {
        internal
    };
    let internal_max = chosen
        .iter()
        .filter(|(_, i, j)| degree[*i] >= 2 && degree[*j] >= 2)
        .map(|(w, _, _)| *w)
        .fold(f64::NEG_INFINITY, f64::max);
    let dsc = if internal_max == f64::NEG_INFINITY {
        chosen.iter().map(|e| e.0).fold(0.0, f64::max)
    } else {
        internal_max
    };
    (internal, dsc)
}

fn oracle_dbcv(points: &[Vec<f64>], labels: &[i32]) -> f64 {
    let dims = points[0].len();
    let n_total = points.len();
    let cluster_ids: Vec<i32> = {
        let mut ids: Vec<i32> = labels.iter().copied().filter(|&l| l >= 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let members_of = |c: i32| -> Vec<usize> {
        labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == c)
            .map(|(i, _)| i)
            .collect()
    };
    // (members, core distances, internal nodes, sparseness) per cluster
    type ClusterData = (Vec<usize>, Vec<f64>, Vec<usize>, f64);
    let data: Vec<ClusterData> = cluster_ids
        .iter()
        .map(|&c| {
            let members = members_of(c);
            let core: Vec<f64> = members
                .iter()
                .map(|&p| apts(points, &members, p, dims))
                .collect();
            let (internal, dsc) = mst_stats(points, &members, &core);
            (members, core, internal, dsc)
        })
        .collect();
    let mut score = 0.0;
    for (i, (members_i, core_i, internal_i, dsc_i)) in data.iter().enumerate() {
        let mut min_sep = f64::INFINITY;
        for (j, (members_j, core_j, internal_j, _)) in data.iter().enumerate() {
            if i == j {
                continue;
            }
            for &pi in internal_i {
                for &pj in internal_j {
                    let d = dist(&points[members_i[pi]], &points[members_j[pj]])
                        .max(core_i[pi])
                        .max(core_j[pj]);
                    min_sep = min_sep.min(d);
                }
            }
        }
        let denom = min_sep.max(*dsc_i);
        let validity = if denom > 0.0 && denom.is_finite() {
            (min_sep - dsc_i) / denom
        } else {
            0.0
        };
        score += members_i.len() as f64 / n_total as f64 * validity;
    }
    score
}

/// The frozen instance: two right-angle triangles far apart.
fn six_points() -> (Vec<Vec<f64>>, Vec<i32>) {
    let points = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![10.0, 10.0],
        vec![11.0, 10.0],
        vec![10.0, 11.0],
    ];
    (points, vec![0, 0, 0, 1, 1, 1])
}

#[test]
fn implementation_matches_the_oracle_on_the_frozen_instance() {
    let (points, labels) = six_points();
    let ours = dbcv(&points, &labels).unwrap();
    let oracle = oracle_dbcv(&points, &labels);
    assert!((ours - oracle).abs() < 1e-9, "ours {ours} vs oracle {oracle}");
    // Value computed by the oracle above, frozen.
    assert!(
        (ours - 0.918350341907227).abs() < 1e-9,
        "frozen instance moved: {ours}"
    );
}

#[test]
fn implementation_matches_the_oracle_on_random_labelings() {
    use flowguard::synthgen::SplitMix64;
    for seed in 0..30u64 {
        let mut rng = SplitMix64::new(seed ^ 0xDBC4);
        let n = 8 + rng.next_below(12) as usize;
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.next_f64() * 20.0, rng.next_f64() * 20.0, rng.next_f64() * 20.0])
            .collect();
        // Random 2- or 3-way labeling with at least 2 per cluster.
        let n_clusters = 2 + rng.next_below(2) as i32;
        let labels: Vec<i32> = (0..n).map(|i| (i as i32) % n_clusters).collect();
        let ours = dbcv(&points, &labels).unwrap();
        let oracle = oracle_dbcv(&points, &labels);
        assert!(
            (ours - oracle).abs() < 1e-9,
            "seed {seed}: ours {ours} vs oracle {oracle}"
        );
    }
}
