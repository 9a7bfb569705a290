//! Hyperparameter selection: grid search scored by silhouette or DBCV,
//! the mean-pairwise-distance heuristic, and eps-range suggestion from
//! k-distance curves.
//!
//! Degenerate grid cells (a single cluster, or more than half the points
//! as noise) are recorded as failed rather than aborting the search —
//! grid corners collapse routinely and the search must survive them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{
    dbcv, dbscan, hdbscan, mean_pairwise_distance, silhouette, ClusterAssignment, ClusterError,
    KDistanceCurve,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Dbscan,
    Hdbscan,
}

impl std::str::FromStr for Algo {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dbscan" => Ok(Algo::Dbscan),
            "hdbscan" => Ok(Algo::Hdbscan),
            other => Err(format!("unknown algorithm '{other}' (dbscan|hdbscan)")),
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algo::Dbscan => f.write_str("dbscan"),
            Algo::Hdbscan => f.write_str("hdbscan"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Silhouette,
    Dbcv,
}

impl std::str::FromStr for ScoreKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "silhouette" => Ok(ScoreKind::Silhouette),
            "dbcv" => Ok(ScoreKind::Dbcv),
            other => Err(format!("unknown score '{other}' (silhouette|dbcv)")),
        }
    }
}

/// Candidate lists for one grid search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub algo: Algo,
    /// DBSCAN radius candidates; ignored for HDBSCAN.
    #[serde(default)]
    pub eps_values: Vec<f64>,
    /// HDBSCAN cluster-size candidates; ignored for DBSCAN.
    #[serde(default)]
    pub min_cluster_sizes: Vec<usize>,
    pub min_samples_values: Vec<usize>,
    pub score: ScoreKind,
    /// Worker bound for parallel evaluation.
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
}

fn default_parallel() -> usize {
    1
}

/// Parameters of a single grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateParams {
    pub algo: Algo,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub min_cluster_size: Option<usize>,
    pub min_samples: usize,
}

impl CandidateParams {
    /// The primary axis: eps for DBSCAN, min_cluster_size for HDBSCAN.
    fn primary(&self) -> f64 {
        match self.algo {
            Algo::Dbscan => self.eps.unwrap_or(f64::INFINITY),
            Algo::Hdbscan => self.min_cluster_size.unwrap_or(usize::MAX) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRow {
    pub params: CandidateParams,
    /// `None` marks a failed candidate (degenerate clustering or error).
    pub score: Option<f64>,
    pub n_clusters: usize,
    pub n_noise: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub rows: Vec<TuningRow>,
    pub best: TuningRow,
}

impl TuningReport {
    /// Equality ignoring wall times, which legitimately differ between
    /// serial and parallel runs.
    pub fn semantic_eq(&self, other: &TuningReport) -> bool {
        let row_eq = |a: &TuningRow, b: &TuningRow| {
            a.params == b.params
                && a.score == b.score
                && a.n_clusters == b.n_clusters
                && a.n_noise == b.n_noise
        };
        self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(other.rows.iter())
                .all(|(a, b)| row_eq(a, b))
            && row_eq(&self.best, &other.best)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(
            path.as_ref(),
            serde_json::to_string_pretty(self).expect("report serializes"),
        )
    }

    /// One CSV row per candidate.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        writeln!(
            w,
            "algo,eps,min_cluster_size,min_samples,score,n_clusters,n_noise,wall_time_s,failed"
        )?;
        for row in &self.rows {
            let eps = row.params.eps.map(|v| v.to_string()).unwrap_or_default();
            let mcs = row
                .params
                .min_cluster_size
                .map(|v| v.to_string())
                .unwrap_or_default();
            let score = row.score.map(|v| v.to_string()).unwrap_or("-inf".into());
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                row.params.algo,
                eps,
                mcs,
                row.params.min_samples,
                score,
                row.n_clusters,
                row.n_noise,
                row.wall_time_s,
                row.score.is_none()
            )?;
        }
        w.flush()
    }
}

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("every grid candidate failed; widen the parameter ranges")]
    AllCandidatesFailed,
    #[error("k-distance curve too short: {0} points, need at least 3")]
    CurveTooShort(usize),
    #[error("eps heuristic degenerated to 0 (all points identical?)")]
    DegenerateEps,
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

/// Cluster and score every candidate; the best row wins by score, ties by
/// smaller primary parameter, then smaller min_samples.
pub fn grid_search(points: &[Vec<f64>], spec: &GridSpec) -> Result<TuningReport, TuningError> {
    validate_spec(spec)?;
    let candidates = enumerate_candidates(spec);
    let slots: Mutex<Vec<Option<TuningRow>>> = Mutex::new(vec![None; candidates.len()]);
    let cursor = AtomicUsize::new(0);
    let workers = spec.max_parallel.min(candidates.len()).max(1);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= candidates.len() {
                    break;
                }
                let row = evaluate_candidate(points, &candidates[i], spec.score);
                slots.lock().expect("no poisoned workers")[i] = Some(row);
            });
        }
    });

    let rows: Vec<TuningRow> = slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect();

    let best = rows
        .iter()
        .filter(|r| r.score.is_some())
        .min_by(|a, b| {
            // Highest score first, then smaller primary, then min_samples.
            b.score
                .partial_cmp(&a.score)
                .expect("scores finite")
                .then(
                    a.params
                        .primary()
                        .partial_cmp(&b.params.primary())
                        .expect("finite"),
                )
                .then(a.params.min_samples.cmp(&b.params.min_samples))
        })
        .cloned()
        .ok_or(TuningError::AllCandidatesFailed)?;
    Ok(TuningReport { rows, best })
}

fn validate_spec(spec: &GridSpec) -> Result<(), TuningError> {
    let invalid = |msg: &str| Err(TuningError::InvalidSpec(msg.into()));
    match spec.algo {
        Algo::Dbscan => {
            if spec.eps_values.is_empty() {
                return invalid("eps_values must not be empty for dbscan");
            }
            if spec.eps_values.iter().any(|&e| !e.is_finite() || e <= 0.0) {
                return invalid("eps candidates must be positive");
            }
        }
        Algo::Hdbscan => {
            if spec.min_cluster_sizes.is_empty() {
                return invalid("min_cluster_sizes must not be empty for hdbscan");
            }
            if spec.min_cluster_sizes.iter().any(|&m| m < 2) {
                return invalid("min_cluster_size candidates must be >= 2");
            }
        }
    }
    if spec.min_samples_values.is_empty() {
        return invalid("min_samples_values must not be empty");
    }
    if spec.min_samples_values.iter().any(|&m| m < 1) {
        return invalid("min_samples candidates must be >= 1");
    }
    Ok(())
}

fn enumerate_candidates(spec: &GridSpec) -> Vec<CandidateParams> {
    let mut out = Vec::new();
    match spec.algo {
        Algo::Dbscan => {
            for &eps in &spec.eps_values {
                for &ms in &spec.min_samples_values {
                    out.push(CandidateParams {
                        algo: Algo::Dbscan,
                        eps: Some(eps),
                        min_cluster_size: None,
                        min_samples: ms,
                    });
                }
            }
        }
        Algo::Hdbscan => {
            for &mcs in &spec.min_cluster_sizes {
                for &ms in &spec.min_samples_values {
                    out.push(CandidateParams {
                        algo: Algo::Hdbscan,
                        eps: None,
                        min_cluster_size: Some(mcs),
                        min_samples: ms,
                    });
                }
            }
        }
    }
    out
}

fn evaluate_candidate(
    points: &[Vec<f64>],
    params: &CandidateParams,
    score_kind: ScoreKind,
) -> TuningRow {
    let start = Instant::now();
    let clustering: Result<ClusterAssignment, ClusterError> = match params.algo {
        Algo::Dbscan => dbscan(points, params.eps.expect("dbscan has eps"), params.min_samples),
        Algo::Hdbscan => hdbscan(
            points,
            params.min_cluster_size.expect("hdbscan has size"),
            params.min_samples,
        ),
    };
    let (score, n_clusters, n_noise) = match clustering {
        Ok(assignment) => {
            let degenerate = assignment.n_clusters < 2
                || assignment.n_noise * 2 > assignment.labels.len();
            let score = if degenerate {
                None
            } else {
                match score_kind {
                    ScoreKind::Silhouette => silhouette(points, &assignment.labels).ok(),
                    ScoreKind::Dbcv => dbcv(points, &assignment.labels).ok(),
                }
            };
            (score, assignment.n_clusters, assignment.n_noise)
        }
        Err(_) => (None, 0, 0),
    };
    TuningRow {
        params: params.clone(),
        score,
        n_clusters,
        n_noise,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

/// Default scaling from mean pairwise distance to eps.
pub const DEFAULT_MPD_ALPHA: f64 = 0.1;
/// Default min_samples companion for [`mpd_params`].
pub const DEFAULT_MIN_SAMPLES: usize = 4;

/// The mean-pairwise-distance heuristic: `eps = alpha * mpd`, with a
/// caller-chosen min_samples.
pub fn mpd_params(
    points: &[Vec<f64>],
    alpha: f64,
    min_samples_default: usize,
) -> Result<(f64, usize), TuningError> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(TuningError::InvalidSpec(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let mpd = mean_pairwise_distance(points)?;
    let eps = alpha * mpd;
    if eps == 0.0 {
        return Err(TuningError::DegenerateEps);
    }
    Ok((eps, min_samples_default))
}

/// Knee of a k-distance curve by maximum perpendicular distance to the
/// first-to-last chord; returns `(0.5, 1.5)` times the knee value. A
/// perfectly linear curve centers the range on the midpoint value.
pub fn suggest_eps_range(curve: &KDistanceCurve) -> Result<(f64, f64), TuningError> {
    let d = &curve.distances;
    if d.len() < 3 {
        return Err(TuningError::CurveTooShort(d.len()));
    }
    let n = d.len();
    let (x1, y1) = (0.0, d[0]);
    let (x2, y2) = ((n - 1) as f64, d[n - 1]);
    let dy = y2 - y1;
    let dx = x2 - x1;
    let norm = (dy * dy + dx * dx).sqrt();
    let mut knee = 0usize;
    let mut best = 0.0f64;
    for (i, &y) in d.iter().enumerate() {
        let x = i as f64;
        let dist = (dy * x - dx * y + x2 * y1 - y2 * x1).abs() / norm;
        if dist > best {
            best = dist;
            knee = i;
        }
    }
    if best == 0.0 {
        // Chord coincides with the curve; take the midpoint.
        knee = (n - 1) / 2;
    }
    let value = d[knee];
    Ok((value * 0.5, value * 1.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    fn two_blob_points() -> Vec<Vec<f64>> {
        let mut values = vec![0.0, 0.4, 0.8, 1.2];
        values.extend([50.0, 50.4, 50.8, 51.2]);
        one_d(&values)
    }

    fn dbscan_spec(eps_values: Vec<f64>, max_parallel: usize) -> GridSpec {
        GridSpec {
            algo: Algo::Dbscan,
            eps_values,
            min_cluster_sizes: vec![],
            min_samples_values: vec![2],
            score: ScoreKind::Silhouette,
            max_parallel,
        }
    }

    #[test]
    fn grid_search_rejects_degenerate_corners() {
        let points = two_blob_points();
        let report = grid_search(&points, &dbscan_spec(vec![0.1, 1.5, 100.0], 1)).unwrap();
        assert_eq!(report.rows.len(), 3);
        // eps=0.1: all noise -> failed; eps=100: one cluster -> failed.
        assert!(report.rows[0].score.is_none());
        assert!(report.rows[1].score.is_some());
        assert!(report.rows[2].score.is_none());
        assert_eq!(report.best.params.eps, Some(1.5));
    }

    #[test]
    fn single_candidate_is_best() {
        let points = two_blob_points();
        let report = grid_search(&points, &dbscan_spec(vec![1.5], 1)).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.best.params.eps, Some(1.5));
    }

    #[test]
    fn equal_scores_pick_the_smaller_eps() {
        let points = two_blob_points();
        // Both eps produce the identical clustering, hence equal scores.
        let report = grid_search(&points, &dbscan_spec(vec![2.0, 1.4], 1)).unwrap();
        assert_eq!(report.rows[0].score, report.rows[1].score);
        assert_eq!(report.best.params.eps, Some(1.4));
    }

    #[test]
    fn all_failed_is_an_error() {
        let points = two_blob_points();
        let err = grid_search(&points, &dbscan_spec(vec![0.01], 1)).unwrap_err();
        assert!(matches!(err, TuningError::AllCandidatesFailed));
    }

    #[test]
    fn parallel_run_matches_serial() {
        let points = two_blob_points();
        let grid = vec![0.1, 0.5, 1.5, 3.0, 100.0];
        let serial = grid_search(&points, &dbscan_spec(grid.clone(), 1)).unwrap();
        let parallel = grid_search(&points, &dbscan_spec(grid, 4)).unwrap();
        assert!(serial.semantic_eq(&parallel));
    }

    #[test]
    fn hdbscan_grid_works() {
        let points = two_blob_points();
        let spec = GridSpec {
            algo: Algo::Hdbscan,
            eps_values: vec![],
            min_cluster_sizes: vec![2, 3],
            min_samples_values: vec![1, 2],
            score: ScoreKind::Dbcv,
            max_parallel: 2,
        };
        let report = grid_search(&points, &spec).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.best.score.unwrap() > 0.5);
    }

    #[test]
    fn mpd_params_hand_values() {
        let points = one_d(&[0.0, 1.0, 3.0]);
        let (eps, ms) = mpd_params(&points, 0.1, 4).unwrap();
        assert!((eps - 0.2).abs() < 1e-12);
        assert_eq!(ms, 4);

        let (eps, _) = mpd_params(&points, 1.0, 4).unwrap();
        assert!((eps - 2.0).abs() < 1e-12);

        // All-identical points degenerate to eps = 0.
        let err = mpd_params(&one_d(&[5.0, 5.0, 5.0]), 0.1, 4).unwrap_err();
        assert!(matches!(err, TuningError::DegenerateEps));
    }

    #[test]
    fn knee_of_a_flat_curve_with_jump() {
        let curve = KDistanceCurve {
            k: 4,
            distances: vec![1.0, 1.0, 1.0, 1.0, 10.0],
        };
        let (low, high) = suggest_eps_range(&curve).unwrap();
        assert_eq!((low, high), (0.5, 1.5));
    }

    #[test]
    fn linear_curve_centers_on_the_midpoint() {
        let curve = KDistanceCurve {
            k: 1,
            distances: vec![1.0, 2.0, 3.0],
        };
        let (low, high) = suggest_eps_range(&curve).unwrap();
        assert_eq!((low, high), (1.0, 3.0));
        assert_eq!((low + high) / 2.0, 2.0);
    }

    #[test]
    fn short_curve_is_rejected() {
        let curve = KDistanceCurve {
            k: 1,
            distances: vec![1.0, 2.0],
        };
        assert!(matches!(
            suggest_eps_range(&curve).unwrap_err(),
            TuningError::CurveTooShort(2)
        ));
    }

    #[test]
    fn report_exports_csv_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let points = two_blob_points();
        let report = grid_search(&points, &dbscan_spec(vec![0.1, 1.5], 1)).unwrap();
        let csv_path = dir.path().join("report.csv");
        let json_path = dir.path().join("report.json");
        report.write_csv(&csv_path).unwrap();
        report.write_json(&json_path).unwrap();
        let csv = std::fs::read_to_string(csv_path).unwrap();
        assert!(csv.lines().count() == 3);
        assert!(csv.contains("-inf"));
        let parsed: TuningReport =
            serde_json::from_str(&std::fs::read_to_string(json_path).unwrap()).unwrap();
        assert!(parsed.semantic_eq(&report));
    }
}
