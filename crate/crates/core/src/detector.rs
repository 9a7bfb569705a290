//! The semi-supervised detection model: per-cluster maximum pairwise
//! distance thresholds and nearest-neighbor classification.
//!
//! Training keeps only cluster-labeled points (noise is dropped — noise
//! has no threshold, so keeping it would whitelist near-noise traffic on
//! exact matches only). A query is benign iff its distance to the nearest
//! retained training point is at most the mpdi of that point's cluster;
//! the boundary case `d == mpdi` is benign.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clustering::ClusterAssignment;
use crate::preprocess::ScalerParams;
use crate::spatial::{euclidean, KdTree};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("all training points are noise; no benign cluster survives")]
    AllNoise,
    #[error("assignment covers {labels} points but {points} were given")]
    AssignmentMismatch { labels: usize, points: usize },
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimension mismatch at row {row}: expected {expected}, got {got}")]
    BatchDimensionMismatch {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in query vector")]
    NonFiniteQuery,
    #[error("unsupported model format version {found}, expected {expected}")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Benign,
    Anomaly,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Benign => f.write_str("benign"),
            Verdict::Anomaly => f.write_str("anomaly"),
        }
    }
}

impl std::str::FromStr for Verdict {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "benign" => Ok(Verdict::Benign),
            "anomaly" => Ok(Verdict::Anomaly),
            other => Err(format!("unknown verdict '{other}'")),
        }
    }
}

/// Outcome of classifying one feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub verdict: Verdict,
    /// Distance to the nearest retained training point, scaled space.
    pub distance: f64,
    /// Cluster of that nearest neighbor.
    pub nearest_cluster: usize,
    /// mpdi of that cluster.
    pub threshold: f64,
}

/// Optional provenance carried inside the model file. Deliberately free
/// of wall-clock defaults so saving the same model twice is byte-equal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub algo: String,
    pub params: BTreeMap<String, f64>,
    pub timespan_s: Option<f64>,
    pub created: String,
}

/// Immutable trained model; classification is lock-free and thread-safe.
#[derive(Debug)]
pub struct DetectionModel {
    train_points: Vec<Vec<f64>>,
    train_labels: Vec<usize>,
    mpdi: Vec<f64>,
    scaler: ScalerParams,
    index: KdTree,
    pub meta: ModelMeta,
}

impl DetectionModel {
    /// Build from scaled training points and their cluster assignment.
    /// Noise-labeled points are excluded from the model.
    pub fn build(
        scaled_points: &[Vec<f64>],
        assignment: &ClusterAssignment,
        scaler: ScalerParams,
        meta: ModelMeta,
    ) -> Result<DetectionModel, DetectorError> {
        if assignment.labels.len() != scaled_points.len() {
            return Err(DetectorError::AssignmentMismatch {
                labels: assignment.labels.len(),
                points: scaled_points.len(),
            });
        }
        let mut train_points = Vec::new();
        let mut train_labels = Vec::new();
        for (point, &label) in scaled_points.iter().zip(assignment.labels.iter()) {
            if label >= 0 {
                train_points.push(point.clone());
                train_labels.push(label as usize);
            }
        }
        if train_points.is_empty() {
            return Err(DetectorError::AllNoise);
        }
        let n_clusters = assignment.n_clusters;
        let mpdi = compute_mpdi(&train_points, &train_labels, n_clusters)?;
        let index = KdTree::build(&train_points);
        Ok(DetectionModel {
            train_points,
            train_labels,
            mpdi,
            scaler,
            index,
            meta,
        })
    }

    pub fn scaler(&self) -> &ScalerParams {
        &self.scaler
    }

    pub fn mpdi(&self) -> &[f64] {
        &self.mpdi
    }

    pub fn train_len(&self) -> usize {
        self.train_points.len()
    }

    pub fn dims(&self) -> usize {
        self.scaler.dims()
    }

    /// Classify a raw (unscaled) feature vector.
    pub fn classify(&self, raw: &[f64]) -> Result<DetectionResult, DetectorError> {
        if raw.len() != self.dims() {
            return Err(DetectorError::DimensionMismatch {
                expected: self.dims(),
                got: raw.len(),
            });
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(DetectorError::NonFiniteQuery);
        }
        let scaled = self
            .scaler
            .transform(raw)
            .expect("dimensions checked above");
        let (nearest, distance) = self
            .index
            .nearest(&scaled)
            .expect("model holds at least one point");
        let nearest_cluster = self.train_labels[nearest];
        let threshold = self.mpdi[nearest_cluster];
        let verdict = if distance <= threshold {
            Verdict::Benign
        } else {
            Verdict::Anomaly
        };
        Ok(DetectionResult {
            verdict,
            distance,
            nearest_cluster,
            threshold,
        })
    }

    /// Classify many rows; output order equals input order. The first
    /// dimension mismatch aborts with its row index.
    pub fn classify_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<DetectionResult>, DetectorError> {
        rows.iter()
            .enumerate()
            .map(|(row, raw)| {
                self.classify(raw).map_err(|e| match e {
                    DetectorError::DimensionMismatch { expected, got } => {
                        DetectorError::BatchDimensionMismatch { row, expected, got }
                    }
                    other => other,
                })
            })
            .collect()
    }

    /// Write the model as versioned, checksummed JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DetectorError> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            meta: self.meta.clone(),
            scaler: self.scaler.clone(),
            points: self.train_points.clone(),
            labels: self.train_labels.clone(),
            mpdi: self
                .mpdi
                .iter()
                .enumerate()
                .map(|(c, t)| (c.to_string(), *t))
                .collect(),
        };
        let mut value = serde_json::to_value(&file).expect("model serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let checksum = format!("sha256:{}", hex_string(&digest));
        value
            .as_object_mut()
            .expect("top level object")
            .insert("checksum".into(), serde_json::Value::String(checksum));
        let body = serde_json::to_string(&value).expect("value serializes");
        fs::write(path.as_ref(), body)?;
        Ok(())
    }

    /// Load a model saved by [`DetectionModel::save`], verifying version
    /// and checksum, and rebuild the spatial index.
    pub fn load(path: impl AsRef<Path>) -> Result<DetectionModel, DetectorError> {
        let body = fs::read_to_string(path.as_ref())?;
        let mut value: serde_json::Value = serde_json::from_str(&body)
            .map_err(|e| DetectorError::CorruptFile(format!("invalid JSON: {e}")))?;
        let object = value
            .as_object_mut()
            .ok_or_else(|| DetectorError::CorruptFile("top level is not an object".into()))?;
        let checksum = object
            .remove("checksum")
            .and_then(|v| v.as_str().map(String::from))
            .ok_or_else(|| DetectorError::CorruptFile("missing checksum".into()))?;
        if let Some(version) = object.get("format_version").and_then(|v| v.as_u64()) {
            if version != MODEL_FORMAT_VERSION as u64 {
                return Err(DetectorError::VersionMismatch {
                    found: version,
                    expected: MODEL_FORMAT_VERSION,
                });
            }
        } else {
            return Err(DetectorError::CorruptFile("missing format_version".into()));
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let expected = format!("sha256:{}", hex_string(&digest));
        if checksum != expected {
            return Err(DetectorError::CorruptFile(
                "checksum mismatch; file was modified or truncated".into(),
            ));
        }
        let file: ModelFile = serde_json::from_value(value)
            .map_err(|e| DetectorError::CorruptFile(format!("bad model structure: {e}")))?;
        DetectionModel::from_file(file)
    }

    fn from_file(file: ModelFile) -> Result<DetectionModel, DetectorError> {
        let n_clusters = file
            .labels
            .iter()
            .map(|&l| l + 1)
            .max()
            .ok_or(DetectorError::AllNoise)?;
        if file.points.len() != file.labels.len() {
            return Err(DetectorError::CorruptFile(format!(
                "{} points but {} labels",
                file.points.len(),
                file.labels.len()
            )));
        }
        let dims = file.scaler.dims();
        if file.points.iter().any(|p| p.len() != dims) {
            return Err(DetectorError::CorruptFile(
                "point width differs from scaler width".into(),
            ));
        }
        let mut mpdi = vec![f64::NAN; n_clusters];
        for (key, threshold) in &file.mpdi {
            let cluster: usize = key.parse().map_err(|_| {
                DetectorError::CorruptFile(format!("bad cluster key '{key}' in mpdi"))
            })?;
            if cluster >= n_clusters {
                return Err(DetectorError::CorruptFile(format!(
                    "mpdi key {cluster} out of range"
                )));
            }
            mpdi[cluster] = *threshold;
        }
        if mpdi.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(DetectorError::CorruptFile(
                "mpdi must cover every cluster with a finite non-negative threshold".into(),
            ));
        }
        let index = KdTree::build(&file.points);
        Ok(DetectionModel {
            train_points: file.points,
            train_labels: file.labels,
            mpdi,
            scaler: file.scaler,
            index,
            meta: file.meta,
        })
    }
}

/// Exact per-cluster maximum pairwise distance; singleton clusters get 0.
fn compute_mpdi(
    points: &[Vec<f64>],
    labels: &[usize],
    n_clusters: usize,
) -> Result<Vec<f64>, DetectorError> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (i, &label) in labels.iter().enumerate() {
        members[label].push(i);
    }
    let mut mpdi = Vec::with_capacity(n_clusters);
    for (cluster, ids) in members.iter().enumerate() {
        if ids.is_empty() {
            return Err(DetectorError::EmptyCluster(cluster));
        }
        let mut max = 0.0f64;
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                max = max.max(euclidean(&points[a], &points[b]));
            }
        }
        mpdi.push(max);
    }
    Ok(mpdi)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    meta: ModelMeta,
    scaler: ScalerParams,
    points: Vec<Vec<f64>>,
    labels: Vec<usize>,
    mpdi: BTreeMap<String, f64>,
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_model(points: Vec<Vec<f64>>, labels: Vec<i32>) -> DetectionModel {
        let dims = points[0].len();
        let assignment = ClusterAssignment::from_labels(labels);
        DetectionModel::build(
            &points,
            &assignment,
            ScalerParams::identity(dims),
            ModelMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn mpdi_of_a_two_point_cluster() {
        let model = identity_model(vec![vec![0.0, 0.0], vec![0.0, 2.0]], vec![0, 0]);
        assert_eq!(model.mpdi(), &[2.0]);
    }

    #[test]
    fn singleton_cluster_threshold_is_zero() {
        let model = identity_model(vec![vec![1.0, 1.0]], vec![0]);
        assert_eq!(model.mpdi(), &[0.0]);
    }

    #[test]
    fn mpdi_per_cluster_matches_brute_force() {
        let points = vec![
            vec![0.0, 0.0],
            vec![3.0, 0.0],
            vec![0.0, 4.0],
            vec![100.0, 0.0],
            vec![100.0, 7.0],
        ];
        let model = identity_model(points, vec![0, 0, 0, 1, 1]);
        assert_eq!(model.mpdi(), &[5.0, 7.0]);
    }

    #[test]
    fn classification_examples() {
        let model = identity_model(vec![vec![0.0, 0.0], vec![0.0, 2.0]], vec![0, 0]);
        let inside = model.classify(&[0.0, 1.0]).unwrap();
        assert_eq!(inside.verdict, Verdict::Benign);
        assert_eq!(inside.distance, 1.0);

        let exact = model.classify(&[0.0, 0.0]).unwrap();
        assert_eq!(exact.verdict, Verdict::Benign);
        assert_eq!(exact.distance, 0.0);

        let outside = model.classify(&[0.0, 5.0]).unwrap();
        assert_eq!(outside.verdict, Verdict::Anomaly);
        assert_eq!(outside.distance, 3.0);
        assert_eq!(outside.threshold, 2.0);
    }

    #[test]
    fn boundary_distance_is_benign() {
        let model = identity_model(vec![vec![0.0, 0.0], vec![0.0, 2.0]], vec![0, 0]);
        // Distance to nearest (0,0) is exactly the mpdi of 2.
        let result = model.classify(&[2.0, 0.0]).unwrap();
        assert_eq!(result.distance, result.threshold);
        assert_eq!(result.verdict, Verdict::Benign);
    }

    #[test]
    fn noise_points_are_dropped() {
        let model = identity_model(
            vec![vec![0.0], vec![1.0], vec![500.0]],
            vec![0, 0, crate::clustering::NOISE],
        );
        assert_eq!(model.train_len(), 2);
        // The dropped noise point is not an anchor: a query there is
        // anomalous despite matching it exactly.
        assert_eq!(
            model.classify(&[500.0]).unwrap().verdict,
            Verdict::Anomaly
        );
    }

    #[test]
    fn all_noise_is_unbuildable() {
        let assignment = ClusterAssignment::from_labels(vec![-1, -1]);
        let err = DetectionModel::build(
            &[vec![0.0], vec![1.0]],
            &assignment,
            ScalerParams::identity(1),
            ModelMeta::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DetectorError::AllNoise));
    }

    #[test]
    fn every_training_point_classifies_benign() {
        let points: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i % 7) as f64, (i % 5) as f64])
            .collect();
        let labels: Vec<i32> = (0..30).map(|i| i % 3).collect();
        let model = identity_model(points.clone(), labels);
        for p in &points {
            assert_eq!(model.classify(p).unwrap().verdict, Verdict::Benign);
        }
    }

    #[test]
    fn batch_keeps_order_and_reports_bad_row() {
        let model = identity_model(vec![vec![0.0], vec![2.0]], vec![0, 0]);
        let rows = vec![vec![0.5], vec![100.0], vec![1.0]];
        let results = model.classify_batch(&rows).unwrap();
        assert_eq!(results.len(), 3);
        assert_eq!(results[0].verdict, Verdict::Benign);
        assert_eq!(results[1].verdict, Verdict::Anomaly);

        let bad = vec![vec![0.5], vec![1.0, 2.0]];
        match model.classify_batch(&bad).unwrap_err() {
            DetectorError::BatchDimensionMismatch { row: 1, .. } => {}
            other => panic!("unexpected: {other}"),
        }
        assert!(model.classify_batch(&[]).unwrap().is_empty());
    }

    #[test]
    fn concurrent_classification_is_safe() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<DetectionModel>();

        let model = identity_model(
            (0..50).map(|i| vec![i as f64, (i * 3 % 7) as f64]).collect(),
            (0..50).map(|i| (i % 2) as i32).collect(),
        );
        let expected: Vec<_> = (0..200)
            .map(|i| model.classify(&[i as f64 * 0.33, 2.0]).unwrap())
            .collect();
        std::thread::scope(|scope| {
            for _ in 0..4 {
                scope.spawn(|| {
                    for (i, want) in expected.iter().enumerate() {
                        let got = model.classify(&[i as f64 * 0.33, 2.0]).unwrap();
                        assert_eq!(&got, want);
                    }
                });
            }
        });
    }

    #[test]
    fn save_load_round_trip_classifies_identically() {
        use crate::synthgen::SplitMix64;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let points: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 * 0.77).sin() * 3.0, (i as f64 * 0.41).cos() * 3.0])
            .collect();
        let labels: Vec<i32> = (0..40).map(|i| i % 2).collect();
        let model = identity_model(points, labels);
        model.save(&path).unwrap();
        let loaded = DetectionModel::load(&path).unwrap();

        let mut rng = SplitMix64::new(99);
        for _ in 0..100 {
            let q = vec![rng.next_f64() * 8.0 - 4.0, rng.next_f64() * 8.0 - 4.0];
            assert_eq!(model.classify(&q).unwrap(), loaded.classify(&q).unwrap());
        }
    }

    #[test]
    fn version_bump_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = identity_model(vec![vec![0.0], vec![1.0]], vec![0, 0]);
        model.save(&path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        let bumped = body.replace("\"format_version\":1", "\"format_version\":2");
        std::fs::write(&path, bumped).unwrap();
        assert!(matches!(
            DetectionModel::load(&path).unwrap_err(),
            DetectorError::VersionMismatch { found: 2, .. }
        ));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = identity_model(vec![vec![0.0], vec![1.0]], vec![0, 0]);
        model.save(&path).unwrap();
        let body = std::fs::read(&path).unwrap();
        std::fs::write(&path, &body[..body.len() - 25]).unwrap();
        assert!(matches!(
            DetectionModel::load(&path).unwrap_err(),
            DetectorError::CorruptFile(_)
        ));
    }

    #[test]
    fn tampered_payload_fails_the_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = identity_model(vec![vec![0.0], vec![2.0]], vec![0, 0]);
        model.save(&path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        let tampered = body.replace("\"0\":2.0", "\"0\":99.0");
        assert_ne!(body, tampered);
        std::fs::write(&path, tampered).unwrap();
        match DetectionModel::load(&path).unwrap_err() {
            DetectorError::CorruptFile(msg) => assert!(msg.contains("checksum")),
            other => panic!("unexpected: {other}"),
        }
    }
}
