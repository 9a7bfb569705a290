//! # flowguard
//!
//! Flow-based anomaly detection for SCADA-style TCP traffic that works on
//! encrypted links, because it never looks at payload bytes.
//!
//! The pipeline:
//!
//! 1. [`capture`] reads classic pcap files and decodes Ethernet/IPv4/TCP
//!    headers into [`capture::PacketRecord`]s.
//! 2. [`flowmetrics`] groups packets into bidirectional flows, cuts them
//!    into slots or sliding windows, and computes a 34-dimensional
//!    statistic vector per segment.
//! 3. [`preprocess`] robust-scales feature matrices by median and IQR.
//! 4. [`clustering`] clusters scaled benign traffic with DBSCAN or HDBSCAN
//!    and scores clusterings (silhouette, DBCV, k-distance curves).
//! 5. [`detector`] builds the semi-supervised model: per-cluster maximum
//!    pairwise distance thresholds plus nearest-neighbor classification.
//! 6. [`tuning`] picks hyperparameters by grid search or the mean-pairwise
//!    distance heuristic.
//! 7. [`evaluation`] labels segments from rule files and computes
//!    precision/recall/F1, overall and per anomaly scenario.
//! 8. [`synthgen`] deterministically generates labeled benign and attack
//!    captures (IEC-104-shaped polling plus scan/exfiltration/manipulation
//!    overlays, with optional TLS-style framing overhead).
//!
//! All stages are deterministic: identical inputs produce byte-identical
//! output files.

pub mod capture;
pub mod clustering;
pub mod detector;
pub mod evaluation;
pub mod flowmetrics;
pub mod preprocess;
pub mod spatial;
pub mod synthgen;
pub mod tuning;

pub use capture::{IngestStats, PacketRecord, PcapReader, TcpFlags};
pub use detector::{DetectionModel, DetectionResult, Verdict};
pub use flowmetrics::{FeatureVector, FlowKey, FlowTable, SegmenterConfig, FEATURE_DIM};
pub use preprocess::ScalerParams;
