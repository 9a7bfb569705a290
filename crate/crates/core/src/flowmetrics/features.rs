//! The 34-dimensional per-segment statistic vector.
//!
//! Seventeen statistics per direction, forward first: inter-packet time,
//! packet size, TTL and window size each as mean/max/min, then the five
//! flag percentages. Payload bytes never enter the computation.

use thiserror::Error;

use crate::capture::TcpFlags;

use super::{Direction, SegmentMeta, TaggedPacket};

/// Statistics per direction.
pub const DIRECTION_DIM: usize = 17;
/// Total vector width: forward block then backward block.
pub const FEATURE_DIM: usize = 2 * DIRECTION_DIM;

/// Canonical column names without the `fwd_`/`bwd_` prefix.
pub const STAT_NAMES: [&str; DIRECTION_DIM] = [
    "ipt_mean", "ipt_max", "ipt_min", "size_mean", "size_max", "size_min", "ttl_mean", "ttl_max",
    "ttl_min", "win_mean", "win_max", "win_min", "syn_pct", "ack_pct", "psh_pct", "rst_pct",
    "fin_pct",
];

/// The 34 canonical column names, `fwd_*` then `bwd_*`.
pub fn feature_names() -> [String; FEATURE_DIM] {
    std::array::from_fn(|i| {
        if i < DIRECTION_DIM {
            format!("fwd_{}", STAT_NAMES[i])
        } else {
            format!("bwd_{}", STAT_NAMES[i - DIRECTION_DIM])
        }
    })
}

/// One segment's statistics plus its identifying metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_DIM],
    pub meta: SegmentMeta,
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("cannot compute features over an empty segment")]
    EmptySegment,
}

/// Compute the canonical statistics over a direction-tagged packet list.
pub fn compute_features(
    packets: &[TaggedPacket],
    meta: SegmentMeta,
) -> Result<FeatureVector, FeatureError> {
    if packets.is_empty() {
        return Err(FeatureError::EmptySegment);
    }
    let mut values = [0.0; FEATURE_DIM];
    let fwd = direction_stats(packets, Direction::Forward);
    let bwd = direction_stats(packets, Direction::Backward);
    values[..DIRECTION_DIM].copy_from_slice(&fwd);
    values[DIRECTION_DIM..].copy_from_slice(&bwd);
    Ok(FeatureVector { values, meta })
}

/// Convenience: features of a completed [`super::FlowSegment`].
pub fn features_of_segment(
    segment: &super::FlowSegment,
) -> Result<FeatureVector, FeatureError> {
    compute_features(&segment.packets, segment.meta)
}

fn direction_stats(packets: &[TaggedPacket], direction: Direction) -> [f64; DIRECTION_DIM] {
    let mut out = [0.0; DIRECTION_DIM];
    let dir: Vec<&TaggedPacket> = packets.iter().filter(|p| p.direction == direction).collect();
    if dir.is_empty() {
        return out;
    }
    // Inter-packet times, seconds, between consecutive packets of this
    // direction; fewer than two packets leaves all three at zero.
    if dir.len() >= 2 {
        let gaps: Vec<f64> = dir
            .windows(2)
            .map(|w| (w[1].record.ts_us - w[0].record.ts_us) as f64 / 1e6)
            .collect();
        let (mean, max, min) = mean_max_min(&gaps);
        out[0] = mean;
        out[1] = max;
        out[2] = min;
    }
    let sizes: Vec<f64> = dir.iter().map(|p| p.record.total_len as f64).collect();
    let (mean, max, min) = mean_max_min(&sizes);
    out[3] = mean;
    out[4] = max;
    out[5] = min;
    let ttls: Vec<f64> = dir.iter().map(|p| p.record.ttl as f64).collect();
    let (mean, max, min) = mean_max_min(&ttls);
    out[6] = mean;
    out[7] = max;
    out[8] = min;
    let wins: Vec<f64> = dir.iter().map(|p| p.record.window as f64).collect();
    let (mean, max, min) = mean_max_min(&wins);
    out[9] = mean;
    out[10] = max;
    out[11] = min;

    let n = dir.len() as f64;
    let pct = |flag: TcpFlags| dir.iter().filter(|p| p.record.flags.contains(flag)).count() as f64 / n;
    out[12] = pct(TcpFlags::SYN);
    out[13] = pct(TcpFlags::ACK);
    out[14] = pct(TcpFlags::PSH);
    out[15] = pct(TcpFlags::RST);
    out[16] = pct(TcpFlags::FIN);
    out
}

fn mean_max_min(values: &[f64]) -> (f64, f64, f64) {
    let mut sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for &v in values {
        sum += v;
        max = max.max(v);
        min = min.min(v);
    }
    (sum / values.len() as f64, max, min)
}
