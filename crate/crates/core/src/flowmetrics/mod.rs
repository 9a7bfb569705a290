//! Flow management and segmentation.
//!
//! Packets are grouped by their canonical 5-tuple into flow collections.
//! Within a collection only the most recent flow may be live; a FIN or RST
//! terminates it and the next packet for the key opens a fresh flow. The
//! segmenter then cuts flows into time slots (slotted mode) or trailing
//! windows (windowed mode) and hands each completed segment to the feature
//! computation in [`features`].

mod features;
mod io;

pub use features::{
    compute_features, feature_names, features_of_segment, FeatureError, FeatureVector,
    DIRECTION_DIM, FEATURE_DIM, STAT_NAMES,
};
pub use io::{canonical_rows, read_feature_csv, write_feature_csv, CsvError, FeatureFile, META_NAMES};

use std::collections::HashMap;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::capture::{PacketRecord, TcpFlags};

/// One side of a conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Endpoint {
    pub ip: Ipv4Addr,
    pub port: u16,
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

/// Canonical unordered endpoint pair plus protocol. Both directions of a
/// conversation map to the same key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlowKey {
    /// Lower endpoint by `(ip, port)` order.
    pub a: Endpoint,
    /// Higher endpoint.
    pub b: Endpoint,
    pub protocol: u8,
}

impl FlowKey {
    pub fn of(pkt: &PacketRecord) -> FlowKey {
        let src = Endpoint {
            ip: pkt.src_ip,
            port: pkt.src_port,
        };
        let dst = Endpoint {
            ip: pkt.dst_ip,
            port: pkt.dst_port,
        };
        let (a, b) = if src <= dst { (src, dst) } else { (dst, src) };
        FlowKey {
            a,
            b,
            protocol: pkt.protocol,
        }
    }
}

/// Packet direction relative to the flow's sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// A packet stored inside a flow, tagged with its direction.
#[derive(Debug, Clone, Copy)]
pub struct TaggedPacket {
    pub record: PacketRecord,
    pub direction: Direction,
}

/// Ordered packets for one key within one session lifetime.
#[derive(Debug, Clone)]
pub struct Flow {
    pub key: FlowKey,
    /// Source of the flow's first packet; forward means "from sender".
    pub sender: Endpoint,
    pub packets: Vec<TaggedPacket>,
    pub terminated: bool,
    pub first_ts: i64,
    pub last_ts: i64,
    /// Creation sequence number, used only for deterministic ordering.
    seq: u64,
    /// Slotted mode: start of the currently open slot. Emitted slots
    /// release their packets, so `packets` holds only the open slot.
    slot_start_us: i64,
    /// Windowed mode: packets ingested since the last emission.
    pending: usize,
}

impl Flow {
    fn new(pkt: &PacketRecord, seq: u64) -> Flow {
        let sender = Endpoint {
            ip: pkt.src_ip,
            port: pkt.src_port,
        };
        Flow {
            key: FlowKey::of(pkt),
            sender,
            packets: Vec::new(),
            terminated: false,
            first_ts: pkt.ts_us,
            last_ts: pkt.ts_us,
            seq,
            slot_start_us: pkt.ts_us,
            pending: 0,
        }
    }

    fn direction_of(&self, pkt: &PacketRecord) -> Direction {
        let src = Endpoint {
            ip: pkt.src_ip,
            port: pkt.src_port,
        };
        if src == self.sender {
            Direction::Forward
        } else {
            Direction::Backward
        }
    }

    fn push(&mut self, pkt: PacketRecord) {
        let direction = self.direction_of(&pkt);
        self.last_ts = pkt.ts_us;
        self.packets.push(TaggedPacket {
            record: pkt,
            direction,
        });
        self.pending += 1;
    }

    /// Trailing window of packets with `0 <= p.ts - x.ts <= t`, relative
    /// to reference packet `p`.
    pub fn window(&self, p: &PacketRecord, t_seconds: f64) -> Vec<TaggedPacket> {
        let span_us = (t_seconds * 1e6).round() as i64;
        self.packets
            .iter()
            .filter(|tp| {
                let delta = p.ts_us - tp.record.ts_us;
                (0..=span_us).contains(&delta)
            })
            .copied()
            .collect()
    }
}

/// All flows sharing one key; only the most recent may be live.
#[derive(Debug, Clone)]
pub struct FlowCollection {
    pub key: FlowKey,
    live: Option<Flow>,
    /// Flows completed under this key, kept as a counter; packet data is
    /// released once segments are emitted.
    pub completed: u64,
}

/// Segmentation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentMode {
    Slotted,
    Windowed,
}

impl std::str::FromStr for SegmentMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slotted" => Ok(SegmentMode::Slotted),
            "windowed" => Ok(SegmentMode::Windowed),
            other => Err(format!("unknown mode '{other}' (slotted|windowed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmenterConfig {
    pub mode: SegmentMode,
    /// Slot length / window length, seconds.
    pub timespan_s: f64,
    /// Flows idle longer than this are closed lazily.
    pub idle_timeout_s: f64,
    /// Windowed mode: emit a vector every this many packets per flow.
    pub windowed_stride: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("timespan must be positive, got {0}")]
    NonPositiveTimespan(f64),
    #[error("idle timeout {0} must be >= timespan {1}")]
    IdleBelowTimespan(f64, f64),
    #[error("windowed stride must be >= 1")]
    ZeroStride,
}

impl SegmenterConfig {
    pub fn new(mode: SegmentMode, timespan_s: f64) -> Result<SegmenterConfig, ConfigError> {
        SegmenterConfig::with_options(mode, timespan_s, 120.0_f64.max(timespan_s), 1)
    }

    pub fn with_options(
        mode: SegmentMode,
        timespan_s: f64,
        idle_timeout_s: f64,
        windowed_stride: usize,
    ) -> Result<SegmenterConfig, ConfigError> {
        if !timespan_s.is_finite() || timespan_s <= 0.0 {
            return Err(ConfigError::NonPositiveTimespan(timespan_s));
        }
        if idle_timeout_s < timespan_s {
            return Err(ConfigError::IdleBelowTimespan(idle_timeout_s, timespan_s));
        }
        if windowed_stride == 0 {
            return Err(ConfigError::ZeroStride);
        }
        Ok(SegmenterConfig {
            mode,
            timespan_s,
            idle_timeout_s,
            windowed_stride,
        })
    }

    fn timespan_us(&self) -> i64 {
        (self.timespan_s * 1e6).round() as i64
    }

    fn idle_us(&self) -> i64 {
        (self.idle_timeout_s * 1e6).round() as i64
    }
}

/// Identity of a segment: the flow's directional endpoints and time range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentMeta {
    /// The flow's sender.
    pub src: Endpoint,
    pub dst: Endpoint,
    pub protocol: u8,
    pub start_us: i64,
    pub end_us: i64,
    pub n_packets: usize,
}

/// A completed slot or window, ready for feature computation.
#[derive(Debug, Clone)]
pub struct FlowSegment {
    pub meta: SegmentMeta,
    pub packets: Vec<TaggedPacket>,
}

impl FlowSegment {
    fn from_packets(flow: &Flow, packets: Vec<TaggedPacket>) -> FlowSegment {
        debug_assert!(!packets.is_empty());
        let start_us = packets.first().map(|p| p.record.ts_us).unwrap_or(0);
        let end_us = packets.iter().map(|p| p.record.ts_us).max().unwrap_or(0);
        let dst = if flow.sender == flow.key.a {
            flow.key.b
        } else {
            flow.key.a
        };
        FlowSegment {
            meta: SegmentMeta {
                src: flow.sender,
                dst,
                protocol: flow.key.protocol,
                start_us,
                end_us,
                n_packets: packets.len(),
            },
            packets,
        }
    }
}

/// Live state of the segmenter: one collection per key.
pub struct FlowTable {
    cfg: SegmenterConfig,
    collections: HashMap<FlowKey, FlowCollection>,
    next_seq: u64,
}

impl FlowTable {
    pub fn new(cfg: SegmenterConfig) -> FlowTable {
        FlowTable {
            cfg,
            collections: HashMap::new(),
            next_seq: 0,
        }
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.cfg
    }

    /// Number of keys currently tracked.
    pub fn len(&self) -> usize {
        self.collections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.collections.is_empty()
    }

    /// Feed one packet. Returns segments completed by this packet (idle
    /// closures first, then any segment the packet itself closed), in
    /// deterministic `(start_us, flow seq)` order.
    pub fn ingest(&mut self, pkt: PacketRecord) -> Vec<FlowSegment> {
        let mut out = self.close_idle(pkt.ts_us);
        let key = FlowKey::of(&pkt);
        let seq = self.next_seq;
        let collection = self.collections.entry(key).or_insert(FlowCollection {
            key,
            live: None,
            completed: 0,
        });

        let needs_new = match &collection.live {
            Some(flow) => flow.terminated,
            None => true,
        };
        if needs_new {
            if collection.live.take().is_some() {
                collection.completed += 1;
            }
            collection.live = Some(Flow::new(&pkt, seq));
            self.next_seq += 1;
        }
        let flow = collection.live.as_mut().expect("live flow just ensured");

        match self.cfg.mode {
            SegmentMode::Slotted => {
                // Overflowing the slot closes it before the packet lands.
                if pkt.ts_us - flow.slot_start_us > self.cfg.timespan_us()
                    && !flow.packets.is_empty()
                {
                    let packets = std::mem::take(&mut flow.packets);
                    out.push(FlowSegment::from_packets(flow, packets));
                    flow.slot_start_us = pkt.ts_us;
                }
                let terminates =
                    pkt.flags.contains(TcpFlags::FIN) || pkt.flags.contains(TcpFlags::RST);
                flow.push(pkt);
                if terminates {
                    let packets = std::mem::take(&mut flow.packets);
                    out.push(FlowSegment::from_packets(flow, packets));
                    flow.terminated = true;
                }
            }
            SegmentMode::Windowed => {
                let terminates =
                    pkt.flags.contains(TcpFlags::FIN) || pkt.flags.contains(TcpFlags::RST);
                flow.push(pkt);
                let due = flow.pending >= self.cfg.windowed_stride;
                if due || terminates {
                    let window = flow.window(&pkt, self.cfg.timespan_s);
                    out.push(FlowSegment::from_packets(flow, window));
                    flow.pending = 0;
                }
                if terminates {
                    flow.terminated = true;
                }
                // Packets older than the window span can never be part of
                // a future window; drop them to bound memory.
                let span_us = self.cfg.timespan_us();
                let newest = flow.last_ts;
                let keep_from = flow
                    .packets
                    .iter()
                    .position(|tp| newest - tp.record.ts_us <= span_us)
                    .unwrap_or(flow.packets.len());
                if keep_from > 0 {
                    flow.packets.drain(..keep_from);
                }
            }
        }
        out.sort_by_key(|s| (s.meta.start_us, s.meta.src.ip, s.meta.src.port));
        out
    }

    /// Close flows idle longer than the configured timeout as of `now_us`.
    fn close_idle(&mut self, now_us: i64) -> Vec<FlowSegment> {
        let idle_us = self.cfg.idle_us();
        let mut closed: Vec<(u64, FlowSegment)> = Vec::new();
        for collection in self.collections.values_mut() {
            let expired = match &collection.live {
                Some(flow) => !flow.terminated && now_us - flow.last_ts > idle_us,
                None => false,
            };
            if expired {
                let mut flow = collection.live.take().expect("checked above");
                flow.terminated = true;
                if let Some(segment) = open_segment(&flow, self.cfg.mode) {
                    closed.push((flow.seq, segment));
                }
                collection.completed += 1;
            }
        }
        closed.sort_by_key(|(seq, s)| (s.meta.start_us, *seq));
        closed.into_iter().map(|(_, s)| s).collect()
    }

    /// End of input: emit every open segment with at least one packet,
    /// ordered by segment start time, and clear the table.
    pub fn flush(&mut self) -> Vec<FlowSegment> {
        let mut out: Vec<(u64, FlowSegment)> = Vec::new();
        for collection in self.collections.values_mut() {
            if let Some(flow) = collection.live.take() {
                if let Some(segment) = open_segment(&flow, self.cfg.mode) {
                    out.push((flow.seq, segment));
                }
            }
        }
        self.collections.clear();
        out.sort_by_key(|(seq, s)| (s.meta.start_us, *seq));
        out.into_iter().map(|(_, s)| s).collect()
    }
}

/// The still-open tail of a flow, if it holds any packets.
fn open_segment(flow: &Flow, mode: SegmentMode) -> Option<FlowSegment> {
    match mode {
        SegmentMode::Slotted => {
            if !flow.packets.is_empty() {
                Some(FlowSegment::from_packets(flow, flow.packets.clone()))
            } else {
                None
            }
        }
        SegmentMode::Windowed => {
            if flow.pending > 0 {
                let last = flow.packets.last()?.record;
                let window = flow.window(&last, f64::INFINITY);
                Some(FlowSegment::from_packets(flow, window))
            } else {
                None
            }
        }
    }
}

/// Run a full packet stream through a fresh table: ingest everything,
/// then flush.
pub fn segment_stream(
    packets: impl IntoIterator<Item = PacketRecord>,
    cfg: SegmenterConfig,
) -> Vec<FlowSegment> {
    let mut table = FlowTable::new(cfg);
    let mut segments = Vec::new();
    for pkt in packets {
        segments.extend(table.ingest(pkt));
    }
    segments.extend(table.flush());
    segments
}
