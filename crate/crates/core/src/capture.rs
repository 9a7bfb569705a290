//! Classic pcap reading and Ethernet/IPv4/TCP header decoding.
//!
//! Only TCP-over-IPv4 frames become [`PacketRecord`]s; everything else is
//! skipped and counted in [`IngestStats`]. Payload bytes are never
//! inspected, only measured.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read};
use std::net::Ipv4Addr;
use std::path::Path;

use thiserror::Error;

/// Microsecond-resolution pcap magic, file-native byte order.
const MAGIC_USEC: u32 = 0xa1b2_c3d4;
/// Nanosecond-resolution pcap magic.
const MAGIC_NSEC: u32 = 0xa1b2_3c4d;
/// pcapng section header block type, used only to give a better error.
const PCAPNG_MAGIC: u32 = 0x0a0d_0d0a;

const LINKTYPE_ETHERNET: u32 = 1;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88a8;

/// TCP flag bits as they appear in the header flags octet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const PSH: TcpFlags = TcpFlags(0x08);
    pub const ACK: TcpFlags = TcpFlags(0x10);
    pub const URG: TcpFlags = TcpFlags(0x20);

    pub const fn empty() -> TcpFlags {
        TcpFlags(0)
    }

    pub const fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub const fn union(self, other: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | other.0)
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;
    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        self.union(rhs)
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = [
            (TcpFlags::SYN, "SYN"),
            (TcpFlags::ACK, "ACK"),
            (TcpFlags::PSH, "PSH"),
            (TcpFlags::RST, "RST"),
            (TcpFlags::FIN, "FIN"),
            (TcpFlags::URG, "URG"),
        ];
        let mut first = true;
        for (bit, name) in names {
            if self.contains(bit) {
                if !first {
                    f.write_str("|")?;
                }
                f.write_str(name)?;
                first = false;
            }
        }
        if first {
            f.write_str("-")?;
        }
        Ok(())
    }
}

/// Decoded link/IP/TCP header metadata of one captured packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketRecord {
    /// Capture timestamp, microseconds since the epoch.
    pub ts_us: i64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    /// Transport protocol id; always 6 (TCP) for emitted records.
    pub protocol: u8,
    pub ttl: u8,
    pub flags: TcpFlags,
    /// Raw 16-bit TCP receive window.
    pub window: u16,
    /// Bytes on the wire including the link header (pcap `orig_len`).
    pub total_len: u32,
    /// TCP payload bytes, computed from the IP/TCP length fields.
    pub payload_len: u32,
}

/// Per-file ingest counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    /// TCP/IPv4 frames successfully decoded.
    pub decoded: u64,
    /// IPv4 frames carrying a transport other than TCP.
    pub skipped_non_tcp: u64,
    /// Frames that are not IPv4 (ARP, IPv6, QinQ, ...).
    pub skipped_non_ipv4: u64,
    /// Frames cut short of their own headers, plus a final record whose
    /// header claims more bytes than the file holds.
    pub truncated: u64,
}

impl IngestStats {
    pub fn skipped(&self) -> u64 {
        self.skipped_non_tcp + self.skipped_non_ipv4 + self.truncated
    }
}

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("not a pcap file: unrecognized magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("pcapng input is not supported; convert to classic pcap first")]
    PcapNg,
    #[error("truncated pcap global header: {0} bytes, need 24")]
    TruncatedHeader(usize),
    #[error("unsupported link type {0}; only Ethernet (1) captures are readable")]
    UnsupportedLinkType(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Why a single frame was skipped instead of decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Skip {
    NonIpv4,
    NonTcp,
    Truncated,
}

/// Streaming reader over the TCP/IPv4 records of one classic pcap file.
pub struct PcapReader<R: Read> {
    input: R,
    swapped: bool,
    nanos: bool,
    stats: IngestStats,
    done: bool,
}

impl PcapReader<BufReader<File>> {
    /// Open a classic pcap file and validate its global header.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CaptureError> {
        let file = File::open(path.as_ref())?;
        Self::new(BufReader::new(file))
    }
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut input: R) -> Result<Self, CaptureError> {
        let mut header = [0u8; 24];
        let got = read_up_to(&mut input, &mut header)?;
        if got < 24 {
            return Err(CaptureError::TruncatedHeader(got));
        }
        let magic_le = u32::from_le_bytes([header[0], header[1], header[2], header[3]]);
        let magic_be = u32::from_be_bytes([header[0], header[1], header[2], header[3]]);
        // `swapped` means the file byte order differs from the magic's
        // natural little-endian reading.
        let (swapped, nanos) = match (magic_le, magic_be) {
            (MAGIC_USEC, _) => (false, false),
            (MAGIC_NSEC, _) => (false, true),
            (_, MAGIC_USEC) => (true, false),
            (_, MAGIC_NSEC) => (true, true),
            _ if magic_le == PCAPNG_MAGIC || magic_be == PCAPNG_MAGIC => {
                return Err(CaptureError::PcapNg)
            }
            _ => return Err(CaptureError::BadMagic(magic_le)),
        };
        let read_u32 = |bytes: &[u8]| -> u32 {
            let arr = [bytes[0], bytes[1], bytes[2], bytes[3]];
            if swapped {
                u32::from_be_bytes(arr)
            } else {
                u32::from_le_bytes(arr)
            }
        };
        let network = read_u32(&header[20..24]);
        if network != LINKTYPE_ETHERNET {
            return Err(CaptureError::UnsupportedLinkType(network));
        }
        Ok(PcapReader {
            input,
            swapped,
            nanos,
            stats: IngestStats::default(),
            done: false,
        })
    }

    /// Counters accumulated so far; final once the iterator returns `None`.
    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    fn read_u32(&self, bytes: &[u8]) -> u32 {
        let arr = [bytes[0], bytes[1], bytes[2], bytes[3]];
        if self.swapped {
            u32::from_be_bytes(arr)
        } else {
            u32::from_le_bytes(arr)
        }
    }

    /// Read the next TCP/IPv4 record, updating skip counters along the way.
    fn next_record(&mut self) -> Result<Option<PacketRecord>, CaptureError> {
        loop {
            if self.done {
                return Ok(None);
            }
            let mut rec_header = [0u8; 16];
            let got = read_up_to(&mut self.input, &mut rec_header)?;
            if got == 0 {
                self.done = true;
                return Ok(None);
            }
            if got < 16 {
                // A partial record header at EOF: report, stop.
                self.stats.truncated += 1;
                self.done = true;
                return Ok(None);
            }
            let ts_sec = self.read_u32(&rec_header[0..4]) as i64;
            let ts_frac = self.read_u32(&rec_header[4..8]) as i64;
            let incl_len = self.read_u32(&rec_header[8..12]) as usize;
            let orig_len = self.read_u32(&rec_header[12..16]);
            // A corrupt length field must not drive a giant allocation;
            // real frames never exceed jumbo-frame territory.
            if incl_len > 256 * 1024 {
                self.stats.truncated += 1;
                self.done = true;
                return Ok(None);
            }
            let mut frame = vec![0u8; incl_len];
            let got = read_up_to(&mut self.input, &mut frame)?;
            if got < incl_len {
                self.stats.truncated += 1;
                self.done = true;
                return Ok(None);
            }
            let ts_us = if self.nanos {
                ts_sec * 1_000_000 + ts_frac / 1000
            } else {
                ts_sec * 1_000_000 + ts_frac
            };
            match decode_packet(&frame, LINKTYPE_ETHERNET, ts_us, orig_len) {
                Ok(record) => {
                    self.stats.decoded += 1;
                    return Ok(Some(record));
                }
                Err(Skip::NonIpv4) => self.stats.skipped_non_ipv4 += 1,
                Err(Skip::NonTcp) => self.stats.skipped_non_tcp += 1,
                Err(Skip::Truncated) => self.stats.truncated += 1,
            }
        }
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<PacketRecord, CaptureError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_record() {
            Ok(Some(record)) => Some(Ok(record)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Read a whole capture into memory. Convenience over [`PcapReader`].
pub fn read_pcap(path: impl AsRef<Path>) -> Result<(Vec<PacketRecord>, IngestStats), CaptureError> {
    let mut reader = PcapReader::open(path)?;
    let mut records = Vec::new();
    for item in reader.by_ref() {
        records.push(item?);
    }
    Ok((records, reader.stats()))
}

/// Decode one captured frame into a [`PacketRecord`].
///
/// `ts_us` and `orig_len` come from the pcap record header. IP options and
/// TCP options are honored via the header-length fields; a malformed frame
/// is a [`Skip`], never a hard failure.
pub fn decode_packet(
    raw: &[u8],
    link_type: u32,
    ts_us: i64,
    orig_len: u32,
) -> Result<PacketRecord, Skip> {
    if link_type != LINKTYPE_ETHERNET {
        return Err(Skip::NonIpv4);
    }
    if raw.len() < 14 {
        return Err(Skip::Truncated);
    }
    let mut ethertype = u16::from_be_bytes([raw[12], raw[13]]);
    let mut offset = 14usize;
    if ethertype == ETHERTYPE_VLAN {
        // Unwrap a single 802.1Q tag; QinQ stays skipped.
        if raw.len() < offset + 4 {
            return Err(Skip::Truncated);
        }
        ethertype = u16::from_be_bytes([raw[offset + 2], raw[offset + 3]]);
        offset += 4;
        if ethertype == ETHERTYPE_VLAN || ethertype == ETHERTYPE_QINQ {
            return Err(Skip::NonIpv4);
        }
    }
    if ethertype != ETHERTYPE_IPV4 {
        return Err(Skip::NonIpv4);
    }
    let ip = &raw[offset..];
    if ip.len() < 20 {
        return Err(Skip::Truncated);
    }
    if ip[0] >> 4 != 4 {
        return Err(Skip::NonIpv4);
    }
    let ihl = ((ip[0] & 0x0f) as usize) * 4;
    if ihl < 20 || ip.len() < ihl {
        return Err(Skip::Truncated);
    }
    let ip_total_len = u16::from_be_bytes([ip[2], ip[3]]) as usize;
    let frag = u16::from_be_bytes([ip[6], ip[7]]);
    if frag & 0x1fff != 0 {
        // Non-first fragment: no TCP header present.
        return Err(Skip::Truncated);
    }
    let ttl = ip[8];
    let protocol = ip[9];
    if protocol != 6 {
        return Err(Skip::NonTcp);
    }
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);

    let tcp = &ip[ihl..];
    if tcp.len() < 20 {
        return Err(Skip::Truncated);
    }
    let src_port = u16::from_be_bytes([tcp[0], tcp[1]]);
    let dst_port = u16::from_be_bytes([tcp[2], tcp[3]]);
    let data_offset = ((tcp[12] >> 4) as usize) * 4;
    if data_offset < 20 {
        return Err(Skip::Truncated);
    }
    let flags = TcpFlags(tcp[13] & 0x3f);
    let window = u16::from_be_bytes([tcp[14], tcp[15]]);

    if ip_total_len < ihl + data_offset {
        return Err(Skip::Truncated);
    }
    let payload_len = (ip_total_len - ihl - data_offset) as u32;
    if payload_len > orig_len {
        return Err(Skip::Truncated);
    }
    Ok(PacketRecord {
        ts_us,
        src_ip,
        dst_ip,
        src_port,
        dst_port,
        protocol,
        ttl,
        flags,
        window,
        total_len: orig_len,
        payload_len,
    })
}

/// Read until the buffer is full or EOF; returns bytes read.
fn read_up_to<R: Read>(input: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = input.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}
