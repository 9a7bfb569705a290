//! Classic pcap output (microsecond magic, little-endian) and
//! Ethernet/IPv4/TCP frame assembly for the generator.

use std::io::{self, Write};
use std::net::Ipv4Addr;

use crate::capture::TcpFlags;

const MAGIC_USEC: u32 = 0xa1b2_c3d4;
const SNAPLEN: u32 = 65_535;
const LINKTYPE_ETHERNET: u32 = 1;
/// Minimum Ethernet frame length on the wire (without FCS).
const MIN_FRAME: usize = 60;

pub struct PcapWriter<W: Write> {
    out: W,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut out: W) -> io::Result<PcapWriter<W>> {
        out.write_all(&MAGIC_USEC.to_le_bytes())?;
        out.write_all(&2u16.to_le_bytes())?;
        out.write_all(&4u16.to_le_bytes())?;
        out.write_all(&0u32.to_le_bytes())?; // thiszone
        out.write_all(&0u32.to_le_bytes())?; // sigfigs
        out.write_all(&SNAPLEN.to_le_bytes())?;
        out.write_all(&LINKTYPE_ETHERNET.to_le_bytes())?;
        Ok(PcapWriter { out })
    }

    pub fn write_frame(&mut self, ts_us: i64, frame: &[u8]) -> io::Result<()> {
        let sec = (ts_us / 1_000_000) as u32;
        let usec = (ts_us % 1_000_000) as u32;
        self.out.write_all(&sec.to_le_bytes())?;
        self.out.write_all(&usec.to_le_bytes())?;
        self.out.write_all(&(frame.len() as u32).to_le_bytes())?;
        self.out.write_all(&(frame.len() as u32).to_le_bytes())?;
        self.out.write_all(frame)?;
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Everything needed to assemble one frame.
pub struct FrameSpec {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub ttl: u8,
    pub window: u16,
    pub ip_id: u16,
    pub payload: Vec<u8>,
}

/// MAC addresses are derived from the last two IPv4 octets.
fn mac_of(ip: Ipv4Addr) -> [u8; 6] {
    let o = ip.octets();
    [0x02, 0x00, o[0], o[1], o[2], o[3]]
}

/// Assemble Ethernet + IPv4 (with header checksum) + TCP, zero-padded to
/// the 60-byte Ethernet minimum.
pub fn encode_frame(spec: &FrameSpec) -> Vec<u8> {
    let ip_total = 20 + 20 + spec.payload.len();
    let mut f = Vec::with_capacity(14 + ip_total);
    f.extend_from_slice(&mac_of(spec.dst_ip));
    f.extend_from_slice(&mac_of(spec.src_ip));
    f.extend_from_slice(&0x0800u16.to_be_bytes());

    let ip_start = f.len();
    f.push(0x45); // version 4, IHL 5
    f.push(0);
    f.extend_from_slice(&(ip_total as u16).to_be_bytes());
    f.extend_from_slice(&spec.ip_id.to_be_bytes());
    f.extend_from_slice(&0x4000u16.to_be_bytes()); // DF
    f.push(spec.ttl);
    f.push(6);
    f.extend_from_slice(&[0, 0]); // checksum placeholder
    f.extend_from_slice(&spec.src_ip.octets());
    f.extend_from_slice(&spec.dst_ip.octets());
    let checksum = ipv4_checksum(&f[ip_start..ip_start + 20]);
    f[ip_start + 10..ip_start + 12].copy_from_slice(&checksum.to_be_bytes());

    f.extend_from_slice(&spec.src_port.to_be_bytes());
    f.extend_from_slice(&spec.dst_port.to_be_bytes());
    f.extend_from_slice(&spec.seq.to_be_bytes());
    f.extend_from_slice(&spec.ack.to_be_bytes());
    f.push(5 << 4); // data offset 5 words
    f.push(spec.flags.0);
    f.extend_from_slice(&spec.window.to_be_bytes());
    f.extend_from_slice(&[0, 0, 0, 0]); // TCP checksum + urgent, unused
    f.extend_from_slice(&spec.payload);

    while f.len() < MIN_FRAME {
        f.push(0);
    }
    f
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum = 0u32;
    for chunk in header.chunks(2) {
        sum += u32::from(u16::from_be_bytes([chunk[0], chunk[1]]));
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}
