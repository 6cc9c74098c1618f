//! Packet ingestion: classic PCAP decoding and the line-oriented `pktrec`
//! text format.
//!
//! Only Ethernet captures carrying IPv4/TCP produce records. Everything else
//! present in a capture is accounted for in [`SkipStats`], so that
//! `records.len() + skipped.total()` always equals the number of packet
//! records found in the file.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

pub const TCP_FIN: u8 = 0x01;
pub const TCP_SYN: u8 = 0x02;
pub const TCP_RST: u8 = 0x04;
pub const TCP_PSH: u8 = 0x08;
pub const TCP_ACK: u8 = 0x10;

/// First line of every generated `pktrec` file.
pub const PKTREC_HEADER: &str = "# pktrec v1";

/// One captured TCP/IPv4 packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PacketRecord {
    pub timestamp_us: u64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    /// IP total length.
    pub size_bytes: u32,
    pub tcp_flags: u8,
    /// Advertised receive window, window scaling not applied.
    pub recv_window_bytes: u32,
}

impl PacketRecord {
    pub fn has_ack(&self) -> bool {
        self.tcp_flags & TCP_ACK != 0
    }

    /// The same packet travelling in the opposite direction.
    pub fn mirrored(&self) -> Self {
        PacketRecord {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            ..*self
        }
    }
}

impl fmt::Display for PacketRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {} {} {} {}",
            self.timestamp_us,
            self.src_ip,
            self.dst_ip,
            self.src_port,
            self.dst_port,
            self.protocol,
            self.size_bytes,
            self.tcp_flags,
            self.recv_window_bytes
        )
    }
}

impl FromStr for PacketRecord {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(format!("expected 9 fields, found {}", fields.len()));
        }
        fn num<T: FromStr>(name: &str, s: &str) -> Result<T, String> {
            s.parse()
                .map_err(|_| format!("invalid {name} {s:?}"))
        }
        Ok(PacketRecord {
            timestamp_us: num("timestamp_us", fields[0])?,
            src_ip: num("src_ip", fields[1])?,
            dst_ip: num("dst_ip", fields[2])?,
            src_port: num("src_port", fields[3])?,
            dst_port: num("dst_port", fields[4])?,
            protocol: num("protocol", fields[5])?,
            size_bytes: num("size_bytes", fields[6])?,
            tcp_flags: num("tcp_flags", fields[7])?,
            recv_window_bytes: num("recv_window_bytes", fields[8])?,
        })
    }
}

/// Packets present in a capture that did not become records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipStats {
    /// Ethernet frames whose payload is not IPv4 (ARP, IPv6, ...).
    pub non_ipv4: u64,
    /// IPv4 packets whose protocol is not TCP.
    pub non_tcp: u64,
    /// Non-first IPv4 fragments.
    pub fragments: u64,
    /// Frames too short for their declared headers, or with invalid headers.
    pub malformed: u64,
    /// A final packet record cut short by the end of the file.
    pub truncated: u64,
}

impl SkipStats {
    pub fn total(&self) -> u64 {
        self.non_ipv4 + self.non_tcp + self.fragments + self.malformed + self.truncated
    }
}

/// Result of decoding a capture.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PcapCapture {
    pub records: Vec<PacketRecord>,
    pub skipped: SkipStats,
}

impl PcapCapture {
    /// True when the file ended in the middle of a packet record.
    pub fn is_partial(&self) -> bool {
        self.skipped.truncated > 0
    }
}

const MAGIC_US: u32 = 0xA1B2_C3D4;
const MAGIC_NS: u32 = 0xA1B2_3C4D;
const LINKTYPE_ETHERNET: u32 = 1;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_VLAN: u16 = 0x8100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

impl Endian {
    fn u32(self, b: [u8; 4]) -> u32 {
        match self {
            Endian::Little => u32::from_le_bytes(b),
            Endian::Big => u32::from_be_bytes(b),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct GlobalHeader {
    endian: Endian,
    nanos: bool,
}

fn parse_global_header(buf: &[u8; 24]) -> Result<GlobalHeader> {
    let magic_le = u32::from_le_bytes(buf[0..4].try_into().unwrap());
    let (endian, nanos) = match magic_le {
        MAGIC_US => (Endian::Little, false),
        MAGIC_NS => (Endian::Little, true),
        m if m.swap_bytes() == MAGIC_US => (Endian::Big, false),
        m if m.swap_bytes() == MAGIC_NS => (Endian::Big, true),
        m => return Err(Error::PcapFormat(format!("bad magic number {m:#010x}"))),
    };
    let linktype = endian.u32(buf[20..24].try_into().unwrap());
    if linktype != LINKTYPE_ETHERNET {
        return Err(Error::PcapFormat(format!(
            "unsupported link type {linktype} (only Ethernet is supported)"
        )));
    }
    Ok(GlobalHeader { endian, nanos })
}

/// Reads until `buf` is full or EOF; returns bytes read.
fn read_full<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

enum FrameOutcome {
    Record(PacketRecord),
    NonIpv4,
    NonTcp,
    Fragment,
    Malformed,
}

fn decode_frame(timestamp_us: u64, frame: &[u8]) -> FrameOutcome {
    if frame.len() < 14 {
        return FrameOutcome::Malformed;
    }
    let mut ethertype = u16::from_be_bytes([frame[12], frame[13]]);
    let mut offset = 14;
    if ethertype == ETHERTYPE_VLAN {
        if frame.len() < 18 {
            return FrameOutcome::Malformed;
        }
        ethertype = u16::from_be_bytes([frame[16], frame[17]]);
        offset = 18;
    }
    if ethertype != ETHERTYPE_IPV4 {
        return FrameOutcome::NonIpv4;
    }

    let ip = &frame[offset..];
    if ip.len() < 20 || ip[0] >> 4 != 4 {
        return FrameOutcome::Malformed;
    }
    let ihl = usize::from(ip[0] & 0x0f) * 4;
    let total_len = u16::from_be_bytes([ip[2], ip[3]]);
    if ihl < 20 || usize::from(total_len) < ihl || ip.len() < ihl {
        return FrameOutcome::Malformed;
    }
    let frag_offset = u16::from_be_bytes([ip[6], ip[7]]) & 0x1fff;
    let protocol = ip[9];
    if frag_offset != 0 {
        return FrameOutcome::Fragment;
    }
    if protocol != PROTO_TCP {
        return FrameOutcome::NonTcp;
    }
    let tcp = &ip[ihl..];
    if tcp.len() < 16 {
        return FrameOutcome::Malformed;
    }
    let octets = |b: &[u8]| Ipv4Addr::new(b[0], b[1], b[2], b[3]);
    FrameOutcome::Record(PacketRecord {
        timestamp_us,
        src_ip: octets(&ip[12..16]),
        dst_ip: octets(&ip[16..20]),
        src_port: u16::from_be_bytes([tcp[0], tcp[1]]),
        dst_port: u16::from_be_bytes([tcp[2], tcp[3]]),
        protocol,
        size_bytes: u32::from(total_len),
        tcp_flags: tcp[13],
        recv_window_bytes: u32::from(u16::from_be_bytes([tcp[14], tcp[15]])),
    })
}

/// Decodes a classic PCAP stream.
///
/// A malformed global header is fatal. A packet record cut short by EOF ends
/// decoding with a warning and the records parsed so far.
pub fn parse_pcap<R: Read>(mut reader: R) -> Result<PcapCapture> {
    let mut header = [0u8; 24];
    let n = read_full(&mut reader, &mut header)?;
    if n < header.len() {
        return Err(Error::PcapFormat(format!(
            "global header is {n} bytes, expected 24"
        )));
    }
    let global = parse_global_header(&header)?;

    let mut capture = PcapCapture::default();
    let mut rec_header = [0u8; 16];
    let mut frame = Vec::new();
    loop {
        let n = read_full(&mut reader, &mut rec_header)?;
        if n == 0 {
            break;
        }
        if n < rec_header.len() {
            log::warn!("pcap ends inside a packet header; returning partial capture");
            capture.skipped.truncated += 1;
            break;
        }
        let field = |i: usize| global.endian.u32(rec_header[i..i + 4].try_into().unwrap());
        let ts_sec = u64::from(field(0));
        let ts_frac = u64::from(field(4));
        let incl_len = field(8) as usize;
        let sub_us = if global.nanos { ts_frac / 1_000 } else { ts_frac };
        let timestamp_us = ts_sec * 1_000_000 + sub_us;

        frame.resize(incl_len, 0);
        let got = read_full(&mut reader, &mut frame)?;
        if got < incl_len {
            log::warn!(
                "pcap ends inside packet data ({got} of {incl_len} bytes); returning partial capture"
            );
            capture.skipped.truncated += 1;
            break;
        }
        match decode_frame(timestamp_us, &frame) {
            FrameOutcome::Record(r) => capture.records.push(r),
            FrameOutcome::NonIpv4 => capture.skipped.non_ipv4 += 1,
            FrameOutcome::NonTcp => capture.skipped.non_tcp += 1,
            FrameOutcome::Fragment => capture.skipped.fragments += 1,
            FrameOutcome::Malformed => capture.skipped.malformed += 1,
        }
    }
    Ok(capture)
}

pub fn read_pcap(path: impl AsRef<Path>) -> Result<PcapCapture> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_pcap(BufReader::new(file))
}

/// Parses `pktrec` text. Blank lines and `#` comments are ignored.
pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<PacketRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record = trimmed.parse::<PacketRecord>().map_err(|message| Error::Parse {
            line: i + 1,
            message,
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<PacketRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(BufReader::new(file))
}

pub fn write_records_to<W: Write>(records: &[PacketRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{PKTREC_HEADER}")?;
    for r in records {
        writeln!(out, "{r}")?;
    }
    out.flush()
}

pub fn write_records(records: &[PacketRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records_to(records, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Reads either format, choosing PCAP when the file starts with a PCAP magic
/// number.
pub fn read_any(path: impl AsRef<Path>) -> Result<PcapCapture> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 4];
    let n = read_full(&mut file, &mut magic).map_err(|e| Error::io(path, e))?;
    let le = u32::from_le_bytes(magic);
    let is_pcap = n == 4
        && [MAGIC_US, MAGIC_NS, MAGIC_US.swap_bytes(), MAGIC_NS.swap_bytes()].contains(&le);
    if is_pcap {
        read_pcap(path)
    } else {
        Ok(PcapCapture {
            records: read_records(path)?,
            skipped: SkipStats::default(),
        })
    }
}
