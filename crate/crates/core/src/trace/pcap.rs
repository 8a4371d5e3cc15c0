//! Classic libpcap files: Ethernet (optionally one 802.1Q tag), IPv4, TCP/UDP.
//!
//! Everything else is counted in [`PcapStats`] and skipped. pcapng and the
//! nanosecond-resolution variant are rejected.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use super::TraceRecord;
use crate::error::{Error, Result};
use crate::key::{FlowKey, PROTO_TCP, PROTO_UDP};

pub const MAGIC_USEC: u32 = 0xa1b2_c3d4;
pub const MAGIC_NSEC: u32 = 0xa1b2_3c4d;
pub const LINKTYPE_ETHERNET: u32 = 1;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
const MAX_RECORD_LEN: u32 = 1 << 18;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;

pub(crate) fn looks_like_pcap(magic: [u8; 4]) -> bool {
    let le = u32::from_le_bytes(magic);
    [MAGIC_USEC, MAGIC_NSEC]
        .iter()
        .any(|&m| le == m || le == m.swap_bytes())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PcapStats {
    /// Complete records read from the file.
    pub records: u64,
    pub emitted: u64,
    pub skip_ipv6: u64,
    /// Non-IP EtherTypes (ARP, LLDP, ...).
    pub skip_non_ipv4: u64,
    /// IPv4 fragments with a nonzero offset.
    pub skip_fragment: u64,
    /// IPv4 payloads other than TCP and UDP.
    pub skip_non_l4: u64,
    /// Headers cut short by the capture length, or a zero wire length.
    pub skip_malformed: u64,
    /// Records cut off by end of file.
    pub truncated: u64,
    /// Records whose timestamp is earlier than their predecessor's.
    pub ts_regressions: u64,
}

impl PcapStats {
    pub fn skipped(&self) -> u64 {
        self.skip_ipv6
            + self.skip_non_ipv4
            + self.skip_fragment
            + self.skip_non_l4
            + self.skip_malformed
    }
}

pub struct PcapReader<R: Read> {
    inner: R,
    swapped: bool,
    stats: PcapStats,
    last_ts: Option<u64>,
    buf: Vec<u8>,
    done: bool,
}

pub fn read_pcap(path: impl AsRef<Path>) -> Result<PcapReader<BufReader<File>>> {
    PcapReader::new(BufReader::new(File::open(path)?))
}

/// Reads as many bytes as are available up to `buf.len()`.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

enum Parsed {
    Flow(FlowKey),
    Ipv6,
    NonIpv4,
    Fragment,
    NonL4,
    Malformed,
}

fn parse_frame(frame: &[u8]) -> Parsed {
    let be16 = |o: usize| u16::from_be_bytes([frame[o], frame[o + 1]]);
    if frame.len() < 14 {
        return Parsed::Malformed;
    }
    let (mut ethertype, mut off) = (be16(12), 14);
    if ethertype == ETHERTYPE_VLAN {
        if frame.len() < 18 {
            return Parsed::Malformed;
        }
        ethertype = be16(16);
        off = 18;
    }
    match ethertype {
        ETHERTYPE_IPV4 => {}
        ETHERTYPE_IPV6 => return Parsed::Ipv6,
        _ => return Parsed::NonIpv4,
    }
    let ip = &frame[off..];
    if ip.len() < 20 || ip[0] >> 4 != 4 {
        return Parsed::Malformed;
    }
    let ihl = usize::from(ip[0] & 0x0f) * 4;
    if ihl < 20 || ip.len() < ihl {
        return Parsed::Malformed;
    }
    let frag_offset = u16::from_be_bytes([ip[6], ip[7]]) & 0x1fff;
    if frag_offset != 0 {
        return Parsed::Fragment;
    }
    let protocol = ip[9];
    if protocol != PROTO_TCP && protocol != PROTO_UDP {
        return Parsed::NonL4;
    }
    let l4 = &ip[ihl..];
    if l4.len() < 4 {
        return Parsed::Malformed;
    }
    Parsed::Flow(FlowKey {
        src_addr: Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]),
        dst_addr: Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]),
        src_port: u16::from_be_bytes([l4[0], l4[1]]),
        dst_port: u16::from_be_bytes([l4[2], l4[3]]),
        protocol,
    })
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut hdr = [0u8; GLOBAL_HEADER_LEN];
        let n = read_full(&mut inner, &mut hdr)?;
        if n < 4 {
            return Err(Error::UnsupportedFormat(
                "file too short for a pcap header".into(),
            ));
        }
        let magic = u32::from_le_bytes([hdr[0], hdr[1], hdr[2], hdr[3]]);
        let swapped = match magic {
            MAGIC_USEC => false,
            m if m == MAGIC_USEC.swap_bytes() => true,
            m if m == MAGIC_NSEC || m == MAGIC_NSEC.swap_bytes() => {
                return Err(Error::UnsupportedFormat(
                    "nanosecond-resolution pcap is not supported".into(),
                ))
            }
            m => {
                return Err(Error::UnsupportedFormat(format!(
                    "bad pcap magic {m:#010x}"
                )))
            }
        };
        if n < GLOBAL_HEADER_LEN {
            return Err(Error::UnsupportedFormat(
                "truncated pcap global header".into(),
            ));
        }
        let reader = PcapReader {
            inner,
            swapped,
            stats: PcapStats::default(),
            last_ts: None,
            buf: Vec::new(),
            done: false,
        };
        let linktype = reader.u32_at(&hdr, 20);
        if linktype != LINKTYPE_ETHERNET {
            return Err(Error::UnsupportedFormat(format!(
                "link type {linktype} (only Ethernet is supported)"
            )));
        }
        Ok(reader)
    }

    fn u32_at(&self, b: &[u8], o: usize) -> u32 {
        let raw = [b[o], b[o + 1], b[o + 2], b[o + 3]];
        if self.swapped {
            u32::from_be_bytes(raw)
        } else {
            u32::from_le_bytes(raw)
        }
    }

    pub fn stats(&self) -> &PcapStats {
        &self.stats
    }

    /// Next IPv4 TCP/UDP record, skipping everything else. `Ok(None)` at end
    /// of file, including after a truncated trailing record.
    pub fn next_record(&mut self) -> Result<Option<TraceRecord>> {
        while !self.done {
            let mut hdr = [0u8; RECORD_HEADER_LEN];
            let n = read_full(&mut self.inner, &mut hdr)?;
            if n == 0 {
                self.done = true;
                break;
            }
            if n < RECORD_HEADER_LEN {
                self.stats.truncated += 1;
                self.done = true;
                break;
            }
            let ts_sec = self.u32_at(&hdr, 0);
            let ts_usec = self.u32_at(&hdr, 4);
            let incl_len = self.u32_at(&hdr, 8);
            let orig_len = self.u32_at(&hdr, 12);
            if incl_len > MAX_RECORD_LEN {
                return Err(Error::malformed(
                    format!("pcap record {}", self.stats.records + 1),
                    format!("captured length {incl_len} exceeds {MAX_RECORD_LEN}"),
                ));
            }
            self.buf.resize(incl_len as usize, 0);
            if read_full(&mut self.inner, &mut self.buf)? < incl_len as usize {
                self.stats.truncated += 1;
                self.done = true;
                break;
            }
            self.stats.records += 1;

            let ts_us = u64::from(ts_sec) * 1_000_000 + u64::from(ts_usec);
            if self.last_ts.is_some_and(|last| ts_us < last) {
                self.stats.ts_regressions += 1;
            }
            self.last_ts = Some(ts_us);

            match parse_frame(&self.buf) {
                Parsed::Flow(key) if orig_len >= 1 => {
                    self.stats.emitted += 1;
                    return Ok(Some(TraceRecord {
                        ts_us,
                        key,
                        wire_len: orig_len,
                    }));
                }
                Parsed::Flow(_) | Parsed::Malformed => self.stats.skip_malformed += 1,
                Parsed::Ipv6 => self.stats.skip_ipv6 += 1,
                Parsed::NonIpv4 => self.stats.skip_non_ipv4 += 1,
                Parsed::Fragment => self.stats.skip_fragment += 1,
                Parsed::NonL4 => self.stats.skip_non_l4 += 1,
            }
        }
        Ok(None)
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<TraceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Writes classic microsecond pcap with Ethernet framing.
///
/// Frames are snapped to their headers (Ethernet + IPv4 + TCP/UDP); the
/// record's wire length goes verbatim into `orig_len`, which is what the
/// reader reports back.
pub struct PcapWriter<W: Write> {
    out: W,
    big_endian: bool,
}

pub fn write_pcap(path: impl AsRef<Path>, records: &[TraceRecord]) -> Result<()> {
    let mut w = PcapWriter::new(BufWriter::new(File::create(path)?))?;
    for r in records {
        w.write_record(r)?;
    }
    w.finish()?;
    Ok(())
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Ethernet + IPv4 + L4 header bytes for `key`. `wire_len` only feeds the
/// length fields.
pub fn build_frame(key: &FlowKey, wire_len: u32) -> Vec<u8> {
    let l4_len: usize = match key.protocol {
        PROTO_TCP => 20,
        PROTO_UDP => 8,
        _ => 0,
    };
    let mut f = Vec::with_capacity(14 + 20 + l4_len);
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01, 0x02, 0, 0, 0, 0, 0x02]);
    f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

    let ip_total = (wire_len.saturating_sub(14) as usize).clamp(20 + l4_len, 0xffff) as u16;
    let mut ip = [0u8; 20];
    ip[0] = 0x45;
    ip[2..4].copy_from_slice(&ip_total.to_be_bytes());
    ip[6] = 0x40; // DF
    ip[8] = 64;
    ip[9] = key.protocol;
    ip[12..16].copy_from_slice(&key.src_addr.octets());
    ip[16..20].copy_from_slice(&key.dst_addr.octets());
    let csum = ipv4_checksum(&ip);
    ip[10..12].copy_from_slice(&csum.to_be_bytes());
    f.extend_from_slice(&ip);

    let ports = |f: &mut Vec<u8>| {
        f.extend_from_slice(&key.src_port.to_be_bytes());
        f.extend_from_slice(&key.dst_port.to_be_bytes());
    };
    match key.protocol {
        PROTO_TCP => {
            ports(&mut f);
            f.extend_from_slice(&[0; 8]); // seq, ack
            f.extend_from_slice(&[0x50, 0x10, 0xff, 0xff, 0, 0, 0, 0]);
        }
        PROTO_UDP => {
            ports(&mut f);
            let udp_len = ip_total.saturating_sub(20).max(8);
            f.extend_from_slice(&udp_len.to_be_bytes());
            f.extend_from_slice(&[0, 0]);
        }
        _ => {}
    }
    f
}

impl<W: Write> PcapWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        Self::with_byte_order(out, false)
    }

    /// `big_endian = true` produces the byte-swapped variant as seen from a
    /// little-endian host.
    pub fn with_byte_order(out: W, big_endian: bool) -> Result<Self> {
        let mut w = PcapWriter { out, big_endian };
        w.put_u32(MAGIC_USEC)?;
        w.put_u16(2)?;
        w.put_u16(4)?;
        w.put_u32(0)?; // thiszone
        w.put_u32(0)?; // sigfigs
        w.put_u32(65535)?;
        w.put_u32(LINKTYPE_ETHERNET)?;
        Ok(w)
    }

    fn put_u32(&mut self, v: u32) -> io::Result<()> {
        let b = if self.big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        self.out.write_all(&b)
    }

    fn put_u16(&mut self, v: u16) -> io::Result<()> {
        let b = if self.big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        self.out.write_all(&b)
    }

    pub fn write_record(&mut self, rec: &TraceRecord) -> Result<()> {
        self.write_frame(
            rec.ts_us,
            &build_frame(&rec.key, rec.wire_len),
            rec.wire_len,
        )
    }

    /// Writes an arbitrary captured frame.
    pub fn write_frame(&mut self, ts_us: u64, frame: &[u8], orig_len: u32) -> Result<()> {
        let secs = u32::try_from(ts_us / 1_000_000)
            .map_err(|_| Error::InvalidParams(format!("timestamp {ts_us} beyond pcap range")))?;
        self.put_u32(secs)?;
        self.put_u32((ts_us % 1_000_000) as u32)?;
        self.put_u32(frame.len() as u32)?;
        self.put_u32(orig_len)?;
        self.out.write_all(frame)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}
