//! Classic libpcap reader restricted to Ethernet II / IPv4 / UDP / RTP.
//!
//! Captures only carry arrival times, so imported packets get
//! `send_ts_us == recv_ts_us`. Timestamps are rebased so that the earliest
//! RTP packet in the capture sits at 0.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::{MediaPacket, StreamKind, StreamTrace};

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
const LINKTYPE_ETHERNET: u32 = 1;
const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_VLAN: u16 = 0x8100;
const IPPROTO_UDP: u8 = 17;
const RTP_FIXED_HEADER: usize = 12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PcapError {
    #[error("unsupported capture format (not a classic pcap file)")]
    UnsupportedFormat,
    #[error("unsupported link type {0} (only Ethernet is supported)")]
    UnsupportedLink(u32),
    #[error("record {record} is truncated")]
    Truncated { record: usize },
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

impl Endian {
    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            Endian::Little => u32::from_le_bytes(a),
            Endian::Big => u32::from_be_bytes(a),
        }
    }
}

fn be16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn be32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

struct RtpFields {
    seq: u16,
    ssrc: u32,
    payload_type: u8,
    marker: bool,
    size_bytes: u32,
}

/// Reads a classic pcap capture and returns one trace per RTP SSRC, ordered
/// by SSRC. `port_filter` keeps only UDP datagrams with that source or
/// destination port.
pub fn import_pcap(bytes: &[u8], port_filter: Option<u16>) -> Result<Vec<StreamTrace>, PcapError> {
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(PcapError::UnsupportedFormat);
    }
    let endian = match bytes[0..4] {
        [0xd4, 0xc3, 0xb2, 0xa1] => Endian::Little,
        [0xa1, 0xb2, 0xc3, 0xd4] => Endian::Big,
        _ => return Err(PcapError::UnsupportedFormat),
    };
    let link = endian.u32(&bytes[20..24]);
    if link != LINKTYPE_ETHERNET {
        return Err(PcapError::UnsupportedLink(link));
    }

    let mut found: Vec<(u64, RtpFields)> = Vec::new();
    let mut pos = GLOBAL_HEADER_LEN;
    let mut record = 0usize;
    while pos < bytes.len() {
        let Some(hdr) = bytes.get(pos..pos + RECORD_HEADER_LEN) else {
            return Err(PcapError::Truncated { record });
        };
        let ts = endian.u32(&hdr[0..4]) as u64 * 1_000_000 + endian.u32(&hdr[4..8]) as u64;
        let incl = endian.u32(&hdr[8..12]) as usize;
        let start = pos + RECORD_HEADER_LEN;
        let Some(data) = start
            .checked_add(incl)
            .and_then(|end| bytes.get(start..end))
        else {
            return Err(PcapError::Truncated { record });
        };
        if let Some(rtp) = dissect(data, port_filter) {
            found.push((ts, rtp));
        }
        pos = start + incl;
        record += 1;
    }

    let origin = found.iter().map(|(ts, _)| *ts).min().unwrap_or(0);
    let mut streams: BTreeMap<u32, Vec<(u64, MediaPacket)>> = BTreeMap::new();
    for (ts, rtp) in found {
        let t = ts - origin;
        streams.entry(rtp.ssrc).or_default().push((
            t,
            MediaPacket {
                seq: rtp.seq,
                ssrc: rtp.ssrc,
                payload_type: rtp.payload_type,
                marker: rtp.marker,
                send_ts_us: t,
                recv_ts_us: Some(t),
                size_bytes: rtp.size_bytes,
            },
        ));
    }

    Ok(streams
        .into_values()
        .map(|pkts| {
            let packets = order_stream(pkts);
            let kind = classify(&packets);
            StreamTrace::new(kind, packets)
        })
        .collect())
}

/// Sorts a stream by (arrival, extended sequence number) and discards
/// retransmitted duplicates.
fn order_stream(pkts: Vec<(u64, MediaPacket)>) -> Vec<MediaPacket> {
    let mut ext = Vec::with_capacity(pkts.len());
    let mut last: Option<(u16, i64)> = None;
    for (t, p) in pkts {
        let e = match last {
            None => p.seq as i64,
            Some((s, e)) => e + p.seq.wrapping_sub(s) as i16 as i64,
        };
        last = Some((p.seq, e));
        ext.push((t, e, p));
    }
    ext.sort_by_key(|&(t, e, _)| (t, e));

    let mut out: Vec<MediaPacket> = Vec::with_capacity(ext.len());
    let mut seen: HashMap<u16, usize> = HashMap::new();
    for (_, _, p) in ext {
        if let Some(&j) = seen.get(&p.seq) {
            if out.len() - j < 65536 {
                continue;
            }
        }
        seen.insert(p.seq, out.len());
        out.push(p);
    }
    out
}

/// Static payload types 24..=34 are video; for dynamic types, constant-size
/// streams are taken to be audio.
fn classify(packets: &[MediaPacket]) -> StreamKind {
    let Some(first) = packets.first() else {
        return StreamKind::Audio;
    };
    match first.payload_type {
        0..=23 => StreamKind::Audio,
        24..=34 => StreamKind::Video,
        _ => StreamKind::infer(packets),
    }
}

fn dissect(frame: &[u8], port_filter: Option<u16>) -> Option<RtpFields> {
    let mut ethertype = be16(frame.get(12..14)?);
    let mut l3 = 14;
    if ethertype == ETHERTYPE_VLAN {
        ethertype = be16(frame.get(16..18)?);
        l3 = 18;
    }
    if ethertype != ETHERTYPE_IPV4 {
        return None;
    }

    let ip = frame.get(l3..)?;
    let vihl = *ip.first()?;
    if vihl >> 4 != 4 {
        return None;
    }
    let ihl = (vihl & 0x0f) as usize * 4;
    if ihl < 20 || ip.len() < ihl {
        return None;
    }
    // Only first-and-only fragments carry a parseable UDP header + payload.
    let frag = be16(&ip[6..8]);
    if frag & 0x3fff != 0 || ip[9] != IPPROTO_UDP {
        return None;
    }

    let udp = &ip[ihl..];
    let hdr = udp.get(..8)?;
    let (sport, dport) = (be16(&hdr[0..2]), be16(&hdr[2..4]));
    if let Some(port) = port_filter {
        if sport != port && dport != port {
            return None;
        }
    }
    let payload_len = (be16(&hdr[4..6]) as usize).checked_sub(8)?;
    let payload = &udp[8..];
    parse_rtp(payload, payload_len)
}

/// `payload` is what was captured; `payload_len` is the length the UDP
/// header declares, which may exceed it under a short snaplen.
fn parse_rtp(payload: &[u8], payload_len: usize) -> Option<RtpFields> {
    if payload_len < RTP_FIXED_HEADER || payload.len() < RTP_FIXED_HEADER {
        return None;
    }
    let b0 = payload[0];
    if b0 >> 6 != 2 {
        return None;
    }
    let padding = b0 & 0x20 != 0;
    let extension = b0 & 0x10 != 0;
    let csrc_count = (b0 & 0x0f) as usize;

    let mut header = RTP_FIXED_HEADER + 4 * csrc_count;
    if extension {
        let ext = payload.get(header..header + 4)?;
        header += 4 + 4 * be16(&ext[2..4]) as usize;
    }
    let pad = if padding {
        if payload.len() < payload_len {
            return None;
        }
        payload[payload_len - 1] as usize
    } else {
        0
    };
    let size = payload_len.checked_sub(header)?.checked_sub(pad)?;
    if size == 0 {
        return None;
    }

    Some(RtpFields {
        seq: be16(&payload[2..4]),
        ssrc: be32(&payload[8..12]),
        payload_type: payload[1] & 0x7f,
        marker: payload[1] & 0x80 != 0,
        size_bytes: u32::try_from(size).ok()?,
    })
}
