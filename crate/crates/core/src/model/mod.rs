//! Packet and trace data model shared by the generator, shapers and metrics.
//!
//! All timestamps are integer microseconds. A trace is a time-ordered list of
//! packets from one stream; which timestamp orders it depends on whether the
//! packets have been received yet (see [`StreamTrace::active_ts`]).

mod csv;
mod pcap;

pub use self::csv::{read_trace_csv, write_trace_csv, CsvError};
pub use self::pcap::{import_pcap, PcapError};

use std::collections::HashMap;
use std::fmt;

/// One RTP-style media packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MediaPacket {
    pub seq: u16,
    pub ssrc: u32,
    /// 7-bit RTP payload type.
    pub payload_type: u8,
    pub marker: bool,
    /// Sender clock.
    pub send_ts_us: u64,
    /// Arrival time, once a channel or capture has provided one.
    pub recv_ts_us: Option<u64>,
    pub size_bytes: u32,
}

impl MediaPacket {
    /// `(ssrc, seq)` identity used to match packets across pipeline stages.
    pub fn id(&self) -> (u32, u16) {
        (self.ssrc, self.seq)
    }

    /// One-way delay, when the packet has been received.
    pub fn delay_us(&self) -> Option<i64> {
        self.recv_ts_us.map(|r| r as i64 - self.send_ts_us as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Audio,
    Video,
}

impl StreamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StreamKind::Audio => "audio",
            StreamKind::Video => "video",
        }
    }
}

impl StreamKind {
    /// Constant-size streams are taken to be audio, anything else video.
    pub fn infer(packets: &[MediaPacket]) -> Self {
        match packets.first() {
            Some(first) if packets.iter().any(|p| p.size_bytes != first.size_bytes) => {
                StreamKind::Video
            }
            _ => StreamKind::Audio,
        }
    }
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StreamKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "audio" => Ok(StreamKind::Audio),
            "video" => Ok(StreamKind::Video),
            other => Err(format!(
                "unknown stream kind `{other}` (expected audio or video)"
            )),
        }
    }
}

/// Time-ordered packets of a single media stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamTrace {
    pub kind: StreamKind,
    pub packets: Vec<MediaPacket>,
    pub clock_resolution_us: u64,
}

impl StreamTrace {
    pub fn new(kind: StreamKind, packets: Vec<MediaPacket>) -> Self {
        StreamTrace {
            kind,
            packets,
            clock_resolution_us: 1,
        }
    }

    pub fn empty(kind: StreamKind) -> Self {
        Self::new(kind, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// True when every packet carries an arrival timestamp (vacuously true
    /// for an empty trace).
    pub fn is_received(&self) -> bool {
        self.packets.iter().all(|p| p.recv_ts_us.is_some())
    }

    /// Timestamp the trace is ordered by: arrival when all packets have one,
    /// send time otherwise.
    pub fn active_ts(&self, idx: usize) -> u64 {
        let p = &self.packets[idx];
        if self.is_received() {
            p.recv_ts_us.unwrap_or(p.send_ts_us)
        } else {
            p.send_ts_us
        }
    }

    /// Active timestamps for the whole trace, computed once.
    pub fn active_timestamps(&self) -> Vec<u64> {
        let received = self.is_received();
        self.packets
            .iter()
            .map(|p| match (received, p.recv_ts_us) {
                (true, Some(r)) => r,
                _ => p.send_ts_us,
            })
            .collect()
    }

    pub fn total_bytes(&self) -> u64 {
        self.packets.iter().map(|p| p.size_bytes as u64).sum()
    }
}

/// A single invariant violation found by [`validate_trace`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    ZeroSize,
    NegativeDelay,
    PayloadTypeRange,
    Unsorted,
    DuplicateSeq,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::ZeroSize => "zero size",
            ViolationKind::NegativeDelay => "negative delay",
            ViolationKind::PayloadTypeRange => "payload type exceeds 7 bits",
            ViolationKind::Unsorted => "unsorted",
            ViolationKind::DuplicateSeq => "duplicate (ssrc, seq)",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "packet {}: {}", self.index, self.kind.as_str())
    }
}

/// Sequence numbers are compared modulo 2^16: `b` follows `a` when it lies
/// in the half-window ahead of it.
pub fn seq_follows(a: u16, b: u16) -> bool {
    (b.wrapping_sub(a) as i16) > 0
}

/// Returns every invariant violation in `trace`; an empty list means valid.
pub fn validate_trace(trace: &StreamTrace) -> Vec<Violation> {
    let mut out = Vec::new();
    let ts = trace.active_timestamps();
    let mut last_seen: HashMap<(u32, u16), usize> = HashMap::new();

    for (i, p) in trace.packets.iter().enumerate() {
        if p.size_bytes == 0 {
            out.push(Violation {
                index: i,
                kind: ViolationKind::ZeroSize,
            });
        }
        if p.payload_type > 0x7f {
            out.push(Violation {
                index: i,
                kind: ViolationKind::PayloadTypeRange,
            });
        }
        if matches!(p.recv_ts_us, Some(r) if r < p.send_ts_us) {
            out.push(Violation {
                index: i,
                kind: ViolationKind::NegativeDelay,
            });
        }
        // Equal timestamps are accepted in any order: shapers are FIFO and may
        // release a reordered pair at the same microsecond.
        if i > 0 && ts[i] < ts[i - 1] {
            out.push(Violation {
                index: i,
                kind: ViolationKind::Unsorted,
            });
        }
        if let Some(j) = last_seen.insert(p.id(), i) {
            if i - j < 65536 {
                out.push(Violation {
                    index: i,
                    kind: ViolationKind::DuplicateSeq,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(seq: u16, send: u64, recv: Option<u64>, size: u32) -> MediaPacket {
        MediaPacket {
            seq,
            ssrc: 1,
            payload_type: 96,
            marker: false,
            send_ts_us: send,
            recv_ts_us: recv,
            size_bytes: size,
        }
    }

    #[test]
    fn empty_trace_is_valid() {
        assert!(validate_trace(&StreamTrace::empty(StreamKind::Audio)).is_empty());
    }

    #[test]
    fn unsorted_send_times() {
        let t = StreamTrace::new(
            StreamKind::Audio,
            vec![pkt(0, 20000, None, 125), pkt(1, 10000, None, 125)],
        );
        assert_eq!(
            validate_trace(&t),
            vec![Violation {
                index: 1,
                kind: ViolationKind::Unsorted
            }]
        );
    }

    #[test]
    fn negative_delay() {
        let t = StreamTrace::new(StreamKind::Audio, vec![pkt(0, 10, Some(5), 125)]);
        assert_eq!(
            validate_trace(&t),
            vec![Violation {
                index: 0,
                kind: ViolationKind::NegativeDelay
            }]
        );
    }

    #[test]
    fn equal_timestamps_are_sorted() {
        let t = StreamTrace::new(
            StreamKind::Video,
            vec![
                pkt(5, 0, None, 10),
                pkt(4, 0, None, 10),
                pkt(65535, 0, None, 10),
            ],
        );
        assert!(validate_trace(&t).is_empty());
    }

    #[test]
    fn zero_size_and_duplicates() {
        let t = StreamTrace::new(
            StreamKind::Audio,
            vec![pkt(3, 0, None, 0), pkt(3, 1, None, 5)],
        );
        let kinds: Vec<_> = validate_trace(&t).into_iter().map(|v| v.kind).collect();
        assert_eq!(
            kinds,
            vec![ViolationKind::ZeroSize, ViolationKind::DuplicateSeq]
        );
    }

    #[test]
    fn active_ts_falls_back_to_send() {
        let t = StreamTrace::new(
            StreamKind::Audio,
            vec![pkt(0, 0, Some(7), 1), pkt(1, 3, None, 1)],
        );
        assert_eq!(t.active_timestamps(), vec![0, 3]);
    }
}
