//! Shared helpers for the integration tests: random traces and brute-force
//! shaper simulators that advance time one microsecond at a time.

#![allow(dead_code)]

use std::collections::VecDeque;

use rtp_shaper::model::{MediaPacket, StreamKind, StreamTrace};
use rtp_shaper::shaper::{DropReason, LeakyBucketConfig, Rate, TokenBucketConfig};
use rtp_shaper::traffic::SplitMix64;

pub struct Rng(SplitMix64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(SplitMix64::new(seed))
    }

    /// Uniform in `lo..=hi` (modulo bias is irrelevant here).
    pub fn range(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.0.next_u64() % (hi - lo + 1)
    }

    pub fn chance(&mut self, pct: u64) -> bool {
        self.range(0, 99) < pct
    }
}

/// Received packet with the given arrival time and size.
pub fn pkt(seq: u16, recv: u64, size: u32) -> MediaPacket {
    MediaPacket {
        seq,
        ssrc: 0x5eed,
        payload_type: 96,
        marker: false,
        send_ts_us: recv,
        recv_ts_us: Some(recv),
        size_bytes: size,
    }
}

/// Up to `max_len` packets with bursty nondecreasing arrivals.
pub fn random_arrivals(rng: &mut Rng, max_len: u64, max_gap: u64, max_size: u32) -> StreamTrace {
    let n = rng.range(1, max_len);
    let mut t = rng.range(0, 1000);
    let packets = (0..n)
        .map(|i| {
            if !rng.chance(30) {
                t += rng.range(0, max_gap);
            }
            pkt(i as u16, t, rng.range(1, max_size as u64) as u32)
        })
        .collect();
    StreamTrace::new(StreamKind::Video, packets)
}

/// Departures `(seq, ts)` and drops `(seq, reason)` of a shaper run.
#[derive(Debug, PartialEq, Eq)]
pub struct Outcome {
    pub departures: Vec<(u16, u64)>,
    pub drops: Vec<(u16, DropReason)>,
}

pub fn outcome_of(r: &rtp_shaper::shaper::ShapeResult) -> Outcome {
    Outcome {
        departures: r
            .shaped
            .packets
            .iter()
            .map(|p| (p.seq, p.recv_ts_us.unwrap()))
            .collect(),
        drops: r.dropped.iter().map(|(p, why)| (p.seq, *why)).collect(),
    }
}

/// Leaky bucket, one microsecond per step. At each instant the drain tick is
/// served first, then that instant's arrivals in trace order.
pub fn brute_leaky(trace: &StreamTrace, cfg: &LeakyBucketConfig) -> Outcome {
    let arr: Vec<(u16, u64)> = trace
        .packets
        .iter()
        .map(|p| (p.seq, p.recv_ts_us.unwrap()))
        .collect();
    let mut out = Outcome {
        departures: vec![],
        drops: vec![],
    };
    let Some(&(_, start)) = arr.first() else {
        return out;
    };
    let mut queue: VecDeque<u16> = VecDeque::new();
    let mut tick: Option<u64> = None;
    let mut next = 0;
    let mut t = start;
    while next < arr.len() || !queue.is_empty() {
        if tick == Some(t) {
            match queue.pop_front() {
                Some(s) => {
                    out.departures.push((s, t));
                    tick = Some(t + cfg.drain_interval_us);
                }
                None => tick = None,
            }
        }
        while next < arr.len() && arr[next].1 == t {
            let s = arr[next].0;
            next += 1;
            if tick.is_none() {
                out.departures.push((s, t));
                tick = Some(t + cfg.drain_interval_us);
            } else if queue.len() < cfg.capacity_packets as usize {
                queue.push_back(s);
            } else {
                out.drops.push((s, DropReason::BucketFull));
            }
        }
        t += 1;
    }
    out
}

/// Token bucket, one microsecond per step. Credit accrues in units of
/// `1 / (den * 10^6)` tokens; a full bucket discards leftover credit. At
/// each instant queued packets leave first, then arrivals are handled.
pub fn brute_token(trace: &StreamTrace, cfg: &TokenBucketConfig) -> Outcome {
    let arr: Vec<(u16, u64, u64)> = trace
        .packets
        .iter()
        .map(|p| (p.seq, p.recv_ts_us.unwrap(), p.size_bytes as u64))
        .collect();
    let mut out = Outcome {
        departures: vec![],
        drops: vec![],
    };
    let Some(&(_, start, _)) = arr.first() else {
        return out;
    };
    let Rate { num, den } = cfg.rate;
    let unit = den as u128 * 1_000_000;
    let mut tokens = cfg.initial_tokens;
    let mut credit = 0u128;
    let mut queue: VecDeque<(u16, u64)> = VecDeque::new();
    let mut queued = 0u64;
    let mut next = 0;
    let mut t = start;
    while next < arr.len() || !queue.is_empty() {
        if t > start && tokens < cfg.capacity_tokens {
            credit += num as u128;
            tokens += (credit / unit) as u64;
            credit %= unit;
            if tokens >= cfg.capacity_tokens {
                tokens = cfg.capacity_tokens;
                credit = 0;
            }
        }
        while let Some(&(s, size)) = queue.front() {
            if tokens < size {
                break;
            }
            tokens -= size;
            queued -= size;
            queue.pop_front();
            out.departures.push((s, t));
        }
        while next < arr.len() && arr[next].1 == t {
            let (s, _, size) = arr[next];
            next += 1;
            if cfg.queue_limit_bytes.is_some_and(|lim| queued + size > lim) {
                out.drops.push((s, DropReason::QueueFull));
            } else if queue.is_empty() && tokens >= size {
                tokens -= size;
                out.departures.push((s, t));
            } else {
                queued += size;
                queue.push_back((s, size));
            }
        }
        t += 1;
    }
    out
}

pub fn random_leaky(rng: &mut Rng) -> (StreamTrace, LeakyBucketConfig) {
    let cfg = LeakyBucketConfig::new(rng.range(1, 20) as u32, rng.range(1, 5000));
    let gap = cfg.drain_interval_us * rng.range(1, 3);
    (random_arrivals(rng, 200, gap, 1500), cfg)
}

pub fn random_token(rng: &mut Rng) -> (StreamTrace, TokenBucketConfig) {
    let capacity = rng.range(1500, 6000);
    let rate = Rate::new(rng.range(100_000, 3_000_000), rng.range(1, 7));
    let cfg = TokenBucketConfig {
        rate,
        capacity_tokens: capacity,
        initial_tokens: rng.range(0, capacity),
        queue_limit_bytes: if rng.chance(50) {
            Some(rng.range(1500, 20_000))
        } else {
            None
        },
    };
    let mean_gap = 1500 * 1_000_000 * rate.den / rate.num;
    (random_arrivals(rng, 200, 2 * mean_gap + 1, 1500), cfg)
}

/// Ethernet/IPv4/UDP frame carrying one RTP packet with a zeroed payload.
pub fn rtp_frame(
    seq: u16,
    ssrc: u32,
    payload_type: u8,
    payload_len: usize,
    dst_port: u16,
) -> Vec<u8> {
    let mut rtp = vec![0x80, payload_type & 0x7f];
    rtp.extend_from_slice(&seq.to_be_bytes());
    rtp.extend_from_slice(&160u32.to_be_bytes());
    rtp.extend_from_slice(&ssrc.to_be_bytes());
    rtp.resize(12 + payload_len, 0);
    udp_frame(&rtp, dst_port)
}

pub fn udp_frame(payload: &[u8], dst_port: u16) -> Vec<u8> {
    let udp_len = 8 + payload.len();
    let mut f = Vec::new();
    f.extend_from_slice(&[0x00, 0x11, 0x22, 0x33, 0x44, 0x55]);
    f.extend_from_slice(&[0x66, 0x77, 0x88, 0x99, 0xaa, 0xbb]);
    f.extend_from_slice(&0x0800u16.to_be_bytes());
    f.extend_from_slice(&[0x45, 0x00]);
    f.extend_from_slice(&((20 + udp_len) as u16).to_be_bytes());
    f.extend_from_slice(&[0, 0, 0x40, 0x00, 64, 17, 0, 0]);
    f.extend_from_slice(&[10, 0, 0, 1, 10, 0, 0, 2]);
    f.extend_from_slice(&5004u16.to_be_bytes());
    f.extend_from_slice(&dst_port.to_be_bytes());
    f.extend_from_slice(&(udp_len as u16).to_be_bytes());
    f.extend_from_slice(&[0, 0]);
    f.extend_from_slice(payload);
    f
}

/// Classic little-endian capture with Ethernet link type; records are
/// `(seconds, microseconds, frame)`.
pub fn pcap_file(records: &[(u32, u32, Vec<u8>)]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&0xa1b2c3d4u32.to_le_bytes());
    b.extend_from_slice(&2u16.to_le_bytes());
    b.extend_from_slice(&4u16.to_le_bytes());
    b.extend_from_slice(&[0; 8]);
    b.extend_from_slice(&65535u32.to_le_bytes());
    b.extend_from_slice(&1u32.to_le_bytes());
    for (sec, usec, frame) in records {
        b.extend_from_slice(&sec.to_le_bytes());
        b.extend_from_slice(&usec.to_le_bytes());
        b.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        b.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        b.extend_from_slice(frame);
    }
    b
}
