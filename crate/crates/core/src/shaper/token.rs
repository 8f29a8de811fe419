use std::collections::{HashSet, VecDeque};

use num_integer::Integer;

use super::{
    arrivals, departed, DropReason, OccupancySample, ShapeError, ShapeResult, StageConfig,
};
use crate::model::{MediaPacket, StreamTrace};

const US_PER_SEC: u128 = 1_000_000;

/// Exact token rate in tokens (bytes) per second, `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rate {
    pub num: u64,
    pub den: u64,
}

impl Rate {
    /// Builds a reduced rate. Zero denominators are left for `validate` to
    /// reject.
    pub fn new(num: u64, den: u64) -> Self {
        let g = num.gcd(&den).max(1);
        Rate {
            num: num / g,
            den: den / g,
        }
    }

    /// Reduces `num / den` computed in wide arithmetic; `None` when the
    /// reduced terms do not fit 64 bits.
    pub fn from_u128(num: u128, den: u128) -> Option<Self> {
        let g = num.gcd(&den).max(1);
        Some(Rate {
            num: u64::try_from(num / g).ok()?,
            den: u64::try_from(den / g).ok()?,
        })
    }

    /// Upper bound on tokens accrued over `dt_us`: `ceil(dt * num / (den * 10^6))`.
    pub fn ceil_tokens(&self, dt_us: u64) -> u128 {
        (dt_us as u128 * self.num as u128).div_ceil(self.den as u128 * US_PER_SEC)
    }
}

impl std::fmt::Display for Rate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Byte-based token bucket: one token is one byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenBucketConfig {
    pub rate: Rate,
    pub capacity_tokens: u64,
    pub initial_tokens: u64,
    /// `None` = unbounded queue.
    pub queue_limit_bytes: Option<u64>,
}

impl TokenBucketConfig {
    /// Full bucket, unbounded queue.
    pub fn new(rate: Rate, capacity_tokens: u64) -> Self {
        TokenBucketConfig {
            rate,
            capacity_tokens,
            initial_tokens: capacity_tokens,
            queue_limit_bytes: None,
        }
    }

    /// Sizes a bucket for `trace`: rate at `rate_percent`% of the trace's
    /// mean send rate and capacity of `capacity_frames` mean frames, where a
    /// frame is the group of packets sharing one send timestamp.
    ///
    /// Returns `None` when the trace has fewer than two frames or the rate
    /// does not fit 64-bit terms.
    pub fn sized_for(trace: &StreamTrace, rate_percent: u64, capacity_frames: u64) -> Option<Self> {
        let (bytes, frames, span) = frame_stats(trace)?;
        // bytes/frames per frame, (frames - 1) frames per `span` microseconds.
        let num = bytes as u128 * (frames as u128 - 1) * US_PER_SEC * rate_percent as u128;
        let den = frames as u128 * span as u128 * 100;
        let rate = Rate::from_u128(num, den)?;
        let capacity = (bytes as u128 * capacity_frames as u128 / frames as u128) as u64;
        Some(Self::new(rate, capacity))
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        let err = |m: &str| Err(ShapeError::InvalidConfig(m.into()));
        if self.rate.num == 0 || self.rate.den == 0 {
            return err("rate must be a positive ratio");
        }
        if self.capacity_tokens < 1 {
            return err("capacity_tokens must be >= 1");
        }
        if self.initial_tokens > self.capacity_tokens {
            return err("initial_tokens must not exceed capacity_tokens");
        }
        if self.queue_limit_bytes == Some(0) {
            return err("queue_limit_bytes must be >= 1 when set");
        }
        Ok(())
    }
}

/// Total bytes, number of distinct send instants, and the span between the
/// first and last one.
fn frame_stats(trace: &StreamTrace) -> Option<(u64, u64, u64)> {
    let sends: HashSet<u64> = trace.packets.iter().map(|p| p.send_ts_us).collect();
    let frames = sends.len() as u64;
    let span = sends.iter().max()? - sends.iter().min()?;
    if frames < 2 || span == 0 {
        return None;
    }
    Some((trace.total_bytes(), frames, span))
}

/// Token level with the sub-token remainder carried between events.
///
/// `frac` counts accrued credit in units of `1 / (den * 10^6)` tokens.
struct Bucket {
    rate: Rate,
    capacity: u64,
    tokens: u64,
    frac: u128,
    at: u64,
}

impl Bucket {
    fn unit(&self) -> u128 {
        self.rate.den as u128 * US_PER_SEC
    }

    fn advance(&mut self, t: u64) {
        let dt = (t - self.at) as u128;
        self.at = t;
        if self.tokens >= self.capacity {
            return;
        }
        let total = dt
            .checked_mul(self.rate.num as u128)
            .and_then(|c| c.checked_add(self.frac));
        let Some(total) = total else {
            self.tokens = self.capacity;
            self.frac = 0;
            return;
        };
        let unit = self.unit();
        let tokens = self.tokens as u128 + total / unit;
        if tokens >= self.capacity as u128 {
            self.tokens = self.capacity;
            self.frac = 0;
        } else {
            self.tokens = tokens as u64;
            self.frac = total % unit;
        }
    }

    /// Earliest time at which `need` tokens are available (`need <= capacity`).
    fn ready_at(&self, need: u64) -> u64 {
        if self.tokens >= need {
            return self.at;
        }
        let missing = (need - self.tokens) as u128 * self.unit() - self.frac;
        let dt = missing.div_ceil(self.rate.num as u128);
        self.at
            .saturating_add(u64::try_from(dt).unwrap_or(u64::MAX))
    }
}

/// Shapes `trace` through a byte-based token bucket.
///
/// Packets wait in a FIFO; the head leaves as soon as the bucket holds at
/// least `size_bytes` tokens and consumes that many. A packet that would push
/// the queue past `queue_limit_bytes` is dropped on arrival. Every packet
/// must fit in the bucket (`size_bytes <= capacity_tokens`).
pub fn token_bucket_shape(
    trace: &StreamTrace,
    cfg: &TokenBucketConfig,
) -> Result<ShapeResult, ShapeError> {
    cfg.validate()?;
    let arrival_ts = arrivals(trace)?;
    if let Some((index, p)) = trace
        .packets
        .iter()
        .enumerate()
        .find(|(_, p)| p.size_bytes as u64 > cfg.capacity_tokens)
    {
        return Err(ShapeError::OversizePacket {
            index,
            size: p.size_bytes,
            capacity: cfg.capacity_tokens,
        });
    }

    let mut bucket = Bucket {
        rate: cfg.rate,
        capacity: cfg.capacity_tokens,
        tokens: cfg.initial_tokens,
        frac: 0,
        at: arrival_ts.first().copied().unwrap_or(0),
    };
    let mut queue: VecDeque<MediaPacket> = VecDeque::new();
    let mut queued_bytes = 0u64;
    let mut shaped = Vec::with_capacity(trace.len());
    let mut dropped = Vec::new();
    let mut occupancy = Vec::with_capacity(trace.len() * 2);
    let mut next = 0usize;

    loop {
        let head_ready = queue.front().map(|p| bucket.ready_at(p.size_bytes as u64));
        let arrival = arrival_ts.get(next).copied();
        let t = match (head_ready, arrival) {
            (Some(d), a) if a.is_none_or(|a| d <= a) => {
                bucket.advance(d);
                let p = queue.pop_front().unwrap();
                queued_bytes -= p.size_bytes as u64;
                bucket.tokens -= p.size_bytes as u64;
                shaped.push(departed(&p, d));
                d
            }
            (_, Some(a)) => {
                let p = &trace.packets[next];
                next += 1;
                bucket.advance(a);
                let size = p.size_bytes as u64;
                if cfg
                    .queue_limit_bytes
                    .is_some_and(|lim| queued_bytes + size > lim)
                {
                    dropped.push((*p, DropReason::QueueFull));
                } else if queue.is_empty() && bucket.tokens >= size {
                    bucket.tokens -= size;
                    shaped.push(departed(p, a));
                } else {
                    queued_bytes += size;
                    queue.push_back(*p);
                }
                a
            }
            _ => break,
        };
        occupancy.push(OccupancySample {
            ts_us: t,
            queued_packets: queue.len() as u64,
            queued_bytes,
            tokens: bucket.tokens,
        });
    }

    Ok(ShapeResult {
        stage: StageConfig::Token(*cfg),
        shaped: StreamTrace {
            kind: trace.kind,
            packets: shaped,
            clock_resolution_us: trace.clock_resolution_us,
        },
        dropped,
        occupancy,
    })
}
