//! Traffic shapers that sit after the RTP receive path.
//!
//! Both shapers are exact discrete-event simulations over integer
//! microseconds. They take a received trace (arrival timestamps present) and
//! return the shaped trace with departure times written into
//! `recv_ts_us`, the packets they dropped, and an occupancy sample after
//! every event.

mod leaky;
mod token;

pub use self::leaky::{leaky_bucket_shape, LeakyBucketConfig};
pub use self::token::{token_bucket_shape, Rate, TokenBucketConfig};

use std::fmt;

use thiserror::Error;

use crate::model::{validate_trace, MediaPacket, StreamTrace, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OccupancySample {
    pub ts_us: u64,
    pub queued_packets: u64,
    pub queued_bytes: u64,
    /// Always 0 for the leaky bucket.
    pub tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    BucketFull,
    QueueFull,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::BucketFull => "bucket full",
            DropReason::QueueFull => "queue full",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DropReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bucket full" => Ok(DropReason::BucketFull),
            "queue full" => Ok(DropReason::QueueFull),
            other => Err(format!("unknown drop reason `{other}`")),
        }
    }
}

/// One shaper stage and its parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageConfig {
    Leaky(LeakyBucketConfig),
    Token(TokenBucketConfig),
}

impl StageConfig {
    pub fn name(&self) -> &'static str {
        match self {
            StageConfig::Leaky(_) => "leaky",
            StageConfig::Token(_) => "token",
        }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        match self {
            StageConfig::Leaky(c) => c.validate(),
            StageConfig::Token(c) => c.validate(),
        }
    }

    pub fn shape(&self, trace: &StreamTrace) -> Result<ShapeResult, ShapeError> {
        match self {
            StageConfig::Leaky(c) => leaky_bucket_shape(trace, c),
            StageConfig::Token(c) => token_bucket_shape(trace, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeResult {
    /// The stage that produced this result.
    pub stage: StageConfig,
    pub shaped: StreamTrace,
    /// Dropped packets as they arrived (arrival time in `recv_ts_us`).
    pub dropped: Vec<(MediaPacket, DropReason)>,
    pub occupancy: Vec<OccupancySample>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("shaping precondition: packet {index} has no arrival timestamp")]
    MissingArrival { index: usize },
    #[error("shaping precondition: input trace invalid ({})", .0.first().map(|v| v.to_string()).unwrap_or_default())]
    InvalidTrace(Vec<Violation>),
    #[error("shaping precondition: packet {index} is {size} bytes, larger than the bucket capacity of {capacity} tokens")]
    OversizePacket {
        index: usize,
        size: u32,
        capacity: u64,
    },
    #[error("invalid shaper config: {0}")]
    InvalidConfig(String),
    #[error("stage {index}: {source}")]
    Stage {
        index: usize,
        #[source]
        source: Box<ShapeError>,
    },
}

/// Checks the shared shaper preconditions and returns the arrival times.
fn arrivals(trace: &StreamTrace) -> Result<Vec<u64>, ShapeError> {
    let ts = trace
        .packets
        .iter()
        .enumerate()
        .map(|(index, p)| p.recv_ts_us.ok_or(ShapeError::MissingArrival { index }))
        .collect::<Result<Vec<_>, _>>()?;
    let violations = validate_trace(trace);
    if !violations.is_empty() {
        return Err(ShapeError::InvalidTrace(violations));
    }
    Ok(ts)
}

fn departed(p: &MediaPacket, at: u64) -> MediaPacket {
    MediaPacket {
        recv_ts_us: Some(at),
        ..*p
    }
}

/// Runs `trace` through each stage in order; the departures of one stage are
/// the arrivals of the next. Returns the final trace and every stage result.
pub fn run_pipeline(
    stages: &[StageConfig],
    trace: &StreamTrace,
) -> Result<(StreamTrace, Vec<ShapeResult>), ShapeError> {
    let mut current = trace.clone();
    let mut results = Vec::with_capacity(stages.len());
    for (index, stage) in stages.iter().enumerate() {
        let result = stage.shape(&current).map_err(|e| ShapeError::Stage {
            index,
            source: Box::new(e),
        })?;
        current = result.shaped.clone();
        results.push(result);
    }
    Ok((current, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StreamKind;

    fn received(arrivals: &[(u64, u32)]) -> StreamTrace {
        let packets = arrivals
            .iter()
            .enumerate()
            .map(|(i, &(t, size))| MediaPacket {
                seq: i as u16,
                ssrc: 7,
                payload_type: 96,
                marker: false,
                send_ts_us: t,
                recv_ts_us: Some(t),
                size_bytes: size,
            })
            .collect();
        StreamTrace::new(StreamKind::Audio, packets)
    }

    #[test]
    fn empty_pipeline_is_identity() {
        let t = received(&[(0, 10), (5, 10)]);
        let (out, results) = run_pipeline(&[], &t).unwrap();
        assert_eq!(out, t);
        assert!(results.is_empty());
    }

    #[test]
    fn single_stage_matches_direct_call() {
        let t = received(&[(0, 125), (3000, 125), (4000, 125), (41000, 125)]);
        let cfg = LeakyBucketConfig::new(15, 20_000);
        let direct = leaky_bucket_shape(&t, &cfg).unwrap();
        let (out, results) = run_pipeline(&[StageConfig::Leaky(cfg)], &t).unwrap();
        assert_eq!(results, vec![direct.clone()]);
        assert_eq!(out, direct.shaped);
    }

    #[test]
    fn fast_token_stage_after_leaky_is_noop() {
        let arrivals: Vec<(u64, u32)> = (0..50u64)
            .map(|i| (i * 20_000 + (i * 7919) % 15_000, 125))
            .collect();
        let t = received(&arrivals);
        let leaky = StageConfig::Leaky(LeakyBucketConfig::new(15, 20_000));
        // 125 B every 20 ms is 6250 B/s; give the token bucket ten times that.
        let token = StageConfig::Token(TokenBucketConfig::new(Rate::new(62_500, 1), 1500));
        let (out, results) = run_pipeline(&[leaky, token], &t).unwrap();
        assert_eq!(out, results[0].shaped);
        assert!(results[1].dropped.is_empty());
    }

    #[test]
    fn stage_errors_carry_index() {
        let t = received(&[(0, 2000)]);
        let stages = [
            StageConfig::Leaky(LeakyBucketConfig::new(1, 10)),
            StageConfig::Token(TokenBucketConfig::new(Rate::new(100, 1), 1000)),
        ];
        let err = run_pipeline(&stages, &t).unwrap_err();
        assert!(matches!(err, ShapeError::Stage { index: 1, .. }), "{err}");
    }

    #[test]
    fn missing_arrival_is_precondition_error() {
        let mut t = received(&[(0, 10)]);
        t.packets[0].recv_ts_us = None;
        let err = leaky_bucket_shape(&t, &LeakyBucketConfig::new(1, 10)).unwrap_err();
        assert_eq!(err, ShapeError::MissingArrival { index: 0 });
    }
}
