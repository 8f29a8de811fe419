use std::collections::VecDeque;

use super::{
    arrivals, departed, DropReason, OccupancySample, ShapeError, ShapeResult, StageConfig,
};
use crate::model::{MediaPacket, StreamTrace};

/// Packet-counting leaky bucket: a bounded FIFO drained one packet per
/// `drain_interval_us`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LeakyBucketConfig {
    pub capacity_packets: u32,
    pub drain_interval_us: u64,
}

impl LeakyBucketConfig {
    pub const DEFAULT_CAPACITY: u32 = 15;

    pub fn new(capacity_packets: u32, drain_interval_us: u64) -> Self {
        LeakyBucketConfig {
            capacity_packets,
            drain_interval_us,
        }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        if self.capacity_packets < 1 {
            return Err(ShapeError::InvalidConfig(
                "capacity_packets must be >= 1".into(),
            ));
        }
        if self.drain_interval_us < 1 {
            return Err(ShapeError::InvalidConfig(
                "drain_interval_us must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

struct Leaky<'a> {
    cfg: &'a LeakyBucketConfig,
    queue: VecDeque<MediaPacket>,
    queued_bytes: u64,
    /// Next drain tick; `None` while the clock is idle.
    next_tick: Option<u64>,
    shaped: Vec<MediaPacket>,
    occupancy: Vec<OccupancySample>,
}

impl Leaky<'_> {
    fn sample(&mut self, ts_us: u64) {
        self.occupancy.push(OccupancySample {
            ts_us,
            queued_packets: self.queue.len() as u64,
            queued_bytes: self.queued_bytes,
            tokens: 0,
        });
    }

    /// Processes every drain tick at or before `until`.
    fn drain_until(&mut self, until: u64) {
        while let Some(tick) = self.next_tick.filter(|&t| t <= until) {
            match self.queue.pop_front() {
                Some(p) => {
                    self.queued_bytes -= p.size_bytes as u64;
                    self.shaped.push(departed(&p, tick));
                    self.next_tick = Some(tick + self.cfg.drain_interval_us);
                    self.sample(tick);
                }
                None => self.next_tick = None,
            }
        }
    }
}

/// Shapes `trace` through a leaky bucket.
///
/// A packet arriving while the drain clock is idle leaves immediately and
/// starts the clock; otherwise it waits in the bucket, or is dropped when the
/// bucket already holds `capacity_packets`.
pub fn leaky_bucket_shape(
    trace: &StreamTrace,
    cfg: &LeakyBucketConfig,
) -> Result<ShapeResult, ShapeError> {
    cfg.validate()?;
    let arrival_ts = arrivals(trace)?;

    let mut st = Leaky {
        cfg,
        queue: VecDeque::with_capacity(cfg.capacity_packets as usize),
        queued_bytes: 0,
        next_tick: None,
        shaped: Vec::with_capacity(trace.len()),
        occupancy: Vec::with_capacity(trace.len() * 2),
    };
    let mut dropped = Vec::new();

    for (p, &t) in trace.packets.iter().zip(&arrival_ts) {
        st.drain_until(t);
        if st.next_tick.is_none() {
            st.shaped.push(departed(p, t));
            st.next_tick = Some(t + cfg.drain_interval_us);
        } else if st.queue.len() < cfg.capacity_packets as usize {
            st.queued_bytes += p.size_bytes as u64;
            st.queue.push_back(*p);
        } else {
            dropped.push((*p, DropReason::BucketFull));
        }
        st.sample(t);
    }
    st.drain_until(u64::MAX);

    Ok(ShapeResult {
        stage: StageConfig::Leaky(*cfg),
        shaped: StreamTrace {
            kind: trace.kind,
            packets: st.shaped,
            clock_resolution_us: trace.clock_resolution_us,
        },
        dropped,
        occupancy: st.occupancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StreamKind;

    fn burst(times: &[u64]) -> StreamTrace {
        StreamTrace::new(
            StreamKind::Audio,
            times
                .iter()
                .enumerate()
                .map(|(i, &t)| MediaPacket {
                    seq: i as u16,
                    ssrc: 1,
                    payload_type: 0,
                    marker: false,
                    send_ts_us: 0,
                    recv_ts_us: Some(t),
                    size_bytes: 125,
                })
                .collect(),
        )
    }

    #[test]
    fn empty_trace() {
        let r = leaky_bucket_shape(&burst(&[]), &LeakyBucketConfig::new(15, 20_000)).unwrap();
        assert!(r.shaped.is_empty());
        assert!(r.dropped.is_empty());
        assert!(r.occupancy.is_empty());
    }

    // Hand-run: packet 0 leaves at once and arms the clock; 1-3 fill the
    // bucket; 4 overflows; ticks at 10k/20k/30k drain the bucket.
    #[test]
    fn burst_of_five_capacity_three() {
        let r = leaky_bucket_shape(&burst(&[0; 5]), &LeakyBucketConfig::new(3, 10_000)).unwrap();
        let deps: Vec<u64> = r
            .shaped
            .packets
            .iter()
            .map(|p| p.recv_ts_us.unwrap())
            .collect();
        assert_eq!(deps, vec![0, 10_000, 20_000, 30_000]);
        assert_eq!(r.dropped.len(), 1);
        assert_eq!(r.dropped[0].0.seq, 4);
        assert_eq!(r.dropped[0].1, DropReason::BucketFull);
        let levels: Vec<u64> = r.occupancy.iter().map(|s| s.queued_packets).collect();
        assert_eq!(levels, vec![0, 1, 2, 3, 3, 2, 1, 0]);
        assert_eq!(levels.iter().max(), Some(&3));
    }

    #[test]
    fn idle_clock_restarts_on_arrival() {
        let r = leaky_bucket_shape(
            &burst(&[0, 50_000, 50_001]),
            &LeakyBucketConfig::new(3, 10_000),
        )
        .unwrap();
        let deps: Vec<u64> = r
            .shaped
            .packets
            .iter()
            .map(|p| p.recv_ts_us.unwrap())
            .collect();
        assert_eq!(deps, vec![0, 50_000, 60_000]);
    }

    #[test]
    fn arrival_on_tick_with_empty_queue_departs_at_tick() {
        let r =
            leaky_bucket_shape(&burst(&[0, 10_000]), &LeakyBucketConfig::new(1, 10_000)).unwrap();
        let deps: Vec<u64> = r
            .shaped
            .packets
            .iter()
            .map(|p| p.recv_ts_us.unwrap())
            .collect();
        assert_eq!(deps, vec![0, 10_000]);
    }

    #[test]
    fn zero_capacity_rejected() {
        let err = leaky_bucket_shape(&burst(&[0]), &LeakyBucketConfig::new(0, 10)).unwrap_err();
        assert!(matches!(err, ShapeError::InvalidConfig(_)));
    }
}
