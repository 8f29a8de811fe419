//! Stream measurements: RFC 3550 interarrival jitter, min-referenced packet
//! delay variation, sequence loss and windowed throughput, plus the
//! before/after comparison of a shaping run.
//!
//! Everything is computed in integer or exact rational arithmetic; decimal
//! rendering happens only in [`fmt_decimal`].

mod exact;

pub use self::exact::{fmt_decimal, int, ratio};

use std::collections::{HashMap, HashSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use thiserror::Error;

use self::exact::DyadicJitter;
use crate::model::{MediaPacket, StreamTrace};
use crate::shaper::{ShapeResult, StageConfig};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{metric}: insufficient data (need at least {needed} packets, got {got})")]
    InsufficientData {
        metric: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("{metric}: packet {index} has no receive timestamp")]
    MissingReceive { metric: &'static str, index: usize },
    #[error("throughput window must be >= 1 us")]
    ZeroWindow,
    #[error("inconsistent input: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct JitterReport {
    /// `(packet index, running jitter in us)` for packets 1..n.
    pub series: Vec<(usize, BigRational)>,
    pub final_us: BigRational,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdvStats {
    pub min: u64,
    pub max: u64,
    pub mean: BigRational,
    pub p50: u64,
    pub p99: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdvReport {
    pub per_packet_us: Vec<u64>,
    pub stats: PdvStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub expected: u64,
    /// Distinct sequence numbers received.
    pub received: u64,
    pub loss_count: u64,
    pub loss_rate: BigRational,
    pub duplicates: u64,
}

fn delays(trace: &StreamTrace, metric: &'static str) -> Result<Vec<i64>, MetricsError> {
    trace
        .packets
        .iter()
        .enumerate()
        .map(|(index, p)| {
            p.delay_us()
                .ok_or(MetricsError::MissingReceive { metric, index })
        })
        .collect()
}

/// RFC 3550 interarrival jitter over consecutive packets in trace order,
/// with send time standing in for the RTP timestamp.
pub fn interarrival_jitter(trace: &StreamTrace) -> Result<JitterReport, MetricsError> {
    const METRIC: &str = "jitter";
    if trace.len() < 2 {
        return Err(MetricsError::InsufficientData {
            metric: METRIC,
            needed: 2,
            got: trace.len(),
        });
    }
    let transit = delays(trace, METRIC)?;
    let mut j = DyadicJitter::zero();
    let series: Vec<(usize, BigRational)> = transit
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            j.update(w[1].abs_diff(w[0]));
            (i + 1, j.to_rational())
        })
        .collect();
    let final_us = series
        .last()
        .map(|(_, v)| v.clone())
        .unwrap_or_else(BigRational::zero);
    Ok(JitterReport { series, final_us })
}

/// Nearest-rank percentile of sorted data.
fn nearest_rank(sorted: &[u64], pct: usize) -> u64 {
    let rank = (pct * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

/// One-way delay of each packet minus the minimum one-way delay of the trace.
pub fn pdv(trace: &StreamTrace) -> Result<PdvReport, MetricsError> {
    const METRIC: &str = "pdv";
    if trace.is_empty() {
        return Err(MetricsError::InsufficientData {
            metric: METRIC,
            needed: 1,
            got: 0,
        });
    }
    let d = delays(trace, METRIC)?;
    let floor = *d.iter().min().unwrap();
    let per_packet_us: Vec<u64> = d.iter().map(|&x| (x - floor) as u64).collect();

    let mut sorted = per_packet_us.clone();
    sorted.sort_unstable();
    let sum: u128 = sorted.iter().map(|&x| x as u128).sum();
    let stats = PdvStats {
        min: sorted[0],
        max: *sorted.last().unwrap(),
        mean: ratio(BigInt::from(sum), sorted.len()),
        p50: nearest_rank(&sorted, 50),
        p99: nearest_rank(&sorted, 99),
    };
    Ok(PdvReport {
        per_packet_us,
        stats,
    })
}

/// Extends 16-bit sequence numbers across wraps, each relative to the
/// previous packet in trace order.
fn extended_seqs(packets: &[MediaPacket]) -> Vec<i64> {
    let mut out = Vec::with_capacity(packets.len());
    let mut prev: Option<(u16, i64)> = None;
    for p in packets {
        let ext = match prev {
            None => p.seq as i64,
            Some((s, e)) => e + p.seq.wrapping_sub(s) as i16 as i64,
        };
        prev = Some((p.seq, ext));
        out.push(ext);
    }
    out
}

pub fn loss(trace: &StreamTrace) -> Result<LossReport, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::InsufficientData {
            metric: "loss",
            needed: 1,
            got: 0,
        });
    }
    let ext = extended_seqs(&trace.packets);
    let lo = *ext.iter().min().unwrap();
    let hi = *ext.iter().max().unwrap();
    let distinct: HashSet<i64> = ext.iter().copied().collect();
    let expected = (hi - lo + 1) as u64;
    let received = distinct.len() as u64;
    let loss_count = expected - received;
    Ok(LossReport {
        expected,
        received,
        loss_count,
        loss_rate: ratio(loss_count, expected),
        duplicates: (ext.len() - distinct.len()) as u64,
    })
}

/// Bytes per half-open window `[k * window_us, (k + 1) * window_us)` of the
/// active timestamp, from the first occupied window to the last one.
pub fn throughput(trace: &StreamTrace, window_us: u64) -> Result<Vec<(u64, u64)>, MetricsError> {
    if window_us == 0 {
        return Err(MetricsError::ZeroWindow);
    }
    let ts = trace.active_timestamps();
    let (Some(&lo), Some(&hi)) = (ts.iter().min(), ts.iter().max()) else {
        return Ok(Vec::new());
    };
    let first = lo / window_us;
    let mut bytes = vec![0u64; (hi / window_us - first + 1) as usize];
    for (t, p) in ts.iter().zip(&trace.packets) {
        bytes[(t / window_us - first) as usize] += p.size_bytes as u64;
    }
    Ok(bytes
        .into_iter()
        .enumerate()
        .map(|(k, b)| ((first + k as u64) * window_us, b))
        .collect())
}

/// All metrics for one trace. Each metric carries its own precondition
/// outcome so a short trace still yields whatever can be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub jitter: Result<JitterReport, MetricsError>,
    pub pdv: Result<PdvReport, MetricsError>,
    pub loss: Result<LossReport, MetricsError>,
    pub window_us: u64,
    pub throughput_series: Vec<(u64, u64)>,
    pub total_bytes: u64,
    pub total_packets: u64,
    pub duration_us: u64,
}

impl MetricsReport {
    pub fn pdv_max(&self) -> Option<u64> {
        self.pdv.as_ref().ok().map(|p| p.stats.max)
    }

    pub fn jitter_final(&self) -> Option<&BigRational> {
        self.jitter.as_ref().ok().map(|j| &j.final_us)
    }

    /// `metric,value` summary lines.
    pub fn summary_lines(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("packets".to_string(), self.total_packets.to_string()),
            ("bytes".to_string(), self.total_bytes.to_string()),
            ("duration_us".to_string(), self.duration_us.to_string()),
        ];
        match &self.jitter {
            Ok(j) => out.push(("jitter_final_us".into(), fmt_decimal(&j.final_us))),
            Err(_) => out.push(("jitter_final_us".into(), "insufficient-data".into())),
        }
        match &self.pdv {
            Ok(p) => {
                let s = &p.stats;
                out.push(("pdv_min_us".into(), s.min.to_string()));
                out.push(("pdv_max_us".into(), s.max.to_string()));
                out.push(("pdv_mean_us".into(), fmt_decimal(&s.mean)));
                out.push(("pdv_p50_us".into(), s.p50.to_string()));
                out.push(("pdv_p99_us".into(), s.p99.to_string()));
            }
            Err(_) => out.push(("pdv_max_us".into(), "insufficient-data".into())),
        }
        match &self.loss {
            Ok(l) => {
                out.push(("loss_expected".into(), l.expected.to_string()));
                out.push(("loss_count".into(), l.loss_count.to_string()));
                out.push(("loss_rate".into(), fmt_decimal(&l.loss_rate)));
                out.push(("duplicates".into(), l.duplicates.to_string()));
            }
            Err(_) => out.push(("loss_count".into(), "insufficient-data".into())),
        }
        out.push(("throughput_window_us".into(), self.window_us.to_string()));
        out
    }
}

pub fn measure(trace: &StreamTrace, window_us: u64) -> Result<MetricsReport, MetricsError> {
    let ts = trace.active_timestamps();
    let duration_us = match (ts.iter().min(), ts.iter().max()) {
        (Some(lo), Some(hi)) => hi - lo,
        _ => 0,
    };
    Ok(MetricsReport {
        jitter: interarrival_jitter(trace),
        pdv: pdv(trace),
        loss: loss(trace),
        window_us,
        throughput_series: throughput(trace, window_us)?,
        total_bytes: trace.total_bytes(),
        total_packets: trace.len() as u64,
        duration_us,
    })
}

/// A relative reduction, undefined when the baseline is zero.
#[derive(Debug, Clone, PartialEq)]
pub enum Reduction {
    Pct(BigRational),
    Undefined,
}

impl Reduction {
    pub fn of(before: &BigRational, after: &BigRational) -> Self {
        if before.is_zero() {
            Reduction::Undefined
        } else {
            Reduction::Pct((before - after) * int(100) / before)
        }
    }

    pub fn render(&self) -> String {
        match self {
            Reduction::Pct(v) => fmt_decimal(v),
            Reduction::Undefined => "undefined".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub before: MetricsReport,
    pub after: MetricsReport,
    /// Leading shaped packets treated as the start-up transient: for a leaky
    /// bucket, everything before the last restart of an idle drain clock.
    pub transient_packets: usize,
    /// Metrics of the shaped packets after the transient (leaky results only).
    pub after_steady: Option<MetricsReport>,
    /// Input PDV max versus shaped PDV max (post-transient for leaky).
    pub pdv_max_reduction_pct: Reduction,
    pub jitter_final_reduction_pct: Reduction,
    pub added_latency_mean_us: BigRational,
    pub added_latency_max_us: u64,
    pub drops_introduced: u64,
}

impl ComparisonReport {
    pub fn summary_lines(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let opt = |v: Option<u64>| v.map_or("insufficient-data".to_string(), |x| x.to_string());
        let optr = |v: Option<&BigRational>| v.map_or("insufficient-data".to_string(), fmt_decimal);
        out.push(("before_pdv_max_us".into(), opt(self.before.pdv_max())));
        out.push(("after_pdv_max_us".into(), opt(self.after.pdv_max())));
        if let Some(s) = &self.after_steady {
            out.push(("after_steady_pdv_max_us".into(), opt(s.pdv_max())));
        }
        out.push((
            "transient_packets".into(),
            self.transient_packets.to_string(),
        ));
        out.push((
            "before_jitter_final_us".into(),
            optr(self.before.jitter_final()),
        ));
        out.push((
            "after_jitter_final_us".into(),
            optr(self.after.jitter_final()),
        ));
        out.push((
            "pdv_max_reduction_pct".into(),
            self.pdv_max_reduction_pct.render(),
        ));
        out.push((
            "jitter_final_reduction_pct".into(),
            self.jitter_final_reduction_pct.render(),
        ));
        out.push((
            "added_latency_mean_us".into(),
            fmt_decimal(&self.added_latency_mean_us),
        ));
        out.push((
            "added_latency_max_us".into(),
            self.added_latency_max_us.to_string(),
        ));
        out.push(("drops_introduced".into(), self.drops_introduced.to_string()));
        out
    }
}

/// Index of the last departure that restarted an idle leaky-bucket clock,
/// i.e. followed its predecessor by more than one drain interval.
fn leaky_transient(shaped: &StreamTrace, drain_interval_us: u64) -> usize {
    let deps = shaped.active_timestamps();
    deps.windows(2)
        .rposition(|w| w[1] - w[0] > drain_interval_us)
        .map_or(0, |i| i + 1)
}

/// Compares the trace that entered a shaper with the shaper's output.
///
/// Shaped packets are matched to `before` by `(ssrc, seq)`; their send
/// times come from `before` and their receive times are the departures.
pub fn compare(
    before: &StreamTrace,
    result: &ShapeResult,
    window_us: u64,
) -> Result<ComparisonReport, MetricsError> {
    let drain = match &result.stage {
        StageConfig::Leaky(c) => Some(c.drain_interval_us),
        StageConfig::Token(_) => None,
    };
    compare_traces(before, &result.shaped, drain, window_us)
}

/// As [`compare`] for an output trace whose shaper is not known. With
/// `leaky_drain_us` the leaky-bucket start-up transient is split off.
pub fn compare_traces(
    before: &StreamTrace,
    shaped: &StreamTrace,
    leaky_drain_us: Option<u64>,
    window_us: u64,
) -> Result<ComparisonReport, MetricsError> {
    let arrivals: HashMap<(u32, u16), &MediaPacket> =
        before.packets.iter().map(|p| (p.id(), p)).collect();

    let mut after = shaped.clone();
    let mut added_sum = 0u128;
    let mut added_max = 0u64;
    for p in after.packets.iter_mut() {
        let Some(orig) = arrivals.get(&p.id()) else {
            return Err(MetricsError::Inconsistent(format!(
                "shaped packet (ssrc {:#x}, seq {}) not in input",
                p.ssrc, p.seq
            )));
        };
        let (Some(arr), Some(dep)) = (orig.recv_ts_us, p.recv_ts_us) else {
            return Err(MetricsError::Inconsistent(format!(
                "packet seq {} lacks arrival or departure time",
                p.seq
            )));
        };
        if dep < arr || orig.size_bytes != p.size_bytes {
            return Err(MetricsError::Inconsistent(format!(
                "packet seq {} departs before it arrives or changed size",
                p.seq
            )));
        }
        p.send_ts_us = orig.send_ts_us;
        added_sum += (dep - arr) as u128;
        added_max = added_max.max(dep - arr);
    }

    let before_m = measure(before, window_us)?;
    let after_m = measure(&after, window_us)?;

    let (transient_packets, after_steady) = match leaky_drain_us {
        Some(drain) => {
            let k = leaky_transient(&after, drain);
            let tail = StreamTrace {
                packets: after.packets[k..].to_vec(),
                ..after.clone()
            };
            (k, Some(measure(&tail, window_us)?))
        }
        None => (0, None),
    };

    let effective = after_steady.as_ref().unwrap_or(&after_m);
    let pdv_max_reduction_pct = match (before_m.pdv_max(), effective.pdv_max()) {
        (Some(b), Some(a)) => Reduction::of(&int(b), &int(a)),
        _ => Reduction::Undefined,
    };
    let jitter_final_reduction_pct = match (before_m.jitter_final(), after_m.jitter_final()) {
        (Some(b), Some(a)) => Reduction::of(b, a),
        _ => Reduction::Undefined,
    };

    let n = after.len();
    Ok(ComparisonReport {
        added_latency_mean_us: if n == 0 {
            BigRational::zero()
        } else {
            ratio(BigInt::from(added_sum), n)
        },
        added_latency_max_us: added_max,
        drops_introduced: (before.len() - n.min(before.len())) as u64,
        before: before_m,
        after: after_m,
        transient_packets,
        after_steady,
        pdv_max_reduction_pct,
        jitter_final_reduction_pct,
    })
}
