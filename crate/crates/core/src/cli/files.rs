//! Result and metric CSV formats written by the CLI.

use std::fmt::Write;

use crate::metrics::{fmt_decimal, ComparisonReport, MetricsReport};
use crate::model::MediaPacket;
use crate::shaper::{DropReason, OccupancySample};

pub const DROPS_HEADER: &str = "seq,ssrc,ts_us,reason";
pub const OCCUPANCY_HEADER: &str = "ts_us,queued_packets,queued_bytes,tokens";

pub fn write_drops_csv(drops: &[(MediaPacket, DropReason)]) -> String {
    let mut s = format!("{DROPS_HEADER}\n");
    for (p, reason) in drops {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            p.seq,
            p.ssrc,
            p.recv_ts_us.unwrap_or(p.send_ts_us),
            reason
        );
    }
    s
}

pub fn write_occupancy_csv(samples: &[OccupancySample]) -> String {
    let mut s = String::with_capacity(24 * (samples.len() + 1));
    s.push_str(OCCUPANCY_HEADER);
    s.push('\n');
    for o in samples {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            o.ts_us, o.queued_packets, o.queued_bytes, o.tokens
        );
    }
    s
}

pub fn read_occupancy_csv(text: &str) -> Result<Vec<OccupancySample>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(OCCUPANCY_HEADER) {
        return Err(format!(
            "occupancy CSV: expected header `{OCCUPANCY_HEADER}`"
        ));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let v: Vec<u64> = l
                .split(',')
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| format!("occupancy CSV row {}: cannot parse `{l}`", i + 1))?;
            match v[..] {
                [ts_us, queued_packets, queued_bytes, tokens] => Ok(OccupancySample {
                    ts_us,
                    queued_packets,
                    queued_bytes,
                    tokens,
                }),
                _ => Err(format!("occupancy CSV row {}: expected 4 fields", i + 1)),
            }
        })
        .collect()
}

pub fn summary_csv(lines: &[(String, String)]) -> String {
    let mut s = String::from("metric,value\n");
    for (k, v) in lines {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

/// Per-series CSVs for one report: `(file suffix, contents)`.
pub fn metrics_files(m: &MetricsReport) -> Vec<(&'static str, String)> {
    let mut jitter = String::from("index,jitter_us\n");
    if let Ok(j) = &m.jitter {
        for (i, v) in &j.series {
            let _ = writeln!(jitter, "{i},{}", fmt_decimal(v));
        }
    }
    let mut pdv = String::from("index,pdv_us\n");
    if let Ok(p) = &m.pdv {
        for (i, v) in p.per_packet_us.iter().enumerate() {
            let _ = writeln!(pdv, "{i},{v}");
        }
    }
    let mut tp = String::from("window_start_us,bytes\n");
    for (t, b) in &m.throughput_series {
        let _ = writeln!(tp, "{t},{b}");
    }
    vec![
        ("summary.csv", summary_csv(&m.summary_lines())),
        ("jitter.csv", jitter),
        ("pdv.csv", pdv),
        ("throughput.csv", tp),
    ]
}

pub fn comparison_csv(c: &ComparisonReport) -> String {
    summary_csv(&c.summary_lines())
}
