use thiserror::Error;

use super::{validate_trace, MediaPacket, StreamKind, StreamTrace, Violation};

pub const TRACE_HEADER: &str = "seq,ssrc,payload_type,marker,send_ts_us,recv_ts_us,size_bytes";

const COLUMNS: [&str; 7] = [
    "seq",
    "ssrc",
    "payload_type",
    "marker",
    "send_ts_us",
    "recv_ts_us",
    "size_bytes",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CsvError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("row {row}, column {column}: cannot parse `{value}`")]
    Parse {
        row: usize,
        column: &'static str,
        value: String,
    },
    #[error("trace invalid: {}", fmt_violations(.0))]
    Validation(Vec<Violation>),
}

fn fmt_violations(v: &[Violation]) -> String {
    let shown: Vec<String> = v.iter().take(5).map(|v| v.to_string()).collect();
    let mut s = shown.join("; ");
    if v.len() > 5 {
        s.push_str(&format!("; ... ({} total)", v.len()));
    }
    s
}

/// Serializes a trace to the canonical CSV form (ASCII, LF line endings).
pub fn write_trace_csv(trace: &StreamTrace) -> Vec<u8> {
    use std::fmt::Write;

    let mut s = String::with_capacity(32 * (trace.len() + 1));
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for p in &trace.packets {
        let _ = write!(
            s,
            "{},{},{},{},{},",
            p.seq, p.ssrc, p.payload_type, p.marker as u8, p.send_ts_us
        );
        if let Some(r) = p.recv_ts_us {
            let _ = write!(s, "{r}");
        }
        let _ = writeln!(s, ",{}", p.size_bytes);
    }
    s.into_bytes()
}

/// Parses the output of [`write_trace_csv`] and validates the result.
pub fn read_trace_csv(bytes: &[u8], kind: StreamKind) -> Result<StreamTrace, CsvError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CsvError::Format {
        line: 1 + bytes[..e.valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count(),
        msg: "input is not ASCII".into(),
    })?;

    let mut lines = text.split('\n');
    match lines.next() {
        Some(h) if h.trim_end_matches('\r') == TRACE_HEADER => {}
        Some(h) => {
            return Err(CsvError::Format {
                line: 1,
                msg: format!("expected header `{TRACE_HEADER}`, found `{h}`"),
            })
        }
        None => unreachable!("split yields at least one item"),
    }

    let mut packets = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        let row = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != COLUMNS.len() {
            return Err(CsvError::Format {
                line: row + 1,
                msg: format!("expected {} fields, found {}", COLUMNS.len(), fields.len()),
            });
        }
        let int = |col: usize| -> Result<u64, CsvError> {
            fields[col].parse::<u64>().map_err(|_| CsvError::Parse {
                row,
                column: COLUMNS[col],
                value: fields[col].to_string(),
            })
        };
        let ranged = |col: usize, max: u64| -> Result<u64, CsvError> {
            let v = int(col)?;
            if v > max {
                return Err(CsvError::Parse {
                    row,
                    column: COLUMNS[col],
                    value: fields[col].to_string(),
                });
            }
            Ok(v)
        };

        let marker = match fields[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(CsvError::Parse {
                    row,
                    column: COLUMNS[3],
                    value: other.to_string(),
                })
            }
        };
        let recv_ts_us = if fields[5].is_empty() {
            None
        } else {
            Some(int(5)?)
        };
        packets.push(MediaPacket {
            seq: ranged(0, u16::MAX as u64)? as u16,
            ssrc: ranged(1, u32::MAX as u64)? as u32,
            payload_type: ranged(2, 0x7f)? as u8,
            marker,
            send_ts_us: int(4)?,
            recv_ts_us,
            size_bytes: ranged(6, u32::MAX as u64)? as u32,
        });
    }

    let trace = StreamTrace::new(kind, packets);
    let violations = validate_trace(&trace);
    if !violations.is_empty() {
        return Err(CsvError::Validation(violations));
    }
    Ok(trace)
}
