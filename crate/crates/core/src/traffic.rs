//! Synthetic sender traces and a seeded channel impairment model.
//!
//! Every random draw comes from a counter-based splitmix64: the draw for
//! item `i` starts from state `seed ^ i`, so results never depend on how many
//! draws earlier items consumed.

use std::fmt;

use thiserror::Error;

use crate::model::{MediaPacket, StreamKind, StreamTrace};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("duration {duration_us} us is shorter than one packet interval ({interval_us} us)")]
    EmptyTrace { duration_us: u64, interval_us: u64 },
}

/// splitmix64 output stream starting at `state`.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(state: u64) -> Self {
        SplitMix64 { state }
    }

    /// Stream for item `index` under `seed`.
    pub fn for_index(seed: u64, index: u64) -> Self {
        Self::new(seed ^ index)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

/// Maps a 64-bit draw onto `0..n` by multiply-shift.
fn below(x: u64, n: u64) -> u64 {
    ((x as u128 * n as u128) >> 64) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AudioGenConfig {
    pub ptime_us: u64,
    pub payload_bytes: u32,
    pub ssrc: u32,
    pub payload_type: u8,
}

impl Default for AudioGenConfig {
    fn default() -> Self {
        AudioGenConfig {
            ptime_us: 20_000,
            payload_bytes: 125,
            ssrc: 0x0000_a0d1,
            payload_type: 96,
        }
    }
}

impl AudioGenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.ptime_us < 1000 {
            return Err(GenError::InvalidConfig(format!(
                "ptime_us must be >= 1000 (got {})",
                self.ptime_us
            )));
        }
        if self.payload_bytes < 1 {
            return Err(GenError::InvalidConfig("payload_bytes must be >= 1".into()));
        }
        check_payload_type(self.payload_type)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VideoGenConfig {
    pub fps: u32,
    /// Frames per I-frame period.
    pub gop: u32,
    pub i_frame_bytes: u32,
    pub p_frame_bytes: u32,
    /// Multiplicative uniform size noise, in percent.
    pub size_jitter_pct: u32,
    pub mtu_payload_bytes: u32,
    pub ssrc: u32,
    pub payload_type: u8,
}

impl Default for VideoGenConfig {
    fn default() -> Self {
        VideoGenConfig {
            fps: 25,
            gop: 12,
            i_frame_bytes: 8000,
            p_frame_bytes: 1500,
            size_jitter_pct: 20,
            mtu_payload_bytes: 1200,
            ssrc: 0x000b_1de0,
            payload_type: 97,
        }
    }
}

impl VideoGenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InvalidConfig(m));
        if self.fps < 1 || self.fps > 1_000_000 {
            return bad(format!("fps must be in 1..=1000000 (got {})", self.fps));
        }
        if self.gop < 1 {
            return bad("gop must be >= 1".into());
        }
        if self.p_frame_bytes < 1 {
            return bad("p_frame_bytes must be >= 1".into());
        }
        if self.i_frame_bytes < self.p_frame_bytes {
            return bad("i_frame_bytes must be >= p_frame_bytes".into());
        }
        if self.size_jitter_pct > 100 {
            return bad(format!(
                "size_jitter_pct must be <= 100 (got {})",
                self.size_jitter_pct
            ));
        }
        if self.mtu_payload_bytes < 64 {
            return bad(format!(
                "mtu_payload_bytes must be >= 64 (got {})",
                self.mtu_payload_bytes
            ));
        }
        check_payload_type(self.payload_type)
    }

    /// Send time of frame `k`.
    pub fn frame_time_us(&self, k: u64) -> u64 {
        (k as u128 * 1_000_000 / self.fps as u128) as u64
    }

    /// Size of frame `k` under `seed`: the I or P mean scaled by a uniform
    /// factor in `1 ± size_jitter_pct/100`, drawn at 0.01% resolution.
    pub fn frame_size(&self, k: u64, seed: u64) -> u32 {
        let mean = if k.is_multiple_of(self.gop as u64) {
            self.i_frame_bytes
        } else {
            self.p_frame_bytes
        } as u64;
        let spread = self.size_jitter_pct as u64 * 100;
        let v =
            below(SplitMix64::for_index(seed, k).next_u64(), 2 * spread + 1) as i64 - spread as i64;
        let size = mean as i64 * (10_000 + v) / 10_000;
        size.clamp(1, u32::MAX as i64) as u32
    }
}

fn check_payload_type(pt: u8) -> Result<(), GenError> {
    if pt > 0x7f {
        return Err(GenError::InvalidConfig(format!(
            "payload_type must fit 7 bits (got {pt})"
        )));
    }
    Ok(())
}

/// Constant-bit-rate audio: one `payload_bytes` packet every `ptime_us`.
pub fn generate_audio(cfg: &AudioGenConfig, duration_us: u64) -> Result<StreamTrace, GenError> {
    cfg.validate()?;
    if duration_us < cfg.ptime_us {
        return Err(GenError::EmptyTrace {
            duration_us,
            interval_us: cfg.ptime_us,
        });
    }
    let packets = (0..duration_us.div_ceil(cfg.ptime_us))
        .map(|i| MediaPacket {
            seq: i as u16,
            ssrc: cfg.ssrc,
            payload_type: cfg.payload_type,
            marker: i == 0,
            send_ts_us: i * cfg.ptime_us,
            recv_ts_us: None,
            size_bytes: cfg.payload_bytes,
        })
        .collect();
    Ok(StreamTrace::new(StreamKind::Audio, packets))
}

/// GOP-structured variable-size video. Each frame is sent as a back-to-back
/// burst of MTU-sized fragments sharing the frame's timestamp; the marker bit
/// flags the last fragment.
pub fn generate_video(
    cfg: &VideoGenConfig,
    duration_us: u64,
    seed: u64,
) -> Result<StreamTrace, GenError> {
    cfg.validate()?;
    let interval = cfg.frame_time_us(1);
    if duration_us < interval.max(1) {
        return Err(GenError::EmptyTrace {
            duration_us,
            interval_us: interval,
        });
    }

    let mtu = cfg.mtu_payload_bytes;
    let mut packets = Vec::new();
    let mut seq = 0u16;
    for k in 0u64.. {
        let t = cfg.frame_time_us(k);
        if t >= duration_us {
            break;
        }
        let mut remaining = cfg.frame_size(k, seed);
        while remaining > 0 {
            let size = remaining.min(mtu);
            remaining -= size;
            packets.push(MediaPacket {
                seq,
                ssrc: cfg.ssrc,
                payload_type: cfg.payload_type,
                marker: remaining == 0,
                send_ts_us: t,
                recv_ts_us: None,
                size_bytes: size,
            });
            seq = seq.wrapping_add(1);
        }
    }
    Ok(StreamTrace::new(StreamKind::Video, packets))
}

/// Probability as an exact ratio `num / den`, `num < den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probability {
    pub num: u64,
    pub den: u64,
}

impl Probability {
    pub const ZERO: Probability = Probability { num: 0, den: 1 };

    pub fn new(num: u64, den: u64) -> Self {
        Probability { num, den }
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Jitter {
    None,
    /// Inclusive bounds.
    Uniform {
        lo_us: u64,
        hi_us: u64,
    },
    Exponential {
        mean_us: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    pub base_delay_us: u64,
    pub jitter: Jitter,
    pub loss_prob: Probability,
    pub seed: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            base_delay_us: 0,
            jitter: Jitter::None,
            loss_prob: Probability::ZERO,
            seed: 0,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<(), GenError> {
        if let Jitter::Uniform { lo_us, hi_us } = self.jitter {
            if lo_us > hi_us {
                return Err(GenError::InvalidConfig(format!(
                    "jitter lo_us ({lo_us}) must not exceed hi_us ({hi_us})"
                )));
            }
        }
        if self.loss_prob.den == 0 || self.loss_prob.num >= self.loss_prob.den {
            return Err(GenError::InvalidConfig(format!(
                "loss_prob must be in [0, 1) (got {})",
                self.loss_prob
            )));
        }
        Ok(())
    }

    /// Loss decision and added jitter for packet `index`. The first draw of
    /// the packet's stream decides loss, the second its delay.
    pub fn draw(&self, index: u64) -> (bool, u64) {
        let mut rng = SplitMix64::for_index(self.seed, index);
        let lost = below(rng.next_u64(), self.loss_prob.den) < self.loss_prob.num;
        let x = rng.next_u64();
        let jitter = match self.jitter {
            Jitter::None => 0,
            Jitter::Uniform { lo_us, hi_us } => lo_us + below(x, hi_us - lo_us + 1),
            Jitter::Exponential { mean_us } => {
                let u = ((x >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
                (-(mean_us as f64) * u.ln()).floor().max(0.0) as u64
            }
        };
        (lost, jitter)
    }
}

/// Delivers `trace` across the channel: each surviving packet gets
/// `recv = send + base_delay + jitter`, and the result is re-sorted by
/// arrival (ties keep sender order).
pub fn apply_channel(trace: &StreamTrace, ch: &ChannelModel) -> Result<StreamTrace, GenError> {
    ch.validate()?;
    let mut packets: Vec<MediaPacket> = trace
        .packets
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let (lost, jitter) = ch.draw(i as u64);
            (!lost).then(|| MediaPacket {
                recv_ts_us: Some(p.send_ts_us + ch.base_delay_us + jitter),
                ..*p
            })
        })
        .collect();
    packets.sort_by_key(|p| p.recv_ts_us);
    Ok(StreamTrace {
        kind: trace.kind,
        packets,
        clock_resolution_us: trace.clock_resolution_us,
    })
}
