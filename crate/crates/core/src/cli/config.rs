//! Scenario config files.
//!
//! Grammar (ASCII, one entry per line):
//!
//! ```text
//! file    = { line "\n" }
//! line    = blank | comment | entry
//! comment = { " " | "\t" } "#" { any }
//! entry   = section "." key { " " | "\t" } "=" { " " | "\t" } value [ comment ]
//! section = "generator" | "channel" | "analysis" | "stage" digits
//! ```
//!
//! Keys may appear once. Stages must be numbered contiguously from 0.

use std::collections::BTreeMap;
use std::fmt;

use crate::model::StreamTrace;
use crate::shaper::{LeakyBucketConfig, Rate, StageConfig, TokenBucketConfig};
use crate::traffic::{AudioGenConfig, ChannelModel, Jitter, Probability, VideoGenConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub msg: String,
}

impl ConfigError {
    fn new(msg: impl Into<String>) -> Self {
        ConfigError {
            line: None,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.msg),
            None => f.write_str(&self.msg),
        }
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorSpec {
    Audio(AudioGenConfig),
    Video(VideoGenConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSection {
    pub spec: GeneratorSpec,
    pub duration_us: u64,
    pub seed: u64,
}

impl GeneratorSection {
    /// Packet interval for audio, frame interval for video.
    pub fn interval_us(&self) -> u64 {
        match &self.spec {
            GeneratorSpec::Audio(a) => a.ptime_us,
            GeneratorSpec::Video(v) => v.frame_time_us(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateSpec {
    Fixed(Rate),
    /// Percent of the pipeline input's mean send rate.
    PercentOfMean(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapacitySpec {
    Fixed(u64),
    /// Multiple of the input's mean frame size.
    MeanFrames(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSpec {
    Leaky(LeakyBucketConfig),
    Token {
        rate: RateSpec,
        capacity: CapacitySpec,
        initial_tokens: Option<u64>,
        queue_limit_bytes: Option<u64>,
    },
}

impl StageSpec {
    /// Turns relative token-bucket parameters into concrete ones against the
    /// pipeline input.
    pub fn resolve(&self, input: &StreamTrace) -> Result<StageConfig> {
        let (rate, capacity, initial_tokens, queue_limit_bytes) = match *self {
            StageSpec::Leaky(c) => return Ok(StageConfig::Leaky(c)),
            StageSpec::Token {
                rate,
                capacity,
                initial_tokens,
                queue_limit_bytes,
            } => (rate, capacity, initial_tokens, queue_limit_bytes),
        };
        let sized = |pct, frames| {
            TokenBucketConfig::sized_for(input, pct, frames).ok_or_else(|| {
                ConfigError::new("relative token bucket parameters need an input with at least two send instants")
            })
        };
        let rate = match rate {
            RateSpec::Fixed(r) => r,
            RateSpec::PercentOfMean(p) => sized(p, 1)?.rate,
        };
        let capacity_tokens = match capacity {
            CapacitySpec::Fixed(c) => c,
            CapacitySpec::MeanFrames(k) => sized(100, k)?.capacity_tokens,
        };
        let cfg = TokenBucketConfig {
            rate,
            capacity_tokens,
            initial_tokens: initial_tokens.unwrap_or(capacity_tokens),
            queue_limit_bytes,
        };
        cfg.validate()
            .map_err(|e| ConfigError::new(e.to_string()))?;
        Ok(StageConfig::Token(cfg))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisSection {
    pub window_us: u64,
    /// Base name of the per-stage SVG figures.
    pub svg_name: String,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            window_us: 1_000_000,
            svg_name: "report".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub generator: Option<GeneratorSection>,
    pub channel: Option<ChannelModel>,
    pub pipeline: Vec<StageSpec>,
    pub analysis: AnalysisSection,
}

impl ScenarioConfig {
    /// Replaces the generator and channel seeds.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(g) = &mut self.generator {
            g.seed = seed;
        }
        if let Some(c) = &mut self.channel {
            c.seed = seed;
        }
    }

    pub fn resolve_pipeline(&self, input: &StreamTrace) -> Result<Vec<StageConfig>> {
        self.pipeline.iter().map(|s| s.resolve(input)).collect()
    }
}

/// Raw `section.key -> (value, line)` entries.
#[derive(Debug, Default)]
struct Entries {
    map: BTreeMap<(String, String), (String, usize)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let at = |msg: String| ConfigError {
                line: Some(line_no),
                msg,
            };
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if !line.is_ascii() {
                return Err(at("non-ASCII content".into()));
            }
            let (lhs, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `section.key = value`, found `{line}`")))?;
            let (section, key) = lhs
                .trim()
                .split_once('.')
                .ok_or_else(|| at(format!("key `{}` has no section", lhs.trim())))?;
            let k = (section.trim().to_string(), key.trim().to_string());
            if k.0.is_empty() || k.1.is_empty() {
                return Err(at(format!("malformed key `{}`", lhs.trim())));
            }
            if map
                .insert(k.clone(), (value.trim().to_string(), line_no))
                .is_some()
            {
                return Err(at(format!("duplicate key `{}.{}`", k.0, k.1)));
            }
        }
        Ok(Entries { map })
    }

    fn sections(&self) -> Vec<String> {
        let mut s: Vec<String> = self.map.keys().map(|(s, _)| s.clone()).collect();
        s.dedup();
        s
    }

    fn has_section(&self, section: &str) -> bool {
        self.map.keys().any(|(s, _)| s == section)
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.map.remove(&(section.to_string(), key.to_string()))
    }

    fn str(&mut self, section: &str, key: &str) -> Option<String> {
        self.take(section, key).map(|(v, _)| v)
    }

    fn parsed<T: std::str::FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>> {
        match self.take(section, key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|_| ConfigError {
                line: Some(line),
                msg: format!("{section}.{key}: cannot parse `{v}`"),
            }),
        }
    }

    fn required<T: std::str::FromStr>(&mut self, section: &str, key: &str) -> Result<T> {
        self.parsed(section, key)?
            .ok_or_else(|| ConfigError::new(format!("missing required key `{section}.{key}`")))
    }

    fn reject_leftovers(&self) -> Result<()> {
        match self.map.iter().next() {
            Some(((s, k), (_, line))) => Err(ConfigError {
                line: Some(*line),
                msg: format!("unknown key `{s}.{k}`"),
            }),
            None => Ok(()),
        }
    }
}

fn parse_ratio(s: &str) -> Option<(u64, u64)> {
    match s.split_once('/') {
        Some((n, d)) => Some((n.trim().parse().ok()?, d.trim().parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

fn parse_generator(e: &mut Entries) -> Result<Option<GeneratorSection>> {
    if !e.has_section("generator") {
        return Ok(None);
    }
    const S: &str = "generator";
    let kind: String = e.required(S, "kind")?;
    let duration_us: u64 = e.required(S, "duration_us")?;
    let seed: u64 = e.parsed(S, "seed")?.unwrap_or(0);
    let invalid = |err: crate::traffic::GenError| ConfigError::new(err.to_string());
    let spec = match kind.as_str() {
        "audio" => {
            let d = AudioGenConfig::default();
            let cfg = AudioGenConfig {
                ptime_us: e.parsed(S, "ptime_us")?.unwrap_or(d.ptime_us),
                payload_bytes: e.parsed(S, "payload_bytes")?.unwrap_or(d.payload_bytes),
                ssrc: e.parsed(S, "ssrc")?.unwrap_or(d.ssrc),
                payload_type: e.parsed(S, "payload_type")?.unwrap_or(d.payload_type),
            };
            cfg.validate().map_err(invalid)?;
            GeneratorSpec::Audio(cfg)
        }
        "video" => {
            let d = VideoGenConfig::default();
            let cfg = VideoGenConfig {
                fps: e.parsed(S, "fps")?.unwrap_or(d.fps),
                gop: e.parsed(S, "gop")?.unwrap_or(d.gop),
                i_frame_bytes: e.parsed(S, "i_frame_bytes")?.unwrap_or(d.i_frame_bytes),
                p_frame_bytes: e.parsed(S, "p_frame_bytes")?.unwrap_or(d.p_frame_bytes),
                size_jitter_pct: e.parsed(S, "size_jitter_pct")?.unwrap_or(d.size_jitter_pct),
                mtu_payload_bytes: e
                    .parsed(S, "mtu_payload_bytes")?
                    .unwrap_or(d.mtu_payload_bytes),
                ssrc: e.parsed(S, "ssrc")?.unwrap_or(d.ssrc),
                payload_type: e.parsed(S, "payload_type")?.unwrap_or(d.payload_type),
            };
            cfg.validate().map_err(invalid)?;
            GeneratorSpec::Video(cfg)
        }
        other => {
            return Err(ConfigError::new(format!(
                "generator.kind must be audio or video (got `{other}`)"
            )))
        }
    };
    let g = GeneratorSection {
        spec,
        duration_us,
        seed,
    };
    if duration_us < g.interval_us() {
        return Err(ConfigError::new(format!(
            "generator.duration_us ({duration_us}) is shorter than one interval ({} us)",
            g.interval_us()
        )));
    }
    Ok(Some(g))
}

fn parse_channel(e: &mut Entries) -> Result<Option<ChannelModel>> {
    if !e.has_section("channel") {
        return Ok(None);
    }
    const S: &str = "channel";
    let jitter = match e.str(S, "jitter").as_deref().unwrap_or("none") {
        "none" => Jitter::None,
        "uniform" => Jitter::Uniform {
            lo_us: e.parsed(S, "jitter_lo_us")?.unwrap_or(0),
            hi_us: e.required(S, "jitter_hi_us")?,
        },
        "exponential" => Jitter::Exponential {
            mean_us: e.required(S, "jitter_mean_us")?,
        },
        other => {
            return Err(ConfigError::new(format!(
                "channel.jitter must be none, uniform or exponential (got `{other}`)"
            )))
        }
    };
    let loss_prob = match e.take(S, "loss_prob") {
        None => Probability::ZERO,
        Some((v, line)) => {
            let (n, d) = parse_ratio(&v).ok_or_else(|| ConfigError {
                line: Some(line),
                msg: format!("channel.loss_prob: expected `n/d` or an integer, found `{v}`"),
            })?;
            Probability::new(n, d)
        }
    };
    let ch = ChannelModel {
        base_delay_us: e.parsed(S, "base_delay_us")?.unwrap_or(0),
        jitter,
        loss_prob,
        seed: e.parsed(S, "seed")?.unwrap_or(0),
    };
    ch.validate()
        .map_err(|err| ConfigError::new(err.to_string()))?;
    Ok(Some(ch))
}

fn parse_stage(e: &mut Entries, section: &str, default_interval: Option<u64>) -> Result<StageSpec> {
    let shaper: String = e.required(section, "shaper")?;
    let bad = |key: &str, v: &str| ConfigError::new(format!("{section}.{key}: cannot parse `{v}`"));
    match shaper.as_str() {
        "leaky" => {
            let drain = match e.parsed(section, "drain_interval_us")? {
                Some(d) => d,
                None => default_interval.ok_or_else(|| {
                    ConfigError::new(format!(
                        "missing required key `{section}.drain_interval_us`"
                    ))
                })?,
            };
            let cfg = LeakyBucketConfig::new(
                e.parsed(section, "capacity_packets")?
                    .unwrap_or(LeakyBucketConfig::DEFAULT_CAPACITY),
                drain,
            );
            cfg.validate()
                .map_err(|err| ConfigError::new(format!("{section}: {err}")))?;
            Ok(StageSpec::Leaky(cfg))
        }
        "token" => {
            let rate_s: String = e.required(section, "rate")?;
            let rate = if let Some(p) = rate_s.strip_suffix('%') {
                RateSpec::PercentOfMean(p.trim().parse().map_err(|_| bad("rate", &rate_s))?)
            } else {
                let (n, d) = parse_ratio(&rate_s).ok_or_else(|| bad("rate", &rate_s))?;
                RateSpec::Fixed(Rate::new(n, d))
            };
            let cap_s: String = e.required(section, "capacity_tokens")?;
            let capacity = if let Some(k) = cap_s.strip_suffix("xframe") {
                CapacitySpec::MeanFrames(
                    k.trim()
                        .parse()
                        .map_err(|_| bad("capacity_tokens", &cap_s))?,
                )
            } else {
                CapacitySpec::Fixed(cap_s.parse().map_err(|_| bad("capacity_tokens", &cap_s))?)
            };
            let initial_tokens: Option<u64> = e.parsed(section, "initial_tokens")?;
            let queue_limit_bytes: Option<u64> = e.parsed(section, "queue_limit_bytes")?;
            // Fixed parameters can be checked before any trace exists.
            if let (RateSpec::Fixed(r), CapacitySpec::Fixed(c)) = (rate, capacity) {
                let cfg = TokenBucketConfig {
                    rate: r,
                    capacity_tokens: c,
                    initial_tokens: initial_tokens.unwrap_or(c),
                    queue_limit_bytes,
                };
                cfg.validate()
                    .map_err(|err| ConfigError::new(format!("{section}: {err}")))?;
            }
            Ok(StageSpec::Token {
                rate,
                capacity,
                initial_tokens,
                queue_limit_bytes,
            })
        }
        other => Err(ConfigError::new(format!(
            "{section}.shaper must be leaky or token (got `{other}`)"
        ))),
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let mut e = Entries::parse(text)?;

    let mut stage_ids = Vec::new();
    for s in e.sections() {
        match s.as_str() {
            "generator" | "channel" | "analysis" => {}
            other => match other
                .strip_prefix("stage")
                .and_then(|n| n.parse::<usize>().ok())
            {
                Some(n) => stage_ids.push(n),
                None => return Err(ConfigError::new(format!("unknown section `{other}`"))),
            },
        }
    }
    stage_ids.sort_unstable();
    if stage_ids.iter().enumerate().any(|(i, &n)| i != n) {
        return Err(ConfigError::new(
            "stages must be numbered stage0, stage1, ... without gaps",
        ));
    }

    let generator = parse_generator(&mut e)?;
    let channel = parse_channel(&mut e)?;
    let default_interval = generator.as_ref().map(GeneratorSection::interval_us);
    let pipeline = stage_ids
        .iter()
        .map(|n| parse_stage(&mut e, &format!("stage{n}"), default_interval))
        .collect::<Result<Vec<_>>>()?;

    let d = AnalysisSection::default();
    let analysis = AnalysisSection {
        window_us: e.parsed("analysis", "window_us")?.unwrap_or(d.window_us),
        svg_name: e.str("analysis", "svg_name").unwrap_or(d.svg_name),
    };
    if analysis.window_us == 0 {
        return Err(ConfigError::new("analysis.window_us must be >= 1"));
    }
    e.reject_leftovers()?;

    Ok(ScenarioConfig {
        generator,
        channel,
        pipeline,
        analysis,
    })
}

/// Serializes a resolved stage in the config syntax under section `stage`.
pub fn write_stage_conf(stage: &StageConfig) -> String {
    match stage {
        StageConfig::Leaky(c) => format!(
            "stage.shaper = leaky\nstage.capacity_packets = {}\nstage.drain_interval_us = {}\n",
            c.capacity_packets, c.drain_interval_us
        ),
        StageConfig::Token(c) => {
            let mut s = format!(
                "stage.shaper = token\nstage.rate = {}\nstage.capacity_tokens = {}\nstage.initial_tokens = {}\n",
                c.rate, c.capacity_tokens, c.initial_tokens
            );
            if let Some(l) = c.queue_limit_bytes {
                s.push_str(&format!("stage.queue_limit_bytes = {l}\n"));
            }
            s
        }
    }
}

/// Inverse of [`write_stage_conf`].
pub fn read_stage_conf(text: &str) -> Result<StageConfig> {
    let mut e = Entries::parse(text)?;
    let spec = parse_stage(&mut e, "stage", None)?;
    e.reject_leftovers()?;
    match spec {
        StageSpec::Leaky(c) => Ok(StageConfig::Leaky(c)),
        StageSpec::Token {
            rate: RateSpec::Fixed(rate),
            capacity: CapacitySpec::Fixed(capacity_tokens),
            initial_tokens,
            queue_limit_bytes,
        } => Ok(StageConfig::Token(TokenBucketConfig {
            rate,
            capacity_tokens,
            initial_tokens: initial_tokens.unwrap_or(capacity_tokens),
            queue_limit_bytes,
        })),
        StageSpec::Token { .. } => Err(ConfigError::new(
            "stage file must hold concrete token bucket parameters",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const AUDIO: &str = "
# paper audio scenario
generator.kind = audio
generator.duration_us = 60000000
generator.seed = 7
channel.jitter = uniform
channel.jitter_hi_us = 15000   # up to 15 ms
stage0.shaper = leaky
stage0.capacity_packets = 15
";

    #[test]
    fn audio_scenario() {
        let c = parse_scenario(AUDIO).unwrap();
        let g = c.generator.unwrap();
        assert_eq!(g.duration_us, 60_000_000);
        assert_eq!(g.spec, GeneratorSpec::Audio(AudioGenConfig::default()));
        assert_eq!(
            c.channel.unwrap().jitter,
            Jitter::Uniform {
                lo_us: 0,
                hi_us: 15_000
            }
        );
        // Drain interval defaults to the generator's packet interval.
        assert_eq!(
            c.pipeline,
            vec![StageSpec::Leaky(LeakyBucketConfig::new(15, 20_000))]
        );
        assert_eq!(c.analysis, AnalysisSection::default());
    }

    #[test]
    fn zero_ptime_names_invariant() {
        let err = parse_scenario(
            "generator.kind = audio\ngenerator.duration_us = 100\ngenerator.ptime_us = 0\n",
        )
        .unwrap_err();
        assert!(err.msg.contains("ptime_us must be >= 1000"), "{err}");
    }

    #[test]
    fn unknown_and_duplicate_keys() {
        let err = parse_scenario("channel.bogus = 1\n").unwrap_err();
        assert_eq!(err.line, Some(1));
        let err = parse_scenario("analysis.window_us = 1\nanalysis.window_us = 2\n").unwrap_err();
        assert_eq!(err.line, Some(2));
        assert!(parse_scenario("nosection = 1\n").is_err());
    }

    #[test]
    fn stage_gaps_rejected() {
        let err =
            parse_scenario("stage1.shaper = leaky\nstage1.drain_interval_us = 5\n").unwrap_err();
        assert!(err.msg.contains("without gaps"));
    }

    #[test]
    fn token_relative_parameters() {
        let c = parse_scenario(
            "stage0.shaper = token\nstage0.rate = 110%\nstage0.capacity_tokens = 2xframe\n",
        )
        .unwrap();
        assert_eq!(
            c.pipeline[0],
            StageSpec::Token {
                rate: RateSpec::PercentOfMean(110),
                capacity: CapacitySpec::MeanFrames(2),
                initial_tokens: None,
                queue_limit_bytes: None,
            }
        );
    }

    #[test]
    fn stage_conf_round_trip() {
        let stages = [
            StageConfig::Leaky(LeakyBucketConfig::new(15, 20_000)),
            StageConfig::Token(TokenBucketConfig {
                rate: Rate::new(1100, 3),
                capacity_tokens: 4000,
                initial_tokens: 17,
                queue_limit_bytes: Some(90_000),
            }),
        ];
        for s in stages {
            assert_eq!(read_stage_conf(&write_stage_conf(&s)).unwrap(), s);
        }
    }

    #[test]
    fn loss_prob_must_be_below_one() {
        assert!(parse_scenario("channel.loss_prob = 1/1\n").is_err());
        let c = parse_scenario("channel.loss_prob = 1/100\n").unwrap();
        assert_eq!(c.channel.unwrap().loss_prob, Probability::new(1, 100));
    }
}
