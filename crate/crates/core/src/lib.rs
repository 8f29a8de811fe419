//! Leaky-bucket and token-bucket shaping for RTP media streams, with the
//! traffic generation, channel impairment and jitter/PDV measurement needed
//! to show the effect of shaping on packet delay variation.

pub mod cli;
pub mod metrics;
pub mod model;
pub mod shaper;
pub mod traffic;
