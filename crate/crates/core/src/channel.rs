//! Binary symmetric channel and link shaping over frame logs.
//!
//! Bit flips are drawn from a ChaCha8 stream selected by (seed, frame seq):
//! the i-th in-scope bit of a frame is flipped when the i-th 64-bit draw of
//! that stream falls below `p * 2^64`. The outcome for one frame therefore
//! does not depend on any other frame.

use crate::log::{FrameLog, LogRecord};
use crate::wire::{FrameKind, RawHeader, HEADER_LEN};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipScope {
    /// Payload bytes only; headers, CRC trailers and the stream header stay
    /// intact so the log remains parseable.
    #[default]
    PayloadOnly,
    /// Every byte of every frame.
    WholeFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFilter {
    #[default]
    All,
    TokensOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub flip_prob: f64,
    pub seed: u64,
    pub scope: FlipScope,
    pub frames: FrameFilter,
    pub bandwidth_bps: Option<f64>,
    pub fixed_delay_us: Option<u64>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            flip_prob: 0.0,
            seed: 0,
            scope: FlipScope::PayloadOnly,
            frames: FrameFilter::All,
            bandwidth_bps: None,
            fixed_delay_us: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("flip probability must be within [0, 1], got {0}")]
    BadProbability(f64),
    #[error("bandwidth must be positive, got {0} bps")]
    BadBandwidth(f64),
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(ChannelError::BadProbability(self.flip_prob));
        }
        if let Some(b) = self.bandwidth_bps {
            if !(b.is_finite() && b > 0.0) {
                return Err(ChannelError::BadBandwidth(b));
            }
        }
        Ok(())
    }
}

/// Draw threshold for probability `p`; `None` means flip every bit.
fn threshold(p: f64) -> Option<u64> {
    if p >= 1.0 {
        None
    } else if p <= 0.0 {
        Some(0)
    } else {
        // p * 2^64, exact in f64 for the scale, truncated to an integer.
        Some((p * 18_446_744_073_709_551_616.0) as u64)
    }
}

/// Flips bits in `bytes[range]` in place using the stream for (seed, seq).
/// Returns the number of flipped bits.
pub fn flip_range(bytes: &mut [u8], range: std::ops::Range<usize>, p: f64, seed: u64, seq: u32) -> u64 {
    let Some(th) = threshold(p) else {
        let n = range.len() as u64 * 8;
        for b in &mut bytes[range] {
            *b = !*b;
        }
        return n;
    };
    if th == 0 {
        return 0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(seq));
    let mut flipped = 0;
    for b in &mut bytes[range] {
        let mut mask = 0u8;
        for bit in 0..8 {
            if rng.next_u64() < th {
                mask |= 0x80 >> bit;
            }
        }
        flipped += u64::from(mask.count_ones());
        *b ^= mask;
    }
    flipped
}

/// Byte range of `bytes` subject to flipping, or `None` when the frame is
/// out of scope.
fn scope_range(bytes: &[u8], config: &ChannelConfig) -> Option<std::ops::Range<usize>> {
    let h = RawHeader::read(bytes)?;
    if config.frames == FrameFilter::TokensOnly && h.kind_code != FrameKind::Tokens.code() {
        return None;
    }
    match config.scope {
        FlipScope::WholeFrame => Some(0..bytes.len()),
        FlipScope::PayloadOnly => {
            if h.kind_code == FrameKind::StreamHeader.code() {
                return None;
            }
            let end = (HEADER_LEN + h.payload_len as usize).min(bytes.len());
            Some(HEADER_LEN..end)
        }
    }
}

/// Applies independent bit flips with probability `flip_prob`.
pub fn apply_bsc(log: &FrameLog, config: &ChannelConfig) -> Result<FrameLog, ChannelError> {
    config.validate()?;
    let records = log
        .records
        .iter()
        .map(|r| {
            let mut bytes = r.bytes.clone();
            if let Some(range) = scope_range(&bytes, config) {
                let seq = r.header().map_or(0, |h| h.seq);
                flip_range(&mut bytes, range, config.flip_prob, config.seed, seq);
            }
            LogRecord { t_us: r.t_us, bytes }
        })
        .collect();
    Ok(FrameLog { records })
}

/// Re-times frames for a rate-limited link plus a fixed delay. Each frame
/// starts when the link is free and its timestamp becomes the instant its
/// last bit has been sent.
pub fn apply_link_shaping(log: &FrameLog, config: &ChannelConfig) -> Result<FrameLog, ChannelError> {
    config.validate()?;
    let delay = config.fixed_delay_us.unwrap_or(0);
    let mut link_free = 0u64;
    let records = log
        .records
        .iter()
        .map(|r| {
            let mut t = r.t_us;
            if let Some(cap) = config.bandwidth_bps {
                let airtime = (r.bits() as f64 * 1e6 / cap).ceil() as u64;
                t = t.max(link_free) + airtime;
                link_free = t;
            }
            LogRecord { t_us: t + delay, bytes: r.bytes.clone() }
        })
        .collect();
    Ok(FrameLog { records })
}
