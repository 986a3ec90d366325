//! Pacing of timbre payloads over the link.

use super::config::{SenderConfig, TimbreMode};
use crate::wire::EMBED_DIM;
use thiserror::Error;

/// One transmission unit: `bytes` of payload, fully sent `offset_s` seconds
/// after the transfer starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulePiece {
    pub bytes: usize,
    pub offset_s: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("timbre rate must be positive and finite, got {0} bps")]
    BadRate(f64),
    #[error("empty timbre payload")]
    EmptyPayload,
    #[error("mode {0:?} sends no timbre")]
    NoTimbre(TimbreMode),
}

/// Bits per second used to pace a timbre payload.
pub fn timbre_rate(config: &SenderConfig) -> Result<f64, ScheduleError> {
    let rate = match config.mode {
        TimbreMode::CodecSwitch => config.timbre_rate_bps,
        TimbreMode::SpeakerEmbedding => (EMBED_DIM * 8) as f64 / config.d_transmit_s,
        TimbreMode::TimbreFree => return Err(ScheduleError::NoTimbre(config.mode)),
    };
    if rate.is_finite() && rate > 0.0 {
        Ok(rate)
    } else {
        Err(ScheduleError::BadRate(rate))
    }
}

/// Splits a payload into pieces and gives each its completion offset.
/// Codec payloads are cut into `timbre_chunk_bytes` pieces; an embedding is
/// a single piece. Offsets end at exactly `payload_bits / rate`.
pub fn timbre_schedule(config: &SenderConfig, payload_bits: u64) -> Result<Vec<SchedulePiece>, ScheduleError> {
    schedule_at_rate(config, payload_bits, timbre_rate(config)?)
}

pub(crate) fn schedule_at_rate(
    config: &SenderConfig,
    payload_bits: u64,
    rate: f64,
) -> Result<Vec<SchedulePiece>, ScheduleError> {
    if payload_bits == 0 {
        return Err(ScheduleError::EmptyPayload);
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(ScheduleError::BadRate(rate));
    }
    let total = payload_bits.div_ceil(8) as usize;
    let piece = match config.mode {
        TimbreMode::CodecSwitch => config.timbre_chunk_bytes.max(1),
        _ => total,
    };
    let mut out = Vec::with_capacity(total.div_ceil(piece));
    let mut sent = 0usize;
    while sent < total {
        let bytes = piece.min(total - sent);
        sent += bytes;
        let bits = ((sent as u64) * 8).min(payload_bits);
        out.push(SchedulePiece { bytes, offset_s: bits as f64 / rate });
    }
    Ok(out)
}
