//! Added latency per timbre transfer.

use crate::wire::{CodecId, Frame, FrameBody, FrameKind, SpeakerId};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRecord {
    pub speaker: SpeakerId,
    pub d_sample_s: f64,
    /// Measured from frame timestamps.
    pub d_transmit_s: f64,
    #[serde(rename = "L_s")]
    pub l_s: f64,
    /// For codec samples streamed during capture, capture and transmission
    /// overlap and the added delay is `max(d_sample, d_transmit)`.
    #[serde(rename = "L_live_s", skip_serializing_if = "Option::is_none")]
    pub l_live_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatencyError {
    #[error("incomplete transfer: no {0} frame")]
    MissingFrame(FrameKind),
    #[error("zero-length transfer for speaker {0}: no data frames")]
    ZeroLength(SpeakerId),
    #[error("timestamps inconsistent with the announced d_sample for speaker {0}")]
    Inconsistent(SpeakerId),
}

impl LatencyRecord {
    pub fn new(speaker: SpeakerId, d_sample_s: f64, d_transmit_s: f64) -> Self {
        LatencyRecord { speaker, d_sample_s, d_transmit_s, l_s: d_sample_s + d_transmit_s, l_live_s: None }
    }

    /// Codec transfer bracketed by BEGIN at `begin_us` and END at `end_us`.
    pub fn codec(speaker: SpeakerId, d_sample_ms: u16, begin_us: u64, end_us: u64, live: bool) -> Self {
        let d_sample = f64::from(d_sample_ms) / 1000.0;
        let d_transmit = end_us.saturating_sub(begin_us) as f64 / 1e6;
        let mut r = Self::new(speaker, d_sample, d_transmit);
        if live {
            r.l_live_s = Some(d_sample.max(d_transmit));
        }
        r
    }

    /// Embedding transfer: BEGIN marks detection, the embedding goes on air
    /// `d_sample` later and is complete at `embed_us`.
    pub fn embedding(speaker: SpeakerId, d_sample_ms: u16, begin_us: u64, embed_us: u64) -> Result<Self, LatencyError> {
        let on_air = begin_us + u64::from(d_sample_ms) * 1000;
        if embed_us < on_air {
            return Err(LatencyError::Inconsistent(speaker));
        }
        Ok(Self::new(speaker, f64::from(d_sample_ms) / 1000.0, (embed_us - on_air) as f64 / 1e6))
    }
}

/// Measures the first timbre transfer found in `frames`.
pub fn measure_latency(frames: &[(u64, Frame)], capture_then_send: bool) -> Result<LatencyRecord, LatencyError> {
    let (pos, t_begin, begin) = frames
        .iter()
        .enumerate()
        .find_map(|(i, (t, f))| match &f.body {
            FrameBody::TimbreCodecBegin(b) => Some((i, *t, *b)),
            _ => None,
        })
        .ok_or(LatencyError::MissingFrame(FrameKind::TimbreCodecBegin))?;
    let id = begin.speaker_id;
    let rest = &frames[pos + 1..];
    if begin.codec_id == CodecId::EMBEDDING {
        let t_embed = rest
            .iter()
            .find(|(_, f)| matches!(&f.body, FrameBody::TimbreEmbed { speaker_id, .. } if *speaker_id == id))
            .map(|(t, _)| *t)
            .ok_or(LatencyError::MissingFrame(FrameKind::TimbreEmbed))?;
        return LatencyRecord::embedding(id, begin.d_sample_ms, t_begin, t_embed);
    }
    let end = rest
        .iter()
        .position(|(_, f)| f.body == FrameBody::TimbreCodecEnd { speaker_id: id })
        .ok_or(LatencyError::MissingFrame(FrameKind::TimbreCodecEnd))?;
    let data = rest[..end]
        .iter()
        .any(|(_, f)| matches!(&f.body, FrameBody::TimbreCodecData { speaker_id, .. } if *speaker_id == id));
    if !data {
        return Err(LatencyError::ZeroLength(id));
    }
    Ok(LatencyRecord::codec(id, begin.d_sample_ms, t_begin, rest[end].0, !capture_then_send))
}
