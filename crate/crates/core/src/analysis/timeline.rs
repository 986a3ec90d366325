use super::{positive, AnalysisError};
use crate::bits::TOKEN_BITS;
use crate::log::FrameLog;
use crate::wire::{CodecId, FrameBody, Parsed, SpeakerId, DEFAULT_TOKEN_RATE_HZ, EMBED_DIM};
use std::collections::HashMap;
use std::fmt::Write;

/// The interval over which a frame's bits occupied the link.
///
/// TOKENS bits are spread over the audio span their chunk covers; timbre
/// bits over the gap since the previous timbre frame of the same speaker
/// (an embedding goes on air `d_sample` after its BEGIN). Everything else is
/// an impulse at its timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Airtime {
    pub start_us: u64,
    pub end_us: u64,
    /// Token or timbre bits, excluding framing.
    pub payload_bits: u64,
    /// All serialized bits, including header and CRC.
    pub total_bits: u64,
}

pub fn airtime(log: &FrameLog) -> Vec<Airtime> {
    let mut tick_us = 1_000_000 / u64::from(DEFAULT_TOKEN_RATE_HZ);
    let mut last_timbre: HashMap<SpeakerId, u64> = HashMap::new();
    log.parse_frames(false)
        .into_iter()
        .zip(&log.records)
        .map(|((t, parsed), record)| {
            let total_bits = record.bits();
            let impulse = Airtime { start_us: t, end_us: t, payload_bits: 0, total_bits };
            let Ok(Parsed::Complete { frame, .. }) = parsed else { return impulse };
            let mut spread = |id: SpeakerId, bits: u64| {
                let start = last_timbre.get(&id).copied().unwrap_or(t).min(t);
                last_timbre.insert(id, t);
                Airtime { start_us: start, end_us: t, payload_bits: bits, total_bits }
            };
            match &frame.body {
                FrameBody::StreamHeader(h) => {
                    if h.token_rate_hz > 0 {
                        tick_us = 1_000_000 / u64::from(h.token_rate_hz);
                    }
                    impulse
                }
                FrameBody::Tokens(c) => {
                    let n = c.tokens.len() as u64;
                    Airtime {
                        start_us: t.saturating_sub(n * tick_us),
                        end_us: t,
                        payload_bits: n * u64::from(TOKEN_BITS),
                        total_bits,
                    }
                }
                FrameBody::TimbreCodecBegin(b) => {
                    let on_air = if b.codec_id == CodecId::EMBEDDING { t + u64::from(b.d_sample_ms) * 1000 } else { t };
                    last_timbre.insert(b.speaker_id, on_air);
                    impulse
                }
                FrameBody::TimbreCodecData { speaker_id, bytes, .. } => spread(*speaker_id, bytes.len() as u64 * 8),
                FrameBody::TimbreEmbed { speaker_id, .. } => spread(*speaker_id, EMBED_DIM as u64 * 8),
                FrameBody::TimbreCodecEnd { speaker_id } => {
                    last_timbre.remove(speaker_id);
                    impulse
                }
                FrameBody::SpeakerSwitchKnown { .. } => impulse,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimelineSample {
    /// Window end; the window is `[t_s - window, t_s)`.
    pub t_s: f64,
    pub payload_bps: f64,
    pub total_bps: f64,
}

/// Bits of `a` falling inside `[w0, w1)`.
fn bits_in(a: &Airtime, bits: u64, w0: u64, w1: u64) -> f64 {
    if a.end_us == a.start_us {
        return if (w0..w1).contains(&a.start_us) { bits as f64 } else { 0.0 };
    }
    let lo = a.start_us.max(w0);
    let hi = a.end_us.min(w1);
    if hi <= lo {
        return 0.0;
    }
    // Integer numerator first keeps aligned cases exact.
    let num = u128::from(bits) * u128::from(hi - lo);
    let den = u128::from(a.end_us - a.start_us);
    if num % den == 0 {
        (num / den) as f64
    } else {
        num as f64 / den as f64
    }
}

/// Rectangular sliding-window bitrate, sampled every `hop_s` until the
/// last bit is covered.
pub fn bitrate_timeline(log: &FrameLog, window_s: f64, hop_s: f64) -> Result<Vec<TimelineSample>, AnalysisError> {
    let window_us = (positive("window_s", window_s)? * 1e6).round() as u64;
    let hop_us = (positive("hop_s", hop_s)? * 1e6).round() as u64;
    if window_us == 0 || hop_us == 0 {
        return Err(AnalysisError::NotPositive { name: "window_s", value: window_s.min(hop_s) });
    }
    let spans = airtime(log);
    let Some(last) = spans.iter().map(|a| a.end_us).max() else { return Ok(Vec::new()) };
    let samples = last / hop_us + 1;
    let w = window_us as f64 / 1e6;
    Ok((1..=samples)
        .map(|k| {
            let t1 = k * hop_us;
            let t0 = t1.saturating_sub(window_us);
            let (mut p, mut total) = (0.0, 0.0);
            for a in &spans {
                if a.end_us < t0 || a.start_us >= t1 {
                    continue;
                }
                p += bits_in(a, a.payload_bits, t0, t1);
                total += bits_in(a, a.total_bits, t0, t1);
            }
            TimelineSample { t_s: t1 as f64 / 1e6, payload_bps: p / w, total_bps: total / w }
        })
        .collect())
}

pub fn timeline_csv(samples: &[TimelineSample]) -> String {
    let mut s = String::from("t_s,payload_bps,total_bps\n");
    for x in samples {
        writeln!(s, "{},{},{}", x.t_s, x.payload_bps, x.total_bps).unwrap();
    }
    s
}
