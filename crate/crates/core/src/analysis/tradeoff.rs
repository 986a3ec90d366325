use super::{positive, AnalysisError, TOKEN_PAYLOAD_BPS};
use serde::Serialize;
use std::fmt::Write;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TradeoffMode {
    /// Codec sample of `d_sample` seconds at `nominal_bps`, captured then
    /// sent at the budget; tokens pause meanwhile.
    CodecSwitch { nominal_bps: f64 },
    /// Embedding of `embed_bits` paced at the budget next to the tokens.
    SpeakerEmbedding { embed_bits: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub peak_bps: f64,
    pub added_latency_s: f64,
    pub mode: &'static str,
    pub d_sample_s: f64,
}

impl TradeoffMode {
    pub fn label(self) -> &'static str {
        match self {
            TradeoffMode::CodecSwitch { .. } => "codec_switch_capture_then_send",
            TradeoffMode::SpeakerEmbedding { .. } => "speaker_embedding",
        }
    }
}

/// One point per timbre budget `b` (bits per second).
pub fn tradeoff_curve(
    mode: TradeoffMode,
    d_sample_s: f64,
    budgets_bps: &[f64],
) -> Result<Vec<TradeoffPoint>, AnalysisError> {
    let d_sample_s = positive("d_sample_s", d_sample_s)?;
    budgets_bps
        .iter()
        .map(|&b| {
            let b = positive("budget_bps", b)?;
            let (peak_bps, transmit_s) = match mode {
                TradeoffMode::CodecSwitch { nominal_bps } => {
                    (b, d_sample_s * positive("nominal_bps", nominal_bps)? / b)
                }
                TradeoffMode::SpeakerEmbedding { embed_bits } => {
                    (TOKEN_PAYLOAD_BPS + b, positive("embed_bits", embed_bits)? / b)
                }
            };
            Ok(TradeoffPoint { peak_bps, added_latency_s: d_sample_s + transmit_s, mode: mode.label(), d_sample_s })
        })
        .collect()
}

/// Embedding mode parameterized by transmission time instead of budget.
pub fn embedding_point(d_sample_s: f64, d_transmit_s: f64) -> Result<TradeoffPoint, AnalysisError> {
    let bits = (crate::wire::EMBED_DIM * 8) as f64;
    let b = bits / positive("d_transmit_s", d_transmit_s)?;
    let mut p = tradeoff_curve(TradeoffMode::SpeakerEmbedding { embed_bits: bits }, d_sample_s, &[b])?;
    p[0].added_latency_s = d_sample_s + d_transmit_s;
    Ok(p.remove(0))
}

pub fn tradeoff_csv(points: &[TradeoffPoint]) -> String {
    let mut s = String::from("peak_bps,latency_s,mode,d_sample\n");
    for p in points {
        writeln!(s, "{},{},{},{}", p.peak_bps, p.added_latency_s, p.mode, p.d_sample_s).unwrap();
    }
    s
}
