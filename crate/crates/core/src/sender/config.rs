//! Sender configuration, loadable from JSON or `key = value` text.

use crate::wire::CodecId;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimbreMode {
    /// Send a short codec-encoded audio sample for each new speaker.
    CodecSwitch,
    /// Send a quantized 128-dim speaker embedding for each new speaker.
    SpeakerEmbedding,
    /// Never send timbre; the receiver uses its stock voice.
    TimbreFree,
}

/// When the codec sample goes on air relative to speaker detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimbreTiming {
    /// Encoded audio is sent as it is captured, starting at detection.
    #[default]
    Live,
    /// The whole sample is captured first, then sent.
    CaptureThenSend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SenderConfig {
    pub mode: TimbreMode,
    pub d_sample_s: f64,
    pub d_transmit_s: f64,
    pub timbre_rate_bps: f64,
    pub codec_id: u8,
    pub chunk_tokens: usize,
    pub timing: TimbreTiming,
    /// Hold tokens produced during a codec switch and send them after it.
    pub buffer_tokens_during_switch: bool,
    pub timbre_chunk_bytes: usize,
    pub crc: bool,
}

impl Default for SenderConfig {
    fn default() -> Self {
        SenderConfig {
            mode: TimbreMode::SpeakerEmbedding,
            d_sample_s: 1.0,
            d_transmit_s: 1.0,
            timbre_rate_bps: 1500.0,
            codec_id: CodecId::ENCODEC_1K5.0,
            chunk_tokens: 20,
            timing: TimbreTiming::Live,
            buffer_tokens_during_switch: false,
            timbre_chunk_bytes: 256,
            crc: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("config: {0}")]
    Invalid(String),
}

impl SenderConfig {
    pub fn codec(&self) -> CodecId {
        CodecId(self.codec_id)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(1..=crate::wire::MAX_TOKENS_PER_FRAME).contains(&self.chunk_tokens) {
            return bad(format!("chunk_tokens must be in 1..=4095, got {}", self.chunk_tokens));
        }
        if self.mode == TimbreMode::TimbreFree {
            return Ok(());
        }
        if !positive(self.d_sample_s) {
            return bad(format!("d_sample_s must be > 0, got {}", self.d_sample_s));
        }
        if self.d_sample_s * 1000.0 > f64::from(u16::MAX) {
            return bad(format!("d_sample_s {} exceeds 65.535 s", self.d_sample_s));
        }
        match self.mode {
            TimbreMode::SpeakerEmbedding if !positive(self.d_transmit_s) => {
                bad(format!("d_transmit_s must be > 0, got {}", self.d_transmit_s))
            }
            TimbreMode::CodecSwitch => {
                if !positive(self.timbre_rate_bps) {
                    return bad(format!("timbre_rate_bps must be > 0, got {}", self.timbre_rate_bps));
                }
                if self.codec().nominal_bps().is_none() {
                    return bad(format!("unknown codec_id {}", self.codec_id));
                }
                if self.timbre_chunk_bytes == 0 || self.timbre_chunk_bytes > 60_000 {
                    return bad(format!("timbre_chunk_bytes must be in 1..=60000, got {}", self.timbre_chunk_bytes));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: SenderConfig =
            serde_json::from_str(s).map_err(|e| ConfigError::Syntax { line: e.line(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_kv_str(s: &str) -> Result<Self, ConfigError> {
        let mut map = Map::new();
        for (i, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            let v = v.trim();
            let value = serde_json::from_str::<Value>(v).unwrap_or_else(|_| Value::String(v.into()));
            map.insert(k.trim().to_string(), value);
        }
        let cfg: SenderConfig = serde_json::from_value(Value::Object(map))
            .map_err(|e| ConfigError::Syntax { line: 0, message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        if s.trim_start().starts_with('{') {
            Self::from_json_str(s)
        } else {
            Self::from_kv_str(s)
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn d_sample_ms(&self) -> u16 {
        (self.d_sample_s * 1000.0).round() as u16
    }
}
