//! Contract between the link engines and the speech models.
//!
//! The engines never look inside audio or timbre: audio travels as an
//! [`AudioHandle`] and timbre as an opaque [`TimbreRef`]. Implementations
//! must tolerate concurrent calls from independent sessions.

mod bridge;
mod conformance;
mod mock;

pub use bridge::{BridgeBackend, BridgeRequest, BridgeResponse};
pub use conformance::{run_conformance, ConformanceCheck};
pub use mock::{MockBackend, MockTranscript, MOCK_LEXICON};

use crate::bits::SemanticToken;
use crate::wire::CodecId;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use thiserror::Error;

/// The four emotion classes used for style agreement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    #[default]
    Neutral,
    Happy,
    Sad,
    Angry,
}

impl Style {
    pub const ALL: [Style; 4] = [Style::Neutral, Style::Happy, Style::Sad, Style::Angry];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Style {
        Style::ALL[(i & 3) as usize]
    }
}

/// A labeled utterance: enough structure for the mock backend to stand in
/// for real audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub speaker: String,
    pub words: Vec<String>,
    #[serde(default)]
    pub style: Style,
    pub duration_s: f64,
}

impl Clip {
    /// Canonical text rendering, e.g. `[alice/happy] the cat sat`.
    pub fn render(&self) -> String {
        let style = serde_json::to_value(self.style).unwrap();
        let mut s = format!("[{}/{}]", self.speaker, style.as_str().unwrap());
        for w in &self.words {
            s.push(' ');
            s.push_str(w);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AudioHandle {
    Clip(Clip),
    File(PathBuf),
}

/// Opaque timbre handle produced by a backend.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimbreRef(pub String);

impl TimbreRef {
    pub fn stock() -> Self {
        TimbreRef("stock".to_string())
    }

    pub fn is_stock(&self) -> bool {
        self.0 == "stock"
    }
}

impl fmt::Display for TimbreRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("invalid input: {0}")]
    Domain(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("bridge protocol error: {0}")]
    Protocol(String),
    #[error("{op} failed: {message}")]
    Remote { op: String, message: String },
}

pub trait Backend: Send + Sync {
    fn tokenize(&self, audio: &AudioHandle) -> Result<Vec<SemanticToken>, BackendError>;
    /// 128 components, normalized into [-1, 1].
    fn extract_embedding(&self, audio: &AudioHandle) -> Result<Vec<f64>, BackendError>;
    fn codec_encode(&self, audio: &AudioHandle, codec: CodecId) -> Result<Vec<u8>, BackendError>;
    fn codec_decode(&self, bytes: &[u8], codec: CodecId) -> Result<AudioHandle, BackendError>;
    fn timbre_from_audio(&self, audio: &AudioHandle) -> Result<TimbreRef, BackendError>;
    fn timbre_from_embedding(&self, embedding: &[f64]) -> Result<TimbreRef, BackendError>;
    fn synthesize(&self, tokens: &[SemanticToken], timbre: &TimbreRef) -> Result<AudioHandle, BackendError>;

    fn stock_timbre(&self) -> TimbreRef {
        TimbreRef::stock()
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn tokenize(&self, audio: &AudioHandle) -> Result<Vec<SemanticToken>, BackendError> {
        (**self).tokenize(audio)
    }
    fn extract_embedding(&self, audio: &AudioHandle) -> Result<Vec<f64>, BackendError> {
        (**self).extract_embedding(audio)
    }
    fn codec_encode(&self, audio: &AudioHandle, codec: CodecId) -> Result<Vec<u8>, BackendError> {
        (**self).codec_encode(audio, codec)
    }
    fn codec_decode(&self, bytes: &[u8], codec: CodecId) -> Result<AudioHandle, BackendError> {
        (**self).codec_decode(bytes, codec)
    }
    fn timbre_from_audio(&self, audio: &AudioHandle) -> Result<TimbreRef, BackendError> {
        (**self).timbre_from_audio(audio)
    }
    fn timbre_from_embedding(&self, embedding: &[f64]) -> Result<TimbreRef, BackendError> {
        (**self).timbre_from_embedding(embedding)
    }
    fn synthesize(&self, tokens: &[SemanticToken], timbre: &TimbreRef) -> Result<AudioHandle, BackendError> {
        (**self).synthesize(tokens, timbre)
    }
    fn stock_timbre(&self) -> TimbreRef {
        (**self).stock_timbre()
    }
}

/// 64-bit FNV-1a followed by a splitmix finalizer. Stable across platforms
/// and toolchains, unlike `std`'s hasher.
pub(crate) fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // Separator so ("ab","c") and ("a","bc") differ.
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
