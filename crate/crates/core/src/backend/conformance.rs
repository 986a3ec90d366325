//! Shape and range checks that every backend must pass.

use super::{AudioHandle, Backend};
use crate::bits::CODEBOOK_SIZE;
use crate::wire::{CodecId, EMBED_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> ConformanceCheck {
    ConformanceCheck { name, passed, detail: detail.into() }
}

/// Runs the contract suite against `backend` using a sample utterance of
/// known duration.
pub fn run_conformance(
    backend: &dyn Backend,
    sample: &AudioHandle,
    duration_s: f64,
    codec: CodecId,
) -> Vec<ConformanceCheck> {
    let mut out = Vec::new();

    match backend.tokenize(sample) {
        Ok(tokens) => {
            let expected = (duration_s * 50.0).round() as usize;
            let max = tokens.iter().map(|t| t.value()).max().unwrap_or(0);
            out.push(check(
                "token_range",
                tokens.iter().all(|t| t.value() < CODEBOOK_SIZE),
                format!("max token {max}"),
            ));
            out.push(check(
                "token_rate",
                tokens.len() == expected,
                format!("{} tokens for {duration_s} s, expected {expected}", tokens.len()),
            ));
        }
        Err(e) => out.push(check("tokenize", false, e.to_string())),
    }

    match backend.extract_embedding(sample) {
        Ok(z) => {
            out.push(check("embedding_dim", z.len() == EMBED_DIM, format!("{} components", z.len())));
            out.push(check(
                "embedding_range",
                z.iter().all(|x| x.is_finite() && (-1.0..=1.0).contains(x)),
                "components finite and within [-1, 1]",
            ));
            out.push(match backend.timbre_from_embedding(&z) {
                Ok(t) => check("timbre_from_embedding", true, t.0),
                Err(e) => check("timbre_from_embedding", false, e.to_string()),
            });
        }
        Err(e) => out.push(check("extract_embedding", false, e.to_string())),
    }

    let roundtrip = backend
        .codec_encode(sample, codec)
        .and_then(|bytes| backend.codec_decode(&bytes, codec))
        .and_then(|audio| backend.timbre_from_audio(&audio));
    out.push(match roundtrip {
        Ok(t) => check("codec_roundtrip_timbre", true, t.0),
        Err(e) => check("codec_roundtrip_timbre", false, e.to_string()),
    });

    let synth = backend.tokenize(sample).and_then(|tokens| backend.synthesize(&tokens, &backend.stock_timbre()));
    out.push(match synth {
        Ok(_) => check("synthesize_stock", true, "ok"),
        Err(e) => check("synthesize_stock", false, e.to_string()),
    });
    out
}
