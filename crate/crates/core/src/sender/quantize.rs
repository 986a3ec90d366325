//! Fixed-range 8-bit quantization of speaker embeddings.

use crate::wire::{QuantizedEmbedding, EMBED_DIM};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("embedding has {got} components, expected {EMBED_DIM}")]
    WrongDimension { got: usize },
    #[error("embedding component {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
}

/// `code = round(255 * (clamp(z, -1, 1) + 1) / 2)`, ties away from zero.
pub fn quantize_embedding(z: &[f64]) -> Result<QuantizedEmbedding, QuantError> {
    if z.len() != EMBED_DIM {
        return Err(QuantError::WrongDimension { got: z.len() });
    }
    let mut codes = [0u8; EMBED_DIM];
    for (i, (&v, c)) in z.iter().zip(codes.iter_mut()).enumerate() {
        if !v.is_finite() {
            return Err(QuantError::NonFinite { index: i, value: v });
        }
        // f64::round rounds half away from zero.
        *c = (255.0 * (v.clamp(-1.0, 1.0) + 1.0) / 2.0).round() as u8;
    }
    Ok(QuantizedEmbedding::new(codes))
}

pub fn dequantize_embedding(q: &QuantizedEmbedding) -> Vec<f64> {
    q.codes().iter().map(|&c| 2.0 * f64::from(c) / 255.0 - 1.0).collect()
}
