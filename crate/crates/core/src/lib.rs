//! Semantic speech link: 13-bit content-style tokens streamed at 50 Hz, with
//! speaker timbre sent once per speaker, a noisy-channel simulator and
//! rate/latency analysis.

pub mod analysis;
pub mod backend;
pub mod bits;
pub mod channel;
pub mod events;
pub mod log;
pub mod pipeline;
pub mod receiver;
pub mod sender;
pub mod wire;
