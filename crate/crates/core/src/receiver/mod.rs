//! Receiver state machine.
//!
//! Turns received frames into synthesis requests. Timbre arrives once per
//! speaker and is cached; until it does, the stock voice is used.

mod latency;

pub use latency::{measure_latency, LatencyError, LatencyRecord};

use crate::backend::{Backend, BackendError, TimbreRef};
use crate::bits::SemanticToken;
use crate::log::stream_flags;
use crate::sender::dequantize_embedding;
use crate::wire::{CodecBegin, CodecId, Frame, FrameBody, FrameError, FrameKind, FrameParser, Parsed, SpeakerId};
use serde_json::{json, Value};
use std::collections::HashMap;

/// Largest timbre payload the receiver will reassemble.
pub const MAX_TIMBRE_BYTES: usize = 2 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverPolicy {
    /// Hold synthesis for a speaker whose timbre is still in transit.
    pub wait_for_timbre: bool,
    /// Tokens per synthesis request.
    pub batch_tokens: usize,
    /// Strict frame parsing.
    pub strict: bool,
}

impl Default for ReceiverPolicy {
    fn default() -> Self {
        ReceiverPolicy { wait_for_timbre: false, batch_tokens: 50, strict: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimbreLabel {
    Stock,
    Speaker(SpeakerId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Synthesize {
        t_us: u64,
        speaker: Option<SpeakerId>,
        tokens: Vec<SemanticToken>,
        timbre: TimbreLabel,
        timbre_ref: TimbreRef,
    },
    Latency {
        t_us: u64,
        record: LatencyRecord,
    },
    Warning {
        t_us: u64,
        message: String,
    },
}

impl Action {
    pub fn to_json(&self) -> Value {
        match self {
            Action::Synthesize { t_us, speaker, tokens, timbre, timbre_ref } => {
                let timbre = match timbre {
                    TimbreLabel::Stock => json!("stock"),
                    TimbreLabel::Speaker(id) => json!(id.0),
                };
                let tokens: Vec<u16> = tokens.iter().map(|t| t.value()).collect();
                json!({
                    "t_us": t_us,
                    "act": "synthesize",
                    "speaker": speaker.map(|s| s.0),
                    "tokens": tokens,
                    "timbre": timbre,
                    "timbre_ref": timbre_ref.0,
                })
            }
            Action::Latency { t_us, record } => {
                let mut v = serde_json::to_value(record).expect("record serializes");
                v["t_us"] = json!(t_us);
                v["act"] = json!("latency");
                v
            }
            Action::Warning { t_us, message } => {
                json!({ "t_us": t_us, "act": "warning", "message": message })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReceiverStats {
    pub frames: u64,
    pub tokens: u64,
    pub unknown_kinds: u64,
    pub parse_errors: u64,
    pub discarded_transfers: u64,
}

#[derive(Debug)]
enum Transfer {
    Codec { begin_us: u64, begin: CodecBegin, next_index: u32, bytes: Vec<u8> },
    Embedding { begin_us: u64, d_sample_ms: u16 },
}

#[derive(Debug)]
pub struct Receiver {
    policy: ReceiverPolicy,
    header_seen: bool,
    warned_headerless: bool,
    crc: bool,
    capture_then_send: bool,
    stock: TimbreRef,
    cache: HashMap<SpeakerId, TimbreRef>,
    active: Option<SpeakerId>,
    transfers: HashMap<SpeakerId, Transfer>,
    batch: Vec<SemanticToken>,
    last_t: u64,
    held: Vec<(u64, Option<SpeakerId>, Vec<SemanticToken>)>,
    stats: ReceiverStats,
    backend_errors: Vec<BackendError>,
}

impl Receiver {
    pub fn new(policy: ReceiverPolicy, stock: TimbreRef) -> Self {
        Receiver {
            policy: ReceiverPolicy { batch_tokens: policy.batch_tokens.max(1), ..policy },
            header_seen: false,
            warned_headerless: false,
            crc: false,
            capture_then_send: false,
            stock,
            cache: HashMap::new(),
            active: None,
            transfers: HashMap::new(),
            batch: Vec::new(),
            last_t: 0,
            held: Vec::new(),
            stats: ReceiverStats::default(),
            backend_errors: Vec::new(),
        }
    }

    pub fn stats(&self) -> ReceiverStats {
        self.stats
    }

    pub fn backend_errors(&self) -> &[BackendError] {
        &self.backend_errors
    }

    pub fn active_speaker(&self) -> Option<SpeakerId> {
        self.active
    }

    pub fn cached_timbre(&self, id: SpeakerId) -> Option<&TimbreRef> {
        self.cache.get(&id)
    }

    /// Drops every cached timbre.
    pub fn reset_cache(&mut self) {
        self.cache.clear();
    }

    /// Parses one serialized frame and processes it.
    pub fn on_record(&mut self, t_us: u64, bytes: &[u8], backend: &dyn Backend) -> Vec<Action> {
        let mut crc = self.crc;
        if let Some(flags) = stream_flags(bytes) {
            crc = flags.crc();
        }
        let parser = FrameParser { strict: self.policy.strict, crc };
        let mut out = Vec::new();
        match parser.parse(bytes) {
            Ok(Parsed::Complete { frame, warnings, .. }) => {
                for w in warnings {
                    out.push(Action::Warning { t_us, message: format!("frame {}: {w:?}", frame.seq) });
                }
                out.extend(self.on_frame(t_us, &frame, backend));
            }
            Ok(Parsed::NeedMoreData { needed }) => {
                self.stats.parse_errors += 1;
                out.push(Action::Warning {
                    t_us,
                    message: format!("truncated frame: {} of {needed} bytes", bytes.len()),
                });
            }
            Err(FrameError::UnknownKind { kind, .. }) => {
                self.stats.unknown_kinds += 1;
                log::debug!("skipping unknown frame kind 0x{kind:02X}");
            }
            Err(e) => {
                self.stats.parse_errors += 1;
                out.push(Action::Warning { t_us, message: e.to_string() });
            }
        }
        out
    }

    pub fn on_frame(&mut self, t_us: u64, frame: &Frame, backend: &dyn Backend) -> Vec<Action> {
        let mut out = Vec::new();
        self.stats.frames += 1;
        self.last_t = self.last_t.max(t_us);
        if !self.header_seen && frame.kind() != FrameKind::StreamHeader && !self.warned_headerless {
            self.warned_headerless = true;
            out.push(Action::Warning { t_us, message: "frames before stream header".into() });
        }
        match &frame.body {
            FrameBody::StreamHeader(h) => {
                self.header_seen = true;
                self.crc = h.flags.crc();
                self.capture_then_send = h.flags.capture_then_send();
            }
            FrameBody::Tokens(chunk) => {
                self.stats.tokens += chunk.tokens.len() as u64;
                for &tok in &chunk.tokens {
                    self.batch.push(tok);
                    if self.batch.len() >= self.policy.batch_tokens {
                        self.cut_batch(t_us, &mut out);
                    }
                }
            }
            FrameBody::SpeakerSwitchKnown { speaker_id } => {
                self.cut_batch(t_us, &mut out);
                self.active = Some(*speaker_id);
                if !self.cache.contains_key(speaker_id) && !self.transfers.contains_key(speaker_id) {
                    out.push(Action::Warning {
                        t_us,
                        message: format!("no timbre for speaker {speaker_id}; using stock"),
                    });
                }
            }
            FrameBody::TimbreCodecBegin(b) => {
                self.cut_batch(t_us, &mut out);
                self.active = Some(b.speaker_id);
                let transfer = if b.codec_id == CodecId::EMBEDDING {
                    Transfer::Embedding { begin_us: t_us, d_sample_ms: b.d_sample_ms }
                } else if b.total_payload_bytes as usize > MAX_TIMBRE_BYTES {
                    self.discard(t_us, b.speaker_id, "announced payload exceeds 2 MiB", &mut out);
                    return out;
                } else {
                    Transfer::Codec {
                        begin_us: t_us,
                        begin: *b,
                        next_index: 0,
                        bytes: Vec::with_capacity(b.total_payload_bytes as usize),
                    }
                };
                if self.transfers.insert(b.speaker_id, transfer).is_some() {
                    out.push(Action::Warning {
                        t_us,
                        message: format!("timbre transfer for speaker {} restarted", b.speaker_id),
                    });
                }
            }
            FrameBody::TimbreCodecData { speaker_id, chunk_index, bytes } => {
                let problem = match self.transfers.get_mut(speaker_id) {
                    Some(Transfer::Codec { begin, next_index, bytes: buf, .. }) => {
                        if u32::from(*chunk_index) != *next_index {
                            Some(format!("expected chunk {next_index}, got {chunk_index}"))
                        } else if buf.len() + bytes.len() > begin.total_payload_bytes as usize {
                            Some("more data than announced".to_string())
                        } else {
                            buf.extend_from_slice(bytes);
                            *next_index += 1;
                            None
                        }
                    }
                    _ => {
                        out.push(Action::Warning {
                            t_us,
                            message: format!("timbre data for speaker {speaker_id} without BEGIN"),
                        });
                        None
                    }
                };
                if let Some(reason) = problem {
                    self.discard(t_us, *speaker_id, &reason, &mut out);
                }
            }
            FrameBody::TimbreCodecEnd { speaker_id } => match self.transfers.remove(speaker_id) {
                Some(Transfer::Codec { begin_us, begin, bytes, .. }) => {
                    if bytes.is_empty() || bytes.len() != begin.total_payload_bytes as usize {
                        let reason = format!("received {} of {} bytes", bytes.len(), begin.total_payload_bytes);
                        self.discard(t_us, *speaker_id, &reason, &mut out);
                    } else {
                        let timbre = backend
                            .codec_decode(&bytes, begin.codec_id)
                            .and_then(|audio| backend.timbre_from_audio(&audio));
                        self.store(t_us, *speaker_id, timbre, &mut out);
                        let record = LatencyRecord::codec(
                            *speaker_id,
                            begin.d_sample_ms,
                            begin_us,
                            t_us,
                            !self.capture_then_send,
                        );
                        out.push(Action::Latency { t_us, record });
                        self.release_held(&mut out);
                    }
                }
                other => {
                    if let Some(t) = other {
                        self.transfers.insert(*speaker_id, t);
                    }
                    out.push(Action::Warning {
                        t_us,
                        message: format!("timbre END for speaker {speaker_id} without open transfer"),
                    });
                }
            },
            FrameBody::TimbreEmbed { speaker_id, embedding } => {
                let z = dequantize_embedding(embedding);
                let timbre = backend.timbre_from_embedding(&z);
                self.store(t_us, *speaker_id, timbre, &mut out);
                match self.transfers.remove(speaker_id) {
                    Some(Transfer::Embedding { begin_us, d_sample_ms }) => {
                        match LatencyRecord::embedding(*speaker_id, d_sample_ms, begin_us, t_us) {
                            Ok(record) => out.push(Action::Latency { t_us, record }),
                            Err(e) => out.push(Action::Warning { t_us, message: e.to_string() }),
                        }
                    }
                    other => {
                        if let Some(t) = other {
                            self.transfers.insert(*speaker_id, t);
                        }
                        out.push(Action::Warning {
                            t_us,
                            message: format!("embedding for speaker {speaker_id} without BEGIN"),
                        });
                    }
                }
                self.release_held(&mut out);
            }
        }
        out
    }

    /// Flushes buffered tokens and held requests.
    pub fn finish(&mut self) -> Vec<Action> {
        let mut out = Vec::new();
        let t = self.last_t;
        self.cut_batch(t, &mut out);
        for (id, _) in std::mem::take(&mut self.transfers) {
            out.push(Action::Warning { t_us: t, message: format!("timbre transfer for speaker {id} never completed") });
        }
        self.release_held(&mut out);
        out
    }

    fn resolve(&self, speaker: Option<SpeakerId>) -> (TimbreLabel, TimbreRef) {
        match speaker.and_then(|id| self.cache.get(&id).map(|r| (id, r))) {
            Some((id, r)) => (TimbreLabel::Speaker(id), r.clone()),
            None => (TimbreLabel::Stock, self.stock.clone()),
        }
    }

    fn cut_batch(&mut self, t_us: u64, out: &mut Vec<Action>) {
        if self.batch.is_empty() {
            return;
        }
        let tokens = std::mem::take(&mut self.batch);
        let speaker = self.active;
        let waiting = speaker.is_some_and(|id| self.transfers.contains_key(&id));
        if self.policy.wait_for_timbre && (waiting || !self.held.is_empty()) {
            self.held.push((t_us, speaker, tokens));
        } else {
            let (timbre, timbre_ref) = self.resolve(speaker);
            out.push(Action::Synthesize { t_us, speaker, tokens, timbre, timbre_ref });
        }
    }

    fn release_held(&mut self, out: &mut Vec<Action>) {
        let blocked = self.held.iter().any(|(_, s, _)| s.is_some_and(|id| self.transfers.contains_key(&id)));
        if blocked {
            return;
        }
        for (t_us, speaker, tokens) in std::mem::take(&mut self.held) {
            let (timbre, timbre_ref) = self.resolve(speaker);
            out.push(Action::Synthesize { t_us, speaker, tokens, timbre, timbre_ref });
        }
    }

    fn store(&mut self, t_us: u64, id: SpeakerId, timbre: Result<TimbreRef, BackendError>, out: &mut Vec<Action>) {
        match timbre {
            Ok(r) => {
                self.cache.insert(id, r);
            }
            Err(e) => {
                let kept = if self.cache.contains_key(&id) { "previous timbre kept" } else { "using stock" };
                out.push(Action::Warning { t_us, message: format!("timbre for speaker {id} failed ({e}); {kept}") });
                self.backend_errors.push(e);
            }
        }
    }

    fn discard(&mut self, t_us: u64, id: SpeakerId, reason: &str, out: &mut Vec<Action>) {
        self.transfers.remove(&id);
        self.stats.discarded_transfers += 1;
        out.push(Action::Warning { t_us, message: format!("timbre transfer for speaker {id} discarded: {reason}") });
        self.release_held(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::sender::quantize_embedding;
    use crate::wire::{StreamHeader, TokenChunk, EMBED_DIM};

    fn rx() -> Receiver {
        let mut r = Receiver::new(ReceiverPolicy::default(), TimbreRef::stock());
        r.on_frame(0, &Frame::new(0, FrameBody::StreamHeader(StreamHeader::default())), &MockBackend::new(1));
        r
    }

    fn toks(n: usize) -> FrameBody {
        FrameBody::Tokens(TokenChunk { start_tick: 0, tokens: vec![SemanticToken::new(9).unwrap(); n] })
    }

    fn embed(id: u16) -> FrameBody {
        FrameBody::TimbreEmbed { speaker_id: SpeakerId(id), embedding: quantize_embedding(&[0.25; EMBED_DIM]).unwrap() }
    }

    fn begin(id: u16, codec: CodecId, total: u32) -> FrameBody {
        FrameBody::TimbreCodecBegin(CodecBegin {
            speaker_id: SpeakerId(id),
            codec_id: codec,
            d_sample_ms: 1000,
            total_payload_bytes: total,
        })
    }

    fn feed(r: &mut Receiver, frames: Vec<(u64, FrameBody)>) -> Vec<Action> {
        let m = MockBackend::new(1);
        let mut out = Vec::new();
        for (i, (t, body)) in frames.into_iter().enumerate() {
            out.extend(r.on_frame(t, &Frame::new(i as u32 + 1, body), &m));
        }
        out.extend(r.finish());
        out
    }

    fn synths(actions: &[Action]) -> Vec<(usize, TimbreLabel)> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Synthesize { tokens, timbre, .. } => Some((tokens.len(), *timbre)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn tokens_before_timbre_use_stock() {
        let out = feed(&mut rx(), vec![(400_000, toks(20))]);
        assert_eq!(synths(&out), vec![(20, TimbreLabel::Stock)]);
    }

    #[test]
    fn cached_timbre_used_after_switch() {
        let mut r = rx();
        let out = feed(
            &mut r,
            vec![
                (0, begin(0, CodecId::EMBEDDING, 128)),
                (2_000_000, embed(0)),
                (2_100_000, FrameBody::SpeakerSwitchKnown { speaker_id: SpeakerId(0) }),
                (2_500_000, toks(20)),
            ],
        );
        assert_eq!(synths(&out), vec![(20, TimbreLabel::Speaker(SpeakerId(0)))]);
        let lat: Vec<f64> = out
            .iter()
            .filter_map(|a| match a {
                Action::Latency { record, .. } => Some(record.l_s),
                _ => None,
            })
            .collect();
        assert_eq!(lat, vec![2.0]);
        assert!(r.cached_timbre(SpeakerId(0)).unwrap().0.starts_with("embed:"));
    }

    #[test]
    fn unknown_speaker_falls_back_with_warning() {
        let out =
            feed(&mut rx(), vec![(0, FrameBody::SpeakerSwitchKnown { speaker_id: SpeakerId(9) }), (400_000, toks(5))]);
        assert!(matches!(&out[0], Action::Warning { message, .. } if message.contains("speaker 9")));
        assert_eq!(synths(&out), vec![(5, TimbreLabel::Stock)]);
    }

    #[test]
    fn batches_of_fifty_cut_at_switch() {
        let out = feed(
            &mut rx(),
            vec![
                (1, toks(20)),
                (2, toks(20)),
                (3, toks(20)),
                (4, FrameBody::SpeakerSwitchKnown { speaker_id: SpeakerId(1) }),
                (5, toks(20)),
            ],
        );
        let sizes: Vec<usize> = synths(&out).iter().map(|s| s.0).collect();
        assert_eq!(sizes, vec![50, 10, 20]);
    }

    fn codec_transfer(id: u16, chunks: &[(u16, &[u8])], total: u32) -> Vec<(u64, FrameBody)> {
        let mut v = vec![(0, begin(id, CodecId::ENCODEC_1K5, total))];
        for (i, (idx, bytes)) in chunks.iter().enumerate() {
            v.push((
                (i as u64 + 1) * 100_000,
                FrameBody::TimbreCodecData { speaker_id: SpeakerId(id), chunk_index: *idx, bytes: bytes.to_vec() },
            ));
        }
        v.push((1_000_000, FrameBody::TimbreCodecEnd { speaker_id: SpeakerId(id) }));
        v
    }

    #[test]
    fn codec_reassembly() {
        let mut r = rx();
        let out = feed(&mut r, codec_transfer(0, &[(0, b"abcd"), (1, b"efgh")], 8));
        assert!(r.cached_timbre(SpeakerId(0)).is_some());
        let rec = out.iter().find_map(|a| match a {
            Action::Latency { record, .. } => Some(record.clone()),
            _ => None,
        });
        let rec = rec.unwrap();
        assert_eq!((rec.d_sample_s, rec.d_transmit_s, rec.l_live_s), (1.0, 1.0, Some(1.0)));
    }

    #[test]
    fn out_of_order_chunk_discards_transfer() {
        let mut r = rx();
        let out = feed(&mut r, codec_transfer(0, &[(0, b"abcd"), (2, b"efgh")], 8));
        assert!(r.cached_timbre(SpeakerId(0)).is_none());
        assert_eq!(r.stats().discarded_transfers, 1);
        assert!(!out.iter().any(|a| matches!(a, Action::Latency { .. })));
    }

    #[test]
    fn oversized_transfer_rejected() {
        let mut r = rx();
        feed(&mut r, codec_transfer(0, &[(0, b"abcd")], (MAX_TIMBRE_BYTES + 1) as u32));
        assert!(r.cached_timbre(SpeakerId(0)).is_none());
        assert_eq!(r.stats().discarded_transfers, 1);
    }

    #[test]
    fn failed_retransfer_keeps_cached_timbre() {
        let mut r = rx();
        feed(&mut r, codec_transfer(0, &[(0, b"abcdefgh")], 8));
        let first = r.cached_timbre(SpeakerId(0)).cloned().unwrap();
        feed(&mut r, codec_transfer(0, &[(0, b"abcd"), (5, b"efgh")], 8));
        assert_eq!(r.cached_timbre(SpeakerId(0)), Some(&first));
    }

    #[test]
    fn wait_for_timbre_holds_until_arrival() {
        let policy = ReceiverPolicy { wait_for_timbre: true, ..Default::default() };
        let mut r = Receiver::new(policy, TimbreRef::stock());
        let out = feed(
            &mut r,
            vec![
                (0, begin(0, CodecId::EMBEDDING, 128)),
                (400_000, toks(50)),
                (800_000, toks(50)),
                (2_000_000, embed(0)),
                (2_400_000, toks(50)),
            ],
        );
        let labels: Vec<TimbreLabel> = synths(&out).iter().map(|s| s.1).collect();
        assert_eq!(labels, vec![TimbreLabel::Speaker(SpeakerId(0)); 3]);
        let first = out.iter().position(|a| matches!(a, Action::Synthesize { .. })).unwrap();
        let latency = out.iter().position(|a| matches!(a, Action::Latency { .. })).unwrap();
        assert!(latency < first);
    }

    #[test]
    fn no_wait_never_blocks() {
        let mut r = rx();
        let out = feed(&mut r, vec![(0, begin(0, CodecId::EMBEDDING, 128)), (400_000, toks(50))]);
        assert_eq!(synths(&out), vec![(50, TimbreLabel::Stock)]);
    }

    #[test]
    fn unknown_kinds_counted() {
        let mut r = rx();
        let m = MockBackend::new(1);
        let out = r.on_record(0, &[0xEE, 0, 1, 0, 0, 0, 5, 0], &m);
        assert!(out.is_empty());
        assert_eq!(r.stats().unknown_kinds, 1);
    }

    #[test]
    fn json_lines_shape() {
        let out = feed(&mut rx(), vec![(400_000, toks(2))]);
        let v = out[0].to_json();
        assert_eq!(v["act"], "synthesize");
        assert_eq!(v["timbre"], "stock");
        assert_eq!(v["tokens"], json!([9, 9]));
        assert_eq!(v["t_us"], 400_000);
        let rec = LatencyRecord::new(SpeakerId(3), 1.0, 0.5);
        let v = Action::Latency { t_us: 5, record: rec }.to_json();
        assert_eq!(v["act"], "latency");
        assert_eq!(v["speaker"], 3);
        assert_eq!(v["L_s"], 1.5);
    }
}
