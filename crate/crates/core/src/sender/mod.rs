//! Sender state machine.
//!
//! Consumes token chunks and diarization events and emits timestamped
//! frames. Timbre frames are scheduled ahead of time and released as the
//! event clock passes their due time, so callers must keep feeding events
//! (or `Tick`s) and call [`Sender::finish`] at the end.

mod config;
mod quantize;
mod registry;
mod schedule;

pub use config::{ConfigError, SenderConfig, TimbreMode, TimbreTiming};
pub use quantize::{dequantize_embedding, quantize_embedding, QuantError};
pub use registry::{RegistryEntry, RegistryError, SpeakerRegistry, TimbreStatus};
pub use schedule::{timbre_rate, timbre_schedule, ScheduleError, SchedulePiece};

use crate::backend::{AudioHandle, Backend, BackendError};
use crate::bits::SemanticToken;
use crate::wire::{
    CodecBegin, CodecId, Frame, FrameBody, SpeakerId, StreamFlags, StreamHeader, TokenChunk, EMBED_DIM, MAX_START_TICK,
};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum SenderEvent {
    /// `t_us` is the instant the last token of the chunk became available.
    TokenChunkReady {
        t_us: u64,
        tokens: Vec<SemanticToken>,
    },
    SpeakerChange {
        t_us: u64,
        key: String,
        audio: AudioHandle,
    },
    Tick {
        t_us: u64,
    },
}

impl SenderEvent {
    pub fn t_us(&self) -> u64 {
        match self {
            SenderEvent::TokenChunkReady { t_us, .. }
            | SenderEvent::SpeakerChange { t_us, .. }
            | SenderEvent::Tick { t_us } => *t_us,
        }
    }
}

#[derive(Debug, Error)]
pub enum SenderError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stream not started")]
    NotStarted,
    #[error("stream already started")]
    AlreadyStarted,
    #[error("event at {got} us precedes the sender clock ({now} us)")]
    TimeReversed { now: u64, got: u64 },
    #[error("token tick {0} exceeds the 20-bit start_tick field")]
    TickOverflow(u64),
    #[error("frame sequence number overflow")]
    SeqOverflow,
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// A timbre transfer that failed on the backend side.
#[derive(Debug, Clone, PartialEq)]
pub struct TimbreFailure {
    pub t_us: u64,
    pub key: String,
    pub error: BackendError,
}

pub type Emitted = (u64, Frame);

#[derive(Debug)]
struct Pending {
    due: u64,
    order: u64,
    body: FrameBody,
    completes_transfer: bool,
}

#[derive(Debug)]
pub struct Sender {
    config: SenderConfig,
    registry: SpeakerRegistry,
    started: bool,
    next_seq: u32,
    now_us: u64,
    pending: Vec<Pending>,
    order: u64,
    transfer: Option<String>,
    queue: VecDeque<(u64, String, AudioHandle)>,
    /// Tokens ready inside `(start, end]` belong to a codec switch.
    suppress: Option<(u64, u64)>,
    held: Vec<TokenChunk>,
    next_tick: u64,
    dropped_tokens: u64,
    failures: Vec<TimbreFailure>,
}

fn secs_to_us(s: f64) -> u64 {
    (s * 1e6).round() as u64
}

impl Sender {
    pub fn new(config: SenderConfig) -> Result<Self, SenderError> {
        config.validate()?;
        Ok(Sender {
            config,
            registry: SpeakerRegistry::new(),
            started: false,
            next_seq: 0,
            now_us: 0,
            pending: Vec::new(),
            order: 0,
            transfer: None,
            queue: VecDeque::new(),
            suppress: None,
            held: Vec::new(),
            next_tick: 0,
            dropped_tokens: 0,
            failures: Vec::new(),
        })
    }

    pub fn config(&self) -> &SenderConfig {
        &self.config
    }

    pub fn registry(&self) -> &SpeakerRegistry {
        &self.registry
    }

    pub fn failures(&self) -> &[TimbreFailure] {
        &self.failures
    }

    /// Tokens discarded because they fell inside a codec switch window.
    pub fn dropped_tokens(&self) -> u64 {
        self.dropped_tokens
    }

    pub fn stream_header(&self) -> StreamHeader {
        let capture =
            self.config.mode == TimbreMode::CodecSwitch && self.config.timing == TimbreTiming::CaptureThenSend;
        StreamHeader {
            flags: StreamFlags::default()
                .with(StreamFlags::CRC, self.config.crc)
                .with(StreamFlags::CAPTURE_THEN_SEND, capture),
            ..StreamHeader::default()
        }
    }

    /// Emits the stream header.
    pub fn start(&mut self, t_us: u64) -> Result<Vec<Emitted>, SenderError> {
        if self.started {
            return Err(SenderError::AlreadyStarted);
        }
        self.started = true;
        self.now_us = t_us;
        let mut out = Vec::new();
        self.emit(t_us, FrameBody::StreamHeader(self.stream_header()), &mut out)?;
        Ok(out)
    }

    pub fn on_event(&mut self, event: SenderEvent, backend: &dyn Backend) -> Result<Vec<Emitted>, SenderError> {
        if !self.started {
            return Err(SenderError::NotStarted);
        }
        let t = event.t_us();
        if t < self.now_us {
            return Err(SenderError::TimeReversed { now: self.now_us, got: t });
        }
        self.now_us = t;
        let mut out = Vec::new();
        self.release(t, backend, &mut out)?;
        match event {
            SenderEvent::Tick { .. } => {}
            SenderEvent::TokenChunkReady { tokens, .. } => self.on_tokens(t, tokens, &mut out)?,
            SenderEvent::SpeakerChange { key, audio, .. } => {
                self.on_speaker(t, key, audio, backend)?;
                self.release(t, backend, &mut out)?;
            }
        }
        Ok(out)
    }

    /// Releases every scheduled frame and any held tokens.
    pub fn finish(&mut self, backend: &dyn Backend) -> Result<Vec<Emitted>, SenderError> {
        if !self.started {
            return Err(SenderError::NotStarted);
        }
        let mut out = Vec::new();
        self.release(u64::MAX, backend, &mut out)?;
        let t = out.last().map_or(self.now_us, |(t, _)| *t).max(self.now_us);
        self.flush_held(t, &mut out)?;
        Ok(out)
    }

    fn emit(&mut self, t: u64, body: FrameBody, out: &mut Vec<Emitted>) -> Result<(), SenderError> {
        let seq = self.next_seq;
        self.next_seq = seq.checked_add(1).ok_or(SenderError::SeqOverflow)?;
        out.push((t, Frame::new(seq, body)));
        Ok(())
    }

    fn schedule(&mut self, due: u64, body: FrameBody, completes_transfer: bool) {
        let order = self.order;
        self.order += 1;
        let at = self.pending.partition_point(|p| (p.due, p.order) <= (due, order));
        self.pending.insert(at, Pending { due, order, body, completes_transfer });
    }

    fn release(&mut self, upto: u64, backend: &dyn Backend, out: &mut Vec<Emitted>) -> Result<(), SenderError> {
        while self.pending.first().is_some_and(|p| p.due <= upto) {
            let p = self.pending.remove(0);
            self.emit(p.due, p.body, out)?;
            if p.completes_transfer {
                self.complete_transfer(p.due, backend, out)?;
            }
        }
        Ok(())
    }

    fn complete_transfer(&mut self, t: u64, backend: &dyn Backend, out: &mut Vec<Emitted>) -> Result<(), SenderError> {
        if let Some(key) = self.transfer.take() {
            self.registry.set_status(&key, TimbreStatus::Registered);
        }
        self.flush_held(t, out)?;
        while self.transfer.is_none() {
            let Some((queued_at, key, audio)) = self.queue.pop_front() else { break };
            log::debug!("processing speaker {key:?} queued at {queued_at} us");
            self.on_speaker(t, key, audio, backend)?;
        }
        Ok(())
    }

    fn flush_held(&mut self, t: u64, out: &mut Vec<Emitted>) -> Result<(), SenderError> {
        for chunk in std::mem::take(&mut self.held) {
            self.emit(t, FrameBody::Tokens(chunk), out)?;
        }
        Ok(())
    }

    fn on_tokens(&mut self, t: u64, tokens: Vec<SemanticToken>, out: &mut Vec<Emitted>) -> Result<(), SenderError> {
        let suppressed = self.suppress.is_some_and(|(a, b)| a < t && t <= b);
        for part in tokens.chunks(self.config.chunk_tokens) {
            let start = self.next_tick;
            self.next_tick += part.len() as u64;
            if start > u64::from(MAX_START_TICK) {
                return Err(SenderError::TickOverflow(start));
            }
            let chunk = TokenChunk { start_tick: start as u32, tokens: part.to_vec() };
            if !suppressed {
                self.emit(t, FrameBody::Tokens(chunk), out)?;
            } else if self.config.buffer_tokens_during_switch {
                self.held.push(chunk);
            } else {
                self.dropped_tokens += part.len() as u64;
            }
        }
        if suppressed && self.transfer.is_none() {
            // The switch ended at exactly `t`; its END frame is already out.
            self.flush_held(t, out)?;
        }
        Ok(())
    }

    fn on_speaker(
        &mut self,
        t: u64,
        key: String,
        audio: AudioHandle,
        backend: &dyn Backend,
    ) -> Result<(), SenderError> {
        if let Some(current) = &self.transfer {
            log::info!("speaker {key:?} at {t} us queued behind transfer for {current:?}");
            self.queue.push_back((t, key, audio));
            return Ok(());
        }
        let entry = self.registry.entry(&key)?;
        let id = entry.id;
        if entry.status == TimbreStatus::Registered {
            self.schedule(t, FrameBody::SpeakerSwitchKnown { speaker_id: id }, false);
            return Ok(());
        }
        let started = match self.config.mode {
            TimbreMode::TimbreFree => {
                self.registry.set_status(&key, TimbreStatus::Registered);
                self.schedule(t, FrameBody::SpeakerSwitchKnown { speaker_id: id }, false);
                return Ok(());
            }
            TimbreMode::SpeakerEmbedding => self.start_embedding(t, id, &audio, backend),
            TimbreMode::CodecSwitch => self.start_codec(t, id, &audio, backend),
        };
        match started {
            Ok(()) => {
                self.registry.set_status(&key, TimbreStatus::InFlight);
                self.transfer = Some(key);
            }
            Err(error) => {
                log::warn!("timbre for speaker {key:?} failed, receiver keeps stock: {error}");
                self.registry.set_status(&key, TimbreStatus::None);
                self.schedule(t, FrameBody::SpeakerSwitchKnown { speaker_id: id }, false);
                self.failures.push(TimbreFailure { t_us: t, key, error });
            }
        }
        Ok(())
    }

    /// BEGIN marks detection; the embedding is on air from `t + d_sample`
    /// and arrives `d_transmit` later.
    fn start_embedding(
        &mut self,
        t: u64,
        id: SpeakerId,
        audio: &AudioHandle,
        backend: &dyn Backend,
    ) -> Result<(), BackendError> {
        let z = backend.extract_embedding(audio)?;
        let embedding = quantize_embedding(&z).map_err(|e| BackendError::Domain(e.to_string()))?;
        let due = t + secs_to_us(self.config.d_sample_s) + secs_to_us(self.config.d_transmit_s);
        self.schedule(
            t,
            FrameBody::TimbreCodecBegin(CodecBegin {
                speaker_id: id,
                codec_id: CodecId::EMBEDDING,
                d_sample_ms: self.config.d_sample_ms(),
                total_payload_bytes: EMBED_DIM as u32,
            }),
            false,
        );
        self.schedule(due, FrameBody::TimbreEmbed { speaker_id: id, embedding }, true);
        Ok(())
    }

    fn start_codec(
        &mut self,
        t: u64,
        id: SpeakerId,
        audio: &AudioHandle,
        backend: &dyn Backend,
    ) -> Result<(), BackendError> {
        let codec = self.config.codec();
        let bytes = backend.codec_encode(audio, codec)?;
        let domain = |m: String| BackendError::Domain(m);
        if bytes.is_empty() {
            return Err(domain("codec produced no bytes".into()));
        }
        let total = u32::try_from(bytes.len()).map_err(|_| domain("codec payload too large".into()))?;
        let nominal = f64::from(codec.nominal_bps().expect("validated codec"));
        let (start, rate) = match self.config.timing {
            // Bytes cannot leave faster than the codec produces them.
            TimbreTiming::Live => (t, self.config.timbre_rate_bps.min(nominal)),
            TimbreTiming::CaptureThenSend => (t + secs_to_us(self.config.d_sample_s), self.config.timbre_rate_bps),
        };
        let pieces = schedule::schedule_at_rate(&self.config, bytes.len() as u64 * 8, rate)
            .map_err(|e| domain(e.to_string()))?;
        if pieces.len() > usize::from(u16::MAX) + 1 {
            return Err(domain(format!("{} codec chunks exceed the chunk index", pieces.len())));
        }
        self.schedule(
            start,
            FrameBody::TimbreCodecBegin(CodecBegin {
                speaker_id: id,
                codec_id: codec,
                d_sample_ms: self.config.d_sample_ms(),
                total_payload_bytes: total,
            }),
            false,
        );
        let mut pos = 0;
        let mut end = start;
        for (i, piece) in pieces.iter().enumerate() {
            end = start + secs_to_us(piece.offset_s);
            let body = FrameBody::TimbreCodecData {
                speaker_id: id,
                chunk_index: i as u16,
                bytes: bytes[pos..pos + piece.bytes].to_vec(),
            };
            pos += piece.bytes;
            self.schedule(end, body, false);
        }
        self.schedule(end, FrameBody::TimbreCodecEnd { speaker_id: id }, true);
        self.suppress = Some((t, end));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Clip, MockBackend, Style, TimbreRef};
    use crate::wire::FrameKind;

    fn audio(key: &str, secs: f64) -> AudioHandle {
        AudioHandle::Clip(Clip { speaker: key.into(), words: vec![], style: Style::Neutral, duration_s: secs })
    }

    fn speaker(t_us: u64, key: &str) -> SenderEvent {
        SenderEvent::SpeakerChange { t_us, key: key.into(), audio: audio(key, 4.0) }
    }

    fn tokens(t_us: u64, n: usize) -> SenderEvent {
        SenderEvent::TokenChunkReady { t_us, tokens: vec![SemanticToken::new(5).unwrap(); n] }
    }

    fn run(cfg: SenderConfig, events: Vec<SenderEvent>, b: &dyn Backend) -> (Sender, Vec<Emitted>) {
        let mut s = Sender::new(cfg).unwrap();
        let mut out = s.start(0).unwrap();
        for e in events {
            out.extend(s.on_event(e, b).unwrap());
        }
        out.extend(s.finish(b).unwrap());
        (s, out)
    }

    fn kinds(out: &[Emitted]) -> Vec<FrameKind> {
        out.iter().map(|(_, f)| f.kind()).collect()
    }

    fn count(out: &[Emitted], k: FrameKind) -> usize {
        out.iter().filter(|(_, f)| f.kind() == k).count()
    }

    fn codec_cfg() -> SenderConfig {
        SenderConfig { mode: TimbreMode::CodecSwitch, d_sample_s: 4.0, timbre_rate_bps: 1500.0, ..Default::default() }
    }

    #[test]
    fn embedding_transfer_for_new_speaker() {
        let m = MockBackend::new(1);
        let mut s = Sender::new(SenderConfig::default()).unwrap();
        s.start(0).unwrap();
        let out = s.on_event(speaker(0, "alice"), &m).unwrap();
        assert_eq!(kinds(&out), vec![FrameKind::TimbreCodecBegin]);
        assert_eq!(s.registry().get("alice").unwrap().status, TimbreStatus::InFlight);
        let out = s.on_event(SenderEvent::Tick { t_us: 2_000_000 }, &m).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, 2_000_000);
        assert_eq!(out[0].1.kind(), FrameKind::TimbreEmbed);
        assert_eq!(s.registry().get("alice").unwrap().status, TimbreStatus::Registered);

        let out = s.on_event(speaker(3_000_000, "alice"), &m).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].1.body, FrameBody::SpeakerSwitchKnown { speaker_id: SpeakerId(0) });
    }

    #[test]
    fn timbre_free_token_frame_size() {
        let cfg = SenderConfig { mode: TimbreMode::TimbreFree, ..Default::default() };
        let (_, out) = run(cfg, vec![tokens(400_000, 20)], &MockBackend::new(1));
        assert_eq!(kinds(&out), vec![FrameKind::StreamHeader, FrameKind::Tokens]);
        // 12 + 20 + 13 * 20 = 292 bits -> 37 bytes.
        assert_eq!(out[1].1.to_bytes(false).unwrap().len(), 7 + 37);
    }

    #[test]
    fn registry_idempotence_and_density() {
        for mode in [TimbreMode::SpeakerEmbedding, TimbreMode::CodecSwitch] {
            let cfg = SenderConfig { mode, ..codec_cfg() };
            let keys = ["a", "b", "a", "c", "a", "b", "a"];
            let events = keys.iter().enumerate().map(|(i, k)| speaker(i as u64 * 20_000_000, k)).collect();
            let (s, out) = run(cfg, events, &MockBackend::new(2));
            assert_eq!(count(&out, FrameKind::TimbreCodecBegin), 3, "{mode:?}");
            assert_eq!(count(&out, FrameKind::SpeakerSwitchKnown), keys.len() - 3);
            let ids: Vec<u16> = s.registry().keys().iter().map(|k| s.registry().get(k).unwrap().id.0).collect();
            assert_eq!(ids, vec![0, 1, 2]);
        }
    }

    #[test]
    fn seq_and_time_monotone() {
        let events = (0..50u64)
            .flat_map(|i| {
                let t = i * 400_000;
                let mut v = vec![tokens(t, 20)];
                if i % 7 == 0 {
                    v.push(speaker(t, ["x", "y", "z"][(i % 3) as usize]));
                }
                v
            })
            .collect();
        let (_, out) = run(codec_cfg(), events, &MockBackend::new(3));
        for (i, (_, f)) in out.iter().enumerate() {
            assert_eq!(f.seq, i as u32);
        }
        assert!(out.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    #[test]
    fn embedding_mode_keeps_streaming_tokens() {
        let mut events = vec![speaker(0, "a")];
        events.extend((1..=20).map(|i| tokens(i * 400_000, 20)));
        let (_, out) = run(SenderConfig::default(), events, &MockBackend::new(4));
        let sent: usize = out
            .iter()
            .filter_map(|(_, f)| match &f.body {
                FrameBody::Tokens(c) => Some(c.tokens.len()),
                _ => None,
            })
            .sum();
        assert_eq!(sent, 400);
        let ticks: Vec<u32> = out
            .iter()
            .filter_map(|(_, f)| match &f.body {
                FrameBody::Tokens(c) => Some(c.start_tick),
                _ => None,
            })
            .collect();
        assert_eq!(ticks, (0..20).map(|i| i * 20).collect::<Vec<_>>());
    }

    #[test]
    fn codec_payload_conserved_and_paced() {
        let m = MockBackend::new(5);
        let (_, out) = run(codec_cfg(), vec![speaker(1_000_000, "a")], &m);
        let data: Vec<u8> = out
            .iter()
            .flat_map(|(_, f)| match &f.body {
                FrameBody::TimbreCodecData { bytes, .. } => bytes.clone(),
                _ => vec![],
            })
            .collect();
        let expected = m.codec_encode(&audio("a", 4.0), CodecId::ENCODEC_1K5).unwrap();
        assert_eq!(data.len(), 750);
        assert_eq!(data, expected);
        let begin = out.iter().find(|(_, f)| f.kind() == FrameKind::TimbreCodecBegin).unwrap();
        let end = out.iter().find(|(_, f)| f.kind() == FrameKind::TimbreCodecEnd).unwrap();
        assert_eq!(begin.0, 1_000_000);
        assert_eq!(end.0, 5_000_000);
    }

    #[test]
    fn capture_then_send_starts_after_capture() {
        let cfg = SenderConfig { timing: TimbreTiming::CaptureThenSend, ..codec_cfg() };
        let (s, out) = run(cfg, vec![speaker(0, "a")], &MockBackend::new(5));
        assert!(s.stream_header().flags.capture_then_send());
        let begin = out.iter().find(|(_, f)| f.kind() == FrameKind::TimbreCodecBegin).unwrap();
        let end = out.iter().find(|(_, f)| f.kind() == FrameKind::TimbreCodecEnd).unwrap();
        assert_eq!((begin.0, end.0), (4_000_000, 8_000_000));
    }

    #[test]
    fn below_nominal_rate_stretches_transfer() {
        let cfg = SenderConfig { timbre_rate_bps: 1000.0, ..codec_cfg() };
        let (_, out) = run(cfg, vec![speaker(0, "a")], &MockBackend::new(5));
        let end = out.iter().find(|(_, f)| f.kind() == FrameKind::TimbreCodecEnd).unwrap();
        assert_eq!(end.0, 6_000_000);
    }

    #[test]
    fn codec_switch_drops_tokens_in_window() {
        let mut events = vec![tokens(0, 20), speaker(0, "a")];
        events.extend((1..=15).map(|i| tokens(i * 400_000, 20)));
        let (s, out) = run(codec_cfg(), events, &MockBackend::new(6));
        // Chunks ready at 0.4 .. 4.0 s fall inside the switch.
        assert_eq!(s.dropped_tokens(), 200);
        let ticks: Vec<u32> = out
            .iter()
            .filter_map(|(_, f)| match &f.body {
                FrameBody::Tokens(c) => Some(c.start_tick),
                _ => None,
            })
            .collect();
        assert_eq!(ticks, vec![0, 220, 240, 260, 280, 300]);
    }

    #[test]
    fn buffered_tokens_burst_after_end() {
        let cfg = SenderConfig { buffer_tokens_during_switch: true, ..codec_cfg() };
        let mut events = vec![speaker(0, "a")];
        events.extend((1..=12).map(|i| tokens(i * 400_000, 20)));
        let (s, out) = run(cfg, events, &MockBackend::new(6));
        assert_eq!(s.dropped_tokens(), 0);
        let end_at = out.iter().position(|(_, f)| f.kind() == FrameKind::TimbreCodecEnd).unwrap();
        let burst: Vec<&Emitted> = out[end_at + 1..].iter().take(10).collect();
        assert!(burst.iter().all(|(t, f)| *t == 4_000_000 && f.kind() == FrameKind::Tokens));
        let ticks: Vec<u32> = out
            .iter()
            .filter_map(|(_, f)| match &f.body {
                FrameBody::Tokens(c) => Some(c.start_tick),
                _ => None,
            })
            .collect();
        assert_eq!(ticks, (0..12).map(|i| i * 20).collect::<Vec<_>>());
    }

    #[test]
    fn speakers_queue_behind_transfer() {
        let events = vec![speaker(0, "a"), speaker(500_000, "b"), speaker(600_000, "a")];
        let (_, out) = run(codec_cfg(), events, &MockBackend::new(7));
        let summary: Vec<(u64, FrameKind)> =
            out.iter().filter(|(_, f)| f.kind() != FrameKind::TimbreCodecData).map(|(t, f)| (*t, f.kind())).collect();
        assert_eq!(
            summary,
            vec![
                (0, FrameKind::StreamHeader),
                (0, FrameKind::TimbreCodecBegin),
                (4_000_000, FrameKind::TimbreCodecEnd),
                (4_000_000, FrameKind::TimbreCodecBegin),
                (8_000_000, FrameKind::TimbreCodecEnd),
                (8_000_000, FrameKind::SpeakerSwitchKnown),
            ]
        );
    }

    struct Broken;

    impl Backend for Broken {
        fn tokenize(&self, _: &AudioHandle) -> Result<Vec<SemanticToken>, BackendError> {
            Err(BackendError::Unavailable("down".into()))
        }
        fn extract_embedding(&self, _: &AudioHandle) -> Result<Vec<f64>, BackendError> {
            Err(BackendError::Unavailable("down".into()))
        }
        fn codec_encode(&self, _: &AudioHandle, _: CodecId) -> Result<Vec<u8>, BackendError> {
            Err(BackendError::Unavailable("down".into()))
        }
        fn codec_decode(&self, _: &[u8], _: CodecId) -> Result<AudioHandle, BackendError> {
            Err(BackendError::Unavailable("down".into()))
        }
        fn timbre_from_audio(&self, _: &AudioHandle) -> Result<TimbreRef, BackendError> {
            Err(BackendError::Unavailable("down".into()))
        }
        fn timbre_from_embedding(&self, _: &[f64]) -> Result<TimbreRef, BackendError> {
            Err(BackendError::Unavailable("down".into()))
        }
        fn synthesize(&self, _: &[SemanticToken], _: &TimbreRef) -> Result<AudioHandle, BackendError> {
            Err(BackendError::Unavailable("down".into()))
        }
    }

    #[test]
    fn backend_failure_falls_back_and_retries() {
        let mut s = Sender::new(SenderConfig::default()).unwrap();
        s.start(0).unwrap();
        let out = s.on_event(speaker(0, "a"), &Broken).unwrap();
        assert_eq!(out[0].1.body, FrameBody::SpeakerSwitchKnown { speaker_id: SpeakerId(0) });
        assert_eq!(s.registry().get("a").unwrap().status, TimbreStatus::None);
        assert_eq!(s.failures().len(), 1);
        let out = s.on_event(speaker(1_000_000, "a"), &MockBackend::new(1)).unwrap();
        assert_eq!(out[0].1.kind(), FrameKind::TimbreCodecBegin);
        assert_eq!(s.registry().get("a").unwrap().id, SpeakerId(0));
    }

    #[test]
    fn rejects_misuse() {
        let m = MockBackend::new(1);
        let mut s = Sender::new(SenderConfig::default()).unwrap();
        assert!(matches!(s.on_event(tokens(0, 1), &m), Err(SenderError::NotStarted)));
        s.start(0).unwrap();
        assert!(matches!(s.start(0), Err(SenderError::AlreadyStarted)));
        s.on_event(tokens(10, 1), &m).unwrap();
        assert!(matches!(s.on_event(tokens(5, 1), &m), Err(SenderError::TimeReversed { .. })));
    }

    #[test]
    fn oversized_chunks_are_split() {
        let cfg = SenderConfig { mode: TimbreMode::TimbreFree, chunk_tokens: 20, ..Default::default() };
        let (_, out) = run(cfg, vec![tokens(1_000_000, 50)], &MockBackend::new(1));
        let sizes: Vec<(u32, usize)> = out
            .iter()
            .filter_map(|(_, f)| match &f.body {
                FrameBody::Tokens(c) => Some((c.start_tick, c.tokens.len())),
                _ => None,
            })
            .collect();
        assert_eq!(sizes, vec![(0, 20), (20, 20), (40, 10)]);
    }
}
