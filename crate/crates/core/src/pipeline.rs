//! End-to-end runs: events -> sender -> log -> channel -> receiver, plus the
//! mock-backed noise sweep and corpus generator.

use crate::analysis::{airtime, edit_counts, AnalysisError};
use crate::backend::{AudioHandle, Backend, BackendError, Clip, MockBackend, Style, TimbreRef};
use crate::bits::SemanticToken;
use crate::channel::{apply_bsc, ChannelConfig, ChannelError, FlipScope, FrameFilter};
use crate::events::EventRecord;
use crate::log::{log_from_frames, FrameLog};
use crate::receiver::{Action, Receiver, ReceiverPolicy, ReceiverStats};
use crate::sender::{Emitted, Sender, SenderConfig, SenderError, SenderEvent, TimbreFailure};
use crate::wire::{EncodeError, FrameBody, FrameKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sender(#[from] SenderError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// The sender-side capture handed to the backend when a speaker appears:
/// `d_sample_s` seconds of that speaker's audio.
pub fn capture_audio(key: &str, d_sample_s: f64) -> AudioHandle {
    AudioHandle::Clip(Clip {
        speaker: key.to_string(),
        words: Vec::new(),
        style: Style::Neutral,
        duration_s: d_sample_s,
    })
}

#[derive(Debug, Clone)]
pub struct EncodeOutput {
    pub frames: Vec<Emitted>,
    pub log: FrameLog,
    pub failures: Vec<TimbreFailure>,
    pub dropped_tokens: u64,
}

pub fn encode(
    events: &[EventRecord],
    config: &SenderConfig,
    backend: &dyn Backend,
) -> Result<EncodeOutput, PipelineError> {
    encode_with_capture(events, config, backend, &capture_audio)
}

/// Like [`encode`], with `capture(key, d_sample_s)` supplying each new
/// speaker's audio.
pub fn encode_with_capture(
    events: &[EventRecord],
    config: &SenderConfig,
    backend: &dyn Backend,
    capture: &dyn Fn(&str, f64) -> AudioHandle,
) -> Result<EncodeOutput, PipelineError> {
    let mut sender = Sender::new(config.clone())?;
    let mut frames = sender.start(0)?;
    for ev in events {
        let event = match ev {
            EventRecord::Speaker { t_us, key } => {
                SenderEvent::SpeakerChange { t_us: *t_us, key: key.clone(), audio: capture(key, config.d_sample_s) }
            }
            EventRecord::Tokens { t_us, values } => SenderEvent::TokenChunkReady {
                t_us: *t_us,
                tokens: values.iter().map(|&v| SemanticToken::from_masked(v)).collect(),
            },
            EventRecord::Tick { t_us } => SenderEvent::Tick { t_us: *t_us },
        };
        frames.extend(sender.on_event(event, backend)?);
    }
    frames.extend(sender.finish(backend)?);
    let log = log_from_frames(frames.iter().map(|(t, f)| (*t, f)))?;
    Ok(EncodeOutput { frames, log, failures: sender.failures().to_vec(), dropped_tokens: sender.dropped_tokens() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncodeSummary {
    pub frames: BTreeMap<String, usize>,
    pub duration_s: f64,
    pub payload_bits: u64,
    pub total_bits: u64,
    pub payload_bps: f64,
    pub total_bps: f64,
    pub dropped_tokens: u64,
    pub timbre_failures: usize,
}

impl EncodeOutput {
    pub fn summary(&self) -> EncodeSummary {
        let mut frames = BTreeMap::new();
        for (_, f) in &self.frames {
            *frames.entry(f.kind().name().to_string()).or_insert(0) += 1;
        }
        let spans = airtime(&self.log);
        let end = spans.iter().map(|a| a.end_us).max().unwrap_or(0);
        let duration_s = end as f64 / 1e6;
        let payload_bits: u64 = spans.iter().map(|a| a.payload_bits).sum();
        let total_bits = self.log.total_bits();
        let rate = |bits: u64| if duration_s > 0.0 { bits as f64 / duration_s } else { 0.0 };
        EncodeSummary {
            frames,
            duration_s,
            payload_bits,
            total_bits,
            payload_bps: rate(payload_bits),
            total_bps: rate(total_bits),
            dropped_tokens: self.dropped_tokens,
            timbre_failures: self.failures.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub actions: Vec<Action>,
    pub stats: ReceiverStats,
    pub backend_errors: Vec<BackendError>,
}

pub fn decode(log: &FrameLog, policy: &ReceiverPolicy, backend: &dyn Backend) -> DecodeOutput {
    let mut rx = Receiver::new(policy.clone(), backend.stock_timbre());
    let mut actions = Vec::new();
    for r in &log.records {
        actions.extend(rx.on_record(r.t_us, &r.bytes, backend));
    }
    actions.extend(rx.finish());
    DecodeOutput { actions, stats: rx.stats(), backend_errors: rx.backend_errors().to_vec() }
}

/// Synthesized tokens in order, each with the timbre it was rendered with.
pub fn rendered_tokens(actions: &[Action]) -> Vec<(SemanticToken, TimbreRef)> {
    actions
        .iter()
        .flat_map(|a| match a {
            Action::Synthesize { tokens, timbre_ref, .. } => tokens.iter().map(|t| (*t, timbre_ref.clone())).collect(),
            _ => Vec::new(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub flip_probs: Vec<f64>,
    pub seeds: Vec<u64>,
    pub scope: FlipScope,
    pub frames: FrameFilter,
    pub policy: ReceiverPolicy,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            flip_probs: vec![0.0, 1e-3, 1e-2, 1e-1],
            seeds: (0..10).collect(),
            scope: FlipScope::PayloadOnly,
            frames: FrameFilter::All,
            policy: ReceiverPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub flip_prob: f64,
    /// Mean over seeds of pooled word error rate against the clean run.
    pub wer: f64,
    /// Mean over seeds of per-utterance style agreement.
    pub sca: f64,
    /// Mean over seeds of per-token timbre agreement.
    pub spkrec: f64,
    pub seeds: usize,
}

struct Utterance {
    words: Vec<String>,
    style: Style,
    timbres: Vec<TimbreRef>,
}

/// Token counts per utterance, where utterances are delimited by speaker
/// events and a TOKENS frame belongs to the utterance in progress when its
/// last token became ready.
fn utterance_token_counts(events: &[EventRecord], enc: &EncodeOutput) -> Vec<usize> {
    let starts: Vec<u64> = events
        .iter()
        .filter_map(|e| match e {
            EventRecord::Speaker { t_us, .. } => Some(*t_us),
            _ => None,
        })
        .collect();
    let mut counts = vec![0usize; starts.len() + 1];
    for (t, f) in &enc.frames {
        if let FrameBody::Tokens(c) = &f.body {
            counts[starts.partition_point(|s| s < t)] += c.tokens.len();
        }
    }
    counts
}

fn split_utterances(mock: &MockBackend, rendered: &[(SemanticToken, TimbreRef)], counts: &[usize]) -> Vec<Utterance> {
    let mut pos = 0;
    counts
        .iter()
        .map(|&n| {
            let part = &rendered[pos.min(rendered.len())..(pos + n).min(rendered.len())];
            pos += n;
            let tokens: Vec<SemanticToken> = part.iter().map(|(t, _)| *t).collect();
            let tr = mock.transcribe(&tokens);
            Utterance { words: tr.words, style: tr.style, timbres: part.iter().map(|(_, r)| r.clone()).collect() }
        })
        .collect()
}

/// Degradation of mock-decoded content, style and timbre as bit flips grow.
/// The reference is the same pipeline over a clean channel.
pub fn noise_sweep(
    events: &[EventRecord],
    config: &SenderConfig,
    sweep: &SweepConfig,
    mock: &MockBackend,
) -> Result<Vec<SweepRow>, PipelineError> {
    let enc = encode(events, config, mock)?;
    let counts = utterance_token_counts(events, &enc);
    let clean = split_utterances(mock, &rendered_tokens(&decode(&enc.log, &sweep.policy, mock).actions), &counts);
    let ref_words: usize = clean.iter().map(|u| u.words.len()).sum();
    if ref_words == 0 {
        return Err(AnalysisError::EmptyReference.into());
    }
    let mut rows = Vec::new();
    for &p in &sweep.flip_probs {
        let (mut wer, mut sca, mut spk) = (0.0, 0.0, 0.0);
        for &seed in &sweep.seeds {
            let channel =
                ChannelConfig { flip_prob: p, seed, scope: sweep.scope, frames: sweep.frames, ..Default::default() };
            let noisy_log = apply_bsc(&enc.log, &channel)?;
            let noisy =
                split_utterances(mock, &rendered_tokens(&decode(&noisy_log, &sweep.policy, mock).actions), &counts);
            let mut edits = 0;
            let (mut styles, mut style_hits) = (0usize, 0usize);
            let (mut tokens, mut timbre_hits) = (0usize, 0usize);
            for (c, n) in clean.iter().zip(&noisy) {
                edits += edit_counts(&c.words, &n.words).errors();
                if !c.timbres.is_empty() {
                    styles += 1;
                    style_hits += usize::from(c.style == n.style);
                }
                tokens += c.timbres.len();
                timbre_hits += c.timbres.iter().zip(&n.timbres).filter(|(a, b)| a == b).count();
            }
            wer += edits as f64 / ref_words as f64;
            sca += if styles > 0 { style_hits as f64 / styles as f64 } else { 1.0 };
            spk += if tokens > 0 { timbre_hits as f64 / tokens as f64 } else { 1.0 };
        }
        let k = sweep.seeds.len().max(1) as f64;
        rows.push(SweepRow { flip_prob: p, wer: wer / k, sca: sca / k, spkrec: spk / k, seeds: sweep.seeds.len() });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("noise,wer,sca,spkrec\n");
    for r in rows {
        s.push_str(&format!("{},{:.4},{:.4},{:.4}\n", r.flip_prob, r.wer, r.sca, r.spkrec));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub speakers: usize,
    pub utterances: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Each word lasts this many seconds; a multiple of the chunk length
    /// keeps utterance boundaries on chunk boundaries.
    pub word_s: f64,
    pub chunk_tokens: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec { speakers: 3, utterances: 12, min_words: 4, max_words: 10, word_s: 0.4, chunk_tokens: 20 }
    }
}

/// A random multi-speaker conversation rendered to mock tokens. Speakers
/// are introduced in order, then alternate at random.
pub fn synth_corpus(seed: u64, spec: &CorpusSpec, mock: &MockBackend) -> Result<Vec<EventRecord>, BackendError> {
    if spec.speakers == 0 || spec.min_words == 0 || spec.max_words < spec.min_words || spec.chunk_tokens == 0 {
        return Err(BackendError::Domain("corpus needs speakers, words and a chunk size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut t = 0u64;
    let mut current: Option<usize> = None;
    for u in 0..spec.utterances {
        let speaker = if u < spec.speakers {
            u
        } else {
            let choices: Vec<usize> =
                (0..spec.speakers).filter(|&s| Some(s) != current || spec.speakers == 1).collect();
            *choices.choose(&mut rng).expect("nonempty")
        };
        current = Some(speaker);
        let n_words = rng.gen_range(spec.min_words..=spec.max_words);
        let words: Vec<String> = (0..n_words).map(|_| mock.lexicon().choose(&mut rng).unwrap().clone()).collect();
        let clip = Clip {
            speaker: format!("spk{speaker}"),
            words,
            style: Style::ALL[rng.gen_range(0..4)],
            duration_s: n_words as f64 * spec.word_s,
        };
        let tokens = mock.tokenize_clip(&clip)?;
        events.push(EventRecord::Speaker { t_us: t, key: clip.speaker.clone() });
        for chunk in tokens.chunks(spec.chunk_tokens) {
            t += chunk.len() as u64 * 20_000;
            events.push(EventRecord::Tokens { t_us: t, values: chunk.iter().map(|x| x.value()).collect() });
        }
    }
    Ok(events)
}

/// Frame counts by kind.
pub fn count_kinds(frames: &[Emitted]) -> BTreeMap<FrameKind, usize> {
    let mut m = BTreeMap::new();
    for (_, f) in frames {
        *m.entry(f.kind()).or_insert(0) += 1;
    }
    m
}
