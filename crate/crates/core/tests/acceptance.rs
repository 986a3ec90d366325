//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero on any FAIL.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slk_core::analysis::{bitrate_timeline, edit_counts, word_error_rate};
use slk_core::backend::MockBackend;
use slk_core::bits::SemanticToken;
use slk_core::channel::{apply_bsc, ChannelConfig};
use slk_core::events::EventRecord;
use slk_core::log::{log_from_frames, FrameLog};
use slk_core::pipeline::{decode, encode, noise_sweep, synth_corpus, CorpusSpec, SweepConfig};
use slk_core::receiver::{Action, ReceiverPolicy};
use slk_core::sender::{dequantize_embedding, quantize_embedding, SenderConfig, TimbreMode, TimbreTiming};
use slk_core::wire::{
    CodecBegin, CodecId, Frame, FrameBody, FrameKind, FrameParser, Parsed, QuantizedEmbedding, SpeakerId, StreamFlags,
    StreamHeader, TokenChunk, EMBED_DIM,
};
use std::collections::HashMap;
use std::time::Instant;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, f64, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Token events: `seconds` of audio in chunks of `chunk` tokens.
fn token_events(from_s: f64, seconds: f64, chunk: usize) -> Vec<EventRecord> {
    let first = (from_s * 50.0).round() as usize;
    let total = (seconds * 50.0).round() as usize;
    (0..total)
        .step_by(chunk)
        .map(|start| {
            let n = chunk.min(total - start);
            EventRecord::Tokens {
                t_us: (first + start + n) as u64 * 20_000,
                values: (0..n).map(|i| ((first + start + i) * 37 % 8192) as u16).collect(),
            }
        })
        .collect()
}

/// Speaker events inserted at their times into a token stream.
fn with_speakers(mut events: Vec<EventRecord>, speakers: &[(u64, &str)]) -> Vec<EventRecord> {
    for &(t, key) in speakers {
        let at = events.partition_point(|e| e.t_us() <= t);
        events.insert(at, EventRecord::Speaker { t_us: t, key: key.into() });
    }
    events
}

fn c1_nominal_rate() -> Outcome {
    let m = MockBackend::new(1);
    let mut windows = 0;
    for chunk in [1, 7, 20, 50, 4095] {
        let cfg = SenderConfig { mode: TimbreMode::TimbreFree, chunk_tokens: chunk, ..Default::default() };
        let log = encode(&token_events(0.0, 60.0, chunk), &cfg, &m).map_err(|e| e.to_string())?.log;
        for s in bitrate_timeline(&log, 1.0, 1.0).map_err(|e| e.to_string())? {
            if s.t_s > 60.0 {
                continue;
            }
            windows += 1;
            ensure(s.payload_bps == 650.0, || {
                format!("chunk {chunk}: window ending {} s has {} bps", s.t_s, s.payload_bps)
            })?;
        }
    }
    Ok(format!("{windows} one-second windows over 5 chunkings, all exactly 650 bps"))
}

fn c2_fig2_timeline() -> Outcome {
    const TOL: f64 = 0.01; // microsecond rounding of DATA timestamps
    let m = MockBackend::new(2);
    let cfg = SenderConfig {
        mode: TimbreMode::CodecSwitch,
        codec_id: CodecId::ENCODEC_1K5.0,
        d_sample_s: 4.0,
        timbre_rate_bps: 1500.0,
        timing: TimbreTiming::Live,
        ..Default::default()
    };
    let speakers =
        [(0, "a"), (10_000_000, "b"), (20_000_000, "c"), (30_000_000, "a"), (36_000_000, "b"), (40_000_000, "c")];
    let events = with_speakers(token_events(0.0, 50.0, 20), &speakers);
    let log = encode(&events, &cfg, &m).map_err(|e| e.to_string())?.log;
    let tl = bitrate_timeline(&log, 1.0, 1.0).map_err(|e| e.to_string())?;
    let spikes = [(0.0, 4.0), (10.0, 14.0), (20.0, 24.0)];
    let mut spike_windows = [0; 3];
    let mut edge_slack = 0;
    for s in tl.iter().filter(|s| s.t_s <= 50.0) {
        let (w0, w1) = (s.t_s - 1.0, s.t_s);
        let inside = spikes.iter().position(|&(a, b)| w0 >= a && w1 <= b);
        let expected = if inside.is_some() { 1500.0 } else { 650.0 };
        if (s.payload_bps - expected).abs() <= TOL {
            if let Some(i) = inside {
                spike_windows[i] += 1;
            }
            continue;
        }
        let at_edge = spikes.iter().any(|&(a, b)| (w0 < a && a < w1) || (w0 < b && b < w1));
        ensure(at_edge, || format!("window [{w0}, {w1}) has {} bps, expected {expected}", s.payload_bps))?;
        edge_slack += 1;
    }
    ensure(spike_windows == [4, 4, 4], || format!("spike widths {spike_windows:?} windows, expected 4 each"))?;
    let settled = tl.iter().filter(|s| s.t_s > 24.0 && s.t_s <= 50.0).all(|s| (s.payload_bps - 650.0).abs() <= TOL);
    ensure(settled, || "payload not 650 bps after last registration".into())?;
    Ok(format!(
        "3 spikes of 4 s at 1500 bps, 650 bps elsewhere and after 24 s ({edge_slack} edge windows used slack, tol {TOL} bps)"
    ))
}

fn latencies(events: &[EventRecord], cfg: &SenderConfig, m: &MockBackend) -> Result<Vec<f64>, String> {
    let log = encode(events, cfg, m).map_err(|e| e.to_string())?.log;
    Ok(decode(&log, &ReceiverPolicy::default(), m)
        .actions
        .iter()
        .filter_map(|a| match a {
            Action::Latency { record, .. } => Some(record.l_s),
            _ => None,
        })
        .collect())
}

fn c3_latency_law() -> Outcome {
    const QUANTUM: f64 = 1e-6;
    let m = MockBackend::new(3);
    let events = with_speakers(token_events(0.0, 40.0, 20), &[(0, "a"), (20_000_000, "b")]);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for ds in [1.0, 4.0] {
        for dt in [0.5, 1.0, 2.0, 4.0] {
            let embed = SenderConfig {
                mode: TimbreMode::SpeakerEmbedding,
                d_sample_s: ds,
                d_transmit_s: dt,
                ..Default::default()
            };
            // Codec sample is ds * 1500 bits rounded up to whole bytes; pick
            // the rate that makes it take exactly dt.
            let sample_bits = (ds * 1500.0 / 8.0).ceil() * 8.0;
            let codec = SenderConfig {
                mode: TimbreMode::CodecSwitch,
                d_sample_s: ds,
                timbre_rate_bps: sample_bits / dt,
                timing: TimbreTiming::CaptureThenSend,
                ..Default::default()
            };
            for cfg in [embed, codec] {
                let ls = latencies(&events, &cfg, &m)?;
                ensure(ls.len() == 2, || format!("{:?} ds={ds} dt={dt}: {} latency records", cfg.mode, ls.len()))?;
                for l in ls {
                    let err = (l - (ds + dt)).abs();
                    worst = worst.max(err);
                    ensure(err <= QUANTUM, || format!("{:?} ds={ds} dt={dt}: L={l}", cfg.mode))?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} transfers, max |L - (d_sample + d_transmit)| = {worst:.2e} s (quantum 1 us)"))
}

fn random_frame(rng: &mut ChaCha8Rng, seq: u32) -> Frame {
    let id = SpeakerId(rng.gen());
    let body = match rng.gen_range(0..7) {
        0 => FrameBody::StreamHeader(StreamHeader {
            version: rng.gen(),
            token_rate_hz: rng.gen(),
            codebook_bits: rng.gen(),
            flags: StreamFlags(rng.gen()),
        }),
        1 => {
            let n = if rng.gen_bool(0.05) { rng.gen_range(1..=4095) } else { rng.gen_range(1..=60) };
            FrameBody::Tokens(TokenChunk {
                start_tick: rng.gen_range(0..1 << 20),
                tokens: (0..n).map(|_| SemanticToken::new(rng.gen_range(0..8192)).unwrap()).collect(),
            })
        }
        2 => FrameBody::SpeakerSwitchKnown { speaker_id: id },
        3 => FrameBody::TimbreCodecBegin(CodecBegin {
            speaker_id: id,
            codec_id: CodecId(rng.gen()),
            d_sample_ms: rng.gen(),
            total_payload_bytes: rng.gen(),
        }),
        4 => {
            let n = rng.gen_range(0..600);
            FrameBody::TimbreCodecData {
                speaker_id: id,
                chunk_index: rng.gen(),
                bytes: (0..n).map(|_| rng.gen()).collect(),
            }
        }
        5 => FrameBody::TimbreCodecEnd { speaker_id: id },
        _ => {
            let mut codes = [0u8; EMBED_DIM];
            rng.fill(&mut codes[..]);
            FrameBody::TimbreEmbed { speaker_id: id, embedding: QuantizedEmbedding::new(codes) }
        }
    };
    Frame::new(seq, body)
}

fn c4_framing_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut kinds: HashMap<FrameKind, usize> = HashMap::new();
    let mut stream = Vec::new();
    let mut expected = Vec::new();
    for i in 0..10_000u32 {
        let seq = rng.gen();
        let f = random_frame(&mut rng, seq);
        let crc = i % 2 == 1;
        let bytes = f.to_bytes(crc).map_err(|e| e.to_string())?;
        let parsed = FrameParser::strict().with_crc(crc).parse(&bytes).map_err(|e| format!("frame {i}: {e}"))?;
        let Parsed::Complete { frame, consumed, warnings } = parsed else {
            return Err(format!("frame {i}: needs more data"));
        };
        ensure(frame == f && consumed == bytes.len() && warnings.is_empty(), || format!("frame {i} changed: {f:?}"))?;
        ensure(frame.to_bytes(crc).unwrap() == bytes, || format!("frame {i} bytes differ"))?;
        *kinds.entry(f.kind()).or_default() += 1;
        if !crc {
            stream.extend_from_slice(&bytes);
            expected.push(f);
        }
    }
    ensure(kinds.len() == 7, || format!("only {} kinds generated", kinds.len()))?;
    let parsed = FrameParser::strict().parse_stream(&stream);
    ensure(parsed.frames == expected && parsed.errors.is_empty() && parsed.trailing.is_none(), || {
        "concatenated stream did not parse back to the same frames".into()
    })?;
    Ok(format!(
        "10000 frames over 7 kinds (half with CRC) identical by value and bytes; {}-frame stream prefix-safe",
        expected.len()
    ))
}

fn c5_quantizer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bound = 1.0 / 255.0;
    let mut worst: f64 = 0.0;
    let mut z = vec![0.0; EMBED_DIM];
    for _ in 0..100_000 {
        for v in z.iter_mut() {
            *v = rng.gen_range(-1.0..=1.0);
        }
        let back = dequantize_embedding(&quantize_embedding(&z).map_err(|e| e.to_string())?);
        for (a, b) in z.iter().zip(&back) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= bound, || format!("max error {worst} exceeds 1/255"))?;
    let codes: Vec<u8> =
        [-1.0, 0.0, 1.0].iter().map(|&v| quantize_embedding(&vec![v; EMBED_DIM]).unwrap().codes()[0]).collect();
    ensure(codes == [0, 128, 255], || format!("boundary codes {codes:?}"))?;
    Ok(format!("1e5 embeddings, max error {worst:.6} <= {bound:.6}; -1, 0, +1 -> 0, 128, 255"))
}

fn big_token_log() -> FrameLog {
    let mut frames = vec![(0, Frame::new(0, FrameBody::StreamHeader(StreamHeader::default())))];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..4000u32 {
        frames.push((
            u64::from(i + 1) * 400_000,
            Frame::new(
                i + 1,
                FrameBody::Tokens(TokenChunk {
                    start_tick: i * 20,
                    tokens: (0..20).map(|_| SemanticToken::new(rng.gen_range(0..8192)).unwrap()).collect(),
                }),
            ),
        ));
    }
    log_from_frames(frames.iter().map(|(t, f)| (*t, f))).unwrap()
}

fn flipped_bits(a: &FrameLog, b: &FrameLog) -> u64 {
    a.to_bytes().iter().zip(b.to_bytes().iter()).map(|(x, y)| u64::from((x ^ y).count_ones())).sum()
}

fn c6_channel() -> Outcome {
    let log = big_token_log();
    let n: u64 = log.records.iter().skip(1).map(|r| (r.bytes.len() as u64 - 7) * 8).sum();
    ensure(n >= 1_000_000, || format!("only {n} payload bits"))?;
    let mut detail = Vec::new();
    for p in [1e-3, 1e-2, 1e-1] {
        let cfg = ChannelConfig { flip_prob: p, seed: 99, ..Default::default() };
        let out = apply_bsc(&log, &cfg).map_err(|e| e.to_string())?;
        let k = flipped_bits(&log, &out) as f64;
        let mean = n as f64 * p;
        let z = (k - mean) / (mean * (1.0 - p)).sqrt();
        ensure(z.abs() <= 4.0, || format!("p={p}: {k} flips, z={z:.2}"))?;
        let again = apply_bsc(&log, &cfg).map_err(|e| e.to_string())?;
        ensure(again.to_bytes() == out.to_bytes(), || format!("p={p}: rerun differs"))?;
        detail.push(format!("p={p} z={z:+.2}"));
    }
    let same = apply_bsc(&log, &ChannelConfig::default()).map_err(|e| e.to_string())?;
    ensure(same.to_bytes() == log.to_bytes(), || "p=0 changed the log".into())?;
    Ok(format!("{n} payload bits; {}; p=0 identity; reruns byte-identical", detail.join(", ")))
}

/// Exhaustive-recursion edit distance with memo, independent of the library.
fn oracle_distance(a: &[u8], b: &[u8]) -> usize {
    fn go(i: usize, j: usize, a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let keep = go(i + 1, j + 1, a, b, memo) + usize::from(a[i] != b[j]);
        let del = go(i + 1, j, a, b, memo) + 1;
        let ins = go(i, j + 1, a, b, memo) + 1;
        let v = keep.min(del).min(ins);
        memo.insert((i, j), v);
        v
    }
    go(0, 0, a, b, &mut HashMap::new())
}

fn c7_wer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let words = ["a", "b", "c", "d", "e"];
    let mut above_one = 0;
    for i in 0..1000 {
        let r: Vec<u8> = (0..rng.gen_range(1..=12)).map(|_| rng.gen_range(0..5)).collect();
        let h: Vec<u8> = (0..rng.gen_range(0..=12)).map(|_| rng.gen_range(0..5)).collect();
        let rw: Vec<&str> = r.iter().map(|&x| words[x as usize]).collect();
        let hw: Vec<&str> = h.iter().map(|&x| words[x as usize]).collect();
        let wer = word_error_rate(&rw, &hw).map_err(|e| e.to_string())?;
        let want = oracle_distance(&r, &h) as f64 / r.len() as f64;
        ensure(wer == want, || format!("pair {i}: {wer} vs oracle {want}"))?;
        ensure(edit_counts(&rw, &hw).errors() == oracle_distance(&r, &h), || format!("pair {i}: counts"))?;
        ensure(word_error_rate(&rw, &rw).unwrap() == 0.0, || format!("pair {i}: identity"))?;
        above_one += usize::from(wer > 1.0);
    }
    let big = word_error_rate(&["a"], &["b", "c", "d"]).unwrap();
    ensure(big == 3.0, || format!("WER > 1 case gave {big}"))?;
    Ok(format!("1000 random pairs match the oracle ({above_one} with WER > 1); identity gives 0"))
}

fn c8_noise_trend() -> Outcome {
    let m = MockBackend::new(8);
    let spec = CorpusSpec { utterances: 16, ..Default::default() };
    let events = synth_corpus(8, &spec, &m).map_err(|e| e.to_string())?;
    let sweep = SweepConfig { flip_probs: vec![0.0, 1e-3, 1e-2, 1e-1], seeds: (0..10).collect(), ..Default::default() };
    let rows = noise_sweep(&events, &SenderConfig::default(), &sweep, &m).map_err(|e| e.to_string())?;
    for w in rows.windows(2) {
        ensure(w[1].wer >= w[0].wer, || format!("WER fell from {} to {} at p={}", w[0].wer, w[1].wer, w[1].flip_prob))?;
        ensure(w[1].sca <= w[0].sca, || format!("SCA rose at p={}", w[1].flip_prob))?;
        ensure(w[1].spkrec <= w[0].spkrec, || format!("SpkRec rose at p={}", w[1].flip_prob))?;
    }
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("p={} wer={:.3} sca={:.3} spk={:.3}", r.flip_prob, r.wer, r.sca, r.spkrec))
        .collect();
    Ok(format!("10 seeds: {}", table.join("; ")))
}

fn c9_registry() -> Outcome {
    let m = MockBackend::new(9);
    for mode in [TimbreMode::SpeakerEmbedding, TimbreMode::CodecSwitch] {
        let cfg = SenderConfig { mode, d_sample_s: 1.0, ..Default::default() };
        for n in 2..=6u64 {
            let evs: Vec<EventRecord> =
                (0..n).map(|i| EventRecord::Speaker { t_us: i * 10_000_000, key: "solo".into() }).collect();
            let frames = encode(&evs, &cfg, &m).map_err(|e| e.to_string())?.frames;
            let begins = frames.iter().filter(|(_, f)| f.kind() == FrameKind::TimbreCodecBegin).count();
            let timbre = frames
                .iter()
                .filter(|(_, f)| matches!(f.kind(), FrameKind::TimbreEmbed | FrameKind::TimbreCodecEnd))
                .count();
            let switches = frames.iter().filter(|(_, f)| f.kind() == FrameKind::SpeakerSwitchKnown).count();
            ensure(begins == 1 && timbre == 1 && switches as u64 == n - 1, || {
                format!("{mode:?} n={n}: {begins} transfers, {switches} switches")
            })?;
        }
        let k = 7;
        let evs: Vec<EventRecord> =
            (0..k).map(|i| EventRecord::Speaker { t_us: i * 10_000_000, key: format!("s{i}") }).collect();
        let frames = encode(&evs, &cfg, &m).map_err(|e| e.to_string())?.frames;
        let mut ids: Vec<u16> = frames
            .iter()
            .filter_map(|(_, f)| match &f.body {
                FrameBody::TimbreCodecBegin(b) => Some(b.speaker_id.0),
                _ => None,
            })
            .collect();
        ids.sort_unstable();
        ensure(ids == (0..k as u16).collect::<Vec<_>>(), || format!("{mode:?}: ids {ids:?}"))?;
    }
    Ok("n in 2..=6 occurrences -> 1 transfer + n-1 switches; 7 speakers -> ids 0..6 (embedding and codec modes)".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "nominal rate", 1.0, c1_nominal_rate),
        (2, "multi-speaker timeline", 5.0, c2_fig2_timeline),
        (3, "latency law", 5.0, c3_latency_law),
        (4, "framing roundtrip", 5.0, c4_framing_roundtrip),
        (5, "quantizer bound", 5.0, c5_quantizer),
        (6, "channel statistics", 10.0, c6_channel),
        (7, "WER oracle", 10.0, c7_wer_oracle),
        (8, "noise trend", 60.0, c8_noise_trend),
        (9, "registry semantics", 1.0, c9_registry),
    ];
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        let result = result.and_then(|d| {
            if secs <= limit {
                Ok(d)
            } else {
                Err(format!("took {secs:.2} s, limit {limit} s ({d})"))
            }
        });
        match result {
            Ok(detail) => println!("PASS criterion {id} ({name}, {secs:.2} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}, {secs:.2} s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
