//! `slk`: batch driver for the semantic speech link.
//!
//! Exit codes: 0 ok, 2 usage or config error (including missing inputs),
//! 3 input parse error, 4 backend failure.

mod artifact;

use anyhow::{anyhow, Context};
use artifact::{emit, RunManifest};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use slk_core::analysis::{
    bitrate_timeline, metrics_from_tasks, timeline_csv, tradeoff_csv, tradeoff_curve, TradeoffMode,
};
use slk_core::backend::{run_conformance, AudioHandle, Backend, BackendError, BridgeBackend, Clip, MockBackend, Style};
use slk_core::channel::{apply_bsc, apply_link_shaping, ChannelConfig, FlipScope, FrameFilter};
use slk_core::events::{events_to_jsonl, parse_events, EventRecord};
use slk_core::log::FrameLog;
use slk_core::pipeline::{
    capture_audio, decode, encode_with_capture, noise_sweep, sweep_csv, synth_corpus, CorpusSpec, SweepConfig,
};
use slk_core::receiver::ReceiverPolicy;
use slk_core::sender::SenderConfig;
use slk_core::wire::{CodecId, EMBED_DIM};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

const USAGE: u8 = 2;
const PARSE: u8 = 3;
const BACKEND: u8 = 4;

/// A bridge that died or spoke garbage is a backend failure; anything else
/// the pipeline already absorbed with a fallback.
fn is_fatal(e: &BackendError) -> bool {
    matches!(e, BackendError::Unavailable(_) | BackendError::Protocol(_))
}

#[derive(Parser)]
#[command(name = "slk", version, about = "Semantic speech link: encode, corrupt, decode and analyze frame logs")]
struct Cli {
    /// Seed for every random choice in the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn an events file into a frame log; prints a summary as JSON.
    Encode(EncodeArgs),
    /// Pass a frame log through a noisy and/or rate-limited link.
    Simulate(SimulateArgs),
    /// Run the receiver over a frame log; emits actions as JSON lines.
    Decode(DecodeArgs),
    /// Bitrate timelines, trade-off curves and task metrics.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCmd,
    },
    /// Mock-backend WER / style / speaker agreement against bit-flip rate.
    NoiseSweep(SweepArgs),
    /// Generate a synthetic multi-speaker events file for the mock backend.
    SynthEvents(SynthArgs),
    /// Check a backend against the shape and range contract.
    Conformance(ConformanceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Mock,
    Bridge,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Mock)]
    backend: BackendKind,
    /// Program speaking the JSON-lines bridge protocol on stdin/stdout.
    #[arg(long)]
    bridge_cmd: Option<String>,
    /// Argument for the bridge program; repeatable.
    #[arg(long = "bridge-arg")]
    bridge_args: Vec<String>,
}

impl BackendArgs {
    fn open(&self, seed: u64) -> Result<Box<dyn Backend>, Failure> {
        match self.backend {
            BackendKind::Mock => Ok(Box::new(MockBackend::new(seed))),
            BackendKind::Bridge => {
                let cmd = self
                    .bridge_cmd
                    .as_deref()
                    .ok_or_else(|| anyhow!("--backend bridge needs --bridge-cmd"))
                    .exit_with(USAGE)?;
                Ok(Box::new(BridgeBackend::spawn(cmd, &self.bridge_args).exit_with(BACKEND)?))
            }
        }
    }

    fn snapshot(&self) -> serde_json::Value {
        match self.backend {
            BackendKind::Mock => json!("mock"),
            BackendKind::Bridge => json!({ "bridge": self.bridge_cmd, "args": self.bridge_args }),
        }
    }
}

#[derive(Args)]
struct EncodeArgs {
    /// JSON-lines events file.
    #[arg(long)]
    events: PathBuf,
    /// Sender config, JSON or key = value lines. Defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output frame log (.slklog).
    #[arg(long, short)]
    out: PathBuf,
    /// Directory holding `<key>.wav` per speaker; required with a bridge.
    #[arg(long)]
    speaker_audio: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    PayloadOnly,
    WholeFrame,
}

#[derive(Clone, Copy, ValueEnum)]
enum FramesArg {
    All,
    TokensOnly,
}

impl From<ScopeArg> for FlipScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::PayloadOnly => FlipScope::PayloadOnly,
            ScopeArg::WholeFrame => FlipScope::WholeFrame,
        }
    }
}

impl From<FramesArg> for FrameFilter {
    fn from(f: FramesArg) -> Self {
        match f {
            FramesArg::All => FrameFilter::All,
            FramesArg::TokensOnly => FrameFilter::TokensOnly,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Independent per-bit flip probability.
    #[arg(long, default_value_t = 0.0)]
    flip_prob: f64,
    #[arg(long, value_enum, default_value_t = ScopeArg::PayloadOnly)]
    scope: ScopeArg,
    #[arg(long, value_enum, default_value_t = FramesArg::All)]
    frames: FramesArg,
    /// Link capacity; frames queue behind each other when set.
    #[arg(long)]
    bandwidth_bps: Option<f64>,
    /// Fixed propagation delay added to every frame.
    #[arg(long)]
    delay_us: Option<u64>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Actions as JSON lines; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Hold synthesis until the active speaker's timbre has arrived.
    #[arg(long)]
    wait_for_timbre: bool,
    /// Reject frames with reserved bits or padding set.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value_t = 50)]
    batch_tokens: usize,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Sliding-window bitrate as CSV `t_s,payload_bps,total_bps`.
    Timeline {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        window_s: f64,
        #[arg(long, default_value_t = 0.1)]
        hop_s: f64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Peak bitrate against added latency as CSV `peak_bps,latency_s,mode,d_sample`.
    Tradeoff {
        #[arg(long, value_enum, default_value_t = TradeoffArg::CodecSwitch)]
        mode: TradeoffArg,
        #[arg(long, default_value_t = 1.0)]
        d_sample_s: f64,
        /// Timbre budgets in bits per second.
        #[arg(long, value_delimiter = ',', default_value = "375,750,1500,3000,6000")]
        budgets: Vec<f64>,
        /// Codec bitrate of the captured sample (codec mode).
        #[arg(long, default_value_t = 1500.0)]
        nominal_bps: f64,
        /// Embedding size in bits (embedding mode).
        #[arg(long, default_value_t = (EMBED_DIM * 8) as f64)]
        embed_bits: f64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Aggregate external classifier outputs into `{wer, sca, spkrec}` JSON.
    Metrics {
        /// JSON-lines task file.
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TradeoffArg {
    CodecSwitch,
    SpeakerEmbedding,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.001,0.01,0.1")]
    flip_probs: Vec<f64>,
    /// Channel seeds per probability, counting up from --seed.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, value_enum, default_value_t = ScopeArg::PayloadOnly)]
    scope: ScopeArg,
    #[arg(long, value_enum, default_value_t = FramesArg::All)]
    frames: FramesArg,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    speakers: usize,
    #[arg(long, default_value_t = 12)]
    utterances: usize,
    #[arg(long, default_value_t = 20)]
    chunk_tokens: usize,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConformanceArgs {
    /// Sample utterance for a bridge backend; the mock uses a built-in clip.
    #[arg(long)]
    sample: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    duration_s: f64,
    #[arg(long, default_value_t = CodecId::ENCODEC_1K5.0)]
    codec_id: u8,
    #[command(flatten)]
    backend: BackendArgs,
}

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).with_context(|| format!("cannot read {}", path.display())).exit_with(USAGE)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    String::from_utf8(read_input(path)?).with_context(|| format!("{} is not UTF-8", path.display())).exit_with(PARSE)
}

fn load_events(path: &Path) -> Result<Vec<EventRecord>, Failure> {
    parse_events(&read_text(path)?).with_context(|| format!("in {}", path.display())).exit_with(PARSE)
}

fn load_config(path: Option<&Path>) -> Result<SenderConfig, Failure> {
    let cfg = match path {
        Some(p) => SenderConfig::load(p).exit_with(USAGE)?,
        None => SenderConfig::default(),
    };
    cfg.validate().exit_with(USAGE)?;
    Ok(cfg)
}

fn load_log(path: &Path) -> Result<FrameLog, Failure> {
    FrameLog::from_bytes(&read_input(path)?).with_context(|| format!("in {}", path.display())).exit_with(PARSE)
}

/// Writes to `out` with a manifest, or to stdout without one.
fn deliver(manifest: RunManifest, out: Option<&Path>, bytes: &[u8]) -> CmdResult {
    match out {
        Some(p) => emit(manifest, &[(p, bytes)]).exit_with(USAGE),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes).context("stdout").exit_with(USAGE)
        }
    }
}

fn cmd_encode(a: &EncodeArgs, seed: u64) -> CmdResult {
    let cfg = load_config(a.config.as_deref())?;
    let events = load_events(&a.events)?;
    if let Some(dir) = &a.speaker_audio {
        if !dir.is_dir() {
            return Err(anyhow!("cannot read {}", dir.display())).exit_with(USAGE);
        }
    } else if matches!(a.backend.backend, BackendKind::Bridge) {
        return Err(anyhow!("--backend bridge needs --speaker-audio")).exit_with(USAGE);
    }
    let backend = a.backend.open(seed)?;
    let capture = |key: &str, d_sample_s: f64| match &a.speaker_audio {
        Some(dir) => AudioHandle::File(dir.join(format!("{key}.wav"))),
        None => capture_audio(key, d_sample_s),
    };
    let out = encode_with_capture(&events, &cfg, backend.as_ref(), &capture).exit_with(USAGE)?;
    if let Some(f) = out.failures.iter().find(|f| is_fatal(&f.error)) {
        return Err(anyhow!("speaker {:?} at {} us: {}", f.key, f.t_us, f.error)).exit_with(BACKEND);
    }
    for f in &out.failures {
        log::warn!("timbre for {:?} at {} us not sent: {}", f.key, f.t_us, f.error);
    }
    let mut manifest = RunManifest::new(
        "encode",
        seed,
        json!({ "sender": cfg, "backend": a.backend.snapshot(), "speaker_audio": a.speaker_audio }),
    )
    .input(&a.events);
    if let Some(c) = &a.config {
        manifest = manifest.input(c);
    }
    emit(manifest, &[(&a.out, &out.log.to_bytes())]).exit_with(USAGE)?;
    println!("{}", serde_json::to_string(&out.summary()).exit_with(USAGE)?);
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, seed: u64) -> CmdResult {
    let log = load_log(&a.input)?;
    let cfg = ChannelConfig {
        flip_prob: a.flip_prob,
        seed,
        scope: a.scope.into(),
        frames: a.frames.into(),
        bandwidth_bps: a.bandwidth_bps,
        fixed_delay_us: a.delay_us,
    };
    let noisy = apply_bsc(&log, &cfg).exit_with(USAGE)?;
    let shaped = apply_link_shaping(&noisy, &cfg).exit_with(USAGE)?;
    let manifest = RunManifest::new("simulate", seed, json!({ "channel": cfg })).input(&a.input);
    emit(manifest, &[(&a.out, &shaped.to_bytes())]).exit_with(USAGE)
}

fn cmd_decode(a: &DecodeArgs, seed: u64) -> CmdResult {
    let log = load_log(&a.input)?;
    let policy = ReceiverPolicy { wait_for_timbre: a.wait_for_timbre, batch_tokens: a.batch_tokens, strict: a.strict };
    if policy.batch_tokens == 0 {
        return Err(anyhow!("--batch-tokens must be positive")).exit_with(USAGE);
    }
    let backend = a.backend.open(seed)?;
    let out = decode(&log, &policy, backend.as_ref());
    if let Some(e) = out.backend_errors.iter().find(|e| is_fatal(e)) {
        return Err(anyhow!("{e}")).exit_with(BACKEND);
    }
    let s = out.stats;
    log::info!(
        "{} frames, {} tokens, {} parse errors, {} unknown kinds, {} discarded transfers",
        s.frames,
        s.tokens,
        s.parse_errors,
        s.unknown_kinds,
        s.discarded_transfers
    );
    let mut text = String::new();
    for act in &out.actions {
        text.push_str(&act.to_json().to_string());
        text.push('\n');
    }
    let manifest = RunManifest::new(
        "decode",
        seed,
        json!({
            "wait_for_timbre": policy.wait_for_timbre,
            "batch_tokens": policy.batch_tokens,
            "strict": policy.strict,
            "backend": a.backend.snapshot(),
        }),
    )
    .input(&a.input);
    deliver(manifest, a.out.as_deref(), text.as_bytes())
}

fn cmd_analyze(what: &AnalyzeCmd, seed: u64) -> CmdResult {
    match what {
        AnalyzeCmd::Timeline { input, window_s, hop_s, out } => {
            let log = load_log(input)?;
            let tl = bitrate_timeline(&log, *window_s, *hop_s).exit_with(USAGE)?;
            let manifest = RunManifest::new(
                "analyze timeline",
                seed,
                json!({ "window_s": window_s, "hop_s": hop_s, "window": "rectangular, [t - window, t)" }),
            )
            .input(input);
            deliver(manifest, out.as_deref(), timeline_csv(&tl).as_bytes())
        }
        AnalyzeCmd::Tradeoff { mode, d_sample_s, budgets, nominal_bps, embed_bits, out } => {
            let m = match mode {
                TradeoffArg::CodecSwitch => TradeoffMode::CodecSwitch { nominal_bps: *nominal_bps },
                TradeoffArg::SpeakerEmbedding => TradeoffMode::SpeakerEmbedding { embed_bits: *embed_bits },
            };
            let points = tradeoff_curve(m, *d_sample_s, budgets).exit_with(USAGE)?;
            let convention = match mode {
                TradeoffArg::CodecSwitch => {
                    "latency = d_sample + d_sample * nominal / budget; peak = budget (tokens paused)"
                }
                TradeoffArg::SpeakerEmbedding => "latency = d_sample + embed_bits / budget; peak = 650 + budget",
            };
            let manifest = RunManifest::new(
                "analyze tradeoff",
                seed,
                json!({
                    "mode": m.label(),
                    "d_sample_s": d_sample_s,
                    "budgets_bps": budgets,
                    "nominal_bps": nominal_bps,
                    "embed_bits": embed_bits,
                    "convention": convention,
                }),
            );
            deliver(manifest, out.as_deref(), tradeoff_csv(&points).as_bytes())
        }
        AnalyzeCmd::Metrics { tasks, out } => {
            let m = metrics_from_tasks(&read_text(tasks)?)
                .with_context(|| format!("in {}", tasks.display()))
                .exit_with(PARSE)?;
            let mut text = serde_json::to_string(&m).exit_with(USAGE)?;
            text.push('\n');
            let manifest = RunManifest::new("analyze metrics", seed, json!({})).input(tasks);
            deliver(manifest, out.as_deref(), text.as_bytes())
        }
    }
}

fn cmd_noise_sweep(a: &SweepArgs, seed: u64) -> CmdResult {
    if matches!(a.backend.backend, BackendKind::Bridge) {
        return Err(anyhow!("noise-sweep scores with the mock transcriber; use --backend mock")).exit_with(USAGE);
    }
    let cfg = load_config(a.config.as_deref())?;
    let events = load_events(&a.events)?;
    let sweep = SweepConfig {
        flip_probs: a.flip_probs.clone(),
        seeds: (seed..seed + a.seeds).collect(),
        scope: a.scope.into(),
        frames: a.frames.into(),
        ..Default::default()
    };
    let mock = MockBackend::new(seed);
    let rows = noise_sweep(&events, &cfg, &sweep, &mock).exit_with(USAGE)?;
    let mut manifest = RunManifest::new(
        "noise-sweep",
        seed,
        json!({
            "sender": cfg,
            "flip_probs": sweep.flip_probs,
            "seeds": sweep.seeds,
            "scope": sweep.scope,
            "frames": sweep.frames,
            "reference": "same pipeline over a clean channel",
        }),
    )
    .input(&a.events);
    if let Some(c) = &a.config {
        manifest = manifest.input(c);
    }
    deliver(manifest, a.out.as_deref(), sweep_csv(&rows).as_bytes())
}

fn cmd_synth(a: &SynthArgs, seed: u64) -> CmdResult {
    if a.speakers == 0 || a.utterances == 0 || a.chunk_tokens == 0 {
        return Err(anyhow!("--speakers, --utterances and --chunk-tokens must be positive")).exit_with(USAGE);
    }
    let spec = CorpusSpec {
        speakers: a.speakers,
        utterances: a.utterances,
        chunk_tokens: a.chunk_tokens,
        ..Default::default()
    };
    let events = synth_corpus(seed, &spec, &MockBackend::new(seed)).exit_with(USAGE)?;
    let manifest = RunManifest::new(
        "synth-events",
        seed,
        json!({ "speakers": a.speakers, "utterances": a.utterances, "chunk_tokens": a.chunk_tokens }),
    );
    deliver(manifest, a.out.as_deref(), events_to_jsonl(&events).as_bytes())
}

fn cmd_conformance(a: &ConformanceArgs, seed: u64) -> CmdResult {
    let backend = a.backend.open(seed)?;
    let sample = match (&a.sample, a.backend.backend) {
        (Some(p), _) => {
            if !p.exists() {
                return Err(anyhow!("cannot read {}", p.display())).exit_with(USAGE);
            }
            AudioHandle::File(p.clone())
        }
        (None, BackendKind::Mock) => {
            let mock = MockBackend::new(seed);
            AudioHandle::Clip(Clip {
                speaker: "conformance".into(),
                words: mock.lexicon().iter().take(4).cloned().collect(),
                style: Style::Neutral,
                duration_s: a.duration_s,
            })
        }
        (None, BackendKind::Bridge) => {
            return Err(anyhow!("--backend bridge needs --sample")).exit_with(USAGE);
        }
    };
    let checks = run_conformance(backend.as_ref(), &sample, a.duration_s, CodecId(a.codec_id));
    for c in &checks {
        println!("{}", json!({ "check": c.name, "passed": c.passed, "detail": c.detail }));
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(anyhow!("failed checks: {}", failed.join(", "))).exit_with(BACKEND)
    }
}

fn run(cli: Cli) -> CmdResult {
    match &cli.cmd {
        Command::Encode(a) => cmd_encode(a, cli.seed),
        Command::Simulate(a) => cmd_simulate(a, cli.seed),
        Command::Decode(a) => cmd_decode(a, cli.seed),
        Command::Analyze { what } => cmd_analyze(what, cli.seed),
        Command::NoiseSweep(a) => cmd_noise_sweep(a, cli.seed),
        Command::SynthEvents(a) => cmd_synth(a, cli.seed),
        Command::Conformance(a) => cmd_conformance(a, cli.seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
