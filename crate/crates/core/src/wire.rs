//! Frame taxonomy and bit-exact serialization.
//!
//! Every frame is a 7-byte header followed by a kind-specific payload:
//!
//! ```text
//! +--------+-------------+-----------+-------------------+-------------+
//! | kind 1B| len 2B (BE) | seq 4B BE | payload (len B)   | [crc32 4B]  |
//! +--------+-------------+-----------+-------------------+-------------+
//! ```
//!
//! The CRC trailer is present only when the stream header sets flag bit 0.
//! It covers header and payload and is not counted in `len`.

use crate::bits::{self, BitReader, BitWriter, SemanticToken, TOKEN_BITS};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const HEADER_LEN: usize = 7;
pub const CRC_LEN: usize = 4;
pub const MAGIC: [u8; 4] = *b"SLK1";
pub const VERSION: u8 = 1;
pub const DEFAULT_TOKEN_RATE_HZ: u16 = 50;
pub const EMBED_DIM: usize = 128;
pub const MAX_TOKENS_PER_FRAME: usize = (1 << 12) - 1;
pub const MAX_START_TICK: u32 = (1 << 20) - 1;
pub const MAX_PAYLOAD_LEN: usize = u16::MAX as usize;

/// Bytes of count + start_tick ahead of the packed tokens.
pub const TOKENS_PREFIX_LEN: usize = 4;
const STREAM_HEADER_LEN: usize = 9;
const CODEC_BEGIN_LEN: usize = 9;
const EMBED_PAYLOAD_LEN: usize = 2 + EMBED_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum FrameKind {
    StreamHeader = 0x00,
    Tokens = 0x01,
    SpeakerSwitchKnown = 0x02,
    TimbreCodecBegin = 0x03,
    TimbreCodecData = 0x04,
    TimbreCodecEnd = 0x05,
    TimbreEmbed = 0x06,
}

impl FrameKind {
    pub const ALL: [FrameKind; 7] = [
        FrameKind::StreamHeader,
        FrameKind::Tokens,
        FrameKind::SpeakerSwitchKnown,
        FrameKind::TimbreCodecBegin,
        FrameKind::TimbreCodecData,
        FrameKind::TimbreCodecEnd,
        FrameKind::TimbreEmbed,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        FrameKind::ALL.get(code as usize).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            FrameKind::StreamHeader => "stream_header",
            FrameKind::Tokens => "tokens",
            FrameKind::SpeakerSwitchKnown => "speaker_switch_known",
            FrameKind::TimbreCodecBegin => "timbre_codec_begin",
            FrameKind::TimbreCodecData => "timbre_codec_data",
            FrameKind::TimbreCodecEnd => "timbre_codec_end",
            FrameKind::TimbreEmbed => "timbre_embed",
        }
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Short numeric speaker identifier carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeakerId(pub u16);

impl fmt::Display for SpeakerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Timbre codec selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CodecId(pub u8);

impl CodecId {
    /// In a BEGIN frame, announces a speaker-embedding transfer.
    pub const EMBEDDING: CodecId = CodecId(0);
    pub const ENCODEC_1K5: CodecId = CodecId(1);
    pub const ENCODEC_3K: CodecId = CodecId(2);
    pub const MOCK: CodecId = CodecId(255);

    /// Nominal codec bitrate in bits per second.
    pub fn nominal_bps(self) -> Option<u32> {
        match self {
            CodecId::ENCODEC_1K5 | CodecId::MOCK => Some(1500),
            CodecId::ENCODEC_3K => Some(3000),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StreamFlags(pub u8);

impl StreamFlags {
    pub const CRC: u8 = 0b01;
    pub const CAPTURE_THEN_SEND: u8 = 0b10;

    pub fn crc(self) -> bool {
        self.0 & Self::CRC != 0
    }

    /// Codec-mode timbre samples are captured fully before transmission starts.
    pub fn capture_then_send(self) -> bool {
        self.0 & Self::CAPTURE_THEN_SEND != 0
    }

    pub fn with(self, bit: u8, on: bool) -> Self {
        if on {
            StreamFlags(self.0 | bit)
        } else {
            StreamFlags(self.0 & !bit)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u8,
    pub token_rate_hz: u16,
    pub codebook_bits: u8,
    pub flags: StreamFlags,
}

impl Default for StreamHeader {
    fn default() -> Self {
        StreamHeader {
            version: VERSION,
            token_rate_hz: DEFAULT_TOKEN_RATE_HZ,
            codebook_bits: TOKEN_BITS as u8,
            flags: StreamFlags::default(),
        }
    }
}

/// A run of consecutive tokens starting at `start_tick` (20 ms per tick at 50 Hz).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenChunk {
    pub start_tick: u32,
    pub tokens: Vec<SemanticToken>,
}

/// 128 eight-bit codes; exactly 1024 bits on the wire.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct QuantizedEmbedding([u8; EMBED_DIM]);

impl QuantizedEmbedding {
    pub fn new(codes: [u8; EMBED_DIM]) -> Self {
        QuantizedEmbedding(codes)
    }

    pub fn from_slice(codes: &[u8]) -> Option<Self> {
        <[u8; EMBED_DIM]>::try_from(codes).ok().map(QuantizedEmbedding)
    }

    pub fn codes(&self) -> &[u8; EMBED_DIM] {
        &self.0
    }
}

impl fmt::Debug for QuantizedEmbedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "QuantizedEmbedding({:02x?}..)", &self.0[..4])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecBegin {
    pub speaker_id: SpeakerId,
    pub codec_id: CodecId,
    pub d_sample_ms: u16,
    pub total_payload_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameBody {
    StreamHeader(StreamHeader),
    Tokens(TokenChunk),
    SpeakerSwitchKnown { speaker_id: SpeakerId },
    TimbreCodecBegin(CodecBegin),
    TimbreCodecData { speaker_id: SpeakerId, chunk_index: u16, bytes: Vec<u8> },
    TimbreCodecEnd { speaker_id: SpeakerId },
    TimbreEmbed { speaker_id: SpeakerId, embedding: QuantizedEmbedding },
}

impl FrameBody {
    pub fn kind(&self) -> FrameKind {
        match self {
            FrameBody::StreamHeader(_) => FrameKind::StreamHeader,
            FrameBody::Tokens(_) => FrameKind::Tokens,
            FrameBody::SpeakerSwitchKnown { .. } => FrameKind::SpeakerSwitchKnown,
            FrameBody::TimbreCodecBegin(_) => FrameKind::TimbreCodecBegin,
            FrameBody::TimbreCodecData { .. } => FrameKind::TimbreCodecData,
            FrameBody::TimbreCodecEnd { .. } => FrameKind::TimbreCodecEnd,
            FrameBody::TimbreEmbed { .. } => FrameKind::TimbreEmbed,
        }
    }

    pub fn speaker_id(&self) -> Option<SpeakerId> {
        match self {
            FrameBody::SpeakerSwitchKnown { speaker_id }
            | FrameBody::TimbreCodecData { speaker_id, .. }
            | FrameBody::TimbreCodecEnd { speaker_id }
            | FrameBody::TimbreEmbed { speaker_id, .. } => Some(*speaker_id),
            FrameBody::TimbreCodecBegin(b) => Some(b.speaker_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub seq: u32,
    pub body: FrameBody,
}

impl Frame {
    pub fn new(seq: u32, body: FrameBody) -> Self {
        Frame { seq, body }
    }

    pub fn kind(&self) -> FrameKind {
        self.body.kind()
    }

    /// Serialized bytes, with a CRC trailer when `crc` is set.
    pub fn to_bytes(&self, crc: bool) -> Result<Vec<u8>, EncodeError> {
        let payload = encode_payload(&self.body)?;
        if payload.len() > MAX_PAYLOAD_LEN {
            return Err(EncodeError::PayloadTooLarge { len: payload.len() });
        }
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CRC_LEN);
        out.push(self.kind().code());
        out.extend_from_slice(&(payload.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&payload);
        if crc {
            let sum = crc32fast::hash(&out);
            out.extend_from_slice(&sum.to_be_bytes());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("payload of {len} bytes exceeds the 16-bit length field")]
    PayloadTooLarge { len: usize },
    #[error("token chunk is empty")]
    EmptyTokenChunk,
    #[error("token chunk of {count} tokens exceeds the 12-bit count field")]
    TooManyTokens { count: usize },
    #[error("start tick {tick} exceeds the 20-bit field")]
    TickOutOfRange { tick: u32 },
}

/// Serializes without a CRC trailer.
pub fn serialize_frame(frame: &Frame) -> Result<Vec<u8>, EncodeError> {
    frame.to_bytes(false)
}

fn encode_payload(body: &FrameBody) -> Result<Vec<u8>, EncodeError> {
    let mut p = Vec::new();
    match body {
        FrameBody::StreamHeader(h) => {
            p.extend_from_slice(&MAGIC);
            p.push(h.version);
            p.extend_from_slice(&h.token_rate_hz.to_be_bytes());
            p.push(h.codebook_bits);
            p.push(h.flags.0);
        }
        FrameBody::Tokens(chunk) => {
            let n = chunk.tokens.len();
            if n == 0 {
                return Err(EncodeError::EmptyTokenChunk);
            }
            if n > MAX_TOKENS_PER_FRAME {
                return Err(EncodeError::TooManyTokens { count: n });
            }
            if chunk.start_tick > MAX_START_TICK {
                return Err(EncodeError::TickOutOfRange { tick: chunk.start_tick });
            }
            let mut w = BitWriter::with_capacity(TOKENS_PREFIX_LEN);
            w.write(n as u32, 12);
            w.write(chunk.start_tick, 20);
            p = w.finish();
            p.extend_from_slice(&bits::pack_tokens(&chunk.tokens));
        }
        FrameBody::SpeakerSwitchKnown { speaker_id } | FrameBody::TimbreCodecEnd { speaker_id } => {
            p.extend_from_slice(&speaker_id.0.to_be_bytes());
        }
        FrameBody::TimbreCodecBegin(b) => {
            p.extend_from_slice(&b.speaker_id.0.to_be_bytes());
            p.push(b.codec_id.0);
            p.extend_from_slice(&b.d_sample_ms.to_be_bytes());
            p.extend_from_slice(&b.total_payload_bytes.to_be_bytes());
        }
        FrameBody::TimbreCodecData { speaker_id, chunk_index, bytes } => {
            p.extend_from_slice(&speaker_id.0.to_be_bytes());
            p.extend_from_slice(&chunk_index.to_be_bytes());
            p.extend_from_slice(bytes);
        }
        FrameBody::TimbreEmbed { speaker_id, embedding } => {
            p.extend_from_slice(&speaker_id.0.to_be_bytes());
            p.extend_from_slice(embedding.codes());
        }
    }
    Ok(p)
}

/// Token count implied by a TOKENS payload length, if the length is reachable.
pub fn token_count_for_payload_len(payload_len: usize) -> Option<usize> {
    let packed = payload_len.checked_sub(TOKENS_PREFIX_LEN)?;
    let n = packed * 8 / TOKEN_BITS as usize;
    (bits::packed_len(n) == packed).then_some(n)
}

/// Decoded 7-byte frame header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawHeader {
    pub kind_code: u8,
    pub payload_len: u16,
    pub seq: u32,
}

impl RawHeader {
    pub fn read(bytes: &[u8]) -> Option<RawHeader> {
        if bytes.len() < HEADER_LEN {
            return None;
        }
        Some(RawHeader {
            kind_code: bytes[0],
            payload_len: u16::from_be_bytes([bytes[1], bytes[2]]),
            seq: u32::from_be_bytes([bytes[3], bytes[4], bytes[5], bytes[6]]),
        })
    }

    pub fn frame_len(&self, crc: bool) -> usize {
        HEADER_LEN + self.payload_len as usize + if crc { CRC_LEN } else { 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    NonzeroPadding,
    TokenCountMismatch { declared: usize, derived: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Malformation {
    BadLength,
    BadMagic,
    TokenCountMismatch { declared: usize },
    EmptyTokenChunk,
    NonzeroPadding,
}

impl fmt::Display for Malformation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Malformation::BadLength => f.write_str("payload length invalid for kind"),
            Malformation::BadMagic => f.write_str("bad stream magic"),
            Malformation::TokenCountMismatch { declared } => {
                write!(f, "declared token count {declared} disagrees with payload length")
            }
            Malformation::EmptyTokenChunk => f.write_str("empty token chunk"),
            Malformation::NonzeroPadding => f.write_str("nonzero pad bits"),
        }
    }
}

/// Frame-level parse failures. `skip` is the full frame length, so a stream
/// parser can step over the bad frame and continue.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("unknown frame kind 0x{kind:02X} ({payload_len}-byte payload)")]
    UnknownKind { kind: u8, payload_len: u16, skip: usize },
    #[error("malformed {kind} frame: {reason}")]
    Malformed { kind: FrameKind, reason: Malformation, skip: usize },
    #[error("crc mismatch on frame seq {seq}")]
    CrcMismatch { seq: u32, skip: usize },
}

impl FrameError {
    pub fn skip(&self) -> usize {
        match self {
            FrameError::UnknownKind { skip, .. }
            | FrameError::Malformed { skip, .. }
            | FrameError::CrcMismatch { skip, .. } => *skip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Complete {
        frame: Frame,
        consumed: usize,
        warnings: Vec<ParseWarning>,
    },
    /// The input ends before the frame does; `needed` is the full frame length
    /// once known, or the header length otherwise.
    NeedMoreData {
        needed: usize,
    },
}

/// Frame parser configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameParser {
    /// Reject nonzero pad bits and TOKENS count/length disagreement.
    pub strict: bool,
    /// Expect and verify a CRC32 trailer.
    pub crc: bool,
}

impl FrameParser {
    pub fn lenient() -> Self {
        FrameParser { strict: false, crc: false }
    }

    pub fn strict() -> Self {
        FrameParser { strict: true, crc: false }
    }

    pub fn with_crc(mut self, crc: bool) -> Self {
        self.crc = crc;
        self
    }

    pub fn parse(&self, bytes: &[u8]) -> Result<Parsed, FrameError> {
        let Some(h) = RawHeader::read(bytes) else {
            return Ok(Parsed::NeedMoreData { needed: HEADER_LEN });
        };
        let total = h.frame_len(self.crc);
        if bytes.len() < total {
            return Ok(Parsed::NeedMoreData { needed: total });
        }
        let Some(kind) = FrameKind::from_code(h.kind_code) else {
            return Err(FrameError::UnknownKind { kind: h.kind_code, payload_len: h.payload_len, skip: total });
        };
        let payload_end = HEADER_LEN + h.payload_len as usize;
        if self.crc {
            let expected = u32::from_be_bytes(bytes[payload_end..total].try_into().unwrap());
            if crc32fast::hash(&bytes[..payload_end]) != expected {
                return Err(FrameError::CrcMismatch { seq: h.seq, skip: total });
            }
        }
        let mut warnings = Vec::new();
        let body = self
            .decode_payload(kind, &bytes[HEADER_LEN..payload_end], &mut warnings)
            .map_err(|reason| FrameError::Malformed { kind, reason, skip: total })?;
        Ok(Parsed::Complete { frame: Frame { seq: h.seq, body }, consumed: total, warnings })
    }

    fn decode_payload(
        &self,
        kind: FrameKind,
        p: &[u8],
        warnings: &mut Vec<ParseWarning>,
    ) -> Result<FrameBody, Malformation> {
        let need = |len: usize| if p.len() == len { Ok(()) } else { Err(Malformation::BadLength) };
        let u16_at = |i: usize| u16::from_be_bytes([p[i], p[i + 1]]);
        Ok(match kind {
            FrameKind::StreamHeader => {
                need(STREAM_HEADER_LEN)?;
                if p[..4] != MAGIC {
                    return Err(Malformation::BadMagic);
                }
                FrameBody::StreamHeader(StreamHeader {
                    version: p[4],
                    token_rate_hz: u16_at(5),
                    codebook_bits: p[7],
                    flags: StreamFlags(p[8]),
                })
            }
            FrameKind::Tokens => FrameBody::Tokens(self.decode_tokens(p, warnings)?),
            FrameKind::SpeakerSwitchKnown => {
                need(2)?;
                FrameBody::SpeakerSwitchKnown { speaker_id: SpeakerId(u16_at(0)) }
            }
            FrameKind::TimbreCodecBegin => {
                need(CODEC_BEGIN_LEN)?;
                FrameBody::TimbreCodecBegin(CodecBegin {
                    speaker_id: SpeakerId(u16_at(0)),
                    codec_id: CodecId(p[2]),
                    d_sample_ms: u16_at(3),
                    total_payload_bytes: u32::from_be_bytes([p[5], p[6], p[7], p[8]]),
                })
            }
            FrameKind::TimbreCodecData => {
                if p.len() < 4 {
                    return Err(Malformation::BadLength);
                }
                FrameBody::TimbreCodecData {
                    speaker_id: SpeakerId(u16_at(0)),
                    chunk_index: u16_at(2),
                    bytes: p[4..].to_vec(),
                }
            }
            FrameKind::TimbreCodecEnd => {
                need(2)?;
                FrameBody::TimbreCodecEnd { speaker_id: SpeakerId(u16_at(0)) }
            }
            FrameKind::TimbreEmbed => {
                need(EMBED_PAYLOAD_LEN)?;
                FrameBody::TimbreEmbed {
                    speaker_id: SpeakerId(u16_at(0)),
                    embedding: QuantizedEmbedding::from_slice(&p[2..]).expect("length checked"),
                }
            }
        })
    }

    fn decode_tokens(&self, p: &[u8], warnings: &mut Vec<ParseWarning>) -> Result<TokenChunk, Malformation> {
        if p.len() < TOKENS_PREFIX_LEN {
            return Err(Malformation::BadLength);
        }
        let mut r = BitReader::new(&p[..TOKENS_PREFIX_LEN]);
        let declared = r.read(12).expect("4 bytes") as usize;
        let start_tick = r.read(20).expect("4 bytes");
        let packed = &p[TOKENS_PREFIX_LEN..];
        let count = if bits::packed_len(declared) == packed.len() {
            declared
        } else {
            // A corrupted count field is recoverable because the payload
            // length pins down the token count uniquely.
            match token_count_for_payload_len(p.len()) {
                Some(derived) if !self.strict => {
                    warnings.push(ParseWarning::TokenCountMismatch { declared, derived });
                    derived
                }
                _ => return Err(Malformation::TokenCountMismatch { declared }),
            }
        };
        if count == 0 && self.strict {
            return Err(Malformation::EmptyTokenChunk);
        }
        let (tokens, pad_clean) = bits::unpack_tokens_lenient(packed, count).map_err(|_| Malformation::BadLength)?;
        if !pad_clean {
            if self.strict {
                return Err(Malformation::NonzeroPadding);
            }
            warnings.push(ParseWarning::NonzeroPadding);
        }
        Ok(TokenChunk { start_tick, tokens })
    }

    /// Parses a concatenation of frames. Bad frames are skipped and reported;
    /// a trailing partial frame is reported as `NeedMoreData`.
    pub fn parse_stream(&self, mut bytes: &[u8]) -> StreamParse {
        let mut out = StreamParse::default();
        while !bytes.is_empty() {
            match self.parse(bytes) {
                Ok(Parsed::Complete { frame, consumed, .. }) => {
                    out.frames.push(frame);
                    bytes = &bytes[consumed..];
                }
                Ok(Parsed::NeedMoreData { needed }) => {
                    out.trailing = Some(needed - bytes.len());
                    break;
                }
                Err(e) => {
                    let skip = e.skip();
                    out.errors.push(e);
                    bytes = &bytes[skip..];
                }
            }
        }
        out
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct StreamParse {
    pub frames: Vec<Frame>,
    pub errors: Vec<FrameError>,
    /// Bytes still missing from a trailing partial frame.
    pub trailing: Option<usize>,
}

/// Lenient, CRC-less parse of a single frame.
pub fn deserialize_frame(bytes: &[u8]) -> Result<Parsed, FrameError> {
    FrameParser::lenient().parse(bytes)
}
