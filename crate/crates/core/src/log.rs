//! Timestamped frame logs and the `.slklog` file format.
//!
//! A log file is a plain concatenation of records, each an 8-byte big-endian
//! microsecond timestamp followed by one serialized frame. Record boundaries
//! come from the frame header's payload length; a CRC trailer is expected
//! once a stream header announcing it has been read.

use crate::wire::{
    Frame, FrameBody, FrameError, FrameKind, FrameParser, Parsed, RawHeader, StreamFlags, HEADER_LEN, MAGIC,
};
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const FILE_EXTENSION: &str = "slklog";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub t_us: u64,
    /// Serialized frame including any CRC trailer.
    pub bytes: Vec<u8>,
}

impl LogRecord {
    pub fn header(&self) -> Option<RawHeader> {
        RawHeader::read(&self.bytes)
    }

    pub fn bits(&self) -> u64 {
        self.bytes.len() as u64 * 8
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("log truncated at byte offset {offset}")]
    Truncated { offset: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrameLog {
    pub records: Vec<LogRecord>,
}

impl FrameLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, t_us: u64, bytes: Vec<u8>) {
        self.records.push(LogRecord { t_us, bytes });
    }

    /// Whether frames carry a CRC trailer, as announced by the first record's
    /// stream header.
    pub fn crc_enabled(&self) -> bool {
        self.records.first().and_then(|r| stream_flags(&r.bytes)).is_some_and(|f| f.crc())
    }

    pub fn total_bits(&self) -> u64 {
        self.records.iter().map(LogRecord::bits).sum()
    }

    /// Parses every record, returning the timestamp with each outcome.
    pub fn parse_frames(&self, strict: bool) -> Vec<(u64, Result<Parsed, FrameError>)> {
        let mut parser = FrameParser { strict, crc: false };
        self.records
            .iter()
            .map(|r| {
                if let Some(flags) = stream_flags(&r.bytes) {
                    parser.crc = flags.crc();
                }
                (r.t_us, parser.parse(&r.bytes))
            })
            .collect()
    }

    /// Frames that parse cleanly, with their timestamps.
    pub fn frames(&self) -> Vec<(u64, Frame)> {
        self.parse_frames(false)
            .into_iter()
            .filter_map(|(t, p)| match p {
                Ok(Parsed::Complete { frame, .. }) => Some((t, frame)),
                _ => None,
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.records.iter().map(|r| 8 + r.bytes.len()).sum());
        for r in &self.records {
            out.extend_from_slice(&r.t_us.to_be_bytes());
            out.extend_from_slice(&r.bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FrameLog, LogError> {
        let mut log = FrameLog::new();
        let mut crc = false;
        let mut pos = 0;
        while pos < bytes.len() {
            let rest = &bytes[pos..];
            if rest.len() < 8 + HEADER_LEN {
                return Err(LogError::Truncated { offset: pos });
            }
            let t_us = u64::from_be_bytes(rest[..8].try_into().unwrap());
            let header = RawHeader::read(&rest[8..]).expect("length checked");
            // A stream header sets the trailer mode for itself and what follows.
            if let Some(flags) = stream_flags(&rest[8..]) {
                crc = flags.crc();
            }
            let len = header.frame_len(crc);
            if rest.len() < 8 + len {
                return Err(LogError::Truncated { offset: pos });
            }
            let frame = &rest[8..8 + len];
            log.push(t_us, frame.to_vec());
            pos += 8 + len;
        }
        Ok(log)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<FrameLog, LogError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        FrameLog::from_bytes(&buf)
    }

    pub fn load(path: &Path) -> Result<FrameLog, LogError> {
        FrameLog::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }
}

/// Flags of a well-formed stream header frame; `None` for any other bytes.
pub(crate) fn stream_flags(frame: &[u8]) -> Option<StreamFlags> {
    let h = RawHeader::read(frame)?;
    if h.kind_code != FrameKind::StreamHeader.code() || h.payload_len != 9 {
        return None;
    }
    let p = frame.get(HEADER_LEN..HEADER_LEN + 9)?;
    (p[..4] == MAGIC).then_some(StreamFlags(p[8]))
}

/// Builds a log from already-constructed frames.
pub fn log_from_frames<'a>(
    frames: impl IntoIterator<Item = (u64, &'a Frame)>,
) -> Result<FrameLog, crate::wire::EncodeError> {
    let mut log = FrameLog::new();
    let mut crc = false;
    for (t, f) in frames {
        if let FrameBody::StreamHeader(h) = &f.body {
            crc = h.flags.crc();
        }
        log.push(t, f.to_bytes(crc)?);
    }
    Ok(log)
}
