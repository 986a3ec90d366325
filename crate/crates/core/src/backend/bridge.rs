//! Client for an out-of-process model server speaking line-delimited JSON
//! over stdin/stdout.
//!
//! Request: `{"id": 1, "op": "tokenize", "args": {"audio": "a.wav"}}`
//! Response: `{"id": 1, "ok": true, "result": [..]}` or
//! `{"id": 1, "ok": false, "error": "unknown_op"}`.
//!
//! Audio crosses the boundary as file paths; byte payloads as base64.

use super::{AudioHandle, Backend, BackendError, TimbreRef};
use crate::bits::SemanticToken;
use crate::wire::CodecId;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRequest {
    pub id: u64,
    pub op: String,
    pub args: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeResponse {
    pub id: Option<u64>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Channel {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
}

pub struct BridgeBackend {
    channel: Mutex<Channel>,
    next_id: AtomicU64,
    child: Mutex<Option<Child>>,
}

impl BridgeBackend {
    /// Starts the bridge process and talks to it over its stdio.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, BackendError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Unavailable(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        let mut bridge = Self::from_streams(BufReader::new(stdout), stdin);
        bridge.child = Mutex::new(Some(child));
        Ok(bridge)
    }

    pub fn from_streams(reader: impl BufRead + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        BridgeBackend {
            channel: Mutex::new(Channel { reader: Box::new(reader), writer: Box::new(writer) }),
            next_id: AtomicU64::new(1),
            child: Mutex::new(None),
        }
    }

    /// Sends one request and waits for its response.
    pub fn call(&self, op: &str, args: Value) -> Result<Value, BackendError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let req = BridgeRequest { id, op: op.to_string(), args };
        let mut line = serde_json::to_string(&req).expect("request serializes");
        line.push('\n');

        let mut ch = self.channel.lock().map_err(|_| unavailable("bridge lock poisoned"))?;
        ch.writer
            .write_all(line.as_bytes())
            .and_then(|_| ch.writer.flush())
            .map_err(|e| unavailable(format!("write failed: {e}")))?;
        let mut reply = String::new();
        let n = ch.reader.read_line(&mut reply).map_err(|e| unavailable(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(unavailable("bridge closed its output"));
        }
        drop(ch);

        let resp: BridgeResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| BackendError::Protocol(format!("bad response line: {e}")))?;
        if resp.id != Some(id) {
            return Err(BackendError::Protocol(format!("response id {:?} does not match request id {id}", resp.id)));
        }
        if !resp.ok {
            return Err(BackendError::Remote {
                op: op.to_string(),
                message: resp.error.unwrap_or_else(|| "unspecified error".into()),
            });
        }
        resp.result.ok_or_else(|| BackendError::Protocol("ok response without result".into()))
    }
}

impl Drop for BridgeBackend {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            if let Some(mut c) = child.take() {
                // Closing stdin ends the bridge's request loop.
                if let Ok(mut ch) = self.channel.lock() {
                    ch.writer = Box::new(std::io::sink());
                }
                drop(c.stdin.take());
                let _ = c.wait();
            }
        }
    }
}

fn unavailable(msg: impl Into<String>) -> BackendError {
    BackendError::Unavailable(msg.into())
}

fn audio_arg(audio: &AudioHandle) -> Result<Value, BackendError> {
    match audio {
        AudioHandle::File(p) => Ok(json!(p.to_string_lossy())),
        AudioHandle::Clip(_) => Err(BackendError::Unsupported("bridge audio must be file-backed".into())),
    }
}

fn audio_result(v: Value) -> Result<AudioHandle, BackendError> {
    let path = match &v {
        Value::String(s) => Some(s.as_str()),
        Value::Object(m) => m.get("audio").and_then(Value::as_str),
        _ => None,
    };
    path.map(|p| AudioHandle::File(PathBuf::from(p)))
        .ok_or_else(|| BackendError::Protocol(format!("expected an audio path, got {v}")))
}

fn string_result(v: Value) -> Result<String, BackendError> {
    match v {
        Value::String(s) => Ok(s),
        other => Err(BackendError::Protocol(format!("expected a string, got {other}"))),
    }
}

impl Backend for BridgeBackend {
    fn tokenize(&self, audio: &AudioHandle) -> Result<Vec<SemanticToken>, BackendError> {
        let v = self.call("tokenize", json!({ "audio": audio_arg(audio)? }))?;
        let values: Vec<u64> =
            serde_json::from_value(v).map_err(|e| BackendError::Protocol(format!("tokenize result: {e}")))?;
        values
            .into_iter()
            .map(|x| {
                u16::try_from(x)
                    .ok()
                    .and_then(|x| SemanticToken::new(x).ok())
                    .ok_or_else(|| BackendError::Protocol(format!("token {x} out of range")))
            })
            .collect()
    }

    fn extract_embedding(&self, audio: &AudioHandle) -> Result<Vec<f64>, BackendError> {
        let v = self.call("extract_embedding", json!({ "audio": audio_arg(audio)? }))?;
        serde_json::from_value(v).map_err(|e| BackendError::Protocol(format!("extract_embedding result: {e}")))
    }

    fn codec_encode(&self, audio: &AudioHandle, codec: CodecId) -> Result<Vec<u8>, BackendError> {
        let v = self.call("codec_encode", json!({ "audio": audio_arg(audio)?, "codec_id": codec.0 }))?;
        B64.decode(string_result(v)?).map_err(|e| BackendError::Protocol(format!("codec_encode base64: {e}")))
    }

    fn codec_decode(&self, bytes: &[u8], codec: CodecId) -> Result<AudioHandle, BackendError> {
        let v = self.call("codec_decode", json!({ "bytes": B64.encode(bytes), "codec_id": codec.0 }))?;
        audio_result(v)
    }

    fn timbre_from_audio(&self, audio: &AudioHandle) -> Result<TimbreRef, BackendError> {
        let v = self.call("timbre_from_audio", json!({ "audio": audio_arg(audio)? }))?;
        string_result(v).map(TimbreRef)
    }

    fn timbre_from_embedding(&self, embedding: &[f64]) -> Result<TimbreRef, BackendError> {
        let v = self.call("timbre_from_embedding", json!({ "embedding": embedding }))?;
        string_result(v).map(TimbreRef)
    }

    fn synthesize(&self, tokens: &[SemanticToken], timbre: &TimbreRef) -> Result<AudioHandle, BackendError> {
        let values: Vec<u16> = tokens.iter().map(|t| t.value()).collect();
        let v = self.call("synthesize", json!({ "tokens": values, "timbre": timbre.0 }))?;
        audio_result(v)
    }
}
