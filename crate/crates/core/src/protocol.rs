//! Control protocol messages, version 1.
//!
//! Text frames carry one JSON object with a `type` field. Binary frames
//! carry previews: one kind byte, the frame index as `u32` little-endian,
//! then a PNG.

use serde::{Deserialize, Serialize};
use serde_json::Number;

use crate::control::ControlSnapshot;
use crate::error::{Error, Result};
use crate::preprocess::LiveParams;

pub const PROTO_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    SetParam {
        name: String,
        value: f64,
    },
    GetState,
    StartRecord {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dir: Option<String>,
    },
    StopRecord,
    Pause,
    Resume,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello { proto: u32 },
    Ack { name: String, value: Number },
    State { params: LiveParams, paused: bool, recording: bool, fps: f64, generation: u64 },
    Error { message: String },
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("malformed message: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages always serialize")
    }
}

impl ServerMessage {
    pub fn hello() -> Self {
        ServerMessage::Hello { proto: PROTO_VERSION }
    }

    /// Norms are acknowledged as integers, factors as floats.
    pub fn ack(name: &str, value: f64) -> Self {
        let value = if name.starts_with("norm_") {
            Number::from(value as u64)
        } else {
            Number::from_f64(value).unwrap_or_else(|| Number::from(0))
        };
        ServerMessage::Ack { name: name.to_string(), value }
    }

    pub fn state(s: &ControlSnapshot, fps: f64) -> Self {
        ServerMessage::State {
            params: s.params,
            paused: s.paused,
            recording: s.recording,
            fps: if fps.is_finite() { fps } else { 0.0 },
            generation: s.generation,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error { message: message.into() }
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("malformed message: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages always serialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PreviewKind {
    Input = 0,
    Output = 1,
    Composite = 2,
}

impl PreviewKind {
    pub const ALL: [PreviewKind; 3] = [PreviewKind::Input, PreviewKind::Output, PreviewKind::Composite];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(b as usize).copied()
    }
}

pub fn encode_preview(kind: PreviewKind, frame: u64, png: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + png.len());
    out.push(kind as u8);
    out.extend_from_slice(&(frame as u32).to_le_bytes());
    out.extend_from_slice(png);
    out
}

/// Splits a binary preview frame into kind, frame index and PNG bytes.
pub fn decode_preview(bytes: &[u8]) -> Result<(PreviewKind, u32, &[u8])> {
    if bytes.len() < 5 {
        return Err(Error::InvalidArgument("preview frame shorter than its 5-byte header".into()));
    }
    let kind = PreviewKind::from_byte(bytes[0])
        .ok_or_else(|| Error::InvalidArgument(format!("unknown preview kind {}", bytes[0])))?;
    let index = u32::from_le_bytes(bytes[1..5].try_into().expect("4 bytes"));
    Ok((kind, index, &bytes[5..]))
}
