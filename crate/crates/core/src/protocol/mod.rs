//! Message model shared by the broker, learners and the browser console.
//!
//! Two encodings of one model: a length-prefixed big-endian binary frame for
//! TCP ([`encode_envelope`] / [`decode_envelope`]) and a JSON text mapping
//! for the WebSocket bridge ([`encode_json`] / [`decode_json`]). Both are
//! canonical: every accepted input re-encodes to exactly itself.

mod binary;
mod json;
pub mod stream;

pub use binary::{decode_envelope, decode_payload, encode_envelope};
pub use json::{decode_json, encode_json};

use std::fmt;

use thiserror::Error;

use crate::instrument::{MeterMode, MultimeterState};

pub type UserId = u32;
pub type GroupId = u16;

/// Length prefix size.
pub const LEN_PREFIX: usize = 4;
/// kind(1) + origin(4) + group(2) + seq(4).
pub const HEADER_LEN: usize = 11;
pub const MAX_NAME_LEN: usize = u8::MAX as usize;
pub const MAX_TEXT_LEN: usize = u16::MAX as usize;
pub const MAX_MEMBERS: usize = u8::MAX as usize;
/// dial, power, overload, last_value_micro.
pub const STATE_LEN: usize = 3 + 8;
const MAX_ROSTER_BODY: usize = 1 + MAX_MEMBERS * (4 + 1 + MAX_NAME_LEN) + STATE_LEN;
/// Largest payload any valid envelope encodes to (a full roster block).
pub const MAX_PAYLOAD: usize = HEADER_LEN + MAX_ROSTER_BODY;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("unknown message kind {0}")]
    UnknownKind(String),
    #[error("truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes after message body")]
    TrailingBytes(usize),
    #[error("{field} is {len} bytes, maximum is {max}")]
    TooLong {
        field: &'static str,
        len: usize,
        max: usize,
    },
    #[error("frame payload of {0} bytes exceeds the maximum")]
    FrameTooLarge(usize),
    #[error("invalid {field}: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("malformed text: {0}")]
    MalformedText(String),
}

impl ProtocolError {
    /// Stable error-class name.
    pub fn class(&self) -> &'static str {
        match self {
            ProtocolError::UnknownKind(_) => "UNKNOWN_KIND",
            ProtocolError::Truncated { .. } => "TRUNCATED",
            ProtocolError::TrailingBytes(_) => "TRAILING_BYTES",
            ProtocolError::TooLong { .. } => "TOO_LONG",
            ProtocolError::FrameTooLarge(_) => "FRAME_TOO_LARGE",
            ProtocolError::InvalidField { .. } => "INVALID_FIELD",
            ProtocolError::MalformedText(_) => "MALFORMED_TEXT",
        }
    }

    /// Errors after which a binary byte stream cannot be trusted.
    pub fn is_framing(&self) -> bool {
        matches!(
            self,
            ProtocolError::UnknownKind(_)
                | ProtocolError::Truncated { .. }
                | ProtocolError::TrailingBytes(_)
                | ProtocolError::FrameTooLarge(_)
        )
    }

    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ProtocolError::InvalidField {
            field,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Join = 0x01,
    JoinAck = 0x02,
    Leave = 0x03,
    Control = 0x04,
    Chat = 0x05,
    Measurement = 0x06,
    Ping = 0x0A,
    Pong = 0x0B,
    RelayControl = 0x14,
    RelayChat = 0x15,
    RelayMeasurement = 0x16,
    RosterUpdate = 0x20,
    Error = 0x30,
}

impl MessageKind {
    pub const ALL: [MessageKind; 13] = [
        MessageKind::Join,
        MessageKind::JoinAck,
        MessageKind::Leave,
        MessageKind::Control,
        MessageKind::Chat,
        MessageKind::Measurement,
        MessageKind::Ping,
        MessageKind::Pong,
        MessageKind::RelayControl,
        MessageKind::RelayChat,
        MessageKind::RelayMeasurement,
        MessageKind::RosterUpdate,
        MessageKind::Error,
    ];

    pub fn from_u8(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| *k as u8 == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Join => "JOIN",
            MessageKind::JoinAck => "JOIN_ACK",
            MessageKind::Leave => "LEAVE",
            MessageKind::Control => "CONTROL",
            MessageKind::Chat => "CHAT",
            MessageKind::Measurement => "MEASUREMENT",
            MessageKind::Ping => "PING",
            MessageKind::Pong => "PONG",
            MessageKind::RelayControl => "RELAY_CONTROL",
            MessageKind::RelayChat => "RELAY_CHAT",
            MessageKind::RelayMeasurement => "RELAY_MEASUREMENT",
            MessageKind::RosterUpdate => "ROSTER_UPDATE",
            MessageKind::Error => "ERROR",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Control code of a [`ControlParameter`]. Unknown codes are representable
/// on the wire so that the broker can reject them explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ControlCode(pub u8);

impl ControlCode {
    pub const SET_DIAL: ControlCode = ControlCode(0);
    pub const SET_POWER: ControlCode = ControlCode(1);
    pub const SET_PROBE_NODE: ControlCode = ControlCode(2);

    pub fn name(self) -> Option<&'static str> {
        match self.0 {
            0 => Some("SET_DIAL"),
            1 => Some("SET_POWER"),
            2 => Some("SET_PROBE_NODE"),
            _ => None,
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        (0..3).map(ControlCode).find(|c| c.name() == Some(s))
    }
}

/// One user action on an instrument, as relayed between peers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ControlParameter {
    pub instrument: u8,
    pub code: ControlCode,
    pub value: i64,
}

impl ControlParameter {
    /// A parameter addressed to the multimeter.
    pub fn new(code: ControlCode, value: i64) -> Self {
        ControlParameter {
            instrument: 0,
            code,
            value,
        }
    }

    pub fn set_dial(ordinal: u8) -> Self {
        Self::new(ControlCode::SET_DIAL, ordinal as i64)
    }

    pub fn set_power(on: bool) -> Self {
        Self::new(ControlCode::SET_POWER, on as i64)
    }
}

impl fmt::Display for ControlParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.code.name() {
            Some(name) => write!(f, "{name} {}", self.value),
            None => write!(f, "CODE_{} {}", self.code.0, self.value),
        }
    }
}

/// Measured data from a serial-attached meter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ReadingPayload {
    pub mode: MeterMode,
    pub range_ordinal: u8,
    pub overload: bool,
    pub value_micro: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Member {
    pub id: UserId,
    pub name: String,
}

/// Group membership plus the group's authoritative instrument state.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RosterBlock {
    pub members: Vec<Member>,
    pub state: MultimeterState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorCode {
    DuplicateUser = 1,
    NotJoined = 2,
    InvalidParameter = 3,
    OversizedName = 4,
    UnexpectedKind = 5,
    AlreadyJoined = 6,
    GroupFull = 7,
    BadMessage = 8,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 8] = [
        ErrorCode::DuplicateUser,
        ErrorCode::NotJoined,
        ErrorCode::InvalidParameter,
        ErrorCode::OversizedName,
        ErrorCode::UnexpectedKind,
        ErrorCode::AlreadyJoined,
        ErrorCode::GroupFull,
        ErrorCode::BadMessage,
    ];

    pub fn from_u8(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|c| *c as u8 == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCode::DuplicateUser => "DUPLICATE_USER",
            ErrorCode::NotJoined => "NOT_JOINED",
            ErrorCode::InvalidParameter => "INVALID_PARAMETER",
            ErrorCode::OversizedName => "OVERSIZED_NAME",
            ErrorCode::UnexpectedKind => "UNEXPECTED_KIND",
            ErrorCode::AlreadyJoined => "ALREADY_JOINED",
            ErrorCode::GroupFull => "GROUP_FULL",
            ErrorCode::BadMessage => "BAD_MESSAGE",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub detail: String,
}

/// Kind-specific payload. The variant determines the [`MessageKind`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Join { name: String },
    JoinAck(RosterBlock),
    Leave(RosterBlock),
    Control(ControlParameter),
    Chat { text: String },
    Measurement(ReadingPayload),
    Ping { nonce: u64 },
    Pong { nonce: u64 },
    RelayControl(ControlParameter),
    RelayChat { text: String },
    RelayMeasurement(ReadingPayload),
    RosterUpdate(RosterBlock),
    Error(ErrorBody),
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::Join { .. } => MessageKind::Join,
            Body::JoinAck(_) => MessageKind::JoinAck,
            Body::Leave(_) => MessageKind::Leave,
            Body::Control(_) => MessageKind::Control,
            Body::Chat { .. } => MessageKind::Chat,
            Body::Measurement(_) => MessageKind::Measurement,
            Body::Ping { .. } => MessageKind::Ping,
            Body::Pong { .. } => MessageKind::Pong,
            Body::RelayControl(_) => MessageKind::RelayControl,
            Body::RelayChat { .. } => MessageKind::RelayChat,
            Body::RelayMeasurement(_) => MessageKind::RelayMeasurement,
            Body::RosterUpdate(_) => MessageKind::RosterUpdate,
            Body::Error(_) => MessageKind::Error,
        }
    }
}

/// One wire message. `seq` is 0 on client→broker messages and assigned by
/// the broker on relays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageEnvelope {
    pub origin: UserId,
    pub group: GroupId,
    pub seq: u32,
    pub body: Body,
}

impl MessageEnvelope {
    pub fn new(origin: UserId, group: GroupId, body: Body) -> Self {
        MessageEnvelope {
            origin,
            group,
            seq: 0,
            body,
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }

    /// Check variable-length fields against their wire maxima.
    pub fn check_limits(&self) -> Result<(), ProtocolError> {
        fn limit(field: &'static str, len: usize, max: usize) -> Result<(), ProtocolError> {
            if len > max {
                Err(ProtocolError::TooLong { field, len, max })
            } else {
                Ok(())
            }
        }
        match &self.body {
            Body::Join { name } => limit("name", name.len(), MAX_NAME_LEN),
            Body::Chat { text } | Body::RelayChat { text } => {
                limit("text", text.len(), MAX_TEXT_LEN)
            }
            Body::Error(e) => limit("detail", e.detail.len(), MAX_TEXT_LEN),
            Body::JoinAck(r) | Body::Leave(r) | Body::RosterUpdate(r) => {
                limit("members", r.members.len(), MAX_MEMBERS)?;
                r.members
                    .iter()
                    .try_for_each(|m| limit("name", m.name.len(), MAX_NAME_LEN))
            }
            _ => Ok(()),
        }
    }
}
