//! Intermediate protocol spoken among Shim, Core and Backends.
//!
//! Every frame is a fixed 20-byte big-endian header followed by a payload:
//!
//! ```text
//!  0       1       2               4                               8
//! +-------+-------+---------------+-------------------------------+
//! |version| type  | payload_length|              xid              |
//! +-------+-------+---------------+-------------------------------+
//! |           module_id           |                               |
//! +-------------------------------+          datapath_id          |
//! |                               |                               |
//! +-------------------------------+-------------------------------+
//! ```
//!
//! `module_id` 0 denotes the shim/network side; `datapath_id` 0 means the
//! frame does not concern a network element. SBI payloads are a kind byte
//! followed by TLVs in ascending tag order (see [`sbi_codec`]).

mod codec;
pub mod sbi_codec;
mod stream;

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::sbi::{DatapathId, ModuleId, SbiMessage, Xid};

pub use codec::{decode_header, decode_message, encode_message};
pub use stream::FrameBuffer;

pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 20;
pub const MAX_PAYLOAD: usize = u16::MAX as usize;

/// Protocol id of the simplified SBI carried in SBI frames.
pub const SBI_PROTOCOL_ID: u8 = 0x11;
pub const SBI_PROTOCOL_VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    Error = 0x02,
    ModuleAnnouncement = 0x03,
    ModuleAcknowledge = 0x04,
    Fence = 0x06,
    Sbi = 0x11,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<MsgType> {
        Some(match v {
            0x01 => MsgType::Hello,
            0x02 => MsgType::Error,
            0x03 => MsgType::ModuleAnnouncement,
            0x04 => MsgType::ModuleAcknowledge,
            0x06 => MsgType::Fence,
            0x11 => MsgType::Sbi,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MessageHeader {
    pub version: u8,
    pub msg_type: MsgType,
    pub payload_length: u16,
    pub xid: Xid,
    pub module_id: ModuleId,
    pub datapath_id: DatapathId,
}

/// A (protocol id, version) pair offered in a hello.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProtocolOffer {
    pub protocol_id: u8,
    pub version: u8,
}

impl ProtocolOffer {
    pub const fn new(protocol_id: u8, version: u8) -> Self {
        ProtocolOffer {
            protocol_id,
            version,
        }
    }
}

impl fmt::Display for ProtocolOffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:02x}/{}", self.protocol_id, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct HelloBody {
    pub offered: Vec<ProtocolOffer>,
}

impl HelloBody {
    pub fn new(offered: Vec<ProtocolOffer>) -> Self {
        HelloBody { offered }
    }

    /// The hello every component of this engine sends.
    pub fn simplified_sbi() -> Self {
        HelloBody::new(vec![ProtocolOffer::new(
            SBI_PROTOCOL_ID,
            SBI_PROTOCOL_VERSION,
        )])
    }

    pub fn is_duplicate_free(&self) -> bool {
        let set: BTreeSet<_> = self.offered.iter().collect();
        set.len() == self.offered.len()
    }
}

/// Intersection of the offered pairs, in `local`'s order. Empty means the
/// peers share no protocol.
pub fn negotiate_hello(local: &HelloBody, remote: &HelloBody) -> Vec<ProtocolOffer> {
    local
        .offered
        .iter()
        .filter(|o| remote.offered.contains(o))
        .copied()
        .collect()
}

/// Error codes carried in ERROR frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ErrorCode(pub u16);

impl ErrorCode {
    pub const MALFORMED: ErrorCode = ErrorCode(0x0001);
    pub const INCOMPATIBLE_PROTOCOL: ErrorCode = ErrorCode(0x0002);
    pub const DUPLICATE_MODULE: ErrorCode = ErrorCode(0x0003);
    pub const UNKNOWN_MODULE: ErrorCode = ErrorCode(0x0004);
    pub const UNKNOWN_XID: ErrorCode = ErrorCode(0x0005);
    pub const DUPLICATE_FENCE: ErrorCode = ErrorCode(0x0006);
    pub const STEP_BUDGET_EXCEEDED: ErrorCode = ErrorCode(0x0007);
    pub const UNKNOWN_DATAPATH: ErrorCode = ErrorCode(0x0008);
    pub const UNEXPECTED_MESSAGE: ErrorCode = ErrorCode(0x0009);

    pub fn name(self) -> &'static str {
        match self {
            ErrorCode::MALFORMED => "malformed",
            ErrorCode::INCOMPATIBLE_PROTOCOL => "incompatible_protocol",
            ErrorCode::DUPLICATE_MODULE => "duplicate_module",
            ErrorCode::UNKNOWN_MODULE => "unknown_module",
            ErrorCode::UNKNOWN_XID => "unknown_xid",
            ErrorCode::DUPLICATE_FENCE => "duplicate_fence",
            ErrorCode::STEP_BUDGET_EXCEEDED => "step_budget_exceeded",
            ErrorCode::UNKNOWN_DATAPATH => "unknown_datapath",
            ErrorCode::UNEXPECTED_MESSAGE => "unexpected_message",
            _ => "unknown_error",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(0x{:04x})", self.name(), self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Hello(HelloBody),
    Error(ErrorBody),
    ModuleAnnouncement { name: String },
    /// The assigned id travels in the header's `module_id`.
    ModuleAcknowledge { name: String },
    Fence,
    Sbi(SbiMessage),
}

impl Payload {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Payload::Hello(_) => MsgType::Hello,
            Payload::Error(_) => MsgType::Error,
            Payload::ModuleAnnouncement { .. } => MsgType::ModuleAnnouncement,
            Payload::ModuleAcknowledge { .. } => MsgType::ModuleAcknowledge,
            Payload::Fence => MsgType::Fence,
            Payload::Sbi(_) => MsgType::Sbi,
        }
    }
}

/// A decoded frame. The header's type and length are derived from the
/// payload when encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    pub xid: Xid,
    pub module_id: ModuleId,
    pub datapath_id: DatapathId,
    pub payload: Payload,
}

impl Message {
    pub fn new(xid: Xid, module_id: ModuleId, datapath_id: DatapathId, payload: Payload) -> Self {
        Message {
            xid,
            module_id,
            datapath_id,
            payload,
        }
    }

    pub fn hello(xid: Xid, body: HelloBody) -> Self {
        Message::new(xid, ModuleId::NETWORK, DatapathId(0), Payload::Hello(body))
    }

    pub fn fence(xid: Xid, module_id: ModuleId) -> Self {
        Message::new(xid, module_id, DatapathId(0), Payload::Fence)
    }

    pub fn error(xid: Xid, module_id: ModuleId, code: ErrorCode, text: impl Into<String>) -> Self {
        Message::new(
            xid,
            module_id,
            DatapathId(0),
            Payload::Error(ErrorBody {
                code,
                text: text.into(),
            }),
        )
    }

    /// An SBI frame; the header datapath is taken from the message.
    pub fn sbi(xid: Xid, module_id: ModuleId, msg: impl Into<SbiMessage>) -> Self {
        let msg = msg.into();
        Message::new(xid, module_id, msg.datapath(), Payload::Sbi(msg))
    }

    pub fn msg_type(&self) -> MsgType {
        self.payload.msg_type()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("payload of {0} bytes exceeds the 65535-byte limit")]
    PayloadTooLarge(usize),
    #[error("invalid message: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    /// The buffer holds less than one frame; `expected` is the total frame
    /// length known so far (20 until the header is complete).
    #[error("need {expected} bytes")]
    NeedMoreData { expected: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl DecodeError {
    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        DecodeError::Protocol(msg.into())
    }
}
