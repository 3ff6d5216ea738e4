//! Simplified southbound vocabulary.
//!
//! Packet headers, matches, actions and flow rules model a flat, single-table
//! OpenFlow-like switch. Every header field is always present on a packet
//! (unused fields are zero), and a [`Match`] constrains any subset of them.
//! The intersection and conflict algebra in [`matching`] and [`action`] is
//! what the composition policies are built on.

pub mod action;
pub mod matching;
pub mod text;

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

pub use action::{
    actions_differ, apply_actions, rules_conflict, rules_conflict_scoped, validate_actions,
    Action, ActionField, ActionOutcome, ConflictScope, OutPort,
};
pub use matching::{Ipv4Prefix, Match};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SbiError {
    #[error("prefix length {0} exceeds 32")]
    PrefixTooLong(u8),
    #[error("drop must be the only action in a list")]
    DropNotAlone,
    #[error("datapath id 0 is reserved")]
    ZeroDatapath,
    #[error("cannot parse {what}: {input:?}")]
    Parse { what: &'static str, input: String },
}

/// Network element identifier. Zero is reserved for "not applicable".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct DatapathId(pub u64);

impl fmt::Display for DatapathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Application module identifier assigned by the Core. Zero is the shim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ModuleId(pub u32);

impl ModuleId {
    pub const NETWORK: ModuleId = ModuleId(0);
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Transaction identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Xid(pub u32);

impl fmt::Display for Xid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const ZERO: MacAddr = MacAddr([0; 6]);

    pub fn from_u64(v: u64) -> Self {
        let b = v.to_be_bytes();
        MacAddr([b[2], b[3], b[4], b[5], b[6], b[7]])
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for MacAddr {
    type Err = SbiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || SbiError::Parse {
            what: "mac address",
            input: s.to_string(),
        };
        let mut out = [0u8; 6];
        let mut parts = s.split(':');
        for byte in out.iter_mut() {
            let part = parts.next().ok_or_else(err)?;
            if part.len() != 2 {
                return Err(err());
            }
            *byte = u8::from_str_radix(part, 16).map_err(|_| err())?;
        }
        if parts.next().is_some() {
            return Err(err());
        }
        Ok(MacAddr(out))
    }
}

/// A header field. The discriminant is the field's TLV tag on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Field {
    InPort = 0x10,
    EthSrc = 0x11,
    EthDst = 0x12,
    EthType = 0x13,
    IpSrc = 0x14,
    IpDst = 0x15,
    IpProto = 0x16,
    TpSrc = 0x17,
    TpDst = 0x18,
}

impl Field {
    pub const ALL: [Field; 9] = [
        Field::InPort,
        Field::EthSrc,
        Field::EthDst,
        Field::EthType,
        Field::IpSrc,
        Field::IpDst,
        Field::IpProto,
        Field::TpSrc,
        Field::TpDst,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Field> {
        Field::ALL.into_iter().find(|f| f.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::InPort => "in_port",
            Field::EthSrc => "eth_src",
            Field::EthDst => "eth_dst",
            Field::EthType => "eth_type",
            Field::IpSrc => "ip_src",
            Field::IpDst => "ip_dst",
            Field::IpProto => "ip_proto",
            Field::TpSrc => "tp_src",
            Field::TpDst => "tp_dst",
        }
    }

    /// Width in bytes of a plain field value (no prefix byte).
    pub fn width(self) -> usize {
        match self {
            Field::InPort | Field::IpSrc | Field::IpDst => 4,
            Field::EthSrc | Field::EthDst => 6,
            Field::EthType | Field::TpSrc | Field::TpDst => 2,
            Field::IpProto => 1,
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Field {
    type Err = SbiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Field::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| SbiError::Parse {
                what: "field name",
                input: s.to_string(),
            })
    }
}

/// A concrete value for one header field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FieldValue {
    InPort(u32),
    EthSrc(MacAddr),
    EthDst(MacAddr),
    EthType(u16),
    IpSrc(Ipv4Addr),
    IpDst(Ipv4Addr),
    IpProto(u8),
    TpSrc(u16),
    TpDst(u16),
}

impl FieldValue {
    pub fn field(&self) -> Field {
        match self {
            FieldValue::InPort(_) => Field::InPort,
            FieldValue::EthSrc(_) => Field::EthSrc,
            FieldValue::EthDst(_) => Field::EthDst,
            FieldValue::EthType(_) => Field::EthType,
            FieldValue::IpSrc(_) => Field::IpSrc,
            FieldValue::IpDst(_) => Field::IpDst,
            FieldValue::IpProto(_) => Field::IpProto,
            FieldValue::TpSrc(_) => Field::TpSrc,
            FieldValue::TpDst(_) => Field::TpDst,
        }
    }

    /// Parses `text` as a value for `field`. Numbers accept decimal or `0x` hex.
    pub fn parse(field: Field, text: &str) -> Result<FieldValue, SbiError> {
        let err = || SbiError::Parse {
            what: field.name(),
            input: text.to_string(),
        };
        Ok(match field {
            Field::InPort => FieldValue::InPort(parse_num(text).ok_or_else(err)?),
            Field::EthSrc => FieldValue::EthSrc(text.parse()?),
            Field::EthDst => FieldValue::EthDst(text.parse()?),
            Field::EthType => FieldValue::EthType(parse_num(text).ok_or_else(err)?),
            Field::IpSrc => FieldValue::IpSrc(text.parse().map_err(|_| err())?),
            Field::IpDst => FieldValue::IpDst(text.parse().map_err(|_| err())?),
            Field::IpProto => FieldValue::IpProto(parse_num(text).ok_or_else(err)?),
            Field::TpSrc => FieldValue::TpSrc(parse_num(text).ok_or_else(err)?),
            Field::TpDst => FieldValue::TpDst(parse_num(text).ok_or_else(err)?),
        })
    }

    /// Big-endian bytes of the value, `field().width()` long.
    pub fn to_bytes(&self) -> Vec<u8> {
        match *self {
            FieldValue::InPort(v) => v.to_be_bytes().to_vec(),
            FieldValue::EthSrc(m) | FieldValue::EthDst(m) => m.0.to_vec(),
            FieldValue::EthType(v) | FieldValue::TpSrc(v) | FieldValue::TpDst(v) => {
                v.to_be_bytes().to_vec()
            }
            FieldValue::IpSrc(a) | FieldValue::IpDst(a) => a.octets().to_vec(),
            FieldValue::IpProto(v) => vec![v],
        }
    }

    /// Inverse of [`FieldValue::to_bytes`]; `None` on a width mismatch.
    pub fn from_bytes(field: Field, bytes: &[u8]) -> Option<FieldValue> {
        if bytes.len() != field.width() {
            return None;
        }
        let u16_at = || u16::from_be_bytes([bytes[0], bytes[1]]);
        let mac = || {
            let mut m = [0u8; 6];
            m.copy_from_slice(bytes);
            MacAddr(m)
        };
        let ip = || Ipv4Addr::new(bytes[0], bytes[1], bytes[2], bytes[3]);
        Some(match field {
            Field::InPort => {
                FieldValue::InPort(u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]))
            }
            Field::EthSrc => FieldValue::EthSrc(mac()),
            Field::EthDst => FieldValue::EthDst(mac()),
            Field::EthType => FieldValue::EthType(u16_at()),
            Field::IpSrc => FieldValue::IpSrc(ip()),
            Field::IpDst => FieldValue::IpDst(ip()),
            Field::IpProto => FieldValue::IpProto(bytes[0]),
            Field::TpSrc => FieldValue::TpSrc(u16_at()),
            Field::TpDst => FieldValue::TpDst(u16_at()),
        })
    }
}

impl fmt::Display for FieldValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldValue::InPort(v) => write!(f, "{v}"),
            FieldValue::EthSrc(m) | FieldValue::EthDst(m) => write!(f, "{m}"),
            FieldValue::EthType(v) => write!(f, "0x{v:04x}"),
            FieldValue::IpSrc(a) | FieldValue::IpDst(a) => write!(f, "{a}"),
            FieldValue::IpProto(v) => write!(f, "{v}"),
            FieldValue::TpSrc(v) | FieldValue::TpDst(v) => write!(f, "{v}"),
        }
    }
}

pub(crate) fn parse_num<T: TryFrom<u64>>(text: &str) -> Option<T> {
    let v = if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()?
    } else {
        text.parse::<u64>().ok()?
    };
    T::try_from(v).ok()
}

/// Full header set of a packet. Unused fields hold zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PacketHeaders {
    pub in_port: u32,
    pub eth_src: MacAddr,
    pub eth_dst: MacAddr,
    pub eth_type: u16,
    pub ip_src: Ipv4Addr,
    pub ip_dst: Ipv4Addr,
    pub ip_proto: u8,
    pub tp_src: u16,
    pub tp_dst: u16,
}

impl Default for PacketHeaders {
    fn default() -> Self {
        PacketHeaders {
            in_port: 0,
            eth_src: MacAddr::ZERO,
            eth_dst: MacAddr::ZERO,
            eth_type: 0,
            ip_src: Ipv4Addr::UNSPECIFIED,
            ip_dst: Ipv4Addr::UNSPECIFIED,
            ip_proto: 0,
            tp_src: 0,
            tp_dst: 0,
        }
    }
}

impl PacketHeaders {
    pub fn get(&self, field: Field) -> FieldValue {
        match field {
            Field::InPort => FieldValue::InPort(self.in_port),
            Field::EthSrc => FieldValue::EthSrc(self.eth_src),
            Field::EthDst => FieldValue::EthDst(self.eth_dst),
            Field::EthType => FieldValue::EthType(self.eth_type),
            Field::IpSrc => FieldValue::IpSrc(self.ip_src),
            Field::IpDst => FieldValue::IpDst(self.ip_dst),
            Field::IpProto => FieldValue::IpProto(self.ip_proto),
            Field::TpSrc => FieldValue::TpSrc(self.tp_src),
            Field::TpDst => FieldValue::TpDst(self.tp_dst),
        }
    }

    pub fn set(&mut self, value: FieldValue) {
        match value {
            FieldValue::InPort(v) => self.in_port = v,
            FieldValue::EthSrc(v) => self.eth_src = v,
            FieldValue::EthDst(v) => self.eth_dst = v,
            FieldValue::EthType(v) => self.eth_type = v,
            FieldValue::IpSrc(v) => self.ip_src = v,
            FieldValue::IpDst(v) => self.ip_dst = v,
            FieldValue::IpProto(v) => self.ip_proto = v,
            FieldValue::TpSrc(v) => self.tp_src = v,
            FieldValue::TpDst(v) => self.tp_dst = v,
        }
    }
}

/// A flow-table rule. Timeouts are in seconds, zero meaning never.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FlowRule {
    pub priority: u16,
    pub pattern: Match,
    pub actions: Vec<Action>,
    pub idle_timeout: u16,
    pub hard_timeout: u16,
}

impl FlowRule {
    pub fn new(priority: u16, pattern: Match, actions: Vec<Action>) -> Self {
        FlowRule {
            priority,
            pattern,
            actions,
            idle_timeout: 0,
            hard_timeout: 0,
        }
    }

    pub fn with_idle_timeout(mut self, secs: u16) -> Self {
        self.idle_timeout = secs;
        self
    }

    pub fn with_hard_timeout(mut self, secs: u16) -> Self {
        self.hard_timeout = secs;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RemovalReason {
    IdleTimeout,
    HardTimeout,
    Delete,
}

impl RemovalReason {
    pub fn code(self) -> u8 {
        match self {
            RemovalReason::IdleTimeout => 0,
            RemovalReason::HardTimeout => 1,
            RemovalReason::Delete => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RemovalReason::IdleTimeout),
            1 => Some(RemovalReason::HardTimeout),
            2 => Some(RemovalReason::Delete),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RemovalReason::IdleTimeout => "idle",
            RemovalReason::HardTimeout => "hard",
            RemovalReason::Delete => "delete",
        }
    }
}

/// One entry of a stats reply.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FlowStats {
    pub priority: u16,
    pub pattern: Match,
    pub actions: Vec<Action>,
    pub packet_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    PacketIn,
    PortStatus,
    FlowRemoved,
    StatsReply,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::PacketIn => "packet_in",
            EventKind::PortStatus => "port_status",
            EventKind::FlowRemoved => "flow_removed",
            EventKind::StatsReply => "stats_reply",
        }
    }
}

impl FromStr for EventKind {
    type Err = SbiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "packet_in" => Ok(EventKind::PacketIn),
            "port_status" => Ok(EventKind::PortStatus),
            "flow_removed" => Ok(EventKind::FlowRemoved),
            "stats_reply" => Ok(EventKind::StatsReply),
            _ => Err(SbiError::Parse {
                what: "event kind",
                input: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Asynchronous messages from the network.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Event {
    /// Table miss (or explicit to-controller). The ingress port is `headers.in_port`.
    PacketIn {
        datapath: DatapathId,
        headers: PacketHeaders,
    },
    PortStatus {
        datapath: DatapathId,
        port: u32,
        up: bool,
    },
    FlowRemoved {
        datapath: DatapathId,
        rule: FlowRule,
        reason: RemovalReason,
    },
    StatsReply {
        datapath: DatapathId,
        entries: Vec<FlowStats>,
    },
}

impl Event {
    pub fn datapath(&self) -> DatapathId {
        match self {
            Event::PacketIn { datapath, .. }
            | Event::PortStatus { datapath, .. }
            | Event::FlowRemoved { datapath, .. }
            | Event::StatsReply { datapath, .. } => *datapath,
        }
    }

    pub fn kind(&self) -> EventKind {
        match self {
            Event::PacketIn { .. } => EventKind::PacketIn,
            Event::PortStatus { .. } => EventKind::PortStatus,
            Event::FlowRemoved { .. } => EventKind::FlowRemoved,
            Event::StatsReply { .. } => EventKind::StatsReply,
        }
    }
}

/// Commands issued by application modules toward the network.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Command {
    FlowModAdd {
        datapath: DatapathId,
        rule: FlowRule,
    },
    FlowModDelete {
        datapath: DatapathId,
        pattern: Match,
    },
    PacketOut {
        datapath: DatapathId,
        headers: PacketHeaders,
        actions: Vec<Action>,
    },
    StatsRequest {
        datapath: DatapathId,
        pattern: Match,
    },
}

impl Command {
    pub fn datapath(&self) -> DatapathId {
        match self {
            Command::FlowModAdd { datapath, .. }
            | Command::FlowModDelete { datapath, .. }
            | Command::PacketOut { datapath, .. }
            | Command::StatsRequest { datapath, .. } => *datapath,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Command::FlowModAdd { .. } => "flow_mod_add",
            Command::FlowModDelete { .. } => "flow_mod_delete",
            Command::PacketOut { .. } => "packet_out",
            Command::StatsRequest { .. } => "stats_request",
        }
    }
}

/// Any southbound message, as carried in an SBI frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SbiMessage {
    Event(Event),
    Command(Command),
}

impl SbiMessage {
    pub fn datapath(&self) -> DatapathId {
        match self {
            SbiMessage::Event(e) => e.datapath(),
            SbiMessage::Command(c) => c.datapath(),
        }
    }

    /// Checks the datapath and action-list invariants.
    pub fn validate(&self) -> Result<(), SbiError> {
        if self.datapath().0 == 0 {
            return Err(SbiError::ZeroDatapath);
        }
        match self {
            SbiMessage::Event(Event::FlowRemoved { rule, .. })
            | SbiMessage::Command(Command::FlowModAdd { rule, .. }) => {
                validate_actions(&rule.actions)
            }
            SbiMessage::Event(Event::StatsReply { entries, .. }) => entries
                .iter()
                .try_for_each(|e| validate_actions(&e.actions)),
            SbiMessage::Command(Command::PacketOut { actions, .. }) => validate_actions(actions),
            _ => Ok(()),
        }
    }
}

impl From<Event> for SbiMessage {
    fn from(e: Event) -> Self {
        SbiMessage::Event(e)
    }
}

impl From<Command> for SbiMessage {
    fn from(c: Command) -> Self {
        SbiMessage::Command(c)
    }
}
