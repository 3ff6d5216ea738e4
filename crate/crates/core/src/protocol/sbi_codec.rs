//! TLV encoding of SBI payloads.
//!
//! Payload layout: `sbi_kind` (1 byte) then TLVs `tag(1) length(2) value` in
//! strictly ascending tag order. Flow-stats entries (tag 0x40) are the one
//! tag that may repeat; each entry's value is itself a TLV list.

use std::net::Ipv4Addr;

use super::DecodeError;
use crate::sbi::matching::Constraint;
use crate::sbi::{
    validate_actions, Action, Command, DatapathId, Event, Field, FieldValue, FlowRule, FlowStats,
    Ipv4Prefix, Match, PacketHeaders, RemovalReason, SbiMessage,
};

pub mod kind {
    pub const PACKET_IN: u8 = 0x01;
    pub const PACKET_OUT: u8 = 0x02;
    pub const FLOW_MOD_ADD: u8 = 0x03;
    pub const FLOW_MOD_DELETE: u8 = 0x04;
    pub const FLOW_REMOVED: u8 = 0x05;
    pub const PORT_STATUS: u8 = 0x06;
    pub const STATS_REQUEST: u8 = 0x07;
    pub const STATS_REPLY: u8 = 0x08;
}

pub mod tag {
    pub const PRIORITY: u8 = 0x20;
    pub const IDLE_TIMEOUT: u8 = 0x21;
    pub const HARD_TIMEOUT: u8 = 0x22;
    pub const PACKET_COUNT: u8 = 0x23;
    pub const REMOVAL_REASON: u8 = 0x24;
    pub const PORT_STATE: u8 = 0x25;
    pub const ACTIONS: u8 = 0x30;
    pub const FLOW_STATS: u8 = 0x40;
}

const KNOWN_TAGS: [u8; 17] = [
    0x10,
    0x11,
    0x12,
    0x13,
    0x14,
    0x15,
    0x16,
    0x17,
    0x18,
    tag::PRIORITY,
    tag::IDLE_TIMEOUT,
    tag::HARD_TIMEOUT,
    tag::PACKET_COUNT,
    tag::REMOVAL_REASON,
    tag::PORT_STATE,
    tag::ACTIONS,
    tag::FLOW_STATS,
];

pub fn sbi_kind(msg: &SbiMessage) -> u8 {
    match msg {
        SbiMessage::Event(Event::PacketIn { .. }) => kind::PACKET_IN,
        SbiMessage::Command(Command::PacketOut { .. }) => kind::PACKET_OUT,
        SbiMessage::Command(Command::FlowModAdd { .. }) => kind::FLOW_MOD_ADD,
        SbiMessage::Command(Command::FlowModDelete { .. }) => kind::FLOW_MOD_DELETE,
        SbiMessage::Event(Event::FlowRemoved { .. }) => kind::FLOW_REMOVED,
        SbiMessage::Event(Event::PortStatus { .. }) => kind::PORT_STATUS,
        SbiMessage::Command(Command::StatsRequest { .. }) => kind::STATS_REQUEST,
        SbiMessage::Event(Event::StatsReply { .. }) => kind::STATS_REPLY,
    }
}

struct TlvWriter(Vec<u8>);

impl TlvWriter {
    fn put(&mut self, tag: u8, value: &[u8]) {
        self.0.push(tag);
        self.0.extend_from_slice(&(value.len() as u16).to_be_bytes());
        self.0.extend_from_slice(value);
    }

    fn put_headers(&mut self, h: &PacketHeaders) {
        for field in Field::ALL {
            let mut value = h.get(field).to_bytes();
            if matches!(field, Field::IpSrc | Field::IpDst) {
                value.push(32);
            }
            self.put(field.tag(), &value);
        }
    }

    fn put_match(&mut self, m: &Match) {
        for c in m.constraints() {
            match c {
                Constraint::Exact(v) => self.put(v.field().tag(), &v.to_bytes()),
                Constraint::Prefix(field, p) => {
                    let mut value = p.addr().octets().to_vec();
                    value.push(p.prefix_len());
                    self.put(field.tag(), &value);
                }
            }
        }
    }

    fn put_u16(&mut self, tag: u8, v: u16) {
        self.put(tag, &v.to_be_bytes());
    }

    fn put_actions(&mut self, actions: &[Action]) {
        let mut value = Vec::new();
        for a in actions {
            let body = match a {
                Action::Output(p) => p.to_be_bytes().to_vec(),
                Action::SetField(v) => {
                    let mut b = vec![v.field().tag()];
                    b.extend(v.to_bytes());
                    b
                }
                Action::Drop | Action::Flood | Action::ToController => Vec::new(),
            };
            value.push(a.kind_code());
            value.extend_from_slice(&(body.len() as u16).to_be_bytes());
            value.extend(body);
        }
        self.put(tag::ACTIONS, &value);
    }
}

/// Encodes an SBI body (kind byte plus TLVs). The datapath travels in the
/// frame header, not here.
pub fn encode_sbi(msg: &SbiMessage) -> Vec<u8> {
    let mut w = TlvWriter(vec![sbi_kind(msg)]);
    match msg {
        SbiMessage::Event(Event::PacketIn { headers, .. }) => w.put_headers(headers),
        SbiMessage::Command(Command::PacketOut {
            headers, actions, ..
        }) => {
            w.put_headers(headers);
            w.put_actions(actions);
        }
        SbiMessage::Command(Command::FlowModAdd { rule, .. }) => {
            w.put_match(&rule.pattern);
            w.put_u16(tag::PRIORITY, rule.priority);
            w.put_u16(tag::IDLE_TIMEOUT, rule.idle_timeout);
            w.put_u16(tag::HARD_TIMEOUT, rule.hard_timeout);
            w.put_actions(&rule.actions);
        }
        SbiMessage::Command(Command::FlowModDelete { pattern, .. })
        | SbiMessage::Command(Command::StatsRequest { pattern, .. }) => w.put_match(pattern),
        SbiMessage::Event(Event::FlowRemoved { rule, reason, .. }) => {
            w.put_match(&rule.pattern);
            w.put_u16(tag::PRIORITY, rule.priority);
            w.put_u16(tag::IDLE_TIMEOUT, rule.idle_timeout);
            w.put_u16(tag::HARD_TIMEOUT, rule.hard_timeout);
            w.put(tag::REMOVAL_REASON, &[reason.code()]);
            w.put_actions(&rule.actions);
        }
        SbiMessage::Event(Event::PortStatus { port, up, .. }) => {
            w.put(Field::InPort.tag(), &port.to_be_bytes());
            w.put(tag::PORT_STATE, &[u8::from(*up)]);
        }
        SbiMessage::Event(Event::StatsReply { entries, .. }) => {
            for e in entries {
                let mut inner = TlvWriter(Vec::new());
                inner.put_match(&e.pattern);
                inner.put_u16(tag::PRIORITY, e.priority);
                inner.put(tag::PACKET_COUNT, &e.packet_count.to_be_bytes());
                inner.put_actions(&e.actions);
                w.put(tag::FLOW_STATS, &inner.0);
            }
        }
    }
    w.0
}

fn err(msg: impl Into<String>) -> DecodeError {
    DecodeError::protocol(msg)
}

/// TLVs of one list, checked for order and known tags, consumed by `take`.
struct Tlvs<'a> {
    items: Vec<(u8, &'a [u8], bool)>,
}

impl<'a> Tlvs<'a> {
    fn parse(mut bytes: &'a [u8]) -> Result<Self, DecodeError> {
        let mut items: Vec<(u8, &'a [u8], bool)> = Vec::new();
        while !bytes.is_empty() {
            if bytes.len() < 3 {
                return Err(err("truncated TLV header"));
            }
            let t = bytes[0];
            let len = u16::from_be_bytes([bytes[1], bytes[2]]) as usize;
            if bytes.len() < 3 + len {
                return Err(err(format!("TLV 0x{t:02x} overruns payload")));
            }
            if !KNOWN_TAGS.contains(&t) {
                return Err(err(format!("unknown TLV tag 0x{t:02x}")));
            }
            if let Some((prev, _, _)) = items.last() {
                let repeat_ok = *prev == tag::FLOW_STATS && t == tag::FLOW_STATS;
                if t < *prev || (t == *prev && !repeat_ok) {
                    return Err(err(format!("TLV 0x{t:02x} out of order")));
                }
            }
            items.push((t, &bytes[3..3 + len], false));
            bytes = &bytes[3 + len..];
        }
        Ok(Tlvs { items })
    }

    fn take(&mut self, t: u8) -> Option<&'a [u8]> {
        self.items
            .iter_mut()
            .find(|(tag, _, used)| *tag == t && !*used)
            .map(|item| {
                item.2 = true;
                item.1
            })
    }

    fn require(&mut self, t: u8) -> Result<&'a [u8], DecodeError> {
        self.take(t)
            .ok_or_else(|| err(format!("missing TLV 0x{t:02x}")))
    }

    fn take_all(&mut self, t: u8) -> Vec<&'a [u8]> {
        self.items
            .iter_mut()
            .filter(|(tag, _, used)| *tag == t && !*used)
            .map(|item| {
                item.2 = true;
                item.1
            })
            .collect()
    }

    fn finish(self) -> Result<(), DecodeError> {
        match self.items.iter().find(|(_, _, used)| !used) {
            Some((t, _, _)) => Err(err(format!("TLV 0x{t:02x} not allowed here"))),
            None => Ok(()),
        }
    }

    fn u16(&mut self, t: u8) -> Result<u16, DecodeError> {
        let v = self.require(t)?;
        let b: [u8; 2] = v
            .try_into()
            .map_err(|_| err(format!("TLV 0x{t:02x} must be 2 bytes")))?;
        Ok(u16::from_be_bytes(b))
    }

    fn u8(&mut self, t: u8) -> Result<u8, DecodeError> {
        match self.require(t)? {
            [b] => Ok(*b),
            _ => Err(err(format!("TLV 0x{t:02x} must be 1 byte"))),
        }
    }

    fn headers(&mut self) -> Result<PacketHeaders, DecodeError> {
        let mut h = PacketHeaders::default();
        for field in Field::ALL {
            let v = self.require(field.tag())?;
            let value = match field {
                Field::IpSrc | Field::IpDst => {
                    let (prefix, addr) = split_prefix(v, field)?;
                    if prefix != 32 {
                        return Err(err(format!("packet {field} must carry prefix 32")));
                    }
                    if field == Field::IpSrc {
                        FieldValue::IpSrc(addr)
                    } else {
                        FieldValue::IpDst(addr)
                    }
                }
                _ => field_value(field, v)?,
            };
            h.set(value);
        }
        Ok(h)
    }

    fn pattern(&mut self) -> Result<Match, DecodeError> {
        let mut m = Match::any();
        for field in Field::ALL {
            let Some(v) = self.take(field.tag()) else {
                continue;
            };
            m = match field {
                Field::IpSrc | Field::IpDst => {
                    let (len, addr) = split_prefix(v, field)?;
                    let p = Ipv4Prefix::new(addr, len).map_err(|e| err(e.to_string()))?;
                    if field == Field::IpSrc {
                        m.with_ip_src(p)
                    } else {
                        m.with_ip_dst(p)
                    }
                }
                _ => m.with(field_value(field, v)?),
            };
        }
        Ok(m)
    }

    fn actions(&mut self) -> Result<Vec<Action>, DecodeError> {
        let v = self.require(tag::ACTIONS)?;
        let actions = decode_actions(v)?;
        validate_actions(&actions).map_err(|e| err(e.to_string()))?;
        Ok(actions)
    }
}

fn split_prefix(v: &[u8], field: Field) -> Result<(u8, Ipv4Addr), DecodeError> {
    match v {
        [a, b, c, d, len] => Ok((*len, Ipv4Addr::new(*a, *b, *c, *d))),
        _ => Err(err(format!("{field} TLV must be 5 bytes"))),
    }
}

fn field_value(field: Field, v: &[u8]) -> Result<FieldValue, DecodeError> {
    FieldValue::from_bytes(field, v)
        .ok_or_else(|| err(format!("{field} TLV must be {} bytes", field.width())))
}

fn decode_actions(mut v: &[u8]) -> Result<Vec<Action>, DecodeError> {
    let mut out = Vec::new();
    while !v.is_empty() {
        if v.len() < 3 {
            return Err(err("truncated action header"));
        }
        let code = v[0];
        let len = u16::from_be_bytes([v[1], v[2]]) as usize;
        if v.len() < 3 + len {
            return Err(err("action overruns list"));
        }
        let body = &v[3..3 + len];
        let action = match (code, body) {
            (0x01, [a, b, c, d]) => Action::Output(u32::from_be_bytes([*a, *b, *c, *d])),
            (0x02, []) => Action::Drop,
            (0x03, [t, value @ ..]) => {
                let field =
                    Field::from_tag(*t).ok_or_else(|| err(format!("set-field tag 0x{t:02x}")))?;
                Action::SetField(field_value(field, value)?)
            }
            (0x04, []) => Action::Flood,
            (0x05, []) => Action::ToController,
            _ => return Err(err(format!("bad action kind 0x{code:02x} / length {len}"))),
        };
        out.push(action);
        v = &v[3 + len..];
    }
    Ok(out)
}

/// Decodes an SBI body for a frame addressed to `datapath`.
pub fn decode_sbi(body: &[u8], datapath: DatapathId) -> Result<SbiMessage, DecodeError> {
    let (&k, rest) = body
        .split_first()
        .ok_or_else(|| err("empty SBI payload"))?;
    let mut t = Tlvs::parse(rest)?;
    let msg = match k {
        kind::PACKET_IN => SbiMessage::Event(Event::PacketIn {
            datapath,
            headers: t.headers()?,
        }),
        kind::PACKET_OUT => SbiMessage::Command(Command::PacketOut {
            datapath,
            headers: t.headers()?,
            actions: t.actions()?,
        }),
        kind::FLOW_MOD_ADD => {
            let pattern = t.pattern()?;
            let priority = t.u16(tag::PRIORITY)?;
            let idle_timeout = t.u16(tag::IDLE_TIMEOUT)?;
            let hard_timeout = t.u16(tag::HARD_TIMEOUT)?;
            SbiMessage::Command(Command::FlowModAdd {
                datapath,
                rule: FlowRule {
                    priority,
                    pattern,
                    actions: t.actions()?,
                    idle_timeout,
                    hard_timeout,
                },
            })
        }
        kind::FLOW_MOD_DELETE => SbiMessage::Command(Command::FlowModDelete {
            datapath,
            pattern: t.pattern()?,
        }),
        kind::FLOW_REMOVED => {
            let pattern = t.pattern()?;
            let priority = t.u16(tag::PRIORITY)?;
            let idle_timeout = t.u16(tag::IDLE_TIMEOUT)?;
            let hard_timeout = t.u16(tag::HARD_TIMEOUT)?;
            let code = t.u8(tag::REMOVAL_REASON)?;
            let reason = RemovalReason::from_code(code)
                .ok_or_else(|| err(format!("bad removal reason {code}")))?;
            SbiMessage::Event(Event::FlowRemoved {
                datapath,
                rule: FlowRule {
                    priority,
                    pattern,
                    actions: t.actions()?,
                    idle_timeout,
                    hard_timeout,
                },
                reason,
            })
        }
        kind::PORT_STATUS => {
            let port = match field_value(Field::InPort, t.require(Field::InPort.tag())?)? {
                FieldValue::InPort(p) => p,
                _ => unreachable!(),
            };
            let up = match t.u8(tag::PORT_STATE)? {
                0 => false,
                1 => true,
                s => return Err(err(format!("bad port state {s}"))),
            };
            SbiMessage::Event(Event::PortStatus { datapath, port, up })
        }
        kind::STATS_REQUEST => SbiMessage::Command(Command::StatsRequest {
            datapath,
            pattern: t.pattern()?,
        }),
        kind::STATS_REPLY => {
            let mut entries = Vec::new();
            for raw in t.take_all(tag::FLOW_STATS) {
                let mut e = Tlvs::parse(raw)?;
                let pattern = e.pattern()?;
                let priority = e.u16(tag::PRIORITY)?;
                let count = e.require(tag::PACKET_COUNT)?;
                let packet_count = u64::from_be_bytes(
                    count
                        .try_into()
                        .map_err(|_| err("packet count must be 8 bytes"))?,
                );
                let actions = e.actions()?;
                e.finish()?;
                entries.push(FlowStats {
                    priority,
                    pattern,
                    actions,
                    packet_count,
                });
            }
            SbiMessage::Event(Event::StatsReply { datapath, entries })
        }
        other => return Err(err(format!("unknown SBI kind 0x{other:02x}"))),
    };
    t.finish()?;
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dp() -> DatapathId {
        DatapathId(1)
    }

    #[test]
    fn flow_mod_layout() {
        let rule = FlowRule::new(
            0x0064,
            Match::any().with(FieldValue::TpDst(80)),
            vec![Action::Output(2)],
        );
        let bytes = encode_sbi(&SbiMessage::Command(Command::FlowModAdd {
            datapath: dp(),
            rule,
        }));
        #[rustfmt::skip]
        let want = vec![
            0x03,
            0x18, 0x00, 0x02, 0x00, 0x50,
            0x20, 0x00, 0x02, 0x00, 0x64,
            0x21, 0x00, 0x02, 0x00, 0x00,
            0x22, 0x00, 0x02, 0x00, 0x00,
            0x30, 0x00, 0x07, 0x01, 0x00, 0x04, 0x00, 0x00, 0x00, 0x02,
        ];
        assert_eq!(bytes, want);
    }

    #[test]
    fn out_of_order_tlvs_rejected() {
        // tp_dst before in_port
        let body = [0x04, 0x18, 0x00, 0x02, 0x00, 0x50, 0x10, 0x00, 0x04, 0, 0, 0, 1];
        assert!(decode_sbi(&body, dp()).is_err());
    }

    #[test]
    fn unknown_tag_rejected() {
        let body = [0x04, 0x19, 0x00, 0x01, 0x00];
        assert!(decode_sbi(&body, dp()).is_err());
    }

    #[test]
    fn tag_not_allowed_for_kind_rejected() {
        // FLOW_MOD_DELETE with a priority TLV
        let body = [0x04, 0x20, 0x00, 0x02, 0x00, 0x01];
        assert!(decode_sbi(&body, dp()).is_err());
    }

    #[test]
    fn drop_with_other_actions_rejected() {
        let msg = SbiMessage::Command(Command::PacketOut {
            datapath: dp(),
            headers: PacketHeaders::default(),
            actions: vec![Action::Drop],
        });
        let mut bytes = encode_sbi(&msg);
        // Append an OUTPUT action inside the action TLV and fix its length.
        let n = bytes.len();
        bytes[n - 5] = 0x00;
        bytes[n - 4] = 10;
        bytes.extend([0x01, 0x00, 0x04, 0, 0, 0, 1]);
        assert!(decode_sbi(&bytes, dp()).is_err());
    }

    #[test]
    fn match_prefix_over_32_rejected() {
        let body = [0x04, 0x15, 0x00, 0x05, 10, 0, 0, 0, 33];
        assert!(decode_sbi(&body, dp()).is_err());
    }

    #[test]
    fn stats_reply_entries_repeat() {
        let entry = FlowStats {
            priority: 5,
            pattern: Match::any(),
            actions: vec![Action::Flood],
            packet_count: 3,
        };
        let msg = SbiMessage::Event(Event::StatsReply {
            datapath: dp(),
            entries: vec![entry.clone(), entry],
        });
        assert_eq!(decode_sbi(&encode_sbi(&msg), dp()).unwrap(), msg);
    }
}
