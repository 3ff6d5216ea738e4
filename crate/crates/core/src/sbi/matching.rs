//! Wildcard matches over [`PacketHeaders`] and their intersection.
//!
//! The field model is flat: each field is constrained independently, so the
//! set of headers a match covers is a product of per-field sets and two
//! matches intersect field by field.

use std::fmt;
use std::net::Ipv4Addr;

use super::{Field, FieldValue, MacAddr, PacketHeaders, SbiError};

/// An IPv4 prefix with the host bits cleared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ipv4Prefix {
    addr: Ipv4Addr,
    len: u8,
}

impl Ipv4Prefix {
    /// Builds a prefix, masking off host bits of `addr`.
    pub fn new(addr: Ipv4Addr, len: u8) -> Result<Self, SbiError> {
        if len > 32 {
            return Err(SbiError::PrefixTooLong(len));
        }
        let masked = u32::from(addr) & mask(len);
        Ok(Ipv4Prefix {
            addr: Ipv4Addr::from(masked),
            len,
        })
    }

    pub fn host(addr: Ipv4Addr) -> Self {
        Ipv4Prefix { addr, len: 32 }
    }

    pub fn addr(&self) -> Ipv4Addr {
        self.addr
    }

    pub fn prefix_len(&self) -> u8 {
        self.len
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        u32::from(ip) & mask(self.len) == u32::from(self.addr)
    }

    /// True if every address in `other` is also in `self`.
    pub fn contains_prefix(&self, other: &Ipv4Prefix) -> bool {
        other.len >= self.len && self.contains(other.addr)
    }

    /// Nested prefixes meet at the longer one; otherwise they are disjoint.
    pub fn intersect(&self, other: &Ipv4Prefix) -> Option<Ipv4Prefix> {
        if self.contains_prefix(other) {
            Some(*other)
        } else if other.contains_prefix(self) {
            Some(*self)
        } else {
            None
        }
    }
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - u32::from(len))
    }
}

impl fmt::Display for Ipv4Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.len)
    }
}

impl std::str::FromStr for Ipv4Prefix {
    type Err = SbiError;

    /// Accepts `a.b.c.d/len` or a bare address (treated as /32).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || SbiError::Parse {
            what: "ipv4 prefix",
            input: s.to_string(),
        };
        let (addr, len) = match s.split_once('/') {
            Some((a, l)) => (a, l.parse::<u8>().map_err(|_| err())?),
            None => (s, 32),
        };
        let addr: Ipv4Addr = addr.parse().map_err(|_| err())?;
        Ipv4Prefix::new(addr, len)
    }
}

/// A per-field constraint on packet headers. `None` is a wildcard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Match {
    pub in_port: Option<u32>,
    pub eth_src: Option<MacAddr>,
    pub eth_dst: Option<MacAddr>,
    pub eth_type: Option<u16>,
    pub ip_src: Option<Ipv4Prefix>,
    pub ip_dst: Option<Ipv4Prefix>,
    pub ip_proto: Option<u8>,
    pub tp_src: Option<u16>,
    pub tp_dst: Option<u16>,
}

/// The constraint a match places on one field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Exact(FieldValue),
    Prefix(Field, Ipv4Prefix),
}

struct Disjoint;

fn meet<T: PartialEq + Copy>(a: Option<T>, b: Option<T>) -> Result<Option<T>, Disjoint> {
    match (a, b) {
        (None, x) | (x, None) => Ok(x),
        (Some(x), Some(y)) if x == y => Ok(Some(x)),
        _ => Err(Disjoint),
    }
}

fn meet_prefix(
    a: Option<Ipv4Prefix>,
    b: Option<Ipv4Prefix>,
) -> Result<Option<Ipv4Prefix>, Disjoint> {
    match (a, b) {
        (None, x) | (x, None) => Ok(x),
        (Some(x), Some(y)) => x.intersect(&y).map(Some).ok_or(Disjoint),
    }
}

fn sat<T: PartialEq>(c: &Option<T>, v: &T) -> bool {
    c.as_ref().is_none_or(|c| c == v)
}

impl Match {
    /// The match-all (every field wildcarded).
    pub fn any() -> Self {
        Match::default()
    }

    pub fn is_any(&self) -> bool {
        *self == Match::any()
    }

    /// Adds an exact constraint. IP values become /32 prefixes.
    pub fn with(mut self, value: FieldValue) -> Self {
        match value {
            FieldValue::InPort(v) => self.in_port = Some(v),
            FieldValue::EthSrc(v) => self.eth_src = Some(v),
            FieldValue::EthDst(v) => self.eth_dst = Some(v),
            FieldValue::EthType(v) => self.eth_type = Some(v),
            FieldValue::IpSrc(v) => self.ip_src = Some(Ipv4Prefix::host(v)),
            FieldValue::IpDst(v) => self.ip_dst = Some(Ipv4Prefix::host(v)),
            FieldValue::IpProto(v) => self.ip_proto = Some(v),
            FieldValue::TpSrc(v) => self.tp_src = Some(v),
            FieldValue::TpDst(v) => self.tp_dst = Some(v),
        }
        self
    }

    pub fn with_ip_src(mut self, prefix: Ipv4Prefix) -> Self {
        self.ip_src = Some(prefix);
        self
    }

    pub fn with_ip_dst(mut self, prefix: Ipv4Prefix) -> Self {
        self.ip_dst = Some(prefix);
        self
    }

    /// Sets (or replaces) the constraint on one field.
    pub fn with_constraint(self, c: Constraint) -> Self {
        match c {
            Constraint::Exact(v) => self.with(v),
            Constraint::Prefix(Field::IpSrc, p) => self.with_ip_src(p),
            Constraint::Prefix(_, p) => self.with_ip_dst(p),
        }
    }

    /// Constrained fields in ascending field-tag order.
    pub fn constraints(&self) -> Vec<Constraint> {
        let mut out = Vec::new();
        if let Some(v) = self.in_port {
            out.push(Constraint::Exact(FieldValue::InPort(v)));
        }
        if let Some(v) = self.eth_src {
            out.push(Constraint::Exact(FieldValue::EthSrc(v)));
        }
        if let Some(v) = self.eth_dst {
            out.push(Constraint::Exact(FieldValue::EthDst(v)));
        }
        if let Some(v) = self.eth_type {
            out.push(Constraint::Exact(FieldValue::EthType(v)));
        }
        if let Some(p) = self.ip_src {
            out.push(Constraint::Prefix(Field::IpSrc, p));
        }
        if let Some(p) = self.ip_dst {
            out.push(Constraint::Prefix(Field::IpDst, p));
        }
        if let Some(v) = self.ip_proto {
            out.push(Constraint::Exact(FieldValue::IpProto(v)));
        }
        if let Some(v) = self.tp_src {
            out.push(Constraint::Exact(FieldValue::TpSrc(v)));
        }
        if let Some(v) = self.tp_dst {
            out.push(Constraint::Exact(FieldValue::TpDst(v)));
        }
        out
    }

    /// True iff `h` satisfies every constrained field.
    pub fn covers(&self, h: &PacketHeaders) -> bool {
        sat(&self.in_port, &h.in_port)
            && sat(&self.eth_src, &h.eth_src)
            && sat(&self.eth_dst, &h.eth_dst)
            && sat(&self.eth_type, &h.eth_type)
            && self.ip_src.is_none_or(|p| p.contains(h.ip_src))
            && self.ip_dst.is_none_or(|p| p.contains(h.ip_dst))
            && sat(&self.ip_proto, &h.ip_proto)
            && sat(&self.tp_src, &h.tp_src)
            && sat(&self.tp_dst, &h.tp_dst)
    }

    /// The match covering exactly the headers both cover, or `None` when no
    /// header satisfies both.
    pub fn intersect(&self, other: &Match) -> Option<Match> {
        self.try_intersect(other).ok()
    }

    fn try_intersect(&self, o: &Match) -> Result<Match, Disjoint> {
        Ok(Match {
            in_port: meet(self.in_port, o.in_port)?,
            eth_src: meet(self.eth_src, o.eth_src)?,
            eth_dst: meet(self.eth_dst, o.eth_dst)?,
            eth_type: meet(self.eth_type, o.eth_type)?,
            ip_src: meet_prefix(self.ip_src, o.ip_src)?,
            ip_dst: meet_prefix(self.ip_dst, o.ip_dst)?,
            ip_proto: meet(self.ip_proto, o.ip_proto)?,
            tp_src: meet(self.tp_src, o.tp_src)?,
            tp_dst: meet(self.tp_dst, o.tp_dst)?,
        })
    }

    pub fn overlaps(&self, other: &Match) -> bool {
        self.try_intersect(other).is_ok()
    }

    /// True if every header `self` covers is also covered by `outer`.
    pub fn is_within(&self, outer: &Match) -> bool {
        outer.intersect(self).as_ref() == Some(self)
    }
}

/// Free-function form of [`Match::covers`].
pub fn match_covers(m: &Match, h: &PacketHeaders) -> bool {
    m.covers(h)
}

/// Free-function form of [`Match::intersect`].
pub fn match_intersect(m1: &Match, m2: &Match) -> Option<Match> {
    m1.intersect(m2)
}
