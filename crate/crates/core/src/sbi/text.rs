//! Compact text forms shared by config files, traces and reports.
//!
//! A match renders as comma-separated `field=value` pairs in field order
//! (`*` for match-all); IP fields carry a prefix length. An action list
//! renders as comma-separated actions (`-` for the empty list).

use std::fmt;
use std::str::FromStr;

use super::matching::Constraint;
use super::{
    Action, Command, Event, Field, FieldValue, Ipv4Prefix, Match, PacketHeaders, SbiError,
};

impl fmt::Display for Match {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let constraints = self.constraints();
        if constraints.is_empty() {
            return f.write_str("*");
        }
        for (i, c) in constraints.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            match c {
                Constraint::Exact(v) => write!(f, "{}={}", v.field(), v)?,
                Constraint::Prefix(field, p) => write!(f, "{field}={p}")?,
            }
        }
        Ok(())
    }
}

impl FromStr for Match {
    type Err = SbiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "*" {
            return Ok(Match::any());
        }
        parse_match_pairs(s.split(','))
    }
}

/// Parses one `field=value` constraint.
pub fn parse_constraint(pair: &str) -> Result<Constraint, SbiError> {
    let (name, value) = pair.split_once('=').ok_or_else(|| SbiError::Parse {
        what: "field=value",
        input: pair.to_string(),
    })?;
    let field: Field = name.parse()?;
    Ok(match field {
        Field::IpSrc | Field::IpDst => Constraint::Prefix(field, value.parse::<Ipv4Prefix>()?),
        _ => Constraint::Exact(FieldValue::parse(field, value)?),
    })
}

/// Builds a match from `field=value` items. A field may appear once.
pub fn parse_match_pairs<'a>(pairs: impl IntoIterator<Item = &'a str>) -> Result<Match, SbiError> {
    let mut m = Match::any();
    let mut seen = Vec::new();
    for pair in pairs {
        let c = parse_constraint(pair)?;
        let field = match c {
            Constraint::Exact(v) => v.field(),
            Constraint::Prefix(f, _) => f,
        };
        if seen.contains(&field) {
            return Err(SbiError::Parse {
                what: "match (duplicate field)",
                input: pair.to_string(),
            });
        }
        seen.push(field);
        m = m.with_constraint(c);
    }
    Ok(m)
}

/// Builds packet headers from `field=value` items; unnamed fields stay zero.
pub fn parse_header_pairs<'a>(
    base: PacketHeaders,
    pairs: impl IntoIterator<Item = &'a str>,
) -> Result<PacketHeaders, SbiError> {
    let mut h = base;
    for pair in pairs {
        let (name, value) = pair.split_once('=').ok_or_else(|| SbiError::Parse {
            what: "field=value",
            input: pair.to_string(),
        })?;
        let field: Field = name.parse()?;
        h.set(FieldValue::parse(field, value)?);
    }
    Ok(h)
}

pub struct ActionList<'a>(pub &'a [Action]);

impl fmt::Display for ActionList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("-");
        }
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

pub fn parse_action_list(s: &str) -> Result<Vec<Action>, SbiError> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',').map(str::parse).collect()
}

impl fmt::Display for PacketHeaders {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, field) in Field::ALL.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}={}", field, self.get(*field))?;
        }
        Ok(())
    }
}

/// Non-default header fields, `field=value` comma separated (`*` if none).
pub fn compact_headers(h: &PacketHeaders) -> String {
    let zero = PacketHeaders::default();
    let parts: Vec<String> = Field::ALL
        .iter()
        .filter(|f| h.get(**f) != zero.get(**f))
        .map(|f| format!("{}={}", f, h.get(*f)))
        .collect();
    if parts.is_empty() {
        "*".to_string()
    } else {
        parts.join(",")
    }
}

/// One-line summary of an event for logs.
pub fn describe_event(ev: &Event) -> String {
    match ev {
        Event::PacketIn { datapath, headers } => {
            format!("packet_in dp={datapath} {}", compact_headers(headers))
        }
        Event::PortStatus { datapath, port, up } => format!(
            "port_status dp={datapath} port={port} {}",
            if *up { "up" } else { "down" }
        ),
        Event::FlowRemoved {
            datapath,
            rule,
            reason,
        } => format!(
            "flow_removed dp={datapath} prio={} match={} reason={}",
            rule.priority,
            rule.pattern,
            reason.name()
        ),
        Event::StatsReply { datapath, entries } => {
            format!("stats_reply dp={datapath} entries={}", entries.len())
        }
    }
}

/// One-line summary of a command for logs.
pub fn describe_command(cmd: &Command) -> String {
    match cmd {
        Command::FlowModAdd { datapath, rule } => format!(
            "flow_mod_add dp={datapath} prio={} match={} actions={}",
            rule.priority,
            rule.pattern,
            ActionList(&rule.actions)
        ),
        Command::FlowModDelete { datapath, pattern } => {
            format!("flow_mod_delete dp={datapath} match={pattern}")
        }
        Command::PacketOut {
            datapath,
            headers,
            actions,
        } => format!(
            "packet_out dp={datapath} {} actions={}",
            compact_headers(headers),
            ActionList(actions)
        ),
        Command::StatsRequest { datapath, pattern } => {
            format!("stats_request dp={datapath} match={pattern}")
        }
    }
}
