//! Topology files.
//!
//! ```text
//! switch 1 ports=3
//! host web1 mac=02:00:00:00:01:0a ip=10.0.1.10 at 2:2
//! link 1:2 2:1
//! ```

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::sbi::{parse_num, DatapathId, MacAddr};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("topology line {line}: {message}")]
pub struct TopologyError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> TopologyError {
    TopologyError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortRef {
    pub datapath: DatapathId,
    pub port: u32,
}

impl std::fmt::Display for PortRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.datapath, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Host {
    pub name: String,
    pub mac: MacAddr,
    pub ip: Ipv4Addr,
    pub at: PortRef,
}

/// What sits at the far end of a switch port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attachment {
    Host(usize),
    Switch(PortRef),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Topology {
    /// Port count per switch; ports are numbered from 1.
    pub switches: BTreeMap<DatapathId, u32>,
    pub hosts: Vec<Host>,
    pub links: Vec<(PortRef, PortRef)>,
    attachments: BTreeMap<PortRef, Attachment>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_switch(&mut self, datapath: DatapathId, ports: u32) -> Result<(), String> {
        if datapath.0 == 0 {
            return Err("datapath id 0 is reserved".into());
        }
        if self.switches.insert(datapath, ports).is_some() {
            return Err(format!("switch {datapath} declared twice"));
        }
        Ok(())
    }

    fn claim(&mut self, at: PortRef, what: Attachment) -> Result<(), String> {
        match self.switches.get(&at.datapath) {
            None => return Err(format!("unknown switch {}", at.datapath)),
            Some(&n) if at.port == 0 || at.port > n => {
                return Err(format!("switch {} has no port {}", at.datapath, at.port))
            }
            _ => {}
        }
        if self.attachments.contains_key(&at) {
            return Err(format!("port {at} is already in use"));
        }
        self.attachments.insert(at, what);
        Ok(())
    }

    pub fn add_host(&mut self, host: Host) -> Result<(), String> {
        if self.hosts.iter().any(|h| h.name == host.name) {
            return Err(format!("host {} declared twice", host.name));
        }
        self.claim(host.at, Attachment::Host(self.hosts.len()))?;
        self.hosts.push(host);
        Ok(())
    }

    pub fn add_link(&mut self, a: PortRef, b: PortRef) -> Result<(), String> {
        if a == b {
            return Err(format!("link from {a} to itself"));
        }
        self.claim(a, Attachment::Switch(b))?;
        if let Err(e) = self.claim(b, Attachment::Switch(a)) {
            self.attachments.remove(&a);
            return Err(e);
        }
        self.links.push((a, b));
        Ok(())
    }

    pub fn attachment(&self, at: PortRef) -> Option<Attachment> {
        self.attachments.get(&at).copied()
    }

    pub fn host(&self, name: &str) -> Option<&Host> {
        self.hosts.iter().find(|h| h.name == name)
    }

    pub fn ports(&self, datapath: DatapathId) -> Option<u32> {
        self.switches.get(&datapath).copied()
    }

    pub fn parse(text: &str) -> Result<Topology, TopologyError> {
        let mut topo = Topology::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            let words: Vec<&str> = content.split_whitespace().collect();
            match words.as_slice() {
                [] => {}
                ["switch", dp, ports] => {
                    let dp = parse_dp(line, dp)?;
                    let ports = ports
                        .strip_prefix("ports=")
                        .and_then(parse_num::<u32>)
                        .ok_or_else(|| err(line, format!("expected ports=<n>, got {ports:?}")))?;
                    topo.add_switch(dp, ports).map_err(|m| err(line, m))?;
                }
                ["host", name, rest @ ..] => {
                    let host = parse_host(line, name, rest)?;
                    topo.add_host(host).map_err(|m| err(line, m))?;
                }
                ["link", a, b] => {
                    let (a, b) = (parse_port(line, a)?, parse_port(line, b)?);
                    topo.add_link(a, b).map_err(|m| err(line, m))?;
                }
                _ => return Err(err(line, format!("cannot parse {content:?}"))),
            }
        }
        Ok(topo)
    }
}

fn parse_dp(line: usize, text: &str) -> Result<DatapathId, TopologyError> {
    parse_num::<u64>(text)
        .map(DatapathId)
        .ok_or_else(|| err(line, format!("bad datapath id {text:?}")))
}

fn parse_port(line: usize, text: &str) -> Result<PortRef, TopologyError> {
    let (dp, port) = text
        .split_once(':')
        .ok_or_else(|| err(line, format!("expected <dpid>:<port>, got {text:?}")))?;
    Ok(PortRef {
        datapath: parse_dp(line, dp)?,
        port: parse_num(port).ok_or_else(|| err(line, format!("bad port {port:?}")))?,
    })
}

fn parse_host(line: usize, name: &str, rest: &[&str]) -> Result<Host, TopologyError> {
    let mut mac = None;
    let mut ip = None;
    let mut at = None;
    let mut words = rest.iter();
    while let Some(w) = words.next() {
        if *w == "at" {
            let target = words
                .next()
                .ok_or_else(|| err(line, "missing port after 'at'"))?;
            at = Some(parse_port(line, target)?);
        } else if let Some(v) = w.strip_prefix("mac=") {
            mac = Some(
                v.parse::<MacAddr>()
                    .map_err(|_| err(line, format!("bad mac {v:?}")))?,
            );
        } else if let Some(v) = w.strip_prefix("ip=") {
            ip = Some(
                v.parse::<Ipv4Addr>()
                    .map_err(|_| err(line, format!("bad ip {v:?}")))?,
            );
        } else {
            return Err(err(line, format!("unexpected {w:?}")));
        }
    }
    Ok(Host {
        name: name.to_string(),
        mac: mac.ok_or_else(|| err(line, "host needs mac="))?,
        ip: ip.ok_or_else(|| err(line, "host needs ip="))?,
        at: at.ok_or_else(|| err(line, "host needs 'at <dpid>:<port>'"))?,
    })
}
