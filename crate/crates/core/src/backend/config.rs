//! Module configuration files.
//!
//! ```text
//! # comments start with '#'
//! [module fw]
//! kind = firewall
//! backend = b1
//! acl = deny ip_src=172.16.0.0/16 ip_dst=10.0.2.0/24
//! acl = allow *
//!
//! [module r1]
//! kind = router
//! route = dp=1 prefix=10.0.1.0/24 port=2 mac=02:00:00:00:01:01
//!
//! [module lb]
//! kind = load_balancer
//! vip = 10.0.1.100
//! server = ip=10.0.1.10 mac=02:00:00:00:01:0a port=2
//!
//! [module ls]
//! kind = learning_switch
//! budget = 500
//! ```
//!
//! Modules without a `backend` key get a backend of their own named after
//! the module.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use thiserror::Error;

use super::apps::{AclEntry, Firewall, LearningSwitch, LoadBalancer, Route, Router, Server, Verdict};
use super::{AppModule, Backend};
use crate::sbi::text::parse_match_pairs;
use crate::sbi::{parse_num, DatapathId, Ipv4Prefix, MacAddr, Match};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("module config line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModuleKind {
    LearningSwitch,
    Firewall { acl: Vec<AclEntry> },
    Router { routes: Vec<Route> },
    LoadBalancer { vip: Ipv4Addr, servers: Vec<Server> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleConfig {
    pub name: String,
    pub backend: String,
    pub kind: ModuleKind,
    pub budget: Option<u64>,
}

impl ModuleConfig {
    pub fn instantiate(&self) -> Box<dyn AppModule> {
        match &self.kind {
            ModuleKind::LearningSwitch => Box::new(LearningSwitch::new(&self.name)),
            ModuleKind::Firewall { acl } => Box::new(Firewall::new(&self.name, acl.clone())),
            ModuleKind::Router { routes } => Box::new(Router::new(&self.name, routes.clone())),
            ModuleKind::LoadBalancer { vip, servers } => {
                Box::new(LoadBalancer::new(&self.name, *vip, servers.clone()))
            }
        }
    }
}

struct Section {
    name: String,
    line: usize,
    entries: Vec<(usize, String, String)>,
}

pub fn parse_module_config(text: &str) -> Result<Vec<ModuleConfig>, ConfigError> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(header) = content.strip_prefix('[') {
            let inner = header
                .strip_suffix(']')
                .ok_or_else(|| err(line, "unterminated section header"))?;
            let mut words = inner.split_whitespace();
            match (words.next(), words.next(), words.next()) {
                (Some("module"), Some(name), None) => {
                    if sections.iter().any(|s| s.name == name) {
                        return Err(err(line, format!("module {name} configured twice")));
                    }
                    sections.push(Section {
                        name: name.to_string(),
                        line,
                        entries: Vec::new(),
                    });
                }
                _ => return Err(err(line, format!("bad section header [{inner}]"))),
            }
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected key = value, got {content:?}")))?;
        let section = sections
            .last_mut()
            .ok_or_else(|| err(line, "setting outside a [module NAME] section"))?;
        section
            .entries
            .push((line, key.trim().to_string(), value.trim().to_string()));
    }
    sections.into_iter().map(build_section).collect()
}

/// Keys that only some module kinds accept.
const SPECIFIC: &[&str] = &["acl", "route", "vip", "server"];

fn build_section(s: Section) -> Result<ModuleConfig, ConfigError> {
    let mut kind_name = None;
    let mut backend = None;
    let mut budget = None;
    let mut acl = Vec::new();
    let mut routes = Vec::new();
    let mut vip = None;
    let mut servers = Vec::new();
    for (line, key, value) in &s.entries {
        let line = *line;
        match key.as_str() {
            "kind" => kind_name = Some((line, value.clone())),
            "backend" => backend = Some(value.clone()),
            "budget" => {
                budget = Some(
                    parse_num::<u64>(value).ok_or_else(|| err(line, format!("bad budget {value:?}")))?,
                )
            }
            "acl" => acl.push(parse_acl(line, value)?),
            "route" => routes.push(parse_route(line, value)?),
            "vip" => {
                vip = Some(
                    value
                        .parse::<Ipv4Addr>()
                        .map_err(|_| err(line, format!("bad vip {value:?}")))?,
                )
            }
            "server" => servers.push(parse_server(line, value)?),
            other => return Err(err(line, format!("unknown key {other:?}"))),
        }
    }
    let (kline, kind_name) = kind_name.ok_or_else(|| err(s.line, format!("module {} has no kind", s.name)))?;
    let allowed: &[&str] = match kind_name.as_str() {
        "learning_switch" => &[],
        "firewall" => &["acl"],
        "router" => &["route"],
        "load_balancer" => &["vip", "server"],
        other => return Err(err(kline, format!("unknown module kind {other:?}"))),
    };
    if let Some((line, key, _)) = s
        .entries
        .iter()
        .find(|(_, k, _)| SPECIFIC.contains(&k.as_str()) && !allowed.contains(&k.as_str()))
    {
        return Err(err(*line, format!("{key} is not valid for kind {kind_name}")));
    }
    let kind = match kind_name.as_str() {
        "learning_switch" => ModuleKind::LearningSwitch,
        "firewall" => ModuleKind::Firewall { acl },
        "router" => ModuleKind::Router { routes },
        _ => {
            let vip = vip.ok_or_else(|| err(kline, "load_balancer needs a vip"))?;
            ModuleKind::LoadBalancer { vip, servers }
        }
    };
    Ok(ModuleConfig {
        backend: backend.unwrap_or_else(|| s.name.clone()),
        name: s.name,
        kind,
        budget,
    })
}

/// Splits `k=v k=v` into a map, rejecting repeats.
fn pairs(line: usize, text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for word in text.split_whitespace() {
        let (k, v) = word
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected key=value, got {word:?}")))?;
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(err(line, format!("{k} given twice")));
        }
    }
    Ok(map)
}

fn take<'a>(line: usize, map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str, ConfigError> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| err(line, format!("missing {key}=")))
}

fn only(line: usize, map: &BTreeMap<String, String>, allowed: &[&str]) -> Result<(), ConfigError> {
    match map.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(err(line, format!("unexpected {k}="))),
        None => Ok(()),
    }
}

fn parse_acl(line: usize, value: &str) -> Result<AclEntry, ConfigError> {
    let (verdict, rest) = value.split_once(char::is_whitespace).unwrap_or((value, ""));
    let verdict = match verdict {
        "allow" => Verdict::Allow,
        "deny" => Verdict::Deny,
        other => return Err(err(line, format!("acl verdict must be allow or deny, got {other:?}"))),
    };
    let rest = rest.trim();
    let pattern = if rest == "*" || rest.is_empty() {
        Match::any()
    } else {
        parse_match_pairs(rest.split_whitespace()).map_err(|e| err(line, e.to_string()))?
    };
    Ok(AclEntry { verdict, pattern })
}

fn parse_u32(line: usize, key: &str, v: &str) -> Result<u32, ConfigError> {
    parse_num(v).ok_or_else(|| err(line, format!("bad {key} {v:?}")))
}

fn parse_mac(line: usize, v: &str) -> Result<MacAddr, ConfigError> {
    v.parse().map_err(|_| err(line, format!("bad mac {v:?}")))
}

fn parse_route(line: usize, value: &str) -> Result<Route, ConfigError> {
    let map = pairs(line, value)?;
    only(line, &map, &["dp", "prefix", "port", "mac"])?;
    let datapath = match map.get("dp") {
        Some(v) => Some(DatapathId(
            parse_num(v).ok_or_else(|| err(line, format!("bad dp {v:?}")))?,
        )),
        None => None,
    };
    let prefix_text = take(line, &map, "prefix")?;
    Ok(Route {
        datapath,
        prefix: prefix_text
            .parse::<Ipv4Prefix>()
            .map_err(|e| err(line, e.to_string()))?,
        port: parse_u32(line, "port", take(line, &map, "port")?)?,
        next_hop: parse_mac(line, take(line, &map, "mac")?)?,
    })
}

fn parse_server(line: usize, value: &str) -> Result<Server, ConfigError> {
    let map = pairs(line, value)?;
    only(line, &map, &["ip", "mac", "port"])?;
    let ip = take(line, &map, "ip")?;
    Ok(Server {
        ip: ip
            .parse()
            .map_err(|_| err(line, format!("bad ip {ip:?}")))?,
        mac: parse_mac(line, take(line, &map, "mac")?)?,
        port: parse_u32(line, "port", take(line, &map, "port")?)?,
    })
}

/// Groups modules into backends, in order of first appearance.
pub fn build_modules(configs: &[ModuleConfig]) -> Vec<Backend> {
    let mut order: Vec<&str> = Vec::new();
    for c in configs {
        if !order.contains(&c.backend.as_str()) {
            order.push(&c.backend);
        }
    }
    order
        .into_iter()
        .map(|b| {
            let hosted: Vec<&ModuleConfig> = configs.iter().filter(|c| c.backend == b).collect();
            let mut backend = Backend::new(b, hosted.iter().map(|c| c.instantiate()).collect());
            for c in hosted {
                if let Some(steps) = c.budget {
                    backend.set_budget(&c.name, steps);
                }
            }
            backend
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
[module fw]
kind = firewall
backend = b1
acl = deny ip_src=172.16.0.0/16 ip_dst=10.0.2.0/24
acl = allow *

[module r1]   # trailing comment
kind = router
route = dp=1 prefix=10.0.1.0/24 port=2 mac=02:00:00:00:01:01
route = prefix=0.0.0.0/0 port=1 mac=02:00:00:00:00:01

[module lb]
kind = load_balancer
backend = b1
vip = 10.0.1.100
server = ip=10.0.1.10 mac=02:00:00:00:01:0a port=2
";

    #[test]
    fn parses_sample() {
        let cfg = parse_module_config(SAMPLE).unwrap();
        assert_eq!(cfg.len(), 3);
        let ModuleKind::Firewall { acl } = &cfg[0].kind else {
            panic!()
        };
        assert_eq!(acl.len(), 2);
        assert_eq!(acl[1].pattern, Match::any());
        assert_eq!(cfg[1].backend, "r1");
        let ModuleKind::Router { routes } = &cfg[1].kind else {
            panic!()
        };
        assert_eq!(routes[0].datapath, Some(DatapathId(1)));
        assert_eq!(routes[1].datapath, None);
        let backends = build_modules(&cfg);
        let names: Vec<&str> = backends.iter().map(|b| b.name()).collect();
        assert_eq!(names, vec!["b1", "r1"]);
        assert_eq!(backends[0].registrations().len(), 2);
    }

    #[test]
    fn errors_carry_lines() {
        let e = parse_module_config("[module a]\nkind = teleporter\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = parse_module_config("kind = router\n").unwrap_err();
        assert_eq!(e.line, 1);
        let e = parse_module_config("[module a]\nkind = router\nacl = deny *\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = parse_module_config("[module a]\nkind = router\nroute = prefix=10.0.0.0/8 port=1\n")
            .unwrap_err();
        assert!(e.message.contains("mac"), "{e}");
        let e = parse_module_config("[module a]\nkind = load_balancer\n").unwrap_err();
        assert_eq!(e.line, 2);
    }
}
