//! Packet traces.
//!
//! ```text
//! at 0 inject dp=1 port=1 eth_type=0x0800 ip_src=172.16.0.5 ip_dst=10.0.1.10 ip_proto=6 tp_dst=80
//! at 1000 tick
//! at 2000 stats dp=1 ip_dst=10.0.1.0/24
//! ```
//!
//! Times are milliseconds and may not decrease.

use thiserror::Error;

use crate::sbi::text::{parse_header_pairs, parse_match_pairs};
use crate::sbi::{parse_num, DatapathId, Match, PacketHeaders};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trace line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    Inject {
        datapath: DatapathId,
        port: u32,
        headers: PacketHeaders,
    },
    Tick,
    Stats {
        datapath: DatapathId,
        pattern: Match,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub line: usize,
    pub time_ms: u64,
    pub directive: Directive,
}

pub type Trace = Vec<TraceStep>;

pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let mut steps: Trace = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| TraceError { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        let words: Vec<&str> = content.split_whitespace().collect();
        let (time_ms, verb, args) = match words.as_slice() {
            [] => continue,
            ["at", t, verb, args @ ..] => (
                parse_num::<u64>(t).ok_or_else(|| err(format!("bad time {t:?}")))?,
                *verb,
                args,
            ),
            _ => return Err(err(format!("expected 'at <ms> <directive>', got {content:?}"))),
        };
        if let Some(prev) = steps.last() {
            if time_ms < prev.time_ms {
                return Err(err(format!(
                    "time {time_ms} is earlier than the previous directive at {}",
                    prev.time_ms
                )));
            }
        }
        let directive = match verb {
            "tick" if args.is_empty() => Directive::Tick,
            "tick" => return Err(err("tick takes no arguments".into())),
            "inject" | "stats" => {
                let (dp, rest) = match args.split_first() {
                    Some((first, rest)) if first.starts_with("dp=") => (first, rest),
                    _ => return Err(err(format!("{verb} needs dp=<id> first"))),
                };
                let datapath = DatapathId(
                    parse_num(&dp[3..]).ok_or_else(|| err(format!("bad datapath {dp:?}")))?,
                );
                if verb == "stats" {
                    let pattern = parse_match_pairs(rest.iter().copied())
                        .map_err(|e| err(e.to_string()))?;
                    Directive::Stats { datapath, pattern }
                } else {
                    let (port, fields) = match rest.split_first() {
                        Some((p, fields)) if p.starts_with("port=") => (p, fields),
                        _ => return Err(err("inject needs port=<n> after dp=".into())),
                    };
                    let port = parse_num(&port[5..]).ok_or_else(|| err(format!("bad port {port:?}")))?;
                    if fields.iter().any(|f| f.starts_with("in_port=")) {
                        return Err(err("the ingress port is given by port=".into()));
                    }
                    let mut headers = parse_header_pairs(PacketHeaders::default(), fields.iter().copied())
                        .map_err(|e| err(e.to_string()))?;
                    headers.in_port = port;
                    Directive::Inject {
                        datapath,
                        port,
                        headers,
                    }
                }
            }
            other => return Err(err(format!("unknown directive {other:?}"))),
        };
        steps.push(TraceStep {
            line,
            time_ms,
            directive,
        });
    }
    Ok(steps)
}
