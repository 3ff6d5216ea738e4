//! Run reports and their two renderings.
//!
//! The machine format is line oriented. Every line starts with a record
//! type followed by `key=value` fields separated by single spaces:
//!
//! ```text
//! netcompose-report 1
//! metric name=events_processed value=2
//! metric name=conflicts_resolved.priority value=1
//! module id=1 name=fw active=true
//! log seq=1 time=0 kind=hello xid=1 module=0 dp=0 detail=shim agreed [0x11/1]
//! table dp=1 entries=1
//! flow dp=1 prio=200 match=ip_dst=10.0.2.0/24 actions=drop idle=0 hard=0 packets=1 installed=1000 last_hit=2000
//! end
//! ```
//!
//! `detail` is always last and runs to the end of the line; backslashes
//! and newlines in it are escaped as `\\` and `\n`. Records appear in the
//! order shown, metrics in a fixed order, log entries by `seq`, tables by
//! datapath and flows in lookup order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::composition::{Metrics, PolicyKind};
use crate::eventlog::LogKind;
use crate::sbi::text::{parse_action_list, ActionList};
use crate::sbi::{parse_num, DatapathId, FlowRule, Match, ModuleId, Xid};

pub const MACHINE_HEADER: &str = "netcompose-report 1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub seq: u64,
    pub time_ms: u64,
    pub kind: LogKind,
    pub xid: Xid,
    pub module_id: ModuleId,
    pub datapath: DatapathId,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableEntry {
    pub rule: FlowRule,
    pub packet_count: u64,
    pub install_ms: u64,
    pub last_hit_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleEntry {
    pub id: ModuleId,
    pub name: String,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub metrics: Metrics,
    pub modules: Vec<ModuleEntry>,
    pub log: Vec<LogEntry>,
    pub tables: BTreeMap<DatapathId, Vec<TableEntry>>,
}

impl Default for RunReport {
    fn default() -> Self {
        RunReport {
            metrics: Metrics {
                conflicts_resolved: PolicyKind::ALL.iter().map(|k| (*k, 0)).collect(),
                ..Metrics::default()
            },
            modules: Vec::new(),
            log: Vec::new(),
            tables: BTreeMap::new(),
        }
    }
}

impl RunReport {
    pub fn count(&self, kind: LogKind) -> usize {
        self.log.iter().filter(|e| e.kind == kind).count()
    }

    pub fn entries(&self, kind: LogKind) -> impl Iterator<Item = &LogEntry> {
        self.log.iter().filter(move |e| e.kind == kind)
    }

    /// 0 for a clean run, 2 if any protocol error occurred.
    pub fn exit_code(&self) -> i32 {
        if self.metrics.protocol_errors > 0 {
            2
        } else {
            0
        }
    }

    /// Checks the metrics against the log and the log's sequence numbers.
    pub fn check_consistency(&self) -> Result<(), String> {
        if let Some(w) = self.log.windows(2).find(|w| w[0].seq >= w[1].seq) {
            return Err(format!("log seq {} followed by {}", w[0].seq, w[1].seq));
        }
        let m = &self.metrics;
        let checks = [
            ("events_processed", m.events_processed, LogKind::EventIn),
            ("fences_received", m.fences_received, LogKind::Fence),
            ("conflicts_detected", m.conflicts_detected, LogKind::Conflict),
            (
                "outputs_buffered_for_ordering",
                m.outputs_buffered_for_ordering,
                LogKind::Buffered,
            ),
            ("protocol_errors", m.protocol_errors, LogKind::ProtocolError),
        ];
        for (name, value, kind) in checks {
            let logged = self.count(kind) as u64;
            if value != logged {
                return Err(format!("{name}={value} but the log has {logged} {kind} entries"));
            }
        }
        for (policy, value) in &m.conflicts_resolved {
            let tag = format!("policy={policy} ");
            let logged = self
                .entries(LogKind::Resolve)
                .filter(|e| e.detail.starts_with(&tag))
                .count() as u64;
            if *value != logged {
                return Err(format!(
                    "conflicts_resolved.{policy}={value} but the log has {logged}"
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Machine,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown report format {0:?} (expected text or machine)")]
pub struct UnknownFormat(pub String);

impl FromStr for ReportFormat {
    type Err = UnknownFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "machine" => Ok(ReportFormat::Machine),
            other => Err(UnknownFormat(other.to_string())),
        }
    }
}

pub fn dump_state(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => render_text(report),
        ReportFormat::Machine => render_machine(report),
    }
}

fn metric_pairs(m: &Metrics) -> Vec<(String, u64)> {
    let mut out = vec![
        ("events_processed".to_string(), m.events_processed),
        ("fences_received".to_string(), m.fences_received),
        ("conflicts_detected".to_string(), m.conflicts_detected),
    ];
    for (k, v) in &m.conflicts_resolved {
        out.push((format!("conflicts_resolved.{k}"), *v));
    }
    out.push((
        "outputs_buffered_for_ordering".to_string(),
        m.outputs_buffered_for_ordering,
    ));
    out.push(("protocol_errors".to_string(), m.protocol_errors));
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn flow_fields(e: &TableEntry) -> String {
    format!(
        "prio={} match={} actions={} idle={} hard={} packets={} installed={} last_hit={}",
        e.rule.priority,
        e.rule.pattern,
        ActionList(&e.rule.actions),
        e.rule.idle_timeout,
        e.rule.hard_timeout,
        e.packet_count,
        e.install_ms,
        e.last_hit_ms
    )
}

pub fn render_machine(r: &RunReport) -> String {
    let mut s = String::new();
    s.push_str(MACHINE_HEADER);
    s.push('\n');
    for (name, value) in metric_pairs(&r.metrics) {
        let _ = writeln!(s, "metric name={name} value={value}");
    }
    for m in &r.modules {
        let _ = writeln!(s, "module id={} name={} active={}", m.id, m.name, m.active);
    }
    for e in &r.log {
        let _ = writeln!(
            s,
            "log seq={} time={} kind={} xid={} module={} dp={} detail={}",
            e.seq,
            e.time_ms,
            e.kind,
            e.xid,
            e.module_id,
            e.datapath,
            escape(&e.detail)
        );
    }
    s.push_str(&render_tables(r));
    s.push_str("end\n");
    s
}

/// The `table` and `flow` records of the machine format on their own.
pub fn render_tables(r: &RunReport) -> String {
    let mut s = String::new();
    for (dp, entries) in &r.tables {
        let _ = writeln!(s, "table dp={dp} entries={}", entries.len());
        for e in entries {
            let _ = writeln!(s, "flow dp={dp} {}", flow_fields(e));
        }
    }
    s
}

pub fn render_text(r: &RunReport) -> String {
    let mut s = String::new();
    s.push_str("netcompose run report\n");
    let metrics: Vec<String> = metric_pairs(&r.metrics)
        .into_iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    let _ = writeln!(s, "metrics: {}", metrics.join(" "));
    s.push_str("modules:\n");
    for m in &r.modules {
        let _ = writeln!(
            s,
            "  {:>3} {}{}",
            m.id,
            m.name,
            if m.active { "" } else { " (retired)" }
        );
    }
    s.push_str("log:\n");
    for e in &r.log {
        let _ = writeln!(
            s,
            "  {:>5} {:>8}ms {:<17} xid={:<4} mod={:<2} dp={:<2} {}",
            e.seq,
            e.time_ms,
            e.kind.name(),
            e.xid,
            e.module_id,
            e.datapath,
            escape(&e.detail)
        );
    }
    s.push_str("tables:\n");
    for (dp, entries) in &r.tables {
        let _ = writeln!(s, "  datapath {dp}: {} entries", entries.len());
        for e in entries {
            let _ = writeln!(s, "    {}", flow_fields(e));
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("report line {line}: {message}")]
pub struct ReportParseError {
    pub line: usize,
    pub message: String,
}

struct Fields<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn new(line: usize, rest: &'a str) -> Result<Self, ReportParseError> {
        let pairs = rest
            .split(' ')
            .map(|w| {
                w.split_once('=').ok_or_else(|| ReportParseError {
                    line,
                    message: format!("expected key=value, got {w:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Fields { line, pairs })
    }

    fn err(&self, message: String) -> ReportParseError {
        ReportParseError {
            line: self.line,
            message,
        }
    }

    fn get(&self, key: &str) -> Result<&'a str, ReportParseError> {
        self.pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| self.err(format!("missing {key}=")))
    }

    fn num<T: TryFrom<u64>>(&self, key: &str) -> Result<T, ReportParseError> {
        let v = self.get(key)?;
        parse_num(v).ok_or_else(|| self.err(format!("bad {key} {v:?}")))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T, ReportParseError> {
        let v = self.get(key)?;
        v.parse().map_err(|_| self.err(format!("bad {key} {v:?}")))
    }
}

/// Reads a machine-format report back.
pub fn parse_machine(text: &str) -> Result<RunReport, ReportParseError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, MACHINE_HEADER)) => {}
        _ => {
            return Err(ReportParseError {
                line: 1,
                message: format!("expected {MACHINE_HEADER:?}"),
            })
        }
    }
    let mut r = RunReport::default();
    let mut ended = false;
    for (line, text) in lines {
        if ended {
            return Err(ReportParseError {
                line,
                message: "content after end".into(),
            });
        }
        let (tag, rest) = text.split_once(' ').unwrap_or((text, ""));
        match tag {
            "end" => ended = true,
            "metric" => {
                let f = Fields::new(line, rest)?;
                let name = f.get("name")?;
                let value: u64 = f.num("value")?;
                let m = &mut r.metrics;
                match name {
                    "events_processed" => m.events_processed = value,
                    "fences_received" => m.fences_received = value,
                    "conflicts_detected" => m.conflicts_detected = value,
                    "outputs_buffered_for_ordering" => m.outputs_buffered_for_ordering = value,
                    "protocol_errors" => m.protocol_errors = value,
                    other => {
                        let policy = other
                            .strip_prefix("conflicts_resolved.")
                            .and_then(|p| p.parse::<PolicyKind>().ok())
                            .ok_or_else(|| f.err(format!("unknown metric {other:?}")))?;
                        m.conflicts_resolved.insert(policy, value);
                    }
                }
            }
            "module" => {
                let f = Fields::new(line, rest)?;
                r.modules.push(ModuleEntry {
                    id: ModuleId(f.num("id")?),
                    name: f.get("name")?.to_string(),
                    active: f.parse("active")?,
                });
            }
            "log" => {
                let (head, detail) = rest.split_once(" detail=").ok_or_else(|| ReportParseError {
                    line,
                    message: "log line without detail=".into(),
                })?;
                let f = Fields::new(line, head)?;
                r.log.push(LogEntry {
                    seq: f.num("seq")?,
                    time_ms: f.num("time")?,
                    kind: f.parse("kind")?,
                    xid: Xid(f.num("xid")?),
                    module_id: ModuleId(f.num("module")?),
                    datapath: DatapathId(f.num("dp")?),
                    detail: unescape(detail),
                });
            }
            "table" => {
                let f = Fields::new(line, rest)?;
                r.tables.insert(DatapathId(f.num("dp")?), Vec::new());
            }
            "flow" => {
                let f = Fields::new(line, rest)?;
                let dp = DatapathId(f.num("dp")?);
                let pattern: Match = f.parse("match")?;
                let actions = parse_action_list(f.get("actions")?)
                    .map_err(|e| f.err(e.to_string()))?;
                let rule = FlowRule::new(f.num("prio")?, pattern, actions)
                    .with_idle_timeout(f.num("idle")?)
                    .with_hard_timeout(f.num("hard")?);
                let entry = TableEntry {
                    rule,
                    packet_count: f.num("packets")?,
                    install_ms: f.num("installed")?,
                    last_hit_ms: f.num("last_hit")?,
                };
                r.tables
                    .get_mut(&dp)
                    .ok_or_else(|| f.err(format!("flow for undeclared table {dp}")))?
                    .push(entry);
            }
            other => {
                return Err(ReportParseError {
                    line,
                    message: format!("unknown record {other:?}"),
                })
            }
        }
    }
    if !ended {
        return Err(ReportParseError {
            line: text.lines().count(),
            message: "missing end".into(),
        });
    }
    Ok(r)
}
