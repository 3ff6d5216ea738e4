//! Structured log records emitted by every engine component.
//!
//! Components buffer [`LogRecord`]s; the scenario runner drains them after
//! each step, stamps them with a sequence number and the simulated time, and
//! keeps them in the run report. Barrier safety and output ordering are
//! checked from this log.

use std::fmt;
use std::str::FromStr;

use crate::sbi::{DatapathId, ModuleId, Xid};

macro_rules! log_kinds {
    ($($variant:ident => $name:literal,)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum LogKind {
            $($variant,)*
        }

        impl LogKind {
            pub const ALL: &'static [LogKind] = &[$(LogKind::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(LogKind::$variant => $name,)*
                }
            }
        }
    };
}

log_kinds! {
    Hello => "hello",
    Register => "register",
    RegisterError => "register_error",
    EventIn => "event_in",
    Invoke => "invoke",
    AutoFence => "auto_fence",
    CommandIn => "command_in",
    Fence => "fence",
    SeqInput => "seq_input",
    SeqShortCircuit => "seq_short_circuit",
    Conflict => "conflict",
    Resolve => "resolve",
    Compose => "compose",
    Noop => "noop",
    Buffered => "buffered",
    Release => "release",
    TicketOpen => "ticket_open",
    TicketReply => "ticket_reply",
    TicketOrphan => "ticket_orphan",
    Warning => "warning",
    ProtocolError => "protocol_error",
    ModuleRun => "module_run",
    ModuleReply => "module_reply",
    Inject => "inject",
    Tick => "tick",
    TableMiss => "table_miss",
    Forward => "forward",
    Deliver => "deliver",
    Drop => "drop",
    Lost => "lost",
    FlowInstalled => "flow_installed",
    FlowDeleted => "flow_deleted",
    FlowExpired => "flow_expired",
    PacketOut => "packet_out",
    StatsServed => "stats_served",
}

impl fmt::Display for LogKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LogKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LogKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown log kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub kind: LogKind,
    pub xid: Xid,
    pub module_id: ModuleId,
    pub datapath: DatapathId,
    pub detail: String,
}

impl LogRecord {
    pub fn new(kind: LogKind, detail: impl Into<String>) -> Self {
        LogRecord {
            kind,
            xid: Xid(0),
            module_id: ModuleId(0),
            datapath: DatapathId(0),
            detail: detail.into(),
        }
    }

    pub fn xid(mut self, xid: Xid) -> Self {
        self.xid = xid;
        self
    }

    pub fn module(mut self, module_id: ModuleId) -> Self {
        self.module_id = module_id;
        self
    }

    pub fn datapath(mut self, datapath: DatapathId) -> Self {
        self.datapath = datapath;
        self
    }
}

/// A buffer of records waiting to be drained.
#[derive(Debug, Default, Clone)]
pub struct LogBuffer {
    records: Vec<LogRecord>,
}

impl LogBuffer {
    pub fn push(&mut self, record: LogRecord) {
        if record.kind == LogKind::Warning || record.kind == LogKind::ProtocolError {
            log::warn!("{}: {}", record.kind, record.detail);
        } else {
            log::debug!("{}: {}", record.kind, record.detail);
        }
        self.records.push(record);
    }

    pub fn drain(&mut self) -> Vec<LogRecord> {
        std::mem::take(&mut self.records)
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }
}
