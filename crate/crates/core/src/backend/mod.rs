//! Client-controller backends hosting application modules.
//!
//! A [`Backend`] is sans-IO like the Core: feed it frames from the Core and
//! send back what it returns. After the hello exchange it announces each
//! hosted module, and once a module is acknowledged it receives events
//! tagged with its id. Every event delivery ends with exactly one fence for
//! that event's xid, also when the module failed.

pub mod apps;
pub mod config;

use thiserror::Error;

use crate::eventlog::{LogBuffer, LogKind, LogRecord};
use crate::protocol::{negotiate_hello, DecodeError, ErrorCode, HelloBody, Message, Payload};
use crate::sbi::text::{describe_command, describe_event};
use crate::sbi::{Command, DatapathId, Event, ModuleId, Xid};

pub use config::{build_modules, parse_module_config, ConfigError, ModuleConfig, ModuleKind};

/// Events handled by one module invocation may cost at most this many steps.
pub const DEFAULT_STEP_BUDGET: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("step budget exhausted")]
pub struct BudgetExceeded;

/// Work counter for one invocation.
#[derive(Debug, Clone)]
pub struct StepBudget {
    remaining: u64,
}

impl StepBudget {
    pub fn new(steps: u64) -> Self {
        StepBudget { remaining: steps }
    }

    pub fn charge(&mut self, steps: u64) -> Result<(), BudgetExceeded> {
        self.remaining = self.remaining.checked_sub(steps).ok_or(BudgetExceeded)?;
        Ok(())
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }
}

/// An application module. It only sees events and only returns commands.
pub trait AppModule: Send {
    fn name(&self) -> &str;

    fn handle_event(
        &mut self,
        event: &Event,
        budget: &mut StepBudget,
    ) -> Result<Vec<Command>, BudgetExceeded>;

    /// Receives the reply to a stats request the module issued.
    fn on_stats_reply(&mut self, _reply: &Event) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Registration {
    Pending,
    Registered(ModuleId),
    Rejected,
}

struct Hosted {
    module: Box<dyn AppModule>,
    registration: Registration,
    budget: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Start,
    HelloSent,
    Ready,
    Failed,
}

pub struct Backend {
    name: String,
    hello: HelloBody,
    modules: Vec<Hosted>,
    phase: Phase,
    next_xid: u32,
    log: LogBuffer,
}

impl Backend {
    pub fn new(name: impl Into<String>, modules: Vec<Box<dyn AppModule>>) -> Self {
        Backend {
            name: name.into(),
            hello: HelloBody::simplified_sbi(),
            modules: modules
                .into_iter()
                .map(|module| Hosted {
                    module,
                    registration: Registration::Pending,
                    budget: DEFAULT_STEP_BUDGET,
                })
                .collect(),
            phase: Phase::Start,
            next_xid: 1,
            log: LogBuffer::default(),
        }
    }

    pub fn with_hello(mut self, hello: HelloBody) -> Self {
        self.hello = hello;
        self
    }

    /// Sets the per-invocation step budget of a hosted module.
    pub fn set_budget(&mut self, module: &str, steps: u64) {
        for h in self.modules.iter_mut().filter(|h| h.module.name() == module) {
            h.budget = steps;
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn registrations(&self) -> Vec<(String, Registration)> {
        self.modules
            .iter()
            .map(|h| (h.module.name().to_string(), h.registration))
            .collect()
    }

    pub fn drain_log(&mut self) -> Vec<LogRecord> {
        self.log.drain()
    }

    fn fresh_xid(&mut self) -> Xid {
        let x = Xid(self.next_xid);
        self.next_xid += 1;
        x
    }

    fn error(&mut self, xid: Xid, module: ModuleId, code: ErrorCode, text: String) -> Message {
        log::debug!("{} sends {} {text}", self.name, code.name());
        Message::error(xid, module, code, text)
    }

    /// Opens the session.
    pub fn start(&mut self) -> Vec<Message> {
        if self.phase != Phase::Start {
            return Vec::new();
        }
        self.phase = Phase::HelloSent;
        let xid = self.fresh_xid();
        vec![Message::hello(xid, self.hello.clone())]
    }

    pub fn on_malformed(&mut self, err: &DecodeError) -> Vec<Message> {
        vec![self.error(Xid(0), ModuleId(0), ErrorCode::MALFORMED, err.to_string())]
    }

    pub fn handle(&mut self, msg: Message) -> Vec<Message> {
        let Message {
            xid,
            module_id,
            payload,
            ..
        } = msg;
        match payload {
            Payload::Hello(remote) if self.phase == Phase::HelloSent => {
                let agreed = negotiate_hello(&self.hello, &remote);
                if agreed.is_empty() {
                    self.phase = Phase::Failed;
                    return vec![self.error(
                        xid,
                        ModuleId(0),
                        ErrorCode::INCOMPATIBLE_PROTOCOL,
                        "no common SBI protocol".into(),
                    )];
                }
                self.phase = Phase::Ready;
                let names: Vec<String> =
                    self.modules.iter().map(|h| h.module.name().to_string()).collect();
                names
                    .into_iter()
                    .map(|name| {
                        let xid = self.fresh_xid();
                        Message::new(xid, ModuleId(0), DatapathId(0), Payload::ModuleAnnouncement { name })
                    })
                    .collect()
            }
            Payload::ModuleAcknowledge { name } => {
                match self
                    .modules
                    .iter_mut()
                    .find(|h| h.module.name() == name && h.registration == Registration::Pending)
                {
                    Some(h) => {
                        h.registration = Registration::Registered(module_id);
                        Vec::new()
                    }
                    None => vec![self.error(
                        xid,
                        module_id,
                        ErrorCode::UNKNOWN_MODULE,
                        format!("acknowledge for unannounced module {name}"),
                    )],
                }
            }
            Payload::Error(body) => {
                log::debug!("{} got {} {}", self.name, body.code.name(), body.text);
                if body.code == ErrorCode::DUPLICATE_MODULE {
                    for h in &mut self.modules {
                        h.registration = Registration::Rejected;
                    }
                }
                if body.code == ErrorCode::INCOMPATIBLE_PROTOCOL {
                    self.phase = Phase::Failed;
                }
                Vec::new()
            }
            Payload::Sbi(crate::sbi::SbiMessage::Event(ev)) if self.phase == Phase::Ready => {
                self.deliver(xid, module_id, ev)
            }
            other => vec![self.error(
                xid,
                module_id,
                ErrorCode::UNEXPECTED_MESSAGE,
                format!("unexpected {:?} frame", other.msg_type()),
            )],
        }
    }

    fn deliver(&mut self, xid: Xid, module_id: ModuleId, ev: Event) -> Vec<Message> {
        let Some(idx) = self
            .modules
            .iter()
            .position(|h| h.registration == Registration::Registered(module_id))
        else {
            return vec![self.error(
                xid,
                module_id,
                ErrorCode::UNKNOWN_MODULE,
                format!("module {module_id} is not hosted here"),
            )];
        };
        let datapath = ev.datapath();
        let hosted = &mut self.modules[idx];
        if let Event::StatsReply { .. } = ev {
            self.log.push(
                LogRecord::new(
                    LogKind::ModuleReply,
                    format!("{} <- {}", hosted.module.name(), describe_event(&ev)),
                )
                .xid(xid)
                .module(module_id)
                .datapath(datapath),
            );
            hosted.module.on_stats_reply(&ev);
            return Vec::new();
        }
        let mut budget = StepBudget::new(hosted.budget);
        let result = hosted.module.handle_event(&ev, &mut budget);
        let name = hosted.module.name().to_string();
        let mut out = Vec::new();
        match result {
            Ok(commands) => {
                let summary: Vec<String> = commands.iter().map(describe_command).collect();
                self.log.push(
                    LogRecord::new(
                        LogKind::ModuleRun,
                        format!("{name}: {} commands [{}]", commands.len(), summary.join("; ")),
                    )
                    .xid(xid)
                    .module(module_id)
                    .datapath(datapath),
                );
                out.extend(commands.into_iter().map(|c| Message::sbi(xid, module_id, c)));
            }
            Err(BudgetExceeded) => {
                out.push(self.error(
                    xid,
                    module_id,
                    ErrorCode::STEP_BUDGET_EXCEEDED,
                    format!("{name} exceeded its step budget"),
                ));
            }
        }
        out.push(Message::fence(xid, module_id));
        out
    }
}
