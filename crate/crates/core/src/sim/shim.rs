//! The network-facing side of the Core connection.

use crate::eventlog::{LogKind, LogRecord};
use crate::protocol::{negotiate_hello, ErrorCode, HelloBody, Message, Payload};
use crate::sbi::{Command, DatapathId, Event, Match, ModuleId, PacketHeaders, SbiMessage, Xid};

use super::network::{Network, SimError};
use super::topology::PortRef;

/// Translates between the simulated network and protocol frames.
pub struct Shim {
    network: Network,
    hello: HelloBody,
    ready: bool,
    next_xid: u32,
}

impl Shim {
    pub fn new(network: Network) -> Self {
        Shim {
            network,
            hello: HelloBody::simplified_sbi(),
            ready: false,
            next_xid: 1,
        }
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn drain_log(&mut self) -> Vec<LogRecord> {
        self.network.drain_log()
    }

    fn events(&mut self, events: Vec<Event>) -> Vec<Message> {
        events
            .into_iter()
            .map(|ev| {
                let xid = Xid(self.next_xid);
                self.next_xid += 1;
                Message::sbi(xid, ModuleId::NETWORK, ev)
            })
            .collect()
    }

    pub fn start(&mut self) -> Vec<Message> {
        let xid = Xid(self.next_xid);
        self.next_xid += 1;
        vec![Message::hello(xid, self.hello.clone())]
    }

    /// Injects a packet from outside the network.
    pub fn inject(&mut self, at: PortRef, headers: PacketHeaders) -> Result<Vec<Message>, SimError> {
        let events = self.network.inject(at, headers)?;
        Ok(self.events(events))
    }

    pub fn advance_time(&mut self, to_ms: u64) -> Result<Vec<Message>, SimError> {
        let events = self.network.advance_time(to_ms)?;
        Ok(self.events(events))
    }

    fn error(&mut self, xid: Xid, module: ModuleId, code: ErrorCode, text: String) -> Message {
        log::debug!("shim sends {} {text}", code.name());
        Message::error(xid, module, code, text)
    }

    pub fn on_malformed(&mut self, err: &crate::protocol::DecodeError) -> Vec<Message> {
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
            Payload::Hello(remote) => {
                if negotiate_hello(&self.hello, &remote).is_empty() {
                    return vec![self.error(
                        xid,
                        ModuleId(0),
                        ErrorCode::INCOMPATIBLE_PROTOCOL,
                        "no common SBI protocol".into(),
                    )];
                }
                self.ready = true;
                Vec::new()
            }
            Payload::Error(body) => {
                log::debug!("shim got {} {}", body.code.name(), body.text);
                Vec::new()
            }
            Payload::Sbi(SbiMessage::Command(cmd)) if self.ready => {
                match self.command(xid, module_id, &cmd) {
                    Ok(out) => out,
                    Err(SimError::UnknownDatapath(dp)) => vec![self.error(
                        xid,
                        module_id,
                        ErrorCode::UNKNOWN_DATAPATH,
                        format!("unknown datapath {dp}"),
                    )],
                    Err(e) => vec![self.error(xid, module_id, ErrorCode::UNEXPECTED_MESSAGE, e.to_string())],
                }
            }
            other => vec![self.error(
                xid,
                module_id,
                ErrorCode::UNEXPECTED_MESSAGE,
                format!("unexpected {:?} frame", other.msg_type()),
            )],
        }
    }

    fn command(&mut self, xid: Xid, module: ModuleId, cmd: &Command) -> Result<Vec<Message>, SimError> {
        match cmd {
            Command::FlowModAdd { .. } | Command::FlowModDelete { .. } => {
                self.network.apply_flow_mod(cmd)?;
                Ok(Vec::new())
            }
            Command::PacketOut {
                datapath,
                headers,
                actions,
            } => {
                let events = self.network.packet_out(*datapath, *headers, actions)?;
                Ok(self.events(events))
            }
            Command::StatsRequest { datapath, pattern } => {
                Ok(vec![self.stats_reply(xid, module, *datapath, pattern)?])
            }
        }
    }

    fn stats_reply(
        &mut self,
        xid: Xid,
        module: ModuleId,
        datapath: DatapathId,
        pattern: &Match,
    ) -> Result<Message, SimError> {
        let entries = self.network.stats(datapath, pattern)?;
        self.network.log_record(
            LogRecord::new(
                LogKind::StatsServed,
                format!("match={pattern} entries={}", entries.len()),
            )
            .xid(xid)
            .datapath(datapath),
        );
        Ok(Message::sbi(xid, module, Event::StatsReply { datapath, entries }))
    }
}
