//! The simulated data plane.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::eventlog::{LogBuffer, LogKind, LogRecord};
use crate::sbi::text::{compact_headers, describe_command};
use crate::sbi::{
    apply_actions, Action, Command, DatapathId, Event, FlowStats, Match, OutPort, PacketHeaders,
};

use super::table::{AddOutcome, FlowTable};
use super::topology::{Attachment, PortRef, Topology};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown datapath {0}")]
    UnknownDatapath(DatapathId),
    #[error("no port {0}")]
    UnknownPort(PortRef),
    #[error("time cannot go back from {now} ms to {to} ms")]
    TimeWentBack { now: u64, to: u64 },
}

/// A packet copy in flight inside the network.
struct InFlight {
    at: PortRef,
    headers: PacketHeaders,
    hops: usize,
}

pub struct Network {
    topology: Topology,
    tables: BTreeMap<DatapathId, FlowTable>,
    now_ms: u64,
    hop_limit: usize,
    log: LogBuffer,
}

impl Network {
    pub const DEFAULT_HOP_LIMIT: usize = 16;

    pub fn new(topology: Topology) -> Self {
        let tables = topology
            .switches
            .keys()
            .map(|dp| (*dp, FlowTable::new()))
            .collect();
        Network {
            topology,
            tables,
            now_ms: 0,
            hop_limit: Self::DEFAULT_HOP_LIMIT,
            log: LogBuffer::default(),
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn tables(&self) -> &BTreeMap<DatapathId, FlowTable> {
        &self.tables
    }

    pub fn table(&self, datapath: DatapathId) -> Option<&FlowTable> {
        self.tables.get(&datapath)
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn drain_log(&mut self) -> Vec<LogRecord> {
        self.log.drain()
    }

    pub(crate) fn log_record(&mut self, record: LogRecord) {
        self.log.push(record);
    }

    fn table_mut(&mut self, datapath: DatapathId) -> Result<&mut FlowTable, SimError> {
        self.tables
            .get_mut(&datapath)
            .ok_or(SimError::UnknownDatapath(datapath))
    }

    fn check_port(&self, at: PortRef) -> Result<(), SimError> {
        match self.topology.ports(at.datapath) {
            None => Err(SimError::UnknownDatapath(at.datapath)),
            Some(n) if at.port == 0 || at.port > n => Err(SimError::UnknownPort(at)),
            Some(_) => Ok(()),
        }
    }

    /// Installs or deletes flow entries. Other commands are not table
    /// changes and are ignored here.
    pub fn apply_flow_mod(&mut self, cmd: &Command) -> Result<(), SimError> {
        let now = self.now_ms;
        match cmd {
            Command::FlowModAdd { datapath, rule } => {
                let outcome = self.table_mut(*datapath)?.add(rule.clone(), now);
                let verb = match outcome {
                    AddOutcome::Inserted => "installed",
                    AddOutcome::Replaced => "replaced",
                };
                self.log.push(
                    LogRecord::new(LogKind::FlowInstalled, format!("{verb} {}", describe_command(cmd)))
                        .datapath(*datapath),
                );
            }
            Command::FlowModDelete { datapath, pattern } => {
                let gone = self.table_mut(*datapath)?.delete(pattern);
                self.log.push(
                    LogRecord::new(
                        LogKind::FlowDeleted,
                        format!("match={pattern} removed={}", gone.len()),
                    )
                    .datapath(*datapath),
                );
            }
            _ => {}
        }
        Ok(())
    }

    /// Moves the clock and expires entries. FlowRemoved events come out in
    /// datapath order, then table order.
    pub fn advance_time(&mut self, to_ms: u64) -> Result<Vec<Event>, SimError> {
        if to_ms < self.now_ms {
            return Err(SimError::TimeWentBack {
                now: self.now_ms,
                to: to_ms,
            });
        }
        self.now_ms = to_ms;
        let mut events = Vec::new();
        for (dp, table) in &mut self.tables {
            for (entry, reason) in table.expire(to_ms) {
                self.log.push(
                    LogRecord::new(
                        LogKind::FlowExpired,
                        format!(
                            "prio={} match={} reason={} packets={}",
                            entry.rule.priority,
                            entry.rule.pattern,
                            reason.name(),
                            entry.packet_count
                        ),
                    )
                    .datapath(*dp),
                );
                events.push(Event::FlowRemoved {
                    datapath: *dp,
                    rule: entry.rule,
                    reason,
                });
            }
        }
        Ok(events)
    }

    pub fn stats(&self, datapath: DatapathId, pattern: &Match) -> Result<Vec<FlowStats>, SimError> {
        self.tables
            .get(&datapath)
            .map(|t| t.stats(pattern))
            .ok_or(SimError::UnknownDatapath(datapath))
    }

    /// A packet arriving at a switch port from outside. Returns the
    /// packet-ins it caused.
    pub fn inject(&mut self, at: PortRef, mut headers: PacketHeaders) -> Result<Vec<Event>, SimError> {
        self.check_port(at)?;
        headers.in_port = at.port;
        self.log.push(
            LogRecord::new(
                LogKind::Inject,
                format!("port={} {}", at.port, compact_headers(&headers)),
            )
            .datapath(at.datapath),
        );
        let mut queue = VecDeque::from([InFlight {
            at,
            headers,
            hops: 0,
        }]);
        let mut events = Vec::new();
        self.run(&mut queue, &mut events);
        Ok(events)
    }

    /// Emits a packet from a switch as instructed by the controller.
    /// `headers.in_port` is the port the packet originally came in on and
    /// is excluded from floods.
    pub fn packet_out(
        &mut self,
        datapath: DatapathId,
        headers: PacketHeaders,
        actions: &[Action],
    ) -> Result<Vec<Event>, SimError> {
        if !self.tables.contains_key(&datapath) {
            return Err(SimError::UnknownDatapath(datapath));
        }
        self.log.push(
            LogRecord::new(
                LogKind::PacketOut,
                format!(
                    "{} actions={}",
                    compact_headers(&headers),
                    crate::sbi::text::ActionList(actions)
                ),
            )
            .datapath(datapath),
        );
        let mut queue = VecDeque::new();
        let mut events = Vec::new();
        let at = PortRef {
            datapath,
            port: headers.in_port,
        };
        self.execute(at, &headers, actions, 0, false, &mut queue, &mut events);
        self.run(&mut queue, &mut events);
        Ok(events)
    }

    fn run(&mut self, queue: &mut VecDeque<InFlight>, events: &mut Vec<Event>) {
        while let Some(p) = queue.pop_front() {
            let now = self.now_ms;
            let table = self.tables.get_mut(&p.at.datapath).expect("checked port");
            match table.lookup(&p.headers) {
                None => {
                    self.log.push(
                        LogRecord::new(
                            LogKind::TableMiss,
                            format!("port={} {}", p.at.port, compact_headers(&p.headers)),
                        )
                        .datapath(p.at.datapath),
                    );
                    events.push(Event::PacketIn {
                        datapath: p.at.datapath,
                        headers: p.headers,
                    });
                }
                Some(idx) => {
                    let actions = table.hit(idx, now).rule.actions.clone();
                    self.execute(p.at, &p.headers, &actions, p.hops, true, queue, events);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn execute(
        &mut self,
        at: PortRef,
        headers: &PacketHeaders,
        actions: &[Action],
        hops: usize,
        from_table: bool,
        queue: &mut VecDeque<InFlight>,
        events: &mut Vec<Event>,
    ) {
        let outcome = apply_actions(headers, actions);
        if outcome.dropped || outcome.outputs.is_empty() {
            self.log.push(
                LogRecord::new(LogKind::Drop, compact_headers(headers)).datapath(at.datapath),
            );
            return;
        }
        let ports = self.topology.ports(at.datapath).unwrap_or(0);
        for out in &outcome.outputs {
            match out {
                OutPort::Port(p) => self.send(at.datapath, *p, &outcome.headers, hops, queue),
                OutPort::Flood => {
                    for p in (1..=ports).filter(|p| *p != at.port) {
                        self.send(at.datapath, p, &outcome.headers, hops, queue);
                    }
                }
                OutPort::Controller if from_table => {
                    self.log.push(
                        LogRecord::new(LogKind::TableMiss, "to controller by rule")
                            .datapath(at.datapath),
                    );
                    events.push(Event::PacketIn {
                        datapath: at.datapath,
                        headers: outcome.headers,
                    });
                }
                OutPort::Controller => self.log.push(
                    LogRecord::new(LogKind::Lost, "packet-out back to controller ignored")
                        .datapath(at.datapath),
                ),
            }
        }
    }

    fn send(
        &mut self,
        datapath: DatapathId,
        port: u32,
        headers: &PacketHeaders,
        hops: usize,
        queue: &mut VecDeque<InFlight>,
    ) {
        let from = PortRef { datapath, port };
        match self.topology.attachment(from) {
            Some(Attachment::Host(i)) => {
                let host = &self.topology.hosts[i];
                self.log.push(
                    LogRecord::new(
                        LogKind::Deliver,
                        format!("host={} port={port} {}", host.name, compact_headers(headers)),
                    )
                    .datapath(datapath),
                );
            }
            Some(Attachment::Switch(peer)) if hops < self.hop_limit => {
                self.log.push(
                    LogRecord::new(LogKind::Forward, format!("{from} -> {peer}")).datapath(datapath),
                );
                let mut h = *headers;
                h.in_port = peer.port;
                queue.push_back(InFlight {
                    at: peer,
                    headers: h,
                    hops: hops + 1,
                });
            }
            Some(Attachment::Switch(_)) => self.log.push(
                LogRecord::new(LogKind::Lost, format!("hop limit reached at {from}"))
                    .datapath(datapath),
            ),
            None => self.log.push(
                LogRecord::new(LogKind::Lost, format!("port {port} is not connected"))
                    .datapath(datapath),
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sbi::FlowRule;

    fn net() -> Network {
        Network::new(
            Topology::parse(
                "switch 1 ports=3\nswitch 2 ports=2\n\
                 host a mac=02:00:00:00:00:01 ip=10.0.0.1 at 1:1\n\
                 host b mac=02:00:00:00:00:02 ip=10.0.0.2 at 2:2\n\
                 link 1:2 2:1\n",
            )
            .unwrap(),
        )
    }

    fn p(dp: u64, port: u32) -> PortRef {
        PortRef {
            datapath: DatapathId(dp),
            port,
        }
    }

    fn add(n: &mut Network, dp: u64, prio: u16, actions: Vec<Action>) {
        n.apply_flow_mod(&Command::FlowModAdd {
            datapath: DatapathId(dp),
            rule: FlowRule::new(prio, Match::any(), actions),
        })
        .unwrap();
    }

    fn kinds(n: &mut Network) -> Vec<LogKind> {
        n.drain_log().into_iter().map(|r| r.kind).collect()
    }

    #[test]
    fn empty_table_misses() {
        let mut n = net();
        let ev = n.inject(p(1, 1), PacketHeaders::default()).unwrap();
        assert_eq!(ev.len(), 1);
        let Event::PacketIn { headers, .. } = &ev[0] else {
            panic!()
        };
        assert_eq!(headers.in_port, 1);
    }

    #[test]
    fn multi_hop_delivery_and_counters() {
        let mut n = net();
        add(&mut n, 1, 1, vec![Action::Output(2)]);
        add(&mut n, 2, 1, vec![Action::Output(2)]);
        n.drain_log();
        assert!(n.inject(p(1, 1), PacketHeaders::default()).unwrap().is_empty());
        assert_eq!(
            kinds(&mut n),
            vec![LogKind::Inject, LogKind::Forward, LogKind::Deliver]
        );
        assert_eq!(n.table(DatapathId(2)).unwrap().entries()[0].packet_count, 1);
    }

    #[test]
    fn flood_skips_ingress() {
        let mut n = net();
        add(&mut n, 1, 1, vec![Action::Flood]);
        n.drain_log();
        n.inject(p(1, 1), PacketHeaders::default()).unwrap();
        let log = n.drain_log();
        let outs: Vec<&str> = log
            .iter()
            .filter(|r| r.datapath == DatapathId(1))
            .map(|r| r.kind.name())
            .collect();
        // Port 2 leads to switch 2, port 3 is unconnected.
        assert_eq!(outs, vec!["inject", "forward", "lost"]);
    }

    #[test]
    fn empty_actions_drop() {
        let mut n = net();
        add(&mut n, 1, 1, vec![]);
        n.drain_log();
        n.inject(p(1, 1), PacketHeaders::default()).unwrap();
        assert_eq!(kinds(&mut n), vec![LogKind::Inject, LogKind::Drop]);
    }

    #[test]
    fn unknown_datapath_and_time() {
        let mut n = net();
        assert_eq!(
            n.stats(DatapathId(9), &Match::any()),
            Err(SimError::UnknownDatapath(DatapathId(9)))
        );
        assert!(n.inject(p(1, 4), PacketHeaders::default()).is_err());
        n.advance_time(10).unwrap();
        assert!(n.advance_time(5).is_err());
    }
}
