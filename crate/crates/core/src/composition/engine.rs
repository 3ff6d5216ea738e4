//! The Core event loop.
//!
//! [`Core`] is a sans-IO state machine: the caller feeds it decoded frames
//! tagged with the [`Peer`] they came from, in one total order, and sends
//! the returned [`Outbound`] frames on. Arrival sequence numbers are taken
//! at ingress, so a fixed inbox order yields a fixed run.
//!
//! Per network event the Core walks the composition tree: leaves invoke a
//! module (or auto-fence it when filtered out or unregistered), sequential
//! nodes start each child after the previous one's fence with a derived
//! input, and parallel nodes start all children at once and merge once
//! every child completed. The root's result goes through the
//! [`OutputScheduler`] before reaching the shim.

use std::collections::{BTreeMap, BTreeSet};

use crate::eventlog::{LogBuffer, LogKind, LogRecord};
use crate::protocol::{
    negotiate_hello, DecodeError, ErrorCode, HelloBody, Message, Payload, ProtocolOffer,
};
use crate::sbi::text::{describe_command, describe_event};
use crate::sbi::{Command, DatapathId, Event, EventKind, Match, ModuleId, SbiMessage, Xid};

use super::merge::{merge_parallel, ModuleResult, OwnedCommand};
use super::ordering::OutputScheduler;
use super::sequential::{derive_sequential_input, SequentialInput};
use super::spec::{CompositionSpec, ExecNode, Policy, PolicyKind};
use super::tickets::TicketBook;

/// Who a frame came from or goes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Peer {
    Shim,
    Backend(u32),
}

impl std::fmt::Display for Peer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Peer::Shim => f.write_str("shim"),
            Peer::Backend(b) => write!(f, "backend{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub to: Peer,
    pub message: Message,
}

#[derive(Debug, Clone)]
pub struct CoreConfig {
    pub hello: HelloBody,
    /// Warn when this many events wait for release on one datapath.
    pub high_water_mark: usize,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig {
            hello: HelloBody::simplified_sbi(),
            high_water_mark: 64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metrics {
    pub events_processed: u64,
    pub fences_received: u64,
    pub conflicts_detected: u64,
    pub conflicts_resolved: BTreeMap<PolicyKind, u64>,
    pub outputs_buffered_for_ordering: u64,
    pub protocol_errors: u64,
}

#[derive(Debug, Clone)]
struct Registered {
    name: String,
    peer: Peer,
    active: bool,
}

#[derive(Debug, Default)]
struct Registry {
    modules: BTreeMap<ModuleId, Registered>,
    by_name: BTreeMap<String, ModuleId>,
    next_id: u32,
}

impl Registry {
    fn active(&self, name: &str) -> Option<(ModuleId, Peer)> {
        let id = *self.by_name.get(name)?;
        let m = &self.modules[&id];
        m.active.then_some((id, m.peer))
    }

    fn owned_by(&self, id: ModuleId, peer: Peer) -> bool {
        self.modules
            .get(&id)
            .is_some_and(|m| m.active && m.peer == peer)
    }
}

#[derive(Debug, Default)]
struct PeerState {
    negotiated: Option<Vec<ProtocolOffer>>,
    aborted: bool,
}

/// Static facts about one child of a parallel node.
#[derive(Debug, Clone)]
struct GroupInfo {
    module_id: ModuleId,
    priority: u32,
    order: usize,
}

#[derive(Debug)]
enum LeafState {
    Idle,
    Awaiting { id: ModuleId, commands: Vec<Command> },
    Done,
}

#[derive(Debug)]
enum Exec {
    Leaf {
        name: String,
        state: LeafState,
    },
    Seq {
        children: Vec<Exec>,
        current: usize,
        input: Option<Event>,
        results: Vec<Vec<OwnedCommand>>,
    },
    Par {
        policy: Policy,
        groups: Vec<GroupInfo>,
        children: Vec<Exec>,
        results: Vec<Option<Vec<OwnedCommand>>>,
    },
}

enum Routed {
    NotHere,
    Pending,
    Done(Vec<OwnedCommand>),
}

struct Cx<'a> {
    xid: Xid,
    datapath: DatapathId,
    spec: &'a CompositionSpec,
    registry: &'a Registry,
    out: &'a mut Vec<Outbound>,
    log: &'a mut LogBuffer,
    metrics: &'a mut Metrics,
    invoked: &'a mut BTreeSet<ModuleId>,
}

impl Cx<'_> {
    fn record(&mut self, kind: LogKind, module: ModuleId, detail: impl Into<String>) {
        self.log.push(
            LogRecord::new(kind, detail)
                .xid(self.xid)
                .module(module)
                .datapath(self.datapath),
        );
    }
}

impl Exec {
    fn build(node: &ExecNode, spec: &CompositionSpec, registry: &Registry) -> Exec {
        match node {
            ExecNode::Module(name) => Exec::Leaf {
                name: name.clone(),
                state: LeafState::Idle,
            },
            ExecNode::Sequential(children) => Exec::Seq {
                children: children.iter().map(|c| Exec::build(c, spec, registry)).collect(),
                current: 0,
                input: None,
                results: Vec::new(),
            },
            ExecNode::Parallel { policy, children } => Exec::Par {
                policy: policy.clone(),
                groups: children
                    .iter()
                    .map(|c| group_info(c, spec, registry))
                    .collect(),
                children: children.iter().map(|c| Exec::build(c, spec, registry)).collect(),
                results: children.iter().map(|_| None).collect(),
            },
        }
    }

    fn start(&mut self, input: Event, cx: &mut Cx) -> Option<Vec<OwnedCommand>> {
        match self {
            Exec::Leaf { name, state } => {
                let decl = cx.spec.module(name).expect("validated spec");
                let kind = input.kind();
                if !decl.accepts(kind) {
                    let id = cx.registry.active(name).map_or(ModuleId(0), |(id, _)| id);
                    cx.record(
                        LogKind::AutoFence,
                        id,
                        format!("{name} filtered ({kind} not subscribed)"),
                    );
                    *state = LeafState::Done;
                    return Some(Vec::new());
                }
                let Some((id, peer)) = cx.registry.active(name) else {
                    cx.record(
                        LogKind::Warning,
                        ModuleId(0),
                        format!("module {name} is not registered"),
                    );
                    cx.record(LogKind::AutoFence, ModuleId(0), format!("{name} unregistered"));
                    *state = LeafState::Done;
                    return Some(Vec::new());
                };
                cx.record(
                    LogKind::Invoke,
                    id,
                    format!("{name} <- {}", describe_event(&input)),
                );
                cx.out.push(Outbound {
                    to: peer,
                    message: Message::sbi(cx.xid, id, input),
                });
                cx.invoked.insert(id);
                *state = LeafState::Awaiting {
                    id,
                    commands: Vec::new(),
                };
                None
            }
            Exec::Seq {
                children,
                current,
                input: stored,
                results,
            } => {
                *stored = Some(input);
                *current = 0;
                results.clear();
                run_sequence(children, current, stored.as_ref().unwrap(), results, cx)
            }
            Exec::Par {
                policy,
                groups,
                children,
                results,
            } => {
                for (child, slot) in children.iter_mut().zip(results.iter_mut()) {
                    *slot = child.start(input.clone(), cx);
                }
                if results.iter().all(Option::is_some) {
                    Some(merge_node(policy, groups, results, cx))
                } else {
                    None
                }
            }
        }
    }

    fn on_command(&mut self, module: ModuleId, cmd: &Command) -> bool {
        match self {
            Exec::Leaf {
                state: LeafState::Awaiting { id, commands },
                ..
            } if *id == module => {
                commands.push(cmd.clone());
                true
            }
            Exec::Leaf { .. } => false,
            Exec::Seq {
                children, current, ..
            } => children
                .get_mut(*current)
                .is_some_and(|c| c.on_command(module, cmd)),
            Exec::Par {
                children, results, ..
            } => children
                .iter_mut()
                .zip(results.iter())
                .filter(|(_, r)| r.is_none())
                .any(|(c, _)| c.on_command(module, cmd)),
        }
    }

    fn on_fence(&mut self, module: ModuleId, cx: &mut Cx) -> Routed {
        match self {
            Exec::Leaf { state, .. } => match state {
                LeafState::Awaiting { id, .. } if *id == module => {
                    let LeafState::Awaiting { id, commands } =
                        std::mem::replace(state, LeafState::Done)
                    else {
                        unreachable!()
                    };
                    Routed::Done(
                        commands
                            .into_iter()
                            .map(|command| OwnedCommand { owner: id, command })
                            .collect(),
                    )
                }
                _ => Routed::NotHere,
            },
            Exec::Seq {
                children,
                current,
                input,
                results,
            } => {
                let Some(child) = children.get_mut(*current) else {
                    return Routed::NotHere;
                };
                match child.on_fence(module, cx) {
                    Routed::Done(r) => {
                        results.push(r);
                        *current += 1;
                        let input = input.as_ref().expect("started");
                        match run_sequence(children, current, input, results, cx) {
                            Some(out) => Routed::Done(out),
                            None => Routed::Pending,
                        }
                    }
                    other => other,
                }
            }
            Exec::Par {
                policy,
                groups,
                children,
                results,
            } => {
                for (i, child) in children.iter_mut().enumerate() {
                    if results[i].is_some() {
                        continue;
                    }
                    match child.on_fence(module, cx) {
                        Routed::NotHere => continue,
                        Routed::Pending => return Routed::Pending,
                        Routed::Done(r) => {
                            results[i] = Some(r);
                            if results.iter().all(Option::is_some) {
                                return Routed::Done(merge_node(policy, groups, results, cx));
                            }
                            return Routed::Pending;
                        }
                    }
                }
                Routed::NotHere
            }
        }
    }
}

fn group_info(node: &ExecNode, spec: &CompositionSpec, registry: &Registry) -> GroupInfo {
    let leaves = node.leaves();
    GroupInfo {
        module_id: leaves
            .iter()
            .filter_map(|n| registry.active(n).map(|(id, _)| id))
            .min()
            .unwrap_or(ModuleId(u32::MAX)),
        priority: leaves
            .iter()
            .filter_map(|n| spec.module(n))
            .map(|d| d.priority)
            .max()
            .unwrap_or(0),
        order: leaves
            .iter()
            .filter_map(|n| spec.decl_index(n))
            .min()
            .unwrap_or(usize::MAX),
    }
}

fn flatten(results: &[Vec<OwnedCommand>]) -> Vec<OwnedCommand> {
    results.iter().flatten().cloned().collect()
}

fn run_sequence(
    children: &mut [Exec],
    current: &mut usize,
    original: &Event,
    results: &mut Vec<Vec<OwnedCommand>>,
    cx: &mut Cx,
) -> Option<Vec<OwnedCommand>> {
    loop {
        if *current >= children.len() {
            return Some(flatten(results));
        }
        let input = if *current == 0 {
            original.clone()
        } else {
            let prior: Vec<Vec<Command>> = results
                .iter()
                .map(|r| r.iter().map(|c| c.command.clone()).collect())
                .collect();
            match derive_sequential_input(original, &prior) {
                SequentialInput::Next(ev) => {
                    if ev != *original {
                        cx.record(
                            LogKind::SeqInput,
                            ModuleId(0),
                            format!("step {} input {}", *current, describe_event(&ev)),
                        );
                    }
                    ev
                }
                SequentialInput::ShortCircuit { by } => {
                    let skipped: Vec<String> = children[*current..]
                        .iter()
                        .flat_map(|c| match c {
                            Exec::Leaf { name, .. } => vec![name.clone()],
                            _ => vec!["<subtree>".to_string()],
                        })
                        .collect();
                    cx.record(
                        LogKind::SeqShortCircuit,
                        ModuleId(0),
                        format!("dropped at step {by}; skipping {}", skipped.join(",")),
                    );
                    return Some(flatten(results));
                }
                SequentialInput::Passthrough(ev) => {
                    cx.record(
                        LogKind::Warning,
                        ModuleId(0),
                        format!(
                            "{} forwarded unmodified along sequential chain",
                            ev.kind()
                        ),
                    );
                    ev
                }
            }
        };
        {
            let r = children[*current].start(input, cx)?;
            results.push(r);
            *current += 1;
        }
    }
}

fn merge_node(
    policy: &Policy,
    groups: &[GroupInfo],
    results: &[Option<Vec<OwnedCommand>>],
    cx: &mut Cx,
) -> Vec<OwnedCommand> {
    let inputs: Vec<ModuleResult> = groups
        .iter()
        .zip(results)
        .map(|(g, r)| ModuleResult {
            module_id: g.module_id,
            priority: g.priority,
            order: g.order,
            commands: r.clone().unwrap_or_default(),
        })
        .collect();
    let outcome = merge_parallel(&inputs, policy);
    for ((ga, ca), (gb, cb)) in &outcome.conflicts {
        let a = &inputs[*ga].commands[*ca];
        let b = &inputs[*gb].commands[*cb];
        cx.record(
            LogKind::Conflict,
            a.owner,
            format!(
                "module {} [{}] vs module {} [{}]",
                a.owner,
                describe_command(&a.command),
                b.owner,
                describe_command(&b.command)
            ),
        );
    }
    for set in &outcome.sets {
        let winner = set
            .winner
            .map(|w| format!(" winner={}", inputs[w].module_id))
            .unwrap_or_default();
        cx.record(
            LogKind::Resolve,
            set.winner.map_or(ModuleId(0), |w| inputs[w].module_id),
            format!(
                "policy={} commands={}{}",
                policy.kind,
                set.members.len(),
                winner
            ),
        );
    }
    for w in &outcome.warnings {
        cx.record(LogKind::Warning, ModuleId(0), w.clone());
    }
    cx.metrics.conflicts_detected += outcome.conflicts.len() as u64;
    *cx.metrics.conflicts_resolved.entry(policy.kind).or_default() += outcome.sets.len() as u64;
    outcome.commands
}

/// Core bookkeeping for one network event in flight.
#[derive(Debug)]
pub struct PendingEvent {
    pub xid: Xid,
    pub arrival_seq: u64,
    pub datapath: DatapathId,
    pub origin: Event,
    pub invoked: BTreeSet<ModuleId>,
    pub fenced: BTreeSet<ModuleId>,
    exec: Exec,
}

impl PendingEvent {
    /// Modules invoked for this event whose fence has not arrived.
    pub fn awaiting(&self) -> BTreeSet<ModuleId> {
        self.invoked.difference(&self.fenced).copied().collect()
    }
}

pub struct Core {
    spec: CompositionSpec,
    config: CoreConfig,
    registry: Registry,
    peers: BTreeMap<Peer, PeerState>,
    pending: BTreeMap<Xid, PendingEvent>,
    finished: BTreeMap<Xid, BTreeSet<ModuleId>>,
    tickets: TicketBook,
    scheduler: OutputScheduler,
    next_xid: u32,
    next_seq: u64,
    log: LogBuffer,
    metrics: Metrics,
}

impl Core {
    pub fn new(spec: CompositionSpec, config: CoreConfig) -> Self {
        Core {
            spec,
            config,
            registry: Registry {
                next_id: 1,
                ..Default::default()
            },
            peers: BTreeMap::new(),
            pending: BTreeMap::new(),
            finished: BTreeMap::new(),
            tickets: TicketBook::new(),
            scheduler: OutputScheduler::new(),
            next_xid: 1,
            next_seq: 1,
            log: LogBuffer::default(),
            metrics: Metrics {
                conflicts_resolved: PolicyKind::ALL.iter().map(|k| (*k, 0)).collect(),
                ..Metrics::default()
            },
        }
    }

    pub fn spec(&self) -> &CompositionSpec {
        &self.spec
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn drain_log(&mut self) -> Vec<LogRecord> {
        self.log.drain()
    }

    pub fn module_id(&self, name: &str) -> Option<ModuleId> {
        self.registry.active(name).map(|(id, _)| id)
    }

    pub fn pending(&self) -> impl Iterator<Item = &PendingEvent> {
        self.pending.values()
    }

    /// Registered modules in id order, with whether they are still active.
    pub fn modules(&self) -> Vec<(ModuleId, String, bool)> {
        self.registry
            .modules
            .iter()
            .map(|(id, m)| (*id, m.name.clone(), m.active))
            .collect()
    }

    pub fn outstanding_tickets(&self) -> usize {
        self.tickets.outstanding()
    }

    fn fresh_xid(&mut self) -> Xid {
        let x = Xid(self.next_xid);
        self.next_xid = self.next_xid.wrapping_add(1).max(1);
        x
    }

    fn error_to(&mut self, to: Peer, xid: Xid, module: ModuleId, code: ErrorCode, text: String) -> Outbound {
        self.metrics.protocol_errors += 1;
        self.log.push(
            LogRecord::new(LogKind::ProtocolError, format!("to {to}: {} {text}", code.name()))
                .xid(xid)
                .module(module),
        );
        Outbound {
            to,
            message: Message::error(xid, module, code, text),
        }
    }

    /// Reports an undecodable frame back to its sender.
    pub fn on_malformed(&mut self, from: Peer, err: &DecodeError) -> Vec<Outbound> {
        vec![self.error_to(from, Xid(0), ModuleId(0), ErrorCode::MALFORMED, err.to_string())]
    }

    /// Handles one inbound frame.
    pub fn handle(&mut self, from: Peer, msg: Message) -> Vec<Outbound> {
        let mut out = Vec::new();
        let Message {
            xid,
            module_id,
            payload,
            ..
        } = msg;
        match payload {
            Payload::Hello(remote) => self.on_hello(from, xid, &remote, &mut out),
            Payload::Error(body) => {
                self.metrics.protocol_errors += 1;
                self.log.push(
                    LogRecord::new(
                        LogKind::ProtocolError,
                        format!("from {from}: {} {}", body.code.name(), body.text),
                    )
                    .xid(xid)
                    .module(module_id),
                );
            }
            _ if !self.negotiated(from) => {
                out.push(self.error_to(
                    from,
                    xid,
                    module_id,
                    ErrorCode::UNEXPECTED_MESSAGE,
                    "hello not completed".into(),
                ));
            }
            Payload::ModuleAnnouncement { name } => match from {
                Peer::Backend(_) => self.on_announcement(from, xid, name, &mut out),
                Peer::Shim => out.push(self.error_to(
                    from,
                    xid,
                    module_id,
                    ErrorCode::UNEXPECTED_MESSAGE,
                    "the shim cannot announce modules".into(),
                )),
            },
            Payload::Fence => self.on_fence(from, xid, module_id, &mut out),
            Payload::Sbi(SbiMessage::Event(ev)) if from == Peer::Shim => match ev {
                Event::StatsReply { .. } => self.correlate_reply(xid, ev, &mut out),
                ev => self.dispatch_event(ev, &mut out),
            },
            Payload::Sbi(SbiMessage::Command(cmd)) if from != Peer::Shim => {
                self.on_command(from, xid, module_id, cmd, &mut out)
            }
            other => {
                out.push(self.error_to(
                    from,
                    xid,
                    module_id,
                    ErrorCode::UNEXPECTED_MESSAGE,
                    format!("unexpected {:?} frame", other.msg_type()),
                ));
            }
        }
        out
    }

    fn negotiated(&self, peer: Peer) -> bool {
        self.peers
            .get(&peer)
            .and_then(|p| p.negotiated.as_ref())
            .is_some_and(|v| !v.is_empty())
    }

    fn on_hello(&mut self, from: Peer, xid: Xid, remote: &HelloBody, out: &mut Vec<Outbound>) {
        let agreed = negotiate_hello(&self.config.hello, remote);
        let list: Vec<String> = agreed.iter().map(|o| o.to_string()).collect();
        self.log.push(
            LogRecord::new(LogKind::Hello, format!("{from} agreed [{}]", list.join(",")))
                .xid(xid),
        );
        out.push(Outbound {
            to: from,
            message: Message::hello(xid, self.config.hello.clone()),
        });
        if agreed.is_empty() {
            out.push(self.error_to(
                from,
                xid,
                ModuleId(0),
                ErrorCode::INCOMPATIBLE_PROTOCOL,
                "no common SBI protocol".into(),
            ));
        }
        self.peers.entry(from).or_default().negotiated = Some(agreed);
    }

    fn on_announcement(&mut self, from: Peer, xid: Xid, name: String, out: &mut Vec<Outbound>) {
        if self.peers.get(&from).is_some_and(|p| p.aborted) {
            out.push(self.error_to(
                from,
                xid,
                ModuleId(0),
                ErrorCode::DUPLICATE_MODULE,
                format!("registration of {from} was aborted"),
            ));
            return;
        }
        if self.registry.by_name.contains_key(&name) {
            out.push(self.error_to(
                from,
                xid,
                ModuleId(0),
                ErrorCode::DUPLICATE_MODULE,
                name.clone(),
            ));
            self.peers.entry(from).or_default().aborted = true;
            let retired: Vec<ModuleId> = self
                .registry
                .modules
                .iter()
                .filter(|(_, m)| m.peer == from && m.active)
                .map(|(id, _)| *id)
                .collect();
            for id in retired {
                let m = self.registry.modules.get_mut(&id).unwrap();
                m.active = false;
                self.log.push(
                    LogRecord::new(LogKind::RegisterError, format!("{} retired", m.name))
                        .module(id),
                );
            }
            self.log.push(LogRecord::new(
                LogKind::RegisterError,
                format!("{from} announced duplicate {name}; registration aborted"),
            ));
            return;
        }
        let id = ModuleId(self.registry.next_id);
        self.registry.next_id += 1;
        if self.spec.module(&name).is_none() {
            self.log.push(
                LogRecord::new(
                    LogKind::Warning,
                    format!("module {name} is not part of the composition"),
                )
                .module(id),
            );
        }
        self.log.push(
            LogRecord::new(LogKind::Register, format!("{name} on {from}"))
                .xid(xid)
                .module(id),
        );
        self.registry.by_name.insert(name.clone(), id);
        self.registry.modules.insert(
            id,
            Registered {
                name: name.clone(),
                peer: from,
                active: true,
            },
        );
        out.push(Outbound {
            to: from,
            message: Message::new(
                xid,
                id,
                DatapathId(0),
                Payload::ModuleAcknowledge { name },
            ),
        });
    }

    /// Starts composition for a network event.
    fn dispatch_event(&mut self, ev: Event, out: &mut Vec<Outbound>) {
        let xid = self.fresh_xid();
        let seq = self.next_seq;
        self.next_seq += 1;
        let datapath = ev.datapath();
        self.metrics.events_processed += 1;
        self.log.push(
            LogRecord::new(
                LogKind::EventIn,
                format!("seq={seq} {}", describe_event(&ev)),
            )
            .xid(xid)
            .datapath(datapath),
        );
        self.scheduler.admit(datapath, seq, xid);
        let mut exec = Exec::build(&self.spec.root, &self.spec, &self.registry);
        let mut invoked = BTreeSet::new();
        let done = {
            let mut cx = Cx {
                xid,
                datapath,
                spec: &self.spec,
                registry: &self.registry,
                out,
                log: &mut self.log,
                metrics: &mut self.metrics,
                invoked: &mut invoked,
            };
            exec.start(ev.clone(), &mut cx)
        };
        let pending = PendingEvent {
            xid,
            arrival_seq: seq,
            datapath,
            origin: ev,
            invoked,
            fenced: BTreeSet::new(),
            exec,
        };
        match done {
            Some(output) => self.finish(pending, output, out),
            None => {
                self.pending.insert(xid, pending);
            }
        }
    }

    fn on_command(
        &mut self,
        from: Peer,
        xid: Xid,
        module: ModuleId,
        cmd: Command,
        out: &mut Vec<Outbound>,
    ) {
        if !self.registry.owned_by(module, from) {
            out.push(self.error_to(
                from,
                xid,
                module,
                ErrorCode::UNKNOWN_MODULE,
                format!("module {module} is not registered on {from}"),
            ));
            return;
        }
        if let Command::StatsRequest { datapath, pattern } = cmd {
            self.open_ticket(module, xid, datapath, pattern, out);
            return;
        }
        let Some(ev) = self.pending.get_mut(&xid) else {
            out.push(self.error_to(
                from,
                xid,
                module,
                ErrorCode::UNKNOWN_XID,
                format!("command for unknown xid {xid}"),
            ));
            return;
        };
        let datapath = ev.datapath;
        if ev.exec.on_command(module, &cmd) {
            self.log.push(
                LogRecord::new(LogKind::CommandIn, describe_command(&cmd))
                    .xid(xid)
                    .module(module)
                    .datapath(datapath),
            );
        } else {
            out.push(self.error_to(
                from,
                xid,
                module,
                ErrorCode::UNEXPECTED_MESSAGE,
                format!("module {module} is not processing xid {xid}"),
            ));
        }
    }

    /// Barrier bookkeeping for one fence.
    fn on_fence(&mut self, from: Peer, xid: Xid, module: ModuleId, out: &mut Vec<Outbound>) {
        if !self.registry.owned_by(module, from) {
            out.push(self.error_to(
                from,
                xid,
                module,
                ErrorCode::UNKNOWN_MODULE,
                format!("module {module} is not registered on {from}"),
            ));
            return;
        }
        if self.finished.get(&xid).is_some_and(|f| f.contains(&module))
            || self.pending.get(&xid).is_some_and(|p| p.fenced.contains(&module))
        {
            out.push(self.error_to(
                from,
                xid,
                module,
                ErrorCode::DUPLICATE_FENCE,
                format!("second fence for xid {xid}"),
            ));
            return;
        }
        let Some(mut ev) = self.pending.remove(&xid) else {
            out.push(self.error_to(
                from,
                xid,
                module,
                ErrorCode::UNKNOWN_XID,
                format!("fence for unknown xid {xid}"),
            ));
            return;
        };
        if !ev.invoked.contains(&module) {
            self.pending.insert(xid, ev);
            out.push(self.error_to(
                from,
                xid,
                module,
                ErrorCode::UNEXPECTED_MESSAGE,
                format!("module {module} was not invoked for xid {xid}"),
            ));
            return;
        }
        self.metrics.fences_received += 1;
        ev.fenced.insert(module);
        self.log.push(
            LogRecord::new(
                LogKind::Fence,
                format!("awaiting {}", ev.awaiting().len()),
            )
            .xid(xid)
            .module(module)
            .datapath(ev.datapath),
        );
        let routed = {
            let mut cx = Cx {
                xid,
                datapath: ev.datapath,
                spec: &self.spec,
                registry: &self.registry,
                out,
                log: &mut self.log,
                metrics: &mut self.metrics,
                invoked: &mut ev.invoked,
            };
            ev.exec.on_fence(module, &mut cx)
        };
        match routed {
            Routed::Done(output) => self.finish(ev, output, out),
            Routed::Pending | Routed::NotHere => {
                self.pending.insert(xid, ev);
            }
        }
    }

    fn finish(&mut self, ev: PendingEvent, output: Vec<OwnedCommand>, out: &mut Vec<Outbound>) {
        debug_assert!(ev.awaiting().is_empty());
        if ev.invoked.is_empty() {
            self.log.push(
                LogRecord::new(
                    LogKind::Noop,
                    format!("no module handles {}", ev.origin.kind()),
                )
                .xid(ev.xid)
                .datapath(ev.datapath),
            );
        }
        self.log.push(
            LogRecord::new(LogKind::Compose, format!("{} commands", output.len()))
                .xid(ev.xid)
                .datapath(ev.datapath),
        );
        let decision = self.scheduler.complete(ev.datapath, ev.xid, output);
        if decision.held {
            self.metrics.outputs_buffered_for_ordering += 1;
            self.log.push(
                LogRecord::new(LogKind::Buffered, format!("seq={} held", ev.arrival_seq))
                    .xid(ev.xid)
                    .datapath(ev.datapath),
            );
        }
        if decision.waiting > self.config.high_water_mark {
            self.log.push(
                LogRecord::new(
                    LogKind::Warning,
                    format!(
                        "{} events waiting for release on datapath {}",
                        decision.waiting, ev.datapath
                    ),
                )
                .datapath(ev.datapath),
            );
        }
        for r in decision.released {
            self.log.push(
                LogRecord::new(
                    LogKind::Release,
                    format!("seq={} commands={}", r.arrival_seq, r.commands.len()),
                )
                .xid(r.xid)
                .datapath(r.datapath),
            );
            for c in r.commands {
                out.push(Outbound {
                    to: Peer::Shim,
                    message: Message::sbi(r.xid, c.owner, c.command),
                });
            }
        }
        self.finished.insert(ev.xid, ev.fenced);
    }

    fn open_ticket(
        &mut self,
        module: ModuleId,
        module_xid: Xid,
        datapath: DatapathId,
        pattern: Match,
        out: &mut Vec<Outbound>,
    ) {
        let core_xid = self.fresh_xid();
        self.tickets.open(core_xid, module, module_xid);
        self.log.push(
            LogRecord::new(
                LogKind::TicketOpen,
                format!("module xid {module_xid} -> core xid {core_xid} match={pattern}"),
            )
            .xid(core_xid)
            .module(module)
            .datapath(datapath),
        );
        out.push(Outbound {
            to: Peer::Shim,
            message: Message::sbi(core_xid, module, Command::StatsRequest { datapath, pattern }),
        });
    }

    /// Issues a stats request on behalf of the operator (module id 0). The
    /// reply is logged and not forwarded.
    pub fn request_stats(&mut self, datapath: DatapathId, pattern: Match) -> Vec<Outbound> {
        let mut out = Vec::new();
        self.open_ticket(ModuleId(0), Xid(0), datapath, pattern, &mut out);
        out
    }

    fn correlate_reply(&mut self, core_xid: Xid, reply: Event, out: &mut Vec<Outbound>) {
        let datapath = reply.datapath();
        let Some(ticket) = self.tickets.correlate(core_xid) else {
            self.log.push(
                LogRecord::new(
                    LogKind::TicketOrphan,
                    format!("stats reply with no ticket: {}", describe_event(&reply)),
                )
                .xid(core_xid)
                .datapath(datapath),
            );
            return;
        };
        self.log.push(
            LogRecord::new(
                LogKind::TicketReply,
                format!(
                    "core xid {core_xid} -> module xid {}: {}",
                    ticket.module_xid,
                    describe_event(&reply)
                ),
            )
            .xid(ticket.module_xid)
            .module(ticket.module_id)
            .datapath(datapath),
        );
        if ticket.module_id == ModuleId(0) {
            return;
        }
        match self.registry.modules.get(&ticket.module_id) {
            Some(m) if m.active => out.push(Outbound {
                to: m.peer,
                message: Message::sbi(ticket.module_xid, ticket.module_id, reply),
            }),
            _ => self.log.push(
                LogRecord::new(
                    LogKind::Warning,
                    format!("module {} gone; reply dropped", ticket.module_id),
                )
                .module(ticket.module_id),
            ),
        }
    }

    /// True if `kind` events reach at least one module of the spec.
    pub fn handles(&self, kind: EventKind) -> bool {
        self.spec.modules.iter().any(|m| m.accepts(kind))
    }
}
