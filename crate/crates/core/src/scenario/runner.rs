//! Runs a scenario end to end.
//!
//! Every component is sans-IO; the [`Engine`] owns them all and moves
//! encoded frames between them through one global FIFO, so a scenario
//! always produces the same run. Frames cross either an in-memory buffer
//! or a loopback TCP connection per Core link; both feed the receiver's
//! [`FrameBuffer`], so the wire format is exercised byte for byte.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::backend::{build_modules, parse_module_config, Backend, ModuleConfig};
use crate::composition::{CompositionSpec, Core, CoreConfig, Peer, SpecError};
use crate::eventlog::{LogKind, LogRecord};
use crate::protocol::{encode_message, DecodeError, FrameBuffer, Message};
use crate::sim::{Network, PortRef, Shim, Topology};

use super::report::{LogEntry, ModuleEntry, RunReport, TableEntry};
use super::trace::{parse_trace, Directive, Trace, TraceStep};

/// A file failed to load. `line` is 0 when the error is not tied to one.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct LoadError {
    pub path: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "{}:{}: {}", self.path, self.line, self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl LoadError {
    fn new(path: &str, line: usize, message: impl Into<String>) -> Self {
        LoadError {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("socket transport: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transport {
    #[default]
    InMemory,
    Socket,
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inmem" => Ok(Transport::InMemory),
            "socket" => Ok(Transport::Socket),
            other => Err(format!("unknown transport {other:?} (expected inmem or socket)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: Topology,
    pub spec: CompositionSpec,
    pub modules: Vec<ModuleConfig>,
    pub trace: Trace,
}

impl Scenario {
    /// Parses the four inputs. The names are only used in error messages.
    pub fn from_texts(
        (topology_name, topology): (&str, &str),
        (spec_name, spec): (&str, &str),
        (modules_name, modules): (&str, &str),
        (trace_name, trace): (&str, &str),
    ) -> Result<Scenario, LoadError> {
        let topology = Topology::parse(topology)
            .map_err(|e| LoadError::new(topology_name, e.line, e.message))?;
        let spec = CompositionSpec::parse(spec).map_err(|e| {
            let line = match &e {
                SpecError::Syntax { line, .. } | SpecError::MissingPolicy { line, .. } => *line,
                _ => 0,
            };
            LoadError::new(spec_name, line, e.to_string())
        })?;
        let modules = parse_module_config(modules)
            .map_err(|e| LoadError::new(modules_name, e.line, e.message))?;
        let trace = parse_trace(trace).map_err(|e| LoadError::new(trace_name, e.line, e.message))?;
        for step in &trace {
            let (datapath, port) = match &step.directive {
                Directive::Inject { datapath, port, .. } => (*datapath, Some(*port)),
                Directive::Stats { datapath, .. } => (*datapath, None),
                Directive::Tick => continue,
            };
            let Some(n) = topology.ports(datapath) else {
                return Err(LoadError::new(
                    trace_name,
                    step.line,
                    format!("unknown datapath {datapath}"),
                ));
            };
            if let Some(p) = port.filter(|p| *p == 0 || *p > n) {
                return Err(LoadError::new(
                    trace_name,
                    step.line,
                    format!("switch {datapath} has no port {p}"),
                ));
            }
        }
        Ok(Scenario {
            topology,
            spec,
            modules,
            trace,
        })
    }

    pub fn load(topology: &Path, spec: &Path, modules: &Path, trace: &Path) -> Result<Scenario, LoadError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p)
                .map_err(|e| LoadError::new(&p.display().to_string(), 0, e.to_string()))
        };
        let (t, s, m, r) = (read(topology)?, read(spec)?, read(modules)?, read(trace)?);
        Scenario::from_texts(
            (&topology.display().to_string(), &t),
            (&spec.display().to_string(), &s),
            (&modules.display().to_string(), &m),
            (&trace.display().to_string(), &r),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Node {
    Core,
    Shim,
    Backend(usize),
}

impl Node {
    fn of(peer: Peer) -> Node {
        match peer {
            Peer::Shim => Node::Shim,
            Peer::Backend(i) => Node::Backend(i as usize),
        }
    }

    fn peer(self) -> Peer {
        match self {
            Node::Shim => Peer::Shim,
            Node::Backend(i) => Peer::Backend(i as u32),
            Node::Core => unreachable!("the core is not its own peer"),
        }
    }
}

/// The byte carriers between the Core and each peer.
struct Wire {
    buffers: BTreeMap<(Node, Node), FrameBuffer>,
    /// (core end, peer end) per peer.
    sockets: BTreeMap<Node, (TcpStream, TcpStream)>,
}

impl Wire {
    fn new(transport: Transport, peers: &[Node]) -> io::Result<Wire> {
        let mut sockets = BTreeMap::new();
        if transport == Transport::Socket {
            let listener = TcpListener::bind(("127.0.0.1", 0))?;
            let addr = listener.local_addr()?;
            for peer in peers {
                let peer_end = TcpStream::connect(addr)?;
                let (core_end, _) = listener.accept()?;
                core_end.set_nodelay(true)?;
                peer_end.set_nodelay(true)?;
                sockets.insert(*peer, (core_end, peer_end));
            }
        }
        Ok(Wire {
            buffers: BTreeMap::new(),
            sockets,
        })
    }

    fn carry(&mut self, from: Node, to: Node, bytes: &[u8]) -> io::Result<Vec<Result<Message, DecodeError>>> {
        let peer = if from == Node::Core { to } else { from };
        let buffer = self.buffers.entry((from, to)).or_default();
        match self.sockets.get_mut(&peer) {
            Some((core_end, peer_end)) => {
                let (w, r) = if from == Node::Core {
                    (core_end, peer_end)
                } else {
                    (peer_end, core_end)
                };
                let mut chunk = [0u8; 4096];
                for piece in bytes.chunks(chunk.len()) {
                    w.write_all(piece)?;
                    r.read_exact(&mut chunk[..piece.len()])?;
                    buffer.extend(&chunk[..piece.len()]);
                }
            }
            None => buffer.extend(bytes),
        }
        let mut out = Vec::new();
        loop {
            match buffer.next_message() {
                Ok(Some(m)) => out.push(Ok(m)),
                Ok(None) => break,
                Err(e) => {
                    out.push(Err(e));
                    break;
                }
            }
        }
        Ok(out)
    }
}

/// The running system: Core, backends and the shim-fronted network.
pub struct Engine {
    core: Core,
    backends: Vec<Backend>,
    shim: Shim,
    wire: Wire,
    queue: VecDeque<(Node, Node, Vec<u8>)>,
    log: Vec<LogEntry>,
}

impl Engine {
    pub fn new(scenario: &Scenario, transport: Transport) -> Result<Engine, RunError> {
        let backends = build_modules(&scenario.modules);
        let mut peers = vec![Node::Shim];
        peers.extend((0..backends.len()).map(Node::Backend));
        Ok(Engine {
            core: Core::new(scenario.spec.clone(), CoreConfig::default()),
            backends,
            shim: Shim::new(Network::new(scenario.topology.clone())),
            wire: Wire::new(transport, &peers)?,
            queue: VecDeque::new(),
            log: Vec::new(),
        })
    }

    pub fn core(&self) -> &Core {
        &self.core
    }

    pub fn network(&self) -> &Network {
        self.shim.network()
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    fn record(&mut self, r: LogRecord) {
        let seq = self.log.len() as u64 + 1;
        self.log.push(LogEntry {
            seq,
            time_ms: self.shim.network().now_ms(),
            kind: r.kind,
            xid: r.xid,
            module_id: r.module_id,
            datapath: r.datapath,
            detail: r.detail,
        });
    }

    fn collect_logs(&mut self) {
        let mut records = self.core.drain_log();
        for b in &mut self.backends {
            records.extend(b.drain_log());
        }
        records.extend(self.shim.drain_log());
        for r in records {
            self.record(r);
        }
    }

    fn send(&mut self, from: Node, to: Node, msg: Message) {
        match encode_message(&msg) {
            Ok(bytes) => self.queue.push_back((from, to, bytes)),
            Err(e) => self.record(LogRecord::new(
                LogKind::Warning,
                format!("{from:?} could not encode a frame for {to:?}: {e}"),
            )),
        }
    }

    fn send_all(&mut self, from: Node, to: Node, msgs: Vec<Message>) {
        for m in msgs {
            self.send(from, to, m);
        }
    }

    /// Delivers queued frames until the system is quiet.
    fn pump(&mut self) -> Result<(), RunError> {
        self.collect_logs();
        while let Some((from, to, bytes)) = self.queue.pop_front() {
            for decoded in self.wire.carry(from, to, &bytes)? {
                match decoded {
                    Ok(msg) => self.deliver(from, to, msg),
                    Err(e) => self.malformed(from, to, &e),
                }
                self.collect_logs();
            }
        }
        Ok(())
    }

    fn deliver(&mut self, from: Node, to: Node, msg: Message) {
        match to {
            Node::Core => {
                for o in self.core.handle(from.peer(), msg) {
                    self.send(Node::Core, Node::of(o.to), o.message);
                }
            }
            Node::Shim => {
                let out = self.shim.handle(msg);
                self.send_all(Node::Shim, Node::Core, out);
            }
            Node::Backend(i) => {
                let out = self.backends[i].handle(msg);
                self.send_all(Node::Backend(i), Node::Core, out);
            }
        }
    }

    fn malformed(&mut self, from: Node, to: Node, err: &DecodeError) {
        match to {
            Node::Core => {
                for o in self.core.on_malformed(from.peer(), err) {
                    self.send(Node::Core, Node::of(o.to), o.message);
                }
            }
            Node::Shim => {
                let out = self.shim.on_malformed(err);
                self.send_all(Node::Shim, Node::Core, out);
            }
            Node::Backend(i) => {
                let out = self.backends[i].on_malformed(err);
                self.send_all(Node::Backend(i), Node::Core, out);
            }
        }
    }

    /// Opens every session and lets registration settle.
    pub fn start(&mut self) -> Result<(), RunError> {
        let hello = self.shim.start();
        self.send_all(Node::Shim, Node::Core, hello);
        for i in 0..self.backends.len() {
            let hello = self.backends[i].start();
            self.send_all(Node::Backend(i), Node::Core, hello);
        }
        self.pump()
    }

    /// Injects raw bytes toward the Core as if `backend` had sent them.
    pub fn inject_raw_from_backend(&mut self, backend: usize, bytes: Vec<u8>) -> Result<(), RunError> {
        self.queue.push_back((Node::Backend(backend), Node::Core, bytes));
        self.pump()
    }

    pub fn step(&mut self, step: &TraceStep) -> Result<(), RunError> {
        if let Directive::Tick = step.directive {
            self.record(
                LogRecord::new(LogKind::Tick, format!("advance to {} ms", step.time_ms)),
            );
        }
        match self.shim.advance_time(step.time_ms) {
            Ok(msgs) => self.send_all(Node::Shim, Node::Core, msgs),
            Err(e) => self.record(LogRecord::new(LogKind::Warning, e.to_string())),
        }
        self.pump()?;
        match &step.directive {
            Directive::Tick => {}
            Directive::Inject {
                datapath,
                port,
                headers,
            } => {
                let at = PortRef {
                    datapath: *datapath,
                    port: *port,
                };
                match self.shim.inject(at, *headers) {
                    Ok(msgs) => self.send_all(Node::Shim, Node::Core, msgs),
                    Err(e) => self.record(LogRecord::new(LogKind::Warning, e.to_string())),
                }
            }
            Directive::Stats { datapath, pattern } => {
                for o in self.core.request_stats(*datapath, *pattern) {
                    self.send(Node::Core, Node::of(o.to), o.message);
                }
            }
        }
        self.pump()
    }

    /// Closes the run and builds the report.
    pub fn finish(mut self) -> RunReport {
        let unfinished: Vec<String> = self
            .core
            .pending()
            .map(|p| {
                let waiting: Vec<String> = p.awaiting().iter().map(|m| m.to_string()).collect();
                format!("xid {} still awaits modules [{}]", p.xid, waiting.join(","))
            })
            .collect();
        for w in unfinished {
            self.record(LogRecord::new(LogKind::Warning, w));
        }
        let tickets = self.core.outstanding_tickets();
        if tickets > 0 {
            self.record(LogRecord::new(
                LogKind::Warning,
                format!("{tickets} stats requests never answered"),
            ));
        }
        let tables = self
            .shim
            .network()
            .tables()
            .iter()
            .map(|(dp, t)| {
                let entries = t
                    .entries()
                    .iter()
                    .map(|e| TableEntry {
                        rule: e.rule.clone(),
                        packet_count: e.packet_count,
                        install_ms: e.install_ms,
                        last_hit_ms: e.last_hit_ms,
                    })
                    .collect();
                (*dp, entries)
            })
            .collect();
        RunReport {
            metrics: self.core.metrics().clone(),
            modules: self
                .core
                .modules()
                .into_iter()
                .map(|(id, name, active)| ModuleEntry { id, name, active })
                .collect(),
            log: self.log,
            tables,
        }
    }
}

pub fn run_scenario(scenario: &Scenario, transport: Transport) -> Result<RunReport, RunError> {
    let mut engine = Engine::new(scenario, transport)?;
    engine.start()?;
    for step in &scenario.trace {
        engine.step(step)?;
    }
    Ok(engine.finish())
}
