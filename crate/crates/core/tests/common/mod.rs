//! Shared helpers for the integration and acceptance tests: random message
//! generators, a small enumerable header space with brute-force oracles, and
//! a rig that drives a Core and its backends over scheduled channels.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::Rng;

use netcompose::backend::{AppModule, Backend, BudgetExceeded, StepBudget};
use netcompose::composition::{CompositionSpec, Core, CoreConfig, Peer};
use netcompose::eventlog::{LogKind, LogRecord};
use netcompose::protocol::{
    decode_message, encode_message, ErrorCode, HelloBody, Message, Payload, ProtocolOffer,
};
use netcompose::sbi::{
    Action, Command, DatapathId, Event, FieldValue, FlowRule, FlowStats, Ipv4Prefix, MacAddr,
    Match, ModuleId, PacketHeaders, RemovalReason, Xid,
};

// ---------------------------------------------------------------------------
// Discretized header space: 2*2*2*4*8*2*2*4 = 4096 headers.

pub const IN_PORTS: [u32; 2] = [1, 2];
pub const ETH_SRCS: [u64; 2] = [0x0a, 0x0b];
pub const ETH_TYPES: [u16; 2] = [0x0800, 0x0806];
pub const IP_SRCS: [[u8; 4]; 4] = [[172, 16, 0, 10], [172, 16, 0, 11], [172, 16, 1, 5], [192, 168, 9, 1]];
pub const IP_DSTS: [[u8; 4]; 8] = [
    [10, 0, 0, 0],
    [10, 0, 0, 1],
    [10, 0, 0, 2],
    [10, 0, 0, 3],
    [10, 0, 1, 0],
    [10, 0, 1, 1],
    [192, 168, 0, 0],
    [192, 168, 0, 1],
];
pub const IP_PROTOS: [u8; 2] = [6, 17];
pub const TP_SRCS: [u16; 2] = [1000, 2000];
pub const TP_DSTS: [u16; 4] = [22, 53, 80, 443];
pub const PREFIX_LENS: [u8; 8] = [0, 1, 8, 16, 24, 30, 31, 32];

pub fn header_space() -> Vec<PacketHeaders> {
    let mut out = Vec::with_capacity(4096);
    for &in_port in &IN_PORTS {
        for &eth_src in &ETH_SRCS {
            for &eth_type in &ETH_TYPES {
                for ip_src in IP_SRCS {
                    for ip_dst in IP_DSTS {
                        for &ip_proto in &IP_PROTOS {
                            for &tp_src in &TP_SRCS {
                                for &tp_dst in &TP_DSTS {
                                    out.push(PacketHeaders {
                                        in_port,
                                        eth_src: MacAddr::from_u64(eth_src),
                                        eth_dst: MacAddr::from_u64(0xff),
                                        eth_type,
                                        ip_src: Ipv4Addr::from(ip_src),
                                        ip_dst: Ipv4Addr::from(ip_dst),
                                        ip_proto,
                                        tp_src,
                                        tp_dst,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn maybe<T, R: Rng>(rng: &mut R, p: f64, f: impl FnOnce(&mut R) -> T) -> Option<T> {
    if rng.gen_bool(p) {
        Some(f(rng))
    } else {
        None
    }
}

fn pick<T: Copy, R: Rng>(rng: &mut R, xs: &[T]) -> T {
    *xs.choose(rng).unwrap()
}

fn prefix_from<R: Rng>(rng: &mut R, addrs: &[[u8; 4]]) -> Ipv4Prefix {
    Ipv4Prefix::new(Ipv4Addr::from(pick(rng, addrs)), pick(rng, &PREFIX_LENS)).unwrap()
}

/// A match whose constraints all come from the discrete space, so overlap
/// of two such matches always has a witness inside it.
pub fn random_space_match<R: Rng>(rng: &mut R) -> Match {
    let p = 0.35;
    Match {
        in_port: maybe(rng, p, |r| pick(r, &IN_PORTS)),
        eth_src: maybe(rng, p, |r| MacAddr::from_u64(pick(r, &ETH_SRCS))),
        eth_dst: None,
        eth_type: maybe(rng, p, |r| pick(r, &ETH_TYPES)),
        ip_src: maybe(rng, 0.5, |r| prefix_from(r, &IP_SRCS)),
        ip_dst: maybe(rng, 0.6, |r| prefix_from(r, &IP_DSTS)),
        ip_proto: maybe(rng, p, |r| pick(r, &IP_PROTOS)),
        tp_src: maybe(rng, p, |r| pick(r, &TP_SRCS)),
        tp_dst: maybe(rng, p, |r| pick(r, &TP_DSTS)),
    }
}

fn prefix_holds(p: &Option<Ipv4Prefix>, a: Ipv4Addr) -> bool {
    match p {
        None => true,
        Some(p) => {
            let len = p.prefix_len() as u32;
            let mask = if len == 0 { 0 } else { u32::MAX << (32 - len) };
            u32::from(a) & mask == u32::from(p.addr()) & mask
        }
    }
}

fn exact_holds<T: PartialEq>(c: &Option<T>, v: &T) -> bool {
    c.as_ref().is_none_or(|c| c == v)
}

/// Reference coverage test written directly from the field semantics.
pub fn oracle_covers(m: &Match, h: &PacketHeaders) -> bool {
    exact_holds(&m.in_port, &h.in_port)
        && exact_holds(&m.eth_src, &h.eth_src)
        && exact_holds(&m.eth_dst, &h.eth_dst)
        && exact_holds(&m.eth_type, &h.eth_type)
        && prefix_holds(&m.ip_src, h.ip_src)
        && prefix_holds(&m.ip_dst, h.ip_dst)
        && exact_holds(&m.ip_proto, &h.ip_proto)
        && exact_holds(&m.tp_src, &h.tp_src)
        && exact_holds(&m.tp_dst, &h.tp_dst)
}

// ---------------------------------------------------------------------------
// Random valid messages.

fn random_headers<R: Rng>(rng: &mut R) -> PacketHeaders {
    PacketHeaders {
        in_port: rng.gen(),
        eth_src: MacAddr::from_u64(rng.gen::<u64>() & 0xffff_ffff_ffff),
        eth_dst: MacAddr::from_u64(rng.gen::<u64>() & 0xffff_ffff_ffff),
        eth_type: rng.gen(),
        ip_src: Ipv4Addr::from(rng.gen::<u32>()),
        ip_dst: Ipv4Addr::from(rng.gen::<u32>()),
        ip_proto: rng.gen(),
        tp_src: rng.gen(),
        tp_dst: rng.gen(),
    }
}

fn random_field_value<R: Rng>(rng: &mut R) -> FieldValue {
    match rng.gen_range(0..9) {
        0 => FieldValue::InPort(rng.gen()),
        1 => FieldValue::EthSrc(MacAddr::from_u64(rng.gen::<u64>() & 0xffff_ffff_ffff)),
        2 => FieldValue::EthDst(MacAddr::from_u64(rng.gen::<u64>() & 0xffff_ffff_ffff)),
        3 => FieldValue::EthType(rng.gen()),
        4 => FieldValue::IpSrc(Ipv4Addr::from(rng.gen::<u32>())),
        5 => FieldValue::IpDst(Ipv4Addr::from(rng.gen::<u32>())),
        6 => FieldValue::IpProto(rng.gen()),
        7 => FieldValue::TpSrc(rng.gen()),
        _ => FieldValue::TpDst(rng.gen()),
    }
}

fn random_prefix<R: Rng>(rng: &mut R) -> Ipv4Prefix {
    Ipv4Prefix::new(Ipv4Addr::from(rng.gen::<u32>()), rng.gen_range(0..=32)).unwrap()
}

pub fn random_match<R: Rng>(rng: &mut R) -> Match {
    Match {
        in_port: maybe(rng, 0.3, |r| r.gen()),
        eth_src: maybe(rng, 0.3, |r| MacAddr::from_u64(r.gen::<u64>() & 0xffff_ffff_ffff)),
        eth_dst: maybe(rng, 0.3, |r| MacAddr::from_u64(r.gen::<u64>() & 0xffff_ffff_ffff)),
        eth_type: maybe(rng, 0.3, |r| r.gen()),
        ip_src: maybe(rng, 0.3, random_prefix),
        ip_dst: maybe(rng, 0.3, random_prefix),
        ip_proto: maybe(rng, 0.3, |r| r.gen()),
        tp_src: maybe(rng, 0.3, |r| r.gen()),
        tp_dst: maybe(rng, 0.3, |r| r.gen()),
    }
}

pub fn random_actions<R: Rng>(rng: &mut R) -> Vec<Action> {
    if rng.gen_bool(0.15) {
        return vec![Action::Drop];
    }
    (0..rng.gen_range(0..5))
        .map(|_| match rng.gen_range(0..4) {
            0 => Action::Output(rng.gen()),
            1 => Action::SetField(random_field_value(rng)),
            2 => Action::Flood,
            _ => Action::ToController,
        })
        .collect()
}

fn random_rule<R: Rng>(rng: &mut R) -> FlowRule {
    FlowRule {
        priority: rng.gen(),
        pattern: random_match(rng),
        actions: random_actions(rng),
        idle_timeout: rng.gen(),
        hard_timeout: rng.gen(),
    }
}

fn random_text<R: Rng>(rng: &mut R, min: usize) -> String {
    let alphabet: Vec<char> = "abcXYZ019_-. é€\u{1F600}".chars().collect();
    let n = rng.gen_range(min..24);
    (0..n).map(|_| pick(rng, &alphabet)).collect()
}

pub fn random_message<R: Rng>(rng: &mut R) -> Message {
    let xid = Xid(rng.gen());
    let module = ModuleId(rng.gen());
    let dp = DatapathId(rng.gen_range(1..=u64::MAX));
    match rng.gen_range(0..7) {
        0 => {
            let mut offers: Vec<ProtocolOffer> = (0..rng.gen_range(0..6))
                .map(|_| ProtocolOffer::new(rng.gen(), rng.gen()))
                .collect();
            offers.sort();
            offers.dedup();
            offers.shuffle(rng);
            let mut m = Message::hello(xid, HelloBody::new(offers));
            m.module_id = module;
            m.datapath_id = DatapathId(rng.gen());
            m
        }
        1 => Message::error(xid, module, ErrorCode(rng.gen()), random_text(rng, 0)),
        2 => Message::new(
            xid,
            module,
            DatapathId(rng.gen()),
            Payload::ModuleAnnouncement {
                name: random_text(rng, 1),
            },
        ),
        3 => Message::new(
            xid,
            module,
            DatapathId(rng.gen()),
            Payload::ModuleAcknowledge {
                name: random_text(rng, 1),
            },
        ),
        4 => Message::fence(xid, module),
        5 => {
            let ev = match rng.gen_range(0..4) {
                0 => Event::PacketIn {
                    datapath: dp,
                    headers: random_headers(rng),
                },
                1 => Event::PortStatus {
                    datapath: dp,
                    port: rng.gen(),
                    up: rng.gen(),
                },
                2 => Event::FlowRemoved {
                    datapath: dp,
                    rule: random_rule(rng),
                    reason: pick(
                        rng,
                        &[RemovalReason::IdleTimeout, RemovalReason::HardTimeout, RemovalReason::Delete],
                    ),
                },
                _ => Event::StatsReply {
                    datapath: dp,
                    entries: (0..rng.gen_range(0..4))
                        .map(|_| FlowStats {
                            priority: rng.gen(),
                            pattern: random_match(rng),
                            actions: random_actions(rng),
                            packet_count: rng.gen(),
                        })
                        .collect(),
                },
            };
            Message::sbi(xid, module, ev)
        }
        _ => {
            let cmd = match rng.gen_range(0..4) {
                0 => Command::FlowModAdd {
                    datapath: dp,
                    rule: random_rule(rng),
                },
                1 => Command::FlowModDelete {
                    datapath: dp,
                    pattern: random_match(rng),
                },
                2 => Command::PacketOut {
                    datapath: dp,
                    headers: random_headers(rng),
                    actions: random_actions(rng),
                },
                _ => Command::StatsRequest {
                    datapath: dp,
                    pattern: random_match(rng),
                },
            };
            Message::sbi(xid, module, cmd)
        }
    }
}

// ---------------------------------------------------------------------------
// Scripted modules and the channel rig.

type Script = Box<dyn FnMut(&Event) -> Vec<Command> + Send>;

/// A module whose reaction to each event is a closure.
pub struct Scripted {
    name: String,
    script: Script,
}

impl Scripted {
    pub fn new(name: &str, script: impl FnMut(&Event) -> Vec<Command> + Send + 'static) -> Self {
        Scripted {
            name: name.to_string(),
            script: Box::new(script),
        }
    }

    pub fn boxed(name: &str, script: impl FnMut(&Event) -> Vec<Command> + Send + 'static) -> Box<dyn AppModule> {
        Box::new(Self::new(name, script))
    }
}

impl AppModule for Scripted {
    fn name(&self) -> &str {
        &self.name
    }

    fn handle_event(
        &mut self,
        event: &Event,
        budget: &mut StepBudget,
    ) -> Result<Vec<Command>, BudgetExceeded> {
        budget.charge(1)?;
        Ok((self.script)(event))
    }
}

/// An entry of the Core's log with its position.
#[derive(Debug, Clone)]
pub struct Logged {
    pub seq: usize,
    pub record: LogRecord,
}

/// Channel index 0 is the shim; channel `i + 1` is backend `i`.
pub struct Rig {
    pub core: Core,
    pub backends: Vec<Backend>,
    to_core: Vec<VecDeque<Message>>,
    to_backend: Vec<VecDeque<Message>>,
    /// Everything the Core sent to the shim, in order.
    pub to_shim: Vec<Message>,
    pub log: Vec<Logged>,
}

impl Rig {
    /// Connects the shim and every backend and lets registration settle.
    pub fn new(spec: &str, backends: Vec<Backend>) -> Rig {
        let spec = CompositionSpec::parse(spec).expect("spec parses");
        let n = backends.len();
        let mut rig = Rig {
            core: Core::new(spec, CoreConfig::default()),
            backends,
            to_core: (0..=n).map(|_| VecDeque::new()).collect(),
            to_backend: (0..n).map(|_| VecDeque::new()).collect(),
            to_shim: Vec::new(),
            log: Vec::new(),
        };
        rig.to_core[0].push_back(Message::hello(Xid(1), HelloBody::simplified_sbi()));
        for i in 0..n {
            let hello = rig.backends[i].start();
            rig.to_core[i + 1].extend(hello);
        }
        rig.settle_fifo();
        rig.to_shim.clear();
        rig
    }

    fn wire(msg: &Message) -> Message {
        let bytes = encode_message(msg).expect("encodable");
        let (back, used) = decode_message(&bytes).expect("decodable");
        assert_eq!(used, bytes.len());
        back
    }

    fn drain_core_log(&mut self) {
        for record in self.core.drain_log() {
            let seq = self.log.len() + 1;
            self.log.push(Logged { seq, record });
        }
    }

    /// Queues a network event on the shim channel.
    pub fn push_event(&mut self, ev: Event) {
        let xid = Xid(1000 + self.to_core[0].len() as u32);
        self.to_core[0].push_back(Message::sbi(xid, ModuleId::NETWORK, ev));
    }

    /// Queues an arbitrary frame from the shim.
    pub fn push_from_shim(&mut self, msg: Message) {
        self.to_core[0].push_back(msg);
    }

    /// Queues a raw frame from a backend.
    pub fn push_from_backend(&mut self, backend: usize, msg: Message) {
        self.to_core[backend + 1].push_back(msg);
    }

    fn send_core_from(&mut self, channel: usize, msg: Message) {
        let from = if channel == 0 {
            Peer::Shim
        } else {
            Peer::Backend(channel as u32 - 1)
        };
        for o in self.core.handle(from, Self::wire(&msg)) {
            match o.to {
                Peer::Shim => self.to_shim.push(o.message),
                Peer::Backend(b) => self.to_backend[b as usize].push_back(o.message),
            }
        }
        self.drain_core_log();
    }

    fn send_backend_i(&mut self, i: usize, msg: Message) {
        let out = self.backends[i].handle(Self::wire(&msg));
        self.to_core[i + 1].extend(out);
    }

    /// The non-empty channels, as (towards core?, index).
    fn ready(&self) -> Vec<(bool, usize)> {
        let mut v = Vec::new();
        for (i, q) in self.to_core.iter().enumerate() {
            if !q.is_empty() {
                v.push((true, i));
            }
        }
        for (i, q) in self.to_backend.iter().enumerate() {
            if !q.is_empty() {
                v.push((false, i));
            }
        }
        v
    }

    fn step(&mut self, (to_core, i): (bool, usize)) {
        if to_core {
            let m = self.to_core[i].pop_front().unwrap();
            self.send_core_from(i, m);
        } else {
            let m = self.to_backend[i].pop_front().unwrap();
            self.send_backend_i(i, m);
        }
    }

    /// Delivers only frames addressed to the Core; backends stay untouched.
    pub fn pump_core(&mut self) {
        for i in 0..self.to_core.len() {
            while let Some(m) = self.to_core[i].pop_front() {
                self.send_core_from(i, m);
            }
        }
    }

    /// Delivers until quiet, always taking the first ready channel.
    pub fn settle_fifo(&mut self) {
        while let Some(&c) = self.ready().first() {
            self.step(c);
        }
    }

    /// Delivers until quiet, picking a random ready channel each time.
    /// Frames towards the Core keep their order within a channel. A backend
    /// takes any queued event next, as if its modules ran concurrently, but
    /// what it emits for one event stays in order.
    pub fn settle_random<R: Rng>(&mut self, rng: &mut R) {
        loop {
            let ready = self.ready();
            if ready.is_empty() {
                break;
            }
            match *ready.choose(rng).unwrap() {
                (false, i) => {
                    let k = rng.gen_range(0..self.to_backend[i].len());
                    let m = self.to_backend[i].remove(k).unwrap();
                    self.send_backend_i(i, m);
                }
                c => self.step(c),
            }
        }
    }

    /// Error frames the Core sent to backend `i` and that are still queued.
    pub fn queued_for_backend(&self, i: usize) -> Vec<Message> {
        self.to_backend[i].iter().cloned().collect()
    }

    /// Error codes the Core has logged, in order.
    pub fn protocol_errors(&self) -> Vec<String> {
        self.entries(LogKind::ProtocolError)
            .map(|l| l.record.detail.clone())
            .collect()
    }

    pub fn entries(&self, kind: LogKind) -> impl Iterator<Item = &Logged> {
        self.log.iter().filter(move |l| l.record.kind == kind)
    }

    /// Commands released to the shim, grouped by core xid.
    pub fn released_by_xid(&self) -> BTreeMap<Xid, Vec<Command>> {
        let mut out: BTreeMap<Xid, Vec<Command>> = BTreeMap::new();
        for m in &self.to_shim {
            if let Payload::Sbi(netcompose::sbi::SbiMessage::Command(c)) = &m.payload {
                out.entry(m.xid).or_default().push(c.clone());
            }
        }
        out
    }
}

pub fn headers(ip_src: [u8; 4], ip_dst: [u8; 4], tp_src: u16, tp_dst: u16) -> PacketHeaders {
    PacketHeaders {
        in_port: 1,
        eth_src: MacAddr::from_u64(0x0a),
        eth_dst: MacAddr::from_u64(0xff01),
        eth_type: 0x0800,
        ip_src: Ipv4Addr::from(ip_src),
        ip_dst: Ipv4Addr::from(ip_dst),
        ip_proto: 6,
        tp_src,
        tp_dst,
    }
}

pub fn packet_in(dp: u64, h: PacketHeaders) -> Event {
    Event::PacketIn {
        datapath: DatapathId(dp),
        headers: h,
    }
}
