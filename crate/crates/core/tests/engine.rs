mod common;

use common::*;
use netcompose::backend::{Backend, Registration};
use netcompose::composition::{Core, CoreConfig, Peer};
use netcompose::eventlog::LogKind;
use netcompose::protocol::{
    DecodeError, ErrorCode, HelloBody, Message, Payload, ProtocolOffer, SBI_PROTOCOL_ID,
};
use netcompose::sbi::{
    Action, Command, DatapathId, Event, FieldValue, FlowRule, FlowStats, Ipv4Prefix, Match,
    ModuleId, Xid,
};

fn forward(port: u32) -> impl FnMut(&Event) -> Vec<Command> + Send + 'static {
    move |ev| {
        let Event::PacketIn { datapath, headers } = ev else {
            return vec![];
        };
        vec![Command::FlowModAdd {
            datapath: *datapath,
            rule: FlowRule::new(
                100,
                Match::any().with_ip_dst(Ipv4Prefix::host(headers.ip_dst)),
                vec![Action::Output(port)],
            ),
        }]
    }
}

fn one(name: &str, script: impl FnMut(&Event) -> Vec<Command> + Send + 'static) -> Backend {
    Backend::new(format!("b-{name}"), vec![Scripted::boxed(name, script)])
}

fn web_packet() -> Event {
    packet_in(1, headers([172, 16, 0, 10], [10, 0, 1, 10], 4000, 80))
}

fn last_event_xid(rig: &Rig) -> Xid {
    rig.entries(LogKind::EventIn).last().unwrap().record.xid
}

fn assert_last_error(rig: &Rig, code: ErrorCode) {
    let errs = rig.protocol_errors();
    let last = errs.last().expect("an error was logged");
    assert!(last.contains(code.name()), "expected {}, got {last}", code.name());
}

#[test]
fn modules_get_ids_in_announcement_order() {
    let rig = Rig::new(
        "module a\nmodule b\nexecution parallel policy=ignore { a b }\n",
        vec![one("b", forward(2)), one("a", forward(1))],
    );
    assert_eq!(rig.core.module_id("b"), Some(ModuleId(1)));
    assert_eq!(rig.core.module_id("a"), Some(ModuleId(2)));
    assert_eq!(rig.backends[0].registrations(), vec![("b".to_string(), Registration::Registered(ModuleId(1)))]);
}

#[test]
fn duplicate_fence_is_rejected() {
    let mut rig = Rig::new("module a\nexecution a\n", vec![one("a", forward(1))]);
    rig.push_event(web_packet());
    rig.settle_fifo();
    let xid = last_event_xid(&rig);
    assert_eq!(rig.core.metrics().fences_received, 1);
    rig.push_from_backend(0, Message::fence(xid, ModuleId(1)));
    rig.settle_fifo();
    assert_last_error(&rig, ErrorCode::DUPLICATE_FENCE);
    assert_eq!(rig.core.metrics().fences_received, 1);
    assert_eq!(rig.entries(LogKind::Compose).count(), 1);
}

#[test]
fn fence_for_unknown_xid_is_rejected() {
    let mut rig = Rig::new("module a\nexecution a\n", vec![one("a", forward(1))]);
    rig.push_from_backend(0, Message::fence(Xid(999), ModuleId(1)));
    rig.settle_fifo();
    assert_last_error(&rig, ErrorCode::UNKNOWN_XID);
}

#[test]
fn fence_for_foreign_module_is_rejected() {
    let mut rig = Rig::new(
        "module a\nmodule b\nexecution parallel policy=ignore { a b }\n",
        vec![one("a", forward(1)), one("b", forward(2))],
    );
    rig.push_event(web_packet());
    rig.settle_fifo();
    let xid = last_event_xid(&rig);
    // Backend 0 hosts module 1 only.
    rig.push_from_backend(0, Message::fence(xid, ModuleId(2)));
    rig.settle_fifo();
    assert_last_error(&rig, ErrorCode::UNKNOWN_MODULE);
}

#[test]
fn fence_from_module_not_invoked_is_unexpected() {
    let mut rig = Rig::new(
        "module a\nmodule b events=port_status\nexecution parallel policy=ignore { a b }\n",
        vec![one("a", forward(1)), one("b", forward(2))],
    );
    rig.push_event(web_packet());
    rig.pump_core();
    let xid = last_event_xid(&rig);
    assert_eq!(rig.entries(LogKind::AutoFence).count(), 1);
    rig.push_from_backend(1, Message::fence(xid, ModuleId(2)));
    rig.pump_core();
    assert_last_error(&rig, ErrorCode::UNEXPECTED_MESSAGE);
    assert_eq!(rig.core.pending().count(), 1);
    rig.settle_fifo();
    assert_eq!(rig.core.pending().count(), 0);
    assert_eq!(rig.released_by_xid()[&xid].len(), 1);
}

#[test]
fn command_for_unknown_xid_is_rejected() {
    let mut rig = Rig::new("module a\nexecution a\n", vec![one("a", forward(1))]);
    let cmd = forward(3)(&web_packet()).remove(0);
    rig.push_from_backend(0, Message::sbi(Xid(4242), ModuleId(1), cmd));
    rig.settle_fifo();
    assert_last_error(&rig, ErrorCode::UNKNOWN_XID);
    assert!(rig.released_by_xid().is_empty());
}

#[test]
fn duplicate_module_aborts_the_second_backend() {
    let mut rig = Rig::new(
        "module a\nmodule b\nexecution parallel policy=ignore { a b }\n",
        vec![
            one("a", forward(1)),
            Backend::new(
                "late",
                vec![Scripted::boxed("b", forward(2)), Scripted::boxed("a", forward(3))],
            ),
        ],
    );
    assert_last_error(&rig, ErrorCode::DUPLICATE_MODULE);
    let modules = rig.core.modules();
    assert_eq!(
        modules,
        vec![
            (ModuleId(1), "a".to_string(), true),
            (ModuleId(2), "b".to_string(), false)
        ]
    );
    assert!(rig.backends[1]
        .registrations()
        .iter()
        .all(|(_, r)| *r == Registration::Rejected));
    // b is no longer registered and is fenced on its behalf.
    rig.push_event(web_packet());
    rig.settle_fifo();
    assert!(rig.entries(LogKind::AutoFence).any(|l| l.record.detail == "b unregistered"));
    let out: Vec<Command> = rig.released_by_xid().into_values().flatten().collect();
    assert_eq!(out, forward(1)(&web_packet()));
}

#[test]
fn budget_exhaustion_reports_and_still_composes() {
    let mut backend = one("a", forward(1));
    backend.set_budget("a", 0);
    let mut rig = Rig::new(
        "module a\nmodule b\nexecution parallel policy=ignore { a b }\n",
        vec![backend, one("b", forward(2))],
    );
    rig.push_event(web_packet());
    rig.settle_fifo();
    assert!(rig
        .protocol_errors()
        .iter()
        .any(|e| e.starts_with("from backend0: step_budget_exceeded")));
    let out: Vec<Command> = rig.released_by_xid().into_values().flatten().collect();
    assert_eq!(out, forward(2)(&web_packet()));
    assert_eq!(rig.core.metrics().fences_received, 2);
}

#[test]
fn module_stats_request_is_paired_with_reply() {
    let stats = |ev: &Event| {
        vec![Command::StatsRequest {
            datapath: ev.datapath(),
            pattern: Match::any(),
        }]
    };
    let mut rig = Rig::new("module s\nexecution s\n", vec![one("s", stats)]);
    rig.push_event(web_packet());
    rig.settle_fifo();
    let event_xid = last_event_xid(&rig);
    let request = rig
        .to_shim
        .iter()
        .find(|m| matches!(m.payload, Payload::Sbi(netcompose::sbi::SbiMessage::Command(Command::StatsRequest { .. }))))
        .cloned()
        .expect("request forwarded to the shim");
    assert_ne!(request.xid, event_xid);
    assert_eq!(request.module_id, ModuleId(1));
    assert_eq!(rig.core.outstanding_tickets(), 1);
    // The stats request is not part of the composed output.
    assert_eq!(rig.entries(LogKind::Compose).last().unwrap().record.detail, "0 commands");

    let reply = Event::StatsReply {
        datapath: DatapathId(1),
        entries: vec![FlowStats {
            priority: 7,
            pattern: Match::any().with(FieldValue::TpDst(80)),
            actions: vec![Action::Output(1)],
            packet_count: 3,
        }],
    };
    rig.push_from_shim(Message::sbi(request.xid, ModuleId(1), reply));
    rig.settle_fifo();
    assert_eq!(rig.core.outstanding_tickets(), 0);
    let paired = rig.entries(LogKind::TicketReply).last().unwrap();
    assert_eq!(paired.record.xid, event_xid);
    assert_eq!(paired.record.module_id, ModuleId(1));
    let backend_log = rig.backends[0].drain_log();
    let delivered = backend_log
        .iter()
        .find(|r| r.kind == LogKind::ModuleReply)
        .expect("module saw the reply");
    assert_eq!(delivered.xid, event_xid);

    // A second reply with the same xid no longer has a ticket.
    rig.push_from_shim(Message::sbi(
        request.xid,
        ModuleId(1),
        Event::StatsReply {
            datapath: DatapathId(1),
            entries: vec![],
        },
    ));
    rig.settle_fifo();
    assert_eq!(rig.entries(LogKind::TicketOrphan).count(), 1);
}

#[test]
fn priority_tie_goes_to_lowest_module_id() {
    let mut rig = Rig::new(
        "module a priority=5\nmodule b priority=5\nexecution parallel policy=priority { b a }\n",
        vec![one("a", forward(1)), one("b", forward(2))],
    );
    rig.push_event(web_packet());
    rig.settle_fifo();
    assert!(rig
        .entries(LogKind::Warning)
        .any(|l| l.record.detail.contains("priority tie")));
    let resolve = rig.entries(LogKind::Resolve).last().unwrap();
    assert_eq!(resolve.record.detail, "policy=priority commands=2 winner=1");
    let out: Vec<Command> = rig.released_by_xid().into_values().flatten().collect();
    assert_eq!(out, forward(1)(&web_packet()));
}

#[test]
fn discard_drops_only_the_conflicting_commands() {
    let both = |port: u32| {
        move |ev: &Event| {
            let mut v = forward(port)(ev);
            v.push(Command::FlowModAdd {
                datapath: ev.datapath(),
                rule: FlowRule::new(
                    10,
                    Match::any().with_ip_dst(Ipv4Prefix::host([10, 9, 0, port as u8].into())),
                    vec![Action::Output(port)],
                ),
            });
            v
        }
    };
    let mut rig = Rig::new(
        "module a\nmodule b\nexecution parallel policy=discard { a b }\n",
        vec![one("a", both(1)), one("b", both(2))],
    );
    rig.push_event(web_packet());
    rig.settle_fifo();
    let out: Vec<Command> = rig.released_by_xid().into_values().flatten().collect();
    assert_eq!(out, vec![both(1)(&web_packet())[1].clone(), both(2)(&web_packet())[1].clone()]);
    assert_eq!(rig.core.metrics().conflicts_detected, 1);
}

#[test]
fn sequential_chain_forwards_other_events_unchanged() {
    let mut rig = Rig::new(
        "module a\nmodule b\nexecution sequential { a b }\n",
        vec![one("a", forward(1)), one("b", forward(2))],
    );
    rig.push_event(Event::PortStatus {
        datapath: DatapathId(1),
        port: 2,
        up: false,
    });
    rig.settle_fifo();
    assert_eq!(rig.entries(LogKind::Invoke).count(), 2);
    assert!(rig
        .entries(LogKind::Warning)
        .any(|l| l.record.detail.contains("forwarded unmodified")));
}

#[test]
fn nested_parallel_inside_sequential() {
    // a rewrites the destination; the parallel pair sees the rewrite.
    let rewrite = |ev: &Event| {
        let Event::PacketIn { datapath, headers } = ev else {
            return vec![];
        };
        vec![Command::PacketOut {
            datapath: *datapath,
            headers: *headers,
            actions: vec![
                Action::SetField(FieldValue::IpDst([10, 0, 9, 9].into())),
                Action::Output(4),
            ],
        }]
    };
    let mut rig = Rig::new(
        "module a\nmodule b priority=2\nmodule c priority=1\n\
         execution sequential { a parallel policy=priority { b c } }\n",
        vec![one("a", rewrite), one("b", forward(1)), one("c", forward(2))],
    );
    rig.push_event(web_packet());
    rig.settle_fifo();
    let seq_input = rig.entries(LogKind::SeqInput).next().expect("rewritten input");
    assert!(seq_input.record.detail.contains("ip_dst=10.0.9.9,"));
    let out: Vec<Command> = rig.released_by_xid().into_values().flatten().collect();
    let mut rewritten = web_packet();
    if let Event::PacketIn { headers, .. } = &mut rewritten {
        headers.ip_dst = [10, 0, 9, 9].into();
    }
    let mut expected = rewrite(&web_packet());
    expected.extend(forward(1)(&rewritten));
    assert_eq!(out, expected);
}

#[test]
fn malformed_frame_and_failed_hello() {
    let spec = "module a\nexecution a\n".parse().unwrap();
    let mut core = Core::new(spec, CoreConfig::default());
    let out = core.on_malformed(Peer::Backend(0), &DecodeError::Protocol("bad".into()));
    assert_eq!(out.len(), 1);
    let Payload::Error(body) = &out[0].message.payload else {
        panic!()
    };
    assert_eq!(body.code, ErrorCode::MALFORMED);

    let out = core.handle(
        Peer::Backend(0),
        Message::hello(Xid(1), HelloBody::new(vec![ProtocolOffer::new(SBI_PROTOCOL_ID, 9)])),
    );
    assert!(out.iter().any(|o| matches!(&o.message.payload, Payload::Error(b) if b.code == ErrorCode::INCOMPATIBLE_PROTOCOL)));
    let out = core.handle(
        Peer::Backend(0),
        Message::new(Xid(2), ModuleId(0), DatapathId(0), Payload::ModuleAnnouncement { name: "a".into() }),
    );
    assert!(out.iter().any(|o| matches!(&o.message.payload, Payload::Error(b) if b.code == ErrorCode::UNEXPECTED_MESSAGE)));
    assert_eq!(core.metrics().protocol_errors, 3);
    assert_eq!(core.module_id("a"), None);
}
