use std::path::PathBuf;

use netcompose::eventlog::LogKind;
use netcompose::scenario::{
    dump_state, parse_machine, render_machine, run_scenario, Engine, LogEntry, ReportFormat,
    RunReport, Scenario, Transport,
};
use netcompose::sbi::{DatapathId, ModuleId, Xid};

fn dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn bundled(name: &str) -> Scenario {
    let d = dir(name);
    Scenario::load(
        &d.join("topology.txt"),
        &d.join("composition.txt"),
        &d.join("modules.txt"),
        &d.join("trace.txt"),
    )
    .unwrap()
}

const TOPO: &str = "switch 1 ports=2\nhost a mac=02:00:00:00:00:01 ip=10.0.0.1 at 1:1\n";
const SPEC: &str = "module sw\nexecution sw\n";
const MODS: &str = "[module sw]\nkind = learning_switch\n";

fn small(trace: &str) -> Result<Scenario, netcompose::scenario::LoadError> {
    Scenario::from_texts(("t.txt", TOPO), ("c.txt", SPEC), ("m.txt", MODS), ("tr.txt", trace))
}

#[test]
fn runs_are_byte_identical() {
    for name in ["vdc", "vdc_lb"] {
        let s = bundled(name);
        let a = render_machine(&run_scenario(&s, Transport::InMemory).unwrap());
        let b = render_machine(&run_scenario(&s, Transport::InMemory).unwrap());
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn socket_transport_matches_in_memory() {
    for name in ["vdc", "vdc_lb"] {
        let s = bundled(name);
        let mem = run_scenario(&s, Transport::InMemory).unwrap();
        let sock = run_scenario(&s, Transport::Socket).unwrap();
        assert_eq!(render_machine(&mem), render_machine(&sock), "{name}");
    }
}

#[test]
fn bundled_reports_are_consistent_and_reparse() {
    for name in ["vdc", "vdc_lb"] {
        let r = run_scenario(&bundled(name), Transport::InMemory).unwrap();
        r.check_consistency().unwrap();
        assert_eq!(r.exit_code(), 0);
        assert_eq!(parse_machine(&render_machine(&r)).unwrap(), r);
        assert!(!r.entries(LogKind::Warning).any(|e| e.detail.contains("still awaits")));
    }
}

#[test]
fn empty_trace_gives_no_events_and_empty_tables() {
    let r = run_scenario(&small("# nothing\n").unwrap(), Transport::InMemory).unwrap();
    assert_eq!(r.metrics.events_processed, 0);
    assert!(r.tables.values().all(Vec::is_empty));
    assert_eq!(r.exit_code(), 0);
}

#[test]
fn load_errors_carry_path_and_line() {
    let e = small("at 10 tick\nat 5 tick\n").unwrap_err();
    assert_eq!((e.path.as_str(), e.line), ("tr.txt", 2));
    assert!(e.to_string().starts_with("tr.txt:2: "));
    let e = small("at 0 inject dp=1 port=7 ip_dst=10.0.0.1\n").unwrap_err();
    assert_eq!(e.line, 1);
    let e = small("at 0 stats dp=4\n").unwrap_err();
    assert_eq!(e.line, 1);
    let e = Scenario::from_texts(
        ("t.txt", TOPO),
        ("c.txt", "module sw\nexecution parallel { sw }\n"),
        ("m.txt", MODS),
        ("tr.txt", ""),
    )
    .unwrap_err();
    assert_eq!(e.path, "c.txt");
}

#[test]
fn learning_switch_floods_then_forwards() {
    let topo = "switch 1 ports=3\n\
                host a mac=02:00:00:00:00:01 ip=10.0.0.1 at 1:1\n\
                host b mac=02:00:00:00:00:02 ip=10.0.0.2 at 1:2\n\
                host c mac=02:00:00:00:00:03 ip=10.0.0.3 at 1:3\n";
    let trace = "at 0 inject dp=1 port=1 eth_src=02:00:00:00:00:01 eth_dst=02:00:00:00:00:02\n\
                 at 10 inject dp=1 port=2 eth_src=02:00:00:00:00:02 eth_dst=02:00:00:00:00:01\n\
                 at 20 inject dp=1 port=1 eth_src=02:00:00:00:00:01 eth_dst=02:00:00:00:00:02\n\
                 at 30 inject dp=1 port=1 eth_src=02:00:00:00:00:01 eth_dst=02:00:00:00:00:02\n";
    let s = Scenario::from_texts(("t", topo), ("c", SPEC), ("m", MODS), ("tr", trace)).unwrap();
    let r = run_scenario(&s, Transport::InMemory).unwrap();
    let delivered: Vec<(u64, &str)> = r
        .entries(LogKind::Deliver)
        .map(|e| (e.time_ms, e.detail.split_whitespace().next().unwrap()))
        .collect();
    assert_eq!(
        delivered,
        vec![(0, "host=b"), (0, "host=c"), (10, "host=a"), (20, "host=b"), (30, "host=b")]
    );
    // Each direction misses once; the fourth packet uses the installed rule.
    assert_eq!(r.metrics.events_processed, 3);
}

#[test]
fn malformed_backend_frame_makes_the_run_exit_2() {
    let s = small("").unwrap();
    let mut engine = Engine::new(&s, Transport::InMemory).unwrap();
    engine.start().unwrap();
    // A FENCE frame with version 9.
    let mut bytes = vec![9u8, 0x06, 0, 0];
    bytes.extend_from_slice(&[0u8; 16]);
    engine.inject_raw_from_backend(0, bytes).unwrap();
    let r = engine.finish();
    assert_eq!(r.metrics.protocol_errors, 1);
    assert_eq!(r.exit_code(), 2);
    r.check_consistency().unwrap();
}

#[test]
fn machine_format_escapes_details() {
    let mut r = RunReport::default();
    r.log.push(LogEntry {
        seq: 1,
        time_ms: 5,
        kind: LogKind::Warning,
        xid: Xid(3),
        module_id: ModuleId(2),
        datapath: DatapathId(7),
        detail: "two\nlines with a \\ and trailing space ".into(),
    });
    let text = render_machine(&r);
    assert_eq!(text.lines().count(), 1 + 8 + 1 + 1);
    assert_eq!(parse_machine(&text).unwrap(), r);
    assert!(parse_machine("netcompose-report 2\nend\n").is_err());
    assert!(parse_machine(&text.replace("end\n", "")).is_err());
}

#[test]
fn empty_text_report_is_only_headers() {
    let text = dump_state(&RunReport::default(), ReportFormat::Text);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0], "netcompose run report");
    assert_eq!(dump_state(&RunReport::default(), ReportFormat::Text), text);
    assert!("json".parse::<ReportFormat>().is_err());
}
