//! Scenario files, the end-to-end runner and run reports.

pub mod report;
pub mod runner;
pub mod trace;

pub use report::{
    dump_state, parse_machine, render_machine, render_tables, render_text, LogEntry, ModuleEntry, ReportFormat,
    ReportParseError, RunReport, TableEntry,
};
pub use runner::{run_scenario, Engine, LoadError, RunError, Scenario, Transport};
pub use trace::{parse_trace, Directive, Trace, TraceError, TraceStep};
