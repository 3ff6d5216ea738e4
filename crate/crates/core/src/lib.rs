//! Composition engine for SDN application modules.
//!
//! Application modules run on client-controller backends and never talk to
//! the network directly. A central [`composition::Core`] receives network
//! events from the shim, hands them to modules according to a composition
//! specification (sequential chains and parallel groups with a conflict
//! policy), waits for every involved module's fence, merges the results and
//! releases them to the network in event-arrival order. All parties speak
//! the framed [`protocol`]; the network side is a deterministic simulator.
//!
//! Layout:
//! - [`sbi`]: packet headers, matches, actions, rules, events and commands.
//! - [`protocol`]: the 20-byte-header wire protocol and its SBI TLV payloads.
//! - [`composition`]: spec parsing, merging, fences and output ordering.
//! - [`backend`]: module hosting, fence emission and the sample modules.
//! - [`sim`]: topology, flow tables and the shim.
//! - [`scenario`]: the end-to-end runner and its report formats.

pub mod backend;
pub mod composition;
pub mod eventlog;
pub mod protocol;
pub mod sbi;
pub mod scenario;
pub mod sim;
