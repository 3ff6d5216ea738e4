//! Deterministic network simulator and the shim in front of it.

pub mod network;
pub mod shim;
pub mod table;
pub mod topology;

pub use network::{Network, SimError};
pub use shim::Shim;
pub use table::{AddOutcome, FlowEntry, FlowTable};
pub use topology::{Attachment, Host, PortRef, Topology, TopologyError};
