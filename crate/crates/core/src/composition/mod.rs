//! Composition: the spec language, merge policies and the Core.

mod engine;
pub mod merge;
pub mod ordering;
pub mod sequential;
pub mod spec;
pub mod tickets;

pub use engine::{Core, CoreConfig, Metrics, Outbound, PendingEvent, Peer};
pub use merge::{merge_parallel, ConflictSet, MergeOutcome, ModuleResult, OwnedCommand};
pub use ordering::{OutputScheduler, ReleaseDecision, Released};
pub use sequential::{derive_sequential_input, SequentialInput};
pub use spec::{CompositionSpec, ExecNode, ModuleDecl, Policy, PolicyKind, SpecError};
pub use tickets::{ReadStateTicket, TicketBook};
